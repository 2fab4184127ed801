#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "augcl/ops.hpp"
#include "augcl/parameter.hpp"
#include "augcl/rng.hpp"
#include "augcl/tape.hpp"

namespace augcl {

enum class Arch { mlp_s, conv_s, resnet18 };

std::string_view to_string(Arch arch);
std::optional<Arch> parse_arch(std::string_view text);

struct InputGeometry {
    std::size_t channels = 1;
    std::size_t height = 28;
    std::size_t width = 28;
    bool operator==(const InputGeometry&) const = default;
};

// Layers. The non-const call operators may run in either mode; the const
// ones are evaluation-only and bind their parameters read-only, so a const
// module can neither receive gradients nor move its running statistics.

template <std::floating_point T>
struct Linear {
    Linear() = default;
    /// He-uniform weights U(-sqrt(6 / in), sqrt(6 / in)), zero bias.
    Linear(std::string name, std::size_t in, std::size_t out, Rng& rng);

    Parameter<T> weight;  // [in x out]
    Parameter<T> bias;    // [out]

    Var<T> operator()(Tape<T>& tape, Var<T> x, Mode mode);
    Var<T> operator()(Tape<T>& tape, Var<T> x, Mode mode) const;
};

template <std::floating_point T>
struct BatchNorm {
    BatchNorm() = default;
    BatchNorm(std::string name, std::size_t channels);

    Parameter<T> gamma;
    Parameter<T> beta;
    BatchNormStats<T> stats;
    std::string name;

    Var<T> operator()(Tape<T>& tape, Var<T> x, Mode mode);
    Var<T> operator()(Tape<T>& tape, Var<T> x, Mode mode) const;
};

template <std::floating_point T>
struct Conv2d {
    Conv2d() = default;
    Conv2d(std::string name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
           std::size_t padding, Rng& rng);

    Parameter<T> weight;  // [out x in x k x k]
    std::size_t stride = 1;
    std::size_t padding = 0;

    Var<T> operator()(Tape<T>& tape, Var<T> x, Mode mode);
    Var<T> operator()(Tape<T>& tape, Var<T> x, Mode mode) const;
};

/// Flatten -> (Linear(256) -> BN -> ReLU) x 2.
template <std::floating_point T>
struct MlpBackbone {
    Linear<T> fc1, fc2;
    BatchNorm<T> bn1, bn2;
};

/// (Conv3x3(32, pad 1) -> BN -> ReLU -> MaxPool2) x 3 -> flatten.
template <std::floating_point T>
struct ConvBackbone {
    std::vector<Conv2d<T>> convs;
    std::vector<BatchNorm<T>> norms;
};

template <std::floating_point T>
struct BasicBlock {
    Conv2d<T> conv1, conv2;
    BatchNorm<T> bn1, bn2;
    std::optional<Conv2d<T>> shortcut;
    std::optional<BatchNorm<T>> shortcut_bn;
};

/// CIFAR-style ResNet18: 3x3 stem, four stages of two basic blocks
/// (64/128/256/512 channels), global average pooling.
template <std::floating_point T>
struct ResNet18Backbone {
    Conv2d<T> stem;
    BatchNorm<T> stem_bn;
    std::vector<BasicBlock<T>> blocks;
};

template <std::floating_point T>
using Backbone = std::variant<MlpBackbone<T>, ConvBackbone<T>, ResNet18Backbone<T>>;

/// Three linear layers of equal width; BN + ReLU after all but the last.
template <std::floating_point T>
struct Projector {
    Linear<T> fc1, fc2, fc3;
    BatchNorm<T> bn1, bn2;
};

/// Backbone followed by projector; the model f_t of one task.
template <std::floating_point T>
class EncoderModel {
public:
    EncoderModel() = default;
    EncoderModel(Arch arch, InputGeometry input, std::size_t d_proj, std::uint64_t seed);

    Arch arch() const noexcept { return arch_; }
    const InputGeometry& input() const noexcept { return input_; }
    std::size_t d_proj() const noexcept { return d_proj_; }
    std::size_t d_feat() const noexcept { return d_feat_; }
    std::uint64_t seed() const noexcept { return seed_; }

    /// Projector output Z for a batch of images [n x c x h x w].
    Var<T> embed(Tape<T>& tape, Var<T> images, Mode mode);
    Var<T> embed(Tape<T>& tape, Var<T> images) const;

    /// Backbone output only.
    Var<T> features(Tape<T>& tape, Var<T> images, Mode mode);
    Var<T> features(Tape<T>& tape, Var<T> images) const;

    std::vector<Parameter<T>*> parameters();
    std::vector<const Parameter<T>*> parameters() const;
    std::vector<Parameter<T>*> projector_parameters();
    std::vector<BatchNormStats<T>*> buffers();
    std::vector<const BatchNormStats<T>*> buffers() const;

    /// FNV-1a over every parameter value and running statistic.
    std::uint64_t checksum() const;

private:
    template <class Self>
    static Var<T> run_backbone(Self& self, Tape<T>& tape, Var<T> images, Mode mode);
    template <class Self>
    static Var<T> run_projector(Self& self, Tape<T>& tape, Var<T> features, Mode mode);
    void check_input(const Var<T>& images) const;

    Arch arch_ = Arch::conv_s;
    InputGeometry input_;
    std::size_t d_proj_ = 0;
    std::size_t d_feat_ = 0;
    std::uint64_t seed_ = 0;
    Backbone<T> backbone_;
    Projector<T> projector_;
};

/// Deterministic seeded construction. d_proj must be at least 2.
template <std::floating_point T>
EncoderModel<T> build_encoder(Arch arch, std::size_t d_proj, std::uint64_t seed, InputGeometry input);

/// Immutable eval-mode copy of an encoder, used as the distillation target.
template <std::floating_point T>
class FrozenEncoder {
public:
    explicit FrozenEncoder(const EncoderModel<T>& live);

    Var<T> embed(Tape<T>& tape, Var<T> images) const { return model_.embed(tape, images); }
    Var<T> features(Tape<T>& tape, Var<T> images) const { return model_.features(tape, images); }
    /// Gradient-free evaluation, processed in chunks of `chunk` images.
    Tensor<T> embed(const Tensor<T>& images, std::size_t chunk = 512) const;
    Tensor<T> features(const Tensor<T>& images, std::size_t chunk = 512) const;

    const EncoderModel<T>& model() const noexcept { return model_; }
    std::uint64_t checksum() const { return model_.checksum(); }

private:
    EncoderModel<T> model_;
};

template <std::floating_point T>
FrozenEncoder<T> freeze_snapshot(const EncoderModel<T>& model) {
    return FrozenEncoder<T>(model);
}

/// Past-embedding predictor g: Linear -> BN -> ReLU -> Linear, width d.
template <std::floating_point T>
class Predictor {
public:
    Predictor() = default;
    Predictor(std::size_t width, std::uint64_t seed);

    std::size_t width() const noexcept { return width_; }

    Var<T> operator()(Tape<T>& tape, Var<T> z, Mode mode);
    Var<T> operator()(Tape<T>& tape, Var<T> z) const;

    std::vector<Parameter<T>*> parameters();
    std::vector<const Parameter<T>*> parameters() const;

    /// Zeroes the output layer's weight and bias.
    void zero_output_layer();
    /// Square layers set to the identity, zero biases, hidden BN + ReLU skipped:
    /// the predictor then maps z to z exactly.
    void set_identity();
    bool bypasses_hidden() const noexcept { return bypass_hidden_; }

private:
    template <class Self>
    static Var<T> run(Self& self, Tape<T>& tape, Var<T> z, Mode mode);

    std::size_t width_ = 0;
    Linear<T> fc1_, fc2_;
    BatchNorm<T> bn_;
    bool bypass_hidden_ = false;
};

template <std::floating_point T>
Var<T> predict_past(Tape<T>& tape, Predictor<T>& g, Var<T> z, Mode mode = Mode::train) {
    return g(tape, z, mode);
}

/// FNV-1a 64-bit hash over raw bytes, chained from `seed`.
std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

extern template struct Linear<float>;
extern template struct Linear<double>;
extern template struct BatchNorm<float>;
extern template struct BatchNorm<double>;
extern template struct Conv2d<float>;
extern template struct Conv2d<double>;
extern template class EncoderModel<float>;
extern template class EncoderModel<double>;
extern template class FrozenEncoder<float>;
extern template class FrozenEncoder<double>;
extern template class Predictor<float>;
extern template class Predictor<double>;

}  // namespace augcl
