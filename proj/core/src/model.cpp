#include "augcl/model.hpp"

#include <cmath>
#include <type_traits>

#include "augcl/errors.hpp"

namespace augcl {

namespace {

constexpr std::size_t kMlpWidth = 256;
constexpr std::size_t kConvChannels = 32;
constexpr std::size_t kConvStages = 3;

template <typename T>
Tensor<T> he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor<T> t(std::move(shape));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (T& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
}

template <typename T>
void require_eval(Mode mode, const std::string& what) {
    if (mode != Mode::eval) throw ContractError(what + " is read-only and can only run in eval mode");
}

template <typename T, typename P>
void collect(std::vector<P*>& out, Linear<T>& l) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
}
template <typename T, typename P>
void collect(std::vector<P*>& out, const Linear<T>& l) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
}
template <typename T, typename P>
void collect(std::vector<P*>& out, Conv2d<T>& c) {
    out.push_back(&c.weight);
}
template <typename T, typename P>
void collect(std::vector<P*>& out, const Conv2d<T>& c) {
    out.push_back(&c.weight);
}
template <typename T, typename P>
void collect(std::vector<P*>& out, BatchNorm<T>& b) {
    out.push_back(&b.gamma);
    out.push_back(&b.beta);
}
template <typename T, typename P>
void collect(std::vector<P*>& out, const BatchNorm<T>& b) {
    out.push_back(&b.gamma);
    out.push_back(&b.beta);
}

// Visits every layer of a module in a fixed order. `Self` may be const.
template <typename T, typename Self, typename F>
void for_each_layer(Self& backbone, F&& f) {
    using B = std::remove_const_t<Self>;
    if constexpr (std::is_same_v<B, MlpBackbone<T>>) {
        f(backbone.fc1);
        f(backbone.bn1);
        f(backbone.fc2);
        f(backbone.bn2);
    } else if constexpr (std::is_same_v<B, ConvBackbone<T>>) {
        for (std::size_t i = 0; i < backbone.convs.size(); ++i) {
            f(backbone.convs[i]);
            f(backbone.norms[i]);
        }
    } else if constexpr (std::is_same_v<B, ResNet18Backbone<T>>) {
        f(backbone.stem);
        f(backbone.stem_bn);
        for (auto& block : backbone.blocks) {
            f(block.conv1);
            f(block.bn1);
            f(block.conv2);
            f(block.bn2);
            if (block.shortcut) {
                f(*block.shortcut);
                f(*block.shortcut_bn);
            }
        }
    } else if constexpr (std::is_same_v<B, Projector<T>>) {
        f(backbone.fc1);
        f(backbone.bn1);
        f(backbone.fc2);
        f(backbone.bn2);
        f(backbone.fc3);
    }
}

template <typename T>
struct IsBatchNorm : std::false_type {};
template <typename T>
struct IsBatchNorm<BatchNorm<T>> : std::true_type {};

}  // namespace

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string_view to_string(Arch arch) {
    switch (arch) {
        case Arch::mlp_s: return "mlp-s";
        case Arch::conv_s: return "conv-s";
        case Arch::resnet18: return "resnet18";
    }
    return "unknown";
}

std::optional<Arch> parse_arch(std::string_view text) {
    if (text == "mlp-s") return Arch::mlp_s;
    if (text == "conv-s") return Arch::conv_s;
    if (text == "resnet18") return Arch::resnet18;
    return std::nullopt;
}

// ---- layers -----------------------------------------------------------------

template <std::floating_point T>
Linear<T>::Linear(std::string name, std::size_t in, std::size_t out, Rng& rng)
    : weight(name + ".weight", he_uniform<T>({in, out}, in, rng)), bias(name + ".bias", Tensor<T>({out})) {}

template <std::floating_point T>
Var<T> Linear<T>::operator()(Tape<T>& tape, Var<T> x, Mode) {
    return add_bias(matmul(x, tape.bind(weight)), tape.bind(bias));
}

template <std::floating_point T>
Var<T> Linear<T>::operator()(Tape<T>& tape, Var<T> x, Mode) const {
    return add_bias(matmul(x, tape.bind(weight)), tape.bind(bias));
}

template <std::floating_point T>
BatchNorm<T>::BatchNorm(std::string layer_name, std::size_t channels)
    : gamma(layer_name + ".gamma", Tensor<T>({channels}, T(1))),
      beta(layer_name + ".beta", Tensor<T>({channels})),
      stats(channels),
      name(std::move(layer_name)) {}

template <std::floating_point T>
Var<T> BatchNorm<T>::operator()(Tape<T>& tape, Var<T> x, Mode mode) {
    return batch_norm(x, tape.bind(gamma), tape.bind(beta), stats, mode);
}

template <std::floating_point T>
Var<T> BatchNorm<T>::operator()(Tape<T>& tape, Var<T> x, Mode mode) const {
    require_eval<T>(mode, "frozen batch norm '" + name + "'");
    return batch_norm_eval(x, tape.bind(gamma), tape.bind(beta), stats);
}

template <std::floating_point T>
Conv2d<T>::Conv2d(std::string name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_,
                  std::size_t padding_, Rng& rng)
    : weight(name + ".weight", he_uniform<T>({out, in, kernel, kernel}, in * kernel * kernel, rng)),
      stride(stride_),
      padding(padding_) {}

template <std::floating_point T>
Var<T> Conv2d<T>::operator()(Tape<T>& tape, Var<T> x, Mode) {
    return conv2d(x, tape.bind(weight), stride, padding);
}

template <std::floating_point T>
Var<T> Conv2d<T>::operator()(Tape<T>& tape, Var<T> x, Mode) const {
    return conv2d(x, tape.bind(weight), stride, padding);
}

// ---- encoder ----------------------------------------------------------------

template <std::floating_point T>
EncoderModel<T>::EncoderModel(Arch arch, InputGeometry input, std::size_t d_proj, std::uint64_t seed)
    : arch_(arch), input_(input), d_proj_(d_proj), seed_(seed) {
    if (d_proj < 2) throw ContractError("d_proj must be at least 2");
    if (input.channels == 0 || input.height == 0 || input.width == 0) throw ContractError("empty input geometry");
    Rng rng = make_rng(seed, Stream::model_init);

    switch (arch) {
        case Arch::mlp_s: {
            MlpBackbone<T> b;
            const std::size_t in = input.channels * input.height * input.width;
            b.fc1 = Linear<T>("backbone.fc1", in, kMlpWidth, rng);
            b.bn1 = BatchNorm<T>("backbone.bn1", kMlpWidth);
            b.fc2 = Linear<T>("backbone.fc2", kMlpWidth, kMlpWidth, rng);
            b.bn2 = BatchNorm<T>("backbone.bn2", kMlpWidth);
            d_feat_ = kMlpWidth;
            backbone_ = std::move(b);
            break;
        }
        case Arch::conv_s: {
            ConvBackbone<T> b;
            std::size_t c = input.channels, h = input.height, w = input.width;
            for (std::size_t stage = 0; stage < kConvStages; ++stage) {
                const std::string name = "backbone.conv" + std::to_string(stage + 1);
                b.convs.emplace_back(name, c, kConvChannels, 3, 1, 1, rng);
                b.norms.emplace_back("backbone.bn" + std::to_string(stage + 1), kConvChannels);
                c = kConvChannels;
                h /= 2;
                w /= 2;
                if (h == 0 || w == 0) throw DimensionError("input too small for conv-s");
            }
            d_feat_ = c * h * w;
            backbone_ = std::move(b);
            break;
        }
        case Arch::resnet18: {
            ResNet18Backbone<T> b;
            b.stem = Conv2d<T>("backbone.stem", input.channels, 64, 3, 1, 1, rng);
            b.stem_bn = BatchNorm<T>("backbone.stem_bn", 64);
            std::size_t in = 64;
            const std::size_t widths[4] = {64, 128, 256, 512};
            for (std::size_t stage = 0; stage < 4; ++stage) {
                for (std::size_t k = 0; k < 2; ++k) {
                    const std::size_t stride = (stage > 0 && k == 0) ? 2 : 1;
                    const std::size_t out = widths[stage];
                    const std::string name = "backbone.layer" + std::to_string(stage + 1) + "." + std::to_string(k);
                    BasicBlock<T> block;
                    block.conv1 = Conv2d<T>(name + ".conv1", in, out, 3, stride, 1, rng);
                    block.bn1 = BatchNorm<T>(name + ".bn1", out);
                    block.conv2 = Conv2d<T>(name + ".conv2", out, out, 3, 1, 1, rng);
                    block.bn2 = BatchNorm<T>(name + ".bn2", out);
                    if (stride != 1 || in != out) {
                        block.shortcut.emplace(name + ".shortcut", in, out, 1, stride, 0, rng);
                        block.shortcut_bn.emplace(name + ".shortcut_bn", out);
                    }
                    b.blocks.push_back(std::move(block));
                    in = out;
                }
            }
            d_feat_ = 512;
            backbone_ = std::move(b);
            break;
        }
        default:
            throw ContractError("unknown architecture");
    }

    projector_.fc1 = Linear<T>("projector.fc1", d_feat_, d_proj, rng);
    projector_.bn1 = BatchNorm<T>("projector.bn1", d_proj);
    projector_.fc2 = Linear<T>("projector.fc2", d_proj, d_proj, rng);
    projector_.bn2 = BatchNorm<T>("projector.bn2", d_proj);
    projector_.fc3 = Linear<T>("projector.fc3", d_proj, d_proj, rng);
}

template <std::floating_point T>
void EncoderModel<T>::check_input(const Var<T>& images) const {
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != input_.channels || s[2] != input_.height || s[3] != input_.width)
        throw DimensionError("encoder expects [n x " + std::to_string(input_.channels) + " x " +
                             std::to_string(input_.height) + " x " + std::to_string(input_.width) + "], got " +
                             shape_string(s));
}

template <std::floating_point T>
template <class Self>
Var<T> EncoderModel<T>::run_backbone(Self& self, Tape<T>& tape, Var<T> x, Mode mode) {
    self.check_input(x);
    const std::size_t n = x.dim(0);
    return std::visit(
        [&](auto& b) -> Var<T> {
            using B = std::remove_cvref_t<decltype(b)>;
            if constexpr (std::is_same_v<B, MlpBackbone<T>>) {
                Var<T> h = reshape(x, {n, x.value().numel() / n});
                h = relu(b.bn1(tape, b.fc1(tape, h, mode), mode));
                return relu(b.bn2(tape, b.fc2(tape, h, mode), mode));
            } else if constexpr (std::is_same_v<B, ConvBackbone<T>>) {
                Var<T> h = x;
                for (std::size_t i = 0; i < b.convs.size(); ++i)
                    h = max_pool2d(relu(b.norms[i](tape, b.convs[i](tape, h, mode), mode)), 2);
                return reshape(h, {n, h.value().numel() / n});
            } else {
                Var<T> h = relu(b.stem_bn(tape, b.stem(tape, x, mode), mode));
                for (auto& block : b.blocks) {
                    Var<T> y = relu(block.bn1(tape, block.conv1(tape, h, mode), mode));
                    y = block.bn2(tape, block.conv2(tape, y, mode), mode);
                    Var<T> skip = h;
                    if (block.shortcut) skip = (*block.shortcut_bn)(tape, (*block.shortcut)(tape, h, mode), mode);
                    h = relu(add(y, skip));
                }
                return global_avg_pool(h);
            }
        },
        self.backbone_);
}

template <std::floating_point T>
template <class Self>
Var<T> EncoderModel<T>::run_projector(Self& self, Tape<T>& tape, Var<T> f, Mode mode) {
    auto& p = self.projector_;
    Var<T> h = relu(p.bn1(tape, p.fc1(tape, f, mode), mode));
    h = relu(p.bn2(tape, p.fc2(tape, h, mode), mode));
    return p.fc3(tape, h, mode);
}

template <std::floating_point T>
Var<T> EncoderModel<T>::embed(Tape<T>& tape, Var<T> images, Mode mode) {
    return run_projector(*this, tape, run_backbone(*this, tape, images, mode), mode);
}

template <std::floating_point T>
Var<T> EncoderModel<T>::embed(Tape<T>& tape, Var<T> images) const {
    return run_projector(*this, tape, run_backbone(*this, tape, images, Mode::eval), Mode::eval);
}

template <std::floating_point T>
Var<T> EncoderModel<T>::features(Tape<T>& tape, Var<T> images, Mode mode) {
    return run_backbone(*this, tape, images, mode);
}

template <std::floating_point T>
Var<T> EncoderModel<T>::features(Tape<T>& tape, Var<T> images) const {
    return run_backbone(*this, tape, images, Mode::eval);
}

template <std::floating_point T>
std::vector<Parameter<T>*> EncoderModel<T>::parameters() {
    std::vector<Parameter<T>*> out;
    std::visit([&](auto& b) { for_each_layer<T>(b, [&](auto& layer) { collect(out, layer); }); }, backbone_);
    for_each_layer<T>(projector_, [&](auto& layer) { collect(out, layer); });
    return out;
}

template <std::floating_point T>
std::vector<const Parameter<T>*> EncoderModel<T>::parameters() const {
    std::vector<const Parameter<T>*> out;
    std::visit([&](const auto& b) { for_each_layer<T>(b, [&](const auto& layer) { collect(out, layer); }); },
               backbone_);
    for_each_layer<T>(projector_, [&](const auto& layer) { collect(out, layer); });
    return out;
}

template <std::floating_point T>
std::vector<Parameter<T>*> EncoderModel<T>::projector_parameters() {
    std::vector<Parameter<T>*> out;
    for_each_layer<T>(projector_, [&](auto& layer) { collect(out, layer); });
    return out;
}

template <std::floating_point T>
std::vector<BatchNormStats<T>*> EncoderModel<T>::buffers() {
    std::vector<BatchNormStats<T>*> out;
    auto grab = [&](auto& layer) {
        if constexpr (IsBatchNorm<std::remove_cvref_t<decltype(layer)>>::value) out.push_back(&layer.stats);
    };
    std::visit([&](auto& b) { for_each_layer<T>(b, grab); }, backbone_);
    for_each_layer<T>(projector_, grab);
    return out;
}

template <std::floating_point T>
std::vector<const BatchNormStats<T>*> EncoderModel<T>::buffers() const {
    std::vector<const BatchNormStats<T>*> out;
    auto grab = [&](const auto& layer) {
        if constexpr (IsBatchNorm<std::remove_cvref_t<decltype(layer)>>::value) out.push_back(&layer.stats);
    };
    std::visit([&](const auto& b) { for_each_layer<T>(b, grab); }, backbone_);
    for_each_layer<T>(projector_, grab);
    return out;
}

template <std::floating_point T>
std::uint64_t EncoderModel<T>::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Parameter<T>* p : parameters()) h = fnv1a(p->value.data().data(), p->value.numel() * sizeof(T), h);
    for (const BatchNormStats<T>* s : buffers()) {
        h = fnv1a(s->running_mean.data(), s->running_mean.size() * sizeof(T), h);
        h = fnv1a(s->running_var.data(), s->running_var.size() * sizeof(T), h);
    }
    return h;
}

template <std::floating_point T>
EncoderModel<T> build_encoder(Arch arch, std::size_t d_proj, std::uint64_t seed, InputGeometry input) {
    return EncoderModel<T>(arch, input, d_proj, seed);
}

// ---- frozen snapshot ----------------------------------------------------------

template <std::floating_point T>
FrozenEncoder<T>::FrozenEncoder(const EncoderModel<T>& live) : model_(live) {
    for (Parameter<T>* p : model_.parameters()) {
        p->value.clear_grad();
        p->value.set_requires_grad(false);
        p->reset_optimizer_state();
    }
}

namespace {

template <typename T, typename Fn>
Tensor<T> chunked_eval(const Tensor<T>& images, std::size_t chunk, Fn&& fn) {
    if (images.rank() != 4) throw DimensionError("expected [n x c x h x w] images, got " + shape_string(images.shape()));
    if (chunk == 0) throw ContractError("chunk size must be positive");
    const std::size_t n = images.dim(0);
    const std::size_t stride = images.numel() / n;
    AlignedVector<T> out;
    std::size_t width = 0;
    for (std::size_t begin = 0; begin < n; begin += chunk) {
        const std::size_t count = std::min(chunk, n - begin);
        Tape<T> tape(GradMode::disabled);
        AlignedVector<T> slice(images.data().begin() + static_cast<std::ptrdiff_t>(begin * stride),
                               images.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * stride));
        Var<T> x = tape.constant(Tensor<T>({count, images.dim(1), images.dim(2), images.dim(3)}, std::move(slice)));
        const Tensor<T>& y = fn(tape, x).value();
        width = y.dim(1);
        out.insert(out.end(), y.data().begin(), y.data().end());
    }
    return Tensor<T>({n, width}, std::move(out));
}

}  // namespace

template <std::floating_point T>
Tensor<T> FrozenEncoder<T>::embed(const Tensor<T>& images, std::size_t chunk) const {
    return chunked_eval(images, chunk, [this](Tape<T>& tape, Var<T> x) { return model_.embed(tape, x); });
}

template <std::floating_point T>
Tensor<T> FrozenEncoder<T>::features(const Tensor<T>& images, std::size_t chunk) const {
    return chunked_eval(images, chunk, [this](Tape<T>& tape, Var<T> x) { return model_.features(tape, x); });
}

// ---- predictor ----------------------------------------------------------------

template <std::floating_point T>
Predictor<T>::Predictor(std::size_t width, std::uint64_t seed) : width_(width) {
    if (width < 1) throw ContractError("predictor width must be positive");
    Rng rng = make_rng(seed, Stream::predictor_init);
    fc1_ = Linear<T>("predictor.fc1", width, width, rng);
    bn_ = BatchNorm<T>("predictor.bn", width);
    fc2_ = Linear<T>("predictor.fc2", width, width, rng);
}

template <std::floating_point T>
template <class Self>
Var<T> Predictor<T>::run(Self& self, Tape<T>& tape, Var<T> z, Mode mode) {
    if (z.value().rank() != 2 || z.dim(1) != self.width_)
        throw DimensionError("predictor expects [n x " + std::to_string(self.width_) + "], got " +
                             shape_string(z.shape()));
    Var<T> h = self.fc1_(tape, z, mode);
    if (!self.bypass_hidden_) h = relu(self.bn_(tape, h, mode));
    return self.fc2_(tape, h, mode);
}

template <std::floating_point T>
Var<T> Predictor<T>::operator()(Tape<T>& tape, Var<T> z, Mode mode) {
    return run(*this, tape, z, mode);
}

template <std::floating_point T>
Var<T> Predictor<T>::operator()(Tape<T>& tape, Var<T> z) const {
    return run(*this, tape, z, Mode::eval);
}

template <std::floating_point T>
std::vector<Parameter<T>*> Predictor<T>::parameters() {
    std::vector<Parameter<T>*> out{&fc1_.weight, &fc1_.bias, &fc2_.weight, &fc2_.bias};
    if (!bypass_hidden_) {
        out.push_back(&bn_.gamma);
        out.push_back(&bn_.beta);
    }
    return out;
}

template <std::floating_point T>
std::vector<const Parameter<T>*> Predictor<T>::parameters() const {
    std::vector<const Parameter<T>*> out{&fc1_.weight, &fc1_.bias, &fc2_.weight, &fc2_.bias};
    if (!bypass_hidden_) {
        out.push_back(&bn_.gamma);
        out.push_back(&bn_.beta);
    }
    return out;
}

template <std::floating_point T>
void Predictor<T>::zero_output_layer() {
    std::fill(fc2_.weight.value.data().begin(), fc2_.weight.value.data().end(), T(0));
    std::fill(fc2_.bias.value.data().begin(), fc2_.bias.value.data().end(), T(0));
}

template <std::floating_point T>
void Predictor<T>::set_identity() {
    for (Linear<T>* l : {&fc1_, &fc2_}) {
        auto w = l->weight.value.data();
        std::fill(w.begin(), w.end(), T(0));
        for (std::size_t i = 0; i < width_; ++i) w[i * width_ + i] = T(1);
        std::fill(l->bias.value.data().begin(), l->bias.value.data().end(), T(0));
    }
    bypass_hidden_ = true;
}

template struct Linear<float>;
template struct Linear<double>;
template struct BatchNorm<float>;
template struct BatchNorm<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;
template class EncoderModel<float>;
template class EncoderModel<double>;
template class FrozenEncoder<float>;
template class FrozenEncoder<double>;
template class Predictor<float>;
template class Predictor<double>;
template EncoderModel<float> build_encoder<float>(Arch, std::size_t, std::uint64_t, InputGeometry);
template EncoderModel<double> build_encoder<double>(Arch, std::size_t, std::uint64_t, InputGeometry);

}  // namespace augcl
