#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

#include "augcl/data.hpp"
#include "augcl/rng.hpp"
#include "augcl/tensor.hpp"

namespace augcl {

/// One augmentation family; each family is one task.
enum class AugmentationKind { crop, flip, jitter, gaussian_noise, grayscale, perspective, affine, rotation };

inline constexpr std::array<AugmentationKind, 8> kAllKinds{
    AugmentationKind::crop,      AugmentationKind::flip,        AugmentationKind::jitter,
    AugmentationKind::gaussian_noise, AugmentationKind::grayscale, AugmentationKind::perspective,
    AugmentationKind::affine,    AugmentationKind::rotation};

/// Canonical names: Crop, Flip, Jitter, GaussianNoise, Grayscale, Perspective, Affine, Rotation.
std::string_view to_string(AugmentationKind kind);
/// Accepts canonical names case-insensitively plus the short forms GN, Gray, Persp, Rot.
std::optional<AugmentationKind> parse_kind(std::string_view text);

/// Families usable with a dataset: colour families for CIFAR, geometric ones for MNIST.
std::span<const AugmentationKind> kinds_for(DatasetName dataset);
bool kind_valid_for(AugmentationKind kind, DatasetName dataset);

struct Range {
    double lo = 0.0;
    double hi = 0.0;
    bool operator==(const Range&) const = default;
};

struct AugmentationParams {
    struct Crop {
        Range scale{0.3, 1.0};
        Range aspect{3.0 / 4.0, 4.0 / 3.0};
        double p = 1.0;
    } crop;
    struct Flip {
        double p = 0.5;
    } flip;
    struct Jitter {
        Range brightness{0.6, 1.4};
        Range contrast{0.6, 1.4};
        Range saturation{0.6, 1.4};
        Range hue{-0.1, 0.1};
        double p = 0.8;
    } jitter;
    struct GaussianNoise {
        double sigma = 0.1;
        double p = 1.0;
    } noise;
    struct Grayscale {
        double p = 0.5;
    } grayscale;
    struct Perspective {
        double distortion = 0.3;
        double p = 0.5;
    } perspective;
    struct Affine {
        Range degrees{-15.0, 15.0};
        double translate = 0.1;
        Range scale{0.9, 1.1};
        Range shear{-10.0, 10.0};
        double p = 1.0;
    } affine;
    struct Rotation {
        Range degrees{-45.0, 45.0};
        double p = 1.0;
    } rotation;
    /// Apply a Crop draw before every other family.
    bool base_crop = false;

    /// Throws ConfigError for an inverted range or a probability outside [0, 1].
    void validate() const;
};

/// Sub-rectangle of an image, in pixels.
struct CropBox {
    std::size_t top = 0;
    std::size_t left = 0;
    std::size_t height = 0;
    std::size_t width = 0;
};

CropBox sample_crop_box(std::size_t height, std::size_t width, const AugmentationParams::Crop& params, Rng& rng);

/// Nearest-neighbour resample of `box` back to the full image size:
/// out[y][x] = in[top + floor(y * box.height / h)][left + floor(x * box.width / w)].
Tensor<float> crop_resize_nearest(const Tensor<float>& image, const CropBox& box);

Tensor<float> horizontal_flip(const Tensor<float>& image);

/// 0.299 R + 0.587 G + 0.114 B written to all three channels. Needs c == 3.
Tensor<float> grayscale_convert(const Tensor<float>& image);

/// One random draw from `kind` applied to a [c x h x w] image in [0, 1].
/// Output has the input's shape and is clipped to [0, 1] once, at the end.
Tensor<float> apply(AugmentationKind kind, const AugmentationParams& params, const Tensor<float>& image, Rng& rng);

/// Two independently augmented renditions of one batch.
struct ViewPair {
    Tensor<float> view_a;
    Tensor<float> view_b;
};

/// Image i of view a uses stream (seed, i, 0), view b uses (seed, i, 1).
ViewPair make_view_pair(AugmentationKind kind, const AugmentationParams& params, const Tensor<float>& batch,
                        std::uint64_t seed);

/// Per-image families (both views of image i use kinds[i]).
ViewPair make_view_pair(std::span<const AugmentationKind> kinds, const AugmentationParams& params,
                        const Tensor<float>& batch, std::uint64_t seed);

}  // namespace augcl
