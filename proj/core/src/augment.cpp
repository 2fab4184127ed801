#include "augcl/augment.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <string>

#include "augcl/errors.hpp"

namespace augcl {

namespace {

constexpr std::array<AugmentationKind, 5> kCifarKinds{AugmentationKind::crop, AugmentationKind::flip,
                                                      AugmentationKind::jitter, AugmentationKind::gaussian_noise,
                                                      AugmentationKind::grayscale};
constexpr std::array<AugmentationKind, 5> kMnistKinds{AugmentationKind::crop, AugmentationKind::perspective,
                                                      AugmentationKind::affine, AugmentationKind::rotation,
                                                      AugmentationKind::gaussian_noise};

struct Geometry {
    std::size_t c, h, w;
};

Geometry image_geometry(const Tensor<float>& image) {
    if (image.rank() != 3) throw DimensionError("augmentations expect a [c x h x w] image, got " +
                                                shape_string(image.shape()));
    return {image.dim(0), image.dim(1), image.dim(2)};
}

void clip_unit(Tensor<float>& image) {
    for (float& v : image.data()) v = std::clamp(v, 0.0f, 1.0f);
}

std::string lower(std::string_view text) {
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return out;
}

double radians(double degrees) { return degrees * std::numbers::pi / 180.0; }

// Bilinear resampling with zero fill; `source_of(x, y)` returns the source
// coordinate sampled by output pixel (x, y).
template <typename SourceOf>
Tensor<float> warp_bilinear(const Tensor<float>& image, SourceOf source_of) {
    const Geometry g = image_geometry(image);
    Tensor<float> out(image.shape(), 0.0f);
    const auto in = image.data();
    for (std::size_t y = 0; y < g.h; ++y) {
        for (std::size_t x = 0; x < g.w; ++x) {
            const auto [sx, sy] = source_of(static_cast<double>(x), static_cast<double>(y));
            const double fx0 = std::floor(sx), fy0 = std::floor(sy);
            if (fx0 < -1.0 || fy0 < -1.0 || fx0 > static_cast<double>(g.w) || fy0 > static_cast<double>(g.h)) continue;
            const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
            const double ax = sx - fx0, ay = sy - fy0;
            const std::array<long, 2> xs{x0, x0 + 1};
            const std::array<long, 2> ys{y0, y0 + 1};
            const std::array<double, 2> wx{1.0 - ax, ax};
            const std::array<double, 2> wy{1.0 - ay, ay};
            for (std::size_t ch = 0; ch < g.c; ++ch) {
                double acc = 0.0;
                for (int j = 0; j < 2; ++j) {
                    if (ys[j] < 0 || ys[j] >= static_cast<long>(g.h)) continue;
                    for (int i = 0; i < 2; ++i) {
                        if (xs[i] < 0 || xs[i] >= static_cast<long>(g.w)) continue;
                        acc += wy[j] * wx[i] * in[(ch * g.h + static_cast<std::size_t>(ys[j])) * g.w +
                                                  static_cast<std::size_t>(xs[i])];
                    }
                }
                out[(ch * g.h + y) * g.w + x] = static_cast<float>(acc);
            }
        }
    }
    return out;
}

// Inverse of p_out = center + shift + A (p_in - center), A = R(angle) Shear(shear) scale.
Tensor<float> affine_warp(const Tensor<float>& image, double angle_deg, double shift_x, double shift_y, double scale,
                          double shear_deg) {
    const Geometry g = image_geometry(image);
    const double cx = (static_cast<double>(g.w) - 1.0) / 2.0;
    const double cy = (static_cast<double>(g.h) - 1.0) / 2.0;
    const double a = radians(angle_deg);
    const double t = std::tan(radians(shear_deg));
    // R * [[1, t], [0, 1]] * scale
    const double m00 = std::cos(a) * scale, m01 = (std::cos(a) * t - std::sin(a)) * scale;
    const double m10 = std::sin(a) * scale, m11 = (std::sin(a) * t + std::cos(a)) * scale;
    const double det = m00 * m11 - m01 * m10;
    const double i00 = m11 / det, i01 = -m01 / det, i10 = -m10 / det, i11 = m00 / det;
    return warp_bilinear(image, [=](double x, double y) {
        const double dx = x - cx - shift_x, dy = y - cy - shift_y;
        return std::pair{cx + i00 * dx + i01 * dy, cy + i10 * dx + i11 * dy};
    });
}

Tensor<float> perspective_warp(const Tensor<float>& image, const AugmentationParams::Perspective& p, Rng& rng) {
    const Geometry g = image_geometry(image);
    const double w1 = static_cast<double>(g.w) - 1.0, h1 = static_cast<double>(g.h) - 1.0;
    const std::array<std::pair<double, double>, 4> corners{{{0.0, 0.0}, {w1, 0.0}, {w1, h1}, {0.0, h1}}};
    std::array<std::pair<double, double>, 4> moved{};
    for (std::size_t i = 0; i < 4; ++i) {
        const double dx = uniform(rng, -p.distortion, p.distortion) * static_cast<double>(g.w);
        const double dy = uniform(rng, -p.distortion, p.distortion) * static_cast<double>(g.h);
        moved[i] = {corners[i].first + dx, corners[i].second + dy};
    }
    // Homography sending the displaced corners back onto the original ones.
    Eigen::Matrix<double, 8, 8> A;
    Eigen::Matrix<double, 8, 1> b;
    for (int i = 0; i < 4; ++i) {
        const auto [u, v] = moved[static_cast<std::size_t>(i)];
        const auto [x, y] = corners[static_cast<std::size_t>(i)];
        A.row(2 * i) << u, v, 1, 0, 0, 0, -u * x, -v * x;
        A.row(2 * i + 1) << 0, 0, 0, u, v, 1, -u * y, -v * y;
        b(2 * i) = x;
        b(2 * i + 1) = y;
    }
    const Eigen::Matrix<double, 8, 1> h = A.colPivHouseholderQr().solve(b);
    return warp_bilinear(image, [&h](double x, double y) {
        const double den = h(6) * x + h(7) * y + 1.0;
        return std::pair{(h(0) * x + h(1) * y + h(2)) / den, (h(3) * x + h(4) * y + h(5)) / den};
    });
}

// Hue rotation through (hue, chroma, max) coordinates; exact inverse pair for any real input.
void rotate_hue(float& r, float& g, float& b, double shift) {
    const double R = r, G = g, B = b;
    const double mx = std::max({R, G, B}), mn = std::min({R, G, B});
    const double chroma = mx - mn;
    if (chroma <= 0.0) return;
    double h;
    if (mx == R)
        h = std::fmod((G - B) / chroma, 6.0);
    else if (mx == G)
        h = (B - R) / chroma + 2.0;
    else
        h = (R - G) / chroma + 4.0;
    h = std::fmod(h + 6.0 * shift, 6.0);
    if (h < 0.0) h += 6.0;
    const double x = chroma * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
    const double m = mx - chroma;
    double r1 = 0, g1 = 0, b1 = 0;
    switch (static_cast<int>(h)) {
        case 0: r1 = chroma, g1 = x; break;
        case 1: r1 = x, g1 = chroma; break;
        case 2: g1 = chroma, b1 = x; break;
        case 3: g1 = x, b1 = chroma; break;
        case 4: r1 = x, b1 = chroma; break;
        default: r1 = chroma, b1 = x; break;
    }
    r = static_cast<float>(r1 + m);
    g = static_cast<float>(g1 + m);
    b = static_cast<float>(b1 + m);
}

double mean_luminance(const Tensor<float>& image, const Geometry& g) {
    const auto in = image.data();
    const std::size_t plane = g.h * g.w;
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
        acc += g.c == 3 ? 0.299 * in[i] + 0.587 * in[plane + i] + 0.114 * in[2 * plane + i] : in[i];
    }
    return acc / static_cast<double>(plane);
}

Tensor<float> color_jitter(const Tensor<float>& image, const AugmentationParams::Jitter& p, Rng& rng) {
    const Geometry g = image_geometry(image);
    const double brightness = uniform(rng, p.brightness.lo, p.brightness.hi);
    const double contrast = uniform(rng, p.contrast.lo, p.contrast.hi);
    const double saturation = uniform(rng, p.saturation.lo, p.saturation.hi);
    const double hue = uniform(rng, p.hue.lo, p.hue.hi);

    Tensor<float> out = image;
    for (float& v : out.data()) v = static_cast<float>(v * brightness);

    const double m = mean_luminance(out, g);
    for (float& v : out.data()) v = static_cast<float>((v - m) * contrast + m);

    if (g.c != 3) return out;
    const std::size_t plane = g.h * g.w;
    auto px = out.data();
    for (std::size_t i = 0; i < plane; ++i) {
        const double lum = 0.299 * px[i] + 0.587 * px[plane + i] + 0.114 * px[2 * plane + i];
        for (std::size_t ch = 0; ch < 3; ++ch)
            px[ch * plane + i] = static_cast<float>(lum + (px[ch * plane + i] - lum) * saturation);
    }
    for (std::size_t i = 0; i < plane; ++i) rotate_hue(px[i], px[plane + i], px[2 * plane + i], hue);
    return out;
}

void check_range(const Range& r, const std::string& field) {
    if (!(r.lo <= r.hi)) throw ConfigError(field, "range lower bound exceeds upper bound");
}

void check_probability(double p, const std::string& field) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(field, "probability must lie in [0, 1]");
}

}  // namespace

std::string_view to_string(AugmentationKind kind) {
    switch (kind) {
        case AugmentationKind::crop: return "Crop";
        case AugmentationKind::flip: return "Flip";
        case AugmentationKind::jitter: return "Jitter";
        case AugmentationKind::gaussian_noise: return "GaussianNoise";
        case AugmentationKind::grayscale: return "Grayscale";
        case AugmentationKind::perspective: return "Perspective";
        case AugmentationKind::affine: return "Affine";
        case AugmentationKind::rotation: return "Rotation";
    }
    return "Unknown";
}

std::optional<AugmentationKind> parse_kind(std::string_view text) {
    const std::string key = lower(text);
    for (AugmentationKind kind : kAllKinds)
        if (key == lower(to_string(kind))) return kind;
    if (key == "gn" || key == "noise") return AugmentationKind::gaussian_noise;
    if (key == "gray") return AugmentationKind::grayscale;
    if (key == "persp" || key == "persp.") return AugmentationKind::perspective;
    if (key == "rot" || key == "rot.") return AugmentationKind::rotation;
    return std::nullopt;
}

std::span<const AugmentationKind> kinds_for(DatasetName dataset) {
    if (dataset == DatasetName::mnist) return kMnistKinds;
    return kCifarKinds;
}

bool kind_valid_for(AugmentationKind kind, DatasetName dataset) {
    const auto kinds = kinds_for(dataset);
    return std::find(kinds.begin(), kinds.end(), kind) != kinds.end();
}

void AugmentationParams::validate() const {
    check_range(crop.scale, "augment.crop.scale");
    check_range(crop.aspect, "augment.crop.aspect");
    if (crop.scale.lo <= 0.0 || crop.scale.hi > 1.0) throw ConfigError("augment.crop.scale", "must lie in (0, 1]");
    if (crop.aspect.lo <= 0.0) throw ConfigError("augment.crop.aspect", "must be positive");
    check_probability(crop.p, "augment.crop.p");
    check_probability(flip.p, "augment.flip.p");
    check_range(jitter.brightness, "augment.jitter.brightness");
    check_range(jitter.contrast, "augment.jitter.contrast");
    check_range(jitter.saturation, "augment.jitter.saturation");
    check_range(jitter.hue, "augment.jitter.hue");
    check_probability(jitter.p, "augment.jitter.p");
    if (!(noise.sigma >= 0.0)) throw ConfigError("augment.gaussian_noise.sigma", "must be non-negative");
    check_probability(noise.p, "augment.gaussian_noise.p");
    check_probability(grayscale.p, "augment.grayscale.p");
    if (!(perspective.distortion >= 0.0 && perspective.distortion < 0.5))
        throw ConfigError("augment.perspective.distortion", "must lie in [0, 0.5)");
    check_probability(perspective.p, "augment.perspective.p");
    check_range(affine.degrees, "augment.affine.degrees");
    check_range(affine.scale, "augment.affine.scale");
    check_range(affine.shear, "augment.affine.shear");
    if (affine.scale.lo <= 0.0) throw ConfigError("augment.affine.scale", "must be positive");
    if (!(affine.translate >= 0.0)) throw ConfigError("augment.affine.translate", "must be non-negative");
    check_probability(affine.p, "augment.affine.p");
    check_range(rotation.degrees, "augment.rotation.degrees");
    check_probability(rotation.p, "augment.rotation.p");
}

CropBox sample_crop_box(std::size_t height, std::size_t width, const AugmentationParams::Crop& params, Rng& rng) {
    const double area = static_cast<double>(height * width);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double target = area * uniform(rng, params.scale.lo, params.scale.hi);
        const double aspect = uniform(rng, params.aspect.lo, params.aspect.hi);
        const auto w = static_cast<long>(std::lround(std::sqrt(target * aspect)));
        const auto h = static_cast<long>(std::lround(std::sqrt(target / aspect)));
        if (w >= 1 && h >= 1 && w <= static_cast<long>(width) && h <= static_cast<long>(height)) {
            CropBox box;
            box.height = static_cast<std::size_t>(h);
            box.width = static_cast<std::size_t>(w);
            box.top = std::uniform_int_distribution<std::size_t>(0, height - box.height)(rng);
            box.left = std::uniform_int_distribution<std::size_t>(0, width - box.width)(rng);
            return box;
        }
    }
    return CropBox{0, 0, height, width};
}

Tensor<float> crop_resize_nearest(const Tensor<float>& image, const CropBox& box) {
    const Geometry g = image_geometry(image);
    if (box.height == 0 || box.width == 0 || box.top + box.height > g.h || box.left + box.width > g.w)
        throw ContractError("crop box outside the image");
    Tensor<float> out(image.shape());
    const auto in = image.data();
    for (std::size_t ch = 0; ch < g.c; ++ch)
        for (std::size_t y = 0; y < g.h; ++y) {
            const std::size_t sy = box.top + (y * box.height) / g.h;
            for (std::size_t x = 0; x < g.w; ++x) {
                const std::size_t sx = box.left + (x * box.width) / g.w;
                out[(ch * g.h + y) * g.w + x] = in[(ch * g.h + sy) * g.w + sx];
            }
        }
    return out;
}

Tensor<float> horizontal_flip(const Tensor<float>& image) {
    const Geometry g = image_geometry(image);
    Tensor<float> out(image.shape());
    const auto in = image.data();
    for (std::size_t row = 0; row < g.c * g.h; ++row)
        for (std::size_t x = 0; x < g.w; ++x) out[row * g.w + x] = in[row * g.w + (g.w - 1 - x)];
    return out;
}

Tensor<float> grayscale_convert(const Tensor<float>& image) {
    const Geometry g = image_geometry(image);
    if (g.c != 3) throw ContractError("grayscale needs 3 channels, got " + std::to_string(g.c));
    const std::size_t plane = g.h * g.w;
    Tensor<float> out(image.shape());
    const auto in = image.data();
    for (std::size_t i = 0; i < plane; ++i) {
        const double lum = 0.299 * in[i] + 0.587 * in[plane + i] + 0.114 * in[2 * plane + i];
        const auto v = static_cast<float>(lum);
        out[i] = out[plane + i] = out[2 * plane + i] = v;
    }
    return out;
}

Tensor<float> apply(AugmentationKind kind, const AugmentationParams& params, const Tensor<float>& image, Rng& rng) {
    const Geometry g = image_geometry(image);
    Tensor<float> out;
    switch (kind) {
        case AugmentationKind::crop: {
            if (!bernoulli(rng, params.crop.p)) return image;
            out = crop_resize_nearest(image, sample_crop_box(g.h, g.w, params.crop, rng));
            break;
        }
        case AugmentationKind::flip: {
            if (!bernoulli(rng, params.flip.p)) return image;
            out = horizontal_flip(image);
            break;
        }
        case AugmentationKind::jitter: {
            if (!bernoulli(rng, params.jitter.p)) return image;
            out = color_jitter(image, params.jitter, rng);
            break;
        }
        case AugmentationKind::gaussian_noise: {
            if (!bernoulli(rng, params.noise.p) || params.noise.sigma == 0.0) return image;
            out = image;
            std::normal_distribution<double> noise(0.0, params.noise.sigma);
            for (float& v : out.data()) v = static_cast<float>(v + noise(rng));
            break;
        }
        case AugmentationKind::grayscale: {
            if (g.c != 3) throw ContractError("grayscale needs 3 channels, got " + std::to_string(g.c));
            if (!bernoulli(rng, params.grayscale.p)) return image;
            out = grayscale_convert(image);
            break;
        }
        case AugmentationKind::perspective: {
            if (!bernoulli(rng, params.perspective.p)) return image;
            out = perspective_warp(image, params.perspective, rng);
            break;
        }
        case AugmentationKind::affine: {
            if (!bernoulli(rng, params.affine.p)) return image;
            const auto& a = params.affine;
            const double angle = uniform(rng, a.degrees.lo, a.degrees.hi);
            const double tx = uniform(rng, -a.translate, a.translate) * static_cast<double>(g.w);
            const double ty = uniform(rng, -a.translate, a.translate) * static_cast<double>(g.h);
            const double s = uniform(rng, a.scale.lo, a.scale.hi);
            const double shear = uniform(rng, a.shear.lo, a.shear.hi);
            out = affine_warp(image, angle, tx, ty, s, shear);
            break;
        }
        case AugmentationKind::rotation: {
            if (!bernoulli(rng, params.rotation.p)) return image;
            out = affine_warp(image, uniform(rng, params.rotation.degrees.lo, params.rotation.degrees.hi), 0.0, 0.0,
                              1.0, 0.0);
            break;
        }
        default:
            throw ContractError("unknown augmentation kind");
    }
    clip_unit(out);
    return out;
}

ViewPair make_view_pair(std::span<const AugmentationKind> kinds, const AugmentationParams& params,
                        const Tensor<float>& batch, std::uint64_t seed) {
    if (batch.rank() != 4) throw DimensionError("view pairs need an [n x c x h x w] batch");
    const std::size_t n = batch.dim(0);
    if (kinds.size() != n) throw ContractError("one augmentation kind per image required");
    const std::size_t stride = batch.numel() / n;
    const Shape image_shape{batch.dim(1), batch.dim(2), batch.dim(3)};
    ViewPair pair{Tensor<float>(batch.shape()), Tensor<float>(batch.shape())};
    const auto src = batch.data();
    for (std::size_t i = 0; i < n; ++i) {
        const Tensor<float> image(image_shape, std::vector<float>(src.begin() + static_cast<std::ptrdiff_t>(i * stride),
                                                                  src.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride)));
        for (int view = 0; view < 2; ++view) {
            Rng rng = make_rng(seed, i, view);
            Tensor<float> out = image;
            if (params.base_crop && kinds[i] != AugmentationKind::crop)
                out = apply(AugmentationKind::crop, params, out, rng);
            out = apply(kinds[i], params, out, rng);
            Tensor<float>& dst = view == 0 ? pair.view_a : pair.view_b;
            std::copy(out.data().begin(), out.data().end(), dst.data().begin() + static_cast<std::ptrdiff_t>(i * stride));
        }
    }
    return pair;
}

ViewPair make_view_pair(AugmentationKind kind, const AugmentationParams& params, const Tensor<float>& batch,
                        std::uint64_t seed) {
    if (batch.rank() != 4) throw DimensionError("view pairs need an [n x c x h x w] batch");
    const std::vector<AugmentationKind> kinds(batch.dim(0), kind);
    return make_view_pair(kinds, params, batch, seed);
}

}  // namespace augcl
