#include "augcl/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

#include "augcl/errors.hpp"
#include "augcl/rng.hpp"

namespace augcl {

namespace fs = std::filesystem;

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr std::size_t kCifarPixels = 3 * 32 * 32;

std::vector<unsigned char> read_bytes(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataMissingError("cannot open " + file.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const fs::path& file) {
    if (bytes.size() < offset + 4) throw LengthError(file.string() + ": truncated IDX header");
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void require_file(const fs::path& file) {
    if (!fs::is_regular_file(file)) throw DataMissingError("missing dataset file " + file.string());
}

}  // namespace

std::string_view to_string(DatasetName name) {
    switch (name) {
        case DatasetName::mnist: return "mnist";
        case DatasetName::cifar10: return "cifar10";
        case DatasetName::cifar100: return "cifar100";
    }
    return "unknown";
}

std::optional<DatasetName> parse_dataset_name(std::string_view text) {
    if (text == "mnist") return DatasetName::mnist;
    if (text == "cifar10") return DatasetName::cifar10;
    if (text == "cifar100") return DatasetName::cifar100;
    return std::nullopt;
}

Dataset Dataset::head(std::size_t count) const {
    if (count == 0 || count >= size()) return *this;
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Dataset out;
    out.name = name;
    out.class_count = class_count;
    out.images = gather_images(*this, idx);
    out.labels = gather_labels(*this, idx);
    return out;
}

Tensor<float> read_idx_images(const fs::path& file) {
    const auto bytes = read_bytes(file);
    if (bytes.empty()) throw LengthError(file.string() + ": empty file");
    const std::uint32_t magic = read_be32(bytes, 0, file);
    if (magic != kIdxImageMagic) throw FormatError(file.string() + ": bad IDX image magic");
    const std::size_t count = read_be32(bytes, 4, file);
    const std::size_t rows = read_be32(bytes, 8, file);
    const std::size_t cols = read_be32(bytes, 12, file);
    if (count == 0 || rows == 0 || cols == 0) throw FormatError(file.string() + ": zero-sized IDX dimension");
    const std::size_t pixels = count * rows * cols;
    if (bytes.size() < 16 + pixels)
        throw LengthError(file.string() + ": expected " + std::to_string(pixels) + " pixel bytes, found " +
                          std::to_string(bytes.size() - 16));
    std::vector<float> data(pixels);
    for (std::size_t i = 0; i < pixels; ++i) data[i] = static_cast<float>(bytes[16 + i]) / 255.0f;
    return Tensor<float>({count, 1, rows, cols}, std::move(data));
}

std::vector<int> read_idx_labels(const fs::path& file) {
    const auto bytes = read_bytes(file);
    if (bytes.empty()) throw LengthError(file.string() + ": empty file");
    const std::uint32_t magic = read_be32(bytes, 0, file);
    if (magic != kIdxLabelMagic) throw FormatError(file.string() + ": bad IDX label magic");
    const std::size_t count = read_be32(bytes, 4, file);
    if (bytes.size() < 8 + count)
        throw LengthError(file.string() + ": expected " + std::to_string(count) + " labels, found " +
                          std::to_string(bytes.size() - 8));
    return std::vector<int>(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count));
}

namespace {

Dataset load_mnist_pair(const fs::path& images, const fs::path& labels) {
    require_file(images);
    require_file(labels);
    Dataset d;
    d.name = DatasetName::mnist;
    d.class_count = 10;
    d.images = read_idx_images(images);
    d.labels = read_idx_labels(labels);
    if (d.images.dim(2) != 28 || d.images.dim(3) != 28)
        throw FormatError(images.string() + ": MNIST images must be 28x28");
    if (d.labels.size() != d.images.dim(0))
        throw FormatError(labels.string() + ": label count does not match image count");
    for (int label : d.labels)
        if (label < 0 || label >= d.class_count) throw FormatError(labels.string() + ": label out of range");
    return d;
}

}  // namespace

DatasetPair load_mnist(const fs::path& dir) {
    return {load_mnist_pair(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"),
            load_mnist_pair(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte")};
}

Dataset read_cifar_batches(std::span<const fs::path> files, int variant) {
    if (variant != 10 && variant != 100) throw ContractError("CIFAR variant must be 10 or 100");
    const std::size_t label_bytes = variant == 10 ? 1 : 2;
    const std::size_t record = label_bytes + kCifarPixels;

    std::vector<std::vector<unsigned char>> blobs;
    std::size_t total = 0;
    for (const fs::path& file : files) {
        require_file(file);
        auto bytes = read_bytes(file);
        if (bytes.empty() || bytes.size() % record != 0)
            throw FormatError(file.string() + ": size " + std::to_string(bytes.size()) +
                              " is not a multiple of the " + std::to_string(record) + "-byte record");
        total += bytes.size() / record;
        blobs.push_back(std::move(bytes));
    }
    if (total == 0) throw FormatError("no CIFAR records");

    Dataset d;
    d.name = variant == 10 ? DatasetName::cifar10 : DatasetName::cifar100;
    d.class_count = variant;
    std::vector<float> pixels(total * kCifarPixels);
    d.labels.reserve(total);
    std::size_t n = 0;
    for (std::size_t b = 0; b < blobs.size(); ++b) {
        const auto& bytes = blobs[b];
        for (std::size_t off = 0; off < bytes.size(); off += record, ++n) {
            const int label = bytes[off + label_bytes - 1];
            if (label >= variant) throw FormatError(files[b].string() + ": label out of range");
            d.labels.push_back(label);
            const unsigned char* src = bytes.data() + off + label_bytes;
            float* dst = pixels.data() + n * kCifarPixels;
            for (std::size_t i = 0; i < kCifarPixels; ++i) dst[i] = static_cast<float>(src[i]) / 255.0f;
        }
    }
    d.images = Tensor<float>({total, 3, 32, 32}, std::move(pixels));
    return d;
}

DatasetPair load_cifar(const fs::path& dir, int variant) {
    std::vector<fs::path> train, test;
    if (variant == 10) {
        for (int i = 1; i <= 5; ++i) train.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
        test.push_back(dir / "test_batch.bin");
    } else if (variant == 100) {
        train.push_back(dir / "train.bin");
        test.push_back(dir / "test.bin");
    } else {
        throw ContractError("CIFAR variant must be 10 or 100");
    }
    return {read_cifar_batches(train, variant), read_cifar_batches(test, variant)};
}

DatasetPair load_dataset(DatasetName name, const fs::path& dir) {
    switch (name) {
        case DatasetName::mnist: return load_mnist(dir);
        case DatasetName::cifar10: return load_cifar(dir, 10);
        case DatasetName::cifar100: return load_cifar(dir, 100);
    }
    throw ContractError("unknown dataset");
}

Split make_split(std::size_t train_size, std::size_t test_size, std::uint64_t seed, double val_fraction) {
    if (val_fraction < 0.0 || val_fraction >= 1.0) throw ContractError("validation fraction must lie in [0, 1)");
    std::vector<std::size_t> perm(train_size);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng = make_rng(seed, Stream::split);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto val_count = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(train_size)));

    Split split;
    split.seed = seed;
    split.val_indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(val_count));
    split.train_indices.assign(perm.begin() + static_cast<std::ptrdiff_t>(val_count), perm.end());
    std::sort(split.val_indices.begin(), split.val_indices.end());
    std::sort(split.train_indices.begin(), split.train_indices.end());
    split.test_indices.resize(test_size);
    std::iota(split.test_indices.begin(), split.test_indices.end(), std::size_t{0});
    return split;
}

Tensor<float> gather_images(const Dataset& data, std::span<const std::size_t> indices) {
    if (indices.empty()) throw ContractError("cannot gather an empty batch");
    const std::size_t stride = data.channels() * data.height() * data.width();
    std::vector<float> out(indices.size() * stride);
    const auto src = data.images.data();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= data.size()) throw ContractError("sample index out of range");
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[i] * stride), stride,
                    out.begin() + static_cast<std::ptrdiff_t>(i * stride));
    }
    return Tensor<float>({indices.size(), data.channels(), data.height(), data.width()}, std::move(out));
}

std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> indices) {
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(data.labels.at(i));
    return out;
}

BatchIterator::BatchIterator(std::vector<std::size_t> indices, std::size_t batch_size, bool drop_last,
                             std::uint64_t seed, std::size_t first_epoch)
    : indices_(std::move(indices)), batch_size_(batch_size), drop_last_(drop_last), seed_(seed), epoch_(first_epoch) {
    if (batch_size_ == 0) throw ContractError("batch size must be positive");
    if (indices_.empty()) throw ContractError("batch iterator needs at least one index");
    if (drop_last_ && indices_.size() < batch_size_)
        throw ContractError("batch size " + std::to_string(batch_size_) + " exceeds the " +
                            std::to_string(indices_.size()) + " available samples");
    start_epoch(epoch_);
}

std::size_t BatchIterator::batches_per_epoch() const noexcept {
    return drop_last_ ? indices_.size() / batch_size_ : (indices_.size() + batch_size_ - 1) / batch_size_;
}

std::vector<std::size_t> BatchIterator::epoch_permutation(std::size_t epoch) const {
    std::vector<std::size_t> order = indices_;
    Rng rng = make_rng(seed_, Stream::batches, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

void BatchIterator::start_epoch(std::size_t epoch) {
    epoch_ = epoch;
    cursor_ = 0;
    order_ = epoch_permutation(epoch);
}

std::vector<std::size_t> BatchIterator::next_indices() {
    if (cursor_ >= batches_per_epoch()) start_epoch(epoch_ + 1);
    const std::size_t begin = cursor_ * batch_size_;
    const std::size_t end = std::min(begin + batch_size_, order_.size());
    ++cursor_;
    return std::vector<std::size_t>(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                                    order_.begin() + static_cast<std::ptrdiff_t>(end));
}

Tensor<float> BatchIterator::next_batch(const Dataset& data) {
    const auto idx = next_indices();
    return gather_images(data, idx);
}

}  // namespace augcl
