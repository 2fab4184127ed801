#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "augcl/tensor.hpp"

namespace augcl {

enum class DatasetName { mnist, cifar10, cifar100 };

std::string_view to_string(DatasetName name);
std::optional<DatasetName> parse_dataset_name(std::string_view text);

/// Images in [0, 1] as [N x c x h x w] plus integer labels.
struct Dataset {
    DatasetName name = DatasetName::mnist;
    Tensor<float> images;
    std::vector<int> labels;
    int class_count = 0;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t channels() const { return images.dim(1); }
    std::size_t height() const { return images.dim(2); }
    std::size_t width() const { return images.dim(3); }

    /// First `count` samples (or all of them when count is 0 or too large).
    Dataset head(std::size_t count) const;
};

struct DatasetPair {
    Dataset train;
    Dataset test;
};

/// Reads an IDX3 image file (magic 0x00000803) into [N x 1 x rows x cols].
Tensor<float> read_idx_images(const std::filesystem::path& file);
/// Reads an IDX1 label file (magic 0x00000801).
std::vector<int> read_idx_labels(const std::filesystem::path& file);

/// Expects train-images-idx3-ubyte, train-labels-idx1-ubyte,
/// t10k-images-idx3-ubyte and t10k-labels-idx1-ubyte in `dir`.
DatasetPair load_mnist(const std::filesystem::path& dir);

/// Parses CIFAR binary batches. CIFAR-10 records are 1 label byte + 3072
/// pixel bytes; CIFAR-100 records carry a coarse and a fine label byte
/// (the fine label is used).
Dataset read_cifar_batches(std::span<const std::filesystem::path> files, int variant);

/// CIFAR-10: data_batch_{1..5}.bin + test_batch.bin; CIFAR-100: train.bin + test.bin.
DatasetPair load_cifar(const std::filesystem::path& dir, int variant);

/// Dispatches on name; `dir` is the dataset's own directory.
DatasetPair load_dataset(DatasetName name, const std::filesystem::path& dir);

/// Index partition of the training set into train / validation, plus the
/// test-set indices.
struct Split {
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> val_indices;
    std::vector<std::size_t> test_indices;
    std::uint64_t seed = 0;
};

/// Seeded uniform shuffle, then round(val_fraction * N) indices go to validation.
Split make_split(std::size_t train_size, std::size_t test_size, std::uint64_t seed, double val_fraction = 0.05);

Tensor<float> gather_images(const Dataset& data, std::span<const std::size_t> indices);
std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> indices);

/// Epoch-wise shuffled batches over a fixed index set. The permutation of
/// epoch e is a pure function of (seed, e).
class BatchIterator {
public:
    BatchIterator(std::vector<std::size_t> indices, std::size_t batch_size, bool drop_last, std::uint64_t seed,
                  std::size_t first_epoch = 0);

    std::size_t batches_per_epoch() const noexcept;
    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t batch_in_epoch() const noexcept { return cursor_; }

    std::vector<std::size_t> epoch_permutation(std::size_t epoch) const;

    /// Indices of the next batch; rolls over to the next epoch when exhausted.
    std::vector<std::size_t> next_indices();
    Tensor<float> next_batch(const Dataset& data);

private:
    void start_epoch(std::size_t epoch);

    std::vector<std::size_t> indices_;
    std::size_t batch_size_;
    bool drop_last_;
    std::uint64_t seed_;
    std::size_t epoch_;
    std::size_t cursor_ = 0;
    std::vector<std::size_t> order_;
};

}  // namespace augcl
