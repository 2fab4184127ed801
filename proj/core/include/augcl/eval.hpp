#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "augcl/data.hpp"
#include "augcl/model.hpp"

namespace augcl {

enum class LearningMode { cl, mtl };

std::string_view to_string(LearningMode mode);
std::optional<LearningMode> parse_learning_mode(std::string_view text);

struct ProbeConfig {
    double lr = 1e-3;
    std::size_t epochs = 20;
    std::size_t batch_size = 256;
};

/// Single linear layer d_feat -> class_count.
class ProbeHead {
public:
    ProbeHead(std::size_t d_feat, int class_count, std::uint64_t seed);

    std::size_t d_feat() const noexcept { return d_feat_; }
    int class_count() const noexcept { return class_count_; }
    Linear<float>& layer() noexcept { return layer_; }
    const Linear<float>& layer() const noexcept { return layer_; }

    Tensor<float> logits(const Tensor<float>& features) const;

private:
    std::size_t d_feat_;
    int class_count_;
    Linear<float> layer_;
};

/// Softmax cross-entropy + Adam on precomputed features.
ProbeHead train_probe(const Tensor<float>& features, std::span<const int> labels, int class_count,
                      const ProbeConfig& config, std::uint64_t seed);

/// Extracts backbone features for `indices` of `data` and trains a probe on them.
ProbeHead train_probe(const FrozenEncoder<float>& encoder, const Dataset& data, std::span<const std::size_t> indices,
                      const ProbeConfig& config, std::uint64_t seed);

/// 100 * correct / total, argmax with ties going to the lowest class index.
double accuracy(const Tensor<float>& logits, std::span<const int> labels);
double accuracy(const ProbeHead& probe, const FrozenEncoder<float>& encoder, const Tensor<float>& images,
                std::span<const int> labels);

/// On-disk cache of backbone features keyed by (encoder checksum, split tag).
/// Writes go to a temporary file that is renamed into place.
class FeatureCache {
public:
    explicit FeatureCache(std::filesystem::path dir);

    Tensor<float> features(const FrozenEncoder<float>& encoder, const Dataset& data,
                           std::span<const std::size_t> indices, const std::string& tag);

    std::filesystem::path path_for(std::uint64_t checksum, const std::string& tag) const;
    std::size_t hits() const noexcept { return hits_; }

private:
    std::filesystem::path dir_;
    std::size_t hits_ = 0;
};

Tensor<float> read_feature_file(const std::filesystem::path& path);
void write_feature_file(const std::filesystem::path& path, const Tensor<float>& features);

struct ProbeOutcome {
    double test_accuracy = 0.0;
    double val_accuracy = 0.0;
};

/// Trains a probe on the train split and scores it on the test and validation splits.
ProbeOutcome evaluate_encoder(const FrozenEncoder<float>& encoder, const DatasetPair& data, const Split& split,
                              const ProbeConfig& config, std::uint64_t seed, FeatureCache* cache = nullptr);

struct EvalRecord {
    std::size_t prefix_length = 0;
    LearningMode mode = LearningMode::cl;
    std::uint64_t seed = 0;
    double probe_accuracy = 0.0;
    double val_accuracy = 0.0;

    bool operator==(const EvalRecord&) const = default;
};

struct DropEvent {
    std::size_t k = 0;  // transition from prefix k to k + 1
    double delta = 0.0;

    bool operator==(const DropEvent&) const = default;
};

struct NegativeTransferStat {
    std::vector<DropEvent> drop_events;
    double average_drop = 0.0;
};

/// Records every decrease a_{k+1} < a_k and averages the decreases (0 if none).
NegativeTransferStat negative_transfer(std::span<const double> accuracies);

struct NegativeTransferSummary {
    /// Mean over sequences of each sequence's average drop (0 for a sequence without drops).
    double mean_of_averages = 0.0;
    /// Mean over all drop events pooled across sequences (0 if none).
    double pooled = 0.0;
    std::size_t event_count = 0;
    std::size_t sequence_count = 0;
};

NegativeTransferSummary summarize_negative_transfer(std::span<const NegativeTransferStat> stats);

/// CSV with header mode,prefix_length,seed,probe_accuracy,val_accuracy.
void write_eval_records(const std::filesystem::path& file, std::span<const EvalRecord> records);
/// Throws FormatError naming the file on any malformed line.
std::vector<EvalRecord> read_eval_records(const std::filesystem::path& file);

}  // namespace augcl
