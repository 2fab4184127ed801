#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "augcl/augment.hpp"
#include "augcl/data.hpp"
#include "augcl/eval.hpp"
#include "augcl/loss.hpp"
#include "augcl/model.hpp"

namespace augcl {

/// Ordered augmentation families, one per task.
struct Curriculum {
    std::string id;
    std::vector<AugmentationKind> tasks;

    bool operator==(const Curriculum&) const = default;
};

/// A1-A5 (CIFAR) and B1-B5 (MNIST).
std::span<const Curriculum> builtin_curricula();
std::optional<Curriculum> builtin_curriculum(std::string_view id);

enum class MtlSampling { per_batch, per_sample };

std::string_view to_string(MtlSampling s);
std::optional<MtlSampling> parse_mtl_sampling(std::string_view text);

struct TrainConfig {
    DatasetName dataset = DatasetName::mnist;
    Arch arch = Arch::conv_s;
    std::size_t d_proj = 128;
    std::size_t batch_size = 256;
    double lr = 5e-4;
    double lambda = kDefaultLambda;
    double gamma = kDefaultGamma;
    std::size_t epochs_per_task = 5;
    std::uint64_t seed = 0;
    std::size_t run_count = 3;
    Curriculum curriculum;
    MtlSampling mtl_sampling = MtlSampling::per_batch;
    bool persist_predictor = false;
    AugmentationParams augment;
    ProbeConfig probe;

    /// Throws ConfigError naming the offending field.
    void validate() const;
    /// Seed of repeat r.
    std::uint64_t run_seed(std::size_t r) const { return seed + r; }
};

/// Everything one seeded run trains and evaluates on.
struct TrainingData {
    const DatasetPair* data = nullptr;
    Split split;
    std::uint64_t run_seed = 0;
};

TrainingData make_training_data(const DatasetPair& data, std::uint64_t run_seed, double val_fraction = 0.05);

/// Global position in the step/epoch stream, shared by consecutive tasks so
/// that batch order and augmentation draws depend only on (seed, step).
struct TrainingCursor {
    std::size_t global_step = 0;
    std::size_t epoch = 0;
};

struct StepLog {
    std::size_t step = 0;
    std::size_t task = 0;  // 1-based; 0 when images of one batch mix tasks
    LossBreakdown loss;
};

struct KindLog {
    std::size_t step = 0;
    std::size_t task = 0;
    AugmentationKind kind = AugmentationKind::crop;
};

struct TaskResult {
    std::size_t task_index = 0;  // 1-based CL task, or the MTL prefix length
    std::size_t steps = 0;
    std::vector<StepLog> losses;
    std::vector<KindLog> kinds;
    std::optional<std::uint64_t> frozen_checksum_before;
    std::optional<std::uint64_t> frozen_checksum_after;
    std::uint64_t model_checksum = 0;
    bool optimizer_state_zero_at_start = false;
    std::filesystem::path checkpoint;
    std::optional<ProbeOutcome> probe;
};

struct RunOptions {
    std::optional<std::filesystem::path> checkpoint_dir;
    FeatureCache* cache = nullptr;
    bool probe = true;
};

/// One CL task: Barlow Twins alone without a previous model, the CaSSLe
/// composite loss otherwise. One Adam step per batch.
TaskResult train_task_cl(EncoderModel<float>& model, const FrozenEncoder<float>* frozen_prev, Predictor<float>* g,
                         AugmentationKind kind, std::size_t task_index, const TrainConfig& config,
                         const TrainingData& data, TrainingCursor& cursor);

/// Sequential training over the curriculum (or its first `task_limit` tasks).
/// Between tasks the model is frozen as the distillation target, the predictor
/// is reinitialized (unless persisted) and the optimizer state is reset.
std::vector<TaskResult> run_curriculum_cl(const TrainConfig& config, const TrainingData& data,
                                          const RunOptions& options = {}, std::size_t task_limit = 0);

/// Joint training on the first k tasks from scratch for k * epochs_per_task epochs.
TaskResult run_joint_mtl(const TrainConfig& config, const TrainingData& data, std::size_t k,
                         const RunOptions& options = {});

/// Single-family SSL training followed by a probe.
TaskResult run_single_augmentation(const TrainConfig& config, const TrainingData& data, AugmentationKind kind,
                                   const RunOptions& options = {});

struct SeedRun {
    std::uint64_t seed = 0;
    std::vector<EvalRecord> records;
    std::vector<TaskResult> cl;
    std::vector<TaskResult> mtl;
    std::optional<std::string> failure;
};

struct ExperimentOptions {
    bool run_cl = true;
    bool run_mtl = true;
    double val_fraction = 0.05;
    std::size_t parallel_runs = 1;
    /// Run directory; per-seed logs and checkpoints go below runs/seed_<s>/.
    std::optional<std::filesystem::path> out_dir;
};

/// All seeds: CL over the curriculum and MTL for every prefix length.
std::vector<SeedRun> run_seeds(const TrainConfig& config, const DatasetPair& data, const ExperimentOptions& options);

void write_loss_log(const std::filesystem::path& file, std::span<const StepLog> steps);
void write_kind_log(const std::filesystem::path& file, std::span<const KindLog> kinds);

}  // namespace augcl
