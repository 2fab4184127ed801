#pragma once

#include <filesystem>
#include <string_view>
#include <vector>

#include "augcl/config.hpp"
#include "augcl/report.hpp"
#include "augcl/train.hpp"

namespace augcl {

std::string_view library_version();

/// Keeps large freed blocks inside the heap instead of returning them to the
/// OS after every op (glibc only; a no-op elsewhere).
void tune_allocator();

/// Prepares the run directory: config.json snapshot and VERSION. An existing
/// snapshot must match the config (ConfigError otherwise).
void prepare_run_dir(const ExperimentConfig& config);

/// Runs every seed, writes per-seed logs under output_dir, then builds the
/// report from those logs.
RunReport run_experiment(const ExperimentConfig& config, const DatasetPair& data, std::size_t parallel_runs = 1);

/// Trains `kind` alone for every seed, upserts single_aug/records.csv and
/// regenerates the report.
std::vector<SingleAugRecord> run_single_aug_experiment(const ExperimentConfig& config, const DatasetPair& data,
                                                       AugmentationKind kind, std::size_t parallel_runs = 1);

/// Reads config.json and the persisted per-seed logs. Throws LogError naming
/// the file for a missing snapshot or a corrupt log; absent seeds leave
/// missing cells.
RunReport load_run_report(const std::filesystem::path& run_dir);

/// load_run_report + write_report into the same directory.
RunReport regenerate_report(const std::filesystem::path& run_dir);

}  // namespace augcl
