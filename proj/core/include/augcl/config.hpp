#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "augcl/data.hpp"
#include "augcl/train.hpp"

namespace augcl {

enum class RunModes { both, cl, mtl };

/// Everything a run needs; the JSON form is the experiment config file.
struct ExperimentConfig {
    TrainConfig train;
    std::optional<std::string> data_dir;
    std::string output_dir = "runs/default";
    std::size_t train_subset = 0;  // 0 keeps the whole split
    std::size_t test_subset = 0;
    double val_fraction = 0.05;
    RunModes modes = RunModes::both;
};

/// Defaults at the published hyperparameters with the built-in curriculum
/// for the dataset (A1 or B1).
ExperimentConfig default_config(DatasetName dataset);

/// Unknown keys and out-of-range values throw ConfigError naming the field.
ExperimentConfig config_from_json(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

nlohmann::json config_to_json(const ExperimentConfig& config);
/// Sorted keys, two-space indent, trailing newline.
std::string canonical_config(const ExperimentConfig& config);

/// Config data_dir, else AUGCL_DATA_DIR (or its per-dataset subdirectory).
/// Throws DataMissingError when neither is available.
std::filesystem::path resolve_data_dir(const ExperimentConfig& config);

/// Loads the dataset and applies the subset sizes.
DatasetPair load_experiment_data(const ExperimentConfig& config);

std::string_view to_string(RunModes modes);

}  // namespace augcl
