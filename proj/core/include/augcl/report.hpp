#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "augcl/augment.hpp"
#include "augcl/data.hpp"
#include "augcl/eval.hpp"

namespace augcl {

struct SingleAugRecord {
    AugmentationKind kind = AugmentationKind::crop;
    std::uint64_t seed = 0;
    double probe_accuracy = 0.0;
    double val_accuracy = 0.0;

    bool operator==(const SingleAugRecord&) const = default;
};

struct RunReport {
    DatasetName dataset = DatasetName::mnist;
    std::string curriculum_id;
    std::vector<AugmentationKind> tasks;
    std::vector<std::uint64_t> seeds;
    bool expect_cl = true;
    bool expect_mtl = true;
    std::vector<EvalRecord> records;
    std::vector<SingleAugRecord> single_aug;
    std::vector<std::string> failures;
};

struct CellSummary {
    std::optional<double> mean;
    std::size_t count = 0;
    bool complete = false;
};

/// Mean probe accuracy over the seeds that reported (mode, k).
CellSummary cell_summary(const RunReport& report, LearningMode mode, std::size_t k);

struct ModeNegativeTransfer {
    LearningMode mode = LearningMode::cl;
    /// Over the seed-mean accuracy curve; absent when a cell is missing.
    std::optional<NegativeTransferStat> of_means;
    std::vector<std::pair<std::uint64_t, NegativeTransferStat>> per_seed;
    NegativeTransferSummary seeds;
};

/// One entry per expected mode; needs at least two tasks.
std::vector<ModeNegativeTransfer> negative_transfer_report(const RunReport& report);

std::string render_report_csv(const RunReport& report);
std::string render_negtransfer_csv(const RunReport& report);
std::string render_single_aug_csv(const RunReport& report);
std::string render_markdown(const RunReport& report);

/// Parses the rows of report.csv back into records.
std::vector<EvalRecord> parse_report_csv(const std::string& text);
std::vector<SingleAugRecord> parse_single_aug_csv(const std::string& text, const std::string& source);

/// Writes report.csv, report.md, negtransfer.csv and single_aug.csv.
void write_report(const std::filesystem::path& dir, const RunReport& report);

/// Records sorted by (mode, prefix length, seed) / (kind, seed).
void sort_records(RunReport& report);

}  // namespace augcl
