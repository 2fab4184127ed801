#include "augcl/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "augcl/errors.hpp"
#include "augcl/format.hpp"

namespace augcl {

namespace {

constexpr std::string_view kReportHeader = "dataset,curriculum,mode,prefix_length,seed,probe_accuracy,val_accuracy";
constexpr std::string_view kSingleHeader = "kind,seed,probe_accuracy,val_accuracy";
constexpr std::string_view kMissing = "—";

std::string fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::size_t kind_rank(AugmentationKind k) {
    return static_cast<std::size_t>(std::find(kAllKinds.begin(), kAllKinds.end(), k) - kAllKinds.begin());
}

std::vector<LearningMode> expected_modes(const RunReport& r) {
    std::vector<LearningMode> modes;
    if (r.expect_mtl) modes.push_back(LearningMode::mtl);
    if (r.expect_cl) modes.push_back(LearningMode::cl);
    return modes;
}

std::string events_text(const NegativeTransferStat& s) {
    std::string out;
    for (const DropEvent& e : s.drop_events) {
        if (!out.empty()) out += '|';
        out += std::to_string(e.k) + ':' + format_double(e.delta);
    }
    return out;
}

void write_text(const std::filesystem::path& file, const std::string& text) {
    std::filesystem::path tmp = file;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << text;
        if (!out.flush()) throw Error("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, file);
}

}  // namespace

void sort_records(RunReport& report) {
    std::sort(report.records.begin(), report.records.end(), [](const EvalRecord& a, const EvalRecord& b) {
        return std::tie(a.mode, a.prefix_length, a.seed) < std::tie(b.mode, b.prefix_length, b.seed);
    });
    std::sort(report.single_aug.begin(), report.single_aug.end(), [](const SingleAugRecord& a, const SingleAugRecord& b) {
        return std::make_pair(kind_rank(a.kind), a.seed) < std::make_pair(kind_rank(b.kind), b.seed);
    });
}

CellSummary cell_summary(const RunReport& report, LearningMode mode, std::size_t k) {
    CellSummary c;
    double total = 0.0;
    for (const EvalRecord& r : report.records) {
        if (r.mode != mode || r.prefix_length != k) continue;
        total += r.probe_accuracy;
        ++c.count;
    }
    if (c.count > 0) c.mean = total / static_cast<double>(c.count);
    c.complete = c.count == report.seeds.size();
    return c;
}

std::vector<ModeNegativeTransfer> negative_transfer_report(const RunReport& report) {
    std::vector<ModeNegativeTransfer> out;
    const std::size_t T = report.tasks.size();
    if (T < 2) return out;
    for (LearningMode mode : expected_modes(report)) {
        ModeNegativeTransfer m;
        m.mode = mode;
        std::vector<double> means;
        for (std::size_t k = 1; k <= T; ++k) {
            const CellSummary c = cell_summary(report, mode, k);
            if (!c.mean) break;
            means.push_back(*c.mean);
        }
        if (means.size() == T) m.of_means = negative_transfer(means);
        std::vector<NegativeTransferStat> stats;
        for (std::uint64_t seed : report.seeds) {
            std::vector<double> acc(T, -1.0);
            for (const EvalRecord& r : report.records)
                if (r.mode == mode && r.seed == seed && r.prefix_length >= 1 && r.prefix_length <= T)
                    acc[r.prefix_length - 1] = r.probe_accuracy;
            if (std::find(acc.begin(), acc.end(), -1.0) != acc.end()) continue;
            m.per_seed.emplace_back(seed, negative_transfer(acc));
            stats.push_back(m.per_seed.back().second);
        }
        m.seeds = summarize_negative_transfer(stats);
        out.push_back(std::move(m));
    }
    return out;
}

std::string render_report_csv(const RunReport& report) {
    std::ostringstream out;
    out << kReportHeader << '\n';
    for (const EvalRecord& r : report.records)
        out << to_string(report.dataset) << ',' << report.curriculum_id << ',' << to_string(r.mode) << ','
            << r.prefix_length << ',' << r.seed << ',' << format_double(r.probe_accuracy) << ','
            << format_double(r.val_accuracy) << '\n';
    return out.str();
}

std::vector<EvalRecord> parse_report_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kReportHeader) throw FormatError("report.csv: bad header");
    std::vector<EvalRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split_line(line);
        if (cells.size() != 7) throw FormatError("report.csv: malformed row '" + line + "'");
        const auto mode = parse_learning_mode(cells[2]);
        const auto k = parse_integer<std::size_t>(cells[3]);
        const auto seed = parse_integer<std::uint64_t>(cells[4]);
        const auto test = parse_double(cells[5]);
        const auto val = parse_double(cells[6]);
        if (!mode || !k || !seed || !test || !val) throw FormatError("report.csv: malformed row '" + line + "'");
        records.push_back({*k, *mode, *seed, *test, *val});
    }
    return records;
}

std::string render_single_aug_csv(const RunReport& report) {
    std::ostringstream out;
    out << kSingleHeader << '\n';
    for (const SingleAugRecord& r : report.single_aug)
        out << to_string(r.kind) << ',' << r.seed << ',' << format_double(r.probe_accuracy) << ','
            << format_double(r.val_accuracy) << '\n';
    return out.str();
}

std::vector<SingleAugRecord> parse_single_aug_csv(const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kSingleHeader) throw FormatError(source + ": bad header");
    std::vector<SingleAugRecord> records;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = split_line(line);
        const auto bad = [&] { return FormatError(source + ":" + std::to_string(line_no) + ": malformed record"); };
        if (cells.size() != 4) throw bad();
        const auto kind = parse_kind(cells[0]);
        const auto seed = parse_integer<std::uint64_t>(cells[1]);
        const auto test = parse_double(cells[2]);
        const auto val = parse_double(cells[3]);
        if (!kind || !seed || !test || !val || *test < 0 || *test > 100) throw bad();
        records.push_back({*kind, *seed, *test, *val});
    }
    return records;
}

std::string render_negtransfer_csv(const RunReport& report) {
    std::ostringstream out;
    out << "mode,scope,seed,average_drop,event_count,events\n";
    for (const ModeNegativeTransfer& m : negative_transfer_report(report)) {
        const std::string mode(to_string(m.mode));
        if (m.of_means)
            out << mode << ",mean_curve,," << format_double(m.of_means->average_drop) << ','
                << m.of_means->drop_events.size() << ',' << events_text(*m.of_means) << '\n';
        for (const auto& [seed, stat] : m.per_seed)
            out << mode << ",seed," << seed << ',' << format_double(stat.average_drop) << ','
                << stat.drop_events.size() << ',' << events_text(stat) << '\n';
        out << mode << ",seed_mean,," << format_double(m.seeds.mean_of_averages) << ',' << m.seeds.event_count
            << ",\n";
        out << mode << ",seed_pooled,," << format_double(m.seeds.pooled) << ',' << m.seeds.event_count << ",\n";
    }
    return out.str();
}

std::string render_markdown(const RunReport& report) {
    std::ostringstream md;
    md << "# Results: " << to_string(report.dataset);
    if (!report.curriculum_id.empty()) md << ", curriculum " << report.curriculum_id;
    md << "\n\nSeeds:";
    for (std::uint64_t s : report.seeds) md << ' ' << s;
    md << "\n";

    bool flagged = false;
    if (!report.single_aug.empty()) {
        md << "\n## Single augmentation\n\n| Augmentation | Accuracy | Runs |\n|---|---|---|\n";
        for (AugmentationKind k : kinds_for(report.dataset)) {
            double total = 0.0;
            std::size_t n = 0;
            for (const SingleAugRecord& r : report.single_aug)
                if (r.kind == k) {
                    total += r.probe_accuracy;
                    ++n;
                }
            md << "| " << to_string(k) << " | ";
            if (n == 0) {
                md << kMissing;
                flagged = true;
            } else {
                md << fixed2(total / static_cast<double>(n));
            }
            md << " | " << n << " |\n";
        }
    }

    const std::vector<LearningMode> modes = expected_modes(report);
    if (!report.tasks.empty() && !modes.empty()) {
        md << "\n## CL vs MTL by task prefix\n\n| k | Task |";
        for (LearningMode m : modes) md << ' ' << to_string(m) << " |";
        md << "\n|---|---|";
        for (std::size_t i = 0; i < modes.size(); ++i) md << "---|";
        md << '\n';
        for (std::size_t k = 1; k <= report.tasks.size(); ++k) {
            std::vector<CellSummary> cells;
            std::optional<double> best;
            for (LearningMode m : modes) {
                cells.push_back(cell_summary(report, m, k));
                if (cells.back().mean && (!best || *cells.back().mean > *best)) best = cells.back().mean;
            }
            const bool contest = std::all_of(cells.begin(), cells.end(), [](const CellSummary& c) { return c.mean; }) &&
                                 cells.size() > 1;
            md << "| " << k << " | " << to_string(report.tasks[k - 1]) << " |";
            for (const CellSummary& c : cells) {
                md << ' ';
                if (!c.mean) {
                    md << kMissing;
                    flagged = true;
                } else {
                    const bool bold = contest && *c.mean == *best;
                    md << (bold ? "**" : "") << fixed2(*c.mean) << (bold ? "**" : "");
                    if (!c.complete) {
                        md << " †";
                        flagged = true;
                    }
                }
                md << " |";
            }
            md << '\n';
        }
    }

    const auto transfer = negative_transfer_report(report);
    if (!transfer.empty()) {
        md << "\n## Average negative transfer\n\n"
              "| Mode | Mean curve | Drops | Per-seed mean | Pooled over seeds | Per seed |\n"
              "|---|---|---|---|---|---|\n";
        for (const ModeNegativeTransfer& m : transfer) {
            md << "| " << to_string(m.mode) << " | ";
            if (m.of_means) {
                md << fixed2(m.of_means->average_drop) << " | " << m.of_means->drop_events.size();
            } else {
                md << kMissing << " | " << kMissing;
                flagged = true;
            }
            md << " | " << fixed2(m.seeds.mean_of_averages) << " | " << fixed2(m.seeds.pooled) << " | ";
            for (std::size_t i = 0; i < m.per_seed.size(); ++i)
                md << (i ? ", " : "") << m.per_seed[i].first << ": " << fixed2(m.per_seed[i].second.average_drop);
            if (m.per_seed.empty()) md << kMissing;
            md << " |\n";
        }
    }

    if (flagged) md << "\n" << kMissing << " no result; † not every seed reported.\n";
    if (!report.failures.empty()) {
        md << "\n## Failures\n\n";
        for (const std::string& f : report.failures) md << "- " << f << '\n';
    }
    return md.str();
}

void write_report(const std::filesystem::path& dir, const RunReport& report) {
    std::filesystem::create_directories(dir);
    write_text(dir / "report.csv", render_report_csv(report));
    write_text(dir / "report.md", render_markdown(report));
    write_text(dir / "negtransfer.csv", render_negtransfer_csv(report));
    write_text(dir / "single_aug.csv", render_single_aug_csv(report));
}

}  // namespace augcl
