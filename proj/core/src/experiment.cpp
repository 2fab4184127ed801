#include "augcl/experiment.hpp"

#include <atomic>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "augcl/errors.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#ifndef AUGCL_VERSION
#define AUGCL_VERSION "unknown"
#endif

namespace augcl {

namespace {

std::string read_file(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw LogError(file.string(), "cannot read");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + file.string());
    out << text;
    if (!out.flush()) throw Error("failed writing " + file.string());
}

std::filesystem::path seed_dir(const std::filesystem::path& run_dir, std::uint64_t seed) {
    return run_dir / "runs" / ("seed_" + std::to_string(seed));
}

ExperimentOptions experiment_options(const ExperimentConfig& config, std::size_t parallel_runs) {
    ExperimentOptions o;
    o.run_cl = config.modes != RunModes::mtl;
    o.run_mtl = config.modes != RunModes::cl;
    o.val_fraction = config.val_fraction;
    o.parallel_runs = parallel_runs;
    o.out_dir = std::filesystem::path(config.output_dir);
    return o;
}

}  // namespace

std::string_view library_version() {
    return AUGCL_VERSION;
}

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

void prepare_run_dir(const ExperimentConfig& config) {
    const std::filesystem::path dir(config.output_dir);
    std::filesystem::create_directories(dir);
    const std::string snapshot = canonical_config(config);
    const std::filesystem::path file = dir / "config.json";
    if (std::filesystem::exists(file)) {
        std::string existing;
        try {
            existing = canonical_config(load_config(file));
        } catch (const ConfigError&) {
            throw ConfigError("output_dir", file.string() + " holds an unreadable config snapshot");
        }
        if (existing != snapshot)
            throw ConfigError("output_dir", dir.string() + " already holds a run with a different config");
    }
    write_file(file, snapshot);
    write_file(dir / "VERSION", std::string(library_version()) + "\n");
}

RunReport run_experiment(const ExperimentConfig& config, const DatasetPair& data, std::size_t parallel_runs) {
    config.train.validate();
    prepare_run_dir(config);
    const ExperimentOptions options = experiment_options(config, parallel_runs);
    for (std::size_t r = 0; r < config.train.run_count; ++r) {
        const auto dir = seed_dir(options.out_dir.value(), config.train.run_seed(r));
        std::filesystem::remove(dir / "FAILED");
    }
    const std::vector<SeedRun> runs = run_seeds(config.train, data, options);
    for (const SeedRun& run : runs)
        if (run.failure) write_file(seed_dir(*options.out_dir, run.seed) / "FAILED", *run.failure + "\n");
    return regenerate_report(*options.out_dir);
}

std::vector<SingleAugRecord> run_single_aug_experiment(const ExperimentConfig& config, const DatasetPair& data,
                                                       AugmentationKind kind, std::size_t parallel_runs) {
    config.train.validate();
    if (!kind_valid_for(kind, config.train.dataset))
        throw ConfigError("kind", std::string(to_string(kind)) + " is not an augmentation for " +
                                      std::string(to_string(config.train.dataset)));
    prepare_run_dir(config);
    const std::filesystem::path dir = std::filesystem::path(config.output_dir) / "single_aug";
    std::filesystem::create_directories(dir);
    FeatureCache shared_cache(std::filesystem::path(config.output_dir) / "features");

    std::vector<SingleAugRecord> fresh(config.train.run_count);
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&](FeatureCache& cache) {
        for (std::size_t r = next++; r < config.train.run_count; r = next++) {
            try {
                const std::uint64_t seed = config.train.run_seed(r);
                const TrainingData td = make_training_data(data, seed, config.val_fraction);
                RunOptions ro;
                ro.cache = &cache;
                ro.checkpoint_dir = dir / std::string(to_string(kind)) / ("seed_" + std::to_string(seed));
                const TaskResult t = run_single_augmentation(config.train, td, kind, ro);
                write_loss_log(*ro.checkpoint_dir / "loss_log.csv", t.losses);
                write_kind_log(*ro.checkpoint_dir / "kinds_log.csv", t.kinds);
                fresh[r] = {kind, seed, t.probe->test_accuracy, t.probe->val_accuracy};
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    const std::size_t workers = std::clamp<std::size_t>(parallel_runs, 1, config.train.run_count);
    if (workers == 1) {
        worker(shared_cache);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::unique_ptr<FeatureCache>> caches;
        for (std::size_t w = 0; w < workers; ++w) {
            caches.push_back(std::make_unique<FeatureCache>(std::filesystem::path(config.output_dir) / "features"));
            pool.emplace_back(worker, std::ref(*caches.back()));
        }
        for (std::thread& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);

    const std::filesystem::path log = dir / "records.csv";
    std::vector<SingleAugRecord> all;
    if (std::filesystem::exists(log)) {
        try {
            all = parse_single_aug_csv(read_file(log), log.string());
        } catch (const FormatError& e) {
            throw LogError(log.string(), e.what());
        }
    }
    for (const SingleAugRecord& rec : fresh) {
        std::erase_if(all, [&](const SingleAugRecord& r) { return r.kind == rec.kind && r.seed == rec.seed; });
        all.push_back(rec);
    }
    RunReport tmp;
    tmp.single_aug = all;
    sort_records(tmp);
    write_file(log, render_single_aug_csv(tmp));
    regenerate_report(config.output_dir);
    return fresh;
}

RunReport load_run_report(const std::filesystem::path& run_dir) {
    const std::filesystem::path cfg_file = run_dir / "config.json";
    if (!std::filesystem::exists(cfg_file)) throw LogError(cfg_file.string(), "config snapshot missing");
    ExperimentConfig config;
    try {
        config = load_config(cfg_file);
    } catch (const ConfigError& e) {
        throw LogError(cfg_file.string(), e.what());
    }
    RunReport report;
    report.dataset = config.train.dataset;
    report.curriculum_id = config.train.curriculum.id;
    report.tasks = config.train.curriculum.tasks;
    report.expect_cl = config.modes != RunModes::mtl;
    report.expect_mtl = config.modes != RunModes::cl;
    for (std::size_t r = 0; r < config.train.run_count; ++r) report.seeds.push_back(config.train.run_seed(r));

    for (std::uint64_t seed : report.seeds) {
        const std::filesystem::path dir = seed_dir(run_dir, seed);
        const std::filesystem::path eval = dir / "eval.csv";
        if (std::filesystem::exists(eval)) {
            std::vector<EvalRecord> recs;
            try {
                recs = read_eval_records(eval);
            } catch (const Error& e) {
                throw LogError(eval.string(), e.what());
            }
            for (const EvalRecord& rec : recs) {
                if (rec.seed != seed || rec.prefix_length > report.tasks.size())
                    throw LogError(eval.string(), "record does not belong to this run");
                report.records.push_back(rec);
            }
        }
        const std::filesystem::path failed = dir / "FAILED";
        if (std::filesystem::exists(failed)) {
            std::string msg = read_file(failed);
            while (!msg.empty() && (msg.back() == '\n' || msg.back() == '\r')) msg.pop_back();
            report.failures.push_back("seed " + std::to_string(seed) + ": " + msg);
        }
    }
    const std::filesystem::path single = run_dir / "single_aug" / "records.csv";
    if (std::filesystem::exists(single)) {
        try {
            report.single_aug = parse_single_aug_csv(read_file(single), single.string());
        } catch (const FormatError& e) {
            throw LogError(single.string(), e.what());
        }
    }
    sort_records(report);
    return report;
}

RunReport regenerate_report(const std::filesystem::path& run_dir) {
    RunReport report = load_run_report(run_dir);
    write_report(run_dir, report);
    return report;
}

}  // namespace augcl
