#include "augcl/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

#include "augcl/adam.hpp"
#include "augcl/checkpoint.hpp"
#include "augcl/errors.hpp"
#include "augcl/format.hpp"

namespace augcl {

namespace {

using K = AugmentationKind;

const std::vector<Curriculum>& curriculum_table() {
    static const std::vector<Curriculum> table = {
        {"A1", {K::crop, K::flip, K::jitter, K::gaussian_noise, K::grayscale}},
        {"A2", {K::crop, K::jitter, K::grayscale, K::flip, K::gaussian_noise}},
        {"A3", {K::jitter, K::flip, K::gaussian_noise, K::crop, K::grayscale}},
        {"A4", {K::jitter, K::gaussian_noise, K::flip, K::grayscale, K::crop}},
        {"A5", {K::grayscale, K::gaussian_noise, K::jitter, K::flip, K::crop}},
        {"B1", {K::crop, K::perspective, K::affine, K::rotation, K::gaussian_noise}},
        {"B2", {K::gaussian_noise, K::rotation, K::affine, K::perspective, K::crop}},
        {"B3", {K::affine, K::perspective, K::rotation, K::crop, K::gaussian_noise}},
        {"B4", {K::affine, K::rotation, K::perspective, K::gaussian_noise, K::crop}},
        {"B5", {K::perspective, K::rotation, K::affine, K::gaussian_noise, K::crop}},
    };
    return table;
}

bool optimizer_state_zero(std::span<Parameter<float>* const> params) {
    for (const Parameter<float>* p : params) {
        if (p->step_count != 0) return false;
        for (float v : p->adam_m)
            if (v != 0.0f) return false;
        for (float v : p->adam_v)
            if (v != 0.0f) return false;
    }
    return true;
}

void reset_optimizer(std::span<Parameter<float>* const> params) {
    for (Parameter<float>* p : params) {
        p->reset_optimizer_state();
        p->value.clear_grad();
    }
}

std::size_t checked_batches_per_epoch(const TrainConfig& config, const TrainingData& data) {
    if (!data.data) throw ContractError("training data not set");
    const std::size_t n = data.split.train_indices.size();
    if (n < config.batch_size)
        throw ContractError("train split has " + std::to_string(n) + " images, fewer than one batch of " +
                            std::to_string(config.batch_size));
    return n / config.batch_size;
}

InputGeometry geometry_of(const Dataset& d) {
    return {d.channels(), d.height(), d.width()};
}

struct StepOutcome {
    LossBreakdown loss;
};

// Forward, backward and one Adam step on a prepared view pair.
StepOutcome optimize_views(EncoderModel<float>& model, const FrozenEncoder<float>* frozen, Predictor<float>* g,
                           const ViewPair& views, const TrainConfig& config) {
    Tape<float> tape;
    const Var<float> va = tape.constant(views.view_a);
    const Var<float> vb = tape.constant(views.view_b);
    const Var<float> za = model.embed(tape, va, Mode::train);
    const Var<float> zb = model.embed(tape, vb, Mode::train);
    const auto lambda = static_cast<float>(config.lambda);
    LossResult<float> result;
    std::vector<Parameter<float>*> params = model.parameters();
    if (frozen) {
        const Var<float> fa = frozen->embed(tape, va);
        const Var<float> fb = frozen->embed(tape, vb);
        result = cassle_loss(za, zb, fa, fb, *g, lambda, static_cast<float>(config.gamma));
        const auto gp = g->parameters();
        params.insert(params.end(), gp.begin(), gp.end());
    } else {
        result = ssl_loss(za, zb, lambda);
    }
    tape.backward(result.total);
    adam_step<float>(params, AdamOptions{.lr = config.lr});
    return {result.breakdown};
}

void save_if(const RunOptions& options, const std::string& name, const EncoderModel<float>& model,
             std::uint32_t task, TaskResult& result) {
    if (!options.checkpoint_dir) return;
    std::filesystem::create_directories(*options.checkpoint_dir);
    result.checkpoint = *options.checkpoint_dir / name;
    save_checkpoint(result.checkpoint, model, task);
}

void probe_if(const RunOptions& options, const EncoderModel<float>& model, const TrainConfig& config,
              const TrainingData& data, TaskResult& result) {
    if (!options.probe) return;
    const FrozenEncoder<float> frozen(model);
    result.probe = evaluate_encoder(frozen, *data.data, data.split, config.probe, data.run_seed, options.cache);
}

}  // namespace

std::span<const Curriculum> builtin_curricula() {
    return curriculum_table();
}

std::optional<Curriculum> builtin_curriculum(std::string_view id) {
    for (const Curriculum& c : curriculum_table())
        if (c.id == id) return c;
    return std::nullopt;
}

std::string_view to_string(MtlSampling s) {
    return s == MtlSampling::per_batch ? "per-batch" : "per-sample";
}

std::optional<MtlSampling> parse_mtl_sampling(std::string_view text) {
    if (text == "per-batch") return MtlSampling::per_batch;
    if (text == "per-sample") return MtlSampling::per_sample;
    return std::nullopt;
}

void TrainConfig::validate() const {
    if (d_proj < 2) throw ConfigError("d_proj", "must be at least 2");
    if (batch_size < 2) throw ConfigError("batch_size", "must be at least 2");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr", "must be positive");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda", "must be non-negative");
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma", "must be non-negative");
    if (epochs_per_task < 1) throw ConfigError("epochs_per_task", "must be at least 1");
    if (run_count < 1) throw ConfigError("run_count", "must be at least 1");
    if (curriculum.tasks.empty()) throw ConfigError("curriculum", "must contain at least one task");
    for (AugmentationKind k : curriculum.tasks)
        if (!kind_valid_for(k, dataset))
            throw ConfigError("curriculum", std::string(to_string(k)) + " is not an augmentation for " +
                                                std::string(to_string(dataset)));
    if (!(probe.lr > 0.0)) throw ConfigError("probe.lr", "must be positive");
    if (probe.epochs < 1) throw ConfigError("probe.epochs", "must be at least 1");
    if (probe.batch_size < 1) throw ConfigError("probe.batch_size", "must be positive");
    augment.validate();
}

TrainingData make_training_data(const DatasetPair& data, std::uint64_t run_seed, double val_fraction) {
    TrainingData td;
    td.data = &data;
    td.run_seed = run_seed;
    td.split = make_split(data.train.size(), data.test.size(), derive_seed(run_seed, Stream::split), val_fraction);
    return td;
}

TaskResult train_task_cl(EncoderModel<float>& model, const FrozenEncoder<float>* frozen_prev, Predictor<float>* g,
                         AugmentationKind kind, std::size_t task_index, const TrainConfig& config,
                         const TrainingData& data, TrainingCursor& cursor) {
    if ((frozen_prev == nullptr) != (task_index == 1))
        throw ContractError("a previous model is required exactly for tasks after the first");
    if (frozen_prev && !g) throw ContractError("distillation needs a predictor");
    const std::size_t per_epoch = checked_batches_per_epoch(config, data);

    TaskResult result;
    result.task_index = task_index;
    auto params = model.parameters();
    if (g) {
        const auto gp = g->parameters();
        params.insert(params.end(), gp.begin(), gp.end());
    }
    result.optimizer_state_zero_at_start = optimizer_state_zero(params);
    if (frozen_prev) result.frozen_checksum_before = frozen_prev->checksum();

    BatchIterator batches(data.split.train_indices, config.batch_size, true, derive_seed(data.run_seed, Stream::batches),
                          cursor.epoch);
    result.steps = config.epochs_per_task * per_epoch;
    result.losses.reserve(result.steps);
    result.kinds.reserve(result.steps);
    for (std::size_t s = 0; s < result.steps; ++s) {
        const Tensor<float> batch = batches.next_batch(data.data->train);
        const ViewPair views =
            make_view_pair(kind, config.augment, batch, derive_seed(data.run_seed, Stream::augment, cursor.global_step));
        const StepOutcome out = optimize_views(model, frozen_prev, g, views, config);
        result.losses.push_back({cursor.global_step, task_index, out.loss});
        result.kinds.push_back({cursor.global_step, task_index, kind});
        ++cursor.global_step;
    }
    cursor.epoch += config.epochs_per_task;

    if (frozen_prev) result.frozen_checksum_after = frozen_prev->checksum();
    result.model_checksum = model.checksum();
    return result;
}

std::vector<TaskResult> run_curriculum_cl(const TrainConfig& config, const TrainingData& data,
                                          const RunOptions& options, std::size_t task_limit) {
    const std::size_t T = task_limit == 0 ? config.curriculum.tasks.size()
                                          : std::min(task_limit, config.curriculum.tasks.size());
    EncoderModel<float> model(config.arch, geometry_of(data.data->train), config.d_proj, data.run_seed);
    std::optional<FrozenEncoder<float>> frozen;
    std::optional<Predictor<float>> g;
    TrainingCursor cursor;
    std::vector<TaskResult> results;
    for (std::size_t t = 1; t <= T; ++t) {
        if (t > 1) {
            frozen.emplace(model);
            if (!g || !config.persist_predictor) g.emplace(config.d_proj, derive_seed(data.run_seed, t));
            auto params = model.parameters();
            const auto gp = g->parameters();
            params.insert(params.end(), gp.begin(), gp.end());
            reset_optimizer(params);
        }
        TaskResult r = train_task_cl(model, frozen ? &*frozen : nullptr, g ? &*g : nullptr,
                                     config.curriculum.tasks[t - 1], t, config, data, cursor);
        save_if(options, "task_" + std::to_string(t) + ".ckpt", model, static_cast<std::uint32_t>(t), r);
        probe_if(options, model, config, data, r);
        results.push_back(std::move(r));
    }
    return results;
}

TaskResult run_joint_mtl(const TrainConfig& config, const TrainingData& data, std::size_t k,
                         const RunOptions& options) {
    if (k < 1 || k > config.curriculum.tasks.size())
        throw ContractError("MTL prefix length must lie in [1, " + std::to_string(config.curriculum.tasks.size()) + "]");
    const std::size_t per_epoch = checked_batches_per_epoch(config, data);
    EncoderModel<float> model(config.arch, geometry_of(data.data->train), config.d_proj, data.run_seed);

    TaskResult result;
    result.task_index = k;
    result.optimizer_state_zero_at_start = optimizer_state_zero(model.parameters());
    const std::span<const AugmentationKind> prefix(config.curriculum.tasks.data(), k);
    BatchIterator batches(data.split.train_indices, config.batch_size, true, derive_seed(data.run_seed, Stream::batches));
    Rng draws = make_rng(data.run_seed, Stream::task_draw);
    std::uniform_int_distribution<std::size_t> pick(0, k - 1);
    result.steps = k * config.epochs_per_task * per_epoch;
    result.losses.reserve(result.steps);
    std::vector<AugmentationKind> per_image(config.batch_size);
    for (std::size_t step = 0; step < result.steps; ++step) {
        const Tensor<float> batch = batches.next_batch(data.data->train);
        const std::uint64_t aug_seed = derive_seed(data.run_seed, Stream::augment, step);
        ViewPair views;
        std::size_t task = 0;
        if (config.mtl_sampling == MtlSampling::per_batch) {
            const std::size_t t = pick(draws);
            task = t + 1;
            views = make_view_pair(prefix[t], config.augment, batch, aug_seed);
            result.kinds.push_back({step, task, prefix[t]});
        } else {
            std::vector<bool> seen(k, false);
            for (AugmentationKind& kind : per_image) {
                const std::size_t t = pick(draws);
                kind = prefix[t];
                seen[t] = true;
            }
            views = make_view_pair(per_image, config.augment, batch, aug_seed);
            for (std::size_t t = 0; t < k; ++t)
                if (seen[t]) result.kinds.push_back({step, t + 1, prefix[t]});
        }
        const StepOutcome out = optimize_views(model, nullptr, nullptr, views, config);
        result.losses.push_back({step, task, out.loss});
    }
    result.model_checksum = model.checksum();
    save_if(options, "final.ckpt", model, static_cast<std::uint32_t>(k), result);
    probe_if(options, model, config, data, result);
    return result;
}

TaskResult run_single_augmentation(const TrainConfig& config, const TrainingData& data, AugmentationKind kind,
                                   const RunOptions& options) {
    if (!kind_valid_for(kind, config.dataset))
        throw ConfigError("kind", std::string(to_string(kind)) + " is not an augmentation for " +
                                      std::string(to_string(config.dataset)));
    EncoderModel<float> model(config.arch, geometry_of(data.data->train), config.d_proj, data.run_seed);
    TrainingCursor cursor;
    TaskResult r = train_task_cl(model, nullptr, nullptr, kind, 1, config, data, cursor);
    save_if(options, "final.ckpt", model, 1, r);
    probe_if(options, model, config, data, r);
    return r;
}

// ---- logs -------------------------------------------------------------------------

void write_loss_log(const std::filesystem::path& file, std::span<const StepLog> steps) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw Error("cannot write " + file.string());
    out << "step,task,ssl_term,distill_a,distill_b,total\n";
    for (const StepLog& s : steps)
        out << s.step << ',' << s.task << ',' << format_double(s.loss.ssl_term) << ','
            << format_double(s.loss.distill_a) << ',' << format_double(s.loss.distill_b) << ','
            << format_double(s.loss.total) << '\n';
    if (!out.flush()) throw Error("failed writing " + file.string());
}

void write_kind_log(const std::filesystem::path& file, std::span<const KindLog> kinds) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw Error("cannot write " + file.string());
    out << "step,task,kind\n";
    for (const KindLog& k : kinds) out << k.step << ',' << k.task << ',' << to_string(k.kind) << '\n';
    if (!out.flush()) throw Error("failed writing " + file.string());
}

// ---- seeds ------------------------------------------------------------------------

namespace {

void write_task_logs(const std::filesystem::path& dir, std::span<const TaskResult> tasks) {
    std::filesystem::create_directories(dir);
    std::vector<StepLog> steps;
    std::vector<KindLog> kinds;
    for (const TaskResult& t : tasks) {
        steps.insert(steps.end(), t.losses.begin(), t.losses.end());
        kinds.insert(kinds.end(), t.kinds.begin(), t.kinds.end());
    }
    write_loss_log(dir / "loss_log.csv", steps);
    write_kind_log(dir / "kinds_log.csv", kinds);
}

SeedRun run_one_seed(const TrainConfig& config, const DatasetPair& data, const ExperimentOptions& options,
                     std::uint64_t seed, FeatureCache* cache) {
    SeedRun run;
    run.seed = seed;
    const TrainingData td = make_training_data(data, seed, options.val_fraction);
    std::optional<std::filesystem::path> seed_dir;
    if (options.out_dir) {
        seed_dir = *options.out_dir / "runs" / ("seed_" + std::to_string(seed));
        std::filesystem::create_directories(*seed_dir);
    }
    auto flush_records = [&] {
        if (seed_dir) write_eval_records(*seed_dir / "eval.csv", run.records);
    };
    try {
        if (options.run_cl) {
            RunOptions ro;
            ro.cache = cache;
            if (seed_dir) ro.checkpoint_dir = *seed_dir / "cl";
            run.cl = run_curriculum_cl(config, td, ro);
            for (const TaskResult& t : run.cl)
                run.records.push_back({t.task_index, LearningMode::cl, seed, t.probe->test_accuracy, t.probe->val_accuracy});
            if (seed_dir) write_task_logs(*seed_dir / "cl", run.cl);
            flush_records();
        }
        if (options.run_mtl) {
            for (std::size_t k = 1; k <= config.curriculum.tasks.size(); ++k) {
                RunOptions ro;
                ro.cache = cache;
                if (seed_dir) ro.checkpoint_dir = *seed_dir / ("mtl_" + std::to_string(k));
                TaskResult t = run_joint_mtl(config, td, k, ro);
                run.records.push_back({k, LearningMode::mtl, seed, t.probe->test_accuracy, t.probe->val_accuracy});
                if (seed_dir) write_task_logs(*ro.checkpoint_dir, std::span<const TaskResult>(&t, 1));
                run.mtl.push_back(std::move(t));
                flush_records();
            }
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        run.failure = e.what();
        flush_records();
    }
    return run;
}

}  // namespace

std::vector<SeedRun> run_seeds(const TrainConfig& config, const DatasetPair& data, const ExperimentOptions& options) {
    config.validate();
    std::optional<FeatureCache> cache;
    if (options.out_dir) cache.emplace(*options.out_dir / "features");
    FeatureCache* cache_ptr = cache ? &*cache : nullptr;

    std::vector<SeedRun> runs(config.run_count);
    const std::size_t workers = std::clamp<std::size_t>(options.parallel_runs, 1, config.run_count);
    if (workers == 1) {
        for (std::size_t r = 0; r < config.run_count; ++r)
            runs[r] = run_one_seed(config, data, options, config.run_seed(r), cache_ptr);
        return runs;
    }
    // Workers share nothing mutable except their own output slot.
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            std::optional<FeatureCache> local;
            if (options.out_dir) local.emplace(*options.out_dir / "features");
            for (std::size_t r = next++; r < config.run_count; r = next++) {
                try {
                    runs[r] = run_one_seed(config, data, options, config.run_seed(r), local ? &*local : nullptr);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);
    return runs;
}

}  // namespace augcl
