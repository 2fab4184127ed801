#include <doctest.h>

#include <map>
#include <numeric>
#include <set>

#include "augcl/checkpoint.hpp"
#include "augcl/errors.hpp"
#include "augcl/train.hpp"
#include "test_support.hpp"

using namespace augcl;
using namespace augcl::testing;

namespace {

const DatasetPair* mnist_small() {
    static std::optional<DatasetPair> data;
    if (!data) {
        const auto dir = mnist_dir();
        if (dir.empty()) return nullptr;
        auto full = load_mnist(dir);
        data = DatasetPair{full.train.head(512), full.test.head(256)};
    }
    return &*data;
}

TrainConfig tiny_config() {
    TrainConfig c;
    c.dataset = DatasetName::mnist;
    c.arch = Arch::conv_s;
    c.d_proj = 16;
    c.batch_size = 64;
    c.epochs_per_task = 1;
    c.run_count = 1;
    c.curriculum = *builtin_curriculum("B1");
    c.probe.epochs = 2;
    return c;
}

#define REQUIRE_DATA(ptr)                               \
    const DatasetPair* ptr = mnist_small();             \
    if (!ptr) {                                         \
        MESSAGE("MNIST files not found; skipping");     \
        return;                                         \
    }

}  // namespace

TEST_CASE("built-in curricula") {
    using K = AugmentationKind;
    REQUIRE(builtin_curricula().size() == 10);
    CHECK(builtin_curriculum("A1")->tasks ==
          std::vector<K>{K::crop, K::flip, K::jitter, K::gaussian_noise, K::grayscale});
    CHECK(builtin_curriculum("A2")->tasks ==
          std::vector<K>{K::crop, K::jitter, K::grayscale, K::flip, K::gaussian_noise});
    CHECK(builtin_curriculum("A3")->tasks ==
          std::vector<K>{K::jitter, K::flip, K::gaussian_noise, K::crop, K::grayscale});
    CHECK(builtin_curriculum("A4")->tasks ==
          std::vector<K>{K::jitter, K::gaussian_noise, K::flip, K::grayscale, K::crop});
    CHECK(builtin_curriculum("A5")->tasks ==
          std::vector<K>{K::grayscale, K::gaussian_noise, K::jitter, K::flip, K::crop});
    CHECK(builtin_curriculum("B1")->tasks ==
          std::vector<K>{K::crop, K::perspective, K::affine, K::rotation, K::gaussian_noise});
    CHECK(builtin_curriculum("B2")->tasks ==
          std::vector<K>{K::gaussian_noise, K::rotation, K::affine, K::perspective, K::crop});
    CHECK(builtin_curriculum("B3")->tasks ==
          std::vector<K>{K::affine, K::perspective, K::rotation, K::crop, K::gaussian_noise});
    CHECK(builtin_curriculum("B4")->tasks ==
          std::vector<K>{K::affine, K::rotation, K::perspective, K::gaussian_noise, K::crop});
    CHECK(builtin_curriculum("B5")->tasks ==
          std::vector<K>{K::perspective, K::rotation, K::affine, K::gaussian_noise, K::crop});
    CHECK_FALSE(builtin_curriculum("C1").has_value());
    for (const auto& c : builtin_curricula()) {
        const auto ds = c.id[0] == 'A' ? DatasetName::cifar10 : DatasetName::mnist;
        CHECK(c.tasks.size() == 5);
        CHECK(std::set<K>(c.tasks.begin(), c.tasks.end()).size() == 5);
        for (auto k : c.tasks) CHECK(kind_valid_for(k, ds));
    }
}

TEST_CASE("config validation names fields") {
    auto c = tiny_config();
    CHECK_NOTHROW(c.validate());
    auto expect_field = [](TrainConfig bad, const std::string& field) {
        try {
            bad.validate();
            FAIL("no error for " << field);
        } catch (const ConfigError& e) {
            CHECK(e.field() == field);
        }
    };
    auto bad = c;
    bad.lr = -1;
    expect_field(bad, "lr");
    bad = c;
    bad.epochs_per_task = 0;
    expect_field(bad, "epochs_per_task");
    bad = c;
    bad.d_proj = 1;
    expect_field(bad, "d_proj");
    bad = c;
    bad.curriculum = *builtin_curriculum("A1");
    expect_field(bad, "curriculum");
    bad = c;
    bad.run_count = 0;
    expect_field(bad, "run_count");
}

TEST_CASE("first task has no distillation") {
    REQUIRE_DATA(data);
    const auto cfg = tiny_config();
    const auto td = make_training_data(*data, 3);
    auto model = build_encoder<float>(cfg.arch, cfg.d_proj, 3, InputGeometry{1, 28, 28});
    TrainingCursor cursor;
    const auto r = train_task_cl(model, nullptr, nullptr, AugmentationKind::crop, 1, cfg, td, cursor);
    const std::size_t per_epoch = td.split.train_indices.size() / cfg.batch_size;
    CHECK(r.steps == per_epoch);
    CHECK(r.losses.size() == r.steps);
    for (const auto& s : r.losses) {
        CHECK(s.loss.distill_a == 0.0);
        CHECK(s.loss.distill_b == 0.0);
        CHECK(s.loss.total == s.loss.ssl_term);
    }
    CHECK(cursor.global_step == r.steps);
    CHECK(cursor.epoch == 1);
    CHECK_THROWS_AS(train_task_cl(model, nullptr, nullptr, AugmentationKind::crop, 2, cfg, td, cursor), ContractError);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    REQUIRE_DATA(data);
    auto cfg = tiny_config();
    cfg.lr = 0.0;
    const auto td = make_training_data(*data, 4);
    auto model = build_encoder<float>(cfg.arch, cfg.d_proj, 4, InputGeometry{1, 28, 28});
    std::vector<std::vector<float>> before;
    for (const auto* p : model.parameters()) before.push_back(p->value.to_vector());
    TrainingCursor cursor;
    train_task_cl(model, nullptr, nullptr, AugmentationKind::gaussian_noise, 1, cfg, td, cursor);
    std::size_t i = 0;
    for (const auto* p : model.parameters()) CHECK(p->value.to_vector() == before[i++]);
}

TEST_CASE("optimization lowers the Barlow Twins loss") {
    REQUIRE_DATA(data);
    auto cfg = tiny_config();
    cfg.epochs_per_task = 3;
    const auto td = make_training_data(*data, 5);
    auto model = build_encoder<float>(cfg.arch, cfg.d_proj, 5, InputGeometry{1, 28, 28});
    TrainingCursor cursor;
    const auto r = train_task_cl(model, nullptr, nullptr, AugmentationKind::gaussian_noise, 1, cfg, td, cursor);
    const std::size_t per_epoch = r.steps / 3;
    double first = 0.0;
    for (std::size_t s = 0; s < per_epoch; ++s) first += r.losses[s].loss.ssl_term;
    first /= double(per_epoch);
    CHECK(r.losses.back().loss.ssl_term < first);
}

TEST_CASE("curriculum mechanics over three tasks") {
    REQUIRE_DATA(data);
    const auto cfg = tiny_config();
    const auto td = make_training_data(*data, 6);
    const auto dir = temp_dir("train_cl");
    RunOptions opts;
    opts.checkpoint_dir = dir;
    const auto tasks = run_curriculum_cl(cfg, td, opts, 3);
    REQUIRE(tasks.size() == 3);
    std::size_t cumulative = 0;
    for (std::size_t t = 0; t < 3; ++t) {
        CAPTURE(t);
        const auto& r = tasks[t];
        CHECK(r.task_index == t + 1);
        CHECK(r.optimizer_state_zero_at_start);
        REQUIRE(r.probe.has_value());
        CHECK(r.probe->test_accuracy >= 0.0);
        CHECK(r.probe->test_accuracy <= 100.0);
        std::set<AugmentationKind> kinds;
        for (const auto& k : r.kinds) kinds.insert(k.kind);
        CHECK(kinds == std::set<AugmentationKind>{cfg.curriculum.tasks[t]});
        CHECK(r.losses.front().step == cumulative);
        cumulative += r.steps;
        if (t == 0) {
            CHECK_FALSE(r.frozen_checksum_before.has_value());
        } else {
            REQUIRE(r.frozen_checksum_before.has_value());
            CHECK(*r.frozen_checksum_before == *r.frozen_checksum_after);
            // The snapshot is the previous task's final model.
            CHECK(*r.frozen_checksum_before == tasks[t - 1].model_checksum);
            CHECK(*r.frozen_checksum_before == load_checkpoint<float>(tasks[t - 1].checkpoint).checksum());
            for (const auto& s : r.losses) CHECK(s.loss.distill_a > 0.0);
        }
        CHECK(load_checkpoint<float>(r.checkpoint).checksum() == r.model_checksum);
    }
}

TEST_CASE("single-task curriculum equals one CL task and MTL with k = 1") {
    REQUIRE_DATA(data);
    auto cfg = tiny_config();
    const auto td = make_training_data(*data, 7);
    RunOptions no_probe;
    no_probe.probe = false;
    const auto cl = run_curriculum_cl(cfg, td, no_probe, 1);
    auto model = EncoderModel<float>(cfg.arch, InputGeometry{1, 28, 28}, cfg.d_proj, 7);
    TrainingCursor cursor;
    const auto alone = train_task_cl(model, nullptr, nullptr, cfg.curriculum.tasks[0], 1, cfg, td, cursor);
    CHECK(alone.model_checksum == cl[0].model_checksum);
    const auto mtl = run_joint_mtl(cfg, td, 1, no_probe);
    CHECK(mtl.model_checksum == cl[0].model_checksum);
    CHECK(mtl.steps == cl[0].steps);
    REQUIRE(mtl.losses.size() == cl[0].losses.size());
    for (std::size_t i = 0; i < mtl.losses.size(); ++i) CHECK(mtl.losses[i].loss.total == cl[0].losses[i].loss.total);
}

TEST_CASE("MTL budget parity and uniform task draws") {
    REQUIRE_DATA(data);
    auto cfg = tiny_config();
    const auto td = make_training_data(*data, 8);
    RunOptions no_probe;
    no_probe.probe = false;
    const auto cl = run_curriculum_cl(cfg, td, no_probe, 3);
    std::size_t cumulative = 0;
    for (std::size_t k = 1; k <= 3; ++k) {
        cumulative += cl[k - 1].steps;
        const auto m = run_joint_mtl(cfg, td, k, no_probe);
        CHECK(m.steps == cumulative);
        CHECK(m.losses.size() == cumulative);
        CHECK(m.optimizer_state_zero_at_start);
        for (const auto& kind : m.kinds) {
            CHECK(kind.task >= 1);
            CHECK(kind.task <= k);
            CHECK(kind.kind == cfg.curriculum.tasks[kind.task - 1]);
        }
    }
    CHECK_THROWS_AS(run_joint_mtl(cfg, td, 0, no_probe), ContractError);
    CHECK_THROWS_AS(run_joint_mtl(cfg, td, 6, no_probe), ContractError);
}

TEST_CASE("per-batch draws are uniform over a long run") {
    // Same sampler as the MTL loop: uniform over the prefix from the task-draw stream.
    Rng draws = make_rng(123, Stream::task_draw);
    std::uniform_int_distribution<std::size_t> pick(0, 4);
    std::array<std::size_t, 5> counts{};
    const std::size_t n = 100000;
    for (std::size_t i = 0; i < n; ++i) ++counts[pick(draws)];
    for (auto c : counts) CHECK(std::abs(double(c) / double(n) - 0.2) < 0.02);
}

TEST_CASE("per-sample MTL mixes tasks within a batch") {
    REQUIRE_DATA(data);
    auto cfg = tiny_config();
    cfg.mtl_sampling = MtlSampling::per_sample;
    const auto td = make_training_data(*data, 9);
    RunOptions no_probe;
    no_probe.probe = false;
    const auto m = run_joint_mtl(cfg, td, 3, no_probe);
    std::map<std::size_t, std::size_t> per_step;
    for (const auto& k : m.kinds) ++per_step[k.step];
    CHECK(per_step.size() == m.steps);
    for (const auto& [step, count] : per_step) CHECK(count == 3);
    for (const auto& s : m.losses) CHECK(s.task == 0);
}

TEST_CASE("training is bitwise reproducible") {
    REQUIRE_DATA(data);
    const auto cfg = tiny_config();
    RunOptions no_probe;
    no_probe.probe = false;
    const auto a = run_curriculum_cl(cfg, make_training_data(*data, 10), no_probe, 2);
    const auto b = run_curriculum_cl(cfg, make_training_data(*data, 10), no_probe, 2);
    for (std::size_t t = 0; t < 2; ++t) {
        CHECK(a[t].model_checksum == b[t].model_checksum);
        for (std::size_t i = 0; i < a[t].losses.size(); ++i) CHECK(a[t].losses[i].loss.total == b[t].losses[i].loss.total);
    }
}

TEST_CASE("persisted predictor keeps distillation running") {
    REQUIRE_DATA(data);
    auto cfg = tiny_config();
    cfg.persist_predictor = true;
    RunOptions no_probe;
    no_probe.probe = false;
    const auto a = run_curriculum_cl(cfg, make_training_data(*data, 11), no_probe, 3);
    cfg.persist_predictor = false;
    const auto b = run_curriculum_cl(cfg, make_training_data(*data, 11), no_probe, 3);
    CHECK(a[1].model_checksum == b[1].model_checksum);
    CHECK(a[2].model_checksum != b[2].model_checksum);
}

TEST_CASE("single augmentation rejects foreign kinds") {
    REQUIRE_DATA(data);
    const auto cfg = tiny_config();
    const auto td = make_training_data(*data, 12);
    CHECK_THROWS_AS(run_single_augmentation(cfg, td, AugmentationKind::jitter), ConfigError);
}

TEST_CASE("too small a split for one batch") {
    REQUIRE_DATA(data);
    auto cfg = tiny_config();
    cfg.batch_size = 1024;
    const auto td = make_training_data(*data, 13);
    CHECK_THROWS_AS(run_joint_mtl(cfg, td, 1), ContractError);
}

TEST_CASE("loss and kind logs") {
    const auto dir = temp_dir("train_logs");
    std::vector<StepLog> steps{{0, 1, LossBreakdown{1.5, 1.5, 0, 0, 0.005, 0.5}},
                               {1, 2, LossBreakdown{2.25, 1.25, 1.0, 1.0, 0.005, 0.5}}};
    write_loss_log(dir / "loss.csv", steps);
    CHECK(slurp(dir / "loss.csv") ==
          "step,task,ssl_term,distill_a,distill_b,total\n0,1,1.5,0,0,1.5\n1,2,1.25,1,1,2.25\n");
    std::vector<KindLog> kinds{{0, 1, AugmentationKind::crop}, {1, 2, AugmentationKind::gaussian_noise}};
    write_kind_log(dir / "kinds.csv", kinds);
    CHECK(slurp(dir / "kinds.csv") == "step,task,kind\n0,1,Crop\n1,2,GaussianNoise\n");
}

TEST_CASE("run_seeds writes per-seed logs") {
    REQUIRE_DATA(data);
    auto cfg = tiny_config();
    cfg.curriculum.tasks.resize(2);
    cfg.run_count = 2;
    const auto dir = temp_dir("train_seeds");
    ExperimentOptions opts;
    opts.out_dir = dir;
    const auto runs = run_seeds(cfg, *data, opts);
    REQUIRE(runs.size() == 2);
    for (const auto& run : runs) {
        CHECK_FALSE(run.failure.has_value());
        CHECK(run.records.size() == 4);
        const auto seed_dir = dir / "runs" / ("seed_" + std::to_string(run.seed));
        CHECK(std::filesystem::exists(seed_dir / "eval.csv"));
        CHECK(std::filesystem::exists(seed_dir / "cl" / "loss_log.csv"));
        CHECK(std::filesystem::exists(seed_dir / "cl" / "task_2.ckpt"));
        CHECK(std::filesystem::exists(seed_dir / "mtl_2" / "final.ckpt"));
        CHECK(read_eval_records(seed_dir / "eval.csv") == run.records);
    }
    CHECK(runs[0].seed == 0);
    CHECK(runs[1].seed == 1);

    opts.parallel_runs = 2;
    const auto dir2 = temp_dir("train_seeds_parallel");
    opts.out_dir = dir2;
    const auto par = run_seeds(cfg, *data, opts);
    for (std::size_t r = 0; r < 2; ++r) CHECK(par[r].records == runs[r].records);
}
