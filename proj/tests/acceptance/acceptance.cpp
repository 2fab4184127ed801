// Acceptance run: one PASS/FAIL line per criterion.

#include <CLI11.hpp>

#include <array>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <set>

#include "augcl/checkpoint.hpp"
#include "augcl/config.hpp"
#include "augcl/errors.hpp"
#include "augcl/experiment.hpp"
#include "augcl/loss.hpp"
#include "test_support.hpp"

using namespace augcl;
using namespace augcl::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path g_work;
std::optional<DatasetPair> g_mnist;

const DatasetPair& mnist() {
    if (!g_mnist) {
        const auto dir = mnist_dir();
        if (dir.empty()) throw DataMissingError("MNIST not found; set AUGCL_DATA_DIR");
        g_mnist = load_mnist(dir);
    }
    return *g_mnist;
}

// Two-pass standardization and a triple loop, kept apart from the library.
Tensor<double> brute_correlation(const Tensor<double>& a, const Tensor<double>& b, double eps) {
    const std::size_t n = a.dim(0), d = a.dim(1);
    auto standardize = [&](const Tensor<double>& z) {
        Tensor<double> out(z.shape());
        for (std::size_t j = 0; j < d; ++j) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += z.at({i, j});
            mean /= double(n);
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i) var += (z.at({i, j}) - mean) * (z.at({i, j}) - mean);
            var /= double(n);
            for (std::size_t i = 0; i < n; ++i) out.at({i, j}) = (z.at({i, j}) - mean) / (std::sqrt(var) + eps);
        }
        return out;
    };
    const auto sa = standardize(a), sb = standardize(b);
    Tensor<double> c({d, d});
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (std::size_t r = 0; r < n; ++r) acc += sa.at({r, i}) * sb.at({r, j});
            c.at({i, j}) = acc / double(n);
        }
    return c;
}

// Central differences with respect to every predictor parameter entry.
double predictor_grad_error(Predictor<double>& g, const std::vector<Tensor<double>>& z) {
    auto loss = [&](Tape<double>& t) {
        return cassle_loss(t.constant(z[0]), t.constant(z[1]), t.constant(z[2]), t.constant(z[3]), g, 0.005, 0.5).total;
    };
    for (auto* p : g.parameters()) p->value.clear_grad();
    {
        Tape<double> tape;
        tape.backward(loss(tape));
    }
    double worst = 0.0;
    const double h = 1e-4;
    for (auto* p : g.parameters()) {
        const std::vector<double> analytic(p->value.grad().begin(), p->value.grad().end());
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            const double orig = p->value[i];
            Tape<double> t(GradMode::disabled);
            p->value[i] = orig + h;
            const double up = loss(t).value().item();
            p->value[i] = orig - h;
            const double down = loss(t).value().item();
            p->value[i] = orig;
            const double numeric = (up - down) / (2 * h);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
            worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
        }
    }
    return worst;
}

Outcome gradient_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::string worst_name;
    std::size_t entries = 0;
    auto take = [&](const std::string& name, const GradCheck& r) {
        entries += r.checked;
        if (r.max_rel_error >= worst) {
            worst = r.max_rel_error;
            worst_name = name;
        }
    };
    for (const NamedCheck& c : primitive_checks()) take(c.name, gradient_check(c.inputs, c.fn));

    take("barlow_twins_loss", gradient_check({random_tensor({8, 4}, 501), random_tensor({8, 4}, 502)},
                                             [](Tape<double>&, const auto& v) { return barlow_twins_loss(v[0], v[1], 0.005); }));
    Predictor<double> g(4, 503);
    const auto ya = random_tensor({8, 4}, 504), yb = random_tensor({8, 4}, 505);
    take("cassle_loss", gradient_check({random_tensor({8, 4}, 506), random_tensor({8, 4}, 507)},
                                       [&](Tape<double>& t, const auto& v) {
                                           return cassle_loss(v[0], v[1], t.constant(ya), t.constant(yb), g, 0.005, 0.5)
                                               .total;
                                       }));
    const double pred = predictor_grad_error(
        g, {random_tensor({8, 4}, 508), random_tensor({8, 4}, 509), random_tensor({8, 4}, 510), random_tensor({8, 4}, 511)});
    if (pred >= worst) {
        worst = pred;
        worst_name = "cassle_loss (predictor)";
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-5 && secs < 60.0, std::to_string(entries) + " entries, max rel error " + fmt("%.2e", worst) +
                                             " (" + worst_name + "), " + fmt("%.2f", secs) + " s"};
}

Outcome correlation_oracle() {
    double worst = 0.0;
    for (std::uint64_t k = 0; k < 100; ++k) {
        const auto a = random_tensor({8, 4}, 1000 + 2 * k);
        const auto b = random_tensor({8, 4}, 1001 + 2 * k);
        const auto fast = cross_correlation(a, b).values;
        const auto slow = brute_correlation(a, b, kStandardizeEps);
        for (std::size_t i = 0; i < fast.numel(); ++i) worst = std::max(worst, std::abs(fast[i] - slow[i]));
    }
    // C = I exactly: orthogonal +-1 columns with eps = 0.
    const auto ortho = Tensor<double>::matrix({{1, 1, 1}, {1, -1, 1}, {-1, 1, 1}, {-1, -1, 1}, {1, 1, -1}, {1, -1, -1},
                                               {-1, 1, -1}, {-1, -1, -1}});
    const auto C = cross_correlation(ortho, ortho, 0.0).values;
    bool identity = true;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) identity = identity && C.at({i, j}) == (i == j ? 1.0 : 0.0);
    Tape<double> tape(GradMode::disabled);
    const double at_identity = barlow_objective(tape.constant(C), 0.005).value().item();
    // Any departure from I gives a positive loss.
    auto bent = C;
    bent.at({0, 1}) = 1e-3;
    const double off_identity = barlow_objective(tape.constant(bent), 0.005).value().item();
    auto shrunk = C;
    shrunk.at({2, 2}) = 0.999;
    const double shrunk_loss = barlow_objective(tape.constant(shrunk), 0.005).value().item();
    const double random_pair = barlow_twins_loss(random_tensor({8, 3}, 5), random_tensor({8, 3}, 6), 0.005);
    const bool pass = worst < 1e-12 && identity && at_identity == 0.0 && off_identity > 0.0 && shrunk_loss > 0.0 &&
                      random_pair > 0.0;
    return {pass, "100 instances, max |diff| " + fmt("%.2e", worst) + "; L(I) = " + fmt("%g", at_identity) +
                      ", L(I + 1e-3 e01) = " + fmt("%.3g", off_identity)};
}

Outcome composition() {
    double worst = 0.0;
    bool gamma_zero_exact = true;
    bool frozen_clean = true;
    for (std::uint64_t k = 0; k < 20; ++k) {
        const auto za = random_tensor({8, 4}, 2000 + 4 * k), zb = random_tensor({8, 4}, 2001 + 4 * k);
        const auto ya = random_tensor({8, 4}, 2002 + 4 * k), yb = random_tensor({8, 4}, 2003 + 4 * k);
        Predictor<double> g(4, 3000 + k);
        Predictor<double> g_ref = g;
        const double gamma = 0.5;

        Tape<double> tape;
        auto va = tape.leaf(za), vb = tape.leaf(zb), fa = tape.leaf(ya), fb = tape.leaf(yb);
        auto res = cassle_loss(va, vb, fa, fb, g, 0.005, gamma);
        tape.backward(res.total);
        frozen_clean = frozen_clean && !tape.has_grad(fa) && !tape.has_grad(fb) && tape.has_grad(va);

        Tape<double> ref;
        const auto pa = g_ref(ref, ref.constant(za), Mode::train).value();
        const auto pb = g_ref(ref, ref.constant(zb), Mode::train).value();
        const double expect = barlow_twins_loss(za, zb, 0.005) +
                              gamma * (barlow_twins_loss(ya, pa, 0.005) + barlow_twins_loss(yb, pb, 0.005));
        worst = std::max(worst, std::abs(res.total.value().item() - expect));

        Tape<double> t0;
        auto zero = cassle_loss(t0.leaf(za), t0.leaf(zb), t0.constant(ya), t0.constant(yb), g, 0.005, 0.0);
        gamma_zero_exact = gamma_zero_exact && zero.total.value().item() == barlow_twins_loss(za, zb, 0.005);
    }
    return {worst < 1e-12 && gamma_zero_exact && frozen_clean,
            "20 instances, max |diff| " + fmt("%.2e", worst) + "; gamma = 0 exact: " +
                (gamma_zero_exact ? "yes" : "no") + "; frozen inputs gradient-free: " + (frozen_clean ? "yes" : "no")};
}

Outcome cl_mechanics() {
    TrainConfig cfg;
    cfg.dataset = DatasetName::mnist;
    cfg.arch = Arch::conv_s;
    cfg.d_proj = 128;
    cfg.epochs_per_task = 1;
    cfg.curriculum = *builtin_curriculum("B1");
    const DatasetPair data{mnist().train.head(1000), mnist().test.head(500)};
    const auto td = make_training_data(data, 0);
    RunOptions opts;
    opts.probe = false;
    opts.checkpoint_dir = g_work / "mechanics";
    const auto cl = run_curriculum_cl(cfg, td, opts, 3);

    bool frozen_ok = true, kinds_ok = true, parity_ok = true;
    std::size_t cumulative = 0;
    std::string steps;
    for (std::size_t t = 0; t < 3; ++t) {
        std::set<AugmentationKind> kinds;
        for (const auto& k : cl[t].kinds) kinds.insert(k.kind);
        kinds_ok = kinds_ok && kinds == std::set<AugmentationKind>{cfg.curriculum.tasks[t]};
        if (t > 0)
            frozen_ok = frozen_ok && cl[t].frozen_checksum_before && cl[t].frozen_checksum_after &&
                        *cl[t].frozen_checksum_before == *cl[t].frozen_checksum_after &&
                        *cl[t].frozen_checksum_before == cl[t - 1].model_checksum;
        cumulative += cl[t].steps;
        const auto mtl = run_joint_mtl(cfg, td, t + 1, opts);
        parity_ok = parity_ok && mtl.steps == cumulative && mtl.losses.size() == cumulative;
        steps += (t ? ", " : "") + std::to_string(mtl.steps) + "/" + std::to_string(cumulative);
    }
    return {frozen_ok && kinds_ok && parity_ok, std::string("frozen checksums invariant: ") +
                                                    (frozen_ok ? "yes" : "no") + "; one kind per task: " +
                                                    (kinds_ok ? "yes" : "no") + "; MTL/CL steps " + steps};
}

Outcome negative_transfer_arithmetic() {
    const std::vector<double> seq{53.60, 50.52, 53.96, 59.57, 50.55};
    const auto s = negative_transfer(seq);
    const bool main_ok = std::abs(s.average_drop - (-6.05)) < 1e-9 && s.drop_events.size() == 2;
    const std::vector<double> flat{50, 50, 50}, rising{1, 2, 3}, single_drop{5, 3};
    const bool trivial = negative_transfer(flat).average_drop == 0.0 && negative_transfer(rising).average_drop == 0.0 &&
                         negative_transfer(flat).drop_events.empty() &&
                         std::abs(negative_transfer(single_drop).average_drop - (-2.0)) < 1e-12;
    return {main_ok && trivial, "average drop " + fmt("%.12f", s.average_drop) + " over " +
                                    std::to_string(s.drop_events.size()) + " drops; trivial sequences " +
                                    (trivial ? "ok" : "wrong")};
}

ExperimentConfig desk_config(const std::string& name) {
    ExperimentConfig c = default_config(DatasetName::mnist);
    c.train.arch = Arch::conv_s;
    c.train.d_proj = 128;
    c.train.epochs_per_task = 5;
    c.train.run_count = 3;
    c.train_subset = 5000;
    c.test_subset = 1000;
    c.output_dir = (g_work / name).string();
    return c;
}

DatasetPair subset(const ExperimentConfig& c) {
    return {mnist().train.head(c.train_subset), mnist().test.head(c.test_subset)};
}

Outcome single_aug_ordering() {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig c = desk_config("desk_single_aug");
    fs::remove_all(c.output_dir);
    const DatasetPair data = subset(c);
    auto mean_of = [&](AugmentationKind kind, std::string& per_seed) {
        const auto recs = run_single_aug_experiment(c, data, kind);
        double total = 0.0;
        for (const auto& r : recs) {
            total += r.probe_accuracy;
            per_seed += (per_seed.empty() ? "" : " ") + fmt("%.2f", r.probe_accuracy);
        }
        return total / double(recs.size());
    };
    std::string crop_seeds, noise_seeds;
    const double crop = mean_of(AugmentationKind::crop, crop_seeds);
    const double noise = mean_of(AugmentationKind::gaussian_noise, noise_seeds);
    return {crop > noise && crop > 70.0 && noise > 70.0,
            "Crop " + fmt("%.2f", crop) + " [" + crop_seeds + "] vs GaussianNoise " + fmt("%.2f", noise) + " [" +
                noise_seeds + "], " + fmt("%.0f", seconds_since(t0)) + " s"};
}

Outcome cl_vs_mtl_trend() {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig c = desk_config("desk_b1");
    c.train.curriculum = *builtin_curriculum("B1");
    fs::remove_all(c.output_dir);
    const RunReport report = run_experiment(c, subset(c));
    if (!report.failures.empty()) return {false, "failed seeds: " + report.failures.front()};
    std::optional<double> cl, mtl;
    std::string detail;
    for (const auto& m : negative_transfer_report(report)) {
        if (!m.of_means) return {false, std::string(to_string(m.mode)) + " curve incomplete"};
        (m.mode == LearningMode::cl ? cl : mtl) = m.of_means->average_drop;
        detail += std::string(to_string(m.mode)) + " " + fmt("%.3f", m.of_means->average_drop) + " (seeds";
        for (const auto& [seed, stat] : m.per_seed) detail += " " + std::to_string(seed) + ":" + fmt("%.3f", stat.average_drop);
        detail += ", seed mean " + fmt("%.3f", m.seeds.mean_of_averages) + "); ";
    }
    if (!cl || !mtl) return {false, "missing mode"};
    std::cout << "  " << (fs::path(c.output_dir) / "report.md").string() << '\n';
    return {std::abs(*cl) <= std::abs(*mtl) + 0.5, detail + fmt("%.0f", seconds_since(t0)) + " s"};
}

Outcome reproducibility() {
    ExperimentConfig c = desk_config("repro_a");
    c.train.d_proj = 32;
    c.train.epochs_per_task = 1;
    c.train.run_count = 2;
    c.train.curriculum = {"custom", {AugmentationKind::gaussian_noise, AugmentationKind::crop}};
    c.train.probe.epochs = 3;
    c.train_subset = 1000;
    c.test_subset = 500;
    const DatasetPair data = subset(c);
    ExperimentConfig b = c;
    b.output_dir = (g_work / "repro_b").string();
    fs::remove_all(c.output_dir);
    fs::remove_all(b.output_dir);
    run_experiment(c, data);
    const std::string first = slurp(fs::path(c.output_dir) / "report.csv");
    run_experiment(c, data);
    const std::string again = slurp(fs::path(c.output_dir) / "report.csv");
    run_experiment(b, data);
    const std::string other = slurp(fs::path(b.output_dir) / "report.csv");
    const bool csv_ok = first == again && first == other && std::count(first.begin(), first.end(), '\n') == 9;

    bool ckpt_ok = true;
    std::size_t checked = 0;
    for (const auto& entry : fs::recursive_directory_iterator(c.output_dir)) {
        if (entry.path().extension() != ".ckpt") continue;
        CheckpointHeader h;
        const auto model = load_checkpoint<float>(entry.path(), &h);
        const fs::path copy = g_work / "resaved.ckpt";
        save_checkpoint(copy, model, h.task_index);
        ckpt_ok = ckpt_ok && slurp(copy) == slurp(entry.path()) && load_checkpoint<float>(copy).checksum() == model.checksum();
        ++checked;
    }
    ckpt_ok = ckpt_ok && checked > 0;
    return {csv_ok && ckpt_ok, std::string("report.csv identical across 3 runs: ") + (csv_ok ? "yes" : "no") + "; " +
                                   std::to_string(checked) + " checkpoints round-tripped bitwise: " +
                                   (ckpt_ok ? "yes" : "no")};
}

std::string be32(std::uint32_t v) {
    return {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
}

std::string cifar_records(int variant, std::size_t count, std::size_t classes, std::uint64_t seed) {
    std::string s;
    s.reserve(count * (variant == 100 ? 3074 : 3073));
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        if (variant == 100) s.push_back(char((i % classes) / 5));
        s.push_back(char(i % classes));
        for (int p = 0; p < 3072; ++p) s.push_back(char(rng() & 0xff));
    }
    return s;
}

template <typename E, typename F>
bool throws_as(F&& f) {
    try {
        f();
    } catch (const E&) {
        return true;
    } catch (...) {
        return false;
    }
    return false;
}

Outcome data_parsers() {
    std::vector<std::string> problems;
    auto expect = [&](bool ok, const std::string& what) {
        if (!ok) problems.push_back(what);
    };

    const auto& m = mnist();
    expect(m.train.images.shape() == Shape{5000, 1, 28, 28}, "MNIST train shape");
    expect(m.test.images.shape() == Shape{5000, 1, 28, 28}, "MNIST test shape");
    std::array<int, 10> hist{};
    for (int l : m.train.labels) {
        expect(l >= 0 && l < 10, "MNIST label range");
        if (l >= 0 && l < 10) ++hist[std::size_t(l)];
    }
    for (int h : hist) expect(h == 500, "MNIST train histogram");
    std::array<int, 10> test_hist{};
    for (int l : m.test.labels) ++test_hist[std::size_t(std::clamp(l, 0, 9))];
    expect(test_hist == std::array<int, 10>{501, 627, 491, 532, 480, 363, 514, 570, 444, 478}, "MNIST test histogram");
    const auto [lo, hi] = std::minmax_element(m.train.images.storage().begin(), m.train.images.storage().end());
    expect(*lo >= 0.0f && *hi <= 1.0f, "MNIST pixel range");

    const fs::path bad = g_work / "bad_files";
    fs::remove_all(bad);
    fs::create_directories(bad);
    std::string idx = be32(0x803) + be32(2) + be32(28) + be32(28) + std::string(2 * 784, '\x10');
    spit(bad / "truncated", idx.substr(0, idx.size() - 3));
    expect(throws_as<LengthError>([&] { read_idx_images(bad / "truncated"); }), "IDX truncation");
    auto magic = idx;
    magic[2] = 0x09;
    spit(bad / "magic", magic);
    expect(throws_as<FormatError>([&] { read_idx_images(bad / "magic"); }), "IDX magic");
    expect(throws_as<DataMissingError>([&] { read_idx_images(bad / "absent"); }), "IDX missing");
    spit(bad / "empty", "");
    expect(throws_as<LengthError>([&] { read_idx_labels(bad / "empty"); }), "IDX empty");

    const fs::path c10 = g_work / "cifar10";
    fs::remove_all(c10);
    fs::create_directories(c10);
    for (int b = 1; b <= 5; ++b)
        spit(c10 / ("data_batch_" + std::to_string(b) + ".bin"), cifar_records(10, 10000, 10, 40 + std::uint64_t(b)));
    spit(c10 / "test_batch.bin", cifar_records(10, 10000, 10, 46));
    {
        const auto d = load_cifar(c10, 10);
        expect(d.train.images.shape() == Shape{50000, 3, 32, 32}, "CIFAR-10 train shape");
        expect(d.test.images.shape() == Shape{10000, 3, 32, 32}, "CIFAR-10 test shape");
        std::array<int, 10> ch{};
        for (int l : d.train.labels) {
            expect(l >= 0 && l < 10, "CIFAR-10 label range");
            ++ch[std::size_t(std::clamp(l, 0, 9))];
        }
        for (int h : ch) expect(h == 5000, "CIFAR-10 histogram");
    }
    auto broken = cifar_records(10, 3, 10, 1);
    spit(c10 / "data_batch_5.bin", broken.substr(0, broken.size() - 100));
    expect(throws_as<FormatError>([&] { load_cifar(c10, 10); }), "CIFAR partial record");
    broken[0] = char(10);
    spit(c10 / "data_batch_5.bin", broken);
    expect(throws_as<FormatError>([&] { load_cifar(c10, 10); }), "CIFAR label range");
    fs::remove(c10 / "data_batch_5.bin");
    expect(throws_as<DataMissingError>([&] { load_cifar(c10, 10); }), "CIFAR missing batch");
    fs::remove_all(c10);

    const fs::path c100 = g_work / "cifar100";
    fs::remove_all(c100);
    fs::create_directories(c100);
    spit(c100 / "train.bin", cifar_records(100, 5000, 100, 7));
    spit(c100 / "test.bin", cifar_records(100, 1000, 100, 8));
    {
        const auto d = load_cifar(c100, 100);
        expect(d.train.images.shape() == Shape{5000, 3, 32, 32}, "CIFAR-100 shape");
        std::vector<int> ch(100, 0);
        for (int l : d.train.labels) ++ch[std::size_t(std::clamp(l, 0, 99))];
        expect(std::all_of(ch.begin(), ch.end(), [](int h) { return h == 50; }), "CIFAR-100 fine-label histogram");
    }
    fs::remove_all(c100);

    std::string detail = problems.empty() ? "MNIST 5000/5000, CIFAR-10 50000/10000, CIFAR-100 5000/1000, 9 malformed cases"
                                          : "failed: " + problems.front();
    return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"augcl acceptance run"};
    std::string work = "acceptance_work";
    std::vector<int> only;
    app.add_option("--work-dir", work, "Scratch directory for runs");
    app.add_option("--only", only, "Criteria to run (default: all)");
    CLI11_PARSE(app, argc, argv);
    g_work = fs::absolute(work);
    fs::create_directories(g_work);

    const std::vector<std::pair<std::string, Outcome (*)()>> criteria{
        {"gradient oracle suite", gradient_suite},
        {"correlation oracle", correlation_oracle},
        {"CaSSLe composition", composition},
        {"CL mechanics and MTL budget parity", cl_mechanics},
        {"negative-transfer arithmetic", negative_transfer_arithmetic},
        {"single-augmentation ordering (MNIST desk)", single_aug_ordering},
        {"CL vs MTL negative transfer (MNIST B1 desk)", cl_vs_mtl_trend},
        {"reproducibility", reproducibility},
        {"data parsers", data_parsers},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = int(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::cout << (o.pass ? "PASS" : "FAIL") << ' ' << id << ' ' << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
