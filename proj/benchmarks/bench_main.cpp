#include <benchmark/benchmark.h>

#include "augcl/adam.hpp"
#include "augcl/augment.hpp"
#include "augcl/experiment.hpp"
#include "augcl/loss.hpp"
#include "augcl/model.hpp"

using namespace augcl;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
    Tensor<float> t(std::move(shape));
    Rng rng(seed);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (float& v : t.data()) v = dist(rng);
    return t;
}

Tensor<float> random_images(std::size_t n, std::uint64_t seed) {
    Tensor<float> t({n, 1, 28, 28});
    Rng rng(seed);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    for (float& v : t.data()) v = dist(rng);
    return t;
}

void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Tensor<float> a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
    for (auto _ : state) {
        Tape<float> tape(GradMode::disabled);
        benchmark::DoNotOptimize(matmul(tape.constant(a), tape.constant(b)).value().data().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(128)->Arg(256)->Arg(512);

void BM_Conv2dForwardBackward(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const auto hw = static_cast<std::size_t>(state.range(1));
    const Tensor<float> x = random_tensor({64, c, hw, hw}, 3), w = random_tensor({32, c, 3, 3}, 4);
    for (auto _ : state) {
        Tape<float> tape;
        Var<float> out = conv2d(tape.leaf(x), tape.leaf(w), 1, 1);
        tape.backward(sum(out));
    }
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({1, 28})->Args({32, 14})->Args({32, 7});

void BM_BarlowTwinsLoss(benchmark::State& state) {
    const auto d = static_cast<std::size_t>(state.range(0));
    const Tensor<float> za = random_tensor({256, d}, 5), zb = random_tensor({256, d}, 6);
    for (auto _ : state) {
        Tape<float> tape;
        Var<float> loss = barlow_twins_loss(tape.leaf(za), tape.leaf(zb), 0.005f);
        tape.backward(loss);
    }
}
BENCHMARK(BM_BarlowTwinsLoss)->Arg(128)->Arg(512);

void BM_ViewPair(benchmark::State& state) {
    const auto kind = static_cast<AugmentationKind>(state.range(0));
    const Tensor<float> batch = random_images(256, 7);
    const AugmentationParams params;
    std::uint64_t seed = 0;
    for (auto _ : state) benchmark::DoNotOptimize(make_view_pair(kind, params, batch, ++seed).view_a.data().data());
    state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_ViewPair)
    ->Arg(static_cast<int>(AugmentationKind::crop))
    ->Arg(static_cast<int>(AugmentationKind::perspective))
    ->Arg(static_cast<int>(AugmentationKind::affine))
    ->Arg(static_cast<int>(AugmentationKind::rotation))
    ->Arg(static_cast<int>(AugmentationKind::gaussian_noise));

// One optimizer step of the desk profile (conv-s, batch 256, d_proj 128).
void BM_TrainStep(benchmark::State& state) {
    const bool distill = state.range(0) != 0;
    EncoderModel<float> model(Arch::conv_s, {1, 28, 28}, 128, 1);
    const FrozenEncoder<float> frozen(model);
    Predictor<float> g(128, 2);
    const Tensor<float> batch = random_images(256, 8);
    const AugmentationParams params;
    std::uint64_t seed = 0;
    for (auto _ : state) {
        const ViewPair views = make_view_pair(AugmentationKind::crop, params, batch, ++seed);
        Tape<float> tape;
        const Var<float> va = tape.constant(views.view_a), vb = tape.constant(views.view_b);
        const Var<float> za = model.embed(tape, va, Mode::train), zb = model.embed(tape, vb, Mode::train);
        std::vector<Parameter<float>*> params_list = model.parameters();
        LossResult<float> loss;
        if (distill) {
            loss = cassle_loss(za, zb, frozen.embed(tape, va), frozen.embed(tape, vb), g, 0.005f, 0.5f);
            const auto gp = g.parameters();
            params_list.insert(params_list.end(), gp.begin(), gp.end());
        } else {
            loss = ssl_loss(za, zb, 0.005f);
        }
        tape.backward(loss.total);
        adam_step<float>(params_list, {});
    }
    state.SetLabel(distill ? "cassle" : "barlow");
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    benchmark::Initialize(&argc, argv);
    if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}
