#include <doctest.h>

#include <cmath>

#include "augcl/errors.hpp"
#include "augcl/ops.hpp"
#include "test_support.hpp"

using namespace augcl;
using namespace augcl::testing;

namespace {

std::vector<double> values(const Var<double>& v) { return v.value().to_vector(); }

}  // namespace

TEST_CASE("matmul examples") {
    Tape<double> tape;
    auto id = tape.constant(Tensor<double>::matrix({{1, 0}, {0, 1}}));
    auto m = tape.constant(Tensor<double>::matrix({{1, 2}, {3, 4}}));
    CHECK(values(matmul(id, m)) == std::vector<double>{1, 2, 3, 4});
    auto row = tape.constant(Tensor<double>::matrix({{1, 2}}));
    auto col = tape.constant(Tensor<double>::matrix({{3}, {4}}));
    auto dot = matmul(row, col);
    CHECK(dot.shape() == Shape{1, 1});
    CHECK(dot.value()[0] == 11);
    CHECK_THROWS_AS(matmul(row, row), DimensionError);
}

TEST_CASE("matmul 3x4 by 4x2 gradient") {
    auto r = gradient_check({random_tensor({3, 4}, 1), random_tensor({4, 2}, 2)},
                            [](Tape<double>&, const auto& v) { return sum(matmul(v[0], v[1])); });
    CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("conv2d examples") {
    Tape<double> tape;
    auto ones = tape.constant(Tensor<double>({1, 1, 3, 3}, 1.0));
    auto two = tape.constant(Tensor<double>({1, 1, 1, 1}, 2.0));
    auto out = conv2d(ones, two, 1, 0);
    CHECK(out.shape() == Shape{1, 1, 3, 3});
    CHECK(values(out) == std::vector<double>(9, 2.0));

    auto img = tape.constant(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}));
    auto diag = tape.constant(Tensor<double>({1, 1, 2, 2}, {1, 0, 0, 1}));
    auto five = conv2d(img, diag, 1, 0);
    CHECK(five.shape() == Shape{1, 1, 1, 1});
    CHECK(five.value()[0] == 5.0);

    auto big = tape.constant(Tensor<double>({1, 1, 5, 5}, 1.0));
    CHECK_THROWS_AS(conv2d(img, big, 1, 1), DimensionError);
    CHECK_NOTHROW(conv2d(img, tape.constant(Tensor<double>({1, 1, 4, 4}, 1.0)), 1, 1));
}

TEST_CASE("conv2d output size with stride and padding") {
    Tape<double> tape;
    auto x = tape.constant(random_tensor({1, 2, 7, 7}, 3));
    auto k = tape.constant(random_tensor({3, 2, 3, 3}, 4));
    CHECK(conv2d(x, k, 2, 1).shape() == Shape{1, 3, 4, 4});
    CHECK(conv2d(x, k, 1, 0).shape() == Shape{1, 3, 5, 5});
}

TEST_CASE("conv2d matches direct summation") {
    const auto x = random_tensor({2, 3, 6, 5}, 5);
    const auto k = random_tensor({4, 3, 3, 3}, 6);
    Tape<double> tape;
    const auto y = conv2d(tape.constant(x), tape.constant(k), 2, 1).value();
    const std::size_t oh = y.dim(2), ow = y.dim(3);
    double worst = 0.0;
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t o = 0; o < 4; ++o)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < 3; ++c)
                        for (std::size_t a = 0; a < 3; ++a)
                            for (std::size_t b = 0; b < 3; ++b) {
                                const long yy = long(i * 2 + a) - 1, xx = long(j * 2 + b) - 1;
                                if (yy < 0 || xx < 0 || yy >= 6 || xx >= 5) continue;
                                acc += x.at({n, c, std::size_t(yy), std::size_t(xx)}) * k.at({o, c, a, b});
                            }
                    worst = std::max(worst, std::abs(acc - y.at({n, o, i, j})));
                }
    CHECK(worst < 1e-12);
}

TEST_CASE("conv2d 2x3x8x8 gradient") {
    auto r = gradient_check({random_tensor({2, 3, 8, 8}, 7), random_tensor({2, 3, 3, 3}, 8)},
                            [](Tape<double>&, const auto& v) { return weighted_sum(conv2d(v[0], v[1], 1, 1), 9); });
    CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("batch_norm of standardized columns is near identity") {
    auto x = Tensor<double>::matrix({{1, -1}, {-1, 1}, {1, 1}, {-1, -1}});
    Tape<double> tape;
    BatchNormStats<double> stats(2);
    auto y = batch_norm(tape.constant(x), tape.constant(Tensor<double>({2}, 1.0)),
                        tape.constant(Tensor<double>({2}, 0.0)), stats, Mode::train);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.value()[i] == doctest::Approx(x[i]).epsilon(1e-5));
}

TEST_CASE("batch_norm constant column gives zeros") {
    auto x = Tensor<double>::matrix({{3, 1}, {3, 2}, {3, 5}});
    Tape<double> tape;
    BatchNormStats<double> stats(2);
    auto y = batch_norm(tape.constant(x), tape.constant(Tensor<double>({2}, 1.0)),
                        tape.constant(Tensor<double>({2}, 0.0)), stats, Mode::train);
    for (std::size_t r = 0; r < 3; ++r) CHECK(y.value().at({r, 0}) == 0.0);
}

TEST_CASE("batch_norm running statistics and batch-size precondition") {
    auto x = Tensor<double>::matrix({{0, 10}, {2, 10}});
    Tape<double> tape;
    BatchNormStats<double> stats(2);
    auto g = tape.constant(Tensor<double>({2}, 1.0));
    auto b = tape.constant(Tensor<double>({2}, 0.0));
    batch_norm(tape.constant(x), g, b, stats, Mode::train);
    CHECK(stats.running_mean[0] == doctest::Approx(0.1));
    CHECK(stats.running_mean[1] == doctest::Approx(1.0));
    CHECK(stats.running_var[1] == doctest::Approx(0.9));

    auto before = stats;
    auto y = batch_norm(tape.constant(x), g, b, stats, Mode::eval);
    CHECK(stats == before);
    CHECK(y.value().at({0, 1}) == doctest::Approx((10 - 1.0) / std::sqrt(0.9 + 1e-5)));

    auto single = tape.constant(Tensor<double>::matrix({{1, 2}}));
    CHECK_THROWS_AS(batch_norm(single, g, b, stats, Mode::train), BatchSizeError);
    CHECK_NOTHROW(batch_norm(single, g, b, stats, Mode::eval));
}

TEST_CASE("batch_norm 8x4 gradient") {
    auto r = gradient_check({random_tensor({8, 4}, 10), random_tensor({4}, 11), random_tensor({4}, 12)},
                            [](Tape<double>&, const auto& v) {
                                BatchNormStats<double> s(4);
                                return weighted_sum(batch_norm(v[0], v[1], v[2], s, Mode::train), 13);
                            });
    CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("relu examples") {
    Tape<double> tape;
    CHECK(values(relu(tape.constant(Tensor<double>::vector({-1, 0, 2})))) == std::vector<double>{0, 0, 2});
    auto pos = Tensor<double>::vector({0.5, 3, 7});
    CHECK(relu(tape.constant(pos)).value() == pos);
    auto x = tape.leaf(Tensor<double>::vector({-1, 2}));
    tape.backward(sum(relu(x)));
    CHECK(tape.grad(x)[0] == 0.0);
    CHECK(tape.grad(x)[1] == 1.0);
}

TEST_CASE("max_pool2d and global_avg_pool values") {
    Tape<double> tape;
    auto x = tape.constant(Tensor<double>({1, 1, 3, 4}, {1, 5, 2, 0, 3, 4, 8, 1, 9, 9, 9, 9}));
    auto p = max_pool2d(x, 2);
    CHECK(p.shape() == Shape{1, 1, 1, 2});
    CHECK(values(p) == std::vector<double>{5, 8});
    auto a = global_avg_pool(x);
    CHECK(a.shape() == Shape{1, 1});
    CHECK(a.value()[0] == doctest::Approx(60.0 / 12.0));
}

TEST_CASE("softmax_cross_entropy value") {
    Tape<double> tape;
    auto logits = tape.constant(Tensor<double>::matrix({{0, 0}, {std::log(3.0), 0}}));
    const std::vector<int> labels{0, 0};
    auto loss = softmax_cross_entropy(logits, labels);
    CHECK(loss.value().item() == doctest::Approx((std::log(2.0) + std::log(4.0 / 3.0)) / 2));
    const std::vector<int> bad{0, 2};
    CHECK_THROWS_AS(softmax_cross_entropy(logits, bad), ContractError);
}

TEST_CASE("every differentiable primitive passes the finite-difference oracle") {
    for (const auto& check : primitive_checks()) {
        CAPTURE(check.name);
        const auto r = gradient_check(check.inputs, check.fn);
        CHECK(r.max_rel_error < 1e-5);
        CHECK(r.checked > 0);
    }
}
