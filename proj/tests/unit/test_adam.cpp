#include <doctest.h>

#include <cmath>
#include <cstring>

#include "augcl/adam.hpp"
#include "augcl/errors.hpp"

using namespace augcl;

namespace {

// Scalar Adam written directly from the update rule.
struct ScalarAdam {
    double m = 0, v = 0;
    int t = 0;
    double step(double p, double g, const AdamOptions& o) {
        ++t;
        m = o.beta1 * m + (1 - o.beta1) * g;
        v = o.beta2 * v + (1 - o.beta2) * g * g;
        const double mhat = m / (1 - std::pow(o.beta1, t));
        const double vhat = v / (1 - std::pow(o.beta2, t));
        return p - o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
};

void set_grad(Parameter<double>& p, double g) {
    auto span = p.value.ensure_grad();
    std::fill(span.begin(), span.end(), g);
}

}  // namespace

TEST_CASE("zero gradient leaves parameters unchanged and counts the step") {
    Parameter<double> p("w", Tensor<double>::vector({1.0, -2.0}));
    set_grad(p, 0.0);
    Parameter<double>* ps[] = {&p};
    adam_step<double>(ps, AdamOptions{});
    CHECK(p.value[0] == 1.0);
    CHECK(p.value[1] == -2.0);
    CHECK(p.step_count == 1);
}

TEST_CASE("first step moves by lr against the gradient sign") {
    Parameter<double> p("w", Tensor<double>::scalar(0.0));
    set_grad(p, 1.0);
    Parameter<double>* ps[] = {&p};
    adam_step<double>(ps, AdamOptions{.lr = 0.1});
    CHECK(p.value[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("two steps match the scalar oracle bitwise") {
    const AdamOptions opts{.lr = 0.01};
    Parameter<double> p("w", Tensor<double>::scalar(0.3));
    ScalarAdam oracle;
    double ref = 0.3;
    Parameter<double>* ps[] = {&p};
    for (double g : {0.7, 0.7}) {
        set_grad(p, g);
        adam_step<double>(ps, opts);
        ref = oracle.step(ref, g, opts);
        CHECK(std::memcmp(&p.value[0], &ref, sizeof ref) == 0);
    }
}

TEST_CASE("varying gradients track the oracle") {
    const AdamOptions opts{.lr = 0.05, .beta1 = 0.8, .beta2 = 0.99, .eps = 1e-6};
    Parameter<double> p("w", Tensor<double>::scalar(1.0));
    ScalarAdam oracle;
    double ref = 1.0;
    Parameter<double>* ps[] = {&p};
    for (double g : {1.0, -0.5, 2.0, 0.0, -3.0, 0.25}) {
        set_grad(p, g);
        adam_step<double>(ps, opts);
        ref = oracle.step(ref, g, opts);
    }
    CHECK(p.value[0] == doctest::Approx(ref).epsilon(1e-14));
    CHECK(p.step_count == 6);
}

TEST_CASE("gradients are cleared after a step") {
    Parameter<double> p("w", Tensor<double>::scalar(1.0));
    set_grad(p, 2.0);
    Parameter<double>* ps[] = {&p};
    adam_step<double>(ps, AdamOptions{});
    CHECK((!p.value.has_grad() || p.value.grad()[0] == 0.0));
}

TEST_CASE("missing gradient is a contract error and nothing moves") {
    Parameter<double> a("a", Tensor<double>::scalar(1.0));
    Parameter<double> b("b", Tensor<double>::scalar(2.0));
    set_grad(a, 1.0);
    Parameter<double>* ps[] = {&a, &b};
    CHECK_THROWS_AS(adam_step<double>(ps, AdamOptions{}), ContractError);
    CHECK(a.value[0] == 1.0);
    CHECK(a.step_count == 0);
}

TEST_CASE("reset_optimizer_state zeroes moments") {
    Parameter<double> p("w", Tensor<double>::scalar(1.0));
    set_grad(p, 1.0);
    Parameter<double>* ps[] = {&p};
    adam_step<double>(ps, AdamOptions{});
    CHECK(p.adam_m[0] != 0.0);
    p.reset_optimizer_state();
    CHECK(p.adam_m[0] == 0.0);
    CHECK(p.adam_v[0] == 0.0);
    CHECK(p.step_count == 0);
}
