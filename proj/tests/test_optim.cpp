#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "xfuse/optim.hpp"
#include "xfuse/tensor.hpp"

using namespace xfuse;

namespace {

// scalar Adam recurrence evaluated independently in double precision
double adam_oracle(double theta, int steps, double g, double lr) {
    double m = 0.0, v = 0.0;
    for (int t = 1; t <= steps; ++t) {
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        double mhat = m / (1.0 - std::pow(0.9, t));
        double vhat = v / (1.0 - std::pow(0.999, t));
        theta -= lr * mhat / (std::sqrt(vhat) + 1e-8);
    }
    return theta;
}

} // namespace

TEST_CASE("adam first step closed form") {
    Parameter p("theta", Tensor::zeros({1}));
    p.value.grad().assign(1, 1.0f);
    adam_step<float>({&p}, 1e-3f);
    CHECK(p.value.data()[0] == doctest::Approx(-1e-3).epsilon(1e-6));
    CHECK(p.step_count == 1);
    CHECK_FALSE(p.value.has_grad()); // gradients zeroed after the step
}

TEST_CASE("adam with zero gradients from fresh state is the identity") {
    Parameter p("theta", Tensor::from_data({2}, {0.5f, -1.25f}));
    for (int i = 0; i < 5; ++i) {
        p.value.grad().assign(2, 0.0f);
        adam_step<float>({&p}, 1e-2f);
    }
    CHECK(p.value.data()[0] == 0.5f);
    CHECK(p.value.data()[1] == -1.25f);
}

TEST_CASE("adam two steps match the scalar recurrence") {
    Parameter p("theta", Tensor::zeros({1}));
    for (int t = 0; t < 2; ++t) {
        p.value.grad().assign(1, 1.0f);
        adam_step<float>({&p}, 1e-3f);
    }
    double expect = adam_oracle(0.0, 2, 1.0, 1e-3);
    CHECK(p.value.data()[0] == doctest::Approx(expect).epsilon(1e-7));
    CHECK(std::abs(p.value.data()[0] - (-0.002)) < 1e-6);
}

TEST_CASE("adam longer run against the oracle") {
    ParameterT<double> p("theta", TensorT<double>::scalar(0.3));
    for (int t = 0; t < 25; ++t) {
        p.value.grad().assign(1, -0.7);
        adam_step<double>({&p}, 5e-3);
    }
    CHECK(p.value.data()[0] == doctest::Approx(adam_oracle(0.3, 25, -0.7, 5e-3)).epsilon(1e-12));
}

TEST_CASE("adam missing gradient names the parameter") {
    Parameter a("a", Tensor::zeros({1}));
    Parameter b("b", Tensor::zeros({1}));
    a.value.grad().assign(1, 1.0f);
    CHECK_THROWS_WITH_AS(adam_step<float>({&a, &b}, 1e-3f), doctest::Contains("'b'"), ContractError);
}

TEST_CASE("ema single step, fixed point, and k-step closed form") {
    ParameterT<double> t("w", TensorT<double>::scalar(0.0));
    ParameterT<double> s("w", TensorT<double>::scalar(1.0));
    ema_update<double>({&t}, {&s}, 0.999);
    CHECK(t.value.data()[0] == doctest::Approx(0.001).epsilon(1e-12));

    ParameterT<double> t2("w", TensorT<double>::scalar(0.42));
    ParameterT<double> s2("w", TensorT<double>::scalar(0.42));
    ema_update<double>({&t2}, {&s2}, 0.999);
    CHECK(t2.value.data()[0] == 0.42);

    // theta_T after k updates with constant student: theta + (theta0 - theta) * alpha^k
    ParameterT<double> t3("w", TensorT<double>::scalar(0.0));
    ParameterT<double> s3("w", TensorT<double>::scalar(1.0));
    for (int k = 0; k < 100; ++k) ema_update<double>({&t3}, {&s3}, 0.999);
    double closed = 1.0 - std::pow(0.999, 100);
    CHECK(std::abs(t3.value.data()[0] - closed) < 1e-12);
    // frozen from the geometric closed form evaluated in double precision
    CHECK(t3.value.data()[0] == doctest::Approx(0.09520785).epsilon(1e-6));
}

TEST_CASE("ema misaligned lists throw") {
    ParameterT<double> t("u", TensorT<double>::scalar(0.0));
    ParameterT<double> s("w", TensorT<double>::scalar(1.0));
    CHECK_THROWS_AS(ema_update<double>({&t}, {&s}, 0.999), ContractError);

    ParameterT<double> t2("w", TensorT<double>::zeros({2}));
    CHECK_THROWS_AS(ema_update<double>({&t2}, {&s}, 0.999), ContractError);
}
