#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mixscreen/rng.hpp"
#include "mixscreen/special_math.hpp"

using namespace mixscreen;

TEST_CASE("log_mv_beta matches gamma-identity values", "[special_math]") {
    CHECK(log_mv_beta(std::vector<double>{1.0, 1.0}) == Catch::Approx(0.0).margin(1e-14));
    CHECK(log_mv_beta(std::vector<double>{2.0, 2.0}) ==
          Catch::Approx(std::log(1.0 / 6.0)).margin(1e-12));
    CHECK(log_mv_beta(std::vector<double>{1.0, 1.0, 1.0}) ==
          Catch::Approx(std::log(0.5)).margin(1e-12));
}

TEST_CASE("log_mv_beta is permutation symmetric and overflow-free", "[special_math]") {
    Rng rng(11);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> alpha(1 + rng.uniform_int(6));
        for (auto& a : alpha) a = rng.uniform(0.05, 20.0);
        const double reference = log_mv_beta(alpha);
        std::vector<double> shuffled = alpha;
        rng.shuffle(shuffled);
        CHECK(log_mv_beta(shuffled) == Catch::Approx(reference).margin(1e-10));
    }
    // counts summing to 1e6 (and alpha entries up to 1e7) stay finite
    CHECK(std::isfinite(log_mv_beta(std::vector<double>{500000.5, 400000.5, 100000.5})));
    CHECK(std::isfinite(log_mv_beta(std::vector<double>{1e7, 1e7})));
}

TEST_CASE("log_mv_beta rejects non-positive entries", "[special_math]") {
    CHECK_THROWS_AS(log_mv_beta(std::vector<double>{1.0, 0.0}), NumericalError);
    CHECK_THROWS_AS(log_mv_beta(std::vector<double>{-0.5}), NumericalError);
}

TEST_CASE("truncated normal log density", "[special_math]") {
    TruncNormalKernel kernel{0.5, 0.1};
    CHECK(trunc_normal_logpdf(1.5, kernel) == kNegInf);
    CHECK(trunc_normal_logpdf(-0.2, kernel) == kNegInf);
    // 1/(0.1 sqrt(2 pi)) = 3.98942..., truncation mass 2 Phi(5) - 1
    CHECK(trunc_normal_logpdf(0.5, kernel) == Catch::Approx(std::log(3.98942)).margin(1e-5));
    CHECK(trunc_normal_logpdf(0.3, kernel) ==
          Catch::Approx(trunc_normal_logpdf(0.7, kernel)).margin(1e-14));
}

TEST_CASE("truncated normal density integrates to one", "[special_math]") {
    const std::vector<TruncNormalKernel> kernels = {
        {0.5, 0.1}, {0.0, 0.05}, {1.0, 0.2}, {0.1, 0.01}, {0.9, 0.3}, {0.5, 1.5}, {0.02, 0.01}};
    for (const auto& kernel : kernels) {
        const int n = 10000;
        const double h = 1.0 / (n - 1);
        double integral = 0.0;
        for (int i = 0; i < n; ++i) {
            const double weight = (i == 0 || i == n - 1) ? 0.5 : 1.0;
            integral += weight * h * trunc_normal_pdf(i * h, kernel);
        }
        INFO("mu=" << kernel.mu << " sigma=" << kernel.sigma);
        CHECK(integral == Catch::Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("truncated normal cdf and quantile", "[special_math]") {
    TruncNormalKernel centered{0.5, 0.17};
    CHECK(trunc_normal_cdf(0.5, centered) == Catch::Approx(0.5).margin(1e-12));

    TruncNormalKernel kernel{0.9, 0.3};
    CHECK(trunc_normal_cdf(1.0, kernel) == 1.0);
    CHECK(trunc_normal_cdf(0.0, kernel) == 0.0);

    for (const auto& k : {TruncNormalKernel{0.5, 0.1}, TruncNormalKernel{0.9, 0.3},
                          TruncNormalKernel{0.05, 0.02}}) {
        for (double x = 0.1; x < 0.95; x += 0.1) {
            const double p = trunc_normal_cdf(x, k);
            if (p <= 0.0 || p >= 1.0) continue;  // beyond representable tail
            CHECK(trunc_normal_quantile(p, k) == Catch::Approx(x).margin(1e-8));
        }
        for (double p = 0.05; p < 1.0; p += 0.1) {
            CHECK(trunc_normal_cdf(trunc_normal_quantile(p, k), k) == Catch::Approx(p).margin(1e-8));
        }
    }

    CHECK_THROWS_AS(trunc_normal_quantile(0.0, kernel), NumericalError);
    CHECK_THROWS_AS(trunc_normal_quantile(1.0, kernel), NumericalError);
}

TEST_CASE("truncated normal cdf is monotone", "[special_math]") {
    TruncNormalKernel kernel{0.3, 0.08};
    double prev = -1.0;
    for (int i = 0; i <= 200; ++i) {
        const double p = trunc_normal_cdf(i / 200.0, kernel);
        CHECK(p >= prev);
        prev = p;
    }
}

TEST_CASE("normal quantile and cdf are mutual inverses", "[special_math]") {
    for (double p : {1e-12, 1e-6, 0.01, 0.3, 0.5, 0.7, 0.99, 1.0 - 1e-9}) {
        CHECK(normal_cdf(normal_quantile(p)) == Catch::Approx(p).epsilon(1e-10));
    }
    for (double x : {-6.0, -2.0, -0.5, 0.0, 0.5, 2.0, 6.0}) {
        CHECK(normal_quantile(normal_cdf(x)) == Catch::Approx(x).margin(1e-10));
    }
    CHECK_THROWS_AS(normal_quantile(0.0), NumericalError);
    CHECK_THROWS_AS(normal_quantile(1.0), NumericalError);
}

TEST_CASE("digamma and trigamma", "[special_math]") {
    CHECK(digamma(1.0) == Catch::Approx(-0.57721566490153286).margin(1e-10));
    CHECK(trigamma(1.0) == Catch::Approx(1.6449340668482264).margin(1e-10));
    for (double x : {0.5, 2.0, 10.0}) {
        CHECK(digamma(x + 1.0) - digamma(x) == Catch::Approx(1.0 / x).margin(1e-10));
        CHECK(trigamma(x) - trigamma(x + 1.0) == Catch::Approx(1.0 / (x * x)).margin(1e-10));
    }
    CHECK_THROWS_AS(digamma(0.0), NumericalError);
    CHECK_THROWS_AS(trigamma(-1.0), NumericalError);
}

TEST_CASE("inverse_digamma round trip", "[special_math]") {
    for (double x : {0.01, 0.3, 1.0, 4.5, 120.0}) {
        CHECK(inverse_digamma(digamma(x)) == Catch::Approx(x).epsilon(1e-9));
    }
}

TEST_CASE("kernel validation", "[special_math]") {
    CHECK_THROWS_AS((TruncNormalKernel{1.2, 0.1}).validate(), NumericalError);
    CHECK_THROWS_AS((TruncNormalKernel{0.5, 0.0}).validate(), NumericalError);
    CHECK_NOTHROW((TruncNormalKernel{0.0, 0.4}).validate());
}
