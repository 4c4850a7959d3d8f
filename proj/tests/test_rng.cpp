#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mixscreen/rng.hpp"

using namespace mixscreen;

TEST_CASE("streams are deterministic and distinct", "[rng]") {
    Rng a(derive_seed(42, stream::kSite, 3, 7));
    Rng b(derive_seed(42, stream::kSite, 3, 7));
    Rng c(derive_seed(42, stream::kSite, 4, 7));
    bool all_equal = true;
    bool any_equal_c = false;
    for (int i = 0; i < 100; ++i) {
        const auto va = a.next_u64();
        all_equal = all_equal && va == b.next_u64();
        any_equal_c = any_equal_c || va == c.next_u64();
    }
    CHECK(all_equal);
    CHECK_FALSE(any_equal_c);
}

TEST_CASE("uniform draws stay in range", "[rng]") {
    Rng rng(1);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.u01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const double v = rng.u01_open();
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("normal draws match moments", "[rng]") {
    Rng rng(7);
    const int n = 200000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sum_sq += z * z;
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    CHECK(mean == Catch::Approx(0.0).margin(3.0 / std::sqrt(static_cast<double>(n))));
    CHECK(var == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("gamma draws match moments", "[rng]") {
    Rng rng(9);
    for (double shape : {0.3, 1.0, 2.5, 9.0}) {
        const double rate = 2.0;
        const int n = 100000;
        double sum = 0.0, sum_sq = 0.0;
        for (int i = 0; i < n; ++i) {
            const double x = rng.gamma(shape, rate);
            CHECK(x > 0.0);
            sum += x;
            sum_sq += x * x;
        }
        const double mean = sum / n;
        const double var = sum_sq / n - mean * mean;
        const double se_mean = std::sqrt(shape / (rate * rate) / n);
        CHECK(mean == Catch::Approx(shape / rate).margin(4.0 * se_mean + 1e-12));
        CHECK(var == Catch::Approx(shape / (rate * rate)).epsilon(0.08));
    }
}

TEST_CASE("dirichlet draws live on the simplex with the right mean", "[rng]") {
    Rng rng(13);
    const std::vector<double> alpha = {2.0, 3.0, 5.0};
    std::vector<double> mean(3, 0.0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const auto w = rng.dirichlet(alpha);
        double total = 0.0;
        for (double x : w) {
            REQUIRE(x >= 0.0);
            total += x;
        }
        REQUIRE(total == Catch::Approx(1.0).margin(1e-12));
        for (int k = 0; k < 3; ++k) mean[k] += w[k];
    }
    for (int k = 0; k < 3; ++k) {
        CHECK(mean[k] / n == Catch::Approx(alpha[k] / 10.0).margin(0.005));
    }
}

TEST_CASE("categorical from log weights reproduces probabilities", "[rng]") {
    Rng rng(17);
    const std::vector<double> log_w = {std::log(0.3), std::log(0.7)};
    int count0 = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) count0 += rng.categorical_from_log(log_w) == 0;
    CHECK(static_cast<double>(count0) / n == Catch::Approx(0.3).margin(0.01));
    CHECK_THROWS_AS(rng.categorical_from_log(std::vector<double>{kNegInf, kNegInf}), NumericalError);
}
