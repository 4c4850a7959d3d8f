#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "mixscreen/model.hpp"
#include "mixscreen/rng.hpp"

using namespace mixscreen;

namespace {

ScreeningDataset tiny_dataset() {
    ScreeningDataset d;
    d.values = Matrix<double>(2, 3);
    d.values(0, 0) = 0.1;
    d.values(0, 1) = 0.5;
    d.values(0, 2) = 0.9;
    d.values(1, 0) = 0.0;
    d.values(1, 1) = 1.0;
    d.values(1, 2) = 0.3;
    d.group = {0, 0, 1};
    d.site_ids = {"a", "b"};
    return d;
}

}  // namespace

TEST_CASE("tabulate_counts direct example", "[model]") {
    Matrix<std::uint8_t> assignments(1, 3);
    assignments(0, 0) = 0;
    assignments(0, 1) = 0;
    assignments(0, 2) = 1;
    const std::vector<std::uint8_t> group = {0, 0, 1};
    Matrix<int> c0, c1;
    tabulate_counts(assignments, group, 2, c0, c1);
    CHECK(c0(0, 0) == 2);
    CHECK(c0(0, 1) == 0);
    CHECK(c1(0, 0) == 0);
    CHECK(c1(0, 1) == 1);
}

TEST_CASE("tabulate_counts all-in-first-kernel and empty cases", "[model]") {
    Matrix<std::uint8_t> assignments(2, 4, 0);
    const std::vector<std::uint8_t> group = {0, 1, 0, 1};
    Matrix<int> c0, c1;
    tabulate_counts(assignments, group, 3, c0, c1);
    for (std::size_t m = 0; m < 2; ++m) {
        CHECK(c0(m, 0) == 2);
        CHECK(c1(m, 0) == 2);
        CHECK(c0(m, 1) + c0(m, 2) + c1(m, 1) + c1(m, 2) == 0);
    }

    Matrix<std::uint8_t> empty(0, 4);
    tabulate_counts(empty, group, 3, c0, c1);
    CHECK(c0.rows() == 0);
    CHECK(c1.rows() == 0);
}

TEST_CASE("tabulate_counts rejects out-of-range kernel index", "[model]") {
    Matrix<std::uint8_t> assignments(1, 2);
    assignments(0, 0) = 0;
    assignments(0, 1) = 5;
    const std::vector<std::uint8_t> group = {0, 1};
    Matrix<int> c0, c1;
    CHECK_THROWS_AS(tabulate_counts(assignments, group, 2, c0, c1), NumericalError);
}

TEST_CASE("single assignment change moves exactly two count cells", "[model]") {
    Rng rng(5);
    Matrix<std::uint8_t> assignments(3, 10);
    std::vector<std::uint8_t> group(10);
    for (std::size_t n = 0; n < 10; ++n) group[n] = n % 2;
    for (auto& a : assignments.data()) a = static_cast<std::uint8_t>(rng.uniform_int(4));

    Matrix<int> c0, c1;
    tabulate_counts(assignments, group, 4, c0, c1);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t m = rng.uniform_int(3);
        const std::size_t n = rng.uniform_int(10);
        const std::uint8_t before = assignments(m, n);
        const std::uint8_t after = static_cast<std::uint8_t>((before + 1 + rng.uniform_int(3)) % 4);
        assignments(m, n) = after;
        Matrix<int> d0, d1;
        tabulate_counts(assignments, group, 4, d0, d1);
        int changed = 0;
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t k = 0; k < 4; ++k) {
                changed += std::abs(d0(i, k) - c0(i, k));
                changed += std::abs(d1(i, k) - c1(i, k));
            }
        }
        CHECK(changed == 2);
        c0 = d0;
        c1 = d1;
    }
}

TEST_CASE("dataset validation", "[model]") {
    CHECK_NOTHROW(tiny_dataset().validate());

    auto out_of_range = tiny_dataset();
    out_of_range.values(1, 2) = 1.2;
    CHECK_THROWS_AS(out_of_range.validate(), DataError);

    auto single_group = tiny_dataset();
    single_group.group = {0, 0, 0};
    CHECK_THROWS_AS(single_group.validate(), DataError);

    // boundary values 0 and 1 are accepted unchanged
    auto boundary = tiny_dataset();
    boundary.values(0, 0) = 0.0;
    boundary.values(0, 1) = 1.0;
    CHECK_NOTHROW(boundary.validate());
}

TEST_CASE("dictionary validation enforces ordering", "[model]") {
    KernelDictionary dictionary;
    dictionary.kernels = {{0.7, 0.1}, {0.2, 0.1}};
    dictionary.alpha = {1.0, 1.0};
    CHECK_THROWS_AS(dictionary.validate(), NumericalError);
    dictionary.kernels = {{0.2, 0.1}, {0.7, 0.1}};
    CHECK_NOTHROW(dictionary.validate());
    dictionary.alpha = {1.0};
    CHECK_THROWS_AS(dictionary.validate(), NumericalError);
}

TEST_CASE("gibbs config validation", "[model]") {
    GibbsConfig config;
    CHECK_NOTHROW(config.validate());
    config.iterations = 0;
    CHECK_THROWS_AS(config.validate(), NumericalError);
    config.iterations = 10;
    config.p0_mode = P0Mode::kFixed;
    config.p0_fixed = 1.5;
    CHECK_THROWS_AS(config.validate(), NumericalError);
}
