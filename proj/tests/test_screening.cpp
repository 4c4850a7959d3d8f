#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "mixscreen/screening.hpp"
#include "mixscreen/simulation.hpp"

using namespace mixscreen;

namespace {

// Test-only oracle: the marginal pr(C | H0) of a specific allocation sequence
// by Monte Carlo over the Dirichlet prior, independent of the closed form
// (std::mt19937_64 + std::gamma_distribution, not the library RNG).
struct McEstimate {
    double mean;
    double se;
};

McEstimate mc_sequence_marginal(const std::vector<double>& counts, const std::vector<double>& alpha,
                                int draws, std::mt19937_64& gen) {
    std::vector<std::gamma_distribution<double>> gammas;
    for (double a : alpha) gammas.emplace_back(a, 1.0);
    double sum = 0.0, sum_sq = 0.0;
    std::vector<double> pi(alpha.size());
    for (int d = 0; d < draws; ++d) {
        double total = 0.0;
        for (std::size_t k = 0; k < alpha.size(); ++k) {
            pi[k] = gammas[k](gen);
            total += pi[k];
        }
        double value = 1.0;
        for (std::size_t k = 0; k < alpha.size(); ++k) {
            value *= std::pow(pi[k] / total, counts[k]);
        }
        sum += value;
        sum_sq += value * value;
    }
    const double mean = sum / draws;
    const double var = sum_sq / draws - mean * mean;
    return {mean, std::sqrt(std::max(var, 0.0) / draws)};
}

KernelDictionary separated_dictionary() {
    KernelDictionary d;
    d.kernels = {{0.15, 0.05}, {0.5, 0.05}, {0.85, 0.05}};
    d.alpha = {1.0, 1.0, 1.0};
    return d;
}

}  // namespace

TEST_CASE("log_prob_counts under H0", "[screening]") {
    const std::vector<double> alpha = {1.0, 1.0};
    CHECK(log_prob_counts_h0({{0.0, 0.0}, {0.0, 0.0}}, alpha) == 0.0);
    CHECK(log_prob_counts_h0({{1.0, 0.0}, {0.0, 1.0}}, alpha) ==
          Catch::Approx(std::log(1.0 / 6.0)).margin(1e-12));
}

TEST_CASE("log_prob_counts_h0 matches Monte Carlo simplex integration", "[screening]") {
    const std::vector<double> alpha = {1.0, 1.0, 1.0};
    const SiteCounts counts{{1.0, 1.0, 0.0}, {1.0, 0.0, 1.0}};  // totals (2,1,1)
    std::mt19937_64 gen(2024);
    const auto mc = mc_sequence_marginal({2.0, 1.0, 1.0}, alpha, 1000000, gen);
    const double exact = std::exp(log_prob_counts_h0(counts, alpha));
    CHECK(std::abs(exact - mc.mean) < 3.0 * mc.se);
}

TEST_CASE("log_prob_counts under H1", "[screening]") {
    const std::vector<double> alpha = {1.0, 1.0};
    CHECK(log_prob_counts_h1({{0.0, 0.0}, {0.0, 0.0}}, alpha) == 0.0);
    // beta(2,1) beta(1,2) / beta(1,1)^2 = 1/4
    CHECK(log_prob_counts_h1({{1.0, 0.0}, {0.0, 1.0}}, alpha) ==
          Catch::Approx(std::log(0.25)).margin(1e-12));
    // swapping the groups leaves the value bitwise unchanged
    const SiteCounts counts{{3.0, 1.0}, {0.0, 2.0}};
    const SiteCounts swapped{{0.0, 2.0}, {3.0, 1.0}};
    CHECK(log_prob_counts_h1(counts, alpha) == log_prob_counts_h1(swapped, alpha));
}

TEST_CASE("posterior_h0_given_counts closed form", "[screening]") {
    const std::vector<double> alpha = {1.0, 1.0};
    const SiteCounts counts{{1.0, 0.0}, {0.0, 1.0}};
    CHECK(posterior_h0_given_counts(counts, alpha, 1.0) == 1.0);
    CHECK(posterior_h0_given_counts(counts, alpha, 0.0) == 0.0);
    CHECK(posterior_h0_given_counts(counts, alpha, 0.5) == Catch::Approx(0.4).margin(1e-12));
    const SiteCounts stronger{{2.0, 0.0}, {0.0, 2.0}};
    CHECK(posterior_h0_given_counts(stronger, alpha, 0.5) ==
          Catch::Approx(3.0 / 13.0).margin(1e-12));
}

TEST_CASE("posterior_h0 symmetries and monotonicity", "[screening]") {
    Rng rng(99);
    for (int rep = 0; rep < 30; ++rep) {
        const std::size_t n_kernels = 2 + rng.uniform_int(3);
        std::vector<double> alpha(n_kernels);
        for (auto& a : alpha) a = rng.uniform(0.2, 3.0);
        SiteCounts counts{std::vector<double>(n_kernels, 0.0), std::vector<double>(n_kernels, 0.0)};
        for (std::size_t k = 0; k < n_kernels; ++k) {
            counts.n0[k] = static_cast<double>(rng.uniform_int(6));
            counts.n1[k] = static_cast<double>(rng.uniform_int(6));
        }
        counts.n0[0] += 1.0;
        counts.n1[n_kernels - 1] += 1.0;  // keep the counts informative

        // group swap, bitwise
        const SiteCounts swapped{counts.n1, counts.n0};
        CHECK(posterior_h0_given_counts(counts, alpha, 0.3) ==
              posterior_h0_given_counts(swapped, alpha, 0.3));

        // consistent kernel permutation
        std::vector<std::size_t> perm(n_kernels);
        for (std::size_t k = 0; k < n_kernels; ++k) perm[k] = k;
        rng.shuffle(perm);
        SiteCounts permuted{std::vector<double>(n_kernels), std::vector<double>(n_kernels)};
        std::vector<double> alpha_perm(n_kernels);
        for (std::size_t k = 0; k < n_kernels; ++k) {
            permuted.n0[k] = counts.n0[perm[k]];
            permuted.n1[k] = counts.n1[perm[k]];
            alpha_perm[k] = alpha[perm[k]];
        }
        CHECK(posterior_h0_given_counts(permuted, alpha_perm, 0.3) ==
              Catch::Approx(posterior_h0_given_counts(counts, alpha, 0.3)).margin(1e-12));

        // strictly increasing in p0
        double prev = posterior_h0_given_counts(counts, alpha, 0.01);
        for (double p0 = 0.1; p0 < 1.0; p0 += 0.1) {
            const double next = posterior_h0_given_counts(counts, alpha, p0);
            CHECK(next > prev);
            prev = next;
        }
    }
}

TEST_CASE("posterior_h0 finite at a million observations per group", "[screening]") {
    const std::vector<double> alpha = {0.5, 1.5, 2.0};
    const SiteCounts counts{{700000.0, 200000.0, 100000.0}, {650000.0, 250000.0, 100000.0}};
    const double p = posterior_h0_given_counts(counts, alpha, 0.5);
    CHECK(std::isfinite(log_prob_counts_h0(counts, alpha)));
    CHECK(std::isfinite(log_prob_counts_h1(counts, alpha)));
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
}

TEST_CASE("two-group allocation degenerate cases", "[screening]") {
    Rng rng(3);
    KernelDictionary single;
    single.kernels = {{0.5, 0.2}};
    single.alpha = {1.0};
    const std::vector<double> values = {0.2, 0.8, 0.5};
    const std::vector<std::uint8_t> group = {0, 1, 0};
    const auto all_one = gibbs_allocate_two_group(values, single, {1.0}, {1.0}, group, rng);
    for (auto a : all_one) CHECK(a == 0);

    KernelDictionary pair;
    pair.kernels = {{0.4, 0.1}, {0.6, 0.1}};
    pair.alpha = {1.0, 1.0};
    const std::vector<double> w_degenerate = {1.0, 0.0};
    const auto forced = gibbs_allocate_two_group(values, pair, w_degenerate, w_degenerate, group, rng);
    for (auto a : forced) CHECK(a == 0);
}

TEST_CASE("two-group allocation frequencies follow the weights at equal density", "[screening]") {
    Rng rng(4);
    KernelDictionary pair;
    pair.kernels = {{0.4, 0.1}, {0.6, 0.1}};
    pair.alpha = {1.0, 1.0};
    // x = 0.5 sits symmetrically between the kernels, so densities cancel and
    // the allocation probability equals the weight.
    const std::size_t draws = 100000;
    const std::vector<double> values(draws, 0.5);
    const std::vector<std::uint8_t> group(draws, 0);
    const auto assignments =
        gibbs_allocate_two_group(values, pair, {0.3, 0.7}, {0.5, 0.5}, group, rng);
    double freq0 = 0.0;
    for (auto a : assignments) freq0 += a == 0;
    CHECK(freq0 / static_cast<double>(draws) == Catch::Approx(0.3).margin(0.01));
}

TEST_CASE("two-group weight draw respects the H0 indicator", "[screening]") {
    Rng rng(6);
    const std::vector<double> alpha = {1.0, 1.0};
    const SiteCounts counts{{3.0, 1.0}, {1.0, 2.0}};
    std::vector<double> w0(2), w1(2);

    draw_two_group_weights(counts, alpha, 1.0, WeightDrawMode::kBernoulli, rng, w0, w1);
    CHECK(w0 == w1);

    // p = 0: independent draws, near-zero correlation
    const int draws = 10000;
    double s0 = 0.0, s1 = 0.0, s01 = 0.0, s00 = 0.0, s11 = 0.0;
    for (int d = 0; d < draws; ++d) {
        draw_two_group_weights(counts, alpha, 0.0, WeightDrawMode::kBernoulli, rng, w0, w1);
        s0 += w0[0];
        s1 += w1[0];
        s01 += w0[0] * w1[0];
        s00 += w0[0] * w0[0];
        s11 += w1[0] * w1[0];
    }
    const double m0 = s0 / draws, m1 = s1 / draws;
    const double corr = (s01 / draws - m0 * m1) /
                        std::sqrt((s00 / draws - m0 * m0) * (s11 / draws - m1 * m1));
    CHECK(std::abs(corr) < 3.0 / std::sqrt(static_cast<double>(draws)));
}

TEST_CASE("two-group weight draw marginal mean is the p-mixture", "[screening]") {
    Rng rng(8);
    const std::vector<double> alpha = {1.0, 1.0};
    const SiteCounts counts{{3.0, 1.0}, {1.0, 2.0}};
    const double p = 0.4;
    // E w0[0] = p (alpha+n)[0]/sum + (1-p) (alpha+n0)[0]/sum0
    const double expected = p * (5.0 / 9.0) + (1.0 - p) * (4.0 / 6.0);
    for (auto mode : {WeightDrawMode::kBernoulli, WeightDrawMode::kConvexCombination}) {
        std::vector<double> w0(2), w1(2);
        double sum = 0.0;
        const int draws = 40000;
        for (int d = 0; d < draws; ++d) {
            draw_two_group_weights(counts, alpha, p, mode, rng, w0, w1);
            sum += w0[0];
        }
        CHECK(sum / draws == Catch::Approx(expected).margin(0.012));
    }
}

TEST_CASE("p0 update samples the right Beta", "[screening]") {
    Rng rng(10);
    // M = 0: uniform draw
    double mean = 0.0;
    for (int d = 0; d < 10000; ++d) {
        const double x = update_p0(std::vector<double>{}, 1.0, 1.0, rng);
        CHECK(x > 0.0);
        CHECK(x < 1.0);
        mean += x;
    }
    CHECK(mean / 10000 == Catch::Approx(0.5).margin(0.01));

    const std::vector<double> ones(10, 1.0);
    double sum = 0.0;
    for (int d = 0; d < 100000; ++d) sum += update_p0(ones, 1.0, 1.0, rng);
    CHECK(sum / 100000 == Catch::Approx(11.0 / 12.0).margin(0.005));

    const std::vector<double> halves(10, 0.5);
    sum = 0.0;
    for (int d = 0; d < 100000; ++d) sum += update_p0(halves, 1.0, 1.0, rng);
    CHECK(sum / 100000 == Catch::Approx(0.5).margin(0.005));
}

TEST_CASE("screen with K=1 carries no information", "[screening]") {
    ScreeningDataset dataset;
    dataset.values = Matrix<double>(1, 6);
    for (std::size_t n = 0; n < 6; ++n) dataset.values(0, n) = 0.1 + 0.15 * static_cast<double>(n);
    dataset.group = {0, 0, 0, 1, 1, 1};
    dataset.site_ids = {"s"};
    KernelDictionary single;
    single.kernels = {{0.5, 0.3}};
    single.alpha = {2.0};
    GibbsConfig config;
    config.iterations = 50;
    config.burn_in = 10;
    config.p0_mode = P0Mode::kFixed;
    config.p0_fixed = 0.5;
    const auto result = screen(dataset, single, config);
    CHECK(result.post_h0[0] == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("identical data in both groups favors H0", "[screening]") {
    Rng rng(21);
    const auto dictionary = separated_dictionary();
    const std::size_t half = 60;
    ScreeningDataset dataset;
    dataset.values = Matrix<double>(1, 2 * half);
    dataset.group.resize(2 * half);
    dataset.site_ids = {"dup"};
    const std::vector<double> weights = {0.5, 0.3, 0.2};
    for (std::size_t n = 0; n < half; ++n) {
        const std::size_t k = rng.categorical(weights);
        const double x = trunc_normal_quantile(rng.u01_open(), dictionary.kernels[k]);
        dataset.values(0, n) = x;
        dataset.values(0, half + n) = x;
        dataset.group[n] = 0;
        dataset.group[half + n] = 1;
    }
    GibbsConfig config;
    config.iterations = 400;
    config.burn_in = 100;
    config.p0_mode = P0Mode::kFixed;
    config.p0_fixed = 0.5;
    config.seed = 77;
    const auto result = screen(dataset, dictionary, config);
    CHECK(result.post_h0[0] > 0.5);
}

TEST_CASE("screen is deterministic and thread-count invariant", "[screening]") {
    const auto dictionary = separated_dictionary();
    SimulationSpec spec;
    spec.n_total = 40;
    spec.k = 3;
    spec.kernels = dictionary.kernels;
    spec.h0 = true;
    spec.weights_shared = {0.4, 0.4, 0.2};
    spec.seed = 5;
    auto dataset = sample_dataset(spec);
    // add more sites by reusing the same draw with different seeds
    ScreeningDataset multi;
    multi.values = Matrix<double>(4, spec.n_total);
    multi.group = dataset.group;
    for (std::size_t m = 0; m < 4; ++m) {
        spec.seed = 5 + m;
        auto d = sample_dataset(spec);
        multi.group = d.group;
        for (std::size_t n = 0; n < spec.n_total; ++n) multi.values(m, n) = d.values(0, n);
        multi.site_ids.push_back("s" + std::to_string(m));
    }

    GibbsConfig config;
    config.iterations = 150;
    config.burn_in = 50;
    config.seed = 42;
    config.threads = 1;
    const auto a = screen(multi, dictionary, config);
    const auto b = screen(multi, dictionary, config);
    config.threads = 4;
    const auto c = screen(multi, dictionary, config);
    CHECK(a.post_h0 == b.post_h0);
    CHECK(a.post_h0 == c.post_h0);
    CHECK(a.p0_draws == c.p0_draws);
    CHECK(a.mean_weights0 == c.mean_weights0);

    // posterior-mean weight rows are simplex points
    for (std::size_t m = 0; m < 4; ++m) {
        double total0 = 0.0, total1 = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
            CHECK(a.mean_weights0(m, k) >= 0.0);
            total0 += a.mean_weights0(m, k);
            total1 += a.mean_weights1(m, k);
        }
        CHECK(total0 == Catch::Approx(1.0).margin(1e-9));
        CHECK(total1 == Catch::Approx(1.0).margin(1e-9));
    }

    // the memory guard path (per-site recomputation) gives identical results
    config.threads = 1;
    config.cache_budget_bytes = 0;
    const auto uncached = screen(multi, dictionary, config);
    CHECK(uncached.post_h0 == a.post_h0);
}

TEST_CASE("identity permutation reproduces screen exactly", "[screening]") {
    const auto dictionary = separated_dictionary();
    SimulationSpec spec;
    spec.n_total = 30;
    spec.k = 3;
    spec.kernels = dictionary.kernels;
    spec.h0 = true;
    spec.weights_shared = {0.3, 0.3, 0.4};
    spec.seed = 9;
    const auto dataset = sample_dataset(spec);

    GibbsConfig config;
    config.iterations = 80;
    config.burn_in = 20;
    config.seed = 11;
    std::vector<std::size_t> identity(dataset.n_subjects());
    for (std::size_t n = 0; n < identity.size(); ++n) identity[n] = n;
    const auto permuted = apply_label_permutation(dataset, identity);
    const auto a = screen(dataset, dictionary, config);
    const auto b = screen(permuted, dictionary, config);
    CHECK(a.post_h0 == b.post_h0);
}

TEST_CASE("permutations preserve group sizes", "[screening]") {
    const auto dictionary = separated_dictionary();
    SimulationSpec spec;
    spec.n_total = 25;
    spec.k = 3;
    spec.kernels = dictionary.kernels;
    spec.h0 = true;
    spec.weights_shared = {0.3, 0.3, 0.4};
    spec.seed = 13;
    const auto dataset = sample_dataset(spec);
    const auto n0 = dataset.group_size(0);

    Rng rng(derive_seed(55, stream::kPermutation, 0));
    for (int p = 0; p < 20; ++p) {
        std::vector<std::size_t> perm(dataset.n_subjects());
        for (std::size_t n = 0; n < perm.size(); ++n) perm[n] = n;
        rng.shuffle(perm);
        const auto permuted = apply_label_permutation(dataset, perm);
        CHECK(permuted.group_size(0) == n0);
    }
}

TEST_CASE("permuted and unpermuted posteriors agree under H0", "[screening]") {
    // Two-sample KS between the site-level posterior distributions with and
    // without label permutation, on data where the labels are exchangeable.
    const auto dictionary = separated_dictionary();
    const std::size_t n_sites = 60;
    const std::size_t n_subjects = 80;
    int passes = 0;
    const int replicates = 20;
    for (int rep = 0; rep < replicates; ++rep) {
        Rng rng(derive_seed(1000 + rep, stream::kReplicate, rep));
        ScreeningDataset dataset;
        dataset.values = Matrix<double>(n_sites, n_subjects);
        dataset.group.resize(n_subjects);
        for (std::size_t n = 0; n < n_subjects; ++n) dataset.group[n] = n % 2;
        for (std::size_t m = 0; m < n_sites; ++m) {
            dataset.site_ids.push_back("s" + std::to_string(m));
            const auto weights = rng.dirichlet(dictionary.alpha);
            for (std::size_t n = 0; n < n_subjects; ++n) {
                const std::size_t k = rng.categorical(weights);
                dataset.values(m, n) = trunc_normal_quantile(rng.u01_open(), dictionary.kernels[k]);
            }
        }
        GibbsConfig config;
        config.iterations = 250;
        config.burn_in = 80;
        config.seed = 300 + rep;
        const auto base = screen(dataset, dictionary, config);
        const auto perms = permutation_null(dataset, dictionary, config, 1);

        std::vector<double> a = base.post_h0;
        std::vector<double> b(n_sites);
        for (std::size_t m = 0; m < n_sites; ++m) b[m] = perms(m, 0);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        double d_stat = 0.0;
        std::size_t i = 0, j = 0;
        while (i < a.size() && j < b.size()) {
            if (a[i] <= b[j]) {
                ++i;
            } else {
                ++j;
            }
            d_stat = std::max(d_stat, std::abs(static_cast<double>(i) / a.size() -
                                               static_cast<double>(j) / b.size()));
        }
        const double critical = 1.6276 * std::sqrt(2.0 / static_cast<double>(n_sites));
        passes += d_stat < critical;
    }
    CHECK(passes >= 19);
}

TEST_CASE("permutation_null rejects non-positive n_perm", "[screening]") {
    const auto dictionary = separated_dictionary();
    ScreeningDataset dataset;
    dataset.values = Matrix<double>(1, 2);
    dataset.values(0, 0) = 0.4;
    dataset.values(0, 1) = 0.6;
    dataset.group = {0, 1};
    dataset.site_ids = {"s"};
    GibbsConfig config;
    CHECK_THROWS_AS(permutation_null(dataset, dictionary, config, 0), NumericalError);
}
