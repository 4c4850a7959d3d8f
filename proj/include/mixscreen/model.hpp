#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mixscreen/common.hpp"
#include "mixscreen/special_math.hpp"

namespace mixscreen {

// M sites by N subjects of values in [0,1], plus a binary group label per
// subject. Immutable once constructed; validation happens here, not in the
// samplers.
struct ScreeningDataset {
    Matrix<double> values;            // M x N
    std::vector<std::uint8_t> group;  // length N, entries 0/1
    std::vector<std::string> site_ids;

    std::size_t n_sites() const { return values.rows(); }
    std::size_t n_subjects() const { return values.cols(); }

    std::size_t group_size(int g) const {
        std::size_t n = 0;
        for (auto label : group) n += (label == g);
        return n;
    }

    void validate() const {
        if (group.size() != values.cols()) {
            throw DataError("dataset: group labels do not match subject count");
        }
        if (site_ids.size() != values.rows()) {
            throw DataError("dataset: site_ids do not match site count");
        }
        for (auto g : group) {
            if (g > 1) throw DataError("dataset: group labels must be 0 or 1");
        }
        if (group_size(0) == 0 || group_size(1) == 0) {
            throw DataError("dataset: both groups must be non-empty");
        }
        for (std::size_t m = 0; m < values.rows(); ++m) {
            for (std::size_t n = 0; n < values.cols(); ++n) {
                const double x = values(m, n);
                if (!(x >= 0.0 && x <= 1.0)) {
                    throw DataError("dataset: value out of [0,1] at site '" + site_ids[m] +
                                    "', sample column " + std::to_string(n + 1));
                }
            }
        }
    }
};

// The shared dictionary: K truncated-normal kernels with strictly increasing
// means, plus the common Dirichlet concentration.
struct KernelDictionary {
    std::vector<TruncNormalKernel> kernels;
    std::vector<double> alpha;

    std::size_t size() const { return kernels.size(); }

    void validate() const {
        if (kernels.empty()) throw NumericalError("dictionary: needs at least one kernel");
        if (kernels.size() > 255) throw NumericalError("dictionary: more than 255 kernels unsupported");
        if (alpha.size() != kernels.size()) {
            throw NumericalError("dictionary: alpha length must equal kernel count");
        }
        for (const auto& k : kernels) k.validate();
        for (std::size_t k = 1; k < kernels.size(); ++k) {
            if (!(kernels[k - 1].mu < kernels[k].mu)) {
                throw NumericalError("dictionary: kernel means must be strictly increasing");
            }
        }
        validate_concentration(alpha);
    }

    bool operator==(const KernelDictionary&) const = default;
};

// Per-site kernel counts split by group; n = n0 + n1 elementwise.
struct SiteCounts {
    std::vector<double> n0;
    std::vector<double> n1;

    std::vector<double> total() const {
        std::vector<double> n(n0.size());
        for (std::size_t k = 0; k < n0.size(); ++k) n[k] = n0[k] + n1[k];
        return n;
    }
};

// Kernel memberships for every (site, subject) cell plus their tabulation.
// Assignments are 0-based internally; external I/O is 1-based.
struct AllocationState {
    Matrix<std::uint8_t> assignments;  // M x N
    Matrix<int> counts0;               // M x K
    Matrix<int> counts1;               // M x K
};

inline void tabulate_counts(const Matrix<std::uint8_t>& assignments,
                            std::span<const std::uint8_t> group, std::size_t n_kernels,
                            Matrix<int>& counts0, Matrix<int>& counts1) {
    const std::size_t n_sites = assignments.rows();
    const std::size_t n_subjects = assignments.cols();
    counts0 = Matrix<int>(n_sites, n_kernels, 0);
    counts1 = Matrix<int>(n_sites, n_kernels, 0);
    for (std::size_t m = 0; m < n_sites; ++m) {
        for (std::size_t n = 0; n < n_subjects; ++n) {
            const std::uint8_t k = assignments(m, n);
            if (k >= n_kernels) {
                throw NumericalError("tabulate_counts: kernel index " + std::to_string(k + 1) +
                                     " out of range at site " + std::to_string(m + 1));
            }
            (group[n] == 0 ? counts0 : counts1)(m, k) += 1;
        }
    }
}

enum class P0Mode { kLearned, kFixed };

// How the two-group weight draw treats the H0 indicator: an explicit
// Bernoulli draw (the model statement) or the literal convex combination of
// the shared and group-specific Dirichlet draws.
enum class WeightDrawMode { kBernoulli, kConvexCombination };

struct GibbsConfig {
    int iterations = 5000;
    int burn_in = 1000;
    std::uint64_t seed = 0;
    double p0_prior_a = 1.0;
    double p0_prior_b = 1.0;
    P0Mode p0_mode = P0Mode::kLearned;
    double p0_fixed = 0.5;
    WeightDrawMode weight_draw = WeightDrawMode::kBernoulli;
    unsigned threads = 1;
    // Above this many bytes the component log-likelihood cache is dropped in
    // favour of per-site recomputation.
    std::size_t cache_budget_bytes = std::size_t{2} << 30;

    void validate() const {
        if (iterations <= 0) throw NumericalError("config: iterations must be positive");
        if (burn_in < 0) throw NumericalError("config: burn_in must be non-negative");
        if (!(p0_prior_a > 0.0) || !(p0_prior_b > 0.0)) {
            throw NumericalError("config: P0 prior parameters must be positive");
        }
        if (p0_mode == P0Mode::kFixed && !(p0_fixed >= 0.0 && p0_fixed <= 1.0)) {
            throw NumericalError("config: fixed P0 must lie in [0,1]");
        }
    }
};

// Screening output: Rao-Blackwellized posterior of H0 per site, the P0 trace,
// and posterior-mean weights per group.
struct ScreeningResult {
    std::vector<double> post_h0;   // length M
    std::vector<double> log_bf;    // length M, log posterior odds of H0
    std::vector<double> p0_draws;  // post-burn-in P0 draws (constant when fixed)
    Matrix<double> mean_weights0;  // M x K
    Matrix<double> mean_weights1;  // M x K
};

}  // namespace mixscreen
