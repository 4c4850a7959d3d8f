#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "mixscreen/common.hpp"
#include "mixscreen/model.hpp"
#include "mixscreen/special_math.hpp"

namespace mixscreen {

struct AsymptoticInputs {
    SiteCounts counts;
    std::vector<double> alpha;
    double p0 = 0.5;
    double lambda0 = 0.5;

    static AsymptoticInputs from_counts(SiteCounts counts, std::vector<double> alpha, double p0) {
        AsymptoticInputs in;
        double n0 = 0.0, n1 = 0.0;
        for (double v : counts.n0) n0 += v;
        for (double v : counts.n1) n1 += v;
        if (n0 <= 0.0 || n1 <= 0.0) {
            throw NumericalError("asymptotic inputs: both groups need observations");
        }
        in.lambda0 = n0 / (n0 + n1);
        in.counts = std::move(counts);
        in.alpha = std::move(alpha);
        in.p0 = p0;
        return in;
    }

    void validate() const {
        validate_concentration(alpha);
        if (alpha.size() != counts.n0.size() || alpha.size() != counts.n1.size()) {
            throw NumericalError("asymptotic inputs: dimension mismatch");
        }
        if (!(p0 > 0.0) || !(p0 < 1.0)) {
            throw NumericalError("asymptotic inputs: p0 must lie in (0,1)");
        }
        if (!(lambda0 > 0.0) || !(lambda0 < 1.0)) {
            throw NumericalError("asymptotic inputs: lambda0 must lie in (0,1)");
        }
        double n0 = 0.0, n1 = 0.0;
        for (double v : counts.n0) n0 += v;
        for (double v : counts.n1) n1 += v;
        if (n0 > 0.0 && n1 > 0.0 && std::abs(lambda0 - n0 / (n0 + n1)) > 1e-12) {
            throw NumericalError("asymptotic inputs: lambda0 inconsistent with counts");
        }
    }
};

// Leading-order log posterior odds of H0 given allocations: the large-N form
// log c + (K-1)/2 log N - sum_k (n0k log r0k + n1k log r1k), with the constant
// evaluated exactly as displayed. Undefined when any empirical proportion is
// zero; callers fall back to the exact closed form.
inline double log_asymptotic_bf(const AsymptoticInputs& in) {
    in.validate();
    const std::size_t n_kernels = in.alpha.size();
    double n0_total = 0.0, n1_total = 0.0;
    for (std::size_t k = 0; k < n_kernels; ++k) {
        n0_total += in.counts.n0[k];
        n1_total += in.counts.n1[k];
    }
    const double n_total = n0_total + n1_total;

    double log_bf = std::log(in.p0) - std::log1p(-in.p0);
    const double half_km1 = 0.5 * (static_cast<double>(n_kernels) - 1.0);
    log_bf += half_km1 * (std::log(in.lambda0) + std::log1p(-in.lambda0) - kLogTwoPi);
    log_bf += half_km1 * std::log(n_total);

    for (std::size_t k = 0; k < n_kernels; ++k) {
        const double p0k = in.counts.n0[k] / n0_total;
        const double p1k = in.counts.n1[k] / n1_total;
        const double pk = (in.counts.n0[k] + in.counts.n1[k]) / n_total;
        if (!(p0k > 0.0) || !(p1k > 0.0) || !(pk > 0.0)) {
            throw NumericalError("log_asymptotic_bf: zero empirical proportion at kernel " +
                                 std::to_string(k + 1) + "; asymptotic form undefined");
        }
        const double log_r0 = std::log(p0k) - std::log(pk);
        const double log_r1 = std::log(p1k) - std::log(pk);
        log_bf += (in.alpha[k] + 0.5) * std::log(pk);
        log_bf += (0.5 - in.alpha[k]) * (log_r0 + log_r1);
        log_bf -= in.counts.n0[k] * log_r0 + in.counts.n1[k] * log_r1;
    }
    return log_bf;
}

// Under-H0 normalization: 2 log BF / (K-1), linear in log N at slope 1.
inline double normalized_bf_h0(double log_bf, std::size_t n_kernels) {
    if (n_kernels < 2) throw NumericalError("normalized_bf_h0: requires K >= 2");
    return 2.0 * log_bf / (static_cast<double>(n_kernels) - 1.0);
}

// The KL-weighted divisor of the under-H1 normalization; zero iff the two
// weight vectors coincide.
inline double h1_rate_denominator(std::span<const double> pi0, std::span<const double> pi1,
                                  double lambda0) {
    if (pi0.size() != pi1.size() || pi0.empty()) {
        throw NumericalError("h1_rate_denominator: dimension mismatch");
    }
    if (!(lambda0 > 0.0) || !(lambda0 < 1.0)) {
        throw NumericalError("h1_rate_denominator: lambda0 must lie in (0,1)");
    }
    double d = 0.0;
    for (std::size_t k = 0; k < pi0.size(); ++k) {
        const double star = lambda0 * pi0[k] + (1.0 - lambda0) * pi1[k];
        if (pi0[k] > 0.0) d += lambda0 * pi0[k] * (std::log(pi0[k]) - std::log(star));
        if (pi1[k] > 0.0) d += (1.0 - lambda0) * pi1[k] * (std::log(pi1[k]) - std::log(star));
    }
    return d;
}

// Under-H1 normalization: log BF divided by the mixture-KL rate, linear in N
// at slope -1.
inline double normalized_bf_h1(double log_bf, std::span<const double> pi0,
                               std::span<const double> pi1, double lambda0) {
    const double d = h1_rate_denominator(pi0, pi1, lambda0);
    if (!(d > 0.0)) {
        throw NumericalError("normalized_bf_h1: weight vectors coincide; normalization undefined");
    }
    return log_bf / d;
}

// The per-kernel statistic exactly as displayed in the asymptotic H0 form:
// sqrt(lambda0 (1-lambda0)) * N * (p0k - p1k)^2.
inline std::vector<double> chi_square_statistic_h0(const SiteCounts& counts, double lambda0) {
    const std::size_t n_kernels = counts.n0.size();
    double n0_total = 0.0, n1_total = 0.0;
    for (std::size_t k = 0; k < n_kernels; ++k) {
        n0_total += counts.n0[k];
        n1_total += counts.n1[k];
    }
    if (!(n0_total > 0.0) || !(n1_total > 0.0)) {
        throw NumericalError("chi_square_statistic_h0: both groups need observations");
    }
    const double n_total = n0_total + n1_total;
    const double scale = std::sqrt(lambda0 * (1.0 - lambda0)) * n_total;
    std::vector<double> out(n_kernels);
    for (std::size_t k = 0; k < n_kernels; ++k) {
        const double diff = counts.n0[k] / n0_total - counts.n1[k] / n1_total;
        out[k] = scale * diff * diff;
    }
    return out;
}

// Studentized variant: N lambda0 (1-lambda0) (p0k - p1k)^2 / {pk (1 - pk)},
// the exact chi-square(1) pivot under H0 (two-sample proportion z^2). The
// displayed statistic above misses the pooled-variance factor, so
// distributional checks run against this one.
inline std::vector<double> chi_square_pivot_h0(const SiteCounts& counts, double lambda0) {
    const std::size_t n_kernels = counts.n0.size();
    double n0_total = 0.0, n1_total = 0.0;
    for (std::size_t k = 0; k < n_kernels; ++k) {
        n0_total += counts.n0[k];
        n1_total += counts.n1[k];
    }
    if (!(n0_total > 0.0) || !(n1_total > 0.0)) {
        throw NumericalError("chi_square_pivot_h0: both groups need observations");
    }
    const double n_total = n0_total + n1_total;
    std::vector<double> out(n_kernels);
    for (std::size_t k = 0; k < n_kernels; ++k) {
        const double pk = (counts.n0[k] + counts.n1[k]) / n_total;
        if (!(pk > 0.0) || !(pk < 1.0)) {
            throw NumericalError("chi_square_pivot_h0: degenerate pooled proportion at kernel " +
                                 std::to_string(k + 1));
        }
        const double diff = counts.n0[k] / n0_total - counts.n1[k] / n1_total;
        out[k] = n_total * lambda0 * (1.0 - lambda0) * diff * diff / (pk * (1.0 - pk));
    }
    return out;
}

}  // namespace mixscreen
