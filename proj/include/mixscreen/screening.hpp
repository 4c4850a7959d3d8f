#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mixscreen/common.hpp"
#include "mixscreen/model.hpp"
#include "mixscreen/rng.hpp"
#include "mixscreen/special_math.hpp"

namespace mixscreen {

namespace detail {
inline std::vector<double> shifted_alpha(std::span<const double> counts, std::span<const double> alpha) {
    std::vector<double> out(alpha.size());
    for (std::size_t k = 0; k < alpha.size(); ++k) out[k] = alpha[k] + counts[k];
    return out;
}
}  // namespace detail

// log pr(C | H0) up to the common multinomial factor: log beta(n + alpha) - log beta(alpha).
inline double log_prob_counts_h0(const SiteCounts& counts, std::span<const double> alpha) {
    const auto n = counts.total();
    return log_mv_beta(detail::shifted_alpha(n, alpha)) - log_mv_beta(alpha);
}

// log pr(C | H1): log beta(n0 + alpha) + log beta(n1 + alpha) - 2 log beta(alpha).
inline double log_prob_counts_h1(const SiteCounts& counts, std::span<const double> alpha) {
    const double lb_alpha = log_mv_beta(alpha);
    return log_mv_beta(detail::shifted_alpha(counts.n0, alpha)) +
           log_mv_beta(detail::shifted_alpha(counts.n1, alpha)) - 2.0 * lb_alpha;
}

// log posterior odds of H0 given allocations; -inf/+inf at degenerate p0.
inline double log_posterior_odds_h0(const SiteCounts& counts, std::span<const double> alpha, double p0) {
    if (p0 <= 0.0) return kNegInf;
    if (p0 >= 1.0) return -kNegInf;
    return std::log(p0) - std::log1p(-p0) + log_prob_counts_h0(counts, alpha) -
           log_prob_counts_h1(counts, alpha);
}

// The closed-form conditional posterior of H0, evaluated in log space.
inline double posterior_h0_given_counts(const SiteCounts& counts, std::span<const double> alpha,
                                        double p0) {
    if (p0 <= 0.0) return 0.0;
    if (p0 >= 1.0) return 1.0;
    const double log_odds = log_posterior_odds_h0(counts, alpha, p0);
    return 1.0 / (1.0 + std::exp(-log_odds));
}

// One draw from the P0 full conditional, Beta(a + sum p_m, b + M - sum p_m).
inline double update_p0(std::span<const double> site_probs, double prior_a, double prior_b, Rng& rng) {
    double total = 0.0;
    for (double p : site_probs) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw NumericalError("update_p0: site probability outside [0,1]");
        }
        total += p;
    }
    const double m = static_cast<double>(site_probs.size());
    return rng.beta(prior_a + total, prior_b + m - total);
}

// Categorical allocation of each subject given group-specific weights and the
// site's per-subject kernel log densities.
inline void allocate_site_two_group(std::span<const double> log_dens,  // N x K row-major
                                    std::span<const double> weights0, std::span<const double> weights1,
                                    std::span<const std::uint8_t> group, std::span<std::uint8_t> out,
                                    Rng& rng, std::vector<double>& scratch) {
    const std::size_t n_kernels = weights0.size();
    const std::size_t n_subjects = group.size();
    scratch.resize(2 * n_kernels);
    double* log_w0 = scratch.data();
    double* log_w1 = scratch.data() + n_kernels;
    for (std::size_t k = 0; k < n_kernels; ++k) {
        log_w0[k] = weights0[k] > 0.0 ? std::log(weights0[k]) : kNegInf;
        log_w1[k] = weights1[k] > 0.0 ? std::log(weights1[k]) : kNegInf;
    }
    std::vector<double> lw(n_kernels);
    for (std::size_t n = 0; n < n_subjects; ++n) {
        const double* row = log_dens.data() + n * n_kernels;
        const double* lwg = group[n] == 0 ? log_w0 : log_w1;
        for (std::size_t k = 0; k < n_kernels; ++k) lw[k] = lwg[k] + row[k];
        out[n] = static_cast<std::uint8_t>(rng.categorical_from_log(lw));
    }
}

// Spec-level operation: allocate one site's subjects against a fixed dictionary.
inline std::vector<std::uint8_t> gibbs_allocate_two_group(std::span<const double> site_values,
                                                          const KernelDictionary& dictionary,
                                                          std::span<const double> weights0,
                                                          std::span<const double> weights1,
                                                          std::span<const std::uint8_t> group, Rng& rng) {
    const std::size_t n_kernels = dictionary.size();
    const std::size_t n_subjects = site_values.size();
    std::vector<double> log_dens(n_subjects * n_kernels);
    for (std::size_t n = 0; n < n_subjects; ++n) {
        for (std::size_t k = 0; k < n_kernels; ++k) {
            log_dens[n * n_kernels + k] = trunc_normal_logpdf(site_values[n], dictionary.kernels[k]);
        }
    }
    std::vector<std::uint8_t> out(n_subjects);
    std::vector<double> scratch;
    allocate_site_two_group(log_dens, weights0, weights1, group, out, rng, scratch);
    return out;
}

// Draw the two group weight vectors given the H0 posterior p_m. Bernoulli
// mode draws the indicator and then the matching Dirichlet; the convex mode
// blends the shared and group-specific draws with weight p_m.
inline void draw_two_group_weights(const SiteCounts& counts, std::span<const double> alpha, double p_m,
                                   WeightDrawMode mode, Rng& rng, std::span<double> weights0,
                                   std::span<double> weights1) {
    const auto n = counts.total();
    if (mode == WeightDrawMode::kBernoulli) {
        if (rng.bernoulli(p_m)) {
            rng.dirichlet(detail::shifted_alpha(n, alpha), weights0);
            for (std::size_t k = 0; k < weights0.size(); ++k) weights1[k] = weights0[k];
        } else {
            rng.dirichlet(detail::shifted_alpha(counts.n0, alpha), weights0);
            rng.dirichlet(detail::shifted_alpha(counts.n1, alpha), weights1);
        }
        return;
    }
    std::vector<double> shared(alpha.size());
    rng.dirichlet(detail::shifted_alpha(n, alpha), shared);
    rng.dirichlet(detail::shifted_alpha(counts.n0, alpha), weights0);
    rng.dirichlet(detail::shifted_alpha(counts.n1, alpha), weights1);
    for (std::size_t k = 0; k < alpha.size(); ++k) {
        weights0[k] = p_m * shared[k] + (1.0 - p_m) * weights0[k];
        weights1[k] = p_m * shared[k] + (1.0 - p_m) * weights1[k];
    }
}

namespace detail {

// Per-site kernel log densities, either cached up front for the whole run or
// recomputed per sweep when the cache would blow the memory budget.
class ComponentLogLik {
public:
    ComponentLogLik(const ScreeningDataset& dataset, const KernelDictionary& dictionary,
                    std::size_t budget_bytes)
        : dataset_(dataset), dictionary_(dictionary) {
        const std::size_t needed =
            dataset.n_sites() * dataset.n_subjects() * dictionary.size() * sizeof(double);
        cached_ = needed <= budget_bytes;
        if (cached_) {
            cache_.resize(dataset.n_sites() * dataset.n_subjects() * dictionary.size());
            for (std::size_t m = 0; m < dataset.n_sites(); ++m) {
                fill_site(m, site_span(m));
            }
        }
    }

    bool cached() const { return cached_; }

    std::span<const double> site(std::size_t m, std::vector<double>& scratch) const {
        if (cached_) return site_span_const(m);
        scratch.resize(dataset_.n_subjects() * dictionary_.size());
        fill_site(m, scratch);
        return scratch;
    }

private:
    std::span<double> site_span(std::size_t m) {
        const std::size_t stride = dataset_.n_subjects() * dictionary_.size();
        return {cache_.data() + m * stride, stride};
    }
    std::span<const double> site_span_const(std::size_t m) const {
        const std::size_t stride = dataset_.n_subjects() * dictionary_.size();
        return {cache_.data() + m * stride, stride};
    }

    void fill_site(std::size_t m, std::span<double> out) const {
        const std::size_t n_kernels = dictionary_.size();
        for (std::size_t n = 0; n < dataset_.n_subjects(); ++n) {
            const double x = dataset_.values(m, n);
            for (std::size_t k = 0; k < n_kernels; ++k) {
                out[n * n_kernels + k] = trunc_normal_logpdf(x, dictionary_.kernels[k]);
            }
        }
    }

    const ScreeningDataset& dataset_;
    const KernelDictionary& dictionary_;
    bool cached_ = false;
    std::vector<double> cache_;
};

}  // namespace detail

// Stage-two screening: fixed dictionary, per-site two-group Gibbs updates,
// shared P0, Rao-Blackwellized posterior of H0 per site.
inline ScreeningResult screen(const ScreeningDataset& dataset, const KernelDictionary& dictionary,
                              const GibbsConfig& config) {
    dataset.validate();
    dictionary.validate();
    config.validate();

    const std::size_t n_sites = dataset.n_sites();
    const std::size_t n_subjects = dataset.n_subjects();
    const std::size_t n_kernels = dictionary.size();
    const int total_sweeps = config.iterations + config.burn_in;

    detail::ComponentLogLik loglik(dataset, dictionary, config.cache_budget_bytes);

    // Sampler state.
    Matrix<double> weights0(n_sites, n_kernels);
    Matrix<double> weights1(n_sites, n_kernels);
    {
        double alpha_sum = 0.0;
        for (double a : dictionary.alpha) alpha_sum += a;
        for (std::size_t m = 0; m < n_sites; ++m) {
            for (std::size_t k = 0; k < n_kernels; ++k) {
                weights0(m, k) = weights1(m, k) = dictionary.alpha[k] / alpha_sum;
            }
        }
    }
    Matrix<std::uint8_t> assignments(n_sites, n_subjects);
    double p0 = config.p0_mode == P0Mode::kFixed
                    ? config.p0_fixed
                    : config.p0_prior_a / (config.p0_prior_a + config.p0_prior_b);

    // Accumulators (all per-site, so the parallel site loop stays race-free).
    std::vector<double> sweep_p(n_sites);
    std::vector<LogSumAccumulator> acc_log_p(n_sites);
    std::vector<LogSumAccumulator> acc_log_q(n_sites);
    Matrix<double> sum_w0(n_sites, n_kernels, 0.0);
    Matrix<double> sum_w1(n_sites, n_kernels, 0.0);
    std::vector<double> p0_draws;
    p0_draws.reserve(config.iterations);

    for (int sweep = 0; sweep < total_sweeps; ++sweep) {
        const bool keep = sweep >= config.burn_in;
        const double p0_current = p0;
        parallel_for(n_sites, config.threads, [&](std::size_t m) {
            Rng rng(derive_seed(config.seed, stream::kSite, m, static_cast<std::uint64_t>(sweep)));
            std::vector<double> scratch;
            const auto site_loglik = loglik.site(m, scratch);
            std::vector<double> alloc_scratch;
            allocate_site_two_group(site_loglik, {weights0.row(m), n_kernels},
                                    {weights1.row(m), n_kernels}, dataset.group,
                                    {assignments.row(m), n_subjects}, rng, alloc_scratch);

            SiteCounts counts{std::vector<double>(n_kernels, 0.0), std::vector<double>(n_kernels, 0.0)};
            for (std::size_t n = 0; n < n_subjects; ++n) {
                (dataset.group[n] == 0 ? counts.n0 : counts.n1)[assignments(m, n)] += 1.0;
            }

            const double log_odds = log_posterior_odds_h0(counts, dictionary.alpha, p0_current);
            double p_m;
            double log_p;
            double log_q;
            if (log_odds == kNegInf) {
                p_m = 0.0, log_p = kNegInf, log_q = 0.0;
            } else if (log_odds == -kNegInf) {
                p_m = 1.0, log_p = 0.0, log_q = kNegInf;
            } else {
                // log sigmoid(x) = -log(1+exp(-x)); stable on both sides.
                log_p = log_odds > 0.0 ? -std::log1p(std::exp(-log_odds))
                                       : log_odds - std::log1p(std::exp(log_odds));
                log_q = log_p - log_odds;
                p_m = std::exp(log_p);
            }
            sweep_p[m] = p_m;

            draw_two_group_weights(counts, dictionary.alpha, p_m, config.weight_draw, rng,
                                   {weights0.row(m), n_kernels}, {weights1.row(m), n_kernels});

            if (keep) {
                acc_log_p[m].add(log_p);
                acc_log_q[m].add(log_q);
                for (std::size_t k = 0; k < n_kernels; ++k) {
                    sum_w0(m, k) += weights0(m, k);
                    sum_w1(m, k) += weights1(m, k);
                }
            }
        });

        if (config.p0_mode == P0Mode::kLearned) {
            Rng p0_rng(derive_seed(config.seed, stream::kP0, static_cast<std::uint64_t>(sweep)));
            p0 = update_p0(sweep_p, config.p0_prior_a, config.p0_prior_b, p0_rng);
        }
        if (keep) p0_draws.push_back(p0);
    }

    ScreeningResult result;
    result.post_h0.resize(n_sites);
    result.log_bf.resize(n_sites);
    result.mean_weights0 = Matrix<double>(n_sites, n_kernels);
    result.mean_weights1 = Matrix<double>(n_sites, n_kernels);
    const double kept = static_cast<double>(config.iterations);
    for (std::size_t m = 0; m < n_sites; ++m) {
        result.post_h0[m] = std::exp(acc_log_p[m].log_mean());
        result.log_bf[m] = acc_log_p[m].log_mean() - acc_log_q[m].log_mean();
        for (std::size_t k = 0; k < n_kernels; ++k) {
            result.mean_weights0(m, k) = sum_w0(m, k) / kept;
            result.mean_weights1(m, k) = sum_w1(m, k) / kept;
        }
    }
    result.p0_draws = std::move(p0_draws);
    return result;
}

// Relabel subjects' group assignments by a permutation of subject indices;
// group sizes are preserved by construction.
inline ScreeningDataset apply_label_permutation(const ScreeningDataset& dataset,
                                                std::span<const std::size_t> perm) {
    ScreeningDataset out = dataset;
    for (std::size_t n = 0; n < perm.size(); ++n) out.group[n] = dataset.group[perm[n]];
    return out;
}

// Re-screen under random relabelings of the subjects; column p holds the
// per-site posterior under permutation p.
inline Matrix<double> permutation_null(const ScreeningDataset& dataset,
                                       const KernelDictionary& dictionary, const GibbsConfig& config,
                                       int n_perm) {
    if (n_perm < 1) throw NumericalError("permutation_null: n_perm must be >= 1");
    Matrix<double> out(dataset.n_sites(), static_cast<std::size_t>(n_perm));
    for (int p = 0; p < n_perm; ++p) {
        Rng rng(derive_seed(config.seed, stream::kPermutation, static_cast<std::uint64_t>(p)));
        std::vector<std::size_t> perm(dataset.n_subjects());
        for (std::size_t n = 0; n < perm.size(); ++n) perm[n] = n;
        rng.shuffle(perm);
        const ScreeningDataset permuted = apply_label_permutation(dataset, perm);
        const ScreeningResult res = screen(permuted, dictionary, config);
        for (std::size_t m = 0; m < dataset.n_sites(); ++m) {
            out(m, static_cast<std::size_t>(p)) = res.post_h0[m];
        }
    }
    return out;
}

}  // namespace mixscreen
