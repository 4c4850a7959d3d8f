#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "mixscreen/common.hpp"
#include "mixscreen/model.hpp"
#include "mixscreen/rng.hpp"
#include "mixscreen/special_math.hpp"

namespace mixscreen {

struct NormalGammaPrior {
    double mu0 = 0.5;
    double lambda0 = 1.0;
    double a0 = 1.0;
    double b0 = 0.5;

    void validate() const {
        if (!(lambda0 > 0.0) || !(a0 > 0.0) || !(b0 > 0.0)) {
            throw NumericalError("normal-gamma prior: lambda0, a0, b0 must be positive");
        }
    }
};

struct NormalGammaParams {
    double mu;
    double lambda;
    double a;
    double b;
};

// Conjugate update given the transformed sample's count, mean, and (ML)
// variance.
inline NormalGammaParams normal_gamma_posterior(const NormalGammaPrior& prior, double n, double mean,
                                                double variance) {
    NormalGammaParams post;
    post.mu = (prior.lambda0 * prior.mu0 + n * mean) / (prior.lambda0 + n);
    post.lambda = prior.lambda0 + n;
    post.a = prior.a0 + 0.5 * n;
    post.b = prior.b0 + 0.5 * n * variance +
             0.5 * prior.lambda0 * n * (mean - prior.mu0) * (mean - prior.mu0) / (prior.lambda0 + n);
    return post;
}

// Removes the truncation from an observed value: maps x through the current
// kernel's truncated CDF and back through the untruncated quantile. Strictly
// monotone in x for fixed parameters.
inline double detruncate_value(double x, const TruncNormalKernel& kernel) {
    double u = trunc_normal_cdf(x, kernel);
    u = std::min(1.0 - 1e-12, std::max(1e-12, u));
    return kernel.mu + kernel.sigma * normal_quantile(u);
}

namespace detail {

// mu | tau restricted to [0,1] via the inverse-CDF of the conditional normal.
inline double draw_mu_truncated(double mean, double sd, Rng& rng) {
    const double lo = (0.0 - mean) / sd;
    const double hi = (1.0 - mean) / sd;
    const double mass = normal_cdf_interval(lo, hi);
    if (!(mass > 0.0)) return std::min(1.0, std::max(0.0, mean));
    double target = normal_cdf(lo) + rng.u01_open() * mass;
    target = std::min(1.0 - 1e-16, std::max(1e-300, target));
    return std::min(1.0, std::max(0.0, mean + sd * normal_quantile(target)));
}

inline TruncNormalKernel draw_kernel(const NormalGammaParams& p, Rng& rng) {
    const double tau = rng.gamma(p.a, p.b);
    const double sd = 1.0 / std::sqrt(p.lambda * tau);
    TruncNormalKernel kernel;
    kernel.mu = draw_mu_truncated(p.mu, sd, rng);
    kernel.sigma = 1.0 / std::sqrt(tau);
    return kernel;
}

}  // namespace detail

// One draw of each kernel's (mu, sigma) from the truncated normal-gamma
// posterior; kernels with no assigned values draw from the prior.
inline std::vector<TruncNormalKernel> update_kernel_params(
    std::span<const std::vector<double>> values_by_kernel, const NormalGammaPrior& prior,
    std::span<const TruncNormalKernel> current_kernels, Rng& rng) {
    prior.validate();
    std::vector<TruncNormalKernel> updated(current_kernels.size());
    for (std::size_t k = 0; k < current_kernels.size(); ++k) {
        const auto& values = values_by_kernel[k];
        if (values.empty()) {
            updated[k] = detail::draw_kernel({prior.mu0, prior.lambda0, prior.a0, prior.b0}, rng);
            continue;
        }
        const double n = static_cast<double>(values.size());
        double mean = 0.0;
        for (double x : values) mean += detruncate_value(x, current_kernels[k]);
        mean /= n;
        double variance = 0.0;
        for (double x : values) {
            const double d = detruncate_value(x, current_kernels[k]) - mean;
            variance += d * d;
        }
        variance /= n;
        updated[k] = detail::draw_kernel(normal_gamma_posterior(prior, n, mean, variance), rng);
    }
    return updated;
}

// Single-group allocation against the current kernels and one site's weights.
inline std::vector<std::uint8_t> gibbs_allocate_single_group(std::span<const double> values,
                                                             std::span<const TruncNormalKernel> kernels,
                                                             std::span<const double> weights, Rng& rng) {
    const std::size_t n_kernels = kernels.size();
    std::vector<double> log_w(n_kernels);
    std::vector<double> log_norm(n_kernels);
    for (std::size_t k = 0; k < n_kernels; ++k) {
        log_w[k] = weights[k] > 0.0 ? std::log(weights[k]) : kNegInf;
        log_norm[k] = std::log(kernels[k].sigma) + 0.5 * kLogTwoPi + std::log(kernels[k].trunc_mass());
    }
    std::vector<std::uint8_t> out(values.size());
    std::vector<double> lw(n_kernels);
    for (std::size_t n = 0; n < values.size(); ++n) {
        for (std::size_t k = 0; k < n_kernels; ++k) {
            const double z = (values[n] - kernels[k].mu) / kernels[k].sigma;
            lw[k] = log_w[k] - 0.5 * z * z - log_norm[k];
        }
        out[n] = static_cast<std::uint8_t>(rng.categorical_from_log(lw));
    }
    return out;
}

// One Dirichlet(alpha + counts) draw of a site's weights.
inline std::vector<double> draw_site_weights(std::span<const double> counts,
                                             std::span<const double> alpha, Rng& rng) {
    std::vector<double> shifted(alpha.size());
    for (std::size_t k = 0; k < alpha.size(); ++k) shifted[k] = alpha[k] + counts[k];
    return rng.dirichlet(shifted);
}

// Sort order for kernels: ascending mean, ties broken by smaller sigma, then
// original index.
inline std::vector<std::size_t> relabel_order(std::span<const TruncNormalKernel> kernels) {
    std::vector<std::size_t> order(kernels.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (kernels[a].mu != kernels[b].mu) return kernels[a].mu < kernels[b].mu;
        return kernels[a].sigma < kernels[b].sigma;
    });
    return order;
}

// Applies a relabeling permutation consistently to kernels, alpha, per-site
// weight rows, and the allocation matrix.
inline void apply_relabel(std::span<const std::size_t> order, std::vector<TruncNormalKernel>& kernels,
                          std::vector<double>& alpha, Matrix<double>* weights,
                          Matrix<std::uint8_t>* assignments) {
    const std::size_t n_kernels = order.size();
    bool identity = true;
    for (std::size_t k = 0; k < n_kernels; ++k) identity = identity && order[k] == k;
    if (identity) return;

    std::vector<TruncNormalKernel> new_kernels(n_kernels);
    std::vector<double> new_alpha(n_kernels);
    for (std::size_t k = 0; k < n_kernels; ++k) {
        new_kernels[k] = kernels[order[k]];
        new_alpha[k] = alpha[order[k]];
    }
    kernels = std::move(new_kernels);
    alpha = std::move(new_alpha);

    if (weights != nullptr) {
        std::vector<double> row(n_kernels);
        for (std::size_t m = 0; m < weights->rows(); ++m) {
            for (std::size_t k = 0; k < n_kernels; ++k) row[k] = (*weights)(m, order[k]);
            for (std::size_t k = 0; k < n_kernels; ++k) (*weights)(m, k) = row[k];
        }
    }
    if (assignments != nullptr) {
        std::vector<std::uint8_t> inverse(n_kernels);
        for (std::size_t k = 0; k < n_kernels; ++k) inverse[order[k]] = static_cast<std::uint8_t>(k);
        for (auto& a : assignments->data()) a = inverse[a];
    }
}

struct DirichletMleResult {
    std::vector<double> alpha;
    bool converged = false;
    int iterations = 0;
    double log_likelihood_init = 0.0;
    double log_likelihood = 0.0;
};

// Maximum-likelihood Dirichlet concentration from simplex rows via the
// digamma fixed point, moment-based start.
inline DirichletMleResult dirichlet_mle(const Matrix<double>& rows, int max_iterations = 1000,
                                        double tolerance = 1e-8) {
    if (rows.rows() < 2) throw NumericalError("dirichlet_mle: needs at least 2 rows");
    const std::size_t n_kernels = rows.cols();
    const double n_rows = static_cast<double>(rows.rows());

    std::vector<double> mean(n_kernels, 0.0);
    std::vector<double> mean_sq(n_kernels, 0.0);
    std::vector<double> mean_log(n_kernels, 0.0);
    for (std::size_t m = 0; m < rows.rows(); ++m) {
        for (std::size_t k = 0; k < n_kernels; ++k) {
            const double p = std::max(rows(m, k), 1e-10);
            mean[k] += p;
            mean_sq[k] += p * p;
            mean_log[k] += std::log(p);
        }
    }
    for (std::size_t k = 0; k < n_kernels; ++k) {
        mean[k] /= n_rows;
        mean_sq[k] /= n_rows;
        mean_log[k] /= n_rows;
    }

    // Moment start: average the concentration implied by each coordinate's
    // first two moments, then scale the coordinate means.
    double implied = 0.0;
    int used = 0;
    for (std::size_t k = 0; k < n_kernels; ++k) {
        const double var = mean_sq[k] - mean[k] * mean[k];
        if (var > 1e-14) {
            implied += mean[k] * (1.0 - mean[k]) / var - 1.0;
            ++used;
        }
    }
    double scale = used > 0 ? implied / used : static_cast<double>(n_kernels);
    if (!(scale > 0.0) || !std::isfinite(scale)) scale = static_cast<double>(n_kernels);

    DirichletMleResult result;
    result.alpha.resize(n_kernels);
    for (std::size_t k = 0; k < n_kernels; ++k) result.alpha[k] = std::max(mean[k] * scale, 0.01);

    const auto log_likelihood = [&](const std::vector<double>& alpha) {
        double sum = 0.0;
        double value = 0.0;
        for (std::size_t k = 0; k < n_kernels; ++k) {
            sum += alpha[k];
            value += -std::lgamma(alpha[k]) + (alpha[k] - 1.0) * mean_log[k];
        }
        return n_rows * (std::lgamma(sum) + value);
    };
    result.log_likelihood_init = log_likelihood(result.alpha);

    for (int it = 0; it < max_iterations; ++it) {
        const double alpha_sum = std::accumulate(result.alpha.begin(), result.alpha.end(), 0.0);
        const double psi_sum = digamma(alpha_sum);
        double max_delta = 0.0;
        for (std::size_t k = 0; k < n_kernels; ++k) {
            const double next = inverse_digamma(psi_sum + mean_log[k]);
            max_delta = std::max(max_delta, std::abs(next - result.alpha[k]));
            result.alpha[k] = next;
        }
        result.iterations = it + 1;
        if (max_delta < tolerance) {
            result.converged = true;
            break;
        }
    }
    result.log_likelihood = log_likelihood(result.alpha);
    return result;
}

struct DictionaryFitConfig {
    int iterations = 2000;
    int burn_in = 500;
    std::size_t subsample = 500;
    std::uint64_t seed = 0;

    void validate() const {
        if (iterations <= 0) throw NumericalError("dictionary fit: iterations must be positive");
        if (burn_in < 0) throw NumericalError("dictionary fit: burn_in must be non-negative");
    }
};

struct TraceSummary {
    double mean = 0.0;
    double sd = 0.0;
    int n = 0;
};

struct DictionaryFitReport {
    KernelDictionary dictionary;
    std::map<int, double> cv_table;
    std::size_t n_sites_used = 0;
    bool alpha_mle_converged = true;
    std::vector<TraceSummary> mu_traces;
    std::vector<TraceSummary> sigma_traces;
    std::vector<TraceSummary> alpha_traces;
};

namespace detail {

struct StageOneFit {
    std::vector<TruncNormalKernel> mean_kernels;
    std::vector<double> mean_alpha;
    Matrix<double> mean_weights;  // per-site posterior-mean weights
    std::vector<TraceSummary> mu_traces;
    std::vector<TraceSummary> sigma_traces;
    std::vector<TraceSummary> alpha_traces;
    bool alpha_mle_converged = true;
};

inline std::vector<TruncNormalKernel> init_kernels(std::span<const double> pooled, std::size_t n_kernels) {
    std::vector<double> sorted(pooled.begin(), pooled.end());
    std::sort(sorted.begin(), sorted.end());
    double mean = 0.0;
    for (double x : sorted) mean += x;
    mean /= static_cast<double>(sorted.size());
    double var = 0.0;
    for (double x : sorted) var += (x - mean) * (x - mean);
    var /= static_cast<double>(sorted.size());
    const double sigma =
        std::max(0.03, std::sqrt(std::max(var, 1e-6)) / static_cast<double>(n_kernels));
    std::vector<TruncNormalKernel> kernels(n_kernels);
    for (std::size_t k = 0; k < n_kernels; ++k) {
        const std::size_t idx = std::min(
            sorted.size() - 1,
            static_cast<std::size_t>((static_cast<double>(k) + 0.5) / static_cast<double>(n_kernels) *
                                     static_cast<double>(sorted.size())));
        kernels[k].mu = sorted[idx];
        kernels[k].sigma = sigma;
    }
    // Quantile inits can tie on discrete-ish data; nudge apart.
    for (std::size_t k = 1; k < n_kernels; ++k) {
        if (kernels[k].mu <= kernels[k - 1].mu) {
            kernels[k].mu = std::min(1.0, kernels[k - 1].mu + 1e-6);
        }
    }
    return kernels;
}

// The stage-one Gibbs loop over a value matrix (subjects pooled as one
// group): allocate, draw site weights, update kernels, refresh alpha by
// maximum likelihood, relabel by mean.
inline StageOneFit fit_stage_one(const Matrix<double>& values, std::size_t n_kernels,
                                 const NormalGammaPrior& prior, int iterations, int burn_in,
                                 std::uint64_t chain_seed) {
    const std::size_t n_sites = values.rows();
    const std::size_t n_subjects = values.cols();
    Rng rng(chain_seed);

    std::vector<TruncNormalKernel> kernels = init_kernels(values.data(), n_kernels);
    std::vector<double> alpha(n_kernels, 1.0);
    Matrix<double> weights(n_sites, n_kernels, 1.0 / static_cast<double>(n_kernels));
    Matrix<std::uint8_t> assignments(n_sites, n_subjects);

    std::vector<std::vector<double>> values_by_kernel(n_kernels);
    std::vector<double> counts(n_kernels);

    StageOneFit fit;
    fit.mean_weights = Matrix<double>(n_sites, n_kernels, 0.0);
    std::vector<double> mu_sum(n_kernels, 0.0), mu_sq(n_kernels, 0.0);
    std::vector<double> sigma_sum(n_kernels, 0.0), sigma_sq(n_kernels, 0.0);
    std::vector<double> alpha_sum(n_kernels, 0.0), alpha_sq(n_kernels, 0.0);
    int kept = 0;

    const int total_sweeps = iterations + burn_in;
    for (int sweep = 0; sweep < total_sweeps; ++sweep) {
        for (auto& bucket : values_by_kernel) bucket.clear();

        for (std::size_t m = 0; m < n_sites; ++m) {
            const auto site_assign = gibbs_allocate_single_group(
                {values.row(m), n_subjects}, kernels, {weights.row(m), n_kernels}, rng);
            std::fill(counts.begin(), counts.end(), 0.0);
            for (std::size_t n = 0; n < n_subjects; ++n) {
                assignments(m, n) = site_assign[n];
                counts[site_assign[n]] += 1.0;
                values_by_kernel[site_assign[n]].push_back(values(m, n));
            }
            const auto w = draw_site_weights(counts, alpha, rng);
            for (std::size_t k = 0; k < n_kernels; ++k) weights(m, k) = w[k];
        }

        kernels = update_kernel_params(values_by_kernel, prior, kernels, rng);

        if (n_sites >= 2) {
            const auto mle = dirichlet_mle(weights);
            alpha = mle.alpha;
            fit.alpha_mle_converged = fit.alpha_mle_converged && mle.converged;
        }

        apply_relabel(relabel_order(kernels), kernels, alpha, &weights, &assignments);

        if (sweep >= burn_in) {
            ++kept;
            for (std::size_t k = 0; k < n_kernels; ++k) {
                mu_sum[k] += kernels[k].mu;
                mu_sq[k] += kernels[k].mu * kernels[k].mu;
                sigma_sum[k] += kernels[k].sigma;
                sigma_sq[k] += kernels[k].sigma * kernels[k].sigma;
                alpha_sum[k] += alpha[k];
                alpha_sq[k] += alpha[k] * alpha[k];
            }
            for (std::size_t m = 0; m < n_sites; ++m) {
                for (std::size_t k = 0; k < n_kernels; ++k) fit.mean_weights(m, k) += weights(m, k);
            }
        }
    }

    const double denom = static_cast<double>(kept);
    const auto summarize = [&](const std::vector<double>& sum, const std::vector<double>& sq,
                               std::size_t k) {
        TraceSummary t;
        t.n = kept;
        t.mean = sum[k] / denom;
        t.sd = std::sqrt(std::max(0.0, sq[k] / denom - t.mean * t.mean));
        return t;
    };
    fit.mean_kernels.resize(n_kernels);
    fit.mean_alpha.resize(n_kernels);
    for (std::size_t k = 0; k < n_kernels; ++k) {
        fit.mu_traces.push_back(summarize(mu_sum, mu_sq, k));
        fit.sigma_traces.push_back(summarize(sigma_sum, sigma_sq, k));
        fit.alpha_traces.push_back(summarize(alpha_sum, alpha_sq, k));
        fit.mean_kernels[k].mu = fit.mu_traces[k].mean;
        fit.mean_kernels[k].sigma = fit.sigma_traces[k].mean;
        fit.mean_alpha[k] = fit.alpha_traces[k].mean;
    }
    // Means of per-sweep sorted draws are monotone but can tie; keep the
    // dictionary invariant strict.
    for (std::size_t k = 1; k < n_kernels; ++k) {
        if (fit.mean_kernels[k].mu <= fit.mean_kernels[k - 1].mu) {
            fit.mean_kernels[k].mu = std::min(1.0, fit.mean_kernels[k - 1].mu + 1e-12);
        }
    }
    for (std::size_t m = 0; m < n_sites; ++m) {
        for (std::size_t k = 0; k < n_kernels; ++k) fit.mean_weights(m, k) /= denom;
    }
    return fit;
}

inline std::vector<std::size_t> choose_subsample(std::size_t n_sites, std::size_t subsample,
                                                 std::uint64_t seed) {
    std::vector<std::size_t> idx(n_sites);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (subsample >= n_sites) return idx;
    Rng rng(derive_seed(seed, stream::kSubsample));
    for (std::size_t i = 0; i < subsample; ++i) {
        const std::size_t j = i + rng.uniform_int(n_sites - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(subsample);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace detail

// Stage-one estimation on a uniform subsample of sites; subjects are pooled
// into a single group.
inline DictionaryFitReport fit_dictionary(const ScreeningDataset& dataset, std::size_t n_kernels,
                                          const NormalGammaPrior& prior,
                                          const DictionaryFitConfig& config) {
    if (n_kernels < 1) throw NumericalError("fit_dictionary: K must be >= 1");
    config.validate();
    prior.validate();
    if (dataset.n_sites() == 0 || dataset.n_subjects() == 0) {
        throw DataError("fit_dictionary: dataset is empty");
    }

    const auto site_idx = detail::choose_subsample(dataset.n_sites(), config.subsample, config.seed);
    Matrix<double> values(site_idx.size(), dataset.n_subjects());
    for (std::size_t i = 0; i < site_idx.size(); ++i) {
        for (std::size_t n = 0; n < dataset.n_subjects(); ++n) {
            values(i, n) = dataset.values(site_idx[i], n);
        }
    }

    const auto fit = detail::fit_stage_one(values, n_kernels, prior, config.iterations, config.burn_in,
                                           derive_seed(config.seed, stream::kChain, 0));

    DictionaryFitReport report;
    report.dictionary.kernels = fit.mean_kernels;
    report.dictionary.alpha = fit.mean_alpha;
    report.dictionary.validate();
    report.n_sites_used = site_idx.size();
    report.mu_traces = fit.mu_traces;
    report.sigma_traces = fit.sigma_traces;
    report.alpha_traces = fit.alpha_traces;
    report.alpha_mle_converged = fit.alpha_mle_converged;
    return report;
}

struct CvReport {
    std::map<int, double> table;  // K -> mean held-out log-likelihood per observation
    int selected_k = 0;
};

// K selection by cross-validated held-out log-likelihood over subjects.
// Each fold trains on the remaining subjects and scores held-out values under
// the posterior-mean dictionary and site-specific posterior-mean weights.
inline CvReport choose_k_by_cv(const ScreeningDataset& dataset, std::span<const int> k_range,
                               int folds, const NormalGammaPrior& prior,
                               const DictionaryFitConfig& config) {
    if (folds < 2) throw NumericalError("choose_k_by_cv: folds must be >= 2");
    if (k_range.empty()) throw NumericalError("choose_k_by_cv: empty K range");
    config.validate();

    const std::size_t n_subjects = dataset.n_subjects();
    if (static_cast<std::size_t>(folds) > n_subjects) {
        throw NumericalError("choose_k_by_cv: more folds than subjects");
    }
    const auto site_idx = detail::choose_subsample(dataset.n_sites(), config.subsample, config.seed);

    // Shuffled subject -> fold map, deterministic in the seed.
    std::vector<std::size_t> subject_order(n_subjects);
    std::iota(subject_order.begin(), subject_order.end(), std::size_t{0});
    Rng fold_rng(derive_seed(config.seed, stream::kFold));
    fold_rng.shuffle(subject_order);
    std::vector<int> fold_of(n_subjects);
    for (std::size_t i = 0; i < n_subjects; ++i) {
        fold_of[subject_order[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
    }

    CvReport report;
    if (k_range.size() == 1) {
        // Single candidate: nothing to compare, but still report its score.
    }
    for (int k_candidate : k_range) {
        if (k_candidate < 1) throw NumericalError("choose_k_by_cv: K must be >= 1");
        double fold_total = 0.0;
        for (int f = 0; f < folds; ++f) {
            std::vector<std::size_t> train;
            std::vector<std::size_t> held;
            for (std::size_t n = 0; n < n_subjects; ++n) {
                (fold_of[n] == f ? held : train).push_back(n);
            }
            Matrix<double> train_values(site_idx.size(), train.size());
            for (std::size_t i = 0; i < site_idx.size(); ++i) {
                for (std::size_t j = 0; j < train.size(); ++j) {
                    train_values(i, j) = dataset.values(site_idx[i], train[j]);
                }
            }
            const auto fit = detail::fit_stage_one(
                train_values, static_cast<std::size_t>(k_candidate), prior, config.iterations,
                config.burn_in,
                derive_seed(config.seed, stream::kFold, static_cast<std::uint64_t>(f),
                            static_cast<std::uint64_t>(k_candidate)));

            double loglik = 0.0;
            std::size_t cells = 0;
            std::vector<double> lw(static_cast<std::size_t>(k_candidate));
            for (std::size_t i = 0; i < site_idx.size(); ++i) {
                for (std::size_t j = 0; j < held.size(); ++j) {
                    const double x = dataset.values(site_idx[i], held[j]);
                    for (std::size_t k = 0; k < lw.size(); ++k) {
                        const double w = fit.mean_weights(i, k);
                        lw[k] = (w > 0.0 ? std::log(w) : kNegInf) +
                                trunc_normal_logpdf(x, fit.mean_kernels[k]);
                    }
                    loglik += log_sum_exp(lw.data(), lw.size());
                    ++cells;
                }
            }
            fold_total += loglik / static_cast<double>(cells);
        }
        report.table[k_candidate] = fold_total / static_cast<double>(folds);
    }

    report.selected_k = report.table.begin()->first;
    double best = report.table.begin()->second;
    for (const auto& [k, score] : report.table) {
        if (score > best) {
            best = score;
            report.selected_k = k;
        }
    }
    return report;
}

}  // namespace mixscreen
