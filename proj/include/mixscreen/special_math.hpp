#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mixscreen/common.hpp"

namespace mixscreen {

inline double log_gamma(double x) {
    if (!(x > 0.0) || !std::isfinite(x)) {
        throw NumericalError("log_gamma: argument must be positive and finite, got " + format_double(x));
    }
    return std::lgamma(x);
}

// log of the Dirichlet normalizing constant: sum(lgamma(a_k)) - lgamma(sum a_k).
inline double log_mv_beta(std::span<const double> alpha) {
    if (alpha.empty()) throw NumericalError("log_mv_beta: empty argument");
    double sum = 0.0;
    double acc = 0.0;
    for (double a : alpha) {
        if (!(a > 0.0) || !std::isfinite(a)) {
            throw NumericalError("log_mv_beta: entries must be positive and finite, got " + format_double(a));
        }
        sum += a;
        acc += std::lgamma(a);
    }
    return acc - std::lgamma(sum);
}

inline double log_mv_beta(const std::vector<double>& alpha) {
    return log_mv_beta(std::span<const double>(alpha));
}

inline double normal_cdf(double x) {
    return 0.5 * std::erfc(-x * 0.70710678118654752440);
}

// Phi(hi) - Phi(lo), evaluated in the tail that avoids cancellation.
inline double normal_cdf_interval(double lo, double hi) {
    constexpr double k = 0.70710678118654752440;
    if (lo >= hi) return 0.0;
    if (lo >= 0.0) return 0.5 * (std::erfc(lo * k) - std::erfc(hi * k));
    if (hi <= 0.0) return 0.5 * (std::erfc(-hi * k) - std::erfc(-lo * k));
    return 0.5 * (std::erf(hi * k) + std::erf(-lo * k));
}

namespace detail {

// Acklam's rational approximation to the standard normal quantile, |err| < 1.2e-9.
inline double normal_quantile_approx(double p) {
    static constexpr double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                    -2.759285104469687e+02, 1.383577518672690e+02,
                                    -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                    -1.556989798598866e+02, 6.680131188771972e+01,
                                    -1.328068155288572e+01};
    static constexpr double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                    -2.400758277161838e+00, -2.549732539343734e+00,
                                    4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                    2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p > 1.0 - p_low) {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double q = p - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace detail

inline double normal_quantile(double p) {
    if (!(p > 0.0) || !(p < 1.0)) {
        throw NumericalError("normal_quantile: p must lie in (0,1), got " + format_double(p));
    }
    double x = detail::normal_quantile_approx(p);
    // One Halley polish against the erfc-based CDF; exp(x^2/2) stays finite
    // for every p representable away from the denormal fringe.
    if (std::abs(x) < 37.0) {
        const double e = normal_cdf(x) - p;
        const double u = e * 2.5066282746310005024 * std::exp(0.5 * x * x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    return x;
}

inline double digamma(double x) {
    if (!(x > 0.0) || !std::isfinite(x)) {
        throw NumericalError("digamma: argument must be positive and finite, got " + format_double(x));
    }
    double result = 0.0;
    while (x < 10.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    const double r = 1.0 / (x * x);
    result += std::log(x) - 0.5 / x -
              r * (1.0 / 12.0 - r * (1.0 / 120.0 - r * (1.0 / 252.0 - r * (1.0 / 240.0 - r / 132.0))));
    return result;
}

inline double trigamma(double x) {
    if (!(x > 0.0) || !std::isfinite(x)) {
        throw NumericalError("trigamma: argument must be positive and finite, got " + format_double(x));
    }
    double result = 0.0;
    while (x < 10.0) {
        result += 1.0 / (x * x);
        x += 1.0;
    }
    const double r = 1.0 / (x * x);
    result += (1.0 + 0.5 / x +
               (1.0 / 6.0 - r * (1.0 / 30.0 - r * (1.0 / 42.0 - r * (1.0 / 30.0 - r * 5.0 / 66.0)))) / x) / x;
    return result;
}

// Newton inversion of digamma; monotone, converges in a handful of steps.
inline double inverse_digamma(double y) {
    double x = y >= -2.22 ? std::exp(y) + 0.5 : -1.0 / (y + 0.57721566490153286);
    for (int i = 0; i < 8; ++i) {
        const double step = (digamma(x) - y) / trigamma(x);
        double next = x - step;
        while (next <= 0.0) next = (x + next + step) * 0.5;  // damp into the domain
        x = next;
    }
    return x;
}

// Normal kernel renormalized to [0,1]; the unit interval is fixed by the
// measurement scale of the data this models.
struct TruncNormalKernel {
    double mu = 0.5;
    double sigma = 0.1;

    void validate() const {
        if (!std::isfinite(mu) || mu < 0.0 || mu > 1.0) {
            throw NumericalError("TruncNormalKernel: mu must lie in [0,1], got " + format_double(mu));
        }
        if (!(sigma > 0.0) || !std::isfinite(sigma)) {
            throw NumericalError("TruncNormalKernel: sigma must be positive, got " + format_double(sigma));
        }
    }

    // Mass of the untruncated normal inside [0,1].
    double trunc_mass() const {
        return normal_cdf_interval((0.0 - mu) / sigma, (1.0 - mu) / sigma);
    }

    bool operator==(const TruncNormalKernel&) const = default;
};

inline double trunc_normal_logpdf(double x, const TruncNormalKernel& kernel) {
    if (x < 0.0 || x > 1.0 || std::isnan(x)) return kNegInf;
    const double z = (x - kernel.mu) / kernel.sigma;
    const double mass = kernel.trunc_mass();
    if (!(mass > 0.0)) {
        throw NumericalError("trunc_normal_logpdf: truncation mass underflowed for sigma=" +
                             format_double(kernel.sigma));
    }
    return -0.5 * z * z - std::log(kernel.sigma) - 0.5 * kLogTwoPi - std::log(mass);
}

inline double trunc_normal_pdf(double x, const TruncNormalKernel& kernel) {
    const double lp = trunc_normal_logpdf(x, kernel);
    return lp == kNegInf ? 0.0 : std::exp(lp);
}

inline double trunc_normal_cdf(double x, const TruncNormalKernel& kernel) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double lo = (0.0 - kernel.mu) / kernel.sigma;
    const double num = normal_cdf_interval(lo, (x - kernel.mu) / kernel.sigma);
    const double den = kernel.trunc_mass();
    return std::min(1.0, std::max(0.0, num / den));
}

inline double trunc_normal_quantile(double p, const TruncNormalKernel& kernel) {
    if (!(p > 0.0) || !(p < 1.0)) {
        throw NumericalError("trunc_normal_quantile: p must lie in (0,1), got " + format_double(p));
    }
    const double lo = (0.0 - kernel.mu) / kernel.sigma;
    const double mass = kernel.trunc_mass();
    const double base = normal_cdf(lo);
    double target = base + p * mass;
    target = std::min(target, 1.0 - 1e-16);
    target = std::max(target, 1e-300);
    double x = kernel.mu + kernel.sigma * normal_quantile(target);
    x = std::min(1.0, std::max(0.0, x));
    // One Newton step on the truncated CDF tightens the roundtrip.
    const double pdf = trunc_normal_pdf(x, kernel);
    if (pdf > 1e-300) {
        x -= (trunc_normal_cdf(x, kernel) - p) / pdf;
        x = std::min(1.0, std::max(0.0, x));
    }
    return x;
}

inline void validate_concentration(std::span<const double> alpha) {
    if (alpha.empty()) throw NumericalError("concentration vector must have length >= 1");
    for (double a : alpha) {
        if (!(a > 0.0) || !std::isfinite(a)) {
            throw NumericalError("concentration entries must be strictly positive, got " + format_double(a));
        }
    }
}

}  // namespace mixscreen
