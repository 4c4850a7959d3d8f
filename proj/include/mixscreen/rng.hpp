#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mixscreen/common.hpp"
#include "mixscreen/special_math.hpp"

namespace mixscreen {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stream ids: hash-combine the master seed with structural indices so that
// every (site, sweep), replicate, or fold gets an independent stream and the
// result never depends on thread scheduling.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t s = seed;
    s ^= splitmix64(a) + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
    std::uint64_t t = b;
    s ^= splitmix64(t) + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
    std::uint64_t u = c;
    s ^= splitmix64(u) + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
    std::uint64_t v = s;
    return splitmix64(v);
}

namespace stream {
constexpr std::uint64_t kSite = 0x5349544500000001ULL;
constexpr std::uint64_t kP0 = 0x5030303000000002ULL;
constexpr std::uint64_t kChain = 0x434841494e000003ULL;
constexpr std::uint64_t kReplicate = 0x5245504c00000004ULL;
constexpr std::uint64_t kPermutation = 0x5045524d00000005ULL;
constexpr std::uint64_t kSubsample = 0x5355425300000006ULL;
constexpr std::uint64_t kFold = 0x464f4c4400000007ULL;
constexpr std::uint64_t kScenario = 0x5343454e00000008ULL;
}  // namespace stream

// xoshiro256** by Blackman & Vigna; self-contained so draws are identical
// across standard libraries and platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform on [0,1), 53-bit resolution.
    double u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on the open interval (0,1); safe to feed quantile transforms.
    double u01_open() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

    double log_uniform(double lo, double hi) {
        return std::exp(uniform(std::log(lo), std::log(hi)));
    }

    std::uint64_t uniform_int(std::uint64_t n) {
        // Multiply-shift rejection-free mapping is biased for huge n; with
        // n << 2^64 the bias is negligible for sampling purposes, but use
        // rejection to keep index draws exact.
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    bool bernoulli(double p) { return u01() < p; }

    double normal() { return normal_quantile(u01_open()); }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Marsaglia-Tsang; `rate` is the inverse-scale parameterization.
    double gamma(double shape, double rate = 1.0) {
        if (!(shape > 0.0) || !(rate > 0.0)) {
            throw NumericalError("gamma draw: shape and rate must be positive");
        }
        if (shape < 1.0) {
            const double boost = std::pow(u01_open(), 1.0 / shape);
            return gamma(shape + 1.0, rate) * boost;
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x;
            double v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = u01_open();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
        }
    }

    double beta(double a, double b) {
        const double x = gamma(a);
        const double y = gamma(b);
        return x / (x + y);
    }

    // One Dirichlet(alpha) draw into `out`.
    void dirichlet(std::span<const double> alpha, std::span<double> out) {
        double total = 0.0;
        for (std::size_t k = 0; k < alpha.size(); ++k) {
            out[k] = gamma(alpha[k]);
            total += out[k];
        }
        if (total <= 0.0) {
            const double uniform_w = 1.0 / static_cast<double>(alpha.size());
            for (auto& w : out) w = uniform_w;
            return;
        }
        for (auto& w : out) w /= total;
    }

    std::vector<double> dirichlet(std::span<const double> alpha) {
        std::vector<double> out(alpha.size());
        dirichlet(alpha, out);
        return out;
    }

    // Index draw proportional to exp(log_w_k); all -inf is a caller error.
    std::size_t categorical_from_log(std::span<const double> log_w) {
        double m = kNegInf;
        for (double lw : log_w) m = std::max(m, lw);
        if (m == kNegInf) {
            throw NumericalError("categorical draw: all log-weights are -inf");
        }
        double total = 0.0;
        for (double lw : log_w) total += std::exp(lw - m);
        double u = u01() * total;
        for (std::size_t k = 0; k + 1 < log_w.size(); ++k) {
            u -= std::exp(log_w[k] - m);
            if (u < 0.0) return k;
        }
        return log_w.size() - 1;
    }

    std::size_t categorical(std::span<const double> w) {
        double total = 0.0;
        for (double x : w) total += x;
        double u = u01() * total;
        for (std::size_t k = 0; k + 1 < w.size(); ++k) {
            u -= w[k];
            if (u < 0.0) return k;
        }
        return w.size() - 1;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_int(i)]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::array<std::uint64_t, 4> state_;
};

}  // namespace mixscreen
