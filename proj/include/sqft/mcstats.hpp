#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <json.hpp>

#include "errors.hpp"
#include "rng.hpp"

namespace sqft {

// ---------------------------------------------------------------------------
// Parallel replica evaluation
// ---------------------------------------------------------------------------

namespace detail {
inline std::atomic<unsigned>& thread_setting()
{
    static std::atomic<unsigned> n{0};
    return n;
}
}  // namespace detail

/// Sets the worker count used by Monte Carlo drivers; 0 means hardware concurrency.
inline void set_default_threads(unsigned n) { detail::thread_setting().store(n); }

inline unsigned default_threads()
{
    const unsigned n = detail::thread_setting().load();
    if (n != 0) return n;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

/// Evaluates fn(i) for i in [0, n) and returns the results in index order.
/// Workers take contiguous chunks; the output never depends on the worker count.
template <class F>
auto parallel_map(std::size_t n, F&& fn, unsigned threads = 0)
{
    using R = std::invoke_result_t<F&, std::size_t>;
    std::vector<R> out(n);
    unsigned nt = threads == 0 ? default_threads() : threads;
    nt = static_cast<unsigned>(std::min<std::size_t>(nt, std::max<std::size_t>(n, 1)));
    if (nt <= 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
        return out;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(nt);
    const std::size_t chunk = (n + nt - 1) / nt;
    for (unsigned w = 0; w < nt; ++w) {
        pool.emplace_back([&, w] {
            try {
                const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
                for (std::size_t i = lo; i < hi; ++i) out[i] = fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

/// Pairwise summation; deterministic for a given input order.
template <class T>
T pairwise_sum(const T* x, std::size_t n)
{
    if (n == 0) return T{};
    if (n <= 8) {
        T s = x[0];
        for (std::size_t i = 1; i < n; ++i) s += x[i];
        return s;
    }
    const std::size_t h = n / 2;
    return pairwise_sum(x, h) + pairwise_sum(x + h, n - h);
}

template <class T>
T pairwise_sum(const std::vector<T>& x)
{
    return pairwise_sum(x.data(), x.size());
}

// ---------------------------------------------------------------------------
// Estimates
// ---------------------------------------------------------------------------

struct Estimate {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t n_samples = 0;
    double confidence = 0.9999366;  ///< two-sided coverage of a 4 sigma band

    double se() const { return std_error; }
};

inline constexpr std::size_t kJackknifeBatches = 100;

/// Mean and jackknife standard error over (at most) 100 contiguous batch means.
inline Estimate estimate_from_samples(const std::vector<double>& x)
{
    require(x.size() >= 2, "estimate needs at least two samples");
    const std::size_t n = x.size();
    const std::size_t B = std::min(kJackknifeBatches, n);
    std::vector<double> sums(B);
    std::vector<std::size_t> counts(B);
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t lo = b * n / B, hi = (b + 1) * n / B;
        sums[b] = pairwise_sum(x.data() + lo, hi - lo);
        counts[b] = hi - lo;
    }
    const double total = pairwise_sum(sums);
    Estimate e;
    e.n_samples = n;
    e.mean = total / static_cast<double>(n);
    std::vector<double> loo(B);
    for (std::size_t b = 0; b < B; ++b)
        loo[b] = (total - sums[b]) / static_cast<double>(n - counts[b]);
    const double loo_mean = pairwise_sum(loo) / static_cast<double>(B);
    std::vector<double> dev(B);
    for (std::size_t b = 0; b < B; ++b) dev[b] = (loo[b] - loo_mean) * (loo[b] - loo_mean);
    e.std_error = std::sqrt(static_cast<double>(B - 1) / static_cast<double>(B) * pairwise_sum(dev));
    return e;
}

/// Replica r is handed the stream `Stream(master_seed).child("replica").child(r)`.
inline Stream replica_stream(std::uint64_t master_seed, std::size_t r)
{
    return Stream(master_seed).child("replica").child(static_cast<std::uint64_t>(r));
}

template <class Sampler>
Estimate mc_estimate(Sampler&& sampler, std::size_t n, std::uint64_t master_seed, unsigned threads = 0)
{
    require(n >= 2, "mc_estimate needs n >= 2");
    auto x = parallel_map(
        n, [&](std::size_t r) { return static_cast<double>(sampler(replica_stream(master_seed, r))); }, threads);
    return estimate_from_samples(x);
}

/// Vector-valued variant: the sampler returns a fixed-length vector per replica.
template <class Sampler>
std::vector<Estimate> mc_estimate_vector(Sampler&& sampler, std::size_t n, std::uint64_t master_seed,
                                         unsigned threads = 0)
{
    require(n >= 2, "mc_estimate needs n >= 2");
    auto rows = parallel_map(n, [&](std::size_t r) { return sampler(replica_stream(master_seed, r)); }, threads);
    const std::size_t k = rows.front().size();
    std::vector<Estimate> out(k);
    std::vector<double> col(n);
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t r = 0; r < n; ++r) col[r] = rows[r][j];
        out[j] = estimate_from_samples(col);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Test reports
// ---------------------------------------------------------------------------

struct TestReport {
    std::string name;
    std::string kind;  ///< "sigma", "ks", "chi2", "tolerance"
    double statistic = 0.0;
    std::optional<double> p_value;
    double threshold = 0.0;
    bool pass = false;

    nlohmann::json to_json() const
    {
        nlohmann::json j{{"name", name}, {"kind", kind}, {"statistic", statistic},
                         {"threshold", threshold}, {"pass", pass}};
        j["p_value"] = p_value ? nlohmann::json(*p_value) : nlohmann::json(nullptr);
        return j;
    }
};

inline constexpr double kSigmaThreshold = 4.0;
inline constexpr double kPValueThreshold = 0.01;

/// sigma-distance test of an estimate against an expected value. A zero
/// standard error only passes on agreement to rounding.
inline TestReport sigma_test(std::string name, const Estimate& e, double expected,
                             double nsigma = kSigmaThreshold)
{
    TestReport r;
    r.name = std::move(name);
    r.kind = "sigma";
    r.threshold = nsigma;
    const double diff = std::abs(e.mean - expected);
    if (e.se() > 0.0) {
        r.statistic = diff / e.se();
    } else {
        const double tol = 1e-12 * std::max(1.0, std::abs(expected));
        r.statistic = diff <= tol ? 0.0 : std::numeric_limits<double>::infinity();
    }
    r.pass = r.statistic <= nsigma;
    return r;
}

inline TestReport tolerance_test(std::string name, double error, double tol)
{
    TestReport r;
    r.name = std::move(name);
    r.kind = "tolerance";
    r.statistic = error;
    r.threshold = tol;
    r.pass = std::isfinite(error) && error <= tol;
    return r;
}

/// Kolmogorov survival function Q(x) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 x^2).
inline double kolmogorov_q(double x)
{
    if (x < 0.18) return 1.0;
    double sum = 0.0, sign = 1.0;
    for (int j = 1; j <= 200; ++j) {
        const double term = std::exp(-2.0 * j * j * x * x);
        sum += sign * term;
        if (term < 1e-18) break;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

inline double ks_p_value(double d, double n_eff)
{
    const double s = std::sqrt(n_eff);
    return kolmogorov_q((s + 0.12 + 0.11 / s) * d);
}

inline TestReport ks_two_sample(std::vector<double> a, std::vector<double> b, std::string name = "ks_two_sample",
                                double alpha = kPValueThreshold)
{
    require(a.size() >= 30 && b.size() >= 30, "ks_two_sample needs at least 30 samples per side");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double v = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= v) ++i;
        while (j < b.size() && b[j] <= v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    TestReport r;
    r.name = std::move(name);
    r.kind = "ks";
    r.statistic = d;
    r.p_value = ks_p_value(d, na * nb / (na + nb));
    r.threshold = alpha;
    r.pass = *r.p_value > alpha;
    return r;
}

template <class Cdf>
TestReport ks_one_sample(std::vector<double> a, Cdf&& cdf, std::string name = "ks_one_sample",
                         double alpha = kPValueThreshold)
{
    require(a.size() >= 30, "ks_one_sample needs at least 30 samples");
    std::sort(a.begin(), a.end());
    const double n = static_cast<double>(a.size());
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double f = cdf(a[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    TestReport r;
    r.name = std::move(name);
    r.kind = "ks";
    r.statistic = d;
    r.p_value = ks_p_value(d, n);
    r.threshold = alpha;
    r.pass = *r.p_value > alpha;
    return r;
}

/// Pearson chi-square of observed counts against bin probabilities. The
/// probabilities should cover the whole support (fold tails in beforehand).
inline TestReport chi_square_fit(const std::vector<double>& observed, const std::vector<double>& probs,
                                 std::string name = "chi_square_fit", std::size_t fitted_params = 0,
                                 double alpha = kPValueThreshold)
{
    require(observed.size() == probs.size() && observed.size() >= 2, "chi_square_fit: bin count mismatch");
    const double n = std::accumulate(observed.begin(), observed.end(), 0.0);
    double chi2 = 0.0;
    for (std::size_t k = 0; k < observed.size(); ++k) {
        const double e = n * probs[k];
        require(e >= 5.0, "chi_square_fit: expected count below 5 in bin " + std::to_string(k));
        chi2 += (observed[k] - e) * (observed[k] - e) / e;
    }
    require(observed.size() > fitted_params + 1, "chi_square_fit: no degrees of freedom left");
    const double dof = static_cast<double>(observed.size() - 1 - fitted_params);
    TestReport r;
    r.name = std::move(name);
    r.kind = "chi2";
    r.statistic = chi2;
    r.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(dof), chi2));
    r.threshold = alpha;
    r.pass = *r.p_value > alpha;
    return r;
}

/// Merges trailing bins until every bin expects at least `min_expected` counts.
/// The last bin absorbs the remaining probability mass so the law stays normalized.
inline void pool_bins(std::vector<double>& observed, std::vector<double>& probs, double n,
                      double min_expected = 5.0)
{
    const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
    if (total < 1.0) probs.back() += 1.0 - total;
    while (probs.size() > 2 && n * probs.back() < min_expected) {
        probs[probs.size() - 2] += probs.back();
        observed[observed.size() - 2] += observed.back();
        probs.pop_back();
        observed.pop_back();
    }
    // Leading bins too (e.g. a tiny P(0) in a shifted law).
    while (probs.size() > 2 && n * probs.front() < min_expected) {
        probs[1] += probs[0];
        observed[1] += observed[0];
        probs.erase(probs.begin());
        observed.erase(observed.begin());
    }
}

}  // namespace sqft
