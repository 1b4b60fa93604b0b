#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace sqft {

using Occupation = std::vector<int>;

struct Truncation {
    int N_max = 4;              ///< cap on the total particle number
    int n_max = 4;              ///< cap on each mode's occupation
    double mass_bound = 1e-6;   ///< largest acceptable dropped probability

    void validate() const
    {
        require(N_max >= 0 && n_max >= 0, "truncation caps must be non-negative");
        require(mass_bound >= 0, "truncation mass bound must be non-negative");
    }
};

/**
 * Occupation-number basis of K modes truncated by a total cap N_max and a
 * per-mode cap n_max. States are ordered by total particle number, then
 * lexicographically, so each particle-number sector is a contiguous block.
 */
class FockBasis {
public:
    FockBasis(std::size_t modes, const Truncation& tr) : K_(modes), tr_(tr)
    {
        tr.validate();
        block_start_.assign(static_cast<std::size_t>(tr.N_max) + 2, 0);
        Occupation occ(K_, 0);
        for (int N = 0; N <= tr.N_max; ++N) {
            block_start_[static_cast<std::size_t>(N)] = states_.size();
            fill(occ, 0, N);
        }
        block_start_.back() = states_.size();
        for (std::size_t i = 0; i < states_.size(); ++i) index_.emplace(states_[i], i);
    }

    std::size_t modes() const { return K_; }
    const Truncation& truncation() const { return tr_; }
    std::size_t dim() const { return states_.size(); }
    int max_particles() const { return tr_.N_max; }
    const Occupation& state(std::size_t i) const { return states_[i]; }

    std::size_t block_begin(int N) const { return block_start_[static_cast<std::size_t>(N)]; }
    std::size_t block_end(int N) const { return block_start_[static_cast<std::size_t>(N) + 1]; }
    std::size_t block_size(int N) const { return block_end(N) - block_begin(N); }

    static int total(const Occupation& o)
    {
        int s = 0;
        for (int v : o) s += v;
        return s;
    }

    std::optional<std::size_t> find(const Occupation& o) const
    {
        auto it = index_.find(o);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

private:
    // Enumerates occupations of modes [k, K) holding `left` particles, lexicographically descending in mode 0.
    void fill(Occupation& occ, std::size_t k, int left)
    {
        if (k + 1 == K_ || K_ == 0) {
            if (K_ == 0) {
                if (left == 0) states_.push_back(occ);
                return;
            }
            if (left <= tr_.n_max) {
                occ[k] = left;
                states_.push_back(occ);
                occ[k] = 0;
            }
            return;
        }
        for (int v = std::min(left, tr_.n_max); v >= 0; --v) {
            occ[k] = v;
            fill(occ, k + 1, left - v);
        }
        occ[k] = 0;
    }

    std::size_t K_;
    Truncation tr_;
    std::vector<Occupation> states_;
    std::vector<std::size_t> block_start_;
    std::map<Occupation, std::size_t> index_;
};

using BasisPtr = std::shared_ptr<const FockBasis>;

struct FockVector {
    BasisPtr basis;
    std::vector<std::complex<double>> amp;

    explicit FockVector(BasisPtr b) : basis(std::move(b)), amp(basis->dim()) {}

    double norm2() const
    {
        double s = 0.0;
        for (const auto& a : amp) s += std::norm(a);
        return s;
    }
    std::complex<double> operator[](const Occupation& o) const
    {
        auto i = basis->find(o);
        return i ? amp[*i] : std::complex<double>(0.0);
    }
    /// <n_k> for mode k.
    double occupation_mean(std::size_t k) const
    {
        double s = 0.0;
        for (std::size_t i = 0; i < amp.size(); ++i) s += basis->state(i)[k] * std::norm(amp[i]);
        return s;
    }
};

/// b_k^dagger applied in the truncated basis; components leaving the basis are dropped.
inline FockVector apply_creation(const FockVector& v, std::size_t k)
{
    FockVector out(v.basis);
    for (std::size_t i = 0; i < v.amp.size(); ++i) {
        if (v.amp[i] == 0.0) continue;
        Occupation o = v.basis->state(i);
        o[k] += 1;
        if (auto j = v.basis->find(o)) out.amp[*j] += std::sqrt(static_cast<double>(o[k])) * v.amp[i];
    }
    return out;
}

/// Density operator stored as one dense block per total particle number.
struct FockDensityMatrix {
    BasisPtr basis;
    std::vector<Eigen::MatrixXcd> blocks;
    double truncated_mass = 0.0;

    explicit FockDensityMatrix(BasisPtr b) : basis(std::move(b))
    {
        for (int N = 0; N <= basis->max_particles(); ++N) {
            const auto n = static_cast<Eigen::Index>(basis->block_size(N));
            blocks.push_back(Eigen::MatrixXcd::Zero(n, n));
        }
    }

    std::complex<double> entry(std::size_t a, std::size_t b) const
    {
        const int Na = FockBasis::total(basis->state(a)), Nb = FockBasis::total(basis->state(b));
        if (Na != Nb) return 0.0;
        const auto o = basis->block_begin(Na);
        return blocks[static_cast<std::size_t>(Na)](static_cast<Eigen::Index>(a - o), static_cast<Eigen::Index>(b - o));
    }
    std::complex<double>& at(std::size_t a, std::size_t b)
    {
        const int Na = FockBasis::total(basis->state(a));
        if (FockBasis::total(basis->state(b)) != Na)
            throw InvalidParameter("density entry outside its particle-number block");
        const auto o = basis->block_begin(Na);
        return blocks[static_cast<std::size_t>(Na)](static_cast<Eigen::Index>(a - o), static_cast<Eigen::Index>(b - o));
    }
    std::complex<double> entry(const Occupation& a, const Occupation& b) const
    {
        auto i = basis->find(a), j = basis->find(b);
        return (i && j) ? entry(*i, *j) : std::complex<double>(0.0);
    }

    std::complex<double> trace() const
    {
        std::complex<double> s = 0.0;
        for (const auto& B : blocks) s += B.trace();
        return s;
    }
    double hermiticity_error() const
    {
        double e = 0.0;
        for (const auto& B : blocks)
            if (B.size()) e = std::max(e, (B - B.adjoint()).cwiseAbs().maxCoeff());
        return e;
    }
    Eigen::MatrixXcd dense() const
    {
        const auto n = static_cast<Eigen::Index>(basis->dim());
        Eigen::MatrixXcd D = Eigen::MatrixXcd::Zero(n, n);
        for (int N = 0; N <= basis->max_particles(); ++N) {
            const auto o = static_cast<Eigen::Index>(basis->block_begin(N));
            const auto& B = blocks[static_cast<std::size_t>(N)];
            D.block(o, o, B.rows(), B.cols()) = B;
        }
        return D;
    }
    /// Diagonal weight of each basis state, in basis order.
    std::vector<double> diagonal() const
    {
        std::vector<double> d(basis->dim());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = entry(i, i).real();
        return d;
    }
};

/**
 * Probability that independent per-mode occupations respect both caps:
 * every n_k <= n_max and sum_k n_k <= N_max. `pmf[k][n]` must be given for
 * n = 0..n_max. Computed by convolving the per-mode laws over the total.
 */
inline double kept_probability(const std::vector<std::vector<double>>& pmf, const Truncation& tr)
{
    std::vector<double> dp(static_cast<std::size_t>(tr.N_max) + 1, 0.0);
    dp[0] = 1.0;
    for (const auto& p : pmf) {
        std::vector<double> nd(dp.size(), 0.0);
        for (std::size_t s = 0; s < dp.size(); ++s) {
            if (dp[s] == 0.0) continue;
            for (std::size_t n = 0; n < p.size() && s + n < dp.size(); ++n) nd[s + n] += dp[s] * p[n];
        }
        dp = std::move(nd);
    }
    double kept = 0.0;
    for (double v : dp) kept += v;
    return kept;
}

}  // namespace sqft
