#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include <boost/math/special_functions/laguerre.hpp>

#include "errors.hpp"
#include "fock.hpp"
#include "freefield.hpp"
#include "grid.hpp"

namespace sqft {

namespace detail {

inline std::vector<double> geometric_ratios(const MomentumGrid& grid, double lambda, double T)
{
    std::vector<double> q;
    for (const auto& md : grid.modes()) q.push_back(geometric_ratio(dimensionless_energy(md.E, lambda, T)));
    return q;
}

/// (1 - q) q^n for n = 0..n_max.
inline std::vector<double> geometric_pmf(double q, int n_max)
{
    std::vector<double> p(static_cast<std::size_t>(n_max) + 1);
    for (int n = 0; n <= n_max; ++n) p[static_cast<std::size_t>(n)] = (1 - q) * std::pow(q, n);
    return p;
}

/// Occupation law of the initially occupied mode: (1-q) q^n (1 + Et^2 n)/(1 + Et).
inline std::vector<double> single_mode_pmf(double q, double Et, int n_max)
{
    std::vector<double> p = geometric_pmf(q, n_max);
    for (int n = 0; n <= n_max; ++n) {
        double w;
        if (std::isinf(Et))
            w = n == 1 ? 1.0 : 0.0;  // q = 0: the particle stays put
        else
            w = p[static_cast<std::size_t>(n)] * (1 + Et * Et * n) / (1 + Et);
        p[static_cast<std::size_t>(n)] = w;
    }
    return p;
}

inline void enforce_bound(double truncated, const Truncation& tr, const char* who)
{
    if (truncated > tr.mass_bound)
        throw TruncationError(std::string(who) + ": truncation drops " + detail::sci(truncated) +
                              " probability, above the configured bound");
}

}  // namespace detail

/// Diagonal weights prod_k (1 - q_k) q_k^{n_k} with q_k = 1/(1 + Etilde_k), i.e.
/// (1/Z) prod_j 1/(1 + Etilde_{p_j}) per normalized occupation state.
inline FockDensityMatrix density_vacuum(const MomentumGrid& grid, double lambda, double T, const Truncation& tr)
{
    auto basis = std::make_shared<const FockBasis>(grid.size(), tr);
    const auto q = detail::geometric_ratios(grid, lambda, T);
    FockDensityMatrix rho(basis);
    for (std::size_t i = 0; i < basis->dim(); ++i) {
        const auto& o = basis->state(i);
        double w = 1.0;
        for (std::size_t k = 0; k < o.size(); ++k) w *= (1 - q[k]) * std::pow(q[k], o[k]);
        rho.at(i, i) = w;
    }
    std::vector<std::vector<double>> pmf;
    for (double qk : q) pmf.push_back(detail::geometric_pmf(qk, tr.n_max));
    rho.truncated_mass = 1.0 - kept_probability(pmf, tr);
    detail::enforce_bound(rho.truncated_mass, tr, "density_vacuum");
    return rho;
}

/// Final density of one initial particle in mode p, divided by delta3(0) so the trace is one:
/// vacuum weights times (1 + Etilde_p^2 n_p)/(1 + Etilde_p).
inline FockDensityMatrix density_single(std::size_t p, const MomentumGrid& grid, double lambda, double T,
                                        const Truncation& tr)
{
    require(p < grid.size(), "density_single: mode not on grid");
    auto basis = std::make_shared<const FockBasis>(grid.size(), tr);
    const auto q = detail::geometric_ratios(grid, lambda, T);
    const double Et = dimensionless_energy(grid[p].E, lambda, T);
    std::vector<std::vector<double>> pmf;
    for (std::size_t k = 0; k < q.size(); ++k)
        pmf.push_back(k == p ? detail::single_mode_pmf(q[k], Et, tr.n_max) : detail::geometric_pmf(q[k], tr.n_max));
    FockDensityMatrix rho(basis);
    for (std::size_t i = 0; i < basis->dim(); ++i) {
        const auto& o = basis->state(i);
        double w = 1.0;
        for (std::size_t k = 0; k < o.size(); ++k) w *= pmf[k][static_cast<std::size_t>(o[k])];
        rho.at(i, i) = w;
    }
    rho.truncated_mass = 1.0 - kept_probability(pmf, tr);
    detail::enforce_bound(rho.truncated_mass, tr, "density_single");
    return rho;
}

/**
 * E[U b_p^dag|0><0|b_q U^dag] in normalized modes:
 *   delta_pq/(1 + Et_p) rho0 + Et_p Et_q/((1 + Et_p)(1 + Et_q)) b_p^dag rho0 b_q.
 * truncated_mass reports the larger dropped mass of the two diagonal (single-particle) blocks,
 * which bounds the dropped Hilbert-Schmidt weight of this operator.
 */
inline FockDensityMatrix density_offdiagonal(std::size_t p, std::size_t q, const MomentumGrid& grid, double lambda,
                                             double T, const Truncation& tr)
{
    require(p < grid.size() && q < grid.size(), "density_offdiagonal: mode not on grid");
    auto basis = std::make_shared<const FockBasis>(grid.size(), tr);
    const auto g = detail::geometric_ratios(grid, lambda, T);
    const double Ep = dimensionless_energy(grid[p].E, lambda, T);
    const double Eq = dimensionless_energy(grid[q].E, lambda, T);
    auto frac = [](double E) { return std::isinf(E) ? 1.0 : E / (1 + E); };
    const double coef = frac(Ep) * frac(Eq);
    auto w0 = [&](const Occupation& o) {
        double w = 1.0;
        for (std::size_t k = 0; k < o.size(); ++k) w *= (1 - g[k]) * std::pow(g[k], o[k]);
        return w;
    };
    FockDensityMatrix rho(basis);
    for (std::size_t a = 0; a < basis->dim(); ++a) {
        const Occupation& oa = basis->state(a);
        if (p == q) rho.at(a, a) += g[p] * w0(oa);
        if (oa[p] < 1) continue;
        Occupation n = oa;
        n[p] -= 1;
        Occupation ob = n;
        ob[q] += 1;
        auto b = basis->find(ob);
        if (!b) continue;
        rho.at(a, *b) += coef * std::sqrt(static_cast<double>(oa[p])) *
                         std::sqrt(static_cast<double>(ob[q])) * w0(n);
    }
    auto dropped = [&](std::size_t k) {
        const double Et = dimensionless_energy(grid[k].E, lambda, T);
        std::vector<std::vector<double>> pmf;
        for (std::size_t j = 0; j < g.size(); ++j)
            pmf.push_back(j == k ? detail::single_mode_pmf(g[j], Et, tr.n_max) : detail::geometric_pmf(g[j], tr.n_max));
        return 1.0 - kept_probability(pmf, tr);
    };
    rho.truncated_mass = std::max(dropped(p), dropped(q));
    detail::enforce_bound(rho.truncated_mass, tr, "density_offdiagonal");
    return rho;
}

/// True when every nonzero entry connects occupations with equal momentum multisets
/// (shifted by `ket_extra` on the ket side and `bra_extra` on the bra side, if given).
inline bool satisfies_equal_momentum(const FockDensityMatrix& rho, long ket_extra = -1, long bra_extra = -1)
{
    const auto& B = *rho.basis;
    for (std::size_t a = 0; a < B.dim(); ++a)
        for (std::size_t b = 0; b < B.dim(); ++b) {
            if (rho.entry(a, b) == 0.0) continue;
            Occupation oa = B.state(a), ob = B.state(b);
            if (ket_extra >= 0) oa[static_cast<std::size_t>(ket_extra)] -= 1;
            if (bra_extra >= 0) ob[static_cast<std::size_t>(bra_extra)] -= 1;
            if (oa != ob) return false;
        }
    return true;
}

// ---------------------------------------------------------------------------
// Mode SDE without the Hamiltonian term
// ---------------------------------------------------------------------------

/// <m|D(beta)|n> for a single bosonic mode, via associated Laguerre polynomials.
inline cplx displacement_element(int m, int n, cplx beta)
{
    const double x = std::norm(beta);
    const double e = std::exp(-x / 2);
    if (m >= n) {
        const double f = std::sqrt(std::exp(std::lgamma(n + 1.0) - std::lgamma(m + 1.0)));
        return f * std::pow(beta, m - n) * e * boost::math::laguerre(static_cast<unsigned>(n), static_cast<unsigned>(m - n), x);
    }
    const double f = std::sqrt(std::exp(std::lgamma(m + 1.0) - std::lgamma(n + 1.0)));
    return f * std::pow(-std::conj(beta), n - m) * e *
           boost::math::laguerre(static_cast<unsigned>(m), static_cast<unsigned>(n - m), x);
}

/// Wiener values (W1_t, W2_t) of one mode.
struct ModeWiener {
    double w1 = 0.0;
    double w2 = 0.0;
};

/**
 * Samples W^(1,2)_t(p) for every grid mode. Processes of p and -p are tied by
 * d omega(-p) = conj(d omega(p)), i.e. W1(-p) = W1(p), W2(-p) = -W2(p); the zero mode
 * is real with Var W1 = 2t.
 */
inline std::vector<ModeWiener> sample_mode_wiener(const MomentumGrid& grid, double t, const Stream& stream)
{
    require(t >= 0, "sample_mode_wiener: t must be non-negative");
    std::vector<ModeWiener> out(grid.size());
    const double s = std::sqrt(t);
    const Stream st = stream.child("mode-wiener");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const IntVec3 n = grid[i].n;
        const IntVec3 neg{-n[0], -n[1], -n[2]};
        if (n == neg) {
            out[i] = {std::sqrt(2.0) * s * st.child(MomentumGrid::mode_key(n)).normal(0), 0.0};
            continue;
        }
        const bool canonical = n > neg;
        const Stream ms = st.child(MomentumGrid::mode_key(canonical ? n : neg));
        const double w1 = s * ms.normal(0), w2 = s * ms.normal(1);
        out[i] = {w1, canonical ? w2 : -w2};
    }
    return out;
}

/**
 * Closed-form solution of the mode equation with the Hamiltonian term off:
 * each mode is displaced by beta = lambda/(2 sqrt(E_p)) (W2 + i W1), where lambda is
 * the bare coupling. Works in normalized modes on the truncated basis of `psi0`.
 */
inline FockVector mode_sde_solution(const FockVector& psi0, double bare_lambda, const MomentumGrid& grid,
                                    const std::vector<ModeWiener>& W)
{
    const auto& B = *psi0.basis;
    require(B.modes() == grid.size() && W.size() == grid.size(), "mode_sde_solution: size mismatch");
    FockVector v = psi0;
    const int nm = B.truncation().n_max;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const cplx beta = bare_lambda / (2 * std::sqrt(grid[k].E)) * cplx(W[k].w2, W[k].w1);
        if (beta == 0.0) continue;
        std::vector<cplx> D(static_cast<std::size_t>((nm + 1) * (nm + 1)));
        for (int a = 0; a <= nm; ++a)
            for (int b = 0; b <= nm; ++b) D[static_cast<std::size_t>(a * (nm + 1) + b)] = displacement_element(a, b, beta);
        FockVector w(psi0.basis);
        for (std::size_t i = 0; i < B.dim(); ++i) {
            if (v.amp[i] == 0.0) continue;
            Occupation o = B.state(i);
            const int from = o[k];
            for (int a = 0; a <= nm; ++a) {
                o[k] = a;
                if (auto j = B.find(o)) w.amp[*j] += D[static_cast<std::size_t>(a * (nm + 1) + from)] * v.amp[i];
            }
        }
        v = std::move(w);
    }
    const double lost = psi0.norm2() - v.norm2();
    if (lost > B.truncation().mass_bound)
        throw TruncationError("mode_sde_solution: truncation drops " + detail::sci(lost) + " of the norm");
    return v;
}

}  // namespace sqft
