#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include <boost/math/special_functions/laguerre.hpp>

#include "errors.hpp"
#include "fock.hpp"
#include "grid.hpp"
#include "noise.hpp"

namespace sqft {

// ---------------------------------------------------------------------------
// On-shell coupling and the random S-matrix
// ---------------------------------------------------------------------------

/// Dimensionless dispersion E_p/(lambda^2 T); infinite when the coupling is off.
inline double dimensionless_energy(double E, double lambda, double T)
{
    const double c = lambda * lambda * T;
    return c > 0 ? E / c : std::numeric_limits<double>::infinity();
}

/// 1/(1 + Etilde), the per-mode geometric ratio.
inline double geometric_ratio(double Et) { return std::isinf(Et) ? 0.0 : 1.0 / (1.0 + Et); }

struct OnShellCoupling {
    std::uint64_t grid_fingerprint = 0;
    double lambda = 0.0;
    double T = 1.0;
    double d3p = 1.0;
    std::vector<cplx> V;        ///< i lambda W(E_p,p) / sqrt((2pi)^3 2E_p)
    std::vector<cplx> gamma;    ///< d3p conj(V_p)
    std::vector<double> Etilde; ///< E_p / (lambda^2 T)

    std::size_t size() const { return V.size(); }
    /// Normalized-mode coherent amplitude alpha_p = -gamma_p / sqrt(d3p).
    cplx alpha(std::size_t i) const { return -gamma[i] / std::sqrt(d3p); }
};

inline OnShellCoupling coupling_from_modes(const NoiseModes& modes, double lambda, const MomentumGrid& grid)
{
    require(lambda >= 0, "coupling lambda must be non-negative");
    if (modes.kind != NoiseModes::Kind::OnShell || modes.grid_fingerprint != grid.fingerprint() ||
        modes.size() != grid.size())
        throw GridMismatch("coupling_from_modes: noise modes were not sampled for this grid");
    OnShellCoupling c;
    c.grid_fingerprint = grid.fingerprint();
    c.lambda = lambda;
    c.T = modes.T;
    c.d3p = grid.d3p();
    const double norm3 = std::pow(kTwoPi, 3);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double E = grid[i].E;
        const cplx V = cplx(0, lambda) * modes[i] / std::sqrt(norm3 * 2 * E);
        c.V.push_back(V);
        c.gamma.push_back(c.d3p * std::conj(V));
        c.Etilde.push_back(dimensionless_energy(E, lambda, c.T));
    }
    return c;
}

/// 1/(p^2 + m^2 - i eta) with p^2 = -p0^2 + |p|^2.
inline cplx feynman_propagator(const std::array<double, 4>& p, double m, double eta)
{
    require(eta > 0, "feynman_propagator: eta must be positive");
    const double p2 = -p[0] * p[0] + p[1] * p[1] + p[2] * p[2] + p[3] * p[3];
    return 1.0 / cplx(p2 + m * m, -eta);
}

/// Equal-time (spacelike) propagator from the on-shell 3D form,
/// G = (i/(2pi)^3) sum_p d3p e^{ip.r - iE|t|}/(2E), summed over the grid's modes.
inline cplx position_propagator_onshell(const MomentumGrid& grid, const Vec3& r, double t)
{
    cplx s = 0.0;
    for (const auto& md : grid.modes()) {
        const double ph = md.p[0] * r[0] + md.p[1] * r[1] + md.p[2] * r[2] - md.E * std::abs(t);
        s += std::polar(1.0, ph) / (2 * md.E);
    }
    return cplx(0, 1) * grid.d3p() / std::pow(kTwoPi, 3) * s;
}

/// exp(-sum_p |V_p|^2 d3p).
inline double s00_modulus_sq(const OnShellCoupling& c)
{
    double s = 0.0;
    for (const auto& v : c.V) s += std::norm(v);
    return std::exp(-s * c.d3p);
}

/// Hermitian-symmetry check of a 4D mode set.
inline double hermitian_defect(const NoiseModes& m)
{
    double d = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i)
        d = std::max(d, std::abs(m.W[m.lattice.conjugate_index(i)] - std::conj(m.W[i])));
    return d;
}

/// exp{(i lambda^2/2)(2pi)^-4 sum_p d4p |W(p)|^2 / (p^2 + m^2 - i eta)} over the full 4D lattice.
inline cplx s00_full(const NoiseModes& noise4d, double lambda, double m, double eta)
{
    if (noise4d.kind != NoiseModes::Kind::Lattice4D)
        throw InvalidParameter("s00_full needs the full 4D mode set");
    const double scale = std::max(1.0, [&] {
        double mx = 0;
        for (const auto& w : noise4d.W) mx = std::max(mx, std::abs(w));
        return mx;
    }());
    if (hermitian_defect(noise4d) > 1e-12 * scale)
        throw InvalidParameter("s00_full: missing or inconsistent conjugate modes");
    const auto& lat = noise4d.lattice;
    cplx s = 0.0;
    for (std::size_t i = 0; i < noise4d.size(); ++i)
        s += std::norm(noise4d.W[i]) * feynman_propagator(lat.four_momentum(i), m, eta);
    return std::exp(cplx(0, 0.5 * lambda * lambda) * lat.d4p() / std::pow(kTwoPi, 4) * s);
}

/// S_{p',p} = S00 (delta3(p - p') - V_p conj(V_p')), delta3 as Kronecker / d3p.
inline cplx s_matrix_free(std::size_t p_in, std::size_t p_out, const OnShellCoupling& c, cplx s00)
{
    require(p_in < c.size() && p_out < c.size(), "s_matrix_free: mode index out of range");
    const double delta = p_in == p_out ? 1.0 / c.d3p : 0.0;
    return s00 * (delta - c.V[p_in] * std::conj(c.V[p_out]));
}

// ---------------------------------------------------------------------------
// Lattice helpers shared with the phi^4 code
// ---------------------------------------------------------------------------

/// Every spatial momentum of a 4D lattice as a grid (no cutoff).
inline MomentumGrid grid_from_lattice(const SpacetimeLattice& lat, double m)
{
    std::vector<IntVec3> ns;
    for (std::size_t a = 0; a < lat.Nx; ++a)
        for (std::size_t b = 0; b < lat.Ny; ++b)
            for (std::size_t c = 0; c < lat.Nz; ++c)
                ns.push_back({SpacetimeLattice::signed_index(a, lat.Nx), SpacetimeLattice::signed_index(b, lat.Ny),
                              SpacetimeLattice::signed_index(c, lat.Nz)});
    return MomentumGrid::from_modes(lat.L, m, lat.T, ns);
}

/// Lattice frequency index used as the on-shell point of a mode: the bin nearest
/// E_p, clamped to 1..Nt/2-1 so that (k,p) and (k,-p) are never conjugate partners.
inline int onshell_frequency_bin(const SpacetimeLattice& lat, double E)
{
    require(lat.Nt >= 4, "on-shell bins need at least 4 time slices");
    const int hi = static_cast<int>(lat.Nt / 2) - 1;
    const int k = static_cast<int>(std::lround(E / lat.dp0()));
    return std::clamp(k, 1, hi);
}

/// W(E_p, p) read off a 4D mode set at the on-shell bins of `grid`.
inline NoiseModes onshell_restriction(const NoiseModes& noise4d, const MomentumGrid& grid)
{
    require(noise4d.kind == NoiseModes::Kind::Lattice4D, "onshell_restriction needs 4D modes");
    const auto& lat = noise4d.lattice;
    NoiseModes out;
    out.kind = NoiseModes::Kind::OnShell;
    out.grid_fingerprint = grid.fingerprint();
    out.T = lat.T;
    out.V = lat.V();
    for (const auto& md : grid.modes()) {
        const int k = onshell_frequency_bin(lat, md.E);
        out.W.push_back(noise4d.W[lat.momentum_index({k, md.n[0], md.n[1], md.n[2]})]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Final states
// ---------------------------------------------------------------------------

/// Product coherent state: amplitude of |{n}> is s00 prod_k alpha_k^{n_k}/sqrt(n_k!).
struct CoherentState {
    std::vector<cplx> alpha;
    cplx s00 = 1.0;

    /// |S00|^2 exp(sum |alpha|^2); equals 1 when s00 is the true vacuum-persistence amplitude.
    double norm() const
    {
        double a2 = 0.0;
        for (const auto& a : alpha) a2 += std::norm(a);
        return std::norm(s00) * std::exp(a2);
    }
    double mean_occupation(std::size_t k) const { return std::norm(alpha[k]); }

    FockVector to_fock(BasisPtr basis) const
    {
        require(basis->modes() == alpha.size(), "basis mode count does not match the state");
        FockVector v(basis);
        for (std::size_t i = 0; i < basis->dim(); ++i) {
            cplx a = s00;
            const auto& o = basis->state(i);
            for (std::size_t k = 0; k < o.size(); ++k)
                a *= std::pow(alpha[k], o[k]) / std::sqrt(std::tgamma(o[k] + 1.0));
            v.amp[i] = a;
        }
        return v;
    }
};

inline CoherentState final_state_vacuum(const OnShellCoupling& c, cplx s00)
{
    CoherentState s;
    s.s00 = s00;
    for (std::size_t i = 0; i < c.size(); ++i) s.alpha.push_back(c.alpha(i));
    return s;
}

/// U applied to the normalized occupation state `initial` (one count per mode):
/// prod_k (b_k^dag - conj(alpha_k))^{n_k} / sqrt(n_k!) acting on the coherent vacuum image.
inline FockVector final_state_particles(const Occupation& initial, const OnShellCoupling& c, cplx s00,
                                        const Truncation& tr)
{
    require(initial.size() == c.size(), "initial occupation does not match the grid");
    auto basis = std::make_shared<const FockBasis>(c.size(), tr);
    const CoherentState cs = final_state_vacuum(c, s00);
    FockVector v = cs.to_fock(basis);
    for (std::size_t k = 0; k < initial.size(); ++k) {
        for (int r = 0; r < initial[k]; ++r) {
            FockVector w = apply_creation(v, k);
            const cplx sh = std::conj(c.alpha(k));
            for (std::size_t i = 0; i < w.amp.size(); ++i) w.amp[i] -= sh * v.amp[i];
            v = std::move(w);
        }
        const double f = std::sqrt(std::tgamma(initial[k] + 1.0));
        for (auto& a : v.amp) a /= f;
    }
    const double lost = std::norm(s00) > 0 ? 1.0 - v.norm2() / cs.norm() : 0.0;
    if (lost > tr.mass_bound)
        throw TruncationError("final_state_particles: truncation drops " + detail::sci(lost) +
                              " of the norm");
    return v;
}

// ---------------------------------------------------------------------------
// Partition function and Gaussian pairing
// ---------------------------------------------------------------------------

/// ln Z = sum_p ln((1 + Etilde)/Etilde) over the grid.
inline double log_partition_function(const MomentumGrid& grid, double lambda, double T)
{
    double s = 0.0;
    for (const auto& md : grid.modes()) s += std::log1p(lambda * lambda * T / md.E);
    return s;
}

inline double partition_function(const MomentumGrid& grid, double lambda, double T)
{
    return std::exp(log_partition_function(grid, lambda, T));
}

struct VLabel {
    std::size_t mode;
    bool conjugate;  ///< true for conj(V_p)
};

/**
 * E(|S00|^2 prod V prod conj(V)) = (1/Z) sum over bijections pi of
 * prod_j delta3(p_j - p'_pi(j)) / (1 + Etilde_{p_j}).
 */
inline double pairing_expectation(const std::vector<VLabel>& labels, const MomentumGrid& grid, double lambda, double T)
{
    std::vector<std::size_t> v, vc;
    for (const auto& l : labels) {
        require(l.mode < grid.size(), "pairing_expectation: label outside the grid");
        (l.conjugate ? vc : v).push_back(l.mode);
    }
    const double invZ = std::exp(-log_partition_function(grid, lambda, T));
    if (v.size() != vc.size()) return 0.0;
    std::vector<std::size_t> perm(vc.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    double total = 0.0;
    do {
        double term = 1.0;
        for (std::size_t j = 0; j < v.size() && term != 0.0; ++j) {
            if (v[j] != vc[perm[j]]) {
                term = 0.0;
                break;
            }
            const double Et = dimensionless_energy(grid[v[j]].E, lambda, T);
            term *= grid.delta3_zero() * geometric_ratio(Et);
        }
        total += term;
    } while (std::next_permutation(perm.begin(), perm.end()));
    return invZ * total;
}

}  // namespace sqft
