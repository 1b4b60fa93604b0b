#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "density.hpp"
#include "errors.hpp"
#include "fock.hpp"
#include "freefield.hpp"
#include "noise.hpp"
#include "renorm.hpp"

namespace sqft {

struct Phi4Config {
    double g = 0.0;
    RenormalizationScheme scheme;
    double T = 1.0;
    double V = 1.0;
    double eta_factor = 1.0;  ///< eta = eta_factor * (pi/T)

    double lambda() const { return scheme.bare(); }
    double m() const { return scheme.m; }
    double eta() const { return eta_factor * kPi / T; }
    void validate() const
    {
        scheme.validate();
        require(T > 0 && V > 0, "phi4 config needs T, V > 0");
        require(eta_factor > 0, "eta must be positive");
    }
};

// ---------------------------------------------------------------------------
// Combinatorics
// ---------------------------------------------------------------------------

/// Number of ways to group `legs` distinguishable vertex legs into k self-contractions
/// (pairs) with the rest left single, for k = 0..legs/2, by explicit enumeration.
inline std::vector<long> contraction_counts(int legs)
{
    std::vector<long> counts(static_cast<std::size_t>(legs / 2) + 1, 0);
    std::vector<int> partner(static_cast<std::size_t>(legs), -2);  // -2 unassigned, -1 single
    std::function<void(int, int)> rec = [&](int i, int pairs) {
        while (i < legs && partner[static_cast<std::size_t>(i)] != -2) ++i;
        if (i == legs) {
            ++counts[static_cast<std::size_t>(pairs)];
            return;
        }
        partner[static_cast<std::size_t>(i)] = -1;
        rec(i + 1, pairs);
        for (int j = i + 1; j < legs; ++j) {
            if (partner[static_cast<std::size_t>(j)] != -2) continue;
            partner[static_cast<std::size_t>(i)] = j;
            partner[static_cast<std::size_t>(j)] = i;
            rec(i + 1, pairs + 1);
            partner[static_cast<std::size_t>(j)] = -2;
        }
        partner[static_cast<std::size_t>(i)] = -2;
    };
    rec(0, 0);
    return counts;
}

/// Ways of attaching the legs of one vertex to `external` distinct external lines.
inline long vertex_attachment_count(int legs, int external)
{
    if (external > legs) return 0;
    std::vector<int> idx(static_cast<std::size_t>(legs));
    std::iota(idx.begin(), idx.end(), 0);
    long count = 0;
    // Count injective maps external line -> leg by enumerating leg orderings and
    // keeping each distinct prefix once.
    std::vector<std::vector<int>> seen;
    do {
        std::vector<int> pre(idx.begin(), idx.begin() + external);
        if (std::find(seen.begin(), seen.end(), pre) == seen.end()) {
            seen.push_back(pre);
            ++count;
        }
    } while (std::next_permutation(idx.begin(), idx.end()));
    return count;
}

inline double factorial(int n) { return std::tgamma(n + 1.0); }

/// All perfect matchings of {0..n-1} (n even), each as a list of index pairs.
inline std::vector<std::vector<std::pair<int, int>>> perfect_matchings(int n)
{
    std::vector<std::vector<std::pair<int, int>>> out;
    if (n % 2) return out;
    std::vector<std::pair<int, int>> cur;
    std::vector<bool> used(static_cast<std::size_t>(n), false);
    std::function<void()> rec = [&] {
        int i = 0;
        while (i < n && used[static_cast<std::size_t>(i)]) ++i;
        if (i == n) {
            out.push_back(cur);
            return;
        }
        used[static_cast<std::size_t>(i)] = true;
        for (int j = i + 1; j < n; ++j) {
            if (used[static_cast<std::size_t>(j)]) continue;
            used[static_cast<std::size_t>(j)] = true;
            cur.emplace_back(i, j);
            rec();
            cur.pop_back();
            used[static_cast<std::size_t>(j)] = false;
        }
        used[static_cast<std::size_t>(i)] = false;
    };
    rec();
    return out;
}

// ---------------------------------------------------------------------------
// Gaussian pairing on a 4D lattice
// ---------------------------------------------------------------------------

using LatticeMomentum = std::array<int, 4>;  ///< signed (k0, n1, n2, n3)

/// e(p,q) = (2pi)^4 delta4(p+q) (1 - delta_{|p0|,E_p}/(1 + Etilde_p)) with (2pi)^4 delta4(0) = 2TV.
class PairingKernel {
public:
    PairingKernel(const SpacetimeLattice& lat, double lambda, double m)
        : lat_(lat), lambda_(lambda), m_(m), logZ_(log_partition_function(grid_from_lattice(lat, m), lambda, lat.T))
    {
    }

    double operator()(const LatticeMomentum& p, const LatticeMomentum& q) const
    {
        if (lat_.momentum_index(p) != lat_.momentum_index(neg(q))) return 0.0;
        const double twoTV = 2 * lat_.T * lat_.V();
        return twoTV * (1.0 - (on_shell(p) ? geometric_ratio(etilde(p)) : 0.0));
    }

    double energy(const LatticeMomentum& p) const
    {
        const double k = kTwoPi / lat_.L;
        const double a = k * canon(p[1], lat_.Nx), b = k * canon(p[2], lat_.Ny), c = k * canon(p[3], lat_.Nz);
        return std::sqrt(m_ * m_ + a * a + b * b + c * c);
    }
    double etilde(const LatticeMomentum& p) const { return dimensionless_energy(energy(p), lambda_, lat_.T); }
    bool on_shell(const LatticeMomentum& p) const
    {
        const int k0 = canon(p[0], lat_.Nt);
        return std::abs(k0) == onshell_frequency_bin(lat_, energy(p));
    }

    /// Z over the lattice's spatial modes.
    double log_partition() const { return logZ_; }

    const SpacetimeLattice& lattice() const { return lat_; }

private:
    static LatticeMomentum neg(const LatticeMomentum& p) { return {-p[0], -p[1], -p[2], -p[3]}; }
    static int canon(int k, std::size_t n)
    {
        return SpacetimeLattice::signed_index(SpacetimeLattice::slot(k, n), n);
    }

    SpacetimeLattice lat_;
    double lambda_, m_, logZ_;
};

/// (1/Z) sum over perfect matchings of prod e(p_i, p_j); zero for odd lists.
inline double wick_expectation(const std::vector<LatticeMomentum>& momenta, const PairingKernel& e)
{
    if (momenta.size() % 2) return 0.0;
    double total = 0.0;
    for (const auto& mt : perfect_matchings(static_cast<int>(momenta.size()))) {
        double term = 1.0;
        for (const auto& [i, j] : mt) {
            term *= e(momenta[static_cast<std::size_t>(i)], momenta[static_cast<std::size_t>(j)]);
            if (term == 0.0) break;
        }
        total += term;
    }
    return std::exp(-e.log_partition()) * total;
}

inline double wick_expectation(const std::vector<LatticeMomentum>& momenta, const SpacetimeLattice& lat,
                               const Phi4Config& cfg)
{
    return wick_expectation(momenta, PairingKernel(lat, cfg.lambda(), cfg.m()));
}

// ---------------------------------------------------------------------------
// Order-g vacuum amplitude on a 4D lattice
// ---------------------------------------------------------------------------

inline constexpr std::size_t kMaxSg00Sites = 8 * 8 * 8 * 8;

struct Sg00Terms {
    cplx s00 = 1.0;
    cplx quartic = 0.0;     ///< four noise lines into the vertex
    cplx contracted = 0.0;  ///< one self-contraction, two noise lines
    cplx bubble = 0.0;      ///< two self-contractions
    cplx total() const { return s00 * (1.0 + quartic + contracted + bubble); }
};

/**
 * S^g_00 to first order in g: S00 {1 + sum_k c_k/4! (terms with k self-contracted leg pairs)},
 * with lattice sums in place of momentum integrals, Kronecker delta4/d4p at the vertex
 * and delta4(0) = 2TV/(2pi)^4. The noise lines carry lambda W*(q) G(q)/(2pi)^4 and the
 * contracted lines -i G(q)/(2pi)^4.
 */
inline Sg00Terms sg00_order_g_terms(const NoiseModes& noise4d, double g, double lambda, double m, double eta)
{
    if (noise4d.kind != NoiseModes::Kind::Lattice4D) throw InvalidParameter("sg00_order_g needs 4D modes");
    const auto& lat = noise4d.lattice;
    const std::size_t M = lat.sites();
    if (M > kMaxSg00Sites) throw InvalidParameter("sg00_order_g: lattice larger than 8^4");
    Sg00Terms t;
    t.s00 = s00_full(noise4d, lambda, m, eta);
    const auto c = contraction_counts(4);
    const double f4 = factorial(4);
    const double d4p = lat.d4p();
    const double tp4 = std::pow(kTwoPi, 4);
    const cplx mig(0.0, -g);

    std::vector<cplx> G(M), f(M);
    cplx sumG = 0.0, sumWG2 = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
        G[i] = feynman_propagator(lat.four_momentum(i), m, eta);
        f[i] = noise4d.W[i] * G[i];
        sumG += G[i];
        sumWG2 += std::norm(noise4d.W[i]) * G[i] * G[i];
    }

    // B(k) = sum_{q3 + q4 = k} W(q3)G(q3) W(q4)G(q4); the W* side is B(-k).
    std::vector<cplx> B(M, 0.0);
    for (std::size_t a = 0; a < M; ++a) {
        if (f[a] == 0.0) continue;
        const auto ka = lat.signed_momentum(a);
        for (std::size_t b = 0; b < M; ++b) {
            const auto kb = lat.signed_momentum(b);
            B[lat.momentum_index({ka[0] + kb[0], ka[1] + kb[1], ka[2] + kb[2], ka[3] + kb[3]})] += f[a] * f[b];
        }
    }
    cplx quart = 0.0;
    for (std::size_t k = 0; k < M; ++k) quart += B[lat.conjugate_index(k)] * B[k];

    const double l2 = lambda * lambda;
    // Vertex factor -i g (2pi)^4 delta4, lines lambda W*G/(2pi)^4 or -i G/(2pi)^4.
    t.quartic = mig * tp4 * (static_cast<double>(c[0]) / f4) * l2 * l2 / std::pow(tp4, 4) *
                std::pow(d4p, 3) * quart;
    t.contracted = mig * tp4 * (static_cast<double>(c[1]) / f4) * l2 / std::pow(tp4, 2) * cplx(0, -1) / tp4 *
                   d4p * d4p * sumWG2 * sumG;
    t.bubble = mig * tp4 * (static_cast<double>(c[2]) / f4) * lat.delta4_zero() * cplx(0, -1) * cplx(0, -1) /
               std::pow(tp4, 2) * d4p * d4p * sumG * sumG;
    return t;
}

inline cplx sg00_order_g(const NoiseModes& noise4d, const Phi4Config& cfg)
{
    cfg.validate();
    const double eta = cfg.eta_factor * noise4d.lattice.dp0();
    return sg00_order_g_terms(noise4d, cfg.g, cfg.lambda(), cfg.m(), eta).total();
}

// ---------------------------------------------------------------------------
// Renormalized dot factors
// ---------------------------------------------------------------------------

/// int d^3q / E_q^3 over |q| <= Lambda = 4 pi [asinh(r) - r/sqrt(1 + r^2)], r = Lambda/m.
inline double inverse_cube_energy_integral(double cutoff, double m)
{
    const double r = cutoff / m;
    return 4 * kPi * (std::log(r + std::sqrt(r * r + 1)) - r / std::sqrt(r * r + 1));
}

/// int d^3q / E_q^2 over |q| <= Lambda = 4 pi [Lambda - m atan(Lambda/m)].
inline double inverse_square_energy_integral(double cutoff, double m)
{
    return 4 * kPi * (cutoff - m * std::atan(cutoff / m));
}

/// +-(i lambda^2 / (32 pi^3)) int d^3q/E^3 at the scheme's bare coupling.
inline cplx dot_internal_factor(int sign, const RenormalizationScheme& s)
{
    s.validate();
    require(sign == 1 || sign == -1, "dot_internal_factor: sign must be +1 or -1");
    const double lam = s.bare();
    return cplx(0, sign * lam * lam / (32 * kPi * kPi * kPi)) * inverse_cube_energy_integral(s.cutoff, s.m);
}

/// (lambda_p^2 T/(16 pi^3)) (m^2/Lambda^2) int d^3q/E^2.
inline double dot_mixed_factor(const RenormalizationScheme& s, double T)
{
    s.validate();
    return s.lambda_p * s.lambda_p * T / (16 * kPi * kPi * kPi) * (s.m * s.m) / (s.cutoff * s.cutoff) *
           inverse_square_energy_integral(s.cutoff, s.m);
}

/// 1/(1 + Etilde_p) at the bare coupling; 0 when the coupling is off.
inline double dressed_external_suppression(double E, const RenormalizationScheme& s, double T)
{
    s.validate();
    return geometric_ratio(dimensionless_energy(E, s.bare(), T));
}

struct DotLadderRow {
    double cutoff_ratio = 0.0;
    double internal = 0.0;  ///< |dot_internal_factor|
    double mixed = 0.0;
    double dressed = 0.0;
};

inline std::vector<DotLadderRow> dot_factor_ladder(double lambda_p, double m, double T, double E,
                                                   const std::vector<double>& ratios = default_cutoff_ladder())
{
    std::vector<DotLadderRow> rows;
    for (double r : ratios) {
        const RenormalizationScheme s{lambda_p, r * m, m};
        rows.push_back({r, std::abs(dot_internal_factor(1, s)), dot_mixed_factor(s, T),
                        dressed_external_suppression(E, s, T)});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Collision density matrices
// ---------------------------------------------------------------------------

/// Exact-conservation test for sums of on-shell four-momenta.
inline bool four_momentum_equal(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b,
                                const MomentumGrid& grid)
{
    IntVec3 na{0, 0, 0}, nb{0, 0, 0};
    double Ea = 0, Eb = 0;
    for (auto i : a) {
        for (int d = 0; d < 3; ++d) na[static_cast<std::size_t>(d)] += grid[i].n[static_cast<std::size_t>(d)];
        Ea += grid[i].E;
    }
    for (auto i : b) {
        for (int d = 0; d < 3; ++d) nb[static_cast<std::size_t>(d)] += grid[i].n[static_cast<std::size_t>(d)];
        Eb += grid[i].E;
    }
    return na == nb && std::abs(Ea - Eb) <= 1e-12 * std::max(1.0, std::max(Ea, Eb));
}

/// Structural filter: nonzero only if m + n is even and the outgoing four-momenta sum to the same total.
inline bool equal_momentum_check_g(const std::vector<std::size_t>& p_out, const std::vector<std::size_t>& q_out,
                                   const MomentumGrid& grid)
{
    if ((p_out.size() + q_out.size()) % 2) return false;
    return four_momentum_equal(p_out, q_out, grid);
}

/// -i g (2pi)^4 delta4(p1+p2-p1'-p2') prod 1/sqrt((2pi)^3 2E), plus the g^0 delta3 delta3 terms if asked.
inline cplx tree_amplitude_2to2(std::size_t p1, std::size_t p2, std::size_t q1, std::size_t q2, double g,
                                const MomentumGrid& grid, bool with_disconnected = false)
{
    const double d3 = grid.delta3_zero();
    cplx s = 0.0;
    if (with_disconnected) {
        s += (p1 == q1 && p2 == q2 ? d3 * d3 : 0.0) + (p1 == q2 && p2 == q1 ? d3 * d3 : 0.0);
    }
    if (g != 0.0 && four_momentum_equal({p1, p2}, {q1, q2}, grid)) {
        const double tp3 = std::pow(kTwoPi, 3);
        double ext = 1.0;
        for (auto i : {p1, p2, q1, q2}) ext /= std::sqrt(tp3 * 2 * grid[i].E);
        const double attach = static_cast<double>(vertex_attachment_count(4, 4)) / factorial(4);
        s += cplx(0, -g) * std::pow(kTwoPi, 4) / grid.d4p() * attach * ext;
    }
    return s;
}

/// Supplies S^g_{out1 out2, in1 in2} at lambda = 0.
using SMatrixProvider = std::function<cplx(std::size_t, std::size_t, std::size_t, std::size_t)>;

inline SMatrixProvider tree_level_provider(const MomentumGrid& grid, double g)
{
    return [grid, g](std::size_t i1, std::size_t i2, std::size_t o1, std::size_t o2) {
        return tree_amplitude_2to2(i1, i2, o1, o2, g, grid, true);
    };
}

/// (1/Z) S(p' <- p) conj(S(q' <- p)), Z the renormalized partition function.
inline cplx rho_two_particle_block(std::size_t p1, std::size_t p2, std::array<std::size_t, 2> pp,
                                   std::array<std::size_t, 2> qq, const Phi4Config& cfg, const SMatrixProvider& S)
{
    cfg.validate();
    const double invZ = 1.0 / renormalized_partition(cfg.scheme, cfg.T, cfg.V);
    return invZ * S(p1, p2, pp[0], pp[1]) * std::conj(S(p1, p2, qq[0], qq[1]));
}

struct PairedDiagramTerm {
    std::string solid;    ///< e.g. "S(p'1 p'2 <- p1 p2) + dot p'3"
    std::string dotted;
    std::vector<std::pair<int, int>> dot_pairings;  ///< (solid final index, dotted final index)
    double combinatoric = 1.0;
    cplx value = 0.0;
};

/**
 * Three-particle block as 9 paired-diagram terms: one outgoing line on each side ends
 * on a noise dot, the two dots are paired (delta3(p'_a - q'_b)/(1 + Etilde)), and the
 * remaining legs carry the lambda = 0 two-particle element. Prefactor 1/Z.
 */
inline std::vector<PairedDiagramTerm> rho_three_particle_terms(std::size_t p1, std::size_t p2,
                                                               std::array<std::size_t, 3> pp,
                                                               std::array<std::size_t, 3> qq, const MomentumGrid& grid,
                                                               const Phi4Config& cfg, const SMatrixProvider& S)
{
    cfg.validate();
    const double invZ = 1.0 / renormalized_partition(cfg.scheme, cfg.T, cfg.V);
    std::vector<PairedDiagramTerm> terms;
    auto rest = [](const std::array<std::size_t, 3>& v, int skip) {
        std::array<std::size_t, 2> r{};
        int k = 0;
        for (int i = 0; i < 3; ++i)
            if (i != skip) r[static_cast<std::size_t>(k++)] = v[static_cast<std::size_t>(i)];
        return r;
    };
    // A single dot pair: brute-force count of ways to pair one solid dot with one dotted dot.
    const double combin = static_cast<double>(perfect_matchings(2).size());
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
            PairedDiagramTerm t;
            t.solid = "S0(p' minus " + std::to_string(a + 1) + ") with dot on p'" + std::to_string(a + 1);
            t.dotted = "S0*(q' minus " + std::to_string(b + 1) + ") with dot on q'" + std::to_string(b + 1);
            t.dot_pairings = {{a, b}};
            t.combinatoric = combin;
            const std::size_t pa = pp[static_cast<std::size_t>(a)], qb = qq[static_cast<std::size_t>(b)];
            if (pa == qb) {
                const double dress =
                    grid.delta3_zero() * geometric_ratio(dimensionless_energy(grid[pa].E, cfg.lambda(), cfg.T));
                const auto rp = rest(pp, a), rq = rest(qq, b);
                t.value = combin * invZ * dress * S(p1, p2, rp[0], rp[1]) * std::conj(S(p1, p2, rq[0], rq[1]));
            }
            terms.push_back(std::move(t));
        }
    return terms;
}

inline cplx rho_three_particle_block(std::size_t p1, std::size_t p2, std::array<std::size_t, 3> pp,
                                     std::array<std::size_t, 3> qq, const MomentumGrid& grid, const Phi4Config& cfg,
                                     const SMatrixProvider& S)
{
    cplx s = 0.0;
    for (const auto& t : rho_three_particle_terms(p1, p2, pp, qq, grid, cfg, S)) s += t.value;
    return s;
}

struct CollisionDensity {
    FockDensityMatrix rho;
    double dressing_trace = 1.0;  ///< trace of the untruncated dressing of the input
};

/**
 * (1/Z) sum_n (1/n!) sum_{p1..pn} prod q_{pj} b^dag_{p1}..b^dag_{pn} rho b_{pn}..b_{p1},
 * i.e. (1/Z) exp(D) rho with D(X) = sum_k q_k b_k^dag X b_k, in normalized modes and
 * with 1/Z = prod_k (1 - q_k) over the grid.
 */
inline CollisionDensity rho_collision_full(const FockDensityMatrix& rho_conv, const MomentumGrid& grid,
                                           const RenormalizationScheme& scheme, double T, const Truncation& tr)
{
    scheme.validate();
    require(rho_conv.basis->modes() == grid.size(), "rho_collision_full: input basis does not match the grid");
    auto basis = std::make_shared<const FockBasis>(grid.size(), tr);
    const auto q = detail::geometric_ratios(grid, scheme.bare(), T);
    double invZ = 1.0;
    for (double qk : q) invZ *= 1 - qk;

    FockDensityMatrix term(basis);
    const auto& Bin = *rho_conv.basis;
    double dressing = 0.0;
    for (std::size_t a = 0; a < Bin.dim(); ++a) {
        const auto& oa = Bin.state(a);
        double f = 1.0;
        for (std::size_t k = 0; k < oa.size(); ++k) f /= std::pow(1 - q[k], oa[k]);
        dressing += rho_conv.entry(a, a).real() * f;
        auto ia = basis->find(oa);
        if (!ia) continue;
        for (std::size_t b = 0; b < Bin.dim(); ++b) {
            const cplx v = rho_conv.entry(a, b);
            if (v == 0.0) continue;
            if (auto ib = basis->find(Bin.state(b))) term.at(*ia, *ib) = v;
        }
    }

    FockDensityMatrix out(basis);
    for (int n = 0; n <= tr.N_max; ++n) {
        for (std::size_t N = 0; N < out.blocks.size(); ++N) out.blocks[N] += term.blocks[N];
        FockDensityMatrix next(basis);
        for (int Nb = 1; Nb <= tr.N_max; ++Nb) {
            const std::size_t lo = basis->block_begin(Nb), hi = basis->block_end(Nb);
            for (std::size_t a = lo; a < hi; ++a)
                for (std::size_t b = lo; b < hi; ++b) {
                    cplx acc = 0.0;
                    const auto& oa = basis->state(a);
                    const auto& ob = basis->state(b);
                    for (std::size_t k = 0; k < q.size(); ++k) {
                        if (oa[k] < 1 || ob[k] < 1 || q[k] == 0.0) continue;
                        Occupation la = oa, lb = ob;
                        la[k] -= 1;
                        lb[k] -= 1;
                        const auto ja = basis->find(la), jb = basis->find(lb);
                        if (!ja || !jb) continue;
                        acc += q[k] * std::sqrt(static_cast<double>(oa[k]) * ob[k]) * term.entry(*ja, *jb);
                    }
                    if (acc != 0.0) next.at(a, b) = acc / static_cast<double>(n + 1);
                }
        }
        term = std::move(next);
    }
    for (auto& Bk : out.blocks) Bk *= invZ;
    CollisionDensity res{std::move(out), dressing};
    res.rho.truncated_mass = dressing - res.rho.trace().real();
    if (res.rho.truncated_mass > tr.mass_bound)
        throw TruncationError("rho_collision_full: truncation drops " + detail::sci(res.rho.truncated_mass));
    return res;
}

}  // namespace sqft
