#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "errors.hpp"
#include "noise.hpp"

namespace sqft {

struct OscillatorParams {
    double m = 1.0;
    double omega = 0.0;
    double lambda = 0.0;

    void validate() const
    {
        require(m > 0, "oscillator mass m must be positive");
        require(omega >= 0, "oscillator frequency must be non-negative");
        require(lambda >= 0, "noise coupling lambda must be non-negative");
    }
};

/// Uniform periodic grid x_j = x_min + j dx, j = 0..n-1.
struct XGrid {
    std::size_t n = 0;
    double x_min = 0.0;
    double dx = 1.0;

    static XGrid centered(std::size_t n, double length)
    {
        require(n >= 2 && length > 0, "grid needs n >= 2 and positive length");
        return {n, -0.5 * length, length / static_cast<double>(n)};
    }
    double x(std::size_t j) const { return x_min + static_cast<double>(j) * dx; }
    double length() const { return static_cast<double>(n) * dx; }
    /// Angular wave number of FFT slot j.
    double k(std::size_t j) const
    {
        const long s = static_cast<long>(j), nn = static_cast<long>(n);
        const long ks = 2 * s >= nn ? s - nn : s;
        return kTwoPi * static_cast<double>(ks) / length();
    }
};

struct GridWavefunction {
    XGrid grid;
    std::vector<cplx> psi;

    double norm() const
    {
        double s = 0.0;
        for (const auto& a : psi) s += std::norm(a);
        return s * grid.dx;
    }
    double mean_x() const
    {
        double s = 0.0;
        for (std::size_t j = 0; j < psi.size(); ++j) s += grid.x(j) * std::norm(psi[j]);
        return s * grid.dx / norm();
    }
    double var_x() const
    {
        const double mu = mean_x();
        double s = 0.0;
        for (std::size_t j = 0; j < psi.size(); ++j) s += (grid.x(j) - mu) * (grid.x(j) - mu) * std::norm(psi[j]);
        return s * grid.dx / norm();
    }
    /// Width parameter sigma of |psi|^2 ~ exp(-(x-q)^2/sigma^2), i.e. sqrt(2 Var x).
    double width() const { return std::sqrt(2.0 * var_x()); }
};

struct GaussianPacket {
    double q0 = 0.0;
    double p0 = 0.0;
    double sigma0 = 1.0;

    /// psi0 = (pi sigma0^2)^{-1/4} exp(-(x-q0)^2/(2 sigma0^2) + i p0 x), renormalized on the grid.
    GridWavefunction sample(const XGrid& g) const
    {
        require(sigma0 > 0, "packet width sigma0 must be positive");
        GridWavefunction w{g, std::vector<cplx>(g.n)};
        const double pre = std::pow(std::numbers::pi * sigma0 * sigma0, -0.25);
        for (std::size_t j = 0; j < g.n; ++j) {
            const double d = g.x(j) - q0;
            w.psi[j] = pre * std::exp(cplx(-d * d / (2 * sigma0 * sigma0), p0 * g.x(j)));
        }
        const double s = 1.0 / std::sqrt(w.norm());
        for (auto& a : w.psi) a *= s;
        return w;
    }
};

struct PacketEvolution {
    double sigma = 0.0;
    double q = 0.0;
    double p1 = 0.0;
};

// ---------------------------------------------------------------------------
// Stochastic Schroedinger equation, split-step
// ---------------------------------------------------------------------------

struct SdeOptions {
    bool hamiltonian = true;        ///< false drops p^2/2m and the potential, keeping only the noise phase
    std::size_t record_every = 0;   ///< 0 records only the initial and final states
    double tail_tolerance = 1e-6;   ///< spectral tail mass that triggers a ResolutionError
    double tail_fraction = 0.75;    ///< |k| above this fraction of k_max counts as tail
    double edge_fraction = 0.05;    ///< width of each box edge region for leakage monitoring
};

struct Trajectory {
    std::vector<double> times;
    std::vector<GridWavefunction> states;
    double max_norm_error = 0.0;
    double spectral_tail = 0.0;  ///< final-state momentum mass near the grid's Nyquist band
    double edge_mass = 0.0;      ///< final-state position mass near the box edges

    const GridWavefunction& back() const { return states.back(); }
};

inline double spectral_tail_mass(const GridWavefunction& w, double fraction, Eigen::FFT<double>& fft)
{
    std::vector<cplx> hat;
    fft.fwd(hat, w.psi);
    const double kmax = std::numbers::pi / w.grid.dx;
    double tail = 0.0, tot = 0.0;
    for (std::size_t j = 0; j < hat.size(); ++j) {
        const double a = std::norm(hat[j]);
        tot += a;
        if (std::abs(w.grid.k(j)) > fraction * kmax) tail += a;
    }
    return tot > 0 ? tail / tot : 0.0;
}

inline double edge_mass(const GridWavefunction& w, double fraction)
{
    const auto n = w.psi.size();
    const auto e = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
    double s = 0.0;
    for (std::size_t j = 0; j < e && j < n; ++j) s += std::norm(w.psi[j]) + std::norm(w.psi[n - 1 - j]);
    return s * w.grid.dx / w.norm();
}

/**
 * Integrates d psi = -i H psi dt + i lambda x psi dW - (lambda^2/2) x^2 psi dt.
 *
 * Each step applies exp{-i[(p^2/2m + m w^2 x^2/2) dt - lambda x dW]} by Strang
 * splitting: kinetic half-step in Fourier space, potential and noise phase in
 * position space, kinetic half-step. Adjacent kinetic half-steps are fused.
 */
inline Trajectory evolve_sde(const GridWavefunction& psi0, const OscillatorParams& par, const WienerIncrements& W,
                             const SdeOptions& opt = {})
{
    par.validate();
    const XGrid& g = psi0.grid;
    require(psi0.psi.size() == g.n, "wavefunction size does not match its grid");
    const std::size_t n = g.n;
    const double dt = W.dt;

    Eigen::FFT<double> fft;
    std::vector<cplx> half(n), full(n), hat(n);
    std::vector<double> pot(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double kin = g.k(j) * g.k(j) / (2.0 * par.m);
        half[j] = std::polar(1.0, -kin * dt / 2);
        full[j] = std::polar(1.0, -kin * dt);
        pot[j] = 0.5 * par.m * par.omega * par.omega * g.x(j) * g.x(j);
    }

    Trajectory tr;
    tr.times.push_back(W.t0);
    tr.states.push_back(psi0);

    std::vector<cplx> psi = psi0.psi;
    auto kinetic = [&](const std::vector<cplx>& factor) {
        fft.fwd(hat, psi);
        for (std::size_t j = 0; j < n; ++j) hat[j] *= factor[j];
        fft.inv(psi, hat);
    };
    auto check_norm = [&](const std::vector<cplx>& v) {
        double s = 0.0;
        for (const auto& a : v) s += std::norm(a);
        tr.max_norm_error = std::max(tr.max_norm_error, std::abs(s * g.dx - psi0.norm()));
    };

    const std::size_t N = W.size();
    bool open_half = false;  // a kinetic half-step is pending completion
    for (std::size_t s = 0; s < N; ++s) {
        if (opt.hamiltonian) {
            kinetic(open_half ? full : half);
            open_half = true;
        }
        const double dw = W[s];
        for (std::size_t j = 0; j < n; ++j) {
            const double phase = par.lambda * g.x(j) * dw - (opt.hamiltonian ? pot[j] * dt : 0.0);
            psi[j] *= std::polar(1.0, phase);
        }
        const bool last = s + 1 == N;
        const bool record = last || (opt.record_every != 0 && (s + 1) % opt.record_every == 0);
        if (record) {
            if (open_half) {
                kinetic(half);
                open_half = false;
            }
            check_norm(psi);
            tr.times.push_back(W.time(s + 1));
            tr.states.push_back({g, psi});
        }
    }
    if (N == 0) check_norm(psi);

    tr.spectral_tail = spectral_tail_mass(tr.back(), opt.tail_fraction, fft);
    tr.edge_mass = edge_mass(tr.back(), opt.edge_fraction);
    if (tr.spectral_tail > opt.tail_tolerance)
        throw ResolutionError("evolve_sde: spectral tail mass " + std::to_string(tr.spectral_tail) +
                              " exceeds tolerance; refine the grid");
    return tr;
}

// ---------------------------------------------------------------------------
// Lindblad master equation
// ---------------------------------------------------------------------------

struct GridDensityMatrix {
    XGrid grid;
    Eigen::MatrixXcd rho;  ///< rho_{xy} normalized so that sum_x rho_xx = 1

    static GridDensityMatrix pure(const GridWavefunction& w)
    {
        GridDensityMatrix d{w.grid, Eigen::MatrixXcd(w.grid.n, w.grid.n)};
        for (std::size_t a = 0; a < w.grid.n; ++a)
            for (std::size_t b = 0; b < w.grid.n; ++b)
                d.rho(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
                    w.psi[a] * std::conj(w.psi[b]) * w.grid.dx;
        return d;
    }
    cplx trace() const { return rho.trace(); }
    double purity() const { return (rho * rho).trace().real(); }
    double hermiticity_error() const { return (rho - rho.adjoint()).cwiseAbs().maxCoeff(); }
    double min_eigenvalue() const
    {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(0.5 * (rho + rho.adjoint()), Eigen::EigenvaluesOnly);
        return es.eigenvalues().minCoeff();
    }
};

struct LindbladOptions {
    bool hamiltonian = true;
    double max_dt = 0.0;  ///< 0 picks a step from the generator's spectral scale
    double positivity_tolerance = 1e-6;
};

/// Discrete Hamiltonian p^2/2m + m w^2 x^2/2 on the periodic grid, with the
/// kinetic part defined through the same DFT as the split-step integrator.
inline Eigen::MatrixXcd grid_hamiltonian(const XGrid& g, const OscillatorParams& par)
{
    const auto n = static_cast<Eigen::Index>(g.n);
    Eigen::MatrixXcd H(n, n);
    Eigen::FFT<double> fft;
    std::vector<cplx> e(g.n), hat(g.n), col(g.n);
    for (Eigen::Index c = 0; c < n; ++c) {
        std::fill(e.begin(), e.end(), cplx(0));
        e[static_cast<std::size_t>(c)] = 1.0;
        fft.fwd(hat, e);
        for (std::size_t j = 0; j < g.n; ++j) hat[j] *= g.k(j) * g.k(j) / (2 * par.m);
        fft.inv(col, hat);
        for (Eigen::Index r = 0; r < n; ++r) H(r, c) = col[static_cast<std::size_t>(r)];
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        const double x = g.x(static_cast<std::size_t>(j));
        H(j, j) += 0.5 * par.m * par.omega * par.omega * x * x;
    }
    return 0.5 * (H + H.adjoint());
}

/**
 * d rho/dt = -i[H, rho] + lambda^2 (x rho x - x^2 rho/2 - rho x^2/2), integrated by
 * fixed-step RK4 with a trace projection and Hermitian symmetrization after every step.
 */
inline GridDensityMatrix evolve_lindblad(const GridDensityMatrix& rho0, const OscillatorParams& par, double t,
                                         const LindbladOptions& opt = {})
{
    par.validate();
    require(t >= 0, "evolve_lindblad: duration must be non-negative");
    const XGrid& g = rho0.grid;
    const auto n = static_cast<Eigen::Index>(g.n);
    Eigen::MatrixXcd H = opt.hamiltonian ? grid_hamiltonian(g, par) : Eigen::MatrixXcd::Zero(n, n);
    Eigen::MatrixXd decay(n, n);
    double max_decay = 0.0;
    for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index b = 0; b < n; ++b) {
            const double d = g.x(static_cast<std::size_t>(a)) - g.x(static_cast<std::size_t>(b));
            decay(a, b) = -0.5 * par.lambda * par.lambda * d * d;
            max_decay = std::max(max_decay, -decay(a, b));
        }

    double scale = max_decay;
    if (opt.hamiltonian) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(H, Eigen::EigenvaluesOnly);
        scale += es.eigenvalues().maxCoeff() - es.eigenvalues().minCoeff();
    }
    double dt = scale > 0 ? 0.25 / scale : t;
    if (opt.max_dt > 0) dt = std::min(dt, opt.max_dt);
    const auto steps = static_cast<std::size_t>(std::max(1.0, std::ceil(t / std::max(dt, 1e-300))));
    const double h = t / static_cast<double>(steps);

    auto gen = [&](const Eigen::MatrixXcd& r) -> Eigen::MatrixXcd {
        Eigen::MatrixXcd out = r.cwiseProduct(decay.cast<cplx>());
        if (opt.hamiltonian) out.noalias() += cplx(0, -1) * (H * r - r * H);
        return out;
    };

    GridDensityMatrix out = rho0;
    Eigen::MatrixXcd& r = out.rho;
    const cplx tr0 = r.trace();
    if (t > 0) {
        for (std::size_t s = 0; s < steps; ++s) {
            const Eigen::MatrixXcd k1 = gen(r);
            const Eigen::MatrixXcd k2 = gen(r + 0.5 * h * k1);
            const Eigen::MatrixXcd k3 = gen(r + 0.5 * h * k2);
            const Eigen::MatrixXcd k4 = gen(r + h * k3);
            r += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            r = 0.5 * (r + r.adjoint()).eval();
            r *= tr0 / r.trace();
        }
    }
    if (out.min_eigenvalue() < -opt.positivity_tolerance)
        throw StepSizeError("evolve_lindblad: positivity drift beyond tolerance; reduce the step");
    return out;
}

inline double decoherence_factor(double x, double y, double t, double lambda)
{
    require(t >= 0, "decoherence_factor: t must be non-negative");
    return std::exp(-0.5 * lambda * lambda * (x - y) * (x - y) * t);
}

// ---------------------------------------------------------------------------
// Discretized path integral, free case
// ---------------------------------------------------------------------------

/// Determinant of the (N-1)x(N-1) matrix with 2 on the diagonal and -1 beside it,
/// by the three-term recurrence D_k = 2 D_{k-1} - D_{k-2}.
inline std::int64_t tridiagonal_det(std::int64_t N)
{
    require(N >= 1, "tridiagonal_det: N must be >= 1");
    std::int64_t prev = 0, cur = 1;  // D_{-1} (formal) and D_0
    for (std::int64_t k = 1; k <= N - 1; ++k) {
        const std::int64_t next = 2 * cur - prev;
        prev = cur;
        cur = next;
    }
    return cur;
}

inline double tridiagonal_inverse_entry(std::int64_t N, std::int64_t j, std::int64_t jp)
{
    if (j < 1 || jp < 1 || j > N - 1 || jp > N - 1)
        throw InvalidParameter("tridiagonal_inverse_entry: index out of range");
    return static_cast<double>(N * std::min(j, jp) - j * jp) / static_cast<double>(N);
}

namespace detail {
inline void check_window(double t0, double tp, const WienerIncrements& W)
{
    require(tp > t0, "time window must satisfy t' > t0");
    const double tol = 1e-9 * std::max(1.0, std::abs(tp - t0));
    require(std::abs(W.t0 - t0) <= tol && std::abs(W.t_end() - tp) <= tol,
            "Wiener increments do not span [t0, t']");
}
}  // namespace detail

/// Stationary path x_j, j = 0..N, of the free discretized action driven by W.
inline std::vector<double> stationary_path(double x0, double xp, double t0, double tp, const WienerIncrements& W,
                                           const OscillatorParams& par)
{
    par.validate();
    if (par.omega != 0.0) throw UnsupportedCase("stationary_path is only defined for omega = 0");
    detail::check_window(t0, tp, W);
    const auto N = static_cast<std::int64_t>(W.size());
    std::vector<double> x(static_cast<std::size_t>(N + 1));
    const double c = par.lambda * W.dt / par.m;
    for (std::int64_t j = 0; j <= N; ++j) {
        double s = 0.0;
        for (std::int64_t l = 1; l <= N - 1; ++l)
            s += W[static_cast<std::size_t>(l)] *
                 (static_cast<double>(std::min(j, l)) - static_cast<double>(j * l) / static_cast<double>(N));
        x[static_cast<std::size_t>(j)] =
            (static_cast<double>(N - j) * x0 + static_cast<double>(j) * xp) / static_cast<double>(N) - c * s;
    }
    return x;
}

/// Ballistic term + single Ito sum with linear weights + double Ito sum with the
/// [t' - max][min - t0]/(t' - t0) kernel.
inline double classical_action_free(double x0, double xp, double t0, double tp, const WienerIncrements& W, double m,
                                    double lambda)
{
    require(m > 0, "mass must be positive");
    detail::check_window(t0, tp, W);
    const double tau = tp - t0;
    const double ballistic = 0.5 * m * (xp - x0) * (xp - x0) / tau;
    const double single = ito_integral([&](double t) { return (x0 * (tp - t) + xp * (t - t0)) / tau; }, W);
    const double dbl = double_ito_integral(
        [&](double a, double b) { return (tp - std::max(a, b)) * (std::min(a, b) - t0) / tau; }, W);
    return ballistic + lambda * single - lambda * lambda / (2 * m) * dbl;
}

/// sqrt(m / (2 pi i tau)) e^{i I}, principal square-root branch.
inline cplx free_propagator(double action, double tau, double m)
{
    require(tau > 0 && m > 0, "free_propagator needs tau > 0 and m > 0");
    return std::sqrt(cplx(m, 0) / (cplx(0, kTwoPi * tau))) * std::polar(1.0, action);
}

inline PacketEvolution evolve_packet_exact(const GaussianPacket& pk, double tp, const WienerIncrements& W,
                                           const OscillatorParams& par)
{
    par.validate();
    if (par.omega != 0.0) throw UnsupportedCase("evolve_packet_exact is only defined for omega = 0");
    require(pk.sigma0 > 0, "packet width must be positive");
    const double t0 = W.t0;
    const double tau = tp - t0;
    PacketEvolution e;
    if (tau == 0.0) {
        e.sigma = pk.sigma0;
        e.q = pk.q0;
        return e;
    }
    detail::check_window(t0, tp, W);
    e.p1 = par.lambda * ito_integral([&](double t) { return 1.0 - (t - t0) / tau; }, W);
    const double s2 = pk.sigma0 * pk.sigma0;
    e.sigma = pk.sigma0 * std::sqrt(1.0 + tau * tau / (par.m * par.m * s2 * s2));
    e.q = pk.q0 + (pk.p0 + e.p1) * tau / par.m;
    return e;
}

}  // namespace sqft
