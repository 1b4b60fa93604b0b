#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <istream>
#include <numbers>
#include <ostream>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "grid.hpp"
#include "rng.hpp"

namespace sqft {

using cplx = std::complex<double>;

// ---------------------------------------------------------------------------
// Wiener increments on a 1D time grid
// ---------------------------------------------------------------------------

struct WienerIncrements {
    double t0 = 0.0;
    double dt = 1.0;
    std::vector<double> increments;

    std::size_t size() const { return increments.size(); }
    double time(std::size_t j) const { return t0 + static_cast<double>(j) * dt; }
    double t_end() const { return time(increments.size()); }
    double operator[](std::size_t j) const { return increments[j]; }

    /// W_{t'} - W_{t0}.
    double total() const
    {
        double s = 0.0;
        for (double w : increments) s += w;
        return s;
    }

    /// Sub-window [j0, j0 + n) as a new increment list starting at time(j0).
    WienerIncrements window(std::size_t j0, std::size_t n) const
    {
        require(j0 + n <= increments.size(), "window exceeds the increment list");
        WienerIncrements w;
        w.t0 = time(j0);
        w.dt = dt;
        w.increments.assign(increments.begin() + static_cast<std::ptrdiff_t>(j0),
                            increments.begin() + static_cast<std::ptrdiff_t>(j0 + n));
        return w;
    }
};

inline WienerIncrements sample_wiener(std::size_t n_steps, double dt, const Stream& stream, double t0 = 0.0)
{
    if (!(dt > 0.0)) throw InvalidParameter("sample_wiener: dt must be positive");
    WienerIncrements w;
    w.t0 = t0;
    w.dt = dt;
    w.increments.resize(n_steps);
    const double s = std::sqrt(dt);
    const Stream st = stream.child("wiener");
    for (std::size_t j = 0; j < n_steps; ++j) w.increments[j] = s * st.normal(j);
    return w;
}

inline WienerIncrements sample_wiener(std::size_t n_steps, double dt, std::uint64_t seed, double t0 = 0.0)
{
    return sample_wiener(n_steps, dt, Stream(seed), t0);
}

/// Left-point (non-anticipating) sum  sum_j f(t_j) dW_j.
template <class F>
double ito_integral(F&& f, const WienerIncrements& W)
{
    double s = 0.0;
    for (std::size_t j = 0; j < W.size(); ++j) s += f(W.time(j)) * W[j];
    return s;
}

/// sum_{j,j'} k(t_j, t_j') dW_j dW_j'.
template <class K>
double double_ito_integral(K&& k, const WienerIncrements& W)
{
    double s = 0.0;
    for (std::size_t j = 0; j < W.size(); ++j) {
        double row = 0.0;
        for (std::size_t l = 0; l < W.size(); ++l) row += k(W.time(j), W.time(l)) * W[l];
        s += row * W[j];
    }
    return s;
}

// ---------------------------------------------------------------------------
// Spacetime lattice and white noise
// ---------------------------------------------------------------------------

struct SpacetimeLattice {
    std::size_t Nt = 1, Nx = 1, Ny = 1, Nz = 1;
    double T = 1.0;  ///< half time-window: t in [-T, T)
    double L = 1.0;  ///< box side

    SpacetimeLattice() = default;
    SpacetimeLattice(std::size_t nt, std::size_t nx, std::size_t ny, std::size_t nz, double T_, double L_)
        : Nt(nt), Nx(nx), Ny(ny), Nz(nz), T(T_), L(L_)
    {
        validate();
    }
    static SpacetimeLattice cube(std::size_t n, double T_, double L_) { return {n, n, n, n, T_, L_}; }

    void validate() const
    {
        require(Nt >= 1 && Nx >= 1 && Ny >= 1 && Nz >= 1, "lattice counts must be >= 1");
        require(T > 0 && L > 0, "lattice extents must be positive");
    }

    std::array<std::size_t, 4> dims() const { return {Nt, Nx, Ny, Nz}; }
    std::size_t sites() const { return Nt * Nx * Ny * Nz; }
    double dt() const { return 2.0 * T / static_cast<double>(Nt); }
    double dx(int axis) const
    {
        const std::size_t n = axis == 0 ? Nx : axis == 1 ? Ny : Nz;
        return L / static_cast<double>(n);
    }
    double V() const { return L * L * L; }
    double d3x() const { return dx(0) * dx(1) * dx(2); }
    double d4x() const { return dt() * d3x(); }
    double dp0() const { return std::numbers::pi / T; }
    double d3p() const { return kTwoPi * kTwoPi * kTwoPi / V(); }
    double d4p() const { return dp0() * d3p(); }
    /// Kronecker stand-in for delta^4(0) = 2TV/(2 pi)^4.
    double delta4_zero() const { return 1.0 / d4p(); }

    std::size_t index(std::size_t it, std::size_t ix, std::size_t iy, std::size_t iz) const
    {
        return ((it * Nx + ix) * Ny + iy) * Nz + iz;
    }
    std::array<std::size_t, 4> unravel(std::size_t idx) const
    {
        const std::size_t iz = idx % Nz;
        idx /= Nz;
        const std::size_t iy = idx % Ny;
        idx /= Ny;
        const std::size_t ix = idx % Nx;
        return {idx / Nx, ix, iy, iz};
    }

    /// Site coordinates (t, x, y, z) with t = -T + it dt.
    std::array<double, 4> position(std::size_t idx) const
    {
        const auto u = unravel(idx);
        return {-T + static_cast<double>(u[0]) * dt(), static_cast<double>(u[1]) * dx(0),
                static_cast<double>(u[2]) * dx(1), static_cast<double>(u[3]) * dx(2)};
    }

    /// Signed frequency index in (-N/2, N/2] for storage slot i.
    static int signed_index(std::size_t i, std::size_t n)
    {
        const auto k = static_cast<long>(i);
        return static_cast<int>(2 * k > static_cast<long>(n) ? k - static_cast<long>(n) : k);
    }
    static std::size_t slot(int k, std::size_t n)
    {
        const long nn = static_cast<long>(n);
        return static_cast<std::size_t>(((k % nn) + nn) % nn);
    }

    std::array<int, 4> signed_momentum(std::size_t idx) const
    {
        const auto u = unravel(idx);
        return {signed_index(u[0], Nt), signed_index(u[1], Nx), signed_index(u[2], Ny), signed_index(u[3], Nz)};
    }
    std::size_t momentum_index(const std::array<int, 4>& k) const
    {
        return index(slot(k[0], Nt), slot(k[1], Nx), slot(k[2], Ny), slot(k[3], Nz));
    }
    /// Four-momentum (p0, px, py, pz) with p0 = k pi/T and p_i = 2 pi n_i / L.
    std::array<double, 4> four_momentum(std::size_t idx) const
    {
        const auto k = signed_momentum(idx);
        const double q = kTwoPi / L;
        return {k[0] * dp0(), k[1] * q, k[2] * q, k[3] * q};
    }
    /// Storage index of -p.
    std::size_t conjugate_index(std::size_t idx) const
    {
        const auto u = unravel(idx);
        auto neg = [](std::size_t i, std::size_t n) { return (n - i) % n; };
        return index(neg(u[0], Nt), neg(u[1], Nx), neg(u[2], Ny), neg(u[3], Nz));
    }

    bool operator==(const SpacetimeLattice&) const = default;
};

struct SpacetimeNoise {
    SpacetimeLattice lattice;
    std::vector<double> values;  ///< dW(x), row-major (t slowest, z fastest)
};

inline SpacetimeNoise sample_spacetime_noise(const SpacetimeLattice& lattice, const Stream& stream)
{
    lattice.validate();
    SpacetimeNoise f{lattice, std::vector<double>(lattice.sites())};
    const double s = std::sqrt(lattice.d4x());
    const Stream st = stream.child("spacetime");
    for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] = s * st.normal(i);
    return f;
}

inline SpacetimeNoise sample_spacetime_noise(const SpacetimeLattice& lattice, std::uint64_t seed)
{
    return sample_spacetime_noise(lattice, Stream(seed));
}

/// Block sums over factor^4 cells.
inline SpacetimeNoise coarse_grain(const SpacetimeNoise& noise, std::size_t factor)
{
    const auto& a = noise.lattice;
    if (factor == 0 || a.Nt % factor || a.Nx % factor || a.Ny % factor || a.Nz % factor)
        throw InvalidParameter("coarse_grain: lattice dimensions must be divisible by the factor");
    SpacetimeLattice c(a.Nt / factor, a.Nx / factor, a.Ny / factor, a.Nz / factor, a.T, a.L);
    SpacetimeNoise out{c, std::vector<double>(c.sites(), 0.0)};
    for (std::size_t i = 0; i < noise.values.size(); ++i) {
        const auto u = a.unravel(i);
        out.values[c.index(u[0] / factor, u[1] / factor, u[2] / factor, u[3] / factor)] += noise.values[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Momentum-space noise
// ---------------------------------------------------------------------------

/**
 * Complex Gaussian amplitudes W(p).
 *
 * Either a full 4D reciprocal lattice (Lattice4D, indexed like the spacetime
 * sites) or one on-shell value W(E_p, p) per spatial grid mode (OnShell).
 */
struct NoiseModes {
    enum class Kind { Lattice4D, OnShell };
    Kind kind = Kind::OnShell;
    SpacetimeLattice lattice;          ///< Lattice4D only
    std::uint64_t grid_fingerprint = 0;  ///< OnShell only
    double T = 1.0;
    double V = 1.0;
    std::vector<cplx> W;

    const cplx& operator[](std::size_t i) const { return W[i]; }
    std::size_t size() const { return W.size(); }
};

namespace detail {

/// out[k] = sum_j tw[k*n + j] in[j] along one axis of a row-major 4D array.
inline void transform_axis(std::vector<cplx>& data, const std::array<std::size_t, 4>& dims, int axis,
                           const std::vector<cplx>& tw)
{
    const std::size_t n = dims[axis];
    if (n == 1) return;
    std::size_t stride = 1;
    for (int a = 3; a > axis; --a) stride *= dims[a];
    const std::size_t outer = data.size() / (n * stride);
    std::vector<cplx> line(n);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t s = 0; s < stride; ++s) {
            const std::size_t base = o * n * stride + s;
            for (std::size_t k = 0; k < n; ++k) {
                cplx acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += tw[k * n + j] * data[base + j * stride];
                line[k] = acc;
            }
            for (std::size_t k = 0; k < n; ++k) data[base + k * stride] = line[k];
        }
}

}  // namespace detail

/// W(p) = sum_x dW(x) e^{ipx}, px = -p0 t + p.x, with Hermitian symmetry imposed exactly.
inline NoiseModes fourier_modes(const SpacetimeNoise& noise)
{
    const auto& lat = noise.lattice;
    require(noise.values.size() == lat.sites(), "noise field size does not match its lattice");
    const auto dims = lat.dims();
    std::vector<cplx> data(noise.values.begin(), noise.values.end());
    for (int axis = 0; axis < 4; ++axis) {
        const std::size_t n = dims[axis];
        std::vector<cplx> tw(n * n);
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t j = 0; j < n; ++j) {
                double phase;
                const int ks = SpacetimeLattice::signed_index(k, n);
                if (axis == 0) {
                    const double t = -lat.T + static_cast<double>(j) * lat.dt();
                    phase = -ks * lat.dp0() * t;
                } else {
                    phase = kTwoPi * ks * static_cast<double>(j) / static_cast<double>(n);
                }
                tw[k * n + j] = std::polar(1.0, phase);
            }
        detail::transform_axis(data, dims, axis, tw);
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::size_t c = lat.conjugate_index(i);
        if (c < i) continue;
        if (c == i) {
            data[i] = {data[i].real(), 0.0};
        } else {
            const cplx avg = 0.5 * (data[i] + std::conj(data[c]));
            data[i] = avg;
            data[c] = std::conj(avg);
        }
    }
    NoiseModes m;
    m.kind = NoiseModes::Kind::Lattice4D;
    m.lattice = lat;
    m.T = lat.T;
    m.V = lat.V();
    m.W = std::move(data);
    return m;
}

/// Relative residual of  sum_p |W|^2 d4p/(2pi)^4 = sum_x dW^2 / d4x.
inline double parseval_residual(const SpacetimeNoise& noise, const NoiseModes& modes)
{
    const auto& lat = noise.lattice;
    double lhs = 0.0, rhs = 0.0;
    for (const auto& w : modes.W) lhs += std::norm(w);
    lhs *= lat.d4p() / std::pow(kTwoPi, 4);
    for (double v : noise.values) rhs += v * v;
    rhs /= lat.d4x();
    return std::abs(lhs - rhs) / std::max(std::abs(rhs), std::numeric_limits<double>::min());
}

/// Direct on-shell sampling: Re and Im of W(E_p, p) iid N(0, TV) per grid mode.
/// Each mode's values depend only on (seed, n), not on the rest of the grid.
inline NoiseModes sample_onshell_modes(const MomentumGrid& grid, double T, const Stream& stream)
{
    require(T > 0, "sample_onshell_modes: T must be positive");
    NoiseModes m;
    m.kind = NoiseModes::Kind::OnShell;
    m.grid_fingerprint = grid.fingerprint();
    m.T = T;
    m.V = grid.V();
    m.W.resize(grid.size());
    const double s = std::sqrt(T * grid.V());
    const Stream st = stream.child("onshell");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Stream ms = st.child(MomentumGrid::mode_key(grid[i].n));
        m.W[i] = {s * ms.normal(0), s * ms.normal(1)};
    }
    return m;
}

inline NoiseModes sample_onshell_modes(const MomentumGrid& grid, double T, std::uint64_t seed)
{
    return sample_onshell_modes(grid, T, Stream(seed));
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline constexpr char kNoiseMagic[8] = {'S', 'Q', 'F', 'T', 'N', 'Z', '0', '1'};

namespace detail {
inline void put_u64(std::ostream& os, std::uint64_t v)
{
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint64_t get_u64(std::istream& is)
{
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw InvalidParameter("truncated noise file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}
}  // namespace detail

/// Layout: magic[8], Nt Nx Ny Nz (u64 LE), T L (f64 LE), then one f64 LE per site.
inline void write_binary(const SpacetimeNoise& f, std::ostream& os)
{
    os.write(kNoiseMagic, 8);
    for (auto d : f.lattice.dims()) detail::put_u64(os, d);
    detail::put_u64(os, std::bit_cast<std::uint64_t>(f.lattice.T));
    detail::put_u64(os, std::bit_cast<std::uint64_t>(f.lattice.L));
    for (double v : f.values) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
}

inline SpacetimeNoise read_binary(std::istream& is)
{
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kNoiseMagic, 8) != 0)
        throw InvalidParameter("not a noise field file");
    std::array<std::size_t, 4> d{};
    for (auto& x : d) x = detail::get_u64(is);
    const double T = std::bit_cast<double>(detail::get_u64(is));
    const double L = std::bit_cast<double>(detail::get_u64(is));
    SpacetimeNoise f{SpacetimeLattice(d[0], d[1], d[2], d[3], T, L), {}};
    f.values.resize(f.lattice.sites());
    for (auto& v : f.values) v = std::bit_cast<double>(detail::get_u64(is));
    return f;
}

inline nlohmann::json to_json(const SpacetimeNoise& f)
{
    const auto& l = f.lattice;
    return {{"lattice", {{"Nt", l.Nt}, {"Nx", l.Nx}, {"Ny", l.Ny}, {"Nz", l.Nz}, {"T", l.T}, {"L", l.L}}},
            {"values", f.values}};
}

inline SpacetimeNoise noise_from_json(const nlohmann::json& j)
{
    const auto& l = j.at("lattice");
    SpacetimeNoise f{SpacetimeLattice(l.at("Nt").get<std::size_t>(), l.at("Nx").get<std::size_t>(),
                                      l.at("Ny").get<std::size_t>(), l.at("Nz").get<std::size_t>(),
                                      l.at("T").get<double>(), l.at("L").get<double>()),
                     j.at("values").get<std::vector<double>>()};
    require(f.values.size() == f.lattice.sites(), "noise JSON: value count does not match lattice");
    return f;
}

}  // namespace sqft
