#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace sqft {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

using IntVec3 = std::array<int, 3>;
using Vec3 = std::array<double, 3>;

struct Mode {
    IntVec3 n{};   ///< integer wave vector, p = 2 pi n / L
    Vec3 p{};
    double E = 0;  ///< sqrt(m^2 + |p|^2)
};

/// Box momenta p = 2 pi n / L of a periodic cube of side L, restricted to |p| <= cutoff.
class MomentumGrid {
public:
    MomentumGrid() = default;

    /// All lattice momenta inside the cutoff sphere, ordered lexicographically in n.
    static MomentumGrid enumerate(double L, double cutoff, double m, double T)
    {
        MomentumGrid g(L, cutoff, m, T);
        require(std::isfinite(cutoff), "enumerate needs a finite cutoff");
        const int nmax = static_cast<int>(std::floor(cutoff * L / kTwoPi));
        for (int a = -nmax; a <= nmax; ++a)
            for (int b = -nmax; b <= nmax; ++b)
                for (int c = -nmax; c <= nmax; ++c) {
                    const IntVec3 n{a, b, c};
                    if (g.momentum_norm(n) <= cutoff) g.push(n);
                }
        return g;
    }

    /// Explicit mode list; useful for few-mode oracles.
    static MomentumGrid from_modes(double L, double m, double T, const std::vector<IntVec3>& ns,
                                   double cutoff = std::numeric_limits<double>::infinity())
    {
        MomentumGrid g(L, cutoff, m, T);
        for (const auto& n : ns) {
            require(g.momentum_norm(n) <= cutoff, "mode outside the momentum cutoff");
            require(!g.index_.count(n), "duplicate mode in grid");
            g.push(n);
        }
        return g;
    }

    double L() const { return L_; }
    double V() const { return L_ * L_ * L_; }
    double cutoff() const { return cutoff_; }
    double m() const { return m_; }
    double T() const { return T_; }
    double d3p() const { return kTwoPi * kTwoPi * kTwoPi / V(); }
    double dp0() const { return std::numbers::pi / T_; }
    double d4p() const { return d3p() * dp0(); }
    /// Kronecker stand-in for delta^3(0).
    double delta3_zero() const { return 1.0 / d3p(); }

    std::size_t size() const { return modes_.size(); }
    const Mode& operator[](std::size_t i) const { return modes_[i]; }
    const std::vector<Mode>& modes() const { return modes_; }

    bool contains(const IntVec3& n) const { return index_.count(n) != 0; }
    std::size_t index_of(const IntVec3& n) const
    {
        auto it = index_.find(n);
        if (it == index_.end()) throw GridMismatch("momentum not on grid");
        return it->second;
    }

    /// Hash of everything that identifies the grid; used to detect mismatched inputs.
    std::uint64_t fingerprint() const
    {
        std::uint64_t h = mix64(std::bit_cast<std::uint64_t>(L_)) ^ mix64(std::bit_cast<std::uint64_t>(m_) + 1);
        h = mix64(h ^ std::bit_cast<std::uint64_t>(T_));
        for (const auto& md : modes_)
            h = mix64(h ^ mode_key(md.n));
        return h;
    }

    static std::uint64_t mode_key(const IntVec3& n)
    {
        auto u = [](int v) { return static_cast<std::uint64_t>(static_cast<std::uint32_t>(v)); };
        return mix64(u(n[0]) * 0x100000001B3ull ^ mix64(u(n[1]) + 0x9E37ull) ^ mix64(u(n[2]) * 7 + 3));
    }

    double momentum_norm(const IntVec3& n) const
    {
        const double k = kTwoPi / L_;
        return k * std::sqrt(double(n[0]) * n[0] + double(n[1]) * n[1] + double(n[2]) * n[2]);
    }

private:
    MomentumGrid(double L, double cutoff, double m, double T) : L_(L), cutoff_(cutoff), m_(m), T_(T)
    {
        require(L > 0, "box side L must be positive");
        require(m > 0, "mass m must be positive");
        require(T > 0, "half time-window T must be positive");
        require(cutoff > 0, "cutoff must be positive");
    }

    void push(const IntVec3& n)
    {
        Mode md;
        md.n = n;
        const double k = kTwoPi / L_;
        md.p = {k * n[0], k * n[1], k * n[2]};
        md.E = std::sqrt(m_ * m_ + md.p[0] * md.p[0] + md.p[1] * md.p[1] + md.p[2] * md.p[2]);
        index_.emplace(n, modes_.size());
        modes_.push_back(md);
    }

    double L_ = 1, cutoff_ = 1, m_ = 1, T_ = 1;
    std::vector<Mode> modes_;
    std::map<IntVec3, std::size_t> index_;
};

}  // namespace sqft
