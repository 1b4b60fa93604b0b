#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "density.hpp"
#include "errors.hpp"
#include "freefield.hpp"
#include "grid.hpp"

namespace sqft {

inline constexpr double kPi = std::numbers::pi;

/// Physical coupling lambda_p with cutoff Lambda; the bare coupling is lambda_p m / Lambda.
struct RenormalizationScheme {
    double lambda_p = 0.0;
    double cutoff = 1.0;
    double m = 1.0;

    double bare() const { return lambda_p * m / cutoff; }
    RenormalizationScheme at_cutoff(double c) const { return {lambda_p, c, m}; }
    void validate() const
    {
        require(lambda_p >= 0, "physical coupling must be non-negative");
        require(cutoff > 0 && m > 0, "cutoff and mass must be positive");
    }
};

/// The default cutoff ladder Lambda/m.
inline const std::vector<double>& default_cutoff_ladder()
{
    static const std::vector<double> ladder{10.0, 30.0, 100.0, 300.0};
    return ladder;
}

namespace detail {
template <class F>
double integrate(F&& f, double a, double b)
{
    double err = 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 25, 1e-10, &err);
}
}  // namespace detail

/// ln Z = V/(2 pi^2) int_0^Lambda k^2 ln(1 + lambda^2 T / sqrt(k^2 + m^2)) dk.
inline double log_partition_quadrature(double lambda, double T, double V, double m, double cutoff)
{
    require(T > 0 && V > 0 && m > 0 && cutoff > 0, "log_partition_quadrature: parameters must be positive");
    const double c = lambda * lambda * T;
    if (c == 0.0) return 0.0;
    const double I = detail::integrate([&](double k) { return k * k * std::log1p(c / std::hypot(k, m)); }, 0.0, cutoff);
    return V / (2 * kPi * kPi) * I;
}

/// mu = T V m^2 lambda_p^2 / (4 pi^2), the Lambda -> infinity limit of ln Z.
inline double poisson_mean(const RenormalizationScheme& s, double T, double V)
{
    return T * V * s.m * s.m * s.lambda_p * s.lambda_p / (4 * kPi * kPi);
}

inline double renormalized_partition(const RenormalizationScheme& s, double T, double V)
{
    s.validate();
    require(T > 0 && V > 0, "renormalized_partition: T and V must be positive");
    return std::exp(poisson_mean(s, T, V));
}

/// ln Z at the scheme's finite cutoff with the bare coupling lambda_p m / Lambda.
inline double cutoff_log_partition(const RenormalizationScheme& s, double T, double V)
{
    return log_partition_quadrature(s.bare(), T, V, s.m, s.cutoff);
}

/// Small-coupling closed form (T V/4pi^2) m^2 lambda^2 r^2 [sqrt(1 + 1/r^2) - ln(sqrt(1 + r^2) + r)/r^2], r = Lambda/m.
inline double log_partition_leading(const RenormalizationScheme& s, double T, double V)
{
    const double r = s.cutoff / s.m, lam = s.bare();
    return T * V / (4 * kPi * kPi) * s.m * s.m * lam * lam * r * r *
           (std::sqrt(1 + 1 / (r * r)) - std::log(std::sqrt(1 + r * r) + r) / (r * r));
}

struct LadderRung {
    double cutoff_ratio = 0.0;  ///< Lambda/m
    double value = 0.0;
    double ratio_to_limit = 0.0;
};

inline std::vector<LadderRung> log_partition_ladder(double lambda_p, double m, double T, double V,
                                                    const std::vector<double>& ratios = default_cutoff_ladder())
{
    std::vector<LadderRung> out;
    const RenormalizationScheme base{lambda_p, m, m};
    const double mu = poisson_mean(base, T, V);
    for (double r : ratios) {
        const double v = cutoff_log_partition(base.at_cutoff(r * m), T, V);
        out.push_back({r, v, mu > 0 ? v / mu : 1.0});
    }
    return out;
}

/// Poisson(mu) production law of the renormalized vacuum.
struct PoissonLaw {
    double mu = 0.0;

    double pmf(int n) const
    {
        if (n < 0) return 0.0;
        if (mu == 0.0) return n == 0 ? 1.0 : 0.0;
        return std::exp(n * std::log(mu) - mu - std::lgamma(n + 1.0));
    }
    double cdf(int n) const
    {
        double s = 0.0;
        for (int k = 0; k <= n; ++k) s += pmf(k);
        return s;
    }
    /// Upper bound on the mass above n (Chernoff-free: computed as 1 - cdf, clamped).
    double tail(int n) const { return std::max(0.0, 1.0 - cdf(n)); }
    double mean() const { return mu; }
    double variance() const { return mu; }
};

inline PoissonLaw vacuum_number_distribution(const RenormalizationScheme& s, double T, double V)
{
    s.validate();
    return {poisson_mean(s, T, V)};
}

/// V/(2 pi^2) int_0^Lambda k^2 / (1 + Etilde(k)) dk at the bare coupling.
inline double dressed_mode_integral(const RenormalizationScheme& s, double T, double V)
{
    const double c = s.bare() * s.bare() * T;
    if (c == 0.0) return 0.0;
    const double I = detail::integrate([&](double k) { return k * k / (1 + std::hypot(k, s.m) / c); }, 0.0, s.cutoff);
    return V / (2 * kPi * kPi) * I;
}

/// Finite-cutoff vacuum law P0(n) = (1/Z)(1/n!) [dressed_mode_integral]^n.
inline double vacuum_number_probability_cutoff(int n, const RenormalizationScheme& s, double T, double V)
{
    const double lnZ = cutoff_log_partition(s, T, V);
    const double I = dressed_mode_integral(s, T, V);
    if (I == 0.0) return n == 0 ? std::exp(-lnZ) : 0.0;
    return std::exp(n * std::log(I) - std::lgamma(n + 1.0) - lnZ);
}

/// Renormalized-limit law of (initial particle retained j, total n): P0(n - 1) when j = 1, else 0.
inline double single_particle_number_distribution(int j, int n, const RenormalizationScheme& s, double T, double V)
{
    if (j != 1 || n < 1) return 0.0;
    return vacuum_number_distribution(s, T, V).pmf(n - 1);
}

/// Finite-cutoff counterpart for the mode of energy E:
/// (1/Z)(1/(n-j)!) I^{n-j} (1 + j Et^2)/(1 + Et)^{j+1}.
inline double single_particle_number_probability_cutoff(int j, int n, double E, const RenormalizationScheme& s,
                                                        double T, double V)
{
    if ((j != 0 && j != 1) || n < j) return 0.0;
    const double Et = dimensionless_energy(E, s.bare(), T);
    const double I = dressed_mode_integral(s, T, V);
    const int k = n - j;
    const double lnZ = cutoff_log_partition(s, T, V);
    const double pk = k == 0 ? std::exp(-lnZ) : std::exp(k * std::log(I) - std::lgamma(k + 1.0) - lnZ);
    return pk * (1 + j * Et * Et) / std::pow(1 + Et, j + 1);
}

struct GenerationRates {
    std::vector<double> per_mode;  ///< dn_p/dt, a density per d^3p
    double riemann_total = 0.0;    ///< sum_p (dn_p/dt) d3p
    double cutoff_total = 0.0;     ///< the same sum as an integral over |p| <= Lambda
    double limit_total = 0.0;      ///< lambda_p^2 m^2 V / (8 pi^2)
};

inline GenerationRates generation_rates(const RenormalizationScheme& s, const MomentumGrid& grid)
{
    s.validate();
    GenerationRates r;
    const double V = grid.V();
    const double pre = s.lambda_p * s.lambda_p * s.m * s.m * V / (2 * std::pow(kTwoPi, 3) * s.cutoff * s.cutoff);
    for (const auto& md : grid.modes()) {
        const double pn = std::sqrt(md.p[0] * md.p[0] + md.p[1] * md.p[1] + md.p[2] * md.p[2]);
        r.per_mode.push_back(pn <= s.cutoff ? pre / md.E : 0.0);
    }
    double sum = 0.0;
    for (double v : r.per_mode) sum += v;
    r.riemann_total = sum * grid.d3p();
    r.cutoff_total = pre * 4 * kPi *
                     detail::integrate([&](double k) { return k * k / std::hypot(k, s.m); }, 0.0, s.cutoff);
    r.limit_total = s.lambda_p * s.lambda_p * s.m * s.m * V / (8 * kPi * kPi);
    return r;
}

inline FockVector mode_sde_solution(const FockVector& psi0, const RenormalizationScheme& s, const MomentumGrid& grid,
                                    const std::vector<ModeWiener>& W)
{
    s.validate();
    return mode_sde_solution(psi0, s.bare(), grid, W);
}

}  // namespace sqft
