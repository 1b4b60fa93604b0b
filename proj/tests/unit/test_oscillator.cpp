#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "sqft/mcstats.hpp"
#include "sqft/oscillator.hpp"

using namespace sqft;

namespace {

/// I_W = sum_j m (x_{j+1} - x_j)^2 / (2 dt) + lambda sum_j x_j dW_j, written out directly.
double discrete_action(const std::vector<double>& x, const WienerIncrements& W, double m, double lambda)
{
    double s = 0.0;
    for (std::size_t j = 0; j + 1 < x.size(); ++j) {
        const double d = x[j + 1] - x[j];
        s += 0.5 * m * d * d / W.dt + lambda * x[j] * W[j];
    }
    return s;
}

Eigen::MatrixXd dense_tridiagonal(int N)
{
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(N - 1, N - 1);
    for (int i = 0; i < N - 1; ++i) {
        A(i, i) = 2;
        if (i + 1 < N - 1) A(i, i + 1) = A(i + 1, i) = -1;
    }
    return A;
}

}  // namespace

TEST(OscillatorParams, Validation)
{
    EXPECT_THROW((OscillatorParams{0.0, 0.0, 0.0}.validate()), InvalidParameter);
    EXPECT_THROW((OscillatorParams{1.0, -1.0, 0.0}.validate()), InvalidParameter);
    EXPECT_THROW((OscillatorParams{1.0, 0.0, -0.1}.validate()), InvalidParameter);
    EXPECT_NO_THROW((OscillatorParams{1.0, 0.0, 0.0}.validate()));
}

TEST(GaussianPacket, MomentsOnGrid)
{
    const auto w = GaussianPacket{0.7, 0.0, 1.2}.sample(XGrid::centered(256, 24.0));
    EXPECT_NEAR(w.norm(), 1.0, 1e-14);
    EXPECT_NEAR(w.mean_x(), 0.7, 1e-10);
    EXPECT_NEAR(w.width(), 1.2, 1e-10);
    EXPECT_THROW((GaussianPacket{0, 0, 0}.sample(XGrid::centered(8, 1.0))), InvalidParameter);
}

TEST(EvolveSde, NoiseOnlyIsExactPhase)
{
    const XGrid g = XGrid::centered(64, 12.0);
    const auto psi0 = GaussianPacket{0.3, 0.4, 1.0}.sample(g);
    const OscillatorParams par{1.0, 0.0, 0.8};
    const auto W = sample_wiener(200, 0.005, 1);
    SdeOptions opt;
    opt.hamiltonian = false;
    const auto tr = evolve_sde(psi0, par, W, opt);
    const double w = W.total();
    for (std::size_t j = 0; j < g.n; ++j)
        EXPECT_NEAR(std::abs(tr.back().psi[j] - std::polar(1.0, par.lambda * g.x(j) * w) * psi0.psi[j]), 0.0, 1e-12);
}

TEST(EvolveSde, UnitaryAtEveryRecordedStep)
{
    const XGrid g = XGrid::centered(128, 26.0);
    const auto psi0 = GaussianPacket{0.0, 0.5, 1.0}.sample(g);
    SdeOptions opt;
    opt.record_every = 1;
    const auto tr = evolve_sde(psi0, {1.0, 0.5, 1.0}, sample_wiener(300, 0.005, 2), opt);
    EXPECT_EQ(tr.states.size(), 301u);
    for (const auto& s : tr.states) EXPECT_NEAR(s.norm(), 1.0, 1e-8);
    EXPECT_LT(tr.max_norm_error, 1e-8);
    EXPECT_DOUBLE_EQ(tr.times.back(), 1.5);
}

TEST(EvolveSde, FreeWidthLaw)
{
    const XGrid g = XGrid::centered(256, 30.0);
    const GaussianPacket pk{0.0, 0.0, 1.0};
    const auto W = sample_wiener(500, 0.002, 3);
    const auto fin = evolve_sde(pk.sample(g), {1.0, 0.0, 0.0}, W).back();
    const double expected = std::sqrt(1.0 + 1.0);  // sigma0 sqrt(1 + tau^2/(m^2 sigma0^4)), tau = 1
    EXPECT_NEAR(fin.width() / expected, 1.0, 1e-3);
    EXPECT_NEAR(fin.mean_x(), 0.0, 1e-10);
}

TEST(EvolveSde, PerPathCenterMatchesPacketLaw)
{
    const XGrid g = XGrid::centered(512, 28.0);
    const GaussianPacket pk{0.0, 0.5, 1.0};
    const OscillatorParams par{1.0, 0.0, 1.0};
    for (std::uint64_t seed : {4u, 5u, 6u}) {
        const auto W = sample_wiener(2000, 5e-4, seed);
        const auto fin = evolve_sde(pk.sample(g), par, W).back();
        const auto ex = evolve_packet_exact(pk, 1.0, W, par);
        EXPECT_LT(std::abs(fin.mean_x() - ex.q) / std::max(std::abs(ex.q), ex.sigma), 1e-3);
        EXPECT_NEAR(fin.width() / ex.sigma, 1.0, 1e-3);
    }
}

TEST(EvolveSde, CoarseGridRaisesResolutionError)
{
    const XGrid g = XGrid::centered(16, 40.0);
    const auto psi0 = GaussianPacket{0.0, 0.0, 0.5}.sample(g);
    EXPECT_THROW(evolve_sde(psi0, {1.0, 0.0, 0.0}, sample_wiener(10, 0.01, 1)), ResolutionError);
}

TEST(Lindblad, NoiseOnlyDecoherence)
{
    const XGrid g = XGrid::centered(32, 10.0);
    const auto rho0 = GridDensityMatrix::pure(GaussianPacket{0.0, 0.3, 1.0}.sample(g));
    LindbladOptions opt;
    opt.hamiltonian = false;
    const double lambda = 0.7, t = 0.6;
    const auto rho = evolve_lindblad(rho0, {1.0, 0.0, lambda}, t, opt);
    double worst = 0;
    for (Eigen::Index a = 0; a < 32; ++a)
        for (Eigen::Index b = 0; b < 32; ++b) {
            const double f = decoherence_factor(g.x(static_cast<std::size_t>(a)), g.x(static_cast<std::size_t>(b)), t,
                                                lambda);
            worst = std::max(worst, std::abs(rho.rho(a, b) - f * rho0.rho(a, b)));
        }
    EXPECT_LT(worst, 1e-6);
}

TEST(Lindblad, ClosedSystemKeepsPurity)
{
    const XGrid g = XGrid::centered(32, 12.0);
    const auto rho0 = GridDensityMatrix::pure(GaussianPacket{0.5, 0.0, 1.0}.sample(g));
    const auto rho = evolve_lindblad(rho0, {1.0, 1.0, 0.0}, 1.0);
    EXPECT_NEAR(rho.purity(), 1.0, 1e-6);
    EXPECT_NEAR(rho.trace().real(), 1.0, 1e-12);
    EXPECT_LT(rho.hermiticity_error(), 1e-10);
}

TEST(Lindblad, OpenSystemInvariants)
{
    const XGrid g = XGrid::centered(32, 12.0);
    const auto rho0 = GridDensityMatrix::pure(GaussianPacket{0.5, 0.2, 1.0}.sample(g));
    const auto rho = evolve_lindblad(rho0, {1.0, 1.0, 0.8}, 1.0);
    EXPECT_NEAR(rho.trace().real(), 1.0, 1e-12);
    EXPECT_LT(rho.hermiticity_error(), 1e-10);
    EXPECT_GT(rho.min_eigenvalue(), -1e-8);
    EXPECT_LT(rho.purity(), 0.99);
}

TEST(Lindblad, MatchesAveragedProjectors)
{
    const XGrid g = XGrid::centered(32, 12.0);
    const auto psi0 = GaussianPacket{0.5, 0.5, 1.0}.sample(g);
    const OscillatorParams par{1.0, 1.0, 0.5};
    const double dt = 1e-3;
    const std::size_t paths = 2000;
    auto finals = parallel_map(paths, [&](std::size_t r) {
        return evolve_sde(psi0, par, sample_wiener(500, dt, replica_stream(7, r))).back().psi;
    });
    const auto rho = evolve_lindblad(GridDensityMatrix::pure(psi0), par, 0.5);
    std::vector<double> col(paths);
    // Bulk entries only: far tails are dominated by the splitting error, not MC noise.
    for (std::size_t a = 10; a < 22; a += 3)
        for (std::size_t b = 10; b < 22; b += 3) {
            for (std::size_t r = 0; r < paths; ++r) col[r] = (finals[r][a] * std::conj(finals[r][b])).real() * g.dx;
            const auto rep = sigma_test("entry", estimate_from_samples(col),
                                        rho.rho(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)).real());
            EXPECT_TRUE(rep.pass) << a << "," << b << " " << rep.statistic;
        }
}

TEST(Decoherence, FactorValues)
{
    EXPECT_EQ(decoherence_factor(1.3, 1.3, 2.0, 1.0), 1.0);
    EXPECT_EQ(decoherence_factor(1.0, -1.0, 0.0, 1.0), 1.0);
    EXPECT_NEAR(decoherence_factor(2.0, 0.0, 0.5, 1.0), std::exp(-1.0), 1e-15);
    EXPECT_THROW(decoherence_factor(0, 1, -1, 1), InvalidParameter);
}

TEST(Tridiagonal, Determinant)
{
    EXPECT_EQ(tridiagonal_det(1), 1);
    EXPECT_EQ(tridiagonal_det(5), 5);
    EXPECT_EQ(tridiagonal_det(1000), 1000);
    for (int N = 2; N <= 12; ++N) EXPECT_NEAR(dense_tridiagonal(N).determinant(), N, 1e-9);
    EXPECT_THROW(tridiagonal_det(0), InvalidParameter);
}

TEST(Tridiagonal, InverseEntries)
{
    EXPECT_DOUBLE_EQ(tridiagonal_inverse_entry(2, 1, 1), 0.5);
    EXPECT_EQ(tridiagonal_inverse_entry(9, 2, 7), tridiagonal_inverse_entry(9, 7, 2));
    EXPECT_THROW(tridiagonal_inverse_entry(5, 0, 1), InvalidParameter);
    EXPECT_THROW(tridiagonal_inverse_entry(5, 1, 5), InvalidParameter);
    for (int N : {6, 17, 64}) {
        const Eigen::MatrixXd inv = dense_tridiagonal(N).inverse();
        for (int j = 1; j < N; ++j)
            for (int l = 1; l < N; ++l) EXPECT_NEAR(tridiagonal_inverse_entry(N, j, l), inv(j - 1, l - 1), 1e-12);
    }
}

TEST(StationaryPath, StraightLineAndEndpoints)
{
    const auto W = sample_wiener(40, 0.05, 8);
    const auto line = stationary_path(1.0, 3.0, 0.0, 2.0, W, {1.0, 0.0, 0.0});
    for (std::size_t j = 0; j < line.size(); ++j) EXPECT_NEAR(line[j], 1.0 + 2.0 * static_cast<double>(j) / 40, 1e-14);
    const auto x = stationary_path(1.0, 3.0, 0.0, 2.0, W, {2.0, 0.0, 0.9});
    EXPECT_DOUBLE_EQ(x.front(), 1.0);
    EXPECT_NEAR(x.back(), 3.0, 1e-14);
    EXPECT_THROW(stationary_path(0, 1, 0, 2, W, {1.0, 1.0, 0.0}), UnsupportedCase);
    EXPECT_THROW(stationary_path(0, 1, 0, 3, W, {1.0, 0.0, 0.0}), InvalidParameter);
}

TEST(StationaryPath, DiscreteGradientVanishes)
{
    const std::size_t N = 64;
    const auto W = sample_wiener(N, 1.0 / 64, 9);
    const double m = 1.5, lambda = 0.8;
    const auto x = stationary_path(-0.5, 0.7, 0.0, 1.0, W, {m, 0.0, lambda});
    for (std::size_t j = 1; j < N; ++j) {
        auto xp = x, xm = x;
        const double h = 1e-5;
        xp[j] += h;
        xm[j] -= h;
        const double grad = (discrete_action(xp, W, m, lambda) - discrete_action(xm, W, m, lambda)) / (2 * h);
        EXPECT_NEAR(grad, 0.0, 1e-9) << j;
    }
}

TEST(ClassicalAction, BallisticLimit)
{
    const auto W = sample_wiener(20, 0.1, 10);
    EXPECT_NEAR(classical_action_free(0.5, 2.5, 0.0, 2.0, W, 3.0, 0.0), 0.5 * 3.0 * 4.0 / 2.0, 1e-14);
}

TEST(ClassicalAction, EqualsActionOnStationaryPath)
{
    for (std::uint64_t seed : {11u, 12u, 13u}) {
        const auto W = sample_wiener(50, 0.02, seed, 0.5);
        const double m = 1.3, lambda = 1.1;
        const auto x = stationary_path(0.2, -0.4, 0.5, 1.5, W, {m, 0.0, lambda});
        const double direct = discrete_action(x, W, m, lambda);
        const double closed = classical_action_free(0.2, -0.4, 0.5, 1.5, W, m, lambda);
        EXPECT_NEAR(closed / direct, 1.0, 1e-8);
    }
}

TEST(ClassicalAction, TimeTranslationInDistribution)
{
    const std::size_t n = 2000;
    std::vector<double> a(n), b(n);
    for (std::size_t r = 0; r < n; ++r) {
        const auto Wa = sample_wiener(20, 0.05, replica_stream(14, r), 0.0);
        const auto Wb = sample_wiener(20, 0.05, replica_stream(15, r), 3.0);
        a[r] = classical_action_free(0.0, 1.0, 0.0, 1.0, Wa, 1.0, 1.0);
        b[r] = classical_action_free(0.0, 1.0, 3.0, 4.0, Wb, 1.0, 1.0);
    }
    EXPECT_TRUE(ks_two_sample(a, b).pass);
}

TEST(FreePropagator, PrincipalBranch)
{
    const cplx k = free_propagator(0.0, 1.0, kTwoPi);
    EXPECT_NEAR(std::abs(k - std::polar(1.0, -std::numbers::pi / 4)), 0.0, 1e-15);
}

TEST(PacketExact, TrivialWindows)
{
    const GaussianPacket pk{0.3, 0.8, 1.4};
    WienerIncrements empty;
    empty.t0 = 2.0;
    empty.dt = 0.1;
    const auto e0 = evolve_packet_exact(pk, 2.0, empty, {1.0, 0.0, 1.0});
    EXPECT_EQ(e0.sigma, 1.4);
    EXPECT_EQ(e0.q, 0.3);
    EXPECT_EQ(e0.p1, 0.0);
    const auto W = sample_wiener(100, 0.02, 16);
    const auto e1 = evolve_packet_exact(pk, 2.0, W, {2.0, 0.0, 0.0});
    EXPECT_NEAR(e1.q, 0.3 + 0.8 * 2.0 / 2.0, 1e-14);
    EXPECT_GE(e1.sigma, pk.sigma0);
    EXPECT_THROW(evolve_packet_exact(pk, 2.0, W, {1.0, 1.0, 0.0}), UnsupportedCase);
}

TEST(PacketExact, MomentumKickVariance)
{
    const double lambda = 0.9, tau = 1.0;
    const auto e = mc_estimate(
        [&](const Stream& s) {
            const auto p1 = evolve_packet_exact({0, 0, 1}, tau, sample_wiener(200, tau / 200, s), {1.0, 0.0, lambda}).p1;
            return p1 * p1;
        },
        10000, 17);
    // Left-point sum of (1 - t/tau)^2 dt, the discrete version of tau/3.
    double quad = 0;
    for (int j = 0; j < 200; ++j) quad += std::pow(1.0 - j / 200.0, 2) * tau / 200;
    EXPECT_NEAR(quad, tau / 3, 0.01);
    EXPECT_TRUE(sigma_test("var", e, lambda * lambda * quad).pass);
}
