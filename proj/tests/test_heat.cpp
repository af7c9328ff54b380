#include "wassflow/heat.hpp"
#include "wassflow/oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace wassflow;

namespace {

MetricMeasureSpace torus(int m) {
    ManifoldSpec s;
    s.kind = ManifoldKind::FlatTorus;
    s.resolution = m;
    return build_manifold(s);
}

MetricMeasureSpace sphere(int subdiv) {
    ManifoldSpec s;
    s.kind = ManifoldKind::RoundSphere;
    s.resolution = subdiv;
    return build_manifold(s);
}

Vec bump(const MetricMeasureSpace& M, double eps) {
    Vec f(M.n);
    for (int v = 0; v < M.n; ++v)
        f[v] = eps * (std::cos(2 * M_PI * M.chart(v, 0)) +
                      0.5 * std::cos(2 * M_PI * M.chart(v, 1)));
    return f;
}

} // namespace

TEST_CASE("eigendecompose: flat torus spectrum") {
    auto M = torus(32);
    auto H = eigendecompose(M, 64);

    REQUIRE(H.lam[0] == 0.0);
    REQUIRE((H.phi.col(0).array() - 1.0).abs().maxCoeff() == 0.0);

    // low modes approximate (2 pi)^2 (m^2 + n^2): lambda_1..4 ~ 4 pi^2 (x4)
    for (int k = 1; k <= 4; ++k)
        REQUIRE(H.lam[k] == Catch::Approx(4 * M_PI * M_PI).epsilon(0.01));
    REQUIRE(H.lam[5] == Catch::Approx(8 * M_PI * M_PI).epsilon(0.01));
    REQUIRE(H.lam[4] / H.lam[1] == Catch::Approx(1.0).margin(1e-9));   // exact multiplicity

    SECTION("L2(domega) orthonormality") {
        for (int i = 0; i < 8; ++i)
            for (int j = i; j < 8; ++j) {
                const double ip = M.inner_omega(H.phi.col(i), H.phi.col(j));
                REQUIRE(std::abs(ip - (i == j ? 1.0 : 0.0)) < 1e-10);
            }
    }
}

TEST_CASE("eigendecompose: sphere l(l+1) spectrum") {
    auto M = sphere(3);
    auto H = eigendecompose(M, 16);
    for (int k = 1; k <= 3; ++k)
        REQUIRE(H.lam[k] == Catch::Approx(2.0).epsilon(0.01));
    for (int k = 4; k <= 8; ++k)
        REQUIRE(H.lam[k] == Catch::Approx(6.0).epsilon(0.02));
}

TEST_CASE("eigendecompose: k above vertex count is refused") {
    auto M = torus(8);
    REQUIRE_THROWS_AS(eigendecompose(M, M.n + 1), std::invalid_argument);
}

TEST_CASE("heat kernel: mass, symmetry, semigroup, positivity") {
    auto M = set_dilaton(torus(16), bump(torus(16), 0.4));
    auto H = eigendecompose(M, M.n);
    const double tmin = H.t_min();
    Rng rng(1);

    for (int trial = 0; trial < 10; ++trial) {
        const double t = tmin * rng.uniform(1, 20);
        const double s = tmin * rng.uniform(1, 20);
        const int z = rng.uniform_int(M.n), y = rng.uniform_int(M.n);
        const Vec pt = H.kernel(t, z);

        REQUIRE(std::abs((pt.array() * M.omega.array()).sum() - 1.0) < 1e-10);
        REQUIRE(std::abs(pt[y] - H.kernel(t, y)[z]) < 1e-10);

        const Vec ps = H.kernel(s, y);
        const double conv = (pt.array() * ps.array() * M.omega.array()).sum();
        REQUIRE(std::abs(conv - H.kernel(t + s, z)[y]) < 1e-8);

        REQUIRE(pt.minCoeff() > -1e-8);
    }

    SECTION("kernel flattens at the spectral-gap rate") {
        // late enough that the gap mode dominates the higher band
        const double t1 = 0.12, t2 = 0.16;
        const double d1 = (H.kernel(t1, 3).array() - 1.0).abs().maxCoeff();
        const double d2 = (H.kernel(t2, 3).array() - 1.0).abs().maxCoeff();
        REQUIRE(d2 < d1);
        REQUIRE(d2 / d1 == Catch::Approx(std::exp(-H.lam[1] * (t2 - t1))).epsilon(0.05));
    }

    SECTION("t below t_min is rejected") {
        REQUIRE_THROWS_AS(H.kernel(0.4 * tmin, 0), std::invalid_argument);
    }
}

TEST_CASE("source gradient") {
    auto M = torus(16);
    auto H = eigendecompose(M, M.n);
    const double t = 3 * H.t_min();
    const int z = 37;

    SECTION("zero direction contracts to the zero field") {
        const Mat g = H.source_gradient(t, z);
        Vec zeroU = Vec::Zero(2);
        REQUIRE((g * zeroU).norm() == 0.0);
    }

    SECTION("translation invariance: grad_z p = -grad_y p pointwise") {
        const Mat gz = H.source_gradient(t, z);
        const Vec p = H.kernel(t, z);
        double worst = 0;
        for (int v = 0; v < M.n; ++v) {
            const Vec gy = M.gradient_at_high_order(p, v);
            worst = std::max(worst, std::abs(gy[0] + gz(v, 0)));
            worst = std::max(worst, std::abs(gy[1] + gz(v, 1)));
        }
        REQUIRE(worst < 1e-8);
    }

    SECTION("zero mean against the reference measure") {
        const Mat gz = H.source_gradient(t, z);
        for (int d = 0; d < 2; ++d)
            REQUIRE(std::abs((gz.col(d).array() * M.omega.array()).sum()) < 1e-9);
    }
}

TEST_CASE("varadhan limit") {
    SECTION("coincident points give zero") {
        auto M = torus(16);
        auto H = eigendecompose(M, M.n);
        const double tmin = H.t_min();
        const auto tr = varadhan_limit(H, 5, 5, {8 * tmin, 4 * tmin, 2 * tmin});
        REQUIRE(std::abs(tr.extrapolated) < 1e-12);
    }

    SECTION("sphere pair at d ~ 0.5 extrapolates to d^2/4 within 5%") {
        auto M = sphere(3);
        auto H = eigendecompose(M, M.n);
        const double tmin = H.t_min();
        int y = -1;
        double best = 1e9;
        for (int v = 1; v < M.n; ++v) {
            const double d = M.geodesic_distance(0, v);
            if (std::abs(d - 0.5) < best) { best = std::abs(d - 0.5); y = v; }
        }
        const double d = M.geodesic_distance(0, y);
        std::vector<double> sched;
        for (int j = 5; j >= 1; --j) sched.push_back(tmin * std::pow(2.0, j));
        const auto tr = varadhan_limit(H, y, 0, sched);
        REQUIRE(std::abs(tr.extrapolated - d * d / 4) / (d * d / 4) < 0.05);
    }

    SECTION("flat torus matches the Bessel image-sum oracle to 1e-6") {
        auto M = torus(32);
        auto H = eigendecompose(M, M.n);
        const double tmin = H.t_min();
        Rng rng(2);
        for (int rep = 0; rep < 5; ++rep) {
            const int y = rng.uniform_int(M.n), z = rng.uniform_int(M.n);
            for (double t : {2 * tmin, 8 * tmin, 32 * tmin}) {
                const double p = H.kernel(t, z)[y];
                const double q = oracle::torus_kernel(M, t, y, z);
                REQUIRE(std::abs(-t * std::log(p) + t * std::log(q)) < 1e-6);
            }
        }
    }

    SECTION("increasing schedules are rejected") {
        auto M = torus(16);
        auto H = eigendecompose(M, 64);
        REQUIRE_THROWS_AS(varadhan_limit(H, 0, 1, {0.1, 0.2, 0.4}), std::invalid_argument);
    }
}

TEST_CASE("dilaton heat flow") {
    auto M0 = torus(32);
    auto M = set_dilaton(M0, bump(M0, 0.05));
    auto H = eigendecompose(M, M.n);
    const Vec f = M.dilaton;

    SECTION("constants are fixed points") {
        const Vec c = Vec::Constant(M.n, 0.8);
        for (double t : {0.0, 0.01, 0.4}) {
            const Vec ft = dilaton_heat_flow(H, c, 4, t);
            REQUIRE((ft.array() - 0.8).abs().maxCoeff() < 1e-12);
        }
    }

    SECTION("t = 0 returns f exactly") {
        REQUIRE((dilaton_heat_flow(H, f, 2, 0.0) - f).norm() == 0.0);
    }

    SECTION("maximum principle") {
        for (double t : {0.005, 0.05, 0.5}) {
            const Vec ft = dilaton_heat_flow(H, f, 2, t);
            REQUIRE(ft.minCoeff() >= f.minCoeff() - 1e-12);
            REQUIRE(ft.maxCoeff() <= f.maxCoeff() + 1e-12);
        }
    }

    SECTION("agrees with RK4 time stepping of the nonlinear PDE") {
        // d/dt f = Delta_omega f - (2/q)|grad f|^2, q = 2, t = 0.01.
        const double t_end = 0.01;
        const double lam_max = H.lam[H.k - 1];
        const double dt = 1.0 / lam_max;
        const Vec spectral = dilaton_heat_flow(H, f, 2, t_end);
        const Vec rk4 = oracle::dilaton_flow_rk4(M, f, 2, t_end, dt);
        REQUIRE((spectral - rk4).cwiseAbs().maxCoeff() < 1e-5);
    }
}

TEST_CASE("semigroup contracts zero-mean fields in L2(domega)") {
    auto M0 = torus(16);
    auto M = set_dilaton(M0, bump(M0, 0.3));
    auto H = eigendecompose(M, M.n);
    Rng rng(4);
    Vec u(M.n);
    for (int i = 0; i < M.n; ++i) u[i] = rng.uniform(-1, 1);
    u.array() -= (u.array() * M.omega.array()).sum();
    double prev = std::sqrt(M.inner_omega(u, u));
    for (double t : {0.01, 0.02, 0.04, 0.08}) {
        const Vec ut = H.apply_semigroup(t, u);
        const double nrm = std::sqrt(M.inner_omega(ut, ut));
        REQUIRE(nrm < prev);
        prev = nrm;
    }
}

TEST_CASE("deterministic eigenbasis: repeated decompositions are identical") {
    auto M = torus(16);
    auto H1 = eigendecompose(M, 48);
    auto H2 = eigendecompose(M, 48);
    REQUIRE((H1.phi - H2.phi).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((H1.lam - H2.lam).cwiseAbs().maxCoeff() == 0.0);
}
