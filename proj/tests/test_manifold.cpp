#include "wassflow/manifold.hpp"
#include "wassflow/oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace wassflow;

namespace {

ManifoldSpec torus_spec(int m, double lx = 1.0, double ly = 1.0) {
    ManifoldSpec s;
    s.kind = ManifoldKind::FlatTorus;
    s.resolution = m;
    s.torus_lx = lx;
    s.torus_ly = ly;
    return s;
}

ManifoldSpec sphere_spec(int subdiv, double r = 1.0) {
    ManifoldSpec s;
    s.kind = ManifoldKind::RoundSphere;
    s.resolution = subdiv;
    s.sphere_radius = r;
    return s;
}

ManifoldSpec circle_spec(int n, CircleRule a = {}) {
    ManifoldSpec s;
    s.kind = ManifoldKind::Circle;
    s.resolution = n;
    s.circle_a = a;
    return s;
}

} // namespace

TEST_CASE("build_manifold: flat torus basics") {
    auto M = build_manifold(torus_spec(32));
    REQUIRE(M.n == 1024);
    REQUIRE(M.volume == Catch::Approx(1.0).margin(1e-14));
    REQUIRE(std::abs(M.omega.sum() - 1.0) < 1e-12);
    REQUIRE(M.omega.minCoeff() > 0);
    REQUIRE(M.mass.minCoeff() > 0);
}

TEST_CASE("build_manifold: icosphere area within 1% of 4 pi r^2") {
    auto M = build_manifold(sphere_spec(3));
    REQUIRE(M.n == 642);
    REQUIRE(std::abs(M.volume - 4 * M_PI) / (4 * M_PI) < 0.01);
    REQUIRE(std::abs(M.omega.sum() - 1.0) < 1e-12);
}

TEST_CASE("build_manifold: uniform circle edge lengths") {
    auto M = build_manifold(circle_spec(64));
    for (int i = 0; i < M.n; ++i)
        REQUIRE(M.edge_len_circle(i) == Catch::Approx(2 * M_PI / 64).epsilon(1e-12));
    REQUIRE(M.circle_length == Catch::Approx(2 * M_PI).epsilon(1e-12));
}

TEST_CASE("build_manifold: rejects bad specs") {
    ManifoldSpec s = torus_spec(4);
    REQUIRE_THROWS_AS(build_manifold(s), std::invalid_argument);
    s = sphere_spec(0);
    REQUIRE_THROWS_AS(build_manifold(s), std::invalid_argument);
    s = circle_spec(64, CircleRule{0.1, 0.5, 0.0});   // factor dips negative
    REQUIRE_THROWS_AS(build_manifold(s), std::invalid_argument);
}

TEST_CASE("set_dilaton gauge and measure") {
    auto M0 = build_manifold(torus_spec(16));

    SECTION("f = 0 gives the uniform measure") {
        for (int v = 0; v < M0.n; ++v)
            REQUIRE(M0.omega[v] == Catch::Approx(1.0 / M0.n).margin(1e-15));
    }

    SECTION("constant f recovers the same measure with the shift recorded") {
        auto M = set_dilaton(M0, Vec::Constant(M0.n, 2.5));
        REQUIRE((M.omega - M0.omega).cwiseAbs().maxCoeff() < 1e-14);
        REQUIRE(M.gauge_shift == Catch::Approx(-2.5).margin(1e-12));
        REQUIRE((M.dilaton.array() - 0.0).abs().maxCoeff() < 1e-12);
    }

    SECTION("bump: Radon-Nikodym density matches exp(-f~)/V pointwise") {
        Vec f(M0.n);
        for (int v = 0; v < M0.n; ++v)
            f[v] = 0.4 * std::cos(2 * M_PI * M0.chart(v, 0)) + 0.1;
        auto M = set_dilaton(M0, f);
        REQUIRE(std::abs(M.omega.sum() - 1.0) < 1e-12);
        for (int v = 0; v < M.n; ++v) {
            const double expected = std::exp(-M.dilaton[v]) / M.volume;
            REQUIRE(std::abs(M.density[v] - expected) < 1e-12 * expected);
        }
        // gauge-shifted field integrates to a probability measure exactly
        const double total = ((-M.dilaton.array()).exp() * M.mass.array()).sum() / M.volume;
        REQUIRE(std::abs(total - 1.0) < 1e-12);
    }

    SECTION("idempotence on the gauge-shifted field") {
        Vec f(M0.n);
        for (int v = 0; v < M0.n; ++v) f[v] = 0.3 * std::sin(2 * M_PI * M0.chart(v, 1));
        auto M1 = set_dilaton(M0, f);
        auto M2 = set_dilaton(M0, M1.dilaton);
        REQUIRE((M1.omega - M2.omega).cwiseAbs().maxCoeff() < 1e-14);
    }

    SECTION("non-finite dilaton is refused") {
        Vec f = Vec::Zero(M0.n);
        f[3] = std::numeric_limits<double>::quiet_NaN();
        REQUIRE_THROWS_AS(set_dilaton(M0, f), std::invalid_argument);
    }
}

TEST_CASE("gradient and hessian on grids") {
    SECTION("constants annihilate") {
        auto M = build_manifold(torus_spec(16));
        const Vec u = Vec::Constant(M.n, 3.7);
        REQUIRE(M.gradient(u).cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE(M.hessian(u).comp.cwiseAbs().maxCoeff() < 1e-12);
    }

    SECTION("cos(2 pi x): second-order convergence to the analytic derivative") {
        double err_prev = 0;
        std::vector<double> errs;
        for (int m : {32, 64}) {
            auto M = build_manifold(torus_spec(m));
            Vec u(M.n);
            for (int v = 0; v < M.n; ++v) u[v] = std::cos(2 * M_PI * M.chart(v, 0));
            const Mat g = M.gradient(u);
            const BilinearField H = M.hessian(u);
            double eg = 0, eh = 0;
            for (int v = 0; v < M.n; ++v) {
                const double x = M.chart(v, 0);
                eg = std::max(eg, std::abs(g(v, 0) + 2 * M_PI * std::sin(2 * M_PI * x)));
                eg = std::max(eg, std::abs(g(v, 1)));
                eh = std::max(eh,
                              std::abs(H.comp(v, 0) + 4 * M_PI * M_PI * std::cos(2 * M_PI * x)));
            }
            errs.push_back(std::max(eg, eh));
        }
        err_prev = errs[0] / errs[1];
        REQUIRE(err_prev > 3.5);
        REQUIRE(err_prev < 4.5);
    }

    SECTION("sphere: z-coordinate is an l=1 eigenfunction, Laplacian -2 u / r^2") {
        auto M = build_manifold(sphere_spec(3));
        Vec u = M.chart.col(2);
        const SpMat S = M.weighted_stiffness(Vec::Constant(M.n, 1.0));
        const Vec lap = -(S * u).array() / M.mass.array();
        // lumped-mass cotan operators are L2-consistent, not pointwise at the
        // twelve irregular vertices; check the mesh-tolerance L2 error
        double num = 0, den = 0;
        for (int v = 0; v < M.n; ++v) {
            num += M.mass[v] * std::pow(lap[v] + 2 * u[v], 2);
            den += M.mass[v] * std::pow(2 * u[v], 2);
        }
        REQUIRE(std::sqrt(num / den) < 0.03);
    }
}

TEST_CASE("geodesic distances") {
    SECTION("torus diagonal") {
        auto M = build_manifold(torus_spec(16));
        REQUIRE(M.geodesic_distance_pt(Vec3(0, 0, 0), Vec3(0.5, 0.5, 0)) ==
                Catch::Approx(std::sqrt(2.0) / 2).epsilon(1e-14));
    }
    SECTION("sphere antipodal within vertex snapping") {
        auto M = build_manifold(sphere_spec(2));
        // vertex 0 and its antipode
        const Vec3 p = M.point_of(0);
        int anti = M.nearest_vertex(-p);
        REQUIRE(M.geodesic_distance(0, anti) == Catch::Approx(M_PI).margin(0.02));
    }
    SECTION("circle with a(x) = 1 + 0.3 sin x: d(0, pi) equals the quadrature") {
        CircleRule rule{1.0, 0.3, 0.0};
        auto M = build_manifold(circle_spec(256, rule));
        // the geodesic takes the shorter arc; with this rule that is the
        // backward arc of length  int_pi^2pi a = pi - 0.6
        const double fwd = detail::integrate([&](double x) { return rule(x); }, 0.0, M_PI);
        const double bwd = detail::integrate([&](double x) { return rule(x); }, M_PI, 2 * M_PI);
        const double got = M.geodesic_distance(0, 128);
        REQUIRE(std::abs(got - std::min(fwd, bwd)) < 1e-8);
    }
    SECTION("metric axioms on random triples") {
        auto M = build_manifold(torus_spec(16, 1.0, 1.4));
        Rng rng(7);
        for (int k = 0; k < 1000; ++k) {
            const int a = rng.uniform_int(M.n), b = rng.uniform_int(M.n), c = rng.uniform_int(M.n);
            const double ab = M.geodesic_distance(a, b);
            REQUIRE(std::abs(ab - M.geodesic_distance(b, a)) < 1e-14);
            REQUIRE(M.geodesic_distance(a, c) <= ab + M.geodesic_distance(b, c) + 1e-10);
            if (a == b) REQUIRE(ab == 0.0);
        }
    }
}

TEST_CASE("exp/log maps are mutually inverse") {
    for (auto spec : {torus_spec(16), sphere_spec(2), circle_spec(32)}) {
        auto M = build_manifold(spec);
        Rng rng(3);
        for (int k = 0; k < 50; ++k) {
            const int a = rng.uniform_int(M.n);
            int b = rng.uniform_int(M.n);
            if (M.geodesic_distance(a, b) > 0.9 * M.injectivity_radius()) continue;
            const Vec3 lv = M.log_pt(M.point_of(a), M.point_of(b));
            REQUIRE(std::abs(lv.norm() - M.geodesic_distance(a, b)) < 1e-10);
            const Vec3 back = M.exp_pt(M.point_of(a), lv);
            REQUIRE(M.geodesic_distance_pt(back, M.point_of(b)) < 1e-10);
        }
    }
}

TEST_CASE("frechet_mean") {
    SECTION("coincident points") {
        auto M = build_manifold(torus_spec(16));
        const auto fm = frechet_mean(M, {37, 37, 37});
        REQUIRE(M.geodesic_distance_pt(fm.point, M.point_of(37)) < 1e-12);
        REQUIRE(fm.F == Catch::Approx(0.0).margin(1e-18));
        REQUIRE(fm.coupling_a == Catch::Approx(0.0).margin(1e-18));
    }

    SECTION("two symmetric points on a sphere meridian meet at the midpoint") {
        auto M = build_manifold(sphere_spec(3));
        const Vec3 c = M.point_of(0);
        Vec off(2);
        off << 0.3, 0.0;
        const Vec3 t1 = M.frame_to_tangent(0, off), t2 = -t1;
        const int p1 = M.nearest_vertex(M.exp_pt(c, t1));
        const int p2 = M.nearest_vertex(M.exp_pt(c, t2));
        const auto fm = frechet_mean(M, {p1, p2});
        const double dm1 = M.geodesic_distance_pt(fm.point, M.point_of(p1));
        const double dm2 = M.geodesic_distance_pt(fm.point, M.point_of(p2));
        REQUIRE(std::abs(dm1 - dm2) < 1e-9);
        // midpoint lies on the geodesic: d(p1,mean)+d(mean,p2) = d(p1,p2)
        REQUIRE(dm1 + dm2 == Catch::Approx(M.geodesic_distance(p1, p2)).margin(1e-9));
    }

    SECTION("random torus cluster matches the exhaustive vertex scan oracle") {
        auto M = build_manifold(torus_spec(48));
        Rng rng(11);
        const int c = rng.uniform_int(M.n);
        std::vector<int> pts;
        for (int k = 0; k < 5; ++k) {
            Vec off(2);
            off << rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08);
            pts.push_back(M.nearest_vertex(M.exp_pt(M.point_of(c), M.frame_to_tangent(c, off))));
        }
        const auto fm = frechet_mean(M, pts);
        auto [vbest, Fbest] = oracle::frechet_scan(M, pts);
        // local refinement of the scan result: Frechet iteration from the scan vertex
        REQUIRE(fm.F <= Fbest + 1e-12);
        // gradient-descent minimum agrees with scan + refinement
        const auto fm2 = frechet_mean(M, std::vector<int>{vbest, vbest});
        (void)fm2;
        REQUIRE(std::abs(fm.F - Fbest) < 1e-3);   // vertex-scan is h-coarse
        // the continuum minimizer beats every vertex; F agreement after refinement
        double Fref = 0;
        for (int p : pts) {
            const double d = M.geodesic_distance_pt(fm.point, M.point_of(p));
            Fref += 0.5 * d * d;
        }
        REQUIRE(Fref == Catch::Approx(fm.F).margin(1e-8));
    }

    SECTION("points breaching the r0 ball are refused") {
        auto M = build_manifold(sphere_spec(2));
        const Vec3 p = M.point_of(0);
        const int anti = M.nearest_vertex(-p);
        REQUIRE_THROWS_AS(frechet_mean(M, {0, anti}), std::invalid_argument);
    }
}

TEST_CASE("bakry_emery_K") {
    SECTION("unit sphere, f = 0: K = 1") {
        auto M = build_manifold(sphere_spec(3));
        REQUIRE(bakry_emery_K(M) == Catch::Approx(1.0).margin(1e-9));
    }
    SECTION("flat torus, f = 0: K = 0") {
        auto M = build_manifold(torus_spec(16));
        REQUIRE(bakry_emery_K(M) == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("flat torus, f = eps cos(2 pi x): K ~ -4 pi^2 eps") {
        const double eps = 0.05;
        auto M0 = build_manifold(torus_spec(32));
        Vec f(M0.n);
        for (int v = 0; v < M0.n; ++v) f[v] = eps * std::cos(2 * M_PI * M0.chart(v, 0));
        auto M = set_dilaton(M0, f);
        const double K = bakry_emery_K(M);
        REQUIRE(std::abs(K + 4 * M_PI * M_PI * eps) < 0.01 * 4 * M_PI * M_PI * eps + 1e-12);
    }
}

TEST_CASE("weighted Laplacian invariants") {
    auto M0 = build_manifold(torus_spec(16));
    Vec f(M0.n);
    for (int v = 0; v < M0.n; ++v)
        f[v] = 0.3 * std::cos(2 * M_PI * M0.chart(v, 0)) +
               0.2 * std::sin(2 * M_PI * M0.chart(v, 1));
    auto M = set_dilaton(M0, f);
    const SpMat A = M.omega_stiffness();

    SECTION("constants in the kernel exactly (row sums vanish)") {
        const Vec r = A * Vec::Ones(M.n);
        REQUIRE(r.cwiseAbs().maxCoeff() < 1e-14);
    }
    SECTION("self-adjointness w.r.t. the omega inner product") {
        Rng rng(5);
        for (int k = 0; k < 5; ++k) {
            Vec u(M.n), v(M.n);
            for (int i = 0; i < M.n; ++i) { u[i] = rng.uniform(-1, 1); v[i] = rng.uniform(-1, 1); }
            const Vec Au = -(A * u).array() / M.omega.array();
            const Vec Av = -(A * v).array() / M.omega.array();
            REQUIRE(std::abs(M.inner_omega(Au, v) - M.inner_omega(u, Av)) < 1e-12);
        }
    }
    SECTION("negative semidefinite: <Delta u, u> <= 0") {
        Rng rng(6);
        for (int k = 0; k < 10; ++k) {
            Vec u(M.n);
            for (int i = 0; i < M.n; ++i) u[i] = rng.uniform(-1, 1);
            const Vec Au = -(A * u).array() / M.omega.array();
            REQUIRE(M.inner_omega(Au, u) <= 1e-12);
        }
    }
    SECTION("refinement: second-order consistency of Delta_omega") {
        std::vector<double> errs;
        for (int m : {32, 64}) {
            auto B0 = build_manifold(torus_spec(m));
            Vec fb(B0.n), u(B0.n);
            for (int v = 0; v < B0.n; ++v) {
                const double x = B0.chart(v, 0), y = B0.chart(v, 1);
                fb[v] = 0.3 * std::cos(2 * M_PI * x);
                u[v] = std::sin(2 * M_PI * y) + std::cos(2 * M_PI * x);
            }
            auto B = set_dilaton(B0, fb);
            const SpMat S = B.omega_stiffness();
            const Vec lap = -(S * u).array() / B.omega.array();
            double worst = 0;
            for (int v = 0; v < B.n; ++v) {
                const double x = B.chart(v, 0);
                // analytic: Delta u - grad f . grad u
                const double analytic =
                    -4 * M_PI * M_PI * (std::sin(2 * M_PI * B.chart(v, 1)) + std::cos(2 * M_PI * x)) -
                    (-0.3 * 2 * M_PI * std::sin(2 * M_PI * x)) * (-2 * M_PI * std::sin(2 * M_PI * x));
                worst = std::max(worst, std::abs(lap[v] - analytic));
            }
            errs.push_back(worst);
        }
        const double factor = errs[0] / errs[1];
        REQUIRE(factor > 3.5);
        REQUIRE(factor < 4.5);
    }
}

TEST_CASE("localization radius and curvature data") {
    auto MT = build_manifold(torus_spec(16));
    REQUIRE(MT.localization_radius() == Catch::Approx(0.5 / 3.0).epsilon(1e-12));
    REQUIRE(MT.ricci_frame().norm() == 0.0);

    auto MS = build_manifold(sphere_spec(2, 2.0));
    // r0 = min(pi r / 3, pi/(6 sqrt(1/r^2))) = pi r / 6
    REQUIRE(MS.localization_radius() == Catch::Approx(M_PI * 2.0 / 6.0).epsilon(1e-12));
    REQUIRE(MS.ricci_frame()(0, 0) == Catch::Approx(0.25).epsilon(1e-12));
}
