#include "wassflow/sigma.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace wassflow;

namespace {

MetricMeasureSpace torus(int m) {
    ManifoldSpec s;
    s.kind = ManifoldKind::FlatTorus;
    s.resolution = m;
    return build_manifold(s);
}

// identity-type map of the unit surface torus onto the unit target torus
SigmaMap identity_map(const MetricMeasureSpace& M, int grid) {
    SigmaMap phi;
    phi.M = &M;
    phi.grid.m = grid;
    phi.ref = Vec3(0, 0, 0);
    phi.tang.resize(grid * grid);
    for (int i = 0; i < grid; ++i)
        for (int j = 0; j < grid; ++j)
            phi.tang[phi.grid.idx(i, j)] = Vec3(double(i) / grid, double(j) / grid, 0);
    return phi;
}

// smooth localized test map into an r0 ball around a reference vertex
SigmaMap localized_map(const MetricMeasureSpace& M, int grid, double scale) {
    SigmaMap phi;
    phi.M = &M;
    phi.grid.m = grid;
    const int c = 3;
    phi.ref = M.point_of(c);
    phi.tang.resize(grid * grid);
    const double r0 = M.localization_radius();
    for (int i = 0; i < grid; ++i)
        for (int j = 0; j < grid; ++j) {
            const double x = double(i) / grid, y = double(j) / grid;
            Vec3 v = Vec3::Zero();
            v[0] = scale * r0 * std::sin(2 * M_PI * x);
            v[1] = scale * r0 * (0.6 * std::cos(2 * M_PI * y) + 0.3 * std::sin(2 * M_PI * x));
            phi.tang[phi.grid.idx(i, j)] = v;
        }
    return phi;
}

SigmaMap constant_map(const MetricMeasureSpace& M, int grid, int vertex) {
    SigmaMap phi;
    phi.M = &M;
    phi.grid.m = grid;
    phi.ref = M.point_of(vertex);
    phi.tang.assign(grid * grid, Vec3::Zero());
    return phi;
}

Vec bump(const MetricMeasureSpace& M, double eps) {
    Vec f(M.n);
    for (int v = 0; v < M.n; ++v)
        f[v] = eps * (std::cos(2 * M_PI * M.chart(v, 0)) +
                      0.5 * std::cos(2 * M_PI * M.chart(v, 1)));
    return f;
}

std::vector<int> cluster(const MetricMeasureSpace& M, int c, double radius, int q) {
    std::vector<int> pts;
    for (int k = 0; k < q; ++k) {
        const double th = 2 * M_PI * k / q + 0.2;
        Vec off(2);
        off << radius * std::cos(th), radius * std::sin(th);
        pts.push_back(M.nearest_vertex(M.exp_pt(M.point_of(c), M.frame_to_tangent(c, off))));
    }
    return pts;
}

} // namespace

TEST_CASE("harmonic energy") {
    auto M = torus(32);

    SECTION("constant maps have zero energy") {
        const SigmaMap phi = constant_map(M, 16, 5);
        REQUIRE(harmonic_energy(phi) == 0.0);
    }

    SECTION("identity map of the unit torus has energy 1") {
        const SigmaMap phi = identity_map(M, 16);
        REQUIRE(harmonic_energy(phi) == Catch::Approx(1.0).epsilon(1e-12));
    }

    SECTION("exact discrete conformal invariance") {
        const SigmaMap phi = localized_map(M, 32, 0.5);
        Vec conf(32 * 32);
        for (int i = 0; i < 32 * 32; ++i) conf[i] = std::exp(std::sin(i * 0.37) * 1.3);
        const double e0 = harmonic_energy(phi);
        const double e1 = harmonic_energy(phi, &conf);
        REQUIRE(std::abs(e0 - e1) <= 1e-12 * e0);
    }

    SECTION("positivity and vanishing only on constants") {
        const SigmaMap phi = localized_map(M, 16, 0.3);
        REQUIRE(harmonic_energy(phi) > 0);
    }
}

TEST_CASE("warped energy factorization") {
    auto M0 = torus(32);
    auto M = set_dilaton(M0, bump(M0, 0.5));
    const SigmaMap phi = localized_map(M, 32, 0.5);
    const auto pts = cluster(M, 3, 0.08, 3);

    SECTION("direct equals factorized to 1e-10 under shared quadrature") {
        const WarpedEnergy W = warped_energy(phi, M.dilaton, 3, pts);
        REQUIRE(std::abs(W.E_warped - W.factorized) <= 1e-10 * std::abs(W.E_warped));
        REQUIRE(W.E_base > 0);
        REQUIRE(W.dirichlet > 0);
        REQUIRE(W.F_cm > 0);
    }

    SECTION("constant dilaton: no Dirichlet term") {
        const WarpedEnergy W = warped_energy(phi, Vec(Vec::Constant(M.n, 1.3)), 3, pts);
        REQUIRE(std::abs(W.dirichlet) < 1e-28);   // interpolation roundoff only
        REQUIRE(W.E_warped == Catch::Approx(W.E_base).margin(1e-15));
    }

    SECTION("Dirichlet term scales exactly as q^{-2}") {
        const WarpedEnergy Wq = warped_energy(phi, M.dilaton, 2, pts);
        const WarpedEnergy W2q = warped_energy(phi, M.dilaton, 4, pts);
        REQUIRE(W2q.dirichlet == Catch::Approx(Wq.dirichlet / 4.0).epsilon(1e-12));
    }
}

TEST_CASE("dilatonic action and the conformal identity") {
    auto M0 = torus(32);
    auto M = set_dilaton(M0, bump(M0, 0.5));
    const SigmaMap phi = localized_map(M, 64, 0.5);
    const auto pts = cluster(M, 3, 0.08, 4);

    SECTION("coupling a equals F/q") {
        const DilatonicAction A = dilatonic_action(phi, M.dilaton, 4, pts, true);
        const FrechetMean fm = frechet_mean(M, pts);
        REQUIRE(A.a == Catch::Approx(fm.F / 4.0).epsilon(1e-12));
    }

    SECTION("conformal-gauge identity: S = (2q/F) E_warped") {
        const DilatonicAction A = dilatonic_action(phi, M.dilaton, 4, pts, true);
        REQUIRE(A.gap < 1e-10);
    }

    SECTION("discrete Gauss-Bonnet: sum K dmu = 0 exactly") {
        const DilatonicAction A = dilatonic_action(phi, M.dilaton, 4, pts, true);
        REQUIRE(std::abs(A.gauss_bonnet) < 1e-12);
    }

    SECTION("gauge shift of the dilaton leaves the action invariant") {
        const DilatonicAction A1 = dilatonic_action(phi, M.dilaton, 4, pts, true);
        const DilatonicAction A2 =
            dilatonic_action(phi, Vec(M.dilaton.array() + 2.0), 4, pts, true);
        // dilaton term changes only through f differences; S uses E and the
        // Dirichlet form of f(phi), both shift-invariant
        REQUIRE(A1.S == Catch::Approx(A2.S).epsilon(1e-12));
    }

    SECTION("flat gauge: S = (2/a) E") {
        const DilatonicAction A = dilatonic_action(phi, M.dilaton, 4, pts, false);
        REQUIRE(A.S == Catch::Approx(2.0 / A.a * A.E_base).epsilon(1e-14));
        REQUIRE(A.dilaton_term == 0.0);
    }
}

TEST_CASE("warped distance") {
    auto M0 = torus(16);
    auto M = set_dilaton(M0, bump(M0, 0.4));

    SECTION("zero fiber displacement reduces to the base distance") {
        WarpedPoint P{3, Vec::Zero(1)}, Q{200, Vec::Zero(1)};
        const double d = warped_distance(M, M.dilaton, 1, P, Q, 8);
        // graph distance overestimates the torus metric; same-fiber paths exist
        REQUIRE(d >= M.geodesic_distance(3, 200) - 1e-12);
        // grid-aligned pair: exact
        WarpedPoint A{0, Vec::Zero(1)}, B{4, Vec::Zero(1)};
        REQUIRE(warped_distance(M, M.dilaton, 1, A, B, 8) ==
                Catch::Approx(M.geodesic_distance(0, 4)).epsilon(1e-12));
    }

    SECTION("constant dilaton: single-hop product metric is exact") {
        auto Mc = set_dilaton(M0, Vec(Vec::Constant(M0.n, 0.7)));
        // fc after gauge shift is 0; the physical warp uses the shifted field
        const double c = Mc.dilaton[0];
        const int q = 1, nf = 16;
        WarpedPoint P{0, Vec::Zero(1)};
        WarpedPoint Q{1, Vec::Constant(1, 1.0 / nf)};
        const double got = warped_distance(Mc, Mc.dilaton, q, P, Q, nf);
        const double dg = Mc.geodesic_distance(0, 1);
        const double dT = 1.0 / nf;
        const double expect = std::sqrt(dg * dg + std::exp(-2.0 * c / q) * dT * dT);
        REQUIRE(got == Catch::Approx(expect).epsilon(1e-12));
    }

    SECTION("refined fiber oracle within 2h") {
        WarpedPoint P{3, Vec::Zero(1)};
        WarpedPoint Q{120, Vec::Constant(1, 0.25)};
        const double coarse = warped_distance(M, M.dilaton, 1, P, Q, 8);
        const double fine = warped_distance(M, M.dilaton, 1, P, Q, 16);
        REQUIRE(std::abs(coarse - fine) <= 2.0 * M.max_edge_length);
    }
}

TEST_CASE("eps energy") {
    auto M0 = torus(32);
    auto M = set_dilaton(M0, bump(M0, 0.5));
    const auto pts = cluster(M, 3, 0.08, 3);

    SECTION("constant map with constant dilaton vanishes") {
        const SigmaMap phi = constant_map(M, 32, 3);
        const EpsEnergy E = eps_energy(phi, Vec(Vec::Constant(M.n, 0.4)), 3, pts, 0.1);
        REQUIRE(E.E_eps == Catch::Approx(0.0).margin(1e-14));
    }

    SECTION("approaches the warped energy along the eps schedule") {
        const SigmaMap phi = localized_map(M, 64, 0.5);
        const WarpedEnergy W = warped_energy(phi, M.dilaton, 3, pts);
        std::vector<double> e2, vals, gaps;
        for (double eps : {0.2, 0.141, 0.1, 0.0707, 0.05}) {
            const EpsEnergy E = eps_energy(phi, M.dilaton, 3, pts, eps);
            gaps.push_back(std::abs(E.E_eps - W.E_warped));
            e2.push_back(eps * eps);
            vals.push_back(E.E_eps);
        }
        REQUIRE(gaps.back() < gaps.front() + 1e-9);
        std::vector<double> t3(e2.end() - 3, e2.end()), y3(vals.end() - 3, vals.end());
        const double ext = linear_fit(t3, y3).first;
        REQUIRE(std::abs(ext - W.E_warped) / W.E_warped < 0.05);
    }

    SECTION("split terms converge to (E_base, (F/2) D)") {
        const SigmaMap phi = localized_map(M, 64, 0.5);
        const WarpedEnergy W = warped_energy(phi, M.dilaton, 3, pts);
        const EpsEnergy E = eps_energy(phi, M.dilaton, 3, pts, 0.05);
        REQUIRE(std::abs(E.split_base - W.E_base) / W.E_base < 0.10);
        REQUIRE(std::abs(E.split_dirichlet - 0.5 * W.F_cm * W.dirichlet) /
                    (0.5 * W.F_cm * W.dirichlet) <
                0.15);
    }

    SECTION("stable under stencil refinement") {
        const SigmaMap phi = localized_map(M, 64, 0.5);
        const EpsEnergy a = eps_energy(phi, M.dilaton, 3, pts, 0.1, 32);
        const EpsEnergy b = eps_energy(phi, M.dilaton, 3, pts, 0.1, 64);
        REQUIRE(std::abs(a.E_eps - b.E_eps) / a.E_eps < 0.02);
    }

    SECTION("under-resolved eps is refused") {
        const SigmaMap phi = localized_map(M, 64, 0.5);
        REQUIRE_THROWS_AS(eps_energy(phi, M.dilaton, 3, pts, 0.005), std::invalid_argument);
    }
}

TEST_CASE("deformed energy: constant maps stay at zero") {
    auto M = torus(16);
    auto H = eigendecompose(M, 128);
    const SigmaMap phi = constant_map(M, 8, 5);
    const double h2 = M.max_edge_length * M.max_edge_length;
    const FlowedMetric G = flowed_metric_field(M, H, 8 * h2);
    REQUIRE(harmonic_energy_flowed(phi, G) == 0.0);
}
