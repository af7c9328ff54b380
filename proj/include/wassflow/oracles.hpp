#pragma once

// Reference oracles used by the test and acceptance suites.  Everything here
// is computed by an independent route from the operators it checks: the torus
// kernel through Bessel image sums, the dilaton flow through explicit RK4
// time stepping, and small transport problems through exhaustive enumeration.

#include "wassflow/manifold.hpp"

namespace wassflow::oracle {

// e^{-x} I_n(x) via the integral representation with the trapezoid rule; the
// integrand is analytic and periodic, so convergence is spectral.
inline double scaled_bessel_i(int n, double x, int quad_points = 512) {
    n = std::abs(n);
    double s = 0;
    for (int k = 0; k <= quad_points; ++k) {
        const double th = M_PI * k / quad_points;
        const double w = (k == 0 || k == quad_points) ? 0.5 : 1.0;
        s += w * std::exp(x * (std::cos(th) - 1.0)) * std::cos(n * th);
    }
    return s / quad_points;
}

// Heat kernel of the 1D cycle graph Laplacian (N sites, spacing h) at time t:
// site-probability starting from site 0, q(j) = sum_k e^{-2tau} I_{j+kN}(2tau),
// tau = t/h^2.  This is the image-sum ("wrapped") closed form of exp(t L).
inline double cycle_kernel(int j, int N, double tau) {
    double s = 0;
    for (int k = -6; k <= 6; ++k) {
        const int ord = j + k * N;
        if (std::abs(ord) > 12 * N) continue;
        s += scaled_bessel_i(ord, 2.0 * tau);
    }
    return s;
}

// Weighted heat kernel p_t^(omega)(y, z) on the uniform flat torus (f = 0):
// the probability-normalized kernel is the product of 1D cycle kernels times
// the vertex count.
inline double torus_kernel(const MetricMeasureSpace& M, double t, int y, int z) {
    require(M.spec.kind == ManifoldKind::FlatTorus, "torus_kernel oracle: flat torus only");
    require(M.dilaton.norm() == 0.0, "torus_kernel oracle: f = 0 only");
    const int m = M.grid_m;
    const int dyi = ((y / m - z / m) % m + m) % m;
    const int dyj = ((y % m - z % m) % m + m) % m;
    const double q1 = cycle_kernel(dyi, m, t / (M.hx * M.hx));
    const double q2 = cycle_kernel(dyj, m, t / (M.hy * M.hy));
    return q1 * q2 * m * m;
}

// Explicit RK4 integration of the nonlinear dilaton-flow PDE
//   d/dt f = Δ_ω f - (2/q) |∇f|²
// with the discrete divergence-form Δ_ω and central-difference gradients.
inline Vec dilaton_flow_rk4(const MetricMeasureSpace& M, const Vec& f0, int q, double t_end,
                            double dt) {
    const SpMat S = M.omega_stiffness();
    auto rhs = [&](const Vec& f) {
        Vec lap = -(S * f).array() / M.omega.array();
        Mat g = M.gradient(f);
        for (int v = 0; v < M.n; ++v) lap[v] -= 2.0 / q * g.row(v).squaredNorm();
        return lap;
    };
    Vec f = f0;
    int steps = int(std::ceil(t_end / dt));
    const double h = t_end / steps;
    for (int s = 0; s < steps; ++s) {
        const Vec k1 = rhs(f);
        const Vec k2 = rhs(f + 0.5 * h * k1);
        const Vec k3 = rhs(f + 0.5 * h * k2);
        const Vec k4 = rhs(f + h * k3);
        f += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    return f;
}

// Exhaustive minimum over basic feasible solutions of a small transportation
// polytope (extreme-point enumeration).  Feasible for na + nb <= ~10.
inline double brute_force_w2_cost(const Vec& a, const Vec& b, const Mat& C) {
    const int na = int(a.size()), nb = int(b.size());
    const int arcs = na * nb, basis_size = na + nb - 1;
    require(arcs <= 24, "brute_force_w2_cost: instance too large");

    double best = std::numeric_limits<double>::infinity();
    std::vector<int> pick(basis_size);
    std::function<void(int, int)> rec = [&](int start, int depth) {
        if (depth == basis_size) {
            // solve the flows on this arc set from the marginal equations
            Mat A = Mat::Zero(na + nb, basis_size);
            Vec rhsv(na + nb);
            rhsv << a, b;
            for (int k = 0; k < basis_size; ++k) {
                const int i = pick[k] / nb, j = pick[k] % nb;
                A(i, k) = 1;
                A(na + j, k) = 1;
            }
            // one marginal equation is redundant; drop the last row
            Mat As = A.topRows(na + nb - 1);
            Vec rs = rhsv.head(na + nb - 1);
            Eigen::FullPivLU<Mat> lu(As);
            if (lu.rank() < basis_size) return;
            Vec x = lu.solve(rs);
            if ((As * x - rs).norm() > 1e-10) return;
            if (x.minCoeff() < -1e-12) return;
            double c = 0;
            for (int k = 0; k < basis_size; ++k)
                c += x[k] * C(pick[k] / nb, pick[k] % nb);
            best = std::min(best, c);
            return;
        }
        for (int arc = start; arc < arcs; ++arc) {
            pick[depth] = arc;
            rec(arc + 1, depth + 1);
        }
    };
    rec(0, 0);
    return best;
}

// brute-force Fréchet mean: scan all vertices, then refine locally
inline std::pair<int, double> frechet_scan(const MetricMeasureSpace& M,
                                           const std::vector<int>& points) {
    int best = -1;
    double bF = std::numeric_limits<double>::infinity();
    for (int v = 0; v < M.n; ++v) {
        double F = 0;
        for (int p : points) {
            const double d = M.geodesic_distance(v, p);
            F += 0.5 * d * d;
        }
        if (F < bF) { bF = F; best = v; }
    }
    return {best, bF};
}

} // namespace wassflow::oracle
