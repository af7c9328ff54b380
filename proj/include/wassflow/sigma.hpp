#pragma once

// Dilatonic nonlinear sigma-model energies for maps from a flat 2-torus into
// the catalog manifolds: harmonic energy, the warped-product energy and its
// factorization, the dilatonic action with the conformal-gauge identity, the
// eps-approximate center-of-mass energy, and energies under the flowed metric.

#include "wassflow/otto.hpp"
#include "wassflow/transport.hpp"

#include <queue>

namespace wassflow {

// Periodic m x m grid on the unit square with the flat metric.
struct SurfaceGrid {
    int m = 32;
    double h() const { return 1.0 / m; }
    double cell_area() const { return h() * h(); }
    int idx(int i, int j) const { return ((i % m + m) % m) * m + ((j % m + m) % m); }
};

// Map Σ -> M stored as tangent-chart coordinates around a reference point:
// phi(x) = exp_ref(v(x)).  Images must stay inside an r0-ball of ref for the
// chart (and the center-of-mass operations) to be valid.
struct SigmaMap {
    const MetricMeasureSpace* M = nullptr;
    SurfaceGrid grid;
    Vec3 ref = Vec3::Zero();
    std::vector<Vec3> tang;   // grid.m^2 tangent coordinates

    Vec3 image(int i, int j) const { return M->exp_pt(ref, tang[grid.idx(i, j)]); }

    // bilinear interpolation of the chart coordinates at (x, y) in [0,1)^2
    Vec3 image_xy(double x, double y) const {
        const int m = grid.m;
        const double gx = x * m, gy = y * m;
        const int i0 = int(std::floor(gx)), j0 = int(std::floor(gy));
        const double fx = gx - i0, fy = gy - j0;
        Vec3 v = (1 - fx) * (1 - fy) * tang[grid.idx(i0, j0)] +
                 fx * (1 - fy) * tang[grid.idx(i0 + 1, j0)] +
                 (1 - fx) * fy * tang[grid.idx(i0, j0 + 1)] +
                 fx * fy * tang[grid.idx(i0 + 1, j0 + 1)];
        return M->exp_pt(ref, v);
    }

    void validate_localized() const {
        const double r0 = M->localization_radius();
        for (const Vec3& v : tang)
            require(v.norm() < r0, "sigma map leaves the localization ball");
    }
};

namespace detail {

// scalar field value at an arbitrary catalog point
inline double field_at(const MetricMeasureSpace& M, const Vec& f, const Vec3& p) {
    switch (M.spec.kind) {
        case ManifoldKind::FlatTorus: {
            const int m = M.grid_m;
            const double gx = p[0] / M.hx, gy = p[1] / M.hy;
            const int i0 = int(std::floor(gx)), j0 = int(std::floor(gy));
            const double fx = gx - i0, fy = gy - j0;
            return (1 - fx) * (1 - fy) * f[M.torus_idx(i0, j0)] +
                   fx * (1 - fy) * f[M.torus_idx(i0 + 1, j0)] +
                   (1 - fx) * fy * f[M.torus_idx(i0, j0 + 1)] +
                   fx * fy * f[M.torus_idx(i0 + 1, j0 + 1)];
        }
        default: {
            // first-order chart expansion around the nearest vertex
            const int v = M.nearest_vertex(p);
            const Mat g = M.gradient(f);
            const Vec c = M.frame_components(v, M.log_pt(M.point_of(v), p));
            double val = f[v];
            for (int d = 0; d < M.dim; ++d) val += g(v, d) * c[d];
            return val;
        }
    }
}

} // namespace detail

// ---- harmonic energy -------------------------------------------------------------

// E = 1/2 Σ_cells γ^{αβ} g(D_α φ, D_β φ) dμ_γ with forward geodesic differences.
// conformal_factor (optional) is e^{2v} on Σ; in two dimensions
// γ^{αβ} sqrt(det γ) = δ^{αβ}, so the result is conformally invariant exactly.
inline double harmonic_energy(const SigmaMap& phi, const Vec* conformal_factor = nullptr) {
    const int m = phi.grid.m;
    const double h = phi.grid.h();
    double E = 0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            const Vec3 p = phi.image(i, j);
            const Vec3 dx = phi.M->log_pt(p, phi.image(i + 1, j)) / h;
            const Vec3 dy = phi.M->log_pt(p, phi.image(i, j + 1)) / h;
            // gamma^{ab} sqrt(det gamma) = e^{-2v} e^{+2v} delta^{ab}
            double weight = 1.0;
            if (conformal_factor) {
                const double c = (*conformal_factor)[phi.grid.idx(i, j)];
                weight = (1.0 / c) * c;
            }
            E += 0.5 * weight * (dx.squaredNorm() + dy.squaredNorm()) * phi.grid.cell_area();
        }
    return E;
}

// pullback energy under a flowed metric field (metric looked up at the nearest
// vertex of the image point)
inline double harmonic_energy_flowed(const SigmaMap& phi, const FlowedMetric& G) {
    const int m = phi.grid.m;
    const double h = phi.grid.h();
    double E = 0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            const Vec3 p = phi.image(i, j);
            const int v = phi.M->nearest_vertex(p);
            const Vec cx = phi.M->frame_components(v, phi.M->log_pt(p, phi.image(i + 1, j))) / h;
            const Vec cy = phi.M->frame_components(v, phi.M->log_pt(p, phi.image(i, j + 1))) / h;
            E += 0.5 * ((cx.transpose() * G.g[v] * cx)(0) + (cy.transpose() * G.g[v] * cy)(0)) *
                 phi.grid.cell_area();
        }
    return E;
}

// ---- warped energy -----------------------------------------------------------------

struct WarpedEnergy {
    double E_warped = 0;     // direct pullback through the warped product
    double E_base = 0;       // E[phi, g]
    double dirichlet = 0;    // D[f(phi)/q]
    double F_cm = 0;         // F(phi_cm; q)
    double factorized = 0;   // E_base + (F/2) D
};

// E[Φ_q, h^q] = E[φ,g] + (F/2) D[f(φ)/q].  The direct route contracts the
// chain-rule fiber differentials against the warped metric, so the two routes
// agree to rounding under shared quadrature.
inline WarpedEnergy warped_energy(const SigmaMap& phi, const Vec& f, int q,
                                  const std::vector<int>& points) {
    require(q >= 1, "warped_energy: q >= 1");
    const MetricMeasureSpace& M = *phi.M;
    const int m = phi.grid.m;
    const double h = phi.grid.h();

    WarpedEnergy R;
    const FrechetMean cm = frechet_mean(M, points);
    R.F_cm = cm.F;

    std::vector<double> dk;   // distances d(cm, y_k); fiber coordinates are (d_k/2) e^u
    for (int p : points) dk.push_back(M.geodesic_distance_pt(cm.point, M.point_of(p)));

    // u(x) = f(phi(x))/q on the grid
    Vec u(m * m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            u[phi.grid.idx(i, j)] = detail::field_at(M, f, phi.image(i, j)) / q;

    R.E_base = harmonic_energy(phi);

    double D = 0, fiber = 0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            const int v = phi.grid.idx(i, j);
            const double dux = (u[phi.grid.idx(i + 1, j)] - u[v]) / h;
            const double duy = (u[phi.grid.idx(i, j + 1)] - u[v]) / h;
            D += 0.5 * (dux * dux + duy * duy) * phi.grid.cell_area();
            // direct fiber pullback: D_α Φ^{n+k} = (d_k/2) e^{u} D_α u, metric e^{-2u} δ
            const double eu = std::exp(u[v]), w = std::exp(-2.0 * u[v]);
            double s = 0;
            for (double d : dk) {
                const double cx = 0.5 * d * eu * dux, cy = 0.5 * d * eu * duy;
                s += w * (cx * cx + cy * cy);
            }
            fiber += 0.5 * s * phi.grid.cell_area();
        }
    R.dirichlet = D;
    R.E_warped = R.E_base + fiber;
    R.factorized = R.E_base + 0.5 * R.F_cm * D;
    return R;
}

// ---- dilatonic action ------------------------------------------------------------------

struct DilatonicAction {
    double S = 0;              // (2/a) E + ∫ K_γ f(φ) dμ_γ
    double a = 0;              // F(cm;q)/q
    double E_base = 0;
    double dilaton_term = 0;   // ∫ K_γ f(φ) dμ_γ
    double conformal_rhs = 0;  // (2q/F) E_warped (conformal gauge only)
    double gap = 0;            // |S - conformal_rhs| / |S|
    double gauss_bonnet = 0;   // Σ K_γ dμ_γ (zero exactly for the discrete K_γ)
};

// In the conformal gauge γ = e^{f(φ)/q} δ the Gaussian curvature is
// K_γ = -(1/2q) Δ_γ f(φ); the dilaton term reduces to a flat Dirichlet form, so
// summation by parts makes the identity S = (2q/F) E[Φ_q, h^q] exact discretely.
inline DilatonicAction dilatonic_action(const SigmaMap& phi, const Vec& f, int q,
                                        const std::vector<int>& points, bool conformal) {
    const MetricMeasureSpace& M = *phi.M;
    const int m = phi.grid.m;

    DilatonicAction R;
    const WarpedEnergy W = warped_energy(phi, f, q, points);
    R.a = W.F_cm / q;
    R.E_base = W.E_base;

    if (!conformal) {
        // flat gauge: K_γ = 0
        R.dilaton_term = 0;
        R.S = 2.0 / R.a * R.E_base;
        return R;
    }

    Vec fphi(m * m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            fphi[phi.grid.idx(i, j)] = detail::field_at(M, f, phi.image(i, j));

    // ∫ K_γ f(φ) dμ_γ = (1/2q) Σ_edges (Δf)^2; Gauss-Bonnet sum is a column sum
    double dir = 0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            const int v = phi.grid.idx(i, j);
            const double ex = fphi[phi.grid.idx(i + 1, j)] - fphi[v];
            const double ey = fphi[phi.grid.idx(i, j + 1)] - fphi[v];
            dir += ex * ex + ey * ey;
        }
    R.dilaton_term = dir / (2.0 * q);

    double gb = 0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            const int v = phi.grid.idx(i, j);
            const double lap = fphi[phi.grid.idx(i + 1, j)] + fphi[phi.grid.idx(i - 1, j)] +
                               fphi[phi.grid.idx(i, j + 1)] + fphi[phi.grid.idx(i, j - 1)] -
                               4 * fphi[v];
            gb += -lap / (2.0 * q);
        }
    R.gauss_bonnet = gb;

    R.S = 2.0 / R.a * R.E_base + R.dilaton_term;
    R.conformal_rhs = 2.0 * q / W.F_cm * W.E_warped;
    R.gap = std::abs(R.S - R.conformal_rhs) / std::max(std::abs(R.S), 1e-300);
    return R;
}

// ---- warped distance -------------------------------------------------------------------

struct WarpedPoint {
    int base_vertex = 0;
    Vec fiber;   // coordinates in [0,1)^q
};

// Length-space distance on (M x_f T^q, h) via Dijkstra on the product graph;
// edges allow simultaneous base/fiber moves with the warp factor averaged over
// the edge endpoints.
inline double warped_distance(const MetricMeasureSpace& M, const Vec& f, int q,
                              const WarpedPoint& P, const WarpedPoint& Q,
                              int fiber_samples = 16) {
    require(q >= 1 && P.fiber.size() == q && Q.fiber.size() == q, "warped_distance: bad fiber data");
    const int nf = fiber_samples;
    long nfq = 1;
    for (int k = 0; k < q; ++k) nfq *= nf;
    const long N = long(M.n) * nfq;
    require(N <= 2000000, "warped_distance: product graph too large");

    auto fiber_index = [&](const Vec& xi) {
        long id = 0;
        for (int k = 0; k < q; ++k) {
            int c = int(std::llround(xi[k] * nf)) % nf;
            if (c < 0) c += nf;
            id = id * nf + c;
        }
        return id;
    };
    auto node = [&](int b, long fi) { return long(b) * nfq + fi; };

    const double fiber_h = 1.0 / nf;
    std::vector<double> dist(N, std::numeric_limits<double>::infinity());
    using Item = std::pair<double, long>;
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
    const long src = node(P.base_vertex, fiber_index(P.fiber));
    const long dst = node(Q.base_vertex, fiber_index(Q.fiber));
    dist[src] = 0;
    pq.push({0.0, src});

    // fiber neighbor offsets: -1, 0, +1 per fiber axis
    std::vector<std::vector<int>> fiber_moves;
    {
        std::vector<int> cur(q, -1);
        while (true) {
            fiber_moves.push_back(cur);
            int k = q - 1;
            while (k >= 0 && cur[k] == 1) cur[k--] = -1;
            if (k < 0) break;
            ++cur[k];
        }
    }

    while (!pq.empty()) {
        const auto [d0, u] = pq.top();
        pq.pop();
        if (d0 > dist[u]) continue;
        if (u == dst) return d0;
        const int b = int(u / nfq);
        const long fi = u % nfq;
        std::vector<int> fc(q);
        long tmp = fi;
        for (int k = q - 1; k >= 0; --k) { fc[k] = int(tmp % nf); tmp /= nf; }

        std::vector<int> bases = M.neighbors[b];
        bases.push_back(b);
        for (int b2 : bases) {
            const double dg = (b2 == b) ? 0.0 : M.geodesic_distance(b, b2);
            const double warp = std::exp(-(f[b] + f[b2]) / q);   // e^{-2 f_avg / q}
            for (const auto& mv : fiber_moves) {
                long fi2 = 0;
                double dT2 = 0;
                bool self = (b2 == b);
                for (int k = 0; k < q; ++k) {
                    int c = (fc[k] + mv[k] + nf) % nf;
                    fi2 = fi2 * nf + c;
                    if (mv[k] != 0) { dT2 += fiber_h * fiber_h; self = false; }
                }
                if (self) continue;
                const double wlen = std::sqrt(dg * dg + warp * dT2);
                const long v2 = node(b2, fi2);
                if (dist[u] + wlen < dist[v2] - 1e-18) {
                    dist[v2] = dist[u] + wlen;
                    pq.push({dist[v2], v2});
                }
            }
        }
    }
    return dist[dst];
}

// ---- eps-approximate energy -------------------------------------------------------------

struct EpsEnergy {
    double E_eps = 0;
    double split_base = 0;       // base-manifold part
    double split_dirichlet = 0;  // fiber (Dirichlet) part
};

// E_ε = (2/ε²) ∫ G[Φ(x), D(x,ε)] dμ_γ with G the disk mean of d_h² over a
// deterministic 32-point sunflower stencil; the normalization matches the
// second moment of the unit disk so E_ε -> E[Φ_q, h^q] as ε -> 0.
inline EpsEnergy eps_energy(const SigmaMap& phi, const Vec& f, int q,
                            const std::vector<int>& points, double eps, int n_samples = 32) {
    const MetricMeasureSpace& M = *phi.M;
    const int m = phi.grid.m;
    require(eps > phi.grid.h(), "eps_energy: eps below the surface grid resolution");

    const FrechetMean cm = frechet_mean(M, points);
    double sum_dk2 = 0;   // sum of squared distances d(cm, y_k)^2
    for (int p : points) {
        const double d = M.geodesic_distance_pt(cm.point, M.point_of(p));
        sum_dk2 += d * d;
    }

    // sunflower stencil on the unit disk
    const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<std::pair<double, double>> stencil(n_samples);
    for (int s = 0; s < n_samples; ++s) {
        const double r = std::sqrt((s + 0.5) / n_samples);
        const double th = 2.0 * M_PI * s / golden;
        stencil[s] = {r * std::cos(th), r * std::sin(th)};
    }

    EpsEnergy R;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            const double x = double(i) / m, y = double(j) / m;
            const Vec3 p0 = phi.image(i, j);
            const double u0 = detail::field_at(M, f, p0) / q;
            double Gb = 0, Gf = 0;
            for (const auto& [sx, sy] : stencil) {
                const Vec3 p1 = phi.image_xy(x + eps * sx, y + eps * sy);
                const double u1 = detail::field_at(M, f, p1) / q;
                const double dg = M.geodesic_distance_pt(p0, p1);
                const double df = std::exp(u0) - std::exp(u1);
                Gb += dg * dg;
                Gf += 0.25 * sum_dk2 * std::exp(-2 * u0) * df * df;
            }
            Gb /= n_samples;
            Gf /= n_samples;
            R.split_base += 2.0 / (eps * eps) * Gb * phi.grid.cell_area();
            R.split_dirichlet += 2.0 / (eps * eps) * Gf * phi.grid.cell_area();
        }
    R.E_eps = R.split_base + R.split_dirichlet;
    return R;
}

// ---- deformed energy -----------------------------------------------------------------------

struct DeformedEnergyTrace {
    std::vector<double> t;
    std::vector<double> E_t;        // pullback energies E[φ, g_t^(ω)]
    double extrapolated = 0;        // geometric-tail extrapolation to t = 0
    double wasserstein_speed_E = 0; // independent estimate at the last t
    double pullback_E_at_last = 0;
};

inline DeformedEnergyTrace deformed_energy_flow(const SigmaMap& phi,
                                                const SpectralHeatOperator& H,
                                                const std::vector<double>& t_schedule,
                                                int speed_subsample = 8) {
    const MetricMeasureSpace& M = *phi.M;
    DeformedEnergyTrace R;
    for (double t : t_schedule) {
        const FlowedMetric G = flowed_metric_field(M, H, t);
        R.t.push_back(t);
        R.E_t.push_back(harmonic_energy_flowed(phi, G));
    }
    const size_t n = R.t.size();
    if (n >= 3)
        R.extrapolated = geometric_tail_extrapolate(R.t[n - 1], R.E_t[n - 1], R.t[n - 2],
                                                    R.E_t[n - 2], R.t[n - 3], R.E_t[n - 3]);
    else
        R.extrapolated = R.E_t.back();

    // Wasserstein-speed estimate at the smallest t on a coarse subsample:
    // E ≈ 1/2 Σ_α ∫ |dν/dx^α|² dμ_γ with FD W2 speeds along coordinate curves
    const double t_last = R.t.back();
    const int s = speed_subsample, m = phi.grid.m;
    const double step = phi.grid.h();
    double E = 0;
    for (int a = 0; a < s; ++a)
        for (int b = 0; b < s; ++b) {
            const int i = a * (m / s), j = b * (m / s);
            const int v0 = M.nearest_vertex(phi.image(i, j));
            const int vx = M.nearest_vertex(phi.image(i + 1, j));
            const int vy = M.nearest_vertex(phi.image(i, j + 1));
            const DiscreteMeasure m0 = heat_kernel_measure(M, H, t_last, v0);
            double sp2 = 0;
            for (int vn : {vx, vy}) {
                if (vn == v0) continue;
                const DiscreteMeasure m1 = heat_kernel_measure(M, H, t_last, vn);
                double c2;
                if (m0.support.size() + m1.support.size() <= 2000)
                    c2 = w2_exact(M, m0, m1).plan.cost;
                else
                    c2 = w2_entropic(M, m0, m1, 5e-3).debiased_cost;
                sp2 += c2 / (step * step);
            }
            E += 0.5 * sp2 / double(s * s);
        }
    R.wasserstein_speed_E = E;
    R.pullback_E_at_last = R.E_t.back();
    return R;
}

} // namespace wassflow
