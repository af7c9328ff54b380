#pragma once

// The heat-kernel embedding machinery: Kantorovich potentials for tangent
// perturbations of the embedded measures, the scale-dependent metric g_t^(ω),
// its induced curvature, the flow beta function, monotonicity quantities and
// the F functionals.
//
// All integrals of the form  ∫ (...) p_t dω  are vertex quadratures with
// weights p_t(y,z) ω(y).  The elliptic operators are assembled in divergence
// form from the same edge data, so discrete integration-by-parts identities
// hold exactly and residual checks measure only Hessian/curvature
// discretization error.

#include "wassflow/heat.hpp"

#include <Eigen/SparseLU>

namespace wassflow {

struct KantorovichPotential {
    double t = 0;
    int z = -1;
    Vec direction;      // frame components of U at z
    Vec psi;            // zero dω-mean potential
    double residual = 0;  // relative residual of the discrete PDE
    int iterations = 0;   // direct solver: 0
};

struct FlowedMetric {
    double t = 0;
    std::vector<Mat> g;   // per-vertex dim x dim, frame coordinates
    Vec warp;             // optional: e^{-2 f_t^(ω)/q} per vertex (size 0 if absent)
    int q = 0;

    void check_positive(int dim) const {
        for (size_t v = 0; v < g.size(); ++v) {
            const Mat& m = g[v];
            check_numerics((m - m.transpose()).norm() <= 1e-14 * std::max(1.0, m.norm()),
                           "flowed metric not symmetric at vertex " + std::to_string(v));
            double mineig;
            if (dim == 1) mineig = m(0, 0);
            else {
                Eigen::SelfAdjointEigenSolver<Mat> es(m);
                mineig = es.eigenvalues().minCoeff();
            }
            check_numerics(mineig > 0, "flowed metric not positive-definite at vertex " +
                                           std::to_string(v) + " (min eig " + fmt17(mineig) + ")");
        }
    }
};

// Elliptic solver context for a fixed (t, z): holds the weighted stiffness of
// div_ω(p_t ∇ ·) and its factorization, reused across right-hand sides.
class HeatWeightedLaplacian {
public:
    const MetricMeasureSpace* M = nullptr;
    double t = 0;
    int z = -1;
    Vec p;        // kernel p_t(., z)
    Vec pw;       // quadrature weights p ω
    SpMat A;      // stiffness: u^T A u = ∫ |∇u|^2 p dω

    HeatWeightedLaplacian(const MetricMeasureSpace& M_, const SpectralHeatOperator& H,
                          double t_, int z_)
        : M(&M_), t(t_), z(z_) {
        p = H.kernel(t, z);
        pw = p.array() * M->omega.array();
        // clamp far-field kernel values so the conductance graph stays connected
        const double floor_ = 1e-13 * p.maxCoeff();
        Vec dens = p.cwiseMax(floor_).array() * M->density.array();
        A = M->weighted_stiffness(dens);
        factorize();
    }

    // action of Δ_{p_t dω} on a field (divergence form)
    Vec apply(const Vec& u) const { return -(A * u).array() / pw.array(); }

    // self-adjointness check data: <Δu, v>_{p dω} = -u^T A v
    double dirichlet(const Vec& u, const Vec& v) const { return u.dot(A * v); }

    // Solve A ψ = r with r ⊥ 1, gauge ∫ψ dω = 0.
    Vec solve(const Vec& r) const {
        Vec rhs(M->n + 1);
        rhs.head(M->n) = r;
        rhs[M->n] = 0;
        Vec sol = lu_.solve(rhs);
        check_numerics(lu_.info() == Eigen::Success, "potential solve failed");
        Vec psi = sol.head(M->n);
        psi.array() -= (psi.array() * M->omega.array()).sum();
        return psi;
    }

private:
    Eigen::SparseLU<SpMat> lu_;

    void factorize() {
        // bordered (KKT) system pins the constant nullspace: [A c q; c q^T 0]
        const int n = M->n;
        const double c = A.diagonal().mean();
        std::vector<Triplet> trip;
        trip.reserve(A.nonZeros() + 2 * n);
        for (int k = 0; k < A.outerSize(); ++k)
            for (SpMat::InnerIterator it(A, k); it; ++it)
                trip.emplace_back(int(it.row()), int(it.col()), it.value());
        for (int i = 0; i < n; ++i) {
            trip.emplace_back(i, n, c * pw[i]);
            trip.emplace_back(n, i, c * pw[i]);
        }
        SpMat K(n + 1, n + 1);
        K.setFromTriplets(trip.begin(), trip.end());
        lu_.compute(K);
        check_numerics(lu_.info() == Eigen::Success, "HeatWeightedLaplacian: factorization failed");
    }
};

// ---- potential solve ---------------------------------------------------------

// div_ω(p_t ∇ψ) = -U·∇^(z) p_t, with ∫ψ dω = 0.
inline KantorovichPotential solve_potential(const MetricMeasureSpace& M,
                                            const SpectralHeatOperator& H,
                                            const HeatWeightedLaplacian& L, double t, int z,
                                            const Vec& U) {
    require(U.size() == M.dim, "solve_potential: direction dimension mismatch");
    require(U.allFinite(), "solve_potential: non-finite direction");

    KantorovichPotential P;
    P.t = t;
    P.z = z;
    P.direction = U;
    if (U.norm() == 0.0) {
        P.psi = Vec::Zero(M.n);
        return P;
    }

    const Mat gz = H.source_gradient(t, z);   // n x dim
    Vec r = (gz * U).array() * M.omega.array();
    // Fredholm: the rhs must have zero p_t dω-mean; project the roundoff part.
    r.array() -= (r.sum() / L.pw.sum()) * L.pw.array();

    P.psi = L.solve(r);
    const Vec res = L.A * P.psi - r;
    P.residual = res.norm() / std::max(r.norm(), 1e-300);
    check_numerics(P.residual <= 1e-9, "potential solve residual " + fmt17(P.residual));
    return P;
}

inline KantorovichPotential solve_potential(const MetricMeasureSpace& M,
                                            const SpectralHeatOperator& H, double t, int z,
                                            const Vec& U) {
    HeatWeightedLaplacian L(M, H, t, z);
    return solve_potential(M, H, L, t, z, U);
}

namespace detail {

// full-field 4th-order gradient on the flat torus; catalog default elsewhere
inline Mat gradient_high_order(const MetricMeasureSpace& M, const Vec& u) {
    if (M.spec.kind != ManifoldKind::FlatTorus) return M.gradient(u);
    Mat g(M.n, 2);
    const int m = M.grid_m;
    auto at = [&](int i, int j) { return u[M.torus_idx(i, j)]; };
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            const int v = M.torus_idx(i, j);
            g(v, 0) = (-at(i + 2, j) + 8 * at(i + 1, j) - 8 * at(i - 1, j) + at(i - 2, j)) /
                      (12 * M.hx);
            g(v, 1) = (-at(i, j + 2) + 8 * at(i, j + 1) - 8 * at(i, j - 1) + at(i, j - 2)) /
                      (12 * M.hy);
        }
    return g;
}

} // namespace detail

// One defect-correction sweep against a 4th-order strong-form discretization of
// div(p ρ ∇ψ).  The base solve is second order; its error field is smooth on
// the kernel scale and dominates |Hess ψ|^2 quadratures at small t, which is
// exactly what the correction removes.  Flat-torus only; other kinds fall back
// to the plain solve.
inline KantorovichPotential solve_potential_refined(const MetricMeasureSpace& M,
                                                    const SpectralHeatOperator& H,
                                                    const HeatWeightedLaplacian& L, double t,
                                                    int z, const Vec& U) {
    KantorovichPotential P = solve_potential(M, H, L, t, z, U);
    if (M.spec.kind != ManifoldKind::FlatTorus || U.norm() == 0) return P;

    const int m = M.grid_m;
    const double floor_ = 1e-13 * L.p.maxCoeff();
    Vec Pfield = L.p.cwiseMax(floor_).array() * M.density.array();

    const Mat gP = detail::gradient_high_order(M, Pfield);
    const Mat gpsi = detail::gradient_high_order(M, P.psi);
    auto at = [&](const Vec& u, int i, int j) { return u[M.torus_idx(i, j)]; };

    Vec strong(M.n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            const int v = M.torus_idx(i, j);
            const double lap4 =
                (-at(P.psi, i + 2, j) + 16 * at(P.psi, i + 1, j) - 30 * at(P.psi, i, j) +
                 16 * at(P.psi, i - 1, j) - at(P.psi, i - 2, j)) / (12 * M.hx * M.hx) +
                (-at(P.psi, i, j + 2) + 16 * at(P.psi, i, j + 1) - 30 * at(P.psi, i, j) +
                 16 * at(P.psi, i, j - 1) - at(P.psi, i, j - 2)) / (12 * M.hy * M.hy);
            strong[v] = Pfield[v] * lap4 + gP.row(v).dot(gpsi.row(v));
        }

    const Mat gz = H.source_gradient(t, z);
    Vec r = (gz * U).array() * M.omega.array();
    r.array() -= (r.sum() / L.pw.sum()) * L.pw.array();

    Vec defect = (-M.hx * M.hy) * strong - r;
    defect.array() -= (defect.sum() / L.pw.sum()) * L.pw.array();

    const Vec corr = L.solve(defect);
    P.psi -= corr;
    P.iterations = 1;
    return P;
}

// ---- flowed metric -----------------------------------------------------------

// Frame-basis potentials at (t, z); the building block for everything below.
inline std::vector<KantorovichPotential> frame_potentials(const MetricMeasureSpace& M,
                                                          const SpectralHeatOperator& H,
                                                          const HeatWeightedLaplacian& L,
                                                          double t, int z) {
    std::vector<KantorovichPotential> out;
    out.reserve(M.dim);
    for (int d = 0; d < M.dim; ++d) {
        Vec U = Vec::Zero(M.dim);
        U[d] = 1.0;
        out.push_back(solve_potential(M, H, L, t, z, U));
    }
    return out;
}

// g_t^(ω)(U, W) = ∫ g(∇ψ_U, ∇ψ_W) p_t dω, evaluated on the frame basis.
inline Mat flowed_metric(const MetricMeasureSpace& M, const SpectralHeatOperator& H, double t,
                         int z) {
    HeatWeightedLaplacian L(M, H, t, z);
    auto pots = frame_potentials(M, H, L, t, z);
    Mat G(M.dim, M.dim);
    for (int a = 0; a < M.dim; ++a)
        for (int b = a; b < M.dim; ++b) {
            G(a, b) = L.dirichlet(pots[a].psi, pots[b].psi);
            G(b, a) = G(a, b);
        }
    return G;
}

// g_t(U, U) from a single potential solve
inline double flowed_metric_quadratic(const MetricMeasureSpace& M, const SpectralHeatOperator& H,
                                      double t, int z, const Vec& U) {
    HeatWeightedLaplacian L(M, H, t, z);
    const KantorovichPotential P = solve_potential(M, H, L, t, z, U);
    return L.dirichlet(P.psi, P.psi);
}

inline FlowedMetric flowed_metric_field(const MetricMeasureSpace& M,
                                        const SpectralHeatOperator& H, double t,
                                        int warp_q = 0) {
    FlowedMetric F;
    F.t = t;
    F.g.resize(M.n);
    for (int z = 0; z < M.n; ++z) F.g[z] = flowed_metric(M, H, t, z);
    F.check_positive(M.dim);
    if (warp_q > 0) {
        F.q = warp_q;
        const Vec ft = dilaton_heat_flow(H, M.dilaton, warp_q, t);
        F.warp = (ft.array() * (-2.0 / warp_q)).exp();
    }
    return F;
}

// ---- induced curvature --------------------------------------------------------

// R̃ic^(t)(U, W)(z) = ∫ Ric(∇ψ_U, ∇ψ_W) p_t dω.
inline double induced_ricci(const MetricMeasureSpace& M, const SpectralHeatOperator& H, double t,
                            int z, const Vec& U, const Vec& W) {
    if (U.norm() == 0 || W.norm() == 0) return 0.0;
    if (M.spec.kind != ManifoldKind::RoundSphere) return 0.0;  // flat catalog members
    HeatWeightedLaplacian L(M, H, t, z);
    const Vec psiU = solve_potential(M, H, L, t, z, U).psi;
    const Vec psiW = solve_potential(M, H, L, t, z, W).psi;
    const Mat gU = detail::gradient_high_order(M, psiU), gW = detail::gradient_high_order(M, psiW);
    const double K = M.sectional_curvature();
    double s = 0;
    for (int y = 0; y < M.n; ++y)
        s += K * (gU(y, 0) * gW(y, 0) + gU(y, 1) * gW(y, 1)) * L.pw[y];
    return s;
}

// <R̃m(U,V)W, Z>(z) = ∫ g(Rm(∇ψ_U, ∇ψ_V)∇ψ_W, ∇ψ_Z) p_t dω with the constant
// curvature Rm(u,v)w = K (g(v,w) u - g(u,w) v).
inline double induced_riemann(const MetricMeasureSpace& M, const SpectralHeatOperator& H,
                              double t, int z, const Vec& U, const Vec& V, const Vec& W,
                              const Vec& Z) {
    if (M.spec.kind != ManifoldKind::RoundSphere) return 0.0;
    HeatWeightedLaplacian L(M, H, t, z);
    auto solve1 = [&](const Vec& D) { return solve_potential(M, H, L, t, z, D).psi; };
    const Mat gU = M.gradient(solve1(U)), gV = M.gradient(solve1(V)), gW = M.gradient(solve1(W)),
              gZ = M.gradient(solve1(Z));
    const double K = M.sectional_curvature();
    double s = 0;
    for (int y = 0; y < M.n; ++y) {
        const double vw = gV.row(y).dot(gW.row(y)), uz = gU.row(y).dot(gZ.row(y));
        const double uw = gU.row(y).dot(gW.row(y)), vz = gV.row(y).dot(gZ.row(y));
        s += K * (vw * uz - uw * vz) * L.pw[y];
    }
    return s;
}

// ---- beta function --------------------------------------------------------------

struct BetaTerms {
    double ricci_term = 0;    // -2 ∫ Ric(∇ψ_U, ∇ψ_W) p dω
    double hess_f_term = 0;   // -2 ∫ ∇ψ_U · Hess f · ∇ψ_W  p dω
    double hess2_term = 0;    // -2 ∫ Hess ψ_U · Hess ψ_W  p dω
    double total = 0;
};

namespace detail {

// 4th-order Hessian on the flat torus; quadratic fit on the sphere; 1D second
// difference on the circle.  High order matters: the |Hess ψ|^2 quadratures
// are the leading discretization error of the flow integrands.
inline BilinearField hessian_high_order(const MetricMeasureSpace& M, const Vec& u) {
    if (M.spec.kind != ManifoldKind::FlatTorus) return M.hessian(u);
    BilinearField H;
    H.dim = 2;
    H.comp.resize(M.n, 3);
    const int m = M.grid_m;
    const double hx = M.hx, hy = M.hy;
    auto at = [&](int i, int j) { return u[M.torus_idx(i, j)]; };
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            const int v = M.torus_idx(i, j);
            H.comp(v, 0) = (-at(i + 2, j) + 16 * at(i + 1, j) - 30 * at(i, j) +
                            16 * at(i - 1, j) - at(i - 2, j)) / (12 * hx * hx);
            H.comp(v, 2) = (-at(i, j + 2) + 16 * at(i, j + 1) - 30 * at(i, j) +
                            16 * at(i, j - 1) - at(i, j - 2)) / (12 * hy * hy);
            double s = 0;  // 4th-order cross derivative: compose 4th-order first differences
            const int oi[4] = {-2, -1, 1, 2};
            const double ci[4] = {1.0 / 12, -8.0 / 12, 8.0 / 12, -1.0 / 12};
            for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b) s += ci[a] * ci[b] * at(i + oi[a], j + oi[b]);
            H.comp(v, 1) = s / (hx * hy);
        }
    return H;
}

inline double dot_bilinear(const BilinearField& A, int v, const BilinearField& B) {
    if (A.dim == 1) return A.comp(v, 0) * B.comp(v, 0);
    return A.comp(v, 0) * B.comp(v, 0) + 2 * A.comp(v, 1) * B.comp(v, 1) +
           A.comp(v, 2) * B.comp(v, 2);
}

inline double quad_form(const BilinearField& A, int v, const Eigen::RowVectorXd& g1,
                        const Eigen::RowVectorXd& g2) {
    if (A.dim == 1) return A.comp(v, 0) * g1[0] * g2[0];
    return g1[0] * A.comp(v, 0) * g2[0] + A.comp(v, 1) * (g1[0] * g2[1] + g1[1] * g2[0]) +
           g1[1] * A.comp(v, 2) * g2[1];
}

} // namespace detail

// d/dt g_t(U, W) = -2 R̃ic - 2 ∫ ∇ψ_U·Hess f·∇ψ_W p dω - 2 ∫ Hess ψ_U · Hess ψ_W p dω
inline BetaTerms beta_integral(const MetricMeasureSpace& M, const SpectralHeatOperator& H,
                               const HeatWeightedLaplacian& L, double t, int z, const Vec& U,
                               const Vec& W) {
    const Vec psiU = solve_potential(M, H, L, t, z, U).psi;
    const Vec psiW = solve_potential(M, H, L, t, z, W).psi;
    const Mat gU = detail::gradient_high_order(M, psiU), gW = detail::gradient_high_order(M, psiW);
    const BilinearField hU = detail::hessian_high_order(M, psiU);
    const BilinearField hW = detail::hessian_high_order(M, psiW);
    const BilinearField hF = detail::hessian_high_order(M, M.dilaton);
    const Mat ric = M.ricci_frame();

    BetaTerms B;
    for (int y = 0; y < M.n; ++y) {
        const double w = L.pw[y];
        B.ricci_term += (gU.row(y) * ric * gW.row(y).transpose())(0) * w;
        B.hess_f_term += detail::quad_form(hF, y, gU.row(y), gW.row(y)) * w;
        B.hess2_term += detail::dot_bilinear(hU, y, hW) * w;
    }
    B.ricci_term *= -2;
    B.hess_f_term *= -2;
    B.hess2_term *= -2;
    B.total = B.ricci_term + B.hess_f_term + B.hess2_term;
    return B;
}

inline BetaTerms beta_integral(const MetricMeasureSpace& M, const SpectralHeatOperator& H,
                               double t, int z, const Vec& U, const Vec& W) {
    HeatWeightedLaplacian L(M, H, t, z);
    return beta_integral(M, H, L, t, z, U, W);
}

// ---- Bochner identity -----------------------------------------------------------

struct BochnerReport {
    double lhs = 0;   // ∫ (Δ_{p dω} ψ)^2 p dω
    double rhs = 0;   // ∫ [|Hess ψ|^2 + (Ric + Hess(f - ln p))(∇ψ,∇ψ)] p dω
    double relative_residual = 0;
};

namespace detail {

// Hess ln p via termwise spectral differentiation: Hess p and ∇p are formed by
// linear stencils applied to the kernel field, then combined pointwise.
// Differencing ln p directly would cancel catastrophically at small t.
inline void log_kernel_derivatives(const MetricMeasureSpace& M, const Vec& p, Mat& grad_ln,
                                   BilinearField& hess_ln) {
    const Mat gp = gradient_high_order(M, p);
    const BilinearField hp = hessian_high_order(M, p);
    grad_ln.resize(M.n, M.dim);
    hess_ln.dim = M.dim;
    hess_ln.comp.resize(M.n, M.dim == 1 ? 1 : 3);
    for (int v = 0; v < M.n; ++v) {
        const double pv = p[v];
        for (int d = 0; d < M.dim; ++d) grad_ln(v, d) = gp(v, d) / pv;
        if (M.dim == 1) {
            hess_ln.comp(v, 0) = hp.comp(v, 0) / pv - gp(v, 0) * gp(v, 0) / (pv * pv);
        } else {
            hess_ln.comp(v, 0) = hp.comp(v, 0) / pv - gp(v, 0) * gp(v, 0) / (pv * pv);
            hess_ln.comp(v, 1) = hp.comp(v, 1) / pv - gp(v, 0) * gp(v, 1) / (pv * pv);
            hess_ln.comp(v, 2) = hp.comp(v, 2) / pv - gp(v, 1) * gp(v, 1) / (pv * pv);
        }
    }
}

} // namespace detail

inline BochnerReport bochner_check(const MetricMeasureSpace& M, const SpectralHeatOperator& H,
                                   double t, int z, const Vec& U) {
    HeatWeightedLaplacian L(M, H, t, z);
    BochnerReport R;
    if (U.norm() == 0) return R;
    const Vec psi = solve_potential(M, H, L, t, z, U).psi;

    const Vec chi = (L.A * psi).array() / L.pw.array();  // Δ_{p dω} ψ up to sign convention
    R.lhs = (chi.array().square() * L.pw.array()).sum();

    const Mat g = detail::gradient_high_order(M, psi);
    const BilinearField hps = detail::hessian_high_order(M, psi);
    const BilinearField hF = detail::hessian_high_order(M, M.dilaton);
    Mat grad_ln;
    BilinearField hLn;
    detail::log_kernel_derivatives(M, L.p, grad_ln, hLn);
    const Mat ric = M.ricci_frame();

    for (int y = 0; y < M.n; ++y) {
        const double w = L.pw[y];
        double s = detail::dot_bilinear(hps, y, hps);
        s += (g.row(y) * ric * g.row(y).transpose())(0);
        s += detail::quad_form(hF, y, g.row(y), g.row(y));
        s -= detail::quad_form(hLn, y, g.row(y), g.row(y));
        R.rhs += s * w;
    }
    R.relative_residual = std::abs(R.lhs - R.rhs) / std::max(std::abs(R.lhs), 1e-300);
    return R;
}

// ---- monotonicity -----------------------------------------------------------------

struct MonotonicityReport {
    double A = 0;             // ∫ (Δ_{p dω} ψ)^2 p dω
    double dA_dt_formula = 0; // -2 ∫ |∇ Δ_{p dω} ψ|^2 p dω (exact discrete identity)
    double dA_dt_fd = 0;      // centered finite difference
};

namespace detail {

// A(z,t) needs no elliptic solve: along solutions Δ_{p dω} ψ = -U·∇_z ln p_t,
// so A = ∫ (U·∇_z ln p_t)^2 p_t dω.
inline Vec monotonicity_chi(const MetricMeasureSpace& M, const SpectralHeatOperator& H, double t,
                            int z, const Vec& U, Vec& pw_out, Vec& p_out) {
    const Vec p = H.kernel(t, z);
    const Mat gz = H.source_gradient(t, z);
    Vec r = (gz * U).array() * M.omega.array();
    Vec pw = p.array() * M.omega.array();
    r.array() -= (r.sum() / pw.sum()) * pw.array();
    pw_out = pw;
    p_out = p;
    return Vec(r.array() / pw.array());
}

} // namespace detail

inline MonotonicityReport monotonicity(const MetricMeasureSpace& M,
                                       const SpectralHeatOperator& H, double t, int z,
                                       const Vec& U) {
    MonotonicityReport R;
    if (U.norm() == 0) return R;

    auto A_of = [&](double tt) {
        Vec pw, p;
        const Vec chi = detail::monotonicity_chi(M, H, tt, z, U, pw, p);
        return (chi.array().square() * pw.array()).sum();
    };
    R.A = A_of(t);

    Vec pw, p;
    const Vec chi = detail::monotonicity_chi(M, H, t, z, U, pw, p);
    double s = 0;
    for (const Edge& e : M.edges) {
        const double a = e.stiffness * 0.5 * (M.density[e.a] + M.density[e.b]);
        const double d = chi[e.a] - chi[e.b];
        s += a * (p[e.a] + p[e.b]) * d * d;
    }
    R.dA_dt_formula = -s;

    const double dt = 0.05 * t;
    R.dA_dt_fd = (A_of(t + dt) - A_of(t - dt)) / (2 * dt);
    return R;
}

// ---- X field and Lie derivative -----------------------------------------------------

struct XFieldReport {
    Vec X;              // frame components of X_{(t,z)}
    Mat lie;            // L_X g_t on the frame basis
    Mat gram;           // g_t on the frame basis
};

inline XFieldReport x_field_and_lie(const MetricMeasureSpace& M, const SpectralHeatOperator& H,
                                    double t, int z) {
    HeatWeightedLaplacian L(M, H, t, z);
    auto pots = frame_potentials(M, H, L, t, z);

    XFieldReport R;
    R.gram.resize(M.dim, M.dim);
    std::vector<Mat> grads(M.dim);
    for (int a = 0; a < M.dim; ++a) grads[a] = detail::gradient_high_order(M, pots[a].psi);
    for (int a = 0; a < M.dim; ++a)
        for (int b = 0; b < M.dim; ++b) R.gram(a, b) = L.dirichlet(pots[a].psi, pots[b].psi);

    Mat grad_ln;
    BilinearField hLn;
    detail::log_kernel_derivatives(M, L.p, grad_ln, hLn);

    // g_t(X, E_a) = ∫ (∇ ln p · ∇ψ_a) p dω
    Vec rhs(M.dim);
    for (int a = 0; a < M.dim; ++a) {
        double s = 0;
        for (int y = 0; y < M.n; ++y) s += grad_ln.row(y).dot(grads[a].row(y)) * L.pw[y];
        rhs[a] = s;
    }
    Eigen::FullPivLU<Mat> lu(R.gram);
    check_numerics(lu.isInvertible(), "x_field: g_t Gram matrix singular");
    R.X = lu.solve(rhs);

    // L_X g_t(E_a, E_b) = 2 ∫ ∇ψ_a · Hess ln p · ∇ψ_b  p dω
    R.lie.resize(M.dim, M.dim);
    for (int a = 0; a < M.dim; ++a)
        for (int b = a; b < M.dim; ++b) {
            double s = 0;
            for (int y = 0; y < M.n; ++y)
                s += detail::quad_form(hLn, y, grads[a].row(y), grads[b].row(y)) * L.pw[y];
            R.lie(a, b) = 2 * s;
            R.lie(b, a) = R.lie(a, b);
        }
    return R;
}

// ---- F functionals -------------------------------------------------------------------

struct FFunctionals {
    double F = 0;          // ∫ dω(z) Σ_a A_a(z)
    double F_hat = 0;      // Σ_a ∫dω(z) ∫ [|Hess ψ_a|^2 + (Ric + Hess f)(∇ψ_a,∇ψ_a)] p dω
    double perelman_F = 0; // ∫ (R + |∇f|^2) dω  (the t->0 limit of F_hat)
    int z_samples = 0;     // outer-quadrature subsampling level
};

// The outer integral over the heat source z costs dim elliptic solves per
// vertex; above 1200 vertices a stratified subsample of z is used and the
// subsampling level is part of the report.
inline FFunctionals F_functionals(const MetricMeasureSpace& M, const SpectralHeatOperator& H,
                                  double t, int max_z_samples = 1200, bool refined = true) {
    FFunctionals R;

    std::vector<int> zs;
    if (M.n <= max_z_samples) {
        zs.resize(M.n);
        std::iota(zs.begin(), zs.end(), 0);
    } else {
        const int stride = (M.n + max_z_samples - 1) / max_z_samples;
        for (int z = 0; z < M.n; z += stride) zs.push_back(z);
    }
    R.z_samples = int(zs.size());

    const BilinearField hF = detail::hessian_high_order(M, M.dilaton);
    const Mat ric = M.ricci_frame();

    double wsum = 0, F = 0, Fh = 0;
    for (int z : zs) {
        HeatWeightedLaplacian L(M, H, t, z);
        std::vector<KantorovichPotential> pots;
        for (int a = 0; a < M.dim; ++a) {
            Vec Ua = Vec::Zero(M.dim);
            Ua[a] = 1.0;
            pots.push_back(refined ? solve_potential_refined(M, H, L, t, z, Ua)
                                   : solve_potential(M, H, L, t, z, Ua));
        }
        double fa = 0, fha = 0;
        for (int a = 0; a < M.dim; ++a) {
            Vec pw, p;
            Vec U = Vec::Zero(M.dim);
            U[a] = 1;
            const Vec chi = detail::monotonicity_chi(M, H, t, z, U, pw, p);
            fa += (chi.array().square() * pw.array()).sum();

            const Mat g = detail::gradient_high_order(M, pots[a].psi);
            const BilinearField hps = detail::hessian_high_order(M, pots[a].psi);
            for (int y = 0; y < M.n; ++y) {
                double s = detail::dot_bilinear(hps, y, hps);
                s += (g.row(y) * ric * g.row(y).transpose())(0);
                s += detail::quad_form(hF, y, g.row(y), g.row(y));
                fha += s * L.pw[y];
            }
        }
        F += fa * M.omega[z];
        Fh += fha * M.omega[z];
        wsum += M.omega[z];
    }
    R.F = F / wsum;
    R.F_hat = Fh / wsum;

    const Mat gf = detail::gradient_high_order(M, M.dilaton);
    const double Rscal = M.spec.kind == ManifoldKind::RoundSphere
                             ? 2.0 / (M.spec.sphere_radius * M.spec.sphere_radius)
                             : 0.0;
    for (int v = 0; v < M.n; ++v)
        R.perelman_F += (Rscal + gf.row(v).squaredNorm()) * M.omega[v];
    return R;
}

// ---- Hamilton-Perelman tangency -----------------------------------------------------

struct HamiltonPerelmanReport {
    double constraint_residual_linf = 0;  // max | |∇f|^2 - 2 Δ_g f - R |
    std::vector<int> q_values;
    std::vector<double> correction_norm;  // || d/dt f_t|_0 (q) - Δ_ω f ||_{L2(dω)}
    double fitted_exponent = 0;           // slope of log ||corr|| vs log q (expect 1)
    double limit_vs_backward_gap = 0;     // || Δ_ω f - (-Δ_g f - R) + constraint residual ||
};

// d/dt f_t^(ω)|_{t=0}(q) = Δ_ω f - (2/q)|∇f|^2, measured by Richardson finite
// differences of the actual dilaton heat flow; the q-correction decays like 1/q
// toward Δ_ω f, which under the measure-preservation constraint equals the
// Hamilton-Perelman backward right-hand side -Δ_g f - R.
inline HamiltonPerelmanReport hamilton_perelman_check(const MetricMeasureSpace& M,
                                                      const SpectralHeatOperator& H,
                                                      const std::vector<int>& qs) {
    require(M.spec.kind != ManifoldKind::RoundSphere, "hamilton_perelman_check: grid manifolds only");
    HamiltonPerelmanReport R;
    R.q_values = qs;

    const Vec f = M.dilaton;
    const Mat gf = M.gradient(f);
    Vec grad2(M.n);
    for (int v = 0; v < M.n; ++v) grad2[v] = gf.row(v).squaredNorm();

    // Δ_g f in divergence form (unweighted)
    const SpMat Sg = M.weighted_stiffness(Vec::Constant(M.n, 1.0));
    const Vec lap_f = -(Sg * f).array() / M.mass.array();

    const double Rscal = M.spec.kind == ManifoldKind::RoundSphere
                             ? 2.0 / (M.spec.sphere_radius * M.spec.sphere_radius)
                             : 0.0;
    R.constraint_residual_linf = (grad2.array() - 2 * lap_f.array() - Rscal).abs().maxCoeff();

    // Δ_ω f in divergence form
    const SpMat Sw = M.omega_stiffness();
    const Vec lap_w = -(Sw * f).array() / M.omega.array();

    const double t1 = 1e-5;
    std::vector<double> logq, lognorm;
    for (int q : qs) {
        // Richardson: (4 D(h) - D(2h))/3 with D(h) = (f_h - f)/h
        const Vec d1 = (dilaton_heat_flow(H, f, q, t1) - f) / t1;
        const Vec d2 = (dilaton_heat_flow(H, f, q, 2 * t1) - f) / (2 * t1);
        const Vec deriv = (4 * d1 - d2) / 3.0;
        const Vec corr = deriv - lap_w;
        const double nrm = std::sqrt((corr.array().square() * M.omega.array()).sum());
        R.correction_norm.push_back(nrm);
        if (nrm > 0) {
            logq.push_back(std::log(double(q)));
            lognorm.push_back(std::log(nrm));
        }
    }
    if (logq.size() >= 2) R.fitted_exponent = -linear_fit(logq, lognorm).second;

    // identity: Δ_ω f - (-Δ_g f - R) = -( |∇f|^2 - 2 Δ_g f - R ); discretely the
    // residual is the chain-rule defect of the weighted graph Laplacian, O(h^2)
    const Vec gap = lap_w.array() - (-lap_f.array() - Rscal) + (grad2.array() - 2 * lap_f.array() - Rscal);
    const double scale = std::sqrt((grad2.array().square() * M.omega.array()).sum());
    R.limit_vs_backward_gap =
        std::sqrt((gap.array().square() * M.omega.array()).sum()) / std::max(scale, 1e-300);
    return R;
}

} // namespace wassflow
