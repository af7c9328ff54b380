#pragma once

// Spectral realization of the weighted heat semigroup e^{t Δ_ω}.  The weighted
// Laplacian is conjugated by sqrt(ω) into a symmetric matrix, diagonalized
// densely (LAPACK dsyevd), and kernels are evaluated from the eigenpairs.  The
// spectral route keeps the semigroup identity, symmetry and unit mass exact in
// floating point, independent of the truncation level.

#include "wassflow/manifold.hpp"

#include <lapacke.h>

namespace wassflow {

class SpectralHeatOperator {
public:
    const MetricMeasureSpace* M = nullptr;
    int k = 0;                 // number of retained eigenpairs
    Vec lam;                   // 0 = λ0 <= λ1 <= ...
    Mat phi;                   // n x k eigenfields, L2(dω)-orthonormal
    std::vector<Mat> dphi;     // per frame direction: n x k eigenfield gradients

    double t_min() const { return 4.0 * M->max_edge_length * M->max_edge_length; }

    // crude bound on the dropped spectral mass at time t
    double truncation_bound(double t) const {
        if (k >= M->n) return 0.0;
        return double(M->n - k) * std::exp(-lam[k - 1] * t);
    }

    void require_resolvable(double t) const {
        if (t < t_min())
            throw std::invalid_argument("heat: t = " + fmt17(t) + " below resolvable scale t_min = " +
                                        fmt17(t_min()));
    }

    // p_t(., z) — weighted heat kernel with source vertex z
    Vec kernel(double t, int z) const {
        require_resolvable(t);
        return kernel_unchecked(t, z);
    }

    Vec kernel_unchecked(double t, int z) const {
        Vec c = (lam.array() * (-t)).exp() * phi.row(z).transpose().array();
        Vec p = phi * c;
        const double neg = p.minCoeff();
        check_numerics(neg > -1e-8, "heat kernel negativity " + fmt17(neg) +
                                        " beyond tolerance (truncation too aggressive)");
        return p;
    }

    // field y -> (d/dz_c) p_t(y, z), one column per frame direction at z
    Mat source_gradient(double t, int z) const {
        require_resolvable(t);
        const int dim = M->dim;
        Mat out(M->n, dim);
        const Vec decay = (lam.array() * (-t)).exp();
        for (int d = 0; d < dim; ++d) {
            Vec c = decay.array() * dphi[d].row(z).transpose().array();
            out.col(d) = phi * c;
        }
        return out;
    }

    // e^{t Δ_ω} u (valid for any t >= 0)
    Vec apply_semigroup(double t, const Vec& u) const {
        Vec c(k);
        for (int j = 0; j < k; ++j) c[j] = M->inner_omega(phi.col(j), u);
        c.array() *= (lam.array() * (-t)).exp();
        return phi * c;
    }
};

namespace detail {

inline void dense_sym_eig(Mat& A, Vec& w) {
    const int n = int(A.rows());
    w.resize(n);
    const int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', n, A.data(), n, w.data());
    check_numerics(info == 0, "dsyevd failed with info = " + std::to_string(info));
}

} // namespace detail

// Eigendecomposition of -Δ_ω, keeping the k lowest eigenpairs.  Within a
// multiplicity cluster (relative gap < 1e-8) the basis is re-fixed by
// Gram-Schmidt against coordinate seed vectors so reports are byte-stable.
inline SpectralHeatOperator eigendecompose(const MetricMeasureSpace& M, int k = 0) {
    if (k <= 0) k = std::min(M.n, 400);
    require(k <= M.n, "eigendecompose: k exceeds vertex count");

    SpectralHeatOperator H;
    H.M = &M;
    H.k = k;

    const Vec sqw = M.omega.array().sqrt();
    Mat A = Mat(M.weighted_stiffness(M.density));
    for (int j = 0; j < M.n; ++j)
        for (int i = 0; i < M.n; ++i) A(i, j) /= sqw[i] * sqw[j];

    Vec w;
    detail::dense_sym_eig(A, w);   // ascending; eigenvectors in columns of A

    check_numerics(std::abs(w[0]) <= 1e-9, "eigendecompose: lambda_0 = " + fmt17(w[0]) +
                                               " not numerically zero");
    check_numerics(w[k - 1] >= -1e-12, "eigendecompose: negative eigenvalue");

    H.lam = w.head(k).cwiseMax(0.0);
    H.lam[0] = 0.0;

    Mat V = A.leftCols(k);

    // cluster-wise deterministic basis fix
    int c0 = 0;
    while (c0 < k) {
        int c1 = c0 + 1;
        const double scale = std::max(1.0, std::abs(H.lam[c0]));
        while (c1 < k && std::abs(H.lam[c1] - H.lam[c1 - 1]) < 1e-8 * scale) ++c1;
        const int m = c1 - c0;
        if (m > 1) {
            // seed directions: coordinate vectors at rows of maximal cluster energy
            Vec energy = V.middleCols(c0, m).array().square().rowwise().sum();
            std::vector<int> order(M.n);
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                return energy[a] != energy[b] ? energy[a] > energy[b] : a < b;
            });
            Mat B(m, m);
            for (int j = 0; j < m; ++j) B.col(j) = V.middleCols(c0, m).row(order[j]).transpose();
            Eigen::HouseholderQR<Mat> qr(B);
            Mat Q = qr.householderQ() * Mat::Identity(m, m);
            V.middleCols(c0, m) = V.middleCols(c0, m) * Q;
        }
        c0 = c1;
    }

    // deterministic sign fix: largest-magnitude entry (lowest index on ties) positive
    for (int j = 0; j < k; ++j) {
        int arg = 0;
        double mx = -1;
        for (int i = 0; i < M.n; ++i) {
            const double a = std::abs(V(i, j));
            if (a > mx + 1e-14 * mx) { mx = a; arg = i; }
        }
        if (V(arg, j) < 0) V.col(j) = -V.col(j);
    }

    H.phi = V.array().colwise() / sqw.array();

    const double dev0 = (H.phi.col(0).array() - 1.0).abs().maxCoeff();
    check_numerics(dev0 <= 1e-10, "eigendecompose: phi_0 deviates from 1 by " + fmt17(dev0));
    H.phi.col(0).setOnes();

    // precompute eigenfield gradients (frame components)
    H.dphi.assign(M.dim, Mat(M.n, k));
    if (M.spec.kind == ManifoldKind::FlatTorus) {
        for (int j = 0; j < k; ++j) {
            for (int v = 0; v < M.n; ++v) {
                Vec g = M.gradient_at_high_order(H.phi.col(j), v);
                for (int d = 0; d < M.dim; ++d) H.dphi[d](v, j) = g[d];
            }
        }
    } else {
        for (int j = 0; j < k; ++j) {
            Mat g = M.gradient(H.phi.col(j));
            for (int d = 0; d < M.dim; ++d) H.dphi[d].col(j) = g.col(d);
        }
    }
    return H;
}

// ---- Varadhan small-time estimate -------------------------------------------

struct VaradhanTrace {
    std::vector<double> t;
    std::vector<double> raw;        // -t ln p_t(y,z)
    std::vector<double> normalized; // -t ln [p_t(y,z)/p_t(z,z)]
    double extrapolated = 0;        // linear-in-t Richardson of the normalized sequence
    double raw_last = 0;
};

// The on-diagonal normalization cancels the (4 pi t)^{n/2} prefactor, so the
// normalized sequence approaches d^2/4 linearly in t and the stated linear
// Richardson model applies.
inline VaradhanTrace varadhan_limit(const SpectralHeatOperator& H, int y, int z,
                                    const std::vector<double>& t_schedule) {
    require(t_schedule.size() >= 3, "varadhan: need at least 3 schedule points");
    for (size_t i = 1; i < t_schedule.size(); ++i)
        require(t_schedule[i] < t_schedule[i - 1], "varadhan: schedule must decrease");

    VaradhanTrace out;
    for (double t : t_schedule) {
        const Vec p = H.kernel(t, z);
        check_numerics(p[y] > 0 && p[z] > 0, "varadhan: kernel non-positive at schedule point");
        out.t.push_back(t);
        out.raw.push_back(-t * std::log(p[y]));
        out.normalized.push_back(-t * std::log(p[y] / p[z]));
    }
    const size_t m = out.t.size();
    std::vector<double> ts(out.t.end() - 3, out.t.end());
    std::vector<double> ys(out.normalized.end() - 3, out.normalized.end());
    out.extrapolated = linear_fit(ts, ys).first;
    out.raw_last = out.raw[m - 1];
    return out;
}

// ---- dilaton heat flow -------------------------------------------------------

// f_t^(ω) = -(q/2) ln( e^{t Δ_ω} e^{-2 f / q} )
inline Vec dilaton_heat_flow(const SpectralHeatOperator& H, const Vec& f, int q, double t) {
    require(q >= 1, "dilaton_heat_flow: q >= 1 required");
    require(t >= 0, "dilaton_heat_flow: t >= 0 required");
    if (t == 0.0) return f;
    const Vec u = (f.array() * (-2.0 / q)).exp();
    Vec v = H.apply_semigroup(t, u);
    check_numerics(v.minCoeff() > 0, "dilaton_heat_flow: semigroup output not positive");
    return -0.5 * q * v.array().log();
}

} // namespace wassflow
