#pragma once

// Quadratic Wasserstein distances between discrete measures: an exact
// transportation network simplex with deterministic pivoting, and a log-domain
// Sinkhorn solver with epsilon annealing for supports too large for the LP.

#include "wassflow/heat.hpp"

namespace wassflow {

struct DiscreteMeasure {
    std::vector<int> support;   // vertex indices
    Vec weights;                // sum 1, all >= 0

    void validate() const {
        require(int(support.size()) == weights.size(), "measure: support/weight size mismatch");
        require(weights.minCoeff() >= 0, "measure: negative weight");
        require(std::abs(weights.sum() - 1.0) <= 1e-12, "measure: not normalized");
    }
};

inline DiscreteMeasure dirac_measure(int vertex) {
    DiscreteMeasure mu;
    mu.support = {vertex};
    mu.weights = Vec::Ones(1);
    return mu;
}

// Heat-kernel measure p_t(., z) dω truncated to weights >= 1e-12 and renormalized.
inline DiscreteMeasure heat_kernel_measure(const MetricMeasureSpace& M,
                                           const SpectralHeatOperator& H, double t, int z,
                                           double truncation = 1e-12) {
    const Vec p = H.kernel(t, z);
    DiscreteMeasure mu;
    std::vector<double> w;
    for (int i = 0; i < M.n; ++i) {
        const double wi = p[i] * M.omega[i];
        if (wi >= truncation) {
            mu.support.push_back(i);
            w.push_back(wi);
        }
    }
    mu.weights = Eigen::Map<Vec>(w.data(), long(w.size()));
    mu.weights /= mu.weights.sum();
    return mu;
}

struct TransportPlan {
    std::vector<int> rows, cols;   // triplet format over support x support
    std::vector<double> flow;
    double cost = 0;               // sum flow * d^2
    double marginal_residual = 0;  // max L_inf violation of the two marginals
    std::string solver;            // "exact" or "sinkhorn"
    double epsilon = 0;            // entropic regularization (0 for exact)
};

struct W2Result {
    double distance = 0;
    TransportPlan plan;
};

namespace detail {

// Transportation-problem network simplex on a dense cost matrix.
// Basis kept as a spanning tree over the bipartite graph; entering arc chosen
// by most negative reduced cost with lowest flat index on ties (deterministic,
// reproducible plans).
class TransportSimplex {
public:
    TransportSimplex(const Vec& a, const Vec& b, const Mat& C) : a_(a), b_(b), C_(C) {
        na_ = int(a.size());
        nb_ = int(b.size());
    }

    void solve() {
        init_northwest();
        const int max_iter = 50 * (na_ + nb_) * std::max(na_, nb_);
        for (int it = 0; it < max_iter; ++it) {
            compute_potentials();
            int ei, ej;
            if (!find_entering(ei, ej)) return;   // optimal
            pivot(ei, ej);
        }
        throw NumericalError("network simplex: iteration cap exceeded");
    }

    double cost() const {
        double s = 0;
        for (const auto& arc : basis_)
            s += C_(arc.first, arc.second) * flow_at(arc.first, arc.second);
        return s;
    }

    void extract(TransportPlan& plan) const {
        for (const auto& arc : basis_) {
            const double f = flow_at(arc.first, arc.second);
            if (f > 0) {
                plan.rows.push_back(arc.first);
                plan.cols.push_back(arc.second);
                plan.flow.push_back(f);
            }
        }
    }

private:
    const Vec &a_, &b_;
    const Mat& C_;
    int na_ = 0, nb_ = 0;
    std::vector<std::pair<int, int>> basis_;       // (i, j) arcs, exactly na+nb-1
    std::map<std::pair<int, int>, double> flow_;
    Vec u_, v_;                                    // potentials

    double flow_at(int i, int j) const {
        auto it = flow_.find({i, j});
        return it == flow_.end() ? 0.0 : it->second;
    }

    void init_northwest() {
        // the northwest staircase always yields a spanning tree of na+nb-1 arcs
        basis_.clear();
        flow_.clear();
        Vec ra = a_, rb = b_;
        int i = 0, j = 0;
        while (true) {
            const double f = std::min(ra[i], rb[j]);
            basis_.push_back({i, j});
            flow_[{i, j}] = f;
            ra[i] -= f;
            rb[j] -= f;
            if (i == na_ - 1 && j == nb_ - 1) break;
            if (i < na_ - 1 && (ra[i] <= rb[j] || j == nb_ - 1)) ++i;
            else ++j;
        }
        check_numerics(int(basis_.size()) == na_ + nb_ - 1, "network simplex: bad initial basis");
    }

    void compute_potentials() {
        u_ = Vec::Constant(na_, std::numeric_limits<double>::quiet_NaN());
        v_ = Vec::Constant(nb_, std::numeric_limits<double>::quiet_NaN());
        u_[0] = 0;
        // adjacency over basis arcs
        std::vector<std::vector<std::pair<int, int>>> adj(na_ + nb_);
        for (const auto& arc : basis_) {
            adj[arc.first].push_back({na_ + arc.second, arc.second});
            adj[na_ + arc.second].push_back({arc.first, arc.second});
        }
        std::vector<int> stack = {0};
        while (!stack.empty()) {
            const int node = stack.back();
            stack.pop_back();
            for (const auto& [next, jcol] : adj[node]) {
                if (node < na_) {
                    if (std::isnan(v_[jcol])) {
                        v_[jcol] = C_(node, jcol) - u_[node];
                        stack.push_back(next);
                    }
                } else {
                    const int irow = next;
                    if (std::isnan(u_[irow])) {
                        u_[irow] = C_(irow, node - na_) - v_[node - na_];
                        stack.push_back(next);
                    }
                }
            }
        }
        check_numerics(!u_.hasNaN() && !v_.hasNaN(), "network simplex: basis not spanning");
    }

    bool find_entering(int& ei, int& ej) const {
        double best = -1e-12;   // tolerance against cycling on roundoff
        ei = -1;
        ej = -1;
        for (int i = 0; i < na_; ++i)
            for (int j = 0; j < nb_; ++j) {
                const double rc = C_(i, j) - u_[i] - v_[j];
                if (rc < best) {
                    best = rc;
                    ei = i;
                    ej = j;
                }
            }
        return ei >= 0;
    }

    void pivot(int ei, int ej) {
        // find the unique cycle created by (ei, ej) in the basis tree
        std::vector<std::vector<std::pair<int, int>>> adj(na_ + nb_);
        for (size_t k = 0; k < basis_.size(); ++k) {
            const auto& arc = basis_[k];
            adj[arc.first].push_back({na_ + arc.second, int(k)});
            adj[na_ + arc.second].push_back({arc.first, int(k)});
        }
        std::vector<int> parent(na_ + nb_, -2), via(na_ + nb_, -1);
        std::vector<int> stack = {ei};
        parent[ei] = -1;
        while (!stack.empty()) {
            const int node = stack.back();
            stack.pop_back();
            if (node == na_ + ej) break;
            for (const auto& [next, arc_id] : adj[node])
                if (parent[next] == -2) {
                    parent[next] = node;
                    via[next] = arc_id;
                    stack.push_back(next);
                }
        }
        check_numerics(parent[na_ + ej] != -2, "network simplex: cycle not found");

        // walk back: arcs alternate, flow decreases on arcs traversed source->sink odd
        std::vector<int> path_arcs;
        int node = na_ + ej;
        while (node != ei) {
            path_arcs.push_back(via[node]);
            node = parent[node];
        }
        // orientation: entering arc adds flow; arcs at odd positions along the
        // cycle (starting from the entering arc) lose flow
        double theta = std::numeric_limits<double>::infinity();
        int leave = -1;   // index into basis_
        for (size_t s = 0; s < path_arcs.size(); ++s) {
            if (s % 2 == 0) {   // these arcs lose flow
                const auto& arc = basis_[path_arcs[s]];
                const double f = flow_at(arc.first, arc.second);
                // tie-break by lexicographically lowest (i, j)
                if (f < theta - 1e-18 ||
                    (std::abs(f - theta) <= 1e-18 && leave >= 0 && arc < basis_[leave])) {
                    theta = f;
                    leave = path_arcs[s];
                } else if (leave < 0) {
                    theta = f;
                    leave = path_arcs[s];
                }
            }
        }
        check_numerics(leave >= 0, "network simplex: unbounded pivot");

        // apply flow change around the cycle
        flow_[{ei, ej}] = theta;
        for (size_t s = 0; s < path_arcs.size(); ++s) {
            const auto& arc = basis_[path_arcs[s]];
            flow_[{arc.first, arc.second}] += (s % 2 == 0 ? -theta : theta);
        }
        const auto leaving = basis_[leave];
        flow_.erase(leaving);
        basis_[leave] = {ei, ej};
    }
};

inline Mat cost_matrix(const MetricMeasureSpace& M, const DiscreteMeasure& mu,
                       const DiscreteMeasure& nu) {
    Mat C(mu.support.size(), nu.support.size());
    for (size_t i = 0; i < mu.support.size(); ++i)
        for (size_t j = 0; j < nu.support.size(); ++j) {
            const double d = M.geodesic_distance(mu.support[i], nu.support[j]);
            C(long(i), long(j)) = d * d;
        }
    return C;
}

} // namespace detail

// ---- exact solver ------------------------------------------------------------

inline W2Result w2_exact(const MetricMeasureSpace& M, const DiscreteMeasure& mu,
                         const DiscreteMeasure& nu) {
    mu.validate();
    nu.validate();
    require(mu.support.size() + nu.support.size() <= 2000,
            "w2_exact: combined support exceeds 2000 points; use w2_entropic");

    W2Result R;
    R.plan.solver = "exact";

    if (mu.support.size() == 1 && nu.support.size() == 1) {
        // Dirac-to-Dirac: the distance is the single cost entry
        const double d = M.geodesic_distance(mu.support[0], nu.support[0]);
        R.distance = d;
        R.plan.rows = {0};
        R.plan.cols = {0};
        R.plan.flow = {1.0};
        R.plan.cost = d * d;
        return R;
    }

    const Mat C = detail::cost_matrix(M, mu, nu);
    detail::TransportSimplex simplex(mu.weights, nu.weights, C);
    simplex.solve();
    simplex.extract(R.plan);
    R.plan.cost = 0;
    for (size_t k = 0; k < R.plan.flow.size(); ++k)
        R.plan.cost += R.plan.flow[k] * C(R.plan.rows[k], R.plan.cols[k]);
    R.distance = std::sqrt(std::max(0.0, R.plan.cost));

    // certify feasibility
    Vec ra = Vec::Zero(mu.weights.size()), rb = Vec::Zero(nu.weights.size());
    for (size_t k = 0; k < R.plan.flow.size(); ++k) {
        ra[R.plan.rows[k]] += R.plan.flow[k];
        rb[R.plan.cols[k]] += R.plan.flow[k];
    }
    R.plan.marginal_residual = std::max((ra - mu.weights).cwiseAbs().maxCoeff(),
                                        (rb - nu.weights).cwiseAbs().maxCoeff());
    check_numerics(R.plan.marginal_residual <= 1e-9, "w2_exact: marginal residual " +
                                                         fmt17(R.plan.marginal_residual));
    return R;
}

// ---- entropic solver ------------------------------------------------------------

struct SinkhornResult {
    double plan_cost = 0;        // <P, C>: feasible, upper-biased estimate of W2^2
    double debiased_cost = 0;    // Sinkhorn-divergence debiased estimate of W2^2
    double distance_estimate = 0; // sqrt(max(debiased, 0))
    TransportPlan plan;
    int iterations = 0;
};

namespace detail {

struct SinkhornCore {
    Vec f, g;          // dual potentials
    double plan_cost = 0;
    double marginal_residual = 0;
    int iterations = 0;
};

inline SinkhornCore sinkhorn_core(const Vec& a, const Vec& b, const Mat& C, double eps,
                                  double tol, int max_iter) {
    const int na = int(a.size()), nb = int(b.size());
    SinkhornCore S;
    S.f = Vec::Zero(na);
    S.g = Vec::Zero(nb);
    const Vec la = a.array().log(), lb = b.array().log();

    // epsilon annealing: halve from a coarse start, warm-starting the potentials
    std::vector<double> eps_path;
    for (double e = std::max(eps, C.maxCoeff() * 0.25); e > eps * 1.5; e *= 0.5)
        eps_path.push_back(e);
    eps_path.push_back(eps);

    Mat T(na, nb);
    auto lse_rows = [&](const Vec& g, double e, Vec& out) {
        T = (-C).rowwise() + (g + e * lb).transpose();
        T /= e;
        const Vec rmax = T.rowwise().maxCoeff();
        out = ((T.colwise() - rmax).array().exp().rowwise().sum().log().matrix() + rmax);
    };
    auto lse_cols = [&](const Vec& f, double e, Vec& out) {
        T = (-C).colwise() + (f + e * la);
        T /= e;
        const Vec cmax = T.colwise().maxCoeff();
        out = ((T.rowwise() - cmax.transpose()).array().exp().colwise().sum().log().matrix()
                   .transpose() +
               cmax);
    };

    Vec tmp;
    for (double e : eps_path) {
        const bool final_stage = (e == eps);
        const int iters = final_stage ? max_iter : 60;
        for (int it = 0; it < iters; ++it) {
            lse_rows(S.g, e, tmp);
            S.f = -e * tmp;
            lse_cols(S.f, e, tmp);
            S.g = -e * tmp;
            ++S.iterations;
            if (it % 8 == 7 || it == iters - 1) {
                // row-marginal residual of the implied plan
                T = (((S.f + e * la) * Vec::Ones(nb).transpose() +
                      Vec::Ones(na) * (S.g + e * lb).transpose() - C) /
                     e);
                const Vec rows = T.array().exp().rowwise().sum();
                S.marginal_residual = (rows - a).cwiseAbs().maxCoeff();
                if (S.marginal_residual < tol && final_stage) break;
                if (!final_stage && S.marginal_residual < 1e-4) break;
            }
        }
    }
    T = (((S.f + eps * la) * Vec::Ones(nb).transpose() +
          Vec::Ones(na) * (S.g + eps * lb).transpose() - C) /
         eps);
    S.plan_cost = (T.array().exp() * C.array()).sum();
    return S;
}

} // namespace detail

inline SinkhornResult w2_entropic(const MetricMeasureSpace& M, const DiscreteMeasure& mu,
                                  const DiscreteMeasure& nu, double eps,
                                  double marginal_tol = 1e-9, int max_iter = 20000) {
    mu.validate();
    nu.validate();
    require(eps > 0, "w2_entropic: eps must be positive");

    const Mat C = detail::cost_matrix(M, mu, nu);
    auto S = detail::sinkhorn_core(mu.weights, nu.weights, C, eps, marginal_tol, max_iter);
    check_numerics(S.marginal_residual <= 10 * marginal_tol,
                   "sinkhorn: no convergence, marginal residual " + fmt17(S.marginal_residual));

    SinkhornResult R;
    R.plan_cost = S.plan_cost;
    R.iterations = S.iterations;
    R.plan.solver = "sinkhorn";
    R.plan.epsilon = eps;
    R.plan.marginal_residual = S.marginal_residual;
    R.plan.cost = S.plan_cost;

    // debias with the self-transport terms (Sinkhorn divergence on plan costs)
    const Mat Cmm = detail::cost_matrix(M, mu, mu);
    const Mat Cnn = detail::cost_matrix(M, nu, nu);
    const auto Smm = detail::sinkhorn_core(mu.weights, mu.weights, Cmm, eps, marginal_tol, max_iter);
    const auto Snn = detail::sinkhorn_core(nu.weights, nu.weights, Cnn, eps, marginal_tol, max_iter);
    R.debiased_cost = S.plan_cost - 0.5 * (Smm.plan_cost + Snn.plan_cost);
    R.distance_estimate = std::sqrt(std::max(0.0, R.debiased_cost));
    return R;
}

// ---- contraction and coupling deformation -----------------------------------------

struct ContractionReport {
    double w2 = 0;         // W2(p_t δ_y, p_t δ_z)
    double bound = 0;      // e^{-K_f t} d(y, z)
    double ratio = 0;
    bool exact = true;
};

inline ContractionReport contraction_check(const MetricMeasureSpace& M,
                                           const SpectralHeatOperator& H, double t, int y, int z,
                                           double K_f, double sinkhorn_eps = 5e-3) {
    const DiscreteMeasure mu = heat_kernel_measure(M, H, t, y);
    const DiscreteMeasure nu = heat_kernel_measure(M, H, t, z);
    ContractionReport R;
    if (mu.support.size() + nu.support.size() <= 2000) {
        R.w2 = w2_exact(M, mu, nu).distance;
        R.exact = true;
    } else {
        R.w2 = w2_entropic(M, mu, nu, sinkhorn_eps).distance_estimate;
        R.exact = false;
    }
    R.bound = std::exp(-K_f * t) * M.geodesic_distance(y, z);
    R.ratio = R.w2 / R.bound;
    return R;
}

struct CouplingDeformation {
    double a = 0;                  // F(cm;q)/q from the Fréchet machinery
    std::vector<double> t;         // schedule
    std::vector<double> a_t;       // deformed couplings
    double a_extrapolated = 0;     // linear-in-t extrapolation of a_t to t=0
    std::vector<double> bound;     // e^{-2 K t} a
    int cm_vertex = -1;
};

// a_t = (1/2q) Σ_k W2^2(p_t δ_k, p_t δ_cm); K is the Ricci lower bound of (M,g).
inline CouplingDeformation coupling_deformation(const MetricMeasureSpace& M,
                                                const SpectralHeatOperator& H,
                                                const std::vector<int>& points,
                                                const std::vector<double>& t_schedule,
                                                double K_ricci, double sinkhorn_eps = 5e-3) {
    CouplingDeformation R;
    const FrechetMean cm = frechet_mean(M, points);
    R.a = cm.coupling_a;
    R.cm_vertex = cm.nearest_vertex;
    const int q = int(points.size());

    for (double t : t_schedule) {
        const DiscreteMeasure nu = heat_kernel_measure(M, H, t, R.cm_vertex);
        double s = 0;
        for (int p : points) {
            const DiscreteMeasure mu = heat_kernel_measure(M, H, t, p);
            double c2;
            if (mu.support.size() + nu.support.size() <= 2000)
                c2 = w2_exact(M, mu, nu).plan.cost;
            else
                c2 = w2_entropic(M, mu, nu, sinkhorn_eps).debiased_cost;
            s += c2;
        }
        R.t.push_back(t);
        R.a_t.push_back(s / (2.0 * q));
        R.bound.push_back(std::exp(-2.0 * K_ricci * t) * R.a);
    }
    if (R.t.size() >= 3) {
        std::vector<double> ts(R.t.end() - 3, R.t.end());
        std::vector<double> ys(R.a_t.end() - 3, R.a_t.end());
        R.a_extrapolated = linear_fit(ts, ys).first;
    } else if (!R.t.empty()) {
        R.a_extrapolated = R.a_t.back();
    }
    return R;
}

} // namespace wassflow
