#pragma once

// Discretized weighted Riemannian metric measure spaces (M, g, dω) over a
// small catalog: circles with a conformal factor, flat rectangular tori, and
// round icospheres.  The catalog admits closed-form geodesics, exp/log maps
// and curvature, so every downstream quantity can be checked against an
// independent oracle.

#include "wassflow/core.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <map>
#include <numeric>

namespace wassflow {

enum class ManifoldKind { Circle, FlatTorus, RoundSphere };

inline std::string to_string(ManifoldKind k) {
    switch (k) {
        case ManifoldKind::Circle: return "circle";
        case ManifoldKind::FlatTorus: return "flat_torus";
        case ManifoldKind::RoundSphere: return "round_sphere";
    }
    return "?";
}

// Closed-form conformal factor for the circle: a(x) = a0 + cs sin x + cc cos x.
struct CircleRule {
    double a0 = 1.0;
    double c_sin = 0.0;
    double c_cos = 0.0;
    double operator()(double x) const { return a0 + c_sin * std::sin(x) + c_cos * std::cos(x); }
};

struct ManifoldSpec {
    ManifoldKind kind = ManifoldKind::FlatTorus;
    int resolution = 32;           // grid size per axis, or icosphere subdivision level
    double torus_lx = 1.0;
    double torus_ly = 1.0;
    double sphere_radius = 1.0;
    CircleRule circle_a;

    // upper sectional-curvature bound
    double kappa() const {
        return kind == ManifoldKind::RoundSphere ? 1.0 / (sphere_radius * sphere_radius) : 0.0;
    }

    void validate() const {
        if (kind == ManifoldKind::RoundSphere) {
            require(resolution >= 1, "RoundSphere: subdivision level must be >= 1");
            require(sphere_radius > 0, "RoundSphere: radius must be positive");
        } else {
            require(resolution >= 8, "grid manifolds need resolution >= 8");
        }
        if (kind == ManifoldKind::FlatTorus)
            require(torus_lx > 0 && torus_ly > 0, "FlatTorus: side lengths must be positive");
        if (kind == ManifoldKind::Circle) {
            for (int i = 0; i < 64; ++i)
                require(circle_a(2 * M_PI * i / 64.0) > 0, "Circle: conformal factor must stay positive");
        }
    }
};

struct Edge {
    int a, b;
    double stiffness;   // dmu_g stiffness weight s_ab
};

// Symmetric per-vertex bilinear data in frame coordinates, packed xx,(xy,yy).
struct BilinearField {
    int dim = 2;
    Mat comp;   // n x 1 (1D: ss) or n x 3 (2D: xx, xy, yy)

    Mat at(int v) const {
        if (dim == 1) {
            Mat m(1, 1);
            m(0, 0) = comp(v, 0);
            return m;
        }
        Mat m(2, 2);
        m << comp(v, 0), comp(v, 1), comp(v, 1), comp(v, 2);
        return m;
    }
};

struct FrechetMean {
    Vec3 point = Vec3::Zero();  // catalog-point coordinates (see MetricMeasureSpace::point_of)
    int nearest_vertex = -1;
    Vec frame_offset;           // log of the mean at the nearest vertex, frame components
    double F = 0.0;             // value of F(y;q) = 1/2 sum d^2 at the minimizer
    double coupling_a = 0.0;    // a = F/q
    int iterations = 0;
};

class MetricMeasureSpace {
public:
    ManifoldSpec spec;
    int dim = 2;
    int n = 0;

    // chart/embedding coordinates per vertex:
    //   circle      n x 1  (angular coordinate x)
    //   flat torus  n x 2  (x, y)
    //   round sphere n x 3 (embedding coordinates, |p| = r)
    Mat chart;
    std::vector<Edge> edges;
    Vec mass;           // dmu_g vertex weights
    double volume = 0;  // sum of mass

    Vec dilaton;        // gauge-shifted field f~ with  sum exp(-f~) dmu/V = 1
    double gauge_shift = 0.0;
    Vec omega;          // probability weights of dω
    Vec density;        // dω/dμ_g density: omega_i = density_i * mass_i

    // tangent frames (sphere only; grids use chart axes)
    Mat frame_e1, frame_e2;          // n x 3
    std::vector<std::vector<int>> neighbors;

    // circle bookkeeping
    Vec circle_arclen;               // cumulative arclength s_i, s_0 = 0
    double circle_length = 0;

    // sphere quadratic-fit operators: per vertex, 6 x (ring size) matrix mapping
    // ring values (centered at the vertex value) to [du1,du2,h11,h12,h22] coeffs
    std::vector<Mat> fit_ops;        // 5 x deg
    std::vector<std::vector<int>> fit_ring;

    int grid_m = 0;                  // torus grid size
    double hx = 0, hy = 0;

    double max_edge_length = 0;      // geodesic edge length

    // ---- catalog geometry ------------------------------------------------

    double sectional_curvature() const { return spec.kappa(); }

    // Ricci tensor in frame coordinates (constant over the catalog).
    Mat ricci_frame() const {
        Mat r = Mat::Zero(dim, dim);
        if (spec.kind == ManifoldKind::RoundSphere)
            r = Mat::Identity(2, 2) / (spec.sphere_radius * spec.sphere_radius);
        return r;
    }

    double injectivity_radius() const {
        switch (spec.kind) {
            case ManifoldKind::Circle: return circle_length / 2.0;
            case ManifoldKind::FlatTorus: return std::min(spec.torus_lx, spec.torus_ly) / 2.0;
            case ManifoldKind::RoundSphere: return M_PI * spec.sphere_radius;
        }
        return 0;
    }

    // r0 = min{ inj/3, pi/(6 sqrt(kappa)) }, with pi/(2 sqrt(kappa)) = inf for kappa <= 0
    double localization_radius() const {
        double r0 = injectivity_radius() / 3.0;
        if (spec.kappa() > 0) r0 = std::min(r0, M_PI / (6.0 * std::sqrt(spec.kappa())));
        return r0;
    }

    double diameter() const {
        switch (spec.kind) {
            case ManifoldKind::Circle: return circle_length / 2.0;
            case ManifoldKind::FlatTorus:
                return std::hypot(spec.torus_lx / 2.0, spec.torus_ly / 2.0);
            case ManifoldKind::RoundSphere: return M_PI * spec.sphere_radius;
        }
        return 0;
    }

    Vec3 point_of(int v) const {
        Vec3 p = Vec3::Zero();
        if (spec.kind == ManifoldKind::Circle) p[0] = circle_arclen[v];
        else if (spec.kind == ManifoldKind::FlatTorus) { p[0] = chart(v, 0); p[1] = chart(v, 1); }
        else p = chart.row(v).transpose();
        return p;
    }

    double geodesic_distance_pt(const Vec3& p, const Vec3& q) const {
        switch (spec.kind) {
            case ManifoldKind::Circle: {
                double d = std::abs(p[0] - q[0]);
                return std::min(d, circle_length - d);
            }
            case ManifoldKind::FlatTorus: {
                double dx = std::abs(p[0] - q[0]); dx = std::min(dx, spec.torus_lx - dx);
                double dy = std::abs(p[1] - q[1]); dy = std::min(dy, spec.torus_ly - dy);
                return std::hypot(dx, dy);
            }
            case ManifoldKind::RoundSphere: {
                const double r = spec.sphere_radius;
                const Vec3 u = p / r, v = q / r;
                // atan2 keeps full precision near coincident and antipodal points
                return r * std::atan2(u.cross(v).norm(), u.dot(v));
            }
        }
        return 0;
    }

    double geodesic_distance(int i, int j) const { return geodesic_distance_pt(point_of(i), point_of(j)); }

    // log map: tangent vector at base (same coordinate convention as point_of;
    // for the sphere an ambient 3-vector orthogonal to base).
    Vec3 log_pt(const Vec3& base, const Vec3& target) const {
        Vec3 v = Vec3::Zero();
        switch (spec.kind) {
            case ManifoldKind::Circle: {
                double d = target[0] - base[0];
                d -= circle_length * std::round(d / circle_length);
                v[0] = d;
                break;
            }
            case ManifoldKind::FlatTorus: {
                double dx = target[0] - base[0]; dx -= spec.torus_lx * std::round(dx / spec.torus_lx);
                double dy = target[1] - base[1]; dy -= spec.torus_ly * std::round(dy / spec.torus_ly);
                v[0] = dx; v[1] = dy;
                break;
            }
            case ManifoldKind::RoundSphere: {
                const double r = spec.sphere_radius;
                const Vec3 bu = base / r, tu = target / r;
                const double c = bu.dot(tu);
                const Vec3 w = tu - c * bu;
                const double nw = w.norm();
                if (nw < 1e-15) return Vec3::Zero();
                const double th = std::atan2(nw, c);
                v = (th * r) * (w / nw);
                break;
            }
        }
        return v;
    }

    Vec3 exp_pt(const Vec3& base, const Vec3& tangent) const {
        switch (spec.kind) {
            case ManifoldKind::Circle: {
                double s = base[0] + tangent[0];
                s -= circle_length * std::floor(s / circle_length);
                return Vec3(s, 0, 0);
            }
            case ManifoldKind::FlatTorus: {
                double x = base[0] + tangent[0]; x -= spec.torus_lx * std::floor(x / spec.torus_lx);
                double y = base[1] + tangent[1]; y -= spec.torus_ly * std::floor(y / spec.torus_ly);
                return Vec3(x, y, 0);
            }
            case ManifoldKind::RoundSphere: {
                const double r = spec.sphere_radius;
                const double nv = tangent.norm();
                if (nv < 1e-300) return base;
                const double th = nv / r;
                return std::cos(th) * base + std::sin(th) * r * (tangent / nv);
            }
        }
        return base;
    }

    int nearest_vertex(const Vec3& p) const {
        int best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i) {
            double d = geodesic_distance_pt(p, point_of(i));
            if (d < bd) { bd = d; best = i; }
        }
        return best;
    }

    // Frame components of an ambient/chart tangent vector at a vertex.
    Vec frame_components(int v, const Vec3& tangent) const {
        Vec c(dim);
        if (spec.kind == ManifoldKind::RoundSphere) {
            c[0] = tangent.dot(frame_e1.row(v));
            c[1] = tangent.dot(frame_e2.row(v));
        } else {
            for (int d = 0; d < dim; ++d) c[d] = tangent[d];
        }
        return c;
    }

    Vec3 frame_to_tangent(int v, const Vec& comp) const {
        Vec3 t = Vec3::Zero();
        if (spec.kind == ManifoldKind::RoundSphere)
            t = comp[0] * Vec3(frame_e1.row(v)) + comp[1] * Vec3(frame_e2.row(v));
        else
            for (int d = 0; d < dim; ++d) t[d] = comp[d];
        return t;
    }

    // ---- differential operators -------------------------------------------

    int torus_idx(int i, int j) const {
        const int m = grid_m;
        return ((i % m + m) % m) * m + ((j % m + m) % m);
    }

    // gradient of a scalar field, frame components at every vertex (n x dim)
    Mat gradient(const Vec& u) const {
        require(u.size() == n, "gradient: field size mismatch");
        Mat g(n, dim);
        switch (spec.kind) {
            case ManifoldKind::Circle: {
                for (int i = 0; i < n; ++i) {
                    const int ip = (i + 1) % n, im = (i - 1 + n) % n;
                    const double lm = edge_len_circle(im), lp = edge_len_circle(i);
                    // second-order nonuniform central difference in arclength
                    g(i, 0) = (u[ip] * lm * lm - u[im] * lp * lp + u[i] * (lp * lp - lm * lm)) /
                              (lm * lp * (lm + lp));
                }
                break;
            }
            case ManifoldKind::FlatTorus: {
                const int m = grid_m;
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < m; ++j) {
                        const int v = torus_idx(i, j);
                        g(v, 0) = (u[torus_idx(i + 1, j)] - u[torus_idx(i - 1, j)]) / (2 * hx);
                        g(v, 1) = (u[torus_idx(i, j + 1)] - u[torus_idx(i, j - 1)]) / (2 * hy);
                    }
                break;
            }
            case ManifoldKind::RoundSphere: {
                for (int v = 0; v < n; ++v) {
                    const auto& ring = fit_ring[v];
                    Vec rhs(ring.size());
                    for (size_t r = 0; r < ring.size(); ++r) rhs[r] = u[ring[r]] - u[v];
                    Vec c = fit_ops[v] * rhs;
                    g(v, 0) = c[0]; g(v, 1) = c[1];
                }
                break;
            }
        }
        return g;
    }

    // 4th-order gradient at one vertex (grids); sphere falls back to the fit.
    Vec gradient_at_high_order(const Vec& u, int v) const {
        Vec g(dim);
        switch (spec.kind) {
            case ManifoldKind::FlatTorus: {
                const int m = grid_m, i = v / m, j = v % m;
                g[0] = (-u[torus_idx(i + 2, j)] + 8 * u[torus_idx(i + 1, j)] -
                        8 * u[torus_idx(i - 1, j)] + u[torus_idx(i - 2, j)]) / (12 * hx);
                g[1] = (-u[torus_idx(i, j + 2)] + 8 * u[torus_idx(i, j + 1)] -
                        8 * u[torus_idx(i, j - 1)] + u[torus_idx(i, j - 2)]) / (12 * hy);
                break;
            }
            default: {
                Mat gg = gradient(u);
                g = gg.row(v).transpose();
            }
        }
        return g;
    }

    BilinearField hessian(const Vec& u) const {
        require(u.size() == n, "hessian: field size mismatch");
        BilinearField H;
        H.dim = dim;
        H.comp.resize(n, dim == 1 ? 1 : 3);
        switch (spec.kind) {
            case ManifoldKind::Circle: {
                for (int i = 0; i < n; ++i) {
                    const int ip = (i + 1) % n, im = (i - 1 + n) % n;
                    const double lm = edge_len_circle(im), lp = edge_len_circle(i);
                    H.comp(i, 0) = 2.0 * (lm * u[ip] - (lm + lp) * u[i] + lp * u[im]) /
                                   (lm * lp * (lm + lp));
                }
                break;
            }
            case ManifoldKind::FlatTorus: {
                const int m = grid_m;
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < m; ++j) {
                        const int v = torus_idx(i, j);
                        H.comp(v, 0) = (u[torus_idx(i + 1, j)] - 2 * u[v] + u[torus_idx(i - 1, j)]) / (hx * hx);
                        H.comp(v, 2) = (u[torus_idx(i, j + 1)] - 2 * u[v] + u[torus_idx(i, j - 1)]) / (hy * hy);
                        H.comp(v, 1) = (u[torus_idx(i + 1, j + 1)] - u[torus_idx(i + 1, j - 1)] -
                                        u[torus_idx(i - 1, j + 1)] + u[torus_idx(i - 1, j - 1)]) /
                                       (4 * hx * hy);
                    }
                break;
            }
            case ManifoldKind::RoundSphere: {
                for (int v = 0; v < n; ++v) {
                    const auto& ring = fit_ring[v];
                    Vec rhs(ring.size());
                    for (size_t r = 0; r < ring.size(); ++r) rhs[r] = u[ring[r]] - u[v];
                    Vec c = fit_ops[v] * rhs;
                    H.comp(v, 0) = c[2]; H.comp(v, 1) = c[3]; H.comp(v, 2) = c[4];
                }
                break;
            }
        }
        return H;
    }

    // weighted stiffness for a measure with vertex densities dens (wrt dmu_g):
    //   u^T A u  ~  int |grad u|^2 dens dmu;  arithmetic-mean edge rule
    SpMat weighted_stiffness(const Vec& dens) const {
        std::vector<Triplet> trip;
        trip.reserve(edges.size() * 4 + n);
        for (const Edge& e : edges) {
            const double w = e.stiffness * 0.5 * (dens[e.a] + dens[e.b]);
            trip.emplace_back(e.a, e.a, w);
            trip.emplace_back(e.b, e.b, w);
            trip.emplace_back(e.a, e.b, -w);
            trip.emplace_back(e.b, e.a, -w);
        }
        SpMat A(n, n);
        A.setFromTriplets(trip.begin(), trip.end());
        return A;
    }

    // stiffness of Delta_omega (divergence form, self-adjoint wrt dω by construction)
    SpMat omega_stiffness() const { return weighted_stiffness(density); }

    double inner_omega(const Vec& u, const Vec& v) const { return (u.array() * v.array() * omega.array()).sum(); }

    double edge_len_circle(int i) const {
        // length of edge i -> i+1
        const int ip = (i + 1) % n;
        double l = circle_arclen[ip] - circle_arclen[i];
        if (ip == 0) l = circle_length - circle_arclen[i];
        return l;
    }
};

namespace detail {

// adaptive Simpson quadrature
inline double simpson(const std::function<double(double)>& f, double a, double b,
                      double fa, double fm, double fb, double eps, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double whole = (b - a) / 6.0 * (fa + 4 * fm + fb);
    const double left = (m - a) / 6.0 * (fa + 4 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4 * frm + fb);
    if (depth <= 0 || std::abs(left + right - whole) < 15 * eps)
        return left + right + (left + right - whole) / 15.0;
    return simpson(f, a, m, fa, flm, fm, eps / 2, depth - 1) +
           simpson(f, m, b, fm, frm, fb, eps / 2, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double eps = 1e-13) {
    const double m = 0.5 * (a + b);
    return simpson(f, a, b, f(a), f(m), f(b), eps, 40);
}

inline void icosphere_mesh(int subdiv, Mat& V, std::vector<std::array<int, 3>>& F) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> verts = {
        {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
        {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
        {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    for (auto& v : verts) v.normalize();
    F = {{0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
         {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
         {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
         {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
    for (int s = 0; s < subdiv; ++s) {
        std::map<std::pair<int, int>, int> mid;
        auto midpoint = [&](int a, int b) {
            auto key = std::minmax(a, b);
            auto it = mid.find(key);
            if (it != mid.end()) return it->second;
            Vec3 p = (verts[a] + verts[b]).normalized();
            verts.push_back(p);
            int id = int(verts.size()) - 1;
            mid[key] = id;
            return id;
        };
        std::vector<std::array<int, 3>> F2;
        F2.reserve(F.size() * 4);
        for (const auto& f : F) {
            const int ab = midpoint(f[0], f[1]), bc = midpoint(f[1], f[2]), ca = midpoint(f[2], f[0]);
            F2.push_back({f[0], ab, ca});
            F2.push_back({f[1], bc, ab});
            F2.push_back({f[2], ca, bc});
            F2.push_back({ab, bc, ca});
        }
        F.swap(F2);
    }
    V.resize(int(verts.size()), 3);
    for (size_t i = 0; i < verts.size(); ++i) V.row(int(i)) = verts[i].transpose();
}

} // namespace detail

// ---- construction ----------------------------------------------------------

inline MetricMeasureSpace build_manifold(const ManifoldSpec& spec) {
    spec.validate();
    MetricMeasureSpace M;
    M.spec = spec;

    switch (spec.kind) {
        case ManifoldKind::Circle: {
            const int n = spec.resolution;
            M.dim = 1;
            M.n = n;
            M.chart.resize(n, 1);
            M.circle_arclen.resize(n);
            double s = 0;
            std::function<double(double)> a = [&](double x) { return spec.circle_a(x); };
            for (int i = 0; i < n; ++i) {
                const double x0 = 2 * M_PI * i / n;
                M.chart(i, 0) = x0;
                M.circle_arclen[i] = s;
                s += detail::integrate(a, x0, 2 * M_PI * (i + 1) / n);
            }
            M.circle_length = s;
            M.mass.resize(n);
            M.edges.reserve(n);
            for (int i = 0; i < n; ++i) {
                const int ip = (i + 1) % n;
                double l = (ip == 0 ? M.circle_length : M.circle_arclen[ip]) - M.circle_arclen[i];
                M.edges.push_back({i, ip, 1.0 / l});
                M.max_edge_length = std::max(M.max_edge_length, l);
            }
            for (int i = 0; i < n; ++i) {
                const int im = (i - 1 + n) % n;
                M.mass[i] = 0.5 * (M.edge_len_circle(im) + M.edge_len_circle(i));
            }
            break;
        }
        case ManifoldKind::FlatTorus: {
            const int m = spec.resolution;
            M.dim = 2;
            M.grid_m = m;
            M.n = m * m;
            M.hx = spec.torus_lx / m;
            M.hy = spec.torus_ly / m;
            M.chart.resize(M.n, 2);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < m; ++j) {
                    const int v = i * m + j;
                    M.chart(v, 0) = i * M.hx;
                    M.chart(v, 1) = j * M.hy;
                }
            M.mass = Vec::Constant(M.n, M.hx * M.hy);
            M.edges.reserve(2 * M.n);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < m; ++j) {
                    const int v = M.torus_idx(i, j);
                    M.edges.push_back({v, M.torus_idx(i + 1, j), M.hy / M.hx});
                    M.edges.push_back({v, M.torus_idx(i, j + 1), M.hx / M.hy});
                }
            M.max_edge_length = std::max(M.hx, M.hy);
            break;
        }
        case ManifoldKind::RoundSphere: {
            Mat V;
            std::vector<std::array<int, 3>> F;
            detail::icosphere_mesh(spec.resolution, V, F);
            const double r = spec.sphere_radius;
            M.dim = 2;
            M.n = int(V.rows());
            M.chart = V * r;
            M.mass = Vec::Zero(M.n);
            std::map<std::pair<int, int>, double> w;
            for (const auto& f : F) {
                const Vec3 A = M.chart.row(f[0]), B = M.chart.row(f[1]), C = M.chart.row(f[2]);
                const double area = 0.5 * ((B - A).cross(C - A)).norm();
                for (int k = 0; k < 3; ++k) M.mass[f[k]] += area / 3.0;
                // cotan weights
                const std::array<std::array<int, 3>, 3> corners = {{{0, 1, 2}, {1, 2, 0}, {2, 0, 1}}};
                for (const auto& c : corners) {
                    const Vec3 P = M.chart.row(f[c[0]]), Q = M.chart.row(f[c[1]]), R = M.chart.row(f[c[2]]);
                    const Vec3 u = P - R, v2 = Q - R;
                    const double cot = u.dot(v2) / u.cross(v2).norm();
                    auto key = std::minmax(f[c[0]], f[c[1]]);
                    w[key] += 0.5 * cot;
                }
            }
            M.edges.reserve(w.size());
            for (const auto& kv : w) {
                M.edges.push_back({kv.first.first, kv.first.second, kv.second});
                M.max_edge_length = std::max(
                    M.max_edge_length, M.geodesic_distance(kv.first.first, kv.first.second));
            }
            // frames: deterministic orthonormal tangent basis
            M.frame_e1.resize(M.n, 3);
            M.frame_e2.resize(M.n, 3);
            for (int i = 0; i < M.n; ++i) {
                const Vec3 nrm = Vec3(M.chart.row(i)).normalized();
                Vec3 a = std::abs(nrm[0]) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
                Vec3 e1 = (a - a.dot(nrm) * nrm).normalized();
                M.frame_e1.row(i) = e1.transpose();
                M.frame_e2.row(i) = nrm.cross(e1).transpose();
            }
            break;
        }
    }
    M.volume = M.mass.sum();

    // neighbor lists
    M.neighbors.assign(M.n, {});
    for (const Edge& e : M.edges) {
        M.neighbors[e.a].push_back(e.b);
        M.neighbors[e.b].push_back(e.a);
    }
    for (auto& nb : M.neighbors) std::sort(nb.begin(), nb.end());

    // sphere: two-ring quadratic fit operators for gradient/hessian
    if (spec.kind == ManifoldKind::RoundSphere) {
        M.fit_ops.resize(M.n);
        M.fit_ring.resize(M.n);
        for (int v = 0; v < M.n; ++v) {
            std::vector<int> ring = M.neighbors[v];
            std::vector<bool> seen(M.n, false);
            seen[v] = true;
            for (int u : ring) seen[u] = true;
            std::vector<int> two = ring;
            for (int u : ring)
                for (int t2 : M.neighbors[u])
                    if (!seen[t2]) { seen[t2] = true; two.push_back(t2); }
            std::sort(two.begin(), two.end());
            M.fit_ring[v] = two;
            Mat X(two.size(), 5);
            const Vec3 base = M.point_of(v);
            for (size_t k = 0; k < two.size(); ++k) {
                const Vec3 lv = M.log_pt(base, M.point_of(two[k]));
                const double a1 = lv.dot(M.frame_e1.row(v)), a2 = lv.dot(M.frame_e2.row(v));
                X(k, 0) = a1;
                X(k, 1) = a2;
                X(k, 2) = 0.5 * a1 * a1;
                X(k, 3) = a1 * a2;
                X(k, 4) = 0.5 * a2 * a2;
            }
            M.fit_ops[v] = (X.transpose() * X).ldlt().solve(X.transpose());
        }
    }

    // measure: f = 0
    M.dilaton = Vec::Zero(M.n);
    M.gauge_shift = 0;
    M.density = Vec::Constant(M.n, 1.0 / M.volume);
    M.omega = M.mass / M.volume;
    return M;
}

// Re-weights the measure with a dilaton field.  The additive gauge shift making
// dω a probability measure is recorded; gradients and Hessians of f are
// shift-invariant, so downstream formulas are unaffected.
inline MetricMeasureSpace set_dilaton(const MetricMeasureSpace& base, const Vec& f) {
    require(f.size() == base.n, "set_dilaton: field size mismatch");
    require(f.allFinite(), "set_dilaton: non-finite dilaton");
    MetricMeasureSpace M = base;
    const Vec w = (-f.array()).exp() * base.mass.array() / base.volume;
    const double Z = w.sum();
    const double shift = std::log(Z);        // f~ = f + shift
    M.dilaton = f.array() + shift;
    M.gauge_shift = shift;
    M.omega = w / Z;
    M.density = M.omega.array() / M.mass.array();
    return M;
}

// ---- center of mass ---------------------------------------------------------

inline FrechetMean frechet_mean(const MetricMeasureSpace& M, const std::vector<int>& points) {
    require(!points.empty(), "frechet_mean: empty point set");
    const double r0 = M.localization_radius();

    // iteration seed: the point with the smallest sum of squared distances;
    // the r0 ball condition is certified around the converged mean below
    int seed = points[0];
    double best = std::numeric_limits<double>::infinity();
    for (int c : points) {
        double s = 0;
        for (int p : points) {
            const double d = M.geodesic_distance(c, p);
            s += d * d;
        }
        if (s < best) { best = s; seed = c; }
    }
    for (int p : points)
        require(M.geodesic_distance(seed, p) < 2.0 * r0,
                "frechet_mean: points exceed the localization radius r0 (uniqueness not guaranteed)");

    Vec3 y = M.point_of(seed);
    int iters = 0;
    for (; iters < 200; ++iters) {
        Vec3 step = Vec3::Zero();
        for (int p : points) step += M.log_pt(y, M.point_of(p));
        step /= double(points.size());
        y = M.exp_pt(y, step);
        if (step.norm() < 1e-14 * std::max(1.0, r0)) break;
    }

    // certify the ball condition: every sample within r0 of the minimizer
    for (int p : points)
        require(M.geodesic_distance_pt(y, M.point_of(p)) < r0,
                "frechet_mean: points exceed the localization radius r0 (uniqueness not guaranteed)");

    FrechetMean out;
    out.point = y;
    out.iterations = iters;
    double F = 0;
    for (int p : points) {
        const double d = M.geodesic_distance_pt(y, M.point_of(p));
        F += 0.5 * d * d;
    }
    out.F = F;
    out.coupling_a = F / double(points.size());
    out.nearest_vertex = M.nearest_vertex(y);
    out.frame_offset = M.frame_components(out.nearest_vertex,
                                          M.log_pt(M.point_of(out.nearest_vertex), y));
    return out;
}

// ---- Bakry-Emery lower bound -------------------------------------------------

inline double bakry_emery_K(const MetricMeasureSpace& M) {
    const BilinearField Hf = M.hessian(M.dilaton);
    const Mat ric = M.ricci_frame();
    double K = std::numeric_limits<double>::infinity();
    for (int v = 0; v < M.n; ++v) {
        Mat A = ric + Hf.at(v);
        if (M.dim == 1) {
            K = std::min(K, A(0, 0));
        } else {
            Eigen::SelfAdjointEigenSolver<Mat> es(A);
            K = std::min(K, es.eigenvalues().minCoeff());
        }
    }
    return K;
}

} // namespace wassflow
