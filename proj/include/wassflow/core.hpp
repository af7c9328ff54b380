#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace wassflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline void check_numerics(bool cond, const std::string& msg) {
    if (!cond) throw NumericalError(msg);
}

// Fixed-width float formatting: 17 significant digits round-trip exactly.
inline std::string fmt17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return std::string(buf);
}

// Deterministic 64-bit RNG used everywhere randomness is needed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : s_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

    std::uint64_t next_u64() {
        // splitmix64
        std::uint64_t z = (s_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double a, double b) { return a + (b - a) * uniform(); }
    int uniform_int(int n) { return int(next_u64() % std::uint64_t(n)); }

private:
    std::uint64_t s_;
};

// Least-squares linear fit y ~ a + b t; returns {a, b}.
inline std::pair<double, double> linear_fit(const std::vector<double>& t,
                                            const std::vector<double>& y) {
    require(t.size() == y.size() && t.size() >= 2, "linear_fit: need >= 2 points");
    double n = double(t.size()), st = 0, sy = 0, stt = 0, sty = 0;
    for (size_t i = 0; i < t.size(); ++i) {
        st += t[i]; sy += y[i]; stt += t[i] * t[i]; sty += t[i] * y[i];
    }
    double den = n * stt - st * st;
    double b = (n * sty - st * sy) / den;
    double a = (sy - b * st) / n;
    return {a, b};
}

// Extrapolate a sequence sampled on a decreasing geometric schedule to t = 0,
// assuming y(t) = y0 - C exp(-alpha/t).  Model matched to the superexponential
// approach of heat-kernel metric quantities; falls back to the last value when
// the three points are not consistent with the model.
inline double geometric_tail_extrapolate(double t1, double y1, double t2, double y2,
                                         double t3, double y3) {
    // t1 < t2 < t3 (t3 = 4 t1, t2 = 2 t1 for a ratio-2 schedule)
    (void)t2; (void)t3;
    (void)t1;
    const double d1 = y1 - y2;   // small difference (closest to limit)
    const double d2 = y2 - y3;
    if (std::abs(d2) < 1e-300 || d1 * d2 <= 0.0) return y1;
    const double ratio = d1 / d2;           // = v + v^2 with v = exp(-alpha/(4 t1))
    if (!(ratio > 0.0) || ratio >= 1.0) return y1;
    const double v = (-1.0 + std::sqrt(1.0 + 4.0 * ratio)) / 2.0;
    const double u = v * v * v * v;         // exp(-alpha/t1)
    const double denom = std::sqrt(u) - u;
    if (denom <= 0.0) return y1;
    const double C = d1 / denom;
    return y1 + C * u;
}

} // namespace wassflow
