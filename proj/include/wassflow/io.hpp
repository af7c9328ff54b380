#pragma once

// Flat sectioned key = value configs, CSV emission with 17-significant-digit
// round-trip formatting, and the JSON run report.

#include "wassflow/manifold.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace wassflow {

using Json = nlohmann::ordered_json;

struct Config {
    std::string experiment;
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    int threads = 1;

    ManifoldSpec manifold;
    bool manifold_given = false;

    std::string dilaton_rule = "zero";
    double dilaton_amplitude = 0.0;

    int heat_k = 0;                      // 0: default min(n, 400)
    std::vector<double> t_schedule;      // empty: experiment default
    std::vector<double> eps_schedule;
    std::vector<int> q_list;
    double sinkhorn_eps = 5e-3;
    int samples = 0;                     // pair/sample count override (0: default)

    std::map<std::string, double> tol_override;

    void validate() const {
        for (size_t i = 1; i < t_schedule.size(); ++i)
            if (!(t_schedule[i] < t_schedule[i - 1]))
                throw ConfigError("t schedule must be strictly decreasing");
        for (size_t i = 1; i < eps_schedule.size(); ++i)
            if (!(eps_schedule[i] < eps_schedule[i - 1]))
                throw ConfigError("eps schedule must be strictly decreasing");
        if (sinkhorn_eps <= 0) throw ConfigError("sinkhorn_eps must be positive");
        for (const auto& kv : tol_override)
            if (kv.second <= 0) throw ConfigError("tolerance override must be positive: " + kv.first);
        if (manifold_given) manifold.validate();
    }

    double tol(const std::string& name, double default_value) const {
        auto it = tol_override.find(name);
        return it == tol_override.end() ? default_value : it->second;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

inline double to_double(const std::string& s) {
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (...) {
        throw ConfigError("not a number: '" + s + "'");
    }
}

inline int to_int(const std::string& s) {
    try {
        size_t pos = 0;
        const int v = std::stoi(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (...) {
        throw ConfigError("not an integer: '" + s + "'");
    }
}

} // namespace detail

inline Config parse_config_text(const std::string& text) {
    Config cfg;
    std::string section;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key = value: '" + line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));

        if (section == "experiment" || section.empty()) {
            if (key == "name") cfg.experiment = val;
            else if (key == "seed") cfg.seed = std::uint64_t(std::stoull(val));
            else if (key == "out_dir") cfg.out_dir = val;
            else if (key == "threads") cfg.threads = detail::to_int(val);
            else if (key == "samples") cfg.samples = detail::to_int(val);
            else throw ConfigError("unknown key in [experiment]: " + key);
        } else if (section == "manifold") {
            cfg.manifold_given = true;
            if (key == "kind") {
                if (val == "circle") cfg.manifold.kind = ManifoldKind::Circle;
                else if (val == "flat_torus") cfg.manifold.kind = ManifoldKind::FlatTorus;
                else if (val == "round_sphere") cfg.manifold.kind = ManifoldKind::RoundSphere;
                else throw ConfigError("unsupported manifold kind: " + val);
            } else if (key == "resolution") cfg.manifold.resolution = detail::to_int(val);
            else if (key == "lx") cfg.manifold.torus_lx = detail::to_double(val);
            else if (key == "ly") cfg.manifold.torus_ly = detail::to_double(val);
            else if (key == "radius") cfg.manifold.sphere_radius = detail::to_double(val);
            else if (key == "a0") cfg.manifold.circle_a.a0 = detail::to_double(val);
            else if (key == "a_sin") cfg.manifold.circle_a.c_sin = detail::to_double(val);
            else if (key == "a_cos") cfg.manifold.circle_a.c_cos = detail::to_double(val);
            else throw ConfigError("unknown key in [manifold]: " + key);
        } else if (section == "dilaton") {
            if (key == "rule") cfg.dilaton_rule = val;
            else if (key == "amplitude") cfg.dilaton_amplitude = detail::to_double(val);
            else throw ConfigError("unknown key in [dilaton]: " + key);
        } else if (section == "heat") {
            if (key == "k") cfg.heat_k = detail::to_int(val);
            else throw ConfigError("unknown key in [heat]: " + key);
        } else if (section == "schedules") {
            if (key == "t") {
                cfg.t_schedule.clear();
                for (const auto& s : detail::split(val, ',')) cfg.t_schedule.push_back(detail::to_double(s));
            } else if (key == "eps") {
                cfg.eps_schedule.clear();
                for (const auto& s : detail::split(val, ',')) cfg.eps_schedule.push_back(detail::to_double(s));
            } else if (key == "q") {
                cfg.q_list.clear();
                for (const auto& s : detail::split(val, ',')) cfg.q_list.push_back(detail::to_int(s));
            } else throw ConfigError("unknown key in [schedules]: " + key);
        } else if (section == "solver") {
            if (key == "sinkhorn_eps") cfg.sinkhorn_eps = detail::to_double(val);
            else if (key.rfind("tol_", 0) == 0) cfg.tol_override[key.substr(4)] = detail::to_double(val);
            else throw ConfigError("unknown key in [solver]: " + key);
        } else {
            throw ConfigError("unknown section: [" + section + "]");
        }
    }
    cfg.validate();
    return cfg;
}

inline Config parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

// Dilaton field from the config's closed-form rule.
inline Vec dilaton_field(const MetricMeasureSpace& M, const std::string& rule, double amp) {
    Vec f = Vec::Zero(M.n);
    if (rule == "zero" || amp == 0.0) return f;
    for (int v = 0; v < M.n; ++v) {
        switch (M.spec.kind) {
            case ManifoldKind::Circle:
                if (rule == "cos_x") f[v] = amp * std::cos(M.chart(v, 0));
                else throw ConfigError("dilaton rule '" + rule + "' unsupported on circle");
                break;
            case ManifoldKind::FlatTorus: {
                const double x = M.chart(v, 0) / M.spec.torus_lx;
                const double y = M.chart(v, 1) / M.spec.torus_ly;
                if (rule == "cos_x") f[v] = amp * std::cos(2 * M_PI * x);
                else if (rule == "cos_xy")
                    f[v] = amp * (std::cos(2 * M_PI * x) + 0.5 * std::cos(2 * M_PI * y));
                else throw ConfigError("dilaton rule '" + rule + "' unsupported on flat torus");
                break;
            }
            case ManifoldKind::RoundSphere:
                if (rule == "sphere_z") f[v] = amp * M.chart(v, 2) / M.spec.sphere_radius;
                else throw ConfigError("dilaton rule '" + rule + "' unsupported on sphere");
                break;
        }
    }
    return f;
}

// ---- outputs -------------------------------------------------------------------

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& columns) : out_(path) {
        if (!out_) throw std::runtime_error("cannot open for writing: " + path);
        for (size_t i = 0; i < columns.size(); ++i)
            out_ << (i ? "," : "") << columns[i];
        out_ << "\n";
    }
    void row(const std::vector<double>& values) {
        for (size_t i = 0; i < values.size(); ++i)
            out_ << (i ? "," : "") << fmt17(values[i]);
        out_ << "\n";
    }
    void row_mixed(const std::vector<std::string>& values) {
        for (size_t i = 0; i < values.size(); ++i)
            out_ << (i ? "," : "") << values[i];
        out_ << "\n";
    }

private:
    std::ofstream out_;
};

struct Check {
    std::string name;
    double value = 0;
    double tolerance = 0;
    std::string comparator = "<=";   // value <= tolerance, ">=", or "abs<=" etc.
    bool pass = false;
};

inline Check check_le(const std::string& name, double value, double tol) {
    return {name, value, tol, "<=", value <= tol};
}
inline Check check_ge(const std::string& name, double value, double tol) {
    return {name, value, tol, ">=", value >= tol};
}
inline Check check_true(const std::string& name, bool ok) {
    return {name, ok ? 1.0 : 0.0, 1.0, "==", ok};
}

struct RunReport {
    std::string experiment;
    std::vector<Check> checks;
    Json data = Json::object();
    Json manifest = Json::object();

    bool all_pass() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }

    Json to_json() const {
        Json j;
        j["experiment"] = experiment;
        j["pass"] = all_pass();
        Json arr = Json::array();
        for (const auto& c : checks) {
            Json e;
            e["name"] = c.name;
            e["value"] = c.value;
            e["comparator"] = c.comparator;
            e["tolerance"] = c.tolerance;
            e["pass"] = c.pass;
            arr.push_back(e);
        }
        j["checks"] = arr;
        j["data"] = data;
        j["manifest"] = manifest;
        return j;
    }
};

inline void write_report(const RunReport& r, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir + "/report.json");
    out << r.to_json().dump(2) << "\n";
}

// Serialize the manifold spec as a plain-text config block.
inline std::string manifold_spec_text(const ManifoldSpec& s) {
    std::ostringstream os;
    os << "[manifold]\n";
    os << "kind = " << to_string(s.kind) << "\n";
    os << "resolution = " << s.resolution << "\n";
    switch (s.kind) {
        case ManifoldKind::FlatTorus:
            os << "lx = " << fmt17(s.torus_lx) << "\n";
            os << "ly = " << fmt17(s.torus_ly) << "\n";
            break;
        case ManifoldKind::RoundSphere:
            os << "radius = " << fmt17(s.sphere_radius) << "\n";
            break;
        case ManifoldKind::Circle:
            os << "a0 = " << fmt17(s.circle_a.a0) << "\n";
            os << "a_sin = " << fmt17(s.circle_a.c_sin) << "\n";
            os << "a_cos = " << fmt17(s.circle_a.c_cos) << "\n";
            break;
    }
    return os.str();
}

// Fields exportable as CSV: vertex index, chart coordinates, value columns.
inline void write_field_csv(const std::string& path, const MetricMeasureSpace& M,
                            const std::vector<std::pair<std::string, const Vec*>>& fields) {
    std::vector<std::string> cols = {"vertex"};
    for (int d = 0; d < M.chart.cols(); ++d) cols.push_back("x" + std::to_string(d));
    for (const auto& f : fields) cols.push_back(f.first);
    CsvWriter csv(path, cols);
    for (int v = 0; v < M.n; ++v) {
        std::vector<double> row = {double(v)};
        for (int d = 0; d < M.chart.cols(); ++d) row.push_back(M.chart(v, d));
        for (const auto& f : fields) row.push_back((*f.second)[v]);
        csv.row(row);
    }
}

} // namespace wassflow
