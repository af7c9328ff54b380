// wassflow — configuration-driven experiment runner.
//
//   wassflow run <config> [--out DIR] [--threads N] [--tol-override k=v]
//   wassflow list

#include "wassflow/experiments.hpp"

#include <CLI11.hpp>

#include <cblas.h>
#include <cstdio>

namespace {

extern "C" void openblas_set_num_threads(int);

int run_command(const std::string& config_path, const std::string& out_override,
                int threads_override, const std::vector<std::string>& tol_overrides) {
    wassflow::Config cfg;
    try {
        cfg = wassflow::parse_config_file(config_path);
        if (!out_override.empty()) cfg.out_dir = out_override;
        if (threads_override > 0) cfg.threads = threads_override;
        for (const auto& kv : tol_overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos)
                throw wassflow::ConfigError("--tol-override expects key=value, got '" + kv + "'");
            cfg.tol_override[kv.substr(0, eq)] = wassflow::detail::to_double(kv.substr(eq + 1));
        }
        cfg.validate();
        if (cfg.experiment.empty())
            throw wassflow::ConfigError("config is missing [experiment] name");
        // heat kernels at times below t_min are rejected deep in the stack; surface
        // the schedule validation here so bad configs exit with code 2
        if (!cfg.t_schedule.empty() && cfg.manifold_given) {
            const auto M = wassflow::build_manifold(cfg.manifold);
            const double tmin = 4.0 * M.max_edge_length * M.max_edge_length;
            if (cfg.t_schedule.back() < tmin)
                throw wassflow::ConfigError(
                    "t schedule reaches below the resolvable scale t_min = " +
                    wassflow::fmt17(tmin));
        }
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const wassflow::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    }

    openblas_set_num_threads(cfg.threads);
    try {
        const wassflow::RunReport r = wassflow::run_experiment(cfg);
        for (const auto& c : r.checks)
            std::printf("%-45s %s  value=%s tol=%s\n", c.name.c_str(),
                        c.pass ? "PASS" : "FAIL", wassflow::fmt17(c.value).c_str(),
                        wassflow::fmt17(c.tolerance).c_str());
        std::printf("report: %s/report.json\n", cfg.out_dir.c_str());
        return 0;
    } catch (const wassflow::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const wassflow::NumericalError& e) {
        std::fprintf(stderr, "numerical failure in experiment '%s': %s\n",
                     cfg.experiment.c_str(), e.what());
        return 3;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"wassflow: weighted heat-kernel embeddings, induced Ricci flow, and "
                 "optimal-transport experiments on catalog manifolds"};
    app.require_subcommand(1);

    auto* list = app.add_subcommand("list", "print the experiment catalog");

    std::string config_path, out_dir;
    int threads = 0;
    std::vector<std::string> tol_overrides;
    auto* run = app.add_subcommand("run", "run one experiment from a config file");
    run->add_option("config", config_path, "flat key = value config file")->required();
    run->add_option("--out", out_dir, "output directory override");
    run->add_option("--threads", threads, "BLAS thread count (default from config; 1 = byte-stable)");
    run->add_option("--tol-override", tol_overrides, "tolerance override key=value (repeatable)");

    CLI11_PARSE(app, argc, argv);

    if (list->parsed()) {
        for (const auto& n : wassflow::experiment_names()) std::printf("%s\n", n.c_str());
        return 0;
    }
    return run_command(config_path, out_dir, threads, tol_overrides);
}
