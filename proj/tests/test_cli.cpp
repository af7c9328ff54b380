#include "wassflow/experiments.hpp"
#include "wassflow/io.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

using namespace wassflow;

TEST_CASE("config parsing") {
    SECTION("round trip of a full config") {
        const std::string text = R"(
# comment
[experiment]
name = varadhan
seed = 7
out_dir = /tmp/wf_test_out
samples = 4

[manifold]
kind = flat_torus
resolution = 16
lx = 1.0
ly = 2.0

[dilaton]
rule = cos_x
amplitude = 0.25

[heat]
k = 128

[schedules]
t = 0.4, 0.2, 0.1
q = 2, 4, 8

[solver]
sinkhorn_eps = 0.002
tol_varadhan_rel = 0.04
)";
        const Config cfg = parse_config_text(text);
        REQUIRE(cfg.experiment == "varadhan");
        REQUIRE(cfg.seed == 7);
        REQUIRE(cfg.samples == 4);
        REQUIRE(cfg.manifold.kind == ManifoldKind::FlatTorus);
        REQUIRE(cfg.manifold.torus_ly == 2.0);
        REQUIRE(cfg.dilaton_rule == "cos_x");
        REQUIRE(cfg.heat_k == 128);
        REQUIRE(cfg.t_schedule == std::vector<double>{0.4, 0.2, 0.1});
        REQUIRE(cfg.q_list == std::vector<int>{2, 4, 8});
        REQUIRE(cfg.sinkhorn_eps == 0.002);
        REQUIRE(cfg.tol("varadhan_rel", 0.05) == 0.04);
        REQUIRE(cfg.tol("other", 0.05) == 0.05);
    }

    SECTION("unknown keys and sections are rejected") {
        REQUIRE_THROWS_AS(parse_config_text("[experiment]\nbogus = 1\n"), ConfigError);
        REQUIRE_THROWS_AS(parse_config_text("[nope]\na = 1\n"), ConfigError);
        REQUIRE_THROWS_AS(parse_config_text("[manifold]\nkind = klein_bottle\n"), ConfigError);
    }

    SECTION("schedules must decrease strictly") {
        REQUIRE_THROWS_AS(parse_config_text("[schedules]\nt = 0.1, 0.2\n"), ConfigError);
        REQUIRE_THROWS_AS(parse_config_text("[schedules]\nt = 0.1, 0.1\n"), ConfigError);
    }

    SECTION("malformed lines are rejected") {
        REQUIRE_THROWS_AS(parse_config_text("[experiment]\nname varadhan\n"), ConfigError);
        REQUIRE_THROWS_AS(parse_config_text("[heat]\nk = abc\n"), ConfigError);
    }
}

TEST_CASE("dilaton field rules") {
    ManifoldSpec s;
    s.kind = ManifoldKind::FlatTorus;
    s.resolution = 16;
    auto M = build_manifold(s);

    const Vec f = dilaton_field(M, "cos_xy", 0.3);
    REQUIRE(f.size() == M.n);
    REQUIRE(std::abs(f.maxCoeff() - 0.45) < 1e-12);

    REQUIRE_THROWS_AS(dilaton_field(M, "sphere_z", 0.3), ConfigError);
    REQUIRE(dilaton_field(M, "zero", 5.0).norm() == 0.0);
}

TEST_CASE("experiment catalog") {
    REQUIRE(experiment_names().size() == 13);
    Config cfg;
    cfg.experiment = "not-an-experiment";
    cfg.out_dir = "/tmp/wf_test_out_bad";
    REQUIRE_THROWS_AS(run_experiment(cfg), ConfigError);
}

TEST_CASE("fmt17 round trip") {
    Rng rng(3);
    for (int k = 0; k < 200; ++k) {
        const double x = (rng.uniform() - 0.5) * std::pow(10.0, rng.uniform(-12, 12));
        REQUIRE(std::stod(fmt17(x)) == x);
    }
}

TEST_CASE("manifold spec serialization parses back") {
    ManifoldSpec s;
    s.kind = ManifoldKind::RoundSphere;
    s.resolution = 3;
    s.sphere_radius = 2.5;
    const std::string text = manifold_spec_text(s);
    const Config cfg = parse_config_text(text);
    REQUIRE(cfg.manifold.kind == ManifoldKind::RoundSphere);
    REQUIRE(cfg.manifold.resolution == 3);
    REQUIRE(cfg.manifold.sphere_radius == 2.5);
}

TEST_CASE("field CSV export") {
    ManifoldSpec s;
    s.kind = ManifoldKind::Circle;
    s.resolution = 16;
    auto M = build_manifold(s);
    const std::string path = "/tmp/wf_test_field.csv";
    Vec u = M.chart.col(0);
    write_field_csv(path, M, {{"u", &u}});
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    REQUIRE(header == "vertex,x0,u");
    int rows = 0;
    std::string line;
    while (std::getline(in, line)) ++rows;
    REQUIRE(rows == 16);
}

TEST_CASE("minimal heat-axioms run produces its three CSVs and a report") {
    Config cfg;
    cfg.experiment = "heat-axioms";
    cfg.out_dir = "/tmp/wf_test_run";
    cfg.manifold_given = true;
    cfg.manifold.kind = ManifoldKind::FlatTorus;
    cfg.manifold.resolution = 16;
    std::filesystem::remove_all(cfg.out_dir);
    const RunReport r = run_experiment(cfg);
    REQUIRE(r.all_pass());
    REQUIRE(std::filesystem::exists(cfg.out_dir + "/mass.csv"));
    REQUIRE(std::filesystem::exists(cfg.out_dir + "/symmetry.csv"));
    REQUIRE(std::filesystem::exists(cfg.out_dir + "/semigroup.csv"));
    REQUIRE(std::filesystem::exists(cfg.out_dir + "/report.json"));
}
