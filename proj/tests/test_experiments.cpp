#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <spinlab/experiments.hpp>

using namespace spinlab;

namespace {

ExperimentConfig config_from(const std::string& text) {
    std::istringstream is(text);
    return ExperimentConfig::from_ini(IniFile::parse(is));
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("ini parsing keeps sections and trims noise") {
    std::istringstream is(
        "# leading comment\n"
        "[experiment]\n"
        "name = demo \n"
        "seed=42\n"
        "\n"
        "[model]\n"
        "mixture = 0, 1  # not a comment, parsed as part of the value\n"
        "; alt comment\n");
    // inline trailing comments are not supported on purpose; the value above
    // fails number parsing and must name the key
    auto ini = IniFile::parse(is);
    CHECK(ini.get("experiment", "name") == "demo");
    CHECK(ini.get("experiment", "seed") == "42");
    CHECK_FALSE(ini.get("experiment", "missing").has_value());
    CHECK_FALSE(ini.get("nope", "name").has_value());

    std::istringstream bad1("[experiment\nname = x\n");
    CHECK_THROWS_AS(IniFile::parse(bad1), ConfigError);
    std::istringstream bad2("[a]\njust a line\n");
    CHECK_THROWS_AS(IniFile::parse(bad2), ConfigError);
    std::istringstream bad3("[a]\n= value\n");
    CHECK_THROWS_AS(IniFile::parse(bad3), ConfigError);
}

TEST_CASE("config errors name the offending key") {
    try {
        config_from("[model]\nmixture = 0, what\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("model.mixture") != std::string::npos);
    }
    try {
        config_from("[experiment]\nseed = -x\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("experiment.seed") != std::string::npos);
    }
    CHECK_THROWS_AS(config_from("[model]\nc = 0.6\n"), ConfigError);
    CHECK_THROWS_AS(config_from("[model]\na = 1.5\n"), ConfigError);
    CHECK_THROWS_AS(config_from("[model]\np_max = 0\n"), ConfigError);
    CHECK_THROWS_AS(config_from("[model]\nmixture = -1\n"), ConfigError);
    CHECK_THROWS_AS(config_from("[experiment]\nthreads = 0\n"), ConfigError);
}

TEST_CASE("config defaults and typed getters") {
    auto cfg = config_from("[experiment]\nname = t1\n[custom]\nxs = 1.5, 2.5\nns = 3:4, 5:6\n");
    CHECK(cfg.name == "t1");
    CHECK(cfg.seed == 1);
    CHECK(cfg.threads == 1);
    CHECK(cfg.mix == Mixture::validated({0.0, 1.0}));
    CHECK(cfg.pert_enabled);
    CHECK(cfg.pert_spec().enabled);
    CHECK(cfg.pert_spec().p_max == 4);

    CHECK(cfg.get_long("custom", "missing", 7) == 7);
    CHECK(cfg.get_double("custom", "missing", 0.5) == 0.5);
    CHECK(cfg.get_double_list("custom", "xs", "0") == std::vector<double>{1.5, 2.5});
    auto pairs = cfg.get_pair_list("custom", "ns", "1:1");
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[1] == std::pair{5, 6});
    CHECK_THROWS_AS(cfg.get_pair_list("custom", "xs", "1:1"), ConfigError);

    auto off = config_from("[model]\npert = off\n");
    CHECK_FALSE(off.pert_spec().enabled);

    auto ms = config_from("[x]\nmixtures = 0,1 | 1 | 0,0,2\n").get_mixture_list("x", "mixtures");
    REQUIRE(ms.size() == 3);
    CHECK(ms[0] == Mixture::pure(2));
    CHECK(ms[1] == Mixture::pure(1));
    CHECK(ms[2] == Mixture::pure(3, 2.0));
}

TEST_CASE("runners write byte-stable csv and a summary") {
    auto dir = std::filesystem::temp_directory_path() / "spinlab_exp_test";
    std::filesystem::remove_all(dir);
    auto cfg = config_from(
        "[experiment]\nname = unit\nseed = 5\n"
        "[model]\nmixture = 0, 1\n"
        "[coarea-check]\ndims = 2, 3\nhalf_widths = 0.5\n");
    cfg.out_dir = (dir / "a").string();
    auto first = run_experiment(cfg, "coarea-check");
    CHECK(first.pass);
    CHECK(std::filesystem::exists(first.csv_path));
    std::string payload = read_file(first.csv_path);
    CHECK(payload.find("schema: spinlab.coarea-check.v1") != std::string::npos);
    CHECK(payload.find("\nn,m,half_width") != std::string::npos);

    cfg.out_dir = (dir / "b").string();
    auto second = run_experiment(cfg, "coarea-check");
    CHECK(read_file(second.csv_path) == payload);

    auto summary_path = std::filesystem::path(cfg.out_dir) / "unit" / "summary.json";
    REQUIRE(std::filesystem::exists(summary_path));
    std::ifstream is(summary_path);
    nlohmann::json root;
    is >> root;
    CHECK(root["experiment"] == "unit");
    CHECK(root["results"]["coarea-check"]["pass"] == true);

    CHECK_THROWS_AS(run_experiment(cfg, "definitely-not-real"), ConfigError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("parallel cell execution is schedule independent") {
    std::vector<long> out(64, -1);
    exp_detail::for_each_cell(64, 4, [&](long i) { out[static_cast<std::size_t>(i)] = i * i; });
    for (long i = 0; i < 64; ++i) CHECK(out[static_cast<std::size_t>(i)] == i * i);

    CHECK_THROWS_AS(exp_detail::for_each_cell(8, 3,
                                              [&](long i) {
                                                  if (i == 5) throw DomainError("boom");
                                              }),
                    DomainError);
}

TEST_CASE("tensor budget precheck names the size") {
    auto mix = Mixture::pure(3);
    setenv("SPINLAB_MEM_BUDGET_MB", "1", 1);
    try {
        ensure_tensor_budget(128, mix, PerturbSpec::off());
        FAIL("expected ResourceLimit");
    } catch (const ResourceLimit& e) {
        CHECK(std::string(e.what()).find("n=128") != std::string::npos);
    }
    unsetenv("SPINLAB_MEM_BUDGET_MB");
    ensure_tensor_budget(16, mix, PerturbSpec::standard(4));  // fits, no throw
}
