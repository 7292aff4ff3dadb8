#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "statctrl/experiment.hpp"
#include "statctrl/io.hpp"

using namespace statctrl;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kDir = "/tmp/statctrl_test_exp";

// small but complete triad experiment: every pipeline stage runs in seconds
std::string tiny_config(const std::string& extra = "") {
  return R"({
    "system": {"type": "triad",
               "d": [1, 1, 1], "L": [0, 0, 0], "B": [0.2, -0.1, -0.1],
               "F": [0.3, 0.3, 0.3], "sigma": [0.2, 0.2, 0.2]},
    "perturbation": [0, 0, -0.2],
    "protocol": {"T_spin": 5, "T_pert": 2, "T": 1, "dt": 0.01, "dt_out": 0.1},
    "control": {"alpha": [1, 1, 1], "k_T": 0, "dt": 0.02},
    "kernels": {"estimate": {"T_sample": 100, "dtau": 0.02, "tau_max": 2,
                             "burn_in": 5, "dt": 0.01}},
    "ensemble": {"M": 200, "chunk": 64},
    "seed": 7)" +
         extra + "\n}";
}

bool check_failed(const ValidationReport& r, const std::string& name,
                  const std::string& detail_part) {
  for (const auto& c : r.checks)
    if (c.name == name) return !c.passed && c.detail.find(detail_part) != std::string::npos;
  return false;
}

std::string slurp(const fs::path& p) { return read_text_file(p.string()); }

}  // namespace

TEST_CASE("presets parse, validate, and carry their defining parameters") {
  for (const auto& name : preset_names()) {
    auto cfg = parse_config("{\"preset\": \"" + name + "\"}");
    CHECK(cfg.preset == name);
    CHECK(validate_config(cfg).passed());
  }

  auto r1 = make_preset("triad-regime1");
  CHECK(r1.system.dim == 3);
  CHECK(r1.system.uniform_damping);
  CHECK(r1.system.d == 1.0);
  CHECK(r1.system.F_eq[2] == -1.0);
  CHECK(r1.dF_p[2] == -4.0);
  CHECK(r1.dF_p[0] == 0.0);
  CHECK(r1.control.alpha == std::vector<double>(3, 0.4));
  CHECK(r1.protocol.T == 6.0);
  CHECK(r1.low_order_modes == std::vector<int>{2});

  auto r2 = make_preset("triad-regime2");
  CHECK(r2.system.sigma[0] == 2.0);
  CHECK(r2.system.sigma[1] == 1.0);
  CHECK(r2.dF_p[0] == 2.0);

  auto ae = make_preset("triad-alt-eq");
  CHECK(ae.dF_p[2] == -1.5);
  CHECK(ae.control.dt == 2e-4);

  auto l96 = make_preset("lorenz96-5to8");
  CHECK(l96.system.dim == 40);
  CHECK(l96.system.F_eq[0] == 5.0);
  CHECK(l96.dF_p[0] == 3.0);
  CHECK(l96.translation_invariant);
  CHECK(l96.protocol.T == 10.0);
}

TEST_CASE("config parsing rejects malformed documents") {
  CHECK_THROWS_WITH_AS(parse_config("{"), doctest::Contains("config parse error"),
                       std::runtime_error);
  CHECK_THROWS_AS(parse_config("{\"preset\": \"no-such\"}"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config("{\"preset\": \"triad-regime1\", \"bogus\": 1}"),
                       doctest::Contains("bogus"), std::runtime_error);
  CHECK_THROWS_WITH_AS(
      parse_config("{\"preset\": \"triad-regime1\", \"system\": {\"type\": \"triad\"}}"),
      doctest::Contains("mutually exclusive"), std::runtime_error);
  CHECK_THROWS_AS(parse_config("{}"), std::runtime_error);

  // custom systems must spell out the control weights and horizon
  std::string no_alpha = R"({"system": {"type": "triad", "d": [1,1,1], "L": [0,0,0],
    "B": [0.2,-0.1,-0.1], "F": [0.3,0.3,0.3], "sigma": [0.2,0.2,0.2]},
    "protocol": {"T": 1}})";
  CHECK_THROWS_WITH_AS(parse_config(no_alpha), doctest::Contains("control.alpha"),
                       std::runtime_error);
}

TEST_CASE("preset overrides apply on top of preset defaults") {
  auto cfg = parse_config(R"({"preset": "triad-regime1",
                              "strategy": "high-closure",
                              "ensemble": {"M": 123},
                              "inversion": {"low_order_modes": [1, 3]},
                              "seed": 99})");
  CHECK(cfg.strategy == "high-closure");
  CHECK(cfg.ensemble.n_samples == 123);
  CHECK(cfg.seed == 99);
  CHECK(cfg.low_order_modes == std::vector<int>{0, 2});  // stored 0-based
  CHECK(cfg.system.F_eq[0] == 1.0);                      // preset system untouched
}

TEST_CASE("strategy names map to the four concrete schemes") {
  CHECK(parse_strategy("low-lr").order == OrderVariant::Low);
  CHECK(parse_strategy("low-lr").mean_model == MeanModel::LinearResponse);
  CHECK(parse_strategy("high-closure").order == OrderVariant::High);
  CHECK(parse_strategy("high-closure").mean_model == MeanModel::MeanClosure);
  CHECK(parse_strategy("low-closure").mean_model == MeanModel::MeanClosure);
  CHECK(parse_strategy("high-lr").order == OrderVariant::High);
  CHECK_THROWS_AS(parse_strategy("all"), std::invalid_argument);
  CHECK_THROWS_AS(parse_strategy("optimal"), std::invalid_argument);
}

TEST_CASE("semantic validation pinpoints the broken setting") {
  auto cfg = make_preset("triad-regime1");
  cfg.control.alpha[0] = -1.0;
  CHECK(check_failed(validate_config(cfg), "control weights",
                     "nonpositive control weight for mode 1"));

  cfg = make_preset("triad-regime1");
  cfg.low_order_modes = {5};
  CHECK(check_failed(validate_config(cfg), "inversion overrides", "out of range"));
  cfg.low_order_modes = {1, 1};
  CHECK(check_failed(validate_config(cfg), "inversion overrides", "listed twice"));

  cfg = make_preset("triad-regime1");
  cfg.kernels.estimate.dtau = 0.05;  // exact multiple of control.dt = 0.01 is fine
  CHECK(validate_config(cfg).passed());
  cfg.kernels.estimate.dtau = 0.025;  // 2.5 control steps is not
  CHECK(check_failed(validate_config(cfg), "kernel lag resolution", "exceeds control step"));

  cfg = make_preset("triad-regime1");
  cfg.ensemble.n_samples = 1;
  CHECK(check_failed(validate_config(cfg), "ensemble size", "at least 2"));

  // non-uniform damping admits no scalar energy controller
  TriadParams p;
  p.d = {1.0, 2.0, 3.0};
  p.L = {0.0, 0.0, 0.0};
  p.B = {0.2, -0.1, -0.1};
  p.F = {0.3, 0.3, 0.3};
  p.sigma = {0.2, 0.2, 0.2};
  cfg = make_preset("triad-regime1");
  cfg.system = make_triad(p);
  CHECK(check_failed(validate_config(cfg), "uniform damping", "requires uniform damping"));
  cfg.strategy = "none";
  CHECK(validate_config(cfg).passed());
}

TEST_CASE("full pipeline writes every artifact it lists") {
  fs::remove_all(kDir + "/run1");
  auto cfg = parse_config(tiny_config());
  cfg.output_dir = kDir + "/run1";
  REQUIRE(validate_config(cfg).passed());
  auto res = run_experiment(cfg);

  CHECK(res.strategies_run ==
        std::vector<std::string>{"low-lr", "low-closure", "high-lr", "high-closure"});
  CHECK(res.E_eq > 0.0);

  json man = json::parse(slurp(fs::path(cfg.output_dir) / "manifest.json"));
  CHECK(man.at("format") == 1);
  CHECK(man.at("preset") == "custom");
  CHECK(man.at("seed") == 7);
  for (const auto& key : {"config", "versions", "scalars", "outputs", "wall_times_seconds"})
    CHECK(man.contains(key));
  for (const auto& f : man.at("outputs")) {
    INFO("listed output ", f.get<std::string>());
    CHECK(fs::exists(fs::path(cfg.output_dir) / f.get<std::string>()));
  }
  for (const auto& f :
       {"equilibrium.json", "control.csv", "series_optimal.csv", "series_uncontrolled.csv",
        "series_high-closure.csv", "forcing_low-lr.csv", "diagnostics_high-lr.json",
        "covariance_uncontrolled.csv", "empirical_control_low-closure.csv",
        "kernels/response_meta.json", "kernels/response_cov.csv"})
    CHECK(fs::exists(fs::path(cfg.output_dir) / f));
  CHECK_FALSE(fs::exists(fs::path(cfg.output_dir) / "FAILED"));

  json eq = json::parse(slurp(fs::path(cfg.output_dir) / "equilibrium.json"));
  CHECK(eq.at("E_eq").get<double>() > 0.0);
  CHECK(eq.at("du0").size() == 3);
}

TEST_CASE("same seed reproduces every byte except the wall times") {
  fs::remove_all(kDir + "/rep1");
  fs::remove_all(kDir + "/rep2");
  auto cfg = parse_config(tiny_config());
  cfg.output_dir = kDir + "/rep1";
  run_experiment(cfg);
  cfg.output_dir = kDir + "/rep2";
  run_experiment(cfg);

  for (const auto& entry : fs::recursive_directory_iterator(kDir + "/rep1")) {
    if (!entry.is_regular_file()) continue;
    fs::path rel = fs::relative(entry.path(), kDir + "/rep1");
    fs::path other = fs::path(kDir + "/rep2") / rel;
    REQUIRE(fs::exists(other));
    if (rel == "manifest.json") {
      json a = json::parse(slurp(entry.path()));
      json b = json::parse(slurp(other));
      a.erase("wall_times_seconds");
      b.erase("wall_times_seconds");
      CHECK(a == b);
    } else {
      INFO("file ", rel.string());
      CHECK(slurp(entry.path()) == slurp(other));
    }
  }
}

TEST_CASE("zero perturbation leaves the controlled ensemble untouched") {
  fs::remove_all(kDir + "/zero");
  auto cfg = parse_config(tiny_config(R"(, "perturbation": [0, 0, 0], "strategy": "low-lr")"));
  cfg.output_dir = kDir + "/zero";
  run_experiment(cfg);

  auto controlled = slurp(fs::path(cfg.output_dir) / "series_low-lr.csv");
  auto uncontrolled = slurp(fs::path(cfg.output_dir) / "series_uncontrolled.csv");
  CHECK(controlled == uncontrolled);

  // every kappa and du column is exactly zero on every row
  auto forcing = slurp(fs::path(cfg.output_dir) / "forcing_low-lr.csv");
  std::istringstream is(forcing);
  std::string line;
  std::getline(is, line);
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    CHECK(line.substr(line.find(',')) == ",0,0,0,0,0,0");
    ++rows;
  }
  CHECK(rows > 1);
}

TEST_CASE("loaded kernels reproduce the estimated-kernel forcing bit for bit") {
  REQUIRE(fs::exists(kDir + "/run1/kernels/response_meta.json"));  // from the pipeline case
  fs::remove_all(kDir + "/run_loaded");
  auto cfg = parse_config(tiny_config());
  cfg.kernels.load = true;
  cfg.kernels.load_dir = kDir + "/run1/kernels";
  cfg.output_dir = kDir + "/run_loaded";
  run_experiment(cfg);

  for (const auto& name : {"low-lr", "low-closure", "high-lr", "high-closure"}) {
    auto a = slurp(fs::path(kDir + "/run1") / ("forcing_" + std::string(name) + ".csv"));
    auto b = slurp(fs::path(kDir + "/run_loaded") / ("forcing_" + std::string(name) + ".csv"));
    CHECK(a == b);
  }
}

TEST_CASE("kernels estimated for a different system are refused") {
  REQUIRE(fs::exists(kDir + "/run1/kernels/response_meta.json"));
  fs::remove_all(kDir + "/run_mismatch");
  std::string other = R"({
    "system": {"type": "triad",
               "d": [1, 1, 1], "L": [0, 0, 0], "B": [0.2, -0.1, -0.1],
               "F": [0.31, 0.3, 0.3], "sigma": [0.2, 0.2, 0.2]},
    "perturbation": [0, 0, -0.2],
    "protocol": {"T_spin": 1, "T_pert": 1, "T": 1, "dt": 0.01, "dt_out": 0.1},
    "control": {"alpha": [1, 1, 1], "dt": 0.02},
    "ensemble": {"M": 50, "chunk": 64},
    "seed": 7})";
  auto cfg = parse_config(other);
  cfg.kernels.load = true;
  cfg.kernels.load_dir = kDir + "/run1/kernels";
  cfg.output_dir = kDir + "/run_mismatch";
  CHECK_THROWS_WITH_AS(run_experiment(cfg), doctest::Contains("parameter hash mismatch"),
                       std::runtime_error);
  CHECK(fs::exists(fs::path(cfg.output_dir) / "FAILED"));
  CHECK(slurp(fs::path(cfg.output_dir) / "FAILED").find("parameter hash mismatch") !=
        std::string::npos);
}
