#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unistd.h>

#include <json.hpp>

#include "mcn/cli.hpp"
#include "mcn/io.hpp"

using namespace mcn;
using cli::RunManifest;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("mcn_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::vector<std::string>> read_rows(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    rows.push_back(fields);
  }
  return rows;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name) {
  const auto it = std::find(header.begin(), header.end(), name);
  REQUIRE(it != header.end());
  return static_cast<std::size_t>(it - header.begin());
}

double cell(const std::vector<std::vector<std::string>>& rows, std::size_t row, const std::string& name) {
  return std::stod(rows.at(row).at(column(rows.at(0), name)));
}

RunManifest manifest(const std::string& text, const fs::path& out) {
  auto m = RunManifest::parse(text, out);
  m.output_dir = out;
  return m;
}

}  // namespace

TEST_CASE("sha256 of known strings") {
  CHECK(cli::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(cli::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("manifest: defaults and unit conversion") {
  const auto m = RunManifest::parse("{}");
  REQUIRE(m.drives.size() == 1);
  CHECK(m.drives[0].delta_p == 18.4);
  CHECK(m.drives[0].tau_p == doctest::Approx(130e-9));
  CHECK(m.geom.sigma_a == doctest::Approx(1.7e-6));
  CHECK(m.geom.core_radius == doctest::Approx(10e-6));
  CHECK(m.beta_at(18.4) == doctest::Approx(0.182 - 6.1e-3 * 18.4));
  CHECK(m.sha256 == cli::sha256_hex("{}"));

  const auto g = RunManifest::parse(R"({"geometry": {"sigma_a_um": 2.0, "length_cm": 1.5}, "beta": 0.1,
                                        "drives": [{"omega_p0_gamma": 3, "delta_p_gamma": 20, "tau_p_ns": 50}]})");
  CHECK(g.geom.sigma_a == doctest::Approx(2e-6));
  CHECK(g.geom.length == doctest::Approx(1.5e-2));
  CHECK(g.drives[0].tau_p == doctest::Approx(50e-9));
  CHECK(g.beta_at(7.0) == 0.1);
}

TEST_CASE("manifest: unknown keys and bad values are rejected") {
  CHECK_THROWS_AS(RunManifest::parse(R"({"bogus": 1})"), cli::ManifestError);
  CHECK_THROWS_AS(RunManifest::parse(R"({"geometry": {"sigma_a": 1.7}})"), cli::ManifestError);
  CHECK_THROWS_AS(RunManifest::parse(R"({"drives": [{"delta_p_gamma": 10, "tau": 1}]})"), cli::ManifestError);
  CHECK_THROWS_AS(RunManifest::parse(R"({"synth": {"n_shot": 10}})"), cli::ManifestError);
  CHECK_THROWS_AS(RunManifest::parse(R"({"drives": []})"), cli::ManifestError);
  CHECK_THROWS_AS(RunManifest::parse(R"({"n_atoms": [0.5]})"), cli::ManifestError);
  CHECK_THROWS_AS(RunManifest::parse(R"({"synth": {"snr": "loud"}})"), cli::ManifestError);
  CHECK_THROWS_AS(RunManifest::parse(R"({"map": {"n_points": 0}})"), cli::ManifestError);
  CHECK_THROWS_AS(RunManifest::parse("{"), cli::ManifestError);
  CHECK(std::isinf(RunManifest::parse(R"({"synth": {"snr": "inf"}})").synth.snr));
}

TEST_CASE("model: empty N list gives a header-only table") {
  TempDir dir("empty");
  const auto r = cli::cmd_model(manifest(R"({"n_atoms": []})", dir.path));
  CHECK(r.exit_code == 0);
  const auto rows = read_rows(dir.path / "model.csv");
  CHECK(rows.size() == 1);
}

TEST_CASE("model: reference row") {
  TempDir dir("ref");
  const auto r = cli::cmd_model(manifest(R"({"n_atoms": [83000, 83000], "beta": 0.07})", dir.path));
  REQUIRE(r.exit_code == 0);
  const auto rows = read_rows(dir.path / "model.csv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[1] == rows[2]);
  const double rate = cell(rows, 1, "mean_rate_r_rad_s");
  const double n_mc = cell(rows, 1, "n_mc");
  CHECK(rate == doctest::Approx(2 * std::numbers::pi * 45.4e3).epsilon(0.01));
  CHECK(n_mc == doctest::Approx(100.4).epsilon(0.01));
  const double l = std::log(2 * std::numbers::pi * 83000.0);
  CHECK(cell(rows, 1, "mean_delay_s") == doctest::Approx(l * l / (16 * n_mc * rate)).epsilon(1e-12));
  CHECK(rows[1].back().empty());
}

TEST_CASE("model: failing rows are flagged and give exit 2") {
  TempDir dir("fail");
  auto m = manifest(R"({"n_atoms": [83000]})", dir.path);
  m.drives.push_back(m.drives[0]);
  m.drives[1].tau_p = 0.0;
  const auto r = cli::cmd_model(m);
  CHECK(r.exit_code == 2);
  const auto rows = read_rows(dir.path / "model.csv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[1].back().empty());
  CHECK(!rows[2].back().empty());
}

TEST_CASE("analyze: missing traces fail") {
  TempDir dir("noshots");
  auto m = manifest(R"({})", dir.path);
  m.data.trace_dir = dir.path;
  m.data.run_id = "none";
  CHECK_THROWS(cli::cmd_analyze(m));
}

TEST_CASE("synth then analyze recovers the run and is reproducible") {
  TempDir dir("pipeline");
  const std::string text = R"({"n_atoms": [40000, 83000], "beta": 0.07,
                               "synth": {"run_id": "t", "n_shots": 100, "snr": 10}})";
  auto m = manifest(text, dir.path);
  m.data.trace_dir = dir.path;
  m.data.run_id = "t";
  REQUIRE(cli::cmd_synth(m).exit_code == 0);
  CHECK(fs::exists(dir.path / "t_shot99.csv"));
  CHECK(fs::exists(dir.path / "t_delays.csv"));

  cli::CommandOptions one;
  REQUIRE(cli::cmd_analyze(m, one).exit_code == 0);
  const auto stats = read_rows(dir.path / "analyze_stats.csv");
  const auto truth = read_rows(dir.path / "t_truth.csv");
  double mean_truth = 0.0;
  for (std::size_t i = 1; i < truth.size(); ++i) mean_truth += std::stod(truth[i][1]);
  mean_truth /= static_cast<double>(truth.size() - 1);
  CHECK(cell(stats, 1, "n_shots") == 100);
  CHECK(cell(stats, 1, "mean_t_d_s") == doctest::Approx(mean_truth).epsilon(0.01));

  const auto first = io::read_file(dir.path / "analyze_features.csv");
  cli::CommandOptions four;
  four.jobs = 4;
  cli::cmd_analyze(m, four);
  CHECK(io::read_file(dir.path / "analyze_features.csv") == first);

  const auto shot = io::read_file(dir.path / "t_shot17.csv");
  cli::cmd_synth(m, four);
  CHECK(io::read_file(dir.path / "t_shot17.csv") == shot);
  cli::CommandOptions reseed;
  reseed.seed = 99;
  cli::cmd_synth(m, reseed);
  CHECK(io::read_file(dir.path / "t_shot17.csv") != shot);
}

TEST_CASE("calibrate recovers the injected beta law") {
  TempDir dir("cal");
  const std::string text = R"({"n_atoms": [20000, 40000, 83000, 150000], "beta_law": {"intercept": 0.2,
                               "slope_per_gamma": -0.005},
                               "drives": [{"delta_p_gamma": 10}, {"delta_p_gamma": 16}, {"delta_p_gamma": 24}]})";
  auto m = manifest(text, dir.path);
  REQUIRE(cli::cmd_synth(m).exit_code == 0);
  m.data.delays = dir.path / "synth_delays.csv";
  REQUIRE(cli::cmd_calibrate(m).exit_code == 0);
  const auto betas = read_rows(dir.path / "calibrate_beta.csv");
  REQUIRE(betas.size() == 4);
  for (std::size_t i = 1; i < betas.size(); ++i) {
    const double delta = cell(betas, i, "delta_p_gamma");
    CHECK(cell(betas, i, "beta") == doctest::Approx(0.2 - 0.005 * delta).epsilon(1e-6));
  }
  const auto law = nlohmann::json::parse(io::read_file(dir.path / "calibrate_law.json"));
  CHECK(law["intercept"].get<double>() == doctest::Approx(0.2).epsilon(1e-5));
  CHECK(law["slope_per_gamma"].get<double>() == doctest::Approx(-0.005).epsilon(1e-4));
  CHECK(law["provenance"]["manifest_sha256"] == m.sha256);

  const auto collapse = read_rows(dir.path / "calibrate_collapse.csv");
  for (std::size_t i = 1; i < collapse.size(); ++i)
    CHECK(cell(collapse, i, "rate_ratio") == doctest::Approx(cell(collapse, i, "n_mc")).epsilon(1e-6));
}

TEST_CASE("calibrate refuses the law with a single detuning") {
  TempDir dir("single");
  auto m = manifest(R"({"n_atoms": [20000, 83000]})", dir.path);
  cli::cmd_synth(m);
  m.data.delays = dir.path / "synth_delays.csv";
  const auto r = cli::cmd_calibrate(m);
  CHECK(r.exit_code == 2);
  REQUIRE(!r.messages.empty());
  CHECK(r.messages.back().find("beta law not fitted") != std::string::npos);
  CHECK(fs::exists(dir.path / "calibrate_beta.csv"));
  CHECK(!fs::exists(dir.path / "calibrate_law.json"));
}

TEST_CASE("map: single cell grid") {
  TempDir dir("cell");
  const auto r = cli::cmd_map(manifest(R"({"map": {"n_points": 1, "delta_points": 1, "n_min": 83000,
                                                   "delta_min_gamma": 18.4}})",
                                       dir.path));
  CHECK(r.exit_code == 0);
  const auto rows = read_rows(dir.path / "map_cells.csv");
  REQUIRE(rows.size() == 2);
  CHECK(cell(rows, 1, "n_atoms") == 83000);
  CHECK(cell(rows, 1, "valid") == 1);
  CHECK(read_rows(dir.path / "map_boundary_attenuation.csv").size() == 1);
}

TEST_CASE("map: both boundaries and bit-identical reruns") {
  TempDir dir("map");
  auto m = manifest(R"({"map": {"n_points": 8, "delta_points": 8}})", dir.path);
  REQUIRE(cli::cmd_map(m).exit_code == 0);
  const auto att = read_rows(dir.path / "map_boundary_attenuation.csv");
  const auto eq = read_rows(dir.path / "map_boundary_equal.csv");
  CHECK(att.size() > 1);
  CHECK(eq.size() > 1);
  for (std::size_t i = 1; i < att.size(); ++i) CHECK(std::abs(cell(att, i, "residual")) < 1e-6);
  const auto cells = io::read_file(dir.path / "map_cells.csv");
  cli::CommandOptions jobs;
  jobs.jobs = 3;
  cli::cmd_map(m, jobs);
  CHECK(io::read_file(dir.path / "map_cells.csv") == cells);
}

TEST_CASE("outputs carry the provenance header") {
  TempDir dir("prov");
  const auto m = manifest(R"({"n_atoms": [83000]})", dir.path);
  cli::cmd_model(m);
  const auto text = io::read_file(dir.path / "model.csv");
  CHECK(text.rfind(std::string("# mcn ") + cli::tool_version() + " manifest-sha256 " + m.sha256 + "\n", 0) == 0);
}
