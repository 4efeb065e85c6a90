#include <catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "cli.hpp"
#include "tbss/error.hpp"
#include "tbss/io.hpp"

using namespace tbss;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("tbss_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

int run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  return cli::run(args, out, err);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nlohmann::json load(const std::string& path) { return nlohmann::json::parse(slurp(path)); }

CsvTable parse(const std::string& text) {
  std::istringstream in(text);
  return parse_csv(in);
}

}  // namespace

TEST_CASE("csv without header") {
  const CsvTable t = parse("1,2\n3,4\n");
  CHECK(t.data.rows() == 2);
  CHECK(t.data.cols() == 2);
  CHECK(t.data(1, 0) == 3.0);
  CHECK(t.names.empty());
}

TEST_CASE("csv with header") {
  const CsvTable t = parse("a,b\n1,2\n");
  CHECK(t.data.rows() == 1);
  CHECK(t.names == std::vector<std::string>{"a", "b"});
}

TEST_CASE("csv errors carry coordinates") {
  try {
    parse("1,2\n3,NaN\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.row() == 2);
    CHECK(e.col() == 2);
  }
  try {
    parse("1,2\n3\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.row() == 2);
  }
  try {
    parse("1,2\n3,x4\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.row() == 2);
    CHECK(e.col() == 2);
  }
  CHECK_THROWS_AS(parse(""), ParseError);
  CHECK_THROWS_AS(parse("a,b\n"), ParseError);
  CHECK_THROWS_AS(parse("1,inf\n"), ParseError);
  CHECK_THROWS_AS(ingest_csv("/nonexistent/file.csv"), ParseError);
}

TEST_CASE("csv round trip is exact") {
  Matrix m(3, 2);
  m << 0.1, -1e-300, 3.141592653589793, 1.0 / 3.0, -2.5e10, 7.0;
  const CsvTable t = parse(format_csv(TimeSeriesMatrix(m), {"x", "y"}));
  CHECK(t.data == m);
  CHECK(t.names == std::vector<std::string>{"x", "y"});
}

TEST_CASE("atomic write replaces the file and leaves no temporary") {
  TempDir d;
  write_file_atomic(d / "f.txt", "one");
  write_file_atomic(d / "f.txt", "two");
  CHECK(slurp(d / "f.txt") == "two");
  long n = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(d.path)) ++n;
  CHECK(n == 1);
}

TEST_CASE("exit codes") {
  TempDir d;
  std::ofstream(d / "bad.csv") << "a,b\n1,2\n3,NaN\n";
  CHECK(run({"detect", "--input", d / "bad.csv", "--output", d / "r.json"}) == cli::parse_error);
  CHECK(run({"simulate", "--scenario", "Z.9", "--output", d / "z.csv"}) == cli::config_error);
  CHECK(run({"detect", "--bogus"}) == cli::config_error);
  CHECK(run({"benchmark", "--scenario", "M"}) == cli::config_error);  // seed is mandatory
  std::ofstream(d / "short.csv") << "1,2\n3,4\n";
  CHECK(run({"detect", "--input", d / "short.csv", "--output", d / "r.json", "--seed", "1"}) == cli::pipeline_error);
  CHECK_FALSE(fs::exists(d / "r.json"));
  CHECK(run({"--help"}) == cli::ok);
}

TEST_CASE("simulate is deterministic and writes the truth") {
  TempDir d;
  REQUIRE(run({"simulate", "--scenario", "A.1", "--seed", "7", "--output", d / "a.csv"}) == 0);
  REQUIRE(run({"simulate", "--scenario", "A.1", "--seed", "7", "--output", d / "b.csv"}) == 0);
  CHECK(slurp(d / "a.csv") == slurp(d / "b.csv"));
  CHECK(slurp(d / "a.truth.json") == slurp(d / "b.truth.json"));
  const CsvTable t = ingest_csv(d / "a.csv");
  CHECK(t.data.rows() == 6000);
  CHECK(t.data.cols() == 20);
  const auto truth = load(d / "a.truth.json");
  CHECK(truth["break_points"].size() == 4);
  CHECK(truth["transitions"].size() == 5);

  REQUIRE(run({"simulate", "--scenario", "M", "--seed", "1", "--output", d / "m.csv"}) == 0);
  CHECK(load(d / "m.truth.json")["break_points"].empty());
}

TEST_CASE("simulate from an inline model document") {
  TempDir d;
  PiecewiseVarModel m;
  m.q = 1;
  m.noise_cov = 0.1 * Matrix::Identity(2, 2);
  m.transitions = {Matrix{{0.5, 0.0}, {0.0, 0.5}}, Matrix{{-0.5, 0.0}, {0.0, -0.5}}};
  m.break_points = {150};
  std::ofstream(d / "model.json") << cli::truth_json(m, 300, "mine", 0, false).dump();
  REQUIRE(run({"simulate", "--model", d / "model.json", "--seed", "3", "--output", d / "s.csv"}) == 0);
  CHECK(ingest_csv(d / "s.csv").data.rows() == 300);
  const PiecewiseVarModel back = cli::model_from_json(load(d / "s.truth.json"));
  CHECK(back.break_points == m.break_points);
  CHECK(back.transitions[1] == m.transitions[1]);
}

TEST_CASE("detect on a stationary series reports no breaks") {
  TempDir d;
  REQUIRE(run({"simulate", "--scenario", "M", "--seed", "4", "--output", d / "m.csv"}) == 0);
  REQUIRE(run({"detect", "--input", d / "m.csv", "--output", d / "r.json", "--seed", "4"}) == 0);
  const auto r = load(d / "r.json");
  CHECK(r["break_points"].empty());
  CHECK(r["segments"].size() == 1);
  CHECK(r["seed"] == 4);
}

TEST_CASE("detect on scenario A.1 finds the four breaks") {
  TempDir d;
  REQUIRE(run({"simulate", "--scenario", "A.1", "--seed", "7", "--output", d / "a.csv"}) == 0);
  REQUIRE(run({"detect", "--input", d / "a.csv", "--output", d / "r.json", "--seed", "7", "--truth",
               d / "a.truth.json"}) == 0);
  const auto r = load(d / "r.json");
  REQUIRE(r["break_points"].size() == 4);
  const long truth[] = {1200, 2400, 3600, 4800};
  for (int j = 0; j < 4; ++j) CHECK(std::abs(r["break_points"][j]["index"].get<long>() - 1 - truth[j]) <= 20);
  CHECK(r["break_points"][0]["relative"].get<double>() == Catch::Approx(0.2).margin(0.005));
  CHECK(r["evaluation"]["success"] == nlohmann::json::array({true, true, true, true}));
}

TEST_CASE("simulate, detect and score reproduce a single benchmark replicate") {
  TempDir d;
  const Scenario sc = scenario_catalog("E.1");
  const std::string b = std::to_string(sc.spec.block_size);
  REQUIRE(run({"simulate", "--scenario", "E.1", "--seed", "5", "--output", d / "e.csv"}) == 0);
  REQUIRE(run({"detect", "--input", d / "e.csv", "--output", d / "r.json", "--seed", "5", "--block-size", b,
               "--truth", d / "e.truth.json"}) == 0);
  const auto r = load(d / "r.json");

  BenchmarkOptions opt;
  opt.replicates = 1;
  opt.seed = 5;
  const BenchmarkReport rep = run_benchmark("E.1", opt);
  REQUIRE(rep.records.size() == 1);
  const auto& rec = rep.records[0];
  REQUIRE(rec.estimation.has_value());
  REQUIRE(r["break_points"].size() == rec.refined.size());
  for (size_t j = 0; j < rec.refined.size(); ++j) CHECK(r["break_points"][j]["index"] == rec.refined[j] + 1);
  const auto& e = r["evaluation"]["estimation"];
  CHECK(e["tp"] == rec.estimation->tp);
  CHECK(e["fp"] == rec.estimation->fp);
  CHECK(e["re"].get<double>() == rec.estimation->re);
  CHECK(e["mcc"].get<double>() == rec.estimation->mcc);
}

TEST_CASE("benchmark with one replicate and a block-size sweep") {
  TempDir d;
  REQUIRE(run({"benchmark", "--scenario", "G.1", "--seed", "2", "--replicates", "1", "--output", d / "b.json",
               "--table", d / "b.txt", "--sweep-blocksize", "15,20,25"}) == 0);
  const auto j = load(d / "b.json");
  for (const auto& br : j["breaks"]) CHECK(br["sd"] == 0.0);
  CHECK(j["time"]["sd"] == 0.0);
  CHECK(j["estimation"].is_null());
  CHECK(slurp(d / "b.txt").find("CP") != std::string::npos);
  std::istringstream csv(slurp(d / "b.sweep.csv"));
  std::string line;
  int rows = 0;
  std::getline(csv, line);
  CHECK(line == "block_size,time_mean,time_sd,rate_mean,failures");
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 3);
}

TEST_CASE("config file values yield to flags") {
  TempDir d;
  REQUIRE(run({"simulate", "--scenario", "M", "--seed", "4", "--output", d / "m.csv"}) == 0);
  std::ofstream(d / "run.cfg") << "seed = 9\nblock-size = 20\n";
  REQUIRE(run({"detect", "--config", d / "run.cfg", "--input", d / "m.csv", "--output", d / "r.json",
               "--block-size", "30"}) == 0);
  const auto r = load(d / "r.json");
  CHECK(r["seed"] == 9);
  CHECK(r["tuning"]["block_size"] == 30);
  std::ofstream(d / "bad.cfg") << "no-such-key = 1\n";
  CHECK(run({"detect", "--config", d / "bad.cfg", "--input", d / "m.csv", "--output", d / "r.json"}) ==
        cli::config_error);
}
