// Runs the built command-line tool as a subprocess.

#include "support/oracles.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#ifndef COXSUB_CLI_PATH
#error "COXSUB_CLI_PATH must name the coxsub executable"
#endif

using nlohmann::json;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(COXSUB_CLI_PATH) + " " + args + " 2>/dev/null";
  RunResult res;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t got = 0;
  while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) res.out.append(buf, got);
  const int status = ::pclose(pipe);
  res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_CASE("simulate writes data and a sidecar, deterministically") {
  oracle::TempDir dir;
  const auto a = dir / "a.csv", b = dir / "b.csv";
  REQUIRE(run("simulate --case I --n 1000 --cr 0.2 --seed 7 -o " + q(a)).code == 0);
  REQUIRE(run("simulate --case I --n 1000 --cr 0.2 --seed 7 -o " + q(b)).code == 0);
  const std::string text = slurp(a);
  CHECK(text == slurp(b));
  CHECK(std::count(text.begin(), text.end(), '\n') == 1001);
  CHECK(text.rfind("time,status,x1,x2,x3,x4,x5", 0) == 0);
  const json side = json::parse(slurp(a.string() + ".json"));
  CHECK(side["schema"] == 1);
  CHECK(side["seed"] == 7);
  CHECK(side["c0"].get<double>() > 0.0);
  CHECK(side["beta_true"].size() == 5);
}

TEST_CASE("usage errors exit with 2") {
  oracle::TempDir dir;
  CHECK(run("simulate --cr 1.5 -o " + q(dir / "x.csv")).code == 2);
  CHECK(run("simulate --case V -o " + q(dir / "x.csv")).code == 2);
  CHECK(run("calibrate --cr 0").code == 2);
  CHECK(run("").code == 2);
  CHECK(run("nonsense").code == 2);
  REQUIRE(run("simulate --n 500 --c0 5 -o " + q(dir / "d.csv")).code == 0);
  CHECK(run("subsample --data " + q(dir / "d.csv") + " --r 0").code == 2);
  CHECK(run("subsample --data " + q(dir / "d.csv") + " --delta 2").code == 2);
  CHECK(run("fit --data " + q(dir / "d.csv") + " --covariates").code == 2);
  CHECK(run("fit --data " + q(dir / "missing.csv")).code == 2);
}

TEST_CASE("data problems exit with 1, numerical failures with 3") {
  oracle::TempDir dir;
  {
    std::ofstream out(dir / "bad.csv");
    out << "time,status,x1\n1,1,0\n2,2,1\n";
  }
  CHECK(run("fit --data " + q(dir / "bad.csv")).code == 1);
  REQUIRE(run("simulate --n 2000 --c0 5 -o " + q(dir / "d.csv")).code == 0);
  CHECK(run("fit --data " + q(dir / "d.csv") + " --max-iter 1").code == 3);
  {
    std::ofstream out(dir / "collinear.csv");
    out << "time,status,x1,x2\n";
    for (int i = 1; i <= 40; ++i) out << i << "," << (i % 3 ? 1 : 0) << "," << (i % 7) << "," << 2 * (i % 7) << "\n";
  }
  CHECK(run("fit --data " + q(dir / "collinear.csv")).code == 3);
}

TEST_CASE("fit reports estimates and a Breslow baseline") {
  oracle::TempDir dir;
  REQUIRE(run("simulate --n 5000 --cr 0.2 --seed 3 -o " + q(dir / "d.csv")).code == 0);
  const auto res = run("fit --data " + q(dir / "d.csv") + " --baseline-out " + q(dir / "h.csv"));
  REQUIRE(res.code == 0);
  const json doc = json::parse(res.out);
  CHECK(doc["schema"] == 1);
  CHECK(doc["converged"] == true);
  CHECK(doc["score_norm"].get<double>() <= 1e-8);
  const std::vector<double> truth{-1.0, -0.5, 0.0, 0.5, 1.0};
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(std::abs(doc["beta"][j].get<double>() - truth[j]) < 5.0 * doc["se"][j].get<double>());
  }
  CHECK(slurp(dir / "h.csv").rfind("time,cumhaz", 0) == 0);

  const auto csv = run("--format csv fit --data " + q(dir / "d.csv"));
  REQUIRE(csv.code == 0);
  CHECK(csv.out.rfind("covariate,est,se", 0) == 0);
}

TEST_CASE("baseline at zero coefficients is the Nelson-Aalen estimator") {
  oracle::TempDir dir;
  REQUIRE(run("simulate --n 300 --c0 4 --seed 5 -o " + q(dir / "d.csv")).code == 0);
  REQUIRE(run("fit --data " + q(dir / "d.csv") + " --fix-beta 0 --baseline-out " + q(dir / "h.csv")).code == 0);
  coxsub::CsvSchema schema;
  schema.covariate_columns = {"x1", "x2", "x3", "x4", "x5"};
  const auto ds = coxsub::load_csv(dir / "d.csv", schema);
  const auto na = oracle::nelson_aalen(ds);
  std::ifstream in(dir / "h.csv");
  std::string line;
  std::getline(in, line);
  std::size_t k = 0;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    REQUIRE(k < na.times.size());
    CHECK(std::stod(line.substr(0, comma)) == na.times[k]);
    CHECK(std::abs(std::stod(line.substr(comma + 1)) - na.values[k]) <= 1e-12 * std::max(1.0, na.values[k]));
    ++k;
  }
  CHECK(k == na.times.size());
}

TEST_CASE("subsample output") {
  oracle::TempDir dir;
  REQUIRE(run("simulate --n 20000 --cr 0.2 --seed 9 -o " + q(dir / "d.csv")).code == 0);
  const std::string data = " --data " + q(dir / "d.csv");
  const auto a = run("--seed 4 subsample" + data);
  const auto b = run("subsample" + data + " --seed 4");
  REQUIRE(a.code == 0);
  const json doc = json::parse(a.out);
  // Wall-clock timings are the only part allowed to differ.
  json da = doc, db = json::parse(b.out);
  da.erase("timings");
  db.erase("timings");
  CHECK(da == db);
  CHECK(doc["schema"] == 1);
  CHECK(doc["r0"] == 300);
  CHECK(doc["r"] == 1000);
  for (const auto& c : doc["coefficients"]) {
    const double est = c["est"], se = c["se"];
    CHECK(c["ci"][0].get<double>() == est - 1.96 * se);
    CHECK(c["ci"][1].get<double>() == est + 1.96 * se);
  }
  // The same construction on a published estimate and standard error.
  CHECK(-1.0009 - 1.96 * 0.1303 == doctest::Approx(-1.2563).epsilon(1e-4));
  CHECK(-1.0009 + 1.96 * 0.1303 == doctest::Approx(-0.7455).epsilon(1e-4));
  for (const char* key : {"pilot_fit", "probabilities", "draw", "second_fit", "covariance", "total"})
    CHECK(doc["timings"][key].get<double>() >= 0.0);
  const auto& ps = doc["probability_summary"];
  CHECK(ps["censored"][0].get<double>() == doctest::Approx(0.1 / 20000).epsilon(1e-12));
  CHECK(ps["uncensored"][2].get<double>() > ps["censored"][2].get<double>());

  const auto threaded = run("--seed 4 --threads 3 subsample" + data);
  CHECK(json::parse(threaded.out)["coefficients"] == doc["coefficients"]);

  const auto d1 = json::parse(run("--seed 4 subsample" + data + " --delta 1").out);
  const auto un = json::parse(run("--seed 4 subsample" + data + " --criterion unif").out);
  CHECK(d1["coefficients"] == un["coefficients"]);

  const auto reps = run("--seed 4 subsample" + data + " --r 400 --reps 5");
  REQUIRE(reps.code == 0);
  const json rj = json::parse(reps.out);
  CHECK(rj["replications"]["reps"] == 5);
  CHECK(rj["replications"]["ese"].size() == 5);
}

TEST_CASE("config file supplies options and flags win") {
  oracle::TempDir dir;
  REQUIRE(run("simulate --n 5000 --cr 0.2 --seed 9 -o " + q(dir / "d.csv")).code == 0);
  {
    std::ofstream cfg(dir / "run.ini");
    cfg << "seed=4\n[subsample]\nr=500\n";
  }
  const auto a = json::parse(run("--config " + q(dir / "run.ini") + " subsample --data " + q(dir / "d.csv")).out);
  CHECK(a["seed"] == 4);
  CHECK(a["r"] == 500);
  const auto b = json::parse(
      run("--config " + q(dir / "run.ini") + " subsample --data " + q(dir / "d.csv") + " --r 600").out);
  CHECK(b["r"] == 600);
  {
    std::ofstream cfg(dir / "bad.ini");
    cfg << "sed=4\n";
  }
  CHECK(run("--config " + q(dir / "bad.ini") + " subsample --data " + q(dir / "d.csv")).code == 2);
}

TEST_CASE("calibrate is reproducible and verified") {
  const auto a = run("--seed 1 calibrate --case I --cr 0.2");
  const auto b = run("--seed 1 calibrate --case I --cr 0.2");
  REQUIRE(a.code == 0);
  const json ja = json::parse(a.out), jb = json::parse(b.out);
  CHECK(ja["c0"] == jb["c0"]);
  CHECK(std::abs(ja["achieved_cr"].get<double>() - 0.2) <= 0.01);
}

TEST_CASE("benchmark emits one row per cell") {
  const auto res = run("--format csv benchmark --cases I --n 5000 --r-grid 300,500 --methods lopt,unif --reps 3 --r0 200");
  REQUIRE(res.code == 0);
  std::istringstream in(res.out);
  std::string line;
  std::getline(in, line);
  CHECK(line.find("mse") != std::string::npos);
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 4);
}
