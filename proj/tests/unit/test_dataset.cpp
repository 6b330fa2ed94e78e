#include "coxsub/dataset.hpp"
#include "coxsub/error.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <fstream>
#include <limits>

using namespace coxsub;

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

bool has_code(const std::vector<Violation>& v, const std::string& code) {
  for (const auto& x : v)
    if (x.code == code) return true;
  return false;
}

}  // namespace

TEST_CASE("sort index orders by time, events before censorings, then row") {
  Matrix x(5, 1);
  x << 0, 0, 0, 0, 0;
  Vector t(5);
  t << 2.0, 1.0, 2.0, 2.0, 0.0;
  SurvivalDataset ds(x, t, {0, 1, 1, 0, 1});
  const std::vector<std::size_t> expected{4, 1, 2, 0, 3};
  CHECK(ds.sort_index() == expected);
  for (std::size_t k = 0; k < 5; ++k) CHECK(ds.rank()[ds.sort_index()[k]] == k);
  CHECK(ds.valid());
  CHECK(ds.event_count() == 3);
  CHECK(ds.censoring_rate() == doctest::Approx(0.4));
}

TEST_CASE("sort index is deterministic") {
  Rng rng(11);
  auto ds = oracle::random_dataset(rng, 300, 2, 0.25);
  const auto again = build_sort_index(ds.time(), ds.status());
  CHECK(again == ds.sort_index());
  for (std::size_t k = 1; k < ds.n(); ++k) {
    CHECK(ds.time()(static_cast<Eigen::Index>(ds.sort_index()[k - 1])) <=
          ds.time()(static_cast<Eigen::Index>(ds.sort_index()[k])));
  }
}

TEST_CASE("validate reports each broken invariant") {
  Matrix x(3, 2);
  x << 1, 2, 3, 4, 5, 6;
  SUBCASE("no events") {
    SurvivalDataset ds(x, Vector::Ones(3), {0, 0, 0});
    CHECK(has_code(ds.violations(), "no_events"));
    CHECK_THROWS_AS(ds.require_valid(), DataError);
  }
  SUBCASE("nan covariate is located") {
    Matrix y(6, 2);
    y.setZero();
    y(4, 1) = std::numeric_limits<double>::quiet_NaN();
    SurvivalDataset ds(y, Vector::Ones(6), {1, 1, 1, 1, 1, 1});
    bool found = false;
    for (const auto& v : ds.violations()) {
      if (v.code == "nonfinite_covariate") {
        CHECK(v.row == std::optional<std::size_t>(4));
        CHECK(v.column == std::optional<std::size_t>(1));
        found = true;
      }
    }
    CHECK(found);
  }
  SUBCASE("negative time and bad status") {
    Vector t(3);
    t << 1.0, -1.0, 2.0;
    SurvivalDataset ds(x, t, {1, 2, 0});
    CHECK(has_code(ds.violations(), "negative_time"));
    CHECK(has_code(ds.violations(), "bad_status"));
  }
  SUBCASE("well formed") {
    SurvivalDataset ds(x, Vector::Ones(3), {1, 0, 1});
    CHECK(validate(ds).empty());
  }
  SUBCASE("zero times are accepted") {
    SurvivalDataset ds(x, Vector::Zero(3), {1, 0, 1});
    CHECK(ds.valid());
  }
  SUBCASE("size mismatch throws") {
    CHECK_THROWS_AS(SurvivalDataset(x, Vector::Ones(2), {1, 0}), InvalidArgument);
  }
}

TEST_CASE("load_csv reads columns by name and keeps file order") {
  oracle::TempDir dir;
  const auto path = dir / "d.csv";
  write_file(path, "id,time,status,age\n1,2,1,50\n2,1,0,60\n3,3,1,70\n");
  CsvSchema schema;
  schema.covariate_columns = {"age"};
  const auto ds = load_csv(path, schema);
  CHECK(ds.n() == 3);
  CHECK(ds.p() == 1);
  CHECK(ds.covariates()(1, 0) == 60.0);
  CHECK(ds.sort_index() == std::vector<std::size_t>{1, 0, 2});
  CHECK(ds.covariate_names() == std::vector<std::string>{"age"});
}

TEST_CASE("load_csv handles quotes, CRLF, semicolons and headerless files") {
  oracle::TempDir dir;
  SUBCASE("quoted header and CRLF") {
    write_file(dir / "q.csv", "\"time\",\"status\",\"a,b\"\r\n1.5,1,\"2\"\r\n2.5,0,3\r\n");
    CsvSchema s;
    s.covariate_columns = {"a,b"};
    const auto ds = load_csv(dir / "q.csv", s);
    CHECK(ds.n() == 2);
    CHECK(ds.covariates()(0, 0) == 2.0);
  }
  SUBCASE("semicolon delimiter") {
    write_file(dir / "s.csv", "time;status;x\n1;1;0.5\n");
    CsvSchema s;
    s.covariate_columns = {"x"};
    s.delimiter = ';';
    CHECK(load_csv(dir / "s.csv", s).covariates()(0, 0) == 0.5);
  }
  SUBCASE("no header, 1-based positions") {
    write_file(dir / "h.csv", "7,1,2\n8,0,3\n");
    CsvSchema s;
    s.has_header = false;
    s.time_column = "2";
    s.status_column = "1";
    s.covariate_columns = {"3"};
    s.time_column = "1";
    s.status_column = "2";
    const auto ds = load_csv(dir / "h.csv", s);
    CHECK(ds.time()(1) == 8.0);
    CHECK(ds.status()[1] == 0);
  }
}

TEST_CASE("load_csv errors name the offending row") {
  oracle::TempDir dir;
  CsvSchema schema;
  schema.covariate_columns = {"x"};
  auto message = [&](const std::string& text) {
    write_file(dir / "bad.csv", text);
    try {
      load_csv(dir / "bad.csv", schema);
    } catch (const DataError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  std::string rows = "time,status,x\n";
  for (int i = 1; i <= 6; ++i) rows += "1,1,0\n";
  CHECK(message(rows + "1,2,0\n").find("row 7") != std::string::npos);
  CHECK(message("time,status,x\n1,1,abc\n").find("row 1") != std::string::npos);
  CHECK(message("time,status,x\n1,1,0\n-2,1,0\n").find("row 2") != std::string::npos);
  CHECK(message("time,status\n1,1\n").find("missing column 'x'") != std::string::npos);
  CHECK_THROWS_AS(load_csv(dir / "absent.csv", schema), IoError);
}

TEST_CASE("schema check rejects empty and duplicate columns") {
  CsvSchema s;
  CHECK_THROWS_AS(s.check(), InvalidArgument);
  s.covariate_columns = {"x", "x"};
  CHECK_THROWS_AS(s.check(), InvalidArgument);
  s.covariate_columns = {"time"};
  CHECK_THROWS_AS(s.check(), InvalidArgument);
}

TEST_CASE("write_csv then load_csv is the identity on the numbers") {
  oracle::TempDir dir;
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    boost::random::uniform_real_distribution<double> u(-1e6, 1e6);
    auto ds = oracle::random_dataset(rng, 40, 3, rep % 2 ? 0.1 : 0.0);
    Matrix x = ds.covariates();
    for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, 0) = u(rng) * std::pow(10.0, (rep % 7) - 3);
    SurvivalDataset noisy(x, ds.time(), ds.status());
    const auto path = dir / ("r" + std::to_string(rep) + ".csv");
    write_csv(noisy, path);
    CsvSchema s;
    s.covariate_columns = noisy.covariate_names();
    const auto back = load_csv(path, s);
    CHECK(back.covariates() == noisy.covariates());
    CHECK(back.time() == noisy.time());
    CHECK(back.status() == noisy.status());
  }
}
