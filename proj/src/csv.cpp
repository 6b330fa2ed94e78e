#include "coxsub/dataset.hpp"
#include "coxsub/error.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <unordered_map>

namespace coxsub {

void CsvSchema::check() const {
  if (covariate_columns.empty()) throw InvalidArgument("schema: covariate column list is empty");
  std::set<std::string> names{time_column, status_column};
  if (names.size() != 2) throw InvalidArgument("schema: time and status columns must differ");
  for (const auto& c : covariate_columns) {
    if (!names.insert(c).second) throw InvalidArgument("schema: duplicate column '" + c + "'");
  }
  if (delimiter == '"' || delimiter == '\n' || delimiter == '\r') {
    throw InvalidArgument("schema: unsupported delimiter");
  }
}

namespace {

// Splits RFC-4180 records: quoted fields may hold delimiters, doubled quotes
// and line breaks. Returns false at end of input.
class RecordReader {
 public:
  RecordReader(std::string text, char delim) : text_(std::move(text)), delim_(delim) {}

  bool next(std::vector<std::string>& fields) {
    fields.clear();
    if (pos_ >= text_.size()) return false;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    while (pos_ < text_.size()) {
      const char c = text_[pos_++];
      if (quoted) {
        if (c == '"') {
          if (pos_ < text_.size() && text_[pos_] == '"') {
            field.push_back('"');
            ++pos_;
          } else {
            quoted = false;
          }
        } else {
          field.push_back(c);
        }
        continue;
      }
      if (c == '"' && !field_started) {
        quoted = true;
        field_started = true;
      } else if (c == delim_) {
        fields.push_back(std::move(field));
        field.clear();
        field_started = false;
      } else if (c == '\n' || c == '\r') {
        if (c == '\r' && pos_ < text_.size() && text_[pos_] == '\n') ++pos_;
        break;
      } else {
        field.push_back(c);
        field_started = true;
      }
    }
    fields.push_back(std::move(field));
    return true;
  }

 private:
  std::string text_;
  char delim_;
  std::size_t pos_ = 0;
};

bool blank(const std::vector<std::string>& fields) {
  return fields.size() == 1 && fields[0].find_first_not_of(" \t") == std::string::npos;
}

std::optional<double> parse_number(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

}  // namespace

SurvivalDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  schema.check();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  RecordReader reader(buffer.str(), schema.delimiter);

  std::vector<std::string> fields;
  std::unordered_map<std::string, std::size_t> position;
  std::size_t width = 0;
  if (schema.has_header) {
    if (!reader.next(fields)) throw DataError("'" + path.string() + "' is empty");
    width = fields.size();
    for (std::size_t k = 0; k < fields.size(); ++k) position.emplace(fields[k], k);
  }
  auto locate = [&](const std::string& name) -> std::size_t {
    if (schema.has_header) {
      auto it = position.find(name);
      if (it == position.end()) throw DataError("missing column '" + name + "'");
      return it->second;
    }
    auto idx = parse_number(name);
    if (!idx || *idx < 1 || std::floor(*idx) != *idx) {
      throw DataError("without a header, column '" + name + "' must be a 1-based position");
    }
    return static_cast<std::size_t>(*idx) - 1;
  };
  const std::size_t time_col = locate(schema.time_column);
  const std::size_t status_col = locate(schema.status_column);
  std::vector<std::size_t> cov_cols;
  for (const auto& c : schema.covariate_columns) cov_cols.push_back(locate(c));

  const std::size_t p = cov_cols.size();
  std::vector<double> times;
  std::vector<int> status;
  std::vector<double> cov;  // row-major while reading
  std::size_t row = 0;
  while (reader.next(fields)) {
    if (blank(fields)) continue;
    ++row;
    if (width == 0) width = fields.size();
    auto cell = [&](std::size_t col, const std::string& name) -> double {
      if (col >= fields.size()) {
        throw DataError("row " + std::to_string(row) + ": missing column '" + name + "'");
      }
      auto v = parse_number(fields[col]);
      if (!v) {
        throw DataError("row " + std::to_string(row) + ": non-numeric value '" + fields[col] +
                        "' in column '" + name + "'");
      }
      return *v;
    };
    const double t = cell(time_col, schema.time_column);
    if (!(t >= 0.0) || !std::isfinite(t)) {
      throw DataError("row " + std::to_string(row) + ": time must be finite and non-negative");
    }
    const double s = cell(status_col, schema.status_column);
    if (s != 0.0 && s != 1.0) {
      throw DataError("row " + std::to_string(row) + ": status must be 0 or 1, got '" +
                      fields[status_col] + "'");
    }
    times.push_back(t);
    status.push_back(static_cast<int>(s));
    for (std::size_t j = 0; j < p; ++j) cov.push_back(cell(cov_cols[j], schema.covariate_columns[j]));
  }

  const auto n = static_cast<Eigen::Index>(times.size());
  Matrix x(n, static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      x(i, static_cast<Eigen::Index>(j)) = cov[static_cast<std::size_t>(i) * p + j];
    }
  }
  SurvivalDataset ds(std::move(x), Eigen::Map<Vector>(times.data(), n), std::move(status),
                     schema.covariate_columns);
  ds.require_valid();
  return ds;
}

void write_csv(const SurvivalDataset& ds, const std::filesystem::path& path, char delimiter) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> out(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  auto quote = [&](const std::string& s) {
    if (s.find_first_of(std::string{delimiter, '"', '\n', '\r'}) == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + '"';
  };
  std::string header = "time";
  header += delimiter;
  header += "status";
  for (const auto& name : ds.covariate_names()) {
    header += delimiter;
    header += quote(name);
  }
  std::fprintf(out.get(), "%s\n", header.c_str());
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    std::fprintf(out.get(), "%.17g%c%d", ds.time()[r], delimiter, ds.status()[i]);
    for (std::size_t j = 0; j < ds.p(); ++j) {
      std::fprintf(out.get(), "%c%.17g", delimiter, ds.covariates()(r, static_cast<Eigen::Index>(j)));
    }
    std::fputc('\n', out.get());
  }
  if (std::ferror(out.get())) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace coxsub
