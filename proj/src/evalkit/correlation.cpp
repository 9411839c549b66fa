#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pmk/error.hpp"
#include "pmk/evalkit.hpp"

namespace pmk {

std::vector<double> mid_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::config, "correlation inputs differ in length");
  if (x.size() < 2) throw Error(ErrorKind::undefined, "correlation needs at least 2 observations");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorKind::undefined, "correlation of a constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::config, "correlation inputs differ in length");
  const auto rx = mid_ranks(x);
  const auto ry = mid_ranks(y);
  return pearson(rx, ry);
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    rows.push_back(split_csv(line));
  }
  return rows;
}

double parse_number(const std::string& s, std::size_t row) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::decode, "row " + std::to_string(row) + ": not a number: '" + s + "'");
  }
}

}  // namespace

ScoreTable parse_score_table(const std::string& csv) {
  const auto rows = csv_rows(csv);
  if (rows.empty()) throw Error(ErrorKind::decode, "score table is empty");
  ScoreTable t;
  t.tasks.assign(rows[0].begin() + 1, rows[0].end());
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != t.tasks.size() + 1)
      throw Error(ErrorKind::decode, "row " + std::to_string(r + 1) + ": expected " + std::to_string(t.tasks.size() + 1) +
                                         " cells");
    t.methods.push_back(row[0]);
    std::vector<std::optional<double>> values;
    for (std::size_t c = 1; c < row.size(); ++c)
      values.push_back(row[c].empty() ? std::nullopt : std::optional(parse_number(row[c], r + 1)));
    t.values.push_back(std::move(values));
  }
  return t;
}

ScoreTable read_score_table(const std::filesystem::path& file) {
  const auto bytes = read_file(file);
  return parse_score_table(std::string(bytes.begin(), bytes.end()));
}

std::vector<std::vector<double>> cross_task_correlation(const ScoreTable& table, CorrelationKind kind) {
  const std::size_t n = table.tasks.size();
  std::vector<std::vector<double>> out(n, std::vector<double>(n, 0.0));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      std::vector<double> x, y;
      for (const auto& row : table.values)
        if (row[a] && row[b]) {
          x.push_back(*row[a]);
          y.push_back(*row[b]);
        }
      if (x.size() < 2)
        throw Error(ErrorKind::undefined, "tasks " + table.tasks[a] + " and " + table.tasks[b] +
                                              " share fewer than 2 complete rows");
      out[a][b] = kind == CorrelationKind::pearson ? pearson(x, y) : spearman(x, y);
    }
  return out;
}

std::vector<MosRow> read_mos_csv(const std::filesystem::path& file) {
  const auto bytes = read_file(file);
  const auto rows = csv_rows(std::string(bytes.begin(), bytes.end()));
  std::vector<MosRow> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != 3) throw Error(ErrorKind::decode, "row " + std::to_string(r + 1) + ": expected ref,distorted,mos");
    out.push_back(MosRow{rows[r][0], rows[r][1], parse_number(rows[r][2], r + 1)});
  }
  return out;
}

}  // namespace pmk
