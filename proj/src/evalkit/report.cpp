#include <cmath>
#include <cstdio>
#include <cstdlib>

#include <json.hpp>

#include "pmk/error.hpp"
#include "pmk/evalkit.hpp"

namespace pmk {

using ojson = nlohmann::ordered_json;

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

namespace {

ojson number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return std::strtod(format_number(v).c_str(), nullptr);
}

ojson optional_number(const std::optional<double>& v) { return v ? number(*v) : ojson(nullptr); }

std::optional<std::pair<double, double>> metric_correlation(const Report& r) {
  std::vector<double> afc, jnd;
  for (const auto& m : r.metrics)
    if (m.two_afc && m.jnd) {
      afc.push_back(m.two_afc->score);
      jnd.push_back(m.jnd->map);
    }
  try {
    return std::pair(pearson(afc, jnd), spearman(afc, jnd));
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace

std::string report_json(const Report& r) {
  ojson j;
  j["dataset"] = {{"triplets", r.triplets},
                  {"jnd_pairs", r.jnd_pairs},
                  {"human_ceiling", optional_number(r.human_ceiling)},
                  {"oracle_maximum", optional_number(r.oracle_maximum)}};
  ojson metrics = ojson::array();
  for (const auto& m : r.metrics) {
    ojson e;
    e["name"] = m.name;
    if (m.two_afc) {
      ojson cats = ojson::object();
      for (const auto& [name, c] : m.two_afc->per_category) cats[name] = {{"score", number(c.score)}, {"n", c.n}};
      e["two_afc"] = {{"score", number(m.two_afc->score)}, {"n", m.two_afc->n}, {"per_category", cats}};
    } else {
      e["two_afc"] = nullptr;
    }
    if (m.jnd) {
      ojson cats = ojson::object();
      for (const auto& [name, ap] : m.jnd->per_category) cats[name] = number(ap);
      e["jnd"] = {{"map", number(m.jnd->map)}, {"per_category", cats}};
    } else {
      e["jnd"] = nullptr;
    }
    metrics.push_back(e);
  }
  j["metrics"] = metrics;
  if (const auto c = metric_correlation(r)) {
    j["correlation_2afc_jnd"] = {{"pearson", number(c->first)}, {"spearman", number(c->second)}};
  }
  return j.dump(2) + "\n";
}

std::string report_csv(const Report& r) {
  std::string out = "metric,two_afc,n,jnd_map\n";
  const std::string n = std::to_string(r.triplets);
  if (r.human_ceiling) out += "human_ceiling," + format_number(*r.human_ceiling) + "," + n + ",\n";
  if (r.oracle_maximum) out += "oracle_maximum," + format_number(*r.oracle_maximum) + "," + n + ",\n";
  for (const auto& m : r.metrics) {
    out += m.name + ",";
    if (m.two_afc) out += format_number(m.two_afc->score) + "," + std::to_string(m.two_afc->n);
    else out += ",";
    out += ",";
    if (m.jnd) out += format_number(m.jnd->map);
    out += "\n";
  }
  return out;
}

void write_report(const std::filesystem::path& dir, const Report& r) {
  const auto json = report_json(r);
  const auto csv = report_csv(r);
  write_file(dir / "report.json", std::span(reinterpret_cast<const std::uint8_t*>(json.data()), json.size()));
  write_file(dir / "report.csv", std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
}

}  // namespace pmk
