#pragma once

// Dataset manifest: the playable series pool plus the co-dated world indices.
//
//   {
//     "series": [{"csv": "series/ibex_01.csv", "meta": "series/ibex_01.json"}, ...],
//     "world":  [{"symbol": "DAX", "csv": "world/dax.csv"}, ...]
//   }
//
// Paths are relative to the manifest's directory.

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrbanks/market_data.hpp"

namespace mrbanks {

struct Dataset {
  std::vector<PriceSeries> series;
  std::vector<IndexHistory> world;

  const PriceSeries* find(const std::string& symbol) const {
    for (const auto& s : series)
      if (s.symbol == symbol) return &s;
    return nullptr;
  }
};

inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) fail(ErrorCode::bad_manifest, "cannot open " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::bad_manifest, e.what());
  }
  const auto base = manifest_path.parent_path();
  Dataset ds;
  try {
    for (const auto& entry : manifest.value("series", nlohmann::json::array())) {
      auto s = load_series_file((base / entry.at("csv").get<std::string>()).string());
      if (entry.contains("meta")) {
        std::ifstream meta_in(base / entry.at("meta").get<std::string>());
        if (!meta_in) fail(ErrorCode::bad_manifest, "missing sidecar " + entry.at("meta").dump());
        apply_meta(s, parse_series_meta(nlohmann::json::parse(meta_in)));
      }
      if (s.symbol.empty()) s.symbol = entry.at("csv").get<std::string>();
      ds.series.push_back(std::move(s));
    }
    for (const auto& entry : manifest.value("world", nlohmann::json::array())) {
      std::ifstream csv(base / entry.at("csv").get<std::string>());
      if (!csv) fail(ErrorCode::bad_manifest, "missing world index " + entry.at("csv").dump());
      // World indices may be shorter than a playable series; parse leniently.
      IndexHistory h;
      h.symbol = entry.at("symbol").get<std::string>();
      std::string line;
      std::getline(csv, line);
      while (std::getline(csv, line)) {
        const auto cells = detail::split(line, ',');
        if (cells.size() < 2) continue;
        PricePoint p{detail::trim(cells[0]), 0.0};
        if (!detail::valid_iso_date(p.date) || !detail::parse_double(detail::trim(cells[1]), p.close) ||
            !(p.close > 0.0))
          fail(ErrorCode::bad_manifest, "bad row in world index " + h.symbol);
        if (!h.points.empty() && !(h.points.back().date < p.date))
          fail(ErrorCode::bad_manifest, "non-monotone dates in world index " + h.symbol);
        h.points.push_back(std::move(p));
      }
      ds.world.push_back(std::move(h));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::bad_manifest, e.what());
  }
  if (ds.series.empty()) fail(ErrorCode::bad_manifest, "manifest lists no playable series");
  return ds;
}

struct DatasetCheck {
  std::vector<std::string> problems;
  std::array<int, 3> trend_counts{};  // bullish, bearish, flat

  bool ok() const { return problems.empty(); }
};

// Checks the shipped-pool invariants: no zero-change steps, curated labels
// agree with the log-return classifier, and the 10/10/10 trend mix.
inline DatasetCheck validate_dataset(const Dataset& ds, double flat_threshold = kDefaultFlatThreshold,
                                     std::size_t expected_per_trend = 10) {
  DatasetCheck check;
  for (const auto& s : ds.series) {
    if (auto ties = count_ties(s); ties > 0)
      check.problems.push_back(s.symbol + ": " + std::to_string(ties) + " zero-change steps");
    const auto computed = classify_trend(s, s.playable_window(), flat_threshold);
    if (!s.curated_trend)
      check.problems.push_back(s.symbol + ": no curated trend label");
    else if (*s.curated_trend != computed)
      check.problems.push_back(s.symbol + ": curated label " + std::string(to_string(*s.curated_trend)) +
                               " disagrees with computed " + std::string(to_string(computed)));
    ++check.trend_counts[static_cast<std::size_t>(trend_of(s, flat_threshold))];
  }
  if (expected_per_trend > 0) {
    for (auto t : {TrendLabel::bullish, TrendLabel::bearish, TrendLabel::flat}) {
      const auto n = check.trend_counts[static_cast<std::size_t>(t)];
      if (static_cast<std::size_t>(n) != expected_per_trend)
        check.problems.push_back(std::string(to_string(t)) + ": " + std::to_string(n) +
                                 " series, expected " + std::to_string(expected_per_trend));
    }
  }
  return check;
}

}  // namespace mrbanks
