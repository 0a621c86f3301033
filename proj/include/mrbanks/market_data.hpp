#pragma once

// Daily price series: ingestion, indicators, trend labels and the content of
// every information panel shown during a round.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mrbanks/core.hpp"
#include "mrbanks/rng.hpp"

namespace mrbanks {

inline constexpr int kRoundsPerScenario = 25;
inline constexpr std::size_t kContextPoints = 30;
inline constexpr std::size_t kMinSeriesLength = kContextPoints + kRoundsPerScenario;

struct PricePoint {
  std::string date;  // ISO-8601 yyyy-mm-dd
  double close = 0.0;

  friend bool operator==(const PricePoint&, const PricePoint&) = default;
};

// Half-open index range [first, last).
struct IndexRange {
  std::size_t first = 0;
  std::size_t last = 0;

  std::size_t size() const { return last > first ? last - first : 0; }
};

struct PriceSeries {
  std::string symbol;
  std::vector<PricePoint> points;
  // Index of the first playable point; the 25 playable points are
  // [playable_offset, playable_offset + 25).
  std::size_t playable_offset = kContextPoints;
  std::optional<TrendLabel> curated_trend;

  std::size_t size() const { return points.size(); }
  double close(std::size_t i) const { return points.at(i).close; }
  IndexRange playable_window() const {
    return {playable_offset, playable_offset + kRoundsPerScenario};
  }

  // Round r (1-based) asks for the move from point offset+r-2 to offset+r-1.
  std::size_t target_index(int round) const {
    return playable_offset + static_cast<std::size_t>(round) - 1;
  }
  // Last point whose close is visible while round r is open.
  std::size_t last_visible_index(int round) const { return target_index(round) - 1; }
};

enum class TieRule : std::uint8_t { down, up };

struct ColumnMapping {
  std::string date_column = "date";
  std::string close_column = "close";
  char delimiter = ',';
};

namespace detail {

inline std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* b = s.data();
  const char* e = b + s.size();
  if (*b == '+') ++b;
  auto [ptr, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && ptr == e && std::isfinite(out);
}

inline bool valid_iso_date(const std::string& s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  int y = 0;
  unsigned m = 0, d = 0;
  auto ok = [](const char* b, const char* e, auto& v) {
    auto [p, ec] = std::from_chars(b, e, v);
    return ec == std::errc() && p == e;
  };
  if (!ok(s.data(), s.data() + 4, y) || !ok(s.data() + 5, s.data() + 7, m) ||
      !ok(s.data() + 8, s.data() + 10, d))
    return false;
  return std::chrono::year_month_day{std::chrono::year{y}, std::chrono::month{m},
                                     std::chrono::day{d}}
      .ok();
}

}  // namespace detail

// Parses delimiter-separated rows with a header naming the date and close
// columns. The last 25 points become the playable window unless the caller
// overrides playable_offset afterwards.
inline PriceSeries load_series(std::istream& in, const ColumnMapping& mapping = {},
                               std::string symbol = {}) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::malformed_row, "missing header row");
  const auto header = detail::split(line, mapping.delimiter);
  std::optional<std::size_t> date_col, close_col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto name = detail::trim(header[i]);
    if (name == mapping.date_column) date_col = i;
    if (name == mapping.close_column) close_col = i;
  }
  if (!date_col || !close_col)
    fail(ErrorCode::malformed_row, "header lacks '" + mapping.date_column + "' or '" +
                                       mapping.close_column + "'");

  PriceSeries series;
  series.symbol = std::move(symbol);
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split(line, mapping.delimiter);
    if (cells.size() <= std::max(*date_col, *close_col))
      fail(ErrorCode::malformed_row, "row " + std::to_string(row) + ": too few columns");
    PricePoint p;
    p.date = detail::trim(cells[*date_col]);
    if (!detail::valid_iso_date(p.date))
      fail(ErrorCode::malformed_row, "row " + std::to_string(row) + ": bad date '" + p.date + "'");
    if (!detail::parse_double(detail::trim(cells[*close_col]), p.close))
      fail(ErrorCode::malformed_row, "row " + std::to_string(row) + ": bad close");
    if (!(p.close > 0.0))
      fail(ErrorCode::non_positive_close, "row " + std::to_string(row));
    if (!series.points.empty() && !(series.points.back().date < p.date))
      fail(ErrorCode::non_monotone_dates, "row " + std::to_string(row) + ": " + p.date);
    series.points.push_back(std::move(p));
  }
  if (series.points.size() < kMinSeriesLength)
    fail(ErrorCode::too_short, std::to_string(series.points.size()) + " points, need " +
                                   std::to_string(kMinSeriesLength));
  series.playable_offset = series.points.size() - kRoundsPerScenario;
  return series;
}

// Sidecar metadata: {"symbol": ..., "playable_offset": ..., "trend": ...}.
struct SeriesMeta {
  std::string symbol;
  std::optional<std::size_t> playable_offset;
  std::optional<TrendLabel> trend;
};

inline SeriesMeta parse_series_meta(const nlohmann::json& j) {
  SeriesMeta m;
  m.symbol = j.value("symbol", std::string{});
  if (j.contains("playable_offset")) m.playable_offset = j.at("playable_offset").get<std::size_t>();
  if (j.contains("trend") && !j.at("trend").is_null()) {
    auto t = parse_trend(j.at("trend").get<std::string>());
    if (!t) fail(ErrorCode::bad_manifest, "unknown trend label");
    m.trend = t;
  }
  return m;
}

inline void apply_meta(PriceSeries& s, const SeriesMeta& m) {
  if (!m.symbol.empty()) s.symbol = m.symbol;
  if (m.playable_offset) {
    if (*m.playable_offset < kContextPoints ||
        *m.playable_offset + kRoundsPerScenario > s.points.size())
      fail(ErrorCode::out_of_range, "playable_offset leaves no room for context or rounds");
    s.playable_offset = *m.playable_offset;
  }
  s.curated_trend = m.trend;
}

inline PriceSeries load_series_file(const std::string& path, const ColumnMapping& mapping = {}) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::unreadable_file, path);
  return load_series(in, mapping);
}

// ---------------------------------------------------------------------------
// Indicators

inline double moving_average(const PriceSeries& s, std::size_t window, std::size_t at) {
  if (window == 0) fail(ErrorCode::invalid_argument, "window must be positive");
  if (at >= s.size()) fail(ErrorCode::out_of_range, "index past end of series");
  if (at + 1 < window) fail(ErrorCode::insufficient_history, "moving average window");
  double sum = 0.0;
  for (std::size_t i = at + 1 - window; i <= at; ++i) sum += s.close(i);
  return sum / static_cast<double>(window);
}

// Element k is the move into point range.first + k; ties follow `ties`.
inline std::vector<Direction> direction_sequence(const PriceSeries& s, IndexRange range,
                                                 TieRule ties = TieRule::down) {
  if (range.first < 1 || range.last > s.size() || range.last < range.first)
    fail(ErrorCode::out_of_range, "direction range");
  std::vector<Direction> out;
  out.reserve(range.size());
  for (std::size_t i = range.first; i < range.last; ++i) {
    const double prev = s.close(i - 1);
    const double cur = s.close(i);
    if (cur > prev)
      out.push_back(Direction::up);
    else if (cur < prev)
      out.push_back(Direction::down);
    else
      out.push_back(ties == TieRule::down ? Direction::down : Direction::up);
  }
  return out;
}

inline Direction direction_at(const PriceSeries& s, std::size_t i, TieRule ties = TieRule::down) {
  return direction_sequence(s, {i, i + 1}, ties).front();
}

// Number of zero-change steps; the shipped dataset is required to have none.
inline std::size_t count_ties(const PriceSeries& s) {
  std::size_t n = 0;
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s.close(i) == s.close(i - 1)) ++n;
  return n;
}

// Sample standard deviation of the `window` log-returns ending at `at`.
inline double realized_volatility(const PriceSeries& s, std::size_t window, std::size_t at) {
  if (window < 2) fail(ErrorCode::invalid_argument, "volatility window must be >= 2");
  if (at >= s.size()) fail(ErrorCode::out_of_range, "index past end of series");
  if (at < window) fail(ErrorCode::insufficient_history, "volatility window");
  std::vector<double> r;
  r.reserve(window);
  for (std::size_t i = at + 1 - window; i <= at; ++i) r.push_back(std::log(s.close(i) / s.close(i - 1)));
  const double mean = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(window);
  double ss = 0.0;
  for (double x : r) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(window - 1));
}

inline constexpr double kDefaultFlatThreshold = 0.02;

// Labels a window by its total log-return: ln(close[last-1] / close[first]).
inline TrendLabel classify_trend(const PriceSeries& s, IndexRange window,
                                 double flat_threshold = kDefaultFlatThreshold) {
  if (window.size() < 2 || window.last > s.size())
    fail(ErrorCode::out_of_range, "trend window");
  const double total = std::log(s.close(window.last - 1) / s.close(window.first));
  if (total > flat_threshold) return TrendLabel::bullish;
  if (total < -flat_threshold) return TrendLabel::bearish;
  return TrendLabel::flat;
}

// Curated labels win over the computed one.
inline TrendLabel trend_of(const PriceSeries& s, double flat_threshold = kDefaultFlatThreshold) {
  if (s.curated_trend) return *s.curated_trend;
  return classify_trend(s, s.playable_window(), flat_threshold);
}

// ---------------------------------------------------------------------------
// Panels

enum class VolatilityPhrase : std::uint8_t { high, low };

inline constexpr std::string_view to_string(VolatilityPhrase v) {
  return v == VolatilityPhrase::high ? "high" : "low";
}

struct ExpertAdvice {
  int round = 1;
  Direction stated_direction = Direction::up;
  VolatilityPhrase volatility_phrase = VolatilityPhrase::low;
  bool is_truthful = true;  // never shown to participants

  std::string sentence() const {
    return "Current volatility is " + std::string(to_string(volatility_phrase)) +
           " and the price will go \"" + std::string(to_string(stated_direction)) + "\"";
  }
};

// Volatility phrase for the expert: 5-day realized vol against the 30-day
// one, both ending at the last visible close. Windows shrink to the
// available history.
inline VolatilityPhrase volatility_phrase_at(const PriceSeries& s, std::size_t last_visible) {
  const std::size_t long_window = std::min<std::size_t>(30, last_visible);
  const std::size_t short_window = std::min<std::size_t>(5, last_visible);
  if (short_window < 2) return VolatilityPhrase::low;
  const double short_vol = realized_volatility(s, short_window, last_visible);
  const double long_vol = realized_volatility(s, long_window, last_visible);
  return short_vol > long_vol ? VolatilityPhrase::high : VolatilityPhrase::low;
}

// Another market's history, used for the world-indices panel.
struct IndexHistory {
  std::string symbol;
  std::vector<PricePoint> points;
};

struct ChartPoint {
  std::string date;
  double value = 0.0;
  friend bool operator==(const ChartPoint&, const ChartPoint&) = default;
};

struct ChartPayload {
  std::vector<ChartPoint> points;
  bool synthetic = false;
  friend bool operator==(const ChartPayload&, const ChartPayload&) = default;
};

struct ExpertPayload {
  Direction stated_direction = Direction::up;
  VolatilityPhrase volatility_phrase = VolatilityPhrase::low;
  std::string text;
  friend bool operator==(const ExpertPayload&, const ExpertPayload&) = default;
};

struct ArrowsPayload {
  std::vector<Direction> arrows;  // oldest first
  friend bool operator==(const ArrowsPayload&, const ArrowsPayload&) = default;
};

struct IndexArrows {
  std::string symbol;
  std::vector<std::string> dates;
  std::vector<Direction> arrows;
  friend bool operator==(const IndexArrows&, const IndexArrows&) = default;
};

struct WorldPayload {
  std::vector<IndexArrows> indices;
  friend bool operator==(const WorldPayload&, const WorldPayload&) = default;
};

using PanelPayload = std::variant<ChartPayload, ExpertPayload, ArrowsPayload, WorldPayload>;

struct PanelContent {
  PanelKind kind = PanelKind::price_chart;
  PanelPayload payload;
  friend bool operator==(const PanelContent&, const PanelContent&) = default;
};

struct PanelInputs {
  std::optional<ExpertAdvice> advice;
  const std::vector<IndexHistory>* world = nullptr;
  std::uint64_t intraday_seed = 0;
  TieRule ties = TieRule::down;
};

inline constexpr std::size_t kArrowCount = 30;
inline constexpr std::size_t kWorldArrowDays = 3;
inline constexpr std::size_t kIntradaySteps = 78;  // 5-minute bars

namespace detail {

inline ChartPayload chart_points(const PriceSeries& s, int round, std::size_t ma_window) {
  const std::size_t last = s.last_visible_index(round);
  const std::size_t first = s.playable_offset - kContextPoints;
  ChartPayload out;
  for (std::size_t i = first; i <= last; ++i) {
    if (ma_window == 0)
      out.points.push_back({s.points[i].date, s.close(i)});
    else if (i + 1 >= ma_window)
      out.points.push_back({s.points[i].date, moving_average(s, ma_window, i)});
  }
  return out;
}

// Log-space Brownian bridge between the last two visible closes.
inline ChartPayload intraday_bridge(const PriceSeries& s, int round, std::uint64_t seed) {
  const std::size_t last = s.last_visible_index(round);
  const double open = s.close(last - 1);
  const double close = s.close(last);
  const double drift = std::log(close / open);
  const double daily_vol =
      last >= 6 ? realized_volatility(s, 5, last) : std::max(std::abs(drift), 1e-4);
  const double step_sd = daily_vol / std::sqrt(static_cast<double>(kIntradaySteps));

  auto eng = rng::make_engine(rng::derive(seed, static_cast<std::uint64_t>(round)));
  std::vector<double> walk(kIntradaySteps + 1, 0.0);
  for (std::size_t k = 1; k <= kIntradaySteps; ++k)
    walk[k] = walk[k - 1] + step_sd * rng::standard_normal(eng);

  ChartPayload out;
  out.synthetic = true;
  const double n = static_cast<double>(kIntradaySteps);
  for (std::size_t k = 0; k <= kIntradaySteps; ++k) {
    const double t = static_cast<double>(k) / n;
    const double bridge = walk[k] - t * walk[kIntradaySteps];
    const int minutes = 9 * 60 + static_cast<int>(k) * 5;
    char stamp[32];
    std::snprintf(stamp, sizeof stamp, "%sT%02d:%02d", s.points[last].date.c_str(), minutes / 60,
                  minutes % 60);
    out.points.push_back({stamp, open * std::exp(t * drift + bridge)});
  }
  out.points.back().value = close;
  return out;
}

inline WorldPayload world_arrows(const std::vector<IndexHistory>& world,
                                 const std::string& cutoff_date, TieRule ties) {
  WorldPayload out;
  for (const auto& idx : world) {
    auto end = std::upper_bound(
        idx.points.begin(), idx.points.end(), cutoff_date,
        [](const std::string& d, const PricePoint& p) { return d < p.date; });
    const auto available = static_cast<std::size_t>(end - idx.points.begin());
    if (available < 2) continue;
    const std::size_t days = std::min(kWorldArrowDays, available - 1);
    IndexArrows ia;
    ia.symbol = idx.symbol;
    for (std::size_t i = available - days; i < available; ++i) {
      const double prev = idx.points[i - 1].close, cur = idx.points[i].close;
      ia.dates.push_back(idx.points[i].date);
      ia.arrows.push_back(cur > prev   ? Direction::up
                          : cur < prev ? Direction::down
                                       : (ties == TieRule::down ? Direction::down : Direction::up));
    }
    out.indices.push_back(std::move(ia));
  }
  return out;
}

}  // namespace detail

// View data for one panel while round `round` is open. Only closes up to
// last_visible_index(round) are read, so no panel reveals the outcome.
inline PanelContent panel_content(const PriceSeries& s, PanelKind kind, int round,
                                  const PanelInputs& inputs = {}) {
  if (round < 1 || round > kRoundsPerScenario) fail(ErrorCode::out_of_range, "round outside 1..25");
  if (s.playable_offset < kContextPoints || s.target_index(round) >= s.size())
    fail(ErrorCode::out_of_range, "series too short for round");
  const std::size_t last = s.last_visible_index(round);
  PanelContent c{kind, {}};
  switch (kind) {
    case PanelKind::price_chart: c.payload = detail::chart_points(s, round, 0); break;
    case PanelKind::ma5: c.payload = detail::chart_points(s, round, 5); break;
    case PanelKind::ma30: c.payload = detail::chart_points(s, round, 30); break;
    case PanelKind::intraday: c.payload = detail::intraday_bridge(s, round, inputs.intraday_seed); break;
    case PanelKind::expert: {
      if (!inputs.advice) fail(ErrorCode::missing_oracle, "expert panel needs advice");
      const auto& a = *inputs.advice;
      c.payload = ExpertPayload{a.stated_direction, a.volatility_phrase, a.sentence()};
      break;
    }
    case PanelKind::market_arrows: {
      const std::size_t first = last + 1 > kArrowCount ? last + 1 - kArrowCount : 1;
      c.payload = ArrowsPayload{direction_sequence(s, {first, last + 1}, inputs.ties)};
      break;
    }
    case PanelKind::world_indices: {
      static const std::vector<IndexHistory> none;
      c.payload = detail::world_arrows(inputs.world ? *inputs.world : none, s.points[last].date,
                                       inputs.ties);
      break;
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// JSON views (shared by the HTTP API and reports)

inline nlohmann::json to_json(const PanelContent& c) {
  nlohmann::json j;
  j["kind"] = to_string(c.kind);
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ChartPayload>) {
          auto pts = nlohmann::json::array();
          for (const auto& pt : p.points) pts.push_back({{"t", pt.date}, {"v", pt.value}});
          j["points"] = std::move(pts);
          if (p.synthetic) j["synthetic"] = true;
        } else if constexpr (std::is_same_v<T, ExpertPayload>) {
          j["direction"] = to_string(p.stated_direction);
          j["volatility"] = to_string(p.volatility_phrase);
          j["text"] = p.text;
        } else if constexpr (std::is_same_v<T, ArrowsPayload>) {
          auto a = nlohmann::json::array();
          for (auto d : p.arrows) a.push_back(to_string(d));
          j["arrows"] = std::move(a);
        } else {
          auto arr = nlohmann::json::array();
          for (const auto& ia : p.indices) {
            auto a = nlohmann::json::array();
            for (auto d : ia.arrows) a.push_back(to_string(d));
            arr.push_back({{"symbol", ia.symbol}, {"dates", ia.dates}, {"arrows", std::move(a)}});
          }
          j["indices"] = std::move(arr);
        }
      },
      c.payload);
  return j;
}

}  // namespace mrbanks
