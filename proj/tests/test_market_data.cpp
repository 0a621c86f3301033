#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "mrbanks/dataset.hpp"
#include "mrbanks/market_data.hpp"
#include "test_util.hpp"

using namespace mrbanks;
using testutil::make_series;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::bad_request;
}

std::vector<double> linear(std::size_t n, double start = 100.0, double step = 1.0) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = start + step * static_cast<double>(i);
  return v;
}

}  // namespace

TEST(LoadSeries, MinimalLengthAccepted) {
  std::istringstream in(testutil::csv_of(linear(55)));
  const auto s = load_series(in);
  EXPECT_EQ(s.size(), 55u);
  EXPECT_EQ(s.playable_offset, 30u);
}

TEST(LoadSeries, FiftyFourRowsTooShort) {
  std::istringstream in(testutil::csv_of(linear(54)));
  EXPECT_EQ(code_of([&] { load_series(in); }), ErrorCode::too_short);
}

TEST(LoadSeries, NegativeCloseRejected) {
  auto closes = linear(60);
  closes[7] = -1.0;
  std::istringstream in(testutil::csv_of(closes));
  EXPECT_EQ(code_of([&] { load_series(in); }), ErrorCode::non_positive_close);
}

TEST(LoadSeries, RowErrors) {
  std::string csv = testutil::csv_of(linear(60));
  std::string bad_date = csv;
  bad_date.replace(bad_date.find("2007-01-03"), 10, "2007-02-30");
  std::istringstream a(bad_date);
  EXPECT_EQ(code_of([&] { load_series(a); }), ErrorCode::malformed_row);

  std::string swapped = csv;
  swapped.replace(swapped.find("2007-01-03"), 10, "2006-12-31");
  std::istringstream b(swapped);
  EXPECT_EQ(code_of([&] { load_series(b); }), ErrorCode::non_monotone_dates);

  std::istringstream c("when,price\n2007-01-01,1\n");
  EXPECT_EQ(code_of([&] { load_series(c); }), ErrorCode::malformed_row);
}

TEST(LoadSeries, CustomMappingAndSidecar) {
  std::string csv = "Close;Open;Date\n";
  for (int i = 0; i < 60; ++i)
    csv += std::to_string(50 + i) + ";1;" + testutil::date_after(i) + "\n";
  std::istringstream in(csv);
  ColumnMapping m{"Date", "Close", ';'};
  auto s = load_series(in, m, "X");
  EXPECT_EQ(s.size(), 60u);
  EXPECT_DOUBLE_EQ(s.close(59), 109.0);

  apply_meta(s, parse_series_meta(nlohmann::json{{"symbol", "Y"}, {"playable_offset", 31}, {"trend", "flat"}}));
  EXPECT_EQ(s.symbol, "Y");
  EXPECT_EQ(s.playable_offset, 31u);
  EXPECT_EQ(trend_of(s), TrendLabel::flat);  // curated label wins
  EXPECT_EQ(classify_trend(s, s.playable_window()), TrendLabel::bullish);
  EXPECT_EQ(code_of([&] { apply_meta(s, SeriesMeta{"", 20, {}}); }), ErrorCode::out_of_range);
  EXPECT_EQ(code_of([&] { apply_meta(s, SeriesMeta{"", 36, {}}); }), ErrorCode::out_of_range);
}

TEST(MovingAverage, Examples) {
  const auto flat = make_series(std::vector<double>(60, 100.0));
  EXPECT_DOUBLE_EQ(moving_average(flat, 5, 20), 100.0);
  const auto s = make_series({1, 2, 3, 4, 5});
  EXPECT_DOUBLE_EQ(moving_average(s, 5, 4), 3.0);
  const auto long_s = make_series(linear(60));
  EXPECT_EQ(code_of([&] { moving_average(long_s, 30, 10); }), ErrorCode::insufficient_history);
}

TEST(MovingAverage, ShiftInvariantAndBounded) {
  const auto base = testutil::zigzag(60);
  auto shifted = base;
  for (auto& x : shifted) x += 17.5;
  const auto a = make_series(base), b = make_series(shifted);
  for (std::size_t at = 29; at < 60; ++at) {
    for (std::size_t w : {5u, 30u}) {
      EXPECT_NEAR(moving_average(b, w, at), moving_average(a, w, at) + 17.5, 1e-9);
      const auto lo = *std::min_element(base.begin() + static_cast<long>(at + 1 - w), base.begin() + static_cast<long>(at + 1));
      const auto hi = *std::max_element(base.begin() + static_cast<long>(at + 1 - w), base.begin() + static_cast<long>(at + 1));
      EXPECT_GE(moving_average(a, w, at), lo - 1e-12);
      EXPECT_LE(moving_average(a, w, at), hi + 1e-12);
    }
  }
}

TEST(DirectionSequence, Examples) {
  const auto up = make_series({1, 2, 3});
  EXPECT_EQ(direction_sequence(up, {1, 3}), (std::vector<Direction>{Direction::up, Direction::up}));
  const auto down = make_series({3, 2, 1});
  EXPECT_EQ(direction_sequence(down, {1, 3}), (std::vector<Direction>{Direction::down, Direction::down}));
  const auto tie = make_series({1, 1});
  EXPECT_EQ(direction_sequence(tie, {1, 2}), std::vector<Direction>{Direction::down});
  EXPECT_EQ(direction_sequence(tie, {1, 2}, TieRule::up), std::vector<Direction>{Direction::up});
  EXPECT_EQ(code_of([&] { direction_sequence(up, {0, 2}); }), ErrorCode::out_of_range);
  EXPECT_EQ(code_of([&] { direction_sequence(up, {1, 4}); }), ErrorCode::out_of_range);
  EXPECT_EQ(direction_sequence(up, {1, 3}).size(), 2u);
}

TEST(RealizedVolatility, Examples) {
  const auto flat = make_series(std::vector<double>(10, 50.0));
  EXPECT_DOUBLE_EQ(realized_volatility(flat, 3, 5), 0.0);

  const auto alt = make_series({100, 110, 100, 110});
  // Hand evaluation: returns {+L, -L, +L}, mean L/3, deviations {2L/3, -4L/3, 2L/3},
  // sum of squares 24L^2/9, sample variance 12L^2/9.
  const double L = std::log(1.1);
  EXPECT_NEAR(realized_volatility(alt, 3, 3), std::sqrt(12.0 * L * L / 9.0), 1e-15);
  EXPECT_EQ(code_of([&] { realized_volatility(alt, 4, 3); }), ErrorCode::insufficient_history);
}

TEST(ClassifyTrend, Examples) {
  const auto inc = make_series(linear(55));
  EXPECT_EQ(classify_trend(inc, inc.playable_window(), 0.02), TrendLabel::bullish);
  const auto flat = make_series(std::vector<double>(55, 80.0));
  EXPECT_EQ(classify_trend(flat, flat.playable_window(), 0.02), TrendLabel::flat);

  // Total log-return of -0.05 over the playable window.
  std::vector<double> closes(55, 100.0);
  for (std::size_t i = 30; i < 55; ++i)
    closes[i] = 100.0 * std::exp(-0.05 * static_cast<double>(i - 30) / 24.0 + (i % 2 ? 0.001 : 0.0));
  closes[54] = 100.0 * std::exp(-0.05);
  const auto bear = make_series(closes);
  EXPECT_NEAR(std::log(bear.close(54) / bear.close(30)), -0.05, 1e-12);
  EXPECT_EQ(classify_trend(bear, bear.playable_window(), 0.02), TrendLabel::bearish);
}

TEST(ClassifyTrend, ReversalFlips) {
  for (unsigned salt = 1; salt < 40; ++salt) {
    auto closes = testutil::zigzag(55, 100.0, salt);
    std::vector<double> rev(closes.rbegin(), closes.rend());
    const auto a = make_series(closes), b = make_series(rev);
    // Mirror the playable window: reversal maps [30, 55) onto [0, 25).
    const auto la = classify_trend(a, {30, 55});
    const auto lb = classify_trend(b, {0, 25});
    if (la == TrendLabel::bullish) EXPECT_EQ(lb, TrendLabel::bearish);
    if (la == TrendLabel::bearish) EXPECT_EQ(lb, TrendLabel::bullish);
    if (la == TrendLabel::flat) EXPECT_EQ(lb, TrendLabel::flat);
  }
}

TEST(PanelContent, FirstRoundChartShowsThirtyContextPoints) {
  const auto s = make_series(testutil::zigzag(55));
  const auto c = panel_content(s, PanelKind::price_chart, 1);
  const auto& chart = std::get<ChartPayload>(c.payload);
  ASSERT_EQ(chart.points.size(), 30u);
  EXPECT_EQ(chart.points.back().date, s.points[29].date);
  EXPECT_DOUBLE_EQ(chart.points.back().value, s.close(29));
  // Round 25 shows 30 context points plus 24 revealed outcomes.
  EXPECT_EQ(std::get<ChartPayload>(panel_content(s, PanelKind::price_chart, 25).payload).points.size(), 54u);
}

TEST(PanelContent, MarketArrowsEndAtPreviousOutcome) {
  const auto s = make_series(testutil::zigzag(70));
  const auto c = panel_content(s, PanelKind::market_arrows, 5);
  const auto& arrows = std::get<ArrowsPayload>(c.payload).arrows;
  ASSERT_EQ(arrows.size(), 30u);
  // Round 4 asks for the move into target_index(4).
  EXPECT_EQ(arrows.back(), direction_at(s, s.target_index(4)));
  const auto expected = direction_sequence(s, {s.target_index(4) - 29, s.target_index(4) + 1});
  EXPECT_EQ(arrows, expected);
}

TEST(PanelContent, ExpertNeedsOracle) {
  const auto s = make_series(testutil::zigzag(55));
  EXPECT_EQ(code_of([&] { panel_content(s, PanelKind::expert, 3); }), ErrorCode::missing_oracle);
  PanelInputs in;
  in.advice = ExpertAdvice{3, Direction::down, VolatilityPhrase::high, false};
  const auto c = panel_content(s, PanelKind::expert, 3, in);
  const auto& e = std::get<ExpertPayload>(c.payload);
  EXPECT_EQ(e.text, "Current volatility is high and the price will go \"down\"");
  EXPECT_FALSE(to_json(c).dump().find("truthful") != std::string::npos);
}

TEST(PanelContent, RoundBounds) {
  const auto s = make_series(testutil::zigzag(55));
  EXPECT_EQ(code_of([&] { panel_content(s, PanelKind::price_chart, 0); }), ErrorCode::out_of_range);
  EXPECT_EQ(code_of([&] { panel_content(s, PanelKind::price_chart, 26); }), ErrorCode::out_of_range);
}

TEST(PanelContent, IntradayBridgeConnectsVisibleCloses) {
  const auto s = make_series(testutil::zigzag(60));
  const auto c = panel_content(s, PanelKind::intraday, 7, PanelInputs{{}, nullptr, 99, TieRule::down});
  const auto& chart = std::get<ChartPayload>(c.payload);
  EXPECT_TRUE(chart.synthetic);
  ASSERT_EQ(chart.points.size(), kIntradaySteps + 1);
  const auto last = s.last_visible_index(7);
  EXPECT_NEAR(chart.points.front().value, s.close(last - 1), 1e-9);
  EXPECT_DOUBLE_EQ(chart.points.back().value, s.close(last));
  EXPECT_EQ(panel_content(s, PanelKind::intraday, 7, PanelInputs{{}, nullptr, 99, TieRule::down}), c);
  EXPECT_NE(panel_content(s, PanelKind::intraday, 7, PanelInputs{{}, nullptr, 98, TieRule::down}), c);
}

TEST(PanelContent, WorldIndicesStopAtCutoff) {
  const auto s = make_series(testutil::zigzag(60));
  std::vector<IndexHistory> world;
  for (int k = 0; k < 9; ++k) {
    IndexHistory h{"W" + std::to_string(k), {}};
    const auto closes = testutil::zigzag(80, 50.0, static_cast<unsigned>(k + 3));
    for (int i = 0; i < 80; ++i) h.points.push_back({testutil::date_after(i), closes[static_cast<std::size_t>(i)]});
    world.push_back(h);
  }
  world[8].points.resize(1);  // too little history: omitted
  PanelInputs in;
  in.world = &world;
  const auto c = panel_content(s, PanelKind::world_indices, 10, in);
  const auto& w = std::get<WorldPayload>(c.payload);
  ASSERT_EQ(w.indices.size(), 8u);
  const auto cutoff = s.points[s.last_visible_index(10)].date;
  for (const auto& idx : w.indices) {
    ASSERT_EQ(idx.arrows.size(), kWorldArrowDays);
    EXPECT_EQ(idx.dates.back(), cutoff);
    for (const auto& d : idx.dates) EXPECT_LE(d, cutoff);
  }
}

// Changing any close at or after the round's target index must not change
// what any panel shows.
TEST(PanelContent, NoLookahead) {
  const auto base = testutil::zigzag(70, 100.0, 5);
  std::vector<IndexHistory> world{{"W", {}}};
  for (int i = 0; i < 70; ++i) world[0].points.push_back({testutil::date_after(i), base[static_cast<std::size_t>(69 - i)]});
  for (int round = 1; round <= kRoundsPerScenario; ++round) {
    const auto a = make_series(base);
    auto mutated = base;
    for (std::size_t i = a.target_index(round); i < mutated.size(); ++i) mutated[i] *= (i % 2 ? 1.7 : 0.4);
    const auto b = make_series(mutated);
    auto world_b = world;
    for (auto& p : world_b[0].points)
      if (p.date > a.points[a.last_visible_index(round)].date) p.close *= 3.0;
    for (auto kind : all_panels) {
      PanelInputs ia, ib;
      ia.world = &world;
      ib.world = &world_b;
      ia.intraday_seed = ib.intraday_seed = 11;
      if (kind == PanelKind::expert) {
        ExpertAdvice adv{round, Direction::up, volatility_phrase_at(a, a.last_visible_index(round)), true};
        EXPECT_EQ(adv.volatility_phrase, volatility_phrase_at(b, b.last_visible_index(round)));
        ia.advice = ib.advice = adv;
      }
      EXPECT_EQ(panel_content(a, kind, round, ia), panel_content(b, kind, round, ib))
          << to_string(kind) << " round " << round;
    }
  }
}

TEST(VolatilityPhrase, ShortAgainstLongWindow) {
  // Quiet history then a burst of large moves: short-term vol is higher.
  // Burst, then quiet, then another burst.
  std::vector<double> closes;
  for (int i = 0; i < 25; ++i) closes.push_back(100.0 + (i % 2 ? 8.0 : -8.0));
  for (int i = 0; i < 25; ++i) closes.push_back(100.0 + (i % 2 ? 0.1 : -0.1));
  for (int i = 0; i < 10; ++i) closes.push_back(100.0 + (i % 2 ? 8.0 : -8.0));
  const auto s = make_series(closes);
  EXPECT_EQ(volatility_phrase_at(s, 59), VolatilityPhrase::high);
  EXPECT_EQ(volatility_phrase_at(s, 45), VolatilityPhrase::low);
}

TEST(Dataset, ShippedManifestIsValid) {
  const auto ds = load_dataset(std::string(MRBANKS_DATA_DIR) + "/manifest.json");
  EXPECT_EQ(ds.series.size(), 30u);
  EXPECT_EQ(ds.world.size(), 9u);
  const auto check = validate_dataset(ds);
  for (const auto& p : check.problems) ADD_FAILURE() << p;
  EXPECT_EQ(check.trend_counts, (std::array<int, 3>{10, 10, 10}));
  for (const auto& s : ds.series) EXPECT_EQ(count_ties(s), 0u) << s.symbol;
}

TEST(Dataset, EmptyManifestRejected) {
  const auto path = std::filesystem::temp_directory_path() / "mrbanks_empty_manifest.json";
  {
    std::ofstream out(path);
    out << R"({"series": [], "world": []})";
  }
  EXPECT_EQ(code_of([&] { load_dataset(path); }), ErrorCode::bad_manifest);
  EXPECT_EQ(code_of([&] { load_dataset("/nonexistent/manifest.json"); }), ErrorCode::bad_manifest);
}
