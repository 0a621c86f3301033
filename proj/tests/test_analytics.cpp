#include <gtest/gtest.h>

#include <cmath>

#include "mrbanks/analytics.hpp"
#include "mrbanks/rng.hpp"

using namespace mrbanks;

namespace {

const Direction U = Direction::up, D = Direction::down;

RoundRecord rec(const std::string& session, int round, Guess guess, Direction prev, Direction next) {
  RoundRecord r;
  r.participant_id = "p-" + session;
  r.session_id = session;
  r.round_index = round;
  r.guess = guess;
  r.market_prev = prev;
  r.market_next = next;
  if (!guess.is_timeout()) r.outcome = outcome_of(guess.value(), next);
  r.decision_time = 3.0;
  return r;
}

// A session whose market path is `moves` (moves[0] precedes round 1).
std::vector<RoundRecord> session_of(const std::string& id, const std::vector<Direction>& moves,
                                    const std::vector<Guess>& guesses) {
  std::vector<RoundRecord> out;
  for (std::size_t i = 0; i < guesses.size(); ++i)
    out.push_back(rec(id, static_cast<int>(i + 1), guesses[i], moves[i], moves[i + 1]));
  return out;
}

std::vector<RoundRecord> random_records(std::uint64_t seed, int sessions, int rounds) {
  auto eng = rng::make_engine(seed);
  std::vector<RoundRecord> out;
  for (int s = 0; s < sessions; ++s) {
    std::vector<Direction> moves;
    std::vector<Guess> guesses;
    for (int r = 0; r <= rounds; ++r) moves.push_back(rng::bernoulli(eng, 0.55) ? U : D);
    for (int r = 0; r < rounds; ++r)
      guesses.push_back(rng::bernoulli(eng, 0.02) ? Guess::timeout() : Guess(rng::bernoulli(eng, 0.6) ? U : D));
    auto part = session_of("s" + std::to_string(s), moves, guesses);
    for (auto& r : part) {
      r.decision_time = rng::uniform01(eng) * 30.0;
      if (rng::bernoulli(eng, 0.3)) r.panels_viewed.insert(PanelKind::ma5);
      if (rng::bernoulli(eng, 0.3)) {
        r.panels_viewed.insert(PanelKind::expert);
        r.expert_consulted = true;
        r.expert_advice = rng::bernoulli(eng, 0.6) ? r.market_next : !r.market_next;
      }
    }
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

}  // namespace

TEST(FollowLabel, ExhaustiveTruthTable) {
  int cases = 0;
  for (auto prev_guess : {U, D})
    for (auto market_prev : {U, D})
      for (auto guess : {U, D}) {
        // Oracle: MI follows when the guess copies the last market move; WSLS
        // follows when it keeps a winning guess or switches a losing one.
        const bool won = prev_guess == market_prev;
        const bool mi = guess == market_prev;
        const bool wsls = won ? guess == prev_guess : guess != prev_guess;
        const FollowContext ctx{prev_guess, market_prev, guess};
        EXPECT_EQ(follow_label(ctx, StrategyBasis::mi).follows(), mi);
        EXPECT_EQ(follow_label(ctx, StrategyBasis::wsls).follows(), wsls);
        EXPECT_EQ(mi, wsls);
        EXPECT_EQ(follow_label(ctx, StrategyBasis::aggregated).follows(), mi);
        ++cases;
      }
  EXPECT_EQ(cases, 8);
  EXPECT_THROW(follow_label(FollowContext{std::nullopt, U, U}, StrategyBasis::mi), Error);
}

TEST(ContextSample, PairingRules) {
  auto a = session_of("a", {U, D, U, U, D}, {Guess(U), Guess(D), Guess::timeout(), Guess(U)});
  auto b = session_of("b", {D, D, U}, {Guess(D), Guess(U)});
  b[1].market_prev = U;  // inconsistent with b[0].market_next
  std::vector<RoundRecord> all;
  all.insert(all.end(), b.begin(), b.end());
  all.insert(all.end(), a.begin(), a.end());
  const auto cs = context_sample(all);
  EXPECT_EQ(cs.first_rounds, 2u);
  EXPECT_EQ(cs.broken_chains, 1u);      // a round 4 follows a timeout
  EXPECT_EQ(cs.market_mismatches, 1u);  // b round 2
  ASSERT_EQ(cs.decisions.size(), 1u);  // a round 2
  const auto& d = cs.decisions[0];
  EXPECT_EQ(d.record->session_id, "a");
  EXPECT_EQ(d.record->round_index, 2);
  EXPECT_EQ(d.prev_guess, U);
  EXPECT_EQ(d.prev_outcome, Outcome::wrong);  // guessed up, market went down
  EXPECT_EQ(d.market_prev, D);
  EXPECT_EQ(follow_equivalence_violations(cs.decisions), 0u);
}

TEST(ContextSample, FilterExcludesScenarioFour) {
  auto s = session_of("x", {U, U, D, U}, {Guess(U), Guess(U), Guess(D)});
  for (auto& r : s) {
    r.scenario_id = 4;
    r.excluded_by_default = true;
  }
  EXPECT_TRUE(context_sample(s).decisions.empty());
  AnalysisFilter f;
  f.include_excluded = true;
  EXPECT_EQ(context_sample(s, f).decisions.size(), 2u);
  f.scenarios = {1};
  EXPECT_TRUE(context_sample(s, f).decisions.empty());
}

TEST(Trees, HandCountedFixture) {
  // Market: U U D U D D U; guesses for rounds 1..6.
  const std::vector<Direction> m = {U, U, D, U, D, D, U};
  const auto recs = session_of("t", m, {Guess(U), Guess(U), Guess(D), Guess(U), Guess(D), Guess(D)});
  const auto cs = context_sample(recs);
  ASSERT_EQ(cs.decisions.size(), 5u);
  // Rounds 2..6: (market_prev, guess): (U,U) (D,D) (U,U) (D,D) (D,D)
  const auto mi = conditional_tree_mi(cs.decisions);
  EXPECT_EQ(mi.at("market_prev=up").first.n, 2);
  EXPECT_DOUBLE_EQ(mi.at("market_prev=up").first.p, 1.0);
  EXPECT_EQ(mi.at("market_prev=down").first.n, 3);
  EXPECT_DOUBLE_EQ(mi.at("market_prev=down").first.p, 0.0);
  // Previous outcomes for rounds 2..6: r1 U vs U correct; r2 U vs D wrong;
  // r3 D vs U wrong; r4 U vs D wrong; r5 D vs D correct.
  // Repeats: r2 U->U yes; r3 U->D no; r4 D->U no; r5 U->D no; r6 D->D yes.
  const auto ws = conditional_tree_wsls(cs.decisions);
  EXPECT_EQ(ws.at("prev_outcome=correct").first.n, 2);
  EXPECT_DOUBLE_EQ(ws.at("prev_outcome=correct").first.p, 1.0);
  EXPECT_EQ(ws.at("prev_outcome=wrong").first.n, 3);
  EXPECT_DOUBLE_EQ(ws.at("prev_outcome=wrong").second.p, 1.0);
}

TEST(TwoStep, LeavesAndVerdict) {
  const auto recs = random_records(3, 300, 25);
  const auto cs = context_sample(recs);
  const auto rep = two_step_tree(cs.decisions);
  ASSERT_EQ(rep.tree.nodes.size(), 4u);
  ASSERT_EQ(rep.leaves.size(), 8u);
  const auto mi = conditional_tree_mi(cs.decisions);
  const auto ws = conditional_tree_wsls(cs.decisions);
  // Independent recount of one leaf: p(up | prev_guess=down, prev_outcome=wrong).
  std::int64_t n = 0, up = 0;
  for (const auto& d : cs.decisions)
    if (d.prev_guess == D && d.prev_outcome == Outcome::wrong) {
      ++n;
      up += d.guess == U;
    }
  const auto& leaf = rep.leaves[6];
  EXPECT_EQ(leaf.path, "prev_guess=down,prev_outcome=wrong,guess=up");
  EXPECT_NEAR(leaf.two_step, static_cast<double>(up) / static_cast<double>(n), 1e-15);
  // Down and wrong means the market went up; guess up repeats nothing, i.e. a change.
  EXPECT_DOUBLE_EQ(leaf.mi, mi.at("market_prev=up").first.p);
  EXPECT_DOUBLE_EQ(leaf.wsls, ws.at("prev_outcome=wrong").second.p);
  double dm = 0, dw = 0;
  for (const auto& l : rep.leaves) {
    dm += std::abs(l.two_step - l.mi);
    dw += std::abs(l.two_step - l.wsls);
  }
  EXPECT_NEAR(rep.mean_distance_mi, dm / 8, 1e-15);
  EXPECT_NEAR(rep.mean_distance_wsls, dw / 8, 1e-15);
  EXPECT_EQ(rep.verdict, dm < dw ? DominantStrategy::market_imitation : DominantStrategy::win_stay_lose_shift);
}

TEST(TotalProbability, ExactOnRandomLogs) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto recs = random_records(seed, 40, 25);
    const auto cs = context_sample(recs);
    const auto c = total_probability_check(cs.decisions);
    EXPECT_LE(c.abs_error, 1e-12);
    EXPECT_EQ(c.max_row_sum_error, 0.0);
  }
}

TEST(TotalProbability, EmptyRaises) {
  try {
    total_probability_check(std::span<const Decision>{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::empty_sample);
  }
}

TEST(Information, SummaryMatchesDirectTables) {
  const auto recs = random_records(4, 200, 25);
  const auto cs = context_sample(recs);
  const auto s = information_summary(cs.decisions, 50, 1);
  EXPECT_NEAR(s.guess_vs_market_prev.bits, mutual_information(joint_table(cs.decisions, Variable::market_prev, Variable::guess)), 1e-15);
  EXPECT_EQ(s.guess_vs_market_prev.n, static_cast<std::int64_t>(cs.decisions.size()));
  // Chain rule: I(G; M, O) = I(G; M) + I(G; O | M) = I(G; O) + I(G; M | O).
  const double lhs = s.guess_vs_market_prev.bits + s.guess_vs_outcome_given_market.bits;
  const double rhs = s.guess_vs_prev_outcome.bits + s.guess_vs_market_given_outcome.bits;
  EXPECT_NEAR(lhs, rhs, 1e-12);
  const auto again = information_summary(cs.decisions, 50, 1);
  EXPECT_EQ(again.guess_self.sd, s.guess_self.sd);
}

TEST(Curves, BinsAndReference) {
  auto recs = random_records(5, 100, 25);
  const auto cs = context_sample(recs);
  const auto c = follow_strategy_curves(cs.decisions, CurveAxis::time_bins_5s);
  ASSERT_EQ(c.bins.size(), 6u);
  EXPECT_EQ(c.bins[0].label, "0-5s");
  std::int64_t total = 0, hits = 0;
  for (const auto& b : c.bins) {
    total += b.n;
    if (b.estimate) hits += b.estimate->successes();
  }
  EXPECT_EQ(total, static_cast<std::int64_t>(cs.decisions.size()));
  EXPECT_EQ(hits, c.reference.successes());
  Decision edge;
  edge.decision_time = 30.0;
  EXPECT_EQ(bin_index(edge, CurveAxis::time_bins_5s), 5u);
  edge.decision_time = 4.999;
  EXPECT_EQ(bin_index(edge, CurveAxis::time_bins_5s), 0u);
  const auto e = follow_strategy_curves(cs.decisions, CurveAxis::expert_flag);
  ASSERT_EQ(e.bins.size(), 2u);
  const auto p = follow_strategy_curves(cs.decisions, CurveAxis::panel_count);
  EXPECT_FALSE(p.bins[5].estimate.has_value());  // nobody viewed five panels
}

TEST(Stats, SdUnitsCalibration) {
  EXPECT_NEAR(stats::sd_units({0.69, 0.03, 0}, ProbEstimate::exact(0.60)), 3.0, 1e-12);
  EXPECT_NEAR(stats::sd_units({0.69, 0.03, 0}, ProbEstimate::exact(0.60), stats::SdPolicy::first_sd), 3.0, 1e-12);
  // Quadrature of two sampled estimates: 0.073 / sqrt(2 * 0.004^2).
  EXPECT_NEAR(stats::sd_units({0.606, 0.004, 1}, {0.533, 0.004, 1}), 0.073 / std::sqrt(2 * 0.004 * 0.004), 1e-9);
  // Pooled two-proportion z for 60/100 vs 50/100.
  const double pooled = 0.55, se = std::sqrt(pooled * 0.45 * (2.0 / 100));
  EXPECT_NEAR(stats::sd_units(ProbEstimate::from_counts(60, 100), ProbEstimate::from_counts(50, 100),
                              stats::SdPolicy::pooled_two_proportion),
              0.1 / se, 1e-12);
  EXPECT_THROW(stats::sd_units(ProbEstimate::exact(0.5), ProbEstimate::exact(0.4)), Error);
}

TEST(Stats, QuantilesType7) {
  EXPECT_DOUBLE_EQ(stats::quantile({1, 2, 3, 4}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(stats::quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(stats::quantile({4, 1, 3, 2, 5}, 0.75), 4.0);
  EXPECT_THROW(stats::quantile({}, 0.5), Error);
}

TEST(Stats, OlsExactLine) {
  std::vector<double> x, y;
  for (int i = 0; i < 20; ++i) {
    x.push_back(i % 7);
    y.push_back(2.0 + 2.0 * (i % 7));
  }
  const auto f = stats::ols(x, y);
  EXPECT_NEAR(f.slope, 2.0, 1e-12);
  EXPECT_NEAR(f.intercept, 2.0, 1e-12);
  EXPECT_NEAR(f.slope_stderr, 0.0, 1e-9);
  // Noisy fit against the closed-form slope stderr.
  const std::vector<double> xs = {0, 1, 2, 3}, ys = {1, 3, 2, 5};
  const auto g = stats::ols(xs, ys);
  EXPECT_NEAR(g.slope, 1.1, 1e-12);  // sxy 5.5 / sxx 5
  double ssr = 0;
  for (int i = 0; i < 4; ++i) ssr += std::pow(ys[static_cast<std::size_t>(i)] - (g.intercept + g.slope * i), 2);
  EXPECT_NEAR(g.slope_stderr, std::sqrt(ssr / 2 / 5.0), 1e-12);
}

TEST(Reports, TimeStatsRecoverPanelSlope) {
  std::vector<RoundRecord> recs;
  for (int i = 0; i < 50; ++i) {
    auto r = rec("s", i % 25 + 1, Guess(U), U, U);
    const int k = i % 4;
    const PanelKind extras[] = {PanelKind::ma5, PanelKind::ma30, PanelKind::expert};
    for (int j = 0; j < k; ++j) r.panels_viewed.insert(extras[j]);
    r.decision_time = 2.0 + 2.0 * k;
    recs.push_back(r);
  }
  const auto t = time_stats(recs);
  ASSERT_TRUE(t.time_vs_panels.has_value());
  EXPECT_NEAR(t.time_vs_panels->slope, 2.0, 1e-12);
  EXPECT_NEAR(t.time_vs_panels->slope_stderr, 0.0, 1e-9);
  EXPECT_EQ(t.per_round.size(), 25u);
}

TEST(Reports, PerformanceAndBiasTable) {
  const auto recs = random_records(6, 100, 25);
  const auto valid = valid_decisions(recs);
  const auto cs = context_sample(recs);
  const auto perf = performance_report(valid);
  std::int64_t ok = 0;
  for (const auto& r : valid) ok += *r.outcome == Outcome::correct;
  EXPECT_EQ(perf.overall.successes(), ok);
  EXPECT_EQ(perf.overall.n, static_cast<std::int64_t>(valid.size()));

  const auto bias = bias_table(valid, cs.decisions);
  ASSERT_EQ(bias.rows.size(), 4u);
  EXPECT_NEAR(bias.rows[0].subject.p + bias.rows[1].subject.p, 1.0, 1e-15);
  EXPECT_NEAR(bias.rows[2].market.p + bias.rows[3].market.p, 1.0, 1e-15);
  EXPECT_NEAR(bias.rows[0].sd_units, stats::sd_units(bias.rows[0].subject, bias.rows[0].market), 1e-15);
}

TEST(Reports, ExpertEffect) {
  const auto recs = random_records(7, 200, 25);
  const auto valid = valid_decisions(recs);
  const auto cs = context_sample(recs);
  const auto e = expert_effect(valid, cs.decisions);
  std::int64_t n = 0, t = 0;
  for (const auto& r : valid)
    if (r.expert_consulted) {
      ++n;
      t += r.guess.value() == *r.expert_advice;
    }
  EXPECT_EQ(e.trust.n, n);
  EXPECT_EQ(e.trust.successes(), t);
  EXPECT_NEAR(e.follow_delta, e.follow_consulted.p - e.follow_overall.p, 1e-15);
}

TEST(Reports, CohortGroupsFlagEmpty) {
  auto recs = random_records(8, 20, 25);
  for (auto& r : recs) r.cohort.gender = r.session_id < "s10" ? Gender::female : Gender::male;
  const auto valid = valid_decisions(recs);
  const auto cs = context_sample(recs);
  const auto rep = cohort_report(valid, cs.decisions, CohortDimension::gender);
  ASSERT_EQ(rep.groups.size(), 3u);
  EXPECT_FALSE(rep.groups[0].empty);
  EXPECT_FALSE(rep.groups[1].empty);
  EXPECT_TRUE(rep.groups[2].empty);
  EXPECT_EQ(rep.groups[0].decisions + rep.groups[1].decisions, static_cast<std::int64_t>(valid.size()));
}
