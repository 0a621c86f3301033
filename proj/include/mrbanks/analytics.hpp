#pragma once

// Statistics over RoundRecord streams: conditional trees for Market
// Imitation and Win-Stay Lose-Shift, the two-step tree, Follow-Strategy
// curves, information measures, and performance/time/expert/cohort reports.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mrbanks/core.hpp"
#include "mrbanks/information.hpp"
#include "mrbanks/stats.hpp"

namespace mrbanks {

// ---------------------------------------------------------------------------
// Filtering and (previous, current) pairing

struct AnalysisFilter {
  bool include_timeouts = false;
  bool include_excluded = false;  // scenario 4
  std::set<int> scenarios;        // empty: all

  bool admits(const RoundRecord& r) const {
    if (r.is_timeout() && !include_timeouts) return false;
    if (r.excluded_by_default && !include_excluded) return false;
    if (!scenarios.empty() && !scenarios.count(r.scenario_id)) return false;
    return true;
  }
};

// Valid (non-timeout) decisions admitted by the filter.
inline std::vector<RoundRecord> valid_decisions(std::span<const RoundRecord> records,
                                                const AnalysisFilter& filter = {}) {
  std::vector<RoundRecord> out;
  for (const auto& r : records)
    if (!r.is_timeout() && filter.admits(r)) out.push_back(r);
  return out;
}

// A decision together with the previous round of the same session.
struct Decision {
  Direction guess = Direction::up;
  Direction market_prev = Direction::up;
  Direction market_next = Direction::up;
  Direction prev_guess = Direction::up;
  Outcome prev_outcome = Outcome::correct;
  Outcome outcome = Outcome::correct;
  double decision_time = 0.0;
  int panel_count = 0;
  bool expert_consulted = false;
  std::optional<Direction> expert_advice;
  const RoundRecord* record = nullptr;

  bool repeated() const { return repeat_flag(prev_guess, guess); }
};

struct ContextSample {
  std::vector<Decision> decisions;
  std::size_t first_rounds = 0;        // no previous round in the session
  std::size_t broken_chains = 0;       // previous round missing or timed out
  std::size_t market_mismatches = 0;   // prev.market_next != cur.market_prev
};

// Pairs each valid decision with the preceding round of its session.
// Records are ordered by (session, round); pairs never cross sessions.
inline ContextSample context_sample(std::span<const RoundRecord> records,
                                    const AnalysisFilter& filter = {}) {
  std::vector<const RoundRecord*> order;
  order.reserve(records.size());
  for (const auto& r : records) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(), [](const RoundRecord* a, const RoundRecord* b) {
    if (a->session_id != b->session_id) return a->session_id < b->session_id;
    return a->round_index < b->round_index;
  });
  ContextSample out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const RoundRecord& cur = *order[i];
    if (cur.is_timeout() || !filter.admits(cur)) continue;
    const RoundRecord* prev = i > 0 ? order[i - 1] : nullptr;
    if (!prev || prev->session_id != cur.session_id) {
      ++out.first_rounds;
      continue;
    }
    if (prev->round_index + 1 != cur.round_index || prev->is_timeout()) {
      ++out.broken_chains;
      continue;
    }
    if (prev->market_next != cur.market_prev) {
      ++out.market_mismatches;
      continue;
    }
    Decision d;
    d.guess = cur.guess.value();
    d.market_prev = cur.market_prev;
    d.market_next = cur.market_next;
    d.prev_guess = prev->guess.value();
    d.prev_outcome = *prev->outcome;
    d.outcome = *cur.outcome;
    d.decision_time = cur.decision_time;
    d.panel_count = cur.panel_count();
    d.expert_consulted = cur.expert_consulted;
    d.expert_advice = cur.expert_advice;
    d.record = &cur;
    out.decisions.push_back(d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Follow-Strategy labels

enum class StrategyBasis : std::uint8_t { mi, wsls, aggregated };
enum class FollowValue : std::uint8_t { follow, not_follow };

struct StrategyLabel {
  FollowValue value = FollowValue::not_follow;
  StrategyBasis basis = StrategyBasis::aggregated;

  bool follows() const { return value == FollowValue::follow; }
  friend bool operator==(const StrategyLabel&, const StrategyLabel&) = default;
};

struct FollowContext {
  std::optional<Direction> prev_guess;
  std::optional<Direction> market_prev;
  Direction guess = Direction::up;
};

// The previous outcome is implied: correct iff prev_guess == market_prev.
inline StrategyLabel follow_label(const FollowContext& ctx, StrategyBasis basis) {
  if (!ctx.prev_guess || !ctx.market_prev)
    fail(ErrorCode::missing_context, "follow label needs previous guess and market");
  const bool mi = ctx.guess == *ctx.market_prev;
  const bool prev_correct = outcome_of(*ctx.prev_guess, *ctx.market_prev) == Outcome::correct;
  const bool repeat = repeat_flag(*ctx.prev_guess, ctx.guess);
  const bool wsls = prev_correct ? repeat : !repeat;
  bool f = false;
  switch (basis) {
    case StrategyBasis::mi: f = mi; break;
    case StrategyBasis::wsls: f = wsls; break;
    case StrategyBasis::aggregated: f = mi || wsls; break;
  }
  return {f ? FollowValue::follow : FollowValue::not_follow, basis};
}

inline StrategyLabel follow_label(const Decision& d, StrategyBasis basis) {
  // WSLS uses the recorded previous outcome rather than re-deriving it.
  if (basis == StrategyBasis::wsls) {
    const bool wsls = d.prev_outcome == Outcome::correct ? d.repeated() : !d.repeated();
    return {wsls ? FollowValue::follow : FollowValue::not_follow, basis};
  }
  return follow_label(FollowContext{d.prev_guess, d.market_prev, d.guess}, basis);
}

// Number of decisions whose MI and WSLS labels disagree (always 0 for a
// consistent log).
inline std::size_t follow_equivalence_violations(std::span<const Decision> sample) {
  std::size_t bad = 0;
  for (const auto& d : sample)
    if (follow_label(d, StrategyBasis::mi).follows() != follow_label(d, StrategyBasis::wsls).follows())
      ++bad;
  return bad;
}

// ---------------------------------------------------------------------------
// Conditional trees

struct TreeNode {
  std::string path;
  std::string first_label;
  std::string second_label;
  ProbEstimate first;
  ProbEstimate second;  // complement of first over the same sample
};

struct ConditionalTree {
  std::vector<TreeNode> nodes;

  const TreeNode& at(const std::string& path) const {
    for (const auto& n : nodes)
      if (n.path == path) return n;
    fail(ErrorCode::out_of_range, "no tree node " + path);
  }
  const TreeNode* find(const std::string& path) const {
    for (const auto& n : nodes)
      if (n.path == path) return &n;
    return nullptr;
  }
};

namespace detail {

inline TreeNode make_node(std::string path, std::string first_label, std::string second_label,
                          std::int64_t hits, std::int64_t n) {
  TreeNode node{std::move(path), std::move(first_label), std::move(second_label), {}, {}};
  if (n > 0) {
    node.first = ProbEstimate::from_counts(hits, n);
    node.second = node.first.complement();
  }
  return node;
}

}  // namespace detail

// p(guess | previous market move).
inline ConditionalTree conditional_tree_mi(std::span<const Decision> sample) {
  if (sample.empty()) fail(ErrorCode::empty_sample, "no decisions with market context");
  std::array<std::int64_t, 2> up{}, n{};
  for (const auto& d : sample) {
    const auto m = static_cast<std::size_t>(d.market_prev);
    ++n[m];
    if (d.guess == Direction::up) ++up[m];
  }
  ConditionalTree t;
  t.nodes.push_back(detail::make_node("market_prev=up", "up", "down", up[0], n[0]));
  t.nodes.push_back(detail::make_node("market_prev=down", "up", "down", up[1], n[1]));
  return t;
}

// p(repeat | previous outcome).
inline ConditionalTree conditional_tree_wsls(std::span<const Decision> sample) {
  if (sample.empty()) fail(ErrorCode::empty_sample, "no decisions with outcome context");
  std::array<std::int64_t, 2> repeat{}, n{};
  for (const auto& d : sample) {
    const auto o = static_cast<std::size_t>(d.prev_outcome);
    ++n[o];
    if (d.repeated()) ++repeat[o];
  }
  ConditionalTree t;
  t.nodes.push_back(detail::make_node("prev_outcome=correct", "repeat", "change", repeat[0], n[0]));
  t.nodes.push_back(detail::make_node("prev_outcome=wrong", "repeat", "change", repeat[1], n[1]));
  return t;
}

inline std::string two_step_path(Direction prev_guess, Outcome prev_outcome) {
  return "prev_guess=" + std::string(to_string(prev_guess)) +
         ",prev_outcome=" + std::string(to_string(prev_outcome));
}

struct TwoStepLeaf {
  std::string path;  // node path + ",guess=..."
  double two_step = 0.0;
  double mi = 0.0;
  double wsls = 0.0;
  double distance_mi = 0.0;
  double distance_wsls = 0.0;
  bool defined = false;
};

enum class DominantStrategy : std::uint8_t { market_imitation, win_stay_lose_shift, tie };

inline constexpr std::string_view to_string(DominantStrategy d) {
  switch (d) {
    case DominantStrategy::market_imitation: return "market_imitation";
    case DominantStrategy::win_stay_lose_shift: return "win_stay_lose_shift";
    case DominantStrategy::tie: return "tie";
  }
  return "?";
}

struct TwoStepReport {
  ConditionalTree tree;
  std::vector<TwoStepLeaf> leaves;
  double mean_distance_mi = 0.0;
  double mean_distance_wsls = 0.0;
  std::size_t leaves_closer_to_mi = 0;
  std::size_t leaves_closer_to_wsls = 0;
  DominantStrategy verdict = DominantStrategy::tie;
};

// p(guess | previous guess, previous outcome) for all 8 leaves, compared
// leaf by leaf with the matching MI and WSLS conditional probabilities.
inline TwoStepReport two_step_tree(std::span<const Decision> sample) {
  if (sample.empty()) fail(ErrorCode::empty_sample, "no decisions with two-step context");
  std::map<std::pair<Direction, Outcome>, std::array<std::int64_t, 2>> counts;  // {up, n}
  for (const auto& d : sample) {
    auto& c = counts[{d.prev_guess, d.prev_outcome}];
    ++c[1];
    if (d.guess == Direction::up) ++c[0];
  }
  const auto mi = conditional_tree_mi(sample);
  const auto wsls = conditional_tree_wsls(sample);

  TwoStepReport rep;
  int defined = 0;
  for (auto g : {Direction::up, Direction::down}) {
    for (auto o : {Outcome::correct, Outcome::wrong}) {
      const auto c = counts[{g, o}];
      const auto path = two_step_path(g, o);
      rep.tree.nodes.push_back(detail::make_node(path, "up", "down", c[0], c[1]));
      const TreeNode& node = rep.tree.nodes.back();
      const Direction market = o == Outcome::correct ? g : !g;
      const auto& mi_node = mi.at(market == Direction::up ? "market_prev=up" : "market_prev=down");
      const auto& wsls_node = wsls.at(o == Outcome::correct ? "prev_outcome=correct" : "prev_outcome=wrong");
      for (auto d : {Direction::up, Direction::down}) {
        TwoStepLeaf leaf;
        leaf.path = path + ",guess=" + std::string(to_string(d));
        leaf.defined = node.first.n > 0 && mi_node.first.n > 0 && wsls_node.first.n > 0;
        if (leaf.defined) {
          leaf.two_step = d == Direction::up ? node.first.p : node.second.p;
          leaf.mi = d == Direction::up ? mi_node.first.p : mi_node.second.p;
          leaf.wsls = d == g ? wsls_node.first.p : wsls_node.second.p;
          leaf.distance_mi = std::abs(leaf.two_step - leaf.mi);
          leaf.distance_wsls = std::abs(leaf.two_step - leaf.wsls);
          rep.mean_distance_mi += leaf.distance_mi;
          rep.mean_distance_wsls += leaf.distance_wsls;
          if (leaf.distance_mi < leaf.distance_wsls) ++rep.leaves_closer_to_mi;
          if (leaf.distance_wsls < leaf.distance_mi) ++rep.leaves_closer_to_wsls;
          ++defined;
        }
        rep.leaves.push_back(leaf);
      }
    }
  }
  if (defined > 0) {
    rep.mean_distance_mi /= defined;
    rep.mean_distance_wsls /= defined;
  }
  rep.verdict = rep.mean_distance_mi < rep.mean_distance_wsls   ? DominantStrategy::market_imitation
                : rep.mean_distance_wsls < rep.mean_distance_mi ? DominantStrategy::win_stay_lose_shift
                                                                : DominantStrategy::tie;
  return rep;
}

// p(Up) against sum_m p(Up | m) p(m) on the same sample.
struct TotalProbabilityCheck {
  double direct = 0.0;
  double reconstructed = 0.0;
  double abs_error = 0.0;
  double max_row_sum_error = 0.0;  // |first + second - 1| over tree nodes
};

inline TotalProbabilityCheck total_probability_check(std::span<const Decision> sample) {
  if (sample.empty()) fail(ErrorCode::empty_sample, "no decisions");
  std::int64_t up = 0;
  std::array<std::int64_t, 2> market{};
  for (const auto& d : sample) {
    if (d.guess == Direction::up) ++up;
    ++market[static_cast<std::size_t>(d.market_prev)];
  }
  const double n = static_cast<double>(sample.size());
  const auto tree = conditional_tree_mi(sample);
  TotalProbabilityCheck c;
  c.direct = static_cast<double>(up) / n;
  for (std::size_t m = 0; m < 2; ++m) {
    const auto& node = tree.nodes[m];
    if (node.first.n > 0) c.reconstructed += node.first.p * static_cast<double>(market[m]) / n;
  }
  c.abs_error = std::abs(c.direct - c.reconstructed);
  const auto wsls = conditional_tree_wsls(sample);
  const auto two = two_step_tree(sample);
  for (const auto* t : {&tree, &wsls, &two.tree})
    for (const auto& node : t->nodes)
      if (node.first.n > 0)
        c.max_row_sum_error = std::max(c.max_row_sum_error, std::abs(node.first.p + node.second.p - 1.0));
  return c;
}

// ---------------------------------------------------------------------------
// Information measures over binary record variables

enum class Variable : std::uint8_t { guess, market_prev, prev_outcome, prev_guess, market_next };

inline constexpr std::string_view to_string(Variable v) {
  switch (v) {
    case Variable::guess: return "guess";
    case Variable::market_prev: return "market_prev";
    case Variable::prev_outcome: return "prev_outcome";
    case Variable::prev_guess: return "prev_guess";
    case Variable::market_next: return "market_next";
  }
  return "?";
}

inline std::size_t value_of(const Decision& d, Variable v) {
  switch (v) {
    case Variable::guess: return static_cast<std::size_t>(d.guess);
    case Variable::market_prev: return static_cast<std::size_t>(d.market_prev);
    case Variable::prev_outcome: return static_cast<std::size_t>(d.prev_outcome);
    case Variable::prev_guess: return static_cast<std::size_t>(d.prev_guess);
    case Variable::market_next: return static_cast<std::size_t>(d.market_next);
  }
  return 0;
}

inline std::vector<std::string> labels_of(Variable v) {
  if (v == Variable::prev_outcome) return {"correct", "wrong"};
  return {"up", "down"};
}

inline JointTable joint_table(std::span<const Decision> sample, Variable condition, Variable decision) {
  JointTable t(labels_of(condition), labels_of(decision));
  for (const auto& d : sample) t.add(value_of(d, condition), value_of(d, decision));
  return t;
}

inline std::vector<JointTable> stratified_tables(std::span<const Decision> sample, Variable target,
                                                 Variable condition, Variable given) {
  std::vector<JointTable> strata(2, JointTable(labels_of(condition), labels_of(target)));
  for (const auto& d : sample) strata[value_of(d, given)].add(value_of(d, condition), value_of(d, target));
  return strata;
}

inline ConditionalInformation conditional_mutual_information(std::span<const Decision> sample,
                                                             Variable target, Variable condition,
                                                             Variable given) {
  if (sample.empty()) fail(ErrorCode::empty_sample, "no decisions");
  const auto strata = stratified_tables(sample, target, condition, given);
  const auto labels = labels_of(given);
  return conditional_mutual_information(strata, labels);
}

struct InformationValue {
  double bits = 0.0;
  double sd = 0.0;  // bootstrap
  std::int64_t n = 0;
};

struct InformationSummary {
  InformationValue guess_vs_market_prev;
  InformationValue guess_vs_prev_outcome;
  InformationValue market_self;  // (market_prev, market_next)
  InformationValue guess_self;   // (prev_guess, guess)
  InformationValue guess_vs_market_given_outcome;
  InformationValue guess_vs_outcome_given_market;
  int bootstrap_resamples = kDefaultBootstrapResamples;
  std::uint64_t bootstrap_seed = 0;
};

inline InformationSummary information_summary(std::span<const Decision> sample,
                                              int resamples = kDefaultBootstrapResamples,
                                              std::uint64_t seed = 0) {
  if (sample.empty()) fail(ErrorCode::empty_sample, "no decisions");
  InformationSummary s;
  s.bootstrap_resamples = resamples;
  s.bootstrap_seed = seed;
  auto pair = [&](Variable a, Variable b, std::uint64_t tag) {
    const auto t = joint_table(sample, a, b);
    return InformationValue{mutual_information(t), bootstrap_mi_sd(t, resamples, rng::derive(seed, tag)),
                            t.total()};
  };
  auto cond = [&](Variable target, Variable c, Variable given, std::uint64_t tag) {
    const auto strata = stratified_tables(sample, target, c, given);
    return InformationValue{conditional_mutual_information(strata).bits,
                            bootstrap_cmi_sd(strata, resamples, rng::derive(seed, tag)),
                            static_cast<std::int64_t>(sample.size())};
  };
  s.guess_vs_market_prev = pair(Variable::market_prev, Variable::guess, 1);
  s.guess_vs_prev_outcome = pair(Variable::prev_outcome, Variable::guess, 2);
  s.market_self = pair(Variable::market_prev, Variable::market_next, 3);
  s.guess_self = pair(Variable::prev_guess, Variable::guess, 4);
  s.guess_vs_market_given_outcome = cond(Variable::guess, Variable::market_prev, Variable::prev_outcome, 5);
  s.guess_vs_outcome_given_market = cond(Variable::guess, Variable::prev_outcome, Variable::market_prev, 6);
  return s;
}

// ---------------------------------------------------------------------------
// Stratified curves

enum class CurveAxis : std::uint8_t { time_bins_5s, panel_count, expert_flag };

inline constexpr std::string_view to_string(CurveAxis a) {
  switch (a) {
    case CurveAxis::time_bins_5s: return "time_bins_5s";
    case CurveAxis::panel_count: return "panel_count";
    case CurveAxis::expert_flag: return "expert_flag";
  }
  return "?";
}

struct CurveBin {
  std::string label;
  std::int64_t n = 0;
  std::optional<ProbEstimate> estimate;  // absent when n == 0
};

struct StratifiedCurve {
  CurveAxis axis = CurveAxis::time_bins_5s;
  std::vector<CurveBin> bins;
  ProbEstimate reference;
};

inline constexpr double kTimeBinWidth = 5.0;
inline constexpr int kTimeBins = 6;  // 0-30 s
inline constexpr int kMaxPanelCount = 6;

inline std::size_t bin_index(const Decision& d, CurveAxis axis) {
  switch (axis) {
    case CurveAxis::time_bins_5s: {
      const int b = static_cast<int>(std::floor(d.decision_time / kTimeBinWidth));
      return static_cast<std::size_t>(std::clamp(b, 0, kTimeBins - 1));
    }
    case CurveAxis::panel_count:
      return static_cast<std::size_t>(std::clamp(d.panel_count, 0, kMaxPanelCount));
    case CurveAxis::expert_flag: return d.expert_consulted ? 1 : 0;
  }
  return 0;
}

inline std::vector<std::string> bin_labels(CurveAxis axis) {
  std::vector<std::string> out;
  switch (axis) {
    case CurveAxis::time_bins_5s:
      for (int b = 0; b < kTimeBins; ++b)
        out.push_back(std::to_string(b * 5) + "-" + std::to_string(b * 5 + 5) + "s");
      break;
    case CurveAxis::panel_count:
      for (int k = 0; k <= kMaxPanelCount; ++k) out.push_back(std::to_string(k));
      break;
    case CurveAxis::expert_flag: out = {"not_consulted", "consulted"}; break;
  }
  return out;
}

// Probability of `event` among decisions satisfying `condition`, per bin of
// `axis`, plus the pooled reference.
template <class Condition, class Event>
StratifiedCurve stratified_curve(std::span<const Decision> sample, CurveAxis axis, Condition&& condition,
                                 Event&& event) {
  const auto labels = bin_labels(axis);
  std::vector<std::int64_t> hits(labels.size(), 0), n(labels.size(), 0);
  std::int64_t total_hits = 0, total = 0;
  for (const auto& d : sample) {
    if (!condition(d)) continue;
    const auto b = bin_index(d, axis);
    ++n[b];
    ++total;
    if (event(d)) {
      ++hits[b];
      ++total_hits;
    }
  }
  if (total == 0) fail(ErrorCode::empty_sample, "no decisions for curve");
  StratifiedCurve c;
  c.axis = axis;
  c.reference = ProbEstimate::from_counts(total_hits, total);
  for (std::size_t b = 0; b < labels.size(); ++b) {
    CurveBin bin{labels[b], n[b], std::nullopt};
    if (n[b] > 0) bin.estimate = ProbEstimate::from_counts(hits[b], n[b]);
    c.bins.push_back(std::move(bin));
  }
  return c;
}

inline StratifiedCurve follow_strategy_curves(std::span<const Decision> sample, CurveAxis axis) {
  return stratified_curve(
      sample, axis, [](const Decision&) { return true; },
      [](const Decision& d) { return follow_label(d, StrategyBasis::aggregated).follows(); });
}

// ---------------------------------------------------------------------------
// Reports

struct PerformanceReport {
  ProbEstimate overall;
  std::map<std::string, ProbEstimate> by_trend;
  std::map<int, ProbEstimate> by_panel_count;
  std::map<std::string, ProbEstimate> by_scenario_group;  // "1A", "2B", ...
};

inline PerformanceReport performance_report(std::span<const RoundRecord> decisions) {
  std::int64_t hits = 0, n = 0;
  std::map<std::string, std::array<std::int64_t, 2>> trend, group;
  std::map<int, std::array<std::int64_t, 2>> panels;
  for (const auto& r : decisions) {
    if (r.is_timeout()) continue;
    const bool ok = *r.outcome == Outcome::correct;
    ++n;
    hits += ok;
    if (r.trend) {
      auto& t = trend[std::string(to_string(*r.trend))];
      t[0] += ok;
      ++t[1];
    }
    auto& p = panels[r.panel_count()];
    p[0] += ok;
    ++p[1];
    auto& g = group[std::to_string(r.scenario_id) + std::string(to_string(r.group))];
    g[0] += ok;
    ++g[1];
  }
  if (n == 0) fail(ErrorCode::empty_sample, "no valid decisions");
  PerformanceReport rep;
  rep.overall = ProbEstimate::from_counts(hits, n);
  for (const auto& [k, v] : trend) rep.by_trend[k] = ProbEstimate::from_counts(v[0], v[1]);
  for (const auto& [k, v] : panels) rep.by_panel_count[k] = ProbEstimate::from_counts(v[0], v[1]);
  for (const auto& [k, v] : group) rep.by_scenario_group[k] = ProbEstimate::from_counts(v[0], v[1]);
  return rep;
}

struct RoundTimeStats {
  int round = 1;
  stats::Quartiles quartiles;
};

struct TimeReport {
  std::vector<RoundTimeStats> per_round;
  stats::Quartiles global;
  std::optional<stats::LinearFit> time_vs_panels;  // absent if panel counts never vary
  double mean_panels = 0.0;
  double mean_panels_se = 0.0;
  std::map<int, stats::Quartiles> by_panel_count;
};

inline TimeReport time_stats(std::span<const RoundRecord> decisions) {
  std::vector<double> times, panels;
  std::map<int, std::vector<double>> per_round, per_panel;
  for (const auto& r : decisions) {
    if (r.is_timeout()) continue;
    times.push_back(r.decision_time);
    panels.push_back(r.panel_count());
    per_round[r.round_index].push_back(r.decision_time);
    per_panel[r.panel_count()].push_back(r.decision_time);
  }
  if (times.empty()) fail(ErrorCode::empty_sample, "no valid decisions");
  TimeReport rep;
  rep.global = stats::quartiles(times);
  for (auto& [round, ts] : per_round) rep.per_round.push_back({round, stats::quartiles(ts)});
  for (auto& [k, ts] : per_panel) rep.by_panel_count[k] = stats::quartiles(ts);
  rep.mean_panels = stats::mean(panels);
  rep.mean_panels_se = stats::standard_error(panels);
  const bool varies = std::any_of(panels.begin(), panels.end(), [&](double p) { return p != panels.front(); });
  if (varies && times.size() >= 3) rep.time_vs_panels = stats::ols(panels, times);
  return rep;
}

struct ExpertReport {
  ProbEstimate trust;  // p(guess == advice | consulted)
  ProbEstimate follow_consulted;
  ProbEstimate follow_not_consulted;
  ProbEstimate follow_overall;
  double follow_delta = 0.0;  // consulted - overall
  double follow_delta_sd_units = 0.0;
  std::optional<ProbEstimate> mi_up_given_up_consulted;
  std::optional<ProbEstimate> repeat_given_correct_consulted;
  double trust_vs_accuracy_sd_units = 0.0;
  stats::SdPolicy policy = stats::SdPolicy::quadrature;
};

inline ExpertReport expert_effect(std::span<const RoundRecord> decisions, std::span<const Decision> sample,
                                  stats::SdPolicy policy = stats::SdPolicy::quadrature) {
  std::int64_t trusted = 0, consulted = 0;
  for (const auto& r : decisions) {
    if (r.is_timeout() || !r.expert_consulted || !r.expert_advice) continue;
    ++consulted;
    if (r.guess.value() == *r.expert_advice) ++trusted;
  }
  if (consulted == 0) fail(ErrorCode::empty_sample, "no expert-consulted rounds");
  ExpertReport rep;
  rep.policy = policy;
  rep.trust = ProbEstimate::from_counts(trusted, consulted);
  rep.trust_vs_accuracy_sd_units =
      stats::sd_units(rep.trust, ProbEstimate::exact(0.6), policy);

  std::array<std::int64_t, 2> follow{}, n{};
  std::int64_t mi_up = 0, mi_n = 0, rep_c = 0, rep_n = 0;
  for (const auto& d : sample) {
    const auto k = d.expert_consulted ? 1 : 0;
    ++n[k];
    follow[k] += follow_label(d, StrategyBasis::aggregated).follows();
    if (d.expert_consulted && d.market_prev == Direction::up) {
      ++mi_n;
      mi_up += d.guess == Direction::up;
    }
    if (d.expert_consulted && d.prev_outcome == Outcome::correct) {
      ++rep_n;
      rep_c += d.repeated();
    }
  }
  if (n[0] + n[1] == 0) fail(ErrorCode::empty_sample, "no decisions with context");
  rep.follow_overall = ProbEstimate::from_counts(follow[0] + follow[1], n[0] + n[1]);
  if (n[1] > 0) rep.follow_consulted = ProbEstimate::from_counts(follow[1], n[1]);
  if (n[0] > 0) rep.follow_not_consulted = ProbEstimate::from_counts(follow[0], n[0]);
  if (n[1] > 0) {
    rep.follow_delta = rep.follow_consulted.p - rep.follow_overall.p;
    rep.follow_delta_sd_units = stats::sd_units(rep.follow_consulted, rep.follow_overall, policy);
  }
  if (mi_n > 0) rep.mi_up_given_up_consulted = ProbEstimate::from_counts(mi_up, mi_n);
  if (rep_n > 0) rep.repeat_given_correct_consulted = ProbEstimate::from_counts(rep_c, rep_n);
  return rep;
}

// Table of behavioural biases: subjects against the market.
struct BiasRow {
  std::string label;
  std::int64_t subject_count = 0;
  ProbEstimate subject;
  std::int64_t market_count = 0;
  ProbEstimate market;
  double difference = 0.0;
  double sd_units = 0.0;
};

struct BiasTable {
  std::vector<BiasRow> rows;  // up, down, repeat, change
  stats::SdPolicy policy = stats::SdPolicy::quadrature;
};

inline BiasTable bias_table(std::span<const RoundRecord> decisions, std::span<const Decision> sample,
                            stats::SdPolicy policy = stats::SdPolicy::quadrature) {
  std::int64_t n = 0, up = 0, market_up = 0;
  for (const auto& r : decisions) {
    if (r.is_timeout()) continue;
    ++n;
    up += r.guess.value() == Direction::up;
    market_up += r.market_next == Direction::up;
  }
  if (n == 0 || sample.empty()) fail(ErrorCode::empty_sample, "bias table needs decisions with context");
  std::int64_t repeat = 0, market_repeat = 0;
  for (const auto& d : sample) {
    repeat += d.repeated();
    market_repeat += d.market_next == d.market_prev;
  }
  const auto m = static_cast<std::int64_t>(sample.size());
  auto row = [&](std::string label, std::int64_t s, std::int64_t mk, std::int64_t total) {
    BiasRow r;
    r.label = std::move(label);
    r.subject_count = s;
    r.market_count = mk;
    r.subject = ProbEstimate::from_counts(s, total);
    r.market = ProbEstimate::from_counts(mk, total);
    r.difference = r.subject.p - r.market.p;
    r.sd_units = stats::sd_units(r.subject, r.market, policy);
    return r;
  };
  BiasTable t;
  t.policy = policy;
  t.rows.push_back(row("up", up, market_up, n));
  t.rows.push_back(row("down", n - up, n - market_up, n));
  t.rows.push_back(row("repeat", repeat, market_repeat, m));
  t.rows.push_back(row("change", m - repeat, m - market_repeat, m));
  return t;
}

// ---------------------------------------------------------------------------
// Cohorts

enum class CohortDimension : std::uint8_t { gender, age_band, education };

inline constexpr std::string_view to_string(CohortDimension d) {
  switch (d) {
    case CohortDimension::gender: return "gender";
    case CohortDimension::age_band: return "age_band";
    case CohortDimension::education: return "education";
  }
  return "?";
}

inline std::vector<std::string> cohort_groups(CohortDimension dim) {
  std::vector<std::string> out;
  switch (dim) {
    case CohortDimension::gender:
      for (auto g : all_genders) out.emplace_back(to_string(g));
      break;
    case CohortDimension::age_band:
      for (auto a : all_age_bands) out.emplace_back(to_string(a));
      break;
    case CohortDimension::education:
      for (auto e : all_educations) out.emplace_back(to_string(e));
      break;
  }
  return out;
}

inline std::string cohort_group_of(const CohortKey& c, CohortDimension dim) {
  switch (dim) {
    case CohortDimension::gender: return std::string(to_string(c.gender));
    case CohortDimension::age_band: return std::string(to_string(c.age_band));
    case CohortDimension::education: return std::string(to_string(c.education));
  }
  return {};
}

struct CohortGroupReport {
  std::string group;
  bool empty = true;
  std::int64_t decisions = 0;
  std::optional<ProbEstimate> follow;
  std::optional<ProbEstimate> success;
  std::optional<stats::Quartiles> time;
  double mean_panels = 0.0;
};

struct CohortReport {
  CohortDimension dimension = CohortDimension::gender;
  std::vector<CohortGroupReport> groups;
};

// Same estimators as the global report, applied per cohort group. Empty
// groups are flagged rather than treated as errors.
inline CohortReport cohort_report(std::span<const RoundRecord> decisions, std::span<const Decision> sample,
                                  CohortDimension dim) {
  if (decisions.empty()) fail(ErrorCode::empty_sample, "no decisions");
  CohortReport rep;
  rep.dimension = dim;
  for (const auto& name : cohort_groups(dim)) {
    CohortGroupReport g;
    g.group = name;
    std::vector<RoundRecord> mine;
    for (const auto& r : decisions)
      if (!r.is_timeout() && cohort_group_of(r.cohort, dim) == name) mine.push_back(r);
    std::vector<Decision> ctx;
    for (const auto& d : sample)
      if (cohort_group_of(d.record->cohort, dim) == name) ctx.push_back(d);
    g.decisions = static_cast<std::int64_t>(mine.size());
    g.empty = mine.empty();
    if (!mine.empty()) {
      g.success = performance_report(mine).overall;
      const auto t = time_stats(mine);
      g.time = t.global;
      g.mean_panels = t.mean_panels;
    }
    if (!ctx.empty()) g.follow = follow_strategy_curves(ctx, CurveAxis::expert_flag).reference;
    rep.groups.push_back(std::move(g));
  }
  return rep;
}

}  // namespace mrbanks
