#pragma once

// Synthetic participants with known strategy parameters. Their logs carry
// ground truth for the analytics pipeline.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mrbanks/core.hpp"
#include "mrbanks/information.hpp"
#include "mrbanks/market_data.hpp"
#include "mrbanks/rng.hpp"
#include "mrbanks/session.hpp"

namespace mrbanks::sim {

enum class AgentKind : std::uint8_t { random, imitator, wsls, calibrated, expert_follower };

inline constexpr std::array<AgentKind, 5> all_agent_kinds = {
    AgentKind::random, AgentKind::imitator, AgentKind::wsls, AgentKind::calibrated,
    AgentKind::expert_follower};

inline constexpr std::string_view to_string(AgentKind k) {
  switch (k) {
    case AgentKind::random: return "random";
    case AgentKind::imitator: return "imitator";
    case AgentKind::wsls: return "wsls";
    case AgentKind::calibrated: return "calibrated";
    case AgentKind::expert_follower: return "expert_follower";
  }
  return "?";
}

// p(up | previous guess, previous outcome). The previous market move is
// implied by the pair, so these four nodes cover all eight leaves.
struct CalibratedTable {
  // index: [prev_guess][prev_outcome]
  std::array<std::array<double, 2>, 2> p_up{{{0.5, 0.5}, {0.5, 0.5}}};

  double at(Direction prev_guess, Outcome prev_outcome) const {
    return p_up[static_cast<std::size_t>(prev_guess)][static_cast<std::size_t>(prev_outcome)];
  }
  double& at(Direction prev_guess, Outcome prev_outcome) {
    return p_up[static_cast<std::size_t>(prev_guess)][static_cast<std::size_t>(prev_outcome)];
  }
};

struct AgentSpec {
  AgentKind kind = AgentKind::random;
  double p_up = 0.5;         // random
  double follow_prob = 1.0;  // imitator, wsls
  CalibratedTable table;     // calibrated
  double obey_prob = 1.0;    // expert_follower
  std::uint64_t seed = 0;
  CohortKey cohort;
};

inline bool valid_probability(double p) { return p >= 0.0 && p <= 1.0; }

inline void validate(const AgentSpec& a) {
  auto check = [](double p, const char* what) {
    if (!valid_probability(p)) fail(ErrorCode::invalid_spec, std::string(what) + " outside [0,1]");
  };
  check(a.p_up, "p_up");
  check(a.follow_prob, "follow_prob");
  check(a.obey_prob, "obey_prob");
  for (const auto& row : a.table.p_up)
    for (double p : row) check(p, "calibrated leaf");
}

struct AgentContext {
  std::optional<Direction> market_prev;
  std::optional<Direction> prev_guess;
  std::optional<Outcome> prev_outcome;
  std::optional<Direction> advice;
};

// One decision. Non-follow branches pick the opposite direction, so the
// follow probability equals the conditional probability exactly.
inline Direction agent_step(const AgentSpec& a, const AgentContext& ctx, rng::Engine& eng) {
  switch (a.kind) {
    case AgentKind::random:
      return rng::bernoulli(eng, a.p_up) ? Direction::up : Direction::down;
    case AgentKind::imitator: {
      if (!ctx.market_prev) fail(ErrorCode::missing_context, "imitator needs the previous market move");
      return rng::bernoulli(eng, a.follow_prob) ? *ctx.market_prev : !*ctx.market_prev;
    }
    case AgentKind::wsls: {
      if (!ctx.prev_guess || !ctx.prev_outcome)
        fail(ErrorCode::missing_context, "wsls needs the previous guess and outcome");
      const Direction rule = *ctx.prev_outcome == Outcome::correct ? *ctx.prev_guess : !*ctx.prev_guess;
      return rng::bernoulli(eng, a.follow_prob) ? rule : !rule;
    }
    case AgentKind::calibrated: {
      if (!ctx.prev_guess || !ctx.prev_outcome)
        return rng::bernoulli(eng, 0.5) ? Direction::up : Direction::down;
      return rng::bernoulli(eng, a.table.at(*ctx.prev_guess, *ctx.prev_outcome)) ? Direction::up
                                                                                  : Direction::down;
    }
    case AgentKind::expert_follower: {
      if (!ctx.advice) fail(ErrorCode::missing_context, "expert follower needs advice");
      return rng::bernoulli(eng, a.obey_prob) ? *ctx.advice : !*ctx.advice;
    }
  }
  return Direction::up;
}

struct IidMarket {
  double up_prob = 0.5;
};

struct SeriesMarket {
  std::vector<const PriceSeries*> pool;
  TieRule ties = TieRule::down;
};

using MarketSpec = std::variant<IidMarket, SeriesMarket>;

// Decision-time and panel-view plumbing for stratified-curve tests; not a
// behavioural model.
struct BehaviourModel {
  double time_median = 3.431;
  double time_sigma = 0.8;
  double seconds_per_panel = 0.0;
  double panel_view_prob = 0.35;  // per non-home panel
  double expert_view_prob = -1.0;  // < 0: same as panel_view_prob
  double timeout_prob = 0.0;
};

struct PopulationSpec {
  std::vector<AgentSpec> agents;
  MarketSpec market = IidMarket{};
  int rounds = kRoundsPerScenario;
  int sessions_per_agent = 1;
  int scenario_id = 1;
  Group group = Group::a;
  BehaviourModel behaviour;
  double expert_accuracy = kExpertAccuracy;
};

inline const AgentSpec kFallbackAgent{};  // random, p_up = 0.5

inline std::string session_id_for(std::size_t agent, int session) {
  return "sim-a" + std::to_string(agent) + "-s" + std::to_string(session);
}

inline std::string participant_id_for(std::size_t agent) { return "agent-" + std::to_string(agent); }

// Runs every (agent, session) pair on its own seeded stream and concatenates
// the records in (agent, session, round) order.
inline std::vector<RoundRecord> run_population(const PopulationSpec& spec) {
  if (spec.rounds < 1) fail(ErrorCode::invalid_spec, "rounds must be positive");
  if (spec.sessions_per_agent < 1) fail(ErrorCode::invalid_spec, "sessions_per_agent must be positive");
  if (!valid_probability(spec.expert_accuracy)) fail(ErrorCode::invalid_spec, "expert_accuracy");
  const auto& bm = spec.behaviour;
  if (!valid_probability(bm.panel_view_prob) || !valid_probability(bm.timeout_prob) ||
      bm.expert_view_prob > 1.0 || !(bm.time_median > 0.0) || bm.time_sigma < 0.0)
    fail(ErrorCode::invalid_spec, "behaviour model");
  if (const auto* iid = std::get_if<IidMarket>(&spec.market); iid && !valid_probability(iid->up_prob))
    fail(ErrorCode::invalid_spec, "market up probability");
  if (const auto* sm = std::get_if<SeriesMarket>(&spec.market)) {
    if (sm->pool.empty()) fail(ErrorCode::invalid_spec, "series market needs a pool");
    if (spec.rounds > kRoundsPerScenario)
      fail(ErrorCode::invalid_spec, "series market supports at most 25 rounds");
  }
  for (const auto& a : spec.agents) validate(a);

  const ScenarioSpec scenario = scenario_spec(spec.scenario_id, spec.group);
  const double limit = scenario.time_limit;
  const double expert_prob = bm.expert_view_prob < 0.0 ? bm.panel_view_prob : bm.expert_view_prob;
  std::vector<RoundRecord> out;
  out.reserve(spec.agents.size() * static_cast<std::size_t>(spec.sessions_per_agent * spec.rounds));

  for (std::size_t ai = 0; ai < spec.agents.size(); ++ai) {
    const auto& agent = spec.agents[ai];
    for (int si = 0; si < spec.sessions_per_agent; ++si) {
      auto eng = rng::make_engine(rng::derive(agent.seed, static_cast<std::uint64_t>(si)));

      // Market path: directions[0] is the move before round 1.
      std::vector<Direction> moves;
      std::optional<TrendLabel> trend;
      if (const auto* iid = std::get_if<IidMarket>(&spec.market)) {
        for (int r = 0; r <= spec.rounds; ++r)
          moves.push_back(rng::bernoulli(eng, iid->up_prob) ? Direction::up : Direction::down);
      } else {
        const auto& sm = std::get<SeriesMarket>(spec.market);
        const PriceSeries& s = *sm.pool[rng::uniform_index(eng, sm.pool.size())];
        const std::size_t first = s.last_visible_index(1);
        moves = direction_sequence(s, {first, first + static_cast<std::size_t>(spec.rounds) + 1}, sm.ties);
        trend = trend_of(s);
      }

      double coins = kStartingCoins;
      std::optional<Direction> prev_guess;
      std::optional<Outcome> prev_outcome;
      for (int round = 1; round <= spec.rounds; ++round) {
        RoundRecord rec;
        rec.participant_id = participant_id_for(ai);
        rec.session_id = session_id_for(ai, si);
        rec.scenario_id = spec.scenario_id;
        rec.group = spec.group;
        rec.round_index = round;
        rec.market_prev = moves[static_cast<std::size_t>(round - 1)];
        rec.market_next = moves[static_cast<std::size_t>(round)];
        rec.trend = trend;
        rec.cohort = agent.cohort;
        rec.excluded_by_default = scenario.excluded_by_default();

        for (auto k : all_panels) {
          if (k == PanelKind::price_chart) continue;
          const double p = k == PanelKind::expert ? expert_prob : bm.panel_view_prob;
          if (rng::bernoulli(eng, p)) rec.panels_viewed.insert(k);
        }
        if (agent.kind == AgentKind::expert_follower) rec.panels_viewed.insert(PanelKind::expert);
        rec.expert_consulted = rec.panels_viewed.count(PanelKind::expert) > 0;
        const bool truthful = rng::bernoulli(eng, spec.expert_accuracy);
        if (rec.expert_consulted) rec.expert_advice = truthful ? rec.market_next : !rec.market_next;

        const double t = rng::lognormal(eng, bm.time_median, bm.time_sigma) +
                         bm.seconds_per_panel * rec.panel_count();
        const bool timed_out = rng::bernoulli(eng, bm.timeout_prob);

        AgentContext ctx{rec.market_prev, prev_guess, prev_outcome, rec.expert_advice};
        Direction guess;
        const bool has_history = prev_guess && prev_outcome;
        if (!has_history && (agent.kind == AgentKind::wsls || agent.kind == AgentKind::calibrated))
          guess = agent_step(kFallbackAgent, ctx, eng);
        else
          guess = agent_step(agent, ctx, eng);

        if (timed_out) {
          rec.guess = Guess::timeout();
          rec.decision_time = limit;
          rec.coins_after = coins;
          prev_guess.reset();
          prev_outcome.reset();
        } else {
          rec.guess = guess;
          rec.decision_time = std::min(t, limit);
          rec.outcome = outcome_of(guess, rec.market_next);
          coins *= *rec.outcome == Outcome::correct ? kWinFactor : kLossFactor;
          rec.coins_after = coins;
          prev_guess = guess;
          prev_outcome = rec.outcome;
        }
        out.push_back(std::move(rec));
      }
    }
  }
  return out;
}

// Mutual information of the imitator channel: market_prev ~ Bernoulli(m)
// and guess = market_prev with probability f, else the opposite.
inline double analytic_channel_mi(double follow_prob, double market_up_prob = 0.5) {
  const double f = follow_prob, m = market_up_prob;
  if (m == 0.5) return 1.0 - binary_entropy(f);
  const double joint[2][2] = {{m * f, m * (1 - f)}, {(1 - m) * (1 - f), (1 - m) * f}};
  const double px[2] = {m, 1 - m};
  const double py[2] = {joint[0][0] + joint[1][0], joint[0][1] + joint[1][1]};
  double mi = 0.0;
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y)
      if (joint[x][y] > 0.0) mi += joint[x][y] * std::log2(joint[x][y] / (px[x] * py[y]));
  return mi;
}

// Stationary first-order conditionals implied by a calibrated table when the
// market is iid Bernoulli(m): guesses and the previous market move are then
// independent, and p(up) solves u = m*p(up|up_M) + (1-m)*p(up|down_M).
struct CalibratedConditionals {
  double p_up = 0.0;
  double up_given_market_up = 0.0;
  double up_given_market_down = 0.0;
  double repeat_given_correct = 0.0;
  double change_given_wrong = 0.0;
  double follow = 0.0;
};

inline CalibratedConditionals stationary_conditionals(const CalibratedTable& t, double m) {
  const double a = t.at(Direction::up, Outcome::correct);    // market was up
  const double b = t.at(Direction::up, Outcome::wrong);      // market was down
  const double c = t.at(Direction::down, Outcome::correct);  // market was down
  const double d = t.at(Direction::down, Outcome::wrong);    // market was up
  // u = m (u a + (1-u) d) + (1-m) (u b + (1-u) c)
  const double slope = m * (a - d) + (1 - m) * (b - c);
  const double u = (m * d + (1 - m) * c) / (1.0 - slope);
  CalibratedConditionals out;
  out.p_up = u;
  out.up_given_market_up = u * a + (1 - u) * d;
  out.up_given_market_down = u * b + (1 - u) * c;
  const double w_uc = u * m, w_dc = (1 - u) * (1 - m), w_uw = u * (1 - m), w_dw = (1 - u) * m;
  out.repeat_given_correct = (w_uc * a + w_dc * (1 - c)) / (w_uc + w_dc);
  out.change_given_wrong = (w_uw * (1 - b) + w_dw * d) / (w_uw + w_dw);
  out.follow = w_uc * a + w_dc * (1 - c) + w_uw * (1 - b) + w_dw * d;
  return out;
}

// ---------------------------------------------------------------------------
// JSON spec files

inline CalibratedTable calibrated_table_from_json(const nlohmann::json& j) {
  // {"up,correct": {"up": .., "down": ..}, ...}; "down" may be omitted.
  CalibratedTable t;
  for (auto g : {Direction::up, Direction::down})
    for (auto o : {Outcome::correct, Outcome::wrong}) {
      const auto key = std::string(to_string(g)) + "," + std::string(to_string(o));
      if (!j.contains(key)) fail(ErrorCode::invalid_spec, "calibrated table lacks leaf " + key);
      const auto& leaf = j.at(key);
      const double up = leaf.at("up").get<double>();
      if (leaf.contains("down") && std::abs(up + leaf.at("down").get<double>() - 1.0) > 1e-9)
        fail(ErrorCode::invalid_spec, "calibrated row " + key + " does not sum to 1");
      t.at(g, o) = up;
    }
  return t;
}

inline nlohmann::json to_json(const CalibratedTable& t) {
  nlohmann::json j;
  for (auto g : {Direction::up, Direction::down})
    for (auto o : {Outcome::correct, Outcome::wrong}) {
      const double up = t.at(g, o);
      j[std::string(to_string(g)) + "," + std::string(to_string(o))] = {{"up", up}, {"down", 1.0 - up}};
    }
  return j;
}

struct CalibratedFile {
  CalibratedTable table;
  double market_up_prob = 0.5;
  std::map<std::string, double> targets;
};

inline CalibratedFile load_calibrated(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::unreadable_file, path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    CalibratedFile f;
    f.table = calibrated_table_from_json(j.at("table"));
    f.market_up_prob = j.at("market_up_prob").get<double>();
    if (!valid_probability(f.market_up_prob)) fail(ErrorCode::invalid_spec, "market_up_prob");
    if (j.contains("targets")) f.targets = j.at("targets").get<std::map<std::string, double>>();
    AgentSpec probe;
    probe.table = f.table;
    validate(probe);
    return f;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_spec, e.what());
  }
}

inline AgentSpec agent_from_json(const nlohmann::json& j) {
  AgentSpec a;
  const auto kind = j.at("kind").get<std::string>();
  bool found = false;
  for (auto k : all_agent_kinds)
    if (to_string(k) == kind) {
      a.kind = k;
      found = true;
    }
  if (!found) fail(ErrorCode::invalid_spec, "unknown agent kind " + kind);
  a.p_up = j.value("p_up", 0.5);
  a.follow_prob = j.value("follow_prob", 1.0);
  a.obey_prob = j.value("obey_prob", 1.0);
  a.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("table")) a.table = calibrated_table_from_json(j.at("table"));
  if (j.contains("cohort")) a.cohort = cohort_from_json(j.at("cohort"));
  validate(a);
  return a;
}

// {"agents": [{"kind": ..., "count": N, ...}], "market": {"iid": 0.5} | {"series": true},
//  "rounds": 25, "sessions_per_agent": 1, "scenario": 1, "group": "A", "seed": 7,
//  "behaviour": {...}}
// Agent seeds are derived from the top-level seed and the agent index unless
// given explicitly.
inline PopulationSpec population_from_json(const nlohmann::json& j, std::uint64_t seed,
                                           std::span<const PriceSeries> pool = {}) {
  PopulationSpec spec;
  try {
    std::size_t index = 0;
    for (const auto& entry : j.at("agents")) {
      const int count = entry.value("count", 1);
      if (count < 0) fail(ErrorCode::invalid_spec, "negative agent count");
      for (int c = 0; c < count; ++c, ++index) {
        AgentSpec a = agent_from_json(entry);
        if (!entry.contains("seed")) a.seed = rng::derive(seed, index);
        else a.seed = rng::derive(a.seed, index);
        spec.agents.push_back(a);
      }
    }
    const auto market = j.value("market", nlohmann::json{{"iid", 0.5}});
    if (market.contains("series") && market.at("series").get<bool>()) {
      SeriesMarket sm;
      for (const auto& s : pool) sm.pool.push_back(&s);
      spec.market = sm;
    } else {
      spec.market = IidMarket{market.value("iid", 0.5)};
    }
    spec.rounds = j.value("rounds", kRoundsPerScenario);
    spec.sessions_per_agent = j.value("sessions_per_agent", 1);
    spec.scenario_id = j.value("scenario", 1);
    auto g = parse_group(j.value("group", std::string("A")));
    if (!g) fail(ErrorCode::invalid_spec, "group must be A or B");
    spec.group = *g;
    spec.expert_accuracy = j.value("expert_accuracy", kExpertAccuracy);
    if (j.contains("behaviour")) {
      const auto& b = j.at("behaviour");
      auto& bm = spec.behaviour;
      bm.time_median = b.value("time_median", bm.time_median);
      bm.time_sigma = b.value("time_sigma", bm.time_sigma);
      bm.seconds_per_panel = b.value("seconds_per_panel", bm.seconds_per_panel);
      bm.panel_view_prob = b.value("panel_view_prob", bm.panel_view_prob);
      bm.expert_view_prob = b.value("expert_view_prob", bm.expert_view_prob);
      bm.timeout_prob = b.value("timeout_prob", bm.timeout_prob);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_spec, e.what());
  }
  return spec;
}

}  // namespace mrbanks::sim
