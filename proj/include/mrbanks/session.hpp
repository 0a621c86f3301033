#pragma once

// The experimental protocol: scenario assignment, round lifecycle,
// information gating, the expert oracle, payoff and event emission.
//
// Every mutation of a SessionState goes through apply(), which folds one
// EventRecord into the state. Commands validate, build events and apply
// them, so rebuilding from the log yields the same state as the live run.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrbanks/core.hpp"
#include "mrbanks/market_data.hpp"
#include "mrbanks/rng.hpp"

namespace mrbanks {

inline constexpr double kStartingCoins = 1000.0;
inline constexpr double kWinFactor = 1.05;
inline constexpr double kLossFactor = 0.95;
inline constexpr double kExpertAccuracy = 0.6;

enum class PanelSelection : std::uint8_t {
  full,
  home_only,
  one_extra_random,
  one_extra_chosen,
  arrows_only,
};

inline constexpr std::string_view to_string(PanelSelection s) {
  switch (s) {
    case PanelSelection::full: return "full";
    case PanelSelection::home_only: return "home_only";
    case PanelSelection::one_extra_random: return "one_extra_random";
    case PanelSelection::one_extra_chosen: return "one_extra_chosen";
    case PanelSelection::arrows_only: return "arrows_only";
  }
  return "?";
}

// Screens that count as "one screen apart from the home screen".
inline constexpr std::array<PanelKind, 4> extra_screen_candidates = {
    PanelKind::intraday, PanelKind::expert, PanelKind::market_arrows, PanelKind::world_indices};

struct ScenarioSpec {
  int scenario_id = 1;
  Group group = Group::a;
  double time_limit = 30.0;
  PanelSet allowed_panels;
  PanelSelection panel_selection = PanelSelection::full;
  bool trend_warning = false;

  bool excluded_by_default() const { return scenario_id == 4; }
  friend bool operator==(const ScenarioSpec&, const ScenarioSpec&) = default;
};

inline ScenarioSpec scenario_spec(int scenario_id, Group group) {
  const PanelSet everything(all_panels.begin(), all_panels.end());
  ScenarioSpec s;
  s.scenario_id = scenario_id;
  s.group = group;
  switch (scenario_id) {
    case 1:  // time is money
      s.time_limit = group == Group::a ? 30.0 : 10.0;
      s.allowed_panels = everything;
      break;
    case 2:  // information is power
      if (group == Group::a) {
        s.allowed_panels = everything;
      } else {
        s.panel_selection = PanelSelection::home_only;
        s.allowed_panels = {PanelKind::price_chart};
      }
      break;
    case 3:  // the computer virus
      s.panel_selection =
          group == Group::a ? PanelSelection::one_extra_random : PanelSelection::one_extra_chosen;
      s.allowed_panels = {PanelKind::price_chart};
      s.allowed_panels.insert(extra_screen_candidates.begin(), extra_screen_candidates.end());
      break;
    case 4:  // the trend hunter
      if (group == Group::a) {
        s.allowed_panels = everything;
      } else {
        s.panel_selection = PanelSelection::arrows_only;
        s.allowed_panels = {PanelKind::price_chart, PanelKind::market_arrows};
        s.trend_warning = true;
      }
      break;
    default:
      fail(ErrorCode::unknown_scenario, "scenario " + std::to_string(scenario_id));
  }
  return s;
}

enum class AssignmentMode : std::uint8_t { alternating, iid };

// Alternates A/B per scenario by registration order; iid mode flips a
// seeded coin per registration instead.
inline ScenarioSpec assign_group(int scenario_id, std::int64_t registration_counter,
                                 AssignmentMode mode = AssignmentMode::alternating,
                                 std::uint64_t seed = 0) {
  if (scenario_id < 1 || scenario_id > 4)
    fail(ErrorCode::unknown_scenario, "scenario " + std::to_string(scenario_id));
  if (registration_counter < 0) fail(ErrorCode::invalid_argument, "negative registration counter");
  Group g;
  if (mode == AssignmentMode::alternating) {
    g = registration_counter % 2 == 0 ? Group::a : Group::b;
  } else {
    auto eng = rng::make_engine(rng::derive(seed, static_cast<std::uint64_t>(registration_counter) * 4 +
                                                      static_cast<std::uint64_t>(scenario_id)));
    g = rng::bernoulli(eng, 0.5) ? Group::a : Group::b;
  }
  return scenario_spec(scenario_id, g);
}

// Panel set available for a round. `extra` is the participant's choice for
// OneExtraChosen and the engine's draw for OneExtraRandom.
inline PanelSet visible_panels(const ScenarioSpec& spec, std::optional<PanelKind> extra = std::nullopt) {
  switch (spec.panel_selection) {
    case PanelSelection::one_extra_random:
    case PanelSelection::one_extra_chosen: {
      if (!extra) fail(ErrorCode::missing_choice, "one extra screen must be chosen");
      if (std::find(extra_screen_candidates.begin(), extra_screen_candidates.end(), *extra) ==
          extra_screen_candidates.end())
        fail(ErrorCode::panel_not_allowed, std::string(to_string(*extra)));
      return {PanelKind::price_chart, *extra};
    }
    default:
      if (extra && !spec.allowed_panels.count(*extra))
        fail(ErrorCode::panel_not_allowed, std::string(to_string(*extra)));
      return spec.allowed_panels;
  }
}

// ---------------------------------------------------------------------------
// Events

enum class EventType : std::uint8_t {
  register_participant,
  session_start,
  round_start,
  panel_view,
  guess,
  round_result,
  timeout,
  session_end,
};

inline constexpr std::array<EventType, 8> all_event_types = {
    EventType::register_participant, EventType::session_start, EventType::round_start,
    EventType::panel_view,           EventType::guess,         EventType::round_result,
    EventType::timeout,              EventType::session_end};

inline constexpr std::string_view to_string(EventType t) {
  switch (t) {
    case EventType::register_participant: return "Register";
    case EventType::session_start: return "SessionStart";
    case EventType::round_start: return "RoundStart";
    case EventType::panel_view: return "PanelView";
    case EventType::guess: return "Guess";
    case EventType::round_result: return "RoundResult";
    case EventType::timeout: return "Timeout";
    case EventType::session_end: return "SessionEnd";
  }
  return "?";
}

struct EventRecord {
  std::uint64_t seq = 0;
  std::int64_t timestamp = 0;  // milliseconds (wall clock in the service)
  std::string session_id;
  EventType type = EventType::session_start;
  nlohmann::json payload = nlohmann::json::object();

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

inline nlohmann::json to_json(const EventRecord& e) {
  nlohmann::json j;
  j["seq"] = e.seq;
  j["timestamp"] = e.timestamp;
  j["session_id"] = e.session_id;
  j["type"] = to_string(e.type);
  j["payload"] = e.payload;
  return j;
}

inline EventRecord event_from_json(const nlohmann::json& j) {
  EventRecord e;
  e.seq = j.at("seq").get<std::uint64_t>();
  e.timestamp = j.at("timestamp").get<std::int64_t>();
  e.session_id = j.at("session_id").get<std::string>();
  const auto type = j.at("type").get<std::string>();
  bool found = false;
  for (auto t : all_event_types)
    if (to_string(t) == type) {
      e.type = t;
      found = true;
    }
  if (!found) fail(ErrorCode::malformed_row, "unknown event type " + type);
  e.payload = j.at("payload");
  return e;
}

inline nlohmann::json cohort_to_json(const CohortKey& c) {
  return {{"gender", to_string(c.gender)},
          {"age_band", to_string(c.age_band)},
          {"education", to_string(c.education)}};
}

inline CohortKey cohort_from_json(const nlohmann::json& j) {
  CohortKey c;
  auto g = parse_enum(j.value("gender", std::string("unreported")), all_genders);
  auto a = parse_enum(j.value("age_band", std::string("26-35")), all_age_bands);
  auto e = parse_enum(j.value("education", std::string("unavailable")), all_educations);
  if (!g || !a || !e) fail(ErrorCode::bad_request, "unknown cohort value");
  c.gender = *g;
  c.age_band = *a;
  c.education = *e;
  return c;
}

inline nlohmann::json panels_to_json(const PanelSet& panels) {
  auto arr = nlohmann::json::array();
  for (auto k : panels) arr.push_back(to_string(k));
  return arr;
}

inline PanelSet panels_from_json(const nlohmann::json& j) {
  PanelSet out;
  for (const auto& v : j) {
    auto k = parse_panel(v.get<std::string>());
    if (!k) fail(ErrorCode::malformed_row, "unknown panel " + v.dump());
    out.insert(*k);
  }
  return out;
}

// Round-level fields of a RoundRecord as carried by RoundResult events.
inline nlohmann::json round_result_payload(const RoundRecord& r) {
  nlohmann::json j;
  j["round"] = r.round_index;
  j["guess"] = to_string(r.guess);
  j["market_prev"] = to_string(r.market_prev);
  j["market_next"] = to_string(r.market_next);
  j["outcome"] = r.outcome ? nlohmann::json(to_string(*r.outcome)) : nlohmann::json(nullptr);
  j["decision_time"] = r.decision_time;
  j["panels"] = panels_to_json(r.panels_viewed);
  j["expert_consulted"] = r.expert_consulted;
  j["expert_advice"] =
      r.expert_advice ? nlohmann::json(to_string(*r.expert_advice)) : nlohmann::json(nullptr);
  j["coins_after"] = r.coins_after;
  return j;
}

inline void read_round_result(const nlohmann::json& j, RoundRecord& r) {
  auto need_dir = [&](const char* key) {
    auto d = parse_direction(j.at(key).get<std::string>());
    if (!d) fail(ErrorCode::malformed_row, std::string("bad ") + key);
    return *d;
  };
  r.round_index = j.at("round").get<int>();
  auto g = parse_guess(j.at("guess").get<std::string>());
  if (!g) fail(ErrorCode::malformed_row, "bad guess");
  r.guess = *g;
  r.market_prev = need_dir("market_prev");
  r.market_next = need_dir("market_next");
  r.outcome.reset();
  if (!j.at("outcome").is_null()) {
    auto o = parse_outcome(j.at("outcome").get<std::string>());
    if (!o) fail(ErrorCode::malformed_row, "bad outcome");
    r.outcome = o;
  }
  r.decision_time = j.at("decision_time").get<double>();
  r.panels_viewed = panels_from_json(j.at("panels"));
  r.expert_consulted = j.at("expert_consulted").get<bool>();
  r.expert_advice.reset();
  if (j.contains("expert_advice") && !j.at("expert_advice").is_null())
    r.expert_advice = need_dir("expert_advice");
  r.coins_after = j.at("coins_after").get<double>();
}

// ---------------------------------------------------------------------------
// Session state

struct SessionState {
  std::string session_id;
  std::string participant_id;
  CohortKey cohort;
  ScenarioSpec scenario;
  const PriceSeries* series = nullptr;
  std::optional<TrendLabel> trend;  // absent for synthetic markets
  int round = 1;
  double coins = kStartingCoins;
  std::uint64_t rng_seed = 0;
  std::vector<EventRecord> log;

  int correct = 0;
  int wrong = 0;
  int timeouts = 0;
  bool finished = false;

  // Drawn once at session start from the seed so replays reproduce them.
  std::vector<bool> expert_truthful;
  std::vector<PanelKind> random_extras;
  std::uint64_t intraday_seed = 0;

  // Open-round bookkeeping.
  bool round_open = false;
  std::int64_t round_opened_at = 0;
  PanelSet round_viewed;
  std::optional<PanelKind> round_extra;
  std::optional<Direction> round_advice;

  std::vector<RoundRecord> records;
  std::uint64_t next_seq = 0;
  TieRule ties = TieRule::down;
};

// Resolves a series symbol recorded in SessionStart during replay.
using SeriesResolver = std::function<const PriceSeries*(const std::string&)>;

namespace detail {

inline void pregenerate(SessionState& s) {
  auto truth = rng::make_engine(rng::derive(s.rng_seed, 2));
  auto extras = rng::make_engine(rng::derive(s.rng_seed, 3));
  s.expert_truthful.clear();
  s.random_extras.clear();
  for (int r = 0; r < kRoundsPerScenario; ++r) {
    s.expert_truthful.push_back(rng::bernoulli(truth, kExpertAccuracy));
    s.random_extras.push_back(
        extra_screen_candidates[rng::uniform_index(extras, extra_screen_candidates.size())]);
  }
  s.intraday_seed = rng::derive(s.rng_seed, 4);
}

inline Direction market_next(const SessionState& s, int round) {
  return direction_at(*s.series, s.series->target_index(round), s.ties);
}

inline Direction market_prev(const SessionState& s, int round) {
  return direction_at(*s.series, s.series->last_visible_index(round), s.ties);
}

}  // namespace detail

// Folds one event into the state.
inline void apply(SessionState& s, const EventRecord& e, const SeriesResolver& resolve = {}) {
  s.next_seq = std::max(s.next_seq, e.seq + 1);
  const auto& p = e.payload;
  switch (e.type) {
    case EventType::register_participant:
      s.participant_id = p.at("participant_id").get<std::string>();
      s.cohort = cohort_from_json(p.at("cohort"));
      break;
    case EventType::session_start: {
      s.session_id = e.session_id;
      s.participant_id = p.at("participant_id").get<std::string>();
      s.cohort = cohort_from_json(p.at("cohort"));
      auto g = parse_group(p.at("group").get<std::string>());
      if (!g) fail(ErrorCode::malformed_row, "bad group");
      s.scenario = scenario_spec(p.at("scenario_id").get<int>(), *g);
      s.rng_seed = p.at("seed").get<std::uint64_t>();
      s.ties = p.value("ties", std::string("down")) == "up" ? TieRule::up : TieRule::down;
      if (resolve) {
        s.series = resolve(p.at("series").get<std::string>());
        if (!s.series) fail(ErrorCode::bad_manifest, "unknown series " + p.at("series").dump());
      }
      s.trend.reset();
      if (!p.at("trend").is_null()) {
        s.trend = parse_trend(p.at("trend").get<std::string>());
        if (!s.trend) fail(ErrorCode::malformed_row, "bad trend");
      }
      s.round = 1;
      s.coins = kStartingCoins;
      s.correct = s.wrong = s.timeouts = 0;
      s.finished = false;
      detail::pregenerate(s);
      break;
    }
    case EventType::round_start: {
      s.round = p.at("round").get<int>();
      s.round_open = true;
      s.round_opened_at = e.timestamp;
      s.round_viewed.clear();
      s.round_advice.reset();
      s.round_extra.reset();
      if (s.scenario.panel_selection == PanelSelection::one_extra_random)
        s.round_extra = s.random_extras.at(static_cast<std::size_t>(s.round - 1));
      break;
    }
    case EventType::panel_view: {
      auto k = parse_panel(p.at("kind").get<std::string>());
      if (!k) fail(ErrorCode::malformed_row, "bad panel");
      s.round_viewed.insert(*k);
      if (s.scenario.panel_selection == PanelSelection::one_extra_chosen &&
          *k != PanelKind::price_chart && !s.round_extra)
        s.round_extra = *k;
      if (p.contains("advice") && !p.at("advice").is_null())
        s.round_advice = parse_direction(p.at("advice").get<std::string>());
      break;
    }
    case EventType::guess:
    case EventType::timeout:
      s.round_open = false;
      break;
    case EventType::round_result: {
      RoundRecord r;
      r.participant_id = s.participant_id;
      r.session_id = s.session_id;
      r.scenario_id = s.scenario.scenario_id;
      r.group = s.scenario.group;
      r.trend = s.trend;
      r.cohort = s.cohort;
      r.excluded_by_default = s.scenario.excluded_by_default();
      read_round_result(p, r);
      s.round_open = false;
      s.coins = r.coins_after;
      if (r.is_timeout())
        ++s.timeouts;
      else if (*r.outcome == Outcome::correct)
        ++s.correct;
      else
        ++s.wrong;
      s.records.push_back(std::move(r));
      break;
    }
    case EventType::session_end:
      s.finished = true;
      s.round_open = false;
      break;
  }
  s.log.push_back(e);
}

inline SessionState rebuild(std::span<const EventRecord> events, const SeriesResolver& resolve) {
  SessionState s;
  for (const auto& e : events) apply(s, e, resolve);
  return s;
}

namespace detail {

inline void emit(SessionState& s, EventType type, nlohmann::json payload, std::int64_t now) {
  EventRecord e;
  e.seq = s.next_seq;
  e.timestamp = s.log.empty() ? now : std::max(now, s.log.back().timestamp);
  e.session_id = s.session_id;
  e.type = type;
  e.payload = std::move(payload);
  apply(s, e);
}

inline void require_open(const SessionState& s) {
  if (s.finished || !s.round_open) fail(ErrorCode::round_closed, "no open round");
}

inline void close_round(SessionState& s, const RoundRecord& r, std::int64_t now) {
  emit(s, EventType::round_result, round_result_payload(r), now);
  if (r.round_index >= kRoundsPerScenario)
    emit(s, EventType::session_end,
         {{"coins", s.coins}, {"correct", s.correct}, {"wrong", s.wrong}, {"timeouts", s.timeouts}},
         now);
  else
    emit(s, EventType::round_start, {{"round", r.round_index + 1}}, now);
}

inline RoundRecord draft_record(const SessionState& s) {
  RoundRecord r;
  r.participant_id = s.participant_id;
  r.session_id = s.session_id;
  r.scenario_id = s.scenario.scenario_id;
  r.group = s.scenario.group;
  r.round_index = s.round;
  r.market_prev = market_prev(s, s.round);
  r.market_next = market_next(s, s.round);
  r.panels_viewed = s.round_viewed;
  r.expert_consulted = s.round_viewed.count(PanelKind::expert) > 0;
  r.expert_advice = s.round_advice;
  r.trend = s.trend;
  r.cohort = s.cohort;
  r.excluded_by_default = s.scenario.excluded_by_default();
  return r;
}

}  // namespace detail

// Participant-scoped registration event (not tied to a session).
inline EventRecord register_event(const std::string& participant_id, const CohortKey& cohort,
                                  std::uint64_t seq, std::int64_t now) {
  EventRecord e;
  e.seq = seq;
  e.timestamp = now;
  e.type = EventType::register_participant;
  e.payload = {{"participant_id", participant_id}, {"cohort", cohort_to_json(cohort)}};
  return e;
}

// Draws a series uniformly from the pool with the session seed, then opens
// round 1.
inline SessionState start_session(const std::string& session_id, const std::string& participant_id,
                                  const CohortKey& cohort, const ScenarioSpec& scenario,
                                  std::span<const PriceSeries> pool, std::uint64_t seed,
                                  std::int64_t now = 0, TieRule ties = TieRule::down) {
  if (pool.empty()) fail(ErrorCode::empty_pool, "no playable series");
  auto pick = rng::make_engine(rng::derive(seed, 1));
  const PriceSeries& series = pool[rng::uniform_index(pick, pool.size())];
  if (series.playable_offset < kContextPoints ||
      series.playable_offset + kRoundsPerScenario > series.size())
    fail(ErrorCode::out_of_range, "series " + series.symbol + " lacks a full playable window");

  SessionState s;
  s.session_id = session_id;
  s.series = &series;
  s.ties = ties;
  detail::emit(s, EventType::register_participant,
               {{"participant_id", participant_id}, {"cohort", cohort_to_json(cohort)}}, now);
  detail::emit(s, EventType::session_start,
               {{"participant_id", participant_id},
                {"cohort", cohort_to_json(cohort)},
                {"scenario_id", scenario.scenario_id},
                {"group", to_string(scenario.group)},
                {"series", series.symbol},
                {"trend", to_string(trend_of(series))},
                {"seed", seed},
                {"ties", ties == TieRule::up ? "up" : "down"}},
               now);
  detail::emit(s, EventType::round_start, {{"round", 1}}, now);
  return s;
}

// Panels the participant may open right now. Before a OneExtraChosen round
// has its choice, all candidate screens are offered.
inline PanelSet offered_panels(const SessionState& s) {
  const auto& spec = s.scenario;
  if (spec.panel_selection == PanelSelection::one_extra_chosen && !s.round_extra)
    return spec.allowed_panels;
  if (spec.panel_selection == PanelSelection::one_extra_random ||
      spec.panel_selection == PanelSelection::one_extra_chosen)
    return visible_panels(spec, s.round_extra);
  return visible_panels(spec);
}

inline ExpertAdvice generate_expert_advice(const SessionState& s, int round) {
  if (s.finished || round != s.round || !s.round_open)
    fail(ErrorCode::round_closed, "advice requested for round " + std::to_string(round));
  ExpertAdvice a;
  a.round = round;
  a.is_truthful = s.expert_truthful.at(static_cast<std::size_t>(round - 1));
  const Direction realized = detail::market_next(s, round);
  a.stated_direction = a.is_truthful ? realized : !realized;
  a.volatility_phrase = volatility_phrase_at(*s.series, s.series->last_visible_index(round));
  return a;
}

// Opens a panel for the current round and logs the view.
inline PanelContent view_panel(SessionState& s, PanelKind kind, std::int64_t now,
                               const std::vector<IndexHistory>* world = nullptr) {
  detail::require_open(s);
  if (static_cast<double>(now - s.round_opened_at) > s.scenario.time_limit * 1000.0)
    fail(ErrorCode::over_time, "round time limit elapsed");
  PanelSet offered = offered_panels(s);
  if (!offered.count(kind)) fail(ErrorCode::panel_not_allowed, std::string(to_string(kind)));
  if (s.scenario.panel_selection == PanelSelection::one_extra_chosen && kind != PanelKind::price_chart)
    visible_panels(s.scenario, kind);

  PanelInputs inputs;
  inputs.world = world;
  inputs.intraday_seed = s.intraday_seed;
  inputs.ties = s.ties;
  nlohmann::json payload = {{"round", s.round}, {"kind", to_string(kind)}};
  if (kind == PanelKind::expert) {
    inputs.advice = generate_expert_advice(s, s.round);
    payload["advice"] = to_string(inputs.advice->stated_direction);
  }
  auto content = panel_content(*s.series, kind, s.round, inputs);
  detail::emit(s, EventType::panel_view, std::move(payload), now);
  return content;
}

// Scores a guess, updates coins and advances the round.
inline RoundRecord submit_guess(SessionState& s, Direction guess, double elapsed, std::int64_t now) {
  detail::require_open(s);
  if (!(elapsed >= 0.0)) fail(ErrorCode::invalid_argument, "negative elapsed time");
  if (elapsed > s.scenario.time_limit)
    fail(ErrorCode::over_time, std::to_string(elapsed) + " s exceeds the " +
                                   std::to_string(s.scenario.time_limit) + " s limit");
  RoundRecord r = detail::draft_record(s);
  r.guess = guess;
  r.decision_time = elapsed;
  r.outcome = outcome_of(guess, r.market_next);
  r.coins_after = s.coins * (*r.outcome == Outcome::correct ? kWinFactor : kLossFactor);
  detail::emit(s, EventType::guess,
               {{"round", s.round}, {"direction", to_string(guess)}, {"elapsed", elapsed}}, now);
  detail::close_round(s, r, now);
  return r;
}

// Closes the current round without a guess; coins are unchanged.
inline RoundRecord handle_timeout(SessionState& s, std::int64_t now) {
  detail::require_open(s);
  if (static_cast<double>(now - s.round_opened_at) < s.scenario.time_limit * 1000.0)
    fail(ErrorCode::invalid_argument, "time limit not yet reached");
  RoundRecord r = detail::draft_record(s);
  r.guess = Guess::timeout();
  r.decision_time = s.scenario.time_limit;
  r.coins_after = s.coins;
  detail::emit(s, EventType::timeout, {{"round", s.round}}, now);
  detail::close_round(s, r, now);
  return r;
}

// Milliseconds since the current round opened.
inline std::int64_t round_age(const SessionState& s, std::int64_t now) {
  return now - s.round_opened_at;
}

}  // namespace mrbanks
