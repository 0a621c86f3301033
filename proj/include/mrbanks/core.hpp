#pragma once

// Shared vocabulary for the market-direction guessing game: directions,
// outcomes, information panels, cohort keys, decision records and
// probability estimates.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mrbanks {

enum class ErrorCode {
  malformed_row,
  non_monotone_dates,
  non_positive_close,
  too_short,
  insufficient_history,
  out_of_range,
  missing_oracle,
  unknown_scenario,
  empty_pool,
  panel_not_allowed,
  missing_choice,
  round_closed,
  over_time,
  empty_sample,
  missing_context,
  invalid_spec,
  invalid_argument,
  bind_failure,
  bad_manifest,
  unreadable_file,
  unmapped_column,
  unknown_session,
  unknown_participant,
  bad_request,
};

inline constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::malformed_row: return "MalformedRow";
    case ErrorCode::non_monotone_dates: return "NonMonotoneDates";
    case ErrorCode::non_positive_close: return "NonPositiveClose";
    case ErrorCode::too_short: return "TooShort";
    case ErrorCode::insufficient_history: return "InsufficientHistory";
    case ErrorCode::out_of_range: return "OutOfRange";
    case ErrorCode::missing_oracle: return "MissingOracle";
    case ErrorCode::unknown_scenario: return "UnknownScenario";
    case ErrorCode::empty_pool: return "EmptyPool";
    case ErrorCode::panel_not_allowed: return "PanelNotAllowed";
    case ErrorCode::missing_choice: return "MissingChoice";
    case ErrorCode::round_closed: return "RoundClosed";
    case ErrorCode::over_time: return "OverTime";
    case ErrorCode::empty_sample: return "EmptySample";
    case ErrorCode::missing_context: return "MissingContext";
    case ErrorCode::invalid_spec: return "InvalidSpec";
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::bind_failure: return "BindFailure";
    case ErrorCode::bad_manifest: return "BadManifest";
    case ErrorCode::unreadable_file: return "UnreadableFile";
    case ErrorCode::unmapped_column: return "UnmappedColumn";
    case ErrorCode::unknown_session: return "UnknownSession";
    case ErrorCode::unknown_participant: return "UnknownParticipant";
    case ErrorCode::bad_request: return "BadRequest";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

// ---------------------------------------------------------------------------
// Directions and outcomes

enum class Direction : std::uint8_t { up, down };
enum class Outcome : std::uint8_t { correct, wrong };

inline constexpr Direction operator!(Direction d) {
  return d == Direction::up ? Direction::down : Direction::up;
}

inline constexpr Outcome outcome_of(Direction guess, Direction realized) {
  return guess == realized ? Outcome::correct : Outcome::wrong;
}

inline constexpr bool repeat_flag(Direction prev_guess, Direction guess) {
  return prev_guess == guess;
}

inline constexpr std::string_view to_string(Direction d) {
  return d == Direction::up ? "up" : "down";
}

inline constexpr std::string_view to_string(Outcome o) {
  return o == Outcome::correct ? "correct" : "wrong";
}

inline std::optional<Direction> parse_direction(std::string_view s) {
  if (s == "up") return Direction::up;
  if (s == "down") return Direction::down;
  return std::nullopt;
}

inline std::optional<Outcome> parse_outcome(std::string_view s) {
  if (s == "correct") return Outcome::correct;
  if (s == "wrong") return Outcome::wrong;
  return std::nullopt;
}

// A participant's answer for one round. Timeout is its own state and never
// stands in for a direction.
class Guess {
 public:
  constexpr Guess(Direction d) : dir_(d), timeout_(false) {}  // NOLINT(implicit)
  static constexpr Guess timeout() { return Guess(); }

  constexpr bool is_timeout() const { return timeout_; }
  constexpr std::optional<Direction> direction() const {
    if (timeout_) return std::nullopt;
    return dir_;
  }
  constexpr Direction value() const {
    if (timeout_) throw std::logic_error("timeout carries no direction");
    return dir_;
  }

  friend constexpr bool operator==(const Guess&, const Guess&) = default;

 private:
  constexpr Guess() : dir_(Direction::up), timeout_(true) {}
  Direction dir_;
  bool timeout_;
};

inline constexpr std::string_view to_string(const Guess& g) {
  return g.is_timeout() ? "timeout" : to_string(g.value());
}

inline std::optional<Guess> parse_guess(std::string_view s) {
  if (s == "timeout") return Guess::timeout();
  if (auto d = parse_direction(s)) return Guess(*d);
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Information panels

enum class PanelKind : std::uint8_t {
  price_chart,
  ma5,
  ma30,
  intraday,
  expert,
  market_arrows,
  world_indices,
};

inline constexpr std::array<PanelKind, 7> all_panels = {
    PanelKind::price_chart, PanelKind::ma5,           PanelKind::ma30,
    PanelKind::intraday,    PanelKind::expert,        PanelKind::market_arrows,
    PanelKind::world_indices,
};

inline constexpr std::string_view to_string(PanelKind k) {
  switch (k) {
    case PanelKind::price_chart: return "price_chart";
    case PanelKind::ma5: return "ma5";
    case PanelKind::ma30: return "ma30";
    case PanelKind::intraday: return "intraday";
    case PanelKind::expert: return "expert";
    case PanelKind::market_arrows: return "market_arrows";
    case PanelKind::world_indices: return "world_indices";
  }
  return "?";
}

inline std::optional<PanelKind> parse_panel(std::string_view s) {
  for (auto k : all_panels)
    if (to_string(k) == s) return k;
  return std::nullopt;
}

using PanelSet = std::set<PanelKind>;

// Number of information pieces consulted beyond the always-visible home chart.
inline int extra_panel_count(const PanelSet& panels) {
  return static_cast<int>(panels.size()) - (panels.count(PanelKind::price_chart) ? 1 : 0);
}

enum class TrendLabel : std::uint8_t { bullish, bearish, flat };

inline constexpr std::string_view to_string(TrendLabel t) {
  switch (t) {
    case TrendLabel::bullish: return "bullish";
    case TrendLabel::bearish: return "bearish";
    case TrendLabel::flat: return "flat";
  }
  return "?";
}

inline std::optional<TrendLabel> parse_trend(std::string_view s) {
  if (s == "bullish") return TrendLabel::bullish;
  if (s == "bearish") return TrendLabel::bearish;
  if (s == "flat") return TrendLabel::flat;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Cohorts arrive pre-bucketed.

enum class Gender : std::uint8_t { female, male, unreported };
enum class AgeBand : std::uint8_t { upto15, from16to25, from26to35, from36to45, from46to55, over55 };
enum class Education : std::uint8_t { none, primary, secondary, high_school, university, unavailable };

inline constexpr std::array<Gender, 3> all_genders = {Gender::female, Gender::male,
                                                      Gender::unreported};
inline constexpr std::array<AgeBand, 6> all_age_bands = {
    AgeBand::upto15,     AgeBand::from16to25, AgeBand::from26to35,
    AgeBand::from36to45, AgeBand::from46to55, AgeBand::over55};
inline constexpr std::array<Education, 6> all_educations = {
    Education::none,        Education::primary,    Education::secondary,
    Education::high_school, Education::university, Education::unavailable};

inline constexpr std::string_view to_string(Gender g) {
  switch (g) {
    case Gender::female: return "F";
    case Gender::male: return "M";
    case Gender::unreported: return "unreported";
  }
  return "?";
}

inline constexpr std::string_view to_string(AgeBand a) {
  switch (a) {
    case AgeBand::upto15: return "<=15";
    case AgeBand::from16to25: return "16-25";
    case AgeBand::from26to35: return "26-35";
    case AgeBand::from36to45: return "36-45";
    case AgeBand::from46to55: return "46-55";
    case AgeBand::over55: return ">55";
  }
  return "?";
}

inline constexpr std::string_view to_string(Education e) {
  switch (e) {
    case Education::none: return "none";
    case Education::primary: return "primary";
    case Education::secondary: return "secondary";
    case Education::high_school: return "high_school";
    case Education::university: return "university";
    case Education::unavailable: return "unavailable";
  }
  return "?";
}

template <class Enum, std::size_t N>
std::optional<Enum> parse_enum(std::string_view s, const std::array<Enum, N>& values) {
  for (auto v : values)
    if (to_string(v) == s) return v;
  return std::nullopt;
}

// Maps an age in years onto its band; bands are disjoint and cover [0, inf).
inline constexpr AgeBand age_band_of(int years) {
  if (years <= 15) return AgeBand::upto15;
  if (years <= 25) return AgeBand::from16to25;
  if (years <= 35) return AgeBand::from26to35;
  if (years <= 45) return AgeBand::from36to45;
  if (years <= 55) return AgeBand::from46to55;
  return AgeBand::over55;
}

struct CohortKey {
  Gender gender = Gender::unreported;
  AgeBand age_band = AgeBand::from26to35;
  Education education = Education::unavailable;

  friend bool operator==(const CohortKey&, const CohortKey&) = default;
};

// ---------------------------------------------------------------------------
// Scenario groups (shared by the engine and the analytics filters)

enum class Group : std::uint8_t { a, b };

inline constexpr std::string_view to_string(Group g) { return g == Group::a ? "A" : "B"; }

inline std::optional<Group> parse_group(std::string_view s) {
  if (s == "A") return Group::a;
  if (s == "B") return Group::b;
  return std::nullopt;
}

// ---------------------------------------------------------------------------

// One participant decision with its full context.
struct RoundRecord {
  std::string participant_id;
  std::string session_id;
  int scenario_id = 1;
  Group group = Group::a;
  int round_index = 1;
  Guess guess = Direction::up;
  Direction market_prev = Direction::up;
  Direction market_next = Direction::up;
  std::optional<Outcome> outcome;  // absent on timeout
  double decision_time = 0.0;
  PanelSet panels_viewed;
  bool expert_consulted = false;
  std::optional<Direction> expert_advice;  // stated direction when consulted
  double coins_after = 1000.0;
  std::optional<TrendLabel> trend;
  CohortKey cohort;
  bool excluded_by_default = false;

  bool is_timeout() const { return guess.is_timeout(); }
  int panel_count() const { return extra_panel_count(panels_viewed); }

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

// Checks the record-level invariants; returns a description of the first
// violation or an empty string.
inline std::string check_record(const RoundRecord& r, double time_limit) {
  if (r.scenario_id < 1 || r.scenario_id > 4) return "scenario_id outside 1..4";
  if (r.round_index < 1 || r.round_index > 25) return "round_index outside 1..25";
  if (!(r.decision_time >= 0.0)) return "negative decision_time";
  if (r.decision_time > time_limit) return "decision_time above time limit";
  if (r.is_timeout()) {
    if (r.outcome) return "timeout carries an outcome";
  } else {
    if (!r.outcome) return "missing outcome";
    if (*r.outcome != outcome_of(r.guess.value(), r.market_next)) return "outcome inconsistent";
  }
  if (r.expert_consulted && !r.panels_viewed.count(PanelKind::expert))
    return "expert consulted without expert panel";
  if (!(r.coins_after > 0.0)) return "non-positive coins";
  return {};
}

// Empirical probability with its binomial standard deviation.
struct ProbEstimate {
  double p = 0.0;
  double sd = 0.0;
  std::int64_t n = 0;

  static ProbEstimate from_counts(std::int64_t successes, std::int64_t trials) {
    if (trials <= 0) fail(ErrorCode::empty_sample, "no trials");
    if (successes < 0 || successes > trials)
      fail(ErrorCode::invalid_argument, "successes outside [0, trials]");
    ProbEstimate e;
    e.n = trials;
    e.p = static_cast<double>(successes) / static_cast<double>(trials);
    e.sd = std::sqrt(e.p * (1.0 - e.p) / static_cast<double>(trials));
    return e;
  }

  // A known probability with no sampling error (e.g. a design constant).
  static ProbEstimate exact(double p) { return ProbEstimate{p, 0.0, 0}; }

  // The complementary event over the same sample; sd is unchanged.
  ProbEstimate complement() const { return ProbEstimate{1.0 - p, sd, n}; }

  std::int64_t successes() const { return std::llround(p * static_cast<double>(n)); }
};

inline ProbEstimate empirical_prob(std::int64_t successes, std::int64_t trials) {
  return ProbEstimate::from_counts(successes, trials);
}

}  // namespace mrbanks
