#pragma once

// HTTP/JSON front end for the session engine. GameService owns the live
// sessions and the event log; HttpServer maps /v1 routes onto it.
//
// Every command runs against a copy of the session state, appends the new
// events to the log, and only then swaps the copy in and answers. Restarting
// from the log therefore yields the state the last acknowledged request saw.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "mrbanks/dataset.hpp"
#include "mrbanks/event_log.hpp"
#include "mrbanks/session.hpp"

namespace mrbanks {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0: any free port
  std::filesystem::path manifest = "data/manifest.json";
  std::filesystem::path log_path = "var/events.jsonl";  // empty: keep events in memory
  std::uint64_t seed = 1;
  std::set<int> scenarios = {1, 2, 3, 4};
  std::size_t leaderboard_size = 10;
  AssignmentMode assignment = AssignmentMode::alternating;
};

inline ServiceConfig service_config_from_json(const nlohmann::json& j) {
  ServiceConfig c;
  try {
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.manifest = j.value("manifest", c.manifest.string());
    c.log_path = j.value("log", c.log_path.string());
    c.seed = j.value("seed", c.seed);
    if (j.contains("scenarios")) c.scenarios = j.at("scenarios").get<std::set<int>>();
    c.leaderboard_size = j.value("leaderboard_size", c.leaderboard_size);
    const auto mode = j.value("assignment", std::string("alternating"));
    if (mode == "alternating") c.assignment = AssignmentMode::alternating;
    else if (mode == "iid") c.assignment = AssignmentMode::iid;
    else fail(ErrorCode::invalid_spec, "assignment must be alternating or iid");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_spec, std::string("service config: ") + e.what());
  }
  for (int s : c.scenarios)
    if (s < 1 || s > 4) fail(ErrorCode::invalid_spec, "scenario toggle " + std::to_string(s));
  if (c.scenarios.empty()) fail(ErrorCode::invalid_spec, "no scenario enabled");
  if (c.port < 0 || c.port > 65535) fail(ErrorCode::invalid_spec, "port out of range");
  return c;
}

// Milliseconds; wall time so timestamps stay comparable across restarts.
using Clock = std::function<std::int64_t()>;

inline std::int64_t wall_clock_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

// Full engine state as JSON, used to compare a live session with one
// rebuilt from its log.
inline nlohmann::json session_fingerprint(const SessionState& s) {
  nlohmann::json j;
  j["session_id"] = s.session_id;
  j["participant_id"] = s.participant_id;
  j["cohort"] = cohort_to_json(s.cohort);
  j["scenario"] = {s.scenario.scenario_id, to_string(s.scenario.group)};
  j["series"] = s.series ? s.series->symbol : "";
  j["trend"] = s.trend ? nlohmann::json(to_string(*s.trend)) : nlohmann::json(nullptr);
  j["round"] = s.round;
  j["coins"] = s.coins;
  j["seed"] = s.rng_seed;
  j["tally"] = {s.correct, s.wrong, s.timeouts};
  j["finished"] = s.finished;
  j["truthful"] = s.expert_truthful;
  auto extras = nlohmann::json::array();
  for (auto k : s.random_extras) extras.push_back(to_string(k));
  j["random_extras"] = extras;
  j["intraday_seed"] = s.intraday_seed;
  j["round_open"] = s.round_open;
  j["round_opened_at"] = s.round_opened_at;
  j["round_viewed"] = panels_to_json(s.round_viewed);
  j["round_extra"] = s.round_extra ? nlohmann::json(to_string(*s.round_extra)) : nlohmann::json(nullptr);
  j["round_advice"] = s.round_advice ? nlohmann::json(to_string(*s.round_advice)) : nlohmann::json(nullptr);
  auto recs = nlohmann::json::array();
  for (const auto& r : s.records) recs.push_back(round_result_payload(r));
  j["records"] = recs;
  auto log = nlohmann::json::array();
  for (const auto& e : s.log) log.push_back(to_json(e));
  j["log"] = log;
  j["next_seq"] = s.next_seq;
  j["ties"] = s.ties == TieRule::up ? "up" : "down";
  return j;
}

struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";

  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::unknown_session:
    case ErrorCode::unknown_participant: return 404;
    case ErrorCode::round_closed:
    case ErrorCode::over_time: return 409;
    case ErrorCode::bad_request:
    case ErrorCode::invalid_argument:
    case ErrorCode::unknown_scenario:
    case ErrorCode::panel_not_allowed:
    case ErrorCode::missing_choice: return 400;
    default: return 500;
  }
}

inline ApiResponse error_response(ErrorCode code, const std::string& message) {
  return {http_status(code), nlohmann::json{{"code", to_string(code)}, {"message", message}}.dump()};
}

class GameService {
 public:
  GameService(const Dataset& dataset, ServiceConfig config, Clock clock = wall_clock_ms)
      : dataset_(dataset), config_(std::move(config)), clock_(std::move(clock)), log_(config_.log_path) {
    if (dataset_.series.empty()) fail(ErrorCode::bad_manifest, "no playable series");
    restore(log_.snapshot());
  }

  const ServiceConfig& config() const { return config_; }
  EventLog& log() { return log_; }

  // --- commands and queries; each returns the response body ---------------

  nlohmann::json register_participant(const nlohmann::json& body) {
    CohortKey cohort;
    try {
      nlohmann::json c = body.is_object() ? body : nlohmann::json::object();
      if (c.contains("age") && !c.contains("age_band"))
        c["age_band"] = to_string(age_band_of(c.at("age").get<int>()));
      cohort = cohort_from_json(c);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::bad_request, e.what());
    }
    std::lock_guard lock(registry_mutex_);
    const auto id = make_id("p-", participants_.size() + 1);
    log_.append(register_event(id, cohort, participants_.size(), clock_()));
    participants_[id] = cohort;
    return {{"participant_id", id}, {"cohort", cohort_to_json(cohort)}};
  }

  nlohmann::json create_session(const nlohmann::json& body) {
    std::string participant;
    int scenario = 0;
    try {
      participant = body.at("participant_id").get<std::string>();
      scenario = body.at("scenario_id").get<int>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::bad_request, e.what());
    }
    if (!config_.scenarios.count(scenario))
      fail(ErrorCode::unknown_scenario, "scenario " + std::to_string(scenario) + " is not enabled");

    std::unique_lock lock(registry_mutex_);
    auto p = participants_.find(participant);
    if (p == participants_.end()) fail(ErrorCode::unknown_participant, participant);
    const auto counter = assigned_[scenario];
    const auto spec = assign_group(scenario, counter, config_.assignment, config_.seed);
    const auto id = make_id("s-", sessions_.size() + 1);
    const auto seed = rng::derive(config_.seed, sessions_.size() + 1);
    auto slot = std::make_shared<Slot>();
    slot->state = start_session(id, participant, p->second, spec, dataset_.series, seed, clock_());
    log_.append(slot->state.log);
    sessions_[id] = slot;
    order_.push_back(id);
    ++assigned_[scenario];
    lock.unlock();

    std::lock_guard guard(slot->mutex);
    auto out = round_view(slot->state);
    return out;
  }

  nlohmann::json current_round(const std::string& session_id) {
    return with_session(session_id, [&](SessionState& s, bool, std::int64_t) { return round_view(s); });
  }

  nlohmann::json view_panel(const std::string& session_id, const nlohmann::json& body) {
    std::optional<PanelKind> kind;
    std::optional<int> round;
    try {
      kind = parse_panel(body.at("kind").get<std::string>());
      if (body.contains("round")) round = body.at("round").get<int>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::bad_request, e.what());
    }
    if (!kind) fail(ErrorCode::bad_request, "unknown panel kind " + body.at("kind").dump());
    return with_session(session_id, [&](SessionState& s, bool timed_out, std::int64_t now) {
      check_round(s, round, timed_out);
      const auto content = mrbanks::view_panel(s, *kind, now, &dataset_.world);
      auto j = to_json(content);
      j["round"] = s.round;
      return j;
    });
  }

  nlohmann::json submit_guess(const std::string& session_id, const nlohmann::json& body) {
    std::optional<Direction> dir;
    std::optional<int> round;
    try {
      dir = parse_direction(body.at("direction").get<std::string>());
      if (body.contains("round")) round = body.at("round").get<int>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::bad_request, e.what());
    }
    if (!dir) fail(ErrorCode::bad_request, "direction must be up or down");
    return with_session(session_id, [&](SessionState& s, bool timed_out, std::int64_t now) {
      check_round(s, round, timed_out);
      const double elapsed = static_cast<double>(round_age(s, now)) / 1000.0;
      const auto r = mrbanks::submit_guess(s, *dir, elapsed, now);
      nlohmann::json j = {{"round", r.round_index},
                          {"guess", to_string(r.guess)},
                          {"market", to_string(r.market_next)},
                          {"outcome", to_string(*r.outcome)},
                          {"decision_time", r.decision_time},
                          {"coins", s.coins},
                          {"finished", s.finished}};
      if (!s.finished) j["next_round"] = s.round;
      return j;
    });
  }

  nlohmann::json leaderboard() {
    struct Entry {
      std::string participant, session;
      int scenario;
      double coins;
      int rounds;
      bool finished;
    };
    std::vector<Entry> entries;
    for (const auto& [id, slot] : all_slots()) {
      std::lock_guard lock(slot->mutex);
      const auto& s = slot->state;
      if (s.records.empty()) continue;
      entries.push_back({s.participant_id, id, s.scenario.scenario_id, s.coins,
                         static_cast<int>(s.records.size()), s.finished});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      if (a.coins != b.coins) return a.coins > b.coins;
      return a.session < b.session;
    });
    if (entries.size() > config_.leaderboard_size) entries.resize(config_.leaderboard_size);
    auto arr = nlohmann::json::array();
    for (std::size_t i = 0; i < entries.size(); ++i)
      arr.push_back({{"rank", i + 1},
                     {"participant_id", entries[i].participant},
                     {"session_id", entries[i].session},
                     {"scenario_id", entries[i].scenario},
                     {"coins", entries[i].coins},
                     {"rounds_played", entries[i].rounds},
                     {"finished", entries[i].finished}});
    return {{"entries", arr}};
  }

  // JSONL of the log. Sessions still in progress are left out unless asked
  // for, since their SessionStart carries the seed.
  std::string export_events(bool include_open = false) {
    std::set<std::string> open;
    if (!include_open)
      for (const auto& [id, slot] : all_slots()) {
        std::lock_guard lock(slot->mutex);
        if (!slot->state.finished) open.insert(id);
      }
    std::string out;
    for (const auto& e : log_.snapshot())
      if (!open.count(e.session_id)) out += to_json(e).dump() + "\n";
    return out;
  }

  // Participants, counters and every session's full state.
  nlohmann::json snapshot() {
    nlohmann::json j;
    std::lock_guard lock(registry_mutex_);
    auto parts = nlohmann::json::object();
    for (const auto& [id, c] : participants_) parts[id] = cohort_to_json(c);
    j["participants"] = parts;
    auto assigned = nlohmann::json::object();
    for (const auto& [k, v] : assigned_) assigned[std::to_string(k)] = v;
    j["assigned"] = assigned;
    auto sessions = nlohmann::json::object();
    for (const auto& [id, slot] : sessions_) {
      std::lock_guard guard(slot->mutex);
      sessions[id] = session_fingerprint(slot->state);
    }
    j["sessions"] = sessions;
    return j;
  }

  // Routes one /v1 request; used by HttpServer and directly by tests.
  ApiResponse route(const std::string& method, const std::string& path, const std::string& body,
                    const std::multimap<std::string, std::string>& query = {}) {
    static const std::regex session_re(R"(^/v1/sessions/([A-Za-z0-9_-]+)/(rounds/current|panel-views|guesses)$)");
    try {
      auto parse = [&]() {
        if (body.empty()) return nlohmann::json::object();
        try {
          return nlohmann::json::parse(body);
        } catch (const nlohmann::json::parse_error& e) {
          fail(ErrorCode::bad_request, std::string("body is not JSON: ") + e.what());
        }
      };
      std::smatch m;
      if (method == "POST" && path == "/v1/participants") return ok(register_participant(parse()), 201);
      if (method == "POST" && path == "/v1/sessions") return ok(create_session(parse()), 201);
      if (method == "GET" && path == "/v1/leaderboard") return ok(leaderboard());
      if (method == "GET" && path == "/v1/export/events") {
        bool all = false;
        if (auto it = query.find("include_open"); it != query.end()) all = it->second == "true" || it->second == "1";
        return {200, export_events(all), "application/x-ndjson"};
      }
      if (std::regex_match(path, m, session_re)) {
        const std::string id = m[1], action = m[2];
        if (method == "GET" && action == "rounds/current") return ok(current_round(id));
        if (method == "POST" && action == "panel-views") return ok(view_panel(id, parse()));
        if (method == "POST" && action == "guesses") return ok(submit_guess(id, parse()));
      }
      return {404, nlohmann::json{{"code", "NotFound"}, {"message", method + " " + path}}.dump()};
    } catch (const Error& e) {
      return error_response(e.code(), e.what());
    } catch (const std::exception& e) {
      return {500, nlohmann::json{{"code", "Internal"}, {"message", e.what()}}.dump()};
    }
  }

 private:
  struct Slot {
    std::mutex mutex;
    SessionState state;
  };

  static std::string make_id(const char* prefix, std::size_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%06zu", prefix, n);
    return buf;
  }

  static ApiResponse ok(const nlohmann::json& j, int status = 200) { return {status, j.dump()}; }

  std::vector<std::pair<std::string, std::shared_ptr<Slot>>> all_slots() {
    std::lock_guard lock(registry_mutex_);
    std::vector<std::pair<std::string, std::shared_ptr<Slot>>> out;
    for (const auto& id : order_) out.emplace_back(id, sessions_.at(id));
    return out;
  }

  std::shared_ptr<Slot> find_slot(const std::string& id) {
    std::lock_guard lock(registry_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) fail(ErrorCode::unknown_session, id);
    return it->second;
  }

  // Closes every round whose time ran out; each timeout is stamped at its
  // own deadline so a long absence replays the same way.
  static bool expire(SessionState& s, std::int64_t now) {
    bool any = false;
    const auto limit_ms = static_cast<std::int64_t>(std::llround(s.scenario.time_limit * 1000.0));
    while (!s.finished && s.round_open && now - s.round_opened_at >= limit_ms) {
      handle_timeout(s, s.round_opened_at + limit_ms);
      any = true;
    }
    return any;
  }

  // Runs `f` on a copy of the session, persists the new events, then commits.
  template <class F>
  nlohmann::json with_session(const std::string& id, F&& f) {
    auto slot = find_slot(id);
    std::lock_guard lock(slot->mutex);
    SessionState work = slot->state;
    const auto before = work.log.size();
    const auto now = clock_();
    const bool timed_out = expire(work, now);
    nlohmann::json out;
    std::optional<Error> err;
    try {
      out = f(work, timed_out, now);
    } catch (const Error& e) {
      err = e;
    }
    if (work.log.size() > before)
      log_.append(std::span<const EventRecord>(work.log.data() + before, work.log.size() - before));
    slot->state = std::move(work);
    if (err) throw *err;
    return out;
  }

  static void check_round(const SessionState& s, std::optional<int> round, bool timed_out) {
    if (s.finished) fail(ErrorCode::round_closed, "session finished");
    if (timed_out && !round) fail(ErrorCode::over_time, "round time limit elapsed");
    if (round && *round != s.round)
      fail(timed_out ? ErrorCode::over_time : ErrorCode::round_closed,
           "round " + std::to_string(*round) + " is not open (current " + std::to_string(s.round) + ")");
  }

  // What a participant may see of the session right now.
  nlohmann::json round_view(const SessionState& s) const {
    nlohmann::json j;
    j["session_id"] = s.session_id;
    j["participant_id"] = s.participant_id;
    j["scenario_id"] = s.scenario.scenario_id;
    j["group"] = to_string(s.scenario.group);
    j["time_limit"] = s.scenario.time_limit;
    j["rounds_total"] = kRoundsPerScenario;
    j["round"] = s.round;
    j["finished"] = s.finished;
    j["coins"] = s.coins;
    j["correct"] = s.correct;
    j["wrong"] = s.wrong;
    j["timeouts"] = s.timeouts;
    j["server_time"] = clock_();
    if (!s.finished) {
      j["round_started_at"] = s.round_opened_at;
      j["deadline"] = s.round_opened_at + static_cast<std::int64_t>(std::llround(s.scenario.time_limit * 1000.0));
      j["offered_panels"] = panels_to_json(offered_panels(s));
      j["viewed_panels"] = panels_to_json(s.round_viewed);
    }
    return j;
  }

  void restore(const std::vector<EventRecord>& events) {
    SeriesResolver resolve = [this](const std::string& symbol) { return dataset_.find(symbol); };
    for (const auto& e : events) {
      if (e.session_id.empty()) {
        if (e.type == EventType::register_participant)
          participants_[e.payload.at("participant_id").get<std::string>()] = cohort_from_json(e.payload.at("cohort"));
        continue;
      }
      auto& slot = sessions_[e.session_id];
      if (!slot) {
        slot = std::make_shared<Slot>();
        order_.push_back(e.session_id);
      }
      apply(slot->state, e, resolve);
      if (e.type == EventType::session_start) ++assigned_[slot->state.scenario.scenario_id];
    }
  }

  const Dataset& dataset_;
  ServiceConfig config_;
  Clock clock_;
  EventLog log_;
  std::mutex registry_mutex_;
  std::map<std::string, CohortKey> participants_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::vector<std::string> order_;
  std::map<int, std::int64_t> assigned_;
};

class HttpServer {
 public:
  explicit HttpServer(GameService& service) : service_(service) {
    auto handle = [this](const httplib::Request& req, httplib::Response& res) {
      std::multimap<std::string, std::string> query(req.params.begin(), req.params.end());
      const auto r = service_.route(req.method, req.path, req.body, query);
      res.status = r.status;
      res.set_content(r.body, r.content_type);
    };
    server_.Get(".*", handle);
    server_.Post(".*", handle);
    // httplib's default adds SO_REUSEPORT, which lets a second server share
    // a port that is already serving.
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
  }

  // Binds without serving yet; port 0 picks a free port. Returns the port.
  int bind(const std::string& host, int port) {
    int bound = -1;
    if (port == 0)
      bound = server_.bind_to_any_port(host);
    else if (server_.bind_to_port(host, port))
      bound = port;
    if (bound < 0) fail(ErrorCode::bind_failure, "cannot bind " + host + ":" + std::to_string(port));
    port_ = bound;
    return bound;
  }

  int port() const { return port_; }

  // Blocks until stop().
  void run() { server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() const { server_.wait_until_ready(); }

 private:
  GameService& service_;
  httplib::Server server_;
  int port_ = -1;
};

}  // namespace mrbanks
