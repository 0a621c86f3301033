#pragma once

// Getting RoundRecords in and out: the engine's JSONL event log, and flat
// CSV files whose columns are named by a mapping config.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrbanks/event_log.hpp"
#include "mrbanks/session.hpp"

namespace mrbanks {

struct RejectedRow {
  std::size_t line = 0;  // 1-based, header is line 1
  std::string reason;
};

struct IngestResult {
  std::vector<RoundRecord> records;
  std::vector<RejectedRow> rejects;
  std::vector<std::string> open_sessions;  // event logs only: no SessionEnd yet
};

// ---------------------------------------------------------------------------
// Event logs

// Folds each session's events and collects its RoundResults. Sessions come
// out in order of first appearance. Participant-level events (Register) carry
// no session and are skipped.
inline std::vector<RoundRecord> records_from_events(std::span<const EventRecord> events) {
  std::map<std::string, SessionState> states;
  std::vector<std::string> order;
  for (const auto& e : events) {
    if (e.session_id.empty()) continue;
    auto [it, inserted] = states.try_emplace(e.session_id);
    if (inserted) order.push_back(e.session_id);
    apply(it->second, e);
  }
  std::vector<RoundRecord> out;
  for (const auto& id : order) {
    auto& recs = states.at(id).records;
    out.insert(out.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
  }
  return out;
}

// Sessions that have started but not ended, in order of first appearance.
inline std::vector<std::string> open_sessions(std::span<const EventRecord> events) {
  std::vector<std::string> order;
  std::set<std::string> ended;
  for (const auto& e : events) {
    if (e.session_id.empty()) continue;
    if (e.type == EventType::session_start) order.push_back(e.session_id);
    if (e.type == EventType::session_end) ended.insert(e.session_id);
  }
  std::vector<std::string> out;
  for (const auto& id : order)
    if (!ended.count(id)) out.push_back(id);
  return out;
}

inline IngestResult ingest_events(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) fail(ErrorCode::unreadable_file, path.string());
  const auto events = read_events_file(path);
  return {records_from_events(events), {}, open_sessions(events)};
}

// Turns records (e.g. simulator output) into an event stream the analytics
// side reads back unchanged. Consecutive records of one session share a
// SessionStart and are closed by a SessionEnd; timestamps are synthetic.
inline std::vector<EventRecord> events_from_records(std::span<const RoundRecord> records) {
  std::vector<EventRecord> out;
  std::uint64_t seq = 0;
  std::string current;
  bool open = false;
  auto push = [&](const std::string& session, EventType type, nlohmann::json payload) {
    EventRecord e;
    e.seq = seq;
    e.timestamp = static_cast<std::int64_t>(seq);
    ++seq;
    e.session_id = session;
    e.type = type;
    e.payload = std::move(payload);
    out.push_back(std::move(e));
  };
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!open || r.session_id != current) {
      current = r.session_id;
      open = true;
      push(r.session_id, EventType::session_start,
           {{"participant_id", r.participant_id},
            {"cohort", cohort_to_json(r.cohort)},
            {"scenario_id", r.scenario_id},
            {"group", to_string(r.group)},
            {"series", ""},
            {"trend", r.trend ? nlohmann::json(to_string(*r.trend)) : nlohmann::json(nullptr)},
            {"seed", 0}});
    }
    push(r.session_id, EventType::round_result, round_result_payload(r));
    const bool last = i + 1 == records.size() || records[i + 1].session_id != r.session_id;
    if (last) push(r.session_id, EventType::session_end, nlohmann::json::object());
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

// Canonical CSV columns. The first six must be mapped; the rest fall back to
// defaults (outcome and coins are recomputed when absent).
inline const std::vector<std::string>& csv_fields() {
  static const std::vector<std::string> f = {
      "participant_id", "session_id",       "round_index",   "guess",       "market_prev",
      "market_next",    "scenario_id",      "group",         "outcome",     "decision_time",
      "panels",         "expert_consulted", "expert_advice", "coins_after", "trend",
      "gender",         "age_band",         "education"};
  return f;
}

inline constexpr std::size_t kRequiredCsvFields = 6;

// field -> source column, plus optional per-field value translation
// (e.g. {"guess": {"U": "up", "D": "down", "": "timeout"}}).
struct CsvMapping {
  std::map<std::string, std::string> columns;
  std::map<std::string, std::map<std::string, std::string>> values;
  char delimiter = ',';
  char list_separator = ';';

  static CsvMapping identity() {
    CsvMapping m;
    for (const auto& f : csv_fields()) m.columns[f] = f;
    return m;
  }
};

inline CsvMapping csv_mapping_from_json(const nlohmann::json& j) {
  CsvMapping m;
  try {
    for (auto& [field, column] : j.at("columns").items()) {
      if (std::find(csv_fields().begin(), csv_fields().end(), field) == csv_fields().end())
        fail(ErrorCode::invalid_spec, "unknown field in mapping: " + field);
      m.columns[field] = column.get<std::string>();
    }
    if (j.contains("values"))
      for (auto& [field, table] : j.at("values").items())
        for (auto& [from, to] : table.items()) m.values[field][from] = to.get<std::string>();
    const auto delim = j.value("delimiter", std::string(","));
    const auto sep = j.value("list_separator", std::string(";"));
    if (delim.size() != 1 || sep.size() != 1) fail(ErrorCode::invalid_spec, "separators must be one character");
    m.delimiter = delim[0];
    m.list_separator = sep[0];
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_spec, std::string("mapping: ") + e.what());
  }
  return m;
}

inline CsvMapping load_csv_mapping(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::unreadable_file, path.string());
  try {
    return csv_mapping_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::invalid_spec, std::string("mapping: ") + e.what());
  }
}

namespace detail {

// Splits one CSV line; double-quoted cells may contain the delimiter and "".
inline std::vector<std::string> csv_cells(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      out.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  out.push_back(std::move(cell));
  return out;
}

inline bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1") return out = true, true;
  if (s == "false" || s == "0" || s.empty()) return out = false, true;
  return false;
}

}  // namespace detail

// Reads RoundRecords from CSV. Rows that fail to parse or break a record
// invariant are rejected with their line number; the rest are kept.
inline IngestResult ingest_csv(std::istream& in, const CsvMapping& mapping = CsvMapping::identity()) {
  std::string header_line;
  if (!std::getline(in, header_line)) fail(ErrorCode::unreadable_file, "empty CSV");
  const auto header = detail::csv_cells(header_line, mapping.delimiter);
  std::map<std::string, std::size_t> index;  // field -> cell position
  for (const auto& [field, column] : mapping.columns) {
    auto it = std::find(header.begin(), header.end(), column);
    if (it == header.end()) {
      if (std::find(csv_fields().begin(), csv_fields().begin() + kRequiredCsvFields, field) !=
          csv_fields().begin() + kRequiredCsvFields)
        fail(ErrorCode::unmapped_column, "column '" + column + "' for " + field + " not in header");
      continue;
    }
    index[field] = static_cast<std::size_t>(it - header.begin());
  }
  for (std::size_t i = 0; i < kRequiredCsvFields; ++i)
    if (!index.count(csv_fields()[i])) fail(ErrorCode::unmapped_column, "no column mapped to " + csv_fields()[i]);

  IngestResult res;
  std::map<std::string, double> coins;  // running balance per session
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::csv_cells(line, mapping.delimiter);
    std::string why;
    auto get = [&](const std::string& field) -> std::optional<std::string> {
      auto it = index.find(field);
      if (it == index.end()) return std::nullopt;
      if (it->second >= cells.size()) {
        why = "missing cell for " + field;
        return std::nullopt;
      }
      std::string v = cells[it->second];
      if (auto t = mapping.values.find(field); t != mapping.values.end())
        if (auto hit = t->second.find(v); hit != t->second.end()) v = hit->second;
      return v;
    };
    auto reject = [&](std::string reason) { res.rejects.push_back({lineno, std::move(reason)}); };

    RoundRecord r;
    try {
      r.participant_id = get("participant_id").value_or("");
      r.session_id = get("session_id").value_or("");
      const auto round = get("round_index");
      const auto guess = get("guess");
      const auto prev = get("market_prev");
      const auto next = get("market_next");
      if (!why.empty()) {
        reject(why);
        continue;
      }
      if (r.session_id.empty()) {
        reject("empty session_id");
        continue;
      }
      std::size_t used = 0;
      r.round_index = std::stoi(*round, &used);
      if (used != round->size()) throw std::invalid_argument("round_index");
      auto g = parse_guess(*guess);
      auto mp = parse_direction(*prev);
      auto mn = parse_direction(*next);
      if (!g) {
        reject("bad guess '" + *guess + "'");
        continue;
      }
      if (!mp || !mn) {
        reject("bad market direction");
        continue;
      }
      r.guess = *g;
      r.market_prev = *mp;
      r.market_next = *mn;
      if (auto v = get("scenario_id"); v && !v->empty()) r.scenario_id = std::stoi(*v);
      if (auto v = get("group"); v && !v->empty()) {
        auto grp = parse_group(*v);
        if (!grp) {
          reject("bad group '" + *v + "'");
          continue;
        }
        r.group = *grp;
      }
      if (!r.is_timeout()) r.outcome = outcome_of(r.guess.value(), r.market_next);
      if (auto v = get("outcome"); v && !v->empty()) {
        auto o = parse_outcome(*v);
        if (!o && !(*v == "timeout" && r.is_timeout())) {
          reject("bad outcome '" + *v + "'");
          continue;
        }
        if (o && (r.is_timeout() || *o != *r.outcome)) {
          reject("outcome inconsistent with guess and market");
          continue;
        }
      }
      if (auto v = get("decision_time"); v && !v->empty()) r.decision_time = std::stod(*v);
      if (auto v = get("panels"); v && !v->empty()) {
        std::stringstream ss(*v);
        std::string item;
        bool bad = false;
        while (std::getline(ss, item, mapping.list_separator)) {
          if (item.empty()) continue;
          auto k = parse_panel(item);
          if (!k) bad = true;
          else r.panels_viewed.insert(*k);
        }
        if (bad) {
          reject("unknown panel in '" + *v + "'");
          continue;
        }
      }
      if (auto v = get("expert_consulted"); v) {
        if (!detail::parse_bool(*v, r.expert_consulted)) {
          reject("bad expert_consulted '" + *v + "'");
          continue;
        }
      } else {
        r.expert_consulted = r.panels_viewed.count(PanelKind::expert) > 0;
      }
      if (auto v = get("expert_advice"); v && !v->empty()) {
        r.expert_advice = parse_direction(*v);
        if (!r.expert_advice) {
          reject("bad expert_advice '" + *v + "'");
          continue;
        }
      }
      if (auto v = get("trend"); v && !v->empty()) {
        r.trend = parse_trend(*v);
        if (!r.trend) {
          reject("bad trend '" + *v + "'");
          continue;
        }
      }
      if (auto v = get("gender"); v && !v->empty()) {
        auto x = parse_enum(*v, all_genders);
        if (!x) {
          reject("bad gender");
          continue;
        }
        r.cohort.gender = *x;
      }
      if (auto v = get("age_band"); v && !v->empty()) {
        auto x = parse_enum(*v, all_age_bands);
        if (!x) {
          reject("bad age_band");
          continue;
        }
        r.cohort.age_band = *x;
      }
      if (auto v = get("education"); v && !v->empty()) {
        auto x = parse_enum(*v, all_educations);
        if (!x) {
          reject("bad education");
          continue;
        }
        r.cohort.education = *x;
      }
      const auto spec = scenario_spec(r.scenario_id, r.group);
      r.excluded_by_default = spec.excluded_by_default();
      double& balance = coins.try_emplace(r.session_id, kStartingCoins).first->second;
      if (r.round_index == 1) balance = kStartingCoins;
      if (r.outcome) balance *= *r.outcome == Outcome::correct ? kWinFactor : kLossFactor;
      if (auto v = get("coins_after"); v && !v->empty())
        r.coins_after = std::stod(*v);
      else
        r.coins_after = balance;
      if (!why.empty()) {
        reject(why);
        continue;
      }
      if (auto problem = check_record(r, spec.time_limit); !problem.empty()) {
        reject(problem);
        continue;
      }
    } catch (const Error& e) {
      reject(e.what());
      continue;
    } catch (const std::exception&) {
      reject("unparsable number");
      continue;
    }
    res.records.push_back(std::move(r));
  }
  return res;
}

inline IngestResult ingest_csv_file(const std::filesystem::path& path,
                                    const CsvMapping& mapping = CsvMapping::identity()) {
  std::ifstream in(path);
  if (!in || !std::filesystem::is_regular_file(path)) fail(ErrorCode::unreadable_file, path.string());
  return ingest_csv(in, mapping);
}

// Writes records in the canonical column layout read by ingest_csv.
inline void write_records_csv(std::ostream& out, std::span<const RoundRecord> records) {
  const auto& f = csv_fields();
  for (std::size_t i = 0; i < f.size(); ++i) out << (i ? "," : "") << f[i];
  out << '\n';
  for (const auto& r : records) {
    std::string panels;
    for (auto k : r.panels_viewed) {
      if (!panels.empty()) panels += ';';
      panels += to_string(k);
    }
    auto num = [](double v) {
      char buf[32];
      auto res = std::to_chars(buf, buf + sizeof buf, v);
      return std::string(buf, res.ptr);
    };
    out << r.participant_id << ',' << r.session_id << ',' << r.round_index << ',' << to_string(r.guess) << ','
        << to_string(r.market_prev) << ',' << to_string(r.market_next) << ',' << r.scenario_id << ','
        << to_string(r.group) << ',' << (r.outcome ? to_string(*r.outcome) : "") << ','
        << num(r.decision_time) << ',' << panels << ',' << (r.expert_consulted ? "true" : "false") << ','
        << (r.expert_advice ? to_string(*r.expert_advice) : "") << ',' << num(r.coins_after) << ','
        << (r.trend ? to_string(*r.trend) : "") << ',' << to_string(r.cohort.gender) << ','
        << to_string(r.cohort.age_band) << ',' << to_string(r.cohort.education) << '\n';
  }
}

// Picks the reader from the extension: .jsonl / .json event logs, anything
// else is CSV.
inline IngestResult ingest(const std::filesystem::path& path, const CsvMapping& mapping = CsvMapping::identity()) {
  const auto ext = path.extension().string();
  if (ext == ".jsonl" || ext == ".json") return ingest_events(path);
  return ingest_csv_file(path, mapping);
}

}  // namespace mrbanks
