#pragma once

// The analysis bundle: one JSON report plus a plot-ready CSV per figure.
// Output depends only on the records, the options and the bootstrap seed,
// so the same input always yields byte-identical files.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrbanks/analytics.hpp"
#include "mrbanks/ingest.hpp"

namespace mrbanks {

struct ReportOptions {
  AnalysisFilter filter;
  stats::SdPolicy sd_policy = stats::SdPolicy::quadrature;
  int bootstrap_resamples = kDefaultBootstrapResamples;
  std::uint64_t seed = 0;
  bool live = false;  // input was a log still being written
};

struct ReportBundle {
  nlohmann::json report;
  std::map<std::string, std::string> files;  // file name -> content, report.json included

  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    for (const auto& [name, content] : files) {
      std::ofstream out(dir / name, std::ios::binary);
      if (!out) fail(ErrorCode::unreadable_file, "cannot write " + (dir / name).string());
      out << content;
    }
  }
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string num(double v) {
  if (!std::isfinite(v)) return v != v ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline nlohmann::json prob_json(const ProbEstimate& p) { return {{"p", p.p}, {"sd", p.sd}, {"n", p.n}}; }

inline nlohmann::json opt_prob_json(const std::optional<ProbEstimate>& p) {
  return p ? prob_json(*p) : nlohmann::json(nullptr);
}

inline nlohmann::json quartiles_json(const stats::Quartiles& q) {
  return {{"q1", q.q1}, {"q2", q.q2}, {"q3", q.q3}, {"n", q.n}};
}

inline nlohmann::json tree_json(const ConditionalTree& t) {
  auto arr = nlohmann::json::array();
  for (const auto& n : t.nodes)
    arr.push_back({{"path", n.path},
                   {n.first_label, n.first.n > 0 ? prob_json(n.first) : nlohmann::json(nullptr)},
                   {n.second_label, n.first.n > 0 ? prob_json(n.second) : nlohmann::json(nullptr)}});
  return arr;
}

inline std::string tree_csv(const ConditionalTree& t) {
  std::string out = "path,branch,n,p,sd\n";
  for (const auto& n : t.nodes)
    for (int k = 0; k < 2; ++k) {
      const auto& label = k == 0 ? n.first_label : n.second_label;
      const auto& e = k == 0 ? n.first : n.second;
      out += n.path + "," + label + "," + std::to_string(n.first.n) + "," +
             (n.first.n > 0 ? num(e.p) + "," + num(e.sd) : std::string(",")) + "\n";
    }
  return out;
}

inline nlohmann::json curve_json(const StratifiedCurve& c) {
  auto bins = nlohmann::json::array();
  for (const auto& b : c.bins) bins.push_back({{"bin", b.label}, {"n", b.n}, {"estimate", opt_prob_json(b.estimate)}});
  return {{"axis", to_string(c.axis)}, {"reference", prob_json(c.reference)}, {"bins", bins}};
}

inline nlohmann::json info_json(const InformationValue& v) { return {{"bits", v.bits}, {"sd", v.sd}, {"n", v.n}}; }

// Runs `f`, turning an EmptySample into a null section with a reason.
template <class F>
nlohmann::json optional_section(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::empty_sample) throw;
    return {{"unavailable", e.what()}};
  }
}

}  // namespace detail

// Hash of the input records in canonical CSV form.
inline std::string input_hash(std::span<const RoundRecord> records) {
  std::ostringstream s;
  write_records_csv(s, records);
  return detail::hex64(detail::fnv1a(s.str()));
}

inline ReportBundle build_report(std::span<const RoundRecord> records, const ReportOptions& opt = {}) {
  using nlohmann::json;
  const auto decisions = valid_decisions(records, opt.filter);
  if (decisions.empty()) fail(ErrorCode::empty_sample, "no decisions left after filters");
  const auto ctx = context_sample(records, opt.filter);
  const auto& sample = ctx.decisions;
  if (sample.empty()) fail(ErrorCode::empty_sample, "no decisions with previous-round context");

  json meta;
  meta["input_hash"] = input_hash(records);
  meta["seed"] = opt.seed;
  meta["bootstrap_resamples"] = opt.bootstrap_resamples;
  meta["policies"] = {{"sd_units", to_string(opt.sd_policy)},
                      {"quantiles", "type7"},
                      {"mutual_information", "plugin"},
                      {"bootstrap", "multinomial"},
                      {"follow_label", "aggregated(mi or wsls)"}};
  auto scen = json::array();
  for (int s : opt.filter.scenarios) scen.push_back(s);
  meta["filters"] = {{"timeouts_excluded", !opt.filter.include_timeouts},
                     {"scenario4_excluded", !opt.filter.include_excluded},
                     {"scenarios", scen}};
  meta["live"] = opt.live;

  json rep;
  rep["metadata"] = meta;
  rep["sample"] = {{"records", records.size()},
                   {"valid_decisions", decisions.size()},
                   {"context_decisions", sample.size()},
                   {"first_rounds", ctx.first_rounds},
                   {"broken_chains", ctx.broken_chains},
                   {"market_mismatches", ctx.market_mismatches}};
  rep["follow_equivalence_violations"] = follow_equivalence_violations(sample);

  const auto tp = total_probability_check(sample);
  rep["total_probability"] = {{"direct", tp.direct},
                              {"reconstructed", tp.reconstructed},
                              {"abs_error", tp.abs_error},
                              {"max_row_sum_error", tp.max_row_sum_error}};

  const auto table = bias_table(decisions, sample, opt.sd_policy);
  std::string table_csv = "label,subject_count,subject_p,subject_sd,market_count,market_p,market_sd,difference,sd_units\n";
  auto rows = json::array();
  for (const auto& r : table.rows) {
    rows.push_back({{"label", r.label},
                    {"subject", detail::prob_json(r.subject)},
                    {"market", detail::prob_json(r.market)},
                    {"difference", r.difference},
                    {"sd_units", r.sd_units}});
    table_csv += r.label + "," + std::to_string(r.subject_count) + "," + detail::num(r.subject.p) + "," +
                 detail::num(r.subject.sd) + "," + std::to_string(r.market_count) + "," + detail::num(r.market.p) +
                 "," + detail::num(r.market.sd) + "," + detail::num(r.difference) + "," + detail::num(r.sd_units) +
                 "\n";
  }
  rep["table1"] = rows;

  const auto mi = conditional_tree_mi(sample);
  const auto wsls = conditional_tree_wsls(sample);
  const auto two = two_step_tree(sample);
  rep["mi_tree"] = detail::tree_json(mi);
  rep["wsls_tree"] = detail::tree_json(wsls);

  std::string two_csv = "prev_guess,prev_outcome,guess,n,two_step,mi,wsls,distance_mi,distance_wsls\n";
  // "prev_guess=up,prev_outcome=correct,guess=down" -> "up,correct,down"
  auto path_cells = [](const std::string& path) {
    std::string out;
    std::size_t pos = 0;
    while (pos < path.size()) {
      const auto eq = path.find('=', pos);
      const auto comma = path.find(',', eq);
      if (!out.empty()) out += ',';
      out += path.substr(eq + 1, comma == std::string::npos ? std::string::npos : comma - eq - 1);
      pos = comma == std::string::npos ? path.size() : comma + 1;
    }
    return out;
  };
  auto leaves = json::array();
  for (const auto& l : two.leaves) {
    const auto node_path = l.path.substr(0, l.path.rfind(",guess="));
    const auto n = two.tree.at(node_path).first.n;
    if (!l.defined) {
      leaves.push_back({{"path", l.path}, {"n", n}, {"defined", false}});
      two_csv += path_cells(l.path) + "," + std::to_string(n) + ",,,,,\n";
      continue;
    }
    leaves.push_back({{"path", l.path},
                      {"n", n},
                      {"defined", true},
                      {"two_step", l.two_step},
                      {"mi", l.mi},
                      {"wsls", l.wsls},
                      {"distance_mi", l.distance_mi},
                      {"distance_wsls", l.distance_wsls}});
    two_csv += path_cells(l.path) + "," + std::to_string(n) + "," + detail::num(l.two_step) + "," + detail::num(l.mi) + "," +
               detail::num(l.wsls) + "," + detail::num(l.distance_mi) + "," + detail::num(l.distance_wsls) + "\n";
  }
  rep["two_step"] = {{"leaves", leaves},
                     {"mean_distance_mi", two.mean_distance_mi},
                     {"mean_distance_wsls", two.mean_distance_wsls},
                     {"leaves_closer_to_mi", two.leaves_closer_to_mi},
                     {"leaves_closer_to_wsls", two.leaves_closer_to_wsls},
                     {"verdict", to_string(two.verdict)}};

  const auto info = information_summary(sample, opt.bootstrap_resamples, opt.seed);
  rep["information"] = {
      {"guess_vs_market_prev", detail::info_json(info.guess_vs_market_prev)},
      {"guess_vs_prev_outcome", detail::info_json(info.guess_vs_prev_outcome)},
      {"market_self", detail::info_json(info.market_self)},
      {"guess_self", detail::info_json(info.guess_self)},
      // Both conditionings are reported; neither is singled out.
      {"guess_vs_market_given_outcome", detail::info_json(info.guess_vs_market_given_outcome)},
      {"guess_vs_outcome_given_market", detail::info_json(info.guess_vs_outcome_given_market)},
      {"bias_bound_guess_vs_market_prev",
       independence_bias_bound(joint_table(sample, Variable::market_prev, Variable::guess))}};

  std::string follow_csv = "axis,bin,n,p,sd\n";
  auto curves = json::array();
  for (auto axis : {CurveAxis::time_bins_5s, CurveAxis::panel_count, CurveAxis::expert_flag}) {
    const auto c = follow_strategy_curves(sample, axis);
    curves.push_back(detail::curve_json(c));
    for (const auto& b : c.bins)
      follow_csv += std::string(to_string(axis)) + "," + b.label + "," + std::to_string(b.n) + "," +
                    (b.estimate ? detail::num(b.estimate->p) + "," + detail::num(b.estimate->sd) : std::string(",")) +
                    "\n";
    if (axis == CurveAxis::expert_flag)
      follow_csv += std::string(to_string(axis)) + ",all," + std::to_string(c.reference.n) + "," +
                    detail::num(c.reference.p) + "," + detail::num(c.reference.sd) + "\n";
  }
  rep["follow"] = curves;

  const auto time = time_stats(decisions);
  std::string time_csv = "kind,key,n,q1,q2,q3\n";
  auto quart_row = [&](const std::string& kind, const std::string& key, const stats::Quartiles& q) {
    time_csv += kind + "," + key + "," + std::to_string(q.n) + "," + detail::num(q.q1) + "," + detail::num(q.q2) +
                "," + detail::num(q.q3) + "\n";
  };
  quart_row("global", "all", time.global);
  json per_round = json::array(), per_panels = json::object();
  for (const auto& r : time.per_round) {
    quart_row("round", std::to_string(r.round), r.quartiles);
    per_round.push_back({{"round", r.round}, {"quartiles", detail::quartiles_json(r.quartiles)}});
  }
  for (const auto& [k, q] : time.by_panel_count) {
    quart_row("panels", std::to_string(k), q);
    per_panels[std::to_string(k)] = detail::quartiles_json(q);
  }
  json fit = nullptr;
  if (time.time_vs_panels)
    fit = {{"slope", time.time_vs_panels->slope},
           {"slope_stderr", time.time_vs_panels->slope_stderr},
           {"intercept", time.time_vs_panels->intercept},
           {"intercept_stderr", time.time_vs_panels->intercept_stderr},
           {"n", time.time_vs_panels->n}};
  rep["time"] = {{"global", detail::quartiles_json(time.global)},
                 {"per_round", per_round},
                 {"by_panel_count", per_panels},
                 {"time_vs_panels", fit},
                 {"mean_panels", time.mean_panels},
                 {"mean_panels_se", time.mean_panels_se}};

  const auto perf = performance_report(decisions);
  json by_trend = json::object(), by_panels = json::object(), by_sg = json::object();
  for (const auto& [k, v] : perf.by_trend) by_trend[k] = detail::prob_json(v);
  for (const auto& [k, v] : perf.by_panel_count) by_panels[std::to_string(k)] = detail::prob_json(v);
  for (const auto& [k, v] : perf.by_scenario_group) by_sg[k] = detail::prob_json(v);
  rep["performance"] = {{"overall", detail::prob_json(perf.overall)},
                        {"by_trend", by_trend},
                        {"by_panel_count", by_panels},
                        {"by_scenario_group", by_sg}};

  rep["expert"] = detail::optional_section([&]() -> json {
    const auto e = expert_effect(decisions, sample, opt.sd_policy);
    return {{"trust", detail::prob_json(e.trust)},
            {"trust_vs_accuracy_sd_units", e.trust_vs_accuracy_sd_units},
            {"follow_overall", detail::prob_json(e.follow_overall)},
            {"follow_consulted", e.follow_consulted.n > 0 ? detail::prob_json(e.follow_consulted) : json(nullptr)},
            {"follow_not_consulted",
             e.follow_not_consulted.n > 0 ? detail::prob_json(e.follow_not_consulted) : json(nullptr)},
            {"follow_delta", e.follow_delta},
            {"follow_delta_sd_units", e.follow_delta_sd_units},
            {"up_given_market_up_consulted", detail::opt_prob_json(e.mi_up_given_up_consulted)},
            {"repeat_given_correct_consulted", detail::opt_prob_json(e.repeat_given_correct_consulted)}};
  });

  json cohorts = json::object();
  for (auto dim : {CohortDimension::gender, CohortDimension::age_band, CohortDimension::education}) {
    const auto c = cohort_report(decisions, sample, dim);
    auto groups = json::array();
    for (const auto& g : c.groups)
      groups.push_back({{"group", g.group},
                        {"empty", g.empty},
                        {"decisions", g.decisions},
                        {"follow", detail::opt_prob_json(g.follow)},
                        {"success", detail::opt_prob_json(g.success)},
                        {"time", g.time ? detail::quartiles_json(*g.time) : json(nullptr)},
                        {"mean_panels", g.mean_panels}});
    cohorts[std::string(to_string(dim))] = groups;
  }
  rep["cohorts"] = cohorts;

  ReportBundle b;
  b.report = rep;
  b.files["report.json"] = rep.dump(2) + "\n";
  b.files["table1.csv"] = table_csv;
  b.files["fig2_time.csv"] = time_csv;
  b.files["fig3_mi_tree.csv"] = detail::tree_csv(mi);
  b.files["fig4_wsls_tree.csv"] = detail::tree_csv(wsls);
  b.files["fig5_two_step.csv"] = two_csv;
  b.files["fig6_follow.csv"] = follow_csv;
  return b;
}

}  // namespace mrbanks
