// mrbanks: command-line front end.
//
//   mrbanks serve            --config configs/service.json
//   mrbanks simulate         --config configs/sim.json --seed 7 --out sim.jsonl
//   mrbanks analyze          events.jsonl [--live] [--json]
//   mrbanks report           events.jsonl --out bundle/
//   mrbanks validate-dataset --manifest data/manifest.json
//
// Exit codes: 0 ok, 1 usage, 2 data error, 3 runtime failure.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mrbanks/dataset.hpp"
#include "mrbanks/ingest.hpp"
#include "mrbanks/report.hpp"
#include "mrbanks/service.hpp"
#include "mrbanks/sim.hpp"

namespace {

using namespace mrbanks;
using nlohmann::json;

constexpr int kOk = 0, kUsage = 1, kDataError = 2, kRuntime = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) fail(ErrorCode::unreadable_file, "config " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::invalid_spec, "config " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int run_serve(const Common& c, std::optional<int> port, const std::string& manifest, const std::string& log) {
  auto cfg = service_config_from_json(read_config(c.config));
  if (c.seed) cfg.seed = *c.seed;
  if (port) cfg.port = *port;
  if (!manifest.empty()) cfg.manifest = manifest;
  if (!log.empty()) cfg.log_path = log;
  const auto dataset = load_dataset(cfg.manifest);
  GameService service(dataset, cfg);
  HttpServer server(service);
  const int bound = server.bind(cfg.host, cfg.port);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "serving " << dataset.series.size() << " series on http://" << cfg.host << ":" << bound
            << "/v1 (log: " << (cfg.log_path.empty() ? "memory" : cfg.log_path.string()) << ")\n";
  server.run();
  g_server = nullptr;
  return kOk;
}

int run_simulate(const Common& c, const std::string& out, const std::string& manifest) {
  const auto spec_json = read_config(c.config);
  if (!spec_json.contains("agents")) fail(ErrorCode::invalid_spec, "simulation config needs an \"agents\" list");
  const std::uint64_t seed = c.seed ? *c.seed : spec_json.value("seed", std::uint64_t{1});
  Dataset dataset;
  const auto market = spec_json.value("market", json::object());
  if (market.contains("series") && market.at("series").get<bool>()) {
    dataset = load_dataset(manifest.empty() ? spec_json.value("manifest", std::string("data/manifest.json")) : manifest);
  }
  const auto spec = sim::population_from_json(spec_json, seed, dataset.series);
  const auto records = sim::run_population(spec);

  std::ofstream file;
  std::ostream* os = &std::cout;
  if (!out.empty() && out != "-") {
    file.open(out, std::ios::binary);
    if (!file) fail(ErrorCode::unreadable_file, "cannot write " + out);
    os = &file;
  }
  if (out.size() > 4 && out.substr(out.size() - 4) == ".csv")
    write_records_csv(*os, records);
  else
    write_events(*os, events_from_records(records));
  std::cerr << "simulated " << spec.agents.size() << " agents, " << records.size() << " rounds (seed " << seed
            << ")\n";
  return kOk;
}

struct AnalysisArgs {
  std::string input;
  std::string mapping;
  bool live = false;
  bool include_timeouts = false;
  bool include_scenario4 = false;
  std::vector<int> scenarios;
  std::string sd_policy;
  std::optional<int> resamples;
};

ReportBundle analysis_bundle(const Common& c, const AnalysisArgs& a) {
  const auto cfg = read_config(c.config);
  ReportOptions opt;
  opt.seed = c.seed ? *c.seed : cfg.value("seed", std::uint64_t{0});
  opt.bootstrap_resamples = a.resamples ? *a.resamples : cfg.value("bootstrap_resamples", kDefaultBootstrapResamples);
  if (opt.bootstrap_resamples < 2) fail(ErrorCode::invalid_spec, "need at least 2 bootstrap resamples");
  const auto policy = a.sd_policy.empty() ? cfg.value("sd_policy", std::string("quadrature")) : a.sd_policy;
  bool known = false;
  for (auto p : {stats::SdPolicy::quadrature, stats::SdPolicy::first_sd, stats::SdPolicy::pooled_two_proportion})
    if (to_string(p) == policy) {
      opt.sd_policy = p;
      known = true;
    }
  if (!known) fail(ErrorCode::invalid_spec, "unknown sd policy " + policy);
  const auto filters = cfg.value("filters", json::object());
  opt.filter.include_timeouts = a.include_timeouts || filters.value("include_timeouts", false);
  opt.filter.include_excluded = a.include_scenario4 || filters.value("include_scenario4", false);
  for (int s : a.scenarios) opt.filter.scenarios.insert(s);
  if (filters.contains("scenarios"))
    for (int s : filters.at("scenarios").get<std::vector<int>>()) opt.filter.scenarios.insert(s);
  opt.live = a.live;

  const auto mapping_path = a.mapping.empty() ? cfg.value("mapping", std::string()) : a.mapping;
  const auto mapping = mapping_path.empty() ? CsvMapping::identity() : load_csv_mapping(mapping_path);
  auto in = ingest(a.input, mapping);
  for (const auto& r : in.rejects) std::cerr << "rejected line " << r.line << ": " << r.reason << "\n";
  if (!in.rejects.empty()) std::cerr << in.rejects.size() << " row(s) rejected\n";
  if (!in.open_sessions.empty() && !a.live)
    fail(ErrorCode::invalid_argument, std::to_string(in.open_sessions.size()) +
                                          " session(s) have not finished (e.g. " + in.open_sessions.front() +
                                          "); pass --live to analyze a log that is still being written");
  return build_report(in.records, opt);
}

std::string fmt(double v, int digits = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void print_summary(const json& r) {
  const auto& s = r.at("sample");
  std::cout << "decisions: " << s.at("valid_decisions") << " valid, " << s.at("context_decisions")
            << " with previous-round context\n";
  std::cout << "follow equivalence violations: " << r.at("follow_equivalence_violations") << "\n";
  auto tree = [&](const char* title, const json& nodes) {
    std::cout << title << "\n";
    for (const auto& n : nodes) {
      std::cout << "  " << n.at("path").get<std::string>();
      for (auto& [k, v] : n.items())
        if (k != "path" && !v.is_null())
          std::cout << "  " << k << " " << fmt(v.at("p")) << " +- " << fmt(v.at("sd")) << " (n=" << v.at("n") << ")";
      std::cout << "\n";
    }
  };
  tree("market imitation p(guess | previous market):", r.at("mi_tree"));
  tree("win-stay lose-shift p(repeat/change | previous outcome):", r.at("wsls_tree"));
  const auto& two = r.at("two_step");
  std::cout << "two-step: mean distance to MI " << fmt(two.at("mean_distance_mi"), 4) << ", to WSLS "
            << fmt(two.at("mean_distance_wsls"), 4) << " -> " << two.at("verdict").get<std::string>() << "\n";
  const auto& info = r.at("information");
  std::cout << "I(guess; previous market) = " << fmt(info.at("guess_vs_market_prev").at("bits"), 4) << " bits\n"
            << "I(guess; previous outcome) = " << fmt(info.at("guess_vs_prev_outcome").at("bits"), 4) << " bits\n"
            << "I(guess; previous market | previous outcome) = "
            << fmt(info.at("guess_vs_market_given_outcome").at("bits"), 4) << " bits\n"
            << "I(guess; previous outcome | previous market) = "
            << fmt(info.at("guess_vs_outcome_given_market").at("bits"), 4) << " bits\n";
  for (const auto& c : r.at("follow"))
    if (c.at("axis") == "expert_flag")
      std::cout << "follow-strategy probability: " << fmt(c.at("reference").at("p")) << " +- "
                << fmt(c.at("reference").at("sd")) << "\n";
  const auto& e = r.at("expert");
  if (e.contains("trust"))
    std::cout << "expert trusted: " << fmt(e.at("trust").at("p")) << " +- " << fmt(e.at("trust").at("sd")) << " ("
              << fmt(e.at("trust_vs_accuracy_sd_units"), 2) << " sd units vs 0.6)\n";
  const auto& tp = r.at("total_probability");
  std::cout << "total probability check: |error| " << tp.at("abs_error").get<double>() << ", max row-sum error "
            << tp.at("max_row_sum_error").get<double>() << "\n";
  std::cout << "input hash " << r.at("metadata").at("input_hash").get<std::string>() << "\n";
}

int run_validate(const Common& c, const std::string& manifest_flag) {
  const auto cfg = read_config(c.config);
  const std::string manifest =
      !manifest_flag.empty() ? manifest_flag : cfg.value("manifest", std::string("data/manifest.json"));
  const auto ds = load_dataset(manifest);
  const auto check = validate_dataset(ds, cfg.value("flat_threshold", kDefaultFlatThreshold),
                                      cfg.value("expected_per_trend", std::size_t{10}));
  std::cout << ds.series.size() << " series, " << ds.world.size() << " world indices; bullish "
            << check.trend_counts[0] << ", bearish " << check.trend_counts[1] << ", flat " << check.trend_counts[2]
            << "\n";
  for (const auto& p : check.problems) std::cout << "problem: " << p << "\n";
  std::cout << (check.ok() ? "dataset ok" : "dataset invalid") << "\n";
  return check.ok() ? kOk : kDataError;
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::bind_failure: return kRuntime;
    default: return kDataError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Market-direction guessing experiment: server, simulator and analysis"};
  app.require_subcommand(1);

  auto add_common = [](CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "JSON config file");
    sub->add_option("--seed", c.seed, "Seed (overrides the config)");
  };

  Common serve_c, sim_c, analyze_c, report_c, validate_c;
  std::optional<int> port;
  std::string serve_manifest, serve_log;
  auto* serve = app.add_subcommand("serve", "Run the HTTP game service");
  add_common(serve, serve_c);
  serve->add_option("--port", port, "Port (0 picks a free one)");
  serve->add_option("--manifest", serve_manifest, "Dataset manifest");
  serve->add_option("--log", serve_log, "Event log path");

  std::string sim_out, sim_manifest;
  auto* simulate = app.add_subcommand("simulate", "Run an agent population and write its records");
  add_common(simulate, sim_c);
  simulate->add_option("--out", sim_out, "Output file (.jsonl events or .csv records; default stdout)");
  simulate->add_option("--manifest", sim_manifest, "Dataset manifest for series-driven markets");

  AnalysisArgs analyze_a, report_a;
  bool as_json = false;
  std::string report_out = "report";
  auto add_analysis = [](CLI::App* sub, AnalysisArgs& a) {
    sub->add_option("input", a.input, "Event log (.jsonl) or records CSV")->required();
    sub->add_option("--mapping", a.mapping, "CSV column mapping (JSON)");
    sub->add_flag("--live", a.live, "Allow a log with sessions still in progress");
    sub->add_flag("--include-timeouts", a.include_timeouts, "Keep timeout rounds where a statistic allows it");
    sub->add_flag("--include-scenario4", a.include_scenario4, "Keep scenario 4 rounds");
    sub->add_option("--scenario", a.scenarios, "Restrict to these scenarios");
    sub->add_option("--sd-policy", a.sd_policy, "quadrature | first_sd | pooled_two_proportion");
    sub->add_option("--resamples", a.resamples, "Bootstrap resamples");
  };
  auto* analyze = app.add_subcommand("analyze", "Print the main statistics of a log");
  add_common(analyze, analyze_c);
  add_analysis(analyze, analyze_a);
  analyze->add_flag("--json", as_json, "Print the full JSON report");

  auto* report = app.add_subcommand("report", "Write the JSON report and per-figure CSV files");
  add_common(report, report_c);
  add_analysis(report, report_a);
  report->add_option("--out", report_out, "Output directory");

  std::string validate_manifest;
  auto* validate = app.add_subcommand("validate-dataset", "Check the shipped price series");
  add_common(validate, validate_c);
  validate->add_option("--manifest", validate_manifest, "Dataset manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*serve) return run_serve(serve_c, port, serve_manifest, serve_log);
    if (*simulate) return run_simulate(sim_c, sim_out, sim_manifest);
    if (*analyze) {
      const auto bundle = analysis_bundle(analyze_c, analyze_a);
      if (as_json)
        std::cout << bundle.files.at("report.json");
      else
        print_summary(bundle.report);
      return kOk;
    }
    if (*report) {
      const auto bundle = analysis_bundle(report_c, report_a);
      bundle.write(report_out);
      std::cerr << "wrote " << bundle.files.size() << " files to " << report_out << "\n";
      return kOk;
    }
    if (*validate) return run_validate(validate_c, validate_manifest);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
