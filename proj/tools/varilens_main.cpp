#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "varilens/causal.hpp"
#include "varilens/error.hpp"
#include "varilens/heuristics.hpp"
#include "varilens/reliability.hpp"
#include "varilens/report.hpp"
#include "varilens/simgen.hpp"
#include "varilens/static_analysis.hpp"
#include "varilens/timeutil.hpp"
#include "varilens/trajlog.hpp"
#include "varilens/version.hpp"

namespace {

using namespace varilens;

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw transport_error("cannot open output file: " + path);
  out << content;
  if (!out) throw transport_error("failed writing output file: " + path);
}

trajlog::EventLog load_log_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error("cannot open log file: " + path);
  return trajlog::parse_csv(in);
}

struct IngestArgs {
  std::vector<std::string> files;
  std::string format = "jsonl";
  std::string adapter_config;
  std::string output;
};

void run_ingest(const IngestArgs& args) {
  trajlog::EventLog log;
  if (args.format == "jsonl") {
    std::vector<trajlog::TrajectoryEvent> events;
    for (const auto& path : args.files) {
      std::ifstream in(path, std::ios::binary);
      if (!in) throw parse_error("cannot open file: " + path);
      auto part = trajlog::parse_jsonl(in);
      events.insert(events.end(), part.begin(), part.end());
    }
    log = trajlog::build_event_log(events);
  } else if (args.format == "text") {
    if (args.adapter_config.empty()) {
      throw usage_error("--format text requires --adapter-config");
    }
    const auto cfg =
        trajlog::TextAdapterConfig::from_json_file(args.adapter_config);
    std::vector<trajlog::TrajectoryEvent> events;
    bool synthetic = false;
    for (const auto& path : args.files) {
      const std::string run_id = std::filesystem::path(path).stem().string();
      auto part =
          trajlog::parse_agent_text_log(read_text_file(path), cfg, run_id);
      synthetic = synthetic || part.synthetic_time;
      events.insert(events.end(), part.events.begin(), part.events.end());
    }
    log = trajlog::build_event_log(events, trajlog::default_filter(),
                                   synthetic);
  } else if (args.format == "csv") {
    bool first = true;
    for (const auto& path : args.files) {
      trajlog::EventLog part = load_log_csv(path);
      if (first) {
        log = std::move(part);
        first = false;
        continue;
      }
      log.synthetic_time = log.synthetic_time || part.synthetic_time;
      for (auto& t : part.traces) log.traces.push_back(std::move(t));
      log.activity_alphabet.insert(part.activity_alphabet.begin(),
                                   part.activity_alphabet.end());
    }
  } else {
    throw usage_error("unknown ingest format: " + args.format);
  }
  write_text_file(args.output, trajlog::export_csv(log));
  std::cout << "wrote " << args.output << ": " << log.traces.size()
            << " traces, " << log.activity_alphabet.size() << " activities, "
            << log.total_events() << " events\n";
}

void print_gateway_table(const causal::CausalModel& model) {
  std::size_t id_w = 2;
  std::size_t src_w = 6;
  for (const auto& gw : model.gateways) {
    id_w = std::max(id_w, gw.id.size());
    src_w = std::max(src_w, gw.source.size());
  }
  std::printf("%-*s  %-4s  %-*s  %5s  %s\n", static_cast<int>(id_w), "ID",
              "TYPE", static_cast<int>(src_w), "SOURCE", "RUNS", "BRANCHES");
  for (const auto& gw : model.gateways) {
    std::string branches;
    for (std::size_t i = 0; i < gw.branches.size(); ++i) {
      if (i > 0) branches += " | ";
      char buf[64];
      std::snprintf(buf, sizeof(buf), " (%zu, %.4f)", gw.branches[i].count,
                    gw.branches[i].proportion);
      branches += gw.branches[i].target + buf;
    }
    std::printf("%-*s  %-4s  %-*s  %5zu  %s\n", static_cast<int>(id_w),
                gw.id.c_str(), causal::to_string(gw.gtype),
                static_cast<int>(src_w), gw.source.c_str(),
                gw.traversing_runs, branches.c_str());
  }
  if (model.gateways.empty()) std::printf("(no gateways)\n");
}

const causal::Gateway& find_gateway(const causal::CausalModel& model,
                                    const std::string& id) {
  for (const auto& gw : model.gateways) {
    if (gw.id == id) return gw;
  }
  throw analysis_error("no gateway with id " + id + " in model");
}

void print_reliability(const causal::Gateway& gw,
                       const reliability::ReliabilityReport& rep) {
  std::printf("gateway %s (%s at %s), traversing runs: %zu\n",
              rep.gateway_id.c_str(), causal::to_string(gw.gtype),
              gw.source.c_str(), rep.traversing_runs);
  for (const auto& br : rep.per_branch) {
    std::printf("  branch %s: p=%.4f", br.target.c_str(), br.observed_p);
    if (br.required_n) {
      std::printf(" required_n=%zu deficit=%zu margin=%.4f\n", *br.required_n,
                  br.deficit, *br.achieved_margin);
    } else {
      std::printf(" required_n=n/a deficit=0 margin=n/a\n");
    }
  }
  std::printf("  rare branch: required_n=%zu deficit=%zu\n",
              rep.rare_branch_required_n, rep.rare_branch_deficit);
  std::printf("  verdict: %s\n", reliability::to_string(rep.verdict));
}

void print_verdict(const static_analysis::AnalysisResult& result) {
  std::printf("gateway: %s\n", result.rule.gateway_id.c_str());
  std::printf("rule: %s\n", result.rule.text.c_str());
  std::printf("mode: %s\n",
              static_analysis::to_string(result.verdict.match_mode));
  std::printf("excerpt: %s\n", result.verdict.excerpt
                                   ? result.verdict.excerpt->c_str()
                                   : "(none)");
  std::printf("gaps:\n");
  if (result.verdict.gaps.empty()) std::printf("  (none)\n");
  for (const auto& g : result.verdict.gaps) {
    std::printf("  - %s\n", g.c_str());
  }
  std::printf("classification: %s\n",
              static_analysis::to_string(result.verdict.classification));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trajectory variability analyzer"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  // ingest
  IngestArgs ingest_args;
  auto* ingest = app.add_subcommand(
      "ingest", "normalize trajectory files into an event-log CSV");
  ingest->add_option("files", ingest_args.files, "input files")
      ->required()
      ->expected(-1);
  ingest->add_option("--format", ingest_args.format, "jsonl|text|csv")
      ->check(CLI::IsMember({"jsonl", "text", "csv"}));
  ingest->add_option("--adapter-config", ingest_args.adapter_config,
                     "JSON regex config for the text adapter");
  ingest->add_option("-o,--output", ingest_args.output, "output CSV path")
      ->required();

  // mine heuristics / mine causal
  auto* mine = app.add_subcommand("mine", "discover process models");
  mine->require_subcommand(1);

  std::string mh_log;
  double mh_threshold = 0.5;
  std::string mh_out;
  auto* mine_h = mine->add_subcommand(
      "heuristics", "dependency-graph discovery to Graphviz DOT");
  mine_h->add_option("log", mh_log, "event-log CSV")->required();
  mine_h->add_option("--dependency-threshold", mh_threshold,
                     "minimum dependency measure for an edge");
  mine_h->add_option("-o,--output", mh_out, "output DOT path")->required();

  std::string mc_log;
  std::string mc_config;
  std::string mc_out;
  std::string mc_dot;
  auto* mine_c = mine->add_subcommand(
      "causal", "timestamp-based causal model discovery to JSON");
  mine_c->add_option("log", mc_log, "event-log CSV")->required();
  mine_c->add_option("--config", mc_config, "causal config JSON");
  mine_c->add_option("-o,--output", mc_out, "output model JSON path")
      ->required();
  mine_c->add_option("--dot", mc_dot, "also write a DOT rendering here");

  // gateways
  std::string gw_model;
  auto* gateways =
      app.add_subcommand("gateways", "list the gateways of a causal model");
  gateways->add_option("model", gw_model, "causal model JSON")->required();

  // rule
  std::string rule_model;
  std::string rule_gateway;
  auto* rule = app.add_subcommand(
      "rule", "print the derived rule statement for a gateway");
  rule->add_option("model", rule_model, "causal model JSON")->required();
  rule->add_option("--gateway", rule_gateway, "gateway id")->required();

  // analyze
  std::string an_model;
  std::string an_gateway;
  std::string an_spec;
  std::string an_template;
  std::string an_llm;
  std::string an_transcript;
  auto* analyze = app.add_subcommand(
      "analyze", "match a gateway rule against the agent specification");
  analyze->add_option("model", an_model, "causal model JSON")->required();
  analyze->add_option("--gateway", an_gateway, "gateway id")->required();
  analyze->add_option("--spec", an_spec, "agent specification text file")
      ->required();
  analyze->add_option("--template", an_template, "prompt template file");
  analyze->add_option("--llm-config", an_llm, "endpoint config JSON");
  analyze->add_option("--transcript", an_transcript,
                      "write the full exchange transcript here");

  // reliability
  std::string rel_model;
  std::string rel_gateway;
  reliability::ReliabilityParams rel_params;
  auto* rel = app.add_subcommand(
      "reliability", "assess run-count sufficiency for gateways");
  rel->add_option("model", rel_model, "causal model JSON")->required();
  rel->add_option("--gateway", rel_gateway, "restrict to one gateway id");
  rel->add_option("--z", rel_params.confidence_z, "confidence z-score");
  rel->add_option("--e", rel_params.margin_e, "target margin of error");
  rel->add_option("--rare-p", rel_params.rare_prevalence,
                  "rare-branch prevalence");
  rel->add_option("--alpha", rel_params.rare_alpha, "rare-branch risk bound");

  // simulate
  std::string sim_model;
  std::size_t sim_runs = 1;
  std::uint64_t sim_seed = 0;
  std::string sim_out;
  std::string sim_start;
  std::int64_t sim_gap = 60000;
  auto* simulate = app.add_subcommand(
      "simulate", "generate a synthetic trajectory corpus from a model");
  simulate->add_option("--model", sim_model, "ground-truth model JSON")
      ->required();
  simulate->add_option("--runs", sim_runs, "number of runs")->required();
  simulate->add_option("--seed", sim_seed, "RNG seed")->required();
  simulate->add_option("-o,--output", sim_out, "output JSONL path")
      ->required();
  simulate->add_option("--start-time", sim_start,
                       "first run start, ISO-8601 UTC");
  simulate->add_option("--gap-ms", sim_gap, "milliseconds between run starts");

  // report
  std::string rep_model;
  std::string rep_spec;
  std::string rep_out;
  std::string rep_template;
  std::string rep_llm;
  std::string rep_net;
  reliability::ReliabilityParams rep_params;
  auto* report_cmd = app.add_subcommand(
      "report", "full per-gateway report: rule, verdict, reliability");
  report_cmd->add_option("model", rep_model, "causal model JSON")->required();
  report_cmd->add_option("--spec", rep_spec, "agent specification text file")
      ->required();
  report_cmd->add_option("-o,--output", rep_out, "output report JSON path")
      ->required();
  report_cmd->add_option("--template", rep_template, "prompt template file");
  report_cmd->add_option("--llm-config", rep_llm, "endpoint config JSON");
  report_cmd->add_option("--net", rep_net,
                         "heuristics DOT path recorded as a reference");
  report_cmd->add_option("--z", rep_params.confidence_z, "confidence z-score");
  report_cmd->add_option("--e", rep_params.margin_e, "target margin of error");
  report_cmd->add_option("--rare-p", rep_params.rare_prevalence,
                         "rare-branch prevalence");
  report_cmd->add_option("--alpha", rep_params.rare_alpha,
                         "rare-branch risk bound");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  }

  try {
    if (*ingest) {
      run_ingest(ingest_args);
    } else if (*mine_h) {
      const trajlog::EventLog log = load_log_csv(mh_log);
      heuristics::MinerConfig cfg;
      cfg.dependency_threshold = mh_threshold;
      write_text_file(mh_out, heuristics::to_dot(heuristics::discover(log, cfg)));
      std::cout << "wrote " << mh_out << "\n";
    } else if (*mine_c) {
      const trajlog::EventLog log = load_log_csv(mc_log);
      causal::CausalConfig cfg;
      if (!mc_config.empty()) {
        cfg = causal::CausalConfig::from_json_file(mc_config);
      }
      const causal::CausalModel model = causal::discover(log, cfg);
      write_text_file(mc_out, causal::to_json(model));
      if (!mc_dot.empty()) write_text_file(mc_dot, causal::to_dot(model));
      std::cout << "wrote " << mc_out << ": " << model.gateways.size()
                << " gateways, " << model.dag.edges.size() << " edges\n";
    } else if (*gateways) {
      print_gateway_table(causal::model_from_json_file(gw_model));
    } else if (*rule) {
      const causal::CausalModel model =
          causal::model_from_json_file(rule_model);
      const auto& gw = find_gateway(model, rule_gateway);
      std::cout << static_analysis::derive_rule(gw).text << "\n";
    } else if (*analyze) {
      const causal::CausalModel model = causal::model_from_json_file(an_model);
      const auto& gw = find_gateway(model, an_gateway);
      if (an_llm.empty()) {
        throw usage_error(
            "analyze requires --llm-config; no default endpoint is "
            "configured");
      }
      const auto llm = static_analysis::LlmEndpointConfig::from_json_file(an_llm);
      const auto tmpl = an_template.empty()
                            ? static_analysis::PromptTemplate::defaults()
                            : static_analysis::PromptTemplate::from_file(
                                  an_template);
      const auto result = static_analysis::analyze_gateway(
          gw, read_text_file(an_spec), tmpl, llm);
      print_verdict(result);
      if (!an_transcript.empty()) {
        write_text_file(an_transcript, result.transcript.to_json());
      }
    } else if (*rel) {
      const causal::CausalModel model = causal::model_from_json_file(rel_model);
      if (model.gateways.empty()) {
        throw analysis_error("model has no gateways to assess");
      }
      if (!rel_gateway.empty()) {
        const auto& gw = find_gateway(model, rel_gateway);
        print_reliability(gw, reliability::assess_gateway(gw, rel_params));
      } else {
        for (const auto& gw : model.gateways) {
          print_reliability(gw, reliability::assess_gateway(gw, rel_params));
        }
      }
    } else if (*simulate) {
      const auto model = simgen::GroundTruthModel::from_json_file(sim_model);
      simgen::SimConfig cfg;
      cfg.runs = sim_runs;
      cfg.seed = sim_seed;
      cfg.inter_run_gap_ms = sim_gap;
      if (!sim_start.empty()) {
        cfg.start_time_ms = timeutil::parse_iso8601_ms(sim_start);
      }
      const auto events = simgen::simulate(model, cfg);
      write_text_file(sim_out, trajlog::to_jsonl(events));
      std::cout << "wrote " << sim_out << ": " << events.size()
                << " events across " << sim_runs << " runs\n";
    } else if (*report_cmd) {
      report::ReportInputs inputs;
      inputs.model = causal::model_from_json_file(rep_model);
      inputs.spec_text = read_text_file(rep_spec);
      if (rep_llm.empty()) {
        throw usage_error(
            "report requires --llm-config; no default endpoint is "
            "configured");
      }
      inputs.llm = static_analysis::LlmEndpointConfig::from_json_file(rep_llm);
      if (!rep_template.empty()) {
        inputs.tmpl = static_analysis::PromptTemplate::from_file(rep_template);
      }
      inputs.params = rep_params;
      inputs.causal_model_ref = rep_model;
      inputs.heuristics_net_ref = rep_net;
      write_text_file(rep_out, report::build_report_json(inputs));
      std::cout << "wrote " << rep_out << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::analysis);
  }
  return 0;
}
