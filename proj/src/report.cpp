#include "varilens/report.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "varilens/version.hpp"

namespace varilens::report {

using ordered_json = nlohmann::ordered_json;

namespace {

double round4(double v) { return std::round(v * 10000.0) / 10000.0; }

ordered_json reliability_json(const reliability::ReliabilityReport& rep) {
  ordered_json out;
  ordered_json per_branch = ordered_json::array();
  for (const auto& br : rep.per_branch) {
    ordered_json b;
    b["target"] = br.target;
    b["observed_p"] = round4(br.observed_p);
    b["required_n"] = br.required_n ? ordered_json(*br.required_n)
                                    : ordered_json(nullptr);
    b["deficit"] = br.deficit;
    b["achieved_margin"] = br.achieved_margin
                               ? ordered_json(round4(*br.achieved_margin))
                               : ordered_json(nullptr);
    per_branch.push_back(std::move(b));
  }
  out["per_branch"] = std::move(per_branch);
  out["rare_required_n"] = rep.rare_branch_required_n;
  out["rare_deficit"] = rep.rare_branch_deficit;
  out["verdict"] = reliability::to_string(rep.verdict);
  return out;
}

}  // namespace

std::string build_report_json(const ReportInputs& inputs) {
  ordered_json doc;
  doc["schema_version"] = "1";
  doc["tool_version"] = kToolVersion;
  doc["log"] = {{"traces", inputs.model.log_traces},
                {"activities", inputs.model.log_activities}};
  doc["references"] = {
      {"causal_model", inputs.causal_model_ref},
      {"heuristics_net", inputs.heuristics_net_ref.empty()
                             ? ordered_json(nullptr)
                             : ordered_json(inputs.heuristics_net_ref)}};
  doc["config"] = {
      {"causal",
       {{"edge_weight_threshold", inputs.model.config.edge_weight_threshold},
        {"precedence_fraction", inputs.model.config.precedence_fraction},
        {"min_pairwise_traces", inputs.model.config.min_pairwise_traces},
        {"xor_tolerance", inputs.model.config.xor_tolerance}}},
      {"reliability",
       {{"confidence_z", inputs.params.confidence_z},
        {"margin_e", inputs.params.margin_e},
        {"rare_alpha", inputs.params.rare_alpha},
        {"rare_prevalence", inputs.params.rare_prevalence}}},
      {"llm",
       {{"backend", inputs.llm.backend_kind ==
                            static_analysis::BackendKind::stub
                        ? "stub"
                        : "remote"},
        {"model_id", inputs.llm.model_id}}}};

  ordered_json gateways = ordered_json::array();
  for (const auto& gw : inputs.model.gateways) {
    ordered_json g;
    g["id"] = gw.id;
    g["type"] = causal::to_string(gw.gtype);
    g["source"] = gw.source;
    ordered_json branches = ordered_json::array();
    for (const auto& b : gw.branches) {
      branches.push_back({{"target", b.target},
                          {"count", b.count},
                          {"proportion", b.proportion}});
    }
    g["branches"] = std::move(branches);

    const static_analysis::AnalysisResult analysis =
        static_analysis::analyze_gateway(gw, inputs.spec_text, inputs.tmpl,
                                         inputs.llm);
    g["rule"] = analysis.rule.text;
    g["verdict"] = {
        {"mode", static_analysis::to_string(analysis.verdict.match_mode)},
        {"excerpt", analysis.verdict.excerpt
                        ? ordered_json(*analysis.verdict.excerpt)
                        : ordered_json(nullptr)},
        {"gaps", analysis.verdict.gaps},
        {"classification",
         static_analysis::to_string(analysis.verdict.classification)}};

    g["reliability"] =
        reliability_json(reliability::assess_gateway(gw, inputs.params));
    gateways.push_back(std::move(g));
  }
  doc["gateways"] = std::move(gateways);
  return doc.dump(2) + "\n";
}

}  // namespace varilens::report
