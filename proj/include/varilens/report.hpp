#pragma once

#include <string>

#include "varilens/causal.hpp"
#include "varilens/reliability.hpp"
#include "varilens/static_analysis.hpp"

namespace varilens::report {

struct ReportInputs {
  causal::CausalModel model;
  std::string spec_text;
  static_analysis::PromptTemplate tmpl = static_analysis::PromptTemplate::defaults();
  static_analysis::LlmEndpointConfig llm;
  reliability::ReliabilityParams params;
  std::string causal_model_ref;   // path the model was read from
  std::string heuristics_net_ref; // optional companion artifact, may be empty
};

// Runs rule derivation, endpoint analysis, and reliability assessment for
// every gateway and renders the full run report. Deterministic with the stub
// backend. Reliability reals are rounded to 4 decimal places.
std::string build_report_json(const ReportInputs& inputs);

}  // namespace varilens::report
