#pragma once

#include <optional>
#include <string>
#include <vector>

#include "varilens/causal.hpp"

namespace varilens::static_analysis {

struct BranchRef {
  std::string agent;
  std::string tool;
};

struct RuleStatement {
  std::string gateway_id;
  std::string text;  // fully instantiated, no placeholders
  std::string source_agent;
  std::string source_tool;
  std::vector<BranchRef> branches;  // descending count, ties lexicographic
  causal::GatewayType gtype = causal::GatewayType::XOR;
};

// Body must contain {rule} and {spec_text} exactly once each.
struct PromptTemplate {
  std::string body;

  static PromptTemplate defaults();
  static PromptTemplate from_file(const std::string& path);
  void validate() const;
};

enum class MatchMode {
  equivalent,
  statement_implies_rule,
  rule_implies_statement,
  no_match,
};
const char* to_string(MatchMode m);
std::optional<MatchMode> match_mode_from_string(const std::string& text);

enum class Classification { decision_point, variation_point };
const char* to_string(Classification c);

struct MatchVerdict {
  MatchMode match_mode = MatchMode::no_match;
  std::optional<std::string> excerpt;
  std::vector<std::string> gaps;
  std::string raw_response;  // first-pass prose from the endpoint
  Classification classification = Classification::variation_point;
};

enum class BackendKind { remote, stub };

struct LlmEndpointConfig {
  std::string base_url;
  std::string model_id;
  double temperature = 0.0;
  int timeout_s = 60;
  std::string credential_env = "VARILENS_LLM_API_KEY";
  BackendKind backend_kind = BackendKind::stub;
  std::string stub_fixture;  // required for the stub backend
  int max_retries = 2;

  static LlmEndpointConfig from_json_file(const std::string& path);
  void validate() const;
};

struct Exchange {
  std::string prompt;
  std::string response;
};

// Everything needed to replay an analysis without network access.
struct AnalysisTranscript {
  std::string gateway_id;
  std::string rule_text;
  std::vector<Exchange> exchanges;
  MatchVerdict verdict;

  std::string to_json() const;
};

struct AnalysisResult {
  RuleStatement rule;
  MatchVerdict verdict;
  AnalysisTranscript transcript;
};

std::string sha256_hex(const std::string& data);

RuleStatement derive_rule(const causal::Gateway& gateway);

std::string build_prompt(const RuleStatement& rule, const std::string& spec_text,
                         const PromptTemplate& tmpl = PromptTemplate::defaults());

// The fixed instruction wrapped around a prose response for the structured
// extraction pass. Public so fixture files can be keyed by its digest.
std::string build_extraction_prompt(const std::string& response,
                                    const RuleStatement& rule);

// Remote: chat-completion POST with bearer credential and bounded retries.
// Stub: fixture lookup keyed by the SHA-256 hex digest of the prompt.
std::string query_llm(const std::string& prompt,
                      const LlmEndpointConfig& config);

// Second, structured extraction pass over the prose response. Retries the
// extraction once with a stricter instruction before giving up.
MatchVerdict classify_verdict(const std::string& response,
                              const RuleStatement& rule,
                              const LlmEndpointConfig& config,
                              std::vector<Exchange>* exchanges = nullptr);

AnalysisResult analyze_gateway(const causal::Gateway& gateway,
                               const std::string& spec_text,
                               const PromptTemplate& tmpl,
                               const LlmEndpointConfig& config);

}  // namespace varilens::static_analysis
