#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "varilens/static_analysis.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "varilens/error.hpp"

namespace varilens::static_analysis {

using ordered_json = nlohmann::ordered_json;

namespace {

// Figure-style search prompt; the two placeholders are the whole interface.
constexpr const char* kDefaultTemplate =
    "can you explicitly find the following rule :\n"
    "\"{rule}\",\n"
    "in the following prompt:\"{spec_text}\".\n"
    "dont extract the complete prompt.\n"
    "highlight an explicit statement in the prompt that is either: (1) an "
    "equivalent of the rule, (2) the statement is implied from the rule, or "
    "(3) the rule is implied from the statement\n";

constexpr const char* kStrictSuffix =
    "\nYour previous reply could not be parsed. Respond with only the three "
    "lines of the verdict block and nothing else.\n";

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::size_t count_occurrences(const std::string& haystack,
                              const std::string& needle) {
  std::size_t n = 0;
  std::size_t pos = 0;
  while ((pos = haystack.find(needle, pos)) != std::string::npos) {
    ++n;
    pos += needle.size();
  }
  return n;
}

std::string replace_once(std::string text, const std::string& placeholder,
                         const std::string& value) {
  const std::size_t pos = text.find(placeholder);
  text.replace(pos, placeholder.size(), value);
  return text;
}

std::string branch_phrase(const BranchRef& b) {
  return "the " + b.agent + " agent invoking the " + b.tool + " tool";
}

struct ParsedBlock {
  MatchMode mode = MatchMode::no_match;
  std::optional<std::string> excerpt;
  std::vector<std::string> gaps;
};

}  // namespace

std::string build_extraction_prompt(const std::string& response,
                                    const RuleStatement& rule) {
  std::ostringstream os;
  os << "You are given a rule and an analysis of whether the rule appears in "
        "a specification.\n\n";
  os << "rule: \"" << rule.text << "\"\n\n";
  os << "analysis:\n" << response << "\n\n";
  os << "Summarize the analysis as a verdict block of exactly three lines:\n";
  os << "MODE: one of equivalent, statement_implies_rule, "
        "rule_implies_statement, no_match\n";
  os << "EXCERPT: the specification statement the analysis points to, or - "
        "if there is none\n";
  os << "GAPS: aspects the statement fails to cover, separated by ';', or - "
        "if there are none\n";
  return os.str();
}

namespace {

std::optional<ParsedBlock> parse_verdict_block(const std::string& text) {
  std::optional<std::string> mode_line;
  std::optional<std::string> excerpt_line;
  std::optional<std::string> gaps_line;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (!mode_line && t.rfind("MODE:", 0) == 0) {
      mode_line = trim(t.substr(5));
    } else if (!excerpt_line && t.rfind("EXCERPT:", 0) == 0) {
      excerpt_line = trim(t.substr(8));
    } else if (!gaps_line && t.rfind("GAPS:", 0) == 0) {
      gaps_line = trim(t.substr(5));
    }
  }
  if (!mode_line || !excerpt_line || !gaps_line) return std::nullopt;
  const auto mode = match_mode_from_string(*mode_line);
  if (!mode) return std::nullopt;

  ParsedBlock block;
  block.mode = *mode;
  if (*excerpt_line != "-" && !excerpt_line->empty()) {
    block.excerpt = *excerpt_line;
  }
  if (*gaps_line != "-" && !gaps_line->empty()) {
    std::istringstream gs(*gaps_line);
    std::string part;
    while (std::getline(gs, part, ';')) {
      const std::string g = trim(part);
      if (!g.empty()) block.gaps.push_back(g);
    }
  }
  // Any claimed match must point at an actual statement.
  if (block.mode != MatchMode::no_match && !block.excerpt) return std::nullopt;
  return block;
}

std::string truncate_for_error(const std::string& s) {
  constexpr std::size_t kMax = 200;
  if (s.size() <= kMax) return s;
  return s.substr(0, kMax) + "...";
}

std::string query_stub(const std::string& prompt,
                       const LlmEndpointConfig& config) {
  std::ifstream in(config.stub_fixture);
  if (!in) {
    throw transport_error("cannot open stub fixture: " + config.stub_fixture);
  }
  const std::string digest = sha256_hex(prompt);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ordered_json rec;
    try {
      rec = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw parse_error_at(line_no, std::string("bad fixture record: ") +
                                        e.what());
    }
    if (rec.value("prompt_digest", "") == digest) {
      return rec.at("response").get<std::string>();
    }
  }
  throw transport_error("stub fixture " + config.stub_fixture +
                        " has no entry for prompt digest " + digest);
}

std::string query_remote(const std::string& prompt,
                         const LlmEndpointConfig& config) {
  const char* key = std::getenv(config.credential_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw transport_error("credential environment variable " +
                          config.credential_env + " is not set");
  }

  const std::size_t scheme_end = config.base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw transport_error("base_url needs a scheme: " + config.base_url);
  }
  const std::size_t path_start = config.base_url.find('/', scheme_end + 3);
  const std::string host = path_start == std::string::npos
                               ? config.base_url
                               : config.base_url.substr(0, path_start);
  const std::string path = path_start == std::string::npos
                               ? "/"
                               : config.base_url.substr(path_start);

  ordered_json body;
  body["model"] = config.model_id;
  body["messages"] = ordered_json::array(
      {{{"role", "user"}, {"content", prompt}}});
  body["temperature"] = config.temperature;
  const std::string payload = body.dump();

  std::string last_failure = "no attempt made";
  const int attempts = 1 + std::max(0, config.max_retries);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    httplib::Client cli(host);
    cli.set_connection_timeout(config.timeout_s, 0);
    cli.set_read_timeout(config.timeout_s, 0);
    cli.set_write_timeout(config.timeout_s, 0);
    cli.set_bearer_token_auth(key);

    auto res = cli.Post(path, payload, "application/json");
    if (!res) {
      last_failure = httplib::to_string(res.error());
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      last_failure = "HTTP status " + std::to_string(res->status);
      continue;
    }
    try {
      const ordered_json doc = ordered_json::parse(res->body);
      const auto& choice = doc.at("choices").at(0);
      if (choice.contains("message")) {
        return choice.at("message").at("content").get<std::string>();
      }
      return choice.at("text").get<std::string>();
    } catch (const std::exception& e) {
      throw transport_error(std::string("endpoint returned an unexpected "
                                        "completion payload: ") +
                            e.what());
    }
  }
  throw transport_error("endpoint " + config.base_url + " failed after " +
                        std::to_string(attempts) +
                        " attempts; last failure: " + last_failure);
}

}  // namespace

const char* to_string(MatchMode m) {
  switch (m) {
    case MatchMode::equivalent: return "equivalent";
    case MatchMode::statement_implies_rule: return "statement_implies_rule";
    case MatchMode::rule_implies_statement: return "rule_implies_statement";
    case MatchMode::no_match: return "no_match";
  }
  return "no_match";
}

std::optional<MatchMode> match_mode_from_string(const std::string& text) {
  std::string norm;
  for (char c : trim(text)) {
    norm.push_back(c == ' ' ? '_'
                            : static_cast<char>(std::tolower(
                                  static_cast<unsigned char>(c))));
  }
  if (norm == "equivalent") return MatchMode::equivalent;
  if (norm == "statement_implies_rule") return MatchMode::statement_implies_rule;
  if (norm == "rule_implies_statement") return MatchMode::rule_implies_statement;
  if (norm == "no_match") return MatchMode::no_match;
  return std::nullopt;
}

const char* to_string(Classification c) {
  return c == Classification::decision_point ? "decision_point"
                                             : "variation_point";
}

PromptTemplate PromptTemplate::defaults() {
  return PromptTemplate{kDefaultTemplate};
}

PromptTemplate PromptTemplate::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open prompt template: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  PromptTemplate tmpl{buf.str()};
  tmpl.validate();
  return tmpl;
}

void PromptTemplate::validate() const {
  if (count_occurrences(body, "{rule}") != 1) {
    throw parse_error("prompt template must contain {rule} exactly once");
  }
  if (count_occurrences(body, "{spec_text}") != 1) {
    throw parse_error("prompt template must contain {spec_text} exactly once");
  }
}

LlmEndpointConfig LlmEndpointConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open endpoint config: " + path);
  ordered_json doc;
  try {
    doc = ordered_json::parse(in);
  } catch (const std::exception& e) {
    throw parse_error(std::string("invalid endpoint config JSON: ") + e.what());
  }
  LlmEndpointConfig cfg;
  try {
    cfg.base_url = doc.value("base_url", cfg.base_url);
    cfg.model_id = doc.value("model_id", cfg.model_id);
    cfg.temperature = doc.value("temperature", cfg.temperature);
    cfg.timeout_s = doc.value("timeout_s", cfg.timeout_s);
    cfg.credential_env = doc.value("credential_env", cfg.credential_env);
    cfg.stub_fixture = doc.value("stub_fixture", cfg.stub_fixture);
    cfg.max_retries = doc.value("max_retries", cfg.max_retries);
    if (doc.contains("backend")) {
      const std::string kind = doc.at("backend").get<std::string>();
      if (kind == "remote") {
        cfg.backend_kind = BackendKind::remote;
      } else if (kind == "stub") {
        cfg.backend_kind = BackendKind::stub;
      } else {
        throw parse_error("backend must be \"remote\" or \"stub\", got " +
                          kind);
      }
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw parse_error(std::string("malformed endpoint config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void LlmEndpointConfig::validate() const {
  if (backend_kind == BackendKind::stub && stub_fixture.empty()) {
    throw parse_error("stub backend requires a stub_fixture path");
  }
  if (backend_kind == BackendKind::remote &&
      (base_url.empty() || model_id.empty())) {
    throw parse_error("remote backend requires base_url and model_id");
  }
}

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int md_len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &md_len, EVP_sha256(),
                 nullptr) != 1) {
    throw analysis_error("SHA-256 digest computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * md_len);
  for (unsigned int i = 0; i < md_len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0x0f]);
  }
  return out;
}

RuleStatement derive_rule(const causal::Gateway& gateway) {
  if (gateway.branches.size() < 2) {
    throw analysis_error("gateway " + gateway.id +
                         " needs at least two branches to phrase a rule");
  }
  const auto source = trajlog::split_activity(gateway.source);
  if (!source) {
    throw analysis_error("activity id lacks the agent::tool form: " +
                         gateway.source);
  }

  RuleStatement rule;
  rule.gateway_id = gateway.id;
  rule.gtype = gateway.gtype;
  rule.source_agent = source->first;
  rule.source_tool = source->second;

  std::vector<causal::GatewayBranch> ordered = gateway.branches;
  std::sort(ordered.begin(), ordered.end(),
            [](const causal::GatewayBranch& a, const causal::GatewayBranch& b) {
              if (a.count != b.count) return a.count > b.count;
              return a.target < b.target;
            });
  for (const auto& b : ordered) {
    const auto parts = trajlog::split_activity(b.target);
    if (!parts) {
      throw analysis_error("activity id lacks the agent::tool form: " +
                           b.target);
    }
    rule.branches.push_back(BranchRef{parts->first, parts->second});
  }

  std::string lead;
  std::string joiner;
  switch (gateway.gtype) {
    case causal::GatewayType::XOR:
      lead = "it proceeds to either ";
      joiner = " or to ";
      break;
    case causal::GatewayType::AND:
      lead = "it proceeds to all of ";
      joiner = " and ";
      break;
    case causal::GatewayType::OR:
      lead = "it proceeds to one or more of ";
      joiner = " or ";
      break;
  }
  std::ostringstream os;
  os << "after the " << rule.source_agent << " agent invokes the "
     << rule.source_tool << " tool, " << lead;
  for (std::size_t i = 0; i < rule.branches.size(); ++i) {
    if (i > 0) os << joiner;
    os << branch_phrase(rule.branches[i]);
  }
  rule.text = os.str();
  return rule;
}

std::string build_prompt(const RuleStatement& rule, const std::string& spec_text,
                         const PromptTemplate& tmpl) {
  if (spec_text.empty()) {
    throw parse_error("specification text is empty");
  }
  tmpl.validate();
  std::string out = replace_once(tmpl.body, "{rule}", rule.text);
  return replace_once(out, "{spec_text}", spec_text);
}

std::string query_llm(const std::string& prompt,
                      const LlmEndpointConfig& config) {
  config.validate();
  return config.backend_kind == BackendKind::stub
             ? query_stub(prompt, config)
             : query_remote(prompt, config);
}

MatchVerdict classify_verdict(const std::string& response,
                              const RuleStatement& rule,
                              const LlmEndpointConfig& config,
                              std::vector<Exchange>* exchanges) {
  if (response.empty()) {
    throw analysis_error("cannot classify an empty endpoint response");
  }

  const std::string first = build_extraction_prompt(response, rule);
  std::string reply = query_llm(first, config);
  if (exchanges != nullptr) exchanges->push_back(Exchange{first, reply});
  std::optional<ParsedBlock> block = parse_verdict_block(reply);
  if (!block) {
    const std::string retry_prompt = first + kStrictSuffix;
    reply = query_llm(retry_prompt, config);
    if (exchanges != nullptr) {
      exchanges->push_back(Exchange{retry_prompt, reply});
    }
    block = parse_verdict_block(reply);
  }
  if (!block) {
    throw transport_error(
        "endpoint verdict block was unparsable after one re-ask; last "
        "response: " +
        truncate_for_error(reply));
  }

  MatchVerdict verdict;
  verdict.match_mode = block->mode;
  verdict.excerpt = block->excerpt;
  verdict.gaps = block->gaps;
  verdict.raw_response = response;
  verdict.classification = block->mode == MatchMode::no_match
                               ? Classification::variation_point
                               : Classification::decision_point;
  return verdict;
}

AnalysisResult analyze_gateway(const causal::Gateway& gateway,
                               const std::string& spec_text,
                               const PromptTemplate& tmpl,
                               const LlmEndpointConfig& config) {
  AnalysisResult result;
  result.rule = derive_rule(gateway);
  const std::string prompt = build_prompt(result.rule, spec_text, tmpl);
  const std::string response = query_llm(prompt, config);
  result.transcript.exchanges.push_back(Exchange{prompt, response});
  result.verdict = classify_verdict(response, result.rule, config,
                                    &result.transcript.exchanges);
  result.transcript.gateway_id = gateway.id;
  result.transcript.rule_text = result.rule.text;
  result.transcript.verdict = result.verdict;
  return result;
}

std::string AnalysisTranscript::to_json() const {
  ordered_json doc;
  doc["gateway_id"] = gateway_id;
  doc["rule"] = rule_text;
  ordered_json ex = ordered_json::array();
  for (const auto& e : exchanges) {
    ex.push_back({{"prompt", e.prompt}, {"response", e.response}});
  }
  doc["exchanges"] = std::move(ex);
  ordered_json v;
  v["match_mode"] = to_string(verdict.match_mode);
  v["excerpt"] = verdict.excerpt ? ordered_json(*verdict.excerpt)
                                 : ordered_json(nullptr);
  v["gaps"] = verdict.gaps;
  v["classification"] = to_string(verdict.classification);
  doc["verdict"] = std::move(v);
  return doc.dump(2) + "\n";
}

}  // namespace varilens::static_analysis
