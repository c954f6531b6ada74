// Builds a stub fixture JSONL from a causal model, a specification file, and
// a responses file mapping gateway ids to authored endpoint output:
//   {"XOR_0": {"response": "...", "mode": "statement_implies_rule",
//              "excerpt": "...", "gaps": ["..."]}}
// Two records are emitted per gateway: the search prompt with the authored
// prose, and the extraction prompt with a verdict block assembled from the
// mode/excerpt/gaps fields.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "varilens/causal.hpp"
#include "varilens/error.hpp"
#include "varilens/static_analysis.hpp"

namespace {

using ordered_json = nlohmann::ordered_json;
using namespace varilens;

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stub fixture generator"};
  std::string model_path;
  std::string spec_path;
  std::string template_path;
  std::string responses_path;
  std::string out_path;
  app.add_option("--model", model_path, "causal model JSON")->required();
  app.add_option("--spec", spec_path, "specification text file")->required();
  app.add_option("--template", template_path, "prompt template file");
  app.add_option("--responses", responses_path, "authored responses JSON")
      ->required();
  app.add_option("-o,--output", out_path, "fixture JSONL path")->required();
  CLI11_PARSE(app, argc, argv);

  try {
    const auto model = causal::model_from_json_file(model_path);
    const std::string spec_text = read_text_file(spec_path);
    const auto tmpl = template_path.empty()
                          ? static_analysis::PromptTemplate::defaults()
                          : static_analysis::PromptTemplate::from_file(
                                template_path);
    const ordered_json responses =
        ordered_json::parse(read_text_file(responses_path));

    std::ostringstream out;
    for (const auto& gw : model.gateways) {
      if (!responses.contains(gw.id)) continue;
      const auto& spec_entry = responses.at(gw.id);
      const std::string prose = spec_entry.at("response").get<std::string>();

      const auto rule = static_analysis::derive_rule(gw);
      const std::string prompt =
          static_analysis::build_prompt(rule, spec_text, tmpl);
      out << ordered_json{{"prompt_digest",
                           static_analysis::sha256_hex(prompt)},
                          {"response", prose}}
                 .dump()
          << "\n";

      std::string block = "MODE: ";
      block += spec_entry.at("mode").get<std::string>();
      block += "\nEXCERPT: ";
      block += spec_entry.value("excerpt", std::string("-"));
      block += "\nGAPS: ";
      std::string gaps;
      if (spec_entry.contains("gaps")) {
        for (const auto& g : spec_entry.at("gaps")) {
          if (!gaps.empty()) gaps += "; ";
          gaps += g.get<std::string>();
        }
      }
      block += gaps.empty() ? "-" : gaps;
      block += "\n";

      const std::string extraction =
          static_analysis::build_extraction_prompt(prose, rule);
      out << ordered_json{{"prompt_digest",
                           static_analysis::sha256_hex(extraction)},
                          {"response", block}}
                 .dump()
          << "\n";
    }

    std::ofstream f(out_path, std::ios::binary);
    if (!f) throw transport_error("cannot open output file: " + out_path);
    f << out.str();
    std::cout << "wrote " << out_path << "\n";
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
