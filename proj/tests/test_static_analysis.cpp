#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

// Matches the library TU so the shared httplib inlines are identical.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "test_util.hpp"
#include "varilens/causal.hpp"
#include "varilens/error.hpp"
#include "varilens/simgen.hpp"
#include "varilens/static_analysis.hpp"
#include "varilens/trajlog.hpp"

using namespace varilens;
using namespace varilens::static_analysis;
using ordered_json = nlohmann::ordered_json;

namespace {

// Mirrors the re-ask instruction appended on an unparsable verdict block.
const std::string kStrict =
    "\nYour previous reply could not be parsed. Respond with only the three "
    "lines of the verdict block and nothing else.\n";

causal::Gateway replica_xor0() {
  causal::Gateway gw;
  gw.id = "XOR_0";
  gw.gtype = causal::GatewayType::XOR;
  gw.source = "Calculator::division";
  gw.branches = {causal::GatewayBranch{"Calculator::addition", 108, 108.0 / 122.0},
                 causal::GatewayBranch{"Project Manager::addition", 14, 14.0 / 122.0}};
  gw.traversing_runs = 122;
  return gw;
}

causal::Gateway small_gateway(causal::GatewayType t) {
  causal::Gateway gw;
  gw.id = "G_0";
  gw.gtype = t;
  gw.source = "Planner::route";
  gw.branches = {causal::GatewayBranch{"Worker::fetch", 7, 0.7},
                 causal::GatewayBranch{"Worker::skip", 3, 0.3}};
  gw.traversing_runs = 10;
  return gw;
}

std::string fixture_line(const std::string& prompt, const std::string& response) {
  return ordered_json{{"prompt_digest", sha256_hex(prompt)},
                      {"response", response}}
             .dump() +
         "\n";
}

LlmEndpointConfig stub_config(const std::string& fixture_path) {
  LlmEndpointConfig cfg;
  cfg.backend_kind = BackendKind::stub;
  cfg.stub_fixture = fixture_path;
  return cfg;
}

}  // namespace

TEST_CASE("sha256 matches the published test vectors") {
  CHECK(sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("a") != sha256_hex("b"));
}

TEST_CASE("derive_rule phrases an XOR gateway") {
  const auto rule = derive_rule(replica_xor0());
  CHECK(rule.gateway_id == "XOR_0");
  CHECK(rule.source_agent == "Calculator");
  CHECK(rule.source_tool == "division");
  REQUIRE(rule.branches.size() == 2);
  CHECK(rule.branches[0].agent == "Calculator");
  CHECK(rule.branches[1].agent == "Project Manager");
  CHECK(rule.text ==
        "after the Calculator agent invokes the division tool, it proceeds to "
        "either the Calculator agent invoking the addition tool or to the "
        "Project Manager agent invoking the addition tool");
}

TEST_CASE("derive_rule orders branches by count then target") {
  causal::Gateway gw;
  gw.id = "XOR_3";
  gw.gtype = causal::GatewayType::XOR;
  gw.source = "Hub::route";
  gw.branches = {causal::GatewayBranch{"C::z", 3, 0.2},
                 causal::GatewayBranch{"B::y", 9, 0.6},
                 causal::GatewayBranch{"A::x", 3, 0.2}};
  gw.traversing_runs = 15;
  const auto rule = derive_rule(gw);
  REQUIRE(rule.branches.size() == 3);
  CHECK(rule.branches[0].tool == "y");   // count 9
  CHECK(rule.branches[1].agent == "A");  // count tie broken by target
  CHECK(rule.branches[2].agent == "C");
}

TEST_CASE("derive_rule uses the connective of the gateway type") {
  const auto and_rule = derive_rule(small_gateway(causal::GatewayType::AND));
  CHECK(and_rule.text ==
        "after the Planner agent invokes the route tool, it proceeds to all "
        "of the Worker agent invoking the fetch tool and the Worker agent "
        "invoking the skip tool");
  const auto or_rule = derive_rule(small_gateway(causal::GatewayType::OR));
  CHECK(or_rule.text ==
        "after the Planner agent invokes the route tool, it proceeds to one "
        "or more of the Worker agent invoking the fetch tool or the Worker "
        "agent invoking the skip tool");
}

TEST_CASE("derive_rule rejects degenerate gateways") {
  causal::Gateway gw = small_gateway(causal::GatewayType::XOR);
  gw.branches.pop_back();
  CHECK_THROWS_AS(derive_rule(gw), Error);

  causal::Gateway bad_source = small_gateway(causal::GatewayType::XOR);
  bad_source.source = "no-separator";
  try {
    derive_rule(bad_source);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::analysis);
  }

  causal::Gateway bad_branch = small_gateway(causal::GatewayType::XOR);
  bad_branch.branches[1].target = "plain";
  CHECK_THROWS_AS(derive_rule(bad_branch), Error);
}

TEST_CASE("the default template ships verbatim in data/") {
  const auto tmpl = PromptTemplate::defaults();
  CHECK_NOTHROW(tmpl.validate());
  CHECK(tmpl.body == testutil::read_file(std::string(VARILENS_DATA_DIR) +
                                         "/templates/default_prompt.txt"));
  CHECK(tmpl.body.rfind("can you explicitly find the following rule :\n", 0) ==
        0);
}

TEST_CASE("template validation requires each placeholder exactly once") {
  CHECK_THROWS_AS(PromptTemplate{"no placeholders"}.validate(), Error);
  CHECK_THROWS_AS(PromptTemplate{"{rule} {rule} {spec_text}"}.validate(), Error);
  CHECK_THROWS_AS(PromptTemplate{"{rule} only"}.validate(), Error);
  CHECK_NOTHROW(PromptTemplate{"{spec_text} before {rule}"}.validate());

  testutil::TempDir dir;
  testutil::write_file(dir.file("t.txt"), "ask {rule} within {spec_text}\n");
  CHECK(PromptTemplate::from_file(dir.file("t.txt")).body ==
        "ask {rule} within {spec_text}\n");
  CHECK_THROWS_AS(PromptTemplate::from_file(dir.file("absent.txt")), Error);
  testutil::write_file(dir.file("bad.txt"), "{rule} twice {rule}");
  CHECK_THROWS_AS(PromptTemplate::from_file(dir.file("bad.txt")), Error);
}

TEST_CASE("build_prompt substitutes both placeholders once") {
  const auto rule = derive_rule(replica_xor0());
  const PromptTemplate tmpl{"R=[{rule}] S=[{spec_text}]"};
  const std::string spec = "do math carefully";
  CHECK(build_prompt(rule, spec, tmpl) ==
        "R=[" + rule.text + "] S=[" + spec + "]");

  const auto def = PromptTemplate::defaults();
  const std::string prompt = build_prompt(rule, spec, def);
  CHECK(prompt.find(rule.text) != std::string::npos);
  CHECK(prompt.find(spec) != std::string::npos);
  CHECK(prompt.size() == def.body.size() - 6 - 11 + rule.text.size() +
                             spec.size());

  CHECK_THROWS_AS(build_prompt(rule, "", def), Error);
}

TEST_CASE("match mode strings normalize before matching") {
  CHECK(*match_mode_from_string("equivalent") == MatchMode::equivalent);
  CHECK(*match_mode_from_string("  Statement implies rule  ") ==
        MatchMode::statement_implies_rule);
  CHECK(*match_mode_from_string("RULE_IMPLIES_STATEMENT") ==
        MatchMode::rule_implies_statement);
  CHECK(*match_mode_from_string("No Match") == MatchMode::no_match);
  CHECK(!match_mode_from_string("kinda matches"));
  CHECK(!match_mode_from_string(""));

  for (auto m : {MatchMode::equivalent, MatchMode::statement_implies_rule,
                 MatchMode::rule_implies_statement, MatchMode::no_match}) {
    CHECK(*match_mode_from_string(to_string(m)) == m);
  }
}

TEST_CASE("endpoint config parsing and validation") {
  testutil::TempDir dir;
  SUBCASE("remote fields round through") {
    testutil::write_file(dir.file("cfg.json"),
                         R"({"backend":"remote","base_url":"http://h/x",
                             "model_id":"m","temperature":0.5,
                             "max_retries":7,"credential_env":"MY_KEY"})");
    const auto cfg = LlmEndpointConfig::from_json_file(dir.file("cfg.json"));
    CHECK(cfg.backend_kind == BackendKind::remote);
    CHECK(cfg.base_url == "http://h/x");
    CHECK(cfg.model_id == "m");
    CHECK(cfg.temperature == 0.5);
    CHECK(cfg.max_retries == 7);
    CHECK(cfg.credential_env == "MY_KEY");
  }
  SUBCASE("the shipped stub config parses") {
    const auto cfg = LlmEndpointConfig::from_json_file(
        std::string(VARILENS_DATA_DIR) + "/llm/stub.json");
    CHECK(cfg.backend_kind == BackendKind::stub);
    CHECK(cfg.stub_fixture == "data/fixtures/calculator_stub.jsonl");
  }
  SUBCASE("rejections") {
    CHECK_THROWS_AS(LlmEndpointConfig::from_json_file(dir.file("nope.json")),
                    Error);
    testutil::write_file(dir.file("badkind.json"), R"({"backend":"psychic"})");
    CHECK_THROWS_AS(LlmEndpointConfig::from_json_file(dir.file("badkind.json")),
                    Error);
    testutil::write_file(dir.file("nofix.json"), R"({"backend":"stub"})");
    CHECK_THROWS_AS(LlmEndpointConfig::from_json_file(dir.file("nofix.json")),
                    Error);
    testutil::write_file(dir.file("nohost.json"), R"({"backend":"remote"})");
    CHECK_THROWS_AS(LlmEndpointConfig::from_json_file(dir.file("nohost.json")),
                    Error);
  }
}

TEST_CASE("stub backend replays fixtures keyed by prompt digest") {
  testutil::TempDir dir;
  const std::string fixture = dir.file("stub.jsonl");
  testutil::write_file(fixture, fixture_line("ping", "pong") +
                                    "\n" +  // blank lines are skipped
                                    fixture_line("other", "nope"));
  const auto cfg = stub_config(fixture);

  CHECK(query_llm("ping", cfg) == "pong");
  CHECK(query_llm("other", cfg) == "nope");

  SUBCASE("a miss names the digest it looked for") {
    try {
      query_llm("unknown prompt", cfg);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::transport);
      CHECK(std::string(e.what()).find(sha256_hex("unknown prompt")) !=
            std::string::npos);
    }
  }
  SUBCASE("a corrupt record reports its line number") {
    testutil::write_file(fixture, fixture_line("ping", "pong") + "{broken\n");
    try {
      query_llm("absent", cfg);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::parse);
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("an unreadable fixture is a transport failure") {
    try {
      query_llm("ping", stub_config(dir.file("missing.jsonl")));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::transport);
    }
  }
}

TEST_CASE("classify_verdict parses a clean verdict block") {
  const auto rule = derive_rule(small_gateway(causal::GatewayType::XOR));
  const std::string prose = "I found the statement and it covers the rule.";
  testutil::TempDir dir;
  const std::string fixture = dir.file("stub.jsonl");
  testutil::write_file(
      fixture,
      fixture_line(build_extraction_prompt(prose, rule),
                   "MODE: equivalent\nEXCERPT: route then fetch\n"
                   "GAPS: agent names; tool names"));

  std::vector<Exchange> exchanges;
  const auto verdict =
      classify_verdict(prose, rule, stub_config(fixture), &exchanges);
  CHECK(verdict.match_mode == MatchMode::equivalent);
  REQUIRE(verdict.excerpt.has_value());
  CHECK(*verdict.excerpt == "route then fetch");
  CHECK(verdict.gaps == std::vector<std::string>{"agent names", "tool names"});
  CHECK(verdict.raw_response == prose);
  CHECK(verdict.classification == Classification::decision_point);
  REQUIRE(exchanges.size() == 1);
  CHECK(exchanges[0].prompt == build_extraction_prompt(prose, rule));
}

TEST_CASE("classify_verdict tolerates noise and keeps the first block lines") {
  const auto rule = derive_rule(small_gateway(causal::GatewayType::XOR));
  const std::string prose = "analysis text";
  testutil::TempDir dir;
  const std::string fixture = dir.file("stub.jsonl");
  testutil::write_file(
      fixture,
      fixture_line(build_extraction_prompt(prose, rule),
                   "Sure! Here is the verdict:\n"
                   "  MODE: Statement implies rule\n"
                   "EXCERPT: the plan statement\n"
                   "GAPS: g1; ; g2\n"
                   "MODE: no_match\n"));
  const auto verdict = classify_verdict(prose, rule, stub_config(fixture));
  CHECK(verdict.match_mode == MatchMode::statement_implies_rule);
  CHECK(verdict.gaps == std::vector<std::string>{"g1", "g2"});
  CHECK(verdict.classification == Classification::decision_point);
}

TEST_CASE("no_match verdicts become variation points without an excerpt") {
  const auto rule = derive_rule(small_gateway(causal::GatewayType::XOR));
  const std::string prose = "nothing in the spec covers this";
  testutil::TempDir dir;
  const std::string fixture = dir.file("stub.jsonl");
  testutil::write_file(fixture,
                       fixture_line(build_extraction_prompt(prose, rule),
                                    "MODE: no_match\nEXCERPT: -\nGAPS: -\n"));
  const auto verdict = classify_verdict(prose, rule, stub_config(fixture));
  CHECK(verdict.match_mode == MatchMode::no_match);
  CHECK(!verdict.excerpt.has_value());
  CHECK(verdict.gaps.empty());
  CHECK(verdict.classification == Classification::variation_point);
}

TEST_CASE("an unparsable block is re-asked once with the strict suffix") {
  const auto rule = derive_rule(small_gateway(causal::GatewayType::XOR));
  const std::string prose = "wandering prose";
  const std::string first = build_extraction_prompt(prose, rule);
  testutil::TempDir dir;
  const std::string fixture = dir.file("stub.jsonl");

  SUBCASE("second attempt succeeds") {
    // a claimed match without an excerpt is rejected, forcing the re-ask
    testutil::write_file(
        fixture,
        fixture_line(first, "MODE: equivalent\nEXCERPT: -\nGAPS: -\n") +
            fixture_line(first + kStrict,
                         "MODE: rule_implies_statement\nEXCERPT: beta\n"
                         "GAPS: -\n"));
    std::vector<Exchange> exchanges;
    const auto verdict =
        classify_verdict(prose, rule, stub_config(fixture), &exchanges);
    CHECK(verdict.match_mode == MatchMode::rule_implies_statement);
    REQUIRE(exchanges.size() == 2);
    CHECK(exchanges[1].prompt == first + kStrict);
  }
  SUBCASE("second failure carries a truncated response") {
    const std::string garbage(300, 'z');
    testutil::write_file(fixture, fixture_line(first, garbage) +
                                      fixture_line(first + kStrict, garbage));
    try {
      classify_verdict(prose, rule, stub_config(fixture));
      FAIL("expected an error");
    } catch (const Error& e) {
      const std::string msg = e.what();
      CHECK(e.kind() == ErrorKind::transport);
      CHECK(msg.find("after one re-ask") != std::string::npos);
      CHECK(msg.find(std::string(200, 'z') + "...") != std::string::npos);
      CHECK(msg.find(std::string(201, 'z')) == std::string::npos);
    }
  }
  SUBCASE("an empty prose response cannot be classified") {
    testutil::write_file(fixture, fixture_line("x", "y"));
    CHECK_THROWS_AS(classify_verdict("", rule, stub_config(fixture)), Error);
  }
}

TEST_CASE("analyze_gateway is reproducible byte for byte") {
  const auto gw = small_gateway(causal::GatewayType::XOR);
  const auto rule = derive_rule(gw);
  const std::string spec = "Planner routes work; Worker fetches or skips.";
  const std::string prose = "The second sentence states the routing rule.";
  const std::string search_prompt =
      build_prompt(rule, spec, PromptTemplate::defaults());

  testutil::TempDir dir;
  const std::string fixture = dir.file("stub.jsonl");
  testutil::write_file(
      fixture,
      fixture_line(search_prompt, prose) +
          fixture_line(build_extraction_prompt(prose, rule),
                       "MODE: equivalent\nEXCERPT: Worker fetches or skips\n"
                       "GAPS: -\n"));
  const auto cfg = stub_config(fixture);

  const auto a = analyze_gateway(gw, spec, PromptTemplate::defaults(), cfg);
  const auto b = analyze_gateway(gw, spec, PromptTemplate::defaults(), cfg);
  CHECK(a.transcript.to_json() == b.transcript.to_json());

  CHECK(a.transcript.gateway_id == "G_0");
  CHECK(a.transcript.rule_text == rule.text);
  REQUIRE(a.transcript.exchanges.size() == 2);
  CHECK(a.transcript.exchanges[0].prompt == search_prompt);
  CHECK(a.transcript.exchanges[0].response == prose);
  CHECK(a.verdict.classification == Classification::decision_point);

  const std::string doc = a.transcript.to_json();
  CHECK(doc.find("\"match_mode\": \"equivalent\"") != std::string::npos);
  CHECK(doc.find("\"classification\": \"decision_point\"") != std::string::npos);
}

TEST_CASE("the shipped calculator fixture classifies the replica gateways") {
  const auto model = simgen::GroundTruthModel::from_json_file(
      std::string(VARILENS_DATA_DIR) + "/models/calculator_replica.json");
  simgen::SimConfig sim;
  sim.runs = 290;
  sim.seed = 5267;
  const auto log = trajlog::build_event_log(simgen::simulate(model, sim));
  const auto ccfg = causal::CausalConfig::from_json_file(
      std::string(VARILENS_DATA_DIR) + "/configs/replica_causal.json");
  const auto cm = causal::discover(log, ccfg);

  const causal::Gateway* xor0 = nullptr;
  const causal::Gateway* xor1 = nullptr;
  for (const auto& gw : cm.gateways) {
    if (gw.id == "XOR_0") xor0 = &gw;
    if (gw.id == "XOR_1") xor1 = &gw;
  }
  REQUIRE(xor0 != nullptr);
  REQUIRE(xor1 != nullptr);
  CHECK(xor0->source == "Calculator::division");

  const std::string spec = testutil::read_file(
      std::string(VARILENS_DATA_DIR) + "/specs/calculator_spec.txt");
  LlmEndpointConfig cfg = stub_config(std::string(VARILENS_DATA_DIR) +
                                      "/fixtures/calculator_stub.jsonl");

  const auto r0 =
      analyze_gateway(*xor0, spec, PromptTemplate::defaults(), cfg);
  CHECK(r0.verdict.classification == Classification::decision_point);
  CHECK(r0.verdict.match_mode == MatchMode::statement_implies_rule);
  REQUIRE(r0.verdict.excerpt.has_value());
  CHECK(r0.verdict.excerpt->find("First do Multiplication") !=
        std::string::npos);
  CHECK(!r0.verdict.gaps.empty());

  const auto r1 =
      analyze_gateway(*xor1, spec, PromptTemplate::defaults(), cfg);
  CHECK(r1.verdict.classification == Classification::variation_point);
  CHECK(r1.verdict.match_mode == MatchMode::no_match);
  CHECK(!r1.verdict.excerpt.has_value());
}

TEST_CASE("remote backend speaks the chat-completion protocol") {
  setenv("VARILENS_LLM_API_KEY", "test-key", 1);

  httplib::Server server;
  std::string seen_body;
  std::string seen_auth;
  std::atomic<int> fail_hits{0};
  std::atomic<int> badpayload_hits{0};

  server.Post("/v1/chat/completions",
              [&](const httplib::Request& req, httplib::Response& res) {
                seen_body = req.body;
                seen_auth = req.get_header_value("Authorization");
                res.set_content(
                    R"({"choices":[{"message":{"content":"pong"}}]})",
                    "application/json");
              });
  server.Post("/legacy",
              [&](const httplib::Request&, httplib::Response& res) {
                res.set_content(R"({"choices":[{"text":"fallback"}]})",
                                "application/json");
              });
  server.Post("/unstable",
              [&](const httplib::Request&, httplib::Response& res) {
                ++fail_hits;
                res.status = 500;
              });
  server.Post("/badpayload",
              [&](const httplib::Request&, httplib::Response& res) {
                ++badpayload_hits;
                res.set_content(R"({"no_choices":true})", "application/json");
              });

  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  const std::string base = "http://127.0.0.1:" + std::to_string(port);

  LlmEndpointConfig cfg;
  cfg.backend_kind = BackendKind::remote;
  cfg.base_url = base + "/v1/chat/completions";
  cfg.model_id = "test-model";
  cfg.temperature = 0.0;
  cfg.max_retries = 2;
  cfg.timeout_s = 10;

  SUBCASE("request shape and response extraction") {
    CHECK(query_llm("hello endpoint", cfg) == "pong");
    CHECK(seen_auth == "Bearer test-key");
    const auto body = ordered_json::parse(seen_body);
    CHECK(body.at("model") == "test-model");
    CHECK(body.at("temperature") == 0.0);
    REQUIRE(body.at("messages").size() == 1);
    CHECK(body.at("messages")[0].at("role") == "user");
    CHECK(body.at("messages")[0].at("content") == "hello endpoint");
  }
  SUBCASE("legacy text completions are accepted") {
    LlmEndpointConfig legacy = cfg;
    legacy.base_url = base + "/legacy";
    CHECK(query_llm("x", legacy) == "fallback");
  }
  SUBCASE("non-2xx responses burn the retry budget") {
    LlmEndpointConfig unstable = cfg;
    unstable.base_url = base + "/unstable";
    try {
      query_llm("x", unstable);
      FAIL("expected an error");
    } catch (const Error& e) {
      const std::string msg = e.what();
      CHECK(e.kind() == ErrorKind::transport);
      CHECK(msg.find("3 attempts") != std::string::npos);
      CHECK(msg.find("HTTP status 500") != std::string::npos);
    }
    CHECK(fail_hits.load() == 3);
  }
  SUBCASE("a malformed completion fails immediately") {
    LlmEndpointConfig bad = cfg;
    bad.base_url = base + "/badpayload";
    try {
      query_llm("x", bad);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::transport);
      CHECK(std::string(e.what()).find("unexpected completion") !=
            std::string::npos);
    }
    CHECK(badpayload_hits.load() == 1);
  }
  SUBCASE("a missing credential never reaches the network") {
    LlmEndpointConfig keyless = cfg;
    keyless.credential_env = "VARILENS_TEST_UNSET_KEY";
    unsetenv("VARILENS_TEST_UNSET_KEY");
    try {
      query_llm("x", keyless);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::transport);
      CHECK(std::string(e.what()).find("VARILENS_TEST_UNSET_KEY") !=
            std::string::npos);
    }
  }
  SUBCASE("a schemeless base_url is rejected") {
    LlmEndpointConfig bad = cfg;
    bad.base_url = "127.0.0.1/nope";
    CHECK_THROWS_AS(query_llm("x", bad), Error);
  }

  server.stop();
  worker.join();
}
