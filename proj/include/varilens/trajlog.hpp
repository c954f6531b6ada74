#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace varilens::trajlog {

enum class ActionKind { tool_invocation, delegation, llm_call, other };

const char* to_string(ActionKind kind);
ActionKind action_kind_from_string(const std::string& text);

// One timestamped agent action as captured in a trajectory file.
struct TrajectoryEvent {
  std::string run_id;
  std::size_t seq = 0;  // position within the source, unique per run
  std::int64_t timestamp_ms = 0;
  std::string agent;
  ActionKind action_kind = ActionKind::other;
  std::optional<std::string> tool;  // required for tool_invocation
  std::optional<std::string> payload;
};

struct TraceEvent {
  std::string activity;  // agent::tool
  std::int64_t timestamp_ms = 0;
  std::string agent;
  std::string tool;
};

// One run. Events are kept sorted by (timestamp, source seq).
struct Trace {
  std::string case_id;
  std::vector<TraceEvent> events;
};

struct EventLog {
  std::vector<Trace> traces;
  std::set<std::string> activity_alphabet;
  // Set when timestamps were fabricated by the text adapter. Causal
  // discovery refuses such logs; heuristics mining accepts them.
  bool synthetic_time = false;

  std::size_t total_events() const;
};

// Regex patterns for extracting events from raw verbose agent logs.
// agent_header capture 1 = agent name; tool_line capture 1 = tool,
// capture 2 = payload; timestamp capture 1 = ISO-8601 instant. An empty
// timestamp pattern selects synthetic-time mode.
struct TextAdapterConfig {
  std::string agent_header;
  std::string tool_line;
  std::string timestamp;

  static TextAdapterConfig from_json(const std::string& text);
  static TextAdapterConfig from_json_file(const std::string& path);
};

struct TextParseResult {
  std::vector<TrajectoryEvent> events;
  bool synthetic_time = false;
};

// Reads newline-delimited normalized trajectory records. seq is assigned
// 0,1,2,... in file order. Throws a parse error with the offending line
// number on malformed records or missing required fields.
std::vector<TrajectoryEvent> parse_jsonl(std::istream& in);

// Serializes events back to the normalized record format, one per line.
std::string to_jsonl(const std::vector<TrajectoryEvent>& events);

// Extracts tool invocations from a raw verbose log. Every tool line is
// attributed to the most recent agent header; a tool line before any header
// is an attribution error. In synthetic-time mode timestamps are assigned
// 1 ms apart starting at the epoch.
TextParseResult parse_agent_text_log(const std::string& text,
                                     const TextAdapterConfig& config,
                                     const std::string& run_id);

std::set<ActionKind> default_filter();

// Groups retained events into traces sorted by (timestamp, seq) and builds
// the activity alphabet. Traces appear in order of first appearance of
// their run_id. Throws when no events survive the filter.
EventLog build_event_log(const std::vector<TrajectoryEvent>& events,
                         const std::set<ActionKind>& filter = default_filter(),
                         bool synthetic_time = false);

// Header "case_id,activity,timestamp,agent,tool"; timestamps ISO-8601 with
// milliseconds, UTC. export_csv followed by parse_csv is lossless.
std::string export_csv(const EventLog& log);
EventLog parse_csv(std::istream& in);

std::string make_activity(const std::string& agent, const std::string& tool);

// Splits "agent::tool" at the first separator; nullopt when absent.
std::optional<std::pair<std::string, std::string>> split_activity(
    const std::string& activity);

}  // namespace varilens::trajlog
