#include "varilens/trajlog.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "varilens/error.hpp"
#include "varilens/timeutil.hpp"

namespace varilens::trajlog {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr const char* kActivitySeparator = "::";

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

// RFC-4180 style row split, enough for our own exporter's output.
std::vector<std::string> csv_split(const std::string& line, std::size_t lineno) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      if (!cur.empty()) throw parse_error_at(lineno, "stray quote in CSV field");
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw parse_error_at(lineno, "unterminated quoted CSV field");
  fields.push_back(cur);
  return fields;
}

std::string require_string(const ordered_json& record, const char* key,
                           std::size_t lineno) {
  auto it = record.find(key);
  if (it == record.end())
    throw field_error_at(lineno, std::string("missing required field '") + key + "'");
  if (!it->is_string())
    throw field_error_at(lineno, std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

}  // namespace

const char* to_string(ActionKind kind) {
  switch (kind) {
    case ActionKind::tool_invocation: return "tool_invocation";
    case ActionKind::delegation: return "delegation";
    case ActionKind::llm_call: return "llm_call";
    case ActionKind::other: return "other";
  }
  return "other";
}

ActionKind action_kind_from_string(const std::string& text) {
  if (text == "tool_invocation") return ActionKind::tool_invocation;
  if (text == "delegation") return ActionKind::delegation;
  if (text == "llm_call") return ActionKind::llm_call;
  if (text == "other") return ActionKind::other;
  throw parse_error("unknown action_kind '" + text + "'");
}

std::size_t EventLog::total_events() const {
  std::size_t n = 0;
  for (const auto& t : traces) n += t.events.size();
  return n;
}

std::string make_activity(const std::string& agent, const std::string& tool) {
  return agent + kActivitySeparator + tool;
}

std::optional<std::pair<std::string, std::string>> split_activity(
    const std::string& activity) {
  auto pos = activity.find(kActivitySeparator);
  if (pos == std::string::npos) return std::nullopt;
  return std::make_pair(activity.substr(0, pos), activity.substr(pos + 2));
}

std::vector<TrajectoryEvent> parse_jsonl(std::istream& in) {
  std::vector<TrajectoryEvent> events;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    ordered_json record = ordered_json::parse(line, nullptr, false);
    if (record.is_discarded() || !record.is_object())
      throw parse_error_at(lineno, "malformed record");

    TrajectoryEvent ev;
    ev.run_id = require_string(record, "run_id", lineno);
    ev.seq = events.size();
    try {
      ev.timestamp_ms = timeutil::parse_iso8601_ms(require_string(record, "timestamp", lineno));
    } catch (const Error& e) {
      throw field_error_at(lineno, e.what());
    }
    ev.agent = require_string(record, "agent", lineno);
    if (ev.agent.empty()) throw field_error_at(lineno, "agent must be non-empty");
    try {
      ev.action_kind = action_kind_from_string(require_string(record, "action_kind", lineno));
    } catch (const Error& e) {
      throw field_error_at(lineno, e.what());
    }
    if (auto it = record.find("tool"); it != record.end() && !it->is_null()) {
      if (!it->is_string()) throw field_error_at(lineno, "field 'tool' must be a string");
      ev.tool = it->get<std::string>();
      if (ev.tool->empty()) throw field_error_at(lineno, "tool must be non-empty when present");
    }
    if (ev.action_kind == ActionKind::tool_invocation && !ev.tool)
      throw field_error_at(lineno, "tool_invocation requires field 'tool'");
    if (auto it = record.find("payload"); it != record.end() && !it->is_null()) {
      if (!it->is_string()) throw field_error_at(lineno, "field 'payload' must be a string");
      ev.payload = it->get<std::string>();
    }
    events.push_back(std::move(ev));
  }
  return events;
}

std::string to_jsonl(const std::vector<TrajectoryEvent>& events) {
  std::string out;
  for (const auto& ev : events) {
    ordered_json record;
    record["run_id"] = ev.run_id;
    record["timestamp"] = timeutil::format_iso8601_ms(ev.timestamp_ms);
    record["agent"] = ev.agent;
    record["action_kind"] = to_string(ev.action_kind);
    if (ev.tool) record["tool"] = *ev.tool;
    if (ev.payload) record["payload"] = *ev.payload;
    out += record.dump();
    out += '\n';
  }
  return out;
}

TextAdapterConfig TextAdapterConfig::from_json(const std::string& text) {
  ordered_json j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw parse_error("adapter config is not a JSON object");
  TextAdapterConfig config;
  if (!j.contains("agent_header") || !j["agent_header"].is_string())
    throw parse_error("adapter config requires string pattern 'agent_header'");
  if (!j.contains("tool_line") || !j["tool_line"].is_string())
    throw parse_error("adapter config requires string pattern 'tool_line'");
  config.agent_header = j["agent_header"].get<std::string>();
  config.tool_line = j["tool_line"].get<std::string>();
  if (j.contains("timestamp") && !j["timestamp"].is_null()) {
    if (!j["timestamp"].is_string())
      throw parse_error("adapter config 'timestamp' must be a string pattern");
    config.timestamp = j["timestamp"].get<std::string>();
  }
  return config;
}

TextAdapterConfig TextAdapterConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open adapter config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

TextParseResult parse_agent_text_log(const std::string& text,
                                     const TextAdapterConfig& config,
                                     const std::string& run_id) {
  std::regex agent_re, tool_re, ts_re;
  try {
    agent_re = std::regex(config.agent_header);
    tool_re = std::regex(config.tool_line);
    if (!config.timestamp.empty()) ts_re = std::regex(config.timestamp);
  } catch (const std::regex_error& e) {
    throw parse_error(std::string("bad adapter pattern: ") + e.what());
  }
  const bool synthetic = config.timestamp.empty();

  TextParseResult result;
  result.synthetic_time = synthetic;

  std::string current_agent;
  std::optional<std::int64_t> current_ts;
  std::size_t lineno = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::smatch m;
    if (!synthetic && std::regex_search(line, m, ts_re) && m.size() > 1) {
      try {
        current_ts = timeutil::parse_iso8601_ms(m[1].str());
      } catch (const Error& e) {
        throw parse_error_at(lineno, e.what());
      }
    }
    if (std::regex_search(line, m, agent_re) && m.size() > 1) {
      current_agent = m[1].str();
      continue;
    }
    if (std::regex_search(line, m, tool_re) && m.size() > 1) {
      if (current_agent.empty())
        throw parse_error_at(lineno, "tool line before any agent context");
      TrajectoryEvent ev;
      ev.run_id = run_id;
      ev.seq = result.events.size();
      if (synthetic) {
        ev.timestamp_ms = static_cast<std::int64_t>(result.events.size());
      } else {
        if (!current_ts)
          throw parse_error_at(lineno, "tool line before any timestamp");
        ev.timestamp_ms = *current_ts;
      }
      ev.agent = current_agent;
      ev.action_kind = ActionKind::tool_invocation;
      ev.tool = m[1].str();
      if (m.size() > 2 && m[2].matched) ev.payload = m[2].str();
      result.events.push_back(std::move(ev));
    }
  }
  return result;
}

std::set<ActionKind> default_filter() {
  return {ActionKind::tool_invocation};
}

EventLog build_event_log(const std::vector<TrajectoryEvent>& events,
                         const std::set<ActionKind>& filter,
                         bool synthetic_time) {
  EventLog log;
  log.synthetic_time = synthetic_time;

  std::vector<std::string> case_order;
  std::map<std::string, std::vector<const TrajectoryEvent*>> by_case;
  for (const auto& ev : events) {
    if (!filter.count(ev.action_kind)) continue;
    if (ev.agent.empty() || !ev.tool || ev.tool->empty())
      throw analysis_error("retained event in run '" + ev.run_id +
                           "' lacks agent or tool");
    if (!by_case.count(ev.run_id)) case_order.push_back(ev.run_id);
    by_case[ev.run_id].push_back(&ev);
  }
  if (case_order.empty()) throw analysis_error("no events retained: empty log");

  for (const auto& case_id : case_order) {
    auto& ptrs = by_case[case_id];
    std::sort(ptrs.begin(), ptrs.end(),
              [](const TrajectoryEvent* a, const TrajectoryEvent* b) {
                if (a->timestamp_ms != b->timestamp_ms)
                  return a->timestamp_ms < b->timestamp_ms;
                return a->seq < b->seq;
              });
    Trace trace;
    trace.case_id = case_id;
    trace.events.reserve(ptrs.size());
    for (const TrajectoryEvent* ev : ptrs) {
      TraceEvent te;
      te.activity = make_activity(ev->agent, *ev->tool);
      te.timestamp_ms = ev->timestamp_ms;
      te.agent = ev->agent;
      te.tool = *ev->tool;
      log.activity_alphabet.insert(te.activity);
      trace.events.push_back(std::move(te));
    }
    log.traces.push_back(std::move(trace));
  }
  return log;
}

std::string export_csv(const EventLog& log) {
  std::string out = "case_id,activity,timestamp,agent,tool\n";
  for (const auto& trace : log.traces) {
    for (const auto& ev : trace.events) {
      out += csv_escape(trace.case_id);
      out += ',';
      out += csv_escape(ev.activity);
      out += ',';
      out += timeutil::format_iso8601_ms(ev.timestamp_ms);
      out += ',';
      out += csv_escape(ev.agent);
      out += ',';
      out += csv_escape(ev.tool);
      out += '\n';
    }
  }
  return out;
}

EventLog parse_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw parse_error("empty CSV input");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "case_id,activity,timestamp,agent,tool")
    throw parse_error_at(lineno, "unexpected CSV header '" + line + "'");

  EventLog log;
  std::vector<std::string> case_order;
  std::map<std::string, Trace> by_case;
  // Synthetic timestamps are epoch-based by construction; a log whose every
  // instant falls within the first epoch day is treated as synthetic.
  bool all_epoch_era = true;
  bool any_row = false;

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = csv_split(line, lineno);
    if (fields.size() != 5)
      throw parse_error_at(lineno, "expected 5 CSV fields, got " +
                                       std::to_string(fields.size()));
    TraceEvent ev;
    ev.activity = fields[1];
    try {
      ev.timestamp_ms = timeutil::parse_iso8601_ms(fields[2]);
    } catch (const Error& e) {
      throw parse_error_at(lineno, e.what());
    }
    ev.agent = fields[3];
    ev.tool = fields[4];
    if (ev.timestamp_ms >= 86400000 || ev.timestamp_ms < 0) all_epoch_era = false;
    any_row = true;

    const std::string& case_id = fields[0];
    if (!by_case.count(case_id)) {
      case_order.push_back(case_id);
      by_case[case_id].case_id = case_id;
    }
    log.activity_alphabet.insert(ev.activity);
    by_case[case_id].events.push_back(std::move(ev));
  }
  if (!any_row) throw analysis_error("CSV contains no event rows: empty log");

  for (const auto& case_id : case_order) {
    auto& trace = by_case[case_id];
    std::stable_sort(trace.events.begin(), trace.events.end(),
                     [](const TraceEvent& a, const TraceEvent& b) {
                       return a.timestamp_ms < b.timestamp_ms;
                     });
    log.traces.push_back(std::move(trace));
  }
  log.synthetic_time = all_epoch_era;
  return log;
}

}  // namespace varilens::trajlog
