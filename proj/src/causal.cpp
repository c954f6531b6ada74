#include "varilens/causal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "varilens/error.hpp"

namespace varilens::causal {

using ordered_json = nlohmann::ordered_json;

namespace {

// Hyvarinen's maximum-entropy approximation constants.
constexpr double kEntropyK1 = 79.047;
constexpr double kEntropyK2 = 7.4129;
constexpr double kEntropyGamma = 0.37457;
constexpr double kTinyVariance = 1e-12;
constexpr double kRidge = 1e-9;

double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

struct PairSample {
  std::vector<double> a;
  std::vector<double> b;
};

PairSample collect_pair(const std::vector<std::vector<double>>& rows,
                        std::size_t i, std::size_t j) {
  PairSample s;
  for (const auto& row : rows) {
    if (!std::isnan(row[i]) && !std::isnan(row[j])) {
      s.a.push_back(row[i]);
      s.b.push_back(row[j]);
    }
  }
  return s;
}

double mean_of(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

// Population standard deviation, matching the convention of the reference
// implementations this estimator follows.
double std_of(const std::vector<double>& v, double mean) {
  double sum = 0.0;
  for (double x : v) sum += (x - mean) * (x - mean);
  return std::sqrt(sum / static_cast<double>(v.size()));
}

bool standardize(std::vector<double>& v) {
  const double m = mean_of(v);
  const double s = std_of(v, m);
  if (s < kTinyVariance) return false;
  for (double& x : v) x = (x - m) / s;
  return true;
}

// Differential entropy of a standardized sample.
double entropy(const std::vector<double>& u) {
  double mean_log_cosh = 0.0;
  double mean_u_exp = 0.0;
  for (double x : u) {
    mean_log_cosh += std::log(std::cosh(x));
    mean_u_exp += x * std::exp(-0.5 * x * x);
  }
  const double n = static_cast<double>(u.size());
  mean_log_cosh /= n;
  mean_u_exp /= n;
  const double base = (1.0 + std::log(2.0 * M_PI)) / 2.0;
  const double d1 = mean_log_cosh - kEntropyGamma;
  return base - kEntropyK1 * d1 * d1 - kEntropyK2 * mean_u_exp * mean_u_exp;
}

// Log-likelihood-ratio evidence that a is exogenous relative to b, computed
// on a standardized pair subsample. Zero means "no usable evidence".
double pairwise_lr(std::vector<double> a, std::vector<double> b) {
  if (!standardize(a) || !standardize(b)) return 0.0;
  double r = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) r += a[t] * b[t];
  r /= static_cast<double>(a.size());

  std::vector<double> res_ab(a.size());  // a regressed on b
  std::vector<double> res_ba(a.size());  // b regressed on a
  for (std::size_t t = 0; t < a.size(); ++t) {
    res_ab[t] = a[t] - r * b[t];
    res_ba[t] = b[t] - r * a[t];
  }
  if (!standardize(res_ab) || !standardize(res_ba)) return 0.0;
  return (entropy(b) + entropy(res_ab)) - (entropy(a) + entropy(res_ba));
}

double pairwise_correlation(const PairSample& s) {
  std::vector<double> a = s.a;
  std::vector<double> b = s.b;
  if (!standardize(a) || !standardize(b)) return 0.0;
  double r = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) r += a[t] * b[t];
  return r / static_cast<double>(a.size());
}

// Solves (A + ridge*I) x = rhs with partial pivoting. A is small and dense.
std::vector<double> solve_linear(std::vector<std::vector<double>> A,
                                 std::vector<double> rhs) {
  const std::size_t n = rhs.size();
  for (std::size_t i = 0; i < n; ++i) A[i][i] += kRidge;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::fabs(A[r][col]) > std::fabs(A[pivot][col])) pivot = r;
    }
    std::swap(A[col], A[pivot]);
    std::swap(rhs[col], rhs[pivot]);
    if (std::fabs(A[col][col]) < kTinyVariance) continue;
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = A[r][col] / A[col][col];
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) A[r][c] -= f * A[col][c];
      rhs[r] -= f * rhs[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double acc = rhs[i];
    for (std::size_t c = i + 1; c < n; ++c) acc -= A[i][c] * x[c];
    x[i] = std::fabs(A[i][i]) < kTinyVariance ? 0.0 : acc / A[i][i];
  }
  return x;
}

std::size_t column_of(const OccurrenceMatrix& m, const std::string& name) {
  const auto it = std::find(m.activities.begin(), m.activities.end(), name);
  if (it == m.activities.end()) {
    throw analysis_error("activity not present in occurrence matrix: " + name);
  }
  return static_cast<std::size_t>(it - m.activities.begin());
}

}  // namespace

bool OccurrenceMatrix::is_missing(double v) { return std::isnan(v); }

CausalConfig CausalConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open causal config: " + path);
  ordered_json doc;
  try {
    doc = ordered_json::parse(in);
  } catch (const std::exception& e) {
    throw parse_error(std::string("invalid causal config JSON: ") + e.what());
  }
  CausalConfig cfg;
  try {
    cfg.edge_weight_threshold =
        doc.value("edge_weight_threshold", cfg.edge_weight_threshold);
    cfg.precedence_fraction =
        doc.value("precedence_fraction", cfg.precedence_fraction);
    cfg.min_pairwise_traces =
        doc.value("min_pairwise_traces", cfg.min_pairwise_traces);
    cfg.xor_tolerance = doc.value("xor_tolerance", cfg.xor_tolerance);
  } catch (const std::exception& e) {
    throw parse_error(std::string("malformed causal config: ") + e.what());
  }
  return cfg;
}

const char* to_string(GatewayType t) {
  switch (t) {
    case GatewayType::XOR: return "XOR";
    case GatewayType::AND: return "AND";
    case GatewayType::OR: return "OR";
  }
  return "XOR";
}

GatewayType gateway_type_from_string(const std::string& text) {
  if (text == "XOR") return GatewayType::XOR;
  if (text == "AND") return GatewayType::AND;
  if (text == "OR") return GatewayType::OR;
  throw parse_error("unknown gateway type: " + text);
}

std::vector<std::string> CausalDag::successors(
    const std::string& activity) const {
  std::vector<std::string> out;
  for (const auto& e : edges) {
    if (e.cause == activity) out.push_back(e.effect);
  }
  return out;
}

OccurrenceMatrix build_occurrence_matrix(const trajlog::EventLog& log) {
  if (log.synthetic_time) {
    throw analysis_error(
        "causal discovery needs real timestamps; this log carries synthetic "
        "ones assigned at ingestion");
  }
  if (log.traces.empty()) throw analysis_error("event log has no traces");

  OccurrenceMatrix m;
  m.activities.assign(log.activity_alphabet.begin(),
                      log.activity_alphabet.end());
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < m.activities.size(); ++i) {
    col[m.activities[i]] = i;
  }

  for (const auto& trace : log.traces) {
    std::vector<double> row(m.activities.size(), nan_value());
    const std::int64_t origin = trace.events.front().timestamp_ms;
    for (const auto& ev : trace.events) {
      double& cell = row[col.at(ev.activity)];
      if (std::isnan(cell)) {
        cell = static_cast<double>(ev.timestamp_ms - origin) / 1000.0;
      }
    }
    m.trace_ids.push_back(trace.case_id);
    m.rows.push_back(std::move(row));
  }
  return m;
}

std::vector<std::string> discover_causal_order(const OccurrenceMatrix& matrix,
                                               const CausalConfig& config) {
  const std::size_t n_act = matrix.activities.size();
  if (n_act == 0) throw analysis_error("occurrence matrix has no activities");
  if (matrix.rows.size() < n_act + 2) {
    std::ostringstream msg;
    msg << "insufficient traces for causal discovery: have "
        << matrix.rows.size() << ", need at least " << (n_act + 2)
        << " for " << n_act << " activities";
    throw analysis_error(msg.str());
  }

  std::vector<std::vector<double>> X = matrix.rows;
  std::vector<std::size_t> remaining(n_act);
  for (std::size_t i = 0; i < n_act; ++i) remaining[i] = i;

  std::vector<std::string> order;
  order.reserve(n_act);

  while (!remaining.empty()) {
    std::size_t root = remaining.front();
    if (remaining.size() > 1) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i : remaining) {
        double m_score = 0.0;
        for (std::size_t j : remaining) {
          if (i == j) continue;
          const PairSample s = collect_pair(X, i, j);
          if (s.a.size() < config.min_pairwise_traces) continue;
          const double lr = pairwise_lr(s.a, s.b);
          const double v = std::min(0.0, lr);
          m_score += v * v;
        }
        if (m_score < best) {
          best = m_score;
          root = i;
        }
      }
    }

    order.push_back(matrix.activities[root]);

    // Remove the chosen variable's influence from everything still in play.
    for (std::size_t j : remaining) {
      if (j == root) continue;
      const PairSample s = collect_pair(X, root, j);
      if (s.a.size() < config.min_pairwise_traces) continue;
      const double mr = mean_of(s.a);
      const double sr = std_of(s.a, mr);
      if (sr < kTinyVariance) continue;
      const double mj = mean_of(s.b);
      double cov = 0.0;
      for (std::size_t t = 0; t < s.a.size(); ++t) {
        cov += (s.a[t] - mr) * (s.b[t] - mj);
      }
      cov /= static_cast<double>(s.a.size());
      const double beta = cov / (sr * sr);
      for (auto& row : X) {
        if (!std::isnan(row[j]) && !std::isnan(row[root])) {
          row[j] -= beta * row[root];
        }
      }
    }

    remaining.erase(std::find(remaining.begin(), remaining.end(), root));
  }
  return order;
}

CausalDag estimate_edges(const OccurrenceMatrix& matrix,
                         const std::vector<std::string>& order,
                         const CausalConfig& config) {
  CausalDag dag;
  dag.order = order;
  std::vector<std::size_t> cols;
  cols.reserve(order.size());
  for (const auto& name : order) cols.push_back(column_of(matrix, name));

  for (std::size_t k = 1; k < order.size(); ++k) {
    const std::size_t target = cols[k];

    // Predictors need enough joint observations and actual variation.
    std::vector<std::size_t> preds;
    for (std::size_t p = 0; p < k; ++p) {
      const PairSample s = collect_pair(matrix.rows, cols[p], target);
      if (s.a.size() < config.min_pairwise_traces) continue;
      const double ma = mean_of(s.a);
      const double mb = mean_of(s.b);
      if (std_of(s.a, ma) < kTinyVariance) continue;
      if (std_of(s.b, mb) < kTinyVariance) continue;
      preds.push_back(p);
    }
    if (preds.empty()) continue;

    const std::size_t np = preds.size();
    std::vector<std::vector<double>> R(np, std::vector<double>(np, 0.0));
    std::vector<double> c(np, 0.0);
    for (std::size_t a = 0; a < np; ++a) {
      R[a][a] = 1.0;
      c[a] = pairwise_correlation(
          collect_pair(matrix.rows, cols[preds[a]], target));
      for (std::size_t b = a + 1; b < np; ++b) {
        const PairSample s =
            collect_pair(matrix.rows, cols[preds[a]], cols[preds[b]]);
        const double r = s.a.size() < config.min_pairwise_traces
                             ? 0.0
                             : pairwise_correlation(s);
        R[a][b] = r;
        R[b][a] = r;
      }
    }

    const std::vector<double> beta = solve_linear(R, c);
    for (std::size_t a = 0; a < np; ++a) {
      if (std::fabs(beta[a]) < config.edge_weight_threshold) continue;
      const std::size_t cause = cols[preds[a]];
      std::size_t co = 0;
      std::size_t precedes = 0;
      for (const auto& row : matrix.rows) {
        if (std::isnan(row[cause]) || std::isnan(row[target])) continue;
        ++co;
        if (row[cause] < row[target]) ++precedes;
      }
      if (co == 0) continue;
      const double frac =
          static_cast<double>(precedes) / static_cast<double>(co);
      if (frac < config.precedence_fraction) continue;
      dag.edges.push_back(CausalEdge{order[preds[a]], order[k], beta[a],
                                     precedes});
    }
  }
  return dag;
}

std::vector<Gateway> detect_gateways(const CausalDag& dag,
                                     const trajlog::EventLog& log,
                                     const CausalConfig& config) {
  std::vector<Gateway> out;
  std::size_t n_xor = 0;
  std::size_t n_and = 0;
  std::size_t n_or = 0;

  for (const auto& source : dag.order) {
    const std::vector<std::string> succ = dag.successors(source);
    if (succ.size() < 2) continue;

    std::map<std::string, std::size_t> follow_count;
    std::map<std::string, std::size_t> exclusive_count;
    for (const auto& s : succ) {
      follow_count[s] = 0;
      exclusive_count[s] = 0;
    }
    std::size_t traversing = 0;
    std::size_t n_single = 0;
    std::size_t n_all = 0;

    for (const auto& trace : log.traces) {
      std::size_t pos = trace.events.size();
      for (std::size_t i = 0; i < trace.events.size(); ++i) {
        if (trace.events[i].activity == source) {
          pos = i;
          break;
        }
      }
      if (pos == trace.events.size()) continue;

      std::vector<std::string> followed;
      for (const auto& s : succ) {
        for (std::size_t i = pos + 1; i < trace.events.size(); ++i) {
          if (trace.events[i].activity == s) {
            followed.push_back(s);
            break;
          }
        }
      }
      if (followed.empty()) continue;
      ++traversing;
      for (const auto& f : followed) ++follow_count[f];
      if (followed.size() == 1) {
        ++n_single;
        ++exclusive_count[followed.front()];
      }
      if (followed.size() == succ.size()) ++n_all;
    }
    if (traversing == 0) continue;

    const double frac_single =
        static_cast<double>(n_single) / static_cast<double>(traversing);
    const double frac_all =
        static_cast<double>(n_all) / static_cast<double>(traversing);

    Gateway gw;
    gw.source = source;
    gw.traversing_runs = traversing;
    if (frac_single >= 1.0 - config.xor_tolerance) {
      gw.gtype = GatewayType::XOR;
      gw.id = "XOR_" + std::to_string(n_xor++);
    } else if (frac_all >= 1.0 - config.xor_tolerance) {
      gw.gtype = GatewayType::AND;
      gw.id = "AND_" + std::to_string(n_and++);
    } else {
      gw.gtype = GatewayType::OR;
      gw.id = "OR_" + std::to_string(n_or++);
    }

    for (const auto& s : succ) {
      GatewayBranch b;
      b.target = s;
      b.count = follow_count[s];
      if (gw.gtype == GatewayType::XOR) {
        // Proportions come from the unambiguous runs, so they sum to one.
        b.proportion = n_single == 0
                           ? 0.0
                           : static_cast<double>(exclusive_count[s]) /
                                 static_cast<double>(n_single);
      } else {
        b.proportion = static_cast<double>(follow_count[s]) /
                       static_cast<double>(traversing);
      }
      gw.branches.push_back(std::move(b));
    }
    std::sort(gw.branches.begin(), gw.branches.end(),
              [](const GatewayBranch& a, const GatewayBranch& b) {
                if (a.count != b.count) return a.count > b.count;
                return a.target < b.target;
              });
    out.push_back(std::move(gw));
  }
  return out;
}

CausalModel discover(const trajlog::EventLog& log, const CausalConfig& config) {
  const OccurrenceMatrix matrix = build_occurrence_matrix(log);
  CausalModel model;
  model.config = config;
  model.log_traces = log.traces.size();
  model.log_activities = log.activity_alphabet.size();
  const std::vector<std::string> order = discover_causal_order(matrix, config);
  model.dag = estimate_edges(matrix, order, config);
  model.gateways = detect_gateways(model.dag, log, config);
  return model;
}

namespace {

std::string dot_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string trim_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::string to_dot(const CausalModel& model) {
  std::ostringstream os;
  os << "digraph causal_model {\n";
  os << "  rankdir=LR;\n";
  os << "  node [fontname=\"Helvetica\"];\n";

  std::map<std::string, std::vector<std::string>> by_agent;
  std::vector<std::string> ungrouped;
  for (const auto& act : model.dag.order) {
    if (const auto parts = trajlog::split_activity(act)) {
      by_agent[parts->first].push_back(act);
    } else {
      ungrouped.push_back(act);
    }
  }
  std::size_t cluster = 0;
  for (auto& [agent, acts] : by_agent) {
    std::sort(acts.begin(), acts.end());
    os << "  subgraph cluster_" << cluster++ << " {\n";
    os << "    label=" << dot_quote(agent) << ";\n";
    for (const auto& a : acts) {
      os << "    " << dot_quote(a) << " [shape=box];\n";
    }
    os << "  }\n";
  }
  std::sort(ungrouped.begin(), ungrouped.end());
  for (const auto& a : ungrouped) {
    os << "  " << dot_quote(a) << " [shape=box];\n";
  }

  std::map<std::string, const Gateway*> gateway_by_source;
  for (const auto& gw : model.gateways) gateway_by_source[gw.source] = &gw;

  for (const auto& gw : model.gateways) {
    os << "  " << dot_quote(gw.id) << " [shape=diamond, label="
       << dot_quote(std::string(to_string(gw.gtype))) << "];\n";
  }
  for (const auto& gw : model.gateways) {
    os << "  " << dot_quote(gw.source) << " -> " << dot_quote(gw.id) << ";\n";
    for (const auto& b : gw.branches) {
      os << "  " << dot_quote(gw.id) << " -> " << dot_quote(b.target)
         << " [label=\"" << trim_number(b.proportion) << " | " << b.count
         << "\"];\n";
    }
  }
  for (const auto& e : model.dag.edges) {
    if (gateway_by_source.count(e.cause) != 0) continue;
    os << "  " << dot_quote(e.cause) << " -> " << dot_quote(e.effect)
       << " [label=\"" << trim_number(e.weight) << "\"];\n";
  }
  os << "}\n";
  return os.str();
}

std::string to_json(const CausalModel& model) {
  ordered_json doc;
  doc["schema_version"] = "1";
  doc["log"] = {{"traces", model.log_traces},
                {"activities", model.log_activities}};
  doc["config"] = {
      {"edge_weight_threshold", model.config.edge_weight_threshold},
      {"precedence_fraction", model.config.precedence_fraction},
      {"min_pairwise_traces", model.config.min_pairwise_traces},
      {"xor_tolerance", model.config.xor_tolerance}};
  doc["causal_order"] = model.dag.order;
  ordered_json edges = ordered_json::array();
  for (const auto& e : model.dag.edges) {
    edges.push_back({{"cause", e.cause},
                     {"effect", e.effect},
                     {"weight", e.weight},
                     {"support", e.support}});
  }
  doc["edges"] = std::move(edges);
  ordered_json gws = ordered_json::array();
  for (const auto& gw : model.gateways) {
    ordered_json branches = ordered_json::array();
    for (const auto& b : gw.branches) {
      branches.push_back({{"target", b.target},
                          {"count", b.count},
                          {"proportion", b.proportion}});
    }
    gws.push_back({{"id", gw.id},
                   {"type", to_string(gw.gtype)},
                   {"source", gw.source},
                   {"traversing_runs", gw.traversing_runs},
                   {"branches", std::move(branches)}});
  }
  doc["gateways"] = std::move(gws);
  return doc.dump(2) + "\n";
}

CausalModel model_from_json(const std::string& text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw parse_error(std::string("invalid causal model JSON: ") + e.what());
  }
  try {
    if (doc.at("schema_version").get<std::string>() != "1") {
      throw parse_error("unsupported causal model schema_version");
    }
    CausalModel model;
    model.log_traces = doc.at("log").at("traces").get<std::size_t>();
    model.log_activities = doc.at("log").at("activities").get<std::size_t>();
    const auto& cfg = doc.at("config");
    model.config.edge_weight_threshold =
        cfg.at("edge_weight_threshold").get<double>();
    model.config.precedence_fraction =
        cfg.at("precedence_fraction").get<double>();
    model.config.min_pairwise_traces =
        cfg.at("min_pairwise_traces").get<std::size_t>();
    model.config.xor_tolerance = cfg.at("xor_tolerance").get<double>();
    model.dag.order = doc.at("causal_order").get<std::vector<std::string>>();
    for (const auto& e : doc.at("edges")) {
      model.dag.edges.push_back(CausalEdge{
          e.at("cause").get<std::string>(), e.at("effect").get<std::string>(),
          e.at("weight").get<double>(), e.at("support").get<std::size_t>()});
    }
    for (const auto& g : doc.at("gateways")) {
      Gateway gw;
      gw.id = g.at("id").get<std::string>();
      gw.gtype = gateway_type_from_string(g.at("type").get<std::string>());
      gw.source = g.at("source").get<std::string>();
      gw.traversing_runs = g.at("traversing_runs").get<std::size_t>();
      for (const auto& b : g.at("branches")) {
        gw.branches.push_back(GatewayBranch{b.at("target").get<std::string>(),
                                            b.at("count").get<std::size_t>(),
                                            b.at("proportion").get<double>()});
      }
      model.gateways.push_back(std::move(gw));
    }
    return model;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw parse_error(std::string("malformed causal model: ") + e.what());
  }
}

CausalModel model_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open causal model file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return model_from_json(buf.str());
}

}  // namespace varilens::causal
