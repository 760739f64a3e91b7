#include "numerla/persist.hpp"

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "numerla/errors.hpp"

namespace numerla::persist {

using nlohmann::json;

std::string double_to_hex(double v) {
  uint64_t bits = std::bit_cast<uint64_t>(v);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(bits));
  return std::string(buf);
}

double hex_to_double(const std::string& s) {
  if (s.size() != 16 || s.find_first_not_of("0123456789abcdefABCDEF") !=
                            std::string::npos) {
    throw IoError("bad double bit pattern: '" + s + "'");
  }
  uint64_t bits = std::stoull(s, nullptr, 16);
  return std::bit_cast<double>(bits);
}

void atomic_write_file(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  fs::path target(path);
  fs::path dir = target.parent_path();
  if (!dir.empty()) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string());
  }
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename " + tmp.string() + " to " + path);
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (!in.good() && !in.eof()) throw IoError("read failure on " + path);
  return ss.str();
}

namespace {

json parse_json(const std::string& text, const std::string& what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw IoError("malformed JSON in " + what);
  return j;
}

void expect_kind(const json& j, const std::string& kind,
                 const std::string& path) {
  if (!j.is_object() || j.value("kind", "") != kind) {
    throw IoError(path + " is not a " + kind + " file");
  }
  if (j.value("format_version", 0) != 1) {
    throw IoError(path + ": unsupported format_version");
  }
}

json doubles_to_json(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(double_to_hex(x));
  return a;
}

std::vector<double> doubles_from_json(const json& a) {
  std::vector<double> v;
  v.reserve(a.size());
  for (const auto& x : a) v.push_back(hex_to_double(x.get<std::string>()));
  return v;
}

json obs_to_json(const env::Observation& o) {
  json a = json::array();
  for (double x : o.v) a.push_back(double_to_hex(x));
  return a;
}

env::Observation obs_from_json(const json& a) {
  if (a.size() != static_cast<size_t>(env::Observation::kDim)) {
    throw IoError("observation entry has wrong dimension");
  }
  env::Observation o;
  for (int i = 0; i < env::Observation::kDim; ++i) {
    o.v[i] = hex_to_double(a[i].get<std::string>());
  }
  return o;
}

json predicate_to_json(const ssc::Predicate& p) {
  json terms = json::array();
  for (const ssc::LinearTerm& t : p.terms) {
    terms.push_back({{"w", doubles_to_json(t.w)}, {"c", double_to_hex(t.c)}});
  }
  return {{"dim", p.dim}, {"terms", terms}};
}

ssc::Predicate predicate_from_json(const json& j) {
  ssc::Predicate p;
  p.dim = j.at("dim").get<int>();
  for (const auto& tj : j.at("terms")) {
    ssc::LinearTerm t;
    t.w = doubles_from_json(tj.at("w"));
    t.c = hex_to_double(tj.at("c").get<std::string>());
    p.terms.push_back(std::move(t));
  }
  return p;
}

json constraints_to_json(const ssc::ConstraintSet& cs) {
  json rules = json::array();
  for (const ssc::Rule& r : cs.rules) {
    rules.push_back(
        {{"guard", predicate_to_json(r.guard)}, {"allowed", r.allowed}});
  }
  return {{"rules", rules}};
}

ssc::ConstraintSet constraints_from_json(const json& j) {
  ssc::ConstraintSet cs;
  for (const auto& rj : j.at("rules")) {
    ssc::Rule r;
    r.guard = predicate_from_json(rj.at("guard"));
    r.allowed = rj.at("allowed").get<std::vector<int>>();
    cs.rules.push_back(std::move(r));
  }
  return cs;
}

}  // namespace

void save_checkpoint(const std::string& path, const policy::PolicyParams& p,
                     const std::string& seed_lineage) {
  p.validate();
  json j = {{"kind", "checkpoint"},
            {"format_version", 1},
            {"arch",
             {{"input", p.arch.input_dim},
              {"hidden", p.arch.hidden},
              {"actions", p.arch.n_actions}}},
            {"d", p.theta.size()},
            {"version", p.version},
            {"seed_lineage", seed_lineage},
            {"theta", doubles_to_json(p.theta)}};
  atomic_write_file(path, j.dump(1) + "\n");
}

policy::PolicyParams load_checkpoint(const std::string& path) {
  json j = parse_json(read_file(path), path);
  expect_kind(j, "checkpoint", path);
  try {
    policy::PolicyParams p;
    p.arch.input_dim = j.at("arch").at("input").get<int>();
    p.arch.hidden = j.at("arch").at("hidden").get<int>();
    p.arch.n_actions = j.at("arch").at("actions").get<int>();
    p.version = j.at("version").get<std::string>();
    p.theta = doubles_from_json(j.at("theta"));
    if (p.theta.size() != j.at("d").get<size_t>()) {
      throw IoError(path + ": parameter count does not match d");
    }
    p.validate();
    return p;
  } catch (const json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
}

void save_bank(const std::string& path, const cola::SampleBank& bank) {
  bank.validate();
  json buckets = json::object();
  for (const auto& [id, bucket] : bank.buckets) {
    json arr = json::array();
    for (const cola::LookaheadSample& s : bucket) {
      json states = json::array();
      for (const env::Observation& o : s.states) states.push_back(obs_to_json(o));
      arr.push_back({{"n", s.n},
                     {"padded", s.padded},
                     {"states", states},
                     {"actions", s.actions},
                     {"rewards", doubles_to_json(s.rewards)},
                     {"behavior_logp", doubles_to_json(s.behavior_logp)}});
    }
    buckets[id] = std::move(arr);
  }
  json j = {{"kind", "bank"},
            {"format_version", 1},
            {"K", bank.K},
            {"policy_version", bank.policy_version},
            {"buckets", buckets}};
  atomic_write_file(path, j.dump() + "\n");
}

cola::SampleBank load_bank(const std::string& path) {
  json j = parse_json(read_file(path), path);
  expect_kind(j, "bank", path);
  try {
    cola::SampleBank bank;
    bank.K = j.at("K").get<int>();
    bank.policy_version = j.at("policy_version").get<std::string>();
    for (const auto& [id, arr] : j.at("buckets").items()) {
      auto& bucket = bank.buckets[id];
      for (const auto& sj : arr) {
        cola::LookaheadSample s;
        s.mode_id = id;
        s.policy_version = bank.policy_version;
        s.n = sj.at("n").get<int>();
        s.padded = sj.at("padded").get<bool>();
        for (const auto& oj : sj.at("states")) {
          s.states.push_back(obs_from_json(oj));
        }
        s.actions = sj.at("actions").get<std::vector<int>>();
        s.rewards = doubles_from_json(sj.at("rewards"));
        s.behavior_logp = doubles_from_json(sj.at("behavior_logp"));
        bucket.push_back(std::move(s));
      }
    }
    bank.validate();
    return bank;
  } catch (const json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
}

void save_knowledge(const std::string& path, const ssc::SSCFunction& f) {
  f.validate();
  json cases = json::array();
  for (const ssc::SscCase& c : f.cases) {
    cases.push_back({{"predicate", predicate_to_json(c.predicate)},
                     {"constraints", constraints_to_json(c.constraints)}});
  }
  json j = {{"kind", "knowledge"},
            {"format_version", 1},
            {"version", f.version},
            {"feature_dim", f.feature_dim},
            {"cases", cases}};
  atomic_write_file(path, j.dump(1) + "\n");
}

ssc::SSCFunction load_knowledge(const std::string& path) {
  json j = parse_json(read_file(path), path);
  expect_kind(j, "knowledge", path);
  try {
    ssc::SSCFunction f;
    f.version = j.at("version").get<int>();
    f.feature_dim = j.at("feature_dim").get<int>();
    for (const auto& cj : j.at("cases")) {
      ssc::SscCase c;
      c.predicate = predicate_from_json(cj.at("predicate"));
      c.constraints = constraints_from_json(cj.at("constraints"));
      f.cases.push_back(std::move(c));
    }
    f.validate();
    return f;
  } catch (const json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
}

void save_metrics(const std::string& path,
                  const harness::MetricsSummary& summary) {
  json cells = json::array();
  for (const harness::CellMetrics& c : summary.cells) {
    cells.push_back({{"method", harness::to_string(c.key.method)},
                     {"scenario", harness::to_string(c.key.scenario)},
                     {"gap", double_to_hex(c.key.gap)},
                     {"episodes", c.episodes},
                     {"failures", c.failures},
                     {"mean_reward", double_to_hex(c.mean_reward)},
                     {"std_reward", double_to_hex(c.std_reward)},
                     {"low_n", c.low_n},
                     {"collision_rate", double_to_hex(c.collision_rate)},
                     {"shield_interventions", c.shield_interventions},
                     {"shield_fallbacks", c.shield_fallbacks},
                     {"shield_mask_violations", c.shield_mask_violations}});
  }
  json j = {{"kind", "metrics"}, {"format_version", 1}, {"cells", cells}};
  atomic_write_file(path, j.dump(1) + "\n");
}

harness::MetricsSummary load_metrics(const std::string& path) {
  json j = parse_json(read_file(path), path);
  expect_kind(j, "metrics", path);
  try {
    harness::MetricsSummary summary;
    for (const auto& cj : j.at("cells")) {
      harness::CellMetrics c;
      c.key.method =
          harness::method_from_string(cj.at("method").get<std::string>());
      c.key.scenario =
          harness::scenario_from_string(cj.at("scenario").get<std::string>());
      c.key.gap = hex_to_double(cj.at("gap").get<std::string>());
      c.episodes = cj.at("episodes").get<int>();
      c.failures = cj.at("failures").get<int>();
      c.mean_reward = hex_to_double(cj.at("mean_reward").get<std::string>());
      c.std_reward = hex_to_double(cj.at("std_reward").get<std::string>());
      c.low_n = cj.at("low_n").get<bool>();
      c.collision_rate =
          hex_to_double(cj.at("collision_rate").get<std::string>());
      c.shield_interventions = cj.at("shield_interventions").get<long>();
      c.shield_fallbacks = cj.at("shield_fallbacks").get<long>();
      c.shield_mask_violations = cj.at("shield_mask_violations").get<long>();
      summary.cells.push_back(c);
    }
    return summary;
  } catch (const json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
}

namespace {

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

std::string metrics_csv(const harness::MetricsSummary& summary) {
  std::ostringstream out;
  out << "method,scenario,gap,episodes,failures,mean_reward,std_reward,"
         "collision_rate,shield_interventions,shield_fallbacks,"
         "shield_mask_violations\n";
  for (const harness::CellMetrics& c : summary.cells) {
    out << harness::to_string(c.key.method) << ','
        << harness::to_string(c.key.scenario) << ',' << fmt_g(c.key.gap) << ','
        << c.episodes << ',' << c.failures << ',' << fmt_g(c.mean_reward) << ','
        << fmt_g(c.std_reward) << ',' << fmt_g(c.collision_rate) << ','
        << c.shield_interventions << ',' << c.shield_fallbacks << ','
        << c.shield_mask_violations << '\n';
  }
  return out.str();
}

std::string episodes_csv(const harness::ExperimentResult& result) {
  std::ostringstream out;
  out << "method,scenario,gap,seed,return,collided,steps,done_reason,"
         "adaptations_attempted,adaptations_accepted,shield_interventions,"
         "shield_fallbacks,shield_mask_violations,belief_degenerate_updates,"
         "final_belief_truth\n";
  for (size_t i = 0; i < result.episodes.size(); ++i) {
    const harness::EpisodeRecord& r = result.episodes[i];
    const harness::CellKey& k = result.episode_cells[i];
    out << harness::to_string(k.method) << ',' << harness::to_string(k.scenario)
        << ',' << fmt_g(k.gap) << ',' << r.seed << ',' << fmt_g(r.ret) << ','
        << (r.collided ? 1 : 0) << ',' << r.steps << ','
        << env::to_string(r.done_reason) << ',' << r.adaptations_attempted
        << ',' << r.adaptations_accepted << ',' << r.shield_interventions << ','
        << r.shield_fallbacks << ',' << r.shield_mask_violations << ','
        << r.belief_degenerate_updates << ',' << fmt_g(r.final_belief_truth)
        << '\n';
  }
  return out.str();
}

std::string long_csv(const harness::ExperimentResult& result) {
  std::ostringstream out;
  out << "method,scenario,gap,metric,value\n";
  for (const harness::CellMetrics& c : result.summary.cells) {
    auto row = [&](const char* metric, double value) {
      out << harness::to_string(c.key.method) << ','
          << harness::to_string(c.key.scenario) << ',' << fmt_g(c.key.gap)
          << ',' << metric << ',' << fmt_g(value) << '\n';
    };
    row("mean_reward", c.mean_reward);
    row("std_reward", c.std_reward);
    row("collision_rate", c.collision_rate);
    row("episodes", c.episodes);
    row("failures", c.failures);
  }
  return out.str();
}

}  // namespace numerla::persist
