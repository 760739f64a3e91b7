#include "numerla/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"
#include "numerla/errors.hpp"
#include "numerla/persist.hpp"

namespace numerla::config {

using nlohmann::json;

namespace {

// Pulls known keys out of a section and rejects anything left over, so a
// typo like "dt_" fails loudly instead of silently using the default.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) {
        throw ConfigError("unknown config key '" + path_ + "." + key + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

env::Mode parse_mode(const json& j, const std::string& path) {
  Section s(j, path);
  env::Mode m;
  s.get("id", m.id);
  std::string behavior = "compliant";
  s.get("behavior", behavior);
  if (behavior == "compliant") {
    m.behavior = env::Behavior::Compliant;
  } else if (behavior == "jaywalk") {
    m.behavior = env::Behavior::Jaywalk;
  } else {
    throw ConfigError(path + ".behavior: expected 'compliant' or 'jaywalk'");
  }
  s.get("yellow_go_prob", m.yellow_go_prob);
  s.get("jaywalk_start_min", m.jaywalk_start_min);
  s.get("jaywalk_start_max", m.jaywalk_start_max);
  s.get("feature_overrides", m.feature_overrides);
  s.finish();
  m.validate();
  return m;
}

json mode_to_json(const env::Mode& m) {
  return {{"id", m.id},
          {"behavior", m.behavior == env::Behavior::Compliant ? "compliant"
                                                              : "jaywalk"},
          {"yellow_go_prob", m.yellow_go_prob},
          {"jaywalk_start_min", m.jaywalk_start_min},
          {"jaywalk_start_max", m.jaywalk_start_max},
          {"feature_overrides", m.feature_overrides}};
}

std::vector<env::Mode> parse_modes(const json& arr, const std::string& path) {
  if (!arr.is_array()) throw ConfigError(path + " must be an array");
  std::vector<env::Mode> modes;
  for (size_t i = 0; i < arr.size(); ++i) {
    modes.push_back(parse_mode(arr[i], path + "[" + std::to_string(i) + "]"));
  }
  return modes;
}

void apply_override(json& root, const std::string& text) {
  size_t eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like section.key=value: '" + text +
                      "'");
  }
  std::string path = text.substr(0, eq);
  std::string value = text.substr(eq + 1);

  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = value;  // bare strings stay strings

  json* node = &root;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("empty path segment in '" + text + "'");
    parts.push_back(part);
  }
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    node = &(*node)[parts[i]];
    if (!node->is_object() && !node->is_null()) {
      throw ConfigError("override path '" + path +
                        "' descends into a non-object");
    }
  }
  (*node)[parts.back()] = parsed;
}

}  // namespace

belief::ModeTransitionModel FileConfig::belief_model() const {
  belief::ModeTransitionModel model;
  model.modes = modes;
  model.p_z = p_z;
  model.rho_z = rho_z;
  model.validate();
  return model;
}

policy::TrainSetup FileConfig::train_setup() const {
  policy::TrainSetup setup;
  setup.sim = sim;
  setup.modes = modes;
  setup.rho = rho_z;
  setup.gaps = train_gaps;
  return setup;
}

void FileConfig::validate() const {
  sim.validate();
  if (modes.empty()) throw ConfigError("config needs at least one mode");
  std::set<std::string> ids;
  for (const env::Mode& m : modes) {
    m.validate();
    if (!ids.insert(m.id).second) {
      throw ConfigError("duplicate mode id '" + m.id + "'");
    }
  }
  belief_model();  // validates rho_z and p_z against modes
  if (belief_window <= 0) throw ConfigError("belief.window must be positive");
  if (train.episodes < 0) throw ConfigError("train.episodes must be >= 0");
  if (train.lr < 0) throw ConfigError("train.lr must be >= 0");
  if (train.gamma <= 0 || train.gamma > 1) {
    throw ConfigError("train.gamma must be in (0, 1]");
  }
  if (train_gaps.empty()) throw ConfigError("train.gaps must be non-empty");
  for (double g : train_gaps) {
    if (g <= 0) throw ConfigError("train.gaps entries must be positive");
  }
  if (bank.K <= 0) throw ConfigError("bank.K must be positive");
  if (bank.episodes_per_mode < 0) {
    throw ConfigError("bank.episodes_per_mode must be >= 0");
  }
  if (bank.gaps.empty()) throw ConfigError("bank.gaps must be non-empty");
  if (assessor.horizon <= 0) throw ConfigError("shield.horizon must be positive");
  if (assessor.d_safe < 0) throw ConfigError("shield.d_safe must be >= 0");
  if (shield_m_eval <= 0) throw ConfigError("shield.m_eval must be positive");
  for (const env::Mode& m : shield_new_modes) m.validate();
  if (run.episodes <= 0) throw ConfigError("run.episodes must be positive");
  if (run.cadence <= 0) throw ConfigError("run.cadence must be positive");
  if (run.jobs <= 0) throw ConfigError("run.jobs must be positive");
  if (run.clo.K <= 0) throw ConfigError("run.clo.K must be positive");
  if (run.clo.M < 0) throw ConfigError("run.clo.M must be >= 0");
  if (run.clo.delta < 0) throw ConfigError("run.clo.delta must be >= 0");
  if (run.clo.max_iters < 0 || run.clo.max_backtracks < 0) {
    throw ConfigError("run.clo iteration limits must be >= 0");
  }
  if (run.methods.empty()) throw ConfigError("run.methods must be non-empty");
  if (run.scenarios.empty()) {
    throw ConfigError("run.scenarios must be non-empty");
  }
  if (run.gaps.empty()) throw ConfigError("run.gaps must be non-empty");
}

FileConfig default_config() {
  FileConfig c;

  env::Mode compliant;
  compliant.id = "compliant";
  compliant.behavior = env::Behavior::Compliant;
  env::Mode jaywalk;
  jaywalk.id = "jaywalk";
  jaywalk.behavior = env::Behavior::Jaywalk;
  c.modes = {compliant, jaywalk};
  c.rho_z = {0.5, 0.5};
  c.p_z = {{1.0, 0.0}, {0.0, 1.0}};

  c.train.episodes = 3000;
  c.train.seed = 1;

  c.bank.episodes_per_mode = 20;
  c.bank.K = 10;
  c.bank.seed = 2;

  c.run.episodes = 500;
  c.run.base_seed = 1337;
  c.run.cadence = 2;
  c.run.clo.K = 10;
  c.run.clo.M = 32;
  c.run.clo.delta = 0.01;
  c.run.clo.max_iters = 3;
  return c;
}

FileConfig parse_config(const std::string& text,
                        const std::vector<std::string>& overrides) {
  json root = json::parse(text, nullptr, false);
  if (root.is_discarded()) throw ConfigError("config is not valid JSON");
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  for (const std::string& o : overrides) apply_override(root, o);

  FileConfig c = default_config();
  Section top(root, "config");

  if (top.has("sim")) {
    Section s(top.raw("sim"), "sim");
    s.get("initial_gap_m", c.sim.initial_gap_m);
    s.get("v0", c.sim.v0);
    s.get("dt", c.sim.dt);
    s.get("h_max", c.sim.h_max);
    s.get("a_max", c.sim.a_max);
    s.get("v_max", c.sim.v_max);
    s.get("lane_width", c.sim.lane_width);
    s.get("walk_speed", c.sim.walk_speed);
    s.get("sensor_range", c.sim.sensor_range);
    s.get("crossing_half_width", c.sim.crossing_half_width);
    s.get("lane_band_lo", c.sim.lane_band_lo);
    s.get("lane_band_hi", c.sim.lane_band_hi);
    s.get("light_red", c.sim.light_cycle.red);
    s.get("light_yellow", c.sim.light_cycle.yellow);
    s.get("light_green", c.sim.light_cycle.green);
    s.get("randomize_light_phase", c.sim.randomize_light_phase);
    s.get("light_phase_offset", c.sim.light_phase_offset);
    s.get("speed_bonus_coef", c.sim.speed_bonus_coef);
    s.get("goal_bonus", c.sim.goal_bonus);
    s.get("collision_penalty", c.sim.collision_penalty);
    s.get("step_cost", c.sim.step_cost);
    s.finish();
  }

  if (top.has("modes")) c.modes = parse_modes(top.raw("modes"), "modes");

  if (top.has("belief")) {
    Section s(top.raw("belief"), "belief");
    s.get("rho_z", c.rho_z);
    s.get("p_z", c.p_z);
    s.get("window", c.belief_window);
    s.finish();
  } else if (top.has("modes")) {
    // Modes changed without belief priors: default to uniform, no switching.
    size_t n = c.modes.size();
    c.rho_z.assign(n, 1.0 / static_cast<double>(n));
    c.p_z.assign(n, std::vector<double>(n, 0.0));
    for (size_t i = 0; i < n; ++i) c.p_z[i][i] = 1.0;
  }

  if (top.has("train")) {
    Section s(top.raw("train"), "train");
    s.get("episodes", c.train.episodes);
    s.get("lr", c.train.lr);
    s.get("gamma", c.train.gamma);
    s.get("use_baseline", c.train.use_baseline);
    s.get("baseline_alpha", c.train.baseline_alpha);
    s.get("seed", c.train.seed);
    s.get("init_scale", c.train.init_scale);
    s.get("eval_episodes", c.train.eval_episodes);
    s.get("eval_margin", c.train.eval_margin);
    s.get("gaps", c.train_gaps);
    s.finish();
  }

  if (top.has("bank")) {
    Section s(top.raw("bank"), "bank");
    s.get("episodes_per_mode", c.bank.episodes_per_mode);
    s.get("K", c.bank.K);
    s.get("seed", c.bank.seed);
    s.get("gaps", c.bank.gaps);
    s.finish();
  }

  if (top.has("shield")) {
    Section s(top.raw("shield"), "shield");
    s.get("d_safe", c.assessor.d_safe);
    s.get("horizon", c.assessor.horizon);
    s.get("m_eval", c.shield_m_eval);
    s.get("seed", c.shield_seed);
    if (s.has("new_modes")) {
      c.shield_new_modes = parse_modes(s.raw("new_modes"), "shield.new_modes");
    }
    s.finish();
  }

  if (top.has("run")) {
    Section s(top.raw("run"), "run");
    if (s.has("methods")) {
      std::vector<std::string> names = s.raw("methods").get<std::vector<std::string>>();
      c.run.methods.clear();
      for (const std::string& n : names) {
        c.run.methods.push_back(harness::method_from_string(n));
      }
    }
    if (s.has("scenarios")) {
      std::vector<std::string> names =
          s.raw("scenarios").get<std::vector<std::string>>();
      c.run.scenarios.clear();
      for (const std::string& n : names) {
        c.run.scenarios.push_back(harness::scenario_from_string(n));
      }
    }
    s.get("gaps", c.run.gaps);
    s.get("episodes", c.run.episodes);
    s.get("base_seed", c.run.base_seed);
    s.get("cadence", c.run.cadence);
    s.get("dispatch_ground_truth", c.run.dispatch_ground_truth);
    s.get("jobs", c.run.jobs);
    if (s.has("clo")) {
      Section cl(s.raw("clo"), "run.clo");
      cl.get("K", c.run.clo.K);
      cl.get("M", c.run.clo.M);
      cl.get("delta", c.run.clo.delta);
      cl.get("max_iters", c.run.clo.max_iters);
      cl.get("max_backtracks", c.run.clo.max_backtracks);
      cl.finish();
    }
    s.finish();
  }
  top.finish();

  c.run.belief_window = c.belief_window;
  c.validate();
  return c;
}

FileConfig load_config(const std::string& path,
                       const std::vector<std::string>& overrides) {
  return parse_config(persist::read_file(path), overrides);
}

std::string default_config_json() {
  FileConfig c = default_config();
  json modes = json::array();
  for (const env::Mode& m : c.modes) modes.push_back(mode_to_json(m));
  json methods = json::array();
  for (harness::Method m : c.run.methods) methods.push_back(harness::to_string(m));
  json scenarios = json::array();
  for (harness::Scenario s : c.run.scenarios) {
    scenarios.push_back(harness::to_string(s));
  }
  json j = {
      {"sim",
       {{"initial_gap_m", c.sim.initial_gap_m},
        {"v0", c.sim.v0},
        {"dt", c.sim.dt},
        {"h_max", c.sim.h_max},
        {"a_max", c.sim.a_max},
        {"v_max", c.sim.v_max},
        {"lane_width", c.sim.lane_width},
        {"walk_speed", c.sim.walk_speed},
        {"sensor_range", c.sim.sensor_range},
        {"crossing_half_width", c.sim.crossing_half_width},
        {"lane_band_lo", c.sim.lane_band_lo},
        {"lane_band_hi", c.sim.lane_band_hi},
        {"light_red", c.sim.light_cycle.red},
        {"light_yellow", c.sim.light_cycle.yellow},
        {"light_green", c.sim.light_cycle.green},
        {"randomize_light_phase", c.sim.randomize_light_phase},
        {"light_phase_offset", c.sim.light_phase_offset},
        {"speed_bonus_coef", c.sim.speed_bonus_coef},
        {"goal_bonus", c.sim.goal_bonus},
        {"collision_penalty", c.sim.collision_penalty},
        {"step_cost", c.sim.step_cost}}},
      {"modes", modes},
      {"belief",
       {{"rho_z", c.rho_z}, {"p_z", c.p_z}, {"window", c.belief_window}}},
      {"train",
       {{"episodes", c.train.episodes},
        {"lr", c.train.lr},
        {"gamma", c.train.gamma},
        {"use_baseline", c.train.use_baseline},
        {"baseline_alpha", c.train.baseline_alpha},
        {"seed", c.train.seed},
        {"init_scale", c.train.init_scale},
        {"eval_episodes", c.train.eval_episodes},
        {"eval_margin", c.train.eval_margin},
        {"gaps", c.train_gaps}}},
      {"bank",
       {{"episodes_per_mode", c.bank.episodes_per_mode},
        {"K", c.bank.K},
        {"seed", c.bank.seed},
        {"gaps", c.bank.gaps}}},
      {"shield",
       {{"d_safe", c.assessor.d_safe},
        {"horizon", c.assessor.horizon},
        {"m_eval", c.shield_m_eval},
        {"seed", c.shield_seed},
        {"new_modes", json::array()}}},
      {"run",
       {{"methods", methods},
        {"scenarios", scenarios},
        {"gaps", c.run.gaps},
        {"episodes", c.run.episodes},
        {"base_seed", c.run.base_seed},
        {"cadence", c.run.cadence},
        {"dispatch_ground_truth", c.run.dispatch_ground_truth},
        {"jobs", c.run.jobs},
        {"clo",
         {{"K", c.run.clo.K},
          {"M", c.run.clo.M},
          {"delta", c.run.clo.delta},
          {"max_iters", c.run.clo.max_iters},
          {"max_backtracks", c.run.clo.max_backtracks}}}}}};
  return j.dump(2) + "\n";
}

}  // namespace numerla::config
