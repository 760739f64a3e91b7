#include "numerla/env.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "numerla/errors.hpp"

namespace numerla::env {

namespace {
double clamp(double v, double lo, double hi) {
  return std::min(std::max(v, lo), hi);
}
}  // namespace

double Action::value() const {
  checked(index);
  return kValues[index];
}

Action Action::checked(int index) {
  if (index < 0 || index >= kCount) {
    throw UsageError("action index out of range: " + std::to_string(index));
  }
  return Action{index};
}

std::vector<double> Mode::features() const {
  if (!feature_overrides.empty()) {
    if (static_cast<int>(feature_overrides.size()) != kFeatureDim) {
      throw ConfigError("mode '" + id + "': feature override dimension " +
                        std::to_string(feature_overrides.size()) +
                        " != " + std::to_string(kFeatureDim));
    }
    return feature_overrides;
  }
  double mean_start = 0.5 * (jaywalk_start_min + jaywalk_start_max);
  return {behavior == Behavior::Compliant ? 1.0 : 0.0,
          behavior == Behavior::Jaywalk ? 1.0 : 0.0, yellow_go_prob,
          mean_start / 200.0};
}

void Mode::validate() const {
  if (id.empty()) throw ConfigError("mode id must be non-empty");
  if (yellow_go_prob < 0.0 || yellow_go_prob > 1.0) {
    throw ConfigError("mode '" + id + "': yellow_go_prob outside [0, 1]");
  }
  if (jaywalk_start_min < 0 || jaywalk_start_max < jaywalk_start_min) {
    throw ConfigError("mode '" + id + "': bad jaywalk start support");
  }
  features();  // checks override dimension
}

Light LightCycle::at(int phase_step) const {
  int p = phase_step % period();
  if (p < 0) p += period();
  if (p < red) return Light::Red;
  if (p < red + yellow) return Light::Yellow;
  return Light::Green;
}

void SimConfig::validate() const {
  std::ostringstream bad;
  if (initial_gap_m <= 0) bad << "initial_gap_m must be positive; ";
  if (dt <= 0) bad << "dt must be positive; ";
  if (h_max <= 0) bad << "h_max must be positive; ";
  if (a_max <= 0) bad << "a_max must be positive; ";
  if (v_max <= 0) bad << "v_max must be positive; ";
  if (v0 < 0 || v0 > v_max) bad << "v0 outside [0, v_max]; ";
  if (lane_width <= 0) bad << "lane_width must be positive; ";
  if (walk_speed <= 0) bad << "walk_speed must be positive; ";
  if (sensor_range <= 0) bad << "sensor_range must be positive; ";
  if (crossing_half_width <= 0) bad << "crossing_half_width must be positive; ";
  if (!(lane_band_lo < lane_band_hi) || lane_band_lo < 0 ||
      lane_band_hi > lane_width) {
    bad << "lane band must satisfy 0 <= lo < hi <= lane_width; ";
  }
  if (light_cycle.red <= 0 || light_cycle.yellow <= 0 ||
      light_cycle.green <= 0) {
    bad << "light cycle phases must be positive; ";
  }
  if (light_phase_offset < 0 || light_phase_offset >= light_cycle.period()) {
    bad << "light_phase_offset outside [0, period); ";
  }
  std::string msg = bad.str();
  if (!msg.empty()) throw ConfigError("invalid sim config: " + msg);
}

double WorldState::dist_to_crossing() const {
  return std::max(0.0, crossing_pos - x_c);
}

double WorldState::dist_to_ped() const { return std::abs(crossing_pos - x_c); }

Light light_at(const SimConfig& cfg, int light_offset, int t) {
  return cfg.light_cycle.at(light_offset + t);
}

double pedestrian_policy(const SimConfig& cfg, const WorldState& s,
                         const Mode& mode, RngStream& rng) {
  double target = 0.0;
  if (s.walking_started) {
    // Constant walk speed until the far kerb, then stand.
    target = (s.y_p < cfg.lane_width) ? cfg.walk_speed : 0.0;
  } else {
    bool starts = false;
    if (mode.behavior == Behavior::Jaywalk) {
      starts = s.t >= s.jaywalk_start_step;
    } else {
      switch (s.light) {
        case Light::Red:
          break;
        case Light::Yellow:
          starts = rng.uniform() < mode.yellow_go_prob;
          break;
        case Light::Green:
          starts = true;
          break;
      }
    }
    if (starts) target = cfg.walk_speed;
  }
  return (target - s.v_p) / cfg.dt;
}

bool collision_check(const SimConfig& cfg, const WorldState& s) {
  return std::abs(s.x_c - s.crossing_pos) <= cfg.crossing_half_width &&
         s.y_p > cfg.lane_band_lo && s.y_p < cfg.lane_band_hi;
}

double reward(const SimConfig& cfg, double v_c, bool collision,
              bool reached_goal) {
  double r = cfg.speed_bonus_coef * (v_c / cfg.v_max) - cfg.step_cost;
  if (reached_goal) r += cfg.goal_bonus;
  if (collision) r -= cfg.collision_penalty;
  return r;
}

Observation observe(const SimConfig& cfg, const WorldState& s,
                    const Observation* prev) {
  Observation o;
  bool masked = s.dist_to_ped() > cfg.sensor_range;
  o.v[0] = s.dist_to_crossing();
  o.v[1] = masked ? -1.0 : cfg.lane_width - s.y_p;
  o.v[2] = s.v_c;
  o.v[3] = masked ? -1.0 : s.v_p;
  o.v[4] = masked ? -1.0 : static_cast<double>(static_cast<int>(s.light));
  for (int i = 0; i < 5; ++i) o.v[5 + i] = prev ? prev->v[i] : -1.0;
  return o;
}

std::pair<WorldState, Observation> reset(const SimConfig& cfg, const Mode& mode,
                                         RngStream& rng) {
  cfg.validate();
  mode.validate();
  WorldState s;
  s.x_c = 0.0;
  s.v_c = cfg.v0;
  s.y_p = 0.0;
  s.v_p = 0.0;
  s.t = 0;
  s.walking_started = false;
  s.terminal = false;
  s.crossing_pos = cfg.initial_gap_m;
  s.light_offset = cfg.randomize_light_phase
                       ? rng.uniform_int(0, cfg.light_cycle.period() - 1)
                       : cfg.light_phase_offset;
  s.light = light_at(cfg, s.light_offset, 0);
  s.jaywalk_start_step = mode.behavior == Behavior::Jaywalk
                             ? rng.uniform_int(mode.jaywalk_start_min,
                                               mode.jaywalk_start_max)
                             : -1;
  Observation obs = observe(cfg, s, nullptr);
  for (int i = 0; i < 5; ++i) s.obs_head[i] = obs.v[i];
  return {s, obs};
}

std::pair<WorldState, Observation> reset(const SimConfig& cfg, const Mode& mode,
                                         uint64_t seed) {
  RngStream rng(seed);
  return reset(cfg, mode, rng);
}

StepResult step(const SimConfig& cfg, const WorldState& s, Action a,
                const Mode& mode, RngStream& rng) {
  if (s.terminal) throw UsageError("step called on a terminal state");
  Action::checked(a.index);

  double a_ped = pedestrian_policy(cfg, s, mode, rng);

  WorldState n = s;
  n.t = s.t + 1;
  n.v_c = clamp(s.v_c + a.value() * cfg.a_max * cfg.dt, 0.0, cfg.v_max);
  n.x_c = s.x_c + n.v_c * cfg.dt;
  n.v_p = clamp(s.v_p + a_ped * cfg.dt, 0.0, cfg.walk_speed);
  n.y_p = std::min(s.y_p + n.v_p * cfg.dt, cfg.lane_width);
  if (n.y_p >= cfg.lane_width) n.v_p = 0.0;
  n.walking_started = s.walking_started || n.v_p > 0.0;
  n.light = light_at(cfg, s.light_offset, n.t);

  StepResult res;
  res.collision = collision_check(cfg, n);
  bool reached_goal = !res.collision && n.x_c >= n.crossing_pos;
  if (res.collision) {
    res.done = true;
    res.done_reason = DoneReason::Collision;
  } else if (reached_goal) {
    res.done = true;
    res.done_reason = DoneReason::Goal;
  } else if (n.t >= cfg.h_max) {
    res.done = true;
    res.done_reason = DoneReason::Timeout;
  }
  n.terminal = res.done;
  res.reward = reward(cfg, n.v_c, res.collision, reached_goal);
  Observation prev;
  for (int i = 0; i < 5; ++i) prev.v[i] = s.obs_head[i];
  res.obs = observe(cfg, n, &prev);
  for (int i = 0; i < 5; ++i) n.obs_head[i] = res.obs.v[i];
  res.next_state = n;
  return res;
}

const char* to_string(Light l) {
  switch (l) {
    case Light::Red: return "Red";
    case Light::Yellow: return "Yellow";
    case Light::Green: return "Green";
  }
  return "?";
}

const char* to_string(DoneReason r) {
  switch (r) {
    case DoneReason::None: return "None";
    case DoneReason::Goal: return "Goal";
    case DoneReason::Collision: return "Collision";
    case DoneReason::Timeout: return "Timeout";
  }
  return "?";
}

}  // namespace numerla::env
