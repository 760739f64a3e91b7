#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "numerla/rng.hpp"

namespace numerla::env {

enum class Light : int { Red = 0, Yellow = 1, Green = 2 };

enum class Behavior { Compliant, Jaywalk };

// Discrete longitudinal command. value() is the normalized acceleration in
// [-1, 1]; the applied acceleration is value() * a_max. Index 4 (full brake)
// doubles as the shield's fallback action.
struct Action {
  int index = 0;

  static constexpr int kCount = 7;
  static constexpr std::array<double, kCount> kValues = {
      0.0, 1.0, 0.5, 0.25, -1.0, -0.5, -0.25};

  double value() const;
  static Action checked(int index);  // throws UsageError out of range
};

// Latent pedestrian-behavior mode. Feature layout (fixed dimension 4):
//   [is_compliant, is_jaywalk, yellow_go_prob, mean_start_step / 200]
// feature_overrides, when non-empty, replaces the computed vector; synthetic
// modes in tests use it to place themselves anywhere in feature space.
struct Mode {
  std::string id;
  Behavior behavior = Behavior::Compliant;
  double yellow_go_prob = 0.1;  // per-step start probability while Yellow
  int jaywalk_start_min = 0;    // uniform start-step support, inclusive
  int jaywalk_start_max = 100;
  std::vector<double> feature_overrides;

  static constexpr int kFeatureDim = 4;
  std::vector<double> features() const;
  void validate() const;
};

struct LightCycle {
  int red = 30;
  int yellow = 20;
  int green = 50;

  int period() const { return red + yellow + green; }
  Light at(int phase_step) const;  // phase_step is taken mod period
};

struct SimConfig {
  double initial_gap_m = 25.0;  // vehicle start to crossing centre
  double v0 = 8.0;
  double dt = 0.1;
  int h_max = 200;
  double a_max = 5.0;
  double v_max = 15.0;
  double lane_width = 4.0;  // pedestrian path length across the lane
  double walk_speed = 1.5;
  double sensor_range = 15.0;         // ped/light entries masked beyond this
  double crossing_half_width = 2.0;   // |x_c - crossing| window for collision
  double lane_band_lo = 0.5;          // y_p interval occupied by the vehicle
  double lane_band_hi = 3.5;
  LightCycle light_cycle;
  // Initial signal phase. Randomized per episode by default so pedestrian
  // crossings land anywhere relative to the vehicle's approach; a fixed
  // offset of 0 starts every episode at the beginning of Red.
  bool randomize_light_phase = true;
  int light_phase_offset = 0;
  // Reward shaping.
  double speed_bonus_coef = 0.1;
  double goal_bonus = 1.0;
  double collision_penalty = 10.0;
  double step_cost = 0.01;

  void validate() const;  // throws ConfigError
};

enum class DoneReason { None, Goal, Collision, Timeout };

struct WorldState {
  double x_c = 0.0;  // vehicle position; crossing centre sits at crossing_pos
  double v_c = 0.0;
  double y_p = 0.0;  // pedestrian progress across the lane, 0 = kerb
  double v_p = 0.0;
  Light light = Light::Red;
  int t = 0;
  bool walking_started = false;
  bool terminal = false;
  // Per-episode constants fixed at reset.
  double crossing_pos = 0.0;
  int light_offset = 0;
  int jaywalk_start_step = -1;  // -1 when the mode never schedules one
  // Current block of the observation made at this state; carried so step()
  // can fill the next observation's previous-step entries.
  std::array<double, 5> obs_head{};

  double dist_to_crossing() const;  // max(0, crossing_pos - x_c)
  double dist_to_ped() const;       // |crossing_pos - x_c|
};

// Ten entries: (d_c, d_p, v_c, v_p, l) for the current step followed by the
// same five from the previous observation. Pedestrian and light entries are
// -1 while the pedestrian is beyond sensor range; the previous block is -1 at
// t = 0.
struct Observation {
  static constexpr int kDim = 10;
  std::array<double, kDim> v{};

  double d_c() const { return v[0]; }
  double d_p() const { return v[1]; }
  double v_c() const { return v[2]; }
  double v_p() const { return v[3]; }
  double light() const { return v[4]; }
  bool masked() const { return v[1] == -1.0; }
  std::array<double, 5> s_hat() const { return {v[0], v[1], v[2], v[3], v[4]}; }
};

struct StepResult {
  WorldState next_state;
  Observation obs;
  double reward = 0.0;
  bool collision = false;
  bool done = false;
  DoneReason done_reason = DoneReason::None;
};

Light light_at(const SimConfig& cfg, int light_offset, int t);

// Lateral acceleration command for the pedestrian this step. Consumes one
// uniform draw only for a Compliant pedestrian deciding on Yellow.
double pedestrian_policy(const SimConfig& cfg, const WorldState& s,
                         const Mode& mode, RngStream& rng);

bool collision_check(const SimConfig& cfg, const WorldState& s);

// Reward of the transition that produced next-state velocity v_c.
double reward(const SimConfig& cfg, double v_c, bool collision,
              bool reached_goal);

Observation observe(const SimConfig& cfg, const WorldState& s,
                    const Observation* prev);

// Draw order: light phase offset (when randomized), then jaywalk start step.
std::pair<WorldState, Observation> reset(const SimConfig& cfg, const Mode& mode,
                                         RngStream& rng);
std::pair<WorldState, Observation> reset(const SimConfig& cfg, const Mode& mode,
                                         uint64_t seed);

StepResult step(const SimConfig& cfg, const WorldState& s, Action a,
                const Mode& mode, RngStream& rng);

const char* to_string(Light l);
const char* to_string(DoneReason r);

}  // namespace numerla::env
