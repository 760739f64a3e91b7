#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "numerla/belief.hpp"
#include "numerla/env.hpp"
#include "numerla/errors.hpp"
#include "numerla/rng.hpp"

using namespace numerla;

namespace {

// Scripted observation: only the fields the filter reads matter.
env::Observation make_obs(double d_p, double v_p, int light) {
  env::Observation o;
  o.v = {10.0, d_p, 8.0, v_p, static_cast<double>(light),
         -1, -1, -1, -1, -1};
  return o;
}

env::Observation masked_obs() { return make_obs(-1.0, -1.0, -1); }

belief::ModeTransitionModel two_mode_model(int jay_lo = 0, int jay_hi = 100) {
  belief::ModeTransitionModel model;
  env::Mode comp;
  comp.id = "compliant";
  comp.behavior = env::Behavior::Compliant;
  comp.yellow_go_prob = 0.1;
  env::Mode jay;
  jay.id = "jaywalk";
  jay.behavior = env::Behavior::Jaywalk;
  jay.jaywalk_start_min = jay_lo;
  jay.jaywalk_start_max = jay_hi;
  model.modes = {comp, jay};
  model.rho_z = {0.5, 0.5};
  model.p_z = {{1.0, 0.0}, {0.0, 1.0}};
  return model;
}

// Independent restatement of the evidence model, used as the oracle side of
// the full-sequence comparison. Start probability of a pedestrian that has
// not started yet, deciding at step t under the given light.
double oracle_start_prob(const env::Mode& m, int light, int t) {
  if (m.behavior == env::Behavior::Jaywalk) {
    if (t < m.jaywalk_start_min) return 0.0;
    if (t > m.jaywalk_start_max) return 1.0;
    return 1.0 / (m.jaywalk_start_max - t + 1);
  }
  if (light == 0) return 0.0;
  if (light == 1) return m.yellow_go_prob;
  return 1.0;
}

bool oracle_standing(const env::Observation& o) {
  return !o.masked() && o.v_p() <= 1e-9 && o.d_p() > 1e-9;
}

bool oracle_walking(const env::Observation& o) {
  return !o.masked() && o.v_p() > 1e-9;
}

// Likelihood of the pair (obs[t-1] -> obs[t]) under one mode.
double oracle_factor(const env::Mode& m, const env::Observation& prev,
                     const env::Observation& cur, int decision_t) {
  if (prev.masked() || cur.masked()) return 1.0;
  int light = static_cast<int>(prev.light());
  if (oracle_standing(prev)) {
    if (oracle_walking(cur)) return oracle_start_prob(m, light, decision_t);
    if (oracle_standing(cur))
      return 1.0 - oracle_start_prob(m, light, decision_t);
  }
  return 1.0;
}

// Posterior over modes from the whole sequence at once (identity p_z).
std::vector<double> full_sequence_posterior(
    const belief::ModeTransitionModel& model,
    const std::vector<env::Observation>& seq, int upto) {
  std::vector<double> post = model.rho_z;
  for (int t = 1; t <= upto; ++t) {
    double norm = 0.0;
    for (size_t z = 0; z < model.modes.size(); ++z) {
      post[z] *= oracle_factor(model.modes[z], seq[t - 1], seq[t], t - 1);
      norm += post[z];
    }
    if (norm > 0.0) {
      for (double& p : post) p /= norm;
    }
  }
  return post;
}

}  // namespace

TEST_CASE("init_belief copies the prior and mode ids") {
  belief::ModeTransitionModel model = two_mode_model();
  belief::Belief b = belief::init_belief(model);
  CHECK(b.probs == std::vector<double>{0.5, 0.5});
  CHECK(b.mode_ids == std::vector<std::string>{"compliant", "jaywalk"});
  b.validate();
}

TEST_CASE("belief argmax breaks ties toward the lowest index") {
  belief::Belief b;
  b.probs = {0.25, 0.5, 0.25};
  b.mode_ids = {"a", "b", "c"};
  CHECK(b.argmax() == 1);
  b.probs = {0.5, 0.5, 0.0};
  CHECK(b.argmax() == 0);
}

TEST_CASE("model validation rejects malformed priors and transitions") {
  belief::ModeTransitionModel model = two_mode_model();
  model.rho_z = {0.7, 0.7};
  CHECK_THROWS_AS(model.validate(), ConfigError);
  model = two_mode_model();
  model.p_z = {{0.5, 0.4}, {0.0, 1.0}};
  CHECK_THROWS_AS(model.validate(), ConfigError);
  model = two_mode_model();
  model.p_z.pop_back();
  CHECK_THROWS_AS(model.validate(), ConfigError);
  model = two_mode_model();
  model.modes.clear();
  model.rho_z.clear();
  model.p_z.clear();
  CHECK_THROWS_AS(model.validate(), ConfigError);
}

TEST_CASE("observation window evicts beyond capacity and keeps step tags") {
  belief::ObservationWindow w(3);
  for (int t = 0; t < 5; ++t) w.push(make_obs(4.0, 0.0, 0), t);
  CHECK(w.size() == 3);
  CHECK(w.step_at(0) == 2);
  CHECK(w.step_at(2) == 4);
  CHECK(static_cast<int>(w.light_history().size()) == 5);
  w.clear();
  CHECK(w.size() == 0);
  CHECK(w.light_history().empty());
}

TEST_CASE("masked or single observations are uninformative") {
  belief::ModeTransitionModel model = two_mode_model();
  belief::Belief b = belief::init_belief(model);
  belief::ObservationWindow w;
  w.push(masked_obs(), 0);
  belief::Belief b1 = belief::update_belief(b, w, model);
  CHECK(b1.probs == b.probs);  // size 1: nothing to compare yet
  w.push(masked_obs(), 1);
  belief::Belief b2 = belief::update_belief(b1, w, model);
  CHECK(b2.probs == b.probs);
  // First unmasked sight of a pedestrian already walking carries no event.
  w.push(make_obs(2.0, 1.5, 2), 2);
  belief::Belief b3 = belief::update_belief(b2, w, model);
  CHECK(b3.probs == b.probs);
}

TEST_CASE("a start under red eliminates the compliant mode") {
  belief::ModeTransitionModel model = two_mode_model();
  belief::Belief b = belief::init_belief(model);
  belief::ObservationWindow w;
  w.push(make_obs(4.0, 0.0, 0), 6);  // standing, red
  b = belief::update_belief(b, w, model);
  w.push(make_obs(3.85, 1.5, 0), 7);  // walking, still red
  b = belief::update_belief(b, w, model);
  CHECK(b.probs[0] == doctest::Approx(0.0));
  CHECK(b.probs[1] == doctest::Approx(1.0));
}

TEST_CASE("standing under green eliminates the compliant mode") {
  belief::ModeTransitionModel model = two_mode_model();
  belief::Belief b = belief::init_belief(model);
  belief::ObservationWindow w;
  w.push(make_obs(4.0, 0.0, 2), 3);  // standing, green
  b = belief::update_belief(b, w, model);
  w.push(make_obs(4.0, 0.0, 2), 4);  // still standing
  b = belief::update_belief(b, w, model);
  CHECK(b.probs[0] == doctest::Approx(0.0));
  // Jaywalker that keeps waiting is consistent (start support reaches 100).
  CHECK(b.probs[1] == doctest::Approx(1.0));
}

TEST_CASE("a start under green favors the compliant mode") {
  belief::ModeTransitionModel model = two_mode_model();
  belief::Belief b = belief::init_belief(model);
  belief::ObservationWindow w;
  w.push(make_obs(4.0, 0.0, 2), 0);
  b = belief::update_belief(b, w, model);
  w.push(make_obs(3.85, 1.5, 2), 1);
  b = belief::update_belief(b, w, model);
  // Compliant starts surely; jaywalk start hazard at t=0 is 1/101.
  double expect_comp = 1.0 / (1.0 + 1.0 / 101.0);
  CHECK(b.probs[0] == doctest::Approx(expect_comp).epsilon(1e-12));
}

TEST_CASE("impossible evidence under every mode sets the degenerate flag") {
  belief::ModeTransitionModel model = two_mode_model();
  model.modes.resize(1);  // compliant only
  model.rho_z = {1.0};
  model.p_z = {{1.0}};
  belief::Belief b = belief::init_belief(model);
  belief::ObservationWindow w;
  w.push(make_obs(4.0, 0.0, 0), 0);  // standing on red
  b = belief::update_belief(b, w, model);
  w.push(make_obs(3.85, 1.5, 0), 1);  // walks on red: impossible if compliant
  bool degenerate = false;
  b = belief::update_belief(b, w, model, &degenerate);
  CHECK(degenerate);
  CHECK(b.probs[0] == doctest::Approx(1.0));  // falls back to the prediction
}

TEST_CASE("prediction step applies the transition matrix") {
  belief::ModeTransitionModel model = two_mode_model();
  model.p_z = {{0.9, 0.1}, {0.2, 0.8}};
  belief::Belief b = belief::init_belief(model);
  b.probs = {0.3, 0.7};
  belief::ObservationWindow w;
  w.push(masked_obs(), 0);
  w.push(masked_obs(), 1);  // uninformative: correction multiplies by 1
  belief::Belief b2 = belief::update_belief(b, w, model);
  CHECK(b2.probs[0] == doctest::Approx(0.3 * 0.9 + 0.7 * 0.2).epsilon(1e-12));
  CHECK(b2.probs[1] == doctest::Approx(0.3 * 0.1 + 0.7 * 0.8).epsilon(1e-12));
}

TEST_CASE("recursive filter matches the full-sequence posterior") {
  // Ten-step scripted episode: masked prefix, a standing phase over red and
  // yellow, a start under yellow, then walking to the far kerb.
  belief::ModeTransitionModel model = two_mode_model(0, 9);
  std::vector<env::Observation> seq = {
      masked_obs(),             // t0
      masked_obs(),             // t1
      make_obs(4.0, 0.0, 0),    // t2 standing, red
      make_obs(4.0, 0.0, 0),    // t3 standing, red
      make_obs(4.0, 0.0, 1),    // t4 standing, yellow
      make_obs(4.0, 0.0, 1),    // t5 standing, yellow
      make_obs(3.85, 1.5, 1),   // t6 starts under yellow
      make_obs(3.7, 1.5, 1),    // t7 walking
      make_obs(3.55, 1.5, 2),   // t8 walking, green
      make_obs(0.0, 0.0, 2),    // t9 reached the far kerb
  };
  belief::Belief b = belief::init_belief(model);
  belief::ObservationWindow w;
  for (int t = 0; t < static_cast<int>(seq.size()); ++t) {
    w.push(seq[t], t);
    b = belief::update_belief(b, w, model);
    std::vector<double> oracle = full_sequence_posterior(model, seq, t);
    REQUIRE(oracle.size() == b.probs.size());
    for (size_t z = 0; z < oracle.size(); ++z) {
      CHECK(std::abs(b.probs[z] - oracle[z]) < 1e-10);
    }
  }
  // The yellow start is weak evidence either way; both modes stay plausible.
  CHECK(b.probs[0] > 0.05);
  CHECK(b.probs[1] > 0.05);
}

TEST_CASE("recursive filter matches full-sequence Bayes on random scripts") {
  belief::ModeTransitionModel model = two_mode_model(0, 40);
  RngStream rng(2024);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<env::Observation> seq;
    bool walking = false;
    double d_p = 4.0;
    for (int t = 0; t < 12; ++t) {
      bool masked = !walking && rng.uniform() < 0.25;
      if (masked) {
        seq.push_back(masked_obs());
        continue;
      }
      if (!walking && rng.uniform() < 0.3) walking = true;
      if (walking) d_p = std::max(0.0, d_p - 0.15);
      int light = static_cast<int>(3 * rng.uniform());
      seq.push_back(make_obs(d_p, walking && d_p > 0.0 ? 1.5 : 0.0, light));
    }
    belief::Belief b = belief::init_belief(model);
    belief::ObservationWindow w;
    for (int t = 0; t < static_cast<int>(seq.size()); ++t) {
      w.push(seq[t], t);
      bool degenerate = false;
      b = belief::update_belief(b, w, model, &degenerate);
      if (degenerate) break;  // posterior no longer a pure Bayes product
      std::vector<double> oracle = full_sequence_posterior(model, seq, t);
      for (size_t z = 0; z < oracle.size(); ++z) {
        CHECK(std::abs(b.probs[z] - oracle[z]) < 1e-10);
      }
    }
  }
}

TEST_CASE("in-simulator jaywalk start on red is identified within ten steps") {
  belief::ModeTransitionModel model = two_mode_model(5, 20);
  env::SimConfig sim;
  sim.initial_gap_m = 15.0;  // pedestrian sensed from the first step
  sim.randomize_light_phase = false;
  sim.light_phase_offset = 0;  // red for the first 30 steps
  const env::Mode& jay = model.modes[1];

  RngStream rng(31);
  auto [state, obs] = env::reset(sim, jay, rng);
  int start_step = state.jaywalk_start_step;
  REQUIRE(start_step >= 5);
  REQUIRE(start_step <= 20);

  belief::Belief b = belief::init_belief(model);
  belief::ObservationWindow w;
  w.push(obs, 0);
  b = belief::update_belief(b, w, model);
  int identified_at = -1;
  for (int t = 0; t < 60; ++t) {
    env::StepResult res = env::step(sim, state, env::Action{4}, jay, rng);
    state = res.next_state;
    w.push(res.obs, state.t);
    b = belief::update_belief(b, w, model);
    if (b.probs[1] >= 0.99 && identified_at < 0) identified_at = state.t;
    if (res.done) break;
  }
  REQUIRE(identified_at > 0);
  CHECK(identified_at <= start_step + 10);
  // Before the start, waiting on red is equally likely under both modes, so
  // the belief should not have collapsed prematurely toward jaywalk.
  CHECK(b.probs[1] > 0.99);
}

TEST_CASE("in-simulator compliant green start concentrates on compliant") {
  belief::ModeTransitionModel model = two_mode_model();
  env::SimConfig sim;
  sim.initial_gap_m = 15.0;
  sim.randomize_light_phase = false;
  sim.light_phase_offset = 50;  // green at reset
  const env::Mode& comp = model.modes[0];

  RngStream rng(37);
  auto [state, obs] = env::reset(sim, comp, rng);
  belief::Belief b = belief::init_belief(model);
  belief::ObservationWindow w;
  w.push(obs, 0);
  b = belief::update_belief(b, w, model);
  for (int t = 0; t < 3; ++t) {
    env::StepResult res = env::step(sim, state, env::Action{4}, comp, rng);
    state = res.next_state;
    w.push(res.obs, state.t);
    b = belief::update_belief(b, w, model);
    if (res.done) break;
  }
  CHECK(b.probs[0] > 0.95);
}

TEST_CASE("belief validation flags bad vectors") {
  belief::Belief b;
  b.probs = {0.5};
  b.mode_ids = {"a", "b"};
  CHECK_THROWS_AS(b.validate(), UsageError);
  b.probs = {0.6, 0.6};
  b.mode_ids = {"a", "b"};
  CHECK_THROWS_AS(b.validate(), NumericError);
}
