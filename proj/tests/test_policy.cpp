#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "numerla/env.hpp"
#include "numerla/errors.hpp"
#include "numerla/policy.hpp"
#include "numerla/rng.hpp"

using namespace numerla;

namespace {

env::Observation random_obs(RngStream& rng) {
  env::Observation o;
  bool masked = rng.uniform() < 0.3;
  o.v[0] = rng.uniform(0.0, 40.0);
  o.v[1] = masked ? -1.0 : rng.uniform(0.0, 4.0);
  o.v[2] = rng.uniform(0.0, 15.0);
  o.v[3] = masked ? -1.0 : rng.uniform(0.0, 1.5);
  o.v[4] = masked ? -1.0 : static_cast<double>(rng.uniform_int(0, 2));
  for (int i = 0; i < 5; ++i) o.v[5 + i] = o.v[i];
  return o;
}

double fd_log_prob(const policy::PolicyParams& p, const env::Observation& o,
                   int a, size_t i, double h) {
  policy::PolicyParams lo = p, hi = p;
  lo.theta[i] -= h;
  hi.theta[i] += h;
  return (policy::log_prob(hi, o, a) - policy::log_prob(lo, o, a)) / (2 * h);
}

}  // namespace

TEST_CASE("action probabilities form a distribution") {
  RngStream rng(7);
  policy::PolicyParams p = policy::init_params({}, 11);
  for (int trial = 0; trial < 50; ++trial) {
    env::Observation o = random_obs(rng);
    policy::ActionDistribution d = policy::action_probs(p, o);
    double sum = std::accumulate(d.probs.begin(), d.probs.end(), 0.0);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    for (double q : d.probs) CHECK(q >= 0.0);
  }
}

TEST_CASE("zero parameters give the uniform distribution") {
  policy::PolicyParams p;
  p.theta.assign(p.arch.param_count(), 0.0);
  p.version = "zero";
  env::Observation o;
  o.v = {10, 2, 8, 1.5, 0, 11, 2.1, 8, 1.5, 0};
  policy::ActionDistribution d = policy::action_probs(p, o);
  for (double q : d.probs) {
    CHECK(q == doctest::Approx(1.0 / env::Action::kCount).epsilon(1e-12));
  }
}

TEST_CASE("observation normalization freezes the documented scales") {
  env::Observation o;
  o.v = {25.0, 3.0, 12.0, 1.5, 2.0, 50.0, -1.0, 15.0, -1.0, -1.0};
  auto x = policy::normalize_observation(o);
  CHECK(x[0] == doctest::Approx(25.0 / 50.0));
  CHECK(x[1] == doctest::Approx(3.0 / 50.0));
  CHECK(x[2] == doctest::Approx(12.0 / 15.0));
  CHECK(x[3] == doctest::Approx(1.5 / 15.0));
  CHECK(x[4] == doctest::Approx(2.0 / 2.0));
  CHECK(x[5] == doctest::Approx(1.0));
  CHECK(x[6] == -1.0);  // mask sentinel untouched
  CHECK(x[7] == doctest::Approx(1.0));
  CHECK(x[8] == -1.0);
  CHECK(x[9] == -1.0);
}

TEST_CASE("log_prob_grad matches central finite differences") {
  RngStream rng(13);
  policy::PolicyParams p = policy::init_params({}, 5, 0.3);
  int checked = 0;
  for (int trial = 0; trial < 10; ++trial) {
    env::Observation o = random_obs(rng);
    int a = rng.uniform_int(0, env::Action::kCount - 1);
    std::vector<double> g = policy::log_prob_grad(p, o, a);
    REQUIRE(g.size() == p.theta.size());
    // Spot-check a random subset of coordinates plus the action biases.
    for (int probe = 0; probe < 40; ++probe) {
      size_t i = rng.uniform_int(0, static_cast<int>(p.theta.size()) - 1);
      double fd = fd_log_prob(p, o, a, i, 1e-6);
      CHECK(g[i] == doctest::Approx(fd).epsilon(1e-4));
      ++checked;
    }
  }
  CHECK(checked == 400);
}

TEST_CASE("gradient accumulation scales by weight and adds in place") {
  RngStream rng(29);
  policy::PolicyParams p = policy::init_params({}, 17, 0.2);
  env::Observation o = random_obs(rng);
  auto x = policy::normalize_observation(o);
  policy::EvalWorkspace ws;
  policy::forward_normalized(p, x.data(), ws);

  std::vector<double> base = policy::log_prob_grad(p, o, 2);
  std::vector<double> acc(p.theta.size(), 0.0);
  policy::accumulate_log_prob_grad(p, x.data(), ws, 2, 2.5, acc);
  policy::accumulate_log_prob_grad(p, x.data(), ws, 2, -0.5, acc);
  for (size_t i = 0; i < acc.size(); i += 37) {
    CHECK(acc[i] == doctest::Approx(2.0 * base[i]).epsilon(1e-12));
  }
}

TEST_CASE("sampling uses the inverse cdf over action order") {
  policy::ActionDistribution d;
  d.probs = {0.1, 0.2, 0.3, 0.05, 0.05, 0.1, 0.2};
  RngStream rng(3);
  std::array<int, env::Action::kCount> counts{};
  for (int i = 0; i < 200000; ++i) counts[policy::sample_action(d, rng)]++;
  for (int k = 0; k < env::Action::kCount; ++k) {
    CHECK(counts[k] / 200000.0 == doctest::Approx(d.probs[k]).epsilon(0.05));
  }
}

TEST_CASE("kl divergence is zero on itself and positive after a shift") {
  RngStream rng(31);
  policy::PolicyParams p = policy::init_params({}, 19, 0.2);
  std::vector<env::Observation> states;
  for (int i = 0; i < 20; ++i) states.push_back(random_obs(rng));
  CHECK(policy::kl_divergence(p, p, states) == doctest::Approx(0.0));
  policy::PolicyParams q = p;
  for (double& t : q.theta) t += 0.05;
  CHECK(policy::kl_divergence(p, q, states) > 0.0);
}

TEST_CASE("init_params is reproducible, bounded, and zero-biased") {
  policy::PolicyParams a = policy::init_params({}, 42, 0.05);
  policy::PolicyParams b = policy::init_params({}, 42, 0.05);
  policy::PolicyParams c = policy::init_params({}, 43, 0.05);
  CHECK(a.theta == b.theta);
  CHECK(a.theta != c.theta);
  const policy::PolicyArch arch;
  int w1 = arch.input_dim * arch.hidden;
  int b1 = w1 + arch.hidden;
  int w2 = b1 + arch.hidden * arch.n_actions;
  for (int i = 0; i < w1; ++i) CHECK(std::abs(a.theta[i]) <= 0.05);
  for (int i = w1; i < b1; ++i) CHECK(a.theta[i] == 0.0);
  for (int i = b1; i < w2; ++i) CHECK(std::abs(a.theta[i]) <= 0.05);
  for (int i = w2; i < arch.param_count(); ++i) CHECK(a.theta[i] == 0.0);
}

TEST_CASE("a mismatched parameter vector is rejected") {
  policy::PolicyParams p;
  p.theta.assign(10, 0.0);
  CHECK_THROWS_AS(p.validate(), UsageError);
}

namespace {

policy::TrainSetup conflict_free_setup() {
  // Fixed red light and a compliant pedestrian: nothing enters the lane for
  // 30 steps, and from 15 m the vehicle can finish well inside that window.
  policy::TrainSetup setup;
  setup.sim.randomize_light_phase = false;
  setup.sim.light_phase_offset = 0;
  setup.sim.initial_gap_m = 15.0;
  env::Mode compliant;
  compliant.id = "compliant";
  compliant.behavior = env::Behavior::Compliant;
  setup.modes = {compliant};
  setup.rho = {1.0};
  setup.gaps = {15.0};
  return setup;
}

}  // namespace

TEST_CASE("zero learning rate leaves the initial parameters untouched") {
  policy::TrainSetup setup = conflict_free_setup();
  policy::TrainConfig cfg;
  cfg.episodes = 25;
  cfg.lr = 0.0;
  cfg.seed = 9;
  cfg.eval_episodes = 0;  // skip the improvement gate, nothing can improve
  policy::TrainResult r = policy::train_meta(setup, cfg);
  policy::PolicyParams init = policy::init_params({}, 9, cfg.init_scale);
  CHECK(r.params.theta == init.theta);
}

TEST_CASE("reinforce climbs on a conflict-free approach task") {
  policy::TrainSetup setup = conflict_free_setup();
  policy::TrainConfig cfg;
  cfg.episodes = 1500;
  cfg.lr = 0.03;  // per-step averaged gradients want a larger step size
  cfg.seed = 4;
  cfg.eval_episodes = 200;
  cfg.eval_margin = 0.0;  // the gate itself asserts improvement
  policy::TrainResult r = policy::train_meta(setup, cfg);
  CHECK(r.eval_mean_return > r.random_mean_return);
  // The task has no collision risk, so returns should be solidly positive.
  CHECK(r.eval_mean_return > 0.5);
}

TEST_CASE("training is reproducible for a frozen seed") {
  policy::TrainSetup setup = conflict_free_setup();
  policy::TrainConfig cfg;
  cfg.episodes = 60;
  cfg.lr = 1e-3;
  cfg.seed = 21;
  cfg.eval_episodes = 0;
  policy::TrainResult a = policy::train_meta(setup, cfg);
  policy::TrainResult b = policy::train_meta(setup, cfg);
  CHECK(a.params.theta == b.params.theta);
  CHECK(a.params.version == b.params.version);
}
