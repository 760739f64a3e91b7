#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "numerla/cola.hpp"
#include "numerla/env.hpp"
#include "numerla/errors.hpp"
#include "numerla/policy.hpp"
#include "numerla/rng.hpp"

using namespace numerla;

namespace {

policy::PolicyArch small_arch() {
  return {env::Observation::kDim, 8, env::Action::kCount};
}

std::vector<env::Mode> two_modes() {
  env::Mode comp;
  comp.id = "compliant";
  comp.behavior = env::Behavior::Compliant;
  env::Mode jay;
  jay.id = "jaywalk";
  jay.behavior = env::Behavior::Jaywalk;
  return {comp, jay};
}

belief::Belief make_belief(double p_comp) {
  belief::Belief b;
  b.probs = {p_comp, 1.0 - p_comp};
  b.mode_ids = {"compliant", "jaywalk"};
  return b;
}

cola::SampleBank small_bank(const policy::PolicyParams& params, int K = 5,
                            int per_mode = 4, uint64_t seed = 9) {
  cola::BankConfig cfg;
  cfg.episodes_per_mode = per_mode;
  cfg.K = K;
  cfg.seed = seed;
  return cola::build_sample_bank(params, two_modes(), env::SimConfig{}, cfg);
}

}  // namespace

TEST_CASE("bank slices episodes into stride-1 windows of length K") {
  policy::PolicyParams params = policy::init_params(small_arch(), 3);
  const int K = 5;
  cola::SampleBank bank = small_bank(params, K, 2, 11);
  bank.validate();
  CHECK(bank.K == K);
  CHECK(bank.policy_version == params.version);
  REQUIRE(bank.buckets.count("compliant") == 1);
  REQUIRE(bank.buckets.count("jaywalk") == 1);

  // Replay the first compliant episode with the same derived stream and
  // check the windows match the rollout step for step.
  RngStream rng(RngStream::derive(RngStream::derive(11, 0), 0));
  env::SimConfig sim;
  sim.initial_gap_m = 15.0;  // gap rotation starts at gaps[0]
  auto [state, obs] = env::reset(sim, two_modes()[0], rng);
  std::vector<env::Observation> obs_seq;
  std::vector<int> act_seq;
  std::vector<double> rew_seq;
  while (true) {
    policy::ActionDistribution dist = policy::action_probs(params, obs);
    int a = policy::sample_action(dist, rng);
    env::StepResult res = env::step(sim, state, env::Action{a},
                                    two_modes()[0], rng);
    obs_seq.push_back(obs);
    act_seq.push_back(a);
    rew_seq.push_back(res.reward);
    state = res.next_state;
    obs = res.obs;
    if (res.done) break;
  }
  int T = static_cast<int>(obs_seq.size());
  REQUIRE(T >= K);

  const auto& bucket = bank.buckets.at("compliant");
  REQUIRE(static_cast<int>(bucket.size()) >= T - K + 1);
  for (int start = 0; start + K <= T; ++start) {
    const cola::LookaheadSample& s = bucket[start];
    CHECK(s.n == K);
    CHECK(!s.padded);
    CHECK(s.mode_id == "compliant");
    for (int k = 0; k < K; ++k) {
      CHECK(s.states[k].v == obs_seq[start + k].v);
      CHECK(s.actions[k] == act_seq[start + k]);
      CHECK(s.rewards[k] == rew_seq[start + k]);
    }
  }
}

TEST_CASE("an episode shorter than K becomes one padded window") {
  policy::PolicyParams params = policy::init_params(small_arch(), 3);
  env::SimConfig sim;
  cola::BankConfig cfg;
  cfg.episodes_per_mode = 1;
  cfg.K = 8;
  cfg.gaps = {0.5};  // the goal is reached on the first step
  cfg.seed = 1;
  env::Mode comp = two_modes()[0];
  cola::SampleBank bank =
      cola::build_sample_bank(params, {comp}, sim, cfg);
  const auto& bucket = bank.buckets.at("compliant");
  REQUIRE(bucket.size() == 1);
  const cola::LookaheadSample& s = bucket[0];
  CHECK(s.padded);
  CHECK(s.n == 1);
  CHECK(static_cast<int>(s.states.size()) == 8);
  for (int k = s.n; k < 8; ++k) {
    CHECK(s.states[k].v == s.states[s.n - 1].v);  // absorbing terminal
    CHECK(s.rewards[k] == 0.0);
  }
  CHECK(s.total_reward() == s.rewards[0]);
}

TEST_CASE("bank building is deterministic in the seed") {
  policy::PolicyParams params = policy::init_params(small_arch(), 3);
  cola::SampleBank a = small_bank(params, 5, 3, 42);
  cola::SampleBank b = small_bank(params, 5, 3, 42);
  REQUIRE(a.total() == b.total());
  for (const auto& [id, bucket] : a.buckets) {
    const auto& other = b.buckets.at(id);
    REQUIRE(bucket.size() == other.size());
    for (size_t i = 0; i < bucket.size(); ++i) {
      CHECK(bucket[i].actions == other[i].actions);
      CHECK(bucket[i].rewards == other[i].rewards);
    }
  }
}

TEST_CASE("conjecture sampling respects the belief and checks coverage") {
  policy::PolicyParams params = policy::init_params(small_arch(), 3);
  cola::SampleBank bank = small_bank(params);
  RngStream rng(5);

  // All mass on compliant: every draw comes from that bucket.
  auto samples = cola::sample_conjecture(bank, make_belief(1.0), 64, rng);
  REQUIRE(samples.size() == 64);
  for (const auto* s : samples) CHECK(s->mode_id == "compliant");

  // Zero draws is legal.
  CHECK(cola::sample_conjecture(bank, make_belief(0.5), 0, rng).empty());
  CHECK_THROWS_AS(cola::sample_conjecture(bank, make_belief(0.5), -1, rng),
                  UsageError);

  // Mass on a mode the bank does not know is a coverage error.
  belief::Belief odd;
  odd.probs = {0.5, 0.5};
  odd.mode_ids = {"compliant", "mystery"};
  CHECK_THROWS_AS(cola::sample_conjecture(bank, odd, 8, rng),
                  BankCoverageError);

  // A mode with zero mass may be absent from the bank.
  cola::SampleBank comp_only = bank;
  comp_only.buckets.erase("jaywalk");
  auto ok = cola::sample_conjecture(comp_only, make_belief(1.0), 8, rng);
  CHECK(ok.size() == 8);
}

TEST_CASE("surrogate at the collection policy is the mean window reward") {
  policy::PolicyParams params = policy::init_params(small_arch(), 7);
  cola::SampleBank bank = small_bank(params, 6, 3, 13);
  RngStream rng(17);
  auto samples = cola::sample_conjecture(bank, make_belief(0.5), 48, rng);
  double expect = 0.0;
  for (const auto* s : samples) expect += s->total_reward();
  expect /= static_cast<double>(samples.size());
  cola::SurrogateStats stats;
  double got = cola::surrogate_objective(params, params, samples, &stats);
  CHECK(got == doctest::Approx(expect).epsilon(1e-12));
  CHECK(stats.clip_events == 0);
}

TEST_CASE("surrogate rejects samples from a different policy version") {
  policy::PolicyParams params = policy::init_params(small_arch(), 7);
  cola::SampleBank bank = small_bank(params);
  RngStream rng(19);
  auto samples = cola::sample_conjecture(bank, make_belief(0.5), 8, rng);
  policy::PolicyParams other = params;
  other.version = "meta-999-1";
  CHECK_THROWS_AS(cola::surrogate_objective(params, other, samples, nullptr),
                  StaleBankError);
  CHECK_THROWS_AS(cola::surrogate_gradient(params, other, samples, nullptr),
                  StaleBankError);
}

TEST_CASE("surrogate gradient matches central finite differences") {
  policy::PolicyParams theta_old = policy::init_params(small_arch(), 23);
  cola::SampleBank bank = small_bank(theta_old, 4, 3, 29);
  RngStream rng(31);
  auto samples = cola::sample_conjecture(bank, make_belief(0.5), 16, rng);

  // Evaluate away from theta_old so the importance ratios are non-trivial.
  policy::PolicyParams theta_new = theta_old;
  RngStream prng(37);
  for (double& v : theta_new.theta) v += prng.uniform(-0.02, 0.02);

  std::vector<double> g =
      cola::surrogate_gradient(theta_new, theta_old, samples, nullptr);
  const double eps = 1e-5;
  double worst = 0.0;
  policy::PolicyParams probe = theta_new;
  for (size_t i = 0; i < probe.theta.size(); ++i) {
    probe.theta[i] = theta_new.theta[i] + eps;
    double hi = cola::surrogate_objective(probe, theta_old, samples, nullptr);
    probe.theta[i] = theta_new.theta[i] - eps;
    double lo = cola::surrogate_objective(probe, theta_old, samples, nullptr);
    probe.theta[i] = theta_new.theta[i];
    double fd = (hi - lo) / (2 * eps);
    double rel = std::abs(fd - g[i]) /
                 std::max({std::abs(fd), std::abs(g[i]), 1e-8});
    worst = std::max(worst, rel);
  }
  CHECK(worst < 1e-3);
}

namespace {

// Hand-built four-state chain with deterministic transitions and rewards,
// used to compare the importance-weighted estimator against exhaustive
// enumeration. States are encoded as distinct observations.
struct TinyMdp {
  static constexpr int kStates = 4;
  static constexpr int kK = 3;

  env::Observation encode(int s) const {
    env::Observation o;
    o.v = {10.0 * (s + 1), 2.0, 8.0, 0.0, 1.0, -1, -1, -1, -1, -1};
    return o;
  }
  int next_state(int s, int a) const { return (s + 1 + (a % 2)) % kStates; }
  double reward(int s, int a) const {
    return 0.4 + 0.05 * ((s + a) % 3);
  }

  // Expected K-step reward from state 0 under `pi`, by full enumeration.
  double enumerate(const policy::PolicyParams& pi) const {
    double total = 0.0;
    enumerate_rec(pi, 0, 0, 1.0, 0.0, total);
    return total;
  }

  void enumerate_rec(const policy::PolicyParams& pi, int s, int depth,
                     double prob, double reward_acc, double& total) const {
    if (depth == kK) {
      total += prob * reward_acc;
      return;
    }
    policy::ActionDistribution d = policy::action_probs(pi, encode(s));
    for (int a = 0; a < env::Action::kCount; ++a) {
      enumerate_rec(pi, next_state(s, a), depth + 1, prob * d.probs[a],
                    reward_acc + reward(s, a), total);
    }
  }

  // Simulate M windows under the behavior policy.
  std::vector<cola::LookaheadSample> simulate(const policy::PolicyParams& pi,
                                              int M, RngStream& rng) const {
    std::vector<cola::LookaheadSample> out;
    out.reserve(M);
    for (int m = 0; m < M; ++m) {
      cola::LookaheadSample s;
      s.mode_id = "tiny";
      s.policy_version = pi.version;
      s.n = kK;
      s.states.resize(kK);
      s.actions.resize(kK);
      s.rewards.resize(kK);
      s.behavior_logp.resize(kK);
      int st = 0;
      for (int k = 0; k < kK; ++k) {
        env::Observation o = encode(st);
        policy::ActionDistribution d = policy::action_probs(pi, o);
        int a = policy::sample_action(d, rng);
        s.states[k] = o;
        s.actions[k] = a;
        s.rewards[k] = reward(st, a);
        s.behavior_logp[k] = std::log(d.probs[a]);
        st = next_state(st, a);
      }
      out.push_back(std::move(s));
    }
    return out;
  }
};

}  // namespace

TEST_CASE("surrogate matches enumeration on the four-state chain") {
  TinyMdp mdp;
  policy::PolicyParams behavior = policy::init_params(small_arch(), 41);
  behavior.version = "tiny-behavior";
  RngStream rng(43);
  std::vector<cola::LookaheadSample> store = mdp.simulate(behavior, 10000, rng);
  std::vector<const cola::LookaheadSample*> samples;
  samples.reserve(store.size());
  for (const auto& s : store) samples.push_back(&s);

  // On-policy: theta_new = behavior.
  double v_b = mdp.enumerate(behavior);
  double got_b = cola::surrogate_objective(behavior, behavior, samples);
  CHECK(std::abs(got_b - v_b) < 0.01 * std::abs(v_b));

  // Off-policy: a perturbed target, still covered by the behavior policy.
  policy::PolicyParams target = behavior;
  RngStream prng(47);
  for (double& v : target.theta) v += prng.uniform(-0.05, 0.05);
  double v_t = mdp.enumerate(target);
  double got_t = cola::surrogate_objective(target, behavior, samples);
  CHECK(std::abs(got_t - v_t) < 0.01 * std::abs(v_t));
}

TEST_CASE("log ratios are clipped and counted") {
  policy::PolicyParams params = policy::init_params(small_arch(), 53);
  params.version = "clip-test";
  cola::LookaheadSample s;
  s.mode_id = "tiny";
  s.policy_version = "clip-test";
  s.n = 1;
  s.states.resize(1);
  s.states[0].v = {10, 2, 8, 0, 1, -1, -1, -1, -1, -1};
  s.actions = {0};
  s.rewards = {1.0};
  s.behavior_logp = {-100.0};  // vastly less likely than under params
  std::vector<const cola::LookaheadSample*> samples = {&s};
  cola::SurrogateStats stats;
  double v = cola::surrogate_objective(params, params, samples, &stats);
  CHECK(stats.clip_events == 1);
  CHECK(v == doctest::Approx(std::exp(20.0)).epsilon(1e-9));
}

TEST_CASE("solve_clo accepts only within the trust region") {
  policy::PolicyParams params = policy::init_params(small_arch(), 59);
  cola::SampleBank bank = small_bank(params, 5, 4, 61);
  cola::CloConfig cfg;
  cfg.M = 24;
  cfg.delta = 0.01;
  cfg.max_iters = 3;
  RngStream rng(67);

  int accepted = 0;
  for (int rep = 0; rep < 100; ++rep) {
    belief::Belief b = make_belief(rng.uniform());
    cola::CLOResult res = cola::solve_clo(params, b, bank, cfg, rng);
    if (res.accepted) {
      ++accepted;
      CHECK(res.achieved_kl <= cfg.delta + 1e-6);
      CHECK(res.surrogate_after >= res.surrogate_before - 1e-8);
      CHECK(res.theta_new.theta != params.theta);
      CHECK(res.theta_new.version == params.version);
    } else {
      CHECK(res.theta_new.theta == params.theta);
    }
  }
  // The solver should find improving steps most of the time.
  CHECK(accepted > 50);
}

TEST_CASE("a zero trust region never moves the parameters") {
  policy::PolicyParams params = policy::init_params(small_arch(), 71);
  cola::SampleBank bank = small_bank(params, 5, 3, 73);
  cola::CloConfig cfg;
  cfg.M = 16;
  cfg.delta = 0.0;
  RngStream rng(79);
  cola::CLOResult res = cola::solve_clo(params, make_belief(0.4), bank, cfg, rng);
  CHECK(!res.accepted);
  CHECK(res.theta_new.theta == params.theta);
  CHECK(res.iterations == 0);
}

TEST_CASE("cola_step is a no-op on an empty bank") {
  policy::PolicyParams params = policy::init_params(small_arch(), 83);
  cola::SampleBank bank;
  bank.K = 5;
  bank.policy_version = params.version;
  cola::CloConfig cfg;
  RngStream rng(89);
  policy::PolicyParams out =
      cola::cola_step(params, make_belief(0.5), bank, cfg, rng);
  CHECK(out.theta == params.theta);
  CHECK(out.version == params.version);
}

TEST_CASE("solve_clo rejects a bank collected under another policy") {
  policy::PolicyParams params = policy::init_params(small_arch(), 97);
  cola::SampleBank bank = small_bank(params, 5, 3, 101);
  policy::PolicyParams stranger = policy::init_params(small_arch(), 98);
  stranger.version = "init-98";
  cola::CloConfig cfg;
  cfg.M = 8;
  RngStream rng(103);
  CHECK_THROWS_AS(
      cola::solve_clo(stranger, make_belief(0.5), bank, cfg, rng),
      StaleBankError);
}

TEST_CASE("bank staleness is zero for the collector and grows with drift") {
  policy::PolicyParams params = policy::init_params(small_arch(), 107);
  cola::SampleBank bank = small_bank(params, 5, 3, 109);
  CHECK(cola::bank_staleness(bank, params, params) == 0.0);
  policy::PolicyParams moved = params;
  for (double& v : moved.theta) v += 0.05;
  CHECK(cola::bank_staleness(bank, params, moved) > 0.0);
}

TEST_CASE("bank validation catches internal inconsistencies") {
  policy::PolicyParams params = policy::init_params(small_arch(), 113);
  cola::SampleBank bank = small_bank(params, 5, 2, 127);
  cola::SampleBank bad = bank;
  bad.buckets.begin()->second[0].mode_id = "wrong";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = bank;
  bad.buckets.begin()->second[0].policy_version = "other";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = bank;
  bad.buckets.begin()->second[0].n = 99;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = bank;
  bad.K = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
