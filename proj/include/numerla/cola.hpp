#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "numerla/belief.hpp"
#include "numerla/env.hpp"
#include "numerla/policy.hpp"

namespace numerla::cola {

// One K-step lookahead window cut from a stored rollout. Arrays are padded to
// K entries but only the first n carry real transitions; padded tails came
// from an episode shorter than K (absorbing terminal, zero reward) and are
// skipped by every computation.
struct LookaheadSample {
  std::vector<env::Observation> states;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<double> behavior_logp;
  int n = 0;
  bool padded = false;
  std::string mode_id;
  std::string policy_version;

  double total_reward() const;
};

struct SampleBank {
  int K = 10;
  std::string policy_version;
  std::map<std::string, std::vector<LookaheadSample>> buckets;

  size_t total() const;
  void validate() const;
};

struct BankConfig {
  int episodes_per_mode = 20;
  int K = 10;
  std::vector<double> gaps{15, 25, 35};  // rotated across episodes
  uint64_t seed = 0;
};

// Rolls episodes_per_mode episodes per mode under `params` (the behavior
// policy) and slices each into all complete K-windows with stride 1.
SampleBank build_sample_bank(const policy::PolicyParams& params,
                             const std::vector<env::Mode>& modes,
                             const env::SimConfig& sim, const BankConfig& cfg);

// Draws M windows: mode bucket by inverse CDF over the belief, then uniform
// within the bucket. Positive belief mass on an empty or missing bucket is a
// coverage error; M = 0 yields an empty list.
std::vector<const LookaheadSample*> sample_conjecture(const SampleBank& bank,
                                                      const belief::Belief& b,
                                                      int M, RngStream& rng);

struct SurrogateStats {
  long clip_events = 0;
};

// Importance-weighted lookahead return: mean over samples of
//   exp(sum_k log pi(a_k|s_k; theta_new) - behavior_logp_k) * sum_k r_k
// with the log-ratio clipped at +20. theta_old must be the policy the samples
// were collected under (version tags checked -> StaleBankError).
double surrogate_objective(const policy::PolicyParams& theta_new,
                           const policy::PolicyParams& theta_old,
                           std::span<const LookaheadSample* const> samples,
                           SurrogateStats* stats = nullptr);

std::vector<double> surrogate_gradient(
    const policy::PolicyParams& theta_new,
    const policy::PolicyParams& theta_old,
    std::span<const LookaheadSample* const> samples,
    SurrogateStats* stats = nullptr);

struct CloConfig {
  int K = 10;
  int M = 64;
  double delta = 0.01;  // empirical mean-KL trust region
  int max_iters = 5;
  int max_backtracks = 20;
};

struct CLOResult {
  policy::PolicyParams theta_new;
  double surrogate_before = 0.0;
  double surrogate_after = 0.0;
  double achieved_kl = 0.0;
  bool accepted = false;
  int iterations = 0;
  long clip_events = 0;
};

// Projected ascent on the surrogate: propose theta' + eta * grad, halve eta
// until the empirical KL over the samples' states stays within delta and the
// surrogate does not decrease. Accepted results satisfy
//   achieved_kl <= delta + 1e-6  and  surrogate_after >= surrogate_before - 1e-8.
CLOResult solve_clo(const policy::PolicyParams& theta, const belief::Belief& b,
                    const SampleBank& bank, const CloConfig& cfg,
                    RngStream& rng);

// One online adaptation: conjecture from the bank under the current belief,
// solve the trust-region step, return the accepted parameters (or theta
// unchanged; an entirely empty bank is a no-op).
policy::PolicyParams cola_step(const policy::PolicyParams& theta,
                               const belief::Belief& b, const SampleBank& bank,
                               const CloConfig& cfg, RngStream& rng);

// Staleness guard for cross-episode parameter carry: mean KL between the
// bank's collection policy and `current` over a deterministic probe set of
// bank states (capped at 256).
double bank_staleness(const SampleBank& bank,
                      const policy::PolicyParams& collector,
                      const policy::PolicyParams& current);

}  // namespace numerla::cola
