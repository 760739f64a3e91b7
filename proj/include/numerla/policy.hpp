#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "numerla/env.hpp"
#include "numerla/rng.hpp"

namespace numerla::policy {

struct PolicyArch {
  int input_dim = env::Observation::kDim;
  int hidden = 64;
  int n_actions = env::Action::kCount;

  int param_count() const {
    return input_dim * hidden + hidden + hidden * n_actions + n_actions;
  }
  bool operator==(const PolicyArch&) const = default;
};

// Flat parameter vector, layout [W1 row-major (hidden x input), b1,
// W2 row-major (actions x hidden), b2]. version tags which collection of
// rollouts a parameter vector produced (sample banks check it).
struct PolicyParams {
  PolicyArch arch;
  std::vector<double> theta;
  std::string version;

  void validate() const;  // size mismatch -> UsageError
};

struct ActionDistribution {
  std::array<double, env::Action::kCount> probs{};
};

// Fixed input normalization: distances / 50, speeds / 15, light / 2; the -1
// mask sentinel passes through unchanged. Constants are frozen so checkpoints
// stay interpretable across configs.
std::array<double, env::Observation::kDim> normalize_observation(
    const env::Observation& obs);

ActionDistribution action_probs(const PolicyParams& p,
                                const env::Observation& obs);

// Inverse-CDF over action indices in fixed order; consumes one uniform draw.
int sample_action(const ActionDistribution& dist, RngStream& rng);

double log_prob(const PolicyParams& p, const env::Observation& obs, int action);

// Analytic gradient of log pi(action | obs; theta) w.r.t. theta.
std::vector<double> log_prob_grad(const PolicyParams& p,
                                  const env::Observation& obs, int action);

// Reusable buffers for the low-level kernels below.
struct EvalWorkspace {
  std::vector<double> h;
  std::array<double, env::Action::kCount> probs{};
};

// Forward pass on a pre-normalized input (see normalize_observation); fills
// ws.h and ws.probs. Same arithmetic as action_probs, exposed so the
// lookahead solver can batch evaluations without reallocating.
void forward_normalized(const PolicyParams& p, const double* x,
                        EvalWorkspace& ws);

// grad += weight * d log pi(action | x; p) / d theta, with ws holding the
// forward_normalized result for the same (p, x).
void accumulate_log_prob_grad(const PolicyParams& p, const double* x,
                              const EvalWorkspace& ws, int action,
                              double weight, std::vector<double>& grad);

// Mean over states of KL(pi(.|s; p_old) || pi(.|s; p_new)). Empty input is a
// usage error.
double kl_divergence(const PolicyParams& p_old, const PolicyParams& p_new,
                     std::span<const env::Observation> states);

// Weights uniform in [-scale, scale] from the seeded stream, biases zero.
PolicyParams init_params(const PolicyArch& arch, uint64_t seed,
                         double scale = 0.05);

struct TrainSetup {
  env::SimConfig sim;
  std::vector<env::Mode> modes;
  std::vector<double> rho;           // mode prior, sums to 1
  std::vector<double> gaps{15, 25, 35};  // initial gap rotated per episode draw
};

struct TrainConfig {
  int episodes = 3000;
  double lr = 2e-3;
  double gamma = 0.99;
  bool use_baseline = true;  // moving average of per-episode mean return-to-go
  double baseline_alpha = 0.05;
  uint64_t seed = 1;
  double init_scale = 0.05;
  // Post-training check: mean return over eval_episodes (modes mixed by rho)
  // must exceed a uniform-random policy by eval_margin; 0 episodes skips it.
  int eval_episodes = 200;
  double eval_margin = 0.0;
};

struct TrainResult {
  PolicyParams params;
  double eval_mean_return = 0.0;
  double random_mean_return = 0.0;
  int episodes_run = 0;
};

// REINFORCE with a moving-average baseline over environments drawn from rho.
TrainResult train_meta(const TrainSetup& setup, const TrainConfig& cfg);

// Mean undiscounted return of params over n episodes (modes mixed by rho,
// gaps rotated); shared by train_meta's post-check and the tests.
double evaluate_policy(const PolicyParams& params, const TrainSetup& setup,
                       int n_episodes, uint64_t seed);

}  // namespace numerla::policy
