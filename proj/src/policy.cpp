#include "numerla/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "numerla/errors.hpp"

namespace numerla::policy {

namespace {

constexpr double kDistScale = 50.0;
constexpr double kSpeedScale = 15.0;
constexpr double kLightScale = 2.0;

// theta layout offsets.
struct Layout {
  int w1 = 0, b1 = 0, w2 = 0, b2 = 0;
  explicit Layout(const PolicyArch& a) {
    w1 = 0;
    b1 = a.input_dim * a.hidden;
    w2 = b1 + a.hidden;
    b2 = w2 + a.hidden * a.n_actions;
  }
};

struct ForwardTrace {
  std::array<double, env::Observation::kDim> x;
  EvalWorkspace ws;
};

void forward(const PolicyParams& p, const env::Observation& obs,
             ForwardTrace& tr) {
  tr.x = normalize_observation(obs);
  forward_normalized(p, tr.x.data(), tr.ws);
}

}  // namespace

void forward_normalized(const PolicyParams& p, const double* x,
                        EvalWorkspace& ws) {
  const PolicyArch& a = p.arch;
  const Layout L(a);
  const double* th = p.theta.data();
  ws.h.resize(a.hidden);
  for (int j = 0; j < a.hidden; ++j) {
    double z = th[L.b1 + j];
    const double* row = th + L.w1 + j * a.input_dim;
    for (int i = 0; i < a.input_dim; ++i) z += row[i] * x[i];
    ws.h[j] = std::tanh(z);
  }
  std::array<double, env::Action::kCount> logits{};
  double max_logit = -1e300;
  for (int k = 0; k < a.n_actions; ++k) {
    double z = th[L.b2 + k];
    const double* row = th + L.w2 + k * a.hidden;
    for (int j = 0; j < a.hidden; ++j) z += row[j] * ws.h[j];
    logits[k] = z;
    max_logit = std::max(max_logit, z);
  }
  double sum = 0.0;
  for (int k = 0; k < a.n_actions; ++k) {
    ws.probs[k] = std::exp(logits[k] - max_logit);
    sum += ws.probs[k];
  }
  for (int k = 0; k < a.n_actions; ++k) {
    ws.probs[k] /= sum;
    if (!std::isfinite(ws.probs[k])) {
      throw NumericError("non-finite action probability (parameters corrupt?)");
    }
  }
}

void accumulate_log_prob_grad(const PolicyParams& p, const double* x,
                              const EvalWorkspace& ws, int action,
                              double weight, std::vector<double>& grad) {
  const PolicyArch& a = p.arch;
  const Layout L(a);
  const double* th = p.theta.data();
  std::array<double, env::Action::kCount> dlogits{};
  for (int k = 0; k < a.n_actions; ++k) {
    dlogits[k] = weight * ((k == action ? 1.0 : 0.0) - ws.probs[k]);
  }
  thread_local std::vector<double> dh;
  dh.assign(a.hidden, 0.0);
  for (int k = 0; k < a.n_actions; ++k) {
    grad[L.b2 + k] += dlogits[k];
    double* gw = grad.data() + L.w2 + k * a.hidden;
    const double* row = th + L.w2 + k * a.hidden;
    for (int j = 0; j < a.hidden; ++j) {
      gw[j] += dlogits[k] * ws.h[j];
      dh[j] += dlogits[k] * row[j];
    }
  }
  for (int j = 0; j < a.hidden; ++j) {
    double dz = dh[j] * (1.0 - ws.h[j] * ws.h[j]);
    grad[L.b1 + j] += dz;
    double* gw = grad.data() + L.w1 + j * a.input_dim;
    for (int i = 0; i < a.input_dim; ++i) gw[i] += dz * x[i];
  }
}

void PolicyParams::validate() const {
  if (static_cast<int>(theta.size()) != arch.param_count()) {
    std::ostringstream msg;
    msg << "parameter vector size " << theta.size()
        << " does not match arch (expected " << arch.param_count() << ")";
    throw UsageError(msg.str());
  }
}

std::array<double, env::Observation::kDim> normalize_observation(
    const env::Observation& obs) {
  std::array<double, env::Observation::kDim> x{};
  for (int i = 0; i < env::Observation::kDim; ++i) {
    double v = obs.v[i];
    if (v == -1.0) {  // mask sentinel passes through
      x[i] = v;
      continue;
    }
    switch (i % 5) {
      case 0:
      case 1: x[i] = v / kDistScale; break;
      case 2:
      case 3: x[i] = v / kSpeedScale; break;
      default: x[i] = v / kLightScale; break;
    }
  }
  return x;
}

ActionDistribution action_probs(const PolicyParams& p,
                                const env::Observation& obs) {
  p.validate();
  ForwardTrace tr;
  forward(p, obs, tr);
  ActionDistribution d;
  d.probs = tr.ws.probs;
  return d;
}

int sample_action(const ActionDistribution& dist, RngStream& rng) {
  double u = rng.uniform();
  double cum = 0.0;
  for (int k = 0; k < env::Action::kCount; ++k) {
    cum += dist.probs[k];
    if (u < cum) return k;
  }
  return env::Action::kCount - 1;  // guards rounding at u ~ 1
}

double log_prob(const PolicyParams& p, const env::Observation& obs,
                int action) {
  env::Action::checked(action);
  ActionDistribution d = action_probs(p, obs);
  return std::log(std::max(d.probs[action], 1e-300));
}

std::vector<double> log_prob_grad(const PolicyParams& p,
                                  const env::Observation& obs, int action) {
  p.validate();
  env::Action::checked(action);
  ForwardTrace tr;
  forward(p, obs, tr);
  std::vector<double> g(p.theta.size(), 0.0);
  accumulate_log_prob_grad(p, tr.x.data(), tr.ws, action, 1.0, g);
  return g;
}

double kl_divergence(const PolicyParams& p_old, const PolicyParams& p_new,
                     std::span<const env::Observation> states) {
  if (states.empty()) throw UsageError("kl_divergence over an empty state set");
  if (!(p_old.arch == p_new.arch)) {
    throw UsageError("kl_divergence across mismatched architectures");
  }
  double total = 0.0;
  ForwardTrace to, tn;
  for (const env::Observation& s : states) {
    forward(p_old, s, to);
    forward(p_new, s, tn);
    double kl = 0.0;
    for (int k = 0; k < env::Action::kCount; ++k) {
      double po = to.ws.probs[k];
      if (po <= 0.0) continue;
      double pn = std::max(tn.ws.probs[k], 1e-300);
      kl += po * (std::log(po) - std::log(pn));
    }
    total += kl;
  }
  return total / static_cast<double>(states.size());
}

PolicyParams init_params(const PolicyArch& arch, uint64_t seed, double scale) {
  PolicyParams p;
  p.arch = arch;
  p.theta.assign(arch.param_count(), 0.0);
  const Layout L(arch);
  RngStream rng(seed);
  for (int i = 0; i < L.b1; ++i) p.theta[i] = rng.uniform(-scale, scale);
  for (int i = L.w2; i < L.b2; ++i) p.theta[i] = rng.uniform(-scale, scale);
  p.version = "init-" + std::to_string(seed);
  return p;
}

namespace {

struct EpisodeRollout {
  std::vector<env::Observation> obs;
  std::vector<int> actions;
  std::vector<double> rewards;
};

EpisodeRollout roll_episode(const PolicyParams& params,
                            const env::SimConfig& sim, const env::Mode& mode,
                            RngStream& rng) {
  EpisodeRollout out;
  auto [state, obs] = env::reset(sim, mode, rng);
  while (true) {
    ActionDistribution dist = action_probs(params, obs);
    int a = sample_action(dist, rng);
    env::StepResult res = env::step(sim, state, env::Action{a}, mode, rng);
    out.obs.push_back(obs);
    out.actions.push_back(a);
    out.rewards.push_back(res.reward);
    state = res.next_state;
    obs = res.obs;
    if (res.done) break;
  }
  return out;
}

int draw_index(const std::vector<double>& weights, RngStream& rng) {
  double u = rng.uniform();
  double cum = 0.0;
  for (size_t i = 0; i < weights.size(); ++i) {
    cum += weights[i];
    if (u < cum) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size()) - 1;
}

}  // namespace

double evaluate_policy(const PolicyParams& params, const TrainSetup& setup,
                       int n_episodes, uint64_t seed) {
  double total = 0.0;
  for (int e = 0; e < n_episodes; ++e) {
    RngStream rng(RngStream::derive(seed, e));
    int mi = draw_index(setup.rho, rng);
    env::SimConfig sim = setup.sim;
    sim.initial_gap_m = setup.gaps[e % setup.gaps.size()];
    EpisodeRollout ro = roll_episode(params, sim, setup.modes[mi], rng);
    total += std::accumulate(ro.rewards.begin(), ro.rewards.end(), 0.0);
  }
  return n_episodes > 0 ? total / n_episodes : 0.0;
}

TrainResult train_meta(const TrainSetup& setup, const TrainConfig& cfg) {
  if (setup.modes.empty() || setup.rho.size() != setup.modes.size()) {
    throw ConfigError("train_meta: modes/rho size mismatch");
  }
  if (setup.gaps.empty()) throw ConfigError("train_meta: no training gaps");
  double rho_sum = std::accumulate(setup.rho.begin(), setup.rho.end(), 0.0);
  if (std::abs(rho_sum - 1.0) > 1e-9) {
    throw ConfigError("train_meta: rho must sum to 1");
  }
  setup.sim.validate();
  for (const env::Mode& m : setup.modes) m.validate();

  PolicyParams params = init_params({}, cfg.seed, cfg.init_scale);
  std::vector<double> grad(params.theta.size());
  double baseline = 0.0;
  bool baseline_set = false;

  RngStream rng(RngStream::derive(cfg.seed, 0x7261696e));
  for (int e = 0; e < cfg.episodes; ++e) {
    int mi = draw_index(setup.rho, rng);
    env::SimConfig sim = setup.sim;
    sim.initial_gap_m = setup.gaps[e % setup.gaps.size()];
    EpisodeRollout ro = roll_episode(params, sim, setup.modes[mi], rng);

    int T = static_cast<int>(ro.rewards.size());
    std::vector<double> g_to_go(T);
    double acc = 0.0;
    for (int t = T - 1; t >= 0; --t) {
      acc = ro.rewards[t] + cfg.gamma * acc;
      g_to_go[t] = acc;
    }
    double ep_mean =
        std::accumulate(g_to_go.begin(), g_to_go.end(), 0.0) / std::max(T, 1);
    double b = cfg.use_baseline && baseline_set ? baseline : 0.0;

    // Averaging over the episode's steps keeps the update magnitude
    // comparable across short and long episodes.
    std::fill(grad.begin(), grad.end(), 0.0);
    double inv_t = 1.0 / std::max(T, 1);
    for (int t = 0; t < T; ++t) {
      double adv = (g_to_go[t] - b) * inv_t;
      std::vector<double> glp = log_prob_grad(params, ro.obs[t], ro.actions[t]);
      for (size_t i = 0; i < grad.size(); ++i) grad[i] += adv * glp[i];
    }
    for (size_t i = 0; i < grad.size(); ++i) {
      params.theta[i] += cfg.lr * grad[i];
      if (!std::isfinite(params.theta[i])) {
        std::ostringstream msg;
        msg << "training diverged at episode " << e << " (non-finite theta["
            << i << "])";
        throw TrainingError(msg.str());
      }
    }
    if (cfg.use_baseline) {
      baseline = baseline_set
                     ? baseline + cfg.baseline_alpha * (ep_mean - baseline)
                     : ep_mean;
      baseline_set = true;
    }
  }
  params.version =
      "meta-" + std::to_string(cfg.seed) + "-" + std::to_string(cfg.episodes);

  TrainResult result;
  result.params = params;
  result.episodes_run = cfg.episodes;
  if (cfg.eval_episodes > 0) {
    uint64_t eval_seed = RngStream::derive(cfg.seed, 0x6576616c);
    result.eval_mean_return =
        evaluate_policy(params, setup, cfg.eval_episodes, eval_seed);
    PolicyParams uniform;
    uniform.arch = params.arch;
    uniform.theta.assign(params.arch.param_count(), 0.0);
    uniform.version = "uniform";
    result.random_mean_return =
        evaluate_policy(uniform, setup, cfg.eval_episodes, eval_seed);
    if (!(result.eval_mean_return >
          result.random_mean_return + cfg.eval_margin)) {
      std::ostringstream msg;
      msg << "trained policy does not beat the uniform-random baseline: "
          << result.eval_mean_return << " vs " << result.random_mean_return
          << " (margin " << cfg.eval_margin << ")";
      throw TrainingError(msg.str());
    }
  }
  return result;
}

}  // namespace numerla::policy
