#include "numerla/cola.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "numerla/errors.hpp"

namespace numerla::cola {

namespace {
constexpr double kLogRatioClip = 20.0;
}

double LookaheadSample::total_reward() const {
  double s = 0.0;
  for (int k = 0; k < n; ++k) s += rewards[k];
  return s;
}

size_t SampleBank::total() const {
  size_t n = 0;
  for (const auto& [id, bucket] : buckets) n += bucket.size();
  return n;
}

void SampleBank::validate() const {
  if (K <= 0) throw ConfigError("sample bank K must be positive");
  for (const auto& [id, bucket] : buckets) {
    for (const LookaheadSample& s : bucket) {
      if (s.mode_id != id) throw ConfigError("bank bucket/mode id mismatch");
      if (s.n <= 0 || s.n > K) throw ConfigError("bank sample length invalid");
      size_t len = static_cast<size_t>(K);
      if (s.states.size() != len || s.actions.size() != len ||
          s.rewards.size() != len || s.behavior_logp.size() != len) {
        throw ConfigError("bank sample arrays must have length K");
      }
      if (s.policy_version != policy_version) {
        throw ConfigError("bank sample policy version mismatch");
      }
    }
  }
}

SampleBank build_sample_bank(const policy::PolicyParams& params,
                             const std::vector<env::Mode>& modes,
                             const env::SimConfig& sim, const BankConfig& cfg) {
  params.validate();
  sim.validate();
  if (modes.empty()) throw ConfigError("build_sample_bank: no modes");
  if (cfg.K <= 0) throw ConfigError("build_sample_bank: K must be positive");
  if (cfg.episodes_per_mode < 0) {
    throw ConfigError("build_sample_bank: negative episodes_per_mode");
  }
  if (cfg.gaps.empty()) throw ConfigError("build_sample_bank: no gaps");

  SampleBank bank;
  bank.K = cfg.K;
  bank.policy_version = params.version;

  for (size_t mi = 0; mi < modes.size(); ++mi) {
    const env::Mode& mode = modes[mi];
    mode.validate();
    auto& bucket = bank.buckets[mode.id];
    for (int e = 0; e < cfg.episodes_per_mode; ++e) {
      RngStream rng(
          RngStream::derive(RngStream::derive(cfg.seed, mi), e));
      env::SimConfig ep_sim = sim;
      ep_sim.initial_gap_m = cfg.gaps[e % cfg.gaps.size()];

      std::vector<env::Observation> obs_seq;
      std::vector<int> act_seq;
      std::vector<double> rew_seq, logp_seq;
      auto [state, obs] = env::reset(ep_sim, mode, rng);
      while (true) {
        policy::ActionDistribution dist = policy::action_probs(params, obs);
        int a = policy::sample_action(dist, rng);
        env::StepResult res =
            env::step(ep_sim, state, env::Action{a}, mode, rng);
        obs_seq.push_back(obs);
        act_seq.push_back(a);
        rew_seq.push_back(res.reward);
        logp_seq.push_back(std::log(std::max(dist.probs[a], 1e-300)));
        state = res.next_state;
        obs = res.obs;
        if (res.done) break;
      }

      int T = static_cast<int>(obs_seq.size());
      auto cut_window = [&](int start, int len) {
        LookaheadSample s;
        s.mode_id = mode.id;
        s.policy_version = params.version;
        s.n = len;
        s.padded = len < cfg.K;
        s.states.resize(cfg.K);
        s.actions.assign(cfg.K, 0);
        s.rewards.assign(cfg.K, 0.0);
        s.behavior_logp.assign(cfg.K, 0.0);
        for (int k = 0; k < len; ++k) {
          s.states[k] = obs_seq[start + k];
          s.actions[k] = act_seq[start + k];
          s.rewards[k] = rew_seq[start + k];
          s.behavior_logp[k] = logp_seq[start + k];
        }
        // Absorbing-terminal padding: repeat the final observation.
        for (int k = len; k < cfg.K; ++k) s.states[k] = obs_seq[start + len - 1];
        bucket.push_back(std::move(s));
      };

      if (T >= cfg.K) {
        for (int start = 0; start + cfg.K <= T; ++start) cut_window(start, cfg.K);
      } else if (T > 0) {
        cut_window(0, T);
      }
    }
  }
  return bank;
}

std::vector<const LookaheadSample*> sample_conjecture(const SampleBank& bank,
                                                      const belief::Belief& b,
                                                      int M, RngStream& rng) {
  b.validate();
  if (M < 0) throw UsageError("sample_conjecture: negative M");
  std::vector<const LookaheadSample*> out;
  if (M == 0) return out;
  for (size_t i = 0; i < b.probs.size(); ++i) {
    if (b.probs[i] <= 0.0) continue;
    auto it = bank.buckets.find(b.mode_ids[i]);
    if (it == bank.buckets.end() || it->second.empty()) {
      throw BankCoverageError("belief puts mass on mode '" + b.mode_ids[i] +
                              "' but the bank has no samples for it");
    }
  }
  out.reserve(M);
  for (int m = 0; m < M; ++m) {
    double u = rng.uniform();
    double cum = 0.0;
    size_t pick = b.probs.size() - 1;
    for (size_t i = 0; i < b.probs.size(); ++i) {
      cum += b.probs[i];
      if (u < cum) {
        pick = i;
        break;
      }
    }
    const auto& bucket = bank.buckets.at(b.mode_ids[pick]);
    int j = rng.uniform_int(0, static_cast<int>(bucket.size()) - 1);
    out.push_back(&bucket[j]);
  }
  return out;
}

namespace {

void check_versions(const policy::PolicyParams& theta_old,
                    std::span<const LookaheadSample* const> samples) {
  for (const LookaheadSample* s : samples) {
    if (s->policy_version != theta_old.version) {
      throw StaleBankError("sample collected under policy version '" +
                           s->policy_version + "' but theta_old is '" +
                           theta_old.version + "'");
    }
  }
}

// Pre-normalized inputs for every real step of the drawn samples, shared by
// the surrogate, its gradient, and the KL evaluations within one solve.
struct SolveWorkspace {
  std::vector<const LookaheadSample*> samples;
  std::vector<std::array<double, env::Observation::kDim>> norm;  // per step
  std::vector<int> sample_offset;  // start index into norm per sample
  std::vector<std::array<double, env::Action::kCount>> base_probs;

  void build(std::span<const LookaheadSample* const> in,
             const policy::PolicyParams& base) {
    samples.assign(in.begin(), in.end());
    sample_offset.resize(samples.size());
    size_t steps = 0;
    for (const LookaheadSample* s : samples) steps += s->n;
    norm.clear();
    norm.reserve(steps);
    for (size_t i = 0; i < samples.size(); ++i) {
      sample_offset[i] = static_cast<int>(norm.size());
      for (int k = 0; k < samples[i]->n; ++k) {
        norm.push_back(policy::normalize_observation(samples[i]->states[k]));
      }
    }
    base_probs.resize(norm.size());
    policy::EvalWorkspace ws;
    for (size_t i = 0; i < norm.size(); ++i) {
      policy::forward_normalized(base, norm[i].data(), ws);
      base_probs[i] = ws.probs;
    }
  }

  // Mean KL(base || candidate) over all stored states.
  double kl_against(const policy::PolicyParams& cand) const {
    policy::EvalWorkspace ws;
    double total = 0.0;
    for (size_t i = 0; i < norm.size(); ++i) {
      policy::forward_normalized(cand, norm[i].data(), ws);
      double kl = 0.0;
      for (int k = 0; k < env::Action::kCount; ++k) {
        double po = base_probs[i][k];
        if (po <= 0.0) continue;
        kl += po * (std::log(po) - std::log(std::max(ws.probs[k], 1e-300)));
      }
      total += kl;
    }
    return norm.empty() ? 0.0 : total / static_cast<double>(norm.size());
  }

  double surrogate(const policy::PolicyParams& cand, long* clips) const {
    policy::EvalWorkspace ws;
    double total = 0.0;
    for (size_t i = 0; i < samples.size(); ++i) {
      const LookaheadSample* s = samples[i];
      double logratio = 0.0;
      for (int k = 0; k < s->n; ++k) {
        policy::forward_normalized(cand, norm[sample_offset[i] + k].data(), ws);
        double lp = std::log(std::max(ws.probs[s->actions[k]], 1e-300));
        logratio += lp - s->behavior_logp[k];
      }
      if (logratio > kLogRatioClip) {
        logratio = kLogRatioClip;
        if (clips) ++*clips;
      }
      total += std::exp(logratio) * s->total_reward();
    }
    double v = total / static_cast<double>(samples.size());
    if (!std::isfinite(v)) throw NumericError("non-finite surrogate value");
    return v;
  }

  std::vector<double> gradient(const policy::PolicyParams& cand,
                               long* clips) const {
    std::vector<double> grad(cand.theta.size(), 0.0);
    policy::EvalWorkspace ws;
    std::vector<policy::EvalWorkspace> traces;
    double inv_m = 1.0 / static_cast<double>(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
      const LookaheadSample* s = samples[i];
      traces.resize(s->n);
      double logratio = 0.0;
      for (int k = 0; k < s->n; ++k) {
        policy::forward_normalized(cand, norm[sample_offset[i] + k].data(),
                                   traces[k]);
        double lp = std::log(std::max(traces[k].probs[s->actions[k]], 1e-300));
        logratio += lp - s->behavior_logp[k];
      }
      if (logratio > kLogRatioClip) {
        logratio = kLogRatioClip;
        if (clips) ++*clips;
      }
      double w = std::exp(logratio) * s->total_reward() * inv_m;
      if (w == 0.0) continue;
      for (int k = 0; k < s->n; ++k) {
        policy::accumulate_log_prob_grad(cand,
                                         norm[sample_offset[i] + k].data(),
                                         traces[k], s->actions[k], w, grad);
      }
    }
    for (double g : grad) {
      if (!std::isfinite(g)) throw NumericError("non-finite surrogate gradient");
    }
    return grad;
  }
};

}  // namespace

double surrogate_objective(const policy::PolicyParams& theta_new,
                           const policy::PolicyParams& theta_old,
                           std::span<const LookaheadSample* const> samples,
                           SurrogateStats* stats) {
  theta_new.validate();
  theta_old.validate();
  if (samples.empty()) throw UsageError("surrogate over an empty sample list");
  check_versions(theta_old, samples);
  SolveWorkspace ws;
  ws.build(samples, theta_old);
  long clips = 0;
  double v = ws.surrogate(theta_new, &clips);
  if (stats) stats->clip_events += clips;
  return v;
}

std::vector<double> surrogate_gradient(
    const policy::PolicyParams& theta_new,
    const policy::PolicyParams& theta_old,
    std::span<const LookaheadSample* const> samples, SurrogateStats* stats) {
  theta_new.validate();
  theta_old.validate();
  if (samples.empty()) throw UsageError("surrogate over an empty sample list");
  check_versions(theta_old, samples);
  SolveWorkspace ws;
  ws.build(samples, theta_old);
  long clips = 0;
  std::vector<double> g = ws.gradient(theta_new, &clips);
  if (stats) stats->clip_events += clips;
  return g;
}

CLOResult solve_clo(const policy::PolicyParams& theta, const belief::Belief& b,
                    const SampleBank& bank, const CloConfig& cfg,
                    RngStream& rng) {
  theta.validate();
  if (cfg.delta < 0.0) throw ConfigError("solve_clo: negative delta");
  std::vector<const LookaheadSample*> samples =
      sample_conjecture(bank, b, cfg.M, rng);

  CLOResult res;
  res.theta_new = theta;
  if (samples.empty()) return res;
  check_versions(theta, samples);

  SolveWorkspace ws;
  ws.build(samples, theta);

  long clips = 0;
  double s0 = ws.surrogate(theta, &clips);
  res.surrogate_before = s0;
  res.surrogate_after = s0;

  policy::PolicyParams cur = theta;
  double s_cur = s0;
  double kl_cur = 0.0;
  bool moved = false;

  policy::PolicyParams cand = theta;
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    std::vector<double> g = ws.gradient(cur, &clips);
    double gnorm = std::sqrt(
        std::inner_product(g.begin(), g.end(), g.begin(), 0.0));
    if (gnorm < 1e-12 || cfg.delta == 0.0) break;
    res.iterations = iter + 1;

    // Start well past the trust region so backtracking lands near its edge.
    double eta = 4.0 * std::sqrt(2.0 * cfg.delta) / gnorm;
    bool stepped = false;
    for (int bt = 0; bt < cfg.max_backtracks; ++bt, eta *= 0.5) {
      for (size_t i = 0; i < cand.theta.size(); ++i) {
        cand.theta[i] = cur.theta[i] + eta * g[i];
      }
      double kl = ws.kl_against(cand);
      if (kl > cfg.delta) continue;
      double s = ws.surrogate(cand, &clips);
      if (s < s_cur) continue;
      cur.theta = cand.theta;
      s_cur = s;
      kl_cur = kl;
      moved = true;
      stepped = true;
      break;
    }
    if (!stepped) break;
  }

  res.clip_events = clips;
  if (moved && kl_cur <= cfg.delta + 1e-6 && s_cur >= s0 - 1e-8) {
    res.accepted = true;
    res.theta_new = cur;
    res.surrogate_after = s_cur;
    res.achieved_kl = kl_cur;
  }
  return res;
}

policy::PolicyParams cola_step(const policy::PolicyParams& theta,
                               const belief::Belief& b, const SampleBank& bank,
                               const CloConfig& cfg, RngStream& rng) {
  if (bank.total() == 0) return theta;  // nothing to conjecture from
  CLOResult res = solve_clo(theta, b, bank, cfg, rng);
  return res.accepted ? res.theta_new : theta;
}

double bank_staleness(const SampleBank& bank,
                      const policy::PolicyParams& collector,
                      const policy::PolicyParams& current) {
  std::vector<env::Observation> probe;
  constexpr size_t kMaxProbe = 256;
  for (const auto& [id, bucket] : bank.buckets) {
    for (const LookaheadSample& s : bucket) {
      if (probe.size() >= kMaxProbe) break;
      probe.push_back(s.states[0]);
    }
    if (probe.size() >= kMaxProbe) break;
  }
  if (probe.empty()) return 0.0;
  return policy::kl_divergence(collector, current, probe);
}

}  // namespace numerla::cola
