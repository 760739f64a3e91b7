#include "numerla/ssc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "numerla/errors.hpp"

namespace numerla::ssc {

bool Predicate::eval(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != dim) {
    throw UsageError("predicate over dim " + std::to_string(dim) +
                     " evaluated on a vector of size " +
                     std::to_string(x.size()));
  }
  for (const LinearTerm& t : terms) {
    double dot = 0.0;
    for (int i = 0; i < dim; ++i) dot += t.w[i] * x[i];
    if (!(dot <= t.c)) return false;
  }
  return true;
}

void Predicate::validate() const {
  if (dim <= 0) throw ConfigError("predicate dimension must be positive");
  for (const LinearTerm& t : terms) {
    if (static_cast<int>(t.w.size()) != dim) {
      throw ConfigError("predicate term weight size != predicate dimension");
    }
    for (double w : t.w) {
      if (!std::isfinite(w)) throw ConfigError("non-finite predicate weight");
    }
    if (!std::isfinite(t.c)) throw ConfigError("non-finite predicate bound");
  }
}

void ConstraintSet::validate() const {
  if (rules.empty()) throw ConfigError("constraint set has no rules");
  int dim = rules.front().guard.dim;
  for (const Rule& r : rules) {
    r.guard.validate();
    if (r.guard.dim != dim) {
      throw ConfigError("constraint set mixes guard dimensions");
    }
    if (r.allowed.empty()) throw ConfigError("rule allows no actions");
    for (size_t i = 0; i < r.allowed.size(); ++i) {
      int a = r.allowed[i];
      if (a < 0 || a >= env::Action::kCount) {
        throw ConfigError("rule allows action index out of range");
      }
      if (i > 0 && r.allowed[i - 1] >= a) {
        throw ConfigError("rule allowed set must be sorted and unique");
      }
    }
  }
  if (!rules.back().guard.terms.empty()) {
    throw ConfigError("last rule must be an unguarded default");
  }
}

const Rule& ConstraintSet::match(std::span<const double> s_hat) const {
  for (const Rule& r : rules) {
    if (r.guard.eval(s_hat)) return r;
  }
  throw UsageError("no rule matched; constraint set lacks a default");
}

int ConstraintSet::total_allowed() const {
  int n = 0;
  for (const Rule& r : rules) n += static_cast<int>(r.allowed.size());
  return n;
}

void SSCFunction::validate() const {
  if (version < 0) throw ConfigError("knowledge version must be non-negative");
  if (feature_dim <= 0) throw ConfigError("feature dimension must be positive");
  for (const SscCase& c : cases) {
    c.predicate.validate();
    if (c.predicate.dim != feature_dim) {
      throw ConfigError("case predicate dimension != knowledge feature_dim");
    }
    c.constraints.validate();
  }
}

const ConstraintSet* evaluate_ssc(const SSCFunction& f,
                                  std::span<const double> features) {
  for (const SscCase& c : f.cases) {
    if (c.predicate.eval(features)) return &c.constraints;
  }
  return nullptr;
}

bool covers(const SSCFunction& f, std::span<const double> features) {
  return evaluate_ssc(f, features) != nullptr;
}

int safe(const env::SimConfig& cfg, const env::WorldState& s, env::Action a,
         const SafetyAssessor& assessor) {
  if (s.terminal) return 0;
  double v1 = std::clamp(s.v_c + a.value() * cfg.a_max * cfg.dt, 0.0, cfg.v_max);
  double danger_radius = cfg.crossing_half_width + assessor.d_safe;
  for (int k = 1; k <= assessor.horizon; ++k) {
    double x = s.x_c + k * v1 * cfg.dt;
    double y = std::min(s.y_p + k * s.v_p * cfg.dt, cfg.lane_width);
    bool in_band = y > cfg.lane_band_lo && y < cfg.lane_band_hi;
    if (in_band && std::abs(x - s.crossing_pos) < danger_radius) return 1;
  }
  return 0;
}

ShieldOutcome apply_constraint(const policy::ActionDistribution& dist,
                               const ConstraintSet& cs,
                               std::span<const double> s_hat) {
  ShieldOutcome out;
  int idx = -1;
  for (size_t i = 0; i < cs.rules.size(); ++i) {
    if (cs.rules[i].guard.eval(s_hat)) {
      idx = static_cast<int>(i);
      break;
    }
  }
  if (idx < 0) throw UsageError("no rule matched; constraint set lacks a default");
  out.rule_index = idx;

  const std::vector<int>& allowed = cs.rules[idx].allowed;
  std::array<bool, env::Action::kCount> keep{};
  for (int a : allowed) keep[a] = true;

  double mass = 0.0;
  for (int a = 0; a < env::Action::kCount; ++a) {
    if (keep[a]) {
      mass += dist.probs[a];
    } else if (dist.probs[a] > 0.0) {
      out.intervened = true;
    }
  }
  if (mass < 1e-12) {
    out.fallback = true;
    out.intervened = true;
    out.dist.probs.fill(0.0);
    out.dist.probs[4] = 1.0;  // full brake
    return out;
  }
  for (int a = 0; a < env::Action::kCount; ++a) {
    out.dist.probs[a] = keep[a] ? dist.probs[a] / mass : 0.0;
  }
  return out;
}

namespace {

// Draw one mode index from the context belief restricted to g; uniform over g
// when the belief puts no mass on any of them.
size_t draw_mode(const std::vector<env::Mode>& g, const SscapContext& ctx,
                 RngStream& rng) {
  std::vector<double> w(g.size(), 0.0);
  double total = 0.0;
  if (ctx.b != nullptr) {
    for (size_t i = 0; i < g.size(); ++i) {
      for (size_t j = 0; j < ctx.b->mode_ids.size(); ++j) {
        if (ctx.b->mode_ids[j] == g[i].id) {
          w[i] = ctx.b->probs[j];
          break;
        }
      }
      total += w[i];
    }
  }
  if (total <= 0.0) {
    return static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(g.size()) - 1));
  }
  double u = rng.uniform() * total;
  double cum = 0.0;
  for (size_t i = 0; i < g.size(); ++i) {
    cum += w[i];
    if (u < cum) return i;
  }
  return g.size() - 1;
}

}  // namespace

double sscap_objective(const ConstraintSet& phi,
                       const std::vector<env::Mode>& g,
                       const SscapContext& ctx, RngStream& rng) {
  if (ctx.sim == nullptr || ctx.theta == nullptr) {
    throw UsageError("sscap context needs a simulator and policy parameters");
  }
  if (g.empty()) throw UsageError("sscap objective over an empty mode set");
  if (ctx.m_eval <= 0) throw ConfigError("sscap m_eval must be positive");
  if (ctx.K <= 0) throw ConfigError("sscap K must be positive");
  phi.validate();

  double total_unsafe = 0.0;
  for (int m = 0; m < ctx.m_eval; ++m) {
    const env::Mode& mode = g[draw_mode(g, ctx, rng)];
    auto [state, obs] = env::reset(*ctx.sim, mode, rng);
    for (int k = 0; k < ctx.K && !state.terminal; ++k) {
      policy::ActionDistribution dist = policy::action_probs(*ctx.theta, obs);
      ShieldOutcome shielded = apply_constraint(dist, phi, obs.s_hat());
      int a = policy::sample_action(shielded.dist, rng);
      total_unsafe += safe(*ctx.sim, state, env::Action{a}, ctx.assessor);
      env::StepResult res = env::step(*ctx.sim, state, env::Action{a}, mode, rng);
      state = res.next_state;
      obs = res.obs;
      if (res.done) break;
    }
  }
  return total_unsafe / static_cast<double>(ctx.m_eval);
}

std::vector<ConstraintSet> default_grammar() {
  const std::vector<std::vector<int>> allowed_sets = {
      {0, 1, 2, 3, 4, 5, 6},  // unrestricted
      {0, 4, 5, 6},           // no throttle
      {4, 5, 6},              // brake only
  };
  const std::vector<double> thresholds = {5.0, 10.0, 15.0};

  auto sensed_term = []() {
    return LinearTerm{{0.0, -1.0, 0.0, 0.0, 0.0}, 0.0};  // d_p >= 0
  };
  auto near_term = [](double T) {
    return LinearTerm{{1.0, 0.0, 0.0, 0.0, 0.0}, T};  // d_c <= T
  };

  std::vector<ConstraintSet> grammar;
  for (const auto& allowed : allowed_sets) {
    // Unguarded: the set applies everywhere.
    ConstraintSet cs;
    cs.rules.push_back(Rule{Predicate{5, {}}, allowed});
    grammar.push_back(cs);
    for (double T : thresholds) {
      ConstraintSet guarded;
      guarded.rules.push_back(
          Rule{Predicate{5, {sensed_term(), near_term(T)}}, allowed});
      guarded.rules.push_back(Rule{Predicate{5, {}}, allowed_sets[0]});
      grammar.push_back(guarded);
    }
  }
  return grammar;
}

ConstraintSet sscap_optimize(const std::vector<env::Mode>& g,
                             const SscapContext& ctx,
                             const std::vector<ConstraintSet>& grammar,
                             RngStream& rng) {
  if (grammar.empty()) throw UsageError("sscap grammar is empty");
  // Each candidate gets its own derived stream so evaluation order cannot
  // leak randomness between candidates and re-runs reproduce exactly.
  uint64_t base = rng.next_u64();
  constexpr double kTieEps = 1e-12;
  double best_obj = std::numeric_limits<double>::infinity();
  int best_allowed = -1;
  size_t best_idx = 0;
  for (size_t i = 0; i < grammar.size(); ++i) {
    RngStream cand_rng(RngStream::derive(base, i));
    double obj = sscap_objective(grammar[i], g, ctx, cand_rng);
    int allowed = grammar[i].total_allowed();
    bool better = obj < best_obj - kTieEps ||
                  (std::abs(obj - best_obj) <= kTieEps && allowed > best_allowed);
    if (better) {
      best_obj = obj;
      best_allowed = allowed;
      best_idx = i;
    }
  }
  return grammar[best_idx];
}

SSCFunction ssca_update(const SSCFunction& f,
                        const std::vector<env::Mode>& new_modes,
                        const SscapContext& ctx,
                        const std::vector<ConstraintSet>& grammar,
                        RngStream& rng, SscaInfo* info) {
  f.validate();
  std::vector<env::Mode> uncovered;
  for (const env::Mode& m : new_modes) {
    std::vector<double> feats = m.features();
    if (static_cast<int>(feats.size()) != f.feature_dim) {
      throw ConfigError("mode '" + m.id + "' feature dimension " +
                        std::to_string(feats.size()) + " != knowledge " +
                        std::to_string(f.feature_dim));
    }
    if (!covers(f, feats)) uncovered.push_back(m);
  }
  if (info != nullptr) {
    info->uncovered = static_cast<int>(uncovered.size());
    info->box_overlaps_existing = false;
  }
  if (uncovered.empty()) return f;

  int dim = f.feature_dim;
  std::vector<double> lo(dim, std::numeric_limits<double>::infinity());
  std::vector<double> hi(dim, -std::numeric_limits<double>::infinity());
  for (const env::Mode& m : uncovered) {
    std::vector<double> feats = m.features();
    for (int d = 0; d < dim; ++d) {
      lo[d] = std::min(lo[d], feats[d]);
      hi[d] = std::max(hi[d], feats[d]);
    }
  }

  Predicate box;
  box.dim = dim;
  for (int d = 0; d < dim; ++d) {
    LinearTerm upper{std::vector<double>(dim, 0.0), hi[d]};
    upper.w[d] = 1.0;
    LinearTerm lower{std::vector<double>(dim, 0.0), -lo[d]};
    lower.w[d] = -1.0;
    box.terms.push_back(std::move(upper));
    box.terms.push_back(std::move(lower));
  }

  if (info != nullptr && dim <= 16) {
    // Overlap probe: a box corner landing inside an existing case is allowed
    // (ordered dispatch keeps old behavior there) but worth surfacing.
    std::vector<double> corner(dim);
    for (uint32_t bits = 0; bits < (1u << dim); ++bits) {
      for (int d = 0; d < dim; ++d) {
        corner[d] = (bits >> d) & 1u ? hi[d] : lo[d];
      }
      if (covers(f, corner)) {
        info->box_overlaps_existing = true;
        break;
      }
    }
  }

  SSCFunction out = f;
  out.version = f.version + 1;
  out.cases.push_back(SscCase{box, sscap_optimize(uncovered, ctx, grammar, rng)});
  out.validate();
  return out;
}

SSCFunction baseline_knowledge() {
  auto feature_ge = [](int d, double c) {
    LinearTerm t{std::vector<double>(env::Mode::kFeatureDim, 0.0), -c};
    t.w[d] = -1.0;
    return t;
  };
  auto feature_le = [](int d, double c) {
    LinearTerm t{std::vector<double>(env::Mode::kFeatureDim, 0.0), c};
    t.w[d] = 1.0;
    return t;
  };

  // Guards over the reduced state (d_c, d_p, v_c, v_p, l).
  auto dc_le = [](double c) { return LinearTerm{{1, 0, 0, 0, 0}, c}; };
  auto dp_ge = [](double c) { return LinearTerm{{0, -1, 0, 0, 0}, -c}; };
  auto vc_ge = [](double c) { return LinearTerm{{0, 0, -1, 0, 0}, -c}; };

  const std::vector<int> all = {0, 1, 2, 3, 4, 5, 6};

  auto guard_rules = [&](double speed_cap) {
    ConstraintSet cs;
    // Committed pass: hugging the crossing with nothing left in the lane band
    // is cleared fastest at full throttle; lingering there is the hazard.
    cs.rules.push_back(Rule{Predicate{5, {dc_le(2.2)}}, {1}});
    // A sensed pedestrian who has not cleared the lane pins the vehicle to a
    // full-brake hold; discrete braking from the capped approach speed stops
    // the vehicle short of the crossing window from worst-case sensing range.
    // The -d_p form also rejects the masked value (-1).
    cs.rules.push_back(Rule{Predicate{5, {dp_ge(0.45)}}, {4}});
    // Approach speed stays recoverable: above the cap only coasting or
    // braking, so one throttle step from just below it bounds the speed.
    cs.rules.push_back(Rule{Predicate{5, {vc_ge(speed_cap)}}, {0, 4, 5, 6}});
    cs.rules.push_back(Rule{Predicate{5, {}}, all});
    return cs;
  };

  SSCFunction f;
  f.version = 1;
  f.feature_dim = env::Mode::kFeatureDim;

  SscCase compliant_like;
  compliant_like.predicate.dim = env::Mode::kFeatureDim;
  compliant_like.predicate.terms = {feature_ge(0, 0.5), feature_le(2, 0.3)};
  compliant_like.constraints = guard_rules(10.5);
  f.cases.push_back(std::move(compliant_like));

  SscCase jaywalk_like;
  jaywalk_like.predicate.dim = env::Mode::kFeatureDim;
  jaywalk_like.predicate.terms = {feature_ge(1, 0.5), feature_le(3, 0.6)};
  jaywalk_like.constraints = guard_rules(9.5);
  f.cases.push_back(std::move(jaywalk_like));

  f.validate();
  return f;
}

}  // namespace numerla::ssc
