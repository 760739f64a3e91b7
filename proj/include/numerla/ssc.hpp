#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "numerla/belief.hpp"
#include "numerla/env.hpp"
#include "numerla/policy.hpp"

namespace numerla::ssc {

// One inequality w . x <= c.
struct LinearTerm {
  std::vector<double> w;
  double c = 0.0;
};

// Conjunction of linear inequalities; an empty term list is "true".
struct Predicate {
  int dim = 0;
  std::vector<LinearTerm> terms;

  bool eval(std::span<const double> x) const;  // dim mismatch -> UsageError
  void validate() const;
};

// Guarded action-subset rule over the reduced state (d_c, d_p, v_c, v_p, l).
struct Rule {
  Predicate guard;            // dim 5; empty terms = always true
  std::vector<int> allowed;   // non-empty, sorted, unique action indices
};

// Ordered first-match rule list; the last rule must be a default (guard true).
struct ConstraintSet {
  std::vector<Rule> rules;

  void validate() const;
  const Rule& match(std::span<const double> s_hat) const;
  int total_allowed() const;  // sum of |allowed| across rules (tie-break key)
};

struct SscCase {
  Predicate predicate;  // over mode features
  ConstraintSet constraints;
};

// Piecewise constraint function over mode-feature space, first match wins.
struct SSCFunction {
  int version = 0;
  int feature_dim = env::Mode::kFeatureDim;
  std::vector<SscCase> cases;

  void validate() const;
};

// First matching case's constraint set, or nullptr when no case covers the
// features (caller falls back or triggers expansion).
const ConstraintSet* evaluate_ssc(const SSCFunction& f,
                                  std::span<const double> features);

bool covers(const SSCFunction& f, std::span<const double> features);

// One-step lookahead occupancy test. Extrapolates the vehicle at the speed
// reached after applying `a` for one step and the pedestrian at the current
// lateral speed; returns 1 (unsafe) iff within the horizon the vehicle sits
// closer than d_safe to the crossing window while the pedestrian occupies the
// lane band, else 0 (safe).
struct SafetyAssessor {
  double d_safe = 3.0;
  int horizon = 10;
};

int safe(const env::SimConfig& cfg, const env::WorldState& s, env::Action a,
         const SafetyAssessor& assessor);

// Zeroes disallowed actions of the first matching rule and renormalizes.
// When the allowed mass is below 1e-12 the result is a one-hot full brake.
struct ShieldOutcome {
  policy::ActionDistribution dist;
  int rule_index = 0;
  bool intervened = false;  // some positive-probability action was masked
  bool fallback = false;    // allowed mass < 1e-12, one-hot brake returned
};

ShieldOutcome apply_constraint(const policy::ActionDistribution& dist,
                               const ConstraintSet& cs,
                               std::span<const double> s_hat);

struct SscapContext {
  const env::SimConfig* sim = nullptr;
  const policy::PolicyParams* theta = nullptr;
  const belief::Belief* b = nullptr;  // weights over g, renormalized
  int K = 10;
  SafetyAssessor assessor;
  int m_eval = 200;
};

// Monte-Carlo estimate of E[sum_{k<K} Safe(s_k, a_k)] under the phi-shielded
// policy, fresh rollouts from reset, modes drawn from the belief restricted
// to g (uniform over g when the belief covers none of them).
double sscap_objective(const ConstraintSet& phi,
                       const std::vector<env::Mode>& g,
                       const SscapContext& ctx, RngStream& rng);

// Fixed candidate grammar: allowed sets {all, non-throttle, brake-only} x
// guards {unguarded, pedestrian sensed AND d_c <= T for T in {5, 10, 15}}.
std::vector<ConstraintSet> default_grammar();

// Minimizes sscap_objective over the grammar; ties prefer the largest total
// allowed-action count, then the earliest grammar entry.
ConstraintSet sscap_optimize(const std::vector<env::Mode>& g,
                             const SscapContext& ctx,
                             const std::vector<ConstraintSet>& grammar,
                             RngStream& rng);

struct SscaInfo {
  int uncovered = 0;
  bool box_overlaps_existing = false;  // permitted; first match shields it
};

// Knowledge update: modes not covered by f get one new case whose predicate
// is the tightest axis-aligned box around their features and whose constraint
// set comes from sscap_optimize; appended last so existing dispatch is
// untouched. No uncovered modes -> f returned unchanged (same version).
SSCFunction ssca_update(const SSCFunction& f,
                        const std::vector<env::Mode>& new_modes,
                        const SscapContext& ctx,
                        const std::vector<ConstraintSet>& grammar,
                        RngStream& rng, SscaInfo* info = nullptr);

// Hand-written baseline knowledge: one case per standard behavior whose
// constraint sets keep the approach speed recoverable and hold the vehicle
// short of the crossing while an uncleared pedestrian is in sensor range.
SSCFunction baseline_knowledge();

}  // namespace numerla::ssc
