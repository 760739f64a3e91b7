#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "numerla/belief.hpp"
#include "numerla/cola.hpp"
#include "numerla/env.hpp"
#include "numerla/policy.hpp"
#include "numerla/ssc.hpp"

namespace numerla::harness {

enum class Method { RL, COLA, NUMERLA };
enum class Scenario { WellBehaved, Jaywalk };

const char* to_string(Method m);
const char* to_string(Scenario s);
Method method_from_string(const std::string& s);
Scenario scenario_from_string(const std::string& s);

struct ExperimentConfig {
  std::vector<Method> methods{Method::RL, Method::COLA, Method::NUMERLA};
  std::vector<Scenario> scenarios{Scenario::WellBehaved, Scenario::Jaywalk};
  std::vector<double> gaps{15, 25, 35};
  int episodes = 1000;
  uint64_t base_seed = 42;
  cola::CloConfig clo;
  int cadence = 1;              // adapt every n-th step
  int belief_window = 5;
  bool dispatch_ground_truth = false;  // shield keys on the true mode
  int jobs = 1;
};

// Frozen inputs shared by every episode of a run.
struct RunArtifacts {
  env::SimConfig sim;
  policy::PolicyParams meta;
  cola::SampleBank bank;
  ssc::SSCFunction knowledge;
  belief::ModeTransitionModel belief_model;
};

struct EpisodeRecord {
  uint64_t seed = 0;
  bool failed = false;  // episode raised; excluded from reward statistics
  double ret = 0.0;     // undiscounted
  bool collided = false;
  int steps = 0;
  env::DoneReason done_reason = env::DoneReason::None;
  int adaptations_accepted = 0;
  int adaptations_attempted = 0;
  int shield_interventions = 0;
  int shield_fallbacks = 0;
  int shield_mask_violations = 0;  // masked action left with probability > 0
  int belief_degenerate_updates = 0;
  double final_belief_truth = 0.0;  // belief mass on the true mode at the end
};

struct CellKey {
  Method method;
  Scenario scenario;
  double gap = 0.0;

  bool operator<(const CellKey& o) const;
  bool operator==(const CellKey& o) const = default;
};

struct CellMetrics {
  CellKey key;
  int episodes = 0;
  int failures = 0;  // episodes that raised instead of finishing
  double mean_reward = 0.0;
  double std_reward = 0.0;  // sample std (n-1); 0 when n < 2, flagged low_n
  bool low_n = false;
  double collision_rate = 0.0;
  long shield_interventions = 0;
  long shield_fallbacks = 0;
  long shield_mask_violations = 0;
};

struct MetricsSummary {
  std::vector<CellMetrics> cells;

  const CellMetrics* find(const CellKey& key) const;
};

// Order-independent aggregate: mergeable count/mean/M2 plus counters.
struct CellAggregate {
  long n = 0;
  double mean = 0.0;
  double m2 = 0.0;
  long collisions = 0;
  long failures = 0;
  long interventions = 0;
  long fallbacks = 0;
  long mask_violations = 0;

  void add(const EpisodeRecord& r);
  static CellAggregate merged(const CellAggregate& a, const CellAggregate& b);
  CellMetrics finalize(const CellKey& key) const;
};

EpisodeRecord run_episode(const RunArtifacts& art, const ExperimentConfig& cfg,
                          Method method, Scenario scenario, double gap,
                          uint64_t episode_seed);

// Runs the whole grid. Episode seeds come from the splittable counter scheme
// so results are independent of execution order (and of cfg.jobs); records
// are aggregated in episode-index order after all workers finish.
struct ExperimentResult {
  MetricsSummary summary;
  std::vector<EpisodeRecord> episodes;  // grid-major, episode-minor order
  std::vector<CellKey> episode_cells;   // parallel to `episodes`
};

ExperimentResult run_experiment(const RunArtifacts& art,
                                const ExperimentConfig& cfg);

struct OrderingCheck {
  Scenario scenario;
  double gap = 0.0;
  std::string name;    // e.g. "collision: NUMERLA < COLA"
  std::string status;  // "pass", "fail", or "tie"
};

struct ReportResult {
  std::string text;
  std::vector<OrderingCheck> checks;
  bool all_pass = false;  // ties count as failures for the exit gate
};

// Cross-method comparison: per-cell table plus the collision-ordering checks
// NUMERLA < COLA < RL for every (scenario, gap) present in all three methods.
ReportResult compare_report(const MetricsSummary& summary);

}  // namespace numerla::harness
