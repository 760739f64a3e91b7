#include "numerla/harness.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <thread>
#include <tuple>

#include "numerla/errors.hpp"

namespace numerla::harness {

const char* to_string(Method m) {
  switch (m) {
    case Method::RL:
      return "RL";
    case Method::COLA:
      return "COLA";
    case Method::NUMERLA:
      return "NUMERLA";
  }
  return "?";
}

const char* to_string(Scenario s) {
  return s == Scenario::WellBehaved ? "WellBehaved" : "Jaywalk";
}

Method method_from_string(const std::string& s) {
  if (s == "RL") return Method::RL;
  if (s == "COLA") return Method::COLA;
  if (s == "NUMERLA") return Method::NUMERLA;
  throw ConfigError("unknown method '" + s + "'");
}

Scenario scenario_from_string(const std::string& s) {
  if (s == "WellBehaved") return Scenario::WellBehaved;
  if (s == "Jaywalk") return Scenario::Jaywalk;
  throw ConfigError("unknown scenario '" + s + "'");
}

bool CellKey::operator<(const CellKey& o) const {
  return std::tie(method, scenario, gap) < std::tie(o.method, o.scenario, o.gap);
}

const CellMetrics* MetricsSummary::find(const CellKey& key) const {
  for (const CellMetrics& c : cells) {
    if (c.key == key) return &c;
  }
  return nullptr;
}

void CellAggregate::add(const EpisodeRecord& r) {
  if (r.failed) {
    ++failures;
    return;
  }
  ++n;
  double d = r.ret - mean;
  mean += d / static_cast<double>(n);
  m2 += d * (r.ret - mean);
  if (r.collided) ++collisions;
  interventions += r.shield_interventions;
  fallbacks += r.shield_fallbacks;
  mask_violations += r.shield_mask_violations;
}

CellAggregate CellAggregate::merged(const CellAggregate& a,
                                    const CellAggregate& b) {
  CellAggregate out;
  out.n = a.n + b.n;
  if (out.n > 0) {
    double d = b.mean - a.mean;
    out.mean = a.mean + d * static_cast<double>(b.n) / out.n;
    out.m2 = a.m2 + b.m2 +
             d * d * static_cast<double>(a.n) * static_cast<double>(b.n) /
                 static_cast<double>(out.n);
  }
  out.collisions = a.collisions + b.collisions;
  out.failures = a.failures + b.failures;
  out.interventions = a.interventions + b.interventions;
  out.fallbacks = a.fallbacks + b.fallbacks;
  out.mask_violations = a.mask_violations + b.mask_violations;
  return out;
}

CellMetrics CellAggregate::finalize(const CellKey& key) const {
  CellMetrics m;
  m.key = key;
  m.episodes = static_cast<int>(n + failures);
  m.failures = static_cast<int>(failures);
  m.low_n = n < 2;
  if (n > 0) {
    m.mean_reward = mean;
    m.collision_rate = static_cast<double>(collisions) / static_cast<double>(n);
  }
  if (n > 1) m.std_reward = std::sqrt(m2 / static_cast<double>(n - 1));
  m.shield_interventions = interventions;
  m.shield_fallbacks = fallbacks;
  m.shield_mask_violations = mask_violations;
  return m;
}

namespace {

const env::Mode& mode_for(const belief::ModeTransitionModel& model,
                          Scenario scenario) {
  env::Behavior want = scenario == Scenario::WellBehaved
                           ? env::Behavior::Compliant
                           : env::Behavior::Jaywalk;
  for (const env::Mode& m : model.modes) {
    if (m.behavior == want) return m;
  }
  throw ConfigError(std::string("no mode with behavior for scenario ") +
                    to_string(scenario));
}

int true_mode_index(const belief::ModeTransitionModel& model,
                    const std::string& id) {
  for (size_t i = 0; i < model.modes.size(); ++i) {
    if (model.modes[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

EpisodeRecord run_episode(const RunArtifacts& art, const ExperimentConfig& cfg,
                          Method method, Scenario scenario, double gap,
                          uint64_t episode_seed) {
  env::SimConfig sim = art.sim;
  sim.initial_gap_m = gap;
  const env::Mode& mode = mode_for(art.belief_model, scenario);
  int truth = true_mode_index(art.belief_model, mode.id);

  EpisodeRecord rec;
  rec.seed = episode_seed;
  RngStream rng(episode_seed);

  policy::PolicyParams theta = art.meta;
  belief::Belief b = belief::init_belief(art.belief_model);
  belief::ObservationWindow window(cfg.belief_window);
  bool adapting = method != Method::RL && art.bank.total() > 0;
  bool shielding = method == Method::NUMERLA;

  auto [state, obs] = env::reset(sim, mode, rng);
  window.push(obs, 0);

  while (true) {
    policy::ActionDistribution dist = policy::action_probs(theta, obs);
    const ssc::Rule* matched_rule = nullptr;
    if (shielding) {
      std::vector<double> feats =
          cfg.dispatch_ground_truth
              ? mode.features()
              : art.belief_model.modes[b.argmax()].features();
      const ssc::ConstraintSet* cs = ssc::evaluate_ssc(art.knowledge, feats);
      if (cs == nullptr) {
        // Uncovered dispatch features: hold the brake rather than run bare.
        dist.probs.fill(0.0);
        dist.probs[4] = 1.0;
        ++rec.shield_fallbacks;
        ++rec.shield_interventions;
      } else {
        ssc::ShieldOutcome out =
            ssc::apply_constraint(dist, *cs, obs.s_hat());
        dist = out.dist;
        matched_rule = &cs->rules[out.rule_index];
        if (out.intervened) ++rec.shield_interventions;
        if (out.fallback) ++rec.shield_fallbacks;
      }
    }
    int a = policy::sample_action(dist, rng);
    if (matched_rule != nullptr) {
      const auto& allowed = matched_rule->allowed;
      bool in_allowed =
          std::find(allowed.begin(), allowed.end(), a) != allowed.end();
      double masked_mass = 0.0;
      for (int i = 0; i < env::Action::kCount; ++i) {
        if (std::find(allowed.begin(), allowed.end(), i) == allowed.end()) {
          masked_mass += dist.probs[i];
        }
      }
      if (!in_allowed || masked_mass > 0.0) ++rec.shield_mask_violations;
    }

    env::StepResult res = env::step(sim, state, env::Action{a}, mode, rng);
    rec.ret += res.reward;
    ++rec.steps;
    window.push(res.obs, state.t + 1);
    if (method != Method::RL) {
      bool degenerate = false;
      b = belief::update_belief(b, window, art.belief_model, &degenerate);
      if (degenerate) ++rec.belief_degenerate_updates;
    }
    state = res.next_state;
    obs = res.obs;
    if (res.done) {
      rec.collided = res.done_reason == env::DoneReason::Collision;
      rec.done_reason = res.done_reason;
      break;
    }
    if (adapting && state.t % cfg.cadence == 0) {
      ++rec.adaptations_attempted;
      cola::CLOResult clo = cola::solve_clo(theta, b, art.bank, cfg.clo, rng);
      if (clo.accepted) {
        theta = clo.theta_new;
        ++rec.adaptations_accepted;
      }
    }
  }
  if (truth >= 0) rec.final_belief_truth = b.probs[truth];
  return rec;
}

ExperimentResult run_experiment(const RunArtifacts& art,
                                const ExperimentConfig& cfg) {
  if (cfg.methods.empty() || cfg.scenarios.empty() || cfg.gaps.empty()) {
    throw ConfigError("experiment grid is empty");
  }
  if (cfg.episodes <= 0) throw ConfigError("episodes must be positive");
  if (cfg.cadence <= 0) throw ConfigError("cadence must be positive");
  if (cfg.jobs <= 0) throw ConfigError("jobs must be positive");
  art.sim.validate();
  art.meta.validate();
  art.belief_model.validate();
  art.knowledge.validate();

  bool any_adapting = std::any_of(
      cfg.methods.begin(), cfg.methods.end(),
      [](Method m) { return m != Method::RL; });
  if (any_adapting && art.bank.total() > 0) {
    art.bank.validate();
    if (art.bank.policy_version != art.meta.version) {
      throw StaleBankError("bank was collected under policy version '" +
                           art.bank.policy_version + "' but the run uses '" +
                           art.meta.version + "'");
    }
    for (const env::Mode& m : art.belief_model.modes) {
      auto it = art.bank.buckets.find(m.id);
      if (it == art.bank.buckets.end() || it->second.empty()) {
        throw ConfigError("bank has no samples for mode '" + m.id + "'");
      }
    }
  }
  for (Scenario s : cfg.scenarios) mode_for(art.belief_model, s);  // throws

  std::vector<CellKey> grid;
  for (Method m : cfg.methods) {
    for (Scenario s : cfg.scenarios) {
      for (double gap : cfg.gaps) grid.push_back(CellKey{m, s, gap});
    }
  }

  size_t total = grid.size() * static_cast<size_t>(cfg.episodes);
  ExperimentResult result;
  result.episodes.resize(total);
  result.episode_cells.resize(total);
  for (size_t c = 0; c < grid.size(); ++c) {
    for (int e = 0; e < cfg.episodes; ++e) {
      result.episode_cells[c * cfg.episodes + e] = grid[c];
    }
  }

  auto worker = [&](size_t begin, size_t stride) {
    for (size_t idx = begin; idx < total; idx += stride) {
      const CellKey& key = result.episode_cells[idx];
      uint64_t seed = RngStream::derive(cfg.base_seed, idx);
      EpisodeRecord rec;
      try {
        rec = run_episode(art, cfg, key.method, key.scenario, key.gap, seed);
      } catch (const std::exception&) {
        rec = EpisodeRecord{};
        rec.seed = seed;
        rec.failed = true;
      }
      result.episodes[idx] = rec;
    }
  };

  int jobs = std::min<int>(cfg.jobs, static_cast<int>(total));
  if (jobs <= 1) {
    worker(0, 1);
  } else {
    std::vector<std::thread> threads;
    threads.reserve(jobs);
    for (int j = 0; j < jobs; ++j) threads.emplace_back(worker, j, jobs);
    for (std::thread& t : threads) t.join();
  }

  // Aggregate in grid order; aggregation is order-independent anyway.
  std::map<CellKey, CellAggregate> agg;
  for (size_t idx = 0; idx < total; ++idx) {
    agg[result.episode_cells[idx]].add(result.episodes[idx]);
  }
  for (const CellKey& key : grid) {
    result.summary.cells.push_back(agg[key].finalize(key));
  }
  return result;
}

ReportResult compare_report(const MetricsSummary& summary) {
  ReportResult report;
  std::ostringstream out;
  out << std::left << std::setw(9) << "method" << std::setw(13) << "scenario"
      << std::right << std::setw(5) << "gap" << std::setw(7) << "eps"
      << std::setw(12) << "mean" << std::setw(12) << "std" << std::setw(12)
      << "collision" << std::setw(8) << "fail" << '\n';
  for (const CellMetrics& c : summary.cells) {
    out << std::left << std::setw(9) << to_string(c.key.method) << std::setw(13)
        << to_string(c.key.scenario) << std::right << std::setw(5)
        << c.key.gap << std::setw(7) << c.episodes << std::setw(12)
        << std::fixed << std::setprecision(4) << c.mean_reward << std::setw(12)
        << c.std_reward << std::setw(12) << c.collision_rate << std::setw(8)
        << c.failures << '\n';
    out.unsetf(std::ios::fixed);
    out << std::setprecision(6);
  }

  std::vector<Scenario> scenarios;
  std::vector<double> gaps;
  for (const CellMetrics& c : summary.cells) {
    if (std::find(scenarios.begin(), scenarios.end(), c.key.scenario) ==
        scenarios.end()) {
      scenarios.push_back(c.key.scenario);
    }
    if (std::find(gaps.begin(), gaps.end(), c.key.gap) == gaps.end()) {
      gaps.push_back(c.key.gap);
    }
  }

  auto add_check = [&](Scenario s, double gap, const std::string& name,
                       const std::string& status) {
    report.checks.push_back(OrderingCheck{s, gap, name, status});
  };
  auto strict = [](double a, double b) {
    return a < b ? "pass" : (a == b ? "tie" : "fail");
  };

  for (Scenario s : scenarios) {
    for (double gap : gaps) {
      const CellMetrics* rl = summary.find(CellKey{Method::RL, s, gap});
      const CellMetrics* co = summary.find(CellKey{Method::COLA, s, gap});
      const CellMetrics* nu = summary.find(CellKey{Method::NUMERLA, s, gap});
      if (rl == nullptr || co == nullptr || nu == nullptr) continue;
      add_check(s, gap, "collision NUMERLA < COLA",
                strict(nu->collision_rate, co->collision_rate));
      add_check(s, gap, "collision COLA < RL",
                strict(co->collision_rate, rl->collision_rate));
      add_check(s, gap, "collision NUMERLA <= 0.01",
                nu->collision_rate <= 0.01 ? "pass" : "fail");
      if (s == Scenario::Jaywalk) {
        add_check(s, gap, "mean NUMERLA >= COLA",
                  nu->mean_reward >= co->mean_reward ? "pass" : "fail");
        add_check(s, gap, "mean COLA >= RL",
                  co->mean_reward >= rl->mean_reward ? "pass" : "fail");
      }
    }
  }

  // Hardest-gap signature: for the adapting-free baselines the shortest gap
  // should dominate the collision rate among WellBehaved cells.
  if (gaps.size() > 1) {
    double min_gap = *std::min_element(gaps.begin(), gaps.end());
    for (Method m : {Method::RL, Method::COLA}) {
      const CellMetrics* shortest =
          summary.find(CellKey{m, Scenario::WellBehaved, min_gap});
      if (shortest == nullptr) continue;
      bool seen_all = true;
      bool highest = true;
      bool tie = false;
      for (double gap : gaps) {
        if (gap == min_gap) continue;
        const CellMetrics* other =
            summary.find(CellKey{m, Scenario::WellBehaved, gap});
        if (other == nullptr) {
          seen_all = false;
          break;
        }
        if (shortest->collision_rate < other->collision_rate) highest = false;
        if (shortest->collision_rate == other->collision_rate) tie = true;
      }
      if (seen_all) {
        add_check(Scenario::WellBehaved, min_gap,
                  std::string("hardest gap for ") + to_string(m),
                  highest ? (tie ? "tie" : "pass") : "fail");
      }
    }
  }

  report.all_pass = !report.checks.empty();
  out << '\n';
  for (const OrderingCheck& c : report.checks) {
    if (c.status != "pass") report.all_pass = false;
    out << "[" << c.status << "] " << to_string(c.scenario) << " " << c.gap
        << " m: " << c.name << '\n';
  }
  report.text = out.str();
  return report;
}

}  // namespace numerla::harness
