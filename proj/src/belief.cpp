#include "numerla/belief.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "numerla/errors.hpp"

namespace numerla::belief {

namespace {
constexpr double kSpeedEps = 1e-9;

bool is_masked(const env::Observation& o) { return o.masked(); }
bool is_walking(const env::Observation& o) { return o.v_p() > kSpeedEps; }

// Standing at the kerb. A pedestrian in this simulator never stops mid-lane,
// so zero lateral speed with lane still ahead means the crossing has not
// started (d_p drops to exactly 0 once it finishes).
bool is_standing(const env::Observation& o) {
  return !is_walking(o) && o.d_p() > 1e-9;
}
}  // namespace

int Belief::argmax() const {
  return static_cast<int>(
      std::max_element(probs.begin(), probs.end()) - probs.begin());
}

void Belief::validate() const {
  if (probs.empty() || probs.size() != mode_ids.size()) {
    throw UsageError("belief has inconsistent sizes");
  }
  double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw NumericError("belief probability outside [0, 1]");
    }
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw NumericError("belief does not sum to 1");
  }
}

void ModeTransitionModel::validate() const {
  size_t n = modes.size();
  if (n == 0) throw ConfigError("transition model has no modes");
  for (const env::Mode& m : modes) m.validate();
  if (rho_z.size() != n) throw ConfigError("rho_z size mismatch");
  double rho_sum = std::accumulate(rho_z.begin(), rho_z.end(), 0.0);
  if (std::abs(rho_sum - 1.0) > 1e-9) throw ConfigError("rho_z must sum to 1");
  for (double p : rho_z) {
    if (p < 0.0) throw ConfigError("rho_z entries must be non-negative");
  }
  if (p_z.size() != n) throw ConfigError("p_z row count mismatch");
  for (const auto& row : p_z) {
    if (row.size() != n) throw ConfigError("p_z column count mismatch");
    double s = std::accumulate(row.begin(), row.end(), 0.0);
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("p_z rows must sum to 1");
    for (double p : row) {
      if (p < 0.0) throw ConfigError("p_z entries must be non-negative");
    }
  }
}

void ObservationWindow::push(const env::Observation& obs, int t) {
  entries_.emplace_back(t, obs);
  while (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
  light_history_.push_back(static_cast<int>(obs.light()));
}

void ObservationWindow::clear() {
  entries_.clear();
  light_history_.clear();
}

Belief init_belief(const ModeTransitionModel& model) {
  model.validate();
  Belief b;
  b.probs = model.rho_z;
  for (const env::Mode& m : model.modes) b.mode_ids.push_back(m.id);
  return b;
}

namespace {

// Per-step start hazard of a jaywalker that has not started by step t, under
// a uniform start draw over [lo, hi].
double jaywalk_hazard(const env::Mode& m, int t) {
  if (t < m.jaywalk_start_min) return 0.0;
  if (t > m.jaywalk_start_max) return 1.0;  // unreachable in-episode
  return 1.0 / static_cast<double>(m.jaywalk_start_max - t + 1);
}

double start_likelihood(const env::Mode& m, env::Light light, int t) {
  if (m.behavior == env::Behavior::Jaywalk) return jaywalk_hazard(m, t);
  switch (light) {
    case env::Light::Red: return 0.0;
    case env::Light::Yellow: return m.yellow_go_prob;
    case env::Light::Green: return 1.0;
  }
  return 1.0;
}

double no_start_likelihood(const env::Mode& m, env::Light light, int t) {
  return 1.0 - start_likelihood(m, light, t);
}

}  // namespace

double mode_likelihood(const env::Mode& mode, const ObservationWindow& window) {
  // Evidence lives in the newest transition; everything else is already
  // folded into the belief.
  if (window.size() < 2) return 1.0;
  const env::Observation& prev = window.obs_at(window.size() - 2);
  const env::Observation& cur = window.obs_at(window.size() - 1);
  if (is_masked(prev) || is_masked(cur)) return 1.0;

  // The decision that produced `cur` was taken one step earlier under the
  // light the pedestrian saw then.
  int decision_t = window.step_at(window.size() - 2);
  auto light = static_cast<env::Light>(static_cast<int>(prev.light()));

  if (is_standing(prev)) {
    if (is_walking(cur)) return start_likelihood(mode, light, decision_t);
    if (is_standing(cur)) {
      return no_start_likelihood(mode, light, decision_t);
    }
  }
  // Already walking, finished crossing, or first sight mid-walk: nothing new.
  return 1.0;
}

Belief update_belief(const Belief& b, const ObservationWindow& window,
                     const ModeTransitionModel& model, bool* degenerate) {
  b.validate();
  model.validate();
  if (b.probs.size() != model.modes.size()) {
    throw UsageError("belief size does not match the transition model");
  }
  size_t n = b.probs.size();
  Belief out = b;

  // Predict.
  std::vector<double> pred(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < n; ++j) pred[j] += b.probs[i] * model.p_z[i][j];
  }
  // Correct.
  std::vector<double> post(n);
  double norm = 0.0;
  for (size_t j = 0; j < n; ++j) {
    post[j] = pred[j] * mode_likelihood(model.modes[j], window);
    norm += post[j];
  }
  if (degenerate) *degenerate = false;
  if (norm <= 0.0) {
    // Every mode rules the evidence out; fall back to the predicted prior.
    if (degenerate) *degenerate = true;
    out.probs = pred;
    return out;
  }
  for (size_t j = 0; j < n; ++j) post[j] /= norm;
  out.probs = post;
  return out;
}

}  // namespace numerla::belief
