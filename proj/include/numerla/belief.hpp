#pragma once

#include <deque>
#include <string>
#include <vector>

#include "numerla/env.hpp"

namespace numerla::belief {

struct Belief {
  std::vector<double> probs;
  std::vector<std::string> mode_ids;

  int argmax() const;  // ties resolve to the lowest index
  void validate() const;
};

// Latent-mode prior rho_z and per-step transition matrix p_z (row-stochastic,
// identity for the standard two-mode setup: a pedestrian keeps its mode).
struct ModeTransitionModel {
  std::vector<env::Mode> modes;
  std::vector<std::vector<double>> p_z;
  std::vector<double> rho_z;

  void validate() const;
};

// Rolling evidence buffer: the last `capacity` observations with their step
// indices, plus the episode's observed light history (-1 while masked).
class ObservationWindow {
 public:
  explicit ObservationWindow(int capacity = 5) : capacity_(capacity) {}

  void push(const env::Observation& obs, int t);
  void clear();

  int size() const { return static_cast<int>(entries_.size()); }
  int capacity() const { return capacity_; }
  const env::Observation& obs_at(int i) const { return entries_[i].second; }
  int step_at(int i) const { return entries_[i].first; }
  const std::vector<int>& light_history() const { return light_history_; }

 private:
  int capacity_;
  std::deque<std::pair<int, env::Observation>> entries_;
  std::vector<int> light_history_;
};

Belief init_belief(const ModeTransitionModel& model);

// Likelihood of the newest evidence in the window under one mode. Masked or
// eventless windows are uninformative (1.0). The informative events are the
// stand->walk transition and each standing step, both gated by the light the
// pedestrian saw when deciding (the previous observation's).
double mode_likelihood(const env::Mode& mode, const ObservationWindow& window);

// Predict with p_z then correct with mode_likelihood. If every mode has zero
// likelihood the predicted prior is returned unchanged and *degenerate is set.
Belief update_belief(const Belief& b, const ObservationWindow& window,
                     const ModeTransitionModel& model,
                     bool* degenerate = nullptr);

}  // namespace numerla::belief
