#pragma once

// Adaptation-phase policies: the uniform Random baseline and the
// MSGI-GRProp explorer, plus the UCB eligibility-count bookkeeping they
// share.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <unordered_set>
#include <vector>

#include "sgi/env.hpp"
#include "sgi/graph.hpp"
#include "sgi/grprop.hpp"
#include "sgi/infer.hpp"

namespace sgi {

// Counts start at `init` for both eligibility values so the bonus is finite
// from the first step.
class UcbState {
 public:
  static constexpr double kInitCount = 1.0;

  explicit UcbState(std::size_t n, double init = kInitCount) : n0_(n, init), n1_(n, init), init_(init) {}

  std::size_t size() const noexcept { return n0_.size(); }
  double count(std::size_t i, bool eligible) const { return eligible ? n1_[i] : n0_[i]; }
  double init() const noexcept { return init_; }
  std::size_t distinct_states() const noexcept { return seen_.size(); }
  bool seen(const BitVector& x) const { return seen_.contains(x); }

  // Returns whether x was new.
  bool update(const BitVector& e, const BitVector& x) {
    check(e, x);
    for (std::size_t i = 0; i < size(); ++i) (e[i] ? n1_[i] : n0_[i]) += 1.0;
    return seen_.insert(x).second;
  }

  // sum_i ln(n_i(0) + n_i(1)) / n_i(e_i)
  double weight(const BitVector& e) const {
    if (e.size() != size()) throw std::invalid_argument("eligibility dimension mismatch");
    double w = 0.0;
    for (std::size_t i = 0; i < size(); ++i) w += std::log(n0_[i] + n1_[i]) / (e[i] ? n1_[i] : n0_[i]);
    return w;
  }

  // Bonus for reaching (x, e), evaluated before x is recorded.
  double intrinsic_reward(const BitVector& x, const BitVector& e) const {
    check(e, x);
    return seen_.contains(x) ? 0.0 : weight(e);
  }

  // Per-subtask pseudo-reward ln(n_i(0) + n_i(1)) / n_i(1): large for
  // subtasks that have rarely been eligible. Always-eligible subtasks decay
  // like ln(t)/t.
  std::vector<double> exploration_rewards() const {
    std::vector<double> r(size());
    for (std::size_t i = 0; i < size(); ++i) r[i] = std::log(n0_[i] + n1_[i]) / n1_[i];
    return r;
  }

  void reset() {
    std::fill(n0_.begin(), n0_.end(), init_);
    std::fill(n1_.begin(), n1_.end(), init_);
    seen_.clear();
  }

 private:
  void check(const BitVector& e, const BitVector& x) const {
    if (e.size() != size() || x.size() != size()) throw std::invalid_argument("UCB state dimension mismatch");
  }

  std::vector<double> n0_;
  std::vector<double> n1_;
  double init_;
  std::unordered_set<BitVector, BitVectorHash> seen_;
};

inline std::size_t random_policy(const Observation& obs, Rng& rng) {
  const auto legal = obs.legal_options();
  if (legal.empty()) throw NoLegalOption();
  return legal[std::uniform_int_distribution<std::size_t>(0, legal.size() - 1)(rng)];
}

// GRProp on the graph inferred so far, with UCB pseudo-rewards. The graph is
// re-inferred every `refit_period` steps, or at each episode boundary when
// the period is 0. Temperature follows params.anneal over the phase.
class MsgiGrpropAdapter {
 public:
  MsgiGrpropAdapter(std::size_t n, GrpropParams params, int total_episodes, std::size_t refit_period = 0)
      : n_(n), params_(params), total_episodes_(std::max(total_episodes, 1)), refit_period_(refit_period) {
    params_.validate();
  }

  std::size_t operator()(const Observation& obs, const Trajectory& traj, const UcbState& ucb, Rng& rng) {
    if (!obs.has_legal_option()) throw NoLegalOption();
    if (needs_refit(traj)) refit(traj, ucb);
    if (!graph_ || inferred_.all_false()) return random_policy(obs, rng);
    const double progress =
        total_episodes_ > 1 ? static_cast<double>(total_episodes_ - obs.epi_remaining) / (total_episodes_ - 1) : 1.0;
    ++steps_since_refit_;
    return grprop_policy(*graph_, rewards_, obs, params_, rng, ActionMode::Sample, progress);
  }

  void refit(const Trajectory& traj, const UcbState& ucb) {
    inferred_ = infer_graph(traj, n_);
    graph_.emplace(inferred_.to_graph());
    rewards_ = ucb.exploration_rewards();
    fitted_episodes_ = traj.episodes.size();
    steps_since_refit_ = 0;
    ++refits_;
  }

  const InferredGraph& inferred() const noexcept { return inferred_; }
  std::size_t refits() const noexcept { return refits_; }

 private:
  bool needs_refit(const Trajectory& traj) const {
    if (!graph_) return true;
    if (refit_period_ == 0) return traj.episodes.size() != fitted_episodes_;
    return steps_since_refit_ >= refit_period_;
  }

  std::size_t n_;
  GrpropParams params_;
  int total_episodes_;
  std::size_t refit_period_;
  InferredGraph inferred_;
  std::optional<SubtaskGraph> graph_;
  std::vector<double> rewards_;
  std::size_t fitted_episodes_ = 0;
  std::size_t steps_since_refit_ = 0;
  std::size_t refits_ = 0;
};

}  // namespace sgi
