#pragma once

// Factored-MDP engine over a subtask graph. Options execute whole subtasks;
// navigation is abstracted into a per-execution time cost.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sgi/graph.hpp"

namespace sgi {

class EnvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class IneligibleOption : public EnvError {
 public:
  explicit IneligibleOption(std::size_t i) : EnvError("subtask " + std::to_string(i) + " is not eligible") {}
};
class AlreadyComplete : public EnvError {
 public:
  explicit AlreadyComplete(std::size_t i) : EnvError("subtask " + std::to_string(i) + " is already complete") {}
};
class EpisodeFinished : public EnvError {
 public:
  EpisodeFinished() : EnvError("episode has finished") {}
};
class NoLegalOption : public EnvError {
 public:
  NoLegalOption() : EnvError("no eligible, incomplete subtask") {}
};

struct CostModel {
  enum class Kind { Fixed, UniformInt };
  Kind kind = Kind::Fixed;
  int lo = 1;
  int hi = 1;

  static CostModel fixed(int c) { return {Kind::Fixed, c, c}; }
  static CostModel uniform_int(int lo, int hi) { return {Kind::UniformInt, lo, hi}; }

  int sample(Rng& rng) const {
    if (kind == Kind::Fixed) return lo;
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  }
  int min_cost() const noexcept { return lo; }
};

enum class RewardNoise { None, Gaussian, UniformScale };

struct EnvConfig {
  // Inclusive range; unset means the per-graph default.
  std::optional<std::pair<int, int>> step_budget_range;
  CostModel cost = CostModel::fixed(1);
  RewardNoise reward_noise = RewardNoise::UniformScale;
  int test_episode_budget = 4;

  // 3 * N steps per episode when no range is configured.
  static std::pair<int, int> default_budget(std::size_t n) {
    const int b = static_cast<int>(3 * n);
    return {b, b};
  }

  std::pair<int, int> budget_for(std::size_t n) const {
    return step_budget_range.value_or(default_budget(n));
  }

  void validate() const {
    if (step_budget_range &&
        (step_budget_range->first < 1 || step_budget_range->second < step_budget_range->first))
      throw std::invalid_argument("step budget range must satisfy 1 <= min <= max");
    if (cost.lo < 1 || cost.hi < cost.lo) throw std::invalid_argument("option cost must satisfy 1 <= min <= max");
    if (test_episode_budget < 1) throw std::invalid_argument("test episode budget must be >= 1");
  }
};

struct Observation {
  BitVector x;
  BitVector e;
  int step_remaining = 0;
  int epi_remaining = 0;

  bool legal(std::size_t i) const { return e[i] && !x[i]; }
  std::vector<std::size_t> legal_options() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (legal(i)) out.push_back(i);
    return out;
  }
  bool has_legal_option() const {
    for (std::size_t i = 0; i < x.size(); ++i)
      if (legal(i)) return true;
    return false;
  }
};

// One option execution, recorded with the state it was taken from.
struct Step {
  BitVector x;
  BitVector e;
  std::size_t option = 0;
  double reward = 0.0;
  bool done = false;
};

struct EpisodeRecord {
  std::size_t begin = 0;  // first step index
  std::size_t end = 0;    // one past the last step
  BitVector final_x;      // state after the last step
  BitVector final_e;
  double ret = 0.0;
};

struct Trajectory {
  std::vector<Step> steps;
  std::vector<EpisodeRecord> episodes;

  bool empty() const noexcept { return steps.empty() && episodes.empty(); }

  // Every (x, e) pair seen, steps first, then each episode's final state.
  template <typename F>
  void for_each_state(F&& f) const {
    for (const auto& s : steps) f(s.x, s.e);
    for (const auto& ep : episodes) f(ep.final_x, ep.final_e);
  }
};

class Environment {
 public:
  Environment(const SubtaskGraph& graph, EnvConfig config) : graph_(&graph), config_(std::move(config)) {
    config_.validate();
  }

  const SubtaskGraph& graph() const noexcept { return *graph_; }
  const EnvConfig& config() const noexcept { return config_; }
  const Observation& observation() const noexcept { return obs_; }
  bool done() const noexcept { return done_; }

  const Observation& reset(Rng& rng, int epi_remaining = 0) {
    const auto [lo, hi] = config_.budget_for(graph_->size());
    obs_.x.assign(graph_->size(), 0);
    obs_.e = graph_->eligibility(obs_.x);
    obs_.step_remaining = std::uniform_int_distribution<int>(lo, hi)(rng);
    obs_.epi_remaining = epi_remaining;
    done_ = !obs_.has_legal_option();
    return obs_;
  }

  struct StepResult {
    const Observation& obs;
    double reward;
    bool done;
  };

  StepResult step(std::size_t option, Rng& rng) {
    if (done_) throw EpisodeFinished();
    if (option >= graph_->size()) throw std::out_of_range("option index " + std::to_string(option));
    if (obs_.x[option]) throw AlreadyComplete(option);
    if (!obs_.e[option]) throw IneligibleOption(option);

    const double reward = sample_reward((*graph_)[option], rng);
    obs_.x[option] = 1;
    obs_.e = graph_->eligibility(obs_.x);
    obs_.step_remaining = std::max(0, obs_.step_remaining - config_.cost.sample(rng));
    done_ = obs_.step_remaining == 0 || !obs_.has_legal_option();
    return {obs_, reward, done_};
  }

 private:
  double sample_reward(const SubtaskSpec& s, Rng& rng) const {
    if (s.reward_noise == 0.0) return s.reward_mean;
    switch (config_.reward_noise) {
      case RewardNoise::None:
        return s.reward_mean;
      case RewardNoise::Gaussian:
        return std::normal_distribution<double>(s.reward_mean, s.reward_noise)(rng);
      case RewardNoise::UniformScale:
        return std::uniform_real_distribution<double>(s.reward_mean - s.reward_noise,
                                                      s.reward_mean + s.reward_noise)(rng);
    }
    return s.reward_mean;
  }

  const SubtaskGraph* graph_;
  EnvConfig config_;
  Observation obs_;
  bool done_ = true;
};

// Runs one episode, appending it to `traj`. The policy is called as
// policy(const Observation&, Rng&) -> option index.
template <typename Policy>
double rollout_episode(Environment& env, Policy&& policy, Rng& rng, Trajectory& traj, int epi_remaining = 0) {
  EpisodeRecord ep;
  ep.begin = traj.steps.size();
  env.reset(rng, epi_remaining);
  double ret = 0.0;
  while (!env.done()) {
    const Observation& obs = env.observation();
    const std::size_t option = policy(obs, rng);
    Step s{obs.x, obs.e, option, 0.0, false};
    auto r = env.step(option, rng);
    s.reward = r.reward;
    s.done = r.done;
    ret += r.reward;
    traj.steps.push_back(std::move(s));
  }
  ep.end = traj.steps.size();
  ep.final_x = env.observation().x;
  ep.final_e = env.observation().e;
  ep.ret = ret;
  traj.episodes.push_back(std::move(ep));
  return ret;
}

template <typename Policy>
double rollout_episode(Environment& env, Policy&& policy, Rng& rng) {
  Trajectory scratch;
  return rollout_episode(env, std::forward<Policy>(policy), rng, scratch);
}

}  // namespace sgi
