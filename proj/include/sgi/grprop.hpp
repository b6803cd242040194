#pragma once

// Graph reward propagation: the subtask graph is relaxed into a smooth
// circuit (soft OR / AND / NOT), and the policy is a masked softmax over the
// gradient of the smoothed return with respect to the completion vector.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sgi/env.hpp"
#include "sgi/graph.hpp"

namespace sgi {

struct GrpropParams {
  double lambda_or = 0.6;
  double w_or = 2.0;
  double w_and = 3.0;
  double w_not = 2.0;
  double temperature = 40.0;
  // Linear schedule (start, end) over progress in [0, 1]; overrides temperature.
  std::optional<std::pair<double, double>> anneal;

  void validate() const {
    if (!(lambda_or >= 0.0 && lambda_or <= 1.0)) throw std::invalid_argument("lambda_or outside [0,1]");
    if (!(w_or > 0.0 && w_and > 0.0 && w_not > 0.0)) throw std::invalid_argument("GRProp weights must be positive");
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    if (anneal && !(anneal->first > 0.0 && anneal->second > 0.0))
      throw std::invalid_argument("annealed temperatures must be positive");
  }

  double temperature_at(double progress) const {
    if (!anneal) return temperature;
    progress = std::clamp(progress, 0.0, 1.0);
    return anneal->first + (anneal->second - anneal->first) * progress;
  }
};

// (1/beta) * log(1 + exp(beta * s)), overflow-safe.
inline double softplus(double s, double beta) {
  const double z = beta * s;
  return (std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)))) / beta;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double ez = std::exp(z);
  return ez / (1.0 + ez);
}

namespace detail {

// softmax(w * v) written into `weights`.
inline void softmax_weights(std::span<const double> v, double w, std::vector<double>& weights) {
  const double m = *std::max_element(v.begin(), v.end());
  weights.resize(v.size());
  double z = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) z += (weights[k] = std::exp(w * (v[k] - m)));
  for (auto& s : weights) s /= z;
}

}  // namespace detail

inline double soft_or(std::span<const double> values, double w_or) {
  if (values.empty()) throw std::invalid_argument("soft_or of an empty vector");
  std::vector<double> s;
  detail::softmax_weights(values, w_or, s);
  double out = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) out += s[k] * values[k];
  return out;
}

// zeta(sum of inputs) / zeta(d): 1 exactly when every input is 1.
inline double soft_and(std::span<const double> values, double w_and) {
  if (values.empty()) throw std::invalid_argument("soft_and of an empty vector");
  double sum = 0.0;
  for (double v : values) sum += v;
  return softplus(sum, w_and) / softplus(static_cast<double>(values.size()), w_and);
}

inline double soft_not(double value, double w_not) { return -w_not * value; }

// Forward values kept for the reverse sweep.
struct SmoothEval {
  const SubtaskGraph* graph = nullptr;
  GrpropParams params;
  std::vector<double> x;
  std::vector<double> rewards;
  std::vector<double> p;        // progress per subtask
  std::vector<double> e_tilde;  // smoothed eligibility per subtask
  // Per subtask, per term: literal inputs and the soft AND output.
  std::vector<std::vector<std::vector<double>>> literal_values;
  std::vector<std::vector<double>> and_values;
  double utility = 0.0;
};

inline SmoothEval smooth_forward(const SubtaskGraph& graph, std::span<const double> x, std::span<const double> rewards,
                                 const GrpropParams& params) {
  const std::size_t n = graph.size();
  if (x.size() != n || rewards.size() != n) throw std::invalid_argument("smooth_forward dimension mismatch");
  SmoothEval ev;
  ev.graph = &graph;
  ev.params = params;
  ev.x.assign(x.begin(), x.end());
  ev.rewards.assign(rewards.begin(), rewards.end());
  ev.p.assign(n, 0.0);
  ev.e_tilde.assign(n, 0.0);
  ev.literal_values.assign(n, {});
  ev.and_values.assign(n, {});

  for (auto i : graph.topological_order()) {
    const auto& pre = graph[i].precondition;
    if (pre.is_true()) {
      ev.e_tilde[i] = 1.0;
    } else if (!pre.is_false()) {
      auto& lits = ev.literal_values[i];
      auto& ands = ev.and_values[i];
      for (const auto& term : pre.terms()) {
        std::vector<double> in;
        in.reserve(term.size());
        for (const auto& l : term) in.push_back(l.negated ? soft_not(ev.p[l.index], params.w_not) : ev.p[l.index]);
        ands.push_back(soft_and(in, params.w_and));
        lits.push_back(std::move(in));
      }
      ev.e_tilde[i] = soft_or(ands, params.w_or);
    }
    ev.p[i] = params.lambda_or * ev.e_tilde[i] + (1.0 - params.lambda_or) * ev.x[i];
  }
  for (std::size_t i = 0; i < n; ++i) ev.utility += ev.rewards[i] * ev.p[i];
  return ev;
}

inline SmoothEval smooth_forward(const SubtaskGraph& graph, std::span<const double> x, const GrpropParams& params) {
  const auto r = graph.rewards();
  return smooth_forward(graph, x, r, params);
}

// Reverse-mode derivative of the smoothed return with respect to x.
inline std::vector<double> smooth_backward(const SmoothEval& ev) {
  const auto& graph = *ev.graph;
  const auto& prm = ev.params;
  const std::size_t n = graph.size();
  std::vector<double> dp = ev.rewards;  // dU/dp, completed in reverse topological order
  std::vector<double> dx(n, 0.0);
  std::vector<double> weights;

  const auto& order = graph.topological_order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto i = *it;
    dx[i] = (1.0 - prm.lambda_or) * dp[i];
    const auto& pre = graph[i].precondition;
    if (pre.is_true() || pre.is_false()) continue;
    const double de = prm.lambda_or * dp[i];
    if (de == 0.0) continue;

    const auto& ands = ev.and_values[i];
    detail::softmax_weights(ands, prm.w_or, weights);
    const double out = ev.e_tilde[i];
    for (std::size_t t = 0; t < ands.size(); ++t) {
      // d softOR / d y_t = s_t * (1 + w_or * (y_t - out))
      const double dy = de * weights[t] * (1.0 + prm.w_or * (ands[t] - out));
      const auto& in = ev.literal_values[i][t];
      double sum = 0.0;
      for (double v : in) sum += v;
      // d softAND / d input_k = sigmoid(w_and * sum) / zeta(d)
      const double dand = sigmoid(prm.w_and * sum) / softplus(static_cast<double>(in.size()), prm.w_and);
      const auto& term = pre.terms()[t];
      for (std::size_t k = 0; k < term.size(); ++k) {
        const double dlit = dy * dand;
        dp[term[k].index] += term[k].negated ? -prm.w_not * dlit : dlit;
      }
    }
  }
  return dx;
}

inline std::vector<double> grprop_gradient(const SubtaskGraph& graph, std::span<const double> rewards,
                                           const BitVector& x, const GrpropParams& params) {
  std::vector<double> xr(x.begin(), x.end());
  return smooth_backward(smooth_forward(graph, xr, rewards, params));
}

enum class ActionMode { Sample, Argmax };

namespace detail {

// Masked softmax over logits; argmax ties go to the lowest index.
inline std::size_t choose_masked(std::span<const double> logits, const Observation& obs, Rng& rng, ActionMode mode) {
  double best = -std::numeric_limits<double>::infinity();
  std::optional<std::size_t> arg;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (obs.legal(i) && logits[i] > best) {
      best = logits[i];
      arg = i;
    }
  if (!arg) throw NoLegalOption();
  if (mode == ActionMode::Argmax) return *arg;

  std::vector<double> w(logits.size(), 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (obs.legal(i)) z += (w[i] = std::exp(logits[i] - best));
  double u = std::uniform_real_distribution<double>(0.0, z)(rng);
  std::size_t last = *arg;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!obs.legal(i)) continue;
    last = i;
    if (u < w[i]) return i;
    u -= w[i];
  }
  return last;
}

}  // namespace detail

// Logits T * dU/dx; only legal entries are meaningful.
inline std::vector<double> grprop_logits(const SubtaskGraph& graph, std::span<const double> rewards,
                                         const Observation& obs, const GrpropParams& params, double temperature) {
  auto g = grprop_gradient(graph, rewards, obs.x, params);
  for (auto& v : g) v *= temperature;
  return g;
}

inline std::size_t grprop_policy(const SubtaskGraph& graph, std::span<const double> rewards, const Observation& obs,
                                 const GrpropParams& params, Rng& rng, ActionMode mode = ActionMode::Sample,
                                 double progress = 1.0) {
  if (!obs.has_legal_option()) throw NoLegalOption();
  const auto logits = grprop_logits(graph, rewards, obs, params, params.temperature_at(progress));
  return detail::choose_masked(logits, obs, rng, mode);
}

inline std::size_t grprop_policy(const SubtaskGraph& graph, const Observation& obs, const GrpropParams& params,
                                 Rng& rng, ActionMode mode = ActionMode::Sample) {
  const auto r = graph.rewards();
  return grprop_policy(graph, r, obs, params, rng, mode);
}

}  // namespace sgi
