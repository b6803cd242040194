#pragma once

// Maximum-likelihood graph inference from an adaptation trajectory:
// per-subtask CART trees over completion vectors, converted to SOP
// preconditions, and empirical-mean rewards.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "sgi/env.hpp"
#include "sgi/graph.hpp"

namespace sgi {

class DatasetConflict : public std::runtime_error {
 public:
  explicit DatasetConflict(std::size_t subtask)
      : std::runtime_error("conflicting eligibility labels for subtask " + std::to_string(subtask)), subtask_(subtask) {}
  std::size_t subtask() const noexcept { return subtask_; }

 private:
  std::size_t subtask_;
};

struct EligibilityRow {
  BitVector x;
  bool label = false;
};

struct EligibilityDataset {
  std::size_t subtask = 0;
  std::vector<EligibilityRow> rows;  // distinct x, first-seen order
};

inline std::vector<EligibilityDataset> build_datasets(const Trajectory& traj, std::size_t n) {
  std::vector<EligibilityDataset> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i].subtask = i;
  std::unordered_map<BitVector, BitVector, BitVectorHash> seen;
  std::vector<const BitVector*> order;
  traj.for_each_state([&](const BitVector& x, const BitVector& e) {
    if (x.size() != n || e.size() != n) throw std::invalid_argument("trajectory state dimension mismatch");
    auto [it, inserted] = seen.emplace(x, e);
    if (inserted) {
      order.push_back(&it->first);
      return;
    }
    for (std::size_t i = 0; i < n; ++i)
      if (it->second[i] != e[i]) throw DatasetConflict(i);
  });
  for (const auto* x : order) {
    const auto& e = seen.at(*x);
    for (std::size_t i = 0; i < n; ++i) out[i].rows.push_back({*x, e[i] != 0});
  }
  return out;
}

// Binary tree: an internal node tests one completion bit, `zero` is taken
// when it is 0 and `one` when it is 1.
struct DecisionTree {
  struct Node {
    int var = -1;  // -1 for a leaf
    std::size_t zero = 0;
    std::size_t one = 0;
    bool label = false;

    bool is_leaf() const noexcept { return var < 0; }
  };

  std::vector<Node> nodes{Node{}};  // root at 0

  bool predict(std::span<const std::uint8_t> x) const {
    std::size_t at = 0;
    while (!nodes[at].is_leaf()) at = x[static_cast<std::size_t>(nodes[at].var)] ? nodes[at].one : nodes[at].zero;
    return nodes[at].label;
  }

  std::size_t depth() const { return depth_from(0); }

 private:
  std::size_t depth_from(std::size_t at) const {
    if (nodes[at].is_leaf()) return 0;
    return 1 + std::max(depth_from(nodes[at].zero), depth_from(nodes[at].one));
  }
};

namespace detail {

// Weighted Gini impurity of a split, up to the constant factor 2/n:
// pos0*neg0/n0 + pos1*neg1/n1, kept as an exact fraction.
struct SplitScore {
  unsigned __int128 num = 0;
  unsigned __int128 den = 1;

  bool operator<(const SplitScore& o) const { return num * o.den < o.num * den; }
};

inline SplitScore split_score(std::uint64_t pos0, std::uint64_t neg0, std::uint64_t pos1, std::uint64_t neg1) {
  const std::uint64_t n0 = pos0 + neg0, n1 = pos1 + neg1;
  SplitScore s;
  s.num = static_cast<unsigned __int128>(pos0) * neg0 * n1 + static_cast<unsigned __int128>(pos1) * neg1 * n0;
  s.den = static_cast<unsigned __int128>(n0) * n1;
  return s;
}

inline void grow(DecisionTree& tree, std::size_t at, const std::vector<const EligibilityRow*>& rows,
                 std::vector<bool>& used, std::span<const std::uint8_t> allowed) {
  std::size_t pos = 0;
  for (const auto* r : rows) pos += r->label ? 1 : 0;
  auto& leaf = tree.nodes[at];
  leaf.label = 2 * pos > rows.size();
  if (pos == 0 || pos == rows.size()) return;

  const std::size_t n = rows.front()->x.size();
  std::optional<std::size_t> best;
  SplitScore best_score;
  for (std::size_t v = 0; v < n; ++v) {
    if (used[v] || (!allowed.empty() && !allowed[v])) continue;
    std::uint64_t p0 = 0, q0 = 0, p1 = 0, q1 = 0;
    for (const auto* r : rows) {
      if (r->x[v]) (r->label ? p1 : q1)++;
      else (r->label ? p0 : q0)++;
    }
    if (p0 + q0 == 0 || p1 + q1 == 0) continue;
    auto score = split_score(p0, q0, p1, q1);
    if (!best || score < best_score) {
      best = v;
      best_score = score;
    }
  }
  if (!best) return;

  std::vector<const EligibilityRow*> zero, one;
  for (const auto* r : rows) (r->x[*best] ? one : zero).push_back(r);
  const std::size_t zi = tree.nodes.size();
  tree.nodes.emplace_back();
  const std::size_t oi = tree.nodes.size();
  tree.nodes.emplace_back();
  tree.nodes[at].var = static_cast<int>(*best);
  tree.nodes[at].zero = zi;
  tree.nodes[at].one = oi;
  used[*best] = true;
  grow(tree, zi, zero, used, allowed);
  grow(tree, oi, one, used, allowed);
  used[*best] = false;
}

}  // namespace detail

// CART with Gini impurity, grown until every leaf is pure or no usable
// variable separates its rows. Ties go to the lowest variable index.
// `allowed`, when non-empty, restricts the candidate split variables.
inline DecisionTree fit_cart(const EligibilityDataset& ds, std::span<const std::uint8_t> allowed = {}) {
  DecisionTree tree;
  if (ds.rows.empty()) return tree;
  std::vector<const EligibilityRow*> rows;
  rows.reserve(ds.rows.size());
  for (const auto& r : ds.rows) rows.push_back(&r);
  std::vector<bool> used(ds.rows.front().x.size(), false);
  detail::grow(tree, 0, rows, used, allowed);
  return tree;
}

inline SopExpr tree_to_sop(const DecisionTree& tree) {
  std::vector<Term> terms;
  bool any_zero = false;
  Term path;
  auto walk = [&](auto&& self, std::size_t at) -> void {
    const auto& node = tree.nodes[at];
    if (node.is_leaf()) {
      if (node.label) terms.push_back(path);
      else any_zero = true;
      return;
    }
    const auto v = static_cast<std::size_t>(node.var);
    path.push_back({v, true});
    self(self, node.zero);
    path.back().negated = false;
    self(self, node.one);
    path.pop_back();
  };
  walk(walk, 0);
  if (!any_zero) return SopExpr::always();
  return SopExpr::from_terms(std::move(terms));
}

struct RewardEstimates {
  std::vector<std::optional<double>> mean;
  std::vector<std::size_t> count;
};

inline RewardEstimates infer_rewards(const Trajectory& traj, std::size_t n) {
  std::vector<double> sum(n, 0.0);
  RewardEstimates out{std::vector<std::optional<double>>(n), std::vector<std::size_t>(n, 0)};
  for (const auto& s : traj.steps) {
    if (s.option >= n) throw std::invalid_argument("option index out of range");
    if (!s.e[s.option]) continue;
    sum[s.option] += s.reward;
    ++out.count[s.option];
  }
  for (std::size_t i = 0; i < n; ++i)
    if (out.count[i] > 0) out.mean[i] = sum[i] / static_cast<double>(out.count[i]);
  return out;
}

struct InferredGraph {
  std::vector<SopExpr> preconditions;
  std::vector<double> reward_estimates;  // 0 where unobserved
  std::vector<std::size_t> observation_counts;
  std::vector<int> layers;

  std::size_t size() const noexcept { return preconditions.size(); }

  bool all_false() const {
    return std::all_of(preconditions.begin(), preconditions.end(), [](const SopExpr& e) { return e.is_false(); });
  }

  SubtaskGraph to_graph(const std::vector<std::string>& names = {}) const {
    std::vector<SubtaskSpec> specs(size());
    for (std::size_t i = 0; i < size(); ++i) {
      specs[i].id = i;
      specs[i].name = i < names.size() ? names[i] : "s" + std::to_string(i);
      specs[i].reward_mean = reward_estimates[i];
      specs[i].reward_noise = 0.0;
      specs[i].precondition = preconditions[i];
    }
    return SubtaskGraph(std::move(specs), layers);
  }
};

namespace detail {

// Rows agree on every allowed variable but disagree on the label.
inline bool consistent_on(const EligibilityDataset& ds, const std::vector<bool>& allowed) {
  std::unordered_map<BitVector, bool, BitVectorHash> proj;
  for (const auto& r : ds.rows) {
    BitVector key(r.x.size());
    for (std::size_t v = 0; v < key.size(); ++v) key[v] = allowed[v] ? r.x[v] : 0;
    auto [it, inserted] = proj.emplace(std::move(key), r.label);
    if (!inserted && it->second != r.label) return false;
  }
  return true;
}

}  // namespace detail

// Subtasks are layered greedily: a subtask joins layer l once its labels are
// a function of the subtasks already placed in layers < l, and its tree may
// only split on those. This keeps the inferred preconditions acyclic.
inline InferredGraph infer_graph(const Trajectory& traj, std::size_t n) {
  const auto datasets = build_datasets(traj, n);
  InferredGraph g;
  g.preconditions.assign(n, SopExpr::never());
  g.layers.assign(n, -1);

  std::vector<bool> placed(n, false);
  std::size_t remaining = n;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rows = datasets[i].rows;
    const bool constant = std::all_of(rows.begin(), rows.end(), [&](const auto& r) { return r.label == rows.front().label; });
    if (!constant) continue;
    g.preconditions[i] = !rows.empty() && rows.front().label ? SopExpr::always() : SopExpr::never();
    g.layers[i] = 0;
    placed[i] = true;
    --remaining;
  }

  for (int layer = 1; remaining > 0; ++layer) {
    const std::vector<bool> features = placed;
    std::vector<std::size_t> joined;
    for (std::size_t i = 0; i < n; ++i)
      if (!placed[i] && detail::consistent_on(datasets[i], features)) joined.push_back(i);
    if (joined.empty()) {
      // Only reachable with labels that no acyclic assignment explains; fit
      // the remainder on everything placed so far.
      for (std::size_t i = 0; i < n; ++i)
        if (!placed[i]) joined.push_back(i);
    }
    BitVector mask(n);
    for (std::size_t v = 0; v < n; ++v) mask[v] = features[v] ? 1 : 0;
    for (auto i : joined) {
      g.preconditions[i] = tree_to_sop(fit_cart(datasets[i], mask));
      g.layers[i] = layer;
      placed[i] = true;
      --remaining;
    }
  }

  const auto rewards = infer_rewards(traj, n);
  g.reward_estimates.resize(n);
  for (std::size_t i = 0; i < n; ++i) g.reward_estimates[i] = rewards.mean[i].value_or(0.0);
  g.observation_counts = rewards.count;
  return g;
}

}  // namespace sgi
