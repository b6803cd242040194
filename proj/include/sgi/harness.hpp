#pragma once

// Trial orchestration (adapt -> infer -> test), evaluation metrics and the
// batch sweep behind the `run` command.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "sgi/adapt.hpp"
#include "sgi/env.hpp"
#include "sgi/graph.hpp"
#include "sgi/grprop.hpp"
#include "sgi/infer.hpp"

namespace sgi {

// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seed for stream (a, b) under `master`: mix64(mix64(mix64(master) ^ a) ^ b).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  return mix64(mix64(mix64(master) ^ a) ^ b);
}

enum class PolicyKind { Random, MsgiRand, MsgiGrprop, Oracle };

inline PolicyKind parse_policy(std::string_view s) {
  if (s == "random") return PolicyKind::Random;
  if (s == "msgi-rand") return PolicyKind::MsgiRand;
  if (s == "msgi-grprop") return PolicyKind::MsgiGrprop;
  if (s == "oracle") return PolicyKind::Oracle;
  throw std::invalid_argument("unknown policy '" + std::string(s) + "'");
}

inline std::string_view policy_name(PolicyKind p) {
  switch (p) {
    case PolicyKind::Random: return "random";
    case PolicyKind::MsgiRand: return "msgi-rand";
    case PolicyKind::MsgiGrprop: return "msgi-grprop";
    case PolicyKind::Oracle: return "oracle";
  }
  return "?";
}

class DegenerateBaseline : public std::runtime_error {
 public:
  DegenerateBaseline() : std::runtime_error("R_max equals R_min; normalized return undefined") {}
};

inline double normalized_return(double r, double r_min, double r_max) {
  if (r_max == r_min) throw DegenerateBaseline();
  return (r - r_min) / (r_max - r_min);
}

struct Baselines {
  double r_min = 0.0;
  double r_max = 0.0;
};

inline constexpr int kDefaultBaselineEpisodes = 32;

// Random and oracle-GRProp mean returns over `episodes` episodes each.
inline Baselines compute_baselines(const SubtaskGraph& g, const EnvConfig& env_config, int episodes,
                                   std::uint64_t seed, const GrpropParams& params = {}) {
  if (episodes < 1) throw std::invalid_argument("baseline episodes must be >= 1");
  Environment env(g, env_config);
  const auto rewards = g.rewards();
  Baselines b;
  Rng rng_random(derive_seed(seed, 0));
  for (int k = 0; k < episodes; ++k) b.r_min += rollout_episode(env, random_policy, rng_random);
  Rng rng_oracle(derive_seed(seed, 1));
  auto oracle = [&](const Observation& obs, Rng& rng) { return grprop_policy(g, rewards, obs, params, rng); };
  for (int k = 0; k < episodes; ++k) b.r_max += rollout_episode(env, oracle, rng_oracle);
  b.r_min /= episodes;
  b.r_max /= episodes;
  return b;
}

struct PrfOptions {
  std::size_t exhaustive_limit = 20;   // enumerate all 2^N assignments up to this N
  std::size_t samples = std::size_t{1} << 16;
  std::uint64_t seed = 0;
};

struct Prf {
  double precision = 1.0;
  double recall = 1.0;
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

// Micro-averaged over every (assignment, subtask) pair.
inline Prf precondition_prf(const SubtaskGraph& truth, std::span<const SopExpr> inferred, const PrfOptions& opt = {}) {
  const std::size_t n = truth.size();
  if (inferred.size() != n) throw std::invalid_argument("precondition_prf: dimension mismatch");
  Prf out;
  auto score = [&](const BitVector& x) {
    for (std::size_t i = 0; i < n; ++i) {
      const bool t = truth[i].precondition.eval(x);
      const bool p = inferred[i].eval(x);
      if (t && p) ++out.tp;
      else if (!t && p) ++out.fp;
      else if (t && !p) ++out.fn;
      else ++out.tn;
    }
  };
  if (n <= opt.exhaustive_limit) {
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) score(bits_from_mask(mask, n));
  } else {
    Rng rng(opt.seed);
    std::bernoulli_distribution coin(0.5);
    BitVector x(n);
    for (std::size_t s = 0; s < opt.samples; ++s) {
      for (auto& b : x) b = coin(rng) ? 1 : 0;
      score(x);
    }
  }
  if (out.tp + out.fp > 0) out.precision = static_cast<double>(out.tp) / static_cast<double>(out.tp + out.fp);
  if (out.tp + out.fn > 0) out.recall = static_cast<double>(out.tp) / static_cast<double>(out.tp + out.fn);
  return out;
}

inline Prf precondition_prf(const SubtaskGraph& truth, const InferredGraph& inferred, const PrfOptions& opt = {}) {
  return precondition_prf(truth, std::span<const SopExpr>(inferred.preconditions), opt);
}

inline Prf precondition_prf(const SubtaskGraph& truth, const SubtaskGraph& inferred, const PrfOptions& opt = {}) {
  std::vector<SopExpr> pre;
  for (const auto& s : inferred.subtasks()) pre.push_back(s.precondition);
  return precondition_prf(truth, std::span<const SopExpr>(pre), opt);
}

// Fraction of subtasks eligible or completed in at least one recorded state.
inline double coverage(const Trajectory& traj, std::size_t n) {
  if (n == 0) return 0.0;
  std::vector<bool> hit(n, false);
  traj.for_each_state([&](const BitVector& x, const BitVector& e) {
    for (std::size_t i = 0; i < n; ++i)
      if (x[i] || e[i]) hit[i] = true;
  });
  return static_cast<double>(std::count(hit.begin(), hit.end(), true)) / static_cast<double>(n);
}

struct TrialConfig {
  PolicyKind policy = PolicyKind::MsgiGrprop;
  int adaptation_episodes = 10;
  int test_episodes = 4;
  EnvConfig env;
  GrpropParams grprop;                                        // test phase
  GrpropParams adapt_grprop = [] {                            // adaptation phase
    GrpropParams p;
    p.anneal = std::pair{1.0, 40.0};
    return p;
  }();
  std::size_t refit_period = 0;  // 0: refit at episode boundaries
  PrfOptions prf;
  std::uint64_t seed = 0;

  void validate() const {
    if (adaptation_episodes < 0) throw std::invalid_argument("adaptation episodes must be >= 0");
    if (test_episodes < 1) throw std::invalid_argument("test episodes must be >= 1");
    env.validate();
    grprop.validate();
    adapt_grprop.validate();
  }
};

struct TrialResult {
  PolicyKind policy = PolicyKind::MsgiGrprop;
  int adaptation_episodes = 0;
  std::uint64_t seed = 0;
  Trajectory adaptation;
  double adaptation_return = 0.0;
  double intrinsic_return = 0.0;
  InferredGraph inferred;
  double test_return = 0.0;
  std::optional<double> normalized;
  double precision = 1.0;
  double recall = 1.0;
  double coverage = 0.0;
  double wall_ms = 0.0;

  std::size_t adaptation_steps() const noexcept { return adaptation.steps.size(); }
};

// Oracle trials skip adaptation and execute on the true graph. Random trials
// adapt and infer like MSGI-Rand but act randomly at test time.
inline TrialResult run_trial(const SubtaskGraph& g, const TrialConfig& cfg,
                             std::optional<Baselines> baselines = std::nullopt) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = g.size();
  TrialResult res;
  res.policy = cfg.policy;
  res.adaptation_episodes = cfg.adaptation_episodes;
  res.seed = cfg.seed;

  Environment env(g, cfg.env);
  Rng rng_adapt(derive_seed(cfg.seed, 1));
  Rng rng_test(derive_seed(cfg.seed, 2));

  if (cfg.policy != PolicyKind::Oracle) {
    UcbState ucb(n);
    MsgiGrpropAdapter adapter(n, cfg.adapt_grprop, cfg.adaptation_episodes, cfg.refit_period);
    auto observe = [&](const BitVector& x, const BitVector& e) {
      res.intrinsic_return += ucb.intrinsic_reward(x, e);
      ucb.update(e, x);
    };
    auto policy = [&](const Observation& obs, Rng& rng) {
      observe(obs.x, obs.e);
      if (cfg.policy == PolicyKind::MsgiGrprop) return adapter(obs, res.adaptation, ucb, rng);
      return random_policy(obs, rng);
    };
    for (int k = 0; k < cfg.adaptation_episodes; ++k) {
      res.adaptation_return += rollout_episode(env, policy, rng_adapt, res.adaptation, cfg.adaptation_episodes - k - 1);
      const auto& ep = res.adaptation.episodes.back();
      observe(ep.final_x, ep.final_e);
    }
    res.inferred = infer_graph(res.adaptation, n);
  } else {
    res.inferred.preconditions.reserve(n);
    for (const auto& s : g.subtasks()) res.inferred.preconditions.push_back(s.precondition);
    res.inferred.reward_estimates = g.rewards();
    res.inferred.observation_counts.assign(n, 0);
    if (g.layers()) res.inferred.layers = *g.layers();
  }

  std::vector<std::string> names;
  for (const auto& s : g.subtasks()) names.push_back(s.name);
  const SubtaskGraph exec_graph = cfg.policy == PolicyKind::Oracle ? g : res.inferred.to_graph(names);
  const auto exec_rewards = exec_graph.rewards();
  auto test_policy = [&](const Observation& obs, Rng& rng) {
    if (cfg.policy == PolicyKind::Random) return random_policy(obs, rng);
    return grprop_policy(exec_graph, exec_rewards, obs, cfg.grprop, rng);
  };
  for (int k = 0; k < cfg.test_episodes; ++k)
    res.test_return += rollout_episode(env, test_policy, rng_test);
  res.test_return /= cfg.test_episodes;

  if (baselines) {
    try {
      res.normalized = normalized_return(res.test_return, baselines->r_min, baselines->r_max);
    } catch (const DegenerateBaseline&) {
      res.normalized.reset();
    }
  }
  const auto prf = precondition_prf(g, res.inferred, cfg.prf);
  res.precision = prf.precision;
  res.recall = prf.recall;
  res.coverage = coverage(res.adaptation, n);
  res.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// ---------------------------------------------------------------------------
// Batch sweep

struct NamedGraph {
  std::string id;
  SubtaskGraph graph;
};

struct ExperimentConfig {
  std::vector<PolicyKind> policies{PolicyKind::MsgiGrprop};
  std::vector<int> adaptation_episodes{10};
  int seeds_per_graph = 1;
  int test_episodes = 4;
  int baseline_episodes = kDefaultBaselineEpisodes;
  EnvConfig env;
  GrpropParams grprop;
  std::uint64_t master_seed = 0;
  unsigned threads = 1;
  bool keep_inferred = false;  // attach each trial's inferred graph to its row
};

struct TrialRow {
  std::size_t trial_id = 0;
  std::string graph_id;
  PolicyKind policy = PolicyKind::MsgiGrprop;
  int k = 0;
  std::uint64_t seed = 0;
  double test_return = 0.0;
  std::optional<double> normalized;
  double precision = 0.0;
  double recall = 0.0;
  double coverage = 0.0;
  std::size_t adaptation_steps = 0;
  double wall_ms = 0.0;
  std::optional<SubtaskGraph> inferred;
};

struct TrialFailure {
  std::size_t trial_id = 0;
  std::string message;
};

struct ExperimentResult {
  std::vector<TrialRow> rows;  // sorted by trial_id
  std::vector<TrialFailure> failures;
  std::vector<Baselines> baselines;  // per graph
};

// Stream tag for baseline seeds; trial streams use the seed index.
inline constexpr std::uint64_t kBaselineStream = 0xba5e11e5ba5e11e5ULL;

namespace detail {

template <typename F>
void parallel_for(std::size_t count, unsigned threads, F&& body) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) body(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

// Trials are enumerated graph-major, then policy, K and seed index. The
// trial seed depends only on (master, graph index, seed index), so every
// policy and K sees the same task randomness.
inline ExperimentResult run_experiment(const std::vector<NamedGraph>& graphs, const ExperimentConfig& cfg) {
  ExperimentResult out;
  out.baselines.resize(graphs.size());
  std::vector<std::optional<std::string>> baseline_error(graphs.size());
  detail::parallel_for(graphs.size(), cfg.threads, [&](std::size_t gi) {
    try {
      out.baselines[gi] = compute_baselines(graphs[gi].graph, cfg.env, cfg.baseline_episodes,
                                            derive_seed(cfg.master_seed, gi, kBaselineStream), cfg.grprop);
    } catch (const std::exception& e) {
      baseline_error[gi] = e.what();
    }
  });

  struct Job {
    std::size_t graph;
    PolicyKind policy;
    int k;
    int seed_index;
  };
  std::vector<Job> jobs;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi)
    for (auto p : cfg.policies)
      for (int k : cfg.adaptation_episodes)
        for (int s = 0; s < cfg.seeds_per_graph; ++s) jobs.push_back({gi, p, k, s});

  std::vector<std::optional<TrialRow>> rows(jobs.size());
  std::vector<std::optional<std::string>> errors(jobs.size());
  detail::parallel_for(jobs.size(), cfg.threads, [&](std::size_t j) {
    const auto& job = jobs[j];
    try {
      if (baseline_error[job.graph]) throw std::runtime_error("baselines failed: " + *baseline_error[job.graph]);
      TrialConfig tc;
      tc.policy = job.policy;
      tc.adaptation_episodes = job.k;
      tc.test_episodes = cfg.test_episodes;
      tc.env = cfg.env;
      tc.grprop = cfg.grprop;
      tc.seed = derive_seed(cfg.master_seed, job.graph, static_cast<std::uint64_t>(job.seed_index));
      const auto r = run_trial(graphs[job.graph].graph, tc, out.baselines[job.graph]);
      rows[j] = TrialRow{j,           graphs[job.graph].id, job.policy,  job.k,      tc.seed,
                         r.test_return, r.normalized,        r.precision, r.recall, r.coverage,
                         r.adaptation_steps(), r.wall_ms, std::nullopt};
      if (cfg.keep_inferred) {
        std::vector<std::string> names;
        for (const auto& s : graphs[job.graph].graph.subtasks()) names.push_back(s.name);
        rows[j]->inferred.emplace(r.inferred.to_graph(names));
      }
    } catch (const std::exception& e) {
      errors[j] = e.what();
    }
  });
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    if (rows[j]) out.rows.push_back(std::move(*rows[j]));
    if (errors[j]) out.failures.push_back({j, *errors[j]});
  }
  return out;
}

inline constexpr std::string_view kCsvHeader =
    "trial_id,graph_id,policy,K,seed,test_return,normalized_return,precision,recall,coverage,adaptation_steps,wall_ms";

// wall_ms is written as 0 unless `timing` is set, keeping the file a pure
// function of the inputs.
inline void write_csv(std::ostream& os, std::span<const TrialRow> rows, bool timing = false) {
  auto real = [](double v) { return std::isfinite(v) ? detail::format_real(v) : std::string("nan"); };
  os << kCsvHeader << '\n';
  for (const auto& r : rows) {
    os << r.trial_id << ',' << r.graph_id << ',' << policy_name(r.policy) << ',' << r.k << ',' << r.seed << ','
       << real(r.test_return) << ',' << (r.normalized ? real(*r.normalized) : std::string("nan")) << ','
       << real(r.precision) << ',' << real(r.recall) << ',' << real(r.coverage) << ',' << r.adaptation_steps << ','
       << (timing ? real(r.wall_ms) : std::string("0")) << '\n';
  }
}

}  // namespace sgi
