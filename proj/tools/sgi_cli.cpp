// sgi: generate subtask graphs, run inference/execution sweeps, score
// inferred graphs and export DOT.

#include <CLI11.hpp>
#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sgi/sgi.hpp"

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

sgi::SubtaskGraph load_graph(const fs::path& p) {
  try {
    return sgi::parse_graph(read_file(p));
  } catch (const sgi::ParseError& e) {
    throw std::runtime_error(p.string() + ":" + std::to_string(e.line()) + ": " + e.what());
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

struct GenArgs {
  std::string preset = "D1";
  int count = 1;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_gen(const GenArgs& a) {
  const auto preset = sgi::parse_preset(a.preset);
  const auto cfg = sgi::preset_config(preset);
  fs::create_directories(a.out);
  for (int i = 0; i < a.count; ++i) {
    const auto g = sgi::generate_graph(cfg, sgi::derive_seed(a.seed, static_cast<std::uint64_t>(i)));
    char name[32];
    std::snprintf(name, sizeof name, "graph_%04d.graph", i);
    write_file(fs::path(a.out) / name, sgi::serialize_graph(g));
    spdlog::debug("{}: N={} depth={}", name, g.size(), g.depth());
  }
  spdlog::info("wrote {} {} graph(s) to {}", a.count, sgi::preset_name(preset), a.out);
  return 0;
}

struct RunArgs {
  std::string graphs;
  std::string policy = "msgi-grprop";
  std::string episodes = "10";
  int test_episodes = 4;
  int seeds = 1;
  int baseline_episodes = sgi::kDefaultBaselineEpisodes;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool timing = false;
  std::string out;
  std::string save_inferred;
};

int cmd_run(const RunArgs& a) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(a.graphs))
    if (entry.is_regular_file() && entry.path().extension() == ".graph") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .graph files in " + a.graphs);

  std::vector<sgi::NamedGraph> graphs;
  for (const auto& f : files) graphs.push_back({f.stem().string(), load_graph(f)});

  sgi::ExperimentConfig cfg;
  cfg.policies.clear();
  for (const auto& p : split_list(a.policy)) cfg.policies.push_back(sgi::parse_policy(p));
  cfg.adaptation_episodes.clear();
  for (const auto& k : split_list(a.episodes)) cfg.adaptation_episodes.push_back(std::stoi(k));
  cfg.seeds_per_graph = a.seeds;
  cfg.test_episodes = a.test_episodes;
  cfg.baseline_episodes = a.baseline_episodes;
  cfg.master_seed = a.seed;
  cfg.threads = std::max(1u, a.threads);
  cfg.keep_inferred = !a.save_inferred.empty();

  spdlog::info("{} graph(s), {} trial(s), {} thread(s)", graphs.size(),
               graphs.size() * cfg.policies.size() * cfg.adaptation_episodes.size() * cfg.seeds_per_graph,
               cfg.threads);
  const auto res = sgi::run_experiment(graphs, cfg);
  for (const auto& f : res.failures) spdlog::error("trial {}: {}", f.trial_id, f.message);

  std::ostringstream csv;
  sgi::write_csv(csv, res.rows, a.timing);
  write_file(a.out, csv.str());
  if (cfg.keep_inferred) {
    for (const auto& row : res.rows) {
      char name[256];
      std::snprintf(name, sizeof name, "%05zu_%s_%s_K%d.graph", row.trial_id, row.graph_id.c_str(),
                    std::string(sgi::policy_name(row.policy)).c_str(), row.k);
      write_file(fs::path(a.save_inferred) / name, sgi::serialize_graph(*row.inferred));
    }
  }

  // Per (policy, K) summary; the normalized column is the ratio of means.
  struct Acc {
    double r = 0, rmin = 0, rmax = 0, prec = 0, rec = 0, cov = 0;
    int n = 0;
  };
  std::map<std::pair<int, int>, Acc> acc;
  std::map<std::string, std::size_t> graph_index;
  for (std::size_t i = 0; i < graphs.size(); ++i) graph_index[graphs[i].id] = i;
  for (const auto& r : res.rows) {
    auto& s = acc[{static_cast<int>(r.policy), r.k}];
    const auto& b = res.baselines[graph_index[r.graph_id]];
    s.r += r.test_return;
    s.rmin += b.r_min;
    s.rmax += b.r_max;
    s.prec += r.precision;
    s.rec += r.recall;
    s.cov += r.coverage;
    ++s.n;
  }
  std::printf("%-12s %4s %6s %10s %10s %9s %9s %9s\n", "policy", "K", "trials", "return", "normalized", "precision",
              "recall", "coverage");
  for (const auto& [key, s] : acc) {
    const double norm = s.rmax != s.rmin ? (s.r - s.rmin) / (s.rmax - s.rmin) : std::nan("");
    std::printf("%-12s %4d %6d %10.4f %10.4f %9.4f %9.4f %9.4f\n",
                std::string(sgi::policy_name(static_cast<sgi::PolicyKind>(key.first))).c_str(), key.second, s.n,
                s.r / s.n, norm, s.prec / s.n, s.rec / s.n, s.cov / s.n);
  }
  spdlog::info("wrote {} row(s) to {}", res.rows.size(), a.out);
  return res.failures.empty() ? 0 : 1;
}

struct EvalArgs {
  std::string truth;
  std::string inferred;
  std::size_t samples = std::size_t{1} << 16;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a) {
  const auto truth = load_graph(a.truth);
  const auto inferred = load_graph(a.inferred);
  if (truth.size() != inferred.size())
    throw std::runtime_error("graphs differ in size: " + std::to_string(truth.size()) + " vs " +
                             std::to_string(inferred.size()));
  sgi::PrfOptions opt;
  opt.samples = a.samples;
  opt.seed = a.seed;
  const auto prf = sgi::precondition_prf(truth, inferred, opt);
  std::printf("precision %.6f\nrecall %.6f\n", prf.precision, prf.recall);
  std::printf("tp %llu fp %llu fn %llu tn %llu\n", static_cast<unsigned long long>(prf.tp),
              static_cast<unsigned long long>(prf.fp), static_cast<unsigned long long>(prf.fn),
              static_cast<unsigned long long>(prf.tn));
  if (truth.size() <= sgi::kMaxEnumerationVars) {
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const auto eq = sgi::logical_equivalence(truth[i].precondition, inferred[i].precondition, truth.size());
      if (!eq.equal) spdlog::info("subtask {} differs on {} assignment(s)", i, eq.mismatches);
    }
  }
  return 0;
}

struct DotArgs {
  std::string graph;
  std::string out;
};

int cmd_dot(const DotArgs& a) {
  const auto dot = sgi::export_dot(load_graph(a.graph));
  if (a.out.empty() || a.out == "-") std::cout << dot;
  else write_file(a.out, dot);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("sgi"));
  spdlog::set_pattern("%^%l%$: %v");
  spdlog::set_level(spdlog::level::warn);
  spdlog::cfg::load_env_levels();  // SPDLOG_LEVEL=info|debug|...

  CLI::App app{"Subtask graph inference toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate random subtask graphs");
  g->add_option("--preset", gen.preset, "D1, D2, D3, D4 or mining")->capture_default_str();
  g->add_option("--count", gen.count, "Number of graphs")->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--seed", gen.seed, "Master seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->required();

  RunArgs run;
  auto* r = app.add_subcommand("run", "Run adaptation/inference/test trials over a directory of graphs");
  r->add_option("--graphs", run.graphs, "Directory of .graph files")->required()->check(CLI::ExistingDirectory);
  r->add_option("--policy", run.policy, "Policy or comma list: random, msgi-rand, msgi-grprop, oracle")
      ->capture_default_str();
  r->add_option("--episodes", run.episodes, "Adaptation episodes K (comma list allowed)")->capture_default_str();
  r->add_option("--test-episodes", run.test_episodes, "Test episodes per trial")->capture_default_str();
  r->add_option("--seeds", run.seeds, "Trials per graph")->capture_default_str()->check(CLI::PositiveNumber);
  r->add_option("--baseline-episodes", run.baseline_episodes, "Episodes per baseline estimate")
      ->capture_default_str();
  r->add_option("--seed", run.seed, "Master seed")->capture_default_str();
  r->add_option("--threads", run.threads, "Worker threads")->capture_default_str();
  r->add_flag("--timing", run.timing, "Record wall_ms (makes the CSV run-dependent)");
  r->add_option("--out", run.out, "Output CSV")->required();
  r->add_option("--save-inferred", run.save_inferred, "Directory for each trial's inferred graph");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Precision/recall of inferred preconditions against a truth graph");
  e->add_option("--truth", ev.truth, "Ground-truth graph")->required()->check(CLI::ExistingFile);
  e->add_option("--inferred", ev.inferred, "Inferred graph")->required()->check(CLI::ExistingFile);
  e->add_option("--samples", ev.samples, "Sampled assignments when N > 20")->capture_default_str();
  e->add_option("--seed", ev.seed, "Sampling seed")->capture_default_str();

  DotArgs dot;
  auto* d = app.add_subcommand("dot", "Export a graph as Graphviz DOT");
  d->add_option("--graph", dot.graph, "Graph file")->required()->check(CLI::ExistingFile);
  d->add_option("--out", dot.out, "Output .dot file (stdout if omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*g) return cmd_gen(gen);
    if (*r) return cmd_run(run);
    if (*e) return cmd_eval(ev);
    if (*d) return cmd_dot(dot);
  } catch (const std::exception& ex) {
    spdlog::error("{}", ex.what());
    return 2;
  }
  return 0;
}
