#pragma once

// Subtask-graph data model: preconditions in sum-of-products form, exact
// eligibility, seeded layered generation, a line-oriented text format and
// Graphviz export.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sgi {

using Rng = std::mt19937_64;

// One byte per subtask, values 0 or 1.
using BitVector = std::vector<std::uint8_t>;

struct BitVectorHash {
  std::size_t operator()(const BitVector& bits) const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b : bits) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

inline BitVector bits_from_mask(std::uint64_t mask, std::size_t n) {
  BitVector x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<std::uint8_t>((mask >> i) & 1U);
  return x;
}

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public GraphError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : GraphError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct Literal {
  std::size_t index = 0;
  bool negated = false;

  bool holds(std::span<const std::uint8_t> x) const { return (x[index] != 0) != negated; }
  auto operator<=>(const Literal&) const = default;
};

using Term = std::vector<Literal>;

// Disjunction of conjunctive terms, kept canonical: literals ascending
// within a term, terms ascending and unique. TRUE and FALSE are the two
// constants (no terms; flag set or not).
class SopExpr {
 public:
  SopExpr() = default;

  static SopExpr always() {
    SopExpr e;
    e.true_ = true;
    return e;
  }
  static SopExpr never() { return SopExpr{}; }

  // Throws GraphError if a term holds both polarities of one index.
  static SopExpr from_terms(std::vector<Term> terms) {
    SopExpr e;
    for (auto& term : terms) {
      std::sort(term.begin(), term.end());
      term.erase(std::unique(term.begin(), term.end()), term.end());
      for (std::size_t k = 1; k < term.size(); ++k) {
        if (term[k].index == term[k - 1].index)
          throw GraphError("term contains both polarities of subtask " +
                           std::to_string(term[k].index));
      }
      if (term.empty()) return always();
    }
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    e.terms_ = std::move(terms);
    return e;
  }

  bool is_true() const noexcept { return true_; }
  bool is_false() const noexcept { return !true_ && terms_.empty(); }
  const std::vector<Term>& terms() const noexcept { return terms_; }

  bool eval(std::span<const std::uint8_t> x) const {
    if (true_) return true;
    for (const auto& term : terms_) {
      if (std::all_of(term.begin(), term.end(), [&](const Literal& l) { return l.holds(x); }))
        return true;
    }
    return false;
  }

  // Largest referenced index, or nullopt for constants.
  std::optional<std::size_t> max_index() const {
    std::optional<std::size_t> m;
    for (const auto& term : terms_)
      for (const auto& l : term) m = std::max(m.value_or(0), l.index);
    return m;
  }

  bool operator==(const SopExpr&) const = default;

 private:
  bool true_ = false;
  std::vector<Term> terms_;
};

inline std::string to_string(const SopExpr& e) {
  if (e.is_true()) return "TRUE";
  if (e.is_false()) return "FALSE";
  std::string out;
  for (std::size_t t = 0; t < e.terms().size(); ++t) {
    if (t) out += " | ";
    const auto& term = e.terms()[t];
    for (std::size_t k = 0; k < term.size(); ++k) {
      if (k) out += " & ";
      if (term[k].negated) out += '!';
      out += std::to_string(term[k].index);
    }
  }
  return out;
}

struct SubtaskSpec {
  std::size_t id = 0;
  std::string name;
  double reward_mean = 0.0;
  double reward_noise = 0.0;
  SopExpr precondition = SopExpr::always();

  bool operator==(const SubtaskSpec&) const = default;
};

// Immutable after construction. Construction validates ids, literal ranges
// and acyclicity, and caches a topological order.
class SubtaskGraph {
 public:
  explicit SubtaskGraph(std::vector<SubtaskSpec> subtasks,
                        std::optional<std::vector<int>> layers = std::nullopt)
      : subtasks_(std::move(subtasks)), layers_(std::move(layers)) {
    const std::size_t n = subtasks_.size();
    if (n == 0) throw GraphError("graph needs at least one subtask");
    if (layers_ && layers_->size() != n) throw GraphError("layer assignment size mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = subtasks_[i];
      if (s.id != i) throw GraphError("subtask id " + std::to_string(s.id) + " at position " + std::to_string(i));
      if (!(s.reward_noise >= 0.0)) throw GraphError("negative reward noise on subtask " + std::to_string(i));
      if (auto m = s.precondition.max_index(); m && *m >= n)
        throw GraphError("subtask " + std::to_string(i) + " references index " + std::to_string(*m) +
                         " >= N=" + std::to_string(n));
      if (layers_) {
        for (const auto& term : s.precondition.terms())
          for (const auto& l : term)
            if ((*layers_)[l.index] >= (*layers_)[i])
              throw GraphError("subtask " + std::to_string(i) + " references a subtask in the same or a higher layer");
      }
    }
    compute_order();
  }

  std::size_t size() const noexcept { return subtasks_.size(); }
  const SubtaskSpec& operator[](std::size_t i) const { return subtasks_[i]; }
  const std::vector<SubtaskSpec>& subtasks() const noexcept { return subtasks_; }
  const std::optional<std::vector<int>>& layers() const noexcept { return layers_; }
  // Parents precede children.
  const std::vector<std::size_t>& topological_order() const noexcept { return order_; }

  std::vector<double> rewards() const {
    std::vector<double> r(size());
    for (std::size_t i = 0; i < size(); ++i) r[i] = subtasks_[i].reward_mean;
    return r;
  }

  int depth() const {
    if (!layers_) return 0;
    return *std::max_element(layers_->begin(), layers_->end()) + 1;
  }

  BitVector eligibility(std::span<const std::uint8_t> x) const {
    if (x.size() != size())
      throw GraphError("completion vector has " + std::to_string(x.size()) + " entries, graph has " +
                       std::to_string(size()));
    BitVector e(size());
    for (std::size_t i = 0; i < size(); ++i) e[i] = subtasks_[i].precondition.eval(x) ? 1 : 0;
    return e;
  }

  bool operator==(const SubtaskGraph& o) const {
    return subtasks_ == o.subtasks_ && layers_ == o.layers_;
  }

 private:
  void compute_order() {
    const std::size_t n = size();
    std::vector<std::vector<std::size_t>> children(n);
    std::vector<std::size_t> indegree(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::set<std::size_t> parents;
      for (const auto& term : subtasks_[i].precondition.terms())
        for (const auto& l : term) parents.insert(l.index);
      for (auto p : parents) children[p].push_back(i);
      indegree[i] = parents.size();
    }
    std::vector<std::size_t> ready;
    for (std::size_t i = n; i-- > 0;)
      if (indegree[i] == 0) ready.push_back(i);
    while (!ready.empty()) {
      auto v = ready.back();
      ready.pop_back();
      order_.push_back(v);
      for (auto c : children[v])
        if (--indegree[c] == 0) ready.push_back(c);
    }
    if (order_.size() != n) throw GraphError("cyclic precondition references");
  }

  std::vector<SubtaskSpec> subtasks_;
  std::optional<std::vector<int>> layers_;
  std::vector<std::size_t> order_;
};

// ---------------------------------------------------------------------------
// Truth-table comparison

inline constexpr std::size_t kMaxEnumerationVars = 24;

struct Equivalence {
  bool equal = false;
  std::uint64_t mismatches = 0;
};

inline Equivalence logical_equivalence(const SopExpr& a, const SopExpr& b, std::size_t n) {
  if (n > kMaxEnumerationVars)
    throw std::invalid_argument("enumeration bound exceeded: n=" + std::to_string(n));
  for (const auto* e : {&a, &b})
    if (auto m = e->max_index(); m && *m >= n)
      throw std::invalid_argument("expression references index >= n");
  Equivalence result;
  BitVector x(n);
  const std::uint64_t total = std::uint64_t{1} << n;
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<std::uint8_t>((mask >> i) & 1U);
    if (a.eval(x) != b.eval(x)) ++result.mismatches;
  }
  result.equal = result.mismatches == 0;
  return result;
}

// ---------------------------------------------------------------------------
// Generation

struct GenConfig {
  std::vector<std::size_t> subtasks_per_layer;
  // Distractors are counted inside subtasks_per_layer.
  std::vector<std::size_t> distractors_per_layer;
  std::pair<std::size_t, std::size_t> and_fan_in{1, 3};
  std::pair<std::size_t, std::size_t> or_fan_in{1, 2};
  double not_probability = 0.25;
  // How many higher-layer terms carry each distractor as a negated literal.
  std::pair<std::size_t, std::size_t> distractor_fan_out{1, 3};
  std::vector<std::pair<double, double>> reward_range_per_layer;
  // Half-width of the reward perturbation as a fraction of the mean.
  double reward_noise_fraction = 0.2;

  std::size_t layers() const noexcept { return subtasks_per_layer.size(); }
  std::size_t total() const noexcept {
    std::size_t n = 0;
    for (auto c : subtasks_per_layer) n += c;
    return n;
  }

  void validate() const {
    if (subtasks_per_layer.empty()) throw std::invalid_argument("config needs at least one layer");
    if (reward_range_per_layer.size() != layers())
      throw std::invalid_argument("reward_range_per_layer must have one entry per layer");
    if (!distractors_per_layer.empty() && distractors_per_layer.size() != layers())
      throw std::invalid_argument("distractors_per_layer must be empty or have one entry per layer");
    for (std::size_t l = 0; l < layers(); ++l) {
      if (subtasks_per_layer[l] == 0) throw std::invalid_argument("empty layer " + std::to_string(l));
      if (distractor_count(l) > subtasks_per_layer[l])
        throw std::invalid_argument("more distractors than subtasks in layer " + std::to_string(l));
      if (reward_range_per_layer[l].first > reward_range_per_layer[l].second)
        throw std::invalid_argument("reversed reward range");
    }
    if (and_fan_in.first < 1 || or_fan_in.first < 1 || distractor_fan_out.first < 1)
      throw std::invalid_argument("fan-in minima must be >= 1");
    if (and_fan_in.first > and_fan_in.second || or_fan_in.first > or_fan_in.second ||
        distractor_fan_out.first > distractor_fan_out.second)
      throw std::invalid_argument("reversed fan-in range");
    if (!(not_probability >= 0.0 && not_probability <= 1.0))
      throw std::invalid_argument("not_probability outside [0,1]");
    if (reward_noise_fraction < 0.0) throw std::invalid_argument("negative reward noise fraction");
  }

  std::size_t distractor_count(std::size_t layer) const {
    return distractors_per_layer.empty() ? 0 : distractors_per_layer[layer];
  }
};

enum class Preset { D1, D2, D3, D4, Mining };

inline Preset parse_preset(std::string_view name) {
  if (name == "D1" || name == "d1") return Preset::D1;
  if (name == "D2" || name == "d2") return Preset::D2;
  if (name == "D3" || name == "d3") return Preset::D3;
  if (name == "D4" || name == "d4") return Preset::D4;
  if (name == "mining" || name == "Mining") return Preset::Mining;
  throw std::invalid_argument("unknown preset '" + std::string(name) + "'");
}

inline std::string_view preset_name(Preset p) {
  switch (p) {
    case Preset::D1: return "D1";
    case Preset::D2: return "D2";
    case Preset::D3: return "D3";
    case Preset::D4: return "D4";
    case Preset::Mining: return "mining";
  }
  return "?";
}

// Layer sizes fix (depth, N) per preset; the remaining knobs are defaults.
inline GenConfig preset_config(Preset p) {
  GenConfig c;
  switch (p) {
    case Preset::D1:
      c.subtasks_per_layer = {6, 4, 2, 1};
      c.distractors_per_layer = {2, 1, 0, 0};
      c.reward_range_per_layer = {{0.1, 0.2}, {0.3, 0.4}, {0.7, 0.9}, {1.8, 2.0}};
      break;
    case Preset::D2:
      c.subtasks_per_layer = {7, 5, 2, 1};
      c.distractors_per_layer = {2, 2, 0, 0};
      c.reward_range_per_layer = {{0.1, 0.2}, {0.3, 0.4}, {0.7, 0.9}, {1.8, 2.0}};
      break;
    case Preset::D3:
      c.subtasks_per_layer = {5, 4, 4, 2, 1};
      c.distractors_per_layer = {1, 1, 1, 0, 0};
      c.reward_range_per_layer = {{0.1, 0.2}, {0.3, 0.4}, {0.6, 0.7}, {1.0, 1.2}, {2.0, 2.2}};
      break;
    case Preset::D4:
      c.subtasks_per_layer = {4, 3, 3, 3, 2, 1};
      c.distractors_per_layer = {0, 0, 0, 0, 0, 0};
      c.reward_range_per_layer = {{0.1, 0.2}, {0.3, 0.4}, {0.6, 0.7}, {1.0, 1.2}, {1.4, 1.6}, {2.4, 2.6}};
      break;
    case Preset::Mining:
      // Crafting-style: conjunctive recipes, no negation.
      c.subtasks_per_layer = {7, 5, 4, 3, 2, 1};
      c.distractors_per_layer = {0, 0, 0, 0, 0, 0};
      c.and_fan_in = {1, 2};
      c.or_fan_in = {1, 1};
      c.not_probability = 0.0;
      c.reward_range_per_layer = {{0.1, 0.1}, {0.2, 0.3}, {0.4, 0.6}, {0.8, 1.0}, {1.4, 1.6}, {2.4, 2.6}};
      break;
  }
  return c;
}

namespace detail {

template <typename T>
std::vector<T> sample_without_replacement(std::vector<T> pool, std::size_t k, Rng& rng) {
  k = std::min(k, pool.size());
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

inline std::size_t uniform_count(std::pair<std::size_t, std::size_t> range, Rng& rng) {
  return std::uniform_int_distribution<std::size_t>(range.first, range.second)(rng);
}

}  // namespace detail

// Layer-l preconditions draw positive literals from non-distractor subtasks
// of lower layers, with at least one from layer l-1 per term so the depth is
// exact. Distractors never appear positively; each is negated in a few
// higher-layer terms.
inline SubtaskGraph generate_graph(const GenConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t layers = config.layers();

  std::vector<int> layer_of;
  std::vector<bool> distractor;
  std::vector<std::vector<std::size_t>> members(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t k = 0; k < config.subtasks_per_layer[l]; ++k) {
      members[l].push_back(layer_of.size());
      layer_of.push_back(static_cast<int>(l));
      distractor.push_back(k < config.distractor_count(l));
    }
  }
  const std::size_t n = layer_of.size();

  for (std::size_t l = 1; l < layers; ++l) {
    std::size_t below = 0, prev_useful = 0;
    for (std::size_t m = 0; m < l; ++m)
      for (auto i : members[m]) {
        if (distractor[i]) continue;
        ++below;
        if (m + 1 == l) ++prev_useful;
      }
    if (prev_useful == 0)
      throw std::invalid_argument("layer " + std::to_string(l - 1) + " has no non-distractor subtasks");
    if (config.and_fan_in.first > below)
      throw std::invalid_argument("and_fan_in minimum exceeds available lower-layer subtasks at layer " +
                                  std::to_string(l));
  }

  std::vector<std::vector<Term>> terms(n);
  std::vector<SopExpr> pre(n, SopExpr::always());

  for (std::size_t l = 1; l < layers; ++l) {
    std::vector<std::size_t> prev, lower;
    for (std::size_t m = 0; m < l; ++m)
      for (auto i : members[m])
        if (!distractor[i]) {
          lower.push_back(i);
          if (m + 1 == l) prev.push_back(i);
        }

    std::set<std::vector<Term>> used;
    for (auto i : members[l]) {
      bool placed = false;
      for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
        std::vector<Term> candidate;
        const std::size_t n_terms = detail::uniform_count(config.or_fan_in, rng);
        for (std::size_t t = 0; t < n_terms; ++t) {
          const std::size_t fan = std::min(detail::uniform_count(config.and_fan_in, rng), lower.size());
          std::vector<Literal> lits;
          auto anchor = detail::sample_without_replacement(prev, 1, rng).front();
          lits.push_back({anchor, false});
          std::vector<std::size_t> rest;
          for (auto j : lower)
            if (j != anchor) rest.push_back(j);
          for (auto j : detail::sample_without_replacement(rest, fan - 1, rng)) lits.push_back({j, false});
          if (std::bernoulli_distribution(config.not_probability)(rng)) {
            std::vector<std::size_t> free;
            for (auto j : rest)
              if (std::none_of(lits.begin(), lits.end(), [&](const Literal& x) { return x.index == j; }))
                free.push_back(j);
            if (!free.empty()) lits.push_back({detail::sample_without_replacement(free, 1, rng).front(), true});
          }
          std::sort(lits.begin(), lits.end());
          candidate.push_back(std::move(lits));
        }
        std::sort(candidate.begin(), candidate.end());
        candidate.erase(std::unique(candidate.begin(), candidate.end()), candidate.end());
        if (used.insert(candidate).second) {
          terms[i] = std::move(candidate);
          placed = true;
        }
      }
      if (!placed)
        throw std::invalid_argument("could not generate distinct preconditions in layer " + std::to_string(l));
    }
  }

  // Distractor wiring.
  for (std::size_t i = 0; i < n; ++i) {
    if (!distractor[i]) continue;
    std::vector<std::pair<std::size_t, std::size_t>> slots;
    for (std::size_t j = 0; j < n; ++j)
      if (layer_of[j] > layer_of[i])
        for (std::size_t t = 0; t < terms[j].size(); ++t) slots.emplace_back(j, t);
    const std::size_t fan = detail::uniform_count(config.distractor_fan_out, rng);
    for (auto [j, t] : detail::sample_without_replacement(slots, fan, rng)) {
      terms[j][t].push_back({i, true});
      std::sort(terms[j][t].begin(), terms[j][t].end());
    }
  }

  std::vector<SubtaskSpec> specs(n);
  std::vector<std::size_t> within(layers, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto l = static_cast<std::size_t>(layer_of[i]);
    auto& s = specs[i];
    s.id = i;
    s.name = (distractor[i] ? "D" : "T") + std::to_string(l) + "_" + std::to_string(within[l]++);
    const auto [lo, hi] = config.reward_range_per_layer[l];
    s.reward_mean = lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
    s.reward_noise = config.reward_noise_fraction * std::abs(s.reward_mean);
    s.precondition = l == 0 ? SopExpr::always() : SopExpr::from_terms(terms[i]);
  }
  return SubtaskGraph(std::move(specs), std::move(layer_of));
}

// ---------------------------------------------------------------------------
// Text format

namespace detail {

inline std::string format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view tok, std::size_t line, const char* what) {
  T v{};
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw ParseError(line, std::string("bad ") + what + " '" + std::string(tok) + "'");
  return v;
}

inline SopExpr parse_expr(std::string_view text, std::size_t n, std::size_t line) {
  text = trim(text);
  if (text == "TRUE") return SopExpr::always();
  if (text == "FALSE") return SopExpr::never();
  std::vector<Term> terms(1);
  std::size_t pos = 0;
  bool expect_literal = true;
  int depth = 0;
  while (pos < text.size()) {
    const char c = text[pos];
    if (c == ' ' || c == '\t') {
      ++pos;
    } else if (c == '(') {
      if (!expect_literal || depth || !terms.back().empty()) throw ParseError(line, "unexpected '('");
      ++depth;
      ++pos;
    } else if (c == ')') {
      if (expect_literal || !depth) throw ParseError(line, "unexpected ')'");
      --depth;
      ++pos;
    } else if (c == '&') {
      if (expect_literal) throw ParseError(line, "unexpected '&'");
      expect_literal = true;
      ++pos;
    } else if (c == '|') {
      if (expect_literal || depth) throw ParseError(line, "unexpected '|'");
      terms.emplace_back();
      expect_literal = true;
      ++pos;
    } else {
      if (!expect_literal) throw ParseError(line, "missing operator before literal");
      bool neg = false;
      if (c == '!') {
        neg = true;
        ++pos;
      }
      std::size_t end = pos;
      while (end < text.size() && text[end] >= '0' && text[end] <= '9') ++end;
      if (end == pos) throw ParseError(line, "expected subtask index");
      const auto idx = parse_number<std::size_t>(text.substr(pos, end - pos), line, "index");
      if (idx >= n) throw ParseError(line, "index " + std::to_string(idx) + " out of range (N=" + std::to_string(n) + ")");
      terms.back().push_back({idx, neg});
      expect_literal = false;
      pos = end;
    }
  }
  if (expect_literal || depth) throw ParseError(line, "incomplete expression");
  try {
    return SopExpr::from_terms(std::move(terms));
  } catch (const GraphError& e) {
    throw ParseError(line, e.what());
  }
}

}  // namespace detail

inline std::string serialize_graph(const SubtaskGraph& g) {
  std::ostringstream out;
  out << "N " << g.size() << '\n';
  for (const auto& s : g.subtasks()) {
    if (s.name.empty() || s.name.find_first_of(" \t\n#") != std::string::npos)
      throw GraphError("subtask name '" + s.name + "' is not serializable");
    out << "SUBTASK " << s.id << " name=" << s.name << " reward=" << detail::format_real(s.reward_mean)
        << " noise=" << detail::format_real(s.reward_noise);
    if (g.layers()) out << " layer=" << (*g.layers())[s.id];
    out << '\n';
  }
  for (const auto& s : g.subtasks()) out << "PRECOND " << s.id << ' ' << to_string(s.precondition) << '\n';
  return out.str();
}

inline SubtaskGraph parse_graph(std::string_view text) {
  std::optional<std::size_t> n;
  std::vector<std::optional<SubtaskSpec>> specs;
  std::vector<bool> have_pre;
  std::vector<int> layers;
  std::size_t layered = 0;
  std::size_t line_no = 0;

  auto need_header = [&](std::size_t line) {
    if (!n) throw ParseError(line, "missing 'N <count>' header");
  };
  auto parse_id = [&](std::string_view tok, std::size_t line) {
    auto id = detail::parse_number<std::size_t>(tok, line, "subtask id");
    if (id >= *n) throw ParseError(line, "subtask id " + std::to_string(id) + " out of range");
    return id;
  };

  std::vector<std::pair<std::size_t, std::pair<std::size_t, std::string>>> pending_pre;
  while (!text.empty()) {
    ++line_no;
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto toks = detail::split_ws(line);
    const auto kw = toks[0];
    if (kw == "N") {
      if (n) throw ParseError(line_no, "duplicate header");
      if (toks.size() != 2) throw ParseError(line_no, "expected 'N <count>'");
      n = detail::parse_number<std::size_t>(toks[1], line_no, "count");
      if (*n == 0) throw ParseError(line_no, "N must be >= 1");
      specs.assign(*n, std::nullopt);
      have_pre.assign(*n, false);
      layers.assign(*n, 0);
    } else if (kw == "SUBTASK") {
      need_header(line_no);
      if (toks.size() < 2) throw ParseError(line_no, "expected subtask id");
      SubtaskSpec s;
      s.id = parse_id(toks[1], line_no);
      if (specs[s.id]) throw ParseError(line_no, "duplicate SUBTASK " + std::to_string(s.id));
      bool has_name = false, has_reward = false, has_noise = false;
      for (std::size_t k = 2; k < toks.size(); ++k) {
        auto eq = toks[k].find('=');
        if (eq == std::string_view::npos) throw ParseError(line_no, "expected key=value, got '" + std::string(toks[k]) + "'");
        auto key = toks[k].substr(0, eq);
        auto val = toks[k].substr(eq + 1);
        if (key == "name") {
          if (val.empty()) throw ParseError(line_no, "empty name");
          s.name = std::string(val);
          has_name = true;
        } else if (key == "reward") {
          s.reward_mean = detail::parse_number<double>(val, line_no, "reward");
          has_reward = true;
        } else if (key == "noise") {
          s.reward_noise = detail::parse_number<double>(val, line_no, "noise");
          if (s.reward_noise < 0) throw ParseError(line_no, "negative noise");
          has_noise = true;
        } else if (key == "layer") {
          layers[s.id] = detail::parse_number<int>(val, line_no, "layer");
          ++layered;
        } else {
          throw ParseError(line_no, "unknown key '" + std::string(key) + "'");
        }
      }
      if (!has_name || !has_reward || !has_noise) throw ParseError(line_no, "SUBTASK needs name, reward and noise");
      specs[s.id] = std::move(s);
    } else if (kw == "PRECOND") {
      need_header(line_no);
      if (toks.size() < 3) throw ParseError(line_no, "expected 'PRECOND <id> <expr>'");
      auto id = parse_id(toks[1], line_no);
      if (have_pre[id]) throw ParseError(line_no, "duplicate PRECOND " + std::to_string(id));
      have_pre[id] = true;
      auto rest = line.substr(static_cast<std::size_t>(toks[1].data() - line.data()) + toks[1].size());
      pending_pre.push_back({line_no, {id, std::string(rest)}});
    } else {
      throw ParseError(line_no, "unknown directive '" + std::string(kw) + "'");
    }
  }
  need_header(line_no + 1);
  for (const auto& [line, entry] : pending_pre)
    specs[entry.first]->precondition = detail::parse_expr(entry.second, *n, line);

  std::vector<SubtaskSpec> out;
  for (std::size_t i = 0; i < *n; ++i) {
    if (!specs[i]) throw ParseError(line_no, "missing SUBTASK " + std::to_string(i));
    if (!have_pre[i]) throw ParseError(line_no, "missing PRECOND " + std::to_string(i));
    out.push_back(std::move(*specs[i]));
  }
  if (layered != 0 && layered != *n) throw ParseError(line_no, "layer given for some subtasks but not all");
  try {
    if (layered) return SubtaskGraph(std::move(out), std::move(layers));
    return SubtaskGraph(std::move(out));
  } catch (const ParseError&) {
    throw;
  } catch (const GraphError& e) {
    throw ParseError(line_no, e.what());
  }
}

// ---------------------------------------------------------------------------
// Graphviz

// Each conjunctive term becomes a small AND node; negated literals are
// dashed edges with an open-dot head.
inline std::string export_dot(const SubtaskGraph& g) {
  std::ostringstream out;
  out << "digraph subtask_graph {\n";
  out << "  rankdir=LR;\n";
  out << "  node [shape=box, style=rounded];\n";
  for (const auto& s : g.subtasks()) {
    out << "  s" << s.id << " [label=\"" << s.name << "\\nr=" << detail::format_real(s.reward_mean) << "\"";
    if (s.precondition.is_false()) out << ", style=\"rounded,dashed\"";
    out << "];\n";
  }
  for (const auto& s : g.subtasks()) {
    const auto& terms = s.precondition.terms();
    for (std::size_t t = 0; t < terms.size(); ++t) {
      const std::string and_id = "and_" + std::to_string(s.id) + "_" + std::to_string(t);
      out << "  " << and_id << " [label=\"AND\", shape=ellipse, style=filled, fillcolor=lightgray];\n";
      for (const auto& l : terms[t]) {
        out << "  s" << l.index << " -> " << and_id;
        if (l.negated) out << " [style=dashed, arrowhead=odot, color=red]";
        out << ";\n";
      }
      out << "  " << and_id << " -> s" << s.id << ";\n";
    }
  }
  out << "}\n";
  return out.str();
}

}  // namespace sgi
