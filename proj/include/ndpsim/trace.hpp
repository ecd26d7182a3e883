#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ndpsim/model.hpp"
#include "ndpsim/random.hpp"

// Synthetic activation traces with the statistical structure the scheduler
// consumes: power-law per-neuron frequencies, high adjacent-token overlap,
// and planted parent correlations between consecutive layers.  Also ingests
// traces produced elsewhere via the same line-delimited format.
namespace ndpsim {

struct TokenCounts {
  uint32_t prefill = 128;
  uint32_t decode = 128;
  uint32_t total() const { return prefill + decode; }
};

struct TraceGenConfig {
  double sparsity = 0.8;             // inactive fraction per layer, [0.5, 0.95]
  double zipf_exponent = 2.0;        // skew of base activation frequencies
  double adjacency_retention = 0.9;  // rho: kept fraction of previous token's set
  double correlation_boost = 8.0;    // odds multiplier when planted parents fired
  double base_prob_cap = 0.98;       // keeps every neuron informative
  uint64_t rng_seed = 1;

  void validate() const {
    if (sparsity < 0.5 || sparsity > 0.95)
      throw ConfigError("trace: sparsity must be in [0.5, 0.95]");
    if (adjacency_retention < 0.0 || adjacency_retention > 1.0)
      throw ConfigError("trace: adjacency_retention must be in [0, 1]");
    if (zipf_exponent < 0.0) throw ConfigError("trace: zipf_exponent must be >= 0");
    if (correlation_boost < 1.0)
      throw ConfigError("trace: correlation_boost must be >= 1");
    if (base_prob_cap <= 0.0 || base_prob_cap > 1.0)
      throw ConfigError("trace: base_prob_cap must be in (0, 1]");
  }
};

struct TraceHeader {
  uint64_t shape_fingerprint = 0;
  uint32_t prefill_tokens = 0;
  uint32_t decode_tokens = 0;
  double sparsity_target = 0;
  uint32_t num_layers = 0;
  uint32_t neurons_per_layer = 0;
};

struct ActivationTrace {
  TraceHeader header;
  // records[token][layer] = strictly increasing neuron indices (layer-local)
  std::vector<std::vector<std::vector<uint32_t>>> records;

  uint32_t num_tokens() const { return static_cast<uint32_t>(records.size()); }
  const std::vector<uint32_t>& active(uint32_t token, uint32_t layer) const {
    return records[token][layer];
  }

  void check_shape(const ModelShape& shape) const {
    if (header.shape_fingerprint != shape.fingerprint())
      throw ConfigError("trace: shape fingerprint mismatch");
  }

  // Per-neuron activation frequency over [t0, t1).
  std::vector<double> frequencies(const ModelShape& shape, uint32_t t0,
                                  uint32_t t1) const {
    if (t1 <= t0 || t1 > num_tokens())
      throw ConfigError("trace: bad token range for frequencies");
    std::vector<double> f(shape.total_neurons(), 0.0);
    for (uint32_t t = t0; t < t1; ++t)
      for (uint32_t l = 0; l < header.num_layers; ++l)
        for (uint32_t i : records[t][l])
          f[shape.global_index({l, i})] += 1.0;
    const double inv = 1.0 / (t1 - t0);
    for (double& v : f) v *= inv;
    return f;
  }
  std::vector<double> prefill_frequencies(const ModelShape& shape) const {
    return frequencies(shape, 0, header.prefill_tokens);
  }

  friend bool operator==(const ActivationTrace& a, const ActivationTrace& b) {
    return a.header.shape_fingerprint == b.header.shape_fingerprint &&
           a.header.prefill_tokens == b.header.prefill_tokens &&
           a.header.decode_tokens == b.header.decode_tokens &&
           a.header.sparsity_target == b.header.sparsity_target &&
           a.records == b.records;
  }
};

// generate_trace also returns the planted ground truth so tests can check
// parent recovery; only the trace itself round-trips through files.
struct GeneratedTrace {
  ActivationTrace trace;
  std::vector<double> base_probs;                   // per global neuron
  std::vector<std::array<uint32_t, 2>> parents;     // per global neuron, layer-local
};

namespace detail {

// m weighted draws without replacement; zeroed weights are never picked.
inline void weighted_sample(std::vector<double>& weights, uint32_t m, Rng& rng,
                            std::vector<uint32_t>& out) {
  for (uint32_t draw = 0; draw < m; ++draw) {
    double total = 0;
    for (double w : weights) total += w;
    if (total <= 0) throw ConfigError("trace: sampling weights exhausted");
    double r = rng.uniform01() * total;
    uint32_t pick = 0;
    double acc = 0;
    for (uint32_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (r < acc) {
        pick = i;
        break;
      }
      pick = i;  // fall through to the last positive weight on FP round-off
    }
    out.push_back(pick);
    weights[pick] = 0;
  }
}

inline size_t intersection_size(const std::vector<uint32_t>& a,
                                const std::vector<uint32_t>& b) {
  size_t i = 0, j = 0, n = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) ++i;
    else if (a[i] > b[j]) ++j;
    else { ++n; ++i; ++j; }
  }
  return n;
}

// Solves sum_i min(cap, c * z_i) = target for c by bisection.
inline double solve_base_prob_scale(const std::vector<double>& z, double cap,
                                    double target) {
  double lo = 0, hi = 1;
  auto mass = [&](double c) {
    double s = 0;
    for (double v : z) s += std::min(cap, c * v);
    return s;
  };
  while (mass(hi) < target) hi *= 2;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    (mass(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

inline GeneratedTrace generate_trace(const TraceGenConfig& cfg,
                                     const ModelShape& shape,
                                     const TokenCounts& tokens) {
  cfg.validate();
  shape.validate();
  if (tokens.prefill < 1 || tokens.decode < 1)
    throw ConfigError("trace: need at least one prefill and one decode token");

  const uint32_t n_per_layer = shape.neurons_per_layer();
  const double density = 1.0 - cfg.sparsity;
  const uint32_t quota = static_cast<uint32_t>(std::llround(density * n_per_layer));
  if (density * n_per_layer < 1.0)
    throw ConfigError("trace: quota unsatisfiable, density * neurons < 1");
  if (quota >= n_per_layer)
    throw ConfigError("trace: quota leaves no inactive neurons");

  Rng master(cfg.rng_seed);
  Rng rng_setup = master.fork(0x5e7);
  Rng rng_tokens = master.fork(0x70c);

  GeneratedTrace out;
  out.base_probs.assign(shape.total_neurons(), 0.0);
  out.parents.assign(shape.total_neurons(), {0, 0});

  // Base probabilities: Zipf-shaped over a per-layer random rank permutation,
  // scaled so the expected active count per layer equals the quota.
  for (uint32_t l = 0; l < shape.num_layers; ++l) {
    std::vector<uint32_t> rank(n_per_layer);
    for (uint32_t i = 0; i < n_per_layer; ++i) rank[i] = i;
    for (uint32_t i = n_per_layer - 1; i > 0; --i)
      std::swap(rank[i], rank[rng_setup.below(i + 1)]);
    std::vector<double> z(n_per_layer);
    for (uint32_t i = 0; i < n_per_layer; ++i)
      z[i] = std::pow(static_cast<double>(rank[i] + 1), -cfg.zipf_exponent);
    const double c = detail::solve_base_prob_scale(z, cfg.base_prob_cap,
                                                   static_cast<double>(quota));
    for (uint32_t i = 0; i < n_per_layer; ++i)
      out.base_probs[shape.global_index({l, i})] =
          std::min(cfg.base_prob_cap, c * z[i]);
  }

  // Plant two parents per neuron (layers >= 1) among previous-layer neurons
  // of similar base probability, weighted by base probability within that
  // band.  Tier matching keeps the correlation measurable: an always-active
  // parent carries no conditional signal.
  for (uint32_t l = 1; l < shape.num_layers; ++l) {
    std::vector<uint32_t> order(n_per_layer);  // prev-layer indices by q
    for (uint32_t i = 0; i < n_per_layer; ++i) order[i] = i;
    const uint64_t prev_base = shape.global_index({l - 1, 0});
    std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
      double qa = out.base_probs[prev_base + a], qb = out.base_probs[prev_base + b];
      return qa != qb ? qa > qb : a < b;
    });
    const uint32_t band = std::max<uint32_t>(8, n_per_layer / 10);
    for (uint32_t i = 0; i < n_per_layer; ++i) {
      const double qi = out.base_probs[shape.global_index({l, i})];
      // locate the prev-layer neuron closest in probability, then sample
      // within the surrounding band
      uint32_t best = 0;
      double best_diff = 1e300;
      for (uint32_t r = 0; r < n_per_layer; ++r) {
        double d = std::fabs(out.base_probs[prev_base + order[r]] - qi);
        if (d < best_diff) { best_diff = d; best = r; }
      }
      const uint32_t lo = best >= band / 2 ? best - band / 2 : 0;
      const uint32_t hi = std::min<uint32_t>(n_per_layer, lo + band);
      std::vector<double> w(hi - lo);
      for (uint32_t r = lo; r < hi; ++r)
        w[r - lo] = out.base_probs[prev_base + order[r]];
      std::vector<uint32_t> picks;
      detail::weighted_sample(w, 2, rng_setup, picks);
      out.parents[shape.global_index({l, i})] = {order[lo + picks[0]],
                                                 order[lo + picks[1]]};
    }
  }

  // Token loop.  Layer l's fill weights see layer l-1's set of the same
  // token, so the planted correlations appear in the data.
  out.trace.header = {shape.fingerprint(), tokens.prefill, tokens.decode,
                      cfg.sparsity, shape.num_layers, n_per_layer};
  out.trace.records.assign(tokens.total(), {});
  std::vector<uint8_t> prev_layer_active(n_per_layer, 0);
  std::vector<double> weights(n_per_layer);
  for (uint32_t t = 0; t < tokens.total(); ++t) {
    auto& token_rec = out.trace.records[t];
    token_rec.assign(shape.num_layers, {});
    std::fill(prev_layer_active.begin(), prev_layer_active.end(), 0);
    for (uint32_t l = 0; l < shape.num_layers; ++l) {
      const uint64_t base = shape.global_index({l, 0});
      std::vector<uint32_t> chosen;
      chosen.reserve(quota);
      if (t > 0) {
        for (uint32_t i : out.trace.records[t - 1][l])
          if (rng_tokens.uniform01() < cfg.adjacency_retention) chosen.push_back(i);
      }
      if (chosen.size() < quota) {
        for (uint32_t i = 0; i < n_per_layer; ++i) {
          double w = out.base_probs[base + i];
          if (l > 0 && cfg.correlation_boost > 1.0) {
            const auto& par = out.parents[base + i];
            int fired = (prev_layer_active[par[0]] ? 1 : 0) +
                        (prev_layer_active[par[1]] ? 1 : 0);
            if (fired == 1) w *= std::sqrt(cfg.correlation_boost);
            else if (fired == 2) w *= cfg.correlation_boost;
          }
          weights[i] = w;
        }
        for (uint32_t i : chosen) weights[i] = 0;
        detail::weighted_sample(weights, quota - static_cast<uint32_t>(chosen.size()),
                                rng_tokens, chosen);
      }
      std::sort(chosen.begin(), chosen.end());
      token_rec[l] = std::move(chosen);
      std::fill(prev_layer_active.begin(), prev_layer_active.end(), 0);
      for (uint32_t i : token_rec[l]) prev_layer_active[i] = 1;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Measurement (frequencies, distance-similarity curves, layer correlation)
// ---------------------------------------------------------------------------

struct ActivationStats {
  uint32_t window_tokens = 0;
  uint32_t num_layers = 0;
  uint32_t neurons_per_layer = 0;
  std::vector<double> freq;           // per global neuron
  std::vector<uint32_t> active_count; // per global neuron, within window
  std::vector<double> jaccard_by_distance;  // index d-1, d = 1..max_distance
  std::vector<double> overlap_by_distance;  // |A ∩ B| / min(|A|, |B|)
  // co_count[l][i * neurons_per_layer + p]: tokens where neuron (l, i) and
  // (l-1, p) were both active; empty for l = 0 or when correlation is off.
  std::vector<std::vector<uint32_t>> co_count;

  double similarity(uint32_t d) const {
    if (d == 0 || d > jaccard_by_distance.size())
      throw ConfigError("stats: similarity distance out of range");
    return jaccard_by_distance[d - 1];
  }
  // P(child (l, i) active | parent (l-1, p) active); 0 when the parent never
  // fired in the window.
  double parent_conditional(uint32_t l, uint32_t i, uint32_t p,
                            const ModelShape& shape) const {
    const uint32_t denom = active_count[shape.global_index({l - 1, p})];
    if (denom == 0) return 0.0;
    return static_cast<double>(co_count[l][static_cast<size_t>(i) * neurons_per_layer + p]) /
           denom;
  }
};

inline ActivationStats measure_stats(const ActivationTrace& trace,
                                     const ModelShape& shape, uint32_t t0,
                                     uint32_t t1, bool with_correlation = true,
                                     uint32_t max_distance = 25) {
  if (t1 <= t0 || t1 > trace.num_tokens())
    throw ConfigError("stats: empty or out-of-range token window");
  trace.check_shape(shape);
  const uint32_t span = t1 - t0;
  const uint32_t layers = trace.header.num_layers;
  const uint32_t n = trace.header.neurons_per_layer;

  ActivationStats s;
  s.window_tokens = span;
  s.num_layers = layers;
  s.neurons_per_layer = n;
  s.active_count.assign(shape.total_neurons(), 0);
  for (uint32_t t = t0; t < t1; ++t)
    for (uint32_t l = 0; l < layers; ++l)
      for (uint32_t i : trace.active(t, l))
        ++s.active_count[shape.global_index({l, i})];
  s.freq.assign(shape.total_neurons(), 0.0);
  for (uint64_t g = 0; g < s.freq.size(); ++g)
    s.freq[g] = static_cast<double>(s.active_count[g]) / span;

  const uint32_t dmax = std::min(max_distance, span - 1);
  for (uint32_t d = 1; d <= dmax; ++d) {
    double jac = 0, ovl = 0;
    uint64_t pairs = 0;
    for (uint32_t t = t0; t + d < t1; ++t) {
      for (uint32_t l = 0; l < layers; ++l) {
        const auto& a = trace.active(t, l);
        const auto& b = trace.active(t + d, l);
        const size_t inter = detail::intersection_size(a, b);
        const size_t uni = a.size() + b.size() - inter;
        jac += uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
        const size_t smaller = std::min(a.size(), b.size());
        ovl += smaller == 0 ? 1.0 : static_cast<double>(inter) / smaller;
        ++pairs;
      }
    }
    s.jaccard_by_distance.push_back(jac / pairs);
    s.overlap_by_distance.push_back(ovl / pairs);
  }

  if (with_correlation) {
    s.co_count.assign(layers, {});
    for (uint32_t l = 1; l < layers; ++l)
      s.co_count[l].assign(static_cast<size_t>(n) * n, 0);
    for (uint32_t t = t0; t < t1; ++t) {
      for (uint32_t l = 1; l < layers; ++l) {
        const auto& cur = trace.active(t, l);
        const auto& prev = trace.active(t, l - 1);
        for (uint32_t i : cur) {
          uint32_t* row = s.co_count[l].data() + static_cast<size_t>(i) * n;
          for (uint32_t p : prev) ++row[p];
        }
      }
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// File format: line-delimited JSON, UTF-8, LF.  Line 1 is the header object,
// every further line one {"t", "l", "a"} record in (t, l) order.
// ---------------------------------------------------------------------------

inline void save_trace(const ActivationTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("trace: cannot open for writing: " + path);
  nlohmann::json header = {
      {"decode_tokens", trace.header.decode_tokens},
      {"neurons_per_layer", trace.header.neurons_per_layer},
      {"num_layers", trace.header.num_layers},
      {"prefill_tokens", trace.header.prefill_tokens},
      {"shape_fingerprint", trace.header.shape_fingerprint},
      {"sparsity_target", trace.header.sparsity_target},
  };
  out << header.dump() << '\n';
  for (uint32_t t = 0; t < trace.num_tokens(); ++t) {
    for (uint32_t l = 0; l < trace.header.num_layers; ++l) {
      out << "{\"a\":[";
      const auto& a = trace.records[t][l];
      for (size_t k = 0; k < a.size(); ++k) {
        if (k) out << ',';
        out << a[k];
      }
      out << "],\"l\":" << l << ",\"t\":" << t << "}\n";
    }
  }
  if (!out) throw IoError("trace: write failed: " + path);
}

inline ActivationTrace load_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("trace: cannot open: " + path);
  std::string line;
  uint64_t line_no = 0;
  if (!std::getline(in, line)) throw IoError("trace: empty file: " + path);
  ++line_no;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("trace: parse error at line 1: " + std::string(e.what()));
  }
  ActivationTrace trace;
  try {
    trace.header.shape_fingerprint = header.at("shape_fingerprint").get<uint64_t>();
    trace.header.prefill_tokens = header.at("prefill_tokens").get<uint32_t>();
    trace.header.decode_tokens = header.at("decode_tokens").get<uint32_t>();
    trace.header.sparsity_target = header.at("sparsity_target").get<double>();
    trace.header.num_layers = header.at("num_layers").get<uint32_t>();
    trace.header.neurons_per_layer = header.at("neurons_per_layer").get<uint32_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("trace: bad header at line 1: " + std::string(e.what()));
  }
  const uint32_t total_tokens = trace.header.prefill_tokens + trace.header.decode_tokens;
  trace.records.assign(total_tokens, std::vector<std::vector<uint32_t>>(
                                         trace.header.num_layers));
  int64_t last_t = -1, last_l = -1;
  for (uint32_t t = 0; t < total_tokens; ++t) {
    for (uint32_t l = 0; l < trace.header.num_layers; ++l) {
      if (!std::getline(in, line)) {
        throw IoError("trace: truncated file, last good record t=" +
                      std::to_string(last_t) + " l=" + std::to_string(last_l) +
                      " (expected " + std::to_string(total_tokens) + "x" +
                      std::to_string(trace.header.num_layers) + " records)");
      }
      ++line_no;
      nlohmann::json rec;
      try {
        rec = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw IoError("trace: parse error at line " + std::to_string(line_no) +
                      ": " + std::string(e.what()));
      }
      uint32_t rt, rl;
      std::vector<uint32_t> a;
      try {
        rt = rec.at("t").get<uint32_t>();
        rl = rec.at("l").get<uint32_t>();
        a = rec.at("a").get<std::vector<uint32_t>>();
      } catch (const nlohmann::json::exception& e) {
        throw IoError("trace: malformed record at line " + std::to_string(line_no) +
                      ": " + std::string(e.what()));
      }
      if (rt != t || rl != l)
        throw IoError("trace: out-of-order record at line " + std::to_string(line_no) +
                      " (got t=" + std::to_string(rt) + " l=" + std::to_string(rl) +
                      ", expected t=" + std::to_string(t) + " l=" + std::to_string(l) + ")");
      for (size_t k = 0; k < a.size(); ++k) {
        if (a[k] >= trace.header.neurons_per_layer)
          throw ConfigError("trace: neuron id " + std::to_string(a[k]) +
                            " out of range at line " + std::to_string(line_no));
        if (k > 0 && a[k] <= a[k - 1])
          throw ConfigError("trace: ids not strictly increasing at line " +
                            std::to_string(line_no));
      }
      trace.records[t][l] = std::move(a);
      last_t = t;
      last_l = l;
    }
  }
  return trace;
}

}  // namespace ndpsim
