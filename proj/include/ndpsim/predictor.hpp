#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "ndpsim/model.hpp"
#include "ndpsim/trace.hpp"

// Lightweight activation predictor: one packed 4-bit saturating counter per
// neuron (temporal signal) combined with the two most correlated neurons of
// the previous layer (structural signal) through s1 + lambda * s2 > T.
namespace ndpsim {

struct PredictorConfig {
  uint32_t activation_increment = 4;   // s: added on activation; -1 otherwise
  uint32_t correlation_weight = 6;     // lambda
  uint32_t activation_threshold = 15;  // T:   predict iff s1 + lambda*s2 > T
  uint32_t hot_threshold = 10;         // T_h: hot iff s1 > T_h
  uint32_t correlation_min_support = 8;
  // Threshold for the token-signal-only ablation rule (s1 > this).
  uint32_t token_only_threshold = 3;

  void validate() const {
    if (activation_increment == 0 || activation_increment > 15)
      throw ConfigError("predictor: activation increment must be in [1, 15]");
    if (hot_threshold > 15)
      throw ConfigError("predictor: hot threshold must be <= 15");
  }
};

// Packed nibble array: state of neuron g lives in half of byte g/2.
class NeuronStateTable {
 public:
  NeuronStateTable() = default;
  explicit NeuronStateTable(uint64_t num_neurons)
      : size_(num_neurons), packed_((num_neurons + 1) / 2, 0) {}

  uint64_t size() const { return size_; }
  uint64_t storage_bytes() const { return packed_.size(); }

  uint8_t get(uint64_t g) const {
    const uint8_t byte = packed_[g >> 1];
    return (g & 1) ? (byte >> 4) : (byte & 0x0f);
  }
  void set(uint64_t g, uint8_t value) {
    uint8_t& byte = packed_[g >> 1];
    if (g & 1)
      byte = static_cast<uint8_t>((byte & 0x0f) | (value << 4));
    else
      byte = static_cast<uint8_t>((byte & 0xf0) | (value & 0x0f));
  }

  void bump(uint64_t g, bool activated, const PredictorConfig& cfg) {
    int v = get(g);
    v = activated ? v + static_cast<int>(cfg.activation_increment) : v - 1;
    if (v > 15) v = 15;
    if (v < 0) v = 0;
    set(g, static_cast<uint8_t>(v));
  }

  friend bool operator==(const NeuronStateTable& a, const NeuronStateTable& b) {
    return a.size_ == b.size_ && a.packed_ == b.packed_;
  }

 private:
  uint64_t size_ = 0;
  std::vector<uint8_t> packed_;
};

// The prefill frequency distribution maps onto the 16 states: above 90% is
// pinned at 15, below 2% at 0, and the interior is split linearly into the
// 14 remaining buckets.
inline uint8_t init_state_for_frequency(double f) {
  if (f > 0.90) return 15;
  if (f < 0.02) return 0;
  int k = 1 + static_cast<int>(14.0 * (f - 0.02) / (0.90 - 0.02));
  if (k < 1) k = 1;
  if (k > 14) k = 14;
  return static_cast<uint8_t>(k);
}

inline NeuronStateTable init_states(std::span<const double> prefill_freq) {
  NeuronStateTable table(prefill_freq.size());
  for (uint64_t g = 0; g < prefill_freq.size(); ++g)
    table.set(g, init_state_for_frequency(prefill_freq[g]));
  return table;
}

// Two parent indices (previous layer, layer-local) per neuron of layers >= 1.
struct CorrelationTable {
  uint32_t num_layers = 0;
  uint32_t neurons_per_layer = 0;
  std::vector<std::array<uint32_t, 2>> parents;  // by global index; layer 0 unused

  const std::array<uint32_t, 2>& parents_of(uint64_t g) const { return parents[g]; }
};

// Parents of (l, i) are the two previous-layer neurons maximizing
// P(i active | p active) among those with enough co-occurrence support;
// neurons without support fall back to the previous layer's two most
// frequent neurons.  All ties break toward the lower index.
inline CorrelationTable build_correlation_table(const ActivationStats& stats,
                                                const ModelShape& shape,
                                                const PredictorConfig& cfg) {
  CorrelationTable table;
  table.num_layers = shape.num_layers;
  table.neurons_per_layer = shape.neurons_per_layer();
  table.parents.assign(shape.total_neurons(), {0, 0});
  if (shape.num_layers < 2 || stats.co_count.empty()) {
    table.num_layers = shape.num_layers < 2 ? 0 : table.num_layers;
    return table;
  }
  const uint32_t n = shape.neurons_per_layer();
  for (uint32_t l = 1; l < shape.num_layers; ++l) {
    // fallback: the two most frequent previous-layer neurons
    std::array<uint32_t, 2> top_freq = {0, 1};
    {
      const uint64_t prev_base = shape.global_index({l - 1, 0});
      double best1 = -1, best2 = -1;
      uint32_t idx1 = 0, idx2 = 1;
      for (uint32_t p = 0; p < n; ++p) {
        const double f = stats.freq[prev_base + p];
        if (f > best1) {
          best2 = best1; idx2 = idx1;
          best1 = f; idx1 = p;
        } else if (f > best2) {
          best2 = f; idx2 = p;
        }
      }
      top_freq = {std::min(idx1, idx2), std::max(idx1, idx2)};
    }
    const auto& co = stats.co_count[l];
    for (uint32_t i = 0; i < n; ++i) {
      const uint32_t* row = co.data() + static_cast<size_t>(i) * n;
      double best1 = -1, best2 = -1;
      int idx1 = -1, idx2 = -1;
      for (uint32_t p = 0; p < n; ++p) {
        if (row[p] < cfg.correlation_min_support) continue;
        const uint32_t denom = stats.active_count[shape.global_index({l - 1, p})];
        const double cond = static_cast<double>(row[p]) / denom;
        if (cond > best1) {
          best2 = best1; idx2 = idx1;
          best1 = cond; idx1 = static_cast<int>(p);
        } else if (cond > best2) {
          best2 = cond; idx2 = static_cast<int>(p);
        }
      }
      auto& out = table.parents[shape.global_index({l, i})];
      if (idx1 >= 0 && idx2 >= 0)
        out = {static_cast<uint32_t>(idx1), static_cast<uint32_t>(idx2)};
      else
        out = top_freq;
    }
  }
  return table;
}

enum class PredictRule : uint8_t {
  kCombined,   // s1 + lambda * s2 > T
  kTokenOnly,  // s1 > token_only_threshold
  kLayerOnly,  // both parents active
};

inline bool decide_activation(uint8_t s1, uint32_t s2, const PredictorConfig& cfg) {
  return s1 + cfg.correlation_weight * s2 > cfg.activation_threshold;
}

// Predicted activated set for one layer, given the realized activation of
// the previous layer (empty for layer 0, where s2 is always 0).
inline std::vector<uint32_t> predict_layer(
    const NeuronStateTable& table, const CorrelationTable& corr,
    const std::vector<uint32_t>& prev_layer_actual, uint32_t layer,
    const ModelShape& shape, const PredictorConfig& cfg,
    PredictRule rule = PredictRule::kCombined) {
  const uint32_t n = shape.neurons_per_layer();
  const uint64_t base = shape.global_index({layer, 0});
  std::vector<uint8_t> prev_active;
  if (layer > 0) {
    prev_active.assign(n, 0);
    for (uint32_t p : prev_layer_actual) prev_active[p] = 1;
  }
  std::vector<uint32_t> predicted;
  for (uint32_t i = 0; i < n; ++i) {
    uint32_t s2 = 0;
    if (layer > 0 && corr.num_layers != 0) {
      const auto& par = corr.parents_of(base + i);
      s2 = (prev_active[par[0]] ? 1u : 0u) + (prev_active[par[1]] ? 1u : 0u);
    }
    bool on = false;
    switch (rule) {
      case PredictRule::kCombined:
        on = decide_activation(table.get(base + i), s2, cfg);
        break;
      case PredictRule::kTokenOnly:
        on = table.get(base + i) > cfg.token_only_threshold;
        break;
      case PredictRule::kLayerOnly:
        on = s2 == 2;
        break;
    }
    if (on) predicted.push_back(i);
  }
  return predicted;
}

// FSM step for one layer: activated neurons gain s, the rest lose 1, with
// saturation at 0 and 15.  Applied to every neuron of the layer each token.
inline void update_states(NeuronStateTable& table,
                          const std::vector<uint32_t>& actual, uint32_t layer,
                          const ModelShape& shape, const PredictorConfig& cfg) {
  const uint32_t n = shape.neurons_per_layer();
  const uint64_t base = shape.global_index({layer, 0});
  size_t k = 0;
  for (uint32_t i = 0; i < n; ++i) {
    const bool activated = k < actual.size() && actual[k] == i;
    if (activated) ++k;
    table.bump(base + i, activated, cfg);
  }
}

// Hot = state strictly above T_h (states 11..15 with defaults).
inline bool is_hot(uint8_t state, const PredictorConfig& cfg) {
  return state > cfg.hot_threshold;
}

inline std::vector<uint64_t> classify_hot(const NeuronStateTable& table,
                                          const PredictorConfig& cfg) {
  std::vector<uint64_t> hot;
  for (uint64_t g = 0; g < table.size(); ++g)
    if (is_hot(table.get(g), cfg)) hot.push_back(g);
  return hot;
}

struct AccuracyReport {
  uint64_t true_positive = 0;
  uint64_t false_positive = 0;
  uint64_t true_negative = 0;
  uint64_t false_negative = 0;

  void add_layer(const std::vector<uint32_t>& predicted,
                 const std::vector<uint32_t>& actual, uint32_t neurons) {
    const uint64_t inter = detail::intersection_size(predicted, actual);
    true_positive += inter;
    false_positive += predicted.size() - inter;
    false_negative += actual.size() - inter;
    true_negative += neurons - predicted.size() - actual.size() + inter;
  }

  uint64_t total() const {
    return true_positive + false_positive + true_negative + false_negative;
  }
  double recall() const {
    const uint64_t d = true_positive + false_negative;
    return d == 0 ? 1.0 : static_cast<double>(true_positive) / d;
  }
  double precision() const {
    const uint64_t d = true_positive + false_positive;
    return d == 0 ? 1.0 : static_cast<double>(true_positive) / d;
  }
  double accuracy() const {
    const uint64_t d = total();
    return d == 0 ? 1.0 : static_cast<double>(true_positive + true_negative) / d;
  }
};

}  // namespace ndpsim
