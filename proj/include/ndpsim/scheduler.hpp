#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ndpsim/model.hpp"
#include "ndpsim/predictor.hpp"

// Online placement maintenance: swapping newly-hot neurons into GPU memory
// (metadata-only swap-out, PCIe copy-in) and remapping cold neurons across
// DIMM pairs to even out window activity (DIMM-link copies).
namespace ndpsim {

struct SchedulerConfig {
  uint32_t window_tokens = 5;       // W: tokens per rebalancing window
  uint32_t max_moves_per_pair = 64; // caps pathological churn
  bool aggregate_rebalance = false; // one aggregate Z instead of per-layer

  void validate() const {
    if (window_tokens == 0) throw ConfigError("scheduler: window must be >= 1");
  }
};

// Per-neuron activated counts A_i accumulated over one window.
struct WindowActivity {
  uint32_t window_tokens = 0;
  std::vector<uint32_t> counts;  // by global neuron index

  static WindowActivity zero(uint64_t num_neurons, uint32_t window) {
    return {window, std::vector<uint32_t>(num_neurons, 0)};
  }
  void reset() { std::fill(counts.begin(), counts.end(), 0); }
};

struct GpuSwap {
  uint64_t in_neuron;              // copied to GPU memory (PCIe)
  std::optional<uint64_t> out;     // overwritten mirror, if eviction was needed
};

struct DimmMove {
  uint64_t neuron;
  uint32_t from_dimm;
  uint32_t to_dimm;
};

struct MigrationPlan {
  std::vector<GpuSwap> gpu_swaps;
  std::vector<DimmMove> dimm_moves;
  uint64_t pcie_bytes = 0;      // swap-ins; swap-outs move no data
  uint64_t dimmlink_bytes = 0;  // cold-neuron remapping

  bool empty() const { return gpu_swaps.empty() && dimm_moves.empty(); }
};

// max_j Z_j / mean_j Z_j; 1.0 for a perfectly even (or all-idle) system.
inline double imbalance(std::span<const double> z) {
  if (z.empty()) return 1.0;
  double sum = 0, mx = 0;
  for (double v : z) {
    sum += v;
    mx = std::max(mx, v);
  }
  if (sum <= 0) return 1.0;
  return mx / (sum / z.size());
}

// ---------------------------------------------------------------------------
// Hot/cold adjustment.  Every hot-classified neuron that is not yet mirrored
// gets paired with the lowest-state GPU-resident neuron; the pair swaps only
// if the incoming state is strictly higher and the mirror stays within GPU
// memory.  All weights stay on the DIMMs, so only the copy-in moves data.
// ---------------------------------------------------------------------------

struct AdjustResult {
  MigrationPlan plan;
  NeuronPlacement placement;
};

inline AdjustResult adjust_hot_cold(const NeuronPlacement& placement,
                                    const NeuronStateTable& table,
                                    const PredictorConfig& cfg,
                                    const ModelShape& shape,
                                    const HardwareConfig& hw) {
  AdjustResult r{{}, placement};
  uint64_t gpu_used = r.placement.gpu_bytes(shape);

  // incoming candidates: hot, not resident, highest state first
  std::vector<uint64_t> candidates;
  for (uint64_t g = 0; g < shape.total_neurons(); ++g)
    if (!r.placement.gpu_resident[g] && is_hot(table.get(g), cfg))
      candidates.push_back(g);
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](uint64_t a, uint64_t b) {
                     const uint8_t sa = table.get(a), sb = table.get(b);
                     return sa != sb ? sa > sb : a < b;
                   });

  // residents ordered by ascending state (eviction order)
  std::vector<uint64_t> residents;
  for (uint64_t g = 0; g < shape.total_neurons(); ++g)
    if (r.placement.gpu_resident[g]) residents.push_back(g);
  std::stable_sort(residents.begin(), residents.end(),
                   [&](uint64_t a, uint64_t b) {
                     const uint8_t sa = table.get(a), sb = table.get(b);
                     return sa != sb ? sa < sb : a < b;
                   });

  for (uint64_t in : candidates) {
    const uint64_t in_bytes = shape.neuron_bytes(shape.from_global(in));
    if (gpu_used + in_bytes <= hw.gpu.memory_bytes) {
      r.placement.gpu_resident[in] = 1;
      gpu_used += in_bytes;
      r.plan.gpu_swaps.push_back({in, std::nullopt});
      r.plan.pcie_bytes += in_bytes;
      continue;
    }
    const uint8_t in_state = table.get(in);
    bool placed = false;
    for (size_t k = 0; k < residents.size() && !placed; ++k) {
      const uint64_t out = residents[k];
      if (table.get(out) >= in_state) break;  // no strict improvement possible
      const uint64_t out_bytes = shape.neuron_bytes(shape.from_global(out));
      if (gpu_used - out_bytes + in_bytes > hw.gpu.memory_bytes) continue;
      r.placement.gpu_resident[out] = 0;
      r.placement.gpu_resident[in] = 1;
      gpu_used = gpu_used - out_bytes + in_bytes;
      residents.erase(residents.begin() + static_cast<ptrdiff_t>(k));
      r.plan.gpu_swaps.push_back({in, out});
      r.plan.pcie_bytes += in_bytes;
      placed = true;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Window-based cold-neuron rebalancing.  Per-DIMM window loads are sorted
// descending and rank r is paired with rank J-1-r; within a pair the most
// activated movable neuron migrates from the heavier to the lighter side
// while that strictly narrows the pair's gap and the target DIMM has room.
// GPU-mirrored neurons execute on the GPU, so only cold neurons contribute
// load or move.
// ---------------------------------------------------------------------------

inline AdjustResult rebalance_window(const NeuronPlacement& placement,
                                     const WindowActivity& activity,
                                     const ModelShape& shape,
                                     const HardwareConfig& hw,
                                     const SchedulerConfig& cfg,
                                     std::optional<uint32_t> layer_scope = {}) {
  const uint32_t num_dimms = hw.dimms.count;
  AdjustResult r{{}, placement};

  uint64_t scope_begin = 0, scope_end = shape.total_neurons();
  if (layer_scope) {
    scope_begin = shape.global_index({*layer_scope, 0});
    scope_end = scope_begin + shape.neurons_per_layer();
  }

  std::vector<double> z(num_dimms, 0.0);
  for (uint64_t g = scope_begin; g < scope_end; ++g)
    if (!r.placement.gpu_resident[g])
      z[r.placement.dimm_of[g]] += activity.counts[g];

  std::vector<uint64_t> dimm_used = r.placement.dimm_bytes(shape, num_dimms);

  std::vector<uint32_t> rank(num_dimms);
  for (uint32_t j = 0; j < num_dimms; ++j) rank[j] = j;
  std::stable_sort(rank.begin(), rank.end(), [&](uint32_t a, uint32_t b) {
    return z[a] != z[b] ? z[a] > z[b] : a < b;
  });

  // movable neurons per DIMM, most activated first
  std::vector<std::vector<uint64_t>> movable(num_dimms);
  for (uint64_t g = scope_begin; g < scope_end; ++g)
    if (!r.placement.gpu_resident[g] && activity.counts[g] > 0)
      movable[r.placement.dimm_of[g]].push_back(g);
  for (auto& list : movable)
    std::stable_sort(list.begin(), list.end(), [&](uint64_t a, uint64_t b) {
      return activity.counts[a] != activity.counts[b]
                 ? activity.counts[a] > activity.counts[b]
                 : a < b;
    });

  for (uint32_t pr = 0; pr < num_dimms / 2; ++pr) {
    const uint32_t a = rank[pr];
    const uint32_t b = rank[num_dimms - 1 - pr];
    uint32_t moves = 0;
    while (moves < cfg.max_moves_per_pair) {
      const uint32_t heavy = z[a] >= z[b] ? a : b;
      const uint32_t light = heavy == a ? b : a;
      const double gap = z[heavy] - z[light];
      if (gap <= 0) break;
      bool moved = false;
      auto& list = movable[heavy];
      for (size_t k = 0; k < list.size(); ++k) {
        const uint64_t g = list[k];
        const double count = activity.counts[g];
        if (count >= gap) continue;  // would not strictly narrow the gap
        const uint64_t bytes = shape.neuron_bytes(shape.from_global(g));
        if (dimm_used[light] + bytes > hw.dimms.memory_bytes) continue;  // no room
        r.placement.dimm_of[g] = light;
        dimm_used[heavy] -= bytes;
        dimm_used[light] += bytes;
        z[heavy] -= count;
        z[light] += count;
        r.plan.dimm_moves.push_back({g, heavy, light});
        r.plan.dimmlink_bytes += bytes;
        list.erase(list.begin() + static_cast<ptrdiff_t>(k));
        // keep it movable on the receiving side (ordered insert by count, id)
        auto& dst = movable[light];
        auto pos = std::find_if(dst.begin(), dst.end(), [&](uint64_t o) {
          return activity.counts[o] < count ||
                 (activity.counts[o] == count && o > g);
        });
        dst.insert(pos, g);
        moved = true;
        ++moves;
        break;
      }
      if (!moved) break;
    }
  }
  return r;
}

}  // namespace ndpsim
