#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "ndpsim/costmodel.hpp"
#include "ndpsim/model.hpp"
#include "ndpsim/random.hpp"

// Offline neuron placement.  The objective is the frequency-weighted decode
// latency: sum over layers of max(GPU time with sync, slowest DIMM), with
// the GPU treated as holding mirrors (owners stay on DIMMs, mirrored work
// leaves its DIMM).  solve_exact is a branch-and-bound over per-neuron
// (mirror?, owner) choices; solve_greedy scales to full-size models.
namespace ndpsim {

struct MappingProblem {
  ModelShape shape;
  HardwareConfig hw;
  DeviceTiming timing;
  std::vector<double> freq;  // per global neuron, in [0, 1]

  static MappingProblem make(const ModelShape& shape, const HardwareConfig& hw,
                             std::vector<double> freq, uint32_t batch = 1) {
    MappingProblem p{shape, hw, build_device_timing(shape, hw, batch),
                     std::move(freq)};
    if (p.freq.size() != shape.total_neurons())
      throw ConfigError("mapper: one frequency per neuron required");
    for (double f : p.freq)
      if (f < 0.0 || f > 1.0)
        throw ConfigError("mapper: frequencies must lie in [0, 1]");
    return p;
  }
};

// Eqs-composed objective for a concrete placement.
inline double objective_of(const NeuronPlacement& placement,
                           const MappingProblem& p) {
  const uint32_t layers = p.shape.num_layers;
  const uint32_t j_count = p.hw.dimms.count;
  std::vector<double> gpu_sum(layers, 0.0);
  std::vector<uint32_t> gpu_cnt(layers, 0);
  std::vector<double> dimm_sum(static_cast<size_t>(layers) * j_count, 0.0);
  for (uint64_t g = 0; g < p.shape.total_neurons(); ++g) {
    const NeuronRef n = p.shape.from_global(g);
    if (placement.gpu_resident[g]) {
      gpu_sum[n.layer] += p.freq[g] * p.timing.gpu_for(p.shape, n);
      ++gpu_cnt[n.layer];
    } else {
      dimm_sum[static_cast<size_t>(n.layer) * j_count + placement.dimm_of[g]] +=
          p.freq[g] * p.timing.dimm_for(p.shape, n);
    }
  }
  double total = 0.0;
  for (uint32_t l = 0; l < layers; ++l) {
    double layer_max = layer_time_gpu_expected(gpu_sum[l], gpu_cnt[l] > 0, 1.0,
                                               p.hw.t_sync_seconds);
    for (uint32_t j = 0; j < j_count; ++j)
      layer_max = std::max(layer_max, dimm_sum[static_cast<size_t>(l) * j_count + j]);
    total += layer_max;
  }
  return total;
}

struct SolveLimits {
  uint64_t max_nodes = 50'000'000;  // deterministic cutoff; 0 = unlimited
};

struct SolveResult {
  NeuronPlacement placement;
  double objective = 0.0;
  bool proven_optimal = false;
  uint64_t nodes_explored = 0;
};

namespace detail {

inline void require_total_capacity(const MappingProblem& p) {
  if (p.hw.total_dimm_bytes() < p.shape.total_neuron_bytes())
    throw InfeasibleError("mapper: model neurons exceed total DIMM capacity");
}

}  // namespace detail

// Deterministic greedy: mirror the highest-gain neurons onto the GPU up to
// capacity (gain = f * (t_dimm - t_gpu)), then spread per-layer DIMM load
// longest-processing-time-first; zero-load neurons go wherever the most
// capacity remains.  Ties always break toward the lower (layer, index).
inline SolveResult solve_greedy(const MappingProblem& p) {
  detail::require_total_capacity(p);
  const uint64_t n = p.shape.total_neurons();
  const uint32_t j_count = p.hw.dimms.count;
  SolveResult r;
  r.placement = NeuronPlacement::empty(p.shape);

  std::vector<uint64_t> order(n);
  for (uint64_t g = 0; g < n; ++g) order[g] = g;

  // 1. fill the GPU mirror set
  std::vector<double> gain(n);
  for (uint64_t g = 0; g < n; ++g) {
    const NeuronRef ref = p.shape.from_global(g);
    gain[g] = p.freq[g] *
              (p.timing.dimm_for(p.shape, ref) - p.timing.gpu_for(p.shape, ref));
  }
  std::stable_sort(order.begin(), order.end(), [&](uint64_t a, uint64_t b) {
    return gain[a] != gain[b] ? gain[a] > gain[b] : a < b;
  });
  uint64_t gpu_used = 0;
  for (uint64_t g : order) {
    if (gain[g] <= 0) break;
    const uint64_t bytes = p.shape.neuron_bytes(p.shape.from_global(g));
    if (gpu_used + bytes > p.hw.gpu.memory_bytes) continue;
    gpu_used += bytes;
    r.placement.gpu_resident[g] = 1;
  }

  // 2. per-layer LPT over DIMMs for the cold load, then capacity balancing
  // for load-free neurons (mirrored or never activated)
  std::vector<uint64_t> dimm_used(j_count, 0);
  std::vector<double> layer_load(j_count, 0.0);
  for (uint32_t l = 0; l < p.shape.num_layers; ++l) {
    std::fill(layer_load.begin(), layer_load.end(), 0.0);
    const uint64_t base = p.shape.global_index({l, 0});
    std::vector<uint64_t> in_layer(p.shape.neurons_per_layer());
    for (uint32_t i = 0; i < in_layer.size(); ++i) in_layer[i] = base + i;
    std::vector<double> load(in_layer.size());
    for (uint32_t i = 0; i < in_layer.size(); ++i) {
      const uint64_t g = in_layer[i];
      load[i] = r.placement.gpu_resident[g]
                    ? 0.0
                    : p.freq[g] * p.timing.dimm_for(p.shape, p.shape.from_global(g));
    }
    std::vector<uint32_t> idx(in_layer.size());
    for (uint32_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](uint32_t a, uint32_t b) {
      return load[a] != load[b] ? load[a] > load[b] : a < b;
    });
    for (uint32_t i : idx) {
      const uint64_t g = in_layer[i];
      const uint64_t bytes = p.shape.neuron_bytes(p.shape.from_global(g));
      int pick = -1;
      if (load[i] > 0) {
        for (uint32_t j = 0; j < j_count; ++j) {
          if (dimm_used[j] + bytes > p.hw.dimms.memory_bytes) continue;
          if (pick < 0 || layer_load[j] < layer_load[pick]) pick = static_cast<int>(j);
        }
      } else {
        for (uint32_t j = 0; j < j_count; ++j) {
          if (dimm_used[j] + bytes > p.hw.dimms.memory_bytes) continue;
          if (pick < 0 || (p.hw.dimms.memory_bytes - dimm_used[j]) >
                              (p.hw.dimms.memory_bytes - dimm_used[pick]))
            pick = static_cast<int>(j);
        }
      }
      if (pick < 0)
        throw InfeasibleError("mapper: greedy packing found no DIMM with room");
      r.placement.dimm_of[g] = static_cast<uint32_t>(pick);
      dimm_used[pick] += bytes;
      layer_load[pick] += load[i];
    }
  }
  r.objective = objective_of(r.placement, p);
  r.proven_optimal = false;
  return r;
}

namespace detail {

struct BnbState {
  const MappingProblem* p;
  std::vector<uint64_t> order;       // branch order (global indices)
  std::vector<double> rem_min;       // suffix: sum of f*min(t) per layer, [pos][layer]
  // incremental assignment state
  std::vector<double> gpu_sum;       // per layer
  std::vector<uint32_t> gpu_cnt;     // per layer
  std::vector<double> dimm_sum;      // layer * J + j
  std::vector<uint64_t> dimm_used;   // bytes per DIMM
  uint64_t gpu_used = 0;
  std::vector<uint8_t> choice_gpu;   // per order position
  std::vector<uint32_t> choice_dimm;
  // incumbent
  double best = std::numeric_limits<double>::infinity();
  std::vector<uint8_t> best_gpu;
  std::vector<uint32_t> best_dimm;
  uint64_t nodes = 0;
  uint64_t max_nodes = 0;
  bool hit_limit = false;
  bool symmetric_dimms = false;

  double lower_bound(size_t pos) const {
    const uint32_t layers = p->shape.num_layers;
    const uint32_t j_count = p->hw.dimms.count;
    double lb = 0.0;
    for (uint32_t l = 0; l < layers; ++l) {
      const double gpu_t = layer_time_gpu_expected(gpu_sum[l], gpu_cnt[l] > 0, 1.0,
                                                   p->hw.t_sync_seconds);
      double mx = gpu_t;
      double assigned = gpu_sum[l];
      for (uint32_t j = 0; j < j_count; ++j) {
        const double v = dimm_sum[static_cast<size_t>(l) * j_count + j];
        mx = std::max(mx, v);
        assigned += v;
      }
      const double avg = (assigned + rem_min[pos * layers + l]) / (j_count + 1);
      lb += std::max(mx, avg);
    }
    return lb;
  }

  void search(size_t pos, uint32_t dimms_touched) {
    if (hit_limit) return;
    ++nodes;
    if (max_nodes != 0 && nodes > max_nodes) {
      hit_limit = true;
      return;
    }
    if (pos == order.size()) {
      const double obj = lower_bound(pos);  // exact at a full assignment
      if (obj < best) {
        best = obj;
        best_gpu = choice_gpu;
        best_dimm = choice_dimm;
      }
      return;
    }
    if (lower_bound(pos) >= best) return;

    const uint64_t g = order[pos];
    const NeuronRef ref = p->shape.from_global(g);
    const uint64_t bytes = p->shape.neuron_bytes(ref);
    const double f = p->freq[g];
    const double t_gpu = p->timing.gpu_for(p->shape, ref);
    const double t_dimm = p->timing.dimm_for(p->shape, ref);
    const uint32_t j_count = p->hw.dimms.count;

    // With interchangeable DIMMs, introduce new owner indices in increasing
    // order only (canonical form); prunes permutations of the same solution.
    const uint32_t owner_limit =
        symmetric_dimms ? std::min(j_count, dimms_touched + 1) : j_count;

    for (int gpu_choice = 1; gpu_choice >= 0; --gpu_choice) {
      if (gpu_choice && gpu_used + bytes > p->hw.gpu.memory_bytes) continue;
      for (uint32_t j = 0; j < owner_limit; ++j) {
        if (dimm_used[j] + bytes > p->hw.dimms.memory_bytes) continue;
        // apply
        const size_t cell = static_cast<size_t>(ref.layer) * j_count + j;
        choice_gpu[pos] = static_cast<uint8_t>(gpu_choice);
        choice_dimm[pos] = j;
        dimm_used[j] += bytes;
        if (gpu_choice) {
          gpu_used += bytes;
          gpu_sum[ref.layer] += f * t_gpu;
          ++gpu_cnt[ref.layer];
        } else {
          dimm_sum[cell] += f * t_dimm;
        }
        search(pos + 1, std::max(dimms_touched, j + 1));
        // undo
        dimm_used[j] -= bytes;
        if (gpu_choice) {
          gpu_used -= bytes;
          gpu_sum[ref.layer] -= f * t_gpu;
          --gpu_cnt[ref.layer];
        } else {
          dimm_sum[cell] -= f * t_dimm;
        }
        if (hit_limit) return;
      }
    }
  }
};

}  // namespace detail

// Exact solve by depth-first branch-and-bound.  The bound combines the
// current per-layer makespan with an averaging term over the remaining
// neurons' cheapest possible load (max terms linearized by keeping one
// auxiliary per-layer maximum).  Deterministic: fixed branch order, fixed
// choice order, node-count limit only.
inline SolveResult solve_exact(const MappingProblem& p,
                               const SolveLimits& limits = {}) {
  detail::require_total_capacity(p);
  const uint64_t n = p.shape.total_neurons();
  const uint32_t layers = p.shape.num_layers;
  const uint32_t j_count = p.hw.dimms.count;

  detail::BnbState st;
  st.p = &p;
  st.max_nodes = limits.max_nodes;
  st.symmetric_dimms = true;  // single DimmSpec => identical capacities

  // branch on heavy neurons first
  st.order.resize(n);
  for (uint64_t g = 0; g < n; ++g) st.order[g] = g;
  std::vector<double> weight(n);
  for (uint64_t g = 0; g < n; ++g) {
    const NeuronRef ref = p.shape.from_global(g);
    weight[g] = p.freq[g] * std::max(p.timing.dimm_for(p.shape, ref),
                                     p.timing.gpu_for(p.shape, ref));
  }
  std::stable_sort(st.order.begin(), st.order.end(), [&](uint64_t a, uint64_t b) {
    return weight[a] != weight[b] ? weight[a] > weight[b] : a < b;
  });

  st.rem_min.assign((n + 1) * layers, 0.0);
  for (size_t pos = n; pos-- > 0;) {
    for (uint32_t l = 0; l < layers; ++l)
      st.rem_min[pos * layers + l] = st.rem_min[(pos + 1) * layers + l];
    const uint64_t g = st.order[pos];
    const NeuronRef ref = p.shape.from_global(g);
    st.rem_min[pos * layers + ref.layer] +=
        p.freq[g] * std::min(p.timing.dimm_for(p.shape, ref),
                             p.timing.gpu_for(p.shape, ref));
  }

  st.gpu_sum.assign(layers, 0.0);
  st.gpu_cnt.assign(layers, 0);
  st.dimm_sum.assign(static_cast<size_t>(layers) * j_count, 0.0);
  st.dimm_used.assign(j_count, 0);
  st.choice_gpu.assign(n, 0);
  st.choice_dimm.assign(n, 0);

  // greedy incumbent gives the pruning a head start
  try {
    SolveResult seed = solve_greedy(p);
    st.best = seed.objective;
    st.best_gpu.resize(n);
    st.best_dimm.resize(n);
    for (size_t pos = 0; pos < n; ++pos) {
      const uint64_t g = st.order[pos];
      st.best_gpu[pos] = seed.placement.gpu_resident[g];
      st.best_dimm[pos] = seed.placement.dimm_of[g];
    }
  } catch (const InfeasibleError&) {
    // greedy packing failed; the search may still find a feasible leaf
  }

  st.search(0, 0);

  if (st.best_gpu.empty())
    throw InfeasibleError("mapper: no feasible placement exists");

  SolveResult r;
  r.placement = NeuronPlacement::empty(p.shape);
  for (size_t pos = 0; pos < n; ++pos) {
    const uint64_t g = st.order[pos];
    r.placement.gpu_resident[g] = st.best_gpu[pos];
    r.placement.dimm_of[g] = st.best_dimm[pos];
  }
  r.objective = objective_of(r.placement, p);
  r.proven_optimal = !st.hit_limit;
  r.nodes_explored = st.nodes;
  return r;
}

// Seeded random placement (the "random mapper" ablation baseline): a random
// GPU mirror set filled to capacity and round-robin owners over a shuffled
// order.
inline NeuronPlacement random_placement(const ModelShape& shape,
                                        const HardwareConfig& hw, uint64_t seed) {
  const uint64_t n = shape.total_neurons();
  NeuronPlacement placement = NeuronPlacement::empty(shape);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<uint64_t> order(n);
  for (uint64_t g = 0; g < n; ++g) order[g] = g;
  for (uint64_t i = n - 1; i > 0; --i)
    std::swap(order[i], order[rng.below(i + 1)]);

  uint64_t gpu_used = 0;
  for (uint64_t g : order) {
    const uint64_t bytes = shape.neuron_bytes(shape.from_global(g));
    if (gpu_used + bytes <= hw.gpu.memory_bytes) {
      placement.gpu_resident[g] = 1;
      gpu_used += bytes;
    }
  }
  std::vector<uint64_t> dimm_used(hw.dimms.count, 0);
  uint32_t next = 0;
  for (uint64_t g : order) {
    const uint64_t bytes = shape.neuron_bytes(shape.from_global(g));
    uint32_t tried = 0;
    while (tried < hw.dimms.count &&
           dimm_used[next] + bytes > hw.dimms.memory_bytes) {
      next = (next + 1) % hw.dimms.count;
      ++tried;
    }
    if (tried == hw.dimms.count)
      throw InfeasibleError("random placement: no DIMM with room");
    placement.dimm_of[g] = next;
    dimm_used[next] += bytes;
    next = (next + 1) % hw.dimms.count;
  }
  return placement;
}

}  // namespace ndpsim
