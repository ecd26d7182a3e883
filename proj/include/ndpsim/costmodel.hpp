#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "ndpsim/model.hpp"

// Analytical latency model.  A decode layer step is the max of the GPU side
// (compute plus two one-way synchronizations) and the slowest DIMM; the
// decode latency is the sum of those maxima over layers.  Per-neuron device
// times come from a roofline with weight bytes charged once per batch.
namespace ndpsim {

struct DeviceTiming {
  // Seconds to process one activated neuron for a whole batch.
  std::vector<double> gpu_attn, gpu_mlp, dimm_attn, dimm_mlp;  // per layer

  double gpu(uint32_t layer, BlockKind kind) const {
    return kind == BlockKind::kAttentionFc ? gpu_attn[layer] : gpu_mlp[layer];
  }
  double dimm(uint32_t layer, BlockKind kind) const {
    return kind == BlockKind::kAttentionFc ? dimm_attn[layer] : dimm_mlp[layer];
  }
  double gpu_for(const ModelShape& shape, const NeuronRef& n) const {
    return gpu(n.layer, shape.kind_of(n.index));
  }
  double dimm_for(const ModelShape& shape, const NeuronRef& n) const {
    return dimm(n.layer, shape.kind_of(n.index));
  }
};

// t = max(bytes / bandwidth, batch * flops / compute); weights are read once
// and reused across the batch, arithmetic scales with it.
inline double neuron_roofline_seconds(double bytes, double flops,
                                      double bandwidth, double compute,
                                      uint32_t batch) {
  return std::max(bytes / bandwidth, batch * flops / compute);
}

inline DeviceTiming build_device_timing(const ModelShape& shape,
                                        const HardwareConfig& hw,
                                        uint32_t batch) {
  DeviceTiming t;
  t.gpu_attn.resize(shape.num_layers);
  t.gpu_mlp.resize(shape.num_layers);
  t.dimm_attn.resize(shape.num_layers);
  t.dimm_mlp.resize(shape.num_layers);
  for (uint32_t l = 0; l < shape.num_layers; ++l) {
    for (BlockKind kind : {BlockKind::kAttentionFc, BlockKind::kMlp}) {
      const double bytes = static_cast<double>(shape.neuron_bytes(kind));
      const double flops = shape.neuron_flops(kind);
      const double on_gpu = neuron_roofline_seconds(
          bytes, flops, hw.gpu.mem_bandwidth_bytes_per_s, hw.gpu.compute_flops,
          batch);
      const double on_dimm = neuron_roofline_seconds(
          bytes, flops, hw.dimms.internal_bandwidth_bytes_per_s,
          hw.dimm_compute_flops(), batch);
      if (kind == BlockKind::kAttentionFc) {
        t.gpu_attn[l] = on_gpu;
        t.dimm_attn[l] = on_dimm;
      } else {
        t.gpu_mlp[l] = on_gpu;
        t.dimm_mlp[l] = on_dimm;
      }
    }
  }
  return t;
}

// GPU side of one layer: n * t_neuron + 2 * t_sync (fetch activations, send
// results back).  A layer with no GPU work needs no synchronization either.
inline double layer_time_gpu(uint64_t n_active_on_gpu, double t_neuron,
                             double t_sync) {
  if (n_active_on_gpu == 0) return 0.0;
  return static_cast<double>(n_active_on_gpu) * t_neuron + 2.0 * t_sync;
}

// Frequency-weighted variant used by the offline mapper: the sync charge
// keys off whether any neuron is assigned, not off the expected count.
inline double layer_time_gpu_expected(double weighted_count, bool any_assigned,
                                      double t_neuron, double t_sync) {
  if (!any_assigned) return 0.0;
  return weighted_count * t_neuron + 2.0 * t_sync;
}

struct DimmPhaseTime {
  std::vector<double> per_dimm;
  double max = 0.0;
};

inline DimmPhaseTime layer_time_dimms(std::span<const uint64_t> active_per_dimm,
                                      double t_neuron) {
  DimmPhaseTime out;
  out.per_dimm.reserve(active_per_dimm.size());
  for (uint64_t n : active_per_dimm) {
    const double v = static_cast<double>(n) * t_neuron;
    out.per_dimm.push_back(v);
    out.max = std::max(out.max, v);
  }
  return out;
}

struct LayerLatency {
  double gpu_seconds = 0.0;
  std::vector<double> dimm_seconds;
  double layer_total = 0.0;  // max(gpu_seconds, max_j dimm_seconds[j])

  static LayerLatency of(double gpu, std::vector<double> dimms) {
    LayerLatency ll;
    ll.gpu_seconds = gpu;
    ll.dimm_seconds = std::move(dimms);
    ll.layer_total = gpu;
    for (double d : ll.dimm_seconds) ll.layer_total = std::max(ll.layer_total, d);
    return ll;
  }
};

inline double total_decode_latency(std::span<const LayerLatency> layers) {
  double sum = 0.0;
  for (const auto& l : layers) sum += l.layer_total;
  return sum;
}

// Attention is bandwidth-bound; the KV cache is striped across all DIMMs.
inline double attention_time(double kv_bytes_so_far, const HardwareConfig& hw) {
  if (kv_bytes_so_far <= 0) return 0.0;
  return kv_bytes_so_far / hw.aggregate_dimm_bandwidth();
}

// Dense output projection, GPU roofline (no activation sparsity there).
inline double projection_time(const ModelShape& shape, const HardwareConfig& hw,
                              uint32_t batch) {
  const double bytes = static_cast<double>(shape.projection_bytes_per_layer);
  const double flops = shape.flops_per_weight * (bytes / 2.0);
  if (bytes <= 0) return 0.0;
  return neuron_roofline_seconds(bytes, flops, hw.gpu.mem_bandwidth_bytes_per_s,
                                 hw.gpu.compute_flops, batch);
}

struct MigrationTiming {
  double hidden = 0.0;   // overlapped with the hiding budget
  double exposed = 0.0;  // spills past the budget into layer latency
};

// DIMM-link and PCIe run in parallel; whatever exceeds the hiding budget
// (the projection phase, during which DIMMs are idle) becomes exposed time.
inline MigrationTiming migration_time(uint64_t bytes_dimmlink,
                                      uint64_t bytes_pcie, double budget_seconds,
                                      const HardwareConfig& hw) {
  const double transfer =
      std::max(bytes_dimmlink / hw.dimmlink_bandwidth_bytes_per_s,
               bytes_pcie / hw.pcie_bandwidth_bytes_per_s);
  MigrationTiming t;
  t.hidden = std::min(transfer, budget_seconds);
  t.exposed = std::max(0.0, transfer - budget_seconds);
  return t;
}

// ---------------------------------------------------------------------------
// Pure-offloading baseline: pin the largest prefix of layers that fits in
// GPU memory, stream everything else over PCIe for every token.
// ---------------------------------------------------------------------------

struct BaselineReport {
  uint32_t pinned_layers = 0;
  uint64_t pinned_bytes = 0;
  uint64_t streamed_bytes_per_token = 0;
  double pcie_seconds = 0.0;     // decode total
  double compute_seconds = 0.0;  // decode total
  double decode_seconds = 0.0;
  double prefill_seconds = 0.0;
  double total_seconds = 0.0;
  double tokens_per_second = 0.0;
  double pcie_share = 0.0;  // of decode time
};

inline BaselineReport baseline_offload_latency(const ModelShape& shape,
                                               const HardwareConfig& hw,
                                               const TokenCounts& tokens,
                                               uint32_t batch) {
  BaselineReport r;
  uint64_t pinned = 0;
  for (uint32_t l = 0; l < shape.num_layers; ++l) {
    const uint64_t lb = shape.layer_weight_bytes(l);
    if (pinned + lb > hw.gpu.memory_bytes) break;
    pinned += lb;
    ++r.pinned_layers;
  }
  r.pinned_bytes = pinned;
  r.streamed_bytes_per_token = shape.total_weight_bytes() - pinned;

  const double pcie_per_token =
      r.streamed_bytes_per_token / hw.pcie_bandwidth_bytes_per_s;
  const double compute_per_token = std::max(
      r.pinned_bytes / hw.gpu.mem_bandwidth_bytes_per_s,
      batch * shape.flops_per_token() / hw.gpu.compute_flops);
  r.pcie_seconds = pcie_per_token * tokens.decode;
  r.compute_seconds = compute_per_token * tokens.decode;
  r.decode_seconds = r.pcie_seconds + r.compute_seconds;
  r.pcie_share = r.decode_seconds > 0 ? r.pcie_seconds / r.decode_seconds : 0.0;

  // Prompt pass: one full-model stream of the non-resident part plus dense
  // compute over the whole prompt.
  const uint64_t streamed_prefill =
      shape.total_weight_bytes() > hw.gpu.memory_bytes
          ? shape.total_weight_bytes() - hw.gpu.memory_bytes
          : 0;
  r.prefill_seconds =
      streamed_prefill / hw.pcie_bandwidth_bytes_per_s +
      std::max(shape.total_weight_bytes() / hw.gpu.mem_bandwidth_bytes_per_s,
               static_cast<double>(tokens.prefill) * batch *
                   shape.flops_per_token() / hw.gpu.compute_flops);
  r.total_seconds = r.prefill_seconds + r.decode_seconds;
  r.tokens_per_second =
      r.decode_seconds > 0 ? tokens.decode / r.decode_seconds : 0.0;
  return r;
}

}  // namespace ndpsim
