#pragma once

#include <cstdint>
#include <string>

#include "ndpsim/model.hpp"

// Named presets: consumer GPUs paired with a DDR4-3200 NDP-DIMM pool, and
// model shapes from public architecture dimensions.  Every field remains
// overridable through the JSON config.
namespace ndpsim {

constexpr uint64_t kGiB = 1ull << 30;

inline HardwareConfig default_dimm_pool(HardwareConfig hw) {
  hw.dimms.count = 8;
  hw.dimms.memory_bytes = 32 * kGiB;
  // DDR4-3200 x 4 ranks at realistic utilization
  hw.dimms.internal_bandwidth_bytes_per_s = 25.6e9;
  hw.dimms.multipliers_per_gemv_unit = 256;
  hw.dimms.frequency_hz = 1e9;
  hw.pcie_bandwidth_bytes_per_s = 64e9;      // PCIe 4.0 x16
  hw.dimmlink_bandwidth_bytes_per_s = 25e9;  // 8 lanes x 25 Gb/s
  hw.t_sync_seconds = 5e-6;
  return hw;
}

inline HardwareConfig hardware_preset(const std::string& name) {
  HardwareConfig hw;
  hw.name = name;
  if (name == "rtx4090") {
    hw.gpu = {24 * kGiB, 936e9, 330e12};
    return default_dimm_pool(hw);
  }
  if (name == "rtx3090") {
    hw.gpu = {24 * kGiB, 936e9, 142e12};
    return default_dimm_pool(hw);
  }
  if (name == "teslat4") {
    hw.gpu = {16 * kGiB, 320e9, 65e12};
    return default_dimm_pool(hw);
  }
  if (name == "desk") {
    // Bandwidths scaled down 1000x with the rtx4090 ratios intact; memory
    // sized so the GPU mirrors about a quarter of the tiny model preset.
    hw.gpu = {192 * 1024, 936e6, 330e9};
    hw = default_dimm_pool(hw);
    hw.dimms.memory_bytes = 1 << 20;
    hw.dimms.internal_bandwidth_bytes_per_s = 25.6e6;
    hw.dimms.multipliers_per_gemv_unit = 256;
    hw.dimms.frequency_hz = 1e6;
    hw.pcie_bandwidth_bytes_per_s = 64e6;
    hw.dimmlink_bandwidth_bytes_per_s = 25e6;
    hw.t_sync_seconds = 5e-7;
    return hw;
  }
  throw ConfigError("unknown hardware preset: " + name);
}

namespace detail {

// Attention neurons are QKV columns (three matrices), MLP neurons pair an
// up-projection row with the matching down-projection column.
inline ModelShape dense_shape(std::string name, uint32_t layers, uint32_t hidden,
                              uint32_t ffn_dim, uint64_t kv_bytes_per_token) {
  ModelShape s;
  s.name = std::move(name);
  s.num_layers = layers;
  s.hidden_dim = hidden;
  s.attn_neurons_per_layer = hidden;
  s.mlp_neurons_per_layer = ffn_dim;
  s.attn_neuron_bytes = 6ull * hidden;  // one column in each of Q, K, V
  s.mlp_neuron_bytes = 4ull * hidden;   // FC1 row + FC2 column
  s.projection_bytes_per_layer = 2ull * hidden * hidden;
  s.kv_bytes_per_token_per_layer = kv_bytes_per_token;
  return s;
}

}  // namespace detail

inline ModelShape model_preset(const std::string& name) {
  if (name == "opt13b") return detail::dense_shape(name, 40, 5120, 20480, 4ull * 5120);
  if (name == "opt30b") return detail::dense_shape(name, 48, 7168, 28672, 4ull * 7168);
  if (name == "opt66b") return detail::dense_shape(name, 64, 9216, 36864, 4ull * 9216);
  if (name == "llama13b") return detail::dense_shape(name, 40, 5120, 13824, 4ull * 5120);
  if (name == "llama70b")
    return detail::dense_shape(name, 80, 8192, 28672, 4096);  // GQA: 8 KV heads
  if (name == "falcon40b")
    return detail::dense_shape(name, 60, 8192, 32768, 2048);  // MQA-style KV
  if (name == "tiny") {
    // Desk-scale workload: the attention/MLP/projection byte ratios mirror
    // the large presets; KV is kept slim so the sparse FC phases dominate.
    ModelShape s;
    s.name = name;
    s.num_layers = 16;
    s.hidden_dim = 64;
    s.attn_neurons_per_layer = 64;
    s.mlp_neurons_per_layer = 256;
    s.attn_neuron_bytes = 128;
    s.mlp_neuron_bytes = 128;
    s.projection_bytes_per_layer = 8192;
    s.kv_bytes_per_token_per_layer = 16;
    return s;
  }
  throw ConfigError("unknown model preset: " + name);
}

}  // namespace ndpsim
