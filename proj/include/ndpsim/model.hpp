#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

// Domain types shared by every module: model shape (the neuron inventory),
// hardware description, and the neuron placement (DIMM ownership + GPU
// mirror set).
namespace ndpsim {

// Error taxonomy used across the toolkit.  The CLI maps these onto the
// stable exit codes documented in the README (config 2, infeasible 3, io 4).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A "neuron" is one row/column of a weight matrix: the unit of placement,
// activation and migration.
enum class BlockKind : uint8_t { kAttentionFc = 0, kMlp = 1 };

struct NeuronRef {
  uint32_t layer = 0;
  uint32_t index = 0;  // within the layer, attention block first

  friend bool operator==(const NeuronRef& a, const NeuronRef& b) {
    return a.layer == b.layer && a.index == b.index;
  }
  friend bool operator<(const NeuronRef& a, const NeuronRef& b) {
    return a.layer != b.layer ? a.layer < b.layer : a.index < b.index;
  }
};

struct ModelShape {
  std::string name = "custom";
  uint32_t num_layers = 0;
  uint32_t attn_neurons_per_layer = 0;
  uint32_t mlp_neurons_per_layer = 0;
  uint32_t hidden_dim = 0;

  // Per-neuron weight bytes by block kind.  Default is one hidden_dim row
  // at FP16; presets override (e.g. a QKV column spans three matrices).
  uint64_t attn_neuron_bytes = 0;
  uint64_t mlp_neuron_bytes = 0;
  // Dense projection weights per layer; never part of the neuron inventory.
  uint64_t projection_bytes_per_layer = 0;
  // K+V appended per token per layer (small under GQA/MQA).
  uint64_t kv_bytes_per_token_per_layer = 0;
  // Arithmetic per weight element (multiply + accumulate).
  double flops_per_weight = 2.0;

  // Fills the byte/dimension defaults that derive from hidden_dim.
  void apply_defaults() {
    if (attn_neuron_bytes == 0) attn_neuron_bytes = 2ull * hidden_dim;
    if (mlp_neuron_bytes == 0) mlp_neuron_bytes = 2ull * hidden_dim;
    if (projection_bytes_per_layer == 0)
      projection_bytes_per_layer = 2ull * hidden_dim * hidden_dim;
    if (kv_bytes_per_token_per_layer == 0)
      kv_bytes_per_token_per_layer = 4ull * hidden_dim;
  }

  uint32_t neurons_per_layer() const {
    return attn_neurons_per_layer + mlp_neurons_per_layer;
  }
  uint64_t total_neurons() const {
    return static_cast<uint64_t>(num_layers) * neurons_per_layer();
  }
  uint32_t neurons_in_layer(uint32_t layer) const {
    (void)layer;
    return neurons_per_layer();
  }

  BlockKind kind_of(uint32_t index_in_layer) const {
    return index_in_layer < attn_neurons_per_layer ? BlockKind::kAttentionFc
                                                   : BlockKind::kMlp;
  }
  uint64_t neuron_bytes(BlockKind kind) const {
    return kind == BlockKind::kAttentionFc ? attn_neuron_bytes : mlp_neuron_bytes;
  }
  uint64_t neuron_bytes(const NeuronRef& n) const {
    return neuron_bytes(kind_of(n.index));
  }
  double neuron_flops(BlockKind kind) const {
    return flops_per_weight * static_cast<double>(neuron_bytes(kind) / 2);
  }

  bool contains(const NeuronRef& n) const {
    return n.layer < num_layers && n.index < neurons_per_layer();
  }
  uint64_t global_index(const NeuronRef& n) const {
    return static_cast<uint64_t>(n.layer) * neurons_per_layer() + n.index;
  }
  NeuronRef from_global(uint64_t g) const {
    return NeuronRef{static_cast<uint32_t>(g / neurons_per_layer()),
                     static_cast<uint32_t>(g % neurons_per_layer())};
  }

  uint64_t total_neuron_bytes() const {
    return static_cast<uint64_t>(num_layers) *
           (attn_neurons_per_layer * attn_neuron_bytes +
            mlp_neurons_per_layer * mlp_neuron_bytes);
  }
  uint64_t layer_weight_bytes(uint32_t /*layer*/) const {
    return attn_neurons_per_layer * attn_neuron_bytes +
           mlp_neurons_per_layer * mlp_neuron_bytes + projection_bytes_per_layer;
  }
  uint64_t total_weight_bytes() const {
    return total_neuron_bytes() +
           static_cast<uint64_t>(num_layers) * projection_bytes_per_layer;
  }
  double flops_per_token() const {
    return flops_per_weight * static_cast<double>(total_weight_bytes() / 2);
  }

  // FNV-1a over the geometry fields; ties trace and placement files to the
  // shape they were produced from.
  uint64_t fingerprint() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= 0x100000001b3ULL;
      }
    };
    mix(num_layers);
    mix(attn_neurons_per_layer);
    mix(mlp_neurons_per_layer);
    mix(hidden_dim);
    mix(attn_neuron_bytes);
    mix(mlp_neuron_bytes);
    return h;
  }

  void validate() const {
    if (num_layers == 0) throw ConfigError("model: num_layers must be > 0");
    if (neurons_per_layer() == 0) throw ConfigError("model: no neurons per layer");
    if (hidden_dim == 0) throw ConfigError("model: hidden_dim must be > 0");
    if (attn_neurons_per_layer > 0 && attn_neuron_bytes == 0)
      throw ConfigError("model: attn_neuron_bytes must be > 0");
    if (mlp_neurons_per_layer > 0 && mlp_neuron_bytes == 0)
      throw ConfigError("model: mlp_neuron_bytes must be > 0");
  }
};

struct GpuSpec {
  uint64_t memory_bytes = 0;
  double mem_bandwidth_bytes_per_s = 0;
  double compute_flops = 0;
};

struct DimmSpec {
  uint32_t count = 0;  // J; >= 2 and even (rebalancing pairs DIMMs)
  uint64_t memory_bytes = 0;
  double internal_bandwidth_bytes_per_s = 0;
  uint32_t multipliers_per_gemv_unit = 256;
  double frequency_hz = 1e9;
  // 0 = derive from multipliers below.
  double compute_flops_override = 0;
};

// Effective FLOP/s of one GEMV unit per cycle per multiplier.  Calibrated so
// a 5120-wide GEMV at batch 1 crosses from compute- to bandwidth-bound
// between 32 and 64 multipliers (bit-serial FP16 lanes).
inline constexpr double kDimmFlopsPerMultiplierCycle = 0.5;

struct HardwareConfig {
  std::string name = "custom";
  GpuSpec gpu;
  DimmSpec dimms;
  double pcie_bandwidth_bytes_per_s = 0;
  double dimmlink_bandwidth_bytes_per_s = 0;
  double t_sync_seconds = 0;

  double dimm_compute_flops() const {
    if (dimms.compute_flops_override > 0) return dimms.compute_flops_override;
    return dimms.multipliers_per_gemv_unit * dimms.frequency_hz *
           kDimmFlopsPerMultiplierCycle;
  }
  double aggregate_dimm_bandwidth() const {
    return dimms.count * dimms.internal_bandwidth_bytes_per_s;
  }
  uint64_t total_dimm_bytes() const {
    return static_cast<uint64_t>(dimms.count) * dimms.memory_bytes;
  }

  void validate() const {
    if (gpu.memory_bytes == 0 || gpu.mem_bandwidth_bytes_per_s <= 0 ||
        gpu.compute_flops <= 0)
      throw ConfigError("hardware: gpu capacities/bandwidths must be positive");
    if (dimms.count < 2 || dimms.count % 2 != 0)
      throw ConfigError("hardware: dimm count must be even and >= 2");
    if (dimms.memory_bytes == 0 || dimms.internal_bandwidth_bytes_per_s <= 0)
      throw ConfigError("hardware: dimm capacity/bandwidth must be positive");
    if (dimm_compute_flops() <= 0)
      throw ConfigError("hardware: dimm compute must be positive");
    if (pcie_bandwidth_bytes_per_s <= 0 || dimmlink_bandwidth_bytes_per_s <= 0)
      throw ConfigError("hardware: link bandwidths must be positive");
    if (t_sync_seconds < 0) throw ConfigError("hardware: t_sync must be >= 0");
  }

  // All weights live on the DIMMs, so they must collectively fit the model.
  void validate_against(const ModelShape& shape) const {
    validate();
    if (total_dimm_bytes() < shape.total_weight_bytes())
      throw InfeasibleError("hardware: DIMM capacity " +
                            std::to_string(total_dimm_bytes()) +
                            " B cannot hold model weights " +
                            std::to_string(shape.total_weight_bytes()) + " B");
  }
};

// DIMM ownership matrix (exactly one owner per neuron) plus the GPU mirror
// set.  GPU residency is a copy: dropping a neuron from the GPU never loses
// data because the owning DIMM always keeps it.
struct NeuronPlacement {
  std::vector<uint32_t> dimm_of;      // global neuron index -> owning DIMM
  std::vector<uint8_t> gpu_resident;  // global neuron index -> mirrored?

  static NeuronPlacement empty(const ModelShape& shape) {
    NeuronPlacement p;
    p.dimm_of.assign(shape.total_neurons(), 0);
    p.gpu_resident.assign(shape.total_neurons(), 0);
    return p;
  }

  uint64_t gpu_bytes(const ModelShape& shape) const {
    uint64_t sum = 0;
    for (uint64_t g = 0; g < gpu_resident.size(); ++g)
      if (gpu_resident[g]) sum += shape.neuron_bytes(shape.from_global(g));
    return sum;
  }
  std::vector<uint64_t> dimm_bytes(const ModelShape& shape, uint32_t num_dimms) const {
    std::vector<uint64_t> sum(num_dimms, 0);
    for (uint64_t g = 0; g < dimm_of.size(); ++g)
      if (dimm_of[g] < num_dimms)
        sum[dimm_of[g]] += shape.neuron_bytes(shape.from_global(g));
    return sum;
  }
  uint64_t gpu_count() const {
    uint64_t n = 0;
    for (uint8_t r : gpu_resident) n += r;
    return n;
  }

  friend bool operator==(const NeuronPlacement& a, const NeuronPlacement& b) {
    return a.dimm_of == b.dimm_of && a.gpu_resident == b.gpu_resident;
  }
};

enum class ViolationKind : uint8_t {
  kStructuralCoverage,   // placement does not cover the shape's neurons
  kStructuralDimmIndex,  // owner references a DIMM that does not exist
  kGpuOverCapacity,      // sum of mirrored bytes exceeds GPU memory
  kDimmOverCapacity,     // sum of owned bytes exceeds one DIMM's memory
};

struct Violation {
  ViolationKind kind;
  int device;  // DIMM id for per-DIMM violations, -1 otherwise
  uint64_t bytes_over;
  std::string detail;
};

inline const char* to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::kStructuralCoverage: return "structural-coverage";
    case ViolationKind::kStructuralDimmIndex: return "structural-dimm-index";
    case ViolationKind::kGpuOverCapacity: return "gpu-over-capacity";
    case ViolationKind::kDimmOverCapacity: return "dimm-over-capacity";
  }
  return "?";
}

// Checks the three placement invariants: full coverage with one owner per
// neuron, GPU mirror bytes within GPU memory, owned bytes within each DIMM.
// Structural problems are reported as distinct kinds from capacity ones.
inline std::vector<Violation> validate_placement(const NeuronPlacement& p,
                                                 const ModelShape& shape,
                                                 const HardwareConfig& hw) {
  std::vector<Violation> out;
  const uint64_t n = shape.total_neurons();
  if (p.dimm_of.size() != n || p.gpu_resident.size() != n) {
    out.push_back({ViolationKind::kStructuralCoverage, -1, 0,
                   "placement covers " + std::to_string(p.dimm_of.size()) +
                       " neurons, shape has " + std::to_string(n)});
    return out;  // remaining checks would index out of bounds
  }
  for (uint64_t g = 0; g < n; ++g) {
    if (p.dimm_of[g] >= hw.dimms.count) {
      out.push_back({ViolationKind::kStructuralDimmIndex,
                     static_cast<int>(p.dimm_of[g]), 0,
                     "neuron " + std::to_string(g) + " owned by DIMM " +
                         std::to_string(p.dimm_of[g]) + " but J = " +
                         std::to_string(hw.dimms.count)});
      return out;
    }
  }
  const uint64_t gpu_used = p.gpu_bytes(shape);
  if (gpu_used > hw.gpu.memory_bytes) {
    out.push_back({ViolationKind::kGpuOverCapacity, -1,
                   gpu_used - hw.gpu.memory_bytes,
                   "gpu mirror uses " + std::to_string(gpu_used) + " B of " +
                       std::to_string(hw.gpu.memory_bytes) + " B"});
  }
  const std::vector<uint64_t> used = p.dimm_bytes(shape, hw.dimms.count);
  for (uint32_t j = 0; j < hw.dimms.count; ++j) {
    if (used[j] > hw.dimms.memory_bytes) {
      out.push_back({ViolationKind::kDimmOverCapacity, static_cast<int>(j),
                     used[j] - hw.dimms.memory_bytes,
                     "DIMM " + std::to_string(j) + " holds " +
                         std::to_string(used[j]) + " B of " +
                         std::to_string(hw.dimms.memory_bytes) + " B"});
    }
  }
  return out;
}

}  // namespace ndpsim
