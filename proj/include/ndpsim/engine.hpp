#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ndpsim/costmodel.hpp"
#include "ndpsim/mapper.hpp"
#include "ndpsim/model.hpp"
#include "ndpsim/predictor.hpp"
#include "ndpsim/scheduler.hpp"
#include "ndpsim/trace.hpp"

// End-to-end decode simulation.  Each layer step runs: predicted-sparse QKV
// split across GPU and DIMMs, attention on the DIMMs, dense projection on
// the GPU (與 placement maintenance hidden under it), predicted-sparse MLP,
// and a merge on the DIMM side.  Neurons the predictor missed are computed
// late on their owning DIMM.
namespace ndpsim {

enum class ScheduleMode : uint8_t {
  kRandom,      // random placement, no online maintenance
  kPartition,   // offline-mapped placement only
  kTokenAdjust, // + hot/cold adjustment, token-signal-only prediction
  kLayerAdjust, // + hot/cold adjustment, layer-signal-only prediction
  kAdjustment,  // + hot/cold adjustment, combined prediction
  kFull,        // + window rebalancing
};

inline const char* to_string(ScheduleMode m) {
  switch (m) {
    case ScheduleMode::kRandom: return "random";
    case ScheduleMode::kPartition: return "partition";
    case ScheduleMode::kTokenAdjust: return "token-only";
    case ScheduleMode::kLayerAdjust: return "layer-only";
    case ScheduleMode::kAdjustment: return "adjustment";
    case ScheduleMode::kFull: return "full";
  }
  return "?";
}

inline ScheduleMode schedule_mode_from(const std::string& s) {
  if (s == "random") return ScheduleMode::kRandom;
  if (s == "partition") return ScheduleMode::kPartition;
  if (s == "token-only") return ScheduleMode::kTokenAdjust;
  if (s == "layer-only") return ScheduleMode::kLayerAdjust;
  if (s == "adjustment") return ScheduleMode::kAdjustment;
  if (s == "full") return ScheduleMode::kFull;
  throw ConfigError("unknown schedule mode: " + s);
}

struct EngineConfig {
  uint32_t batch = 1;
  ScheduleMode mode = ScheduleMode::kFull;
  // Sensitivity knob: treat mispredicted-inactive neurons as free instead of
  // charging a late pass on their owning DIMM.
  bool free_misprediction = false;
  bool audit_conservation = true;

  void validate() const {
    if (batch < 1 || batch > 64)
      throw ConfigError("engine: batch must be in [1, 64]");
  }
};

struct PhaseBreakdown {
  double prefill = 0, qkv = 0, attention = 0, projection = 0, mlp = 0,
         merge = 0, sync = 0, exposed_migration = 0;
  double total() const {
    return prefill + qkv + attention + projection + mlp + merge + sync +
           exposed_migration;
  }
};

struct StepRecord {
  uint32_t token = 0, layer = 0;
  double qkv_s = 0, attention_s = 0, projection_s = 0, mlp_s = 0, merge_s = 0,
         sync_s = 0, exposed_s = 0;
  uint32_t predicted = 0, actual = 0, missed = 0, false_positive = 0;
  uint32_t gpu_scheduled = 0, dimm_scheduled_max = 0;
  uint64_t pcie_bytes = 0, dimmlink_bytes = 0;
  double total() const {
    return qkv_s + attention_s + projection_s + mlp_s + merge_s + sync_s +
           exposed_s;
  }
};

struct WindowImbalance {
  uint32_t token = 0;
  double before = 0.0, after = 0.0;
};

struct MigrationTotals {
  uint64_t pcie_bytes = 0, dimmlink_bytes = 0;
  uint64_t gpu_swaps = 0, dimm_moves = 0;
  double hidden_seconds = 0.0, exposed_seconds = 0.0;
};

struct SimReport {
  std::string mode;
  uint32_t batch = 1;
  uint32_t prefill_tokens = 0, decode_tokens = 0;
  double prefill_seconds = 0.0;
  double decode_seconds = 0.0;
  double total_seconds = 0.0;
  double tokens_per_second = 0.0;
  PhaseBreakdown breakdown;
  AccuracyReport predictor;
  MigrationTotals migration;
  std::vector<WindowImbalance> imbalance_series;
  std::vector<double> per_token_seconds;
  std::vector<StepRecord> steps;
  BaselineReport baseline;
  double baseline_speedup = 0.0;  // baseline decode time / this decode time
  // frequency-weighted objective of the placement before/after online moves
  double placement_objective_initial = 0.0;
  double placement_objective_final = 0.0;
};

struct PrefillResult {
  double seconds = 0.0;
  std::vector<double> frequencies;
};

// The whole prompt is processed on the GPU under a conventional offloading
// strategy; neuron activity is recorded for the predictor and the mapper.
inline PrefillResult simulate_prefill(const ModelShape& shape,
                                      const HardwareConfig& hw,
                                      uint32_t prefill_tokens, uint32_t batch,
                                      const ActivationTrace& trace) {
  PrefillResult r;
  const uint64_t total = shape.total_weight_bytes();
  const uint64_t streamed = total > hw.gpu.memory_bytes
                                ? total - hw.gpu.memory_bytes
                                : 0;
  r.seconds = streamed / hw.pcie_bandwidth_bytes_per_s +
              std::max(total / hw.gpu.mem_bandwidth_bytes_per_s,
                       static_cast<double>(prefill_tokens) * batch *
                           shape.flops_per_token() / hw.gpu.compute_flops);
  r.frequencies = trace.prefill_frequencies(shape);
  return r;
}

namespace detail {

// actual minus predicted, both sorted
inline void sorted_difference(const std::vector<uint32_t>& a,
                              const std::vector<uint32_t>& b,
                              std::vector<uint32_t>& out) {
  out.clear();
  size_t i = 0, j = 0;
  while (i < a.size()) {
    if (j == b.size() || a[i] < b[j]) out.push_back(a[i++]);
    else if (a[i] > b[j]) ++j;
    else { ++i; ++j; }
  }
}

}  // namespace detail

inline SimReport simulate(const ModelShape& shape, const HardwareConfig& hw,
                          const ActivationTrace& trace,
                          const NeuronPlacement& initial_placement,
                          const PredictorConfig& pcfg,
                          const SchedulerConfig& scfg,
                          const EngineConfig& ecfg) {
  shape.validate();
  hw.validate_against(shape);
  pcfg.validate();
  scfg.validate();
  ecfg.validate();
  trace.check_shape(shape);
  {
    const auto violations = validate_placement(initial_placement, shape, hw);
    if (!violations.empty())
      throw ConfigError("engine: infeasible placement: " + violations.front().detail);
  }
  if (trace.header.num_layers != shape.num_layers)
    throw ConfigError("engine: trace layer count does not match shape");

  const uint32_t layers = shape.num_layers;
  const uint32_t j_count = hw.dimms.count;
  const uint32_t prefill_tokens = trace.header.prefill_tokens;
  const uint32_t decode_tokens = trace.header.decode_tokens;
  const DeviceTiming timing = build_device_timing(shape, hw, ecfg.batch);

  SimReport report;
  report.mode = to_string(ecfg.mode);
  report.batch = ecfg.batch;
  report.prefill_tokens = prefill_tokens;
  report.decode_tokens = decode_tokens;

  const PrefillResult prefill =
      simulate_prefill(shape, hw, prefill_tokens, ecfg.batch, trace);
  report.prefill_seconds = prefill.seconds;
  report.breakdown.prefill = prefill.seconds;

  NeuronStateTable states = init_states(prefill.frequencies);
  const ActivationStats prefill_stats =
      measure_stats(trace, shape, 0, prefill_tokens, /*with_correlation=*/true);
  const CorrelationTable corr = build_correlation_table(prefill_stats, shape, pcfg);

  PredictRule rule = PredictRule::kCombined;
  if (ecfg.mode == ScheduleMode::kTokenAdjust) rule = PredictRule::kTokenOnly;
  if (ecfg.mode == ScheduleMode::kLayerAdjust) rule = PredictRule::kLayerOnly;
  const bool adjustment_on = ecfg.mode == ScheduleMode::kTokenAdjust ||
                             ecfg.mode == ScheduleMode::kLayerAdjust ||
                             ecfg.mode == ScheduleMode::kAdjustment ||
                             ecfg.mode == ScheduleMode::kFull;
  const bool rebalance_on = ecfg.mode == ScheduleMode::kFull;

  MappingProblem objective_problem =
      MappingProblem::make(shape, hw, prefill.frequencies, ecfg.batch);
  report.placement_objective_initial =
      objective_of(initial_placement, objective_problem);

  NeuronPlacement placement = initial_placement;
  WindowActivity accum = WindowActivity::zero(shape.total_neurons(), scfg.window_tokens);
  WindowActivity window_snapshot = accum;
  bool window_ready = false;

  std::vector<uint64_t> phase_dimm_counts(j_count);
  std::vector<uint64_t> missed_dimm_counts(j_count);
  std::vector<uint32_t> missed;
  std::vector<double> z_scratch(j_count);
  report.per_token_seconds.assign(decode_tokens, 0.0);
  report.steps.reserve(static_cast<size_t>(decode_tokens) * layers);

  const double merge_bytes_seconds =
      (2.0 * shape.hidden_dim * ecfg.batch) / hw.aggregate_dimm_bandwidth();

  for (uint32_t t = 0; t < decode_tokens; ++t) {
    const uint32_t trace_token = prefill_tokens + t;
    bool window_boundary = false;
    if (t > 0 && t % scfg.window_tokens == 0) {
      if (rebalance_on) {
        window_boundary = true;
        window_snapshot = accum;
        window_ready = true;
        // record the aggregate skew this window saw before any correction
        for (uint32_t j = 0; j < j_count; ++j) z_scratch[j] = 0.0;
        for (uint64_t g = 0; g < shape.total_neurons(); ++g)
          if (!placement.gpu_resident[g])
            z_scratch[placement.dimm_of[g]] += window_snapshot.counts[g];
        report.imbalance_series.push_back({t, imbalance(z_scratch), 0.0});
      }
      accum.reset();
    }

    const std::vector<uint32_t>* prev_actual = nullptr;
    static const std::vector<uint32_t> kEmpty;
    prev_actual = &kEmpty;

    for (uint32_t l = 0; l < layers; ++l) {
      const std::vector<uint32_t>& actual = trace.active(trace_token, l);
      const std::vector<uint32_t> predicted =
          predict_layer(states, corr, *prev_actual, l, shape, pcfg, rule);
      detail::sorted_difference(actual, predicted, missed);

      StepRecord step;
      step.token = t;
      step.layer = l;
      step.predicted = static_cast<uint32_t>(predicted.size());
      step.actual = static_cast<uint32_t>(actual.size());
      step.missed = static_cast<uint32_t>(missed.size());
      step.false_positive = static_cast<uint32_t>(
          predicted.size() - detail::intersection_size(predicted, actual));
      report.predictor.add_layer(predicted, actual, shape.neurons_per_layer());

      if (ecfg.audit_conservation) {
        // every activated neuron is computed exactly once: scheduled pass if
        // predicted, late pass otherwise
        const size_t hit = detail::intersection_size(predicted, actual);
        if (hit + missed.size() != actual.size())
          throw std::logic_error("engine: conservation audit failed");
      }

      const uint64_t base = shape.global_index({l, 0});
      // One sparse FC pass (QKV or MLP): GPU handles mirrored predicted
      // neurons, every other predicted neuron runs on its owning DIMM, and
      // missed actives run late on their owner.  The sync share of the
      // winning side is reported in its own bucket.
      struct PhaseOut {
        double work = 0.0;  // phase seconds excluding attributed sync
        double sync = 0.0;
      };
      auto phase = [&](BlockKind kind) {
        std::fill(phase_dimm_counts.begin(), phase_dimm_counts.end(), 0);
        std::fill(missed_dimm_counts.begin(), missed_dimm_counts.end(), 0);
        uint64_t gpu_n = 0;
        for (uint32_t i : predicted) {
          if (shape.kind_of(i) != kind) continue;
          const uint64_t g = base + i;
          if (placement.gpu_resident[g]) ++gpu_n;
          else ++phase_dimm_counts[placement.dimm_of[g]];
        }
        for (uint32_t i : missed) {
          if (shape.kind_of(i) != kind) continue;
          ++missed_dimm_counts[placement.dimm_of[base + i]];
        }
        const double t_gpu_neuron = timing.gpu(l, kind);
        const double t_dimm_neuron = timing.dimm(l, kind);
        const double gpu_time = layer_time_gpu(gpu_n, t_gpu_neuron, hw.t_sync_seconds);
        const DimmPhaseTime dimm_time =
            layer_time_dimms(phase_dimm_counts, t_dimm_neuron);
        double late = 0.0;
        if (!ecfg.free_misprediction) {
          uint64_t worst = 0;
          for (uint64_t m : missed_dimm_counts) worst = std::max(worst, m);
          late = static_cast<double>(worst) * t_dimm_neuron;
        }
        PhaseOut out;
        const double phase_total = std::max(gpu_time, dimm_time.max) + late;
        out.sync = (gpu_n > 0 && gpu_time >= dimm_time.max)
                       ? 2.0 * hw.t_sync_seconds
                       : 0.0;
        out.work = phase_total - out.sync;
        step.gpu_scheduled += static_cast<uint32_t>(gpu_n);
        uint64_t mx = 0;
        for (uint64_t c : phase_dimm_counts) mx = std::max(mx, c);
        step.dimm_scheduled_max =
            std::max(step.dimm_scheduled_max, static_cast<uint32_t>(mx));
        return out;
      };

      const PhaseOut qkv = phase(BlockKind::kAttentionFc);
      step.qkv_s = qkv.work;
      step.sync_s += qkv.sync;
      report.breakdown.qkv += qkv.work;
      report.breakdown.sync += qkv.sync;

      const double kv_bytes = static_cast<double>(trace_token + 1) *
                              shape.kv_bytes_per_token_per_layer * ecfg.batch;
      step.attention_s = attention_time(kv_bytes, hw);
      report.breakdown.attention += step.attention_s;

      const double proj = projection_time(shape, hw, ecfg.batch);
      step.projection_s = proj;
      report.breakdown.projection += proj;

      MigrationPlan plan;
      if (adjustment_on) {
        AdjustResult adj = adjust_hot_cold(placement, states, pcfg, shape, hw);
        placement = std::move(adj.placement);
        plan = std::move(adj.plan);
      }
      if (window_boundary && window_ready &&
          (!scfg.aggregate_rebalance || l == 0)) {
        AdjustResult reb =
            scfg.aggregate_rebalance
                ? rebalance_window(placement, window_snapshot, shape, hw, scfg)
                : rebalance_window(placement, window_snapshot, shape, hw, scfg, l);
        placement = std::move(reb.placement);
        plan.dimm_moves.insert(plan.dimm_moves.end(), reb.plan.dimm_moves.begin(),
                               reb.plan.dimm_moves.end());
        plan.dimmlink_bytes += reb.plan.dimmlink_bytes;
      }
      const MigrationTiming mig =
          migration_time(plan.dimmlink_bytes, plan.pcie_bytes, proj, hw);
      step.exposed_s = mig.exposed;
      step.pcie_bytes = plan.pcie_bytes;
      step.dimmlink_bytes = plan.dimmlink_bytes;
      report.breakdown.exposed_migration += mig.exposed;
      report.migration.pcie_bytes += plan.pcie_bytes;
      report.migration.dimmlink_bytes += plan.dimmlink_bytes;
      report.migration.gpu_swaps += plan.gpu_swaps.size();
      report.migration.dimm_moves += plan.dimm_moves.size();
      report.migration.hidden_seconds += mig.hidden;
      report.migration.exposed_seconds += mig.exposed;

      const PhaseOut mlp = phase(BlockKind::kMlp);
      step.mlp_s = mlp.work;
      step.sync_s += mlp.sync;
      report.breakdown.mlp += mlp.work;
      report.breakdown.sync += mlp.sync;

      step.merge_s = merge_bytes_seconds;
      report.breakdown.merge += merge_bytes_seconds;
      step.sync_s += hw.t_sync_seconds;  // merge trigger
      report.breakdown.sync += hw.t_sync_seconds;

      update_states(states, actual, l, shape, pcfg);
      for (uint32_t i : actual) ++accum.counts[base + i];
      prev_actual = &actual;

      report.per_token_seconds[t] += step.total();
      report.steps.push_back(step);
    }

    if (window_boundary && window_ready) {
      for (uint32_t j = 0; j < j_count; ++j) z_scratch[j] = 0.0;
      for (uint64_t g = 0; g < shape.total_neurons(); ++g)
        if (!placement.gpu_resident[g])
          z_scratch[placement.dimm_of[g]] += window_snapshot.counts[g];
      report.imbalance_series.back().after = imbalance(z_scratch);
    }
  }

  for (double s : report.per_token_seconds) report.decode_seconds += s;
  report.total_seconds = report.prefill_seconds + report.decode_seconds;
  report.tokens_per_second =
      report.decode_seconds > 0 ? decode_tokens / report.decode_seconds : 0.0;
  report.placement_objective_final = objective_of(placement, objective_problem);

  report.baseline = baseline_offload_latency(
      shape, hw, {prefill_tokens, decode_tokens}, ecfg.batch);
  report.baseline_speedup = report.decode_seconds > 0
                                ? report.baseline.decode_seconds / report.decode_seconds
                                : 0.0;
  return report;
}

struct AblationEntry {
  ScheduleMode mode;
  SimReport report;
};

// One report per mode over the identical trace, mapped placement shared by
// every non-random mode.
inline std::vector<AblationEntry> run_ablation(
    const ModelShape& shape, const HardwareConfig& hw,
    const ActivationTrace& trace, const PredictorConfig& pcfg,
    const SchedulerConfig& scfg, uint32_t batch,
    const std::vector<ScheduleMode>& modes, uint64_t seed) {
  const std::vector<double> freq =
      trace.prefill_frequencies(shape);
  const MappingProblem problem = MappingProblem::make(shape, hw, freq, batch);
  std::optional<NeuronPlacement> mapped;
  std::optional<NeuronPlacement> random;
  std::vector<AblationEntry> out;
  for (ScheduleMode mode : modes) {
    const NeuronPlacement* placement;
    if (mode == ScheduleMode::kRandom) {
      if (!random) random = random_placement(shape, hw, seed);
      placement = &*random;
    } else {
      if (!mapped) mapped = solve_greedy(problem).placement;
      placement = &*mapped;
    }
    EngineConfig ecfg;
    ecfg.batch = batch;
    ecfg.mode = mode;
    out.push_back({mode, simulate(shape, hw, trace, *placement, pcfg, scfg, ecfg)});
  }
  return out;
}

}  // namespace ndpsim
