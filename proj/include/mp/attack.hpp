#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mp/net.hpp"
#include "mp/sigsynth.hpp"

namespace mp::attack {

/**
 * Additive trigger t: zero everywhere except the contiguous window
 * [offset, offset + size), where it equals the payload. Stored sparsely;
 * full_i/full_q materialize the dense 128-sample rows.
 */
struct Trigger {
  enum class Dist : std::uint8_t { Uniform = 0, Normal = 1 };

  int size = 0;    // s, in [1, 127]
  int offset = 0;  // j, in [0, 127 - s]
  Dist dist = Dist::Normal;
  std::vector<float> payload_i, payload_q;  // s values each

  std::vector<float> full_i() const;
  std::vector<float> full_q() const;
};

/**
 * Draws the payload i.i.d. on both components and the offset uniformly from
 * [0, 128 - s). Normal uses sigma = scale; Uniform draws from
 * [-scale*sqrt(3), scale*sqrt(3)] so both distributions share the
 * per-component variance scale^2.
 */
Trigger make_trigger(int size, Trigger::Dist dist, double scale, std::uint64_t seed);

// Uniformly scales the payload; the harness applies its dataset gain here.
Trigger scale_trigger(const Trigger& t, float gain);

/**
 * MPTR v1, little endian: magic "MPTR\x01" | u32 s | u32 j | u8 dist tag |
 * s x f32 I payload | s x f32 Q payload. Bit-exact round-trip.
 */
void write_trigger(const Trigger& t, const std::filesystem::path& path);
Trigger read_trigger(const std::filesystem::path& path);

/**
 * y + t, elementwise on the trigger support, label and snr untouched. With
 * resample_offset a fresh location is drawn from the seed, matching the
 * random placement the attack uses at poisoning and test time.
 */
IQFrame patch(const IQFrame& frame, const Trigger& trig, bool resample_offset = false,
              std::uint64_t seed = 0);

enum class Pairing { Index, GreedyNearest };

/**
 * One-to-one map from source feature columns to target feature columns:
 * a[k] is the target index claimed by source k. Index mode is the identity;
 * greedy-nearest repeatedly matches the globally closest unmatched pair by
 * Euclidean distance. Always a bijection.
 */
std::vector<int> pair_sources_to_targets(const net::MatF& v1, const net::MatF& v2,
                                         Pairing mode);

struct PoisonConfig {
  double lr = 1e-5;
  int num_iter = 5000;
  double delta = 1e-4;
  double tau_rel = 0.01;     // stop a pair once loss <= tau_rel * its initial loss
  double tau_abs = 0.0;      // absolute override, used when positive
  int lr_patience = 500;     // halve lr after this many iterations without improvement
  double lr_decay = 0.5;
  int stop_patience = 1500;  // abandon a flat pair after this many iterations; 0 = never
  Pairing pairing = Pairing::Index;
  bool resample_offsets = true;
  int trace_stride = 10;     // loss-trace sampling interval
  std::uint64_t seed = 0;
  bool verbose = false;
};

struct PairTrace {
  int pair_id = 0;
  std::vector<std::pair<int, float>> points;  // (iteration, loss)
};

struct PoisonBatchResult {
  std::vector<IQFrame> poisoned;         // y_p(k) = y_target(a(k)) + p(k), target label
  std::vector<IQFrame> patched_sources;  // y*(k), the collision anchors
  std::vector<int> assignment;           // a(k)
  std::vector<double> initial_loss;      // squared feature distances at p = 0
  std::vector<double> final_loss;        // squared feature distances at the returned p
  std::vector<int> iters_run;
  std::vector<PairTrace> traces;
};

/**
 * Feature-collision poisoning: per pair k, projected gradient descent on
 *   min_p || f(y_source(k) + t) - f(y_target(a(k)) + p) ||^2,  |p|_inf <= delta
 * with p starting at zero, a halving learning-rate schedule and per-pair
 * early stopping. Deterministic in cfg.seed; throws DivergenceError on a
 * non-finite loss.
 */
PoisonBatchResult poison(const net::Model& model, std::span<const IQFrame> sources,
                         std::span<const IQFrame> targets, const Trigger& trig,
                         const PoisonConfig& cfg);

// CSV export of the loss traces: pair_id,iter,loss
void write_loss_traces_csv(const PoisonBatchResult& result,
                           const std::filesystem::path& path);

// Rotates every complex sample by beta radians (Givens rotation of each IQ
// column); labels untouched.
std::vector<IQFrame> rotate_trojan(std::span<const IQFrame> frames, double beta);
IQFrame rotate_trojan(const IQFrame& frame, double beta);

struct Composition {
  ModulationScheme source = ModulationScheme::Psk8;
  ModulationScheme target = ModulationScheme::Bpsk;
  int n_poisoned = 100;
  int n_clean_target = 150;
  int n_clean_source = 250;
};

struct AssembledDataset {
  sigsynth::Dataset data;
  std::vector<std::uint8_t> poisoned_flag;  // parallel to data.frames
};

/**
 * Victim training mix: n_poisoned frames from the poison result (already
 * target-labeled), plus clean target and source frames drawn in order from
 * `clean`. Deterministically shuffled. Throws when inputs cannot cover the
 * composition.
 */
AssembledDataset assemble_poisoned_dataset(const sigsynth::Dataset& clean,
                                           const PoisonBatchResult& result,
                                           const Composition& comp,
                                           std::uint64_t shuffle_seed);

/**
 * Trojan baseline mix: rotated source frames are relabeled as the target
 * class (the visible label flip the HOS audit is meant to catch).
 */
AssembledDataset assemble_trojan_dataset(const sigsynth::Dataset& clean,
                                         std::span<const IQFrame> rotated_sources,
                                         const Composition& comp,
                                         std::uint64_t shuffle_seed);

}  // namespace mp::attack
