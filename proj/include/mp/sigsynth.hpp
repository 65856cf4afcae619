#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include "mp/frame.hpp"
#include "mp/scheme.hpp"

namespace mp::sigsynth {

/**
 * Channel and shaping parameters of the synthesizer, one struct per
 * experiment cell. Defaults give the calibrated benign channel: unit
 * amplitude, no offsets, RRC 0.35 shaping at 8 samples per symbol.
 */
struct ChannelParams {
  double amplitude = 1.0;          // scales the signal term only; 0 leaves pure noise
  double carrier_offset = 0.0;     // f0, cycles per sample
  double phase_jitter_std = 0.0;   // std of per-sample random-walk increments, radians
  double timing_error = 0.0;       // symbol-clock offset as a fraction of a symbol
  int samples_per_symbol = 8;
  double rolloff = 0.35;           // RRC excess bandwidth, (0, 1]
  int span_symbols = 8;            // RRC filter reach, symbols per side of center
  double gfsk_bt = 0.35;           // Gaussian bandwidth-time product (GFSK only)
  int snr_db = 18;                 // noise power is 10^(-snr_db/10) per unit signal power

  // Throws std::invalid_argument on out-of-range values.
  void validate() const;
};

struct SymbolSequence {
  std::vector<std::complex<double>> symbols;
  std::vector<std::uint8_t> source_bits;
};

/**
 * Maps a bit vector (values 0/1, length a multiple of bits_per_symbol) onto
 * Gray-coded constellation symbols, MSB first within each group.
 */
SymbolSequence modulate(std::span<const std::uint8_t> bits, ModulationScheme scheme);

/**
 * Root-raised-cosine taps over span_symbols symbols per side, sampled at sps
 * per symbol and shifted by timing_offset symbols; normalized so the tap
 * energy equals sps (unit-power constellations then give unit signal power).
 */
std::vector<double> rrc_taps(double rolloff, int sps, int span_symbols,
                             double timing_offset = 0.0);

IQFrame synth_frame(ModulationScheme scheme, const ChannelParams& params,
                    std::uint64_t rng_seed);

// Signal and noise terms of one frame, for calibration checks. The frame
// returned by synth_frame is the sample-for-sample float sum of the parts.
struct FrameParts {
  IQFrame signal;
  IQFrame noise;
};
FrameParts synth_frame_parts(ModulationScheme scheme, const ChannelParams& params,
                             std::uint64_t rng_seed);

struct ManifestEntry {
  ModulationScheme scheme = ModulationScheme::Bpsk;
  int snr_db = 0;
  std::uint64_t count = 0;
};

struct Dataset {
  std::vector<IQFrame> frames;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> manifest;  // declared counts per (scheme, snr) cell
};

// Recounts frames per (scheme, snr) cell in first-seen order.
std::vector<ManifestEntry> count_cells(const Dataset& d);

// True when the declared manifest matches the actual frame counts.
bool manifest_ok(const Dataset& d);

/**
 * Synthesizes every cell of the spec in order with deterministic per-frame
 * substreams of `seed`. Channel parameters other than SNR come from `base`.
 */
Dataset synth_dataset(std::span<const ManifestEntry> spec, std::uint64_t seed,
                      const ChannelParams& base = {});

}  // namespace mp::sigsynth
