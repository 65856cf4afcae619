#include "mp/sigsynth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "mp/rng.hpp"

namespace mp::sigsynth {
namespace {

using cplx = std::complex<double>;
constexpr double kPi = std::numbers::pi;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("ChannelParams: ") + what);
}

// Discrete frequency pulse of the continuous-phase schemes. Each entry is the
// per-sample weight of one symbol's phase contribution; the weights of a
// symbol sum to 1 so a symbol advances the phase by pi * h_index * d in
// total (h_index = 0.5).
std::vector<double> freq_pulse(ModulationScheme scheme, const ChannelParams& p) {
  int sps = p.samples_per_symbol;
  if (scheme == ModulationScheme::Cpfsk) {
    return std::vector<double>(static_cast<std::size_t>(sps), 1.0 / sps);
  }
  // GFSK: rectangle convolved with a Gaussian of std sqrt(ln 2) / (2 pi BT)
  // symbols, truncated to 2 symbols per side.
  double sigma = std::sqrt(std::numbers::ln2) / (2.0 * kPi * p.gfsk_bt) * sps;
  int half = 2 * sps;
  std::vector<double> w(static_cast<std::size_t>(sps + 2 * half), 0.0);
  for (std::size_t m = 0; m < w.size(); ++m) {
    double acc = 0.0;
    for (int r = 0; r < sps; ++r) {
      double t = static_cast<double>(m) - half - r;
      acc += std::exp(-0.5 * (t / sigma) * (t / sigma));
    }
    w[m] = acc;
  }
  double total = 0.0;
  for (double v : w) total += v;
  for (double& v : w) v /= total;
  return w;
}

// Number of data symbols entering one frame, lead-in included.
int symbols_per_frame(const ChannelParams& p) {
  return kFrameWidth / p.samples_per_symbol + p.span_symbols;
}

std::vector<cplx> shaped_baseband(ModulationScheme scheme, const ChannelParams& p,
                                  Rng& rng) {
  int sps = p.samples_per_symbol;
  int nsym = symbols_per_frame(p);
  int bps = bits_per_symbol(scheme);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(nsym * bps));
  for (auto& b : bits) b = rng.bit();

  std::vector<cplx> out(kFrameWidth);
  if (is_linear(scheme)) {
    SymbolSequence seq = modulate(bits, scheme);
    std::vector<double> h = rrc_taps(p.rolloff, sps, p.span_symbols, p.timing_error);
    int taps = static_cast<int>(h.size());  // span * sps + 1
    int lead = p.span_symbols * sps / 2;    // delay to the filter center
    for (int k = 0; k < kFrameWidth; ++k) {
      // Window offset keeps the frame in filter steady state.
      int n = k + 2 * lead;
      cplx acc = 0.0;
      int l_lo = std::max(0, (n - taps + sps) / sps);
      int l_hi = std::min(nsym - 1, n / sps);
      for (int l = l_lo; l <= l_hi; ++l) {
        int idx = n - l * sps;
        if (idx >= 0 && idx < taps) acc += seq.symbols[static_cast<std::size_t>(l)] * h[static_cast<std::size_t>(idx)];
      }
      out[static_cast<std::size_t>(k)] = acc;
    }
  } else {
    // Continuous phase: accumulate per-sample increments over lead-in plus
    // frame, then keep the final kFrameWidth samples.
    std::vector<double> w = freq_pulse(scheme, p);
    int taps = static_cast<int>(w.size());
    int total = nsym * sps;
    int start = total - kFrameWidth;
    double phase = 0.0;
    for (int n = 0; n < total; ++n) {
      double inc = 0.0;
      int l_lo = std::max(0, (n - taps + sps) / sps);
      int l_hi = std::min(nsym - 1, n / sps);
      for (int l = l_lo; l <= l_hi; ++l) {
        int idx = n - l * sps;
        if (idx >= 0 && idx < taps) {
          double d = bits[static_cast<std::size_t>(l)] ? -1.0 : 1.0;
          inc += d * w[static_cast<std::size_t>(idx)];
        }
      }
      phase += kPi * 0.5 * inc;  // modulation index 0.5
      if (n >= start) out[static_cast<std::size_t>(n - start)] = {std::cos(phase), std::sin(phase)};
    }
  }
  return out;
}

}  // namespace

void ChannelParams::validate() const {
  require(amplitude >= 0.0, "amplitude must be nonnegative");
  require(std::abs(carrier_offset) < 0.5, "carrier offset must stay below Nyquist");
  require(phase_jitter_std >= 0.0, "phase jitter std must be nonnegative");
  require(timing_error >= -0.5 && timing_error < 0.5, "timing error is a symbol fraction");
  require(samples_per_symbol >= 2 && kFrameWidth % samples_per_symbol == 0,
          "samples per symbol must divide the frame width");
  require(rolloff > 0.0 && rolloff <= 1.0, "rolloff must lie in (0, 1]");
  require(span_symbols >= 2, "filter span too short");
  require(gfsk_bt > 0.0, "GFSK BT must be positive");
  require(snr_db >= -128 && snr_db <= 127, "snr_db must fit a signed byte");
}

SymbolSequence modulate(std::span<const std::uint8_t> bits, ModulationScheme scheme) {
  int bps = bits_per_symbol(scheme);
  if (bits.size() % static_cast<std::size_t>(bps) != 0)
    throw std::invalid_argument("modulate: bit count not a multiple of bits per symbol");
  for (auto b : bits)
    if (b > 1) throw std::invalid_argument("modulate: bits must be 0 or 1");
  const auto& table = constellation(scheme);
  SymbolSequence seq;
  seq.source_bits.assign(bits.begin(), bits.end());
  seq.symbols.reserve(bits.size() / static_cast<std::size_t>(bps));
  for (std::size_t i = 0; i < bits.size(); i += static_cast<std::size_t>(bps)) {
    unsigned v = 0;
    for (int j = 0; j < bps; ++j) v = (v << 1) | bits[i + static_cast<std::size_t>(j)];
    seq.symbols.push_back(table[v]);
  }
  return seq;
}

std::vector<double> rrc_taps(double rolloff, int sps, int span_symbols,
                             double timing_offset) {
  if (rolloff <= 0.0 || rolloff > 1.0) throw std::invalid_argument("rrc_taps: bad rolloff");
  if (sps < 1 || span_symbols < 1) throw std::invalid_argument("rrc_taps: bad geometry");
  int n = span_symbols * sps;
  std::vector<double> h(static_cast<std::size_t>(n + 1));
  double b = rolloff;
  for (int m = 0; m <= n; ++m) {
    double t = static_cast<double>(m - n / 2) / sps - timing_offset;
    double v;
    if (std::abs(t) < 1e-10) {
      v = 1.0 - b + 4.0 * b / kPi;
    } else if (std::abs(std::abs(t) - 1.0 / (4.0 * b)) < 1e-10) {
      v = b / std::numbers::sqrt2 *
          ((1.0 + 2.0 / kPi) * std::sin(kPi / (4.0 * b)) +
           (1.0 - 2.0 / kPi) * std::cos(kPi / (4.0 * b)));
    } else {
      double denom = kPi * t * (1.0 - 16.0 * b * b * t * t);
      v = (std::sin(kPi * t * (1.0 - b)) + 4.0 * b * t * std::cos(kPi * t * (1.0 + b))) / denom;
    }
    h[static_cast<std::size_t>(m)] = v;
  }
  double energy = 0.0;
  for (double v : h) energy += v * v;
  double scale = std::sqrt(static_cast<double>(sps) / energy);
  for (double& v : h) v *= scale;
  return h;
}

FrameParts synth_frame_parts(ModulationScheme scheme, const ChannelParams& params,
                             std::uint64_t rng_seed) {
  params.validate();
  Rng rng(rng_seed);
  std::vector<cplx> base = shaped_baseband(scheme, params, rng);

  FrameParts parts;
  for (IQFrame* f : {&parts.signal, &parts.noise}) {
    f->label = scheme;
    f->snr_db = static_cast<std::int8_t>(params.snr_db);
  }

  double theta = 0.0;
  for (int k = 0; k < kFrameWidth; ++k) {
    if (params.phase_jitter_std > 0.0) theta += params.phase_jitter_std * rng.gaussian();
    double ang = 2.0 * kPi * params.carrier_offset * k + theta;
    cplx rot{std::cos(ang), std::sin(ang)};
    parts.signal.set_sample(k, params.amplitude * rot * base[static_cast<std::size_t>(k)]);
  }

  // Complex circular Gaussian noise at sigma^2 = 10^(-snr/10) per unit
  // calibrated signal power; the amplitude knob deliberately does not touch
  // it, so A = 0 leaves pure noise.
  double sigma2 = std::pow(10.0, -static_cast<double>(params.snr_db) / 10.0);
  double s = std::sqrt(sigma2 / 2.0);
  for (int k = 0; k < kFrameWidth; ++k)
    parts.noise.set_sample(k, {s * rng.gaussian(), s * rng.gaussian()});
  return parts;
}

IQFrame synth_frame(ModulationScheme scheme, const ChannelParams& params,
                    std::uint64_t rng_seed) {
  FrameParts parts = synth_frame_parts(scheme, params, rng_seed);
  IQFrame frame = parts.signal;
  for (std::size_t i = 0; i < frame.iq.size(); ++i) frame.iq[i] += parts.noise.iq[i];
  return frame;
}

std::vector<ManifestEntry> count_cells(const Dataset& d) {
  std::vector<ManifestEntry> cells;
  for (const IQFrame& f : d.frames) {
    auto it = std::find_if(cells.begin(), cells.end(), [&](const ManifestEntry& e) {
      return e.scheme == f.label && e.snr_db == f.snr_db;
    });
    if (it == cells.end())
      cells.push_back({f.label, f.snr_db, 1});
    else
      ++it->count;
  }
  return cells;
}

bool manifest_ok(const Dataset& d) {
  std::vector<ManifestEntry> actual = count_cells(d);
  std::vector<ManifestEntry> declared;
  for (const ManifestEntry& e : d.manifest)
    if (e.count > 0) declared.push_back(e);
  if (declared.size() != actual.size()) return false;
  for (const ManifestEntry& e : declared) {
    auto it = std::find_if(actual.begin(), actual.end(), [&](const ManifestEntry& a) {
      return a.scheme == e.scheme && a.snr_db == e.snr_db;
    });
    if (it == actual.end() || it->count != e.count) return false;
  }
  return true;
}

Dataset synth_dataset(std::span<const ManifestEntry> spec, std::uint64_t seed,
                      const ChannelParams& base) {
  Dataset d;
  d.seed = seed;
  d.manifest.assign(spec.begin(), spec.end());
  std::uint64_t total = 0;
  for (const ManifestEntry& e : spec) total += e.count;
  d.frames.reserve(total);
  for (std::size_t ei = 0; ei < spec.size(); ++ei) {
    const ManifestEntry& e = spec[ei];
    ChannelParams p = base;
    p.snr_db = e.snr_db;
    p.validate();
    for (std::uint64_t i = 0; i < e.count; ++i) {
      std::uint64_t fs = seed_stream(seed, "sigsynth.frame", ei, i);
      d.frames.push_back(synth_frame(e.scheme, p, fs));
    }
  }
  return d;
}

}  // namespace mp::sigsynth
