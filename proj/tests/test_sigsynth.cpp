#include <doctest.h>

#include <bit>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <vector>

#include "mp/dataset_io.hpp"
#include "mp/errors.hpp"
#include "mp/rng.hpp"
#include "mp/sigsynth.hpp"

using namespace mp;
using namespace mp::sigsynth;

namespace {

std::filesystem::path temp_file(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "mp_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

double signal_power(ModulationScheme s, const ChannelParams& p, int frames,
                    std::uint64_t seed0) {
  double acc = 0.0;
  for (int i = 0; i < frames; ++i) {
    FrameParts parts = synth_frame_parts(s, p, seed_stream(seed0, "pwr", i));
    acc += parts.signal.mean_power();
  }
  return acc / frames;
}

}  // namespace

TEST_SUITE_BEGIN("sigsynth");

TEST_CASE("constellations have unit average power") {
  for (int i = 0; i < kNumSchemes; ++i) {
    auto s = static_cast<ModulationScheme>(i);
    const auto& pts = constellation(s);
    CHECK(pts.size() == (1u << bits_per_symbol(s)));
    double power = 0.0;
    for (auto c : pts) power += std::norm(c);
    CHECK(power / pts.size() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("Gray mapping: nearest neighbours differ in exactly one bit") {
  for (auto s : {ModulationScheme::Qpsk, ModulationScheme::Psk8, ModulationScheme::Pam4,
                 ModulationScheme::Qam16, ModulationScheme::Qam64}) {
    const auto& pts = constellation(s);
    double dmin = 1e30;
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t j = i + 1; j < pts.size(); ++j)
        dmin = std::min(dmin, std::abs(pts[i] - pts[j]));
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t j = i + 1; j < pts.size(); ++j)
        if (std::abs(pts[i] - pts[j]) < dmin + 1e-9)
          CHECK(std::popcount(static_cast<unsigned>(i ^ j)) == 1);
  }
}

TEST_CASE("modulate maps BPSK bits to the real axis") {
  std::vector<std::uint8_t> bits{0, 1, 0};
  SymbolSequence seq = modulate(bits, ModulationScheme::Bpsk);
  REQUIRE(seq.symbols.size() == 3);
  CHECK(seq.symbols[0] == std::complex<double>(1.0, 0.0));
  CHECK(seq.symbols[1] == std::complex<double>(-1.0, 0.0));
  CHECK(seq.symbols[2] == std::complex<double>(1.0, 0.0));
  CHECK(seq.source_bits == bits);
}

TEST_CASE("modulate rejects bad input") {
  std::vector<std::uint8_t> one{1};
  CHECK_THROWS_AS(modulate(one, ModulationScheme::Qpsk), std::invalid_argument);
  std::vector<std::uint8_t> bad{0, 2};
  CHECK_THROWS_AS(modulate(bad, ModulationScheme::Qpsk), std::invalid_argument);
  std::vector<std::uint8_t> pair{1, 1};
  SymbolSequence seq = modulate(pair, ModulationScheme::Qpsk);
  CHECK(std::abs(seq.symbols[0]) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("RRC taps: energy, symmetry and cascaded ISI") {
  const int sps = 8, span = 8;
  std::vector<double> h = rrc_taps(0.35, sps, span);
  REQUIRE(static_cast<int>(h.size()) == span * sps + 1);

  double energy = 0.0;
  for (double v : h) energy += v * v;
  CHECK(energy == doctest::Approx(sps).epsilon(1e-12));

  for (std::size_t m = 0; m < h.size(); ++m)
    CHECK(h[m] == doctest::Approx(h[h.size() - 1 - m]).epsilon(1e-12));

  // h * h is a raised cosine: near zero at nonzero symbol instants. The
  // span-8 truncation leaves residual ISI that peaks at 1.05% of the main
  // tap at the filter edge and stays below 0.3% nearer in.
  std::vector<double> rc(2 * h.size() - 1, 0.0);
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t j = 0; j < h.size(); ++j) rc[i + j] += h[i] * h[j];
  std::size_t center = h.size() - 1;
  double peak = rc[center];
  CHECK(peak > 0.0);
  for (int k = 1; k <= span - 1; ++k) {
    double bound = k <= 3 ? 3e-3 : 1.2e-2;
    CHECK(std::abs(rc[center + static_cast<std::size_t>(k) * sps]) / peak < bound);
    CHECK(std::abs(rc[center - static_cast<std::size_t>(k) * sps]) / peak < bound);
  }
}

TEST_CASE("calibrated signal power is unity for every scheme") {
  ChannelParams p;
  // 700 frames x 16 symbols comfortably exceeds 10^4 symbols.
  for (int i = 0; i < kNumSchemes; ++i) {
    auto s = static_cast<ModulationScheme>(i);
    CAPTURE(scheme_name(s));
    CHECK(signal_power(s, p, 700, 1000 + static_cast<std::uint64_t>(i)) ==
          doctest::Approx(1.0).epsilon(0.01));
  }
}

TEST_CASE("realized SNR tracks the requested level within half a dB") {
  for (int snr : {0, 10, 18}) {
    for (auto s : {ModulationScheme::Qpsk, ModulationScheme::Gfsk}) {
      ChannelParams p;
      p.snr_db = snr;
      double ps = 0.0, pn = 0.0;
      for (int i = 0; i < 150; ++i) {
        FrameParts parts = synth_frame_parts(s, p, seed_stream(55, "snr", i, snr));
        ps += parts.signal.mean_power();
        pn += parts.noise.mean_power();
      }
      double measured = 10.0 * std::log10(ps / pn);
      CAPTURE(scheme_name(s));
      CHECK(std::abs(measured - snr) < 0.5);
    }
  }
}

TEST_CASE("frame equals signal plus noise sample for sample") {
  ChannelParams p;
  p.snr_db = 6;
  for (auto s : {ModulationScheme::Bpsk, ModulationScheme::Cpfsk}) {
    IQFrame frame = synth_frame(s, p, 99);
    FrameParts parts = synth_frame_parts(s, p, 99);
    for (int k = 0; k < kFrameWidth; ++k) {
      CHECK(frame.i_at(k) == parts.signal.i_at(k) + parts.noise.i_at(k));
      CHECK(frame.q_at(k) == parts.signal.q_at(k) + parts.noise.q_at(k));
    }
  }
}

TEST_CASE("zero amplitude leaves pure noise at the configured power") {
  ChannelParams p;
  p.amplitude = 0.0;
  p.snr_db = 0;
  double acc = 0.0;
  for (int i = 0; i < 300; ++i) {
    FrameParts parts = synth_frame_parts(ModulationScheme::Qam16, p, seed_stream(3, "a0", i));
    CHECK(parts.signal.mean_power() == 0.0);
    acc += parts.noise.mean_power();
  }
  CHECK(acc / 300 == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("single BPSK frame at 18 dB has total power near 1 + 10^-1.8") {
  ChannelParams p;
  p.snr_db = 18;
  double expect = 1.0 + std::pow(10.0, -1.8);
  double mean = 0.0;
  const int n = 40;
  for (int i = 0; i < n; ++i)
    mean += synth_frame(ModulationScheme::Bpsk, p, seed_stream(17, "p18", i)).mean_power();
  CHECK(mean / n == doctest::Approx(expect).epsilon(0.2));
}

TEST_CASE("synthesis is deterministic in the seed") {
  ChannelParams p;
  IQFrame a = synth_frame(ModulationScheme::Qam64, p, 1234);
  IQFrame b = synth_frame(ModulationScheme::Qam64, p, 1234);
  IQFrame c = synth_frame(ModulationScheme::Qam64, p, 1235);
  CHECK(same_bits(a, b));
  CHECK(!same_bits(a, c));
}

TEST_CASE("carrier offset rotates the signal term and nothing else") {
  ChannelParams p0;
  ChannelParams p1 = p0;
  p1.carrier_offset = 0.1;
  FrameParts a = synth_frame_parts(ModulationScheme::Psk8, p0, 42);
  FrameParts b = synth_frame_parts(ModulationScheme::Psk8, p1, 42);
  for (int k = 0; k < kFrameWidth; ++k) {
    double ang = 2.0 * std::numbers::pi * 0.1 * k;
    std::complex<double> expect =
        std::complex<double>(a.signal.sample(k)) *
        std::complex<double>(std::cos(ang), std::sin(ang));
    CHECK(b.signal.i_at(k) == doctest::Approx(expect.real()).epsilon(2e-5));
    CHECK(b.signal.q_at(k) == doctest::Approx(expect.imag()).epsilon(2e-5));
    CHECK(b.noise.i_at(k) == a.noise.i_at(k));
    CHECK(b.noise.q_at(k) == a.noise.q_at(k));
  }
}

TEST_CASE("phase jitter keeps the FSK envelope constant") {
  ChannelParams p;
  p.phase_jitter_std = 0.05;
  FrameParts parts = synth_frame_parts(ModulationScheme::Cpfsk, p, 5);
  for (int k = 0; k < kFrameWidth; ++k)
    CHECK(std::abs(std::complex<double>(parts.signal.sample(k))) ==
          doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("channel validation rejects nonsense") {
  ChannelParams p;
  p.rolloff = 0.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = ChannelParams{};
  p.samples_per_symbol = 7;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = ChannelParams{};
  p.amplitude = -1.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = ChannelParams{};
  p.carrier_offset = 0.6;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = ChannelParams{};
  p.timing_error = 0.5;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("synth_dataset fills its manifest deterministically") {
  std::vector<ManifestEntry> spec{
      {ModulationScheme::Bpsk, 18, 5},
      {ModulationScheme::Psk8, 18, 7},
      {ModulationScheme::Bpsk, -20, 3},
  };
  Dataset d = synth_dataset(spec, 77);
  CHECK(d.frames.size() == 15);
  CHECK(d.seed == 77);
  CHECK(manifest_ok(d));
  CHECK(d.frames[0].label == ModulationScheme::Bpsk);
  CHECK(d.frames[0].snr_db == 18);
  CHECK(d.frames[14].snr_db == -20);

  Dataset d2 = synth_dataset(spec, 77);
  REQUIRE(d2.frames.size() == d.frames.size());
  for (std::size_t i = 0; i < d.frames.size(); ++i)
    CHECK(same_bits(d.frames[i], d2.frames[i]));

  Dataset d3 = synth_dataset(spec, 78);
  CHECK(!same_bits(d.frames[0], d3.frames[0]));

  d.frames[3].label = ModulationScheme::Qam16;
  CHECK(!manifest_ok(d));
}

TEST_CASE("MPDS files round-trip bit exactly") {
  std::vector<ManifestEntry> spec{
      {ModulationScheme::Qam16, 10, 4},
      {ModulationScheme::Cpfsk, -8, 2},
  };
  Dataset d = synth_dataset(spec, 31);
  auto path = temp_file("roundtrip.mpds");
  write_dataset(d, path);

  DatasetHeader h = read_dataset_header(path);
  CHECK(h.count == 6);
  CHECK(h.seed == 31);

  Dataset back = read_dataset(path);
  CHECK(back.seed == d.seed);
  REQUIRE(back.frames.size() == d.frames.size());
  for (std::size_t i = 0; i < d.frames.size(); ++i)
    CHECK(same_bits(d.frames[i], back.frames[i]));
  CHECK(manifest_ok(back));
}

TEST_CASE("MPDS reader rejects malformed files") {
  auto good = temp_file("good.mpds");
  Dataset d = synth_dataset(std::vector<ManifestEntry>{{ModulationScheme::Bpsk, 0, 2}}, 5);
  write_dataset(d, good);

  auto read_all = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  std::string bytes = read_all(good);

  auto write_raw = [](const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  };

  auto bad = temp_file("bad.mpds");
  std::string corrupt = bytes;
  corrupt[0] = 'X';
  write_raw(bad, corrupt);
  CHECK_THROWS_AS(read_dataset(bad), FormatError);

  write_raw(bad, bytes.substr(0, bytes.size() - 7));
  CHECK_THROWS_AS(read_dataset(bad), FormatError);

  write_raw(bad, bytes + "junk");
  CHECK_THROWS_AS(read_dataset(bad), FormatError);

  corrupt = bytes;
  corrupt[21] = '\x66';  // scheme id of frame 0
  write_raw(bad, corrupt);
  CHECK_THROWS_AS(read_dataset(bad), FormatError);

  CHECK_THROWS_AS(read_dataset(temp_file("missing.mpds")), FormatError);
}

TEST_SUITE_END();
