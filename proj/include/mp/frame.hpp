#pragma once

#include <array>
#include <complex>
#include <cstdint>

#include "mp/scheme.hpp"

namespace mp {

inline constexpr int kFrameWidth = 128;

/**
 * One received window of 128 complex samples in float32, stored as a 2 x 128
 * raster: row 0 is I, row 1 is Q. This is exactly the classifier input and
 * the unit every file format serializes.
 */
struct IQFrame {
  std::array<float, 2 * kFrameWidth> iq{};
  ModulationScheme label = ModulationScheme::Bpsk;
  std::int8_t snr_db = 0;

  float i_at(int k) const { return iq[static_cast<std::size_t>(k)]; }
  float q_at(int k) const { return iq[static_cast<std::size_t>(kFrameWidth + k)]; }
  float& i_at(int k) { return iq[static_cast<std::size_t>(k)]; }
  float& q_at(int k) { return iq[static_cast<std::size_t>(kFrameWidth + k)]; }

  std::complex<float> sample(int k) const { return {i_at(k), q_at(k)}; }
  void set_sample(int k, std::complex<double> v) {
    i_at(k) = static_cast<float>(v.real());
    q_at(k) = static_cast<float>(v.imag());
  }

  double mean_power() const;
  bool all_finite() const;
};

// Bitwise comparison of the sample payload and metadata.
bool same_bits(const IQFrame& a, const IQFrame& b);

}  // namespace mp
