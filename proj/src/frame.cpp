#include "mp/frame.hpp"

#include <cmath>
#include <cstring>

namespace mp {

double IQFrame::mean_power() const {
  double acc = 0.0;
  for (int k = 0; k < kFrameWidth; ++k) {
    double i = i_at(k), q = q_at(k);
    acc += i * i + q * q;
  }
  return acc / kFrameWidth;
}

bool IQFrame::all_finite() const {
  for (float v : iq)
    if (!std::isfinite(v)) return false;
  return true;
}

bool same_bits(const IQFrame& a, const IQFrame& b) {
  return a.label == b.label && a.snr_db == b.snr_db &&
         std::memcmp(a.iq.data(), b.iq.data(), sizeof(a.iq)) == 0;
}

}  // namespace mp
