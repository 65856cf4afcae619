#include "mp/scheme.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace mp {
namespace {

using cplx = std::complex<double>;

unsigned gray(unsigned v) { return v ^ (v >> 1); }

double snap(double v) { return std::abs(v) < 1e-12 ? 0.0 : v; }

// Phase position p carries the bit pattern gray(p), so walking the circle
// flips one bit per step.
std::vector<cplx> psk(int m, double rotation) {
  std::vector<cplx> pts(static_cast<std::size_t>(m));
  for (int p = 0; p < m; ++p) {
    double ang = 2.0 * std::numbers::pi * p / m + rotation;
    pts[gray(static_cast<unsigned>(p))] = {snap(std::cos(ang)), snap(std::sin(ang))};
  }
  return pts;
}

// Amplitude levels in natural order get Gray-coded bit patterns per axis.
std::vector<double> gray_levels(int m) {
  std::vector<double> lv(static_cast<std::size_t>(m));
  double power = 0.0;
  for (int p = 0; p < m; ++p) {
    double level = 2.0 * p - (m - 1);
    lv[gray(static_cast<unsigned>(p))] = level;
    power += level * level;
  }
  double scale = std::sqrt(power / m);
  for (double& v : lv) v /= scale;
  return lv;
}

std::vector<cplx> square_qam(int bits_per_axis) {
  int m = 1 << bits_per_axis;
  // Per-axis normalization of an independent-axis grid gives unit total
  // power: E|s|^2 = E[I^2] + E[Q^2] = 1/2 + 1/2 once levels are scaled by
  // sqrt(2).
  std::vector<double> axis = gray_levels(m);
  for (double& v : axis) v /= std::numbers::sqrt2;
  std::vector<cplx> pts(static_cast<std::size_t>(m * m));
  for (int vi = 0; vi < m; ++vi)
    for (int vq = 0; vq < m; ++vq)
      pts[static_cast<std::size_t>((vi << bits_per_axis) | vq)] = {axis[vi], axis[vq]};
  return pts;
}

std::vector<cplx> pam(int m) {
  std::vector<double> axis = gray_levels(m);
  std::vector<cplx> pts(axis.size());
  for (std::size_t i = 0; i < axis.size(); ++i) pts[i] = {axis[i], 0.0};
  return pts;
}

std::vector<cplx> fsk_symbols() { return {cplx(1.0, 0.0), cplx(-1.0, 0.0)}; }

}  // namespace

bool is_linear(ModulationScheme scheme) {
  return scheme != ModulationScheme::Cpfsk && scheme != ModulationScheme::Gfsk;
}

int bits_per_symbol(ModulationScheme scheme) {
  switch (scheme) {
    case ModulationScheme::Bpsk: return 1;
    case ModulationScheme::Qpsk: return 2;
    case ModulationScheme::Psk8: return 3;
    case ModulationScheme::Pam4: return 2;
    case ModulationScheme::Qam16: return 4;
    case ModulationScheme::Qam64: return 6;
    case ModulationScheme::Cpfsk: return 1;
    case ModulationScheme::Gfsk: return 1;
  }
  throw std::invalid_argument("bits_per_symbol: bad scheme id");
}

std::string_view scheme_name(ModulationScheme scheme) {
  switch (scheme) {
    case ModulationScheme::Bpsk: return "BPSK";
    case ModulationScheme::Qpsk: return "QPSK";
    case ModulationScheme::Psk8: return "8PSK";
    case ModulationScheme::Pam4: return "PAM4";
    case ModulationScheme::Qam16: return "QAM16";
    case ModulationScheme::Qam64: return "QAM64";
    case ModulationScheme::Cpfsk: return "CPFSK";
    case ModulationScheme::Gfsk: return "GFSK";
  }
  throw std::invalid_argument("scheme_name: bad scheme id");
}

ModulationScheme scheme_from_name(std::string_view name) {
  for (int i = 0; i < kNumSchemes; ++i) {
    auto s = static_cast<ModulationScheme>(i);
    if (name == scheme_name(s)) return s;
  }
  throw std::invalid_argument("unknown modulation scheme: " + std::string(name));
}

const std::vector<cplx>& constellation(ModulationScheme scheme) {
  static const std::vector<cplx> bpsk = psk(2, 0.0);
  static const std::vector<cplx> qpsk = psk(4, std::numbers::pi / 4);
  static const std::vector<cplx> psk8 = psk(8, 0.0);
  static const std::vector<cplx> pam4 = pam(4);
  static const std::vector<cplx> qam16 = square_qam(2);
  static const std::vector<cplx> qam64 = square_qam(3);
  static const std::vector<cplx> fsk = fsk_symbols();
  switch (scheme) {
    case ModulationScheme::Bpsk: return bpsk;
    case ModulationScheme::Qpsk: return qpsk;
    case ModulationScheme::Psk8: return psk8;
    case ModulationScheme::Pam4: return pam4;
    case ModulationScheme::Qam16: return qam16;
    case ModulationScheme::Qam64: return qam64;
    case ModulationScheme::Cpfsk: return fsk;
    case ModulationScheme::Gfsk: return fsk;
  }
  throw std::invalid_argument("constellation: bad scheme id");
}

}  // namespace mp
