#pragma once

#include <complex>
#include <cstdint>
#include <string_view>
#include <vector>

namespace mp {

// Wire format and file headers rely on these exact numeric values.
enum class ModulationScheme : std::uint8_t {
  Bpsk = 0,
  Qpsk = 1,
  Psk8 = 2,
  Pam4 = 3,
  Qam16 = 4,
  Qam64 = 5,
  Cpfsk = 6,
  Gfsk = 7,
};

inline constexpr int kNumSchemes = 8;

// False for the continuous-phase (FSK) family.
bool is_linear(ModulationScheme scheme);

int bits_per_symbol(ModulationScheme scheme);

std::string_view scheme_name(ModulationScheme scheme);

// Throws std::invalid_argument on unknown names.
ModulationScheme scheme_from_name(std::string_view name);

/**
 * Gray-mapped symbol alphabet, unit average power, indexed by the value of
 * the bit group (MSB first). Adjacent points differ in exactly one bit.
 * The FSK family returns its {+1, -1} frequency symbols.
 */
const std::vector<std::complex<double>>& constellation(ModulationScheme scheme);

}  // namespace mp
