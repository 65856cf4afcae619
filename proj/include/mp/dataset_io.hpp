#pragma once

#include <cstdint>
#include <filesystem>

#include "mp/sigsynth.hpp"

namespace mp::sigsynth {

struct DatasetHeader {
  std::uint64_t count = 0;
  std::uint64_t seed = 0;
};

/**
 * MPDS v1 container, little endian throughout:
 *   magic "MPDS\x01" | u64 frame count | u64 seed |
 *   per frame: u8 scheme id | i8 snr | 256 x f32 (128 I then 128 Q)
 * Round-trips are bit exact. Readers throw FormatError on bad magic,
 * truncation, trailing bytes or unknown scheme ids.
 */
void write_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

// Header only; cheap existence and shape probe for caching.
DatasetHeader read_dataset_header(const std::filesystem::path& path);

}  // namespace mp::sigsynth
