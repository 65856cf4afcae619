#pragma once

#include <filesystem>

#include "mp/net.hpp"

namespace mp::net {

/**
 * MPNN v1 checkpoint, little endian:
 *   magic "MPNN" | u32 version (1) | u32 tensor count (8) |
 *   per tensor: u8 rank | rank x u32 dims | row-major f32 payload |
 *   u32 CRC32 of every preceding byte.
 * Tensor order: w1 (c1,3), b1, w2 (c2,c1,2,3), b2, wd1 (dense, c2*128),
 * bd1, wd2 (classes, dense), bd2. Round-trips are bit exact; readers throw
 * FormatError on bad magic, shape inconsistencies or checksum mismatch.
 */
void save_model(const Model& m, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace mp::net
