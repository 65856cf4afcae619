#include "mp/dataset_io.hpp"

#include "io_util.hpp"

namespace mp::sigsynth {

namespace {
constexpr char kMagic[5] = {'M', 'P', 'D', 'S', '\x01'};
}

void write_dataset(const Dataset& d, const std::filesystem::path& path) {
  io::Writer w(path);
  w.bytes(kMagic, sizeof(kMagic));
  w.u64(d.frames.size());
  w.u64(d.seed);
  for (const IQFrame& f : d.frames) {
    w.u8(static_cast<std::uint8_t>(f.label));
    w.i8(f.snr_db);
    for (float v : f.iq) w.f32(v);
  }
  if (!w.out) io::fail(path, "write failed");
}

Dataset read_dataset(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic(kMagic, sizeof(kMagic));
  Dataset d;
  std::uint64_t count = r.u64();
  d.seed = r.u64();
  d.frames.resize(count);
  for (IQFrame& f : d.frames) {
    std::uint8_t id = r.u8();
    if (id >= kNumSchemes) io::fail(path, "unknown scheme id " + std::to_string(id));
    f.label = static_cast<ModulationScheme>(id);
    f.snr_db = r.i8();
    for (float& v : f.iq) v = r.f32();
  }
  if (!r.at_eof()) io::fail(path, "trailing bytes after last frame");
  d.manifest = count_cells(d);
  return d;
}

DatasetHeader read_dataset_header(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic(kMagic, sizeof(kMagic));
  DatasetHeader h;
  h.count = r.u64();
  h.seed = r.u64();
  return h;
}

}  // namespace mp::sigsynth
