#include "mp/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mp/errors.hpp"

namespace mp::net {
namespace {

constexpr char kMagic[4] = {'M', 'P', 'N', 'N'};
constexpr std::uint32_t kVersion = 1;

struct Sink {
  std::string buf;
  void u8(std::uint8_t v) { buf.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    u32(u);
  }
};

struct Cursor {
  const std::string& buf;
  std::size_t at = 0;
  const std::filesystem::path& path;

  void need(std::size_t n) {
    if (at + n > buf.size())
      throw FormatError(path.string() + ": truncated checkpoint");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[at++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[at + static_cast<std::size_t>(i)])) << (8 * i);
    at += 4;
    return v;
  }
  float f32() {
    std::uint32_t u = u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
};

struct TensorShape {
  std::uint8_t rank;
  std::vector<std::uint32_t> dims;
  std::size_t count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

void write_tensor(Sink& s, const TensorShape& shape, const float* data) {
  s.u8(shape.rank);
  for (auto d : shape.dims) s.u32(d);
  for (std::size_t i = 0; i < shape.count(); ++i) s.f32(data[i]);
}

std::uint32_t crc_of(const std::string& bytes, std::size_t n) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(n)));
}

}  // namespace

void save_model(const Model& m, const std::filesystem::path& path) {
  Sink s;
  s.buf.append(kMagic, sizeof(kMagic));
  s.u32(kVersion);
  s.u32(8);

  const auto c1 = static_cast<std::uint32_t>(m.c1);
  const auto c2 = static_cast<std::uint32_t>(m.c2);
  const auto dd = static_cast<std::uint32_t>(m.dense_dim);
  const auto nc = static_cast<std::uint32_t>(m.num_classes);

  // Row-major copies; Eigen storage is column-major.
  auto mat_row_major = [](const MatF& t) {
    std::vector<float> v(static_cast<std::size_t>(t.size()));
    std::size_t k = 0;
    for (long r = 0; r < t.rows(); ++r)
      for (long c = 0; c < t.cols(); ++c) v[k++] = t(r, c);
    return v;
  };

  std::vector<float> w1 = mat_row_major(m.w1);
  write_tensor(s, {2, {c1, 3}}, w1.data());
  write_tensor(s, {1, {c1}}, m.b1.data());

  std::vector<float> w2(static_cast<std::size_t>(m.c2) * static_cast<std::size_t>(m.c1) * 6);
  std::size_t k = 0;
  for (int oc = 0; oc < m.c2; ++oc)
    for (int ic = 0; ic < m.c1; ++ic)
      for (int h = 0; h < 2; ++h)
        for (int kw = 0; kw < 3; ++kw)
          w2[k++] = m.w2[static_cast<std::size_t>(kw * 2 + h)](oc, ic);
  write_tensor(s, {4, {c2, c1, 2, 3}}, w2.data());
  write_tensor(s, {1, {c2}}, m.b2.data());

  std::vector<float> wd1 = mat_row_major(m.wd1);
  write_tensor(s, {2, {dd, static_cast<std::uint32_t>(m.flat_dim())}}, wd1.data());
  write_tensor(s, {1, {dd}}, m.bd1.data());
  std::vector<float> wd2 = mat_row_major(m.wd2);
  write_tensor(s, {2, {nc, dd}}, wd2.data());
  write_tensor(s, {1, {nc}}, m.bd2.data());

  s.u32(crc_of(s.buf, s.buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path.string() + ": cannot open for writing");
  out.write(s.buf.data(), static_cast<std::streamsize>(s.buf.size()));
  if (!out) throw FormatError(path.string() + ": write failed");
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < sizeof(kMagic) + 12) throw FormatError(path.string() + ": truncated checkpoint");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw FormatError(path.string() + ": bad magic");

  Cursor c{bytes, sizeof(kMagic), path};
  if (c.u32() != kVersion) throw FormatError(path.string() + ": unsupported version");
  if (c.u32() != 8) throw FormatError(path.string() + ": unexpected tensor count");

  auto read_shape = [&c, &path](std::uint8_t want_rank) {
    TensorShape t;
    t.rank = c.u8();
    if (t.rank != want_rank) throw FormatError(path.string() + ": unexpected tensor rank");
    for (int i = 0; i < t.rank; ++i) t.dims.push_back(c.u32());
    for (auto d : t.dims)
      if (d == 0) throw FormatError(path.string() + ": zero tensor dimension");
    return t;
  };
  auto payload = [&c](const TensorShape& t) {
    std::vector<float> v(t.count());
    for (float& x : v) x = c.f32();
    return v;
  };

  TensorShape s_w1 = read_shape(2);
  std::vector<float> w1 = payload(s_w1);
  TensorShape s_b1 = read_shape(1);
  std::vector<float> b1 = payload(s_b1);
  TensorShape s_w2 = read_shape(4);
  std::vector<float> w2 = payload(s_w2);
  TensorShape s_b2 = read_shape(1);
  std::vector<float> b2 = payload(s_b2);
  TensorShape s_wd1 = read_shape(2);
  std::vector<float> wd1 = payload(s_wd1);
  TensorShape s_bd1 = read_shape(1);
  std::vector<float> bd1 = payload(s_bd1);
  TensorShape s_wd2 = read_shape(2);
  std::vector<float> wd2 = payload(s_wd2);
  TensorShape s_bd2 = read_shape(1);
  std::vector<float> bd2 = payload(s_bd2);

  if (c.at + 4 != bytes.size()) throw FormatError(path.string() + ": trailing bytes");
  std::uint32_t want = Cursor{bytes, c.at, path}.u32();
  if (crc_of(bytes, bytes.size() - 4) != want)
    throw FormatError(path.string() + ": checksum mismatch");

  Model m;
  m.c1 = static_cast<int>(s_w1.dims[0]);
  m.c2 = static_cast<int>(s_w2.dims[0]);
  m.dense_dim = static_cast<int>(s_wd1.dims[0]);
  m.num_classes = static_cast<int>(s_wd2.dims[0]);

  bool consistent =
      s_w1.dims[1] == 3 && s_b1.dims[0] == s_w1.dims[0] &&
      s_w2.dims[1] == s_w1.dims[0] && s_w2.dims[2] == 2 && s_w2.dims[3] == 3 &&
      s_b2.dims[0] == s_w2.dims[0] &&
      s_wd1.dims[1] == s_w2.dims[0] * static_cast<std::uint32_t>(kFrameWidth) &&
      s_bd1.dims[0] == s_wd1.dims[0] && s_wd2.dims[1] == s_wd1.dims[0] &&
      s_bd2.dims[0] == s_wd2.dims[0] && s_wd2.dims[0] >= 2;
  if (!consistent) throw FormatError(path.string() + ": inconsistent tensor shapes");

  auto mat_from_row_major = [](const std::vector<float>& v, long rows, long cols) {
    MatF t(rows, cols);
    std::size_t k = 0;
    for (long r = 0; r < rows; ++r)
      for (long cc = 0; cc < cols; ++cc) t(r, cc) = v[k++];
    return t;
  };

  m.w1 = mat_from_row_major(w1, m.c1, 3);
  m.b1 = Eigen::Map<const VecF>(b1.data(), m.c1);
  for (auto& t : m.w2) t.resize(m.c2, m.c1);
  std::size_t k = 0;
  for (int oc = 0; oc < m.c2; ++oc)
    for (int ic = 0; ic < m.c1; ++ic)
      for (int h = 0; h < 2; ++h)
        for (int kw = 0; kw < 3; ++kw)
          m.w2[static_cast<std::size_t>(kw * 2 + h)](oc, ic) = w2[k++];
  m.b2 = Eigen::Map<const VecF>(b2.data(), m.c2);
  m.wd1 = mat_from_row_major(wd1, m.dense_dim, m.flat_dim());
  m.bd1 = Eigen::Map<const VecF>(bd1.data(), m.dense_dim);
  m.wd2 = mat_from_row_major(wd2, m.num_classes, m.dense_dim);
  m.bd2 = Eigen::Map<const VecF>(bd2.data(), m.num_classes);
  return m;
}

}  // namespace mp::net
