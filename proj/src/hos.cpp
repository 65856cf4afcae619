#include "mp/hos.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <iomanip>
#include <stdexcept>
#include <vector>

#include "io_util.hpp"

namespace mp::hos {

CumulantSet estimate_cumulants(std::span<const std::complex<double>> samples) {
  if (samples.empty()) throw std::invalid_argument("cumulants need at least one sample");

  std::complex<double> m20{}, m40{}, m41{};
  double m21 = 0.0, m42 = 0.0;
  for (const std::complex<double>& y : samples) {
    const std::complex<double> y2 = y * y;
    const double p = std::norm(y);
    m20 += y2;
    m21 += p;
    m40 += y2 * y2;
    m41 += y2 * p;  // y^3 y* = y^2 |y|^2
    m42 += p * p;
  }
  const double n = static_cast<double>(samples.size());
  m20 /= n;
  m21 /= n;
  m40 /= n;
  m41 /= n;
  m42 /= n;

  CumulantSet c;
  c.c20 = m20;
  c.c21 = m21;
  c.c40 = m40 - 3.0 * m20 * m20;
  c.c41 = m41 - 3.0 * m20 * m21;
  c.c42 = m42 - std::norm(m20) - 2.0 * m21 * m21;
  if (!(c.c21 > 0.0))
    throw std::invalid_argument("cumulants undefined for all-zero samples");
  const double s = c.c21 * c.c21;
  c.n40 = c.c40 / s;
  c.n41 = c.c41 / s;
  c.n42 = c.c42 / s;
  return c;
}

namespace {

void collect_symbol_samples(const IQFrame& frame, int stride, int phase,
                            std::vector<std::complex<double>>& out) {
  for (int k = phase; k < kFrameWidth; k += stride)
    out.emplace_back(static_cast<double>(frame.i_at(k)),
                     static_cast<double>(frame.q_at(k)));
}

void check_sampling(int stride, int phase) {
  if (stride < 1 || stride > kFrameWidth)
    throw std::invalid_argument("stride must be in [1, 128]");
  if (phase < 0 || phase >= stride)
    throw std::invalid_argument("phase must be in [0, stride)");
}

}  // namespace

CumulantSet estimate_cumulants(std::span<const IQFrame> frames, int stride, int phase) {
  check_sampling(stride, phase);
  if (frames.empty()) throw std::invalid_argument("cumulants need at least one frame");
  std::vector<std::complex<double>> samples;
  samples.reserve(frames.size() * static_cast<std::size_t>(kFrameWidth / stride + 1));
  for (const IQFrame& f : frames) collect_symbol_samples(f, stride, phase, samples);
  return estimate_cumulants(samples);
}

PrototypeTable PrototypeTable::standard() {
  PrototypeTable t;
  t.entries = {
      {ModulationScheme::Bpsk, 2.0, -2.0},
      {ModulationScheme::Qpsk, 1.0, -1.0},
      {ModulationScheme::Psk8, 0.0, -1.0},
      {ModulationScheme::Pam4, 34.0 / 25.0, -34.0 / 25.0},
      {ModulationScheme::Qam16, 17.0 / 25.0, -17.0 / 25.0},
      {ModulationScheme::Qam64, 13.0 / 21.0, -13.0 / 21.0},
  };
  return t;
}

ModulationScheme nearest_prototype(const PrototypeTable& table, double c40_mag,
                                   double c42) {
  if (table.entries.empty()) throw std::invalid_argument("empty prototype table");
  ModulationScheme best = table.entries.front().scheme;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (const Prototype& p : table.entries) {
    const double da = c40_mag - p.c40_mag;
    const double db = c42 - p.c42;
    const double d2 = da * da + db * db;
    if (d2 < best_d2) {
      best_d2 = d2;
      best = p.scheme;
    }
  }
  return best;
}

ModulationScheme classify_hos(std::span<const IQFrame> frames,
                              const PrototypeTable& table, int stride, int phase) {
  const CumulantSet c = estimate_cumulants(frames, stride, phase);
  return nearest_prototype(table, std::abs(c.n40), c.n42);
}

AuditReport audit_labels(const sigsynth::Dataset& dataset, const PrototypeTable& table,
                         const AuditConfig& cfg) {
  check_sampling(cfg.stride, cfg.phase);
  if (cfg.group_size < 1) throw std::invalid_argument("group_size must be >= 1");

  const auto& frames = dataset.frames;
  AuditReport report;
  report.rows.resize(frames.size());

  // Frames grouped within their class, in first-seen label order.
  std::vector<ModulationScheme> order;
  std::vector<std::vector<int>> buckets;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const ModulationScheme l = frames[i].label;
    std::size_t b = 0;
    while (b < order.size() && order[b] != l) ++b;
    if (b == order.size()) {
      order.push_back(l);
      buckets.emplace_back();
    }
    buckets[b].push_back(static_cast<int>(i));
  }

  struct Chunk {
    const int* ids;
    int count;
  };
  std::vector<Chunk> chunks;
  for (const auto& bucket : buckets)
    for (std::size_t at = 0; at < bucket.size(); at += static_cast<std::size_t>(cfg.group_size))
      chunks.push_back({bucket.data() + at,
                        static_cast<int>(std::min<std::size_t>(
                            static_cast<std::size_t>(cfg.group_size),
                            bucket.size() - at))});

#pragma omp parallel for schedule(static)
  for (std::size_t ci = 0; ci < chunks.size(); ++ci) {
    const Chunk& ch = chunks[ci];
    std::vector<std::complex<double>> samples;
    samples.reserve(static_cast<std::size_t>(ch.count) *
                    static_cast<std::size_t>(kFrameWidth / cfg.stride + 1));
    for (int k = 0; k < ch.count; ++k)
      collect_symbol_samples(frames[static_cast<std::size_t>(ch.ids[k])], cfg.stride,
                             cfg.phase, samples);
    const CumulantSet c = estimate_cumulants(samples);
    const double mag = std::abs(c.n40);
    const ModulationScheme hos_label = nearest_prototype(table, mag, c.n42);
    for (int k = 0; k < ch.count; ++k) {
      AuditRow& row = report.rows[static_cast<std::size_t>(ch.ids[k])];
      row.frame_id = ch.ids[k];
      row.dataset_label = frames[static_cast<std::size_t>(ch.ids[k])].label;
      row.hos_label = hos_label;
      row.mismatch = hos_label != row.dataset_label;
      row.c40_mag = mag;
      row.c42 = c.n42;
    }
  }

  for (std::size_t b = 0; b < order.size(); ++b) {
    ClassStat stat;
    stat.label = order[b];
    for (int id : buckets[b]) {
      ++stat.frames;
      stat.mismatches += report.rows[static_cast<std::size_t>(id)].mismatch;
    }
    stat.rate = stat.frames > 0
                    ? static_cast<double>(stat.mismatches) / static_cast<double>(stat.frames)
                    : 0.0;
    report.per_class.push_back(stat);
  }
  return report;
}

void write_audit_csv(const AuditReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) io::fail(path, "cannot open for writing");
  out << "frame_id,dataset_label,hos_label,mismatch,C40_mag,C42_real\n";
  out << std::setprecision(12);
  for (const AuditRow& r : report.rows)
    out << r.frame_id << ',' << scheme_name(r.dataset_label) << ','
        << scheme_name(r.hos_label) << ',' << (r.mismatch ? 1 : 0) << ',' << r.c40_mag
        << ',' << r.c42 << '\n';
  if (!out) io::fail(path, "write failed");
}

}  // namespace mp::hos
