#include "mp/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "mp/errors.hpp"
#include "mp/rng.hpp"
#include "io_util.hpp"

namespace mp::attack {

namespace {

constexpr char kMagic[5] = {'M', 'P', 'T', 'R', '\x01'};

void check_trigger(const Trigger& t) {
  if (t.size < 1 || t.size > kFrameWidth - 1)
    throw std::invalid_argument("trigger size must be in [1, 127]");
  if (t.offset < 0 || t.offset > kFrameWidth - 1 - t.size)
    throw std::invalid_argument("trigger offset out of range");
  if (t.payload_i.size() != static_cast<std::size_t>(t.size) ||
      t.payload_q.size() != static_cast<std::size_t>(t.size))
    throw std::invalid_argument("trigger payload length mismatch");
}

}  // namespace

std::vector<float> Trigger::full_i() const {
  std::vector<float> v(kFrameWidth, 0.0f);
  for (int k = 0; k < size; ++k) v[static_cast<std::size_t>(offset + k)] = payload_i[static_cast<std::size_t>(k)];
  return v;
}

std::vector<float> Trigger::full_q() const {
  std::vector<float> v(kFrameWidth, 0.0f);
  for (int k = 0; k < size; ++k) v[static_cast<std::size_t>(offset + k)] = payload_q[static_cast<std::size_t>(k)];
  return v;
}

Trigger make_trigger(int size, Trigger::Dist dist, double scale, std::uint64_t seed) {
  if (size < 1 || size > kFrameWidth - 1)
    throw std::invalid_argument("trigger size must be in [1, 127]");
  if (!(scale >= 0.0) || !std::isfinite(scale))
    throw std::invalid_argument("trigger scale must be finite and >= 0");

  Rng rng(seed_stream(seed, "attack.trigger"));
  Trigger t;
  t.size = size;
  t.dist = dist;
  t.offset = static_cast<int>(rng.index(static_cast<std::uint32_t>(kFrameWidth - size)));
  t.payload_i.resize(static_cast<std::size_t>(size));
  t.payload_q.resize(static_cast<std::size_t>(size));
  const double half_width = scale * std::sqrt(3.0);  // matches the normal variance
  for (int k = 0; k < size; ++k) {
    double i, q;
    if (dist == Trigger::Dist::Normal) {
      i = scale * rng.gaussian();
      q = scale * rng.gaussian();
    } else {
      i = rng.uniform(-half_width, half_width);
      q = rng.uniform(-half_width, half_width);
    }
    t.payload_i[static_cast<std::size_t>(k)] = static_cast<float>(i);
    t.payload_q[static_cast<std::size_t>(k)] = static_cast<float>(q);
  }
  return t;
}

Trigger scale_trigger(const Trigger& t, float gain) {
  check_trigger(t);
  Trigger out = t;
  for (auto& v : out.payload_i) v *= gain;
  for (auto& v : out.payload_q) v *= gain;
  return out;
}

void write_trigger(const Trigger& t, const std::filesystem::path& path) {
  check_trigger(t);
  io::Writer w(path);
  w.bytes(kMagic, sizeof kMagic);
  w.u32(static_cast<std::uint32_t>(t.size));
  w.u32(static_cast<std::uint32_t>(t.offset));
  w.u8(static_cast<std::uint8_t>(t.dist));
  for (float v : t.payload_i) w.f32(v);
  for (float v : t.payload_q) w.f32(v);
  if (!w.out) io::fail(path, "write failed");
}

Trigger read_trigger(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic(kMagic, sizeof kMagic);
  const std::uint32_t s = r.u32();
  const std::uint32_t j = r.u32();
  if (s < 1 || s > static_cast<std::uint32_t>(kFrameWidth - 1))
    io::fail(path, "trigger size out of range");
  if (j > static_cast<std::uint32_t>(kFrameWidth - 1) - s)
    io::fail(path, "trigger offset out of range");
  const std::uint8_t tag = r.u8();
  if (tag > 1) io::fail(path, "unknown distribution tag");

  Trigger t;
  t.size = static_cast<int>(s);
  t.offset = static_cast<int>(j);
  t.dist = static_cast<Trigger::Dist>(tag);
  t.payload_i.resize(s);
  t.payload_q.resize(s);
  for (auto& v : t.payload_i) v = r.f32();
  for (auto& v : t.payload_q) v = r.f32();
  if (!r.at_eof()) io::fail(path, "trailing bytes");
  return t;
}

IQFrame patch(const IQFrame& frame, const Trigger& trig, bool resample_offset,
              std::uint64_t seed) {
  check_trigger(trig);
  int j = trig.offset;
  if (resample_offset) {
    Rng rng(seed);
    j = static_cast<int>(rng.index(static_cast<std::uint32_t>(kFrameWidth - trig.size)));
  }
  IQFrame out = frame;
  for (int k = 0; k < trig.size; ++k) {
    out.i_at(j + k) += trig.payload_i[static_cast<std::size_t>(k)];
    out.q_at(j + k) += trig.payload_q[static_cast<std::size_t>(k)];
  }
  return out;
}

std::vector<int> pair_sources_to_targets(const net::MatF& v1, const net::MatF& v2,
                                         Pairing mode) {
  if (v1.rows() != v2.rows() || v1.cols() != v2.cols())
    throw std::invalid_argument("feature matrices must have matching shapes");
  const int n = static_cast<int>(v1.cols());
  std::vector<int> a(static_cast<std::size_t>(n));
  if (mode == Pairing::Index) {
    for (int k = 0; k < n; ++k) a[static_cast<std::size_t>(k)] = k;
    return a;
  }

  Eigen::MatrixXd d2(n, n);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      d2(k, j) = (v1.col(k) - v2.col(j)).cast<double>().squaredNorm();

  std::vector<char> src_used(static_cast<std::size_t>(n), 0);
  std::vector<char> tgt_used(static_cast<std::size_t>(n), 0);
  for (int round = 0; round < n; ++round) {
    int bk = -1, bj = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k) {
      if (src_used[static_cast<std::size_t>(k)]) continue;
      for (int j = 0; j < n; ++j) {
        if (tgt_used[static_cast<std::size_t>(j)]) continue;
        if (d2(k, j) < best) {
          best = d2(k, j);
          bk = k;
          bj = j;
        }
      }
    }
    a[static_cast<std::size_t>(bk)] = bj;
    src_used[static_cast<std::size_t>(bk)] = 1;
    tgt_used[static_cast<std::size_t>(bj)] = 1;
  }
  return a;
}

namespace {

// y_target + p with one float rounding per entry, then nudged back onto the
// exact |y_p - y_target| <= delta box (the rounding can overshoot by ulps).
IQFrame materialize_poison(const IQFrame& target, const net::MatF& p, double delta) {
  IQFrame out = target;
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < kFrameWidth; ++c) {
      const std::size_t idx = static_cast<std::size_t>(r * kFrameWidth + c);
      const float t = target.iq[idx];
      float y = t + p(r, c);
      while (static_cast<double>(y) - static_cast<double>(t) > delta)
        y = std::nextafterf(y, -std::numeric_limits<float>::infinity());
      while (static_cast<double>(t) - static_cast<double>(y) > delta)
        y = std::nextafterf(y, std::numeric_limits<float>::infinity());
      out.iq[idx] = y;
    }
  }
  return out;
}

void check_poison_config(const PoisonConfig& cfg) {
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr))
    throw std::invalid_argument("lr must be positive");
  if (cfg.num_iter < 0) throw std::invalid_argument("num_iter must be >= 0");
  if (!(cfg.delta > 0.0) || !std::isfinite(cfg.delta))
    throw std::invalid_argument("delta must be positive");
  if (cfg.tau_rel < 0.0 || cfg.tau_abs < 0.0)
    throw std::invalid_argument("stopping thresholds must be >= 0");
  if (cfg.lr_patience < 1) throw std::invalid_argument("lr_patience must be >= 1");
  if (!(cfg.lr_decay > 0.0) || cfg.lr_decay > 1.0)
    throw std::invalid_argument("lr_decay must be in (0, 1]");
  if (cfg.stop_patience < 0) throw std::invalid_argument("stop_patience must be >= 0");
  if (cfg.trace_stride < 1) throw std::invalid_argument("trace_stride must be >= 1");
}

}  // namespace

PoisonBatchResult poison(const net::Model& model, std::span<const IQFrame> sources,
                         std::span<const IQFrame> targets, const Trigger& trig,
                         const PoisonConfig& cfg) {
  check_trigger(trig);
  check_poison_config(cfg);
  if (sources.size() != targets.size())
    throw std::invalid_argument("sources and targets must pair up one to one");

  const int n = static_cast<int>(sources.size());
  PoisonBatchResult res;
  if (n == 0) return res;

  res.patched_sources.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k)
    res.patched_sources.push_back(patch(sources[static_cast<std::size_t>(k)], trig,
                                        cfg.resample_offsets,
                                        seed_stream(cfg.seed, "attack.patch",
                                                    static_cast<std::uint64_t>(k))));

  const net::MatF v1 = net::features(model, res.patched_sources);
  const net::MatF v2 = net::features(model, targets);
  res.assignment = pair_sources_to_targets(v1, v2, cfg.pairing);

  res.initial_loss.assign(static_cast<std::size_t>(n), 0.0);
  res.final_loss.assign(static_cast<std::size_t>(n), 0.0);
  res.iters_run.assign(static_cast<std::size_t>(n), 0);
  res.traces.resize(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) res.traces[static_cast<std::size_t>(k)].pair_id = k;

  const float clip = static_cast<float>(cfg.delta * (1.0 - 1e-3));
  std::vector<net::MatF> p(static_cast<std::size_t>(n),
                           net::MatF::Zero(2, kFrameWidth));
  std::vector<double> lr(static_cast<std::size_t>(n), cfg.lr);
  std::vector<double> best(static_cast<std::size_t>(n),
                           std::numeric_limits<double>::infinity());
  std::vector<double> tau(static_cast<std::size_t>(n), 0.0);
  std::vector<int> lr_flat(static_cast<std::size_t>(n), 0);
  std::vector<int> stop_flat(static_cast<std::size_t>(n), 0);
  std::vector<char> active(static_cast<std::size_t>(n), 1);
  int n_active = n;

  std::vector<int> batch_ids;
  std::vector<IQFrame> batch;
  for (int iter = 0; iter <= cfg.num_iter && n_active > 0; ++iter) {
    batch_ids.clear();
    batch.clear();
    for (int k = 0; k < n; ++k) {
      if (!active[static_cast<std::size_t>(k)]) continue;
      batch_ids.push_back(k);
      const IQFrame& yt = targets[static_cast<std::size_t>(
          res.assignment[static_cast<std::size_t>(k)])];
      IQFrame f = yt;
      const net::MatF& pk = p[static_cast<std::size_t>(k)];
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < kFrameWidth; ++c)
          f.iq[static_cast<std::size_t>(r * kFrameWidth + c)] += pk(r, c);
      batch.push_back(f);
    }

    net::MatF ref(v1.rows(), static_cast<Eigen::Index>(batch_ids.size()));
    for (std::size_t b = 0; b < batch_ids.size(); ++b)
      ref.col(static_cast<Eigen::Index>(b)) = v1.col(batch_ids[b]);
    const net::PullResult pull = net::feature_pull(model, batch, ref);

    for (std::size_t b = 0; b < batch_ids.size(); ++b) {
      const int k = batch_ids[b];
      const std::size_t ku = static_cast<std::size_t>(k);
      const double loss = pull.loss[b];
      if (!std::isfinite(loss))
        throw DivergenceError("feature-collision loss diverged at pair " +
                              std::to_string(k) + ", iteration " +
                              std::to_string(iter));
      if (iter == 0) {
        res.initial_loss[ku] = loss;
        tau[ku] = std::max(cfg.tau_rel * loss, cfg.tau_abs);
      }
      if (iter % cfg.trace_stride == 0)
        res.traces[ku].points.emplace_back(iter, static_cast<float>(loss));

      // Patience counters reset only on a material (0.01% relative) drop;
      // sub-epsilon jitter around a clamp-saturated point must not keep a
      // frozen pair alive past stop_patience.
      const bool material = loss < best[ku] * (1.0 - 1e-4);
      if (loss < best[ku]) best[ku] = loss;
      if (material) {
        lr_flat[ku] = 0;
        stop_flat[ku] = 0;
      } else {
        ++lr_flat[ku];
        ++stop_flat[ku];
      }

      const bool converged = loss <= tau[ku];
      const bool exhausted = iter == cfg.num_iter;
      const bool stalled =
          cfg.stop_patience > 0 && stop_flat[ku] >= cfg.stop_patience;
      if (converged || exhausted || stalled) {
        active[ku] = 0;
        res.iters_run[ku] = iter;
        --n_active;
        continue;
      }
      if (lr_flat[ku] >= cfg.lr_patience) {
        lr[ku] *= cfg.lr_decay;
        lr_flat[ku] = 0;
      }

      net::MatF& pk = p[ku];
      pk.noalias() -= static_cast<float>(lr[ku]) * pull.dx[b];
      pk = pk.cwiseMax(-clip).cwiseMin(clip);
    }

    if (cfg.verbose && iter % 500 == 0) {
      double mean = 0.0;
      for (double l : pull.loss) mean += l;
      if (!pull.loss.empty()) mean /= static_cast<double>(pull.loss.size());
      std::cerr << "poison iter " << iter << ": " << n_active << "/" << n
                << " pairs active, mean loss " << mean << "\n";
    }
  }

  res.poisoned.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const IQFrame& yt = targets[static_cast<std::size_t>(
        res.assignment[static_cast<std::size_t>(k)])];
    res.poisoned.push_back(
        materialize_poison(yt, p[static_cast<std::size_t>(k)], cfg.delta));
  }
  const net::PullResult fin = net::feature_pull(model, res.poisoned, v1);
  for (int k = 0; k < n; ++k) {
    const std::size_t ku = static_cast<std::size_t>(k);
    res.final_loss[ku] = fin.loss[ku];
    res.traces[ku].points.emplace_back(res.iters_run[ku],
                                       static_cast<float>(fin.loss[ku]));
  }
  return res;
}

void write_loss_traces_csv(const PoisonBatchResult& result,
                           const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) io::fail(path, "cannot open for writing");
  out << "pair_id,iter,loss\n";
  out << std::setprecision(9);
  for (const PairTrace& tr : result.traces)
    for (const auto& [iter, loss] : tr.points)
      out << tr.pair_id << ',' << iter << ',' << loss << '\n';
  if (!out) io::fail(path, "write failed");
}

IQFrame rotate_trojan(const IQFrame& frame, double beta) {
  const double c = std::cos(beta);
  const double s = std::sin(beta);
  IQFrame out = frame;
  for (int k = 0; k < kFrameWidth; ++k) {
    const double i = frame.i_at(k);
    const double q = frame.q_at(k);
    out.i_at(k) = static_cast<float>(c * i - s * q);
    out.q_at(k) = static_cast<float>(s * i + c * q);
  }
  return out;
}

std::vector<IQFrame> rotate_trojan(std::span<const IQFrame> frames, double beta) {
  std::vector<IQFrame> out;
  out.reserve(frames.size());
  for (const IQFrame& f : frames) out.push_back(rotate_trojan(f, beta));
  return out;
}

namespace {

void check_composition(const Composition& comp) {
  if (comp.n_poisoned < 0 || comp.n_clean_target < 0 || comp.n_clean_source < 0)
    throw std::invalid_argument("composition counts must be >= 0");
  if (comp.source == comp.target)
    throw std::invalid_argument("source and target class must differ");
}

AssembledDataset assemble(const sigsynth::Dataset& clean,
                          std::span<const IQFrame> poisoned,
                          const Composition& comp, std::uint64_t shuffle_seed) {
  if (poisoned.size() < static_cast<std::size_t>(comp.n_poisoned))
    throw std::invalid_argument(
        "poison pool too small: need " + std::to_string(comp.n_poisoned) +
        ", have " + std::to_string(poisoned.size()));

  std::vector<const IQFrame*> tgt, src;
  for (const IQFrame& f : clean.frames) {
    if (f.label == comp.target) tgt.push_back(&f);
    else if (f.label == comp.source) src.push_back(&f);
  }
  if (tgt.size() < static_cast<std::size_t>(comp.n_clean_target))
    throw std::invalid_argument(
        "clean target pool too small: need " + std::to_string(comp.n_clean_target) +
        ", have " + std::to_string(tgt.size()));
  if (src.size() < static_cast<std::size_t>(comp.n_clean_source))
    throw std::invalid_argument(
        "clean source pool too small: need " + std::to_string(comp.n_clean_source) +
        ", have " + std::to_string(src.size()));

  AssembledDataset out;
  auto& frames = out.data.frames;
  frames.reserve(static_cast<std::size_t>(comp.n_poisoned + comp.n_clean_target +
                                          comp.n_clean_source));
  for (int k = 0; k < comp.n_poisoned; ++k) {
    IQFrame f = poisoned[static_cast<std::size_t>(k)];
    f.label = comp.target;
    frames.push_back(f);
    out.poisoned_flag.push_back(1);
  }
  for (int k = 0; k < comp.n_clean_target; ++k) {
    frames.push_back(*tgt[static_cast<std::size_t>(k)]);
    out.poisoned_flag.push_back(0);
  }
  for (int k = 0; k < comp.n_clean_source; ++k) {
    frames.push_back(*src[static_cast<std::size_t>(k)]);
    out.poisoned_flag.push_back(0);
  }

  Rng rng(seed_stream(shuffle_seed, "attack.assemble"));
  for (std::size_t i = frames.size(); i > 1; --i) {
    const std::size_t j = rng.index(static_cast<std::uint32_t>(i));
    std::swap(frames[i - 1], frames[j]);
    std::swap(out.poisoned_flag[i - 1], out.poisoned_flag[j]);
  }
  out.data.seed = shuffle_seed;
  out.data.manifest = sigsynth::count_cells(out.data);
  return out;
}

}  // namespace

AssembledDataset assemble_poisoned_dataset(const sigsynth::Dataset& clean,
                                           const PoisonBatchResult& result,
                                           const Composition& comp,
                                           std::uint64_t shuffle_seed) {
  check_composition(comp);
  if (result.poisoned.size() >= static_cast<std::size_t>(comp.n_poisoned))
    for (int k = 0; k < comp.n_poisoned; ++k)
      if (result.poisoned[static_cast<std::size_t>(k)].label != comp.target)
        throw std::invalid_argument(
            "poison result labels differ from the composition target class");
  return assemble(clean, result.poisoned, comp, shuffle_seed);
}

AssembledDataset assemble_trojan_dataset(const sigsynth::Dataset& clean,
                                         std::span<const IQFrame> rotated_sources,
                                         const Composition& comp,
                                         std::uint64_t shuffle_seed) {
  check_composition(comp);
  return assemble(clean, rotated_sources, comp, shuffle_seed);
}

}  // namespace mp::attack
