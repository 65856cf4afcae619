#include "mp/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>

#include "mp/errors.hpp"
#include "mp/rng.hpp"

namespace mp::net {
namespace {

// Frames processed per GEMM block: the sweet spot between cache footprint
// and dense-layer GEMM width.
constexpr int kBlock = 64;
// Frames per deterministic gradient-accumulation chunk; fixed so results do
// not depend on the worker count.
constexpr int kChunk = 16;

using Eigen::Map;

struct FrameCache {
  Eigen::Matrix<float, 2, Eigen::Dynamic> xpad;  // 2 x 130
  std::array<MatF, 2> z1pad;                     // c1 x 130, edge columns stay zero
  std::array<MatF, 2> mask1;                     // relu indicator x dropout scale
  MatF mask2;
  MatF x3;                                       // 3 x 128 scratch
  MatF pre1, pre2;                               // scratch
  MatF dz1pad, dpre1, dpre2;                     // backward scratch
  Eigen::Matrix<float, 1, Eigen::Dynamic> drow;  // 1 x 130 input-grad scratch

  void ensure(int c1, int c2) {
    if (xpad.cols() == kFrameWidth + 2 && mask2.rows() == c2 && mask1[0].rows() == c1)
      return;
    xpad.setZero(2, kFrameWidth + 2);
    for (auto& z : z1pad) z.setZero(c1, kFrameWidth + 2);
    for (auto& m : mask1) m.resize(c1, kFrameWidth);
    mask2.resize(c2, kFrameWidth);
    x3.resize(3, kFrameWidth);
    pre1.resize(c1, kFrameWidth);
    pre2.resize(c2, kFrameWidth);
    dz1pad.resize(c1, kFrameWidth + 2);
    dpre1.resize(c1, kFrameWidth);
    dpre2.resize(c2, kFrameWidth);
    drow.resize(kFrameWidth + 2);
  }
};

// Folds an inverted-dropout pattern (0 or 2) into an existing mask, one
// generator bit per unit.
void fold_dropout(MatF& mask, Rng& rng) {
  float* d = mask.data();
  const auto n = static_cast<std::size_t>(mask.size());
  std::uint64_t word = 0;
  int left = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (left == 0) {
      word = rng.next_u64();
      left = 64;
    }
    d[i] *= 2.0f * static_cast<float>(word & 1u);
    word >>= 1;
    --left;
  }
}

// Convolutional front half; writes the flattened activation into flat_out
// (width-major: flat[w*c2 + oc]) and fills the cache for any backward pass.
void conv_forward(const Model& m, const IQFrame& frame, FrameCache& c,
                  float* flat_out, Rng* drop) {
  c.ensure(m.c1, m.c2);
  for (int k = 0; k < kFrameWidth; ++k) {
    c.xpad(0, k + 1) = frame.i_at(k);
    c.xpad(1, k + 1) = frame.q_at(k);
  }
  for (int h = 0; h < 2; ++h) {
    for (int kw = 0; kw < 3; ++kw)
      c.x3.row(kw) = c.xpad.row(h).segment(kw, kFrameWidth);
    c.pre1.noalias() = m.w1 * c.x3;
    c.pre1.colwise() += m.b1;
    c.mask1[h] = (c.pre1.array() > 0.0f).cast<float>().matrix();
    if (drop) fold_dropout(c.mask1[h], *drop);
    c.z1pad[h].middleCols(1, kFrameWidth) = c.pre1.cwiseProduct(c.mask1[h]);
  }
  c.pre2.colwise() = m.b2;
  for (int kw = 0; kw < 3; ++kw)
    for (int h = 0; h < 2; ++h)
      c.pre2.noalias() += m.w2[static_cast<std::size_t>(kw * 2 + h)] *
                          c.z1pad[h].middleCols(kw, kFrameWidth);
  c.mask2 = (c.pre2.array() > 0.0f).cast<float>().matrix();
  if (drop) fold_dropout(c.mask2, *drop);
  Map<MatF> z2(flat_out, m.c2, kFrameWidth);
  z2 = c.pre2.cwiseProduct(c.mask2);
}

// Shared tail of the two backward passes: flattened gradient back to the
// second conv pre-activation, then through both convolutions. Exactly one
// of `grads` (parameter mode) or `dx` (input mode) is non-null.
void conv_backward(const Model& m, FrameCache& c, const float* dflat, Grads* grads,
                   MatF* dx) {
  Map<const MatF> dz2(dflat, m.c2, kFrameWidth);
  c.dpre2 = dz2.cwiseProduct(c.mask2);
  if (grads) {
    grads->b2 += c.dpre2.rowwise().sum();
    for (int kw = 0; kw < 3; ++kw)
      for (int h = 0; h < 2; ++h)
        grads->w2[static_cast<std::size_t>(kw * 2 + h)].noalias() +=
            c.dpre2 * c.z1pad[h].middleCols(kw, kFrameWidth).transpose();
  }
  if (dx) dx->setZero(2, kFrameWidth);
  for (int h = 0; h < 2; ++h) {
    c.dz1pad.setZero();
    for (int kw = 0; kw < 3; ++kw)
      c.dz1pad.middleCols(kw, kFrameWidth).noalias() +=
          m.w2[static_cast<std::size_t>(kw * 2 + h)].transpose() * c.dpre2;
    c.dpre1 = c.dz1pad.middleCols(1, kFrameWidth).cwiseProduct(c.mask1[h]);
    if (grads) {
      grads->b1 += c.dpre1.rowwise().sum();
      for (int kw = 0; kw < 3; ++kw)
        grads->w1.col(kw).noalias() +=
            c.dpre1 * c.xpad.row(h).segment(kw, kFrameWidth).transpose();
    }
    if (dx) {
      c.drow.setZero();
      for (int kw = 0; kw < 3; ++kw)
        c.drow.segment(kw, kFrameWidth).noalias() += m.w1.col(kw).transpose() * c.dpre1;
      dx->row(h) = c.drow.segment(1, kFrameWidth);
    }
  }
}

struct BlockWork {
  MatF F;        // flat x B
  MatF Vpre, V;  // dense x B
  MatF logits;   // classes x B
  MatF dV, dF;
  std::vector<FrameCache> caches;

  void ensure(const Model& m, int b) {
    F.resize(m.flat_dim(), b);
    Vpre.resize(m.dense_dim, b);
    logits.resize(m.num_classes, b);
    if (static_cast<int>(caches.size()) < b) caches.resize(static_cast<std::size_t>(b));
  }
};

// Forward of one block. Dropout streams are derived per sample id so the
// result is independent of batching and threading.
void block_forward(const Model& m, const IQFrame* const* frames, int b, BlockWork& w,
                   bool with_logits, const std::uint64_t* drop_seeds) {
  w.ensure(m, b);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < b; ++i) {
    if (drop_seeds) {
      Rng drop(drop_seeds[i]);
      conv_forward(m, *frames[i], w.caches[static_cast<std::size_t>(i)],
                   w.F.col(i).data(), &drop);
    } else {
      conv_forward(m, *frames[i], w.caches[static_cast<std::size_t>(i)],
                   w.F.col(i).data(), nullptr);
    }
  }
  w.Vpre.noalias() = m.wd1 * w.F;
  w.Vpre.colwise() += m.bd1;
  w.V = w.Vpre.cwiseMax(0.0f);
  if (with_logits) {
    w.logits.noalias() = m.wd2 * w.V;
    w.logits.colwise() += m.bd2;
  }
}

// Parameter-gradient backward given dlogits; adds into `g`.
void block_backward_params(const Model& m, BlockWork& w, const MatF& dlogits, Grads& g) {
  const int b = static_cast<int>(dlogits.cols());
  g.wd2.noalias() += dlogits * w.V.transpose();
  g.bd2 += dlogits.rowwise().sum();
  w.dV.noalias() = m.wd2.transpose() * dlogits;
  w.dV = w.dV.cwiseProduct((w.Vpre.array() > 0.0f).cast<float>().matrix());
  g.wd1.noalias() += w.dV * w.F.transpose();
  g.bd1 += w.dV.rowwise().sum();
  w.dF.noalias() = m.wd1.transpose() * w.dV;

  const int nchunks = (b + kChunk - 1) / kChunk;
  std::vector<Grads> partial(static_cast<std::size_t>(nchunks));
  for (auto& p : partial) p = Grads::zeros_like(m);
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < nchunks; ++ch) {
    for (int i = ch * kChunk; i < std::min(b, (ch + 1) * kChunk); ++i)
      conv_backward(m, w.caches[static_cast<std::size_t>(i)], w.dF.col(i).data(),
                    &partial[static_cast<std::size_t>(ch)], nullptr);
  }
  for (const Grads& p : partial) {
    g.w1 += p.w1;
    g.b1 += p.b1;
    for (int k = 0; k < 6; ++k) g.w2[static_cast<std::size_t>(k)] += p.w2[static_cast<std::size_t>(k)];
    g.b2 += p.b2;
  }
}

double softmax_ce(const MatF& logits, std::span<const int> labels, MatF& dlogits,
                  int* correct) {
  const int b = static_cast<int>(logits.cols());
  dlogits.resize(logits.rows(), b);
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    VecF col = logits.col(i);
    float mx = col.maxCoeff();
    VecF e = (col.array() - mx).exp().matrix();
    float denom = e.sum();
    double lse = static_cast<double>(mx) + std::log(static_cast<double>(denom));
    int y = labels[static_cast<std::size_t>(i)];
    total += lse - static_cast<double>(col(y));
    dlogits.col(i) = e / denom;
    dlogits(y, i) -= 1.0f;
    if (correct) {
      int arg = 0;
      col.maxCoeff(&arg);
      if (arg == y) ++*correct;
    }
  }
  dlogits /= static_cast<float>(b);
  return total / b;
}

void fill_gaussian(float* data, long n, float std_dev, Rng& rng) {
  for (long i = 0; i < n; ++i)
    data[i] = std_dev * static_cast<float>(rng.gaussian());
}

// Uniform float*-view over every parameter tensor, in serialization order.
template <typename ModelLike, typename Fn>
void for_each_tensor(ModelLike& m, Fn&& fn) {
  fn(m.w1);
  fn(m.b1);
  for (auto& t : m.w2) fn(t);
  fn(m.b2);
  fn(m.wd1);
  fn(m.bd1);
  fn(m.wd2);
  fn(m.bd2);
}

void check_labels(std::span<const IQFrame> frames, std::span<const int> labels,
                  int num_classes) {
  if (frames.empty()) throw std::invalid_argument("net: empty training set");
  if (frames.size() != labels.size())
    throw std::invalid_argument("net: frame/label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= num_classes)
      throw std::invalid_argument("net: label " + std::to_string(y) + " out of range");
}

}  // namespace

long Model::param_count() const {
  long n = 0;
  for_each_tensor(*this, [&n](const auto& t) { n += static_cast<long>(t.size()); });
  return n;
}

Model Model::init(const Profile& p, int num_classes, std::uint64_t seed) {
  if (p.conv1_filters < 1 || p.conv2_filters < 1 || p.dense_dim < 1 || num_classes < 2)
    throw std::invalid_argument("Model::init: bad profile");
  Model m;
  m.c1 = p.conv1_filters;
  m.c2 = p.conv2_filters;
  m.dense_dim = p.dense_dim;
  m.num_classes = num_classes;
  m.w1.resize(m.c1, 3);
  m.b1.setZero(m.c1);
  for (auto& t : m.w2) t.resize(m.c2, m.c1);
  m.b2.setZero(m.c2);
  m.wd1.resize(m.dense_dim, m.flat_dim());
  m.bd1.setZero(m.dense_dim);
  m.wd2.resize(num_classes, m.dense_dim);
  m.bd2.setZero(num_classes);

  if (!(p.input_gain > 0.0) || !std::isfinite(p.input_gain))
    throw std::invalid_argument("Model::init: bad input_gain");
  Rng r1(seed_stream(seed, "init.w1"));
  fill_gaussian(m.w1.data(), m.w1.size(),
                std::sqrt(2.0f / 3.0f) * static_cast<float>(p.input_gain), r1);
  Rng r2(seed_stream(seed, "init.w2"));
  const float s2 = std::sqrt(2.0f / static_cast<float>(m.c1 * 6));
  for (auto& t : m.w2) fill_gaussian(t.data(), t.size(), s2, r2);
  Rng r3(seed_stream(seed, "init.wd1"));
  fill_gaussian(m.wd1.data(), m.wd1.size(),
                std::sqrt(2.0f / static_cast<float>(m.flat_dim())), r3);
  Rng r4(seed_stream(seed, "init.wd2"));
  fill_gaussian(m.wd2.data(), m.wd2.size(),
                std::sqrt(1.0f / static_cast<float>(m.dense_dim)), r4);
  return m;
}

Grads Grads::zeros_like(const Model& m) {
  Grads g;
  g.w1.setZero(m.c1, 3);
  g.b1.setZero(m.c1);
  for (auto& t : g.w2) t.setZero(m.c2, m.c1);
  g.b2.setZero(m.c2);
  g.wd1.setZero(m.dense_dim, m.flat_dim());
  g.bd1.setZero(m.dense_dim);
  g.wd2.setZero(m.num_classes, m.dense_dim);
  g.bd2.setZero(m.num_classes);
  return g;
}

ForwardOut forward(const Model& m, const IQFrame& frame) {
  BlockWork w;
  const IQFrame* p = &frame;
  block_forward(m, &p, 1, w, true, nullptr);
  return {w.logits.col(0), w.V.col(0)};
}

VecF softmax(const VecF& logits) {
  float mx = logits.maxCoeff();
  VecF e = (logits.array() - mx).exp().matrix();
  return e / e.sum();
}

int classify(const Model& m, const IQFrame& frame) {
  ForwardOut out = forward(m, frame);
  int arg = 0;
  out.logits.maxCoeff(&arg);
  return arg;
}

MatF features(const Model& m, std::span<const IQFrame> frames) {
  MatF out(m.dense_dim, static_cast<long>(frames.size()));
  BlockWork w;
  for (std::size_t at = 0; at < frames.size(); at += kBlock) {
    const int b = static_cast<int>(std::min<std::size_t>(kBlock, frames.size() - at));
    std::vector<const IQFrame*> ptrs(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) ptrs[static_cast<std::size_t>(i)] = &frames[at + static_cast<std::size_t>(i)];
    block_forward(m, ptrs.data(), b, w, false, nullptr);
    out.middleCols(static_cast<long>(at), b) = w.V.leftCols(b);
  }
  return out;
}

std::vector<int> predict(const Model& m, std::span<const IQFrame> frames) {
  std::vector<int> out(frames.size());
  BlockWork w;
  for (std::size_t at = 0; at < frames.size(); at += kBlock) {
    const int b = static_cast<int>(std::min<std::size_t>(kBlock, frames.size() - at));
    std::vector<const IQFrame*> ptrs(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) ptrs[static_cast<std::size_t>(i)] = &frames[at + static_cast<std::size_t>(i)];
    block_forward(m, ptrs.data(), b, w, true, nullptr);
    for (int i = 0; i < b; ++i) {
      int arg = 0;
      w.logits.col(i).maxCoeff(&arg);
      out[at + static_cast<std::size_t>(i)] = arg;
    }
  }
  return out;
}

PullResult feature_pull(const Model& m, std::span<const IQFrame> frames,
                        const MatF& v_ref) {
  if (static_cast<std::size_t>(v_ref.cols()) != frames.size() || v_ref.rows() != m.dense_dim)
    throw std::invalid_argument("feature_pull: reference shape mismatch");
  PullResult res;
  res.features.resize(m.dense_dim, static_cast<long>(frames.size()));
  res.loss.resize(frames.size());
  res.dx.resize(frames.size());
  BlockWork w;
  for (std::size_t at = 0; at < frames.size(); at += kBlock) {
    const int b = static_cast<int>(std::min<std::size_t>(kBlock, frames.size() - at));
    std::vector<const IQFrame*> ptrs(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) ptrs[static_cast<std::size_t>(i)] = &frames[at + static_cast<std::size_t>(i)];
    block_forward(m, ptrs.data(), b, w, false, nullptr);
    res.features.middleCols(static_cast<long>(at), b) = w.V.leftCols(b);

    w.dV.resize(m.dense_dim, b);
    for (int i = 0; i < b; ++i) {
      VecF diff = w.V.col(i) - v_ref.col(static_cast<long>(at) + i);
      res.loss[at + static_cast<std::size_t>(i)] = diff.cast<double>().squaredNorm();
      w.dV.col(i) = 2.0f * diff;
    }
    w.dV = w.dV.cwiseProduct((w.Vpre.leftCols(b).array() > 0.0f).cast<float>().matrix());
    w.dF.noalias() = m.wd1.transpose() * w.dV;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < b; ++i)
      conv_backward(m, w.caches[static_cast<std::size_t>(i)], w.dF.col(i).data(), nullptr,
                    &res.dx[at + static_cast<std::size_t>(i)]);
  }
  return res;
}

MatF input_gradient(const Model& m, const IQFrame& frame, const VecF& target_feature) {
  MatF ref(m.dense_dim, 1);
  ref.col(0) = target_feature;
  PullResult res = feature_pull(m, std::span<const IQFrame>(&frame, 1), ref);
  return res.dx[0];
}

double loss_and_grads(const Model& m, std::span<const IQFrame> frames,
                      std::span<const int> labels, Grads& out) {
  check_labels(frames, labels, m.num_classes);
  out = Grads::zeros_like(m);
  BlockWork w;
  MatF dlogits;
  double total = 0.0;
  for (std::size_t at = 0; at < frames.size(); at += kBlock) {
    const int b = static_cast<int>(std::min<std::size_t>(kBlock, frames.size() - at));
    std::vector<const IQFrame*> ptrs(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) ptrs[static_cast<std::size_t>(i)] = &frames[at + static_cast<std::size_t>(i)];
    block_forward(m, ptrs.data(), b, w, true, nullptr);
    MatF lg = w.logits.leftCols(b);
    total += softmax_ce(lg, labels.subspan(at, static_cast<std::size_t>(b)), dlogits, nullptr) * b;
    // softmax_ce normalizes by the block; rescale so `out` is the gradient
    // of the mean over the whole span.
    dlogits *= static_cast<float>(b) / static_cast<float>(frames.size());
    block_backward_params(m, w, dlogits, out);
  }
  return total / static_cast<double>(frames.size());
}

TrainHistory train(Model& m, std::span<const IQFrame> frames,
                   std::span<const int> labels, const TrainConfig& cfg) {
  check_labels(frames, labels, m.num_classes);
  if (cfg.batch_size < 1 || cfg.epochs < 1)
    throw std::invalid_argument("train: bad schedule");

  struct Slot {
    float* p;
    long n;
  };
  std::vector<Slot> params;
  for_each_tensor(m, [&params](auto& t) { params.push_back({t.data(), static_cast<long>(t.size())}); });
  Grads gm = Grads::zeros_like(m), gv = Grads::zeros_like(m);
  std::vector<Slot> optm, optv;
  for_each_tensor(gm, [&optm](auto& t) { optm.push_back({t.data(), static_cast<long>(t.size())}); });
  for_each_tensor(gv, [&optv](auto& t) { optv.push_back({t.data(), static_cast<long>(t.size())}); });

  const std::size_t n = frames.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng shuffle_rng(seed_stream(cfg.seed, "train.shuffle"));

  TrainHistory hist;
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  long step = 0;
  const float lr = static_cast<float>(cfg.lr);

  BlockWork w;
  MatF dlogits;
  Grads g = Grads::zeros_like(m);
  std::vector<Slot> gslots;
  for_each_tensor(g, [&gslots](auto& t) { gslots.push_back({t.data(), static_cast<long>(t.size())}); });

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = shuffle_rng.index(static_cast<std::uint32_t>(i));
      std::swap(order[i - 1], order[j]);
    }
    double epoch_loss = 0.0;
    int correct = 0;
    for (std::size_t at = 0; at < n; at += static_cast<std::size_t>(cfg.batch_size)) {
      const int b = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n - at));
      std::vector<const IQFrame*> ptrs(static_cast<std::size_t>(b));
      std::vector<int> y(static_cast<std::size_t>(b));
      std::vector<std::uint64_t> drops(static_cast<std::size_t>(b));
      for (int i = 0; i < b; ++i) {
        std::size_t idx = order[at + static_cast<std::size_t>(i)];
        ptrs[static_cast<std::size_t>(i)] = &frames[idx];
        y[static_cast<std::size_t>(i)] = labels[idx];
        drops[static_cast<std::size_t>(i)] =
            seed_stream(cfg.seed, "train.drop", static_cast<std::uint64_t>(step), idx);
      }
      block_forward(m, ptrs.data(), b, w, true, cfg.dropout ? drops.data() : nullptr);
      MatF lg = w.logits.leftCols(b);
      double loss = softmax_ce(lg, y, dlogits, &correct);
      if (!std::isfinite(loss))
        throw DivergenceError("training loss became non-finite at epoch " +
                              std::to_string(epoch) + ", step " + std::to_string(step));
      epoch_loss += loss * b;

      for (Slot& s : gslots) std::memset(s.p, 0, static_cast<std::size_t>(s.n) * sizeof(float));
      block_backward_params(m, w, dlogits, g);

      ++step;
      if (cfg.optimizer == TrainConfig::Optimizer::Adam) {
        const float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
        const float c1 = 1.0f - std::pow(b1, static_cast<float>(step));
        const float c2 = 1.0f - std::pow(b2, static_cast<float>(step));
        for (std::size_t t = 0; t < params.size(); ++t) {
          Map<Eigen::ArrayXf> p(params[t].p, params[t].n);
          Map<Eigen::ArrayXf> gr(gslots[t].p, gslots[t].n);
          Map<Eigen::ArrayXf> mm(optm[t].p, optm[t].n);
          Map<Eigen::ArrayXf> vv(optv[t].p, optv[t].n);
          mm = b1 * mm + (1.0f - b1) * gr;
          vv = b2 * vv + (1.0f - b2) * gr.square();
          p -= lr * (mm / c1) / ((vv / c2).sqrt() + eps);
        }
      } else {
        const float mu = static_cast<float>(cfg.momentum);
        for (std::size_t t = 0; t < params.size(); ++t) {
          Map<Eigen::ArrayXf> p(params[t].p, params[t].n);
          Map<Eigen::ArrayXf> gr(gslots[t].p, gslots[t].n);
          Map<Eigen::ArrayXf> mm(optm[t].p, optm[t].n);
          mm = mu * mm - lr * gr;
          p += mm;
        }
      }
    }
    EpochStats stats{epoch_loss / static_cast<double>(n),
                     static_cast<double>(correct) / static_cast<double>(n)};
    hist.epochs.push_back(stats);
    if (cfg.verbose)
      std::fprintf(stderr, "epoch %3d  loss %.5f  acc %.4f\n", epoch, stats.loss,
                   stats.accuracy);
    if (stats.loss < best - 1e-9) {
      best = stats.loss;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  return hist;
}

double accuracy(const Model& m, std::span<const IQFrame> frames,
                std::span<const int> labels) {
  check_labels(frames, labels, m.num_classes);
  std::vector<int> pred = predict(m, frames);
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

int binary_label(ModulationScheme frame_label, ModulationScheme source,
                 ModulationScheme target) {
  if (source == target) throw std::invalid_argument("binary_label: source equals target");
  if (frame_label == source) return 0;
  if (frame_label == target) return 1;
  throw std::invalid_argument("binary_label: frame is neither source nor target class");
}

Model finetune_binary(const Model& backbone, std::span<const IQFrame> frames,
                      ModulationScheme source, ModulationScheme target,
                      const TrainConfig& cfg, TrainHistory* history) {
  Model m;
  m.c1 = backbone.c1;
  m.c2 = backbone.c2;
  m.dense_dim = backbone.dense_dim;
  m.num_classes = 2;
  m.w1 = backbone.w1;
  m.b1 = backbone.b1;
  m.w2 = backbone.w2;
  m.b2 = backbone.b2;
  m.wd1 = backbone.wd1;
  m.bd1 = backbone.bd1;
  m.wd2.resize(2, m.dense_dim);
  Rng head(seed_stream(cfg.seed, "finetune.head"));
  fill_gaussian(m.wd2.data(), m.wd2.size(),
                std::sqrt(1.0f / static_cast<float>(m.dense_dim)), head);
  m.bd2.setZero(2);

  std::vector<int> y(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i)
    y[i] = binary_label(frames[i].label, source, target);
  TrainHistory hist = train(m, frames, y, cfg);
  if (history) *history = hist;
  return m;
}

ActivationMatrix activations(const Model& m, std::span<const IQFrame> frames,
                             std::span<const int> labels, int class_filter) {
  if (frames.size() != labels.size())
    throw std::invalid_argument("activations: frame/label count mismatch");
  ActivationMatrix out;
  std::vector<const IQFrame*> kept;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (labels[i] == class_filter) {
      out.sample_ids.push_back(static_cast<int>(i));
      out.dataset_labels.push_back(labels[i]);
      kept.push_back(&frames[i]);
    }
  }
  if (kept.empty())
    throw std::invalid_argument("activations: no samples with label " +
                                std::to_string(class_filter));
  const int n = static_cast<int>(kept.size());
  out.rows.resize(n, m.dense_dim);
  out.predicted.resize(static_cast<std::size_t>(n));
  BlockWork w;
  for (int at = 0; at < n; at += kBlock) {
    const int b = std::min(kBlock, n - at);
    block_forward(m, kept.data() + at, b, w, true, nullptr);
    for (int i = 0; i < b; ++i) {
      out.rows.row(at + i) = w.V.col(i).transpose();
      int arg = 0;
      w.logits.col(i).maxCoeff(&arg);
      out.predicted[static_cast<std::size_t>(at + i)] = arg;
    }
  }
  return out;
}

}  // namespace mp::net
