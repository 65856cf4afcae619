#include "mp/defense.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <stdexcept>
#include <vector>

#include "mp/rng.hpp"
#include "io_util.hpp"

namespace mp::defense {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// W <- (W W^T)^{-1/2} W, the symmetric orthogonalization of FastICA.
MatrixXd sym_orth(const MatrixXd& w) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(w * w.transpose());
  const VectorXd inv_sqrt = eig.eigenvalues().cwiseMax(1e-12).cwiseSqrt().cwiseInverse();
  return eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose() * w;
}

}  // namespace

ReducedActivations ica_reduce(const net::ActivationMatrix& acts, int d,
                              std::uint64_t seed) {
  const Eigen::Index n = acts.rows.rows();
  const Eigen::Index dim = acts.rows.cols();
  if (d < 1) throw std::invalid_argument("ica dimension must be >= 1");
  if (n <= d) throw std::invalid_argument("need more samples than ica dimensions");

  const MatrixXd x = acts.rows.cast<double>();
  const VectorXd mean = x.colwise().mean();
  const MatrixXd xc = x.rowwise() - mean.transpose();
  const MatrixXd cov = xc.transpose() * xc / static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);  // ascending eigenvalues
  const VectorXd evals = eig.eigenvalues();
  const double floor = std::max(evals(dim - 1), 0.0) * 1e-9 + 1e-30;
  int rank = 0;
  for (Eigen::Index i = 0; i < dim; ++i) rank += evals(i) > floor;

  ReducedActivations out;
  out.sample_ids = acts.sample_ids;
  out.requested_d = d;
  out.effective_d = std::min(d, rank);
  if (out.effective_d < d)
    std::cerr << "ica_reduce: covariance rank " << rank << " below requested " << d
              << " components, reducing\n";
  const int ed = out.effective_d;
  out.mean = mean.cast<float>();
  if (ed == 0) {
    out.rows = net::MatF::Zero(n, 0);
    out.whitening = net::MatF::Zero(0, dim);
    out.unmixing = net::MatF::Zero(0, 0);
    return out;
  }

  // Top-ed directions scaled to unit variance.
  MatrixXd whiten(ed, dim);
  for (int k = 0; k < ed; ++k) {
    const Eigen::Index src = dim - 1 - k;
    whiten.row(k) = eig.eigenvectors().col(src).transpose() / std::sqrt(evals(src));
  }
  const MatrixXd xw = xc * whiten.transpose();  // (n, ed), white

  Rng rng(seed_stream(seed, "defense.ica"));
  MatrixXd w(ed, ed);
  for (int r = 0; r < ed; ++r)
    for (int c = 0; c < ed; ++c) w(r, c) = rng.gaussian();
  w = sym_orth(w);

  constexpr int kMaxIter = 200;
  constexpr double kTol = 1e-4;
  out.converged = false;
  for (int it = 0; it < kMaxIter; ++it) {
    const MatrixXd y = w * xw.transpose();          // (ed, n)
    const MatrixXd g = y.array().tanh().matrix();   // contrast
    const VectorXd gp = (1.0 - g.array().square()).rowwise().mean();
    MatrixXd w_new =
        g * xw / static_cast<double>(n) - gp.asDiagonal() * w;
    w_new = sym_orth(w_new);
    // Component-wise alignment with the previous sweep.
    double delta = 0.0;
    for (int k = 0; k < ed; ++k)
      delta = std::max(delta, std::fabs(1.0 - std::fabs(w_new.row(k).dot(w.row(k)))));
    w = w_new;
    out.iterations = it + 1;
    if (delta < kTol) {
      out.converged = true;
      break;
    }
  }

  out.whitening = whiten.cast<float>();
  out.unmixing = w.cast<float>();
  out.rows = (w * xw.transpose()).transpose().cast<float>();
  return out;
}

namespace {

double sq_dist(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  return (a - b).squaredNorm();
}

struct KmeansState {
  Eigen::RowVectorXd c0, c1;
  std::vector<int> assign;
  double inertia = std::numeric_limits<double>::infinity();
};

KmeansState lloyd_once(const MatrixXd& x, Rng& rng) {
  const Eigen::Index n = x.rows();
  KmeansState st;
  st.assign.assign(static_cast<std::size_t>(n), 0);

  // k-means++: first centroid uniform, second proportional to squared distance.
  const Eigen::Index first = rng.index(static_cast<std::uint32_t>(n));
  st.c0 = x.row(first);
  VectorXd d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2(i) = sq_dist(x.row(i), st.c0);
  const double total = d2.sum();
  if (total <= 0.0) {
    st.c1 = st.c0;  // all points identical; degenerate but well defined
  } else {
    double pick = rng.uniform01() * total;
    Eigen::Index second = n - 1;
    for (Eigen::Index i = 0; i < n; ++i) {
      pick -= d2(i);
      if (pick <= 0.0) {
        second = i;
        break;
      }
    }
    st.c1 = x.row(second);
  }

  constexpr int kMaxIter = 300;
  constexpr double kTol = 1e-6;
  for (int it = 0; it < kMaxIter; ++it) {
    // Assignment step.
    Eigen::RowVectorXd s0 = Eigen::RowVectorXd::Zero(x.cols());
    Eigen::RowVectorXd s1 = Eigen::RowVectorXd::Zero(x.cols());
    int n0 = 0, n1 = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int a = sq_dist(x.row(i), st.c0) <= sq_dist(x.row(i), st.c1) ? 0 : 1;
      st.assign[static_cast<std::size_t>(i)] = a;
      if (a == 0) {
        s0 += x.row(i);
        ++n0;
      } else {
        s1 += x.row(i);
        ++n1;
      }
    }
    // An emptied cluster re-seeds on the farthest point from the survivor.
    if (n0 == 0 || n1 == 0) {
      const Eigen::RowVectorXd& full = n0 == 0 ? st.c1 : st.c0;
      Eigen::Index far = 0;
      double best = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = sq_dist(x.row(i), full);
        if (d > best) {
          best = d;
          far = i;
        }
      }
      if (n0 == 0) {
        st.c0 = x.row(far);
      } else {
        st.c1 = x.row(far);
      }
      continue;
    }
    const Eigen::RowVectorXd m0 = s0 / n0;
    const Eigen::RowVectorXd m1 = s1 / n1;
    const double shift = sq_dist(m0, st.c0) + sq_dist(m1, st.c1);
    st.c0 = m0;
    st.c1 = m1;
    if (shift < kTol) break;
  }

  st.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    st.inertia += sq_dist(x.row(i), st.assign[static_cast<std::size_t>(i)] == 0
                                        ? st.c0
                                        : st.c1);
  return st;
}

double mean_silhouette(const MatrixXd& x, const std::vector<int>& assign,
                       const std::array<int, 2>& sizes) {
  const Eigen::Index n = x.rows();
  if (n < 2) return 0.0;
  MatrixXd dist(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    dist(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = std::sqrt(sq_dist(x.row(i), x.row(j)));
      dist(i, j) = d;
      dist(j, i) = d;
    }
  }
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int own = assign[static_cast<std::size_t>(i)];
    const int n_own = sizes[static_cast<std::size_t>(own)];
    const int n_other = sizes[static_cast<std::size_t>(1 - own)];
    if (n_own <= 1 || n_other == 0) continue;  // convention: s = 0
    double a = 0.0, b = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      (assign[static_cast<std::size_t>(j)] == own ? a : b) += dist(i, j);
    }
    a /= n_own - 1;
    b /= n_other;
    const double m = std::max(a, b);
    if (m > 0.0) acc += (b - a) / m;
  }
  return acc / static_cast<double>(n);
}

}  // namespace

ClusterReport kmeans2(const net::MatF& rows, std::uint64_t seed,
                      std::span<const std::uint8_t> truth) {
  const Eigen::Index n = rows.rows();
  if (n < 2) throw std::invalid_argument("kmeans2 needs at least 2 samples");
  if (rows.cols() < 1) throw std::invalid_argument("kmeans2 needs at least 1 feature");
  if (!truth.empty() && truth.size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("truth flags must align with rows");

  const MatrixXd x = rows.cast<double>();
  KmeansState best;
  constexpr int kRestarts = 10;
  for (int r = 0; r < kRestarts; ++r) {
    Rng rng(seed_stream(seed, "defense.kmeans", static_cast<std::uint64_t>(r)));
    KmeansState st = lloyd_once(x, rng);
    if (st.inertia < best.inertia) best = std::move(st);
  }

  ClusterReport rep;
  rep.assignments = best.assign;
  rep.centroids.resize(2, rows.cols());
  rep.centroids.row(0) = best.c0.cast<float>();
  rep.centroids.row(1) = best.c1.cast<float>();
  for (int a : best.assign) ++rep.sizes[static_cast<std::size_t>(a)];
  rep.inertia = best.inertia;
  rep.silhouette = mean_silhouette(x, best.assign, rep.sizes);
  rep.smaller_cluster = rep.sizes[1] < rep.sizes[0] ? 1 : 0;
  rep.smaller_fraction =
      static_cast<double>(rep.sizes[static_cast<std::size_t>(rep.smaller_cluster)]) /
      static_cast<double>(n);

  if (!truth.empty()) {
    std::array<std::array<int, 2>, 2> count{};  // [cluster][truth]
    for (Eigen::Index i = 0; i < n; ++i)
      ++count[static_cast<std::size_t>(best.assign[static_cast<std::size_t>(i)])]
             [truth[static_cast<std::size_t>(i)] ? 1 : 0];
    rep.purity = static_cast<double>(std::max(count[0][0], count[0][1]) +
                                     std::max(count[1][0], count[1][1])) /
                 static_cast<double>(n);
  }
  return rep;
}

ClusterReport detect(const net::Model& model, std::span<const IQFrame> frames,
                     std::span<const int> labels, int class_label,
                     const DetectConfig& cfg, std::span<const std::uint8_t> truth,
                     ReducedActivations& reduced_out) {
  if (!truth.empty() && truth.size() != frames.size())
    throw std::invalid_argument("truth flags must align with frames");
  const net::ActivationMatrix acts = net::activations(model, frames, labels, class_label);
  reduced_out = ica_reduce(acts, cfg.ica_dim, cfg.seed);

  std::vector<std::uint8_t> class_truth;
  if (!truth.empty()) {
    class_truth.reserve(reduced_out.sample_ids.size());
    for (int id : reduced_out.sample_ids)
      class_truth.push_back(truth[static_cast<std::size_t>(id)]);
  }
  ClusterReport rep = kmeans2(reduced_out.rows, cfg.seed, class_truth);
  rep.poisoned_flag =
      rep.smaller_fraction >= cfg.f_min && rep.silhouette >= cfg.s_min;
  return rep;
}

ClusterReport detect(const net::Model& model, std::span<const IQFrame> frames,
                     std::span<const int> labels, int class_label,
                     const DetectConfig& cfg, std::span<const std::uint8_t> truth) {
  ReducedActivations reduced;
  return detect(model, frames, labels, class_label, cfg, truth, reduced);
}

void write_scatter_csv(const ReducedActivations& reduced, const ClusterReport& report,
                       std::span<const std::uint8_t> truth,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) io::fail(path, "cannot open for writing");
  out << "sample_id,comp1,comp2,cluster,is_poisoned_truth\n";
  out << std::setprecision(8);
  const Eigen::Index n = reduced.rows.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    const float c1 = reduced.effective_d > 0 ? reduced.rows(i, 0) : 0.0f;
    const float c2 = reduced.effective_d > 1 ? reduced.rows(i, 1) : 0.0f;
    const int id = reduced.sample_ids[static_cast<std::size_t>(i)];
    const int tr = truth.empty() ? -1 : (truth[static_cast<std::size_t>(id)] ? 1 : 0);
    out << id << ',' << c1 << ',' << c2 << ','
        << report.assignments[static_cast<std::size_t>(i)] << ',' << tr << '\n';
  }
  if (!out) io::fail(path, "write failed");
}

}  // namespace mp::defense
