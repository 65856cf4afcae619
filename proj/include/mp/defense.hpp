#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mp/net.hpp"

namespace mp::defense {

/**
 * Activations after centering, PCA whitening to d components and a FastICA
 * rotation. rows(i) = unmixing * whitening * (a_i - mean). Whitened
 * components have exactly unit empirical variance; the ICA rotation is
 * orthogonal, so the reduced rows stay white.
 */
struct ReducedActivations {
  net::MatF rows;       // (N, effective_d)
  net::MatF whitening;  // (effective_d, D)
  net::MatF unmixing;   // (effective_d, effective_d)
  net::VecF mean;       // (D)
  std::vector<int> sample_ids;
  int requested_d = 0;
  int effective_d = 0;   // smaller when the covariance is rank deficient
  bool converged = true; // false: best iterate after the iteration cap
  int iterations = 0;
};

/**
 * Centering, top-d eigen whitening, then symmetric fixed-point ICA with the
 * tanh contrast, tolerance 1e-4, at most 200 sweeps. Deterministic in seed.
 * A covariance rank below d shrinks the output dimension with a warning on
 * stderr; non-convergence returns the last iterate with converged = false.
 */
ReducedActivations ica_reduce(const net::ActivationMatrix& acts, int d = 10,
                              std::uint64_t seed = 0);

struct ClusterReport {
  std::vector<int> assignments;  // 0/1 per row
  net::MatF centroids;           // (2, d)
  std::array<int, 2> sizes{0, 0};
  double inertia = 0.0;
  double silhouette = 0.0;  // mean over samples
  double purity = -1.0;     // majority purity vs ground truth; -1 without truth
  int smaller_cluster = 0;
  double smaller_fraction = 0.0;
  bool poisoned_flag = false;  // set by detect()
};

/**
 * 2-means with k-means++ seeding, 10 restarts, at most 300 Lloyd iterations
 * per restart, centroid-shift tolerance 1e-6; the restart with the best
 * inertia wins. An emptied cluster re-seeds on the point farthest from the
 * surviving centroid. `truth` (optional, poisoned = 1) fills in purity.
 */
ClusterReport kmeans2(const net::MatF& rows, std::uint64_t seed,
                      std::span<const std::uint8_t> truth = {});

struct DetectConfig {
  int ica_dim = 10;
  double f_min = 0.10;  // smallest suspicious smaller-cluster fraction
  double s_min = 0.25;  // smallest suspicious mean silhouette
  std::uint64_t seed = 0;
};

/**
 * Activation-clustering pipeline for one class: last-hidden activations of
 * the frames labeled class_label, ICA reduction, 2-means, then the decision
 * rule: poisoned iff smaller-cluster fraction >= f_min and mean silhouette
 * >= s_min. `truth` flags (aligned with `frames`) feed the purity metric.
 */
ClusterReport detect(const net::Model& model, std::span<const IQFrame> frames,
                     std::span<const int> labels, int class_label,
                     const DetectConfig& cfg,
                     std::span<const std::uint8_t> truth = {});

// Same pipeline, also returning the reduction for scatter exports.
ClusterReport detect(const net::Model& model, std::span<const IQFrame> frames,
                     std::span<const int> labels, int class_label,
                     const DetectConfig& cfg, std::span<const std::uint8_t> truth,
                     ReducedActivations& reduced_out);

// CSV: sample_id,comp1,comp2,cluster,is_poisoned_truth (first two reduced
// components; truth -1 when unknown).
void write_scatter_csv(const ReducedActivations& reduced, const ClusterReport& report,
                       std::span<const std::uint8_t> truth,
                       const std::filesystem::path& path);

}  // namespace mp::defense
