#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "mp/frame.hpp"

namespace mp::net {

using MatF = Eigen::MatrixXf;
using VecF = Eigen::VectorXf;

/**
 * VT-CNN2 on 2 x 128 IQ rasters, float32 throughout:
 *   Conv(c1 filters, 1x3, width-preserving zero pad) - ReLU - Dropout(0.5)
 *   Conv(c2 filters, 2x3, width-preserving zero pad) - ReLU - Dropout(0.5)
 *   Flatten - Dense(dense_dim) - ReLU - Dense(num_classes) - Softmax
 * The penultimate ReLU output is the feature map f_theta (dimension
 * dense_dim); dropout is active only while training.
 */
struct Profile {
  int conv1_filters = 256;
  int conv2_filters = 80;
  int dense_dim = 256;

  // First-layer init std is multiplied by this. Frames in received units are
  // orders of magnitude below unit power; seeding conv1 at 1/scale starts
  // training in the responsive regime instead of asking the optimizer to
  // grow the input layer by the same factor.
  double input_gain = 1.0;

  static Profile full() { return {256, 80, 256}; }    // paper-size
  static Profile tiny() { return {32, 16, 64}; }      // CI-size, still trainable
  static Profile micro() { return {4, 2, 16}; }       // finite-difference size
};

struct Model {
  int c1 = 0, c2 = 0, dense_dim = 0, num_classes = 0;

  MatF w1;                  // (c1, 3)
  VecF b1;                  // (c1)
  std::array<MatF, 6> w2;   // [kw*2 + h] -> (c2, c1); kw in 0..2, h in 0..1
  VecF b2;                  // (c2)
  MatF wd1;                 // (dense_dim, c2*128); flatten is width-major
  VecF bd1;
  MatF wd2;                 // (num_classes, dense_dim)
  VecF bd2;

  int flat_dim() const { return c2 * kFrameWidth; }
  long param_count() const;

  // He-normal fan-in init for the hidden layers, Xavier for the softmax
  // head, zero biases; deterministic in the seed.
  static Model init(const Profile& p, int num_classes, std::uint64_t seed);
};

struct ForwardOut {
  VecF logits;
  VecF feature;
};

ForwardOut forward(const Model& m, const IQFrame& frame);
VecF softmax(const VecF& logits);
int classify(const Model& m, const IQFrame& frame);

// Batched inference; column b holds f_theta of frames[b].
MatF features(const Model& m, std::span<const IQFrame> frames);
std::vector<int> predict(const Model& m, std::span<const IQFrame> frames);

/**
 * Features of each frame, the squared feature distance to the matching
 * column of v_ref, and the gradient of that distance w.r.t. the frame
 * samples. This is the inner step of the feature-collision optimizer.
 */
struct PullResult {
  MatF features;                // (dense_dim, B)
  std::vector<double> loss;     // ||f(x_b) - v_ref_b||^2
  std::vector<MatF> dx;         // each (2, 128)
};
PullResult feature_pull(const Model& m, std::span<const IQFrame> frames,
                        const MatF& v_ref);

// dL/dx for L = ||f_theta(x) - target_feature||^2, shape (2, 128).
MatF input_gradient(const Model& m, const IQFrame& frame, const VecF& target_feature);

struct Grads {
  MatF w1;
  VecF b1;
  std::array<MatF, 6> w2;
  VecF b2;
  MatF wd1;
  VecF bd1;
  MatF wd2;
  VecF bd2;
  static Grads zeros_like(const Model& m);
};

// Mean cross-entropy of the batch and its parameter gradients, dropout off;
// the deterministic path the finite-difference oracle probes.
double loss_and_grads(const Model& m, std::span<const IQFrame> frames,
                      std::span<const int> labels, Grads& out);

struct TrainConfig {
  enum class Optimizer { Adam, Momentum };
  Optimizer optimizer = Optimizer::Adam;
  double lr = 1e-3;
  int epochs = 30;
  int batch_size = 64;
  bool dropout = true;
  double momentum = 0.9;       // momentum optimizer only
  int patience = 0;            // epochs without improvement before stopping; 0 disables
  std::uint64_t seed = 0;
  bool verbose = false;        // one stderr line per epoch
};

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

/**
 * Minibatch SGD over shuffled data. Shuffles, dropout masks and the
 * optimizer trajectory are all deterministic in cfg.seed. Throws
 * DivergenceError when the loss leaves the reals.
 */
TrainHistory train(Model& m, std::span<const IQFrame> frames,
                   std::span<const int> labels, const TrainConfig& cfg);

double accuracy(const Model& m, std::span<const IQFrame> frames,
                std::span<const int> labels);

// 0 for the source class, 1 for the target; anything else throws.
int binary_label(ModulationScheme frame_label, ModulationScheme source,
                 ModulationScheme target);

/**
 * Source-vs-target head on a copy of the pretrained backbone: conv and
 * first dense weights start from `backbone`, the 2-way head is freshly
 * initialized, then everything trains on the given frames.
 */
Model finetune_binary(const Model& backbone, std::span<const IQFrame> frames,
                      ModulationScheme source, ModulationScheme target,
                      const TrainConfig& cfg, TrainHistory* history = nullptr);

struct ActivationMatrix {
  MatF rows;                        // (N, dense_dim), one activation row per kept sample
  std::vector<int> sample_ids;      // indices into the input span
  std::vector<int> predicted;       // argmax class per kept sample
  std::vector<int> dataset_labels;  // the labels the samples carry
};

// Last-hidden-layer activations of the samples whose label equals
// class_filter, in input order. Throws when the selection is empty.
ActivationMatrix activations(const Model& m, std::span<const IQFrame> frames,
                             std::span<const int> labels, int class_filter);

}  // namespace mp::net
