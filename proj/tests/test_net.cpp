#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "mp/checkpoint.hpp"
#include "mp/errors.hpp"
#include "mp/net.hpp"
#include "mp/rng.hpp"
#include "mp/sigsynth.hpp"
#include "support/naive_net.hpp"

using namespace mp;
using namespace mp::net;

namespace {

std::vector<IQFrame> toy_frames(int per_class, std::vector<ModulationScheme> schemes,
                                std::uint64_t seed, int snr = 18) {
  std::vector<sigsynth::ManifestEntry> spec;
  for (auto s : schemes) spec.push_back({s, snr, static_cast<std::uint64_t>(per_class)});
  return sigsynth::synth_dataset(spec, seed).frames;
}

std::vector<int> scheme_labels(std::span<const IQFrame> frames,
                               std::vector<ModulationScheme> order) {
  std::vector<int> y;
  for (const auto& f : frames)
    for (std::size_t k = 0; k < order.size(); ++k)
      if (order[k] == f.label) y.push_back(static_cast<int>(k));
  return y;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

std::filesystem::path temp_file(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "mp_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

// Central finite difference through the double-precision reference with the
// exact float-representable step. A second estimate at half the step filters
// coordinates whose probe interval spans a ReLU kink: there the two secants
// disagree and no finite difference is trustworthy.
struct FdEstimate {
  double value = 0.0;
  bool smooth = false;
};

template <typename LossFn>
FdEstimate fd_probe(float& w, LossFn&& loss) {
  const float w0 = w;
  auto secant = [&](float h) {
    const float wp = w0 + h, wm = w0 - h;
    w = wp;
    double lp = loss();
    w = wm;
    double lm = loss();
    w = w0;
    return (lp - lm) / (static_cast<double>(wp) - static_cast<double>(wm));
  };
  const float h = std::max(1e-5f, 1e-4f * std::abs(w0));
  double f1 = secant(h);
  double f2 = secant(0.5f * h);
  bool smooth = std::abs(f1 - f2) <= 1e-3 * std::max({std::abs(f1), std::abs(f2), 1e-3});
  return {f2, smooth};
}

struct FdStats {
  int checked = 0;
  int skipped = 0;
};

}  // namespace

TEST_SUITE_BEGIN("net");

TEST_CASE("profiles and shapes") {
  Model full = Model::init(Profile::full(), 8, 1);
  CHECK(full.flat_dim() == 10240);
  CHECK(full.dense_dim == 256);
  CHECK(full.w1.rows() == 256);
  CHECK(full.w2[0].rows() == 80);
  CHECK(full.param_count() ==
        256 * 3 + 256 + 80 * 256 * 6 + 80 + 256 * 10240 + 256 + 8 * 256 + 8);

  CHECK_THROWS_AS(Model::init(Profile{0, 2, 4}, 2, 1), std::invalid_argument);
  CHECK_THROWS_AS(Model::init(Profile::tiny(), 1, 1), std::invalid_argument);
}

TEST_CASE("forward matches the double-precision reference") {
  Model m = Model::init(Profile::tiny(), 4, 99);
  std::vector<IQFrame> frames = toy_frames(3, {ModulationScheme::Qpsk}, 5);
  for (const IQFrame& f : frames) {
    ForwardOut out = forward(m, f);
    testing::NaiveOut ref = testing::naive_forward(m, f);
    REQUIRE(out.feature.size() == 64);
    for (int d = 0; d < 64; ++d)
      CHECK(rel_err(out.feature(d), ref.feature[static_cast<std::size_t>(d)]) < 2e-4);
    for (int k = 0; k < 4; ++k)
      CHECK(rel_err(out.logits(k), ref.logits[static_cast<std::size_t>(k)]) < 2e-4);
  }
}

TEST_CASE("softmax is a probability vector") {
  VecF logits(3);
  logits << 0.5f, -2.0f, 30.0f;
  VecF p = softmax(logits);
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(p.minCoeff() >= 0.0f);
  CHECK(p(2) > 0.99f);
}

TEST_CASE("batched features agree with single-frame forward") {
  Model m = Model::init(Profile::tiny(), 3, 7);
  std::vector<IQFrame> frames = toy_frames(20, {ModulationScheme::Bpsk}, 21);
  MatF f = features(m, frames);
  REQUIRE(f.cols() == 20);
  for (int i = 0; i < 20; ++i) {
    VecF one = forward(m, frames[static_cast<std::size_t>(i)]).feature;
    CHECK((f.col(i) - one).cwiseAbs().maxCoeff() < 1e-4f * (1.0f + one.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("weight gradients match central finite differences") {
  Model m = Model::init(Profile::micro(), 3, 1234);
  std::vector<IQFrame> frames =
      toy_frames(2, {ModulationScheme::Bpsk, ModulationScheme::Psk8}, 777);
  std::vector<int> labels{0, 1, 2, 0};
  REQUIRE(frames.size() == 4);

  Grads g;
  loss_and_grads(m, frames, labels, g);
  auto loss = [&] { return testing::naive_ce(m, frames, labels); };

  FdStats stats;
  auto check_coord = [&](float& w, float analytic) {
    FdEstimate fd = fd_probe(w, loss);
    if (!fd.smooth) {
      ++stats.skipped;
      return;
    }
    ++stats.checked;
    CHECK(std::abs(fd.value - analytic) <
          1e-3 * std::max({std::abs(fd.value), std::abs(static_cast<double>(analytic))}) + 2e-5);
  };
  auto probe_all = [&](MatF& w, const MatF& gw) {
    for (long r = 0; r < w.rows(); ++r)
      for (long c = 0; c < w.cols(); ++c) check_coord(w(r, c), gw(r, c));
  };
  auto probe_vec = [&](VecF& w, const VecF& gw) {
    for (long r = 0; r < w.size(); ++r) check_coord(w(r), gw(r));
  };

  probe_all(m.w1, g.w1);
  probe_vec(m.b1, g.b1);
  for (int k = 0; k < 6; ++k) probe_all(m.w2[static_cast<std::size_t>(k)], g.w2[static_cast<std::size_t>(k)]);
  probe_vec(m.b2, g.b2);
  probe_vec(m.bd1, g.bd1);
  probe_all(m.wd2, g.wd2);
  probe_vec(m.bd2, g.bd2);
  // wd1 is large; probe a deterministic random subset.
  Rng pick(5);
  for (int t = 0; t < 64; ++t) {
    long r = pick.index(static_cast<std::uint32_t>(m.wd1.rows()));
    long c = pick.index(static_cast<std::uint32_t>(m.wd1.cols()));
    check_coord(m.wd1(r, c), g.wd1(r, c));
  }
  // The filter must stay an exception, not the rule.
  CHECK(stats.checked >= 9 * (stats.checked + stats.skipped) / 10);
}

TEST_CASE("input gradients match central finite differences") {
  Model m = Model::init(Profile::micro(), 3, 4321);
  std::vector<IQFrame> frames =
      toy_frames(1, {ModulationScheme::Bpsk, ModulationScheme::Qam16}, 88);
  IQFrame x = frames[0];

  // Reference feature: the other frame's, so the pull is non-trivial.
  VecF ref_f = forward(m, frames[1]).feature;
  std::vector<double> ref_d(ref_f.data(), ref_f.data() + ref_f.size());

  MatF g = input_gradient(m, x, ref_f);
  auto loss = [&] { return testing::naive_pull_loss(m, x, ref_d); };

  FdStats stats;
  for (int h = 0; h < 2; ++h)
    for (int w = 0; w < kFrameWidth; ++w) {
      float& coord = h == 0 ? x.i_at(w) : x.q_at(w);
      FdEstimate fd = fd_probe(coord, loss);
      if (!fd.smooth) {
        ++stats.skipped;
        continue;
      }
      ++stats.checked;
      CAPTURE(h);
      CAPTURE(w);
      CHECK(std::abs(fd.value - g(h, w)) <
            1e-3 * std::max({std::abs(fd.value), std::abs(static_cast<double>(g(h, w)))}) + 2e-5);
    }
  CHECK(stats.checked >= 9 * (stats.checked + stats.skipped) / 10);
}

TEST_CASE("feature_pull reports consistent losses and gradients") {
  Model m = Model::init(Profile::tiny(), 2, 11);
  std::vector<IQFrame> frames = toy_frames(6, {ModulationScheme::Qpsk}, 13);
  MatF ref = features(m, std::span<const IQFrame>(frames).subspan(3, 3));
  auto sub = std::span<const IQFrame>(frames).subspan(0, 3);
  PullResult pull = feature_pull(m, sub, ref);
  REQUIRE(pull.loss.size() == 3);
  for (int i = 0; i < 3; ++i) {
    VecF diff = pull.features.col(i) - ref.col(i);
    CHECK(pull.loss[static_cast<std::size_t>(i)] ==
          doctest::Approx(diff.cast<double>().squaredNorm()).epsilon(1e-6));
    MatF single = input_gradient(m, frames[static_cast<std::size_t>(i)], ref.col(i));
    CHECK((single - pull.dx[static_cast<std::size_t>(i)]).cwiseAbs().maxCoeff() < 1e-5f);
  }
  MatF bad(m.dense_dim, 2);
  CHECK_THROWS_AS(feature_pull(m, sub, bad), std::invalid_argument);
}

TEST_CASE("training is deterministic in the seed and learns a toy task") {
  auto schemes = std::vector<ModulationScheme>{ModulationScheme::Bpsk, ModulationScheme::Qpsk};
  std::vector<IQFrame> frames = toy_frames(60, schemes, 303);
  std::vector<int> labels = scheme_labels(frames, schemes);

  TrainConfig cfg;
  cfg.epochs = 25;
  cfg.batch_size = 32;
  cfg.seed = 42;

  Model a = Model::init(Profile::tiny(), 2, 42);
  Model b = Model::init(Profile::tiny(), 2, 42);
  TrainHistory ha = train(a, frames, labels, cfg);
  TrainHistory hb = train(b, frames, labels, cfg);
  CHECK(ha.epochs.size() == hb.epochs.size());
  CHECK(std::memcmp(a.wd1.data(), b.wd1.data(),
                    sizeof(float) * static_cast<std::size_t>(a.wd1.size())) == 0);
  CHECK(std::memcmp(a.w1.data(), b.w1.data(),
                    sizeof(float) * static_cast<std::size_t>(a.w1.size())) == 0);

  CHECK(ha.epochs.front().loss > ha.epochs.back().loss);
  CHECK(accuracy(a, frames, labels) >= 0.95);

  Model c = Model::init(Profile::tiny(), 2, 43);
  TrainConfig cfg2 = cfg;
  cfg2.seed = 43;
  train(c, frames, labels, cfg2);
  CHECK(std::memcmp(a.wd1.data(), c.wd1.data(),
                    sizeof(float) * static_cast<std::size_t>(a.wd1.size())) != 0);
}

TEST_CASE("momentum optimizer also reduces the loss") {
  auto schemes = std::vector<ModulationScheme>{ModulationScheme::Bpsk, ModulationScheme::Psk8};
  std::vector<IQFrame> frames = toy_frames(40, schemes, 99);
  std::vector<int> labels = scheme_labels(frames, schemes);
  TrainConfig cfg;
  cfg.optimizer = TrainConfig::Optimizer::Momentum;
  cfg.lr = 1e-2;
  cfg.epochs = 10;
  cfg.seed = 9;
  Model m = Model::init(Profile::tiny(), 2, 8);
  TrainHistory h = train(m, frames, labels, cfg);
  CHECK(h.epochs.back().loss < h.epochs.front().loss);
}

TEST_CASE("diverging training throws instead of returning garbage") {
  auto schemes = std::vector<ModulationScheme>{ModulationScheme::Bpsk, ModulationScheme::Qpsk};
  std::vector<IQFrame> frames = toy_frames(20, schemes, 1);
  std::vector<int> labels = scheme_labels(frames, schemes);
  TrainConfig cfg;
  cfg.optimizer = TrainConfig::Optimizer::Momentum;
  cfg.lr = 1e9;
  cfg.epochs = 5;
  Model m = Model::init(Profile::tiny(), 2, 3);
  CHECK_THROWS_AS(train(m, frames, labels, cfg), DivergenceError);
}

TEST_CASE("early stopping respects patience") {
  auto schemes = std::vector<ModulationScheme>{ModulationScheme::Bpsk, ModulationScheme::Qpsk};
  std::vector<IQFrame> frames = toy_frames(10, schemes, 17);
  std::vector<int> labels = scheme_labels(frames, schemes);
  TrainConfig cfg;
  cfg.lr = 0.0;  // loss can never improve
  cfg.epochs = 50;
  cfg.patience = 3;
  Model m = Model::init(Profile::tiny(), 2, 3);
  TrainHistory h = train(m, frames, labels, cfg);
  CHECK(h.epochs.size() <= 5);
}

TEST_CASE("train validates its inputs") {
  Model m = Model::init(Profile::micro(), 2, 3);
  std::vector<IQFrame> frames = toy_frames(2, {ModulationScheme::Bpsk}, 2);
  std::vector<int> bad{0, 7};
  TrainConfig cfg;
  CHECK_THROWS_AS(train(m, frames, bad, cfg), std::invalid_argument);
  std::vector<int> short_labels{0};
  CHECK_THROWS_AS(train(m, frames, short_labels, cfg), std::invalid_argument);
  std::vector<IQFrame> none;
  std::vector<int> no_labels;
  CHECK_THROWS_AS(train(m, none, no_labels, cfg), std::invalid_argument);
}

TEST_CASE("binary labels map source to 0 and target to 1") {
  using MS = ModulationScheme;
  CHECK(binary_label(MS::Psk8, MS::Psk8, MS::Bpsk) == 0);
  CHECK(binary_label(MS::Bpsk, MS::Psk8, MS::Bpsk) == 1);
  CHECK_THROWS_AS(binary_label(MS::Qam16, MS::Psk8, MS::Bpsk), std::invalid_argument);
  CHECK_THROWS_AS(binary_label(MS::Bpsk, MS::Bpsk, MS::Bpsk), std::invalid_argument);
}

TEST_CASE("finetune_binary keeps the backbone shape and learns the pair") {
  auto schemes = std::vector<ModulationScheme>{ModulationScheme::Psk8, ModulationScheme::Bpsk};
  std::vector<IQFrame> pretrain = toy_frames(50, schemes, 515);
  std::vector<int> labels = scheme_labels(pretrain, schemes);
  Model backbone = Model::init(Profile::tiny(), 2, 1);
  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.seed = 2;
  train(backbone, pretrain, labels, cfg);

  std::vector<IQFrame> tune = toy_frames(40, schemes, 616);
  TrainConfig ft = cfg;
  ft.epochs = 10;
  TrainHistory hist;
  Model victim = finetune_binary(backbone, tune, ModulationScheme::Psk8,
                                 ModulationScheme::Bpsk, ft, &hist);
  CHECK(victim.num_classes == 2);
  CHECK(victim.c1 == backbone.c1);
  CHECK(!hist.epochs.empty());

  std::vector<int> y(tune.size());
  for (std::size_t i = 0; i < tune.size(); ++i)
    y[i] = binary_label(tune[i].label, ModulationScheme::Psk8, ModulationScheme::Bpsk);
  CHECK(accuracy(victim, tune, y) >= 0.95);

  std::vector<IQFrame> foreign = toy_frames(2, {ModulationScheme::Qam64}, 3);
  CHECK_THROWS_AS(finetune_binary(backbone, foreign, ModulationScheme::Psk8,
                                  ModulationScheme::Bpsk, ft, nullptr),
                  std::invalid_argument);
}

TEST_CASE("activations filter by label and keep order") {
  Model m = Model::init(Profile::tiny(), 2, 21);
  std::vector<IQFrame> frames = toy_frames(5, {ModulationScheme::Psk8, ModulationScheme::Bpsk}, 33);
  std::vector<int> labels(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i)
    labels[i] = binary_label(frames[i].label, ModulationScheme::Psk8, ModulationScheme::Bpsk);

  ActivationMatrix act = activations(m, frames, labels, 1);
  REQUIRE(act.rows.rows() == 5);
  CHECK(act.rows.cols() == m.dense_dim);
  CHECK(act.sample_ids == std::vector<int>{5, 6, 7, 8, 9});
  for (int y : act.dataset_labels) CHECK(y == 1);
  CHECK(act.predicted.size() == 5);
  VecF direct = forward(m, frames[5]).feature;
  CHECK((act.rows.row(0).transpose() - direct).cwiseAbs().maxCoeff() < 1e-4f);

  CHECK_THROWS_AS(activations(m, frames, labels, 3), std::invalid_argument);
}

TEST_CASE("checkpoints round-trip bit exactly and reject corruption") {
  Model m = Model::init(Profile::tiny(), 5, 1717);
  auto path = temp_file("model.mpnn");
  save_model(m, path);
  CHECK(std::filesystem::file_size(path) < (1u << 20));

  Model back = load_model(path);
  CHECK(back.c1 == m.c1);
  CHECK(back.c2 == m.c2);
  CHECK(back.dense_dim == m.dense_dim);
  CHECK(back.num_classes == 5);
  CHECK(std::memcmp(back.w1.data(), m.w1.data(), sizeof(float) * static_cast<std::size_t>(m.w1.size())) == 0);
  for (int k = 0; k < 6; ++k)
    CHECK(std::memcmp(back.w2[static_cast<std::size_t>(k)].data(), m.w2[static_cast<std::size_t>(k)].data(),
                      sizeof(float) * static_cast<std::size_t>(m.w2[static_cast<std::size_t>(k)].size())) == 0);
  CHECK(std::memcmp(back.wd1.data(), m.wd1.data(), sizeof(float) * static_cast<std::size_t>(m.wd1.size())) == 0);

  IQFrame probe = toy_frames(1, {ModulationScheme::Qam16}, 9)[0];
  ForwardOut a = forward(m, probe);
  ForwardOut b = forward(back, probe);
  CHECK(std::memcmp(a.logits.data(), b.logits.data(), sizeof(float) * 5) == 0);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  auto write_raw = [](const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  };

  auto bad = temp_file("model_bad.mpnn");
  std::string corrupt = bytes;
  corrupt[bytes.size() / 2] = static_cast<char>(corrupt[bytes.size() / 2] ^ 0x40);
  write_raw(bad, corrupt);
  CHECK_THROWS_AS(load_model(bad), FormatError);

  write_raw(bad, bytes.substr(0, bytes.size() / 3));
  CHECK_THROWS_AS(load_model(bad), FormatError);

  corrupt = bytes;
  corrupt[1] = 'X';
  write_raw(bad, corrupt);
  CHECK_THROWS_AS(load_model(bad), FormatError);

  CHECK_THROWS_AS(load_model(temp_file("absent.mpnn")), FormatError);
}

TEST_SUITE_END();
