#include "mp/harness.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "csv_util.hpp"
#include "mp/checkpoint.hpp"
#include "mp/dataset_io.hpp"
#include "mp/errors.hpp"
#include "mp/rng.hpp"

namespace mp::harness {
namespace {

namespace fs = std::filesystem;
using csv::fmt_double;
using csv::open_read;
using csv::open_text;
using csv::parse_double;
using csv::parse_long;
using csv::read_csv_body;
using csv::split;
using csv::trim;

bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw std::invalid_argument(key + ": not a boolean: '" + s + "'");
}

// "a,b,c" or "lo..hi:step"; the two forms may be mixed per comma token.
std::vector<int> parse_int_list(const std::string& s, const std::string& key) {
  std::vector<int> out;
  if (trim(s).empty()) return out;
  for (const std::string& raw : split(s, ',')) {
    const std::string tok = trim(raw);
    std::size_t dots = tok.find("..");
    if (dots == std::string::npos) {
      out.push_back(static_cast<int>(parse_long(tok, key)));
      continue;
    }
    std::size_t colon = tok.find(':', dots + 2);
    if (colon == std::string::npos)
      throw std::invalid_argument(key + ": range needs lo..hi:step, got '" + tok + "'");
    const long lo = parse_long(tok.substr(0, dots), key);
    const long hi = parse_long(tok.substr(dots + 2, colon - dots - 2), key);
    const long step = parse_long(tok.substr(colon + 1), key);
    if (step <= 0 || hi < lo)
      throw std::invalid_argument(key + ": bad range '" + tok + "'");
    for (long v = lo; v <= hi; v += step) out.push_back(static_cast<int>(v));
  }
  return out;
}

std::string join_ints(std::span<const int> v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::string dist_name(attack::Trigger::Dist d) {
  return d == attack::Trigger::Dist::Normal ? "normal" : "uniform";
}

attack::Trigger::Dist dist_from_name(const std::string& s) {
  if (s == "normal") return attack::Trigger::Dist::Normal;
  if (s == "uniform") return attack::Trigger::Dist::Uniform;
  throw std::invalid_argument("trigger.dist: expected normal or uniform, got '" + s + "'");
}

std::string pairing_name(attack::Pairing p) {
  return p == attack::Pairing::Index ? "index" : "greedy";
}

attack::Pairing pairing_from_name(const std::string& s) {
  if (s == "index") return attack::Pairing::Index;
  if (s == "greedy") return attack::Pairing::GreedyNearest;
  throw std::invalid_argument("poison.pairing: expected index or greedy, got '" + s + "'");
}

std::string sha256_hex(std::string_view text) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  if (EVP_Digest(text.data(), text.size(), md, &n, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("EVP_Digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * n);
  for (unsigned int i = 0; i < n; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::uint64_t snr_key(int snr_db) { return static_cast<std::uint64_t>(snr_db + 128); }

// Fresh models are seeded for the run's received-unit scale. The conv stack
// trains stably when clean frames arrive around 5e-3 rms (low-SNR frames stay
// two orders below saturation there); fold the ratio into the first layer.
constexpr double kReferenceRms = 5e-3;

net::Profile run_profile(const ExperimentConfig& cfg) {
  net::Profile p = profile_by_name(cfg.profile);
  p.input_gain = kReferenceRms / cfg.gain;
  return p;
}

void apply_gain(sigsynth::Dataset& d, double gain) {
  for (IQFrame& f : d.frames)
    for (float& v : f.iq) v = static_cast<float>(static_cast<double>(v) * gain);
}

sigsynth::Dataset synth_gained(std::span<const sigsynth::ManifestEntry> cells,
                               std::uint64_t seed, double gain) {
  sigsynth::Dataset d = sigsynth::synth_dataset(cells, seed);
  apply_gain(d, gain);
  return d;
}

// Layout of train_pool.mpds: per SNR one target cell then one source cell,
// crafting frames first within each cell.
struct PoolSlices {
  std::span<const IQFrame> craft_targets, clean_targets;
  std::span<const IQFrame> craft_sources, clean_sources;
};

std::vector<sigsynth::ManifestEntry> pool_cells(const ExperimentConfig& cfg) {
  std::vector<sigsynth::ManifestEntry> cells;
  for (int snr : cfg.snrs) {
    cells.push_back({cfg.target, snr,
                     static_cast<std::uint64_t>(cfg.n_poisoned + cfg.n_clean_target)});
    cells.push_back({cfg.source, snr,
                     static_cast<std::uint64_t>(cfg.n_poisoned + cfg.n_clean_source)});
  }
  return cells;
}

void check_pool(const sigsynth::Dataset& pool, const ExperimentConfig& cfg) {
  const auto want = pool_cells(cfg);
  bool ok = pool.manifest.size() == want.size();
  for (std::size_t i = 0; ok && i < want.size(); ++i)
    ok = pool.manifest[i].scheme == want[i].scheme &&
         pool.manifest[i].snr_db == want[i].snr_db &&
         pool.manifest[i].count == want[i].count;
  if (!ok || !sigsynth::manifest_ok(pool))
    throw FormatError("train pool does not match the configuration; rerun synth");
}

int snr_index(const ExperimentConfig& cfg, int snr_db) {
  for (std::size_t i = 0; i < cfg.snrs.size(); ++i)
    if (cfg.snrs[i] == snr_db) return static_cast<int>(i);
  throw std::invalid_argument("SNR " + std::to_string(snr_db) + " is not in data.snrs");
}

PoolSlices pool_slices(const sigsynth::Dataset& pool, const ExperimentConfig& cfg,
                       int snr_db) {
  const std::size_t tc = static_cast<std::size_t>(cfg.n_poisoned + cfg.n_clean_target);
  const std::size_t sc = static_cast<std::size_t>(cfg.n_poisoned + cfg.n_clean_source);
  const std::size_t np = static_cast<std::size_t>(cfg.n_poisoned);
  const std::size_t base = static_cast<std::size_t>(snr_index(cfg, snr_db)) * (tc + sc);
  std::span<const IQFrame> all(pool.frames);
  return {all.subspan(base, np), all.subspan(base + np, tc - np),
          all.subspan(base + tc, np), all.subspan(base + tc + np, sc - np)};
}

int top_snr(const ExperimentConfig& cfg) {
  return *std::max_element(cfg.snrs.begin(), cfg.snrs.end());
}

constexpr const char* kMetricsHeader =
    "sweep_key,sweep_value,snr_db,attack_success,clean_failure,n_patched,n_clean,seed";
constexpr const char* kDetectionHeader =
    "trigger_size,snr_db,repetitions,success_rate,false_alarm_rate";

struct CraftOutput {
  sigsynth::Dataset poisoned;         // cells: (target, snr, n_poisoned) per SNR
  sigsynth::Dataset patched;          // same layout, source label
  std::vector<attack::PoisonBatchResult> per_snr;
};

/**
 * Feature-collision crafting over snr_list. Substreams are keyed by the SNR
 * value, so a sweep over a subset of the grid reproduces the main run's
 * poisons on the shared SNRs when the trigger matches.
 */
CraftOutput craft_all(const ExperimentConfig& cfg, const sigsynth::Dataset& pool,
                      const net::Model& backbone, const attack::Trigger& trig,
                      std::span<const int> snr_list, const RunPaths& rp) {
  CraftOutput out;
  std::ofstream stats = open_text(rp.poison_stats());
  stats << "snr_db,pair_id,assignment,initial_loss,final_loss,iters\n";
  for (int snr : snr_list) {
    PoolSlices sl = pool_slices(pool, cfg, snr);
    attack::PoisonConfig pcfg = cfg.poison;
    pcfg.seed = seed_stream(cfg.seed, "harness.poison", snr_key(snr));
    attack::PoisonBatchResult res;
    if (cfg.n_poisoned > 0)
      res = attack::poison(backbone, sl.craft_sources, sl.craft_targets, trig, pcfg);
    double iters = 0.0, ratio = 0.0;
    for (std::size_t k = 0; k < res.poisoned.size(); ++k) {
      out.poisoned.frames.push_back(res.poisoned[k]);
      out.patched.frames.push_back(res.patched_sources[k]);
      stats << snr << ',' << k << ',' << res.assignment[k] << ','
            << fmt_double(res.initial_loss[k]) << ',' << fmt_double(res.final_loss[k])
            << ',' << res.iters_run[k] << '\n';
      iters += res.iters_run[k];
      ratio += res.initial_loss[k] > 0 ? res.final_loss[k] / res.initial_loss[k] : 0.0;
    }
    if (!res.poisoned.empty()) {
      attack::write_loss_traces_csv(res, rp.poison_traces(snr));
      std::cerr << "[poison] snr " << snr << ": " << res.poisoned.size()
                << " pairs, mean iters " << iters / res.poisoned.size()
                << ", mean final/initial " << ratio / res.poisoned.size() << "\n";
    }
    out.per_snr.push_back(std::move(res));
  }
  out.poisoned.seed = cfg.seed;
  out.poisoned.manifest = sigsynth::count_cells(out.poisoned);
  out.patched.seed = cfg.seed;
  out.patched.manifest = sigsynth::count_cells(out.patched);
  return out;
}

void write_constellation_pair(const ExperimentConfig& cfg, const CraftOutput& crafted,
                              const sigsynth::Dataset& pool,
                              std::span<const int> snr_list, const fs::path& path) {
  if (cfg.n_poisoned == 0) return;
  const int snr = *std::max_element(snr_list.begin(), snr_list.end());
  std::size_t block = 0;
  for (std::size_t i = 0; i < snr_list.size(); ++i)
    if (snr_list[i] == snr) block = i;
  const attack::PoisonBatchResult& res = crafted.per_snr[block];
  PoolSlices sl = pool_slices(pool, cfg, snr);
  const IQFrame& base = sl.craft_targets[static_cast<std::size_t>(res.assignment[0])];
  const IQFrame& pois = res.poisoned[0];
  std::ofstream out = open_text(path);
  out << "k,target_i,target_q,poison_i,poison_q\n";
  char buf[128];
  for (int k = 0; k < kFrameWidth; ++k) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g\n", k, base.i_at(k),
                  base.q_at(k), pois.i_at(k), pois.q_at(k));
    out << buf;
  }
}

attack::Composition composition(const ExperimentConfig& cfg) {
  return {cfg.source, cfg.target, cfg.n_poisoned, cfg.n_clean_target,
          cfg.n_clean_source};
}

sigsynth::Dataset clean_slice_dataset(const PoolSlices& sl) {
  sigsynth::Dataset d;
  d.frames.assign(sl.clean_targets.begin(), sl.clean_targets.end());
  d.frames.insert(d.frames.end(), sl.clean_sources.begin(), sl.clean_sources.end());
  d.manifest = sigsynth::count_cells(d);
  return d;
}

/** Per-SNR assembly then one global shuffle; flags follow the frames. */
attack::AssembledDataset assemble_all(const ExperimentConfig& cfg,
                                      const sigsynth::Dataset& pool,
                                      const sigsynth::Dataset& poisoned,
                                      std::span<const int> snr_list) {
  attack::AssembledDataset mix;
  const std::size_t np = static_cast<std::size_t>(cfg.n_poisoned);
  for (std::size_t i = 0; i < snr_list.size(); ++i) {
    const int snr = snr_list[i];
    attack::PoisonBatchResult res;
    std::span<const IQFrame> pf(poisoned.frames);
    res.poisoned.assign(pf.subspan(i * np, np).begin(), pf.subspan(i * np, np).end());
    attack::AssembledDataset part = attack::assemble_poisoned_dataset(
        clean_slice_dataset(pool_slices(pool, cfg, snr)), res, composition(cfg),
        seed_stream(cfg.seed, "harness.assemble", snr_key(snr)));
    mix.data.frames.insert(mix.data.frames.end(), part.data.frames.begin(),
                           part.data.frames.end());
    mix.poisoned_flag.insert(mix.poisoned_flag.end(), part.poisoned_flag.begin(),
                             part.poisoned_flag.end());
  }
  Rng rng(seed_stream(cfg.seed, "harness.mix", snr_key(snr_list.back())));
  for (std::size_t i = mix.data.frames.size(); i > 1; --i) {
    const std::size_t j = rng.index(static_cast<std::uint32_t>(i));
    std::swap(mix.data.frames[i - 1], mix.data.frames[j]);
    std::swap(mix.poisoned_flag[i - 1], mix.poisoned_flag[j]);
  }
  mix.data.seed = cfg.seed;
  mix.data.manifest = sigsynth::count_cells(mix.data);
  return mix;
}

void write_flags(std::span<const std::uint8_t> flags, const fs::path& path) {
  std::ofstream out = open_text(path);
  out << "index,poisoned\n";
  for (std::size_t i = 0; i < flags.size(); ++i)
    out << i << ',' << static_cast<int>(flags[i]) << '\n';
}

std::vector<std::uint8_t> read_flags(const fs::path& path) {
  std::ifstream in = open_read(path);
  std::vector<std::uint8_t> flags;
  for (const std::string& row : read_csv_body(in, path, "index,poisoned")) {
    auto f = split(row, ',');
    if (f.size() != 2) throw FormatError(path.string() + ": bad row");
    const long idx = parse_long(trim(f[0]), "index");
    const long val = parse_long(trim(f[1]), "poisoned");
    if (idx != static_cast<long>(flags.size()) || (val != 0 && val != 1))
      throw FormatError(path.string() + ": bad row");
    flags.push_back(static_cast<std::uint8_t>(val));
  }
  return flags;
}

net::TrainConfig finetune_train_config(const ExperimentConfig& cfg, int size) {
  net::TrainConfig tc;
  tc.epochs = cfg.finetune_epochs;
  tc.lr = cfg.finetune_lr;
  tc.batch_size = cfg.finetune_batch_size;
  tc.seed = seed_stream(cfg.seed, "harness.finetune", static_cast<std::uint64_t>(size));
  return tc;
}

net::Model finetune_victim(const ExperimentConfig& cfg, const net::Model& backbone,
                           const attack::AssembledDataset& mix, int size,
                           net::TrainHistory* hist) {
  const net::TrainConfig tc = finetune_train_config(cfg, size);
  if (!cfg.finetune_fresh)
    return net::finetune_binary(backbone, mix.data.frames, cfg.source, cfg.target, tc,
                                hist);
  net::Model victim = net::Model::init(
      run_profile(cfg), 2,
      seed_stream(cfg.seed, "harness.victim.init", static_cast<std::uint64_t>(size)));
  std::vector<int> labels;
  labels.reserve(mix.data.frames.size());
  for (const IQFrame& f : mix.data.frames)
    labels.push_back(net::binary_label(f.label, cfg.source, cfg.target));
  net::TrainHistory h = net::train(victim, mix.data.frames, labels, tc);
  if (hist) *hist = std::move(h);
  return victim;
}

void write_history(const net::TrainHistory& h, const fs::path& path) {
  std::ofstream out = open_text(path);
  out << "epoch,loss,accuracy\n";
  for (std::size_t e = 0; e < h.epochs.size(); ++e)
    out << e << ',' << fmt_double(h.epochs[e].loss) << ','
        << fmt_double(h.epochs[e].accuracy) << '\n';
}

std::vector<MetricsRow> eval_rows(const ExperimentConfig& cfg, const net::Model& victim,
                                  const attack::Trigger& trig,
                                  std::span<const int> snr_list,
                                  const std::string& sweep_key, double sweep_value) {
  std::vector<MetricsRow> rows;
  for (int snr : snr_list) {
    const sigsynth::ManifestEntry patched_cell{
        cfg.source, snr, static_cast<std::uint64_t>(cfg.n_test_patched)};
    const sigsynth::ManifestEntry clean_cell{
        cfg.source, snr, static_cast<std::uint64_t>(cfg.n_test_clean)};
    sigsynth::Dataset patched = synth_gained(
        {&patched_cell, 1}, seed_stream(cfg.seed, "harness.test.patched", snr_key(snr)),
        cfg.gain);
    const sigsynth::Dataset clean = synth_gained(
        {&clean_cell, 1}, seed_stream(cfg.seed, "harness.test.clean", snr_key(snr)),
        cfg.gain);
    for (std::size_t i = 0; i < patched.frames.size(); ++i)
      patched.frames[i] = attack::patch(
          patched.frames[i], trig, true,
          seed_stream(cfg.seed, "harness.test.offset", snr_key(snr), i));
    const std::vector<int> pred_p = net::predict(victim, patched.frames);
    const std::vector<int> pred_c = net::predict(victim, clean.frames);
    MetricsRow row;
    row.sweep_key = sweep_key;
    row.sweep_value = sweep_key == "snr" ? snr : sweep_value;
    row.snr_db = snr;
    row.n_patched = static_cast<int>(pred_p.size());
    row.n_clean = static_cast<int>(pred_c.size());
    row.seed = cfg.seed;
    for (int p : pred_p) row.attack_success += p == 1 ? 1.0 : 0.0;
    for (int p : pred_c) row.clean_failure += p != 0 ? 1.0 : 0.0;
    row.attack_success /= row.n_patched;
    row.clean_failure /= row.n_clean;
    rows.push_back(std::move(row));
  }
  return rows;
}

struct ClassSliceView {
  std::vector<IQFrame> frames;
  std::vector<int> labels;  // binary, source 0 / target 1
  std::vector<std::uint8_t> truth;
};

ClassSliceView snr_slice(const ExperimentConfig& cfg, const sigsynth::Dataset& mix,
                         std::span<const std::uint8_t> flags, int snr_db) {
  ClassSliceView v;
  for (std::size_t i = 0; i < mix.frames.size(); ++i) {
    if (mix.frames[i].snr_db != snr_db) continue;
    v.frames.push_back(mix.frames[i]);
    v.labels.push_back(net::binary_label(mix.frames[i].label, cfg.source, cfg.target));
    v.truth.push_back(flags[i]);
  }
  return v;
}

struct DefenseRunResult {
  defense::ClusterReport report;
  defense::ReducedActivations reduced;
};

DefenseRunResult defend_class(const ExperimentConfig& cfg, const net::Model& victim,
                              const ClassSliceView& v, int class_label,
                              std::uint64_t seed) {
  defense::DetectConfig dc = cfg.detect;
  dc.seed = seed;
  DefenseRunResult r;
  r.report = defense::detect(victim, v.frames, v.labels, class_label, dc, v.truth,
                             r.reduced);
  return r;
}

void write_defense_summary(const ExperimentConfig& cfg, const DefenseRunResult& src,
                           const DefenseRunResult& tgt, int snr_db,
                           const fs::path& path) {
  std::ofstream out = open_text(path);
  out << "class,scheme,snr_db,rows,cluster0,cluster1,smaller_fraction,silhouette,"
         "purity,flagged\n";
  auto row = [&](const char* name, ModulationScheme s, const defense::ClusterReport& r) {
    out << name << ',' << scheme_name(s) << ',' << snr_db << ','
        << r.assignments.size() << ',' << r.sizes[0] << ',' << r.sizes[1] << ','
        << fmt_double(r.smaller_fraction) << ',' << fmt_double(r.silhouette) << ','
        << fmt_double(r.purity) << ',' << (r.poisoned_flag ? 1 : 0) << '\n';
  };
  row("source", cfg.source, src.report);
  row("target", cfg.target, tgt.report);
}

void write_audit_summary(const ExperimentConfig& cfg, const hos::AuditReport& report,
                         std::span<const std::uint8_t> flags, const fs::path& path) {
  std::ofstream out = open_text(path);
  out << "kind,label,frames,mismatches,rate\n";
  for (const hos::ClassStat& c : report.per_class)
    out << "class," << scheme_name(c.label) << ',' << c.frames << ',' << c.mismatches
        << ',' << fmt_double(c.rate) << '\n';
  int pois = 0, pois_hit = 0, clean_tgt = 0, clean_hit = 0;
  for (const hos::AuditRow& r : report.rows) {
    const bool flagged = flags[static_cast<std::size_t>(r.frame_id)] != 0;
    if (flagged) {
      ++pois;
      pois_hit += r.mismatch;
    } else if (r.dataset_label == cfg.target) {
      ++clean_tgt;
      clean_hit += r.mismatch;
    }
  }
  out << "injected," << scheme_name(cfg.target) << ',' << pois << ',' << pois_hit << ','
      << fmt_double(pois > 0 ? static_cast<double>(pois_hit) / pois : 0.0) << '\n';
  out << "clean_target," << scheme_name(cfg.target) << ',' << clean_tgt << ','
      << clean_hit << ','
      << fmt_double(clean_tgt > 0 ? static_cast<double>(clean_hit) / clean_tgt : 0.0)
      << '\n';
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  for (int snr = -20; snr <= 18; snr += 2) snrs.push_back(snr);
}

void ExperimentConfig::validate() const {
  if (source == target)
    throw std::invalid_argument("data.source and data.target must differ");
  if (snrs.empty()) throw std::invalid_argument("data.snrs must not be empty");
  for (int snr : snrs)
    if (snr < -128 || snr > 127)
      throw std::invalid_argument("data.snrs entries must fit a signed byte");
  if (gain <= 0) throw std::invalid_argument("data.gain must be positive");
  if (n_poisoned < 0 || n_clean_target < 1 || n_clean_source < 1)
    throw std::invalid_argument("composition counts out of range");
  if (n_test_patched < 1 || n_test_clean < 1)
    throw std::invalid_argument("test sizes must be at least 1");
  profile_by_name(profile);
  if (pretrain_frames_per_cell < 1 || pretrain_epochs < 1 || pretrain_batch_size < 1)
    throw std::invalid_argument("pretrain settings out of range");
  if (trigger_size < 1 || trigger_size > kFrameWidth - 1)
    throw std::invalid_argument("trigger.size must be in [1, 127]");
  if (trigger_sigma <= 0) throw std::invalid_argument("trigger.sigma must be positive");
  if (poison.delta <= 0 || poison.lr <= 0 || poison.num_iter < 0)
    throw std::invalid_argument("poison settings out of range");
  if (finetune_epochs < 1 || finetune_batch_size < 1)
    throw std::invalid_argument("finetune settings out of range");
  if (trojan_count < 1) throw std::invalid_argument("trojan.count must be positive");
  if (detect.ica_dim < 1 || detect_reps < 1)
    throw std::invalid_argument("defense settings out of range");
  if (detect_purity_min <= 0 || detect_purity_min > 1)
    throw std::invalid_argument("defense.purity_min must be in (0, 1]");
  for (int s : sweep_sizes)
    if (s < 1 || s > kFrameWidth - 1)
      throw std::invalid_argument("sweep.sizes entries must be in [1, 127]");
  for (int snr : effective_sweep_snrs())
    if (std::find(snrs.begin(), snrs.end(), snr) == snrs.end())
      throw std::invalid_argument("sweep.snrs must be a subset of data.snrs");
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  using Setter = std::function<void(ExperimentConfig&, const std::string&,
                                    const std::string&)>;
  static const std::map<std::string, Setter> setters = {
      {"data.source", [](auto& c, auto& v, auto&) { c.source = scheme_from_name(v); }},
      {"data.target", [](auto& c, auto& v, auto&) { c.target = scheme_from_name(v); }},
      {"data.snrs", [](auto& c, auto& v, auto& k) { c.snrs = parse_int_list(v, k); }},
      {"data.gain", [](auto& c, auto& v, auto& k) { c.gain = parse_double(v, k); }},
      {"data.poisoned_per_snr",
       [](auto& c, auto& v, auto& k) { c.n_poisoned = (int)parse_long(v, k); }},
      {"data.clean_target_per_snr",
       [](auto& c, auto& v, auto& k) { c.n_clean_target = (int)parse_long(v, k); }},
      {"data.clean_source_per_snr",
       [](auto& c, auto& v, auto& k) { c.n_clean_source = (int)parse_long(v, k); }},
      {"data.test_patched",
       [](auto& c, auto& v, auto& k) { c.n_test_patched = (int)parse_long(v, k); }},
      {"data.test_clean",
       [](auto& c, auto& v, auto& k) { c.n_test_clean = (int)parse_long(v, k); }},
      {"model.profile", [](auto& c, auto& v, auto&) { c.profile = v; }},
      {"pretrain.frames_per_cell",
       [](auto& c, auto& v, auto& k) { c.pretrain_frames_per_cell = (int)parse_long(v, k); }},
      {"pretrain.epochs",
       [](auto& c, auto& v, auto& k) { c.pretrain_epochs = (int)parse_long(v, k); }},
      {"pretrain.lr",
       [](auto& c, auto& v, auto& k) { c.pretrain_lr = parse_double(v, k); }},
      {"pretrain.batch_size",
       [](auto& c, auto& v, auto& k) { c.pretrain_batch_size = (int)parse_long(v, k); }},
      {"trigger.size",
       [](auto& c, auto& v, auto& k) { c.trigger_size = (int)parse_long(v, k); }},
      {"trigger.dist",
       [](auto& c, auto& v, auto&) { c.trigger_dist = dist_from_name(v); }},
      {"trigger.sigma",
       [](auto& c, auto& v, auto& k) { c.trigger_sigma = parse_double(v, k); }},
      {"poison.lr", [](auto& c, auto& v, auto& k) { c.poison.lr = parse_double(v, k); }},
      {"poison.num_iter",
       [](auto& c, auto& v, auto& k) { c.poison.num_iter = (int)parse_long(v, k); }},
      {"poison.delta",
       [](auto& c, auto& v, auto& k) { c.poison.delta = parse_double(v, k); }},
      {"poison.tau_rel",
       [](auto& c, auto& v, auto& k) { c.poison.tau_rel = parse_double(v, k); }},
      {"poison.tau_abs",
       [](auto& c, auto& v, auto& k) { c.poison.tau_abs = parse_double(v, k); }},
      {"poison.lr_patience",
       [](auto& c, auto& v, auto& k) { c.poison.lr_patience = (int)parse_long(v, k); }},
      {"poison.lr_decay",
       [](auto& c, auto& v, auto& k) { c.poison.lr_decay = parse_double(v, k); }},
      {"poison.stop_patience",
       [](auto& c, auto& v, auto& k) { c.poison.stop_patience = (int)parse_long(v, k); }},
      {"poison.pairing",
       [](auto& c, auto& v, auto&) { c.poison.pairing = pairing_from_name(v); }},
      {"poison.resample_offsets",
       [](auto& c, auto& v, auto& k) { c.poison.resample_offsets = parse_bool(v, k); }},
      {"poison.trace_stride",
       [](auto& c, auto& v, auto& k) { c.poison.trace_stride = (int)parse_long(v, k); }},
      {"finetune.epochs",
       [](auto& c, auto& v, auto& k) { c.finetune_epochs = (int)parse_long(v, k); }},
      {"finetune.lr",
       [](auto& c, auto& v, auto& k) { c.finetune_lr = parse_double(v, k); }},
      {"finetune.batch_size",
       [](auto& c, auto& v, auto& k) { c.finetune_batch_size = (int)parse_long(v, k); }},
      {"finetune.init",
       [](auto& c, auto& v, auto&) {
         if (v == "backbone") c.finetune_fresh = false;
         else if (v == "fresh") c.finetune_fresh = true;
         else throw std::invalid_argument("finetune.init: expected backbone or fresh");
       }},
      {"trojan.beta",
       [](auto& c, auto& v, auto& k) { c.trojan_beta = parse_double(v, k); }},
      {"trojan.count",
       [](auto& c, auto& v, auto& k) { c.trojan_count = (int)parse_long(v, k); }},
      {"defense.ica_dim",
       [](auto& c, auto& v, auto& k) { c.detect.ica_dim = (int)parse_long(v, k); }},
      {"defense.f_min",
       [](auto& c, auto& v, auto& k) { c.detect.f_min = parse_double(v, k); }},
      {"defense.s_min",
       [](auto& c, auto& v, auto& k) { c.detect.s_min = parse_double(v, k); }},
      {"defense.reps",
       [](auto& c, auto& v, auto& k) { c.detect_reps = (int)parse_long(v, k); }},
      {"defense.purity_min",
       [](auto& c, auto& v, auto& k) { c.detect_purity_min = parse_double(v, k); }},
      {"sweep.sizes",
       [](auto& c, auto& v, auto& k) { c.sweep_sizes = parse_int_list(v, k); }},
      {"sweep.snrs",
       [](auto& c, auto& v, auto& k) { c.sweep_snrs = parse_int_list(v, k); }},
      {"seed",
       [](auto& c, auto& v, auto& k) {
         c.seed = static_cast<std::uint64_t>(std::stoull(v));
         if (std::to_string(c.seed) != v)
           throw std::invalid_argument(k + ": not an unsigned integer: '" + v + "'");
       }},
      {"out", [](auto& c, auto& v, auto&) { c.out = v; }},
  };
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key=value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end())
      throw std::invalid_argument("unknown config key: " + key);
    it->second(cfg, value, key);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in = open_read(path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str());
}

std::string dump_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "data.source=" << scheme_name(cfg.source) << '\n';
  out << "data.target=" << scheme_name(cfg.target) << '\n';
  out << "data.snrs=" << join_ints(cfg.snrs) << '\n';
  out << "data.gain=" << fmt_double(cfg.gain) << '\n';
  out << "data.poisoned_per_snr=" << cfg.n_poisoned << '\n';
  out << "data.clean_target_per_snr=" << cfg.n_clean_target << '\n';
  out << "data.clean_source_per_snr=" << cfg.n_clean_source << '\n';
  out << "data.test_patched=" << cfg.n_test_patched << '\n';
  out << "data.test_clean=" << cfg.n_test_clean << '\n';
  out << "model.profile=" << cfg.profile << '\n';
  out << "pretrain.frames_per_cell=" << cfg.pretrain_frames_per_cell << '\n';
  out << "pretrain.epochs=" << cfg.pretrain_epochs << '\n';
  out << "pretrain.lr=" << fmt_double(cfg.pretrain_lr) << '\n';
  out << "pretrain.batch_size=" << cfg.pretrain_batch_size << '\n';
  out << "trigger.size=" << cfg.trigger_size << '\n';
  out << "trigger.dist=" << dist_name(cfg.trigger_dist) << '\n';
  out << "trigger.sigma=" << fmt_double(cfg.trigger_sigma) << '\n';
  out << "poison.lr=" << fmt_double(cfg.poison.lr) << '\n';
  out << "poison.num_iter=" << cfg.poison.num_iter << '\n';
  out << "poison.delta=" << fmt_double(cfg.poison.delta) << '\n';
  out << "poison.tau_rel=" << fmt_double(cfg.poison.tau_rel) << '\n';
  out << "poison.tau_abs=" << fmt_double(cfg.poison.tau_abs) << '\n';
  out << "poison.lr_patience=" << cfg.poison.lr_patience << '\n';
  out << "poison.lr_decay=" << fmt_double(cfg.poison.lr_decay) << '\n';
  out << "poison.stop_patience=" << cfg.poison.stop_patience << '\n';
  out << "poison.pairing=" << pairing_name(cfg.poison.pairing) << '\n';
  out << "poison.resample_offsets=" << (cfg.poison.resample_offsets ? 1 : 0) << '\n';
  out << "poison.trace_stride=" << cfg.poison.trace_stride << '\n';
  out << "finetune.epochs=" << cfg.finetune_epochs << '\n';
  out << "finetune.lr=" << fmt_double(cfg.finetune_lr) << '\n';
  out << "finetune.batch_size=" << cfg.finetune_batch_size << '\n';
  out << "finetune.init=" << (cfg.finetune_fresh ? "fresh" : "backbone") << '\n';
  out << "trojan.beta=" << fmt_double(cfg.trojan_beta) << '\n';
  out << "trojan.count=" << cfg.trojan_count << '\n';
  out << "defense.ica_dim=" << cfg.detect.ica_dim << '\n';
  out << "defense.f_min=" << fmt_double(cfg.detect.f_min) << '\n';
  out << "defense.s_min=" << fmt_double(cfg.detect.s_min) << '\n';
  out << "defense.reps=" << cfg.detect_reps << '\n';
  out << "defense.purity_min=" << fmt_double(cfg.detect_purity_min) << '\n';
  out << "sweep.sizes=" << join_ints(cfg.sweep_sizes) << '\n';
  out << "sweep.snrs=" << join_ints(cfg.sweep_snrs) << '\n';
  out << "seed=" << cfg.seed << '\n';
  out << "out=" << cfg.out.string() << '\n';
  return out.str();
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::istringstream in(dump_config(cfg));
  std::string line, canon;
  while (std::getline(in, line))
    if (line.rfind("out=", 0) != 0) canon += line + '\n';
  return sha256_hex(canon);
}

void write_metrics_csv(std::span<const MetricsRow> rows, const fs::path& path) {
  std::ofstream out = open_text(path);
  out << kMetricsHeader << '\n';
  for (const MetricsRow& r : rows)
    out << r.sweep_key << ',' << fmt_double(r.sweep_value) << ',' << r.snr_db << ','
        << fmt_double(r.attack_success) << ',' << fmt_double(r.clean_failure) << ','
        << r.n_patched << ',' << r.n_clean << ',' << r.seed << '\n';
}

std::vector<MetricsRow> read_metrics_csv(const fs::path& path) {
  std::ifstream in = open_read(path);
  std::vector<MetricsRow> rows;
  for (const std::string& row : read_csv_body(in, path, kMetricsHeader)) {
    auto f = split(row, ',');
    if (f.size() != 8) throw FormatError(path.string() + ": bad column count");
    MetricsRow r;
    r.sweep_key = trim(f[0]);
    r.sweep_value = parse_double(trim(f[1]), "sweep_value");
    r.snr_db = static_cast<int>(parse_long(trim(f[2]), "snr_db"));
    r.attack_success = parse_double(trim(f[3]), "attack_success");
    r.clean_failure = parse_double(trim(f[4]), "clean_failure");
    r.n_patched = static_cast<int>(parse_long(trim(f[5]), "n_patched"));
    r.n_clean = static_cast<int>(parse_long(trim(f[6]), "n_clean"));
    r.seed = std::stoull(trim(f[7]));
    rows.push_back(std::move(r));
  }
  return rows;
}

fs::path RunPaths::poison_traces(int snr_db) const {
  return root / ("poison_traces_" + std::to_string(snr_db) + "db.csv");
}

fs::path RunPaths::sweep_dir(int size) const {
  return root / ("sweep_s" + std::to_string(size));
}

net::Profile profile_by_name(const std::string& name) {
  if (name == "full") return net::Profile::full();
  if (name == "tiny") return net::Profile::tiny();
  throw std::invalid_argument("model.profile: expected full or tiny, got '" + name +
                              "'");
}

attack::Trigger make_run_trigger(const ExperimentConfig& cfg, int size) {
  const attack::Trigger unit = attack::make_trigger(
      size, cfg.trigger_dist, cfg.trigger_sigma,
      seed_stream(cfg.seed, "harness.trigger", static_cast<std::uint64_t>(size)));
  return attack::scale_trigger(unit, static_cast<float>(cfg.gain));
}

void run_synth(const ExperimentConfig& cfg) {
  cfg.validate();
  RunPaths rp(cfg.out);
  fs::create_directories(rp.root);
  std::vector<sigsynth::ManifestEntry> pre;
  for (int snr : cfg.snrs)
    for (int s = 0; s < kNumSchemes; ++s)
      pre.push_back({static_cast<ModulationScheme>(s), snr,
                     static_cast<std::uint64_t>(cfg.pretrain_frames_per_cell)});
  sigsynth::write_dataset(
      synth_gained(pre, seed_stream(cfg.seed, "harness.synth.pretrain"), cfg.gain),
      rp.pretrain_set());
  const auto cells = pool_cells(cfg);
  sigsynth::write_dataset(
      synth_gained(cells, seed_stream(cfg.seed, "harness.synth.pool"), cfg.gain),
      rp.train_pool());
  std::cerr << "[synth] " << rp.pretrain_set().filename().string() << " + "
            << rp.train_pool().filename().string() << " under " << rp.root.string()
            << "\n";
}

void run_pretrain(const ExperimentConfig& cfg) {
  RunPaths rp(cfg.out);
  const sigsynth::Dataset pre = sigsynth::read_dataset(rp.pretrain_set());
  net::Model backbone = net::Model::init(run_profile(cfg), kNumSchemes,
                                         seed_stream(cfg.seed, "harness.init"));
  std::vector<int> labels;
  labels.reserve(pre.frames.size());
  for (const IQFrame& f : pre.frames) labels.push_back(static_cast<int>(f.label));
  net::TrainConfig tc;
  tc.epochs = cfg.pretrain_epochs;
  tc.lr = cfg.pretrain_lr;
  tc.batch_size = cfg.pretrain_batch_size;
  tc.seed = seed_stream(cfg.seed, "harness.pretrain");
  net::train(backbone, pre.frames, labels, tc);
  net::save_model(backbone, rp.backbone());
  std::cerr << "[pretrain] " << pre.frames.size() << " frames, train accuracy "
            << net::accuracy(backbone, pre.frames, labels) << "\n";
}

void run_poison(const ExperimentConfig& cfg) {
  RunPaths rp(cfg.out);
  const sigsynth::Dataset pool = sigsynth::read_dataset(rp.train_pool());
  check_pool(pool, cfg);
  const net::Model backbone = net::load_model(rp.backbone());
  const attack::Trigger trig = make_run_trigger(cfg, cfg.trigger_size);
  attack::write_trigger(trig, rp.trigger());
  const CraftOutput crafted = craft_all(cfg, pool, backbone, trig, cfg.snrs, rp);
  sigsynth::write_dataset(crafted.poisoned, rp.poisoned());
  sigsynth::write_dataset(crafted.patched, rp.patched_sources());
  write_constellation_pair(cfg, crafted, pool, cfg.snrs, rp.constellation_pair());
}

void run_assemble(const ExperimentConfig& cfg) {
  RunPaths rp(cfg.out);
  const sigsynth::Dataset pool = sigsynth::read_dataset(rp.train_pool());
  check_pool(pool, cfg);
  const sigsynth::Dataset poisoned = sigsynth::read_dataset(rp.poisoned());
  const attack::AssembledDataset mix = assemble_all(cfg, pool, poisoned, cfg.snrs);
  sigsynth::write_dataset(mix.data, rp.victim_train());
  write_flags(mix.poisoned_flag, rp.victim_flags());
  std::cerr << "[assemble] " << mix.data.frames.size() << " frames, "
            << std::count(mix.poisoned_flag.begin(), mix.poisoned_flag.end(), 1)
            << " poisoned\n";
}

void run_finetune(const ExperimentConfig& cfg) {
  RunPaths rp(cfg.out);
  const net::Model backbone = net::load_model(rp.backbone());
  attack::AssembledDataset mix;
  mix.data = sigsynth::read_dataset(rp.victim_train());
  mix.poisoned_flag = read_flags(rp.victim_flags());
  net::TrainHistory hist;
  const net::Model victim =
      finetune_victim(cfg, backbone, mix, cfg.trigger_size, &hist);
  net::save_model(victim, rp.victim());
  write_history(hist, rp.finetune_history());
  std::cerr << "[finetune] " << mix.data.frames.size() << " frames, final accuracy "
            << (hist.epochs.empty() ? 0.0 : hist.epochs.back().accuracy) << "\n";
}

void run_eval(const ExperimentConfig& cfg) {
  RunPaths rp(cfg.out);
  const net::Model victim = net::load_model(rp.victim());
  const attack::Trigger trig = attack::read_trigger(rp.trigger());
  const std::vector<MetricsRow> rows = run_attack_eval(cfg, victim, trig);
  write_metrics_csv(rows, rp.metrics_snr());
  double worst = 1.0;
  for (const MetricsRow& r : rows) worst = std::min(worst, r.attack_success);
  std::cerr << "[eval] " << rows.size() << " SNR points, min attack success " << worst
            << "\n";
}

void run_audit(const ExperimentConfig& cfg) {
  RunPaths rp(cfg.out);
  sigsynth::Dataset mix = sigsynth::read_dataset(rp.victim_train());
  const std::vector<std::uint8_t> flags = read_flags(rp.victim_flags());
  const hos::AuditReport report = hos::audit_labels(mix, hos::PrototypeTable::standard());
  hos::write_audit_csv(report, rp.hos_audit());
  write_audit_summary(cfg, report, flags, rp.hos_summary());
  std::cerr << "[audit] " << report.rows.size() << " frames audited\n";
}

void run_defend(const ExperimentConfig& cfg) {
  RunPaths rp(cfg.out);
  const net::Model victim = net::load_model(rp.victim());
  sigsynth::Dataset mix = sigsynth::read_dataset(rp.victim_train());
  const std::vector<std::uint8_t> flags = read_flags(rp.victim_flags());
  const int snr = top_snr(cfg);
  const ClassSliceView v = snr_slice(cfg, mix, flags, snr);
  const DefenseRunResult src = defend_class(
      cfg, victim, v, 0, seed_stream(cfg.seed, "harness.defend", 0, snr_key(snr)));
  const DefenseRunResult tgt = defend_class(
      cfg, victim, v, 1, seed_stream(cfg.seed, "harness.defend", 1, snr_key(snr)));
  defense::write_scatter_csv(src.reduced, src.report, v.truth, rp.scatter_source());
  defense::write_scatter_csv(tgt.reduced, tgt.report, v.truth, rp.scatter_target());
  write_defense_summary(cfg, src, tgt, snr, rp.defense_summary());
  std::cerr << "[defend] snr " << snr << ": target flagged "
            << (tgt.report.poisoned_flag ? "yes" : "no") << ", purity "
            << tgt.report.purity << ", source flagged "
            << (src.report.poisoned_flag ? "yes" : "no") << "\n";
}

std::vector<MetricsRow> run_attack_eval(const ExperimentConfig& cfg,
                                        const net::Model& victim,
                                        const attack::Trigger& trig) {
  return eval_rows(cfg, victim, trig, cfg.snrs, "snr", 0.0);
}

std::vector<MetricsRow> run_trigger_size_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  RunPaths rp(cfg.out);
  const sigsynth::Dataset pool = sigsynth::read_dataset(rp.train_pool());
  check_pool(pool, cfg);
  const net::Model backbone = net::load_model(rp.backbone());
  const std::vector<int>& snrs = cfg.effective_sweep_snrs();
  std::vector<MetricsRow> rows;
  for (int size : cfg.sweep_sizes) {
    RunPaths srp(rp.sweep_dir(size));
    fs::create_directories(srp.root);
    const attack::Trigger trig = make_run_trigger(cfg, size);
    attack::write_trigger(trig, srp.trigger());
    const CraftOutput crafted = craft_all(cfg, pool, backbone, trig, snrs, srp);
    sigsynth::write_dataset(crafted.poisoned, srp.poisoned());
    sigsynth::write_dataset(crafted.patched, srp.patched_sources());
    const attack::AssembledDataset mix = assemble_all(cfg, pool, crafted.poisoned, snrs);
    sigsynth::write_dataset(mix.data, srp.victim_train());
    write_flags(mix.poisoned_flag, srp.victim_flags());
    net::TrainHistory hist;
    const net::Model victim = finetune_victim(cfg, backbone, mix, size, &hist);
    net::save_model(victim, srp.victim());
    write_history(hist, srp.finetune_history());
    std::vector<MetricsRow> part =
        eval_rows(cfg, victim, trig, snrs, "trigger_size", size);
    write_metrics_csv(part, srp.metrics_snr());
    double worst = 1.0;
    for (const MetricsRow& r : part) worst = std::min(worst, r.attack_success);
    std::cerr << "[sweep] size " << size << ": min attack success " << worst << "\n";
    rows.insert(rows.end(), part.begin(), part.end());
  }
  write_metrics_csv(rows, rp.sweep_trigger());
  return rows;
}

std::vector<MetricsRow> run_trojan_baseline(const ExperimentConfig& cfg) {
  cfg.validate();
  RunPaths rp(cfg.out);
  const sigsynth::Dataset pool = sigsynth::read_dataset(rp.train_pool());
  check_pool(pool, cfg);
  const net::Model backbone = net::load_model(rp.backbone());
  const int snr = top_snr(cfg);

  const sigsynth::ManifestEntry cell{cfg.source, snr,
                                     static_cast<std::uint64_t>(cfg.trojan_count)};
  const sigsynth::Dataset raw = synth_gained(
      {&cell, 1}, seed_stream(cfg.seed, "harness.trojan.synth"), cfg.gain);
  const std::vector<IQFrame> rotated = attack::rotate_trojan(raw.frames, cfg.trojan_beta);

  attack::Composition comp = composition(cfg);
  comp.n_poisoned = cfg.trojan_count;
  const attack::AssembledDataset mix = attack::assemble_trojan_dataset(
      clean_slice_dataset(pool_slices(pool, cfg, snr)), rotated, comp,
      seed_stream(cfg.seed, "harness.trojan.assemble"));
  sigsynth::write_dataset(mix.data, rp.trojan_train());
  write_flags(mix.poisoned_flag, rp.trojan_flags());

  const hos::AuditReport report =
      hos::audit_labels(mix.data, hos::PrototypeTable::standard());
  hos::write_audit_csv(report, rp.trojan_audit());
  write_audit_summary(cfg, report, mix.poisoned_flag, rp.trojan_summary());

  net::TrainConfig tc = finetune_train_config(cfg, cfg.trigger_size);
  tc.seed = seed_stream(cfg.seed, "harness.trojan.finetune");
  const net::Model victim =
      net::finetune_binary(backbone, mix.data.frames, cfg.source, cfg.target, tc);

  const sigsynth::ManifestEntry test_cell{
      cfg.source, snr, static_cast<std::uint64_t>(cfg.n_test_patched)};
  const sigsynth::Dataset test_raw = synth_gained(
      {&test_cell, 1}, seed_stream(cfg.seed, "harness.trojan.test"), cfg.gain);
  const std::vector<IQFrame> test_rot =
      attack::rotate_trojan(test_raw.frames, cfg.trojan_beta);
  const sigsynth::ManifestEntry clean_cell{
      cfg.source, snr, static_cast<std::uint64_t>(cfg.n_test_clean)};
  const sigsynth::Dataset clean = synth_gained(
      {&clean_cell, 1}, seed_stream(cfg.seed, "harness.trojan.test.clean"), cfg.gain);

  MetricsRow row;
  row.sweep_key = "trojan_beta";
  row.sweep_value = cfg.trojan_beta;
  row.snr_db = snr;
  row.n_patched = static_cast<int>(test_rot.size());
  row.n_clean = static_cast<int>(clean.frames.size());
  row.seed = cfg.seed;
  for (int p : net::predict(victim, test_rot)) row.attack_success += p == 1 ? 1.0 : 0.0;
  for (int p : net::predict(victim, clean.frames)) row.clean_failure += p != 0 ? 1.0 : 0.0;
  row.attack_success /= row.n_patched;
  row.clean_failure /= row.n_clean;
  std::vector<MetricsRow> rows{row};
  write_metrics_csv(rows, rp.trojan_metrics());
  std::cerr << "[trojan] snr " << snr << ": attack success " << row.attack_success
            << ", clean failure " << row.clean_failure << "\n";
  return rows;
}

std::vector<DetectionSweepRow> run_detection_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  RunPaths rp(cfg.out);
  const std::vector<int>& snrs = cfg.effective_sweep_snrs();
  std::vector<DetectionSweepRow> rows;
  for (int size : cfg.sweep_sizes) {
    RunPaths srp(rp.sweep_dir(size));
    const net::Model victim = net::load_model(srp.victim());
    sigsynth::Dataset mix = sigsynth::read_dataset(srp.victim_train());
    const std::vector<std::uint8_t> flags = read_flags(srp.victim_flags());
    for (int snr : snrs) {
      const ClassSliceView v = snr_slice(cfg, mix, flags, snr);
      const net::ActivationMatrix acts_t =
          net::activations(victim, v.frames, v.labels, 1);
      const net::ActivationMatrix acts_s =
          net::activations(victim, v.frames, v.labels, 0);
      std::vector<std::uint8_t> truth_t, truth_s;
      for (int id : acts_t.sample_ids)
        truth_t.push_back(v.truth[static_cast<std::size_t>(id)]);
      for (int id : acts_s.sample_ids)
        truth_s.push_back(v.truth[static_cast<std::size_t>(id)]);
      DetectionSweepRow row{size, snr, cfg.detect_reps, 0.0, 0.0};
      for (int rep = 0; rep < cfg.detect_reps; ++rep) {
        const std::uint64_t rs =
            seed_stream(cfg.seed, "harness.detect", static_cast<std::uint64_t>(size),
                        snr_key(snr) * 4096 + static_cast<std::uint64_t>(rep));
        // Same reduction and rule as defense::detect, activations reused
        // across repetitions.
        const defense::ReducedActivations red_t =
            defense::ica_reduce(acts_t, cfg.detect.ica_dim, rs);
        defense::ClusterReport rep_t = defense::kmeans2(red_t.rows, rs, truth_t);
        const bool flagged = rep_t.smaller_fraction >= cfg.detect.f_min &&
                             rep_t.silhouette >= cfg.detect.s_min;
        if (flagged && rep_t.purity >= cfg.detect_purity_min) row.success_rate += 1.0;
        const defense::ReducedActivations red_s =
            defense::ica_reduce(acts_s, cfg.detect.ica_dim, rs);
        defense::ClusterReport rep_s = defense::kmeans2(red_s.rows, rs, truth_s);
        if (rep_s.smaller_fraction >= cfg.detect.f_min &&
            rep_s.silhouette >= cfg.detect.s_min)
          row.false_alarm_rate += 1.0;
      }
      row.success_rate /= cfg.detect_reps;
      row.false_alarm_rate /= cfg.detect_reps;
      rows.push_back(row);
    }
    std::cerr << "[detect] size " << size << " done\n";
  }
  write_detection_csv(rows, rp.detection_sweep());
  return rows;
}

void write_detection_csv(std::span<const DetectionSweepRow> rows, const fs::path& path) {
  std::ofstream out = open_text(path);
  out << kDetectionHeader << '\n';
  for (const DetectionSweepRow& r : rows)
    out << r.trigger_size << ',' << r.snr_db << ',' << r.repetitions << ','
        << fmt_double(r.success_rate) << ',' << fmt_double(r.false_alarm_rate) << '\n';
}

std::vector<DetectionSweepRow> read_detection_csv(const fs::path& path) {
  std::ifstream in = open_read(path);
  std::vector<DetectionSweepRow> rows;
  for (const std::string& row : read_csv_body(in, path, kDetectionHeader)) {
    auto f = split(row, ',');
    if (f.size() != 5) throw FormatError(path.string() + ": bad column count");
    DetectionSweepRow r;
    r.trigger_size = static_cast<int>(parse_long(trim(f[0]), "trigger_size"));
    r.snr_db = static_cast<int>(parse_long(trim(f[1]), "snr_db"));
    r.repetitions = static_cast<int>(parse_long(trim(f[2]), "repetitions"));
    r.success_rate = parse_double(trim(f[3]), "success_rate");
    r.false_alarm_rate = parse_double(trim(f[4]), "false_alarm_rate");
    rows.push_back(r);
  }
  return rows;
}

void write_manifest(const RunManifest& m, const fs::path& path) {
  nlohmann::ordered_json doc;
  doc["config_hash"] = m.config_hash;
  doc["seed"] = m.seed;
  doc["profile"] = m.profile;
  doc["stages"] = nlohmann::ordered_json::array();
  for (const StageRecord& s : m.stages) {
    nlohmann::ordered_json stage;
    stage["name"] = s.name;
    stage["status"] = s.status;
    stage["wall_ms"] = s.wall_ms;
    stage["artifacts"] = s.artifacts;
    doc["stages"].push_back(stage);
  }
  std::ofstream out = open_text(path);
  out << doc.dump(2) << '\n';
}

RunManifest pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  RunPaths rp(cfg.out);
  fs::create_directories(rp.root);
  using Stage = void (*)(const ExperimentConfig&);
  struct Entry {
    const char* name;
    Stage fn;
    std::vector<fs::path> artifacts;
  };
  std::vector<fs::path> traces;
  for (int snr : cfg.snrs) traces.push_back(rp.poison_traces(snr));
  std::vector<fs::path> poison_artifacts{rp.trigger(), rp.poisoned(),
                                         rp.patched_sources(), rp.poison_stats(),
                                         rp.constellation_pair()};
  poison_artifacts.insert(poison_artifacts.end(), traces.begin(), traces.end());
  const std::vector<Entry> stages = {
      {"synth", &run_synth, {rp.pretrain_set(), rp.train_pool()}},
      {"pretrain", &run_pretrain, {rp.backbone()}},
      {"poison", &run_poison, poison_artifacts},
      {"assemble", &run_assemble, {rp.victim_train(), rp.victim_flags()}},
      {"finetune", &run_finetune, {rp.victim(), rp.finetune_history()}},
      {"eval", &run_eval, {rp.metrics_snr()}},
      {"audit", &run_audit, {rp.hos_audit(), rp.hos_summary()}},
      {"defend", &run_defend,
       {rp.scatter_source(), rp.scatter_target(), rp.defense_summary()}},
  };
  RunManifest m;
  m.config_hash = config_hash(cfg);
  m.seed = cfg.seed;
  m.profile = cfg.profile;
  for (const Entry& e : stages) {
    StageRecord rec;
    rec.name = e.name;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      e.fn(cfg);
    } catch (const std::exception& ex) {
      rec.status = std::string("failed: ") + ex.what();
      rec.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
      m.stages.push_back(std::move(rec));
      write_manifest(m, rp.manifest());
      throw;
    }
    rec.status = "ok";
    rec.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    for (const fs::path& a : e.artifacts)
      if (fs::exists(a)) rec.artifacts.push_back(fs::relative(a, rp.root).string());
    m.stages.push_back(std::move(rec));
    write_manifest(m, rp.manifest());
  }
  return m;
}

}  // namespace mp::harness
