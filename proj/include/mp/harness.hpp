#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mp/attack.hpp"
#include "mp/defense.hpp"
#include "mp/hos.hpp"
#include "mp/net.hpp"
#include "mp/sigsynth.hpp"

namespace mp::harness {

/**
 * Every knob of one experiment run. Defaults reproduce the reference
 * protocol: 8PSK source, BPSK target, SNR grid -20..18 dB, 100 poisoned +
 * 150 clean target + 250 clean source frames per SNR, one pooled binary
 * victim, 200 patched + 200 clean test frames per SNR.
 *
 * `gain` converts the synthesizer's unit-power frames into received-sample
 * units; delta and the trigger payload live in those units. The trigger
 * sigma is specified relative to unit signal power and is multiplied by
 * gain when the trigger is materialized.
 */
struct ExperimentConfig {
  // data.*
  ModulationScheme source = ModulationScheme::Psk8;
  ModulationScheme target = ModulationScheme::Bpsk;
  std::vector<int> snrs;  // default -20..18 step 2, set by the constructor
  double gain = 0.005;
  int n_poisoned = 100;      // per SNR
  int n_clean_target = 150;  // per SNR
  int n_clean_source = 250;  // per SNR
  int n_test_patched = 200;  // per SNR
  int n_test_clean = 200;    // per SNR

  // model.*
  std::string profile = "full";  // "full" or "tiny"

  // pretrain.*
  int pretrain_frames_per_cell = 25;
  int pretrain_epochs = 20;
  double pretrain_lr = 1e-3;
  int pretrain_batch_size = 64;

  // trigger.*
  int trigger_size = 40;
  attack::Trigger::Dist trigger_dist = attack::Trigger::Dist::Normal;
  double trigger_sigma = 10.0;  // payload std in units of unit signal power

  // poison.*
  attack::PoisonConfig poison;  // lr 1e-5, num_iter 5000, delta 1e-4

  // finetune.*
  int finetune_epochs = 20;
  double finetune_lr = 1e-3;
  int finetune_batch_size = 64;
  bool finetune_fresh = false;  // true: random-init victim instead of the backbone

  // trojan.*
  double trojan_beta = 0.78539816339744831;  // pi/4
  int trojan_count = 400;

  // defense.*
  defense::DetectConfig detect;
  int detect_reps = 20;
  double detect_purity_min = 0.9;  // a repetition succeeds when flagged at this purity

  // sweep.*
  std::vector<int> sweep_sizes{20, 30, 40, 50, 60};
  std::vector<int> sweep_snrs;  // empty: fall back to data.snrs

  // run
  std::uint64_t seed = 0;
  std::filesystem::path out = "runs/default";

  ExperimentConfig();

  const std::vector<int>& effective_sweep_snrs() const {
    return sweep_snrs.empty() ? snrs : sweep_snrs;
  }

  // Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

/**
 * Line-oriented UTF-8 config: `key = value`, one per line, '#' comments,
 * dotted keys (poison.lr=0.00001). Integer lists accept both comma form
 * (0,2,4) and range form (lo..hi:step). Unknown keys throw. Values update
 * the defaults, so a config file only lists what it changes.
 */
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Every key with its current value, in canonical order; parse(dump(c)) == c.
std::string dump_config(const ExperimentConfig& cfg);

// SHA-256 hex of the canonical dump minus the output directory, which is
// the one key that cannot change results.
std::string config_hash(const ExperimentConfig& cfg);

/** One evaluated point of a sweep; the row layout of every metrics CSV. */
struct MetricsRow {
  std::string sweep_key;   // "snr", "trigger_size" or "trojan_beta"
  double sweep_value = 0.0;
  int snr_db = 0;
  double attack_success = 0.0;
  double clean_failure = 0.0;
  int n_patched = 0;
  int n_clean = 0;
  std::uint64_t seed = 0;
};

// CSV header: sweep_key,sweep_value,snr_db,attack_success,clean_failure,
// n_patched,n_clean,seed. Readers throw FormatError on malformed or
// data-free files.
void write_metrics_csv(std::span<const MetricsRow> rows,
                       const std::filesystem::path& path);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

/** Artifact layout under cfg.out; every stage reads and writes these. */
struct RunPaths {
  std::filesystem::path root;
  explicit RunPaths(const std::filesystem::path& out) : root(out) {}

  std::filesystem::path pretrain_set() const { return root / "pretrain.mpds"; }
  std::filesystem::path train_pool() const { return root / "train_pool.mpds"; }
  std::filesystem::path backbone() const { return root / "backbone.mpnn"; }
  std::filesystem::path trigger() const { return root / "trigger.mptr"; }
  std::filesystem::path poisoned() const { return root / "poisoned.mpds"; }
  std::filesystem::path patched_sources() const { return root / "patched_sources.mpds"; }
  std::filesystem::path poison_stats() const { return root / "poison_stats.csv"; }
  std::filesystem::path poison_traces(int snr_db) const;
  std::filesystem::path constellation_pair() const { return root / "constellation_pair.csv"; }
  std::filesystem::path victim_train() const { return root / "victim_train.mpds"; }
  std::filesystem::path victim_flags() const { return root / "victim_flags.csv"; }
  std::filesystem::path victim() const { return root / "victim.mpnn"; }
  std::filesystem::path finetune_history() const { return root / "finetune_history.csv"; }
  std::filesystem::path metrics_snr() const { return root / "metrics_snr.csv"; }
  std::filesystem::path hos_audit() const { return root / "hos_audit.csv"; }
  std::filesystem::path hos_summary() const { return root / "hos_summary.csv"; }
  std::filesystem::path scatter_target() const { return root / "scatter_target.csv"; }
  std::filesystem::path scatter_source() const { return root / "scatter_source.csv"; }
  std::filesystem::path defense_summary() const { return root / "defense_summary.csv"; }
  std::filesystem::path sweep_trigger() const { return root / "sweep_trigger.csv"; }
  std::filesystem::path sweep_dir(int size) const;
  std::filesystem::path detection_sweep() const { return root / "detection_sweep.csv"; }
  std::filesystem::path trojan_train() const { return root / "trojan_train.mpds"; }
  std::filesystem::path trojan_flags() const { return root / "trojan_flags.csv"; }
  std::filesystem::path trojan_audit() const { return root / "trojan_audit.csv"; }
  std::filesystem::path trojan_summary() const { return root / "trojan_summary.csv"; }
  std::filesystem::path trojan_metrics() const { return root / "metrics_trojan.csv"; }
  std::filesystem::path figures_dir() const { return root / "figures"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
};

// Stages, each re-runnable from the artifacts of the previous ones.
void run_synth(const ExperimentConfig& cfg);
void run_pretrain(const ExperimentConfig& cfg);
void run_poison(const ExperimentConfig& cfg);
void run_assemble(const ExperimentConfig& cfg);
void run_finetune(const ExperimentConfig& cfg);
void run_eval(const ExperimentConfig& cfg);
void run_audit(const ExperimentConfig& cfg);
void run_defend(const ExperimentConfig& cfg);

/**
 * Fresh per-SNR test protocol: n_test_patched source frames with the
 * trigger superposed at per-frame random offsets, n_test_clean plain source
 * frames. attack_success is the patched fraction classified as the target,
 * clean_failure the clean fraction not classified as the source. Test
 * frames come from substreams disjoint from every training stream.
 */
std::vector<MetricsRow> run_attack_eval(const ExperimentConfig& cfg,
                                        const net::Model& victim,
                                        const attack::Trigger& trig);

/**
 * Re-runs trigger -> poison -> assemble -> finetune -> eval per size over
 * effective_sweep_snrs(), one victim per size saved under sweep_s<size>/.
 * Needs the synth and pretrain artifacts of cfg.out.
 */
std::vector<MetricsRow> run_trigger_size_sweep(const ExperimentConfig& cfg);

/**
 * Givens-rotation baseline at the top SNR of the grid: trojan.count source
 * frames rotated by beta and relabeled as the target, mixed with the clean
 * composition, HOS-audited, then a victim is fine-tuned on the mix and
 * evaluated at that SNR. Returns the eval rows (sweep_key "trojan_beta").
 */
std::vector<MetricsRow> run_trojan_baseline(const ExperimentConfig& cfg);

struct DetectionSweepRow {
  int trigger_size = 0;
  int snr_db = 0;
  int repetitions = 0;
  double success_rate = 0.0;     // flagged with purity >= detect_purity_min
  double false_alarm_rate = 0.0; // source class flagged
};

/**
 * Defense grid over the sweep victims: per (size, snr), detect() runs
 * detect_reps times with distinct seeds on the target-class slice of that
 * victim's training mix, and on the source-class slice for false alarms.
 * Needs run_trigger_size_sweep artifacts.
 */
std::vector<DetectionSweepRow> run_detection_sweep(const ExperimentConfig& cfg);

void write_detection_csv(std::span<const DetectionSweepRow> rows,
                         const std::filesystem::path& path);
std::vector<DetectionSweepRow> read_detection_csv(const std::filesystem::path& path);

/**
 * Renders the figure set from the CSV artifacts present under run_dir into
 * run_dir/figures: fig4 (target vs poisoned constellation), fig6 (trigger
 * size sweep), fig7 (SNR sweep), fig10 (defense scatter), fig11 (detection
 * sweep). SVG output is deterministic: identical inputs give identical
 * bytes. Returns the paths written; a present-but-empty CSV throws
 * FormatError and writes nothing.
 */
std::vector<std::filesystem::path> emit_figures(const std::filesystem::path& run_dir);

struct StageRecord {
  std::string name;
  std::string status;  // "ok" or "failed: <what>"
  double wall_ms = 0.0;
  std::vector<std::string> artifacts;
};

struct RunManifest {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string profile;
  std::vector<StageRecord> stages;
};

/**
 * synth -> pretrain -> poison -> assemble -> finetune -> eval -> audit ->
 * defend, in order, timing each stage and rewriting out/manifest.json after
 * every one. A stage failure is recorded in the manifest and rethrown.
 */
RunManifest pipeline(const ExperimentConfig& cfg);

void write_manifest(const RunManifest& m, const std::filesystem::path& path);

// The model profile named by cfg.profile; throws on unknown names.
net::Profile profile_by_name(const std::string& name);

// The materialized trigger of the run: payload sigma trigger_sigma * gain,
// deterministic in (seed, size).
attack::Trigger make_run_trigger(const ExperimentConfig& cfg, int size);

}  // namespace mp::harness
