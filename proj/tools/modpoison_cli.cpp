// Command-line front end over the experiment harness. Every subcommand is a
// stage or sweep that reads and writes artifacts under --out, so a run can
// be executed end to end (pipeline) or resumed piecewise.
#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>

#include "mp/checkpoint.hpp"
#include "mp/harness.hpp"

namespace {

void print_rows(const std::vector<mp::harness::MetricsRow>& rows) {
  std::cout << "sweep_key,sweep_value,snr_db,attack_success,clean_failure,"
               "n_patched,n_clean,seed\n";
  for (const auto& r : rows)
    std::cout << r.sweep_key << ',' << r.sweep_value << ',' << r.snr_db << ','
              << r.attack_success << ',' << r.clean_failure << ',' << r.n_patched
              << ',' << r.n_clean << ',' << r.seed << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"modpoison: hidden backdoor attack laboratory for modulation classifiers"};
  app.require_subcommand(0, 1);

  std::string config_path, out_override, profile_override;
  std::uint64_t seed_override = 0;
  bool dump = false;
  auto* opt_config = app.add_option("--config", config_path, "experiment config file")
                         ->check(CLI::ExistingFile);
  auto* opt_seed = app.add_option("--seed", seed_override, "master seed override");
  auto* opt_out = app.add_option("--out", out_override, "output directory override");
  auto* opt_profile =
      app.add_option("--profile", profile_override, "model profile override")
          ->check(CLI::IsMember({"tiny", "full"}));
  app.add_flag("--dump-config", dump, "print the effective config and exit");

  auto* sc_synth = app.add_subcommand(
      "synth", "synthesize the pretraining set and the clean training pool");
  auto* sc_train =
      app.add_subcommand("train", "pretrain the multiclass backbone classifier");
  auto* sc_poison = app.add_subcommand(
      "poison", "craft the feature-collision poisons against the backbone");
  auto* sc_finetune = app.add_subcommand(
      "finetune", "assemble the poisoned mix and fine-tune the binary victim");
  auto* sc_eval = app.add_subcommand(
      "eval-attack", "evaluate the victim on fresh patched and clean frames");
  int eval_snr = 0;
  auto* opt_eval_snr =
      sc_eval->add_option("--snr", eval_snr, "evaluate this SNR only (default: top)");
  auto* sc_sweep_trigger = app.add_subcommand(
      "sweep-trigger", "re-run poison/finetune/eval per trigger size");
  auto* sc_sweep_snr = app.add_subcommand(
      "sweep-snr", "evaluate the victim across the SNR grid into metrics_snr.csv");
  auto* sc_trojan = app.add_subcommand(
      "trojan", "rotation-attack baseline: assemble, audit, train and evaluate");
  auto* sc_audit = app.add_subcommand(
      "hos-audit", "cumulant label audit of the assembled training mix");
  auto* sc_defend =
      app.add_subcommand("defend", "activation clustering on the victim's mix");
  bool defend_sweep = false;
  sc_defend->add_flag("--sweep", defend_sweep,
                      "run the detection grid over the sweep victims instead");
  auto* sc_figures =
      app.add_subcommand("figures", "render SVG figures from the run's CSV artifacts");
  auto* sc_pipeline =
      app.add_subcommand("pipeline", "run every stage in order and write the manifest");

  CLI11_PARSE(app, argc, argv);

  try {
    mp::harness::ExperimentConfig cfg;
    if (*opt_config) cfg = mp::harness::load_config(config_path);
    if (*opt_seed) cfg.seed = seed_override;
    if (*opt_out) cfg.out = out_override;
    if (*opt_profile) cfg.profile = profile_override;
    cfg.validate();

    if (dump) {
      std::cout << mp::harness::dump_config(cfg);
      return 0;
    }
    if (app.get_subcommands().empty()) {
      std::cerr << app.help();
      return 1;
    }

    if (*sc_synth) mp::harness::run_synth(cfg);
    if (*sc_train) mp::harness::run_pretrain(cfg);
    if (*sc_poison) mp::harness::run_poison(cfg);
    if (*sc_finetune) {
      mp::harness::run_assemble(cfg);
      mp::harness::run_finetune(cfg);
    }
    if (*sc_eval) {
      mp::harness::RunPaths rp(cfg.out);
      const auto victim = mp::net::load_model(rp.victim());
      const auto trig = mp::attack::read_trigger(rp.trigger());
      mp::harness::ExperimentConfig one = cfg;
      if (*opt_eval_snr) {
        one.snrs = {eval_snr};
        one.sweep_snrs.clear();
      }
      print_rows(mp::harness::run_attack_eval(one, victim, trig));
    }
    if (*sc_sweep_trigger) {
      mp::harness::run_trigger_size_sweep(cfg);
      std::cout << mp::harness::RunPaths(cfg.out).sweep_trigger().string() << '\n';
    }
    if (*sc_sweep_snr) {
      mp::harness::run_eval(cfg);
      std::cout << mp::harness::RunPaths(cfg.out).metrics_snr().string() << '\n';
    }
    if (*sc_trojan) print_rows(mp::harness::run_trojan_baseline(cfg));
    if (*sc_audit) mp::harness::run_audit(cfg);
    if (*sc_defend) {
      if (defend_sweep) {
        mp::harness::run_detection_sweep(cfg);
        std::cout << mp::harness::RunPaths(cfg.out).detection_sweep().string() << '\n';
      } else {
        mp::harness::run_defend(cfg);
      }
    }
    if (*sc_figures) {
      for (const auto& p : mp::harness::emit_figures(cfg.out))
        std::cout << p.string() << '\n';
    }
    if (*sc_pipeline) {
      const mp::harness::RunManifest m = mp::harness::pipeline(cfg);
      for (const auto& s : m.stages)
        std::cout << s.name << ": " << s.status << " (" << s.wall_ms / 1000.0
                  << " s)\n";
      std::cout << "config hash " << m.config_hash << '\n';
    }
    return 0;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
}
