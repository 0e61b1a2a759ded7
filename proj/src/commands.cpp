#include "tacoforge/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tacoforge/gradcheck_suite.hpp"
#include "tacoforge/runconfig.hpp"
#include "tacoforge/synthesizer.hpp"
#include "tacoforge/trainer.hpp"

namespace fs = std::filesystem;

namespace tacoforge {

namespace {

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  TACO_CHECK(out.good(), "cannot open ", path, " for writing");
  out << text;
  TACO_CHECK(out.good(), "write failed for ", path);
}

std::string utt_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "utt%03d", index);
  return buf;
}

std::string fmt(double x) { return format_sig6(static_cast<float>(x)); }

// ---------------------------------------------------------------------------
// featurize
// ---------------------------------------------------------------------------

void cmd_featurize(const RunSettings& s, const std::string& manifest_path,
                   std::string cache_dir) {
  s.dsp.validate();
  const Charset cs = Charset::standard();
  Manifest manifest = load_manifest(manifest_path, cs);
  if (manifest.records.empty()) {
    throw UsageError("manifest " + manifest_path + " lists no utterances");
  }
  if (cache_dir.empty()) cache_dir = (fs::path(manifest.base_dir) / "cache").string();

  int64_t total_frames = 0;
  for (const auto& rec : manifest.records) {
    FeatureRecord feat = featurize(rec, manifest.resolve_wav(rec), s.dsp, cs, cache_dir);
    std::cout << rec.id << ": " << feat.mel.rows << " frames, "
              << feat.text_ids.size() << " symbols\n";
    total_frames += feat.mel.rows;
  }
  std::cout << "total: " << manifest.records.size() << " utterances, " << total_frames
            << " frames\ncache: " << cache_dir << "\n";
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

void cmd_train(const RunSettings& s, const std::string& run_dir, const std::string& manifest_path,
               bool use_toyset, std::string cache_dir) {
  if (use_toyset == !manifest_path.empty()) {
    throw UsageError("pass exactly one data source: --manifest FILE or --toyset");
  }
  s.validate();
  fs::create_directories(run_dir);
  write_text_file(run_dir + "/config.txt", echo_settings(s));
  std::cout << "config written to " << run_dir << "/config.txt\n";

  const Charset cs = Charset::standard();
  Manifest manifest;
  if (use_toyset) {
    manifest = generate_toyset(s.toyset, s.dsp.sample_rate_hz, run_dir + "/toyset", cs);
    std::cout << "toyset: " << manifest.records.size() << " utterances in " << run_dir
              << "/toyset\n";
  } else {
    manifest = load_manifest(manifest_path, cs);
  }
  if (manifest.records.empty()) throw UsageError("no training utterances");
  if (cache_dir.empty()) cache_dir = run_dir + "/cache";
  auto records = featurize_all(manifest, s.dsp, cs, cache_dir);

  TacotronT<float> model(s.model, s.train.seed);
  Trainer trainer(model, s.train, s.dsp, cs, run_dir);
  trainer.train(records);
  std::cout << "trained " << trainer.global_step() << " steps; mean mel loss "
            << fmt(trainer.mean_mel_loss()) << ", mean linear loss "
            << fmt(trainer.mean_linear_loss()) << "\nwrote " << run_dir << "/model.ckpt\n";
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

void cmd_synth(const RunSettings& s, const std::string& checkpoint_path,
               const std::vector<std::string>& inline_texts, const std::string& textfile,
               const std::string& out_dir, uint64_t seed) {
  std::vector<std::string> texts = inline_texts;
  if (!textfile.empty()) {
    std::ifstream in(textfile, std::ios::binary);
    TACO_INPUT_CHECK(in.good(), "cannot open text file ", textfile);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) texts.push_back(line);
    }
  }
  if (texts.empty()) throw UsageError("nothing to synthesize: pass --text or --textfile");

  LoadedModel loaded = load_model_checkpoint(checkpoint_path);
  std::cout << "checkpoint " << checkpoint_path << ": variant "
            << loaded.model->config().variant << ", trained " << loaded.step << " steps\n";
  fs::create_directories(out_dir);

  Rng master(seed);
  for (size_t i = 0; i < texts.size(); ++i) {
    Rng rng = master.split();
    SynthResult res =
        synthesize(texts[i], *loaded.model, loaded.dsp, s.synth, loaded.charset, rng);
    const std::string name = utt_name(static_cast<int>(i));
    export_diagnostics(res, out_dir, name);
    std::cout << name << ": " << res.linear.rows << " frames, stop=" << res.stop_reason
              << ", monotonicity=" << fmt(alignment_monotonicity(res.alignment)) << "\n";
  }
  std::cout << "wrote " << texts.size() << " utterances to " << out_dir << "\n";
}

// ---------------------------------------------------------------------------
// invert
// ---------------------------------------------------------------------------

void cmd_invert(const RunSettings& s, const std::string& spectrogram_csv,
                const std::string& roundtrip_wav, const std::string& out_path, int64_t iters,
                double power, uint64_t seed) {
  s.dsp.validate();
  if (spectrogram_csv.empty() == roundtrip_wav.empty()) {
    throw UsageError("pass exactly one input: --spectrogram CSV or --roundtrip WAV");
  }
  if (iters < 0) iters = s.dsp.griffin_lim_iters;
  TACO_INPUT_CHECK(power > 0.0, "--power must be positive, got ", power);

  MatD mag;
  const bool roundtrip = !roundtrip_wav.empty();
  if (roundtrip) {
    Waveform wav = read_wav(roundtrip_wav);
    TACO_INPUT_CHECK(wav.sample_rate_hz == s.dsp.sample_rate_hz, "wav sample rate ",
                     wav.sample_rate_hz, " does not match dsp.sample_rate_hz ",
                     s.dsp.sample_rate_hz);
    mag = magnitude(stft(pre_emphasis(wav.samples, s.dsp.preemphasis), s.dsp));
  } else {
    const MatF m = read_csv(spectrogram_csv);
    TACO_INPUT_CHECK(m.cols == s.dsp.linear_bins(), "spectrogram has ", m.cols,
                     " columns but the configuration expects ", s.dsp.linear_bins(), " bins");
    for (int64_t t = 0; t < m.rows; ++t)
      for (int64_t j = 0; j < m.cols; ++j)
        TACO_INPUT_CHECK(m.at(t, j) >= 0.0f, "negative magnitude ", m.at(t, j), " at row ", t,
                         ", column ", j);
    mag = m.cast<double>();
  }
  if (power != 1.0) {
    for (double& v : mag.v) v = std::pow(v, power);
  }

  Rng rng(seed);
  std::vector<double> trace;
  std::vector<double> y = griffin_lim(mag, s.dsp, static_cast<int>(iters), rng, &trace);
  for (size_t i = 0; i < trace.size(); ++i) {
    std::cout << "iter " << i << " error " << fmt(trace[i]) << "\n";
  }
  if (roundtrip) y = de_emphasis(y, s.dsp.preemphasis);
  write_wav(out_path, Waveform{y, s.dsp.sample_rate_hz});
  std::cout << "wrote " << out_path << " (" << y.size() << " samples)\n";
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

void cmd_gradcheck(double tolerance, double e2e_tolerance) {
  TACO_INPUT_CHECK(tolerance > 0.0 && e2e_tolerance > 0.0, "tolerances must be positive");
  std::vector<std::string> failures;
  auto report_line = [&](const std::string& name, double err, double tol) {
    const bool ok = err < tol;
    std::cout << name;
    for (size_t i = name.size(); i < 18; ++i) std::cout << ' ';
    std::cout << " max_rel_err=" << fmt(err) << (ok ? "  ok" : "  FAIL") << "\n";
    if (!ok) failures.push_back(name);
  };

  for (const auto& check : primitive_checks()) {
    report_line(check.name, check.run().max_rel_err, tolerance);
  }
  report_line("model_micro_e2e", model_e2e_check().max_rel_err, e2e_tolerance);

  if (!failures.empty()) {
    std::string joined;
    for (size_t i = 0; i < failures.size(); ++i) joined += (i ? ", " : "") + failures[i];
    throw VerifyError("gradient check failed for: " + joined);
  }
  std::cout << "all gradient checks passed\n";
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

void cmd_ablate(const RunSettings& base, const std::string& run_dir) {
  base.validate();
  fs::create_directories(run_dir);
  write_text_file(run_dir + "/config.txt", echo_settings(base));
  const Charset cs = Charset::standard();
  Manifest manifest = generate_toyset(base.toyset, base.dsp.sample_rate_hz, run_dir + "/toyset", cs);
  TACO_INPUT_CHECK(!manifest.records.empty(), "toyset generated no utterances");
  auto records = featurize_all(manifest, base.dsp, cs, run_dir + "/cache");
  const std::string eval_text = manifest.records.front().text;

  struct Row {
    std::string variant;
    double loss = 0.0;
    double monotonicity = 0.0;
  };
  std::vector<Row> rows;
  for (const std::string variant : {"full", "vanilla", "gru_encoder"}) {
    RunSettings s = base;
    s.model.variant = variant;
    TacotronT<float> model(s.model, s.train.seed);
    Trainer trainer(model, s.train, s.dsp, cs, run_dir + "/" + variant);
    trainer.train(records);

    Rng rng(s.train.seed);
    SynthResult res = synthesize(eval_text, model, s.dsp, s.synth, cs, rng);
    export_diagnostics(res, run_dir + "/" + variant, "eval");
    rows.push_back({variant, trainer.last_total_loss(), alignment_monotonicity(res.alignment)});
  }

  std::cout << "variant      steps  final_loss  monotonicity\n";
  for (const auto& row : rows) {
    std::cout << row.variant;
    for (size_t i = row.variant.size(); i < 13; ++i) std::cout << ' ';
    std::cout << base.train.max_steps << "  " << fmt(row.loss) << "  "
              << fmt(row.monotonicity) << "\n";
  }
  if (rows[0].monotonicity < rows[1].monotonicity) {
    std::cout << "note: expected the full model to align at least as monotonically as vanilla"
              << " (full=" << fmt(rows[0].monotonicity) << ", vanilla=" << fmt(rows[1].monotonicity)
              << ")\n";
  }
  std::cout << "wrote per-variant runs under " << run_dir << "\n";
}

}  // namespace

// ---------------------------------------------------------------------------
// Argument wiring
// ---------------------------------------------------------------------------

int run_cli(int argc, char** argv) {
  CLI::App app{"character-level speech synthesizer: feature extraction, training, synthesis"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  uint64_t seed = 0;
  std::string variant;
  int reduction = 0;
  app.add_option("--config", config_path, "settings file with key = value lines");
  app.add_option("--set", overrides, "override one setting, e.g. --set train.max_steps=100")
      ->type_size(1)->allow_extra_args(false);
  auto* seed_opt = app.add_option("--seed", seed, "seed for training, toyset and synthesis");
  auto* variant_opt = app.add_option("--variant", variant, "model variant: full, vanilla, gru-encoder");
  auto* r_opt = app.add_option("--r", reduction, "decoder reduction factor (frames per step)");

  auto* featurize_cmd = app.add_subcommand("featurize", "extract features for a corpus manifest");
  std::string manifest_path, cache_dir;
  featurize_cmd->add_option("--manifest", manifest_path, "corpus manifest file")->required();
  featurize_cmd->add_option("--cache", cache_dir, "feature cache directory");
  featurize_cmd->fallthrough();

  auto* train_cmd = app.add_subcommand("train", "train a model");
  std::string run_dir, train_manifest, train_cache;
  bool use_toyset = false;
  train_cmd->add_option("--run-dir", run_dir, "output directory for this run")->required();
  train_cmd->add_option("--manifest", train_manifest, "corpus manifest file");
  train_cmd->add_flag("--toyset", use_toyset, "generate and train on the synthetic tone corpus");
  train_cmd->add_option("--cache", train_cache, "feature cache directory");
  train_cmd->fallthrough();

  auto* synth_cmd = app.add_subcommand("synth", "synthesize speech from a checkpoint");
  std::string checkpoint_path, textfile, synth_out;
  std::vector<std::string> texts;
  bool no_inference_dropout = false;
  synth_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  synth_cmd->add_option("--text", texts, "text to synthesize (repeatable)")
      ->type_size(1)->allow_extra_args(false);
  synth_cmd->add_option("--textfile", textfile, "file with one text per line");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_flag("--no-inference-dropout", no_inference_dropout,
                      "disable decoder prenet dropout at inference");
  synth_cmd->fallthrough();

  auto* invert_cmd = app.add_subcommand("invert", "reconstruct a waveform from magnitudes");
  std::string spectrogram_csv, roundtrip_wav, invert_out = "inverted.wav";
  int64_t iters = -1;
  double power = 1.0;
  invert_cmd->add_option("--spectrogram", spectrogram_csv, "magnitude spectrogram CSV");
  invert_cmd->add_option("--roundtrip", roundtrip_wav, "analyze then re-synthesize this wav");
  invert_cmd->add_option("--out", invert_out, "output wav path");
  invert_cmd->add_option("--iters", iters, "phase reconstruction iterations");
  invert_cmd->add_option("--power", power, "sharpening exponent applied to the magnitudes");
  invert_cmd->fallthrough();

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "verify gradients of every primitive");
  double tolerance = 1e-5, e2e_tolerance = 1e-3;
  gradcheck_cmd->add_option("--tolerance", tolerance, "max relative error per primitive");
  gradcheck_cmd->add_option("--e2e-tolerance", e2e_tolerance,
                            "max relative error for the end-to-end model check");
  gradcheck_cmd->fallthrough();

  auto* ablate_cmd = app.add_subcommand("ablate", "train and compare the model variants");
  std::string ablate_dir;
  int64_t ablate_steps = 0;
  ablate_cmd->add_option("--run-dir", ablate_dir, "output directory")->required();
  ablate_cmd->add_option("--steps", ablate_steps, "training budget per variant");
  ablate_cmd->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    RunSettings s;
    if (!config_path.empty()) apply_config_file(s, config_path);
    for (const std::string& kv : overrides) {
      const size_t eq = kv.find('=');
      TACO_INPUT_CHECK(eq != std::string::npos && eq > 0, "--set expects key=value, got \"", kv,
                       "\"");
      set_setting(s, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed_opt->count()) {
      s.train.seed = seed;
      s.toyset.seed = seed;
    }
    if (variant_opt->count()) {
      if (variant == "gru-encoder") variant = "gru_encoder";
      parse_variant(variant);  // rejects unknown names early
      s.model.variant = variant;
    }
    if (r_opt->count()) s.model.reduction = reduction;
    const uint64_t synth_seed = seed_opt->count() ? seed : s.train.seed;

    if (*featurize_cmd) {
      cmd_featurize(s, manifest_path, cache_dir);
    } else if (*train_cmd) {
      cmd_train(s, run_dir, train_manifest, use_toyset, train_cache);
    } else if (*synth_cmd) {
      if (no_inference_dropout) s.synth.inference_prenet_dropout = false;
      cmd_synth(s, checkpoint_path, texts, textfile, synth_out, synth_seed);
    } else if (*invert_cmd) {
      cmd_invert(s, spectrogram_csv, roundtrip_wav, invert_out, iters, power, synth_seed);
    } else if (*gradcheck_cmd) {
      cmd_gradcheck(tolerance, e2e_tolerance);
    } else if (*ablate_cmd) {
      if (ablate_steps > 0) s.train.max_steps = ablate_steps;
      cmd_ablate(s, ablate_dir);
    }
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const VerifyError& e) {
    std::cerr << "verification failure: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace tacoforge
