// Acceptance gate: one self-contained check per shipping criterion, each
// printing a single PASS/FAIL line. Exits nonzero if any hard criterion
// fails. Criteria 5-8 share one overfit training run on the synthetic tone
// corpus; everything else is independent and fast.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "tacoforge/corpus.hpp"
#include "tacoforge/dsp.hpp"
#include "tacoforge/gradcheck_suite.hpp"
#include "tacoforge/runconfig.hpp"
#include "tacoforge/synthesizer.hpp"
#include "tacoforge/trainer.hpp"

using namespace tacoforge;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

double now_s() {
  using clock = std::chrono::steady_clock;
  static const clock::time_point t0 = clock::now();
  return std::chrono::duration<double>(clock::now() - t0).count();
}

std::string fmt(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, x);
  return buf;
}

std::string scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "tacoforge_acceptance" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  TACO_CHECK(in.good(), "cannot open ", path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// 1. Gradient correctness
// ---------------------------------------------------------------------------

Outcome check_gradients() {
  const double t0 = now_s();
  double worst = 0.0;
  std::string worst_op = "-";
  for (const auto& check : primitive_checks()) {
    const double err = check.run().max_rel_err;
    if (err > worst) {
      worst = err;
      worst_op = check.name;
    }
    if (err >= 1e-5) {
      return {false, "primitive " + check.name + " rel err " + fmt(err)};
    }
  }
  const double e2e = model_e2e_check().max_rel_err;
  const double secs = now_s() - t0;
  const bool pass = e2e < 1e-3 && secs < 120.0;
  return {pass, "worst primitive " + fmt(worst) + " (" + worst_op + "), end-to-end " + fmt(e2e) +
                    ", " + fmt(secs, 3) + "s"};
}

// ---------------------------------------------------------------------------
// 2. STFT/ISTFT identity
// ---------------------------------------------------------------------------

Outcome check_stft_identity() {
  SpectralConfig cfg;  // 24 kHz, 50 ms window, 12.5 ms hop, 2048-point fft
  cfg.validate();
  const int64_t n = cfg.sample_rate_hz;  // one second
  const int64_t frame = cfg.frame_length();
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(1000 + static_cast<uint64_t>(trial));
    std::vector<double> x(static_cast<size_t>(n));
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    const std::vector<double> y = istft(stft(x, cfg), cfg, n);
    TACO_CHECK(static_cast<int64_t>(y.size()) >= n, "reconstruction shorter than the input");
    // Skip one analysis window at each edge where overlap-add is partial.
    for (int64_t i = frame; i < n - frame; ++i) {
      worst = std::max(worst, std::abs(y[static_cast<size_t>(i)] - x[static_cast<size_t>(i)]));
    }
  }
  return {worst < 1e-6, "max interior error " + fmt(worst) + " over 10 random 1s signals"};
}

// ---------------------------------------------------------------------------
// 3. Griffin-Lim monotonicity and convergence
// ---------------------------------------------------------------------------

Outcome check_griffin_lim() {
  SpectralConfig cfg;
  cfg.validate();
  const int64_t n = cfg.sample_rate_hz;
  std::vector<double> x(static_cast<size_t>(n));
  const double amps[4] = {0.6, 0.25, 0.1, 0.05};
  for (int64_t i = 0; i < n; ++i) {
    double v = 0.0;
    for (int k = 0; k < 4; ++k)
      v += amps[k] * std::sin(2.0 * kPi * 220.0 * (k + 1) * static_cast<double>(i) /
                              cfg.sample_rate_hz);
    x[static_cast<size_t>(i)] = v;
  }
  const MatD mag = magnitude(stft(x, cfg));
  Rng rng(7);
  std::vector<double> trace;
  griffin_lim(mag, cfg, 50, rng, &trace);
  TACO_CHECK(trace.size() == 50, "expected one error per iteration");
  for (size_t i = 1; i < trace.size(); ++i) {
    if (trace[i] > trace[i - 1] + 1e-7) {
      return {false, "error rose at iteration " + std::to_string(i) + ": " + fmt(trace[i - 1]) +
                         " -> " + fmt(trace[i])};
    }
  }
  const double final_err = trace.back();
  return {final_err < 0.1, "error " + fmt(trace.front()) + " -> " + fmt(final_err) +
                               " over 50 iterations, non-increasing"};
}

// ---------------------------------------------------------------------------
// 4. Shape / reduction-factor contract
// ---------------------------------------------------------------------------

Outcome check_shape_contract() {
  int cases = 0;
  for (int r : {1, 2, 5}) {
    ModelConfig cfg = ModelConfig::micro();
    cfg.mel_bands = 80;
    cfg.linear_bins = 1025;
    cfg.reduction = r;
    TacotronT<float> model(cfg, 99);
    Rng rng(17);
    for (int64_t L = 1; L <= 20; ++L) {
      std::vector<int64_t> ids;
      for (int64_t i = 0; i < L; ++i)
        ids.push_back(1 + static_cast<int64_t>(
                              rng.uniform_int(static_cast<uint64_t>(cfg.vocab_size - 1))));
      auto enc = model.encode(ids, 1, L, RunMode::infer(false), rng);
      for (int64_t T = r; T <= 10 * r; T += r) {
        auto dec = model.decode_free_running(enc, T / r, nullptr, RunMode::infer(false), rng);
        auto lin = model.postnet(dec.frames, RunMode::infer(false));
        const MatD align = TacotronT<float>::alignment_matrix(dec, 0);
        const bool ok = dec.frames.dim(0) == 1 && dec.frames.dim(1) == T &&
                        dec.frames.dim(2) == 80 && lin.dim(1) == T && lin.dim(2) == 1025 &&
                        dec.alignments.dim(1) == T / r && align.rows == T / r && align.cols == L;
        if (!ok) {
          return {false, "shape mismatch at r=" + std::to_string(r) + " L=" + std::to_string(L) +
                             " T=" + std::to_string(T)};
        }
        ++cases;
      }
    }
  }
  return {true, std::to_string(cases) + " (r, L, T) combinations, outputs Tx80 and Tx1025, " +
                    "T/r decoder steps"};
}

// ---------------------------------------------------------------------------
// Shared overfit fixture for criteria 5-8
// ---------------------------------------------------------------------------

RunSettings tiny_settings() {
  RunSettings s;
  s.dsp.sample_rate_hz = 8000;
  s.dsp.frame_length_ms = 50.0;
  s.dsp.frame_shift_ms = 12.5;
  s.dsp.fft_size = 512;
  s.dsp.mel_bands = 80;

  s.model.variant = "full";
  s.model.embed_dim = 64;
  s.model.prenet_h1 = 64;
  s.model.prenet_h2 = 32;
  s.model.enc_bank_k = 8;
  s.model.enc_bank_channels = 32;
  s.model.enc_proj_hidden = 32;
  s.model.highway_dim = 64;
  s.model.highway_layers = 4;
  s.model.enc_bigru_units = 64;
  s.model.attention_rnn_units = 128;
  s.model.attention_hidden = 128;
  s.model.decoder_rnn_units = 128;
  s.model.mel_bands = 80;
  s.model.linear_bins = 257;
  s.model.post_bank_k = 8;
  s.model.post_bank_channels = 32;
  s.model.post_proj_hidden = 32;
  s.model.post_bigru_units = 64;
  s.model.reduction = 2;

  s.train.batch_size = 10;  // single full batch per step
  s.train.base_lr = 0.001;
  s.train.milestone_scale = 1.0;  // constant rate within the 5000-step budget
  s.train.max_steps = 5000;
  s.train.seed = 42;
  s.train.checkpoint_every = 0;
  s.train.alignment_every = 0;

  s.synth.griffin_lim_iters = 30;
  s.synth.steps_per_char = 30;
  s.synth.max_steps_cap = 2000;
  s.synth.stop_threshold = 0.02;
  s.synth.stop_patience = 5;
  s.validate();
  return s;
}

struct Overfit {
  bool attempted = false;
  bool reached = false;
  RunSettings s;
  Charset cs = Charset::standard();
  Manifest manifest;
  std::vector<FeatureRecord> records;
  std::unique_ptr<TacotronT<float>> model;
  int64_t steps_used = 0;
  double trailing_mel = 1.0;
  double train_secs = 0.0;
  std::vector<SynthResult> synth;  // one per training utterance, in manifest order

  // Same loop structure and rng derivation as Trainer::train, plus early
  // stopping on the trailing-10 mel loss.
  void train_to_target(TacotronT<float>& m, TrainConfig cfg, double target,
                       std::deque<double>* trail_out) {
    Trainer trainer(m, cfg, s.dsp, cs, "");
    Rng root(cfg.seed);
    Rng shuffle_rng = root.split();
    Rng step_rng = root.split();
    const int r = m.config().reduction;
    std::deque<double> trail;
    while (trainer.global_step() < cfg.max_steps) {
      auto buckets = make_epoch_buckets(records, cfg.batch_size, shuffle_rng);
      for (const auto& bucket : buckets) {
        std::vector<const FeatureRecord*> ptrs;
        for (int64_t idx : bucket) ptrs.push_back(&records[static_cast<size_t>(idx)]);
        StepMetrics met = trainer.train_step(pad_batch(ptrs, r), step_rng);
        trail.push_back(met.mel_loss);
        if (trail.size() > 10) trail.pop_front();
        if (met.step % 250 == 0) {
          std::fprintf(stderr, "  step %lld mel %.4f linear %.4f\n",
                       static_cast<long long>(met.step), met.mel_loss, met.linear_loss);
        }
        double mean = 0.0;
        for (double v : trail) mean += v;
        mean /= static_cast<double>(trail.size());
        steps_used = trainer.global_step();
        if (trail.size() == 10 && mean <= target) {
          if (trail_out) *trail_out = trail;
          trailing_mel = mean;
          return;
        }
        if (trainer.global_step() >= cfg.max_steps) break;
      }
    }
    if (trail_out) *trail_out = trail;
    double mean = 0.0;
    for (double v : trail) mean += v;
    trailing_mel = trail.empty() ? 1.0 : mean / static_cast<double>(trail.size());
  }

  void run() {
    attempted = true;
    s = tiny_settings();
    const std::string dir = scratch_dir("overfit");
    manifest = generate_toyset(s.toyset, s.dsp.sample_rate_hz, dir + "/toyset", cs);
    records = featurize_all(manifest, s.dsp, cs, "");
    model = std::make_unique<TacotronT<float>>(s.model, s.train.seed);
    const double t0 = now_s();
    train_to_target(*model, s.train, 0.03, nullptr);
    train_secs = now_s() - t0;
    reached = trailing_mel <= 0.03;
    if (!reached) return;
    // One synthesis pass per training utterance, shared by criteria 6-8.
    Rng master(s.train.seed);
    for (const auto& rec : manifest.records) {
      Rng rng = master.split();
      synth.push_back(synthesize(rec.text, *model, s.dsp, s.synth, cs, rng));
    }
  }
};

Overfit& overfit() {
  static Overfit o;
  if (!o.attempted) o.run();
  return o;
}

// ---------------------------------------------------------------------------
// 5. Toyset overfit
// ---------------------------------------------------------------------------

Outcome check_overfit() {
  Overfit& o = overfit();
  const bool in_budget = o.train_secs < 1800.0;
  return {o.reached && in_budget,
          "trailing-10 mel l1 " + fmt(o.trailing_mel) + " after " + std::to_string(o.steps_used) +
              " steps, " + fmt(o.train_secs, 3) + "s (target 0.03 within 5000 steps / 30 min)"};
}

// ---------------------------------------------------------------------------
// 6. Alignment learning (vanilla comparison is logged, not gated)
// ---------------------------------------------------------------------------

Outcome check_alignment() {
  Overfit& o = overfit();
  if (!o.reached) return {false, "overfit model unavailable"};

  double full_mean = 0.0, full_min = 1.0;
  for (const auto& res : o.synth) {
    const double m = alignment_monotonicity(res.alignment);
    full_mean += m;
    full_min = std::min(full_min, m);
  }
  full_mean /= static_cast<double>(o.synth.size());

  // Vanilla ablation trained with the same step budget on the same corpus.
  RunSettings vs = o.s;
  vs.model.variant = "vanilla";
  vs.train.max_steps = o.steps_used;
  vs.validate();
  TacotronT<float> vanilla(vs.model, vs.train.seed);
  Trainer vtr(vanilla, vs.train, vs.dsp, o.cs, "");
  vtr.train(o.records);
  double van_mean = 0.0;
  Rng master(vs.train.seed);
  for (const auto& rec : o.manifest.records) {
    Rng rng = master.split();
    SynthResult res = synthesize(rec.text, vanilla, vs.dsp, vs.synth, o.cs, rng);
    van_mean += alignment_monotonicity(res.alignment);
  }
  van_mean /= static_cast<double>(o.manifest.records.size());

  const bool pass = full_mean >= 0.9;
  std::string soft = van_mean < full_mean ? "lower, as expected" : "NOT lower (soft miss)";
  return {pass, "full mean " + fmt(full_mean) + " (min " + fmt(full_min) + ") vs vanilla " +
                    fmt(van_mean) + " after " + std::to_string(o.steps_used) + " steps; " + soft};
}

// ---------------------------------------------------------------------------
// 7. Synthesis fidelity (dominant-bin test against the tone map)
// ---------------------------------------------------------------------------

Outcome check_fidelity() {
  Overfit& o = overfit();
  if (!o.reached) return {false, "overfit model unavailable"};

  // Longest training sentence: most frames, hardest replay.
  size_t pick = 0;
  for (size_t i = 1; i < o.manifest.records.size(); ++i)
    if (o.manifest.records[i].text.size() > o.manifest.records[pick].text.size()) pick = i;
  const std::string& text = o.manifest.records[pick].text;
  const SynthResult& res = o.synth[pick];

  const SpectralConfig& d = o.s.dsp;
  const MatD mag = magnitude(stft(res.waveform.samples, d));
  const double samples_per_char = 1e-3 * o.s.toyset.char_duration_ms * d.sample_rate_hz;
  const int64_t expected =
      static_cast<int64_t>(static_cast<double>(text.size()) * samples_per_char) / d.frame_shift();
  int64_t matched = 0;
  for (int64_t t = 0; t < expected; ++t) {
    if (t >= mag.rows) break;  // synthesis stopped early: missing frames count as misses
    int64_t dom = 1;
    for (int64_t j = 2; j < mag.cols; ++j)
      if (mag.at(t, j) > mag.at(t, dom)) dom = j;
    const double f_dom = static_cast<double>(dom) * d.sample_rate_hz / d.fft_size;
    const int64_t center = t * d.frame_shift();  // analysis frames are center-padded
    const size_t ci = std::min(static_cast<size_t>(center / samples_per_char), text.size() - 1);
    const double f_exp = toyset_tone_hz(o.s.toyset, text[ci]);
    if (std::abs(f_dom - f_exp) <= o.s.toyset.tone_step_hz / 2.0) ++matched;
  }
  const double frac = expected > 0 ? static_cast<double>(matched) / static_cast<double>(expected)
                                   : 0.0;
  return {frac >= 0.8, "\"" + text + "\": " + std::to_string(matched) + "/" +
                           std::to_string(expected) + " frames on the tone map (" + fmt(frac) +
                           ", threshold 0.8)"};
}

// ---------------------------------------------------------------------------
// 8. Zero-pad stopping
// ---------------------------------------------------------------------------

Outcome check_stopping() {
  Overfit& o = overfit();
  if (!o.reached) return {false, "overfit model unavailable"};
  int stopped = 0;
  for (const auto& res : o.synth)
    if (res.stop_reason == "silence") ++stopped;
  return {stopped >= 8, std::to_string(stopped) + "/10 utterances hit the silence criterion "
                        "before the step cap"};
}

// ---------------------------------------------------------------------------
// 9. Determinism
// ---------------------------------------------------------------------------

RunSettings micro_settings() {
  RunSettings s;
  s.dsp.sample_rate_hz = 8000;
  s.dsp.frame_length_ms = 4.0;
  s.dsp.frame_shift_ms = 2.0;
  s.dsp.fft_size = 64;
  s.dsp.mel_bands = 6;
  ModelConfig m = ModelConfig::micro();  // matching 6-band, 33-bin widths
  m.mel_bands = 6;
  m.linear_bins = 33;
  s.model = m;
  s.train.batch_size = 2;
  s.train.max_steps = 5;
  s.train.seed = 314;
  s.train.checkpoint_every = 0;
  s.train.alignment_every = 0;
  s.toyset.utterance_count = 4;
  s.toyset.min_chars = 2;
  s.toyset.max_chars = 4;
  s.synth.griffin_lim_iters = 3;
  s.synth.steps_per_char = 4;
  s.synth.max_steps_cap = 8;
  s.synth.inference_prenet_dropout = false;
  s.validate();
  return s;
}

Outcome check_determinism() {
  const RunSettings s = micro_settings();
  const Charset cs = Charset::standard();
  const std::string dir = scratch_dir("determinism");
  Manifest manifest = generate_toyset(s.toyset, s.dsp.sample_rate_hz, dir + "/toyset", cs);
  auto records = featurize_all(manifest, s.dsp, cs, "");

  std::vector<std::string> metrics, ckpts, wavs;
  for (const char* run : {"a", "b"}) {
    const std::string rd = dir + "/" + run;
    TacotronT<float> model(s.model, s.train.seed);
    Trainer trainer(model, s.train, s.dsp, cs, rd);
    trainer.train(records);
    metrics.push_back(slurp(rd + "/metrics.csv"));
    ckpts.push_back(slurp(rd + "/model.ckpt"));
    Rng rng(5);
    SynthResult res = synthesize(manifest.records[0].text, model, s.dsp, s.synth, cs, rng);
    write_wav(rd + "/out.wav", res.waveform);
    wavs.push_back(slurp(rd + "/out.wav"));
  }
  if (metrics[0] != metrics[1]) return {false, "metrics csv differs between same-seed runs"};
  if (ckpts[0] != ckpts[1]) return {false, "checkpoint differs between same-seed runs"};
  if (wavs[0] != wavs[1]) return {false, "synthesized wav differs between same-seed runs"};
  return {true, "metrics csv, checkpoint, and wav byte-identical across same-seed runs"};
}

// ---------------------------------------------------------------------------
// 10. Checkpoint round trip
// ---------------------------------------------------------------------------

Outcome check_checkpoint_round_trip() {
  const RunSettings s = micro_settings();
  const Charset cs = Charset::standard();
  const std::string dir = scratch_dir("round_trip");
  Manifest manifest = generate_toyset(s.toyset, s.dsp.sample_rate_hz, dir + "/toyset", cs);
  auto records = featurize_all(manifest, s.dsp, cs, "");

  TacotronT<float> model(s.model, s.train.seed);
  Trainer trainer(model, s.train, s.dsp, cs, "");
  trainer.train(records);
  const std::string path = dir + "/model.ckpt";
  save_checkpoint(path, model, trainer.adam(), trainer.global_step(), s.dsp, cs);
  LoadedModel loaded = load_model_checkpoint(path);

  const auto& a = model.params().tensors();
  const auto& b = loaded.model->params().tensors();
  TACO_CHECK(a.size() == b.size(), "parameter count changed across the round trip");
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < a[i].values().size(); ++j)
      if (a[i].values()[j] != b[i].values()[j])
        return {false, "parameter bits differ after reload"};

  // Forward bit-equality on random inputs.
  Rng ids_rng(2718);
  std::vector<int64_t> ids;
  for (int i = 0; i < 6; ++i)
    ids.push_back(1 + static_cast<int64_t>(
                          ids_rng.uniform_int(static_cast<uint64_t>(s.model.vocab_size - 1))));
  auto run = [&](TacotronT<float>& m) {
    Rng rng(99);
    auto enc = m.encode(ids, 1, 6, RunMode::infer(false), rng);
    auto dec = m.decode_free_running(enc, 5, nullptr, RunMode::infer(false), rng);
    auto lin = m.postnet(dec.frames, RunMode::infer(false));
    std::vector<float> out = dec.frames.values();
    out.insert(out.end(), lin.values().begin(), lin.values().end());
    return out;
  };
  const std::vector<float> x = run(model);
  const std::vector<float> y = run(*loaded.model);
  if (x.size() != y.size()) return {false, "forward output sizes differ after reload"};
  for (size_t i = 0; i < x.size(); ++i)
    if (x[i] != y[i]) return {false, "forward outputs differ after reload"};
  return {true, "parameters and free-running forward outputs bit-equal after save/load"};
}

}  // namespace

int main() {
  struct Criterion {
    const char* label;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"gradient correctness", check_gradients},
      {"stft/istft identity", check_stft_identity},
      {"griffin-lim convergence", check_griffin_lim},
      {"shape/reduction contract", check_shape_contract},
      {"toyset overfit", check_overfit},
      {"alignment learning", check_alignment},
      {"synthesis fidelity", check_fidelity},
      {"zero-pad stopping", check_stopping},
      {"determinism", check_determinism},
      {"checkpoint round trip", check_checkpoint_round_trip},
  };

  int failures = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %2zu %-26s %s  (%s)\n", i + 1, criteria[i].label,
                o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  if (failures > 0) {
    std::printf("%d of %zu criteria failed\n", failures, criteria.size());
    return 1;
  }
  std::printf("all %zu criteria passed\n", criteria.size());
  return 0;
}
