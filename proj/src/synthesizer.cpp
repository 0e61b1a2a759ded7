#include "tacoforge/synthesizer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "tacoforge/errors.hpp"

namespace fs = std::filesystem;

namespace tacoforge {

void SynthConfig::validate() const {
  TACO_INPUT_CHECK(griffin_lim_iters >= 0, "synth.griffin_lim_iters must be >= 0, got ",
                   griffin_lim_iters);
  TACO_INPUT_CHECK(magnitude_power > 0.0, "synth.magnitude_power must be positive, got ",
                   magnitude_power);
  TACO_INPUT_CHECK(steps_per_char >= 1, "synth.steps_per_char must be >= 1, got ", steps_per_char);
  TACO_INPUT_CHECK(max_steps_cap >= 1, "synth.max_steps_cap must be >= 1, got ", max_steps_cap);
  // 0 means "never stop on silence"; anything else must be a plausible value
  // on the normalized [0,1] feature scale.
  TACO_INPUT_CHECK(stop_threshold >= 0.0 && stop_threshold < 1.0,
                   "synth.stop_threshold must be in [0,1), got ", stop_threshold);
  TACO_INPUT_CHECK(stop_patience >= 1, "synth.stop_patience must be >= 1, got ", stop_patience);
}

SilenceStop::SilenceStop(double threshold, int64_t patience)
    : threshold_(threshold), patience_(patience) {
  TACO_INPUT_CHECK(threshold >= 0.0 && threshold < 1.0, "stop threshold must be in [0,1), got ",
                   threshold);
  TACO_INPUT_CHECK(patience >= 1, "stop patience must be >= 1, got ", patience);
}

bool SilenceStop::feed(double frame_peak) {
  if (threshold_ <= 0.0) return false;
  if (frame_peak < threshold_) {
    run_ += 1;
    if (run_ >= patience_) triggered_ = true;
  } else {
    run_ = 0;
  }
  return triggered_;
}

namespace {

MatF tensor_frames_to_mat(const std::vector<float>& v, int64_t frames, int64_t bands) {
  MatF m(frames, bands);
  std::copy(v.begin(), v.end(), m.v.begin());
  return m;
}

void check_finite(const MatF& m, const char* what) {
  for (float x : m.v) {
    if (!std::isfinite(x)) throw VerifyError(std::string("synthesis produced a non-finite ") + what);
  }
}

}  // namespace

SynthResult synthesize(const std::string& text, TacotronT<float>& model,
                       const SpectralConfig& dsp_cfg, const SynthConfig& synth_cfg,
                       const Charset& cs, Rng& rng) {
  synth_cfg.validate();
  const std::string normalized = normalize_text(text, cs);
  const EncodedText enc_text = encode_text(normalized, cs);
  const int64_t L = static_cast<int64_t>(enc_text.ids.size());
  const int r = model.config().reduction;
  const bool vanilla = model.config().variant_kind() == Variant::vanilla;
  TACO_INPUT_CHECK(model.config().linear_bins == dsp_cfg.linear_bins(),
                   "model linear bins (", model.config().linear_bins,
                   ") must match the inversion bin count (", dsp_cfg.linear_bins(), ")");

  const RunMode mode = RunMode::infer(synth_cfg.inference_prenet_dropout);
  auto enc = model.encode(enc_text.ids, 1, L, mode, rng);

  // Decoder budget: steps_per_char frames per character, in groups of r.
  int64_t groups = (synth_cfg.steps_per_char * L + r - 1) / r;
  groups = std::min<int64_t>(groups, synth_cfg.max_steps_cap);
  groups = std::max<int64_t>(groups, 1);

  SilenceStop stop(synth_cfg.stop_threshold, synth_cfg.stop_patience);
  const int64_t bands = model.config().decoder_bands();
  auto stop_fn = [&stop, bands, r](const std::vector<float>& group) {
    bool fire = false;
    for (int i = 0; i < r; ++i) {
      double peak = 0.0;
      for (int64_t j = 0; j < bands; ++j) {
        peak = std::max(peak, static_cast<double>(group[static_cast<size_t>(i * bands + j)]));
      }
      if (stop.feed(peak)) fire = true;
    }
    return fire;
  };
  auto dec = model.decode_free_running(enc, groups, stop_fn, mode, rng);

  SynthResult res;
  res.stop_reason = stop.triggered() ? "silence" : "max_steps";
  res.alignment = TacotronT<float>::alignment_matrix(dec, 0);

  const int64_t T = dec.frames.dim(1);
  MatF compressed_linear;
  if (vanilla) {
    compressed_linear = tensor_frames_to_mat(dec.frames.values(), T, bands);
  } else {
    res.mel = tensor_frames_to_mat(dec.frames.values(), T, bands);
    check_finite(res.mel, "mel spectrogram");
    auto lin = model.postnet(dec.frames, mode);
    compressed_linear = tensor_frames_to_mat(lin.values(), T, model.config().linear_bins);
  }
  check_finite(compressed_linear, "linear spectrogram");
  res.linear = compressed_linear;

  // Back to magnitude, sharpen, invert, undo the pre-emphasis tilt.
  MatD mag = exp_expand(compressed_linear.cast<double>());
  for (double& x : mag.v) x = std::pow(x, synth_cfg.magnitude_power);
  std::vector<double> y =
      griffin_lim(mag, dsp_cfg, static_cast<int>(synth_cfg.griffin_lim_iters), rng);
  y = de_emphasis(y, dsp_cfg.preemphasis);

  if (synth_cfg.peak_norm > 0.0) {
    double peak = 0.0;
    for (double s : y) peak = std::max(peak, std::abs(s));
    if (peak > 0.0) {
      const double g = synth_cfg.peak_norm / peak;
      for (double& s : y) s *= g;
    }
  }
  for (double s : y) {
    if (!std::isfinite(s)) throw VerifyError("synthesis produced a non-finite waveform");
  }
  res.waveform = Waveform{std::move(y), dsp_cfg.sample_rate_hz};
  return res;
}

double alignment_monotonicity(const MatD& alignment) {
  const int64_t steps = alignment.rows;
  TACO_INPUT_CHECK(steps >= 1 && alignment.cols >= 1, "alignment must be non-empty");
  if (steps == 1) return 1.0;
  auto argmax_row = [&](int64_t t) {
    int64_t best = 0;
    for (int64_t i = 1; i < alignment.cols; ++i) {
      if (alignment.at(t, i) > alignment.at(t, best)) best = i;
    }
    return best;
  };
  int64_t violations = 0;
  int64_t prev = argmax_row(0);
  for (int64_t t = 1; t < steps; ++t) {
    const int64_t cur = argmax_row(t);
    if (cur < prev - 2) violations += 1;
    prev = cur;
  }
  return 1.0 - static_cast<double>(violations) / static_cast<double>(steps - 1);
}

void export_diagnostics(const SynthResult& result, const std::string& dir,
                        const std::string& utterance_id) {
  fs::create_directories(dir);
  const std::string base = dir + "/" + utterance_id;
  const MatF align = result.alignment.cast<float>();
  write_csv(base + ".alignment.csv", align);
  write_pgm(base + ".alignment.pgm", align);
  if (!result.mel.empty()) write_csv(base + ".mel.csv", result.mel);
  write_csv(base + ".linear.csv", result.linear);
  write_pgm(base + ".linear.pgm", result.linear);
  write_wav(base + ".wav", result.waveform);
}

}  // namespace tacoforge
