#pragma once

// Text to waveform: free-running decode, spectrogram sharpening, phase
// reconstruction, and diagnostic exports.

#include <cstdint>
#include <string>

#include "tacoforge/dsp.hpp"
#include "tacoforge/model.hpp"
#include "tacoforge/text.hpp"
#include "tacoforge/wav.hpp"

namespace tacoforge {

struct SynthConfig {
  int64_t griffin_lim_iters = 50;
  double magnitude_power = 1.2;  // sharpening exponent applied before inversion
  int64_t steps_per_char = 30;   // decoder budget: ceil(steps_per_char * L / r)
  int64_t max_steps_cap = 2000;  // hard ceiling on decoder groups * r
  double stop_threshold = 0.02;  // 0 disables the silence stop
  int64_t stop_patience = 5;     // consecutive near-silent frames before stopping
  bool inference_prenet_dropout = true;  // decoder prenet dropout stays active
  double peak_norm = 0.95;               // target waveform peak; <= 0 disables

  void validate() const;
};

struct SynthResult {
  Waveform waveform;
  MatF mel;        // [frames, mel_bands]; empty for the vanilla variant
  MatF linear;     // [frames, linear_bins], compressed scale
  MatD alignment;  // [decoder groups, text length]
  std::string stop_reason;  // "silence" or "max_steps"
};

// Tracks the run of consecutive near-silent frames; fires once the run reaches
// patience. threshold 0 never fires.
class SilenceStop {
 public:
  SilenceStop(double threshold, int64_t patience);
  // Feed one frame's peak value; returns true once the stop condition holds.
  bool feed(double frame_peak);
  bool triggered() const { return triggered_; }

 private:
  double threshold_;
  int64_t patience_;
  int64_t run_ = 0;
  bool triggered_ = false;
};

SynthResult synthesize(const std::string& text, TacotronT<float>& model,
                       const SpectralConfig& dsp_cfg, const SynthConfig& synth_cfg,
                       const Charset& cs, Rng& rng);

// 1 - fraction of consecutive attention-argmax steps that move backward by
// more than 2 positions. A single-step alignment scores 1.
double alignment_monotonicity(const MatD& alignment);

// Writes <utt>.alignment.csv/.alignment.pgm/.mel.csv/.linear.csv/.linear.pgm/
// .wav into dir. The vanilla variant has no mel output, so <utt>.mel.csv is
// skipped.
void export_diagnostics(const SynthResult& result, const std::string& dir,
                        const std::string& utterance_id);

}  // namespace tacoforge
