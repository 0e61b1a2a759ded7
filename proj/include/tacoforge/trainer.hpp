#pragma once

// Optimization loop: ℓ1 losses over teacher-forced decodes, the milestone
// learning-rate schedule, gradient clipping, Adam updates, checkpointing, and
// a metrics CSV. Deterministic given (records, config, seed).

#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tacoforge/adam.hpp"
#include "tacoforge/corpus.hpp"
#include "tacoforge/model.hpp"
#include "tacoforge/text.hpp"

namespace tacoforge {

struct TrainConfig {
  int64_t batch_size = 32;
  double base_lr = 0.001;
  // (step threshold, lr) pairs; the lr applies once the 0-based step index
  // reaches threshold * milestone_scale.
  std::vector<std::pair<int64_t, double>> lr_milestones = {
      {500000, 0.0005}, {1000000, 0.0003}, {2000000, 0.0001}};
  double milestone_scale = 1.0;  // desk-scale runs squeeze the schedule
  double grad_clip_norm = 1.0;   // global-norm clip; <= 0 disables
  int64_t max_steps = 500;
  uint64_t seed = 42;
  int64_t checkpoint_every = 1000;  // <= 0 disables periodic checkpoints
  int64_t alignment_every = 100;    // <= 0 disables alignment snapshots
  bool wall_clock = false;          // false keeps the wall_ms column at 0 for
                                    // byte-identical metrics across runs

  void validate() const;
};

// Piecewise-constant schedule; pure function of the 0-based step index.
double lr_at_step(int64_t step, const TrainConfig& cfg);

struct StepMetrics {
  int64_t step = 0;  // 0-based index of the step taken
  double lr = 0.0;
  double mel_loss = 0.0;  // 0 for the vanilla variant (single linear loss)
  double linear_loss = 0.0;
  double grad_norm = 0.0;  // pre-clip global norm
  double wall_ms = 0.0;
};

// ---------------------------------------------------------------------------
// Checkpoint container. Layout: magic "TACOFRG1"; version; global step; named
// tensor table (trainables then buffers: name length, name, rank, dims, f32
// payload, all integers 64-bit little-endian); Adam state (step, then m and v
// payloads per trainable); config snapshot as a UTF-8 key-value block; charset
// dump.
// ---------------------------------------------------------------------------

struct CheckpointData {
  int64_t version = 0;
  int64_t step = 0;
  int64_t n_trainable = 0;
  std::vector<std::string> names;
  std::vector<Shape> shapes;
  std::vector<std::vector<float>> payloads;
  int64_t adam_step = 0;
  std::vector<std::vector<float>> adam_m, adam_v;
  std::string config_kv;  // "key = value" lines covering dsp.* and model.*
  std::string charset_dump;
};

void save_checkpoint(const std::string& path, const TacotronT<float>& model,
                     const AdamState& adam, int64_t step, const SpectralConfig& dsp_cfg,
                     const Charset& cs);
CheckpointData read_checkpoint(const std::string& path);

// Model plus everything needed to run or resume it.
struct LoadedModel {
  std::unique_ptr<TacotronT<float>> model;
  SpectralConfig dsp;
  Charset charset;
  AdamState adam;
  int64_t step = 0;
};

// Rebuilds the model from the stored config and loads every tensor; any
// name/shape mismatch against the freshly built model is an error.
LoadedModel load_model_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

class Trainer {
 public:
  // Writes metrics.csv (truncated) and snapshots into run_dir; pass an empty
  // run_dir to keep everything in memory (no files).
  Trainer(TacotronT<float>& model, const TrainConfig& cfg, const SpectralConfig& dsp_cfg,
          const Charset& cs, std::string run_dir);

  // One optimizer step on one batch. Throws VerifyError on non-finite loss.
  StepMetrics train_step(const Batch& batch, Rng& rng);

  // Epoch loop over the corpus until max_steps.
  void train(const std::vector<FeatureRecord>& records);

  int64_t global_step() const { return step_; }
  void set_global_step(int64_t s) { step_ = s; }
  AdamState& adam() { return adam_; }
  const MatD& last_alignment() const { return last_alignment_; }
  double mean_mel_loss() const { return seen_ ? sum_mel_ / static_cast<double>(seen_) : 0.0; }
  double mean_linear_loss() const {
    return seen_ ? sum_linear_ / static_cast<double>(seen_) : 0.0;
  }
  double last_total_loss() const { return last_total_; }
  std::string metrics_path() const;

  void save(const std::string& path) const {
    save_checkpoint(path, model_, adam_, step_, dsp_cfg_, charset_);
  }

 private:
  TacotronT<float>& model_;
  TrainConfig cfg_;
  SpectralConfig dsp_cfg_;
  Charset charset_;
  std::string run_dir_;
  std::ofstream metrics_;
  AdamState adam_;
  int64_t step_ = 0;
  MatD last_alignment_;
  double sum_mel_ = 0.0, sum_linear_ = 0.0, last_total_ = 0.0;
  int64_t seen_ = 0;
  bool clip_noted_ = false;
};

}  // namespace tacoforge
