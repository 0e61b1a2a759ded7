#include "tacoforge/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "tacoforge/errors.hpp"
#include "tacoforge/runconfig.hpp"
#include "tacoforge/tensor.hpp"

namespace fs = std::filesystem;

namespace tacoforge {

namespace {

constexpr char kCkptMagic[8] = {'T', 'A', 'C', 'O', 'F', 'R', 'G', '1'};
constexpr int64_t kCkptVersion = 1;

void append_i64(std::string& out, int64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

void append_f32s(std::string& out, const std::vector<float>& v) {
  out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
}

struct BlobReader {
  const std::string& blob;
  size_t pos = 0;
  std::string origin;

  void need(size_t n, const char* what) {
    TACO_INPUT_CHECK(pos + n <= blob.size(), origin, ": truncated while reading ", what);
  }
  int64_t take_i64(const char* what) {
    need(8, what);
    int64_t v;
    std::memcpy(&v, blob.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string take_bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = blob.substr(pos, n);
    pos += n;
    return s;
  }
  std::vector<float> take_f32s(size_t n, const char* what) {
    need(n * sizeof(float), what);
    std::vector<float> v(n);
    std::memcpy(v.data(), blob.data() + pos, n * sizeof(float));
    pos += n * sizeof(float);
    return v;
  }
};

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    TACO_CHECK(out.good(), "cannot open ", tmp, " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    TACO_CHECK(out.good(), "write failed for ", tmp);
  }
  fs::rename(tmp, path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  TACO_INPUT_CHECK(in.good(), "cannot open checkpoint ", path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void TrainConfig::validate() const {
  TACO_INPUT_CHECK(batch_size >= 1, "train.batch_size must be >= 1, got ", batch_size);
  TACO_INPUT_CHECK(base_lr > 0.0, "train.base_lr must be positive, got ", base_lr);
  TACO_INPUT_CHECK(milestone_scale > 0.0, "train.milestone_scale must be positive, got ",
                   milestone_scale);
  TACO_INPUT_CHECK(max_steps >= 1, "train.max_steps must be >= 1, got ", max_steps);
  double prev_lr = base_lr;
  int64_t prev_step = -1;
  for (const auto& [ms_step, ms_lr] : lr_milestones) {
    TACO_INPUT_CHECK(ms_step > prev_step, "train.lr_milestones steps must be strictly increasing");
    TACO_INPUT_CHECK(ms_lr > 0.0 && ms_lr < prev_lr,
                     "train.lr_milestones rates must be positive and strictly decreasing");
    prev_step = ms_step;
    prev_lr = ms_lr;
  }
}

double lr_at_step(int64_t step, const TrainConfig& cfg) {
  double lr = cfg.base_lr;
  for (const auto& [ms_step, ms_lr] : cfg.lr_milestones) {
    const int64_t at = std::llround(static_cast<double>(ms_step) * cfg.milestone_scale);
    if (step >= at) lr = ms_lr;
  }
  return lr;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const TacotronT<float>& model,
                     const AdamState& adam, int64_t step, const SpectralConfig& dsp_cfg,
                     const Charset& cs) {
  const auto& ps = model.params();
  const auto& names = ps.names();
  const auto& tensors = ps.tensors();
  const auto& bnames = ps.buffer_names();
  const auto& buffers = ps.buffers();
  const size_t n_trainable = names.size();
  TACO_CHECK(adam.m.empty() || adam.m.size() == n_trainable,
             "adam state tracks ", adam.m.size(), " tensors, model has ", n_trainable);

  std::string out;
  out.append(kCkptMagic, 8);
  append_i64(out, kCkptVersion);
  append_i64(out, step);
  append_i64(out, static_cast<int64_t>(n_trainable + bnames.size()));
  append_i64(out, static_cast<int64_t>(n_trainable));
  auto emit = [&out](const std::string& name, const TensorT<float>& t) {
    append_i64(out, static_cast<int64_t>(name.size()));
    out.append(name);
    append_i64(out, static_cast<int64_t>(t.shape().size()));
    for (int64_t d : t.shape()) append_i64(out, d);
    append_f32s(out, t.values());
  };
  for (size_t i = 0; i < n_trainable; ++i) emit(names[i], tensors[i]);
  for (size_t i = 0; i < bnames.size(); ++i) emit(bnames[i], buffers[i]);

  append_i64(out, adam.step);
  for (size_t i = 0; i < n_trainable; ++i) {
    if (adam.m.empty()) {
      std::vector<float> z(tensors[i].values().size(), 0.0f);
      append_f32s(out, z);
      append_f32s(out, z);
    } else {
      append_f32s(out, adam.m[i]);
      append_f32s(out, adam.v[i]);
    }
  }

  RunSettings snap;
  snap.dsp = dsp_cfg;
  snap.model = model.config();
  const std::string kv = echo_settings(snap, "dsp.") + echo_settings(snap, "model.");
  append_i64(out, static_cast<int64_t>(kv.size()));
  out.append(kv);
  const std::string cdump = cs.dump();
  append_i64(out, static_cast<int64_t>(cdump.size()));
  out.append(cdump);

  write_file_atomic(path, out);
}

CheckpointData read_checkpoint(const std::string& path) {
  const std::string blob = read_file(path);
  BlobReader r{blob, 0, "checkpoint " + path};
  TACO_INPUT_CHECK(blob.size() >= 8 && std::memcmp(blob.data(), kCkptMagic, 8) == 0, r.origin,
                   ": bad magic (not a checkpoint file)");
  r.pos = 8;

  CheckpointData d;
  d.version = r.take_i64("version");
  TACO_INPUT_CHECK(d.version == kCkptVersion, r.origin, ": unsupported format version ", d.version);
  d.step = r.take_i64("step");
  const int64_t n_named = r.take_i64("tensor count");
  d.n_trainable = r.take_i64("trainable count");
  TACO_INPUT_CHECK(n_named >= 0 && d.n_trainable >= 0 && d.n_trainable <= n_named, r.origin,
                   ": inconsistent tensor counts");
  for (int64_t i = 0; i < n_named; ++i) {
    const int64_t name_len = r.take_i64("name length");
    TACO_INPUT_CHECK(name_len > 0 && name_len < 4096, r.origin, ": implausible name length ",
                     name_len);
    d.names.push_back(r.take_bytes(static_cast<size_t>(name_len), "tensor name"));
    const int64_t rank = r.take_i64("rank");
    TACO_INPUT_CHECK(rank >= 0 && rank <= 8, r.origin, ": implausible rank ", rank);
    Shape shape;
    int64_t numel = 1;
    for (int64_t k = 0; k < rank; ++k) {
      shape.push_back(r.take_i64("dim"));
      TACO_INPUT_CHECK(shape.back() >= 0, r.origin, ": negative dimension");
      numel *= shape.back();
    }
    d.shapes.push_back(shape);
    d.payloads.push_back(r.take_f32s(static_cast<size_t>(numel), "tensor payload"));
  }
  d.adam_step = r.take_i64("optimizer step");
  for (int64_t i = 0; i < d.n_trainable; ++i) {
    const size_t n = d.payloads[static_cast<size_t>(i)].size();
    d.adam_m.push_back(r.take_f32s(n, "optimizer first moment"));
    d.adam_v.push_back(r.take_f32s(n, "optimizer second moment"));
  }
  const int64_t kv_len = r.take_i64("config length");
  TACO_INPUT_CHECK(kv_len >= 0, r.origin, ": negative config length");
  d.config_kv = r.take_bytes(static_cast<size_t>(kv_len), "config snapshot");
  const int64_t cs_len = r.take_i64("charset length");
  TACO_INPUT_CHECK(cs_len >= 0, r.origin, ": negative charset length");
  d.charset_dump = r.take_bytes(static_cast<size_t>(cs_len), "charset snapshot");
  TACO_INPUT_CHECK(r.pos == blob.size(), r.origin, ": ", blob.size() - r.pos,
                   " trailing bytes after the payload");
  return d;
}

LoadedModel load_model_checkpoint(const std::string& path) {
  CheckpointData d = read_checkpoint(path);

  RunSettings snap;
  apply_kv_text(snap, d.config_kv, "checkpoint " + path + " config");
  LoadedModel out;
  out.dsp = snap.dsp;
  out.charset = Charset::parse(d.charset_dump);
  out.step = d.step;
  out.model = std::make_unique<TacotronT<float>>(snap.model, /*seed=*/0);

  auto& ps = out.model->params();
  const size_t n_trainable = ps.names().size();
  const size_t n_named = n_trainable + ps.buffer_names().size();
  TACO_INPUT_CHECK(d.names.size() == n_named && static_cast<size_t>(d.n_trainable) == n_trainable,
                   "checkpoint ", path, ": holds ", d.names.size(), " tensors (", d.n_trainable,
                   " trainable), model expects ", n_named, " (", n_trainable, " trainable)");
  auto load_into = [&](const std::string& name, TensorT<float>& t, size_t i) {
    TACO_INPUT_CHECK(d.names[i] == name, "checkpoint ", path, ": tensor ", i, " is \"", d.names[i],
                     "\", model expects \"", name, "\"");
    TACO_INPUT_CHECK(d.shapes[i] == t.shape(), "checkpoint ", path, ": tensor \"", name,
                     "\" shape mismatch");
    t.values() = d.payloads[i];
  };
  for (size_t i = 0; i < n_trainable; ++i) load_into(ps.names()[i], ps.tensors()[i], i);
  for (size_t i = 0; i < ps.buffer_names().size(); ++i)
    load_into(ps.buffer_names()[i], ps.buffers()[i], n_trainable + i);

  out.adam.step = d.adam_step;
  out.adam.m = std::move(d.adam_m);
  out.adam.v = std::move(d.adam_v);
  return out;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(TacotronT<float>& model, const TrainConfig& cfg, const SpectralConfig& dsp_cfg,
                 const Charset& cs, std::string run_dir)
    : model_(model), cfg_(cfg), dsp_cfg_(dsp_cfg), charset_(cs), run_dir_(std::move(run_dir)) {
  cfg_.validate();
  TACO_INPUT_CHECK(model_.config().mel_bands == dsp_cfg_.mel_bands,
                   "model mel bands (", model_.config().mel_bands,
                   ") must match feature mel bands (", dsp_cfg_.mel_bands, ")");
  TACO_INPUT_CHECK(model_.config().linear_bins == dsp_cfg_.linear_bins(),
                   "model linear bins (", model_.config().linear_bins,
                   ") must match feature bins (", dsp_cfg_.linear_bins(), ")");
  if (!run_dir_.empty()) {
    fs::create_directories(run_dir_);
    metrics_.open(metrics_path(), std::ios::binary | std::ios::trunc);
    TACO_CHECK(metrics_.good(), "cannot open ", metrics_path(), " for writing");
    metrics_ << "step,lr,mel_loss,linear_loss,grad_norm,wall_ms\n";
    metrics_.flush();
  }
  adam_.init_for(model_.params().tensors());
}

std::string Trainer::metrics_path() const { return run_dir_ + "/metrics.csv"; }

StepMetrics Trainer::train_step(const Batch& batch, Rng& rng) {
  const auto t0 = std::chrono::steady_clock::now();
  TACO_INPUT_CHECK(batch.batch >= 1, "empty batch");
  const bool vanilla = model_.config().variant_kind() == Variant::vanilla;

  model_.params().zero_grads();
  TapeT<float> tape;
  double mel_loss = 0.0, linear_loss = 0.0, total = 0.0;
  {
    TapeScopeT<float> scope(tape);
    auto enc = model_.encode(batch.text, batch.batch, batch.text_len, RunMode::train(), rng);
    auto linear_t =
        TensorT<float>::from({batch.batch, batch.frames, batch.n_bins}, batch.linear);
    TensorT<float> loss;
    DecodeResultT<float> dec;
    if (vanilla) {
      dec = model_.decode_scheduled(enc, linear_t, RunMode::train(), rng);
      loss = l1_loss(dec.frames, linear_t);
      linear_loss = static_cast<double>(loss.values()[0]);
      total = linear_loss;
    } else {
      auto mel_t = TensorT<float>::from({batch.batch, batch.frames, batch.n_mels}, batch.mel);
      dec = model_.decode_teacher_forced(enc, mel_t, RunMode::train(), rng);
      auto linear_pred = model_.postnet(dec.frames, RunMode::train());
      auto lm = l1_loss(dec.frames, mel_t);
      auto ll = l1_loss(linear_pred, linear_t);
      mel_loss = static_cast<double>(lm.values()[0]);
      linear_loss = static_cast<double>(ll.values()[0]);
      loss = add(lm, ll);
      total = static_cast<double>(loss.values()[0]);
    }
    if (!std::isfinite(total)) {
      std::string ids;
      for (size_t i = 0; i < batch.ids.size(); ++i) ids += (i ? ", " : "") + batch.ids[i];
      throw VerifyError("training diverged: non-finite loss at step " + std::to_string(step_) +
                        " (batch: " + ids + ")");
    }
    tape.backward(loss);
    last_alignment_ = TacotronT<float>::alignment_matrix(dec, 0);
  }

  const double norm = clip_grad_global_norm(model_.params().tensors(), cfg_.grad_clip_norm);
  if (cfg_.grad_clip_norm > 0.0 && norm > cfg_.grad_clip_norm && !clip_noted_) {
    std::cerr << "note: gradient clipping engaged at step " << step_ << " (norm "
              << format_sig6(static_cast<float>(norm)) << " -> "
              << format_sig6(static_cast<float>(cfg_.grad_clip_norm)) << ")\n";
    clip_noted_ = true;
  }
  const double lr = lr_at_step(step_, cfg_);
  adam_step(model_.params().tensors(), adam_, lr);

  StepMetrics m;
  m.step = step_;
  m.lr = lr;
  m.mel_loss = mel_loss;
  m.linear_loss = linear_loss;
  m.grad_norm = norm;
  if (cfg_.wall_clock) {
    m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
  }
  if (metrics_.is_open()) {
    metrics_ << m.step << ',' << format_sig6(static_cast<float>(m.lr)) << ','
             << format_sig6(static_cast<float>(m.mel_loss)) << ','
             << format_sig6(static_cast<float>(m.linear_loss)) << ','
             << format_sig6(static_cast<float>(m.grad_norm)) << ','
             << format_sig6(static_cast<float>(m.wall_ms)) << '\n';
    metrics_.flush();
  }
  sum_mel_ += mel_loss;
  sum_linear_ += linear_loss;
  last_total_ = total;
  seen_ += 1;
  step_ += 1;
  return m;
}

void Trainer::train(const std::vector<FeatureRecord>& records) {
  TACO_INPUT_CHECK(!records.empty(), "no training records");
  Rng root(cfg_.seed);
  Rng shuffle_rng = root.split();
  Rng step_rng = root.split();
  const int r = model_.config().reduction;

  while (step_ < cfg_.max_steps) {
    auto buckets = make_epoch_buckets(records, cfg_.batch_size, shuffle_rng);
    for (const auto& bucket : buckets) {
      std::vector<const FeatureRecord*> ptrs;
      ptrs.reserve(bucket.size());
      for (int64_t idx : bucket) ptrs.push_back(&records[static_cast<size_t>(idx)]);
      Batch batch = pad_batch(ptrs, r);
      StepMetrics m = train_step(batch, step_rng);
      if (!run_dir_.empty() && cfg_.alignment_every > 0 && m.step % cfg_.alignment_every == 0) {
        const MatF a = last_alignment_.cast<float>();
        write_csv(run_dir_ + "/align_step" + std::to_string(m.step) + ".csv", a);
        write_pgm(run_dir_ + "/align_step" + std::to_string(m.step) + ".pgm", a);
      }
      if (!run_dir_.empty() && cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0) {
        save(run_dir_ + "/ckpt_step" + std::to_string(step_) + ".ckpt");
      }
      if (step_ >= cfg_.max_steps) break;
    }
  }
  if (!run_dir_.empty()) save(run_dir_ + "/model.ckpt");
}

}  // namespace tacoforge
