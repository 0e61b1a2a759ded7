#pragma once

// Sequence-to-sequence spectrogram model: character embedding -> encoder ->
// content-based attention decoder emitting r mel frames per step -> optional
// post-processing network predicting linear spectrogram frames.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tacoforge/errors.hpp"
#include "tacoforge/matrix.hpp"
#include "tacoforge/nn.hpp"
#include "tacoforge/rng.hpp"
#include "tacoforge/tensor.hpp"

namespace tacoforge {

enum class Variant { full, vanilla, gru_encoder };

inline Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "vanilla") return Variant::vanilla;
  if (s == "gru_encoder") return Variant::gru_encoder;
  throw UsageError("unknown model variant: " + s + " (expected full, vanilla, or gru_encoder)");
}

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::vanilla: return "vanilla";
    case Variant::gru_encoder: return "gru_encoder";
  }
  return "?";
}

struct ModelConfig {
  std::string variant = "full";
  int64_t vocab_size = 47;
  int64_t embed_dim = 256;

  int64_t prenet_h1 = 256;
  int64_t prenet_h2 = 128;
  double prenet_dropout = 0.5;

  int enc_bank_k = 16;
  int64_t enc_bank_channels = 128;
  int64_t enc_proj_hidden = 128;
  int highway_layers = 4;
  int64_t highway_dim = 128;
  int64_t enc_bigru_units = 128;  // memory width is twice this

  int64_t attention_hidden = 256;
  int64_t attention_rnn_units = 256;
  int64_t decoder_rnn_units = 256;

  int64_t mel_bands = 80;
  int64_t linear_bins = 1025;
  int reduction = 2;  // r: frames emitted per decoder step

  int post_bank_k = 8;
  int64_t post_bank_channels = 128;
  int64_t post_proj_hidden = 256;
  int64_t post_bigru_units = 128;

  double scheduled_sampling_rate = 0.5;  // vanilla variant only

  void validate() const {
    TACO_INPUT_CHECK(vocab_size >= 2, "vocab_size must be >= 2");
    TACO_INPUT_CHECK(embed_dim >= 1 && prenet_h1 >= 1 && prenet_h2 >= 1, "widths must be >= 1");
    TACO_INPUT_CHECK(prenet_dropout >= 0.0 && prenet_dropout < 1.0,
                     "prenet_dropout must be in [0,1)");
    TACO_INPUT_CHECK(enc_bank_k >= 1 && post_bank_k >= 1, "conv bank size must be >= 1");
    TACO_INPUT_CHECK(
        enc_bank_channels >= 1 && enc_proj_hidden >= 1 && highway_dim >= 1 &&
            enc_bigru_units >= 1 && attention_hidden >= 1 && attention_rnn_units >= 1 &&
            decoder_rnn_units >= 1 && post_bank_channels >= 1 && post_proj_hidden >= 1 &&
            post_bigru_units >= 1,
        "widths must be >= 1");
    TACO_INPUT_CHECK(highway_layers >= 1, "highway_layers must be >= 1");
    TACO_INPUT_CHECK(mel_bands >= 1 && linear_bins >= 2, "band counts out of range");
    TACO_INPUT_CHECK(reduction >= 1, "reduction factor must be >= 1");
    TACO_INPUT_CHECK(scheduled_sampling_rate >= 0.0 && scheduled_sampling_rate <= 1.0,
                     "scheduled_sampling_rate must be in [0,1]");
    parse_variant(variant);
  }

  int64_t memory_dim() const { return 2 * enc_bigru_units; }
  Variant variant_kind() const { return parse_variant(variant); }
  // Frame width the decoder consumes and emits (before the post-net).
  int64_t decoder_bands() const {
    return variant_kind() == Variant::vanilla ? linear_bins : mel_bands;
  }

  // Desk-scale preset: small enough to overfit a toy corpus in minutes.
  static ModelConfig tiny() {
    ModelConfig c;
    c.embed_dim = 64;
    c.prenet_h1 = 64;
    c.prenet_h2 = 32;
    c.enc_bank_k = 8;
    c.enc_bank_channels = 32;
    c.enc_proj_hidden = 64;
    c.highway_dim = 64;
    c.enc_bigru_units = 64;
    c.attention_hidden = 64;
    c.attention_rnn_units = 128;
    c.decoder_rnn_units = 128;
    c.post_bank_k = 4;
    c.post_bank_channels = 32;
    c.post_proj_hidden = 64;
    c.post_bigru_units = 32;
    return c;
  }

  // Gradient-verification preset: tiny widths so double-precision finite
  // differences over every parameter stay fast.
  static ModelConfig micro() {
    ModelConfig c;
    c.embed_dim = 6;
    c.prenet_h1 = 6;
    c.prenet_h2 = 4;
    c.enc_bank_k = 2;
    c.enc_bank_channels = 3;
    c.enc_proj_hidden = 4;
    c.highway_layers = 1;
    c.highway_dim = 4;
    c.enc_bigru_units = 3;
    c.attention_hidden = 4;
    c.attention_rnn_units = 5;
    c.decoder_rnn_units = 5;
    c.mel_bands = 3;
    c.linear_bins = 7;
    c.post_bank_k = 2;
    c.post_bank_channels = 3;
    c.post_proj_hidden = 4;
    c.post_bigru_units = 3;
    return c;
  }
};

// Controls graph-affecting behavior at run time. Batch-norm statistics and
// scheduled sampling follow `training`; pre-net dropout follows its own flag
// because the decoder pre-net keeps dropout on during synthesis by default.
struct RunMode {
  bool training = false;
  bool prenet_dropout = false;

  static RunMode train() { return {true, true}; }
  static RunMode infer(bool keep_prenet_dropout = true) { return {false, keep_prenet_dropout}; }
};

template <class S>
struct EncodedTextT {
  TensorT<S> memory;       // [B, L, M]
  TensorT<S> memory_proj;  // [B, L, A]: memory * W1, cached for attention
};

template <class S>
struct DecoderStateT {
  TensorT<S> attn_h;      // [B, attention_rnn_units]
  TensorT<S> context;     // [B, M]
  TensorT<S> gru1_h;      // [B, decoder_rnn_units]
  TensorT<S> gru2_h;      // [B, decoder_rnn_units]
  TensorT<S> last_frame;  // [B, decoder_bands]; zero GO frame initially
};

template <class S>
struct DecodeResultT {
  TensorT<S> frames;      // [B, T, decoder_bands]
  TensorT<S> alignments;  // [B, steps, L] attention weights per decoder step
};

template <class S>
class TacotronT {
 public:
  TacotronT(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const Variant v = cfg_.variant_kind();
    const int64_t M = cfg_.memory_dim();

    embedding_ = params_.add("embedding.table",
                             glorot_uniform<S>({cfg_.vocab_size, cfg_.embed_dim},
                                               cfg_.vocab_size, cfg_.embed_dim, rng));

    // Encoder.
    int64_t enc_in = cfg_.embed_dim;
    if (v != Variant::vanilla) {
      enc_prenet_ = PrenetT<S>(params_, "encoder.prenet", cfg_.embed_dim, cfg_.prenet_h1,
                               cfg_.prenet_h2, cfg_.prenet_dropout, rng);
      enc_in = cfg_.prenet_h2;
    }
    if (v == Variant::full) {
      CbhgDims d;
      d.bank_k = cfg_.enc_bank_k;
      d.bank_channels = cfg_.enc_bank_channels;
      d.proj_hidden = cfg_.enc_proj_hidden;
      d.proj_out = enc_in;
      d.highway_layers = cfg_.highway_layers;
      d.highway_dim = cfg_.highway_dim;
      d.bigru_units = cfg_.enc_bigru_units;
      enc_cbhg_ = CbhgT<S>(params_, "encoder.cbhg", enc_in, d, rng);
    } else {
      // Residual GRU stack; widths must match for the residual sum.
      enc_gru_in_ = LinearT<S>(params_, "encoder.gru_in", enc_in, M, rng);
      enc_gru1_ = GruCellT<S>(params_, "encoder.gru1", M, M, rng);
      enc_gru2_ = GruCellT<S>(params_, "encoder.gru2", M, M, rng);
    }

    // Attention.
    attn_w1_ = params_.add("attention.W1",
                           glorot_uniform<S>({M, cfg_.attention_hidden}, M, cfg_.attention_hidden, rng));
    attn_w2_ = params_.add("attention.W2",
                           glorot_uniform<S>({cfg_.attention_rnn_units, cfg_.attention_hidden},
                                             cfg_.attention_rnn_units, cfg_.attention_hidden, rng));
    attn_b_ = params_.add("attention.b", TensorT<S>::zeros({cfg_.attention_hidden}));
    attn_v_ = params_.add("attention.v",
                          glorot_uniform<S>({cfg_.attention_hidden, 1}, cfg_.attention_hidden, 1, rng));

    // Decoder.
    const int64_t bands = cfg_.decoder_bands();
    int64_t dec_in = bands;
    if (v != Variant::vanilla) {
      dec_prenet_ = PrenetT<S>(params_, "decoder.prenet", bands, cfg_.prenet_h1, cfg_.prenet_h2,
                               cfg_.prenet_dropout, rng);
      dec_in = cfg_.prenet_h2;
    }
    attn_rnn_ = GruCellT<S>(params_, "decoder.attn_rnn", dec_in + M, cfg_.attention_rnn_units, rng);
    dec_proj_ = LinearT<S>(params_, "decoder.proj",
                           M + cfg_.attention_rnn_units, cfg_.decoder_rnn_units, rng);
    dec_gru1_ = GruCellT<S>(params_, "decoder.gru1", cfg_.decoder_rnn_units,
                            cfg_.decoder_rnn_units, rng);
    dec_gru2_ = GruCellT<S>(params_, "decoder.gru2", cfg_.decoder_rnn_units,
                            cfg_.decoder_rnn_units, rng);
    out_fc_ = LinearT<S>(params_, "decoder.out",
                         cfg_.decoder_rnn_units, cfg_.reduction * bands, rng);

    // Post-net (full and gru_encoder variants).
    if (v != Variant::vanilla) {
      CbhgDims d;
      d.bank_k = cfg_.post_bank_k;
      d.bank_channels = cfg_.post_bank_channels;
      d.proj_hidden = cfg_.post_proj_hidden;
      d.proj_out = cfg_.mel_bands;
      d.highway_layers = cfg_.highway_layers;
      d.highway_dim = cfg_.highway_dim;
      d.bigru_units = cfg_.post_bigru_units;
      post_cbhg_ = CbhgT<S>(params_, "postnet.cbhg", cfg_.mel_bands, d, rng);
      post_fc_ = LinearT<S>(params_, "postnet.out", 2 * cfg_.post_bigru_units, cfg_.linear_bins, rng);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStoreT<S>& params() { return params_; }
  const ParamStoreT<S>& params() const { return params_; }

  // ids: row-major [B, L] symbol ids -> memory [B, L, M] plus the cached
  // attention projection.
  EncodedTextT<S> encode(const std::vector<int64_t>& ids, int64_t batch, int64_t length,
                         const RunMode& mode, Rng& rng) const {
    TACO_CHECK(batch >= 1 && length >= 1, "encode needs batch >= 1 and length >= 1");
    TACO_CHECK(static_cast<int64_t>(ids.size()) == batch * length,
               "id count ", ids.size(), " != batch*length = ", batch * length);
    const Variant v = cfg_.variant_kind();
    auto x = embedding_lookup(embedding_, ids, {batch, length});
    if (v != Variant::vanilla)
      x = enc_prenet_.forward(x, mode.training, rng);  // encoder dropout only while training
    TensorT<S> memory;
    if (v == Variant::full) {
      memory = enc_cbhg_.forward(x, mode.training);
    } else {
      auto h0 = enc_gru_in_.forward(x);
      auto h1 = add(gru_sequence(enc_gru1_, h0), h0);
      memory = add(gru_sequence(enc_gru2_, h1), h1);
    }
    return {memory, matmul(memory, attn_w1_)};
  }

  DecoderStateT<S> initial_state(int64_t batch) const {
    DecoderStateT<S> st;
    st.attn_h = TensorT<S>::zeros({batch, cfg_.attention_rnn_units});
    st.context = TensorT<S>::zeros({batch, cfg_.memory_dim()});
    st.gru1_h = TensorT<S>::zeros({batch, cfg_.decoder_rnn_units});
    st.gru2_h = TensorT<S>::zeros({batch, cfg_.decoder_rnn_units});
    st.last_frame = TensorT<S>::zeros({batch, cfg_.decoder_bands()});
    return st;
  }

  // e_i = v^T tanh(W1 m_i + W2 q + b); weights = softmax(e); context = sum w_i m_i.
  // Returns weights [B, L] and writes the new context into *context.
  TensorT<S> attention_step(const EncodedTextT<S>& enc, const TensorT<S>& query,
                            TensorT<S>* context) const {
    const int64_t B = enc.memory.dim(0), L = enc.memory.dim(1);
    auto q = reshape(matmul(query, attn_w2_), {B, 1, cfg_.attention_hidden});
    auto scores = matmul(tanh(add(add(enc.memory_proj, q), attn_b_)), attn_v_);  // [B, L, 1]
    auto weights = softmax_lastdim(reshape(scores, {B, L}));
    auto ctx = reduce_sum(mul(reshape(weights, {B, L, 1}), enc.memory), {1}, false);
    *context = ctx;
    return weights;
  }

  // One decoder step: consumes state.last_frame, emits r frames [B, r, bands]
  // and the attention weights [B, L] used for them.
  TensorT<S> decoder_step(const EncodedTextT<S>& enc, DecoderStateT<S>& st, const RunMode& mode,
                          Rng& rng, TensorT<S>* weights_out) const {
    const Variant v = cfg_.variant_kind();
    const int64_t B = enc.memory.dim(0);
    auto p = v == Variant::vanilla ? st.last_frame
                                   : dec_prenet_.forward(st.last_frame, mode.prenet_dropout, rng);
    st.attn_h = attn_rnn_.step(concat<S>({p, st.context}, 1), st.attn_h);
    auto weights = attention_step(enc, st.attn_h, &st.context);
    if (weights_out) *weights_out = weights;
    auto d = dec_proj_.forward(concat<S>({st.context, st.attn_h}, 1));
    auto s1 = add(dec_gru1_.step(d, st.gru1_h), d);
    st.gru1_h = s1;
    auto s2 = add(dec_gru2_.step(s1, st.gru2_h), s1);
    st.gru2_h = s2;
    return reshape(out_fc_.forward(s2), {B, cfg_.reduction, cfg_.decoder_bands()});
  }

  // Teacher forcing: the input at step t is ground-truth frame t*r-1 (zero GO
  // frame at t=0). targets: [B, T, bands] with T a multiple of r.
  DecodeResultT<S> decode_teacher_forced(const EncodedTextT<S>& enc, const TensorT<S>& targets,
                                         const RunMode& mode, Rng& rng) const {
    return decode_training(enc, targets, mode, rng, /*ground_truth_prob=*/1.0);
  }

  // Scheduled sampling (vanilla variant): each step feeds the ground-truth
  // frame with probability scheduled_sampling_rate, otherwise the model's own
  // last output (detached). Rate 1 is pure teacher forcing, rate 0 pure
  // free-running.
  DecodeResultT<S> decode_scheduled(const EncodedTextT<S>& enc, const TensorT<S>& targets,
                                    const RunMode& mode, Rng& rng) const {
    TACO_INPUT_CHECK(cfg_.variant_kind() == Variant::vanilla,
                     "scheduled sampling is only configured for the vanilla variant");
    return decode_training(enc, targets, mode, rng, cfg_.scheduled_sampling_rate);
  }

  // Free-running: feeds back the last of the r emitted frames, clamped to
  // [0,1]. stop_fn sees each emitted group [r * bands] (row-major r x bands)
  // and returns true to stop after that group. Runs until stop or max_steps.
  DecodeResultT<S> decode_free_running(const EncodedTextT<S>& enc, int64_t max_steps,
                                       const std::function<bool(const std::vector<S>&)>& stop_fn,
                                       const RunMode& mode, Rng& rng) const {
    TACO_CHECK(max_steps >= 1, "max_steps must be >= 1, got ", max_steps);
    const int64_t B = enc.memory.dim(0), L = enc.memory.dim(1);
    const int64_t bands = cfg_.decoder_bands();
    auto st = initial_state(B);
    std::vector<TensorT<S>> groups, weights;
    for (int64_t t = 0; t < max_steps; ++t) {
      TensorT<S> w;
      auto frames = decoder_step(enc, st, mode, rng, &w);
      groups.push_back(frames);
      weights.push_back(reshape(w, {B, 1, L}));
      // Feed back the last frame, detached and clamped to the feature range.
      TensorT<S> next = TensorT<S>::zeros({B, bands});
      for (int64_t b = 0; b < B; ++b)
        for (int64_t j = 0; j < bands; ++j) {
          S x = frames.values()[static_cast<size_t>((b * cfg_.reduction + cfg_.reduction - 1) * bands + j)];
          next.values()[static_cast<size_t>(b * bands + j)] =
              std::min(S(1), std::max(S(0), x));
        }
      st.last_frame = next;
      if (stop_fn && B == 1 && stop_fn(frames.values())) break;
    }
    return {concat(groups, 1), concat(weights, 1)};
  }

  // mel: [B, T, mel_bands] -> linear: [B, T, linear_bins].
  TensorT<S> postnet(const TensorT<S>& mel, const RunMode& mode) const {
    TACO_CHECK(cfg_.variant_kind() != Variant::vanilla,
               "the vanilla variant has no post-processing network");
    return post_fc_.forward(post_cbhg_.forward(mel, mode.training));
  }

  // Copies one utterance's alignment out of a decode result as a matrix of
  // steps x L attention weights (diagnostic export).
  static MatD alignment_matrix(const DecodeResultT<S>& res, int64_t batch_index) {
    const int64_t B = res.alignments.dim(0);
    const int64_t steps = res.alignments.dim(1), L = res.alignments.dim(2);
    TACO_CHECK(batch_index >= 0 && batch_index < B, "alignment batch index out of range");
    MatD m(steps, L);
    for (int64_t t = 0; t < steps; ++t)
      for (int64_t i = 0; i < L; ++i)
        m.at(t, i) = static_cast<double>(
            res.alignments.values()[static_cast<size_t>((batch_index * steps + t) * L + i)]);
    return m;
  }

 private:
  DecodeResultT<S> decode_training(const EncodedTextT<S>& enc, const TensorT<S>& targets,
                                   const RunMode& mode, Rng& rng, double ground_truth_prob) const {
    TACO_CHECK(targets.rank() == 3, "targets must be [B,T,bands]");
    const int64_t B = targets.dim(0), T = targets.dim(1), bands = cfg_.decoder_bands();
    const int64_t L = enc.memory.dim(1);
    TACO_CHECK(targets.dim(2) == bands, "target band count ", targets.dim(2), " != ", bands);
    TACO_CHECK(T >= 1 && T % cfg_.reduction == 0,
               "target length ", T, " must be a positive multiple of r=", cfg_.reduction,
               " (pad before decoding)");
    TACO_CHECK(enc.memory.dim(0) == B, "memory/target batch mismatch");
    const int64_t steps = T / cfg_.reduction;
    auto st = initial_state(B);
    std::vector<TensorT<S>> groups, weights;
    groups.reserve(static_cast<size_t>(steps));
    for (int64_t t = 0; t < steps; ++t) {
      TensorT<S> w;
      auto frames = decoder_step(enc, st, mode, rng, &w);
      groups.push_back(frames);
      weights.push_back(reshape(w, {B, 1, L}));
      if (t + 1 < steps) {
        const int64_t src = (t + 1) * cfg_.reduction - 1;
        // Draw only when the outcome is uncertain so teacher forcing leaves
        // the rng stream untouched.
        bool use_own =
            ground_truth_prob < 1.0 && rng.uniform(0.0, 1.0) >= ground_truth_prob;
        TensorT<S> next = TensorT<S>::zeros({B, bands});
        for (int64_t b = 0; b < B; ++b)
          for (int64_t j = 0; j < bands; ++j) {
            S x;
            if (use_own)
              x = frames.values()[static_cast<size_t>(
                  (b * cfg_.reduction + cfg_.reduction - 1) * bands + j)];
            else
              x = targets.values()[static_cast<size_t>((b * T + src) * bands + j)];
            next.values()[static_cast<size_t>(b * bands + j)] = x;
          }
        st.last_frame = next;  // detached: no gradient flows through fed-back frames
      }
    }
    return {concat(groups, 1), concat(weights, 1)};
  }

  ModelConfig cfg_;
  ParamStoreT<S> params_;

  TensorT<S> embedding_;
  PrenetT<S> enc_prenet_;
  CbhgT<S> enc_cbhg_;
  LinearT<S> enc_gru_in_;
  GruCellT<S> enc_gru1_, enc_gru2_;

  TensorT<S> attn_w1_, attn_w2_, attn_b_, attn_v_;

  PrenetT<S> dec_prenet_;
  GruCellT<S> attn_rnn_;
  LinearT<S> dec_proj_;
  GruCellT<S> dec_gru1_, dec_gru2_;
  LinearT<S> out_fc_;

  CbhgT<S> post_cbhg_;
  LinearT<S> post_fc_;
};

using Tacotron = TacotronT<float>;

}  // namespace tacoforge
