#include "tacoforge/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "tacoforge/errors.hpp"

namespace tacoforge {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool is_pow2(int n) { return n >= 2 && (n & (n - 1)) == 0; }

// Periodic Hann: w[j] = 0.5 - 0.5*cos(2*pi*j/N). Periodic (not symmetric)
// so overlapped squares sum to a constant at hop = N/4.
std::vector<double> hann_periodic(int n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (int j = 0; j < n; ++j) w[static_cast<size_t>(j)] = 0.5 - 0.5 * std::cos(2.0 * kPi * j / n);
  return w;
}

// Mirror index into [0, n) without repeating the edge sample.
int64_t reflect_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  const int64_t period = 2 * (n - 1);
  int64_t m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

// Frames laid on a raw grid: frame t covers samples [t*hop, t*hop+frame_len).
// No padding; the caller supplies a signal of exactly grid_len(T) samples.
int64_t grid_len(int64_t n_frames, int hop, int frame_len) {
  return (n_frames - 1) * hop + frame_len;
}

ComplexSpectrogram stft_raw(const std::vector<double>& x, const SpectralConfig& cfg,
                            int64_t n_frames, const Fft& fft, const std::vector<double>& window) {
  const int frame_len = cfg.frame_length();
  const int hop = cfg.frame_shift();
  TACO_CHECK(static_cast<int64_t>(x.size()) >= grid_len(n_frames, hop, frame_len),
             "stft grid longer than signal");
  ComplexSpectrogram spec;
  spec.n_frames = n_frames;
  spec.n_bins = cfg.linear_bins();
  spec.v.assign(static_cast<size_t>(n_frames * spec.n_bins), {0.0, 0.0});
  std::vector<std::complex<double>> buf(static_cast<size_t>(cfg.fft_size));
  for (int64_t t = 0; t < n_frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    const double* src = x.data() + t * hop;
    for (int j = 0; j < frame_len; ++j)
      buf[static_cast<size_t>(j)] = src[j] * window[static_cast<size_t>(j)];
    fft.forward(buf.data());
    for (int64_t b = 0; b < spec.n_bins; ++b) spec.at(t, b) = buf[static_cast<size_t>(b)];
  }
  return spec;
}

std::vector<double> istft_raw(const ComplexSpectrogram& spec, const SpectralConfig& cfg,
                              const Fft& fft, const std::vector<double>& window) {
  const int frame_len = cfg.frame_length();
  const int hop = cfg.frame_shift();
  const int n = cfg.fft_size;
  const int64_t out_len = grid_len(spec.n_frames, hop, frame_len);
  std::vector<double> acc(static_cast<size_t>(out_len), 0.0);
  std::vector<double> wsum(static_cast<size_t>(out_len), 0.0);
  std::vector<std::complex<double>> buf(static_cast<size_t>(n));
  for (int64_t t = 0; t < spec.n_frames; ++t) {
    // Rebuild the full Hermitian spectrum from the stored half.
    for (int64_t b = 0; b < spec.n_bins; ++b) buf[static_cast<size_t>(b)] = spec.at(t, b);
    for (int64_t b = spec.n_bins; b < n; ++b)
      buf[static_cast<size_t>(b)] = std::conj(spec.at(t, n - b));
    fft.inverse(buf.data());
    double* dst = acc.data() + t * hop;
    double* ws = wsum.data() + t * hop;
    for (int j = 0; j < frame_len; ++j) {
      const double w = window[static_cast<size_t>(j)];
      dst[j] += w * buf[static_cast<size_t>(j)].real();
      ws[j] += w * w;
    }
  }
  // Least-squares synthesis: divide by the window-squared overlap.
  for (int64_t i = 0; i < out_len; ++i) {
    if (wsum[static_cast<size_t>(i)] > 1e-12) acc[static_cast<size_t>(i)] /= wsum[static_cast<size_t>(i)];
  }
  return acc;
}

MatD magnitude_raw(const ComplexSpectrogram& spec) {
  MatD m(spec.n_frames, spec.n_bins);
  for (size_t i = 0; i < spec.v.size(); ++i) m.v[i] = std::abs(spec.v[i]);
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// SpectralConfig
// ---------------------------------------------------------------------------

int SpectralConfig::frame_length() const {
  return static_cast<int>(std::llround(frame_length_ms * sample_rate_hz / 1000.0));
}

int SpectralConfig::frame_shift() const {
  return static_cast<int>(std::llround(frame_shift_ms * sample_rate_hz / 1000.0));
}

void SpectralConfig::validate() const {
  TACO_CHECK(sample_rate_hz > 0, "sample rate must be positive");
  TACO_CHECK(is_pow2(fft_size), "fft_size must be a power of two >= 2, got ", fft_size);
  TACO_CHECK(frame_length() >= 2, "frame length too short: ", frame_length(), " samples");
  TACO_CHECK(frame_length() <= fft_size, "frame length ", frame_length(),
             " exceeds fft_size ", fft_size);
  TACO_CHECK(frame_shift() >= 1 && frame_shift() <= frame_length(),
             "frame shift must be in [1, frame_length], got ", frame_shift());
  TACO_CHECK(mel_bands >= 1, "mel_bands must be >= 1, got ", mel_bands);
  TACO_CHECK(griffin_lim_iters >= 0, "griffin_lim_iters must be >= 0, got ", griffin_lim_iters);
  TACO_CHECK(magnitude_power > 0.0, "magnitude_power must be positive");
  TACO_CHECK(preemphasis >= 0.0 && preemphasis < 1.0, "preemphasis must be in [0,1)");
  TACO_CHECK(mel_fmax() > fmin_hz, "fmax must exceed fmin");
}

std::string SpectralConfig::feature_hash() const {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "sr%d_fl%g_fs%g_n%d_pe%g_mel%d_f%g-%g", sample_rate_hz,
                frame_length_ms, frame_shift_ms, fft_size, preemphasis, mel_bands, fmin_hz,
                mel_fmax());
  // FNV-1a over the parameter string keeps the directory name short.
  uint64_t h = 1469598103934665603ull;
  for (const char* p = buf; *p; ++p) {
    h ^= static_cast<unsigned char>(*p);
    h *= 1099511628211ull;
  }
  char out[20];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return out;
}

// ---------------------------------------------------------------------------
// FFT
// ---------------------------------------------------------------------------

Fft::Fft(int n) : n_(n) {
  TACO_CHECK(is_pow2(n), "FFT size must be a power of two >= 2, got ", n);
  rev_.resize(static_cast<size_t>(n));
  int bits = 0;
  while ((1 << bits) < n) bits++;
  for (int i = 0; i < n; ++i) {
    int r = 0;
    for (int b = 0; b < bits; ++b)
      if (i & (1 << b)) r |= 1 << (bits - 1 - b);
    rev_[static_cast<size_t>(i)] = r;
  }
  tw_.resize(static_cast<size_t>(n / 2));
  for (int k = 0; k < n / 2; ++k)
    tw_[static_cast<size_t>(k)] = std::polar(1.0, -2.0 * kPi * k / n);
}

void Fft::transform(std::complex<double>* x, bool inv) const {
  for (int i = 0; i < n_; ++i) {
    const int r = rev_[static_cast<size_t>(i)];
    if (i < r) std::swap(x[i], x[r]);
  }
  for (int len = 2; len <= n_; len <<= 1) {
    const int half = len / 2;
    const int step = n_ / len;
    for (int base = 0; base < n_; base += len) {
      for (int k = 0; k < half; ++k) {
        std::complex<double> w = tw_[static_cast<size_t>(k * step)];
        if (inv) w = std::conj(w);
        const std::complex<double> u = x[base + k];
        const std::complex<double> v = x[base + k + half] * w;
        x[base + k] = u + v;
        x[base + k + half] = u - v;
      }
    }
  }
  if (inv) {
    const double s = 1.0 / n_;
    for (int i = 0; i < n_; ++i) x[i] *= s;
  }
}

void Fft::forward(std::complex<double>* x) const { transform(x, false); }
void Fft::inverse(std::complex<double>* x) const { transform(x, true); }

// ---------------------------------------------------------------------------
// Pre/de-emphasis
// ---------------------------------------------------------------------------

std::vector<double> pre_emphasis(const std::vector<double>& x, double a) {
  std::vector<double> y(x.size());
  double prev = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    y[i] = x[i] - a * prev;
    prev = x[i];
  }
  return y;
}

std::vector<double> de_emphasis(const std::vector<double>& y, double a) {
  std::vector<double> x(y.size());
  double prev = 0.0;
  for (size_t i = 0; i < y.size(); ++i) {
    prev = y[i] + a * prev;
    x[i] = prev;
  }
  return x;
}

// ---------------------------------------------------------------------------
// STFT / ISTFT
// ---------------------------------------------------------------------------

ComplexSpectrogram stft(const std::vector<double>& x, const SpectralConfig& cfg) {
  cfg.validate();
  TACO_CHECK(!x.empty(), "stft of empty signal");
  const int frame_len = cfg.frame_length();
  const int hop = cfg.frame_shift();
  const int pad = frame_len / 2;
  const int64_t n = static_cast<int64_t>(x.size());
  std::vector<double> padded(static_cast<size_t>(n + 2 * pad));
  for (int64_t i = 0; i < n + 2 * pad; ++i)
    padded[static_cast<size_t>(i)] = x[static_cast<size_t>(reflect_index(i - pad, n))];
  const int64_t n_frames = 1 + (static_cast<int64_t>(padded.size()) - frame_len) / hop;
  Fft fft(cfg.fft_size);
  auto window = hann_periodic(frame_len);
  return stft_raw(padded, cfg, n_frames, fft, window);
}

std::vector<double> istft(const ComplexSpectrogram& spec, const SpectralConfig& cfg,
                          int64_t out_len) {
  cfg.validate();
  TACO_CHECK(spec.n_bins == cfg.linear_bins(), "spectrogram has ", spec.n_bins,
             " bins but config expects ", cfg.linear_bins());
  TACO_CHECK(spec.n_frames >= 1, "istft of empty spectrogram");
  const int frame_len = cfg.frame_length();
  const int hop = cfg.frame_shift();
  const int pad = frame_len / 2;
  Fft fft(cfg.fft_size);
  auto window = hann_periodic(frame_len);
  std::vector<double> full = istft_raw(spec, cfg, fft, window);
  if (out_len < 0) out_len = (spec.n_frames - 1) * hop;
  TACO_CHECK(out_len + pad <= static_cast<int64_t>(full.size()),
             "requested istft length ", out_len, " exceeds the frame grid");
  return std::vector<double>(full.begin() + pad, full.begin() + pad + out_len);
}

MatD magnitude(const ComplexSpectrogram& spec) { return magnitude_raw(spec); }

// ---------------------------------------------------------------------------
// Mel filterbank
// ---------------------------------------------------------------------------

namespace {
double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }
}  // namespace

MatD build_mel_filterbank(const SpectralConfig& cfg) {
  cfg.validate();
  const int n_mel = cfg.mel_bands;
  const int n_bins = cfg.linear_bins();
  const double fmin = cfg.fmin_hz;
  const double fmax = cfg.mel_fmax();
  std::vector<double> edges(static_cast<size_t>(n_mel + 2));
  const double mlo = hz_to_mel(fmin), mhi = hz_to_mel(fmax);
  for (int i = 0; i < n_mel + 2; ++i)
    edges[static_cast<size_t>(i)] = mel_to_hz(mlo + (mhi - mlo) * i / (n_mel + 1));
  MatD fb(n_mel, n_bins);
  const double bin_hz = static_cast<double>(cfg.sample_rate_hz) / cfg.fft_size;
  for (int m = 0; m < n_mel; ++m) {
    const double lo = edges[static_cast<size_t>(m)];
    const double mid = edges[static_cast<size_t>(m + 1)];
    const double hi = edges[static_cast<size_t>(m + 2)];
    for (int b = 0; b < n_bins; ++b) {
      const double f = b * bin_hz;
      double w = 0.0;
      if (f > lo && f < mid)
        w = (f - lo) / (mid - lo);
      else if (f == mid)
        w = 1.0;
      else if (f > mid && f < hi)
        w = (hi - f) / (hi - mid);
      fb.at(m, b) = w;
    }
  }
  return fb;
}

MatD linear_to_mel(const MatD& mag, const MatD& fb) {
  TACO_CHECK(mag.cols == fb.cols, "magnitude has ", mag.cols, " bins but filterbank expects ",
             fb.cols);
  MatD out(mag.rows, fb.rows);
  for (int64_t t = 0; t < mag.rows; ++t)
    for (int64_t m = 0; m < fb.rows; ++m) {
      double acc = 0.0;
      const double* mr = mag.v.data() + t * mag.cols;
      const double* fr = fb.v.data() + m * fb.cols;
      for (int64_t b = 0; b < mag.cols; ++b) acc += mr[b] * fr[b];
      out.at(t, m) = acc;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Log-domain compression
// ---------------------------------------------------------------------------

double log_compress_value(double m) {
  const double db = 20.0 * std::log10(std::max(m, 1e-5));
  return std::clamp((db + 100.0) / 100.0, 0.0, 1.0);
}

double exp_expand_value(double f) {
  const double db = f * 100.0 - 100.0;
  return std::pow(10.0, db / 20.0);
}

MatD log_compress(const MatD& m) {
  MatD out(m.rows, m.cols);
  for (size_t i = 0; i < m.v.size(); ++i) {
    TACO_CHECK(m.v[i] >= 0.0, "log_compress input must be nonnegative");
    out.v[i] = log_compress_value(m.v[i]);
  }
  return out;
}

MatD exp_expand(const MatD& f) {
  MatD out(f.rows, f.cols);
  for (size_t i = 0; i < f.v.size(); ++i) out.v[i] = exp_expand_value(f.v[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Griffin-Lim
// ---------------------------------------------------------------------------

std::vector<double> griffin_lim(const MatD& mag, const SpectralConfig& cfg, int iters, Rng& rng,
                                std::vector<double>* error_trace) {
  cfg.validate();
  TACO_CHECK(iters >= 0, "griffin_lim iteration count must be >= 0, got ", iters);
  TACO_CHECK(mag.cols == cfg.linear_bins(), "magnitude has ", mag.cols,
             " bins but config expects ", cfg.linear_bins());
  TACO_CHECK(mag.rows >= 1, "griffin_lim on empty spectrogram");
  for (double v : mag.v) TACO_CHECK(v >= 0.0, "griffin_lim magnitudes must be nonnegative");

  const int frame_len = cfg.frame_length();
  const int hop = cfg.frame_shift();
  Fft fft(cfg.fft_size);
  auto window = hann_periodic(frame_len);

  ComplexSpectrogram S;
  S.n_frames = mag.rows;
  S.n_bins = mag.cols;
  S.v.resize(mag.v.size());
  for (size_t i = 0; i < mag.v.size(); ++i) {
    const double ph = cfg.griffin_lim_random_phase ? rng.uniform(-kPi, kPi) : 0.0;
    S.v[i] = std::polar(mag.v[i], ph);
  }

  double mag_norm = 0.0;
  for (double v : mag.v) mag_norm += v * v;
  mag_norm = std::sqrt(mag_norm);
  if (error_trace) error_trace->clear();

  const int64_t n_frames = mag.rows;
  for (int it = 0; it < iters; ++it) {
    std::vector<double> y = istft_raw(S, cfg, fft, window);
    ComplexSpectrogram E = stft_raw(y, cfg, n_frames, fft, window);
    if (error_trace) {
      double err = 0.0;
      for (size_t i = 0; i < E.v.size(); ++i) {
        const double d = std::abs(E.v[i]) - mag.v[i];
        err += d * d;
      }
      error_trace->push_back(mag_norm > 0.0 ? std::sqrt(err) / mag_norm : 0.0);
    }
    for (size_t i = 0; i < S.v.size(); ++i) {
      const double a = std::abs(E.v[i]);
      // Keep the existing (zero-angle) phase where the estimate vanishes.
      S.v[i] = a > 0.0 ? E.v[i] * (mag.v[i] / a) : std::complex<double>(mag.v[i], 0.0);
    }
  }

  std::vector<double> full = istft_raw(S, cfg, fft, window);
  // Trim half a frame of edge context, keep one hop per frame.
  const int pad = frame_len / 2;
  const int64_t want = n_frames * hop;
  const int64_t hi = std::min<int64_t>(pad + want, static_cast<int64_t>(full.size()));
  return std::vector<double>(full.begin() + pad, full.begin() + hi);
}

}  // namespace tacoforge
