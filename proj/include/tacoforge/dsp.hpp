#pragma once

// Spectral processing: pre-emphasis, STFT/ISTFT on a reflect-padded frame
// grid, mel filterbank, log-domain feature compression, and Griffin-Lim
// phase reconstruction. All math runs in double and is deterministic.

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "tacoforge/matrix.hpp"
#include "tacoforge/rng.hpp"

namespace tacoforge {

struct SpectralConfig {
  int sample_rate_hz = 24000;
  double frame_length_ms = 50.0;
  double frame_shift_ms = 12.5;
  int fft_size = 2048;
  double preemphasis = 0.97;
  int mel_bands = 80;
  int griffin_lim_iters = 50;
  double magnitude_power = 1.2;
  double fmin_hz = 0.0;
  double fmax_hz = -1.0;  // <= 0 selects Nyquist
  bool griffin_lim_random_phase = false;

  int frame_length() const;  // samples
  int frame_shift() const;   // samples
  int linear_bins() const { return fft_size / 2 + 1; }
  double mel_fmax() const { return fmax_hz > 0.0 ? fmax_hz : sample_rate_hz / 2.0; }
  void validate() const;

  // Identifier folded into feature cache paths; covers every field that
  // changes extracted features.
  std::string feature_hash() const;
};

// Complex STFT frames, row-major [n_frames x n_bins].
struct ComplexSpectrogram {
  int64_t n_frames = 0;
  int64_t n_bins = 0;
  std::vector<std::complex<double>> v;

  std::complex<double>& at(int64_t t, int64_t b) { return v[static_cast<size_t>(t * n_bins + b)]; }
  const std::complex<double>& at(int64_t t, int64_t b) const {
    return v[static_cast<size_t>(t * n_bins + b)];
  }
};

// Radix-2 complex FFT with precomputed twiddles, reused across frames.
class Fft {
 public:
  explicit Fft(int n);
  int size() const { return n_; }
  void forward(std::complex<double>* x) const;
  void inverse(std::complex<double>* x) const;

 private:
  void transform(std::complex<double>* x, bool inv) const;
  int n_;
  std::vector<int> rev_;
  std::vector<std::complex<double>> tw_;  // e^{-2πik/n}, k < n/2
};

// y[0] = x[0]; y[n] = x[n] - a*x[n-1]
std::vector<double> pre_emphasis(const std::vector<double>& x, double a);
// x[n] = y[n] + a*x[n-1]
std::vector<double> de_emphasis(const std::vector<double>& y, double a);

// Reflect-pads by frame_length/2 on both ends, then windows (periodic Hann),
// zero-pads each frame to fft_size and transforms. n_frames = 1 +
// floor(len/hop).
ComplexSpectrogram stft(const std::vector<double>& x, const SpectralConfig& cfg);

// Least-squares inverse of the frame grid (overlap-add with window-squared
// sum normalization), cropped back to out_len samples. Exact inverse of stft
// for unmodified spectra. out_len < 0 uses (n_frames-1)*hop.
std::vector<double> istft(const ComplexSpectrogram& spec, const SpectralConfig& cfg,
                          int64_t out_len = -1);

MatD magnitude(const ComplexSpectrogram& spec);

// mel_bands x linear_bins triangular filters, centers uniform on
// mel(f) = 2595*log10(1 + f/700) between fmin and fmax.
MatD build_mel_filterbank(const SpectralConfig& cfg);

// frames . fb^T : [T x bins] -> [T x mel_bands]
MatD linear_to_mel(const MatD& mag, const MatD& fb);

// db = 20*log10(max(m, 1e-5)); out = clip((db + 100) / 100, 0, 1)
MatD log_compress(const MatD& m);
double log_compress_value(double m);
// Inverse of log_compress on the non-clipped range.
MatD exp_expand(const MatD& f);
double exp_expand_value(double f);

// Iterates S <- mag * exp(i*angle(stft(istft(S)))) on the raw frame grid.
// Phase starts at zero (or seeded uniform when cfg.griffin_lim_random_phase).
// error_trace, when given, receives the per-iteration spectral-convergence
// error || |stft(y)| - mag ||_F / ||mag||_F.
std::vector<double> griffin_lim(const MatD& mag, const SpectralConfig& cfg, int iters, Rng& rng,
                                std::vector<double>* error_trace = nullptr);

}  // namespace tacoforge
