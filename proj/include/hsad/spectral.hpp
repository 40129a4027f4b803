#pragma once

// Discrete Fourier transform and per-dimension spectral features.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hsad/error.hpp"
#include "hsad/signal.hpp"

namespace hsad {

using Complex = std::complex<double>;

namespace detail {

inline std::size_t smallest_factor(std::size_t n) {
  if (n % 2 == 0) return 2;
  for (std::size_t p = 3; p * p <= n; p += 2) {
    if (n % p == 0) return p;
  }
  return n;
}

// Mixed-radix decimation in time. `twiddle[m]` = exp(-2*pi*i*m/N) for the
// top-level N; a sub-transform of length n uses every (N/n)-th entry.
class MixedRadixFft {
 public:
  explicit MixedRadixFft(std::size_t n) : n_(n), twiddle_(n) {
    for (std::size_t m = 0; m < n; ++m) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(n);
      twiddle_[m] = {std::cos(angle), std::sin(angle)};
    }
  }

  std::vector<Complex> operator()(std::span<const Complex> x) const {
    std::vector<Complex> out(n_);
    transform(x.data(), 1, n_, out.data());
    return out;
  }

 private:
  void transform(const Complex* in, std::size_t stride, std::size_t n, Complex* out) const {
    const std::size_t tw_step = n_ / n;
    if (n == 1) {
      out[0] = in[0];
      return;
    }
    const std::size_t p = smallest_factor(n);
    if (p == n) {
      // prime length: direct summation with exact index reduction
      for (std::size_t k = 0; k < n; ++k) {
        Complex acc{};
        for (std::size_t j = 0; j < n; ++j) acc += in[j * stride] * twiddle_[((j * k) % n) * tw_step];
        out[k] = acc;
      }
      return;
    }
    const std::size_t m = n / p;
    std::vector<Complex> sub(n);  // p consecutive length-m transforms
    for (std::size_t r = 0; r < p; ++r) transform(in + r * stride, stride * p, m, sub.data() + r * m);
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t t = 0; t < p; ++t) {
        const std::size_t bin = k + m * t;
        Complex acc{};
        for (std::size_t r = 0; r < p; ++r) acc += sub[r * m + k] * twiddle_[((r * bin) % n) * tw_step];
        out[bin] = acc;
      }
    }
  }

  std::size_t n_;
  std::vector<Complex> twiddle_;
};

}  // namespace detail

// Unnormalized forward DFT: Y_k = sum_n x_n exp(-2*pi*i*n*k/N).
inline std::vector<Complex> dft(std::span<const double> x) {
  if (x.empty()) throw DomainError("dft of an empty signal");
  std::vector<Complex> cx(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) throw DomainError("dft input has a non-finite sample");
    cx[i] = x[i];
  }
  return detail::MixedRadixFft(x.size())(cx);
}

enum class FeatureMode { fft_max, time_max };

inline std::string_view to_string(FeatureMode m) { return m == FeatureMode::fft_max ? "fft-max" : "time-max"; }

inline FeatureMode parse_feature_mode(std::string_view s) {
  if (s == "fft-max" || s == "fft_max") return FeatureMode::fft_max;
  if (s == "time-max" || s == "time_max") return FeatureMode::time_max;
  throw ConfigError("unknown feature mode \"" + std::string(s) + "\"");
}

struct SpectralFeature {
  std::vector<double> values;
  FeatureMode mode = FeatureMode::fft_max;
  std::vector<int> layer_ids;
  std::vector<Node> node_tags;
  std::size_t signal_length = 0;
  // fft_max only: bin attaining the maximum per dimension (lowest k on ties).
  std::vector<std::size_t> peak_bins;
};

// A^i = max_{1 <= k < N} |Y_k^i| for every column of the signal matrix.
inline SpectralFeature spectral_feature(const SignalMatrix& t) {
  const std::size_t n = t.rows();
  if (n < 2) throw DomainError("spectral feature needs at least 2 samples (got " + std::to_string(n) + ")");
  SpectralFeature f{std::vector<double>(t.cols()), FeatureMode::fft_max, t.layer_ids(), t.node_tags(), n,
                    std::vector<std::size_t>(t.cols())};
  const detail::MixedRadixFft fft(n);
  std::vector<Complex> column(n);
  for (std::size_t i = 0; i < t.cols(); ++i) {
    // Shifting by a constant only changes Y_0; anchoring at the first sample
    // makes constant columns transform to exact zeros.
    const double anchor = t(0, i);
    for (std::size_t r = 0; r < n; ++r) column[r] = t(r, i) - anchor;
    const auto spectrum = fft(column);
    double best = -1.0;
    std::size_t best_k = 1;
    for (std::size_t k = 1; k < n; ++k) {
      const double mag = std::abs(spectrum[k]);
      if (mag > best) {
        best = mag;
        best_k = k;
      }
    }
    f.values[i] = best;
    f.peak_bins[i] = best_k;
  }
  return f;
}

// Time-domain baseline: signed maximum of each column, or max |x| when
// `absolute` is set.
inline SpectralFeature time_max_feature(const SignalMatrix& t, bool absolute = false) {
  if (t.rows() < 1) throw ShapeError("empty signal matrix");
  SpectralFeature f{std::vector<double>(t.cols()), FeatureMode::time_max, t.layer_ids(), t.node_tags(),
                    t.rows(), {}};
  for (std::size_t i = 0; i < t.cols(); ++i) {
    double best = absolute ? std::abs(t(0, i)) : t(0, i);
    for (std::size_t r = 1; r < t.rows(); ++r) best = std::max(best, absolute ? std::abs(t(r, i)) : t(r, i));
    f.values[i] = best;
  }
  return f;
}

}  // namespace hsad
