#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "gaitspeed/error.hpp"

namespace gaitspeed {

/// One-sided magnitude spectrum; bins are uniformly spaced at
/// sample_rate / fft_length.
struct Spectrum {
  std::vector<double> frequencies;
  std::vector<double> magnitudes;
  double resolution = 0;     // Hz per bin
  std::size_t fft_length = 0;

  /// Index of the strongest bin with frequency in [lo, hi].
  std::size_t peak_in_band(double lo, double hi) const {
    std::size_t best = frequencies.size();
    for (std::size_t i = 0; i < frequencies.size(); ++i) {
      if (frequencies[i] < lo || frequencies[i] > hi) continue;
      if (best == frequencies.size() || magnitudes[i] > magnitudes[best]) best = i;
    }
    if (best == frequencies.size()) fail(Errc::out_of_range, "no spectral bins inside band");
    return best;
  }
};

struct CadenceEstimate {
  double dominant_hz = 0;        // strongest in-band spectral component
  double step_frequency_hz = 0;  // dominant * harmonic multiplier
  double band_low_hz = 0;
  double band_high_hz = 0;
};

struct StepFreqOptions {
  double band_low_hz = 0.5;
  double band_high_hz = 4.0;
  // The wrist swings once per stride (two steps), so the spectral
  // fundamental is read at twice its value by default.
  double harmonic_multiplier = 2.0;
  // In-band peak must exceed this multiple of the in-band median magnitude
  // to count as a dominant component.
  double min_peak_ratio = 3.0;
};

namespace detail {

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Iterative radix-2 Cooley-Tukey, in place; a.size() must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * 3.14159265358979323846 / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

}  // namespace detail

/// One-sided magnitude spectrum of the mean-removed, Hann-windowed signal,
/// zero-padded to the next power of two.
inline Spectrum fft_magnitude(std::span<const double> signal, double sample_rate_hz) {
  const std::size_t n = signal.size();
  if (n < 2) fail(Errc::too_short, "need at least 2 samples for a spectrum");
  if (sample_rate_hz <= 0) fail(Errc::out_of_range, "sample rate must be positive");

  double mean = 0;
  for (double v : signal) mean += v;
  mean /= static_cast<double>(n);

  const std::size_t len = detail::next_pow2(n);
  std::vector<std::complex<double>> buf(len, {0.0, 0.0});
  for (std::size_t i = 0; i < n; ++i) {
    const double w =
        0.5 * (1.0 - std::cos(2.0 * 3.14159265358979323846 * static_cast<double>(i) /
                              static_cast<double>(n - 1)));
    buf[i] = {(signal[i] - mean) * w, 0.0};
  }
  detail::fft_inplace(buf);

  Spectrum s;
  s.fft_length = len;
  s.resolution = sample_rate_hz / static_cast<double>(len);
  const std::size_t bins = len / 2 + 1;
  s.frequencies.resize(bins);
  s.magnitudes.resize(bins);
  for (std::size_t i = 0; i < bins; ++i) {
    s.frequencies[i] = static_cast<double>(i) * s.resolution;
    s.magnitudes[i] = std::abs(buf[i]);
  }
  return s;
}

/// Estimates arm-swing cadence from tri-axial acceleration: the Euclidean
/// norm channel is transformed and the strongest in-band component is read.
inline CadenceEstimate step_frequency(std::span<const std::array<double, 3>> accel,
                                      double sample_rate_hz,
                                      const StepFreqOptions& opt = StepFreqOptions{}) {
  if (sample_rate_hz <= 0) fail(Errc::out_of_range, "sample rate must be positive");
  if (static_cast<double>(accel.size()) < 2.0 * sample_rate_hz)
    fail(Errc::too_short, "need at least 2 s of signal for a cadence estimate");
  if (!(opt.band_low_hz >= 0 && opt.band_high_hz > opt.band_low_hz))
    fail(Errc::out_of_range, "bad frequency band");

  std::vector<double> norm(accel.size());
  for (std::size_t i = 0; i < accel.size(); ++i)
    norm[i] = std::sqrt(accel[i][0] * accel[i][0] + accel[i][1] * accel[i][1] +
                        accel[i][2] * accel[i][2]);

  const Spectrum s = fft_magnitude(norm, sample_rate_hz);
  std::vector<double> band;
  for (std::size_t i = 0; i < s.frequencies.size(); ++i)
    if (s.frequencies[i] >= opt.band_low_hz && s.frequencies[i] <= opt.band_high_hz)
      band.push_back(s.magnitudes[i]);
  if (band.empty()) fail(Errc::out_of_range, "no spectral bins inside band");

  const std::size_t peak_bin = s.peak_in_band(opt.band_low_hz, opt.band_high_hz);
  const double peak = s.magnitudes[peak_bin];
  std::nth_element(band.begin(), band.begin() + static_cast<std::ptrdiff_t>(band.size() / 2),
                   band.end());
  const double median = band[band.size() / 2];
  if (!(peak > opt.min_peak_ratio * median) || peak <= 0.0)
    fail(Errc::no_dominant_peak, "no dominant in-band spectral peak");

  CadenceEstimate est;
  est.dominant_hz = s.frequencies[peak_bin];
  est.step_frequency_hz = est.dominant_hz * opt.harmonic_multiplier;
  est.band_low_hz = opt.band_low_hz;
  est.band_high_hz = opt.band_high_hz;
  return est;
}

inline constexpr double kMetersPerMile = 1609.344;

/// Walking/running speed from step length and step frequency: S = l * f.
inline double speed_from_cadence(double step_length_m, double step_frequency_hz) {
  if (step_length_m < 0 || step_frequency_hz < 0)
    fail(Errc::out_of_range, "step length and frequency must be nonnegative");
  return step_length_m * step_frequency_hz;
}

inline double mps_to_mph(double mps) { return mps * 3600.0 / kMetersPerMile; }
inline double mph_to_mps(double mph) { return mph * kMetersPerMile / 3600.0; }

}  // namespace gaitspeed
