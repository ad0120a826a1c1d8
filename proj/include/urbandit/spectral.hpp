#pragma once

// Frequency-domain view of a window along its time axis, with the four
// amplitude-filtering variants used by the frequency prompt.

#include "urbandit/types.hpp"

#include <string>
#include <vector>

namespace urbandit {

enum class FFTModeKind { none, mean_threshold, quantile80, topk };

struct FFTMode {
  FFTModeKind kind = FFTModeKind::mean_threshold;
  int k = 3;  // topk only

  /// Config names: none, mean, q80, topk.
  static FFTMode parse(const std::string& name, int k = 3);
  std::string name() const;
};

/// Amplitudes closer than this fraction of the window's peak amplitude are
/// treated as equal when thresholding or ranking.
inline constexpr double kAmplitudeTieTolerance = 1e-9;

struct Spectrum {
  Mat re;  // T x S, bin k = sum_t x[t] exp(-2 pi i k t / T)
  Mat im;
  Mat amplitude() const;
};

/// Full DFT of each column (location) along the time axis.
Spectrum dft_time_axis(const Mat& x);

/// Linear-interpolation quantile (numpy's default convention).
double quantile_linear(std::vector<double> values, double q);

/// Binary keep-mask (T x S). mean and q80 thresholds are taken over the whole
/// amplitude array; topk keeps k bins per location, ties to the lower bin.
Mat frequency_mask(const Mat& amplitude, const FFTMode& mode);

struct FreqFilterResult {
  Spectrum filtered;  // spectrum * keep
  Mat keep;           // T x S
  Mat features;       // S x 2 f_max: [Re(0..f_max-1), Im(0..f_max-1)], zero padded
};

FreqFilterResult freq_filter(const Mat& x, const FFTMode& mode, Index f_max = 64);

}  // namespace urbandit
