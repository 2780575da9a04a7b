// upit/types.hpp
//
// Core value types shared across the library: time-domain signals,
// STFT configuration and the F x T spectrogram grids everything else
// operates on.  All numeric work is double precision; grids are Eigen
// arrays (element-wise semantics) with frequency on rows and frames on
// columns.

#pragma once

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>
#include <string>

namespace upit {

using Index = Eigen::Index;
using Array = Eigen::ArrayXXd;    // F x T real grid
using CArray = Eigen::ArrayXXcd;  // F x T complex grid

inline constexpr double kDefaultSampleRate = 8000.0;

// Library-wide floor below which a spectral denominator counts as silence.
// Operations that divide by |Y| or sum_s |X_s| take this as a defaulted
// parameter, so it can be overridden per call.
inline constexpr double kDegenerateEps = 1e-8;

/// A finite sequence of real samples with a sample rate.  Samples are
/// dimensionless amplitudes, nominally in [-1, 1].
struct TimeSignal {
  Eigen::ArrayXd samples;
  double sample_rate = kDefaultSampleRate;

  Index length() const { return samples.size(); }
};

/// STFT analysis/synthesis configuration.  Both windows have length
/// frame_len; hop is the frame shift in samples.  The pair
/// (analysis_window, synthesis_window, hop) is expected to satisfy the
/// constant-overlap-add condition; see dsp::check_cola.
struct StftConfig {
  Index frame_len = 256;
  Index hop = 128;
  double sample_rate = kDefaultSampleRate;
  Eigen::ArrayXd analysis_window;
  Eigen::ArrayXd synthesis_window;

  Index num_bins() const { return frame_len / 2 + 1; }
};

/// Single-sided complex STFT, F = frame_len/2 + 1 rows, one column per frame.
struct ComplexSpectrogram {
  CArray bins;
  StftConfig config;

  Index num_bins() const { return bins.rows(); }
  Index num_frames() const { return bins.cols(); }
};

struct MagSpectrogram {
  Array values;  // >= 0
};

struct PhaseSpectrogram {
  Array values;  // radians
};

namespace detail {

/// Diagnostic warning sink (stderr).  Kept as a function so tests can
/// exercise paths that warn without failing.
void warn(const std::string& message);

}  // namespace detail

}  // namespace upit
