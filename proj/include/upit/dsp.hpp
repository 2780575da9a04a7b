// upit/dsp.hpp
//
// STFT analysis and overlap-add synthesis.
//
// Analysis of a length-n signal y with window w, frame length N and hop L:
//
//   Y(t, f) = sum_{k=0}^{N-1} y[k + tL] w[k] exp(-i 2 pi k f / N)
//
// for f = 0..N/2 (single-sided) and t = 0..T-1 with T = (n - N) / L + 1.
// Synthesis inverts each frame (1/N-scaled inverse DFT of the
// conjugate-symmetric spectrum), applies the synthesis window v and
// overlap-adds at the same hop.  The synthesized length is (T-1) L + N.
//
// With windows satisfying constant overlap-add at unit gain (for example
// sqrt-Hann analysis and synthesis at 50% overlap), analyze -> synthesize
// reproduces the interior of the input; the first and last N - L samples
// see a partial window sum and are excluded from round-trip guarantees.

#pragma once

#include "upit/types.hpp"

#include <utility>

namespace upit::dsp {

/// All-ones window.
Eigen::ArrayXd rect_window(Index n);

/// Periodic Hann window, w[k] = 0.5 (1 - cos(2 pi k / n)).
Eigen::ArrayXd hann_window(Index n);

/// Square root of the periodic Hann window.  Used for both analysis and
/// synthesis so the product overlap-adds to one at 50% overlap.
Eigen::ArrayXd sqrt_hann_window(Index n);

/// Default configuration: sqrt-Hann analysis and synthesis windows at the
/// given frame length and hop.
StftConfig make_config(Index frame_len = 256, Index hop = 128,
                       double sample_rate = kDefaultSampleRate);

/// Throws std::invalid_argument("bad config") unless frame_len >= 1,
/// 0 < hop <= frame_len and both windows are finite with length frame_len.
void validate_config(const StftConfig& config);

/// Maximum relative deviation of sum_t w[k - tL] v[k - tL] from its
/// steady-state level, measured away from the edges.  Zero for an exact
/// constant-overlap-add pair; values below ~1e-6 count as COLA-valid.
double check_cola(const StftConfig& config);

/// Number of analysis frames for a signal of the given length (after the
/// minimum zero-padding to one frame).
Index num_frames(Index signal_len, const StftConfig& config);

/// Windowed single-sided STFT.  Signals shorter than one frame are
/// zero-padded to frame_len with a warning; empty signals are an error.
ComplexSpectrogram analyze(const TimeSignal& signal, const StftConfig& config);

/// Inverse STFT: per-frame inverse DFT, synthesis window, overlap-add.
/// Output length is (T-1) hop + frame_len at config.sample_rate.
TimeSignal synthesize(const ComplexSpectrogram& spec);

/// Splits a complex grid into magnitude and phase.  Bins with exactly zero
/// magnitude get phase 0, so magnitude * exp(i phase) always reproduces the
/// input.
std::pair<MagSpectrogram, PhaseSpectrogram> magnitude_phase(
    const ComplexSpectrogram& spec);

}  // namespace upit::dsp
