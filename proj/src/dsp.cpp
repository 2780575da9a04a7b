#include "upit/dsp.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <vector>

namespace upit {

namespace detail {

void warn(const std::string& message) {
  std::cerr << "upit: warning: " << message << "\n";
}

}  // namespace detail

namespace dsp {

Eigen::ArrayXd rect_window(Index n) { return Eigen::ArrayXd::Ones(n); }

Eigen::ArrayXd hann_window(Index n) {
  Eigen::ArrayXd w(n);
  for (Index k = 0; k < n; ++k) {
    w[k] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi *
                                 static_cast<double>(k) /
                                 static_cast<double>(n)));
  }
  return w;
}

Eigen::ArrayXd sqrt_hann_window(Index n) { return hann_window(n).sqrt(); }

StftConfig make_config(Index frame_len, Index hop, double sample_rate) {
  StftConfig config;
  config.frame_len = frame_len;
  config.hop = hop;
  config.sample_rate = sample_rate;
  config.analysis_window = sqrt_hann_window(frame_len);
  config.synthesis_window = sqrt_hann_window(frame_len);
  return config;
}

void validate_config(const StftConfig& config) {
  const bool ok = config.frame_len >= 1 && config.hop >= 1 &&
                  config.hop <= config.frame_len &&
                  config.sample_rate > 0.0 &&
                  config.analysis_window.size() == config.frame_len &&
                  config.synthesis_window.size() == config.frame_len &&
                  config.analysis_window.isFinite().all() &&
                  config.synthesis_window.isFinite().all();
  if (!ok) throw std::invalid_argument("bad config");
}

double check_cola(const StftConfig& config) {
  validate_config(config);
  const Index n = config.frame_len;
  const Index hop = config.hop;
  const Eigen::ArrayXd product =
      config.analysis_window * config.synthesis_window;

  const Index frames = std::max<Index>(8, 8 * n / hop);
  const Index total = (frames - 1) * hop + n;
  Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(total);
  for (Index t = 0; t < frames; ++t) acc.segment(t * hop, n) += product;

  // Steady-state region: at least one full frame away from either edge.
  const Index lo = n;
  const Index hi = total - n;
  if (hi <= lo) throw std::invalid_argument("bad config");

  std::vector<double> region(acc.data() + lo, acc.data() + hi);
  const auto mid = region.begin() + region.size() / 2;
  std::nth_element(region.begin(), mid, region.end());
  const double level = *mid;
  if (!(level > 0.0)) return std::numeric_limits<double>::infinity();

  const double dev = (acc.segment(lo, hi - lo) - level).abs().maxCoeff();
  return dev / level;
}

Index num_frames(Index signal_len, const StftConfig& config) {
  if (signal_len < config.frame_len) return 1;
  return (signal_len - config.frame_len) / config.hop + 1;
}

ComplexSpectrogram analyze(const TimeSignal& signal, const StftConfig& config) {
  validate_config(config);
  if (signal.samples.size() == 0)
    throw std::invalid_argument("signal too short");
  if (!signal.samples.isFinite().all())
    throw std::invalid_argument("nonfinite samples");

  const Index n = config.frame_len;
  Eigen::ArrayXd samples = signal.samples;
  if (samples.size() < n) {
    detail::warn("signal shorter than one frame; zero-padding to " +
                 std::to_string(n) + " samples");
    Eigen::ArrayXd padded = Eigen::ArrayXd::Zero(n);
    padded.head(samples.size()) = samples;
    samples = std::move(padded);
  }

  const Index frames = num_frames(samples.size(), config);
  const Index bins = config.num_bins();

  ComplexSpectrogram spec;
  spec.config = config;
  spec.bins.resize(bins, frames);

  Eigen::FFT<double> fft;
  std::vector<double> frame(static_cast<std::size_t>(n));
  std::vector<std::complex<double>> freq(static_cast<std::size_t>(n));
  for (Index t = 0; t < frames; ++t) {
    const Index offset = t * config.hop;
    for (Index k = 0; k < n; ++k)
      frame[static_cast<std::size_t>(k)] =
          samples[offset + k] * config.analysis_window[k];
    fft.fwd(freq, frame);
    for (Index f = 0; f < bins; ++f)
      spec.bins(f, t) = freq[static_cast<std::size_t>(f)];
  }
  return spec;
}

TimeSignal synthesize(const ComplexSpectrogram& spec) {
  const StftConfig& config = spec.config;
  validate_config(config);
  const Index n = config.frame_len;
  const Index bins = config.num_bins();
  if (spec.bins.rows() != bins || spec.bins.cols() < 1)
    throw std::invalid_argument("bad spectrogram shape");

  const Index frames = spec.bins.cols();
  const Index total = (frames - 1) * config.hop + n;

  TimeSignal out;
  out.sample_rate = config.sample_rate;
  out.samples = Eigen::ArrayXd::Zero(total);

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq(static_cast<std::size_t>(n));
  std::vector<std::complex<double>> frame(static_cast<std::size_t>(n));
  for (Index t = 0; t < frames; ++t) {
    // Rebuild the full spectrum from the single-sided half by conjugate
    // symmetry, then take the real part of the 1/N-scaled inverse DFT.
    for (Index f = 0; f < bins; ++f)
      freq[static_cast<std::size_t>(f)] = spec.bins(f, t);
    for (Index f = 1; f < n - bins + 1; ++f)
      freq[static_cast<std::size_t>(n - f)] = std::conj(spec.bins(f, t));
    fft.inv(frame, freq);
    const Index offset = t * config.hop;
    for (Index k = 0; k < n; ++k)
      out.samples[offset + k] +=
          config.synthesis_window[k] * frame[static_cast<std::size_t>(k)].real();
  }
  return out;
}

std::pair<MagSpectrogram, PhaseSpectrogram> magnitude_phase(
    const ComplexSpectrogram& spec) {
  MagSpectrogram mag;
  PhaseSpectrogram phase;
  mag.values = spec.bins.abs();
  phase.values = (mag.values > 0.0).select(spec.bins.arg(), 0.0);
  return {std::move(mag), std::move(phase)};
}

}  // namespace dsp
}  // namespace upit
