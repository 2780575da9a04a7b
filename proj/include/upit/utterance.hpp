// upit/utterance.hpp
//
// A realized separation example: the mixture's magnitude/phase grids,
// the reference source spectrograms and the time-domain signals needed
// for waveform scoring.  Reference spectrograms are analyzed from the
// scaled float signals (not re-read from quantized audio), so the
// mixture spectrogram stays the exact sum of the source spectrograms.

#pragma once

#include "upit/dsp.hpp"
#include "upit/masks.hpp"
#include "upit/mixgen.hpp"
#include "upit/types.hpp"

#include <string>
#include <vector>

namespace upit::data {

struct Utterance {
  std::string id;
  MagSpectrogram mixture_mag;
  PhaseSpectrogram mixture_phase;
  masks::SourceSet refs;
  TimeSignal mixture_signal;
  std::vector<TimeSignal> ref_signals;
  std::vector<bool> ref_silent;  // silent-channel flags, aligned with refs

  Index num_speakers() const { return refs.num_speakers(); }
  Index num_frames() const { return mixture_mag.values.cols(); }
};

using Dataset = std::vector<Utterance>;

/// STFT plumbing from a realized mixture.
Utterance make_utterance(const mixgen::Mixture& mixture,
                         const StftConfig& config);

/// Realizes and analyzes every record of the given split.
Dataset load_dataset(const mixgen::Manifest& manifest, const std::string& split,
                     const StftConfig& config, const std::string& corpus_root);

}  // namespace upit::data
