// upit/wav.hpp
//
// Minimal RIFF/WAVE I/O restricted to the corpus format: mono 16-bit
// signed little-endian PCM.  Samples map to [-1, 1) as s / 32768 on read;
// writing rounds x * 32768 and clamps to the int16 range.  Anything else
// (other formats, channel counts, bit depths) is rejected rather than
// converted, and a sample-rate mismatch against the expected rate is an
// error: there is no resampling anywhere in the pipeline.

#pragma once

#include "upit/types.hpp"

#include <string>

namespace upit::wav {

/// Reads a mono 16-bit PCM WAV file.
TimeSignal read(const std::string& path);

/// Reads and additionally checks the header sample rate against
/// expected_rate, throwing std::runtime_error on mismatch.
TimeSignal read(const std::string& path, double expected_rate);

/// Writes a mono 16-bit PCM WAV file.
void write(const std::string& path, const TimeSignal& signal);

}  // namespace upit::wav
