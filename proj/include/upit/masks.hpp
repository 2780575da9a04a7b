// upit/masks.hpp
//
// Ideal time-frequency masks for S sources mixed into one observed
// signal, all defined on F x T magnitude grids with A_s = |X_s|,
// R = |Y| and phases theta_s, theta_y:
//
//   IRM_s   = A_s / sum_r A_r                       in [0, 1], sums to 1
//   IAM_s   = A_s / R                               in [0, inf)
//   IPSM_s  = A_s cos(theta_y - theta_s) / R        sums to 1
//   INPSM_s = max(0, IPSM_s)
//
// The phase-sensitive mask scales the mixture magnitude to the
// projection of the source onto the mixture phase, which is why the
// IPSM set sums to one: the projections of the sources add up to the
// mixture itself.  Bins where the defining denominator falls below eps
// are degenerate; IRM falls back to the uniform 1/S there and the
// others to 0.
//
// Reconstruction pairs a masked mixture magnitude with the mixture
// phase -- the phase of the mixed signal is used directly, no phase
// estimate is attempted.

#pragma once

#include "upit/dsp.hpp"
#include "upit/types.hpp"

#include <string>
#include <vector>

namespace upit::masks {

enum class MaskKind { Irm, Iam, Ipsm, Inpsm, Estimated };

/// S masks of identical F x T shape.
struct MaskSet {
  std::vector<Array> masks;
  MaskKind kind = MaskKind::Estimated;

  Index num_speakers() const { return static_cast<Index>(masks.size()); }
};

/// S source spectrograms plus the mixture they sum to.
struct SourceSet {
  std::vector<ComplexSpectrogram> sources;
  ComplexSpectrogram mixture;

  Index num_speakers() const { return static_cast<Index>(sources.size()); }
};

/// Ideal mask of the requested kind for every source in the set.
MaskSet oracle_mask(const SourceSet& set, MaskKind kind,
                    double eps = kDegenerateEps);

/// Element-wise masked magnitude, clamped to be nonnegative.
MagSpectrogram apply_mask(const Array& mask, const MagSpectrogram& mixture);

/// Masked mixture magnitude recombined with the mixture phase and
/// inverted to a time signal.  The config must be COLA-valid.
TimeSignal reconstruct(const Array& mask, const MagSpectrogram& mixture_mag,
                       const PhaseSpectrogram& mixture_phase,
                       const StftConfig& config);

/// Binary F x T grid files (masks or magnitudes): fixed magic, u32 rows,
/// u32 cols, column-major little-endian float64 payload.
void write_grid(const std::string& path, const Array& grid);
Array read_grid(const std::string& path);

}  // namespace upit::masks
