// upit/pit.hpp
//
// Permutation invariant loss machinery.  An estimated mask set and a
// reference source set are compared under one of three criteria, each a
// mean squared error over the F x T x S grid normalized by
// B = frames * bins * speakers:
//
//   mask MSE   ||M_s - IRM_r||^2                 (masks compared directly)
//   amplitude  ||M_s . R - A_r||^2               (masked mixture magnitude)
//   phase-sens ||M_s . R - A_r cos(ty - tr)||^2  (target projected onto the
//                                                 mixture phase)
//
// The pairwise matrix holds all S^2 output/reference combinations; the
// permutation minimizing the summed loss is found either exhaustively
// (S! candidates, S <= 8) or with an O(S^3) assignment solver.  Only S^2
// Frobenius evaluations are ever needed: every permutation's loss is a
// sum of pairwise entries.
//
// Utterance-level training uses one permutation for all frames
// (upit_loss).  Frame-level training segments the utterance into
// meta-frames and picks a permutation per segment, which bounds the
// utterance-level loss from below and reduces to it when the meta-frame
// spans the whole utterance.

#pragma once

#include "upit/masks.hpp"
#include "upit/types.hpp"

#include <cstdint>
#include <vector>

namespace upit::pit {

enum class LossKind { MaskMse, Amplitude, Psm };

/// Half-open frame interval [begin, end).
struct FrameRange {
  Index begin = 0;
  Index end = 0;

  Index length() const { return end - begin; }
};

/// entries(s, r) is the normalized loss of pairing output s with
/// reference r; normalizer is the B used for every entry.
struct PairwiseLossMatrix {
  Eigen::MatrixXd entries;
  double normalizer = 0.0;
};

/// perm[s] is the reference assigned to output s (a bijection).
struct PermutationResult {
  std::vector<Index> perm;
  double loss = 0.0;
};

/// Per-meta-frame assignments plus the frame-weighted total loss.
struct MetaFrameLoss {
  std::vector<FrameRange> ranges;
  std::vector<PermutationResult> assignments;
  double total = 0.0;
};

/// Largest S for which best_permutation enumerates all S! candidates.
inline constexpr Index kExhaustiveLimit = 8;

/// Per-reference target grids for the given criterion: IRM masks for
/// mask MSE, source magnitudes for amplitude, phase-projected magnitudes
/// for the phase-sensitive loss.
std::vector<Array> loss_targets(const masks::SourceSet& refs, LossKind kind,
                                double eps = kDegenerateEps);

/// All S^2 pairwise losses over the given frame range, normalized by
/// B = range length * bins * speakers.
PairwiseLossMatrix pairwise_losses(const masks::MaskSet& est,
                                   const MagSpectrogram& mixture_mag,
                                   const std::vector<Array>& targets,
                                   LossKind kind, FrameRange range);

/// Convenience overload building the targets from the reference set and
/// covering all frames.
PairwiseLossMatrix pairwise_losses(const masks::MaskSet& est,
                                   const masks::SourceSet& refs,
                                   LossKind kind);

/// Number of pairwise Frobenius evaluations since the last reset, for
/// the calling thread.
std::uint64_t pairwise_eval_count();
void reset_pairwise_eval_count();

/// Exhaustive minimum-cost permutation of a square loss matrix.  Ties
/// break toward the lexicographically smallest permutation.  Throws for
/// S > kExhaustiveLimit, pointing at best_permutation_assignment.
PermutationResult best_permutation(const Eigen::MatrixXd& entries);

/// Same minimum via the O(S^3) Hungarian assignment algorithm, for
/// speaker counts beyond the exhaustive limit.
PermutationResult best_permutation_assignment(const Eigen::MatrixXd& entries);

/// Utterance-level permutation invariant loss: one permutation for the
/// whole utterance.
PermutationResult upit_loss(const masks::MaskSet& est,
                            const MagSpectrogram& mixture_mag,
                            const masks::SourceSet& refs, LossKind kind);

/// Frame-level variant: permutations chosen independently per meta-frame
/// of the given length (stride defaults to the length, i.e. disjoint
/// segments).  Each segment is normalized by its own B; the total is the
/// frame-count weighted mean, so meta_len >= T reproduces upit_loss
/// exactly.
MetaFrameLoss pit_meta_frame_loss(const masks::MaskSet& est,
                                  const MagSpectrogram& mixture_mag,
                                  const masks::SourceSet& refs, LossKind kind,
                                  Index meta_len, Index stride = 0);

/// Element-wise mean of two mask sets of identical shape, for two-stage
/// systems that average a first- and second-pass estimate.
masks::MaskSet two_stage_average(const masks::MaskSet& first,
                                 const masks::MaskSet& second);

/// Loss under a fixed output-to-reference permutation over the given
/// range with an explicit normalizer.
double fixed_permutation_loss(const masks::MaskSet& est,
                              const MagSpectrogram& mixture_mag,
                              const std::vector<Array>& targets, LossKind kind,
                              const std::vector<Index>& perm, FrameRange range,
                              double normalizer);

/// d loss / d mask for the fixed permutation: S gradient grids matching
/// the estimated masks, zero outside the range.  Because the optimal
/// permutation is locally constant away from ties, this is also the
/// gradient of upit_loss at perm = the minimizer.
std::vector<Array> fixed_permutation_gradient(const masks::MaskSet& est,
                                              const MagSpectrogram& mixture_mag,
                                              const std::vector<Array>& targets,
                                              LossKind kind,
                                              const std::vector<Index>& perm,
                                              FrameRange range,
                                              double normalizer);

}  // namespace upit::pit
