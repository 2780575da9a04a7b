#include "upit/pit.hpp"

#include "upit/dsp.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace upit::pit {

namespace {

thread_local std::uint64_t g_pairwise_evals = 0;

void require_square(const Eigen::MatrixXd& entries) {
  if (entries.rows() < 1 || entries.rows() != entries.cols())
    throw std::invalid_argument("pairwise matrix must be square");
  if (!entries.array().isFinite().all())
    throw std::invalid_argument("pairwise matrix must be finite");
}

FrameRange full_range(const MagSpectrogram& mag) {
  return {0, mag.values.cols()};
}

void validate_inputs(const masks::MaskSet& est, const MagSpectrogram& mag,
                     const std::vector<Array>& targets, FrameRange range) {
  const Index s_count = est.num_speakers();
  if (s_count < 1) throw std::invalid_argument("empty mask set");
  if (static_cast<Index>(targets.size()) != s_count)
    throw std::invalid_argument("speaker count mismatch");
  const Index f = mag.values.rows();
  const Index t = mag.values.cols();
  for (const auto& m : est.masks)
    if (m.rows() != f || m.cols() != t)
      throw std::invalid_argument("mask shape mismatch");
  for (const auto& tg : targets)
    if (tg.rows() != f || tg.cols() != t)
      throw std::invalid_argument("target shape mismatch");
  if (range.begin < 0 || range.end > t || range.begin >= range.end)
    throw std::invalid_argument("bad frame range");
}

}  // namespace

std::vector<Array> loss_targets(const masks::SourceSet& refs, LossKind kind,
                                double eps) {
  if (refs.num_speakers() < 1) throw std::invalid_argument("empty source set");

  if (kind == LossKind::MaskMse) {
    return masks::oracle_mask(refs, masks::MaskKind::Irm, eps).masks;
  }

  std::vector<Array> targets;
  targets.reserve(refs.sources.size());
  if (kind == LossKind::Amplitude) {
    for (const auto& src : refs.sources) targets.push_back(src.bins.abs());
    return targets;
  }

  const auto [mix_mag, mix_phase] = dsp::magnitude_phase(refs.mixture);
  for (const auto& src : refs.sources) {
    const auto [amp, phase] = dsp::magnitude_phase(src);
    targets.push_back(amp.values *
                      (mix_phase.values - phase.values).cos());
  }
  return targets;
}

PairwiseLossMatrix pairwise_losses(const masks::MaskSet& est,
                                   const MagSpectrogram& mixture_mag,
                                   const std::vector<Array>& targets,
                                   LossKind kind, FrameRange range) {
  validate_inputs(est, mixture_mag, targets, range);
  const Index s_count = est.num_speakers();
  const Index f = mixture_mag.values.rows();
  const Index len = range.length();

  PairwiseLossMatrix out;
  out.normalizer =
      static_cast<double>(len) * static_cast<double>(f) *
      static_cast<double>(s_count);
  out.entries.resize(s_count, s_count);

  const auto r_block = mixture_mag.values.middleCols(range.begin, len);
  for (Index s = 0; s < s_count; ++s) {
    const auto m_block =
        est.masks[static_cast<std::size_t>(s)].middleCols(range.begin, len);
    const Array scored =
        kind == LossKind::MaskMse ? m_block.eval() : (m_block * r_block).eval();
    for (Index r = 0; r < s_count; ++r) {
      const auto t_block =
          targets[static_cast<std::size_t>(r)].middleCols(range.begin, len);
      out.entries(s, r) =
          (scored - t_block).matrix().squaredNorm() / out.normalizer;
      ++g_pairwise_evals;
    }
  }
  return out;
}

PairwiseLossMatrix pairwise_losses(const masks::MaskSet& est,
                                   const masks::SourceSet& refs,
                                   LossKind kind) {
  const auto [mag, phase] = dsp::magnitude_phase(refs.mixture);
  return pairwise_losses(est, mag, loss_targets(refs, kind), kind,
                         full_range(mag));
}

std::uint64_t pairwise_eval_count() { return g_pairwise_evals; }
void reset_pairwise_eval_count() { g_pairwise_evals = 0; }

PermutationResult best_permutation(const Eigen::MatrixXd& entries) {
  require_square(entries);
  const Index s_count = entries.rows();
  if (s_count > kExhaustiveLimit)
    throw std::invalid_argument(
        "too many speakers for exhaustive permutation search; use "
        "best_permutation_assignment");

  std::vector<Index> perm(static_cast<std::size_t>(s_count));
  std::iota(perm.begin(), perm.end(), Index{0});

  PermutationResult best;
  best.loss = std::numeric_limits<double>::infinity();
  do {
    double loss = 0.0;
    for (Index s = 0; s < s_count; ++s)
      loss += entries(s, perm[static_cast<std::size_t>(s)]);
    // Strict comparison keeps the lexicographically first permutation
    // among exact ties (candidates arrive in lexicographic order).
    if (loss < best.loss) {
      best.loss = loss;
      best.perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

PermutationResult best_permutation_assignment(const Eigen::MatrixXd& entries) {
  require_square(entries);
  const Index n = entries.rows();
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // Hungarian algorithm with row/column potentials; 1-based scratch
  // arrays with column 0 as the virtual root of each augmenting path.
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<Index> match(static_cast<std::size_t>(n) + 1, 0);
  std::vector<Index> way(static_cast<std::size_t>(n) + 1, 0);

  for (Index row = 1; row <= n; ++row) {
    match[0] = row;
    Index col0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, kInf);
    std::vector<bool> used(static_cast<std::size_t>(n) + 1, false);
    do {
      used[static_cast<std::size_t>(col0)] = true;
      const Index row0 = match[static_cast<std::size_t>(col0)];
      double delta = kInf;
      Index col1 = 0;
      for (Index col = 1; col <= n; ++col) {
        if (used[static_cast<std::size_t>(col)]) continue;
        const double cur = entries(row0 - 1, col - 1) -
                           u[static_cast<std::size_t>(row0)] -
                           v[static_cast<std::size_t>(col)];
        if (cur < minv[static_cast<std::size_t>(col)]) {
          minv[static_cast<std::size_t>(col)] = cur;
          way[static_cast<std::size_t>(col)] = col0;
        }
        if (minv[static_cast<std::size_t>(col)] < delta) {
          delta = minv[static_cast<std::size_t>(col)];
          col1 = col;
        }
      }
      for (Index col = 0; col <= n; ++col) {
        if (used[static_cast<std::size_t>(col)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(col)])] +=
              delta;
          v[static_cast<std::size_t>(col)] -= delta;
        } else {
          minv[static_cast<std::size_t>(col)] -= delta;
        }
      }
      col0 = col1;
    } while (match[static_cast<std::size_t>(col0)] != 0);
    do {
      const Index col1 = way[static_cast<std::size_t>(col0)];
      match[static_cast<std::size_t>(col0)] =
          match[static_cast<std::size_t>(col1)];
      col0 = col1;
    } while (col0 != 0);
  }

  PermutationResult out;
  out.perm.assign(static_cast<std::size_t>(n), 0);
  for (Index col = 1; col <= n; ++col)
    out.perm[static_cast<std::size_t>(match[static_cast<std::size_t>(col)]) -
             1] = col - 1;
  out.loss = 0.0;
  for (Index s = 0; s < n; ++s)
    out.loss += entries(s, out.perm[static_cast<std::size_t>(s)]);
  return out;
}

PermutationResult upit_loss(const masks::MaskSet& est,
                            const MagSpectrogram& mixture_mag,
                            const masks::SourceSet& refs, LossKind kind) {
  const PairwiseLossMatrix pairwise = pairwise_losses(
      est, mixture_mag, loss_targets(refs, kind), kind, full_range(mixture_mag));
  return pairwise.entries.rows() <= kExhaustiveLimit
             ? best_permutation(pairwise.entries)
             : best_permutation_assignment(pairwise.entries);
}

MetaFrameLoss pit_meta_frame_loss(const masks::MaskSet& est,
                                  const MagSpectrogram& mixture_mag,
                                  const masks::SourceSet& refs, LossKind kind,
                                  Index meta_len, Index stride) {
  if (meta_len < 1) throw std::invalid_argument("meta-frame length must be >= 1");
  if (stride == 0) stride = meta_len;
  if (stride < 1) throw std::invalid_argument("meta-frame stride must be >= 1");

  const std::vector<Array> targets = loss_targets(refs, kind);
  const Index frames = mixture_mag.values.cols();

  MetaFrameLoss out;
  double weighted = 0.0;
  Index covered = 0;
  for (Index begin = 0; begin < frames; begin += stride) {
    const FrameRange range{begin, std::min(begin + meta_len, frames)};
    const PairwiseLossMatrix pairwise =
        pairwise_losses(est, mixture_mag, targets, kind, range);
    PermutationResult result =
        pairwise.entries.rows() <= kExhaustiveLimit
            ? best_permutation(pairwise.entries)
            : best_permutation_assignment(pairwise.entries);
    weighted += result.loss * static_cast<double>(range.length());
    covered += range.length();
    out.ranges.push_back(range);
    out.assignments.push_back(std::move(result));
    if (range.end == frames) break;
  }
  // One segment covering everything is the utterance-level loss itself;
  // skipping the weighted mean keeps the reduction bit-exact.
  out.total = out.assignments.size() == 1
                  ? out.assignments[0].loss
                  : weighted / static_cast<double>(covered);
  return out;
}

masks::MaskSet two_stage_average(const masks::MaskSet& first,
                                 const masks::MaskSet& second) {
  if (first.num_speakers() != second.num_speakers() ||
      first.num_speakers() < 1)
    throw std::invalid_argument("speaker count mismatch");
  masks::MaskSet out;
  out.kind = masks::MaskKind::Estimated;
  out.masks.reserve(first.masks.size());
  for (std::size_t s = 0; s < first.masks.size(); ++s) {
    if (first.masks[s].rows() != second.masks[s].rows() ||
        first.masks[s].cols() != second.masks[s].cols())
      throw std::invalid_argument("mask shape mismatch");
    out.masks.push_back(0.5 * (first.masks[s] + second.masks[s]));
  }
  return out;
}

double fixed_permutation_loss(const masks::MaskSet& est,
                              const MagSpectrogram& mixture_mag,
                              const std::vector<Array>& targets, LossKind kind,
                              const std::vector<Index>& perm, FrameRange range,
                              double normalizer) {
  validate_inputs(est, mixture_mag, targets, range);
  if (static_cast<Index>(perm.size()) != est.num_speakers())
    throw std::invalid_argument("permutation size mismatch");
  if (!(normalizer > 0.0)) throw std::invalid_argument("bad normalizer");

  const Index len = range.length();
  const auto r_block = mixture_mag.values.middleCols(range.begin, len);
  double loss = 0.0;
  for (std::size_t s = 0; s < perm.size(); ++s) {
    const auto m_block = est.masks[s].middleCols(range.begin, len);
    const auto t_block =
        targets[static_cast<std::size_t>(perm[s])].middleCols(range.begin, len);
    const Array scored =
        kind == LossKind::MaskMse ? m_block.eval() : (m_block * r_block).eval();
    loss += (scored - t_block).matrix().squaredNorm();
  }
  return loss / normalizer;
}

std::vector<Array> fixed_permutation_gradient(const masks::MaskSet& est,
                                              const MagSpectrogram& mixture_mag,
                                              const std::vector<Array>& targets,
                                              LossKind kind,
                                              const std::vector<Index>& perm,
                                              FrameRange range,
                                              double normalizer) {
  validate_inputs(est, mixture_mag, targets, range);
  if (static_cast<Index>(perm.size()) != est.num_speakers())
    throw std::invalid_argument("permutation size mismatch");
  if (!(normalizer > 0.0)) throw std::invalid_argument("bad normalizer");

  const Index len = range.length();
  const double scale = 2.0 / normalizer;
  const auto r_block = mixture_mag.values.middleCols(range.begin, len);

  std::vector<Array> grads;
  grads.reserve(perm.size());
  for (std::size_t s = 0; s < perm.size(); ++s) {
    Array grad = Array::Zero(mixture_mag.values.rows(),
                             mixture_mag.values.cols());
    const auto m_block = est.masks[s].middleCols(range.begin, len);
    const auto t_block =
        targets[static_cast<std::size_t>(perm[s])].middleCols(range.begin, len);
    if (kind == LossKind::MaskMse) {
      grad.middleCols(range.begin, len) = scale * (m_block - t_block);
    } else {
      grad.middleCols(range.begin, len) =
          scale * r_block * (m_block * r_block - t_block);
    }
    grads.push_back(std::move(grad));
  }
  return grads;
}

}  // namespace upit::pit
