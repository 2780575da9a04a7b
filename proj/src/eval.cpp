#include "upit/eval.hpp"

#include "upit/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace upit::eval {

namespace {

constexpr double kSdrCap = 100.0;

pit::PermutationResult best_perm_any(const Eigen::MatrixXd& entries) {
  return entries.rows() <= pit::kExhaustiveLimit
             ? pit::best_permutation(entries)
             : pit::best_permutation_assignment(entries);
}

/// inverse[r] = the output stream assigned to reference r.
std::vector<Index> invert(const std::vector<Index>& perm) {
  std::vector<Index> inv(perm.size());
  for (std::size_t s = 0; s < perm.size(); ++s)
    inv[static_cast<std::size_t>(perm[s])] = static_cast<Index>(s);
  return inv;
}

TimeSignal trim(const TimeSignal& signal, Index begin, Index end) {
  TimeSignal out;
  out.sample_rate = signal.sample_rate;
  out.samples = signal.samples.segment(begin, end - begin);
  return out;
}

}  // namespace

double sdr(const TimeSignal& reference, const TimeSignal& estimate) {
  if (reference.length() != estimate.length() || reference.length() == 0)
    throw std::invalid_argument("signal length mismatch");
  const double ref_energy = reference.samples.square().sum();
  if (ref_energy <= 0.0)
    throw std::invalid_argument("zero-energy reference");

  const double dot = (reference.samples * estimate.samples).sum();
  const double alpha = dot / ref_energy;
  const double target = alpha * alpha * ref_energy;
  const double error =
      (estimate.samples - alpha * reference.samples).square().sum();
  if (error <= 0.0) return kSdrCap;
  return std::min(kSdrCap, 10.0 * std::log10(target / error));
}

std::vector<Index> select_active_streams(const std::vector<TimeSignal>& streams,
                                         Index k) {
  const auto count = static_cast<Index>(streams.size());
  if (k < 0 || k > count)
    throw std::invalid_argument("bad active stream count");
  std::vector<Index> order(streams.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::vector<double> energies;
  energies.reserve(streams.size());
  for (const auto& s : streams) energies.push_back(s.samples.square().sum());
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return energies[static_cast<std::size_t>(a)] >
           energies[static_cast<std::size_t>(b)];
  });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

EvalReport evaluate_assignment(const std::vector<SeparatedUtterance>& outputs,
                               AssignMode mode, const StftConfig& config,
                               Index meta_frame_len, bool index_pairing) {
  if (outputs.empty()) throw std::invalid_argument("nothing to evaluate");
  if (meta_frame_len < 1)
    throw std::invalid_argument("bad meta-frame length");

  EvalReport report;
  report.mode = mode;

  for (const auto& output : outputs) {
    const data::Utterance& utt = *output.utt;
    const Index s_count = utt.num_speakers();
    if (output.est.num_speakers() != s_count)
      throw std::invalid_argument("speaker count mismatch at " + utt.id);
    const Index frames = utt.num_frames();

    const std::vector<Array> targets =
        pit::loss_targets(utt.refs, pit::LossKind::Psm);

    // DEFAULT: one pairing for the whole utterance.
    std::vector<Index> perm_default;
    if (index_pairing) {
      perm_default.resize(static_cast<std::size_t>(s_count));
      std::iota(perm_default.begin(), perm_default.end(), Index{0});
    } else {
      perm_default = best_perm_any(
                         pit::pairwise_losses(output.est, utt.mixture_mag,
                                              targets, pit::LossKind::Psm,
                                              {0, frames})
                             .entries)
                         .perm;
    }
    const std::vector<Index> stream_for_ref_default = invert(perm_default);

    // OPTIMAL: re-pair every meta-frame, assembling each reference's
    // magnitude from whichever stream the segment chose.
    std::vector<Array> assembled(
        static_cast<std::size_t>(s_count),
        Array::Zero(utt.mixture_mag.values.rows(), frames));
    Index switches = 0;
    std::vector<Index> prev_perm;
    for (Index begin = 0; begin < frames; begin += meta_frame_len) {
      const pit::FrameRange range{begin,
                                  std::min(begin + meta_frame_len, frames)};
      const std::vector<Index> perm = best_perm_any(
          pit::pairwise_losses(output.est, utt.mixture_mag, targets,
                               pit::LossKind::Psm, range)
              .entries)
                                          .perm;
      if (!prev_perm.empty() && perm != prev_perm) ++switches;
      const std::vector<Index> stream_for_ref = invert(perm);
      for (Index r = 0; r < s_count; ++r) {
        const auto s = static_cast<std::size_t>(stream_for_ref[static_cast<std::size_t>(r)]);
        assembled[static_cast<std::size_t>(r)].middleCols(range.begin,
                                                          range.length()) =
            (output.est.masks[s] * utt.mixture_mag.values)
                .middleCols(range.begin, range.length())
                .max(0.0);
      }
      prev_perm = perm;
    }

    // Reconstructions: per-stream for DEFAULT, per-reference for OPTIMAL.
    std::vector<TimeSignal> recon_default;
    recon_default.reserve(static_cast<std::size_t>(s_count));
    for (Index s = 0; s < s_count; ++s)
      recon_default.push_back(
          masks::reconstruct(output.est.masks[static_cast<std::size_t>(s)],
                             utt.mixture_mag, utt.mixture_phase, config));
    std::vector<TimeSignal> recon_optimal;
    recon_optimal.reserve(static_cast<std::size_t>(s_count));
    {
      ComplexSpectrogram spec;
      spec.config = config;
      for (Index r = 0; r < s_count; ++r) {
        const Array& mag = assembled[static_cast<std::size_t>(r)];
        spec.bins = mag * utt.mixture_phase.values.cos() +
                    std::complex<double>(0.0, 1.0) *
                        (mag * utt.mixture_phase.values.sin());
        recon_optimal.push_back(dsp::synthesize(spec));
      }
    }

    // Score on the interior: synthesized length, minus the edge region
    // where the window overlap is still ramping up.
    const Index synth_len = (frames - 1) * config.hop + config.frame_len;
    const Index margin = config.frame_len - config.hop;
    const Index lo = margin;
    const Index hi = synth_len - margin;
    if (hi <= lo)
      throw std::invalid_argument("utterance too short to score: " + utt.id);

    UtteranceEval ue;
    ue.id = utt.id;
    ue.perm_switches = switches;
    const TimeSignal mixture_trim = trim(utt.mixture_signal, lo, hi);

    double sum_default = 0.0;
    double sum_optimal = 0.0;
    Index active = 0;
    for (Index r = 0; r < s_count; ++r) {
      const auto ri = static_cast<std::size_t>(r);
      SpeakerScore score;
      score.silent = !utt.ref_silent.empty() && utt.ref_silent[ri];
      const TimeSignal ref_trim = trim(utt.ref_signals[ri], lo, hi);
      score.sdr_in = sdr(ref_trim, mixture_trim);
      score.sdr_default = sdr(
          ref_trim,
          trim(recon_default[static_cast<std::size_t>(
                   stream_for_ref_default[ri])],
               lo, hi));
      score.sdr_optimal = sdr(ref_trim, trim(recon_optimal[ri], lo, hi));
      if (!score.silent) {
        sum_default += score.sdr_default - score.sdr_in;
        sum_optimal += score.sdr_optimal - score.sdr_in;
        ++active;
      }
      ue.speakers.push_back(score);
    }
    if (active == 0)
      throw std::invalid_argument("no active references at " + utt.id);
    ue.improvement_default = sum_default / static_cast<double>(active);
    ue.improvement_optimal = sum_optimal / static_cast<double>(active);
    report.utterances.push_back(std::move(ue));
  }

  for (const auto& ue : report.utterances) {
    report.mean_improvement_default += ue.improvement_default;
    report.mean_improvement_optimal += ue.improvement_optimal;
    report.total_switches += ue.perm_switches;
  }
  const auto n = static_cast<double>(report.utterances.size());
  report.mean_improvement_default /= n;
  report.mean_improvement_optimal /= n;
  report.mean_gap =
      report.mean_improvement_optimal - report.mean_improvement_default;
  return report;
}

void write_report_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out << "utterance,speaker,silent,sdr_in,sdr_default,sdr_optimal,"
         "improvement_default,improvement_optimal\n";
  out << std::setprecision(10);
  for (const auto& ue : report.utterances) {
    for (std::size_t r = 0; r < ue.speakers.size(); ++r) {
      const SpeakerScore& s = ue.speakers[r];
      out << ue.id << ',' << r << ',' << (s.silent ? 1 : 0) << ',' << s.sdr_in
          << ',' << s.sdr_default << ',' << s.sdr_optimal << ','
          << s.sdr_default - s.sdr_in << ',' << s.sdr_optimal - s.sdr_in
          << '\n';
    }
  }
  if (!out) throw std::runtime_error("short write to report: " + path);
}

std::string summary_line(const EvalReport& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << "SDR improvement: default "
      << report.mean_improvement_default << " dB, optimal "
      << report.mean_improvement_optimal << " dB, gap " << report.mean_gap
      << " dB, " << report.total_switches << " permutation switches over "
      << report.utterances.size() << " utterances";
  return out.str();
}

}  // namespace upit::eval
