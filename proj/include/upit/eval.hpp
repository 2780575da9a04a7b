// upit/eval.hpp
//
// Waveform scoring.  The quality measure is a scale-invariant SDR: the
// estimate is compared against the orthogonal projection of itself onto
// the reference,
//
//   SDR = 10 log10( ||a x||^2 / ||x_hat - a x||^2 ),  a = <x, x_hat> / ||x||^2
//
// capped at +100 dB so exact reconstructions stay finite.  Reported per
// speaker as improvement over the mixture (SDR of estimate minus SDR of
// the unprocessed mixture against the same reference).
//
// Two assignment modes: DEFAULT keeps one output-to-reference pairing for
// the whole utterance (the pairing a separation system would commit to),
// OPTIMAL re-pairs on every meta-frame with oracle knowledge of the
// references.  The gap between them measures how often the system's
// streams swap speakers mid-utterance; the report also counts the
// permutation switches the optimal assignment makes.  Edge frames where
// the synthesis window sum has not reached steady state are trimmed
// before scoring.

#pragma once

#include "upit/masks.hpp"
#include "upit/pit.hpp"
#include "upit/types.hpp"
#include "upit/utterance.hpp"

#include <string>
#include <vector>

namespace upit::eval {

enum class AssignMode { Default, Optimal };

/// Scale-invariant SDR in dB, capped at +100.  The reference must carry
/// nonzero energy; signals must have equal length.
double sdr(const TimeSignal& reference, const TimeSignal& estimate);

/// Indices of the k highest-energy streams, energy descending, ties
/// toward the lower index.
std::vector<Index> select_active_streams(const std::vector<TimeSignal>& streams,
                                         Index k);

/// One utterance's estimated masks next to its realized data.
struct SeparatedUtterance {
  const data::Utterance* utt = nullptr;
  masks::MaskSet est;
};

struct SpeakerScore {
  double sdr_in = 0.0;
  double sdr_default = 0.0;
  double sdr_optimal = 0.0;
  bool silent = false;
};

struct UtteranceEval {
  std::string id;
  std::vector<SpeakerScore> speakers;  // aligned with the references
  Index perm_switches = 0;             // optimal-assignment changes
  double improvement_default = 0.0;    // mean over non-silent references
  double improvement_optimal = 0.0;
};

struct EvalReport {
  AssignMode mode = AssignMode::Default;
  std::vector<UtteranceEval> utterances;
  double mean_improvement_default = 0.0;
  double mean_improvement_optimal = 0.0;
  double mean_gap = 0.0;  // optimal minus default
  Index total_switches = 0;

  double mean_improvement() const {
    return mode == AssignMode::Default ? mean_improvement_default
                                       : mean_improvement_optimal;
  }
};

/// Scores every utterance under both assignment modes (mode selects the
/// headline number).  Pairings are chosen by the phase-sensitive loss;
/// index_pairing instead keeps output k on reference k for the DEFAULT
/// mode.  meta_frame_len is the OPTIMAL mode's re-pairing granularity.
EvalReport evaluate_assignment(const std::vector<SeparatedUtterance>& outputs,
                               AssignMode mode, const StftConfig& config,
                               Index meta_frame_len, bool index_pairing = false);

void write_report_csv(const std::string& path, const EvalReport& report);

/// One-line human summary of the corpus means.
std::string summary_line(const EvalReport& report);

}  // namespace upit::eval
