#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "upit/dsp.hpp"
#include "upit/eval.hpp"
#include "upit/masks.hpp"
#include "upit/mixgen.hpp"
#include "upit/rng.hpp"
#include "upit/utterance.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace upit;

namespace {

TimeSignal noise_signal(Index n, double amp, std::uint64_t seed) {
  rng::Engine eng(seed);
  rng::Gaussian gauss;
  TimeSignal out;
  out.samples.resize(n);
  for (Index i = 0; i < n; ++i) out.samples[i] = amp * gauss(eng);
  return out;
}

/// White noise confined to the bins [lo_bin, hi_bin), so two signals in
/// disjoint bands are (near-)orthogonal and an ideal mask separates them
/// almost perfectly.
TimeSignal band_noise(Index n, Index lo_bin, Index hi_bin, std::uint64_t seed,
                      const StftConfig& config) {
  auto spec = dsp::analyze(noise_signal(n, 0.3, seed), config);
  for (Index f = 0; f < spec.bins.rows(); ++f)
    if (f < lo_bin || f >= hi_bin) spec.bins.row(f).setZero();
  return dsp::synthesize(spec);
}

/// Two disjoint-band talkers mixed at 0 dB; 272 samples is exactly 16
/// frames under the 32/16 config, so analysis drops no tail.
data::Utterance pair_utterance(const StftConfig& config, std::uint64_t seed,
                               const std::string& id) {
  auto mixture = mixgen::mix({band_noise(272, 2, 5, seed, config),
                              band_noise(272, 9, 12, seed + 1, config)},
                             {0.0});
  mixture.spec.id = id;
  return data::make_utterance(mixture, config);
}

/// Copies the mask set with speakers 0 and 1 exchanged from frame `from`
/// onward, imitating a separator whose streams swap mid-utterance.
masks::MaskSet swap_tail(const masks::MaskSet& src, Index from) {
  masks::MaskSet out = src;
  const Index tail = src.masks[0].cols() - from;
  out.masks[0].rightCols(tail) = src.masks[1].rightCols(tail);
  out.masks[1].rightCols(tail) = src.masks[0].rightCols(tail);
  return out;
}

}  // namespace

TEST_CASE("sdr recovers the exact ratio for disjoint-support signals") {
  // Reference lives on even samples, the error on odd ones, so the
  // projection coefficient is exactly 1 and the error energy is exactly
  // the noise energy: SDR = 10 log10(2.0 / 0.02) = 20 dB.
  TimeSignal ref, est;
  ref.samples = Eigen::ArrayXd::Zero(16);
  est.samples = Eigen::ArrayXd::Zero(16);
  for (Index i = 0; i < 16; i += 2) {
    ref.samples[i] = 0.5;
    est.samples[i] = 0.5;
  }
  for (Index i = 1; i < 16; i += 2) est.samples[i] = 0.05;
  CHECK(eval::sdr(ref, est) == doctest::Approx(20.0).epsilon(1e-9));

  // Scale invariance: rescaling the estimate changes nothing.
  TimeSignal scaled = est;
  scaled.samples *= 3.0;
  CHECK(eval::sdr(ref, scaled) == doctest::Approx(20.0).epsilon(1e-9));
}

TEST_CASE("perfect reconstructions hit the +100 dB cap") {
  const TimeSignal ref = noise_signal(64, 0.4, 5);

  CHECK(eval::sdr(ref, ref) == 100.0);

  TimeSignal doubled = ref;
  doubled.samples *= 2.0;
  CHECK(eval::sdr(ref, doubled) == 100.0);

  TimeSignal negated = ref;
  negated.samples *= -1.0;
  CHECK(eval::sdr(ref, negated) == 100.0);
}

TEST_CASE("sdr rejects malformed inputs") {
  const TimeSignal ref = noise_signal(32, 0.4, 6);
  const TimeSignal longer = noise_signal(33, 0.4, 7);
  CHECK_THROWS_AS(eval::sdr(ref, longer), std::invalid_argument);

  TimeSignal empty;
  CHECK_THROWS_AS(eval::sdr(empty, empty), std::invalid_argument);

  TimeSignal zeros;
  zeros.samples = Eigen::ArrayXd::Zero(32);
  CHECK_THROWS_WITH_AS(eval::sdr(zeros, ref), "zero-energy reference",
                       std::invalid_argument);
}

TEST_CASE("select_active_streams ranks by energy with stable ties") {
  auto constant = [](Index n, double value) {
    TimeSignal s;
    s.samples = Eigen::ArrayXd::Constant(n, value);
    return s;
  };

  const std::vector<TimeSignal> streams{constant(4, 0.5), constant(4, 1.0),
                                        constant(4, 0.7)};
  CHECK(eval::select_active_streams(streams, 3) ==
        std::vector<Index>{1, 2, 0});
  CHECK(eval::select_active_streams(streams, 2) == std::vector<Index>{1, 2});
  CHECK(eval::select_active_streams(streams, 0).empty());

  // Equal energies keep the original order.
  const std::vector<TimeSignal> tied{constant(4, 0.3), constant(4, -0.3),
                                     constant(4, 0.3)};
  CHECK(eval::select_active_streams(tied, 3) == std::vector<Index>{0, 1, 2});

  CHECK_THROWS_AS(eval::select_active_streams(streams, 4),
                  std::invalid_argument);
  CHECK_THROWS_AS(eval::select_active_streams(streams, -1),
                  std::invalid_argument);
}

TEST_CASE("oracle masks score a clear improvement with zero switches") {
  const StftConfig config = dsp::make_config(32, 16);
  const data::Utterance utt = pair_utterance(config, 31, "ev_oracle");
  const eval::SeparatedUtterance out{
      &utt, masks::oracle_mask(utt.refs, masks::MaskKind::Irm)};

  const auto report =
      eval::evaluate_assignment({out}, eval::AssignMode::Default, config, 4);
  REQUIRE(report.utterances.size() == 1);
  const auto& ue = report.utterances[0];
  REQUIRE(ue.speakers.size() == 2);

  // Disjoint-band sources: the ideal mask buys well over 10 dB.
  CHECK(ue.improvement_default > 10.0);
  CHECK(ue.perm_switches == 0);

  // A constant assignment makes both modes reconstruct the very same
  // signals, so the scores agree exactly.
  for (const auto& s : ue.speakers) {
    CHECK(s.sdr_default == s.sdr_optimal);
    CHECK(s.sdr_default > s.sdr_in);
    CHECK_FALSE(s.silent);
  }
  CHECK(ue.improvement_default == ue.improvement_optimal);
  CHECK(report.mean_gap == 0.0);
  CHECK(report.total_switches == 0);

  // The headline number follows the requested mode.
  CHECK(report.mean_improvement() == report.mean_improvement_default);
  const auto optimal =
      eval::evaluate_assignment({out}, eval::AssignMode::Optimal, config, 4);
  CHECK(optimal.mean_improvement() == optimal.mean_improvement_optimal);
}

TEST_CASE("the default pairing sees through globally permuted streams") {
  const StftConfig config = dsp::make_config(32, 16);
  const data::Utterance utt = pair_utterance(config, 37, "ev_swap");
  const auto oracle = masks::oracle_mask(utt.refs, masks::MaskKind::Irm);

  masks::MaskSet swapped = oracle;
  std::swap(swapped.masks[0], swapped.masks[1]);

  const auto straight = eval::evaluate_assignment(
      {{&utt, oracle}}, eval::AssignMode::Default, config, 4);
  const auto crossed = eval::evaluate_assignment(
      {{&utt, swapped}}, eval::AssignMode::Default, config, 4);

  // Relabelling the streams is invisible: the pairing search undoes it.
  CHECK(crossed.utterances[0].improvement_default ==
        straight.utterances[0].improvement_default);
  CHECK(crossed.utterances[0].improvement_optimal ==
        straight.utterances[0].improvement_optimal);
  CHECK(crossed.utterances[0].perm_switches == 0);

  // Forcing output k onto reference k scores the wrong speaker instead.
  const auto forced = eval::evaluate_assignment(
      {{&utt, swapped}}, eval::AssignMode::Default, config, 4, true);
  CHECK(forced.utterances[0].improvement_default < 0.0);
  // ...but the optimal assignment never consults the index pairing.
  CHECK(forced.utterances[0].improvement_optimal ==
        straight.utterances[0].improvement_optimal);
}

TEST_CASE("mid-utterance stream swaps: optimal re-pairing recovers") {
  const StftConfig config = dsp::make_config(32, 16);
  const data::Utterance utt = pair_utterance(config, 43, "ev_flip");
  const auto oracle = masks::oracle_mask(utt.refs, masks::MaskKind::Irm);

  // Streams carry the right speakers for frames [0, 8) and trade places
  // for [8, 16) -- the failure mode the optimal assignment measures.
  const masks::MaskSet flipped = swap_tail(oracle, 8);
  const auto report = eval::evaluate_assignment(
      {{&utt, flipped}}, eval::AssignMode::Optimal, config, 4);
  const auto& ue = report.utterances[0];

  // Meta-frames [0,4) and [4,8) pick one pairing, [8,12) and [12,16)
  // the other: exactly one switch.
  CHECK(ue.perm_switches == 1);
  CHECK(report.total_switches == 1);

  // Re-pairing restores near-oracle quality; a single utterance-level
  // assignment is stuck averaging right and wrong halves.
  CHECK(ue.improvement_optimal > 10.0);
  CHECK(ue.improvement_optimal - ue.improvement_default > 3.0);
  CHECK(report.mean_gap > 3.0);
}

TEST_CASE("a whole-utterance meta-frame makes the two modes coincide") {
  const StftConfig config = dsp::make_config(32, 16);
  const data::Utterance utt = pair_utterance(config, 47, "ev_meta");
  const auto oracle = masks::oracle_mask(utt.refs, masks::MaskKind::Irm);
  const masks::MaskSet flipped = swap_tail(oracle, 8);

  // With one segment spanning all frames, the optimal search degenerates
  // to the default's single pairing decision.
  const auto report = eval::evaluate_assignment(
      {{&utt, flipped}}, eval::AssignMode::Optimal, config, utt.num_frames());
  const auto& ue = report.utterances[0];
  CHECK(ue.perm_switches == 0);
  for (const auto& s : ue.speakers) CHECK(s.sdr_default == s.sdr_optimal);
  CHECK(report.mean_gap == 0.0);

  // An oversized meta-frame clamps to the same single segment.
  const auto clamped = eval::evaluate_assignment(
      {{&utt, flipped}}, eval::AssignMode::Optimal, config, 5000);
  CHECK(clamped.utterances[0].improvement_optimal ==
        ue.improvement_optimal);
}

TEST_CASE("silent references are scored but excluded from the means") {
  const StftConfig config = dsp::make_config(32, 16);
  auto mixture = mixgen::mix({band_noise(272, 2, 5, 51, config),
                              band_noise(272, 9, 12, 52, config)},
                             {0.0});
  mixture.spec.id = "ev_silent";
  mixgen::extend_silent_channel(mixture, 3, 77);
  const data::Utterance utt = data::make_utterance(mixture, config);
  REQUIRE(utt.ref_silent == std::vector<bool>{false, false, true});

  const eval::SeparatedUtterance out{
      &utt, masks::oracle_mask(utt.refs, masks::MaskKind::Irm)};
  const auto report =
      eval::evaluate_assignment({out}, eval::AssignMode::Default, config, 4);
  const auto& ue = report.utterances[0];
  REQUIRE(ue.speakers.size() == 3);
  CHECK_FALSE(ue.speakers[0].silent);
  CHECK_FALSE(ue.speakers[1].silent);
  CHECK(ue.speakers[2].silent);

  // The mean improvement averages the two active references only.
  const double expected =
      ((ue.speakers[0].sdr_default - ue.speakers[0].sdr_in) +
       (ue.speakers[1].sdr_default - ue.speakers[1].sdr_in)) /
      2.0;
  CHECK(ue.improvement_default == expected);
  CHECK(ue.improvement_default > 10.0);
}

TEST_CASE("corpus means average the per-utterance means") {
  const StftConfig config = dsp::make_config(32, 16);
  const data::Utterance a = pair_utterance(config, 61, "ev_a");
  const data::Utterance b = pair_utterance(config, 67, "ev_b");
  const std::vector<eval::SeparatedUtterance> outs{
      {&a, masks::oracle_mask(a.refs, masks::MaskKind::Irm)},
      {&b, masks::oracle_mask(b.refs, masks::MaskKind::Inpsm)}};

  const auto report =
      eval::evaluate_assignment(outs, eval::AssignMode::Default, config, 4);
  REQUIRE(report.utterances.size() == 2);
  CHECK(report.utterances[0].id == "ev_a");
  CHECK(report.utterances[1].id == "ev_b");
  CHECK(report.mean_improvement_default ==
        (report.utterances[0].improvement_default +
         report.utterances[1].improvement_default) /
            2.0);
  CHECK(report.mean_gap == report.mean_improvement_optimal -
                               report.mean_improvement_default);
}

TEST_CASE("report csv carries one row per reference") {
  const StftConfig config = dsp::make_config(32, 16);
  const data::Utterance utt = pair_utterance(config, 71, "ev_csv");
  const eval::SeparatedUtterance out{
      &utt, masks::oracle_mask(utt.refs, masks::MaskKind::Irm)};
  const auto report =
      eval::evaluate_assignment({out}, eval::AssignMode::Default, config, 4);

  const std::string path = "eval_report_test.csv";
  eval::write_report_csv(path, report);
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line ==
        "utterance,speaker,silent,sdr_in,sdr_default,sdr_optimal,"
        "improvement_default,improvement_optimal");
  Index rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rows;
    CHECK(line.rfind("ev_csv,", 0) == 0);
    // The silent flag is the third field.
    std::istringstream fields(line);
    std::string id, speaker, silent;
    std::getline(fields, id, ',');
    std::getline(fields, speaker, ',');
    std::getline(fields, silent, ',');
    CHECK(silent == "0");
  }
  CHECK(rows == 2);
  in.close();
  std::remove(path.c_str());

  CHECK_THROWS_AS(
      eval::write_report_csv("no_such_dir/eval_report.csv", report),
      std::runtime_error);
}

TEST_CASE("summary line prints the corpus means at two decimals") {
  eval::EvalReport report;
  report.mean_improvement_default = 1.234;
  report.mean_improvement_optimal = 4.56;
  report.mean_gap = 3.326;
  report.total_switches = 3;
  report.utterances.resize(2);
  CHECK(eval::summary_line(report) ==
        "SDR improvement: default 1.23 dB, optimal 4.56 dB, gap 3.33 dB, "
        "3 permutation switches over 2 utterances");
}

TEST_CASE("evaluate_assignment rejects malformed requests") {
  const StftConfig config = dsp::make_config(32, 16);
  CHECK_THROWS_WITH_AS(
      eval::evaluate_assignment({}, eval::AssignMode::Default, config, 4),
      "nothing to evaluate", std::invalid_argument);

  const data::Utterance utt = pair_utterance(config, 73, "ev_bad");
  const auto oracle = masks::oracle_mask(utt.refs, masks::MaskKind::Irm);
  CHECK_THROWS_WITH_AS(
      eval::evaluate_assignment({{&utt, oracle}}, eval::AssignMode::Default,
                                config, 0),
      "bad meta-frame length", std::invalid_argument);

  // Estimated stream count must match the reference count.
  masks::MaskSet extra = oracle;
  extra.masks.push_back(extra.masks[0]);
  CHECK_THROWS_WITH_AS(
      eval::evaluate_assignment({{&utt, extra}}, eval::AssignMode::Default,
                                config, 4),
      doctest::Contains("speaker count mismatch"), std::invalid_argument);

  // One lone frame leaves no interior once the edges are trimmed.
  TimeSignal blip = noise_signal(32, 0.3, 79);
  auto tiny = mixgen::mix({blip, noise_signal(32, 0.3, 83)}, {0.0});
  tiny.spec.id = "ev_short";
  const data::Utterance short_utt = data::make_utterance(tiny, config);
  const auto short_oracle =
      masks::oracle_mask(short_utt.refs, masks::MaskKind::Irm);
  CHECK_THROWS_WITH_AS(
      eval::evaluate_assignment({{&short_utt, short_oracle}},
                                eval::AssignMode::Default, config, 4),
      doctest::Contains("too short"), std::invalid_argument);

  // All references flagged silent leaves nothing to average.
  data::Utterance muted = pair_utterance(config, 89, "ev_muted");
  muted.ref_silent = {true, true};
  const auto muted_oracle =
      masks::oracle_mask(muted.refs, masks::MaskKind::Irm);
  CHECK_THROWS_WITH_AS(
      eval::evaluate_assignment({{&muted, muted_oracle}},
                                eval::AssignMode::Default, config, 4),
      doctest::Contains("no active references"), std::invalid_argument);
}
