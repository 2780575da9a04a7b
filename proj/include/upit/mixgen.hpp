// upit/mixgen.hpp
//
// Mixture synthesis and dataset manifests.
//
// A mixture is built from S single-speaker signals: one source is the
// reference at unit gain, every other source k gets the gain
//
//   g_k = sqrt(E_ref / E_k) * 10^(-snr_k / 20)
//
// with the energies measured over the overlapped region (the shorter of
// the two signals), so snr_k is the exact pairwise SNR of reference over
// source k.  Signals are zero-padded to the longest source after the
// gain computation, summed, and -- if the sum clips -- the whole record
// (mixture and all scaled references) is rescaled by a common factor,
// which preserves every pairwise SNR.
//
// Records can be extended with silent channels for training models whose
// output count exceeds the active speaker count: white Gaussian noise
// references with energy exactly 1e-7 of the average real-source energy
// (70 dB down), generated from a recorded seed.  The mixture itself is
// untouched -- a silent channel is a target, not a contribution.
//
// A manifest is a JSONL file (one meta line, then one line per record)
// storing paths, gains, SNRs, seeds and the rescale factor: everything
// needed to regenerate each mixture bit-exactly from the corpus.

#pragma once

#include "upit/types.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace upit::mixgen {

struct SourceEntry {
  std::string path;     // corpus-relative wav path; empty for silent channels
  std::string speaker;  // speaker id; empty for silent channels
  double gain = 1.0;    // applied before the common rescale
  double snr_db = 0.0;  // pairwise SNR vs the reference (0 for the reference)
  bool silent = false;
  std::uint64_t noise_seed = 0;  // silent channels only
  double energy = 0.0;           // silent channels: exact target energy
};

/// One manifest record: everything needed to regenerate the mixture.
struct MixtureSpec {
  std::string id;
  std::string split;
  std::vector<SourceEntry> sources;
  Index reference_index = 0;
  double rescale = 1.0;
  std::string mixture_path;  // optional snapshot of the mixture audio

  Index num_sources() const { return static_cast<Index>(sources.size()); }
};

/// A realized record: the mixture signal plus the scaled reference
/// signals (silent channels included), all of equal length.
struct Mixture {
  MixtureSpec spec;
  TimeSignal mixture;
  std::vector<TimeSignal> references;
};

struct ManifestConfig {
  Index num_speakers = 2;
  double snr_min = 0.0;
  double snr_max = 5.0;
  std::uint64_t seed = 0;
  Index train_count = 0;
  Index valid_count = 0;
  Index test_count = 0;
  /// Speakers held out of train/valid and used only in the test split,
  /// so test mixtures are open-condition.  0 keeps one shared pool.
  Index open_speakers = 0;
  bool order_by_energy = false;
  /// When > num_speakers, every record is extended with silent channels
  /// up to this reference count.
  Index silent_extend_to = 0;
  double sample_rate = kDefaultSampleRate;
};

struct Manifest {
  ManifestConfig config;
  std::vector<MixtureSpec> records;
};

double energy(const Eigen::ArrayXd& samples);

/// Mixes the sources at the requested pairwise SNRs (one per non-reference
/// source, in source order).  Sources must share a sample rate and carry
/// nonzero energy.  The returned spec has gains, SNRs, reference index and
/// rescale filled in; path/speaker fields are the caller's.
Mixture mix(const std::vector<TimeSignal>& sources,
            const std::vector<double>& snrs_db, Index reference_index = 0);

/// Appends silent reference channels until the record has target_count
/// references.  Noise seeds and exact energies are recorded in the spec.
void extend_silent_channel(Mixture& mixture, Index target_count,
                           std::uint64_t seed);

/// Scans corpus_root (one directory per speaker, wav utterances inside)
/// and synthesizes the configured number of records per split,
/// deterministically in config.seed.  on_record, when set, sees every
/// realized mixture and may return a mixture_path to store (empty keeps
/// none); use it to write mixture audio snapshots.
Manifest build_manifest(
    const std::string& corpus_root, const ManifestConfig& config,
    const std::function<std::string(const Mixture&)>& on_record = nullptr);

/// Regenerates a record's audio from the corpus, bit-exactly equal to
/// what build_manifest produced.
Mixture realize(const MixtureSpec& spec, const std::string& corpus_root,
                double sample_rate = kDefaultSampleRate);

void write_manifest(const std::string& path, const Manifest& manifest);
Manifest read_manifest(const std::string& path);

}  // namespace upit::mixgen
