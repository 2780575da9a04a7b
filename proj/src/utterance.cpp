#include "upit/utterance.hpp"

namespace upit::data {

Utterance make_utterance(const mixgen::Mixture& mixture,
                         const StftConfig& config) {
  Utterance utt;
  utt.id = mixture.spec.id;
  utt.mixture_signal = mixture.mixture;
  utt.ref_signals = mixture.references;
  utt.ref_silent.reserve(mixture.spec.sources.size());
  for (const auto& entry : mixture.spec.sources)
    utt.ref_silent.push_back(entry.silent);

  utt.refs.mixture = dsp::analyze(mixture.mixture, config);
  utt.refs.sources.reserve(mixture.references.size());
  for (const auto& ref : mixture.references)
    utt.refs.sources.push_back(dsp::analyze(ref, config));

  auto [mag, phase] = dsp::magnitude_phase(utt.refs.mixture);
  utt.mixture_mag = std::move(mag);
  utt.mixture_phase = std::move(phase);
  return utt;
}

Dataset load_dataset(const mixgen::Manifest& manifest, const std::string& split,
                     const StftConfig& config, const std::string& corpus_root) {
  Dataset dataset;
  for (const auto& record : manifest.records) {
    if (record.split != split) continue;
    dataset.push_back(make_utterance(
        mixgen::realize(record, corpus_root, manifest.config.sample_rate),
        config));
  }
  return dataset;
}

}  // namespace upit::data
