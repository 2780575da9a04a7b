#include "upit/mixgen.hpp"

#include "upit/rng.hpp"
#include "upit/wav.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace upit::mixgen {

namespace fs = std::filesystem;
using nlohmann::json;

double energy(const Eigen::ArrayXd& samples) { return samples.square().sum(); }

namespace {

// Seed derivation streams, so directory shuffling, per-record draws and
// silent-channel noise never share engine state.
constexpr std::uint64_t kStreamDirs = 0;
constexpr std::uint64_t kStreamRecord = 1;
constexpr std::uint64_t kStreamSilent = 2;

/// Scales the raw mixture and references by the recorded factors; shared
/// between mix() and realize() so both produce identical arithmetic.
Mixture assemble(const std::vector<Eigen::ArrayXd>& scaled, double rescale,
                 double sample_rate) {
  Mixture out;
  const Index total = scaled.front().size();
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(total);
  for (const auto& s : scaled) sum += s;
  out.mixture.sample_rate = sample_rate;
  out.mixture.samples = rescale * sum;
  out.references.reserve(scaled.size());
  for (const auto& s : scaled) {
    TimeSignal ref;
    ref.sample_rate = sample_rate;
    ref.samples = rescale * s;
    out.references.push_back(std::move(ref));
  }
  return out;
}

/// Gain-scaled, zero-padded source signals for the given gains.
std::vector<Eigen::ArrayXd> scale_and_pad(
    const std::vector<TimeSignal>& sources, const std::vector<double>& gains,
    Index total) {
  std::vector<Eigen::ArrayXd> scaled;
  scaled.reserve(sources.size());
  for (std::size_t k = 0; k < sources.size(); ++k) {
    Eigen::ArrayXd padded = Eigen::ArrayXd::Zero(total);
    padded.head(sources[k].samples.size()) = gains[k] * sources[k].samples;
    scaled.push_back(std::move(padded));
  }
  return scaled;
}

}  // namespace

Mixture mix(const std::vector<TimeSignal>& sources,
            const std::vector<double>& snrs_db, Index reference_index) {
  const auto s_count = static_cast<Index>(sources.size());
  if (s_count < 2) throw std::invalid_argument("need at least two sources");
  if (static_cast<Index>(snrs_db.size()) != s_count - 1)
    throw std::invalid_argument("need one SNR per non-reference source");
  if (reference_index < 0 || reference_index >= s_count)
    throw std::invalid_argument("bad reference index");
  const double rate = sources.front().sample_rate;
  Index total = 0;
  for (const auto& src : sources) {
    if (src.sample_rate != rate)
      throw std::invalid_argument("sample rate mismatch between sources");
    if (src.samples.size() == 0 || energy(src.samples) <= 0.0)
      throw std::invalid_argument("silent source in mixture");
    total = std::max(total, src.samples.size());
  }

  const auto& ref = sources[static_cast<std::size_t>(reference_index)];
  std::vector<double> gains(sources.size(), 1.0);
  std::size_t snr_slot = 0;
  for (std::size_t k = 0; k < sources.size(); ++k) {
    if (static_cast<Index>(k) == reference_index) continue;
    const double snr = snrs_db[snr_slot++];
    const Index overlap =
        std::min(ref.samples.size(), sources[k].samples.size());
    const double e_ref = energy(ref.samples.head(overlap));
    const double e_k = energy(sources[k].samples.head(overlap));
    if (e_ref <= 0.0 || e_k <= 0.0)
      throw std::invalid_argument("silent source in mixture");
    gains[k] = std::sqrt(e_ref / e_k) * std::pow(10.0, -snr / 20.0);
  }

  const std::vector<Eigen::ArrayXd> scaled =
      scale_and_pad(sources, gains, total);
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(total);
  for (const auto& s : scaled) sum += s;
  const double peak = sum.abs().maxCoeff();
  const double rescale = peak > 1.0 ? 1.0 / peak : 1.0;

  Mixture out = assemble(scaled, rescale, rate);
  out.spec.reference_index = reference_index;
  out.spec.rescale = rescale;
  out.spec.sources.resize(sources.size());
  snr_slot = 0;
  for (std::size_t k = 0; k < sources.size(); ++k) {
    out.spec.sources[k].gain = gains[k];
    out.spec.sources[k].snr_db =
        static_cast<Index>(k) == reference_index ? 0.0 : snrs_db[snr_slot++];
  }
  return out;
}

void extend_silent_channel(Mixture& mixture, Index target_count,
                           std::uint64_t seed) {
  const Index current = mixture.spec.num_sources();
  if (target_count <= current)
    throw std::invalid_argument(
        "target reference count must exceed the current source count");

  double total_energy = 0.0;
  Index active = 0;
  for (std::size_t k = 0; k < mixture.references.size(); ++k) {
    if (mixture.spec.sources[k].silent) continue;
    total_energy += energy(mixture.references[k].samples);
    ++active;
  }
  if (active == 0) throw std::invalid_argument("no active sources to average");
  const double target_energy = total_energy / static_cast<double>(active) * 1e-7;

  const Index total = mixture.mixture.samples.size();
  for (Index k = current; k < target_count; ++k) {
    const std::uint64_t noise_seed =
        rng::derive_seed(seed, kStreamSilent, static_cast<std::uint64_t>(k));
    rng::Engine eng(noise_seed);
    Eigen::ArrayXd noise = rng::gaussian_vector(eng, total);
    noise *= std::sqrt(target_energy / energy(noise));

    SourceEntry entry;
    entry.silent = true;
    entry.noise_seed = noise_seed;
    entry.energy = target_energy;
    entry.gain = 0.0;
    mixture.spec.sources.push_back(std::move(entry));

    TimeSignal ref;
    ref.sample_rate = mixture.mixture.sample_rate;
    ref.samples = std::move(noise);
    mixture.references.push_back(std::move(ref));
  }
}

namespace {

Eigen::ArrayXd silent_signal(const SourceEntry& entry, Index total) {
  rng::Engine eng(entry.noise_seed);
  Eigen::ArrayXd noise = rng::gaussian_vector(eng, total);
  noise *= std::sqrt(entry.energy / energy(noise));
  return noise;
}

}  // namespace

Mixture realize(const MixtureSpec& spec, const std::string& corpus_root,
                double sample_rate) {
  std::vector<TimeSignal> sources;
  std::vector<double> gains;
  Index total = 0;
  for (const auto& entry : spec.sources) {
    if (entry.silent) continue;
    sources.push_back(
        wav::read((fs::path(corpus_root) / entry.path).string(), sample_rate));
    gains.push_back(entry.gain);
    total = std::max(total, sources.back().samples.size());
  }
  if (sources.empty()) throw std::invalid_argument("record has no sources");

  Mixture out =
      assemble(scale_and_pad(sources, gains, total), spec.rescale, sample_rate);
  out.spec = spec;

  // Silent channels live after the real sources in the entry list.
  for (const auto& entry : spec.sources) {
    if (!entry.silent) continue;
    TimeSignal ref;
    ref.sample_rate = sample_rate;
    ref.samples = silent_signal(entry, total);
    out.references.push_back(std::move(ref));
  }
  return out;
}

namespace {

json entry_to_json(const SourceEntry& entry) {
  if (entry.silent)
    return json{{"silent", true},
                {"noise_seed", entry.noise_seed},
                {"energy", entry.energy}};
  return json{{"path", entry.path},
              {"speaker", entry.speaker},
              {"gain", entry.gain},
              {"snr_db", entry.snr_db}};
}

SourceEntry entry_from_json(const json& j) {
  SourceEntry entry;
  if (j.value("silent", false)) {
    entry.silent = true;
    entry.noise_seed = j.at("noise_seed").get<std::uint64_t>();
    entry.energy = j.at("energy").get<double>();
    entry.gain = 0.0;
    return entry;
  }
  entry.path = j.at("path").get<std::string>();
  entry.speaker = j.at("speaker").get<std::string>();
  entry.gain = j.at("gain").get<double>();
  entry.snr_db = j.at("snr_db").get<double>();
  return entry;
}

}  // namespace

void write_manifest(const std::string& path, const Manifest& manifest) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);

  const ManifestConfig& c = manifest.config;
  json meta{{"type", "meta"},
            {"version", 1},
            {"num_speakers", c.num_speakers},
            {"snr_min", c.snr_min},
            {"snr_max", c.snr_max},
            {"seed", c.seed},
            {"train_count", c.train_count},
            {"valid_count", c.valid_count},
            {"test_count", c.test_count},
            {"open_speakers", c.open_speakers},
            {"order_by_energy", c.order_by_energy},
            {"silent_extend_to", c.silent_extend_to},
            {"sample_rate", c.sample_rate}};
  out << meta.dump() << "\n";

  for (const auto& record : manifest.records) {
    json sources = json::array();
    for (const auto& entry : record.sources)
      sources.push_back(entry_to_json(entry));
    json line{{"type", "record"},
              {"id", record.id},
              {"split", record.split},
              {"reference_index", record.reference_index},
              {"rescale", record.rescale},
              {"sources", std::move(sources)}};
    if (!record.mixture_path.empty()) line["mixture_path"] = record.mixture_path;
    out << line.dump() << "\n";
  }
  if (!out) throw std::runtime_error("short write to manifest: " + path);
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);

  Manifest manifest;
  std::string line;
  bool have_meta = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    const auto type = j.at("type").get<std::string>();
    if (type == "meta") {
      ManifestConfig& c = manifest.config;
      c.num_speakers = j.at("num_speakers").get<Index>();
      c.snr_min = j.at("snr_min").get<double>();
      c.snr_max = j.at("snr_max").get<double>();
      c.seed = j.at("seed").get<std::uint64_t>();
      c.train_count = j.at("train_count").get<Index>();
      c.valid_count = j.at("valid_count").get<Index>();
      c.test_count = j.at("test_count").get<Index>();
      c.open_speakers = j.at("open_speakers").get<Index>();
      c.order_by_energy = j.at("order_by_energy").get<bool>();
      c.silent_extend_to = j.at("silent_extend_to").get<Index>();
      c.sample_rate = j.at("sample_rate").get<double>();
      have_meta = true;
    } else if (type == "record") {
      MixtureSpec record;
      record.id = j.at("id").get<std::string>();
      record.split = j.at("split").get<std::string>();
      record.reference_index = j.at("reference_index").get<Index>();
      record.rescale = j.at("rescale").get<double>();
      record.mixture_path = j.value("mixture_path", std::string{});
      for (const auto& s : j.at("sources"))
        record.sources.push_back(entry_from_json(s));
      manifest.records.push_back(std::move(record));
    } else {
      throw std::runtime_error("unknown manifest line type: " + type);
    }
  }
  if (!have_meta) throw std::runtime_error("manifest has no meta line: " + path);
  return manifest;
}

namespace {

struct SpeakerDir {
  std::string name;
  std::vector<std::string> utterances;  // corpus-relative paths
};

std::vector<SpeakerDir> scan_corpus(const std::string& corpus_root) {
  std::vector<SpeakerDir> speakers;
  if (!fs::is_directory(corpus_root))
    throw std::runtime_error("corpus root is not a directory: " + corpus_root);
  for (const auto& dir : fs::directory_iterator(corpus_root)) {
    if (!dir.is_directory()) continue;
    SpeakerDir speaker;
    speaker.name = dir.path().filename().string();
    for (const auto& file : fs::directory_iterator(dir.path())) {
      if (!file.is_regular_file() || file.path().extension() != ".wav")
        continue;
      speaker.utterances.push_back(
          (fs::path(speaker.name) / file.path().filename()).string());
    }
    if (speaker.utterances.empty()) continue;
    std::sort(speaker.utterances.begin(), speaker.utterances.end());
    speakers.push_back(std::move(speaker));
  }
  std::sort(speakers.begin(), speakers.end(),
            [](const SpeakerDir& a, const SpeakerDir& b) {
              return a.name < b.name;
            });
  return speakers;
}

}  // namespace

Manifest build_manifest(
    const std::string& corpus_root, const ManifestConfig& config,
    const std::function<std::string(const Mixture&)>& on_record) {
  if (config.num_speakers < 2)
    throw std::invalid_argument("need at least two speakers per mixture");
  if (config.snr_min > config.snr_max)
    throw std::invalid_argument("snr_min must not exceed snr_max");
  if (config.silent_extend_to != 0 &&
      config.silent_extend_to <= config.num_speakers)
    throw std::invalid_argument(
        "silent_extend_to must exceed the speaker count");

  std::vector<SpeakerDir> speakers = scan_corpus(corpus_root);
  const auto available = static_cast<Index>(speakers.size());
  if (config.open_speakers < 0 ||
      (config.open_speakers > 0 && config.open_speakers >= available))
    throw std::invalid_argument("not enough speakers for the open pool");

  // Shuffle speakers once, then carve off the open-condition pool from
  // the tail so train/valid never see those speakers.
  {
    rng::Engine eng(rng::derive_seed(config.seed, kStreamDirs, 0));
    rng::shuffle(speakers, eng);
  }
  const Index closed_count =
      config.open_speakers > 0 ? available - config.open_speakers : available;
  if (closed_count < config.num_speakers)
    throw std::invalid_argument("not enough speakers in the corpus");
  if (config.test_count > 0 && config.open_speakers > 0 &&
      config.open_speakers < config.num_speakers)
    throw std::invalid_argument("not enough open-condition speakers");

  Manifest manifest;
  manifest.config = config;

  const struct {
    const char* name;
    Index count;
  } splits[] = {{"train", config.train_count},
                {"valid", config.valid_count},
                {"test", config.test_count}};

  std::uint64_t record_counter = 0;
  for (const auto& split : splits) {
    const bool open = std::string(split.name) == "test" &&
                      config.open_speakers > 0;
    const Index pool_begin = open ? closed_count : 0;
    const Index pool_size = open ? config.open_speakers : closed_count;

    for (Index n = 0; n < split.count; ++n, ++record_counter) {
      rng::Engine eng(
          rng::derive_seed(config.seed, kStreamRecord, record_counter));

      // Draw distinct speakers from the pool, then one utterance each.
      std::vector<Index> pool(static_cast<std::size_t>(pool_size));
      std::iota(pool.begin(), pool.end(), pool_begin);
      rng::shuffle(pool, eng);
      pool.resize(static_cast<std::size_t>(config.num_speakers));

      std::vector<TimeSignal> signals;
      std::vector<std::string> paths;
      std::vector<std::string> names;
      for (const Index sp : pool) {
        const auto& speaker = speakers[static_cast<std::size_t>(sp)];
        const auto utt = rng::uniform_index(
            eng, static_cast<std::uint64_t>(speaker.utterances.size()));
        paths.push_back(speaker.utterances[utt]);
        names.push_back(speaker.name);
        signals.push_back(
            wav::read((fs::path(corpus_root) / paths.back()).string(),
                      config.sample_rate));
      }

      std::vector<double> snrs;
      for (Index k = 1; k < config.num_speakers; ++k)
        snrs.push_back(rng::uniform(eng, config.snr_min, config.snr_max));

      Mixture mixture = mix(signals, snrs, 0);
      for (std::size_t k = 0; k < paths.size(); ++k) {
        mixture.spec.sources[k].path = paths[k];
        mixture.spec.sources[k].speaker = names[k];
      }

      if (config.order_by_energy) {
        std::vector<Index> order(paths.size());
        std::iota(order.begin(), order.end(), Index{0});
        std::vector<double> energies;
        for (const auto& ref : mixture.references)
          energies.push_back(energy(ref.samples));
        std::stable_sort(order.begin(), order.end(),
                         [&](Index a, Index b) {
                           return energies[static_cast<std::size_t>(a)] >
                                  energies[static_cast<std::size_t>(b)];
                         });
        std::vector<SourceEntry> entries;
        std::vector<TimeSignal> refs;
        Index new_ref = 0;
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
          const auto from = static_cast<std::size_t>(order[pos]);
          if (order[pos] == mixture.spec.reference_index)
            new_ref = static_cast<Index>(pos);
          entries.push_back(std::move(mixture.spec.sources[from]));
          refs.push_back(std::move(mixture.references[from]));
        }
        mixture.spec.sources = std::move(entries);
        mixture.references = std::move(refs);
        mixture.spec.reference_index = new_ref;
      }

      if (config.silent_extend_to > config.num_speakers)
        extend_silent_channel(
            mixture, config.silent_extend_to,
            rng::derive_seed(config.seed, kStreamSilent, record_counter));

      char id[32];
      std::snprintf(id, sizeof id, "%s_%06lld", split.name,
                    static_cast<long long>(n));
      mixture.spec.id = id;
      mixture.spec.split = split.name;
      if (on_record) mixture.spec.mixture_path = on_record(mixture);
      manifest.records.push_back(std::move(mixture.spec));
    }
  }
  return manifest;
}

}  // namespace upit::mixgen
