#include "upit/cli.hpp"

#include "upit/dsp.hpp"
#include "upit/eval.hpp"
#include "upit/masks.hpp"
#include "upit/mixgen.hpp"
#include "upit/model.hpp"
#include "upit/pit.hpp"
#include "upit/train.hpp"
#include "upit/utterance.hpp"
#include "upit/wav.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace upit::cli {

namespace fs = std::filesystem;

namespace {

struct MixgenArgs {
  std::string corpus;
  std::string out;
  Index speakers = 2;
  double snr_min = 0.0;
  double snr_max = 5.0;
  std::uint64_t seed = 0;
  Index train_count = 0;
  Index valid_count = 0;
  Index test_count = 0;
  Index open_speakers = 0;
  bool order_by_energy = false;
  Index silent_extend = 0;
  double sample_rate = kDefaultSampleRate;
  bool no_audio = false;
};

struct StftArgs {
  Index frame_len = 256;
  Index hop = 128;
  double sample_rate = kDefaultSampleRate;
};

struct TrainArgs {
  std::string manifest;
  std::string corpus;
  std::string out;
  std::string criterion = "upit";
  std::string loss = "psm";
  Index meta_frames = 1;
  double lr = 2e-5;
  double lr_decay = 0.7;
  double lr_floor = 1e-10;
  Index epochs = 200;
  Index minibatch = 8;
  double dropout = 0.5;
  std::uint64_t seed = 0;
  Index threads = 1;
  std::string layers = "bi:64,bi:64";
  std::string activation = "softmax";
  bool no_normalize = false;
  Index checkpoint_every = 0;
  StftArgs stft;
};

struct SeparateArgs {
  std::string checkpoint;
  std::string input;
  std::string out;
  StftArgs stft;
};

struct OracleArgs {
  std::string manifest;
  std::string corpus;
  std::string out;
  std::string mask = "all";
  std::string split = "all";
  Index limit = 0;
  StftArgs stft;
};

struct EvaluateArgs {
  std::string checkpoint;
  std::string manifest;
  std::string corpus;
  std::string out;
  std::string split = "test";
  std::string mode = "default";
  Index meta_frames = 1;
  bool index_pairing = false;
  StftArgs stft;
};

void add_stft_flags(CLI::App* sub, StftArgs& args) {
  sub->add_option("--frame-len", args.frame_len, "analysis frame length")
      ->capture_default_str();
  sub->add_option("--hop", args.hop, "frame shift in samples")
      ->capture_default_str();
  sub->add_option("--sample-rate", args.sample_rate, "expected sample rate")
      ->capture_default_str();
}

/// Writes the app's resolved option values (defaults, config file and
/// flags folded together) next to the run's outputs.
void write_resolved_config(const CLI::App& app, const std::string& out_dir,
                           const std::string& name) {
  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / (name + ".resolved.ini"));
  out << app.config_to_str(true, true);
}

train::Criterion parse_criterion(const std::string& name) {
  if (name == "conv") return train::Criterion::Conv;
  if (name == "conv-rand") return train::Criterion::ConvRand;
  if (name == "pit") return train::Criterion::Pit;
  if (name == "upit") return train::Criterion::Upit;
  throw std::invalid_argument("unknown criterion: " + name);
}

pit::LossKind parse_loss(const std::string& name) {
  if (name == "mse") return pit::LossKind::MaskMse;
  if (name == "am") return pit::LossKind::Amplitude;
  if (name == "psm") return pit::LossKind::Psm;
  throw std::invalid_argument("unknown loss: " + name);
}

masks::MaskKind parse_mask(const std::string& name) {
  if (name == "irm") return masks::MaskKind::Irm;
  if (name == "iam") return masks::MaskKind::Iam;
  if (name == "ipsm") return masks::MaskKind::Ipsm;
  if (name == "inpsm") return masks::MaskKind::Inpsm;
  throw std::invalid_argument("unknown mask kind: " + name);
}

model::HeadActivation parse_activation(const std::string& name) {
  if (name == "softmax") return model::HeadActivation::SoftmaxAcrossSpeakers;
  if (name == "sigmoid") return model::HeadActivation::Sigmoid;
  if (name == "relu") return model::HeadActivation::Relu;
  if (name == "tanh") return model::HeadActivation::Tanh;
  throw std::invalid_argument("unknown activation: " + name);
}

std::vector<model::LayerSpec> parse_layers(const std::string& text) {
  std::vector<model::LayerSpec> layers;
  std::stringstream stream(text);
  std::string item;
  while (std::getline(stream, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos)
      throw std::invalid_argument("bad --layers entry: " + item);
    const std::string kind = item.substr(0, colon);
    model::LayerSpec spec;
    if (kind == "dense")
      spec.kind = model::LayerKind::Dense;
    else if (kind == "rnn")
      spec.kind = model::LayerKind::Recurrent;
    else if (kind == "bi")
      spec.kind = model::LayerKind::BiRecurrent;
    else
      throw std::invalid_argument("bad --layers kind: " + kind);
    spec.width = std::stol(item.substr(colon + 1));
    if (spec.width < 1) throw std::invalid_argument("bad --layers width");
    layers.push_back(spec);
  }
  if (layers.empty()) throw std::invalid_argument("empty --layers");
  return layers;
}

StftConfig make_stft(const StftArgs& args) {
  return dsp::make_config(args.frame_len, args.hop, args.sample_rate);
}

int run_mixgen(const MixgenArgs& args) {
  mixgen::ManifestConfig config;
  config.num_speakers = args.speakers;
  config.snr_min = args.snr_min;
  config.snr_max = args.snr_max;
  config.seed = args.seed;
  config.train_count = args.train_count;
  config.valid_count = args.valid_count;
  config.test_count = args.test_count;
  config.open_speakers = args.open_speakers;
  config.order_by_energy = args.order_by_energy;
  config.silent_extend_to = args.silent_extend;
  config.sample_rate = args.sample_rate;

  fs::create_directories(args.out);
  std::function<std::string(const mixgen::Mixture&)> on_record;
  if (!args.no_audio) {
    fs::create_directories(fs::path(args.out) / "audio");
    on_record = [&](const mixgen::Mixture& mixture) {
      const std::string rel = "audio/" + mixture.spec.id + ".wav";
      wav::write((fs::path(args.out) / rel).string(), mixture.mixture);
      return rel;
    };
  }

  const mixgen::Manifest manifest =
      mixgen::build_manifest(args.corpus, config, on_record);
  const std::string manifest_path =
      (fs::path(args.out) / "manifest.jsonl").string();
  mixgen::write_manifest(manifest_path, manifest);
  std::cout << "wrote " << manifest.records.size() << " records to "
            << manifest_path << "\n";
  return 0;
}

int run_train(const TrainArgs& args) {
  const StftConfig stft = make_stft(args.stft);
  const mixgen::Manifest manifest = mixgen::read_manifest(args.manifest);
  const std::string corpus = args.corpus.empty()
                                 ? fs::path(args.manifest).parent_path().string()
                                 : args.corpus;

  const data::Dataset train_set =
      data::load_dataset(manifest, "train", stft, corpus);
  const data::Dataset valid_set =
      data::load_dataset(manifest, "valid", stft, corpus);
  if (train_set.empty())
    throw std::runtime_error("manifest has no training records");

  train::TrainConfig config;
  config.criterion = parse_criterion(args.criterion);
  config.loss = parse_loss(args.loss);
  config.meta_frames = args.meta_frames;
  config.lr = args.lr;
  config.lr_decay = args.lr_decay;
  config.lr_floor = args.lr_floor;
  config.max_epochs = args.epochs;
  config.minibatch = args.minibatch;
  config.dropout = args.dropout;
  config.seed = args.seed;
  config.threads = args.threads;
  config.normalize_features = !args.no_normalize;
  config.checkpoint_every = args.checkpoint_every;
  config.checkpoint_dir = args.out;

  model::ModelSpec spec;
  spec.input_dim = stft.num_bins();
  spec.num_speakers = train_set.front().num_speakers();
  spec.layers = parse_layers(args.layers);
  spec.activation = parse_activation(args.activation);
  spec.dropout = args.dropout;

  fs::create_directories(args.out);
  const model::ModelParams initial = model::init_params(spec, args.seed);
  const train::TrainResult result =
      train::train(initial, train_set, valid_set, config);

  const std::string ckpt = (fs::path(args.out) / "model.ckpt").string();
  model::save(ckpt, result.params);
  train::write_log_csv((fs::path(args.out) / "trainlog.csv").string(),
                       result.log);
  if (!result.log.epochs.empty()) {
    const auto& last = result.log.epochs.back();
    std::cout << "trained " << result.log.epochs.size() << " epochs, final "
              << "train loss " << last.train_loss << ", valid loss "
              << last.valid_loss << "\n";
  }
  std::cout << "checkpoint: " << ckpt << "\n";
  return 0;
}

int run_separate(const SeparateArgs& args) {
  const StftConfig stft = make_stft(args.stft);
  const model::ModelParams params = model::load(args.checkpoint);
  if (stft.num_bins() != params.spec.input_dim)
    throw std::runtime_error(
        "frame length does not match the checkpoint's input width");

  const TimeSignal mixture = wav::read(args.input, args.stft.sample_rate);
  const ComplexSpectrogram spec = dsp::analyze(mixture, stft);
  const auto [mag, phase] = dsp::magnitude_phase(spec);
  const masks::MaskSet est = model::forward(params, mag, false);

  fs::create_directories(args.out);
  const std::string stem = fs::path(args.input).stem().string();
  for (Index s = 0; s < est.num_speakers(); ++s) {
    const TimeSignal recon = masks::reconstruct(
        est.masks[static_cast<std::size_t>(s)], mag, phase, stft);
    const std::string path =
        (fs::path(args.out) / (stem + "_s" + std::to_string(s + 1) + ".wav"))
            .string();
    wav::write(path, recon);
    std::cout << path << "\n";
  }
  return 0;
}

int run_oracle(const OracleArgs& args) {
  const StftConfig stft = make_stft(args.stft);
  const mixgen::Manifest manifest = mixgen::read_manifest(args.manifest);
  const std::string corpus = args.corpus.empty()
                                 ? fs::path(args.manifest).parent_path().string()
                                 : args.corpus;

  std::vector<masks::MaskKind> kinds;
  if (args.mask == "all")
    kinds = {masks::MaskKind::Irm, masks::MaskKind::Iam, masks::MaskKind::Ipsm,
             masks::MaskKind::Inpsm};
  else
    kinds = {parse_mask(args.mask)};
  const std::map<masks::MaskKind, std::string> kind_names{
      {masks::MaskKind::Irm, "irm"},
      {masks::MaskKind::Iam, "iam"},
      {masks::MaskKind::Ipsm, "ipsm"},
      {masks::MaskKind::Inpsm, "inpsm"}};

  fs::create_directories(args.out);
  std::ofstream csv(fs::path(args.out) / "oracle_sdr.csv");
  csv << "utterance,mask,speaker,sdr_in,sdr_out,improvement\n";
  csv << std::setprecision(10);

  std::map<std::string, std::pair<double, Index>> totals;
  Index done = 0;
  for (const auto& record : manifest.records) {
    if (args.split != "all" && record.split != args.split) continue;
    if (args.limit > 0 && done >= args.limit) break;
    ++done;

    const data::Utterance utt = data::make_utterance(
        mixgen::realize(record, corpus, manifest.config.sample_rate), stft);
    const Index frames = utt.num_frames();
    const Index synth_len = (frames - 1) * stft.hop + stft.frame_len;
    const Index margin = stft.frame_len - stft.hop;

    for (const auto kind : kinds) {
      const masks::MaskSet oracle = masks::oracle_mask(utt.refs, kind);
      for (Index s = 0; s < oracle.num_speakers(); ++s) {
        const auto si = static_cast<std::size_t>(s);
        if (!utt.ref_silent.empty() && utt.ref_silent[si]) continue;
        const TimeSignal recon = masks::reconstruct(
            oracle.masks[si], utt.mixture_mag, utt.mixture_phase, stft);
        TimeSignal ref, est, mix;
        ref.samples = utt.ref_signals[si].samples.segment(
            margin, synth_len - 2 * margin);
        est.samples = recon.samples.segment(margin, synth_len - 2 * margin);
        mix.samples = utt.mixture_signal.samples.segment(
            margin, synth_len - 2 * margin);
        const double in = eval::sdr(ref, mix);
        const double out = eval::sdr(ref, est);
        const std::string& kind_name = kind_names.at(kind);
        csv << utt.id << ',' << kind_name << ',' << s << ',' << in << ','
            << out << ',' << out - in << '\n';
        totals[kind_name].first += out - in;
        totals[kind_name].second += 1;

        wav::write((fs::path(args.out) /
                    (utt.id + "_" + kind_name + "_s" + std::to_string(s + 1) +
                     ".wav"))
                       .string(),
                   recon);
      }
    }
  }
  if (done == 0) throw std::runtime_error("no records matched the split");

  for (const auto& [name, total] : totals)
    std::cout << name << ": mean SDR improvement "
              << total.first / static_cast<double>(total.second) << " dB over "
              << total.second << " sources\n";
  return 0;
}

int run_evaluate(const EvaluateArgs& args) {
  const StftConfig stft = make_stft(args.stft);
  const mixgen::Manifest manifest = mixgen::read_manifest(args.manifest);
  const std::string corpus = args.corpus.empty()
                                 ? fs::path(args.manifest).parent_path().string()
                                 : args.corpus;
  const model::ModelParams params = model::load(args.checkpoint);

  const data::Dataset dataset =
      data::load_dataset(manifest, args.split, stft, corpus);
  if (dataset.empty())
    throw std::runtime_error("manifest has no records for split " + args.split);

  std::vector<eval::SeparatedUtterance> outputs;
  outputs.reserve(dataset.size());
  for (const auto& utt : dataset) {
    eval::SeparatedUtterance sep;
    sep.utt = &utt;
    sep.est = model::forward(params, utt.mixture_mag, false);
    outputs.push_back(std::move(sep));
  }

  const eval::AssignMode mode = args.mode == "optimal"
                                    ? eval::AssignMode::Optimal
                                    : eval::AssignMode::Default;
  const eval::EvalReport report = eval::evaluate_assignment(
      outputs, mode, stft, args.meta_frames, args.index_pairing);

  fs::create_directories(args.out);
  eval::write_report_csv((fs::path(args.out) / "eval.csv").string(), report);
  std::cout << args.split << ": " << eval::summary_line(report) << "\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"utterance-level permutation invariant speech separation"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI file with option defaults");

  MixgenArgs mixgen_args;
  auto* mixgen_cmd =
      app.add_subcommand("mixgen", "synthesize a mixture dataset");
  mixgen_cmd->add_option("--corpus", mixgen_args.corpus,
                         "speaker-per-directory wav corpus")
      ->required()
      ->check(CLI::ExistingDirectory);
  mixgen_cmd->add_option("--out", mixgen_args.out, "output directory")
      ->required();
  mixgen_cmd->add_option("--speakers", mixgen_args.speakers,
                         "speakers per mixture")
      ->capture_default_str();
  mixgen_cmd->add_option("--snr-min", mixgen_args.snr_min, "lowest mixing SNR")
      ->capture_default_str();
  mixgen_cmd->add_option("--snr-max", mixgen_args.snr_max, "highest mixing SNR")
      ->capture_default_str();
  mixgen_cmd->add_option("--seed", mixgen_args.seed, "generation seed")
      ->capture_default_str();
  mixgen_cmd->add_option("--train-count", mixgen_args.train_count,
                         "training records")
      ->capture_default_str();
  mixgen_cmd->add_option("--valid-count", mixgen_args.valid_count,
                         "validation records")
      ->capture_default_str();
  mixgen_cmd->add_option("--test-count", mixgen_args.test_count,
                         "test records")
      ->capture_default_str();
  mixgen_cmd->add_option("--open-speakers", mixgen_args.open_speakers,
                         "speakers reserved for the test split")
      ->capture_default_str();
  mixgen_cmd->add_flag("--order-by-energy", mixgen_args.order_by_energy,
                       "sort each record's sources by descending energy");
  mixgen_cmd->add_option("--silent-extend", mixgen_args.silent_extend,
                         "extend records with silent channels to this count")
      ->capture_default_str();
  mixgen_cmd->add_option("--sample-rate", mixgen_args.sample_rate,
                         "expected corpus sample rate")
      ->capture_default_str();
  mixgen_cmd->add_flag("--no-audio", mixgen_args.no_audio,
                       "skip mixture wav snapshots");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a separation model");
  train_cmd->add_option("--manifest", train_args.manifest, "dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--corpus", train_args.corpus,
                        "corpus root (default: the manifest's directory)");
  train_cmd->add_option("--out", train_args.out, "output directory")
      ->required();
  train_cmd
      ->add_option("--criterion", train_args.criterion,
                   "conv, conv-rand, pit or upit")
      ->check(CLI::IsMember({"conv", "conv-rand", "pit", "upit"}))
      ->capture_default_str();
  train_cmd->add_option("--loss", train_args.loss, "mse, am or psm")
      ->check(CLI::IsMember({"mse", "am", "psm"}))
      ->capture_default_str();
  train_cmd
      ->add_option("--meta-frames", train_args.meta_frames,
                   "meta-frame length for the pit criterion")
      ->capture_default_str();
  train_cmd->add_option("--lr", train_args.lr, "learning rate")
      ->capture_default_str();
  train_cmd->add_option("--lr-decay", train_args.lr_decay, "decay factor")
      ->capture_default_str();
  train_cmd->add_option("--lr-floor", train_args.lr_floor, "stopping rate")
      ->capture_default_str();
  train_cmd->add_option("--epochs", train_args.epochs, "maximum epochs")
      ->capture_default_str();
  train_cmd->add_option("--minibatch", train_args.minibatch,
                        "utterances per minibatch")
      ->capture_default_str();
  train_cmd->add_option("--dropout", train_args.dropout,
                        "inter-layer dropout probability")
      ->capture_default_str();
  train_cmd->add_option("--seed", train_args.seed, "training seed")
      ->capture_default_str();
  train_cmd->add_option("--threads", train_args.threads,
                        "worker threads per minibatch")
      ->capture_default_str();
  train_cmd->add_option("--layers", train_args.layers,
                        "hidden stack, e.g. bi:64,bi:64 (dense/rnn/bi)")
      ->capture_default_str();
  train_cmd
      ->add_option("--activation", train_args.activation,
                   "softmax, sigmoid, relu or tanh")
      ->check(CLI::IsMember({"softmax", "sigmoid", "relu", "tanh"}))
      ->capture_default_str();
  train_cmd->add_flag("--no-normalize", train_args.no_normalize,
                      "skip feature normalization");
  train_cmd->add_option("--checkpoint-every", train_args.checkpoint_every,
                        "save an extra checkpoint every N epochs")
      ->capture_default_str();
  add_stft_flags(train_cmd, train_args.stft);

  SeparateArgs separate_args;
  auto* separate_cmd =
      app.add_subcommand("separate", "separate a mixture wav");
  separate_cmd
      ->add_option("--checkpoint", separate_args.checkpoint, "model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  separate_cmd->add_option("--input", separate_args.input, "mixture wav")
      ->required()
      ->check(CLI::ExistingFile);
  separate_cmd->add_option("--out", separate_args.out, "output directory")
      ->required();
  add_stft_flags(separate_cmd, separate_args.stft);

  OracleArgs oracle_args;
  auto* oracle_cmd =
      app.add_subcommand("oracle", "ideal-mask reconstructions and scores");
  oracle_cmd->add_option("--manifest", oracle_args.manifest, "dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  oracle_cmd->add_option("--corpus", oracle_args.corpus,
                         "corpus root (default: the manifest's directory)");
  oracle_cmd->add_option("--out", oracle_args.out, "output directory")
      ->required();
  oracle_cmd
      ->add_option("--mask", oracle_args.mask,
                   "irm, iam, ipsm, inpsm or all")
      ->check(CLI::IsMember({"irm", "iam", "ipsm", "inpsm", "all"}))
      ->capture_default_str();
  oracle_cmd->add_option("--split", oracle_args.split,
                         "train, valid, test or all")
      ->capture_default_str();
  oracle_cmd->add_option("--limit", oracle_args.limit,
                         "stop after this many records (0: all)")
      ->capture_default_str();
  add_stft_flags(oracle_cmd, oracle_args.stft);

  EvaluateArgs evaluate_args;
  auto* evaluate_cmd =
      app.add_subcommand("evaluate", "score a model on a manifest split");
  evaluate_cmd
      ->add_option("--checkpoint", evaluate_args.checkpoint, "model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate_cmd
      ->add_option("--manifest", evaluate_args.manifest, "dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--corpus", evaluate_args.corpus,
                           "corpus root (default: the manifest's directory)");
  evaluate_cmd->add_option("--out", evaluate_args.out, "output directory")
      ->required();
  evaluate_cmd->add_option("--split", evaluate_args.split, "split to score")
      ->capture_default_str();
  evaluate_cmd->add_option("--mode", evaluate_args.mode,
                           "headline assignment: default or optimal")
      ->check(CLI::IsMember({"default", "optimal"}))
      ->capture_default_str();
  evaluate_cmd
      ->add_option("--meta-frames", evaluate_args.meta_frames,
                   "re-pairing granularity for the optimal mode")
      ->capture_default_str();
  evaluate_cmd->add_flag("--index-pairing", evaluate_args.index_pairing,
                         "pair output k with reference k in default mode");
  add_stft_flags(evaluate_cmd, evaluate_args.stft);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (mixgen_cmd->parsed()) {
      const int rc = run_mixgen(mixgen_args);
      write_resolved_config(app, mixgen_args.out, "mixgen");
      return rc;
    }
    if (train_cmd->parsed()) {
      const int rc = run_train(train_args);
      write_resolved_config(app, train_args.out, "train");
      return rc;
    }
    if (separate_cmd->parsed()) {
      const int rc = run_separate(separate_args);
      write_resolved_config(app, separate_args.out, "separate");
      return rc;
    }
    if (oracle_cmd->parsed()) {
      const int rc = run_oracle(oracle_args);
      write_resolved_config(app, oracle_args.out, "oracle");
      return rc;
    }
    if (evaluate_cmd->parsed()) {
      const int rc = run_evaluate(evaluate_args);
      write_resolved_config(app, evaluate_args.out, "evaluate");
      return rc;
    }
  } catch (const std::exception& e) {
    std::cerr << "upit: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int run(const std::vector<std::string>& args) {
  std::vector<std::string> full;
  full.reserve(args.size() + 1);
  full.emplace_back("upit");
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(full.size());
  for (const auto& arg : full) argv.push_back(arg.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace upit::cli
