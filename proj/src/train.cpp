#include "upit/train.hpp"

#include "upit/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <thread>

namespace upit::train {

namespace {

// Seed derivation streams for the independent randomness sources.
constexpr std::uint64_t kStreamTrainLabels = 3;
constexpr std::uint64_t kStreamValidLabels = 4;
constexpr std::uint64_t kStreamShuffle = 5;
constexpr std::uint64_t kStreamDropout = 6;

std::vector<Index> identity_perm(Index s_count) {
  std::vector<Index> perm(static_cast<std::size_t>(s_count));
  std::iota(perm.begin(), perm.end(), Index{0});
  return perm;
}

struct UttResult {
  double loss = 0.0;
  model::Gradients grads;
};

/// Loss and mask-space gradients for one utterance under the criterion;
/// grads are empty when with_grads is false.
UttResult utterance_pass(const model::ModelParams& params,
                         const data::Utterance& utt, const TrainConfig& config,
                         const std::vector<Index>* label_perm, bool train_mode,
                         std::uint64_t dropout_seed, bool with_grads) {
  model::ForwardTrace trace;
  const masks::MaskSet est = model::forward(params, utt.mixture_mag, train_mode,
                                            dropout_seed, &trace);
  const std::vector<Array> targets = pit::loss_targets(utt.refs, config.loss);
  const Index frames = utt.num_frames();
  const Index s_count = utt.num_speakers();
  const pit::FrameRange full{0, frames};
  const double b_full = static_cast<double>(frames) *
                        static_cast<double>(utt.mixture_mag.values.rows()) *
                        static_cast<double>(s_count);

  UttResult result;
  std::vector<Array> mask_grads;
  switch (config.criterion) {
    case Criterion::Upit: {
      const pit::PairwiseLossMatrix pairwise = pit::pairwise_losses(
          est, utt.mixture_mag, targets, config.loss, full);
      const pit::PermutationResult best =
          pairwise.entries.rows() <= pit::kExhaustiveLimit
              ? pit::best_permutation(pairwise.entries)
              : pit::best_permutation_assignment(pairwise.entries);
      result.loss = best.loss;
      if (with_grads)
        mask_grads = pit::fixed_permutation_gradient(
            est, utt.mixture_mag, targets, config.loss, best.perm, full, b_full);
      break;
    }
    case Criterion::Pit: {
      const pit::MetaFrameLoss meta = pit::pit_meta_frame_loss(
          est, utt.mixture_mag, utt.refs, config.loss, config.meta_frames);
      result.loss = meta.total;
      if (with_grads) {
        Index covered = 0;
        for (const auto& range : meta.ranges) covered += range.length();
        const double b_total =
            static_cast<double>(covered) *
            static_cast<double>(utt.mixture_mag.values.rows()) *
            static_cast<double>(s_count);
        for (std::size_t i = 0; i < meta.ranges.size(); ++i) {
          std::vector<Array> part = pit::fixed_permutation_gradient(
              est, utt.mixture_mag, targets, config.loss,
              meta.assignments[i].perm, meta.ranges[i], b_total);
          if (mask_grads.empty()) {
            mask_grads = std::move(part);
          } else {
            for (std::size_t s = 0; s < mask_grads.size(); ++s)
              mask_grads[s] += part[s];
          }
        }
      }
      break;
    }
    case Criterion::Conv:
    case Criterion::ConvRand: {
      const std::vector<Index> perm =
          config.criterion == Criterion::Conv || label_perm == nullptr
              ? identity_perm(s_count)
              : *label_perm;
      result.loss = pit::fixed_permutation_loss(est, utt.mixture_mag, targets,
                                                config.loss, perm, full, b_full);
      if (with_grads)
        mask_grads = pit::fixed_permutation_gradient(
            est, utt.mixture_mag, targets, config.loss, perm, full, b_full);
      break;
    }
  }

  if (with_grads) result.grads = model::backward(params, trace, mask_grads);
  return result;
}

void check_dataset(const data::Dataset& dataset, Index s_count,
                   const char* name) {
  for (const auto& utt : dataset)
    if (utt.num_speakers() != s_count)
      throw std::invalid_argument(std::string("speaker count mismatch in ") +
                                  name + " set at utterance " + utt.id);
}

}  // namespace

LrStep lr_step(double lr, double prev_objective, double objective,
               const TrainConfig& config) {
  LrStep step;
  step.lr = objective > prev_objective ? lr * config.lr_decay : lr;
  step.stop = step.lr < config.lr_floor;
  return step;
}

std::vector<std::vector<Index>> random_label_perms(const data::Dataset& data,
                                                   std::uint64_t seed) {
  std::vector<std::vector<Index>> perms;
  perms.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    rng::Engine eng(rng::derive_seed(seed, kStreamTrainLabels, i));
    std::vector<Index> perm = identity_perm(data[i].num_speakers());
    rng::shuffle(perm, eng);
    perms.push_back(std::move(perm));
  }
  return perms;
}

double evaluate_loss(const model::ModelParams& params, const data::Dataset& data,
                     const TrainConfig& config,
                     const std::vector<std::vector<Index>>& label_perms) {
  if (data.empty()) throw std::invalid_argument("empty dataset");
  if (!label_perms.empty() && label_perms.size() != data.size())
    throw std::invalid_argument("label permutation count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::vector<Index>* perm =
        label_perms.empty() ? nullptr : &label_perms[i];
    total +=
        utterance_pass(params, data[i], config, perm, false, 0, false).loss;
  }
  return total / static_cast<double>(data.size());
}

model::FeatureNormalizer fit_normalizer(const data::Dataset& train_set) {
  if (train_set.empty()) throw std::invalid_argument("empty training set");
  const Index f_bins = train_set.front().mixture_mag.values.rows();
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(f_bins);
  Eigen::ArrayXd sum_sq = Eigen::ArrayXd::Zero(f_bins);
  double frames = 0.0;
  for (const auto& utt : train_set) {
    sum += utt.mixture_mag.values.rowwise().sum();
    sum_sq += utt.mixture_mag.values.square().rowwise().sum();
    frames += static_cast<double>(utt.num_frames());
  }
  model::FeatureNormalizer norm;
  norm.enabled = true;
  norm.mean = (sum / frames).matrix();
  const Eigen::ArrayXd var =
      (sum_sq / frames - (sum / frames).square()).max(0.0);
  norm.inv_std = (var + 1e-12).rsqrt().matrix();
  return norm;
}

TrainResult train(const model::ModelParams& initial_params,
                  const data::Dataset& train_set, const data::Dataset& valid_set,
                  const TrainConfig& config) {
  if (train_set.empty()) throw std::invalid_argument("empty training set");
  if (config.minibatch < 1) throw std::invalid_argument("bad minibatch size");
  if (config.threads < 1) throw std::invalid_argument("bad thread count");
  if (!(config.lr >= 0.0)) throw std::invalid_argument("bad learning rate");
  if (config.criterion == Criterion::Pit && config.meta_frames < 1)
    throw std::invalid_argument("bad meta-frame length");

  TrainResult result;
  result.params = initial_params;
  result.params.spec.dropout = config.dropout;
  const Index s_count = result.params.spec.num_speakers;
  check_dataset(train_set, s_count, "training");
  check_dataset(valid_set, s_count, "validation");

  if (config.normalize_features && !result.params.normalizer.enabled)
    result.params.normalizer = fit_normalizer(train_set);

  std::vector<std::vector<Index>> train_labels;
  std::vector<std::vector<Index>> valid_labels;
  if (config.criterion == Criterion::ConvRand) {
    train_labels = random_label_perms(
        train_set, rng::derive_seed(config.seed, kStreamTrainLabels, 0));
    valid_labels = random_label_perms(
        valid_set, rng::derive_seed(config.seed, kStreamValidLabels, 0));
  }

  TrainConfig eval_config = config;  // evaluation never applies dropout

  double lr = config.lr;
  double prev_objective = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (Index epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();

    rng::Engine shuffle_eng(rng::derive_seed(
        config.seed, kStreamShuffle, static_cast<std::uint64_t>(epoch)));
    rng::shuffle(order, shuffle_eng);

    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(config.minibatch)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(config.minibatch));
      const std::size_t chunk = end - begin;

      std::vector<UttResult> slots(chunk);
      auto process = [&](std::size_t j) {
        const std::size_t idx = order[begin + j];
        const std::uint64_t dropout_seed = rng::derive_seed(
            config.seed, kStreamDropout,
            static_cast<std::uint64_t>(epoch) << 20 |
                static_cast<std::uint64_t>(idx));
        const std::vector<Index>* label =
            train_labels.empty() ? nullptr : &train_labels[idx];
        slots[j] = utterance_pass(result.params, train_set[idx], config, label,
                                  true, dropout_seed, true);
      };

      if (config.threads <= 1 || chunk == 1) {
        for (std::size_t j = 0; j < chunk; ++j) process(j);
      } else {
        const auto workers =
            std::min<std::size_t>(static_cast<std::size_t>(config.threads), chunk);
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
          pool.emplace_back([&, w] {
            try {
              for (std::size_t j = w; j < chunk; j += workers) process(j);
            } catch (...) {
              errors[w] = std::current_exception();
            }
          });
        }
        for (auto& t : pool) t.join();
        for (const auto& err : errors)
          if (err) std::rethrow_exception(err);
      }

      // Fixed-order reduction keeps results identical across thread counts.
      model::Gradients mean_grads = model::zero_gradients(result.params);
      const double weight = 1.0 / static_cast<double>(chunk);
      for (std::size_t j = 0; j < chunk; ++j) {
        loss_sum += slots[j].loss;
        model::accumulate(mean_grads, slots[j].grads, weight);
      }
      model::sgd_step(result.params, mean_grads, lr);
    }
    const double objective = loss_sum / static_cast<double>(train_set.size());

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = objective;
    stats.valid_loss =
        valid_set.empty()
            ? std::numeric_limits<double>::quiet_NaN()
            : evaluate_loss(result.params, valid_set, eval_config, valid_labels);
    stats.lr = lr;
    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    result.log.epochs.push_back(stats);

    if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      if (config.checkpoint_dir.empty())
        throw std::invalid_argument("checkpoint_every needs checkpoint_dir");
      model::save((std::filesystem::path(config.checkpoint_dir) /
                   ("ckpt_epoch_" + std::to_string(epoch) + ".bin"))
                      .string(),
                  result.params);
    }

    const LrStep step = lr_step(lr, prev_objective, objective, config);
    prev_objective = objective;
    lr = step.lr;
    if (step.stop) break;
  }
  return result;
}

void write_log_csv(const std::string& path, const TrainLog& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write train log: " + path);
  out << "epoch,train_mse,valid_mse,lr,seconds\n";
  out << std::setprecision(17);
  for (const auto& row : log.epochs)
    out << row.epoch << ',' << row.train_loss << ',' << row.valid_loss << ','
        << row.lr << ',' << row.seconds << '\n';
  if (!out) throw std::runtime_error("short write to train log: " + path);
}

}  // namespace upit::train
