// upit/train.hpp
//
// SGD training loops over four assignment criteria:
//
//   conv       outputs follow the reference order of each record
//   conv-rand  outputs follow one random (but fixed) order per record,
//              the control showing why speaker tracing fails
//   pit        best permutation per meta-frame
//   upit       one best permutation per utterance
//
// The schedule follows the reference setup: plain SGD, learning rate
// 2e-5 halved-ish (factor 0.7) whenever the training objective goes up,
// stop once the rate falls below 1e-10 -- exactly 35 decays from the
// default -- minibatches of 8 utterances, dropout 0.5.  All randomness
// (shuffling, dropout, random labels) derives from the config seed, so a
// run is reproducible bit for bit, including with worker threads: each
// utterance's gradients land in their own slot and are reduced in a
// fixed order.

#pragma once

#include "upit/model.hpp"
#include "upit/pit.hpp"
#include "upit/utterance.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace upit::train {

enum class Criterion { Conv, ConvRand, Pit, Upit };

struct TrainConfig {
  Criterion criterion = Criterion::Upit;
  pit::LossKind loss = pit::LossKind::Psm;
  Index meta_frames = 1;  // meta-frame length for the pit criterion
  double lr = 2e-5;
  double lr_decay = 0.7;
  double lr_floor = 1e-10;
  Index max_epochs = 200;
  Index minibatch = 8;
  double dropout = 0.5;
  std::uint64_t seed = 0;
  Index threads = 1;
  bool normalize_features = true;
  Index checkpoint_every = 0;      // 0: only the final checkpoint
  std::string checkpoint_dir;     // required when checkpoint_every > 0
};

struct EpochStats {
  Index epoch = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
};

struct TrainResult {
  model::ModelParams params;
  TrainLog log;
};

/// One schedule step: decays the rate when the training objective did
/// not improve, and signals stop once the rate falls below the floor.
struct LrStep {
  double lr = 0.0;
  bool stop = false;
};
LrStep lr_step(double lr, double prev_objective, double objective,
               const TrainConfig& config);

/// Mean criterion loss of the model over a dataset (no dropout).
double evaluate_loss(const model::ModelParams& params, const data::Dataset& data,
                     const TrainConfig& config,
                     const std::vector<std::vector<Index>>& label_perms = {});

/// Random but fixed output-to-reference orders for the conv-rand
/// control, one per utterance.
std::vector<std::vector<Index>> random_label_perms(const data::Dataset& data,
                                                   std::uint64_t seed);

/// Trains initial_params on the training set, tracking the validation
/// loss each epoch.  Returns the final parameters and the log.
TrainResult train(const model::ModelParams& initial_params,
                  const data::Dataset& train_set, const data::Dataset& valid_set,
                  const TrainConfig& config);

/// Per-feature mean/inv-std fitted on the training set mixtures.
model::FeatureNormalizer fit_normalizer(const data::Dataset& train_set);

void write_log_csv(const std::string& path, const TrainLog& log);

}  // namespace upit::train
