// upit/model.hpp
//
// A small mask-estimation network: a stack of dense / recurrent /
// bi-recurrent tanh layers over the per-frame feature sequence, a dense
// output head of width F * S, and a head activation that shapes the S
// estimated masks.  The softmax head normalizes across speakers at every
// time-frequency cell, so the estimated masks sum to one there like the
// ideal ratio mask; sigmoid, ReLU and tanh heads bound each mask
// independently.
//
// Everything needed for training is explicit: forward keeps a trace of
// per-layer inputs, hidden states and dropout masks, and backward
// propagates loss gradients through the head, the (inverted) dropout and
// the recurrences in both time directions, returning parameter gradients
// shaped exactly like the parameters.  Inverted dropout is applied
// between layers only, never across time steps, and scales kept units by
// 1/(1-p) so evaluation needs no rescaling.

#pragma once

#include "upit/masks.hpp"
#include "upit/types.hpp"

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace upit::model {

enum class LayerKind { Dense, Recurrent, BiRecurrent };
enum class HeadActivation { SoftmaxAcrossSpeakers, Sigmoid, Relu, Tanh };

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// One direction of a simple tanh recurrence,
/// h_t = tanh(w_in x_t + w_rec h_prev + bias).
struct RecurrentCell {
  Eigen::MatrixXd w_in;   // hidden x in
  Eigen::MatrixXd w_rec;  // hidden x hidden
  Eigen::VectorXd bias;   // hidden
};

struct RecurrentLayer {
  RecurrentCell cell;
};

/// Forward and backward passes over time, outputs concatenated to width
/// 2 * hidden.
struct BiRecurrentLayer {
  RecurrentCell fwd;
  RecurrentCell bwd;
};

using Layer = std::variant<DenseLayer, RecurrentLayer, BiRecurrentLayer>;

struct LayerSpec {
  LayerKind kind = LayerKind::BiRecurrent;
  Index width = 64;  // hidden units per direction
};

struct ModelSpec {
  Index input_dim = 129;
  Index num_speakers = 2;
  std::vector<LayerSpec> layers;
  HeadActivation activation = HeadActivation::SoftmaxAcrossSpeakers;
  double dropout = 0.0;  // inter-layer dropout probability
};

/// Per-feature standardization fitted on the training set.
struct FeatureNormalizer {
  bool enabled = false;
  Eigen::VectorXd mean;
  Eigen::VectorXd inv_std;
};

struct ModelParams {
  ModelSpec spec;
  std::vector<Layer> layers;
  DenseLayer head;
  FeatureNormalizer normalizer;
};

/// Output width of a hidden layer (2x for bi-recurrent).
Index layer_output_dim(const LayerSpec& spec);

/// Glorot-uniform initialization, biases zero; deterministic in the seed.
ModelParams init_params(const ModelSpec& spec, std::uint64_t seed);

/// Everything backward needs from a forward pass.
struct LayerTrace {
  Eigen::MatrixXd input;         // layer input after previous dropout
  Eigen::MatrixXd states;        // activations / forward-direction states
  Eigen::MatrixXd states_bwd;    // backward-direction states (bi only)
  Eigen::MatrixXd dropout_mask;  // empty when no dropout was applied
};

struct ForwardTrace {
  Eigen::MatrixXd features;  // normalized network input
  std::vector<LayerTrace> layers;
  Eigen::MatrixXd head_input;
  Eigen::MatrixXd head_pre;  // (F * S) x T pre-activation
  masks::MaskSet masks;
};

/// Runs the network on an F x T feature grid (the mixture magnitude) and
/// returns S estimated masks.  train_mode enables dropout, drawn
/// deterministically from dropout_seed.  A non-null trace receives the
/// intermediate state required by backward.
masks::MaskSet forward(const ModelParams& params,
                       const MagSpectrogram& features, bool train_mode,
                       std::uint64_t dropout_seed = 0,
                       ForwardTrace* trace = nullptr);

struct DenseGrad {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

struct RecurrentCellGrad {
  Eigen::MatrixXd w_in;
  Eigen::MatrixXd w_rec;
  Eigen::VectorXd bias;
};

struct RecurrentGrad {
  RecurrentCellGrad cell;
};

struct BiRecurrentGrad {
  RecurrentCellGrad fwd;
  RecurrentCellGrad bwd;
};

using LayerGrad = std::variant<DenseGrad, RecurrentGrad, BiRecurrentGrad>;

struct Gradients {
  std::vector<LayerGrad> layers;
  DenseGrad head;
};

/// Backpropagates d loss / d mask (one grid per speaker) through the
/// trace, returning parameter gradients.
Gradients backward(const ModelParams& params, const ForwardTrace& trace,
                   const std::vector<Array>& mask_grads);

Gradients zero_gradients(const ModelParams& params);

/// dst += scale * src, matched shapes.
void accumulate(Gradients& dst, const Gradients& src, double scale = 1.0);
void scale_gradients(Gradients& grads, double factor);

/// Plain SGD: params -= lr * grads.
void sgd_step(ModelParams& params, const Gradients& grads, double lr);

/// Versioned binary checkpoint; load(save(p)) reproduces p bit-exactly.
void save(const std::string& path, const ModelParams& params);
ModelParams load(const std::string& path);

namespace detail {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

/// Applies fn to every parameter matrix/vector in a fixed order (layers
/// in sequence, then the head).  Fn must accept both MatrixXd& and
/// VectorXd&.
template <class Params, class Fn>
void visit_parameters(Params& params, Fn&& fn) {
  for (auto& layer : params.layers) {
    std::visit(Overloaded{[&](auto& l) {
                 if constexpr (requires { l.weight; }) {
                   fn(l.weight);
                   fn(l.bias);
                 } else if constexpr (requires { l.cell; }) {
                   fn(l.cell.w_in);
                   fn(l.cell.w_rec);
                   fn(l.cell.bias);
                 } else {
                   fn(l.fwd.w_in);
                   fn(l.fwd.w_rec);
                   fn(l.fwd.bias);
                   fn(l.bwd.w_in);
                   fn(l.bwd.w_rec);
                   fn(l.bwd.bias);
                 }
               }},
               layer);
  }
  fn(params.head.weight);
  fn(params.head.bias);
}

}  // namespace detail

}  // namespace upit::model
