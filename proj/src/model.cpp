#include "upit/model.hpp"

#include "upit/rng.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace upit::model {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void fill_glorot(MatrixXd& m, Index fan_in, Index fan_out, rng::Engine& eng) {
  const double bound =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  double* data = m.data();
  for (Index i = 0; i < m.size(); ++i)
    data[i] = bound * (2.0 * rng::uniform01(eng) - 1.0);
}

struct CellShapes {
  Index hidden;
  Index input;
};

RecurrentCell make_cell(Index input, Index hidden, rng::Engine& eng) {
  RecurrentCell cell;
  cell.w_in.resize(hidden, input);
  fill_glorot(cell.w_in, input, hidden, eng);
  cell.w_rec.resize(hidden, hidden);
  fill_glorot(cell.w_rec, hidden, hidden, eng);
  cell.bias = VectorXd::Zero(hidden);
  return cell;
}

/// Runs one direction of a recurrence over all frames.  forward_time
/// selects whether state flows from earlier frames or later ones.
MatrixXd run_cell(const RecurrentCell& cell, const MatrixXd& x,
                  bool forward_time) {
  const Index frames = x.cols();
  const Index hidden = cell.bias.size();
  // Input contributions for all frames in one product; only the state
  // recursion needs the per-frame loop.
  MatrixXd pre = cell.w_in * x;
  pre.colwise() += cell.bias;
  MatrixXd states(hidden, frames);
  VectorXd h = VectorXd::Zero(hidden);
  if (forward_time) {
    for (Index t = 0; t < frames; ++t) {
      h = (pre.col(t) + cell.w_rec * h).array().tanh();
      states.col(t) = h;
    }
  } else {
    for (Index t = frames - 1; t >= 0; --t) {
      h = (pre.col(t) + cell.w_rec * h).array().tanh();
      states.col(t) = h;
    }
  }
  return states;
}

/// Backpropagation through one direction of a recurrence.  d_states is
/// the direct gradient on the hidden states; the recurrent carry is
/// accumulated opposite to the forward time direction.
RecurrentCellGrad cell_backward(const RecurrentCell& cell, const MatrixXd& x,
                                const MatrixXd& states,
                                const MatrixXd& d_states, bool forward_time,
                                MatrixXd& d_input) {
  const Index frames = x.cols();
  const Index hidden = cell.bias.size();
  MatrixXd dz(hidden, frames);
  VectorXd carry = VectorXd::Zero(hidden);
  if (forward_time) {
    for (Index t = frames - 1; t >= 0; --t) {
      const VectorXd dh = d_states.col(t) + carry;
      dz.col(t) =
          dh.array() * (1.0 - states.col(t).array().square());
      carry.noalias() = cell.w_rec.transpose() * dz.col(t);
    }
  } else {
    for (Index t = 0; t < frames; ++t) {
      const VectorXd dh = d_states.col(t) + carry;
      dz.col(t) =
          dh.array() * (1.0 - states.col(t).array().square());
      carry.noalias() = cell.w_rec.transpose() * dz.col(t);
    }
  }

  RecurrentCellGrad grad;
  grad.w_in.noalias() = dz * x.transpose();
  grad.bias = dz.rowwise().sum();
  grad.w_rec = MatrixXd::Zero(hidden, hidden);
  if (frames > 1) {
    // z_t consumes the state one step earlier in the cell's own time
    // direction: h_{t-1} forward, h_{t+1} backward.
    if (forward_time)
      grad.w_rec.noalias() =
          dz.middleCols(1, frames - 1) *
          states.middleCols(0, frames - 1).transpose();
    else
      grad.w_rec.noalias() =
          dz.middleCols(0, frames - 1) *
          states.middleCols(1, frames - 1).transpose();
  }
  d_input.noalias() += cell.w_in.transpose() * dz;
  return grad;
}

void check_finite(const ModelParams& params) {
  bool ok = true;
  detail::visit_parameters(const_cast<ModelParams&>(params),
                           [&](const auto& m) { ok = ok && m.allFinite(); });
  if (!ok) throw std::invalid_argument("nonfinite parameters");
}

template <class T>
void write_pod(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <class T>
T read_pod(std::ifstream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof value);
  if (!in) throw std::runtime_error("truncated checkpoint");
  return value;
}

void write_matrix(std::ofstream& out, const MatrixXd& m) {
  write_pod(out, static_cast<std::int64_t>(m.rows()));
  write_pod(out, static_cast<std::int64_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double)) * m.size());
}

void write_matrix(std::ofstream& out, const VectorXd& v) {
  write_pod(out, static_cast<std::int64_t>(v.size()));
  write_pod(out, std::int64_t{1});
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(sizeof(double)) * v.size());
}

constexpr char kCheckpointMagic[8] = {'U', 'P', 'I', 'T', 'N', 'E', 'T', '1'};

}  // namespace

Index layer_output_dim(const LayerSpec& spec) {
  return spec.kind == LayerKind::BiRecurrent ? 2 * spec.width : spec.width;
}

ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.input_dim < 1 || spec.num_speakers < 1)
    throw std::invalid_argument("bad model spec");
  if (!(spec.dropout >= 0.0 && spec.dropout < 1.0))
    throw std::invalid_argument("dropout must be in [0, 1)");
  for (const auto& layer : spec.layers)
    if (layer.width < 1) throw std::invalid_argument("bad layer width");

  rng::Engine eng(seed);
  ModelParams params;
  params.spec = spec;

  Index width = spec.input_dim;
  for (const auto& layer : spec.layers) {
    switch (layer.kind) {
      case LayerKind::Dense: {
        DenseLayer dense;
        dense.weight.resize(layer.width, width);
        fill_glorot(dense.weight, width, layer.width, eng);
        dense.bias = VectorXd::Zero(layer.width);
        params.layers.emplace_back(std::move(dense));
        break;
      }
      case LayerKind::Recurrent:
        params.layers.emplace_back(
            RecurrentLayer{make_cell(width, layer.width, eng)});
        break;
      case LayerKind::BiRecurrent: {
        BiRecurrentLayer bi;
        bi.fwd = make_cell(width, layer.width, eng);
        bi.bwd = make_cell(width, layer.width, eng);
        params.layers.emplace_back(std::move(bi));
        break;
      }
    }
    width = layer_output_dim(layer);
  }

  const Index out_dim = spec.input_dim * spec.num_speakers;
  params.head.weight.resize(out_dim, width);
  fill_glorot(params.head.weight, width, out_dim, eng);
  params.head.bias = VectorXd::Zero(out_dim);
  return params;
}

masks::MaskSet forward(const ModelParams& params,
                       const MagSpectrogram& features, bool train_mode,
                       std::uint64_t dropout_seed, ForwardTrace* trace) {
  const ModelSpec& spec = params.spec;
  if (features.values.rows() != spec.input_dim)
    throw std::invalid_argument("feature width mismatch");
  if (features.values.cols() < 1)
    throw std::invalid_argument("empty feature grid");
  check_finite(params);

  const Index frames = features.values.cols();
  const Index f_bins = spec.input_dim;
  const Index s_count = spec.num_speakers;

  ForwardTrace local;
  ForwardTrace& tr = trace != nullptr ? *trace : local;
  tr.layers.clear();
  tr.layers.reserve(params.layers.size());

  MatrixXd x = features.values.matrix();
  if (params.normalizer.enabled) {
    if (params.normalizer.mean.size() != f_bins ||
        params.normalizer.inv_std.size() != f_bins)
      throw std::invalid_argument("normalizer width mismatch");
    x.colwise() -= params.normalizer.mean;
    x.array().colwise() *= params.normalizer.inv_std.array();
  }
  tr.features = x;

  const bool use_dropout = train_mode && spec.dropout > 0.0;
  rng::Engine eng(dropout_seed);
  const double keep_scale = 1.0 / (1.0 - spec.dropout);

  for (const auto& layer : params.layers) {
    LayerTrace lt;
    lt.input = x;
    std::visit(detail::Overloaded{
                   [&](const DenseLayer& dense) {
                     MatrixXd pre = dense.weight * x;
                     pre.colwise() += dense.bias;
                     lt.states = pre.array().tanh();
                     x = lt.states;
                   },
                   [&](const RecurrentLayer& rec) {
                     lt.states = run_cell(rec.cell, x, true);
                     x = lt.states;
                   },
                   [&](const BiRecurrentLayer& bi) {
                     lt.states = run_cell(bi.fwd, x, true);
                     lt.states_bwd = run_cell(bi.bwd, x, false);
                     MatrixXd both(lt.states.rows() + lt.states_bwd.rows(),
                                   frames);
                     both.topRows(lt.states.rows()) = lt.states;
                     both.bottomRows(lt.states_bwd.rows()) = lt.states_bwd;
                     x = std::move(both);
                   }},
               layer);
    if (use_dropout) {
      lt.dropout_mask.resize(x.rows(), x.cols());
      double* mask = lt.dropout_mask.data();
      for (Index i = 0; i < lt.dropout_mask.size(); ++i)
        mask[i] = rng::uniform01(eng) >= spec.dropout ? keep_scale : 0.0;
      x.array() *= lt.dropout_mask.array();
    }
    tr.layers.push_back(std::move(lt));
  }

  tr.head_input = x;
  tr.head_pre.noalias() = params.head.weight * x;
  tr.head_pre.colwise() += params.head.bias;

  masks::MaskSet out;
  out.kind = masks::MaskKind::Estimated;
  out.masks.reserve(static_cast<std::size_t>(s_count));

  switch (spec.activation) {
    case HeadActivation::SoftmaxAcrossSpeakers: {
      Array max_pre =
          tr.head_pre.middleRows(0, f_bins).array();
      for (Index s = 1; s < s_count; ++s)
        max_pre = max_pre.max(tr.head_pre.middleRows(s * f_bins, f_bins).array());
      Array denom = Array::Zero(f_bins, frames);
      std::vector<Array> exps;
      exps.reserve(static_cast<std::size_t>(s_count));
      for (Index s = 0; s < s_count; ++s) {
        exps.push_back(
            (tr.head_pre.middleRows(s * f_bins, f_bins).array() - max_pre)
                .exp());
        denom += exps.back();
      }
      for (Index s = 0; s < s_count; ++s)
        out.masks.push_back(exps[static_cast<std::size_t>(s)] / denom);
      break;
    }
    case HeadActivation::Sigmoid:
      for (Index s = 0; s < s_count; ++s)
        out.masks.push_back(
            1.0 /
            (1.0 + (-tr.head_pre.middleRows(s * f_bins, f_bins).array()).exp()));
      break;
    case HeadActivation::Relu:
      for (Index s = 0; s < s_count; ++s)
        out.masks.push_back(
            tr.head_pre.middleRows(s * f_bins, f_bins).array().max(0.0));
      break;
    case HeadActivation::Tanh:
      for (Index s = 0; s < s_count; ++s)
        out.masks.push_back(
            tr.head_pre.middleRows(s * f_bins, f_bins).array().tanh());
      break;
  }

  tr.masks = out;
  return out;
}

Gradients zero_gradients(const ModelParams& params) {
  Gradients grads;
  grads.layers.reserve(params.layers.size());
  for (const auto& layer : params.layers) {
    std::visit(
        detail::Overloaded{
            [&](const DenseLayer& dense) {
              grads.layers.emplace_back(
                  DenseGrad{MatrixXd::Zero(dense.weight.rows(),
                                           dense.weight.cols()),
                            VectorXd::Zero(dense.bias.size())});
            },
            [&](const RecurrentLayer& rec) {
              grads.layers.emplace_back(RecurrentGrad{RecurrentCellGrad{
                  MatrixXd::Zero(rec.cell.w_in.rows(), rec.cell.w_in.cols()),
                  MatrixXd::Zero(rec.cell.w_rec.rows(), rec.cell.w_rec.cols()),
                  VectorXd::Zero(rec.cell.bias.size())}});
            },
            [&](const BiRecurrentLayer& bi) {
              auto zero_cell = [](const RecurrentCell& cell) {
                return RecurrentCellGrad{
                    MatrixXd::Zero(cell.w_in.rows(), cell.w_in.cols()),
                    MatrixXd::Zero(cell.w_rec.rows(), cell.w_rec.cols()),
                    VectorXd::Zero(cell.bias.size())};
              };
              grads.layers.emplace_back(
                  BiRecurrentGrad{zero_cell(bi.fwd), zero_cell(bi.bwd)});
            }},
        layer);
  }
  grads.head.weight =
      MatrixXd::Zero(params.head.weight.rows(), params.head.weight.cols());
  grads.head.bias = VectorXd::Zero(params.head.bias.size());
  return grads;
}

Gradients backward(const ModelParams& params, const ForwardTrace& trace,
                   const std::vector<Array>& mask_grads) {
  const ModelSpec& spec = params.spec;
  const Index f_bins = spec.input_dim;
  const Index s_count = spec.num_speakers;
  if (static_cast<Index>(mask_grads.size()) != s_count)
    throw std::invalid_argument("speaker count mismatch");
  if (trace.masks.num_speakers() != s_count ||
      static_cast<Index>(trace.layers.size()) !=
          static_cast<Index>(params.layers.size()))
    throw std::invalid_argument("trace does not match parameters");
  const Index frames = trace.head_pre.cols();
  for (const auto& g : mask_grads)
    if (g.rows() != f_bins || g.cols() != frames)
      throw std::invalid_argument("gradient shape mismatch");

  Gradients grads = zero_gradients(params);

  // Head activation backward: d loss / d pre-activation.
  MatrixXd d_pre(f_bins * s_count, frames);
  switch (spec.activation) {
    case HeadActivation::SoftmaxAcrossSpeakers: {
      Array weighted = Array::Zero(f_bins, frames);
      for (Index s = 0; s < s_count; ++s)
        weighted += mask_grads[static_cast<std::size_t>(s)] *
                    trace.masks.masks[static_cast<std::size_t>(s)];
      for (Index s = 0; s < s_count; ++s) {
        const auto& m = trace.masks.masks[static_cast<std::size_t>(s)];
        d_pre.middleRows(s * f_bins, f_bins) =
            (m * (mask_grads[static_cast<std::size_t>(s)] - weighted)).matrix();
      }
      break;
    }
    case HeadActivation::Sigmoid:
      for (Index s = 0; s < s_count; ++s) {
        const auto& m = trace.masks.masks[static_cast<std::size_t>(s)];
        d_pre.middleRows(s * f_bins, f_bins) =
            (mask_grads[static_cast<std::size_t>(s)] * m * (1.0 - m)).matrix();
      }
      break;
    case HeadActivation::Relu:
      for (Index s = 0; s < s_count; ++s) {
        const auto positive =
            trace.head_pre.middleRows(s * f_bins, f_bins).array() > 0.0;
        d_pre.middleRows(s * f_bins, f_bins) =
            positive
                .select(mask_grads[static_cast<std::size_t>(s)], 0.0)
                .matrix();
      }
      break;
    case HeadActivation::Tanh:
      for (Index s = 0; s < s_count; ++s) {
        const auto& m = trace.masks.masks[static_cast<std::size_t>(s)];
        d_pre.middleRows(s * f_bins, f_bins) =
            (mask_grads[static_cast<std::size_t>(s)] * (1.0 - m.square()))
                .matrix();
      }
      break;
  }

  grads.head.weight.noalias() = d_pre * trace.head_input.transpose();
  grads.head.bias = d_pre.rowwise().sum();
  MatrixXd d_out = params.head.weight.transpose() * d_pre;

  for (auto l = static_cast<std::ptrdiff_t>(params.layers.size()) - 1; l >= 0;
       --l) {
    const auto idx = static_cast<std::size_t>(l);
    const LayerTrace& lt = trace.layers[idx];
    if (lt.dropout_mask.size() > 0) d_out.array() *= lt.dropout_mask.array();

    MatrixXd d_in = MatrixXd::Zero(lt.input.rows(), frames);
    std::visit(
        detail::Overloaded{
            [&](const DenseLayer& dense) {
              const MatrixXd dz =
                  (d_out.array() * (1.0 - lt.states.array().square())).matrix();
              auto& g = std::get<DenseGrad>(grads.layers[idx]);
              g.weight.noalias() = dz * lt.input.transpose();
              g.bias = dz.rowwise().sum();
              d_in.noalias() = dense.weight.transpose() * dz;
            },
            [&](const RecurrentLayer& rec) {
              auto& g = std::get<RecurrentGrad>(grads.layers[idx]);
              g.cell = cell_backward(rec.cell, lt.input, lt.states, d_out,
                                     true, d_in);
            },
            [&](const BiRecurrentLayer& bi) {
              auto& g = std::get<BiRecurrentGrad>(grads.layers[idx]);
              const Index hidden = bi.fwd.bias.size();
              g.fwd = cell_backward(bi.fwd, lt.input, lt.states,
                                    d_out.topRows(hidden), true, d_in);
              g.bwd = cell_backward(bi.bwd, lt.input, lt.states_bwd,
                                    d_out.bottomRows(hidden), false, d_in);
            }},
        params.layers[idx]);
    d_out = std::move(d_in);
  }
  return grads;
}

namespace {

template <class Fn>
void zip_gradients(Gradients& dst, const Gradients& src, Fn&& fn) {
  if (dst.layers.size() != src.layers.size())
    throw std::invalid_argument("gradient shape mismatch");
  for (std::size_t i = 0; i < dst.layers.size(); ++i) {
    if (auto* d = std::get_if<DenseGrad>(&dst.layers[i])) {
      const auto& s = std::get<DenseGrad>(src.layers[i]);
      fn(d->weight, s.weight);
      fn(d->bias, s.bias);
    } else if (auto* r = std::get_if<RecurrentGrad>(&dst.layers[i])) {
      const auto& s = std::get<RecurrentGrad>(src.layers[i]);
      fn(r->cell.w_in, s.cell.w_in);
      fn(r->cell.w_rec, s.cell.w_rec);
      fn(r->cell.bias, s.cell.bias);
    } else {
      auto& b = std::get<BiRecurrentGrad>(dst.layers[i]);
      const auto& s = std::get<BiRecurrentGrad>(src.layers[i]);
      fn(b.fwd.w_in, s.fwd.w_in);
      fn(b.fwd.w_rec, s.fwd.w_rec);
      fn(b.fwd.bias, s.fwd.bias);
      fn(b.bwd.w_in, s.bwd.w_in);
      fn(b.bwd.w_rec, s.bwd.w_rec);
      fn(b.bwd.bias, s.bwd.bias);
    }
  }
  fn(dst.head.weight, src.head.weight);
  fn(dst.head.bias, src.head.bias);
}

template <class Fn>
void zip_params_gradients(ModelParams& params, const Gradients& grads,
                          Fn&& fn) {
  if (params.layers.size() != grads.layers.size())
    throw std::invalid_argument("gradient shape mismatch");
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    if (auto* d = std::get_if<DenseLayer>(&params.layers[i])) {
      const auto& g = std::get<DenseGrad>(grads.layers[i]);
      fn(d->weight, g.weight);
      fn(d->bias, g.bias);
    } else if (auto* r = std::get_if<RecurrentLayer>(&params.layers[i])) {
      const auto& g = std::get<RecurrentGrad>(grads.layers[i]);
      fn(r->cell.w_in, g.cell.w_in);
      fn(r->cell.w_rec, g.cell.w_rec);
      fn(r->cell.bias, g.cell.bias);
    } else {
      auto& b = std::get<BiRecurrentLayer>(params.layers[i]);
      const auto& g = std::get<BiRecurrentGrad>(grads.layers[i]);
      fn(b.fwd.w_in, g.fwd.w_in);
      fn(b.fwd.w_rec, g.fwd.w_rec);
      fn(b.fwd.bias, g.fwd.bias);
      fn(b.bwd.w_in, g.bwd.w_in);
      fn(b.bwd.w_rec, g.bwd.w_rec);
      fn(b.bwd.bias, g.bwd.bias);
    }
  }
  fn(params.head.weight, grads.head.weight);
  fn(params.head.bias, grads.head.bias);
}

}  // namespace

void accumulate(Gradients& dst, const Gradients& src, double scale) {
  zip_gradients(dst, src, [scale](auto& d, const auto& s) {
    if (d.rows() != s.rows() || d.cols() != s.cols())
      throw std::invalid_argument("gradient shape mismatch");
    d += scale * s;
  });
}

void scale_gradients(Gradients& grads, double factor) {
  detail::visit_parameters(grads, [factor](auto& m) { m *= factor; });
}

void sgd_step(ModelParams& params, const Gradients& grads, double lr) {
  zip_params_gradients(params, grads, [lr](auto& p, const auto& g) {
    if (p.rows() != g.rows() || p.cols() != g.cols())
      throw std::invalid_argument("gradient shape mismatch");
    p -= lr * g;
  });
}

void save(const std::string& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  write_pod(out, std::uint32_t{1});
  write_pod(out, static_cast<std::int64_t>(params.spec.input_dim));
  write_pod(out, static_cast<std::int64_t>(params.spec.num_speakers));
  write_pod(out, static_cast<std::uint32_t>(params.spec.activation));
  write_pod(out, params.spec.dropout);
  write_pod(out, static_cast<std::uint32_t>(params.spec.layers.size()));
  for (const auto& layer : params.spec.layers) {
    write_pod(out, static_cast<std::uint32_t>(layer.kind));
    write_pod(out, static_cast<std::int64_t>(layer.width));
  }
  write_pod(out, static_cast<std::uint8_t>(params.normalizer.enabled ? 1 : 0));
  if (params.normalizer.enabled) {
    write_matrix(out, params.normalizer.mean);
    write_matrix(out, params.normalizer.inv_std);
  }
  detail::visit_parameters(const_cast<ModelParams&>(params),
                           [&](const auto& m) { write_matrix(out, m); });
  if (!out) throw std::runtime_error("short write to checkpoint: " + path);
}

namespace {

void read_matrix(std::ifstream& in, MatrixXd& m) {
  const auto rows = read_pod<std::int64_t>(in);
  const auto cols = read_pod<std::int64_t>(in);
  if (rows != m.rows() || cols != m.cols())
    throw std::runtime_error("corrupt checkpoint: shape mismatch");
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double)) * m.size());
  if (!in) throw std::runtime_error("truncated checkpoint");
}

void read_matrix(std::ifstream& in, VectorXd& v) {
  const auto rows = read_pod<std::int64_t>(in);
  const auto cols = read_pod<std::int64_t>(in);
  if (rows != v.size() || cols != 1)
    throw std::runtime_error("corrupt checkpoint: shape mismatch");
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(sizeof(double)) * v.size());
  if (!in) throw std::runtime_error("truncated checkpoint");
}

}  // namespace

ModelParams load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  const auto version = read_pod<std::uint32_t>(in);
  if (version != 1)
    throw std::runtime_error("unsupported checkpoint version: " + path);

  ModelSpec spec;
  spec.input_dim = read_pod<std::int64_t>(in);
  spec.num_speakers = read_pod<std::int64_t>(in);
  spec.activation = static_cast<HeadActivation>(read_pod<std::uint32_t>(in));
  spec.dropout = read_pod<double>(in);
  const auto n_layers = read_pod<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    LayerSpec layer;
    layer.kind = static_cast<LayerKind>(read_pod<std::uint32_t>(in));
    layer.width = read_pod<std::int64_t>(in);
    spec.layers.push_back(layer);
  }

  // Allocate the parameter structure from the spec, then overwrite every
  // matrix with the stored payload.
  ModelParams params = init_params(spec, 0);
  const auto norm_enabled = read_pod<std::uint8_t>(in);
  params.normalizer.enabled = norm_enabled != 0;
  if (params.normalizer.enabled) {
    params.normalizer.mean.resize(spec.input_dim);
    params.normalizer.inv_std.resize(spec.input_dim);
    read_matrix(in, params.normalizer.mean);
    read_matrix(in, params.normalizer.inv_std);
  }
  detail::visit_parameters(params, [&](auto& m) { read_matrix(in, m); });
  return params;
}

}  // namespace upit::model
