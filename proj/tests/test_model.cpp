#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "upit/model.hpp"
#include "upit/rng.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

using namespace upit;

namespace {

MagSpectrogram random_features(Index f, Index t, std::uint64_t seed) {
  rng::Engine eng(seed);
  rng::Gaussian gauss;
  MagSpectrogram out;
  out.values.resize(f, t);
  for (Index j = 0; j < t; ++j)
    for (Index i = 0; i < f; ++i) out.values(i, j) = std::abs(gauss(eng));
  return out;
}

/// Every parameter scalar in the canonical visiting order.
template <class P>
std::vector<double> collect(P& params) {
  std::vector<double> out;
  model::detail::visit_parameters(params, [&](auto& m) {
    out.insert(out.end(), m.data(), m.data() + m.size());
  });
  return out;
}

/// Mutable pointers to the same scalars, for finite differences.
std::vector<double*> parameter_slots(model::ModelParams& params) {
  std::vector<double*> out;
  model::detail::visit_parameters(params, [&](auto& m) {
    for (Index i = 0; i < m.size(); ++i) out.push_back(m.data() + i);
  });
  return out;
}

model::ModelSpec mixed_spec() {
  model::ModelSpec spec;
  spec.input_dim = 5;
  spec.num_speakers = 2;
  spec.layers = {{model::LayerKind::Dense, 4},
                 {model::LayerKind::Recurrent, 3},
                 {model::LayerKind::BiRecurrent, 3}};
  return spec;
}

double half_squared_loss(const masks::MaskSet& est,
                         const std::vector<Array>& targets) {
  double loss = 0.0;
  for (std::size_t s = 0; s < est.masks.size(); ++s)
    loss += 0.5 * (est.masks[s] - targets[s]).square().sum();
  return loss;
}

}  // namespace

TEST_CASE("softmax head masks sum to one at every cell") {
  model::ModelSpec spec = mixed_spec();
  spec.num_speakers = 3;
  const auto params = model::init_params(spec, 11);
  const auto features = random_features(5, 9, 12);
  const auto est = model::forward(params, features, false);
  REQUIRE(est.num_speakers() == 3);

  Array sum = Array::Zero(5, 9);
  for (const auto& m : est.masks) {
    CHECK(m.minCoeff() >= 0.0);
    CHECK(m.maxCoeff() <= 1.0);
    sum += m;
  }
  CHECK((sum - 1.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("zeroed parameters pin each head at its midpoint") {
  for (const auto [activation, want] :
       {std::pair{model::HeadActivation::Sigmoid, 0.5},
        std::pair{model::HeadActivation::Relu, 0.0},
        std::pair{model::HeadActivation::Tanh, 0.0},
        std::pair{model::HeadActivation::SoftmaxAcrossSpeakers, 0.5}}) {
    model::ModelSpec spec;
    spec.input_dim = 4;
    spec.num_speakers = 2;
    spec.layers = {{model::LayerKind::Dense, 3}};
    spec.activation = activation;
    auto params = model::init_params(spec, 1);
    model::detail::visit_parameters(params, [](auto& m) { m.setZero(); });

    const auto est = model::forward(params, random_features(4, 5, 2), false);
    for (const auto& m : est.masks)
      CHECK((m - want).abs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("recurrence matches a step-by-step reference") {
  model::ModelSpec spec;
  spec.input_dim = 3;
  spec.num_speakers = 2;
  spec.layers = {{model::LayerKind::Recurrent, 2}};
  spec.activation = model::HeadActivation::Sigmoid;
  const auto params = model::init_params(spec, 21);
  const auto features = random_features(3, 4, 22);

  const auto& cell = std::get<model::RecurrentLayer>(params.layers[0]).cell;
  Eigen::MatrixXd states(2, 4);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(2);
  for (Index t = 0; t < 4; ++t) {
    h = (cell.w_in * features.values.matrix().col(t) + cell.w_rec * h +
         cell.bias)
            .array()
            .tanh();
    states.col(t) = h;
  }
  Eigen::MatrixXd pre = params.head.weight * states;
  pre.colwise() += params.head.bias;

  const auto est = model::forward(params, features, false);
  for (Index s = 0; s < 2; ++s) {
    const Array want =
        1.0 / (1.0 + (-pre.middleRows(s * 3, 3).array()).exp());
    CHECK((est.masks[static_cast<std::size_t>(s)] - want).abs().maxCoeff() <
          1e-14);
  }
}

TEST_CASE("backward-direction states flow from later frames") {
  model::ModelSpec spec;
  spec.input_dim = 3;
  spec.num_speakers = 1;
  spec.layers = {{model::LayerKind::BiRecurrent, 2}};
  spec.activation = model::HeadActivation::Tanh;
  const auto params = model::init_params(spec, 31);
  const auto features = random_features(3, 5, 32);

  model::ForwardTrace trace;
  model::forward(params, features, false, 0, &trace);
  const auto& bi = std::get<model::BiRecurrentLayer>(params.layers[0]);

  Eigen::VectorXd h = Eigen::VectorXd::Zero(2);
  for (Index t = 4; t >= 0; --t) {
    h = (bi.bwd.w_in * features.values.matrix().col(t) + bi.bwd.w_rec * h +
         bi.bwd.bias)
            .array()
            .tanh();
    CHECK((trace.layers[0].states_bwd.col(t) - h).cwiseAbs().maxCoeff() <
          1e-14);
  }

  // The last frame's backward state has no recurrence contribution, so
  // changing earlier frames cannot move it.
  MagSpectrogram bumped = features;
  bumped.values.col(0) += 1.0;
  model::ForwardTrace trace2;
  model::forward(params, bumped, false, 0, &trace2);
  CHECK((trace.layers[0].states_bwd.col(4) - trace2.layers[0].states_bwd.col(4))
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK((trace.layers[0].states.col(4) - trace2.layers[0].states.col(4))
            .cwiseAbs()
            .maxCoeff() > 0.0);  // forward state does depend on frame 0
}

TEST_CASE("a silenced backward cell reduces to the forward recurrence") {
  model::ModelSpec bi_spec;
  bi_spec.input_dim = 4;
  bi_spec.num_speakers = 2;
  bi_spec.layers = {{model::LayerKind::BiRecurrent, 3}};
  auto bi_params = model::init_params(bi_spec, 41);
  auto& bi = std::get<model::BiRecurrentLayer>(bi_params.layers[0]);
  bi.bwd.w_in.setZero();
  bi.bwd.w_rec.setZero();
  bi.bwd.bias.setZero();

  model::ModelSpec rec_spec = bi_spec;
  rec_spec.layers = {{model::LayerKind::Recurrent, 3}};
  auto rec_params = model::init_params(rec_spec, 42);
  std::get<model::RecurrentLayer>(rec_params.layers[0]).cell = bi.fwd;
  rec_params.head.weight = bi_params.head.weight.leftCols(3);
  rec_params.head.bias = bi_params.head.bias;

  const auto features = random_features(4, 6, 43);
  const auto from_bi = model::forward(bi_params, features, false);
  const auto from_rec = model::forward(rec_params, features, false);
  for (std::size_t s = 0; s < 2; ++s)
    CHECK((from_bi.masks[s] - from_rec.masks[s]).abs().maxCoeff() < 1e-14);
}

TEST_CASE("initialization is deterministic and Glorot-bounded") {
  model::ModelSpec spec;
  spec.input_dim = 100;
  spec.num_speakers = 2;
  spec.layers = {{model::LayerKind::Dense, 100}};

  auto a = model::init_params(spec, 7);
  auto b = model::init_params(spec, 7);
  CHECK(collect(a) == collect(b));
  auto c = model::init_params(spec, 8);
  CHECK(collect(a) != collect(c));

  const auto& dense = std::get<model::DenseLayer>(a.layers[0]);
  const double bound = std::sqrt(6.0 / 200.0);  // fan-in + fan-out = 200
  CHECK(dense.weight.cwiseAbs().maxCoeff() <= bound);
  CHECK(dense.weight.cwiseAbs().maxCoeff() > 0.9 * bound);  // fills the range
  CHECK(std::abs(dense.weight.mean()) < 0.01);
  CHECK(dense.bias.cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.head.bias.cwiseAbs().maxCoeff() == 0.0);

  const double head_bound = std::sqrt(6.0 / (100.0 + 200.0));
  CHECK(a.head.weight.cwiseAbs().maxCoeff() <= head_bound);
}

TEST_CASE("analytic gradients match finite differences everywhere") {
  const model::ModelSpec spec = mixed_spec();
  auto params = model::init_params(spec, 51);
  const auto features = random_features(5, 6, 52);

  std::vector<Array> targets;
  rng::Engine eng(53);
  for (Index s = 0; s < 2; ++s) {
    Array t(5, 6);
    for (Index j = 0; j < 6; ++j)
      for (Index i = 0; i < 5; ++i) t(i, j) = rng::uniform01(eng);
    targets.push_back(std::move(t));
  }

  model::ForwardTrace trace;
  const auto est = model::forward(params, features, false, 0, &trace);
  std::vector<Array> mask_grads;
  for (std::size_t s = 0; s < 2; ++s)
    mask_grads.push_back(est.masks[s] - targets[s]);
  auto grads = model::backward(params, trace, mask_grads);
  const auto analytic = collect(grads);

  const auto slots = parameter_slots(params);
  REQUIRE(analytic.size() == slots.size());
  const double h = 1e-5;
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const double saved = *slots[k];
    *slots[k] = saved + h;
    const double up =
        half_squared_loss(model::forward(params, features, false), targets);
    *slots[k] = saved - h;
    const double down =
        half_squared_loss(model::forward(params, features, false), targets);
    *slots[k] = saved;
    const double fd = (up - down) / (2.0 * h);
    CHECK(analytic[k] == doctest::Approx(fd).epsilon(5e-6));
  }
}

TEST_CASE("gradients are linear in the upstream signal") {
  const model::ModelSpec spec = mixed_spec();
  auto params = model::init_params(spec, 61);
  const auto features = random_features(5, 7, 62);

  model::ForwardTrace trace;
  const auto est = model::forward(params, features, false, 0, &trace);

  std::vector<Array> zero(2, Array::Zero(5, 7));
  auto zero_grads = model::backward(params, trace, zero);
  for (const double g : collect(zero_grads)) CHECK(g == 0.0);

  std::vector<Array> ones(2, Array::Ones(5, 7));
  std::vector<Array> twos(2, Array::Constant(5, 7, 2.0));
  auto g1 = model::backward(params, trace, ones);
  auto g2 = model::backward(params, trace, twos);
  const auto v1 = collect(g1);
  const auto v2 = collect(g2);
  for (std::size_t k = 0; k < v1.size(); ++k) CHECK(v2[k] == 2.0 * v1[k]);
}

TEST_CASE("dropout draws are deterministic and inverted") {
  model::ModelSpec spec;
  spec.input_dim = 8;
  spec.num_speakers = 2;
  spec.layers = {{model::LayerKind::Dense, 64}};
  spec.dropout = 0.5;
  const auto params = model::init_params(spec, 71);
  const auto features = random_features(8, 50, 72);

  model::ForwardTrace trace;
  const auto a = model::forward(params, features, true, 900, &trace);
  const auto b = model::forward(params, features, true, 900);
  for (std::size_t s = 0; s < 2; ++s)
    CHECK((a.masks[s] == b.masks[s]).all());

  const auto c = model::forward(params, features, true, 901);
  CHECK((a.masks[0] != c.masks[0]).any());

  // Kept units are scaled by 1 / (1 - p); the keep rate tracks p.
  const auto& mask = trace.layers[0].dropout_mask;
  REQUIRE(mask.size() == 64 * 50);
  Index kept = 0;
  for (Index i = 0; i < mask.size(); ++i) {
    const double v = mask.data()[i];
    CHECK((v == 0.0 || v == 2.0));
    kept += v != 0.0;
  }
  const double rate = static_cast<double>(kept) / 3200.0;
  CHECK(rate > 0.45);
  CHECK(rate < 0.55);

  // Evaluation mode needs no rescaling and draws nothing.
  model::ForwardTrace eval_trace;
  const auto d = model::forward(params, features, false, 900, &eval_trace);
  CHECK(eval_trace.layers[0].dropout_mask.size() == 0);
  CHECK((d.masks[0] != a.masks[0]).any());
}

TEST_CASE("feature normalization standardizes the network input") {
  model::ModelSpec spec;
  spec.input_dim = 3;
  spec.num_speakers = 2;
  spec.layers = {{model::LayerKind::Dense, 4}};
  auto params = model::init_params(spec, 81);
  params.normalizer.enabled = true;
  params.normalizer.mean = Eigen::Vector3d(1.0, 2.0, 3.0);
  params.normalizer.inv_std = Eigen::Vector3d(2.0, 0.5, 1.0);

  MagSpectrogram features;
  features.values = Array::Zero(3, 2);
  features.values.col(0) << 1.0, 2.0, 3.0;
  features.values.col(1) << 2.0, 4.0, 3.0;

  model::ForwardTrace trace;
  model::forward(params, features, false, 0, &trace);
  CHECK(trace.features.col(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(trace.features(0, 1) == doctest::Approx(2.0));
  CHECK(trace.features(1, 1) == doctest::Approx(1.0));
  CHECK(trace.features(2, 1) == doctest::Approx(0.0));

  params.normalizer.mean.resize(2);
  CHECK_THROWS_AS(model::forward(params, features, false),
                  std::invalid_argument);
}

TEST_CASE("gradient step and accumulation arithmetic") {
  model::ModelSpec spec;
  spec.input_dim = 2;
  spec.num_speakers = 2;
  spec.layers = {{model::LayerKind::Recurrent, 2}};
  auto params = model::init_params(spec, 91);
  const auto before = collect(params);

  auto grads = model::zero_gradients(params);
  for (const double g : collect(grads)) CHECK(g == 0.0);

  model::detail::visit_parameters(grads, [](auto& m) { m.setOnes(); });
  auto doubled = model::zero_gradients(params);
  model::accumulate(doubled, grads, 3.0);
  model::accumulate(doubled, grads, -1.0);
  for (const double g : collect(doubled)) CHECK(g == 2.0);
  model::scale_gradients(doubled, 0.25);
  for (const double g : collect(doubled)) CHECK(g == 0.5);

  model::sgd_step(params, doubled, 0.1);
  const auto after = collect(params);
  for (std::size_t k = 0; k < after.size(); ++k)
    CHECK(after[k] == doctest::Approx(before[k] - 0.05));
}

TEST_CASE("checkpoints restore every bit") {
  model::ModelSpec spec = mixed_spec();
  spec.activation = model::HeadActivation::Relu;
  spec.dropout = 0.25;
  auto params = model::init_params(spec, 101);
  params.normalizer.enabled = true;
  params.normalizer.mean = Eigen::VectorXd::LinSpaced(5, -1.0, 1.0);
  params.normalizer.inv_std = Eigen::VectorXd::LinSpaced(5, 0.5, 2.5);

  const auto path =
      (std::filesystem::temp_directory_path() / "upit_model_test.net")
          .string();
  model::save(path, params);
  auto loaded = model::load(path);

  CHECK(loaded.spec.input_dim == 5);
  CHECK(loaded.spec.num_speakers == 2);
  CHECK(loaded.spec.activation == model::HeadActivation::Relu);
  CHECK(loaded.spec.dropout == 0.25);
  REQUIRE(loaded.spec.layers.size() == 3);
  CHECK(loaded.spec.layers[1].kind == model::LayerKind::Recurrent);
  CHECK(loaded.spec.layers[2].width == 3);
  CHECK(loaded.normalizer.enabled);
  CHECK((loaded.normalizer.mean == params.normalizer.mean));
  CHECK((loaded.normalizer.inv_std == params.normalizer.inv_std));
  CHECK(collect(loaded) == collect(params));

  // The round trip preserves behaviour, not just bytes.
  const auto features = random_features(5, 4, 102);
  const auto est_a = model::forward(params, features, false);
  const auto est_b = model::forward(loaded, features, false);
  for (std::size_t s = 0; s < 2; ++s)
    CHECK((est_a.masks[s] == est_b.masks[s]).all());

  params.normalizer.enabled = false;
  model::save(path, params);
  CHECK(!model::load(path).normalizer.enabled);

  std::ofstream(path, std::ios::binary) << "not a checkpoint";
  CHECK_THROWS_AS(model::load(path), std::runtime_error);
}

TEST_CASE("malformed inputs are rejected") {
  const model::ModelSpec spec = mixed_spec();
  auto params = model::init_params(spec, 111);

  CHECK_THROWS_AS(model::forward(params, random_features(6, 4, 1), false),
                  std::invalid_argument);
  MagSpectrogram empty;
  empty.values.resize(5, 0);
  CHECK_THROWS_AS(model::forward(params, empty, false), std::invalid_argument);

  model::ForwardTrace trace;
  model::forward(params, random_features(5, 4, 2), false, 0, &trace);
  CHECK_THROWS_AS(model::backward(params, trace, {Array::Zero(5, 4)}),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      model::backward(params, trace, {Array::Zero(5, 4), Array::Zero(5, 3)}),
      std::invalid_argument);

  std::get<model::DenseLayer>(params.layers[0]).weight(0, 0) =
      std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(model::forward(params, random_features(5, 4, 3), false),
                  std::invalid_argument);

  model::ModelSpec bad = spec;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(model::init_params(bad, 0), std::invalid_argument);
  bad = spec;
  bad.layers[0].width = 0;
  CHECK_THROWS_AS(model::init_params(bad, 0), std::invalid_argument);
}
