#include "duc/error.hpp"
#include "duc/rng.hpp"
#include "duc/sae.hpp"
#include "duc/steering.hpp"

#include <doctest.h>

#include <cstring>

using namespace duc;

namespace {

SaeParams<float> random_sae(int F, int D, int layer, std::uint64_t seed) {
  Rng rng(seed);
  SaeParams<float> s;
  s.layer = layer;
  s.w_enc.resize(F, D);
  s.w_dec.resize(F, D);
  s.b_enc.resize(1, F);
  s.b_dec.resize(1, D);
  for (auto* m : {&s.w_enc, &s.w_dec, &s.b_enc, &s.b_dec})
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = static_cast<float>(rng.normal());
  s.w_dec.rowwise().normalize();
  return s;
}

RowMatrixf random_rows(int n, int D, std::uint64_t seed) {
  Rng rng(seed);
  RowMatrixf x(n, D);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(3.0 * rng.normal());
  return x;
}

bool bit_equal(const RowMatrixf& a, const RowMatrixf& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

// Feature 0 reads and writes along the first axis only.
SaeParams<float> axis_sae(int F, int D) {
  auto s = random_sae(F, D, 0, 17);
  s.w_enc.row(0).setZero();
  s.w_dec.row(0).setZero();
  s.w_enc(0, 0) = 1.0f;
  s.w_dec(0, 0) = 1.0f;
  s.b_enc(0, 0) = 0.0f;
  return s;
}

}  // namespace

TEST_CASE("activation adds exactly lambda times the decoder row") {
  const auto sae = random_sae(32, 8, 2, 1);
  const auto x = random_rows(10, 8, 2);
  for (double lambda : {0.5, 2.0, 7.25, 1e-3})
    for (int idx : {0, 13, 31}) {
      const auto y = apply_steering(sae, {2, idx, lambda, SteeringMode::Activate, SteeringPositions::All}, x);
      // independent: materialize the delta, then add it row by row
      RowMatrixf expect = x;
      RowVector<float> delta(8);
      for (int j = 0; j < 8; ++j) delta(j) = static_cast<float>(lambda) * sae.w_dec(idx, j);
      for (Eigen::Index r = 0; r < x.rows(); ++r)
        for (int j = 0; j < 8; ++j) expect(r, j) = x(r, j) + delta(j);
      CHECK(bit_equal(y, expect));
      // the residual difference is lambda * W_dec up to one rounding of the sum
      for (Eigen::Index r = 0; r < x.rows(); ++r)
        for (int j = 0; j < 8; ++j)
          CHECK(static_cast<double>(y(r, j) - x(r, j)) == doctest::Approx(lambda * sae.w_dec(idx, j)).epsilon(1e-5).scale(4.0));
    }
}

TEST_CASE("lambda zero is a bit-exact no-op") {
  const auto sae = random_sae(16, 8, 0, 3);
  const auto x = random_rows(6, 8, 4);
  CHECK(bit_equal(apply_steering(sae, {0, 5, 0.0, SteeringMode::Activate, SteeringPositions::All}, x), x));
}

TEST_CASE("deactivation lowers an aligned feature to the floor and leaves the rest") {
  const auto sae = axis_sae(8, 6);
  RowMatrixf x = random_rows(5, 6, 5);
  for (Eigen::Index r = 0; r < x.rows(); ++r) x(r, 0) = 0.5f + static_cast<float>(r);
  const auto y = apply_steering(sae, {0, 0, 0, SteeringMode::Deactivate, SteeringPositions::All}, x);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto f = feature_activation<float>(sae, 0, y.row(r));
    CHECK(f(0) == doctest::Approx(kDeactivationFloor).epsilon(1e-5));
    for (int j = 1; j < 6; ++j) CHECK(y(r, j) == x(r, j));
  }
}

TEST_CASE("deactivation leaves rows at or below the floor untouched") {
  const auto sae = axis_sae(8, 6);
  RowMatrixf x = random_rows(4, 6, 6);
  x(0, 0) = -2.0f;
  x(1, 0) = 0.0f;
  x(2, 0) = 0.01f;
  x(3, 0) = 0.005f;
  CHECK(bit_equal(apply_steering(sae, {0, 0, 0, SteeringMode::Deactivate, SteeringPositions::All}, x), x));
}

TEST_CASE("several specs read the unedited row and sum their edits") {
  auto sae = random_sae(6, 4, 1, 7);
  sae.b_enc.setConstant(50.0f);  // every feature fires
  RowMatrixf x = random_rows(3, 4, 8);
  std::vector<SteeringSpec> specs = {{1, 0, 0, SteeringMode::Deactivate, SteeringPositions::All},
                                     {1, 3, 0, SteeringMode::Deactivate, SteeringPositions::All}};
  RowMatrixf y = x;
  apply_steering(sae, specs, y);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto f0 = feature_activation<float>(sae, 0, x.row(r))(0);
    const auto f3 = feature_activation<float>(sae, 3, x.row(r))(0);
    REQUIRE(f0 > 0.01f);
    REQUIRE(f3 > 0.01f);
    const RowVector<float> expect = x.row(r) + (0.01f - f0) * sae.w_dec.row(0) + (0.01f - f3) * sae.w_dec.row(3);
    for (int j = 0; j < 4; ++j) CHECK(y(r, j) == doctest::Approx(expect(j)).epsilon(1e-5));
  }
}

TEST_CASE("generated-only steering skips prompt positions") {
  const auto sae = random_sae(8, 4, 0, 9);
  const auto x = random_rows(6, 4, 10);
  RowMatrixf y = x;
  apply_steering(sae, {{0, 2, 1.5, SteeringMode::Activate, SteeringPositions::GeneratedOnly}}, y, 2, 4);
  // rows sit at positions 2..7; the prompt covers 0..3
  for (Eigen::Index r = 0; r < 2; ++r) CHECK(bit_equal(y.row(r), x.row(r)));
  for (Eigen::Index r = 2; r < 6; ++r) CHECK(!bit_equal(y.row(r), x.row(r)));
}

TEST_CASE("steering hooks edit the hooked layer only") {
  ModelConfig c;
  c.n_layers = 3;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.vocab_size = 12;
  c.max_seq = 16;
  c.rng_seed = 11;
  const auto model = init_params<float>(c);
  const auto sae = random_sae(16, 8, 1, 12);
  const TokenSeq toks = {2, 5, 7, 3, 9};
  const auto base = forward(model, toks);
  const auto hooks = steering_hooks(sae, {{1, 4, 3.0, SteeringMode::Activate, SteeringPositions::All}});
  REQUIRE(hooks.size() == 1);
  const auto steered = forward(model, toks, hooks);
  CHECK(bit_equal(steered.trace.residual[0], base.trace.residual[0]));
  const RowMatrixf expect = apply_steering(sae, {1, 4, 3.0, SteeringMode::Activate, SteeringPositions::All},
                                           base.trace.residual[1]);
  CHECK(bit_equal(steered.trace.residual[1], expect));
  CHECK(!bit_equal(steered.trace.residual[2], base.trace.residual[2]));
}

TEST_CASE("steering argument errors") {
  const auto sae = random_sae(8, 4, 2, 13);
  const auto x = random_rows(2, 4, 14);
  CHECK_THROWS_AS(apply_steering(sae, {2, 8, 1.0, SteeringMode::Activate, SteeringPositions::All}, x), ParameterError);
  CHECK_THROWS_AS(apply_steering(sae, {2, -1, 1.0, SteeringMode::Activate, SteeringPositions::All}, x), ParameterError);
  CHECK_THROWS_AS(apply_steering(sae, {0, 1, 1.0, SteeringMode::Activate, SteeringPositions::All}, x), ParameterError);
  CHECK_THROWS_AS(apply_steering(sae, {2, 1, -1.0, SteeringMode::Activate, SteeringPositions::All}, x), ParameterError);
  CHECK_THROWS_AS(apply_steering(sae, {2, 1, 1.0, SteeringMode::Activate, SteeringPositions::All}, random_rows(2, 5, 1)),
                  DimensionError);
  CHECK(steering_positions_from_string("generated") == SteeringPositions::GeneratedOnly);
  CHECK_THROWS_AS(steering_positions_from_string("prompt"), ParameterError);
}
