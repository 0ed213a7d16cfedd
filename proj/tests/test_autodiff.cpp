#include <gtest/gtest.h>

#include <cmath>

#include "p2t/autodiff.hpp"
#include "support.hpp"

using namespace p2t;
using ad::Tape;
using ad::Tensor;

TEST(Tape, SigmoidOfZeroIsHalf) {
  Tape tape;
  const auto y = tape.sigmoid(tape.constant(Tensor::from({0.0})));
  EXPECT_DOUBLE_EQ(tape.scalar(y), 0.5);
}

TEST(Tape, SoftmaxOfEqualScoresIsUniform) {
  Tape tape;
  const auto y = tape.softmax_masked(tape.constant(Tensor::from({0.3, 0.3, 0.3})), {true, true, true});
  for (double v : tape.value(y).values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Tape, SoftmaxMaskedPositionsAreZero) {
  Tape tape;
  const auto y = tape.softmax_masked(tape.constant(Tensor::from({5.0, 1.0, 1.0})), {false, true, true});
  EXPECT_EQ(tape.value(y)[0], 0.0);
  EXPECT_NEAR(tape.value(y)[1], 0.5, 1e-15);
  EXPECT_THROW(tape.softmax_masked(tape.constant(Tensor::from({1.0})), {false}), ContractError);
}

TEST(Tape, GatherReturnsRow) {
  Tape tape;
  Tensor e = Tensor::matrix(3, 2);
  for (std::size_t i = 0; i < 6; ++i) e[i] = static_cast<double>(i);
  const auto row = tape.gather(tape.constant(e), 2);
  EXPECT_EQ(tape.value(row).storage(), (std::vector<double>{4.0, 5.0}));
  EXPECT_THROW(tape.gather(tape.constant(e), 3), DimensionError);
}

TEST(Tape, SigmoidDerivativeAtZero) {
  Tensor x = Tensor::from({0.0});
  Tensor gx = Tensor::from({0.0});
  Tape tape;
  const auto v = tape.parameter(x, &gx);
  tape.backward(tape.sum(tape.sigmoid(v)));
  EXPECT_DOUBLE_EQ(gx[0], 0.25);
}

TEST(Tape, MeanGradientIsUniform) {
  Tensor x = Tensor::from({1.0, -2.0, 3.0, 0.5});
  Tensor gx = Tensor::from({0.0, 0.0, 0.0, 0.0});
  Tape tape;
  tape.backward(tape.mean(tape.parameter(x, &gx)));
  for (double g : gx.values()) EXPECT_DOUBLE_EQ(g, 0.25);
}

TEST(Tape, NonScalarLossIsContractError) {
  Tape tape;
  const auto v = tape.constant(Tensor::from({1.0, 2.0}));
  EXPECT_THROW(tape.backward(v), ContractError);
}

TEST(Tape, ShapeMismatchIsDimensionError) {
  Tape tape;
  const auto a = tape.constant(Tensor::from({1.0, 2.0}));
  const auto b = tape.constant(Tensor::from({1.0, 2.0, 3.0}));
  EXPECT_THROW(tape.add(a, b), DimensionError);
  EXPECT_THROW(tape.matmul(a, tape.constant(Tensor::matrix(3, 2))), DimensionError);
}

TEST(Tape, NonFiniteOutputNamesTheOp) {
  Tape tape;
  const auto a = tape.constant(Tensor::from({1e300}));
  try {
    tape.scale(a, 1e300);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("scale"), std::string::npos);
  }
}

TEST(Tape, BackwardAccumulatesIntoParameterBuffers) {
  Tensor w = Tensor::matrix(2, 1);
  w[0] = 2.0;
  w[1] = -1.0;
  Tensor gw = Tensor::matrix(2, 1);
  Tensor b = Tensor::from({0.5});
  Tensor gb = Tensor::from({0.0});
  for (int rep = 0; rep < 2; ++rep) {
    Tape tape;
    const auto y = tape.affine(tape.constant(Tensor::from({3.0, 4.0})), tape.parameter(w, &gw), tape.parameter(b, &gb));
    tape.backward(tape.sum(y));
  }
  EXPECT_DOUBLE_EQ(gw[0], 6.0);
  EXPECT_DOUBLE_EQ(gw[1], 8.0);
  EXPECT_DOUBLE_EQ(gb[0], 2.0);
}

namespace {

struct GruParams {
  std::vector<Tensor> t;
  GruParams(std::size_t in, std::size_t h, double fill) {
    for (int g = 0; g < 3; ++g) {
      t.push_back(Tensor::matrix(in, h, fill));
      t.push_back(Tensor::matrix(h, h, fill));
      t.push_back(Tensor::vector(h, fill));
    }
  }
  ad::GruWeights bind(Tape& tape) const {
    std::vector<ad::Var> v;
    for (const auto& x : t) v.push_back(tape.parameter(x));
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
  }
};

}  // namespace

TEST(GruCell, ZeroParamsHalveTheState) {
  GruParams p(2, 3, 0.0);
  Tape tape;
  const auto h = tape.constant(Tensor::from({1.0, -2.0, 0.4}));
  const auto out = ad::gru_cell(tape, tape.constant(Tensor::from({0.7, 0.1})), h, p.bind(tape));
  EXPECT_EQ(tape.value(out).storage(), (std::vector<double>{0.5, -1.0, 0.2}));
}

TEST(GruCell, ZeroStateStaysZero) {
  GruParams p(2, 3, 0.0);
  Tape tape;
  const auto out =
      ad::gru_cell(tape, tape.constant(Tensor::from({0.7, 0.1})), tape.constant(Tensor::vector(3)), p.bind(tape));
  for (double v : tape.value(out).values()) EXPECT_EQ(v, 0.0);
}

TEST(GruCell, DimensionMismatch) {
  GruParams p(2, 3, 0.1);
  Tape tape;
  EXPECT_THROW(ad::gru_cell(tape, tape.constant(Tensor::from({1.0, 2.0, 3.0})), tape.constant(Tensor::vector(3)),
                            p.bind(tape)),
               DimensionError);
}

TEST(GruCell, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  GruParams p(3, 4, 0.0);
  for (auto& x : p.t)
    for (double& v : x.storage()) v = u(rng);
  Tensor x = Tensor::from({u(rng), u(rng), u(rng)});
  Tensor h = Tensor::from({u(rng), u(rng), u(rng), u(rng)});
  auto value = [&]() {
    Tape tape;
    return tape.scalar(tape.sum(ad::gru_cell(tape, tape.constant(x), tape.constant(h), p.bind(tape))));
  };
  std::vector<Tensor> grads;
  for (const auto& t : p.t) grads.push_back(Tensor::from_shape(t.shape()));
  {
    Tape tape;
    std::vector<ad::Var> v;
    for (std::size_t i = 0; i < p.t.size(); ++i) v.push_back(tape.parameter(p.t[i], &grads[i]));
    const ad::GruWeights g{v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
    tape.backward(tape.sum(ad::gru_cell(tape, tape.constant(x), tape.constant(h), g)));
  }
  const double eps = 1e-6;
  for (std::size_t i = 0; i < p.t.size(); ++i) {
    for (std::size_t j = 0; j < p.t[i].size(); ++j) {
      const double keep = p.t[i][j];
      p.t[i][j] = keep + eps;
      const double up = value();
      p.t[i][j] = keep - eps;
      const double down = value();
      p.t[i][j] = keep;
      EXPECT_NEAR(grads[i][j], (up - down) / (2 * eps), 1e-8);
    }
  }
}

TEST(Tape, Deterministic) {
  std::mt19937_64 rng(1);
  const ModelConfig mc = test::tiny_model_config();
  Model m(mc);
  test::randomize(m, 3);
  const Dialogue d = test::random_dialogue(rng, test::meta_of(mc), 5);
  const auto a = m.forward_values(d);
  const auto b = m.forward_values(d);
  EXPECT_EQ(a.repayment, b.repayment);
  EXPECT_EQ(a.usage, b.usage);
}
