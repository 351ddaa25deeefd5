#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "hfgan/losses.hpp"

using namespace hfgan;
using hfgan::testing::grad_check;
using hfgan::testing::random_leaf;
using hfgan::testing::random_tensor;

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

Var<double> logits_of(const Tensor<double>& probs) {
  Tensor<double> t(probs.shape());
  for (Index i = 0; i < t.size(); ++i) t[i] = logit(probs[i]);
  return Var<double>(t);
}

}  // namespace

TEST_CASE("reconstruction loss") {
  Rng rng(1);
  Var<double> a(random_tensor({4, 4}, rng)), b(random_tensor({4, 4}, rng));
  CHECK(reconstruction_loss(a, a).item() == 0.0);
  CHECK(reconstruction_loss(Var<double>(Tensor<double>(Shape{3, 3}, 0.0)), Var<double>(Tensor<double>(Shape{3, 3}, 0.5)))
            .item() == doctest::Approx(0.5));
  double acc = 0.0;
  for (Index i = 0; i < 16; ++i) acc += std::abs(a.value()[i] - b.value()[i]);
  CHECK(reconstruction_loss(a, b).item() == doctest::Approx(acc / 16.0).epsilon(1e-12));
  Var<double> c(random_tensor({4, 4}, rng));
  CHECK(reconstruction_loss(a, c).item() <= reconstruction_loss(a, b).item() + reconstruction_loss(b, c).item() + 1e-15);
  CHECK_THROWS_AS(reconstruction_loss(a, Var<double>(Tensor<double>(Shape{4, 5}))), ShapeError);
}

TEST_CASE("similarity loss") {
  Rng rng(2);
  Var<double> z(random_tensor({3, 2, 2}, rng));
  // The 1e-8 guard in the denominator leaves a residual of order eps / |z|^2.
  CHECK(std::abs(similarity_loss(z, z).item()) < 1e-8);
  CHECK(similarity_loss(z, scale(z, -1.0)).item() == doctest::Approx(2.0));
  Var<double> e1(Tensor<double>(Shape{2}, Array1<double>((Array1<double>(2) << 1, 0).finished())));
  Var<double> e2(Tensor<double>(Shape{2}, Array1<double>((Array1<double>(2) << 0, 3).finished())));
  CHECK(similarity_loss(e1, e2).item() == doctest::Approx(1.0));
  Var<double> w(random_tensor({3, 2, 2}, rng));
  for (double a : {0.1, 2.0, 40.0})
    for (double b : {0.5, 7.0})
      CHECK(std::abs(similarity_loss(scale(z, a), scale(w, b)).item() - similarity_loss(z, w).item()) < 1e-6);
  Var<double> zero(Tensor<double>(Shape{3, 2, 2}));
  CHECK(std::isfinite(similarity_loss(zero, z).item()));
}

TEST_CASE("adversarial terms") {
  Var<double> half(Tensor<double>(Shape{1, 2, 2}, 0.0));
  CHECK(discriminator_adversarial(half, half).item() == doctest::Approx(2.0 * std::log(2.0)));
  CHECK(generator_adversarial(Var<double>(Tensor<double>(Shape{1, 2, 2}, 40.0))).item() < 1e-15);

  Rng rng(3);
  Tensor<double> pr(Shape{1, 3, 3}), pf(Shape{1, 3, 3});
  for (Index i = 0; i < 9; ++i) {
    pr[i] = uniform(rng, 0.01, 0.99);
    pf[i] = uniform(rng, 0.01, 0.99);
  }
  double d = 0.0, g = 0.0;
  for (Index i = 0; i < 9; ++i) {
    d += -std::log(pr[i]) - std::log(1.0 - pf[i]);
    g += -std::log(pf[i]);
  }
  CHECK(std::abs(discriminator_adversarial(logits_of(pr), logits_of(pf)).item() - d / 9.0) < 1e-6);
  CHECK(std::abs(generator_adversarial(logits_of(pf)).item() - g / 9.0) < 1e-6);

  // Saturated logits stay finite.
  Var<double> huge(Tensor<double>(Shape{1, 2, 2}, 1e4));
  CHECK(std::isfinite(discriminator_adversarial(scale(huge, -1.0), huge).item()));
}

TEST_CASE("classification loss") {
  CHECK(classification_loss(Var<double>(Tensor<double>(Shape{4}, 0.3)), 2).item() == doctest::Approx(std::log(4.0)));
  Tensor<double> onehot(Shape{4});
  onehot[1] = 1000.0;
  CHECK(classification_loss(Var<double>(onehot), 1).item() < 1e-12);
  Rng rng(4);
  Tensor<double> l = random_tensor({4}, rng, -3, 3);
  double z = 0.0;
  for (Index i = 0; i < 4; ++i) z += std::exp(l[i]);
  CHECK(std::abs(classification_loss(Var<double>(l), 3).item() - (std::log(z) - l[3])) < 1e-12);
  CHECK_THROWS_AS(classification_loss(Var<double>(l), 4), IndexError);
}

TEST_CASE("weighted totals") {
  LossWeights w;
  LossReport zero;
  CHECK(total_generator_loss(zero, w) == 0.0);
  CHECK(total_discriminator_loss(zero, w) == 0.0);
  LossReport r;
  r.rec = 1.0;
  CHECK(total_generator_loss(r, w) == doctest::Approx(10.0));
  LossReport d;
  d.adv_d = 1.0;
  CHECK(total_discriminator_loss(d, w) == doctest::Approx(0.25));

  Rng rng(5);
  LossReport q{uniform01(rng), uniform01(rng), uniform01(rng), uniform01(rng), uniform01(rng), uniform01(rng),
               uniform01(rng), 0, 0};
  CHECK(total_generator_loss(q, w) ==
        doctest::Approx(10 * q.rec + q.sim + q.cyc + 0.25 * q.adv_g + 0.25 * q.cls_fake));
  CHECK(total_discriminator_loss(q, w) == doctest::Approx(0.25 * q.adv_d + 0.25 * (q.cls_real + q.cls_fake)));

  auto s = [](double v) { return Var<double>(Tensor<double>(Shape{1}, v)); };
  CHECK(weighted_generator_loss(s(q.rec), s(q.sim), s(q.cyc), s(q.adv_g), s(q.cls_fake), w).item() ==
        doctest::Approx(total_generator_loss(q, w)));
  CHECK(weighted_discriminator_loss(s(q.adv_d), s(q.cls_real), s(q.cls_fake), w).item() ==
        doctest::Approx(total_discriminator_loss(q, w)));
  LossWeights bad;
  bad.gamma = -1;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("cycle mask and inputs") {
  // AS = [1,1,1,0], t = 4, c = 1 (one-based) -> hat AS = [0,1,1,1].
  CHECK(cycle_mask(4, 3, 0, false).to_string() == "0111");
  CHECK(cycle_mask(4, 3, 0, true).to_string() == "0001");
  CHECK_THROWS_AS(cycle_mask(4, 2, 2, false), ContractError);

  Rng rng(6);
  std::vector<Var<double>> real;
  for (int i = 0; i < 4; ++i) real.emplace_back(random_tensor({4, 4}, rng));
  Var<double> y(random_tensor({4, 4}, rng));
  auto hat = cycle_inputs(real, AvailabilityMask::parse("0111"), 3, y);
  CHECK(hat[0].value().array().abs().maxCoeff() == 0.0);
  CHECK(hat[1].value() == real[1].value());
  CHECK(hat[3].value() == y.value());
}

TEST_CASE("cycle loss with a perfect generator is zero and carries gradient into y_hat") {
  Rng rng(7);
  std::vector<Var<double>> real;
  for (int i = 0; i < 4; ++i) real.emplace_back(random_tensor({4, 4}, rng));
  Synthesizer<double> oracle = [&](const std::vector<Var<double>>&, const AvailabilityMask&, int t) {
    return GeneratorOutput<double>{real[static_cast<std::size_t>(t)], real[0], real[0]};
  };
  auto mask = AvailabilityMask::parse("1110");
  auto hat = cycle_mask(4, 3, 0, false);
  auto r = cycle_loss(oracle, real, mask, hat, 3, 0, real[3]);
  CHECK(r.loss.item() == 0.0);
  CHECK_THROWS_AS(cycle_loss(oracle, real, AvailabilityMask::parse("0110"), hat, 3, 0, real[3]), ContractError);

  // A generator that reads its slot t input: d(cycle)/d(y_hat) must be nonzero.
  auto y_hat = random_leaf({4, 4}, rng);
  Synthesizer<double> reader = [&](const std::vector<Var<double>>& x, const AvailabilityMask&, int) {
    return GeneratorOutput<double>{hfgan::tanh(scale(x[3], 2.0)), x[3], x[3]};
  };
  auto loss = [&] { return cycle_loss(reader, real, mask, hat, 3, 0, y_hat).loss; };
  auto g = grad_check(loss, {y_hat});
  CHECK(g.relative() < 1e-3);
  CHECK(y_hat.grad().array().abs().maxCoeff() > 0.0);
}

TEST_CASE("loss gradients on 4x4 inputs") {
  Rng rng(8);
  auto a = random_leaf({4, 4}, rng), b = random_leaf({4, 4}, rng);
  CHECK(grad_check([&] { return reconstruction_loss(a, b); }, {a, b}).relative() < 1e-3);
  CHECK(grad_check([&] { return similarity_loss(a, b); }, {a, b}).relative() < 1e-3);
  CHECK(grad_check([&] { return discriminator_adversarial(a, b); }, {a, b}).relative() < 1e-3);
  CHECK(grad_check([&] { return generator_adversarial(b); }, {b}).relative() < 1e-3);
  auto l = random_leaf({4}, rng);
  CHECK(grad_check([&] { return classification_loss(l, 1); }, {l}).relative() < 1e-3);
}
