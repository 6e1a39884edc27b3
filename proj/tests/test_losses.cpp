#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ecnet/grad_check.hpp"
#include "ecnet/losses.hpp"
#include "oracles.hpp"

using namespace ecnet;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape s, Rng& rng, double lo = 0.0, double hi = 1.0) {
  auto t = Tensor<T>::zeros(std::move(s));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace

TEST_CASE("loss_embed values and finite-difference gradient") {
  Tape<float> g;
  auto ideal = Tensor<float>::zeros({1, 4, 2, 2});
  auto z = Tensor<float>::full({1, 4, 2, 2}, 0.5f);
  CHECK(loss_embed(g, ideal, ideal.clone()).item() == 0.0f);
  CHECK(loss_embed(g, ideal, z).item() == doctest::Approx(0.5f));
  CHECK_THROWS_AS(loss_embed(g, ideal, Tensor<float>::zeros({1, 4, 1, 1})), std::invalid_argument);

  Rng rng(1);
  auto zi = random_tensor<double>({1, 3, 4, 4}, rng);
  auto zp = random_tensor<double>({1, 3, 4, 4}, rng, 1.1, 2.0);  // keep |z - zi| away from 0
  std::function<Tensor<double>(Tape<double>&)> fwd = [&](Tape<double>& gg) {
    return loss_embed(gg, zi, zp);
  };
  Tensor<double>* params[] = {&zp};
  GradCheckOptions opt;
  opt.samples = 0;
  CHECK(grad_check<double>(fwd, params, opt).max_rel_error < 1e-6);
}

TEST_CASE("loss_att: constants, the 0.25 case, and the naive oracle") {
  Tape<float> g;
  const Index S1 = 3;  // maps at three skip scales of a 16x16 mask
  auto mask_const = Tensor<float>::full({1, 1, 16, 16}, 0.7f);
  std::vector<Tensor<float>> exact;
  for (Index s = 0; s < S1; ++s) exact.push_back(Tensor<float>::full({1, 1, 16 >> s, 16 >> s}, 0.7f));
  CHECK(loss_att(g, exact, mask_const).item() == doctest::Approx(0.0f));

  auto mask_zero = Tensor<float>::zeros({1, 1, 16, 16});
  std::vector<Tensor<float>> half;
  for (Index s = 0; s < S1; ++s) half.push_back(Tensor<float>::full({1, 1, 16 >> s, 16 >> s}, 0.5f));
  CHECK(loss_att(g, half, mask_zero).item() == doctest::Approx(0.25f));

  Rng rng(2);
  auto mask = random_tensor<double>({2, 1, 16, 16}, rng);
  std::vector<Tensor<double>> maps;
  for (Index s = 0; s < S1; ++s) maps.push_back(random_tensor<double>({2, 1, 16 >> s, 16 >> s}, rng));
  Tape<double> gd;
  const double lib = loss_att(gd, maps, mask).item();
  const double ref = oracle::naive_attention_loss(maps, mask);
  CHECK(std::abs(lib - ref) < 1e-6);
}

TEST_CASE("ssim: self-similarity, symmetry, checkerboard against the oracle") {
  Rng rng(3);
  auto x = random_tensor<double>({3, 16, 16}, rng);
  auto y = random_tensor<double>({3, 16, 16}, rng);
  CHECK(ssim_metric(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(ssim_metric(x, y) - ssim_metric(y, x)) < 1e-9);

  auto board = Tensor<double>::zeros({3, 16, 16});
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < 16; ++i)
      for (Index j = 0; j < 16; ++j) board.set({c, i, j}, static_cast<double>((i + j) % 2));
  auto inverted = board.clone();
  for (auto& v : inverted.values()) v = 1.0 - v;
  const double lib = ssim_metric(board, inverted);
  CHECK(lib < 0.0);
  CHECK(std::abs(lib - oracle::naive_ssim(board, inverted)) < 1e-6);

  // 50 random pairs against the direct-formula oracle
  double worst = 0;
  for (uint64_t seed = 0; seed < 50; ++seed) {
    Rng r2(100 + seed);
    auto a = random_tensor<double>({3, 14, 14}, r2);
    auto b = random_tensor<double>({3, 14, 14}, r2);
    worst = std::max(worst, std::abs(ssim_metric(a, b) - oracle::naive_ssim(a, b)));
  }
  CHECK(worst < 1e-6);

  Tape<float> g;
  CHECK_THROWS_AS(ssim(g, Tensor<float>::zeros({1, 3, 8, 8}), Tensor<float>::zeros({1, 3, 8, 8})),
                  std::invalid_argument);
}

TEST_CASE("loss_image(B, B) = -1") {
  Rng rng(4);
  auto b = random_tensor<float>({1, 3, 16, 16}, rng);
  Tape<float> g;
  CHECK(loss_image(g, b, b.clone()).item() == doctest::Approx(-1.0f).epsilon(1e-6));
}

TEST_CASE("loss_self values and gradient") {
  Tape<float> g;
  Rng rng(5);
  auto r = random_tensor<float>({1, 3, 8, 8}, rng);
  CHECK(loss_self(g, r, r.clone()).item() == 0.0f);
  auto off = r.clone();
  for (auto& v : off.values()) v += 0.1f;
  CHECK(loss_self(g, r, off).item() == doctest::Approx(0.01f).epsilon(1e-4));

  auto rd = random_tensor<double>({1, 3, 6, 6}, rng);
  auto rec = random_tensor<double>({1, 3, 6, 6}, rng);
  std::function<Tensor<double>(Tape<double>&)> fwd = [&](Tape<double>& gg) {
    return loss_self(gg, rd, rec);
  };
  Tensor<double>* params[] = {&rec};
  GradCheckOptions opt;
  opt.samples = 0;
  CHECK(grad_check<double>(fwd, params, opt).max_rel_error < 1e-6);
}

TEST_CASE("loss_total: weighted-sum identity with the default weights") {
  Rng rng(6);
  NetworkConfig cfg;
  cfg.channels = {4, 8};
  cfg.input_channels = 6;
  cfg.stages = 1;
  auto net = make_ecnet<float>(cfg, rng);
  auto rainy = random_tensor<float>({1, 3, 16, 16}, rng);
  Tape<float> g;
  auto result = derain(g, net, rainy);

  StageTargets<float> targets;
  targets.background = random_tensor<float>({1, 3, 16, 16}, rng);
  targets.mask = random_tensor<float>({1, 1, 16, 16}, rng);
  targets.embedding_ideal = random_tensor<float>({1, 8, 8, 8}, rng);

  LossWeights w;  // defaults: 0.02, 0.1, 1.0
  auto sl = loss_total(g, result.stage_outputs[0], targets, w);
  const double recomposed = 0.02 * sl.embed + 0.1 * sl.att + 1.0 * sl.image;
  CHECK(std::abs(double(sl.total.item()) - recomposed) < 1e-6);

  // linearity: doubling one weight moves the total by exactly that component
  LossWeights w2 = w;
  w2.att = 0.2;
  Tape<float> g2(false);
  auto rerun = derain(g2, net, rainy);
  auto sl2 = loss_total(g2, rerun.stage_outputs[0], targets, w2);
  CHECK(std::abs(double(sl2.total.item()) - double(sl.total.item()) - 0.1 * sl.att) < 1e-6);
}

TEST_CASE("loss_recurrent: default stage weights sum to 4x a constant stage loss") {
  Rng rng(7);
  NetworkConfig cfg;
  cfg.channels = {4, 8};
  cfg.input_channels = 9;
  cfg.stages = 6;
  auto net = make_ecnet<float>(cfg, rng);
  auto rainy = random_tensor<float>({1, 3, 16, 16}, rng);
  Tape<float> g(false);
  auto result = derain(g, net, rainy);

  StageTargets<float> targets;
  targets.background = random_tensor<float>({1, 3, 16, 16}, rng);
  targets.mask = random_tensor<float>({1, 1, 16, 16}, rng);
  targets.embedding_ideal = random_tensor<float>({1, 8, 8, 8}, rng);

  // six copies of the same stage output -> identical per-stage loss
  std::vector<StageOutput<float>> stages(6, result.stage_outputs[0]);
  LossWeights w;
  w.stage = LossWeights::default_stage_weights(6);
  REQUIRE(w.stage == std::vector<double>{0.5, 0.5, 0.5, 0.5, 0.5, 1.5});
  auto rec = loss_recurrent(g, stages, targets, w);
  auto single = loss_total(g, result.stage_outputs[0], targets, w);
  CHECK(rec.total.item() == doctest::Approx(4.0f * single.total.item()).epsilon(1e-6));

  // N = 1 with lambda_1 = 1 reduces to loss_total
  std::vector<StageOutput<float>> one(1, result.stage_outputs[0]);
  LossWeights w1;
  w1.stage = LossWeights::default_stage_weights(1);
  REQUIRE(w1.stage == std::vector<double>{1.0});
  CHECK(loss_recurrent(g, one, targets, w1).total.item() ==
        doctest::Approx(single.total.item()).epsilon(1e-7));

  LossWeights bad;
  bad.stage = {0.5, 1.5};
  CHECK_THROWS_AS(loss_recurrent(g, stages, targets, bad), std::invalid_argument);
}

TEST_CASE("loss_recurrent: last-stage-only weights still reach every parameter") {
  Rng rng(8);
  NetworkConfig cfg;
  cfg.channels = {4, 8};
  cfg.input_channels = 9;
  cfg.use_layered_lstm = true;
  cfg.stages = 2;
  auto net = make_ecnet<float>(cfg, rng);
  set_trainable(net, true);

  auto rainy = random_tensor<float>({1, 3, 16, 16}, rng);
  StageTargets<float> targets;
  targets.background = random_tensor<float>({1, 3, 16, 16}, rng);
  targets.mask = random_tensor<float>({1, 1, 16, 16}, rng);
  targets.embedding_ideal = random_tensor<float>({1, 8, 8, 8}, rng);

  Tape<float> g;
  auto result = derain(g, net, rainy);
  LossWeights w;
  w.stage = {0.0, 1.0};  // earlier stages only contribute through state threading
  auto rec = loss_recurrent(g, result.stage_outputs, targets, w);
  g.backward(rec.total);

  Index nonzero = 0, total = 0;
  for (auto& p : net.named_parameters()) {
    for (float v : p.tensor->grad()) nonzero += v != 0.0f;
    total += p.tensor->numel();
  }
  CHECK(static_cast<double>(nonzero) / static_cast<double>(total) > 0.99);
}

TEST_CASE("psnr: sentinel, the 20 dB case, oracle, monotonicity") {
  Rng rng(9);
  auto x = random_tensor<double>({3, 8, 8}, rng);
  CHECK(psnr(x, x) == 100.0);

  auto y = x.clone();
  for (auto& v : y.values()) v += 0.1;  // MSE exactly 0.01
  CHECK(psnr(x, y) == doctest::Approx(20.0).epsilon(1e-9));

  auto noisy = x.clone();
  Rng r2(10);
  for (auto& v : noisy.values()) v += r2.uniform(-0.05, 0.05);
  CHECK(std::abs(psnr(x, noisy) - oracle::naive_psnr(x, noisy)) < 1e-9);

  double prev = 1e9;
  for (double amp = 0.01; amp <= 0.3; amp += 0.03) {
    Rng r3(11);
    auto z = x.clone();
    for (auto& v : z.values()) v += amp * (r3.uniform() > 0.5 ? 1 : -1) * r3.uniform(0.5, 1.0);
    const double p = psnr(x, z);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("composite objective differentiates cleanly at f64 (tiny model)") {
  Rng rng(12);
  NetworkConfig cfg;
  cfg.channels = {4, 8};
  cfg.input_channels = 9;
  cfg.use_layered_lstm = true;
  cfg.stages = 2;
  auto net = make_ecnet<double>(cfg, rng);
  set_trainable(net, true);

  auto rainy = random_tensor<double>({1, 3, 16, 16}, rng);
  StageTargets<double> targets;
  targets.background = random_tensor<double>({1, 3, 16, 16}, rng);
  targets.mask = random_tensor<double>({1, 1, 16, 16}, rng);
  targets.embedding_ideal = random_tensor<double>({1, 8, 8, 8}, rng);
  LossWeights w;
  w.stage = LossWeights::default_stage_weights(2);

  std::function<Tensor<double>(Tape<double>&)> fwd = [&](Tape<double>& g) {
    auto result = derain(g, net, rainy);
    return loss_recurrent(g, result.stage_outputs, targets, w).total;
  };
  auto params = parameters_of<double>(net);
  GradCheckOptions opt;
  opt.samples = 40;
  opt.step = 1e-5;
  // gradients below the floor are compared absolutely: central differences of
  // an O(1) loss cannot resolve relative error on ~1e-8 coordinates
  opt.denom_floor = 1e-4;
  CHECK(grad_check<double>(fwd, params, opt).max_rel_error < 1e-5);
}
