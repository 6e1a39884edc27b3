#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ecnet/blocks.hpp"
#include "ecnet/grad_check.hpp"

using namespace ecnet;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  auto t = Tensor<T>::zeros(std::move(s));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
void fill(Tensor<T>& t, T v) {
  std::fill(t.values().begin(), t.values().end(), v);
}

template <typename Block>
void zero_block(Block& block, const std::string& prefix = "b") {
  std::vector<NamedParam<float>> params;
  block.collect(prefix, params);
  for (auto& p : params) fill(*p.tensor, 0.0f);
}

NetworkConfig desk_config(Index input_channels, bool lstm = false, bool gam = true) {
  NetworkConfig cfg;
  cfg.channels = {8, 16, 32, 64};
  cfg.input_channels = input_channels;
  cfg.use_layered_lstm = lstm;
  cfg.use_maskgam = gam;
  cfg.stages = 2;
  return cfg;
}

}  // namespace

TEST_CASE("residual block with zero weights is the identity") {
  Rng rng(1);
  auto rb = make_residual_block<float>(6, 3, rng);
  zero_block(rb);
  auto x = random_tensor<float>({2, 6, 9, 7}, rng);
  Tape<float> g;
  auto y = rb_forward(g, rb, x);
  CHECK(y.shape() == x.shape());
  for (Index i = 0; i < x.numel(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("residual block: identity path gradient with zero weights") {
  Rng rng(2);
  auto rb = make_residual_block<float>(4, 3, rng);
  zero_block(rb);
  auto x = random_tensor<float>({1, 4, 6, 6}, rng);
  x.set_requires_grad(true);
  Tape<float> g;
  auto loss = reduce_mean(g, rb_forward(g, rb, x));
  g.backward(loss);
  const float expect = 1.0f / static_cast<float>(x.numel());
  for (float v : x.grad()) CHECK(v == doctest::Approx(expect));
}

TEST_CASE("residual block keeps shape for odd sizes") {
  Rng rng(3);
  auto rb = make_residual_block<float>(8, 3, rng);
  Tape<float> g;
  auto x = random_tensor<float>({1, 8, 13, 5}, rng);
  CHECK(rb_forward(g, rb, x).shape() == x.shape());
}

TEST_CASE("convlstm: zero weights and state give zero output") {
  Rng rng(4);
  auto cell = make_convlstm<float>(4, 3, rng);
  zero_block(cell);
  auto x = random_tensor<float>({1, 4, 5, 5}, rng);
  auto h = Tensor<float>::zeros(x.shape());
  auto c = Tensor<float>::zeros(x.shape());
  Tape<float> g;
  auto next = convlstm_step(g, cell, x, h, c);
  for (float v : next.c.values()) CHECK(v == 0.0f);
  for (float v : next.h.values()) CHECK(v == 0.0f);
}

TEST_CASE("convlstm: saturated forget gate is pure memory") {
  Rng rng(5);
  auto cell = make_convlstm<float>(4, 3, rng);
  zero_block(cell);
  fill(cell.gate_forget.b, 20.0f);   // f ~= 1
  fill(cell.gate_in.b, -20.0f);      // i ~= 0
  auto x = random_tensor<float>({1, 4, 5, 5}, rng);
  auto h = random_tensor<float>({1, 4, 5, 5}, rng);
  auto c = random_tensor<float>({1, 4, 5, 5}, rng);
  Tape<float> g;
  auto next = convlstm_step(g, cell, x, h, c);
  for (Index i = 0; i < c.numel(); ++i)
    CHECK(std::abs(next.c.values()[i] - c.values()[i]) < 1e-6f);
}

TEST_CASE("convlstm: state stays bounded for random weights") {
  Rng rng(6);
  auto cell = make_convlstm<float>(4, 3, rng);
  auto x = random_tensor<float>({2, 4, 6, 6}, rng);
  auto h = random_tensor<float>({2, 4, 6, 6}, rng);
  auto c = random_tensor<float>({2, 4, 6, 6}, rng, -2.0, 2.0);
  Tape<float> g;
  auto next = convlstm_step(g, cell, x, h, c);
  for (Index i = 0; i < c.numel(); ++i) {
    CHECK(std::abs(next.c.values()[i]) <= std::abs(c.values()[i]) + 1.0f);
    CHECK(std::abs(next.h.values()[i]) < 1.0f);
  }
  CHECK_THROWS_AS(convlstm_step(g, cell, x, h, random_tensor<float>({2, 4, 3, 3}, rng)),
                  std::invalid_argument);
}

TEST_CASE("rrb: missing state equals explicit zero state bit for bit") {
  Rng rng(7);
  auto rrb = make_recurrent_block<float>(6, 3, rng);
  auto x = random_tensor<float>({1, 6, 8, 8}, rng);
  Tape<float> g1, g2;
  auto a = rrb_forward(g1, rrb, x, nullptr);
  LstmState<float> zero{Tensor<float>::zeros({1, 6, 8, 8}), Tensor<float>::zeros({1, 6, 8, 8})};
  auto b = rrb_forward(g2, rrb, x, &zero);
  for (Index i = 0; i < x.numel(); ++i) {
    CHECK(a.y.values()[i] == b.y.values()[i]);
    CHECK(a.state.h.values()[i] == b.state.h.values()[i]);
    CHECK(a.state.c.values()[i] == b.state.c.values()[i]);
  }
}

TEST_CASE("rrb: zero lstm and conv2 reduce to the identity") {
  Rng rng(8);
  auto rrb = make_recurrent_block<float>(4, 3, rng);
  zero_block(rrb.lstm, "lstm");
  zero_block(rrb.conv2, "c2");
  auto x = random_tensor<float>({1, 4, 6, 6}, rng);
  Tape<float> g;
  auto out = rrb_forward(g, rrb, x, nullptr);
  for (Index i = 0; i < x.numel(); ++i) CHECK(out.y.values()[i] == x.values()[i]);
}

TEST_CASE("rrb: state threading changes the second call") {
  Rng rng(9);
  auto rrb = make_recurrent_block<float>(4, 3, rng);
  fill(rrb.lstm.gate_in.b, 20.0f);  // let the cell accumulate its candidate
  auto x = random_tensor<float>({1, 4, 6, 6}, rng);

  Tape<float> g;
  auto first = rrb_forward(g, rrb, x, nullptr);
  auto threaded = rrb_forward(g, rrb, x, &first.state);
  auto independent = rrb_forward(g, rrb, x, nullptr);

  double max_diff = 0;
  for (Index i = 0; i < x.numel(); ++i)
    max_diff = std::max(max_diff,
                        std::abs(double(threaded.y.values()[i]) - double(independent.y.values()[i])));
  CHECK(max_diff > 1e-4);
}

TEST_CASE("maskgam: zero weights give the 0.5 map") {
  Rng rng(10);
  auto gam = make_maskgam<float>(8, rng);
  zero_block(gam);
  auto feat_enc = random_tensor<float>({1, 8, 6, 6}, rng);
  auto feat_dec = random_tensor<float>({1, 4, 6, 6}, rng);
  Tape<float> g;
  auto out = maskgam_forward(g, gam, feat_enc, feat_dec);
  CHECK(out.map.shape() == Shape{1, 1, 6, 6});
  for (float v : out.map.values()) CHECK(v == 0.5f);
  for (Index i = 0; i < feat_enc.numel(); ++i)
    CHECK(out.gated.values()[i] == doctest::Approx(0.5f * feat_enc.values()[i]));
}

TEST_CASE("maskgam: map in (0,1), closed gate kills the features") {
  Rng rng(11);
  auto gam = make_maskgam<float>(8, rng);
  auto feat_enc = random_tensor<float>({2, 8, 5, 5}, rng);
  auto feat_dec = random_tensor<float>({2, 4, 5, 5}, rng);
  Tape<float> g;
  auto out = maskgam_forward(g, gam, feat_enc, feat_dec);
  for (float v : out.map.values()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }

  fill(gam.to_map.w, 0.0f);
  fill(gam.to_map.b, -20.0f);
  Tape<float> g2;
  auto closed = maskgam_forward(g2, gam, feat_enc, feat_dec);
  for (float v : closed.gated.values()) CHECK(std::abs(v) < 1e-6f);

  CHECK_THROWS_AS(maskgam_forward(g, gam, feat_enc, random_tensor<float>({2, 8, 5, 5}, rng)),
                  std::invalid_argument);
}

TEST_CASE("encoder shapes at paper and desk scale") {
  Rng rng(12);
  NetworkConfig paper;
  paper.input_channels = 6;
  auto enc = make_encoder<float>(paper, rng);
  Tape<float> g(false);
  auto out = encoder_forward(g, enc, Tensor<float>::zeros({1, 6, 96, 96}));
  CHECK(out.embedding.shape() == Shape{1, 256, 12, 12});
  CHECK(out.features.size() == 4);
  CHECK(out.features[0].shape() == Shape{1, 32, 96, 96});
  CHECK(out.states.empty());

  auto desk = make_encoder<float>(desk_config(6), rng);
  auto out2 = encoder_forward(g, desk, Tensor<float>::zeros({1, 6, 32, 32}));
  CHECK(out2.embedding.shape() == Shape{1, 64, 4, 4});

  CHECK_THROWS_AS(encoder_forward(g, desk, Tensor<float>::zeros({1, 6, 30, 30})),
                  std::invalid_argument);
}

TEST_CASE("ae and deraining encoders produce identically shaped embeddings") {
  Rng rng(13);
  auto enc3 = make_encoder<float>(desk_config(3), rng);
  auto enc6 = make_encoder<float>(desk_config(6), rng);
  Tape<float> g(false);
  auto z3 = encoder_forward(g, enc3, Tensor<float>::zeros({1, 3, 32, 32})).embedding;
  auto z6 = encoder_forward(g, enc6, Tensor<float>::zeros({1, 6, 32, 32})).embedding;
  CHECK(z3.shape() == z6.shape());
}

TEST_CASE("layered-lstm encoder emits one state per scale") {
  Rng rng(14);
  auto enc = make_encoder<float>(desk_config(9, /*lstm=*/true), rng);
  Tape<float> g(false);
  auto out = encoder_forward(g, enc, Tensor<float>::zeros({2, 9, 32, 32}));
  REQUIRE(out.states.size() == 4);
  CHECK(out.states[0].h.shape() == Shape{2, 8, 32, 32});
  CHECK(out.states[3].c.shape() == Shape{2, 64, 4, 4});

  // threading the states back in is accepted
  auto out2 = encoder_forward(g, enc, Tensor<float>::zeros({2, 9, 32, 32}), &out.states);
  CHECK(out2.embedding.shape() == out.embedding.shape());
}

TEST_CASE("decoder: skip-free and skip variants share every non-projection shape") {
  Rng rng(15);
  NetworkConfig cfg = desk_config(6);
  auto plain = make_decoder<float>(cfg, false, rng);
  auto skip = make_decoder<float>(cfg, true, rng);

  std::vector<NamedParam<float>> pp, sp;
  plain.collect("dec", pp);
  skip.collect("dec", sp);
  size_t matched = 0;
  for (auto& s : sp) {
    if (s.name.find(".proj.") != std::string::npos) continue;
    bool found = false;
    for (auto& p : pp)
      if (p.name == s.name) {
        CHECK(p.tensor->shape() == s.tensor->shape());
        found = true;
      }
    CHECK(found);
    ++matched;
  }
  CHECK(matched == pp.size());
}

TEST_CASE("decoder: spatial size restored, zero projections match the skip-free path") {
  Rng rng(16);
  NetworkConfig cfg = desk_config(6);
  auto dec = make_decoder<float>(cfg, true, rng);
  auto embedding = random_tensor<float>({1, 64, 4, 4}, rng);

  std::vector<Tensor<float>> gated;
  for (Index s = 0; s < 3; ++s)
    gated.push_back(random_tensor<float>({1, cfg.channels[s], 32 >> s, 32 >> s}, rng));

  Tape<float> g(false);
  auto with_skips = decoder_forward(g, dec, embedding, &gated);
  CHECK(with_skips.shape() == Shape{1, 3, 32, 32});

  for (auto& scale : dec.scales) {
    fill(scale.skip_proj->w, 0.0f);
    fill(scale.skip_proj->b, 0.0f);
  }
  auto zero_proj = decoder_forward(g, dec, embedding, &gated);
  auto skip_free = decoder_forward(g, dec, embedding, nullptr);
  for (Index i = 0; i < zero_proj.numel(); ++i)
    CHECK(zero_proj.values()[i] == skip_free.values()[i]);

  std::vector<Tensor<float>> short_list(gated.begin(), gated.begin() + 2);
  CHECK_THROWS_AS(decoder_forward(g, dec, embedding, &short_list), std::invalid_argument);
}

TEST_CASE("config contract violations") {
  NetworkConfig cfg;
  cfg.channels = {8, 16, 32, 64};
  cfg.input_channels = 6;
  CHECK_NOTHROW(cfg.validate());

  NetworkConfig bad = cfg;
  bad.channels = {8, 20};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.channels = {7, 14};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.channels = {16};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.input_channels = 4;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.kernel = 4;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("gradients reach every parameter of an encoder-decoder pass") {
  Rng rng(17);
  NetworkConfig cfg;
  cfg.channels = {4, 8};
  cfg.input_channels = 6;
  cfg.use_layered_lstm = true;
  auto enc = make_encoder<float>(cfg, rng);
  auto dec = make_decoder<float>(cfg, true, rng);

  std::vector<NamedParam<float>> params;
  enc.collect("enc", params);
  dec.collect("dec", params);
  for (auto& p : params) p.tensor->set_requires_grad(true);

  // two threaded passes: with zero initial LSTM state, the forget gate and the
  // hidden half of each gate kernel only see gradient from the second stage
  auto x = random_tensor<float>({2, 6, 8, 8}, rng);
  Tape<float> g;
  auto eo = encoder_forward(g, enc, x);
  auto eo2 = encoder_forward(g, enc, x, &eo.states);
  std::vector<Tensor<float>> gated(eo2.features.begin(), eo2.features.end() - 1);
  auto y = decoder_forward(g, dec, eo2.embedding, &gated);
  auto loss = reduce_mean(g, hadamard(g, y, y));
  g.backward(loss);

  Index nonzero = 0, total = 0;
  for (auto& p : params) {
    for (float v : p.tensor->grad()) nonzero += v != 0.0f;
    total += p.tensor->numel();
  }
  CHECK(static_cast<double>(nonzero) / static_cast<double>(total) > 0.99);
}
