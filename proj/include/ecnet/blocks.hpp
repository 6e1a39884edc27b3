#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecnet/ops.hpp"

namespace ecnet {

/// Architecture of one encoder-decoder: scale widths double, the decoder runs
/// at half width per scale, Mask-GAM gates the skip path, and layered LSTM
/// threads per-scale state across recurrent stages.
struct NetworkConfig {
  std::vector<Index> channels{32, 64, 128, 256};
  Index input_channels = 6;  // 3 rain-to-rain AE, 6 single-shot, 9 recurrent
  Index kernel = 3;
  bool use_maskgam = true;
  bool use_layered_lstm = false;
  Index stages = 6;  // recurrence depth N

  Index scales() const { return static_cast<Index>(channels.size()); }
  Index downsample_factor() const { return Index(1) << (scales() - 1); }
  bool recurrent_input() const { return input_channels == 9; }

  void validate() const {
    if (scales() < 2) throw std::invalid_argument("NetworkConfig: need at least 2 scales");
    for (size_t i = 0; i < channels.size(); ++i) {
      if (channels[i] <= 0 || channels[i] % 2 != 0)
        throw std::invalid_argument("NetworkConfig: channel widths must be positive and even");
      if (i > 0 && channels[i] != 2 * channels[i - 1])
        throw std::invalid_argument("NetworkConfig: channel widths must double across scales");
    }
    if (kernel < 1 || kernel % 2 == 0)
      throw std::invalid_argument("NetworkConfig: kernel size must be odd");
    if (input_channels != 3 && input_channels != 6 && input_channels != 9)
      throw std::invalid_argument("NetworkConfig: input channels must be 3, 6 or 9");
    if (stages < 1) throw std::invalid_argument("NetworkConfig: stages must be >= 1");
  }

  bool same_geometry(const NetworkConfig& other) const {
    return channels == other.channels && kernel == other.kernel;
  }
};

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T>* tensor;
};

// ---------------------------------------------------------------------------
// Convolution layer
// ---------------------------------------------------------------------------

template <typename T>
struct Conv2dLayer {
  Tensor<T> w;  // [out_c, in_c, k, k]
  Tensor<T> b;  // [out_c]
  Index stride = 1;

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    out.push_back({prefix + ".w", &w});
    out.push_back({prefix + ".b", &b});
  }
};

template <typename T>
Conv2dLayer<T> make_conv(Index out_c, Index in_c, Index kernel, Index stride, Rng& rng) {
  Conv2dLayer<T> layer;
  layer.w = randn_init<T>({out_c, in_c, kernel, kernel}, in_c * kernel * kernel, rng);
  layer.b = Tensor<T>::zeros({out_c});
  layer.stride = stride;
  return layer;
}

template <typename T>
Tensor<T> conv_forward(Tape<T>& g, const Conv2dLayer<T>& layer, const Tensor<T>& x) {
  return conv2d(g, x, layer.w, layer.b, layer.stride);
}

// ---------------------------------------------------------------------------
// Residual block: x + conv2(relu(conv1(x))), channel preserving
// ---------------------------------------------------------------------------

template <typename T>
struct ResidualBlock {
  Conv2dLayer<T> conv1, conv2;

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    conv1.collect(prefix + ".conv1", out);
    conv2.collect(prefix + ".conv2", out);
  }
};

/// The residual-branch output convolution starts damped; stacked identity-skip
/// blocks would otherwise grow activations exponentially with depth and push
/// every downstream sigmoid into saturation at init.
inline constexpr double kResidualBranchGain = 0.1;

template <typename T>
ResidualBlock<T> make_residual_block(Index channels, Index kernel, Rng& rng) {
  ResidualBlock<T> rb{make_conv<T>(channels, channels, kernel, 1, rng),
                      make_conv<T>(channels, channels, kernel, 1, rng)};
  for (auto& v : rb.conv2.w.values()) v = static_cast<T>(v * kResidualBranchGain);
  return rb;
}

template <typename T>
Tensor<T> rb_forward(Tape<T>& g, const ResidualBlock<T>& rb, const Tensor<T>& x) {
  return add(g, x, conv_forward(g, rb.conv2, relu(g, conv_forward(g, rb.conv1, x))));
}

// ---------------------------------------------------------------------------
// Convolutional LSTM cell over concat(x, h)
// ---------------------------------------------------------------------------

template <typename T>
struct LstmState {
  Tensor<T> h, c;
};

template <typename T>
struct ConvLstmCell {
  Conv2dLayer<T> gate_in, gate_forget, gate_out, gate_cand;

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    gate_in.collect(prefix + ".gi", out);
    gate_forget.collect(prefix + ".gf", out);
    gate_out.collect(prefix + ".go", out);
    gate_cand.collect(prefix + ".gc", out);
  }
};

template <typename T>
ConvLstmCell<T> make_convlstm(Index channels, Index kernel, Rng& rng) {
  ConvLstmCell<T> cell;
  cell.gate_in = make_conv<T>(channels, 2 * channels, kernel, 1, rng);
  cell.gate_forget = make_conv<T>(channels, 2 * channels, kernel, 1, rng);
  cell.gate_out = make_conv<T>(channels, 2 * channels, kernel, 1, rng);
  cell.gate_cand = make_conv<T>(channels, 2 * channels, kernel, 1, rng);
  return cell;
}

template <typename T>
LstmState<T> convlstm_step(Tape<T>& g, const ConvLstmCell<T>& cell, const Tensor<T>& x,
                           const Tensor<T>& h, const Tensor<T>& c) {
  detail::require_same_shape(x, h, "convlstm_step");
  detail::require_same_shape(x, c, "convlstm_step");
  auto xh = concat_channels(g, {x, h});
  auto gi = sigmoid(g, conv_forward(g, cell.gate_in, xh));
  auto gf = sigmoid(g, conv_forward(g, cell.gate_forget, xh));
  auto go = sigmoid(g, conv_forward(g, cell.gate_out, xh));
  auto cand = tanh_op(g, conv_forward(g, cell.gate_cand, xh));
  auto c_next = add(g, hadamard(g, gf, c), hadamard(g, gi, cand));
  auto h_next = hadamard(g, go, tanh_op(g, c_next));
  return {h_next, c_next};
}

// ---------------------------------------------------------------------------
// Residual recurrent block: the LSTM sits between the two convolutions
// ---------------------------------------------------------------------------

template <typename T>
struct RecurrentResidualBlock {
  Conv2dLayer<T> conv1;
  ConvLstmCell<T> lstm;
  Conv2dLayer<T> conv2;

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    conv1.collect(prefix + ".conv1", out);
    lstm.collect(prefix + ".lstm", out);
    conv2.collect(prefix + ".conv2", out);
  }
};

template <typename T>
RecurrentResidualBlock<T> make_recurrent_block(Index channels, Index kernel, Rng& rng) {
  RecurrentResidualBlock<T> rrb{make_conv<T>(channels, channels, kernel, 1, rng),
                                make_convlstm<T>(channels, kernel, rng),
                                make_conv<T>(channels, channels, kernel, 1, rng)};
  for (auto& v : rrb.conv2.w.values()) v = static_cast<T>(v * kResidualBranchGain);
  return rrb;
}

template <typename T>
struct RrbOutput {
  Tensor<T> y;
  LstmState<T> state;
};

/// A missing state is the first recurrent stage and behaves as all-zero h, c.
template <typename T>
RrbOutput<T> rrb_forward(Tape<T>& g, const RecurrentResidualBlock<T>& rrb, const Tensor<T>& x,
                         const LstmState<std::type_identity_t<T>>* state) {
  auto a = relu(g, conv_forward(g, rrb.conv1, x));
  LstmState<T> prev;
  if (state) {
    prev = *state;
  } else {
    prev = {Tensor<T>::zeros(a.shape()), Tensor<T>::zeros(a.shape())};
  }
  LstmState<T> next = convlstm_step(g, rrb.lstm, a, prev.h, prev.c);
  auto y = add(g, x, conv_forward(g, rrb.conv2, next.h));
  return {y, next};
}

// ---------------------------------------------------------------------------
// Mask-guided attention over the skip path
// ---------------------------------------------------------------------------

template <typename T>
struct MaskGam {
  Conv2dLayer<T> proj_enc;  // 1x1, C -> n (n = C/2)
  Conv2dLayer<T> proj_dec;  // 1x1, C/2 -> n
  Conv2dLayer<T> to_map;    // 1x1, n -> 1

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    proj_enc.collect(prefix + ".enc", out);
    proj_dec.collect(prefix + ".dec", out);
    to_map.collect(prefix + ".map", out);
  }
};

template <typename T>
MaskGam<T> make_maskgam(Index channels, Rng& rng) {
  const Index n = channels / 2;
  MaskGam<T> gam{make_conv<T>(n, channels, 1, 1, rng), make_conv<T>(n, n, 1, 1, rng),
                 make_conv<T>(1, n, 1, 1, rng)};
  // keep the initial gate near its neutral 0.5 rather than saturated
  for (auto& v : gam.to_map.w.values()) v = static_cast<T>(v * kResidualBranchGain);
  return gam;
}

template <typename T>
struct MaskGamOutput {
  Tensor<T> gated;  // attention-reweighted encoder features
  Tensor<T> map;    // single-channel attention map in (0,1)
};

template <typename T>
MaskGamOutput<T> maskgam_forward(Tape<T>& g, const MaskGam<T>& gam, const Tensor<T>& feat_enc,
                                 const Tensor<T>& feat_dec) {
  if (feat_enc.shape().h() != feat_dec.shape().h() ||
      feat_enc.shape().w() != feat_dec.shape().w() ||
      feat_enc.shape().c() != 2 * feat_dec.shape().c())
    throw std::invalid_argument("maskgam_forward: encoder " + feat_enc.shape().str() +
                                " vs decoder " + feat_dec.shape().str());
  auto combined = add(g, conv_forward(g, gam.proj_enc, feat_enc),
                      conv_forward(g, gam.proj_dec, feat_dec));
  auto map = sigmoid(g, conv_forward(g, gam.to_map, relu(g, combined)));
  return {mul_channel_map(g, feat_enc, map), map};
}

// ---------------------------------------------------------------------------
// Encoder: per scale a stem/downsample convolution followed by an RB (or RRB
// when layered LSTM is enabled); the bottleneck block output is the embedding.
// ---------------------------------------------------------------------------

template <typename T>
struct EncoderScale {
  Conv2dLayer<T> stem;
  std::optional<ResidualBlock<T>> rb;
  std::optional<RecurrentResidualBlock<T>> rrb;

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    stem.collect(prefix + ".stem", out);
    if (rb) rb->collect(prefix + ".rb", out);
    if (rrb) rrb->collect(prefix + ".rrb", out);
  }
};

template <typename T>
struct Encoder {
  NetworkConfig cfg;
  std::vector<EncoderScale<T>> scales;

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    for (size_t i = 0; i < scales.size(); ++i)
      scales[i].collect(prefix + ".s" + std::to_string(i), out);
  }
};

template <typename T>
Encoder<T> make_encoder(const NetworkConfig& cfg, Rng& rng) {
  cfg.validate();
  Encoder<T> enc;
  enc.cfg = cfg;
  for (Index s = 0; s < cfg.scales(); ++s) {
    EncoderScale<T> scale;
    const Index in_c = s == 0 ? cfg.input_channels : cfg.channels[s - 1];
    scale.stem = make_conv<T>(cfg.channels[s], in_c, cfg.kernel, s == 0 ? 1 : 2, rng);
    if (cfg.use_layered_lstm)
      scale.rrb = make_recurrent_block<T>(cfg.channels[s], cfg.kernel, rng);
    else
      scale.rb = make_residual_block<T>(cfg.channels[s], cfg.kernel, rng);
    enc.scales.push_back(std::move(scale));
  }
  return enc;
}

template <typename T>
struct EncoderOutput {
  Tensor<T> embedding;               // bottleneck output (== features.back())
  std::vector<Tensor<T>> features;   // per-scale features after each block
  std::vector<LstmState<T>> states;  // per-scale LSTM state; empty when not recurrent
};

template <typename T>
EncoderOutput<T> encoder_forward(Tape<T>& g, const Encoder<T>& enc, const Tensor<T>& input,
                                 const std::vector<LstmState<std::type_identity_t<T>>>* states = nullptr) {
  const Shape& s = input.shape();
  if (s.rank() != 4 || s.c() != enc.cfg.input_channels)
    throw std::invalid_argument("encoder_forward: input " + s.str() + " for stem of " +
                                std::to_string(enc.cfg.input_channels) + " channels");
  const Index factor = enc.cfg.downsample_factor();
  if (s.h() % factor != 0 || s.w() % factor != 0)
    throw std::invalid_argument("encoder_forward: spatial dims of " + s.str() +
                                " must be divisible by " + std::to_string(factor));
  if (states && static_cast<Index>(states->size()) != enc.cfg.scales())
    throw std::invalid_argument("encoder_forward: state count mismatch");

  EncoderOutput<T> out;
  Tensor<T> x = input;
  for (Index i = 0; i < enc.cfg.scales(); ++i) {
    x = conv_forward(g, enc.scales[i].stem, x);
    if (enc.scales[i].rrb) {
      const LstmState<T>* prev = states ? &(*states)[i] : nullptr;
      RrbOutput<T> r = rrb_forward(g, *enc.scales[i].rrb, x, prev);
      x = r.y;
      out.states.push_back(std::move(r.state));
    } else {
      x = rb_forward(g, *enc.scales[i].rb, x);
    }
    out.features.push_back(x);
  }
  out.embedding = out.features.back();
  return out;
}

// ---------------------------------------------------------------------------
// Decoder: nearest-neighbor upsample + convolution per scale (half the encoder
// width), optional projected skip injection, then an RB; linear 3-channel head.
// The skip projections are the only weights the rain-to-rain autoencoder's
// decoder does not have, which is what makes its weights reusable here.
// ---------------------------------------------------------------------------

template <typename T>
struct DecoderScale {
  Conv2dLayer<T> up_conv;                   // 3x3 after upsample, -> C_s/2
  std::optional<Conv2dLayer<T>> skip_proj;  // 1x1, C_s -> C_s/2
  ResidualBlock<T> rb;

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    up_conv.collect(prefix + ".up", out);
    if (skip_proj) skip_proj->collect(prefix + ".proj", out);
    rb.collect(prefix + ".rb", out);
  }
};

template <typename T>
struct Decoder {
  NetworkConfig cfg;
  std::vector<DecoderScale<T>> scales;  // ordered from the bottleneck outward
  Conv2dLayer<T> out_conv;

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    for (size_t i = 0; i < scales.size(); ++i)
      scales[i].collect(prefix + ".s" + std::to_string(i), out);
    out_conv.collect(prefix + ".out", out);
  }
};

template <typename T>
Decoder<T> make_decoder(const NetworkConfig& cfg, bool with_skip_projections, Rng& rng) {
  cfg.validate();
  Decoder<T> dec;
  dec.cfg = cfg;
  const Index S = cfg.scales();
  for (Index s = S - 2; s >= 0; --s) {
    DecoderScale<T> scale;
    const Index in_c = s == S - 2 ? cfg.channels[S - 1] : cfg.channels[s + 1] / 2;
    const Index out_c = cfg.channels[s] / 2;
    scale.up_conv = make_conv<T>(out_c, in_c, cfg.kernel, 1, rng);
    if (with_skip_projections) scale.skip_proj = make_conv<T>(out_c, cfg.channels[s], 1, 1, rng);
    scale.rb = make_residual_block<T>(out_c, cfg.kernel, rng);
    dec.scales.push_back(std::move(scale));
  }
  dec.out_conv = make_conv<T>(3, cfg.channels[0] / 2, cfg.kernel, 1, rng);
  return dec;
}

/// `gated` is ordered by encoder scale (finest first) and holds S-1 entries;
/// pass nullptr for the skip-free autoencoder path.
template <typename T>
Tensor<T> decoder_forward(Tape<T>& g, const Decoder<T>& dec, const Tensor<T>& embedding,
                          const std::vector<Tensor<std::type_identity_t<T>>>* gated = nullptr) {
  const Index S = dec.cfg.scales();
  if (gated && static_cast<Index>(gated->size()) != S - 1)
    throw std::invalid_argument("decoder_forward: expected " + std::to_string(S - 1) +
                                " gated features, got " + std::to_string(gated->size()));
  Tensor<T> x = embedding;
  for (Index i = 0; i < S - 1; ++i) {
    const Index scale_idx = S - 2 - i;  // encoder scale this stage lands on
    const DecoderScale<T>& stage = dec.scales[static_cast<size_t>(i)];
    x = conv_forward(g, stage.up_conv, upsample_nearest2x(g, x));
    if (gated) {
      if (!stage.skip_proj)
        throw std::invalid_argument("decoder_forward: decoder built without skip projections");
      x = add(g, x, conv_forward(g, *stage.skip_proj, (*gated)[static_cast<size_t>(scale_idx)]));
    }
    x = rb_forward(g, stage.rb, x);
  }
  return conv_forward(g, dec.out_conv, x);
}

}  // namespace ecnet
