#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "ecnet/blocks.hpp"
#include "ecnet/rlcn.hpp"

namespace ecnet {

// ---------------------------------------------------------------------------
// Rain-to-rain autoencoder: the embedding is the only path from input to
// output, so a trained bottleneck must carry the whole rain layer. Its
// encoding of a ground-truth rain layer is the supervision target for the
// deraining encoder.
// ---------------------------------------------------------------------------

template <typename T>
struct RainAutoencoder {
  NetworkConfig cfg;
  Encoder<T> encoder;
  Decoder<T> decoder;

  std::vector<NamedParam<T>> named_parameters() {
    std::vector<NamedParam<T>> out;
    encoder.collect("enc", out);
    decoder.collect("dec", out);
    return out;
  }
};

inline NetworkConfig autoencoder_config(const NetworkConfig& base) {
  NetworkConfig cfg = base;
  cfg.input_channels = 3;
  cfg.use_layered_lstm = false;
  cfg.use_maskgam = false;
  cfg.stages = 1;
  return cfg;
}

template <typename T>
RainAutoencoder<T> make_autoencoder(const NetworkConfig& base, Rng& rng) {
  const NetworkConfig cfg = autoencoder_config(base);
  cfg.validate();
  RainAutoencoder<T> ae;
  ae.cfg = cfg;
  ae.encoder = make_encoder<T>(cfg, rng);
  ae.decoder = make_decoder<T>(cfg, /*with_skip_projections=*/false, rng);
  return ae;
}

template <typename T>
struct AeOutput {
  Tensor<T> embedding;  // ideal rain embedding when fed a ground-truth rain layer
  Tensor<T> rain;       // reconstruction
};

template <typename T>
AeOutput<T> ae_forward(Tape<T>& g, const RainAutoencoder<T>& ae, const Tensor<T>& rain) {
  EncoderOutput<T> enc = encoder_forward(g, ae.encoder, rain);
  Tensor<T> rec = decoder_forward(g, ae.decoder, enc.embedding, nullptr);
  return {enc.embedding, rec};
}

// ---------------------------------------------------------------------------
// Deraining network
// ---------------------------------------------------------------------------

template <typename T>
struct EcNet {
  NetworkConfig cfg;
  Encoder<T> encoder;
  std::vector<MaskGam<T>> gams;  // scales 0..S-2; empty when skip-only
  Decoder<T> decoder;

  std::vector<NamedParam<T>> named_parameters() {
    std::vector<NamedParam<T>> out;
    encoder.collect("enc", out);
    for (size_t i = 0; i < gams.size(); ++i) gams[i].collect("gam.s" + std::to_string(i), out);
    decoder.collect("dec", out);
    return out;
  }
};

template <typename T>
EcNet<T> make_ecnet(const NetworkConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.input_channels == 3)
    throw std::invalid_argument("make_ecnet: 3-channel input is the autoencoder configuration");
  EcNet<T> net;
  net.cfg = cfg;
  net.encoder = make_encoder<T>(cfg, rng);
  if (cfg.use_maskgam)
    for (Index s = 0; s < cfg.scales() - 1; ++s)
      net.gams.push_back(make_maskgam<T>(cfg.channels[s], rng));
  net.decoder = make_decoder<T>(cfg, /*with_skip_projections=*/true, rng);
  return net;
}

/// Everything one recurrent stage produces. The background is defined as
/// I - R̂ in the working dtype; the pair (rain, background) always sums back
/// to the input by that definition.
template <typename T>
struct StageOutput {
  Tensor<T> rain;        // R̂^t
  Tensor<T> background;  // B̂^t = I - R̂^t
  Tensor<T> embedding;   // Ẑ^t
  std::vector<Tensor<T>> attention;  // M̂_s at scales 0..S-2; empty when skip-only
  std::vector<LstmState<T>> state;   // empty unless layered LSTM
};

/// One encoder→attention→decoder pass. `rain_prev` must be given exactly when
/// the network has the 9-channel recurrent stem, and a missing `state` means
/// stage 1 (all-zero LSTM state).
template <typename T>
StageOutput<T> ecnet_forward_stage(Tape<T>& g, const EcNet<T>& net, const Tensor<T>& rainy,
                                   const Tensor<T>& guide, const Tensor<std::type_identity_t<T>>* rain_prev,
                                   const std::vector<LstmState<std::type_identity_t<T>>>* state = nullptr) {
  detail::require_same_shape(rainy, guide, "ecnet_forward_stage");
  Tensor<T> input;
  if (net.cfg.recurrent_input()) {
    if (!rain_prev)
      throw std::invalid_argument("ecnet_forward_stage: recurrent stem needs the previous rain estimate");
    detail::require_same_shape(rainy, *rain_prev, "ecnet_forward_stage");
    input = concat_channels(g, {rainy, guide, *rain_prev});
  } else {
    if (rain_prev)
      throw std::invalid_argument("ecnet_forward_stage: single-shot stem takes no previous estimate");
    input = concat_channels(g, {rainy, guide});
  }

  EncoderOutput<T> enc = encoder_forward(g, net.encoder, input, state);

  StageOutput<T> out;
  out.state = std::move(enc.states);
  out.embedding = enc.embedding;

  // decoder pass, mirroring the skip structure scale by scale
  const Index S = net.cfg.scales();
  Tensor<T> x = enc.embedding;
  for (Index i = 0; i < S - 1; ++i) {
    const Index scale_idx = S - 2 - i;
    const DecoderScale<T>& stage = net.decoder.scales[static_cast<size_t>(i)];
    x = conv_forward(g, stage.up_conv, upsample_nearest2x(g, x));
    Tensor<T> skip = enc.features[static_cast<size_t>(scale_idx)];
    if (net.cfg.use_maskgam) {
      MaskGamOutput<T> gam =
          maskgam_forward(g, net.gams[static_cast<size_t>(scale_idx)], skip, x);
      skip = gam.gated;
      out.attention.push_back(gam.map);
    }
    x = add(g, x, conv_forward(g, *stage.skip_proj, skip));
    x = rb_forward(g, stage.rb, x);
  }
  out.rain = conv_forward(g, net.decoder.out_conv, x);
  out.background = sub(g, rainy, out.rain);

  // attention maps were collected coarsest-last while walking outward; store
  // them ordered by encoder scale, finest first
  std::reverse(out.attention.begin(), out.attention.end());
  return out;
}

struct DerainOptions {
  Index stages = 0;  // 0: use the network's configured recurrence depth
  RlcnParams rlcn;
};

template <typename T>
struct DerainResult {
  Tensor<T> background;               // B̂ = I - R̂ of the final stage
  std::vector<StageOutput<T>> stage_outputs;
};

/// Runs the stage recursion on a rainy NCHW batch: R̂_0 = 0, zero LSTM state,
/// the RLCN guide computed once from the input and reused every stage.
template <typename T>
DerainResult<T> derain(Tape<T>& g, const EcNet<T>& net, const Tensor<T>& rainy,
                       const DerainOptions& options = {}) {
  const Index stages = options.stages > 0 ? options.stages : net.cfg.stages;
  if (!net.cfg.recurrent_input() && stages != 1)
    throw std::invalid_argument("derain: single-shot network runs exactly one stage");

  const Tensor<T> guide = compute_rlcn_batch(rainy, options.rlcn);

  DerainResult<T> result;
  Tensor<T> rain_prev = Tensor<T>::zeros(rainy.shape());
  for (Index t = 0; t < stages; ++t) {
    const std::vector<LstmState<T>>* state =
        t == 0 || result.stage_outputs.back().state.empty() ? nullptr
                                                            : &result.stage_outputs.back().state;
    StageOutput<T> out =
        net.cfg.recurrent_input()
            ? ecnet_forward_stage(g, net, rainy, guide, &rain_prev, state)
            : ecnet_forward_stage(g, net, rainy, guide, nullptr, state);
    rain_prev = out.rain;
    result.stage_outputs.push_back(std::move(out));
  }
  result.background = result.stage_outputs.back().background;
  return result;
}

// ---------------------------------------------------------------------------
// Decoder weight reuse
// ---------------------------------------------------------------------------

/// Copies every autoencoder decoder weight into the deraining decoder and
/// zeroes the skip projections, so right after the call the main decoder maps
/// any embedding exactly like the autoencoder decoder does.
template <typename T>
void init_decoder_from_ae(EcNet<T>& net, const RainAutoencoder<T>& ae) {
  if (!net.cfg.same_geometry(ae.cfg))
    throw std::invalid_argument("init_decoder_from_ae: encoder-decoder geometry differs");
  for (size_t i = 0; i < net.decoder.scales.size(); ++i) {
    DecoderScale<T>& dst = net.decoder.scales[i];
    const DecoderScale<T>& src = ae.decoder.scales[i];
    std::copy_n(src.up_conv.w.values().data(), src.up_conv.w.numel(), dst.up_conv.w.values().data());
    std::copy_n(src.up_conv.b.values().data(), src.up_conv.b.numel(), dst.up_conv.b.values().data());
    std::copy_n(src.rb.conv1.w.values().data(), src.rb.conv1.w.numel(), dst.rb.conv1.w.values().data());
    std::copy_n(src.rb.conv1.b.values().data(), src.rb.conv1.b.numel(), dst.rb.conv1.b.values().data());
    std::copy_n(src.rb.conv2.w.values().data(), src.rb.conv2.w.numel(), dst.rb.conv2.w.values().data());
    std::copy_n(src.rb.conv2.b.values().data(), src.rb.conv2.b.numel(), dst.rb.conv2.b.values().data());
    if (dst.skip_proj) {
      std::fill(dst.skip_proj->w.values().begin(), dst.skip_proj->w.values().end(), T(0));
      std::fill(dst.skip_proj->b.values().begin(), dst.skip_proj->b.values().end(), T(0));
    }
  }
  std::copy_n(ae.decoder.out_conv.w.values().data(), ae.decoder.out_conv.w.numel(),
              net.decoder.out_conv.w.values().data());
  std::copy_n(ae.decoder.out_conv.b.values().data(), ae.decoder.out_conv.b.numel(),
              net.decoder.out_conv.b.values().data());
}

// ---------------------------------------------------------------------------
// Parameter plumbing
// ---------------------------------------------------------------------------

template <typename T, typename Model>
std::vector<Tensor<T>*> parameters_of(Model& model) {
  std::vector<Tensor<T>*> out;
  for (auto& p : model.named_parameters()) out.push_back(p.tensor);
  return out;
}

template <typename Model>
Index count_parameters(Model& model) {
  Index n = 0;
  for (auto& p : model.named_parameters()) n += p.tensor->numel();
  return n;
}

template <typename Model>
void set_trainable(Model& model, bool on) {
  for (auto& p : model.named_parameters()) p.tensor->set_requires_grad(on);
}

/// Rebuilds the same model at another precision with identical parameters.
template <typename U, typename T>
EcNet<U> cast_model(EcNet<T>& src) {
  Rng rng(0);
  EcNet<U> dst = make_ecnet<U>(src.cfg, rng);
  auto sp = src.named_parameters();
  auto dp = dst.named_parameters();
  for (size_t i = 0; i < sp.size(); ++i) {
    auto sv = sp[i].tensor->values();
    auto dv = dp[i].tensor->values();
    for (size_t k = 0; k < sv.size(); ++k) dv[k] = static_cast<U>(sv[k]);
  }
  return dst;
}

template <typename U, typename T>
RainAutoencoder<U> cast_model(RainAutoencoder<T>& src) {
  Rng rng(0);
  RainAutoencoder<U> dst = make_autoencoder<U>(src.cfg, rng);
  auto sp = src.named_parameters();
  auto dp = dst.named_parameters();
  for (size_t i = 0; i < sp.size(); ++i) {
    auto sv = sp[i].tensor->values();
    auto dv = dp[i].tensor->values();
    for (size_t k = 0; k < sv.size(); ++k) dv[k] = static_cast<U>(sv[k]);
  }
  return dst;
}

}  // namespace ecnet
