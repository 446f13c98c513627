#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ivd/quantize.hpp"
#include "ivd/tape.hpp"
#include "ivd/weights.hpp"

namespace ivd {

// A feature extractor is a plain stack of 3x3 conv + relu6 layers. Both
// registered extractors must land on the same output geometry so either one
// can feed the memory cell at any step.
struct ExtractorSpec {
  std::string name;
  int input_resolution = 64;
  int input_channels = 3;
  std::vector<ConvSpec> layers;
  int out_channels = 0;
  int out_h = 0;
  int out_w = 0;
  long long frame_macs = 0;

  // Walks the layer stack to fill out_* and frame_macs.
  void finalize() {
    int c = input_channels, h = input_resolution, w = input_resolution;
    frame_macs = 0;
    for (const ConvSpec& l : layers) {
      l.validate();
      if (l.in_channels != c) {
        throw std::invalid_argument("extractor '" + name + "' layer expects " +
                                    std::to_string(l.in_channels) + " channels, gets " +
                                    std::to_string(c));
      }
      const int oh = l.out_h(h), ow = l.out_w(w);
      frame_macs += l.macs(oh, ow);
      c = l.out_channels;
      h = oh;
      w = ow;
    }
    out_channels = c;
    out_h = h;
    out_w = w;
  }
};

inline std::string extractor_param_name(const std::string& extractor, int layer, bool bias) {
  return extractor + "/conv" + std::to_string(layer) + (bias ? "/bias" : "/w");
}

inline void init_extractor_params(ParamStore& store, const ExtractorSpec& spec, Rng& rng) {
  for (int i = 0; i < static_cast<int>(spec.layers.size()); ++i) {
    const ConvSpec& l = spec.layers[static_cast<std::size_t>(i)];
    Tensor w(l.weight_shape());
    fill_normal(w, rng, std::sqrt(2.0 / (l.in_channels * l.kernel_h * l.kernel_w)));
    store.put(extractor_param_name(spec.name, i, false), std::move(w));
    store.put(extractor_param_name(spec.name, i, true), Tensor({l.out_channels}));
  }
}

template <class T>
typename TapeT<T>::Id extractor_forward_tape(
    TapeT<T>& tape, const std::function<typename TapeT<T>::Id(const std::string&)>& param,
    const ExtractorSpec& spec, typename TapeT<T>::Id frame, GraphInstrument<T>* inst = nullptr) {
  using Id = typename TapeT<T>::Id;
  const TensorT<T>& f = tape.tensor(frame);
  if (f.dim(2) != spec.input_resolution || f.dim(3) != spec.input_resolution) {
    throw std::invalid_argument("extractor '" + spec.name + "' expects " +
                                std::to_string(spec.input_resolution) + "x" +
                                std::to_string(spec.input_resolution) + " input, got " +
                                f.shape_str());
  }
  Id x = frame;
  for (int i = 0; i < static_cast<int>(spec.layers.size()); ++i) {
    const std::string site = spec.name + "/conv" + std::to_string(i);
    x = tape.conv2d(x, param(extractor_param_name(spec.name, i, false)),
                    param(extractor_param_name(spec.name, i, true)),
                    spec.layers[static_cast<std::size_t>(i)]);
    if (inst) x = inst->after_op(tape, x, site, RangeKind::Calibrated);
    x = tape.activation(x, Act::Relu6);
    if (inst) x = inst->after_op(tape, x, site + "/act", RangeKind::Relu06);
  }
  return x;
}

// Site name of the tensor an extractor hands to the cell.
inline std::string extractor_output_site(const ExtractorSpec& spec) {
  return spec.name + "/conv" + std::to_string(spec.layers.size() - 1) + "/act";
}

}  // namespace ivd
