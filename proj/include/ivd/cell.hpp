#pragma once

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ivd/quantize.hpp"
#include "ivd/tape.hpp"
#include "ivd/tensor.hpp"
#include "ivd/weights.hpp"

namespace ivd {

// Grouped bottleneck recurrent cell. The state is partitioned channel-wise
// into `groups` equal slices; each slice is fused with the full input through
// a per-group bottleneck, and the bottleneck is concatenated into the output
// next to the updated state slice.
struct CellConfig {
  int input_channels = 64;
  int state_channels = 64;
  int groups = 4;
  int height = 4;
  int width = 4;

  void validate() const {
    if (input_channels < 1 || state_channels < 1 || groups < 1 || height < 1 || width < 1) {
      throw std::invalid_argument("cell config has a non-positive field");
    }
    if (state_channels % groups != 0) {
      throw std::invalid_argument("cell state channels " + std::to_string(state_channels) +
                                  " not divisible by " + std::to_string(groups) + " groups");
    }
  }

  int group_state() const { return state_channels / groups; }
  // Bottleneck width per group; makes the output twice the state width.
  int bottleneck_channels() const { return state_channels / groups; }
  int output_channels() const { return state_channels + groups * bottleneck_channels(); }
};

template <class T>
struct MemoryStateT {
  TensorT<T> c;
  TensorT<T> h;
  long long last_commit_step = 0;
};

using MemoryState = MemoryStateT<float>;

inline const std::array<char, 5> kCellGateNames = {'b', 'i', 'f', 'o', 'c'};

inline std::string cell_param_name(int group, char gate, bool bias) {
  return "lstm/group" + std::to_string(group) + "/" + std::string(1, gate) +
         (bias ? "/bias" : "/w");
}

// All cell convolutions are 3x3 stride-1 same-padding.
inline ConvSpec cell_conv_spec(int in_ch, int out_ch) {
  ConvSpec s;
  s.in_channels = in_ch;
  s.out_channels = out_ch;
  s.kernel_h = s.kernel_w = 3;
  s.stride = 1;
  s.padding = 1;
  return s;
}

template <class T>
MemoryStateT<T> zero_state(const CellConfig& cfg) {
  cfg.validate();
  return MemoryStateT<T>{TensorT<T>({1, cfg.state_channels, cfg.height, cfg.width}),
                         TensorT<T>({1, cfg.state_channels, cfg.height, cfg.width}), 0};
}

// Fresh random cell weights in the shared store. Forget-gate bias starts at
// +1 so the state decays slowly from the first step.
inline void init_cell_params(ParamStore& store, const CellConfig& cfg, Rng& rng) {
  cfg.validate();
  const int gs = cfg.group_state();
  const int bn = cfg.bottleneck_channels();
  for (int g = 0; g < cfg.groups; ++g) {
    const int fused_in = cfg.input_channels + gs;
    for (char gate : kCellGateNames) {
      const int in_ch = gate == 'b' ? fused_in : bn;
      const int out_ch = gate == 'b' ? bn : gs;
      Tensor w({out_ch, in_ch, 3, 3});
      fill_normal(w, rng, std::sqrt(2.0 / (in_ch * 9)));
      store.put(cell_param_name(g, gate, false), std::move(w));
      Tensor b({out_ch});
      if (gate == 'f') {
        for (long long i = 0; i < b.numel(); ++i) b[i] = 1.0f;
      }
      store.put(cell_param_name(g, gate, true), std::move(b));
    }
  }
}

template <class T>
struct CellStepIds {
  typename TapeT<T>::Id m = -1;
  typename TapeT<T>::Id c = -1;
  typename TapeT<T>::Id h = -1;
};

// Records one cell step on the tape. `param` resolves a parameter name to a
// tape id; `x_site` names the op site that produced x (for concat range
// unification under quantization). c_prev/h_prev enter as already-pushed tape
// values. Commit semantics live with the caller: the returned c/h ids are the
// updated state, and the caller decides whether to carry them forward.
template <class T>
CellStepIds<T> cell_step_tape(TapeT<T>& tape,
                              const std::function<typename TapeT<T>::Id(const std::string&)>& param,
                              const CellConfig& cfg, typename TapeT<T>::Id x,
                              typename TapeT<T>::Id c_prev, typename TapeT<T>::Id h_prev,
                              GraphInstrument<T>* inst = nullptr,
                              const std::string& x_site = "cell/input") {
  using Id = typename TapeT<T>::Id;
  cfg.validate();
  if (tape.tensor(x).dim(1) != cfg.input_channels) {
    throw std::invalid_argument("cell input has " + std::to_string(tape.tensor(x).dim(1)) +
                                " channels, config expects " +
                                std::to_string(cfg.input_channels));
  }
  if (tape.tensor(x).dim(2) != cfg.height || tape.tensor(x).dim(3) != cfg.width) {
    throw std::invalid_argument("cell input spatial dims " + tape.tensor(x).shape_str() +
                                " do not match state grid " + std::to_string(cfg.height) + "x" +
                                std::to_string(cfg.width));
  }
  const int gs = cfg.group_state();
  const int bn = cfg.bottleneck_channels();

  // Carried state is itself a quantized tensor in the quantized graph.
  if (inst) {
    c_prev = inst->after_op(tape, c_prev, "lstm/state_c", RangeKind::Calibrated);
    h_prev = inst->after_op(tape, h_prev, "lstm/state_h", RangeKind::Calibrated);
    auto unified = inst->before_concat(tape, {x, h_prev}, {x_site, "lstm/state_h"});
    x = unified[0];
    h_prev = unified[1];
  }

  std::vector<Id> m_slices, c_slices, h_slices;
  std::vector<std::string> m_sites, c_sites, h_sites;

  for (int g = 0; g < cfg.groups; ++g) {
    const std::string pre = "lstm/group" + std::to_string(g);
    auto site = [&](const char* suffix) { return pre + "/" + suffix; };
    auto hook = [&](Id id, const char* suffix, RangeKind kind) {
      return inst ? inst->after_op(tape, id, site(suffix), kind) : id;
    };

    Id hg = tape.slice_channels(h_prev, g * gs, gs);
    Id cg = tape.slice_channels(c_prev, g * gs, gs);
    Id fused = tape.concat_channels({x, hg});

    Id b = tape.conv2d(fused, param(cell_param_name(g, 'b', false)),
                       param(cell_param_name(g, 'b', true)),
                       cell_conv_spec(cfg.input_channels + gs, bn));
    b = hook(b, "b/conv", RangeKind::Calibrated);
    b = tape.activation(b, Act::Relu6);
    b = hook(b, "b/act", RangeKind::Relu06);

    auto gate = [&](char name) {
      Id v = tape.conv2d(b, param(cell_param_name(g, name, false)),
                         param(cell_param_name(g, name, true)), cell_conv_spec(bn, gs));
      v = hook(v, (std::string(1, name) + "/conv").c_str(), RangeKind::Calibrated);
      v = tape.activation(v, Act::Sigmoid);
      return hook(v, (std::string(1, name) + "/act").c_str(), RangeKind::Sigmoid01);
    };
    Id gate_i = gate('i');
    Id gate_f = gate('f');
    Id gate_o = gate('o');

    Id cand = tape.conv2d(b, param(cell_param_name(g, 'c', false)),
                          param(cell_param_name(g, 'c', true)), cell_conv_spec(bn, gs));
    cand = hook(cand, "c/conv", RangeKind::Calibrated);
    cand = tape.activation(cand, Act::Relu6);
    cand = hook(cand, "c/act", RangeKind::Relu06);

    Id keep = tape.mul(gate_f, cg);
    keep = hook(keep, "mul_fc", RangeKind::Calibrated);
    Id write = tape.mul(gate_i, cand);
    write = hook(write, "mul_ic", RangeKind::Calibrated);
    Id c_new = tape.add(keep, write);
    c_new = hook(c_new, "c_new", RangeKind::Calibrated);

    Id c_act = tape.activation(c_new, Act::Relu6);
    c_act = hook(c_act, "c_new_act", RangeKind::Relu06);
    Id h_new = tape.mul(gate_o, c_act);
    h_new = hook(h_new, "h_new", RangeKind::Calibrated);

    // Output slices interleave [h_g, b_g] per group.
    m_slices.push_back(h_new);
    m_sites.push_back(site("h_new"));
    m_slices.push_back(b);
    m_sites.push_back(site("b/act"));
    c_slices.push_back(c_new);
    h_slices.push_back(h_new);
    c_sites.push_back(site("c_new"));
    h_sites.push_back(site("h_new"));
  }

  if (inst) {
    m_slices = inst->before_concat(tape, m_slices, m_sites);
    c_slices = inst->before_concat(tape, c_slices, c_sites);
    h_slices = inst->before_concat(tape, h_slices, h_sites);
  }

  CellStepIds<T> out;
  out.m = tape.concat_channels(m_slices);
  out.c = cfg.groups == 1 ? c_slices[0] : tape.concat_channels(c_slices);
  out.h = cfg.groups == 1 ? h_slices[0] : tape.concat_channels(h_slices);
  return out;
}

template <class T>
struct CellStepResult {
  TensorT<T> m;
  MemoryStateT<T> state;
  long long macs = 0;
};

// Convenience single-step evaluation. With commit=false the returned state is
// the input state unchanged (bit-identical tensors); M is still produced from
// the fresh input against that state.
template <class T>
CellStepResult<T> cell_step(const TensorT<T>& x, const MemoryStateT<T>& state,
                            const std::function<TensorT<T>(const std::string&)>& param_tensor,
                            const CellConfig& cfg, bool commit, long long step_index,
                            GraphInstrument<T>* inst = nullptr) {
  TapeT<T> tape;
  std::map<std::string, typename TapeT<T>::Id> ids;
  auto param = [&](const std::string& name) {
    auto it = ids.find(name);
    if (it != ids.end()) return it->second;
    auto id = tape.value(param_tensor(name), false);
    ids.emplace(name, id);
    return id;
  };
  auto xid = tape.value(x, false);
  auto cid = tape.value(state.c, false);
  auto hid = tape.value(state.h, false);
  auto step = cell_step_tape<T>(tape, param, cfg, xid, cid, hid, inst);

  CellStepResult<T> out;
  out.m = tape.tensor(step.m);
  if (commit) {
    out.state = MemoryStateT<T>{tape.tensor(step.c), tape.tensor(step.h), step_index};
  } else {
    out.state = state;
  }
  out.macs = tape.macs();
  return out;
}

// Multiply-adds of one cell step at the given config, counted by recording
// the op graph.
inline long long cell_macs(const CellConfig& cfg) {
  cfg.validate();
  ParamStore store;
  Rng rng(0);
  init_cell_params(store, cfg, rng);
  auto state = zero_state<float>(cfg);
  Tensor x({1, cfg.input_channels, cfg.height, cfg.width});
  auto res = cell_step<float>(
      x, state, [&](const std::string& n) { return store.at(n); }, cfg, true, 0);
  return res.macs;
}

}  // namespace ivd
