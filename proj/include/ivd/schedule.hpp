#pragma once

#include <functional>
#include <vector>

#include "ivd/model.hpp"
#include "ivd/synth.hpp"

namespace ivd {

enum class PolicyKind { Fixed, Adaptive, AlwaysHeavy, AlwaysLight, Replay };

// Context the adaptive selector sees when choosing the next frame's
// extractor: the committed memory after the current step, the previous
// step's memory, and the action history (most recent first).
struct PolicyContext {
  const MemoryState* state = nullptr;
  const MemoryState* previous = nullptr;
  const std::vector<int>* actions_recent_first = nullptr;
  long long frame = 0;
};

struct InterleavePolicy {
  PolicyKind kind = PolicyKind::Fixed;
  int tau = 9;
  std::function<int(const PolicyContext&)> select;  // Adaptive
  std::vector<int> script;                          // Replay
  bool cold_light = false;  // AlwaysLight without the frame-0 heavy bootstrap

  static InterleavePolicy fixed(int tau_value) {
    InterleavePolicy p;
    p.kind = PolicyKind::Fixed;
    p.tau = tau_value;
    return p;
  }
  static InterleavePolicy always_heavy() {
    InterleavePolicy p;
    p.kind = PolicyKind::AlwaysHeavy;
    p.tau = 0;
    return p;
  }
  static InterleavePolicy always_light(bool cold = false) {
    InterleavePolicy p;
    p.kind = PolicyKind::AlwaysLight;
    p.cold_light = cold;
    return p;
  }
  static InterleavePolicy adaptive(std::function<int(const PolicyContext&)> fn) {
    InterleavePolicy p;
    p.kind = PolicyKind::Adaptive;
    p.select = std::move(fn);
    return p;
  }
  static InterleavePolicy replay(std::vector<int> actions) {
    InterleavePolicy p;
    p.kind = PolicyKind::Replay;
    p.script = std::move(actions);
    return p;
  }
};

struct FrameResult {
  int frame = 0;
  int action = 0;
  DetectionSet detections;
  long long macs = 0;
  double latency_units = 0;  // virtual units: millions of multiply-adds
  long long commit_seen = 0;
};

inline double latency_units_of(long long macs) { return static_cast<double>(macs) / 1e6; }

// Synchronous loop: one extractor per frame, state committed only on heavy
// frames, frame 0 always heavy (except the documented cold-light knob).
// state_trace, when given, receives the memory snapshot after every frame.
std::vector<FrameResult> run_sequence(const DetectionModel& model,
                                      const std::vector<Tensor>& frames,
                                      const InterleavePolicy& policy,
                                      GraphInstrument<float>* inst = nullptr,
                                      std::vector<MemoryState>* state_trace = nullptr);

struct TauSweepRow {
  int tau = 0;
  double map = 0;
  double amortized_mac = 0;
  double heavy_fraction = 0;
};

std::vector<TauSweepRow> sweep_tau(const DetectionModel& model, const std::vector<Clip>& clips,
                                   const std::vector<int>& taus,
                                   GraphInstrument<float>* inst = nullptr);

// Runs a policy over annotated clips and scores the result.
struct EvalResult {
  double map = 0;
  double heavy_fraction = 0;
  double amortized_mac = 0;
  double max_latency_units = 0;
};

EvalResult evaluate_policy(const DetectionModel& model, const std::vector<Clip>& clips,
                           const InterleavePolicy& policy,
                           GraphInstrument<float>* inst = nullptr);

}  // namespace ivd
