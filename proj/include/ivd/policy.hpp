#pragma once

#include <array>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ivd/cell.hpp"
#include "ivd/model.hpp"
#include "ivd/schedule.hpp"
#include "ivd/synth.hpp"

namespace ivd {

// Observation the interleaving policy sees: the two memory maps, their
// change over the last step, and a binary history of recent actions.
struct PolicyState {
  Tensor c;
  Tensor h;
  Tensor dc;
  Tensor dh;
  Tensor eta;  // (1, history, 1, 1)
};

struct PolicyNetConfig {
  int state_channels = 64;
  int height = 4;
  int width = 4;
  int grouped_out_per_map = 8;  // one group per feature map in the state
  int sep_channels = 64;
  int history = 20;
  int actions = 2;
  // History convention: eta[k-1] = 1 when the flagged extractor ran k steps
  // ago. The flag defaults to the light extractor and is configurable.
  bool eta_marks_light = true;

  long long parameter_budget = 100000;
  long long mac_budget = 2000000;

  static PolicyNetConfig for_model(const ModelConfig& cfg) {
    PolicyNetConfig pc;
    pc.state_channels = cfg.cell.state_channels;
    pc.height = cfg.cell.height;
    pc.width = cfg.cell.width;
    return pc;
  }
};

inline std::string qnet_param_name(const std::string& part, bool bias) {
  return "qnet/" + part + (bias ? "/bias" : "/w");
}

// Q-network graph, shared by the float runtime and the double-precision
// gradient checks. The four state maps enter as one grouped conv (one group
// per map), then a depthwise-separable conv, global max pooling, the action
// history, and a fully connected readout.
template <class T>
typename TapeT<T>::Id qnet_forward_tape(
    TapeT<T>& tape, const std::function<typename TapeT<T>::Id(const std::string&)>& param,
    const PolicyNetConfig& cfg, typename TapeT<T>::Id c, typename TapeT<T>::Id h,
    typename TapeT<T>::Id dc, typename TapeT<T>::Id dh, typename TapeT<T>::Id eta) {
  auto x = tape.concat_channels({c, h, dc, dh});

  ConvSpec grouped;
  grouped.in_channels = 4 * cfg.state_channels;
  grouped.out_channels = 4 * cfg.grouped_out_per_map;
  grouped.kernel_h = grouped.kernel_w = 3;
  grouped.padding = 1;
  grouped.groups = 4;
  auto g = tape.conv2d(x, param(qnet_param_name("grouped", false)),
                       param(qnet_param_name("grouped", true)), grouped);
  g = tape.activation(g, Act::Relu6);

  ConvSpec dw;
  dw.in_channels = dw.out_channels = grouped.out_channels;
  dw.kernel_h = dw.kernel_w = 3;
  dw.padding = 1;
  dw.groups = grouped.out_channels;
  dw.depthwise = true;
  auto d = tape.conv2d(g, param(qnet_param_name("dw", false)), param(qnet_param_name("dw", true)),
                       dw);
  d = tape.activation(d, Act::Relu6);

  ConvSpec pw;
  pw.in_channels = grouped.out_channels;
  pw.out_channels = cfg.sep_channels;
  auto p = tape.conv2d(d, param(qnet_param_name("pw", false)), param(qnet_param_name("pw", true)),
                       pw);
  p = tape.activation(p, Act::Relu6);

  auto pooled = tape.pool(p, PoolSpec{PoolKind::MaxGlobal});
  auto fused = tape.concat_channels({pooled, eta});
  return tape.fully_connected(fused, param(qnet_param_name("fc", false)),
                              param(qnet_param_name("fc", true)));
}

// Fresh Q-network parameters (float). Shapes must respect the published
// parameter and multiply-add budgets; QNetwork's constructor enforces them.
void init_qnet_params(std::map<std::string, Tensor>& params, const PolicyNetConfig& cfg,
                      Rng& rng);

// eta vector from the action log (most recent first).
Tensor make_action_history(const std::vector<int>& actions_recent_first,
                           const PolicyNetConfig& cfg);

PolicyState assemble_state(const MemoryState& current, const MemoryState& previous,
                           const std::vector<int>& actions_recent_first,
                           const PolicyNetConfig& cfg);

// Speed/accuracy reward: action 0 pays the regret of the heavy extractor,
// action 1 additionally earns the speed bonus gamma.
double reward(double gamma, double loss_heavy, double loss_light, int action);

struct Transition {
  PolicyState state_prev;
  int action = 0;
  PolicyState state_next;
  double reward = 0;
  bool terminal = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

  void push(Transition t);
  std::vector<const Transition*> sample(int batch, Rng& rng) const;
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

// Lightweight Q-network: grouped conv over the four stacked state maps,
// depthwise-separable conv, global max pool, action history concatenated,
// one fully connected layer to the action values. Online and target
// parameter sets live side by side.
class QNetwork {
 public:
  QNetwork(const PolicyNetConfig& cfg, std::uint64_t seed);

  const PolicyNetConfig& config() const { return cfg_; }

  std::array<double, 2> q_values(const PolicyState& s, bool use_target = false) const;
  int greedy_action(const PolicyState& s) const;

  long long parameter_count() const;
  long long forward_macs() const;

  // One DDQN step: targets from the double estimator, then a momentum-SGD
  // update of the online network on the squared error.
  double ddqn_update(const std::vector<const Transition*>& batch, double discount,
                     double learning_rate);

  void copy_online_to_target();

  void save(ParamStore& store) const;   // online parameters, qnet/ prefix
  void load(const ParamStore& store);   // also refreshes the target copy

 private:
  friend struct QNetAccess;
  PolicyNetConfig cfg_;
  std::map<std::string, Tensor> online_;
  std::map<std::string, Tensor> target_;
  std::map<std::string, Tensor> momentum_;
};

// ---------------------------------------------------------------------------
// policy training (Algorithm-style loop with experience replay)
// ---------------------------------------------------------------------------

struct PolicyTrainConfig {
  double gamma = 0.4;     // speed reward
  double discount = 0.9;  // bootstrap discount
  double learning_rate = 2e-3;
  int replay_capacity = 10000;
  int batch = 32;
  int target_copy_every = 500;  // updates
  double eps_start = 1.0;
  double eps_end = 0.05;
  double eps_anneal_fraction = 0.25;
  int total_env_steps = 4000;
  int warmup_env_steps = 256;
  int updates_per_step = 1;
  int episode_frames = 32;
  int eval_every = 1000;  // env steps; 0 disables evaluation rows
  std::uint64_t seed = 11;
};

struct PolicyMetricsRow {
  long long iter = 0;
  double mean_q = 0;
  double map = 0;
  double heavy_fraction = 0;
};

QNetwork train_policy(const DetectionModel& frozen_model, const std::vector<Clip>& corpus,
                      const std::vector<Clip>& eval_clips, const PolicyTrainConfig& cfg,
                      std::vector<PolicyMetricsRow>* metrics = nullptr);

// Greedy selector over the trained network, for adaptive inference.
InterleavePolicy adaptive_policy(const QNetwork& net);

// Heavy-trigger fraction per labeled difficulty segment.
struct SegmentRate {
  int clip = 0;
  bool hard = false;
  int frames = 0;
  double heavy_fraction = 0;
};

std::vector<SegmentRate> policy_behavior(const DetectionModel& model, const QNetwork& net,
                                         const std::vector<Clip>& clips);

// Multibox loss of one frame's raw predictions, as a plain number.
double detection_loss_value(const DetectionModel& model, const Tensor& logits,
                            const Tensor& offsets, const std::vector<GtBox>& gt);

}  // namespace ivd
