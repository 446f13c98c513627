#include "ivd/policy.hpp"

#include <algorithm>
#include <cmath>

namespace ivd {

namespace {

// QNet parameter shapes for a config.
std::map<std::string, std::vector<int>> qnet_shapes(const PolicyNetConfig& cfg) {
  const int gout = 4 * cfg.grouped_out_per_map;
  return {
      {qnet_param_name("grouped", false), {gout, cfg.state_channels, 3, 3}},
      {qnet_param_name("grouped", true), {gout}},
      {qnet_param_name("dw", false), {gout, 1, 3, 3}},
      {qnet_param_name("dw", true), {gout}},
      {qnet_param_name("pw", false), {cfg.sep_channels, gout, 1, 1}},
      {qnet_param_name("pw", true), {cfg.sep_channels}},
      {qnet_param_name("fc", false), {cfg.actions, cfg.sep_channels + cfg.history}},
      {qnet_param_name("fc", true), {cfg.actions}},
  };
}

Tensor stack_batch(const std::vector<const Tensor*>& parts) {
  std::vector<int> shape = parts.at(0)->shape();
  const long long each = parts[0]->numel();
  shape[0] = static_cast<int>(parts.size());
  Tensor out(shape);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::copy(parts[i]->data(), parts[i]->data() + each, out.data() + each * static_cast<long long>(i));
  }
  return out;
}

}  // namespace

void init_qnet_params(std::map<std::string, Tensor>& params, const PolicyNetConfig& cfg,
                      Rng& rng) {
  for (const auto& [name, shape] : qnet_shapes(cfg)) {
    Tensor t(shape);
    if (name.ends_with("/w")) {
      long long fan_in = 1;
      for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
      fill_normal(t, rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
    }
    params[name] = std::move(t);
  }
}

Tensor make_action_history(const std::vector<int>& actions_recent_first,
                           const PolicyNetConfig& cfg) {
  Tensor eta({1, cfg.history, 1, 1});
  const int flagged = cfg.eta_marks_light ? 1 : 0;
  for (int k = 0; k < cfg.history; ++k) {
    if (k < static_cast<int>(actions_recent_first.size()) &&
        actions_recent_first[static_cast<std::size_t>(k)] == flagged) {
      eta[k] = 1.f;
    }
  }
  return eta;
}

PolicyState assemble_state(const MemoryState& current, const MemoryState& previous,
                           const std::vector<int>& actions_recent_first,
                           const PolicyNetConfig& cfg) {
  if (!current.c.same_shape(previous.c)) {
    throw std::invalid_argument("policy state requires matching memory shapes");
  }
  PolicyState s;
  s.c = current.c;
  s.h = current.h;
  s.dc = elementwise_forward(current.c, previous.c, EwKind::Sub);
  s.dh = elementwise_forward(current.h, previous.h, EwKind::Sub);
  s.eta = make_action_history(actions_recent_first, cfg);
  return s;
}

double reward(double gamma, double loss_heavy, double loss_light, int action) {
  if (loss_heavy < 0 || loss_light < 0) {
    throw std::invalid_argument("detection losses must be nonnegative");
  }
  const double best = std::min(loss_heavy, loss_light);
  if (action == 0) return best - loss_heavy;
  if (action == 1) return gamma + best - loss_light;
  throw std::invalid_argument("reward expects a binary action");
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(std::move(t));
}

std::vector<const Transition*> ReplayBuffer::sample(int batch, Rng& rng) const {
  if (items_.empty()) throw std::logic_error("sampling from an empty replay buffer");
  std::vector<const Transition*> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    out.push_back(&items_[static_cast<std::size_t>(rng.below(items_.size()))]);
  }
  return out;
}

QNetwork::QNetwork(const PolicyNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  Rng rng(seed);
  init_qnet_params(online_, cfg_, rng);
  target_ = online_;
  if (parameter_count() > cfg_.parameter_budget) {
    throw std::invalid_argument("policy network exceeds its parameter budget: " +
                                std::to_string(parameter_count()));
  }
  if (forward_macs() > cfg_.mac_budget) {
    throw std::invalid_argument("policy network exceeds its multiply-add budget: " +
                                std::to_string(forward_macs()));
  }
}

std::array<double, 2> QNetwork::q_values(const PolicyState& s, bool use_target) const {
  const auto& params = use_target ? target_ : online_;
  Tape tape;
  auto param = [&](const std::string& n) { return tape.value(params.at(n), false); };
  auto q = qnet_forward_tape<float>(tape, param, cfg_, tape.value(s.c, false),
                                    tape.value(s.h, false), tape.value(s.dc, false),
                                    tape.value(s.dh, false), tape.value(s.eta, false));
  const Tensor& out = tape.tensor(q);
  return {static_cast<double>(out.at2(0, 0)), static_cast<double>(out.at2(0, 1))};
}

int QNetwork::greedy_action(const PolicyState& s) const {
  const auto q = q_values(s);
  return q[1] > q[0] ? 1 : 0;
}

long long QNetwork::parameter_count() const {
  long long n = 0;
  for (const auto& [k, v] : online_) n += v.numel();
  return n;
}

long long QNetwork::forward_macs() const {
  Tape tape;
  auto param = [&](const std::string& n) { return tape.value(online_.at(n), false); };
  const std::vector<int> map_shape = {1, cfg_.state_channels, cfg_.height, cfg_.width};
  qnet_forward_tape<float>(tape, param, cfg_, tape.value(Tensor(map_shape), false),
                           tape.value(Tensor(map_shape), false),
                           tape.value(Tensor(map_shape), false),
                           tape.value(Tensor(map_shape), false),
                           tape.value(Tensor({1, cfg_.history, 1, 1}), false));
  return tape.macs();
}

double QNetwork::ddqn_update(const std::vector<const Transition*>& batch, double discount,
                             double learning_rate) {
  if (batch.empty()) throw std::invalid_argument("DDQN update needs a nonempty batch");

  // Double estimator: the online network picks the bootstrap action, the
  // target network scores it. Terminal transitions regress to the reward.
  std::vector<int> actions;
  std::vector<float> targets;
  for (const Transition* t : batch) {
    double y = t->reward;
    if (!t->terminal) {
      const auto online_next = q_values(t->state_next, false);
      const int best = online_next[1] > online_next[0] ? 1 : 0;
      const auto target_next = q_values(t->state_next, true);
      y += discount * target_next[static_cast<std::size_t>(best)];
    }
    actions.push_back(t->action);
    targets.push_back(static_cast<float>(y));
  }

  std::vector<const Tensor*> cs, hs, dcs, dhs, etas;
  for (const Transition* t : batch) {
    cs.push_back(&t->state_prev.c);
    hs.push_back(&t->state_prev.h);
    dcs.push_back(&t->state_prev.dc);
    dhs.push_back(&t->state_prev.dh);
    etas.push_back(&t->state_prev.eta);
  }

  Tape tape;
  std::map<std::string, Tape::Id> param_ids;
  auto param = [&](const std::string& n) {
    auto it = param_ids.find(n);
    if (it != param_ids.end()) return it->second;
    auto id = tape.value(online_.at(n), true);
    param_ids.emplace(n, id);
    return id;
  };
  auto q = qnet_forward_tape<float>(tape, param, cfg_, tape.value(stack_batch(cs), false),
                                    tape.value(stack_batch(hs), false),
                                    tape.value(stack_batch(dcs), false),
                                    tape.value(stack_batch(dhs), false),
                                    tape.value(stack_batch(etas), false));
  auto loss = tape.q_select_mse(q, actions, targets);
  const double loss_value = tape.tensor(loss)[0];
  tape.backward(loss);

  for (auto& [name, value] : online_) {
    const Tensor& g = tape.grad(param_ids.at(name));
    Tensor& vel = momentum_.try_emplace(name, Tensor(value.shape())).first->second;
    for (long long i = 0; i < value.numel(); ++i) {
      vel[i] = 0.9f * vel[i] + g[i];
      value[i] -= static_cast<float>(learning_rate) * vel[i];
    }
  }
  return loss_value;
}

void QNetwork::copy_online_to_target() { target_ = online_; }

void QNetwork::save(ParamStore& store) const {
  for (const auto& [name, value] : online_) store.put(name, value);
}

void QNetwork::load(const ParamStore& store) {
  for (auto& [name, value] : online_) {
    const Tensor& t = store.at(name);
    if (!(t.shape() == value.shape())) {
      throw std::runtime_error("stored policy parameter '" + name + "' has shape " +
                               t.shape_str() + ", expected " + value.shape_str());
    }
    value = t;
  }
  target_ = online_;
  momentum_.clear();
}

double detection_loss_value(const DetectionModel& model, const Tensor& logits,
                            const Tensor& offsets, const std::vector<GtBox>& gt) {
  Tape tape;
  HeadOutputs<float> head;
  head.logits = tape.value(logits, false);
  head.offsets = tape.value(offsets, false);
  auto loss = multibox_loss_tape<float>(tape, head, model.anchors(), gt);
  return tape.tensor(loss)[0];
}

InterleavePolicy adaptive_policy(const QNetwork& net) {
  return InterleavePolicy::adaptive([&net](const PolicyContext& ctx) {
    const PolicyState s = assemble_state(*ctx.state, *ctx.previous, *ctx.actions_recent_first,
                                         net.config());
    return net.greedy_action(s);
  });
}

QNetwork train_policy(const DetectionModel& model, const std::vector<Clip>& corpus,
                      const std::vector<Clip>& eval_clips, const PolicyTrainConfig& cfg,
                      std::vector<PolicyMetricsRow>* metrics) {
  if (corpus.empty()) throw std::invalid_argument("policy training corpus is empty");

  PolicyNetConfig pc = PolicyNetConfig::for_model(model.config());
  QNetwork net(pc, cfg.seed);
  ReplayBuffer replay(static_cast<std::size_t>(cfg.replay_capacity));
  Rng rng(cfg.seed ^ 0xA5A5A5A5ull);

  long long env_step = 0;
  long long updates = 0;
  double q_accum = 0;
  long long q_count = 0;

  const double anneal_steps =
      std::max(1.0, cfg.eps_anneal_fraction * static_cast<double>(cfg.total_env_steps));

  while (env_step < cfg.total_env_steps) {
    const Clip& clip = corpus[static_cast<std::size_t>(rng.below(corpus.size()))];
    const int available = static_cast<int>(clip.frames.size());
    const int ep_len = std::min(cfg.episode_frames, available);
    const int start = available > ep_len ? rng.uniform_int(0, available - ep_len) : 0;

    MemoryState state = model.initial_state();
    MemoryState previous = state;
    std::vector<int> action_log;  // most recent first
    PolicyState observed;
    bool have_observed = false;
    int action = 0;  // the first step always runs the heavy extractor

    for (int t = 0; t < ep_len && env_step < cfg.total_env_steps; ++t) {
      const Tensor& frame = clip.frames[static_cast<std::size_t>(start + t)];
      const auto& gt = clip.gt[static_cast<std::size_t>(start + t)];

      // Both branches run so the reward can compare their losses; only the
      // chosen branch's state is committed.
      FrameOutput heavy = model.run_frame(0, frame, state, true, t, nullptr, false);
      FrameOutput light = model.run_frame(1, frame, state, true, t, nullptr, false);
      const double loss_heavy = detection_loss_value(model, heavy.logits, heavy.offsets, gt);
      const double loss_light = detection_loss_value(model, light.logits, light.offsets, gt);

      previous = state;
      state = action == 0 ? heavy.state : light.state;
      action_log.insert(action_log.begin(), action);
      if (static_cast<int>(action_log.size()) > pc.history) action_log.pop_back();

      const double r = reward(cfg.gamma, loss_heavy, loss_light, action);
      PolicyState now = assemble_state(state, previous, action_log, pc);
      if (have_observed) {
        replay.push(Transition{observed, action, now, r, t == ep_len - 1});
      }

      // epsilon-greedy pick for the next step
      const double eps =
          cfg.eps_start + (cfg.eps_end - cfg.eps_start) *
                              std::min(1.0, static_cast<double>(env_step) / anneal_steps);
      if (rng.uniform() < eps) {
        action = static_cast<int>(rng.below(2));
      } else {
        const auto q = net.q_values(now);
        q_accum += std::max(q[0], q[1]);
        ++q_count;
        action = q[1] > q[0] ? 1 : 0;
      }

      observed = std::move(now);
      have_observed = true;
      ++env_step;

      if (env_step > cfg.warmup_env_steps && replay.size() >= static_cast<std::size_t>(cfg.batch)) {
        for (int u = 0; u < cfg.updates_per_step; ++u) {
          net.ddqn_update(replay.sample(cfg.batch, rng), cfg.discount, cfg.learning_rate);
          ++updates;
          if (updates % cfg.target_copy_every == 0) net.copy_online_to_target();
        }
      }

      if (metrics && cfg.eval_every > 0 && env_step % cfg.eval_every == 0) {
        EvalResult ev = evaluate_policy(model, eval_clips, adaptive_policy(net));
        PolicyMetricsRow row;
        row.iter = env_step;
        row.mean_q = q_count > 0 ? q_accum / static_cast<double>(q_count) : 0.0;
        row.map = ev.map;
        row.heavy_fraction = ev.heavy_fraction;
        metrics->push_back(row);
        q_accum = 0;
        q_count = 0;
      }
    }
  }
  return net;
}

std::vector<SegmentRate> policy_behavior(const DetectionModel& model, const QNetwork& net,
                                         const std::vector<Clip>& clips) {
  std::vector<SegmentRate> rates;
  for (int ci = 0; ci < static_cast<int>(clips.size()); ++ci) {
    const Clip& clip = clips[static_cast<std::size_t>(ci)];
    auto results = run_sequence(model, clip.frames, adaptive_policy(net));
    for (const Segment& seg : clip.segments) {
      SegmentRate rate;
      rate.clip = ci;
      rate.hard = seg.hard;
      for (int f = seg.begin; f < seg.end && f < static_cast<int>(results.size()); ++f) {
        rate.heavy_fraction += results[static_cast<std::size_t>(f)].action == 0 ? 1 : 0;
        ++rate.frames;
      }
      if (rate.frames > 0) rate.heavy_fraction /= rate.frames;
      rates.push_back(rate);
    }
  }
  return rates;
}

}  // namespace ivd
