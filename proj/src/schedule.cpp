#include "ivd/schedule.hpp"

#include <deque>

namespace ivd {

std::vector<FrameResult> run_sequence(const DetectionModel& model,
                                      const std::vector<Tensor>& frames,
                                      const InterleavePolicy& policy,
                                      GraphInstrument<float>* inst,
                                      std::vector<MemoryState>* state_trace) {
  std::vector<FrameResult> results;
  if (frames.empty()) return results;
  if (policy.kind == PolicyKind::Fixed && policy.tau < 0) {
    throw std::invalid_argument("fixed interleave ratio must be >= 0");
  }
  if (policy.kind == PolicyKind::Adaptive && !policy.select) {
    throw std::invalid_argument("adaptive policy requires a selector");
  }

  MemoryState state = model.initial_state();
  MemoryState previous = state;
  std::vector<int> actions_recent_first;
  int next_action = policy.cold_light && policy.kind == PolicyKind::AlwaysLight ? 1 : 0;

  for (int k = 0; k < static_cast<int>(frames.size()); ++k) {
    int action = next_action;
    switch (policy.kind) {
      case PolicyKind::Fixed:
        action = (k % (policy.tau + 1)) == 0 ? 0 : 1;
        break;
      case PolicyKind::AlwaysHeavy:
        action = 0;
        break;
      case PolicyKind::AlwaysLight:
        action = (k == 0 && !policy.cold_light) ? 0 : 1;
        break;
      case PolicyKind::Replay:
        if (k >= static_cast<int>(policy.script.size())) {
          throw std::invalid_argument("replay script shorter than the frame sequence");
        }
        action = policy.script[static_cast<std::size_t>(k)];
        break;
      case PolicyKind::Adaptive:
        // frame 0 is pinned to the heavy extractor; later frames were chosen
        // at the end of the previous iteration.
        action = k == 0 ? 0 : next_action;
        break;
    }

    FrameOutput out = model.run_frame(action, frames[static_cast<std::size_t>(k)], state,
                                      /*commit=*/action == 0, k, inst);
    previous = state;
    state = out.state;
    if (state_trace) state_trace->push_back(state);
    actions_recent_first.insert(actions_recent_first.begin(), action);
    if (actions_recent_first.size() > 64) actions_recent_first.pop_back();

    FrameResult r;
    r.frame = k;
    r.action = action;
    r.detections = std::move(out.detections);
    r.macs = out.macs;
    r.latency_units = latency_units_of(out.macs);
    r.commit_seen = state.last_commit_step;
    results.push_back(std::move(r));

    if (policy.kind == PolicyKind::Adaptive && k + 1 < static_cast<int>(frames.size())) {
      PolicyContext ctx;
      ctx.state = &state;
      ctx.previous = &previous;
      ctx.actions_recent_first = &actions_recent_first;
      ctx.frame = k;
      next_action = policy.select(ctx);
      if (next_action != 0 && next_action != 1) {
        throw std::runtime_error("adaptive selector returned an invalid action");
      }
    }
  }
  return results;
}

EvalResult evaluate_policy(const DetectionModel& model, const std::vector<Clip>& clips,
                           const InterleavePolicy& policy, GraphInstrument<float>* inst) {
  std::vector<DetectionSet> all_dets;
  std::vector<std::vector<GtBox>> all_gt;
  long long heavy = 0, total = 0, macs = 0;
  double max_latency = 0;
  for (const Clip& clip : clips) {
    auto results = run_sequence(model, clip.frames, policy, inst);
    for (std::size_t i = 0; i < results.size(); ++i) {
      all_dets.push_back(results[i].detections);
      all_gt.push_back(clip.gt[i]);
      heavy += results[i].action == 0 ? 1 : 0;
      macs += results[i].macs;
      max_latency = std::max(max_latency, results[i].latency_units);
      ++total;
    }
  }
  EvalResult r;
  if (total > 0) {
    r.map = evaluate_map(all_dets, all_gt, model.config().num_classes).map;
    r.heavy_fraction = static_cast<double>(heavy) / static_cast<double>(total);
    r.amortized_mac = static_cast<double>(macs) / static_cast<double>(total);
    r.max_latency_units = max_latency;
  }
  return r;
}

std::vector<TauSweepRow> sweep_tau(const DetectionModel& model, const std::vector<Clip>& clips,
                                   const std::vector<int>& taus, GraphInstrument<float>* inst) {
  std::vector<TauSweepRow> rows;
  for (int tau : taus) {
    EvalResult e = evaluate_policy(model, clips, InterleavePolicy::fixed(tau), inst);
    rows.push_back(TauSweepRow{tau, e.map, e.amortized_mac, e.heavy_fraction});
  }
  return rows;
}

}  // namespace ivd
