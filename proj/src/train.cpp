#include "ivd/train.hpp"

#include <cmath>

namespace ivd {

namespace {

struct Sample {
  std::vector<const Tensor*> frames;      // borrowed from a clip
  std::vector<Tensor> owned_frames;       // or owned (augmented stills)
  std::vector<const std::vector<GtBox>*> gt;
  std::vector<std::vector<GtBox>> owned_gt;

  const Tensor& frame(int i) const {
    return owned_frames.empty() ? *frames[static_cast<std::size_t>(i)]
                                : owned_frames[static_cast<std::size_t>(i)];
  }
  const std::vector<GtBox>& boxes(int i) const {
    return owned_gt.empty() ? *gt[static_cast<std::size_t>(i)]
                            : owned_gt[static_cast<std::size_t>(i)];
  }
};

Sample draw_sample(const std::vector<Clip>& corpus, const TrainConfig& tc,
                   const ModelConfig& cfg, Rng& rng) {
  Sample s;
  const Clip& clip = corpus[static_cast<std::size_t>(rng.below(corpus.size()))];
  const bool still = rng.uniform() < tc.image_mix;
  if (still) {
    const int f = rng.uniform_int(0, static_cast<int>(clip.frames.size()) - 1);
    AugmentParams aug = tc.augment;
    aug.steps = tc.unroll;
    auto steps = crop_shift_augment(clip.frames[static_cast<std::size_t>(f)],
                                    clip.gt[static_cast<std::size_t>(f)], aug,
                                    cfg.frame_resolution, rng);
    for (auto& st : steps) {
      s.owned_frames.push_back(std::move(st.image));
      s.owned_gt.push_back(std::move(st.gt));
    }
  } else {
    const int span = std::min<int>(tc.unroll, static_cast<int>(clip.frames.size()));
    const int start = static_cast<int>(clip.frames.size()) > span
                          ? rng.uniform_int(0, static_cast<int>(clip.frames.size()) - span)
                          : 0;
    for (int i = 0; i < tc.unroll; ++i) {
      const int f = std::min(start + i, static_cast<int>(clip.frames.size()) - 1);
      s.frames.push_back(&clip.frames[static_cast<std::size_t>(f)]);
      s.gt.push_back(&clip.gt[static_cast<std::size_t>(f)]);
    }
  }
  return s;
}

}  // namespace

TrainResult train_detector(ParamStore& params, const ModelConfig& cfg,
                           const std::vector<Clip>& corpus, const TrainConfig& tc) {
  tc.validate();
  if (corpus.empty()) throw std::invalid_argument("training corpus is empty");
  cfg.validate();

  DetectionModel model(cfg, params);
  const std::vector<Box> anchors = make_anchors(cfg.head.anchors);
  const std::vector<std::string> names = params.names();
  Rng rng(tc.seed);

  std::map<std::string, Tensor> velocity;
  for (const auto& n : names) velocity.emplace(n, Tensor(params.at(n).shape()));

  TrainResult result;
  for (int step = 0; step < tc.steps; ++step) {
    const double lr = tc.learning_rate * 0.5 *
                      (1.0 + std::cos(3.14159265358979323846 * step / tc.steps));

    std::map<std::string, Tensor> grads;
    double loss_sum = 0;
    for (int b = 0; b < tc.batch; ++b) {
      Sample sample = draw_sample(corpus, tc, cfg, rng);

      Tape tape;
      std::map<std::string, Tape::Id> ids;
      auto param = [&](const std::string& n) {
        auto it = ids.find(n);
        if (it != ids.end()) return it->second;
        auto id = tape.value(params.at(n), true);
        ids.emplace(n, id);
        return id;
      };

      auto state = zero_state<float>(cfg.cell);
      auto c_id = tape.value(state.c, false);
      auto h_id = tape.value(state.h, false);
      Tape::Id total = -1;
      const int unroll = tc.unroll;
      for (int t = 0; t < unroll; ++t) {
        const int extractor = static_cast<int>(rng.below(2));
        const ExtractorSpec& spec = extractor == 0 ? cfg.f0 : cfg.f1;
        Tensor input = extractor == 0 ? sample.frame(t) : downsample_half(sample.frame(t));
        auto frame_id = tape.value(std::move(input), false);
        auto features = extractor_forward_tape<float>(tape, param, spec, frame_id);
        auto cell_out = cell_step_tape<float>(tape, param, cfg.cell, features, c_id, h_id);
        if (tc.commit_every_step || extractor == 0) {
          c_id = cell_out.c;
          h_id = cell_out.h;
        }
        auto head = head_forward_tape<float>(tape, param, cfg.head, cell_out.m);
        auto loss = multibox_loss_tape<float>(tape, head, anchors, sample.boxes(t));
        total = t == 0 ? loss : tape.add(total, loss);
      }
      auto mean_loss = tape.scale(total, 1.0 / unroll);
      const double value = tape.tensor(mean_loss)[0];
      if (!std::isfinite(value)) {
        throw std::runtime_error("training diverged at step " + std::to_string(step) +
                                 ": loss is not finite");
      }
      loss_sum += value;
      tape.backward(mean_loss);
      for (const auto& [name, id] : ids) {
        const Tensor& g = tape.grad(id);
        auto it = grads.try_emplace(name, Tensor(g.shape())).first;
        for (long long i = 0; i < g.numel(); ++i) it->second[i] += g[i];
      }
    }

    for (const auto& name : names) {
      auto it = grads.find(name);
      if (it == grads.end()) continue;  // parameter unused this step
      Tensor& value = params.at(name);
      Tensor& vel = velocity.at(name);
      for (long long i = 0; i < value.numel(); ++i) {
        const float g = it->second[i] / static_cast<float>(tc.batch);
        vel[i] = static_cast<float>(tc.momentum) * vel[i] + g;
        value[i] -= static_cast<float>(lr) * vel[i];
      }
    }

    const double mean = loss_sum / tc.batch;
    if (step == 0) result.initial_loss = mean;
    result.final_loss = mean;
    result.log.push_back(TrainLogRow{step, mean, lr});
  }
  return result;
}

}  // namespace ivd
