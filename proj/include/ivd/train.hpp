#pragma once

#include <iosfwd>
#include <vector>

#include "ivd/model.hpp"
#include "ivd/synth.hpp"

namespace ivd {

struct TrainConfig {
  int unroll = 6;  // recurrent steps per sample; must be >= 2
  int batch = 4;
  double learning_rate = 0.002;  // cosine-decayed
  double momentum = 0.9;
  int steps = 1500;
  std::uint64_t seed = 7;
  // Training-time state rule: commit on every unroll step (the inference-only
  // skip rule is a separate behavior; this flag exposes it for ablations).
  bool commit_every_step = true;
  double image_mix = 0.25;  // fraction of samples built by crop-shift stills
  AugmentParams augment;

  void validate() const {
    if (unroll < 2) throw std::invalid_argument("unroll must be >= 2 to exercise the memory");
    if (batch < 1 || steps < 1) throw std::invalid_argument("degenerate training config");
    if (image_mix < 0 || image_mix > 1) throw std::invalid_argument("image_mix must be in [0,1]");
  }
};

struct TrainLogRow {
  int step = 0;
  double loss = 0;
  double lr = 0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  double initial_loss = 0;
  double final_loss = 0;
};

// SSD-style detection training through the unrolled cell with a uniformly
// random extractor per step. Aborts with a diagnostic if the loss diverges.
TrainResult train_detector(ParamStore& params, const ModelConfig& cfg,
                           const std::vector<Clip>& corpus, const TrainConfig& tc);

}  // namespace ivd
