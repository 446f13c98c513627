#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ivd/cell.hpp"
#include "ivd/detect.hpp"
#include "ivd/extractor.hpp"
#include "ivd/quantize.hpp"
#include "ivd/weights.hpp"

namespace ivd {

// Full interleaved-detector configuration. The two extractors must share an
// output geometry that matches the cell grid, and the heavy extractor must
// cost more than the light one.
struct ModelConfig {
  int frame_resolution = 64;
  int num_classes = 4;
  ExtractorSpec f0;
  ExtractorSpec f1;
  CellConfig cell;
  HeadConfig head;
  NmsParams nms;

  static ModelConfig desk_default();

  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// Per-component multiply-add counts, plus the reference comparison used in
// reports.
struct MacReport {
  long long f0 = 0;
  long long f1 = 0;
  long long cell = 0;
  long long head = 0;
  long long policy_net = 0;
  long long light_path = 0;
  long long heavy_path = 0;
};

struct FrameOutput {
  Tensor feature_m;
  Tensor logits;
  Tensor offsets;
  DetectionSet detections;
  MemoryState state;
  long long macs = 0;
};

// Stateless frame runner over a parameter store. All methods are pure given
// (params, inputs); instances are cheap views safe to share across threads.
class DetectionModel {
 public:
  DetectionModel(const ModelConfig& cfg, const ParamStore& params);

  const ModelConfig& config() const { return cfg_; }
  const ParamStore& params() const { return params_; }
  const std::vector<Box>& anchors() const { return anchors_; }

  // Runs extractor `extractor_id` on a full-resolution frame (the light
  // extractor sees a 2x-downsampled copy), one cell step, and the head.
  // commit=false returns the input state unchanged.
  FrameOutput run_frame(int extractor_id, const Tensor& frame, const MemoryState& state,
                        bool commit, long long step_index,
                        GraphInstrument<float>* inst = nullptr, bool decode = true) const;

  MemoryState initial_state() const { return zero_state<float>(cfg_.cell); }

  long long extractor_macs(int extractor_id) const;
  long long cell_step_macs() const { return cell_macs(cfg_.cell); }
  long long head_macs() const;
  long long frame_macs(int extractor_id) const;

  static void init_params(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed);

 private:
  ModelConfig cfg_;
  const ParamStore& params_;
  std::vector<Box> anchors_;
};

// Fake-quantizes every weight tensor in place (per-tensor symmetric ranges)
// and records the ranges in the store header.
void quantize_weights_inplace(ParamStore& store);

}  // namespace ivd
