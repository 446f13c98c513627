#pragma once

// Reference implementations used only by tests. These certify the production
// modules and deliberately share no code with them beyond the tensor type.

#include <functional>
#include <string>
#include <vector>

#include "ivd/detect.hpp"
#include "ivd/tensor.hpp"

namespace oracles {

// ---------------------------------------------------------------------------
// central finite differences
// ---------------------------------------------------------------------------

struct GradCheck {
  double max_abs_err = 0;
  double max_rel_err = 0;
  long long coordinates = 0;
  std::string first_divergence;  // empty when within tolerance
  bool pass = true;
};

// loss(params) must be a pure function of the parameter list. analytic[i]
// holds the claimed gradient for params[i]. Central differences with the
// given step; relative error measured against max(|a|,|n|,eps).
GradCheck check_gradients(
    const std::function<double(const std::vector<ivd::DTensor>&)>& loss,
    std::vector<ivd::DTensor> params, const std::vector<ivd::DTensor>& analytic,
    double step = 1e-5, double tolerance = 1e-4);

// ---------------------------------------------------------------------------
// dense (ungrouped) bottleneck cell
// ---------------------------------------------------------------------------

struct DenseCellWeights {
  // 3x3 stride-1 same-padding convs; wb fuses [x, h].
  ivd::DTensor wb, bb;  // bottleneck
  ivd::DTensor wi, bi;  // input gate
  ivd::DTensor wf, bf;  // forget gate
  ivd::DTensor wo, bo;  // output gate
  ivd::DTensor wc, bc;  // candidate
};

struct DenseCellOut {
  ivd::DTensor m;  // [h_new, bottleneck]
  ivd::DTensor c;
  ivd::DTensor h;
};

DenseCellOut dense_cell_reference(const ivd::DTensor& x, const ivd::DTensor& c_prev,
                                  const ivd::DTensor& h_prev, const DenseCellWeights& w);

// Multiply-adds of one standard ConvLSTM step: four kxk convs over the
// concatenated (input, state) map producing the state width each.
long long convlstm_reference_macs(int in_channels, int out_channels, int kernel, int height,
                                  int width);

// ---------------------------------------------------------------------------
// brute-force average precision
// ---------------------------------------------------------------------------

// O(n^2) matching: repeatedly picks the highest-scoring unprocessed detection
// (ties to lower frame then lower in-frame index), greedily matches it, and
// integrates the precision/recall envelope directly.
double brute_force_ap(const std::vector<ivd::DetectionSet>& detections,
                      const std::vector<std::vector<ivd::GtBox>>& ground_truth, int cls,
                      float iou_threshold = 0.5f);

// ---------------------------------------------------------------------------
// asynchronous-lane timeline
// ---------------------------------------------------------------------------

struct TimelineRow {
  int frame = 0;
  int commit_seen = 0;   // commit index (frame at which it landed) visible to this frame
  bool launches = false; // heavy lane starts here
};

// Heavy lane launches every `tau` frames starting at 0 and lands its commit
// `duration` frames later; frame 0 additionally blocks on a synchronous
// initialization commit. A frame sees the newest commit with commit frame
// <= its own index.
std::vector<TimelineRow> timeline_simulator(int tau, int duration, int frames);

}  // namespace oracles
