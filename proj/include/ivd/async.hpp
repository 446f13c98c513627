#pragma once

#include <vector>

#include "ivd/model.hpp"
#include "ivd/schedule.hpp"

namespace ivd {

// Asynchronous two-lane schedule. The heavy lane launches every `tau` frames
// and its memory commit lands `heavy_duration` whole frame periods later;
// the light lane emits detections every frame from the newest committed
// memory. Frame 0 additionally blocks on a synchronous heavy initialization
// so detections never run against an uncommitted memory.
struct LaneSchedule {
  int tau = 4;
  int heavy_duration = 2;

  void validate() const {
    if (tau < 1) {
      throw std::invalid_argument(
          "async mode requires tau >= 1: the heavy extractor cannot both lag and run every "
          "frame");
    }
    if (heavy_duration < 0) throw std::invalid_argument("heavy duration cannot be negative");
  }

  std::vector<int> launch_frames(int frames) const {
    std::vector<int> out;
    for (int f = 0; f < frames; f += tau) out.push_back(f);
    return out;
  }
};

// Rows describe the light lane (one per frame, the detection path) and the
// heavy lane (one per launch). commit_seen on a light row is the commit frame
// of the memory snapshot it read.
struct AsyncLaneRow {
  int frame = 0;
  int lane = 1;  // 0 = heavy launch, 1 = light per-frame path
  double latency_units = 0;
  long long macs = 0;
  long long commit_seen = 0;
};

struct AsyncRun {
  std::vector<FrameResult> results;   // light-lane detections per frame
  std::vector<AsyncLaneRow> rows;     // full two-lane ledger
};

AsyncRun run_async(const DetectionModel& model, const std::vector<Tensor>& frames,
                   const LaneSchedule& schedule, bool parallel = false,
                   GraphInstrument<float>* inst = nullptr);

struct LatencyReport {
  double max_latency_units = 0;
  double mean_latency_units = 0;
  double amortized_mac = 0;  // all lanes, per frame
};

LatencyReport summarize_latency(const AsyncRun& run);

}  // namespace ivd
