#include "ivd/async.hpp"

#include <condition_variable>
#include <memory>
#include <mutex>
#include <thread>

namespace ivd {

namespace {

struct Commit {
  int commit_frame = 0;
  std::shared_ptr<const MemoryState> state;
};

// Single-writer mailbox. The heavy lane appends commits in launch order; the
// light lane blocks until every commit due at its frame has landed, then
// reads the newest eligible snapshot. Snapshots are immutable, so a reader
// can never observe a torn state.
class MemoryMailbox {
 public:
  void push(Commit c) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (!commits_.empty() && commits_.back().commit_frame > c.commit_frame) {
        throw std::logic_error("mailbox commits must arrive in nondecreasing order");
      }
      commits_.push_back(std::move(c));
    }
    cv_.notify_all();
  }

  // Blocks until `expected` commits with commit_frame <= frame exist, then
  // returns the newest of them.
  Commit read(int frame, int expected) {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return eligible(frame) >= expected; });
    Commit best;
    for (const Commit& c : commits_) {
      if (c.commit_frame <= frame) best = c;
    }
    return best;
  }

 private:
  int eligible(int frame) const {
    int n = 0;
    for (const Commit& c : commits_) {
      if (c.commit_frame <= frame) ++n;
    }
    return n;
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<Commit> commits_;
};

}  // namespace

AsyncRun run_async(const DetectionModel& model, const std::vector<Tensor>& frames,
                   const LaneSchedule& schedule, bool parallel, GraphInstrument<float>* inst) {
  schedule.validate();
  AsyncRun run;
  if (frames.empty()) return run;
  const int n = static_cast<int>(frames.size());
  const std::vector<int> launches = schedule.launch_frames(n);

  // Blocking initialization: the first heavy pass commits before any
  // detection is emitted.
  FrameOutput init = model.run_frame(0, frames[0], model.initial_state(), true, 0, inst);

  MemoryMailbox mailbox;
  mailbox.push(Commit{0, std::make_shared<const MemoryState>(init.state)});

  // Commits expected at or before a given frame: the init plus every launch
  // whose duration has elapsed.
  auto expected_commits = [&](int frame) {
    int count = 1;
    for (int launch : launches) {
      if (launch + schedule.heavy_duration <= frame) ++count;
    }
    return count;
  };

  std::mutex rows_mu;
  auto heavy_lane = [&]() {
    // The mailbox only ever holds heavy-lane output, so this lane can walk
    // its own commit chain: each launch reads the newest commit visible at
    // its launch frame, all of which it has already produced.
    for (int launch : launches) {
      const int before = static_cast<int>(
          std::count_if(launches.begin(), launches.end(), [&](int l) {
            return l < launch && l + schedule.heavy_duration <= launch;
          }));
      Commit snap = mailbox.read(launch, 1 + before);
      FrameOutput out = model.run_frame(0, frames[static_cast<std::size_t>(launch)], *snap.state,
                                        true, launch + schedule.heavy_duration, inst);
      AsyncLaneRow row;
      row.frame = launch;
      row.lane = 0;
      row.macs = out.macs;
      row.latency_units = latency_units_of(out.macs);
      row.commit_seen = launch + schedule.heavy_duration;
      {
        std::lock_guard<std::mutex> lock(rows_mu);
        run.rows.push_back(row);
      }
      mailbox.push(Commit{launch + schedule.heavy_duration,
                          std::make_shared<const MemoryState>(out.state)});
    }
  };

  std::vector<FrameResult> light_results;
  std::vector<AsyncLaneRow> light_rows;
  auto light_lane = [&]() {
    for (int k = 0; k < n; ++k) {
      Commit snap = mailbox.read(k, expected_commits(k));
      FrameOutput out =
          model.run_frame(1, frames[static_cast<std::size_t>(k)], *snap.state, false, k, inst);
      FrameResult r;
      r.frame = k;
      r.action = 1;
      r.detections = std::move(out.detections);
      r.macs = out.macs;
      r.latency_units = latency_units_of(out.macs);
      r.commit_seen = snap.commit_frame;
      light_results.push_back(std::move(r));

      AsyncLaneRow row;
      row.frame = k;
      row.lane = 1;
      row.macs = light_results.back().macs;
      row.latency_units = light_results.back().latency_units;
      row.commit_seen = snap.commit_frame;
      light_rows.push_back(row);
    }
  };

  if (parallel) {
    std::thread heavy(heavy_lane);
    light_lane();
    heavy.join();
  } else {
    heavy_lane();
    light_lane();
  }

  run.results = std::move(light_results);
  // Deterministic ledger order: frame-major, heavy lane first at a launch.
  run.rows.insert(run.rows.end(), light_rows.begin(), light_rows.end());
  std::sort(run.rows.begin(), run.rows.end(), [](const AsyncLaneRow& a, const AsyncLaneRow& b) {
    if (a.frame != b.frame) return a.frame < b.frame;
    return a.lane < b.lane;
  });
  return run;
}

LatencyReport summarize_latency(const AsyncRun& run) {
  LatencyReport rep;
  if (run.results.empty()) return rep;
  double total_latency = 0;
  long long total_macs = 0;
  for (const FrameResult& r : run.results) {
    rep.max_latency_units = std::max(rep.max_latency_units, r.latency_units);
    total_latency += r.latency_units;
  }
  for (const AsyncLaneRow& row : run.rows) total_macs += row.macs;
  rep.mean_latency_units = total_latency / static_cast<double>(run.results.size());
  rep.amortized_mac = static_cast<double>(total_macs) / static_cast<double>(run.results.size());
  return rep;
}

}  // namespace ivd
