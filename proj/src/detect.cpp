#include "ivd/detect.hpp"

#include <limits>
#include <tuple>

namespace ivd {

ApResult evaluate_map(const std::vector<DetectionSet>& detections,
                      const std::vector<std::vector<GtBox>>& ground_truth, int num_classes,
                      float iou_threshold) {
  if (detections.size() != ground_truth.size()) {
    throw std::invalid_argument("evaluate_map: detections and ground truth frame counts differ");
  }
  ApResult result;
  result.per_class.assign(static_cast<std::size_t>(num_classes),
                          std::numeric_limits<double>::quiet_NaN());
  double ap_sum = 0;
  int ap_classes = 0;

  for (int cls = 0; cls < num_classes; ++cls) {
    long long total_gt = 0;
    for (const auto& frame_gt : ground_truth) {
      for (const auto& g : frame_gt) {
        if (g.class_id == cls) ++total_gt;
      }
    }
    if (total_gt == 0) continue;  // class absent from the eval set

    // (score, frame, rank-within-frame) for a stable, content-defined order.
    struct Entry {
      float score;
      int frame;
      int index;
    };
    std::vector<Entry> entries;
    for (int f = 0; f < static_cast<int>(detections.size()); ++f) {
      const auto& items = detections[static_cast<std::size_t>(f)].items;
      for (int i = 0; i < static_cast<int>(items.size()); ++i) {
        if (items[static_cast<std::size_t>(i)].class_id == cls) {
          entries.push_back({items[static_cast<std::size_t>(i)].score, f, i});
        }
      }
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      return std::tie(b.score, a.frame, a.index) < std::tie(a.score, b.frame, b.index);
    });

    std::vector<std::vector<char>> gt_used(ground_truth.size());
    for (std::size_t f = 0; f < ground_truth.size(); ++f) {
      gt_used[f].assign(ground_truth[f].size(), 0);
    }

    std::vector<double> precision, recall;
    long long tp = 0, fp = 0;
    for (const Entry& e : entries) {
      const auto& det = detections[static_cast<std::size_t>(e.frame)]
                            .items[static_cast<std::size_t>(e.index)];
      const auto& frame_gt = ground_truth[static_cast<std::size_t>(e.frame)];
      int best_g = -1;
      float best = iou_threshold;
      for (int g = 0; g < static_cast<int>(frame_gt.size()); ++g) {
        const auto& gt = frame_gt[static_cast<std::size_t>(g)];
        if (gt.class_id != cls || gt_used[static_cast<std::size_t>(e.frame)][static_cast<std::size_t>(g)]) {
          continue;
        }
        const float v = iou(det.box, gt.box);
        if (v >= best && (best_g < 0 || v > best)) {
          best = v;
          best_g = g;
        }
      }
      if (best_g >= 0) {
        gt_used[static_cast<std::size_t>(e.frame)][static_cast<std::size_t>(best_g)] = 1;
        ++tp;
      } else {
        ++fp;
      }
      precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
      recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
    }

    // Area under the (monotone-envelope) precision/recall curve.
    std::vector<double> envelope(precision.size());
    double running = 0;
    for (std::size_t i = precision.size(); i-- > 0;) {
      running = std::max(running, precision[i]);
      envelope[i] = running;
    }
    double ap = 0;
    double prev_recall = 0;
    for (std::size_t i = 0; i < recall.size(); ++i) {
      ap += (recall[i] - prev_recall) * envelope[i];
      prev_recall = recall[i];
    }
    result.per_class[static_cast<std::size_t>(cls)] = ap;
    ap_sum += ap;
    ++ap_classes;
  }
  result.map = ap_classes > 0 ? ap_sum / ap_classes : 0.0;
  return result;
}

}  // namespace ivd
