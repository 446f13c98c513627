#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ivd/cell.hpp"
#include "ivd/quantize.hpp"
#include "ivd/tape.hpp"

namespace ivd {

// Normalized corner box, ymin/xmin/ymax/xmax in [0,1].
struct Box {
  float ymin = 0, xmin = 0, ymax = 0, xmax = 0;

  float area() const { return std::max(0.f, ymax - ymin) * std::max(0.f, xmax - xmin); }
};

inline float iou(const Box& a, const Box& b) {
  const float iy0 = std::max(a.ymin, b.ymin), ix0 = std::max(a.xmin, b.xmin);
  const float iy1 = std::min(a.ymax, b.ymax), ix1 = std::min(a.xmax, b.xmax);
  const float inter = std::max(0.f, iy1 - iy0) * std::max(0.f, ix1 - ix0);
  const float uni = a.area() + b.area() - inter;
  return uni > 0.f ? inter / uni : 0.f;
}

struct AnchorConfig {
  int grid_h = 4;
  int grid_w = 4;
  std::vector<double> scales = {0.3};
  std::vector<double> aspect_ratios = {1.0, 0.5, 2.0};

  int per_cell() const { return static_cast<int>(scales.size() * aspect_ratios.size()); }
  int count() const { return grid_h * grid_w * per_cell(); }
};

// Anchor boxes enumerated grid-major then scale then ratio, matching the
// prediction-map row layout.
inline std::vector<Box> make_anchors(const AnchorConfig& cfg) {
  std::vector<Box> out;
  out.reserve(static_cast<std::size_t>(cfg.count()));
  for (int y = 0; y < cfg.grid_h; ++y) {
    for (int x = 0; x < cfg.grid_w; ++x) {
      const float cy = (y + 0.5f) / cfg.grid_h;
      const float cx = (x + 0.5f) / cfg.grid_w;
      for (double s : cfg.scales) {
        for (double r : cfg.aspect_ratios) {
          const float w = static_cast<float>(s * std::sqrt(r));
          const float h = static_cast<float>(s / std::sqrt(r));
          out.push_back(Box{cy - h / 2, cx - w / 2, cy + h / 2, cx + w / 2});
        }
      }
    }
  }
  return out;
}

struct Detection {
  int class_id = 0;
  float score = 0;
  Box box;
  int anchor_index = 0;
};

struct DetectionSet {
  std::vector<Detection> items;
};

struct GtBox {
  int class_id = 0;
  Box box;
};

// ---------------------------------------------------------------------------
// SSD-style head: shared feature conv, then one conv for class logits and one
// for box offsets, all 3x3.
// ---------------------------------------------------------------------------

struct HeadConfig {
  int in_channels = 128;
  int feat_channels = 64;
  int num_classes = 4;  // foreground classes; logits add one background column
  AnchorConfig anchors;

  int logit_cols() const { return num_classes + 1; }
};

inline std::string head_param_name(const std::string& part, bool bias) {
  return "head/" + part + (bias ? "/bias" : "/w");
}

inline void init_head_params(ParamStore& store, const HeadConfig& cfg, Rng& rng) {
  auto conv = [&](const std::string& part, int in_ch, int out_ch) {
    Tensor w({out_ch, in_ch, 3, 3});
    fill_normal(w, rng, std::sqrt(2.0 / (in_ch * 9)));
    store.put(head_param_name(part, false), std::move(w));
    store.put(head_param_name(part, true), Tensor({out_ch}));
  };
  conv("feat", cfg.in_channels, cfg.feat_channels);
  conv("cls", cfg.feat_channels, cfg.anchors.per_cell() * cfg.logit_cols());
  conv("box", cfg.feat_channels, cfg.anchors.per_cell() * 4);
}

template <class T>
struct HeadOutputs {
  typename TapeT<T>::Id logits = -1;   // (num_anchors, classes+1)
  typename TapeT<T>::Id offsets = -1;  // (num_anchors, 4) as (dy,dx,dh,dw)
};

template <class T>
HeadOutputs<T> head_forward_tape(TapeT<T>& tape,
                                 const std::function<typename TapeT<T>::Id(const std::string&)>& param,
                                 const HeadConfig& cfg, typename TapeT<T>::Id m,
                                 GraphInstrument<T>* inst = nullptr) {
  using Id = typename TapeT<T>::Id;
  auto hook = [&](Id id, const char* site, RangeKind kind) {
    return inst ? inst->after_op(tape, id, std::string("head/") + site, kind) : id;
  };
  ConvSpec feat = cell_conv_spec(cfg.in_channels, cfg.feat_channels);
  Id f = tape.conv2d(m, param(head_param_name("feat", false)), param(head_param_name("feat", true)),
                     feat);
  f = hook(f, "feat/conv", RangeKind::Calibrated);
  f = tape.activation(f, Act::Relu6);
  f = hook(f, "feat/act", RangeKind::Relu06);

  ConvSpec cls = cell_conv_spec(cfg.feat_channels, cfg.anchors.per_cell() * cfg.logit_cols());
  Id lg = tape.conv2d(f, param(head_param_name("cls", false)), param(head_param_name("cls", true)),
                      cls);
  lg = hook(lg, "cls/conv", RangeKind::Calibrated);

  ConvSpec box = cell_conv_spec(cfg.feat_channels, cfg.anchors.per_cell() * 4);
  Id bx = tape.conv2d(f, param(head_param_name("box", false)), param(head_param_name("box", true)),
                      box);
  bx = hook(bx, "box/conv", RangeKind::Calibrated);

  HeadOutputs<T> out;
  out.logits = tape.anchor_rows(lg, cfg.anchors.per_cell(), cfg.logit_cols());
  out.offsets = tape.anchor_rows(bx, cfg.anchors.per_cell(), 4);
  return out;
}

// ---------------------------------------------------------------------------
// box encoding / decoding (center offsets with the standard SSD variances)
// ---------------------------------------------------------------------------

constexpr float kCenterVariance = 0.1f;
constexpr float kSizeVariance = 0.2f;

inline std::array<float, 4> encode_box(const Box& gt, const Box& anchor) {
  const float acy = (anchor.ymin + anchor.ymax) / 2, acx = (anchor.xmin + anchor.xmax) / 2;
  const float ah = anchor.ymax - anchor.ymin, aw = anchor.xmax - anchor.xmin;
  const float gcy = (gt.ymin + gt.ymax) / 2, gcx = (gt.xmin + gt.xmax) / 2;
  const float gh = gt.ymax - gt.ymin, gw = gt.xmax - gt.xmin;
  return {(gcy - acy) / ah / kCenterVariance, (gcx - acx) / aw / kCenterVariance,
          std::log(gh / ah) / kSizeVariance, std::log(gw / aw) / kSizeVariance};
}

inline Box decode_box(const float* offsets, const Box& anchor) {
  const float acy = (anchor.ymin + anchor.ymax) / 2, acx = (anchor.xmin + anchor.xmax) / 2;
  const float ah = anchor.ymax - anchor.ymin, aw = anchor.xmax - anchor.xmin;
  const float cy = acy + offsets[0] * kCenterVariance * ah;
  const float cx = acx + offsets[1] * kCenterVariance * aw;
  const float h = ah * std::exp(offsets[2] * kSizeVariance);
  const float w = aw * std::exp(offsets[3] * kSizeVariance);
  Box b{cy - h / 2, cx - w / 2, cy + h / 2, cx + w / 2};
  b.ymin = std::clamp(b.ymin, 0.f, 1.f);
  b.xmin = std::clamp(b.xmin, 0.f, 1.f);
  b.ymax = std::clamp(b.ymax, 0.f, 1.f);
  b.xmax = std::clamp(b.xmax, 0.f, 1.f);
  return b;
}

struct NmsParams {
  float iou_threshold = 0.6f;
  float score_floor = 0.01f;
  int keep_top = 100;
};

// Softmax scores, per-class greedy NMS, global top-k. Ties break toward the
// lower anchor index so output order never depends on sort internals.
inline DetectionSet decode_nms(const Tensor& logits, const Tensor& offsets,
                               const std::vector<Box>& anchors, const NmsParams& params = {}) {
  const int num_anchors = logits.dim(0);
  const int cols = logits.dim(1);
  DetectionSet out;
  std::vector<Detection> staged;
  for (int a = 0; a < num_anchors; ++a) {
    const float* row = logits.data() + static_cast<long long>(a) * cols;
    float mx = row[0];
    for (int k = 1; k < cols; ++k) mx = std::max(mx, row[k]);
    float denom = 0;
    for (int k = 0; k < cols; ++k) denom += std::exp(row[k] - mx);
    for (int k = 1; k < cols; ++k) {
      const float score = std::exp(row[k] - mx) / denom;
      if (score < params.score_floor) continue;
      const Box b = decode_box(offsets.data() + static_cast<long long>(a) * 4, anchors[a]);
      if (b.ymax <= b.ymin || b.xmax <= b.xmin) continue;
      staged.push_back(Detection{k - 1, score, b, a});
    }
  }
  std::sort(staged.begin(), staged.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.anchor_index < b.anchor_index;
  });
  for (const Detection& d : staged) {
    bool suppressed = false;
    for (const Detection& kept : out.items) {
      if (kept.class_id == d.class_id && iou(kept.box, d.box) > params.iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) out.items.push_back(d);
    if (static_cast<int>(out.items.size()) >= params.keep_top) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// multibox loss
// ---------------------------------------------------------------------------

struct LossParams {
  float match_iou = 0.5f;
  int hard_negative_ratio = 3;
  int min_negatives = 4;  // mined when a frame has no positives
};

struct MatchResult {
  std::vector<int> anchor_to_gt;  // -1 for background
  int num_positives = 0;
};

// Per ground-truth best anchor is force-matched first; remaining anchors take
// any ground truth they overlap at or above the threshold. Lower anchor index
// wins all ties.
inline MatchResult match_anchors(const std::vector<Box>& anchors, const std::vector<GtBox>& gts,
                                 float match_iou) {
  MatchResult r;
  r.anchor_to_gt.assign(anchors.size(), -1);
  for (int g = 0; g < static_cast<int>(gts.size()); ++g) {
    int best_a = -1;
    float best = -1.f;
    for (int a = 0; a < static_cast<int>(anchors.size()); ++a) {
      const float v = iou(anchors[static_cast<std::size_t>(a)], gts[static_cast<std::size_t>(g)].box);
      if (v > best) {
        best = v;
        best_a = a;
      }
    }
    if (best_a >= 0 && best > 0.f) r.anchor_to_gt[static_cast<std::size_t>(best_a)] = g;
  }
  for (int a = 0; a < static_cast<int>(anchors.size()); ++a) {
    if (r.anchor_to_gt[static_cast<std::size_t>(a)] >= 0) continue;
    int best_g = -1;
    float best = match_iou;
    for (int g = 0; g < static_cast<int>(gts.size()); ++g) {
      const float v = iou(anchors[static_cast<std::size_t>(a)], gts[static_cast<std::size_t>(g)].box);
      if (v > best || (v == best && best_g < 0 && v >= match_iou)) {
        best = v;
        best_g = g;
      }
    }
    if (best_g >= 0) r.anchor_to_gt[static_cast<std::size_t>(a)] = best_g;
  }
  for (int v : r.anchor_to_gt) {
    if (v >= 0) ++r.num_positives;
  }
  return r;
}

// Smooth-L1 localization on matched anchors plus softmax cross-entropy with
// 3:1 hard-negative mining, both normalized as documented in the README.
// Records the loss on the tape so gradients flow to the head and below.
template <class T>
typename TapeT<T>::Id multibox_loss_tape(TapeT<T>& tape, const HeadOutputs<T>& head,
                                         const std::vector<Box>& anchors,
                                         const std::vector<GtBox>& gts,
                                         const LossParams& params = {},
                                         MatchResult* match_out = nullptr) {
  const TensorT<T>& logits = tape.tensor(head.logits);
  const int num_anchors = logits.dim(0);
  const int cols = logits.dim(1);
  MatchResult match = match_anchors(anchors, gts, params.match_iou);
  if (match_out) *match_out = match;

  // Mine hardest negatives by background probability (ascending); ties break
  // toward the lower anchor index.
  std::vector<std::pair<T, int>> neg_rank;
  for (int a = 0; a < num_anchors; ++a) {
    if (match.anchor_to_gt[static_cast<std::size_t>(a)] >= 0) continue;
    const T* row = logits.data() + static_cast<long long>(a) * cols;
    T mx = row[0];
    for (int k = 1; k < cols; ++k) mx = std::max(mx, row[k]);
    T denom = 0;
    for (int k = 0; k < cols; ++k) denom += std::exp(row[k] - mx);
    neg_rank.push_back({std::exp(row[0] - mx) / denom, a});
  }
  std::sort(neg_rank.begin(), neg_rank.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second < b.second;
  });
  const int want_neg = match.num_positives > 0 ? params.hard_negative_ratio * match.num_positives
                                               : params.min_negatives;
  const int num_neg = std::min<int>(want_neg, static_cast<int>(neg_rank.size()));

  std::vector<int> targets(static_cast<std::size_t>(num_anchors), 0);
  std::vector<T> cls_weights(static_cast<std::size_t>(num_anchors), T(0));
  const T cls_norm = T(1) / static_cast<T>(std::max(1, match.num_positives + num_neg));
  for (int a = 0; a < num_anchors; ++a) {
    const int g = match.anchor_to_gt[static_cast<std::size_t>(a)];
    if (g >= 0) {
      targets[static_cast<std::size_t>(a)] = gts[static_cast<std::size_t>(g)].class_id + 1;
      cls_weights[static_cast<std::size_t>(a)] = cls_norm;
    }
  }
  for (int i = 0; i < num_neg; ++i) {
    cls_weights[static_cast<std::size_t>(neg_rank[static_cast<std::size_t>(i)].second)] = cls_norm;
  }
  auto ce = tape.softmax_cross_entropy(head.logits, std::move(targets), std::move(cls_weights));

  TensorT<T> box_targets({num_anchors, 4});
  TensorT<T> box_weights({num_anchors, 4});
  const T loc_norm = T(1) / static_cast<T>(std::max(1, match.num_positives));
  for (int a = 0; a < num_anchors; ++a) {
    const int g = match.anchor_to_gt[static_cast<std::size_t>(a)];
    if (g < 0) continue;
    const auto enc = encode_box(gts[static_cast<std::size_t>(g)].box, anchors[static_cast<std::size_t>(a)]);
    for (int k = 0; k < 4; ++k) {
      box_targets.at2(a, k) = static_cast<T>(enc[static_cast<std::size_t>(k)]);
      box_weights.at2(a, k) = loc_norm;
    }
  }
  auto l1 = tape.smooth_l1(head.offsets, std::move(box_targets), std::move(box_weights));
  return tape.add(ce, l1);
}

// ---------------------------------------------------------------------------
// mAP@0.5 evaluation (area under the continuous precision/recall curve)
// ---------------------------------------------------------------------------

struct ApResult {
  std::vector<double> per_class;  // NaN where a class has no ground truth
  double map = 0;
};

ApResult evaluate_map(const std::vector<DetectionSet>& detections,
                      const std::vector<std::vector<GtBox>>& ground_truth, int num_classes,
                      float iou_threshold = 0.5f);

}  // namespace ivd
