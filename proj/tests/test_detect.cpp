#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ivd/detect.hpp"
#include "ivd/model.hpp"
#include "oracles.hpp"

using namespace ivd;

namespace {

AnchorConfig desk_anchors() {
  AnchorConfig a;
  a.grid_h = a.grid_w = 4;
  a.scales = {0.3};
  a.aspect_ratios = {1.0, 0.5, 2.0};
  return a;
}

Tensor uniform_logits(int anchors, int cols) { return Tensor({anchors, cols}); }

}  // namespace

TEST_CASE("anchor enumeration") {
  const AnchorConfig cfg = desk_anchors();
  CHECK(cfg.count() == 48);
  auto anchors = make_anchors(cfg);
  REQUIRE(static_cast<int>(anchors.size()) == 48);
  for (const Box& b : anchors) {
    CHECK(b.ymax > b.ymin);
    CHECK(b.xmax > b.xmin);
  }
  // Ratio-1 anchor at cell (0,0) is square and centered at (1/8, 1/8).
  const Box& first = anchors[0];
  CHECK((first.ymin + first.ymax) / 2 == doctest::Approx(0.125));
  CHECK(first.ymax - first.ymin == doctest::Approx(0.3));
}

TEST_CASE("iou identities") {
  Box a{0.1f, 0.1f, 0.5f, 0.5f};
  Box b{0.6f, 0.6f, 0.9f, 0.9f};
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, b) == 0.0f);
}

TEST_CASE("zero offsets decode to the anchors themselves") {
  const auto anchors = make_anchors(desk_anchors());
  const int n = static_cast<int>(anchors.size());
  Tensor logits = uniform_logits(n, 5);
  for (int a = 0; a < n; ++a) logits.at2(a, 0) = 8.f;  // confident background
  // anchor 15: ratio-1 anchor of cell (1,1), fully inside the image
  logits.at2(15, 2) = 12.f;
  Tensor offsets({n, 4});
  auto dets = decode_nms(logits, offsets, anchors);
  REQUIRE(!dets.items.empty());
  const Detection& top = dets.items[0];
  CHECK(top.anchor_index == 15);
  CHECK(top.class_id == 1);
  CHECK(top.box.ymin == doctest::Approx(anchors[15].ymin));
  CHECK(top.box.xmax == doctest::Approx(anchors[15].xmax));
}

TEST_CASE("nms keeps one of two identical boxes and orders by score") {
  const auto anchors = make_anchors(desk_anchors());
  Tensor logits = uniform_logits(48, 5);
  for (int a = 0; a < 48; ++a) logits.at2(a, 0) = 8.f;  // confident background
  // Two anchors decoded to the same box: 0 and 12 share the ratio, sit in
  // adjacent cells, and offsets shift 12 onto 0.
  logits.at2(0, 1) = 14.f;   // score ~0.9
  logits.at2(12, 1) = 12.f;  // lower score, same decoded box
  Tensor offsets({48, 4});
  // anchor 12 sits one cell below; shift it up onto anchor 0's box.
  const Box& a0 = anchors[0];
  const Box& a12 = anchors[12];
  const float dy = ((a0.ymin + a0.ymax) / 2 - (a12.ymin + a12.ymax) / 2) /
                   (a12.ymax - a12.ymin) / kCenterVariance;
  offsets.at2(12, 0) = dy;
  auto dets = decode_nms(logits, offsets, anchors);
  int count_class0 = 0;
  for (const auto& d : dets.items) {
    if (d.class_id == 0) ++count_class0;
  }
  CHECK(count_class0 == 1);
  for (std::size_t i = 1; i < dets.items.size(); ++i) {
    CHECK(dets.items[i - 1].score >= dets.items[i].score);
  }
}

TEST_CASE("encode/decode round trip") {
  const auto anchors = make_anchors(desk_anchors());
  Box gt{0.2f, 0.3f, 0.55f, 0.62f};
  const auto enc = encode_box(gt, anchors[21]);
  float offs[4] = {enc[0], enc[1], enc[2], enc[3]};
  Box back = decode_box(offs, anchors[21]);
  CHECK(back.ymin == doctest::Approx(gt.ymin).epsilon(1e-5));
  CHECK(back.xmax == doctest::Approx(gt.xmax).epsilon(1e-5));
}

TEST_CASE("matching: forced best anchor plus threshold matches") {
  const auto anchors = make_anchors(desk_anchors());
  std::vector<GtBox> gts = {GtBox{2, Box{0.4f, 0.4f, 0.68f, 0.68f}}};
  auto match = match_anchors(anchors, gts, 0.5f);
  CHECK(match.num_positives >= 1);
  // A tiny box overlapping nothing at threshold still gets its best anchor.
  std::vector<GtBox> tiny = {GtBox{0, Box{0.01f, 0.01f, 0.05f, 0.05f}}};
  auto match2 = match_anchors(anchors, tiny, 0.5f);
  CHECK(match2.num_positives == 1);
}

TEST_CASE("empty ground truth: closed-form background loss on mined negatives") {
  const auto anchors = make_anchors(desk_anchors());
  Tape tape;
  HeadOutputs<float> head;
  head.logits = tape.value(Tensor({48, 4}));  // 3 classes + background, uniform
  head.offsets = tape.value(Tensor({48, 4}));
  auto loss = multibox_loss_tape<float>(tape, head, anchors, {});
  CHECK(tape.tensor(loss)[0] == doctest::Approx(std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("perfect predictions drive the loss to zero as logits saturate") {
  const auto anchors = make_anchors(desk_anchors());
  std::vector<GtBox> gts = {GtBox{1, Box{0.38f, 0.38f, 0.66f, 0.66f}}};
  auto match = match_anchors(anchors, gts, 0.5f);
  REQUIRE(match.num_positives >= 1);

  double previous = 1e9;
  for (double sharp : {3.0, 8.0, 16.0}) {
    Tensor logits({48, 5});
    Tensor offsets({48, 4});
    for (int a = 0; a < 48; ++a) {
      const int g = match.anchor_to_gt[static_cast<std::size_t>(a)];
      const int target = g >= 0 ? gts[static_cast<std::size_t>(g)].class_id + 1 : 0;
      logits.at2(a, target) = static_cast<float>(sharp);
      if (g >= 0) {
        const auto enc = encode_box(gts[static_cast<std::size_t>(g)].box,
                                    anchors[static_cast<std::size_t>(a)]);
        for (int k = 0; k < 4; ++k) offsets.at2(a, k) = enc[static_cast<std::size_t>(k)];
      }
    }
    Tape tape;
    HeadOutputs<float> head;
    head.logits = tape.value(logits);
    head.offsets = tape.value(offsets);
    auto loss = multibox_loss_tape<float>(tape, head, anchors, gts);
    const double v = tape.tensor(loss)[0];
    CHECK(v < previous);
    previous = v;
  }
  CHECK(previous < 0.01);
}

TEST_CASE("multibox loss decreases along its own gradient") {
  Rng rng(3);
  const auto anchors = make_anchors(desk_anchors());
  std::vector<GtBox> gts = {GtBox{0, Box{0.1f, 0.1f, 0.4f, 0.42f}},
                            GtBox{3, Box{0.55f, 0.5f, 0.85f, 0.8f}}};
  Tensor logits({48, 5});
  Tensor offsets({48, 4});
  fill_uniform(logits, rng, -0.5, 0.5);
  fill_uniform(offsets, rng, -0.5, 0.5);

  auto eval_loss = [&](const Tensor& lg, const Tensor& off, Tensor* glg, Tensor* goff) {
    Tape tape;
    HeadOutputs<float> head;
    head.logits = tape.value(lg);
    head.offsets = tape.value(off);
    auto loss = multibox_loss_tape<float>(tape, head, anchors, gts);
    const double v = tape.tensor(loss)[0];
    if (glg) {
      tape.backward(loss);
      *glg = tape.grad(head.logits);
      *goff = tape.grad(head.offsets);
    }
    return v;
  };
  Tensor glg, goff;
  const double base = eval_loss(logits, offsets, &glg, &goff);
  for (double step : {1e-3, 1e-2}) {
    Tensor lg2 = logits, off2 = offsets;
    for (long long i = 0; i < lg2.numel(); ++i) lg2[i] -= static_cast<float>(step) * glg[i];
    for (long long i = 0; i < off2.numel(); ++i) off2[i] -= static_cast<float>(step) * goff[i];
    CHECK(eval_loss(lg2, off2, nullptr, nullptr) < base);
  }
}

TEST_CASE("multibox loss gradient matches finite differences") {
  Rng rng(7);
  const auto anchors = make_anchors(desk_anchors());
  std::vector<GtBox> gts = {GtBox{1, Box{0.32f, 0.3f, 0.62f, 0.64f}}};
  DTensor logits({48, 5});
  DTensor offsets({48, 4});
  fill_uniform(logits, rng, -0.8, 0.8);
  fill_uniform(offsets, rng, -0.8, 0.8);

  auto loss_fn = [&](const std::vector<DTensor>& p) {
    DTape tape;
    HeadOutputs<double> head;
    head.logits = tape.value(p[0]);
    head.offsets = tape.value(p[1]);
    return tape.tensor(multibox_loss_tape<double>(tape, head, anchors, gts))[0];
  };
  DTape tape;
  HeadOutputs<double> head;
  head.logits = tape.value(logits);
  head.offsets = tape.value(offsets);
  tape.backward(multibox_loss_tape<double>(tape, head, anchors, gts));
  auto check = oracles::check_gradients(loss_fn, {logits, offsets},
                                        {tape.grad(head.logits), tape.grad(head.offsets)});
  INFO(check.first_divergence);
  CHECK(check.pass);
}

TEST_CASE("mAP basics") {
  // One frame; ground truth one box of class 0.
  std::vector<std::vector<GtBox>> gt(1);
  gt[0].push_back(GtBox{0, Box{0.2f, 0.2f, 0.5f, 0.5f}});

  SUBCASE("exact detections give mAP 1") {
    std::vector<DetectionSet> dets(1);
    dets[0].items.push_back(Detection{0, 0.9f, Box{0.2f, 0.2f, 0.5f, 0.5f}, 0});
    CHECK(evaluate_map(dets, gt, 1).map == doctest::Approx(1.0));
  }
  SUBCASE("no detections give mAP 0") {
    std::vector<DetectionSet> dets(1);
    CHECK(evaluate_map(dets, gt, 1).map == doctest::Approx(0.0));
  }
  SUBCASE("TP then lower-scored FP keeps AP 1; reversed scores halve it") {
    std::vector<DetectionSet> dets(1);
    dets[0].items.push_back(Detection{0, 0.9f, Box{0.2f, 0.2f, 0.5f, 0.5f}, 0});
    dets[0].items.push_back(Detection{0, 0.5f, Box{0.7f, 0.7f, 0.9f, 0.9f}, 1});
    CHECK(evaluate_map(dets, gt, 1).map == doctest::Approx(1.0));

    std::vector<DetectionSet> reversed(1);
    reversed[0].items.push_back(Detection{0, 0.9f, Box{0.7f, 0.7f, 0.9f, 0.9f}, 1});
    reversed[0].items.push_back(Detection{0, 0.5f, Box{0.2f, 0.2f, 0.5f, 0.5f}, 0});
    CHECK(evaluate_map(reversed, gt, 1).map == doctest::Approx(0.5));
  }
  SUBCASE("classes without ground truth are excluded from the mean") {
    std::vector<DetectionSet> dets(1);
    dets[0].items.push_back(Detection{0, 0.9f, Box{0.2f, 0.2f, 0.5f, 0.5f}, 0});
    const auto r = evaluate_map(dets, gt, 3);
    CHECK(r.map == doctest::Approx(1.0));
    CHECK(std::isnan(r.per_class[1]));
  }
}

TEST_CASE("mAP agrees with the brute-force oracle on random scenes") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const int frames = 3, classes = 3;
    std::vector<std::vector<GtBox>> gt(frames);
    std::vector<DetectionSet> dets(frames);
    for (int f = 0; f < frames; ++f) {
      const int n_gt = rng.uniform_int(0, 3);
      for (int i = 0; i < n_gt; ++i) {
        const float y = static_cast<float>(rng.uniform(0, 0.6));
        const float x = static_cast<float>(rng.uniform(0, 0.6));
        const float s = static_cast<float>(rng.uniform(0.15, 0.4));
        gt[static_cast<std::size_t>(f)].push_back(
            GtBox{rng.uniform_int(0, classes - 1), Box{y, x, y + s, x + s}});
      }
      const int n_det = rng.uniform_int(0, 5);
      for (int i = 0; i < n_det; ++i) {
        Detection d;
        d.class_id = rng.uniform_int(0, classes - 1);
        d.score = static_cast<float>(rng.uniform(0.05, 1.0));
        const float y = static_cast<float>(rng.uniform(0, 0.6));
        const float x = static_cast<float>(rng.uniform(0, 0.6));
        const float s = static_cast<float>(rng.uniform(0.15, 0.4));
        d.box = Box{y, x, y + s, x + s};
        d.anchor_index = i;
        dets[static_cast<std::size_t>(f)].items.push_back(d);
      }
      std::sort(dets[static_cast<std::size_t>(f)].items.begin(),
                dets[static_cast<std::size_t>(f)].items.end(),
                [](const Detection& a, const Detection& b) { return a.score > b.score; });
    }
    const auto fast = evaluate_map(dets, gt, classes);
    for (int cls = 0; cls < classes; ++cls) {
      const double slow = oracles::brute_force_ap(dets, gt, cls);
      if (std::isnan(slow)) {
        CHECK(std::isnan(fast.per_class[static_cast<std::size_t>(cls)]));
      } else {
        CHECK(fast.per_class[static_cast<std::size_t>(cls)] ==
              doctest::Approx(slow).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("mAP is invariant under strictly monotone score rescaling") {
  Rng rng(23);
  std::vector<std::vector<GtBox>> gt(2);
  gt[0].push_back(GtBox{0, Box{0.1f, 0.1f, 0.4f, 0.4f}});
  gt[1].push_back(GtBox{0, Box{0.5f, 0.5f, 0.8f, 0.8f}});
  std::vector<DetectionSet> dets(2);
  for (int f = 0; f < 2; ++f) {
    for (int i = 0; i < 4; ++i) {
      Detection d;
      d.class_id = 0;
      d.score = static_cast<float>(rng.uniform(0.1, 0.9));
      const float y = static_cast<float>(rng.uniform(0, 0.5));
      d.box = Box{y, y, y + 0.3f, y + 0.3f};
      d.anchor_index = i;
      dets[static_cast<std::size_t>(f)].items.push_back(d);
    }
  }
  const double base = evaluate_map(dets, gt, 1).map;
  auto rescaled = dets;
  for (auto& set : rescaled) {
    for (auto& d : set.items) d.score = std::tanh(2.f * d.score) * 0.5f + 0.4f;
  }
  CHECK(evaluate_map(rescaled, gt, 1).map == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("head prediction shapes are fixed by the anchor layout") {
  ModelConfig cfg = ModelConfig::desk_default();
  ParamStore store;
  DetectionModel::init_params(store, cfg, 5);
  DetectionModel model(cfg, store);

  Tensor frame({1, 3, 64, 64});
  auto out = model.run_frame(0, frame, model.initial_state(), true, 0);
  CHECK(out.logits.shape() == std::vector<int>{48, 5});
  CHECK(out.offsets.shape() == std::vector<int>{48, 4});

  // Zero head weights: uniform class logits everywhere.
  for (const auto& part : {"cls", "box"}) {
    Tensor& w = store.at(head_param_name(part, false));
    for (long long i = 0; i < w.numel(); ++i) w[i] = 0;
  }
  auto out2 = model.run_frame(0, frame, model.initial_state(), true, 0);
  for (int a = 0; a < 48; ++a) {
    for (int k = 0; k < 5; ++k) CHECK(out2.logits.at2(a, k) == out2.logits.at2(0, 0));
  }
}

TEST_CASE("both extractors share an output shape and the light one is cheaper") {
  ModelConfig cfg = ModelConfig::desk_default();
  ParamStore store;
  DetectionModel::init_params(store, cfg, 5);
  DetectionModel model(cfg, store);

  Rng rng(9);
  Tensor frame({1, 3, 64, 64});
  fill_uniform(frame, rng, 0, 1);
  auto heavy = model.run_frame(0, frame, model.initial_state(), true, 0);
  auto light = model.run_frame(1, frame, model.initial_state(), true, 0);
  CHECK(heavy.feature_m.shape() == light.feature_m.shape());

  CHECK(model.extractor_macs(1) * 5 < model.extractor_macs(0));

  // Determinism: bit-identical features on a repeated run.
  auto heavy2 = model.run_frame(0, frame, model.initial_state(), true, 0);
  for (long long i = 0; i < heavy.feature_m.numel(); ++i) {
    CHECK(heavy.feature_m[i] == heavy2.feature_m[i]);
  }

  Tensor bad({1, 3, 32, 32});
  CHECK_THROWS_AS(model.run_frame(0, bad, model.initial_state(), true, 0),
                  std::invalid_argument);
}
