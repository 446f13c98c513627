#include "ivd/model.hpp"

#include <json.hpp>

namespace ivd {

namespace {

ConvSpec conv(int in, int out, int k, int stride, int pad) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel_h = s.kernel_w = k;
  s.stride = stride;
  s.padding = pad;
  return s;
}

nlohmann::json conv_to_json(const ConvSpec& s) {
  return {{"in", s.in_channels},     {"out", s.out_channels}, {"kh", s.kernel_h},
          {"kw", s.kernel_w},        {"stride", s.stride},    {"padding", s.padding},
          {"groups", s.groups},      {"depthwise", s.depthwise}};
}

ConvSpec conv_from_json(const nlohmann::json& j) {
  ConvSpec s;
  s.in_channels = j.at("in");
  s.out_channels = j.at("out");
  s.kernel_h = j.at("kh");
  s.kernel_w = j.at("kw");
  s.stride = j.at("stride");
  s.padding = j.at("padding");
  s.groups = j.value("groups", 1);
  s.depthwise = j.value("depthwise", false);
  return s;
}

nlohmann::json extractor_to_json(const ExtractorSpec& e) {
  nlohmann::json j;
  j["name"] = e.name;
  j["input_resolution"] = e.input_resolution;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : e.layers) j["layers"].push_back(conv_to_json(l));
  return j;
}

ExtractorSpec extractor_from_json(const nlohmann::json& j) {
  ExtractorSpec e;
  e.name = j.at("name");
  e.input_resolution = j.at("input_resolution");
  for (const auto& l : j.at("layers")) e.layers.push_back(conv_from_json(l));
  e.finalize();
  return e;
}

}  // namespace

ModelConfig ModelConfig::desk_default() {
  ModelConfig cfg;
  cfg.frame_resolution = 64;
  cfg.num_classes = 4;

  cfg.f0.name = "f0";
  cfg.f0.input_resolution = 64;
  cfg.f0.layers = {conv(3, 16, 3, 2, 1),  conv(16, 24, 3, 2, 1), conv(24, 32, 3, 1, 1),
                   conv(32, 48, 3, 2, 1), conv(48, 64, 3, 1, 1), conv(64, 64, 3, 2, 1)};
  cfg.f0.finalize();

  // The light extractor runs at half input resolution; its last conv keeps
  // stride low so the output grid matches the heavy extractor's.
  cfg.f1.name = "f1";
  cfg.f1.input_resolution = 32;
  cfg.f1.layers = {conv(3, 24, 3, 4, 1), conv(24, 64, 3, 2, 1)};
  cfg.f1.finalize();

  cfg.cell.input_channels = 64;
  cfg.cell.state_channels = 64;
  cfg.cell.groups = 4;
  cfg.cell.height = 4;
  cfg.cell.width = 4;

  cfg.head.in_channels = cfg.cell.output_channels();
  cfg.head.feat_channels = 64;
  cfg.head.num_classes = 4;
  cfg.head.anchors.grid_h = 4;
  cfg.head.anchors.grid_w = 4;
  cfg.head.anchors.scales = {0.3};
  cfg.head.anchors.aspect_ratios = {1.0, 0.5, 2.0};

  cfg.validate();
  return cfg;
}

void ModelConfig::validate() const {
  ExtractorSpec a = f0, b = f1;
  a.finalize();
  b.finalize();
  if (a.out_channels != b.out_channels || a.out_h != b.out_h || a.out_w != b.out_w) {
    throw std::invalid_argument("extractors disagree on output shape: f0 (" +
                                std::to_string(a.out_channels) + "," + std::to_string(a.out_h) +
                                "," + std::to_string(a.out_w) + ") vs f1 (" +
                                std::to_string(b.out_channels) + "," + std::to_string(b.out_h) +
                                "," + std::to_string(b.out_w) + ")");
  }
  if (a.frame_macs <= b.frame_macs) {
    throw std::invalid_argument("f0 must cost more multiply-adds than f1");
  }
  if (a.out_channels != cell.input_channels || a.out_h != cell.height || a.out_w != cell.width) {
    throw std::invalid_argument("extractor output shape does not match the cell grid");
  }
  cell.validate();
  if (head.in_channels != cell.output_channels()) {
    throw std::invalid_argument("head input channels must equal the cell output width " +
                                std::to_string(cell.output_channels()));
  }
  if (head.anchors.grid_h != cell.height || head.anchors.grid_w != cell.width) {
    throw std::invalid_argument("anchor grid must match the feature grid");
  }
  if (f1.input_resolution * 2 != frame_resolution) {
    throw std::invalid_argument("light extractor input must be half the frame resolution");
  }
  if (f0.input_resolution != frame_resolution) {
    throw std::invalid_argument("heavy extractor input must match the frame resolution");
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["frame_resolution"] = frame_resolution;
  j["num_classes"] = num_classes;
  j["f0"] = extractor_to_json(f0);
  j["f1"] = extractor_to_json(f1);
  j["cell"] = {{"input_channels", cell.input_channels},
               {"state_channels", cell.state_channels},
               {"groups", cell.groups},
               {"height", cell.height},
               {"width", cell.width}};
  j["head"] = {{"feat_channels", head.feat_channels},
               {"scales", head.anchors.scales},
               {"aspect_ratios", head.anchors.aspect_ratios}};
  j["nms"] = {{"iou_threshold", nms.iou_threshold},
              {"score_floor", nms.score_floor},
              {"keep_top", nms.keep_top}};
  return j.dump(1, '\t');
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig cfg = desk_default();
  if (j.contains("frame_resolution")) cfg.frame_resolution = j.at("frame_resolution");
  if (j.contains("num_classes")) cfg.num_classes = j.at("num_classes");
  if (j.contains("f0")) cfg.f0 = extractor_from_json(j.at("f0"));
  if (j.contains("f1")) cfg.f1 = extractor_from_json(j.at("f1"));
  if (j.contains("cell")) {
    const auto& c = j.at("cell");
    cfg.cell.input_channels = c.value("input_channels", cfg.cell.input_channels);
    cfg.cell.state_channels = c.value("state_channels", cfg.cell.state_channels);
    cfg.cell.groups = c.value("groups", cfg.cell.groups);
    cfg.cell.height = c.value("height", cfg.cell.height);
    cfg.cell.width = c.value("width", cfg.cell.width);
  }
  if (j.contains("head")) {
    const auto& h = j.at("head");
    cfg.head.feat_channels = h.value("feat_channels", cfg.head.feat_channels);
    if (h.contains("scales")) cfg.head.anchors.scales = h.at("scales").get<std::vector<double>>();
    if (h.contains("aspect_ratios")) {
      cfg.head.anchors.aspect_ratios = h.at("aspect_ratios").get<std::vector<double>>();
    }
  }
  if (j.contains("nms")) {
    const auto& n = j.at("nms");
    cfg.nms.iou_threshold = n.value("iou_threshold", cfg.nms.iou_threshold);
    cfg.nms.score_floor = n.value("score_floor", cfg.nms.score_floor);
    cfg.nms.keep_top = n.value("keep_top", cfg.nms.keep_top);
  }
  cfg.head.num_classes = cfg.num_classes;
  cfg.head.in_channels = cfg.cell.output_channels();
  cfg.head.anchors.grid_h = cfg.cell.height;
  cfg.head.anchors.grid_w = cfg.cell.width;
  cfg.validate();
  return cfg;
}

DetectionModel::DetectionModel(const ModelConfig& cfg, const ParamStore& params)
    : cfg_(cfg), params_(params), anchors_(make_anchors(cfg.head.anchors)) {
  cfg_.f0.finalize();
  cfg_.f1.finalize();
  cfg_.validate();
}

void DetectionModel::init_params(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  ExtractorSpec f0 = cfg.f0, f1 = cfg.f1;
  f0.finalize();
  f1.finalize();
  init_extractor_params(store, f0, rng);
  init_extractor_params(store, f1, rng);
  init_cell_params(store, cfg.cell, rng);
  init_head_params(store, cfg.head, rng);
}

FrameOutput DetectionModel::run_frame(int extractor_id, const Tensor& frame,
                                      const MemoryState& state, bool commit,
                                      long long step_index, GraphInstrument<float>* inst,
                                      bool decode) const {
  if (extractor_id != 0 && extractor_id != 1) {
    throw std::invalid_argument("extractor id must be 0 or 1");
  }
  const ExtractorSpec& spec = extractor_id == 0 ? cfg_.f0 : cfg_.f1;
  if (frame.dim(2) != cfg_.frame_resolution || frame.dim(3) != cfg_.frame_resolution) {
    throw std::invalid_argument("frame size " + frame.shape_str() + " does not match model " +
                                std::to_string(cfg_.frame_resolution));
  }

  Tape tape;
  std::map<std::string, Tape::Id> ids;
  auto param = [&](const std::string& name) {
    auto it = ids.find(name);
    if (it != ids.end()) return it->second;
    auto id = tape.value(params_.at(name), false);
    ids.emplace(name, id);
    return id;
  };

  Tensor input = extractor_id == 0 ? frame : downsample_half(frame);
  auto frame_id = tape.value(std::move(input), false);
  auto features = extractor_forward_tape<float>(tape, param, spec, frame_id, inst);
  auto c_id = tape.value(state.c, false);
  auto h_id = tape.value(state.h, false);
  auto step = cell_step_tape<float>(tape, param, cfg_.cell, features, c_id, h_id, inst,
                                    extractor_output_site(spec));
  auto head = head_forward_tape<float>(tape, param, cfg_.head, step.m, inst);

  FrameOutput out;
  out.feature_m = tape.tensor(step.m);
  out.logits = tape.tensor(head.logits);
  out.offsets = tape.tensor(head.offsets);
  if (decode) out.detections = decode_nms(out.logits, out.offsets, anchors_, cfg_.nms);
  if (commit) {
    out.state = MemoryState{tape.tensor(step.c), tape.tensor(step.h), step_index};
  } else {
    out.state = state;
  }
  out.macs = tape.macs();
  return out;
}

long long DetectionModel::extractor_macs(int extractor_id) const {
  return extractor_id == 0 ? cfg_.f0.frame_macs : cfg_.f1.frame_macs;
}

long long DetectionModel::head_macs() const {
  Tape tape;
  std::map<std::string, Tape::Id> ids;
  auto param = [&](const std::string& name) {
    auto it = ids.find(name);
    if (it != ids.end()) return it->second;
    auto id = tape.value(params_.at(name), false);
    ids.emplace(name, id);
    return id;
  };
  auto m = tape.value(
      Tensor({1, cfg_.cell.output_channels(), cfg_.cell.height, cfg_.cell.width}), false);
  head_forward_tape<float>(tape, param, cfg_.head, m);
  return tape.macs();
}

long long DetectionModel::frame_macs(int extractor_id) const {
  return extractor_macs(extractor_id) + cell_step_macs() + head_macs();
}

void quantize_weights_inplace(ParamStore& store) {
  for (const std::string& name : store.names()) {
    QuantParams range;
    store.at(name) = quantize_weight_tensor(store.at(name), &range);
    store.weight_ranges()[name] = range;
  }
}

}  // namespace ivd
