#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ivd/async.hpp"
#include "ivd/manifest.hpp"
#include "ivd/model.hpp"
#include "ivd/policy.hpp"
#include "ivd/schedule.hpp"
#include "ivd/synth.hpp"
#include "ivd/train.hpp"

namespace fs = std::filesystem;
using namespace ivd;

namespace {

struct CommonOpts {
  std::uint64_t seed = 1;
  std::string config_path;
  std::string out_dir = "out";
};

ModelConfig load_model_config(const CommonOpts& opts) {
  if (opts.config_path.empty()) return ModelConfig::desk_default();
  std::ifstream f(opts.config_path);
  if (!f) throw std::runtime_error("cannot read config '" + opts.config_path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  const nlohmann::json j = nlohmann::json::parse(ss.str());
  return ModelConfig::from_json(j.contains("model") ? j.at("model").dump() : ss.str());
}

nlohmann::json config_section(const CommonOpts& opts, const std::string& key) {
  if (opts.config_path.empty()) return nlohmann::json::object();
  std::ifstream f(opts.config_path);
  if (!f) throw std::runtime_error("cannot read config '" + opts.config_path + "'");
  const nlohmann::json j = nlohmann::json::parse(f);
  return j.contains(key) ? j.at(key) : nlohmann::json::object();
}

std::string weights_file_hash(const ParamStore& store) {
  return git_blob_sha1(store.serialize());
}

void write_manifest(const CommonOpts& opts, const std::string& command,
                    const ModelConfig& model_cfg, const std::vector<std::string>& artifacts,
                    const std::map<std::string, double>& ledger,
                    const std::string& weights_hash) {
  RunManifest m;
  m.command = command;
  m.config_json = model_cfg.to_json();
  m.seed = opts.seed;
  m.artifacts = artifacts;
  m.ledger = ledger;
  m.weights_hash = weights_hash;
  m.write(opts.out_dir + "/manifest.json");
}

SynthVideoSpec synth_spec_from(const nlohmann::json& j) {
  SynthVideoSpec spec;
  spec.frames = j.value("frames", spec.frames);
  spec.resolution = j.value("resolution", spec.resolution);
  spec.num_classes = j.value("num_classes", spec.num_classes);
  spec.num_objects = j.value("num_objects", spec.num_objects);
  spec.min_velocity = j.value("min_velocity", spec.min_velocity);
  spec.max_velocity = j.value("max_velocity", spec.max_velocity);
  spec.min_size = j.value("min_size", spec.min_size);
  spec.max_size = j.value("max_size", spec.max_size);
  spec.segment_frames = j.value("segment_frames", spec.segment_frames);
  spec.blur_passes_hard = j.value("blur_passes_hard", spec.blur_passes_hard);
  spec.contrast_hard = j.value("contrast_hard", spec.contrast_hard);
  spec.occluders_per_frame_hard =
      j.value("occluders_per_frame_hard", spec.occluders_per_frame_hard);
  return spec;
}

std::vector<Clip> make_clips(const SynthVideoSpec& base, std::uint64_t seed0, int count,
                             bool hard_segments) {
  std::vector<Clip> clips;
  for (int i = 0; i < count; ++i) {
    SynthVideoSpec spec = base;
    spec.seed = seed0 + static_cast<std::uint64_t>(i);
    spec.hard_segments = hard_segments;
    spec.start_hard = hard_segments && (i % 2 == 1);
    clips.push_back(generate(spec));
  }
  return clips;
}

InterleavePolicy policy_from_flags(const std::string& name, int tau, const QNetwork* qnet,
                                   bool cold) {
  if (name == "fixed") return InterleavePolicy::fixed(tau);
  if (name == "heavy") return InterleavePolicy::always_heavy();
  if (name == "light") return InterleavePolicy::always_light(cold);
  if (name == "adaptive") {
    if (!qnet) throw std::runtime_error("adaptive policy needs trained policy weights");
    return adaptive_policy(*qnet);
  }
  throw std::runtime_error("unknown policy '" + name + "'");
}

void write_detections_csv(const std::string& path, const std::vector<FrameResult>& results) {
  CsvWriter csv(path, "frame,class_id,score,ymin,xmin,ymax,xmax");
  for (const FrameResult& r : results) {
    for (const Detection& d : r.detections.items) {
      csv.row({std::to_string(r.frame), std::to_string(d.class_id), format_double(d.score),
               format_double(d.box.ymin), format_double(d.box.xmin), format_double(d.box.ymax),
               format_double(d.box.xmax)});
    }
  }
}

void write_latency_csv_sync(const std::string& path, const std::vector<FrameResult>& results) {
  CsvWriter csv(path, "frame,action_lane,latency_units,mac,commit_seen");
  for (const FrameResult& r : results) {
    csv.row({std::to_string(r.frame), r.action == 0 ? "f0" : "f1",
             format_double(r.latency_units), std::to_string(r.macs),
             std::to_string(r.commit_seen)});
  }
}

void write_latency_csv_async(const std::string& path, const AsyncRun& run) {
  CsvWriter csv(path, "frame,action_lane,latency_units,mac,commit_seen");
  for (const AsyncLaneRow& row : run.rows) {
    csv.row({std::to_string(row.frame), row.lane == 0 ? "f0" : "f1",
             format_double(row.latency_units), std::to_string(row.macs),
             std::to_string(row.commit_seen)});
  }
}

// Calibration pass: alternate extractors over the given frames so every op
// site on both paths sees data.
void calibrate(const DetectionModel& model, const std::vector<Clip>& clips, int frames,
               std::map<std::string, QuantParams>& ranges) {
  CalibrationInstrument<float> inst(ranges);
  int used = 0;
  for (const Clip& clip : clips) {
    MemoryState state = model.initial_state();
    for (std::size_t f = 0; f < clip.frames.size() && used < frames; ++f, ++used) {
      const int extractor = (used % 2 == 0) ? 0 : 1;
      FrameOutput out =
          model.run_frame(extractor, clip.frames[f], state, extractor == 0,
                          static_cast<long long>(f), &inst, false);
      state = out.state;
    }
    if (used >= frames) break;
  }
  if (used == 0) throw std::runtime_error("no calibration frames available");
}

int run_cli(int argc, char** argv) {
  CLI::App app{"memory-guided interleaved video object detection bench"};
  app.require_subcommand(1);
  app.fallthrough();

  CommonOpts opts;
  app.add_option("--seed", opts.seed, "global random seed");
  app.add_option("--config", opts.config_path, "JSON config file");
  app.add_option("--out", opts.out_dir, "output directory");

  // synth-gen
  auto* synth_cmd = app.add_subcommand("synth-gen", "generate the synthetic video datasets");
  int synth_train_clips = 8, synth_eval_clips = 4;
  synth_cmd->add_option("--clips", synth_train_clips, "training clips");
  synth_cmd->add_option("--eval-clips", synth_eval_clips, "held-out clips per eval set");

  // train
  auto* train_cmd = app.add_subcommand("train", "train the detector on a dataset");
  std::string data_dir = "data";
  train_cmd->add_option("--data", data_dir, "dataset root (from synth-gen)");
  TrainConfig train_cfg;
  train_cmd->add_option("--steps", train_cfg.steps, "gradient steps");
  train_cmd->add_option("--batch", train_cfg.batch, "batch size");
  train_cmd->add_option("--unroll", train_cfg.unroll, "recurrent unroll length");
  train_cmd->add_option("--lr", train_cfg.learning_rate, "peak learning rate");
  bool skip_commit_on_light = false;
  train_cmd->add_flag("--skip-commit-on-light", skip_commit_on_light,
                      "use the inference-time state-skip rule during training");

  // train-policy
  auto* policy_cmd = app.add_subcommand("train-policy", "train the adaptive interleaving policy");
  std::string weights_path = "out/weights.ivdw";
  policy_cmd->add_option("--data", data_dir, "dataset root");
  policy_cmd->add_option("--weights", weights_path, "trained detector container");
  PolicyTrainConfig ptc;
  policy_cmd->add_option("--gamma", ptc.gamma, "speed reward");
  policy_cmd->add_option("--steps", ptc.total_env_steps, "environment steps");
  policy_cmd->add_option("--discount", ptc.discount, "bootstrap discount");
  policy_cmd->add_option("--lr", ptc.learning_rate, "policy learning rate");

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "run inference over one clip");
  std::string policy_name = "fixed", mode = "sync";
  int tau = 9, clip_index = 0, duration = 2;
  bool cold = false, quantized = false;
  infer_cmd->add_option("--data", data_dir, "dataset root");
  infer_cmd->add_option("--weights", weights_path, "weight container");
  infer_cmd->add_option("--policy", policy_name, "fixed|adaptive|heavy|light");
  infer_cmd->add_option("--tau", tau, "interleave ratio");
  infer_cmd->add_option("--mode", mode, "sync|async");
  infer_cmd->add_option("--duration", duration, "async heavy-lane duration (frames)");
  infer_cmd->add_option("--clip-index", clip_index, "which eval clip to run");
  infer_cmd->add_flag("--cold", cold, "light-only without the frame-0 heavy bootstrap");
  infer_cmd->add_flag("--quantized", quantized, "run the quantized graph");

  // sweep-tau
  auto* sweep_cmd = app.add_subcommand("sweep-tau", "mAP/cost tradeoff across interleave ratios");
  std::vector<int> taus = {1, 4, 9, 19, 39};
  sweep_cmd->add_option("--data", data_dir, "dataset root");
  sweep_cmd->add_option("--weights", weights_path, "weight container");
  sweep_cmd->add_option("--taus", taus, "interleave ratios");

  // sweep-gamma
  auto* gamma_cmd = app.add_subcommand("sweep-gamma", "policy tradeoff across speed rewards");
  std::vector<double> gammas = {1.5, 1.0, 0.4, 0.3, 0.2, 0.1};
  int gamma_steps = 1500;
  gamma_cmd->add_option("--data", data_dir, "dataset root");
  gamma_cmd->add_option("--weights", weights_path, "weight container");
  gamma_cmd->add_option("--gammas", gammas, "speed rewards to train at");
  gamma_cmd->add_option("--steps", gamma_steps, "environment steps per gamma");

  // quantize
  auto* quant_cmd = app.add_subcommand("quantize", "post-training quantization + calibration");
  int calib_frames = 32;
  quant_cmd->add_option("--data", data_dir, "dataset root (calibration frames)");
  quant_cmd->add_option("--weights", weights_path, "float weight container");
  quant_cmd->add_option("--calib-frames", calib_frames, "calibration frames");

  // report-macs
  auto* macs_cmd = app.add_subcommand("report-macs", "per-component multiply-add table");
  macs_cmd->add_option("--weights", weights_path, "weight container (optional)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a policy over the held-out clips");
  eval_cmd->add_option("--data", data_dir, "dataset root");
  eval_cmd->add_option("--weights", weights_path, "weight container");
  eval_cmd->add_option("--policy", policy_name, "fixed|adaptive|heavy|light");
  eval_cmd->add_option("--tau", tau, "interleave ratio");
  eval_cmd->add_flag("--cold", cold, "light-only without the frame-0 heavy bootstrap");
  eval_cmd->add_flag("--quantized", quantized, "run the quantized graph");
  bool eval_mixed = false;
  eval_cmd->add_flag("--mixed", eval_mixed, "use the mixed-difficulty eval set");

  CLI11_PARSE(app, argc, argv);
  fs::create_directories(opts.out_dir);

  const ModelConfig model_cfg = load_model_config(opts);

  auto load_store = [&]() {
    ParamStore store = ParamStore::load(weights_path);
    return store;
  };
  auto maybe_qnet = [&](const ParamStore& store) -> std::unique_ptr<QNetwork> {
    if (!store.has(qnet_param_name("fc", false))) return nullptr;
    auto net = std::make_unique<QNetwork>(PolicyNetConfig::for_model(model_cfg), 0);
    net->load(store);
    return net;
  };
  auto make_instrument = [&](const ParamStore& store) -> std::unique_ptr<QuantizeInstrument<float>> {
    if (!quantized) return nullptr;
    if (!store.quantized()) {
      throw std::runtime_error("--quantized needs a container produced by `quantize`");
    }
    return std::make_unique<QuantizeInstrument<float>>(store.activation_ranges());
  };

  if (*synth_cmd) {
    SynthVideoSpec base = synth_spec_from(config_section(opts, "synth"));
    auto train_clips = make_clips(base, opts.seed * 1000 + 1, synth_train_clips, true);
    auto eval_clips = make_clips(base, opts.seed * 1000 + 500001, synth_eval_clips, false);
    auto mixed_clips = make_clips(base, opts.seed * 1000 + 900001, synth_eval_clips, true);
    save_dataset(train_clips, opts.out_dir + "/train");
    save_dataset(eval_clips, opts.out_dir + "/eval");
    save_dataset(mixed_clips, opts.out_dir + "/eval_mixed");
    long long frames = 0;
    for (const auto& c : train_clips) frames += static_cast<long long>(c.frames.size());
    write_manifest(opts, "synth-gen", model_cfg,
                   {opts.out_dir + "/train", opts.out_dir + "/eval", opts.out_dir + "/eval_mixed"},
                   {{"train_frames", static_cast<double>(frames)}}, "");
    std::cout << "wrote " << synth_train_clips << " train clips, " << 2 * synth_eval_clips
              << " eval clips under " << opts.out_dir << "\n";
    return 0;
  }

  if (*train_cmd) {
    train_cfg.seed = opts.seed;
    train_cfg.commit_every_step = !skip_commit_on_light;
    auto corpus = load_dataset(data_dir + "/train");
    ParamStore params;
    DetectionModel::init_params(params, model_cfg, opts.seed);
    TrainResult result = train_detector(params, model_cfg, corpus, train_cfg);
    params.save(opts.out_dir + "/weights.ivdw");
    CsvWriter log(opts.out_dir + "/train_log.csv", "step,loss,lr");
    for (const auto& row : result.log) {
      log.row({std::to_string(row.step), format_double(row.loss), format_double(row.lr, 8)});
    }
    write_manifest(opts, "train", model_cfg,
                   {opts.out_dir + "/weights.ivdw", opts.out_dir + "/train_log.csv"},
                   {{"initial_loss", result.initial_loss}, {"final_loss", result.final_loss}},
                   weights_file_hash(params));
    std::cout << "loss " << format_double(result.initial_loss) << " -> "
              << format_double(result.final_loss) << "\n";
    return 0;
  }

  if (*policy_cmd) {
    ptc.seed = opts.seed;
    auto store = load_store();
    DetectionModel model(model_cfg, store);
    auto corpus = load_dataset(data_dir + "/train");
    auto eval_clips = load_dataset(data_dir + "/eval");
    std::vector<PolicyMetricsRow> metrics;
    ptc.eval_every = std::max(1, ptc.total_env_steps / 8);
    QNetwork net = train_policy(model, corpus, eval_clips, ptc, &metrics);
    net.save(store);
    store.save(opts.out_dir + "/weights_policy.ivdw");
    CsvWriter csv(opts.out_dir + "/policy_metrics.csv", "iter,mean_q,map,heavy_fraction");
    for (const auto& row : metrics) {
      csv.row({std::to_string(row.iter), format_double(row.mean_q), format_double(row.map),
               format_double(row.heavy_fraction)});
    }
    write_manifest(opts, "train-policy", model_cfg,
                   {opts.out_dir + "/weights_policy.ivdw", opts.out_dir + "/policy_metrics.csv"},
                   {{"gamma", ptc.gamma},
                    {"env_steps", static_cast<double>(ptc.total_env_steps)}},
                   weights_file_hash(store));
    std::cout << "policy trained; " << metrics.size() << " metric rows\n";
    return 0;
  }

  if (*infer_cmd) {
    auto store = load_store();
    DetectionModel model(model_cfg, store);
    auto inst = make_instrument(store);
    auto clips = load_dataset(data_dir + "/eval");
    if (clip_index < 0 || clip_index >= static_cast<int>(clips.size())) {
      throw std::runtime_error("clip index out of range");
    }
    const Clip& clip = clips[static_cast<std::size_t>(clip_index)];
    std::map<std::string, double> ledger;
    if (mode == "sync") {
      auto qnet = maybe_qnet(store);
      auto policy = policy_from_flags(policy_name, tau, qnet.get(), cold);
      auto results = run_sequence(model, clip.frames, policy, inst.get());
      write_detections_csv(opts.out_dir + "/detections.csv", results);
      write_latency_csv_sync(opts.out_dir + "/latency.csv", results);
      double max_latency = 0;
      long long macs = 0;
      for (const auto& r : results) {
        max_latency = std::max(max_latency, r.latency_units);
        macs += r.macs;
      }
      ledger["max_latency_units"] = max_latency;
      ledger["amortized_mac"] = static_cast<double>(macs) / results.size();
    } else if (mode == "async") {
      LaneSchedule schedule{tau, duration};
      AsyncRun run = run_async(model, clip.frames, schedule, true, inst.get());
      write_detections_csv(opts.out_dir + "/detections.csv", run.results);
      write_latency_csv_async(opts.out_dir + "/latency.csv", run);
      LatencyReport rep = summarize_latency(run);
      ledger["max_latency_units"] = rep.max_latency_units;
      ledger["amortized_mac"] = rep.amortized_mac;
    } else {
      throw std::runtime_error("mode must be sync or async");
    }
    write_manifest(opts, "infer", model_cfg,
                   {opts.out_dir + "/detections.csv", opts.out_dir + "/latency.csv"}, ledger,
                   weights_file_hash(store));
    std::cout << "max latency " << format_double(ledger["max_latency_units"]) << " units\n";
    return 0;
  }

  if (*sweep_cmd) {
    auto store = load_store();
    DetectionModel model(model_cfg, store);
    auto clips = load_dataset(data_dir + "/eval");
    auto rows = sweep_tau(model, clips, taus);
    CsvWriter csv(opts.out_dir + "/tau_sweep.csv", "tau,map,amortized_mac,heavy_fraction");
    for (const auto& r : rows) {
      csv.row({std::to_string(r.tau), format_double(r.map), format_double(r.amortized_mac, 1),
               format_double(r.heavy_fraction)});
    }
    write_manifest(opts, "sweep-tau", model_cfg, {opts.out_dir + "/tau_sweep.csv"}, {},
                   weights_file_hash(store));
    std::cout << "swept " << rows.size() << " interleave ratios\n";
    return 0;
  }

  if (*gamma_cmd) {
    auto store = load_store();
    DetectionModel model(model_cfg, store);
    auto corpus = load_dataset(data_dir + "/train");
    auto eval_clips = load_dataset(data_dir + "/eval");
    CsvWriter csv(opts.out_dir + "/gamma_sweep.csv", "gamma,map,heavy_fraction");
    for (double g : gammas) {
      PolicyTrainConfig cfg;
      cfg.gamma = g;
      cfg.total_env_steps = gamma_steps;
      cfg.seed = opts.seed;
      cfg.eval_every = 0;
      QNetwork net = train_policy(model, corpus, eval_clips, cfg, nullptr);
      EvalResult ev = evaluate_policy(model, eval_clips, adaptive_policy(net));
      csv.row({format_double(g, 2), format_double(ev.map), format_double(ev.heavy_fraction)});
    }
    write_manifest(opts, "sweep-gamma", model_cfg, {opts.out_dir + "/gamma_sweep.csv"}, {},
                   weights_file_hash(store));
    std::cout << "swept " << gammas.size() << " speed rewards\n";
    return 0;
  }

  if (*quant_cmd) {
    auto store = load_store();
    quantize_weights_inplace(store);
    DetectionModel model(model_cfg, store);
    auto clips = load_dataset(data_dir + "/eval");
    calibrate(model, clips, calib_frames, store.activation_ranges());
    store.save(opts.out_dir + "/weights_quant.ivdw");
    write_manifest(opts, "quantize", model_cfg, {opts.out_dir + "/weights_quant.ivdw"},
                   {{"calibration_frames", static_cast<double>(calib_frames)},
                    {"activation_sites", static_cast<double>(store.activation_ranges().size())}},
                   weights_file_hash(store));
    std::cout << "calibrated " << store.activation_ranges().size() << " op sites\n";
    return 0;
  }

  if (*macs_cmd) {
    ParamStore store;
    if (fs::exists(weights_path)) {
      store = ParamStore::load(weights_path);
    } else {
      DetectionModel::init_params(store, model_cfg, opts.seed);
    }
    DetectionModel model(model_cfg, store);
    QNetwork qnet(PolicyNetConfig::for_model(model_cfg), 0);

    MacReport rep;
    rep.f0 = model.extractor_macs(0);
    rep.f1 = model.extractor_macs(1);
    rep.cell = model.cell_step_macs();
    rep.head = model.head_macs();
    rep.policy_net = qnet.forward_macs();
    rep.light_path = rep.f1 + rep.cell + rep.head;
    rep.heavy_path = rep.f0 + rep.cell + rep.head;

    CellConfig published;
    published.input_channels = 1024;
    published.state_channels = 320;
    published.groups = 4;
    published.height = published.width = 10;
    const long long published_cell = cell_macs(published);

    CsvWriter csv(opts.out_dir + "/macs.csv", "component,macs,params");
    auto param_count = [&](const std::string& prefix) {
      long long n = 0;
      for (const auto& name : store.names()) {
        if (name.rfind(prefix, 0) == 0) n += store.at(name).numel();
      }
      return n;
    };
    const std::vector<std::pair<std::string, long long>> rows = {
        {"f0", rep.f0},
        {"f1", rep.f1},
        {"cell", rep.cell},
        {"head", rep.head},
        {"policy_net", rep.policy_net},
        {"light_path", rep.light_path},
        {"heavy_path", rep.heavy_path},
        {"cell_1024in_640out_g4_10x10", published_cell},
    };
    for (const auto& [name, macs] : rows) {
      long long params_n = 0;
      if (name == "f0" || name == "f1") params_n = param_count(name + "/");
      if (name == "cell") params_n = param_count("lstm/");
      if (name == "head") params_n = param_count("head/");
      if (name == "policy_net") params_n = qnet.parameter_count();
      csv.row({name, std::to_string(macs), std::to_string(params_n)});
      std::cout << name << ": " << macs << " MAC";
      if (params_n > 0) std::cout << ", " << params_n << " params";
      std::cout << "\n";
    }
    write_manifest(opts, "report-macs", model_cfg, {opts.out_dir + "/macs.csv"},
                   {{"light_path", static_cast<double>(rep.light_path)},
                    {"heavy_path", static_cast<double>(rep.heavy_path)}},
                   weights_file_hash(store));
    return 0;
  }

  if (*eval_cmd) {
    auto store = load_store();
    DetectionModel model(model_cfg, store);
    auto inst = make_instrument(store);
    auto clips = load_dataset(data_dir + (eval_mixed ? "/eval_mixed" : "/eval"));
    auto qnet = maybe_qnet(store);
    auto policy = policy_from_flags(policy_name, tau, qnet.get(), cold);
    EvalResult ev = evaluate_policy(model, clips, policy, inst.get());
    CsvWriter csv(opts.out_dir + "/eval.csv", "policy,tau,map,heavy_fraction,amortized_mac");
    csv.row({policy_name, std::to_string(tau), format_double(ev.map),
             format_double(ev.heavy_fraction), format_double(ev.amortized_mac, 1)});
    std::vector<std::string> artifacts = {opts.out_dir + "/eval.csv"};
    if (policy_name == "adaptive") {
      auto rates = policy_behavior(model, *qnet, clips);
      CsvWriter behavior(opts.out_dir + "/policy_behavior.csv",
                         "clip,segment_difficulty,heavy_fraction");
      for (const auto& r : rates) {
        behavior.row({std::to_string(r.clip), r.hard ? "hard" : "easy",
                      format_double(r.heavy_fraction)});
      }
      artifacts.push_back(opts.out_dir + "/policy_behavior.csv");
    }
    write_manifest(opts, "eval", model_cfg, artifacts,
                   {{"map", ev.map}, {"heavy_fraction", ev.heavy_fraction}},
                   weights_file_hash(store));
    std::cout << "map " << format_double(ev.map) << " heavy_fraction "
              << format_double(ev.heavy_fraction) << "\n";
    return 0;
  }

  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
