#include "ivd/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

namespace fs = std::filesystem;

namespace ivd {

void SynthVideoSpec::validate() const {
  if (frames < 1 || resolution < 16 || num_objects < 1) {
    throw std::invalid_argument("synthetic video spec has a degenerate field");
  }
  if (num_classes < 1 || num_classes > 4) {
    throw std::invalid_argument("synthetic video supports 1..4 shape classes");
  }
  if (min_size > max_size || min_velocity > max_velocity || min_size < 2) {
    throw std::invalid_argument("synthetic video size/velocity ranges are inverted");
  }
}

const std::vector<std::string>& shape_class_names() {
  static const std::vector<std::string> names = {"square", "circle", "triangle", "diamond"};
  return names;
}

namespace {

struct MovingObject {
  int cls = 0;
  double size = 12;
  double cy = 0, cx = 0;
  double vy = 0, vx = 0;
  float color[3] = {1.f, 1.f, 1.f};
};

bool inside_shape(int cls, double dy, double dx, double half) {
  switch (cls) {
    case 0:  // square
      return std::abs(dy) <= half && std::abs(dx) <= half;
    case 1:  // circle
      return dy * dy + dx * dx <= half * half;
    case 2:  // triangle, apex up
      return dy >= -half && dy <= half && std::abs(dx) <= (dy + half) / 2;
    default:  // diamond
      return std::abs(dy) + std::abs(dx) <= half;
  }
}

void reflect(double& pos, double& vel, double lo, double hi) {
  if (pos < lo) {
    pos = 2 * lo - pos;
    vel = -vel;
  } else if (pos > hi) {
    pos = 2 * hi - pos;
    vel = -vel;
  }
}

void box_blur3(Tensor& img, int passes) {
  const int h = img.dim(2), w = img.dim(3);
  Tensor tmp(img.shape());
  for (int p = 0; p < passes; ++p) {
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          float acc = 0;
          int count = 0;
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              const int yy = y + dy, xx = x + dx;
              if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
              acc += img.at(0, c, yy, xx);
              ++count;
            }
          }
          tmp.at(0, c, y, x) = acc / static_cast<float>(count);
        }
      }
    }
    std::swap(img, tmp);
  }
}

}  // namespace

Clip generate(const SynthVideoSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const int res = spec.resolution;

  std::vector<MovingObject> objects;
  for (int i = 0; i < spec.num_objects; ++i) {
    MovingObject o;
    o.cls = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.num_classes)));
    o.size = rng.uniform(spec.min_size, spec.max_size);
    o.cy = rng.uniform(o.size, res - o.size);
    o.cx = rng.uniform(o.size, res - o.size);
    const double speed = rng.uniform(spec.min_velocity, spec.max_velocity);
    const double angle = rng.uniform(0, 6.283185307179586);
    o.vy = speed * std::sin(angle);
    o.vx = speed * std::cos(angle);
    for (float& ch : o.color) ch = static_cast<float>(rng.uniform(0.45, 1.0));
    o.color[rng.below(3)] = static_cast<float>(rng.uniform(0.8, 1.0));
    objects.push_back(o);
  }

  Clip clip;
  clip.resolution = res;
  clip.num_classes = spec.num_classes;
  for (int begin = 0; begin < spec.frames; begin += spec.segment_frames) {
    Segment seg;
    seg.begin = begin;
    seg.end = std::min(spec.frames, begin + spec.segment_frames);
    const int index = begin / spec.segment_frames;
    seg.hard = spec.hard_segments && ((index % 2 == 0) == spec.start_hard);
    clip.segments.push_back(seg);
  }

  for (int f = 0; f < spec.frames; ++f) {
    bool hard = false;
    for (const Segment& s : clip.segments) {
      if (f >= s.begin && f < s.end) hard = s.hard;
    }

    Tensor img({1, 3, res, res});
    const float base = 0.12f;
    for (long long i = 0; i < img.numel(); ++i) img[i] = base;

    std::vector<GtBox> frame_gt;
    for (MovingObject& o : objects) {
      const double half = o.size / 2;
      const int y_lo = static_cast<int>(std::floor(o.cy - half));
      const int y_hi = static_cast<int>(std::ceil(o.cy + half));
      const int x_lo = static_cast<int>(std::floor(o.cx - half));
      const int x_hi = static_cast<int>(std::ceil(o.cx + half));
      for (int y = std::max(0, y_lo); y <= std::min(res - 1, y_hi); ++y) {
        for (int x = std::max(0, x_lo); x <= std::min(res - 1, x_hi); ++x) {
          if (!inside_shape(o.cls, y + 0.5 - o.cy, x + 0.5 - o.cx, half)) continue;
          for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = o.color[c];
        }
      }
      Box b{static_cast<float>((o.cy - half) / res), static_cast<float>((o.cx - half) / res),
            static_cast<float>((o.cy + half) / res), static_cast<float>((o.cx + half) / res)};
      b.ymin = std::clamp(b.ymin, 0.f, 1.f);
      b.xmin = std::clamp(b.xmin, 0.f, 1.f);
      b.ymax = std::clamp(b.ymax, 0.f, 1.f);
      b.xmax = std::clamp(b.xmax, 0.f, 1.f);
      if (b.ymax > b.ymin && b.xmax > b.xmin) {
        frame_gt.push_back(GtBox{o.cls, b});
      }

      // Constant velocity; the bounce walls sit one body beyond the frame so
      // objects can leave entirely and come back.
      o.cy += o.vy;
      o.cx += o.vx;
      reflect(o.cy, o.vy, -o.size, res + o.size);
      reflect(o.cx, o.vx, -o.size, res + o.size);
    }

    if (hard && spec.occluders_per_frame_hard > 0) {
      const int n = static_cast<int>(spec.occluders_per_frame_hard) +
                    (rng.uniform() < (spec.occluders_per_frame_hard -
                                      std::floor(spec.occluders_per_frame_hard))
                         ? 1
                         : 0);
      for (int i = 0; i < n; ++i) {
        const int oh = rng.uniform_int(6, 18), ow = rng.uniform_int(6, 18);
        const int oy = rng.uniform_int(0, res - oh), ox = rng.uniform_int(0, res - ow);
        const float shade = static_cast<float>(rng.uniform(0.18, 0.4));
        for (int y = oy; y < oy + oh; ++y) {
          for (int x = ox; x < ox + ow; ++x) {
            for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = shade;
          }
        }
      }
    }
    if (hard) {
      for (long long i = 0; i < img.numel(); ++i) {
        img[i] = 0.5f + (img[i] - 0.5f) * static_cast<float>(spec.contrast_hard);
      }
      box_blur3(img, spec.blur_passes_hard);
    }
    if (spec.background_noise > 0) {
      for (long long i = 0; i < img.numel(); ++i) {
        img[i] += static_cast<float>(rng.uniform(-spec.background_noise, spec.background_noise));
      }
    }
    // Snap to the 8-bit grid so in-memory clips match their on-disk form.
    for (long long i = 0; i < img.numel(); ++i) {
      const float v = std::clamp(img[i], 0.f, 1.f);
      img[i] = std::nearbyint(v * 255.f) / 255.f;
    }

    clip.frames.push_back(std::move(img));
    clip.gt.push_back(std::move(frame_gt));
  }
  return clip;
}

// ---------------------------------------------------------------------------
// dataset IO
// ---------------------------------------------------------------------------

void write_ppm(const Tensor& image, const std::string& path) {
  const int h = image.dim(2), w = image.dim(3);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  f << "P6\n" << w << " " << h << "\n255\n";
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(0, c, y, x), 0.f, 1.f);
        f.put(static_cast<char>(static_cast<int>(std::nearbyint(v * 255.f))));
      }
    }
  }
}

Tensor read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read '" + path + "'");
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255) {
    throw std::runtime_error("'" + path + "' is not an 8-bit P6 raster");
  }
  f.get();
  Tensor img({1, 3, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(0, c, y, x) = static_cast<float>(static_cast<unsigned char>(f.get())) / 255.f;
      }
    }
  }
  return img;
}

void save_clip(const Clip& clip, const std::string& dir) {
  fs::create_directories(dir);
  nlohmann::json ann;
  ann["resolution"] = clip.resolution;
  ann["num_classes"] = clip.num_classes;
  ann["frames"] = static_cast<int>(clip.frames.size());
  ann["annotations"] = nlohmann::json::array();
  for (int f = 0; f < static_cast<int>(clip.frames.size()); ++f) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04d.ppm", f);
    write_ppm(clip.frames[static_cast<std::size_t>(f)], dir + "/" + name);
    for (const GtBox& g : clip.gt[static_cast<std::size_t>(f)]) {
      ann["annotations"].push_back(
          {{"frame", f},
           {"class_id", g.class_id},
           {"box", {g.box.ymin, g.box.xmin, g.box.ymax, g.box.xmax}}});
    }
  }
  ann["segments"] = nlohmann::json::array();
  for (const Segment& s : clip.segments) {
    ann["segments"].push_back(
        {{"begin", s.begin}, {"end", s.end}, {"difficulty", s.hard ? "hard" : "easy"}});
  }
  std::ofstream f(dir + "/annotations.json");
  f << ann.dump(1, '\t') << "\n";
}

Clip load_clip(const std::string& dir) {
  std::ifstream f(dir + "/annotations.json");
  if (!f) throw std::runtime_error("no annotations in '" + dir + "'");
  nlohmann::json ann = nlohmann::json::parse(f);
  Clip clip;
  clip.resolution = ann.at("resolution");
  clip.num_classes = ann.at("num_classes");
  const int frames = ann.at("frames");
  clip.gt.assign(static_cast<std::size_t>(frames), {});
  for (int i = 0; i < frames; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04d.ppm", i);
    clip.frames.push_back(read_ppm(dir + "/" + name));
  }
  for (const auto& a : ann.at("annotations")) {
    GtBox g;
    g.class_id = a.at("class_id");
    const auto& b = a.at("box");
    g.box = Box{b[0], b[1], b[2], b[3]};
    clip.gt[a.at("frame").get<std::size_t>()].push_back(g);
  }
  for (const auto& s : ann.at("segments")) {
    clip.segments.push_back(
        Segment{s.at("begin"), s.at("end"), s.at("difficulty").get<std::string>() == "hard"});
  }
  return clip;
}

void save_dataset(const std::vector<Clip>& clips, const std::string& dir) {
  fs::create_directories(dir);
  for (int i = 0; i < static_cast<int>(clips.size()); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%03d", i);
    save_clip(clips[static_cast<std::size_t>(i)], dir + "/" + name);
  }
  nlohmann::json classes = shape_class_names();
  std::ofstream f(dir + "/classes.json");
  f << classes.dump() << "\n";
}

std::vector<Clip> load_dataset(const std::string& dir) {
  std::vector<std::string> clip_dirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) clip_dirs.push_back(entry.path().string());
  }
  std::sort(clip_dirs.begin(), clip_dirs.end());
  std::vector<Clip> clips;
  for (const auto& d : clip_dirs) clips.push_back(load_clip(d));
  if (clips.empty()) throw std::runtime_error("no clips found under '" + dir + "'");
  return clips;
}

// ---------------------------------------------------------------------------
// crop-shift augmentation
// ---------------------------------------------------------------------------

AugmentedStep crop_window(const Tensor& image, const std::vector<GtBox>& boxes,
                          const CropRect& rect, int out_resolution) {
  if (rect.h <= 0 || rect.w <= 0) throw std::invalid_argument("crop window is empty");
  const int src_h = image.dim(2), src_w = image.dim(3);
  AugmentedStep out;
  out.image = Tensor({1, 3, out_resolution, out_resolution});
  for (int y = 0; y < out_resolution; ++y) {
    for (int x = 0; x < out_resolution; ++x) {
      const double sy = (rect.y0 + rect.h * (y + 0.5) / out_resolution) * src_h - 0.5;
      const double sx = (rect.x0 + rect.w * (x + 0.5) / out_resolution) * src_w - 0.5;
      const int y0 = static_cast<int>(std::floor(sy));
      const int x0 = static_cast<int>(std::floor(sx));
      const double fy = sy - y0, fx = sx - x0;
      auto pix = [&](int c, int yy, int xx) {
        yy = std::clamp(yy, 0, src_h - 1);
        xx = std::clamp(xx, 0, src_w - 1);
        return static_cast<double>(image.at(0, c, yy, xx));
      };
      for (int c = 0; c < 3; ++c) {
        const double v = pix(c, y0, x0) * (1 - fy) * (1 - fx) +
                         pix(c, y0, x0 + 1) * (1 - fy) * fx +
                         pix(c, y0 + 1, x0) * fy * (1 - fx) + pix(c, y0 + 1, x0 + 1) * fy * fx;
        out.image.at(0, c, y, x) = static_cast<float>(v);
      }
    }
  }
  for (const GtBox& g : boxes) {
    Box b;
    b.ymin = static_cast<float>((g.box.ymin - rect.y0) / rect.h);
    b.ymax = static_cast<float>((g.box.ymax - rect.y0) / rect.h);
    b.xmin = static_cast<float>((g.box.xmin - rect.x0) / rect.w);
    b.xmax = static_cast<float>((g.box.xmax - rect.x0) / rect.w);
    b.ymin = std::clamp(b.ymin, 0.f, 1.f);
    b.xmin = std::clamp(b.xmin, 0.f, 1.f);
    b.ymax = std::clamp(b.ymax, 0.f, 1.f);
    b.xmax = std::clamp(b.xmax, 0.f, 1.f);
    if (b.ymax > b.ymin && b.xmax > b.xmin) out.gt.push_back(GtBox{g.class_id, b});
  }
  return out;
}

std::vector<AugmentedStep> crop_shift_augment(const Tensor& image,
                                              const std::vector<GtBox>& boxes,
                                              const AugmentParams& params, int out_resolution,
                                              Rng& rng) {
  for (int attempt = 0; attempt <= params.max_retries; ++attempt) {
    const bool fallback = attempt == params.max_retries;
    double size = fallback ? params.max_crop : rng.uniform(params.min_crop, params.max_crop);
    double y0 = fallback ? (1 - size) / 2 : rng.uniform(0, 1 - size);
    double x0 = fallback ? (1 - size) / 2 : rng.uniform(0, 1 - size);

    std::vector<AugmentedStep> steps;
    bool any_box = boxes.empty();
    for (int s = 0; s < params.steps; ++s) {
      steps.push_back(crop_window(image, boxes, CropRect{y0, x0, size, size}, out_resolution));
      if (!steps.back().gt.empty()) any_box = true;
      const double zoom = 1 + rng.uniform(-params.max_zoom_step, params.max_zoom_step);
      double next = std::clamp(size * zoom, 0.2, 1.0);
      y0 += rng.uniform(-params.max_shift, params.max_shift) * size + (size - next) / 2;
      x0 += rng.uniform(-params.max_shift, params.max_shift) * size + (size - next) / 2;
      size = next;
      y0 = std::clamp(y0, 0.0, 1.0 - size);
      x0 = std::clamp(x0, 0.0, 1.0 - size);
    }
    if (any_box || fallback) return steps;
  }
  throw std::logic_error("unreachable: fallback crop always returns");
}

}  // namespace ivd
