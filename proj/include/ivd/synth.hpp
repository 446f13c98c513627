#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ivd/detect.hpp"
#include "ivd/tensor.hpp"

namespace ivd {

// Synthetic moving-shapes video. Classes are shapes (square, circle,
// triangle, diamond); colors are random and deliberately uncorrelated with
// class so classification requires spatial detail. Difficulty knobs apply per
// segment, so every clip carries labeled easy/hard spans.
struct SynthVideoSpec {
  std::uint64_t seed = 1;
  int frames = 48;
  int resolution = 64;
  int num_classes = 4;  // <= 4 shape classes
  int num_objects = 2;
  double min_size = 14, max_size = 24;       // bounding box side, px
  double min_velocity = 0.4, max_velocity = 1.4;  // px/frame
  double background_noise = 0.02;

  // Difficulty knobs. Segments alternate easy/hard every segment_frames;
  // hard_segments=false renders the whole clip easy.
  bool hard_segments = true;
  bool start_hard = false;
  int segment_frames = 16;
  int blur_passes_hard = 2;        // 3x3 box blur applications
  double contrast_hard = 0.42;     // contrast scale about mid-gray
  double occluders_per_frame_hard = 2.0;

  void validate() const;
};

struct Segment {
  int begin = 0;  // inclusive
  int end = 0;    // exclusive
  bool hard = false;
};

struct Clip {
  int resolution = 0;
  int num_classes = 0;
  std::vector<Tensor> frames;              // (1,3,H,W) floats on the 8-bit grid
  std::vector<std::vector<GtBox>> gt;      // per frame
  std::vector<Segment> segments;
};

Clip generate(const SynthVideoSpec& spec);

const std::vector<std::string>& shape_class_names();

// ---------------------------------------------------------------------------
// dataset layout: one directory per clip, 8-bit RGB raster frames plus one
// annotation file
// ---------------------------------------------------------------------------

void save_clip(const Clip& clip, const std::string& dir);
Clip load_clip(const std::string& dir);

void save_dataset(const std::vector<Clip>& clips, const std::string& dir);
std::vector<Clip> load_dataset(const std::string& dir);

void write_ppm(const Tensor& image, const std::string& path);
Tensor read_ppm(const std::string& path);

// ---------------------------------------------------------------------------
// crop-shift augmentation for still images
// ---------------------------------------------------------------------------

struct CropRect {
  double y0 = 0, x0 = 0, h = 1, w = 1;  // normalized source window
};

struct AugmentedStep {
  Tensor image;
  std::vector<GtBox> gt;
};

// Resamples one window of a still (bilinear) and maps its boxes into window
// coordinates; boxes that leave the window entirely are dropped.
AugmentedStep crop_window(const Tensor& image, const std::vector<GtBox>& boxes,
                          const CropRect& rect, int out_resolution);

struct AugmentParams {
  int steps = 6;
  double max_shift = 0.05;      // per-step translation, fraction of the window
  double max_zoom_step = 0.06;  // per-step multiplicative zoom
  double min_crop = 0.55, max_crop = 0.9;
  int max_retries = 8;
};

// A pseudo-video: one still viewed through a drifting, zooming window. If no
// sampled window keeps a box in view the start window is resampled, then
// falls back to a centered crop.
std::vector<AugmentedStep> crop_shift_augment(const Tensor& image,
                                              const std::vector<GtBox>& boxes,
                                              const AugmentParams& params, int out_resolution,
                                              Rng& rng);

}  // namespace ivd
