#pragma once

#include <string>
#include <vector>

#include "ssdn/resample.hpp"

namespace ssdn {

// Depth values live in [0,1] in memory and as 16-bit counts on disk;
// value-in-units = count * scale.
struct DepthMap {
  Array<float> values;  // H x W x 1
  double scale = 1.0;   // units per count
  std::string unit = "normalized";

  int height() const { return values.dim(0); }
  int width() const { return values.dim(1); }
};

struct RgbImage {
  Array<float> values;  // H x W x 3, [0,1]

  int height() const { return values.dim(0); }
  int width() const { return values.dim(1); }
};

struct ScenePair {
  std::string id;
  RgbImage rgb;
  DepthMap depth_hr;
  DepthMap depth_lr;  // derived by bicubic downsampling
  int scale_factor = 4;
};

struct ManifestEntry {
  std::string id, rgb_path, depth_path, split;
};

struct DatasetManifest {
  std::string root;
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> split(const std::string& which) const;
};

// --- netpbm codecs (PGM P5 16-bit big-endian for depth, PPM P6 for RGB) ----

void write_pgm16(const std::string& path, const DepthMap& depth);
DepthMap read_pgm16(const std::string& path, bool* had_scale_comment = nullptr);
void write_ppm8(const std::string& path, const RgbImage& img);
RgbImage read_ppm8(const std::string& path);

// --- datasets ---------------------------------------------------------------

void save_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::string& path);

DepthMap derive_lr(const DepthMap& hr, int scale_factor);
ScenePair load_scene(const DatasetManifest& manifest, const ManifestEntry& entry,
                     int scale_factor);

// Piecewise-constant depth scene with co-located RGB edges: a constant
// background plus axis-aligned rectangles and disks at distinct constant
// depths; RGB shares the geometry with well-separated base colors, plus a
// smooth sinusoidal texture and mild noise that stay RGB-private.
ScenePair synth_scene(int h, int w, int n_shapes, uint64_t seed);

// RMSE in the ground truth's native stored units (scale factor applied).
double rmse(const DepthMap& pred, const DepthMap& gt);

}  // namespace ssdn
