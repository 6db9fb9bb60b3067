#include "ssdn/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ssdn/rng.hpp"

namespace ssdn {

namespace {

// next header token, skipping whitespace and "#" comment lines; comments
// seen along the way are collected for the scale/unit annotation
std::string next_token(std::istream& is, std::vector<std::string>* comments = nullptr) {
  for (;;) {
    int c = is.peek();
    if (c == EOF) fail("pnm: truncated header");
    if (std::isspace(c)) {
      is.get();
      continue;
    }
    if (c == '#') {
      std::string line;
      std::getline(is, line);
      if (comments) comments->push_back(line);
      continue;
    }
    std::string tok;
    while (is.peek() != EOF && !std::isspace(is.peek())) tok.push_back(static_cast<char>(is.get()));
    return tok;
  }
}

int parse_dim(const std::string& tok, const char* what) {
  try {
    size_t pos = 0;
    int v = std::stoi(tok, &pos);
    require(pos == tok.size() && v > 0, std::string("pnm: bad ") + what);
    return v;
  } catch (const std::exception&) {
    fail(std::string("pnm: bad ") + what + " '" + tok + "'");
  }
}

}  // namespace

std::vector<ManifestEntry> DatasetManifest::split(const std::string& which) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == which) out.push_back(e);
  return out;
}

void write_pgm16(const std::string& path, const DepthMap& depth) {
  require(depth.values.rank() == 3 && depth.values.dim(2) == 1,
          "write_pgm16: depth must be H x W x 1");
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "write_pgm16: cannot open " + path);
  os << "P5\n";
  os << "# scale=" << depth.scale << " unit=" << depth.unit << "\n";
  os << depth.width() << " " << depth.height() << "\n65535\n";
  std::vector<unsigned char> row(static_cast<size_t>(depth.width()) * 2);
  for (int y = 0; y < depth.height(); ++y) {
    for (int x = 0; x < depth.width(); ++x) {
      double v = std::clamp(static_cast<double>(depth.values.at(y, x, 0)), 0.0, 1.0);
      auto count = static_cast<uint16_t>(std::lround(v * 65535.0));
      row[2 * x] = static_cast<unsigned char>(count >> 8);  // big-endian per netpbm
      row[2 * x + 1] = static_cast<unsigned char>(count & 0xff);
    }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  require(os.good(), "write_pgm16: write failed for " + path);
}

DepthMap read_pgm16(const std::string& path, bool* had_scale_comment) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "read_pgm16: cannot open " + path);
  std::vector<std::string> comments;
  std::string magic = next_token(is, &comments);
  require(magic == "P5", "read_pgm16: bad magic '" + magic + "' in " + path);
  int w = parse_dim(next_token(is, &comments), "width");
  int h = parse_dim(next_token(is, &comments), "height");
  int maxval = parse_dim(next_token(is, &comments), "maxval");
  require(maxval == 65535,
          "read_pgm16: depth requires maxval 65535, got " + std::to_string(maxval));
  is.get();  // single whitespace after maxval

  DepthMap depth;
  depth.values = Array<float>({h, w, 1});
  std::vector<unsigned char> row(static_cast<size_t>(w) * 2);
  for (int y = 0; y < h; ++y) {
    is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    require(is.gcount() == static_cast<std::streamsize>(row.size()),
            "read_pgm16: truncated payload in " + path);
    for (int x = 0; x < w; ++x) {
      uint16_t count = static_cast<uint16_t>((row[2 * x] << 8) | row[2 * x + 1]);
      depth.values.at(y, x, 0) = static_cast<float>(count / 65535.0);
    }
  }

  bool found = false;
  for (const std::string& c : comments) {
    std::istringstream cs(c);
    std::string word;
    double scale = 0;
    std::string unit;
    while (cs >> word) {
      if (word.rfind("scale=", 0) == 0) {
        scale = std::stod(word.substr(6));
        found = true;
      } else if (word.rfind("unit=", 0) == 0) {
        unit = word.substr(5);
      }
    }
    if (found) {
      depth.scale = scale;
      depth.unit = unit.empty() ? "normalized" : unit;
      break;
    }
  }
  if (!found)
    std::fprintf(stderr, "warning: %s has no scale comment, assuming scale=1 unit=normalized\n",
                 path.c_str());
  if (had_scale_comment) *had_scale_comment = found;
  return depth;
}

void write_ppm8(const std::string& path, const RgbImage& img) {
  require(img.values.rank() == 3 && img.values.dim(2) == 3, "write_ppm8: image must be H x W x 3");
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "write_ppm8: cannot open " + path);
  os << "P6\n" << img.width() << " " << img.height() << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(img.width()) * 3);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(static_cast<double>(img.values.at(y, x, c)), 0.0, 1.0);
        row[3 * x + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  require(os.good(), "write_ppm8: write failed for " + path);
}

RgbImage read_ppm8(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "read_ppm8: cannot open " + path);
  std::string magic = next_token(is);
  require(magic == "P6", "read_ppm8: bad magic '" + magic + "' in " + path);
  int w = parse_dim(next_token(is), "width");
  int h = parse_dim(next_token(is), "height");
  int maxval = parse_dim(next_token(is), "maxval");
  require(maxval == 255, "read_ppm8: want maxval 255, got " + std::to_string(maxval));
  is.get();

  RgbImage img;
  img.values = Array<float>({h, w, 3});
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    require(is.gcount() == static_cast<std::streamsize>(row.size()),
            "read_ppm8: truncated payload in " + path);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.values.at(y, x, c) = static_cast<float>(row[3 * x + c] / 255.0);
  }
  return img;
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
  std::ofstream os(path);
  require(os.good(), "save_manifest: cannot open " + path);
  for (const auto& e : manifest.entries)
    os << e.id << "\t" << e.rgb_path << "\t" << e.depth_path << "\t" << e.split << "\n";
  require(os.good(), "save_manifest: write failed");
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  require(is.good(), "load_manifest: cannot open " + path);
  DatasetManifest m;
  auto slash = path.find_last_of('/');
  m.root = slash == std::string::npos ? "." : path.substr(0, slash);
  std::string line;
  std::vector<std::string> seen;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    require(static_cast<bool>(std::getline(ls, e.id, '\t')) &&
                static_cast<bool>(std::getline(ls, e.rgb_path, '\t')) &&
                static_cast<bool>(std::getline(ls, e.depth_path, '\t')) &&
                static_cast<bool>(std::getline(ls, e.split)),
            "load_manifest: malformed line '" + line + "'");
    require(std::find(seen.begin(), seen.end(), e.id) == seen.end(),
            "load_manifest: duplicate id " + e.id);
    seen.push_back(e.id);
    m.entries.push_back(std::move(e));
  }
  return m;
}

DepthMap derive_lr(const DepthMap& hr, int scale_factor) {
  require(scale_factor == 4 || scale_factor == 8 || scale_factor == 16,
          "derive_lr: scale must be 4, 8 or 16");
  require(hr.height() % scale_factor == 0 && hr.width() % scale_factor == 0,
          "derive_lr: dims must divide the scale factor exactly");
  DepthMap lr;
  lr.values = bicubic_resize(hr.values, hr.height() / scale_factor, hr.width() / scale_factor);
  for (auto& v : lr.values.data) v = std::clamp(v, 0.0f, 1.0f);
  lr.scale = hr.scale;
  lr.unit = hr.unit;
  return lr;
}

ScenePair load_scene(const DatasetManifest& manifest, const ManifestEntry& entry,
                     int scale_factor) {
  ScenePair s;
  s.id = entry.id;
  s.rgb = read_ppm8(manifest.root + "/" + entry.rgb_path);
  s.depth_hr = read_pgm16(manifest.root + "/" + entry.depth_path);
  require(s.rgb.height() == s.depth_hr.height() && s.rgb.width() == s.depth_hr.width(),
          "load_scene: rgb/depth dims differ for " + entry.id);
  s.depth_lr = derive_lr(s.depth_hr, scale_factor);
  s.scale_factor = scale_factor;
  return s;
}

namespace {

struct Region {
  int kind;  // 0 rect, 1 disk
  int y0, x0, y1, x1;  // rect bounds / disk bounding box
  double depth;
  double color[3];
};

bool depth_far_from(const std::vector<Region>& regions, double bg, double d, double min_gap) {
  if (std::abs(d - bg) < min_gap) return false;
  for (const auto& r : regions)
    if (std::abs(d - r.depth) < min_gap) return false;
  return true;
}

bool color_far_from(const std::vector<Region>& regions, const double bg[3], const double c[3],
                    double min_gap) {
  auto maxdiff = [](const double a[3], const double b[3]) {
    double m = 0;
    for (int i = 0; i < 3; ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
  };
  if (maxdiff(bg, c) < min_gap) return false;
  for (const auto& r : regions)
    if (maxdiff(r.color, c) < min_gap) return false;
  return true;
}

}  // namespace

ScenePair synth_scene(int h, int w, int n_shapes, uint64_t seed) {
  require(h >= 16 && w >= 16, "synth_scene: canvas too small");
  require(n_shapes >= 1, "synth_scene: need at least one shape");
  const int max_extent = std::min(h, w) / 2;
  require(max_extent >= 4, "synth_scene: shapes too large for canvas");

  Rng rng(Rng::mix(seed, "synth-scene"));
  const double kDepthGap = 0.04, kColorGap = 0.2;

  double bg_depth = rng.uniform(0.3, 0.9);
  double bg_color[3] = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};

  std::vector<Region> regions;
  for (int i = 0; i < n_shapes; ++i) {
    Region r;
    r.kind = rng.uniform_int(0, 1);
    int eh = rng.uniform_int(std::min(h, w) / 8, max_extent);
    int ew = r.kind == 1 ? eh : rng.uniform_int(std::min(h, w) / 8, max_extent);
    r.y0 = rng.uniform_int(0, h - eh - 1);
    r.x0 = rng.uniform_int(0, w - ew - 1);
    r.y1 = r.y0 + eh;
    r.x1 = r.x0 + ew;
    do {
      r.depth = rng.uniform(0.05, 0.95);
    } while (!depth_far_from(regions, bg_depth, r.depth, kDepthGap));
    do {
      for (double& c : r.color) c = rng.uniform(0.05, 0.95);
    } while (!color_far_from(regions, bg_color, r.color, kColorGap));
    regions.push_back(r);
  }

  ScenePair s;
  s.depth_hr.values = Array<float>({h, w, 1});
  s.depth_hr.scale = 1.0 / 65535.0;
  s.depth_hr.unit = "norm";
  s.rgb.values = Array<float>({h, w, 3});

  const double tex_amp = 0.04, noise_sigma = 0.008;
  double fy = rng.uniform(2.0, 5.0), fx = rng.uniform(2.0, 5.0), phase = rng.uniform(0, 2 * M_PI);

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double depth = bg_depth;
      const double* color = bg_color;
      for (const auto& r : regions) {  // later shapes draw on top
        bool inside;
        if (r.kind == 0) {
          inside = y >= r.y0 && y <= r.y1 && x >= r.x0 && x <= r.x1;
        } else {
          double cy = 0.5 * (r.y0 + r.y1), cx = 0.5 * (r.x0 + r.x1);
          double rad = 0.5 * (r.y1 - r.y0);
          inside = (y - cy) * (y - cy) + (x - cx) * (x - cx) <= rad * rad;
        }
        if (inside) {
          depth = r.depth;
          color = r.color;
        }
      }
      s.depth_hr.values.at(y, x, 0) = static_cast<float>(depth);
      double tex = tex_amp * std::sin(2 * M_PI * (fy * y / h + fx * x / w) + phase);
      for (int c = 0; c < 3; ++c) {
        double v = color[c] + tex + noise_sigma * rng.normal();
        s.rgb.values.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return s;
}

double rmse(const DepthMap& pred, const DepthMap& gt) {
  require(pred.height() == gt.height() && pred.width() == gt.width(), "rmse: dim mismatch");
  double acc = 0;
  for (int64_t i = 0; i < gt.values.size(); ++i) {
    double d = static_cast<double>(pred.values.data[i]) - static_cast<double>(gt.values.data[i]);
    acc += d * d;
  }
  double mean = acc / static_cast<double>(gt.values.size());
  return std::sqrt(mean) * 65535.0 * gt.scale;
}

}  // namespace ssdn
