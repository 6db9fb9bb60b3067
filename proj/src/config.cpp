#include "ssdn/config.hpp"

#include <fstream>
#include <sstream>

namespace ssdn {

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  fail("config: bad boolean for " + key + ": '" + v + "'");
}

int parse_int(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    int x = std::stoi(v, &pos);
    require(pos == v.size(), "trailing junk");
    return x;
  } catch (const std::exception&) {
    fail("config: bad integer for " + key + ": '" + v + "'");
  }
}

double parse_real(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    require(pos == v.size(), "trailing junk");
    return x;
  } catch (const std::exception&) {
    fail("config: bad number for " + key + ": '" + v + "'");
  }
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  size_t e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "model.blocks") model.blocks = parse_int(value, key);
  else if (key == "model.channels") model.channels = parse_int(value, key);
  else if (key == "model.heads") model.heads = parse_int(value, key);
  else if (key == "model.expansion") model.expansion = parse_real(value, key);
  else if (key == "model.residual_output") model.residual_output = parse_bool(value, key);
  else if (key == "model.shared_encoders") model.shared_encoders = parse_bool(value, key);
  else if (key == "model.bypass_sphere") model.bypass_sphere = parse_bool(value, key);
  else if (key == "sphere.radius") model.sphere.radius = parse_real(value, key);
  else if (key == "sphere.variant") {
    if (value == "tangent_lift") model.sphere.variant = SphereVariant::tangent_lift;
    else if (value == "verbatim") model.sphere.variant = SphereVariant::verbatim;
    else fail("config: sphere.variant must be tangent_lift or verbatim");
  } else if (key == "sphere.reduction") {
    if (value == "mean") model.sphere.reduction = Reduction::mean;
    else if (value == "sum") model.sphere.reduction = Reduction::sum;
    else fail("config: sphere.reduction must be mean or sum");
  } else if (key == "sphere.strict") model.sphere.strict = parse_bool(value, key);
  else if (key == "sphere.prescale") model.sphere.prescale = parse_bool(value, key);
  else if (key == "loss.alpha1") loss.alpha1 = parse_real(value, key);
  else if (key == "loss.alpha2") loss.alpha2 = parse_real(value, key);
  else if (key == "loss.alpha3") loss.alpha3 = parse_real(value, key);
  else if (key == "loss.dec_mode") {
    if (value == "consistent") dec_mode = DecMode::consistent;
    else if (value == "verbatim") dec_mode = DecMode::verbatim;
    else fail("config: loss.dec_mode must be consistent or verbatim");
  } else if (key == "loss.dec_distance") {
    if (value == "spherical") dec_distance = DecDistance::spherical;
    else if (value == "l2") dec_distance = DecDistance::l2;
    else fail("config: loss.dec_distance must be spherical or l2");
  } else if (key == "loss.pixel_mode") {
    if (value == "sum") pixel_mode = PixelMode::sum;
    else if (value == "mean") pixel_mode = PixelMode::mean;
    else fail("config: loss.pixel_mode must be sum or mean");
  } else if (key == "defect.noise_sigma") defect.noise_sigma = parse_real(value, key);
  else if (key == "defect.blur_kernel") defect.blur_kernel = parse_int(value, key);
  else if (key == "defect.blur_sigma") defect.blur_sigma = parse_real(value, key);
  else if (key == "defect.texture_beta") defect.texture_beta = parse_real(value, key);
  else if (key == "scr.patch") scr_patch = parse_int(value, key);
  else if (key == "scr.negatives") scr_negatives = parse_int(value, key);
  else if (key == "scr.anchors") scr_anchors = parse_int(value, key);
  else if (key == "scr.period") scr_period = parse_int(value, key);
  else if (key == "scr.lr") scr_lr = parse_real(value, key);
  else if (key == "opt.lr") lr = parse_real(value, key);
  else if (key == "opt.beta1") beta1 = parse_real(value, key);
  else if (key == "opt.beta2") beta2 = parse_real(value, key);
  else if (key == "opt.cosine_decay") cosine_decay = parse_bool(value, key);
  else if (key == "train.batch") batch = parse_int(value, key);
  else if (key == "train.epochs") epochs = parse_int(value, key);
  else if (key == "train.crop") crop = parse_int(value, key);
  else if (key == "train.crops_per_scene") crops_per_scene = parse_int(value, key);
  else if (key == "train.crop_candidates") crop_candidates = parse_int(value, key);
  else if (key == "train.scale") scale = parse_int(value, key);
  else if (key == "train.seed") seed = static_cast<uint64_t>(parse_int(value, key));
  else if (key == "paths.manifest") data_manifest = value;
  else if (key == "paths.ckpt") ckpt_out = value;
  else if (key == "paths.dpc") dpc_ckpt = value;
  else if (key == "paths.loss_csv") loss_csv = value;
  else fail("config: unknown key '" + key + "'");
}

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  defect.validate();
  require(scr_patch >= 16 && scr_patch % 16 == 0, "config: scr.patch must be a multiple of 16");
  require(scr_negatives >= 1, "config: scr.negatives must be >= 1");
  require(scr_anchors >= 0, "config: scr.anchors must be >= 0");
  require(scr_period >= 0, "config: scr.period must be >= 0");
  require(scr_lr > 0 && lr > 0, "config: learning rates must be positive");
  require(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1, "config: betas in (0,1)");
  require(batch >= 1, "config: train.batch must be >= 1");
  require(epochs >= 1, "config: train.epochs must be >= 1");
  require(crop >= 16, "config: train.crop must be >= 16");
  require(crops_per_scene >= 1, "config: train.crops_per_scene must be >= 1");
  require(crop_candidates >= 1, "config: train.crop_candidates must be >= 1");
  require(scale == 4 || scale == 8 || scale == 16, "config: train.scale must be 4, 8 or 16");
}

namespace {

void apply_line(RunConfig& cfg, const std::string& raw, const std::string& where) {
  std::string line = raw;
  auto hash = line.find('#');
  if (hash != std::string::npos) line = line.substr(0, hash);
  line = trim(line);
  if (line.empty()) return;
  auto eq = line.find('=');
  require(eq != std::string::npos, "config: expected key = value in " + where + ": '" + raw + "'");
  std::string key = trim(line.substr(0, eq));
  std::string value = trim(line.substr(eq + 1));
  require(!key.empty() && !value.empty(),
          "config: empty key or value in " + where + ": '" + raw + "'");
  cfg.set(key, value);
}

}  // namespace

RunConfig parse_config_file(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream is(path);
    require(is.good(), "config: cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) apply_line(cfg, line, path + ":" + std::to_string(++lineno));
  }
  for (const std::string& ov : overrides) apply_line(cfg, ov, "override");
  cfg.validate();
  return cfg;
}

RunConfig parse_overrides(const std::vector<std::string>& overrides) {
  return parse_config_file("", overrides);
}

}  // namespace ssdn
