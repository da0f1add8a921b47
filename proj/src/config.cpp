#include "magsplat/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "magsplat/rng.hpp"

namespace magsplat {

namespace {

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

void parse(const std::string& key, const std::string& s, double& out) {
  try {
    size_t pos = 0;
    out = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
  } catch (const std::exception&) {
    throw Error(ErrorKind::ConfigError, key + ": expected a number, got '" + s + "'");
  }
}
template <typename I>
void parse_int(const std::string& key, const std::string& s, I& out) {
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw Error(ErrorKind::ConfigError, key + ": expected an integer, got '" + s + "'");
  }
}
void parse(const std::string& key, const std::string& s, int& out) { parse_int(key, s, out); }
void parse(const std::string& key, const std::string& s, std::uint64_t& out) { parse_int(key, s, out); }
void parse(const std::string& key, const std::string& s, bool& out) {
  if (s == "true" || s == "1") out = true;
  else if (s == "false" || s == "0") out = false;
  else throw Error(ErrorKind::ConfigError, key + ": expected true or false, got '" + s + "'");
}

// Visits every field as (name, reference).
template <typename C, typename V>
void visit_train(C& c, V&& v) {
  v("stage1_iters", c.stage1_iters);
  v("stage2_iters", c.stage2_iters);
  v("lr_start", c.lr_start);
  v("lr_end", c.lr_end);
  v("n_control", c.n_control);
  v("knn", c.knn);
  v("loss.lambda_arap", c.loss.lambda_arap);
  v("loss.lambda_rigid", c.loss.lambda_rigid);
  v("loss.lambda_dssim", c.loss.lambda_dssim);
  v("densify_interval", c.densify_interval);
  v("densify_threshold", c.densify_threshold);
  v("max_control_factor", c.max_control_factor);
  v("seed", c.seed);
  v("field.pos_freqs", c.field.pos_freqs);
  v("field.time_freqs", c.field.time_freqs);
  v("field.hidden_layers", c.field.hidden_layers);
  v("field.hidden_width", c.field.hidden_width);
  v("sh_degree", c.sh_degree);
  v("init_pixel_stride", c.init_pixel_stride);
  v("init_frame_stride", c.init_frame_stride);
  v("init_opacity", c.init_opacity);
  v("dynamic_control_fraction", c.dynamic_control_fraction);
  v("stage1_opacity", c.stage1_opacity);
  v("lr_position", c.lr_position);
  v("lr_rotation", c.lr_rotation);
  v("lr_scale", c.lr_scale);
  v("lr_opacity", c.lr_opacity);
  v("lr_color", c.lr_color);
  v("holdout_every", c.holdout_every);
  v("deformation", c.deformation);
  v("workers", c.workers);
}

template <typename C, typename V>
void visit_maba(C& c, V&& v) {
  v("filter.tau_c", c.filter.tau_c);
  v("filter.tau_d", c.filter.tau_d);
  v("ransac.inlier_threshold_px", c.ransac.inlier_threshold_px);
  v("ransac.confidence", c.ransac.confidence);
  v("ransac.max_iters", c.ransac.max_iters);
  v("ransac.min_sample", c.ransac.min_sample);
  v("ransac.min_inlier_ratio", c.ransac.min_inlier_ratio);
  v("ransac.seed", c.ransac.seed);
  v("prompts", c.prompts);
  v("tau_m", c.tau_m);
  v("use_masks", c.use_masks);
  v("max_ba_iters", c.max_ba_iters);
  v("cost_tolerance", c.cost_tolerance);
  v("damping", c.damping);
  v("workers", c.workers);
}

template <typename C, typename Visit>
std::map<std::string, std::string> to_map(const C& c, Visit visit) {
  std::map<std::string, std::string> out;
  visit(c, [&](const char* name, const auto& field) { out[name] = fmt(field); });
  return out;
}

template <typename C, typename Visit>
void from_map(C& c, const std::map<std::string, std::string>& kv, Visit visit) {
  size_t used = 0;
  visit(c, [&](const char* name, auto& field) {
    auto it = kv.find(name);
    if (it == kv.end()) return;
    parse(it->first, it->second, field);
    ++used;
  });
  if (used != kv.size()) {
    std::map<std::string, std::string> known = to_map(c, visit);
    for (const auto& [k, v] : kv) {
      if (!known.count(k)) throw Error(ErrorKind::ConfigError, "unknown config key '" + k + "'");
    }
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::ConfigError, m); };
  if (stage1_iters < 0 || stage2_iters < 0) fail("iteration counts must be non-negative");
  if (!(lr_end > 0.0) || !(lr_start >= lr_end)) fail("need lr_start >= lr_end > 0");
  if (n_control < 1) fail("n_control must be at least 1");
  if (knn < 1) fail("knn must be at least 1");
  loss.validate();
  if (densify_interval < 1) fail("densify_interval must be positive");
  if (!(densify_threshold > 0.0)) fail("densify_threshold must be positive");
  if (max_control_factor < 1) fail("max_control_factor must be at least 1");
  if (field.pos_freqs < 0 || field.time_freqs < 0 || field.hidden_layers < 1 || field.hidden_width < 1) {
    fail("invalid field architecture");
  }
  if (sh_degree < 0 || sh_degree > kMaxShDegree) fail("sh_degree must be in [0, 3]");
  if (init_pixel_stride < 1 || init_frame_stride < 1) fail("init strides must be positive");
  if (!(init_opacity > 0.0 && init_opacity < 1.0)) fail("init_opacity must lie in (0, 1)");
  if (!(stage1_opacity > 0.0 && stage1_opacity < 1.0)) fail("stage1_opacity must lie in (0, 1)");
  if (!(dynamic_control_fraction >= 0.0 && dynamic_control_fraction <= 1.0)) {
    fail("dynamic_control_fraction must lie in [0, 1]");
  }
  for (double lr : {lr_position, lr_rotation, lr_scale, lr_opacity, lr_color}) {
    if (!(lr >= 0.0)) fail("stage-2 learning rates must be non-negative");
  }
  if (holdout_every < 0 || holdout_every == 1) fail("holdout_every must be 0 or at least 2");
  if (workers < 1) fail("workers must be at least 1");
}

void PoseSettings::validate() const {
  maba.filter.validate();
  maba.ransac.validate();
  if (maba.prompts < 1) throw Error(ErrorKind::ConfigError, "prompts must be at least 1");
  if (maba.max_ba_iters < 0) throw Error(ErrorKind::ConfigError, "max_ba_iters must be non-negative");
}

std::map<std::string, std::string> config_to_map(const TrainConfig& cfg) {
  return to_map(cfg, [](auto& c, auto&& v) { visit_train(c, v); });
}
void apply_config(TrainConfig& cfg, const std::map<std::string, std::string>& kv) {
  from_map(cfg, kv, [](auto& c, auto&& v) { visit_train(c, v); });
}
std::map<std::string, std::string> config_to_map(const MaBaConfig& cfg) {
  return to_map(cfg, [](auto& c, auto&& v) { visit_maba(c, v); });
}
void apply_config(MaBaConfig& cfg, const std::map<std::string, std::string>& kv) {
  from_map(cfg, kv, [](auto& c, auto&& v) { visit_maba(c, v); });
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::ConfigError, "line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(ErrorKind::ConfigError, "line " + std::to_string(lineno) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_key_value_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

std::string format_key_values(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t config_hash(const TrainConfig& cfg) {
  auto kv = config_to_map(cfg);
  kv.erase("workers");
  return fnv1a64(format_key_values(kv));
}

}  // namespace magsplat
