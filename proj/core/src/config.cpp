#include <revisit/config.hpp>

#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <revisit/error.hpp>

namespace revisit {

namespace {

std::string trim(const std::string& s) {
  size_t begin = 0;
  size_t end = s.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
  return s.substr(begin, end - begin);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream ss(value);
  T out{};
  ss >> out;
  std::string rest;
  if (ss.fail() || (ss >> rest)) {
    throw Error(ErrorCode::kConfig, "invalid value '" + value + "' for key '" + key + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw Error(ErrorCode::kConfig, "invalid boolean '" + value + "' for key '" + key + "'");
}

}  // namespace

void set_config_value(PipelineConfig& c, const std::string& key, const std::string& value) {
  using Setter = std::function<void(PipelineConfig&, const std::string&, const std::string&)>;
  // aliases shorten the lambda bodies
  static const std::map<std::string, Setter> setters = {
      {"select.budget",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.select.budget = parse_number<int>(k, v);
       }},
      {"select.corner_quota",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.select.corner_quota = parse_number<int>(k, v);
       }},
      {"select.shi_tomasi_window",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.select.shi_tomasi_window = parse_number<int>(k, v);
       }},
      {"select.corner_threshold",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.select.corner_threshold = parse_number<double>(k, v);
       }},
      {"select.nms_radius",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.select.nms_radius = parse_number<int>(k, v);
       }},
      {"select.gradient_add",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.select.gradient_add = parse_number<double>(k, v);
       }},
      {"select.border_margin",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.select.border_margin = parse_number<int>(k, v);
       }},
      {"match.max_distance",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.match.max_distance = parse_number<int>(k, v);
       }},
      {"match.ratio",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.match.ratio = parse_number<double>(k, v);
       }},
      {"bow.branching",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.bow.branching = parse_number<int>(k, v);
       }},
      {"bow.depth",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.bow.depth = parse_number<int>(k, v);
       }},
      {"bow.min_score",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.bow.min_score = parse_number<double>(k, v);
       }},
      {"loop.max_candidates",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.max_candidates = parse_number<size_t>(k, v);
       }},
      {"loop.min_matches",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.min_matches = parse_number<int>(k, v);
       }},
      {"loop.sigma_2d",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.sigma_2d_px = parse_number<double>(k, v);
       }},
      {"loop.sigma_3d_factor",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.sigma_3d_depth_factor = parse_number<double>(k, v);
       }},
      {"loop.huber_2d",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.huber_2d_px = parse_number<double>(k, v);
       }},
      {"loop.huber_3d_factor",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.huber_3d_depth_factor = parse_number<double>(k, v);
       }},
      {"loop.solver_max_iterations",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.solver_max_iterations = parse_number<int>(k, v);
       }},
      {"loop.solver_eps",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.solver_convergence_eps = parse_number<double>(k, v);
       }},
      {"ransac.max_iterations",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.ransac.max_iterations = parse_number<int>(k, v);
       }},
      {"ransac.confidence",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.ransac.confidence = parse_number<double>(k, v);
       }},
      {"ransac.threshold",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.ransac.inlier_threshold_px = parse_number<double>(k, v);
       }},
      {"ransac.min_inliers",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.ransac.min_inliers = parse_number<int>(k, v);
       }},
      {"ransac.refine_steps",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.ransac.refine_steps = parse_number<int>(k, v);
       }},
      {"verify.min_inliers",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.verify.min_inliers = parse_number<int>(k, v);
       }},
      {"verify.max_mean_2d",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.verify.max_mean_residual_2d_px = parse_number<double>(k, v);
       }},
      {"verify.max_mean_3d_factor",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.verify.max_mean_residual_3d_depth_factor = parse_number<double>(k, v);
       }},
      {"graph.w_t",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.graph.w_t = parse_number<double>(k, v);
       }},
      {"graph.w_r",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.graph.w_r = parse_number<double>(k, v);
       }},
      {"graph.w_s",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.graph.w_s = parse_number<double>(k, v);
       }},
      {"graph.max_iterations",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.graph.max_iterations = parse_number<int>(k, v);
       }},
      {"graph.rel_decrease",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.graph.rel_decrease = parse_number<double>(k, v);
       }},
      {"graph.covis_all_pairs",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.graph.covis_all_pairs = parse_bool(k, v);
       }},
      {"pipeline.window_size",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.window_size = parse_number<uint32_t>(k, v);
       }},
      {"pipeline.loop_min_gap",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop_min_gap = parse_number<uint32_t>(k, v);
       }},
      {"sim.n_keyframes",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.sim.n_keyframes = parse_number<uint32_t>(k, v);
       }},
      {"sim.radius",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.sim.radius = parse_number<double>(k, v);
       }},
      {"sim.look_inward",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.sim.look_inward = parse_bool(k, v);
       }},
      {"sim.n_landmarks",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.sim.n_landmarks = parse_number<uint32_t>(k, v);
       }},
      {"sim.box_half_x",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.sim.box_half.x() = parse_number<double>(k, v);
       }},
      {"sim.box_half_y",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.sim.box_half.y() = parse_number<double>(k, v);
       }},
      {"sim.box_half_z",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.sim.box_half.z() = parse_number<double>(k, v);
       }},
      {"sim.depth_min",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.sim.depth_min = parse_number<double>(k, v);
       }},
      {"sim.depth_max",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.sim.depth_max = parse_number<double>(k, v);
       }},
      {"sim.noise_sigma",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.sim.noise_sigma = parse_number<double>(k, v);
       }},
      {"sim.depth_noise",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.sim.depth_noise = parse_number<double>(k, v);
       }},
      {"sim.intensity_min",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.sim.intensity_min = parse_number<double>(k, v);
       }},
      {"sim.intensity_max",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.sim.intensity_max = parse_number<double>(k, v);
       }},
      {"sim.timestamp_step",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.sim.timestamp_step = parse_number<double>(k, v);
       }},
      {"drift.sigma_t",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.drift.sigma_t = parse_number<double>(k, v);
       }},
      {"drift.sigma_r",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.drift.sigma_r = parse_number<double>(k, v);
       }},
      {"drift.sigma_s",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.drift.sigma_s = parse_number<double>(k, v);
       }},
  };

  const auto it = setters.find(key);
  if (it == setters.end()) {
    throw Error(ErrorCode::kConfig, "unknown configuration key '" + key + "'");
  }
  it->second(c, key, value);
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kIo, "cannot open config file: " + path);
  }
  PipelineConfig config;
  std::string line;
  size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) {
      line.resize(hash);
    }
    const std::string stripped = trim(line);
    if (stripped.empty()) {
      continue;
    }
    const size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kConfig,
                  path + ":" + std::to_string(line_number) + ": expected `key = value`");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw Error(ErrorCode::kConfig,
                  path + ":" + std::to_string(line_number) + ": empty key or value");
    }
    try {
      set_config_value(config, key, value);
    } catch (const Error& e) {
      throw Error(ErrorCode::kConfig,
                  path + ":" + std::to_string(line_number) + ": " + e.what());
    }
  }
  validate_config(config);
  return config;
}

void validate_config(const PipelineConfig& c) {
  const auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kConfig, "invalid configuration: " + what);
  };
  if (c.select.budget <= 0) fail("select.budget must be positive");
  if (c.select.corner_quota < 0 || c.select.corner_quota > c.select.budget) {
    fail("select.corner_quota must be in [0, select.budget]");
  }
  if (c.select.shi_tomasi_window < 1) fail("select.shi_tomasi_window must be >= 1");
  if (c.select.nms_radius < 1) fail("select.nms_radius must be >= 1");
  if (c.select.border_margin < 0) fail("select.border_margin must be >= 0");
  if (c.loop.match.max_distance > 256) {
    fail("match.max_distance must be in [0, 256]");
  }
  if (!(c.loop.match.ratio > 0.0 && c.loop.match.ratio <= 1.0)) {
    fail("match.ratio must be in (0, 1]");
  }
  if (c.bow.branching < 2) fail("bow.branching must be >= 2");
  if (c.bow.depth < 1) fail("bow.depth must be >= 1");
  if (!(c.bow.min_score > 0.0 && c.bow.min_score <= 1.0)) {
    fail("bow.min_score must be in (0, 1]");
  }
  if (c.loop.min_matches < 4) fail("loop.min_matches must be >= 4");
  if (!(c.loop.ransac.confidence > 0.0 && c.loop.ransac.confidence < 1.0)) {
    fail("ransac.confidence must be in (0, 1)");
  }
  if (c.loop.ransac.max_iterations < 1) fail("ransac.max_iterations must be >= 1");
  if (c.loop.ransac.min_inliers < 4) fail("ransac.min_inliers must be >= 4");
  if (c.loop.ransac.inlier_threshold_px <= 0.0) fail("ransac.threshold must be positive");
  if (c.loop.sigma_2d_px <= 0.0) fail("loop.sigma_2d must be positive");
  if (c.loop.sigma_3d_depth_factor <= 0.0) fail("loop.sigma_3d_factor must be positive");
  if (c.loop.huber_2d_px <= 0.0) fail("loop.huber_2d must be positive");
  if (c.loop.huber_3d_depth_factor <= 0.0) fail("loop.huber_3d_factor must be positive");
  if (c.loop.solver_max_iterations < 1) fail("loop.solver_max_iterations must be >= 1");
  if (c.graph.w_t <= 0.0 || c.graph.w_r <= 0.0 || c.graph.w_s <= 0.0) {
    fail("graph weights must be positive");
  }
  if (c.graph.max_iterations < 1) fail("graph.max_iterations must be >= 1");
  if (c.window_size < 2) fail("pipeline.window_size must be >= 2");
  if (c.loop_min_gap < 1) fail("pipeline.loop_min_gap must be >= 1");
  if (c.select.border_margin < 16) {
    fail("select.border_margin must be >= 16 (descriptor patch radius)");
  }
  if (c.sim.n_keyframes < 10) fail("sim.n_keyframes must be >= 10");
  if (c.sim.radius <= 0.0) fail("sim.radius must be positive");
  if (!(c.sim.depth_min > 0.0 && c.sim.depth_max > c.sim.depth_min)) {
    fail("sim depth range must satisfy 0 < depth_min < depth_max");
  }
  if (c.sim.noise_sigma < 0.0) fail("sim.noise_sigma must be >= 0");
  if (c.sim.depth_noise < 0.0) fail("sim.depth_noise must be >= 0");
  if (c.drift.sigma_t < 0.0 || c.drift.sigma_r < 0.0 || c.drift.sigma_s < 0.0) {
    fail("drift sigmas must be >= 0");
  }
}

}  // namespace revisit
