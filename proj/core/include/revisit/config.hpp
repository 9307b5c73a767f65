#pragma once

#include <cstdint>
#include <string>

#include <revisit/loop_closure.hpp>
#include <revisit/pixel_select.hpp>
#include <revisit/simulator.hpp>

namespace revisit {

// Pose-graph construction and optimization parameters.
struct GraphConfig {
  double w_t = 1e4;  // translation information weight
  double w_r = 1e6;  // rotation information weight
  double w_s = 1e6;  // scale information weight
  int max_iterations = 50;
  double rel_decrease = 1e-9;      // convergence threshold on relative chi2 drop
  bool covis_all_pairs = true;     // false: consecutive window pairs only
};

struct VocabularyParams {
  int branching = 10;
  int depth = 3;
  double min_score = 0.05;  // database match floor
};

// Every tunable of the pipeline, loadable from a flat `key = value` file.
struct PipelineConfig {
  SelectConfig select;
  VocabularyParams bow;
  LoopClosureConfig loop;
  GraphConfig graph;
  uint32_t window_size = 7;    // odometry window (marginalization delay)
  uint32_t loop_min_gap = 30;  // candidates this close to the query are excluded
  SimConfig sim;
  DriftModel drift;
};

// Parses `key = value` lines; `#` starts a comment (full-line or trailing),
// blank lines are ignored. Unknown keys, malformed lines, and out-of-range
// values raise Config errors carrying the file name and line number.
// Returned values start from the defaults above. See set_config_value for
// the key list.
PipelineConfig load_config(const std::string& path);

// Applies one key/value pair (the parser's core, exposed for tests and for
// CLI `--set key=value` style overrides). Throws Config on unknown keys or
// unparseable values.
void set_config_value(PipelineConfig& config, const std::string& key, const std::string& value);

// Sanity checks cross-field constraints (positive budgets, window >= 2,
// ratio in (0,1], ...). Throws Config with the offending key.
void validate_config(const PipelineConfig& config);

}  // namespace revisit
