#pragma once

#include <array>
#include <string>
#include <vector>

#include <revisit/evaluation.hpp>

namespace revisit {

// One trajectory-file line, kept as raw parsed numbers so that
// write_tum(read_tum(path)) reproduces writer-produced files byte for byte
// (no quaternion renormalization at this layer).
struct TumRecord {
  double timestamp = 0.0;
  std::array<double, 3> t{0.0, 0.0, 0.0};
  std::array<double, 4> q{0.0, 0.0, 0.0, 1.0};  // x y z w
  double s = 1.0;
  bool has_scale = false;
};

// Whitespace-separated `timestamp tx ty tz qx qy qz qw` with an optional
// trailing scale column; `#` comment lines and blank lines are skipped.
// Throws Io when the file cannot be opened and Format (with the line number)
// on malformed tokens, wrong column counts, or mixed 8/9-column records.
std::vector<TumRecord> read_tum(const std::string& path);

// Writes `%.6f` timestamps and `%.9f` pose fields, one record per line, with
// the scale column present exactly when records carry one. Throws Io on
// write failure and std::invalid_argument when records mix has_scale flags.
void write_tum(const std::string& path, const std::vector<TumRecord>& records);

// Conversion to the evaluation-layer trajectory; ids are record indices and
// quaternions are normalized on construction. Records without a scale column
// become scale-1 poses.
Trajectory to_trajectory(const std::vector<TumRecord>& records);

// Inverse conversion; with_scale selects the 9-column Sim(3) layout.
std::vector<TumRecord> from_trajectory(const Trajectory& trajectory, bool with_scale);

}  // namespace revisit
