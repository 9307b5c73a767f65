#include <revisit/trajectory.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <revisit/error.hpp>

namespace revisit {

namespace {

Error format_error(const std::string& path, size_t line_number, const std::string& what) {
  return Error(ErrorCode::kFormat,
               path + ":" + std::to_string(line_number) + ": " + what);
}

}  // namespace

std::vector<TumRecord> read_tum(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kIo, "cannot open trajectory file: " + path);
  }
  std::vector<TumRecord> records;
  std::string line;
  size_t line_number = 0;
  int columns = 0;  // 0 until the first record pins the layout
  while (std::getline(in, line)) {
    ++line_number;
    std::istringstream ss(line);
    std::string first;
    if (!(ss >> first) || first[0] == '#') {
      continue;  // blank or comment line
    }
    ss.clear();
    ss.str(line);

    std::vector<double> values;
    double v = 0.0;
    while (ss >> v) {
      values.push_back(v);
    }
    std::string trailing;
    ss.clear();
    if (ss >> trailing) {
      throw format_error(path, line_number, "non-numeric token '" + trailing + "'");
    }
    if (values.size() != 8 && values.size() != 9) {
      throw format_error(path, line_number,
                         "expected 8 or 9 columns, got " + std::to_string(values.size()));
    }
    if (columns == 0) {
      columns = static_cast<int>(values.size());
    } else if (columns != static_cast<int>(values.size())) {
      throw format_error(path, line_number, "mixed column counts within one file");
    }

    TumRecord rec;
    rec.timestamp = values[0];
    rec.t = {values[1], values[2], values[3]};
    rec.q = {values[4], values[5], values[6], values[7]};
    rec.has_scale = values.size() == 9;
    if (rec.has_scale) {
      rec.s = values[8];
    }
    records.push_back(rec);
  }
  return records;
}

void write_tum(const std::string& path, const std::vector<TumRecord>& records) {
  for (const TumRecord& rec : records) {
    if (rec.has_scale != records.front().has_scale) {
      throw std::invalid_argument("trajectory records mix scaled and unscaled layouts");
    }
  }
  // (an empty record list is fine and produces an empty file)
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::kIo, "cannot open trajectory file for writing: " + path);
  }
  char buf[512];
  for (const TumRecord& rec : records) {
    int n = std::snprintf(buf, sizeof(buf), "%.6f %.9f %.9f %.9f %.9f %.9f %.9f %.9f",
                          rec.timestamp, rec.t[0], rec.t[1], rec.t[2], rec.q[0], rec.q[1],
                          rec.q[2], rec.q[3]);
    out.write(buf, n);
    if (rec.has_scale) {
      n = std::snprintf(buf, sizeof(buf), " %.9f", rec.s);
      out.write(buf, n);
    }
    out.put('\n');
  }
  if (!out) {
    throw Error(ErrorCode::kIo, "failed writing trajectory file: " + path);
  }
}

Trajectory to_trajectory(const std::vector<TumRecord>& records) {
  Trajectory traj;
  traj.reserve(records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    const TumRecord& rec = records[i];
    TrajectoryPoint p;
    p.timestamp = rec.timestamp;
    p.id = i;
    p.pose = Sim3(Quat(rec.q[3], rec.q[0], rec.q[1], rec.q[2]),
                  Vec3(rec.t[0], rec.t[1], rec.t[2]), rec.has_scale ? rec.s : 1.0);
    traj.push_back(p);
  }
  return traj;
}

std::vector<TumRecord> from_trajectory(const Trajectory& trajectory, bool with_scale) {
  std::vector<TumRecord> records;
  records.reserve(trajectory.size());
  for (const TrajectoryPoint& p : trajectory) {
    TumRecord rec;
    rec.timestamp = p.timestamp;
    rec.t = {p.pose.t.x(), p.pose.t.y(), p.pose.t.z()};
    rec.q = {p.pose.q.x(), p.pose.q.y(), p.pose.q.z(), p.pose.q.w()};
    rec.has_scale = with_scale;
    rec.s = with_scale ? p.pose.s : 1.0;
    records.push_back(rec);
  }
  return records;
}

}  // namespace revisit
