#pragma once

// Run results and their on-disk form: populations.csv, scattering.csv,
// snapshots/*.csv and manifest.json, all written temp-then-rename.

#include "phasehop/types.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace phasehop {

struct ChannelTally {
  std::string channel;  // transmitted | reflected
  std::string state;    // surface_n | diabat_n
  double fraction = 0.0;
  double stderr_ = 0.0;
};

/// (X, P, value) triplets of one density element on the phase-space grid.
struct Snapshot {
  double time = 0.0;
  std::vector<double> x;
  std::vector<double> p;
  std::vector<double> value;
};

struct RunRecord {
  std::vector<double> times;
  std::vector<std::string> columns;         // besides t
  std::vector<std::vector<double>> series;  // series[column][time]
  std::vector<ChannelTally> channels;
  std::vector<Snapshot> snapshots;
  nlohmann::json diagnostics = nlohmann::json::object();

  [[nodiscard]] const std::vector<double>& column(const std::string& name) const {
    for (std::size_t c = 0; c < columns.size(); ++c)
      if (columns[c] == name) return series[c];
    throw Error("no column '" + name + "' in run record");
  }

  [[nodiscard]] double channel(const std::string& ch, const std::string& state) const {
    for (const auto& t : channels)
      if (t.channel == ch && t.state == state) return t.fraction;
    throw Error("no channel " + ch + "/" + state + " in run record");
  }

  [[nodiscard]] const ChannelTally& tally(const std::string& ch, const std::string& state) const {
    for (const auto& t : channels)
      if (t.channel == ch && t.state == state) return t;
    throw Error("no channel " + ch + "/" + state + " in run record");
  }
};

/// Engine failure that still produced a usable prefix of the run.
class PartialRunError : public IntegratorError {
 public:
  PartialRunError(const std::string& what, RunRecord partial) : IntegratorError(what), partial_(std::move(partial)) {}
  [[nodiscard]] const RunRecord& partial() const { return partial_; }

 private:
  RunRecord partial_;
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp + " for writing");
    out << content;
    if (!out) throw Error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::string populations_csv(const RunRecord& rec) {
  std::ostringstream os;
  os << "t";
  for (const auto& c : rec.columns) os << ',' << c;
  os << '\n';
  for (std::size_t i = 0; i < rec.times.size(); ++i) {
    os << format_double(rec.times[i]);
    for (const auto& s : rec.series) os << ',' << format_double(s[i]);
    os << '\n';
  }
  return os.str();
}

inline std::string scattering_csv(const RunRecord& rec) {
  std::ostringstream os;
  os << "channel,state,fraction,stderr\n";
  for (const auto& t : rec.channels) {
    os << t.channel << ',' << t.state << ',' << format_double(t.fraction) << ','
       << format_double(t.stderr_) << '\n';
  }
  return os.str();
}

inline std::string snapshot_csv(const Snapshot& s) {
  std::ostringstream os;
  os << "X,P,value\n";
  for (std::size_t i = 0; i < s.value.size(); ++i) {
    os << format_double(s.x[i]) << ',' << format_double(s.p[i]) << ',' << format_double(s.value[i])
       << '\n';
  }
  return os.str();
}

/// Snapshot file name for time t: integer times print without decimals.
inline std::string snapshot_name(double t) {
  std::ostringstream os;
  if (std::abs(t - std::round(t)) < 1e-9) {
    os << "rho11_t" << static_cast<long long>(std::llround(t)) << ".csv";
  } else {
    os << "rho11_t" << format_double(t) << ".csv";
  }
  return os.str();
}

inline void write_record(const std::filesystem::path& dir, const RunRecord& rec,
                         const nlohmann::json& manifest) {
  std::filesystem::create_directories(dir);
  atomic_write(dir / "populations.csv", populations_csv(rec));
  if (!rec.channels.empty()) atomic_write(dir / "scattering.csv", scattering_csv(rec));
  for (const auto& s : rec.snapshots) atomic_write(dir / "snapshots" / snapshot_name(s.time), snapshot_csv(s));
  atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
}

/// Binomial standard error of a fraction over n samples.
inline double binomial_stderr(double p, std::size_t n) {
  if (n == 0) return 0.0;
  return std::sqrt(std::max(p * (1.0 - p), 0.0) / static_cast<double>(n));
}

}  // namespace phasehop
