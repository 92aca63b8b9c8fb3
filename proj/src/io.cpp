#include "otrack/io.hpp"

#include <cstdio>
#include <fstream>

#include "otrack/tracker.hpp"

namespace otrack {

void write_track_result(const std::string& path, const TrackResult& result) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("write_track_result: cannot open " + tmp);
    io::write_magic(os, "OTRK");
    io::write_u32(os, 1);
    io::write_u32(os, static_cast<uint32_t>(result.t));
    io::write_u32(os, static_cast<uint32_t>(result.n));
    io::write_u32(os, static_cast<uint32_t>(result.stride));
    io::write_u64(os, result.config_hash);
    io::write_f32_array(os, result.tracks);
    io::write_u32(os, static_cast<uint32_t>(result.iteration_deltas.size()));
    io::write_f32_array(os, result.iteration_deltas);
    if (!os) throw FormatError("write_track_result: short write");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw FormatError("write_track_result: cannot move " + tmp + " into place");
}

TrackResult read_track_result(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("read_track_result: cannot open " + path);
  io::check_magic(is, "OTRK", "track result");
  if (io::read_u32(is) != 1) throw FormatError("read_track_result: unsupported version");
  TrackResult r;
  r.t = static_cast<int>(io::read_u32(is));
  r.n = static_cast<int>(io::read_u32(is));
  r.stride = static_cast<int>(io::read_u32(is));
  r.config_hash = io::read_u64(is);
  if (r.t < 1 || r.n < 1 || r.t > 1 << 24 || r.n > 1 << 24)
    throw FormatError("read_track_result: implausible header fields");
  r.tracks.resize(static_cast<size_t>(r.t) * r.n * 2);
  io::read_f32_array(is, r.tracks, "track payload");
  const uint32_t diag = io::read_u32(is);
  if (diag > (1u << 24)) throw FormatError("read_track_result: implausible diagnostics count");
  r.iteration_deltas.resize(diag);
  io::read_f32_array(is, r.iteration_deltas, "track diagnostics");
  return r;
}

void write_track_csv(const std::string& path, const TrackResult& result) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("write_track_csv: cannot open " + path);
  os << "frame,track_id,x,y\n";
  char buf[96];
  for (int t = 0; t < result.t; ++t)
    for (int i = 0; i < result.n; ++i) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%.6f,%.6f\n", t, i,
                    static_cast<double>(result.x(t, i)), static_cast<double>(result.y(t, i)));
      os << buf;
    }
}

}  // namespace otrack
