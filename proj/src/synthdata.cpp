#include "otrack/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "otrack/io.hpp"
#include "otrack/rng.hpp"

namespace otrack {

namespace {

constexpr double kPi = 3.14159265358979323846;

// seeded value noise: a coarse random lattice sampled with bilinear
// interpolation and wraparound, so appearance matching is non-trivial
struct ValueNoise {
  int n = 0;
  double scale = 1.0;
  std::vector<float> lattice;  // [3, n, n]

  static ValueNoise make(Rng& rng, int n, double scale, float lo, float hi) {
    ValueNoise v;
    v.n = n;
    v.scale = scale;
    v.lattice.resize(static_cast<size_t>(3) * n * n);
    for (auto& x : v.lattice) x = static_cast<float>(rng.uniform(lo, hi));
    return v;
  }

  void sample(double x, double y, float rgb[3]) const {
    const double fx = x / scale, fy = y / scale;
    const double bx = std::floor(fx), by = std::floor(fy);
    const double wx = fx - bx, wy = fy - by;
    auto wrap = [this](long long i) {
      long long m = i % n;
      return static_cast<int>(m < 0 ? m + n : m);
    };
    const int x0 = wrap(static_cast<long long>(bx)), x1 = wrap(static_cast<long long>(bx) + 1);
    const int y0 = wrap(static_cast<long long>(by)), y1 = wrap(static_cast<long long>(by) + 1);
    for (int c = 0; c < 3; ++c) {
      const float* l = lattice.data() + static_cast<size_t>(c) * n * n;
      const double v00 = l[y0 * n + x0], v01 = l[y0 * n + x1];
      const double v10 = l[y1 * n + x0], v11 = l[y1 * n + x1];
      rgb[c] = static_cast<float>((1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                  wy * ((1 - wx) * v10 + wx * v11));
    }
  }
};

enum ShapeKind { kDisk = 0, kRect = 1, kTriangle = 2 };

struct SceneObject {
  int kind = kDisk;
  double radius = 8.0;
  double cx0 = 0, cy0 = 0;
  double vx = 0, vy = 0;
  double amp_x = 0, amp_y = 0, freq = 0, phase = 0;
  bool sample_tracks = true;  // occluders carry no query points
  ValueNoise tex;

  void pos(int t, double& cx, double& cy) const {
    cx = cx0 + vx * t + amp_x * std::sin(2 * kPi * freq * t + phase);
    cy = cy0 + vy * t + amp_y * std::sin(2 * kPi * freq * t + phase + 1.1);
  }

  bool inside(double lx, double ly) const {
    switch (kind) {
      case kDisk:
        return lx * lx + ly * ly <= radius * radius;
      case kRect:
        return std::abs(lx) <= radius * 0.95 && std::abs(ly) <= radius * 0.75;
      default: {  // triangle with apex up
        const double x1 = 0, y1 = -radius, x2 = -radius * 0.95, y2 = radius * 0.8,
                     x3 = radius * 0.95, y3 = radius * 0.8;
        auto cross = [](double ax, double ay, double bx, double by, double px, double py) {
          return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
        };
        const double c1 = cross(x1, y1, x2, y2, lx, ly);
        const double c2 = cross(x2, y2, x3, y3, lx, ly);
        const double c3 = cross(x3, y3, x1, y1, lx, ly);
        return (c1 <= 0 && c2 <= 0 && c3 <= 0) || (c1 >= 0 && c2 >= 0 && c3 >= 0);
      }
    }
  }
};

bool point_in_frame(double x, double y, int w, int h) {
  return x >= 0.0 && x <= w - 1.0 && y >= 0.0 && y <= h - 1.0;
}

}  // namespace

Clip generate_clip(const SceneSpec& spec) {
  const int h = spec.height, w = spec.width, t_len = spec.length, n_tracks = spec.tracks;
  if (h < 8 || w < 8 || t_len < 1 || n_tracks < 1)
    throw DataError("generate_clip: degenerate scene spec");
  if (spec.n_objects > 0 && 2.0 * spec.min_radius + 4.0 > std::min(h, w))
    throw DataError("generate_clip: objects larger than the frame");
  Rng rng(spec.seed);

  // background statistics match the object textures so bare appearance
  // matching is ambiguous near boundaries
  ValueNoise bg = ValueNoise::make(rng, 8, rng.uniform(3.5, 6.0), 0.1f, 0.9f);
  std::vector<ValueNoise> texture_pool;
  for (int i = 0; i < spec.texture_pool; ++i)
    texture_pool.push_back(ValueNoise::make(rng, 6, rng.uniform(3.5, 6.0), 0.1f, 0.9f));

  std::vector<SceneObject> objects;
  const double vmax = 2.5 * spec.velocity_scale;
  auto bounded_velocity = [&](double c0, double lo, double hi) {
    // keep the center inside [lo, hi] for the whole clip
    const double span_lo = (lo - c0) / std::max(1, t_len - 1);
    const double span_hi = (hi - c0) / std::max(1, t_len - 1);
    const double vlo = std::max(-vmax, span_lo), vhi = std::min(vmax, span_hi);
    return vlo < vhi ? rng.uniform(vlo, vhi) : 0.0;
  };
  for (int i = 0; i < spec.n_objects; ++i) {
    SceneObject o;
    o.kind = rng.uniform_int(3);
    o.radius = rng.uniform(spec.min_radius, spec.max_radius);
    o.cx0 = rng.uniform(o.radius, w - 1 - o.radius);
    o.cy0 = rng.uniform(o.radius, h - 1 - o.radius);
    if (spec.velocity_scale > 0.0) {
      o.vx = bounded_velocity(o.cx0, o.radius * 0.5, w - 1 - o.radius * 0.5);
      o.vy = bounded_velocity(o.cy0, o.radius * 0.5, h - 1 - o.radius * 0.5);
      if (rng.bernoulli(spec.sine_prob)) {
        o.amp_x = rng.uniform(0.0, 1.5 * spec.velocity_scale);
        o.amp_y = rng.uniform(0.0, 1.5 * spec.velocity_scale);
        o.freq = rng.uniform(0.05, 0.2);
        o.phase = rng.uniform(0.0, 2 * kPi);
      }
    }
    o.tex = texture_pool.empty()
                ? ValueNoise::make(rng, 6, rng.uniform(3.5, 6.0), 0.1f, 0.9f)
                : texture_pool[static_cast<size_t>(rng.uniform_int(
                      static_cast<int>(texture_pool.size())))];
    objects.push_back(std::move(o));
  }
  // optional crossing pair: two lookalike objects aimed through a common
  // point mid-clip, so one occludes its twin while both keep moving
  if (spec.n_objects >= 2 && spec.velocity_scale > 0.0 &&
      rng.bernoulli(spec.crossing_pair_prob)) {
    const int a = rng.uniform_int(spec.n_objects);
    int b = rng.uniform_int(spec.n_objects - 1);
    if (b >= a) ++b;
    objects[static_cast<size_t>(b)].tex = objects[static_cast<size_t>(a)].tex;
    const double cx = rng.uniform(w * 0.3, w * 0.7);
    const double cy = rng.uniform(h * 0.3, h * 0.7);
    const double tc = rng.uniform(0.35, 0.7) * std::max(1, t_len - 1);
    for (int oi : {a, b}) {
      SceneObject& o = objects[static_cast<size_t>(oi)];
      o.amp_x = o.amp_y = 0.0;  // clean straight-line crossing
      const double lo_x = o.radius * 0.5, hi_x = w - 1 - o.radius * 0.5;
      const double lo_y = o.radius * 0.5, hi_y = h - 1 - o.radius * 0.5;
      const double span = std::max(1, t_len - 1);
      auto clamp_v = [&](double v, double c0, double lo, double hi) {
        v = std::min(std::max(v, -vmax), vmax);
        v = std::max(v, (lo - c0) / span);
        v = std::min(v, (hi - c0) / span);
        return v;
      };
      o.vx = clamp_v((cx - o.cx0) / tc, o.cx0, lo_x, hi_x);
      o.vy = clamp_v((cy - o.cy0) / tc, o.cy0, lo_y, hi_y);
    }
  }

  // optional occluder: fast, topmost, larger, crossing the frame center
  const bool has_occluder = spec.n_objects > 0 && rng.bernoulli(spec.occluder_prob);
  if (has_occluder) {
    SceneObject o;
    o.kind = rng.uniform_int(3);
    o.radius = rng.uniform(spec.max_radius, spec.max_radius * 1.5);
    o.sample_tracks = false;
    const double speed = std::max(1.0, vmax);
    if (rng.bernoulli(0.5)) {  // sweep horizontally across the center
      o.vx = rng.bernoulli(0.5) ? speed : -speed;
      o.cx0 = w / 2.0 - o.vx * (t_len / 2.0);
      o.cy0 = rng.uniform(h * 0.3, h * 0.7);
    } else {
      o.vy = rng.bernoulli(0.5) ? speed : -speed;
      o.cy0 = h / 2.0 - o.vy * (t_len / 2.0);
      o.cx0 = rng.uniform(w * 0.3, w * 0.7);
    }
    o.tex = texture_pool.empty()
                ? ValueNoise::make(rng, 6, rng.uniform(3.5, 6.0), 0.1f, 0.9f)
                : texture_pool[static_cast<size_t>(rng.uniform_int(
                      static_cast<int>(texture_pool.size())))];
    objects.push_back(std::move(o));
  }

  Clip clip;
  clip.t = t_len;
  clip.h = h;
  clip.w = w;
  clip.n = n_tracks;
  clip.frames = Tensor<float>::zeros({t_len, 3, h, w});
  clip.masks.assign(static_cast<size_t>(t_len), MaskMap(h, w));
  clip.tracks_gt.assign(static_cast<size_t>(t_len) * n_tracks * 2, 0.0f);
  clip.visibility.assign(static_cast<size_t>(t_len) * n_tracks, 0);
  clip.instance_of_track.assign(static_cast<size_t>(n_tracks), 0);

  // rasterize back-to-front (draw order = depth order; later objects on top)
  auto px = clip.frames.raw();
  for (int t = 0; t < t_len; ++t) {
    float* fr = px.data() + static_cast<size_t>(t) * 3 * h * w;
    MaskMap& mask = clip.masks[static_cast<size_t>(t)];
    float rgb[3];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        bg.sample(x, y, rgb);
        for (int c = 0; c < 3; ++c) fr[(static_cast<size_t>(c) * h + y) * w + x] = rgb[c];
      }
    for (size_t oi = 0; oi < objects.size(); ++oi) {
      const SceneObject& o = objects[oi];
      double cx, cy;
      o.pos(t, cx, cy);
      const int x_lo = std::max(0, static_cast<int>(std::floor(cx - o.radius - 1)));
      const int x_hi = std::min(w - 1, static_cast<int>(std::ceil(cx + o.radius + 1)));
      const int y_lo = std::max(0, static_cast<int>(std::floor(cy - o.radius - 1)));
      const int y_hi = std::min(h - 1, static_cast<int>(std::ceil(cy + o.radius + 1)));
      const uint16_t id = static_cast<uint16_t>(oi + 1);
      for (int y = y_lo; y <= y_hi; ++y)
        for (int x = x_lo; x <= x_hi; ++x) {
          if (!o.inside(x - cx, y - cy)) continue;
          o.tex.sample(x - cx, y - cy, rgb);
          for (int c = 0; c < 3; ++c) fr[(static_cast<size_t>(c) * h + y) * w + x] = rgb[c];
          mask.at(y, x) = id;
        }
    }
  }

  // query points: object-attached (rigid local offsets) plus a background share
  const int want_bg = static_cast<int>(std::lround(n_tracks * spec.background_track_frac));
  std::vector<int> sampleable;
  for (size_t oi = 0; oi < objects.size(); ++oi)
    if (objects[oi].sample_tracks) sampleable.push_back(static_cast<int>(oi));
  for (int i = 0; i < n_tracks; ++i) {
    bool placed = false;
    const bool want_object = !sampleable.empty() && i >= want_bg;
    if (want_object) {
      for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        const int oi = sampleable[static_cast<size_t>(rng.uniform_int(
            static_cast<int>(sampleable.size())))];
        const SceneObject& o = objects[static_cast<size_t>(oi)];
        double lx = 0, ly = 0;
        bool inside = false;
        for (int k = 0; k < 64 && !inside; ++k) {
          lx = rng.uniform(-o.radius, o.radius);
          ly = rng.uniform(-o.radius, o.radius);
          inside = o.inside(lx, ly);
        }
        if (!inside) continue;
        double cx, cy;
        o.pos(0, cx, cy);
        const double x0 = cx + lx, y0 = cy + ly;
        if (!point_in_frame(x0, y0, w, h)) continue;
        if (mask_lookup(clip.masks[0], x0, y0) != oi + 1) continue;  // needs topmost
        clip.instance_of_track[static_cast<size_t>(i)] = oi + 1;
        for (int t = 0; t < t_len; ++t) {
          o.pos(t, cx, cy);
          clip.tracks_gt[(static_cast<size_t>(t) * n_tracks + i) * 2] =
              static_cast<float>(cx + lx);
          clip.tracks_gt[(static_cast<size_t>(t) * n_tracks + i) * 2 + 1] =
              static_cast<float>(cy + ly);
        }
        placed = true;
      }
    }
    if (!placed) {  // background point (also the fallback)
      double x0 = 0, y0 = 0;
      bool ok = false;
      for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
        x0 = rng.uniform(1.0, w - 2.0);
        y0 = rng.uniform(1.0, h - 2.0);
        ok = mask_lookup(clip.masks[0], x0, y0) == 0;
      }
      if (!ok) throw DataError("generate_clip: could not place a background query point");
      clip.instance_of_track[static_cast<size_t>(i)] = 0;
      for (int t = 0; t < t_len; ++t) {
        clip.tracks_gt[(static_cast<size_t>(t) * n_tracks + i) * 2] = static_cast<float>(x0);
        clip.tracks_gt[(static_cast<size_t>(t) * n_tracks + i) * 2 + 1] = static_cast<float>(y0);
      }
    }
  }

  // visibility: in frame and topmost (same nearest-pixel rule as mask_lookup)
  for (int t = 0; t < t_len; ++t)
    for (int i = 0; i < n_tracks; ++i) {
      const double x = clip.track_x(t, i), y = clip.track_y(t, i);
      const bool vis = point_in_frame(x, y, w, h) &&
                       mask_lookup(clip.masks[static_cast<size_t>(t)], x, y) ==
                           clip.instance_of_track[static_cast<size_t>(i)];
      clip.visibility[static_cast<size_t>(t) * n_tracks + i] = vis ? 1 : 0;
    }
  return clip;
}

std::vector<std::string> verify_clip(const Clip& clip) {
  std::vector<std::string> violations;
  auto complain = [&](const std::string& s) { violations.push_back(s); };
  if (clip.frames.shape() != Shape{clip.t, 3, clip.h, clip.w})
    complain("frames shape mismatch");
  if (static_cast<int>(clip.masks.size()) != clip.t) complain("mask frame count mismatch");
  if (static_cast<int>(clip.tracks_gt.size()) != clip.t * clip.n * 2)
    complain("tracks array size mismatch");
  if (static_cast<int>(clip.visibility.size()) != clip.t * clip.n)
    complain("visibility array size mismatch");
  if (static_cast<int>(clip.instance_of_track.size()) != clip.n)
    complain("instance_of_track size mismatch");
  if (!violations.empty()) return violations;

  for (const auto& m : clip.masks)
    if (m.h != clip.h || m.w != clip.w) complain("mask extent mismatch");
  for (float v : clip.frames.data())
    if (!(v >= 0.0f && v <= 1.0f)) {
      complain("frame value outside [0,1]");
      break;
    }
  for (int i = 0; i < clip.n; ++i)
    if (!clip.visible(0, i))
      complain("track " + std::to_string(i) + " not visible on the query frame");
  for (int t = 0; t < clip.t; ++t)
    for (int i = 0; i < clip.n; ++i) {
      if (!clip.visible(t, i)) continue;
      const double x = clip.track_x(t, i), y = clip.track_y(t, i);
      if (!point_in_frame(x, y, clip.w, clip.h)) {
        complain("visible point out of frame at t=" + std::to_string(t) +
                 " track=" + std::to_string(i));
        continue;
      }
      if (mask_lookup(clip.masks[static_cast<size_t>(t)], x, y) !=
          clip.instance_of_track[static_cast<size_t>(i)])
        complain("visible point off its instance at t=" + std::to_string(t) +
                 " track=" + std::to_string(i));
    }
  return violations;
}

int64_t clip_file_size(int t, int h, int w, int n) {
  return 24 + 4LL * t * 3 * h * w + 4LL * t * n * 2 + (static_cast<int64_t>(t) * n + 7) / 8 +
         2LL * t * h * w + 4LL * n;
}

void write_clip(const std::string& path, const Clip& clip) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("write_clip: cannot open " + tmp);
    io::write_magic(os, "OCLP");
    io::write_u32(os, 1);
    io::write_u32(os, static_cast<uint32_t>(clip.t));
    io::write_u32(os, static_cast<uint32_t>(clip.h));
    io::write_u32(os, static_cast<uint32_t>(clip.w));
    io::write_u32(os, static_cast<uint32_t>(clip.n));
    io::write_f32_array(os, clip.frames.data());
    io::write_f32_array(os, clip.tracks_gt);
    std::vector<uint8_t> bits((clip.visibility.size() + 7) / 8, 0);
    for (size_t i = 0; i < clip.visibility.size(); ++i)
      if (clip.visibility[i]) bits[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
    os.write(reinterpret_cast<const char*>(bits.data()),
             static_cast<std::streamsize>(bits.size()));
    for (const auto& m : clip.masks) io::write_u16_array(os, m.ids);
    io::write_i32_array(os, clip.instance_of_track);
    if (!os) throw FormatError("write_clip: short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw FormatError("write_clip: cannot move " + tmp + " into place");
}

Clip read_clip(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("read_clip: cannot open " + path);
  io::check_magic(is, "OCLP", "clip");
  const uint32_t version = io::read_u32(is);
  if (version != 1)
    throw FormatError("read_clip: unsupported clip version " + std::to_string(version));
  Clip clip;
  clip.t = static_cast<int>(io::read_u32(is));
  clip.h = static_cast<int>(io::read_u32(is));
  clip.w = static_cast<int>(io::read_u32(is));
  clip.n = static_cast<int>(io::read_u32(is));
  if (clip.t < 1 || clip.h < 1 || clip.w < 1 || clip.n < 1 || clip.t > 1 << 20 ||
      clip.h > 1 << 14 || clip.w > 1 << 14 || clip.n > 1 << 20)
    throw FormatError("read_clip: implausible header fields");
  std::vector<float> frames(static_cast<size_t>(clip.t) * 3 * clip.h * clip.w);
  io::read_f32_array(is, frames, "clip frames");
  clip.frames = Tensor<float>::from({clip.t, 3, clip.h, clip.w}, std::move(frames));
  clip.tracks_gt.resize(static_cast<size_t>(clip.t) * clip.n * 2);
  io::read_f32_array(is, clip.tracks_gt, "clip tracks");
  std::vector<uint8_t> bits((static_cast<size_t>(clip.t) * clip.n + 7) / 8);
  is.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
  if (is.gcount() != static_cast<std::streamsize>(bits.size()))
    throw FormatError("read_clip: truncated visibility payload");
  clip.visibility.resize(static_cast<size_t>(clip.t) * clip.n);
  for (size_t i = 0; i < clip.visibility.size(); ++i)
    clip.visibility[i] = (bits[i / 8] >> (i % 8)) & 1u;
  clip.masks.assign(static_cast<size_t>(clip.t), MaskMap(clip.h, clip.w));
  for (auto& m : clip.masks) io::read_u16_array(is, m.ids, "clip masks");
  clip.instance_of_track.resize(static_cast<size_t>(clip.n));
  io::read_i32_array(is, clip.instance_of_track, "clip instances");
  is.peek();
  if (!is.eof()) throw FormatError("read_clip: trailing bytes after payload");
  return clip;
}

void write_manifest(const std::string& path,
                    const std::vector<std::pair<std::string, uint64_t>>& entries) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw FormatError("write_manifest: cannot open " + tmp);
    for (const auto& [p, seed] : entries) os << p << " " << seed << "\n";
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw FormatError("write_manifest: cannot move " + tmp + " into place");
}

std::vector<std::pair<std::string, uint64_t>> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("read_manifest: cannot open " + path);
  std::vector<std::pair<std::string, uint64_t>> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string p;
    uint64_t seed = 0;
    if (!(ls >> p >> seed)) throw FormatError("read_manifest: malformed line '" + line + "'");
    out.emplace_back(p, seed);
  }
  return out;
}

}  // namespace otrack
