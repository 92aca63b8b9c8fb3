#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "otrack/losses.hpp"
#include "otrack/tensor.hpp"

namespace otrack {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Desk-scale synthetic scene: textured rigid shapes on a textured background.
// Objects draw their value-noise textures from a small shared pool, so
// lookalike objects and object-like background patches are common and
// appearance matching alone is ambiguous.
struct SceneSpec {
  uint64_t seed = 1;
  int n_objects = 4;
  int height = 64;
  int width = 64;
  int length = 8;   // frames T
  int tracks = 16;  // query points N
  double occluder_prob = 0.4;        // chance of an extra fast topmost object
  double velocity_scale = 1.0;       // 0 => static scene
  double background_track_frac = 0.125;
  double sine_prob = 0.5;            // chance of sinusoidal motion perturbation
  double min_radius = 6.0;
  double max_radius = 12.0;
  int texture_pool = 2;              // distinct object textures; 0 => unique per object
  // chance that two same-texture objects are aimed to cross mid-clip, the
  // classic bait for appearance-only matching
  double crossing_pair_prob = 0.6;
};

struct Clip {
  int t = 0, h = 0, w = 0, n = 0;
  Tensor<float> frames;                    // [T,3,H,W] in [0,1]
  std::vector<float> tracks_gt;            // [T,N,2], (x,y) pixels
  std::vector<uint8_t> visibility;         // [T,N]
  std::vector<MaskMap> masks;              // per frame
  std::vector<int32_t> instance_of_track;  // [N], 0 = background

  float track_x(int ti, int i) const {
    return tracks_gt[(static_cast<size_t>(ti) * n + i) * 2];
  }
  float track_y(int ti, int i) const {
    return tracks_gt[(static_cast<size_t>(ti) * n + i) * 2 + 1];
  }
  bool visible(int ti, int i) const {
    return visibility[static_cast<size_t>(ti) * n + i] != 0;
  }
};

Clip generate_clip(const SceneSpec& spec);

// checks every Clip invariant; returns human-readable violations
std::vector<std::string> verify_clip(const Clip& clip);

void write_clip(const std::string& path, const Clip& clip);
Clip read_clip(const std::string& path);

// analytic file size for a clip container with the given header fields
int64_t clip_file_size(int t, int h, int w, int n);

// manifest: one "path seed" pair per line
void write_manifest(const std::string& path,
                    const std::vector<std::pair<std::string, uint64_t>>& entries);
std::vector<std::pair<std::string, uint64_t>> read_manifest(const std::string& path);

}  // namespace otrack
