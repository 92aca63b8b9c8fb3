#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "otrack/encoder.hpp"
#include "otrack/optim.hpp"
#include "otrack/synthdata.hpp"
#include "otrack/tracker.hpp"

namespace otrack {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// plain hierarchical key-value text: "a.b.c = value", '#' comments
class KvConfig {
 public:
  static KvConfig from_file(const std::string& path);
  static KvConfig from_string(const std::string& text);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const;
  std::vector<double> get_double_list(const std::string& key,
                                      std::vector<double> fallback) const;
  std::vector<uint64_t> get_u64_list(const std::string& key,
                                     std::vector<uint64_t> fallback) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;  // sorted, canonical
};

struct TrainConfig {
  int64_t steps = 2000;
  int batch_size = 2;
  OneCycle schedule{1e-3, 0.3, 25.0, 1e4};  // desk lr_max 1e-3; paper 0.005
  double gamma = 0.8;
  double alpha = 0.15;
  double weight_decay = 1e-4;
  double clip_norm = 1.0;
  uint64_t seed = 1;
  bool use_obj_loss = true;
  bool use_ctx_attention = true;
  bool loss_on_occluded = false;  // deviation flag: losses gate to visible frames
  int64_t checkpoint_every = 500;
  bool verbose_loss = false;  // adds per-clip loss lines to the log

  static TrainConfig paper() {
    TrainConfig c;
    c.steps = 300000;
    c.schedule.lr_max = 0.005;
    return c;
  }
};

struct FullConfig {
  EncoderConfig enc;
  TrackerConfig trk;
  TrainConfig train;
  SceneSpec data;  // corpus generation defaults (gen-data, ablate eval sets)
  std::vector<uint64_t> ablate_seeds = {1, 2, 3};
  std::vector<double> ablate_alphas = {0.0, 0.15, 1.0};
  int eval_clips = 40;
  int eval_frames = 24;
  uint64_t eval_seed = 9000;
};

// desk defaults overlaid with the given key-values; unknown keys rejected
FullConfig resolve_config(const KvConfig& kv);

// canonical full dump, one "key = value" line per field, sorted
std::string dump_config(const FullConfig& cfg);

uint64_t config_hash(const FullConfig& cfg);

}  // namespace otrack
