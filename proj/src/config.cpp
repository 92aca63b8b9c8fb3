#include "otrack/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace otrack {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& v, Parse parse) {
  std::vector<T> out;
  std::string item;
  std::istringstream is(v);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse(item));
  }
  return out;
}

}  // namespace

KvConfig KvConfig::from_string(const std::string& text) {
  KvConfig kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    kv.entries_[key] = value;
  }
  return kv;
}

KvConfig KvConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return from_string(buf.str());
}

void KvConfig::set(const std::string& key, const std::string& value) {
  entries_[trim(key)] = trim(value);
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

int64_t KvConfig::get_int(const std::string& key, int64_t fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    size_t pos = 0;
    int64_t v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected integer, got '" + it->second + "'");
  }
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected number, got '" + it->second + "'");
  }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected boolean, got '" + v + "'");
}

std::vector<int> KvConfig::get_int_list(const std::string& key, std::vector<int> fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    return parse_list<int>(it->second, [](const std::string& s) { return std::stoi(s); });
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected integer list");
  }
}

std::vector<double> KvConfig::get_double_list(const std::string& key,
                                              std::vector<double> fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    return parse_list<double>(it->second, [](const std::string& s) { return std::stod(s); });
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected number list");
  }
}

std::vector<uint64_t> KvConfig::get_u64_list(const std::string& key,
                                             std::vector<uint64_t> fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    return parse_list<uint64_t>(it->second, [](const std::string& s) { return std::stoull(s); });
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected integer list");
  }
}

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "preset",
      "enc.stem_channels", "enc.layer_channels", "enc.blocks_per_layer", "enc.fuse_channels",
      "enc.out_dim", "enc.downsample", "enc.attn_layers", "enc.attn_heads", "enc.patch_size",
      "enc.attn_residual", "enc.norm_eps",
      "trk.window_len", "trk.iters", "trk.corr_scales", "trk.corr_radius", "trk.recent_lags",
      "trk.update_blocks", "trk.update_hidden", "trk.motion_embedding",
      "trk.detach_recent_feats",
      "train.steps", "train.batch_size", "train.lr_max", "train.warmup_frac", "train.lr_div",
      "train.lr_final_div", "train.gamma", "train.alpha", "train.weight_decay",
      "train.clip_norm", "train.seed", "train.use_obj_loss", "train.use_ctx_attention",
      "train.loss_on_occluded", "train.checkpoint_every", "train.verbose_loss",
      "data.n_objects", "data.height", "data.width", "data.length", "data.tracks",
      "data.occluder_prob", "data.velocity_scale", "data.background_track_frac",
      "data.sine_prob", "data.min_radius", "data.max_radius", "data.texture_pool",
      "data.crossing_pair_prob",
      "ablate.seeds", "ablate.alphas", "eval.clips", "eval.frames", "eval.seed",
  };
  return keys;
}

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

}  // namespace

FullConfig resolve_config(const KvConfig& kv) {
  for (const auto& [key, value] : kv.entries())
    if (!known_keys().count(key))
      throw ConfigError("unknown config key '" + key + "'");

  FullConfig cfg;
  const std::string preset = kv.get_string("preset", "desk");
  if (preset == "desk") {
    cfg.enc = EncoderConfig::desk();
    cfg.trk = TrackerConfig::desk();
    cfg.train = TrainConfig{};
    cfg.data = SceneSpec{};
  } else if (preset == "paper") {
    cfg.enc = EncoderConfig{};
    cfg.trk = TrackerConfig{};
    cfg.train = TrainConfig::paper();
    cfg.data = SceneSpec{};
    cfg.data.height = 384;
    cfg.data.width = 512;
    cfg.data.length = 24;
    cfg.data.tracks = 128;
  } else {
    throw ConfigError("unknown preset '" + preset + "' (use desk or paper)");
  }

  cfg.enc.stem_channels = static_cast<int>(kv.get_int("enc.stem_channels", cfg.enc.stem_channels));
  cfg.enc.layer_channels = kv.get_int_list("enc.layer_channels", cfg.enc.layer_channels);
  cfg.enc.blocks_per_layer =
      static_cast<int>(kv.get_int("enc.blocks_per_layer", cfg.enc.blocks_per_layer));
  cfg.enc.fuse_channels = kv.get_int_list("enc.fuse_channels", cfg.enc.fuse_channels);
  cfg.enc.out_dim = static_cast<int>(kv.get_int("enc.out_dim", cfg.enc.out_dim));
  cfg.enc.downsample = static_cast<int>(kv.get_int("enc.downsample", cfg.enc.downsample));
  cfg.enc.attn_layers = static_cast<int>(kv.get_int("enc.attn_layers", cfg.enc.attn_layers));
  cfg.enc.attn_heads = static_cast<int>(kv.get_int("enc.attn_heads", cfg.enc.attn_heads));
  cfg.enc.patch_size = static_cast<int>(kv.get_int("enc.patch_size", cfg.enc.patch_size));
  cfg.enc.attn_residual = kv.get_bool("enc.attn_residual", cfg.enc.attn_residual);
  cfg.enc.norm_eps = kv.get_double("enc.norm_eps", cfg.enc.norm_eps);

  cfg.trk.window_len = static_cast<int>(kv.get_int("trk.window_len", cfg.trk.window_len));
  cfg.trk.iters = static_cast<int>(kv.get_int("trk.iters", cfg.trk.iters));
  cfg.trk.corr_scales = static_cast<int>(kv.get_int("trk.corr_scales", cfg.trk.corr_scales));
  cfg.trk.corr_radius = static_cast<int>(kv.get_int("trk.corr_radius", cfg.trk.corr_radius));
  cfg.trk.recent_lags = kv.get_int_list("trk.recent_lags", cfg.trk.recent_lags);
  cfg.trk.update_blocks = static_cast<int>(kv.get_int("trk.update_blocks", cfg.trk.update_blocks));
  cfg.trk.update_hidden = static_cast<int>(kv.get_int("trk.update_hidden", cfg.trk.update_hidden));
  cfg.trk.motion_embedding = kv.get_bool("trk.motion_embedding", cfg.trk.motion_embedding);
  cfg.trk.detach_recent_feats =
      kv.get_bool("trk.detach_recent_feats", cfg.trk.detach_recent_feats);

  cfg.train.steps = kv.get_int("train.steps", cfg.train.steps);
  cfg.train.batch_size = static_cast<int>(kv.get_int("train.batch_size", cfg.train.batch_size));
  cfg.train.schedule.lr_max = kv.get_double("train.lr_max", cfg.train.schedule.lr_max);
  cfg.train.schedule.warmup_frac =
      kv.get_double("train.warmup_frac", cfg.train.schedule.warmup_frac);
  cfg.train.schedule.div = kv.get_double("train.lr_div", cfg.train.schedule.div);
  cfg.train.schedule.final_div = kv.get_double("train.lr_final_div", cfg.train.schedule.final_div);
  cfg.train.gamma = kv.get_double("train.gamma", cfg.train.gamma);
  cfg.train.alpha = kv.get_double("train.alpha", cfg.train.alpha);
  cfg.train.weight_decay = kv.get_double("train.weight_decay", cfg.train.weight_decay);
  cfg.train.clip_norm = kv.get_double("train.clip_norm", cfg.train.clip_norm);
  cfg.train.seed = static_cast<uint64_t>(kv.get_int("train.seed", static_cast<int64_t>(cfg.train.seed)));
  cfg.train.use_obj_loss = kv.get_bool("train.use_obj_loss", cfg.train.use_obj_loss);
  cfg.train.use_ctx_attention =
      kv.get_bool("train.use_ctx_attention", cfg.train.use_ctx_attention);
  cfg.train.loss_on_occluded = kv.get_bool("train.loss_on_occluded", cfg.train.loss_on_occluded);
  cfg.train.checkpoint_every = kv.get_int("train.checkpoint_every", cfg.train.checkpoint_every);
  cfg.train.verbose_loss = kv.get_bool("train.verbose_loss", cfg.train.verbose_loss);

  cfg.data.n_objects = static_cast<int>(kv.get_int("data.n_objects", cfg.data.n_objects));
  cfg.data.height = static_cast<int>(kv.get_int("data.height", cfg.data.height));
  cfg.data.width = static_cast<int>(kv.get_int("data.width", cfg.data.width));
  cfg.data.length = static_cast<int>(kv.get_int("data.length", cfg.data.length));
  cfg.data.tracks = static_cast<int>(kv.get_int("data.tracks", cfg.data.tracks));
  cfg.data.occluder_prob = kv.get_double("data.occluder_prob", cfg.data.occluder_prob);
  cfg.data.velocity_scale = kv.get_double("data.velocity_scale", cfg.data.velocity_scale);
  cfg.data.background_track_frac =
      kv.get_double("data.background_track_frac", cfg.data.background_track_frac);
  cfg.data.sine_prob = kv.get_double("data.sine_prob", cfg.data.sine_prob);
  cfg.data.texture_pool =
      static_cast<int>(kv.get_int("data.texture_pool", cfg.data.texture_pool));
  cfg.data.crossing_pair_prob =
      kv.get_double("data.crossing_pair_prob", cfg.data.crossing_pair_prob);
  cfg.data.min_radius = kv.get_double("data.min_radius", cfg.data.min_radius);
  cfg.data.max_radius = kv.get_double("data.max_radius", cfg.data.max_radius);

  cfg.ablate_seeds = kv.get_u64_list("ablate.seeds", cfg.ablate_seeds);
  cfg.ablate_alphas = kv.get_double_list("ablate.alphas", cfg.ablate_alphas);
  cfg.eval_clips = static_cast<int>(kv.get_int("eval.clips", cfg.eval_clips));
  cfg.eval_frames = static_cast<int>(kv.get_int("eval.frames", cfg.eval_frames));
  cfg.eval_seed = static_cast<uint64_t>(kv.get_int("eval.seed", static_cast<int64_t>(cfg.eval_seed)));

  cfg.enc.validate();
  cfg.trk.validate();
  if (cfg.train.gamma <= 0.0 || cfg.train.gamma > 1.0)
    throw ConfigError("train.gamma must be in (0, 1]");
  if (cfg.train.alpha < 0.0) throw ConfigError("train.alpha must be >= 0");
  if (cfg.train.batch_size < 1 || cfg.train.steps < 1)
    throw ConfigError("train.steps and train.batch_size must be positive");
  return cfg;
}

std::string dump_config(const FullConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["enc.stem_channels"] = std::to_string(cfg.enc.stem_channels);
  kv["enc.layer_channels"] = join_ints(cfg.enc.layer_channels);
  kv["enc.blocks_per_layer"] = std::to_string(cfg.enc.blocks_per_layer);
  kv["enc.fuse_channels"] = join_ints(cfg.enc.fuse_channels);
  kv["enc.out_dim"] = std::to_string(cfg.enc.out_dim);
  kv["enc.downsample"] = std::to_string(cfg.enc.downsample);
  kv["enc.attn_layers"] = std::to_string(cfg.enc.attn_layers);
  kv["enc.attn_heads"] = std::to_string(cfg.enc.attn_heads);
  kv["enc.patch_size"] = std::to_string(cfg.enc.patch_size);
  kv["enc.attn_residual"] = cfg.enc.attn_residual ? "true" : "false";
  kv["enc.norm_eps"] = fmt_double(cfg.enc.norm_eps);
  kv["trk.window_len"] = std::to_string(cfg.trk.window_len);
  kv["trk.iters"] = std::to_string(cfg.trk.iters);
  kv["trk.corr_scales"] = std::to_string(cfg.trk.corr_scales);
  kv["trk.corr_radius"] = std::to_string(cfg.trk.corr_radius);
  kv["trk.recent_lags"] = join_ints(cfg.trk.recent_lags);
  kv["trk.update_blocks"] = std::to_string(cfg.trk.update_blocks);
  kv["trk.update_hidden"] = std::to_string(cfg.trk.update_hidden);
  kv["trk.motion_embedding"] = cfg.trk.motion_embedding ? "true" : "false";
  kv["trk.detach_recent_feats"] = cfg.trk.detach_recent_feats ? "true" : "false";
  kv["train.steps"] = std::to_string(cfg.train.steps);
  kv["train.batch_size"] = std::to_string(cfg.train.batch_size);
  kv["train.lr_max"] = fmt_double(cfg.train.schedule.lr_max);
  kv["train.warmup_frac"] = fmt_double(cfg.train.schedule.warmup_frac);
  kv["train.lr_div"] = fmt_double(cfg.train.schedule.div);
  kv["train.lr_final_div"] = fmt_double(cfg.train.schedule.final_div);
  kv["train.gamma"] = fmt_double(cfg.train.gamma);
  kv["train.alpha"] = fmt_double(cfg.train.alpha);
  kv["train.weight_decay"] = fmt_double(cfg.train.weight_decay);
  kv["train.clip_norm"] = fmt_double(cfg.train.clip_norm);
  kv["train.seed"] = std::to_string(cfg.train.seed);
  kv["train.use_obj_loss"] = cfg.train.use_obj_loss ? "true" : "false";
  kv["train.use_ctx_attention"] = cfg.train.use_ctx_attention ? "true" : "false";
  kv["train.loss_on_occluded"] = cfg.train.loss_on_occluded ? "true" : "false";
  kv["train.checkpoint_every"] = std::to_string(cfg.train.checkpoint_every);
  kv["data.n_objects"] = std::to_string(cfg.data.n_objects);
  kv["data.height"] = std::to_string(cfg.data.height);
  kv["data.width"] = std::to_string(cfg.data.width);
  kv["data.length"] = std::to_string(cfg.data.length);
  kv["data.tracks"] = std::to_string(cfg.data.tracks);
  kv["data.occluder_prob"] = fmt_double(cfg.data.occluder_prob);
  kv["data.velocity_scale"] = fmt_double(cfg.data.velocity_scale);
  kv["data.background_track_frac"] = fmt_double(cfg.data.background_track_frac);
  kv["data.sine_prob"] = fmt_double(cfg.data.sine_prob);
  kv["data.min_radius"] = fmt_double(cfg.data.min_radius);
  kv["data.max_radius"] = fmt_double(cfg.data.max_radius);
  kv["data.texture_pool"] = std::to_string(cfg.data.texture_pool);
  kv["data.crossing_pair_prob"] = fmt_double(cfg.data.crossing_pair_prob);
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
  return os.str();
}

uint64_t config_hash(const FullConfig& cfg) {
  const std::string dump = dump_config(cfg);
  uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace otrack
