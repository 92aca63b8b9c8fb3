#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "otrack/config.hpp"
#include "otrack/metrics.hpp"
#include "otrack/optim.hpp"
#include "otrack/tracker.hpp"

namespace otrack {

// versioned binary snapshot: params, optimizer moments, RNG state, config hash
struct Checkpoint {
  uint64_t config_hash = 0;
  int64_t step = 0;
  int64_t adam_step = 0;
  std::array<uint64_t, 4> rng_state{};
  std::vector<std::string> names;
  std::vector<Shape> shapes;
  std::vector<std::vector<float>> params;
  std::vector<std::vector<float>> adam_m, adam_v;
};

void save_checkpoint(const std::string& path, const ParamStore<float>& store,
                     const AdamW<float>& opt, int64_t step, const Rng& rng,
                     uint64_t config_hash);
Checkpoint load_checkpoint(const std::string& path);

// restore into an already-initialized model; refuses on hash mismatch unless forced
void apply_checkpoint(const Checkpoint& ckpt, ParamStore<float>& store, AdamW<float>& opt,
                      Rng& rng, uint64_t expected_hash, bool force = false);

struct TrainOutcome {
  int64_t steps_done = 0;
  std::string final_checkpoint;
  std::string log_path;
  double last_total = 0.0;
};

// full training loop: sample windows, tape forward, losses, backward, clip,
// AdamW with the 1cycle schedule, per-step log line, periodic checkpoints
TrainOutcome train(const std::vector<Clip>& corpus, const FullConfig& cfg,
                   const std::string& out_dir, const std::string& resume_path = "",
                   bool force_resume = false);

std::vector<Clip> load_corpus(const std::string& manifest_path);

// build a model matching the config's ablation flags and load weights
TrackModel<float> model_from_checkpoint(const Checkpoint& ckpt, const FullConfig& cfg,
                                        ParamStore<float>& store);

TrackModel<float> build_model(const FullConfig& cfg, ParamStore<float>& store, Rng& rng,
                              InitMode mode = InitMode::kTrainDefault);

// run track_video over every clip, compare against ground truth at the
// normalized resolution, pool into one report
EvalReport evaluate(const std::vector<Clip>& clips, const TrackModel<float>& model,
                    bool mte_all = false);

}  // namespace otrack
