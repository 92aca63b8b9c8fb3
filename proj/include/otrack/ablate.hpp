#pragma once

#include <string>
#include <vector>

#include "otrack/train.hpp"

namespace otrack {

struct AblationRow {
  std::string name;
  bool use_obj = false;
  bool use_attn = false;
  double alpha = 0.0;
  std::vector<double> survival_per_seed;
  std::vector<double> delta_per_seed;
  std::vector<double> mte_per_seed;

  double mean_survival() const;
  double std_survival() const;  // sample standard deviation across seeds
  double mean_delta() const;
  double mean_mte() const;
};

struct AblationOutcome {
  std::vector<AblationRow> rows;  // baseline, obj_only, attn_only, full, extra alphas
  std::string table;
};

const AblationRow* find_row(const AblationOutcome& outcome, const std::string& name);

// Trains every (cell, seed) combination from scratch on the training corpus
// and evaluates each on the evaluation corpus. If eval_manifest is empty, a
// deterministic evaluation corpus is generated under out_dir/eval_data.
AblationOutcome run_ablation(const FullConfig& base, const std::string& train_manifest,
                             const std::string& eval_manifest, const std::string& out_dir,
                             int jobs);

// corpus generation shared by the CLI and the ablation eval set
std::string generate_corpus(const SceneSpec& base_spec, uint64_t first_seed, int clips,
                            const std::string& out_dir);

}  // namespace otrack
