#include "otrack/ablate.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>

namespace otrack {

namespace {

double mean_of(const std::vector<double>& v) {
  double acc = 0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

}  // namespace

double AblationRow::mean_survival() const { return mean_of(survival_per_seed); }
double AblationRow::std_survival() const { return std_of(survival_per_seed); }
double AblationRow::mean_delta() const { return mean_of(delta_per_seed); }
double AblationRow::mean_mte() const { return mean_of(mte_per_seed); }

const AblationRow* find_row(const AblationOutcome& outcome, const std::string& name) {
  for (const auto& row : outcome.rows)
    if (row.name == name) return &row;
  return nullptr;
}

std::string generate_corpus(const SceneSpec& base_spec, uint64_t first_seed, int clips,
                            const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::pair<std::string, uint64_t>> entries;
  for (int i = 0; i < clips; ++i) {
    SceneSpec spec = base_spec;
    spec.seed = first_seed + static_cast<uint64_t>(i);
    Clip clip = generate_clip(spec);
    char name[64];
    std::snprintf(name, sizeof(name), "clip_%05d.oclp", i);
    write_clip((std::filesystem::path(out_dir) / name).string(), clip);
    entries.emplace_back(name, spec.seed);
  }
  const std::string manifest = (std::filesystem::path(out_dir) / "manifest.txt").string();
  write_manifest(manifest, entries);
  return manifest;
}

AblationOutcome run_ablation(const FullConfig& base, const std::string& train_manifest,
                             const std::string& eval_manifest, const std::string& out_dir,
                             int jobs) {
  std::filesystem::create_directories(out_dir);
  std::string eval_path = eval_manifest;
  if (eval_path.empty()) {
    SceneSpec spec = base.data;
    spec.length = base.eval_frames;
    eval_path = generate_corpus(spec, base.eval_seed, base.eval_clips,
                                (std::filesystem::path(out_dir) / "eval_data").string());
  }
  const auto train_clips = load_corpus(train_manifest);
  const auto eval_clips = load_corpus(eval_path);

  struct Cell {
    std::string name;
    bool obj, attn;
    double alpha;
  };
  std::vector<Cell> cells = {
      {"baseline", false, false, 0.0},
      {"obj_only", true, false, base.train.alpha},
      {"attn_only", false, true, 0.0},
      {"full", true, true, base.train.alpha},
  };
  for (double a : base.ablate_alphas) {
    if (a == 0.0 || a == base.train.alpha) continue;  // covered by attn_only / full
    char name[32];
    std::snprintf(name, sizeof(name), "alpha_%g", a);
    cells.push_back({name, true, true, a});
  }

  struct RunResult {
    double survival = 0, delta = 0, mte = 0;
  };
  struct Job {
    size_t cell_idx;
    uint64_t seed;
  };
  std::vector<Job> job_list;
  for (size_t c = 0; c < cells.size(); ++c)
    for (uint64_t seed : base.ablate_seeds) job_list.push_back({c, seed});

  auto run_one = [&](const Job& job) -> RunResult {
    const Cell& cell = cells[job.cell_idx];
    FullConfig cfg = base;
    cfg.train.use_obj_loss = cell.obj;
    cfg.train.use_ctx_attention = cell.attn;
    cfg.train.alpha = cell.alpha;
    cfg.train.seed = job.seed;
    const std::string run_dir =
        (std::filesystem::path(out_dir) / ("run_" + cell.name + "_s" + std::to_string(job.seed)))
            .string();
    TrainOutcome t = train(train_clips, cfg, run_dir);
    Checkpoint ckpt = load_checkpoint(t.final_checkpoint);
    ParamStore<float> store;
    TrackModel<float> model = model_from_checkpoint(ckpt, cfg, store);
    EvalReport rep = evaluate(eval_clips, model);
    rep.write(run_dir + "/report.txt", run_dir + "/report.kv");
    RunResult r;
    r.survival = rep.survival;
    r.delta = rep.delta_avg.value_or(0.0);
    r.mte = rep.mte.value_or(0.0);
    return r;
  };

  std::vector<RunResult> results(job_list.size());
  if (jobs < 1) jobs = 1;
  size_t next = 0;
  while (next < job_list.size()) {
    const size_t batch = std::min(static_cast<size_t>(jobs), job_list.size() - next);
    std::vector<std::future<RunResult>> futures;
    for (size_t j = 0; j < batch; ++j)
      futures.push_back(std::async(std::launch::async, run_one, job_list[next + j]));
    for (size_t j = 0; j < batch; ++j) results[next + j] = futures[j].get();
    next += batch;
  }

  AblationOutcome outcome;
  for (size_t c = 0; c < cells.size(); ++c) {
    AblationRow row;
    row.name = cells[c].name;
    row.use_obj = cells[c].obj;
    row.use_attn = cells[c].attn;
    row.alpha = cells[c].alpha;
    for (size_t j = 0; j < job_list.size(); ++j) {
      if (job_list[j].cell_idx != c) continue;
      row.survival_per_seed.push_back(results[j].survival);
      row.delta_per_seed.push_back(results[j].delta);
      row.mte_per_seed.push_back(results[j].mte);
    }
    outcome.rows.push_back(std::move(row));
  }

  std::ostringstream os;
  os << "ablation over " << base.ablate_seeds.size() << " seeds\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%-12s %-5s %-5s %-7s %-22s %-12s %-10s\n", "cell", "obj",
                "attn", "alpha", "survival(mean+-std)", "delta_avg", "mte");
  os << line;
  for (const auto& row : outcome.rows) {
    std::snprintf(line, sizeof(line), "%-12s %-5s %-5s %-7.3f %8.3f +- %-10.3f %-12.3f %-10.3f\n",
                  row.name.c_str(), row.use_obj ? "yes" : "no", row.use_attn ? "yes" : "no",
                  row.alpha, row.mean_survival(), row.std_survival(), row.mean_delta(),
                  row.mean_mte());
    os << line;
    os << "    per-seed survival:";
    for (double s : row.survival_per_seed) {
      std::snprintf(line, sizeof(line), " %.3f", s);
      os << line;
    }
    os << "\n";
  }
  outcome.table = os.str();
  std::ofstream table_file((std::filesystem::path(out_dir) / "ablation_table.txt").string(),
                           std::ios::trunc);
  table_file << outcome.table;
  return outcome;
}

}  // namespace otrack
