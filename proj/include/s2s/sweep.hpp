#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "s2s/corpus.hpp"
#include "s2s/model.hpp"
#include "s2s/trainer.hpp"

namespace s2s {

// Experiment harness: one configuration per table row, each replicated with
// several seeds, aggregated as "mean ± std (max)".

// Data source for an experiment: a built-in synthetic task or token files.
struct DataSpec {
  enum class Task { copy, reversal, files };
  Task task = Task::copy;

  // Synthetic tasks.  The corpus seed is shared by every replica so all
  // seeds train on identical data and differ only in initialization.
  int vocab = 20;
  int train_pairs = 1000;
  int val_pairs = 200;
  int min_len = 5;
  int max_len = 10;
  std::uint64_t seed = 1;

  // Token files (task == files).  Ids come from the vocabulary file.
  std::string train_src, train_tgt, val_src, val_tgt, vocab_file;
  int max_sentence_length = 50;
};

struct ResolvedData {
  ParallelCorpus train;
  ParallelCorpus val;
  int vocab = 0;
};

// Builds (or loads) the train/validation corpora a DataSpec describes.
ResolvedData resolve_data(const DataSpec& spec);

// One experiment: a base model + schedule, at most one swept axis (a key
// whose value is a comma list), and the replica seed list.  Every replica
// of a variant differs from the base config in exactly the axis key.
struct ExperimentSpec {
  std::string name = "experiment";
  ModelConfig model;       // base; vocab is taken from the data source at run time
  TrainSchedule schedule;  // base; the validation corpus pointer is bound per run
  DataSpec data;

  std::string axis_key;  // empty when the experiment has a single variant
  std::vector<std::string> axis_values;

  std::vector<std::uint64_t> seeds = {1, 2, 3, 4};

  bool attention_dim_set = false;  // explicit `attention.dim` seen in the config
  std::string source_text;         // original config text, snapshotted per run

  int replicas() const { return static_cast<int>(seeds.size()); }
};

// Applies one `key: value` assignment to the spec.  Unknown keys and
// malformed values raise std::invalid_argument.
void apply_config_key(ExperimentSpec& spec, const std::string& key, const std::string& value);

// Parses the flat `key: value` experiment format.  Blank lines and lines
// starting with `#` are skipped; duplicate keys are errors; exactly one
// non-`seeds` key may hold a comma list, which becomes the variant axis.
ExperimentSpec parse_experiment_text(const std::string& text);
ExperimentSpec parse_experiment_file(const std::string& path);

// One concrete configuration to train: the base with the axis value applied.
struct Variant {
  std::string label;  // "base", or "key=value" when an axis is swept
  ModelConfig model;
  TrainSchedule schedule;
  DataSpec data;
};

// Expands the spec into its variants (one per axis value; a single "base"
// variant when no axis is swept).
std::vector<Variant> materialize(const ExperimentSpec& spec);

// One replica's outcome.  Wall time is informational only and is never
// written to report files, which stay byte-reproducible across runs.
struct RunResult {
  std::uint64_t seed = 0;
  bool converged = false;
  double bleu = std::numeric_limits<double>::quiet_NaN();       // best checkpoint
  double final_ppl = std::numeric_limits<double>::quiet_NaN();  // last checkpoint
  long long param_count = 0;
  long long steps_to_best = 0;
  double wall_seconds = 0.0;
  std::string error;  // divergence message when !converged
};

// Replica statistics for one variant.  Diverged replicas are excluded from
// mean/std/max and surfaced through converged_note().
struct AggregateResult {
  std::string variant;
  long long param_count = 0;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double stddev = std::numeric_limits<double>::quiet_NaN();
  double max = std::numeric_limits<double>::quiet_NaN();
  std::vector<RunResult> runs;  // one per seed, in spec order

  int replicas() const { return static_cast<int>(runs.size()); }
  int converged() const;
  std::string formatted() const;       // "21.50 ± 0.11 (21.66)", "n/a" if none ran to completion
  std::string converged_note() const;  // "3/4 converged"
};

// "MM.MM ± SS.SS (XX.XX)".
std::string format_aggregate(double mean, double stddev, double max);

// Mean, sample (n−1) standard deviation, and max over the converged runs'
// BLEU.  Values are summed in sorted order, so the aggregate is exactly
// permutation-invariant.  One converged run reports std 0 by convention.
AggregateResult aggregate(std::string variant, long long param_count, std::vector<RunResult> runs);

// Report rendering: a Markdown table and a CSV, one row per variant, with
// the table-style "mean ± std (max)" BLEU column.
std::string render_report_markdown(const std::string& name, const std::vector<AggregateResult>& rows);
std::string render_results_csv(const std::vector<AggregateResult>& rows);

struct SweepResult {
  std::string name;
  std::vector<AggregateResult> aggregates;  // one per variant, in axis order
  std::string out_dir;
  std::string report_path;  // <out_dir>/report.md
  std::string csv_path;     // <out_dir>/results.csv
};

// Trains every (variant, seed) combination, up to `jobs` in parallel, and
// writes config.txt, per-run logs/checkpoints, report.md, and results.csv
// under out_dir.  Replicas are fully isolated (own RNG streams, own files).
// Seeds must be distinct.  A diverged replica is recorded and excluded, not
// an error; any other failure propagates.
template <class S>
SweepResult run_experiment(const ExperimentSpec& spec, const std::string& out_dir, int jobs = 1);

}  // namespace s2s
