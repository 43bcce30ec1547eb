#include "s2s/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <utility>

#include "s2s/bpe.hpp"
#include "s2s/rng.hpp"

namespace s2s {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return std::string();
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_comma(const std::string& key, const std::string& value) {
  std::vector<std::string> items;
  std::string cur;
  std::istringstream is(value);
  while (std::getline(is, cur, ',')) {
    cur = trim(cur);
    if (cur.empty())
      throw std::invalid_argument("config: empty item in list for key '" + key + "'");
    items.push_back(cur);
  }
  if (items.empty()) throw std::invalid_argument("config: empty list for key '" + key + "'");
  return items;
}

long long parse_ll(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' needs an integer, got '" + value + "'");
  }
}

int parse_int(const std::string& key, const std::string& value) {
  long long v = parse_ll(key, value);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw std::invalid_argument("config: key '" + key + "' value out of range: '" + value + "'");
  return static_cast<int>(v);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    if (!value.empty() && value[0] == '-') throw std::invalid_argument(value);
    size_t used = 0;
    unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' needs a non-negative integer, got '" +
                                value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' needs a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw std::invalid_argument("config: key '" + key + "' needs true|false, got '" + value + "'");
}

DataSpec::Task task_from_string(const std::string& value) {
  if (value == "copy") return DataSpec::Task::copy;
  if (value == "reversal") return DataSpec::Task::reversal;
  if (value == "files") return DataSpec::Task::files;
  throw std::invalid_argument("config: key 'data.task' needs copy|reversal|files, got '" + value +
                              "'");
}

std::string sanitize_label(const std::string& label) {
  std::string out = label;
  for (char& c : out) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
              c == '.' || c == '_' || c == '=' || c == '-';
    if (!ok) c = '_';
  }
  return out;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
  if (!os) throw std::runtime_error("short write to " + path);
}

}  // namespace

void apply_config_key(ExperimentSpec& spec, const std::string& key, const std::string& value) {
  ModelConfig& m = spec.model;
  TrainSchedule& t = spec.schedule;
  DataSpec& d = spec.data;
  if (key == "name") spec.name = value;
  else if (key == "emb") m.emb = parse_int(key, value);
  else if (key == "units") m.units = parse_int(key, value);
  else if (key == "dropout") m.dropout = parse_double(key, value);
  else if (key == "forget_bias") m.forget_bias = parse_double(key, value);
  else if (key == "encoder.bidi") m.encoder.bidi = parse_bool(key, value);
  else if (key == "encoder.depth") m.encoder.depth = parse_int(key, value);
  else if (key == "encoder.reverse_source") m.encoder.reverse_source = parse_bool(key, value);
  else if (key == "encoder.cell") m.encoder.cell = cell_kind_from_string(value);
  else if (key == "encoder.residual") m.encoder.residual = residual_mode_from_string(value);
  else if (key == "decoder.depth") m.decoder.depth = parse_int(key, value);
  else if (key == "decoder.cell") m.decoder.cell = cell_kind_from_string(value);
  else if (key == "decoder.residual") m.decoder.residual = residual_mode_from_string(value);
  else if (key == "attention.type") m.attention.type = attention_type_from_string(value);
  else if (key == "attention.dim") {
    m.attention.dim = parse_int(key, value);
    spec.attention_dim_set = true;
  } else if (key == "train.batch_size") t.batch_size = parse_int(key, value);
  else if (key == "train.max_steps") t.max_steps = parse_ll(key, value);
  else if (key == "train.checkpoint_every") t.checkpoint_every = parse_ll(key, value);
  else if (key == "train.lr") t.adam.lr = parse_double(key, value);
  else if (key == "train.clip_norm") t.clip_norm = parse_double(key, value);
  else if (key == "val.batch_size") t.val_batch_size = parse_int(key, value);
  else if (key == "beam.width") t.val_beam_width = parse_int(key, value);
  else if (key == "beam.alpha") t.val_beam_alpha = parse_double(key, value);
  else if (key == "beam.max_length") t.val_max_length = parse_int(key, value);
  else if (key == "data.task") d.task = task_from_string(value);
  else if (key == "data.vocab") d.vocab = parse_int(key, value);
  else if (key == "data.train_pairs") d.train_pairs = parse_int(key, value);
  else if (key == "data.val_pairs") d.val_pairs = parse_int(key, value);
  else if (key == "data.min_len") d.min_len = parse_int(key, value);
  else if (key == "data.max_len") d.max_len = parse_int(key, value);
  else if (key == "data.seed") d.seed = parse_u64(key, value);
  else if (key == "data.train_src") d.train_src = value;
  else if (key == "data.train_tgt") d.train_tgt = value;
  else if (key == "data.val_src") d.val_src = value;
  else if (key == "data.val_tgt") d.val_tgt = value;
  else if (key == "data.vocab_file") d.vocab_file = value;
  else if (key == "data.max_sentence_length") d.max_sentence_length = parse_int(key, value);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

ExperimentSpec parse_experiment_text(const std::string& text) {
  ExperimentSpec spec;
  // Sweep-friendly defaults for the fields TrainSchedule leaves unset.
  spec.schedule.max_steps = 200;
  spec.schedule.checkpoint_every = 50;

  std::set<std::string> seen;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    size_t colon = s.find(':');
    if (colon == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected 'key: value', got '" + s + "'");
    std::string key = trim(s.substr(0, colon));
    std::string value = trim(s.substr(colon + 1));
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    if (value.empty())
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty value for '" +
                                  key + "'");
    if (!seen.insert(key).second)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": duplicate key '" +
                                  key + "'");
    if (key == "seeds") {
      spec.seeds.clear();
      for (const std::string& item : split_comma(key, value))
        spec.seeds.push_back(parse_u64(key, item));
    } else if (key != "name" && value.find(',') != std::string::npos) {
      if (!spec.axis_key.empty())
        throw std::invalid_argument("config: keys '" + spec.axis_key + "' and '" + key +
                                    "' both hold lists; only one axis may be swept");
      spec.axis_key = key;
      spec.axis_values = split_comma(key, value);
    } else {
      apply_config_key(spec, key, value);
    }
  }
  // Surface bad axis values now, against a scratch copy of the base.
  for (const std::string& v : spec.axis_values) {
    ExperimentSpec scratch = spec;
    apply_config_key(scratch, spec.axis_key, v);
  }
  spec.source_text = text;
  return spec;
}

ExperimentSpec parse_experiment_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open experiment config " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_experiment_text(buf.str());
}

std::vector<Variant> materialize(const ExperimentSpec& spec) {
  std::vector<Variant> out;
  auto finish = [](ExperimentSpec s, std::string label) {
    // The attention size follows the layer width unless set explicitly.
    if (!s.attention_dim_set) s.model.attention.dim = s.model.units;
    return Variant{std::move(label), s.model, s.schedule, s.data};
  };
  if (spec.axis_key.empty()) {
    out.push_back(finish(spec, "base"));
    return out;
  }
  for (const std::string& v : spec.axis_values) {
    ExperimentSpec varied = spec;
    apply_config_key(varied, spec.axis_key, v);
    out.push_back(finish(std::move(varied), spec.axis_key + "=" + v));
  }
  return out;
}

ResolvedData resolve_data(const DataSpec& spec) {
  ResolvedData out;
  if (spec.task == DataSpec::Task::files) {
    if (spec.train_src.empty() || spec.train_tgt.empty() || spec.val_src.empty() ||
        spec.val_tgt.empty() || spec.vocab_file.empty())
      throw std::invalid_argument(
          "config: data.task files needs data.train_src/train_tgt/val_src/val_tgt/vocab_file");
    Vocabulary vocab = Vocabulary::load(spec.vocab_file);
    out.train =
        ParallelCorpus::from_files(spec.train_src, spec.train_tgt, vocab, spec.max_sentence_length);
    out.val = ParallelCorpus::from_files(spec.val_src, spec.val_tgt, vocab,
                                         spec.max_sentence_length);
    out.vocab = vocab.size();
    return out;
  }
  if (spec.train_pairs <= 0 || spec.val_pairs <= 0)
    throw std::invalid_argument("config: synthetic tasks need positive pair counts");
  auto make = spec.task == DataSpec::Task::copy ? make_copy_corpus : make_reversal_corpus;
  out.train = make(spec.train_pairs, spec.vocab, spec.min_len, spec.max_len, mix64(spec.seed, 1));
  out.val = make(spec.val_pairs, spec.vocab, spec.min_len, spec.max_len, mix64(spec.seed, 2));
  out.vocab = spec.vocab;
  return out;
}

int AggregateResult::converged() const {
  int n = 0;
  for (const RunResult& r : runs) n += r.converged ? 1 : 0;
  return n;
}

std::string AggregateResult::formatted() const {
  return converged() == 0 ? "n/a" : format_aggregate(mean, stddev, max);
}

std::string AggregateResult::converged_note() const {
  return std::to_string(converged()) + "/" + std::to_string(replicas()) + " converged";
}

std::string format_aggregate(double mean, double stddev, double max) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f (%.2f)", mean, stddev, max);
  return std::string(buf);
}

AggregateResult aggregate(std::string variant, long long param_count, std::vector<RunResult> runs) {
  AggregateResult a;
  a.variant = std::move(variant);
  a.param_count = param_count;
  a.runs = std::move(runs);

  std::vector<double> vals;
  for (const RunResult& r : a.runs)
    if (r.converged) vals.push_back(r.bleu);
  std::sort(vals.begin(), vals.end());
  if (vals.empty()) return a;

  double sum = 0.0;
  for (double v : vals) sum += v;
  a.mean = sum / static_cast<double>(vals.size());
  a.max = vals.back();
  if (vals.size() >= 2) {
    double ss = 0.0;
    for (double v : vals) ss += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(vals.size() - 1));
  } else {
    a.stddev = 0.0;
  }
  return a;
}

std::string render_report_markdown(const std::string& name,
                                   const std::vector<AggregateResult>& rows) {
  if (rows.empty()) throw std::invalid_argument("render_report_markdown: no rows");
  std::ostringstream os;
  os << "# " << name << "\n\n";
  os << "| Variant | BLEU (mean ± std (max)) | Params | Replicas |\n";
  os << "| --- | --- | --- | --- |\n";
  for (const AggregateResult& r : rows)
    os << "| " << r.variant << " | " << r.formatted() << " | " << r.param_count << " | "
       << r.converged_note() << " |\n";
  return os.str();
}

std::string render_results_csv(const std::vector<AggregateResult>& rows) {
  if (rows.empty()) throw std::invalid_argument("render_results_csv: no rows");
  std::ostringstream os;
  os << "variant,bleu,params,converged\n";
  for (const AggregateResult& r : rows)
    os << r.variant << ',' << r.formatted() << ',' << r.param_count << ','
       << r.converged() << '/' << r.replicas() << '\n';
  return os.str();
}

namespace {

template <class S>
RunResult run_replica(const Variant& variant, std::uint64_t seed, const std::string& run_dir) {
  const auto t0 = std::chrono::steady_clock::now();

  ResolvedData data = resolve_data(variant.data);
  ModelConfig cfg = variant.model;
  cfg.vocab = data.vocab;
  cfg.validate();

  TrainSchedule sched = variant.schedule;
  sched.validation = &data.val;

  RunResult r;
  r.seed = seed;
  r.param_count = count_parameters(cfg);
  try {
    Model<S> model(cfg, seed);
    TrainResult tr = train(model, data.train, sched, seed, run_dir);
    const CheckpointInfo& best = select_best_checkpoint(tr.checkpoints);
    r.bleu = best.metrics.val_bleu;
    r.steps_to_best = best.step;
    r.final_ppl = tr.checkpoints.back().metrics.val_ppl;
    r.converged = true;
  } catch (const TrainingDiverged& e) {
    r.converged = false;
    r.error = e.what();
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace

template <class S>
SweepResult run_experiment(const ExperimentSpec& spec, const std::string& out_dir, int jobs) {
  if (jobs < 1) throw std::invalid_argument("run_experiment: jobs must be >= 1");
  if (spec.seeds.empty()) throw std::invalid_argument("run_experiment: no seeds");
  {
    std::set<std::uint64_t> distinct(spec.seeds.begin(), spec.seeds.end());
    if (distinct.size() != spec.seeds.size())
      throw std::invalid_argument("run_experiment: seeds must be distinct");
  }

  const std::vector<Variant> variants = materialize(spec);
  const size_t n_seeds = spec.seeds.size();
  const size_t n_tasks = variants.size() * n_seeds;

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  write_text_file(out_dir + "/config.txt",
                  spec.source_text.empty() ? "name: " + spec.name + "\n" : spec.source_text);

  std::vector<std::string> run_dirs(n_tasks);
  for (size_t vi = 0; vi < variants.size(); ++vi)
    for (size_t si = 0; si < n_seeds; ++si) {
      std::string dir = out_dir + "/" + sanitize_label(variants[vi].label) + "/seed-" +
                        std::to_string(spec.seeds[si]);
      fs::create_directories(dir);
      run_dirs[vi * n_seeds + si] = std::move(dir);
    }

  std::vector<RunResult> results(n_tasks);
  std::vector<std::exception_ptr> errors(n_tasks);
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= n_tasks) return;
      try {
        results[i] = run_replica<S>(variants[i / n_seeds], spec.seeds[i % n_seeds], run_dirs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const size_t n_threads = std::min<size_t>(static_cast<size_t>(jobs), n_tasks);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);

  SweepResult out;
  out.name = spec.name;
  out.out_dir = out_dir;
  for (size_t vi = 0; vi < variants.size(); ++vi) {
    std::vector<RunResult> runs(results.begin() + static_cast<long>(vi * n_seeds),
                                results.begin() + static_cast<long>((vi + 1) * n_seeds));
    const long long params = runs.front().param_count;
    out.aggregates.push_back(aggregate(variants[vi].label, params, std::move(runs)));
  }

  out.report_path = out_dir + "/report.md";
  out.csv_path = out_dir + "/results.csv";
  write_text_file(out.report_path, render_report_markdown(spec.name, out.aggregates));
  write_text_file(out.csv_path, render_results_csv(out.aggregates));
  return out;
}

template SweepResult run_experiment<float>(const ExperimentSpec&, const std::string&, int);
template SweepResult run_experiment<double>(const ExperimentSpec&, const std::string&, int);

}  // namespace s2s
