// Command-line front end: preprocess -> train -> decode -> evaluate ->
// sweep -> report.  Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "s2s/beam.hpp"
#include "s2s/bleu.hpp"
#include "s2s/bpe.hpp"
#include "s2s/corpus.hpp"
#include "s2s/model.hpp"
#include "s2s/sweep.hpp"
#include "s2s/tokens.hpp"
#include "s2s/trainer.hpp"

namespace {

// ---------------------------------------------------------------- utilities

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
  if (!os) throw std::runtime_error("short write to " + path);
}

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::string join(const std::vector<std::string>& items, char sep) {
  std::string out;
  for (size_t i = 0; i < items.size(); ++i) {
    if (i) out.push_back(sep);
    out += items[i];
  }
  return out;
}

bool use_f64() {
  const char* p = std::getenv("S2S_PRECISION");
  if (p == nullptr || *p == '\0' || std::string(p) == "f32") return false;
  if (std::string(p) == "f64") return true;
  throw CLI::ValidationError("S2S_PRECISION must be f32 or f64, got '" + std::string(p) + "'");
}

// ------------------------------------------------- unknown-flag suggestions

size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<size_t> row(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (size_t i = 1; i <= a.size(); ++i) {
    size_t diag = row[0];
    row[0] = i;
    for (size_t j = 1; j <= b.size(); ++j) {
      size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

void collect_flag_names(const CLI::App* cmd, std::vector<std::string>& names) {
  for (const CLI::Option* opt : cmd->get_options()) {
    for (const std::string& n : opt->get_lnames()) names.push_back("--" + n);
    for (const std::string& n : opt->get_snames()) names.push_back("-" + n);
  }
}

// Prints an "unknown argument" diagnostic for the first unparsed token,
// with a nearest-name hint, and returns 1 when anything was left over.
int reject_extras(const CLI::App& app) {
  const std::vector<std::string> extras = app.remaining(true);
  if (extras.empty()) return 0;
  const std::string& tok = extras.front();

  std::vector<std::string> names;
  if (tok.rfind('-', 0) == 0) {
    collect_flag_names(&app, names);
    bool in_subcommand = false;
    for (const CLI::App* sub : app.get_subcommands(nullptr))
      if (sub->parsed()) {
        collect_flag_names(sub, names);
        in_subcommand = true;
      }
    if (!in_subcommand)
      for (const CLI::App* sub : app.get_subcommands(nullptr)) collect_flag_names(sub, names);
  } else {
    for (const CLI::App* sub : app.get_subcommands(nullptr)) names.push_back(sub->get_name());
  }

  std::cerr << "error: unknown argument '" << tok << "'";
  const std::string* best = nullptr;
  size_t best_d = std::string::npos;
  for (const std::string& n : names) {
    const size_t d = edit_distance(tok, n);
    if (d < best_d) {
      best_d = d;
      best = &n;
    }
  }
  if (best != nullptr && best_d <= std::max<size_t>(2, tok.size() / 3))
    std::cerr << "; did you mean '" << *best << "'?";
  std::cerr << "\n";
  return 1;
}

// --------------------------------------------------- id/text line handling

// Maps source/hypothesis lines to id sequences and back.  With a vocabulary
// the lines are (BPE) tokens and hypotheses come out de-BPE'd; without one,
// lines are whitespace-separated integer ids.
struct LineCodec {
  std::optional<s2s::Vocabulary> vocab;
  int model_vocab = 0;

  std::vector<int> encode(const std::string& line, size_t lineno) const {
    std::vector<int> ids;
    if (vocab) {
      ids = vocab->encode(split_ws(line));
      for (int id : ids)
        if (id == s2s::kPad || id == s2s::kSos || id == s2s::kEos)
          throw std::runtime_error("line " + std::to_string(lineno) +
                                   ": reserved token in input");
    } else {
      for (const std::string& tok : split_ws(line)) {
        int id = 0;
        try {
          size_t used = 0;
          id = std::stoi(tok, &used);
          if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
          throw std::runtime_error("line " + std::to_string(lineno) + ": '" + tok +
                                   "' is not an id (decode without --vocab expects integers)");
        }
        if (id < s2s::kNumReserved || id >= model_vocab)
          throw std::runtime_error("line " + std::to_string(lineno) + ": id " +
                                   std::to_string(id) + " outside the model vocabulary [" +
                                   std::to_string(s2s::kNumReserved) + ", " +
                                   std::to_string(model_vocab) + ")");
        ids.push_back(id);
      }
    }
    if (ids.empty())
      throw std::runtime_error("line " + std::to_string(lineno) + ": empty source sentence");
    return ids;
  }

  std::string render(std::vector<int> ids) const {
    if (!ids.empty() && ids.back() == s2s::kEos) ids.pop_back();
    if (vocab) return s2s::bpe_decode_line(vocab->decode(ids));
    std::vector<std::string> toks;
    toks.reserve(ids.size());
    for (int id : ids) toks.push_back(std::to_string(id));
    return join(toks, ' ');
  }
};

// ------------------------------------------------------------- subcommands

struct BpeLearnArgs {
  std::string input, out;
  int merges = 0;
};

int cmd_bpe_learn(const BpeLearnArgs& a) {
  const s2s::WordCounts words = s2s::count_words(read_lines(a.input));
  const s2s::MergeTable merges = s2s::learn_bpe(words, a.merges);
  const s2s::Vocabulary vocab = s2s::Vocabulary::build(words, merges);
  std::filesystem::create_directories(a.out);
  s2s::save_merges(merges, a.out + "/merges.txt");
  vocab.save(a.out + "/vocab.txt");
  std::cout << "merges: " << merges.size() << "\n";
  std::cout << "vocab: " << vocab.size() << "\n";
  return 0;
}

struct BpeApplyArgs {
  std::string input, model, out;
};

int cmd_bpe_apply(const BpeApplyArgs& a) {
  const s2s::MergeTable merges = s2s::load_merges(a.model);
  std::ostringstream os;
  for (const std::string& line : read_lines(a.input))
    os << join(s2s::bpe_encode_line(line, merges), ' ') << "\n";
  if (a.out.empty()) {
    std::cout << os.str();
  } else {
    std::filesystem::create_directories(a.out);
    std::string name = std::filesystem::path(a.input).filename().string() + ".bpe";
    write_text(a.out + "/" + name, os.str());
    std::cout << "wrote " << a.out + "/" + name << "\n";
  }
  return 0;
}

struct BleuArgs {
  std::string hyp, ref;
};

int cmd_bleu(const BleuArgs& a) {
  const s2s::BleuReport report = s2s::corpus_bleu(read_lines(a.hyp), read_lines(a.ref));
  std::cout << report.to_string() << "\n";
  return 0;
}

// Parses a single-run config (axis lists are for `sweep`) and returns the
// one variant with the data-derived vocabulary filled in.
s2s::Variant single_variant(const std::string& config_path) {
  s2s::ExperimentSpec spec = s2s::parse_experiment_file(config_path);
  if (!spec.axis_key.empty())
    throw CLI::ValidationError("config sweeps '" + spec.axis_key +
                               "'; use the sweep subcommand for value lists");
  return s2s::materialize(spec)[0];
}

struct TrainArgs {
  std::string config, out, resume;
  std::uint64_t seed = 1;
};

template <class S>
int cmd_train(const TrainArgs& a) {
  s2s::Variant v = single_variant(a.config);
  s2s::ResolvedData data = s2s::resolve_data(v.data);
  s2s::ModelConfig cfg = v.model;
  cfg.vocab = data.vocab;
  cfg.validate();
  s2s::TrainSchedule sched = v.schedule;
  sched.validation = &data.val;

  s2s::Model<S> model(cfg, a.seed);
  const s2s::TrainResult result = s2s::train(model, data.train, sched, a.seed, a.out, a.resume);
  const s2s::CheckpointInfo& best = s2s::select_best_checkpoint(result.checkpoints);

  char bleu_txt[32];
  std::snprintf(bleu_txt, sizeof bleu_txt, "%.4f", best.metrics.val_bleu);
  std::cout << "steps: " << result.steps_run << "\n";
  std::cout << "checkpoints: " << result.checkpoints.size() << "\n";
  std::cout << "best: " << best.path << " (step " << best.step << ", val_bleu " << bleu_txt
            << ")\n";
  return 0;
}

struct DecodeArgs {
  std::string config, ckpt, input, vocab, out;
  int beam = 10;
  double alpha = 0.6;
  int max_length = 100;
  int nbest = 0;
  bool greedy = false;
};

template <class S>
int cmd_decode(const DecodeArgs& a) {
  s2s::Variant v = single_variant(a.config);

  LineCodec codec;
  std::string vocab_path = a.vocab;
  if (vocab_path.empty() && v.data.task == s2s::DataSpec::Task::files)
    vocab_path = v.data.vocab_file;
  s2s::ModelConfig cfg = v.model;
  if (!vocab_path.empty()) {
    codec.vocab = s2s::Vocabulary::load(vocab_path);
    cfg.vocab = codec.vocab->size();
  } else {
    cfg.vocab = v.data.vocab;
  }
  cfg.validate();
  codec.model_vocab = cfg.vocab;

  s2s::Model<S> model(cfg, 0);
  s2s::load_checkpoint<S>(a.ckpt, model.store(), nullptr, cfg.digest());

  s2s::BeamConfig bc;
  bc.width = a.beam;
  bc.alpha = a.alpha;
  bc.max_length = a.max_length;
  bc.validate();

  const std::vector<std::string> lines = read_lines(a.input);
  std::ostringstream hyps, nbest;
  for (size_t i = 0; i < lines.size(); ++i) {
    const std::vector<int> src = s2s::with_eos(codec.encode(lines[i], i + 1));
    if (a.greedy) {
      hyps << codec.render(s2s::greedy_decode(model, src, a.max_length).tokens) << "\n";
      continue;
    }
    const s2s::BeamResult result = s2s::beam_decode(model, src, bc);
    hyps << codec.render(result.best.tokens) << "\n";
    const size_t take = std::min<size_t>(static_cast<size_t>(a.nbest), result.nbest.size());
    for (size_t r = 0; r < take; ++r) {
      const s2s::BeamHypo& h = result.nbest[r];
      char nums[64];
      std::snprintf(nums, sizeof nums, "%.6f ||| %.6f", h.logp, h.score);
      nbest << i << " ||| " << codec.render(h.tokens) << " ||| " << nums << "\n";
    }
  }

  if (a.nbest > 0)
    std::cout << nbest.str();
  else
    std::cout << hyps.str();
  if (!a.out.empty()) {
    std::filesystem::create_directories(a.out);
    write_text(a.out + "/hyps.txt", hyps.str());
    if (a.nbest > 0) write_text(a.out + "/nbest.txt", nbest.str());
  }
  return 0;
}

struct SweepArgs {
  std::string config, out;
  int jobs = 1;
};

template <class S>
int cmd_sweep(const SweepArgs& a) {
  const s2s::ExperimentSpec spec = s2s::parse_experiment_file(a.config);
  const s2s::SweepResult result = s2s::run_experiment<S>(spec, a.out, a.jobs);
  std::cout << s2s::render_report_markdown(result.name, result.aggregates);
  return 0;
}

struct ReportArgs {
  std::string exp, out;
};

int cmd_report(const ReportArgs& a) {
  const std::string csv_path = a.exp + "/results.csv";
  std::vector<std::string> lines = read_lines(csv_path);
  if (lines.empty() || lines[0] != "variant,bleu,params,converged")
    throw std::runtime_error(csv_path + ": not a results file");

  std::string name = std::filesystem::path(a.exp).filename().string();
  try {
    name = s2s::parse_experiment_file(a.exp + "/config.txt").name;
  } catch (const std::exception&) {
    // keep the directory name
  }

  std::ostringstream os;
  os << "# " << name << "\n\n";
  os << "| Variant | BLEU (mean ± std (max)) | Params | Replicas |\n";
  os << "| --- | --- | --- | --- |\n";
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const size_t c1 = lines[i].find(',');
    const size_t c2 = lines[i].find(',', c1 + 1);
    const size_t c3 = lines[i].find(',', c2 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos || c3 == std::string::npos)
      throw std::runtime_error(csv_path + ": malformed row '" + lines[i] + "'");
    os << "| " << lines[i].substr(0, c1) << " | " << lines[i].substr(c1 + 1, c2 - c1 - 1)
       << " | " << lines[i].substr(c2 + 1, c3 - c2 - 1) << " | " << lines[i].substr(c3 + 1)
       << " converged |\n";
  }
  std::cout << os.str();
  if (!a.out.empty()) {
    std::filesystem::create_directories(a.out);
    write_text(a.out + "/report.md", os.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"s2s: sequence-to-sequence translation toolkit"};
  app.require_subcommand(1);
  app.allow_extras();

  BpeLearnArgs learn_args;
  CLI::App* learn = app.add_subcommand("bpe-learn", "Learn BPE merges from tokenized text");
  learn->allow_extras();
  learn->add_option("--input", learn_args.input, "tokenized text, one sentence per line")
      ->required()
      ->check(CLI::ExistingFile);
  learn->add_option("--merges", learn_args.merges, "number of merge operations")
      ->required()
      ->check(CLI::NonNegativeNumber);
  learn->add_option("--out", learn_args.out, "output directory (merges.txt, vocab.txt)")
      ->required();

  BpeApplyArgs apply_args;
  CLI::App* apply = app.add_subcommand("bpe-apply", "Segment text with learned BPE merges");
  apply->allow_extras();
  apply->add_option("--input", apply_args.input, "tokenized text, one sentence per line")
      ->required()
      ->check(CLI::ExistingFile);
  apply->add_option("--model", apply_args.model, "merges.txt from bpe-learn")
      ->required()
      ->check(CLI::ExistingFile);
  apply->add_option("--out", apply_args.out,
                    "output directory (<input name>.bpe); omit to print to stdout");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "Train one model from a config file");
  train->allow_extras();
  train->add_option("--config", train_args.config, "flat key: value config (single values only)")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--out", train_args.out, "output directory (checkpoints, train_log.csv)")
      ->required();
  train->add_option("--seed", train_args.seed,
                    "initialization and batch-order seed (default 1)");
  train->add_option("--resume", train_args.resume, "checkpoint to resume from")
      ->check(CLI::ExistingFile);

  DecodeArgs decode_args;
  CLI::App* decode = app.add_subcommand("decode", "Translate a source file with a checkpoint");
  decode->allow_extras();
  decode->add_option("--config", decode_args.config, "config the checkpoint was trained with")
      ->required()
      ->check(CLI::ExistingFile);
  decode->add_option("--ckpt", decode_args.ckpt, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  decode->add_option("--input", decode_args.input, "source sentences, one per line")
      ->required()
      ->check(CLI::ExistingFile);
  decode->add_option("--vocab", decode_args.vocab,
                     "vocabulary file mapping tokens to ids; without it lines are integer ids")
      ->check(CLI::ExistingFile);
  decode->add_option("--beam", decode_args.beam, "beam width (default 10)")
      ->check(CLI::PositiveNumber);
  decode->add_option("--alpha", decode_args.alpha, "length-penalty exponent (default 0.6)");
  decode->add_option("--max-length", decode_args.max_length, "decode length cap (default 100)")
      ->check(CLI::PositiveNumber);
  decode->add_option("--nbest", decode_args.nbest,
                     "print this many hypotheses per line as 'index ||| tokens ||| logprob "
                     "||| score'")
      ->check(CLI::NonNegativeNumber);
  decode->add_flag("--greedy", decode_args.greedy, "greedy argmax decode (equals --beam 1)");
  decode->add_option("--out", decode_args.out,
                     "also write hyps.txt (and nbest.txt) into this directory");

  BleuArgs bleu_args;
  CLI::App* bleu = app.add_subcommand("bleu", "Corpus BLEU of a hypothesis file");
  bleu->allow_extras();
  bleu->add_option("--hyp", bleu_args.hyp, "hypothesis file, one sentence per line")
      ->required()
      ->check(CLI::ExistingFile);
  bleu->add_option("--ref", bleu_args.ref, "reference file, one sentence per line")
      ->required()
      ->check(CLI::ExistingFile);

  SweepArgs sweep_args;
  CLI::App* sweep = app.add_subcommand(
      "sweep", "Run an experiment config (replica seeds from its 'seeds' key, default 1,2,3,4)");
  sweep->allow_extras();
  sweep->add_option("--config", sweep_args.config, "experiment config; one key may hold a list")
      ->required()
      ->check(CLI::ExistingFile);
  sweep->add_option("--out", sweep_args.out, "experiment directory (report.md, results.csv)")
      ->required();
  sweep->add_option("--jobs", sweep_args.jobs, "max replicas trained in parallel (default 1)")
      ->check(CLI::PositiveNumber);

  ReportArgs report_args;
  CLI::App* report = app.add_subcommand("report", "Render the table for a finished experiment");
  report->allow_extras();
  report->add_option("--exp", report_args.exp, "experiment directory written by sweep")
      ->required()
      ->check(CLI::ExistingDirectory);
  report->add_option("--out", report_args.out, "also write report.md into this directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Unknown tokens beat knock-on errors like "--hyp is required".
    if (reject_extras(app) != 0) return 1;
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (reject_extras(app) != 0) return 1;

  try {
    const bool f64 = use_f64();
    if (decode->parsed() && decode->count("--nbest") > 0) {
      if (decode_args.greedy)
        throw CLI::ValidationError("--nbest needs beam search, not --greedy");
      if (decode_args.nbest > decode_args.beam)
        throw CLI::ValidationError("--nbest cannot exceed the beam width");
    }

    if (learn->parsed()) return cmd_bpe_learn(learn_args);
    if (apply->parsed()) return cmd_bpe_apply(apply_args);
    if (bleu->parsed()) return cmd_bleu(bleu_args);
    if (train->parsed()) return f64 ? cmd_train<double>(train_args) : cmd_train<float>(train_args);
    if (decode->parsed())
      return f64 ? cmd_decode<double>(decode_args) : cmd_decode<float>(decode_args);
    if (sweep->parsed()) return f64 ? cmd_sweep<double>(sweep_args) : cmd_sweep<float>(sweep_args);
    if (report->parsed()) return cmd_report(report_args);
    std::cerr << "error: no subcommand\n";
    return 1;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
