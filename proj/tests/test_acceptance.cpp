// Acceptance suite: ten numbered end-to-end checks, one PASS/FAIL line each.
// Exits 0 only when every criterion holds.  The heavyweight criteria (4, 5)
// train real models and dominate the runtime.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "s2s/beam.hpp"
#include "s2s/bleu.hpp"
#include "s2s/bpe.hpp"
#include "s2s/cells.hpp"
#include "s2s/corpus.hpp"
#include "s2s/model.hpp"
#include "s2s/rng.hpp"
#include "s2s/sweep.hpp"
#include "s2s/tensor.hpp"
#include "s2s/tokens.hpp"
#include "s2s/trainer.hpp"
#include "toy_models.hpp"

namespace ops = s2s::ops;
using s2s::AttentionType;
using s2s::CellKind;
using s2s::IdBatch;
using s2s::Model;
using s2s::ModelConfig;
using s2s::ParameterStore;
using s2s::ResidualMode;
using s2s::Rng;
using s2s::Tensor;
using testutil::gradcheck;
using testutil::rand_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw std::runtime_error(message);
}

void require_time(double elapsed, double budget) {
  require(elapsed < budget,
          fmt("%.1fs", elapsed) + " exceeds the " + fmt("%.0fs", budget) + " budget");
}

struct TempDir {
  explicit TempDir(const std::string& name) : path("acceptance_" + name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string path;
};

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "cannot open " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

IdBatch batch(std::vector<std::vector<int>> rows) {
  IdBatch b;
  b.rows = std::move(rows);
  return b;
}

// ------------------------------------------------------------- criterion 1

// Finite-difference check of one differentiable op through a small graph.
double check_op(std::vector<Tensor<double>> inputs,
                const std::function<Tensor<double>()>& loss) {
  return gradcheck(std::move(inputs), [&] { return loss(); });
}

double gradient_ops(Rng& rng) {
  double worst = 0.0;
  auto note = [&](double err) { worst = std::max(worst, err); };

  auto a = rand_tensor({2, 3}, rng);
  auto b = rand_tensor({2, 3}, rng);
  auto row = rand_tensor({3}, rng);
  auto w23 = rand_tensor({2, 3}, rng);

  note(check_op({a, b, w23}, [&] { return ops::sum(ops::mul(ops::add(a, b), w23)); }));
  note(check_op({a, row, w23}, [&] { return ops::sum(ops::mul(ops::add(a, row), w23)); }));
  note(check_op({a, b, w23}, [&] { return ops::sum(ops::mul(ops::sub(a, b), w23)); }));
  note(check_op({a, b}, [&] { return ops::sum(ops::mul(a, b)); }));
  note(check_op({a, w23}, [&] { return ops::sum(ops::mul(ops::scale(a, -1.7), w23)); }));
  note(check_op({a, w23}, [&] { return ops::sum(ops::mul(ops::tanh(a), w23)); }));
  note(check_op({a, w23}, [&] { return ops::sum(ops::mul(ops::sigmoid(a), w23)); }));

  auto m1 = rand_tensor({2, 3}, rng);
  auto m2 = rand_tensor({3, 4}, rng);
  auto w24 = rand_tensor({2, 4}, rng);
  note(check_op({m1, m2, w24}, [&] { return ops::sum(ops::mul(ops::matmul(m1, m2), w24)); }));

  auto b1 = rand_tensor({2, 2, 3}, rng);
  auto b2 = rand_tensor({2, 3, 2}, rng);
  auto w222 = rand_tensor({2, 2, 2}, rng);
  note(check_op({b1, b2, w222}, [&] { return ops::sum(ops::mul(ops::bmm(b1, b2), w222)); }));

  auto logits = rand_tensor({3, 5}, rng, -2.0, 2.0);
  auto w35 = rand_tensor({3, 5}, rng);
  note(check_op({logits, w35}, [&] { return ops::sum(ops::mul(ops::softmax(logits), w35)); }));
  note(check_op({logits, w35}, [&] { return ops::sum(ops::mul(ops::log_softmax(logits), w35)); }));

  auto c1 = rand_tensor({2, 2}, rng);
  auto c2 = rand_tensor({2, 3}, rng);
  auto c3 = rand_tensor({2, 1}, rng);
  auto w26 = rand_tensor({2, 6}, rng);
  note(check_op({c1, c2, c3, w26}, [&] {
    return ops::sum(ops::mul(ops::concat(std::vector<Tensor<double>>{c1, c2, c3}), w26));
  }));
  auto w25 = rand_tensor({2, 5}, rng);
  note(check_op({c1, c2, w25}, [&] { return ops::sum(ops::mul(ops::concat(c1, c2), w25)); }));

  auto wide = rand_tensor({2, 6}, rng);
  auto w2s = rand_tensor({2, 3}, rng);
  note(check_op({wide, w2s}, [&] { return ops::sum(ops::mul(ops::slice(wide, 1, 3), w2s)); }));
  auto w34 = rand_tensor({3, 4}, rng);
  note(check_op({wide, w34}, [&] {
    return ops::sum(ops::mul(ops::reshape(wide, {3, 4}), w34));
  }));

  note(check_op({a, b}, [&] { return ops::mul(ops::sum(a), ops::sum(b)); }));
  note(check_op({a}, [&] { return ops::scale(ops::mean(a), 3.0); }));

  auto table = rand_tensor({5, 3}, rng);
  auto w63 = rand_tensor({6, 3}, rng);
  note(check_op({table, w63}, [&] {
    return ops::sum(ops::mul(ops::take_rows(table, {0, 2, 2, 4, 1, 0}), w63));
  }));

  auto pos = rand_tensor({2, 3, 2}, rng);
  auto w232 = rand_tensor({2, 3, 2}, rng);
  const std::vector<std::vector<int>> perm = {{2, 0, 1}, {1, 2, 0}};
  note(check_op({pos, w232}, [&] {
    return ops::sum(ops::mul(ops::gather_positions(pos, perm), w232));
  }));

  auto picked = rand_tensor({3, 6}, rng);
  auto w3 = rand_tensor({3}, rng);
  note(check_op({picked, w3}, [&] {
    return ops::sum(ops::mul(ops::pick(picked, {1, 0, 5}), w3));
  }));

  // dropout: the closure redraws the identical mask on every evaluation
  note(check_op({a, w23}, [&] {
    Rng mask_rng(7);
    return ops::sum(ops::mul(ops::dropout(a, 0.4, true, mask_rng), w23));
  }));
  Rng unused(0);
  auto eval_drop = ops::dropout(a, 0.4, false, unused);
  for (size_t i = 0; i < a.size(); ++i)
    require(eval_drop[i] == a[i], "dropout must be the identity outside training");

  return worst;
}

double gradient_cells(Rng& rng) {
  double worst = 0.0;
  for (CellKind kind : {CellKind::vanilla, CellKind::gru, CellKind::lstm}) {
    ParameterStore<double> store;
    s2s::CellSpec spec;
    spec.kind = kind;
    spec.input_dim = 3;
    spec.units = 4;
    spec.forget_bias = 1.0;
    auto cell = s2s::make_cell<double>(store, "c", spec, rng);

    auto x1 = rand_tensor({2, 3}, rng);
    auto x2 = rand_tensor({2, 3}, rng);
    auto w = rand_tensor({2, 8}, rng);
    std::vector<Tensor<double>> inputs = {x1, x2, w};
    for (size_t i = 0; i < store.count(); ++i) inputs.push_back(store.at(i).value);

    const double err = gradcheck(inputs, [&] {
      auto s1 = cell->step(x1, cell->initial_state(2));
      auto s2 = cell->step(x2, s1);
      return ops::sum(ops::mul(ops::concat(s1.h, s2.h), w));
    });
    worst = std::max(worst, err);
  }
  return worst;
}

double gradient_micro_model() {
  ModelConfig cfg;
  cfg.vocab = 11;
  cfg.emb = 6;
  cfg.units = 8;
  cfg.dropout = 0.0;
  cfg.encoder.bidi = true;
  cfg.encoder.depth = 2;
  cfg.encoder.cell = CellKind::lstm;
  cfg.decoder.depth = 2;
  cfg.decoder.cell = CellKind::lstm;
  cfg.attention.type = AttentionType::mul;
  cfg.attention.dim = 8;
  cfg.validate();

  Model<double> m(cfg, 33);
  const auto src = batch({{4, 5, 6, 7}, {8, 9, 10, s2s::kPad}});
  const auto tgt = batch({{5, 4, 6, 7}, {9, 8, s2s::kPad, s2s::kPad}});
  std::vector<Tensor<double>> inputs;
  for (size_t i = 0; i < m.store().count(); ++i) inputs.push_back(m.store().at(i).value);
  Rng drop(0);
  return gradcheck(inputs, [&] { return m.sequence_nll(src, tgt, false, drop); });
}

std::string criterion_gradients() {
  const auto start = Clock::now();
  Rng rng(101);
  double worst = gradient_ops(rng);
  worst = std::max(worst, gradient_cells(rng));
  worst = std::max(worst, gradient_micro_model());
  require(worst < 1e-3, "max relative error " + fmt("%.2e", worst) + " >= 1e-3");
  const double elapsed = seconds_since(start);
  require_time(elapsed, 60.0);
  return "max rel err " + fmt("%.2e", worst) + ", " + fmt("%.1fs", elapsed);
}

// ------------------------------------------------------------- criterion 2

std::string criterion_beam_oracle() {
  const auto start = Clock::now();
  const int vocab = 5, max_len = 5;
  int width = 1;
  for (int i = 0; i < max_len; ++i) width *= vocab;  // 5^5 = 3125

  for (uint64_t seed = 1; seed <= 25; ++seed) {
    testutil::RandomToyModel model(vocab, seed);
    testutil::ToyStepper<testutil::RandomToyModel> step{&model};
    for (double alpha : {0.0, 0.6, 1.0}) {
      const auto all = testutil::enumerate_all(model, max_len, alpha);
      s2s::BeamConfig cfg;
      cfg.width = width;
      cfg.alpha = alpha;
      cfg.max_length = max_len;
      const auto got = s2s::beam_search(testutil::PrefixState{}, testutil::kToySos,
                                        testutil::kToyEos, vocab, step, cfg);
      require(got.best.tokens == all.front().tokens,
              "seed " + std::to_string(seed) + " alpha " + fmt("%.1f", alpha) +
                  ": beam argmax differs from exhaustive enumeration");
      require(std::abs(got.best.score - all.front().score) < 1e-12,
              "seed " + std::to_string(seed) + ": scores differ");
    }
  }
  const double elapsed = seconds_since(start);
  require_time(elapsed, 60.0);
  return "25 models x 3 alphas, width 3125, " + fmt("%.1fs", elapsed);
}

// ------------------------------------------------------------- criterion 3

std::string render_ids(const std::vector<int>& ids) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(ids[i]);
  }
  return out;
}

std::string criterion_width1_greedy() {
  const CellKind cells[] = {CellKind::lstm, CellKind::gru, CellKind::vanilla};
  const AttentionType atts[] = {AttentionType::mul, AttentionType::add,
                                AttentionType::none_state, AttentionType::none_input};
  const ResidualMode res[] = {ResidualMode::none, ResidualMode::standard, ResidualMode::dense};

  Rng rng(404);
  for (int i = 0; i < 20; ++i) {
    ModelConfig cfg;
    cfg.vocab = 8 + static_cast<int>(rng.below(5));
    cfg.emb = 4 + static_cast<int>(rng.below(3));
    cfg.units = 5 + static_cast<int>(rng.below(4));
    cfg.dropout = 0.0;
    cfg.encoder.bidi = rng.below(2) == 0;
    const int per_dir = 1 + static_cast<int>(rng.below(2));
    cfg.encoder.depth = cfg.encoder.bidi ? 2 * per_dir : per_dir;
    cfg.encoder.reverse_source = rng.below(2) == 0;
    cfg.encoder.cell = cells[rng.below(3)];
    cfg.encoder.residual = res[rng.below(3)];
    cfg.decoder.depth = 1 + static_cast<int>(rng.below(2));
    cfg.decoder.cell = cells[rng.below(3)];
    cfg.decoder.residual = res[rng.below(3)];
    cfg.attention.type = atts[i % 4];
    cfg.attention.dim = cfg.units;
    cfg.validate();

    Model<float> m(cfg, rng.next_u64());
    std::vector<int> src;
    const int len = 2 + static_cast<int>(rng.below(4));
    for (int t = 0; t < len; ++t)
      src.push_back(s2s::kNumReserved +
                    static_cast<int>(rng.below(cfg.vocab - s2s::kNumReserved)));
    src = s2s::with_eos(std::move(src));

    s2s::BeamConfig bc;
    bc.width = 1;
    bc.alpha = (i % 2 == 0) ? 0.0 : 0.6;
    bc.max_length = 10;
    const auto beam = s2s::beam_decode(m, src, bc);
    const auto greedy = s2s::greedy_decode(m, src, bc.max_length);
    require(render_ids(beam.best.tokens) == render_ids(greedy.tokens),
            "model " + std::to_string(i) + ": width-1 beam differs from greedy");
  }
  return "20 random models byte-identical";
}

// ------------------------------------------------------------- criterion 4

s2s::DataSpec task_data(s2s::DataSpec::Task task) {
  s2s::DataSpec d;
  d.task = task;
  d.vocab = 20;
  d.train_pairs = 2000;
  d.val_pairs = 200;
  d.min_len = 5;
  d.max_len = 10;
  d.seed = 11;
  return d;
}

ModelConfig task_model() {
  ModelConfig cfg;
  cfg.vocab = 20;
  cfg.emb = 32;
  cfg.units = 64;
  cfg.dropout = 0.0;
  cfg.encoder.bidi = true;
  cfg.encoder.depth = 2;
  cfg.encoder.cell = CellKind::gru;
  cfg.decoder.depth = 2;
  cfg.decoder.cell = CellKind::gru;
  cfg.attention.type = AttentionType::mul;
  cfg.attention.dim = 64;
  cfg.validate();
  return cfg;
}

s2s::TrainSchedule task_schedule(const s2s::ParallelCorpus& val) {
  s2s::TrainSchedule sched;
  sched.batch_size = 32;
  sched.max_steps = 2500;
  sched.checkpoint_every = 250;
  sched.adam.lr = 0.005;
  sched.validation = &val;
  sched.val_batch_size = 32;
  sched.val_max_length = 20;
  return sched;
}

std::string criterion_copy_task() {
  const auto start = Clock::now();
  TempDir dir("copy");
  const s2s::ResolvedData data = s2s::resolve_data(task_data(s2s::DataSpec::Task::copy));
  Model<float> model(task_model(), 1);
  const auto result = s2s::train(model, data.train, task_schedule(data.val), 1, dir.path);
  const auto& best = s2s::select_best_checkpoint(result.checkpoints);
  const double elapsed = seconds_since(start);
  require(best.metrics.val_bleu >= 99.0,
          "best held-out BLEU " + fmt("%.2f", best.metrics.val_bleu) + " < 99.0");
  require_time(elapsed, 600.0);
  return "held-out BLEU " + fmt("%.2f", best.metrics.val_bleu) + " at step " +
         std::to_string(best.step) + ", " + fmt("%.0fs", elapsed);
}

// ------------------------------------------------------------- criterion 5

std::string criterion_attention_ablation() {
  const auto start = Clock::now();
  TempDir dir("ablation");
  const std::string config =
      "name: reversal-ablation\n"
      "units: 64\n"
      "emb: 32\n"
      "dropout: 0\n"
      "encoder.bidi: true\n"
      "encoder.depth: 2\n"
      "encoder.cell: gru\n"
      "decoder.depth: 2\n"
      "decoder.cell: gru\n"
      "attention.type: mul,none-input\n"
      "train.batch_size: 32\n"
      "train.max_steps: 2500\n"
      "train.checkpoint_every: 250\n"
      "train.lr: 0.005\n"
      "val.batch_size: 32\n"
      "beam.max_length: 20\n"
      "data.task: reversal\n"
      "data.vocab: 20\n"
      "data.train_pairs: 2000\n"
      "data.val_pairs: 200\n"
      "data.min_len: 5\n"
      "data.max_len: 10\n"
      "data.seed: 11\n"
      "seeds: 1,2,3\n";
  const auto spec = s2s::parse_experiment_text(config);
  const auto sweep = s2s::run_experiment<float>(spec, dir.path + "/exp", 1);

  const s2s::AggregateResult* mul = nullptr;
  const s2s::AggregateResult* none = nullptr;
  for (const auto& agg : sweep.aggregates) {
    if (agg.variant == "attention.type=mul") mul = &agg;
    if (agg.variant == "attention.type=none-input") none = &agg;
  }
  require(mul != nullptr && none != nullptr, "expected both attention variants in the sweep");
  require(mul->converged() == 3 && none->converged() == 3, "a replica diverged");
  const double margin = mul->mean - none->mean;
  const double elapsed = seconds_since(start);
  require(margin >= 10.0, "mul " + fmt("%.2f", mul->mean) + " vs none-input " +
                              fmt("%.2f", none->mean) + ": margin " + fmt("%.2f", margin) +
                              " < 10");
  require_time(elapsed, 2700.0);
  return "mul " + fmt("%.2f", mul->mean) + " vs none-input " + fmt("%.2f", none->mean) +
         " (margin " + fmt("%.1f", margin) + "), " + fmt("%.0fs", elapsed);
}

// ------------------------------------------------------------- criterion 6

std::string criterion_residual_algebra() {
  Rng rng(8);
  Rng drop(0);
  const auto x = Tensor<double>::from_data({1, 2}, {0.7, -1.2});

  for (int depth : {1, 2, 3, 4}) {
    s2s::StackSpec sp;
    for (int l = 0; l < depth; ++l) {
      s2s::CellSpec cs;
      cs.kind = CellKind::vanilla;
      cs.input_dim = 2;
      cs.units = 2;
      sp.layers.push_back(cs);
    }

    // standard residual with zero cells: h_l = 0 + x_l, an exact identity
    sp.residual = ResidualMode::standard;
    {
      ParameterStore<double> store;
      s2s::Stack<double> stack(store, "s", sp, rng);
      for (size_t i = 0; i < store.count(); ++i) {
        auto& v = store.at(i).value.values_mut();
        std::fill(v.begin(), v.end(), 0.0);
      }
      auto [out, states] = stack.step(x, stack.initial_states(1), false, drop);
      for (size_t i = 0; i < x.size(); ++i)
        require(out[i] == x[i], "standard residual: zero cells must give the identity");
    }

    // dense residual with zero cells: inputs double per layer, 2^{l-1} x
    sp.residual = ResidualMode::dense;
    {
      ParameterStore<double> store;
      s2s::Stack<double> stack(store, "s", sp, rng);
      for (size_t i = 0; i < store.count(); ++i) {
        auto& v = store.at(i).value.values_mut();
        std::fill(v.begin(), v.end(), 0.0);
      }
      auto [out, states] = stack.step(x, stack.initial_states(1), false, drop);
      const double amp = std::pow(2.0, depth - 1);
      for (size_t i = 0; i < x.size(); ++i)
        require(out[i] == amp * x[i], "dense residual: amplification must be exactly 2^(l-1)");
    }
  }
  return "identity and 2^(l-1) amplification exact for depths 1-4";
}

// ------------------------------------------------------------- criterion 7

std::string criterion_bleu_fixture() {
  const std::vector<std::string> hyps = {
      "the cat sat on the mat .",
      "a b c d e",
      "the quick brown fox",
      "the quick brown dog",
      "x y z w",
      "short answer",
      "the the the the",
      "one two three four five six",
      "i like green apples",
      "to be or not to be",
  };
  const std::vector<std::string> refs = {
      "the cat sat on the mat .",
      "a b c d e",
      "the quick brown fox",
      "the quick brown fox",
      "p q r s",
      "this is a much longer reference sentence",
      "the cat",
      "one two three four five six",
      "i like red apples",
      "to be or not to be",
  };

  const auto report = s2s::corpus_bleu(hyps, refs);

  // counted by hand: clipped matches 35/26/19/13 over totals 46/36/26/17,
  // hyp_len 46 vs ref_len 49 so BP = exp(1 - 49/46), BLEU = 69.7414
  const long long want_matched[4] = {35, 26, 19, 13};
  const long long want_total[4] = {46, 36, 26, 17};
  for (int n = 0; n < 4; ++n) {
    require(report.matched[n] == want_matched[n],
            std::to_string(n + 1) + "-gram matches: got " + std::to_string(report.matched[n]) +
                ", hand count " + std::to_string(want_matched[n]));
    require(report.total[n] == want_total[n],
            std::to_string(n + 1) + "-gram totals: got " + std::to_string(report.total[n]) +
                ", hand count " + std::to_string(want_total[n]));
  }
  require(report.hyp_len == 46 && report.ref_len == 49, "corpus lengths differ from hand count");
  require(std::abs(report.brevity_penalty - std::exp(1.0 - 49.0 / 46.0)) < 1e-12,
          "brevity penalty differs from exp(1 - 49/46)");
  require(std::abs(report.bleu - 69.741355) < 0.01,
          "corpus BLEU " + fmt("%.6f", report.bleu) + " not within 0.01 of 69.741355");

  // the all-noise pair alone scores exactly zero
  const auto zero = s2s::corpus_bleu({"x y z w"}, {"p q r s"});
  require(zero.bleu == 0.0, "zero-precision pair must score 0");

  // the short pair alone is governed by the brevity penalty exp(1 - 7/2)
  const auto brief = s2s::corpus_bleu({"short answer"},
                                      {"this is a much longer reference sentence"});
  require(std::abs(brief.brevity_penalty - std::exp(1.0 - 7.0 / 2.0)) < 1e-12,
          "brevity penalty of the short pair differs from exp(-2.5)");

  return "corpus BLEU " + fmt("%.4f", report.bleu) + " vs hand-computed 69.7414";
}

// ------------------------------------------------------------- criterion 8

std::string criterion_bpe_roundtrip() {
  Rng rng(2025);
  std::vector<std::string> lines;
  std::string line;
  for (int i = 0; i < 10000; ++i) {
    const int len = 1 + static_cast<int>(rng.below(10));
    std::string word;
    for (int k = 0; k < len; ++k)
      word.push_back(static_cast<char>('a' + static_cast<int>(rng.below(8))));
    if (!line.empty()) line += ' ';
    line += word;
    if (i % 8 == 7) {
      lines.push_back(line);
      line.clear();
    }
  }
  if (!line.empty()) lines.push_back(line);

  const s2s::WordCounts words = s2s::count_words(lines);
  const s2s::MergeTable merges = s2s::learn_bpe(words, 200);
  for (const auto& [word, count] : words) {
    const auto units = s2s::apply_bpe(word, merges);
    const auto back = s2s::debpe(units);
    require(back.size() == 1 && back[0] == word, "round trip failed for '" + word + "'");
  }

  int prev_size = -1;
  std::string sizes;
  for (int k : {0, 50, 100, 200}) {
    const int size = s2s::Vocabulary::build(words, s2s::learn_bpe(words, k)).size();
    require(size >= prev_size, "vocabulary shrank between " + std::to_string(k) + " merges");
    prev_size = size;
    sizes += (sizes.empty() ? "" : "/") + std::to_string(size);
  }
  return std::to_string(words.size()) + " distinct words round-trip; vocab " + sizes +
         " over 0/50/100/200 merges";
}

// ------------------------------------------------------------- criterion 9

std::string criterion_aggregation_format() {
  std::vector<s2s::RunResult> runs;
  for (double bleu : {21.50, 21.66, 21.40, 21.44}) {
    s2s::RunResult r;
    r.seed = runs.size() + 1;
    r.converged = true;
    r.bleu = bleu;
    runs.push_back(r);
  }
  const auto agg = s2s::aggregate("v", 0, std::move(runs));
  const std::string got = agg.formatted();
  require(got == "21.50 ± 0.11 (21.66)",
          "formatted aggregate is '" + got + "', want '21.50 ± 0.11 (21.66)'");
  return "replicas render as \"" + got + "\"";
}

// ------------------------------------------------------------ criterion 10

std::string criterion_sweep_determinism() {
  TempDir dir("determinism");
  const std::string config =
      "name: determinism\n"
      "units: 12\n"
      "emb: 6\n"
      "dropout: 0\n"
      "encoder.depth: 2\n"
      "decoder.depth: 1\n"
      "attention.type: mul\n"
      "train.batch_size: 8\n"
      "train.max_steps: 30\n"
      "train.checkpoint_every: 10\n"
      "train.lr: 0.003\n"
      "val.batch_size: 8\n"
      "beam.max_length: 12\n"
      "data.task: copy\n"
      "data.vocab: 12\n"
      "data.train_pairs: 24\n"
      "data.val_pairs: 6\n"
      "data.min_len: 2\n"
      "data.max_len: 4\n"
      "data.seed: 5\n"
      "seeds: 1,2\n";
  const auto spec = s2s::parse_experiment_text(config);
  const auto first = s2s::run_experiment<float>(spec, dir.path + "/a", 1);
  const auto second = s2s::run_experiment<float>(spec, dir.path + "/b", 2);
  const std::string csv_a = read_file(first.csv_path);
  const std::string csv_b = read_file(second.csv_path);
  require(!csv_a.empty(), "results.csv is empty");
  require(csv_a == csv_b, "two identical sweep runs produced different results.csv bytes");
  return "results.csv byte-identical across reruns (" + std::to_string(csv_a.size()) +
         " bytes)";
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<std::string()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient oracle", criterion_gradients},
      {2, "beam oracle", criterion_beam_oracle},
      {3, "width-1 equals greedy", criterion_width1_greedy},
      {4, "copy task convergence", criterion_copy_task},
      {5, "attention ablation trend", criterion_attention_ablation},
      {6, "residual algebra", criterion_residual_algebra},
      {7, "bleu conformance", criterion_bleu_fixture},
      {8, "bpe round-trip", criterion_bpe_roundtrip},
      {9, "aggregation format", criterion_aggregation_format},
      {10, "sweep determinism", criterion_sweep_determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    std::string detail;
    bool ok = true;
    try {
      detail = c.run();
    } catch (const std::exception& e) {
      ok = false;
      detail = e.what();
      ++failures;
    }
    std::printf("%s %2d %-26s %s\n", ok ? "PASS" : "FAIL", c.id, c.name, detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
