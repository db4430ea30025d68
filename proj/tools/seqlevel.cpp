// seqlevel: data generation, training, decoding, scoring and ablation runs.
//
// Exit codes: 0 success, 1 user error (bad flags, missing or malformed
// files), 2 internal error. Failures print a single line to stderr.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "seqlevel/ablation.hpp"
#include "seqlevel/metrics.hpp"

namespace fs = std::filesystem;
using namespace seqlevel;

namespace {

struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

void progress(const std::string& line) { std::cerr << line << "\n"; }

struct DataFiles {
  fs::path dir;
  fs::path source() const { return dir / "source.txt"; }
  fs::path target() const { return dir / "target.txt"; }
  fs::path vocab() const { return dir / "vocab.txt"; }
};

struct Dataset {
  Vocab vocab;
  std::vector<SentencePair> train, valid;
};

Dataset load_data(const fs::path& dir, const TrainConfig& config) {
  const DataFiles f{dir};
  for (const auto& p : {f.source(), f.target(), f.vocab()})
    if (!fs::exists(p)) throw UserError("missing data file " + p.string());
  Dataset d;
  d.vocab = Vocab::load(f.vocab());
  auto all = read_parallel(d.vocab, f.source(), f.target());
  if (all.empty()) throw UserError("empty corpus in " + dir.string());
  std::tie(d.train, d.valid) = split_validation(all, config.valid_fraction, config.seed);
  return d;
}

const std::vector<SentencePair>& pick_split(const Dataset& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "valid") return d.valid;
  throw UserError("unknown split " + split);
}

// Config file (optional) with --set key=value overrides applied on top.
struct ConfigArgs {
  std::string file;
  std::vector<std::string> sets;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", file, "key = value config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", sets, "override one config key (key=value), repeatable");
  }

  TrainConfig load() const {
    ConfigMap m;
    if (!file.empty()) m = read_key_values(file);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UserError("--set expects key=value, got '" + s + "'");
      m[s.substr(0, eq)] = s.substr(eq + 1);
    }
    TrainConfig c = TrainConfig::from_map(m);
    c.validate();
    return c;
  }
};

// An explicit --log wins; otherwise SEQLEVEL_LOG_DIR/<name>.csv when set.
fs::path log_path(const std::string& explicit_path, const std::string& name) {
  if (!explicit_path.empty()) return explicit_path;
  if (const char* dir = std::getenv("SEQLEVEL_LOG_DIR"); dir && *dir) {
    fs::create_directories(dir);
    return fs::path(dir) / (name + ".csv");
  }
  return {};
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

Checkpoint load_for(const std::string& path, const Vocab& vocab) {
  if (!fs::exists(path)) throw UserError("missing checkpoint " + path);
  return load_checkpoint(path, vocab.hash());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UserError("cannot write " + path.string());
  out << text;
  if (!out) throw UserError("failed writing " + path.string());
}

void print_report(const EvalReport& r) {
  std::cout << "sentences " << r.sentences << "\n"
            << "bleu " << fmt(r.bleu) << "\n"
            << "rouge1 " << fmt(r.rouge1) << "\n"
            << "rouge2 " << fmt(r.rouge2) << "\n"
            << "rougeL " << fmt(r.rougeL) << "\n";
}

int run_score(const std::string& ref_path, const std::string& hyp_path, const std::string& metric_name_arg) {
  const MetricKind metric = parse_metric(metric_name_arg);
  const auto refs = read_lines(ref_path);
  const auto hyps = read_lines(hyp_path);
  if (refs.size() != hyps.size()) {
    const std::size_t line = std::min(refs.size(), hyps.size()) + 1;
    throw UserError("files misaligned at line " + std::to_string(line) + ": " + std::to_string(refs.size()) +
                    " reference lines, " + std::to_string(hyps.size()) + " hypothesis lines");
  }
  TokenInterner interner;
  std::vector<TokenSeq> r, h;
  double sum = 0.0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    r.push_back(interner.intern(refs[i]));
    h.push_back(interner.intern(hyps[i]));
    const double s = metric_score(r.back(), h.back(), metric);
    sum += s;
    std::cout << i + 1 << "\t" << fmt(s) << "\n";
  }
  double corpus = 0.0;
  if (metric == MetricKind::kBleu)
    corpus = r.empty() ? 0.0 : corpus_bleu(r, h);
  else
    corpus = r.empty() ? 0.0 : sum / static_cast<double>(r.size());
  std::cout << "corpus\t" << fmt(corpus) << "\n";
  return 0;
}

int run_fixtures(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines[0] != "ref\thyp\tmetric\texpected_score")
    throw UserError(path + ": expected header ref<TAB>hyp<TAB>metric<TAB>expected_score");
  std::size_t failures = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::vector<std::string> cols;
    std::stringstream ss(lines[i]);
    for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
    if (lines[i].ends_with('\t')) cols.emplace_back();
    if (cols.size() != 4) throw UserError(path + " line " + std::to_string(i + 1) + ": expected 4 columns");
    TokenInterner interner;
    const TokenSeq ref = interner.intern(cols[0]);
    const TokenSeq hyp = interner.intern(cols[1]);
    const double got = metric_score(ref, hyp, parse_metric(cols[2]));
    const double want = std::stod(cols[3]);
    const bool ok = std::abs(got - want) <= 1e-6;
    failures += !ok;
    std::cout << i + 1 << "\t" << cols[2] << "\t" << fmt(got) << "\t" << fmt(want) << "\t" << (ok ? "ok" : "MISMATCH")
              << "\n";
  }
  std::cout << "fixtures " << lines.size() - 1 << " mismatches " << failures << "\n";
  return failures ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequence-level training for seq2seq models on small corpora"};
  app.require_subcommand(1);

  // make-data
  auto* make_data = app.add_subcommand("make-data", "generate a synthetic parallel corpus");
  std::string task = "copy", out_dir;
  std::size_t count = 1000, vocab_size = 30, min_len = 1, max_len = 12;
  double p_sub = 0.1;
  std::uint64_t data_seed = 1;
  make_data->add_option("--task", task, "copy, noisy_copy or reverse")->capture_default_str();
  make_data->add_option("--count", count, "number of pairs")->capture_default_str();
  make_data->add_option("--vocab-size", vocab_size, "vocabulary size including reserved symbols")
      ->capture_default_str();
  make_data->add_option("--p-sub", p_sub, "noisy_copy substitution rate")->capture_default_str();
  make_data->add_option("--min-len", min_len)->capture_default_str();
  make_data->add_option("--max-len", max_len)->capture_default_str();
  make_data->add_option("--seed", data_seed)->capture_default_str();
  make_data->add_option("--out", out_dir, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "token-level training from scratch");
  ConfigArgs train_cfg;
  std::string data_dir, out_ckpt, log_file;
  train->add_option("--data", data_dir, "corpus directory from make-data")->required();
  train->add_option("--out", out_ckpt, "checkpoint to write (best validation loss)")->required();
  train->add_option("--log", log_file, "metric log CSV");
  train_cfg.add_to(train);

  // finetune
  auto* finetune = app.add_subcommand("finetune", "sequence-level training from a token-level checkpoint");
  ConfigArgs finetune_cfg;
  std::string init_ckpt, baseline_ckpt, cache_file;
  finetune->add_option("--data", data_dir)->required();
  finetune->add_option("--init", init_ckpt, "starting checkpoint")->required();
  finetune->add_option("--baseline", baseline_ckpt, "baseline for the constrained combination (default: --init)");
  finetune->add_option("--cache", cache_file, "offline candidate cache (built from --init when absent)");
  finetune->add_option("--out", out_ckpt, "checkpoint to write (best validation metric)")->required();
  finetune->add_option("--log", log_file, "metric log CSV");
  finetune_cfg.add_to(finetune);

  // generate
  auto* generate_cmd = app.add_subcommand("generate", "write candidate sets for a split");
  ConfigArgs generate_cfg;
  std::string ckpt_file, gen_split = "train", out_file;
  generate_cmd->add_option("--data", data_dir)->required();
  generate_cmd->add_option("--ckpt", ckpt_file)->required();
  generate_cmd->add_option("--split", gen_split, "train or valid")->capture_default_str();
  generate_cmd->add_option("--out", out_file, "cache file (stdout when omitted)");
  generate_cfg.add_to(generate_cmd);

  // score
  auto* score = app.add_subcommand("score", "sentence and corpus scores for line-aligned files");
  std::string ref_file, hyp_file, metric = "bleu", fixtures;
  score->add_option("--ref", ref_file)->check(CLI::ExistingFile);
  score->add_option("--hyp", hyp_file)->check(CLI::ExistingFile);
  score->add_option("--metric", metric, "bleu, rouge1, rouge2 or rougeL")
      ->capture_default_str()
      ->check(CLI::IsMember({"bleu", "rouge1", "rouge2", "rougeL"}));
  score->add_option("--fixtures", fixtures, "replay a ref/hyp/metric/expected TSV")->check(CLI::ExistingFile);

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "beam-decode a split and report BLEU/ROUGE");
  ConfigArgs evaluate_cfg;
  std::string hyp_out, eval_split = "valid";
  evaluate_cmd->add_option("--data", data_dir)->required();
  evaluate_cmd->add_option("--ckpt", ckpt_file)->required();
  evaluate_cmd->add_option("--split", eval_split, "train or valid")->capture_default_str();
  evaluate_cmd->add_option("--hyp-out", hyp_out, "write decoded hypotheses");
  evaluate_cfg.add_to(evaluate_cmd);

  // ablate
  auto* ablate = app.add_subcommand("ablate", "run an ablation grid");
  ConfigArgs ablate_cfg;
  std::vector<std::string> axes;
  std::vector<std::size_t> grid_k{2, 5, 16};
  std::string init_tokls, init_toknll, plot_file, log_dir;
  std::size_t jobs = 1;
  ablate->add_option("--data", data_dir)->required();
  ablate->add_option("--axis", axes, "candidates, strategy, combo, init, online (repeatable)")
      ->required()
      ->check(CLI::IsMember({"candidates", "strategy", "combo", "init", "online"}));
  ablate->add_option("--grid", grid_k, "candidate set sizes for the candidates axis")->delimiter(',');
  ablate->add_option("--init", init_tokls, "TokLS checkpoint (trained when absent)");
  ablate->add_option("--init-toknll", init_toknll, "TokNLL checkpoint (trained when absent)");
  ablate->add_option("--out", out_file, "CSV report")->required();
  ablate->add_option("--plot", plot_file, "gnuplot data file");
  ablate->add_option("--log-dir", log_dir, "per-cell metric logs (default SEQLEVEL_LOG_DIR)");
  ablate->add_option("--jobs", jobs, "cells run in parallel")->capture_default_str()->check(CLI::PositiveNumber);
  ablate_cfg.add_to(ablate);

  // report
  auto* report = app.add_subcommand("report", "summarize metric logs into one CSV");
  std::vector<std::string> logs;
  report->add_option("--log", logs, "metric log CSVs (repeatable)")->required()->check(CLI::ExistingFile);
  report->add_option("--out", out_file, "CSV (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*make_data) {
      if (count == 0) throw UserError("empty corpus: --count must be positive");
      const Vocab vocab = Vocab::synthetic(vocab_size);
      const auto pairs = gen_synthetic({parse_task(task), p_sub, min_len, max_len}, count, vocab, data_seed);
      const DataFiles f{out_dir};
      fs::create_directories(f.dir);
      write_parallel(vocab, pairs, f.source(), f.target());
      vocab.save(f.vocab());
      std::cout << "wrote " << pairs.size() << " pairs to " << f.dir.string() << "\n";
    } else if (*train) {
      const TrainConfig c = train_cfg.load();
      const Dataset d = load_data(data_dir, c);
      MetricLog log;
      TrainHooks hooks{&log, progress, {}};
      const PhaseResult r = train_token(c, d.vocab.hash(), d.vocab.size(), d.train, d.valid, hooks);
      save_checkpoint(r.best, out_ckpt);
      if (const auto lp = log_path(log_file, stem_of(out_ckpt)); !lp.empty()) log.write(lp);
      std::cout << "best epoch " << r.best.epoch << " of " << r.last.epoch << "\n";
    } else if (*finetune) {
      const TrainConfig c = finetune_cfg.load();
      const Dataset d = load_data(data_dir, c);
      const Checkpoint init = load_for(init_ckpt, d.vocab);
      std::optional<Checkpoint> baseline;
      if (c.objective.combine == Combine::kConstrained)
        baseline = baseline_ckpt.empty() ? init : load_for(baseline_ckpt, d.vocab);
      std::optional<CandidateCache> cache;
      if (!cache_file.empty()) {
        if (c.generation.online) throw UserError("--cache needs online = false");
        cache = CandidateCache::load(cache_file);
      }
      MetricLog log;
      TrainHooks hooks{&log, progress, {}};
      const PhaseResult r =
          train_sequence(c, init, d.train, d.valid, baseline ? &*baseline : nullptr, std::move(cache), hooks);
      save_checkpoint(r.best, out_ckpt);
      if (const auto lp = log_path(log_file, stem_of(out_ckpt)); !lp.empty()) log.write(lp);
      std::cout << "best epoch " << r.best.epoch << " of " << r.last.epoch << ", skipped " << r.skipped
                << ", generation calls " << r.generation_calls << "\n";
    } else if (*generate_cmd) {
      const TrainConfig c = generate_cfg.load().effective();
      const Dataset d = load_data(data_dir, c);
      const Checkpoint ckpt = load_for(ckpt_file, d.vocab);
      const CandidateCache cache = build_cache(ckpt.params, pick_split(d, gen_split), c.generation);
      if (out_file.empty())
        std::cout << cache.to_string();
      else
        cache.save(out_file);
    } else if (*score) {
      if (!fixtures.empty()) return run_fixtures(fixtures);
      if (ref_file.empty() || hyp_file.empty()) throw UserError("score needs --ref and --hyp, or --fixtures");
      return run_score(ref_file, hyp_file, metric);
    } else if (*evaluate_cmd) {
      const TrainConfig c = evaluate_cfg.load();
      const Dataset d = load_data(data_dir, c);
      const Checkpoint ckpt = load_for(ckpt_file, d.vocab);
      const EvalReport r = evaluate(ckpt.params, pick_split(d, eval_split), c);
      print_report(r);
      if (!hyp_out.empty()) {
        std::vector<std::string> lines;
        for (const auto& h : r.hypotheses) lines.push_back(decode_ids(d.vocab, h));
        write_lines(hyp_out, lines);
      }
    } else if (*ablate) {
      const TrainConfig c = ablate_cfg.load();
      const Dataset d = load_data(data_dir, c);
      AblationInputs inputs;
      inputs.train = d.train;
      inputs.valid = d.valid;
      inputs.init = [&](Objective tok) {
        const std::string& path = tok == Objective::kTokNll ? init_toknll : init_tokls;
        if (!path.empty()) return load_for(path, d.vocab);
        progress("training " + objective_name(tok) + " initialization");
        TrainConfig tc = c;
        tc.objective.token_objective = tok;
        return train_token(tc, d.vocab.hash(), d.vocab.size(), d.train, d.valid, {nullptr, progress, {}}).best;
      };
      AblationGrid grid;
      grid.k = grid_k;
      std::vector<AblationCell> cells;
      for (const auto& a : axes) {
        auto more = ablation_cells(parse_axis(a), c, grid);
        cells.insert(cells.end(), more.begin(), more.end());
      }
      AblationOptions opt;
      opt.jobs = jobs;
      opt.progress = progress;
      if (!log_dir.empty()) {
        opt.log_dir = log_dir;
      } else if (const char* env = std::getenv("SEQLEVEL_LOG_DIR"); env && *env) {
        opt.log_dir = env;
      }
      if (!opt.log_dir.empty()) fs::create_directories(opt.log_dir);
      const auto rows = run_ablation(cells, inputs, opt);
      write_text(out_file, ablation_csv(rows));
      if (!plot_file.empty()) write_text(plot_file, ablation_plot_data(rows));
      std::size_t failed = 0;
      for (const auto& r : rows) failed += r.failed;
      std::cout << rows.size() << " cells, " << failed << " failed\n";
    } else if (*report) {
      std::vector<std::pair<std::string, MetricLog>> parsed;
      for (const auto& l : logs) parsed.emplace_back(stem_of(l), MetricLog::read(l));
      const std::string csv = summarize_logs(parsed);
      if (out_file.empty())
        std::cout << csv;
      else
        write_text(out_file, csv);
    }
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
