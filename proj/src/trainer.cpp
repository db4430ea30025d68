#include "seqlevel/trainer.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "seqlevel/metrics.hpp"

namespace seqlevel {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Salts for the per-epoch random streams.
constexpr std::uint64_t kBatchSalt = 0xba7c;
constexpr std::uint64_t kDropoutSalt = 0xd209;
constexpr std::uint64_t kCoinSalt = 0xc014;
constexpr std::uint64_t kInitSalt = 0x1417;

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_cell(const std::string& s) {
  if (s.empty()) return kNaN;
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw std::runtime_error("bad number in log: " + s);
  return v;
}

Checkpoint snapshot(const TrainConfig& cfg, std::uint64_t vocab_hash, const Params& params, const Params& velocity,
                    std::size_t epoch, const std::string& phase, double lr, const std::vector<double>& history) {
  Checkpoint c;
  c.config_echo = cfg.to_string();
  c.vocab_hash = vocab_hash;
  c.params = params;
  c.velocity = velocity;
  c.epoch = epoch;
  c.phase = phase;
  c.lr = lr;
  c.valid_history = history;
  return c;
}

double selection_score(const EvalReport& r, MetricKind metric) {
  switch (metric) {
    case MetricKind::kBleu: return r.bleu;
    case MetricKind::kRouge1: return r.rouge1;
    case MetricKind::kRouge2: return r.rouge2;
    case MetricKind::kRougeL: return r.rougeL;
  }
  return r.bleu;
}

void fill_metrics(LogRow& row, const EvalReport& r) {
  row.bleu = r.bleu;
  row.rouge1 = r.rouge1;
  row.rouge2 = r.rouge2;
  row.rougeL = r.rougeL;
}

// Decides the learning rate for the epoch after `epoch`; nullopt stops.
std::optional<double> next_lr(const TrainConfig& cfg, std::size_t epoch, std::size_t fixed_epochs, bool anneal_on,
                              double lr) {
  if (epoch < fixed_epochs) return lr;
  if (!anneal_on) return std::nullopt;
  const double next = anneal(lr, cfg.anneal_factor);
  if (next < cfg.min_lr) return std::nullopt;
  return next;
}

bool decode_due(const TrainConfig& cfg, std::size_t epoch, bool last) {
  return last || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0);
}

void report(const TrainHooks& hooks, const std::string& line) {
  if (hooks.progress) hooks.progress(line);
}

}  // namespace

double renorm_grads(Gradients& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (!std::isfinite(norm)) throw std::runtime_error("non-finite gradient norm");
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grads.flat()) g *= scale;
  }
  return norm;
}

void nesterov_step(Params& params, Params& velocity, const Gradients& grads, double lr, double momentum) {
  if (params.size() != grads.size() || params.size() != velocity.size())
    throw std::invalid_argument("nesterov_step: shape mismatch");
  auto p = params.flat();
  auto v = velocity.flat();
  const auto g = grads.flat();
  for (std::size_t i = 0; i < p.size(); ++i) {
    v[i] = momentum * v[i] - lr * g[i];
    p[i] += momentum * v[i] - lr * g[i];
  }
}

double anneal(double lr, double factor) { return lr / factor; }

LogRow::LogRow() : bleu(kNaN), rouge1(kNaN), rouge2(kNaN), rougeL(kNaN) {}

std::string MetricLog::to_csv() const {
  std::string out = std::string(kHeader) + "\n";
  for (const auto& r : rows_) {
    out += std::to_string(r.epoch) + "," + r.phase + "," + r.split + "," + r.objective + "," + fmt(r.loss) + "," +
           fmt(r.bleu) + "," + fmt(r.rouge1) + "," + fmt(r.rouge2) + "," + fmt(r.rougeL) + "," + fmt(r.lr) + "," +
           std::to_string(r.skipped) + "\n";
  }
  return out;
}

void MetricLog::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_csv();
}

MetricLog MetricLog::parse_csv(std::istream& in) {
  MetricLog log;
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw std::runtime_error("metric log: unexpected header");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 11) throw std::runtime_error("metric log line " + std::to_string(line_no) + ": expected 11 cells");
    LogRow r;
    r.epoch = std::stoul(cells[0]);
    r.phase = cells[1];
    r.split = cells[2];
    r.objective = cells[3];
    r.loss = parse_cell(cells[4]);
    r.bleu = parse_cell(cells[5]);
    r.rouge1 = parse_cell(cells[6]);
    r.rouge2 = parse_cell(cells[7]);
    r.rougeL = parse_cell(cells[8]);
    r.lr = parse_cell(cells[9]);
    r.skipped = std::stoul(cells[10]);
    log.add(r);
  }
  return log;
}

MetricLog MetricLog::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_csv(in);
}

EvalReport evaluate(const Params& params, const std::vector<SentencePair>& pairs, std::size_t k, std::size_t max_len,
                    bool normalize) {
  if (pairs.empty()) throw std::invalid_argument("empty evaluation set");
  EvalReport r;
  std::vector<TokenSeq> refs;
  refs.reserve(pairs.size());
  for (const auto& p : pairs) {
    const auto hyps = beam_search(params, p.source, k, max_len, normalize);
    TokenSeq best = hyps.empty() ? TokenSeq{} : strip_eos(hyps.front().tokens);
    refs.push_back(strip_eos(p.target));
    r.rouge1 += rouge(refs.back(), best, MetricKind::kRouge1);
    r.rouge2 += rouge(refs.back(), best, MetricKind::kRouge2);
    r.rougeL += rouge(refs.back(), best, MetricKind::kRougeL);
    r.hypotheses.push_back(std::move(best));
  }
  const double n = static_cast<double>(pairs.size());
  r.rouge1 /= n;
  r.rouge2 /= n;
  r.rougeL /= n;
  r.bleu = corpus_bleu(refs, r.hypotheses);
  r.sentences = pairs.size();
  return r;
}

EvalReport evaluate(const Params& params, const std::vector<SentencePair>& pairs, const TrainConfig& config) {
  const TrainConfig c = config.effective();
  return evaluate(params, pairs, c.eval_k, c.eval_max_len, c.eval_normalize);
}

TokenEval token_eval(const Params& params, const std::vector<SentencePair>& pairs, Objective token_objective,
                     const LossConfig& loss) {
  if (pairs.empty()) throw std::invalid_argument("empty evaluation set");
  TokenEval out;
  std::size_t tokens = 0, correct = 0;
  for (const auto& p : pairs) {
    ForwardPass pass(params, p.source);
    const std::size_t idx = pass.add(p.target);
    std::vector<Eigen::VectorXd> lps;
    for (std::size_t i = 0; i < p.target.size(); ++i) {
      lps.push_back(pass.step_log_probs(idx, i));
      Eigen::Index arg = 0;
      lps.back().maxCoeff(&arg);
      correct += arg == p.target[i];
    }
    out.loss += token_loss(token_objective, lps, p.target, loss).value;
    tokens += p.target.size();
  }
  out.loss /= static_cast<double>(tokens);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(tokens);
  return out;
}

PhaseResult train_token(const TrainConfig& config, std::uint64_t vocab_hash, std::size_t vocab_size,
                        const std::vector<SentencePair>& train, const std::vector<SentencePair>& valid,
                        const TrainHooks& hooks) {
  const TrainConfig cfg = config.effective();
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("empty training set");
  const ModelDims dims{vocab_size, cfg.dim};
  Params params = Params::random(dims, mix_seed(cfg.seed, kInitSalt));
  Params velocity(dims);
  Gradients grads(dims);

  ObjectiveSpec spec = cfg.objective;
  spec.objective = spec.token_objective;
  spec.combine = Combine::kNone;
  const std::string name = objective_name(spec.objective);

  PhaseResult result;
  std::vector<double> history;
  double best_loss = std::numeric_limits<double>::infinity();
  double lr = cfg.lr;
  Checkpoint last_good = snapshot(cfg, vocab_hash, params, velocity, 0, "token", lr, history);
  result.best = last_good;

  for (std::size_t epoch = 1; lr >= cfg.min_lr; ++epoch) {
    Rng dropout_rng(mix_seed(cfg.seed, epoch, kDropoutSalt));
    ExampleContext ctx;
    if (cfg.dropout > 0.0) ctx.dropout = Dropout{cfg.dropout, &dropout_rng};
    double loss_sum = 0.0;
    std::size_t tokens = 0;
    for (const auto& batch : batch_by_tokens(train, cfg.max_tokens, mix_seed(cfg.seed, epoch, kBatchSalt))) {
      grads.set_zero();
      ctx.token_scale = 1.0 / static_cast<double>(batch.target_tokens);
      double batch_loss = 0.0;
      for (const auto& pair : batch.pairs) batch_loss += example_loss(params, pair, spec, ctx, &grads).value;
      if (!std::isfinite(batch_loss) || !grads.all_finite())
        throw TrainingDiverged("token phase diverged in epoch " + std::to_string(epoch), last_good);
      renorm_grads(grads, cfg.max_grad_norm);
      nesterov_step(params, velocity, grads, lr, cfg.momentum);
      loss_sum += batch_loss;
      tokens += batch.target_tokens;
    }
    if (!params.all_finite()) throw TrainingDiverged("token phase diverged in epoch " + std::to_string(epoch), last_good);

    const auto next = next_lr(cfg, epoch, cfg.token_epochs, true, lr);
    LogRow row;
    row.epoch = epoch;
    row.phase = "token";
    row.objective = name;
    row.lr = lr;
    row.split = "train";
    row.loss = loss_sum / static_cast<double>(tokens);
    if (hooks.log) hooks.log->add(row);

    const TokenEval te = valid.empty() ? TokenEval{row.loss, 0.0}
                                       : token_eval(params, valid, spec.token_objective, spec.loss);
    history.push_back(te.loss);
    last_good = snapshot(cfg, vocab_hash, params, velocity, epoch, "token", lr, history);
    if (te.loss < best_loss) {
      best_loss = te.loss;
      result.best = last_good;
    }
    row.split = "valid";
    row.loss = te.loss;
    if (!valid.empty() && decode_due(cfg, epoch, !next)) fill_metrics(row, evaluate(params, valid, cfg));
    if (hooks.log) hooks.log->add(row);
    report(hooks, "token epoch " + std::to_string(epoch) + " lr " + fmt(lr) + " train " + fmt(loss_sum / tokens) +
                      " valid " + fmt(te.loss) + " acc " + fmt(te.accuracy) +
                      (std::isnan(row.bleu) ? "" : " bleu " + fmt(row.bleu)));
    if (!next) break;
    lr = *next;
  }
  result.last = last_good;
  return result;
}

PhaseResult train_sequence(const TrainConfig& config, const Checkpoint& init, const std::vector<SentencePair>& train,
                           const std::vector<SentencePair>& valid, const Checkpoint* baseline,
                           std::optional<CandidateCache> cache, const TrainHooks& hooks) {
  const TrainConfig cfg = config.effective();
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("empty training set");
  const ObjectiveSpec& spec = cfg.objective;
  const bool constrained = spec.combine == Combine::kConstrained;
  if (constrained && baseline == nullptr)
    throw std::invalid_argument("constrained combination needs a baseline checkpoint");
  if (constrained && baseline->params.dims() != init.params.dims())
    throw std::invalid_argument("baseline checkpoint shape differs from the initial checkpoint");

  const ModelDims dims = init.params.dims();
  Params params = init.params;
  Params velocity(dims);
  Gradients grads(dims);

  std::optional<CandidateProvider> provider;
  if (spec.needs_candidates()) {
    if (!cfg.generation.online && !cache) cache = build_cache(params, train, cfg.generation);
    provider.emplace(cfg.generation, std::move(cache));
  }
  std::vector<double> baseline_values;
  if (constrained) {
    baseline_values.reserve(train.size());
    for (const auto& pair : train)
      baseline_values.push_back(reference_token_loss(baseline->params, pair, spec.token_objective, spec.loss));
  }

  const std::string name = spec.describe();
  PhaseResult result;
  std::vector<double> history;
  double best_score = -std::numeric_limits<double>::infinity();
  double lr = cfg.lr;
  Checkpoint last_good = snapshot(cfg, init.vocab_hash, params, velocity, 0, "sequence", lr, history);
  result.best = last_good;
  std::size_t batches_seen = 0;

  for (std::size_t epoch = 1; lr >= cfg.min_lr; ++epoch) {
    Rng dropout_rng(mix_seed(cfg.seed, epoch, kDropoutSalt));
    Rng coin(mix_seed(cfg.seed, epoch, kCoinSalt));
    double loss_sum = 0.0;
    std::size_t examples = 0, skipped = 0;
    for (const auto& batch : batch_by_tokens(train, cfg.max_tokens, mix_seed(cfg.seed, epoch, kBatchSalt))) {
      if (provider && !cfg.generation.online && cfg.generation.refresh_every > 0 && batches_seen > 0 &&
          batches_seen % cfg.generation.refresh_every == 0)
        provider->refresh(params, train);
      ++batches_seen;
      grads.set_zero();
      ExampleContext ctx;
      if (cfg.dropout > 0.0) ctx.dropout = Dropout{cfg.dropout, &dropout_rng};
      ctx.token_scale = 1.0 / static_cast<double>(batch.target_tokens);
      ctx.sequence_scale = 1.0 / static_cast<double>(batch.pairs.size());
      double batch_loss = 0.0;
      for (std::size_t j = 0; j < batch.pairs.size(); ++j) {
        const auto& pair = batch.pairs[j];
        const std::size_t id = batch.indices[j];
        std::vector<TokenSeq> cands;
        if (provider) {
          cands = provider->tokens(params, id, pair.source, epoch);
          ctx.candidates = &cands;
        }
        if (constrained) ctx.baseline_token_loss = baseline_values[id];
        ctx.pick_sequence = coin.uniform() < 0.5;
        const auto out = example_loss(params, pair, spec, ctx, &grads);
        if (out.skipped) {
          ++skipped;
          continue;
        }
        if (out.branch == Branch::kSequence) ++result.branch_sequence;
        if (out.branch == Branch::kToken) ++result.branch_token;
        if (constrained && hooks.on_constrained)
          hooks.on_constrained(out.branch, *out.token_value <= *ctx.baseline_token_loss);
        batch_loss += out.value;
        ++examples;
      }
      if (!std::isfinite(batch_loss) || !grads.all_finite())
        throw TrainingDiverged("sequence phase diverged in epoch " + std::to_string(epoch), last_good);
      renorm_grads(grads, cfg.max_grad_norm);
      nesterov_step(params, velocity, grads, lr, cfg.momentum);
      loss_sum += batch_loss;
    }
    if (!params.all_finite())
      throw TrainingDiverged("sequence phase diverged in epoch " + std::to_string(epoch), last_good);
    result.skipped += skipped;
    if (static_cast<double>(skipped) > 0.01 * static_cast<double>(train.size()))
      throw std::runtime_error("skipped " + std::to_string(skipped) + " of " + std::to_string(train.size()) +
                               " examples in epoch " + std::to_string(epoch) + " (limit 1%)");

    const auto next = next_lr(cfg, epoch, cfg.seq_epochs, cfg.anneal_sequence, lr);
    LogRow row;
    row.epoch = epoch;
    row.phase = "sequence";
    row.objective = name;
    row.lr = lr;
    row.skipped = skipped;
    row.split = "train";
    row.loss = examples ? loss_sum / static_cast<double>(examples) : kNaN;
    const double train_loss = row.loss;
    if (hooks.log) hooks.log->add(row);

    row.split = "valid";
    row.loss = valid.empty() ? kNaN : token_eval(params, valid, spec.token_objective, spec.loss).loss;
    bool improved = false;
    if (!valid.empty() && decode_due(cfg, epoch, !next)) {
      const EvalReport ev = evaluate(params, valid, cfg);
      fill_metrics(row, ev);
      const double score = selection_score(ev, spec.loss.metric);
      history.push_back(score);
      improved = score > best_score;
      if (improved) best_score = score;
    }
    last_good = snapshot(cfg, init.vocab_hash, params, velocity, epoch, "sequence", lr, history);
    if (improved || valid.empty()) result.best = last_good;
    if (hooks.log) hooks.log->add(row);
    report(hooks, "sequence epoch " + std::to_string(epoch) + " lr " + fmt(lr) + " train " + fmt(train_loss) +
                      " skipped " + std::to_string(skipped) +
                      (std::isnan(row.bleu) ? "" : " bleu " + fmt(row.bleu)));
    if (!next) break;
    lr = *next;
  }
  if (provider) result.generation_calls = provider->generation_calls();
  result.last = last_good;
  return result;
}

}  // namespace seqlevel
