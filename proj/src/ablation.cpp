#include "seqlevel/ablation.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace seqlevel {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string plot_value(double v) { return std::isnan(v) ? "NaN" : fmt(v); }

AblationCell cell(AblationAxis axis, std::string variant, TrainConfig config, Objective init = Objective::kTokLs) {
  return {axis_name(axis), std::move(variant), std::move(config), init};
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r' || c == ',') c = ' ';
  return s;
}

}  // namespace

AblationAxis parse_axis(std::string_view name) {
  if (name == "candidates") return AblationAxis::kCandidates;
  if (name == "strategy") return AblationAxis::kStrategy;
  if (name == "combo") return AblationAxis::kCombo;
  if (name == "init") return AblationAxis::kInit;
  if (name == "online") return AblationAxis::kOnline;
  throw std::invalid_argument("unknown ablation axis: " + std::string(name));
}

std::string axis_name(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::kCandidates: return "candidates";
    case AblationAxis::kStrategy: return "strategy";
    case AblationAxis::kCombo: return "combo";
    case AblationAxis::kInit: return "init";
    case AblationAxis::kOnline: return "online";
  }
  return "?";
}

AblationRow::AblationRow()
    : bleu(kNaN), rouge1(kNaN), rouge2(kNaN), rougeL(kNaN), init_bleu(kNaN), delta_bleu(kNaN) {}

std::vector<AblationCell> ablation_cells(AblationAxis axis, const TrainConfig& base, const AblationGrid& grid) {
  std::vector<AblationCell> out;
  switch (axis) {
    case AblationAxis::kCandidates:
      for (SearchMode mode : grid.modes)
        for (std::size_t k : grid.k) {
          TrainConfig c = base;
          c.generation.mode = mode;
          c.generation.k = k;
          out.push_back(cell(axis, search_mode_name(mode) + "-k" + std::to_string(k), c));
        }
      break;
    case AblationAxis::kStrategy:
      for (SearchMode mode : {SearchMode::kBeam, SearchMode::kSample}) {
        TrainConfig c = base;
        c.generation.mode = mode;
        out.push_back(cell(axis, search_mode_name(mode), c));
      }
      break;
    case AblationAxis::kCombo: {
      const Objective seq = is_token_level(base.objective.objective) ? Objective::kRisk : base.objective.objective;
      for (Combine combine : {Combine::kWeighted, Combine::kConstrained, Combine::kRandom}) {
        TrainConfig c = base;
        c.objective.objective = seq;
        c.objective.combine = combine;
        out.push_back(cell(axis, combine_name(combine), c));
      }
      TrainConfig seq_only = base;
      seq_only.objective.objective = seq;
      seq_only.objective.combine = Combine::kNone;
      out.push_back(cell(axis, objective_name(seq) + "-only", seq_only));
      TrainConfig tok_only = base;
      tok_only.objective.objective = base.objective.token_objective;
      tok_only.objective.combine = Combine::kNone;
      out.push_back(cell(axis, objective_name(base.objective.token_objective) + "-only", tok_only));
      break;
    }
    case AblationAxis::kInit:
      for (Objective init : {Objective::kTokNll, Objective::kTokLs})
        out.push_back(cell(axis, objective_name(init), base, init));
      break;
    case AblationAxis::kOnline:
      for (bool online : {true, false}) {
        TrainConfig c = base;
        c.generation.online = online;
        out.push_back(cell(axis, online ? "online" : "offline", c));
      }
      break;
  }
  return out;
}

std::string cell_log_name(const AblationCell& cell) { return cell.axis + "_" + cell.variant; }

std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& cells, const AblationInputs& inputs,
                                      const AblationOptions& options) {
  if (!inputs.init) throw std::invalid_argument("ablation needs an init checkpoint provider");
  if (inputs.valid.empty()) throw std::invalid_argument("ablation needs a validation set");

  struct Start {
    std::optional<Checkpoint> ckpt;
    double bleu = kNaN;
    std::string error;
  };
  std::map<Objective, Start> starts;
  for (const auto& c : cells) {
    if (starts.count(c.init)) continue;
    Start& s = starts[c.init];
    try {
      s.ckpt = inputs.init(c.init);
      s.bleu = evaluate(s.ckpt->params, inputs.valid, c.config).bleu;
    } catch (const std::exception& e) {
      s.error = std::string("init ") + objective_name(c.init) + ": " + e.what();
    }
  }

  std::vector<AblationRow> rows(cells.size());
  std::mutex progress_mutex;
  auto report = [&](const std::string& line) {
    if (!options.progress) return;
    std::lock_guard lock(progress_mutex);
    options.progress(line);
  };

  auto run_one = [&](std::size_t i) {
    const AblationCell& c = cells[i];
    AblationRow& row = rows[i];
    row.axis = c.axis;
    row.variant = c.variant;
    row.k = c.config.effective().generation.k;
    row.search = search_mode_name(c.config.generation.mode);
    row.objective = c.config.objective.describe();
    row.init = objective_name(c.init);
    row.online = c.config.generation.online;
    const Start& start = starts.at(c.init);
    try {
      if (!start.ckpt) throw std::runtime_error(start.error);
      MetricLog log;
      TrainHooks hooks;
      hooks.log = &log;
      const Checkpoint* baseline = c.config.objective.combine == Combine::kConstrained ? &*start.ckpt : nullptr;
      const PhaseResult result =
          train_sequence(c.config, *start.ckpt, inputs.train, inputs.valid, baseline, std::nullopt, hooks);
      const EvalReport ev = evaluate(result.best.params, inputs.valid, c.config);
      row.bleu = ev.bleu;
      row.rouge1 = ev.rouge1;
      row.rouge2 = ev.rouge2;
      row.rougeL = ev.rougeL;
      row.init_bleu = start.bleu;
      row.delta_bleu = ev.bleu - start.bleu;
      if (!options.log_dir.empty()) log.write(options.log_dir / (cell_log_name(c) + ".csv"));
      report(c.axis + " " + c.variant + " bleu " + fmt(row.bleu) + " delta " + fmt(row.delta_bleu));
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = one_line(e.what());
      report(c.axis + " " + c.variant + " failed: " + row.error);
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, cells.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w)
      workers.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < cells.size();) run_one(i);
      });
    for (auto& t : workers) t.join();
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out =
      "axis,variant,k,search,objective,init,online,bleu,rouge1,rouge2,rougeL,init_bleu,delta_bleu,status,error\n";
  for (const auto& r : rows) {
    out += r.axis + "," + r.variant + "," + std::to_string(r.k) + "," + r.search + "," + r.objective + "," + r.init +
           "," + (r.online ? "true" : "false") + "," + fmt(r.bleu) + "," + fmt(r.rouge1) + "," + fmt(r.rouge2) + "," +
           fmt(r.rougeL) + "," + fmt(r.init_bleu) + "," + fmt(r.delta_bleu) + "," + (r.failed ? "failed" : "ok") + "," +
           r.error + "\n";
  }
  return out;
}

std::string ablation_plot_data(const std::vector<AblationRow>& rows) {
  std::vector<std::string> axes;
  for (const auto& r : rows)
    if (std::find(axes.begin(), axes.end(), r.axis) == axes.end()) axes.push_back(r.axis);

  std::string out;
  for (const auto& axis : axes) {
    if (!out.empty()) out += "\n\n";
    if (axis == axis_name(AblationAxis::kCandidates)) {
      std::map<std::size_t, std::map<std::string, double>> table;
      for (const auto& r : rows)
        if (r.axis == axis) table[r.k][r.search] = r.bleu;
      out += "# candidates: k beam_bleu sample_bleu\n";
      for (const auto& [k, by_mode] : table) {
        auto get = [&](const std::string& m) {
          const auto it = by_mode.find(m);
          return it == by_mode.end() ? kNaN : it->second;
        };
        out += std::to_string(k) + " " + plot_value(get("beam")) + " " + plot_value(get("sample")) + "\n";
      }
    } else {
      out += "# " + axis + ": variant bleu delta_bleu\n";
      for (const auto& r : rows)
        if (r.axis == axis) out += r.variant + " " + plot_value(r.bleu) + " " + plot_value(r.delta_bleu) + "\n";
    }
  }
  return out;
}

std::string summarize_logs(const std::vector<std::pair<std::string, MetricLog>>& logs) {
  std::string out = "run,rows,last_train_loss,best_valid_loss,best_bleu,best_rouge1,best_rouge2,best_rougeL\n";
  for (const auto& [name, log] : logs) {
    double last_train = kNaN, best_loss = kNaN, bleu = kNaN, r1 = kNaN, r2 = kNaN, rl = kNaN;
    auto keep_max = [](double& acc, double v) {
      if (!std::isnan(v) && (std::isnan(acc) || v > acc)) acc = v;
    };
    for (const auto& row : log.rows()) {
      if (row.split == "train") {
        last_train = row.loss;
        continue;
      }
      if (!std::isnan(row.loss) && (std::isnan(best_loss) || row.loss < best_loss)) best_loss = row.loss;
      keep_max(bleu, row.bleu);
      keep_max(r1, row.rouge1);
      keep_max(r2, row.rouge2);
      keep_max(rl, row.rougeL);
    }
    out += name + "," + std::to_string(log.rows().size()) + "," + fmt(last_train) + "," + fmt(best_loss) + "," +
           fmt(bleu) + "," + fmt(r1) + "," + fmt(r2) + "," + fmt(rl) + "\n";
  }
  return out;
}

}  // namespace seqlevel
