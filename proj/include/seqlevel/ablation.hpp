#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "seqlevel/trainer.hpp"

namespace seqlevel {

enum class AblationAxis { kCandidates, kStrategy, kCombo, kInit, kOnline };

AblationAxis parse_axis(std::string_view name);
std::string axis_name(AblationAxis axis);

struct AblationGrid {
  std::vector<std::size_t> k{2, 5, 16};  // candidates axis
  std::vector<SearchMode> modes{SearchMode::kBeam, SearchMode::kSample};
};

// One grid cell: a sequence-phase run from a token-level checkpoint.
struct AblationCell {
  std::string axis;
  std::string variant;
  TrainConfig config;
  Objective init = Objective::kTokLs;  // token objective of the starting checkpoint
};

struct AblationRow {
  std::string axis;
  std::string variant;
  std::size_t k = 0;
  std::string search;
  std::string objective;  // describe() of the sequence-phase objective
  std::string init;
  bool online = true;
  double bleu, rouge1, rouge2, rougeL;
  double init_bleu;   // the starting checkpoint on the same split
  double delta_bleu;  // bleu - init_bleu
  bool failed = false;
  std::string error;
  AblationRow();
};

// Expands one axis of the grid around base. Combo rows: weighted,
// constrained, random, risk-only, tokls-only. Init rows: the base objective
// from a TokNLL and a TokLS checkpoint.
std::vector<AblationCell> ablation_cells(AblationAxis axis, const TrainConfig& base, const AblationGrid& grid = {});

struct AblationInputs {
  std::vector<SentencePair> train, valid;
  // Token-level checkpoint for the given token objective; called at most once
  // per objective.
  std::function<Checkpoint(Objective)> init;
};

struct AblationOptions {
  std::size_t jobs = 1;
  std::filesystem::path log_dir;  // per-cell metric logs when non-empty
  std::function<void(const std::string&)> progress;
};

// Runs every cell; a cell that throws yields a row marked failed and the
// remaining cells still run. Rows come back in cell order.
std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& cells, const AblationInputs& inputs,
                                      const AblationOptions& options = {});

std::string ablation_csv(const std::vector<AblationRow>& rows);

// Whitespace-separated blocks for gnuplot, one per axis, separated by two
// blank lines. The candidates axis is laid out as "k beam sample".
std::string ablation_plot_data(const std::vector<AblationRow>& rows);

// File stem for a cell's metric log, e.g. "candidates_beam-k5".
std::string cell_log_name(const AblationCell& cell);

// One summary row per metric log: the last train loss and the best
// validation scores. Output depends only on the inputs.
std::string summarize_logs(const std::vector<std::pair<std::string, MetricLog>>& logs);

}  // namespace seqlevel
