#pragma once

// Attention-loss weight sweep: trains one model per grid value on the same
// dataset view, evaluates each closed-loop, and emits a provenance-stamped
// results table.

#include <filesystem>
#include <string>
#include <vector>

#include "agd/data/dataset.hpp"
#include "agd/eval/evaluate.hpp"
#include "agd/train/trainer.hpp"

namespace agd {

// Where and how each swept model is driven after training.
struct SweepEvalSpec {
    TownMap town;
    std::vector<RouteSpec> routes;
    std::vector<std::string> conditions;
    int seeds = 3;
    uint64_t base_seed = 0;
    EvalConfig eval;  // variant/render size are overridden per model config
};

struct SweepRow {
    double lambda_att = 0.0;
    int best_epoch = 0;
    double best_val_action = 0.0;
    double sr_mean = 0.0, sr_std = 0.0;
    double rc_mean = 0.0, rc_std = 0.0;
    double is_mean = 0.0, is_std = 0.0;
    double ds_mean = 0.0, ds_std = 0.0;
    std::string dataset_hash;  // catalog hash of the training view
};

struct SweepTable {
    std::vector<SweepRow> rows;
    std::string to_csv() const;
};

// Trains base-config models with lambda_att set to each grid value (in
// order), evaluates each on the spec's routes, and writes per-value
// artifacts (checkpoints, train log, eval reports) under
// out_dir/lambda_<value>/ plus sweep.csv at the top level.
SweepTable sweep_lambda_att(const DatasetView& view, const TrainConfig& base,
                            const std::vector<double>& grid, const SweepEvalSpec& espec,
                            const std::filesystem::path& out_dir);

}  // namespace agd
