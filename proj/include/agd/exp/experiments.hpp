#pragma once

// Composed end-to-end experiments behind the `repro` subcommand:
//  - low-data grid: collect a pool once, train {budget x lambda_att} models
//    on shared subsets, drive each on held-out town/conditions, tabulate.
//  - guidance-weight sweep: the lambda_att grid at one budget.
// Both write provenance manifests at every artifact directory.

#include <filesystem>
#include <string>
#include <vector>

#include "agd/train/sweep.hpp"

namespace agd {

struct LowDataConfig {
    // data collection (training town)
    std::string train_town_fixture;
    int pool_busy = 21, pool_empty = 15;  // episodes per density (~57% busy)
    int episode_steps = 1000;
    std::vector<std::string> collect_conditions = {"clear-day", "sunset", "rain-noise", "wet"};
    uint64_t collect_seed = 9000;
    int width = 48, height = 48;

    // training grid
    std::vector<long> budgets = {8000, 32000};  // dataset sizes in steps
    std::vector<int> epochs = {16, 6};          // aligned with budgets
    std::vector<double> lambdas = {0.0, 10.0};
    double lr = 5e-4;
    int batch_size = 64;
    double val_split = 0.125;
    uint64_t train_seed = 1;
    uint64_t subset_seed = 77;  // the same subset per budget is shared by all lambdas
    ModelConfig model;

    // held-out closed-loop evaluation
    std::string eval_town_fixture;
    std::string eval_routes_file;
    std::vector<std::string> eval_conditions = {"soft-rain-sunset", "wet-sunset"};
    int eval_seeds = 3;
    uint64_t eval_base_seed = 500;
    EvalConfig eval;

    LowDataConfig() {
        model.width = width;
        model.height = height;
    }
    void validate() const;
};

struct LowDataCell {
    long budget = 0;
    double lambda_att = 0.0;
    int best_epoch = 0;
    double best_val_action = 0.0;
    double sr_mean = 0.0, sr_std = 0.0;
    double rc_mean = 0.0, rc_std = 0.0;
    double is_mean = 0.0, is_std = 0.0;
    double ds_mean = 0.0, ds_std = 0.0;
    std::string dataset_hash;  // subset catalog hash (same for all lambdas at a budget)
    double train_wall_s = 0.0, eval_wall_s = 0.0;
};

struct LowDataResult {
    std::vector<LowDataCell> cells;  // budget-major, lambda order within
    std::string pool_hash;
    std::string to_csv() const;

    const LowDataCell& cell(long budget, double lambda) const;
};

// Runs the full grid under out_dir: data/ (pool), b<budget>_l<lambda>/ per
// cell, lowdata.csv + manifest.json at the top. An existing pool with the
// expected episode count is reused (collection is deterministic, so a reused
// pool is byte-identical to a fresh one); anything else is recollected.
LowDataResult run_lowdata(const LowDataConfig& cfg, const std::filesystem::path& out_dir);

struct SweepReproConfig {
    LowDataConfig base;  // pool + training + eval settings come from here
    long budget = 8000;
    std::vector<double> grid = {0.1, 0.25, 0.5, 1.0, 2.5, 5.0, 10.0};
};

// Collects (or reuses) the pool, samples one subset at cfg.budget, and runs
// sweep_lambda_att over cfg.grid. Writes sweep artifacts + manifest under
// out_dir.
SweepTable run_sweep_repro(const SweepReproConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace agd
