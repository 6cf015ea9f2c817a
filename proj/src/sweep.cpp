#include "agd/train/sweep.hpp"

#include <fstream>
#include <sstream>

#include "agd/model/policy.hpp"

namespace agd {

namespace {

std::string lambda_dir_name(double lambda) {
    std::ostringstream os;
    os << "lambda_" << lambda;  // %g-style shortest form, unique per grid value
    return os.str();
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write " + p.string());
    f << text;
}

}  // namespace

std::string SweepTable::to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "lambda_att,best_epoch,best_val_action,sr_mean,sr_std,rc_mean,rc_std,"
          "is_mean,is_std,ds_mean,ds_std,dataset_hash\n";
    for (const SweepRow& r : rows) {
        os << r.lambda_att << "," << r.best_epoch << "," << r.best_val_action << ","
           << r.sr_mean << "," << r.sr_std << "," << r.rc_mean << "," << r.rc_std << ","
           << r.is_mean << "," << r.is_std << "," << r.ds_mean << "," << r.ds_std << ","
           << r.dataset_hash << "\n";
    }
    return os.str();
}

SweepTable sweep_lambda_att(const DatasetView& view, const TrainConfig& base,
                            const std::vector<double>& grid, const SweepEvalSpec& espec,
                            const std::filesystem::path& out_dir) {
    if (grid.empty()) throw ConfigError("sweep: empty lambda grid");
    std::filesystem::create_directories(out_dir);

    SweepTable table;
    for (double lambda : grid) {
        TrainConfig cfg = base;
        cfg.loss.lambda_att = lambda;
        const std::filesystem::path dir = out_dir / lambda_dir_name(lambda);
        TrainResult tr = train(view, cfg, dir);

        DrivingPolicy<float> policy = DrivingPolicy<float>::load(tr.best_checkpoint);
        EvalConfig ec = espec.eval;
        ec.variant = cfg.variant;
        ec.corrupted_masks = cfg.corrupted_masks;
        ec.render_width = cfg.model.width;
        ec.render_height = cfg.model.height;
        EvalReport rep = evaluate(&policy, espec.town, espec.routes, espec.seeds,
                                  espec.base_seed, espec.conditions, ec);
        write_text(dir / "report.csv", rep.to_csv());
        write_text(dir / "report.json", rep.to_json().dump(2) + "\n");

        SweepRow row;
        row.lambda_att = lambda;
        row.best_epoch = tr.best_epoch;
        row.best_val_action = tr.best_val_action;
        row.sr_mean = rep.aggregate.sr_mean;
        row.sr_std = rep.aggregate.sr_std;
        row.rc_mean = rep.aggregate.rc_mean;
        row.rc_std = rep.aggregate.rc_std;
        row.is_mean = rep.aggregate.is_mean;
        row.is_std = rep.aggregate.is_std;
        row.ds_mean = rep.aggregate.ds_mean;
        row.ds_std = rep.aggregate.ds_std;
        row.dataset_hash = view.catalog_hash;
        table.rows.push_back(row);
    }
    write_text(out_dir / "sweep.csv", table.to_csv());
    return table;
}

}  // namespace agd
