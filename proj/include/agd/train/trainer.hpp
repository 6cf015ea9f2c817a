#pragma once

// Mini-batch imitation learning over a dataset view: seeded epoch loop,
// weighted L1 action regression plus the attention-guidance term, per-epoch
// checkpoints, and best-model selection by held-out validation action loss.
//
// Training runs in float32 on a single thread with a fixed batch order per
// seed, so two runs with the same configuration produce bit-identical
// checkpoints.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "agd/data/dataset.hpp"
#include "agd/loss/losses.hpp"
#include "agd/model/config.hpp"
#include "agd/model/variant.hpp"
#include "agd/util/kv_config.hpp"

namespace agd {

struct TrainConfig {
    int epochs = 40;
    int batch_size = 64;
    double lr = 1e-4;
    LossConfig loss;  // lambda_att defaults to 10 (the adopted guidance weight)
    ModelConfig model;
    InputVariant variant = InputVariant::None;
    bool corrupted_masks = false;  // mask source: false = clean, true = corrupted
    uint64_t seed = 1;
    double val_split = 0.1;

    TrainConfig() { loss.lambda_att = 10.0; }

    // True when any stage of training consumes masks (as loss target or as
    // model input).
    bool needs_masks() const {
        return loss.lambda_att > 0.0 || variant != InputVariant::None;
    }

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (lr <= 0) throw ConfigError("lr must be positive");
        if (!(val_split > 0.0 && val_split < 1.0))
            throw ConfigError("val_split must lie in (0,1)");
        loss.validate();
        model.validate();
        const int want = variant == InputVariant::SM ? 4 : 3;
        if (model.channels != want)
            throw ConfigError(std::string("variant ") + variant_name(variant) + " needs " +
                              std::to_string(want) + " input channels, config has " +
                              std::to_string(model.channels));
    }

    // Flat key=value representation; unknown keys in `kv` are rejected so
    // typos cannot silently fall back to defaults.
    static TrainConfig from_kv(const KvConfig& kv);
    KvConfig to_kv() const;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_action = 0.0;
    double train_attention = 0.0;
    double train_total = 0.0;
    double val_action = 0.0;
    double wall_s = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    std::string to_csv() const;  // header + one row per epoch
};

struct TrainResult {
    std::filesystem::path best_checkpoint;  // copy of the selected epoch file
    int best_epoch = 0;                     // 1-based
    double best_val_action = 0.0;
    TrainLog log;
};

// Trains on `data`, writing per-epoch checkpoints (epoch_NNN.ckpt), the
// selected checkpoint (best.ckpt), and train_log.csv into out_dir. The
// validation split is episode-level (train and validation frames never share
// an episode); a single-episode view falls back to a frame-level split so
// tiny overfit fixtures remain usable. Raises ConfigError before any work
// when masks are required but absent from the dataset.
TrainResult train(const DatasetView& data, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir);

}  // namespace agd
