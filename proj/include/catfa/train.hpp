#pragma once

#include <string>
#include <vector>

#include "catfa/model.hpp"
#include "catfa/optim.hpp"
#include "catfa/synth.hpp"

namespace catfa {

// Training loop: deterministic 75/25 train/validation split, batched
// Dice-loss descent, per-epoch validation, optional history CSV and
// checkpoint artifacts. Everything is driven by one seed, so a rerun
// reproduces every file bit for bit.

struct TrainOptions {
    int epochs = 30;
    int batch = 8;
    AdamWConfig optim;
    double eps_loss = 1e-6;
    // Scale gradients so their global L2 norm never exceeds this; 0 disables.
    // Contains the occasional huge early-training step at aggressive rates.
    double clip_norm = 0.0;
    uint64_t seed = 1;
    bool augment_flips = false;  // random horizontal/vertical training flips
    std::string history_csv;     // written when nonempty
    std::string checkpoint;      // written when nonempty
    bool verbose = false;        // one stdout line per epoch
};

struct EpochStats {
    double train_loss = 0;
    double val_loss = 0;
    double val_dice = 0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    int n_train = 0;
    int n_val = 0;
};

TrainResult train_model(Model<float>& model, const std::vector<SynthSample>& data,
                        const TrainOptions& opt);

// ---- checkpoints ---------------------------------------------------------------
//
// A checkpoint is a tensor container holding a float64 "__config__" vector
// (model configuration), one float32 entry per learnable parameter, and the
// decoder batch-norm running statistics when training initialized them.

void save_checkpoint(Model<float>& model, const std::string& path);
Model<float> load_checkpoint(const std::string& path);

// ---- on-disk datasets -------------------------------------------------------------
//
// A dataset directory holds images/<name>.pgm and masks/<name>.pgm with
// matching file names; gray values are scaled to [0,1] and replicated to
// three channels, mask pixels >= 128 are foreground.

std::vector<SynthSample> load_dataset_dir(const std::string& dir);

} // namespace catfa
