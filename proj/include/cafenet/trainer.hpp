#pragma once

// Episodic meta-training: configuration, AdamW, checkpoints and the
// resumable training loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cafenet/datasets.hpp"
#include "cafenet/episodes.hpp"
#include "cafenet/losses.hpp"
#include "cafenet/model.hpp"

namespace cafenet::trainer {

namespace fs = std::filesystem;

struct TrainConfig {
    datasets::Scheme scheme = datasets::Scheme::Fse1000;
    int split_index = 0;
    long episodes_total = 40000;
    double lr = 1e-4;
    double lr_decay_factor = 0.1;
    long decay_at_episode = 38000;
    double weight_decay = 1e-2;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int n_way = 1;       // N_c
    int shots_train = 0; // 0: derived from shots_eval
    int shots_eval = 5;
    int n_query = 1;
    bool balanced_ce = false;
    bool augment = true;
    std::uint64_t seed = 0;
    int log_every = 100;
    int checkpoint_every = 1000;
    std::string out_dir = "runs/train";
    std::string encoder_weights; // optional checkpoint providing encoder.* tensors
    model::ModelConfig model;

    static TrainConfig defaults(datasets::Scheme scheme);

    /// Applies the higher-shot rule and validates.
    TrainConfig resolved() const;
    episodes::Protocol train_protocol() const;
    episodes::Protocol eval_protocol() const;

    std::map<std::string, std::string> to_map() const; // includes model keys
};

struct ConfigKey {
    std::string key;
    std::string default_value;
    std::string help;
};

/// Every train/model key with its default under `scheme`.
std::vector<ConfigKey> config_keys(datasets::Scheme scheme = datasets::Scheme::Fse1000);

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// `key = value` lines; `#` starts a comment. Duplicate keys: last wins.
KeyValues parse_key_values(const std::string& text, const std::string& origin = "config");
KeyValues read_config_file(const fs::path& path);

/// Scheme defaults first, then `encoder`, then every other entry in order.
TrainConfig build_config(const KeyValues& entries);

/// lr for 1-based `episode`.
double lr_at(const TrainConfig& config, long episode);

struct AdamState {
    long step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    void ensure(const model::CafeNet& net);
};

/// Decoupled weight decay on conv weights, then the Adam update; tau is
/// clamped to its floor afterwards.
void adamw_step(model::CafeNet& net, AdamState& state, const TrainConfig& config, double lr);

void zero_grad(model::CafeNet& net);

/// Forward pass plus the full objective over every query of the batch.
losses::Objective objective(const model::CafeNet& net, const episodes::EpisodeBatch& batch,
                            bool balanced_ce);

/// One optimisation step. Throws Numeric (and leaves parameters untouched)
/// when the loss or a gradient is non-finite.
losses::LossReport train_step(model::CafeNet& net, const episodes::EpisodeBatch& batch,
                              AdamState& state, const TrainConfig& config, double lr);

/// Draws and preprocesses training episode `index` (0-based).
episodes::EpisodeBatch training_batch(const TrainConfig& config, episodes::SampleLoader& loader,
                                      long index);

// ---- checkpoints ---------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::unique_ptr<model::CafeNet> net;
    AdamState optimizer;
    long episode = 0;
    std::map<std::string, std::string> train; // resolved train config (informational)
};

void save_checkpoint(const fs::path& path, const model::CafeNet& net, const AdamState& optimizer,
                     long episode, const std::map<std::string, std::string>& train);

/// With `expected`, a differing model config raises Mismatch naming the keys.
Checkpoint load_checkpoint(const fs::path& path, const model::ModelConfig* expected = nullptr);

/// Copies `encoder.*` tensors of matching shape from another checkpoint.
std::size_t load_encoder_weights(model::CafeNet& net, const fs::path& path);

// ---- run -------------------------------------------------------------------------------

struct RunOptions {
    bool resume = true;          // continue from <out_dir>/latest.ckpt when present
    long stop_after = -1;        // stop after this many episodes in this call (testing)
    std::function<void(long, const losses::LossReport&)> observer; // 1-based episode
};

struct RunResult {
    fs::path checkpoint;
    long episodes_done = 0;
    bool completed = false;
};

RunResult run(const TrainConfig& config, const datasets::DatasetManifest& manifest,
              const RunOptions& options = {});

inline constexpr int kMaxConsecutiveFailures = 3;

} // namespace cafenet::trainer
