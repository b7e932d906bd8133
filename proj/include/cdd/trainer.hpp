/* Copyright 2026 The CDD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef CDD_TRAINER_HPP
#define CDD_TRAINER_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cdd/data.hpp"
#include "cdd/losses.hpp"
#include "cdd/nets.hpp"

namespace cdd::train {

enum class Variant { base, sct, da, sctda };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);  // throws ConfigError
inline bool uses_contrastive(Variant v) { return v == Variant::sct || v == Variant::sctda; }
inline bool uses_augmentation(Variant v) { return v == Variant::da || v == Variant::sctda; }

struct TrainConfig {
    int epochs = 200;
    double lr = 1e-3;
    int plateau_patience = 8;
    double lr_decay_factor = 0.95;
    int batch_per_domain = 8;  // b
    losses::LossWeights weights;
    Variant variant = Variant::sctda;
    std::uint64_t seed = 0;
    int crop_height = 48;
    int crop_width = 48;
    data::AugmentOptions augment;
    bool normalize_mixing = false;  // divide mixing weights by their absolute sum
    // Re-encoding synthesized images leaves batch-norm running statistics alone,
    // so they describe real source images only.
    bool freeze_stats_on_synthetic = true;
    // Gradient routing of the anatomy consistency term.
    bool detach_consistency_target = false;     // original anatomy treated as a constant
    bool detach_synthetic_image = false;        // no gradient into the decoder through x_tilde
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::filesystem::path checkpoint_dir;  // empty: no files are written

    void validate() const;
};

struct TrainState {
    int epoch = 0;  // completed epochs
    std::int64_t step = 0;
    double current_lr = 1e-3;
    double best_monitor = 0.0;
    bool has_best = false;
    int epochs_since_improvement = 0;
    int decays = 0;

    friend bool operator==(const TrainState&, const TrainState&) = default;
};

// Stateful plateau rule: a strictly lower monitor value resets the counter;
// otherwise the counter grows and, on reaching patience, lr is multiplied by
// factor and the counter restarts. Returns true when a decay was applied.
bool plateau_update(TrainState& state, double monitor, int patience, double factor);

// Folds plateau_update over a per-epoch history starting from lr.
double plateau_scheduler(const std::vector<double>& history, int patience, double factor, double lr);

class Adam {
public:
    Adam() = default;
    Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // Applies one update to every parameter with a gradient, then clears gradients.
    void step(nets::ParameterSet<float>& params, double lr);

    [[nodiscard]] std::int64_t steps() const { return t_; }
    std::map<std::string, Tensor<float>>& first_moments() { return m_; }
    std::map<std::string, Tensor<float>>& second_moments() { return v_; }
    void set_steps(std::int64_t t) { t_ = t; }

private:
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::int64_t t_ = 0;
    std::map<std::string, Tensor<float>> m_, v_;
};

// One optimisation step over the per-domain mini-batches. Disabled terms are
// reported as exactly 0. Throws DivergenceError naming a non-finite term.
// noise_rng drives the sampling every variant shares (gumbel and style noise of
// the main pass); aux_rng drives contrastive positives, mixing weights and the
// re-encoding noise, so enabling a term leaves the shared stream untouched.
losses::LossReport train_step(nets::CddModel<float>& model, Adam& optimizer,
                              const std::map<int, std::vector<data::ImageSample>>& batches, const TrainConfig& config,
                              double lr, Rng& noise_rng, Rng& aux_rng);

struct HistoryRecord {
    std::int64_t step = 0;
    int epoch = 0;
    double lr = 0.0;
    losses::LossReport losses;
    friend bool operator==(const HistoryRecord&, const HistoryRecord&) = default;
};

std::string history_line(const HistoryRecord& record);
std::vector<HistoryRecord> read_history(const std::filesystem::path& path);

int steps_per_epoch(const data::SplitPlan& split, int b);

struct TrainResult {
    std::filesystem::path checkpoint;  // empty when checkpoint_dir is empty
    std::vector<HistoryRecord> history;
    std::vector<double> epoch_monitor;  // epoch-mean total loss
};

class Trainer {
public:
    Trainer(const nets::NetConfig& net_config, const TrainConfig& config, data::SplitPlan split);

    // Continues from a last.ckpt written by an earlier run with the same configuration.
    void resume(const std::filesystem::path& checkpoint);

    // Runs the remaining epochs. The last completed epoch's checkpoint is kept
    // if a DivergenceError aborts training.
    TrainResult run();

    losses::LossReport step();

    nets::CddModel<float>& model() { return model_; }
    [[nodiscard]] const TrainState& state() const { return state_; }
    [[nodiscard]] const std::vector<HistoryRecord>& history() const { return history_; }

    static constexpr const char* kCheckpointName = "last.ckpt";
    static constexpr const char* kHistoryName = "history.jsonl";

private:
    void save_checkpoint(const std::filesystem::path& path);

    nets::NetConfig net_config_;
    TrainConfig config_;
    data::SplitPlan split_;
    nets::CddModel<float> model_;
    Adam optimizer_;
    TrainState state_;
    Rng data_rng_;
    Rng noise_rng_;
    Rng aux_rng_;
    std::vector<HistoryRecord> history_;
    std::vector<double> epoch_monitor_;
};

// Applies allocator settings that keep large tensor buffers cached between
// steps. Idempotent; a no-op outside glibc.
void tune_allocator();

}  // namespace cdd::train

#endif  // CDD_TRAINER_HPP
