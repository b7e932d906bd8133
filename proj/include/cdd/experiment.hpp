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

#ifndef CDD_EXPERIMENT_HPP
#define CDD_EXPERIMENT_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdd/data.hpp"
#include "cdd/metrics.hpp"
#include "cdd/nets.hpp"
#include "cdd/trainer.hpp"

namespace cdd::experiment {

struct ExperimentConfig {
    nets::NetConfig net;
    train::TrainConfig train;
    std::filesystem::path data_root;
    bool synthetic = true;  // recorded in manifests; real data uses the same layout
    std::filesystem::path output_dir;
    int target_domain = 0;
    // First N samples of every source domain are used for training, the last
    // N of the target for testing. 0 keeps all.
    int max_train_per_domain = 0;
    int max_test_per_domain = 0;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::vector<int> targets;  // ablate: empty means every domain
    std::vector<std::string> variants{"base", "sct", "da", "sctda"};
    // gen-data
    int gen_domains = 4;
    int gen_samples = 80;
    int gen_height = 64;
    int gen_width = 64;
    std::uint64_t gen_seed = 0;

    void validate() const;
};

// Every effective hyperparameter, used as the run manifest.
nlohmann::json to_json(const ExperimentConfig& config);

// Desk-scale network and schedule: narrower U-Net, 32 x 32 crops.
ExperimentConfig desk_config();

// Style of synthetic domain d; the first four are fixed, later ones are drawn from seed.
data::DomainStyleSpec default_domain_style(int domain, int channels = 3);

data::Dataset generate_synthetic_dataset(int domains, int samples, int height, int width, std::uint64_t seed);

// Writes the dataset plus manifest.json. Refuses a non-empty directory unless force.
void cmd_gen_data(const ExperimentConfig& config, bool force, std::ostream& log);

// Loads only the source domains (every domain but the target), keeping the
// first max_train_per_domain samples of each.
data::Dataset load_sources(const ExperimentConfig& config, data::FileAccessLog* access_log);

// Loads only the target domain, keeping its last max_test_per_domain samples.
data::SplitPlan load_target_test(const ExperimentConfig& config, int target, data::FileAccessLog* access_log);

struct TrainOutcome {
    std::filesystem::path checkpoint;
    std::vector<train::HistoryRecord> history;
};

// Trains config.train.variant on the leave-one-out sources of config.target_domain,
// writing last.ckpt, history.jsonl and manifest.json to output_dir. With resume,
// continues from an existing last.ckpt in output_dir.
TrainOutcome cmd_train(const ExperimentConfig& config, data::FileAccessLog* access_log = nullptr, bool resume = false);

// Evaluates each checkpoint on its target domain and writes eval.csv and report.txt.
metrics::EvalReport cmd_eval(const ExperimentConfig& config, const std::vector<std::filesystem::path>& checkpoints);

struct AblationRun {
    std::string variant;
    std::uint64_t seed = 0;
    int target = 0;
    std::vector<metrics::EvalRow> rows;  // cup, disc
    double seconds = 0.0;
};

struct AblationResult {
    std::vector<AblationRun> runs;
    // Mean held-out Dice over (target, structure) cells for (variant, seed).
    [[nodiscard]] double mean_dice(const std::string& variant, std::uint64_t seed) const;
    [[nodiscard]] double mean_dice(const std::string& variant, std::uint64_t seed, const std::string& structure) const;
};

// Trains and evaluates every (variant, seed, target) on an in-memory dataset.
// Each run's files go under output_dir/<variant>/seed<s>/target<t> when
// output_dir is set.
AblationResult run_ablation(const data::Dataset& dataset, const ExperimentConfig& config, std::ostream* log = nullptr);

void write_ablation_report(std::ostream& os, const AblationResult& result, const ExperimentConfig& config);

// Loads the dataset from disk, runs the ablation and writes ablation.csv and ablation.txt.
AblationResult cmd_ablate(const ExperimentConfig& config, std::ostream& log);

}  // namespace cdd::experiment

#endif  // CDD_EXPERIMENT_HPP
