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

// Command-line entry point: gen-data, train, eval, ablate.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cdd/errors.hpp"
#include "cdd/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

using cdd::experiment::ExperimentConfig;

struct Flags {
    std::string variant = "sctda";
    int crop = 0;
    bool no_flips = false;
    bool real = false;
};

void add_experiment_options(CLI::App& app, ExperimentConfig& c, Flags& f)
{
    auto& t = c.train;
    auto& n = c.net;
    app.add_option("--data", c.data_root, "Dataset root (domain<k>/images|masks)")->group("Data");
    app.add_option("--out", c.output_dir, "Output directory")->group("Data");
    app.add_option("--target", c.target_domain, "Held-out target domain")->group("Data");
    app.add_option("--max-train", c.max_train_per_domain, "Use the first N samples of each source domain (0 = all)")
        ->group("Data");
    app.add_option("--max-test", c.max_test_per_domain, "Use the last N samples of the target domain (0 = all)")
        ->group("Data");
    app.add_flag("--real", f.real, "Dataset is real multi-site data (recorded in manifests)")->group("Data");

    app.add_option("--variant", f.variant, "base, sct, da or sctda")->group("Training");
    app.add_option("--seed", t.seed, "Training seed")->group("Training");
    app.add_option("--epochs", t.epochs)->group("Training");
    app.add_option("--lr", t.lr, "Initial learning rate")->group("Training");
    app.add_option("--patience", t.plateau_patience, "Epochs without improvement before decay")->group("Training");
    app.add_option("--decay", t.lr_decay_factor, "Learning-rate decay factor")->group("Training");
    app.add_option("--batch", t.batch_per_domain, "Mini-batch size per source domain")->group("Training");
    app.add_option("--crop", f.crop, "Square training crop size")->group("Training");
    app.add_flag("--no-flips", f.no_flips, "Disable random flips")->group("Training");
    app.add_option("--jitter", t.augment.brightness_jitter, "Brightness jitter amplitude")->group("Training");
    app.add_flag("--normalize-mixing", t.normalize_mixing, "Divide mixing weights by their absolute sum")
        ->group("Training");
    app.add_flag("--detach-target", t.detach_consistency_target,
                 "Treat the original anatomy as a constant in the consistency term")
        ->group("Training");
    app.add_flag("--detach-synthetic", t.detach_synthetic_image, "Stop consistency gradients into the decoder")
        ->group("Training");
    app.add_option("--lambda1", t.weights.lambda1, "Reconstruction weight")->group("Loss");
    app.add_option("--lambda2", t.weights.lambda2, "KL weight")->group("Loss");
    app.add_option("--lambda3", t.weights.lambda3, "Style contrastive weight")->group("Loss");
    app.add_option("--lambda4", t.weights.lambda4, "Anatomy consistency weight")->group("Loss");
    app.add_option("--tau", t.weights.tau, "Contrastive temperature")->group("Loss");

    app.add_option("--anatomy-channels", n.anatomy_channels, "Anatomy channels T")->group("Network");
    app.add_option("--style-dim", n.style_dim, "Style code size Z")->group("Network");
    app.add_option("--unet-channels", n.unet_channels, "U-Net widths per level")->group("Network");
    app.add_option("--style-channels", n.style_channels, "Style encoder widths (4 values)")->group("Network");
    app.add_option("--decoder-channels", n.decoder_channels)->group("Network");
    app.add_option("--segmenter-channels", n.segmenter_channels)->group("Network");
    app.add_option("--temperature", n.gumbel_temperature, "Gumbel-softmax temperature")->group("Network");

    app.add_option("--seeds", c.seeds, "Seeds for ablate")->group("Ablation");
    app.add_option("--targets", c.targets, "Target domains for ablate (default: all)")->group("Ablation");
    app.add_option("--variants", c.variants, "Variants for ablate")->group("Ablation");

    app.add_option("--domains", c.gen_domains, "Number of synthetic domains")->group("Generation");
    app.add_option("--samples", c.gen_samples, "Samples per synthetic domain")->group("Generation");
    app.add_option("--height", c.gen_height)->group("Generation");
    app.add_option("--width", c.gen_width)->group("Generation");
    app.add_option("--gen-seed", c.gen_seed, "Generator seed")->group("Generation");
}

void finalize(ExperimentConfig& c, const Flags& f)
{
    c.train.variant = cdd::train::parse_variant(f.variant);
    if (f.crop > 0) c.train.crop_height = c.train.crop_width = f.crop;
    if (f.no_flips) c.train.augment.flips = false;
    c.synthetic = !f.real;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Contrastive domain disentanglement for domain-generalizable segmentation"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Flat key = value file; keys are long option names, flags override it");

    ExperimentConfig config;
    Flags flags;
    add_experiment_options(app, config, flags);

    bool force = false, resume = false;
    std::vector<std::string> checkpoints;
    auto* gen = app.add_subcommand("gen-data", "Write a synthetic multi-domain dataset to --data")->fallthrough();
    gen->add_flag("--force", force, "Overwrite a non-empty directory");
    auto* train = app.add_subcommand("train", "Train one variant with --target held out")->fallthrough();
    train->add_flag("--resume", resume, "Continue from --out/last.ckpt");
    auto* eval = app.add_subcommand("eval", "Evaluate checkpoints on their target domains")->fallthrough();
    eval->add_option("--checkpoint", checkpoints, "Checkpoint file(s)")->required();
    auto* ablate = app.add_subcommand("ablate", "Train and evaluate all variants over seeds and targets")->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        finalize(config, flags);
        if (gen->parsed()) {
            cdd::experiment::cmd_gen_data(config, force, std::cout);
        } else if (train->parsed()) {
            const auto outcome = cdd::experiment::cmd_train(config, nullptr, resume);
            std::cout << "checkpoint: " << outcome.checkpoint.string() << '\n';
            if (!outcome.history.empty()) std::cout << "final total loss: " << outcome.history.back().losses.total << '\n';
        } else if (eval->parsed()) {
            std::vector<std::filesystem::path> paths(checkpoints.begin(), checkpoints.end());
            const auto report = cdd::experiment::cmd_eval(config, paths);
            cdd::metrics::write_table(std::cout, report);
        } else if (ablate->parsed()) {
            cdd::experiment::cmd_ablate(config, std::cout);
        }
    } catch (const cdd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const cdd::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const cdd::DivergenceError& e) {
        std::cerr << "numerical divergence: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
