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

#include "cdd/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "cdd/checkpoint.hpp"
#include "cdd/errors.hpp"

namespace cdd::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json(const fs::path& path, const json& j)
{
    fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write " + path.string());
    os << j.dump(2) << '\n';
}

std::vector<data::ImageSample> head(const std::vector<data::ImageSample>& v, int n)
{
    if (n <= 0 || n >= static_cast<int>(v.size())) return v;
    return {v.begin(), v.begin() + n};
}

std::vector<data::ImageSample> tail(const std::vector<data::ImageSample>& v, int n)
{
    if (n <= 0 || n >= static_cast<int>(v.size())) return v;
    return {v.end() - n, v.end()};
}

metrics::Predictor model_predictor(nets::CddModel<float>& model)
{
    return [&model](const Tensor<float>& images) { return model.predict(images); };
}

json style_to_json(const data::DomainStyleSpec& s)
{
    return json{{"intensity_bias", s.intensity_bias},
                {"gamma", s.gamma},
                {"channel_tint", s.channel_tint},
                {"noise_sigma", s.noise_sigma},
                {"blur_radius", s.blur_radius}};
}

}  // namespace

void ExperimentConfig::validate() const
{
    try {
        net.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    train.validate();
    if (target_domain < 0) throw ConfigError("target domain must be >= 0");
    if (max_train_per_domain < 0 || max_test_per_domain < 0) throw ConfigError("sample limits must be >= 0");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    for (const auto& v : variants) train::parse_variant(v);
    if (gen_domains < 1 || gen_samples < 1) throw ConfigError("gen-data needs at least one domain and one sample");
}

json to_json(const ExperimentConfig& c)
{
    const auto& t = c.train;
    return json{{"net", ckpt::net_config_to_json(c.net)},
                {"train",
                 {{"epochs", t.epochs},
                  {"lr", t.lr},
                  {"plateau_patience", t.plateau_patience},
                  {"lr_decay_factor", t.lr_decay_factor},
                  {"batch_per_domain", t.batch_per_domain},
                  {"variant", train::to_string(t.variant)},
                  {"seed", t.seed},
                  {"crop_height", t.crop_height},
                  {"crop_width", t.crop_width},
                  {"flips", t.augment.flips},
                  {"brightness_jitter", t.augment.brightness_jitter},
                  {"normalize_mixing", t.normalize_mixing},
                  {"freeze_stats_on_synthetic", t.freeze_stats_on_synthetic},
                  {"detach_consistency_target", t.detach_consistency_target},
                  {"detach_synthetic_image", t.detach_synthetic_image},
                  {"adam_beta1", t.adam_beta1},
                  {"adam_beta2", t.adam_beta2},
                  {"adam_eps", t.adam_eps}}},
                {"loss_weights",
                 {{"lambda1", t.weights.lambda1},
                  {"lambda2", t.weights.lambda2},
                  {"lambda3", t.weights.lambda3},
                  {"lambda4", t.weights.lambda4},
                  {"tau", t.weights.tau}}},
                {"data",
                 {{"root", c.data_root.string()},
                  {"synthetic", c.synthetic},
                  {"target_domain", c.target_domain},
                  {"max_train_per_domain", c.max_train_per_domain},
                  {"max_test_per_domain", c.max_test_per_domain}}}};
}

ExperimentConfig desk_config()
{
    ExperimentConfig c;
    c.net.unet_channels = {8, 16, 32, 64, 128};
    c.net.style_channels = {8, 16, 32, 64};
    c.train.epochs = 40;
    c.train.crop_height = 32;
    c.train.crop_width = 32;
    c.max_train_per_domain = 60;
    c.max_test_per_domain = 20;
    return c;
}

data::DomainStyleSpec default_domain_style(int domain, int channels)
{
    data::DomainStyleSpec s;
    switch (domain) {
    case 0:
        s = {0.0, 1.0, {1.0, 1.0, 1.0}, 0.02, 0.0};
        break;
    case 1:
        s = {-0.05, 1.4, {0.85, 1.1, 1.25}, 0.03, 0.6};
        break;
    case 2:
        s = {0.08, 0.75, {1.1, 0.85, 0.9}, 0.015, 0.3};
        break;
    case 3:
        s = {0.05, 1.9, {0.7, 1.25, 1.45}, 0.04, 0.9};
        break;
    default: {
        Rng rng(0x5eedULL + static_cast<std::uint64_t>(domain));
        s.intensity_bias = rng.uniform(-0.1, 0.1);
        s.gamma = rng.uniform(0.6, 2.0);
        s.channel_tint = {rng.uniform(0.6, 1.4), rng.uniform(0.6, 1.4), rng.uniform(0.6, 1.4)};
        s.noise_sigma = rng.uniform(0.0, 0.05);
        s.blur_radius = rng.uniform(0.0, 1.0);
    }
    }
    s.channel_tint.resize(static_cast<std::size_t>(channels), 1.0);
    return s;
}

data::Dataset generate_synthetic_dataset(int domains, int samples, int height, int width, std::uint64_t seed)
{
    data::Dataset ds;
    Rng master(seed);
    // One geometry stream for every domain, so domains differ only in style.
    const std::uint64_t geometry_seed = master.next_u64();
    for (int d = 0; d < domains; ++d) {
        // Offsetting per domain keeps domains from sharing identical anatomy.
        ds.push_back({d, data::generate_synthetic_domain(default_domain_style(d), samples, height, width,
                                                         geometry_seed + 7919ULL * static_cast<std::uint64_t>(d), d)});
    }
    return ds;
}

void cmd_gen_data(const ExperimentConfig& config, bool force, std::ostream& log)
{
    if (config.data_root.empty()) throw ConfigError("gen-data needs an output directory");
    if (fs::exists(config.data_root) && !fs::is_empty(config.data_root) && !force) {
        throw ConfigError("output directory " + config.data_root.string() + " is not empty (use --force)");
    }
    if (config.gen_domains < 2) log << "warning: training needs at least 2 domains\n";
    const auto dataset = generate_synthetic_dataset(config.gen_domains, config.gen_samples, config.gen_height,
                                                    config.gen_width, config.gen_seed);
    if (force && fs::exists(config.data_root)) {
        for (int d : data::list_domains(config.data_root)) fs::remove_all(data::domain_dir(config.data_root, d));
    }
    data::write_multisite_dataset(config.data_root, dataset);
    json styles = json::array();
    for (int d = 0; d < config.gen_domains; ++d) styles.push_back(style_to_json(default_domain_style(d)));
    write_json(config.data_root / "manifest.json", json{{"domains", config.gen_domains},
                                                        {"samples_per_domain", config.gen_samples},
                                                        {"height", config.gen_height},
                                                        {"width", config.gen_width},
                                                        {"seed", config.gen_seed},
                                                        {"styles", styles}});
    log << "wrote " << config.gen_domains << " domains x " << config.gen_samples << " samples to "
        << config.data_root.string() << '\n';
}

data::Dataset load_sources(const ExperimentConfig& config, data::FileAccessLog* access_log)
{
    const std::vector<int> ids = data::list_domains(config.data_root);
    if (std::find(ids.begin(), ids.end(), config.target_domain) == ids.end()) {
        throw DataError("target domain " + std::to_string(config.target_domain) + " is missing from " +
                        config.data_root.string());
    }
    data::LoadOptions opts;
    opts.access_log = access_log;
    opts.domains = std::vector<int>{};
    for (int id : ids)
        if (id != config.target_domain) opts.domains->push_back(id);
    if (opts.domains->empty()) throw DataError("no source domains besides the target");
    data::Dataset ds = data::load_multisite_dataset(config.data_root, opts);
    for (auto& d : ds) d.samples = head(d.samples, config.max_train_per_domain);
    return ds;
}

data::SplitPlan load_target_test(const ExperimentConfig& config, int target, data::FileAccessLog* access_log)
{
    data::LoadOptions opts;
    opts.access_log = access_log;
    opts.domains = std::vector<int>{target};
    data::Dataset ds = data::load_multisite_dataset(config.data_root, opts);
    data::SplitPlan plan;
    plan.target_domain = target;
    plan.target_test = tail(ds.front().samples, config.max_test_per_domain);
    return plan;
}

TrainOutcome cmd_train(const ExperimentConfig& config, data::FileAccessLog* access_log, bool resume)
{
    config.validate();
    if (config.output_dir.empty()) throw ConfigError("train needs an output directory");
    const data::Dataset sources = load_sources(config, access_log);
    train::TrainConfig tc = config.train;
    tc.checkpoint_dir = config.output_dir;
    train::Trainer trainer(config.net, tc, data::make_training_split(sources, config.target_domain));
    const fs::path last = config.output_dir / train::Trainer::kCheckpointName;
    if (resume) {
        if (!fs::exists(last)) throw DataError("nothing to resume: " + last.string() + " does not exist");
        trainer.resume(last);
    }
    write_json(config.output_dir / "manifest.json", to_json(config));
    train::TrainResult r = trainer.run();
    return {r.checkpoint, r.history};
}

metrics::EvalReport cmd_eval(const ExperimentConfig& config, const std::vector<fs::path>& checkpoints)
{
    if (checkpoints.empty()) throw ConfigError("eval needs at least one checkpoint");
    if (config.output_dir.empty()) throw ConfigError("eval needs an output directory");
    std::vector<metrics::EvalRow> rows;
    for (const auto& path : checkpoints) {
        const ckpt::Checkpoint c = ckpt::load(path);
        if (!(c.config == config.net)) {
            throw ConfigError("checkpoint " + path.string() + " was built with network config " +
                              ckpt::net_config_to_json(c.config).dump() + ", expected " +
                              ckpt::net_config_to_json(config.net).dump());
        }
        const int target = c.metadata.value("target_domain", config.target_domain);
        nets::CddModel<float> model(c.config, 0);
        ckpt::restore(model, c);
        const data::SplitPlan plan = load_target_test(config, target, nullptr);
        const auto eval = metrics::evaluate_split(model_predictor(model), plan);
        rows.insert(rows.end(), eval.rows.begin(), eval.rows.end());
    }
    const metrics::EvalReport report = metrics::build_report(rows);
    fs::create_directories(config.output_dir);
    std::ofstream csv(config.output_dir / "eval.csv", std::ios::trunc);
    metrics::write_csv(csv, report);
    std::ofstream txt(config.output_dir / "report.txt", std::ios::trunc);
    metrics::write_table(txt, report, "Leave-one-domain-out evaluation");
    if (!csv || !txt) throw DataError("cannot write evaluation results to " + config.output_dir.string());
    return report;
}

double AblationResult::mean_dice(const std::string& variant, std::uint64_t seed) const
{
    double total = 0.0;
    int n = 0;
    for (const auto& r : runs) {
        if (r.variant != variant || r.seed != seed) continue;
        for (const auto& row : r.rows) {
            total += row.dice_mean;
            ++n;
        }
    }
    return n ? total / n : 0.0;
}

double AblationResult::mean_dice(const std::string& variant, std::uint64_t seed, const std::string& structure) const
{
    double total = 0.0;
    int n = 0;
    for (const auto& r : runs) {
        if (r.variant != variant || r.seed != seed) continue;
        for (const auto& row : r.rows) {
            if (row.structure != structure) continue;
            total += row.dice_mean;
            ++n;
        }
    }
    return n ? total / n : 0.0;
}

AblationResult run_ablation(const data::Dataset& dataset, const ExperimentConfig& config, std::ostream* log)
{
    config.validate();
    std::vector<int> targets = config.targets;
    if (targets.empty())
        for (const auto& d : dataset) targets.push_back(d.domain_id);
    AblationResult result;
    for (int target : targets) {
        data::Dataset sources;
        data::SplitPlan test_plan;
        test_plan.target_domain = target;
        for (const auto& d : dataset) {
            if (d.domain_id == target) {
                test_plan.target_test = tail(d.samples, config.max_test_per_domain);
            } else {
                sources.push_back({d.domain_id, head(d.samples, config.max_train_per_domain)});
            }
        }
        if (test_plan.target_test.empty()) throw DataError("target domain " + std::to_string(target) + " not in dataset");
        const data::SplitPlan train_plan = data::make_training_split(sources, target);
        for (const auto& variant : config.variants) {
            for (std::uint64_t seed : config.seeds) {
                const auto t0 = std::chrono::steady_clock::now();
                ExperimentConfig run_cfg = config;
                run_cfg.train.variant = train::parse_variant(variant);
                run_cfg.train.seed = seed;
                run_cfg.target_domain = target;
                train::TrainConfig tc = run_cfg.train;
                if (!config.output_dir.empty()) {
                    tc.checkpoint_dir = config.output_dir / variant / ("seed" + std::to_string(seed)) /
                                        ("target" + std::to_string(target));
                    write_json(tc.checkpoint_dir / "manifest.json", to_json(run_cfg));
                }
                train::Trainer trainer(config.net, tc, train_plan);
                const auto trained = trainer.run();
                const auto eval = metrics::evaluate_split(model_predictor(trainer.model()), test_plan);
                AblationRun run{variant, seed, target, eval.rows,
                                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
                if (log) {
                    *log << std::fixed << std::setprecision(2) << "target " << target << " " << variant << " seed "
                         << seed << ": cup " << run.rows[0].dice_mean << " disc " << run.rows[1].dice_mean
                         << " (final loss " << trained.epoch_monitor.back() << ", " << run.seconds << " s)"
                         << std::endl;
                    log->unsetf(std::ios::fixed);
                }
                result.runs.push_back(std::move(run));
            }
        }
    }
    return result;
}

void write_ablation_report(std::ostream& os, const AblationResult& result, const ExperimentConfig& config)
{
    os << std::fixed << std::setprecision(2);
    os << "Held-out Dice (%), mean over seeds\n";
    os << std::left << std::setw(8) << "target" << std::setw(10) << "structure";
    for (const auto& v : config.variants) os << std::setw(10) << v;
    os << '\n';
    std::vector<int> targets;
    for (const auto& r : result.runs)
        if (std::find(targets.begin(), targets.end(), r.target) == targets.end()) targets.push_back(r.target);
    for (int t : targets) {
        for (const char* s : {"cup", "disc"}) {
            os << std::setw(8) << t << std::setw(10) << s;
            for (const auto& v : config.variants) {
                double total = 0.0;
                int n = 0;
                for (const auto& r : result.runs) {
                    if (r.target != t || r.variant != v) continue;
                    for (const auto& row : r.rows)
                        if (row.structure == s) {
                            total += row.dice_mean;
                            ++n;
                        }
                }
                os << std::setw(10) << (n ? total / n : 0.0);
            }
            os << '\n';
        }
    }
    os << "\nPer-seed average Dice and ordering base <= sct <= da <= sctda\n";
    for (std::uint64_t seed : config.seeds) {
        os << "seed " << seed << ':';
        std::vector<double> avgs;
        for (const auto& v : config.variants) {
            avgs.push_back(result.mean_dice(v, seed));
            os << ' ' << v << '=' << avgs.back();
        }
        bool ordered = true;
        const std::vector<std::string> order{"base", "sct", "da", "sctda"};
        double prev = -1.0;
        for (const auto& v : order) {
            const auto it = std::find(config.variants.begin(), config.variants.end(), v);
            if (it == config.variants.end()) continue;
            const double a = avgs[static_cast<std::size_t>(it - config.variants.begin())];
            if (a < prev) ordered = false;
            prev = a;
        }
        os << (ordered ? "  ordered" : "  not ordered") << '\n';
    }
    os.unsetf(std::ios::fixed);
}

AblationResult cmd_ablate(const ExperimentConfig& config, std::ostream& log)
{
    config.validate();
    if (config.output_dir.empty()) throw ConfigError("ablate needs an output directory");
    data::Dataset dataset = data::load_multisite_dataset(config.data_root);
    const AblationResult result = run_ablation(dataset, config, &log);
    fs::create_directories(config.output_dir);
    std::ofstream csv(config.output_dir / "ablation.csv", std::ios::trunc);
    csv << "variant,seed,target_domain,structure,dice_mean,dice_std,asd_mean,asd_std,n_images,degenerate_count\n";
    csv << std::setprecision(10);
    for (const auto& r : result.runs)
        for (const auto& row : r.rows) {
            csv << r.variant << ',' << r.seed << ',' << row.target << ',' << row.structure << ',' << row.dice_mean << ','
                << row.dice_std << ',' << row.asd_mean << ',' << row.asd_std << ',' << row.n_images << ','
                << row.degenerate_count << '\n';
        }
    std::ofstream txt(config.output_dir / "ablation.txt", std::ios::trunc);
    write_ablation_report(txt, result, config);
    write_ablation_report(log, result, config);
    if (!csv || !txt) throw DataError("cannot write ablation results to " + config.output_dir.string());
    return result;
}

}  // namespace cdd::experiment
