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

#include "cdd/trainer.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>

#include <json.hpp>

#include "cdd/checkpoint.hpp"
#include "cdd/domain_mix.hpp"
#include "cdd/errors.hpp"

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace cdd::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json train_config_to_json(const TrainConfig& c)
{
    // checkpoint_dir is left out so identical runs in different folders
    // produce identical checkpoints.
    return json{{"epochs", c.epochs},
                {"lr", c.lr},
                {"plateau_patience", c.plateau_patience},
                {"lr_decay_factor", c.lr_decay_factor},
                {"batch_per_domain", c.batch_per_domain},
                {"lambda1", c.weights.lambda1},
                {"lambda2", c.weights.lambda2},
                {"lambda3", c.weights.lambda3},
                {"lambda4", c.weights.lambda4},
                {"tau", c.weights.tau},
                {"variant", to_string(c.variant)},
                {"seed", c.seed},
                {"crop_height", c.crop_height},
                {"crop_width", c.crop_width},
                {"flips", c.augment.flips},
                {"brightness_jitter", c.augment.brightness_jitter},
                {"normalize_mixing", c.normalize_mixing},
                {"freeze_stats_on_synthetic", c.freeze_stats_on_synthetic},
                {"detach_consistency_target", c.detach_consistency_target},
                {"detach_synthetic_image", c.detach_synthetic_image},
                {"adam_beta1", c.adam_beta1},
                {"adam_beta2", c.adam_beta2},
                {"adam_eps", c.adam_eps}};
}

json state_to_json(const TrainState& s)
{
    return json{{"epoch", s.epoch},
                {"step", s.step},
                {"current_lr", s.current_lr},
                {"best_monitor", s.has_best ? json(s.best_monitor) : json(nullptr)},
                {"epochs_since_improvement", s.epochs_since_improvement},
                {"decays", s.decays}};
}

TrainState state_from_json(const json& j)
{
    TrainState s;
    s.epoch = j.at("epoch").get<int>();
    s.step = j.at("step").get<std::int64_t>();
    s.current_lr = j.at("current_lr").get<double>();
    s.has_best = !j.at("best_monitor").is_null();
    if (s.has_best) s.best_monitor = j.at("best_monitor").get<double>();
    s.epochs_since_improvement = j.at("epochs_since_improvement").get<int>();
    s.decays = j.at("decays").get<int>();
    return s;
}

std::vector<ad::Var<float>> split_by_domain(const ad::Var<float>& all, int k, int b)
{
    std::vector<ad::Var<float>> parts;
    for (int d = 0; d < k; ++d) parts.push_back(ad::slice_rows(all, d * b, (d + 1) * b));
    return parts;
}

}  // namespace

std::string to_string(Variant v)
{
    switch (v) {
    case Variant::base: return "base";
    case Variant::sct: return "sct";
    case Variant::da: return "da";
    case Variant::sctda: return "sctda";
    }
    return "?";
}

Variant parse_variant(const std::string& name)
{
    if (name == "base") return Variant::base;
    if (name == "sct") return Variant::sct;
    if (name == "da") return Variant::da;
    if (name == "sctda") return Variant::sctda;
    throw ConfigError("unknown variant '" + name + "' (expected base, sct, da or sctda)");
}

void TrainConfig::validate() const
{
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (plateau_patience < 1) throw ConfigError("plateau_patience must be >= 1");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0)) throw ConfigError("lr_decay_factor must lie in (0, 1)");
    if (batch_per_domain < 1) throw ConfigError("batch_per_domain must be >= 1");
    if (uses_contrastive(variant) && batch_per_domain < 2) {
        throw ConfigError("the contrastive loss needs batch_per_domain >= 2");
    }
    if (crop_height < 1 || crop_width < 1) throw ConfigError("crop size must be positive");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0)) {
        throw ConfigError("invalid Adam hyperparameters");
    }
    try {
        weights.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

bool plateau_update(TrainState& state, double monitor, int patience, double factor)
{
    if (!state.has_best || monitor < state.best_monitor) {
        state.best_monitor = monitor;
        state.has_best = true;
        state.epochs_since_improvement = 0;
        return false;
    }
    if (++state.epochs_since_improvement < patience) return false;
    state.current_lr *= factor;
    ++state.decays;
    state.epochs_since_improvement = 0;
    return true;
}

double plateau_scheduler(const std::vector<double>& history, int patience, double factor, double lr)
{
    if (patience < 1) throw std::invalid_argument("plateau_scheduler: patience must be >= 1");
    TrainState s;
    s.current_lr = lr;
    for (double v : history) plateau_update(s, v, patience, factor);
    return s.current_lr;
}

void Adam::step(nets::ParameterSet<float>& params, double lr)
{
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const auto b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
    const auto step_size = static_cast<float>(lr / c1);
    const auto inv_c2 = static_cast<float>(1.0 / c2);
    const auto eps = static_cast<float>(eps_);
    for (auto& p : params.parameters) {
        auto& node = *p.var.node();
        if (node.grad.empty()) continue;
        auto [mit, m_new] = m_.try_emplace(p.name, node.value.shape());
        auto [vit, v_new] = v_.try_emplace(p.name, node.value.shape());
        float* w = node.value.data();
        const float* g = node.grad.data();
        float* m = mit->second.data();
        float* v = vit->second.data();
        for (std::size_t i = 0; i < node.value.numel(); ++i) {
            m[i] = b1 * m[i] + (1.f - b1) * g[i];
            v[i] = b2 * v[i] + (1.f - b2) * g[i] * g[i];
            w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
        }
        node.grad = Tensor<float>();
    }
}

losses::LossReport train_step(nets::CddModel<float>& model, Adam& optimizer,
                              const std::map<int, std::vector<data::ImageSample>>& batches, const TrainConfig& config,
                              double lr, Rng& noise_rng, Rng& aux_rng)
{
    if (batches.empty()) throw std::invalid_argument("train_step: no domain batches");
    const int k = static_cast<int>(batches.size());
    const int b = static_cast<int>(batches.begin()->second.size());
    std::vector<data::ImageSample> all;
    for (const auto& [d, batch] : batches) {
        if (static_cast<int>(batch.size()) != b) throw std::invalid_argument("train_step: unequal domain batch sizes");
        all.insert(all.end(), batch.begin(), batch.end());
    }
    const data::Batch batch = data::make_batch(all);
    const ad::Var<float> x(batch.images);

    auto& anatomy = model.anatomy();
    const nets::AnatomyRep<float> rep = anatomy.encode(x, noise_rng, true);
    const nets::StyleCode<float> style = model.style().encode(x, noise_rng, true);
    const ad::Var<float> probs = model.segmenter().segment(rep.value, true);
    const ad::Var<float> x_hat = model.decoder().reconstruct(rep.value, style.z);

    const ad::Var<float> seg = losses::segmentation_loss(probs, std::span<const std::uint8_t>(batch.labels));
    const ad::Var<float> rec = losses::reconstruction_loss(x, x_hat);
    const ad::Var<float> kl = losses::kl_loss(style.mean, style.logvar);
    ad::Var<float> sct, dis;
    std::vector<ad::Var<float>> codes;
    if (uses_contrastive(config.variant) || uses_augmentation(config.variant)) codes = split_by_domain(style.z, k, b);
    if (uses_contrastive(config.variant)) {
        if (k < 2) throw ConfigError("the contrastive loss needs at least two source domains");
        sct = losses::style_contrastive_loss(codes, config.weights.tau, aux_rng);
    }
    if (uses_augmentation(config.variant)) {
        const auto alpha = domain_mix::sample_mixing_weights(k, aux_rng, config.normalize_mixing);
        const ad::Var<float> mixed = domain_mix::mix_style_codes(codes, alpha);
        const ad::Var<float> tiled = ad::concat_rows(std::vector<ad::Var<float>>(static_cast<std::size_t>(k), mixed));
        ad::Var<float> x_tilde = domain_mix::synthesize_mixed_domain(rep, tiled, model.decoder());
        if (config.detach_synthetic_image) x_tilde = ad::detach(x_tilde);
        std::optional<ad::FreezeRunningStatsGuard> freeze;
        if (config.freeze_stats_on_synthetic) freeze.emplace();
        dis = domain_mix::consistency_pass(x_tilde, rep, anatomy, aux_rng, true, config.detach_consistency_target);
    }

    losses::LossReport report;
    report.seg = seg.item();
    report.rec = rec.item();
    report.kl = kl.item();
    report.sct = sct.defined() ? sct.item() : 0.0;
    report.dis = dis.defined() ? dis.item() : 0.0;
    report.total = losses::total_loss(report, config.weights);

    const ad::Var<float> total = losses::weighted_total(seg, rec, kl, sct, dis, config.weights);
    total.backward();
    auto params = model.parameter_set();
    optimizer.step(params, lr);
    return report;
}

std::string history_line(const HistoryRecord& r)
{
    return json{{"step", r.step},
                {"epoch", r.epoch},
                {"lr", r.lr},
                {"seg", r.losses.seg},
                {"rec", r.losses.rec},
                {"kl", r.losses.kl},
                {"sct", r.losses.sct},
                {"dis", r.losses.dis},
                {"total", r.losses.total}}
        .dump();
}

std::vector<HistoryRecord> read_history(const fs::path& path)
{
    std::ifstream is(path);
    if (!is) throw DataError("cannot open loss history " + path.string());
    std::vector<HistoryRecord> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            HistoryRecord r;
            r.step = j.at("step").get<std::int64_t>();
            r.epoch = j.at("epoch").get<int>();
            r.lr = j.at("lr").get<double>();
            r.losses = {j.at("seg").get<double>(), j.at("rec").get<double>(), j.at("kl").get<double>(),
                        j.at("sct").get<double>(), j.at("dis").get<double>(), j.at("total").get<double>()};
            out.push_back(r);
        } catch (const json::exception& e) {
            throw DataError("malformed history line in " + path.string() + ": " + e.what());
        }
    }
    return out;
}

int steps_per_epoch(const data::SplitPlan& split, int b)
{
    std::size_t largest = 0;
    for (const auto& [d, samples] : split.per_domain_train) largest = std::max(largest, samples.size());
    return static_cast<int>((largest + static_cast<std::size_t>(b) - 1) / static_cast<std::size_t>(b));
}

Trainer::Trainer(const nets::NetConfig& net_config, const TrainConfig& config, data::SplitPlan split)
    : net_config_(net_config),
      config_(config),
      split_(std::move(split)),
      model_(net_config, config.seed),
      optimizer_(config.adam_beta1, config.adam_beta2, config.adam_eps)
{
    tune_allocator();
    config_.validate();
    const int multiple = net_config_.spatial_multiple();
    if (config_.crop_height % multiple != 0 || config_.crop_width % multiple != 0) {
        throw ConfigError("crop " + std::to_string(config_.crop_height) + "x" + std::to_string(config_.crop_width) +
                          " must be divisible by " + std::to_string(multiple) + " for this network depth");
    }
    if (split_.source_domains.empty()) throw ConfigError("training split has no source domains");
    for (int d : split_.source_domains) {
        if (d == split_.target_domain) throw ConfigError("target domain listed as a source");
    }
    Rng master(config_.seed ^ 0x9e3779b97f4a7c15ULL);
    data_rng_ = master.split();
    noise_rng_ = master.split();
    aux_rng_ = master.split();
    state_.current_lr = config_.lr;
}

losses::LossReport Trainer::step()
{
    const auto batches = data::sample_domain_minibatches(split_, config_.batch_per_domain, data_rng_,
                                                         config_.crop_height, config_.crop_width, config_.augment);
    const losses::LossReport report =
        train_step(model_, optimizer_, batches, config_, state_.current_lr, noise_rng_, aux_rng_);
    history_.push_back({state_.step, state_.epoch, state_.current_lr, report});
    ++state_.step;
    return report;
}

TrainResult Trainer::run()
{
    const int spe = steps_per_epoch(split_, config_.batch_per_domain);
    const fs::path ckpt = config_.checkpoint_dir.empty() ? fs::path() : config_.checkpoint_dir / kCheckpointName;
    while (state_.epoch < config_.epochs) {
        double total = 0.0;
        for (int s = 0; s < spe; ++s) total += step().total;
        epoch_monitor_.push_back(total / spe);
        ++state_.epoch;
        plateau_update(state_, epoch_monitor_.back(), config_.plateau_patience, config_.lr_decay_factor);
        if (!ckpt.empty()) save_checkpoint(ckpt);
    }
    return {ckpt, history_, epoch_monitor_};
}

void Trainer::save_checkpoint(const fs::path& path)
{
    fs::create_directories(path.parent_path());
    ckpt::Checkpoint c = ckpt::capture(model_);
    for (auto& [name, t] : optimizer_.first_moments()) c.tensors.emplace("adam.m." + name, t);
    for (auto& [name, t] : optimizer_.second_moments()) c.tensors.emplace("adam.v." + name, t);
    c.metadata = json{{"train_config", train_config_to_json(config_)},
                      {"state", state_to_json(state_)},
                      {"adam_steps", optimizer_.steps()},
                      {"data_rng", data_rng_.state()},
                      {"noise_rng", noise_rng_.state()},
                      {"aux_rng", aux_rng_.state()},
                      {"epoch_monitor", epoch_monitor_},
                      {"target_domain", split_.target_domain},
                      {"source_domains", split_.source_domains},
                      {"variant", to_string(config_.variant)}};
    // History first: a checkpoint on disk always has its history beside it.
    const fs::path history_path = path.parent_path() / kHistoryName;
    {
        std::ofstream os(history_path, std::ios::trunc);
        if (!os) throw DataError("cannot write " + history_path.string());
        for (const auto& r : history_) os << history_line(r) << '\n';
    }
    ckpt::save(path, c);
}

void Trainer::resume(const fs::path& checkpoint)
{
    const ckpt::Checkpoint c = ckpt::load(checkpoint);
    if (!(c.config == net_config_)) throw ConfigError("checkpoint network config differs from the requested one");
    const json& meta = c.metadata;
    json expected = train_config_to_json(config_), stored = meta.at("train_config");
    expected.erase("epochs");
    stored.erase("epochs");
    if (expected != stored) {
        throw ConfigError("checkpoint was written with a different training configuration: " + stored.dump());
    }
    if (meta.at("target_domain").get<int>() != split_.target_domain) {
        throw ConfigError("checkpoint targets a different domain");
    }
    ckpt::restore(model_, c);
    state_ = state_from_json(meta.at("state"));
    optimizer_.set_steps(meta.at("adam_steps").get<std::int64_t>());
    optimizer_.first_moments().clear();
    optimizer_.second_moments().clear();
    for (const auto& [name, t] : c.tensors) {
        if (name.rfind("adam.m.", 0) == 0) optimizer_.first_moments().emplace(name.substr(7), t);
        if (name.rfind("adam.v.", 0) == 0) optimizer_.second_moments().emplace(name.substr(7), t);
    }
    data_rng_.restore(meta.at("data_rng").get<std::string>());
    noise_rng_.restore(meta.at("noise_rng").get<std::string>());
    aux_rng_.restore(meta.at("aux_rng").get<std::string>());
    epoch_monitor_ = meta.at("epoch_monitor").get<std::vector<double>>();
    history_.clear();
    const fs::path history_path = checkpoint.parent_path() / kHistoryName;
    if (fs::exists(history_path)) {
        for (auto& r : read_history(history_path))
            if (r.step < state_.step) history_.push_back(r);
    }
}

void tune_allocator()
{
#ifdef __GLIBC__
    static const bool applied = [] {
        // Tensors of a few MB are freed and reallocated every step; serving
        // them from the heap instead of fresh mmap pages avoids page faults.
        mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
        mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
        return true;
    }();
    (void)applied;
#endif
}

}  // namespace cdd::train
