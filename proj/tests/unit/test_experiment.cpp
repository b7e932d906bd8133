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

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <doctest.h>
#include <json.hpp>

#include "cdd/errors.hpp"
#include "cdd/experiment.hpp"
#include "temp_dir.hpp"

namespace ex = cdd::experiment;
namespace fs = std::filesystem;

namespace {

ex::ExperimentConfig quick_config(const fs::path& data_root, const fs::path& out)
{
    ex::ExperimentConfig c;
    c.net.anatomy_channels = 4;
    c.net.style_dim = 4;
    c.net.unet_channels = {4, 8};
    c.net.style_channels = {4, 4, 4, 4};
    c.net.decoder_channels = 4;
    c.net.segmenter_channels = 4;
    c.train.epochs = 1;
    c.train.batch_per_domain = 2;
    c.train.crop_height = c.train.crop_width = 16;
    c.data_root = data_root;
    c.output_dir = out;
    c.target_domain = 2;
    c.gen_domains = 3;
    c.gen_samples = 4;
    c.gen_height = c.gen_width = 32;
    c.max_test_per_domain = 2;
    return c;
}

int run_cli(const std::string& args)
{
    const std::string cmd = std::string(CDD_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("gen-data writes every domain and refuses to overwrite")
{
    TempDir dir;
    auto c = quick_config(dir.path() / "ds", dir.path() / "out");
    std::ostringstream log;
    ex::cmd_gen_data(c, false, log);
    CHECK(cdd::data::list_domains(c.data_root) == std::vector<int>{0, 1, 2});
    CHECK(fs::exists(c.data_root / "manifest.json"));
    CHECK_THROWS_AS(ex::cmd_gen_data(c, false, log), cdd::ConfigError);
    CHECK_NOTHROW(ex::cmd_gen_data(c, true, log));

    auto single = quick_config(dir.path() / "single", dir.path() / "o");
    single.gen_domains = 1;
    std::ostringstream w2;
    ex::cmd_gen_data(single, false, w2);
    CHECK(w2.str().find("warning") != std::string::npos);
}

TEST_CASE("the first four domain styles are fixed and distinct")
{
    for (int a = 0; a < 4; ++a) {
        CHECK(ex::default_domain_style(a) == ex::default_domain_style(a));
        for (int b = a + 1; b < 4; ++b) CHECK_FALSE(ex::default_domain_style(a) == ex::default_domain_style(b));
    }
    CHECK(ex::default_domain_style(0) == cdd::data::DomainStyleSpec{0.0, 1.0, {1.0, 1.0, 1.0}, 0.02, 0.0});
}

TEST_CASE("training reads no target-domain file and records its hyperparameters")
{
    TempDir dir;
    auto c = quick_config(dir.path() / "ds", dir.path() / "run");
    std::ostringstream log;
    ex::cmd_gen_data(c, false, log);

    cdd::data::FileAccessLog access;
    const auto outcome = ex::cmd_train(c, &access);
    CHECK_FALSE(access.paths().empty());
    CHECK_FALSE(access.touched_domain(c.data_root, 2));
    CHECK(access.touched_domain(c.data_root, 0));
    CHECK(fs::exists(outcome.checkpoint));

    std::ifstream in(c.output_dir / "manifest.json");
    const auto manifest = nlohmann::json::parse(in);
    CHECK(manifest["loss_weights"]["lambda1"] == 1.0);
    CHECK(manifest["loss_weights"]["lambda2"] == 0.001);
    CHECK(manifest["loss_weights"]["lambda3"] == 0.01);
    CHECK(manifest["loss_weights"]["lambda4"] == 1.0);
    CHECK(manifest["loss_weights"]["tau"] == 0.1);
    CHECK(manifest["train"]["lr"] == 1e-3);

    const auto r1 = ex::cmd_eval(c, {outcome.checkpoint});
    const auto r2 = ex::cmd_eval(c, {outcome.checkpoint});
    CHECK(r1.rows == r2.rows);
    CHECK(r1.rows[0].n_images == 2);
    CHECK(fs::exists(c.output_dir / "eval.csv"));

    auto other = c;
    other.net.style_dim = 6;
    CHECK_THROWS_AS(ex::cmd_eval(other, {outcome.checkpoint}), cdd::ConfigError);
}

TEST_CASE("ablation reports every variant and seed")
{
    TempDir dir;
    auto c = quick_config(dir.path() / "ds", dir.path() / "abl");
    c.seeds = {0, 1};
    c.targets = {2};
    const auto dataset = ex::generate_synthetic_dataset(3, 4, 32, 32, 0);
    const auto result = ex::run_ablation(dataset, c);
    CHECK(result.runs.size() == 8);
    for (const auto& v : c.variants) {
        for (std::uint64_t s : c.seeds) {
            const double d = result.mean_dice(v, s);
            CHECK(d >= 0.0);
            CHECK(d <= 100.0);
        }
    }
    std::ostringstream report;
    ex::write_ablation_report(report, result, c);
    CHECK(report.str().find("sctda") != std::string::npos);
}

TEST_CASE("command-line exit codes")
{
    TempDir dir;
    const std::string ds = (dir.path() / "ds").string();
    CHECK(run_cli("gen-data --data " + ds + " --domains 3 --samples 3 --height 32 --width 32") == 0);
    CHECK(run_cli("gen-data --data " + ds) == 2);  // not empty
    CHECK(run_cli("train --variant nonsense --data " + ds + " --out " + (dir.path() / "o").string()) == 2);
    CHECK(run_cli("train --data " + (dir.path() / "missing").string() + " --out " + (dir.path() / "o").string()) == 3);
    CHECK(run_cli("eval --data " + ds + " --out " + (dir.path() / "o").string() + " --checkpoint " +
                  (dir.path() / "none.ckpt").string()) == 3);
    CHECK(run_cli("--bogus-flag train") == 2);
    CHECK(run_cli("train --data " + ds + " --out " + (dir.path() / "t").string() +
                  " --target 2 --epochs 1 --batch 2 --crop 16 --unet-channels 4 8 --style-channels 4 4 4 4"
                  " --anatomy-channels 4 --style-dim 4 --decoder-channels 4 --segmenter-channels 4") == 0);
    CHECK(fs::exists(dir.path() / "t" / "last.ckpt"));
    CHECK(run_cli("train --resume --data " + ds + " --out " + (dir.path() / "t").string() +
                  " --target 2 --epochs 2 --batch 2 --crop 16 --unet-channels 4 8 --style-channels 4 4 4 4"
                  " --anatomy-channels 4 --style-dim 4 --decoder-channels 4 --segmenter-channels 4") == 0);
    CHECK(run_cli("train --resume --data " + ds + " --out " + (dir.path() / "t").string() +
                  " --target 2 --epochs 3 --lr 0.01 --batch 2 --crop 16 --unet-channels 4 8 --style-channels 4 4 4 4"
                  " --anatomy-channels 4 --style-dim 4 --decoder-channels 4 --segmenter-channels 4") == 2);
    CHECK(run_cli("train --data " + ds + " --out " + (dir.path() / "d").string() +
                  " --target 2 --epochs 1 --batch 2 --crop 16 --lr 1e30 --unet-channels 4 8 --style-channels 4 4 4 4"
                  " --anatomy-channels 4 --style-dim 4 --decoder-channels 4 --segmenter-channels 4") == 4);
}
