/*
 * Copyright (c) 2026 The mmgem Authors
 *
 * Licensed under the Apache License, Version 2.0;
 * You may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an 'AS IS' BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"

using namespace mmgem;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args, std::string* err_text = nullptr) {
  args.insert(args.begin(), "mmgem");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), err);
  if (err_text) *err_text = err.str();
  return code;
}

nlohmann::json load(const fs::path& p) {
  std::ifstream is(p);
  return nlohmann::json::parse(is);
}

struct Workspace {
  fs::path dir, data, config, ckpt;
  Workspace() {
    dir = fs::temp_directory_path() / "mmgem_test_cli";
    fs::remove_all(dir);
    fs::create_directories(dir);
    data = dir / "data";
    config = dir / "config.json";
    ckpt = dir / "s1.bin";
    std::ofstream(config) << R"({"batch": 4, "steps": 5, "warmup": 1,
      "model": {"patch": 16, "vision_dim": 8, "vision_depth": 1, "vision_heads": 2,
                "lm_dim": 8, "lm_depth": 1, "lm_heads": 2, "embed_dim": 8}})";
    EXPECT_EQ(run({"gen-data", "--out", data.string(), "--n", "6", "--seed", "3"}), 0);
    EXPECT_EQ(run({"train", "--config", config.string(), "--data", data.string(), "--ckpt-out", ckpt.string(),
                   "--seed", "4", "--steps", "2"}),
              0);
  }
};

const Workspace& ws() {
  static const Workspace w;
  return w;
}

}  // namespace

TEST(Cli, UnknownFlagIsAUsageError) {
  std::string err;
  EXPECT_EQ(run({"train", "--bogus"}, &err), 1);
  EXPECT_NE(err.find("Usage"), std::string::npos);
  EXPECT_EQ(run({}), 1);
  EXPECT_EQ(run({"no-such-command"}), 1);
}

TEST(Cli, StageTwoWithoutCheckpointIsAUsageError) {
  EXPECT_EQ(run({"train", "--config", ws().config.string(), "--stage", "two_caption", "--data", ws().data.string(),
                 "--ckpt-out", (ws().dir / "x.bin").string()}),
            1);
  EXPECT_FALSE(fs::exists(ws().dir / "x.bin"));
}

TEST(Cli, GradcheckPassesOnAFreshModel) {
  const auto out = ws().dir / "gradcheck.json";
  EXPECT_EQ(run({"gradcheck", "--seed", "7", "--eps", "1e-5", "--out", out.string()}), 0);
  const auto rep = load(out);
  EXPECT_TRUE(rep.at("passed").get<bool>());
  EXPECT_EQ(rep.at("seed"), 7);
  EXPECT_FALSE(rep.at("stage_one").at("params").empty());
}

TEST(Cli, FlagsOverrideTheConfigFile) {
  const auto rep = load(ws().ckpt.string() + ".report.json");
  EXPECT_EQ(rep.at("config").at("steps"), 2);  // flag
  EXPECT_EQ(rep.at("config").at("batch"), 4);  // file
  EXPECT_EQ(rep.at("config").at("lr_backbone"), TrainConfig().lr_backbone);  // default
  EXPECT_EQ(rep.at("seed"), 4);
  EXPECT_TRUE(fs::exists(ws().ckpt.string() + ".log.csv"));
}

TEST(Cli, EvaluationCommandsWriteReports) {
  const auto d = ws().dir;
  const std::string ck = ws().ckpt.string(), data = ws().data.string();
  ASSERT_EQ(run({"eval-retrieval", "--ckpt", ck, "--data", data, "--k", "1,5", "--out", (d / "r.json").string()}), 0);
  EXPECT_TRUE(load(d / "r.json").at("recall").at("i2t").contains("R@5"));
  EXPECT_EQ(load(d / "r.json").at("checkpoint_meta").at("seed"), 4);
  ASSERT_EQ(run({"eval-retrieval", "--ckpt", ck, "--data", data, "--long-text", "--out", (d / "rl.json").string()}), 0);
  EXPECT_TRUE(load(d / "rl.json").at("long_text").get<bool>());
  ASSERT_EQ(run({"eval-zeroshot", "--ckpt", ck, "--data", data, "--out", (d / "z.json").string()}), 0);
  EXPECT_EQ(load(d / "z.json").at("predictions").size(), 6u);
  ASSERT_EQ(run({"eval-caption", "--ckpt", ck, "--data", data, "--mode", "beam", "--beam-k", "2", "--out",
                 (d / "c.json").string()}),
            0);
  EXPECT_EQ(load(d / "c.json").at("metrics").at("METEOR"), "unsupported");
}

TEST(Cli, ImageCommands) {
  const auto d = ws().dir;
  const std::string ck = ws().ckpt.string(), img = (ws().data / "images" / "000000.ppm").string();
  EXPECT_EQ(run({"caption", "--ckpt", ck, "--image", img, "--region", "0,0,0.5,0.5", "--out", (d / "cap.json").string()}),
            0);
  EXPECT_EQ(load(d / "cap.json").at("stage"), 2);
  EXPECT_EQ(run({"embed", "--ckpt", ck, "--image", img, "--out", (d / "e.json").string()}), 0);
  EXPECT_EQ(load(d / "e.json").at("embedding").size(), 8u);
  EXPECT_EQ(run({"embed", "--ckpt", ck, "--text", "a red circle", "--out", (d / "t.json").string()}), 0);
  EXPECT_EQ(run({"heatmap", "--ckpt", ck, "--image", img, "--text", "a red circle", "--out", (d / "h.csv").string()}), 0);
  EXPECT_TRUE(fs::exists(d / "h.csv"));
  EXPECT_EQ(run({"heatmap", "--ckpt", ck, "--image", img, "--text", "red", "--stage", "two_retrieval", "--out",
                 (d / "h.pgm").string()}),
            0);
  EXPECT_TRUE(fs::exists(d / "h.pgm"));
}

TEST(Cli, InvalidFlagValuesAreUsageErrors) {
  const std::string ck = ws().ckpt.string(), data = ws().data.string();
  const std::string out = (ws().dir / "bad.json").string();
  EXPECT_EQ(run({"eval-retrieval", "--ckpt", ck, "--data", data, "--k", "0,x", "--out", out}), 1);
  EXPECT_EQ(run({"caption", "--ckpt", ck, "--image", "none.ppm", "--region", "0.5,0,0.2,1"}), 1);
  EXPECT_EQ(run({"caption", "--ckpt", ck, "--image", "none.ppm", "--mode", "sample"}), 1);
  EXPECT_EQ(run({"embed", "--ckpt", ck, "--out", out}), 1);
  EXPECT_EQ(run({"train", "--config", ws().config.string(), "--data", data, "--ckpt-out", out, "--stage", "three"}), 1);
}

TEST(Cli, MissingOrCorruptDataIsAFormatError) {
  const std::string out = (ws().dir / "bad.json").string();
  EXPECT_EQ(run({"eval-retrieval", "--ckpt", ws().ckpt.string(), "--data", "/nonexistent", "--out", out}), 2);
  EXPECT_EQ(run({"eval-retrieval", "--ckpt", "/nonexistent.bin", "--data", ws().data.string(), "--out", out}), 2);
  const auto broken = ws().dir / "broken.bin";
  fs::copy_file(ws().ckpt, broken, fs::copy_options::overwrite_existing);
  fs::copy_file(ws().ckpt.string() + ".json", broken.string() + ".json", fs::copy_options::overwrite_existing);
  fs::resize_file(broken, fs::file_size(broken) - 5);
  std::string err;
  EXPECT_EQ(run({"eval-retrieval", "--ckpt", broken.string(), "--data", ws().data.string(), "--out", out}, &err), 2);
  EXPECT_NE(err.find("truncated at offset"), std::string::npos) << err;
}
