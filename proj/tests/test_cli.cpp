#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <string>

#include "disiv/io.hpp"

using namespace disiv;

namespace {

const fs::path kWork = fs::temp_directory_path() / "disiv_test_cli";

int run(const std::string& args) {
  const std::string cmd = std::string(DISIV_CLI_PATH) + " " + args + " > " +
                          (kWork / "stdout.txt").string() + " 2> " +
                          (kWork / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string config(const char* name) { return std::string(DISIV_CONFIG_DIR) + "/" + name; }

std::string path(const char* name) { return (kWork / name).string(); }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
};

}  // namespace

TEST_F(Cli, MissingSubcommandIsUsageError) { EXPECT_EQ(run(""), 2); }

TEST_F(Cli, UnknownFlagIsUsageError) { EXPECT_EQ(run("generate --bogus"), 2); }

TEST_F(Cli, NonexistentConfigIsUsageError) {
  EXPECT_EQ(run("generate --config " + path("absent.json")), 2);
}

TEST_F(Cli, InvalidConfigFieldIsConfigError) {
  write_file(kWork / "bad.json", R"({"train": {"betta": 1}})");
  EXPECT_EQ(run("generate --config " + path("bad.json") + " --out " + path("x")), 2);
  EXPECT_NE(read_file(kWork / "stderr.txt").find("train.betta"), std::string::npos);
}

TEST_F(Cli, GenerateTrainEvaluatePipeline) {
  const std::string toy = config("toy.json");
  ASSERT_EQ(run("generate --config " + toy + " --seed 5 --out " + path("bundle")), 0);
  EXPECT_TRUE(fs::exists(kWork / "bundle" / "manifest.json"));
  ASSERT_EQ(run("train --config " + toy + " --bundle " + path("bundle") +
                " --split 1 --ablation no_ortho --out " + path("ckpt")),
            0);
  for (const char* f : {"stage1.json", "stage2.json", "training_log.csv"})
    EXPECT_TRUE(fs::exists(kWork / "ckpt" / f)) << f;
  ASSERT_EQ(run("evaluate --config " + toy + " --bundle " + path("bundle") + " --checkpoint " +
                path("ckpt") + " --split 1 --out " + path("eval")),
            0);
  const auto report = json::parse(read_file(kWork / "eval" / "report.json"));
  EXPECT_EQ(report.at("schema_version"), 1);
  EXPECT_EQ(report.at("runs").at(0).at("method"), "no_ortho");

  EXPECT_EQ(run("evaluate --config " + toy + " --bundle " + path("bundle") + " --checkpoint " +
                path("ckpt") + " --split 0 --out " + path("eval2")),
            4);
  ASSERT_EQ(run("generate --config " + toy + " --seed 6 --out " + path("bundle2")), 0);
  EXPECT_EQ(run("evaluate --config " + toy + " --bundle " + path("bundle2") + " --checkpoint " +
                path("ckpt") + " --split 1 --out " + path("eval3")),
            4);
}

TEST_F(Cli, CorruptBundleIsIntegrityError) {
  ASSERT_EQ(run("generate --config " + config("toy.json") + " --out " + path("corrupt")), 0);
  write_file(kWork / "corrupt" / "X.csv", "0,0,0,0,0,0,0,0\n");
  EXPECT_EQ(run("train --config " + config("toy.json") + " --bundle " + path("corrupt") +
                " --out " + path("c2")),
            4);
}

TEST_F(Cli, MissingBundleIsIoError) {
  EXPECT_EQ(run("train --bundle " + path("no_such_bundle") + " --out " + path("c3")), 3);
}

TEST_F(Cli, EdgeListReplacesSyntheticGraph) {
  write_file(kWork / "edges.txt", "0 1\n1 2\n2 3\n3 4\n4 5\n5 6\n6 7\n7 8\n8 9\n9 0\n");
  write_file(kWork / "ring.json", R"({"dgp": {"K": 4, "n_repeats": 1}})");
  ASSERT_EQ(run("generate --config " + path("ring.json") + " --edge-list " + path("edges.txt") +
                " --out " + path("ring")),
            0);
  const auto m = json::parse(read_file(kWork / "ring" / "manifest.json"));
  EXPECT_EQ(m.at("n_nodes"), 10);
  EXPECT_EQ(m.at("n_edges"), 10);
  write_file(kWork / "broken.txt", "0 x\n");
  EXPECT_EQ(run("generate --config " + path("ring.json") + " --edge-list " + path("broken.txt") +
                " --out " + path("ring2")),
            2);
}

TEST_F(Cli, SweepIsByteReproducible) {
  ASSERT_EQ(run("sweep --config " + config("toy.json") + " --out " + path("sweep_a")), 0);
  ASSERT_EQ(run("sweep --config " + config("toy.json") + " --out " + path("sweep_b")), 0);
  EXPECT_EQ(read_file(kWork / "sweep_a" / "aggregate.csv"),
            read_file(kWork / "sweep_b" / "aggregate.csv"));
  EXPECT_EQ(read_file(kWork / "sweep_a" / "report.json"),
            read_file(kWork / "sweep_b" / "report.json"));
}

TEST_F(Cli, GradcheckPasses) {
  EXPECT_EQ(run("gradcheck --seed 2"), 0);
  EXPECT_NE(read_file(kWork / "stdout.txt").find("stage2_loss"), std::string::npos);
}
