#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "slotalign/io.hpp"

namespace fs = std::filesystem;
using slotalign::read_file;
using slotalign::write_file_atomic;

namespace {

// One directory per test: ctest runs the cases as separate, possibly
// concurrent processes.
const fs::path& workdir() {
  static const fs::path dir = [] {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    auto d = fs::temp_directory_path() / ("slotalign_cli_" + std::string(info->name()));
    fs::remove_all(d);
    fs::create_directories(d);
    write_file_atomic(d / "tiny.cfg",
                      "corpus.frame_period_ms = 40\n"
                      "aligner.grid_step_ms = 40\n"
                      "aligner.model_dim = 16\n"
                      "aligner.n_heads = 2\n"
                      "aligner.n_layers = 1\n"
                      "aligner.recency_slopes = 1, 0\n"
                      "aligner.encoder_slopes = 1, 0\n"
                      "schedule.steps = 10\n"
                      "schedule.batch_size = 2\n"
                      "schedule.log_every = 5\n"
                      "ctc.model_dim = 16\n"
                      "ctc.n_heads = 2\n"
                      "ctc.n_layers = 1\n"
                      "ctc_schedule.steps = 10\n"
                      "ctc_schedule.batch_size = 2\n"
                      "ctc_schedule.log_every = 5\n"
                      "train.mix_fraction = 0.25\n");
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(SLOTALIGN_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string p(const std::string& name) { return (workdir() / name).string(); }

}  // namespace

TEST(Cli, GenWithZeroCountWritesEmptyManifest) {
  ASSERT_EQ(run("gen --config " + p("tiny.cfg") + " --out " + p("empty/m.jsonl") + " --count 0"), 0);
  EXPECT_TRUE(fs::exists(p("empty/m.jsonl")));
  EXPECT_EQ(read_file(p("empty/m.jsonl")), "");
}

TEST(Cli, TrainAlignEvalRoundTrip) {
  ASSERT_EQ(run("gen --config " + p("tiny.cfg") + " --out " + p("c/train.jsonl") + " --count 8 --seed 3"), 0);
  ASSERT_EQ(run("train --config " + p("tiny.cfg") + " --manifest " + p("c/train.jsonl") + " --out " + p("slot")), 0);
  EXPECT_TRUE(fs::exists(p("slot/model.sfaw")));
  EXPECT_EQ(read_file(p("slot/loss_trace.tsv")).substr(0, 13), "step\tloss\tlr\n");

  ASSERT_EQ(run("align --checkpoint " + p("slot/model.sfaw") + " --manifest " + p("c/train.jsonl") + " --out " +
                p("slot/align.jsonl")),
            0);
  const auto first = read_file(p("slot/align.jsonl"));
  const auto j = nlohmann::json::parse(first.substr(0, first.find('\n')));
  EXPECT_TRUE(j.contains("id"));
  EXPECT_EQ(j.at("forward_passes").get<int>(), 1);
  EXPECT_FALSE(j.at("tokens").empty());

  ASSERT_EQ(run("eval --alignments " + p("slot/align.jsonl") + " --manifest " + p("c/train.jsonl") + " --ref pseudo --out " +
                p("slot/report.json")),
            0);
  const auto rep = nlohmann::json::parse(read_file(p("slot/report.json")));
  EXPECT_EQ(rep.at("reference"), "pseudo");
  EXPECT_TRUE(rep.at("suites").at(0).contains("aas_ms"));
  EXPECT_EQ(read_file(p("slot/report.curve.tsv")).substr(0, 28), "ordinal\tmean_abs_shift_ms\tn\n");

  // explicit subset, then a duplicate index
  ASSERT_EQ(run("align --checkpoint " + p("slot/model.sfaw") + " --manifest " + p("c/train.jsonl") + " --tokens 0,1 --out " +
                p("slot/sub.jsonl")),
            0);
  const auto sub = read_file(p("slot/sub.jsonl"));
  EXPECT_EQ(nlohmann::json::parse(sub.substr(0, sub.find('\n'))).at("tokens").size(), 2u);
  EXPECT_EQ(run("align --checkpoint " + p("slot/model.sfaw") + " --manifest " + p("c/train.jsonl") + " --tokens 1,1 --out " +
                p("slot/dup.jsonl")),
            4);
  EXPECT_FALSE(fs::exists(p("slot/dup.jsonl")));
}

TEST(Cli, CtcBaselineTrainsAndAligns) {
  ASSERT_EQ(run("gen --config " + p("tiny.cfg") + " --out " + p("d/train.jsonl") + " --count 6"), 0);
  ASSERT_EQ(run("train --config " + p("tiny.cfg") + " --model ctc --manifest " + p("d/train.jsonl") + " --out " + p("ctc")), 0);
  EXPECT_EQ(run("align --checkpoint " + p("ctc/model.sfaw") + " --manifest " + p("d/train.jsonl") + " --out " +
                p("ctc/align.jsonl")),
            0);
  EXPECT_EQ(run("align --checkpoint " + p("ctc/model.sfaw") + " --manifest " + p("d/train.jsonl") + " --tokens 0 --out " +
                p("ctc/x.jsonl")),
            4);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run("gen --config " + p("missing.cfg") + " --out " + p("x/m.jsonl") + " --count 1"), 2);
  write_file_atomic(p("bad_syntax.cfg"), "this is not a config line\n");
  EXPECT_EQ(run("gen --config " + p("bad_syntax.cfg") + " --out " + p("x/m.jsonl") + " --count 1"), 3);
  write_file_atomic(p("bad_value.cfg"), "schedule.p_dynamic = 2\n");
  EXPECT_EQ(run("gen --config " + p("bad_value.cfg") + " --out " + p("x/m.jsonl") + " --count 1"), 4);
  EXPECT_EQ(run("align --checkpoint " + p("nope.sfaw") + " --manifest " + p("nope.jsonl") + " --out " + p("x/a.jsonl")), 2);
  write_file_atomic(p("garbage.jsonl"), "{not json\n");
  EXPECT_EQ(run("eval --alignments " + p("garbage.jsonl") + " --manifest " + p("garbage.jsonl") + " --out " + p("x/r.json")), 3);
  EXPECT_EQ(run("frobnicate"), 4);
  EXPECT_EQ(run("--help"), 0);
}
