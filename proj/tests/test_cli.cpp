// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "idu/checkpoint.hpp"
#include "idu/data.hpp"
#include "idu/networks.hpp"

namespace fs = std::filesystem;
using idu::cli::run;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("idu_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string make_data(const std::string& name, std::size_t chunks = 600, std::size_t classes = 3) {
    const auto r = cli({"gen-data", "--out", path(name), "--classes", std::to_string(classes), "--width", "8",
                        "--chunks", std::to_string(chunks), "--action-len", "6", "--seed", "4"});
    EXPECT_EQ(r.code, 0) << r.err;
    return path(name);
  }

  std::vector<std::string> small_detector(const std::string& data, const std::string& out,
                                          const std::string& model = "idn") {
    return {"train", "--model", model, "--data", data, "--ckpt-out", out, "--hidden", "8", "--epochs", "1",
            "--max-batches", "3", "--batch", "16", "--past", "4"};
  }

  std::vector<std::string> small_anticipator(const std::string& data, const std::string& out) {
    return {"train", "--model", "iin", "--data", data, "--ckpt-out", out, "--hidden", "8", "--reduced", "6",
            "--label-width", "4", "--head1", "8", "--head2", "8", "--epochs", "1", "--max-batches", "3",
            "--past", "4", "--horizon", "4"};
  }

  fs::path dir_;
};

TEST_F(CliTest, UsageErrorsExitWithOne) {
  EXPECT_EQ(cli({}).code, 1);
  EXPECT_EQ(cli({"frobnicate"}).code, 1);
  EXPECT_EQ(cli({"params", "--model", "gru", "--bogus", "1"}).code, 1);
  EXPECT_EQ(cli({"params", "--model", "gru", "stray"}).code, 1);
  EXPECT_EQ(cli({"params", "--model", "nope"}).code, 1);
  EXPECT_EQ(cli({"params", "--dims", "q=3"}).code, 1);
  EXPECT_EQ(cli({"gen-data"}).code, 1);  // --out is required
  EXPECT_EQ(cli({"gen-data", "--out", path("x"), "--classes", "9", "--width", "4"}).code, 1);
  EXPECT_EQ(cli({"gen-data", "--out", path("x"), "--chunks", "many"}).code, 1);
}

TEST_F(CliTest, HelpExitsWithZero) {
  const auto r = cli({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("--ckpt-out"), std::string::npos);
}

TEST_F(CliTest, UnknownFlagIsReported) {
  const auto r = cli({"params", "--model", "gru", "--hiden", "3"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--hiden"), std::string::npos);
}

TEST_F(CliTest, MissingOrCorruptInputExitsWithTwo) {
  EXPECT_EQ(cli({"eval", "--ckpt", path("none"), "--data", path("none"), "--report-out", path("r")}).code, 2);
  std::ofstream(path("junk")) << "not a feature file";
  EXPECT_EQ(cli(small_detector(path("junk"), path("c"))).code, 2);
}

TEST_F(CliTest, GenDataIsDeterministicAndRecordsItsConfig) {
  const auto a = make_data("a.bin");
  const auto b = make_data("b.bin");
  EXPECT_EQ(slurp(a), slurp(b));
  const auto run_cfg = slurp(a + ".run");
  EXPECT_NE(run_cfg.find("run.command=gen-data\n"), std::string::npos);
  EXPECT_NE(run_cfg.find("run.seed=4\n"), std::string::npos);
  EXPECT_NE(run_cfg.find("run.chunks=600\n"), std::string::npos);
  const auto s = idu::read_features(a);
  EXPECT_EQ(s.length(), 600u);
  EXPECT_EQ(s.width(), 8u);
  EXPECT_EQ(s.num_classes, 4u);
}

TEST_F(CliTest, GenDataHandlesEmptyAndSingleChunkStreams) {
  for (const char* n : {"0", "1"}) {
    const auto r = cli({"gen-data", "--out", path(n), "--classes", "2", "--width", "4", "--chunks", n});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(idu::read_features(path(n)).length(), std::stoul(n));
  }
}

TEST_F(CliTest, ConfigFileIsOverriddenByFlags) {
  std::ofstream(path("c.cfg")) << "# synthetic settings\n"
                               << "classes = 2\n"
                               << "width=4   # trailing comment\n"
                               << "\n"
                               << "chunks=50\n"
                               << "seed=9\n";
  const auto r = cli({"gen-data", "--config", path("c.cfg"), "--out", path("d"), "--chunks", "70"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto s = idu::read_features(path("d"));
  EXPECT_EQ(s.length(), 70u);
  EXPECT_EQ(s.width(), 4u);
  EXPECT_NE(slurp(path("d.run")).find("run.seed=9\n"), std::string::npos);
}

TEST_F(CliTest, EmbeddedRunConfigReproducesTheArtifact) {
  const auto a = make_data("a.bin");
  // The sidecar names its own output; redirect it.
  const auto r = cli({"gen-data", "--config", a + ".run", "--out", path("b.bin")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(a), slurp(path("b.bin")));
}

TEST_F(CliTest, BadConfigFilesAreUsageErrors) {
  std::ofstream(path("bad.cfg")) << "classes\n";
  EXPECT_EQ(cli({"gen-data", "--config", path("bad.cfg"), "--out", path("d")}).code, 1);
  std::ofstream(path("unknown.cfg")) << "colour=blue\n";
  EXPECT_EQ(cli({"gen-data", "--config", path("unknown.cfg"), "--out", path("d")}).code, 1);
  EXPECT_EQ(cli({"gen-data", "--config", path("missing.cfg"), "--out", path("d")}).code, 1);
}

TEST_F(CliTest, DetectorTrainAndEvalRoundTrip) {
  const auto data = make_data("d.bin");
  auto r = cli(small_detector(data, path("det.ckpt")));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ckpt = idu::read_checkpoint(path("det.ckpt"));
  EXPECT_EQ(idu::model_family(ckpt), "detector");
  EXPECT_EQ(ckpt.config.at("run.command"), "train");
  EXPECT_EQ(ckpt.config.at("run.hidden"), "8");
  EXPECT_EQ(ckpt.config.at("train.past"), "4");
  EXPECT_TRUE(fs::exists(path("det.ckpt.log")));

  r = cli({"eval", "--ckpt", path("det.ckpt"), "--data", data, "--report-out", path("rep.txt"), "--portions",
           "--gates", "--gate-windows", "50"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = slurp(path("rep.txt"));
  EXPECT_NE(report.find("config.run.command=eval\n"), std::string::npos);
  EXPECT_NE(report.find("config.ckpt.run.command=train\n"), std::string::npos);
  EXPECT_NE(report.find("detection.map="), std::string::npos);
  const auto csv = slurp(path("rep.txt.csv"));
  EXPECT_EQ(csv.rfind("# ", 0), 0u);
  EXPECT_NE(csv.find("class,positives,w,ap,cap\n"), std::string::npos);
  EXPECT_TRUE(fs::exists(path("rep.txt.portions.csv")));
  EXPECT_TRUE(fs::exists(path("rep.txt.gates.csv")));
}

TEST_F(CliTest, TrainingAndEvaluationAreBitIdentical) {
  const auto data = make_data("d.bin");
  const auto train = small_detector(data, path("a.ckpt"));
  const std::vector<std::string> eval = {"eval", "--ckpt", path("a.ckpt"), "--data", data, "--report-out",
                                         path("r"), "--portions", "--gates"};
  ASSERT_EQ(cli(train).code, 0);
  ASSERT_EQ(cli(eval).code, 0);
  std::vector<std::string> first;
  for (const char* f : {"a.ckpt", "a.ckpt.log", "r", "r.csv", "r.portions.csv", "r.gates.csv"}) {
    first.push_back(slurp(path(f)));
  }
  ASSERT_EQ(cli(train).code, 0);
  ASSERT_EQ(cli(eval).code, 0);
  std::size_t i = 0;
  for (const char* f : {"a.ckpt", "a.ckpt.log", "r", "r.csv", "r.portions.csv", "r.gates.csv"}) {
    EXPECT_EQ(first[i++], slurp(path(f))) << f;
  }
}

TEST_F(CliTest, SeedChangesTheModel) {
  const auto data = make_data("d.bin");
  auto args = small_detector(data, path("a.ckpt"));
  ASSERT_EQ(cli(args).code, 0);
  args[6] = path("b.ckpt");
  args.insert(args.end(), {"--seed", "1"});
  ASSERT_EQ(cli(args).code, 0);
  EXPECT_FALSE(idu::read_checkpoint(path("a.ckpt")).tensors == idu::read_checkpoint(path("b.ckpt")).tensors);
}

TEST_F(CliTest, ModelChoiceSelectsTheCell) {
  const auto data = make_data("d.bin");
  ASSERT_EQ(cli(small_detector(data, path("gru.ckpt"), "gru")).code, 0);
  ASSERT_EQ(cli(small_detector(data, path("ci.ckpt"), "ci")).code, 0);
  EXPECT_EQ(idu::detector_from_checkpoint(idu::read_checkpoint(path("gru.ckpt"))).config.cell, idu::CellKind::Gru);
  EXPECT_EQ(idu::detector_from_checkpoint(idu::read_checkpoint(path("ci.ckpt"))).config.cell, idu::CellKind::Ci);

  auto args = small_detector(data, path("x.ckpt"), "iiu");
  args.insert(args.end(), {"--task", "detect"});
  EXPECT_EQ(cli(args).code, 1);
  args = small_detector(data, path("x.ckpt"), "ci");
  args.insert(args.end(), {"--task", "anticipate"});
  EXPECT_EQ(cli(args).code, 1);
}

TEST_F(CliTest, PseudoLabelsNeedADetector) {
  const auto data = make_data("d.bin");
  const auto r = cli(small_anticipator(data, path("a.ckpt")));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--idn-ckpt"), std::string::npos);
}

TEST_F(CliTest, AnticipatorTrainAndEvalRoundTrip) {
  const auto data = make_data("d.bin");
  ASSERT_EQ(cli(small_detector(data, path("det.ckpt"))).code, 0);
  auto args = small_anticipator(data, path("ant.ckpt"));
  args.insert(args.end(), {"--idn-ckpt", path("det.ckpt")});
  auto r = cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(idu::model_family(idu::read_checkpoint(path("ant.ckpt"))), "anticipator");

  r = cli({"eval", "--ckpt", path("ant.ckpt"), "--data", data, "--report-out", path("rep"), "--horizons", "0.5,1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("0.5 s: mAP"), std::string::npos);
  EXPECT_NE(r.out.find("1 s: mAP"), std::string::npos);

  EXPECT_EQ(cli({"eval", "--ckpt", path("ant.ckpt"), "--data", data, "--report-out", path("rep"), "--horizons",
                 "9"})
                .code,
            1);
  EXPECT_EQ(cli({"eval", "--ckpt", path("ant.ckpt"), "--data", data, "--report-out", path("rep"), "--gates"}).code,
            1);

  // Oracle labels need no detector.
  args = small_anticipator(data, path("oracle.ckpt"));
  args.insert(args.end(), {"--labels", "oracle"});
  ASSERT_EQ(cli(args).code, 0);
  EXPECT_EQ(cli({"eval", "--ckpt", path("oracle.ckpt"), "--data", data, "--report-out", path("o")}).code, 0);
}

TEST_F(CliTest, PerfectDetectorScoresOne) {
  ASSERT_EQ(cli({"gen-data", "--out", path("clean.bin"), "--classes", "3", "--width", "4", "--chunks", "300",
                 "--noise", "0", "--seed", "2"})
                .code,
            0);
  // Noise-free chunks sit on one-hot corners; an identity RNN reads the class off the current chunk.
  idu::Rng rng(0);
  idu::DetectorModel m = idu::DetectorModel::create({idu::CellKind::Rnn, 4, 4, 4}, rng);
  m.cell.at("W_xh") = idu::Matrix::identity(4);
  m.cell.at("W_hh").fill(0.0);
  m.head.at("W_hp") = idu::Matrix::identity(4);
  idu::write_checkpoint(idu::to_checkpoint(m), path("perfect.ckpt"));
  const auto r = cli({"eval", "--ckpt", path("perfect.ckpt"), "--data", path("clean.bin"), "--report-out",
                      path("rep"), "--past", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("mAP 1 mcAP 1\n"), std::string::npos) << r.out;
}

TEST_F(CliTest, ClassCountMismatchIsADataError) {
  const auto data = make_data("d.bin", 600, 3);
  const auto other = make_data("e.bin", 600, 4);
  ASSERT_EQ(cli(small_detector(data, path("det.ckpt"))).code, 0);
  EXPECT_EQ(cli({"eval", "--ckpt", path("det.ckpt"), "--data", other, "--report-out", path("r")}).code, 2);
}

TEST_F(CliTest, DivergenceExitsWithThree) {
  const auto data = make_data("d.bin");
  auto args = small_detector(data, path("det.ckpt"));
  args.insert(args.end(), {"--lr", "1e300", "--clip", "0"});
  EXPECT_EQ(cli(args).code, 3);
}

TEST_F(CliTest, ParamsReportsRatios) {
  auto r = cli({"params", "--model", "idu", "--dims", "d_x=3072,e=512,K=20"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("ratio.params_vs_gru=0.5733"), std::string::npos);
  r = cli({"params", "--model", "iiu-light"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("ratio.params_vs_iiu=0.70"), std::string::npos);
}

TEST_F(CliTest, GradcheckPassesForEveryModel) {
  for (const char* m : {"idn", "gru", "lstm", "iin", "iiu-light"}) {
    const auto r = cli({"gradcheck", "--model", m});
    EXPECT_EQ(r.code, 0) << m << '\n' << r.out << r.err;
    EXPECT_NE(r.out.find("result=pass"), std::string::npos) << m;
  }
  const auto r = cli({"gradcheck", "--model", "gru", "--task", "anticipate", "--dims", "d_x=5,e=4,K=2"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
}

TEST_F(CliTest, AblateWritesATable) {
  const auto data = make_data("d.bin", 400);
  const auto r = cli({"ablate", "--suite", "oad", "--data", data, "--seeds", "1", "--past", "4", "--det-hidden",
                      "6", "--det-epochs", "1", "--det-max-batches", "2", "--det-batch", "16", "--gate-windows", "20",
                      "--report-out", path("oad.txt")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(path("oad.txt.csv"));
  EXPECT_NE(csv.find("# run.suite=oad\n"), std::string::npos);
  for (const char* v : {"rnn,0,", "lstm,0,", "gru,0,", "ci,0,", "idn,0,", "idn,mean,"}) {
    EXPECT_NE(csv.find(v), std::string::npos) << v;
  }
  EXPECT_NE(slurp(path("oad.txt")).find("mean.idn.map="), std::string::npos);
  EXPECT_EQ(cli({"ablate", "--suite", "bogus", "--data", data}).code, 1);
}

TEST_F(CliTest, AblateAnticipationSuites) {
  const auto data = make_data("d.bin", 400);
  const std::vector<std::string> common = {
      "--data", data, "--seeds", "1", "--past", "4", "--horizon", "4", "--det-hidden", "6", "--det-epochs", "1",
      "--det-max-batches", "2", "--ant-hidden", "6", "--ant-reduced", "4", "--ant-label-width", "3",
      "--ant-head1", "6", "--ant-head2", "6", "--ant-epochs", "1", "--ant-max-batches", "2"};
  auto args = common;
  args.insert(args.begin(), {"ablate", "--suite", "integration"});
  auto r = cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* v : {"full,0,", "no-hcomb,0,", "no-hcomb-no-weighting,0,"}) {
    EXPECT_NE(r.out.find(v), std::string::npos) << v;
  }
  args = common;
  args.insert(args.begin(), {"ablate", "--suite", "aa"});
  r = cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* v : {"rnn,0,", "lstm,0,", "idu,0,", "gru,0,", "iiu,0,", "iiu-oracle,0,"}) {
    EXPECT_NE(r.out.find(v), std::string::npos) << v;
  }
}

}  // namespace
