#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "setident/data.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string output;  // stdout and stderr
};

Outcome run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(SETIDENT_BIN) + " " + args + " 2>&1";
  Outcome r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

const std::string kData = std::string(FIXTURE_DIR);
const std::string kPrepare =
    "prepare --interactions " + kData + "/interactions.tsv --metadata " + kData + "/items.tsv --synth-seed 1";

// small model so the tests stay fast
const std::string kSmall = "--d 16 --heads 2 --layers 1 --set train.ae_hidden=32,16 --set cf.epochs=20";

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("setident_cli_" + std::to_string(::getpid()) + "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string out(const std::string& sub = "r") const { return "--out " + (dir / sub).string(); }

  void prepared(const std::string& sub = "r") {
    const Outcome p = run(kPrepare + " " + out(sub));
    ASSERT_EQ(p.code, 0) << p.output;
    const Outcome c = run("pretrain-cf --set cf.epochs=20 " + out(sub));
    ASSERT_EQ(c.code, 0) << c.output;
  }

  fs::path dir;
};

}  // namespace

TEST(CliFixture, ShippedFilesMatchGenerator) {
  const auto fx = setident::make_sequential_fixture();
  std::ostringstream a, b;
  setident::write_interactions(a, fx.interactions);
  setident::write_item_metadata(b, fx.metadata);
  EXPECT_EQ(slurp(kData + "/interactions.tsv"), a.str());
  EXPECT_EQ(slurp(kData + "/items.tsv"), b.str());
}

TEST_F(Cli, PreparePrintsCountsAndHash) {
  const Outcome r = run(kPrepare + " " + out());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("users 50\n"), std::string::npos);
  EXPECT_NE(r.output.find("items 30\n"), std::string::npos);
  EXPECT_NE(r.output.find("warm 27\n"), std::string::npos);
  EXPECT_NE(r.output.find("cold 3\n"), std::string::npos);
  const std::string hash = slurp(dir / "r" / "snapshot.hash");
  EXPECT_EQ(hash.size(), 17u);
  EXPECT_EQ(setident::content_hash(slurp(dir / "r" / "snapshot.txt")) + "\n", hash);
}

TEST_F(Cli, PrepareIsDeterministic) {
  ASSERT_EQ(run(kPrepare + " " + out("a")).code, 0);
  ASSERT_EQ(run(kPrepare + " " + out("b")).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "snapshot.hash"), slurp(dir / "b" / "snapshot.hash"));
  EXPECT_EQ(slurp(dir / "a" / "snapshot.txt"), slurp(dir / "b" / "snapshot.txt"));
}

TEST_F(Cli, MissingInputFileExits2WithPath) {
  const std::string missing = (dir / "nowhere" / "x.tsv").string();
  const Outcome r = run("prepare --interactions " + missing + " --synth-seed 1 " + out());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find(missing), std::string::npos) << r.output;
}

TEST_F(Cli, PrepareNeedsExactlyOneSemanticSource) {
  EXPECT_EQ(run("prepare --interactions " + kData + "/interactions.tsv " + out()).code, 2);
  EXPECT_EQ(run(kPrepare + " --semantic " + kData + "/items.tsv " + out()).code, 2);
}

TEST_F(Cli, MalformedInputExits2) {
  std::ofstream(dir / "bad.tsv") << "u1\ti1\tnot-a-time\n";
  const Outcome r = run("prepare --interactions " + (dir / "bad.tsv").string() + " --synth-seed 1 " + out());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("line 1"), std::string::npos) << r.output;
}

TEST_F(Cli, UsageErrorsExit2) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("train --epochs notanumber " + out()).code, 2);
  EXPECT_EQ(run("eval --settings lukewarm " + out()).code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, NoSemWithNoCfExits2WithExplanation) {
  prepared();
  const Outcome r = run("train --no-sem --no-cf " + out());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("--no-sem and --no-cf"), std::string::npos) << r.output;
  EXPECT_EQ(run("sweep --no-sem --no-cf " + out()).code, 2);
}

TEST_F(Cli, MissingPrerequisitesExit2) {
  const Outcome t = run("train " + out());
  EXPECT_EQ(t.code, 2);
  EXPECT_NE(t.output.find("snapshot.txt"), std::string::npos);
  ASSERT_EQ(run(kPrepare + " " + out()).code, 0);
  const Outcome c = run("train " + out());
  EXPECT_EQ(c.code, 2);
  EXPECT_NE(c.output.find("pretrain-cf"), std::string::npos) << c.output;
  const Outcome e = run("eval " + out());
  EXPECT_EQ(e.code, 2);
  EXPECT_NE(e.output.find("model.ckpt"), std::string::npos) << e.output;
}

TEST_F(Cli, NonFiniteTrainingExits3) {
  prepared();
  const Outcome r = run("train --epochs 2 --lr 1e300 --set train.grad_clip=0 " + kSmall + " " + out());
  EXPECT_EQ(r.code, 3) << r.output;
}

TEST_F(Cli, SmokePipelineUnderOneMinute) {
  const auto start = std::chrono::steady_clock::now();
  ASSERT_EQ(run(kPrepare + " " + out()).code, 0);
  ASSERT_EQ(run("pretrain-cf " + out()).code, 0);
  const Outcome t = run("train --epochs 5 " + out());
  ASSERT_EQ(t.code, 0) << t.output;
  const Outcome e = run("eval " + out());
  ASSERT_EQ(e.code, 0) << e.output;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(secs, 60.0);

  EXPECT_EQ(lines(slurp(dir / "r" / "loss_trace.csv")), 6u);
  for (const char* s : {"all", "warm", "cold"}) {
    const std::string csv = slurp(dir / "r" / (std::string("report-") + s + ".csv"));
    EXPECT_EQ(csv.rfind("setting,beta,k,group,recall,ndcg,count\n", 0), 0u) << s;
  }
  EXPECT_NE(e.output.find("Recall@10"), std::string::npos);
  const std::string manifest = slurp(dir / "r" / "manifest.txt");
  EXPECT_NE(manifest.find("model.ckpt\t"), std::string::npos);
  EXPECT_NE(manifest.find("\t42\n"), std::string::npos);
}

TEST_F(Cli, TrainingIsIdempotent) {
  prepared();
  ASSERT_EQ(run("train --epochs 1 --tag a " + kSmall + " " + out()).code, 0);
  ASSERT_EQ(run("train --epochs 1 --tag b " + kSmall + " " + out()).code, 0);
  EXPECT_EQ(slurp(dir / "r" / "model-a.ckpt"), slurp(dir / "r" / "model-b.ckpt"));
  ASSERT_EQ(run("train --epochs 1 --tag c --seed 7 " + kSmall + " " + out()).code, 0);
  EXPECT_NE(slurp(dir / "r" / "model-a.ckpt"), slurp(dir / "r" / "model-c.ckpt"));
}

TEST_F(Cli, SweepBetaEmitsElevenReports) {
  prepared();
  const Outcome r = run("sweep --beta 0:1:0.1 --epochs 1 " + kSmall + " " + out());
  ASSERT_EQ(r.code, 0) << r.output;
  std::size_t reports = 0;
  for (const auto& e : fs::directory_iterator(dir / "r" / "sweep"))
    if (e.path().filename() != "summary.csv") ++reports;
  EXPECT_EQ(reports, 11u);
  EXPECT_NE(r.output.find("11 reports"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "r" / "sweep" / "a0.5_n2_b0.csv"));
  EXPECT_TRUE(fs::exists(dir / "r" / "sweep" / "a0.5_n2_b1.csv"));
}

TEST_F(Cli, ConfigFileWithSectionsAndOverrides) {
  prepared();
  std::ofstream(dir / "run.cfg") << "# test config\n[run]\nseed = 42\n\n[train]\nepochs = 3\nd = 16\nheads = 2\nlayers = 1\n"
                                     "ae_hidden = 32,16\n[eval]\nsettings = warm\n";
  const std::string cfg = "--config " + (dir / "run.cfg").string() + " ";
  ASSERT_EQ(run("train " + cfg + out()).code, 0);
  EXPECT_EQ(lines(slurp(dir / "r" / "loss_trace.csv")), 4u);
  ASSERT_EQ(run("train --epochs 1 " + cfg + out()).code, 0);
  EXPECT_EQ(lines(slurp(dir / "r" / "loss_trace.csv")), 2u);
  ASSERT_EQ(run("eval " + cfg + out()).code, 0);
  EXPECT_TRUE(fs::exists(dir / "r" / "report-warm.csv"));
  EXPECT_FALSE(fs::exists(dir / "r" / "report-cold.csv"));

  std::ofstream(dir / "bad.cfg") << "[train]\nwidth = 3\n";
  EXPECT_EQ(run("train --config " + (dir / "bad.cfg").string() + " " + out()).code, 2);
  EXPECT_EQ(run("train --config " + (dir / "absent.cfg").string() + " " + out()).code, 2);
}

TEST_F(Cli, AblationFlagsProduceTaggedArtifacts) {
  prepared();
  for (const char* flag : {"--no-sem", "--no-cf", "--frozen-queries", "--full-mask"}) {
    const std::string tag = std::string(flag).substr(2);
    ASSERT_EQ(run(std::string("train --epochs 1 ") + flag + " --tag " + tag + " " + kSmall + " " + out()).code, 0) << flag;
    ASSERT_EQ(run("eval --settings all --tag " + tag + " " + out()).code, 0) << flag;
    EXPECT_TRUE(fs::exists(dir / "r" / ("report-" + tag + "-all.csv")));
  }
}

TEST_F(Cli, WorkersDoNotChangeReports) {
  prepared();
  ASSERT_EQ(run("train --epochs 1 " + kSmall + " " + out()).code, 0);
  ASSERT_EQ(run("eval --settings all " + out()).code, 0);
  const std::string one = slurp(dir / "r" / "report-all.csv");
  ASSERT_EQ(run("eval --settings all --workers 3 " + out()).code, 0);
  EXPECT_EQ(slurp(dir / "r" / "report-all.csv"), one);
}

TEST_F(Cli, LogLevelFromEnvironment) {
  const Outcome quiet = run("bench --L 4 --M 1 --d 8 --heads 2 " + out(), "SETIDENT_LOG=quiet");
  ASSERT_EQ(quiet.code, 0);
  EXPECT_EQ(quiet.output.find("[debug]"), std::string::npos);
  const Outcome debug = run("bench --L 4 --M 1 --d 8 --heads 2 " + out(), "SETIDENT_LOG=debug");
  ASSERT_EQ(debug.code, 0);
  EXPECT_NE(debug.output.find("[debug]"), std::string::npos);
  const Outcome err = run("eval " + out("none"), "SETIDENT_LOG=quiet");
  EXPECT_EQ(err.code, 2);
  EXPECT_EQ(err.output.find("[error]"), std::string::npos);
}

TEST_F(Cli, BenchWritesCsv) {
  const Outcome r = run("bench --L 8 --M 1,2 --d 16 --heads 2 " + out());
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string csv = slurp(dir / "r" / "bench.csv");
  EXPECT_EQ(csv.rfind("L,M,d,flattened_macs,original_macs,ratio,flattened_calls,original_calls\n", 0), 0u);
  EXPECT_EQ(lines(csv), 3u);
  EXPECT_EQ(run("bench --d 10 --heads 3 " + out()).code, 2);
}

TEST_F(Cli, DemoBeamGlobalNeverWorse) {
  const Outcome r = run("demo-beam --decoders 100 --vocab 8 --length 3 --beams 1,2,4 " + out());
  ASSERT_EQ(r.code, 0) << r.output;
  std::istringstream csv(slurp(dir / "r" / "beam_demo.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "K,beam_recall,global_recall,misses");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    std::istringstream f(line);
    std::string k, beam, global;
    std::getline(f, k, ',');
    std::getline(f, beam, ',');
    std::getline(f, global, ',');
    EXPECT_LE(std::stod(beam), std::stod(global)) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 3u);
  EXPECT_EQ(run("demo-beam --vocab 1000 --length 3 " + out()).code, 2);
}
