#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "metric_oracles.hpp"
#include "slidemask/cli.hpp"
#include "slidemask/image_io.hpp"
#include "slidemask/inference.hpp"
#include "slidemask/run_config.hpp"
#include "slidemask/synthetic.hpp"

using namespace slidemask;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("slidemask_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_command(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

// Verdict directory and truth file for a confusion table.
void write_fixture(const fs::path& dir, const ConfusionCounts& c) {
  const auto [verdicts, truth] = oracle::items_for(c);
  for (const auto& v : verdicts)
    spit(dir / "pred" / (v.image_id + ".json"), verdict_to_json(v, 0.8, 512, 512).dump());
  spit(dir / "truth.csv", truth_csv(truth));
}

// Synthetic source data plus a config for a tiny model.
fs::path tiny_run_setup(const fs::path& dir) {
  SyntheticOptions so;
  so.count = 8;
  so.side = 64;
  so.negatives = 2;
  so.seed = 3;
  write_synthetic_dataset(so, (dir / "data").string());
  spit(dir / "cfg.json", R"({"run_id":"t","data_root":")" + (dir / "data").string() + R"(",
    "dataset":{"counts":[4,2,2],"image_side":64,"seed":1},
    "train":{"epochs":1,"stages_used":3,"steps_per_epoch":2,
             "model":{"image_size":64,"backbone_width":4,"neck_channels":16,"anchor_scales":[16,32],
                      "rpn_channels":16,"roi_batch":16,"box_hidden":16,"mask_channels":8,"mask_convs":1}},
    "report":{"frames":2}})");
  return dir / "cfg.json";
}

}  // namespace

TEST(ExitCodes, EveryKindHasItsOwnNonzeroCode) {
  std::set<int> seen;
  for (auto k : {ErrorKind::usage, ErrorKind::contract, ErrorKind::divergence, ErrorKind::config, ErrorKind::parse,
                 ErrorKind::taxonomy, ErrorKind::degenerate, ErrorKind::split, ErrorKind::schema,
                 ErrorKind::not_found, ErrorKind::decode, ErrorKind::fetch, ErrorKind::checkpoint,
                 ErrorKind::run_exists, ErrorKind::io}) {
    const int c = exit_code(k);
    EXPECT_GT(c, 1);
    EXPECT_TRUE(seen.insert(c).second) << to_string(k);
  }
  EXPECT_EQ(exit_code(ErrorKind::usage), 2);
  EXPECT_EQ(exit_code(ErrorKind::config), 5);
  EXPECT_EQ(exit_code(ErrorKind::run_exists), 15);
}

TEST(Usage, ZeroEpochsIsRejectedBeforeAnyWork) {
  const auto dir = scratch("epochs");
  const auto r = run({"--runs-root", dir.string(), "train", "--run", "x", "--epochs", "0"});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(dir / "x"));
}

TEST(Usage, UnknownFlagAndMissingSubcommand) {
  EXPECT_EQ(run({"evaluate", "--no-such-flag"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"build-dataset", "--counts", "1,2"}).code, 2);
  EXPECT_EQ(run({"detect", "--threshold", "1.5"}).code, 2);
}

TEST(Usage, HelpExitsZero) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("pipeline"), std::string::npos);
}

TEST(Evaluate, ReproducesPublishedRowsFromVerdictFiles) {
  const auto dir = scratch("eval");
  write_fixture(dir, {14, 0, 1, 16});
  const auto r = run({"evaluate", "--pred", (dir / "pred").string(), "--truth", dir.string(), "--model-name",
                      "ResNet-101"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("PRECISION, RECALL & F1 SCORE FOR DATASET A"), std::string::npos);
  std::istringstream lines(r.out);
  std::string line, landslide, other, counts;
  while (std::getline(lines, line)) {
    if (line.find("Non-Landslide") != std::string::npos) other = line;
    else if (line.find("Landslide") != std::string::npos) landslide = line;
    else if (line.find("31") != std::string::npos) counts = line;
  }
  std::istringstream a(landslide), b(other), c(counts);
  std::vector<std::string> ta{std::istream_iterator<std::string>(a), {}};
  std::vector<std::string> tb{std::istream_iterator<std::string>(b), {}};
  std::vector<std::string> tc{std::istream_iterator<std::string>(c), {}};
  EXPECT_EQ(ta, (std::vector<std::string>{"ResNet-101", "Landslide", "1.00", "0.93", "0.97"}));
  EXPECT_EQ(tb, (std::vector<std::string>{"Non-Landslide", "0.94", "1.00", "0.97"}));
  EXPECT_EQ(tc, (std::vector<std::string>{"ResNet-101", "14", "0", "1", "16", "31", "0.97"}));
}

TEST(Evaluate, MissingTruthForAVerdictIsASplitOrSchemaError) {
  const auto dir = scratch("eval_missing");
  write_fixture(dir, {1, 0, 0, 1});
  spit(dir / "truth.csv", "image_id,truth\nframe_0,landslide\n");
  const auto r = run({"evaluate", "--pred", (dir / "pred").string(), "--truth", (dir / "truth.csv").string()});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.code, 1);
  EXPECT_NE(r.err.find("frame_1"), std::string::npos);
}

TEST(Evaluate, PredWithoutTruthIsUsage) { EXPECT_EQ(run({"evaluate", "--pred", "/tmp"}).code, 2); }

TEST(Report, WritesFilesAndClampsFrames) {
  const auto dir = scratch("report");
  write_fixture(dir, {2, 1, 0, 1});
  const auto r = run({"report", "--pred", (dir / "pred").string(), "--truth", dir.string(), "--frames", "10",
                      "--out", (dir / "rep").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (auto f : {"report.txt", "class_report.csv", "frames.csv"}) EXPECT_TRUE(fs::exists(dir / "rep" / f)) << f;
  const std::string text = slurp(dir / "rep" / "report.txt");
  EXPECT_NE(text.find("RANDOM FRAMES ACCURACY OUTPUT FOR RESNET-50"), std::string::npos);
  EXPECT_NE(text.find("Images evaluated: 4"), std::string::npos);
  EXPECT_NE(text.find("Images with a landslide verdict: 3"), std::string::npos);
  const std::string frames = slurp(dir / "rep" / "frames.csv");
  EXPECT_EQ(std::count(frames.begin(), frames.end(), '\n'), 5);  // header + 4 rows
}

TEST(TruthCsv, RoundTripAndErrors) {
  const auto dir = scratch("truth");
  TruthMap t{{"a", Verdict::landslide}, {"b", Verdict::non_landslide}};
  spit(dir / "t.csv", truth_csv(t));
  EXPECT_EQ(read_truth_csv((dir / "t.csv").string()), t);

  spit(dir / "bad.csv", "image_id,truth\na,maybe\n");
  try {
    read_truth_csv((dir / "bad.csv").string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::schema);
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos);
  }
  spit(dir / "dup.csv", "a,landslide\na,landslide\n");
  EXPECT_THROW(read_truth_csv((dir / "dup.csv").string()), Error);
}

TEST(Verdicts, ReadBackInFileNameOrder) {
  const auto dir = scratch("verdicts");
  for (auto id : {"c", "a", "b"}) {
    ImageVerdict v;
    v.image_id = id;
    spit(dir / (std::string(id) + ".json"), verdict_to_json(v, 0.5, 10, 10).dump());
  }
  spit(dir / "notes.txt", "ignored");
  const auto vs = read_verdicts(dir.string());
  ASSERT_EQ(vs.size(), 3u);
  EXPECT_EQ(vs[0].image_id, "a");
  EXPECT_EQ(vs[2].image_id, "c");
  EXPECT_THROW(read_verdicts((dir / "missing").string()), Error);
}

TEST(RunConfigDoc, RoundTripsThroughJson) {
  RunConfig c;
  c.run_id = "exp-1";
  c.data_root = "/data";
  c.dataset.counts = {5, 2, 3};
  c.dataset.set_name = "B";
  c.inference.threshold = 0.6;
  c.train.epochs = 7;
  c.report.frames = 4;
  const RunConfig back = run_config_from_json(nlohmann::json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
  EXPECT_EQ(back.dataset_name(), "DATASET B");
}

TEST(RunConfigDoc, UnknownKeysAndBadValuesAreConfigErrors) {
  auto kind_of = [](const std::string& text) {
    try {
      run_config_from_json(nlohmann::json::parse(text));
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::usage;
  };
  EXPECT_EQ(kind_of(R"({"colour":"red"})"), ErrorKind::config);
  EXPECT_EQ(kind_of(R"({"inference":{"threshold":2}})"), ErrorKind::config);
  EXPECT_EQ(kind_of(R"({"inference":{"split":"train"}})"), ErrorKind::config);
  EXPECT_EQ(kind_of(R"({"train":{"epochs":0}})"), ErrorKind::config);
  EXPECT_EQ(kind_of(R"({"train":{"model":{"mystery":1}}})"), ErrorKind::config);
  EXPECT_EQ(kind_of(R"({"run_id":"../x"})"), ErrorKind::config);
  EXPECT_EQ(kind_of(R"({"dataset":{"counts":[1,2]}})"), ErrorKind::config);
  EXPECT_EQ(kind_of(R"({"version":2})"), ErrorKind::config);
}

TEST(RunConfigDoc, BadConfigFileExitsWithConfigCode) {
  const auto dir = scratch("badcfg");
  spit(dir / "c.json", R"({"run_id":"a","extra":1})");
  EXPECT_EQ(run({"build-dataset", "--config", (dir / "c.json").string()}).code, 5);
  spit(dir / "d.json", "{not json");
  EXPECT_EQ(run({"build-dataset", "--config", (dir / "d.json").string()}).code, 5);
}

TEST(BuildDataset, RunModeSnapshotsConfigAndRefusesToOverwrite) {
  const auto dir = scratch("build");
  const auto cfg = tiny_run_setup(dir);
  const std::string root = (dir / "runs").string();
  auto r = run({"--runs-root", root, "build-dataset", "-c", cfg.string(), "--counts", "3,3,2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto manifest = read_manifest((dir / "runs/t/data/manifest.json").string());
  EXPECT_EQ(manifest.train.size(), 3u);
  EXPECT_EQ(manifest.validation.size(), 3u);
  EXPECT_EQ(manifest.test.size(), 2u);
  EXPECT_TRUE(fs::exists(dir / "runs/t/config.json"));

  r = run({"--runs-root", root, "build-dataset", "-c", cfg.string()});
  EXPECT_EQ(r.code, 15);
  EXPECT_FALSE(fs::exists(dir / "runs/t/FAILED"));
}

TEST(BuildDataset, OversizedCountsAreASplitError) {
  const auto dir = scratch("build_big");
  const auto cfg = tiny_run_setup(dir);
  const auto r = run({"--runs-root", (dir / "runs").string(), "build-dataset", "-c", cfg.string(), "--counts",
                      "20,2,2"});
  EXPECT_EQ(r.code, 9);
  EXPECT_TRUE(fs::exists(dir / "runs/t/FAILED"));
}

TEST(BuildDataset, MissingInputsAreNotFound) {
  const auto dir = scratch("build_missing");
  const auto r = run({"--runs-root", (dir / "runs").string(), "build-dataset", "--run", "m", "--data-root",
                      (dir / "nowhere").string()});
  EXPECT_EQ(r.code, 11);
}

TEST(Train, FailureLeavesMarkerNamingTheStage) {
  const auto dir = scratch("train_fail");
  const auto cfg = tiny_run_setup(dir);
  const std::string root = (dir / "runs").string();
  ASSERT_EQ(run({"--runs-root", root, "build-dataset", "-c", cfg.string()}).code, 0);
  const auto r = run({"--runs-root", root, "train", "-c", cfg.string(), "--pretrained", (dir / "none.ckpt").string()});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.code, 1);
  ASSERT_TRUE(fs::exists(dir / "runs/t/FAILED"));
  EXPECT_EQ(slurp(dir / "runs/t/FAILED").rfind("train\n", 0), 0u);
  EXPECT_FALSE(fs::exists(dir / "runs/t/weights"));
}

TEST(Train, WithoutDatasetIsNotFound) {
  const auto dir = scratch("train_nodata");
  EXPECT_EQ(run({"--runs-root", dir.string(), "train", "--run", "ghost"}).code, 11);
}

TEST(Pipeline, RunsEveryStageAndIsRepeatable) {
  const auto dir = scratch("pipeline");
  const auto cfg = tiny_run_setup(dir);
  const std::string root = (dir / "runs").string();
  auto r = run({"--runs-root", root, "pipeline", "-c", cfg.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (auto f : {"config.json", "data/manifest.json", "loss_log.csv", "weights", "verdicts", "overlays", "truth.csv",
                 "report/report.txt"})
    EXPECT_TRUE(fs::exists(dir / "runs/t" / f)) << f;
  EXPECT_NE(r.out.find("RANDOM FRAMES ACCURACY OUTPUT"), std::string::npos);

  EXPECT_EQ(run({"--runs-root", root, "pipeline", "-c", cfg.string()}).code, 15);
  ASSERT_EQ(run({"--runs-root", root, "pipeline", "-c", cfg.string(), "--run", "t2"}).code, 0);
  EXPECT_EQ(slurp(dir / "runs/t/data/manifest.json"), slurp(dir / "runs/t2/data/manifest.json"));
  EXPECT_EQ(slurp(dir / "runs/t/report/report.txt"), slurp(dir / "runs/t2/report/report.txt"));
  EXPECT_EQ(slurp(dir / "runs/t/loss_log.csv"), slurp(dir / "runs/t2/loss_log.csv"));

  // Later stages can be replayed from persisted artifacts alone.
  r = run({"--runs-root", root, "evaluate", "--run", "t"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(slurp(dir / "runs/t/report/report.txt").find(r.out), std::string::npos);
}

TEST(Detect, StandaloneModeWritesVerdictPerImage) {
  const auto dir = scratch("detect");
  const auto cfg = tiny_run_setup(dir);
  const std::string root = (dir / "runs").string();
  ASSERT_EQ(run({"--runs-root", root, "build-dataset", "-c", cfg.string()}).code, 0);
  ASSERT_EQ(run({"--runs-root", root, "train", "-c", cfg.string()}).code, 0);
  const std::string img = (dir / "data/images/synth_000.png").string();
  auto r = run({"detect", "--weights", (dir / "runs/t/weights").string(), "--out", (dir / "out").string(), img,
                "--threshold", "0.5"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto vs = read_verdicts((dir / "out/verdicts").string());
  ASSERT_EQ(vs.size(), 1u);
  EXPECT_EQ(vs[0].image_id, "synth_000");
  EXPECT_TRUE(fs::exists(dir / "out/overlays/synth_000.png"));

  EXPECT_EQ(run({"detect", "--weights", (dir / "runs/t/weights").string(), img}).code, 2);
  EXPECT_EQ(run({"detect", "--weights", (dir / "runs/t/weights").string(), "--out", (dir / "o2").string(),
                 (dir / "missing.png").string()})
                .code,
            11);
}

TEST(Synth, WritesAnnotatedImages) {
  const auto dir = scratch("synth");
  const auto r = run({"synth", "--out", dir.string(), "--count", "3", "--side", "64", "--negatives", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "annotations.json"));
  EXPECT_EQ(read_image((dir / "images/synth_000.png").string()).width(), 64);
}

TEST(BuildDataset, SetASizesFromFlagsOnA160ImageFixture) {
  const auto dir = scratch("build160");
  SyntheticOptions so;
  so.count = 160;
  so.side = 32;
  so.negatives = 76;
  so.seed = 160;
  so.distractors = false;
  write_synthetic_dataset(so, (dir / "data").string());
  const auto r = run({"build-dataset", "--data-root", (dir / "data").string(), "--counts", "101,28,31", "--seed", "7",
                      "--image-side", "32", "--out", (dir / "set_a").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = read_manifest((dir / "set_a/manifest.json").string());
  EXPECT_EQ(m.train.size(), 101u);
  EXPECT_EQ(m.validation.size(), 28u);
  EXPECT_EQ(m.test.size(), 31u);
  EXPECT_NO_THROW(m.validate());
}

TEST(Fetch, FixtureProviderThenTriage) {
  const auto dir = scratch("fetch");
  SyntheticOptions so;
  so.count = 5;
  so.side = 48;
  write_synthetic_dataset(so, (dir / "src").string());
  auto r = run({"fetch", "--terms", "landslide hillside", "--max", "3", "--provider", "fixture", "--fixture-dir",
                (dir / "src/images").string(), "--out", (dir / "got").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::string sheet = slurp(dir / "got/triage.tsv");
  const auto first_row = sheet.find('\n') + 1;
  ASSERT_EQ(std::count(sheet.begin(), sheet.end(), '\n'), 4);
  sheet.insert(sheet.find('\n', first_row), "drop");
  spit(dir / "reviewed.tsv", sheet);
  r = run({"triage", "--records", (dir / "got/records.json").string(), "--worksheet", (dir / "reviewed.tsv").string(),
           "--out", (dir / "kept.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "2 image(s) kept\n");

  r = run({"fetch", "--terms", "x", "--provider", "ftp", "--out", (dir / "bad").string()});
  EXPECT_EQ(r.code, 5);
}

TEST(RunConfigDoc, AugmentationOnlyAtTopLevel) {
  const auto doc = to_json(RunConfig{});
  EXPECT_TRUE(doc.contains("augmentation"));
  EXPECT_FALSE(doc["train"].contains("augmentation"));
  try {
    run_config_from_json(nlohmann::json::parse(R"({"train":{"augmentation":{"copies":2}}})"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
  const RunConfig c = run_config_from_json(nlohmann::json::parse(R"({"augmentation":{"copies":3}})"));
  EXPECT_EQ(c.train.augmentation.copies, 3);
}
