#include "slidemask/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "csv.hpp"
#include "fsutil.hpp"
#include "slidemask/acquisition.hpp"
#include "slidemask/checkpoint.hpp"
#include "slidemask/image_io.hpp"
#include "slidemask/inference.hpp"
#include "slidemask/reference.hpp"
#include "slidemask/run_config.hpp"
#include "slidemask/synthetic.hpp"
#include "slidemask/train.hpp"

namespace fs = std::filesystem;

namespace slidemask {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return 2;
    case ErrorKind::contract: return 3;
    case ErrorKind::divergence: return 4;
    case ErrorKind::config: return 5;
    case ErrorKind::parse: return 6;
    case ErrorKind::taxonomy: return 7;
    case ErrorKind::degenerate: return 8;
    case ErrorKind::split: return 9;
    case ErrorKind::schema: return 10;
    case ErrorKind::not_found: return 11;
    case ErrorKind::decode: return 12;
    case ErrorKind::fetch: return 13;
    case ErrorKind::checkpoint: return 14;
    case ErrorKind::run_exists: return 15;
    case ErrorKind::io: return 16;
  }
  return 1;
}

TruthMap read_truth_csv(const std::string& path) {
  const auto rows = detail::parse_csv(detail::read_text(path));
  TruthMap truth;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != 2) fail(ErrorKind::schema, path + ": row " + std::to_string(i + 1) + " must have two fields");
    if (i == 0 && row[0] == "image_id") continue;
    Verdict v;
    try {
      v = parse_verdict(row[1]);
    } catch (const Error&) {
      fail(ErrorKind::schema, path + ": row " + std::to_string(i + 1) + " has truth '" + row[1] +
                                  "' (expected landslide or non-landslide)");
    }
    if (!truth.emplace(row[0], v).second) fail(ErrorKind::schema, path + ": duplicate image '" + row[0] + "'");
  }
  return truth;
}

std::string truth_csv(const TruthMap& truth) {
  std::string out = "image_id,truth\n";
  for (const auto& [id, v] : truth) out += id + "," + std::string(verdict_name(v)) + "\n";
  return out;
}

std::vector<ImageVerdict> read_verdicts(const std::string& dir) {
  if (!fs::is_directory(dir)) fail(ErrorKind::not_found, "verdict directory '" + dir + "' does not exist");
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  std::vector<ImageVerdict> out;
  for (const auto& f : files) {
    try {
      out.push_back(verdict_from_json(nlohmann::json::parse(detail::read_text(f))));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::schema, f + ": " + e.what());
    }
  }
  return out;
}

namespace {

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::string runs_root;
};

RunPaths run_paths(const Context& ctx, const std::string& run_id) {
  if (run_id.empty()) fail(ErrorKind::usage, "a run id is required (--run or run_id in the config)");
  return {(fs::path(ctx.runs_root) / run_id).string()};
}

// Stage outputs are never overwritten.
void require_absent(const std::string& path, const std::string& what) {
  if (fs::exists(path)) fail(ErrorKind::run_exists, what + " already exists at '" + path + "'; runs are append-only");
}

void require_present(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) fail(ErrorKind::not_found, what + " not found at '" + path + "'");
}

SplitCounts parse_counts(const std::string& text) {
  const auto rows = detail::parse_csv(text);
  std::vector<std::size_t> n;
  if (rows.size() == 1)
    for (const auto& f : rows[0]) {
      std::size_t used = 0;
      long long v = -1;
      try {
        v = std::stoll(f, &used);
      } catch (const std::exception&) {
      }
      if (used != f.size() || v < 0) fail(ErrorKind::usage, "--counts expects three non-negative integers, got '" + text + "'");
      n.push_back(static_cast<std::size_t>(v));
    }
  if (n.size() != 3) fail(ErrorKind::usage, "--counts expects train,validation,test, got '" + text + "'");
  return {n[0], n[1], n[2]};
}

void write_json(const std::string& path, const nlohmann::ordered_json& doc) { detail::write_text(path, doc.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Stages shared by the subcommands and `pipeline`.

SplitManifest stage_build_dataset(const RunConfig& cfg, const std::string& output_dir) {
  if (cfg.data_root.empty() && (cfg.annotations.empty() || cfg.images.empty()))
    fail(ErrorKind::usage, "no input data: set data_root (or annotations and images)");
  require_present(cfg.annotations_path(), "annotation document");
  require_present(cfg.images_dir(), "image directory");
  DatasetBuildOptions o;
  o.annotations_path = cfg.annotations_path();
  o.image_root = cfg.images_dir();
  o.output_dir = output_dir;
  o.image_side = cfg.dataset.image_side;
  o.counts = cfg.dataset.counts;
  o.seed = cfg.dataset.seed;
  o.set_name = cfg.dataset.set_name;
  o.stratify = cfg.dataset.stratify;
  o.augment_preview = cfg.dataset.augment_preview;
  o.augmentation = cfg.augmentation;
  const SplitManifest m = build_dataset(o);
  spdlog::info("dataset '{}': {} train, {} validation, {} test images", m.set_name, m.train.size(),
               m.validation.size(), m.test.size());
  return m;
}

TrainResult stage_train(const RunConfig& cfg, const RunPaths& run) {
  require_present(run.manifest(), "dataset manifest");
  require_absent(run.weights(), "weights");
  const SplitManifest manifest = read_manifest(run.manifest());
  TrainConfig tc = cfg.train;
  tc.augmentation = cfg.augmentation;
  auto model = build_model(tc);
  if (!cfg.pretrained.empty()) {
    const LoadReport rep = load_pretrained(*model, cfg.pretrained);
    spdlog::info("pretrained weights: {} tensors loaded, {} reinitialized, {} unused", rep.loaded.size(),
                 rep.reinitialized.size(), rep.unused.size());
    for (const auto& n : rep.reinitialized) spdlog::debug("reinitialized {}", n);
  } else {
    spdlog::warn("no pretrained checkpoint configured; training starts from a fresh initialization");
  }
  TrainOptions opts;
  opts.weights_dir = run.weights();
  opts.loss_log = run.loss_log();
  opts.weights_extra = {{"run_id", cfg.run_id}, {"pretrained", cfg.pretrained}};
  const TrainResult r = train(*model, manifest, run.data(), opts);
  spdlog::info("best epoch {} (loss {:.4f})", r.best_epoch, r.best_loss);
  return r;
}

std::vector<std::string> inference_ids(const SplitManifest& m, const std::string& split) {
  if (split == "validation") return m.validation;
  if (split == "all") return m.dataset_ids;
  return m.test;
}

TruthMap truth_from_annotations(const std::string& path, const std::vector<std::string>& ids) {
  std::map<std::string, Verdict> all;
  for (const auto& img : parse_via_file(path)) {
    const bool positive = std::any_of(img.regions.begin(), img.regions.end(),
                                      [](const Region& r) { return is_positive(r.label); });
    all[img.image_id] = positive ? Verdict::landslide : Verdict::non_landslide;
  }
  TruthMap truth;
  for (const auto& id : ids) {
    const auto it = all.find(id);
    if (it == all.end()) fail(ErrorKind::schema, "image '" + id + "' has no annotation entry");
    truth.emplace(id, it->second);
  }
  return truth;
}

struct DetectJob {
  std::string id;
  std::string path;
};

void stage_detect(const ModelHandle& model, const std::vector<DetectJob>& jobs, double threshold,
                  const std::string& verdict_dir, const std::string& overlay_dir) {
  fs::create_directories(verdict_dir);
  for (const auto& job : jobs) {
    const Image img = read_image(job.path);
    const auto dets = detect(model, img, threshold);
    const ImageVerdict v = classify_image(dets, threshold, job.id);
    write_json(verdict_dir + "/" + job.id + ".json", verdict_to_json(v, threshold, img.width(), img.height()));
    if (!overlay_dir.empty()) write_image(overlay_dir + "/" + job.id + ".png", render_overlay(img, dets, threshold));
    spdlog::info("{}: {} (top landslide score {:.3f}, {} detection(s))", job.id, verdict_name(v.verdict), v.top_score,
                 dets.size());
  }
}

void stage_detect_run(const RunConfig& cfg, const RunPaths& run, double threshold) {
  require_present(run.weights(), "trained weights");
  require_present(run.manifest(), "dataset manifest");
  require_absent(run.verdicts(), "verdicts");
  const SplitManifest manifest = read_manifest(run.manifest());
  const auto ids = inference_ids(manifest, cfg.inference.split);
  if (ids.empty()) fail(ErrorKind::contract, "the " + cfg.inference.split + " split is empty; nothing to detect");
  const TruthMap truth = truth_from_annotations(DatasetPaths::annotations(run.data()), ids);
  detail::write_text(run.truth(), truth_csv(truth));
  const ModelHandle model = load_weights(run.weights());
  std::vector<DetectJob> jobs;
  for (const auto& id : ids) jobs.push_back({id, DatasetPaths::image(run.data(), id)});
  stage_detect(model, jobs, threshold, run.verdicts(), cfg.inference.overlays ? run.overlays() : "");
}

struct ReportInputs {
  std::vector<ImageVerdict> verdicts;
  TruthMap truth;
  std::string model_name;
  std::string dataset_name;
  int frames = 10;
  std::uint64_t seed = 0;
};

struct ReportFiles {
  std::string text;
  std::string class_csv;
  std::string frames_csv;
};

ReportFiles render_report(const ReportInputs& in) {
  const ClassReport cr = class_report(in.verdicts, in.truth, in.model_name, in.dataset_name);
  std::size_t k = static_cast<std::size_t>(std::max(0, in.frames));
  if (k > in.verdicts.size()) {
    spdlog::warn("only {} verdicts; the frame table lists all of them instead of {}", in.verdicts.size(), k);
    k = in.verdicts.size();
  }
  const auto frames = frame_table(in.verdicts, in.truth, k, in.seed);
  std::size_t positives = 0, detections = 0;
  for (const auto& v : in.verdicts) {
    positives += v.verdict == Verdict::landslide;
    for (const auto& d : v.detections) detections += d.label == ClassLabel::landslide;
  }
  std::ostringstream text;
  text << class_report_text({cr}) << "\n";
  std::string upper = in.model_name;
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  text << frame_table_text(frames, "RANDOM FRAMES ACCURACY OUTPUT" + (upper.empty() ? "" : " FOR " + upper)) << "\n";
  text << "Images evaluated: " << in.verdicts.size() << "\n";
  text << "Images with a landslide verdict: " << positives << "\n";
  text << "Landslide detections: " << detections << "\n";
  return {text.str(), class_report_csv({cr}), frame_table_csv(frames)};
}

void write_report(const ReportFiles& r, const std::string& dir) {
  detail::write_text(dir + "/report.txt", r.text);
  detail::write_text(dir + "/class_report.csv", r.class_csv);
  detail::write_text(dir + "/frames.csv", r.frames_csv);
}

ReportInputs run_report_inputs(const RunConfig& cfg, const RunPaths& run) {
  require_present(run.verdicts(), "verdicts");
  require_present(run.truth(), "truth table");
  ReportInputs in;
  in.verdicts = read_verdicts(run.verdicts());
  in.truth = read_truth_csv(run.truth());
  in.model_name = cfg.model_name();
  in.dataset_name = cfg.dataset_name();
  in.frames = cfg.report.frames;
  in.seed = cfg.report.seed;
  return in;
}

// Writes the marker and rethrows so the caller still maps the exit code.
template <typename F>
void guarded(const RunPaths& run, const std::string& stage, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::run_exists && fs::exists(run.dir))
      detail::write_text(run.failed(), stage + "\n" + to_string(e.kind()) + "\n" + e.what() + "\n");
    throw;
  } catch (const std::exception& e) {
    if (fs::exists(run.dir)) detail::write_text(run.failed(), stage + "\ninternal\n" + e.what() + "\n");
    throw;
  }
}

// ---------------------------------------------------------------------------
// Config plumbing: --config, then --run and flag overrides.

struct CommonFlags {
  std::string config;
  std::string run;
};

RunConfig load_config(const CommonFlags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : read_run_config(f.config);
  if (!f.run.empty()) cfg.run_id = f.run;
  return cfg;
}

// A run's own snapshot wins over --config for stages after the first.
RunConfig load_run_config(const Context& ctx, const CommonFlags& f) {
  RunConfig base = load_config(f);
  const RunPaths run = run_paths(ctx, base.run_id);
  if (!fs::exists(run.config())) return base;
  RunConfig cfg = read_run_config(run.config());
  cfg.run_id = base.run_id;
  return cfg;
}

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("-c,--config", f.config, "Run configuration document (JSON)")->check(CLI::ExistingFile);
  sub->add_option("-r,--run", f.run, "Run id under the runs root");
}

struct DataFlags {
  std::optional<std::string> data_root, annotations, images, counts, set_name;
  std::optional<std::uint64_t> seed;
  std::optional<int> image_side;
  bool no_stratify = false;

  void add(CLI::App* sub) {
    sub->add_option("--data-root", data_root, "Directory holding annotations.json and images/");
    sub->add_option("--annotations", annotations, "VIA annotation document");
    sub->add_option("--images", images, "Directory the annotation filenames are relative to");
    sub->add_option("--counts", counts, "Split sizes as train,validation,test");
    sub->add_option("--seed", seed, "Split seed");
    sub->add_option("--set-name", set_name, "Dataset name recorded in the manifest");
    sub->add_option("--image-side", image_side, "Side of the materialized square images")->check(CLI::Range(32, 8192));
    sub->add_flag("--no-stratify", no_stratify, "Plain shuffle instead of a class-stratified one");
  }
  void apply(RunConfig& c) const {
    if (data_root) c.data_root = *data_root;
    if (annotations) c.annotations = *annotations;
    if (images) c.images = *images;
    if (counts) c.dataset.counts = parse_counts(*counts);
    if (seed) c.dataset.seed = *seed;
    if (set_name) c.dataset.set_name = *set_name;
    if (image_side) c.dataset.image_side = *image_side;
    if (no_stratify) c.dataset.stratify = false;
  }
};

struct TrainFlags {
  std::optional<int> epochs, stages, steps_per_epoch, batch_size, image_size;
  std::optional<double> lr;
  std::optional<std::string> backbone, scope, pretrained;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* sub) {
    sub->add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber);
    sub->add_option("--lr", lr, "Learning rate")->check(CLI::PositiveNumber);
    sub->add_option("--batch-size", batch_size, "Images per update")->check(CLI::PositiveNumber);
    sub->add_option("--steps-per-epoch", steps_per_epoch, "Images per epoch (0: one pass)")->check(CLI::NonNegativeNumber);
    sub->add_option("--backbone", backbone, "resnet50 or resnet101");
    sub->add_option("--stages", stages, "Backbone stages used")->check(CLI::Range(1, 5));
    sub->add_option("--scope", scope, "Trainable scope: heads, heads+stage5 or all");
    sub->add_option("--pretrained", pretrained, "Checkpoint to transfer from");
    sub->add_option("--train-seed", seed, "Seed for initialization, sampling and augmentation");
    sub->add_option("--image-size", image_size, "Network input side")->check(CLI::Range(32, 4096));
  }
  void apply(RunConfig& c) const {
    if (epochs) c.train.epochs = *epochs;
    if (lr) c.train.learning_rate = *lr;
    if (batch_size) c.train.batch_size = *batch_size;
    if (steps_per_epoch) c.train.steps_per_epoch = *steps_per_epoch;
    if (backbone) c.train.backbone = parse_backbone(*backbone);
    if (stages) c.train.stages_used = *stages;
    if (scope) c.train.trainable_scope = parse_scope(*scope);
    if (pretrained) c.pretrained = *pretrained;
    if (seed) c.train.seed = *seed;
    if (image_size) c.train.model.image_size = *image_size;
  }
};

struct ReportFlags {
  std::optional<int> frames;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> model_name, dataset_name;

  void add(CLI::App* sub) {
    sub->add_option("--frames", frames, "Rows in the random-frames table")->check(CLI::NonNegativeNumber);
    sub->add_option("--frame-seed", seed, "Seed for the frame selection");
    sub->add_option("--model-name", model_name, "Model column label");
    sub->add_option("--dataset-name", dataset_name, "Dataset label in the table title");
  }
  void apply(RunConfig& c) const {
    if (frames) c.report.frames = *frames;
    if (seed) c.report.seed = *seed;
    if (model_name) c.report.model_name = *model_name;
    if (dataset_name) c.report.dataset_name = *dataset_name;
  }
};

// Flag overrides pass through the same validation as the document.
RunConfig validated(RunConfig c) {
  try {
    c.validate();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::config) fail(ErrorKind::usage, e.what());
    throw;
  }
  return c;
}

void start_run(const Context& ctx, const RunConfig& cfg, const RunPaths& run) {
  (void)ctx;
  if (fs::exists(run.config())) return;
  fs::create_directories(run.dir);
  write_json(run.config(), to_json(cfg));
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (!spdlog::get("slidemask")) {
    auto logger = spdlog::stderr_color_mt("slidemask");
    logger->set_pattern("%^%l%$: %v");
    spdlog::set_default_logger(logger);
  }
  Context ctx{out, err, default_runs_root()};

  CLI::App app{"Landslide detection with Mask R-CNN transfer learning", "slidemask"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", "slidemask 1.0");
  bool verbose = false, quiet = false;
  app.add_option("--runs-root", ctx.runs_root, "Directory holding run directories (default $SLIDEMASK_RUNS or ./runs)");
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_flag("-q,--quiet", quiet, "Warnings and errors only");

  std::function<void()> action;

  // fetch
  auto* fetch = app.add_subcommand("fetch", "Download candidate photographs from an image provider");
  FetchQuery fq;
  FetchOptions fo;
  std::string provider_spec = "fixture", fixture_dir;
  fetch->add_option("--terms", fq.terms, "Search terms")->required();
  fetch->add_option("--max", fq.max_results, "Images to keep")->check(CLI::PositiveNumber);
  fetch->add_option("--min-width", fq.min_width, "Minimum width in pixels")->check(CLI::NonNegativeNumber);
  fetch->add_option("--min-height", fq.min_height, "Minimum height in pixels")->check(CLI::NonNegativeNumber);
  fetch->add_option("--provider", provider_spec, "fixture or command:<program>");
  fetch->add_option("--fixture-dir", fixture_dir, "Image directory served by the fixture provider");
  fetch->add_option("--out", fo.out_dir, "Output directory")->required();
  fetch->add_option("--retries", fo.retries, "Retries for transient provider failures")->check(CLI::NonNegativeNumber);
  fetch->callback([&] {
    action = [&] {
      auto provider = make_provider(provider_spec, fixture_dir);
      const auto records = fetch_images(fq, *provider, fo);
      write_fetch_records(records, fo.out_dir + "/records.json");
      write_triage_listing(records, fo.out_dir + "/triage.tsv");
      ctx.out << records.size() << " image(s) written to " << fo.out_dir << "\n";
    };
  });

  // triage
  auto* triage = app.add_subcommand("triage", "Apply keep/drop decisions from a reviewed worksheet");
  std::string records_path, worksheet_path, triage_out;
  triage->add_option("--records", records_path, "records.json from fetch")->required()->check(CLI::ExistingFile);
  triage->add_option("--worksheet", worksheet_path, "Reviewed triage.tsv")->required()->check(CLI::ExistingFile);
  triage->add_option("--out", triage_out, "Where to write the kept records")->required();
  triage->callback([&] {
    action = [&] {
      const auto kept = import_triage(read_fetch_records(records_path), detail::read_text(worksheet_path));
      write_fetch_records(kept, triage_out);
      ctx.out << kept.size() << " image(s) kept\n";
    };
  });

  // build-dataset
  auto* build = app.add_subcommand("build-dataset", "Resize, split and materialize an annotated image set");
  CommonFlags build_common;
  DataFlags build_data;
  std::string build_out;
  add_common(build, build_common);
  build_data.add(build);
  build->add_option("--out", build_out, "Write the dataset here instead of into a run");
  build->callback([&] {
    action = [&] {
      RunConfig cfg = load_config(build_common);
      build_data.apply(cfg);
      cfg = validated(cfg);
      if (!build_out.empty()) {
        require_absent(build_out + "/manifest.json", "dataset");
        stage_build_dataset(cfg, build_out);
        ctx.out << build_out << "/manifest.json\n";
        return;
      }
      const RunPaths run = run_paths(ctx, cfg.run_id);
      require_absent(run.data(), "dataset");
      start_run(ctx, cfg, run);
      guarded(run, "build-dataset", [&] { stage_build_dataset(cfg, run.data()); });
      ctx.out << run.manifest() << "\n";
    };
  });

  // train
  auto* trn = app.add_subcommand("train", "Fine-tune the network on a run's dataset");
  CommonFlags train_common;
  TrainFlags train_flags;
  add_common(trn, train_common);
  train_flags.add(trn);
  trn->callback([&] {
    action = [&] {
      RunConfig cfg = load_run_config(ctx, train_common);
      train_flags.apply(cfg);
      cfg = validated(cfg);
      const RunPaths run = run_paths(ctx, cfg.run_id);
      guarded(run, "train", [&] {
        const TrainResult r = stage_train(cfg, run);
        ctx.out << loss_log_csv(r);
      });
    };
  });

  // detect
  auto* det = app.add_subcommand("detect", "Detect landslides and write verdicts and overlays");
  CommonFlags det_common;
  std::optional<double> det_threshold;
  std::string det_weights, det_out;
  std::vector<std::string> det_images;
  bool det_no_overlays = false;
  add_common(det, det_common);
  det->add_option("--threshold", det_threshold, "Score threshold")->check(CLI::Range(0.0, 1.0));
  det->add_option("--weights", det_weights, "Weights directory (standalone mode)");
  det->add_option("--out", det_out, "Output directory (standalone mode)");
  det->add_option("images", det_images, "Images to process (standalone mode)");
  det->add_flag("--no-overlays", det_no_overlays, "Skip overlay rendering");
  det->callback([&] {
    action = [&] {
      if (!det_weights.empty() || !det_images.empty()) {
        if (det_weights.empty() || det_out.empty() || det_images.empty())
          fail(ErrorKind::usage, "standalone detect needs --weights, --out and at least one image");
        const double thr = det_threshold.value_or(kDefaultScoreThreshold);
        std::vector<DetectJob> jobs;
        for (const auto& p : det_images) {
          require_present(p, "image");
          jobs.push_back({fs::path(p).stem().string(), p});
        }
        stage_detect(load_weights(det_weights), jobs, thr, det_out + "/verdicts",
                     det_no_overlays ? "" : det_out + "/overlays");
        return;
      }
      RunConfig cfg = load_run_config(ctx, det_common);
      if (det_no_overlays) cfg.inference.overlays = false;
      const RunPaths run = run_paths(ctx, cfg.run_id);
      guarded(run, "detect", [&] { stage_detect_run(cfg, run, det_threshold.value_or(cfg.inference.threshold)); });
      ctx.out << run.verdicts() << "\n";
    };
  });

  // evaluate / report share their inputs
  struct EvalFlags {
    CommonFlags common;
    ReportFlags report;
    std::string pred, truth, out;
  };
  auto add_eval = [&](CLI::App* sub, EvalFlags& f) {
    add_common(sub, f.common);
    f.report.add(sub);
    sub->add_option("--pred", f.pred, "Directory of verdict documents");
    sub->add_option("--truth", f.truth, "Truth CSV (image_id,truth) or a directory holding truth.csv");
  };
  auto eval_inputs = [&](EvalFlags& f) {
    if (!f.pred.empty() || !f.truth.empty()) {
      if (f.pred.empty() || f.truth.empty()) fail(ErrorKind::usage, "--pred and --truth go together");
      RunConfig cfg = load_config(f.common);
      f.report.apply(cfg);
      cfg = validated(cfg);
      ReportInputs in;
      in.verdicts = read_verdicts(f.pred);
      const std::string truth_path = fs::is_directory(f.truth) ? f.truth + "/truth.csv" : f.truth;
      require_present(truth_path, "truth table");
      in.truth = read_truth_csv(truth_path);
      in.model_name = cfg.model_name();
      in.dataset_name = cfg.dataset_name();
      in.frames = cfg.report.frames;
      in.seed = cfg.report.seed;
      return in;
    }
    RunConfig cfg = load_run_config(ctx, f.common);
    f.report.apply(cfg);
    cfg = validated(cfg);
    return run_report_inputs(cfg, run_paths(ctx, cfg.run_id));
  };

  auto* eval = app.add_subcommand("evaluate", "Print precision, recall, F1 and accuracy for a set of verdicts");
  EvalFlags eval_flags;
  add_eval(eval, eval_flags);
  eval->callback([&] {
    action = [&] {
      const ReportInputs in = eval_inputs(eval_flags);
      ctx.out << class_report_text({class_report(in.verdicts, in.truth, in.model_name, in.dataset_name)});
    };
  });

  auto* rep = app.add_subcommand("report", "Render the full report (tables and CSV) from persisted verdicts");
  EvalFlags rep_flags;
  add_eval(rep, rep_flags);
  rep->add_option("--out", rep_flags.out, "Write report.txt and CSV files here instead of printing");
  rep->callback([&] {
    action = [&] {
      const ReportFiles files = render_report(eval_inputs(rep_flags));
      if (rep_flags.out.empty()) {
        ctx.out << files.text;
      } else {
        write_report(files, rep_flags.out);
        ctx.out << rep_flags.out << "/report.txt\n";
      }
    };
  });

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "build-dataset, train, detect, evaluate and report in one run");
  CommonFlags pipe_common;
  DataFlags pipe_data;
  TrainFlags pipe_train;
  ReportFlags pipe_report;
  std::optional<double> pipe_threshold;
  add_common(pipe, pipe_common);
  pipe_data.add(pipe);
  pipe_train.add(pipe);
  pipe_report.add(pipe);
  pipe->add_option("--threshold", pipe_threshold, "Score threshold")->check(CLI::Range(0.0, 1.0));
  pipe->callback([&] {
    action = [&] {
      RunConfig cfg = load_config(pipe_common);
      pipe_data.apply(cfg);
      pipe_train.apply(cfg);
      pipe_report.apply(cfg);
      if (pipe_threshold) cfg.inference.threshold = *pipe_threshold;
      cfg = validated(cfg);
      const RunPaths run = run_paths(ctx, cfg.run_id);
      if (fs::exists(run.dir)) fail(ErrorKind::run_exists, "run '" + cfg.run_id + "' already exists at '" + run.dir + "'");
      start_run(ctx, cfg, run);
      guarded(run, "build-dataset", [&] { stage_build_dataset(cfg, run.data()); });
      guarded(run, "train", [&] { stage_train(cfg, run); });
      guarded(run, "detect", [&] { stage_detect_run(cfg, run, cfg.inference.threshold); });
      guarded(run, "report", [&] {
        const ReportFiles files = render_report(run_report_inputs(cfg, run));
        write_report(files, run.report());
        ctx.out << files.text;
      });
    };
  });

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic annotated landslide image set");
  SyntheticOptions so;
  std::string synth_out;
  bool no_distractors = false;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--count", so.count, "Images")->check(CLI::PositiveNumber);
  synth->add_option("--side", so.side, "Image side in pixels")->check(CLI::Range(32, 4096));
  synth->add_option("--negatives", so.negatives, "Images without a landslide")->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", so.seed, "Generator seed");
  synth->add_flag("--no-distractors", no_distractors, "Omit water, building and vegetation regions");
  synth->callback([&] {
    action = [&] {
      so.distractors = !no_distractors;
      const auto images = write_synthetic_dataset(so, synth_out);
      ctx.out << images.size() << " image(s) written to " << synth_out << "\n";
    };
  });

  // config
  auto* show = app.add_subcommand("config", "Print the effective run configuration document");
  CommonFlags show_common;
  add_common(show, show_common);
  show->callback([&] {
    action = [&] { ctx.out << to_json(load_config(show_common)).dump(2) << "\n"; };
  });

  // init-weights
  auto* init = app.add_subcommand("init-weights", "Pretrain a source checkpoint on generic procedural scenes");
  CommonFlags init_common;
  ReferenceOptions ro;
  std::string init_out;
  std::optional<std::string> init_backbone;
  std::optional<int> init_stages;
  add_common(init, init_common);
  init->add_option("--out", init_out, "Checkpoint file to write")->required();
  init->add_option("--backbone", init_backbone, "resnet50 or resnet101 (default: the config's)");
  init->add_option("--stages", init_stages, "Stages used while pretraining")->check(CLI::Range(1, 5));
  init->add_option("--steps", ro.pretrain_steps, "Pretraining steps")->check(CLI::NonNegativeNumber);
  init->add_option("--lr", ro.learning_rate, "Pretraining learning rate")->check(CLI::PositiveNumber);
  init->add_option("--classes", ro.head_classes, "Source classes")->check(CLI::PositiveNumber);
  init->add_option("--seed", ro.seed, "Seed");
  init->callback([&] {
    action = [&] {
      const RunConfig cfg = load_config(init_common);
      require_absent(init_out, "checkpoint");
      ro.backbone = init_backbone ? parse_backbone(*init_backbone) : cfg.train.backbone;
      ro.stages_used = init_stages.value_or(cfg.train.stages_used);
      ro.model = cfg.train.model;
      ro.on_progress = [](int step, const LossBreakdown& l) {
        spdlog::info("pretraining step {}: loss {:.4f} (mask {:.4f})", step, l.total(), l.mask);
      };
      write_checkpoint(make_reference_checkpoint(ro), init_out);
      ctx.out << init_out << "\n";
    };
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : exit_code(ErrorKind::usage);
  }
  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (action) action();
    return 0;
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int run_command(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_command(args, std::cout, std::cerr);
}

}  // namespace slidemask
