#include "slidemask/run_config.hpp"

#include <cctype>
#include <cstdlib>
#include <set>

#include "fsutil.hpp"
#include "slidemask/config_json.hpp"

namespace slidemask {

namespace {

using json = nlohmann::json;

void check_keys(const json& doc, const std::set<std::string>& allowed, const std::string& where) {
  if (!doc.is_object()) fail(ErrorKind::config, where + " must be an object");
  for (const auto& [key, value] : doc.items())
    if (!allowed.count(key)) fail(ErrorKind::config, "unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const json& doc, const char* key, T& out, const std::string& where) {
  const auto it = doc.find(key);
  if (it == doc.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::config, std::string("field '") + key + "' in " + where + " has the wrong type");
  }
}

// Config errors raised by nested validators keep their kind; anything else
// from a nested reader is a config problem too.
template <typename F>
auto as_config(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::config) throw;
    fail(ErrorKind::config, e.what());
  }
}

}  // namespace

std::string RunConfig::annotations_path() const {
  return annotations.empty() ? data_root + "/annotations.json" : annotations;
}

std::string RunConfig::images_dir() const { return images.empty() ? data_root + "/images" : images; }

std::string RunConfig::model_name() const {
  if (!report.model_name.empty()) return report.model_name;
  return train.backbone == BackboneKind::resnet50 ? "ResNet-50" : "ResNet-101";
}

std::string RunConfig::dataset_name() const {
  return report.dataset_name.empty() ? "DATASET " + dataset.set_name : report.dataset_name;
}

void RunConfig::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorKind::config, m); };
  if (version != kRunConfigVersion)
    bad("unsupported config version " + std::to_string(version) + " (expected " + std::to_string(kRunConfigVersion) +
        ")");
  for (char c : run_id)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.'))
      bad("run_id may only contain letters, digits, '-', '_' and '.', got '" + run_id + "'");
  if (run_id == "." || run_id == "..") bad("run_id cannot be '" + run_id + "'");
  if (dataset.image_side < 32) bad("dataset.image_side must be at least 32");
  if (dataset.augment_preview < 0) bad("dataset.augment_preview must be non-negative");
  if (!(inference.threshold >= 0.0 && inference.threshold <= 1.0)) bad("inference.threshold must lie in [0, 1]");
  if (inference.split != "test" && inference.split != "validation" && inference.split != "all")
    bad("inference.split must be test, validation or all");
  if (report.frames < 0) bad("report.frames must be non-negative");
  as_config([&] {
    augmentation.validate();
    train.validate();
    return 0;
  });
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  const auto& d = c.dataset;
  // augmentation lives at the top level of a run document
  nlohmann::ordered_json train = to_json(c.train);
  train.erase("augmentation");
  return {{"version", c.version},
          {"run_id", c.run_id},
          {"data_root", c.data_root},
          {"annotations", c.annotations},
          {"images", c.images},
          {"pretrained", c.pretrained},
          {"dataset",
           {{"counts", {d.counts.train, d.counts.validation, d.counts.test}},
            {"seed", d.seed},
            {"set_name", d.set_name},
            {"image_side", d.image_side},
            {"stratify", d.stratify},
            {"augment_preview", d.augment_preview}}},
          {"augmentation", to_json(c.augmentation)},
          {"train", train},
          {"inference",
           {{"threshold", c.inference.threshold}, {"split", c.inference.split}, {"overlays", c.inference.overlays}}},
          {"report",
           {{"frames", c.report.frames},
            {"seed", c.report.seed},
            {"model_name", c.report.model_name},
            {"dataset_name", c.report.dataset_name}}}};
}

RunConfig run_config_from_json(const json& doc, RunConfig c) {
  check_keys(doc,
             {"version", "run_id", "data_root", "annotations", "images", "pretrained", "dataset", "augmentation", "train",
              "inference", "report"},
             "config");
  read(doc, "version", c.version, "config");
  read(doc, "run_id", c.run_id, "config");
  read(doc, "data_root", c.data_root, "config");
  read(doc, "annotations", c.annotations, "config");
  read(doc, "images", c.images, "config");
  read(doc, "pretrained", c.pretrained, "config");
  if (doc.contains("dataset")) {
    const json& d = doc["dataset"];
    check_keys(d, {"counts", "seed", "set_name", "image_side", "stratify", "augment_preview"}, "dataset");
    if (d.contains("counts")) {
      std::vector<std::size_t> counts;
      read(d, "counts", counts, "dataset");
      if (counts.size() != 3) fail(ErrorKind::config, "dataset.counts must list train, validation and test sizes");
      c.dataset.counts = {counts[0], counts[1], counts[2]};
    }
    read(d, "seed", c.dataset.seed, "dataset");
    read(d, "set_name", c.dataset.set_name, "dataset");
    read(d, "image_side", c.dataset.image_side, "dataset");
    read(d, "stratify", c.dataset.stratify, "dataset");
    read(d, "augment_preview", c.dataset.augment_preview, "dataset");
  }
  if (doc.contains("augmentation"))
    c.augmentation = as_config([&] { return augmentation_from_json(doc["augmentation"], c.augmentation); });
  if (doc.contains("train") && doc["train"].is_object() && doc["train"].contains("augmentation"))
    fail(ErrorKind::config, "augmentation belongs at the top level of a run config, not under train");
  if (doc.contains("train")) c.train = as_config([&] { return train_config_from_json(doc["train"], c.train); });
  if (doc.contains("inference")) {
    const json& d = doc["inference"];
    check_keys(d, {"threshold", "split", "overlays"}, "inference");
    read(d, "threshold", c.inference.threshold, "inference");
    read(d, "split", c.inference.split, "inference");
    read(d, "overlays", c.inference.overlays, "inference");
  }
  if (doc.contains("report")) {
    const json& d = doc["report"];
    check_keys(d, {"frames", "seed", "model_name", "dataset_name"}, "report");
    read(d, "frames", c.report.frames, "report");
    read(d, "seed", c.report.seed, "report");
    read(d, "model_name", c.report.model_name, "report");
    read(d, "dataset_name", c.report.dataset_name, "report");
  }
  c.train.augmentation = c.augmentation;
  c.validate();
  return c;
}

RunConfig read_run_config(const std::string& path) {
  const std::string text = detail::read_text(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::config, "config '" + path + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(doc);
}

std::string default_runs_root() {
  const char* env = std::getenv("SLIDEMASK_RUNS");
  return env && *env ? env : "runs";
}

}  // namespace slidemask
