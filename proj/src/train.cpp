#include "slidemask/train.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "fsutil.hpp"
#include "slidemask/boxes.hpp"
#include "slidemask/image_io.hpp"

namespace slidemask {

std::vector<TrainingSample> load_samples(const std::string& data_root, const std::vector<std::string>& ids, int side,
                                         int num_foreground_classes, std::size_t* dropped_background) {
  const auto annotated = parse_via_file(DatasetPaths::annotations(data_root));
  std::map<std::string, const AnnotatedImage*> by_id;
  for (const auto& a : annotated) by_id[a.image_id] = &a;
  const auto labels = foreground_labels(num_foreground_classes);

  std::vector<TrainingSample> out;
  std::size_t background = 0, other = 0;
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) fail(ErrorKind::schema, "image '" + id + "' is in the split but not in the annotations");
    const AnnotatedImage scaled = scale_annotations(*it->second, side, side);
    TrainingSample s;
    s.id = id;
    s.image = resize_image(read_image(DatasetPaths::image(data_root, id)), side, side);
    for (const auto& r : scaled.regions) {
      if (r.label == ClassLabel::background) {
        ++background;
        continue;
      }
      const auto pos = std::find(labels.begin(), labels.end(), r.label);
      if (pos == labels.end()) {
        ++other;
        continue;
      }
      RasterResult m = rasterize_mask(r, side, side);
      if (m.degenerate || count_set(m.mask) == 0) continue;
      s.masks.push_back(std::move(m.mask));
      s.classes.push_back(static_cast<int>(pos - labels.begin()) + 1);
    }
    out.push_back(std::move(s));
  }
  if (background)
    spdlog::warn("dropped {} Background region(s); background is modelled implicitly by the network", background);
  if (other) spdlog::info("dropped {} region(s) of classes outside the {}-class taxonomy", other, labels.size());
  if (dropped_background) *dropped_background += background;
  return out;
}

TrainTargets make_targets(const std::vector<Mask>& masks, const std::vector<int>& classes) {
  TrainTargets t;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto box = mask_box(masks[i]);
    if (!box) continue;
    t.boxes.push_back(*box);
    t.classes.push_back(classes[i]);
    t.masks.push_back(masks[i]);
  }
  return t;
}

SgdOptimizer::SgdOptimizer(const TrainConfig& c)
    : lr_(c.learning_rate), momentum_(c.momentum), decay_(c.weight_decay), clip_(c.grad_clip_norm) {}

void SgdOptimizer::step(const ParamList& params, int batch) {
  for (const auto& [name, p] : params) {
    if (!p->trainable || p->grad.empty()) continue;
    double norm2 = 0;
    for (float& g : p->grad.storage()) {
      g /= static_cast<float>(batch);
      norm2 += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(norm2);
    const double scale = clip_ > 0 && norm > clip_ ? clip_ / norm : 1.0;
    if (p->velocity.numel() != p->value.numel()) p->velocity = Tensor(p->value.shape());
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double g = scale * p->grad[i] + decay_ * p->value[i];
      const double v = momentum_ * p->velocity[i] + g;
      p->velocity[i] = static_cast<float>(v);
      p->value[i] = static_cast<float>(p->value[i] - lr_ * v);
    }
    p->grad.fill(0.0f);
  }
}

namespace {

void add(LossBreakdown& a, const LossBreakdown& b, double w) {
  a.rpn_class += w * b.rpn_class;
  a.rpn_bbox += w * b.rpn_bbox;
  a.cls += w * b.cls;
  a.bbox += w * b.bbox;
  a.mask += w * b.mask;
}

std::string format_record(const EpochLossRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", r.split.c_str(), r.epoch, r.total(),
                r.loss.rpn_class, r.loss.rpn_bbox, r.loss.cls, r.loss.bbox, r.loss.mask);
  return buf;
}

}  // namespace

std::string loss_log_csv(const TrainResult& result) {
  std::string out = "split,epoch,total,rpn_class,rpn_bbox,class,bbox,mask\n";
  const std::size_t n = std::max(result.train.size(), result.validation.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (i < result.train.size()) out += format_record(result.train[i]) + "\n";
    if (i < result.validation.size()) out += format_record(result.validation[i]) + "\n";
  }
  return out;
}

TrainResult train(MaskRcnn& model, const SplitManifest& manifest, const std::string& data_root,
                  const TrainOptions& options) {
  const TrainConfig& cfg = model.config();
  require(!manifest.train.empty(), "the training split is empty");
  const int side = cfg.model.image_size;
  TrainResult result;
  const auto train_set =
      load_samples(data_root, manifest.train, side, cfg.num_foreground_classes, &result.dropped_background);
  const auto val_set =
      load_samples(data_root, manifest.validation, side, cfg.num_foreground_classes, &result.dropped_background);
  std::vector<Tensor> val_inputs;
  std::vector<TrainTargets> val_targets;
  for (const auto& s : val_set) {
    val_inputs.push_back(image_tensor(s.image, side));
    val_targets.push_back(make_targets(s.masks, s.classes));
  }

  AugmentationConfig aug = cfg.augmentation;
  aug.copies = 1;
  SgdOptimizer sgd(cfg);
  model.zero_grad();
  std::map<std::string, Tensor> best;
  result.best_loss = INFINITY;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // An epoch is steps_per_epoch images (or one pass), drawn from seeded
    // reshuffles of the training split.
    const std::size_t n = train_set.size();
    const std::size_t steps = cfg.steps_per_epoch > 0 ? static_cast<std::size_t>(cfg.steps_per_epoch) : n;
    std::vector<std::size_t> order;
    EpochLossRecord rec{"train", epoch, {}};
    int pending = 0;
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t pass = k / n;
      if (k % n == 0) {
        order.resize(n);
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle(cfg.seed, static_cast<std::uint64_t>(epoch) * 1000003ULL + pass);
        shuffle.shuffle(order);
      }
      const TrainingSample& s = train_set[order[k % n]];
      const std::uint64_t item_seed = item_seed_for(s.id, static_cast<std::uint64_t>(epoch)) ^ Rng::mix(pass);
      TrainTargets targets;
      Tensor x;
      if (cfg.augment) {
        auto pair = std::move(augment_pair(s.image, s.masks, aug, item_seed).front());
        x = image_tensor(pair.image, side);
        targets = make_targets(pair.masks, s.classes);
      } else {
        x = image_tensor(s.image, side);
        targets = make_targets(s.masks, s.classes);
      }
      Rng rng(cfg.seed ^ 0x5eedULL, item_seed);
      const LossBreakdown loss = model.train_step(x, targets, rng, true);
      if (!loss.finite())
        throw DivergenceError(epoch, "non-finite loss at epoch " + std::to_string(epoch) + " on image '" + s.id + "'");
      add(rec.loss, loss, 1.0 / static_cast<double>(steps));
      if (++pending == cfg.batch_size || k + 1 == steps) {
        sgd.step(model.parameters(), pending);
        pending = 0;
      }
    }
    result.train.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);

    double score = rec.total();
    if (!val_set.empty()) {
      EpochLossRecord vrec{"validation", epoch, {}};
      for (std::size_t i = 0; i < val_set.size(); ++i) {
        Rng rng(cfg.seed ^ 0x7a1ULL, stable_hash(val_set[i].id));
        const LossBreakdown loss = model.train_step(val_inputs[i], val_targets[i], rng, false);
        if (!loss.finite())
          throw DivergenceError(epoch, "non-finite validation loss at epoch " + std::to_string(epoch));
        add(vrec.loss, loss, 1.0 / static_cast<double>(val_set.size()));
      }
      result.validation.push_back(vrec);
      if (options.on_epoch) options.on_epoch(vrec);
      score = vrec.total();
    }
    spdlog::info("epoch {}/{}: train loss {:.4f}{}", epoch, cfg.epochs, rec.total(),
                 val_set.empty() ? std::string() : fmt::format(", validation loss {:.4f}", score));

    if (score < result.best_loss) {
      result.best_loss = score;
      result.best_epoch = epoch;
      best.clear();
      for (const auto& [name, p] : model.parameters())
        if (p->trainable) best.emplace(name, p->value);
      if (!options.weights_dir.empty()) {
        nlohmann::ordered_json extra = options.weights_extra;
        extra["best_epoch"] = epoch;
        extra["best_loss"] = score;
        save_weights(model, options.weights_dir, extra);
      }
    }
    if (!options.loss_log.empty()) detail::write_text(options.loss_log, loss_log_csv(result));
  }
  for (const auto& [name, value] : best) model.find(name)->value = value;
  return result;
}

}  // namespace slidemask
