#include "slidemask/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "fsutil.hpp"
#include "slidemask/boxes.hpp"
#include "slidemask/config_json.hpp"
#include "slidemask/roi_align.hpp"

namespace slidemask {

std::string scope_name(TrainableScope scope) {
  switch (scope) {
    case TrainableScope::heads: return "heads";
    case TrainableScope::heads_stage5: return "heads+stage5";
    case TrainableScope::all: return "all";
  }
  return "?";
}

TrainableScope parse_scope(const std::string& text) {
  std::string t;
  for (char c : text) t += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (t == "heads" || t == "heads-only" || t == "heads_only") return TrainableScope::heads;
  if (t == "heads+stage5" || t == "heads_stage5" || t == "5+") return TrainableScope::heads_stage5;
  if (t == "all") return TrainableScope::all;
  fail(ErrorKind::config, "unknown trainable scope '" + text + "' (expected heads, heads+stage5 or all)");
}

void ModelOptions::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorKind::config, "model option " + what); };
  if (image_size < 32) bad("image_size must be at least 32");
  if (backbone_width < 1) bad("backbone_width must be positive");
  if (neck_channels < 1) bad("neck_channels must be positive");
  if (anchor_scales.empty() || anchor_ratios.empty()) bad("anchor scales and ratios must be non-empty");
  for (double s : anchor_scales)
    if (!(s > 0)) bad("anchor scales must be positive");
  for (double r : anchor_ratios)
    if (!(r > 0)) bad("anchor ratios must be positive");
  if (rpn_channels < 1 || rpn_batch < 1 || roi_batch < 1) bad("channel and batch counts must be positive");
  if (!(rpn_positive_fraction > 0 && rpn_positive_fraction <= 1)) bad("rpn_positive_fraction must be in (0,1]");
  if (!(roi_positive_fraction > 0 && roi_positive_fraction <= 1)) bad("roi_positive_fraction must be in (0,1]");
  if (!(rpn_negative_iou <= rpn_positive_iou)) bad("rpn_negative_iou must not exceed rpn_positive_iou");
  if (rpn_pre_nms_train < 1 || rpn_post_nms_train < 1 || rpn_pre_nms_test < 1 || rpn_post_nms_test < 1)
    bad("proposal counts must be positive");
  if (box_pool < 1 || mask_pool < 1) bad("pool sizes must be positive");
  const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(samples_per_bin))));
  if (samples_per_bin < 1 || g * g != samples_per_bin) bad("samples_per_bin must be a square number");
  if (box_hidden < 1 || mask_channels < 1 || mask_convs < 1) bad("head widths must be positive");
  if (!(rpn_score_threshold >= 0 && rpn_score_threshold <= 1)) bad("rpn_score_threshold must be in [0,1]");
  if (!(mask_threshold > 0 && mask_threshold < 1)) bad("mask_threshold must be in (0,1)");
  if (detections_per_image < 1) bad("detections_per_image must be positive");
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorKind::config, what); };
  if (stages_used < 1 || stages_used > 5) bad("stages_used must be in 1..5, got " + std::to_string(stages_used));
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) bad("learning_rate must be positive");
  if (epochs < 1) bad("epochs must be at least 1, got " + std::to_string(epochs));
  if (batch_size < 1) bad("batch_size must be at least 1, got " + std::to_string(batch_size));
  if (steps_per_epoch < 0) bad("steps_per_epoch must be non-negative");
  if (num_foreground_classes < 1 || num_foreground_classes > 4)
    bad("num_foreground_classes must be in 1..4, got " + std::to_string(num_foreground_classes));
  if (trainable_scope == TrainableScope::heads_stage5 && stages_used < 5)
    bad("trainable scope heads+stage5 needs stages_used = 5");
  if (!(momentum >= 0 && momentum < 1)) bad("momentum must be in [0,1)");
  if (!(weight_decay >= 0)) bad("weight_decay must be non-negative");
  if (!(grad_clip_norm >= 0)) bad("grad_clip_norm must be non-negative");
  try {
    augmentation.validate();
  } catch (const Error& e) {
    bad(e.what());
  }
  model.validate();
}

std::vector<ClassLabel> foreground_labels(int n) {
  const ClassLabel order[] = {ClassLabel::landslide, ClassLabel::vegetation, ClassLabel::water_body,
                              ClassLabel::building};
  return {order, order + std::clamp(n, 0, 4)};
}

bool LossBreakdown::finite() const {
  return std::isfinite(rpn_class) && std::isfinite(rpn_bbox) && std::isfinite(cls) && std::isfinite(bbox) &&
         std::isfinite(mask);
}

namespace {

constexpr float kMean[3] = {0.485f, 0.456f, 0.406f};
constexpr float kStd[3] = {0.229f, 0.224f, 0.225f};
const BoxCoder kRpnCoder{1, 1, 1, 1};
const BoxCoder kRoiCoder{10, 10, 5, 5};
constexpr double kBeta = 1.0 / 9.0;
constexpr int kMaskSide = 28;

double smooth_l1(double d, double& grad) {
  const double a = std::abs(d);
  if (a < kBeta) {
    grad = d / kBeta;
    return 0.5 * d * d / kBeta;
  }
  grad = d > 0 ? 1.0 : -1.0;
  return a - 0.5 * kBeta;
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// Binary cross-entropy on a logit, stable for large |x|.
double bce(double x, double t) { return std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x))); }

bool is_bn_name(const std::string& name) {
  return name.find(".bn") != std::string::npos || name.find(".downsample.1.") != std::string::npos;
}

const std::string kBackbonePrefix = "backbone.body.";

template <typename T>
void take_shuffled(std::vector<T>& items, std::size_t n, Rng& rng) {
  rng.shuffle(items);
  if (items.size() > n) items.resize(n);
}

struct Proposals {
  std::vector<Box> boxes;
  std::vector<float> scores;
};

struct RpnView {
  const Tensor& obj;
  const Tensor& reg;
  int anchors_per_cell;
  int cells;
  float objectness(int i) const { return obj[static_cast<std::size_t>(i % anchors_per_cell) * cells + i / anchors_per_cell]; }
  std::size_t reg_index(int i, int k) const {
    return static_cast<std::size_t>((i % anchors_per_cell) * 4 + k) * cells + i / anchors_per_cell;
  }
};

Proposals make_proposals(const RpnView& rpn, const std::vector<Box>& anchors, int pre, int post, double nms_iou,
                         double min_objectness, double height, double width) {
  const int n = static_cast<int>(anchors.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  const int top = std::min(pre, n);
  std::partial_sort(order.begin(), order.begin() + top, order.end(), [&](int a, int b) {
    const float sa = rpn.objectness(a), sb = rpn.objectness(b);
    return sa != sb ? sa > sb : a < b;
  });
  std::vector<Box> boxes;
  std::vector<float> scores;
  for (int t = 0; t < top; ++t) {
    const int i = order[t];
    const float s = rpn.objectness(i);
    if (sigmoid(s) < min_objectness) continue;
    float d[4];
    for (int k = 0; k < 4; ++k) d[k] = rpn.reg[rpn.reg_index(i, k)];
    const Box b = clip_box(kRpnCoder.decode(anchors[i], d), height, width);
    if (!(b.height() >= 1e-3 && b.width() >= 1e-3)) continue;
    boxes.push_back(b);
    scores.push_back(s);
  }
  Proposals out;
  for (int i : nms(boxes, scores, nms_iou, post)) {
    out.boxes.push_back(boxes[i]);
    out.scores.push_back(scores[i]);
  }
  return out;
}

std::vector<Box> normalized(const std::vector<Box>& boxes, double height, double width) {
  std::vector<Box> out;
  out.reserve(boxes.size());
  for (const Box& b : boxes) out.push_back(normalize_box(b, height, width));
  return out;
}

Tensor mask_tensor(const Mask& m) {
  Tensor t({1, 1, m.height(), m.width()});
  for (std::size_t i = 0; i < m.size(); ++i) t[i] = m.pixels()[i] ? 1.0f : 0.0f;
  return t;
}

}  // namespace

struct MaskRcnn::Heads {
  // Forward activations of the box and mask branches.
  Tensor flat, h6, h7, logits, deltas;
  std::vector<Tensor> mask_in;  // input of each mask conv, then of the upsampler, then of the logits
  Tensor mask_logits;
};

MaskRcnn::MaskRcnn(const TrainConfig& config, int head_classes)
    : config_(config),
      classes_(head_classes + 1),
      backbone_(config.backbone, config.stages_used, config.model.backbone_width) {
  config_.validate();
  require(head_classes >= 1, "head class count must be positive");
  const ModelOptions& m = config_.model;
  const int c = m.neck_channels;
  const int top = config_.stages_used;
  merge_ = top >= 3;
  lateral_top_ = Conv2d(backbone_.stage_channels(top), c, 1, 1, 0, true);
  if (merge_) lateral_skip_ = Conv2d(backbone_.stage_channels(top - 1), c, 1, 1, 0, true);
  smooth_ = Conv2d(c, c, 3, 1, 1, true);
  const int a = static_cast<int>(m.anchor_scales.size() * m.anchor_ratios.size());
  rpn_conv_ = Conv2d(c, m.rpn_channels, 3, 1, 1, true);
  rpn_cls_ = Conv2d(m.rpn_channels, a, 1, 1, 0, true);
  rpn_bbox_ = Conv2d(m.rpn_channels, 4 * a, 1, 1, 0, true);
  fc6_ = Linear(c * m.box_pool * m.box_pool, m.box_hidden);
  fc7_ = Linear(m.box_hidden, m.box_hidden);
  cls_score_ = Linear(m.box_hidden, classes_);
  bbox_pred_ = Linear(m.box_hidden, 4 * classes_);
  for (int i = 0; i < m.mask_convs; ++i) mask_fcn_.emplace_back(i == 0 ? c : m.mask_channels, m.mask_channels, 3, 1, 1, true);
  mask_up_ = ConvTranspose2x2(m.mask_channels, m.mask_channels);
  mask_logits_ = Conv2d(m.mask_channels, classes_, 1, 1, 0, true);

  backbone_.collect("backbone.body", params_);
  lateral_top_.collect("backbone.fpn.lateral" + std::to_string(top), params_);
  if (merge_) lateral_skip_.collect("backbone.fpn.lateral" + std::to_string(top - 1), params_);
  smooth_.collect("backbone.fpn.smooth" + std::to_string(merge_ ? top - 1 : top), params_);
  rpn_conv_.collect("rpn.head.conv", params_);
  rpn_cls_.collect("rpn.head.cls_logits", params_);
  rpn_bbox_.collect("rpn.head.bbox_pred", params_);
  fc6_.collect("roi_heads.box_head.fc6", params_);
  fc7_.collect("roi_heads.box_head.fc7", params_);
  cls_score_.collect("roi_heads.box_predictor.cls_score", params_);
  bbox_pred_.collect("roi_heads.box_predictor.bbox_pred", params_);
  for (std::size_t i = 0; i < mask_fcn_.size(); ++i)
    mask_fcn_[i].collect("roi_heads.mask_head.mask_fcn" + std::to_string(i + 1), params_);
  mask_up_.collect("roi_heads.mask_predictor.conv5_mask", params_);
  mask_logits_.collect("roi_heads.mask_predictor.mask_fcn_logits", params_);
  for (const char* n : {"roi_heads.box_predictor.cls_score", "roi_heads.box_predictor.bbox_pred",
                        "roi_heads.mask_predictor.mask_fcn_logits"}) {
    class_specific_.push_back(std::string(n) + ".weight");
    class_specific_.push_back(std::string(n) + ".bias");
  }
  initialize(config_.seed);
  set_trainable(config_.trainable_scope);
}

int MaskRcnn::feature_stride() const {
  return ResNetBackbone::stage_stride(merge_ ? config_.stages_used - 1 : config_.stages_used);
}

struct MaskRcnn::NeckCache {
  std::vector<Tensor> stages;
  Tensor merged;
};

Tensor MaskRcnn::neck_forward(const Tensor& x, BackboneCache* bcache, NeckCache* nc) const {
  std::vector<Tensor> stages = backbone_.forward_stages(x, bcache);
  Tensor merged = lateral_top_.forward(stages.back());
  if (merge_) {
    const Tensor& skip = stages[stages.size() - 2];
    Tensor lat = lateral_skip_.forward(skip);
    add_inplace(lat, upsample_nearest(merged, skip.dim(2), skip.dim(3)));
    merged = std::move(lat);
  }
  Tensor feat = smooth_.forward(merged);
  if (nc) {
    nc->stages = std::move(stages);
    nc->merged = std::move(merged);
  }
  return feat;
}

void MaskRcnn::neck_backward(const NeckCache& nc, const BackboneCache& bcache, const Tensor& dfeat, bool backbone_grad) {
  const Tensor dmerged = smooth_.backward(nc.merged, dfeat, true);
  std::vector<Tensor> grads(nc.stages.size());
  Tensor dtop = dmerged;
  if (merge_) {
    const Tensor& skip = nc.stages[nc.stages.size() - 2];
    grads[grads.size() - 2] = lateral_skip_.backward(skip, dmerged, backbone_grad);
    const Tensor& top = nc.stages.back();
    dtop = upsample_nearest_backward(dmerged, top.dim(2), top.dim(3));
  }
  grads.back() = lateral_top_.backward(nc.stages.back(), dtop, backbone_grad);
  if (backbone_grad) backbone_.backward(bcache, grads);
}

Parameter* MaskRcnn::find(const std::string& name) const {
  for (const auto& [n, p] : params_)
    if (n == name) return p;
  return nullptr;
}

bool MaskRcnn::is_backbone(const std::string& name) const { return name.rfind(kBackbonePrefix, 0) == 0; }

bool MaskRcnn::is_class_specific(const std::string& name) const {
  return std::find(class_specific_.begin(), class_specific_.end(), name) != class_specific_.end();
}

void MaskRcnn::set_trainable(TrainableScope scope) {
  if (scope == TrainableScope::heads_stage5 && config_.stages_used < 5)
    fail(ErrorKind::config, "trainable scope heads+stage5 needs stages_used = 5");
  for (auto& [name, p] : params_) {
    if (!is_backbone(name)) {
      p->trainable = true;
    } else if (is_bn_name(name)) {
      p->trainable = false;
    } else {
      const int stage = ResNetBackbone::stage_of(name.substr(kBackbonePrefix.size()));
      p->trainable = scope == TrainableScope::all || (scope == TrainableScope::heads_stage5 && stage == 5);
    }
    p->grad = Tensor();
    p->velocity = Tensor();
  }
}

void MaskRcnn::zero_grad() {
  for (auto& [name, p] : params_)
    if (p->trainable) p->zero_grad();
}

void MaskRcnn::initialize(std::uint64_t seed, const std::vector<std::string>& only) {
  const std::set<std::string> wanted(only.begin(), only.end());
  for (auto& [name, p] : params_) {
    if (!wanted.empty() && !wanted.count(name)) continue;
    const auto& shape = p->value.shape();
    const bool weight = name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
    if (is_backbone(name) && is_bn_name(name)) {
      const bool ones = weight || name.find("running_var") != std::string::npos;
      init_constant(*p, ones ? 1.0f : 0.0f);
    } else if (!weight) {
      init_constant(*p, 0.0f);
    } else if (name.rfind("rpn.", 0) == 0) {
      init_normal(*p, 0.01, seed, name);
    } else if (name.find("cls_score") != std::string::npos) {
      init_normal(*p, 0.01, seed, name);
    } else if (name.find("bbox_pred") != std::string::npos) {
      init_normal(*p, 0.001, seed, name);
    } else if (shape.size() == 2) {
      init_uniform(*p, std::sqrt(6.0 / shape[1]), seed, name);  // He uniform over fan-in
    } else {
      // He normal over fan-out; transposed conv weights are [in, out, k, k].
      const double receptive = static_cast<double>(shape[2]) * shape[3];
      init_normal(*p, std::sqrt(2.0 / (shape[0] * receptive)), seed, name);
    }
  }
}

Tensor image_tensor(const Image& image, int side) {
  require(image.channels() == 3, "model input must be a 3-channel RGB image");
  const Image resized = resize_image(image, side, side);
  Tensor t({1, 3, side, side});
  const std::size_t plane = static_cast<std::size_t>(side) * side;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      for (int c = 0; c < 3; ++c)
        t[c * plane + static_cast<std::size_t>(y) * side + x] = (resized.at(x, y, c) / 255.0f - kMean[c]) / kStd[c];
  return t;
}

LossBreakdown MaskRcnn::train_step(const Tensor& x, const TrainTargets& tg, Rng& rng, bool backward) {
  const ModelOptions& m = config_.model;
  require(x.rank() == 4 && x.dim(0) == 1 && x.dim(1) == 3, "train_step expects a [1,3,H,W] image");
  require(tg.boxes.size() == tg.classes.size() && tg.boxes.size() == tg.masks.size(), "targets are inconsistent");
  const double height = x.dim(2), width = x.dim(3);
  const int gts = static_cast<int>(tg.boxes.size());
  for (int c : tg.classes) require(c >= 1 && c < classes_, "target class out of range");

  bool backbone_grad = false;
  for (const auto& [name, p] : params_) backbone_grad = backbone_grad || (is_backbone(name) && p->trainable);
  backbone_grad = backbone_grad && backward;

  BackboneCache bcache;
  NeckCache ncache;
  const Tensor feat = neck_forward(x, backbone_grad ? &bcache : nullptr, &ncache);
  const int cells = feat.dim(2) * feat.dim(3);
  const Tensor rpn_t = relu(rpn_conv_.forward(feat));
  const Tensor obj = rpn_cls_.forward(rpn_t);
  const Tensor reg = rpn_bbox_.forward(rpn_t);
  const auto anchors = make_anchors(feat.dim(2), feat.dim(3), feature_stride(), m.anchor_scales, m.anchor_ratios);
  const int per_cell = rpn_cls_.out;
  const RpnView rpn{obj, reg, per_cell, cells};
  const int n_anchor = static_cast<int>(anchors.size());

  LossBreakdown loss;
  Tensor dobj(obj.shape()), dreg(reg.shape());

  // RPN targets: positives above the IoU threshold plus the best anchor per box.
  {
    std::vector<int> label(n_anchor, 0), match(n_anchor, -1);
    if (gts > 0) {
      std::vector<float> ious(static_cast<std::size_t>(n_anchor) * gts);
      std::vector<double> best_for_gt(gts, 0.0);
      for (int i = 0; i < n_anchor; ++i) {
        double best = -1;
        for (int g = 0; g < gts; ++g) {
          const double v = iou(anchors[i], tg.boxes[g]);
          ious[static_cast<std::size_t>(i) * gts + g] = static_cast<float>(v);
          best_for_gt[g] = std::max(best_for_gt[g], v);
          if (v > best) {
            best = v;
            match[i] = g;
          }
        }
        label[i] = best >= m.rpn_positive_iou ? 1 : (best < m.rpn_negative_iou ? 0 : -1);
      }
      for (int i = 0; i < n_anchor; ++i)
        for (int g = 0; g < gts; ++g)
          if (best_for_gt[g] > 0 && ious[static_cast<std::size_t>(i) * gts + g] == static_cast<float>(best_for_gt[g])) {
            label[i] = 1;
            match[i] = g;
          }
    }
    std::vector<int> pos, neg;
    for (int i = 0; i < n_anchor; ++i) {
      if (label[i] == 1) pos.push_back(i);
      else if (label[i] == 0) neg.push_back(i);
    }
    take_shuffled(pos, static_cast<std::size_t>(m.rpn_batch * m.rpn_positive_fraction), rng);
    take_shuffled(neg, static_cast<std::size_t>(m.rpn_batch) - pos.size(), rng);
    const double n = static_cast<double>(pos.size() + neg.size());
    if (n > 0) {
      for (const auto* set : {&pos, &neg})
        for (int i : *set) {
          const double t = set == &pos ? 1.0 : 0.0;
          const double s = rpn.objectness(i);
          loss.rpn_class += bce(s, t) / n;
          dobj[static_cast<std::size_t>(i % per_cell) * cells + i / per_cell] = static_cast<float>((sigmoid(s) - t) / n);
        }
      for (int i : pos) {
        const auto target = kRpnCoder.encode(anchors[i], tg.boxes[match[i]]);
        for (int k = 0; k < 4; ++k) {
          double g;
          loss.rpn_bbox += smooth_l1(reg[rpn.reg_index(i, k)] - target[k], g) / n;
          dreg[rpn.reg_index(i, k)] = static_cast<float>(g / n);
        }
      }
    }
  }

  // Proposals, with the ground-truth boxes appended, then RoI sampling.
  Proposals props;
  if (tg.proposals)
    props.boxes = *tg.proposals;
  else
    props = make_proposals(rpn, anchors, m.rpn_pre_nms_train, m.rpn_post_nms_train, m.rpn_nms, m.rpn_score_threshold,
                           height, width);
  for (const Box& b : tg.boxes) props.boxes.push_back(b);
  std::vector<int> fg, bg;
  std::vector<int> roi_match(props.boxes.size(), -1);
  for (std::size_t p = 0; p < props.boxes.size(); ++p) {
    double best = 0;
    for (int g = 0; g < gts; ++g) {
      const double v = iou(props.boxes[p], tg.boxes[g]);
      if (v > best) {
        best = v;
        roi_match[p] = g;
      }
    }
    (gts > 0 && best >= m.roi_foreground_iou ? fg : bg).push_back(static_cast<int>(p));
  }
  take_shuffled(fg, static_cast<std::size_t>(m.roi_batch * m.roi_positive_fraction), rng);
  take_shuffled(bg, static_cast<std::size_t>(m.roi_batch) - fg.size(), rng);
  std::vector<Box> rois;
  std::vector<int> roi_labels;
  for (int p : fg) {
    rois.push_back(props.boxes[p]);
    roi_labels.push_back(tg.classes[roi_match[p]]);
  }
  for (int p : bg) {
    rois.push_back(props.boxes[p]);
    roi_labels.push_back(0);
  }
  const int r_count = static_cast<int>(rois.size());
  const int fg_count = static_cast<int>(fg.size());

  Heads h;
  Tensor dlogits, ddeltas, dmask;
  const std::vector<Box> roi_norm = normalized(rois, height, width);
  const std::vector<Box> fg_norm(roi_norm.begin(), roi_norm.begin() + fg_count);
  const int channels = feat.dim(1);
  if (r_count > 0) {
    h.flat = roi_align(feat, roi_norm, m.box_pool, m.box_pool, m.samples_per_bin)
                 .reshaped({r_count, channels * m.box_pool * m.box_pool});
    h.h6 = relu(fc6_.forward(h.flat));
    h.h7 = relu(fc7_.forward(h.h6));
    h.logits = cls_score_.forward(h.h7);
    h.deltas = bbox_pred_.forward(h.h7);
    dlogits = Tensor(h.logits.shape());
    ddeltas = Tensor(h.deltas.shape());
    for (int r = 0; r < r_count; ++r) {
      const float* row = h.logits.data() + static_cast<std::size_t>(r) * classes_;
      const float mx = *std::max_element(row, row + classes_);
      double z = 0;
      for (int c = 0; c < classes_; ++c) z += std::exp(static_cast<double>(row[c]) - mx);
      loss.cls += (std::log(z) + mx - row[roi_labels[r]]) / r_count;
      for (int c = 0; c < classes_; ++c) {
        const double p = std::exp(static_cast<double>(row[c]) - mx) / z;
        dlogits[static_cast<std::size_t>(r) * classes_ + c] = static_cast<float>((p - (c == roi_labels[r])) / r_count);
      }
    }
    for (int r = 0; r < fg_count; ++r) {
      const auto target = kRoiCoder.encode(rois[r], tg.boxes[roi_match[fg[r]]]);
      const std::size_t base = static_cast<std::size_t>(r) * 4 * classes_ + 4 * roi_labels[r];
      for (int k = 0; k < 4; ++k) {
        double g;
        loss.bbox += smooth_l1(h.deltas[base + k] - target[k], g) / r_count;
        ddeltas[base + k] = static_cast<float>(g / r_count);
      }
    }
  }

  if (fg_count > 0) {
    Tensor a = roi_align(feat, fg_norm, m.mask_pool, m.mask_pool, m.samples_per_bin);
    for (const Conv2d& conv : mask_fcn_) {
      h.mask_in.push_back(a);
      a = relu(conv.forward(a));
    }
    h.mask_in.push_back(a);
    a = relu(mask_up_.forward(a));
    h.mask_in.push_back(a);
    h.mask_logits = mask_logits_.forward(a);
    const int side = h.mask_logits.dim(2);
    const std::size_t plane = static_cast<std::size_t>(side) * h.mask_logits.dim(3);
    dmask = Tensor(h.mask_logits.shape());
    const double norm = static_cast<double>(fg_count) * plane;
    std::vector<Tensor> gt_tensors(gts);
    for (int r = 0; r < fg_count; ++r) {
      const int g = roi_match[fg[r]];
      if (gt_tensors[g].empty()) gt_tensors[g] = mask_tensor(tg.masks[g]);
      const Tensor target = roi_align(gt_tensors[g], {fg_norm[r]}, side, h.mask_logits.dim(3), m.samples_per_bin);
      const std::size_t base = (static_cast<std::size_t>(r) * classes_ + roi_labels[r]) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double t = target[i] >= 0.5f ? 1.0 : 0.0;
        const double s = h.mask_logits[base + i];
        loss.mask += bce(s, t) / norm;
        dmask[base + i] = static_cast<float>((sigmoid(s) - t) / norm);
      }
    }
  }

  if (!backward || !loss.finite()) return loss;

  Tensor dfeat(feat.shape());
  if (fg_count > 0) {
    std::size_t k = h.mask_in.size() - 1;
    Tensor d = mask_logits_.backward(h.mask_in[k], dmask, true);
    d = relu_backward(h.mask_in[k], std::move(d));
    --k;
    d = mask_up_.backward(h.mask_in[k], d, true);
    for (std::size_t i = mask_fcn_.size(); i-- > 0;) {
      d = relu_backward(h.mask_in[i + 1], std::move(d));
      d = mask_fcn_[i].backward(h.mask_in[i], d, true);
    }
    roi_align_backward(d, fg_norm, m.samples_per_bin, dfeat);
  }
  if (r_count > 0) {
    Tensor d = cls_score_.backward(h.h7, dlogits, true);
    add_inplace(d, bbox_pred_.backward(h.h7, ddeltas, true));
    d = fc7_.backward(h.h6, relu_backward(h.h7, std::move(d)), true);
    d = fc6_.backward(h.flat, relu_backward(h.h6, std::move(d)), true);
    roi_align_backward(d.reshaped({r_count, channels, m.box_pool, m.box_pool}), roi_norm, m.samples_per_bin, dfeat);
  }
  Tensor d = rpn_cls_.backward(rpn_t, dobj, true);
  add_inplace(d, rpn_bbox_.backward(rpn_t, dreg, true));
  d = rpn_conv_.backward(feat, relu_backward(rpn_t, std::move(d)), true);
  add_inplace(dfeat, d);
  neck_backward(ncache, bcache, dfeat, backbone_grad);
  return loss;
}

std::vector<RawDetection> MaskRcnn::predict(const Tensor& x) const {
  const ModelOptions& m = config_.model;
  require(x.rank() == 4 && x.dim(0) == 1 && x.dim(1) == 3, "predict expects a [1,3,H,W] image");
  const double height = x.dim(2), width = x.dim(3);
  const Tensor feat = neck_forward(x, nullptr, nullptr);
  const Tensor rpn_t = relu(rpn_conv_.forward(feat));
  const Tensor obj = rpn_cls_.forward(rpn_t);
  const Tensor reg = rpn_bbox_.forward(rpn_t);
  const auto anchors = make_anchors(feat.dim(2), feat.dim(3), feature_stride(), m.anchor_scales, m.anchor_ratios);
  const RpnView rpn{obj, reg, rpn_cls_.out, feat.dim(2) * feat.dim(3)};
  const Proposals props = make_proposals(rpn, anchors, m.rpn_pre_nms_test, m.rpn_post_nms_test, m.rpn_nms,
                                         m.rpn_score_threshold, height, width);
  if (props.boxes.empty()) return {};
  const int r_count = static_cast<int>(props.boxes.size());
  const int channels = feat.dim(1);
  const Tensor flat = roi_align(feat, normalized(props.boxes, height, width), m.box_pool, m.box_pool, m.samples_per_bin)
                          .reshaped({r_count, channels * m.box_pool * m.box_pool});
  const Tensor h7 = relu(fc7_.forward(relu(fc6_.forward(flat))));
  const Tensor logits = cls_score_.forward(h7);
  const Tensor deltas = bbox_pred_.forward(h7);

  struct Candidate {
    Box box;
    int cls;
    float score;
  };
  std::vector<Candidate> kept;
  for (int c = 1; c < classes_; ++c) {
    std::vector<Box> boxes;
    std::vector<float> scores;
    for (int r = 0; r < r_count; ++r) {
      const float* row = logits.data() + static_cast<std::size_t>(r) * classes_;
      const float mx = *std::max_element(row, row + classes_);
      double z = 0;
      for (int k = 0; k < classes_; ++k) z += std::exp(static_cast<double>(row[k]) - mx);
      const double p = std::exp(static_cast<double>(row[c]) - mx) / z;
      if (!(p > m.box_score_threshold)) continue;
      const Box b = clip_box(kRoiCoder.decode(props.boxes[r], deltas.data() + static_cast<std::size_t>(r) * 4 * classes_ + 4 * c),
                             height, width);
      if (!(b.height() >= 1e-2 && b.width() >= 1e-2)) continue;
      boxes.push_back(b);
      scores.push_back(static_cast<float>(std::min(p, 1.0)));
    }
    for (int i : nms(boxes, scores, m.box_nms)) kept.push_back({boxes[i], c, scores[i]});
  }
  std::stable_sort(kept.begin(), kept.end(), [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
  if (static_cast<int>(kept.size()) > m.detections_per_image) kept.resize(m.detections_per_image);
  if (kept.empty()) return {};

  std::vector<Box> boxes;
  for (const auto& k : kept) boxes.push_back(normalize_box(k.box, height, width));
  Tensor a = roi_align(feat, boxes, m.mask_pool, m.mask_pool, m.samples_per_bin);
  for (const Conv2d& conv : mask_fcn_) a = relu(conv.forward(a));
  const Tensor ml = mask_logits_.forward(relu(mask_up_.forward(a)));
  const int side = ml.dim(2);
  const std::size_t plane = static_cast<std::size_t>(side) * ml.dim(3);
  std::vector<RawDetection> out;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    RawDetection d{kept[i].box, kept[i].cls, kept[i].score, side, std::vector<float>(plane)};
    const float* src = ml.data() + (i * classes_ + kept[i].cls) * plane;
    for (std::size_t j = 0; j < plane; ++j) d.mask[j] = static_cast<float>(sigmoid(src[j]));
    out.push_back(std::move(d));
  }
  return out;
}

void MaskRcnn::calibrate_backbone(const Tensor& batch, float residual_gain) { backbone_.calibrate(batch, residual_gain); }

Checkpoint MaskRcnn::to_checkpoint() const {
  Checkpoint ck;
  ck.metadata = {{"format", "slidemask.checkpoint"},
                 {"backbone", backbone_name(config_.backbone)},
                 {"depth", depth()},
                 {"stages_used", config_.stages_used},
                 {"backbone_width", config_.model.backbone_width},
                 {"head_classes", classes_ - 1}};
  for (const auto& [name, p] : params_) ck.tensors.emplace(name, p->value);
  return ck;
}

ModelHandle build_model(const TrainConfig& config) {
  config.validate();
  return std::make_shared<MaskRcnn>(config, config.num_foreground_classes);
}

LoadReport load_pretrained(MaskRcnn& model, const Checkpoint& ck) {
  LoadReport report;
  const std::string depths = " (checkpoint depth " +
                             (ck.metadata.contains("depth") ? ck.metadata["depth"].dump() : std::string("unknown")) +
                             ", model depth " + std::to_string(model.depth()) + ")";
  std::set<std::string> used;
  for (const auto& [name, p] : model.parameters()) {
    const auto it = ck.tensors.find(name);
    if (model.is_backbone(name)) {
      if (it == ck.tensors.end()) fail(ErrorKind::checkpoint, "checkpoint lacks backbone tensor '" + name + "'" + depths);
      if (it->second.shape() != p->value.shape())
        fail(ErrorKind::checkpoint, "backbone tensor '" + name + "' has shape " + it->second.shape_string() +
                                        " in the checkpoint but " + p->value.shape_string() + " in the model");
    }
  }
  for (const auto& [name, p] : model.parameters()) {
    const auto it = ck.tensors.find(name);
    if (it != ck.tensors.end() && it->second.shape() == p->value.shape()) {
      p->value = it->second;
      report.loaded.push_back(name);
      used.insert(name);
    } else {
      if (it != ck.tensors.end()) used.insert(name);
      report.reinitialized.push_back(name);
    }
  }
  for (const auto& [name, t] : ck.tensors)
    if (!used.count(name)) report.unused.push_back(name);
  model.initialize(model.config().seed, report.reinitialized);
  model.set_trainable(model.config().trainable_scope);
  return report;
}

LoadReport load_pretrained(MaskRcnn& model, const std::string& path) { return load_pretrained(model, read_checkpoint(path)); }

void save_weights(const MaskRcnn& model, const std::string& dir, const nlohmann::ordered_json& extra) {
  std::filesystem::create_directories(dir);
  write_checkpoint(model.to_checkpoint(), dir + "/checkpoint");
  nlohmann::ordered_json meta = {{"format", "slidemask.weights"},
                                 {"version", 1},
                                 {"backbone", backbone_name(model.config().backbone)},
                                 {"depth", model.depth()},
                                 {"stages_used", model.config().stages_used},
                                 {"num_classes", model.num_classes()},
                                 {"class_names", nlohmann::ordered_json::array()},
                                 {"config", to_json(model.config())}};
  meta["class_names"].push_back("Background");
  for (ClassLabel l : foreground_labels(model.num_classes() - 1)) meta["class_names"].push_back(std::string(label_name(l)));
  if (extra.is_object())
    for (const auto& [k, v] : extra.items()) meta[k] = v;
  detail::write_text(dir + "/metadata.json", meta.dump(2) + "\n");
}

ModelHandle load_weights(const std::string& dir) {
  const std::string meta_path = dir + "/metadata.json";
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(detail::read_text(meta_path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::schema, "weights metadata '" + meta_path + "': " + e.what());
  }
  if (meta.value("format", "") != "slidemask.weights" || !meta.contains("config"))
    fail(ErrorKind::schema, "'" + meta_path + "' is not a weights metadata document");
  ModelHandle model = build_model(train_config_from_json(meta["config"]));
  const Checkpoint ck = read_checkpoint(dir + "/checkpoint");
  for (const auto& [name, p] : model->parameters()) {
    const auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) fail(ErrorKind::checkpoint, "weights lack tensor '" + name + "'");
    if (it->second.shape() != p->value.shape())
      fail(ErrorKind::checkpoint, "tensor '" + name + "' has shape " + it->second.shape_string() + ", model expects " +
                                      p->value.shape_string());
    p->value = it->second;
  }
  return model;
}

}  // namespace slidemask
