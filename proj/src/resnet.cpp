#include "slidemask/resnet.hpp"

#include <algorithm>
#include <cctype>

namespace slidemask {

int backbone_depth(BackboneKind kind) { return kind == BackboneKind::resnet50 ? 50 : 101; }

std::string backbone_name(BackboneKind kind) { return kind == BackboneKind::resnet50 ? "resnet50" : "resnet101"; }

BackboneKind parse_backbone(const std::string& text) {
  std::string t;
  for (char c : text)
    if (std::isalnum(static_cast<unsigned char>(c))) t += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (t == "resnet50" || t == "r50" || t == "50") return BackboneKind::resnet50;
  if (t == "resnet101" || t == "r101" || t == "101") return BackboneKind::resnet101;
  fail(ErrorKind::config, "unsupported backbone '" + text + "' (expected resnet50 or resnet101)");
}

Bottleneck::Bottleneck(int in, int planes, int stride, bool downsample)
    : conv1(in, planes, 1, 1, 0, false),
      conv2(planes, planes, 3, stride, 1, false),
      conv3(planes, planes * 4, 1, 1, 0, false),
      bn1(planes),
      bn2(planes),
      bn3(planes * 4),
      has_downsample(downsample) {
  if (downsample) {
    down_conv = Conv2d(in, planes * 4, 1, stride, 0, false);
    down_bn = FrozenBatchNorm(planes * 4);
  }
}

Tensor Bottleneck::forward(const Tensor& x, BlockCache* cache) const {
  Tensor r1 = relu(bn1.forward(conv1.forward(x)));
  Tensor r2 = relu(bn2.forward(conv2.forward(r1)));
  Tensor out = bn3.forward(conv3.forward(r2));
  add_inplace(out, has_downsample ? down_bn.forward(down_conv.forward(x)) : x);
  out = relu(std::move(out));
  if (cache) *cache = {x, std::move(r1), std::move(r2), out};
  return out;
}

Tensor Bottleneck::backward(const BlockCache& c, const Tensor& dy, bool want_dx) {
  const Tensor d = relu_backward(c.out, dy);
  Tensor dr2 = conv3.backward(c.r2, bn3.backward(d), true);
  Tensor dr1 = conv2.backward(c.r1, bn2.backward(relu_backward(c.r2, std::move(dr2))), true);
  Tensor dx = conv1.backward(c.x, bn1.backward(relu_backward(c.r1, std::move(dr1))), want_dx);
  if (has_downsample) {
    Tensor dskip = down_conv.backward(c.x, down_bn.backward(d), want_dx);
    if (want_dx) add_inplace(dx, dskip);
  } else if (want_dx) {
    add_inplace(dx, d);
  }
  return dx;
}

Tensor Bottleneck::calibrate(const Tensor& x, float residual_gain) {
  Tensor c1 = conv1.forward(x);
  bn1.calibrate(c1);
  const Tensor r1 = relu(bn1.forward(c1));
  Tensor c2 = conv2.forward(r1);
  bn2.calibrate(c2);
  const Tensor r2 = relu(bn2.forward(c2));
  Tensor c3 = conv3.forward(r2);
  bn3.calibrate(c3);
  bn3.weight.value.fill(residual_gain);
  Tensor out = bn3.forward(c3);
  if (has_downsample) {
    Tensor s = down_conv.forward(x);
    down_bn.calibrate(s);
    add_inplace(out, down_bn.forward(s));
  } else {
    add_inplace(out, x);
  }
  return relu(std::move(out));
}

void Bottleneck::collect(const std::string& prefix, ParamList& list) {
  conv1.collect(prefix + ".conv1", list);
  bn1.collect(prefix + ".bn1", list);
  conv2.collect(prefix + ".conv2", list);
  bn2.collect(prefix + ".bn2", list);
  conv3.collect(prefix + ".conv3", list);
  bn3.collect(prefix + ".bn3", list);
  if (has_downsample) {
    down_conv.collect(prefix + ".downsample.0", list);
    down_bn.collect(prefix + ".downsample.1", list);
  }
}

bool Bottleneck::any_trainable() const {
  return conv1.weight.trainable || conv2.weight.trainable || conv3.weight.trainable ||
         (has_downsample && down_conv.weight.trainable);
}

ResNetBackbone::ResNetBackbone(BackboneKind kind, int stages_used, int base_width)
    : kind_(kind), stages_used_(stages_used), base_width_(base_width) {
  if (stages_used < 1 || stages_used > 5)
    fail(ErrorKind::config, "stages_used must be in 1..5, got " + std::to_string(stages_used));
  if (base_width < 1) fail(ErrorKind::config, "backbone base width must be positive");
  conv1_ = Conv2d(3, base_width, 7, 2, 3, false);
  bn1_ = FrozenBatchNorm(base_width);
  const std::vector<int> blocks = kind == BackboneKind::resnet50 ? std::vector<int>{3, 4, 6, 3}
                                                                   : std::vector<int>{3, 4, 23, 3};
  int in = base_width;
  for (int s = 0; s + 2 <= stages_used; ++s) {
    const int planes = base_width << s;
    std::vector<Bottleneck> layer;
    for (int b = 0; b < blocks[s]; ++b) {
      layer.emplace_back(in, planes, b == 0 && s > 0 ? 2 : 1, b == 0);
      in = planes * 4;
    }
    layers_.push_back(std::move(layer));
  }
}

int ResNetBackbone::out_channels() const { return stage_channels(stages_used_); }

int ResNetBackbone::stride() const { return stage_stride(stages_used_); }

Tensor ResNetBackbone::forward(const Tensor& x, BackboneCache* cache) const {
  return std::move(forward_stages(x, cache).back());
}

std::vector<Tensor> ResNetBackbone::forward_stages(const Tensor& x, BackboneCache* cache) const {
  Tensor stem = relu(bn1_.forward(conv1_.forward(x)));
  std::vector<Tensor> outs;
  outs.push_back(max_pool_3x3s2(stem));
  if (cache) {
    cache->x = x;
    cache->stem = std::move(stem);
    cache->blocks.assign(layers_.size(), {});
  }
  for (std::size_t s = 0; s < layers_.size(); ++s) {
    if (cache) cache->blocks[s].resize(layers_[s].size());
    Tensor h = outs.back();
    for (std::size_t b = 0; b < layers_[s].size(); ++b)
      h = layers_[s][b].forward(h, cache ? &cache->blocks[s][b] : nullptr);
    outs.push_back(std::move(h));
  }
  return outs;
}

void ResNetBackbone::backward(const BackboneCache& cache, const Tensor& dy) {
  std::vector<Tensor> grads(layers_.size() + 1);
  grads.back() = dy;
  backward(cache, grads);
}

void ResNetBackbone::backward(const BackboneCache& cache, const std::vector<Tensor>& stage_grads) {
  require(cache.blocks.size() == layers_.size(), "backbone backward needs a forward cache");
  require(stage_grads.size() == layers_.size() + 1, "one gradient slot per stage is required");
  // upto[s][b]: something at or before block (s,b) wants a gradient.
  const bool stem_trainable = conv1_.weight.trainable;
  std::vector<std::vector<bool>> upto(layers_.size());
  bool seen = stem_trainable;
  for (std::size_t s = 0; s < layers_.size(); ++s)
    for (const auto& block : layers_[s]) {
      seen = seen || block.any_trainable();
      upto[s].push_back(seen);
    }
  if (!seen) return;

  Tensor d = stage_grads.back();
  for (std::size_t s = layers_.size(); s-- > 0;) {
    if (d.empty()) d = Tensor(cache.blocks[s].back().out.shape());
    for (std::size_t b = layers_[s].size(); b-- > 0;) {
      if (!upto[s][b]) return;
      const bool earlier = b > 0 ? upto[s][b - 1] : (s > 0 ? upto[s - 1].back() : stem_trainable);
      d = layers_[s][b].backward(cache.blocks[s][b], d, earlier);
      if (!earlier) return;
    }
    if (!stage_grads[s].empty()) add_inplace(d, stage_grads[s]);
  }
  const Tensor dstem = relu_backward(cache.stem, max_pool_3x3s2_backward(cache.stem, d));
  conv1_.backward(cache.x, bn1_.backward(dstem), false);
}

int ResNetBackbone::stage_stride(int stage) {
  static const int strides[] = {4, 4, 8, 16, 32};
  require(stage >= 1 && stage <= 5, "stage out of range");
  return strides[stage - 1];
}

int ResNetBackbone::stage_channels(int stage) const {
  return stage == 1 ? base_width_ : base_width_ * 4 << (stage - 2);
}

void ResNetBackbone::calibrate(const Tensor& batch, float residual_gain) {
  Tensor c = conv1_.forward(batch);
  bn1_.calibrate(c);
  Tensor h = max_pool_3x3s2(relu(bn1_.forward(c)));
  for (auto& layer : layers_)
    for (auto& block : layer) h = block.calibrate(h, residual_gain);
}

void ResNetBackbone::collect(const std::string& prefix, ParamList& list) {
  conv1_.collect(prefix + ".conv1", list);
  bn1_.collect(prefix + ".bn1", list);
  for (std::size_t s = 0; s < layers_.size(); ++s)
    for (std::size_t b = 0; b < layers_[s].size(); ++b)
      layers_[s][b].collect(prefix + ".layer" + std::to_string(s + 1) + "." + std::to_string(b), list);
}

int ResNetBackbone::stage_of(const std::string& local_name) {
  if (local_name.rfind("layer", 0) == 0 && local_name.size() > 5 && std::isdigit(static_cast<unsigned char>(local_name[5])))
    return local_name[5] - '0' + 1;
  return 1;
}

}  // namespace slidemask
