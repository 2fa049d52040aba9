// Runs the ResNet body from a checkpoint on a raw float32 NCHW input and
// writes every stage output, concatenated, as raw float32.
// usage: backbone_probe <checkpoint> <height> <width> <input.bin> <output.bin>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "slidemask/checkpoint.hpp"
#include "slidemask/resnet.hpp"

using namespace slidemask;

int main(int argc, char** argv) {
  if (argc != 6) {
    std::cerr << "usage: backbone_probe <checkpoint> <height> <width> <input.bin> <output.bin>\n";
    return 2;
  }
  try {
    const Checkpoint ck = read_checkpoint(argv[1]);
    const int depth = ck.metadata.value("depth", 50);
    ResNetBackbone net(depth == 101 ? BackboneKind::resnet101 : BackboneKind::resnet50, 5, 64);
    ParamList params;
    net.collect("backbone.body", params);
    for (auto& [name, p] : params) {
      const auto it = ck.tensors.find(name);
      if (it == ck.tensors.end() || it->second.shape() != p->value.shape()) {
        std::cerr << "missing or mismatched tensor " << name << "\n";
        return 1;
      }
      p->value = it->second;
    }
    Tensor x({1, 3, std::stoi(argv[2]), std::stoi(argv[3])});
    std::ifstream in(argv[4], std::ios::binary);
    in.read(reinterpret_cast<char*>(x.data()), static_cast<std::streamsize>(x.numel() * sizeof(float)));
    if (!in) {
      std::cerr << "short input\n";
      return 1;
    }
    std::ofstream out(argv[5], std::ios::binary);
    for (const Tensor& t : net.forward_stages(x))
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
