#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "slidemask/error.hpp"

namespace slidemask::detail {

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::not_found, "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::string& path, const std::string& text) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) fail(ErrorKind::io, "cannot write '" + path + "'");
}

}  // namespace slidemask::detail
