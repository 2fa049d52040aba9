#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "slidemask/annotation.hpp"
#include "slidemask/raster.hpp"

namespace slidemask {

/// Decodes PNG/JPEG into 3-channel RGB. Throws ErrorKind::decode naming `name`.
Image decode_image(std::span<const std::uint8_t> bytes, const std::string& name);
Image read_image(const std::string& path);
std::optional<ImageSize> probe_image_size(const std::string& path);

/// Format is chosen from the extension (.png or .jpg/.jpeg).
void write_image(const std::string& path, const Image& image);
std::string encode_png(const Image& image);

/// SHA-256 over the decoded pixels (dimensions included), hex encoded.
std::string pixel_checksum(const Image& image);
std::string sha256_hex(std::span<const std::uint8_t> bytes);

}  // namespace slidemask
