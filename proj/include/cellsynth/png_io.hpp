#pragma once

// Minimal PNG codec. Writes 8-bit RGBA with stored (uncompressed) deflate
// blocks; reads 8-bit RGB/RGBA non-interlaced files including ordinary
// compressed ones (full inflate: stored, fixed and dynamic Huffman blocks).

#include <string>

#include "cellsynth/image.hpp"

namespace cellsynth {

void write_png(const Image& img, const std::string& path);
Image read_png(const std::string& path);

} // namespace cellsynth
