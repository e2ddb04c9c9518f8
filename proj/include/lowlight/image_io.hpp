#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lowlight/image.hpp"

namespace lowlight {

// 8-bit PNG/JPEG boundary. Decode maps v/255 into [0,1]; encode clamps and
// rounds half-to-even back to 8 bits.
Image load_image(const std::string& path);
void save_image(const std::string& path, const Image& img);

std::uint8_t to_u8(double v);
double from_u8(std::uint8_t v);

// Quantizes through the 8-bit boundary without touching the filesystem.
Image quantize_8bit(const Image& img);

}  // namespace lowlight
