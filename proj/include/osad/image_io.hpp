#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "osad/tensor.hpp"

namespace osad {

class ImageIoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels.
struct Image8 {
    std::size_t width = 0, height = 0, channels = 0;
    std::vector<std::uint8_t> pixels;
};

Image8 read_png(const std::string& path);
void write_png(const std::string& path, const Image8& image);

/// Any PNG as a 3 x H x W tensor in [0, 1]; gray is replicated, alpha dropped.
Tensor<float> image_to_tensor(const Image8& img);
/// Any PNG as a 1 x H x W {0,1} mask: foreground where the first channel is > 127.
Tensor<float> mask_to_tensor(const Image8& img);
/// 1 x H x W probabilities to 8-bit gray, round(255 p).
Image8 probability_to_gray(const Tensor<float>& p);
Image8 tensor_to_rgb(const Tensor<float>& img);

}  // namespace osad
