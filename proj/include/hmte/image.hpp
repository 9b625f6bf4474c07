#pragma once

#include "hmte/tensor.hpp"

#include <filesystem>

namespace hmte {

/// Grayscale image or binary mask, row-major, values in [0, 1].
using Image = Eigen::Array<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// 8-bit binary PGM (P5). Values are mapped to [0, 1] by maxval.
Image read_pgm(const std::filesystem::path& path);
/// Writes `image` clamped to [0, 1] and quantized to 0..255.
void write_pgm(const std::filesystem::path& path, const Image& image);

Image resize_bilinear(const Image& image, Index rows, Index cols);
Image resize_nearest(const Image& image, Index rows, Index cols);

/// [1, H, W] tensor view of an image.
Tensor to_tensor(const Image& image);
Image from_tensor(const Tensor& t);

}  // namespace hmte
