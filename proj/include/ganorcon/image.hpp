#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ganorcon/error.hpp"
#include "ganorcon/tensor.hpp"

namespace ganorcon {

// H x W x 3 image, RGB, values in [0, 1], row-major.
struct ImageTensor {
  int height = 0;
  int width = 0;
  std::vector<float> values;  // HWC

  ImageTensor() = default;
  ImageTensor(int h, int w, float fill = 0.f)
      : height(h), width(w), values(static_cast<size_t>(h) * w * 3, fill) {}

  float& at(int y, int x, int c) { return values[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const {
    return values[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  int64_t pixels() const { return static_cast<int64_t>(height) * width; }
};

// Checks finiteness and range; throws on violation.
void validate_image(const ImageTensor& img, const std::string& what);

// H x W integer class-index map under a named schema.
struct LabelMask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> values;  // row-major class indices
  std::string schema_id;

  LabelMask() = default;
  LabelMask(int h, int w, uint8_t fill = 0, std::string schema = "")
      : height(h), width(w), values(static_cast<size_t>(h) * w, fill),
        schema_id(std::move(schema)) {}

  uint8_t& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
  int64_t pixels() const { return static_cast<int64_t>(height) * width; }
};

// File IO. Images decode to RGB floats in [0,1]; masks are single-channel
// 8-bit PNGs whose pixel value is the class index.
ImageTensor load_image(const std::filesystem::path& path);
void save_image_png(const std::filesystem::path& path, const ImageTensor& img);
LabelMask load_mask(const std::filesystem::path& path);
void save_mask_png(const std::filesystem::path& path, const LabelMask& mask);

// Geometry.
ImageTensor resize_image(const ImageTensor& img, int out_h, int out_w);
LabelMask resize_mask(const LabelMask& mask, int out_h, int out_w);
ImageTensor flip_image(const ImageTensor& img);
LabelMask flip_mask(const LabelMask& mask);

enum class BorderFill { edge, zero };

// Shifts content by (dx, dy): output(y, x) = input(y - dy, x - dx), vacated
// border filled per policy.
ImageTensor shift_image(const ImageTensor& img, int dx, int dy, BorderFill fill);
LabelMask shift_mask(const LabelMask& mask, int dx, int dy, uint8_t fill_value = 0);

// Conversions to/from the NHWC tensors consumed by the networks.
Tensor image_to_tensor(const ImageTensor& img);               // [1,h,w,3]
void image_into_batch(const ImageTensor& img, Tensor& batch, int n);
ImageTensor tensor_to_image(const Tensor& t, int n = 0);

}  // namespace ganorcon
