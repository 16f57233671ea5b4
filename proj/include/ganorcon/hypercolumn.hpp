#pragma once

#include <span>

#include "ganorcon/backbone.hpp"

namespace ganorcon::backbone {

// Per-pixel concatenation of stage features, each bilinearly interpolated
// (corner-aligned) to out_size x out_size. Channel order is shallow -> deep.
struct HypercolumnStack {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> values;  // HWC

  float* ptr() { return values.data(); }
  const float* ptr() const { return values.data(); }
};

HypercolumnStack extract_hypercolumns(const StageFeatures& stages, int out_size);

// Feature vector of one pixel; contiguous view into the stack.
std::span<const float> hypercolumn_at(const HypercolumnStack& stack, int row, int col);

// Writes the stack into slot n of an NHWC batch tensor [n, h, w, c].
void stack_into_batch(const HypercolumnStack& stack, Tensor& batch, int n);

}  // namespace ganorcon::backbone
