#include "ganorcon/hypercolumn.hpp"

#include "ganorcon/interp.hpp"
#include "ganorcon/parallel.hpp"

namespace ganorcon::backbone {

HypercolumnStack extract_hypercolumns(const StageFeatures& stages, int out_size) {
  if (stages.stages.empty()) {
    throw Error(ErrorKind::contract, "extract_hypercolumns: no stage features");
  }
  for (const auto& [name, t] : stages.stages) {
    if (t.shape[0] > out_size || t.shape[1] > out_size) {
      throw Error(ErrorKind::contract, "extract_hypercolumns: stage '" + name +
                                           "' is larger than the requested output size");
    }
  }

  HypercolumnStack stack;
  stack.height = out_size;
  stack.width = out_size;
  stack.channels = stages.sum_channels();
  stack.values.assign(static_cast<size_t>(out_size) * out_size * stack.channels, 0.f);

  int channel_offset = 0;
  for (const auto& [name, t] : stages.stages) {
    const int sh = t.shape[0], sw = t.shape[1], sc = t.shape[2];
    const float* src = t.ptr();
    const int total_c = stack.channels;
    const int off = channel_offset;
    parallel_for(out_size, [&](int64_t row_b, int64_t row_e) {
      for (int64_t y = row_b; y < row_e; ++y) {
        BilinearTap ty = bilinear_tap(static_cast<int>(y), out_size, sh);
        for (int x = 0; x < out_size; ++x) {
          BilinearTap tx = bilinear_tap(x, out_size, sw);
          const float* p00 = src + (static_cast<int64_t>(ty.lo) * sw + tx.lo) * sc;
          const float* p01 = src + (static_cast<int64_t>(ty.lo) * sw + tx.hi) * sc;
          const float* p10 = src + (static_cast<int64_t>(ty.hi) * sw + tx.lo) * sc;
          const float* p11 = src + (static_cast<int64_t>(ty.hi) * sw + tx.hi) * sc;
          double w00 = (1.0 - ty.w_hi) * (1.0 - tx.w_hi);
          double w01 = (1.0 - ty.w_hi) * tx.w_hi;
          double w10 = ty.w_hi * (1.0 - tx.w_hi);
          double w11 = ty.w_hi * tx.w_hi;
          float* out = stack.values.data() + (y * out_size + x) * total_c + off;
          for (int k = 0; k < sc; ++k) {
            out[k] = static_cast<float>(w00 * p00[k] + w01 * p01[k] + w10 * p10[k] +
                                        w11 * p11[k]);
          }
        }
      }
    });
    channel_offset += sc;
  }
  return stack;
}

std::span<const float> hypercolumn_at(const HypercolumnStack& stack, int row, int col) {
  if (row < 0 || row >= stack.height || col < 0 || col >= stack.width) {
    throw Error(ErrorKind::shape, "hypercolumn_at: pixel (" + std::to_string(row) + "," +
                                      std::to_string(col) + ") outside " +
                                      std::to_string(stack.height) + "x" +
                                      std::to_string(stack.width));
  }
  return {stack.ptr() + (static_cast<int64_t>(row) * stack.width + col) * stack.channels,
          static_cast<size_t>(stack.channels)};
}

void stack_into_batch(const HypercolumnStack& stack, Tensor& batch, int n) {
  require_shape({stack.height, stack.width, stack.channels},
                {batch.dim(1), batch.dim(2), batch.dim(3)}, "stack_into_batch");
  std::copy(stack.values.begin(), stack.values.end(),
            batch.data.begin() +
                static_cast<int64_t>(n) * stack.height * stack.width * stack.channels);
}

}  // namespace ganorcon::backbone
