#include "ganorcon/shift.hpp"

#include <cstdlib>

namespace ganorcon::eval {

double shift_equivariance_check(const Teacher& model, const ImageTensor& image,
                                const ShiftProbe& probe) {
  if (std::abs(probe.dx) >= image.width || std::abs(probe.dy) >= image.height) {
    throw Error(ErrorKind::contract, "shift_equivariance_check: shift exceeds image size");
  }
  ImageTensor shifted = shift_image(image, probe.dx, probe.dy, probe.fill);
  LabelMask of_shifted = model.label(shifted);
  LabelMask shifted_of = shift_mask(model.label(image), probe.dx, probe.dy);
  if (of_shifted.height != shifted_of.height || of_shifted.width != shifted_of.width) {
    throw Error(ErrorKind::metric, "shift_equivariance_check: mask size mismatch");
  }

  int64_t agree = 0, total = 0;
  for (int y = 0; y < of_shifted.height; ++y) {
    for (int x = 0; x < of_shifted.width; ++x) {
      int sy = y - probe.dy;
      int sx = x - probe.dx;
      if (sy < 0 || sy >= of_shifted.height || sx < 0 || sx >= of_shifted.width) continue;
      ++total;
      if (of_shifted.at(y, x) == shifted_of.at(y, x)) ++agree;
    }
  }
  return total > 0 ? static_cast<double>(agree) / static_cast<double>(total) : 1.0;
}

}  // namespace ganorcon::eval
