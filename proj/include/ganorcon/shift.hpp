#pragma once

#include "ganorcon/image.hpp"

namespace ganorcon::eval {

// Anything that labels an image. Implementations must be deterministic per
// image with a fixed schema across a pool.
class Teacher {
 public:
  virtual ~Teacher() = default;
  virtual LabelMask label(const ImageTensor& image) const = 0;
  virtual std::string schema_id() const = 0;
};

struct ShiftProbe {
  int dx = 0;
  int dy = 0;
  BorderFill fill = BorderFill::edge;
};

// Pixel agreement between T(shift(image)) and shift(T(image)) over the
// overlap region (pixels whose shifted source lies inside the image; the
// vacated border is excluded). Returns a ratio in [0, 1]; exactly 1.0 for a
// zero shift or any per-pixel (translation-equivariant) teacher.
double shift_equivariance_check(const Teacher& model, const ImageTensor& image,
                                const ShiftProbe& probe);

}  // namespace ganorcon::eval
