#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ganorcon/error.hpp"

namespace ganorcon {

// Dense row-major tensor. Feature maps use NHWC layout ([n, h, w, c]) so a
// per-pixel feature vector is contiguous. Templated on the scalar so the
// same layer implementations can be instantiated at double precision for
// finite-difference gradient checks.
template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), fill);
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  // NHWC accessors.
  T& at4(int n, int y, int x, int c) {
    return data[((static_cast<int64_t>(n) * shape[1] + y) * shape[2] + x) * shape[3] + c];
  }
  T at4(int n, int y, int x, int c) const {
    return data[((static_cast<int64_t>(n) * shape[1] + y) * shape[2] + x) * shape[3] + c];
  }
  T& at2(int r, int c) { return data[static_cast<int64_t>(r) * shape[1] + c]; }
  T at2(int r, int c) const { return data[static_cast<int64_t>(r) * shape[1] + c]; }

  void fill(T v) { data.assign(data.size(), v); }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

std::string shape_str(const std::vector<int>& shape);

inline void require_shape(const std::vector<int>& got, const std::vector<int>& want,
                          const std::string& what) {
  if (got != want) {
    throw Error(ErrorKind::shape,
                what + ": expected shape " + shape_str(want) + ", got " + shape_str(got));
  }
}

}  // namespace ganorcon
