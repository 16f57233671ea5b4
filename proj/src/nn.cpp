#include "ganorcon/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "ganorcon/interp.hpp"
#include "ganorcon/parallel.hpp"

namespace ganorcon::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapM = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMapM = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMapM = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

int conv_out_size(int in, int k, int stride, int pad, int dilation) {
  return (in + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
}

// Parallel reduction with a deterministic fold order: work is split into the
// same ranges as parallel_ranges, ranges run in waves of at most `slots`
// parallel workers, and fold(slot) is invoked in range order.
template <typename Compute, typename Fold>
void ordered_reduce(int64_t n, int slots, Compute compute, Fold fold) {
  int ranges = range_count(n);
  if (ranges == 0) return;
  slots = std::max(1, std::min(slots, ranges));
  for (int wave = 0; wave < ranges; wave += slots) {
    int members = std::min(slots, ranges - wave);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(members > 0 ? members - 1 : 0));
    auto run = [&](int m) {
      int r = wave + m;
      int64_t b = n * r / ranges;
      int64_t e = n * (r + 1) / ranges;
      if (b < e) compute(m, b, e);
    };
    for (int m = 1; m < members; ++m) pool.emplace_back(run, m);
    run(0);
    for (auto& t : pool) t.join();
    for (int m = 0; m < members; ++m) {
      int r = wave + m;
      int64_t b = n * r / ranges;
      int64_t e = n * (r + 1) / ranges;
      if (b < e) fold(m);
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2dT<T>::Conv2dT(std::string name, int in_c, int out_c, int kernel, int stride, int pad,
                    int dilation, bool bias)
    : name_(std::move(name)), in_c_(in_c), out_c_(out_c), k_(kernel), stride_(stride),
      pad_(pad), dilation_(dilation), bias_(bias) {
  w_.name = name_ + ".w";
  w_.value = TensorT<T>({k_ * k_ * in_c_, out_c_});
  if (bias_) {
    b_.name = name_ + ".b";
    b_.value = TensorT<T>({out_c_});
  }
}

template <typename T>
void Conv2dT<T>::init(Rng& rng) {
  double stddev = std::sqrt(2.0 / (static_cast<double>(k_) * k_ * in_c_));
  for (auto& v : w_.value.data) v = static_cast<T>(rng.normal(0.0, stddev));
  if (bias_) b_.value.fill(T(0));
}

template <typename T>
std::vector<int> Conv2dT<T>::out_shape(const std::vector<int>& in) const {
  return {in[0], conv_out_size(in[1], k_, stride_, pad_, dilation_),
          conv_out_size(in[2], k_, stride_, pad_, dilation_), out_c_};
}

template <typename T>
void Conv2dT<T>::collect_params(std::vector<ParamT<T>*>& out) {
  out.push_back(&w_);
  if (bias_) out.push_back(&b_);
}

namespace {

// Fills im2row rows for output rows [row_b, row_e) of one (n, oy) flat range.
// Each flat row expands to w_out GEMM rows of k*k*in_c values.
template <typename T>
void im2row_rows(const TensorT<T>& x, int n, int oy, int k, int stride, int pad, int dilation,
                 int w_out, T* dst) {
  const int h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const int row_len = k * k * c;
  for (int ox = 0; ox < w_out; ++ox) {
    T* row = dst + static_cast<int64_t>(ox) * row_len;
    for (int ky = 0; ky < k; ++ky) {
      int iy = oy * stride - pad + ky * dilation;
      for (int kx = 0; kx < k; ++kx) {
        int ix = ox * stride - pad + kx * dilation;
        T* cell = row + (ky * k + kx) * c;
        if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
          std::fill(cell, cell + c, T(0));
        } else {
          const T* src = x.ptr() + ((static_cast<int64_t>(n) * h + iy) * w + ix) * c;
          std::copy(src, src + c, cell);
        }
      }
    }
  }
}

}  // namespace

template <typename T>
TensorT<T> Conv2dT<T>::forward(const TensorT<T>& x, Mode mode) {
  if (x.ndim() != 4 || x.dim(3) != in_c_) {
    throw Error(ErrorKind::shape, name_ + ": expected NHWC input with " +
                                      std::to_string(in_c_) + " channels, got " +
                                      shape_str(x.shape));
  }
  auto os = out_shape(x.shape);
  const int n = os[0], ho = os[1], wo = os[2];
  if (ho < 1 || wo < 1) {
    throw Error(ErrorKind::shape, name_ + ": input " + shape_str(x.shape) + " too small");
  }
  TensorT<T> y(os);
  const int row_len = k_ * k_ * in_c_;
  const int64_t flat_rows = static_cast<int64_t>(n) * ho;

  parallel_for(flat_rows, [&](int64_t b, int64_t e) {
    std::vector<T> rows(static_cast<size_t>(wo) * row_len);
    CMapM<T> wm(w_.value.ptr(), row_len, out_c_);
    for (int64_t fr = b; fr < e; ++fr) {
      int bn = static_cast<int>(fr / ho);
      int oy = static_cast<int>(fr % ho);
      im2row_rows(x, bn, oy, k_, stride_, pad_, dilation_, wo, rows.data());
      CMapM<T> rm(rows.data(), wo, row_len);
      MapM<T> ym(y.ptr() + fr * wo * out_c_, wo, out_c_);
      ym.noalias() = rm * wm;
    }
  });

  if (bias_) {
    parallel_for(flat_rows, [&](int64_t b, int64_t e) {
      for (int64_t fr = b; fr < e; ++fr) {
        T* row = y.ptr() + fr * wo * out_c_;
        for (int ox = 0; ox < wo; ++ox) {
          for (int co = 0; co < out_c_; ++co) row[ox * out_c_ + co] += b_.value.data[co];
        }
      }
    });
  }

  if (mode == Mode::train) x_ = x;
  return y;
}

template <typename T>
TensorT<T> Conv2dT<T>::backward(const TensorT<T>& gy) {
  if (x_.numel() == 0) {
    throw Error(ErrorKind::contract, name_ + ": backward without cached forward");
  }
  const int n = x_.dim(0), h = x_.dim(1), w = x_.dim(2);
  auto os = out_shape(x_.shape);
  const int ho = os[1], wo = os[2];
  require_shape(gy.shape, os, name_ + ".backward");
  w_.ensure_grad();
  if (bias_) b_.ensure_grad();

  const int row_len = k_ * k_ * in_c_;
  const int64_t flat_rows = static_cast<int64_t>(n) * ho;

  // dW via im2row chunks with an ordered reduction.
  {
    int slots = std::max(1, std::min(num_threads(), 4));
    std::vector<TensorT<T>> partial(static_cast<size_t>(slots));
    ordered_reduce(
        flat_rows, slots,
        [&](int slot, int64_t b, int64_t e) {
          auto& pw = partial[static_cast<size_t>(slot)];
          pw = TensorT<T>({row_len, out_c_});
          std::vector<T> rows;
          MapM<T> pwm(pw.ptr(), row_len, out_c_);
          for (int64_t fr = b; fr < e; ++fr) {
            int bn = static_cast<int>(fr / ho);
            int oy = static_cast<int>(fr % ho);
            rows.resize(static_cast<size_t>(wo) * row_len);
            im2row_rows(x_, bn, oy, k_, stride_, pad_, dilation_, wo, rows.data());
            CMapM<T> rm(rows.data(), wo, row_len);
            CMapM<T> gm(gy.ptr() + fr * wo * out_c_, wo, out_c_);
            pwm.noalias() += rm.transpose() * gm;
          }
        },
        [&](int slot) { axpy(w_.grad, T(1), partial[static_cast<size_t>(slot)]); });
  }

  if (bias_) {
    std::vector<double> acc(static_cast<size_t>(out_c_), 0.0);
    const T* g = gy.ptr();
    for (int64_t i = 0; i < gy.numel(); i += out_c_) {
      for (int co = 0; co < out_c_; ++co) acc[static_cast<size_t>(co)] += g[i + co];
    }
    for (int co = 0; co < out_c_; ++co) b_.grad.data[co] += static_cast<T>(acc[co]);
  }

  // dX as a gather: for each input row, accumulate the contributions of every
  // kernel offset with small strided GEMMs. Rows are disjoint, so this is
  // race-free under any partition.
  TensorT<T> gx(x_.shape);
  const int64_t flat_in_rows = static_cast<int64_t>(n) * h;
  parallel_for(flat_in_rows, [&](int64_t b, int64_t e) {
    for (int64_t fr = b; fr < e; ++fr) {
      int bn = static_cast<int>(fr / h);
      int iy = static_cast<int>(fr % h);
      for (int ky = 0; ky < k_; ++ky) {
        int num = iy + pad_ - ky * dilation_;
        if (num < 0 || num % stride_ != 0) continue;
        int oy = num / stride_;
        if (oy >= ho) continue;
        for (int kx = 0; kx < k_; ++kx) {
          // valid ox where ix = ox*stride - pad + kx*dilation lies in [0, w)
          int off = kx * dilation_ - pad_;
          int ox_lo = 0, ox_hi = wo - 1;
          if (off < 0) ox_lo = (-off + stride_ - 1) / stride_;
          if (off + (wo - 1) * stride_ >= w) ox_hi = (w - 1 - off) / stride_;
          if (ox_lo > ox_hi) continue;
          int len = ox_hi - ox_lo + 1;
          int ix_lo = ox_lo * stride_ + off;
          CStridedMapM<T> gym(gy.ptr() + ((fr / h * ho + oy) * static_cast<int64_t>(wo) + ox_lo) *
                                             out_c_,
                              len, out_c_, Eigen::OuterStride<>(out_c_));
          CMapM<T> wb(w_.value.ptr() + static_cast<int64_t>(ky * k_ + kx) * in_c_ * out_c_,
                      in_c_, out_c_);
          StridedMapM<T> gxm(gx.ptr() + ((static_cast<int64_t>(bn) * h + iy) * w + ix_lo) * in_c_,
                             len, in_c_, Eigen::OuterStride<>(stride_ * in_c_));
          gxm.noalias() += gym * wb.transpose();
        }
      }
    }
  });
  return gx;
}

// ---------------------------------------------------------------------------
// BatchNorm2d

template <typename T>
BatchNorm2dT<T>::BatchNorm2dT(std::string name, int channels, double momentum, double eps)
    : name_(std::move(name)), channels_(channels), momentum_(momentum), eps_(eps) {
  gamma_.name = name_ + ".gamma";
  gamma_.value = TensorT<T>({channels_}, T(1));
  beta_.name = name_ + ".beta";
  beta_.value = TensorT<T>({channels_});
  running_mean_.name = name_ + ".running_mean";
  running_mean_.value = TensorT<T>({channels_});
  running_mean_.learnable = false;
  running_var_.name = name_ + ".running_var";
  running_var_.value = TensorT<T>({channels_}, T(1));
  running_var_.learnable = false;
}

template <typename T>
void BatchNorm2dT<T>::init(Rng&) {
  gamma_.value.fill(T(1));
  beta_.value.fill(T(0));
  running_mean_.value.fill(T(0));
  running_var_.value.fill(T(1));
}

template <typename T>
void BatchNorm2dT<T>::collect_params(std::vector<ParamT<T>*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

template <typename T>
TensorT<T> BatchNorm2dT<T>::forward(const TensorT<T>& x, Mode mode) {
  if (x.ndim() != 4 || x.dim(3) != channels_) {
    throw Error(ErrorKind::shape, name_ + ": expected NHWC with " + std::to_string(channels_) +
                                      " channels, got " + shape_str(x.shape));
  }
  const int c = channels_;
  const int64_t m = x.numel() / c;
  TensorT<T> y(x.shape);

  if (mode == Mode::train) {
    std::vector<double> sum(static_cast<size_t>(c), 0.0), sumsq(static_cast<size_t>(c), 0.0);
    const T* p = x.ptr();
    for (int64_t i = 0; i < x.numel(); i += c) {
      for (int j = 0; j < c; ++j) {
        double v = p[i + j];
        sum[static_cast<size_t>(j)] += v;
        sumsq[static_cast<size_t>(j)] += v * v;
      }
    }
    batch_mean_.resize(static_cast<size_t>(c));
    batch_inv_std_.resize(static_cast<size_t>(c));
    for (int j = 0; j < c; ++j) {
      double mean = sum[static_cast<size_t>(j)] / static_cast<double>(m);
      double var = sumsq[static_cast<size_t>(j)] / static_cast<double>(m) - mean * mean;
      var = std::max(var, 0.0);
      batch_mean_[static_cast<size_t>(j)] = mean;
      batch_inv_std_[static_cast<size_t>(j)] = 1.0 / std::sqrt(var + eps_);
      if (update_stats_) {
        double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
        running_mean_.value.data[j] =
            static_cast<T>((1.0 - momentum_) * running_mean_.value.data[j] + momentum_ * mean);
        running_var_.value.data[j] =
            static_cast<T>((1.0 - momentum_) * running_var_.value.data[j] + momentum_ * unbiased);
      }
    }
    xhat_ = TensorT<T>(x.shape);
    parallel_for(m, [&](int64_t b, int64_t e) {
      for (int64_t i = b; i < e; ++i) {
        const T* xi = x.ptr() + i * c;
        T* hi = xhat_.ptr() + i * c;
        T* yi = y.ptr() + i * c;
        for (int j = 0; j < c; ++j) {
          double h = (xi[j] - batch_mean_[static_cast<size_t>(j)]) *
                     batch_inv_std_[static_cast<size_t>(j)];
          hi[j] = static_cast<T>(h);
          yi[j] = static_cast<T>(h * gamma_.value.data[j] + beta_.value.data[j]);
        }
      }
    });
  } else {
    parallel_for(m, [&](int64_t b, int64_t e) {
      for (int64_t i = b; i < e; ++i) {
        const T* xi = x.ptr() + i * c;
        T* yi = y.ptr() + i * c;
        for (int j = 0; j < c; ++j) {
          double inv = 1.0 / std::sqrt(static_cast<double>(running_var_.value.data[j]) + eps_);
          yi[j] = static_cast<T>((xi[j] - running_mean_.value.data[j]) * inv *
                                     gamma_.value.data[j] +
                                 beta_.value.data[j]);
        }
      }
    });
  }
  return y;
}

template <typename T>
TensorT<T> BatchNorm2dT<T>::backward(const TensorT<T>& gy) {
  if (xhat_.numel() == 0) {
    throw Error(ErrorKind::contract, name_ + ": backward without cached train forward");
  }
  require_shape(gy.shape, xhat_.shape, name_ + ".backward");
  const int c = channels_;
  const int64_t m = gy.numel() / c;
  gamma_.ensure_grad();
  beta_.ensure_grad();
  running_mean_.ensure_grad();
  running_var_.ensure_grad();

  std::vector<double> dg(static_cast<size_t>(c), 0.0), db(static_cast<size_t>(c), 0.0);
  const T* g = gy.ptr();
  const T* hat = xhat_.ptr();
  for (int64_t i = 0; i < gy.numel(); i += c) {
    for (int j = 0; j < c; ++j) {
      dg[static_cast<size_t>(j)] += static_cast<double>(g[i + j]) * hat[i + j];
      db[static_cast<size_t>(j)] += g[i + j];
    }
  }
  for (int j = 0; j < c; ++j) {
    gamma_.grad.data[j] += static_cast<T>(dg[static_cast<size_t>(j)]);
    beta_.grad.data[j] += static_cast<T>(db[static_cast<size_t>(j)]);
  }

  TensorT<T> gx(gy.shape);
  parallel_for(m, [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) {
      const T* gi = gy.ptr() + i * c;
      const T* hi = xhat_.ptr() + i * c;
      T* xi = gx.ptr() + i * c;
      for (int j = 0; j < c; ++j) {
        double term = static_cast<double>(gi[j]) - db[static_cast<size_t>(j)] / m -
                      static_cast<double>(hi[j]) * dg[static_cast<size_t>(j)] / m;
        xi[j] = static_cast<T>(static_cast<double>(gamma_.value.data[j]) *
                               batch_inv_std_[static_cast<size_t>(j)] * term);
      }
    }
  });
  return gx;
}

// ---------------------------------------------------------------------------
// ReLU

template <typename T>
TensorT<T> ReLUT<T>::forward(const TensorT<T>& x, Mode mode) {
  TensorT<T> y(x.shape);
  if (mode == Mode::train) active_.assign(static_cast<size_t>(x.numel()), 0);
  parallel_for(x.numel(), [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) {
      bool on = x.data[static_cast<size_t>(i)] > T(0);
      y.data[static_cast<size_t>(i)] = on ? x.data[static_cast<size_t>(i)] : T(0);
      if (mode == Mode::train) active_[static_cast<size_t>(i)] = on;
    }
  });
  return y;
}

template <typename T>
TensorT<T> ReLUT<T>::backward(const TensorT<T>& gy) {
  if (active_.size() != static_cast<size_t>(gy.numel())) {
    throw Error(ErrorKind::contract, "relu: backward without cached forward");
  }
  TensorT<T> gx(gy.shape);
  parallel_for(gy.numel(), [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) {
      gx.data[static_cast<size_t>(i)] =
          active_[static_cast<size_t>(i)] ? gy.data[static_cast<size_t>(i)] : T(0);
    }
  });
  return gx;
}

// ---------------------------------------------------------------------------
// MaxPool2d

template <typename T>
MaxPool2dT<T>::MaxPool2dT(int kernel, int stride, int pad) : k_(kernel), stride_(stride), pad_(pad) {}

template <typename T>
std::vector<int> MaxPool2dT<T>::out_shape(const std::vector<int>& in) const {
  return {in[0], conv_out_size(in[1], k_, stride_, pad_, 1),
          conv_out_size(in[2], k_, stride_, pad_, 1), in[3]};
}

template <typename T>
TensorT<T> MaxPool2dT<T>::forward(const TensorT<T>& x, Mode mode) {
  auto os = out_shape(x.shape);
  const int n = os[0], ho = os[1], wo = os[2], c = os[3];
  const int h = x.dim(1), w = x.dim(2);
  if (ho < 1 || wo < 1) {
    throw Error(ErrorKind::shape, "maxpool: input " + shape_str(x.shape) + " too small");
  }
  TensorT<T> y(os);
  in_shape_ = x.shape;
  bool cache = mode == Mode::train;
  if (cache) argmax_.assign(static_cast<size_t>(y.numel()), -1);

  parallel_for(static_cast<int64_t>(n) * ho, [&](int64_t b, int64_t e) {
    for (int64_t fr = b; fr < e; ++fr) {
      int bn = static_cast<int>(fr / ho);
      int oy = static_cast<int>(fr % ho);
      for (int ox = 0; ox < wo; ++ox) {
        for (int j = 0; j < c; ++j) {
          T best = -std::numeric_limits<T>::infinity();
          int64_t best_idx = -1;
          for (int ky = 0; ky < k_; ++ky) {
            int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k_; ++kx) {
              int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= w) continue;
              int64_t idx = ((static_cast<int64_t>(bn) * h + iy) * w + ix) * c + j;
              if (x.data[static_cast<size_t>(idx)] > best) {
                best = x.data[static_cast<size_t>(idx)];
                best_idx = idx;
              }
            }
          }
          int64_t oidx = ((fr * wo) + ox) * c + j;
          y.data[static_cast<size_t>(oidx)] = best;
          if (cache) argmax_[static_cast<size_t>(oidx)] = best_idx;
        }
      }
    }
  });
  return y;
}

template <typename T>
TensorT<T> MaxPool2dT<T>::backward(const TensorT<T>& gy) {
  if (argmax_.size() != static_cast<size_t>(gy.numel())) {
    throw Error(ErrorKind::contract, "maxpool: backward without cached forward");
  }
  TensorT<T> gx(in_shape_);
  const int n = in_shape_[0];
  const int64_t per_out = gy.numel() / n;
  const int64_t per_in = gx.numel() / n;
  // Overlapping windows scatter within a sample; samples are independent.
  parallel_for(n, [&](int64_t b, int64_t e) {
    for (int64_t bn = b; bn < e; ++bn) {
      for (int64_t i = bn * per_out; i < (bn + 1) * per_out; ++i) {
        int64_t src = argmax_[static_cast<size_t>(i)];
        if (src >= bn * per_in && src < (bn + 1) * per_in) {
          gx.data[static_cast<size_t>(src)] += gy.data[static_cast<size_t>(i)];
        }
      }
    }
  });
  return gx;
}

// ---------------------------------------------------------------------------
// UpsampleBilinear2x

template <typename T>
std::vector<int> UpsampleBilinear2xT<T>::out_shape(const std::vector<int>& in) const {
  return {in[0], in[1] * 2, in[2] * 2, in[3]};
}

template <typename T>
TensorT<T> UpsampleBilinear2xT<T>::forward(const TensorT<T>& x, Mode mode) {
  in_shape_ = x.shape;
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  TensorT<T> y({n, 2 * h, 2 * w, c});
  const int64_t in_plane = static_cast<int64_t>(h) * w * c;
  const int64_t out_plane = in_plane * 4;
  parallel_for(static_cast<int64_t>(n) * 2 * h, [&](int64_t b, int64_t e) {
    for (int64_t fr = b; fr < e; ++fr) {
      int bn = static_cast<int>(fr / (2 * h));
      int oy = static_cast<int>(fr % (2 * h));
      resize_bilinear_hwc(x.ptr() + bn * in_plane, h, w, c, y.ptr() + bn * out_plane, 2 * h,
                          2 * w, oy, oy + 1);
    }
  });
  return y;
}

template <typename T>
TensorT<T> UpsampleBilinear2xT<T>::backward(const TensorT<T>& gy) {
  if (in_shape_.empty()) {
    throw Error(ErrorKind::contract, "upsample: backward without forward");
  }
  const int n = in_shape_[0], h = in_shape_[1], w = in_shape_[2], c = in_shape_[3];
  const int dh = 2 * h, dw = 2 * w;
  require_shape(gy.shape, {n, dh, dw, c}, "upsample.backward");

  // Reverse tap lists: which destination indices pull from each source index.
  std::vector<std::vector<std::pair<int, double>>> rev_y(static_cast<size_t>(h)),
      rev_x(static_cast<size_t>(w));
  for (int y = 0; y < dh; ++y) {
    BilinearTap t = bilinear_tap(y, dh, h);
    rev_y[static_cast<size_t>(t.lo)].push_back({y, 1.0 - t.w_hi});
    rev_y[static_cast<size_t>(t.hi)].push_back({y, t.w_hi});
  }
  for (int x = 0; x < dw; ++x) {
    BilinearTap t = bilinear_tap(x, dw, w);
    rev_x[static_cast<size_t>(t.lo)].push_back({x, 1.0 - t.w_hi});
    rev_x[static_cast<size_t>(t.hi)].push_back({x, t.w_hi});
  }

  TensorT<T> gx(in_shape_);
  parallel_for(static_cast<int64_t>(n) * h, [&](int64_t b, int64_t e) {
    for (int64_t fr = b; fr < e; ++fr) {
      int bn = static_cast<int>(fr / h);
      int sy = static_cast<int>(fr % h);
      for (int sx = 0; sx < w; ++sx) {
        T* out = gx.ptr() + ((static_cast<int64_t>(bn) * h + sy) * w + sx) * c;
        for (const auto& [y, wy] : rev_y[static_cast<size_t>(sy)]) {
          for (const auto& [x, wx] : rev_x[static_cast<size_t>(sx)]) {
            const T* in = gy.ptr() + ((static_cast<int64_t>(bn) * dh + y) * dw + x) * c;
            double wgt = wy * wx;
            if (wgt == 0.0) continue;
            for (int j = 0; j < c; ++j) out[j] += static_cast<T>(wgt * in[j]);
          }
        }
      }
    }
  });
  return gx;
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
LinearT<T>::LinearT(std::string name, int in_dim, int out_dim, bool bias)
    : name_(std::move(name)), in_dim_(in_dim), out_dim_(out_dim), bias_(bias) {
  w_.name = name_ + ".w";
  w_.value = TensorT<T>({in_dim_, out_dim_});
  if (bias_) {
    b_.name = name_ + ".b";
    b_.value = TensorT<T>({out_dim_});
  }
}

template <typename T>
void LinearT<T>::init(Rng& rng) {
  double bound = std::sqrt(6.0 / (in_dim_ + out_dim_));
  for (auto& v : w_.value.data) v = static_cast<T>(rng.uniform(-bound, bound));
  if (bias_) b_.value.fill(T(0));
}

template <typename T>
std::vector<int> LinearT<T>::out_shape(const std::vector<int>& in) const {
  return {in[0], out_dim_};
}

template <typename T>
void LinearT<T>::collect_params(std::vector<ParamT<T>*>& out) {
  out.push_back(&w_);
  if (bias_) out.push_back(&b_);
}

template <typename T>
TensorT<T> LinearT<T>::forward(const TensorT<T>& x, Mode mode) {
  if (x.ndim() != 2 || x.dim(1) != in_dim_) {
    throw Error(ErrorKind::shape, name_ + ": expected [n," + std::to_string(in_dim_) +
                                      "], got " + shape_str(x.shape));
  }
  const int n = x.dim(0);
  TensorT<T> y({n, out_dim_});
  CMapM<T> xm(x.ptr(), n, in_dim_);
  CMapM<T> wm(w_.value.ptr(), in_dim_, out_dim_);
  MapM<T> ym(y.ptr(), n, out_dim_);
  ym.noalias() = xm * wm;
  if (bias_) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < out_dim_; ++j) y.at2(i, j) += b_.value.data[j];
  }
  if (mode == Mode::train) x_ = x;
  return y;
}

template <typename T>
TensorT<T> LinearT<T>::backward(const TensorT<T>& gy) {
  if (x_.numel() == 0) {
    throw Error(ErrorKind::contract, name_ + ": backward without cached forward");
  }
  const int n = x_.dim(0);
  require_shape(gy.shape, {n, out_dim_}, name_ + ".backward");
  w_.ensure_grad();
  if (bias_) b_.ensure_grad();

  CMapM<T> xm(x_.ptr(), n, in_dim_);
  CMapM<T> gm(gy.ptr(), n, out_dim_);
  MapM<T> gwm(w_.grad.ptr(), in_dim_, out_dim_);
  gwm.noalias() += xm.transpose() * gm;
  if (bias_) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < out_dim_; ++j) b_.grad.data[j] += gy.at2(i, j);
  }
  TensorT<T> gx({n, in_dim_});
  CMapM<T> wm(w_.value.ptr(), in_dim_, out_dim_);
  MapM<T> gxm(gx.ptr(), n, in_dim_);
  gxm.noalias() = gm * wm.transpose();
  return gx;
}

// ---------------------------------------------------------------------------
// GlobalAvgPool

template <typename T>
std::vector<int> GlobalAvgPoolT<T>::out_shape(const std::vector<int>& in) const {
  return {in[0], in[3]};
}

template <typename T>
TensorT<T> GlobalAvgPoolT<T>::forward(const TensorT<T>& x, Mode mode) {
  in_shape_ = x.shape;
  const int n = x.dim(0), c = x.dim(3);
  const int64_t hw = static_cast<int64_t>(x.dim(1)) * x.dim(2);
  TensorT<T> y({n, c});
  for (int bn = 0; bn < n; ++bn) {
    std::vector<double> acc(static_cast<size_t>(c), 0.0);
    const T* p = x.ptr() + bn * hw * c;
    for (int64_t i = 0; i < hw; ++i) {
      for (int j = 0; j < c; ++j) acc[static_cast<size_t>(j)] += p[i * c + j];
    }
    for (int j = 0; j < c; ++j) y.at2(bn, j) = static_cast<T>(acc[static_cast<size_t>(j)] / hw);
  }
  return y;
}

template <typename T>
TensorT<T> GlobalAvgPoolT<T>::backward(const TensorT<T>& gy) {
  if (in_shape_.empty()) {
    throw Error(ErrorKind::contract, "gap: backward without forward");
  }
  const int n = in_shape_[0], c = in_shape_[3];
  const int64_t hw = static_cast<int64_t>(in_shape_[1]) * in_shape_[2];
  TensorT<T> gx(in_shape_);
  for (int bn = 0; bn < n; ++bn) {
    T* p = gx.ptr() + bn * hw * c;
    for (int64_t i = 0; i < hw; ++i) {
      for (int j = 0; j < c; ++j) p[i * c + j] = static_cast<T>(gy.at2(bn, j) / static_cast<T>(hw));
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// L2NormalizeRows

template <typename T>
TensorT<T> L2NormalizeRowsT<T>::forward(const TensorT<T>& x, Mode mode) {
  const int n = x.dim(0), d = x.dim(1);
  TensorT<T> y(x.shape);
  norms_.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += static_cast<double>(x.at2(i, j)) * x.at2(i, j);
    double r = std::sqrt(s);
    if (r < 1e-12) {
      throw Error(ErrorKind::contract, "l2_normalize: zero-norm vector");
    }
    norms_[static_cast<size_t>(i)] = r;
    for (int j = 0; j < d; ++j) y.at2(i, j) = static_cast<T>(x.at2(i, j) / r);
  }
  if (mode == Mode::train) x_ = x;
  return y;
}

template <typename T>
TensorT<T> L2NormalizeRowsT<T>::backward(const TensorT<T>& gy) {
  if (x_.numel() == 0) {
    throw Error(ErrorKind::contract, "l2_normalize: backward without cached forward");
  }
  const int n = x_.dim(0), d = x_.dim(1);
  TensorT<T> gx(x_.shape);
  for (int i = 0; i < n; ++i) {
    double r = norms_[static_cast<size_t>(i)];
    double dot = 0.0;
    for (int j = 0; j < d; ++j) dot += static_cast<double>(x_.at2(i, j)) * gy.at2(i, j);
    for (int j = 0; j < d; ++j) {
      gx.at2(i, j) = static_cast<T>(gy.at2(i, j) / r - x_.at2(i, j) * dot / (r * r * r));
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Sequential

template <typename T>
TensorT<T> SequentialT<T>::forward(const TensorT<T>& x, Mode mode) {
  TensorT<T> cur = x;
  for (auto& layer : layers_) cur = layer->forward(cur, mode);
  return cur;
}

template <typename T>
TensorT<T> SequentialT<T>::backward(const TensorT<T>& gy) {
  TensorT<T> cur = gy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
  return cur;
}

template <typename T>
void SequentialT<T>::collect_params(std::vector<ParamT<T>*>& out) {
  for (auto& layer : layers_) layer->collect_params(out);
}

template <typename T>
std::vector<int> SequentialT<T>::out_shape(const std::vector<int>& in) const {
  std::vector<int> cur = in;
  for (const auto& layer : layers_) cur = layer->out_shape(cur);
  return cur;
}

template <typename T>
void SequentialT<T>::init(Rng& rng) {
  for (auto& layer : layers_) layer->init(rng);
}

template <typename T>
void SequentialT<T>::set_bn_stat_updates(bool enabled) {
  for (auto& layer : layers_) layer->set_bn_stat_updates(enabled);
}

// ---------------------------------------------------------------------------
// Residual

template <typename T>
TensorT<T> ResidualT<T>::forward(const TensorT<T>& x, Mode mode) {
  TensorT<T> main_out = main_.forward(x, mode);
  TensorT<T> skip_out = has_skip_ ? skip_.forward(x, mode) : x;
  require_shape(skip_out.shape, main_out.shape, "residual");
  TensorT<T> y(main_out.shape);
  bool cache = mode == Mode::train;
  if (cache) active_.assign(static_cast<size_t>(y.numel()), 0);
  parallel_for(y.numel(), [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) {
      T s = main_out.data[static_cast<size_t>(i)] + skip_out.data[static_cast<size_t>(i)];
      bool on = s > T(0);
      y.data[static_cast<size_t>(i)] = on ? s : T(0);
      if (cache) active_[static_cast<size_t>(i)] = on;
    }
  });
  return y;
}

template <typename T>
TensorT<T> ResidualT<T>::backward(const TensorT<T>& gy) {
  if (active_.size() != static_cast<size_t>(gy.numel())) {
    throw Error(ErrorKind::contract, "residual: backward without cached forward");
  }
  TensorT<T> gsum(gy.shape);
  parallel_for(gy.numel(), [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) {
      gsum.data[static_cast<size_t>(i)] =
          active_[static_cast<size_t>(i)] ? gy.data[static_cast<size_t>(i)] : T(0);
    }
  });
  TensorT<T> gx = main_.backward(gsum);
  if (has_skip_) {
    TensorT<T> gskip = skip_.backward(gsum);
    axpy(gx, T(1), gskip);
  } else {
    axpy(gx, T(1), gsum);
  }
  return gx;
}

template <typename T>
void ResidualT<T>::collect_params(std::vector<ParamT<T>*>& out) {
  main_.collect_params(out);
  if (has_skip_) skip_.collect_params(out);
}

template <typename T>
std::vector<int> ResidualT<T>::out_shape(const std::vector<int>& in) const {
  return main_.out_shape(in);
}

template <typename T>
void ResidualT<T>::init(Rng& rng) {
  main_.init(rng);
  if (has_skip_) skip_.init(rng);
}

template <typename T>
void ResidualT<T>::set_bn_stat_updates(bool enabled) {
  main_.set_bn_stat_updates(enabled);
  skip_.set_bn_stat_updates(enabled);
}

// ---------------------------------------------------------------------------
// Free helpers

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw Error(ErrorKind::shape,
                "concat_channels: spatial mismatch " + shape_str(a.shape) + " vs " +
                    shape_str(b.shape));
  }
  const int ca = a.dim(3), cb = b.dim(3);
  TensorT<T> y({a.dim(0), a.dim(1), a.dim(2), ca + cb});
  const int64_t pixels = a.numel() / ca;
  parallel_for(pixels, [&](int64_t bg, int64_t en) {
    for (int64_t i = bg; i < en; ++i) {
      T* out = y.ptr() + i * (ca + cb);
      std::copy(a.ptr() + i * ca, a.ptr() + (i + 1) * ca, out);
      std::copy(b.ptr() + i * cb, b.ptr() + (i + 1) * cb, out + ca);
    }
  });
  return y;
}

template <typename T>
void split_channels(const TensorT<T>& g, int c_a, TensorT<T>& ga, TensorT<T>& gb) {
  const int c = g.dim(3), cb = c - c_a;
  ga = TensorT<T>({g.dim(0), g.dim(1), g.dim(2), c_a});
  gb = TensorT<T>({g.dim(0), g.dim(1), g.dim(2), cb});
  const int64_t pixels = g.numel() / c;
  parallel_for(pixels, [&](int64_t bg, int64_t en) {
    for (int64_t i = bg; i < en; ++i) {
      const T* in = g.ptr() + i * c;
      std::copy(in, in + c_a, ga.ptr() + i * c_a);
      std::copy(in + c_a, in + c, gb.ptr() + i * cb);
    }
  });
}

template <typename T>
double softmax_cross_entropy(const TensorT<T>& logits, const std::vector<uint8_t>& target,
                             TensorT<T>* grad) {
  const int classes = logits.dim(logits.ndim() - 1);
  const int64_t m = logits.numel() / classes;
  if (static_cast<int64_t>(target.size()) != m) {
    throw Error(ErrorKind::shape, "softmax_cross_entropy: target size mismatch");
  }
  for (uint8_t t : target) {
    if (t >= classes) {
      throw Error(ErrorKind::contract, "softmax_cross_entropy: label " + std::to_string(t) +
                                           " out of range for " + std::to_string(classes) +
                                           " classes");
    }
  }
  if (grad != nullptr && grad->shape != logits.shape) *grad = TensorT<T>(logits.shape);

  int slots = std::max(1, std::min(num_threads(), 4));
  std::vector<double> partial(static_cast<size_t>(slots), 0.0);
  double total = 0.0;
  ordered_reduce(
      m, slots,
      [&](int slot, int64_t b, int64_t e) {
        double acc = 0.0;
        for (int64_t i = b; i < e; ++i) {
          const T* row = logits.ptr() + i * classes;
          int t = target[static_cast<size_t>(i)];
          double mx = row[0];
          for (int j = 1; j < classes; ++j) mx = std::max(mx, static_cast<double>(row[j]));
          double sum = 0.0;
          for (int j = 0; j < classes; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
          double lse = mx + std::log(sum);
          acc += lse - static_cast<double>(row[t]);
          if (grad != nullptr) {
            T* g = grad->ptr() + i * classes;
            for (int j = 0; j < classes; ++j) {
              double p = std::exp(static_cast<double>(row[j]) - mx) / sum;
              g[j] = static_cast<T>((p - (j == t ? 1.0 : 0.0)) / static_cast<double>(m));
            }
          }
        }
        partial[static_cast<size_t>(slot)] = acc;
      },
      [&](int slot) { total += partial[static_cast<size_t>(slot)]; });
  return total / static_cast<double>(m);
}

template <typename T>
void axpy(TensorT<T>& y, T alpha, const TensorT<T>& x) {
  require_shape(x.shape, y.shape, "axpy");
  parallel_for(y.numel(), [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i)
      y.data[static_cast<size_t>(i)] += alpha * x.data[static_cast<size_t>(i)];
  });
}

// ---------------------------------------------------------------------------
// Explicit instantiations (float for production, double for gradient checks)

#define GANORCON_INSTANTIATE(T)                                                              \
  template class Conv2dT<T>;                                                                 \
  template class BatchNorm2dT<T>;                                                            \
  template class ReLUT<T>;                                                                   \
  template class MaxPool2dT<T>;                                                              \
  template class UpsampleBilinear2xT<T>;                                                     \
  template class LinearT<T>;                                                                 \
  template class GlobalAvgPoolT<T>;                                                          \
  template class L2NormalizeRowsT<T>;                                                        \
  template class SequentialT<T>;                                                             \
  template class ResidualT<T>;                                                               \
  template TensorT<T> concat_channels<T>(const TensorT<T>&, const TensorT<T>&);              \
  template void split_channels<T>(const TensorT<T>&, int, TensorT<T>&, TensorT<T>&);         \
  template double softmax_cross_entropy<T>(const TensorT<T>&, const std::vector<uint8_t>&,   \
                                            TensorT<T>*);                                    \
  template void axpy<T>(TensorT<T>&, T, const TensorT<T>&);

GANORCON_INSTANTIATE(float)
GANORCON_INSTANTIATE(double)

#undef GANORCON_INSTANTIATE

}  // namespace ganorcon::nn
