#include "ganorcon/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cmath>

#include "ganorcon/interp.hpp"

namespace ganorcon {

void validate_image(const ImageTensor& img, const std::string& what) {
  if (img.height < 1 || img.width < 1) {
    throw Error(ErrorKind::shape, what + ": image must be at least 1x1");
  }
  if (img.values.size() != static_cast<size_t>(img.pixels()) * 3) {
    throw Error(ErrorKind::shape, what + ": buffer size does not match dimensions");
  }
  for (float v : img.values) {
    if (!std::isfinite(v) || v < 0.f || v > 1.f) {
      throw Error(ErrorKind::contract, what + ": image values must be finite and within [0,1]");
    }
  }
}

ImageTensor load_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw Error(ErrorKind::io, "cannot read image: " + path.string());
  }
  ImageTensor img(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      img.at(y, x, 0) = row[x][2] / 255.f;
      img.at(y, x, 1) = row[x][1] / 255.f;
      img.at(y, x, 2) = row[x][0] / 255.f;
    }
  }
  return img;
}

void save_image_png(const std::filesystem::path& path, const ImageTensor& img) {
  cv::Mat bgr(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width; ++x) {
      auto q = [&](int c) {
        float v = std::clamp(img.at(y, x, c), 0.f, 1.f);
        return static_cast<uint8_t>(std::lround(v * 255.f));
      };
      row[x] = cv::Vec3b(q(2), q(1), q(0));
    }
  }
  if (!cv::imwrite(path.string(), bgr)) {
    throw Error(ErrorKind::io, "cannot write image: " + path.string());
  }
}

LabelMask load_mask(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) {
    throw Error(ErrorKind::io, "cannot read mask: " + path.string());
  }
  if (raw.channels() != 1 || raw.depth() != CV_8U) {
    throw Error(ErrorKind::schema,
                "mask must be a single-channel 8-bit image: " + path.string());
  }
  LabelMask mask(raw.rows, raw.cols);
  for (int y = 0; y < raw.rows; ++y) {
    const uint8_t* row = raw.ptr<uint8_t>(y);
    for (int x = 0; x < raw.cols; ++x) mask.at(y, x) = row[x];
  }
  return mask;
}

void save_mask_png(const std::filesystem::path& path, const LabelMask& mask) {
  cv::Mat m(mask.height, mask.width, CV_8UC1);
  for (int y = 0; y < mask.height; ++y) {
    uint8_t* row = m.ptr<uint8_t>(y);
    for (int x = 0; x < mask.width; ++x) row[x] = mask.at(y, x);
  }
  if (!cv::imwrite(path.string(), m)) {
    throw Error(ErrorKind::io, "cannot write mask: " + path.string());
  }
}

ImageTensor resize_image(const ImageTensor& img, int out_h, int out_w) {
  if (out_h == img.height && out_w == img.width) return img;
  ImageTensor out(out_h, out_w);
  resize_bilinear_hwc(img.values.data(), img.height, img.width, 3, out.values.data(), out_h,
                      out_w);
  return out;
}

LabelMask resize_mask(const LabelMask& mask, int out_h, int out_w) {
  if (out_h == mask.height && out_w == mask.width) return mask;
  LabelMask out(out_h, out_w, 0, mask.schema_id);
  resize_nearest_hwc(mask.values.data(), mask.height, mask.width, 1, out.values.data(), out_h,
                     out_w);
  return out;
}

ImageTensor flip_image(const ImageTensor& img) {
  ImageTensor out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
  return out;
}

LabelMask flip_mask(const LabelMask& mask) {
  LabelMask out(mask.height, mask.width, 0, mask.schema_id);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) out.at(y, x) = mask.at(y, mask.width - 1 - x);
  return out;
}

ImageTensor shift_image(const ImageTensor& img, int dx, int dy, BorderFill fill) {
  ImageTensor out(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      int sy = y - dy;
      int sx = x - dx;
      bool inside = sy >= 0 && sy < img.height && sx >= 0 && sx < img.width;
      if (!inside && fill == BorderFill::zero) continue;  // already zero
      int cy = std::clamp(sy, 0, img.height - 1);
      int cx = std::clamp(sx, 0, img.width - 1);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(cy, cx, c);
    }
  }
  return out;
}

LabelMask shift_mask(const LabelMask& mask, int dx, int dy, uint8_t fill_value) {
  LabelMask out(mask.height, mask.width, fill_value, mask.schema_id);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      int sy = y - dy;
      int sx = x - dx;
      if (sy >= 0 && sy < mask.height && sx >= 0 && sx < mask.width) {
        out.at(y, x) = mask.at(sy, sx);
      }
    }
  }
  return out;
}

Tensor image_to_tensor(const ImageTensor& img) {
  Tensor t({1, img.height, img.width, 3});
  std::copy(img.values.begin(), img.values.end(), t.data.begin());
  return t;
}

void image_into_batch(const ImageTensor& img, Tensor& batch, int n) {
  require_shape({img.height, img.width, 3}, {batch.dim(1), batch.dim(2), batch.dim(3)},
                "image_into_batch");
  std::copy(img.values.begin(), img.values.end(),
            batch.data.begin() + static_cast<int64_t>(n) * img.pixels() * 3);
}

ImageTensor tensor_to_image(const Tensor& t, int n) {
  ImageTensor img(t.dim(1), t.dim(2));
  auto begin = t.data.begin() + static_cast<int64_t>(n) * img.pixels() * 3;
  std::copy(begin, begin + img.pixels() * 3, img.values.begin());
  return img;
}

}  // namespace ganorcon
