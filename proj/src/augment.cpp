#include "ganorcon/augment.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "ganorcon/interp.hpp"

namespace ganorcon::data {

using nlohmann::json;

AugmentationPolicy AugmentationPolicy::contrastive_default(uint64_t seed) {
  AugmentationPolicy p;
  p.kind = Kind::contrastive;
  p.seed = seed;
  return p;
}

AugmentationPolicy AugmentationPolicy::fewshot_default(uint64_t seed) {
  AugmentationPolicy p;
  p.kind = Kind::fewshot;
  p.seed = seed;
  p.crop_scale_min = 0.5;  // keep most of the labeled content in view
  p.p_blur = 0.0;
  p.p_gray = 0.0;
  return p;
}

AugmentationPolicy AugmentationPolicy::disabled(Kind kind) {
  AugmentationPolicy p;
  p.kind = kind;
  p.p_crop = p.p_flip = p.p_jitter = p.p_blur = p.p_gray = 0.0;
  return p;
}

void AugmentationPolicy::validate() const {
  if (kind == Kind::fewshot && (p_blur > 0.0 || p_gray > 0.0)) {
    throw Error(ErrorKind::config,
                "fewshot augmentation admits only crop, flip and color jitter");
  }
  if (crop_scale_min <= 0.0 || crop_scale_max > 1.0 || crop_scale_min > crop_scale_max) {
    throw Error(ErrorKind::config, "invalid crop scale range");
  }
  if (crop_aspect_min <= 0.0 || crop_aspect_min > crop_aspect_max) {
    throw Error(ErrorKind::config, "invalid crop aspect range");
  }
}

json policy_to_json(const AugmentationPolicy& p) {
  json ops = json::array();
  ops.push_back({{"op", "random_resized_crop"},
                 {"p", p.p_crop},
                 {"scale", {p.crop_scale_min, p.crop_scale_max}},
                 {"aspect", {p.crop_aspect_min, p.crop_aspect_max}}});
  ops.push_back({{"op", "horizontal_flip"}, {"p", p.p_flip}});
  if (p.kind == AugmentationPolicy::Kind::contrastive) {
    ops.push_back({{"op", "gaussian_blur"},
                   {"p", p.p_blur},
                   {"sigma", {p.blur_sigma_min, p.blur_sigma_max}}});
    ops.push_back({{"op", "grayscale"}, {"p", p.p_gray}});
  }
  ops.push_back({{"op", "color_jitter"},
                 {"p", p.p_jitter},
                 {"brightness", p.jitter_brightness},
                 {"contrast", p.jitter_contrast},
                 {"saturation", p.jitter_saturation},
                 {"hue", p.jitter_hue}});
  return json{
      {"kind", p.kind == AugmentationPolicy::Kind::contrastive ? "contrastive" : "fewshot"},
      {"ops", ops},
      {"seed", p.seed}};
}

AugmentationPolicy policy_from_json(const json& j) {
  AugmentationPolicy p;
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "contrastive") {
    p = AugmentationPolicy::contrastive_default(0);
  } else if (kind == "fewshot") {
    p = AugmentationPolicy::fewshot_default(0);
  } else {
    throw Error(ErrorKind::config, "unknown augmentation kind: " + kind);
  }
  p.seed = j.value("seed", 0ULL);
  for (const auto& op : j.value("ops", json::array())) {
    std::string name = op.at("op").get<std::string>();
    if (name == "random_resized_crop") {
      p.p_crop = op.value("p", p.p_crop);
      if (op.contains("scale")) {
        p.crop_scale_min = op["scale"][0];
        p.crop_scale_max = op["scale"][1];
      }
      if (op.contains("aspect")) {
        p.crop_aspect_min = op["aspect"][0];
        p.crop_aspect_max = op["aspect"][1];
      }
    } else if (name == "horizontal_flip") {
      p.p_flip = op.value("p", p.p_flip);
    } else if (name == "gaussian_blur") {
      if (p.kind == AugmentationPolicy::Kind::fewshot) {
        throw Error(ErrorKind::config, "gaussian_blur is not a fewshot op");
      }
      p.p_blur = op.value("p", p.p_blur);
      if (op.contains("sigma")) {
        p.blur_sigma_min = op["sigma"][0];
        p.blur_sigma_max = op["sigma"][1];
      }
    } else if (name == "grayscale") {
      if (p.kind == AugmentationPolicy::Kind::fewshot) {
        throw Error(ErrorKind::config, "grayscale is not a fewshot op");
      }
      p.p_gray = op.value("p", p.p_gray);
    } else if (name == "color_jitter") {
      p.p_jitter = op.value("p", p.p_jitter);
      p.jitter_brightness = op.value("brightness", p.jitter_brightness);
      p.jitter_contrast = op.value("contrast", p.jitter_contrast);
      p.jitter_saturation = op.value("saturation", p.jitter_saturation);
      p.jitter_hue = op.value("hue", p.jitter_hue);
    } else {
      throw Error(ErrorKind::config, "unknown augmentation op: " + name);
    }
  }
  p.validate();
  return p;
}

namespace {

struct CropRect {
  int y0, x0, h, w;
};

CropRect draw_crop(const AugmentationPolicy& p, int h, int w, Rng& rng) {
  double scale = rng.uniform(p.crop_scale_min, p.crop_scale_max);
  double log_lo = std::log(p.crop_aspect_min), log_hi = std::log(p.crop_aspect_max);
  double aspect = std::exp(rng.uniform(log_lo, log_hi));
  double area = scale * h * w;
  int cw = static_cast<int>(std::lround(std::sqrt(area * aspect)));
  int ch = static_cast<int>(std::lround(std::sqrt(area / aspect)));
  cw = std::clamp(cw, 1, w);
  ch = std::clamp(ch, 1, h);
  int x0 = static_cast<int>(rng.uniform_int(0, w - cw));
  int y0 = static_cast<int>(rng.uniform_int(0, h - ch));
  return {y0, x0, ch, cw};
}

ImageTensor crop_resize_image(const ImageTensor& img, const CropRect& r) {
  ImageTensor sub(r.h, r.w);
  for (int y = 0; y < r.h; ++y)
    for (int x = 0; x < r.w; ++x)
      for (int c = 0; c < 3; ++c) sub.at(y, x, c) = img.at(r.y0 + y, r.x0 + x, c);
  return resize_image(sub, img.height, img.width);
}

LabelMask crop_resize_mask(const LabelMask& mask, const CropRect& r) {
  LabelMask sub(r.h, r.w, 0, mask.schema_id);
  for (int y = 0; y < r.h; ++y)
    for (int x = 0; x < r.w; ++x) sub.at(y, x) = mask.at(r.y0 + y, r.x0 + x);
  return resize_mask(sub, mask.height, mask.width);
}

float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

void apply_brightness(ImageTensor& img, float f) {
  for (float& v : img.values) v = std::clamp(v * f, 0.f, 1.f);
}

void apply_contrast(ImageTensor& img, float f) {
  double acc = 0.0;
  for (int64_t i = 0; i < img.pixels(); ++i) {
    acc += luma(img.values[i * 3], img.values[i * 3 + 1], img.values[i * 3 + 2]);
  }
  float mean = static_cast<float>(acc / static_cast<double>(img.pixels()));
  for (float& v : img.values) v = std::clamp(f * v + (1.f - f) * mean, 0.f, 1.f);
}

void apply_saturation(ImageTensor& img, float f) {
  for (int64_t i = 0; i < img.pixels(); ++i) {
    float* px = img.values.data() + i * 3;
    float l = luma(px[0], px[1], px[2]);
    for (int c = 0; c < 3; ++c) px[c] = std::clamp(f * px[c] + (1.f - f) * l, 0.f, 1.f);
  }
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  float mx = std::max({r, g, b});
  float mn = std::min({r, g, b});
  v = mx;
  float d = mx - mn;
  s = mx <= 0.f ? 0.f : d / mx;
  if (d <= 0.f) {
    h = 0.f;
    return;
  }
  if (mx == r) {
    h = (g - b) / d;
  } else if (mx == g) {
    h = 2.f + (b - r) / d;
  } else {
    h = 4.f + (r - g) / d;
  }
  h /= 6.f;
  if (h < 0.f) h += 1.f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  if (s <= 0.f) {
    r = g = b = v;
    return;
  }
  h = h - std::floor(h);
  float hf = h * 6.f;
  int i = static_cast<int>(hf) % 6;
  float f = hf - std::floor(hf);
  float p = v * (1.f - s);
  float q = v * (1.f - s * f);
  float t = v * (1.f - s * (1.f - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

void apply_hue(ImageTensor& img, float delta) {
  for (int64_t i = 0; i < img.pixels(); ++i) {
    float* px = img.values.data() + i * 3;
    float h, s, v;
    rgb_to_hsv(px[0], px[1], px[2], h, s, v);
    hsv_to_rgb(h + delta, s, v, px[0], px[1], px[2]);
    for (int c = 0; c < 3; ++c) px[c] = std::clamp(px[c], 0.f, 1.f);
  }
}

void apply_color_jitter(ImageTensor& img, const AugmentationPolicy& p, Rng& rng) {
  float fb = static_cast<float>(
      rng.uniform(std::max(0.0, 1.0 - p.jitter_brightness), 1.0 + p.jitter_brightness));
  float fc = static_cast<float>(
      rng.uniform(std::max(0.0, 1.0 - p.jitter_contrast), 1.0 + p.jitter_contrast));
  float fs = static_cast<float>(
      rng.uniform(std::max(0.0, 1.0 - p.jitter_saturation), 1.0 + p.jitter_saturation));
  float fh = static_cast<float>(rng.uniform(-p.jitter_hue, p.jitter_hue));
  apply_brightness(img, fb);
  apply_contrast(img, fc);
  apply_saturation(img, fs);
  apply_hue(img, fh);
}

void apply_grayscale(ImageTensor& img) {
  for (int64_t i = 0; i < img.pixels(); ++i) {
    float* px = img.values.data() + i * 3;
    float l = luma(px[0], px[1], px[2]);
    px[0] = px[1] = px[2] = l;
  }
}

void apply_gaussian_blur(ImageTensor& img, double sigma) {
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  radius = std::min(radius, std::max(img.height, img.width));
  std::vector<float> kernel(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[static_cast<size_t>(i + radius)] = static_cast<float>(w);
    sum += w;
  }
  for (float& k : kernel) k = static_cast<float>(k / sum);

  ImageTensor tmp(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        float acc = 0.f;
        for (int i = -radius; i <= radius; ++i) {
          int sx = std::clamp(x + i, 0, img.width - 1);
          acc += kernel[static_cast<size_t>(i + radius)] * img.at(y, sx, c);
        }
        tmp.at(y, x, c) = acc;
      }
    }
  }
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        float acc = 0.f;
        for (int i = -radius; i <= radius; ++i) {
          int sy = std::clamp(y + i, 0, img.height - 1);
          acc += kernel[static_cast<size_t>(i + radius)] * tmp.at(sy, x, c);
        }
        img.at(y, x, c) = acc;
      }
    }
  }
}

}  // namespace

std::pair<ImageTensor, std::optional<LabelMask>> augment_pair(
    const ImageTensor& image, const std::optional<LabelMask>& mask,
    const AugmentationPolicy& policy, Rng& draw) {
  policy.validate();
  if (policy.kind == AugmentationPolicy::Kind::fewshot && !mask.has_value()) {
    throw Error(ErrorKind::contract, "fewshot augmentation requires a mask");
  }
  if (policy.kind == AugmentationPolicy::Kind::contrastive && mask.has_value()) {
    throw Error(ErrorKind::contract, "contrastive augmentation takes no mask");
  }
  if (mask.has_value() && (mask->height != image.height || mask->width != image.width)) {
    throw Error(ErrorKind::shape, "augment_pair: mask and image dimensions differ");
  }

  ImageTensor img = image;
  std::optional<LabelMask> out_mask = mask;

  if (draw.bernoulli(policy.p_crop)) {
    CropRect rect = draw_crop(policy, img.height, img.width, draw);
    img = crop_resize_image(img, rect);
    if (out_mask) out_mask = crop_resize_mask(*out_mask, rect);
  }
  if (draw.bernoulli(policy.p_flip)) {
    img = flip_image(img);
    if (out_mask) out_mask = flip_mask(*out_mask);
  }
  if (policy.kind == AugmentationPolicy::Kind::contrastive) {
    if (draw.bernoulli(policy.p_blur)) {
      apply_gaussian_blur(img, draw.uniform(policy.blur_sigma_min, policy.blur_sigma_max));
    }
    if (draw.bernoulli(policy.p_gray)) {
      apply_grayscale(img);
    }
  }
  if (draw.bernoulli(policy.p_jitter)) {
    apply_color_jitter(img, policy, draw);
  }
  return {std::move(img), std::move(out_mask)};
}

std::pair<ImageTensor, ImageTensor> two_views(const ImageTensor& image,
                                              const AugmentationPolicy& policy, Rng& draw) {
  if (policy.kind != AugmentationPolicy::Kind::contrastive) {
    throw Error(ErrorKind::contract, "two_views requires a contrastive policy");
  }
  auto [a, ma] = augment_pair(image, std::nullopt, policy, draw);
  auto [b, mb] = augment_pair(image, std::nullopt, policy, draw);
  return {std::move(a), std::move(b)};
}

}  // namespace ganorcon::data
