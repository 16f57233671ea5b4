#pragma once

#include <optional>
#include <utility>

#include <nlohmann/json_fwd.hpp>

#include "ganorcon/image.hpp"
#include "ganorcon/rng.hpp"

namespace ganorcon::data {

// Stochastic augmentation recipe. The contrastive kind applies, in order:
// random resized crop, horizontal flip, gaussian blur, grayscale, color
// jitter. The few-shot kind applies random resized crop, horizontal flip and
// color jitter, with geometric operations shared bit-exactly between image
// and mask (mask resampling is nearest-neighbor).
struct AugmentationPolicy {
  enum class Kind { contrastive, fewshot };

  Kind kind = Kind::contrastive;

  double p_crop = 1.0;
  double crop_scale_min = 0.2;
  double crop_scale_max = 1.0;
  double crop_aspect_min = 3.0 / 4.0;
  double crop_aspect_max = 4.0 / 3.0;

  double p_flip = 0.5;

  double p_jitter = 0.8;
  double jitter_brightness = 0.4;
  double jitter_contrast = 0.4;
  double jitter_saturation = 0.4;
  double jitter_hue = 0.1;

  // contrastive-only ops
  double p_blur = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  double p_gray = 0.2;

  uint64_t seed = 0;

  static AugmentationPolicy contrastive_default(uint64_t seed);
  static AugmentationPolicy fewshot_default(uint64_t seed);
  // All op probabilities zero: augmentation becomes the identity.
  static AugmentationPolicy disabled(Kind kind);

  void validate() const;
};

nlohmann::json policy_to_json(const AugmentationPolicy& policy);
AugmentationPolicy policy_from_json(const nlohmann::json& j);

// Applies the policy. A few-shot policy requires a mask; a contrastive policy
// requires none. Output resolution equals input resolution.
std::pair<ImageTensor, std::optional<LabelMask>> augment_pair(
    const ImageTensor& image, const std::optional<LabelMask>& mask,
    const AugmentationPolicy& policy, Rng& draw);

// Two independent stochastic views of the same image (contrastive policies).
std::pair<ImageTensor, ImageTensor> two_views(const ImageTensor& image,
                                              const AugmentationPolicy& policy, Rng& draw);

}  // namespace ganorcon::data
