#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stica/nn/model.hpp"
#include "stica/rng.hpp"
#include "stica/tensor.hpp"

namespace stica {

enum class CropDomain { Input, Feature };

// Space-time box, max-exclusive on every axis, held constant across time.
struct CropTube {
  std::size_t x_min = 0, x_max = 0, y_min = 0, y_max = 0, t_min = 0, t_max = 0;
  CropDomain domain = CropDomain::Input;

  std::size_t width() const { return x_max - x_min; }
  std::size_t height() const { return y_max - y_min; }
  std::size_t length() const { return t_max - t_min; }
  // Throws ShapeError unless the tube is non-empty and inside T×H×W.
  void check_within(std::size_t frames, std::size_t height, std::size_t width) const;
  bool operator==(const CropTube&) const = default;
};

std::string to_string(const CropTube& tube);

struct GridExtents {
  std::size_t frames = 0, height = 0, width = 0;
};

struct CropSampling {
  double area_min = 0.4, area_max = 1.0;
  double aspect_min = 3.0 / 4.0, aspect_max = 4.0 / 3.0;
};

// Area fraction first, then a log-uniform aspect ratio; a draw is kept only
// if the rounded box fits and its area fraction lies in range. After ten
// failed draws the largest centred box with a valid aspect is used. The
// temporal window has the given length at a uniform offset.
CropTube sample_crop_tube(const GridExtents& extents, const CropSampling& sampling, std::size_t temporal_length, Rng& rng);

// Crops C×T×H×W (or N×C×T×H×W with one tube for all) and resizes every
// frame bilinearly to out_h×out_w.
Tensor input_crop_resize(const Tensor& video, const CropTube& tube, std::size_t out_h, std::size_t out_w);

struct PhotometricParams {
  double flip_prob = 0.5;
  double brightness = 0.2;  // additive shift drawn from ±brightness
  double contrast = 0.2;    // scale about the clip mean drawn from 1 ± contrast
  double blur_prob = 0.0;
  double blur_sigma_max = 1.0;
};

// One clip's draw; the same transform is applied to every frame.
struct PhotometricDraw {
  bool flip = false;
  double brightness_shift = 0.0;
  double contrast_scale = 1.0;
  double blur_sigma = 0.0;
};

PhotometricDraw draw_photometric(const PhotometricParams& params, Rng& rng);
// C×T×H×W → C×T×H×W. Values are not clamped.
Tensor apply_photometric(const Tensor& video, const PhotometricDraw& draw);
inline Tensor photometric_augment(const Tensor& video, const PhotometricParams& params, Rng& rng) {
  return apply_photometric(video, draw_photometric(params, rng));
}
Tensor horizontal_flip(const Tensor& video);

// Global gain drawn from 1 ± jitter.
Tensor audio_augment(const Tensor& audio, double gain_jitter, Rng& rng);

// Slices a feature-space tube out of D×T×H×W (or every instance of
// N×D×T×H×W). No resampling.
Tensor feature_crop(const Tensor& feat, const CropTube& tube);
// One tube per instance of N×D×T×H×W; all tubes must share their size.
Tensor feature_crop(const Tensor& feat, std::span<const CropTube> tubes);

// Non-overlapping average pooling with kernel = stride (s_time along T,
// s_space along H and W). A stand-in encoder whose feature cells map exactly
// onto input blocks.
Tensor stride_pool(const Tensor& video, std::size_t s_time, std::size_t s_space);

struct TemporalCropSpec {
  std::size_t count = 0;
  std::size_t length = 0;
};

struct CropPlan {
  std::size_t m = 1, n = 2;
  std::size_t medium_size = 6, small_size = 4;
  // Temporal lengths handed out in order to medium then small crops; crops
  // beyond the listed counts span the full time axis.
  std::vector<TemporalCropSpec> time{{2, 3}, {1, 2}};
  GridExtents grid{4, 7, 7};

  void validate() const;
  std::size_t temporal_length(std::size_t crop_index) const;
  std::size_t spatial_size(std::size_t crop_index) const { return crop_index < m ? medium_size : small_size; }
  // "2x3+1x2" ↔ {{2,3},{1,2}}; empty string = no temporal cropping.
  static std::vector<TemporalCropSpec> parse_time(const std::string& text);
  static std::string format_time(const std::vector<TemporalCropSpec>& time);
};

// Uniform offsets over all valid positions for crop `index` of the plan.
CropTube sample_feature_tube(const CropPlan& plan, std::size_t index, Rng& rng);

enum class ViewSize { Large, Medium, Small };

struct View {
  ViewSize size = ViewSize::Large;
  Tensor embedding;  // N×d
};

struct ViewSet {
  int source = 1;
  std::vector<View> views;  // Large first, then medium, then small

  std::size_t count(ViewSize size) const;
  const View& large() const { return views.front(); }
};

// Builds the view sets of the two large crops from their feature maps
// (N×D×T1×H1×W1): the uncropped Large view plus m medium and n small crops
// at independent per-instance offsets, each pooled and projected.
std::pair<ViewSet, ViewSet> sample_view_sets(const Tensor& feat1, const Tensor& feat2, const CropPlan& plan,
                                             const nn::Model& model, Rng& rng);

}  // namespace stica
