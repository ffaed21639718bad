#include "stica/augment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "stica/kernels.hpp"
#include "stica/ops.hpp"

namespace stica {

void CropTube::check_within(std::size_t frames, std::size_t height, std::size_t width) const {
  if (x_min >= x_max || y_min >= y_max || t_min >= t_max || x_max > width || y_max > height || t_max > frames)
    throw ShapeError("crop tube " + stica::to_string(*this) + " is empty or outside grid " +
                     stica::to_string(Shape{frames, height, width}));
}

std::string to_string(const CropTube& tube) {
  std::ostringstream os;
  os << (tube.domain == CropDomain::Input ? "input" : "feature") << "[x " << tube.x_min << ":" << tube.x_max << ", y "
     << tube.y_min << ":" << tube.y_max << ", t " << tube.t_min << ":" << tube.t_max << "]";
  return os.str();
}

CropTube sample_crop_tube(const GridExtents& e, const CropSampling& s, std::size_t temporal_length, Rng& rng) {
  if (temporal_length == 0 || temporal_length > e.frames)
    throw ShapeError("sample_crop_tube: temporal length " + std::to_string(temporal_length) + " exceeds " +
                     std::to_string(e.frames) + " frames");
  if (!(s.area_min > 0.0 && s.area_min <= s.area_max && s.area_max <= 1.0 && s.aspect_min > 0.0 &&
        s.aspect_min <= s.aspect_max))
    throw ConfigError("sample_crop_tube: infeasible area/aspect ranges");
  const double total = static_cast<double>(e.height * e.width);
  const double log_lo = std::log(s.aspect_min), log_hi = std::log(s.aspect_max);
  CropTube tube;
  tube.domain = CropDomain::Input;
  bool found = false;
  for (int attempt = 0; attempt < 10 && !found; ++attempt) {
    const double area = total * rng.uniform(s.area_min, s.area_max);
    const double aspect = std::exp(rng.uniform(log_lo, log_hi));
    const auto w = static_cast<std::size_t>(std::lround(std::sqrt(area * aspect)));
    const auto h = static_cast<std::size_t>(std::lround(std::sqrt(area / aspect)));
    if (w == 0 || h == 0 || w > e.width || h > e.height) continue;
    const double frac = static_cast<double>(w * h) / total;
    if (frac < s.area_min || frac > s.area_max) continue;
    tube.y_min = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(e.height - h)));
    tube.x_min = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(e.width - w)));
    tube.y_max = tube.y_min + h;
    tube.x_max = tube.x_min + w;
    found = true;
  }
  if (!found) {
    std::size_t w = e.width, h = e.height;
    const double ratio = static_cast<double>(w) / static_cast<double>(h);
    if (ratio < s.aspect_min)
      h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(w) / s.aspect_min)));
    else if (ratio > s.aspect_max)
      w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(h) * s.aspect_max)));
    tube.y_min = (e.height - h) / 2;
    tube.x_min = (e.width - w) / 2;
    tube.y_max = tube.y_min + h;
    tube.x_max = tube.x_min + w;
  }
  tube.t_min = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(e.frames - temporal_length)));
  tube.t_max = tube.t_min + temporal_length;
  return tube;
}

Tensor input_crop_resize(const Tensor& video, const CropTube& tube, std::size_t out_h, std::size_t out_w) {
  if (video.rank() != 4 && video.rank() != 5)
    throw ShapeError("input_crop_resize: expected C×T×H×W or N×C×T×H×W, got " + to_string(video.shape()));
  if (out_h == 0 || out_w == 0) throw ShapeError("input_crop_resize: output extents must be positive");
  const auto& s = video.shape();
  const std::size_t lead = video.rank() == 5 ? s[0] * s[1] : s[0];
  const std::size_t t = s[s.size() - 3], h = s[s.size() - 2], w = s.back();
  tube.check_within(t, h, w);
  const std::size_t ct = tube.length(), ch = tube.height(), cw = tube.width();
  const auto v = video.values();
  std::vector<double> crop(lead * ct * ch * cw);
  for (std::size_t c = 0; c < lead; ++c)
    for (std::size_t f = 0; f < ct; ++f)
      for (std::size_t y = 0; y < ch; ++y) {
        const double* src = v.data() + ((c * t + tube.t_min + f) * h + tube.y_min + y) * w + tube.x_min;
        std::copy(src, src + cw, crop.begin() + static_cast<std::ptrdiff_t>(((c * ct + f) * ch + y) * cw));
      }
  Shape out_shape(s.begin(), s.end() - 3);
  out_shape.insert(out_shape.end(), {ct, out_h, out_w});
  if (ch == out_h && cw == out_w) return Tensor(std::move(out_shape), std::move(crop));
  std::vector<double> out(lead * ct * out_h * out_w);
  kernels::resize_bilinear(crop, lead * ct, ch, cw, out, out_h, out_w);
  return Tensor(std::move(out_shape), std::move(out));
}

PhotometricDraw draw_photometric(const PhotometricParams& p, Rng& rng) {
  PhotometricDraw d;
  if (p.flip_prob > 0.0) d.flip = rng.bernoulli(p.flip_prob);
  if (p.brightness > 0.0) d.brightness_shift = rng.uniform(-p.brightness, p.brightness);
  if (p.contrast > 0.0) d.contrast_scale = rng.uniform(1.0 - p.contrast, 1.0 + p.contrast);
  if (p.blur_prob > 0.0 && rng.bernoulli(p.blur_prob)) d.blur_sigma = rng.uniform(0.1, p.blur_sigma_max);
  return d;
}

Tensor horizontal_flip(const Tensor& video) {
  if (video.rank() < 2) throw ShapeError("horizontal_flip: need rank >= 2");
  const std::size_t w = video.shape().back(), rows = video.numel() / w;
  const auto v = video.values();
  std::vector<double> out(v.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t x = 0; x < w; ++x) out[r * w + x] = v[r * w + (w - 1 - x)];
  return Tensor(video.shape(), std::move(out));
}

namespace {

void gaussian_blur(std::vector<double>& v, std::size_t planes, std::size_t h, std::size_t w, double sigma) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(2.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double norm = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i)
    norm += taps[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
  for (auto& t : taps) t /= norm;
  auto clampi = [](std::ptrdiff_t i, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  std::vector<double> tmp(h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    double* img = v.data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -radius; i <= radius; ++i)
          acc += taps[static_cast<std::size_t>(i + radius)] * img[y * w + clampi(static_cast<std::ptrdiff_t>(x) + i, w)];
        tmp[y * w + x] = acc;
      }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -radius; i <= radius; ++i)
          acc += taps[static_cast<std::size_t>(i + radius)] * tmp[clampi(static_cast<std::ptrdiff_t>(y) + i, h) * w + x];
        img[y * w + x] = acc;
      }
  }
}

}  // namespace

Tensor apply_photometric(const Tensor& video, const PhotometricDraw& d) {
  if (video.rank() != 4) throw ShapeError("photometric_augment: expected C×T×H×W, got " + to_string(video.shape()));
  Tensor src = d.flip ? horizontal_flip(video) : video;
  std::vector<double> v(src.values().begin(), src.values().end());
  if (d.contrast_scale != 1.0) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    for (double& x : v) x = (x - mean) * d.contrast_scale + mean;
  }
  if (d.brightness_shift != 0.0)
    for (double& x : v) x += d.brightness_shift;
  if (d.blur_sigma > 0.0) {
    const auto& s = video.shape();
    gaussian_blur(v, s[0] * s[1], s[2], s[3], d.blur_sigma);
  }
  return Tensor(video.shape(), std::move(v));
}

Tensor audio_augment(const Tensor& audio, double gain_jitter, Rng& rng) {
  if (gain_jitter <= 0.0) return audio;
  const double gain = rng.uniform(1.0 - gain_jitter, 1.0 + gain_jitter);
  std::vector<double> v(audio.values().begin(), audio.values().end());
  for (double& x : v) x *= gain;
  return Tensor(audio.shape(), std::move(v));
}

Tensor feature_crop(const Tensor& feat, const CropTube& tube) {
  if (feat.rank() != 4 && feat.rank() != 5)
    throw ShapeError("feature_crop: expected D×T×H×W or N×D×T×H×W, got " + to_string(feat.shape()));
  const std::size_t r = feat.rank();
  tube.check_within(feat.size(r - 3), feat.size(r - 2), feat.size(r - 1));
  Tensor out = feat;
  if (tube.length() != feat.size(r - 3)) out = slice(out, r - 3, tube.t_min, tube.t_max);
  if (tube.height() != feat.size(r - 2)) out = slice(out, r - 2, tube.y_min, tube.y_max);
  if (tube.width() != feat.size(r - 1)) out = slice(out, r - 1, tube.x_min, tube.x_max);
  return out;
}

Tensor feature_crop(const Tensor& feat, std::span<const CropTube> tubes) {
  if (feat.rank() != 5) throw ShapeError("feature_crop: batched crop needs N×D×T×H×W, got " + to_string(feat.shape()));
  const std::size_t n = feat.size(0);
  if (tubes.size() != n) throw ShapeError("feature_crop: " + std::to_string(tubes.size()) + " tubes for " + std::to_string(n) + " instances");
  for (const auto& t : tubes)
    if (t.length() != tubes[0].length() || t.height() != tubes[0].height() || t.width() != tubes[0].width())
      throw ShapeError("feature_crop: per-instance tubes must share their size");
  if (n == 1) return feature_crop(feat, tubes[0]);
  std::vector<Tensor> parts;
  parts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) parts.push_back(feature_crop(slice(feat, 0, i, i + 1), tubes[i]));
  return concat(parts, 0);
}

Tensor stride_pool(const Tensor& video, std::size_t st, std::size_t ss) {
  if (video.rank() != 4) throw ShapeError("stride_pool: expected C×T×H×W, got " + to_string(video.shape()));
  const auto& s = video.shape();
  if (st == 0 || ss == 0 || s[1] % st != 0 || s[2] % ss != 0 || s[3] % ss != 0)
    throw ShapeError("stride_pool: extents " + to_string(s) + " not divisible by strides");
  const std::size_t c = s[0], t = s[1], h = s[2], w = s[3];
  const std::size_t ot = t / st, oh = h / ss, ow = w / ss;
  const double inv = 1.0 / static_cast<double>(st * ss * ss);
  const auto v = video.values();
  std::vector<double> out(c * ot * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t f = 0; f < ot; ++f)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = 0.0;
          for (std::size_t df = 0; df < st; ++df)
            for (std::size_t dy = 0; dy < ss; ++dy)
              for (std::size_t dx = 0; dx < ss; ++dx)
                acc += v[((ch * t + f * st + df) * h + y * ss + dy) * w + x * ss + dx];
          out[((ch * ot + f) * oh + y) * ow + x] = acc * inv;
        }
  return Tensor({c, ot, oh, ow}, std::move(out));
}

void CropPlan::validate() const {
  auto grid_name = [&] { return "encoder.grid " + std::to_string(grid.height) + "x" + std::to_string(grid.width); };
  if (m > 0 && (medium_size == 0 || medium_size > grid.height || medium_size > grid.width))
    throw ConfigError("crop.medium_size = " + std::to_string(medium_size) + " does not fit " + grid_name());
  if (n > 0 && (small_size == 0 || small_size > grid.height || small_size > grid.width))
    throw ConfigError("crop.small_size = " + std::to_string(small_size) + " does not fit " + grid_name());
  for (const auto& spec : time)
    if (spec.length == 0 || spec.length > grid.frames)
      throw ConfigError("crop.time length " + std::to_string(spec.length) + " does not fit encoder.grid frames " +
                        std::to_string(grid.frames));
}

std::size_t CropPlan::temporal_length(std::size_t crop_index) const {
  std::size_t seen = 0;
  for (const auto& spec : time) {
    if (crop_index < seen + spec.count) return spec.length;
    seen += spec.count;
  }
  return grid.frames;
}

std::vector<TemporalCropSpec> CropPlan::parse_time(const std::string& text) {
  std::vector<TemporalCropSpec> out;
  if (text.empty()) return out;
  std::istringstream is(text);
  std::string term;
  while (std::getline(is, term, '+')) {
    const auto x = term.find('x');
    try {
      if (x == std::string::npos) throw std::invalid_argument(term);
      std::size_t used = 0;
      const std::string count = term.substr(0, x), length = term.substr(x + 1);
      TemporalCropSpec spec{std::stoul(count, &used), 0};
      if (used != count.size()) throw std::invalid_argument(term);
      spec.length = std::stoul(length, &used);
      if (used != length.size()) throw std::invalid_argument(term);
      out.push_back(spec);
    } catch (const std::logic_error&) {
      throw ConfigError("crop.time: cannot parse '" + term + "', expected COUNTxLENGTH terms joined by '+'");
    }
  }
  return out;
}

std::string CropPlan::format_time(const std::vector<TemporalCropSpec>& time) {
  std::string s;
  for (const auto& spec : time) {
    if (!s.empty()) s += '+';
    s += std::to_string(spec.count) + "x" + std::to_string(spec.length);
  }
  return s;
}

CropTube sample_feature_tube(const CropPlan& plan, std::size_t index, Rng& rng) {
  const std::size_t size = plan.spatial_size(index), len = plan.temporal_length(index);
  if (size > plan.grid.height || size > plan.grid.width || len > plan.grid.frames)
    throw ShapeError("feature crop " + std::to_string(index) + " does not fit the feature grid");
  CropTube t;
  t.domain = CropDomain::Feature;
  t.t_min = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(plan.grid.frames - len)));
  t.y_min = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(plan.grid.height - size)));
  t.x_min = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(plan.grid.width - size)));
  t.t_max = t.t_min + len;
  t.y_max = t.y_min + size;
  t.x_max = t.x_min + size;
  return t;
}

std::size_t ViewSet::count(ViewSize size) const {
  return static_cast<std::size_t>(std::count_if(views.begin(), views.end(), [&](const View& v) { return v.size == size; }));
}

namespace {

ViewSet build_view_set(int source, const Tensor& feat, const CropPlan& plan, const nn::Model& model, Rng& rng) {
  const std::size_t n = feat.size(0);
  ViewSet set;
  set.source = source;
  set.views.push_back({ViewSize::Large, model.embed_features(feat)});
  for (std::size_t c = 0; c < plan.m + plan.n; ++c) {
    std::vector<CropTube> tubes(n);
    std::vector<std::size_t> offsets(n);
    for (std::size_t i = 0; i < n; ++i) {
      tubes[i] = sample_feature_tube(plan, c, rng);
      offsets[i] = tubes[i].t_min;
    }
    set.views.push_back({c < plan.m ? ViewSize::Medium : ViewSize::Small, model.embed_features(feature_crop(feat, tubes), offsets)});
  }
  return set;
}

}  // namespace

std::pair<ViewSet, ViewSet> sample_view_sets(const Tensor& feat1, const Tensor& feat2, const CropPlan& plan,
                                             const nn::Model& model, Rng& rng) {
  plan.validate();
  const Shape grid{plan.grid.frames, plan.grid.height, plan.grid.width};
  for (const Tensor* f : {&feat1, &feat2})
    if (f->rank() != 5 || Shape(f->shape().begin() + 2, f->shape().end()) != grid)
      throw ShapeError("sample_view_sets: feature map " + to_string(f->shape()) + " does not match plan grid " + to_string(grid));
  if (feat1.shape() != feat2.shape()) throw ShapeError("sample_view_sets: the two feature maps differ in shape");
  ViewSet first = build_view_set(1, feat1, plan, model, rng);
  ViewSet second = build_view_set(2, feat2, plan, model, rng);
  return {std::move(first), std::move(second)};
}

}  // namespace stica
