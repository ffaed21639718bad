#include <algorithm>
#include <cmath>

#include "stica/kernels.hpp"

namespace stica::kernels::reference {

void gemm(const GemmArgs& args, std::span<const double> a, std::span<const double> b,
          std::span<double> c) {
  const auto [ta, tb, m, n, k, accumulate] = args;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ta == Trans::No ? a[i * k + p] : a[p * m + i];
        const double bv = tb == Trans::No ? b[p * n + j] : b[j * k + p];
        acc += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

void im2col_spatial(const SpatialGeometry& g, std::span<const double> input, std::span<double> col) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), cols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const std::size_t row = (c * g.kernel_h + ky) * g.kernel_w + kx;
        for (std::size_t t = 0; t < g.frames; ++t)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
              const long iy = static_cast<long>(y * g.stride + ky) - static_cast<long>(g.pad);
              const long ix = static_cast<long>(x * g.stride + kx) - static_cast<long>(g.pad);
              double v = 0.0;
              if (iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) && ix < static_cast<long>(g.width))
                v = input[((c * g.frames + t) * g.height + iy) * g.width + ix];
              col[row * cols + (t * oh + y) * ow + x] = v;
            }
      }
}

void col2im_spatial(const SpatialGeometry& g, std::span<const double> col, std::span<double> input_grad) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), cols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const std::size_t row = (c * g.kernel_h + ky) * g.kernel_w + kx;
        for (std::size_t t = 0; t < g.frames; ++t)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
              const long iy = static_cast<long>(y * g.stride + ky) - static_cast<long>(g.pad);
              const long ix = static_cast<long>(x * g.stride + kx) - static_cast<long>(g.pad);
              if (iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) && ix < static_cast<long>(g.width))
                input_grad[((c * g.frames + t) * g.height + iy) * g.width + ix] +=
                    col[row * cols + (t * oh + y) * ow + x];
            }
      }
}

void im2col_temporal(const TemporalGeometry& g, std::span<const double> input, std::span<double> col) {
  const std::size_t ol = g.out_len(), cols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t kt = 0; kt < g.kernel; ++kt) {
      const std::size_t row = c * g.kernel + kt;
      for (std::size_t t = 0; t < ol; ++t) {
        const long it = static_cast<long>(t * g.stride + kt) - static_cast<long>(g.pad);
        for (std::size_t p = 0; p < g.plane; ++p) {
          double v = 0.0;
          if (it >= 0 && it < static_cast<long>(g.length)) v = input[(c * g.length + it) * g.plane + p];
          col[row * cols + t * g.plane + p] = v;
        }
      }
    }
}

void col2im_temporal(const TemporalGeometry& g, std::span<const double> col, std::span<double> input_grad) {
  const std::size_t ol = g.out_len(), cols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t kt = 0; kt < g.kernel; ++kt) {
      const std::size_t row = c * g.kernel + kt;
      for (std::size_t t = 0; t < ol; ++t) {
        const long it = static_cast<long>(t * g.stride + kt) - static_cast<long>(g.pad);
        if (it < 0 || it >= static_cast<long>(g.length)) continue;
        for (std::size_t p = 0; p < g.plane; ++p)
          input_grad[(c * g.length + it) * g.plane + p] += col[row * cols + t * g.plane + p];
      }
    }
}

void resize_bilinear(std::span<const double> src, std::size_t planes, std::size_t h, std::size_t w,
                     std::span<double> dst, std::size_t oh, std::size_t ow) {
  auto source_coord = [](std::size_t out, std::size_t in_extent, std::size_t out_extent) {
    const double s = (static_cast<double>(out) + 0.5) * static_cast<double>(in_extent) /
                         static_cast<double>(out_extent) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in_extent - 1));
  };
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y) {
      const double sy = source_coord(y, h, oh);
      const std::size_t y0 = static_cast<std::size_t>(sy);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t x = 0; x < ow; ++x) {
        const double sx = source_coord(x, w, ow);
        const std::size_t x0 = static_cast<std::size_t>(sx);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const double fx = sx - static_cast<double>(x0);
        const double* plane = src.data() + p * h * w;
        const double top = plane[y0 * w + x0] + fx * (plane[y0 * w + x1] - plane[y0 * w + x0]);
        const double bottom = plane[y1 * w + x0] + fx * (plane[y1 * w + x1] - plane[y1 * w + x0]);
        dst[(p * oh + y) * ow + x] = top + fy * (bottom - top);
      }
    }
}

}  // namespace stica::kernels::reference
