#include <omp.h>

#include <algorithm>
#include <vector>

#include "stica/kernels.hpp"

namespace stica::kernels {

namespace {

constexpr std::size_t kColBlock = 128;
constexpr std::size_t kParallelMinWork = 1u << 15;

// op(X) packed as a contiguous rows×cols row-major matrix.
std::span<const double> packed(Trans trans, std::size_t rows, std::size_t cols,
                               std::span<const double> x, std::vector<double>& scratch) {
  if (trans == Trans::No) return x.first(rows * cols);
  scratch.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) scratch[r * cols + c] = x[c * rows + r];
  return scratch;
}

// Four rows of C over columns [j0, j1).
void micro_rows4(const double* __restrict a, std::size_t k, const double* __restrict b, std::size_t n,
                 double* __restrict c, std::size_t j0, std::size_t j1) {
  double* __restrict c0 = c;
  double* __restrict c1 = c + n;
  double* __restrict c2 = c + 2 * n;
  double* __restrict c3 = c + 3 * n;
  for (std::size_t p = 0; p < k; ++p) {
    const double a0 = a[p], a1 = a[k + p], a2 = a[2 * k + p], a3 = a[3 * k + p];
    if (a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0) continue;
    const double* __restrict row = b + p * n;
    for (std::size_t j = j0; j < j1; ++j) {
      const double bj = row[j];
      c0[j] += a0 * bj;
      c1[j] += a1 * bj;
      c2[j] += a2 * bj;
      c3[j] += a3 * bj;
    }
  }
}

void micro_row(const double* __restrict a, std::size_t k, const double* __restrict b, std::size_t n,
               double* __restrict c, std::size_t j0, std::size_t j1) {
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p];
    if (av == 0.0) continue;
    const double* __restrict row = b + p * n;
    for (std::size_t j = j0; j < j1; ++j) c[j] += av * row[j];
  }
}

}  // namespace

void set_num_threads(int threads) { omp_set_num_threads(std::max(1, threads)); }
int num_threads() { return omp_get_max_threads(); }

void gemm(const GemmArgs& args, std::span<const double> a, std::span<const double> b,
          std::span<double> c) {
  const std::size_t m = args.m, n = args.n, k = args.k;
  if (!args.accumulate) std::fill_n(c.begin(), m * n, 0.0);
  if (m == 0 || n == 0 || k == 0) return;
  std::vector<double> a_scratch, b_scratch;
  const auto ap = packed(args.trans_a, m, k, a, a_scratch);
  const auto bp = packed(args.trans_b, k, n, b, b_scratch);

  const std::size_t row_blocks = (m + 3) / 4;
  const std::size_t col_blocks = (n + kColBlock - 1) / kColBlock;
  const long tasks = static_cast<long>(row_blocks * col_blocks);
  const bool parallel = m * n * k >= kParallelMinWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (long task = 0; task < tasks; ++task) {
    const std::size_t rb = static_cast<std::size_t>(task) / col_blocks;
    const std::size_t cb = static_cast<std::size_t>(task) % col_blocks;
    const std::size_t i = rb * 4;
    const std::size_t j0 = cb * kColBlock, j1 = std::min(n, j0 + kColBlock);
    if (i + 4 <= m) {
      micro_rows4(ap.data() + i * k, k, bp.data(), n, c.data() + i * n, j0, j1);
    } else {
      for (std::size_t r = i; r < m; ++r) micro_row(ap.data() + r * k, k, bp.data(), n, c.data() + r * n, j0, j1);
    }
  }
}

void im2col_spatial(const SpatialGeometry& g, std::span<const double> input, std::span<double> col) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), cols = g.col_cols();
  const long rows = static_cast<long>(g.col_rows());
#pragma omp parallel for schedule(static) if (rows * cols >= static_cast<long>(kParallelMinWork))
  for (long row = 0; row < rows; ++row) {
    const std::size_t kx = static_cast<std::size_t>(row) % g.kernel_w;
    const std::size_t ky = (static_cast<std::size_t>(row) / g.kernel_w) % g.kernel_h;
    const std::size_t c = static_cast<std::size_t>(row) / (g.kernel_w * g.kernel_h);
    double* out = col.data() + static_cast<std::size_t>(row) * cols;
    for (std::size_t t = 0; t < g.frames; ++t) {
      const double* frame = input.data() + (c * g.frames + t) * g.height * g.width;
      for (std::size_t y = 0; y < oh; ++y) {
        const long iy = static_cast<long>(y * g.stride + ky) - static_cast<long>(g.pad);
        double* dst = out + (t * oh + y) * ow;
        if (iy < 0 || iy >= static_cast<long>(g.height)) {
          std::fill_n(dst, ow, 0.0);
          continue;
        }
        const double* src_row = frame + static_cast<std::size_t>(iy) * g.width;
        for (std::size_t x = 0; x < ow; ++x) {
          const long ix = static_cast<long>(x * g.stride + kx) - static_cast<long>(g.pad);
          dst[x] = (ix >= 0 && ix < static_cast<long>(g.width)) ? src_row[ix] : 0.0;
        }
      }
    }
  }
}

void col2im_spatial(const SpatialGeometry& g, std::span<const double> col, std::span<double> input_grad) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), cols = g.col_cols();
  const long channels = static_cast<long>(g.channels);
#pragma omp parallel for schedule(static) if (g.col_rows() * cols >= kParallelMinWork)
  for (long c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const std::size_t row = (static_cast<std::size_t>(c) * g.kernel_h + ky) * g.kernel_w + kx;
        const double* src = col.data() + row * cols;
        for (std::size_t t = 0; t < g.frames; ++t) {
          double* frame = input_grad.data() + (static_cast<std::size_t>(c) * g.frames + t) * g.height * g.width;
          for (std::size_t y = 0; y < oh; ++y) {
            const long iy = static_cast<long>(y * g.stride + ky) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
            double* dst_row = frame + static_cast<std::size_t>(iy) * g.width;
            const double* s = src + (t * oh + y) * ow;
            for (std::size_t x = 0; x < ow; ++x) {
              const long ix = static_cast<long>(x * g.stride + kx) - static_cast<long>(g.pad);
              if (ix >= 0 && ix < static_cast<long>(g.width)) dst_row[ix] += s[x];
            }
          }
        }
      }
  }
}

void im2col_temporal(const TemporalGeometry& g, std::span<const double> input, std::span<double> col) {
  const std::size_t ol = g.out_len(), cols = g.col_cols();
  const long rows = static_cast<long>(g.col_rows());
#pragma omp parallel for schedule(static) if (rows * cols >= static_cast<long>(kParallelMinWork))
  for (long row = 0; row < rows; ++row) {
    const std::size_t kt = static_cast<std::size_t>(row) % g.kernel;
    const std::size_t c = static_cast<std::size_t>(row) / g.kernel;
    double* out = col.data() + static_cast<std::size_t>(row) * cols;
    for (std::size_t t = 0; t < ol; ++t) {
      const long it = static_cast<long>(t * g.stride + kt) - static_cast<long>(g.pad);
      double* dst = out + t * g.plane;
      if (it < 0 || it >= static_cast<long>(g.length)) {
        std::fill_n(dst, g.plane, 0.0);
      } else {
        std::copy_n(input.data() + (c * g.length + static_cast<std::size_t>(it)) * g.plane, g.plane, dst);
      }
    }
  }
}

void col2im_temporal(const TemporalGeometry& g, std::span<const double> col, std::span<double> input_grad) {
  const std::size_t ol = g.out_len(), cols = g.col_cols();
  const long channels = static_cast<long>(g.channels);
#pragma omp parallel for schedule(static) if (g.col_rows() * cols >= kParallelMinWork)
  for (long c = 0; c < channels; ++c) {
    for (std::size_t kt = 0; kt < g.kernel; ++kt) {
      const double* src = col.data() + (static_cast<std::size_t>(c) * g.kernel + kt) * cols;
      for (std::size_t t = 0; t < ol; ++t) {
        const long it = static_cast<long>(t * g.stride + kt) - static_cast<long>(g.pad);
        if (it < 0 || it >= static_cast<long>(g.length)) continue;
        double* dst = input_grad.data() + (static_cast<std::size_t>(c) * g.length + static_cast<std::size_t>(it)) * g.plane;
        const double* s = src + t * g.plane;
        for (std::size_t p = 0; p < g.plane; ++p) dst[p] += s[p];
      }
    }
  }
}

void resize_bilinear(std::span<const double> src, std::size_t planes, std::size_t h, std::size_t w,
                     std::span<double> dst, std::size_t oh, std::size_t ow) {
  // Per-axis source indices and weights, shared by all planes.
  struct Tap { std::size_t i0, i1; double f; };
  auto taps = [](std::size_t in_extent, std::size_t out_extent) {
    std::vector<Tap> out(out_extent);
    for (std::size_t o = 0; o < out_extent; ++o) {
      double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in_extent) / static_cast<double>(out_extent) - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in_extent - 1));
      const auto i0 = static_cast<std::size_t>(s);
      out[o] = {i0, std::min(i0 + 1, in_extent - 1), s - static_cast<double>(i0)};
    }
    return out;
  };
  const auto ty = taps(h, oh);
  const auto tx = taps(w, ow);
  const long n = static_cast<long>(planes);
#pragma omp parallel for schedule(static) if (planes * oh * ow >= kParallelMinWork)
  for (long p = 0; p < n; ++p) {
    const double* plane = src.data() + static_cast<std::size_t>(p) * h * w;
    double* out = dst.data() + static_cast<std::size_t>(p) * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const double* r0 = plane + ty[y].i0 * w;
      const double* r1 = plane + ty[y].i1 * w;
      for (std::size_t x = 0; x < ow; ++x) {
        const auto& t = tx[x];
        const double top = r0[t.i0] + t.f * (r0[t.i1] - r0[t.i0]);
        const double bottom = r1[t.i0] + t.f * (r1[t.i1] - r1[t.i0]);
        out[y * ow + x] = top + ty[y].f * (bottom - top);
      }
    }
  }
}

}  // namespace stica::kernels
