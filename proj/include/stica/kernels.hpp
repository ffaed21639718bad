#pragma once

// Dense compute kernels. Every kernel has two implementations:
//   stica::kernels::reference  plain serial loops, kept as the test oracle
//   stica::kernels             OpenMP-parallel production versions
// The parallel versions partition output rows between threads and never
// reduce across threads, so their results do not depend on the thread count.

#include <cstddef>
#include <span>

namespace stica::kernels {

enum class Trans { No, Yes };

// C[m×n] (+)= op(A) · op(B), all row-major and contiguous.
// op(A) is m×k (A stored k×m when transposed); op(B) is k×n.
struct GemmArgs {
  Trans trans_a = Trans::No;
  Trans trans_b = Trans::No;
  std::size_t m = 0, n = 0, k = 0;
  bool accumulate = false;
};

// Spatial convolution geometry over a stack of `frames` images of
// `channels`×height×width (frames are the T axis of a C×T×H×W clip).
struct SpatialGeometry {
  std::size_t channels = 0, frames = 0, height = 0, width = 0;
  std::size_t kernel_h = 0, kernel_w = 0, stride = 1, pad = 0;
  std::size_t out_h() const { return (height + 2 * pad - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * pad - kernel_w) / stride + 1; }
  std::size_t col_rows() const { return channels * kernel_h * kernel_w; }
  std::size_t col_cols() const { return frames * out_h() * out_w(); }
};

// Temporal convolution geometry over a C×T×P clip, P = H·W cells per frame.
struct TemporalGeometry {
  std::size_t channels = 0, length = 0, plane = 0;
  std::size_t kernel = 1, stride = 1, pad = 0;
  std::size_t out_len() const { return (length + 2 * pad - kernel) / stride + 1; }
  std::size_t col_rows() const { return channels * kernel; }
  std::size_t col_cols() const { return out_len() * plane; }
};

namespace reference {
void gemm(const GemmArgs& args, std::span<const double> a, std::span<const double> b,
          std::span<double> c);
void im2col_spatial(const SpatialGeometry& g, std::span<const double> input, std::span<double> col);
void col2im_spatial(const SpatialGeometry& g, std::span<const double> col, std::span<double> input_grad);
void im2col_temporal(const TemporalGeometry& g, std::span<const double> input, std::span<double> col);
void col2im_temporal(const TemporalGeometry& g, std::span<const double> col, std::span<double> input_grad);
// Bilinear resize of `planes` images of h×w to oh×ow with half-pixel centres.
void resize_bilinear(std::span<const double> src, std::size_t planes, std::size_t h, std::size_t w,
                     std::span<double> dst, std::size_t oh, std::size_t ow);
}  // namespace reference

void gemm(const GemmArgs& args, std::span<const double> a, std::span<const double> b,
          std::span<double> c);
void im2col_spatial(const SpatialGeometry& g, std::span<const double> input, std::span<double> col);
void col2im_spatial(const SpatialGeometry& g, std::span<const double> col, std::span<double> input_grad);
void im2col_temporal(const TemporalGeometry& g, std::span<const double> input, std::span<double> col);
void col2im_temporal(const TemporalGeometry& g, std::span<const double> col, std::span<double> input_grad);
void resize_bilinear(std::span<const double> src, std::size_t planes, std::size_t h, std::size_t w,
                     std::span<double> dst, std::size_t oh, std::size_t ow);

void set_num_threads(int threads);
int num_threads();

}  // namespace stica::kernels
