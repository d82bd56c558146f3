#pragma once

// Data-parallel inner loops. Every kernel in `artface::kernels` is
// OpenMP-parallel; `artface::kernels::reference` holds a plain serial twin
// used by the tests and the benchmark as ground truth.
//
// Layouts: planar buffers are channel-major (C, H, W); interleaved buffers
// are (H, W, C). Pixel (row i, col j) has coordinates (x = j, y = i).

#include <cstddef>

namespace artface::kernels {

/// Per channel: p = softmax(temperature * logits) over all H*W cells,
/// out_xy[2c] = sum p * x, out_xy[2c+1] = sum p * y.
template <class T>
void softargmax_forward(const T* logits, int channels, int height, int width, double temperature, double* out_xy);

/// Vector-Jacobian product of softargmax_forward. `grad_xy` has 2*C entries;
/// writes d(loss)/d(logits) into `grad_logits` (same layout as logits).
template <class T>
void softargmax_backward(const T* logits, int channels, int height, int width, double temperature,
                         const double* grad_xy, T* grad_logits);

/// Channel c: exp(-|(x, y) - p_c|^2 / (2 sigma^2)). `points_xy` holds 2*C values.
void render_gaussian(const double* points_xy, int channels, double sigma, int height, int width, double* out);

/// Bilinear backward warp of an interleaved float image. `map_xy` gives, for
/// each output pixel, the source coordinate to sample; samples outside the
/// source are clamped to the border (edge replication).
void remap_bilinear(const float* src, int src_h, int src_w, int channels, const double* map_xy, int out_h,
                    int out_w, float* dst);

/// Thin-plate-spline backward map over an out_h x out_w grid:
/// map(q) = q + A [1, x, y]^T + sum_k w_k U(|q - c_k|), U(r) = r^2 log r^2.
/// `affine` holds 6 values (x: a0, ax, ay; y: b0, bx, by); `weights_xy` 2*K.
void tps_backward_map(const double* controls_xy, const double* weights_xy, int num_controls, const double* affine,
                      int out_h, int out_w, double* map_xy);

/// Crop of a low-resolution planar map that is first upscaled by `factor`
/// (upscaled pixel u samples the low map at u / factor, bilinear, clamped)
/// and then resampled bilinearly: output pixel (u, v) reads the upscaled map
/// at (origin_x + u * step, origin_y + v * step).
void sample_upscaled_crop(const double* low, int channels, int low_h, int low_w, int factor, double origin_x,
                          double origin_y, double step, int out_size, float* dst);

/// Downsample an interleaved image by an integer factor. Output pixel u is the
/// box average of the factor x factor neighborhood centered on source u*factor
/// (bilinear taps at half-pixel offsets), so coordinates scale exactly by 1/factor.
void downsample_centered(const float* src, int src_h, int src_w, int channels, int factor, float* dst);

namespace reference {

template <class T>
void softargmax_forward(const T* logits, int channels, int height, int width, double temperature, double* out_xy);

template <class T>
void softargmax_backward(const T* logits, int channels, int height, int width, double temperature,
                         const double* grad_xy, T* grad_logits);

void render_gaussian(const double* points_xy, int channels, double sigma, int height, int width, double* out);

void remap_bilinear(const float* src, int src_h, int src_w, int channels, const double* map_xy, int out_h,
                    int out_w, float* dst);

void tps_backward_map(const double* controls_xy, const double* weights_xy, int num_controls, const double* affine,
                      int out_h, int out_w, double* map_xy);

void sample_upscaled_crop(const double* low, int channels, int low_h, int low_w, int factor, double origin_x,
                          double origin_y, double step, int out_size, float* dst);

void downsample_centered(const float* src, int src_h, int src_w, int channels, int factor, float* dst);

}  // namespace reference

/// Number of OpenMP threads the parallel kernels will use.
int thread_count();

}  // namespace artface::kernels
