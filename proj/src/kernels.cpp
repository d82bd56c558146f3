#include "artface/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <omp.h>

namespace artface::kernels {

namespace {

inline double tps_kernel(double r2) { return r2 > 0.0 ? r2 * std::log(r2) : 0.0; }

struct Tap {
    int i0, i1;
    double f;
};

// Clamped linear tap for coordinate `x` on [0, n-1].
inline Tap make_tap(double x, int n) {
    const double hi = static_cast<double>(n - 1);
    x = std::clamp(x, 0.0, hi);
    const int i0 = static_cast<int>(std::floor(x));
    const int i1 = std::min(i0 + 1, n - 1);
    return {i0, i1, x - i0};
}

inline void bilinear_interleaved(const float* src, int w, int channels, Tap tx, Tap ty, float* out) {
    const float* r0 = src + static_cast<std::ptrdiff_t>(ty.i0) * w * channels;
    const float* r1 = src + static_cast<std::ptrdiff_t>(ty.i1) * w * channels;
    const double w00 = (1.0 - tx.f) * (1.0 - ty.f);
    const double w01 = tx.f * (1.0 - ty.f);
    const double w10 = (1.0 - tx.f) * ty.f;
    const double w11 = tx.f * ty.f;
    for (int c = 0; c < channels; ++c) {
        const double v = w00 * r0[tx.i0 * channels + c] + w01 * r0[tx.i1 * channels + c] +
                         w10 * r1[tx.i0 * channels + c] + w11 * r1[tx.i1 * channels + c];
        out[c] = static_cast<float>(v);
    }
}

// Value of the factor-upscaled plane at integer upscaled pixel (u, v).
inline double upscaled_value(const double* plane, int low_h, int low_w, int factor, int u, int v) {
    const Tap tx = make_tap(static_cast<double>(u) / factor, low_w);
    const Tap ty = make_tap(static_cast<double>(v) / factor, low_h);
    const double* r0 = plane + static_cast<std::ptrdiff_t>(ty.i0) * low_w;
    const double* r1 = plane + static_cast<std::ptrdiff_t>(ty.i1) * low_w;
    return (1.0 - ty.f) * ((1.0 - tx.f) * r0[tx.i0] + tx.f * r0[tx.i1]) +
           ty.f * ((1.0 - tx.f) * r1[tx.i0] + tx.f * r1[tx.i1]);
}

}  // namespace

int thread_count() { return omp_get_max_threads(); }

// ---------------------------------------------------------------------------
// softargmax

template <class T>
void softargmax_forward(const T* logits, int channels, int height, int width, double temperature, double* out_xy) {
    const std::ptrdiff_t plane = static_cast<std::ptrdiff_t>(height) * width;
#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels; ++c) {
        const T* h = logits + c * plane;
        double peak = -std::numeric_limits<double>::infinity();
        for (std::ptrdiff_t k = 0; k < plane; ++k) peak = std::max(peak, temperature * static_cast<double>(h[k]));
        double z = 0.0, sx = 0.0, sy = 0.0;
        for (int i = 0; i < height; ++i) {
            const T* row = h + static_cast<std::ptrdiff_t>(i) * width;
            double row_sum = 0.0, row_x = 0.0;
            for (int j = 0; j < width; ++j) {
                const double e = std::exp(temperature * static_cast<double>(row[j]) - peak);
                row_sum += e;
                row_x += e * j;
            }
            z += row_sum;
            sx += row_x;
            sy += row_sum * i;
        }
        out_xy[2 * c] = sx / z;
        out_xy[2 * c + 1] = sy / z;
    }
}

template <class T>
void softargmax_backward(const T* logits, int channels, int height, int width, double temperature,
                         const double* grad_xy, T* grad_logits) {
    const std::ptrdiff_t plane = static_cast<std::ptrdiff_t>(height) * width;
#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels; ++c) {
        const T* h = logits + c * plane;
        T* g = grad_logits + c * plane;
        double peak = -std::numeric_limits<double>::infinity();
        for (std::ptrdiff_t k = 0; k < plane; ++k) peak = std::max(peak, temperature * static_cast<double>(h[k]));
        std::vector<double> p(static_cast<std::size_t>(plane));
        double z = 0.0, sx = 0.0, sy = 0.0;
        for (int i = 0; i < height; ++i) {
            for (int j = 0; j < width; ++j) {
                const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(i) * width + j;
                const double e = std::exp(temperature * static_cast<double>(h[k]) - peak);
                p[static_cast<std::size_t>(k)] = e;
                z += e;
                sx += e * j;
                sy += e * i;
            }
        }
        const double mx = sx / z, my = sy / z;
        const double gx = grad_xy[2 * c], gy = grad_xy[2 * c + 1];
        for (int i = 0; i < height; ++i) {
            for (int j = 0; j < width; ++j) {
                const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(i) * width + j;
                const double prob = p[static_cast<std::size_t>(k)] / z;
                g[k] = static_cast<T>(temperature * prob * (gx * (j - mx) + gy * (i - my)));
            }
        }
    }
}

template void softargmax_forward<float>(const float*, int, int, int, double, double*);
template void softargmax_forward<double>(const double*, int, int, int, double, double*);
template void softargmax_backward<float>(const float*, int, int, int, double, const double*, float*);
template void softargmax_backward<double>(const double*, int, int, int, double, const double*, double*);

// ---------------------------------------------------------------------------

void render_gaussian(const double* points_xy, int channels, double sigma, int height, int width, double* out) {
    const double inv = 1.0 / (2.0 * sigma * sigma);
    const std::ptrdiff_t plane = static_cast<std::ptrdiff_t>(height) * width;
#pragma omp parallel for collapse(2) schedule(static)
    for (int c = 0; c < channels; ++c) {
        for (int i = 0; i < height; ++i) {
            const double px = points_xy[2 * c], py = points_xy[2 * c + 1];
            const double dy2 = (i - py) * (i - py);
            double* row = out + c * plane + static_cast<std::ptrdiff_t>(i) * width;
            for (int j = 0; j < width; ++j) row[j] = std::exp(-((j - px) * (j - px) + dy2) * inv);
        }
    }
}

void remap_bilinear(const float* src, int src_h, int src_w, int channels, const double* map_xy, int out_h,
                    int out_w, float* dst) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < out_h; ++i) {
        for (int j = 0; j < out_w; ++j) {
            const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(i) * out_w + j;
            const Tap tx = make_tap(map_xy[2 * k], src_w);
            const Tap ty = make_tap(map_xy[2 * k + 1], src_h);
            bilinear_interleaved(src, src_w, channels, tx, ty, dst + k * channels);
        }
    }
}

void tps_backward_map(const double* controls_xy, const double* weights_xy, int num_controls, const double* affine,
                      int out_h, int out_w, double* map_xy) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < out_h; ++i) {
        for (int j = 0; j < out_w; ++j) {
            double dx = affine[0] + affine[1] * j + affine[2] * i;
            double dy = affine[3] + affine[4] * j + affine[5] * i;
            for (int k = 0; k < num_controls; ++k) {
                const double ex = j - controls_xy[2 * k], ey = i - controls_xy[2 * k + 1];
                const double u = tps_kernel(ex * ex + ey * ey);
                dx += weights_xy[2 * k] * u;
                dy += weights_xy[2 * k + 1] * u;
            }
            const std::ptrdiff_t o = 2 * (static_cast<std::ptrdiff_t>(i) * out_w + j);
            map_xy[o] = j + dx;
            map_xy[o + 1] = i + dy;
        }
    }
}

void sample_upscaled_crop(const double* low, int channels, int low_h, int low_w, int factor, double origin_x,
                          double origin_y, double step, int out_size, float* dst) {
    const int up_w = low_w * factor, up_h = low_h * factor;
    const std::ptrdiff_t low_plane = static_cast<std::ptrdiff_t>(low_h) * low_w;
    const std::ptrdiff_t out_plane = static_cast<std::ptrdiff_t>(out_size) * out_size;
#pragma omp parallel for collapse(2) schedule(static)
    for (int c = 0; c < channels; ++c) {
        for (int v = 0; v < out_size; ++v) {
            const double* plane = low + c * low_plane;
            const Tap ty = make_tap(origin_y + v * step, up_h);
            float* row = dst + c * out_plane + static_cast<std::ptrdiff_t>(v) * out_size;
            for (int u = 0; u < out_size; ++u) {
                const Tap tx = make_tap(origin_x + u * step, up_w);
                const double a = upscaled_value(plane, low_h, low_w, factor, tx.i0, ty.i0);
                const double b = upscaled_value(plane, low_h, low_w, factor, tx.i1, ty.i0);
                const double d = upscaled_value(plane, low_h, low_w, factor, tx.i0, ty.i1);
                const double e = upscaled_value(plane, low_h, low_w, factor, tx.i1, ty.i1);
                row[u] = static_cast<float>((1.0 - ty.f) * ((1.0 - tx.f) * a + tx.f * b) +
                                            ty.f * ((1.0 - tx.f) * d + tx.f * e));
            }
        }
    }
}

void downsample_centered(const float* src, int src_h, int src_w, int channels, int factor, float* dst) {
    const int out_h = src_h / factor, out_w = src_w / factor;
    const double norm = 1.0 / (static_cast<double>(factor) * factor);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < out_h; ++i) {
        std::vector<float> tap(static_cast<std::size_t>(channels));
        std::vector<double> acc(static_cast<std::size_t>(channels));
        for (int j = 0; j < out_w; ++j) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int a = 0; a < factor; ++a) {
                const Tap ty = make_tap(i * factor + a + 0.5 - factor / 2.0, src_h);
                for (int b = 0; b < factor; ++b) {
                    const Tap tx = make_tap(j * factor + b + 0.5 - factor / 2.0, src_w);
                    bilinear_interleaved(src, src_w, channels, tx, ty, tap.data());
                    for (int c = 0; c < channels; ++c) acc[static_cast<std::size_t>(c)] += tap[static_cast<std::size_t>(c)];
                }
            }
            float* o = dst + (static_cast<std::ptrdiff_t>(i) * out_w + j) * channels;
            for (int c = 0; c < channels; ++c) o[c] = static_cast<float>(acc[static_cast<std::size_t>(c)] * norm);
        }
    }
}

// ---------------------------------------------------------------------------
// Serial references: direct transcriptions of the definitions.

namespace reference {

template <class T>
void softargmax_forward(const T* logits, int channels, int height, int width, double temperature, double* out_xy) {
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    for (int c = 0; c < channels; ++c) {
        const T* h = logits + c * plane;
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < plane; ++k) peak = std::max(peak, temperature * h[k]);
        std::vector<double> p(plane);
        double z = 0.0;
        for (std::size_t k = 0; k < plane; ++k) {
            p[k] = std::exp(temperature * h[k] - peak);
            z += p[k];
        }
        double x = 0.0, y = 0.0;
        for (int i = 0; i < height; ++i) {
            for (int j = 0; j < width; ++j) {
                const double prob = p[static_cast<std::size_t>(i) * width + j] / z;
                x += prob * j;
                y += prob * i;
            }
        }
        out_xy[2 * c] = x;
        out_xy[2 * c + 1] = y;
    }
}

template <class T>
void softargmax_backward(const T* logits, int channels, int height, int width, double temperature,
                         const double* grad_xy, T* grad_logits) {
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    std::vector<double> xy(2 * static_cast<std::size_t>(channels));
    softargmax_forward(logits, channels, height, width, temperature, xy.data());
    for (int c = 0; c < channels; ++c) {
        const T* h = logits + c * plane;
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < plane; ++k) peak = std::max(peak, temperature * h[k]);
        double z = 0.0;
        for (std::size_t k = 0; k < plane; ++k) z += std::exp(temperature * h[k] - peak);
        for (int i = 0; i < height; ++i) {
            for (int j = 0; j < width; ++j) {
                const std::size_t k = static_cast<std::size_t>(i) * width + j;
                const double prob = std::exp(temperature * h[k] - peak) / z;
                const double dx = prob * (j - xy[2 * c]);
                const double dy = prob * (i - xy[2 * c + 1]);
                grad_logits[c * plane + k] = static_cast<T>(temperature * (grad_xy[2 * c] * dx + grad_xy[2 * c + 1] * dy));
            }
        }
    }
}

template void softargmax_forward<float>(const float*, int, int, int, double, double*);
template void softargmax_forward<double>(const double*, int, int, int, double, double*);
template void softargmax_backward<float>(const float*, int, int, int, double, const double*, float*);
template void softargmax_backward<double>(const double*, int, int, int, double, const double*, double*);

void render_gaussian(const double* points_xy, int channels, double sigma, int height, int width, double* out) {
    for (int c = 0; c < channels; ++c) {
        for (int i = 0; i < height; ++i) {
            for (int j = 0; j < width; ++j) {
                const double dx = j - points_xy[2 * c], dy = i - points_xy[2 * c + 1];
                out[(static_cast<std::size_t>(c) * height + i) * width + j] =
                    std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            }
        }
    }
}

void remap_bilinear(const float* src, int src_h, int src_w, int channels, const double* map_xy, int out_h,
                    int out_w, float* dst) {
    auto at = [&](int y, int x, int c) {
        x = std::clamp(x, 0, src_w - 1);
        y = std::clamp(y, 0, src_h - 1);
        return static_cast<double>(src[(static_cast<std::size_t>(y) * src_w + x) * channels + c]);
    };
    for (int i = 0; i < out_h; ++i) {
        for (int j = 0; j < out_w; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * out_w + j;
            const double x = std::clamp(map_xy[2 * k], 0.0, src_w - 1.0);
            const double y = std::clamp(map_xy[2 * k + 1], 0.0, src_h - 1.0);
            const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
            const double fx = x - x0, fy = y - y0;
            for (int c = 0; c < channels; ++c) {
                const double v = (1 - fx) * (1 - fy) * at(y0, x0, c) + fx * (1 - fy) * at(y0, x0 + 1, c) +
                                 (1 - fx) * fy * at(y0 + 1, x0, c) + fx * fy * at(y0 + 1, x0 + 1, c);
                dst[k * channels + c] = static_cast<float>(v);
            }
        }
    }
}

void tps_backward_map(const double* controls_xy, const double* weights_xy, int num_controls, const double* affine,
                      int out_h, int out_w, double* map_xy) {
    for (int i = 0; i < out_h; ++i) {
        for (int j = 0; j < out_w; ++j) {
            double dx = affine[0] + affine[1] * j + affine[2] * i;
            double dy = affine[3] + affine[4] * j + affine[5] * i;
            for (int k = 0; k < num_controls; ++k) {
                const double r2 = (j - controls_xy[2 * k]) * (j - controls_xy[2 * k]) +
                                  (i - controls_xy[2 * k + 1]) * (i - controls_xy[2 * k + 1]);
                const double u = r2 == 0.0 ? 0.0 : r2 * std::log(r2);
                dx += weights_xy[2 * k] * u;
                dy += weights_xy[2 * k + 1] * u;
            }
            map_xy[2 * (static_cast<std::size_t>(i) * out_w + j)] = j + dx;
            map_xy[2 * (static_cast<std::size_t>(i) * out_w + j) + 1] = i + dy;
        }
    }
}

void sample_upscaled_crop(const double* low, int channels, int low_h, int low_w, int factor, double origin_x,
                          double origin_y, double step, int out_size, float* dst) {
    const int up_w = low_w * factor, up_h = low_h * factor;
    // Materialize each upscaled plane, then crop from it.
    std::vector<double> up(static_cast<std::size_t>(up_w) * up_h);
    for (int c = 0; c < channels; ++c) {
        const double* plane = low + static_cast<std::size_t>(c) * low_h * low_w;
        for (int v = 0; v < up_h; ++v) {
            for (int u = 0; u < up_w; ++u) {
                const double x = std::min(static_cast<double>(u) / factor, low_w - 1.0);
                const double y = std::min(static_cast<double>(v) / factor, low_h - 1.0);
                const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
                const int x1 = std::min(x0 + 1, low_w - 1), y1 = std::min(y0 + 1, low_h - 1);
                const double fx = x - x0, fy = y - y0;
                up[static_cast<std::size_t>(v) * up_w + u] =
                    (1 - fy) * ((1 - fx) * plane[y0 * low_w + x0] + fx * plane[y0 * low_w + x1]) +
                    fy * ((1 - fx) * plane[y1 * low_w + x0] + fx * plane[y1 * low_w + x1]);
            }
        }
        for (int v = 0; v < out_size; ++v) {
            for (int u = 0; u < out_size; ++u) {
                const double x = std::clamp(origin_x + u * step, 0.0, up_w - 1.0);
                const double y = std::clamp(origin_y + v * step, 0.0, up_h - 1.0);
                const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
                const int x1 = std::min(x0 + 1, up_w - 1), y1 = std::min(y0 + 1, up_h - 1);
                const double fx = x - x0, fy = y - y0;
                const double val = (1 - fy) * ((1 - fx) * up[static_cast<std::size_t>(y0) * up_w + x0] +
                                               fx * up[static_cast<std::size_t>(y0) * up_w + x1]) +
                                   fy * ((1 - fx) * up[static_cast<std::size_t>(y1) * up_w + x0] +
                                         fx * up[static_cast<std::size_t>(y1) * up_w + x1]);
                dst[(static_cast<std::size_t>(c) * out_size + v) * out_size + u] = static_cast<float>(val);
            }
        }
    }
}

void downsample_centered(const float* src, int src_h, int src_w, int channels, int factor, float* dst) {
    const int out_h = src_h / factor, out_w = src_w / factor;
    std::vector<double> map;
    // Average of `factor * factor` bilinear remaps, each shifted by a sub-offset.
    std::vector<float> tmp(static_cast<std::size_t>(out_h) * out_w * channels);
    std::vector<double> acc(tmp.size(), 0.0);
    map.resize(2 * static_cast<std::size_t>(out_h) * out_w);
    for (int a = 0; a < factor; ++a) {
        for (int b = 0; b < factor; ++b) {
            for (int i = 0; i < out_h; ++i) {
                for (int j = 0; j < out_w; ++j) {
                    const std::size_t k = static_cast<std::size_t>(i) * out_w + j;
                    map[2 * k] = j * factor + b + 0.5 - factor / 2.0;
                    map[2 * k + 1] = i * factor + a + 0.5 - factor / 2.0;
                }
            }
            remap_bilinear(src, src_h, src_w, channels, map.data(), out_h, out_w, tmp.data());
            for (std::size_t k = 0; k < tmp.size(); ++k) acc[k] += tmp[k];
        }
    }
    for (std::size_t k = 0; k < tmp.size(); ++k) dst[k] = static_cast<float>(acc[k] / (factor * factor));
}

}  // namespace reference

}  // namespace artface::kernels
