#include "artface/heatmap.hpp"

#include <algorithm>
#include <array>
#include <tuple>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "artface/errors.hpp"
#include "artface/kernels.hpp"

namespace artface {

static_assert(std::endian::native == std::endian::little, "heatmap blobs assume a little-endian host");

HeatmapStack::HeatmapStack(int c, int h, int w, double fill) : channels(c), height(h), width(w) {
    if (c < 0 || h <= 0 || w <= 0) throw ValidationError("heatmap dimensions must be positive");
    values.assign(static_cast<std::size_t>(c) * h * w, fill);
}

std::span<double> HeatmapStack::channel(int c) {
    const auto plane = static_cast<std::size_t>(height) * width;
    return std::span<double>(values).subspan(static_cast<std::size_t>(c) * plane, plane);
}

std::span<const double> HeatmapStack::channel(int c) const {
    const auto plane = static_cast<std::size_t>(height) * width;
    return std::span<const double>(values).subspan(static_cast<std::size_t>(c) * plane, plane);
}

double& HeatmapStack::at(int c, int row, int col) {
    return values[(static_cast<std::size_t>(c) * height + row) * width + col];
}

double HeatmapStack::at(int c, int row, int col) const {
    return values[(static_cast<std::size_t>(c) * height + row) * width + col];
}

namespace {

void check_stack(const HeatmapStack& stack, double temperature) {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ValidationError("softargmax temperature must be positive");
    }
    if (stack.values.size() != static_cast<std::size_t>(stack.channels) * stack.height * stack.width) {
        throw ValidationError("heatmap buffer size does not match its dimensions");
    }
    for (std::size_t k = 0; k < stack.values.size(); ++k) {
        if (!std::isfinite(stack.values[k])) {
            const auto plane = static_cast<std::size_t>(stack.height) * stack.width;
            throw ValidationError("heatmap channel " + std::to_string(k / plane) + " contains a non-finite value");
        }
    }
}

}  // namespace

std::vector<Point2> spatial_softargmax(const HeatmapStack& stack, double temperature) {
    check_stack(stack, temperature);
    std::vector<double> xy(2 * static_cast<std::size_t>(stack.channels));
    kernels::softargmax_forward(stack.values.data(), stack.channels, stack.height, stack.width, temperature,
                                xy.data());
    std::vector<Point2> out(static_cast<std::size_t>(stack.channels));
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = {xy[2 * c], xy[2 * c + 1]};
    return out;
}

HeatmapStack spatial_softargmax_backward(const HeatmapStack& stack, std::span<const Point2> grad,
                                         double temperature) {
    check_stack(stack, temperature);
    if (grad.size() != static_cast<std::size_t>(stack.channels)) {
        throw ValidationError("softargmax gradient needs one (x, y) pair per channel");
    }
    std::vector<double> g(2 * grad.size());
    for (std::size_t c = 0; c < grad.size(); ++c) {
        g[2 * c] = grad[c].x;
        g[2 * c + 1] = grad[c].y;
    }
    HeatmapStack out(stack.channels, stack.height, stack.width);
    kernels::softargmax_backward(stack.values.data(), stack.channels, stack.height, stack.width, temperature,
                                 g.data(), out.values.data());
    return out;
}

HeatmapStack render_gaussian(std::span<const Point2> points, double sigma, int height, int width) {
    if (!(sigma > 0.0)) throw ValidationError("gaussian sigma must be positive");
    HeatmapStack out(static_cast<int>(points.size()), height, width);
    std::vector<double> xy;
    xy.reserve(2 * points.size());
    for (const auto& p : points) {
        xy.push_back(p.x);
        xy.push_back(p.y);
    }
    kernels::render_gaussian(xy.data(), out.channels, sigma, height, width, out.values.data());
    return out;
}

HeatmapStack render_delta_logits(std::span<const Point2> points, int height, int width, double floor_logit) {
    HeatmapStack out(static_cast<int>(points.size()), height, width, floor_logit);
    for (int c = 0; c < out.channels; ++c) {
        const Point2 p = points[static_cast<std::size_t>(c)];
        const double x = std::clamp(p.x, 0.0, width - 1.0);
        const double y = std::clamp(p.y, 0.0, height - 1.0);
        const int x0 = std::min(static_cast<int>(std::floor(x)), width - 1);
        const int y0 = std::min(static_cast<int>(std::floor(y)), height - 1);
        const int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
        const double fx = x - x0, fy = y - y0;
        // Accumulate probabilities first: taps coincide at the border.
        const std::array<std::tuple<int, int, double>, 4> taps = {{
            {y0, x0, (1 - fx) * (1 - fy)}, {y0, x1, fx * (1 - fy)}, {y1, x0, (1 - fx) * fy}, {y1, x1, fx * fy}}};
        std::array<double, 4> mass{};
        for (std::size_t a = 0; a < taps.size(); ++a) {
            for (std::size_t b = 0; b < taps.size(); ++b) {
                if (std::get<0>(taps[a]) == std::get<0>(taps[b]) && std::get<1>(taps[a]) == std::get<1>(taps[b])) {
                    mass[a] += std::get<2>(taps[b]);
                }
            }
        }
        for (std::size_t a = 0; a < taps.size(); ++a) {
            if (mass[a] > 0.0) out.at(c, std::get<0>(taps[a]), std::get<1>(taps[a])) = std::log(mass[a]);
        }
    }
    return out;
}

void write_heatmap_blob(const HeatmapStack& stack, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    const std::int32_t header[3] = {stack.channels, stack.height, stack.width};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    out.write(reinterpret_cast<const char*>(stack.values.data()),
              static_cast<std::streamsize>(stack.values.size() * sizeof(double)));
    if (!out) throw IoError("short write to " + path.string());
}

HeatmapStack read_heatmap_blob(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::int32_t header[3] = {0, 0, 0};
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!in || header[0] < 0 || header[1] <= 0 || header[2] <= 0) throw ParseError("bad heatmap blob header");
    HeatmapStack stack(header[0], header[1], header[2]);
    in.read(reinterpret_cast<char*>(stack.values.data()),
            static_cast<std::streamsize>(stack.values.size() * sizeof(double)));
    if (!in) throw ParseError("truncated heatmap blob");
    if (in.peek() != std::char_traits<char>::eof()) throw ParseError("trailing bytes in heatmap blob");
    return stack;
}

}  // namespace artface
