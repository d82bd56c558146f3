#include "artface/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <omp.h>

#include "artface/errors.hpp"
#include "artface/seed.hpp"
#include "artface/image.hpp"
#include "artface/kernels.hpp"

namespace artface {

namespace {

double tps_u(double r2) { return r2 > 0.0 ? r2 * std::log(r2) : 0.0; }

Point2 centroid(std::span<const Point2> pts) {
    Point2 c;
    for (const auto& p : pts) c = c + p;
    return c * (1.0 / static_cast<double>(pts.size()));
}

void check_tps_configuration(std::span<const Point2> pts) {
    if (pts.size() < 3) throw DegenerateError("thin-plate spline needs at least 3 control points");
    double extent = 0.0;
    for (const auto& p : pts) extent = std::max({extent, std::abs(p.x), std::abs(p.y)});
    const double tol = 1e-9 * (1.0 + extent);
    for (std::size_t a = 0; a < pts.size(); ++a) {
        if (!is_finite(pts[a])) throw ValidationError("control point " + std::to_string(a) + " is not finite");
        for (std::size_t b = a + 1; b < pts.size(); ++b) {
            if (distance(pts[a], pts[b]) <= tol) {
                throw DegenerateError("duplicate control points " + std::to_string(a) + " and " + std::to_string(b));
            }
        }
    }
    const Point2 c = centroid(pts);
    double sxx = 0, sxy = 0, syy = 0;
    for (const auto& p : pts) {
        const Point2 d = p - c;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    const double tr = sxx + syy;
    const double det = sxx * syy - sxy * sxy;
    // Smallest/largest eigenvalue ratio of the scatter matrix.
    const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
    const double lmax = tr / 2.0 + disc, lmin = tr / 2.0 - disc;
    if (!(lmax > 0.0) || lmin / lmax < 1e-12) throw DegenerateError("control points are collinear");
}

// Uniform in [lo, hi]; returns lo exactly when the range is empty.
double uniform(std::mt19937_64& rng, double lo, double hi) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

}  // namespace

// ---------------------------------------------------------------------------

Point2 TPSField::displacement(Point2 q) const {
    Point2 d{affine[0] + affine[1] * q.x + affine[2] * q.y, affine[3] + affine[4] * q.x + affine[5] * q.y};
    for (std::size_t k = 0; k < control_src.size(); ++k) {
        const Point2 e = q - control_src[k];
        const double u = tps_u(e.x * e.x + e.y * e.y);
        d.x += weights[k].x * u;
        d.y += weights[k].y * u;
    }
    return d;
}

TPSField TPSField::identity() { return TPSField{}; }

TPSField tps_fit(std::span<const Point2> src_points, std::span<const Point2> dst_points, double regularization) {
    if (src_points.size() != dst_points.size()) throw ValidationError("tps_fit: point count mismatch");
    if (!(regularization >= 0.0)) throw ValidationError("tps_fit: regularization must be non-negative");
    check_tps_configuration(src_points);
    const auto n = static_cast<Eigen::Index>(src_points.size());

    // Solve in a centred, unit-RMS frame for conditioning; U is scale-covariant
    // up to an r^2 term that the side conditions turn into a constant.
    const Point2 m = centroid(src_points);
    double s = 0.0;
    for (const auto& p : src_points) s += (p.x - m.x) * (p.x - m.x) + (p.y - m.y) * (p.y - m.y);
    s = std::sqrt(s / static_cast<double>(n));

    Eigen::MatrixXd sys = Eigen::MatrixXd::Zero(n + 3, n + 3);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + 3, 2);
    std::vector<Point2> cn(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) cn[static_cast<std::size_t>(i)] = (src_points[static_cast<std::size_t>(i)] - m) * (1.0 / s);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Point2 ci = cn[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < n; ++j) {
            const Point2 e = ci - cn[static_cast<std::size_t>(j)];
            sys(i, j) = tps_u(e.x * e.x + e.y * e.y);
        }
        sys(i, i) += regularization;
        sys(i, n) = 1.0;
        sys(i, n + 1) = ci.x;
        sys(i, n + 2) = ci.y;
        sys(n, i) = 1.0;
        sys(n + 1, i) = ci.x;
        sys(n + 2, i) = ci.y;
        const Point2 v = dst_points[static_cast<std::size_t>(i)] - src_points[static_cast<std::size_t>(i)];
        rhs(i, 0) = v.x;
        rhs(i, 1) = v.y;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(sys);
    if (!lu.isInvertible()) throw DegenerateError("thin-plate spline system is singular");
    const Eigen::MatrixXd sol = lu.solve(rhs);

    TPSField field;
    field.control_src.assign(src_points.begin(), src_points.end());
    field.control_dst.assign(dst_points.begin(), dst_points.end());
    field.regularization = regularization;
    field.weights.resize(static_cast<std::size_t>(n));
    const double inv_s2 = 1.0 / (s * s);
    const double log_s2 = std::log(s * s);
    std::array<double, 2> shift{0.0, 0.0};
    for (Eigen::Index i = 0; i < n; ++i) {
        const Point2 c = src_points[static_cast<std::size_t>(i)];
        const double c2 = c.x * c.x + c.y * c.y;
        for (int a = 0; a < 2; ++a) shift[static_cast<std::size_t>(a)] += sol(i, a) * c2;
        field.weights[static_cast<std::size_t>(i)] = {sol(i, 0) * inv_s2, sol(i, 1) * inv_s2};
    }
    for (int a = 0; a < 2; ++a) {
        const double a0 = sol(n, a), ax = sol(n + 1, a), ay = sol(n + 2, a);
        const auto o = static_cast<std::size_t>(3 * a);
        field.affine[o] = a0 - (ax * m.x + ay * m.y) / s - log_s2 * inv_s2 * shift[static_cast<std::size_t>(a)];
        field.affine[o + 1] = ax / s;
        field.affine[o + 2] = ay / s;
    }
    return field;
}

std::vector<double> tps_backward_map(const TPSField& field, int width, int height) {
    std::vector<double> controls, weights;
    controls.reserve(2 * field.control_src.size());
    weights.reserve(2 * field.weights.size());
    for (std::size_t k = 0; k < field.control_src.size(); ++k) {
        controls.push_back(field.control_src[k].x);
        controls.push_back(field.control_src[k].y);
        weights.push_back(field.weights[k].x);
        weights.push_back(field.weights[k].y);
    }
    std::vector<double> map(2 * static_cast<std::size_t>(width) * height);
    kernels::tps_backward_map(controls.data(), weights.data(), static_cast<int>(field.control_src.size()),
                              field.affine.data(), height, width, map.data());
    return map;
}

cv::Mat tps_warp_image(const cv::Mat& image, const TPSField& field) {
    if (image.empty()) throw ValidationError("tps_warp_image: empty image");
    const auto map = tps_backward_map(field, image.cols, image.rows);
    return remap_image(image, image.cols, image.rows, map);
}

// ---------------------------------------------------------------------------

std::span<const BaseGroup> augmented_groups() {
    static constexpr std::array<BaseGroup, 6> groups = {BaseGroup::right_brow, BaseGroup::left_brow,
                                                        BaseGroup::nose,       BaseGroup::right_eye,
                                                        BaseGroup::left_eye,   BaseGroup::mouth};
    return groups;
}

AugmentResult augment_landmarks(const LandmarkSet& landmarks, const AugmentConfig& config, std::uint64_t rng_seed) {
    if (config.group_shift_fraction < 0 || config.group_scale_range < 0 || config.stretch_range < 0 ||
        config.group_scale_range >= 1 || config.stretch_range >= 1) {
        throw ValidationError("augmentation magnitudes must be in [0, 1)");
    }
    const int w = landmarks.image_width(), h = landmarks.image_height();
    const auto& orig = landmarks.points();

    double minx = orig[0].x, maxx = orig[0].x, miny = orig[0].y, maxy = orig[0].y;
    for (const auto& p : orig) {
        minx = std::min(minx, p.x);
        maxx = std::max(maxx, p.x);
        miny = std::min(miny, p.y);
        maxy = std::max(maxy, p.y);
    }
    const double diag = std::hypot(maxx - minx, maxy - miny);
    const Point2 face_center = centroid(orig);

    std::mt19937_64 rng(rng_seed);
    std::string last_error = "no attempt made";
    for (int attempt = 1; attempt <= std::max(1, config.max_retries); ++attempt) {
        LandmarkSet::Points moved = orig;
        for (BaseGroup g : augmented_groups()) {
            const auto idx = base_group_indices(g);
            const double shift = config.group_shift_fraction * diag;
            const Point2 t{uniform(rng, -shift, shift), uniform(rng, -shift, shift)};
            const double sc = uniform(rng, 1.0 - config.group_scale_range, 1.0 + config.group_scale_range);
            Point2 gc;
            for (int i : idx) gc = gc + moved[static_cast<std::size_t>(i)];
            gc = gc * (1.0 / static_cast<double>(idx.size()));
            for (int i : idx) {
                auto& p = moved[static_cast<std::size_t>(i)];
                if (sc != 1.0) p = gc + (p - gc) * sc;
                if (t.x != 0.0 || t.y != 0.0) p = p + t;
            }
        }
        const double sx = uniform(rng, 1.0 - config.stretch_range, 1.0 + config.stretch_range);
        const double sy = uniform(rng, 1.0 - config.stretch_range, 1.0 + config.stretch_range);
        if (sx != 1.0 || sy != 1.0) {
            for (auto& p : moved) p = {face_center.x + (p.x - face_center.x) * sx, face_center.y + (p.y - face_center.y) * sy};
        }
        for (const auto& fs : config.fixed_shifts) {
            for (int i : base_group_indices(fs.group)) moved[static_cast<std::size_t>(i)] = moved[static_cast<std::size_t>(i)] + fs.offset;
        }

        const double tol = config.max_outside_px;
        const bool inside = std::all_of(moved.begin(), moved.end(), [&](Point2 p) {
            return p.x >= -tol && p.y >= -tol && p.x <= w - 1 + tol && p.y <= h - 1 + tol;
        });
        if (!inside) {
            last_error = "displaced landmarks leave the image";
            continue;
        }
        if (config.is_zero()) {
            return {LandmarkSet(moved, w, h), TPSField::identity(), attempt};
        }

        // Field is fitted displaced -> original so it can drive a backward warp.
        std::vector<Point2> src(moved.begin(), moved.end());
        std::vector<Point2> dst(orig.begin(), orig.end());
        if (config.border_anchors) {
            const double X = w - 1.0, Y = h - 1.0;
            for (Point2 a : {Point2{0, 0}, Point2{X / 2, 0}, Point2{X, 0}, Point2{X, Y / 2}, Point2{X, Y},
                             Point2{X / 2, Y}, Point2{0, Y}, Point2{0, Y / 2}}) {
                src.push_back(a);
                dst.push_back(a);
            }
        }
        try {
            TPSField field = tps_fit(src, dst, config.regularization);
            return {LandmarkSet(moved, w, h), std::move(field), attempt};
        } catch (const DegenerateError& e) {
            last_error = e.what();
        }
    }
    throw DegenerateError("augmentation retries exhausted: " + last_error);
}

// ---------------------------------------------------------------------------

Point2 SimilarityTransform::apply(Point2 p) const {
    const double a = scale * std::cos(angle), b = scale * std::sin(angle);
    return {a * p.x - b * p.y + tx, b * p.x + a * p.y + ty};
}

SimilarityTransform SimilarityTransform::inverse() const {
    SimilarityTransform inv;
    inv.angle = -angle;
    inv.scale = 1.0 / scale;
    const Point2 t = SimilarityTransform{inv.angle, inv.scale, 0.0, 0.0}.apply({tx, ty});
    inv.tx = -t.x;
    inv.ty = -t.y;
    return inv;
}

SimilarityTransform SimilarityTransform::compose(const SimilarityTransform& other) const {
    SimilarityTransform out;
    out.angle = std::remainder(angle + other.angle, 2.0 * M_PI);
    out.scale = scale * other.scale;
    const Point2 t = apply({other.tx, other.ty});
    out.tx = t.x;
    out.ty = t.y;
    return out;
}

std::array<double, 6> SimilarityTransform::matrix() const {
    const double a = scale * std::cos(angle), b = scale * std::sin(angle);
    return {a, -b, tx, b, a, ty};
}

SimilarityTransform SimilarityTransform::from_matrix_params(double a, double b, double tx, double ty) {
    return {std::atan2(b, a), std::hypot(a, b), tx, ty};
}

SimilarityTransform fit_similarity(std::span<const Point2> src, std::span<const Point2> dst) {
    if (src.size() != dst.size()) throw ValidationError("fit_similarity: point count mismatch");
    if (src.size() < 2) throw ValidationError("fit_similarity: needs at least 2 correspondences");
    const Point2 ms = centroid(src), md = centroid(dst);
    double sxx = 0.0, dot = 0.0, cross = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const Point2 a = src[i] - ms, b = dst[i] - md;
        sxx += a.x * a.x + a.y * a.y;
        dot += a.x * b.x + a.y * b.y;
        cross += a.x * b.y - a.y * b.x;
    }
    double extent = 0.0;
    for (const auto& p : src) extent = std::max({extent, std::abs(p.x), std::abs(p.y)});
    if (sxx <= 1e-24 * (1.0 + extent * extent)) throw DegenerateError("fit_similarity: source points coincide");
    const double a = dot / sxx, b = cross / sxx;
    const double tx = md.x - (a * ms.x - b * ms.y);
    const double ty = md.y - (b * ms.x + a * ms.y);
    return SimilarityTransform::from_matrix_params(a, b, tx, ty);
}

double residual_sum_squares(const SimilarityTransform& t, std::span<const Point2> src, std::span<const Point2> dst) {
    double r = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const Point2 d = t.apply(src[i]) - dst[i];
        r += d.x * d.x + d.y * d.y;
    }
    return r;
}

int RansacResult::num_inliers() const {
    return static_cast<int>(std::count(inlier_mask.begin(), inlier_mask.end(), true));
}

double default_ransac_threshold(int image_width, int image_height) {
    return 0.01 * std::hypot(static_cast<double>(image_width), static_cast<double>(image_height));
}

std::array<int, 2> ransac_sample(std::uint64_t seed, int trial, int n) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(trial)));
    const int a = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
    int b = static_cast<int>(rng() % static_cast<std::uint64_t>(n - 1));
    if (b >= a) ++b;
    return {a, b};
}

namespace {

struct Hypothesis {
    int support = -1;
    int trial = -1;
};

bool better(const Hypothesis& a, const Hypothesis& b) {
    if (a.support != b.support) return a.support > b.support;
    return a.trial >= 0 && (b.trial < 0 || a.trial < b.trial);
}

int count_support(const SimilarityTransform& t, std::span<const Point2> src, std::span<const Point2> dst,
                  double thr2) {
    int n = 0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const Point2 d = t.apply(src[i]) - dst[i];
        if (d.x * d.x + d.y * d.y <= thr2) ++n;
    }
    return n;
}

Hypothesis evaluate_trial(int trial, std::span<const Point2> src, std::span<const Point2> dst,
                          const RansacOptions& o) {
    const auto pair = ransac_sample(o.seed, trial, static_cast<int>(src.size()));
    const std::array<Point2, 2> s = {src[static_cast<std::size_t>(pair[0])], src[static_cast<std::size_t>(pair[1])]};
    const std::array<Point2, 2> d = {dst[static_cast<std::size_t>(pair[0])], dst[static_cast<std::size_t>(pair[1])]};
    if (distance(s[0], s[1]) <= 1e-9) return {0, trial};
    const auto t = fit_similarity(s, d);
    return {count_support(t, src, dst, o.threshold_px * o.threshold_px), trial};
}

}  // namespace

RansacResult ransac_similarity(std::span<const Point2> src, std::span<const Point2> dst, const RansacOptions& o) {
    if (src.size() != dst.size()) throw ValidationError("ransac: point count mismatch");
    if (src.size() < 2) throw ValidationError("ransac: needs at least 2 correspondences");
    if (!(o.threshold_px > 0.0)) throw ValidationError("ransac: threshold must be positive");
    if (o.max_trials < 1) throw ValidationError("ransac: max_trials must be positive");

    Hypothesis best;
    if (o.parallel) {
#pragma omp parallel
        {
            Hypothesis local;
#pragma omp for schedule(static)
            for (int t = 0; t < o.max_trials; ++t) {
                const Hypothesis h = evaluate_trial(t, src, dst, o);
                if (better(h, local)) local = h;
            }
#pragma omp critical(artface_ransac_best)
            if (better(local, best)) best = local;
        }
    } else {
        for (int t = 0; t < o.max_trials; ++t) {
            const Hypothesis h = evaluate_trial(t, src, dst, o);
            if (better(h, best)) best = h;
        }
    }
    if (best.support < std::max(2, o.min_inliers)) {
        throw RegistrationError("ransac: best hypothesis has " + std::to_string(std::max(0, best.support)) +
                                " inliers, need " + std::to_string(std::max(2, o.min_inliers)));
    }

    const double thr2 = o.threshold_px * o.threshold_px;
    const auto pair = ransac_sample(o.seed, best.trial, static_cast<int>(src.size()));
    SimilarityTransform t = fit_similarity(
        std::array<Point2, 2>{src[static_cast<std::size_t>(pair[0])], src[static_cast<std::size_t>(pair[1])]},
        std::array<Point2, 2>{dst[static_cast<std::size_t>(pair[0])], dst[static_cast<std::size_t>(pair[1])]});
    auto mask_of = [&](const SimilarityTransform& tr) {
        std::vector<bool> m(src.size());
        for (std::size_t i = 0; i < src.size(); ++i) {
            const Point2 d = tr.apply(src[i]) - dst[i];
            m[i] = d.x * d.x + d.y * d.y <= thr2;
        }
        return m;
    };
    std::vector<bool> mask = mask_of(t);
    for (int it = 0; it < o.max_refinements; ++it) {
        std::vector<Point2> s, d;
        for (std::size_t i = 0; i < src.size(); ++i) {
            if (mask[i]) {
                s.push_back(src[i]);
                d.push_back(dst[i]);
            }
        }
        if (s.size() < 2) break;
        const auto refit = fit_similarity(s, d);
        auto next = mask_of(refit);
        const auto support = std::count(next.begin(), next.end(), true);
        if (support < std::max(2, o.min_inliers)) break;
        t = refit;
        if (next == mask) break;
        mask = std::move(next);
    }
    mask = mask_of(t);
    RansacResult result{t, std::move(mask), o.max_trials};
    if (result.num_inliers() < std::max(2, o.min_inliers)) {
        throw RegistrationError("ransac: refined transform lost support");
    }
    return result;
}

// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const SimilarityTransform& t) {
    const auto m = t.matrix();
    j = nlohmann::json{{"angle_rad", t.angle},
                       {"angle_deg", t.angle * 180.0 / M_PI},
                       {"scale", t.scale},
                       {"tx", t.tx},
                       {"ty", t.ty},
                       {"matrix", {{m[0], m[1], m[2]}, {m[3], m[4], m[5]}}}};
}

void from_json(const nlohmann::json& j, SimilarityTransform& t) {
    t.angle = j.at("angle_rad").get<double>();
    t.scale = j.at("scale").get<double>();
    t.tx = j.at("tx").get<double>();
    t.ty = j.at("ty").get<double>();
}

void to_json(nlohmann::json& j, const TPSField& f) {
    auto pts = [](const std::vector<Point2>& v) {
        auto a = nlohmann::json::array();
        for (const auto& p : v) a.push_back({p.x, p.y});
        return a;
    };
    j = nlohmann::json{{"control_src", pts(f.control_src)},
                       {"control_dst", pts(f.control_dst)},
                       {"weights", pts(f.weights)},
                       {"affine", f.affine},
                       {"regularization", f.regularization}};
}

void from_json(const nlohmann::json& j, TPSField& f) {
    auto pts = [](const nlohmann::json& a) {
        std::vector<Point2> v;
        for (const auto& e : a) v.push_back({e.at(0).get<double>(), e.at(1).get<double>()});
        return v;
    };
    f.control_src = pts(j.at("control_src"));
    f.control_dst = pts(j.at("control_dst"));
    f.weights = pts(j.at("weights"));
    f.affine = j.at("affine").get<std::array<double, 6>>();
    f.regularization = j.value("regularization", 0.0);
    if (f.weights.size() != f.control_src.size()) throw ParseError("tps json: weight count mismatch");
}

}  // namespace artface
