#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <opencv2/imgproc.hpp>

#include "artface/errors.hpp"
#include "artface/registration.hpp"
#include "test_support.hpp"

using namespace artface;

namespace {

LandmarkSet transformed(const LandmarkSet& lm, const SimilarityTransform& t, int w, int h) {
    std::vector<Point2> pts;
    for (const auto& p : lm.points()) pts.push_back(t.apply(p));
    return LandmarkSet::from_vector(pts, w, h);
}

}  // namespace

TEST(Register, SelfRegistrationIsIdentity) {
    std::mt19937_64 rng(1);
    const auto lm = fixtures::random_landmarks(rng, 600, 600, 50);
    const cv::Mat img(600, 600, CV_32FC3, cv::Scalar(0.2, 0.4, 0.6));
    const auto r = register_landmarks(lm, lm, img);
    EXPECT_EQ(r.inliers.size(), 41u);
    EXPECT_TRUE(r.outliers.empty());
    EXPECT_NEAR(r.transform.angle, 0.0, 1e-9);
    EXPECT_NEAR(r.transform.scale, 1.0, 1e-9);
    EXPECT_NEAR(r.transform.tx, 0.0, 1e-6);
    EXPECT_NEAR(cv::norm(r.warped, img, cv::NORM_INF), 0.0, 1e-5);
}

TEST(Register, RecoversSyntheticSimilarity) {
    std::mt19937_64 rng(2);
    const auto a = fixtures::random_landmarks(rng, 800, 800, 200);
    const SimilarityTransform truth{-0.35, 0.85, 60.0, 30.0};
    const auto b = transformed(a, truth, 900, 700);
    const auto r = register_landmarks(a, b, cv::Mat());
    EXPECT_NEAR(r.transform.angle, truth.angle, 1e-3);
    EXPECT_NEAR(r.transform.scale, truth.scale, 1e-3);
    EXPECT_NEAR(r.transform.tx, truth.tx, 1e-3);
    EXPECT_NEAR(r.transform.ty, truth.ty, 1e-3);
    EXPECT_TRUE(r.warped.empty());
}

TEST(Register, ForwardThenBackwardComposesToIdentity) {
    std::mt19937_64 rng(3);
    const auto a = fixtures::random_landmarks(rng, 1024, 1024, 250);
    const SimilarityTransform truth{0.2, 1.15, -40.0, 25.0};
    const auto b = transformed(a, truth, 1024, 1024);
    const auto ab = register_landmarks(a, b, cv::Mat()).transform;
    const auto ba = register_landmarks(b, a, cv::Mat()).transform;
    const auto id = ba.compose(ab);
    EXPECT_NEAR(id.angle, 0.0, 1e-3);
    EXPECT_NEAR(id.scale, 1.0, 1e-3);
    EXPECT_NEAR(id.tx, 0.0, 1e-3);
    EXPECT_NEAR(id.ty, 0.0, 1e-3);
}

TEST(Register, WarpMovesContentOntoTargetLandmarks) {
    std::mt19937_64 rng(4);
    const auto a = fixtures::random_landmarks(rng, 400, 400, 100);
    const SimilarityTransform truth{0.3, 1.1, 10.0, -20.0};
    const auto b = transformed(a, truth, 400, 400);
    cv::Mat img(400, 400, CV_32FC3, cv::Scalar::all(0));
    cv::circle(img, cv::Point(static_cast<int>(a[30].x), static_cast<int>(a[30].y)), 3, cv::Scalar::all(1), -1);
    const auto r = register_landmarks(a, b, img);
    const Point2 expect = truth.apply({std::floor(a[30].x), std::floor(a[30].y)});
    double sw = 0, sx = 0, sy = 0;
    for (int i = 0; i < 400; ++i)
        for (int j = 0; j < 400; ++j) {
            const double v = r.warped.at<cv::Vec3f>(i, j)[0];
            sw += v;
            sx += v * j;
            sy += v * i;
        }
    EXPECT_LE(distance({sx / sw, sy / sw}, expect), 0.5);
}

TEST(Register, AspectRatioPreserved) {
    std::mt19937_64 rng(5);
    const auto a = fixtures::random_landmarks(rng, 500, 500, 100);
    const auto b = fixtures::random_landmarks(rng, 500, 500, 100);
    try {
        const auto m = register_landmarks(a, b, cv::Mat(), {.threshold_px = 1e4}).transform.matrix();
        const double s1 = std::hypot(m[0], m[3]), s2 = std::hypot(m[1], m[4]);
        EXPECT_NEAR(s1, s2, 1e-9);
        EXPECT_NEAR(m[0] * m[1] + m[3] * m[4], 0.0, 1e-9);
    } catch (const RegistrationError&) {
        FAIL() << "a huge threshold must accept every hypothesis";
    }
}

TEST(Register, FailurePropagates) {
    std::mt19937_64 rng(6);
    const auto a = fixtures::random_landmarks(rng, 500, 500);
    const auto b = fixtures::random_landmarks(rng, 500, 500);
    EXPECT_THROW(register_landmarks(a, b, cv::Mat(), {.threshold_px = 0.01}), RegistrationError);
}

TEST(Blend, Endpoints) {
    const cv::Mat t(4, 5, CV_32FC3, cv::Scalar(100, 100, 100));
    const cv::Mat s(4, 5, CV_32FC3, cv::Scalar(200, 200, 200));
    EXPECT_EQ(cv::norm(blend_overlay(t, s, 1.0), t, cv::NORM_INF), 0.0);
    EXPECT_EQ(cv::norm(blend_overlay(t, s, 0.0), s, cv::NORM_INF), 0.0);
    const auto half = blend_overlay(t, s, 0.5);
    EXPECT_FLOAT_EQ(half.at<cv::Vec3f>(2, 2)[1], 150.0f);
    EXPECT_THROW(blend_overlay(t, cv::Mat(4, 4, CV_32FC3), 0.5), ValidationError);
    EXPECT_THROW(blend_overlay(t, s, 1.5), ValidationError);
}

TEST(Contours, IdenticalMapsAreWhite) {
    cv::Mat a(50, 50, CV_8UC1, cv::Scalar(0));
    cv::circle(a, {25, 25}, 15, cv::Scalar(255), 1);
    const std::vector<cv::Mat> maps = {a, a.clone()};
    const auto colors = default_contour_colors(2);
    const auto out = intersection_contour_overlay(maps, colors);
    for (int i = 0; i < 50; ++i)
        for (int j = 0; j < 50; ++j) {
            const auto v = out.at<cv::Vec3b>(i, j);
            if (a.at<uchar>(i, j)) {
                EXPECT_EQ(v, cv::Vec3b(255, 255, 255));
            } else {
                EXPECT_EQ(v, cv::Vec3b(0, 0, 0));
            }
        }
}

TEST(Contours, DisjointMapsKeepTheirColors) {
    cv::Mat a(60, 60, CV_8UC1, cv::Scalar(0)), b = a.clone();
    cv::line(a, {5, 5}, {5, 50}, cv::Scalar(255));
    cv::line(b, {40, 5}, {40, 50}, cv::Scalar(255));
    const std::vector<cv::Mat> maps = {a, b};
    const std::vector<cv::Scalar> colors = {{255, 0, 0}, {0, 0, 255}};
    const auto out = intersection_contour_overlay(maps, colors);
    EXPECT_EQ(out.at<cv::Vec3b>(20, 5), cv::Vec3b(255, 0, 0));
    EXPECT_EQ(out.at<cv::Vec3b>(20, 40), cv::Vec3b(0, 0, 255));
    int white = 0;
    for (int i = 0; i < 60; ++i)
        for (int j = 0; j < 60; ++j) white += out.at<cv::Vec3b>(i, j) == cv::Vec3b(255, 255, 255);
    EXPECT_EQ(white, 0);
}

TEST(Contours, CrossingLinesWithZeroToleranceMatchAndOracle) {
    cv::Mat a(80, 80, CV_8UC1, cv::Scalar(0)), b = a.clone();
    cv::line(a, {0, 10}, {79, 70}, cv::Scalar(255), 1, cv::LINE_4);
    cv::line(b, {0, 60}, {79, 15}, cv::Scalar(255), 1, cv::LINE_4);
    const std::vector<cv::Mat> maps = {a, b};
    const std::vector<cv::Scalar> colors = {{255, 0, 0}, {0, 255, 0}};
    const auto out = intersection_contour_overlay(maps, colors, {.tolerance_radius = 0});
    int crossings = 0;
    for (int i = 0; i < 80; ++i)
        for (int j = 0; j < 80; ++j) {
            const bool both = a.at<uchar>(i, j) && b.at<uchar>(i, j);
            crossings += both;
            EXPECT_EQ(out.at<cv::Vec3b>(i, j) == cv::Vec3b(255, 255, 255), both) << i << "," << j;
        }
    EXPECT_GT(crossings, 0);
    // With tolerance, near-misses also count.
    const auto tol = intersection_contour_overlay(maps, colors, {.tolerance_radius = 2});
    int white = 0;
    for (int i = 0; i < 80; ++i)
        for (int j = 0; j < 80; ++j) white += tol.at<cv::Vec3b>(i, j) == cv::Vec3b(255, 255, 255);
    EXPECT_GT(white, crossings);
}

TEST(Contours, FloatMapsThresholdAtHalf) {
    cv::Mat a(10, 10, CV_32FC1, cv::Scalar(0.49f)), b(10, 10, CV_32FC1, cv::Scalar(0.51f));
    const std::vector<cv::Mat> maps = {a, b};
    const std::vector<cv::Scalar> colors = {{255, 0, 0}, {0, 255, 0}};
    const auto out = intersection_contour_overlay(maps, colors, {.tolerance_radius = 0});
    EXPECT_EQ(out.at<cv::Vec3b>(3, 3), cv::Vec3b(0, 255, 0));
}

TEST(Contours, Errors) {
    const cv::Mat a(10, 10, CV_8UC1, cv::Scalar(0));
    const std::vector<cv::Mat> one = {a};
    EXPECT_THROW(intersection_contour_overlay(one, default_contour_colors(1)), ValidationError);
    const std::vector<cv::Mat> mismatched = {a, cv::Mat(12, 10, CV_8UC1, cv::Scalar(0))};
    EXPECT_THROW(intersection_contour_overlay(mismatched, default_contour_colors(2)), ValidationError);
}

TEST(Matches, DrawsSideBySide) {
    std::mt19937_64 rng(7);
    const auto a = fixtures::random_landmarks(rng, 200, 100, 10);
    const cv::Mat ia(100, 200, CV_32FC3, cv::Scalar::all(0)), ib(100, 200, CV_32FC3, cv::Scalar::all(0));
    const auto r = register_landmarks(a, a, ia);
    const auto canvas = draw_matches(ia, a, ib, a, r);
    EXPECT_EQ(canvas.cols, 400);
    EXPECT_EQ(canvas.rows, 100);
    const auto j = registration_to_json(r);
    EXPECT_EQ(j["num_inliers"], 41);
}
