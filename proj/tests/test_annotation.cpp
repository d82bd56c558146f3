#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "artface/annotation.hpp"
#include "artface/dataset.hpp"
#include "artface/errors.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace artface;

namespace {

class AnnotationTest : public ::testing::Test {
protected:
    void SetUp() override {
        root = fs::temp_directory_path() /
               ("artface_ann_" + std::to_string(::getpid()) + "_" +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(root);
        write_toy_corpus(root, 3, 9, 128);
    }
    void TearDown() override { fs::remove_all(root); }

    static Predictor fixed_predictor(double offset) {
        return [offset](const cv::Mat& img) {
            std::vector<Point2> pts;
            for (int i = 0; i < kNumLandmarks; ++i) pts.push_back({offset + i, offset + 0.5 * i});
            return LandmarkSet::from_vector(pts, img.cols, img.rows);
        };
    }

    static std::vector<Point2> points(double base) {
        std::vector<Point2> pts;
        for (int i = 0; i < kNumLandmarks; ++i) pts.push_back({base + 0.25 * i, base});
        return pts;
    }

    fs::path root;
};

}  // namespace

TEST_F(AnnotationTest, FreshCorpusIsUnlabeled) {
    AnnotationStore store(root);
    const auto all = store.list_images();
    ASSERT_EQ(all.size(), 3u);
    for (const auto& r : all) {
        EXPECT_EQ(r.status, AnnotationStatus::unlabeled);
        EXPECT_EQ(r.revision, 0u);
        EXPECT_FALSE(r.landmarks);
        EXPECT_EQ(r.width, 128);
    }
    EXPECT_THROW(store.get_landmarks("nope"), NotFoundError);
}

TEST_F(AnnotationTest, PredictThenCorrectLifecycle) {
    AnnotationStore store(root);
    const std::string id = store.ids()[0];
    auto r = store.predict_landmarks(id, fixed_predictor(1));
    EXPECT_EQ(r.status, AnnotationStatus::predicted);
    EXPECT_EQ(r.revision, 1u);
    ASSERT_TRUE(r.landmarks);
    r = store.predict_landmarks(id, fixed_predictor(2));
    EXPECT_EQ(r.revision, 2u);
    EXPECT_EQ((*r.landmarks)[0], (Point2{2, 2}));

    r = store.put_landmarks(id, points(10), 2);
    EXPECT_EQ(r.status, AnnotationStatus::corrected);
    EXPECT_EQ(r.revision, 3u);
    EXPECT_THROW(store.predict_landmarks(id, fixed_predictor(3)), ConflictError);
    EXPECT_EQ(store.get_landmarks(id).revision, 3u);

    // The record doubles as a landmark sidecar.
    const auto sidecar = read_landmark_file(store.record_path(id));
    EXPECT_EQ(sidecar.landmarks, *r.landmarks);
    EXPECT_EQ(sidecar.source, LandmarkSource::manual);
    // A fresh store sees the persisted state.
    AnnotationStore reopened(root);
    EXPECT_EQ(reopened.get_landmarks(id).revision, 3u);
    EXPECT_EQ(reopened.get_landmarks(id).status, AnnotationStatus::corrected);
}

TEST_F(AnnotationTest, PredictorFailureKeepsStatus) {
    AnnotationStore store(root);
    const std::string id = store.ids()[1];
    const Predictor broken = [](const cv::Mat&) -> LandmarkSet { throw Error("model exploded"); };
    EXPECT_THROW(store.predict_landmarks(id, broken), Error);
    const auto r = store.get_landmarks(id);
    EXPECT_EQ(r.status, AnnotationStatus::unlabeled);
    EXPECT_EQ(r.revision, 0u);
    EXPECT_NE(r.last_error.find("model exploded"), std::string::npos);
}

TEST_F(AnnotationTest, ValidationAndConflicts) {
    AnnotationStore store(root);
    const std::string id = store.ids()[0];
    auto bad = points(5);
    bad.pop_back();
    EXPECT_THROW(store.put_landmarks(id, bad, 0), ValidationError);
    auto nan = points(5);
    nan[3].y = std::nan("");
    EXPECT_THROW(store.put_landmarks(id, nan, 0), ValidationError);
    EXPECT_THROW(store.put_landmarks(id, points(5), 7), ConflictError);
    EXPECT_EQ(store.get_landmarks(id).revision, 0u);
}

TEST_F(AnnotationTest, ConcurrentStaleWritersExactlyOneWins) {
    AnnotationStore store(root);
    const std::string id = store.ids()[2];
    for (int round = 0; round < 20; ++round) {
        const auto rev = store.get_landmarks(id).revision;
        std::atomic<int> ok{0}, conflicts{0};
        std::vector<std::thread> writers;
        for (int w = 0; w < 4; ++w) {
            writers.emplace_back([&, w] {
                try {
                    store.put_landmarks(id, points(w + 1.0), rev);
                    ++ok;
                } catch (const ConflictError&) {
                    ++conflicts;
                }
            });
        }
        for (auto& t : writers) t.join();
        EXPECT_EQ(ok.load(), 1);
        EXPECT_EQ(conflicts.load(), 3);
        EXPECT_EQ(store.get_landmarks(id).revision, rev + 1);
    }
}

TEST_F(AnnotationTest, CrashMidWriteLeavesOldOrNewRecord) {
    const std::string id = AnnotationStore(root).ids()[0];
    {
        AnnotationStore store(root);
        store.put_landmarks(id, points(1), 0);
    }
    const std::string before = read_text_file(AnnotationStore(root).record_path(id));
    AnnotationStoreOptions opts;
    opts.before_commit = [](const fs::path& tmp) {
        // Simulate a torn temp file and a crash before the rename.
        std::ofstream(tmp, std::ios::trunc) << "{\"id\": \"trunc";
        throw IoError("simulated crash");
    };
    AnnotationStore crashing(root, opts);
    EXPECT_THROW(crashing.put_landmarks(id, points(2), 1), IoError);
    AnnotationStore after(root);
    EXPECT_EQ(read_text_file(after.record_path(id)), before);
    const auto r = after.get_landmarks(id);
    EXPECT_EQ(r.revision, 1u);
    // A later write succeeds and replaces the record completely.
    const auto r2 = after.put_landmarks(id, points(3), 1);
    EXPECT_EQ(AnnotationStore(root).get_landmarks(id).revision, r2.revision);
}

TEST_F(AnnotationTest, HttpApi) {
    AnnotationStore store(root);
    httplib::Server server;
    install_annotation_routes(server, store, fixed_predictor(4));
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    httplib::Client cli("127.0.0.1", port);
    const std::string id = store.ids()[0];

    auto res = cli.Get("/images");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    auto j = nlohmann::json::parse(res->body);
    EXPECT_EQ(j["images"].size(), 3u);
    EXPECT_EQ(j["images"][0]["status"], "unlabeled");

    res = cli.Get("/images/" + id);
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
    EXPECT_EQ(res->body, store.image_bytes(id));

    res = cli.Get("/images/missing/landmarks");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 404);
    j = nlohmann::json::parse(res->body);
    EXPECT_EQ(j["error"], "not_found");
    EXPECT_TRUE(j.contains("detail"));

    res = cli.Post("/images/" + id + "/predict");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    j = nlohmann::json::parse(res->body);
    EXPECT_EQ(j["status"], "predicted");
    EXPECT_EQ(j["points"].size(), 68u);
    EXPECT_EQ(j["revision"], 1);

    nlohmann::json body;
    body["points"] = nlohmann::json::array();
    for (const auto& p : points(7)) body["points"].push_back({p.x, p.y});
    body["revision"] = 1;
    res = cli.Put("/images/" + id + "/landmarks", body.dump(), "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    j = nlohmann::json::parse(res->body);
    EXPECT_EQ(j["status"], "corrected");
    EXPECT_EQ(j, to_json(store.get_landmarks(id)));
    EXPECT_EQ(nlohmann::json::parse(read_text_file(store.record_path(id))), j);

    res = cli.Put("/images/" + id + "/landmarks", body.dump(), "application/json");  // stale
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 409);

    body["points"].erase(body["points"].size() - 1);
    body["revision"] = 2;
    res = cli.Put("/images/" + id + "/landmarks", body.dump(), "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 422);
    EXPECT_NE(nlohmann::json::parse(res->body)["detail"].get<std::string>().find("67"), std::string::npos);

    res = cli.Put("/images/" + id + "/landmarks", "{not json", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);

    res = cli.Post("/images/" + id + "/predict");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 409);

    server.stop();
    th.join();
}

TEST_F(AnnotationTest, PredictWithoutModelIsUnavailable) {
    AnnotationStore store(root);
    httplib::Server server;
    install_annotation_routes(server, store, Predictor{});
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    httplib::Client cli("127.0.0.1", port);
    auto res = cli.Post("/images/" + store.ids()[0] + "/predict");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 503);
    server.stop();
    th.join();
}
