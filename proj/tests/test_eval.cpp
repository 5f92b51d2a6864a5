#include "fluxcal/errors.hpp"
#include "fluxcal/eval.hpp"
#include "fluxcal/io/json_util.hpp"
#include "fluxcal/lut.hpp"
#include "fluxcal/rng.hpp"
#include "fluxcal/sampling.hpp"

#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <string>
#include <vector>

using namespace fluxcal;

namespace {

// An intrinsics surface affine in (lfl, fd): interpolation from any
// region must reproduce it to rounding error, making oracle values exact.
Intrinsics affine_intr(double lfl, double fd) {
    Intrinsics i;
    i.fx = 2000.0 + 3.0 * lfl + 5.0 * fd;
    i.fy = 2200.0 + 2.0 * lfl + 4.0 * fd;
    i.cx = 960.0 + 0.1 * lfl;
    i.cy = 540.0 + 0.2 * fd;
    i.k1 = -0.05 + 0.001 * lfl;
    i.k2 = 0.01;
    i.p1 = 1e-4;
    i.p2 = -2e-4;
    return i;
}

// 3 LFL columns x 4 shared focus distances: a clean grid with fd_max = 8.
LutTable affine_lut() {
    std::vector<LutEntry> entries;
    for (double lfl : {17.0, 20.0, 24.0}) {
        for (double fd : {1.0, 2.0, 4.0, 8.0}) {
            LutEntry e;
            e.lfl_mm = lfl;
            e.fd_m = fd;
            e.intrinsics = affine_intr(lfl, fd);
            entries.push_back(e);
        }
    }
    return make_lut(canon17_lens(), default_sensor(), entries);
}

Intrinsics make_pinhole(double fx, double fy, double cx, double cy) {
    Intrinsics i;
    i.fx = fx;
    i.fy = fy;
    i.cx = cx;
    i.cy = cy;
    return i;
}

FrameAnnotation make_frame(const std::string& video, long frame, const Intrinsics& gt,
                           GtProvenance prov = GtProvenance::interpolated) {
    FrameAnnotation a;
    a.video_id = video;
    a.frame_index = frame;
    a.state.lfl_mm = 20.0;
    a.state.fd_m = 2.0;
    a.has_gt = true;
    a.gt = gt;
    a.provenance = prov;
    return a;
}

PredictionRecord make_pred(const std::string& video, long frame, const Intrinsics& p) {
    PredictionRecord r;
    r.video_id = video;
    r.frame_index = frame;
    r.has_prediction = true;
    r.predicted = p;
    return r;
}

SensorSpec small_sensor() {
    SensorSpec s;
    s.width_mm = 10.0;
    s.height_mm = 8.0;
    s.width_px = 100;
    s.height_px = 80;
    return s;
}

SensorSpec hd_sensor() {
    SensorSpec s;
    s.width_mm = 19.2;
    s.height_mm = 10.8;
    s.width_px = 1920;
    s.height_px = 1080;
    return s;
}

void check_same(const Intrinsics& a, const Intrinsics& b) {
    CHECK(a.fx == b.fx);
    CHECK(a.fy == b.fy);
    CHECK(a.cx == b.cx);
    CHECK(a.cy == b.cy);
    CHECK(a.k1 == b.k1);
    CHECK(a.k2 == b.k2);
    CHECK(a.p1 == b.p1);
    CHECK(a.p2 == b.p2);
}

} // namespace

TEST_SUITE_BEGIN("eval");

TEST_CASE("annotate joins frame metadata against the table") {
    LutTable lut = affine_lut();
    std::string csv = "video_id,frame_index,lfl_mm,fd_m\n"
                      "vidA,0,20,2\n"       // line 2: exact entry
                      "vidA,1,18.5,3\n"     // line 3: inside a grid cell
                      "vidB,7,17,100\n"     // line 4: beyond fd_max = 8
                      "vidB,9,16,2\n"       // line 5: LFL below the table
                      "oops,3,4\n"          // line 6: malformed
                      "vidB,11,20,0.5\n";   // line 7: FD the table cannot answer
    AnnotationReport rep = annotate(csv, lut);

    REQUIRE(rep.frames.size() == 4);
    REQUIRE(rep.errors.size() == 2);
    CHECK(rep.errors[0].rfind("line 5:", 0) == 0);
    CHECK(rep.errors[1].rfind("line 6:", 0) == 0);

    const FrameAnnotation& exact = rep.frames[0];
    CHECK(exact.video_id == "vidA");
    CHECK(exact.frame_index == 0);
    CHECK(exact.has_gt);
    CHECK(exact.provenance == GtProvenance::exact);
    CHECK(is_evaluable(exact));
    check_same(exact.gt, affine_intr(20.0, 2.0));

    const FrameAnnotation& interp = rep.frames[1];
    CHECK(interp.has_gt);
    CHECK(interp.provenance == GtProvenance::interpolated);
    CHECK(is_evaluable(interp));
    Intrinsics want = affine_intr(18.5, 3.0);
    CHECK(std::abs(interp.gt.fx - want.fx) < 1e-9);
    CHECK(std::abs(interp.gt.fy - want.fy) < 1e-9);
    CHECK(std::abs(interp.gt.cx - want.cx) < 1e-9);
    CHECK(std::abs(interp.gt.cy - want.cy) < 1e-9);
    CHECK(std::abs(interp.gt.k1 - want.k1) < 1e-12);

    const FrameAnnotation& extrap = rep.frames[2];
    CHECK(extrap.has_gt);
    CHECK(extrap.provenance == GtProvenance::extrapolated);
    CHECK_FALSE(is_evaluable(extrap)); // carries gt but never scores

    const FrameAnnotation& no_gt = rep.frames[3];
    CHECK(no_gt.video_id == "vidB");
    CHECK(no_gt.frame_index == 11);
    CHECK_FALSE(no_gt.has_gt);
    CHECK_FALSE(is_evaluable(no_gt));

    CHECK_THROWS_AS(annotate("video,frame\nx,1\n", lut), ValidationError);
}

TEST_CASE("prediction csv distinguishes missing, zero-filled, and bad rows") {
    std::string csv =
        "video_id,frame_index,fx,fy,cx,cy,k1,k2,p1,p2\n"
        "vidA,0,2066,2248,962,540.4,-0.03,0.01,0.0001,-0.0002\n"
        "vidA,1,,,,,,,,\n"
        "vidB,7,2000,2100,900,500,,,,\n";
    std::vector<PredictionRecord> recs = predictions_from_csv(csv);
    REQUIRE(recs.size() == 3);

    CHECK(recs[0].has_prediction);
    CHECK(recs[0].predicted.fx == 2066.0);
    CHECK(recs[0].predicted.cy == 540.4);
    CHECK(recs[0].predicted.p2 == -0.0002);

    CHECK_FALSE(recs[1].has_prediction);

    CHECK(recs[2].has_prediction);
    CHECK(recs[2].predicted.fx == 2000.0);
    CHECK(recs[2].predicted.k1 == 0.0); // absent distortion zero-fills
    CHECK(recs[2].predicted.k2 == 0.0);
    CHECK(recs[2].predicted.p1 == 0.0);
    CHECK(recs[2].predicted.p2 == 0.0);

    // Duplicate (video, frame) key.
    CHECK_THROWS_AS(predictions_from_csv(csv + "vidA,0,1,1,1,1,0,0,0,0\n"),
                    ValidationError);
    // fx..cy must be all present or all empty.
    CHECK_THROWS_AS(predictions_from_csv(
                        "video_id,frame_index,fx,fy,cx,cy,k1,k2,p1,p2\n"
                        "vidA,2,2000,,960,540,0,0,0,0\n"),
                    ValidationError);
    CHECK_THROWS_AS(predictions_from_csv("video_id,frame_index,fx\nvidA,0,1\n"),
                    ValidationError);
    CHECK_THROWS_AS(predictions_from_csv(
                        "video_id,frame_index,fx,fy,cx,cy,k1,k2,p1,p2\n"
                        "vidA,0,banana,1,1,1,0,0,0,0\n"),
                    ValidationError);
}

TEST_CASE("percent errors average per-parameter over scored frames") {
    Intrinsics gt = make_pinhole(1024.0, 2048.0, 960.0, 512.0);
    std::vector<FrameAnnotation> ann;
    ann.push_back(make_frame("v", 0, gt));
    ann.push_back(make_frame("v", 1, gt));
    ann.push_back(make_frame("v", 2, gt, GtProvenance::extrapolated)); // ignored
    FrameAnnotation blank = make_frame("v", 3, gt);
    blank.has_gt = false; // ignored
    ann.push_back(blank);
    ann.push_back(make_frame("v", 4, gt)); // evaluable, no prediction
    FrameAnnotation zero = make_frame("v", 5, make_pinhole(1024.0, 2048.0, 0.0, 512.0));
    ann.push_back(zero); // cx = 0 cannot be percent-scored

    // Frame 0 perfect; frame 1 off by exactly 25% on every parameter.
    std::vector<PredictionRecord> preds;
    preds.push_back(make_pred("v", 0, gt));
    preds.push_back(make_pred("v", 1, make_pinhole(1280.0, 1536.0, 1200.0, 384.0)));
    preds.push_back(make_pred("v", 2, make_pinhole(1.0, 1.0, 1.0, 1.0)));
    preds.push_back(make_pred("v", 5, gt));

    PercentErrors pe = percent_errors(ann, preds);
    CHECK(pe.frames_scored == 2);
    CHECK(pe.missing_predictions == 1);
    CHECK(pe.zero_gt_excluded == 1);
    // (0 + 25) / 2, all quantities exact in binary.
    CHECK(pe.fx == 12.5);
    CHECK(pe.fy == 12.5);
    CHECK(pe.cx == 12.5);
    CHECK(pe.cy == 12.5);

    // Generic magnitudes: 1.565x prediction reads as 56.5%.
    std::vector<FrameAnnotation> one = {make_frame("w", 0, gt)};
    Intrinsics off = gt;
    off.fx = gt.fx * 1.565;
    std::vector<PredictionRecord> onep = {make_pred("w", 0, off)};
    PercentErrors single = percent_errors(one, onep);
    CHECK(single.fx == doctest::Approx(56.5).epsilon(1e-12));
    CHECK(single.fy == 0.0);

    // Explicit has_prediction = false rows count as missing.
    PredictionRecord none;
    none.video_id = "w";
    none.frame_index = 0;
    none.has_prediction = false;
    PercentErrors missing = percent_errors(one, {none});
    CHECK(missing.frames_scored == 0);
    CHECK(missing.missing_predictions == 1);
}

TEST_CASE("fov sampling keeps points visible under some evaluable frame") {
    SensorSpec sensor = small_sensor();
    // Dyadic coordinates keep the edge projections exact in binary.
    Intrinsics center = make_pinhole(100.0, 100.0, 50.0, 37.5);
    std::vector<Eigen::Vector3d> cloud = {
        {0.0, 0.0, 1.0},     // u = 50, in
        {0.6, 0.0, 1.0},     // u = 110, out
        {-0.4, 0.0, 1.0},    // u = 10, in
        {0.0, 0.0, -1.0},    // behind
        {0.49, 0.0, 1.0},    // u = 99, in
        {0.5, 0.0, 1.0},     // u = 100, out (right edge exclusive)
        {0.0, -0.375, 1.0},  // v = 0, in (top edge inclusive)
    };
    std::vector<FrameAnnotation> ann = {make_frame("v", 0, center)};

    std::vector<Eigen::Vector3d> all = sample_fov_points(cloud, ann, sensor, 10, 7);
    REQUIRE(all.size() == 4);
    CHECK(all[0] == cloud[0]);
    CHECK(all[1] == cloud[2]);
    CHECK(all[2] == cloud[4]);
    CHECK(all[3] == cloud[6]);

    // Deterministic subset without replacement.
    std::vector<Eigen::Vector3d> two = sample_fov_points(cloud, ann, sensor, 2, 42);
    std::vector<Eigen::Vector3d> again = sample_fov_points(cloud, ann, sensor, 2, 42);
    REQUIRE(two.size() == 2);
    CHECK(two[0] == again[0]);
    CHECK(two[1] == again[1]);
    CHECK(two[0] != two[1]);
    for (const Eigen::Vector3d& p : two)
        CHECK(std::count(all.begin(), all.end(), p) == 1);

    // A second evaluable frame widens the union; extrapolated frames do not.
    Intrinsics shifted = make_pinhole(100.0, 100.0, -51.0, 37.5);
    std::vector<FrameAnnotation> multi = {
        make_frame("v", 0, center),
        make_frame("v", 1, make_pinhole(100.0, 100.0, 5000.0, 37.5),
                   GtProvenance::extrapolated), // would admit everything
        make_frame("v", 2, shifted),            // admits only cloud[1]
    };
    std::vector<Eigen::Vector3d> widened = sample_fov_points(cloud, multi, sensor, 10, 7);
    REQUIRE(widened.size() == 5);
    CHECK(widened[1] == cloud[1]);

    CHECK_THROWS_AS(sample_fov_points({}, ann, sensor, 3, 1), ValidationError);
}

TEST_CASE("epe scores exact pixel displacements against thresholds") {
    SensorSpec sensor = hd_sensor();
    Intrinsics gt = make_pinhole(1000.0, 1000.0, 960.0, 540.0);
    // x/z chosen binary-exact so fx * x/z and the +10 px shift stay exact.
    std::vector<Eigen::Vector3d> pts = {
        {0.0, 0.0, 1.0},     {0.125, 0.0, 1.0},        {-0.25, 0.0, 1.0},
        {0.5, 0.0, 1.0},     {0.0625, 0.0625, 1.0},    {-0.125, -0.25, 1.0},
    };
    std::vector<FrameAnnotation> ann = {make_frame("vid1", 0, gt),
                                        make_frame("vid2", 0, gt)};

    SUBCASE("perfect predictions land every pair below every threshold") {
        std::vector<PredictionRecord> preds = {make_pred("vid1", 0, gt),
                                               make_pred("vid2", 0, gt)};
        EpeSummary s = epe(ann, preds, pts, sensor);
        CHECK(s.frames == 2);
        CHECK(s.pairs == 12);
        CHECK(s.infinite_pairs == 0);
        for (const EpeThresholdRow& r : s.fractions) CHECK(r.fraction == 1.0);
        CHECK(s.pct.fx == 0.0);
    }

    SUBCASE("a 10 px principal-point shift is inclusive at its threshold") {
        Intrinsics off = gt;
        off.cx += 10.0;
        // vid2 has no prediction at all: its six pairs are infinite.
        std::vector<PredictionRecord> preds = {make_pred("vid1", 0, off)};
        EpeSummary s = epe(ann, preds, pts, sensor, {9.99, 10.0, 2000.0});
        CHECK(s.frames == 2);
        CHECK(s.pairs == 12);
        CHECK(s.infinite_pairs == 6);
        REQUIRE(s.fractions.size() == 3);
        CHECK(s.fractions[0].threshold_px == 9.99);
        CHECK(s.fractions[0].fraction == 0.0);
        CHECK(s.fractions[1].fraction == 0.5); // exactly 10 px <= 10 px
        CHECK(s.fractions[2].fraction == 0.5); // capped by the missing video
        CHECK(s.pct.missing_predictions == 1);

        EpeSummary full = epe(ann, preds, pts, sensor);
        for (size_t i = 1; i < full.fractions.size(); ++i) {
            CHECK(full.fractions[i].threshold_px > full.fractions[i - 1].threshold_px);
            CHECK(full.fractions[i].fraction >= full.fractions[i - 1].fraction);
        }
    }

    SUBCASE("frames outside the evaluable set never score") {
        std::vector<FrameAnnotation> extra = ann;
        extra.push_back(make_frame("vid3", 0, gt, GtProvenance::extrapolated));
        FrameAnnotation blank = make_frame("vid4", 0, gt);
        blank.has_gt = false;
        extra.push_back(blank);
        std::vector<PredictionRecord> preds = {
            make_pred("vid1", 0, gt), make_pred("vid2", 0, gt),
            make_pred("vid3", 0, make_pinhole(1.0, 1.0, 1.0, 1.0))};
        EpeSummary s = epe(extra, preds, pts, sensor);
        CHECK(s.frames == 2);
        CHECK(s.pairs == 12);
        CHECK(s.fractions.back().fraction == 1.0);
    }

    CHECK_THROWS_AS(epe(ann, {}, {}, sensor), ValidationError);
    CHECK_THROWS_AS(epe(ann, {}, pts, sensor, {}), ValidationError);
}

TEST_CASE("epe grows linearly with focal error and radial offset") {
    SensorSpec sensor = hd_sensor();
    Intrinsics gt = make_pinhole(1000.0, 1000.0, 960.0, 540.0);
    Intrinsics off = gt;
    off.fx = 1001.0; // 1 px of focal error per unit of x/z
    std::vector<Eigen::Vector3d> pts = {
        {0.125, 0.0, 1.0}, {0.25, 0.0, 1.0}, {0.5, 0.0, 1.0}};
    std::vector<FrameAnnotation> ann = {make_frame("v", 0, gt)};
    std::vector<PredictionRecord> preds = {make_pred("v", 0, off)};

    EpeSummary s = epe(ann, preds, pts, sensor, {0.1, 0.125, 0.25, 0.5});
    REQUIRE(s.fractions.size() == 4);
    CHECK(s.pairs == 3);
    CHECK(s.fractions[0].fraction == 0.0);
    CHECK(s.fractions[1].fraction == 1.0 / 3.0);
    CHECK(s.fractions[2].fraction == 2.0 / 3.0);
    CHECK(s.fractions[3].fraction == 1.0);
}

TEST_CASE("epe throughput covers 100k points over 100 frames in seconds") {
    SensorSpec sensor = hd_sensor();
    Intrinsics gt = make_pinhole(1000.0, 1000.0, 960.0, 540.0);
    Intrinsics off = gt;
    off.cx += 1.0;

    Rng rng(2026);
    auto unit = [&] { return (double)rng.below(1u << 20) / (double)(1u << 20); };
    std::vector<Eigen::Vector3d> cloud;
    cloud.reserve(100000);
    for (int i = 0; i < 100000; ++i) {
        double z = 0.8 + 0.4 * unit();
        cloud.emplace_back((0.6 * unit() - 0.3) * z, (0.3 * unit() - 0.15) * z, z);
    }
    std::vector<FrameAnnotation> ann;
    std::vector<PredictionRecord> preds;
    for (long f = 0; f < 100; ++f) {
        ann.push_back(make_frame("v", f, gt));
        preds.push_back(make_pred("v", f, off));
    }

    auto t0 = std::chrono::steady_clock::now();
    EpeSummary s = epe(ann, preds, cloud, sensor);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                      .count();
    CHECK(s.frames == 100);
    CHECK(s.pairs == 10000000);
    CHECK(s.infinite_pairs == 0);
    CHECK(s.fractions.back().fraction == 1.0);
    CHECK(secs < 10.0);
    MESSAGE("epe over 10M frame-point pairs took ", secs, " s");
}

TEST_CASE("default thresholds are log-spaced with the 300 px reference") {
    std::vector<double> t = default_epe_thresholds();
    REQUIRE(t.size() == 65);
    CHECK(t.front() == 1.0);
    CHECK(t.back() == 2000.0);
    for (size_t i = 1; i < t.size(); ++i) CHECK(t[i] > t[i - 1]);
    CHECK(std::count(t.begin(), t.end(), 300.0) == 1);
    // Frozen spot values of the 64-point log grid over [1, 2000].
    CHECK(t[1] == 1.128229111394436);
    CHECK(std::count(t.begin(), t.end(), 290.1838052196029) == 1);
    CHECK(std::count(t.begin(), t.end(), 1772.6895891988613) == 1);
}

TEST_CASE("annotations and epe summaries round-trip through their files") {
    LutTable lut = affine_lut();
    std::string csv = "video_id,frame_index,lfl_mm,fd_m\n"
                      "vidA,0,20,2\n"
                      "vidA,1,18.5,3\n"
                      "vidB,7,17,100\n"
                      "vidB,11,20,0.5\n";
    AnnotationReport rep = annotate(csv, lut);
    REQUIRE(rep.frames.size() == 4);
    REQUIRE(rep.errors.empty());

    std::string text = annotations_to_csv(rep.frames);
    std::vector<FrameAnnotation> back = annotations_from_csv(text);
    REQUIRE(back.size() == rep.frames.size());
    for (size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].video_id == rep.frames[i].video_id);
        CHECK(back[i].frame_index == rep.frames[i].frame_index);
        CHECK(back[i].state.lfl_mm == rep.frames[i].state.lfl_mm);
        CHECK(back[i].state.fd_m == rep.frames[i].state.fd_m);
        CHECK(back[i].has_gt == rep.frames[i].has_gt);
        if (back[i].has_gt) {
            CHECK(back[i].provenance == rep.frames[i].provenance);
            check_same(back[i].gt, rep.frames[i].gt);
        }
    }

    CHECK_THROWS_AS(annotations_from_csv("nope\n"), ValidationError);
    std::string bad_prov = text;
    bad_prov.replace(bad_prov.find("exact"), 5, "magic");
    CHECK_THROWS_AS(annotations_from_csv(bad_prov), ValidationError);
    FrameAnnotation comma = rep.frames[0];
    comma.video_id = "a,b";
    CHECK_THROWS_AS(annotations_to_csv({comma}), ValidationError);

    // EPE curve and summary serialization.
    SensorSpec sensor = hd_sensor();
    Intrinsics gt = make_pinhole(1000.0, 1000.0, 960.0, 540.0);
    std::vector<Eigen::Vector3d> pts = {{0.0, 0.0, 1.0}, {0.125, 0.0, 1.0}};
    std::vector<FrameAnnotation> ann = {make_frame("v", 0, gt)};
    std::vector<PredictionRecord> preds = {make_pred("v", 0, gt)};
    EpeSummary s = epe(ann, preds, pts, sensor);

    std::vector<std::string> lines;
    {
        std::string curve = epe_curve_csv(s);
        size_t pos = 0, nl;
        while ((nl = curve.find('\n', pos)) != std::string::npos) {
            lines.push_back(curve.substr(pos, nl - pos));
            pos = nl + 1;
        }
    }
    REQUIRE(lines.size() == s.fractions.size() + 1);
    CHECK(lines[0] == "threshold_px,fraction");
    CHECK(lines[1] == "1,1");

    Json j = parse_json(epe_summary_to_json(s), "epe summary");
    CHECK(j["frames"] == 1);
    CHECK(j["pairs"] == 2);
    CHECK(j["infinite_pairs"] == 0);
    CHECK(j["below_300px"] == 1.0);
    CHECK(j["mean_pct"]["fx"] == 0.0);
    CHECK(j["fractions"].size() == 65);
}

TEST_SUITE_END();
