#pragma once

#include "fluxcal/camera_model.hpp"
#include "fluxcal/lut.hpp"

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace fluxcal {

// How a frame's ground-truth intrinsics were established from the table.
enum class GtProvenance { exact, interpolated, extrapolated };

// One benchmark frame: which video it came from, the lens state recorded for
// it, and the table-derived ground truth. Frames whose state the table
// cannot answer in-bounds carry no ground truth; extrapolated frames carry
// one but are excluded from the test metrics.
struct FrameAnnotation {
    std::string video_id;
    long frame_index = 0;
    LensState state;
    bool has_gt = false;
    Intrinsics gt;
    GtProvenance provenance = GtProvenance::exact;
};

// True when the frame participates in metrics: ground truth present and not
// extrapolated.
bool is_evaluable(const FrameAnnotation& a);

struct AnnotationReport {
    std::vector<FrameAnnotation> frames;
    std::vector<std::string> errors; // skipped rows, with 1-based line numbers
};

// Joins frame metadata (csv: video_id,frame_index,lfl_mm,fd_m) against the
// table. Malformed rows and states outside the table's focal-length range
// are reported and skipped; focus distances the table cannot answer yield
// annotations without ground truth.
AnnotationReport annotate(const std::string& metadata_csv, const LutTable& lut);

std::string annotations_to_csv(const std::vector<FrameAnnotation>& frames);
std::vector<FrameAnnotation> annotations_from_csv(const std::string& text);

// A baseline's per-frame output. Missing predictions are legal input — they
// score as infinite endpoint error.
struct PredictionRecord {
    std::string video_id;
    long frame_index = 0;
    bool has_prediction = false;
    Intrinsics predicted;
};

// csv: video_id,frame_index,fx,fy,cx,cy,k1,k2,p1,p2. Empty fx..cy mark a
// missing prediction; empty distortion fields with fx..cy present are
// zero-filled. Duplicate (video, frame) pairs are rejected.
std::vector<PredictionRecord> predictions_from_csv(const std::string& text);

// Mean over frames of 100 * |pred - gt| / gt, per parameter.
struct PercentErrors {
    double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
    size_t frames_scored = 0;
    size_t missing_predictions = 0; // evaluable frames with no prediction
    size_t zero_gt_excluded = 0;    // frames dropped for a zero gt parameter
};

PercentErrors percent_errors(const std::vector<FrameAnnotation>& annotations,
                             const std::vector<PredictionRecord>& predictions);

// Whitespace-separated XYZ text, one point per line; blank lines skipped.
std::vector<Eigen::Vector3d> load_xyz(const std::string& text);

// Keeps cloud points that land in-image under at least one evaluable
// frame's ground truth (identity pose), then draws min(n, survivors) of
// them uniformly without replacement, deterministically in the seed.
std::vector<Eigen::Vector3d> sample_fov_points(const std::vector<Eigen::Vector3d>& cloud,
                                               const std::vector<FrameAnnotation>& annotations,
                                               const SensorSpec& sensor, size_t n,
                                               uint64_t seed);

struct EpeThresholdRow {
    double threshold_px = 0.0;
    double fraction = 0.0; // of all frame-point pairs with EPE <= threshold
};

struct EpeSummary {
    std::vector<EpeThresholdRow> fractions; // ascending thresholds
    PercentErrors pct;
    size_t frames = 0;         // evaluable frames scored
    size_t pairs = 0;          // frame-point pairs, including infinite ones
    size_t infinite_pairs = 0; // pairs from frames without predictions
};

// 64 log-spaced thresholds over [1, 2000] px plus the 300 px reference
// point, sorted and deduplicated.
std::vector<double> default_epe_thresholds();

// Per evaluable frame: select in-FOV points under the ground truth
// (identity pose), project them under ground truth and prediction, and
// score the L2 pixel distance. A missing prediction makes all of that
// frame's pairs infinite.
EpeSummary epe(const std::vector<FrameAnnotation>& annotations,
               const std::vector<PredictionRecord>& predictions,
               const std::vector<Eigen::Vector3d>& points, const SensorSpec& sensor,
               const std::vector<double>& thresholds = default_epe_thresholds());

// threshold_px,fraction rows for plotting.
std::string epe_curve_csv(const EpeSummary& summary);

std::string epe_summary_to_json(const EpeSummary& summary);

} // namespace fluxcal
