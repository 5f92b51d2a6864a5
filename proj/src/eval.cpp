#include "fluxcal/eval.hpp"

#include "fluxcal/errors.hpp"
#include "fluxcal/io/csv.hpp"
#include "fluxcal/io/json_util.hpp"
#include "fluxcal/kernels/batch.hpp"
#include "fluxcal/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace fluxcal {

namespace {

const char* kMetadataHeader = "video_id,frame_index,lfl_mm,fd_m";
const char* kPredictionHeader = "video_id,frame_index,fx,fy,cx,cy,k1,k2,p1,p2";
const char* kAnnotationHeader =
    "video_id,frame_index,lfl_mm,fd_m,provenance,fx,fy,cx,cy,k1,k2,p1,p2";

bool try_parse_double(const std::string& s, double& out) {
    try {
        size_t used = 0;
        out = std::stod(s, &used);
        return used == s.size();
    } catch (const std::exception&) {
        return false;
    }
}

bool try_parse_long(const std::string& s, long& out) {
    try {
        size_t used = 0;
        out = std::stol(s, &used);
        return used == s.size();
    } catch (const std::exception&) {
        return false;
    }
}

std::string provenance_name(const FrameAnnotation& a) {
    if (!a.has_gt) return "none";
    switch (a.provenance) {
    case GtProvenance::exact: return "exact";
    case GtProvenance::interpolated: return "interpolated";
    case GtProvenance::extrapolated: return "extrapolated";
    }
    return "none";
}

GtProvenance map_provenance(LutProvenance p) {
    switch (p) {
    case LutProvenance::exact: return GtProvenance::exact;
    case LutProvenance::cell:
    case LutProvenance::triangle: return GtProvenance::interpolated;
    case LutProvenance::extrapolated: return GtProvenance::extrapolated;
    }
    return GtProvenance::exact;
}

kernels::ProjectParams identity_params(const Intrinsics& i) {
    kernels::ProjectParams p{};
    p.r[0] = p.r[4] = p.r[8] = 1.0;
    p.fx = i.fx;
    p.fy = i.fy;
    p.cx = i.cx;
    p.cy = i.cy;
    p.k1 = i.k1;
    p.k2 = i.k2;
    p.p1 = i.p1;
    p.p2 = i.p2;
    return p;
}

// Structure-of-arrays copy of a cloud for the batch kernels.
struct Soa {
    std::vector<double> x, y, z, u, v;
    std::vector<uint8_t> ok;
    explicit Soa(const std::vector<Eigen::Vector3d>& pts)
        : x(pts.size()), y(pts.size()), z(pts.size()), u(pts.size()), v(pts.size()),
          ok(pts.size()) {
        for (size_t i = 0; i < pts.size(); ++i) {
            x[i] = pts[i].x();
            y[i] = pts[i].y();
            z[i] = pts[i].z();
        }
    }
    void project(const Intrinsics& intr) {
        kernels::project_batch(x.data(), y.data(), z.data(), x.size(),
                               identity_params(intr), u.data(), v.data(), ok.data());
    }
};

bool in_image(double u, double v, const SensorSpec& sensor) {
    return u >= 0.0 && u < (double)sensor.width_px && v >= 0.0 &&
           v < (double)sensor.height_px;
}

} // namespace

bool is_evaluable(const FrameAnnotation& a) {
    return a.has_gt && a.provenance != GtProvenance::extrapolated;
}

AnnotationReport annotate(const std::string& metadata_csv, const LutTable& lut) {
    std::vector<std::string> lines = split_lines(metadata_csv);
    if (lines.empty() || lines[0] != kMetadataHeader)
        throw ValidationError(std::string("frame metadata: first line must be \"") +
                              kMetadataHeader + "\"");

    double lfl_lo = std::numeric_limits<double>::infinity(), lfl_hi = -lfl_lo;
    for (const LutEntry& e : lut.entries) {
        lfl_lo = std::min(lfl_lo, e.lfl_mm);
        lfl_hi = std::max(lfl_hi, e.lfl_mm);
    }

    AnnotationReport report;
    for (size_t li = 1; li < lines.size(); ++li) {
        auto fail = [&](const std::string& why) {
            report.errors.push_back("line " + std::to_string(li + 1) + ": " + why);
        };
        std::vector<std::string> f = split_csv_line(lines[li]);
        if (f.size() != 4) {
            fail("expected 4 fields, got " + std::to_string(f.size()));
            continue;
        }
        FrameAnnotation a;
        a.video_id = f[0];
        if (a.video_id.empty()) {
            fail("empty video id");
            continue;
        }
        if (!try_parse_long(f[1], a.frame_index)) {
            fail("bad frame index \"" + f[1] + "\"");
            continue;
        }
        if (!try_parse_double(f[2], a.state.lfl_mm) || !try_parse_double(f[3], a.state.fd_m)) {
            fail("bad lens state \"" + f[2] + "," + f[3] + "\"");
            continue;
        }
        if (a.state.lfl_mm < lfl_lo || a.state.lfl_mm > lfl_hi) {
            fail("focal length " + f[2] + " mm outside the table range [" +
                 fmt_double(lfl_lo) + ", " + fmt_double(lfl_hi) + "]");
            continue;
        }
        try {
            LutQueryResult q = lut_query(lut, a.state);
            a.has_gt = true;
            a.gt = q.intrinsics;
            a.provenance = map_provenance(q.provenance);
        } catch (const std::exception&) {
            a.has_gt = false; // in-range state the table cannot answer
        }
        report.frames.push_back(std::move(a));
    }
    return report;
}

std::string annotations_to_csv(const std::vector<FrameAnnotation>& frames) {
    std::string out = std::string(kAnnotationHeader) + "\n";
    for (const FrameAnnotation& a : frames) {
        if (a.video_id.find(',') != std::string::npos)
            throw ValidationError("annotations: video id contains a comma: " + a.video_id);
        out += a.video_id + ',' + std::to_string(a.frame_index) + ',' +
               fmt_double(a.state.lfl_mm) + ',' + fmt_double(a.state.fd_m) + ',' +
               provenance_name(a);
        if (a.has_gt) {
            const Intrinsics& g = a.gt;
            for (double v : {g.fx, g.fy, g.cx, g.cy, g.k1, g.k2, g.p1, g.p2})
                out += ',' + fmt_double(v);
        } else {
            out += ",,,,,,,,";
        }
        out += '\n';
    }
    return out;
}

std::vector<FrameAnnotation> annotations_from_csv(const std::string& text) {
    std::vector<std::string> lines = split_lines(text);
    if (lines.empty() || lines[0] != kAnnotationHeader)
        throw ValidationError(std::string("annotations: first line must be \"") +
                              kAnnotationHeader + "\"");
    std::vector<FrameAnnotation> out;
    for (size_t li = 1; li < lines.size(); ++li) {
        std::string where = "annotations line " + std::to_string(li + 1);
        std::vector<std::string> f = split_csv_line(lines[li]);
        if (f.size() != 13)
            throw ValidationError(where + ": expected 13 fields, got " +
                                  std::to_string(f.size()));
        FrameAnnotation a;
        a.video_id = f[0];
        if (!try_parse_long(f[1], a.frame_index))
            throw ValidationError(where + ": bad frame index");
        if (!try_parse_double(f[2], a.state.lfl_mm) || !try_parse_double(f[3], a.state.fd_m))
            throw ValidationError(where + ": bad lens state");
        if (f[4] == "none") {
            a.has_gt = false;
        } else {
            a.has_gt = true;
            if (f[4] == "exact") a.provenance = GtProvenance::exact;
            else if (f[4] == "interpolated") a.provenance = GtProvenance::interpolated;
            else if (f[4] == "extrapolated") a.provenance = GtProvenance::extrapolated;
            else throw ValidationError(where + ": unknown provenance \"" + f[4] + "\"");
            double* slots[8] = {&a.gt.fx, &a.gt.fy, &a.gt.cx, &a.gt.cy,
                                &a.gt.k1, &a.gt.k2, &a.gt.p1, &a.gt.p2};
            for (int k = 0; k < 8; ++k)
                if (!try_parse_double(f[(size_t)k + 5], *slots[k]))
                    throw ValidationError(where + ": bad intrinsics field " +
                                          std::to_string(k));
        }
        out.push_back(std::move(a));
    }
    return out;
}

std::vector<PredictionRecord> predictions_from_csv(const std::string& text) {
    std::vector<std::string> lines = split_lines(text);
    if (lines.empty() || lines[0] != kPredictionHeader)
        throw ValidationError(std::string("predictions: first line must be \"") +
                              kPredictionHeader + "\"");
    std::vector<PredictionRecord> out;
    std::map<std::pair<std::string, long>, size_t> seen;
    for (size_t li = 1; li < lines.size(); ++li) {
        std::string where = "predictions line " + std::to_string(li + 1);
        std::vector<std::string> f = split_csv_line(lines[li]);
        if (f.size() != 10)
            throw ValidationError(where + ": expected 10 fields, got " +
                                  std::to_string(f.size()));
        PredictionRecord r;
        r.video_id = f[0];
        if (r.video_id.empty()) throw ValidationError(where + ": empty video id");
        if (!try_parse_long(f[1], r.frame_index))
            throw ValidationError(where + ": bad frame index");
        auto key = std::make_pair(r.video_id, r.frame_index);
        if (seen.count(key))
            throw ValidationError(where + ": duplicate record for " + r.video_id +
                                  " frame " + f[1]);
        seen[key] = li;

        int n_core_empty = 0;
        for (int k = 2; k < 6; ++k)
            if (f[(size_t)k].empty()) ++n_core_empty;
        if (n_core_empty == 4) {
            r.has_prediction = false;
        } else if (n_core_empty == 0) {
            r.has_prediction = true;
            double* core[4] = {&r.predicted.fx, &r.predicted.fy, &r.predicted.cx,
                               &r.predicted.cy};
            for (int k = 0; k < 4; ++k)
                if (!try_parse_double(f[(size_t)k + 2], *core[k]))
                    throw ValidationError(where + ": bad value \"" + f[(size_t)k + 2] +
                                          "\"");
            // Absent distortion coefficients are zero-filled.
            double* dist[4] = {&r.predicted.k1, &r.predicted.k2, &r.predicted.p1,
                               &r.predicted.p2};
            for (int k = 0; k < 4; ++k) {
                const std::string& s = f[(size_t)k + 6];
                if (s.empty()) {
                    *dist[k] = 0.0;
                } else if (!try_parse_double(s, *dist[k])) {
                    throw ValidationError(where + ": bad value \"" + s + "\"");
                }
            }
        } else {
            throw ValidationError(where +
                                  ": fx,fy,cx,cy must be all present or all empty");
        }
        out.push_back(std::move(r));
    }
    return out;
}

PercentErrors percent_errors(const std::vector<FrameAnnotation>& annotations,
                             const std::vector<PredictionRecord>& predictions) {
    std::map<std::pair<std::string, long>, const PredictionRecord*> index;
    for (const PredictionRecord& r : predictions)
        index[{r.video_id, r.frame_index}] = &r;

    PercentErrors pe;
    double sx = 0, sy = 0, scx = 0, scy = 0;
    for (const FrameAnnotation& a : annotations) {
        if (!is_evaluable(a)) continue;
        auto it = index.find({a.video_id, a.frame_index});
        if (it == index.end() || !it->second->has_prediction) {
            ++pe.missing_predictions;
            continue;
        }
        if (a.gt.fx == 0.0 || a.gt.fy == 0.0 || a.gt.cx == 0.0 || a.gt.cy == 0.0) {
            ++pe.zero_gt_excluded;
            continue;
        }
        const Intrinsics& p = it->second->predicted;
        sx += 100.0 * std::abs(p.fx - a.gt.fx) / std::abs(a.gt.fx);
        sy += 100.0 * std::abs(p.fy - a.gt.fy) / std::abs(a.gt.fy);
        scx += 100.0 * std::abs(p.cx - a.gt.cx) / std::abs(a.gt.cx);
        scy += 100.0 * std::abs(p.cy - a.gt.cy) / std::abs(a.gt.cy);
        ++pe.frames_scored;
    }
    if (pe.frames_scored > 0) {
        pe.fx = sx / (double)pe.frames_scored;
        pe.fy = sy / (double)pe.frames_scored;
        pe.cx = scx / (double)pe.frames_scored;
        pe.cy = scy / (double)pe.frames_scored;
    }
    return pe;
}

std::vector<Eigen::Vector3d> load_xyz(const std::string& text) {
    std::vector<Eigen::Vector3d> out;
    std::vector<std::string> lines = split_lines(text);
    for (size_t li = 0; li < lines.size(); ++li) {
        const std::string& line = lines[li];
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::istringstream ss(line);
        double x, y, z;
        std::string extra;
        if (!(ss >> x >> y >> z) || (ss >> extra))
            throw ValidationError("points line " + std::to_string(li + 1) +
                                  ": expected three numbers");
        out.emplace_back(x, y, z);
    }
    return out;
}

std::vector<Eigen::Vector3d> sample_fov_points(const std::vector<Eigen::Vector3d>& cloud,
                                               const std::vector<FrameAnnotation>& annotations,
                                               const SensorSpec& sensor, size_t n,
                                               uint64_t seed) {
    if (cloud.empty()) throw ValidationError("sample_fov_points: empty cloud");
    Soa soa(cloud);
    std::vector<uint8_t> visible(cloud.size(), 0);
    for (const FrameAnnotation& a : annotations) {
        if (!is_evaluable(a)) continue;
        soa.project(a.gt);
        for (size_t i = 0; i < cloud.size(); ++i)
            if (!visible[i] && soa.ok[i] && in_image(soa.u[i], soa.v[i], sensor))
                visible[i] = 1;
    }
    std::vector<Eigen::Vector3d> survivors;
    for (size_t i = 0; i < cloud.size(); ++i)
        if (visible[i]) survivors.push_back(cloud[i]);
    if (survivors.size() <= n) return survivors;

    Rng rng(seed);
    for (size_t i = 0; i < n; ++i) {
        size_t j = i + (size_t)rng.below((uint64_t)(survivors.size() - i));
        std::swap(survivors[i], survivors[j]);
    }
    survivors.resize(n);
    return survivors;
}

std::vector<double> default_epe_thresholds() {
    std::vector<double> t;
    t.reserve(65);
    for (int i = 0; i < 64; ++i) t.push_back(std::pow(2000.0, (double)i / 63.0));
    t.back() = 2000.0;
    t.push_back(300.0);
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    return t;
}

EpeSummary epe(const std::vector<FrameAnnotation>& annotations,
               const std::vector<PredictionRecord>& predictions,
               const std::vector<Eigen::Vector3d>& points, const SensorSpec& sensor,
               const std::vector<double>& thresholds) {
    if (points.empty()) throw ValidationError("epe: empty point set");
    std::vector<double> th = thresholds;
    std::sort(th.begin(), th.end());
    th.erase(std::unique(th.begin(), th.end()), th.end());
    if (th.empty()) throw ValidationError("epe: no thresholds");

    std::map<std::pair<std::string, long>, const PredictionRecord*> index;
    for (const PredictionRecord& r : predictions)
        index[{r.video_id, r.frame_index}] = &r;

    Soa gt_soa(points);
    Soa pr_soa(points);
    std::vector<size_t> hist(th.size(), 0); // first threshold >= epe
    EpeSummary s;

    for (const FrameAnnotation& a : annotations) {
        if (!is_evaluable(a)) continue;
        ++s.frames;
        gt_soa.project(a.gt);

        auto it = index.find({a.video_id, a.frame_index});
        bool have = it != index.end() && it->second->has_prediction;
        if (have) pr_soa.project(it->second->predicted);

        for (size_t i = 0; i < points.size(); ++i) {
            if (!gt_soa.ok[i] || !in_image(gt_soa.u[i], gt_soa.v[i], sensor)) continue;
            ++s.pairs;
            if (!have) {
                ++s.infinite_pairs; // no prediction: infinite endpoint error
                continue;
            }
            double du = pr_soa.u[i] - gt_soa.u[i];
            double dv = pr_soa.v[i] - gt_soa.v[i];
            if (!pr_soa.ok[i]) {
                ++s.infinite_pairs; // point folded behind the predicted camera
                continue;
            }
            double e = std::hypot(du, dv);
            auto bucket = std::lower_bound(th.begin(), th.end(), e);
            if (bucket != th.end()) ++hist[(size_t)(bucket - th.begin())];
        }
    }

    size_t below = 0;
    s.fractions.reserve(th.size());
    for (size_t t = 0; t < th.size(); ++t) {
        below += hist[t];
        EpeThresholdRow row;
        row.threshold_px = th[t];
        row.fraction = s.pairs > 0 ? (double)below / (double)s.pairs : 0.0;
        s.fractions.push_back(row);
    }
    s.pct = percent_errors(annotations, predictions);
    return s;
}

std::string epe_curve_csv(const EpeSummary& summary) {
    std::string out = "threshold_px,fraction\n";
    for (const EpeThresholdRow& r : summary.fractions)
        out += fmt_double(r.threshold_px) + ',' + fmt_double(r.fraction) + '\n';
    return out;
}

std::string epe_summary_to_json(const EpeSummary& summary) {
    Json j;
    j["frames"] = summary.frames;
    j["pairs"] = summary.pairs;
    j["infinite_pairs"] = summary.infinite_pairs;
    j["mean_pct"] = {{"fx", summary.pct.fx},
                     {"fy", summary.pct.fy},
                     {"cx", summary.pct.cx},
                     {"cy", summary.pct.cy}};
    j["frames_scored"] = summary.pct.frames_scored;
    j["missing_predictions"] = summary.pct.missing_predictions;
    j["zero_gt_excluded"] = summary.pct.zero_gt_excluded;
    Json rows = Json::array();
    for (const EpeThresholdRow& r : summary.fractions) {
        rows.push_back({{"threshold_px", r.threshold_px}, {"fraction", r.fraction}});
        if (r.threshold_px == 300.0) j["below_300px"] = r.fraction;
    }
    j["fractions"] = rows;
    return j.dump(2);
}

} // namespace fluxcal
