#include "fluxcal/detections.hpp"

#include "fluxcal/errors.hpp"
#include "fluxcal/io/csv.hpp"
#include "fluxcal/io/files.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace fluxcal {

TargetModel make_target(const std::vector<Eigen::Vector3d>& metric_points) {
    if (metric_points.size() < 3)
        throw ValidationError("make_target: need at least 3 points");
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (const auto& p : metric_points) centroid += p;
    centroid /= double(metric_points.size());
    double scale = 0.0;
    for (const auto& p : metric_points) scale = std::max(scale, (p - centroid).norm());
    if (scale <= 0.0) throw ValidationError("make_target: all points coincide");
    TargetModel t;
    t.scale_m = scale;
    t.points.reserve(metric_points.size());
    Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
    for (const auto& p : metric_points) {
        Eigen::Vector3d q = (p - centroid) / scale;
        t.points.push_back(q);
        scatter += q * q.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(scatter);
    // Planar iff the thinnest principal direction carries (numerically) no
    // spread. Eigenvalues are ascending.
    t.planar = es.eigenvalues()(0) < 1e-12 * std::max(1.0, es.eigenvalues()(2));
    return t;
}

void save_target(const std::filesystem::path& path, const TargetModel& target) {
    std::ostringstream out;
    out << "# fluxcal target v1\n";
    out << "# scale_m " << fmt_double(target.scale_m) << "\n";
    for (size_t i = 0; i < target.points.size(); ++i) {
        const auto& p = target.points[i];
        out << i << " " << fmt_double(p.x()) << " " << fmt_double(p.y()) << " "
            << fmt_double(p.z()) << "\n";
    }
    write_file(path, out.str());
}

TargetModel load_target(const std::filesystem::path& path) {
    std::string text = read_file(path);
    double scale_m = 1.0;
    std::vector<Eigen::Vector3d> pts;
    size_t next_id = 0;
    int lineno = 0;
    for (const auto& raw : split_lines(text)) {
        ++lineno;
        std::string_view line = trim(raw);
        if (line.empty()) continue;
        std::string where = path.string() + ":" + std::to_string(lineno);
        if (line[0] == '#') {
            std::istringstream hs{std::string(line.substr(1))};
            std::string key;
            hs >> key;
            if (key == "scale_m") {
                std::string v;
                hs >> v;
                scale_m = parse_double(v, where);
            }
            continue;
        }
        std::istringstream ls{std::string(line)};
        std::string f0, f1, f2, f3, extra;
        if (!(ls >> f0 >> f1 >> f2 >> f3) || (ls >> extra))
            throw ValidationError(where + ": expected \"id x y z\"");
        long id = parse_long(f0, where);
        if (id != (long)next_id)
            throw ValidationError(where + ": point ids must be dense from 0 (got " +
                                  std::to_string(id) + ", expected " +
                                  std::to_string(next_id) + ")");
        pts.emplace_back(parse_double(f1, where), parse_double(f2, where),
                         parse_double(f3, where));
        ++next_id;
    }
    if (pts.size() < 3) throw ValidationError(path.string() + ": need at least 3 points");
    if (!(scale_m > 0)) throw ValidationError(path.string() + ": scale_m must be positive");
    // Points are stored already normalized; recover the planar flag but keep
    // coordinates and scale exactly as read.
    TargetModel t = make_target(pts);
    t.points = pts;
    t.scale_m = scale_m;
    return t;
}

void save_detections(const std::filesystem::path& path, const DetectionSet& det) {
    std::ostringstream out;
    out << "frame_id,point_id,u_px,v_px,valid\n";
    for (const auto& f : det.frames) {
        for (const auto& o : f.obs) {
            out << f.frame_id << "," << o.point_id << "," << fmt_double(o.u) << ","
                << fmt_double(o.v) << "," << (o.valid ? 1 : 0) << "\n";
        }
    }
    write_file(path, out.str());
}

DetectionSet load_detections(const std::filesystem::path& path) {
    std::string text = read_file(path);
    auto lines = split_lines(text);
    if (lines.empty()) throw ValidationError(path.string() + ": empty detections file");
    if (trim(lines[0]) != "frame_id,point_id,u_px,v_px,valid")
        throw ValidationError(path.string() +
                              ": expected header frame_id,point_id,u_px,v_px,valid");
    DetectionSet det;
    std::map<long, size_t> frame_index;
    for (size_t li = 1; li < lines.size(); ++li) {
        if (trim(lines[li]).empty()) continue;
        std::string where = path.string() + ":" + std::to_string(li + 1);
        auto cells = split_csv_line(lines[li]);
        if (cells.size() != 5) throw ValidationError(where + ": expected 5 columns");
        long frame_id = parse_long(cells[0], where);
        Observation o;
        o.point_id = (int)parse_long(cells[1], where);
        o.u = parse_double(cells[2], where);
        o.v = parse_double(cells[3], where);
        long valid = parse_long(cells[4], where);
        if (valid != 0 && valid != 1)
            throw ValidationError(where + ": valid must be 0 or 1");
        o.valid = valid == 1;
        if (o.valid && (!std::isfinite(o.u) || !std::isfinite(o.v)))
            throw ValidationError(where + ": valid observation with non-finite pixel");
        auto it = frame_index.find(frame_id);
        if (it == frame_index.end()) {
            frame_index.emplace(frame_id, det.frames.size());
            det.frames.push_back({frame_id, {o}});
        } else {
            det.frames[it->second].obs.push_back(o);
        }
    }
    std::sort(det.frames.begin(), det.frames.end(),
              [](const FrameObservations& a, const FrameObservations& b) {
                  return a.frame_id < b.frame_id;
              });
    for (auto& f : det.frames) {
        std::set<int> seen;
        for (const auto& o : f.obs) {
            if (!seen.insert(o.point_id).second)
                throw ValidationError(path.string() + ": duplicate point " +
                                      std::to_string(o.point_id) + " in frame " +
                                      std::to_string(f.frame_id));
        }
    }
    return det;
}

// ---------------------------------------------------------------------------
// Keyframe selection

namespace {

struct Candidate {
    long id;
    int count;
};

// One suppression pass; returns the surviving candidates (ascending ids).
std::vector<Candidate> anms_pass(std::vector<Candidate> cand, int full_count,
                                 double c_robust) {
    // Collapse maximal runs of consecutive full-count frames to the run's
    // lower-middle member.
    std::vector<Candidate> collapsed;
    size_t i = 0;
    while (i < cand.size()) {
        if (cand[i].count >= full_count) {
            size_t j = i;
            while (j + 1 < cand.size() && cand[j + 1].count >= full_count &&
                   cand[j + 1].id == cand[j].id + 1)
                ++j;
            collapsed.push_back(cand[i + (j - i) / 2]);
            i = j + 1;
        } else {
            collapsed.push_back(cand[i]);
            ++i;
        }
    }
    size_t n = collapsed.size();
    if (n <= 1) return collapsed;

    // Suppression radius: distance (in frame ids) to the nearest frame that
    // is strictly stronger after the robustness factor. Full-count frames
    // are immune.
    const long kInf = std::numeric_limits<long>::max();
    std::vector<long> radius(n, kInf);
    for (size_t a = 0; a < n; ++a) {
        if (collapsed[a].count >= full_count) continue;
        for (size_t b = 0; b < n; ++b) {
            if (a == b) continue;
            if (double(collapsed[a].count) < c_robust * double(collapsed[b].count)) {
                radius[a] = std::min(radius[a], std::labs(collapsed[a].id - collapsed[b].id));
            }
        }
    }

    // Retained-count curve over integer radii across the candidate id span.
    long span = collapsed.back().id - collapsed.front().id + 1;
    long max_r = std::max<long>(span, 3);
    auto retained = [&](long r) {
        size_t c = 0;
        for (size_t a = 0; a < n; ++a) c += radius[a] >= r ? 1 : 0;
        return (long)c;
    };
    long best_r = 2;
    long best_curv = std::numeric_limits<long>::min();
    for (long r = 2; r <= max_r - 1; ++r) {
        long curv = retained(r - 1) - 2 * retained(r) + retained(r + 1);
        if (curv > best_curv) {
            best_curv = curv;
            best_r = r;
        }
    }
    std::vector<Candidate> kept;
    for (size_t a = 0; a < n; ++a)
        if (radius[a] >= best_r) kept.push_back(collapsed[a]);
    return kept;
}

} // namespace

std::vector<long> select_keyframes(const std::vector<FrameStrength>& strengths,
                                   int full_count, double c_robust) {
    if (full_count <= 0) throw ValidationError("select_keyframes: full_count must be positive");
    std::vector<Candidate> cand;
    for (const auto& s : strengths) {
        if (s.count < 0)
            throw ValidationError("select_keyframes: negative count for frame " +
                                  std::to_string(s.frame_id));
        if (s.count > 0) cand.push_back({s.frame_id, s.count});
    }
    std::sort(cand.begin(), cand.end(),
              [](const Candidate& a, const Candidate& b) { return a.id < b.id; });
    for (size_t i = 1; i < cand.size(); ++i)
        if (cand[i].id == cand[i - 1].id)
            throw ValidationError("select_keyframes: duplicate frame id " +
                                  std::to_string(cand[i].id));

    // Iterate to a fixed point so running the selector on its own output
    // changes nothing.
    for (;;) {
        std::vector<Candidate> next = anms_pass(cand, full_count, c_robust);
        if (next.size() == cand.size()) break;
        cand = std::move(next);
    }
    std::vector<long> out;
    out.reserve(cand.size());
    for (const auto& c : cand) out.push_back(c.id);
    return out;
}

// ---------------------------------------------------------------------------
// LED detection

namespace {

struct Hsl {
    double h; // OpenCV convention: [0, 180)
    double s; // HSV saturation, [0, 255]
    double v; // [0, 255]
    double l; // HSL lightness, [0, 255]
};

Hsl pixel_hsl(const uint8_t* p) {
    double r = p[0], g = p[1], b = p[2];
    double mx = std::max({r, g, b});
    double mn = std::min({r, g, b});
    double d = mx - mn;
    Hsl out;
    out.v = mx;
    out.l = 0.5 * (mx + mn);
    out.s = mx > 0.0 ? 255.0 * d / mx : 0.0;
    double h = 0.0;
    if (d > 0.0) {
        if (mx == r) {
            h = 60.0 * (g - b) / d;
        } else if (mx == g) {
            h = 120.0 + 60.0 * (b - r) / d;
        } else {
            h = 240.0 + 60.0 * (r - g) / d;
        }
        if (h < 0.0) h += 360.0;
    }
    out.h = h / 2.0;
    return out;
}

bool is_red(const Hsl& c, const LedConfig& cfg) {
    if (c.s < cfg.red_s_lo || c.v < cfg.red_v_lo) return false;
    return (c.h >= cfg.red_h_lo_1 && c.h <= cfg.red_h_hi_1) ||
           (c.h >= cfg.red_h_lo_2 && c.h <= cfg.red_h_hi_2);
}

struct Component {
    double cx = 0.0, cy = 0.0;
    double r_major = 0.0, r_minor = 0.0;
    size_t area = 0;
    double mean_sat = 0.0;
};

// 8-connected components of mask, with centroid and second-moment ellipse
// radii (r = 2 sqrt(lambda), so an ideal disk of radius R reports R).
std::vector<Component> label_components(const std::vector<uint8_t>& mask,
                                        const std::vector<Hsl>& hsl, int w, int h,
                                        int min_px) {
    std::vector<Component> comps;
    std::vector<uint8_t> seen(mask.size(), 0);
    std::vector<int> stack;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            size_t idx = size_t(y) * w + x;
            if (!mask[idx] || seen[idx]) continue;
            stack.assign(1, (int)idx);
            seen[idx] = 1;
            std::vector<int> member;
            while (!stack.empty()) {
                int cur = stack.back();
                stack.pop_back();
                member.push_back(cur);
                int cx = cur % w, cy = cur / w;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (!dx && !dy) continue;
                        int nx = cx + dx, ny = cy + dy;
                        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                        size_t ni = size_t(ny) * w + nx;
                        if (mask[ni] && !seen[ni]) {
                            seen[ni] = 1;
                            stack.push_back((int)ni);
                        }
                    }
                }
            }
            if ((int)member.size() < min_px) continue;
            Component c;
            c.area = member.size();
            double sx = 0, sy = 0, ssat = 0;
            for (int m : member) {
                sx += m % w;
                sy += m / w;
                ssat += hsl[m].s;
            }
            c.cx = sx / c.area;
            c.cy = sy / c.area;
            c.mean_sat = ssat / c.area;
            double sxx = 0, syy = 0, sxy = 0;
            for (int m : member) {
                double dx = (m % w) - c.cx;
                double dy = (m / w) - c.cy;
                sxx += dx * dx;
                syy += dy * dy;
                sxy += dx * dy;
            }
            sxx /= c.area;
            syy /= c.area;
            sxy /= c.area;
            double tr = sxx + syy;
            double det = sxx * syy - sxy * sxy;
            double disc = std::max(0.0, tr * tr / 4.0 - det);
            double l1 = tr / 2.0 + std::sqrt(disc);
            double l2 = tr / 2.0 - std::sqrt(disc);
            c.r_major = 2.0 * std::sqrt(std::max(0.0, l1));
            c.r_minor = 2.0 * std::sqrt(std::max(0.0, l2));
            comps.push_back(c);
        }
    }
    return comps;
}

// Fraction of red pixels in the square crop of half-extent 2 * r_major
// around the component centroid (clamped to the image).
double red_fraction(const Component& c, const std::vector<Hsl>& hsl, int w, int h,
                    const LedConfig& cfg) {
    int half = std::max(1, (int)std::ceil(2.0 * c.r_major));
    int x0 = std::max(0, (int)std::floor(c.cx) - half);
    int x1 = std::min(w - 1, (int)std::floor(c.cx) + half);
    int y0 = std::max(0, (int)std::floor(c.cy) - half);
    int y1 = std::min(h - 1, (int)std::floor(c.cy) + half);
    size_t total = 0, red = 0;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            ++total;
            if (is_red(hsl[size_t(y) * w + x], cfg)) ++red;
        }
    }
    return total ? double(red) / double(total) : 0.0;
}

// Deterministic pick among surviving candidates: biggest area, then the
// rounder one, then scan order.
const Component* pick_largest(const std::vector<const Component*>& cands) {
    const Component* best = nullptr;
    for (const Component* c : cands) {
        if (!best) {
            best = c;
            continue;
        }
        double cr = c->r_minor > 0 ? c->r_major / c->r_minor : 1e300;
        double br = best->r_minor > 0 ? best->r_major / best->r_minor : 1e300;
        if (c->area > best->area || (c->area == best->area && cr < br)) best = c;
    }
    return best;
}

} // namespace

std::optional<LedObservation> detect_led(const Image8& frame, const LedConfig& cfg) {
    if (frame.width <= 0 || frame.height <= 0)
        throw ValidationError("detect_led: empty frame");
    const int w = frame.width, h = frame.height;
    std::vector<Hsl> hsl(size_t(w) * h);
    for (size_t i = 0; i < hsl.size(); ++i) hsl[i] = pixel_hsl(frame.rgb.data() + 3 * i);

    auto bright_tier = [&](double lightness, double min_r_minor,
                           int tier) -> std::optional<LedObservation> {
        std::vector<uint8_t> mask(hsl.size());
        for (size_t i = 0; i < hsl.size(); ++i) mask[i] = hsl[i].l > lightness ? 1 : 0;
        auto comps = label_components(mask, hsl, w, h, 1);
        std::vector<const Component*> cands;
        for (const auto& c : comps) {
            if (c.r_minor <= min_r_minor) continue;
            if (c.r_minor <= 0 || c.r_major / c.r_minor >= cfg.max_axis_ratio) continue;
            if (red_fraction(c, hsl, w, h, cfg) < cfg.min_red_fraction) continue;
            cands.push_back(&c);
        }
        if (cands.empty()) return std::nullopt;
        const Component* c = pick_largest(cands);
        return LedObservation{c->cx, c->cy, c->r_major, c->r_minor, tier};
    };

    if (auto hit = bright_tier(cfg.lightness_1, cfg.min_r_minor_1, 1)) return hit;
    if (auto hit = bright_tier(cfg.lightness_2, cfg.min_r_minor_2, 2)) return hit;

    // Tier 3: rank red-mask components by mean saturation; among those within
    // the similarity factor of the best, take the most circular.
    std::vector<uint8_t> mask(hsl.size());
    for (size_t i = 0; i < hsl.size(); ++i) mask[i] = is_red(hsl[i], cfg) ? 1 : 0;
    auto comps = label_components(mask, hsl, w, h, cfg.min_component_px);
    if (comps.empty()) return std::nullopt;
    double best_sat = 0.0;
    for (const auto& c : comps) best_sat = std::max(best_sat, c.mean_sat);
    const Component* pick = nullptr;
    double pick_ratio = 0.0;
    for (const auto& c : comps) {
        if (c.mean_sat < cfg.sat_similarity * best_sat) continue;
        double ratio = c.r_minor > 0 ? c.r_major / c.r_minor : 1e300;
        if (!pick || ratio < pick_ratio ||
            (ratio == pick_ratio && c.mean_sat > pick->mean_sat)) {
            pick = &c;
            pick_ratio = ratio;
        }
    }
    if (!pick) return std::nullopt;
    return LedObservation{pick->cx, pick->cy, pick->r_major, pick->r_minor, 3};
}

std::vector<LedObservation> collapse_led_track(
    const std::vector<std::optional<LedObservation>>& track, double move_tol_px) {
    std::vector<LedObservation> hovers;
    double sum_u = 0, sum_v = 0;
    size_t n = 0;
    LedObservation rep;
    auto flush = [&]() {
        if (n == 0) return;
        rep.u = sum_u / n;
        rep.v = sum_v / n;
        hovers.push_back(rep);
        n = 0;
        sum_u = sum_v = 0;
    };
    for (const auto& maybe : track) {
        if (!maybe) continue;
        const LedObservation& o = *maybe;
        if (n > 0) {
            double mu = sum_u / n, mv = sum_v / n;
            if (std::hypot(o.u - mu, o.v - mv) > move_tol_px) flush();
        }
        if (n == 0) rep = o;
        sum_u += o.u;
        sum_v += o.v;
        ++n;
    }
    flush();
    return hovers;
}

} // namespace fluxcal
