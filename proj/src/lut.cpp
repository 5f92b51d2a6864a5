#include "fluxcal/lut.hpp"

#include "fluxcal/errors.hpp"
#include "fluxcal/io/csv.hpp"
#include "fluxcal/io/json_util.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace fluxcal {

namespace {

constexpr double kExactTol = 1e-9; // absolute (LFL, FD) match tolerance

// ---------------------------------------------------------------------------
// Column structure: entries grouped by exact LFL value, FD-sorted.
// ---------------------------------------------------------------------------

struct Columns {
    std::vector<double> lfl;                 // ascending
    std::vector<std::vector<int>> entries;   // per column, FD-ascending indices
};

Columns group_columns(const std::vector<LutEntry>& entries) {
    std::map<double, std::vector<int>> by_lfl;
    for (size_t i = 0; i < entries.size(); ++i)
        by_lfl[entries[i].lfl_mm].push_back((int)i);
    Columns cols;
    for (auto& [lfl, idx] : by_lfl) {
        std::sort(idx.begin(), idx.end(), [&](int a, int b) {
            return entries[(size_t)a].fd_m < entries[(size_t)b].fd_m;
        });
        cols.lfl.push_back(lfl);
        cols.entries.push_back(idx);
    }
    return cols;
}

bool same_row(double fd_a, double fd_b, double tol) {
    return std::abs(fd_a - fd_b) <= tol * std::max(std::abs(fd_a), std::abs(fd_b));
}

// ---------------------------------------------------------------------------
// Bowyer-Watson Delaunay triangulation on pre-normalized coordinates.
// ---------------------------------------------------------------------------

struct Pt {
    double x = 0.0, y = 0.0;
};

struct BwTri {
    int a = 0, b = 0, c = 0;
    double cx = 0.0, cy = 0.0, r2 = 0.0;
};

BwTri make_tri(const std::vector<Pt>& pts, int a, int b, int c) {
    BwTri t{a, b, c, 0.0, 0.0, 0.0};
    const Pt &A = pts[(size_t)a], &B = pts[(size_t)b], &C = pts[(size_t)c];
    double d = 2.0 * (A.x * (B.y - C.y) + B.x * (C.y - A.y) + C.x * (A.y - B.y));
    if (std::abs(d) < 1e-300) {
        t.r2 = std::numeric_limits<double>::infinity(); // degenerate: always bad
        return t;
    }
    double a2 = A.x * A.x + A.y * A.y;
    double b2 = B.x * B.x + B.y * B.y;
    double c2 = C.x * C.x + C.y * C.y;
    t.cx = (a2 * (B.y - C.y) + b2 * (C.y - A.y) + c2 * (A.y - B.y)) / d;
    t.cy = (a2 * (C.x - B.x) + b2 * (A.x - C.x) + c2 * (B.x - A.x)) / d;
    double dx = A.x - t.cx, dy = A.y - t.cy;
    t.r2 = dx * dx + dy * dy;
    return t;
}

// Indices are into pts; the returned triangles reference only real points.
std::vector<LutTriangle> delaunay(const std::vector<Pt>& pts) {
    size_t n = pts.size();
    if (n < 3) return {};
    std::vector<Pt> work = pts;
    // Super-triangle generously containing the normalized cloud.
    work.push_back({-100.0, -100.0});
    work.push_back({300.0, -100.0});
    work.push_back({0.5, 300.0});
    int s0 = (int)n, s1 = (int)n + 1, s2 = (int)n + 2;

    std::vector<BwTri> tris{make_tri(work, s0, s1, s2)};
    struct Edge {
        int a, b;
    };
    for (int p = 0; p < (int)n; ++p) {
        std::vector<Edge> polygon;
        std::vector<BwTri> keep;
        keep.reserve(tris.size());
        for (const BwTri& t : tris) {
            double dx = work[(size_t)p].x - t.cx, dy = work[(size_t)p].y - t.cy;
            bool bad = std::isinf(t.r2) || dx * dx + dy * dy <= t.r2 * (1.0 + 1e-12);
            if (bad) {
                polygon.push_back({t.a, t.b});
                polygon.push_back({t.b, t.c});
                polygon.push_back({t.c, t.a});
            } else {
                keep.push_back(t);
            }
        }
        // Boundary edges appear exactly once among the bad triangles.
        std::vector<Edge> boundary;
        for (size_t i = 0; i < polygon.size(); ++i) {
            bool shared = false;
            for (size_t j = 0; j < polygon.size(); ++j) {
                if (i == j) continue;
                if ((polygon[i].a == polygon[j].b && polygon[i].b == polygon[j].a) ||
                    (polygon[i].a == polygon[j].a && polygon[i].b == polygon[j].b)) {
                    shared = true;
                    break;
                }
            }
            if (!shared) boundary.push_back(polygon[i]);
        }
        tris.swap(keep);
        for (const Edge& e : boundary) tris.push_back(make_tri(work, e.a, e.b, p));
    }

    std::vector<LutTriangle> out;
    for (const BwTri& t : tris) {
        if (t.a >= (int)n || t.b >= (int)n || t.c >= (int)n) continue;
        if (std::isinf(t.r2)) continue; // collinear sliver
        out.push_back({t.a, t.b, t.c});
    }
    return out;
}

std::vector<Pt> normalize_points(const std::vector<LutEntry>& entries) {
    double lo_l = std::numeric_limits<double>::infinity(), hi_l = -lo_l;
    double lo_f = lo_l, hi_f = -lo_l;
    for (const auto& e : entries) {
        lo_l = std::min(lo_l, e.lfl_mm);
        hi_l = std::max(hi_l, e.lfl_mm);
        lo_f = std::min(lo_f, e.fd_m);
        hi_f = std::max(hi_f, e.fd_m);
    }
    double span_l = hi_l - lo_l > 0 ? hi_l - lo_l : 1.0;
    double span_f = hi_f - lo_f > 0 ? hi_f - lo_f : 1.0;
    std::vector<Pt> pts(entries.size());
    for (size_t i = 0; i < entries.size(); ++i)
        pts[i] = {(entries[i].lfl_mm - lo_l) / span_l, (entries[i].fd_m - lo_f) / span_f};
    return pts;
}

// ---------------------------------------------------------------------------
// Containment tests.
// ---------------------------------------------------------------------------

TrapezoidCorners cell_corners(const std::vector<LutEntry>& entries, const LutCell& cell) {
    TrapezoidCorners tz;
    tz.lfl0 = entries[(size_t)cell.a].lfl_mm;
    tz.lfl1 = entries[(size_t)cell.d].lfl_mm;
    tz.fd0 = entries[(size_t)cell.a].fd_m;
    tz.fd1 = entries[(size_t)cell.b].fd_m;
    tz.fd2 = entries[(size_t)cell.c].fd_m;
    tz.fd3 = entries[(size_t)cell.d].fd_m;
    return tz;
}

// Edge heights of the trapezoid at a given LFL.
void edge_heights(const TrapezoidCorners& tz, double lfl, double& y1, double& y2) {
    double t = (lfl - tz.lfl0) / (tz.lfl1 - tz.lfl0);
    y1 = (tz.fd3 - tz.fd0) * t + tz.fd0;
    y2 = (tz.fd2 - tz.fd1) * t + tz.fd1;
}

bool cell_contains(const TrapezoidCorners& tz, double lfl, double fd) {
    double eps_l = 1e-9 * (tz.lfl1 - tz.lfl0);
    if (lfl < tz.lfl0 - eps_l || lfl > tz.lfl1 + eps_l) return false;
    double y1 = 0.0, y2 = 0.0;
    edge_heights(tz, std::clamp(lfl, tz.lfl0, tz.lfl1), y1, y2);
    double eps_f = 1e-9 * std::max(y2 - y1, 1e-12);
    return fd >= y1 - eps_f && fd <= y2 + eps_f;
}

bool triangle_contains(const Pt& p0, const Pt& p1, const Pt& p2, const Pt& q) {
    double det = (p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y);
    if (std::abs(det) < 1e-300) return false;
    double w1 = ((q.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (q.y - p0.y)) / det;
    double w2 = ((p1.x - p0.x) * (q.y - p0.y) - (q.x - p0.x) * (p1.y - p0.y)) / det;
    double w0 = 1.0 - w1 - w2;
    double eps = 1e-9;
    return w0 >= -eps && w1 >= -eps && w2 >= -eps;
}

Intrinsics blend4(const Intrinsics& a, const Intrinsics& b, const Intrinsics& c,
                  const Intrinsics& d, double wa, double wb, double wc, double wd) {
    Intrinsics out;
    out.fx = wa * a.fx + wb * b.fx + wc * c.fx + wd * d.fx;
    out.fy = wa * a.fy + wb * b.fy + wc * c.fy + wd * d.fy;
    out.cx = wa * a.cx + wb * b.cx + wc * c.cx + wd * d.cx;
    out.cy = wa * a.cy + wb * b.cy + wc * c.cy + wd * d.cy;
    out.k1 = wa * a.k1 + wb * b.k1 + wc * c.k1 + wd * d.k1;
    out.k2 = wa * a.k2 + wb * b.k2 + wc * c.k2 + wd * d.k2;
    out.p1 = wa * a.p1 + wb * b.p1 + wc * c.p1 + wd * d.p1;
    out.p2 = wa * a.p2 + wb * b.p2 + wc * c.p2 + wd * d.p2;
    return out;
}

double metric_cfl_mm(const Intrinsics& intr, const SensorSpec& sensor) {
    return 0.5 * (intr.fx * sensor.pixel_width_mm() + intr.fy * sensor.pixel_height_mm());
}

// Thin-lens effective LFL (mm) of one column: reciprocal of the mean of
// 1/CFL + 1/(FD - CFL) over the column's entries, everything in meters.
double column_effective_lfl_mm(const LutTable& table, const std::vector<int>& column) {
    double sum = 0.0;
    for (int idx : column) {
        const LutEntry& e = table.entries[(size_t)idx];
        double cfl_m = metric_cfl_mm(e.intrinsics, table.sensor) / 1000.0;
        if (!(e.fd_m > cfl_m))
            throw NumericalError("extrapolate_cfl: entry at (" + fmt_double(e.lfl_mm) +
                                 ", " + fmt_double(e.fd_m) +
                                 ") has focus distance not beyond its focal length");
        sum += 1.0 / cfl_m + 1.0 / (e.fd_m - cfl_m);
    }
    return (double)column.size() / sum * 1000.0;
}

std::string source_name(LutSource s) {
    return s == LutSource::board ? "board" : "drone";
}

LutSource source_from_name(const std::string& s) {
    if (s == "board") return LutSource::board;
    if (s == "drone") return LutSource::drone;
    throw ValidationError("lut entry: source must be board or drone, got '" + s + "'");
}

} // namespace

// ---------------------------------------------------------------------------
// Region decomposition.
// ---------------------------------------------------------------------------

LutRegions build_regions(const std::vector<LutEntry>& entries, double row_tolerance) {
    if (entries.size() < 3)
        throw ValidationError("build_regions: need at least 3 entries, got " +
                              std::to_string(entries.size()));
    LutRegions regions;

    // Trapezoids between consecutive LFL columns wherever FD ranks pair up.
    Columns cols = group_columns(entries);
    for (size_t j = 0; j + 1 < cols.lfl.size(); ++j) {
        const auto& left = cols.entries[j];
        const auto& right = cols.entries[j + 1];
        size_t ranks = std::min(left.size(), right.size());
        std::vector<uint8_t> paired(ranks, 0);
        for (size_t r = 0; r < ranks; ++r)
            paired[r] = same_row(entries[(size_t)left[r]].fd_m,
                                 entries[(size_t)right[r]].fd_m, row_tolerance)
                            ? 1
                            : 0;
        for (size_t r = 0; r + 1 < ranks; ++r) {
            if (!paired[r] || !paired[r + 1]) continue;
            LutCell cell;
            cell.a = left[r];
            cell.b = left[r + 1];
            cell.c = right[r + 1];
            cell.d = right[r];
            regions.cells.push_back(cell);
        }
    }

    // Delaunay over everything; drop triangles whose centroid a cell covers.
    std::vector<Pt> pts = normalize_points(entries);
    std::vector<LutTriangle> tris = delaunay(pts);
    for (const LutTriangle& t : tris) {
        double clfl = (entries[(size_t)t.v0].lfl_mm + entries[(size_t)t.v1].lfl_mm +
                       entries[(size_t)t.v2].lfl_mm) /
                      3.0;
        double cfd = (entries[(size_t)t.v0].fd_m + entries[(size_t)t.v1].fd_m +
                      entries[(size_t)t.v2].fd_m) /
                     3.0;
        bool covered = false;
        for (const LutCell& cell : regions.cells) {
            if (cell_contains(cell_corners(entries, cell), clfl, cfd)) {
                covered = true;
                break;
            }
        }
        if (!covered) regions.triangles.push_back(t);
    }

    if (regions.cells.empty() && regions.triangles.empty())
        throw ValidationError("build_regions: entries are collinear, no area to cover");
    return regions;
}

LutTable make_lut(const LensSpec& lens, const SensorSpec& sensor,
                  std::vector<LutEntry> entries, double row_tolerance) {
    for (size_t i = 0; i < entries.size(); ++i)
        for (size_t j = i + 1; j < entries.size(); ++j)
            if (std::abs(entries[i].lfl_mm - entries[j].lfl_mm) <= kExactTol &&
                std::abs(entries[i].fd_m - entries[j].fd_m) <= kExactTol)
                throw ValidationError("make_lut: duplicate entry at (" +
                                      fmt_double(entries[i].lfl_mm) + " mm, " +
                                      fmt_double(entries[i].fd_m) + " m)");
    LutTable table;
    table.lens = lens;
    table.sensor = sensor;
    table.entries = std::move(entries);
    table.row_tolerance = row_tolerance;
    table.regions = build_regions(table.entries, row_tolerance);
    return table;
}

// ---------------------------------------------------------------------------
// Interpolation.
// ---------------------------------------------------------------------------

BilinearWeights trapezoid_weights(const TrapezoidCorners& tz, double lfl, double fd) {
    if (!(tz.lfl0 < tz.lfl1))
        throw ValidationError("trapezoid_weights: columns must satisfy lfl0 < lfl1");
    BilinearWeights w;
    w.p_lfl = (lfl - tz.lfl0) / (tz.lfl1 - tz.lfl0);
    edge_heights(tz, lfl, w.y1, w.y2);
    if (!(w.y2 != w.y1))
        throw ValidationError("trapezoid_weights: degenerate trapezoid (y2 == y1)");
    w.p_fd = (fd - w.y1) / (w.y2 - w.y1);
    w.wa = (1.0 - w.p_lfl) * (1.0 - w.p_fd);
    w.wb = (1.0 - w.p_lfl) * w.p_fd;
    w.wc = w.p_lfl * w.p_fd;
    w.wd = w.p_lfl * (1.0 - w.p_fd);
    return w;
}

Intrinsics interp_trapezoid(const TrapezoidCorners& tz, const Intrinsics& a,
                            const Intrinsics& b, const Intrinsics& c, const Intrinsics& d,
                            double lfl, double fd) {
    BilinearWeights w = trapezoid_weights(tz, lfl, fd);
    return blend4(a, b, c, d, w.wa, w.wb, w.wc, w.wd);
}

Barycentric barycentric_weights(double x0, double y0, double x1, double y1, double x2,
                                double y2, double x, double y) {
    double det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
    if (std::abs(det) < 1e-300)
        throw ValidationError("barycentric_weights: degenerate (zero-area) triangle");
    Barycentric w;
    w.w1 = ((x - x0) * (y2 - y0) - (x2 - x0) * (y - y0)) / det;
    w.w2 = ((x1 - x0) * (y - y0) - (x - x0) * (y1 - y0)) / det;
    w.w0 = 1.0 - w.w1 - w.w2;
    return w;
}

Intrinsics interp_triangle(double x0, double y0, const Intrinsics& i0, double x1, double y1,
                           const Intrinsics& i1, double x2, double y2, const Intrinsics& i2,
                           double x, double y) {
    Barycentric w = barycentric_weights(x0, y0, x1, y1, x2, y2, x, y);
    Intrinsics zero;
    Intrinsics out = blend4(i0, i1, i2, zero, w.w0, w.w1, w.w2, 0.0);
    return out;
}

// ---------------------------------------------------------------------------
// Querying.
// ---------------------------------------------------------------------------

ExtrapolatedCfl extrapolate_cfl(const LutTable& table, const LensState& state) {
    Columns cols = group_columns(table.entries);
    if (cols.lfl.empty()) throw ValidationError("extrapolate_cfl: empty table");
    double lfl_q = state.lfl_mm;
    if (lfl_q < cols.lfl.front() - kExactTol || lfl_q > cols.lfl.back() + kExactTol)
        throw ValidationError("extrapolate_cfl: LFL " + fmt_double(lfl_q) +
                              " mm outside the table's column range");

    size_t j1 = 0;
    while (j1 + 1 < cols.lfl.size() && cols.lfl[j1] < lfl_q - kExactTol) ++j1;
    size_t j0 = j1 > 0 && cols.lfl[j1] > lfl_q + kExactTol ? j1 - 1 : j1;
    // j0 is the last column <= query, j1 the first column >= query.
    if (cols.lfl[j0] > lfl_q + kExactTol) j0 = j1;

    double cfl_mm;
    if (j0 == j1 || std::abs(cols.lfl[j1] - cols.lfl[j0]) <= kExactTol) {
        double lfl_eff = column_effective_lfl_mm(table, cols.entries[j0]);
        cfl_mm = thin_lens_cfl({lfl_eff, state.fd_m});
    } else {
        double eff0 = column_effective_lfl_mm(table, cols.entries[j0]);
        double eff1 = column_effective_lfl_mm(table, cols.entries[j1]);
        double c0 = thin_lens_cfl({eff0, state.fd_m});
        double c1 = thin_lens_cfl({eff1, state.fd_m});
        double t = (lfl_q - cols.lfl[j0]) / (cols.lfl[j1] - cols.lfl[j0]);
        cfl_mm = (1.0 - t) * c0 + t * c1;
    }
    ExtrapolatedCfl out;
    out.fx = cfl_mm / table.sensor.pixel_width_mm();
    out.fy = cfl_mm / table.sensor.pixel_height_mm();
    return out;
}

namespace {

// Largest in-bounds FD on the vertical line through lfl, i.e. the top of the
// region decomposition there.
double max_inbounds_fd_at(const LutTable& table, double lfl) {
    double best = -std::numeric_limits<double>::infinity();
    for (const LutCell& cell : table.regions.cells) {
        TrapezoidCorners tz = cell_corners(table.entries, cell);
        double eps_l = 1e-9 * (tz.lfl1 - tz.lfl0);
        if (lfl < tz.lfl0 - eps_l || lfl > tz.lfl1 + eps_l) continue;
        double y1 = 0.0, y2 = 0.0;
        edge_heights(tz, std::clamp(lfl, tz.lfl0, tz.lfl1), y1, y2);
        best = std::max(best, y2);
    }
    for (const LutTriangle& t : table.regions.triangles) {
        const LutEntry* v[3] = {&table.entries[(size_t)t.v0], &table.entries[(size_t)t.v1],
                                &table.entries[(size_t)t.v2]};
        for (int e = 0; e < 3; ++e) {
            const LutEntry* p = v[e];
            const LutEntry* q = v[(e + 1) % 3];
            double x0 = p->lfl_mm, x1 = q->lfl_mm;
            if (std::abs(x1 - x0) <= kExactTol) {
                if (std::abs(lfl - x0) <= kExactTol)
                    best = std::max(best, std::max(p->fd_m, q->fd_m));
                continue;
            }
            double t01 = (lfl - x0) / (x1 - x0);
            if (t01 < -1e-9 || t01 > 1.0 + 1e-9) continue;
            best = std::max(best, p->fd_m + t01 * (q->fd_m - p->fd_m));
        }
    }
    if (!std::isfinite(best))
        throw NumericalError("lut query: no region crosses LFL " + fmt_double(lfl) +
                             " mm; cannot snap the focus distance");
    return best;
}

LutQueryResult query_no_extrapolation(const LutTable& table, const LensState& state,
                                      bool* found) {
    *found = true;
    // Exact entry.
    for (const LutEntry& e : table.entries) {
        if (std::abs(e.lfl_mm - state.lfl_mm) <= kExactTol &&
            std::abs(e.fd_m - state.fd_m) <= kExactTol)
            return {e.intrinsics, LutProvenance::exact};
    }
    // Grid cell.
    for (const LutCell& cell : table.regions.cells) {
        TrapezoidCorners tz = cell_corners(table.entries, cell);
        if (!cell_contains(tz, state.lfl_mm, state.fd_m)) continue;
        Intrinsics out = interp_trapezoid(
            tz, table.entries[(size_t)cell.a].intrinsics,
            table.entries[(size_t)cell.b].intrinsics,
            table.entries[(size_t)cell.c].intrinsics,
            table.entries[(size_t)cell.d].intrinsics, state.lfl_mm, state.fd_m);
        return {out, LutProvenance::cell};
    }
    // Delaunay triangle.
    for (const LutTriangle& t : table.regions.triangles) {
        const LutEntry& e0 = table.entries[(size_t)t.v0];
        const LutEntry& e1 = table.entries[(size_t)t.v1];
        const LutEntry& e2 = table.entries[(size_t)t.v2];
        Pt p0{e0.lfl_mm, e0.fd_m}, p1{e1.lfl_mm, e1.fd_m}, p2{e2.lfl_mm, e2.fd_m};
        if (!triangle_contains(p0, p1, p2, {state.lfl_mm, state.fd_m})) continue;
        Intrinsics out =
            interp_triangle(p0.x, p0.y, e0.intrinsics, p1.x, p1.y, e1.intrinsics, p2.x,
                            p2.y, e2.intrinsics, state.lfl_mm, state.fd_m);
        return {out, LutProvenance::triangle};
    }
    *found = false;
    return {};
}

} // namespace

LutQueryResult lut_query(const LutTable& table, const LensState& state) {
    if (table.entries.empty()) throw ValidationError("lut_query: empty table");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, fd_max = -lo;
    for (const LutEntry& e : table.entries) {
        lo = std::min(lo, e.lfl_mm);
        hi = std::max(hi, e.lfl_mm);
        fd_max = std::max(fd_max, e.fd_m);
    }
    if (state.lfl_mm < lo - kExactTol || state.lfl_mm > hi + kExactTol)
        throw ValidationError("lut_query: LFL " + fmt_double(state.lfl_mm) +
                              " mm outside the table range [" + fmt_double(lo) + ", " +
                              fmt_double(hi) + "]");

    bool found = false;
    LutQueryResult res = query_no_extrapolation(table, state, &found);
    if (found) return res;

    if (state.fd_m > fd_max) {
        // Thin-lens extrapolation for the focal lengths; everything else is
        // taken at the nearest in-bounds FD on the same LFL line.
        ExtrapolatedCfl cfl = extrapolate_cfl(table, state);
        double fd_snap = max_inbounds_fd_at(table, state.lfl_mm);
        bool snap_found = false;
        LutQueryResult snap =
            query_no_extrapolation(table, {state.lfl_mm, fd_snap}, &snap_found);
        if (!snap_found)
            throw NumericalError("lut_query: snap point (" + fmt_double(state.lfl_mm) +
                                 ", " + fmt_double(fd_snap) + ") escaped every region");
        LutQueryResult out;
        out.intrinsics = snap.intrinsics;
        out.intrinsics.fx = cfl.fx;
        out.intrinsics.fy = cfl.fy;
        out.provenance = LutProvenance::extrapolated;
        return out;
    }
    throw ValidationError("lut_query: (" + fmt_double(state.lfl_mm) + " mm, " +
                          fmt_double(state.fd_m) +
                          " m) is below or between regions and not extrapolatable");
}

// ---------------------------------------------------------------------------
// Leave-one-out cross-validation.
// ---------------------------------------------------------------------------

std::vector<XvalRow> cross_validate(const LutTable& table) {
    if (table.entries.size() < 4)
        throw ValidationError("cross_validate: need at least 4 entries");
    const auto& entries = table.entries;
    Columns cols = group_columns(entries);

    std::vector<XvalRow> rows;
    rows.reserve(entries.size());
    for (size_t ei = 0; ei < entries.size(); ++ei) {
        const LutEntry& e = entries[ei];
        XvalRow row;
        row.entry = (int)ei;
        row.lfl_mm = e.lfl_mm;
        row.fd_m = e.fd_m;

        // Locate the entry in the column structure.
        size_t j = 0;
        while (cols.lfl[j] != e.lfl_mm) ++j;
        size_t i = 0;
        while (cols.entries[j][i] != (int)ei) ++i;

        // Grid candidates bracketing the entry: the two half-width column
        // pairs and the full-width pair, rows one rank below and above. The
        // least LFL extent wins ("least interpolation over LFL").
        struct Cand {
            size_t jl, jr;
            double span;
        };
        std::vector<Cand> cands;
        auto rank_ok = [&](size_t col, size_t rank) {
            return rank < cols.entries[col].size();
        };
        auto fd_at = [&](size_t col, size_t rank) {
            return entries[(size_t)cols.entries[col][rank]].fd_m;
        };
        if (i >= 1) {
            size_t r_lo = i - 1, r_hi = i + 1;
            auto consider = [&](size_t jl, size_t jr) {
                if (!rank_ok(jl, r_hi) || !rank_ok(jr, r_hi)) return;
                if (!same_row(fd_at(jl, r_lo), fd_at(jr, r_lo), table.row_tolerance))
                    return;
                if (!same_row(fd_at(jl, r_hi), fd_at(jr, r_hi), table.row_tolerance))
                    return;
                TrapezoidCorners tz;
                tz.lfl0 = cols.lfl[jl];
                tz.lfl1 = cols.lfl[jr];
                tz.fd0 = fd_at(jl, r_lo);
                tz.fd1 = fd_at(jl, r_hi);
                tz.fd2 = fd_at(jr, r_hi);
                tz.fd3 = fd_at(jr, r_lo);
                if (!cell_contains(tz, e.lfl_mm, e.fd_m)) return;
                cands.push_back({jl, jr, tz.lfl1 - tz.lfl0});
            };
            if (j >= 1) consider(j - 1, j);
            if (j + 1 < cols.lfl.size()) consider(j, j + 1);
            if (j >= 1 && j + 1 < cols.lfl.size()) consider(j - 1, j + 1);
        }

        Intrinsics est;
        if (!cands.empty()) {
            const Cand* best = &cands[0];
            for (const Cand& c : cands)
                if (c.span < best->span) best = &c;
            size_t r_lo = i - 1, r_hi = i + 1;
            TrapezoidCorners tz;
            tz.lfl0 = cols.lfl[best->jl];
            tz.lfl1 = cols.lfl[best->jr];
            tz.fd0 = fd_at(best->jl, r_lo);
            tz.fd1 = fd_at(best->jl, r_hi);
            tz.fd2 = fd_at(best->jr, r_hi);
            tz.fd3 = fd_at(best->jr, r_lo);
            est = interp_trapezoid(tz,
                                   entries[(size_t)cols.entries[best->jl][r_lo]].intrinsics,
                                   entries[(size_t)cols.entries[best->jl][r_hi]].intrinsics,
                                   entries[(size_t)cols.entries[best->jr][r_hi]].intrinsics,
                                   entries[(size_t)cols.entries[best->jr][r_lo]].intrinsics,
                                   e.lfl_mm, e.fd_m);
            row.method = XvalMethod::grid;
        } else {
            // Delaunay over the remaining entries; interpolate in the
            // triangle containing the withheld point, if any.
            std::vector<LutEntry> rest;
            std::vector<int> back;
            rest.reserve(entries.size() - 1);
            for (size_t k = 0; k < entries.size(); ++k) {
                if (k == ei) continue;
                rest.push_back(entries[k]);
                back.push_back((int)k);
            }
            std::vector<Pt> pts = normalize_points(rest);
            std::vector<LutTriangle> tris = delaunay(pts);
            // Normalize the query with the same transform.
            double lo_l = std::numeric_limits<double>::infinity(), hi_l = -lo_l;
            double lo_f = lo_l, hi_f = -lo_l;
            for (const auto& r : rest) {
                lo_l = std::min(lo_l, r.lfl_mm);
                hi_l = std::max(hi_l, r.lfl_mm);
                lo_f = std::min(lo_f, r.fd_m);
                hi_f = std::max(hi_f, r.fd_m);
            }
            double span_l = hi_l - lo_l > 0 ? hi_l - lo_l : 1.0;
            double span_f = hi_f - lo_f > 0 ? hi_f - lo_f : 1.0;
            Pt q{(e.lfl_mm - lo_l) / span_l, (e.fd_m - lo_f) / span_f};
            bool got = false;
            for (const LutTriangle& t : tris) {
                if (!triangle_contains(pts[(size_t)t.v0], pts[(size_t)t.v1],
                                       pts[(size_t)t.v2], q))
                    continue;
                const LutEntry& r0 = rest[(size_t)t.v0];
                const LutEntry& r1 = rest[(size_t)t.v1];
                const LutEntry& r2 = rest[(size_t)t.v2];
                est = interp_triangle(r0.lfl_mm, r0.fd_m, r0.intrinsics, r1.lfl_mm,
                                      r1.fd_m, r1.intrinsics, r2.lfl_mm, r2.fd_m,
                                      r2.intrinsics, e.lfl_mm, e.fd_m);
                got = true;
                break;
            }
            row.method = got ? XvalMethod::triangle : XvalMethod::none;
        }

        if (row.method != XvalMethod::none) {
            auto pct = [](double est_v, double true_v) {
                return 100.0 * std::abs(est_v - true_v) / std::abs(true_v);
            };
            row.fx_pct = pct(est.fx, e.intrinsics.fx);
            row.fy_pct = pct(est.fy, e.intrinsics.fy);
            row.cx_pct = pct(est.cx, e.intrinsics.cx);
            row.cy_pct = pct(est.cy, e.intrinsics.cy);
            row.cfl_pct = pct(metric_cfl_mm(est, table.sensor),
                              metric_cfl_mm(e.intrinsics, table.sensor));
            row.k1_abs = std::abs(est.k1 - e.intrinsics.k1);
            row.k2_abs = std::abs(est.k2 - e.intrinsics.k2);
            row.p1_abs = std::abs(est.p1 - e.intrinsics.p1);
            row.p2_abs = std::abs(est.p2 - e.intrinsics.p2);
        }
        rows.push_back(row);
    }
    return rows;
}

std::string xval_to_csv(const std::vector<XvalRow>& rows) {
    std::string out =
        "entry,lfl_mm,fd_m,method,fx_pct,fy_pct,cx_pct,cy_pct,cfl_pct,"
        "k1_abs,k2_abs,p1_abs,p2_abs\n";
    for (const XvalRow& r : rows) {
        const char* method = r.method == XvalMethod::grid       ? "grid"
                             : r.method == XvalMethod::triangle ? "triangle"
                                                                : "none";
        out += std::to_string(r.entry) + ',' + fmt_double(r.lfl_mm) + ',' +
               fmt_double(r.fd_m) + ',' + method + ',' + fmt_double(r.fx_pct) + ',' +
               fmt_double(r.fy_pct) + ',' + fmt_double(r.cx_pct) + ',' +
               fmt_double(r.cy_pct) + ',' + fmt_double(r.cfl_pct) + ',' +
               fmt_double(r.k1_abs) + ',' + fmt_double(r.k2_abs) + ',' +
               fmt_double(r.p1_abs) + ',' + fmt_double(r.p2_abs) + '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization.
// ---------------------------------------------------------------------------

std::string lut_to_json(const LutTable& table) {
    Json j;
    j["schema"] = "fluxcal-lut-v1";
    j["lens"] = parse_json(lens_to_json(table.lens), "lens spec");
    j["sensor"] = parse_json(sensor_to_json(table.sensor), "sensor spec");
    j["row_tolerance"] = table.row_tolerance;
    Json arr = Json::array();
    for (const LutEntry& e : table.entries) {
        Json ej;
        ej["lfl_mm"] = e.lfl_mm;
        ej["fd_m"] = e.fd_m;
        ej["source"] = source_name(e.source);
        ej["quality_rms_px"] = e.quality_rms_px;
        ej["intrinsics"] = parse_json(intrinsics_to_json(e.intrinsics), "intrinsics");
        arr.push_back(ej);
    }
    j["entries"] = arr;
    return j.dump(2);
}

LutTable lut_from_json(const std::string& text) {
    Json j = parse_json(text, "lut file");
    const char* where = "lut file";
    if (!j.contains("schema") || j["schema"] != "fluxcal-lut-v1")
        throw ValidationError(std::string(where) + ": unknown schema");
    require_fields(j, {"schema", "lens", "sensor", "row_tolerance", "entries"}, where);

    LensSpec lens = lens_from_json(j["lens"].dump());
    SensorSpec sensor = sensor_from_json(j["sensor"].dump());
    double row_tolerance = json_num(j, "row_tolerance", where);

    std::vector<LutEntry> entries;
    for (const Json& ej : j["entries"]) {
        require_fields(ej, {"lfl_mm", "fd_m", "source", "quality_rms_px", "intrinsics"},
                       "lut entry");
        LutEntry e;
        e.lfl_mm = json_num(ej, "lfl_mm", "lut entry");
        e.fd_m = json_num(ej, "fd_m", "lut entry");
        e.source = source_from_name(ej["source"].get<std::string>());
        e.quality_rms_px = json_num(ej, "quality_rms_px", "lut entry");
        e.intrinsics = intrinsics_from_json(ej["intrinsics"].dump());
        entries.push_back(e);
    }
    return make_lut(lens, sensor, std::move(entries), row_tolerance);
}

} // namespace fluxcal
