#pragma once

#include <cstddef>
#include <cstdint>

namespace fluxcal::kernels {

// Pose + intrinsics flattened for batch kernels. Rotation is row-major,
// camera-from-target; translation in meters; focal/center in pixels.
struct ProjectParams {
    double r[9];
    double t[3];
    double fx, fy, cx, cy;
    double k1, k2, p1, p2;
};

// Depth below this is treated as behind the camera.
inline constexpr double kMinDepth = 1e-9;

// Parameter order of the 14-column Jacobian blocks:
// [fx fy cx cy k1 k2 p1 p2 | wx wy wz tx ty tz] with the rotation update
// applied on the left of the full transform: X' = exp(w) * (R p + t) + dt.
inline constexpr int kNumIntr = 8;
inline constexpr int kNumPose = 6;
inline constexpr int kNumParams = 14;

// Scalar reference projection of one target-frame point. Returns false when
// the point is at or behind the camera plane (u, v undefined in that case).
inline bool project_point(const ProjectParams& P, double px, double py, double pz,
                          double& u, double& v) {
    double X = P.r[0] * px + P.r[1] * py + P.r[2] * pz + P.t[0];
    double Y = P.r[3] * px + P.r[4] * py + P.r[5] * pz + P.t[1];
    double Z = P.r[6] * px + P.r[7] * py + P.r[8] * pz + P.t[2];
    if (!(Z > kMinDepth)) return false;
    double iz = 1.0 / Z;
    double x = X * iz;
    double y = Y * iz;
    double r2 = x * x + y * y;
    double r4 = r2 * r2;
    double g = 1.0 + P.k1 * r2 + P.k2 * r4;
    double a1 = 2.0 * x * y;
    double xd = x * g + P.p1 * a1 + P.p2 * (r2 + 2.0 * x * x);
    double yd = y * g + P.p1 * (r2 + 2.0 * y * y) + P.p2 * a1;
    u = P.fx * xd + P.cx;
    v = P.fy * yd + P.cy;
    return true;
}

// Projection plus the analytic 2x14 Jacobian (rows ju, jv in the parameter
// order above). Returns false behind the camera, leaving outputs undefined.
inline bool project_point_jacobian(const ProjectParams& P, double px, double py,
                                   double pz, double& u, double& v,
                                   double ju[kNumParams], double jv[kNumParams]) {
    double X = P.r[0] * px + P.r[1] * py + P.r[2] * pz + P.t[0];
    double Y = P.r[3] * px + P.r[4] * py + P.r[5] * pz + P.t[1];
    double Z = P.r[6] * px + P.r[7] * py + P.r[8] * pz + P.t[2];
    if (!(Z > kMinDepth)) return false;
    double iz = 1.0 / Z;
    double x = X * iz;
    double y = Y * iz;
    double r2 = x * x + y * y;
    double r4 = r2 * r2;
    double g = 1.0 + P.k1 * r2 + P.k2 * r4;
    double h = P.k1 + 2.0 * P.k2 * r2;
    double a1 = 2.0 * x * y;
    double xd = x * g + P.p1 * a1 + P.p2 * (r2 + 2.0 * x * x);
    double yd = y * g + P.p1 * (r2 + 2.0 * y * y) + P.p2 * a1;
    u = P.fx * xd + P.cx;
    v = P.fy * yd + P.cy;

    // Distorted-from-normalized 2x2 (symmetric off-diagonal).
    double d11 = g + 2.0 * x * x * h + 2.0 * P.p1 * y + 6.0 * P.p2 * x;
    double d12 = a1 * h + 2.0 * P.p1 * x + 2.0 * P.p2 * y;
    double d22 = g + 2.0 * y * y * h + 6.0 * P.p1 * y + 2.0 * P.p2 * x;

    // Intrinsics columns.
    ju[0] = xd;
    ju[1] = 0.0;
    ju[2] = 1.0;
    ju[3] = 0.0;
    ju[4] = P.fx * x * r2;
    ju[5] = P.fx * x * r4;
    ju[6] = P.fx * a1;
    ju[7] = P.fx * (r2 + 2.0 * x * x);
    jv[0] = 0.0;
    jv[1] = yd;
    jv[2] = 0.0;
    jv[3] = 1.0;
    jv[4] = P.fy * y * r2;
    jv[5] = P.fy * y * r4;
    jv[6] = P.fy * (r2 + 2.0 * y * y);
    jv[7] = P.fy * a1;

    // Pixel-from-camera-point rows, then chain through dX/dw = -[X]_x and
    // dX/dt = I for the left-increment pose update.
    double gu0 = P.fx * iz * d11;
    double gu1 = P.fx * iz * d12;
    double gu2 = -P.fx * iz * (d11 * x + d12 * y);
    double gv0 = P.fy * iz * d12;
    double gv1 = P.fy * iz * d22;
    double gv2 = -P.fy * iz * (d12 * x + d22 * y);

    ju[8] = gu2 * Y - gu1 * Z;
    ju[9] = gu0 * Z - gu2 * X;
    ju[10] = gu1 * X - gu0 * Y;
    ju[11] = gu0;
    ju[12] = gu1;
    ju[13] = gu2;
    jv[8] = gv2 * Y - gv1 * Z;
    jv[9] = gv0 * Z - gv2 * X;
    jv[10] = gv1 * X - gv0 * Y;
    jv[11] = gv0;
    jv[12] = gv1;
    jv[13] = gv2;
    return true;
}

} // namespace fluxcal::kernels
