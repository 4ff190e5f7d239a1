#include "gsem/field.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Geometry>

#include "gsem/error.hpp"

namespace gsem {

namespace {

constexpr double kShC0 = 0.28209479177387814;
constexpr double kShC1 = 0.4886025119029199;
constexpr double kShC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                            -1.0925484305920792, 0.5462742152960396};
constexpr double kShC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                            0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                            -0.5900435899266435};

}  // namespace

Mat3 rotation_matrix(const Vec4& q_in) {
    const Vec4 q = q_in.normalized();
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

Mat3 build_covariance(const Vec4& rotation, const Vec3& scale) {
    if (!rotation.allFinite() || !scale.allFinite()) {
        throw InvalidPrimitive("build_covariance: non-finite rotation or scale");
    }
    if (rotation.norm() == 0.0) {
        throw InvalidPrimitive("build_covariance: zero quaternion");
    }
    const Mat3 r = rotation_matrix(rotation);
    const Mat3 m = r * scale.asDiagonal();
    Mat3 cov = m * m.transpose();
    // exact symmetry
    cov = 0.5 * (cov + cov.transpose()).eval();
    return cov;
}

Vec3 eval_sh(const ShCoeffs& sh, const Vec3& dir, int degree) {
    if (degree < 0 || degree > kMaxShDegree) {
        throw ShapeError("eval_sh: degree " + std::to_string(degree) + " outside [0, 3]");
    }
    if (sh.cols() != sh_coeff_count(degree)) {
        throw ShapeError("eval_sh: expected " + std::to_string(sh_coeff_count(degree)) +
                         " coefficients per channel, got " + std::to_string(sh.cols()));
    }
    Vec3 rgb = kShC0 * sh.col(0);
    if (degree < 1) return rgb;

    const double x = dir.x(), y = dir.y(), z = dir.z();
    rgb += -kShC1 * y * sh.col(1) + kShC1 * z * sh.col(2) - kShC1 * x * sh.col(3);
    if (degree < 2) return rgb;

    const double xx = x * x, yy = y * y, zz = z * z;
    const double xy = x * y, yz = y * z, xz = x * z;
    rgb += kShC2[0] * xy * sh.col(4) + kShC2[1] * yz * sh.col(5) +
           kShC2[2] * (2.0 * zz - xx - yy) * sh.col(6) + kShC2[3] * xz * sh.col(7) +
           kShC2[4] * (xx - yy) * sh.col(8);
    if (degree < 3) return rgb;

    rgb += kShC3[0] * y * (3.0 * xx - yy) * sh.col(9) + kShC3[1] * xy * z * sh.col(10) +
           kShC3[2] * y * (4.0 * zz - xx - yy) * sh.col(11) +
           kShC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * sh.col(12) +
           kShC3[4] * x * (4.0 * zz - xx - yy) * sh.col(13) + kShC3[5] * z * (xx - yy) * sh.col(14) +
           kShC3[6] * x * (xx - 3.0 * yy) * sh.col(15);
    return rgb;
}

SemanticGaussian make_gaussian(int feat_dim, int sh_degree) {
    SemanticGaussian g;
    g.sh = ShCoeffs::Zero(3, sh_coeff_count(sh_degree));
    g.feat_region = VecX::Zero(feat_dim);
    g.feat_context = VecX::Zero(feat_dim);
    return g;
}

void GaussianField::validate() const {
    if (feat_dim <= 0) throw ShapeError("field: feat_dim must be positive");
    if (sh_degree < 0 || sh_degree > kMaxShDegree) throw ShapeError("field: sh_degree outside [0, 3]");
    const auto coeffs = sh_coeff_count(sh_degree);
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        const auto& g = gaussians[i];
        const auto where = " (gaussian " + std::to_string(i) + ")";
        if (g.feat_region.size() != feat_dim || g.feat_context.size() != feat_dim) {
            throw ShapeError("field: feature length differs from feat_dim" + where);
        }
        if (g.sh.cols() != coeffs) throw ShapeError("field: SH coefficient count mismatch" + where);
        if (!g.point.allFinite() || !g.offset.allFinite() || !g.rotation.allFinite() ||
            !g.scale.allFinite() || !std::isfinite(g.opacity) || !g.sh.allFinite() ||
            !g.feat_region.allFinite() || !g.feat_context.allFinite()) {
            throw InvalidPrimitive("field: non-finite value" + where);
        }
        if (std::abs(g.rotation.norm() - 1.0) > 1e-6) throw InvalidPrimitive("field: rotation not unit" + where);
        if ((g.scale.array() <= 0.0).any()) throw InvalidPrimitive("field: non-positive scale" + where);
        if (g.opacity < 0.0 || g.opacity > 1.0) throw InvalidPrimitive("field: opacity outside [0, 1]" + where);
    }
}

SanitizeReport sanitize(GaussianField& field) {
    SanitizeReport report;
    for (auto& g : field.gaussians) {
        const double n = g.rotation.norm();
        // within-tolerance quaternions are kept as stored so load/save stays bitwise
        if (n > 0.0 && std::abs(n - 1.0) > 1e-6) {
            g.rotation /= n;
            ++report.renormalized_rotations;
        }
        for (int k = 0; k < 3; ++k) {
            if (g.scale[k] < kMinScale) {
                g.scale[k] = kMinScale;
                ++report.clamped_scales;
            }
        }
        if (g.opacity < 0.0 || g.opacity > 1.0) {
            g.opacity = std::clamp(g.opacity, 0.0, 1.0);
            ++report.clamped_opacities;
        }
    }
    return report;
}

void Camera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw UsageError("camera: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw UsageError("camera: image size must be positive");
    if (!(near > 0.0) || !(near < far)) throw UsageError("camera: need 0 < near < far");
    if (!world_to_camera.allFinite()) throw UsageError("camera: non-finite transform");
    const Mat3 r = rotation();
    if (((r * r.transpose()) - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6) {
        throw UsageError("camera: rotation block is not orthonormal");
    }
    const Eigen::RowVector4d last(0.0, 0.0, 0.0, 1.0);
    if (world_to_camera.row(3) != last) throw UsageError("camera: bottom row must be (0, 0, 0, 1)");
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width,
                       int height, double near, double far) {
    const Vec3 forward = (target - eye).normalized();
    const Vec3 right = forward.cross(up).normalized();
    const Vec3 down = forward.cross(right);
    Mat3 r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();

    Camera cam;
    cam.fx = focal;
    cam.fy = focal;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.width = width;
    cam.height = height;
    cam.near = near;
    cam.far = far;
    cam.world_to_camera.setIdentity();
    cam.world_to_camera.topLeftCorner<3, 3>() = r;
    cam.world_to_camera.topRightCorner<3, 1>() = -r * eye;
    return cam;
}

}  // namespace gsem
