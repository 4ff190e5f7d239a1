#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace gsem {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// 3 x B spherical-harmonic coefficients, one row per color channel.
using ShCoeffs = Eigen::Matrix<double, 3, Eigen::Dynamic>;

inline constexpr int kMaxShDegree = 3;
inline constexpr double kMinScale = 1e-8;

inline constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// One splat with geometry, color and the two low-dimensional semantic
/// features. Rotation is a unit quaternion stored scalar-first (w, x, y, z).
/// Opacity is post-activation, in [0, 1].
struct SemanticGaussian {
    Vec3 point = Vec3::Zero();
    Vec3 offset = Vec3::Zero();
    Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);
    Vec3 scale = Vec3::Ones();
    double opacity = 1.0;
    ShCoeffs sh;
    VecX feat_region;
    VecX feat_context;
};

/// Rotation matrix of a (w, x, y, z) quaternion. The quaternion is normalized
/// first, so q and -q and any positive multiple give the same matrix.
Mat3 rotation_matrix(const Vec4& q);

/// R(q) diag(s^2) R(q)^T. Throws InvalidPrimitive on non-finite input.
Mat3 build_covariance(const Vec4& rotation, const Vec3& scale);

/// point + offset.
inline Vec3 center(const SemanticGaussian& g) { return g.point + g.offset; }

/// Real SH contraction per color channel, degrees 0..3. Throws ShapeError
/// when the coefficient count does not match the degree.
Vec3 eval_sh(const ShCoeffs& sh, const Vec3& view_dir, int degree);

/// Zero-feature, unit-scale, opaque gaussian with the right coefficient and
/// feature shapes for a field.
SemanticGaussian make_gaussian(int feat_dim, int sh_degree);

struct GaussianField {
    std::vector<SemanticGaussian> gaussians;
    int feat_dim = 16;
    int sh_degree = 0;
    std::map<std::string, std::string> meta;

    std::size_t size() const { return gaussians.size(); }
    bool empty() const { return gaussians.empty(); }

    /// Throws ShapeError / InvalidPrimitive when an invariant is broken.
    void validate() const;
};

/// Counters reported by sanitize().
struct SanitizeReport {
    std::size_t renormalized_rotations = 0;
    std::size_t clamped_scales = 0;
    std::size_t clamped_opacities = 0;
};

/// Renormalizes quaternions, clamps degenerate scales to kMinScale and
/// opacities into [0, 1]. Applied on load.
SanitizeReport sanitize(GaussianField& field);

/// Pinhole camera; pixel (col, row) has coordinates (x, y) = (col, row).
/// world_to_camera is a rigid transform with +z forward, +y down.
struct Camera {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;
    Mat4 world_to_camera = Mat4::Identity();
    double near = 0.01;
    double far = 100.0;

    Mat3 rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
    Vec3 translation() const { return world_to_camera.topRightCorner<3, 1>(); }
    Vec3 position() const { return -rotation().transpose() * translation(); }

    void validate() const;

    static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                          int width, int height, double near = 0.01, double far = 100.0);
};

}  // namespace gsem
