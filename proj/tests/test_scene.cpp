#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "flowsplat/error.hpp"
#include "flowsplat/rng.hpp"
#include "flowsplat/scene.hpp"

using namespace flowsplat;

namespace {

CameraModel simple_camera(double f = 100.0, double c = 50.0, int size = 100) {
    CameraModel cam;
    cam.K << f, 0, c, 0, f, c, 0, 0, 1;
    cam.width = size;
    cam.height = size;
    return cam;
}

Gaussian3D make_gaussian(const Vector3d& scale, const Vector4d& q) {
    Gaussian3D g;
    g.scale = scale;
    g.rotation = q.normalized();
    return g;
}

} // namespace

TEST_CASE("covariance_of identity rotation unit scale") {
    const Gaussian3D g = make_gaussian(Vector3d(1, 1, 1), Vector4d(1, 0, 0, 0));
    CHECK((covariance_of(g) - Matrix3d::Identity()).norm() == doctest::Approx(0.0));
}

TEST_CASE("covariance_of axis-aligned scaling") {
    const Gaussian3D g = make_gaussian(Vector3d(2, 1, 1), Vector4d(1, 0, 0, 0));
    Matrix3d expected = Vector3d(4, 1, 1).asDiagonal();
    CHECK((covariance_of(g) - expected).norm() < 1e-12);
}

TEST_CASE("covariance_of rotated 90 degrees about z") {
    const double s = std::sqrt(0.5);
    const Gaussian3D g = make_gaussian(Vector3d(2, 1, 1), Vector4d(s, 0, 0, s));
    // hand multiplication of R S S^T R^T with R = rot_z(90deg)
    Matrix3d r;
    r << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    const Matrix3d expected = r * Vector3d(4, 1, 1).asDiagonal() * r.transpose();
    CHECK((covariance_of(g) - expected).norm() < 1e-9);
    CHECK((covariance_of(g) - Matrix3d(Vector3d(1, 4, 1).asDiagonal())).norm() < 1e-9);
}

TEST_CASE("covariance_of invariant under quaternion sign flip") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        const Vector3d scale(rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0),
                             rng.uniform(0.1, 2.0));
        const Gaussian3D a = make_gaussian(scale, q);
        const Gaussian3D b = make_gaussian(scale, Vector4d(-q));
        CHECK((covariance_of(a) - covariance_of(b)).norm() < 1e-12);
    }
}

TEST_CASE("covariance_of is SPD with squared-scale eigenvalues") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        Vector3d scale(rng.uniform(0.1, 3.0), rng.uniform(0.1, 3.0),
                       rng.uniform(0.1, 3.0));
        const Matrix3d cov = covariance_of(make_gaussian(scale, q));
        CHECK((cov - cov.transpose()).norm() < 1e-12);
        Eigen::SelfAdjointEigenSolver<Matrix3d> eig(cov);
        Vector3d expected = scale.cwiseProduct(scale);
        std::sort(expected.data(), expected.data() + 3);
        CHECK((eig.eigenvalues() - expected).norm() < 1e-9);
    }
}

TEST_CASE("project_point principal point and hand-evaluated case") {
    const CameraModel cam = simple_camera();
    const auto on_axis = project_point(cam, Vector3d(0, 0, 2.5));
    REQUIRE(on_axis.has_value());
    CHECK(on_axis->pixel.x() == doctest::Approx(50.0));
    CHECK(on_axis->pixel.y() == doctest::Approx(50.0));
    CHECK(on_axis->depth == doctest::Approx(2.5));

    const auto p = project_point(cam, Vector3d(0.1, 0, 1));
    REQUIRE(p.has_value());
    CHECK(p->pixel.x() == doctest::Approx(60.0));
    CHECK(p->pixel.y() == doctest::Approx(50.0));
    CHECK(p->depth == doctest::Approx(1.0));
}

TEST_CASE("project_point behind camera") {
    const CameraModel cam = simple_camera();
    CHECK(!project_point(cam, Vector3d(0.2, 0.1, 0.0)).has_value());
    CHECK(!project_point(cam, Vector3d(0, 0, -1.0)).has_value());
    CHECK(!project_point(cam, Vector3d(0, 0, kZNear)).has_value());
}

TEST_CASE("project_covariance matches finite-difference Jacobian oracle") {
    const CameraModel cam = simple_camera();
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        Gaussian3D g = make_gaussian(
            Vector3d(rng.uniform(0.02, 0.2), rng.uniform(0.02, 0.2),
                     rng.uniform(0.02, 0.2)),
            Vector4d(rng.normal(), rng.normal(), rng.normal(), rng.normal()));
        const Vector3d mu(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                          rng.uniform(1.0, 3.0));
        const auto cov = project_covariance(cam, g, mu);
        REQUIRE(cov.has_value());

        // independent oracle: numeric Jacobian of the projection chain
        const double delta = 1e-6;
        Eigen::Matrix<double, 2, 3> j_fd;
        for (int axis = 0; axis < 3; ++axis) {
            Vector3d hi = mu, lo = mu;
            hi[axis] += delta;
            lo[axis] -= delta;
            j_fd.col(axis) =
                (project_point(cam, hi)->pixel - project_point(cam, lo)->pixel) /
                (2 * delta);
        }
        const Matrix2d expected =
            j_fd * covariance_of(g) * j_fd.transpose() + kBlurFloor * Matrix2d::Identity();
        CHECK((*cov - expected).norm() < 1e-4 * expected.norm());
    }
}

TEST_CASE("project_covariance on-axis isotropic approximation") {
    const CameraModel cam = simple_camera();
    Gaussian3D g = make_gaussian(Vector3d(0.05, 0.05, 0.05), Vector4d(1, 0, 0, 0));
    const double d = 2.0;
    const auto cov = project_covariance(cam, g, Vector3d(0, 0, d));
    REQUIRE(cov.has_value());
    const double expected = std::pow(100.0 * 0.05 / d, 2);
    CHECK((*cov)(0, 0) == doctest::Approx(expected + kBlurFloor).epsilon(1e-9));
    CHECK((*cov)(1, 1) == doctest::Approx(expected + kBlurFloor).epsilon(1e-9));
    CHECK(std::abs((*cov)(0, 1)) < 1e-12);
}

TEST_CASE("project_covariance perspective scaling law") {
    const CameraModel cam = simple_camera();
    Gaussian3D g = make_gaussian(Vector3d(0.08, 0.08, 0.08), Vector4d(1, 0, 0, 0));
    const Matrix2d near_cov = *project_covariance(cam, g, Vector3d(0, 0, 1.0));
    const Matrix2d far_cov = *project_covariance(cam, g, Vector3d(0, 0, 2.0));
    const Matrix2d near_raw = near_cov - kBlurFloor * Matrix2d::Identity();
    const Matrix2d far_raw = far_cov - kBlurFloor * Matrix2d::Identity();
    CHECK((far_raw - 0.25 * near_raw).norm() < 1e-9 * near_raw.norm());
}

TEST_CASE("project_covariance blur floor on degenerate gaussian") {
    const CameraModel cam = simple_camera();
    // pancake seen edge-on: nearly zero thickness along x
    Gaussian3D g = make_gaussian(Vector3d(1e-9, 0.2, 0.2), Vector4d(1, 0, 0, 0));
    const auto cov = project_covariance(cam, g, Vector3d(0, 0, 2.0));
    REQUIRE(cov.has_value());
    Eigen::SelfAdjointEigenSolver<Matrix2d> eig(*cov);
    CHECK(eig.eigenvalues().minCoeff() == doctest::Approx(kBlurFloor).epsilon(1e-6));
}

TEST_CASE("project_covariance eigenvalues never below the floor") {
    Rng rng(19);
    const CameraModel cam = simple_camera();
    for (int trial = 0; trial < 100; ++trial) {
        Gaussian3D g = make_gaussian(
            Vector3d(rng.uniform(1e-6, 0.5), rng.uniform(1e-6, 0.5),
                     rng.uniform(1e-6, 0.5)),
            Vector4d(rng.normal(), rng.normal(), rng.normal(), rng.normal()));
        const Vector3d mu(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 5));
        const auto cov = project_covariance(cam, g, mu);
        REQUIRE(cov.has_value());
        CHECK((*cov)(0, 1) == doctest::Approx((*cov)(1, 0)));
        Eigen::SelfAdjointEigenSolver<Matrix2d> eig(*cov);
        CHECK(eig.eigenvalues().minCoeff() >= kBlurFloor - 1e-9);
    }
}

TEST_CASE("unproject_pixel basics and inverse of the hand case") {
    const CameraModel cam = simple_camera();
    CHECK((unproject_pixel(cam, Vector2d(50, 50), 2.0) - Vector3d(0, 0, 2)).norm() <
          1e-12);
    CHECK((unproject_pixel(cam, Vector2d(60, 50), 1.0) - Vector3d(0.1, 0, 1)).norm() <
          1e-12);
    CHECK_THROWS_AS(unproject_pixel(cam, Vector2d(10, 10), 0.0), NonPositiveDepth);
    CHECK_THROWS_AS(unproject_pixel(cam, Vector2d(10, 10), -1.0), NonPositiveDepth);
}

TEST_CASE("projection round trip identity over depth range") {
    Rng rng(23);
    CameraModel cam = simple_camera(120.0, 32.0, 64);
    // nontrivial pose
    const Vector4d q = Vector4d(0.9, 0.1, -0.2, 0.15).normalized();
    cam.R = quaternion_to_rotation(q);
    cam.T = Vector3d(0.3, -0.2, 0.5);
    for (int trial = 0; trial < 200; ++trial) {
        const double z = std::exp(rng.uniform(std::log(kZNear * 1.5), std::log(1e6)));
        const Vector2d px(rng.uniform(0, 63), rng.uniform(0, 63));
        const Vector3d world = unproject_pixel(cam, px, z);
        const auto reproj = project_point(cam, world);
        REQUIRE(reproj.has_value());
        CHECK((reproj->pixel - px).norm() < 1e-9 * std::max(1.0, px.norm()));
        CHECK(reproj->depth == doctest::Approx(z).epsilon(1e-9));
    }
}

TEST_CASE("scene and camera json round trip") {
    CanonicalScene scene;
    scene.background = Vector3d(0.1, 0.2, 0.3);
    Rng rng(5);
    for (int i = 0; i < 4; ++i) {
        Gaussian3D g;
        g.mu0 = Vector3d(rng.normal(), rng.normal(), rng.normal());
        g.scale = Vector3d(rng.uniform(0.01, 1), rng.uniform(0.01, 1), rng.uniform(0.01, 1));
        g.rotation =
            Vector4d(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized();
        g.color = Vector3d(rng.uniform(), rng.uniform(), rng.uniform());
        g.opacity = rng.uniform();
        scene.gaussians.push_back(g);
    }
    const std::string text = scene_to_json(scene);
    const CanonicalScene loaded = scene_from_json(text);
    REQUIRE(loaded.size() == scene.size());
    for (int i = 0; i < scene.size(); ++i) {
        CHECK((loaded.gaussians[i].mu0 - scene.gaussians[i].mu0).norm() == 0.0);
        CHECK((loaded.gaussians[i].rotation - scene.gaussians[i].rotation).norm() == 0.0);
        CHECK(loaded.gaussians[i].opacity == scene.gaussians[i].opacity);
    }
    // exact double round trip makes re-serialization byte-identical
    CHECK(scene_to_json(loaded) == text);

    std::vector<CameraModel> cams{simple_camera(), simple_camera(80, 32, 64)};
    cams[1].R = quaternion_to_rotation(Vector4d(0.8, 0.1, 0.5, -0.2).normalized());
    cams[1].T = Vector3d(1, 2, 3);
    const std::string cam_text = cameras_to_json(cams);
    const auto loaded_cams = cameras_from_json(cam_text);
    REQUIRE(loaded_cams.size() == 2);
    CHECK((loaded_cams[1].R - cams[1].R).norm() == 0.0);
    CHECK(cameras_to_json(loaded_cams) == cam_text);
}
