#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "flowsplat/dataset.hpp"
#include "flowsplat/error.hpp"
#include "flowsplat/oracle.hpp"
#include "flowsplat/rng.hpp"
#include "support.hpp"

using namespace flowsplat;

namespace {

SceneRecipe tiny_recipe() {
    SceneRecipe recipe;
    recipe.seed = 1;
    recipe.width = 32;
    recipe.height = 32;
    recipe.n_frames = 4;
    recipe.rig.cameras = 1;
    recipe.rig.radius = 3.0;
    recipe.rig.fov_deg = 40.0;
    GroupRecipe g;
    g.name = "solo";
    g.count = 1;
    g.layout = "random";
    g.center = Vector3d::Zero();
    g.size = Vector3d::Zero();
    recipe.groups.push_back(g);
    return recipe;
}

// single moving blob in front of one camera, built directly
struct MovingBlob {
    CanonicalScene scene;
    MotionSpec spec;
    CameraModel cam;
};

MovingBlob make_blob(const Vector3d& velocity, double scale = 0.08,
                     double opacity = 0.9) {
    MovingBlob blob;
    Gaussian3D g;
    g.mu0 = Vector3d(0, 0, 0);
    g.scale = Vector3d(scale, scale, scale);
    g.color = Vector3d(1, 0, 0);
    g.opacity = opacity;
    blob.scene.gaussians.push_back(g);
    MotionGroup group;
    group.motion.type = velocity.isZero() ? Motion::Type::kStatic : Motion::Type::kLinear;
    group.motion.velocity = velocity;
    group.indices = {0};
    blob.spec.groups.push_back(group);
    blob.cam = flowsplat::testing::axis_camera(100, 32, 64);
    blob.cam.T = Vector3d(0, 0, 2); // blob sits at depth 2
    return blob;
}

} // namespace

TEST_CASE("oracle_position closed forms") {
    MotionSpec spec;
    MotionGroup linear;
    linear.motion.type = Motion::Type::kLinear;
    linear.motion.velocity = Vector3d(0.1, 0, 0);
    linear.indices = {0};
    spec.groups.push_back(linear);
    MotionGroup circular;
    circular.motion.type = Motion::Type::kCircular;
    circular.motion.center = Vector3d(1, 0, 0);
    circular.motion.axis = Vector3d(0, 0, 1);
    circular.motion.omega = 2.0 * std::numbers::pi / 16.0;
    circular.indices = {1};
    spec.groups.push_back(circular);
    MotionGroup scaling;
    scaling.motion.type = Motion::Type::kScaling;
    scaling.motion.center = Vector3d::Zero();
    scaling.motion.rate = 0.05;
    scaling.indices = {2};
    spec.groups.push_back(scaling);

    // static default for unlisted indices
    CHECK((oracle_position(spec, 99, Vector3d(1, 2, 3), 7.0) - Vector3d(1, 2, 3)).norm() ==
          0.0);
    // linear: t = 3 frames
    CHECK((oracle_position(spec, 0, Vector3d(0, 1, 0), 3.0) - Vector3d(0.3, 1, 0)).norm() <
          1e-12);
    // circular: one full period returns home
    const Vector3d start(2, 0.5, -0.3);
    CHECK((oracle_position(spec, 1, start, 16.0) - start).norm() < 1e-9);
    // scaling compounds multiplicatively per frame
    const Vector3d p = oracle_position(spec, 2, Vector3d(1, 0, 0), 2.0);
    CHECK(p.x() == doctest::Approx(1.05 * 1.05).epsilon(1e-12));
}

TEST_CASE("make_scene basics and determinism") {
    const SceneRecipe recipe = tiny_recipe();
    const GeneratedScene a = make_scene(recipe);
    CHECK(a.scene.size() == 1);
    CHECK(a.cameras.size() == 1);
    const GeneratedScene b = make_scene(recipe);
    REQUIRE(b.scene.size() == a.scene.size());
    for (int i = 0; i < a.scene.size(); ++i) {
        CHECK((a.scene.gaussians[i].mu0 - b.scene.gaussians[i].mu0).norm() == 0.0);
        CHECK((a.scene.gaussians[i].color - b.scene.gaussians[i].color).norm() == 0.0);
    }

    SceneRecipe empty;
    CHECK_THROWS_AS(make_scene(empty), DataError);
}

TEST_CASE("ring layout stays in the radius band") {
    SceneRecipe recipe = tiny_recipe();
    recipe.groups[0].count = 100;
    recipe.groups[0].layout = "ring";
    recipe.groups[0].center = Vector3d(0.5, 0, 0);
    recipe.groups[0].size = Vector3d(1.0, 0.2, 0.0); // radius 1, band 0.2
    const GeneratedScene gen = make_scene(recipe);
    REQUIRE(gen.scene.size() == 100);
    for (const auto& g : gen.scene.gaussians) {
        const double r = (g.mu0 - Vector3d(0.5, 0, 0)).norm();
        CHECK(r >= 0.9 - 1e-12);
        CHECK(r <= 1.1 + 1e-12);
    }
}

TEST_CASE("oracle_flow static scene is zero and valid") {
    const MovingBlob blob = make_blob(Vector3d::Zero());
    const FlowField flow = oracle_flow(blob.scene, blob.spec, blob.cam, 0);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            CHECK(flow.data.at(x, y).norm() == 0.0);
            CHECK(flow.valid.at(x, y) == 1);
        }
}

TEST_CASE("oracle_flow single mover matches hand projection inside footprint") {
    const MovingBlob blob = make_blob(Vector3d(0.04, 0, 0));
    const FlowField flow = oracle_flow(blob.scene, blob.spec, blob.cam, 2);
    // at depth 2 with fx=100 the hand-projected displacement is 2 px/frame
    const auto center = project_point(blob.cam, oracle_position(blob.spec, 0,
                                                                Vector3d::Zero(), 2.0));
    REQUIRE(center.has_value());
    const int cx = static_cast<int>(std::lround(center->pixel.x()));
    const int cy = static_cast<int>(std::lround(center->pixel.y()));
    int covered = 0;
    for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) {
            const int x = cx + dx, y = cy + dy;
            if (flow.data.at(x, y).norm() == 0.0) continue;
            ++covered;
            CHECK(flow.data.at(x, y).x() == doctest::Approx(2.0).epsilon(1e-9));
            CHECK(flow.data.at(x, y).y() == doctest::Approx(0.0));
        }
    CHECK(covered > 10);
}

TEST_CASE("oracle_flow agrees with per-pixel front recomputation") {
    // two gaussians, the front one slides across: flows and validity must
    // match a from-scratch argmin over covering gaussians at both stamps
    CanonicalScene scene;
    MotionSpec spec;
    Gaussian3D wall;
    wall.mu0 = Vector3d(0, 0, 0.5);
    wall.scale = Vector3d(0.4, 0.4, 0.01);
    wall.color = Vector3d(0, 1, 0);
    wall.opacity = 0.9;
    scene.gaussians.push_back(wall);
    Gaussian3D mover;
    mover.mu0 = Vector3d(-0.3, 0, 0);
    mover.scale = Vector3d(0.06, 0.06, 0.06);
    mover.color = Vector3d(1, 0, 0);
    mover.opacity = 0.9;
    scene.gaussians.push_back(mover);
    MotionGroup still;
    still.indices = {0};
    spec.groups.push_back(still);
    MotionGroup moving;
    moving.motion.type = Motion::Type::kLinear;
    moving.motion.velocity = Vector3d(0.05, 0, 0);
    moving.indices = {1};
    spec.groups.push_back(moving);
    CameraModel cam = flowsplat::testing::axis_camera(100, 32, 64);
    cam.T = Vector3d(0, 0, 2);

    const int frame = 3;
    const FlowField flow = oracle_flow(scene, spec, cam, frame);
    const RenderOptions opts;

    auto front_of = [&](double f, int x, int y) {
        int best = -1;
        double best_depth = std::numeric_limits<double>::infinity();
        for (int i = 0; i < scene.size(); ++i) {
            const Vector3d pos = oracle_position(spec, i, scene.gaussians[i].mu0, f);
            const auto proj = project_point(cam, pos);
            if (!proj) continue;
            const auto cov = project_covariance(cam, scene.gaussians[i], pos);
            const double rx = opts.cull_sigmas * std::sqrt((*cov)(0, 0));
            const double ry = opts.cull_sigmas * std::sqrt((*cov)(1, 1));
            if (x < std::ceil(proj->pixel.x() - rx) ||
                x > std::floor(proj->pixel.x() + rx) ||
                y < std::ceil(proj->pixel.y() - ry) ||
                y > std::floor(proj->pixel.y() + ry))
                continue;
            const Vector2d d(x - proj->pixel.x(), y - proj->pixel.y());
            const Matrix2d inv = cov->inverse();
            const double alpha =
                scene.gaussians[i].opacity * std::exp(-0.5 * d.dot(inv * d));
            if (alpha < opts.alpha_skip) continue;
            if (proj->depth < best_depth) {
                best_depth = proj->depth;
                best = i;
            }
        }
        return best;
    };

    Rng rng(88);
    int invalid_seen = 0;
    for (int trial = 0; trial < 400; ++trial) {
        const int x = static_cast<int>(rng.uniform_index(64));
        const int y = static_cast<int>(rng.uniform_index(64));
        const int now = front_of(frame, x, y);
        const int next = front_of(frame + 1, x, y);
        CHECK((flow.valid.at(x, y) != 0) == (now == next));
        if (now != next) ++invalid_seen;
        if (now >= 0) {
            const Vector2d expected =
                project_point(cam, oracle_position(spec, now, scene.gaussians[now].mu0,
                                                   frame + 1))
                    ->pixel -
                project_point(cam, oracle_position(spec, now, scene.gaussians[now].mu0,
                                                   frame))
                    ->pixel;
            CHECK((flow.data.at(x, y) - expected).norm() < 1e-12);
        }
    }
    CHECK(invalid_seen > 0); // the mover's edges must flip identities
}

TEST_CASE("oracle_flow chaining consistency under circular motion") {
    CanonicalScene scene;
    Gaussian3D g;
    g.mu0 = Vector3d(0.25, 0, 0);
    g.scale = Vector3d(0.3, 0.3, 0.3);
    g.opacity = 0.95;
    scene.gaussians.push_back(g);
    MotionSpec spec;
    MotionGroup group;
    group.motion.type = Motion::Type::kCircular;
    group.motion.center = Vector3d::Zero();
    group.motion.axis = Vector3d(0, 0, 1);
    group.motion.omega = 0.02;
    group.indices = {0};
    spec.groups.push_back(group);
    CameraModel cam = flowsplat::testing::axis_camera(100, 32, 64);
    cam.T = Vector3d(0, 0, 2);

    const int k = 3;
    std::vector<FlowField> flows;
    for (int f = 0; f < k; ++f) flows.push_back(oracle_flow(scene, spec, cam, f));

    Rng rng(5);
    int checked = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const int x = static_cast<int>(rng.uniform_index(64));
        const int y = static_cast<int>(rng.uniform_index(64));
        if (flows[0].data.at(x, y).norm() == 0.0) continue;
        // chain: follow the flow with bilinear lookups
        Vector2d pos(x, y);
        bool ok = true;
        for (int f = 0; f < k; ++f) {
            // the bilinear support must be fully covered and valid, else the
            // sample mixes in zero-flow background pixels
            const int x0 = static_cast<int>(std::floor(pos.x()));
            const int y0 = static_cast<int>(std::floor(pos.y()));
            if (x0 < 0 || y0 < 0 || x0 + 1 > 63 || y0 + 1 > 63) {
                ok = false;
                break;
            }
            for (int dy = 0; dy <= 1 && ok; ++dy)
                for (int dx = 0; dx <= 1 && ok; ++dx)
                    if (!flows[f].valid.at(x0 + dx, y0 + dy) ||
                        flows[f].data.at(x0 + dx, y0 + dy).norm() == 0.0)
                        ok = false;
            if (!ok) break;
            bool oob = false;
            pos += bilinear_sample(flows[f].data, pos.x(), pos.y(), &oob);
            if (oob) ok = false;
        }
        if (!ok) continue;
        // direct displacement of the front surface from frame 0 to k
        const Vector2d direct =
            project_point(cam, oracle_position(spec, 0, g.mu0, k))->pixel -
            project_point(cam, oracle_position(spec, 0, g.mu0, 0))->pixel;
        CHECK((pos - Vector2d(x, y) - direct).norm() < 1e-5);
        ++checked;
    }
    CHECK(checked > 20);
}

TEST_CASE("oracle_mask footprint and union identity") {
    const MovingBlob still = make_blob(Vector3d::Zero());
    const DynamicMask none = oracle_mask(still.scene, still.spec, still.cam, 0);
    for (auto v : none.mask.data()) CHECK(v == 0);

    const MovingBlob mover = make_blob(Vector3d(0.04, 0, 0));
    const DynamicMask mask = oracle_mask(mover.scene, mover.spec, mover.cam, 1);
    // mask equals the frontmost 3-sigma footprint of the only gaussian
    const RenderBuffers ref = oracle_render(mover.scene, mover.spec, mover.cam, 1);
    REQUIRE(ref.visible.size() == 1);
    const GaussianView& gv = ref.visible[0];
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            bool inside = x >= gv.x0 && x < gv.x1 && y >= gv.y0 && y < gv.y1;
            if (inside) {
                const Vector2d d(x - gv.center_px.x(), y - gv.center_px.y());
                const double alpha =
                    gv.opacity * std::exp(-0.5 * d.dot(gv.cov2d_inv * d));
                inside = alpha >= ref.options.alpha_skip;
            }
            CHECK((mask.mask.at(x, y) != 0) == inside);
        }

    // two groups: union of single-group masks equals the combined mask
    CanonicalScene scene;
    for (int i = 0; i < 2; ++i) {
        Gaussian3D g;
        g.mu0 = Vector3d(i == 0 ? -0.3 : 0.3, 0, 0);
        g.scale = Vector3d(0.08, 0.08, 0.08);
        g.opacity = 0.9;
        scene.gaussians.push_back(g);
    }
    CameraModel cam = flowsplat::testing::axis_camera(100, 32, 64);
    cam.T = Vector3d(0, 0, 2);
    auto spec_with = [&](bool a_moves, bool b_moves) {
        MotionSpec spec;
        MotionGroup ga, gb;
        ga.indices = {0};
        gb.indices = {1};
        if (a_moves) {
            ga.motion.type = Motion::Type::kLinear;
            ga.motion.velocity = Vector3d(0.01, 0, 0);
        }
        if (b_moves) {
            gb.motion.type = Motion::Type::kLinear;
            gb.motion.velocity = Vector3d(0, 0.01, 0);
        }
        spec.groups = {ga, gb};
        return spec;
    };
    const DynamicMask only_a = oracle_mask(scene, spec_with(true, false), cam, 0);
    const DynamicMask only_b = oracle_mask(scene, spec_with(false, true), cam, 0);
    const DynamicMask both = oracle_mask(scene, spec_with(true, true), cam, 0);
    for (size_t i = 0; i < both.mask.data().size(); ++i)
        CHECK((both.mask.data()[i] != 0) ==
              (only_a.mask.data()[i] != 0 || only_b.mask.data()[i] != 0));
}

TEST_CASE("perfect renders and backward flow give zero warp loss") {
    // a wall larger than the view moving at exactly one pixel per frame:
    // integer displacement keeps bilinear sampling exact
    CanonicalScene scene;
    scene.background = Vector3d(0.05, 0.05, 0.1);
    Rng rng(17);
    for (int ix = -8; ix <= 8; ++ix)
        for (int iy = -8; iy <= 8; ++iy) {
            Gaussian3D g;
            g.mu0 = Vector3d(0.125 * ix, 0.125 * iy, 0);
            g.scale = Vector3d(0.06, 0.06, 0.02);
            g.color = Vector3d(rng.uniform(), rng.uniform(), rng.uniform());
            g.opacity = 0.9;
            scene.gaussians.push_back(g);
        }
    MotionSpec spec;
    MotionGroup group;
    group.motion.type = Motion::Type::kLinear;
    group.motion.velocity = Vector3d(2.0 / 100.0, 0, 0); // 1 px/frame at fx=100? depth 2 => 0.02*100/2 = 1px
    for (int i = 0; i < static_cast<int>(scene.gaussians.size()); ++i)
        group.indices.push_back(i);
    spec.groups.push_back(group);
    CameraModel cam = flowsplat::testing::axis_camera(100, 16, 32);
    cam.T = Vector3d(0, 0, 2);

    const int frame = 1;
    const RenderBuffers at_t = oracle_render(scene, spec, cam, frame);
    const RenderBuffers at_next = oracle_render(scene, spec, cam, frame + 1);

    // backward velocity on the next frame's grid: front surface displacement
    // toward t is exactly -flow for uniform motion
    const FlowField fwd = oracle_flow(scene, spec, cam, frame);
    ImageVec2 back(32, 32);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) back.at(x, y) = -fwd.data.at(x, y);

    const auto [loss, map] = loss_warp(at_t.color, back, at_next.color);
    CHECK(loss < 1e-3);
}

TEST_CASE("dataset export and reload round trip") {
    namespace fs = std::filesystem;
    SceneRecipe recipe = tiny_recipe();
    recipe.groups[0].count = 5;
    recipe.groups[0].size = Vector3d(0.4, 0.4, 0.2);
    recipe.groups[0].motion.type = Motion::Type::kLinear;
    recipe.groups[0].motion.velocity = Vector3d(0.02, 0, 0);
    recipe.rig.cameras = 2;
    const std::string dir = (fs::temp_directory_path() / "flowsplat_ds_test").string();
    fs::remove_all(dir);
    write_synthetic_dataset(recipe, dir);

    const Dataset ds = load_dataset(dir);
    CHECK(ds.n_frames == 4);
    CHECK(ds.cameras.size() == 2);
    CHECK(ds.scene.size() == 5);
    REQUIRE(ds.motion.has_value());
    CHECK(ds.motion->groups.size() == 1);
    CHECK(ds.images[0].size() == 4);
    CHECK(ds.flows[0].size() == 3);
    CHECK(ds.masks[1].size() == 4);

    // mask pixels reload exactly; flow reload matches to float32 precision
    const GeneratedScene gen = make_scene(recipe);
    const DynamicMask mask = oracle_mask(gen.scene, gen.spec, gen.cameras[1], 2);
    for (size_t i = 0; i < mask.mask.data().size(); ++i)
        CHECK(ds.masks[1][2].mask.data()[i] == mask.mask.data()[i]);
    const FlowField flow = oracle_flow(gen.scene, gen.spec, gen.cameras[0], 1);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            CHECK(ds.flows[0][1].valid.at(x, y) == flow.valid.at(x, y));
            if (flow.valid.at(x, y))
                CHECK((ds.flows[0][1].data.at(x, y) - flow.data.at(x, y)).norm() < 1e-6);
        }
    fs::remove_all(dir);
}
