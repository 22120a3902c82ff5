#include <doctest.h>

#include <cmath>

#include "flowsplat/error.hpp"
#include "flowsplat/losses.hpp"
#include "flowsplat/scene.hpp"
#include "flowsplat/rng.hpp"

using namespace flowsplat;

namespace {

ImageRGB random_image(int w, int h, uint64_t seed) {
    Rng rng(seed);
    ImageRGB img(w, h);
    for (auto& px : img.data())
        px = Eigen::Vector3d(rng.uniform(), rng.uniform(), rng.uniform());
    return img;
}

ImageVec2 random_flow(int w, int h, uint64_t seed, double mag = 2.0) {
    Rng rng(seed);
    ImageVec2 flow(w, h);
    for (auto& px : flow.data())
        px = Eigen::Vector2d(rng.uniform(-mag, mag), rng.uniform(-mag, mag));
    return flow;
}

} // namespace

TEST_CASE("loss_photometric basics") {
    const ImageRGB a = random_image(8, 6, 1);
    CHECK(loss_photometric(a, a) == 0.0);

    ImageRGB b = a;
    for (auto& px : b.data()) px.array() += 0.1;
    CHECK(loss_photometric(b, a) == doctest::Approx(0.1).epsilon(1e-12));

    // brute-force recomputation on a random pair
    const ImageRGB c = random_image(8, 6, 2);
    double sum = 0.0;
    for (size_t i = 0; i < a.data().size(); ++i)
        for (int ch = 0; ch < 3; ++ch) sum += std::abs(a.data()[i][ch] - c.data()[i][ch]);
    CHECK(loss_photometric(a, c) == doctest::Approx(sum / (8 * 6 * 3)).epsilon(1e-12));

    ImageRGB wrong(4, 4);
    CHECK_THROWS_AS(loss_photometric(a, wrong), ShapeMismatch);
}

TEST_CASE("loss_win hand mean and vacuous mask") {
    const int w = 5, h = 4;
    std::vector<ImageVec2> rendered(2, ImageVec2(w, h, Vector2d::Zero()));
    std::vector<FlowField> truth;
    truth.emplace_back(ImageVec2(w, h, Vector2d(3.0, 4.0)));
    truth.emplace_back(ImageVec2(w, h, Vector2d(3.0, 4.0)));

    auto [loss, map] = loss_win(rendered, truth, 2);
    CHECK(loss == doctest::Approx(3.5).epsilon(1e-12)); // mean of |3| and |4|
    CHECK(map.at(2, 2) == doctest::Approx(3.5).epsilon(1e-12));

    // identical flows give zero
    std::vector<ImageVec2> perfect{truth[0].data, truth[1].data};
    CHECK(loss_win(perfect, truth, 2).first == 0.0);

    // all-invalid: zero loss, zero map (empty mean defined as 0)
    truth[0].valid.fill(0);
    truth[1].valid.fill(0);
    auto [vac, vac_map] = loss_win(rendered, truth, 2);
    CHECK(vac == 0.0);
    for (double v : vac_map.data()) CHECK(v == 0.0);

    CHECK_THROWS_AS(loss_win(rendered, truth, 3), WindowLengthMismatch);
}

TEST_CASE("loss_win equals the mean of single-frame losses") {
    const int w = 7, h = 5, tau = 4;
    std::vector<ImageVec2> rendered;
    std::vector<FlowField> truth;
    Rng rng(33);
    for (int k = 0; k < tau; ++k) {
        rendered.push_back(random_flow(w, h, 100 + k));
        FlowField f(random_flow(w, h, 200 + k));
        for (auto& v : f.valid.data()) v = rng.uniform() < 0.7 ? 1 : 0;
        truth.push_back(f);
    }
    const double whole = loss_win(rendered, truth, tau).first;
    double mean = 0.0;
    for (int k = 0; k < tau; ++k)
        mean += loss_win({rendered[k]}, {truth[k]}, 1).first;
    CHECK(whole == doctest::Approx(mean / tau).epsilon(1e-12));
}

TEST_CASE("loss_win ignores invalid pixels entirely") {
    const int w = 6, h = 6;
    std::vector<ImageVec2> rendered{random_flow(w, h, 5)};
    FlowField truth(random_flow(w, h, 6));
    Rng rng(7);
    for (auto& v : truth.valid.data()) v = rng.uniform() < 0.5 ? 1 : 0;
    const double before = loss_win(rendered, {truth}, 1).first;
    FlowField tampered = truth;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (!tampered.valid.at(x, y)) tampered.data.at(x, y) = Vector2d(99, -99);
    CHECK(loss_win(rendered, {tampered}, 1).first == before);
}

TEST_CASE("warp_image identity, shift, and border clamp") {
    const ImageRGB img = random_image(6, 5, 9);
    const ImageVec2 zero(6, 5, Vector2d::Zero());
    ImageBool oob;
    const ImageRGB same = warp_image(img, zero, &oob);
    for (size_t i = 0; i < img.data().size(); ++i)
        CHECK((same.data()[i] - img.data()[i]).norm() == 0.0);
    for (auto v : oob.data()) CHECK(v == 0);

    // vertical step edge on a 4x4 image shifts one pixel left under flow (1,0)
    ImageRGB step(4, 4, Vector3d::Zero());
    for (int y = 0; y < 4; ++y)
        for (int x = 2; x < 4; ++x) step.at(x, y) = Vector3d::Ones();
    const ImageVec2 right(4, 4, Vector2d(1.0, 0.0));
    const ImageRGB shifted = warp_image(step, right, &oob);
    for (int y = 0; y < 4; ++y) {
        CHECK(shifted.at(0, y).x() == 0.0);
        CHECK(shifted.at(1, y).x() == 1.0); // edge moved from x=2 to x=1
        CHECK(shifted.at(2, y).x() == 1.0);
        CHECK(shifted.at(3, y).x() == 1.0); // clamped border sample
        CHECK(oob.at(3, y) == 1);           // sample at x=4 left the image
        CHECK(oob.at(1, y) == 0);
    }
}

TEST_CASE("loss_warp basics") {
    const ImageRGB truth = random_image(8, 8, 11);
    const ImageVec2 zero(8, 8, Vector2d::Zero());

    // static scene, zero velocity, source equals target
    CHECK(loss_warp(truth, zero, truth).first == 0.0);

    // uniform +0.2 offset through the identity warp
    ImageRGB off = truth;
    for (auto& px : off.data()) px.array() += 0.2;
    auto [loss, map] = loss_warp(off, zero, truth);
    CHECK(loss == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(map.at(4, 4) == doctest::Approx(0.2).epsilon(1e-12));

    ImageRGB wrong(4, 4);
    CHECK_THROWS_AS(loss_warp(wrong, zero, truth), ShapeMismatch);
}

TEST_CASE("loss_dyn basics and reduction to photometric") {
    const ImageRGB a = random_image(6, 6, 13);
    const ImageRGB b = random_image(6, 6, 14);
    DynamicMask none{ImageBool(6, 6, 0)};
    CHECK(loss_dyn(a, b, none) == 0.0);

    DynamicMask all{ImageBool(6, 6, 1)};
    CHECK(loss_dyn(a, b, all) == doctest::Approx(loss_photometric(a, b)).epsilon(1e-12));

    // half-frame mask: error 0.2 inside, 0 outside
    ImageRGB c = a;
    DynamicMask half{ImageBool(6, 6, 0)};
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 3; ++x) {
            half.mask.at(x, y) = 1;
            c.at(x, y).array() += 0.2;
        }
    CHECK(loss_dyn(c, a, half) == doctest::Approx(0.2).epsilon(1e-12));

    // invariance to changes outside the mask
    ImageRGB tampered = c;
    for (int y = 0; y < 6; ++y)
        for (int x = 3; x < 6; ++x) tampered.at(x, y) = Vector3d(9, 9, 9);
    CHECK(loss_dyn(tampered, a, half) == loss_dyn(c, a, half));
}

TEST_CASE("loss gradients match finite differences") {
    const int w = 6, h = 5;
    const double delta = 1e-6;
    ImageRGB rendered = random_image(w, h, 21);
    const ImageRGB truth = random_image(w, h, 22);

    SUBCASE("photometric") {
        ImageRGB grad(w, h, Vector3d::Zero());
        loss_photometric_backward(rendered, truth, 1.0, grad);
        for (int i = 0; i < w * h; i += 3)
            for (int ch = 0; ch < 3; ++ch) {
                double& p = rendered.data()[i][ch];
                const double saved = p;
                p = saved + delta;
                const double hi = loss_photometric(rendered, truth);
                p = saved - delta;
                const double lo = loss_photometric(rendered, truth);
                p = saved;
                CHECK(grad.data()[i][ch] ==
                      doctest::Approx((hi - lo) / (2 * delta)).epsilon(1e-4));
            }
    }

    SUBCASE("dyn") {
        DynamicMask mask{ImageBool(w, h, 0)};
        Rng rng(31);
        for (auto& v : mask.mask.data()) v = rng.uniform() < 0.6 ? 1 : 0;
        ImageRGB grad(w, h, Vector3d::Zero());
        loss_dyn_backward(rendered, truth, mask, 1.0, grad);
        for (int i = 0; i < w * h; i += 2) {
            double& p = rendered.data()[i][1];
            const double saved = p;
            p = saved + delta;
            const double hi = loss_dyn(rendered, truth, mask);
            p = saved - delta;
            const double lo = loss_dyn(rendered, truth, mask);
            p = saved;
            CHECK(grad.data()[i][1] ==
                  doctest::Approx((hi - lo) / (2 * delta)).epsilon(1e-4));
        }
    }

    SUBCASE("win") {
        std::vector<ImageVec2> flows{random_flow(w, h, 41), random_flow(w, h, 42)};
        std::vector<FlowField> truths;
        truths.emplace_back(random_flow(w, h, 43));
        truths.emplace_back(random_flow(w, h, 44));
        Rng rng(45);
        for (auto& v : truths[0].valid.data()) v = rng.uniform() < 0.8 ? 1 : 0;
        std::vector<ImageVec2> grads(2, ImageVec2(w, h, Vector2d::Zero()));
        loss_win_backward(flows, truths, 1.0, grads);
        for (int k = 0; k < 2; ++k)
            for (int i = 0; i < w * h; i += 4)
                for (int c = 0; c < 2; ++c) {
                    double& p = flows[k].data()[i][c];
                    const double saved = p;
                    p = saved + delta;
                    const double hi = loss_win(flows, truths, 2).first;
                    p = saved - delta;
                    const double lo = loss_win(flows, truths, 2).first;
                    p = saved;
                    CHECK(grads[k].data()[i][c] ==
                          doctest::Approx((hi - lo) / (2 * delta)).epsilon(1e-4));
                }
    }

    SUBCASE("warp source and flow") {
        ImageRGB src = random_image(w, h, 51);
        // sample strictly inside interior unit cells: bilinear interpolation
        // has derivative kinks on the pixel lattice and at the border clamp
        ImageVec2 flow(w, h);
        Rng rng(52);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double tx =
                    static_cast<double>(rng.uniform_index(w - 2)) + rng.uniform(0.2, 0.8);
                const double ty =
                    static_cast<double>(rng.uniform_index(h - 2)) + rng.uniform(0.2, 0.8);
                flow.at(x, y) = Vector2d(tx - x, ty - y);
            }
        ImageRGB d_src(w, h, Vector3d::Zero());
        ImageVec2 d_flow(w, h, Vector2d::Zero());
        loss_warp_backward(src, flow, truth, 1.0, d_src, d_flow);
        for (int i = 0; i < w * h; i += 3) {
            double& p = src.data()[i][2];
            const double saved = p;
            p = saved + delta;
            const double hi = loss_warp(src, flow, truth).first;
            p = saved - delta;
            const double lo = loss_warp(src, flow, truth).first;
            p = saved;
            CHECK(d_src.data()[i][2] ==
                  doctest::Approx((hi - lo) / (2 * delta)).epsilon(1e-4));
        }
        for (int i = 0; i < w * h; i += 4)
            for (int c = 0; c < 2; ++c) {
                double& p = flow.data()[i][c];
                const double saved = p;
                p = saved + delta;
                const double hi = loss_warp(src, flow, truth).first;
                p = saved - delta;
                const double lo = loss_warp(src, flow, truth).first;
                p = saved;
                CHECK(d_flow.data()[i][c] ==
                      doctest::Approx((hi - lo) / (2 * delta)).epsilon(2e-4));
            }
    }
}
