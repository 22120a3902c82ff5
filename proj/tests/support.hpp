#pragma once

// Shared helpers for the test suites: a small Adam fitter that trains a
// DeformationField against an analytic displacement target, plus scene and
// camera builders reused across files.

#include <cmath>
#include <functional>
#include <vector>

#include "flowsplat/deformation.hpp"
#include "flowsplat/parallel.hpp"
#include "flowsplat/rng.hpp"
#include "flowsplat/scene.hpp"

namespace flowsplat::testing {

struct FitSample {
    Vector3d x;
    double t;
};

inline std::vector<FitSample> grid_samples(const Vector3d& lo, const Vector3d& hi,
                                           int per_axis, int n_times, double t_max = 1.0) {
    std::vector<FitSample> samples;
    for (int it = 0; it < n_times; ++it) {
        const double t = n_times > 1 ? t_max * it / (n_times - 1) : 0.0;
        for (int ix = 0; ix < per_axis; ++ix)
            for (int iy = 0; iy < per_axis; ++iy)
                for (int iz = 0; iz < per_axis; ++iz) {
                    Vector3d x;
                    x[0] = per_axis > 1 ? lo[0] + (hi[0] - lo[0]) * ix / (per_axis - 1)
                                        : lo[0];
                    x[1] = per_axis > 1 ? lo[1] + (hi[1] - lo[1]) * iy / (per_axis - 1)
                                        : lo[1];
                    x[2] = per_axis > 1 ? lo[2] + (hi[2] - lo[2]) * iz / (per_axis - 1)
                                        : lo[2];
                    samples.push_back({x, t});
                }
    }
    return samples;
}

// Full-batch Adam on an L2 objective against the analytic displacement
// target; returns the final max sample error. Deterministic for a fixed
// field seed and sample list.
inline double fit_field(DeformationField& field, const std::vector<FitSample>& samples,
                        const std::function<Vector3d(const Vector3d&, double)>& target,
                        int max_iters = 4000, double tol = 5e-4, double lr = 2e-3,
                        double weight_decay = 5e-5) {
    const int n_params = field.parameter_count();
    std::vector<double> m(n_params, 0.0), v(n_params, 0.0);
    const int n = static_cast<int>(samples.size());
    constexpr int kChunk = 32;
    const int n_chunks = (n + kChunk - 1) / kChunk;
    std::vector<std::vector<double>> partials(n_chunks);
    double max_err = 0.0;

    for (int iter = 1; iter <= max_iters; ++iter) {
        std::vector<double> errs(n_chunks, 0.0);
        parallel_chunks(n_chunks, [&](int c) {
            partials[c].assign(n_params, 0.0);
            double chunk_err = 0.0;
            for (int i = c * kChunk; i < std::min(n, (c + 1) * kChunk); ++i) {
                const Vector3d want = target(samples[i].x, samples[i].t);
                const Vector3d got = field.displacement(samples[i].x, samples[i].t);
                const Vector3d diff = got - want;
                chunk_err = std::max(chunk_err, diff.cwiseAbs().maxCoeff());
                field.backward(samples[i].x, samples[i].t, 2.0 * diff / n,
                               partials[c].data());
            }
            errs[c] = chunk_err;
        });
        std::vector<double> grad(n_params, 0.0);
        max_err = 0.0;
        for (int c = 0; c < n_chunks; ++c) {
            max_err = std::max(max_err, errs[c]);
            for (int p = 0; p < n_params; ++p) grad[p] += partials[c][p];
        }
        if (max_err < tol) break;

        const double b1 = 1.0 - std::pow(0.9, iter);
        const double b2 = 1.0 - std::pow(0.999, iter);
        for (int p = 0; p < n_params; ++p) {
            m[p] = 0.9 * m[p] + 0.1 * grad[p];
            v[p] = 0.999 * v[p] + 0.001 * grad[p] * grad[p];
            field.weights()[p] -= lr * ((m[p] / b1) / (std::sqrt(v[p] / b2) + 1e-8) +
                                        weight_decay * field.weights()[p]);
        }
    }
    return max_err;
}

inline CameraModel axis_camera(double f = 100.0, double c = 50.0, int size = 100) {
    CameraModel cam;
    cam.K << f, 0, c, 0, f, c, 0, 0, 1;
    cam.width = size;
    cam.height = size;
    return cam;
}

inline DeformationField zero_field() {
    DeformationField field(0);
    std::fill(field.weights().begin(), field.weights().end(), 0.0);
    return field;
}

} // namespace flowsplat::testing

#include "flowsplat/dataset.hpp"
#include "flowsplat/image_io.hpp"
#include "flowsplat/oracle.hpp"
#include "flowsplat/rasterizer.hpp"

namespace flowsplat::testing {

// In-memory equivalent of write_synthetic_dataset + load_dataset (images go
// through the same 8-bit quantization as the PPM files).
inline Dataset synth_dataset_in_memory(const SceneRecipe& recipe) {
    const GeneratedScene gen = make_scene(recipe);
    Dataset ds;
    ds.scene = gen.scene;
    ds.cameras = gen.cameras;
    ds.n_frames = recipe.n_frames;
    ds.motion = gen.spec;
    const int n_cams = static_cast<int>(gen.cameras.size());
    ds.images.resize(n_cams);
    ds.flows.resize(n_cams);
    ds.masks.resize(n_cams);
    for (int c = 0; c < n_cams; ++c) {
        for (int k = 0; k < recipe.n_frames; ++k) {
            ds.images[c].push_back(
                quantize_image(oracle_render(gen.scene, gen.spec, gen.cameras[c], k).color));
            ds.masks[c].push_back(oracle_mask(gen.scene, gen.spec, gen.cameras[c], k));
            if (k < recipe.n_frames - 1)
                ds.flows[c].push_back(oracle_flow(gen.scene, gen.spec, gen.cameras[c], k));
        }
    }
    return ds;
}

} // namespace flowsplat::testing

namespace flowsplat::testing {

struct BrutePixel {
    Vector3d color = Vector3d::Zero();
    Vector2d velocity = Vector2d::Zero();
    double alpha = 0.0;
    double depth_accum = 0.0;
};

// Literal evaluation of the blending sums: every term's transmittance is the
// explicit product over all earlier opacities, recomputed from scratch. Uses
// the same per-Gaussian view data and contribution rules as the renderer so
// the comparison isolates the front-to-back recurrence.
inline BrutePixel brute_force_pixel(const RenderBuffers& buffers, int x, int y) {
    struct Term {
        double alpha;
        Vector3d color;
        Vector2d velocity;
        double depth;
    };
    std::vector<Term> terms;
    for (const GaussianView& gv : buffers.visible) { // already depth sorted
        if (x < gv.x0 || x >= gv.x1 || y < gv.y0 || y >= gv.y1) continue;
        const Vector2d d(x - gv.center_px.x(), y - gv.center_px.y());
        double alpha = gv.opacity * std::exp(-0.5 * d.dot(gv.cov2d_inv * d));
        alpha = std::min(alpha, buffers.options.alpha_clamp);
        if (alpha < buffers.options.alpha_skip) continue;
        terms.push_back({alpha, gv.color, gv.velocity, gv.depth});
    }
    BrutePixel out;
    double t_final = 1.0;
    for (size_t i = 0; i < terms.size(); ++i) {
        double trans = 1.0;
        for (size_t j = 0; j < i; ++j) trans *= 1.0 - terms[j].alpha;
        if (trans < buffers.options.transmittance_min) {
            t_final = trans;
            break;
        }
        out.color += terms[i].alpha * trans * terms[i].color;
        out.velocity += terms[i].alpha * trans * terms[i].velocity;
        out.depth_accum += terms[i].alpha * trans * terms[i].depth;
        out.alpha += terms[i].alpha * trans;
        t_final = trans * (1.0 - terms[i].alpha);
    }
    out.color += t_final * buffers.background;
    return out;
}

} // namespace flowsplat::testing
