#include "flowsplat/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "flowsplat/error.hpp"
#include "flowsplat/parallel.hpp"

namespace flowsplat {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Walks one pixel's candidates in depth order and reports each surviving
// contribution. Visitor: (entry_index_in_row_list, alpha, transmittance_before).
template <typename Visitor>
void walk_pixel(const RenderBuffers& buffers, const std::vector<int>& row_list,
                double px, double py, Visitor&& visit) {
    const RenderOptions& opts = buffers.options;
    double transmittance = 1.0;
    for (size_t e = 0; e < row_list.size(); ++e) {
        const GaussianView& gv = buffers.visible[row_list[e]];
        if (px < gv.x0 || px >= gv.x1) continue;
        const Vector2d d(px - gv.center_px.x(), py - gv.center_px.y());
        const double expo = -0.5 * d.dot(gv.cov2d_inv * d);
        double alpha = gv.opacity * std::exp(expo);
        if (alpha >= opts.alpha_clamp) alpha = opts.alpha_clamp;
        if (alpha < opts.alpha_skip) continue;
        visit(static_cast<int>(e), alpha, transmittance);
        transmittance *= 1.0 - alpha;
        if (transmittance < opts.transmittance_min) break;
    }
}

// Depth-ordered per-row candidate lists (indices into buffers.visible).
std::vector<std::vector<int>> build_row_lists(const RenderBuffers& buffers) {
    std::vector<std::vector<int>> rows(buffers.color.height());
    for (size_t i = 0; i < buffers.visible.size(); ++i) {
        const GaussianView& gv = buffers.visible[i];
        for (int y = gv.y0; y < gv.y1; ++y) rows[y].push_back(static_cast<int>(i));
    }
    return rows;
}

} // namespace

void SceneGrads::resize(int n_gaussians, int n_field_params) {
    d_mu0.assign(n_gaussians, Vector3d::Zero());
    d_scale.assign(n_gaussians, Vector3d::Zero());
    d_rotation.assign(n_gaussians, Vector4d::Zero());
    d_color.assign(n_gaussians, Vector3d::Zero());
    d_opacity.assign(n_gaussians, 0.0);
    d_field.assign(n_field_params, 0.0);
}

void SceneGrads::set_zero() {
    std::fill(d_mu0.begin(), d_mu0.end(), Vector3d::Zero());
    std::fill(d_scale.begin(), d_scale.end(), Vector3d::Zero());
    std::fill(d_rotation.begin(), d_rotation.end(), Vector4d::Zero());
    std::fill(d_color.begin(), d_color.end(), Vector3d::Zero());
    std::fill(d_opacity.begin(), d_opacity.end(), 0.0);
    std::fill(d_field.begin(), d_field.end(), 0.0);
}

PixelResult composite_pixel(const std::vector<PixelContribution>& contribs,
                            const RenderOptions& opts) {
    PixelResult res;
    for (const auto& c : contribs) {
        if (c.alpha < opts.alpha_skip) continue;
        const double w = c.alpha * res.transmittance;
        res.color += w * c.color;
        res.velocity += w * c.velocity;
        res.depth_accum += w * c.depth;
        res.alpha += w;
        res.transmittance *= 1.0 - c.alpha;
        if (res.transmittance < opts.transmittance_min) break;
    }
    return res;
}

RenderBuffers render_explicit(const CanonicalScene& scene,
                              const std::vector<Vector3d>& positions,
                              const std::vector<std::optional<Vector2d>>& velocities,
                              const CameraModel& cam, const RenderOptions& opts) {
    if (positions.size() != scene.gaussians.size() ||
        velocities.size() != scene.gaussians.size())
        throw ShapeMismatch("render_explicit: positions/velocities size mismatch");

    RenderBuffers buffers;
    buffers.options = opts;
    buffers.background = scene.background;
    buffers.color = ImageRGB(cam.width, cam.height, scene.background);
    buffers.velocity = ImageVec2(cam.width, cam.height, Vector2d::Zero());
    buffers.depth = ImageScalar(cam.width, cam.height, kInf);
    buffers.alpha = ImageScalar(cam.width, cam.height, 0.0);

    for (int i = 0; i < scene.size(); ++i) {
        const auto projected = project_point(cam, positions[i]);
        if (!projected) continue;
        const auto cov = project_covariance(cam, scene.gaussians[i], positions[i]);
        if (!cov) continue;

        GaussianView gv;
        gv.index = i;
        gv.center_px = projected->pixel;
        gv.depth = projected->depth;
        gv.cov2d = *cov;
        gv.cov2d_inv = cov->inverse();
        gv.color = scene.gaussians[i].color;
        gv.opacity = scene.gaussians[i].opacity;
        if (velocities[i]) {
            gv.velocity = *velocities[i];
            gv.velocity_valid = true;
        } else {
            gv.velocity = Vector2d::Zero();
            gv.velocity_valid = false;
        }

        const double rx = opts.cull_sigmas * std::sqrt((*cov)(0, 0));
        const double ry = opts.cull_sigmas * std::sqrt((*cov)(1, 1));
        gv.x0 = std::max(0, static_cast<int>(std::ceil(gv.center_px.x() - rx)));
        gv.x1 = std::min(cam.width, static_cast<int>(std::floor(gv.center_px.x() + rx)) + 1);
        gv.y0 = std::max(0, static_cast<int>(std::ceil(gv.center_px.y() - ry)));
        gv.y1 = std::min(cam.height, static_cast<int>(std::floor(gv.center_px.y() + ry)) + 1);
        if (gv.x0 >= gv.x1 || gv.y0 >= gv.y1) continue;
        buffers.visible.push_back(gv);
    }

    std::sort(buffers.visible.begin(), buffers.visible.end(),
              [](const GaussianView& a, const GaussianView& b) {
                  return a.depth != b.depth ? a.depth < b.depth : a.index < b.index;
              });

    const auto rows = build_row_lists(buffers);
    parallel_for(0, cam.height, [&](int y) {
        const auto& row_list = rows[y];
        for (int x = 0; x < cam.width; ++x) {
            Vector3d color_accum = Vector3d::Zero();
            Vector2d vel_accum = Vector2d::Zero();
            double depth_accum = 0.0;
            double alpha_accum = 0.0;
            double t_final = 1.0;
            walk_pixel(buffers, row_list, x, y, [&](int e, double alpha, double t) {
                const GaussianView& gv = buffers.visible[row_list[e]];
                const double w = alpha * t;
                color_accum += w * gv.color;
                vel_accum += w * gv.velocity;
                depth_accum += w * gv.depth;
                alpha_accum += w;
                t_final = t * (1.0 - alpha);
            });
            buffers.color.at(x, y) = color_accum + t_final * scene.background;
            buffers.velocity.at(x, y) = vel_accum;
            buffers.alpha.at(x, y) = alpha_accum;
            buffers.depth.at(x, y) =
                alpha_accum > 0.0 ? depth_accum / std::max(alpha_accum, 1e-12) : kInf;
        }
    }, 2);

    return buffers;
}

RenderBuffers render(const CanonicalScene& scene, const DeformationField& field,
                     TimeStamp t, TimeStamp velocity_to, const CameraModel& cam,
                     const RenderOptions& opts) {
    const int n = scene.size();
    std::vector<Vector3d> positions(n);
    std::vector<std::optional<Vector2d>> velocities(n);
    parallel_for(0, n, [&](int i) {
        positions[i] = field.deform(scene.gaussians[i].mu0, t.t);
        velocities[i] = std::nullopt;
        const auto p_from = project_point(cam, positions[i]);
        if (!p_from) return;
        const auto p_to =
            project_point(cam, field.deform(scene.gaussians[i].mu0, velocity_to.t));
        if (p_to) velocities[i] = Vector2d(p_to->pixel - p_from->pixel);
    }, 32);
    return render_explicit(scene, positions, velocities, cam, opts);
}

RenderGradients render_backward(const RenderBuffers& buffers,
                                const UpstreamGradients& upstream) {
    const int w = buffers.color.width();
    const int h = buffers.color.height();
    const bool has_color = !upstream.d_color.empty();
    const bool has_vel = !upstream.d_velocity.empty();
    const bool has_alpha = !upstream.d_alpha.empty();
    if (has_color && !upstream.d_color.same_shape(w, h))
        throw ShapeMismatch("render_backward: color gradient shape");
    if (has_vel && !upstream.d_velocity.same_shape(w, h))
        throw ShapeMismatch("render_backward: velocity gradient shape");
    if (has_alpha && !upstream.d_alpha.same_shape(w, h))
        throw ShapeMismatch("render_backward: alpha gradient shape");

    RenderGradients grads;
    grads.per_visible.assign(buffers.visible.size(), GaussianViewGrad{});
    if (buffers.visible.empty()) return grads;

    const auto rows = build_row_lists(buffers);

    // Row-local accumulators (one slot per row-list entry) keep the final
    // reduction order fixed regardless of the worker count.
    std::vector<std::vector<GaussianViewGrad>> row_grads(h);
    for (int y = 0; y < h; ++y) row_grads[y].resize(rows[y].size());

    struct Step {
        int entry;
        double alpha;
        double trans;
    };

    parallel_for(0, h, [&](int y) {
        const auto& row_list = rows[y];
        auto& acc = row_grads[y];
        std::vector<Step> steps;
        for (int x = 0; x < w; ++x) {
            const Vector3d up_c = has_color ? upstream.d_color.at(x, y) : Vector3d::Zero();
            const Vector2d up_v = has_vel ? upstream.d_velocity.at(x, y) : Vector2d::Zero();
            const double up_a = has_alpha ? upstream.d_alpha.at(x, y) : 0.0;
            if (up_c.isZero() && up_v.isZero() && up_a == 0.0) continue;

            steps.clear();
            double t_final = 1.0;
            walk_pixel(buffers, row_list, x, y, [&](int e, double alpha, double t) {
                steps.push_back({e, alpha, t});
                t_final = t * (1.0 - alpha);
            });
            if (steps.empty()) continue;

            // Reverse walk with suffix sums over later contributions.
            Vector3d suffix_c = Vector3d::Zero();
            Vector2d suffix_v = Vector2d::Zero();
            for (int s = static_cast<int>(steps.size()) - 1; s >= 0; --s) {
                const Step& st = steps[s];
                const GaussianView& gv = buffers.visible[row_list[st.entry]];
                GaussianViewGrad& g = acc[st.entry];
                const double weight = st.alpha * st.trans;

                g.d_color += weight * up_c;
                if (gv.velocity_valid) g.d_velocity += weight * up_v;

                const double inv_rest = 1.0 / (1.0 - st.alpha);
                double d_alpha = up_c.dot(st.trans * gv.color - inv_rest * suffix_c) -
                                 up_c.dot(inv_rest * t_final * buffers.background);
                d_alpha += up_v.dot(st.trans * gv.velocity - inv_rest * suffix_v);
                d_alpha += up_a * t_final * inv_rest;

                suffix_c += weight * gv.color;
                suffix_v += weight * gv.velocity;

                // alpha = opacity * exp(expo); clamped contributions carry no
                // gradient through alpha.
                if (st.alpha >= buffers.options.alpha_clamp) continue;
                const Vector2d d(x - gv.center_px.x(), y - gv.center_px.y());
                const Vector2d q = gv.cov2d_inv * d;
                const double expo = -0.5 * d.dot(q);
                const double gweight = std::exp(expo);
                g.d_opacity += d_alpha * gweight;
                const double d_expo = d_alpha * st.alpha;
                g.d_center_px += d_expo * q;
                g.d_cov2d += (0.5 * d_expo) * (q * q.transpose());
            }
        }
    }, 2);

    for (int y = 0; y < h; ++y) {
        const auto& row_list = rows[y];
        for (size_t e = 0; e < row_list.size(); ++e) {
            GaussianViewGrad& dst = grads.per_visible[row_list[e]];
            const GaussianViewGrad& src = row_grads[y][e];
            dst.d_color += src.d_color;
            dst.d_opacity += src.d_opacity;
            dst.d_center_px += src.d_center_px;
            dst.d_cov2d += src.d_cov2d;
            dst.d_velocity += src.d_velocity;
        }
    }
    return grads;
}

namespace {

// d(R(q))/dq_k of the unit-quaternion rotation formula, evaluated at q as
// written (no normalization inside), so gradients match direct perturbation.
void rotation_quaternion_grads(const Vector4d& q, Matrix3d out[4]) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    out[0] << 0, -2 * z, 2 * y,
              2 * z, 0, -2 * x,
              -2 * y, 2 * x, 0;
    out[1] << 0, 2 * y, 2 * z,
              2 * y, -4 * x, -2 * w,
              2 * z, 2 * w, -4 * x;
    out[2] << -4 * y, 2 * x, 2 * w,
              2 * x, 0, 2 * z,
              -2 * w, 2 * z, -4 * y;
    out[3] << -4 * z, -2 * w, 2 * x,
              2 * w, -4 * z, 2 * y,
              2 * x, 2 * y, 0;
}

Eigen::Matrix<double, 2, 3> ewa_jacobian(const CameraModel& cam, const Vector3d& cam_pt) {
    Eigen::Matrix<double, 2, 3> j;
    const double inv_z = 1.0 / cam_pt.z();
    j << cam.fx() * inv_z, 0.0, -cam.fx() * cam_pt.x() * inv_z * inv_z,
         0.0, cam.fy() * inv_z, -cam.fy() * cam_pt.y() * inv_z * inv_z;
    return j;
}

} // namespace

void chain_to_scene(const RenderGradients& grads, const RenderBuffers& buffers,
                    const CanonicalScene& scene, const DeformationField& field,
                    TimeStamp t, TimeStamp velocity_to, const CameraModel& cam,
                    SceneGrads& out) {
    const int n_visible = static_cast<int>(buffers.visible.size());
    if (static_cast<int>(grads.per_visible.size()) != n_visible)
        throw ShapeMismatch("chain_to_scene: gradient/meta size mismatch");
    if (n_visible == 0) return;

    const int n_params = field.parameter_count();
    constexpr int kChunk = 64;
    const int n_chunks = (n_visible + kChunk - 1) / kChunk;

    struct ChunkScratch {
        std::vector<double> field_grad;
    };
    std::vector<ChunkScratch> scratch(n_chunks);

    parallel_chunks(n_chunks, [&](int c) {
        auto& local = scratch[c];
        local.field_grad.assign(n_params, 0.0);
        const int lo = c * kChunk;
        const int hi = std::min(n_visible, lo + kChunk);
        for (int v = lo; v < hi; ++v) {
            const GaussianView& gv = buffers.visible[v];
            const GaussianViewGrad& g = grads.per_visible[v];
            const int gi = gv.index;
            const Gaussian3D& gauss = scene.gaussians[gi];

            out.d_color[gi] += g.d_color;
            out.d_opacity[gi] += g.d_opacity;

            const Vector3d mu_t = field.deform(gauss.mu0, t.t);
            const Vector3d cam_pt = cam.R * mu_t + cam.T;
            const Eigen::Matrix<double, 2, 3> j = ewa_jacobian(cam, cam_pt);
            const Eigen::Matrix<double, 2, 3> u = j * cam.R;

            // projected-center path
            Vector3d d_mu_t = u.transpose() * g.d_center_px;

            // projected-covariance path: Sigma2D = J M J^T + floor, with
            // M = R Sigma3D R^T and J a function of the camera-space point.
            const Matrix3d sigma3d = covariance_of(gauss);
            const Matrix3d m_cam = cam.R * sigma3d * cam.R.transpose();
            if (!g.d_cov2d.isZero()) {
                const double ix = cam_pt.x(), iy = cam_pt.y(), iz = cam_pt.z();
                const double inv_z2 = 1.0 / (iz * iz);
                const double inv_z3 = inv_z2 / iz;
                Eigen::Matrix<double, 2, 3> dj[3];
                dj[0].setZero();
                dj[0](0, 2) = -cam.fx() * inv_z2;
                dj[1].setZero();
                dj[1](1, 2) = -cam.fy() * inv_z2;
                dj[2] << -cam.fx() * inv_z2, 0, 2 * cam.fx() * ix * inv_z3,
                         0, -cam.fy() * inv_z2, 2 * cam.fy() * iy * inv_z3;
                Vector3d d_cam_pt = Vector3d::Zero();
                const Eigen::Matrix<double, 3, 2> mjt = m_cam * j.transpose();
                for (int s = 0; s < 3; ++s) {
                    const Matrix2d d_sigma = dj[s] * mjt + (dj[s] * mjt).transpose();
                    d_cam_pt[s] = (g.d_cov2d.array() * d_sigma.array()).sum();
                }
                d_mu_t += cam.R.transpose() * d_cam_pt;

                // Sigma3D path (scale, rotation)
                const Matrix3d d_sigma3d =
                    u.transpose() * g.d_cov2d * u; // full, not symmetrized
                const Matrix3d rot = quaternion_to_rotation(gauss.rotation);
                const Matrix3d a = rot * gauss.scale.asDiagonal();
                const Matrix3d d_a = (d_sigma3d + d_sigma3d.transpose()) * a;
                for (int k = 0; k < 3; ++k)
                    out.d_scale[gi][k] += d_a.col(k).dot(rot.col(k));
                const Matrix3d d_rot = d_a * gauss.scale.asDiagonal();
                Matrix3d dr_dq[4];
                rotation_quaternion_grads(gauss.rotation, dr_dq);
                for (int k = 0; k < 4; ++k)
                    out.d_rotation[gi][k] += (d_rot.array() * dr_dq[k].array()).sum();
            }

            // velocity path: v = project(mu_to) - project(mu_t)
            if (gv.velocity_valid && !g.d_velocity.isZero()) {
                d_mu_t -= u.transpose() * g.d_velocity;
                const Vector3d mu_to = field.deform(gauss.mu0, velocity_to.t);
                const auto u_to = projection_jacobian(cam, mu_to);
                if (u_to) {
                    const Vector3d d_mu_to = u_to->transpose() * g.d_velocity;
                    const Vector3d dx_to = field.backward(
                        gauss.mu0, velocity_to.t, d_mu_to, local.field_grad.data());
                    out.d_mu0[gi] += d_mu_to + dx_to;
                }
            }

            // mu_t = mu0 + D(mu0, t)
            if (!d_mu_t.isZero()) {
                const Vector3d dx =
                    field.backward(gauss.mu0, t.t, d_mu_t, local.field_grad.data());
                out.d_mu0[gi] += d_mu_t + dx;
            }
        }
    });

    for (int c = 0; c < n_chunks; ++c)
        for (int p = 0; p < n_params; ++p) out.d_field[p] += scratch[c].field_grad[p];
}

} // namespace flowsplat
