#include "flowsplat/tvr.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <json.hpp>
#include <sstream>

#include "flowsplat/parallel.hpp"

namespace flowsplat {

Matrix3d motion_jacobian(const MotionModel& model, int index, const Vector3d& x,
                         double t, double delta) {
    Matrix3d j;
    for (int axis = 0; axis < 3; ++axis) {
        Vector3d hi = x, lo = x;
        hi[axis] += delta;
        lo[axis] -= delta;
        j.col(axis) = (model.warp(index, hi, t) - model.warp(index, lo, t)) / (2.0 * delta);
    }
    return j;
}

std::optional<Matrix3d> jacobian_f(const MotionModel& model, int index,
                                   const Vector3d& mu0, TimeStamp t_prev, TimeStamp t,
                                   double delta, double cond_max) {
    const Matrix3d j_prev = motion_jacobian(model, index, mu0, t_prev.t, delta);
    const Eigen::JacobiSVD<Matrix3d> svd(j_prev, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const double smin = svd.singularValues().minCoeff();
    const double smax = svd.singularValues().maxCoeff();
    if (smin <= 0.0 || smax / smin > cond_max) return std::nullopt;
    const Matrix3d j_now = motion_jacobian(model, index, mu0, t.t, delta);
    return Matrix3d(j_now * j_prev.inverse());
}

std::optional<Vector2d> observe_h(const Vector3d& x, const MotionModel& model,
                                  int index, const Vector3d& mu0, TimeStamp t,
                                  const CameraModel& cam) {
    const Vector3d step =
        model.warp(index, mu0, t.next().t) - model.warp(index, mu0, t.t);
    const auto from = project_point(cam, x);
    if (!from) return std::nullopt;
    const auto to = project_point(cam, x + step);
    if (!to) return std::nullopt;
    return Vector2d(to->pixel - from->pixel);
}

std::optional<Eigen::Matrix<double, 2, 3>> jacobian_h(const Vector3d& x,
                                                      const MotionModel& model, int index,
                                                      const Vector3d& mu0, TimeStamp t,
                                                      const CameraModel& cam, double delta) {
    Eigen::Matrix<double, 2, 3> j;
    for (int axis = 0; axis < 3; ++axis) {
        Vector3d hi = x, lo = x;
        hi[axis] += delta;
        lo[axis] -= delta;
        const auto a = observe_h(hi, model, index, mu0, t, cam);
        const auto b = observe_h(lo, model, index, mu0, t, cam);
        if (!a || !b) return std::nullopt;
        j.col(axis) = (*a - *b) / (2.0 * delta);
    }
    return j;
}

Matrix3d psd_floor(const Matrix3d& p) {
    const Matrix3d sym = 0.5 * (p + p.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix3d> eig(sym);
    Vector3d vals = eig.eigenvalues().cwiseMax(0.0);
    return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

double min_eigenvalue(const Matrix3d& p) {
    Eigen::SelfAdjointEigenSolver<Matrix3d> eig(0.5 * (p + p.transpose()));
    return eig.eigenvalues().minCoeff();
}

ForecastResult ekf_forecast(const EKFTrack& track, const MotionModel& model, int index,
                            TimeStamp t_prev, TimeStamp t, const EKFOptions& opts) {
    ForecastResult res;
    const Vector3d nominal_prev = model.warp(index, track.mu0, t_prev.t);
    const Vector3d nominal_now = model.warp(index, track.mu0, t.t);
    Matrix3d j_f = Matrix3d::Identity();
    const auto j = jacobian_f(model, index, track.mu0, t_prev, t, opts.fd_delta,
                              opts.cond_max);
    if (j)
        j_f = *j;
    else
        res.identity_fallback = true;
    res.x_f = track.x + (nominal_now - nominal_prev) +
              (j_f - Matrix3d::Identity()) * (track.x - nominal_prev);
    res.p_f = psd_floor(j_f * track.P * j_f.transpose() + opts.noise.process);
    return res;
}

UpdateResult ekf_gain_update(const Vector3d& x_f, const Matrix3d& p_f, const Vector2d& z,
                             const Vector2d& h_val, const Eigen::Matrix<double, 2, 3>& j_h,
                             const Matrix2d& rn) {
    UpdateResult res{x_f, p_f, false};
    const Matrix2d innovation_cov = j_h * p_f * j_h.transpose() + rn;
    const double det = innovation_cov.determinant();
    if (!std::isfinite(det) || std::abs(det) < 1e-300) {
        res.singular_innovation = true;
        return res;
    }
    const Eigen::Matrix<double, 3, 2> gain =
        p_f * j_h.transpose() * innovation_cov.inverse();
    res.x = x_f + gain * (z - h_val);
    res.p = psd_floor((Matrix3d::Identity() - gain * j_h) * p_f);
    return res;
}

FlowSample locate_flow(const FlowField& flow, const Vector2d& p0, const Vector2d& z_accum) {
    FlowSample sample;
    const Vector2d pos = p0 + z_accum;
    sample.z = bilinear_sample(flow.data, pos.x(), pos.y(), &sample.out_of_bounds);
    return sample;
}

std::vector<uint8_t> surface_filter(const std::vector<Vector3d>& positions,
                                    const CameraModel& cam, const ImageScalar& depth_map,
                                    double rel_tol) {
    std::vector<uint8_t> visible(positions.size(), 0);
    for (size_t i = 0; i < positions.size(); ++i) {
        const auto projected = project_point(cam, positions[i]);
        if (!projected) continue;
        const int px = static_cast<int>(std::lround(projected->pixel.x()));
        const int py = static_cast<int>(std::lround(projected->pixel.y()));
        if (px < 0 || px >= depth_map.width() || py < 0 || py >= depth_map.height())
            continue;
        const double rendered = depth_map.at(px, py);
        visible[i] = projected->depth <= rendered * (1.0 + rel_tol) ? 1 : 0;
    }
    return visible;
}

EKFTrack ekf_step(const EKFTrack& track, const MotionModel& model, int index,
                  TimeStamp t_prev, TimeStamp t, const CameraModel& cam,
                  const FlowField& flow, const ImageScalar& depth_map,
                  const EKFOptions& opts, TrackLog* log) {
    EKFTrack next = track;
    const ForecastResult forecast = ekf_forecast(track, model, index, t_prev, t, opts);
    if (forecast.identity_fallback && log) ++log->singular_jacobian;
    next.x = forecast.x_f;
    next.P = forecast.p_f;

    // surface gating against the previous frame, where the flow was observed
    const std::vector<uint8_t> vis =
        surface_filter({track.x}, cam, depth_map, opts.rel_tol);
    next.visible = vis[0] != 0;

    const FlowSample sample = locate_flow(flow, track.p0, track.z_accum);
    if (sample.out_of_bounds && log) ++log->out_of_bounds;
    next.z_accum = track.z_accum + sample.z;

    if (!next.visible) {
        if (log) ++log->skipped_invisible;
        return next;
    }

    const Vector3d nominal_step =
        model.warp(index, track.mu0, t.t) - model.warp(index, track.mu0, t_prev.t);
    const Vector3d x_lin = forecast.x_f - nominal_step;
    const auto h_val = observe_h(x_lin, model, index, track.mu0, t_prev, cam);
    const auto j_h = jacobian_h(x_lin, model, index, track.mu0, t_prev, cam, opts.fd_delta);
    if (!h_val || !j_h) {
        next.visible = false;
        if (log) ++log->behind_camera;
        return next;
    }
    const UpdateResult update = ekf_gain_update(forecast.x_f, forecast.p_f, sample.z,
                                                *h_val, *j_h, opts.noise.observation);
    if (update.singular_innovation) {
        if (log) ++log->singular_innovation;
        return next;
    }
    next.x = update.x;
    next.P = update.p;
    return next;
}

RefineResult refine_trajectories(const CanonicalScene& scene, const MotionModel& model,
                                 const std::vector<CameraModel>& cameras,
                                 const std::vector<std::vector<FlowField>>& flows,
                                 const std::vector<std::vector<ImageScalar>>& depths,
                                 int n_frames, const EKFOptions& opts) {
    const int n = scene.size();
    const int n_cams = static_cast<int>(cameras.size());
    RefineResult result;
    result.positions.assign(n, {});
    result.assimilated.assign(n, {});
    result.logs.assign(n, TrackLog{});
    if (n == 0 || n_frames <= 0) return result;

    // nominal per-frame visibility flags, shared by all tracks
    std::vector<std::vector<std::vector<uint8_t>>> vis(n_cams);
    for (int c = 0; c < n_cams; ++c) {
        vis[c].resize(n_frames);
        for (int k = 0; k < n_frames; ++k) {
            std::vector<Vector3d> positions(n);
            for (int g = 0; g < n; ++g)
                positions[g] = model.warp(g, scene.gaussians[g].mu0,
                                          TimeStamp::frame(k, n_frames).t);
            vis[c][k] = surface_filter(positions, cameras[c], depths[c][k], opts.rel_tol);
        }
    }

    parallel_for(0, n, [&](int g) {
        TrackLog& log = result.logs[g];
        EKFTrack track;
        track.mu0 = scene.gaussians[g].mu0;
        track.x = model.warp(g, track.mu0, TimeStamp::frame(0, n_frames).t);
        track.P = Matrix3d::Zero();

        // per-camera localization state
        std::vector<std::optional<Vector2d>> p0(n_cams);
        std::vector<Vector2d> z_accum(n_cams, Vector2d::Zero());
        for (int c = 0; c < n_cams; ++c) {
            const auto projected = project_point(cameras[c], track.x);
            if (projected)
                p0[c] = projected->pixel;
            else
                ++log.behind_camera;
        }

        result.positions[g].push_back(track.x);
        result.assimilated[g].push_back(1);

        for (int k = 1; k < n_frames; ++k) {
            const TimeStamp t_prev = TimeStamp::frame(k - 1, n_frames);
            const TimeStamp t = TimeStamp::frame(k, n_frames);
            const ForecastResult forecast =
                ekf_forecast(track, model, g, t_prev, t, opts);
            if (forecast.identity_fallback) ++log.singular_jacobian;
            track.x = forecast.x_f;
            track.P = forecast.p_f;

            const Vector3d nominal_step = model.warp(g, track.mu0, t.t) -
                                          model.warp(g, track.mu0, t_prev.t);
            bool any_update = false;
            for (int c = 0; c < n_cams; ++c) {
                if (!p0[c]) continue;
                const FlowSample sample =
                    locate_flow(flows[c][k - 1], *p0[c], z_accum[c]);
                if (sample.out_of_bounds) ++log.out_of_bounds;
                z_accum[c] += sample.z;
                if (!vis[c][k - 1][g]) {
                    ++log.skipped_invisible;
                    continue;
                }
                const Vector3d x_lin = track.x - nominal_step;
                const auto h_val = observe_h(x_lin, model, g, track.mu0, t_prev, cameras[c]);
                const auto j_h =
                    jacobian_h(x_lin, model, g, track.mu0, t_prev, cameras[c], opts.fd_delta);
                if (!h_val || !j_h) {
                    ++log.behind_camera;
                    continue;
                }
                const UpdateResult update =
                    ekf_gain_update(track.x, track.P, sample.z, *h_val, *j_h,
                                    opts.noise.observation);
                if (update.singular_innovation) {
                    ++log.singular_innovation;
                    continue;
                }
                track.x = update.x;
                track.P = update.p;
                any_update = true;
            }
            result.positions[g].push_back(track.x);
            result.assimilated[g].push_back(any_update ? 1 : 0);
        }
    }, 8);

    return result;
}

std::string trajectories_to_jsonl(const RefineResult& result) {
    using nlohmann::json;
    std::ostringstream out;
    for (size_t g = 0; g < result.positions.size(); ++g) {
        json rec;
        rec["index"] = g;
        json frames = json::array();
        for (const auto& x : result.positions[g])
            frames.push_back(json::array({x[0], x[1], x[2]}));
        rec["frames"] = frames;
        json visible = json::array();
        for (uint8_t v : result.assimilated[g]) visible.push_back(v != 0);
        rec["visible"] = visible;
        out << rec.dump() << "\n";
    }
    return out.str();
}

} // namespace flowsplat
