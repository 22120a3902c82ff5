#include "flowsplat/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "flowsplat/error.hpp"
#include "flowsplat/parallel.hpp"

namespace flowsplat {

namespace fs = std::filesystem;
using nlohmann::json;

TrainConfig train_config_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("train config: ") + e.what());
    }
    TrainConfig cfg;
    cfg.iterations = doc.value("iterations", cfg.iterations);
    cfg.tau = doc.value("tau", cfg.tau);
    cfg.warmup_static_iters = doc.value("warmup_static_iters", cfg.warmup_static_iters);
    cfg.seed = doc.value("seed", cfg.seed);
    cfg.heldout_camera = doc.value("heldout_camera", cfg.heldout_camera);
    cfg.workers = doc.value("workers", cfg.workers);
    if (doc.contains("lr")) {
        const json& lr = doc["lr"];
        cfg.lr.centers = lr.value("centers", cfg.lr.centers);
        cfg.lr.scales = lr.value("scales", cfg.lr.scales);
        cfg.lr.rotations = lr.value("rotations", cfg.lr.rotations);
        cfg.lr.colors = lr.value("colors", cfg.lr.colors);
        cfg.lr.opacities = lr.value("opacities", cfg.lr.opacities);
        cfg.lr.field = lr.value("field", cfg.lr.field);
    }
    if (doc.contains("weights")) {
        const json& w = doc["weights"];
        cfg.weights.photometric = w.value("photometric", cfg.weights.photometric);
        cfg.weights.win = w.value("win", cfg.weights.win);
        cfg.weights.warp = w.value("warp", cfg.weights.warp);
        cfg.weights.dyn = w.value("dyn", cfg.weights.dyn);
    }
    if (doc.contains("densify")) {
        const json& d = doc["densify"];
        cfg.densify_enabled = d.value("enabled", cfg.densify_enabled);
        cfg.densify_start = d.value("start", cfg.densify_start);
        cfg.densify_stop = d.value("stop", cfg.densify_stop);
        cfg.densify_interval = d.value("interval", cfg.densify_interval);
        cfg.densify.grad_threshold = d.value("grad_threshold", cfg.densify.grad_threshold);
        cfg.densify.split_scale_fraction =
            d.value("split_scale_fraction", cfg.densify.split_scale_fraction);
        cfg.densify.opacity_floor = d.value("opacity_floor", cfg.densify.opacity_floor);
        cfg.densify.max_gaussians = d.value("max_gaussians", cfg.densify.max_gaussians);
    }
    if (doc.contains("fad")) {
        const json& f = doc["fad"];
        cfg.fad.enabled = f.value("enabled", cfg.fad.enabled);
        cfg.fad.cadence = f.value("cadence", cfg.fad.cadence);
        cfg.fad.percentile = f.value("percentile", cfg.fad.percentile);
        cfg.fad.fps_ratio = f.value("fps_ratio", cfg.fad.fps_ratio);
        cfg.fad.k = f.value("k", cfg.fad.k);
        cfg.fad.radius_scale = f.value("radius_scale", cfg.fad.radius_scale);
        cfg.fad.max_new_per_event = f.value("max_new_per_event", cfg.fad.max_new_per_event);
        cfg.fad.opacity_floor = f.value("opacity_floor", cfg.fad.opacity_floor);
        cfg.fad.use_warp_map = f.value("use_warp_map", cfg.fad.use_warp_map);
    }
    cfg.fad_audit_path = doc.value("fad_audit_path", cfg.fad_audit_path);
    return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
    json doc;
    doc["iterations"] = cfg.iterations;
    doc["tau"] = cfg.tau;
    doc["warmup_static_iters"] = cfg.warmup_static_iters;
    doc["seed"] = cfg.seed;
    doc["heldout_camera"] = cfg.heldout_camera;
    doc["workers"] = cfg.workers;
    doc["lr"] = {{"centers", cfg.lr.centers},   {"scales", cfg.lr.scales},
                 {"rotations", cfg.lr.rotations}, {"colors", cfg.lr.colors},
                 {"opacities", cfg.lr.opacities}, {"field", cfg.lr.field}};
    doc["weights"] = {{"photometric", cfg.weights.photometric},
                      {"win", cfg.weights.win},
                      {"warp", cfg.weights.warp},
                      {"dyn", cfg.weights.dyn}};
    doc["densify"] = {{"enabled", cfg.densify_enabled},
                      {"start", cfg.densify_start},
                      {"stop", cfg.densify_stop},
                      {"interval", cfg.densify_interval},
                      {"grad_threshold", cfg.densify.grad_threshold},
                      {"split_scale_fraction", cfg.densify.split_scale_fraction},
                      {"opacity_floor", cfg.densify.opacity_floor},
                      {"max_gaussians", cfg.densify.max_gaussians}};
    doc["fad"] = {{"enabled", cfg.fad.enabled},
                  {"cadence", cfg.fad.cadence},
                  {"percentile", cfg.fad.percentile},
                  {"fps_ratio", cfg.fad.fps_ratio},
                  {"k", cfg.fad.k},
                  {"radius_scale", cfg.fad.radius_scale},
                  {"max_new_per_event", cfg.fad.max_new_per_event},
                  {"opacity_floor", cfg.fad.opacity_floor},
                  {"use_warp_map", cfg.fad.use_warp_map}};
    doc["fad_audit_path"] = cfg.fad_audit_path;
    return doc.dump(2) + "\n";
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return train_config_from_json(text);
}

std::string TrainLog::to_csv() const {
    std::ostringstream out;
    out << "iteration,photometric,win,warp,dyn,total,n_gaussians,"
           "grad_norm_centers,grad_norm_field\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf),
                      "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%.17g,%.17g\n", r.iteration,
                      r.photometric, r.win, r.warp, r.dyn, r.total, r.n_gaussians,
                      r.grad_norm_centers, r.grad_norm_field);
        out << buf;
    }
    return out.str();
}

WindowSample sample_window(int n_frames, int tau, int iteration,
                           const std::vector<int>& train_cameras, uint64_t seed) {
    WindowSample ws;
    Rng rng(seed + 0x9e3779b97f4a7c15ull * (static_cast<uint64_t>(iteration) + 1));
    const int n_starts = std::max(1, n_frames - tau);
    ws.start = static_cast<int>(rng.uniform_index(n_starts));
    ws.camera = train_cameras.empty()
                    ? 0
                    : train_cameras[rng.uniform_index(train_cameras.size())];
    return ws;
}

namespace {

void adam_group(std::vector<double>& grads_flat, AdamState& state, double lr,
                const std::function<double&(size_t)>& param_at) {
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    ++state.step;
    const double bias1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bias2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < grads_flat.size(); ++i) {
        const double g = grads_flat[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        const double mhat = state.m[i] / bias1;
        const double vhat = state.v[i] / bias2;
        param_at(i) -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

} // namespace

TrainSession::TrainSession(const Dataset& dataset, const TrainConfig& cfg)
    : dataset_(dataset), cfg_(cfg), scene_(dataset.scene), field_(cfg.seed),
      densify_rng_(cfg.seed ^ 0xd5f00dULL) {
    set_worker_count(cfg_.workers);
    for (int c = 0; c < static_cast<int>(dataset_.cameras.size()); ++c)
        if (c != cfg_.heldout_camera) train_cameras_.push_back(c);
    if (train_cameras_.empty())
        for (int c = 0; c < static_cast<int>(dataset_.cameras.size()); ++c)
            train_cameras_.push_back(c);
    extent_ = std::max(scene_.extent(), 1e-6);

    const int n = scene_.size();
    adam_mu0_.resize(3 * n);
    adam_scale_.resize(3 * n);
    adam_rot_.resize(4 * n);
    adam_color_.resize(3 * n);
    adam_opacity_.resize(n);
    adam_field_.resize(field_.parameter_count());
    grad_accum_px_.assign(n, 0.0);
    grad_accum_count_.assign(n, 0);
}

void TrainSession::check_finite(double total) const {
    if (std::isfinite(total)) return;
    int offender = -1;
    for (int i = 0; i < scene_.size() && offender < 0; ++i) {
        const Gaussian3D& g = scene_.gaussians[i];
        if (!g.mu0.allFinite() || !g.scale.allFinite() || !g.rotation.allFinite() ||
            !g.color.allFinite() || !std::isfinite(g.opacity))
            offender = i;
    }
    std::ostringstream msg;
    msg << "non-finite loss at iteration " << iteration_;
    if (offender >= 0) msg << " (gaussian " << offender << " has non-finite attributes)";
    throw NonFiniteLoss(msg.str(), offender);
}

LossReport TrainSession::step() {
    const int n_frames = dataset_.n_frames;
    const int tau_eff = std::min(cfg_.tau, n_frames - 1);
    const WindowSample ws =
        sample_window(n_frames, tau_eff, iteration_, train_cameras_, cfg_.seed);
    const CameraModel& cam = dataset_.cameras[ws.camera];
    const bool warmup = iteration_ < cfg_.warmup_static_iters;
    const bool flow_weighted = cfg_.weights.win != 0.0 || cfg_.weights.warp != 0.0;
    const bool use_flow = !warmup && tau_eff >= 1 && flow_weighted;
    const bool use_dyn = !warmup && cfg_.weights.dyn != 0.0;
    // warmup fits the canonical configuration against the first frame only;
    // photometric pressure at later stamps would bleach moving content away
    // before the flow losses engage
    const int i0 = warmup ? 0 : ws.start;

    auto stamp = [&](int k) { return TimeStamp::frame(k, n_frames); };

    // Forward: velocity passes over the window (pass 0 carries the
    // photometric comparison), plus one backward-velocity pass for the warp
    // term.
    const int n_passes = use_flow ? tau_eff : 1;
    std::vector<RenderBuffers> passes(n_passes);
    for (int k = 0; k < n_passes; ++k)
        passes[k] = render(scene_, field_, stamp(i0 + k), stamp(i0 + k + 1), cam);
    RenderBuffers back_pass;
    const bool have_back = use_flow && cfg_.weights.warp != 0.0;
    if (have_back)
        back_pass = render(scene_, field_, stamp(i0 + 1), stamp(i0), cam);

    // Losses
    LossReport report;
    const ImageRGB& truth0 = dataset_.images[ws.camera][i0];
    report.photometric = loss_photometric(passes[0].color, truth0);
    std::vector<ImageVec2> rendered_flows;
    std::vector<FlowField> truth_flows;
    if (use_flow) {
        for (int k = 0; k < tau_eff; ++k) {
            rendered_flows.push_back(passes[k].velocity);
            truth_flows.push_back(dataset_.flows[ws.camera][i0 + k]);
        }
        std::tie(report.win, report.win_map) =
            loss_win(rendered_flows, truth_flows, tau_eff);
        if (have_back)
            std::tie(report.warp, report.warp_map) =
                loss_warp(passes[0].color, back_pass.velocity,
                          dataset_.images[ws.camera][i0 + 1]);
    }
    if (use_dyn)
        report.dyn = loss_dyn(passes[0].color, truth0, dataset_.masks[ws.camera][i0]);
    report.total = cfg_.weights.photometric * report.photometric +
                   cfg_.weights.win * report.win + cfg_.weights.warp * report.warp +
                   cfg_.weights.dyn * report.dyn;
    check_finite(report.total);

    // Backward
    SceneGrads grads;
    grads.resize(scene_.size(), field_.parameter_count());

    const int w = cam.width, h = cam.height;
    UpstreamGradients up0;
    up0.d_color = ImageRGB(w, h, Vector3d::Zero());
    loss_photometric_backward(passes[0].color, truth0, cfg_.weights.photometric,
                              up0.d_color);
    UpstreamGradients up_back;
    std::vector<ImageVec2> d_flows;
    if (use_dyn)
        loss_dyn_backward(passes[0].color, truth0, dataset_.masks[ws.camera][i0],
                          cfg_.weights.dyn, up0.d_color);
    if (use_flow) {
        d_flows.assign(tau_eff, ImageVec2(w, h, Vector2d::Zero()));
        loss_win_backward(rendered_flows, truth_flows, cfg_.weights.win, d_flows);
        up0.d_velocity = d_flows[0];
        if (have_back) {
            up_back.d_velocity = ImageVec2(w, h, Vector2d::Zero());
            loss_warp_backward(passes[0].color, back_pass.velocity,
                               dataset_.images[ws.camera][i0 + 1], cfg_.weights.warp,
                               up0.d_color, up_back.d_velocity);
        }
    }

    const RenderGradients g0 = render_backward(passes[0], up0);
    chain_to_scene(g0, passes[0], scene_, field_, stamp(i0), stamp(i0 + 1), cam, grads);
    for (size_t v = 0; v < passes[0].visible.size(); ++v) {
        const int gi = passes[0].visible[v].index;
        grad_accum_px_[gi] += g0.per_visible[v].d_center_px.norm();
        grad_accum_count_[gi] += 1;
    }
    for (int k = 1; k < n_passes; ++k) {
        UpstreamGradients up;
        up.d_velocity = d_flows[k];
        const RenderGradients gk = render_backward(passes[k], up);
        chain_to_scene(gk, passes[k], scene_, field_, stamp(i0 + k), stamp(i0 + k + 1),
                       cam, grads);
    }
    if (have_back) {
        const RenderGradients gb = render_backward(back_pass, up_back);
        chain_to_scene(gb, back_pass, scene_, field_, stamp(i0 + 1), stamp(i0), cam,
                       grads);
    }

    TrainLogRow row;
    apply_gradients(grads, row);
    project_constraints();

    row.iteration = iteration_;
    row.photometric = report.photometric;
    row.win = report.win;
    row.warp = report.warp;
    row.dyn = report.dyn;
    row.total = report.total;
    row.n_gaussians = scene_.size();
    log_.rows.push_back(row);

    densify_if_scheduled(report, passes[0], i0, ws.camera);
    ++iteration_;
    return report;
}

void TrainSession::apply_gradients(const SceneGrads& grads, TrainLogRow& row) {
    const int n = scene_.size();
    double center_norm_sq = 0.0;
    for (const auto& g : grads.d_mu0) center_norm_sq += g.squaredNorm();
    row.grad_norm_centers = std::sqrt(center_norm_sq);
    double field_norm_sq = 0.0;
    for (double g : grads.d_field) field_norm_sq += g * g;
    row.grad_norm_field = std::sqrt(field_norm_sq);

    std::vector<double> flat;
    flat.resize(3 * n);
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < 3; ++a) flat[3 * i + a] = grads.d_mu0[i][a];
    adam_group(flat, adam_mu0_, cfg_.lr.centers * extent_,
               [&](size_t i) -> double& { return scene_.gaussians[i / 3].mu0[i % 3]; });

    for (int i = 0; i < n; ++i)
        for (int a = 0; a < 3; ++a) flat[3 * i + a] = grads.d_scale[i][a];
    adam_group(flat, adam_scale_, cfg_.lr.scales,
               [&](size_t i) -> double& { return scene_.gaussians[i / 3].scale[i % 3]; });

    flat.resize(4 * n);
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < 4; ++a) flat[4 * i + a] = grads.d_rotation[i][a];
    adam_group(flat, adam_rot_, cfg_.lr.rotations, [&](size_t i) -> double& {
        return scene_.gaussians[i / 4].rotation[i % 4];
    });

    flat.resize(3 * n);
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < 3; ++a) flat[3 * i + a] = grads.d_color[i][a];
    adam_group(flat, adam_color_, cfg_.lr.colors,
               [&](size_t i) -> double& { return scene_.gaussians[i / 3].color[i % 3]; });

    flat.resize(n);
    for (int i = 0; i < n; ++i) flat[i] = grads.d_opacity[i];
    adam_group(flat, adam_opacity_, cfg_.lr.opacities,
               [&](size_t i) -> double& { return scene_.gaussians[i].opacity; });

    std::vector<double> field_grads = grads.d_field;
    adam_group(field_grads, adam_field_, cfg_.lr.field,
               [&](size_t i) -> double& { return field_.weights()[i]; });
}

void TrainSession::project_constraints() {
    for (auto& g : scene_.gaussians) {
        g.scale = g.scale.cwiseMax(1e-6);
        const double norm = g.rotation.norm();
        if (norm < 1e-12)
            g.rotation = Vector4d(1, 0, 0, 0);
        else
            g.rotation /= norm;
        g.color = g.color.cwiseMax(0.0).cwiseMin(1.0);
        g.opacity = std::clamp(g.opacity, 0.0, 1.0);
    }
}

void TrainSession::remap_per_gaussian_state(const std::vector<int>& parent_of) {
    const int n = static_cast<int>(parent_of.size());
    auto remap = [&](AdamState& state, int stride) {
        AdamState next;
        next.resize(static_cast<size_t>(stride) * n);
        next.step = state.step;
        for (int i = 0; i < n; ++i) {
            const int p = parent_of[i];
            if (p < 0) continue;
            for (int a = 0; a < stride; ++a) {
                next.m[static_cast<size_t>(stride) * i + a] =
                    state.m[static_cast<size_t>(stride) * p + a];
                next.v[static_cast<size_t>(stride) * i + a] =
                    state.v[static_cast<size_t>(stride) * p + a];
            }
        }
        state = std::move(next);
    };
    remap(adam_mu0_, 3);
    remap(adam_scale_, 3);
    remap(adam_rot_, 4);
    remap(adam_color_, 3);
    remap(adam_opacity_, 1);
    grad_accum_px_.assign(n, 0.0);
    grad_accum_count_.assign(n, 0);
}

void TrainSession::append_fresh_state(int n_new) {
    if (n_new <= 0) return;
    const int n = scene_.size();
    std::vector<int> parent(n);
    for (int i = 0; i < n; ++i) parent[i] = i < n - n_new ? i : -1;
    remap_per_gaussian_state(parent);
}

void TrainSession::densify_if_scheduled(const LossReport& report,
                                        const RenderBuffers& base_pass, int stamp,
                                        int camera) {
    const int it = iteration_ + 1; // 1-based schedule
    if (cfg_.densify_enabled && it >= cfg_.densify_start && it <= cfg_.densify_stop &&
        it % cfg_.densify_interval == 0) {
        std::vector<double> mean(scene_.size(), 0.0);
        for (int g = 0; g < scene_.size(); ++g)
            if (grad_accum_count_[g] > 0)
                mean[g] = grad_accum_px_[g] / grad_accum_count_[g];
        const ConventionalDensifyStats stats = conventional_densify_and_prune(
            scene_, mean, cfg_.densify, extent_, densify_rng_);
        remap_per_gaussian_state(stats.parent_of);
    }

    const bool fad_due = cfg_.fad.enabled && iteration_ >= cfg_.warmup_static_iters &&
                         it % cfg_.fad.cadence == 0 && !report.win_map.empty() &&
                         scene_.size() < cfg_.densify.max_gaussians;
    if (fad_due) {
        const int before = scene_.size();
        const DensifyEvent event = run_fad(
            scene_, field_, TimeStamp::frame(stamp, dataset_.n_frames).t,
            dataset_.cameras[camera], report.win_map, dataset_.masks[camera][stamp],
            base_pass.depth, cfg_.fad, report.warp_map.empty() ? nullptr : &report.warp_map);
        append_fresh_state(scene_.size() - before);
        if (!cfg_.fad_audit_path.empty()) {
            std::ofstream out(cfg_.fad_audit_path, std::ios::app | std::ios::binary);
            out << densify_event_to_json(event) << "\n";
        }
    }
}

namespace {

void write_adam(std::ofstream& out, const AdamState& state) {
    const uint64_t n = state.m.size();
    out.write(reinterpret_cast<const char*>(&n), 8);
    const int64_t step = state.step;
    out.write(reinterpret_cast<const char*>(&step), 8);
    out.write(reinterpret_cast<const char*>(state.m.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
    out.write(reinterpret_cast<const char*>(state.v.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
}

void read_adam(std::ifstream& in, AdamState& state) {
    uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), 8);
    int64_t step = 0;
    in.read(reinterpret_cast<char*>(&step), 8);
    if (!in) throw DataError("optimizer state truncated");
    state.resize(n);
    state.step = step;
    in.read(reinterpret_cast<char*>(state.m.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    in.read(reinterpret_cast<char*>(state.v.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw DataError("optimizer state truncated");
}

} // namespace

void TrainSession::save_checkpoint(const std::string& dir) const {
    fs::create_directories(dir);
    save_scene(scene_, dir + "/scene.json");
    field_.save(dir + "/field.bin");
    std::ofstream out(dir + "/optimizer.bin", std::ios::binary);
    if (!out) throw DataError("cannot write " + dir + "/optimizer.bin");
    out.write("FSOP", 4);
    const uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), 4);
    for (const AdamState* s :
         {&adam_mu0_, &adam_scale_, &adam_rot_, &adam_color_, &adam_opacity_, &adam_field_})
        write_adam(out, *s);
    if (!out) throw DataError("short write to " + dir + "/optimizer.bin");
}

void TrainSession::load_optimizer_state(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "FSOP", 4) != 0)
        throw DataError(path + ": not an optimizer state file");
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (version != 1) throw DataError(path + ": unsupported optimizer state version");
    for (AdamState* s :
         {&adam_mu0_, &adam_scale_, &adam_rot_, &adam_color_, &adam_opacity_, &adam_field_})
        read_adam(in, *s);
}

TrainLog run_training(const Dataset& dataset, const TrainConfig& cfg,
                      const std::string& checkpoint_dir, CanonicalScene* out_scene,
                      DeformationField* out_field) {
    TrainSession session(dataset, cfg);
    for (int i = 0; i < cfg.iterations; ++i) session.step();
    if (!checkpoint_dir.empty()) session.save_checkpoint(checkpoint_dir);
    if (out_scene) *out_scene = session.scene();
    if (out_field) *out_field = session.field();
    return session.log();
}

Checkpoint load_checkpoint(const std::string& dir) {
    Checkpoint ckpt{load_scene(dir + "/scene.json"),
                    DeformationField::load(dir + "/field.bin")};
    return ckpt;
}

} // namespace flowsplat
