#pragma once

#include <string>
#include <vector>

#include "flowsplat/dataset.hpp"
#include "flowsplat/deformation.hpp"
#include "flowsplat/densify.hpp"
#include "flowsplat/losses.hpp"
#include "flowsplat/rasterizer.hpp"
#include "flowsplat/rng.hpp"

namespace flowsplat {

struct LearningRates {
    double centers = 1.6e-4; // scaled by scene extent at session start
    double scales = 5e-3;
    double rotations = 1e-3;
    double colors = 2.5e-3;
    double opacities = 5e-2;
    double field = 1e-3;
};

struct LossWeights {
    double photometric = 1.0;
    double win = 0.1;
    double warp = 0.1;
    double dyn = 1.0;
};

struct TrainConfig {
    int iterations = 2000;
    LearningRates lr;
    LossWeights weights;
    int tau = 8;
    int warmup_static_iters = 500;
    uint64_t seed = 0;
    int heldout_camera = 0; // excluded from training when >= 0
    int workers = 4;

    bool densify_enabled = true;
    int densify_start = 500;
    int densify_stop = 2500;
    int densify_interval = 100;
    ConventionalDensifyConfig densify;
    FADConfig fad;
    std::string fad_audit_path; // optional JSON-lines audit log
};

TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig load_train_config(const std::string& path);

struct TrainLogRow {
    int iteration = 0;
    double photometric = 0.0;
    double win = 0.0;
    double warp = 0.0;
    double dyn = 0.0;
    double total = 0.0;
    int n_gaussians = 0;
    double grad_norm_centers = 0.0;
    double grad_norm_field = 0.0;
};

struct TrainLog {
    std::vector<TrainLogRow> rows;
    std::string to_csv() const;
};

// Uniform window start (i + tau <= n_frames - 1) and a uniform training
// camera, as a pure function of (seed, iteration).
struct WindowSample {
    int start = 0;
    int camera = 0;
};
WindowSample sample_window(int n_frames, int tau, int iteration,
                           const std::vector<int>& train_cameras, uint64_t seed);

// Adam with bias correction; one state per parameter group.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;

    void resize(size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
    }
};

class TrainSession {
   public:
    TrainSession(const Dataset& dataset, const TrainConfig& cfg);

    // One optimization step (render window, losses, backward, Adam update,
    // constraint projection, scheduled densification). Throws NonFiniteLoss
    // with the offending Gaussian identified.
    LossReport step();

    int iteration() const { return iteration_; }
    const CanonicalScene& scene() const { return scene_; }
    const DeformationField& field() const { return field_; }
    CanonicalScene& scene_mutable() { return scene_; }
    DeformationField& field_mutable() { return field_; }
    const TrainLog& log() const { return log_; }
    const std::vector<int>& train_cameras() const { return train_cameras_; }
    double scene_extent() const { return extent_; }

    void save_checkpoint(const std::string& dir) const;
    void load_optimizer_state(const std::string& path);

   private:
    const Dataset& dataset_;
    TrainConfig cfg_;
    CanonicalScene scene_;
    DeformationField field_;
    std::vector<int> train_cameras_;
    double extent_ = 1.0;
    int iteration_ = 0;
    TrainLog log_;
    Rng densify_rng_;

    AdamState adam_mu0_, adam_scale_, adam_rot_, adam_color_, adam_opacity_, adam_field_;
    std::vector<double> grad_accum_px_;  // summed |d center_px| per Gaussian
    std::vector<int> grad_accum_count_;

    void apply_gradients(const SceneGrads& grads, TrainLogRow& row);
    void project_constraints();
    void remap_per_gaussian_state(const std::vector<int>& parent_of);
    void append_fresh_state(int n_new);
    void densify_if_scheduled(const LossReport& report, const RenderBuffers& base_pass,
                              int stamp, int camera);
    void check_finite(double total) const;
};

// Full run: train `cfg.iterations` steps on the dataset, write the
// checkpoint directory (scene.json, field.bin, optimizer.bin) and return the
// log. `checkpoint_dir` may be empty to skip writing.
TrainLog run_training(const Dataset& dataset, const TrainConfig& cfg,
                      const std::string& checkpoint_dir,
                      CanonicalScene* out_scene = nullptr,
                      DeformationField* out_field = nullptr);

struct Checkpoint {
    CanonicalScene scene;
    DeformationField field;
};
Checkpoint load_checkpoint(const std::string& dir);

} // namespace flowsplat
