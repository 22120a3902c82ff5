#include "flowsplat/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "flowsplat/error.hpp"
#include "flowsplat/image_io.hpp"
#include "flowsplat/parallel.hpp"

namespace flowsplat {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cam_dir(const std::string& dir, int cam) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "cam_%02d", cam);
    return dir + "/" + buf;
}

std::string frame_name(const char* prefix, int frame, const char* ext) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%s_%04d.%s", prefix, frame, ext);
    return buf;
}

} // namespace

void save_flow_field(const FlowField& flow, const std::string& path) {
    ImageVec2 encoded = flow.data;
    for (int y = 0; y < encoded.height(); ++y)
        for (int x = 0; x < encoded.width(); ++x)
            if (!flow.valid.at(x, y))
                encoded.at(x, y) = Eigen::Vector2d(kUnknownFlow, kUnknownFlow);
    save_flo(encoded, path);
}

FlowField load_flow_field(const std::string& path) {
    FlowField flow(load_flo(path));
    for (int y = 0; y < flow.data.height(); ++y)
        for (int x = 0; x < flow.data.width(); ++x) {
            Eigen::Vector2d& v = flow.data.at(x, y);
            if (std::abs(v.x()) > kUnknownFlowThreshold ||
                std::abs(v.y()) > kUnknownFlowThreshold) {
                flow.valid.at(x, y) = 0;
                v.setZero();
            }
        }
    return flow;
}

void write_synthetic_dataset(const SceneRecipe& recipe, const std::string& dir) {
    const GeneratedScene gen = make_scene(recipe);
    fs::create_directories(dir);
    save_scene(gen.scene, dir + "/scene.json");
    save_cameras(gen.cameras, dir + "/cameras.json");
    {
        std::ofstream out(dir + "/motion.json", std::ios::binary);
        out << motion_to_json(gen.spec);
    }
    {
        json meta;
        meta["n_frames"] = recipe.n_frames;
        meta["width"] = recipe.width;
        meta["height"] = recipe.height;
        std::ofstream out(dir + "/meta.json", std::ios::binary);
        out << meta.dump(2) << "\n";
    }

    const int n_cams = static_cast<int>(gen.cameras.size());
    for (int c = 0; c < n_cams; ++c) {
        const std::string cdir = cam_dir(dir, c);
        fs::create_directories(cdir);
        const CameraModel& cam = gen.cameras[c];
        // frames are independent; parallel render, sequential file writes
        std::vector<ImageRGB> colors(recipe.n_frames);
        std::vector<DynamicMask> masks(recipe.n_frames);
        std::vector<FlowField> flows(std::max(0, recipe.n_frames - 1));
        parallel_for(0, recipe.n_frames, [&](int k) {
            colors[k] = oracle_render(gen.scene, gen.spec, cam, k).color;
            masks[k] = oracle_mask(gen.scene, gen.spec, cam, k);
            if (k < recipe.n_frames - 1)
                flows[k] = oracle_flow(gen.scene, gen.spec, cam, k);
        }, 1);
        for (int k = 0; k < recipe.n_frames; ++k) {
            save_ppm(colors[k], cdir + "/" + frame_name("frame", k, "ppm"));
            save_pgm_mask(masks[k].mask, cdir + "/" + frame_name("mask", k, "pgm"));
            if (k < recipe.n_frames - 1)
                save_flow_field(flows[k], cdir + "/" + frame_name("flow", k, "flo"));
        }
    }
}

Dataset load_dataset(const std::string& dir) {
    Dataset ds;
    ds.scene = load_scene(dir + "/scene.json");
    ds.cameras = load_cameras(dir + "/cameras.json");
    {
        std::ifstream in(dir + "/meta.json", std::ios::binary);
        if (!in) throw DataError("cannot read " + dir + "/meta.json");
        json meta = json::parse(in, nullptr, false);
        if (meta.is_discarded()) throw DataError(dir + "/meta.json: malformed");
        ds.n_frames = meta.at("n_frames").get<int>();
    }
    if (fs::exists(dir + "/motion.json")) {
        std::ifstream in(dir + "/motion.json", std::ios::binary);
        std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
        ds.motion = motion_from_json(text);
    }

    const int n_cams = static_cast<int>(ds.cameras.size());
    ds.images.resize(n_cams);
    ds.flows.resize(n_cams);
    ds.masks.resize(n_cams);
    for (int c = 0; c < n_cams; ++c) {
        const std::string cdir = cam_dir(dir, c);
        for (int k = 0; k < ds.n_frames; ++k) {
            ds.images[c].push_back(load_ppm(cdir + "/" + frame_name("frame", k, "ppm")));
            DynamicMask mask;
            mask.mask = load_pgm_mask(cdir + "/" + frame_name("mask", k, "pgm"));
            ds.masks[c].push_back(mask);
            if (k < ds.n_frames - 1)
                ds.flows[c].push_back(
                    load_flow_field(cdir + "/" + frame_name("flow", k, "flo")));
        }
    }
    return ds;
}

} // namespace flowsplat
