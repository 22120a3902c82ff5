#include "flowsplat/image_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <vector>

#include "flowsplat/error.hpp"

namespace flowsplat {

namespace {

void write_pnm_header(std::ofstream& out, const char* magic, int w, int h) {
    out << magic << "\n" << w << " " << h << "\n255\n";
}

// Reads "P6\n<w> <h>\n255\n" tolerating arbitrary whitespace and # comments.
void read_pnm_header(std::ifstream& in, const char* magic, int& w, int& h,
                     const std::string& path) {
    std::string tag;
    in >> tag;
    if (tag != magic) throw DataError(path + ": expected " + magic + " header");
    auto next_int = [&]() {
        for (;;) {
            in >> std::ws;
            if (in.peek() == '#') {
                std::string comment;
                std::getline(in, comment);
                continue;
            }
            int v;
            if (!(in >> v)) throw DataError(path + ": malformed header");
            return v;
        }
    };
    w = next_int();
    h = next_int();
    const int maxval = next_int();
    if (w <= 0 || h <= 0) throw DataError(path + ": bad dimensions");
    if (maxval != 255) throw DataError(path + ": only 8-bit maps supported");
    in.get(); // single whitespace byte before raster
}

} // namespace

uint8_t quantize_channel(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return static_cast<uint8_t>(std::lround(v * 255.0));
}

ImageRGB quantize_image(const ImageRGB& img) {
    ImageRGB out(img.width(), img.height());
    for (size_t i = 0; i < img.data().size(); ++i) {
        const Eigen::Vector3d& c = img.data()[i];
        out.data()[i] = Eigen::Vector3d(quantize_channel(c[0]) / 255.0,
                                        quantize_channel(c[1]) / 255.0,
                                        quantize_channel(c[2]) / 255.0);
    }
    return out;
}

void save_ppm(const ImageRGB& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    write_pnm_header(out, "P6", img.width(), img.height());
    std::vector<uint8_t> raster(img.size() * 3);
    for (size_t i = 0; i < img.data().size(); ++i) {
        const Eigen::Vector3d& c = img.data()[i];
        raster[3 * i + 0] = quantize_channel(c[0]);
        raster[3 * i + 1] = quantize_channel(c[1]);
        raster[3 * i + 2] = quantize_channel(c[2]);
    }
    out.write(reinterpret_cast<const char*>(raster.data()),
              static_cast<std::streamsize>(raster.size()));
    if (!out) throw DataError("short write to " + path);
}

ImageRGB load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path);
    int w, h;
    read_pnm_header(in, "P6", w, h, path);
    std::vector<uint8_t> raster(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raster.data()),
            static_cast<std::streamsize>(raster.size()));
    if (!in) throw DataError(path + ": truncated raster");
    ImageRGB img(w, h);
    for (size_t i = 0; i < img.data().size(); ++i)
        img.data()[i] = Eigen::Vector3d(raster[3 * i + 0] / 255.0,
                                        raster[3 * i + 1] / 255.0,
                                        raster[3 * i + 2] / 255.0);
    return img;
}

void save_pgm_mask(const ImageBool& mask, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    write_pnm_header(out, "P5", mask.width(), mask.height());
    std::vector<uint8_t> raster(mask.size());
    for (size_t i = 0; i < mask.data().size(); ++i)
        raster[i] = mask.data()[i] ? 255 : 0;
    out.write(reinterpret_cast<const char*>(raster.data()),
              static_cast<std::streamsize>(raster.size()));
    if (!out) throw DataError("short write to " + path);
}

ImageBool load_pgm_mask(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path);
    int w, h;
    read_pnm_header(in, "P5", w, h, path);
    std::vector<uint8_t> raster(static_cast<size_t>(w) * h);
    in.read(reinterpret_cast<char*>(raster.data()),
            static_cast<std::streamsize>(raster.size()));
    if (!in) throw DataError(path + ": truncated raster");
    ImageBool mask(w, h);
    for (size_t i = 0; i < mask.data().size(); ++i)
        mask.data()[i] = raster[i] > 127 ? 1 : 0;
    return mask;
}

void save_flo(const ImageVec2& flow, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out.write("PIEH", 4);
    const int32_t w = flow.width(), h = flow.height();
    out.write(reinterpret_cast<const char*>(&w), 4);
    out.write(reinterpret_cast<const char*>(&h), 4);
    std::vector<float> scanline(static_cast<size_t>(w) * 2);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            scanline[2 * x + 0] = static_cast<float>(flow.at(x, y).x());
            scanline[2 * x + 1] = static_cast<float>(flow.at(x, y).y());
        }
        out.write(reinterpret_cast<const char*>(scanline.data()),
                  static_cast<std::streamsize>(scanline.size() * sizeof(float)));
    }
    if (!out) throw DataError("short write to " + path);
}

ImageVec2 load_flo(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "PIEH", 4) != 0)
        throw DataError(path + ": bad .flo magic");
    int32_t w = 0, h = 0;
    in.read(reinterpret_cast<char*>(&w), 4);
    in.read(reinterpret_cast<char*>(&h), 4);
    if (!in || w <= 0 || h <= 0 || w > 999999 || h > 999999)
        throw DataError(path + ": implausible .flo dimensions");
    ImageVec2 flow(w, h);
    std::vector<float> scanline(static_cast<size_t>(w) * 2);
    for (int y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(scanline.data()),
                static_cast<std::streamsize>(scanline.size() * sizeof(float)));
        if (!in) throw DataError(path + ": truncated .flo raster");
        for (int x = 0; x < w; ++x)
            flow.at(x, y) = Eigen::Vector2d(scanline[2 * x + 0], scanline[2 * x + 1]);
    }
    return flow;
}

namespace {

// 55-entry wheel: RY 15, YG 6, GC 4, CB 11, BM 13, MR 6.
std::vector<Eigen::Vector3d> make_color_wheel() {
    const int ry = 15, yg = 6, gc = 4, cb = 11, bm = 13, mr = 6;
    std::vector<Eigen::Vector3d> wheel;
    wheel.reserve(ry + yg + gc + cb + bm + mr);
    for (int i = 0; i < ry; ++i) wheel.emplace_back(1.0, static_cast<double>(i) / ry, 0.0);
    for (int i = 0; i < yg; ++i) wheel.emplace_back(1.0 - static_cast<double>(i) / yg, 1.0, 0.0);
    for (int i = 0; i < gc; ++i) wheel.emplace_back(0.0, 1.0, static_cast<double>(i) / gc);
    for (int i = 0; i < cb; ++i) wheel.emplace_back(0.0, 1.0 - static_cast<double>(i) / cb, 1.0);
    for (int i = 0; i < bm; ++i) wheel.emplace_back(static_cast<double>(i) / bm, 0.0, 1.0);
    for (int i = 0; i < mr; ++i) wheel.emplace_back(1.0, 0.0, 1.0 - static_cast<double>(i) / mr);
    return wheel;
}

} // namespace

Eigen::Vector3d flow_wheel_color(double u, double v) {
    static const std::vector<Eigen::Vector3d> wheel = make_color_wheel();
    const int ncols = static_cast<int>(wheel.size());
    const double rad = std::min(std::sqrt(u * u + v * v), 1.0);
    const double a = std::atan2(-v, -u) / std::numbers::pi; // in (-1, 1]
    const double fk = (a + 1.0) / 2.0 * (ncols - 1);
    const int k0 = static_cast<int>(std::floor(fk));
    const int k1 = (k0 + 1) % ncols;
    const double f = fk - k0;
    Eigen::Vector3d col = (1.0 - f) * wheel[k0] + f * wheel[k1];
    // desaturate toward white as magnitude drops
    return Eigen::Vector3d::Ones() - rad * (Eigen::Vector3d::Ones() - col);
}

ImageRGB flow_to_color(const ImageVec2& flow, double max_magnitude) {
    double scale = max_magnitude;
    if (scale <= 0.0) {
        for (const auto& f : flow.data()) scale = std::max(scale, f.norm());
        if (scale <= 0.0) scale = 1.0;
    }
    ImageRGB out(flow.width(), flow.height());
    for (size_t i = 0; i < flow.data().size(); ++i) {
        const Eigen::Vector2d& f = flow.data()[i];
        out.data()[i] = flow_wheel_color(f.x() / scale, f.y() / scale);
    }
    return out;
}

} // namespace flowsplat
