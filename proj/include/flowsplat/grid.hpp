#pragma once

#include <Eigen/Dense>
#include <cassert>
#include <cstdint>
#include <vector>

#include "flowsplat/error.hpp"

namespace flowsplat {

// Dense row-major H x W buffer. Pixel (x, y) lives at continuous image
// coordinate (x, y); x grows rightward, y grows down.
template <typename T>
class Grid {
   public:
    Grid() = default;
    Grid(int width, int height, const T& fill = T{})
        : width_(width), height_(height),
          data_(static_cast<size_t>(width) * height, fill) {}

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return data_.empty(); }
    size_t size() const { return data_.size(); }

    T& at(int x, int y) {
        assert(x >= 0 && x < width_ && y >= 0 && y < height_);
        return data_[static_cast<size_t>(y) * width_ + x];
    }
    const T& at(int x, int y) const {
        assert(x >= 0 && x < width_ && y >= 0 && y < height_);
        return data_[static_cast<size_t>(y) * width_ + x];
    }

    T* row(int y) { return data_.data() + static_cast<size_t>(y) * width_; }
    const T* row(int y) const { return data_.data() + static_cast<size_t>(y) * width_; }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    bool same_shape(int w, int h) const { return width_ == w && height_ == h; }

    template <typename U>
    bool same_shape(const Grid<U>& other) const {
        return width_ == other.width() && height_ == other.height();
    }

    void fill(const T& v) { std::fill(data_.begin(), data_.end(), v); }

   private:
    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

using ImageRGB = Grid<Eigen::Vector3d>;
using ImageVec2 = Grid<Eigen::Vector2d>;
using ImageScalar = Grid<double>;
using ImageBool = Grid<uint8_t>;

template <typename A, typename B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const char* where) {
    if (!a.same_shape(b))
        throw ShapeMismatch(std::string(where) + ": grid shapes differ");
}

// Bilinear sample with border clamp. `out_of_bounds`, when given, is set to
// true when (x, y) falls outside [0, W-1] x [0, H-1] before clamping.
template <typename T>
T bilinear_sample(const Grid<T>& img, double x, double y,
                  bool* out_of_bounds = nullptr) {
    const double max_x = static_cast<double>(img.width() - 1);
    const double max_y = static_cast<double>(img.height() - 1);
    if (out_of_bounds)
        *out_of_bounds = (x < 0.0 || x > max_x || y < 0.0 || y > max_y);
    x = std::clamp(x, 0.0, max_x);
    y = std::clamp(y, 0.0, max_y);
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int x1 = std::min(x0 + 1, img.width() - 1);
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    return img.at(x0, y0) * ((1.0 - fx) * (1.0 - fy)) +
           img.at(x1, y0) * (fx * (1.0 - fy)) +
           img.at(x0, y1) * ((1.0 - fx) * fy) +
           img.at(x1, y1) * (fx * fy);
}

} // namespace flowsplat
