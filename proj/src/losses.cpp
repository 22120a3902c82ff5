#include "flowsplat/losses.hpp"

#include <cmath>

#include "flowsplat/error.hpp"

namespace flowsplat {

namespace {

double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

} // namespace

double loss_photometric(const ImageRGB& rendered, const ImageRGB& truth) {
    require_same_shape(rendered, truth, "loss_photometric");
    if (rendered.empty()) return 0.0;
    double sum = 0.0;
    for (size_t i = 0; i < rendered.data().size(); ++i)
        sum += (rendered.data()[i] - truth.data()[i]).cwiseAbs().sum();
    return sum / (3.0 * static_cast<double>(rendered.size()));
}

void loss_photometric_backward(const ImageRGB& rendered, const ImageRGB& truth,
                               double scale, ImageRGB& d_rendered) {
    require_same_shape(rendered, truth, "loss_photometric_backward");
    require_same_shape(rendered, d_rendered, "loss_photometric_backward");
    const double w = scale / (3.0 * static_cast<double>(rendered.size()));
    for (size_t i = 0; i < rendered.data().size(); ++i) {
        const Eigen::Vector3d diff = rendered.data()[i] - truth.data()[i];
        d_rendered.data()[i] += w * diff.unaryExpr(&sign_of);
    }
}

std::pair<double, ImageScalar> loss_win(const std::vector<ImageVec2>& rendered_flows,
                                        const std::vector<FlowField>& truth_flows,
                                        int tau) {
    if (static_cast<int>(rendered_flows.size()) != tau ||
        static_cast<int>(truth_flows.size()) != tau)
        throw WindowLengthMismatch("loss_win: lists must have length tau");
    if (tau == 0) return {0.0, ImageScalar()};

    double frame_mean_sum = 0.0;
    ImageScalar first_map;
    for (int k = 0; k < tau; ++k) {
        const ImageVec2& rendered = rendered_flows[k];
        const FlowField& truth = truth_flows[k];
        require_same_shape(rendered, truth.data, "loss_win");
        require_same_shape(rendered, truth.valid, "loss_win");
        if (k == 0) first_map = ImageScalar(rendered.width(), rendered.height(), 0.0);

        double sum = 0.0;
        long count = 0;
        for (int y = 0; y < rendered.height(); ++y) {
            for (int x = 0; x < rendered.width(); ++x) {
                if (!truth.valid.at(x, y)) continue;
                const Eigen::Vector2d diff = rendered.at(x, y) - truth.data.at(x, y);
                const double l1 = diff.cwiseAbs().sum();
                sum += l1;
                ++count;
                if (k == 0) first_map.at(x, y) = 0.5 * l1;
            }
        }
        frame_mean_sum += count > 0 ? sum / (2.0 * count) : 0.0;
    }
    return {frame_mean_sum / tau, first_map};
}

void loss_win_backward(const std::vector<ImageVec2>& rendered_flows,
                       const std::vector<FlowField>& truth_flows, double scale,
                       std::vector<ImageVec2>& d_flows) {
    const int tau = static_cast<int>(rendered_flows.size());
    if (static_cast<int>(truth_flows.size()) != tau ||
        static_cast<int>(d_flows.size()) != tau)
        throw WindowLengthMismatch("loss_win_backward: lists must have length tau");
    for (int k = 0; k < tau; ++k) {
        const ImageVec2& rendered = rendered_flows[k];
        const FlowField& truth = truth_flows[k];
        require_same_shape(rendered, d_flows[k], "loss_win_backward");
        long count = 0;
        for (const auto v : truth.valid.data()) count += v ? 1 : 0;
        if (count == 0) continue;
        const double w = scale / (2.0 * count * tau);
        for (int y = 0; y < rendered.height(); ++y) {
            for (int x = 0; x < rendered.width(); ++x) {
                if (!truth.valid.at(x, y)) continue;
                const Eigen::Vector2d diff = rendered.at(x, y) - truth.data.at(x, y);
                d_flows[k].at(x, y) += w * diff.unaryExpr(&sign_of);
            }
        }
    }
}

ImageRGB warp_image(const ImageRGB& src, const ImageVec2& flow, ImageBool* oob_mask) {
    require_same_shape(src, flow, "warp_image");
    ImageRGB out(src.width(), src.height());
    if (oob_mask) *oob_mask = ImageBool(src.width(), src.height(), 0);
    for (int y = 0; y < src.height(); ++y) {
        for (int x = 0; x < src.width(); ++x) {
            const Eigen::Vector2d& f = flow.at(x, y);
            bool oob = false;
            out.at(x, y) = bilinear_sample(src, x + f.x(), y + f.y(), &oob);
            if (oob && oob_mask) oob_mask->at(x, y) = 1;
        }
    }
    return out;
}

std::pair<double, ImageScalar> loss_warp(const ImageRGB& rendered_source,
                                         const ImageVec2& back_velocity,
                                         const ImageRGB& truth_target) {
    require_same_shape(rendered_source, back_velocity, "loss_warp");
    require_same_shape(rendered_source, truth_target, "loss_warp");
    ImageBool oob;
    const ImageRGB warped = warp_image(rendered_source, back_velocity, &oob);
    ImageScalar map(warped.width(), warped.height(), 0.0);
    double sum = 0.0;
    long count = 0;
    for (int y = 0; y < warped.height(); ++y) {
        for (int x = 0; x < warped.width(); ++x) {
            if (oob.at(x, y)) continue;
            const double l1 = (warped.at(x, y) - truth_target.at(x, y)).cwiseAbs().sum();
            map.at(x, y) = l1 / 3.0;
            sum += l1;
            ++count;
        }
    }
    return {count > 0 ? sum / (3.0 * count) : 0.0, map};
}

void loss_warp_backward(const ImageRGB& rendered_source, const ImageVec2& back_velocity,
                        const ImageRGB& truth_target, double scale,
                        ImageRGB& d_source, ImageVec2& d_velocity) {
    require_same_shape(rendered_source, back_velocity, "loss_warp_backward");
    require_same_shape(rendered_source, truth_target, "loss_warp_backward");
    require_same_shape(rendered_source, d_source, "loss_warp_backward");
    require_same_shape(rendered_source, d_velocity, "loss_warp_backward");

    ImageBool oob;
    const ImageRGB warped = warp_image(rendered_source, back_velocity, &oob);
    long count = 0;
    for (const auto v : oob.data()) count += v ? 0 : 1;
    if (count == 0) return;
    const double w_norm = scale / (3.0 * count);

    const int width = rendered_source.width();
    const int height = rendered_source.height();
    const double max_x = width - 1.0;
    const double max_y = height - 1.0;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            if (oob.at(x, y)) continue;
            const Eigen::Vector3d d_warped =
                w_norm *
                (warped.at(x, y) - truth_target.at(x, y)).unaryExpr(&sign_of);
            if (d_warped.isZero()) continue;

            const Eigen::Vector2d& f = back_velocity.at(x, y);
            const double sx = std::clamp(x + f.x(), 0.0, max_x);
            const double sy = std::clamp(y + f.y(), 0.0, max_y);
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const int x1 = std::min(x0 + 1, width - 1);
            const int y1 = std::min(y0 + 1, height - 1);
            const double fx = sx - x0;
            const double fy = sy - y0;

            d_source.at(x0, y0) += (1.0 - fx) * (1.0 - fy) * d_warped;
            d_source.at(x1, y0) += fx * (1.0 - fy) * d_warped;
            d_source.at(x0, y1) += (1.0 - fx) * fy * d_warped;
            d_source.at(x1, y1) += fx * fy * d_warped;

            // d(sample)/d(sx, sy): difference of the interpolated rows/cols.
            const Eigen::Vector3d d_dx =
                (rendered_source.at(x1, y0) - rendered_source.at(x0, y0)) * (1.0 - fy) +
                (rendered_source.at(x1, y1) - rendered_source.at(x0, y1)) * fy;
            const Eigen::Vector3d d_dy =
                (rendered_source.at(x0, y1) - rendered_source.at(x0, y0)) * (1.0 - fx) +
                (rendered_source.at(x1, y1) - rendered_source.at(x1, y0)) * fx;
            d_velocity.at(x, y) +=
                Eigen::Vector2d(d_warped.dot(d_dx), d_warped.dot(d_dy));
        }
    }
}

double loss_dyn(const ImageRGB& rendered, const ImageRGB& truth,
                const DynamicMask& mask) {
    require_same_shape(rendered, truth, "loss_dyn");
    require_same_shape(rendered, mask.mask, "loss_dyn");
    double sum = 0.0;
    long count = 0;
    for (size_t i = 0; i < rendered.data().size(); ++i) {
        if (!mask.mask.data()[i]) continue;
        sum += (rendered.data()[i] - truth.data()[i]).cwiseAbs().sum();
        ++count;
    }
    return count > 0 ? sum / (3.0 * count) : 0.0;
}

void loss_dyn_backward(const ImageRGB& rendered, const ImageRGB& truth,
                       const DynamicMask& mask, double scale, ImageRGB& d_rendered) {
    require_same_shape(rendered, truth, "loss_dyn_backward");
    require_same_shape(rendered, mask.mask, "loss_dyn_backward");
    require_same_shape(rendered, d_rendered, "loss_dyn_backward");
    long count = 0;
    for (const auto v : mask.mask.data()) count += v ? 1 : 0;
    if (count == 0) return;
    const double w = scale / (3.0 * count);
    for (size_t i = 0; i < rendered.data().size(); ++i) {
        if (!mask.mask.data()[i]) continue;
        const Eigen::Vector3d diff = rendered.data()[i] - truth.data()[i];
        d_rendered.data()[i] += w * diff.unaryExpr(&sign_of);
    }
}

} // namespace flowsplat
