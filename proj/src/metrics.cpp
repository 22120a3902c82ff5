#include "flowsplat/metrics.hpp"

#include <cmath>
#include <json.hpp>

#include "flowsplat/error.hpp"
#include "flowsplat/image_io.hpp"
#include "flowsplat/parallel.hpp"
#include "flowsplat/rasterizer.hpp"

namespace flowsplat {

using nlohmann::json;

namespace {

double mse_to_psnr(double mse) {
    if (mse < 1e-10) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

} // namespace

double psnr(const ImageRGB& a, const ImageRGB& b) {
    require_same_shape(a, b, "psnr");
    double sum = 0.0;
    for (size_t i = 0; i < a.data().size(); ++i)
        sum += (a.data()[i] - b.data()[i]).squaredNorm();
    return mse_to_psnr(sum / (3.0 * static_cast<double>(a.size())));
}

std::optional<double> dpsnr(const ImageRGB& a, const ImageRGB& b, const ImageBool& mask) {
    require_same_shape(a, b, "dpsnr");
    require_same_shape(a, mask, "dpsnr");
    double sum = 0.0;
    long count = 0;
    for (size_t i = 0; i < a.data().size(); ++i) {
        if (!mask.data()[i]) continue;
        sum += (a.data()[i] - b.data()[i]).squaredNorm();
        ++count;
    }
    if (count == 0) return std::nullopt;
    return mse_to_psnr(sum / (3.0 * count));
}

namespace {

constexpr int kSsimWindow = 11;
constexpr int kSsimHalf = kSsimWindow / 2;

const std::vector<double>& ssim_kernel() {
    static const std::vector<double> kernel = [] {
        std::vector<double> k(kSsimWindow);
        const double sigma = 1.5;
        double sum = 0.0;
        for (int i = 0; i < kSsimWindow; ++i) {
            const double d = i - kSsimHalf;
            k[i] = std::exp(-0.5 * d * d / (sigma * sigma));
            sum += k[i];
        }
        for (auto& v : k) v /= sum;
        return k;
    }();
    return kernel;
}

// Separable Gaussian filter evaluated only where the window fits.
ImageScalar gauss_filter(const ImageScalar& img) {
    const auto& k = ssim_kernel();
    ImageScalar tmp(img.width(), img.height(), 0.0);
    for (int y = 0; y < img.height(); ++y)
        for (int x = kSsimHalf; x < img.width() - kSsimHalf; ++x) {
            double s = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) s += k[i] * img.at(x - kSsimHalf + i, y);
            tmp.at(x, y) = s;
        }
    ImageScalar out(img.width(), img.height(), 0.0);
    for (int y = kSsimHalf; y < img.height() - kSsimHalf; ++y)
        for (int x = kSsimHalf; x < img.width() - kSsimHalf; ++x) {
            double s = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) s += k[i] * tmp.at(x, y - kSsimHalf + i);
            out.at(x, y) = s;
        }
    return out;
}

double ssim_channel(const ImageScalar& a, const ImageScalar& b) {
    const double c1 = 0.01 * 0.01;
    const double c2 = 0.03 * 0.03;
    const int w = a.width(), h = a.height();
    if (w < kSsimWindow || h < kSsimWindow)
        throw ShapeMismatch("ssim: image smaller than the 11x11 window");

    ImageScalar aa(w, h), bb(w, h), ab(w, h);
    for (size_t i = 0; i < a.data().size(); ++i) {
        aa.data()[i] = a.data()[i] * a.data()[i];
        bb.data()[i] = b.data()[i] * b.data()[i];
        ab.data()[i] = a.data()[i] * b.data()[i];
    }
    const ImageScalar mu_a = gauss_filter(a);
    const ImageScalar mu_b = gauss_filter(b);
    const ImageScalar m_aa = gauss_filter(aa);
    const ImageScalar m_bb = gauss_filter(bb);
    const ImageScalar m_ab = gauss_filter(ab);

    double sum = 0.0;
    long count = 0;
    for (int y = kSsimHalf; y < h - kSsimHalf; ++y)
        for (int x = kSsimHalf; x < w - kSsimHalf; ++x) {
            const double ma = mu_a.at(x, y), mb = mu_b.at(x, y);
            const double va = m_aa.at(x, y) - ma * ma;
            const double vb = m_bb.at(x, y) - mb * mb;
            const double cov = m_ab.at(x, y) - ma * mb;
            const double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            sum += num / den;
            ++count;
        }
    return sum / count;
}

} // namespace

double ssim(const ImageRGB& a, const ImageRGB& b) {
    require_same_shape(a, b, "ssim");
    double total = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
        ImageScalar ca(a.width(), a.height()), cb(a.width(), a.height());
        for (size_t i = 0; i < a.data().size(); ++i) {
            ca.data()[i] = a.data()[i][ch];
            cb.data()[i] = b.data()[i][ch];
        }
        total += ssim_channel(ca, cb);
    }
    return total / 3.0;
}

std::optional<double> velocity_epe(const ImageVec2& rendered, const FlowField& truth) {
    require_same_shape(rendered, truth.data, "velocity_epe");
    require_same_shape(rendered, truth.valid, "velocity_epe");
    double sum = 0.0;
    long count = 0;
    for (int y = 0; y < rendered.height(); ++y)
        for (int x = 0; x < rendered.width(); ++x) {
            if (!truth.valid.at(x, y)) continue;
            sum += (rendered.at(x, y) - truth.data.at(x, y)).norm();
            ++count;
        }
    if (count == 0) return std::nullopt;
    return sum / count;
}

EvalReport evaluate_scene(const CanonicalScene& scene, const DeformationField& field,
                          const Dataset& dataset, const std::vector<int>& cameras) {
    EvalReport report;
    double psnr_sum = 0.0, ssim_sum = 0.0;
    double dpsnr_sum = 0.0, epe_sum = 0.0;
    long n_frames = 0, n_dpsnr = 0, n_epe = 0;

    for (int cam_index : cameras) {
        const CameraModel& cam = dataset.cameras.at(cam_index);
        std::vector<FrameEval> evals(dataset.n_frames);
        parallel_for(0, dataset.n_frames, [&](int k) {
            const TimeStamp t = TimeStamp::frame(k, dataset.n_frames);
            const RenderBuffers buffers = render(scene, field, t, t.next(), cam);
            FrameEval fe;
            fe.frame = k;
            fe.camera = cam_index;
            const ImageRGB rendered = quantize_image(buffers.color);
            const ImageRGB& truth = dataset.images[cam_index][k];
            fe.psnr = psnr(rendered, truth);
            fe.ssim = ssim(rendered, truth);
            fe.dpsnr = dpsnr(rendered, truth, dataset.masks[cam_index][k].mask);
            if (k < dataset.n_frames - 1)
                fe.epe = velocity_epe(buffers.velocity, dataset.flows[cam_index][k]);
            evals[k] = fe;
        }, 1);
        for (const auto& fe : evals) {
            report.frames.push_back(fe);
            psnr_sum += fe.psnr;
            ssim_sum += fe.ssim;
            ++n_frames;
            if (fe.dpsnr) {
                dpsnr_sum += *fe.dpsnr;
                ++n_dpsnr;
            }
            if (fe.epe) {
                epe_sum += *fe.epe;
                ++n_epe;
            }
        }
    }
    if (n_frames > 0) {
        report.psnr = psnr_sum / n_frames;
        report.ssim = ssim_sum / n_frames;
    }
    if (n_dpsnr > 0) report.dpsnr = dpsnr_sum / n_dpsnr;
    if (n_epe > 0) report.velocity_epe = epe_sum / n_epe;
    return report;
}

std::string eval_report_to_json(const EvalReport& report) {
    auto opt_json = [](const std::optional<double>& v) {
        return v ? json(*v) : json("n/a");
    };
    json doc;
    doc["psnr"] = report.psnr;
    doc["dpsnr"] = opt_json(report.dpsnr);
    doc["ssim"] = report.ssim;
    doc["velocity_epe"] = opt_json(report.velocity_epe);
    json frames = json::array();
    for (const auto& fe : report.frames) {
        json f;
        f["frame"] = fe.frame;
        f["camera"] = fe.camera;
        f["psnr"] = fe.psnr;
        f["dpsnr"] = opt_json(fe.dpsnr);
        f["ssim"] = fe.ssim;
        f["epe"] = opt_json(fe.epe);
        frames.push_back(f);
    }
    doc["frames"] = frames;
    return doc.dump(2) + "\n";
}

} // namespace flowsplat
