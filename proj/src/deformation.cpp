#include "flowsplat/deformation.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "flowsplat/error.hpp"
#include "flowsplat/rng.hpp"

namespace flowsplat {

namespace {

constexpr int kIn = DeformationField::kInputDim;
constexpr int kHid = DeformationField::kHidden;
constexpr int kOut = 3;

constexpr int kW1 = kHid * kIn;
constexpr int kB1 = kHid;
constexpr int kW2 = kHid * kHid;
constexpr int kB2 = kHid;
constexpr int kW3 = kOut * kHid;
constexpr int kB3 = kOut;
constexpr int kTotal = kW1 + kB1 + kW2 + kB2 + kW3 + kB3;

constexpr int kOffW1 = 0;
constexpr int kOffB1 = kOffW1 + kW1;
constexpr int kOffW2 = kOffB1 + kB1;
constexpr int kOffB2 = kOffW2 + kW2;
constexpr int kOffW3 = kOffB2 + kB2;
constexpr int kOffB3 = kOffW3 + kW3;

using VecIn = Eigen::Matrix<double, kIn, 1>;
using VecHid = Eigen::Matrix<double, kHid, 1>;

// Octave progressions topping out at 4*pi (quarter-unit wavelength): high
// enough to separate desk-scale scene groups, low enough that a few hundred
// supervision points constrain the field between samples.
constexpr double kSpaceBaseFreq = std::numbers::pi / 8.0;
constexpr double kTimeBaseFreq = std::numbers::pi / 2.0;

void encode(const Vector3d& x, double t, VecIn& f) {
    int idx = 0;
    for (int d = 0; d < 3; ++d) {
        double freq = kSpaceBaseFreq;
        for (int k = 0; k < DeformationField::kSpaceBands; ++k) {
            f[idx++] = std::sin(freq * x[d]);
            f[idx++] = std::cos(freq * x[d]);
            freq *= 2.0;
        }
    }
    double freq = kTimeBaseFreq;
    for (int k = 0; k < DeformationField::kTimeBands; ++k) {
        f[idx++] = std::sin(freq * t);
        f[idx++] = std::cos(freq * t);
        freq *= 2.0;
    }
}

// d(features)/dx, sparse: feature pairs (sin, cos) of x[d] only.
Vector3d encoding_input_grad(const Vector3d& x, const VecIn& d_feat) {
    Vector3d out = Vector3d::Zero();
    int idx = 0;
    for (int d = 0; d < 3; ++d) {
        double freq = kSpaceBaseFreq;
        for (int k = 0; k < DeformationField::kSpaceBands; ++k) {
            out[d] += d_feat[idx++] * freq * std::cos(freq * x[d]);
            out[d] += d_feat[idx++] * -freq * std::sin(freq * x[d]);
            freq *= 2.0;
        }
    }
    return out;
}

} // namespace

struct DeformationField::Trace {
    VecIn feat;
    VecHid h1;
    VecHid h2;
    Vector3d out;
};

DeformationField::DeformationField(uint64_t seed) : weights_(kTotal, 0.0) {
    Rng rng(seed ^ 0xf5df0001ull);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(kIn));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(kHid));
    for (int i = 0; i < kW1; ++i) weights_[kOffW1 + i] = rng.normal(0.0, s1);
    for (int i = 0; i < kW2; ++i) weights_[kOffW2 + i] = rng.normal(0.0, s2);
    // near-identity start: tiny final layer
    for (int i = 0; i < kW3; ++i) weights_[kOffW3 + i] = rng.normal(0.0, s2 * 1e-4);
}

void DeformationField::forward_trace(const Vector3d& x, double t, Trace& trace) const {
    encode(x, t, trace.feat);
    const double* w = weights_.data();
    Eigen::Map<const Eigen::Matrix<double, kHid, kIn, Eigen::RowMajor>> w1(w + kOffW1);
    Eigen::Map<const VecHid> b1(w + kOffB1);
    Eigen::Map<const Eigen::Matrix<double, kHid, kHid, Eigen::RowMajor>> w2(w + kOffW2);
    Eigen::Map<const VecHid> b2(w + kOffB2);
    Eigen::Map<const Eigen::Matrix<double, kOut, kHid, Eigen::RowMajor>> w3(w + kOffW3);
    Eigen::Map<const Vector3d> b3(w + kOffB3);

    trace.h1 = (w1 * trace.feat + b1).array().tanh();
    trace.h2 = (w2 * trace.h1 + b2).array().tanh();
    trace.out = w3 * trace.h2 + b3;
}

Vector3d DeformationField::displacement(const Vector3d& x, double t) const {
    Trace trace;
    forward_trace(x, t, trace);
    return trace.out;
}

Vector3d DeformationField::backward(const Vector3d& x, double t, const Vector3d& d_out,
                                    double* param_grad) const {
    Trace trace;
    forward_trace(x, t, trace);
    const double* w = weights_.data();
    Eigen::Map<const Eigen::Matrix<double, kHid, kIn, Eigen::RowMajor>> w1(w + kOffW1);
    Eigen::Map<const Eigen::Matrix<double, kHid, kHid, Eigen::RowMajor>> w2(w + kOffW2);
    Eigen::Map<const Eigen::Matrix<double, kOut, kHid, Eigen::RowMajor>> w3(w + kOffW3);

    const VecHid dh2 = w3.transpose() * d_out;
    const VecHid dz2 = dh2.array() * (1.0 - trace.h2.array().square());
    const VecHid dh1 = w2.transpose() * dz2;
    const VecHid dz1 = dh1.array() * (1.0 - trace.h1.array().square());
    const VecIn dfeat = w1.transpose() * dz1;

    if (param_grad) {
        Eigen::Map<Eigen::Matrix<double, kHid, kIn, Eigen::RowMajor>> gw1(param_grad + kOffW1);
        Eigen::Map<VecHid> gb1(param_grad + kOffB1);
        Eigen::Map<Eigen::Matrix<double, kHid, kHid, Eigen::RowMajor>> gw2(param_grad + kOffW2);
        Eigen::Map<VecHid> gb2(param_grad + kOffB2);
        Eigen::Map<Eigen::Matrix<double, kOut, kHid, Eigen::RowMajor>> gw3(param_grad + kOffW3);
        Eigen::Map<Vector3d> gb3(param_grad + kOffB3);
        gw3 += d_out * trace.h2.transpose();
        gb3 += d_out;
        gw2 += dz2 * trace.h1.transpose();
        gb2 += dz2;
        gw1 += dz1 * trace.feat.transpose();
        gb1 += dz1;
    }
    return encoding_input_grad(x, dfeat);
}

namespace {

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("field checkpoint truncated");
    return v;
}

} // namespace

void DeformationField::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out.write("FSDF", 4);
    write_raw<uint32_t>(out, 1u); // version
    write_raw<uint32_t>(out, 3u); // layer count
    const uint32_t dims[3][2] = {{kHid, kIn}, {kHid, kHid}, {kOut, kHid}};
    for (const auto& d : dims) {
        write_raw<uint32_t>(out, d[0]);
        write_raw<uint32_t>(out, d[1]);
    }
    out.write(reinterpret_cast<const char*>(weights_.data()),
              static_cast<std::streamsize>(weights_.size() * sizeof(double)));
    if (!out) throw DataError("short write to " + path);
}

DeformationField DeformationField::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "FSDF", 4) != 0)
        throw DataError(path + ": not a field checkpoint (bad magic)");
    const uint32_t version = read_raw<uint32_t>(in);
    if (version != 1u) throw DataError(path + ": unsupported checkpoint version");
    const uint32_t layers = read_raw<uint32_t>(in);
    if (layers != 3u) throw DataError(path + ": unexpected layer count");
    const uint32_t expect[3][2] = {{kHid, kIn}, {kHid, kHid}, {kOut, kHid}};
    for (const auto& e : expect) {
        const uint32_t rows = read_raw<uint32_t>(in);
        const uint32_t cols = read_raw<uint32_t>(in);
        if (rows != e[0] || cols != e[1])
            throw DataError(path + ": layer shape mismatch");
    }
    DeformationField field(0);
    in.read(reinterpret_cast<char*>(field.weights_.data()),
            static_cast<std::streamsize>(field.weights_.size() * sizeof(double)));
    if (!in) throw DataError(path + ": weight block truncated");
    return field;
}

std::optional<Vector2d> gaussian_velocity_2d(const DeformationField& field,
                                             const Gaussian3D& g, TimeStamp t,
                                             TimeStamp to, const CameraModel& cam) {
    const auto p_from = project_point(cam, field.deform(g.mu0, t.t));
    if (!p_from) return std::nullopt;
    const auto p_to = project_point(cam, field.deform(g.mu0, to.t));
    if (!p_to) return std::nullopt;
    return Vector2d(p_to->pixel - p_from->pixel);
}

Matrix3d deformation_jacobian(const DeformationField& field, const Vector3d& mu0,
                              double t, double delta) {
    Matrix3d j;
    for (int axis = 0; axis < 3; ++axis) {
        Vector3d hi = mu0, lo = mu0;
        hi[axis] += delta;
        lo[axis] -= delta;
        const Vector3d diff = (field.deform(hi, t) - field.deform(lo, t)) / (2.0 * delta);
        j.col(axis) = diff;
    }
    return j;
}

} // namespace flowsplat
