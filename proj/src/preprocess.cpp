#include "sto/preprocess.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <map>
#include <mutex>

namespace sto {

namespace {

// FFTW plan creation is not thread-safe; executions on distinct buffers are.
// Plans are cached per length and created with FFTW_UNALIGNED so the
// new-array execute functions accept plain std::vector storage.
struct FftPlans {
    fftw_plan forward;
    fftw_plan inverse;
};

FftPlans& plans_for(int n) {
    static std::map<int, FftPlans> cache;
    static std::mutex mtx;
    std::lock_guard<std::mutex> lock(mtx);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;

    std::vector<double> real(static_cast<size_t>(n));
    std::vector<std::complex<double>> cplx(static_cast<size_t>(n) / 2 + 1);
    FftPlans p;
    p.forward = fftw_plan_dft_r2c_1d(n, real.data(),
                                     reinterpret_cast<fftw_complex*>(cplx.data()),
                                     FFTW_ESTIMATE | FFTW_UNALIGNED);
    p.inverse = fftw_plan_dft_c2r_1d(n, reinterpret_cast<fftw_complex*>(cplx.data()),
                                     real.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
    return cache.emplace(n, p).first->second;
}

}  // namespace

std::vector<double> bandpass(const std::vector<double>& ts, const BandpassSpec& spec) {
    spec.validate();
    const int n = static_cast<int>(ts.size());
    if (n < 8) throw SequenceTooShort("bandpass needs at least 8 samples, got " + std::to_string(n));

    FftPlans& plans = plans_for(n);
    std::vector<double> real(ts);
    std::vector<std::complex<double>> spectrum(static_cast<size_t>(n) / 2 + 1);
    fftw_execute_dft_r2c(plans.forward, real.data(),
                         reinterpret_cast<fftw_complex*>(spectrum.data()));

    const double low = spec.low_hz;
    const double high = spec.effective_high();
    const double df = 1.0 / (static_cast<double>(n) * spec.tr_seconds);
    for (size_t k = 0; k < spectrum.size(); ++k) {
        double f = static_cast<double>(k) * df;
        if (f < low || f > high) spectrum[k] = 0.0;
    }

    std::vector<double> out(static_cast<size_t>(n));
    fftw_execute_dft_c2r(plans.inverse, reinterpret_cast<fftw_complex*>(spectrum.data()),
                         out.data());
    const double inv_n = 1.0 / static_cast<double>(n);
    for (double& v : out) v *= inv_n;
    return out;
}

void bandpass_volume(Volume4D& v, const BandpassSpec& spec, const MaskVolume* mask) {
    v.validate();
    if (mask) mask->check_matches(v.nx, v.ny, v.nz);
    const int64_t stride = v.voxels();
    std::vector<double> series(static_cast<size_t>(v.nt));
    for (int64_t i = 0; i < stride; ++i) {
        if (mask && mask->data[static_cast<size_t>(i)] == 0) continue;
        for (int64_t t = 0; t < v.nt; ++t)
            series[static_cast<size_t>(t)] = v.data[static_cast<size_t>(i + t * stride)];
        std::vector<double> filtered = bandpass(series, spec);
        for (int64_t t = 0; t < v.nt; ++t)
            v.data[static_cast<size_t>(i + t * stride)] = filtered[static_cast<size_t>(t)];
    }
}

void znormalize_inplace(std::vector<double>& ts) {
    if (ts.empty()) return;
    const double n = static_cast<double>(ts.size());
    double mean = 0.0;
    for (double v : ts) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : ts) var += (v - mean) * (v - mean);
    double sd = std::sqrt(var / n);
    if (sd < 1e-12) {
        for (double& v : ts) v = 0.0;
        return;
    }
    const double inv = 1.0 / sd;
    for (double& v : ts) v = (v - mean) * inv;
}

std::vector<double> znormalize(const std::vector<double>& ts) {
    std::vector<double> out(ts);
    znormalize_inplace(out);
    return out;
}

namespace {

inline double sample_trilinear(const Volume3D& vol, int64_t c, double sx, double sy, double sz,
                               bool zero_fill) {
    // With zero_fill, out-of-cube corners contribute 0 (constant extension by
    // zero); without it the caller guarantees in-range coordinates.
    if (zero_fill && (sx <= -1.0 || sy <= -1.0 || sz <= -1.0 || sx >= static_cast<double>(vol.nx) ||
                      sy >= static_cast<double>(vol.ny) || sz >= static_cast<double>(vol.nz)))
        return 0.0;
    int64_t x0 = static_cast<int64_t>(std::floor(sx));
    int64_t y0 = static_cast<int64_t>(std::floor(sy));
    int64_t z0 = static_cast<int64_t>(std::floor(sz));
    double fx = sx - static_cast<double>(x0);
    double fy = sy - static_cast<double>(y0);
    double fz = sz - static_cast<double>(z0);

    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz) {
        int64_t z = z0 + dz;
        if (z < 0 || z >= vol.nz) continue;
        double wz = dz ? fz : 1.0 - fz;
        for (int dy = 0; dy < 2; ++dy) {
            int64_t y = y0 + dy;
            if (y < 0 || y >= vol.ny) continue;
            double wy = dy ? fy : 1.0 - fy;
            for (int dx = 0; dx < 2; ++dx) {
                int64_t x = x0 + dx;
                if (x < 0 || x >= vol.nx) continue;
                double wx = dx ? fx : 1.0 - fx;
                acc += wx * wy * wz * vol.at(x, y, z, c);
            }
        }
    }
    return acc;
}

}  // namespace

Volume3D resample_to(const Volume3D& vol, int64_t tx, int64_t ty, int64_t tz) {
    vol.validate();
    if (vol.nx < 2 || vol.ny < 2 || vol.nz < 2)
        throw ExtentMismatch("resample source needs extents >= 2 per axis");
    if (tx < 1 || ty < 1 || tz < 1) throw InvalidTarget("target extents must be >= 1");

    // corner-aligned: target corner voxels map onto source corner voxels
    auto src_coord = [](int64_t i, int64_t target_n, int64_t source_n) {
        if (target_n == 1) return 0.5 * static_cast<double>(source_n - 1);
        return static_cast<double>(i) * static_cast<double>(source_n - 1) /
               static_cast<double>(target_n - 1);
    };

    Volume3D out(tx, ty, tz, vol.channels);
    out.spacing_mm = vol.spacing_mm;
    for (int64_t c = 0; c < vol.channels; ++c)
        for (int64_t z = 0; z < tz; ++z) {
            double sz = src_coord(z, tz, vol.nz);
            for (int64_t y = 0; y < ty; ++y) {
                double sy = src_coord(y, ty, vol.ny);
                for (int64_t x = 0; x < tx; ++x) {
                    double sx = src_coord(x, tx, vol.nx);
                    out.at(x, y, z, c) = sample_trilinear(vol, c, sx, sy, sz, false);
                }
            }
        }
    return out;
}

Volume3D warp_affine(const Volume3D& vol, const std::array<double, 9>& a_inv,
                     const std::array<double, 3>& shift_inv) {
    vol.validate();
    const double cx = 0.5 * static_cast<double>(vol.nx - 1);
    const double cy = 0.5 * static_cast<double>(vol.ny - 1);
    const double cz = 0.5 * static_cast<double>(vol.nz - 1);

    Volume3D out(vol.nx, vol.ny, vol.nz, vol.channels);
    out.spacing_mm = vol.spacing_mm;
    for (int64_t c = 0; c < vol.channels; ++c)
        for (int64_t z = 0; z < vol.nz; ++z)
            for (int64_t y = 0; y < vol.ny; ++y)
                for (int64_t x = 0; x < vol.nx; ++x) {
                    double ox = static_cast<double>(x) - cx;
                    double oy = static_cast<double>(y) - cy;
                    double oz = static_cast<double>(z) - cz;
                    double sx = a_inv[0] * ox + a_inv[1] * oy + a_inv[2] * oz + cx + shift_inv[0];
                    double sy = a_inv[3] * ox + a_inv[4] * oy + a_inv[5] * oz + cy + shift_inv[1];
                    double sz = a_inv[6] * ox + a_inv[7] * oy + a_inv[8] * oz + cz + shift_inv[2];
                    out.at(x, y, z, c) = sample_trilinear(vol, c, sx, sy, sz, true);
                }
    return out;
}

Volume3D augment(const Volume3D& vol, const AugmentSpec& spec, Rng& draw) {
    spec.validate();

    // Draw order is frozen: flips, rotation axis, angle, translation, scale.
    double fx = (spec.flip_x && draw.next_double() < 0.5) ? -1.0 : 1.0;
    double fy = (spec.flip_y && draw.next_double() < 0.5) ? -1.0 : 1.0;
    double fz = (spec.flip_z && draw.next_double() < 0.5) ? -1.0 : 1.0;
    int rot_axis = static_cast<int>(draw.next_below(3));
    double angle = draw.uniform(-spec.max_rotation_deg, spec.max_rotation_deg) * M_PI / 180.0;
    double t[3];
    for (int i = 0; i < 3; ++i) {
        int64_t span = 2 * static_cast<int64_t>(spec.max_translation_vox) + 1;
        t[i] = static_cast<double>(static_cast<int64_t>(draw.next_below(static_cast<uint64_t>(span))) -
                                   spec.max_translation_vox);
    }
    double s = draw.uniform(spec.scale_range[0], spec.scale_range[1]);

    // forward map: p_out = s * R * F * (p_in - c) + c + t
    // sampling map: p_in = F * R^T * (p_out - c - t)/s + c
    double ca = std::cos(angle), sa = std::sin(angle);
    std::array<double, 9> r{1, 0, 0, 0, 1, 0, 0, 0, 1};
    switch (rot_axis) {
        case 0: r = {1, 0, 0, 0, ca, -sa, 0, sa, ca}; break;   // about x
        case 1: r = {ca, 0, sa, 0, 1, 0, -sa, 0, ca}; break;   // about y
        default: r = {ca, -sa, 0, sa, ca, 0, 0, 0, 1}; break;  // about z
    }
    std::array<double, 9> a_inv;  // F * R^T / s  (F and its inverse coincide)
    double f[3] = {fx, fy, fz};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) a_inv[static_cast<size_t>(3 * i + j)] = f[i] * r[static_cast<size_t>(3 * j + i)] / s;

    std::array<double, 3> shift_inv;
    for (int i = 0; i < 3; ++i)
        shift_inv[static_cast<size_t>(i)] =
            -(a_inv[static_cast<size_t>(3 * i)] * t[0] + a_inv[static_cast<size_t>(3 * i + 1)] * t[1] +
              a_inv[static_cast<size_t>(3 * i + 2)] * t[2]);

    return warp_affine(vol, a_inv, shift_inv);
}

}  // namespace sto
