// Temporal filtering, normalization, spatial resampling, and training-time
// spatial augmentation.
#pragma once

#include <array>
#include <optional>
#include <vector>

#include "sto/common.hpp"
#include "sto/volume.hpp"

namespace sto {

struct BandpassSpec {
    double low_hz = 0.01;
    double high_hz = 10.0;  // clamped to Nyquist; fMRI TRs put Nyquist far below 10 Hz
    double tr_seconds = 2.0;

    double nyquist() const { return 0.5 / tr_seconds; }
    double effective_high() const { return high_hz < nyquist() ? high_hz : nyquist(); }

    void validate() const {
        if (!(low_hz >= 0.0) || !(low_hz < high_hz))
            throw InvalidConfig("bandpass requires 0 <= low_hz < high_hz");
        if (!(tr_seconds > 0.0)) throw InvalidConfig("tr_seconds must be positive");
    }
};

// Ideal (brick-wall) frequency-domain filter: bins with frequency < low_hz or
// > min(high_hz, Nyquist) are zeroed, everything else passes untouched. The
// DC bin is removed whenever low_hz > 0, so the output is zero-mean.
std::vector<double> bandpass(const std::vector<double>& ts, const BandpassSpec& spec);

// In-place bandpass of every voxel series; out-of-mask voxels untouched when
// a mask is given.
void bandpass_volume(Volume4D& v, const BandpassSpec& spec, const MaskVolume* mask = nullptr);

// Zero-mean, unit population-std rescaling; all zeros if std < 1e-12.
std::vector<double> znormalize(const std::vector<double>& ts);
void znormalize_inplace(std::vector<double>& ts);

// Corner-aligned trilinear resampling to the target grid. Channels preserved.
Volume3D resample_to(const Volume3D& vol, int64_t tx, int64_t ty, int64_t tz);

// Sample vol through an affine map about the volume center: for each output
// voxel o, source = A_inv * (o - center) + center + shift_inv. Out-of-range
// samples fill with zero. Exposed separately from augment() so exact
// rotations/flips can be tested directly.
Volume3D warp_affine(const Volume3D& vol, const std::array<double, 9>& a_inv,
                     const std::array<double, 3>& shift_inv);

struct AugmentSpec {
    bool flip_x = false, flip_y = false, flip_z = false;  // axes allowed to flip (p = 0.5 each)
    double max_rotation_deg = 10.0;
    int max_translation_vox = 3;
    std::array<double, 2> scale_range{0.9, 1.1};
    uint64_t seed = 0;

    void validate() const {
        if (!(scale_range[0] > 0.0) || !(scale_range[0] <= scale_range[1]))
            throw InvalidConfig("scale_range must be positive with low <= high");
        if (max_rotation_deg < 0.0 || max_translation_vox < 0)
            throw InvalidConfig("augmentation magnitudes must be non-negative");
    }

    bool is_identity() const {
        return !flip_x && !flip_y && !flip_z && max_rotation_deg == 0.0 &&
               max_translation_vox == 0 && scale_range[0] == 1.0 && scale_range[1] == 1.0;
    }
};

// One random flip per allowed axis, a rotation about a random axis, an integer
// translation, and a uniform scale, composed into a single trilinear warp.
Volume3D augment(const Volume3D& vol, const AugmentSpec& spec, Rng& draw);

}  // namespace sto
