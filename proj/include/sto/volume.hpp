// Core volumetric value types shared by every stage of the pipeline.
//
// Storage order is x-fastest throughout: a 4D volume stores
// data[x + X*(y + Y*(z + Z*t))], a multi-channel 3D volume uses the channel
// index in place of t. Orientation/affine information is deliberately not
// carried; volumes are treated in stored index order.
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "sto/common.hpp"

namespace sto {

struct Volume3D {
    int64_t nx = 0, ny = 0, nz = 0;
    int64_t channels = 1;
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    std::vector<double> data;

    Volume3D() = default;
    Volume3D(int64_t x, int64_t y, int64_t z, int64_t c = 1)
        : nx(x), ny(y), nz(z), channels(c), data(static_cast<size_t>(x * y * z * c), 0.0) {}

    int64_t voxels() const { return nx * ny * nz; }
    size_t index(int64_t x, int64_t y, int64_t z, int64_t c = 0) const {
        return static_cast<size_t>(x + nx * (y + ny * (z + nz * c)));
    }
    double& at(int64_t x, int64_t y, int64_t z, int64_t c = 0) { return data[index(x, y, z, c)]; }
    double at(int64_t x, int64_t y, int64_t z, int64_t c = 0) const { return data[index(x, y, z, c)]; }

    void validate() const {
        if (nx < 1 || ny < 1 || nz < 1 || channels < 1)
            throw ExtentMismatch("Volume3D extents must be positive");
        if (data.size() != static_cast<size_t>(nx * ny * nz * channels))
            throw ExtentMismatch("Volume3D data length does not match extents");
    }
};

struct Volume4D {
    int64_t nx = 0, ny = 0, nz = 0, nt = 0;
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    double tr_seconds = 0.0;
    std::vector<double> data;

    Volume4D() = default;
    Volume4D(int64_t x, int64_t y, int64_t z, int64_t t)
        : nx(x), ny(y), nz(z), nt(t), data(static_cast<size_t>(x * y * z * t), 0.0) {}

    int64_t voxels() const { return nx * ny * nz; }
    size_t index(int64_t x, int64_t y, int64_t z, int64_t t) const {
        return static_cast<size_t>(x + nx * (y + ny * (z + nz * t)));
    }
    double& at(int64_t x, int64_t y, int64_t z, int64_t t) { return data[index(x, y, z, t)]; }
    double at(int64_t x, int64_t y, int64_t z, int64_t t) const { return data[index(x, y, z, t)]; }

    void validate() const {
        if (nx < 1 || ny < 1 || nz < 1)
            throw ExtentMismatch("Volume4D extents must be positive");
        if (nt < 2) throw ExtentMismatch("Volume4D needs at least 2 time points");
        if (data.size() != static_cast<size_t>(nx * ny * nz * nt))
            throw ExtentMismatch("Volume4D data length does not match extents");
    }
};

struct MaskVolume {
    int64_t nx = 0, ny = 0, nz = 0;
    std::vector<uint8_t> data;  // nonzero = in-brain

    MaskVolume() = default;
    MaskVolume(int64_t x, int64_t y, int64_t z)
        : nx(x), ny(y), nz(z), data(static_cast<size_t>(x * y * z), 0) {}

    size_t index(int64_t x, int64_t y, int64_t z) const {
        return static_cast<size_t>(x + nx * (y + ny * z));
    }
    bool in(int64_t x, int64_t y, int64_t z) const { return data[index(x, y, z)] != 0; }
    void set(int64_t x, int64_t y, int64_t z, bool v) { data[index(x, y, z)] = v ? 1 : 0; }

    int64_t count() const {
        int64_t n = 0;
        for (uint8_t v : data) n += (v != 0);
        return n;
    }

    void check_matches(int64_t x, int64_t y, int64_t z) const {
        if (nx != x || ny != y || nz != z)
            throw ExtentMismatch("mask extents do not match volume extents");
        if (count() == 0) throw ExtentMismatch("mask has no in-brain voxels");
    }
};

// The T samples of one voxel, in temporal order.
inline std::vector<double> voxel_timeseries(const Volume4D& v, int64_t x, int64_t y, int64_t z) {
    if (x < 0 || x >= v.nx || y < 0 || y >= v.ny || z < 0 || z >= v.nz)
        throw IndexOutOfBounds("voxel index outside volume extents");
    std::vector<double> ts(static_cast<size_t>(v.nt));
    const int64_t stride = v.nx * v.ny * v.nz;
    const double* base = v.data.data() + v.index(x, y, z, 0);
    for (int64_t t = 0; t < v.nt; ++t) ts[static_cast<size_t>(t)] = base[t * stride];
    return ts;
}

}  // namespace sto
