// Reader/writer for a restricted subset of the NIfTI-1 format.
//
// Supported: single-file images (magic "n+1"), 3D or 4D, datatypes uint8,
// int16, int32, float32, float64, little- or big-endian (detected via the
// sizeof_hdr byte pattern), optional gzip envelope (0x1F 0x8B prefix).
// Orientation fields (qform/sform) are ignored; data are used in stored
// index order. Not supported: NIfTI-2, CIFTI, header extensions, separate
// .hdr/.img pairs.
#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "sto/volume.hpp"

namespace sto {

// NIfTI-1 datatype codes (the accepted subset).
enum class NiftiDatatype : int16_t {
    Uint8 = 2,
    Int16 = 4,
    Int32 = 8,
    Float32 = 16,
    Float64 = 64,
};

struct NiftiHeader {
    int32_t sizeof_hdr = 348;
    int16_t dim[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    int16_t datatype_code = 0;
    int16_t bitpix = 0;
    float pixdim[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    float vox_offset = 352.0f;
    float scl_slope = 0.0f;
    float scl_inter = 0.0f;
    char magic[4] = {'n', '+', '1', '\0'};
    bool byte_swapped = false;  // input was opposite-endian

    int64_t payload_elements() const {
        int64_t n = 1;
        for (int i = 1; i <= dim[0]; ++i) n *= dim[i];
        return n;
    }
};

using ParsedVolume = std::variant<Volume3D, Volume4D>;

struct NiftiImage {
    NiftiHeader header;
    ParsedVolume volume;
};

// Parse a complete in-memory NIfTI-1 byte sequence (gzip envelope allowed).
NiftiImage parse_nifti(const std::vector<unsigned char>& bytes);

// Serialize a volume as a single-file NIfTI-1 image (header + 4 pad bytes +
// payload at offset 352, native little-endian). Multi-channel 3D volumes are
// stored with channels as the 4th dimension and pixdim[4] = 0.
std::vector<unsigned char> write_nifti(const Volume4D& v, NiftiDatatype dtype = NiftiDatatype::Float64);
std::vector<unsigned char> write_nifti(const Volume3D& v, NiftiDatatype dtype = NiftiDatatype::Float64);

// File convenience wrappers; a ".gz" suffix selects gzip compression.
NiftiImage read_nifti_file(const std::string& path);
void write_nifti_file(const std::string& path, const Volume4D& v,
                      NiftiDatatype dtype = NiftiDatatype::Float64);
void write_nifti_file(const std::string& path, const Volume3D& v,
                      NiftiDatatype dtype = NiftiDatatype::Float64);

// Nonzero voxels of a parsed volume as a mask.
MaskVolume to_mask(const Volume3D& v);

// gzip helpers (exposed for tests)
bool looks_gzipped(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> gzip_compress(const std::vector<unsigned char>& raw);
std::vector<unsigned char> gzip_decompress(const std::vector<unsigned char>& compressed);

std::vector<unsigned char> read_binary_file(const std::string& path);
void write_binary_file(const std::string& path, const std::vector<unsigned char>& bytes);

}  // namespace sto
