#include "sto/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

namespace sto {

namespace {

constexpr size_t kHeaderSize = 348;
constexpr size_t kMinFileSize = 352;  // header + 4 extension pad bytes

template <typename T>
T swap_bytes(T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
}

template <typename T>
T read_at(const unsigned char* p, size_t offset, bool swapped) {
    T v;
    std::memcpy(&v, p + offset, sizeof(T));
    return swapped ? swap_bytes(v) : v;
}

template <typename T>
void write_at(std::vector<unsigned char>& buf, size_t offset, T v) {
    std::memcpy(buf.data() + offset, &v, sizeof(T));
}

int expected_bitpix(int16_t code) {
    switch (static_cast<NiftiDatatype>(code)) {
        case NiftiDatatype::Uint8: return 8;
        case NiftiDatatype::Int16: return 16;
        case NiftiDatatype::Int32: return 32;
        case NiftiDatatype::Float32: return 32;
        case NiftiDatatype::Float64: return 64;
    }
    return -1;
}

template <typename T>
void decode_payload(const unsigned char* src, int64_t n, bool swapped, double slope,
                    double inter, bool scale, std::vector<double>& out) {
    for (int64_t i = 0; i < n; ++i) {
        T raw;
        std::memcpy(&raw, src + i * sizeof(T), sizeof(T));
        if (swapped) raw = swap_bytes(raw);
        double v = static_cast<double>(raw);
        out[static_cast<size_t>(i)] = scale ? slope * v + inter : v;
    }
}

std::vector<unsigned char> serialize(const int16_t dim[8], const float pixdim[8],
                                     const std::vector<double>& data, NiftiDatatype dtype) {
    size_t bytes_per = static_cast<size_t>(expected_bitpix(static_cast<int16_t>(dtype))) / 8;
    std::vector<unsigned char> buf(kMinFileSize + data.size() * bytes_per, 0);

    write_at<int32_t>(buf, 0, 348);
    buf[38] = 'r';  // "regular" flag, conventional
    for (int i = 0; i < 8; ++i) write_at<int16_t>(buf, 40 + 2 * i, dim[i]);
    write_at<int16_t>(buf, 70, static_cast<int16_t>(dtype));
    write_at<int16_t>(buf, 72, static_cast<int16_t>(expected_bitpix(static_cast<int16_t>(dtype))));
    for (int i = 0; i < 8; ++i) write_at<float>(buf, 76 + 4 * i, pixdim[i]);
    write_at<float>(buf, 108, 352.0f);
    // scl_slope = 0 means "no scaling": keeps the float64 path bit-exact
    write_at<float>(buf, 112, 0.0f);
    write_at<float>(buf, 116, 0.0f);
    buf[344] = 'n';
    buf[345] = '+';
    buf[346] = '1';
    buf[347] = '\0';

    unsigned char* dst = buf.data() + kMinFileSize;
    switch (dtype) {
        case NiftiDatatype::Float64: {
            std::memcpy(dst, data.data(), data.size() * sizeof(double));
            break;
        }
        case NiftiDatatype::Float32: {
            for (size_t i = 0; i < data.size(); ++i) {
                float f = static_cast<float>(data[i]);
                std::memcpy(dst + i * 4, &f, 4);
            }
            break;
        }
        case NiftiDatatype::Int32: {
            for (size_t i = 0; i < data.size(); ++i) {
                int32_t v = static_cast<int32_t>(std::llround(data[i]));
                std::memcpy(dst + i * 4, &v, 4);
            }
            break;
        }
        case NiftiDatatype::Int16: {
            for (size_t i = 0; i < data.size(); ++i) {
                int16_t v = static_cast<int16_t>(std::llround(data[i]));
                std::memcpy(dst + i * 2, &v, 2);
            }
            break;
        }
        case NiftiDatatype::Uint8: {
            for (size_t i = 0; i < data.size(); ++i)
                dst[i] = static_cast<unsigned char>(std::llround(data[i]));
            break;
        }
    }
    return buf;
}

}  // namespace

bool looks_gzipped(const std::vector<unsigned char>& bytes) {
    return bytes.size() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B;
}

std::vector<unsigned char> gzip_decompress(const std::vector<unsigned char>& compressed) {
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 16) != Z_OK) throw IoError("inflateInit2 failed");
    std::vector<unsigned char> out;
    out.reserve(compressed.size() * 4);
    std::vector<unsigned char> chunk(1 << 16);
    zs.next_in = const_cast<Bytef*>(compressed.data());
    zs.avail_in = static_cast<uInt>(compressed.size());
    int ret = Z_OK;
    do {
        zs.next_out = chunk.data();
        zs.avail_out = static_cast<uInt>(chunk.size());
        ret = inflate(&zs, Z_NO_FLUSH);
        if (ret != Z_OK && ret != Z_STREAM_END) {
            inflateEnd(&zs);
            throw TruncatedData("gzip stream is corrupt or truncated");
        }
        out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    } while (ret != Z_STREAM_END && (zs.avail_in > 0 || zs.avail_out == 0));
    inflateEnd(&zs);
    if (ret != Z_STREAM_END) throw TruncatedData("gzip stream ended prematurely");
    return out;
}

std::vector<unsigned char> gzip_compress(const std::vector<unsigned char>& raw) {
    z_stream zs{};
    if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
        throw IoError("deflateInit2 failed");
    std::vector<unsigned char> out;
    std::vector<unsigned char> chunk(1 << 16);
    zs.next_in = const_cast<Bytef*>(raw.data());
    zs.avail_in = static_cast<uInt>(raw.size());
    int ret;
    do {
        zs.next_out = chunk.data();
        zs.avail_out = static_cast<uInt>(chunk.size());
        ret = deflate(&zs, Z_FINISH);
        out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    } while (ret != Z_STREAM_END);
    deflateEnd(&zs);
    return out;
}

NiftiImage parse_nifti(const std::vector<unsigned char>& raw_bytes) {
    const std::vector<unsigned char>* bytes = &raw_bytes;
    std::vector<unsigned char> inflated;
    if (looks_gzipped(raw_bytes)) {
        inflated = gzip_decompress(raw_bytes);
        bytes = &inflated;
    }
    if (bytes->size() < kMinFileSize)
        throw TruncatedData("file shorter than the 352-byte NIfTI-1 preamble");
    const unsigned char* p = bytes->data();

    int32_t hdr_size_native = read_at<int32_t>(p, 0, false);
    bool swapped;
    if (hdr_size_native == 348) {
        swapped = false;
    } else if (swap_bytes(hdr_size_native) == 348) {
        swapped = true;
    } else {
        throw MalformedHeader("sizeof_hdr is not 348 in either byte order");
    }

    NiftiHeader hdr;
    hdr.byte_swapped = swapped;
    hdr.sizeof_hdr = 348;
    std::memcpy(hdr.magic, p + 344, 4);
    bool magic_ok = (std::memcmp(hdr.magic, "n+1", 4) == 0) || (std::memcmp(hdr.magic, "ni1", 4) == 0);
    if (!magic_ok) throw MalformedHeader("magic is neither \"n+1\" nor \"ni1\"");

    for (int i = 0; i < 8; ++i) hdr.dim[i] = read_at<int16_t>(p, 40 + 2 * i, swapped);
    hdr.datatype_code = read_at<int16_t>(p, 70, swapped);
    hdr.bitpix = read_at<int16_t>(p, 72, swapped);
    for (int i = 0; i < 8; ++i) hdr.pixdim[i] = read_at<float>(p, 76 + 4 * i, swapped);
    hdr.vox_offset = read_at<float>(p, 108, swapped);
    hdr.scl_slope = read_at<float>(p, 112, swapped);
    hdr.scl_inter = read_at<float>(p, 116, swapped);

    if (hdr.dim[0] < 3 || hdr.dim[0] > 4)
        throw MalformedHeader("dim[0] must be 3 or 4, got " + std::to_string(hdr.dim[0]));
    for (int i = 1; i <= hdr.dim[0]; ++i)
        if (hdr.dim[i] < 1)
            throw MalformedHeader("dim[" + std::to_string(i) + "] must be >= 1");

    int want_bitpix = expected_bitpix(hdr.datatype_code);
    if (want_bitpix < 0)
        throw UnsupportedDatatype("datatype code " + std::to_string(hdr.datatype_code));
    if (hdr.bitpix != want_bitpix)
        throw MalformedHeader("bitpix " + std::to_string(hdr.bitpix) +
                              " inconsistent with datatype code " + std::to_string(hdr.datatype_code));

    if (!std::isfinite(hdr.vox_offset) || hdr.vox_offset < static_cast<float>(kMinFileSize))
        throw MalformedHeader("vox_offset must be >= 352");
    size_t offset = static_cast<size_t>(hdr.vox_offset);

    int64_t n = hdr.payload_elements();
    size_t bytes_per = static_cast<size_t>(want_bitpix) / 8;
    if (offset > bytes->size() || bytes->size() - offset < static_cast<size_t>(n) * bytes_per)
        throw TruncatedData("payload smaller than the header promises");

    bool scale = hdr.scl_slope != 0.0f;
    double slope = static_cast<double>(hdr.scl_slope);
    double inter = static_cast<double>(hdr.scl_inter);
    std::vector<double> values(static_cast<size_t>(n));
    const unsigned char* src = p + offset;
    switch (static_cast<NiftiDatatype>(hdr.datatype_code)) {
        case NiftiDatatype::Uint8: decode_payload<uint8_t>(src, n, swapped, slope, inter, scale, values); break;
        case NiftiDatatype::Int16: decode_payload<int16_t>(src, n, swapped, slope, inter, scale, values); break;
        case NiftiDatatype::Int32: decode_payload<int32_t>(src, n, swapped, slope, inter, scale, values); break;
        case NiftiDatatype::Float32: decode_payload<float>(src, n, swapped, slope, inter, scale, values); break;
        case NiftiDatatype::Float64: decode_payload<double>(src, n, swapped, slope, inter, scale, values); break;
    }

    std::array<double, 3> spacing{static_cast<double>(hdr.pixdim[1]),
                                  static_cast<double>(hdr.pixdim[2]),
                                  static_cast<double>(hdr.pixdim[3])};

    NiftiImage img;
    img.header = hdr;
    if (hdr.dim[0] == 4 && hdr.dim[4] >= 2) {
        Volume4D v(hdr.dim[1], hdr.dim[2], hdr.dim[3], hdr.dim[4]);
        v.spacing_mm = spacing;
        v.tr_seconds = static_cast<double>(hdr.pixdim[4]);
        v.data = std::move(values);
        img.volume = std::move(v);
    } else {
        // plain 3D, or degenerate 4D with a single frame
        Volume3D v(hdr.dim[1], hdr.dim[2], hdr.dim[3], 1);
        v.spacing_mm = spacing;
        v.data = std::move(values);
        img.volume = std::move(v);
    }
    return img;
}

std::vector<unsigned char> write_nifti(const Volume4D& v, NiftiDatatype dtype) {
    v.validate();
    int16_t dim[8] = {4, static_cast<int16_t>(v.nx), static_cast<int16_t>(v.ny),
                      static_cast<int16_t>(v.nz), static_cast<int16_t>(v.nt), 1, 1, 1};
    float pixdim[8] = {0,
                       static_cast<float>(v.spacing_mm[0]),
                       static_cast<float>(v.spacing_mm[1]),
                       static_cast<float>(v.spacing_mm[2]),
                       static_cast<float>(v.tr_seconds),
                       0, 0, 0};
    return serialize(dim, pixdim, v.data, dtype);
}

std::vector<unsigned char> write_nifti(const Volume3D& v, NiftiDatatype dtype) {
    v.validate();
    int16_t dim[8];
    if (v.channels > 1) {
        // channels ride in the 4th dimension, tr = 0 marks "not time"
        dim[0] = 4;
        dim[4] = static_cast<int16_t>(v.channels);
    } else {
        dim[0] = 3;
        dim[4] = 1;
    }
    dim[1] = static_cast<int16_t>(v.nx);
    dim[2] = static_cast<int16_t>(v.ny);
    dim[3] = static_cast<int16_t>(v.nz);
    dim[5] = dim[6] = dim[7] = 1;
    float pixdim[8] = {0,
                       static_cast<float>(v.spacing_mm[0]),
                       static_cast<float>(v.spacing_mm[1]),
                       static_cast<float>(v.spacing_mm[2]),
                       0, 0, 0, 0};
    return serialize(dim, pixdim, v.data, dtype);
}

std::vector<unsigned char> read_binary_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    f.seekg(0, std::ios::end);
    std::streampos size = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<unsigned char> bytes(static_cast<size_t>(size));
    if (size > 0) f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) throw IoError("failed reading " + path);
    return bytes;
}

void write_binary_file(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot create " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing " + path);
}

static bool has_gz_suffix(const std::string& path) {
    return path.size() >= 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

NiftiImage read_nifti_file(const std::string& path) {
    return parse_nifti(read_binary_file(path));
}

void write_nifti_file(const std::string& path, const Volume4D& v, NiftiDatatype dtype) {
    auto bytes = write_nifti(v, dtype);
    write_binary_file(path, has_gz_suffix(path) ? gzip_compress(bytes) : bytes);
}

void write_nifti_file(const std::string& path, const Volume3D& v, NiftiDatatype dtype) {
    auto bytes = write_nifti(v, dtype);
    write_binary_file(path, has_gz_suffix(path) ? gzip_compress(bytes) : bytes);
}

MaskVolume to_mask(const Volume3D& v) {
    MaskVolume m(v.nx, v.ny, v.nz);
    for (int64_t i = 0; i < v.voxels(); ++i)
        m.data[static_cast<size_t>(i)] = v.data[static_cast<size_t>(i)] != 0.0 ? 1 : 0;
    return m;
}

}  // namespace sto
