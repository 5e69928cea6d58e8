#include <algorithm>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "sto/common.hpp"
#include "sto/nifti.hpp"

using namespace sto;

namespace {

Volume4D random_volume4(Rng& rng, int64_t nx, int64_t ny, int64_t nz, int64_t nt) {
    Volume4D v(nx, ny, nz, nt);
    v.spacing_mm = {rng.uniform(0.5, 4.0), rng.uniform(0.5, 4.0), rng.uniform(0.5, 4.0)};
    v.tr_seconds = rng.uniform(0.5, 3.0);
    for (double& d : v.data) d = rng.next_gaussian() * 100.0;
    return v;
}

void swap_range(std::vector<unsigned char>& b, size_t at, size_t width, size_t count) {
    for (size_t i = 0; i < count; ++i) {
        unsigned char* p = b.data() + at + i * width;
        std::reverse(p, p + width);
    }
}

// Byte-swap a little-endian single-file NIfTI written by write_nifti into its
// big-endian equivalent (header fields our writer populates, then payload).
std::vector<unsigned char> to_big_endian(std::vector<unsigned char> bytes, size_t elem_size) {
    swap_range(bytes, 0, 4, 1);     // sizeof_hdr
    swap_range(bytes, 40, 2, 8);    // dim[8]
    swap_range(bytes, 70, 2, 1);    // datatype
    swap_range(bytes, 72, 2, 1);    // bitpix
    swap_range(bytes, 76, 4, 8);    // pixdim[8]
    swap_range(bytes, 108, 4, 1);   // vox_offset
    swap_range(bytes, 112, 4, 1);   // scl_slope
    swap_range(bytes, 116, 4, 1);   // scl_inter
    const size_t payload = 352;
    swap_range(bytes, payload, elem_size, (bytes.size() - payload) / elem_size);
    return bytes;
}

}  // namespace

TEST_CASE("float64 4D volume round-trips bit-exactly") {
    Rng rng(101);
    for (int rep = 0; rep < 25; ++rep) {
        Volume4D v = random_volume4(rng, 3 + static_cast<int64_t>(rng.next_below(5)),
                                    3 + static_cast<int64_t>(rng.next_below(5)),
                                    3 + static_cast<int64_t>(rng.next_below(5)),
                                    2 + static_cast<int64_t>(rng.next_below(6)));
        std::vector<unsigned char> bytes = write_nifti(v);
        NiftiImage img = parse_nifti(bytes);
        const Volume4D& r = std::get<Volume4D>(img.volume);
        REQUIRE(r.nx == v.nx);
        REQUIRE(r.ny == v.ny);
        REQUIRE(r.nz == v.nz);
        REQUIRE(r.nt == v.nt);
        CHECK(r.data == v.data);  // bit-exact
        CHECK(r.tr_seconds == doctest::Approx(v.tr_seconds).epsilon(1e-6));
    }
}

TEST_CASE("multi-channel 3D volume round-trips through the 4th axis") {
    Rng rng(102);
    Volume3D v(5, 4, 3, 4);
    for (double& d : v.data) d = rng.next_gaussian();
    std::vector<unsigned char> bytes = write_nifti(v);
    NiftiImage img = parse_nifti(bytes);
    // channels are stored on the 4th axis with pixdim[4] = 0
    const Volume4D& r = std::get<Volume4D>(img.volume);
    CHECK(r.nt == 4);
    CHECK(r.tr_seconds == 0.0);
    CHECK(r.data == v.data);
}

TEST_CASE("integer datatypes quantize on write and round-trip exactly after") {
    Rng rng(103);
    for (NiftiDatatype dt : {NiftiDatatype::Uint8, NiftiDatatype::Int16, NiftiDatatype::Int32}) {
        Volume4D v(4, 4, 4, 3);
        for (double& d : v.data)
            d = static_cast<double>(rng.next_below(200));  // representable in all three
        std::vector<unsigned char> bytes = write_nifti(v, dt);
        NiftiImage img = parse_nifti(bytes);
        CHECK(std::get<Volume4D>(img.volume).data == v.data);
    }
}

TEST_CASE("float32 round-trip matches a float cast") {
    Rng rng(104);
    Volume4D v(4, 3, 3, 2);
    for (double& d : v.data) d = rng.next_gaussian();
    NiftiImage img = parse_nifti(write_nifti(v, NiftiDatatype::Float32));
    const Volume4D& r = std::get<Volume4D>(img.volume);
    for (size_t i = 0; i < v.data.size(); ++i)
        CHECK(r.data[i] == static_cast<double>(static_cast<float>(v.data[i])));
}

TEST_CASE("gzip envelope is detected and round-trips") {
    Rng rng(105);
    Volume4D v = random_volume4(rng, 4, 4, 4, 3);
    std::vector<unsigned char> raw = write_nifti(v);
    std::vector<unsigned char> gz = gzip_compress(raw);
    REQUIRE(looks_gzipped(gz));
    REQUIRE(!looks_gzipped(raw));
    CHECK(gzip_decompress(gz) == raw);
    NiftiImage img = parse_nifti(gz);
    CHECK(std::get<Volume4D>(img.volume).data == v.data);
}

TEST_CASE("big-endian files parse identically") {
    Rng rng(106);
    Volume4D v = random_volume4(rng, 5, 4, 3, 4);
    std::vector<unsigned char> le = write_nifti(v);
    std::vector<unsigned char> be = to_big_endian(le, sizeof(double));
    NiftiImage img = parse_nifti(be);
    CHECK(img.header.byte_swapped);
    const Volume4D& r = std::get<Volume4D>(img.volume);
    CHECK(r.data == v.data);
}

TEST_CASE("scl_slope scaling is applied when nonzero") {
    Volume4D v(2, 2, 2, 2);
    for (size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<double>(i);
    std::vector<unsigned char> bytes = write_nifti(v);
    // patch scl_slope = 2.0f, scl_inter = 1.0f
    float slope = 2.0f, inter = 1.0f;
    std::memcpy(bytes.data() + 112, &slope, 4);
    std::memcpy(bytes.data() + 116, &inter, 4);
    NiftiImage img = parse_nifti(bytes);
    const Volume4D& r = std::get<Volume4D>(img.volume);
    for (size_t i = 0; i < v.data.size(); ++i)
        CHECK(r.data[i] == doctest::Approx(2.0 * v.data[i] + 1.0));
}

TEST_CASE("file I/O round-trip with and without .gz suffix") {
    Rng rng(107);
    Volume4D v = random_volume4(rng, 4, 4, 4, 3);
    const std::string plain = "/tmp/sto_test_vol.nii";
    const std::string zipped = "/tmp/sto_test_vol.nii.gz";
    write_nifti_file(plain, v);
    write_nifti_file(zipped, v);
    CHECK(std::get<Volume4D>(read_nifti_file(plain).volume).data == v.data);
    CHECK(std::get<Volume4D>(read_nifti_file(zipped).volume).data == v.data);
    CHECK(looks_gzipped(read_binary_file(zipped)));
    CHECK(!looks_gzipped(read_binary_file(plain)));
}

TEST_CASE("to_mask marks nonzero voxels") {
    Volume3D v(3, 2, 1);
    v.at(0, 0, 0) = 1.0;
    v.at(2, 1, 0) = -4.5;
    MaskVolume m = to_mask(v);
    CHECK(m.count() == 2);
    CHECK(m.in(0, 0, 0));
    CHECK(m.in(2, 1, 0));
    CHECK(!m.in(1, 0, 0));
}

TEST_CASE("typed parse errors") {
    Rng rng(108);
    Volume4D v = random_volume4(rng, 4, 4, 4, 3);
    std::vector<unsigned char> good = write_nifti(v);

    SUBCASE("short preamble") {
        std::vector<unsigned char> b(good.begin(), good.begin() + 100);
        CHECK_THROWS_AS(parse_nifti(b), TruncatedData);
    }
    SUBCASE("payload truncated") {
        std::vector<unsigned char> b(good.begin(), good.end() - 16);
        CHECK_THROWS_AS(parse_nifti(b), TruncatedData);
    }
    SUBCASE("bad sizeof_hdr") {
        std::vector<unsigned char> b = good;
        b[0] = 0x11;
        b[1] = 0x22;
        CHECK_THROWS_AS(parse_nifti(b), MalformedHeader);
    }
    SUBCASE("bad magic") {
        std::vector<unsigned char> b = good;
        b[344] = 'x';
        CHECK_THROWS_AS(parse_nifti(b), MalformedHeader);
    }
    SUBCASE("unsupported datatype") {
        std::vector<unsigned char> b = good;
        b[70] = 32;  // complex64, not in the subset
        b[71] = 0;
        CHECK_THROWS_AS(parse_nifti(b), UnsupportedDatatype);
    }
    SUBCASE("dim[0] out of range") {
        std::vector<unsigned char> b = good;
        b[40] = 7;
        b[41] = 0;
        CHECK_THROWS_AS(parse_nifti(b), MalformedHeader);
    }
    SUBCASE("zero extent") {
        std::vector<unsigned char> b = good;
        b[42] = 0;  // dim[1] = 0
        b[43] = 0;
        CHECK_THROWS_AS(parse_nifti(b), MalformedHeader);
    }
    SUBCASE("corrupt gzip stream") {
        std::vector<unsigned char> gz = gzip_compress(good);
        gz[gz.size() / 2] ^= 0xFF;
        gz[gz.size() / 2 + 1] ^= 0xFF;
        CHECK_THROWS_AS(parse_nifti(gz), Error);
    }
}

TEST_CASE("fuzzed corruption never crashes and always throws typed errors") {
    Rng rng(109);
    Volume4D v = random_volume4(rng, 5, 4, 3, 3);
    const std::vector<unsigned char> good = write_nifti(v);

    int threw = 0, parsed = 0;
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<unsigned char> b = good;
        const int mode = static_cast<int>(rng.next_below(3));
        if (mode == 0) {
            b.resize(rng.next_below(b.size()));  // truncation
        } else if (mode == 1) {
            for (int k = 0; k < 8; ++k)  // header corruption
                b[rng.next_below(348)] = static_cast<unsigned char>(rng.next_below(256));
        } else {
            for (int k = 0; k < 16; ++k)  // anywhere corruption
                b[rng.next_below(b.size())] = static_cast<unsigned char>(rng.next_below(256));
        }
        try {
            (void)parse_nifti(b);
            ++parsed;  // corruption hit only payload bytes; still a valid file
        } catch (const Error&) {
            ++threw;  // every failure must be a typed sto::Error
        }
    }
    CHECK(threw + parsed == 200);
    CHECK(threw > 50);  // truncations alone guarantee plenty of failures
}

TEST_CASE("missing file raises IoError") {
    CHECK_THROWS_AS(read_nifti_file("/tmp/definitely_missing_42.nii"), IoError);
}
