#include "voxa/voxel_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace voxa {

namespace {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

template <class T>
T get(const std::vector<std::uint8_t>& in, std::size_t& off) {
    if (off + sizeof(T) > in.size()) throw ParseFileError("truncated payload");
    T v;
    std::memcpy(&v, in.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

template <class T>
T byteswap_val(T v) {
    std::uint8_t b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
}

// --- NIfTI-1 ----------------------------------------------------------------

struct NiftiReader {
    const std::vector<std::uint8_t>& buf;
    bool swap = false;

    template <class T>
    T read_at(std::size_t off) const {
        if (off + sizeof(T) > buf.size()) throw ParseFileError("truncated NIfTI header");
        T v;
        std::memcpy(&v, buf.data() + off, sizeof(T));
        return swap ? byteswap_val(v) : v;
    }
};

VoxelGrid load_nifti(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 348) throw ParseFileError("truncated NIfTI header");
    NiftiReader rd{bytes};

    std::int32_t hdr_size = rd.read_at<std::int32_t>(0);
    if (hdr_size != 348) {
        rd.swap = true;
        hdr_size = rd.read_at<std::int32_t>(0);
        if (hdr_size != 348) throw ParseFileError("bad NIfTI header size");
    }

    char magic[4];
    std::memcpy(magic, bytes.data() + 344, 4);
    const bool n1 = std::memcmp(magic, "n+1", 3) == 0 && magic[3] == 0;
    const bool ni1 = std::memcmp(magic, "ni1", 3) == 0 && magic[3] == 0;
    if (!n1 && !ni1) throw ParseFileError("bad NIfTI magic");
    if (ni1) throw ParseFileError("two-file NIfTI pairs unsupported");

    const std::int16_t ndim = rd.read_at<std::int16_t>(40);
    if (ndim < 3 || ndim > 7) throw ParseFileError("unsupported NIfTI dimensionality");
    std::array<int, 3> shape;
    for (int a = 0; a < 3; ++a) {
        const std::int16_t d = rd.read_at<std::int16_t>(40 + 2 * (a + 1));
        if (d <= 0) throw ParseFileError("non-positive NIfTI dim");
        shape[a] = d;
    }
    for (int a = 4; a <= ndim; ++a) {
        const std::int16_t d = rd.read_at<std::int16_t>(40 + 2 * a);
        if (d > 1) throw ParseFileError("multi-volume NIfTI unsupported");
    }

    const std::int16_t datatype = rd.read_at<std::int16_t>(70);
    if (datatype != 2 && datatype != 4 && datatype != 16)
        throw ParseFileError("unsupported NIfTI datatype " + std::to_string(datatype));

    Mat4 affine;
    const std::int16_t sform = rd.read_at<std::int16_t>(254);
    if (sform > 0) {
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 4; ++c)
                affine.at(r, c) = rd.read_at<float>(280 + 16 * r + 4 * c);
        affine.at(3, 3) = 1.0;
    } else {
        // pixdim fallback: axis-aligned spacing, origin at zero.
        affine = Mat4::identity();
        for (int a = 0; a < 3; ++a) {
            float p = rd.read_at<float>(76 + 4 * (a + 1));
            if (!(p > 0.f)) p = 1.f;
            affine.at(a, a) = p;
        }
    }

    float vox_offset = rd.read_at<float>(108);
    if (vox_offset < 348.f) vox_offset = 352.f;
    const std::size_t data_at = std::size_t(vox_offset);

    float slope = rd.read_at<float>(112);
    float inter = rd.read_at<float>(116);
    if (slope == 0.f) { slope = 1.f; inter = 0.f; }

    const std::int64_t n = std::int64_t(shape[0]) * shape[1] * shape[2];
    const std::size_t elem = datatype == 2 ? 1 : (datatype == 4 ? 2 : 4);
    if (data_at + std::size_t(n) * elem > bytes.size())
        throw ParseFileError("truncated NIfTI voxel payload");

    // NIfTI stores x fastest; our layout has axis 2 fastest, so transpose.
    VoxelGrid g(shape, affine);
    std::size_t off = data_at;
    for (int k = 0; k < shape[2]; ++k)
        for (int j = 0; j < shape[1]; ++j)
            for (int i = 0; i < shape[0]; ++i) {
                float v;
                if (datatype == 2) {
                    std::uint8_t raw;
                    std::memcpy(&raw, bytes.data() + off, 1);
                    v = float(raw);
                } else if (datatype == 4) {
                    std::int16_t raw;
                    std::memcpy(&raw, bytes.data() + off, 2);
                    if (rd.swap) raw = byteswap_val(raw);
                    v = float(raw);
                } else {
                    float raw;
                    std::memcpy(&raw, bytes.data() + off, 4);
                    if (rd.swap) raw = byteswap_val(raw);
                    v = raw;
                }
                off += elem;
                v = v * slope + inter;
                if (!std::isfinite(v)) throw ParseFileError("non-finite NIfTI voxel value");
                g.at(i, j, k) = v;
            }
    return g;
}

// --- VXV1 -------------------------------------------------------------------

VoxelGrid load_vxv1(const std::vector<std::uint8_t>& bytes) {
    std::size_t off = 0;
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "VXV1", 4) != 0)
        throw ParseFileError("bad VXV1 magic");
    off = 4;
    std::array<int, 3> shape;
    for (int a = 0; a < 3; ++a) {
        const std::uint32_t d = get<std::uint32_t>(bytes, off);
        if (d == 0 || d > (1u << 24)) throw ParseFileError("bad VXV1 dimension");
        shape[a] = int(d);
    }
    Mat4 affine;
    for (int i = 0; i < 16; ++i) affine.m[i] = get<double>(bytes, off);
    VoxelGrid g(shape, affine);
    const std::int64_t n = g.numel();
    if (off + std::size_t(n) * 4 > bytes.size()) throw ParseFileError("truncated VXV1 payload");
    std::memcpy(g.values.data(), bytes.data() + off, std::size_t(n) * 4);
    return g;
}

}  // namespace

std::vector<std::uint8_t> save_volume(const VoxelGrid& g) {
    std::vector<std::uint8_t> out;
    out.reserve(4 + 12 + 128 + g.values.size() * 4);
    out.insert(out.end(), {'V', 'X', 'V', '1'});
    for (int a = 0; a < 3; ++a) put<std::uint32_t>(out, std::uint32_t(g.shape[a]));
    for (double v : g.affine.m) put<double>(out, v);
    const auto* p = reinterpret_cast<const std::uint8_t*>(g.values.data());
    out.insert(out.end(), p, p + g.values.size() * 4);
    return out;
}

VoxelGrid load_volume(const std::vector<std::uint8_t>& bytes, VolumeFormat hint) {
    switch (hint) {
        case VolumeFormat::Vxv1:
            return load_vxv1(bytes);
        case VolumeFormat::Nifti1:
            return load_nifti(bytes);
        case VolumeFormat::Auto:
            if (bytes.size() >= 4 && std::memcmp(bytes.data(), "VXV1", 4) == 0)
                return load_vxv1(bytes);
            return load_nifti(bytes);
    }
    throw ParseFileError("unknown format hint");
}

void save_volume_file(const VoxelGrid& g, const std::string& path) {
    const auto bytes = save_volume(g);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ParseFileError("cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

VoxelGrid load_volume_file(const std::string& path, VolumeFormat hint) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseFileError("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    if (hint == VolumeFormat::Auto) {
        if (path.size() > 4 && path.substr(path.size() - 4) == ".nii")
            hint = VolumeFormat::Nifti1;
    }
    return load_volume(bytes, hint);
}

}  // namespace voxa
