#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxa {

struct GeometryError : std::runtime_error {
    explicit GeometryError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// 4x4 voxel-index -> world-mm transform. Row-major storage.
struct Mat4 {
    std::array<double, 16> m{};

    static Mat4 identity();
    static Mat4 from_rows(const std::array<double, 16>& rows) { return Mat4{rows}; }

    double& at(int r, int c) { return m[r * 4 + c]; }
    double at(int r, int c) const { return m[r * 4 + c]; }

    Mat4 mul(const Mat4& o) const;
    // Gauss-Jordan inverse; throws GeometryError when singular.
    Mat4 inverse() const;
    double det3() const;  // determinant of the upper-left 3x3 block

    std::array<double, 3> apply(double i, double j, double k) const;
    std::array<double, 3> column3(int c) const { return {at(0, c), at(1, c), at(2, c)}; }

    bool almost_equal(const Mat4& o, double tol = 1e-6) const;
};

// In-plane spacing vs slice separation, both in mm. omega() is always derived.
struct Spacing {
    double s_inp = 1.0;
    double s_sep = 1.0;

    Spacing() = default;
    Spacing(double inp, double sep);
    double omega() const { return s_sep / s_inp; }
    bool operator==(const Spacing& o) const { return s_inp == o.s_inp && s_sep == o.s_sep; }
};

// Dense 3D scalar field with a voxel-to-world affine. Values stored in C
// order: flat index of (i,j,k) is (i*shape[1] + j)*shape[2] + k. Axis 2 is
// the slice axis once the grid has been conformed.
struct VoxelGrid {
    std::array<int, 3> shape{0, 0, 0};
    std::vector<float> values;
    Mat4 affine = Mat4::identity();

    VoxelGrid() = default;
    VoxelGrid(std::array<int, 3> s, Mat4 a, float fill = 0.f);

    std::int64_t numel() const {
        return std::int64_t(shape[0]) * shape[1] * shape[2];
    }
    std::int64_t flat(int i, int j, int k) const {
        return (std::int64_t(i) * shape[1] + j) * shape[2] + k;
    }
    float at(int i, int j, int k) const { return values[flat(i, j, k)]; }
    float& at(int i, int j, int k) { return values[flat(i, j, k)]; }

    std::array<double, 3> world(int i, int j, int k) const {
        return affine.apply(double(i), double(j), double(k));
    }
    // Per-axis spacing = column norms of the affine.
    std::array<double, 3> spacings() const;
    Spacing spacing() const;  // axes 0,1 in-plane (must agree), axis 2 slice

    bool same_geometry(const std::array<int, 3>& s, const Mat4& a, double tol = 1e-6) const;
};

// 0/1 field sharing the geometry of a reference grid.
struct BinaryMask {
    std::array<int, 3> shape{0, 0, 0};
    std::vector<std::uint8_t> values;
    Mat4 affine = Mat4::identity();

    BinaryMask() = default;
    BinaryMask(std::array<int, 3> s, Mat4 a);

    std::int64_t numel() const {
        return std::int64_t(shape[0]) * shape[1] * shape[2];
    }
    std::int64_t flat(int i, int j, int k) const {
        return (std::int64_t(i) * shape[1] + j) * shape[2] + k;
    }
    std::uint8_t at(int i, int j, int k) const { return values[flat(i, j, k)]; }
    std::uint8_t& at(int i, int j, int k) { return values[flat(i, j, k)]; }

    std::int64_t count() const;
    bool same_geometry(const VoxelGrid& g, double tol = 1e-6) const;
    bool same_geometry(const BinaryMask& m, double tol = 1e-6) const;

    VoxelGrid to_grid() const;  // 0/1 floats, same geometry
    static BinaryMask from_grid(const VoxelGrid& g, float threshold = 0.5f);
};

struct RoiReport {
    double volume_mm3 = 0.0;
    std::array<double, 3> extents_mm{0, 0, 0};  // world R, A, S spans
    double mean = 0.0;
    double stddev = 0.0;
    std::optional<double> snr;  // absent when stddev <= 1e-8
    bool degenerate_stats = false;
};

// --- operations -----------------------------------------------------------

// Permute/flip grid axes so direction cosines align with +R,+A,+S. The
// multiset of (world coordinate, value) pairs is preserved; no resampling.
VoxelGrid conform_ras(const VoxelGrid& g);

// (v - min) / (max - min); a constant image maps to all zeros.
VoxelGrid normalize01(const VoxelGrid& g);

// Crop to the world bounding box of the mask expanded by margin_mm per side,
// clamped to the original field of view. Retained voxels keep their world
// coordinates and values.
VoxelGrid crop_margin(const VoxelGrid& g, const BinaryMask& m, double margin_mm);
BinaryMask crop_margin(const BinaryMask& src, const BinaryMask& m, double margin_mm);

// Trilinear resample along grid axes to the target spacing, clamping at the
// edges. New shape per axis = ceil(extent / target spacing).
VoxelGrid resample(const VoxelGrid& g, const Spacing& target);

// Trilinear sample of src at the voxel centers of a target geometry, with
// edge clamping. Used to align streams onto one grid and to apply warps.
VoxelGrid resample_onto(const VoxelGrid& src, const std::array<int, 3>& shape,
                        const Mat4& affine);

// 2|A&B| / (|A|+|B|). Both empty -> 1.0.
double dice(const BinaryMask& a, const BinaryMask& b);

RoiReport roi_report(const VoxelGrid& g, const BinaryMask& m);

// conform + in-plane isotropy fix + normalize01: the standard input pipeline.
VoxelGrid preprocess_volume(const VoxelGrid& g);

}  // namespace voxa
