#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxa/voxel.hpp"

namespace voxa {

struct ParseFileError : std::runtime_error {
    explicit ParseFileError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class VolumeFormat { Auto, Vxv1, Nifti1 };

// VXV1: "VXV1" magic, 3 little-endian u32 dims, 16 little-endian f64 affine
// values row-major, f32 voxels in C order. Bit-exact round trip.
std::vector<std::uint8_t> save_volume(const VoxelGrid& g);
VoxelGrid load_volume(const std::vector<std::uint8_t>& bytes,
                      VolumeFormat hint = VolumeFormat::Auto);

void save_volume_file(const VoxelGrid& g, const std::string& path);
VoxelGrid load_volume_file(const std::string& path,
                           VolumeFormat hint = VolumeFormat::Auto);

}  // namespace voxa
