#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "xfuse/errors.hpp"

namespace xfuse {

inline constexpr uint32_t kDomainSource = 0;
inline constexpr uint32_t kDomainTarget = 1;

// One synchronized sample: image, camera-frame point cloud, calibration,
// labels, and the point-to-pixel association.
struct PairedScene {
    int64_t height = 0;
    int64_t width = 0;
    int64_t class_count = 0;
    std::vector<float> image;        // H*W*3 row-major RGB in [0,1]
    std::array<float, 12> proj{};    // 3x4 row-major, camera frame -> pixels
    std::vector<float> points;       // N*3 meters, camera frame (x right, y down, z forward)
    std::vector<int32_t> labels;     // N entries in [0,C) or -1
    std::vector<int32_t> pixel_index; // N entries, v*W+u or -1
    uint32_t domain_tag = kDomainSource;
    uint32_t scene_id = 0;

    int64_t point_count() const { return static_cast<int64_t>(points.size()) / 3; }
};

struct DomainShiftSpec {
    double gamma = 1.0;          // image darkening exponent, > 0
    double hue_rotation = 0.0;   // degrees around the gray axis
    double noise_sigma = 0.0;    // additive gaussian, >= 0
    double density_factor = 1.0; // target point-count multiplier, > 0
    int64_t layout_seed_offset = 0;
};

struct VoxelGrid {
    double voxel_size = 0.0;
    std::vector<int32_t> cell_of_point; // dense ids in first-occurrence order
    int64_t occupied_cells = 0;
};

// Homogeneous projection with perspective divide. Points with camera depth
// <= 1e-6 or landing outside the image map to -1; the rest to v*W+u with
// u, v the floors of the continuous pixel coordinates.
std::vector<int32_t> project_points(const std::vector<float>& points,
                                    const std::array<float, 12>& proj, int64_t height,
                                    int64_t width);

// Integer cell per point at floor(coord / voxel_size); ids are assigned in
// first-occurrence order, so the partition is reorder-stable.
VoxelGrid voxelize(const std::vector<float>& points, double voxel_size);

// pinhole with focal = image height, principal point at the center
std::array<float, 12> default_projection(int64_t height, int64_t width);

} // namespace xfuse
