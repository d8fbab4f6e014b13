#include "xfuse/scene.hpp"

#include <cmath>
#include <unordered_map>

namespace xfuse {

std::vector<int32_t> project_points(const std::vector<float>& points,
                                    const std::array<float, 12>& proj, int64_t height,
                                    int64_t width) {
    int64_t n = static_cast<int64_t>(points.size()) / 3;
    std::vector<int32_t> index(static_cast<size_t>(n), -1);
    for (int64_t i = 0; i < n; ++i) {
        double x = points[static_cast<size_t>(3 * i)];
        double y = points[static_cast<size_t>(3 * i + 1)];
        double z = points[static_cast<size_t>(3 * i + 2)];
        double pu = proj[0] * x + proj[1] * y + proj[2] * z + proj[3];
        double pv = proj[4] * x + proj[5] * y + proj[6] * z + proj[7];
        double pw = proj[8] * x + proj[9] * y + proj[10] * z + proj[11];
        if (pw <= 1e-6) continue;
        int64_t u = static_cast<int64_t>(std::floor(pu / pw));
        int64_t v = static_cast<int64_t>(std::floor(pv / pw));
        if (u < 0 || u >= width || v < 0 || v >= height) continue;
        index[static_cast<size_t>(i)] = static_cast<int32_t>(v * width + u);
    }
    return index;
}

namespace {

struct CellKey {
    int64_t x, y, z;
    bool operator==(const CellKey& o) const { return x == o.x && y == o.y && z == o.z; }
};

struct CellKeyHash {
    size_t operator()(const CellKey& k) const {
        uint64_t h = static_cast<uint64_t>(k.x) * 0x9e3779b97f4a7c15ull;
        h ^= static_cast<uint64_t>(k.y) * 0xc2b2ae3d27d4eb4full + (h << 6) + (h >> 2);
        h ^= static_cast<uint64_t>(k.z) * 0x165667b19e3779f9ull + (h << 6) + (h >> 2);
        return static_cast<size_t>(h);
    }
};

} // namespace

VoxelGrid voxelize(const std::vector<float>& points, double voxel_size) {
    if (!(voxel_size > 0.0))
        throw ParameterError("voxelize: voxel_size must be positive, got " + std::to_string(voxel_size));
    int64_t n = static_cast<int64_t>(points.size()) / 3;
    VoxelGrid grid;
    grid.voxel_size = voxel_size;
    grid.cell_of_point.resize(static_cast<size_t>(n));
    std::unordered_map<CellKey, int32_t, CellKeyHash> ids;
    ids.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        CellKey key{
            static_cast<int64_t>(std::floor(points[static_cast<size_t>(3 * i)] / voxel_size)),
            static_cast<int64_t>(std::floor(points[static_cast<size_t>(3 * i + 1)] / voxel_size)),
            static_cast<int64_t>(std::floor(points[static_cast<size_t>(3 * i + 2)] / voxel_size)),
        };
        auto [it, inserted] = ids.try_emplace(key, static_cast<int32_t>(ids.size()));
        (void)inserted;
        grid.cell_of_point[static_cast<size_t>(i)] = it->second;
    }
    grid.occupied_cells = static_cast<int64_t>(ids.size());
    return grid;
}

std::array<float, 12> default_projection(int64_t height, int64_t width) {
    float f = static_cast<float>(height);
    std::array<float, 12> proj{};
    proj[0] = f;
    proj[2] = static_cast<float>(width) / 2.0f;
    proj[5] = f;
    proj[6] = static_cast<float>(height) / 2.0f;
    proj[10] = 1.0f;
    return proj;
}

} // namespace xfuse
