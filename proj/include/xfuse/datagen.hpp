#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xfuse/scene.hpp"

namespace xfuse {

// class ids used by the generator
enum SceneClass : int32_t {
    kClassGround = 0,
    kClassBuilding = 1,
    kClassVegetation = 2,
    kClassVehicle = 3,
    kClassObstacle = 4,
};

const std::vector<std::string>& default_class_names();

// Procedurally places a ground plane and primitive objects, samples a
// labeled surface point cloud, splats a dense auxiliary sampling into the
// image, and applies the domain's photometric shift. Deterministic in
// (seed, spec, sizes).
PairedScene generate_scene(uint64_t seed, const DomainShiftSpec& spec, uint32_t domain_tag,
                           int64_t class_count, int64_t height, int64_t width,
                           int64_t point_budget, uint32_t scene_id);

// Named pairs of (source spec, target spec) mirroring distinct adaptation
// axes: lighting (daynight), sensor density (density), scene layout (layout).
struct DomainProfile {
    std::string name;
    DomainShiftSpec source;
    DomainShiftSpec target;
    // loss weights bundled with the scenario
    double lambda1 = 1.0, lambda2 = 0.1, lambda3 = 0.1, lambda4 = 0.01;
};

DomainProfile domain_profile(const std::string& name);

} // namespace xfuse
