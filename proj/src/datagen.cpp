#include "xfuse/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xfuse/rng.hpp"

namespace xfuse {

namespace {

constexpr double kCameraHeight = 1.6; // meters above ground

// world frame: x right, y forward (depth), z up; camera at origin height
// kCameraHeight looking along +y
struct Vec3 {
    double x, y, z;
};

Vec3 world_to_camera(const Vec3& w) { return {w.x, kCameraHeight - w.z, w.y}; }

struct Surface {
    int32_t cls = 0;
    int shape = 0; // 0 plane, 1 box, 2 sphere, 3 cylinder
    Vec3 center{0, 0, 0};
    Vec3 extent{0, 0, 0}; // box half extents / sphere-cylinder radius in x
    double radius = 0;
    double half_height = 0;
    double area = 0;
    double shade = 1.0; // per-object brightness jitter
};

double surface_area(const Surface& s) {
    switch (s.shape) {
        case 0: return 4.0 * s.extent.x * s.extent.y;
        case 1: {
            double a = 2 * s.extent.x, b = 2 * s.extent.y, c = 2 * s.extent.z;
            return 2.0 * (a * b + b * c + a * c);
        }
        case 2: return 4.0 * 3.14159265358979323846 * s.radius * s.radius;
        default: return 2.0 * 3.14159265358979323846 * s.radius * (2.0 * s.half_height) +
                        3.14159265358979323846 * s.radius * s.radius; // side + top cap
    }
}

Vec3 sample_surface(const Surface& s, Rng& rng) {
    switch (s.shape) {
        case 0: { // plane patch at z = center.z
            double u = rng.uniform(-1.0, 1.0), v = rng.uniform(-1.0, 1.0);
            return {s.center.x + u * s.extent.x, s.center.y + v * s.extent.y, s.center.z};
        }
        case 1: { // box: pick a face by area
            double a = 2 * s.extent.x, b = 2 * s.extent.y, c = 2 * s.extent.z;
            double areas[3] = {a * b, b * c, a * c}; // z faces, x faces, y faces
            double total = 2.0 * (areas[0] + areas[1] + areas[2]);
            double pick = rng.uniform(0.0, total);
            double u = rng.uniform(-1.0, 1.0), v = rng.uniform(-1.0, 1.0);
            double side = (pick < total / 2.0) ? 1.0 : -1.0;
            double r = std::fmod(pick, total / 2.0);
            Vec3 p = s.center;
            if (r < areas[0]) {
                p.x += u * s.extent.x; p.y += v * s.extent.y; p.z += side * s.extent.z;
            } else if (r < areas[0] + areas[1]) {
                p.y += u * s.extent.y; p.z += v * s.extent.z; p.x += side * s.extent.x;
            } else {
                p.x += u * s.extent.x; p.z += v * s.extent.z; p.y += side * s.extent.y;
            }
            return p;
        }
        case 2: { // sphere
            double z = rng.uniform(-1.0, 1.0);
            double phi = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            double r = std::sqrt(std::max(0.0, 1.0 - z * z));
            return {s.center.x + s.radius * r * std::cos(phi),
                    s.center.y + s.radius * r * std::sin(phi), s.center.z + s.radius * z};
        }
        default: { // cylinder side or top cap
            double side_area = 2.0 * 3.14159265358979323846 * s.radius * (2.0 * s.half_height);
            double cap_area = 3.14159265358979323846 * s.radius * s.radius;
            double phi = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            if (rng.uniform(0.0, side_area + cap_area) < side_area) {
                double z = rng.uniform(-s.half_height, s.half_height);
                return {s.center.x + s.radius * std::cos(phi), s.center.y + s.radius * std::sin(phi),
                        s.center.z + z};
            }
            double rr = s.radius * std::sqrt(rng.uniform());
            return {s.center.x + rr * std::cos(phi), s.center.y + rr * std::sin(phi),
                    s.center.z + s.half_height};
        }
    }
}

// distinct hues per class; the 2D branch keys on these, the 3D branch on shape
const double kBaseColor[5][3] = {
    {0.46, 0.44, 0.42}, // ground: asphalt gray
    {0.70, 0.24, 0.18}, // building: brick red
    {0.13, 0.52, 0.19}, // vegetation: green
    {0.16, 0.33, 0.78}, // vehicle: blue
    {0.88, 0.56, 0.10}, // obstacle: orange
};

void apply_hue_rotation(double& r, double& g, double& b, double degrees) {
    if (degrees == 0.0) return;
    double th = degrees * 3.14159265358979323846 / 180.0;
    double c = std::cos(th), s = std::sin(th);
    // rotation about the gray axis (1,1,1)/sqrt(3)
    double m[3][3];
    double one3 = 1.0 / 3.0, sq3 = std::sqrt(1.0 / 3.0);
    m[0][0] = c + (1 - c) * one3;
    m[0][1] = one3 * (1 - c) - sq3 * s;
    m[0][2] = one3 * (1 - c) + sq3 * s;
    m[1][0] = one3 * (1 - c) + sq3 * s;
    m[1][1] = c + one3 * (1 - c);
    m[1][2] = one3 * (1 - c) - sq3 * s;
    m[2][0] = one3 * (1 - c) - sq3 * s;
    m[2][1] = one3 * (1 - c) + sq3 * s;
    m[2][2] = c + one3 * (1 - c);
    double nr = m[0][0] * r + m[0][1] * g + m[0][2] * b;
    double ng = m[1][0] * r + m[1][1] * g + m[1][2] * b;
    double nb = m[2][0] * r + m[2][1] * g + m[2][2] * b;
    r = nr; g = ng; b = nb;
}

} // namespace

const std::vector<std::string>& default_class_names() {
    static const std::vector<std::string> names = {"ground", "building", "vegetation", "vehicle",
                                                   "obstacle"};
    return names;
}

PairedScene generate_scene(uint64_t seed, const DomainShiftSpec& spec, uint32_t domain_tag,
                           int64_t class_count, int64_t height, int64_t width,
                           int64_t point_budget, uint32_t scene_id) {
    if (class_count < 2) throw ParameterError("generate_scene: class_count must be >= 2");
    if (point_budget < 64) throw ParameterError("generate_scene: point budget must be >= 64");
    if (height < 16 || width < 16) throw ParameterError("generate_scene: image must be >= 16x16");
    if (!(spec.gamma > 0.0) || !(spec.density_factor > 0.0))
        throw ParameterError("generate_scene: gamma and density_factor must be positive");

    Rng layout(mix_seed(seed + static_cast<uint64_t>(spec.layout_seed_offset), 0xA11CE));
    Rng photo(mix_seed(seed, 0xB0B + domain_tag));

    // --- scene layout -----------------------------------------------------
    std::vector<Surface> surfaces;
    {
        Surface ground;
        ground.cls = kClassGround;
        ground.shape = 0;
        ground.center = {0.0, 12.0, 0.0};
        ground.extent = {10.0, 10.0, 0.0};
        ground.shade = 1.0;
        ground.area = surface_area(ground);
        surfaces.push_back(ground);
    }
    int object_count = 7 + static_cast<int>(layout.uniform_int(6)); // 7..12
    for (int k = 0; k < object_count; ++k) {
        // the first four objects cover every non-ground class
        int32_t cls = (k < 4) ? static_cast<int32_t>(k + 1)
                              : static_cast<int32_t>(1 + layout.uniform_int(4));
        if (cls >= class_count) cls = static_cast<int32_t>(class_count - 1);
        Surface s;
        s.cls = cls;
        s.shade = 0.88 + 0.24 * layout.uniform();
        switch (cls) {
            case kClassBuilding: {
                s.shape = 1;
                s.extent = {layout.uniform(1.2, 2.4), layout.uniform(1.2, 2.4), layout.uniform(1.8, 3.2)};
                s.center = {layout.uniform(-8.0, 8.0), layout.uniform(7.0, 20.0), s.extent.z};
                break;
            }
            case kClassVegetation: {
                s.shape = 2;
                s.radius = layout.uniform(0.8, 1.8);
                s.center = {layout.uniform(-7.0, 7.0), layout.uniform(4.5, 18.0),
                            s.radius * layout.uniform(0.8, 1.4)};
                break;
            }
            case kClassVehicle: {
                s.shape = 1;
                s.extent = {layout.uniform(0.8, 1.0), layout.uniform(1.8, 2.4), layout.uniform(0.65, 0.85)};
                s.center = {layout.uniform(-6.0, 6.0), layout.uniform(3.5, 16.0), s.extent.z};
                break;
            }
            default: { // obstacle
                s.shape = 3;
                s.radius = layout.uniform(0.1, 0.32);
                s.half_height = layout.uniform(0.45, 0.8);
                s.center = {layout.uniform(-6.0, 6.0), layout.uniform(2.5, 14.0), s.half_height};
                break;
            }
        }
        s.area = surface_area(s);
        surfaces.push_back(s);
    }

    // sampling allocation: ground gets a fixed share, objects split by area
    double object_area = 0.0;
    for (size_t i = 1; i < surfaces.size(); ++i) object_area += surfaces[i].area;
    const double ground_share = 0.42;
    auto allocate = [&](int64_t total, std::vector<int64_t>& counts) {
        counts.assign(surfaces.size(), 0);
        counts[0] = static_cast<int64_t>(std::floor(ground_share * static_cast<double>(total)));
        int64_t rest = total - counts[0];
        int64_t used = 0;
        for (size_t i = 1; i < surfaces.size(); ++i) {
            counts[i] = static_cast<int64_t>(
                std::floor(static_cast<double>(rest) * surfaces[i].area / object_area));
            used += counts[i];
        }
        counts[0] += rest - used;
    };

    const auto proj = default_projection(height, width);
    auto project_one = [&](const Vec3& pc) -> int64_t {
        double pu = proj[0] * pc.x + proj[1] * pc.y + proj[2] * pc.z + proj[3];
        double pv = proj[4] * pc.x + proj[5] * pc.y + proj[6] * pc.z + proj[7];
        double pw = proj[8] * pc.x + proj[9] * pc.y + proj[10] * pc.z + proj[11];
        if (pw <= 1e-6) return -1;
        int64_t u = static_cast<int64_t>(std::floor(pu / pw));
        int64_t v = static_cast<int64_t>(std::floor(pv / pw));
        if (u < 0 || u >= width || v < 0 || v >= height) return -1;
        return v * width + u;
    };

    // --- image: depth-ordered splatting of a dense auxiliary sampling ------
    std::vector<float> zbuffer(static_cast<size_t>(height * width),
                               std::numeric_limits<float>::infinity());
    std::vector<float> image(static_cast<size_t>(height * width * 3));
    for (int64_t v = 0; v < height; ++v) {
        // sky gradient fallback
        float t = static_cast<float>(v) / static_cast<float>(height - 1);
        float sky[3] = {0.55f + 0.20f * t, 0.68f + 0.14f * t, 0.90f};
        for (int64_t u = 0; u < width; ++u)
            for (int j = 0; j < 3; ++j) image[static_cast<size_t>((v * width + u) * 3 + j)] = sky[j];
    }
    {
        std::vector<int64_t> counts;
        allocate(14 * height * width, counts);
        for (size_t si = 0; si < surfaces.size(); ++si) {
            const Surface& s = surfaces[si];
            for (int64_t k = 0; k < counts[si]; ++k) {
                Vec3 pc = world_to_camera(sample_surface(s, layout));
                int64_t idx = project_one(pc);
                if (idx < 0) continue;
                float depth = static_cast<float>(pc.z);
                if (depth >= zbuffer[static_cast<size_t>(idx)]) continue;
                zbuffer[static_cast<size_t>(idx)] = depth;
                double fade = std::max(0.55, 1.0 - 0.012 * pc.z);
                for (int j = 0; j < 3; ++j)
                    image[static_cast<size_t>(idx * 3 + j)] =
                        static_cast<float>(kBaseColor[s.cls][j] * s.shade * fade);
            }
        }
    }

    // --- labeled point cloud ------------------------------------------------
    int64_t budget = static_cast<int64_t>(std::llround(static_cast<double>(point_budget) *
                                                       spec.density_factor));
    budget = std::max<int64_t>(budget, 64);
    struct Candidate {
        float x, y, z;
        int32_t cls;
        int32_t pixel;
    };
    std::vector<Candidate> kept;
    {
        double focal = static_cast<double>(height);
        std::vector<int64_t> counts;
        // refill in deterministic rounds until the budget is met; frustum
        // culling discards a scene-dependent share of the samples
        for (int round = 0; round < 10 && static_cast<int64_t>(kept.size()) < budget; ++round) {
            allocate(4 * budget, counts);
            for (size_t si = 0; si < surfaces.size(); ++si) {
                const Surface& s = surfaces[si];
                for (int64_t k = 0; k < counts[si]; ++k) {
                    Vec3 pc = world_to_camera(sample_surface(s, layout));
                    int64_t idx = project_one(pc);
                    if (idx < 0) continue; // outside the camera frustum
                    float buffered = zbuffer[static_cast<size_t>(idx)];
                    // visibility cull against the splat buffer; the slack grows
                    // with the pixel footprint (z / focal) so coarse images do
                    // not over-cull slanted surfaces
                    double slack = 0.5 + 3.0 * pc.z / focal;
                    if (std::isfinite(buffered) && pc.z > buffered + slack) continue;
                    kept.push_back({static_cast<float>(pc.x), static_cast<float>(pc.y),
                                    static_cast<float>(pc.z), s.cls, static_cast<int32_t>(idx)});
                }
            }
        }
    }
    if (static_cast<int64_t>(kept.size()) < budget)
        throw GenerationError("generate_scene: point budget " + std::to_string(budget) +
                              " unsatisfiable, only " + std::to_string(kept.size()) +
                              " visible samples");
    layout.shuffle(kept.begin(), kept.end());
    kept.resize(static_cast<size_t>(budget));

    PairedScene scene;
    scene.height = height;
    scene.width = width;
    scene.class_count = class_count;
    scene.proj = proj;
    scene.domain_tag = domain_tag;
    scene.scene_id = scene_id;
    scene.points.reserve(static_cast<size_t>(budget * 3));
    scene.labels.reserve(static_cast<size_t>(budget));
    scene.pixel_index.reserve(static_cast<size_t>(budget));
    for (const Candidate& c : kept) {
        scene.points.push_back(c.x);
        scene.points.push_back(c.y);
        scene.points.push_back(c.z);
        scene.labels.push_back(c.cls);
        scene.pixel_index.push_back(c.pixel);
    }

    // --- photometric domain shift -------------------------------------------
    scene.image.resize(image.size());
    for (int64_t p = 0; p < height * width; ++p) {
        double r = image[static_cast<size_t>(3 * p)];
        double g = image[static_cast<size_t>(3 * p + 1)];
        double b = image[static_cast<size_t>(3 * p + 2)];
        if (spec.gamma != 1.0) {
            r = std::pow(r, spec.gamma);
            g = std::pow(g, spec.gamma);
            b = std::pow(b, spec.gamma);
        }
        apply_hue_rotation(r, g, b, spec.hue_rotation);
        if (spec.noise_sigma > 0.0) {
            r += photo.normal(0.0, spec.noise_sigma);
            g += photo.normal(0.0, spec.noise_sigma);
            b += photo.normal(0.0, spec.noise_sigma);
        }
        scene.image[static_cast<size_t>(3 * p)] = static_cast<float>(std::clamp(r, 0.0, 1.0));
        scene.image[static_cast<size_t>(3 * p + 1)] = static_cast<float>(std::clamp(g, 0.0, 1.0));
        scene.image[static_cast<size_t>(3 * p + 2)] = static_cast<float>(std::clamp(b, 0.0, 1.0));
    }
    return scene;
}

DomainProfile domain_profile(const std::string& name) {
    DomainProfile p;
    p.name = name;
    if (name == "daynight") {
        p.target.gamma = 2.2;
        p.target.hue_rotation = 25.0;
        p.target.noise_sigma = 0.02;
        p.target.density_factor = 0.5;
        p.target.layout_seed_offset = 7777;
        p.lambda1 = 1.0; p.lambda2 = 0.1; p.lambda3 = 0.1; p.lambda4 = 0.01;
    } else if (name == "density") {
        p.target.gamma = 1.25;
        p.target.hue_rotation = 8.0;
        p.target.noise_sigma = 0.02;
        p.target.density_factor = 0.35;
        p.target.layout_seed_offset = 7777;
        p.lambda1 = 0.1; p.lambda2 = 0.02; p.lambda3 = 0.01; p.lambda4 = 0.01;
    } else if (name == "layout") {
        p.target.gamma = 1.0;
        p.target.hue_rotation = 10.0;
        p.target.noise_sigma = 0.02;
        p.target.density_factor = 1.0;
        p.target.layout_seed_offset = 31337;
        p.lambda1 = 1.0; p.lambda2 = 0.1; p.lambda3 = 0.1; p.lambda4 = 0.01;
    } else {
        throw ParameterError("unknown domain profile '" + name + "'");
    }
    return p;
}

} // namespace xfuse
