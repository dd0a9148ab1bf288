#include "dynsurf/synth.hpp"

#include <filesystem>
#include <map>

#include "dynsurf/image_io.hpp"

namespace dynsurf {

namespace {

namespace fs = std::filesystem;

// Smooth object-space texture so photometric and flow signals exist without
// frequencies the 64x64 renders cannot carry.
Vec3 texture_color(const Vec3& p_local, int variant) {
    const double s = 4.0;
    const Vec3 ph(0.0 + variant, 2.1 + 0.7 * variant, 4.2 + 1.3 * variant);
    return Vec3(0.55 + 0.35 * std::sin(s * (p_local.x() + 0.6 * p_local.y()) + ph.x()),
                0.55 + 0.35 * std::sin(s * (p_local.y() + 0.6 * p_local.z()) + ph.y()),
                0.55 + 0.35 * std::sin(s * (p_local.z() + 0.6 * p_local.x()) + ph.z()));
}

bool ray_sphere(const Vec3& o, const Vec3& d, const Vec3& c, double r, double* t_hit) {
    const Vec3 oc = o - c;
    const double a = d.squaredNorm();
    const double b = 2.0 * oc.dot(d);
    const double cc = oc.squaredNorm() - r * r;
    const double disc = b * b - 4 * a * cc;
    if (disc < 0) return false;
    const double sq = std::sqrt(disc);
    double t = (-b - sq) / (2 * a);
    if (t < 1e-6) t = (-b + sq) / (2 * a);
    if (t < 1e-6) return false;
    *t_hit = t;
    return true;
}

TriMesh icosphere(int subdivisions) {
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> v = {{-1, phi, 0}, {1, phi, 0},  {-1, -phi, 0}, {1, -phi, 0},
                           {0, -1, phi}, {0, 1, phi},  {0, -1, -phi}, {0, 1, -phi},
                           {phi, 0, -1}, {phi, 0, 1},  {-phi, 0, -1}, {-phi, 0, 1}};
    for (auto& p : v) p.normalize();
    std::vector<std::array<int, 3>> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                         {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                         {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                         {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            v.push_back(((v[a] + v[b]) * 0.5).normalized());
            const int idx = static_cast<int>(v.size()) - 1;
            midpoint.emplace(key, idx);
            return idx;
        };
        std::vector<std::array<int, 3>> nf;
        nf.reserve(f.size() * 4);
        for (const auto& tri : f) {
            const int ab = mid(tri[0], tri[1]), bc = mid(tri[1], tri[2]), ca = mid(tri[2], tri[0]);
            nf.push_back({tri[0], ab, ca});
            nf.push_back({tri[1], bc, ab});
            nf.push_back({tri[2], ca, bc});
            nf.push_back({ab, bc, ca});
        }
        f = std::move(nf);
    }
    TriMesh mesh;
    mesh.vertices = std::move(v);
    mesh.faces = std::move(f);
    return mesh;
}

TriMesh transform_mesh(TriMesh mesh, double scale, const Vec3& offset) {
    for (auto& p : mesh.vertices) p = p * scale + offset;
    return mesh;
}

void append_mesh(TriMesh& dst, const TriMesh& src) {
    const int base = static_cast<int>(dst.vertices.size());
    dst.vertices.insert(dst.vertices.end(), src.vertices.begin(), src.vertices.end());
    for (const auto& f : src.faces) dst.faces.push_back({f[0] + base, f[1] + base, f[2] + base});
}

// ---------------------------------------------------------------------------
// Sphere-family scenes: rigid spheres with optional translation and
// frame-gated existence.
// ---------------------------------------------------------------------------

struct SphereObject {
    Vec3 center0;
    Vec3 velocity = Vec3::Zero();  // world units per frame
    double radius = 0.5;
    int appear_frame = 0;          // exists for frame >= appear_frame
    int texture_variant = 0;

    Vec3 center(int frame) const { return center0 + velocity * frame; }
    bool exists(int frame) const { return frame >= appear_frame; }
};

class SphereScene final : public AnalyticScene {
public:
    explicit SphereScene(std::vector<SphereObject> objs) : objs_(std::move(objs)) {}

    bool raycast(const Vec3& o, const Vec3& d, int frame, double* t_hit, int* obj) const override {
        double best = std::numeric_limits<double>::infinity();
        int best_obj = -1;
        for (std::size_t i = 0; i < objs_.size(); ++i) {
            if (!objs_[i].exists(frame)) continue;
            double t;
            if (ray_sphere(o, d, objs_[i].center(frame), objs_[i].radius, &t) && t < best) {
                best = t;
                best_obj = static_cast<int>(i);
            }
        }
        if (best_obj < 0) return false;
        *t_hit = best;
        *obj = best_obj;
        return true;
    }

    Vec3 surface_color(const Vec3& p, int obj, int frame) const override {
        return texture_color(p - objs_[obj].center(frame), objs_[obj].texture_variant);
    }

    bool correspond(const Vec3& p, int obj, int from, int to, Vec3* p_to) const override {
        if (!objs_[obj].exists(to)) return false;
        // Delta form: a static object maps points to themselves exactly, so
        // its ground-truth flow is identically zero.
        *p_to = p + (objs_[obj].center(to) - objs_[obj].center(from));
        return true;
    }

    TriMesh ground_truth_mesh(int frame) const override {
        TriMesh mesh;
        for (const auto& s : objs_) {
            if (!s.exists(frame)) continue;
            append_mesh(mesh, transform_mesh(icosphere(3), s.radius, s.center(frame)));
        }
        return mesh;
    }

    void scene_box(int frames, Vec3* lo, Vec3* hi) const override {
        *lo = Vec3(1e9, 1e9, 1e9);
        *hi = -*lo;
        for (const auto& s : objs_) {
            for (int f = 0; f < std::max(frames, 1); ++f) {
                *lo = lo->cwiseMin(s.center(f) - 1.3 * s.radius * Vec3::Ones());
                *hi = hi->cwiseMax(s.center(f) + 1.3 * s.radius * Vec3::Ones());
            }
        }
    }

    SeedPoints sample_surface(int frame, int count, Rng& rng) const override {
        SeedPoints pts;
        std::vector<int> alive;
        double area = 0.0;
        for (std::size_t i = 0; i < objs_.size(); ++i)
            if (objs_[i].exists(frame)) {
                alive.push_back(static_cast<int>(i));
                area += objs_[i].radius * objs_[i].radius;
            }
        for (int k = 0; k < count; ++k) {
            double pick = rng.uniform() * area;
            int obj = alive.front();
            for (const int i : alive) {
                pick -= objs_[i].radius * objs_[i].radius;
                obj = i;
                if (pick <= 0) break;
            }
            Vec3 dir(rng.normal(), rng.normal(), rng.normal());
            dir.normalize();
            const Vec3 p = objs_[obj].center(frame) + objs_[obj].radius * dir;
            pts.positions.push_back(p);
            pts.colors.push_back(surface_color(p, obj, frame));
        }
        return pts;
    }

private:
    std::vector<SphereObject> objs_;
};

// ---------------------------------------------------------------------------
// Rotating textured cube (rigid rotation about z).
// ---------------------------------------------------------------------------

class CubeScene final : public AnalyticScene {
public:
    CubeScene(double half, double deg_per_frame) : half_(half), rate_(deg_per_frame * M_PI / 180.0) {}

    Mat3 rot(int frame) const { return Eigen::AngleAxisd(rate_ * frame, Vec3::UnitZ()).toRotationMatrix(); }

    bool raycast(const Vec3& o, const Vec3& d, int frame, double* t_hit, int* obj) const override {
        // Slab test in object space.
        const Mat3 r = rot(frame);
        const Vec3 ol = r.transpose() * o;
        const Vec3 dl = r.transpose() * d;
        double t0 = 1e-6, t1 = std::numeric_limits<double>::infinity();
        for (int k = 0; k < 3; ++k) {
            if (std::abs(dl[k]) < 1e-12) {
                if (std::abs(ol[k]) > half_) return false;
                continue;
            }
            double a = (-half_ - ol[k]) / dl[k];
            double b = (half_ - ol[k]) / dl[k];
            if (a > b) std::swap(a, b);
            t0 = std::max(t0, a);
            t1 = std::min(t1, b);
            if (t0 > t1) return false;
        }
        *t_hit = t0;
        *obj = 0;
        return true;
    }

    Vec3 surface_color(const Vec3& p, int, int frame) const override {
        return texture_color(rot(frame).transpose() * p, 0);
    }

    bool correspond(const Vec3& p, int, int from, int to, Vec3* p_to) const override {
        *p_to = rot(to) * (rot(from).transpose() * p);
        return true;
    }

    TriMesh ground_truth_mesh(int frame) const override {
        // Each face subdivided 8x8 for a dense reference surface.
        TriMesh mesh;
        const int k = 8;
        const Mat3 r = rot(frame);
        for (int axis = 0; axis < 3; ++axis) {
            for (int sign = -1; sign <= 1; sign += 2) {
                const int u = (axis + 1) % 3, v = (axis + 2) % 3;
                for (int i = 0; i < k; ++i) {
                    for (int j = 0; j < k; ++j) {
                        auto corner = [&](int ii, int jj) {
                            Vec3 p;
                            p[axis] = sign * half_;
                            p[u] = -half_ + 2.0 * half_ * ii / k;
                            p[v] = -half_ + 2.0 * half_ * jj / k;
                            return r * p;
                        };
                        const int base = static_cast<int>(mesh.vertices.size());
                        mesh.vertices.push_back(corner(i, j));
                        mesh.vertices.push_back(corner(i + 1, j));
                        mesh.vertices.push_back(corner(i + 1, j + 1));
                        mesh.vertices.push_back(corner(i, j + 1));
                        if (sign > 0) {
                            mesh.faces.push_back({base, base + 1, base + 2});
                            mesh.faces.push_back({base, base + 2, base + 3});
                        } else {
                            mesh.faces.push_back({base, base + 2, base + 1});
                            mesh.faces.push_back({base, base + 3, base + 2});
                        }
                    }
                }
            }
        }
        return mesh;
    }

    void scene_box(int, Vec3* lo, Vec3* hi) const override {
        const double r = half_ * std::sqrt(3.0) * 1.2;
        *lo = -r * Vec3::Ones();
        *hi = r * Vec3::Ones();
    }

    SeedPoints sample_surface(int frame, int count, Rng& rng) const override {
        SeedPoints pts;
        const Mat3 r = rot(frame);
        for (int k = 0; k < count; ++k) {
            const int axis = static_cast<int>(rng.index(3));
            const int sign = rng.uniform() < 0.5 ? -1 : 1;
            Vec3 p;
            p[axis] = sign * half_;
            p[(axis + 1) % 3] = rng.uniform(-half_, half_);
            p[(axis + 2) % 3] = rng.uniform(-half_, half_);
            const Vec3 pw = r * p;
            pts.positions.push_back(pw);
            pts.colors.push_back(texture_color(p, 0));
        }
        return pts;
    }

private:
    double half_;
    double rate_;
};

// ---------------------------------------------------------------------------
// Deforming blob (sinusoidal radial displacement) next to a static sphere.
// ---------------------------------------------------------------------------

class BlobScene final : public AnalyticScene {
public:
    BlobScene() = default;

    double radius_at(const Vec3& dir, int frame) const {
        const double y = dir.x() * dir.x() - dir.y() * dir.y();  // smooth quadrupole in [-1, 1]
        return kR0 * (1.0 + kAmp * std::sin(2.0 * M_PI * frame / kPeriod) * y);
    }

    double implicit(const Vec3& p, int frame) const {
        const Vec3 rel = p - kBlobCenter;
        const double r = rel.norm();
        if (r < 1e-12) return -kR0;
        return r - radius_at(rel / r, frame);
    }

    bool raycast(const Vec3& o, const Vec3& d, int frame, double* t_hit, int* obj) const override {
        double best = std::numeric_limits<double>::infinity();
        int best_obj = -1;
        double t_static;
        if (ray_sphere(o, d, kStaticCenter, kStaticR, &t_static)) {
            best = t_static;
            best_obj = 1;
        }
        // March the blob inside its bounding sphere.
        double tb;
        if (ray_sphere(o, d, kBlobCenter, kR0 * (1.0 + kAmp) + 1e-6, &tb)) {
            const double t_far = tb + 2.0 * kR0 * (1.0 + kAmp) / d.norm() + 1e-6;
            const int steps = 192;
            double prev_t = tb;
            double prev_f = implicit(o + prev_t * d, frame);
            for (int s = 1; s <= steps && prev_t < best; ++s) {
                const double t = tb + (t_far - tb) * s / steps;
                const double f = implicit(o + t * d, frame);
                if (prev_f > 0 && f <= 0) {
                    double lo = prev_t, hi = t;
                    for (int it = 0; it < 60; ++it) {
                        const double mid = 0.5 * (lo + hi);
                        if (implicit(o + mid * d, frame) > 0)
                            lo = mid;
                        else
                            hi = mid;
                    }
                    const double t_blob = 0.5 * (lo + hi);
                    if (t_blob < best) {
                        best = t_blob;
                        best_obj = 0;
                    }
                    break;
                }
                prev_t = t;
                prev_f = f;
            }
        }
        if (best_obj < 0) return false;
        *t_hit = best;
        *obj = best_obj;
        return true;
    }

    Vec3 surface_color(const Vec3& p, int obj, int) const override {
        // The blob's texture rides on the direction from its center, so the
        // material is attached to the deforming surface.
        if (obj == 1) return texture_color(p - kStaticCenter, 2);
        const Vec3 dir = (p - kBlobCenter).normalized();
        return texture_color(kR0 * dir, 1);
    }

    bool correspond(const Vec3& p, int obj, int from, int to, Vec3* p_to) const override {
        if (obj == 1) {
            *p_to = p;
            return true;
        }
        const Vec3 rel = p - kBlobCenter;
        const Vec3 dir = rel.normalized();
        (void)from;
        *p_to = kBlobCenter + radius_at(dir, to) * dir;
        return true;
    }

    TriMesh ground_truth_mesh(int frame) const override {
        TriMesh blob = icosphere(3);
        for (auto& v : blob.vertices) v = kBlobCenter + radius_at(v, frame) * v;
        TriMesh mesh = std::move(blob);
        append_mesh(mesh, transform_mesh(icosphere(3), kStaticR, kStaticCenter));
        return mesh;
    }

    void scene_box(int, Vec3* lo, Vec3* hi) const override {
        const double rb = kR0 * (1 + kAmp) * 1.25;
        *lo = (kBlobCenter - rb * Vec3::Ones()).cwiseMin(kStaticCenter - 1.25 * kStaticR * Vec3::Ones());
        *hi = (kBlobCenter + rb * Vec3::Ones()).cwiseMax(kStaticCenter + 1.25 * kStaticR * Vec3::Ones());
    }

    SeedPoints sample_surface(int frame, int count, Rng& rng) const override {
        SeedPoints pts;
        for (int k = 0; k < count; ++k) {
            Vec3 dir(rng.normal(), rng.normal(), rng.normal());
            dir.normalize();
            if (rng.uniform() < 0.55) {
                const Vec3 p = kBlobCenter + radius_at(dir, frame) * dir;
                pts.positions.push_back(p);
                pts.colors.push_back(surface_color(p, 0, frame));
            } else {
                const Vec3 p = kStaticCenter + kStaticR * dir;
                pts.positions.push_back(p);
                pts.colors.push_back(surface_color(p, 1, frame));
            }
        }
        return pts;
    }

    static constexpr double kR0 = 0.38;
    static constexpr double kAmp = 0.12;
    static constexpr double kPeriod = 8.0;
    static inline const Vec3 kBlobCenter = Vec3(-0.5, 0.0, 0.0);
    static inline const Vec3 kStaticCenter = Vec3(0.55, 0.05, 0.0);
    static constexpr double kStaticR = 0.32;
};

}  // namespace

std::unique_ptr<AnalyticScene> make_scene(const std::string& name, std::uint64_t) {
    if (name == "translating-sphere")
        return std::make_unique<SphereScene>(std::vector<SphereObject>{{Vec3(-0.225, 0, 0), Vec3(0.05, 0, 0), 0.5, 0, 0}});
    if (name == "static-sphere")
        return std::make_unique<SphereScene>(std::vector<SphereObject>{{Vec3(0, 0, 0), Vec3::Zero(), 0.5, 0, 0}});
    if (name == "emerging-object")
        return std::make_unique<SphereScene>(std::vector<SphereObject>{
            {Vec3(-0.18, 0, 0), Vec3::Zero(), 0.5, 0, 0},
            {Vec3(0.57, 0, 0), Vec3::Zero(), 0.25, /*appear_frame=*/3, 1}});
    if (name == "rotating-cube") return std::make_unique<CubeScene>(0.4, 5.0);
    if (name == "deforming-blob") return std::make_unique<BlobScene>();
    throw InvalidSpec("unknown scene family: " + name);
}

std::vector<CameraModel> make_camera_ring(int count, int resolution, double radius, double focal_px) {
    std::vector<CameraModel> cams;
    for (int i = 0; i < count; ++i) {
        const double az = 2.0 * M_PI * i / count;
        const double el = (i % 2 == 0 ? 0.28 : -0.22) + 0.03 * (i % 3);
        const Vec3 eye(radius * std::cos(az) * std::cos(el), radius * std::sin(az) * std::cos(el),
                       radius * std::sin(el));
        cams.push_back(make_lookat_camera(eye, Vec3::Zero(), Vec3(0, 0, 1), focal_px, resolution, resolution));
    }
    return cams;
}

ImageD raytrace_image(const AnalyticScene& scene, const CameraModel& cam, int frame) {
    ImageD img(cam.height, cam.width, 3, 0.0);
    const Vec3 origin = cam.center();
    parallel_for(cam.height, [&](std::int64_t yy) {
        const int y = static_cast<int>(yy);
        for (int x = 0; x < cam.width; ++x) {
            Vec3 acc = Vec3::Zero();
            for (int sy = 0; sy < 2; ++sy) {
                for (int sx = 0; sx < 2; ++sx) {
                    const double px = x + 0.25 + 0.5 * sx;
                    const double py = y + 0.25 + 0.5 * sy;
                    const Vec3 dir = cam.R.transpose() * cam.ray_dir(px, py);
                    double t;
                    int obj;
                    if (scene.raycast(origin, dir, frame, &t, &obj))
                        acc += scene.surface_color(origin + t * dir, obj, frame);
                }
            }
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = std::clamp(acc[c] / 4.0, 0.0, 1.0);
        }
    });
    return img;
}

ImageD raytrace_mask(const AnalyticScene& scene, const CameraModel& cam, int frame) {
    ImageD mask(cam.height, cam.width, 1, 0.0);
    const Vec3 origin = cam.center();
    parallel_for(cam.height, [&](std::int64_t yy) {
        const int y = static_cast<int>(yy);
        for (int x = 0; x < cam.width; ++x) {
            const Vec3 dir = cam.R.transpose() * cam.ray_dir(x + 0.5, y + 0.5);
            double t;
            int obj;
            if (scene.raycast(origin, dir, frame, &t, &obj)) mask.at(y, x) = 1.0;
        }
    });
    return mask;
}

namespace {

// Projects a world point into the camera; false if behind.
bool project_point(const CameraModel& cam, const Vec3& p, Vec2* px) {
    const Vec3 pc = cam.to_camera(p);
    if (pc.z() <= 1e-9) return false;
    *px = Vec2(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
    return true;
}

// One direction of exact flow: for every pixel of frame `from`, the
// correspondence position in frame `to` (same static camera), with an
// occlusion check in the target frame.
FlowField flow_one_way(const AnalyticScene& scene, const CameraModel& cam, int from, int to) {
    FlowField field(cam.height, cam.width);
    field.valid.fill(0);
    const Vec3 origin = cam.center();
    parallel_for(cam.height, [&](std::int64_t yy) {
        const int y = static_cast<int>(yy);
        for (int x = 0; x < cam.width; ++x) {
            const Vec3 dir = cam.R.transpose() * cam.ray_dir(x + 0.5, y + 0.5);
            double t;
            int obj;
            if (!scene.raycast(origin, dir, from, &t, &obj)) continue;
            const Vec3 p_from = origin + t * dir;
            Vec3 p_to;
            if (!scene.correspond(p_from, obj, from, to, &p_to)) continue;
            if (p_to == p_from) {  // static content: zero flow by definition
                field.vectors.at(y, x, 0) = 0.0;
                field.vectors.at(y, x, 1) = 0.0;
                field.valid.at(y, x) = 1;
                continue;
            }
            Vec2 px;
            if (!project_point(cam, p_to, &px)) continue;
            // Occluded in the target frame?
            const Vec3 dir_to = p_to - origin;
            double t2;
            int obj2;
            if (scene.raycast(origin, dir_to.normalized(), to, &t2, &obj2)) {
                if (t2 < dir_to.norm() * (1.0 - 1e-4)) continue;
            }
            field.vectors.at(y, x, 0) = px.x() - (x + 0.5);
            field.vectors.at(y, x, 1) = px.y() - (y + 0.5);
            field.valid.at(y, x) = 1;
        }
    });
    return field;
}

}  // namespace

std::pair<FlowField, FlowField> raytrace_flow(const AnalyticScene& scene, const CameraModel& cam, int frame_t) {
    FlowField fwd = flow_one_way(scene, cam, frame_t - 1, frame_t);  // on the t-1 grid
    FlowField bwd = flow_one_way(scene, cam, frame_t, frame_t - 1);  // on the t grid
    return {std::move(fwd), std::move(bwd)};
}

SequenceConfig synth_scene(const SynthSpec& spec) {
    if (spec.frames < 1 || spec.views < 3 || spec.heldout < 0 || spec.heldout >= spec.views - 1)
        throw InvalidSpec("synth_scene: need frames >= 1 and at least 3 cameras with fewer held-out than total");
    const auto scene = make_scene(spec.scene, spec.seed);

    fs::create_directories(spec.out_dir + "/images");
    fs::create_directories(spec.out_dir + "/masks");
    fs::create_directories(spec.out_dir + "/flow");
    fs::create_directories(spec.out_dir + "/gt_meshes");

    const double focal = spec.resolution * 100.0 / 64.0;
    const auto cams = make_camera_ring(spec.views, spec.resolution, 2.6, focal);
    write_cameras(cams, spec.out_dir + "/cameras.txt");

    SequenceConfig cfg;
    cfg.frames = spec.frames;
    cfg.views = spec.views;
    cfg.width = cfg.height = spec.resolution;
    cfg.sh_degree = 1;
    cfg.flow_provider = "synthetic-gt";
    cfg.seed = spec.seed;
    cfg.dataset_dir = spec.out_dir;
    for (int k = 0; k < spec.heldout; ++k) cfg.heldout_views.push_back(spec.views - 1 - k);
    scene->scene_box(spec.frames, &cfg.scene_box_lo, &cfg.scene_box_hi);
    cfg.init_points_file = "points_frame0.txt";

    Rng rng(seed_stream(spec.seed, 0xBEEF));
    write_seed_points(scene->sample_surface(0, 2000, rng), spec.out_dir + "/points_frame0.txt");

    for (int t = 0; t < spec.frames; ++t) {
        for (int v = 0; v < spec.views; ++v) {
            write_png_srgb(raytrace_image(*scene, cams[v], t), DatasetLoader::image_path(spec.out_dir, t, v));
            write_png_mask(raytrace_mask(*scene, cams[v], t), DatasetLoader::mask_path(spec.out_dir, t, v));
            if (t >= 1) {
                auto [fwd, bwd] = raytrace_flow(*scene, cams[v], t);
                write_flow(fwd, flow_path(spec.out_dir, t, v, /*forward=*/true));
                write_flow(bwd, flow_path(spec.out_dir, t, v, /*forward=*/false));
            }
        }
        char buf[32];
        std::snprintf(buf, sizeof(buf), "/gt_meshes/f%04d.ply", t);
        write_mesh_ply(scene->ground_truth_mesh(t), spec.out_dir + buf);
    }
    write_sequence_config(cfg, spec.out_dir + "/sequence.cfg");
    return cfg;
}

}  // namespace dynsurf
