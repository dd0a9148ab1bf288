#include "dynsurf/mesh.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "mesh_tables.hpp"

namespace dynsurf {

double TriMesh::signed_volume() const {
    double v = 0.0;
    for (const auto& f : faces) {
        const Vec3& a = vertices[f[0]];
        const Vec3& b = vertices[f[1]];
        const Vec3& c = vertices[f[2]];
        v += a.dot(b.cross(c));
    }
    return v / 6.0;
}

OrientedPoints fuse_depth_normal(const std::vector<RenderMaps>& renders, const std::vector<CameraModel>& cams,
                                 double opacity_thresh, double voxel) {
    if (renders.size() != cams.size() || renders.empty())
        throw LengthMismatch("fuse_depth_normal: need one camera per render");
    std::vector<Vec3> pts, nrms;
    for (std::size_t v = 0; v < renders.size(); ++v) {
        const RenderMaps& m = renders[v];
        const CameraModel& cam = cams[v];
        const Vec3 eye = cam.center();
        for (int y = 0; y < m.depth.height(); ++y) {
            for (int x = 0; x < m.depth.width(); ++x) {
                if (!(m.opacity.at(y, x) > opacity_thresh)) continue;
                const double z = m.depth.at(y, x);
                if (!(z > 0.0)) continue;
                const Vec3 p_cam = z * cam.ray_dir(x + 0.5, y + 0.5);
                const Vec3 p = cam.to_world(p_cam);
                Vec3 n_cam(m.normal.at(y, x, 0), m.normal.at(y, x, 1), m.normal.at(y, x, 2));
                if (n_cam.squaredNorm() < 1e-12) continue;
                Vec3 n = cam.R.transpose() * n_cam;
                if (n.dot(eye - p) < 0.0) n = -n;  // orient toward the observing camera
                pts.push_back(p);
                nrms.push_back(n.normalized());
            }
        }
    }
    if (pts.empty()) throw EmptyCloud("fuse_depth_normal: no pixel passed the opacity threshold");

    // Voxel downsample: average position and normal per cell, ordered keys
    // for determinism.
    Vec3 lo = pts.front();
    for (const auto& p : pts) lo = lo.cwiseMin(p);
    struct Cell {
        Vec3 p = Vec3::Zero();
        Vec3 n = Vec3::Zero();
        int count = 0;
    };
    std::map<std::array<std::int64_t, 3>, Cell> cells;
    const double inv = 1.0 / std::max(voxel, 1e-12);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const std::array<std::int64_t, 3> key = {static_cast<std::int64_t>(std::floor((pts[i].x() - lo.x()) * inv)),
                                                 static_cast<std::int64_t>(std::floor((pts[i].y() - lo.y()) * inv)),
                                                 static_cast<std::int64_t>(std::floor((pts[i].z() - lo.z()) * inv))};
        Cell& c = cells[key];
        c.p += pts[i];
        c.n += nrms[i];
        ++c.count;
    }
    OrientedPoints out;
    out.points.reserve(cells.size());
    for (const auto& [key, c] : cells) {
        const Vec3 n = c.n / c.count;
        if (n.norm() < 1e-6) continue;  // views disagree completely; drop
        out.points.push_back(c.p / c.count);
        out.normals.push_back(n.normalized());
    }
    if (out.points.empty()) throw EmptyCloud("fuse_depth_normal: all cells cancelled out");
    return out;
}

// ---------------------------------------------------------------------------
// Screened Poisson on a regular grid
// ---------------------------------------------------------------------------

namespace {

struct Grid {
    int n = 0;        // nodes per side
    Vec3 lo;
    double h = 0;     // node spacing, world units
    std::size_t idx(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * n + y) * n + x;
    }
};

struct Sample {
    std::size_t corner[8];
    double w[8];
};

// y += (G^T G) x for one axis plus screening handled by the caller.
void apply_laplacian(const Grid& g, const std::vector<double>& x, std::vector<double>& y) {
    const int n = g.n;
    parallel_for(n, [&](std::int64_t zz) {
        const int z = static_cast<int>(zz);
        for (int yy = 0; yy < n; ++yy) {
            for (int xx = 0; xx < n; ++xx) {
                const std::size_t c = g.idx(xx, yy, z);
                double acc = 0.0;
                const double v = x[c];
                if (xx > 0) acc += v - x[g.idx(xx - 1, yy, z)];
                if (xx + 1 < n) acc += v - x[g.idx(xx + 1, yy, z)];
                if (yy > 0) acc += v - x[g.idx(xx, yy - 1, z)];
                if (yy + 1 < n) acc += v - x[g.idx(xx, yy + 1, z)];
                if (z > 0) acc += v - x[g.idx(xx, yy, z - 1)];
                if (z + 1 < n) acc += v - x[g.idx(xx, yy, z + 1)];
                y[c] += acc;
            }
        }
    });
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace

TriMesh screened_poisson(const OrientedPoints& cloud, const PoissonParams& params) {
    if (cloud.size() < 100) throw EmptyCloud("screened_poisson: need at least 100 oriented points");
    double mean_mag = 0.0;
    for (const auto& nv : cloud.normals) mean_mag += nv.norm();
    if (mean_mag / cloud.size() < 0.1)
        throw DegenerateNormals("screened_poisson: normals have near-zero magnitude");

    Grid grid;
    grid.n = 1 << params.grid_depth;
    Vec3 lo = cloud.points.front(), hi = cloud.points.front();
    for (const auto& p : cloud.points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Vec3 center = 0.5 * (lo + hi);
    const double side = std::max((hi - lo).maxCoeff(), 1e-9) * 1.15;
    grid.lo = center - 0.5 * side * Vec3::Ones();
    grid.h = side / (grid.n - 1);

    const std::size_t total = static_cast<std::size_t>(grid.n) * grid.n * grid.n;
    std::vector<double> vx(total, 0.0), vy(total, 0.0), vz(total, 0.0);
    std::vector<Sample> samples(cloud.size());

    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3 gp = (cloud.points[i] - grid.lo) / grid.h;
        int ix = std::clamp(static_cast<int>(gp.x()), 0, grid.n - 2);
        int iy = std::clamp(static_cast<int>(gp.y()), 0, grid.n - 2);
        int iz = std::clamp(static_cast<int>(gp.z()), 0, grid.n - 2);
        const double fx = std::clamp(gp.x() - ix, 0.0, 1.0);
        const double fy = std::clamp(gp.y() - iy, 0.0, 1.0);
        const double fz = std::clamp(gp.z() - iz, 0.0, 1.0);
        int c = 0;
        for (int dz = 0; dz <= 1; ++dz)
            for (int dy = 0; dy <= 1; ++dy)
                for (int dx = 0; dx <= 1; ++dx, ++c) {
                    const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
                    samples[i].corner[c] = grid.idx(ix + dx, iy + dy, iz + dz);
                    samples[i].w[c] = w;
                }
        for (c = 0; c < 8; ++c) {
            vx[samples[i].corner[c]] += samples[i].w[c] * cloud.normals[i].x();
            vy[samples[i].corner[c]] += samples[i].w[c] * cloud.normals[i].y();
            vz[samples[i].corner[c]] += samples[i].w[c] * cloud.normals[i].z();
        }
    }

    // b = G^T (h * edge-averaged V) per axis.
    std::vector<double> b(total, 0.0);
    const int n = grid.n;
    auto edge_avg_accumulate = [&](const std::vector<double>& v, int axis) {
        parallel_for(n, [&](std::int64_t zz) {
            const int z = static_cast<int>(zz);
            for (int y = 0; y < n; ++y) {
                for (int x = 0; x < n; ++x) {
                    const std::size_t c = grid.idx(x, y, z);
                    // (G^T e)[i] = e[i-1] - e[i], e[j] = 0.5 h (v[j] + v[j+1])
                    double acc = 0.0;
                    int coord = axis == 0 ? x : (axis == 1 ? y : z);
                    auto at = [&](int delta) {
                        if (axis == 0) return v[grid.idx(x + delta, y, z)];
                        if (axis == 1) return v[grid.idx(x, y + delta, z)];
                        return v[grid.idx(x, y, z + delta)];
                    };
                    if (coord > 0) acc += 0.5 * grid.h * (at(-1) + at(0));
                    if (coord + 1 < n) acc -= 0.5 * grid.h * (at(0) + at(1));
                    b[c] += acc;
                }
            }
        });
    };
    edge_avg_accumulate(vx, 0);
    edge_avg_accumulate(vy, 1);
    edge_avg_accumulate(vz, 2);

    const double screen_w = params.screening / static_cast<double>(cloud.size());
    auto apply_A = [&](const std::vector<double>& x, std::vector<double>& y) {
        std::fill(y.begin(), y.end(), 0.0);
        apply_laplacian(grid, x, y);
        for (const Sample& s : samples) {
            double sampled = 0.0;
            for (int c = 0; c < 8; ++c) sampled += s.w[c] * x[s.corner[c]];
            const double f = screen_w * sampled;
            for (int c = 0; c < 8; ++c) y[s.corner[c]] += f * s.w[c];
        }
    };

    // Conjugate gradients, zero start.
    std::vector<double> chi(total, 0.0), r = b, p = b, ap(total, 0.0);
    const double b_norm = std::sqrt(dot(b, b));
    if (b_norm <= 0.0) throw DegenerateNormals("screened_poisson: zero right-hand side");
    double rr = dot(r, r);
    double best_rel = std::sqrt(rr) / b_norm;
    int since_best = 0;
    for (int it = 0; it < params.cg_max_iters; ++it) {
        const double rel = std::sqrt(rr) / b_norm;
        if (rel <= params.cg_tol) break;
        if (rel < best_rel * 0.9999) {
            best_rel = rel;
            since_best = 0;
        } else if (++since_best > 300) {
            throw SolverDiverged("screened_poisson: CG residual stagnated at " + std::to_string(rel));
        }
        apply_A(p, ap);
        const double alpha = rr / dot(p, ap);
        for (std::size_t i = 0; i < total; ++i) {
            chi[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        const double rr_new = dot(r, r);
        const double beta = rr_new / rr;
        rr = rr_new;
        for (std::size_t i = 0; i < total; ++i) p[i] = r[i] + beta * p[i];
    }
    if (std::sqrt(rr) / b_norm > params.cg_tol * 10 && std::sqrt(rr) / b_norm > 1e-4)
        throw SolverDiverged("screened_poisson: CG did not reach the target residual");

    // Iso level: mean of chi at the input samples.
    double iso = 0.0;
    for (const Sample& s : samples) {
        double sampled = 0.0;
        for (int c = 0; c < 8; ++c) sampled += s.w[c] * chi[s.corner[c]];
        iso += sampled;
    }
    iso /= static_cast<double>(cloud.size());

    // Marching cubes. chi grows along the outward normal, so inside = below
    // iso; corners below iso set the case bits.
    TriMesh mesh;
    std::unordered_map<std::uint64_t, int> edge_vertex;
    auto vertex_on_edge = [&](int ax, int ay, int az, int bx, int by, int bz) {
        std::size_t ia = grid.idx(ax, ay, az), ib = grid.idx(bx, by, bz);
        int axis = ax != bx ? 0 : (ay != by ? 1 : 2);
        if (ia > ib) std::swap(ia, ib);
        const std::uint64_t key = static_cast<std::uint64_t>(ia) * 3 + axis;
        auto it = edge_vertex.find(key);
        if (it != edge_vertex.end()) return it->second;
        const double va = chi[ia], vb = chi[ib];
        double t = (iso - va) / (vb - va);
        t = std::clamp(t, 0.0, 1.0);
        // Reconstruct coordinates from the flat indices.
        const int a_x = static_cast<int>(ia % n), a_y = static_cast<int>((ia / n) % n), a_z = static_cast<int>(ia / (static_cast<std::size_t>(n) * n));
        const int b_x = static_cast<int>(ib % n), b_y = static_cast<int>((ib / n) % n), b_z = static_cast<int>(ib / (static_cast<std::size_t>(n) * n));
        const Vec3 A = grid.lo + grid.h * Vec3(a_x, a_y, a_z);
        const Vec3 B = grid.lo + grid.h * Vec3(b_x, b_y, b_z);
        const Vec3 pos = A + t * (B - A);
        const int index = static_cast<int>(mesh.vertices.size());
        mesh.vertices.push_back(pos);
        edge_vertex.emplace(key, index);
        return index;
    };

    for (int z = 0; z + 1 < n; ++z) {
        for (int y = 0; y + 1 < n; ++y) {
            for (int x = 0; x + 1 < n; ++x) {
                int cube = 0;
                double vals[8];
                for (int c = 0; c < 8; ++c) {
                    vals[c] = chi[grid.idx(x + mc::kCorner[c][0], y + mc::kCorner[c][1], z + mc::kCorner[c][2])];
                    if (vals[c] < iso) cube |= 1 << c;
                }
                if (mc::kEdgeTable[cube] == 0) continue;
                int everts[12];
                for (int e = 0; e < 12; ++e) {
                    if (!(mc::kEdgeTable[cube] & (1 << e))) continue;
                    const int c0 = mc::kEdgeEnds[e][0], c1 = mc::kEdgeEnds[e][1];
                    everts[e] = vertex_on_edge(x + mc::kCorner[c0][0], y + mc::kCorner[c0][1], z + mc::kCorner[c0][2],
                                               x + mc::kCorner[c1][0], y + mc::kCorner[c1][1], z + mc::kCorner[c1][2]);
                }
                for (int tri = 0; mc::kTriTable[cube][tri] != -1; tri += 3) {
                    // Winding chosen so outward-oriented input normals (chi
                    // increasing outward, inside below iso) give faces with
                    // positive signed volume.
                    mesh.faces.push_back({everts[mc::kTriTable[cube][tri]], everts[mc::kTriTable[cube][tri + 2]],
                                          everts[mc::kTriTable[cube][tri + 1]]});
                }
            }
        }
    }
    return mesh;
}

// ---------------------------------------------------------------------------
// PLY I/O
// ---------------------------------------------------------------------------

void write_mesh_ply(const TriMesh& mesh, const std::string& path) {
    if (mesh.empty()) throw IoError("write_mesh_ply: refusing to write an empty mesh");
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("write_mesh_ply: cannot open " + path);
    std::fprintf(f, "ply\nformat ascii 1.0\nelement vertex %zu\n", mesh.vertices.size());
    std::fprintf(f, "property float x\nproperty float y\nproperty float z\n");
    std::fprintf(f, "element face %zu\nproperty list uchar int vertex_indices\nend_header\n", mesh.faces.size());
    for (const auto& v : mesh.vertices)
        std::fprintf(f, "%.9g %.9g %.9g\n", static_cast<float>(v.x()), static_cast<float>(v.y()),
                     static_cast<float>(v.z()));
    for (const auto& face : mesh.faces) std::fprintf(f, "3 %d %d %d\n", face[0], face[1], face[2]);
    if (std::fclose(f) != 0) throw IoError("write_mesh_ply: write failure on " + path);
}

TriMesh read_mesh_ply(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_mesh_ply: cannot open " + path);
    std::string line;
    std::size_t n_verts = 0, n_faces = 0;
    bool header_done = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "element") {
            std::string what;
            std::size_t count;
            ls >> what >> count;
            if (what == "vertex") n_verts = count;
            if (what == "face") n_faces = count;
        } else if (tok == "end_header") {
            header_done = true;
            break;
        }
    }
    if (!header_done) throw IoError("read_mesh_ply: malformed header in " + path);
    TriMesh mesh;
    mesh.vertices.reserve(n_verts);
    for (std::size_t i = 0; i < n_verts; ++i) {
        float x, y, z;
        if (!(in >> x >> y >> z)) throw IoError("read_mesh_ply: truncated vertex data");
        mesh.vertices.emplace_back(x, y, z);
    }
    for (std::size_t i = 0; i < n_faces; ++i) {
        int k, a, b, c;
        if (!(in >> k >> a >> b >> c) || k != 3) throw IoError("read_mesh_ply: only triangle faces supported");
        mesh.faces.push_back({a, b, c});
    }
    return mesh;
}

void write_points_ply(const OrientedPoints& cloud, const std::string& path) {
    if (cloud.points.empty()) throw IoError("write_points_ply: empty point cloud");
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("write_points_ply: cannot open " + path);
    std::fprintf(f, "ply\nformat ascii 1.0\nelement vertex %zu\n", cloud.points.size());
    std::fprintf(f, "property float x\nproperty float y\nproperty float z\n");
    std::fprintf(f, "property float nx\nproperty float ny\nproperty float nz\nend_header\n");
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        const Vec3& p = cloud.points[i];
        const Vec3& nv = cloud.normals[i];
        std::fprintf(f, "%.9g %.9g %.9g %.9g %.9g %.9g\n", static_cast<float>(p.x()), static_cast<float>(p.y()),
                     static_cast<float>(p.z()), static_cast<float>(nv.x()), static_cast<float>(nv.y()),
                     static_cast<float>(nv.z()));
    }
    if (std::fclose(f) != 0) throw IoError("write_points_ply: write failure on " + path);
}

// ---------------------------------------------------------------------------
// Chamfer distance and mesh topology helpers
// ---------------------------------------------------------------------------

namespace {

std::vector<Vec3> sample_surface(const TriMesh& mesh, int count, Rng& rng) {
    std::vector<double> cumulative;
    cumulative.reserve(mesh.faces.size());
    double total = 0.0;
    for (const auto& f : mesh.faces) {
        const Vec3 e1 = mesh.vertices[f[1]] - mesh.vertices[f[0]];
        const Vec3 e2 = mesh.vertices[f[2]] - mesh.vertices[f[0]];
        total += 0.5 * e1.cross(e2).norm();
        cumulative.push_back(total);
    }
    std::vector<Vec3> samples;
    samples.reserve(count);
    for (int i = 0; i < count; ++i) {
        const double target = rng.uniform() * total;
        const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), target);
        const std::size_t fi = std::min<std::size_t>(it - cumulative.begin(), mesh.faces.size() - 1);
        const auto& f = mesh.faces[fi];
        double u = rng.uniform(), v = rng.uniform();
        if (u + v > 1.0) {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        samples.push_back(mesh.vertices[f[0]] + u * (mesh.vertices[f[1]] - mesh.vertices[f[0]]) +
                          v * (mesh.vertices[f[2]] - mesh.vertices[f[0]]));
    }
    return samples;
}

double mean_nearest_distance(const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    // Uniform hash grid over `to`.
    Vec3 lo = to.front(), hi = to.front();
    for (const auto& p : to) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const double diag = (hi - lo).norm();
    const double cell = std::max(diag / 48.0, 1e-9);
    auto key_of = [&](const Vec3& p) {
        return std::array<std::int64_t, 3>{static_cast<std::int64_t>(std::floor((p.x() - lo.x()) / cell)),
                                           static_cast<std::int64_t>(std::floor((p.y() - lo.y()) / cell)),
                                           static_cast<std::int64_t>(std::floor((p.z() - lo.z()) / cell))};
    };
    std::map<std::array<std::int64_t, 3>, std::vector<int>> buckets;
    for (std::size_t i = 0; i < to.size(); ++i) buckets[key_of(to[i])].push_back(static_cast<int>(i));

    double total = 0.0;
    for (const auto& q : from) {
        const auto base = key_of(q);
        double best = std::numeric_limits<double>::infinity();
        for (int ring = 0; ring < 64; ++ring) {
            for (std::int64_t dz = -ring; dz <= ring; ++dz)
                for (std::int64_t dy = -ring; dy <= ring; ++dy)
                    for (std::int64_t dx = -ring; dx <= ring; ++dx) {
                        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
                        const auto it = buckets.find({base[0] + dx, base[1] + dy, base[2] + dz});
                        if (it == buckets.end()) continue;
                        for (const int i : it->second) best = std::min(best, (to[i] - q).norm());
                    }
            // Once a hit exists, one extra ring guarantees correctness.
            if (std::isfinite(best) && best <= (ring)*cell) break;
        }
        total += best;
    }
    return total / static_cast<double>(from.size());
}

}  // namespace

double chamfer_distance(const TriMesh& a, const TriMesh& b, int samples_per_mesh, std::uint64_t seed) {
    if (a.empty() || b.empty()) throw EmptyCloud("chamfer_distance: empty mesh");
    Rng rng(seed);
    const std::vector<Vec3> sa = sample_surface(a, samples_per_mesh, rng);
    const std::vector<Vec3> sb = sample_surface(b, samples_per_mesh, rng);
    return 0.5 * (mean_nearest_distance(sa, sb) + mean_nearest_distance(sb, sa));
}

long mesh_euler_characteristic(const TriMesh& mesh) {
    std::map<std::pair<int, int>, int> edges;
    for (const auto& f : mesh.faces) {
        for (int k = 0; k < 3; ++k) {
            const int a = f[k], b = f[(k + 1) % 3];
            edges[{std::min(a, b), std::max(a, b)}] += 1;
        }
    }
    return static_cast<long>(mesh.vertices.size()) - static_cast<long>(edges.size()) +
           static_cast<long>(mesh.faces.size());
}

}  // namespace dynsurf
