#pragma once

#include <array>

#include "dynsurf/camera.hpp"
#include "dynsurf/rasterizer.hpp"

namespace dynsurf {

struct OrientedPoints {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;  // unit, oriented outward (toward the observing camera)
    std::size_t size() const { return points.size(); }
};

struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;
    bool empty() const { return vertices.empty() || faces.empty(); }
    double signed_volume() const;
};

// Back-projects pixels with opacity > opacity_thresh from every view, rotates
// normals to world space (flipped toward the camera), merges across views and
// voxel-downsamples at resolution voxel. Throws EmptyCloud when nothing
// passes the threshold.
OrientedPoints fuse_depth_normal(const std::vector<RenderMaps>& renders, const std::vector<CameraModel>& cams,
                                 double opacity_thresh, double voxel);

struct PoissonParams {
    int grid_depth = 7;        // grid side 2^depth nodes
    double screening = 4.0;    // data-fit weight alpha
    double cg_tol = 1e-6;      // relative residual
    int cg_max_iters = 4000;
};

// Regular-grid screened Poisson reconstruction: solves div grad chi = div V
// for the trilinearly splatted normal field V with a screening term pulling
// chi to zero at the samples, then extracts the iso-surface at the mean
// sampled chi with marching cubes.
TriMesh screened_poisson(const OrientedPoints& cloud, const PoissonParams& params = {});

// ASCII PLY ("property float x/y/z" + uchar-int vertex_indices lists).
// Vertices round-trip bitwise at float precision. Throws IoError on an empty
// mesh or unwritable path.
void write_mesh_ply(const TriMesh& mesh, const std::string& path);
TriMesh read_mesh_ply(const std::string& path);

// Vertex-only PLY with normals.
void write_points_ply(const OrientedPoints& cloud, const std::string& path);

// Symmetric mean point-to-point distance between surface samples.
double chamfer_distance(const TriMesh& a, const TriMesh& b, int samples_per_mesh, std::uint64_t seed);

// Euler characteristic V - E + F over unique undirected edges.
long mesh_euler_characteristic(const TriMesh& mesh);

}  // namespace dynsurf
