#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace dynsurf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

// ---------------------------------------------------------------------------
// Errors. Each maps to a named failure mode of the public API.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define DYNSURF_DEFINE_ERROR(Name)                                  \
    struct Name : Error {                                           \
        explicit Name(const std::string& what) : Error(what) {}     \
    }

DYNSURF_DEFINE_ERROR(ShapeMismatch);
DYNSURF_DEFINE_ERROR(DegreeMismatch);
DYNSURF_DEFINE_ERROR(LengthMismatch);
DYNSURF_DEFINE_ERROR(StaleForward);
DYNSURF_DEFINE_ERROR(DivergenceDetected);
DYNSURF_DEFINE_ERROR(NonFiniteLoss);
DYNSURF_DEFINE_ERROR(AllPruned);
DYNSURF_DEFINE_ERROR(ResolutionMismatch);
DYNSURF_DEFINE_ERROR(MissingFile);
DYNSURF_DEFINE_ERROR(CalibrationParse);
DYNSURF_DEFINE_ERROR(EmptyCloud);
DYNSURF_DEFINE_ERROR(SolverDiverged);
DYNSURF_DEFINE_ERROR(DegenerateNormals);
DYNSURF_DEFINE_ERROR(IoError);
DYNSURF_DEFINE_ERROR(InvalidSpec);

#undef DYNSURF_DEFINE_ERROR

// ---------------------------------------------------------------------------
// Small math helpers shared across modules.
// ---------------------------------------------------------------------------

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double lerp(double a, double b, double t) { return a + (b - a) * t; }

// Quaternion layout is (w, x, y, z) throughout.
inline Mat3 quat_to_rotmat(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

// Hamilton product a ⊗ b.
inline Vec4 quat_mul(const Vec4& a, const Vec4& b) {
    return Vec4(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
                a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
                a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
                a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

// Pulls a gradient w.r.t. R(q) back to the (unit) quaternion components.
inline Vec4 rotmat_grad_to_quat(const Mat3& g, const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 dw, dx, dy, dz;
    dw << 0, -z, y, z, 0, -x, -y, x, 0;
    dx << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
    dy << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
    dz << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
    return 2.0 * Vec4(g.cwiseProduct(dw).sum(), g.cwiseProduct(dx).sum(),
                      g.cwiseProduct(dy).sum(), g.cwiseProduct(dz).sum());
}

// Gradient of v / |v| given the gradient w.r.t. the normalized vector.
template <typename V>
inline V normalize_backward(const V& v, const V& g_unit) {
    const double n = v.norm();
    const V u = v / n;
    return (g_unit - u * u.dot(g_unit)) / n;
}

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937_64 gives a standardized bit stream; the normal
// sampler is explicit Box-Muller so draws do not depend on the standard
// library's distribution internals.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives independent sub-stream seeds, e.g. per frame and purpose.
inline std::uint64_t seed_stream(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    return splitmix64(base ^ splitmix64(a ^ 0x5851f42d4c957f2dULL) ^ splitmix64(b ^ 0x14057b7ef767814fULL));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform() {  // [0, 1)
        return (gen_() >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    std::uint64_t next_u64() { return gen_(); }

    // Uniform integer in [0, n).
    std::uint64_t index(std::uint64_t n) { return gen_() % n; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Thread pool replacement: static chunked parallel-for. Work item i always
// lands on worker i * workers / n, so reductions over per-worker buffers in
// worker order are reproducible for a fixed worker count.
// ---------------------------------------------------------------------------

int worker_count();        // DYNSURF_THREADS env override, else hardware
void set_worker_count(int n);

// fn(worker, begin, end) over [0, n) split into contiguous chunks.
void parallel_chunks(std::int64_t n, const std::function<void(int, std::int64_t, std::int64_t)>& fn);

// Convenience per-index form.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace dynsurf
