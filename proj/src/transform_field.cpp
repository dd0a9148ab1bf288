#include "dynsurf/transform_field.hpp"

namespace dynsurf {

namespace {
constexpr std::uint64_t kHashP2 = 2654435761ULL;
constexpr std::uint64_t kHashP3 = 805459861ULL;

inline int hash_corner(int ix, int iy, int iz, int table_size) {
    const std::uint64_t h = static_cast<std::uint64_t>(ix) ^ (static_cast<std::uint64_t>(iy) * kHashP2) ^
                            (static_cast<std::uint64_t>(iz) * kHashP3);
    return static_cast<int>(h & static_cast<std::uint64_t>(table_size - 1));
}

void adam_update(std::vector<double>& m, std::vector<double>& v, double* params, const double* grads,
                 std::size_t n, double lr, std::int64_t t) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-15;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = b1 * m[i] + (1 - b1) * grads[i];
        v[i] = b2 * v[i] + (1 - b2) * grads[i] * grads[i];
        params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
}
}  // namespace

TransformField::TransformField(const Vec3& box_lo, const Vec3& box_hi, const FieldConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), lo_(box_lo), hi_(box_hi) {
    if ((cfg_.table_size & (cfg_.table_size - 1)) != 0) throw InvalidSpec("hash table size must be a power of two");
    for (int l = 0; l < cfg_.levels; ++l)
        level_res_.push_back(static_cast<int>(std::floor(cfg_.base_resolution * std::pow(cfg_.growth, l))));

    Rng rng(seed);
    table_.assign(static_cast<std::size_t>(cfg_.levels) * cfg_.table_size * cfg_.features, 0.0);
    for (auto& v : table_) v = rng.uniform(-1e-4, 1e-4);

    const int in_dim = cfg_.levels * cfg_.features;
    auto init_layer = [&](Eigen::MatrixXd& w, Eigen::VectorXd& b, int rows, int cols) {
        w.resize(rows, cols);
        b = Eigen::VectorXd::Zero(rows);
        const double bound = std::sqrt(6.0 / (rows + cols));
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) w(i, j) = rng.uniform(-bound, bound);
    };
    init_layer(w1_, b1_, cfg_.hidden, in_dim);
    init_layer(w2_, b2_, cfg_.hidden, cfg_.hidden);
    // Zero-initialized output layer: the fresh field is the identity map.
    w3_ = Eigen::MatrixXd::Zero(7, cfg_.hidden);
    b3_ = Eigen::VectorXd::Zero(7);

    auto init_moments = [](Moments& mt, std::size_t n) {
        mt.m.assign(n, 0.0);
        mt.v.assign(n, 0.0);
    };
    init_moments(mt_table_, table_.size());
    init_moments(mt_w1_, w1_.size());
    init_moments(mt_w2_, w2_.size());
    init_moments(mt_w3_, w3_.size());
    init_moments(mt_b1_, b1_.size());
    init_moments(mt_b2_, b2_.size());
    init_moments(mt_b3_, b3_.size());
}

TransformField TransformField::for_cloud(const SurfelCloud& cloud, const FieldConfig& cfg, std::uint64_t seed) {
    if (cloud.empty()) throw EmptyCloud("TransformField::for_cloud: empty cloud");
    Vec3 lo = cloud.center.front(), hi = cloud.center.front();
    for (const auto& c : cloud.center) {
        lo = lo.cwiseMin(c);
        hi = hi.cwiseMax(c);
    }
    Vec3 extent = hi - lo;
    for (int k = 0; k < 3; ++k) extent[k] = std::max(extent[k], 1e-3);
    return TransformField(lo - 0.1 * extent, hi + 0.1 * extent, cfg, seed);
}

void TransformField::encode_point(const Vec3& p, double* features, int* corner_idx, double* corner_w) const {
    // Positions outside the box clamp to its surface.
    Vec3 u;
    for (int k = 0; k < 3; ++k) u[k] = std::clamp((p[k] - lo_[k]) / (hi_[k] - lo_[k]), 0.0, 1.0);
    const int F = cfg_.features;
    for (int l = 0; l < cfg_.levels; ++l) {
        const int res = level_res_[l];
        const double gx = u.x() * res, gy = u.y() * res, gz = u.z() * res;
        const int ix = std::min(static_cast<int>(gx), res - 1);
        const int iy = std::min(static_cast<int>(gy), res - 1);
        const int iz = std::min(static_cast<int>(gz), res - 1);
        const double fx = gx - ix, fy = gy - iy, fz = gz - iz;
        const std::size_t level_off = static_cast<std::size_t>(l) * cfg_.table_size;
        for (int f = 0; f < F; ++f) features[l * F + f] = 0.0;
        int c = 0;
        for (int dz = 0; dz <= 1; ++dz)
            for (int dy = 0; dy <= 1; ++dy)
                for (int dx = 0; dx <= 1; ++dx, ++c) {
                    const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
                    const int idx = hash_corner(ix + dx, iy + dy, iz + dz, cfg_.table_size);
                    const std::size_t base = (level_off + idx) * F;
                    if (corner_idx) corner_idx[l * 8 + c] = idx;
                    if (corner_w) corner_w[l * 8 + c] = w;
                    for (int f = 0; f < F; ++f) features[l * F + f] += w * table_[base + f];
                }
    }
}

Se3Delta TransformField::delta_from_raw(const Eigen::Matrix<double, 7, 1>& raw) {
    Se3Delta d;
    d.translation = raw.head<3>();
    Vec4 q(raw[3] + 1.0, raw[4], raw[5], raw[6]);
    d.rotation = q / q.norm();
    return d;
}

TransformField::BatchResult TransformField::forward_batch(const std::vector<Vec3>& points) const {
    const int n = static_cast<int>(points.size());
    const int in_dim = cfg_.levels * cfg_.features;
    BatchResult r;
    r.encoded.resize(n, in_dim);
    parallel_chunks(n, [&](int, std::int64_t b, std::int64_t e) {
        std::vector<double> feat(in_dim);
        for (std::int64_t i = b; i < e; ++i) {
            encode_point(points[i], feat.data(), nullptr, nullptr);
            for (int j = 0; j < in_dim; ++j) r.encoded(i, j) = feat[j];
        }
    });
    r.h1 = ((r.encoded * w1_.transpose()).rowwise() + b1_.transpose()).cwiseMax(0.0);
    r.h2 = ((r.h1 * w2_.transpose()).rowwise() + b2_.transpose()).cwiseMax(0.0);
    r.raw = (r.h2 * w3_.transpose()).rowwise() + b3_.transpose();
    return r;
}

Se3Delta TransformField::predict(const Vec3& p) const {
    const BatchResult r = forward_batch({p});
    return delta_from_raw(r.raw.row(0).transpose());
}

TransformField::Gradients TransformField::zero_gradients() const {
    Gradients g;
    g.table.assign(table_.size(), 0.0);
    g.w1 = Eigen::MatrixXd::Zero(w1_.rows(), w1_.cols());
    g.w2 = Eigen::MatrixXd::Zero(w2_.rows(), w2_.cols());
    g.w3 = Eigen::MatrixXd::Zero(w3_.rows(), w3_.cols());
    g.b1 = Eigen::VectorXd::Zero(b1_.size());
    g.b2 = Eigen::VectorXd::Zero(b2_.size());
    g.b3 = Eigen::VectorXd::Zero(b3_.size());
    return g;
}

void TransformField::backward_batch(const std::vector<Vec3>& points, const BatchResult& fwd,
                                    const Eigen::MatrixXd& g_raw, Gradients& grads) const {
    const int n = static_cast<int>(points.size());
    grads.w3 += g_raw.transpose() * fwd.h2;
    grads.b3 += g_raw.colwise().sum().transpose();
    Eigen::MatrixXd g_h2 = g_raw * w3_;
    g_h2 = (fwd.h2.array() > 0.0).select(g_h2, 0.0);
    grads.w2 += g_h2.transpose() * fwd.h1;
    grads.b2 += g_h2.colwise().sum().transpose();
    Eigen::MatrixXd g_h1 = g_h2 * w2_;
    g_h1 = (fwd.h1.array() > 0.0).select(g_h1, 0.0);
    grads.w1 += g_h1.transpose() * fwd.encoded;
    grads.b1 += g_h1.colwise().sum().transpose();
    const Eigen::MatrixXd g_enc = g_h1 * w1_;

    // Scatter encoded gradients back to the hash tables (single-threaded for
    // a deterministic accumulation order).
    const int F = cfg_.features;
    std::vector<double> feat(cfg_.levels * F);
    std::vector<int> idx(cfg_.levels * 8);
    std::vector<double> w(cfg_.levels * 8);
    for (int i = 0; i < n; ++i) {
        encode_point(points[i], feat.data(), idx.data(), w.data());
        for (int l = 0; l < cfg_.levels; ++l) {
            const std::size_t level_off = static_cast<std::size_t>(l) * cfg_.table_size;
            for (int c = 0; c < 8; ++c) {
                const std::size_t base = (level_off + idx[l * 8 + c]) * F;
                for (int f = 0; f < F; ++f) grads.table[base + f] += w[l * 8 + c] * g_enc(i, l * F + f);
            }
        }
    }
}

void TransformField::adam_step(const Gradients& grads, double lr) {
    ++adam_t_;
    adam_update(mt_table_.m, mt_table_.v, table_.data(), grads.table.data(), table_.size(), lr, adam_t_);
    adam_update(mt_w1_.m, mt_w1_.v, w1_.data(), grads.w1.data(), w1_.size(), lr, adam_t_);
    adam_update(mt_w2_.m, mt_w2_.v, w2_.data(), grads.w2.data(), w2_.size(), lr, adam_t_);
    adam_update(mt_w3_.m, mt_w3_.v, w3_.data(), grads.w3.data(), w3_.size(), lr, adam_t_);
    adam_update(mt_b1_.m, mt_b1_.v, b1_.data(), grads.b1.data(), b1_.size(), lr, adam_t_);
    adam_update(mt_b2_.m, mt_b2_.v, b2_.data(), grads.b2.data(), b2_.size(), lr, adam_t_);
    adam_update(mt_b3_.m, mt_b3_.v, b3_.data(), grads.b3.data(), b3_.size(), lr, adam_t_);
}

SurfelCloud ntc_apply(const TransformField& field, const SurfelCloud& cloud) {
    SurfelCloud out = cloud;
    const auto fwd = field.forward_batch(cloud.center);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Se3Delta d = TransformField::delta_from_raw(fwd.raw.row(i).transpose());
        out.center[i] = cloud.center[i] + d.translation;
        out.rotation[i] = quat_mul(d.rotation, cloud.rotation[i]);
    }
    ++out.revision;
    return out;
}

CoarseFitReport fit_coarse(TransformField& field, const SurfelCloud& cloud_prev, const std::vector<ImageD>& images,
                           const std::vector<ImageD>& masks, const std::vector<CameraModel>& cams,
                           const TrainSchedule& schedule, const Vec3& background, std::uint64_t seed,
                           const RenderConfig& rc) {
    if (images.size() != cams.size() || masks.size() != cams.size())
        throw LengthMismatch("fit_coarse: views/images/masks disagree");
    if (cloud_prev.empty()) throw EmptyCloud("fit_coarse: empty previous cloud");

    CoarseFitReport report;
    Rng rng(seed);
    std::vector<int> view_order;
    const LossWeights weights = schedule.coarse_weights();

    // Right-multiplication matrix of q_prev, mapping delta-quaternion
    // gradients: (dq ⊗ q) = M_r(q) dq.
    auto right_mul = [](const Vec4& b) {
        Eigen::Matrix4d m;
        m << b[0], -b[1], -b[2], -b[3],
            b[1], b[0], b[3], -b[2],
            b[2], -b[3], b[0], b[1],
            b[3], b[2], -b[1], b[0];
        return m;
    };

    for (int iter = 0; iter < schedule.coarse_iters; ++iter) {
        if (view_order.empty()) {
            view_order.resize(cams.size());
            for (std::size_t v = 0; v < cams.size(); ++v) view_order[v] = static_cast<int>(v);
            rng.shuffle(view_order);
        }
        const int view = view_order.back();
        view_order.pop_back();

        const auto fwd = field.forward_batch(cloud_prev.center);
        SurfelCloud moved = cloud_prev;
        std::vector<Se3Delta> deltas(cloud_prev.size());
        for (std::size_t i = 0; i < cloud_prev.size(); ++i) {
            deltas[i] = TransformField::delta_from_raw(fwd.raw.row(i).transpose());
            moved.center[i] = cloud_prev.center[i] + deltas[i].translation;
            moved.rotation[i] = quat_mul(deltas[i].rotation, cloud_prev.rotation[i]);
        }
        ++moved.revision;

        const RenderMaps maps = render(moved, cams[view], background, rc);
        LossTerms terms;
        terms.photometric = photometric_loss(maps.color, images[view]);
        terms.mask = mask_loss(maps.opacity, masks[view]);
        const double loss = total_loss(terms, weights, /*coarse_stage=*/true);
        if (!std::isfinite(loss))
            throw DivergenceDetected("fit_coarse: non-finite loss at iteration " + std::to_string(iter));
        report.loss_history.push_back(loss);
        if (iter == 0) report.initial_loss = loss;
        report.final_loss = loss;

        MapGrads d_maps = MapGrads::zeros(cams[view].height, cams[view].width);
        photometric_loss_backward(maps.color, images[view], 1.0, d_maps.d_color);
        mask_loss_backward(maps.opacity, masks[view], weights.mask, d_maps.d_opacity);
        const CloudGrads cg = render_backward(moved, cams[view], background, maps, d_maps, rc);

        // Chain into the field outputs.
        Eigen::MatrixXd g_raw = Eigen::MatrixXd::Zero(static_cast<int>(cloud_prev.size()), 7);
        for (std::size_t i = 0; i < cloud_prev.size(); ++i) {
            g_raw(static_cast<int>(i), 0) = cg.center[i].x();
            g_raw(static_cast<int>(i), 1) = cg.center[i].y();
            g_raw(static_cast<int>(i), 2) = cg.center[i].z();
            const Vec4 g_dq = right_mul(cloud_prev.rotation[i]).transpose() * cg.rotation[i];
            // delta = normalize(raw + e_w)
            const Vec4 pre(fwd.raw(i, 3) + 1.0, fwd.raw(i, 4), fwd.raw(i, 5), fwd.raw(i, 6));
            const Vec4 g_pre = normalize_backward(pre, g_dq);
            for (int k = 0; k < 4; ++k) g_raw(static_cast<int>(i), 3 + k) = g_pre[k];
        }

        auto grads = field.zero_gradients();
        field.backward_batch(cloud_prev.center, fwd, g_raw, grads);
        field.adam_step(grads, schedule.ntc_lr);
    }
    return report;
}

}  // namespace dynsurf
