#include "dynsurf/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "dynsurf/image_io.hpp"

namespace dynsurf {

std::vector<int> SequenceConfig::training_views() const {
    std::vector<int> out;
    for (int v = 0; v < views; ++v)
        if (std::find(heldout_views.begin(), heldout_views.end(), v) == heldout_views.end()) out.push_back(v);
    return out;
}

void SequenceConfig::validate() const {
    if (frames < 1) throw InvalidSpec("config: frames must be >= 1");
    if (views < 2) throw InvalidSpec("config: views must be >= 2");
    if (width <= 0 || height <= 0) throw InvalidSpec("config: resolution must be positive");
    if (training_views().size() < 2) throw InvalidSpec("config: need at least 2 training views");
    if ((scene_box_hi - scene_box_lo).minCoeff() <= 0) throw InvalidSpec("config: scene_box must be non-degenerate");
}

namespace {

std::vector<std::string> split_ws(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

}  // namespace

void apply_config_override(SequenceConfig& cfg, const std::string& key, const std::string& value) {
    const auto vals = split_ws(value);
    auto as_int = [&] { return std::stoi(value); };
    auto as_u64 = [&] { return static_cast<std::uint64_t>(std::stoull(value)); };
    if (key == "frames") cfg.frames = as_int();
    else if (key == "views") cfg.views = as_int();
    else if (key == "width") cfg.width = as_int();
    else if (key == "height") cfg.height = as_int();
    else if (key == "sh_degree") cfg.sh_degree = as_int();
    else if (key == "flow_provider") cfg.flow_provider = value;
    else if (key == "seed") cfg.seed = as_u64();
    else if (key == "static_iters") cfg.static_iters = as_int();
    else if (key == "init_points") cfg.init_points_file = value;
    else if (key == "keep_last_k") {
        cfg.keep_last_k_enabled = true;
        cfg.keep_last_k = as_int();
    } else if (key == "heldout_views") {
        cfg.heldout_views.clear();
        for (const auto& v : vals) cfg.heldout_views.push_back(std::stoi(v));
    } else if (key == "scene_box") {
        if (vals.size() != 6) throw InvalidSpec("config: scene_box needs 6 numbers");
        for (int k = 0; k < 3; ++k) cfg.scene_box_lo[k] = std::stod(vals[k]);
        for (int k = 0; k < 3; ++k) cfg.scene_box_hi[k] = std::stod(vals[k + 3]);
    } else {
        throw InvalidSpec("config: unknown key '" + key + "'");
    }
}

SequenceConfig load_sequence_config(const std::string& dataset_dir) {
    const std::string path = dataset_dir + "/sequence.cfg";
    std::ifstream in(path);
    if (!in) throw MissingFile("load_sequence_config: cannot open " + path);
    SequenceConfig cfg;
    cfg.dataset_dir = dataset_dir;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (!split_ws(line).empty())
                throw InvalidSpec("config: malformed line " + std::to_string(lineno) + " in " + path);
            continue;
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        apply_config_override(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

void write_sequence_config(const SequenceConfig& cfg, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("write_sequence_config: cannot open " + path);
    std::fprintf(f, "frames = %d\nviews = %d\nwidth = %d\nheight = %d\n", cfg.frames, cfg.views, cfg.width,
                 cfg.height);
    std::fprintf(f, "sh_degree = %d\nflow_provider = %s\nseed = %llu\n", cfg.sh_degree, cfg.flow_provider.c_str(),
                 static_cast<unsigned long long>(cfg.seed));
    std::fprintf(f, "scene_box = %.17g %.17g %.17g %.17g %.17g %.17g\n", cfg.scene_box_lo.x(), cfg.scene_box_lo.y(),
                 cfg.scene_box_lo.z(), cfg.scene_box_hi.x(), cfg.scene_box_hi.y(), cfg.scene_box_hi.z());
    if (!cfg.heldout_views.empty()) {
        std::fprintf(f, "heldout_views =");
        for (const int v : cfg.heldout_views) std::fprintf(f, " %d", v);
        std::fprintf(f, "\n");
    }
    if (!cfg.init_points_file.empty()) std::fprintf(f, "init_points = %s\n", cfg.init_points_file.c_str());
    if (std::fclose(f) != 0) throw IoError("write_sequence_config: write failure");
}

std::vector<CameraModel> load_cameras(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile("load_cameras: cannot open " + path);
    std::vector<CameraModel> cams;
    std::string line;
    while (std::getline(in, line)) {
        const auto toks = split_ws(line);
        if (toks.empty() || toks[0][0] == '#') continue;
        if (toks.size() != 19) throw CalibrationParse("load_cameras: expected 19 fields, got " +
                                                      std::to_string(toks.size()));
        CameraModel cam;
        int k = 1;  // toks[0] is the view id
        cam.width = std::stoi(toks[k++]);
        cam.height = std::stoi(toks[k++]);
        cam.fx = std::stod(toks[k++]);
        cam.fy = std::stod(toks[k++]);
        cam.cx = std::stod(toks[k++]);
        cam.cy = std::stod(toks[k++]);
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) cam.R(r, c) = std::stod(toks[k++]);
            cam.t[r] = std::stod(toks[k++]);
        }
        cam.validate();  // throws CalibrationParse on non-orthonormal rotations
        cams.push_back(cam);
    }
    if (cams.empty()) throw CalibrationParse("load_cameras: no camera records in " + path);
    return cams;
}

void write_cameras(const std::vector<CameraModel>& cams, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("write_cameras: cannot open " + path);
    for (std::size_t v = 0; v < cams.size(); ++v) {
        const CameraModel& c = cams[v];
        std::fprintf(f, "%zu %d %d %.17g %.17g %.17g %.17g", v, c.width, c.height, c.fx, c.fy, c.cx, c.cy);
        for (int r = 0; r < 3; ++r) {
            for (int cc = 0; cc < 3; ++cc) std::fprintf(f, " %.17g", c.R(r, cc));
            std::fprintf(f, " %.17g", c.t[r]);
        }
        std::fprintf(f, "\n");
    }
    if (std::fclose(f) != 0) throw IoError("write_cameras: write failure");
}

DatasetLoader::DatasetLoader(const SequenceConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    cameras_ = load_cameras(cfg_.dataset_dir + "/cameras.txt");
    if (static_cast<int>(cameras_.size()) != cfg_.views)
        throw CalibrationParse("DatasetLoader: camera count does not match config views");
    for (const auto& cam : cameras_)
        if (cam.width != cfg_.width || cam.height != cfg_.height)
            throw ResolutionMismatch("DatasetLoader: camera resolution differs from config");
}

std::string DatasetLoader::image_path(const std::string& dir, int frame, int view) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "/images/f%04d_v%02d.png", frame, view);
    return dir + buf;
}

std::string DatasetLoader::mask_path(const std::string& dir, int frame, int view) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "/masks/f%04d_v%02d.png", frame, view);
    return dir + buf;
}

FrameBundle DatasetLoader::load_frame(int t) const {
    if (t < 0 || t >= cfg_.frames) throw InvalidSpec("load_frame: frame index out of range");
    FrameBundle fb;
    fb.frame_index = t;
    for (int v = 0; v < cfg_.views; ++v) {
        const std::string ip = image_path(cfg_.dataset_dir, t, v);
        const std::string mp = mask_path(cfg_.dataset_dir, t, v);
        if (!file_exists(ip)) throw MissingFile("load_frame: missing " + ip);
        if (!file_exists(mp)) throw MissingFile("load_frame: missing " + mp);
        ImageD img = read_png_linear(ip);
        ImageD mask = read_png_mask(mp);
        if (img.height() != cfg_.height || img.width() != cfg_.width)
            throw ResolutionMismatch("load_frame: image resolution mismatch in " + ip);
        if (mask.height() != cfg_.height || mask.width() != cfg_.width)
            throw ResolutionMismatch("load_frame: mask resolution mismatch in " + mp);
        fb.images.push_back(std::move(img));
        fb.masks.push_back(std::move(mask));
    }
    return fb;
}

SeedPoints load_seed_points(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile("load_seed_points: cannot open " + path);
    SeedPoints pts;
    double x, y, z, r, g, b;
    while (in >> x >> y >> z >> r >> g >> b) {
        pts.positions.emplace_back(x, y, z);
        pts.colors.emplace_back(r, g, b);
    }
    return pts;
}

void write_seed_points(const SeedPoints& pts, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("write_seed_points: cannot open " + path);
    for (std::size_t i = 0; i < pts.positions.size(); ++i)
        std::fprintf(f, "%.17g %.17g %.17g %.17g %.17g %.17g\n", pts.positions[i].x(), pts.positions[i].y(),
                     pts.positions[i].z(), pts.colors[i].x(), pts.colors[i].y(), pts.colors[i].z());
    if (std::fclose(f) != 0) throw IoError("write_seed_points: write failure");
}

}  // namespace dynsurf
