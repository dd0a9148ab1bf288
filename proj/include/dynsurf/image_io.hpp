#pragma once

#include <string>

#include "dynsurf/flow.hpp"
#include "dynsurf/image.hpp"

namespace dynsurf {

// sRGB <-> linear (piecewise IEC 61966-2-1). Images live as linear RGB in
// memory; 8-bit sRGB exists only at file boundaries.
double srgb_to_linear(double s);
double linear_to_srgb(double l);

// 8-bit PNG. Color images decode to linear RGB in [0,1]; grayscale masks use
// read_png_mask (binarized at 0.5, no transfer function).
ImageD read_png_linear(const std::string& path);                 // H x W x 3
void write_png_srgb(const ImageD& linear_rgb, const std::string& path);
ImageD read_png_mask(const std::string& path);                   // H x W x 1 in {0,1}
void write_png_mask(const ImageD& mask, const std::string& path);

// Raw float map: magic "FMP1", uint32 width/height/channels, then
// float32 little-endian, row-major, channel-interleaved.
void write_fmap(const ImageD& img, const std::string& path);
ImageD read_fmap(const std::string& path);

// Flow file: magic "FLO1", uint32 width/height, width*height*2 float32 LE
// vectors (dx, dy), then ceil(w*h/8) validity bytes, row-major, LSB first.
void write_flow(const FlowField& flow, const std::string& path);
FlowField read_flow(const std::string& path);

std::string flow_path(const std::string& dataset_dir, int frame_t, int view, bool forward);

bool file_exists(const std::string& path);

}  // namespace dynsurf
