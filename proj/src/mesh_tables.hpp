#pragma once

// Standard marching-cubes case tables (Lorensen & Cline numbering, as
// popularized by P. Bourke's polygonise reference).

namespace dynsurf::mc {

extern const int kEdgeTable[256];
extern const int kTriTable[256][16];

// Cube corner offsets (dx, dy, dz) and edge endpoint pairs.
inline constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                      {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
inline constexpr int kEdgeEnds[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                         {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

}  // namespace dynsurf::mc
