#pragma once

// 2^3 design matrix and expanded model matrix, transcribed by hand.

namespace fixtures {

inline constexpr int kTable1[8][3] = {
    {-1, -1, -1}, {-1, -1, +1}, {-1, +1, -1}, {-1, +1, +1},
    {+1, -1, -1}, {+1, -1, +1}, {+1, +1, -1}, {+1, +1, +1},
};

inline constexpr const char* kTable2Labels[8] = {"mean", "A", "B", "C", "AB", "AC", "BC", "ABC"};

inline constexpr int kTable2[8][8] = {
    {+1, -1, -1, -1, +1, +1, +1, -1},
    {+1, -1, -1, +1, +1, -1, -1, +1},
    {+1, -1, +1, -1, -1, +1, -1, +1},
    {+1, -1, +1, +1, -1, -1, +1, -1},
    {+1, +1, -1, -1, -1, -1, +1, +1},
    {+1, +1, -1, +1, -1, +1, -1, -1},
    {+1, +1, +1, -1, +1, -1, -1, -1},
    {+1, +1, +1, +1, +1, +1, +1, +1},
};

}  // namespace fixtures
