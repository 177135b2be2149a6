#pragma once

// Minimal raster drawing for report figures: filled rectangles, markers and a
// 5×7 bitmap font (upper-case letters, digits and common punctuation).

#include <cstdint>
#include <string_view>

#include "casnet/image.hpp"

namespace casnet::fig {

struct Color {
  std::uint8_t r = 0, g = 0, b = 0;
};

inline constexpr Color kBlack{0, 0, 0};
inline constexpr Color kWhite{255, 255, 255};
inline constexpr Color kGrey{160, 160, 160};

void fill_rect(Rgb8& img, int x0, int y0, int x1, int y1, Color c);
void draw_rect(Rgb8& img, int x0, int y0, int x1, int y1, Color c);
void draw_line(Rgb8& img, int x0, int y0, int x1, int y1, Color c);
void draw_marker(Rgb8& img, int cx, int cy, int radius, Color c);

// Text at (x, y) = top-left corner; `scale` multiplies the 5×7 cell.
// Lower-case input is drawn upper-case; unknown characters draw as blanks.
void draw_text(Rgb8& img, int x, int y, std::string_view text, Color c, int scale = 1);
int text_width(std::string_view text, int scale = 1);
inline constexpr int kGlyphHeight = 7;

}  // namespace casnet::fig
