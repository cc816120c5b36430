use std::collections::HashMap;
use std::sync::Arc;

use super::RenderError;

/// Glyph backend used by the renderer.
///
/// Implementations must be deterministic and must never fail on unsupported
/// codepoints: those render as a replacement glyph.
pub trait GlyphRasterizer: Send + Sync {
    /// Horizontal pixels consumed by `run`.
    fn advance(&self, run: &str) -> usize;

    /// Draws `run` left-aligned into a `height_px × width_px` grid of
    /// intensities (1.0 background, 0.0 ink), row-major.
    fn rasterize(&self, run: &str, width_px: usize, height_px: usize) -> Vec<f32>;
}

/// Built-in fixed-advance bitmap font: 8×16 cells for half-width scripts
/// (ASCII, Cyrillic, Devanagari) and 16×16 cells for CJK ideographs and
/// punctuation. Glyph shapes are derived from the codepoint, so every covered
/// character has a distinct, stable bitmap. `font_px` rescales the 16-pixel
/// design height with nearest-neighbour sampling.
#[derive(Clone, Debug)]
pub struct BitmapFont {
    font_px: usize,
}

pub const BITMAP_FONT_ID: &str = "bitmap-8x16";

const CELL_H: usize = 16;

impl BitmapFont {
    pub fn new(font_px: usize) -> Self {
        Self { font_px: font_px.max(1) }
    }

    fn cell_width(c: char) -> usize {
        if is_wide(c) {
            16
        } else {
            8
        }
    }

    fn scaled_width(&self, c: char) -> usize {
        (Self::cell_width(c) * self.font_px).div_ceil(CELL_H)
    }

    /// Design-resolution bitmap, `true` = ink.
    pub fn glyph(c: char) -> Vec<bool> {
        let w = Self::cell_width(c);
        let mut cell = vec![false; w * CELL_H];
        if c.is_whitespace() {
            return cell;
        }
        if !is_covered(c) {
            // Replacement glyph: hollow box.
            for y in 2..14 {
                for x in 1..w - 1 {
                    if y == 2 || y == 13 || x == 1 || x == w - 2 {
                        cell[y * w + x] = true;
                    }
                }
            }
            return cell;
        }
        let mut state = c as u64 ^ 0x9E37_79B9_7F4A_7C15;
        let mut bits = splitmix64(&mut state);
        let mut left = 64;
        for y in 2..14 {
            for x in 1..w - 1 {
                if left == 0 {
                    bits = splitmix64(&mut state);
                    left = 64;
                }
                cell[y * w + x] = bits & 1 == 1;
                bits >>= 1;
                left -= 1;
            }
        }
        cell
    }
}

impl GlyphRasterizer for BitmapFont {
    fn advance(&self, run: &str) -> usize {
        run.chars().map(|c| self.scaled_width(c)).sum()
    }

    fn rasterize(&self, run: &str, width_px: usize, height_px: usize) -> Vec<f32> {
        let mut grid = vec![1.0f32; width_px * height_px];
        let top = height_px.saturating_sub(self.font_px) / 2;
        let mut pen = 0usize;
        for c in run.chars() {
            let cw = Self::cell_width(c);
            let sw = self.scaled_width(c);
            let glyph = Self::glyph(c);
            for sy in 0..self.font_px {
                let y = top + sy;
                if y >= height_px {
                    break;
                }
                let gy = sy * CELL_H / self.font_px;
                for sx in 0..sw {
                    let x = pen + sx;
                    if x >= width_px {
                        break;
                    }
                    let gx = sx * cw / sw;
                    if glyph[gy * cw + gx] {
                        grid[y * width_px + x] = 0.0;
                    }
                }
            }
            pen += sw;
        }
        grid
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn is_wide(c: char) -> bool {
    matches!(c as u32, 0x3000..=0x303F | 0x4E00..=0x9FFF | 0xFF01..=0xFF60)
}

/// Codepoints with a designed glyph in the built-in font.
pub fn is_covered(c: char) -> bool {
    matches!(c as u32,
        0x21..=0x7E
        | 0x0400..=0x04FF
        | 0x0900..=0x097F
        | 0x3000..=0x303F
        | 0x4E00..=0x9FFF
        | 0xFF01..=0xFF60)
}

type Factory = Box<dyn Fn(usize) -> Arc<dyn GlyphRasterizer> + Send + Sync>;

/// Maps rasterizer identifiers to constructors taking the glyph height.
pub struct RasterizerRegistry {
    factories: HashMap<String, Factory>,
}

impl Default for RasterizerRegistry {
    fn default() -> Self {
        let mut r = Self {
            factories: HashMap::new(),
        };
        r.register(BITMAP_FONT_ID, |px| Arc::new(BitmapFont::new(px)));
        r
    }
}

impl RasterizerRegistry {
    pub fn register(
        &mut self,
        id: &str,
        factory: impl Fn(usize) -> Arc<dyn GlyphRasterizer> + Send + Sync + 'static,
    ) {
        self.factories.insert(id.to_string(), Box::new(factory));
    }

    pub fn create(&self, id: &str, font_px: usize) -> Result<Arc<dyn GlyphRasterizer>, RenderError> {
        self.factories
            .get(id)
            .map(|f| f(font_px))
            .ok_or_else(|| RenderError::UnknownRasterizer(id.to_string()))
    }
}
