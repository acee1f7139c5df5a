//! Embedded 5x7 bitmap font for the alphanumeric rendering vocabulary.
//! Each glyph is 7 row bytes; bit 4 is the leftmost of the 5 columns.

use crate::pixmap::{Pixmap, Rgb};

pub const GLYPH_W: u32 = 5;
pub const GLYPH_H: u32 = 7;
/// Horizontal advance between glyph origins, in unscaled columns.
pub const ADVANCE: u32 = GLYPH_W + 1;

#[rustfmt::skip]
const GLYPHS: [(char, [u8; 7]); 36] = [
    ('a', [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11]),
    ('b', [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E]),
    ('c', [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E]),
    ('d', [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E]),
    ('e', [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F]),
    ('f', [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10]),
    ('g', [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F]),
    ('h', [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11]),
    ('i', [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E]),
    ('j', [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C]),
    ('k', [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11]),
    ('l', [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F]),
    ('m', [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11]),
    ('n', [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11]),
    ('o', [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E]),
    ('p', [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10]),
    ('q', [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D]),
    ('r', [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11]),
    ('s', [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E]),
    ('t', [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04]),
    ('u', [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E]),
    ('v', [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04]),
    ('w', [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A]),
    ('x', [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11]),
    ('y', [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04]),
    ('z', [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F]),
    ('0', [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E]),
    ('1', [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E]),
    ('2', [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F]),
    ('3', [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E]),
    ('4', [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02]),
    ('5', [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E]),
    ('6', [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E]),
    ('7', [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08]),
    ('8', [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E]),
    ('9', [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C]),
];

pub fn glyph(ch: char) -> Option<&'static [u8; 7]> {
    let ch = ch.to_ascii_lowercase();
    GLYPHS.iter().find(|(c, _)| *c == ch).map(|(_, rows)| rows)
}

pub fn supported(ch: char) -> bool {
    glyph(ch).is_some()
}

/// Half-open pixel box `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InkBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl InkBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64 && x < self.x1 as f64 && y >= self.y0 as f64 && y < self.y1 as f64
    }

    pub fn intersects(&self, other: &InkBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

/// Layout footprint of a word at a scale, before ink tightening.
pub fn word_extent(word: &str, scale: u32) -> (u32, u32) {
    let n = word.chars().count() as u32;
    assert!(n > 0, "empty word has no extent");
    ((n * ADVANCE - 1) * scale, GLYPH_H * scale)
}

/// Draw `word` with its layout origin at (x, y). Every character must be in
/// the font. Returns the pixel-tight box around the painted ink.
pub fn draw_word(img: &mut Pixmap, word: &str, x: u32, y: u32, scale: u32, color: Rgb) -> InkBox {
    assert!(scale >= 1);
    let mut ink: Option<InkBox> = None;
    for (i, ch) in word.chars().enumerate() {
        let rows = glyph(ch).unwrap_or_else(|| panic!("unrenderable character {ch:?}"));
        let gx = x + i as u32 * ADVANCE * scale;
        for (ry, row) in rows.iter().enumerate() {
            for col in 0..GLYPH_W {
                if row & (1 << (GLYPH_W - 1 - col)) == 0 {
                    continue;
                }
                let px = gx + col * scale;
                let py = y + ry as u32 * scale;
                img.fill_rect(px, py, px + scale, py + scale, color);
                let cell = InkBox {
                    x0: px,
                    y0: py,
                    x1: px + scale,
                    y1: py + scale,
                };
                ink = Some(match ink {
                    None => cell,
                    Some(b) => InkBox {
                        x0: b.x0.min(cell.x0),
                        y0: b.y0.min(cell.y0),
                        x1: b.x1.max(cell.x1),
                        y1: b.y1.max(cell.y1),
                    },
                });
            }
        }
    }
    ink.expect("word painted no ink")
}
