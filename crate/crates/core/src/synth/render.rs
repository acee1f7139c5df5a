//! Rasterization of one gallery sample: background, placed words or a
//! phrase unit, and text-like distractor patterns for text-free images.

use super::{GalleryConfig, WordAnn};
use crate::font::{self, InkBox};
use crate::pixmap::{Pixmap, Rgb};
use rand::Rng;

pub enum RenderPlan {
    /// No text; may carry a stripe/grid pattern instead.
    TextFree,
    Words(Vec<String>),
    /// Rendered left-to-right on one line as a unit.
    Phrase(String),
}

const PLACEMENT_RETRIES: usize = 40;
/// Margin kept between word layout boxes, in pixels.
const SPACING: u32 = 2;
/// Gap between phrase words, in unscaled columns.
const PHRASE_GAP: u32 = font::ADVANCE;

pub fn word_fits(word: &str, scale: u32, width: u32, height: u32) -> bool {
    let (w, h) = font::word_extent(word, scale);
    w <= width && h <= height
}

pub fn phrase_fits(phrase: &str, scale: u32, width: u32, height: u32) -> bool {
    let (w, h) = phrase_extent(phrase, scale);
    w <= width && h <= height
}

fn phrase_extent(phrase: &str, scale: u32) -> (u32, u32) {
    let words: Vec<&str> = phrase.split_whitespace().collect();
    let glyphs: u32 = words.iter().map(|w| w.chars().count() as u32).sum();
    let cols = glyphs * font::ADVANCE - 1 + (words.len() as u32 - 1) * PHRASE_GAP;
    (cols * scale, font::GLYPH_H * scale)
}

fn dark(rng: &mut impl Rng) -> Rgb {
    [rng.gen_range(0..=90), rng.gen_range(0..=90), rng.gen_range(0..=90)]
}

fn light(rng: &mut impl Rng) -> Rgb {
    [
        rng.gen_range(165..=255),
        rng.gen_range(165..=255),
        rng.gen_range(165..=255),
    ]
}

fn paint_background(cfg: &GalleryConfig, rng: &mut impl Rng) -> Pixmap {
    match rng.gen_range(0..3u8) {
        // Flat fill.
        0 => Pixmap::new(cfg.width, cfg.height, dark(rng)),
        // Per-pixel noise around a base color.
        1 => {
            let base = dark(rng);
            let mut img = Pixmap::new(cfg.width, cfg.height, base);
            for y in 0..cfg.height {
                for x in 0..cfg.width {
                    let jitter: [u8; 3] = std::array::from_fn(|i| {
                        (base[i] as i16 + rng.gen_range(-20..=20)).clamp(0, 120) as u8
                    });
                    img.set(x, y, jitter);
                }
            }
            img
        }
        // Linear gradient between two colors, horizontal or vertical.
        _ => {
            let (a, b) = (dark(rng), dark(rng));
            let horizontal = rng.gen_bool(0.5);
            let mut img = Pixmap::new(cfg.width, cfg.height, a);
            for y in 0..cfg.height {
                for x in 0..cfg.width {
                    let t = if horizontal {
                        x as f64 / (cfg.width - 1).max(1) as f64
                    } else {
                        y as f64 / (cfg.height - 1).max(1) as f64
                    };
                    let c: [u8; 3] = std::array::from_fn(|i| {
                        (a[i] as f64 + t * (b[i] as f64 - a[i] as f64)).round() as u8
                    });
                    img.set(x, y, c);
                }
            }
            img
        }
    }
}

/// Stripe or grid pattern echoing text-like false-positive structure.
fn paint_distractor_pattern(img: &mut Pixmap, rng: &mut impl Rng) {
    let color = light(rng);
    let stripes = rng.gen_bool(0.5);
    if stripes {
        let period = rng.gen_range(6..=12u32);
        let thickness = rng.gen_range(1..=2u32);
        let y0 = rng.gen_range(0..period);
        let mut y = y0;
        while y < img.height() {
            img.fill_rect(0, y, img.width(), y + thickness, color);
            y += period;
        }
    } else {
        let cell = rng.gen_range(5..=9u32);
        let size = rng.gen_range(2..=3u32);
        let mut y = rng.gen_range(0..cell);
        while y + size < img.height() {
            let mut x = rng.gen_range(0..cell);
            while x + size < img.width() {
                img.fill_rect(x, y, x + size, y + size, color);
                x += cell;
            }
            y += cell;
        }
    }
}

struct Placer {
    taken: Vec<InkBox>,
}

impl Placer {
    fn try_place(
        &mut self,
        img_w: u32,
        img_h: u32,
        extent: (u32, u32),
        rng: &mut impl Rng,
    ) -> Option<(u32, u32)> {
        let (w, h) = extent;
        if w > img_w || h > img_h {
            return None;
        }
        for _ in 0..PLACEMENT_RETRIES {
            let x = rng.gen_range(0..=img_w - w);
            let y = rng.gen_range(0..=img_h - h);
            let padded = InkBox {
                x0: x.saturating_sub(SPACING),
                y0: y.saturating_sub(SPACING),
                x1: (x + w + SPACING).min(img_w),
                y1: (y + h + SPACING).min(img_h),
            };
            if !self.taken.iter().any(|b| b.intersects(&padded)) {
                self.taken.push(InkBox {
                    x0: x,
                    y0: y,
                    x1: x + w,
                    y1: y + h,
                });
                return Some((x, y));
            }
        }
        None
    }
}

/// Largest scale in `[scale_min, preferred]` at which `extent_at(scale)`
/// fits the canvas.
fn fit_scale(
    preferred: u32,
    scale_min: u32,
    fits: impl Fn(u32) -> bool,
) -> Option<u32> {
    (scale_min..=preferred).rev().find(|&s| fits(s))
}

/// Render one sample. Returns the image, the annotations for words that
/// were actually placed, and the phrase strings rendered as units.
pub fn render_sample(
    cfg: &GalleryConfig,
    plan: &RenderPlan,
    rng: &mut impl Rng,
) -> (Pixmap, Vec<WordAnn>, Vec<String>) {
    let mut img = paint_background(cfg, rng);
    let mut words = Vec::new();
    let mut phrases = Vec::new();
    let mut placer = Placer { taken: Vec::new() };

    match plan {
        RenderPlan::TextFree => {
            if rng.gen_bool(0.5) {
                paint_distractor_pattern(&mut img, rng);
            }
        }
        RenderPlan::Words(list) => {
            for word in list {
                let preferred = rng.gen_range(cfg.scale_min..=cfg.scale_max);
                let Some(scale) = fit_scale(preferred, cfg.scale_min, |s| {
                    word_fits(word, s, cfg.width, cfg.height)
                }) else {
                    continue;
                };
                let extent = font::word_extent(word, scale);
                let color = light(rng);
                if let Some((x, y)) = placer.try_place(cfg.width, cfg.height, extent, rng) {
                    let ink = font::draw_word(&mut img, word, x, y, scale, color);
                    words.push(WordAnn {
                        text: word.clone(),
                        x0: ink.x0,
                        y0: ink.y0,
                        x1: ink.x1,
                        y1: ink.y1,
                    });
                }
            }
        }
        RenderPlan::Phrase(phrase) => {
            let preferred = rng.gen_range(cfg.scale_min..=cfg.scale_max);
            let Some(scale) = fit_scale(preferred, cfg.scale_min, |s| {
                phrase_fits(phrase, s, cfg.width, cfg.height)
            }) else {
                return (img, words, phrases);
            };
            let extent = phrase_extent(phrase, scale);
            let color = light(rng);
            if let Some((x, y)) = placer.try_place(cfg.width, cfg.height, extent, rng) {
                let mut cursor = x;
                for word in phrase.split_whitespace() {
                    let ink = font::draw_word(&mut img, word, cursor, y, scale, color);
                    words.push(WordAnn {
                        text: word.to_string(),
                        x0: ink.x0,
                        y0: ink.y0,
                        x1: ink.x1,
                        y1: ink.y1,
                    });
                    let advance = word.chars().count() as u32 * font::ADVANCE - 1 + PHRASE_GAP;
                    cursor += advance * scale;
                }
                phrases.push(phrase.clone());
            }
        }
    }
    (img, words, phrases)
}
