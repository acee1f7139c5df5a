//! Minimal RGB raster with binary PPM (P6) persistence. PPM needs no
//! compression or external decoders, keeps gallery files diffable with
//! standard tools, and round-trips bytes exactly.

use crate::error::{Error, Result};
use std::io::{BufRead, Write};
use std::path::Path;

pub type Rgb = [u8; 3];

#[derive(Clone, PartialEq, Eq)]
pub struct Pixmap {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for Pixmap {
    // Pixel dumps are useless in assertion output; show dimensions only.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Pixmap({}x{})", self.width, self.height)
    }
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "ppm image",
        detail: detail.into(),
    }
}

impl Pixmap {
    pub fn new(width: u32, height: u32, fill: Rgb) -> Pixmap {
        assert!(width > 0 && height > 0, "empty pixmap");
        let mut data = Vec::with_capacity((width * height * 3) as usize);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        Pixmap {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, color: Rgb) {
        debug_assert!(x < self.width && y < self.height);
        let i = ((y * self.width + x) * 3) as usize;
        self.data[i..i + 3].copy_from_slice(&color);
    }

    pub fn fill_rect(&mut self, x0: u32, y0: u32, x1: u32, y1: u32, color: Rgb) {
        for y in y0..y1.min(self.height) {
            for x in x0..x1.min(self.width) {
                self.set(x, y, color);
            }
        }
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn write_ppm(&self, w: &mut impl Write) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)?;
        Ok(())
    }

    pub fn read_ppm(r: &mut impl BufRead) -> Result<Pixmap> {
        let mut magic = [0u8; 2];
        r.read_exact(&mut magic)?;
        if &magic != b"P6" {
            return Err(bad("expected P6 magic"));
        }
        let width = read_ppm_int(r)?;
        let height = read_ppm_int(r)?;
        let maxval = read_ppm_int(r)?;
        if maxval != 255 {
            return Err(bad(format!("unsupported maxval {maxval}")));
        }
        if width == 0 || height == 0 || width > 1 << 16 || height > 1 << 16 {
            return Err(bad(format!("implausible size {width}x{height}")));
        }
        let mut data = vec![0u8; (width * height * 3) as usize];
        r.read_exact(&mut data)?;
        Ok(Pixmap {
            width,
            height,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_ppm(&mut f)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Pixmap> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Pixmap::read_ppm(&mut f)
    }
}

/// One whitespace-delimited decimal token, skipping `#` comment lines.
fn read_ppm_int(r: &mut impl BufRead) -> Result<u32> {
    let mut value: Option<u32> = None;
    loop {
        let mut byte = [0u8; 1];
        if r.read(&mut byte)? == 0 {
            return value.ok_or_else(|| bad("unexpected end of header"));
        }
        match byte[0] {
            b'#' => {
                let mut skip = String::new();
                r.read_line(&mut skip)?;
            }
            b'0'..=b'9' => {
                let d = (byte[0] - b'0') as u32;
                value = Some(match value {
                    Some(v) => v
                        .checked_mul(10)
                        .and_then(|v| v.checked_add(d))
                        .ok_or_else(|| bad("header number overflow"))?,
                    None => d,
                });
            }
            b' ' | b'\t' | b'\r' | b'\n' => {
                if let Some(v) = value {
                    return Ok(v);
                }
            }
            other => return Err(bad(format!("unexpected header byte {other:#04x}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_pixels() {
        let mut img = Pixmap::new(4, 3, [10, 20, 30]);
        img.set(2, 1, [255, 0, 128]);
        let mut buf = Vec::new();
        img.write_ppm(&mut buf).unwrap();
        let back = Pixmap::read_ppm(&mut buf.as_slice()).unwrap();
        assert_eq!(img, back);
        assert_eq!(back.get(2, 1), [255, 0, 128]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let data = b"P6\n# made by hand\n2 1\n# another\n255\n\x01\x02\x03\x04\x05\x06";
        let img = Pixmap::read_ppm(&mut data.as_slice()).unwrap();
        assert_eq!((img.width(), img.height()), (2, 1));
        assert_eq!(img.get(1, 0), [4, 5, 6]);
    }

    #[test]
    fn truncated_pixel_data_rejected() {
        let data = b"P6\n2 2\n255\n\x01\x02\x03";
        assert!(Pixmap::read_ppm(&mut data.as_slice()).is_err());
    }

    #[test]
    fn fill_rect_clips_to_bounds() {
        let mut img = Pixmap::new(3, 3, [0, 0, 0]);
        img.fill_rect(2, 2, 10, 10, [9, 9, 9]);
        assert_eq!(img.get(2, 2), [9, 9, 9]);
        assert_eq!(img.get(1, 1), [0, 0, 0]);
    }
}
