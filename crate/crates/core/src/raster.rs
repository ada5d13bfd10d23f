//! RGB images in `[0, 1]` and their 8-bit file encodings.
//!
//! PNG goes through the `image` crate; binary PPM (P6) and PGM (P5) are
//! written by hand as a dependency-free fallback. The format is picked from
//! the file extension.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Rec. 601 luma per pixel.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|c| luma(c[0], c[1], c[2]))
            .collect()
    }

    /// Snaps every channel to the nearest multiple of 1/255 after clamping.
    pub fn quantize_8bit(&mut self) {
        for v in &mut self.data {
            *v = f64::from(to_u8(*v)) / 255.0;
        }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::Dimension(format!(
                "{} bytes for a {width}x{height} RGB image",
                bytes.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data: bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_rgb8(path, self.width, self.height, &self.to_rgb8())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if is_ppm(path) {
            let (w, h, bytes) = read_pnm(path, b"P6")?;
            return Self::from_rgb8(w, h, &bytes);
        }
        let img = image::open(path).map_err(|e| codec_error(path, e))?.to_rgb8();
        Self::from_rgb8(img.width() as usize, img.height() as usize, img.as_raw())
    }
}

#[inline]
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

#[inline]
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Mirror index without repeating the edge sample (`d c b | a b c d | c b a`).
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

fn is_ppm(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("ppm" | "pgm" | "pnm")
    )
}

fn codec_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

pub fn write_rgb8(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    if is_ppm(path) {
        let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
        out.extend_from_slice(bytes);
        return std::fs::write(path, out).map_err(|e| Error::io(path, e));
    }
    image::save_buffer(path, bytes, width as u32, height as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| codec_error(path, e))
}

pub fn write_gray8(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    if is_ppm(path) {
        let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
        out.extend_from_slice(bytes);
        return std::fs::write(path, out).map_err(|e| Error::io(path, e));
    }
    image::save_buffer(path, bytes, width as u32, height as u32, image::ExtendedColorType::L8)
        .map_err(|e| codec_error(path, e))
}

pub fn read_gray8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    if is_ppm(path) {
        return read_pnm(path, b"P5");
    }
    let img = image::open(path).map_err(|e| codec_error(path, e))?.to_luma8();
    Ok((img.width() as usize, img.height() as usize, img.into_raw()))
}

/// Writes a boolean mask as 8-bit grayscale, 255 where set.
pub fn save_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    let bytes: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_gray8(path, width, height, &bytes)
}

pub fn load_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let (w, h, bytes) = read_gray8(path)?;
    Ok((w, h, bytes.iter().map(|&b| b >= 128).collect()))
}

fn read_pnm(path: &Path, magic: &[u8; 2]) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |pos: usize, msg: &str| Error::Format {
        kind: "pnm",
        position: pos as u64,
        message: msg.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(fail(0, "bad magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fail(start, "expected header integer"))?;
    }
    if fields[2] != 255 {
        return Err(fail(pos, "only 8-bit maxval supported"));
    }
    pos += 1;
    let channels = if magic == b"P6" { 3 } else { 1 };
    let need = fields[0] * fields[1] * channels;
    if bytes.len() < pos + need {
        return Err(fail(bytes.len(), "truncated payload"));
    }
    Ok((fields[0], fields[1], bytes[pos..pos + need].to_vec()))
}
