//! Grayscale image files (binary PGM and PNG) and synthetic test images.

use std::fs;
use std::io::Cursor;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Square power-of-two grayscale image with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub n: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(n: usize, pixels: Vec<f64>) -> Result<Self> {
        if !n.is_power_of_two() || pixels.len() != n * n {
            return Err(Error::BadShape(format!(
                "{} pixels for side {n}",
                pixels.len()
            )));
        }
        Ok(Self { n, pixels })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

fn quantize(v: f64, depth: BitDepth) -> u16 {
    (v.clamp(0.0, 1.0) * depth.max()).round() as u16
}

fn square_side(width: usize, height: usize) -> Result<usize> {
    if width != height || !width.is_power_of_two() {
        return Err(Error::UnsupportedFormat(format!(
            "{width}x{height} image; a power-of-two square is required"
        )));
    }
    Ok(width)
}

/// Reads a P5 PGM or a grayscale PNG, chosen by content.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let bytes = fs::read(path.as_ref())?;
    if bytes.starts_with(b"P5") {
        decode_pgm(&bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(&bytes)
    } else {
        Err(Error::UnsupportedFormat(format!(
            "{}: neither binary PGM nor PNG",
            path.as_ref().display()
        )))
    }
}

/// Writes 8-bit PGM or PNG according to the extension.
pub fn save_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    save_image_with_depth(path, image, BitDepth::Eight)
}

pub fn save_image_with_depth(path: impl AsRef<Path>, image: &Image, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let bytes = match ext.as_deref() {
        Some("pgm") => encode_pgm(image, depth),
        Some("png") => encode_png(image, depth)?,
        _ => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: expected a .pgm or .png extension",
                path.display()
            )))
        }
    };
    fs::write(path, bytes)?;
    Ok(())
}

pub fn encode_pgm(image: &Image, depth: BitDepth) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", image.n, image.n, depth.max() as u32).into_bytes();
    for &v in &image.pixels {
        let q = quantize(v, depth);
        match depth {
            BitDepth::Eight => out.push(q as u8),
            BitDepth::Sixteen => out.extend_from_slice(&q.to_be_bytes()),
        }
    }
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let corrupt = |why: &str| Error::CorruptFile(format!("PGM: {why}"));
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(corrupt("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt("bad header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(corrupt("missing separator after maxval"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(corrupt("maxval out of range"));
    }
    let n = square_side(width, height)?;
    let wide = maxval > 255;
    let need = n * n * if wide { 2 } else { 1 };
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| corrupt("truncated raster"))?;
    let scale = maxval as f64;
    let pixels = if wide {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    } else {
        raster.iter().map(|&b| b as f64 / scale).collect()
    };
    Image::new(n, pixels)
}

pub fn encode_png(image: &Image, depth: BitDepth) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.n as u32, image.n as u32);
        enc.set_color(png::ColorType::Grayscale);
        let data: Vec<u8> = match depth {
            BitDepth::Eight => {
                enc.set_depth(png::BitDepth::Eight);
                image.pixels.iter().map(|&v| quantize(v, depth) as u8).collect()
            }
            BitDepth::Sixteen => {
                enc.set_depth(png::BitDepth::Sixteen);
                image
                    .pixels
                    .iter()
                    .flat_map(|&v| quantize(v, depth).to_be_bytes())
                    .collect()
            }
        };
        let mut w = enc
            .write_header()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        w.write_image_data(&data)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let corrupt = |e: png::DecodingError| Error::CorruptFile(format!("PNG: {e}"));
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(corrupt)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::CorruptFile("PNG: image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(corrupt)?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "PNG color type {other:?}; grayscale required"
            )))
        }
    };
    let n = square_side(info.width as usize, info.height as usize)?;
    let buf = &buf[..info.buffer_size()];
    let pixels = match info.bit_depth {
        png::BitDepth::Sixteen => buf
            .chunks_exact(2 * channels)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
            .collect(),
        _ => buf
            .chunks_exact(channels)
            .map(|c| c[0] as f64 / 255.0)
            .collect(),
    };
    Image::new(n, pixels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Checkerboard,
    GaussianBumps,
    TextLikeBars,
    Ramp,
}

impl SynthKind {
    pub const ALL: [SynthKind; 4] = [
        SynthKind::Checkerboard,
        SynthKind::GaussianBumps,
        SynthKind::TextLikeBars,
        SynthKind::Ramp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Checkerboard => "checkerboard",
            SynthKind::GaussianBumps => "gaussian_bumps",
            SynthKind::TextLikeBars => "text_like_bars",
            SynthKind::Ramp => "ramp",
        }
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown synthetic image `{s}`")))
    }
}

/// Deterministic test image of side `n` (a power of two, at least 8).
pub fn synth_image(kind: SynthKind, n: usize, seed: u64) -> Result<Image> {
    if !n.is_power_of_two() || n < 8 {
        return Err(Error::BadShape(format!("synthetic image side {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = vec![0.0; n * n];
    match kind {
        SynthKind::Checkerboard => {
            let block = n / 8;
            let shift = rng.random_range(0..block);
            for i in 0..n {
                for j in 0..n {
                    let parity = ((i + shift) / block + (j + shift) / block) % 2;
                    px[i * n + j] = parity as f64;
                }
            }
        }
        SynthKind::GaussianBumps => {
            let bumps: Vec<[f64; 4]> = (0..6)
                .map(|_| {
                    [
                        rng.random::<f64>(),
                        rng.random::<f64>(),
                        0.04 + 0.12 * rng.random::<f64>(),
                        0.3 + 0.7 * rng.random::<f64>(),
                    ]
                })
                .collect();
            for i in 0..n {
                for j in 0..n {
                    let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
                    let v: f64 = bumps
                        .iter()
                        .map(|&[cx, cy, w, a]| {
                            let dx = periodic(x - cx);
                            let dy = periodic(y - cy);
                            a * (-(dx * dx + dy * dy) / (2.0 * w * w)).exp()
                        })
                        .sum();
                    px[i * n + j] = v.min(1.0);
                }
            }
        }
        SynthKind::TextLikeBars => {
            px.fill(1.0);
            let line = (n / 8).max(2);
            let glyph = (line / 2).max(1);
            for row in (line / 2..n).step_by(line) {
                let mut col = 1;
                while col + glyph < n {
                    let w = rng.random_range(1..=glyph);
                    let h = rng.random_range(glyph / 2 + 1..=glyph);
                    for i in row.saturating_sub(h)..row {
                        for j in col..(col + w).min(n) {
                            px[i * n + j] = 0.0;
                        }
                    }
                    col += w + rng.random_range(1..=2);
                }
            }
        }
        SynthKind::Ramp => {
            for i in 0..n {
                for j in 0..n {
                    px[i * n + j] = j as f64 / (n - 1) as f64;
                }
            }
        }
    }
    Image::new(n, px)
}

fn periodic(t: f64) -> f64 {
    t - t.round()
}
