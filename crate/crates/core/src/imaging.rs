//! Raster types and the image codecs the services accept.
//!
//! Two raster shapes are used: [`GrayImage`] is the 8-bit luminance plane
//! the texture engine consumes, and [`Raster`] is the channel-interleaved
//! buffer delivered to purchasers (and watermarked). PGM (P5, maxval 255) is
//! parsed natively; PNG goes through the `image` crate.

use std::io::Cursor;

use image::imageops::FilterType;
use image::{DynamicImage, ImageBuffer, ImageFormat as CodecFormat};
use thiserror::Error;

/// Side length every indexed or queried image is resampled to.
pub const CANONICAL_SIDE: usize = 128;

/// Longest side of a thumbnail.
pub const THUMBNAIL_MAX_SIDE: u32 = 96;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImageError {
    #[error("invalid dimensions {width}x{height} for {len} pixels")]
    InvalidDimensions {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("unrecognised image format")]
    UnknownFormat,
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error("PNG decode failed: {0}")]
    Png(String),
    #[error("image encode failed: {0}")]
    Encode(String),
}

/// Row-major 8-bit luminance image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || width.checked_mul(height) != Some(pixels.len()) {
            return Err(ImageError::InvalidDimensions {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// All-black image. Panics if either side is zero.
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0; width * height]).expect("non-zero dimensions")
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "image sides must be non-zero");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Quarter turn clockwise: pixel (x, y) moves to (height-1-y, x).
    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.height, self.width);
        Self::from_fn(w, h, |x, y| self.get(y, self.height - 1 - x))
    }
}

/// Container format of an encoded image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Pgm,
    Png,
}

impl ImageFormat {
    /// Sniffs the format from leading magic bytes.
    pub fn detect(bytes: &[u8]) -> Option<Self> {
        if bytes.starts_with(b"P5") {
            Some(Self::Pgm)
        } else if bytes.starts_with(&[0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a]) {
            Some(Self::Png)
        } else {
            None
        }
    }

    pub fn from_extension(path: &std::path::Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pgm" => Some(Self::Pgm),
            "png" => Some(Self::Png),
            _ => None,
        }
    }

    pub fn mime(self) -> &'static str {
        match self {
            Self::Pgm => "image/x-portable-graymap",
            Self::Png => "image/png",
        }
    }
}

/// Channel-interleaved 8-bit raster (1 = gray, 2 = gray+alpha, 3 = RGB, 4 = RGBA).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: u8,
    pub samples: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: u8, samples: Vec<u8>) -> Result<Self, ImageError> {
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels as usize));
        if width == 0 || height == 0 || !(1..=4).contains(&channels) || expected != Some(samples.len()) {
            return Err(ImageError::InvalidDimensions {
                width,
                height,
                len: samples.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
        })
    }

    /// Luminance plane. Colour is reduced with Rec. 601 weights; alpha is dropped.
    pub fn to_gray(&self) -> GrayImage {
        let c = self.channels as usize;
        let pixels = self
            .samples
            .chunks_exact(c)
            .map(|px| match c {
                1 | 2 => px[0],
                _ => {
                    let y = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
                    y.round().clamp(0.0, 255.0) as u8
                }
            })
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    fn to_dynamic(&self) -> DynamicImage {
        let (w, h) = (self.width as u32, self.height as u32);
        let buf = self.samples.clone();
        match self.channels {
            1 => DynamicImage::ImageLuma8(ImageBuffer::from_raw(w, h, buf).expect("sized")),
            2 => DynamicImage::ImageLumaA8(ImageBuffer::from_raw(w, h, buf).expect("sized")),
            3 => DynamicImage::ImageRgb8(ImageBuffer::from_raw(w, h, buf).expect("sized")),
            _ => DynamicImage::ImageRgba8(ImageBuffer::from_raw(w, h, buf).expect("sized")),
        }
    }

    fn from_dynamic(img: DynamicImage) -> Self {
        let (width, height) = (img.width() as usize, img.height() as usize);
        let (channels, samples) = match img {
            DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
            DynamicImage::ImageLumaA8(b) => (2, b.into_raw()),
            DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
            DynamicImage::ImageRgba8(b) => (4, b.into_raw()),
            other if other.color().has_alpha() && other.color().has_color() => (4, other.into_rgba8().into_raw()),
            other if other.color().has_color() => (3, other.into_rgb8().into_raw()),
            other if other.color().has_alpha() => (2, other.into_luma_alpha8().into_raw()),
            other => (1, other.into_luma8().into_raw()),
        };
        Self {
            width,
            height,
            channels,
            samples,
        }
    }
}

impl From<GrayImage> for Raster {
    fn from(img: GrayImage) -> Self {
        Self {
            width: img.width,
            height: img.height,
            channels: 1,
            samples: img.pixels,
        }
    }
}

/// Parses a binary PGM (P5) with maxval 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let err = |m: &str| ImageError::Pgm(m.to_string());
    if !bytes.starts_with(b"P5") {
        return Err(err("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(err("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(err("expected a decimal header field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).map_err(|_| err("header not ASCII"))?;
        *field = text.parse().map_err(|_| err("header field out of range"))?;
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(err("missing separator after maxval")),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(ImageError::Pgm(format!("unsupported maxval {maxval}")));
    }
    let len = width
        .checked_mul(height)
        .ok_or_else(|| err("dimensions overflow"))?;
    let data = bytes
        .get(pos..pos + len)
        .ok_or_else(|| err("truncated raster"))?;
    GrayImage::new(width, height, data.to_vec())
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Decodes PGM or PNG bytes into a raster, detecting the container.
pub fn decode(bytes: &[u8]) -> Result<(Raster, ImageFormat), ImageError> {
    match ImageFormat::detect(bytes) {
        Some(ImageFormat::Pgm) => Ok((decode_pgm(bytes)?.into(), ImageFormat::Pgm)),
        Some(ImageFormat::Png) => {
            let img = image::load_from_memory_with_format(bytes, CodecFormat::Png)
                .map_err(|e| ImageError::Png(e.to_string()))?;
            Ok((Raster::from_dynamic(img), ImageFormat::Png))
        }
        None => Err(ImageError::UnknownFormat),
    }
}

/// Encodes a raster losslessly. PGM output requires a single channel.
pub fn encode(raster: &Raster, format: ImageFormat) -> Result<Vec<u8>, ImageError> {
    match format {
        ImageFormat::Pgm if raster.channels == 1 => {
            let gray = GrayImage::new(raster.width, raster.height, raster.samples.clone())?;
            Ok(encode_pgm(&gray))
        }
        ImageFormat::Pgm => Err(ImageError::Encode("PGM output needs one channel".into())),
        ImageFormat::Png => encode_png(&raster.to_dynamic()),
    }
}

fn encode_png(img: &DynamicImage) -> Result<Vec<u8>, ImageError> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, CodecFormat::Png)
        .map_err(|e| ImageError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

/// Luminance conversion plus bilinear resampling to the canonical side.
pub fn preprocess(raster: &Raster) -> GrayImage {
    let gray = raster.to_gray();
    if gray.width == CANONICAL_SIDE && gray.height == CANONICAL_SIDE {
        return gray;
    }
    let buf: image::GrayImage =
        ImageBuffer::from_raw(gray.width as u32, gray.height as u32, gray.pixels).expect("sized");
    let side = CANONICAL_SIDE as u32;
    let resized = image::imageops::resize(&buf, side, side, FilterType::Triangle);
    GrayImage {
        width: CANONICAL_SIDE,
        height: CANONICAL_SIDE,
        pixels: resized.into_raw(),
    }
}

/// Decode then [`preprocess`].
pub fn load_for_indexing(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    decode(bytes).map(|(r, _)| preprocess(&r))
}

/// Dimensions that fit inside the thumbnail bound, preserving aspect, never upscaling.
pub fn thumbnail_dimensions(width: u32, height: u32) -> (u32, u32) {
    let longest = width.max(height);
    if longest <= THUMBNAIL_MAX_SIDE {
        return (width, height);
    }
    let scale = THUMBNAIL_MAX_SIDE as f64 / longest as f64;
    let fit = |side: u32| ((side as f64 * scale).round() as u32).clamp(1, THUMBNAIL_MAX_SIDE);
    (fit(width), fit(height))
}

/// PNG thumbnail of a raster.
pub fn thumbnail_png(raster: &Raster) -> Result<Vec<u8>, ImageError> {
    let img = raster.to_dynamic();
    let (w, h) = thumbnail_dimensions(img.width(), img.height());
    let thumb = if (w, h) == (img.width(), img.height()) {
        img
    } else {
        img.resize_exact(w, h, FilterType::Triangle)
    };
    encode_png(&thumb)
}

/// Reads the width and height out of PNG bytes.
pub fn png_dimensions(bytes: &[u8]) -> Result<(u32, u32), ImageError> {
    let img = image::load_from_memory_with_format(bytes, CodecFormat::Png)
        .map_err(|e| ImageError::Png(e.to_string()))?;
    Ok((img.width(), img.height()))
}
