//! Grayscale image buffers and PNG decoding/encoding.

use std::io::Cursor;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("failed to decode {what}: {reason}")]
    DecodeFailure { what: String, reason: String },
    #[error("{what} has {channels} channels; only single-channel grayscale is supported")]
    UnsupportedChannelCount { what: String, channels: usize },
    #[error("invalid image buffer: {0}")]
    Invalid(String),
    #[error("failed to encode image: {0}")]
    Encode(String),
}

/// Row-major grayscale intensities normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid(format!("zero dimension {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(ImageError::Invalid(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(ImageError::Invalid(format!(
                "intensity {} at index {i} outside [0, 1]",
                pixels[i]
            )));
        }
        Ok(Self { width, height, pixels })
    }

    /// Clamps every value into `[0, 1]` (NaN becomes 0) before building the buffer.
    pub fn from_clamped(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        let pixels = pixels
            .into_iter()
            .map(|p| if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) })
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Multiplies every intensity by `factor`, which must lie in `[0, 1]`.
    pub fn scaled(&self, factor: f64) -> Result<Self, ImageError> {
        if !(0.0..=1.0).contains(&factor) {
            return Err(ImageError::Invalid(format!("scale factor {factor} outside [0, 1]")));
        }
        Self::new(
            self.width,
            self.height,
            self.pixels.iter().map(|p| p * factor).collect(),
        )
    }

    /// Rounds every intensity to the nearest 16-bit level, matching a
    /// `to_png16` / `decode_png` round trip.
    pub fn quantized16(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|p| (p * 65535.0).round() / 65535.0).collect(),
        }
    }

    /// Lossless for 8- and 16-bit sources: the value is quantized to 16 bits.
    pub fn to_png16(&self) -> Result<Vec<u8>, ImageError> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Sixteen);
            enc.set_compression(png::Compression::Balanced);
            let mut writer = enc.write_header().map_err(|e| ImageError::Encode(e.to_string()))?;
            let data: Vec<u8> = self
                .pixels
                .iter()
                .flat_map(|&p| ((p * 65535.0).round() as u16).to_be_bytes())
                .collect();
            writer
                .write_image_data(&data)
                .map_err(|e| ImageError::Encode(e.to_string()))?;
        }
        Ok(out)
    }
}

/// Decodes an 8- or 16-bit single-channel PNG, dividing by 255 or 65535.
pub fn decode_png(bytes: &[u8], what: &str) -> Result<ImageBuffer, ImageError> {
    let fail = |reason: String| ImageError::DecodeFailure {
        what: what.to_string(),
        reason,
    };
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| fail(e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    let channels = color.samples();
    if channels != 1 || color == png::ColorType::Indexed {
        return Err(ImageError::UnsupportedChannelCount {
            what: what.to_string(),
            channels,
        });
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| fail("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| fail(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let pixels: Vec<f64> = match depth {
        png::BitDepth::Eight => data
            .chunks(info.line_size)
            .flat_map(|row| row[..w].iter().map(|&v| v as f64 / 255.0))
            .collect(),
        png::BitDepth::Sixteen => data
            .chunks(info.line_size)
            .flat_map(|row| {
                row[..2 * w]
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
            })
            .collect(),
        other => return Err(fail(format!("unsupported bit depth {other:?}"))),
    };
    ImageBuffer::new(w, h, pixels).map_err(|e| fail(e.to_string()))
}

pub fn load_image(path: &Path) -> Result<ImageBuffer, ImageError> {
    let what = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| ImageError::DecodeFailure {
        what: what.clone(),
        reason: e.to_string(),
    })?;
    decode_png(&bytes, &what)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode8(w: u32, h: u32, data: &[u8], color: png::ColorType) -> Vec<u8> {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, w, h);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(data).unwrap();
        out
    }

    #[test]
    fn eight_bit_normalization() {
        let png = encode8(2, 2, &[0, 51, 255, 0], png::ColorType::Grayscale);
        let img = decode_png(&png, "t").unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert_eq!(img.pixels()[0], 0.0);
        assert_eq!(img.pixels()[1], 51.0 / 255.0);
        assert!((img.pixels()[1] - 0.2).abs() < 1e-15);
        assert_eq!(img.pixels()[2], 1.0);
    }

    #[test]
    fn sixteen_bit_max_maps_to_one() {
        let img = ImageBuffer::filled(3, 2, 1.0).unwrap();
        let back = decode_png(&img.to_png16().unwrap(), "t").unwrap();
        assert!(back.pixels().iter().all(|&p| p == 1.0));
        assert_eq!((back.width(), back.height()), (3, 2));
    }

    #[test]
    fn rgb_rejected() {
        let png = encode8(1, 1, &[1, 2, 3], png::ColorType::Rgb);
        assert!(matches!(
            decode_png(&png, "rgb.png"),
            Err(ImageError::UnsupportedChannelCount { channels: 3, .. })
        ));
    }

    #[test]
    fn garbage_is_decode_failure() {
        assert!(matches!(
            decode_png(b"not a png", "x"),
            Err(ImageError::DecodeFailure { .. })
        ));
    }

    #[test]
    fn buffer_invariants() {
        assert!(ImageBuffer::new(0, 1, vec![]).is_err());
        assert!(ImageBuffer::new(1, 1, vec![1.5]).is_err());
        assert!(ImageBuffer::new(2, 1, vec![0.5]).is_err());
        let c = ImageBuffer::from_clamped(2, 1, vec![-0.1, 1.2]).unwrap();
        assert_eq!(c.pixels(), &[0.0, 1.0]);
    }
}
