use std::io::Cursor;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use restorekit_core::Raster;

#[derive(Debug, thiserror::Error)]
pub enum PngError {
    #[error("not a decodable PNG: {0}")]
    Decode(String),
    #[error("PNG encoding failed: {0}")]
    Encode(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Encodes with fixed settings so identical pixels always give identical
/// bytes, which the content-addressed stores rely on.
pub fn encode(r: &Raster) -> Result<Vec<u8>, PngError> {
    let mut out = Vec::with_capacity(r.data().len() / 2 + 64);
    PngEncoder::new_with_quality(&mut out, CompressionType::Default, FilterType::Adaptive)
        .write_image(r.data(), r.width(), r.height(), ExtendedColorType::Rgb8)
        .map_err(|e| PngError::Encode(e.to_string()))?;
    Ok(out)
}

/// Any PNG colour type and depth, converted to 8-bit RGB. Alpha is dropped.
pub fn decode(bytes: &[u8]) -> Result<Raster, PngError> {
    let img = image::load(Cursor::new(bytes), ImageFormat::Png).map_err(|e| PngError::Decode(e.to_string()))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Raster::new(w, h, rgb.into_raw()).map_err(|e| PngError::Decode(e.to_string()))
}

pub fn read(path: &Path) -> Result<Raster, PngError> {
    let bytes = std::fs::read(path).map_err(|source| PngError::Io { path: path.display().to_string(), source })?;
    decode(&bytes)
}

pub fn write(path: &Path, r: &Raster) -> Result<(), PngError> {
    let bytes = encode(r)?;
    std::fs::write(path, bytes).map_err(|source| PngError::Io { path: path.display().to_string(), source })
}
