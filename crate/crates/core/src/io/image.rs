//! PNG loading and saving for single-channel radiance images.

use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::scene::RadianceImage;

fn image_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Loads an 8- or 16-bit grayscale or RGB PNG, scaled to `[0, 1]` by the
/// bit-depth maximum. RGB is reduced by channel mean.
pub fn load_image(path: &Path) -> Result<RadianceImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if reader.format() != Some(ImageFormat::Png) {
        return Err(image_err(path, "unsupported format (expected PNG)"));
    }
    let img = reader.decode().map_err(|e| image_err(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match &img {
        DynamicImage::ImageLuma8(b) => b.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.as_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        DynamicImage::ImageRgb8(b) => b
            .as_raw()
            .chunks_exact(3)
            .map(|c| c.iter().map(|&v| v as f64).sum::<f64>() / 3.0 / 255.0)
            .collect(),
        DynamicImage::ImageRgb16(b) => b
            .as_raw()
            .chunks_exact(3)
            .map(|c| c.iter().map(|&v| v as f64).sum::<f64>() / 3.0 / 65535.0)
            .collect(),
        other => {
            return Err(image_err(
                path,
                format!("unsupported pixel layout {:?}", other.color()),
            ))
        }
    };
    RadianceImage::from_vec(w, h, data)
}

/// Quantizes to 8 bits with round-half-up after clamping to `[0, 1]`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Writes an 8-bit grayscale PNG.
pub fn save_image(image: &RadianceImage, path: &Path) -> Result<()> {
    if image.data.iter().any(|v| !v.is_finite()) {
        return Err(image_err(path, "refusing to save non-finite pixels"));
    }
    let bytes: Vec<u8> = image.data.iter().map(|&v| quantize(v)).collect();
    let buf = image::GrayImage::from_raw(image.width as u32, image.height as u32, bytes)
        .ok_or_else(|| image_err(path, "image buffer size mismatch"))?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| image_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
        assert_eq!(quantize(2.0), 255);
        assert_eq!(quantize(-1.0), 0);
    }
}
