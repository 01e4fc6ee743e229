//! Reading 8/16-bit PNG and TIFF images and writing 16-bit PNG.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Luma, Rgb};

use crate::error::{Error, Result};
use crate::raster::{GrayRaster, RgbRaster};

fn open(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    Ok(reader.decode()?)
}

/// Loads a grayscale scan; color images are converted to luma.
pub fn read_gray(path: &Path) -> Result<GrayRaster> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => GrayRaster::from_u8(h, w, buf.as_raw()),
        DynamicImage::ImageLuma16(buf) => GrayRaster::from_u16(h, w, buf.as_raw()),
        other => GrayRaster::from_u16(h, w, other.to_luma16().as_raw()),
    }
}

pub fn read_rgb(path: &Path) -> Result<RgbRaster> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageRgb8(buf) => buf.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect(),
        other => other
            .to_rgb16()
            .as_raw()
            .iter()
            .map(|&v| f64::from(v) / 65535.0)
            .collect(),
    };
    RgbRaster::new(h, w, data)
}

pub fn write_gray16(path: &Path, img: &GrayRaster) -> Result<()> {
    let (h, w) = img.dims();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, img.to_u16()).expect("buffer matches dims");
    buf.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// Writes clipped values as a 16-bit RGB PNG.
pub fn write_rgb16(path: &Path, img: &RgbRaster) -> Result<()> {
    let (h, w) = img.dims();
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, img.to_u16()).expect("buffer matches dims");
    buf.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let img = GrayRaster::from_fn(9, 11, |h, x| ((h * 11 + x) as f32) / 98.0).unwrap();
        write_gray16(&path, &img).unwrap();
        let back = read_gray(&path).unwrap();
        assert_eq!(back.to_u16(), img.to_u16());
    }

    #[test]
    fn gray8_and_tiff_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let png = dir.path().join("g8.png");
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(10, 8, |x, y| Luma([(x * 20 + y) as u8]));
        buf.save(&png).unwrap();
        let g = read_gray(&png).unwrap();
        assert_eq!(g.dims(), (8, 10));
        assert!((g.get(3, 4) - 83.0 / 255.0).abs() < 1e-7);

        let tif = dir.path().join("g16.tif");
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(10, 8, |x, _| Luma([x as u16 * 6000]));
        buf.save(&tif).unwrap();
        let g = read_gray(&tif).unwrap();
        assert!((g.get(0, 5) - 30000.0 / 65535.0).abs() < 1e-7);
    }

    #[test]
    fn rgb16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let img = RgbRaster::from_fn(4, 5, |h, x| [h as f64 / 4.0, x as f64 / 5.0, 0.5]).unwrap();
        write_rgb16(&path, &img).unwrap();
        let back = read_rgb(&path).unwrap();
        assert_eq!(back.to_u16(), img.to_u16());
    }

    #[test]
    fn truncated_png_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let img = GrayRaster::from_fn(64, 64, |h, x| ((h ^ x) % 7) as f32 / 6.0).unwrap();
        write_gray16(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(read_gray(&path).is_err());
    }
}
