use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, RgbImage};

use crate::error::{shape_err, Result};
use crate::tensor::{Shape, Tensor};

/// Reads an 8-bit image as (1, 3, H, W) in [0, 1].
pub fn read_rgb(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
    }))
}

pub fn write_rgb(path: &Path, t: &Tensor) -> Result<()> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return shape_err("write_rgb", format!("{s:?} is not a single RGB image"));
    }
    let img = RgbImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        image::Rgb([0, 1, 2].map(|c| to_u8(t.at(0, c, y as usize, x as usize))))
    });
    img.save(path)?;
    Ok(())
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn check_gray(op: &'static str, t: &Tensor) -> Result<Shape> {
    let s = t.shape();
    if s.n != 1 || s.c != 1 {
        return shape_err(op, format!("{s:?} is not a single-channel map"));
    }
    Ok(s)
}

/// Writes `value · scale` rounded to 16 bits, saturating.
pub fn write_gray16(path: &Path, t: &Tensor, scale: f64) -> Result<()> {
    let s = check_gray("write_gray16", t)?;
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(s.w as u32, s.h as u32, |x, y| {
        Luma([(t.at(0, 0, y as usize, x as usize) * scale).round().clamp(0.0, u16::MAX as f64) as u16])
    });
    img.save(path)?;
    Ok(())
}

/// Reads a 16-bit map and divides by `scale`.
pub fn read_gray16(path: &Path, scale: f64) -> Result<Tensor> {
    let img = image::open(path)?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| {
        img.get_pixel(x as u32, y as u32)[0] as f64 / scale
    }))
}

/// Writes a map in [0, 1] as an 8-bit grayscale image.
pub fn write_gray8(path: &Path, t: &Tensor) -> Result<()> {
    let s = check_gray("write_gray8", t)?;
    let img = GrayImage::from_fn(s.w as u32, s.h as u32, |x, y| Luma([to_u8(t.at(0, 0, y as usize, x as usize))]));
    img.save(path)?;
    Ok(())
}
