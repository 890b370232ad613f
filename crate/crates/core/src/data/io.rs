//! PNG storage: images as 8-bit RGB with [-1, 1] mapped linearly onto
//! [0, 255], labels as 8-bit grayscale class ids.

use std::path::Path;

use image::{ColorType, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::gradfilters::LabelMap;
use crate::tensor::{Shape, Tensor};

pub fn quantize(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub fn dequantize(p: u8) -> f32 {
    p as f32 / 127.5 - 1.0
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn encode_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    }
}

/// Save a (1, 3, H, W) image.
pub fn save_image(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.batch != 1 || s.channels != 3 {
        return Err(Error::shape("save_image", format!("expected (1, 3, H, W), got {s}")));
    }
    let mut buf = Vec::with_capacity(s.numel());
    for y in 0..s.height {
        for x in 0..s.width {
            for c in 0..3 {
                buf.push(quantize(image.at(0, c, y, x)));
            }
        }
    }
    let img = RgbImage::from_raw(s.width as u32, s.height as u32, buf).expect("buffer sized to image");
    img.save_with_format(path, ImageFormat::Png).map_err(encode_err(path))
}

/// Load an RGB (or RGBA / gray, converted) PNG as a (1, 3, H, W) image.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = decode(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        dequantize(img.get_pixel(x as u32, y as u32)[c])
    }))
}

/// Save a single-sample label map.
pub fn save_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    if labels.batch() != 1 {
        return Err(Error::shape(
            "save_labels",
            format!("expected one sample, got {}", labels.batch()),
        ));
    }
    if let Some(&v) = labels.values().iter().find(|&&v| v > 255) {
        return Err(Error::LabelOutOfRange {
            value: v,
            num_classes: 256,
        });
    }
    let buf = labels.values().iter().map(|&v| v as u8).collect();
    let img = GrayImage::from_raw(labels.width() as u32, labels.height() as u32, buf).expect("buffer sized to map");
    img.save_with_format(path, ImageFormat::Png).map_err(encode_err(path))
}

/// Load an 8-bit grayscale label PNG; every id must be `< num_classes`.
pub fn load_labels(path: &Path, num_classes: usize) -> Result<LabelMap> {
    let img = decode(path)?;
    if img.color() != ColorType::L8 {
        return Err(Error::Corpus(format!(
            "{}: label maps must be 8-bit grayscale PNGs, found {:?}",
            path.display(),
            img.color()
        )));
    }
    let img = img.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = img.into_raw().into_iter().map(u32::from).collect();
    LabelMap::new(1, h, w, num_classes, values).map_err(|e| match e {
        Error::LabelOutOfRange { value, num_classes } => Error::Corpus(format!(
            "{}: label value {value} out of range for {num_classes} classes",
            path.display()
        )),
        other => other,
    })
}
