//! Single-band raster I/O: grayscale PNG (8/16-bit) and single-sample TIFF
//! (integer or float), which covers GeoTIFF band files.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::ColorType;

use super::IngestError;

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "raster data length");
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    /// Bicubic resize; a no-op when the size already matches.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let data = super::resample::resize_bicubic(&self.data, self.width, self.height, width, height);
        Self::new(width, height, data)
    }
}

fn raster_err(path: &Path, reason: impl std::fmt::Display) -> IngestError {
    IngestError::Raster {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

pub fn read_raster(path: &Path) -> Result<Raster, IngestError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "tif" | "tiff" => read_tiff(path),
        "png" => read_png(path),
        other => Err(raster_err(path, format!("unsupported raster extension `{other}`"))),
    }
}

fn read_tiff(path: &Path) -> Result<Raster, IngestError> {
    let file = File::open(path).map_err(|e| raster_err(path, e))?;
    let mut dec = Decoder::new(std::io::BufReader::new(file)).map_err(|e| raster_err(path, e))?;
    let (w, h) = dec.dimensions().map_err(|e| raster_err(path, e))?;
    match dec.colortype().map_err(|e| raster_err(path, e))? {
        ColorType::Gray(_) => {}
        other => return Err(raster_err(path, format!("expected a single band, found {other:?}"))),
    }
    let data: Vec<f32> = match dec.read_image().map_err(|e| raster_err(path, e))? {
        DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::I8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::F32(v) => v,
        DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        _ => return Err(raster_err(path, "unsupported sample format")),
    };
    let (w, h) = (w as usize, h as usize);
    if data.len() != w * h {
        return Err(raster_err(path, "sample count does not match dimensions"));
    }
    Ok(Raster::new(w, h, data))
}

fn read_png(path: &Path) -> Result<Raster, IngestError> {
    let img = image::open(path).map_err(|e| raster_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        image::DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(f32::from).collect(),
        image::DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(f32::from).collect(),
        other => {
            return Err(raster_err(
                path,
                format!("expected grayscale PNG, found {:?}", other.color()),
            ))
        }
    };
    Ok(Raster::new(w, h, data))
}

/// Writes a 32-bit float single-band TIFF.
pub fn write_tiff_f32(path: &Path, raster: &Raster) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|e| raster_err(path, e))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| raster_err(path, e))?;
    enc.write_image::<colortype::Gray32Float>(raster.width as u32, raster.height as u32, &raster.data)
        .map_err(|e| raster_err(path, e))?;
    Ok(())
}

/// Writes a 16-bit grayscale PNG; values are rounded and clamped to `u16`.
pub fn write_png_u16(path: &Path, raster: &Raster) -> Result<(), IngestError> {
    let raw: Vec<u16> = raster
        .data
        .iter()
        .map(|&v| v.round().clamp(0.0, u16::MAX as f32) as u16)
        .collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(raster.width as u32, raster.height as u32, raw)
        .ok_or_else(|| raster_err(path, "buffer size"))?;
    buf.save(path).map_err(|e| raster_err(path, e))
}
