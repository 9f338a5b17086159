//! 8-bit PNG encoding of color, normal and mask images.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// Row-major 8-bit RGB pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn from_byte(b: u8) -> f64 {
    b as f64 / 255.0
}

/// Inverse of the sRGB transfer used by the tone map.
pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

impl Rgb8 {
    pub fn from_colors(width: usize, height: usize, colors: &[[f64; 3]]) -> Self {
        assert_eq!(colors.len(), width * height);
        Self {
            width,
            height,
            data: colors.iter().flat_map(|c| c.map(to_byte)).collect(),
        }
    }

    pub fn colors(&self) -> Vec<[f64; 3]> {
        self.data
            .chunks_exact(3)
            .map(|p| [from_byte(p[0]), from_byte(p[1]), from_byte(p[2])])
            .collect()
    }

    /// Normals in `[-1, 1]^3` mapped to bytes by `round(255 (n + 1) / 2)`.
    pub fn from_normals(width: usize, height: usize, normals: &[Vec3]) -> Self {
        assert_eq!(normals.len(), width * height);
        Self {
            width,
            height,
            data: normals
                .iter()
                .flat_map(|n| n.to_array().map(|v| to_byte((v + 1.0) / 2.0)))
                .collect(),
        }
    }

    pub fn normals(&self) -> Vec<Vec3> {
        self.data
            .chunks_exact(3)
            .map(|p| Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64).map(|b| 2.0 * b / 255.0 - 1.0))
            .collect()
    }
}

pub fn write_rgb(path: &Path, img: &Rgb8) -> Result<()> {
    write_png(path, img.width, img.height, png::ColorType::Rgb, &img.data)
}

pub fn write_gray(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    write_png(path, width, height, png::ColorType::Grayscale, data)
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let fail = |e: png::EncodingError| Error::format(path, e.to_string());
    let mut writer = enc.write_header().map_err(fail)?;
    writer.write_image_data(data).map_err(fail)?;
    writer.finish().map_err(fail)
}

/// Decoded 8-bit image with 1 (gray), 2 (gray + alpha), 3 (RGB) or 4 (RGBA) channels.
struct Decoded {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

fn read_png(path: &Path) -> Result<Decoded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e.to_string()))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(Error::format(path, format!("unsupported color type {other:?}"))),
    };
    let (width, height) = (info.width as usize, info.height as usize);
    buf.truncate(info.buffer_size());
    Ok(Decoded {
        width,
        height,
        channels,
        data: buf,
    })
}

/// Reads an RGB image. Alpha, if present, is composited over `background`.
pub fn read_rgb(path: &Path, background: [f64; 3]) -> Result<Rgb8> {
    let d = read_png(path)?;
    let mut data = Vec::with_capacity(d.width * d.height * 3);
    for px in d.data.chunks_exact(d.channels) {
        let (rgb, alpha) = match d.channels {
            1 => ([px[0]; 3], 255),
            2 => ([px[0]; 3], px[1]),
            3 => ([px[0], px[1], px[2]], 255),
            _ => ([px[0], px[1], px[2]], px[3]),
        };
        if alpha == 255 {
            data.extend_from_slice(&rgb);
        } else {
            let a = from_byte(alpha);
            for c in 0..3 {
                data.push(to_byte(a * from_byte(rgb[c]) + (1.0 - a) * background[c]));
            }
        }
    }
    Ok(Rgb8 {
        width: d.width,
        height: d.height,
        data,
    })
}

/// Reads a single-channel image (the first channel of color images).
pub fn read_gray(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let d = read_png(path)?;
    let data = d.data.chunks_exact(d.channels).map(|p| p[0]).collect();
    Ok((d.width, d.height, data))
}
