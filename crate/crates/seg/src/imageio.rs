//! PNG codecs for projections, label masks and service responses.

use std::io::Cursor;

use octa_core::stack::Image3;
use octa_core::{Grid, Mask, Plane};

use crate::error::{Error, Result};

/// A decoded image: one plane for grayscale input, three for color.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub width: usize,
    pub height: usize,
    pub planes: Vec<Plane>,
}

/// Decode any 8/16-bit PNG into planes in `[0, 1]`. Alpha is dropped and
/// palettes are expanded.
pub fn decode_png(bytes: &[u8]) -> Result<Decoded> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::Decode(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Decode(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let bytes = &buf[..info.buffer_size()];
    let stride = info.color_type.samples();
    let plane = |c: usize| {
        Grid::from_fn(w, h, |x, y| bytes[(y * w + x) * stride + c] as f32 / 255.0)
    };
    let planes = match info.color_type {
        png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => vec![plane(0)],
        png::ColorType::Rgb | png::ColorType::Rgba => vec![plane(0), plane(1), plane(2)],
        png::ColorType::Indexed => return Err(Error::Decode("unexpanded palette".into())),
    };
    Ok(Decoded {
        width: w,
        height: h,
        planes,
    })
}

/// Decode a label PNG: any nonzero value in the first channel is foreground.
pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    let decoded = decode_png(bytes)?;
    Ok(decoded.planes[0].map(|v| u8::from(v > 0.0)))
}

fn encode(width: usize, height: usize, depth: png::BitDepth, data: &[u8]) -> Result<Vec<u8>> {
    encode_as(width, height, png::ColorType::Grayscale, depth, data)
}

fn encode_as(width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Decode(e.to_string()))?;
    writer
        .write_image_data(data)
        .map_err(|e| Error::Decode(e.to_string()))?;
    writer.finish().map_err(|e| Error::Decode(e.to_string()))?;
    Ok(out)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit grayscale PNG of a plane clamped to `[0, 1]`.
pub fn encode_gray8(plane: &Plane) -> Result<Vec<u8>> {
    let data: Vec<u8> = plane.data().iter().map(|&v| to_u8(v)).collect();
    encode(plane.width(), plane.height(), png::BitDepth::Eight, &data)
}

/// 8-bit RGB PNG of a three-channel image.
pub fn encode_rgb8(image: &Image3) -> Result<Vec<u8>> {
    let [r, g, b] = &image.channels;
    let data: Vec<u8> = r
        .data()
        .iter()
        .zip(g.data())
        .zip(b.data())
        .flat_map(|((&r, &g), &b)| [to_u8(r), to_u8(g), to_u8(b)])
        .collect();
    encode_as(image.width(), image.height(), png::ColorType::Rgb, png::BitDepth::Eight, &data)
}

/// 8-bit mask PNG with foreground stored as 255.
pub fn encode_mask8(mask: &Mask) -> Result<Vec<u8>> {
    let data: Vec<u8> = mask.data().iter().map(|&v| if v > 0 { 255 } else { 0 }).collect();
    encode(mask.width(), mask.height(), png::BitDepth::Eight, &data)
}

/// 1-bit grayscale PNG, rows packed MSB first.
pub fn encode_mask1(mask: &Mask) -> Result<Vec<u8>> {
    let (w, h) = (mask.width(), mask.height());
    let row_bytes = w.div_ceil(8);
    let mut data = vec![0u8; row_bytes * h];
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) > 0 {
                data[y * row_bytes + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    encode(w, h, png::BitDepth::One, &data)
}
