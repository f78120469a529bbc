//! Grayscale image files: 8/16-bit PNG, PGM (P2/P5) and a plain-text count grid.
//!
//! A count grid is a text file with a `width height` header followed by
//! `width·height` whitespace-separated nonnegative numbers in row-major order.
//! Lines starting with `#` are comments.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Limits, Luma};

use crate::error::{Error, Result};
use crate::image_pipeline::ImageGrid;

/// Largest side accepted from any decoder.
pub const MAX_SIDE: usize = 16_384;
const MAX_PIXELS: usize = 1 << 26;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn limits() -> Limits {
    let mut l = Limits::default();
    l.max_image_width = Some(MAX_SIDE as u32);
    l.max_image_height = Some(MAX_SIDE as u32);
    l.max_alloc = Some(512 * 1024 * 1024);
    l
}

/// Decodes PNG, PGM or a text count grid from memory, choosing by content.
pub fn decode_image(bytes: &[u8]) -> Result<ImageGrid> {
    if bytes.starts_with(b"\x89PNG") {
        return decode_with(bytes, ImageFormat::Png);
    }
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        return decode_with(bytes, ImageFormat::Pnm);
    }
    let text = std::str::from_utf8(bytes).map_err(|_| format_err("unrecognized image format"))?;
    parse_count_grid(text)
}

fn decode_with(bytes: &[u8], format: ImageFormat) -> Result<ImageGrid> {
    let mut reader = ImageReader::with_format(Cursor::new(bytes), format);
    reader.limits(limits());
    let img = reader.decode().map_err(|e| format_err(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<f64> = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        other => {
            return Err(format_err(format!(
                "only single-channel grayscale images are supported (got {:?})",
                other.color()
            )))
        }
    };
    ImageGrid::new(w, h, pixels)
}

pub fn parse_count_grid(text: &str) -> Result<ImageGrid> {
    let mut tokens = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(str::split_whitespace);
    let mut dim = |name: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| format_err(format!("count grid is missing its {name}")))?
            .parse::<usize>()
            .map_err(|_| format_err(format!("count grid {name} is not an integer")))
    };
    let width = dim("width")?;
    let height = dim("height")?;
    if width == 0 || height == 0 || width > MAX_SIDE || height > MAX_SIDE || width * height > MAX_PIXELS {
        return Err(format_err(format!("unsupported grid size {width}x{height}")));
    }
    let mut pixels = Vec::with_capacity(width * height);
    for tok in tokens {
        if pixels.len() == width * height {
            return Err(format_err("count grid has more values than its header declares"));
        }
        let v: f64 = tok
            .parse()
            .map_err(|_| format_err(format!("count grid value {tok:?} is not a number")))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(format_err(format!("count grid value {tok:?} is negative or not finite")));
        }
        pixels.push(v);
    }
    if pixels.len() != width * height {
        return Err(format_err(format!(
            "count grid declares {} values but holds {}",
            width * height,
            pixels.len()
        )));
    }
    ImageGrid::new(width, height, pixels)
}

pub fn format_count_grid(img: &ImageGrid) -> String {
    let mut out = format!("{} {}\n", img.width(), img.height());
    for row in img.pixels().chunks(img.width().max(1)) {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let bytes = std::fs::read(path)?;
    decode_image(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Round-half-up and clamp to `[0, 255]`.
pub fn to_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn side_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| format_err("image too large to encode"))
}

fn encode(img: DynamicImage, format: ImageFormat) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, format).map_err(|e| format_err(e.to_string()))?;
    Ok(out.into_inner())
}

fn luma8(img: &ImageGrid) -> Result<DynamicImage> {
    let data: Vec<u8> = img.pixels().iter().map(|&v| to_u8(v)).collect();
    let buf = ImageBuffer::<Luma<u8>, _>::from_raw(side_u32(img.width())?, side_u32(img.height())?, data)
        .ok_or_else(|| format_err("pixel buffer size mismatch"))?;
    Ok(DynamicImage::ImageLuma8(buf))
}

/// 8-bit grayscale PNG of values already in `[0, 255]` units.
pub fn encode_png8(img: &ImageGrid) -> Result<Vec<u8>> {
    encode(luma8(img)?, ImageFormat::Png)
}

/// 8-bit binary PGM (P5).
pub fn encode_pgm8(img: &ImageGrid) -> Result<Vec<u8>> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&v| to_u8(v)));
    Ok(out)
}

/// 16-bit grayscale PNG of integer counts; fails on non-integers or values
/// above 65535.
pub fn encode_png16(img: &ImageGrid) -> Result<Vec<u8>> {
    let data = img
        .pixels()
        .iter()
        .map(|&v| {
            if v.fract() != 0.0 || v > f64::from(u16::MAX) {
                Err(format_err(format!("value {v} does not fit a 16-bit count")))
            } else {
                Ok(v as u16)
            }
        })
        .collect::<Result<Vec<u16>>>()?;
    let buf = ImageBuffer::<Luma<u16>, _>::from_raw(side_u32(img.width())?, side_u32(img.height())?, data)
        .ok_or_else(|| format_err("pixel buffer size mismatch"))?;
    encode(DynamicImage::ImageLuma16(buf), ImageFormat::Png)
}

fn has_ext(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Writes an 8-bit image: PGM for `.pgm`, PNG otherwise.
pub fn write_image8(img: &ImageGrid, path: &Path) -> Result<()> {
    let bytes = if has_ext(path, "pgm") {
        encode_pgm8(img)?
    } else {
        encode_png8(img)?
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Writes counts losslessly: a text grid for `.txt`, a 16-bit PNG otherwise.
pub fn write_counts(img: &ImageGrid, path: &Path) -> Result<()> {
    if has_ext(path, "txt") {
        std::fs::write(path, format_count_grid(img))?;
    } else {
        std::fs::write(path, encode_png16(img)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ImageGrid {
        ImageGrid::from_fn(5, 3, |r, c| ((r * 5 + c) * 17 % 256) as f64).unwrap()
    }

    #[test]
    fn png8_round_trip() {
        let img = sample();
        assert_eq!(decode_image(&encode_png8(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn pgm_round_trip_binary_and_plain() {
        let img = sample();
        let bytes = encode_pgm8(&img).unwrap();
        assert!(bytes.starts_with(b"P5"));
        assert_eq!(decode_image(&bytes).unwrap(), img);
        let plain = b"P2\n# comment\n3 2\n255\n0 10 20\n30 40 255\n";
        let got = decode_image(plain).unwrap();
        assert_eq!(got.pixels(), &[0.0, 10.0, 20.0, 30.0, 40.0, 255.0]);
    }

    #[test]
    fn png16_keeps_large_counts() {
        let img = ImageGrid::new(3, 1, vec![0.0, 300.0, 65535.0]).unwrap();
        assert_eq!(decode_image(&encode_png16(&img).unwrap()).unwrap(), img);
        assert!(encode_png16(&ImageGrid::new(1, 1, vec![70000.0]).unwrap()).is_err());
        assert!(encode_png16(&ImageGrid::new(1, 1, vec![1.5]).unwrap()).is_err());
    }

    #[test]
    fn count_grid_round_trip_and_errors() {
        let img = ImageGrid::new(2, 2, vec![0.0, 1e6, 3.0, 70000.0]).unwrap();
        assert_eq!(parse_count_grid(&format_count_grid(&img)).unwrap(), img);
        assert!(parse_count_grid("# c\n2 1\n4 5\n").is_ok());
        for bad in ["", "2", "2 2\n1 2 3", "1 1\n-1", "1 1\nnan", "1 1\n1 2", "0 3\n", "a b\n1"] {
            assert!(parse_count_grid(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn rounding_half_up() {
        assert_eq!(to_u8(2.5), 3);
        assert_eq!(to_u8(2.49), 2);
        assert_eq!(to_u8(-3.0), 0);
        assert_eq!(to_u8(300.0), 255);
    }

    #[test]
    fn color_images_rejected() {
        let rgb = DynamicImage::ImageRgb8(ImageBuffer::from_raw(1, 1, vec![1u8, 2, 3]).unwrap());
        let bytes = encode(rgb, ImageFormat::Png).unwrap();
        assert!(matches!(decode_image(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(decode_image(b"\x89PNG\r\n\x1a\nnot really").is_err());
        assert!(decode_image(b"P5\n99999999 9999999\n255\n").is_err());
        assert!(decode_image(&[0xff, 0xfe, 0x00]).is_err());
    }
}
