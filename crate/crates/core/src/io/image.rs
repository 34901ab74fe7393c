use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `round((v + 1) · 127.5)` clamped to `0..=255`.
pub fn to_u8(v: f32) -> u8 {
    ((f64::from(v) + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn from_u8(p: u8) -> f32 {
    (f64::from(p) / 127.5 - 1.0) as f32
}

fn image_err(path: &Path, detail: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Png,
    Ppm,
    Pgm,
}

fn format_of(path: &Path) -> Result<Format> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(Format::Png),
        Some("ppm") => Ok(Format::Ppm),
        Some("pgm") => Ok(Format::Pgm),
        _ => Err(image_err(path, "unsupported extension (png, ppm, pgm)")),
    }
}

/// Interleaved 8-bit RGB from a `[1, 3, H, W]` or `[3, H, W]` tensor.
fn to_rgb8(img: &Tensor<f32>) -> Result<(usize, usize, Vec<u8>)> {
    let (h, w) = match *img.shape() {
        [1, 3, h, w] | [3, h, w] => (h, w),
        ref s => return Err(Error::geometry("write_image", format!("expected one RGB image, got {s:?}"))),
    };
    let d = img.data();
    let plane = h * w;
    let mut out = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            out.push(to_u8(d[c * plane + i]));
        }
    }
    Ok((h, w, out))
}

fn from_rgb8(h: usize, w: usize, rgb: &[u8]) -> Result<Tensor<f32>> {
    let plane = h * w;
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            data[c * plane + i] = from_u8(rgb[3 * i + c]);
        }
    }
    Tensor::new(&[1, 3, h, w], data)
}

/// Write one image. The format follows the extension; `.pgm` stores the
/// channel mean.
pub fn write_image(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let fmt = format_of(path)?;
    let (h, w, rgb) = to_rgb8(img)?;
    let mut out = BufWriter::new(File::create(path)?);
    match fmt {
        Format::Png => {
            let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(|e| image_err(path, e))?;
            writer.write_image_data(&rgb).map_err(|e| image_err(path, e))?;
            writer.finish().map_err(|e| image_err(path, e))?;
        }
        Format::Ppm => {
            write!(out, "P6\n{w} {h}\n255\n")?;
            out.write_all(&rgb)?;
        }
        Format::Pgm => {
            write!(out, "P5\n{w} {h}\n255\n")?;
            let grey: Vec<u8> = rgb
                .chunks(3)
                .map(|p| ((u32::from(p[0]) + u32::from(p[1]) + u32::from(p[2]) + 1) / 3) as u8)
                .collect();
            out.write_all(&grey)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read an image as a `[1, 3, H, W]` tensor in `[-1, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    match format_of(path)? {
        Format::Png => read_png(path),
        Format::Ppm | Format::Pgm => read_pnm(path),
    }
}

fn read_png(path: &Path) -> Result<Tensor<f32>> {
    let mut dec = png::Decoder::new(BufReader::new(File::open(path)?));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| image_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| image_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| image_err(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(image_err(path, "unexpanded palette")),
    };
    let mut rgb = Vec::with_capacity(3 * w * h);
    for y in 0..h {
        let row = &buf[y * info.line_size..][..w * channels];
        for px in row.chunks(channels) {
            if channels < 3 {
                rgb.extend_from_slice(&[px[0]; 3]);
            } else {
                rgb.extend_from_slice(&px[..3]);
            }
        }
    }
    from_rgb8(h, w, &rgb)
}

fn read_pnm(path: &Path) -> Result<Tensor<f32>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(image_err(path, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let num = |s: String| s.parse::<usize>().map_err(|_| image_err(path, format!("bad header field {s:?}")));
    let w = num(token()?)?;
    let h = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval != 255 {
        return Err(image_err(path, format!("unsupported maxval {maxval}")));
    }
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        _ => return Err(image_err(path, format!("unsupported magic {magic:?}"))),
    };
    let body = &bytes[pos + 1..];
    if body.len() < w * h * channels {
        return Err(image_err(path, "truncated pixel data"));
    }
    let body = &body[..w * h * channels];
    let rgb: Vec<u8> = if channels == 3 {
        body.to_vec()
    } else {
        body.iter().flat_map(|&g| [g; 3]).collect()
    };
    from_rgb8(h, w, &rgb)
}

/// Side-by-side panel of equally sized images, each `[1, 3, H, W]`.
pub fn hconcat(images: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = images.first().ok_or(Error::Empty { op: "hconcat" })?;
    let [_, c, h, w] = first.dims4();
    for img in images {
        if img.shape() != [1, c, h, w] {
            return Err(Error::shape("hconcat", first.shape(), img.shape()));
        }
    }
    let total_w = w * images.len();
    let mut data = vec![0.0f32; c * h * total_w];
    for (k, img) in images.iter().enumerate() {
        for ch in 0..c {
            for y in 0..h {
                let src = &img.data()[(ch * h + y) * w..][..w];
                data[(ch * h + y) * total_w + k * w..][..w].copy_from_slice(src);
            }
        }
    }
    Tensor::new(&[1, c, h, total_w], data)
}

/// Sample `i` of a batch as a `[1, C, H, W]` tensor.
pub fn batch_item(batch: &Tensor<f32>, i: usize) -> Result<Tensor<f32>> {
    let [n, c, h, w] = batch.dims4();
    if i >= n {
        return Err(Error::geometry("batch_item", format!("index {i} out of {n}")));
    }
    let per = c * h * w;
    Tensor::new(&[1, c, h, w], batch.data()[i * per..(i + 1) * per].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn representable() -> Tensor<f32> {
        let data: Vec<f32> = (0..3 * 5 * 4).map(|i| from_u8(((i * 37) % 256) as u8)).collect();
        Tensor::new(&[1, 3, 5, 4], data).unwrap()
    }

    #[test]
    fn pixel_mapping() {
        assert_eq!(to_u8(-1.0), 0);
        assert_eq!(to_u8(1.0), 255);
        assert_eq!(to_u8(0.0), 128);
        assert_eq!(to_u8(7.0), 255);
        for p in 0..=255u8 {
            assert_eq!(to_u8(from_u8(p)), p);
        }
    }

    #[test]
    fn png_and_ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = representable();
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            write_image(&p, &img).unwrap();
            assert_eq!(read_image(&p).unwrap(), img);
        }
    }

    #[test]
    fn pgm_is_grey() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        write_image(&p, &Tensor::full(&[1, 3, 2, 2], 0.0)).unwrap();
        let back = read_image(&p).unwrap();
        assert!(back.data().iter().all(|&v| v == from_u8(128)));
    }

    #[test]
    fn rejects_unknown_extension_and_shape() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_image(&dir.path().join("x.bmp"), &representable()).is_err());
        assert!(write_image(&dir.path().join("x.png"), &Tensor::zeros(&[2, 3, 4, 4])).is_err());
    }

    #[test]
    fn panel_layout() {
        let a = Tensor::full(&[1, 3, 2, 2], 0.5);
        let b = Tensor::full(&[1, 3, 2, 2], -0.5);
        let p = hconcat(&[&a, &b]).unwrap();
        assert_eq!(p.shape(), &[1, 3, 2, 4]);
        assert_eq!(&p.data()[..4], &[0.5, 0.5, -0.5, -0.5]);
    }
}
