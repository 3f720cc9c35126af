//! Image-grid export of a synthetic set: one row per class, one column per
//! image, denormalized back to display range.

use super::DataError;
use crate::synthetic::SyntheticSet;
use std::path::Path;

/// Renders the set as a tiled grid and writes PNG or PPM depending on the
/// file extension. Pixels are denormalized and clamped to `[0, 255]`.
pub fn export_grid(set: &SyntheticSet, file: &Path) -> Result<(), DataError> {
    let c = set.channels();
    if c != 1 && c != 3 {
        return Err(DataError::Invalid(format!(
            "grid export supports 1 or 3 channels, set has {c}"
        )));
    }
    let (h, w) = (set.height(), set.width());
    let raw = set
        .norm
        .denormalize(set.images.data(), c, h, w);
    let cols = set.ipc;
    let rows = set.classes;
    let grid_h = rows * h;
    let grid_w = cols * w;
    let plane = h * w;
    let mut pixels = vec![0u8; grid_h * grid_w * c];
    for class in 0..rows {
        for col in 0..cols {
            let img = &raw[(class * cols + col) * c * plane..(class * cols + col + 1) * c * plane];
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let v = img[ch * plane + y * w + x].clamp(0.0, 255.0).round() as u8;
                        let gy = class * h + y;
                        let gx = col * w + x;
                        pixels[(gy * grid_w + gx) * c + ch] = v;
                    }
                }
            }
        }
    }
    match file.extension().and_then(|e| e.to_str()) {
        Some("png") => write_png(file, &pixels, grid_w, grid_h, c),
        Some("ppm") => write_ppm(file, &pixels, grid_w, grid_h, c),
        other => Err(DataError::Invalid(format!(
            "unsupported grid extension {:?}, use .png or .ppm",
            other.unwrap_or("")
        ))),
    }
}

fn write_png(file: &Path, pixels: &[u8], w: usize, h: usize, c: usize) -> Result<(), DataError> {
    let color = if c == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer(file, pixels, w as u32, h as u32, color).map_err(|e| DataError::Invalid(
        format!("{}: png encode failed: {e}", file.display()),
    ))
}

fn write_ppm(file: &Path, pixels: &[u8], w: usize, h: usize, c: usize) -> Result<(), DataError> {
    let mut out = Vec::with_capacity(32 + w * h * 3);
    out.extend(format!("P6\n{w} {h}\n255\n").as_bytes());
    if c == 3 {
        out.extend_from_slice(pixels);
    } else {
        for &v in pixels {
            out.extend([v, v, v]);
        }
    }
    std::fs::write(file, out).map_err(|e| super::io_err(file, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Normalization;
    use autodiff::{Shape, Tensor};

    fn set_2x2() -> SyntheticSet {
        let mut set = SyntheticSet::zeros(
            2,
            2,
            1,
            2,
            2,
            "mnist",
            Normalization { mean: vec![0.0], std: vec![1.0] },
        );
        let mut pixels = vec![0.0f32; 16];
        for (i, p) in pixels.iter_mut().enumerate() {
            *p = i as f32 / 15.0;
        }
        pixels[0] = -5.0;
        pixels[15] = 5.0;
        set.images = Tensor::from_vec(Shape::d4(4, 1, 2, 2), pixels);
        set
    }

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("condense-grid-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn ppm_grid_has_expected_geometry_and_clamping() {
        let set = set_2x2();
        let path = tmp("grid.ppm");
        export_grid(&set, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P6\n4 4\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let body = &bytes[header.len()..];
        assert_eq!(body.len(), 4 * 4 * 3);
        assert_eq!(body[0], 0);
        assert_eq!(body[body.len() - 1], 255);
    }

    #[test]
    fn png_grid_decodes_back() {
        let set = set_2x2();
        let path = tmp("grid.png");
        export_grid(&set, &path).unwrap();
        let img = image::open(&path).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (4, 4));
        assert_eq!(img.get_pixel(0, 0).0[0], 0);
        assert_eq!(img.get_pixel(3, 3).0[0], 255);
    }

    #[test]
    fn unknown_extension_is_rejected() {
        let set = set_2x2();
        assert!(matches!(
            export_grid(&set, &tmp("grid.bmp")),
            Err(DataError::Invalid(_))
        ));
    }
}
