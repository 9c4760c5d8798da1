use std::path::Path;

use image::{ImageError, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

use super::LabelMap;

/// Contour colours for ground-truth classes 1, 2, 3, ... (cycled).
pub const GT_PALETTE: [[u8; 3]; 4] = [[0, 255, 0], [0, 128, 255], [255, 255, 0], [0, 255, 255]];
/// Contour colours for predicted classes; disjoint from [`GT_PALETTE`].
pub const PRED_PALETTE: [[u8; 3]; 4] = [[255, 0, 0], [255, 0, 255], [255, 128, 0], [160, 0, 255]];

/// Pixels of `class` in sample 0 with at least one 4-neighbour of another
/// label. The image border does not count as a boundary.
pub fn contour_mask(labels: &LabelMap, class: u8) -> Vec<bool> {
    let (h, w) = (labels.height(), labels.width());
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if labels.get(0, y, x) != class {
                continue;
            }
            let differs = |yy: usize, xx: usize| labels.get(0, yy, xx) != class;
            out[y * w + x] = (y > 0 && differs(y - 1, x))
                || (y + 1 < h && differs(y + 1, x))
                || (x > 0 && differs(y, x - 1))
                || (x + 1 < w && differs(y, x + 1));
        }
    }
    out
}

fn paint(img: &mut RgbImage, labels: &LabelMap, palette: &[[u8; 3]]) {
    let w = labels.width();
    for class in 1..=labels.max_label() {
        let colour = Rgb(palette[(class as usize - 1) % palette.len()]);
        for (i, on) in contour_mask(labels, class).into_iter().enumerate() {
            if on {
                img.put_pixel((i % w) as u32, (i / w) as u32, colour);
            }
        }
    }
}

/// Grayscale image with ground-truth contours, then predicted contours on
/// top. Only sample 0 of each input is drawn.
pub fn render_overlay(image: &Tensor4<f32>, pred: &LabelMap, gt: &LabelMap) -> Result<RgbImage> {
    let (_, c, h, w) = image.dims();
    if c != 1 {
        return Err(Error::Shape(format!("overlay needs a grayscale image, got {c} channels")));
    }
    for m in [pred, gt] {
        if (m.height(), m.width()) != (h, w) {
            return Err(Error::Shape(format!(
                "labels {}x{} do not match image {h}x{w}",
                m.height(),
                m.width()
            )));
        }
    }
    let plane = &image.data()[..h * w];
    let mut img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = plane[y as usize * w + x as usize].clamp(0.0, 1.0);
        let g = (v * 255.0).round() as u8;
        Rgb([g, g, g])
    });
    paint(&mut img, gt, &GT_PALETTE);
    paint(&mut img, pred, &PRED_PALETTE);
    Ok(img)
}

pub fn emit_overlay(image: &Tensor4<f32>, pred: &LabelMap, gt: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    render_overlay(image, pred, gt)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            ImageError::IoError(io) => Error::io(path, io),
            other => Error::Data(format!("{}: {other}", path.display())),
        })
}
