//! Digit images extruded into volumes, and a procedural glyph generator
//! standing in for MNIST-style IDX files.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    augment, read_idx_images, read_idx_labels, AugmentSpec, IdxImages, Volume, PRIMITIVE_EXTENT,
};
use crate::error::{Error, Result};

pub const DIGIT_SIDE: usize = 28;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrudeSpec {
    pub extent: usize,
    pub thickness: usize,
    pub aug: AugmentSpec,
}

impl Default for ExtrudeSpec {
    fn default() -> Self {
        Self {
            extent: PRIMITIVE_EXTENT,
            thickness: 8,
            aug: AugmentSpec::none(),
        }
    }
}

/// Box-filtered resize of a `u8` image to intensities in `[0, 1]`.
fn resize(pixels: &[u8], rows: usize, cols: usize, out_rows: usize, out_cols: usize) -> Vec<f32> {
    if (rows, cols) == (out_rows, out_cols) {
        return pixels.iter().map(|&p| p as f32 / 255.0).collect();
    }
    let mut out = vec![0.0f32; out_rows * out_cols];
    let mut counts = vec![0u32; out_rows * out_cols];
    for i in 0..rows {
        let oi = ((i as f64 + 0.5) * out_rows as f64 / rows as f64) as usize;
        for j in 0..cols {
            let oj = ((j as f64 + 0.5) * out_cols as f64 / cols as f64) as usize;
            out[oi * out_cols + oj] += pixels[i * cols + j] as f32 / 255.0;
            counts[oi * out_cols + oj] += 1;
        }
    }
    out.iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f32 } else { 0.0 })
        .collect()
}

/// Binarizes at one half, centers the image in the `(y, x)` plane of an
/// `extent³` grid (shrinking it to leave a one-voxel border when it does not
/// fit) and extrudes it `thickness` voxels along depth.
pub fn extrude_image(
    pixels: &[u8],
    rows: usize,
    cols: usize,
    extent: usize,
    thickness: usize,
) -> Result<Volume> {
    if pixels.len() != rows * cols {
        return Err(Error::Format(format!(
            "{} pixels for a {rows}x{cols} image",
            pixels.len()
        )));
    }
    if thickness > extent || extent == 0 {
        return Err(Error::InvalidArgument(format!(
            "thickness {thickness} does not fit extent {extent}"
        )));
    }
    let fit = |n: usize| {
        if n <= extent {
            n
        } else {
            extent.saturating_sub(2).max(1)
        }
    };
    let (r, c) = (fit(rows), fit(cols));
    let img = resize(pixels, rows, cols, r, c);
    let (oy, ox, oz) = ((extent - r) / 2, (extent - c) / 2, (extent - thickness) / 2);
    Ok(Volume::from_fn([extent; 3], |z, y, x| {
        let inside = (oz..oz + thickness).contains(&z)
            && (oy..oy + r).contains(&y)
            && (ox..ox + c).contains(&x);
        if inside && img[(y - oy) * c + (x - ox)] >= 0.5 {
            1.0
        } else {
            0.0
        }
    }))
}

/// Extruded and augmented volumes with labels from an IDX image/label pair.
pub fn extrude_digits(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    spec: &ExtrudeSpec,
) -> Result<Vec<(Volume, usize)>> {
    let images = read_idx_images(images)?;
    let labels = read_idx_labels(labels)?;
    extrude_idx(&images, &labels, spec)
}

pub(crate) fn extrude_idx(
    images: &IdxImages,
    labels: &[u8],
    spec: &ExtrudeSpec,
) -> Result<Vec<(Volume, usize)>> {
    if images.len() != labels.len() {
        return Err(Error::LabelCountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    let mut out = Vec::with_capacity(labels.len());
    for (i, &label) in labels.iter().enumerate() {
        let v = extrude_image(
            images.image(i),
            images.rows,
            images.cols,
            spec.extent,
            spec.thickness,
        )?;
        let aug = spec.aug.for_item(i as u64);
        let v = if spec.aug.with_seed(0) == AugmentSpec::none() {
            v
        } else {
            augment(&v, &aug)
        };
        out.push((v, label as usize));
    }
    Ok(out)
}

// seven-segment strokes in a unit box, y pointing down
const SEGMENTS: [[f64; 4]; 7] = [
    [0.0, 0.0, 1.0, 0.0],
    [1.0, 0.0, 1.0, 0.5],
    [1.0, 0.5, 1.0, 1.0],
    [0.0, 1.0, 1.0, 1.0],
    [0.0, 0.5, 0.0, 1.0],
    [0.0, 0.0, 0.0, 0.5],
    [0.0, 0.5, 1.0, 0.5],
];

const DIGIT_SEGMENTS: [&[usize]; 10] = [
    &[0, 1, 2, 3, 4, 5],
    &[1, 2],
    &[0, 1, 6, 4, 3],
    &[0, 1, 6, 2, 3],
    &[5, 6, 1, 2],
    &[0, 5, 6, 2, 3],
    &[0, 5, 6, 4, 3, 2],
    &[0, 1, 2],
    &[0, 1, 2, 3, 4, 5, 6],
    &[0, 1, 2, 3, 5, 6],
];

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * d[0] - p[0], a[1] + t * d[1] - p[1]];
    (q[0] * q[0] + q[1] * q[1]).sqrt()
}

/// A 28×28 seven-segment rendering of `label` with random size, position,
/// slant and stroke width.
pub fn synth_digit(label: usize, rng: &mut impl Rng) -> Vec<u8> {
    let w = rng.gen_range(9.0..13.0);
    let h = rng.gen_range(16.0..20.0);
    let cx = 13.5 + rng.gen_range(-2.0..2.0);
    let cy = 13.5 + rng.gen_range(-2.0..2.0);
    let slant = rng.gen_range(-0.25..0.25);
    let radius = rng.gen_range(1.2..2.0);
    let strokes: Vec<[f64; 4]> = DIGIT_SEGMENTS[label % 10]
        .iter()
        .map(|&s| {
            let [x0, y0, x1, y1] = SEGMENTS[s];
            let map = |x: f64, y: f64| {
                [
                    cx + (x - 0.5) * w - slant * (y - 0.5) * h,
                    cy + (y - 0.5) * h,
                ]
            };
            let (a, b) = (map(x0, y0), map(x1, y1));
            [a[0], a[1], b[0], b[1]]
        })
        .collect();
    let mut out = vec![0u8; DIGIT_SIDE * DIGIT_SIDE];
    for i in 0..DIGIT_SIDE {
        for j in 0..DIGIT_SIDE {
            let p = [j as f64, i as f64];
            let d = strokes
                .iter()
                .map(|s| segment_distance(p, [s[0], s[1]], [s[2], s[3]]))
                .fold(f64::INFINITY, f64::min);
            out[i * DIGIT_SIDE + j] = (255.0 * (radius + 0.5 - d).clamp(0.0, 1.0)).round() as u8;
        }
    }
    out
}

/// `n` glyphs with labels cycling through the ten digits.
pub fn synth_digits(n: usize, seed: u64) -> (IdxImages, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(n * DIGIT_SIDE * DIGIT_SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 10;
        pixels.extend(synth_digit(label, &mut rng));
        labels.push(label as u8);
    }
    (
        IdxImages {
            rows: DIGIT_SIDE,
            cols: DIGIT_SIDE,
            pixels,
        },
        labels,
    )
}
