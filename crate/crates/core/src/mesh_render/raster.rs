use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{cross, dot, normalize, sub, Mesh, Vec3};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const NEAR: f64 = 1e-3;

/// Light travelling along `direction`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Light {
    pub direction: Vec3,
    pub intensity: f64,
}

/// Pinhole camera at the origin looking down `+z` with image `y` pointing
/// down, three directional lights and an ambient term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels.
    pub focal: f64,
    pub lights: [Light; 3],
    pub ambient: f64,
    pub background: Vec3,
}

impl RenderConfig {
    pub fn new(width: usize, height: usize) -> Self {
        let light = |d: Vec3, intensity| Light {
            direction: normalize(d),
            intensity,
        };
        Self {
            width,
            height,
            focal: 1.5 * width.max(height) as f64,
            lights: [
                light([0.3, 0.5, 1.0], 0.6),
                light([-1.0, 0.2, 0.5], 0.3),
                light([0.2, -1.0, 0.3], 0.2),
            ],
            ambient: 0.15,
            background: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::DegenerateCamera(format!(
                "image extents {}x{}",
                self.width, self.height
            )));
        }
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(Error::DegenerateCamera(format!(
                "focal length {}",
                self.focal
            )));
        }
        if let Some(l) = self
            .lights
            .iter()
            .find(|l| (dot(l.direction, l.direction).sqrt() - 1.0).abs() > 1e-6)
        {
            return Err(Error::Config(format!(
                "light direction {:?} is not unit norm",
                l.direction
            )));
        }
        Ok(())
    }

    /// Pixel coordinates of a camera-space point in front of the camera.
    pub fn project(&self, p: Vec3) -> [f64; 2] {
        [
            self.focal * p[0] / p[2] + self.width as f64 / 2.0,
            self.focal * p[1] / p[2] + self.height as f64 / 2.0,
        ]
    }
}

/// RGB image with values in `[0, 1]`, `[y][x][channel]` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn filled(width: usize, height: usize, color: Vec3) -> Self {
        let px = color.map(|c| c as f32);
        Self {
            width,
            height,
            data: (0..width * height).flat_map(|_| px).collect(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Channel-first `[3, H, W]` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let (w, h) = (self.width, self.height);
        Tensor::from_fn([3, h, w], |i| {
            T::c(self.data[3 * (i % (h * w)) + i / (h * w)] as f64)
        })
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(shape_err(format!(
                "image tensor must be [3, H, W], got {s:?}"
            )));
        }
        let (h, w) = (s[1], s[2]);
        let mut data = vec![0.0f32; 3 * h * w];
        for (i, v) in t.data().iter().enumerate() {
            data[3 * (i % (h * w)) + i / (h * w)] = v.to_f64_lossy().clamp(0.0, 1.0) as f32;
        }
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }

    fn bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        image::save_buffer(
            path,
            &self.bytes(),
            self.width as u32,
            self.height as u32,
            image::ColorType::Rgb8,
        )
        .map_err(|e| Error::Image(e.to_string()))
    }

    /// ASCII PPM (`P3`) with one pixel per line.
    pub fn to_ppm(&self) -> String {
        let mut s = format!("P3\n{} {}\n255\n", self.width, self.height);
        for px in self.bytes().chunks(3) {
            s.push_str(&format!("{} {} {}\n", px[0], px[1], px[2]));
        }
        s
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::File::create(path)?.write_all(self.to_ppm().as_bytes())?;
        Ok(())
    }
}

/// Rendered image with its depth buffer (`∞` where nothing was drawn).
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: Image,
    pub depth: Vec<f64>,
}

impl Frame {
    pub fn coverage(&self) -> usize {
        self.depth.iter().filter(|d| d.is_finite()).count()
    }
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Perspective projection, depth-buffered triangle fill sampled at pixel
/// centers and flat Lambertian shading.
pub fn render(mesh: &Mesh, cfg: &RenderConfig) -> Result<Frame> {
    cfg.validate()?;
    if let Some(v) = mesh.vertices.iter().find(|v| !(v[2] > NEAR)) {
        return Err(Error::DegenerateCamera(format!(
            "vertex {v:?} is not in front of the camera"
        )));
    }
    let (w, h) = (cfg.width, cfg.height);
    let mut image = Image::filled(w, h, cfg.background);
    let mut depth = vec![f64::INFINITY; w * h];
    let screen: Vec<[f64; 2]> = mesh.vertices.iter().map(|&v| cfg.project(v)).collect();
    for (f, face) in mesh.faces.iter().enumerate() {
        let [a, b, c] = face.map(|i| mesh.vertices[i]);
        let [sa, sb, sc] = face.map(|i| screen[i]);
        let area = edge(sa, sb, sc);
        if area.abs() < 1e-12 {
            continue;
        }
        let mut n = normalize(cross(sub(b, a), sub(c, a)));
        let centroid = [0, 1, 2].map(|k| (a[k] + b[k] + c[k]) / 3.0);
        if dot(n, centroid) > 0.0 {
            n = n.map(|v| -v);
        }
        let shade = cfg.ambient
            + cfg
                .lights
                .iter()
                .map(|l| l.intensity * (-dot(n, l.direction)).max(0.0))
                .sum::<f64>();
        let color = mesh
            .face_colors
            .get(f)
            .copied()
            .unwrap_or([1.0; 3])
            .map(|c| (c * shade).clamp(0.0, 1.0) as f32);
        let lo = |k: usize| {
            [sa[k], sb[k], sc[k]]
                .iter()
                .fold(f64::INFINITY, |m, &v| m.min(v))
        };
        let hi = |k: usize| {
            [sa[k], sb[k], sc[k]]
                .iter()
                .fold(f64::NEG_INFINITY, |m, &v| m.max(v))
        };
        let x0 = (lo(0) - 0.5).ceil().max(0.0) as usize;
        let y0 = (lo(1) - 0.5).ceil().max(0.0) as usize;
        let x1 = ((hi(0) - 0.5).floor().min(w as f64 - 1.0)).max(-1.0);
        let y1 = ((hi(1) - 0.5).floor().min(h as f64 - 1.0)).max(-1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        for py in y0..=y1 as usize {
            for px in x0..=x1 as usize {
                let p = [px as f64 + 0.5, py as f64 + 0.5];
                let wa = edge(sb, sc, p) / area;
                let wb = edge(sc, sa, p) / area;
                let wc = edge(sa, sb, p) / area;
                if wa < 0.0 || wb < 0.0 || wc < 0.0 {
                    continue;
                }
                let z = 1.0 / (wa / a[2] + wb / b[2] + wc / c[2]);
                let i = py * w + px;
                if z < depth[i] {
                    depth[i] = z;
                    image.data[3 * i..3 * i + 3].copy_from_slice(&color);
                }
            }
        }
    }
    Ok(Frame { image, depth })
}

pub fn rasterize(mesh: &Mesh, cfg: &RenderConfig) -> Result<Image> {
    Ok(render(mesh, cfg)?.image)
}
