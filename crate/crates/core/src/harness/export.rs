use std::path::{Path, PathBuf};

use image::GrayImage;

use crate::datasets::{write_vox, Volume};
use crate::error::{Error, Result};
use crate::genmodel::{Context, ContextKind};
use crate::tensor::Tensor;

use super::config::Target;
use super::data::{build_split, make_batch};
use super::train::{load_model, stream_rng, TAG_SAMPLE};

/// Depth slices of `v` tiled left to right, top to bottom, each voxel drawn
/// as a `scale × scale` block.
pub fn volume_montage(v: &Volume, scale: usize) -> GrayImage {
    let [d, h, w] = v.extents();
    let cols = (d as f64).sqrt().ceil().max(1.0) as usize;
    let rows = d.div_ceil(cols).max(1);
    let (tw, th) = (w * scale + 1, h * scale + 1);
    let mut img = GrayImage::new((cols * tw) as u32, (rows * th) as u32);
    for z in 0..d {
        let (ox, oy) = ((z % cols) * tw, (z / cols) * th);
        for y in 0..h * scale {
            for x in 0..w * scale {
                let a = v.get(z, y / scale, x / scale).clamp(0.0, 1.0);
                img.put_pixel(
                    (ox + x) as u32,
                    (oy + y) as u32,
                    image::Luma([(a * 255.0).round() as u8]),
                );
            }
        }
    }
    img
}

pub fn write_montage(path: impl AsRef<Path>, v: &Volume, scale: usize) -> Result<()> {
    volume_montage(v, scale)
        .save(path)
        .map_err(|e| Error::Image(e.to_string()))
}

pub fn write_gray_png(
    path: impl AsRef<Path>,
    pixels: &[f32],
    width: usize,
    height: usize,
    scale: usize,
) -> Result<()> {
    let img = GrayImage::from_fn((width * scale) as u32, (height * scale) as u32, |x, y| {
        let a = pixels[(y as usize / scale) * width + x as usize / scale].clamp(0.0, 1.0);
        image::Luma([(a * 255.0).round() as u8])
    });
    img.save(path).map_err(|e| Error::Image(e.to_string()))
}

#[derive(Clone, Debug, Default)]
pub struct SampleRequest {
    pub n: usize,
    pub seed: u64,
    /// Classes to sample for class-conditional models; all when `None`.
    pub classes: Option<Vec<usize>>,
}

/// Draws prior samples from the checkpoint in `ckpt` and writes them under
/// `out`: VOX1 plus slice montage for volumes, one PNG per camera for image
/// models. Class-conditional models get one directory per class; view
/// contexts come from the held-out split. Returns the written paths.
pub fn sample_cmd(ckpt: &Path, out: &Path, req: &SampleRequest) -> Result<Vec<PathBuf>> {
    let l = load_model::<f32>(ckpt)?;
    let cfg = &l.cfg;
    let mut groups: Vec<(PathBuf, Context<f32>, u64)> = Vec::new();
    match (&cfg.model.context, &req.classes) {
        (ContextKind::None, None) => groups.push((out.to_path_buf(), Context::None, 0)),
        (ContextKind::None, Some(_)) => {
            return Err(Error::ContextMismatch(
                "classes given for an unconditional model".into(),
            ));
        }
        (ContextKind::ClassOnehot { classes }, req_classes) => {
            let list: Vec<usize> = req_classes
                .clone()
                .unwrap_or_else(|| (0..*classes).collect());
            if let Some(c) = list.iter().find(|&&c| c >= *classes) {
                return Err(Error::ContextMismatch(format!(
                    "class {c} of a {classes}-class model"
                )));
            }
            for c in list {
                groups.push((
                    out.join(format!("class_{c}")),
                    Context::Class(vec![c; req.n]),
                    c as u64,
                ));
            }
        }
        (ContextKind::Views { .. }, None) => {
            if req.n > 0 {
                let split = build_split(&cfg.dataset, cfg.seed)?;
                if split.test.is_empty() {
                    return Err(Error::Format("no held-out items to take views from".into()));
                }
                let items: Vec<_> = (0..req.n)
                    .map(|i| &split.test[i % split.test.len()])
                    .collect();
                groups.push((
                    out.to_path_buf(),
                    make_batch::<f32>(&cfg.dataset, &items)?.ctx,
                    0,
                ));
            }
        }
        (ContextKind::Views { .. }, Some(_)) => {
            return Err(Error::ContextMismatch(
                "classes given for a view-conditioned model".into(),
            ));
        }
    }
    let mut written = Vec::new();
    if req.n == 0 {
        return Ok(written);
    }
    let cams = match &cfg.dataset.target {
        Target::Volume => Vec::new(),
        Target::Views { cameras } => cameras.clone(),
    };
    for (dir, ctx, stream) in groups {
        std::fs::create_dir_all(&dir)?;
        let mut rng = stream_rng(req.seed, TAG_SAMPLE, stream);
        let (canvas, means) = l
            .model
            .generator
            .sample(&l.store, &ctx, req.n, &cams, &mut rng)?;
        for i in 0..req.n {
            match &cfg.dataset.target {
                Target::Volume => {
                    let v = Volume::from_tensor(&means.row(i)?)?;
                    let p = dir.join(format!("sample_{i:04}.vox"));
                    write_vox(&p, &v)?;
                    written.push(p);
                    let p = dir.join(format!("sample_{i:04}.png"));
                    write_montage(&p, &v, 8)?;
                    written.push(p);
                }
                Target::Views { cameras } => {
                    let img = means.row(i)?;
                    let [h, w] = [img.shape()[1], img.shape()[2]];
                    for (k, c) in cameras.iter().enumerate() {
                        let px: Vec<f32> = img.data()[k * h * w..(k + 1) * h * w].to_vec();
                        let p = dir.join(format!("sample_{i:04}_cam{c}.png"));
                        write_gray_png(&p, &px, w, h, 8)?;
                        written.push(p);
                    }
                    let c0: Tensor<f32> = canvas.row(i)?.rows(0, 1)?.map(crate::tensor::sigmoid);
                    let c0 = c0.reshape(c0.shape()[1..].to_vec())?;
                    let v = Volume::from_tensor(&c0)?;
                    let p = dir.join(format!("sample_{i:04}_canvas.vox"));
                    write_vox(&p, &v)?;
                    written.push(p);
                }
            }
        }
    }
    Ok(written)
}
