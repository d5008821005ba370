use crate::datasets::{
    augment, extrude_image, gen_necker_at, gen_primitive_at, read_idx_images, read_idx_labels,
    synth_digits, AugmentSpec, IdxImages, Manifest, PrimitiveKind, Volume,
};
use crate::error::{Error, Result};
use crate::genmodel::Context;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::{DataSource, DatasetConfig, Target};

/// Orthographic occupancy silhouette of `v` along axis `cam` (0: depth,
/// 1: height, 2: width), as an `[e, e]` image of the two remaining axes.
pub fn axis_view(v: &Volume, cam: usize) -> Vec<f32> {
    let [d, h, w] = v.extents();
    let (rows, cols, depth) = match cam {
        0 => (h, w, d),
        1 => (d, w, h),
        _ => (d, h, w),
    };
    let mut out = vec![0.0f32; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut m = 0.0f32;
            for k in 0..depth {
                let a = match cam {
                    0 => v.get(k, r, c),
                    1 => v.get(r, k, c),
                    _ => v.get(r, c, k),
                };
                m = m.max(a);
            }
            out[r * cols + c] = m;
        }
    }
    out
}

/// Held-in and held-out volumes with optional labels.
#[derive(Clone, Debug)]
pub struct Split {
    pub extent: usize,
    pub train: Vec<(Volume, Option<usize>)>,
    pub test: Vec<(Volume, Option<usize>)>,
}

/// One minibatch in model layout.
#[derive(Clone, Debug)]
pub struct Batch<T: Scalar> {
    pub x: Tensor<T>,
    pub ctx: Context<T>,
    pub cams: Vec<usize>,
}

fn aug_spec(cfg: &DatasetConfig, seed: u64) -> AugmentSpec {
    let a = cfg.augment;
    AugmentSpec {
        translation: [a.translation; 3],
        rotation: a.rotation,
        binarize: a.binarize,
        seed,
    }
}

fn digits_images(
    images: &IdxImages,
    labels: &[u8],
    cfg: &DatasetConfig,
    thickness: usize,
    seed: u64,
) -> Result<Vec<(Volume, Option<usize>)>> {
    if images.len() != labels.len() {
        return Err(Error::LabelCountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    let aug = aug_spec(cfg, seed);
    (0..images.len())
        .map(|i| {
            let v = extrude_image(
                images.image(i),
                images.rows,
                images.cols,
                cfg.extent,
                thickness,
            )?;
            Ok((
                augment(&v, &aug.for_item(i as u64)),
                Some(labels[i] as usize),
            ))
        })
        .collect()
}

/// Builds `train_size + test_size` items deterministically from `seed`.
pub fn build_split(cfg: &DatasetConfig, seed: u64) -> Result<Split> {
    let n = cfg.train_size + cfg.test_size;
    let e = cfg.extent;
    let mut items: Vec<(Volume, Option<usize>)> = match &cfg.source {
        DataSource::Primitives => {
            let aug = aug_spec(cfg, seed);
            (0..n)
                .map(|i| {
                    let kind = PrimitiveKind::ALL[i % 6];
                    (
                        gen_primitive_at(kind, e, &aug.for_item(i as u64)),
                        Some(kind.label()),
                    )
                })
                .collect()
        }
        DataSource::Necker => {
            let aug = aug_spec(cfg, seed);
            (0..n)
                .map(|i| (gen_necker_at(e, aug.for_item(i as u64).seed), None))
                .collect()
        }
        DataSource::Digits {
            images,
            labels,
            thickness,
        } => {
            let depth = thickness.unwrap_or((cfg.extent * 3).div_ceil(10));
            match (images, labels) {
                (Some(ip), Some(lp)) => {
                    let mut imgs = read_idx_images(ip)?;
                    let mut labs = read_idx_labels(lp)?;
                    if imgs.len() != labs.len() {
                        return Err(Error::LabelCountMismatch {
                            images: imgs.len(),
                            labels: labs.len(),
                        });
                    }
                    if imgs.len() < n {
                        return Err(Error::Format(format!(
                            "{} digit images, need {n}",
                            imgs.len()
                        )));
                    }
                    imgs.pixels.truncate(n * imgs.rows * imgs.cols);
                    labs.truncate(n);
                    digits_images(&imgs, &labs, cfg, depth, seed)?
                }
                (None, None) => {
                    let (imgs, labs) = synth_digits(n, seed);
                    digits_images(&imgs, &labs, cfg, depth, seed)?
                }
                _ => {
                    return Err(Error::Config(
                        "digit images and labels must be given together".into(),
                    ))
                }
            }
        }
        DataSource::Vox { dir } => {
            let (m, items) = Manifest::read_dataset(dir)?;
            if m.extents != [e; 3] {
                return Err(Error::Format(format!(
                    "dataset extents {:?}, config expects {:?}",
                    m.extents, [e; 3]
                )));
            }
            if items.len() < n {
                return Err(Error::Format(format!(
                    "{} volumes in {}, need {n}",
                    items.len(),
                    dir.display()
                )));
            }
            items.into_iter().take(n).collect()
        }
    };
    let test = items.split_off(cfg.train_size);
    Ok(Split {
        extent: e,
        train: items,
        test,
    })
}

/// Assembles data tensor, context and target cameras for the given items.
pub fn make_batch<T: Scalar>(
    cfg: &DatasetConfig,
    items: &[&(Volume, Option<usize>)],
) -> Result<Batch<T>> {
    let b = items.len();
    let e = cfg.extent;
    let views = |cams: &[usize]| {
        let mut data = Vec::with_capacity(b * cams.len() * e * e);
        for (v, _) in items {
            for &c in cams {
                data.extend(axis_view(v, c).into_iter().map(|a| T::c(a as f64)));
            }
        }
        Tensor::new([b, cams.len(), e, e], data)
    };
    let (x, cams) = match &cfg.target {
        Target::Volume => {
            let mut data = Vec::with_capacity(b * e * e * e);
            for (v, _) in items {
                data.extend(v.data().iter().map(|&a| T::c(a as f64)));
            }
            (Tensor::new([b, e, e, e], data)?, Vec::new())
        }
        Target::Views { cameras } => (views(cameras)?, cameras.clone()),
    };
    let ctx = if cfg.context_views > 0 {
        let cameras: Vec<usize> = (0..cfg.context_views).collect();
        Context::Views {
            images: views(&cameras)?,
            cameras,
        }
    } else if cfg.class_context {
        let labels = items
            .iter()
            .map(|(_, l)| {
                l.ok_or_else(|| Error::Format("class context needs labelled items".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Context::Class(labels)
    } else {
        Context::None
    };
    Ok(Batch { x, ctx, cams })
}
