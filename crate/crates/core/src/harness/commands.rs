use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::completion::{complete, hidden_agreement, ObservationMask, DEFAULT_SNAPSHOTS};
use crate::datasets::{write_vox, Manifest};
use crate::error::{Error, Result};
use crate::genmodel::ContextKind;
use crate::mesh_render::rasterize;

use super::config::{RunConfig, Target};
use super::data::build_split;
use super::export::write_montage;
use super::mesh::{MeshFitConfig, MeshFitter};
use super::train::{load_model, stream_rng, TAG_SAMPLE};

/// Writes the train and test splits of `cfg` as VOX1 datasets under
/// `out/train` and `out/test`.
pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<(Manifest, Manifest)> {
    let split = build_split(&cfg.dataset, cfg.seed)?;
    let name = serde_json::to_value(&cfg.dataset.source)?["kind"]
        .as_str()
        .unwrap_or("dataset")
        .to_string();
    let classes = cfg.dataset.source.classes();
    let train = Manifest::write_dataset(out.join("train"), &name, classes, cfg.seed, &split.train)?;
    let test = Manifest::write_dataset(out.join("test"), &name, classes, cfg.seed, &split.test)?;
    Ok((train, test))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionReport {
    pub item: usize,
    pub iteration: usize,
    pub hidden_agreement: f64,
}

/// Completes the left halves of the first `n` held-out volumes with the
/// checkpointed model, writing snapshots and one JSON line per snapshot.
pub fn complete_cmd(
    ckpt: &Path,
    out: &Path,
    n: usize,
    iters: usize,
    seed: u64,
    log: &mut dyn Write,
) -> Result<Vec<CompletionReport>> {
    let l = load_model::<f32>(ckpt)?;
    if l.cfg.model.context != ContextKind::None || l.cfg.dataset.target != Target::Volume {
        return Err(Error::ContextMismatch(
            "completion needs an unconditional volume model".into(),
        ));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let split = build_split(&l.cfg.dataset, l.cfg.seed)?;
    if split.test.len() < n {
        return Err(Error::Format(format!(
            "{} held-out volumes, {n} requested",
            split.test.len()
        )));
    }
    let mask = ObservationMask::left_half_hidden([split.extent; 3]);
    let mut snaps: Vec<usize> = DEFAULT_SNAPSHOTS
        .iter()
        .copied()
        .filter(|&s| s <= iters)
        .collect();
    if !snaps.contains(&iters) {
        snaps.push(iters);
    }
    let mut reports = Vec::new();
    for (i, (truth, _)) in split.test.iter().take(n).enumerate() {
        let dir = out.join(format!("item_{i:04}"));
        std::fs::create_dir_all(&dir)?;
        let chain_seed = rand::Rng::gen(&mut stream_rng(seed, TAG_SAMPLE, (3 << 40) + i as u64));
        let chain = complete(&l.model, &l.store, truth, &mask, iters, &snaps, chain_seed)?;
        write_vox(dir.join("truth.vox"), truth)?;
        write_vox(dir.join("init.vox"), &chain.init)?;
        for (it, v) in &chain.snapshots {
            write_vox(dir.join(format!("iter_{it:04}.vox")), v)?;
            write_montage(dir.join(format!("iter_{it:04}.png")), v, 8)?;
            let r = CompletionReport {
                item: i,
                iteration: *it,
                hidden_agreement: hidden_agreement(v, truth, &mask),
            };
            writeln!(log, "{}", serde_json::to_string(&r)?)?;
            reports.push(r);
        }
    }
    Ok(reports)
}

/// Fits a mesh to the rendered target scene and writes both meshes as OBJ
/// and both renderings as PNG.
pub fn render_mesh_cmd(
    cfg: &MeshFitConfig,
    out: &Path,
    log: &mut dyn Write,
) -> Result<Vec<PathBuf>> {
    let mut fitter = MeshFitter::new(cfg.clone())?;
    fitter.run(25, log)?;
    std::fs::create_dir_all(out)?;
    let rc = cfg.render_config();
    let target = cfg.target_mesh();
    let fitted = fitter.mesh()?;
    let files = vec![
        out.join("target.obj"),
        out.join("target.png"),
        out.join("fitted.obj"),
        out.join("fitted.png"),
    ];
    target.write_obj(&files[0])?;
    fitter.target.write_png(&files[1])?;
    fitted.write_obj(&files[2])?;
    rasterize(&fitted, &rc)?.write_png(&files[3])?;
    Ok(files)
}
