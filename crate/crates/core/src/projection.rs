//! Projection operators from a volumetric canvas to the data domain: the
//! identity for volumes and a learned camera for images.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Var;
use crate::vst::{identity_params, vst_sample};

/// Channel sum of a `[B, F, D, H, W]` canvas, giving `[B, D, H, W]` logits.
pub fn identity_logits<'t, T: Scalar>(canvas: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = canvas.shape();
    if s.len() != 5 {
        return Err(shape_err(format!(
            "canvas must be [B, F, D, H, W], got {s:?}"
        )));
    }
    if s[1] == 1 {
        canvas.reshape([s[0], s[2], s[3], s[4]])
    } else {
        canvas.sum(&[1])
    }
}

/// Bernoulli means of the identity projection.
pub fn proj_identity<'t, T: Scalar>(canvas: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(identity_logits(canvas)?.sigmoid())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub channels: usize,
    pub kernel: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CameraConfig {
    /// Number of fixed cameras, each with its own learned pose offset.
    pub cameras: usize,
    pub conv3d: Vec<ConvLayer>,
    /// The last layer must have one channel; it is left linear.
    pub conv2d: Vec<ConvLayer>,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            cameras: 3,
            conv3d: vec![
                ConvLayer {
                    channels: 8,
                    kernel: 3
                };
                2
            ],
            conv2d: vec![
                ConvLayer {
                    channels: 8,
                    kernel: 3,
                },
                ConvLayer {
                    channels: 1,
                    kernel: 3,
                },
            ],
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cameras == 0 {
            return Err(Error::Config("camera count must be at least 1".into()));
        }
        if self.conv2d.last().map(|l| l.channels) != Some(1) {
            return Err(Error::Config(
                "the last 2-D camera layer must have one channel".into(),
            ));
        }
        if self
            .conv3d
            .iter()
            .chain(&self.conv2d)
            .any(|l| l.kernel % 2 == 0 || l.channels == 0)
        {
            return Err(Error::Config(
                "camera kernels must be odd and channels nonzero".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ConvParams {
    weight: ParamId,
    bias: ParamId,
    channels: usize,
    pad: usize,
}

fn conv_block<'t, T: Scalar>(
    p: &Bound<'t, T>,
    x: Var<'t, T>,
    l: &ConvParams,
    dims: usize,
) -> Result<Var<'t, T>> {
    let y = x.conv(p.get(l.weight), dims, 1, l.pad)?;
    let mut bshape = vec![1, l.channels];
    bshape.extend(std::iter::repeat(1).take(dims));
    y.add(p.get(l.bias).reshape(bshape)?)
}

/// Learned volume-to-image camera: affine pose, 3-D convolutions, depth
/// folded into channels, then 2-D convolutions.
#[derive(Clone, Debug)]
pub struct CameraNet {
    cameras: usize,
    channels: usize,
    extents: [usize; 3],
    pose_weight: ParamId,
    pose_bias: ParamId,
    offsets: ParamId,
    conv3d: Vec<ConvParams>,
    conv2d: Vec<ConvParams>,
}

impl CameraNet {
    /// Pose weights and per-camera offsets start at zero, so every camera
    /// initially sees the canvas through the identity pose.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &CameraConfig,
        canvas_channels: usize,
        extents: [usize; 3],
        state_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let pose_weight = store.add_zeros(format!("{name}.pose.weight"), [12, state_size]);
        let pose_bias = store.add_zeros(format!("{name}.pose.bias"), [12]);
        let offsets = store.add_zeros(format!("{name}.offsets"), [cfg.cameras, 12]);
        let mut cin = canvas_channels;
        let mut layer =
            |store: &mut ParamStore<T>, tag: String, l: &ConvLayer, cin: usize, dims: usize| {
                let k = l.kernel;
                let taps = k.pow(dims as u32);
                let mut shape = vec![l.channels, cin];
                shape.extend(std::iter::repeat(k).take(dims));
                ConvParams {
                    weight: store.add_glorot(
                        format!("{tag}.weight"),
                        shape,
                        cin * taps,
                        l.channels * taps,
                        rng,
                    ),
                    bias: store.add_zeros(format!("{tag}.bias"), [l.channels]),
                    channels: l.channels,
                    pad: k / 2,
                }
            };
        let mut conv3d = Vec::new();
        for (i, l) in cfg.conv3d.iter().enumerate() {
            conv3d.push(layer(store, format!("{name}.conv3d.{i}"), l, cin, 3));
            cin = l.channels;
        }
        cin *= extents[0];
        let mut conv2d = Vec::new();
        for (i, l) in cfg.conv2d.iter().enumerate() {
            conv2d.push(layer(store, format!("{name}.conv2d.{i}"), l, cin, 2));
            cin = l.channels;
        }
        Ok(Self {
            cameras: cfg.cameras,
            channels: canvas_channels,
            extents,
            pose_weight,
            pose_bias,
            offsets,
            conv3d,
            conv2d,
        })
    }

    pub fn cameras(&self) -> usize {
        self.cameras
    }

    pub fn image_extents(&self) -> [usize; 2] {
        [self.extents[1], self.extents[2]]
    }

    pub fn offsets_id(&self) -> ParamId {
        self.offsets
    }

    fn check_camera(&self, cam: usize) -> Result<()> {
        if cam >= self.cameras {
            return Err(Error::InvalidCamera {
                id: cam,
                count: self.cameras,
            });
        }
        Ok(())
    }

    /// Affine pose `[B, 12]` for camera `cam` given the final state `h`.
    pub fn pose<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        state: Var<'t, T>,
        cam: usize,
    ) -> Result<Var<'t, T>> {
        self.check_camera(cam)?;
        let tape = state.tape();
        state
            .linear(p.get(self.pose_weight), Some(p.get(self.pose_bias)))?
            .add(tape.constant(identity_params(3)))?
            .add(p.get(self.offsets).slice(0, cam, 1)?)
    }

    /// Image logits `[B, H, W]` of `canvas[B, F, D, H, W]` seen from `cam`.
    pub fn render_logits<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        canvas: Var<'t, T>,
        state: Var<'t, T>,
        cam: usize,
    ) -> Result<Var<'t, T>> {
        let cs = canvas.shape();
        if cs.len() != 5 || cs[1] != self.channels || cs[2..] != self.extents {
            return Err(shape_err(format!(
                "camera expects canvas [B, {}, {:?}], got {cs:?}",
                self.channels, self.extents
            )));
        }
        let batch = cs[0];
        let [d, h, w] = self.extents;
        let mut y = vst_sample(canvas, self.pose(p, state, cam)?, self.extents)?;
        for l in &self.conv3d {
            y = conv_block(p, y, l, 3)?.relu();
        }
        let c = y.shape()[1];
        y = y.reshape([batch, c * d, h, w])?;
        let last = self.conv2d.len() - 1;
        for (i, l) in self.conv2d.iter().enumerate() {
            y = conv_block(p, y, l, 2)?;
            if i < last {
                y = y.relu();
            }
        }
        y.reshape([batch, h, w])
    }

    /// Image means in (0, 1).
    pub fn proj_camera<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        canvas: Var<'t, T>,
        state: Var<'t, T>,
        cam: usize,
    ) -> Result<Var<'t, T>> {
        Ok(self.render_logits(p, canvas, state, cam)?.sigmoid())
    }

    /// Logits `[B, V, H, W]`, one view per camera id, with shared weights.
    pub fn multiview_logits<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        canvas: Var<'t, T>,
        state: Var<'t, T>,
        cams: &[usize],
    ) -> Result<Var<'t, T>> {
        if cams.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one camera is required".into(),
            ));
        }
        let [h, w] = self.image_extents();
        let views = cams
            .iter()
            .map(|&cam| {
                self.render_logits(p, canvas, state, cam)?
                    .reshape([canvas.shape()[0], 1, h, w])
            })
            .collect::<Result<Vec<_>>>()?;
        Var::concat(&views, 1)
    }

    pub fn proj_multiview<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        canvas: Var<'t, T>,
        state: Var<'t, T>,
        cams: &[usize],
    ) -> Result<Var<'t, T>> {
        Ok(self.multiview_logits(p, canvas, state, cams)?.sigmoid())
    }
}
