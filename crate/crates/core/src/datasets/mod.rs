//! Procedural volumetric datasets: Necker cubes, solid primitives and
//! extruded digits, with rigid augmentation and file formats.

mod digits;
mod idx;
mod vox;

pub use digits::{extrude_digits, extrude_image, synth_digit, synth_digits, ExtrudeSpec};
pub use idx::{
    encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels, read_idx_images,
    read_idx_labels, write_idx_images, write_idx_labels, IdxImages, IMAGES_MAGIC, LABELS_MAGIC,
};
pub use vox::{decode_vox, encode_vox, read_vox, write_vox, Manifest, ManifestEntry, VOX_MAGIC};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vst::{resample_volume, AffineParams3};

pub const NECKER_EXTENT: usize = 40;
pub const NECKER_SIDE: f64 = 10.0;
pub const PRIMITIVE_EXTENT: usize = 30;

/// Dense occupancy grid in `[z][y][x]` order with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    extents: [usize; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn zeros(extents: [usize; 3]) -> Self {
        Self {
            extents,
            data: vec![0.0; extents.iter().product()],
        }
    }

    /// Values are clamped into `[0, 1]`.
    pub fn new(extents: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if data.len() != extents.iter().product::<usize>() {
            return Err(shape_err(format!(
                "{} values for extents {extents:?}",
                data.len()
            )));
        }
        Ok(Self {
            extents,
            data: data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn from_fn(extents: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(extents.iter().product());
        for z in 0..extents[0] {
            for y in 0..extents[1] {
                for x in 0..extents[2] {
                    data.push(f(z, y, x).clamp(0.0, 1.0));
                }
            }
        }
        Self { extents, data }
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.extents[1] + y) * self.extents[2] + x
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(z, y, x)]
    }

    pub fn set(&mut self, z: usize, y: usize, x: usize, v: f32) {
        let i = self.index(z, y, x);
        self.data[i] = v.clamp(0.0, 1.0);
    }

    /// Number of voxels at or above one half.
    pub fn occupied(&self) -> usize {
        self.data.iter().filter(|&&v| v >= 0.5).count()
    }

    pub fn binarized(&self) -> Self {
        Self {
            extents: self.extents,
            data: self
                .data
                .iter()
                .map(|&v| if v >= 0.5 { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Fraction of voxels on the same side of one half in both volumes.
    pub fn agreement(&self, other: &Self) -> f64 {
        assert_eq!(self.extents, other.extents, "agreement needs equal extents");
        let same = self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| (**a >= 0.5) == (**b >= 0.5))
            .count();
        same as f64 / self.data.len() as f64
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            self.extents.to_vec(),
            self.data.iter().map(|&v| T::c(v as f64)).collect(),
        )
        .unwrap()
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 {
            return Err(shape_err(format!(
                "volume tensor must be [D, H, W], got {s:?}"
            )));
        }
        Self::new(
            [s[0], s[1], s[2]],
            t.data().iter().map(|v| v.to_f64_lossy() as f32).collect(),
        )
    }
}

/// Stacks volumes of equal extents into a `[B, D, H, W]` tensor.
pub fn batch_tensor<T: Scalar>(volumes: &[&Volume]) -> Result<Tensor<T>> {
    let first = volumes
        .first()
        .ok_or_else(|| shape_err("empty volume batch"))?
        .extents;
    let mut data = Vec::with_capacity(volumes.len() * first.iter().product::<usize>());
    for v in volumes {
        if v.extents != first {
            return Err(shape_err(format!(
                "mixed extents {first:?} and {:?}",
                v.extents
            )));
        }
        data.extend(v.data.iter().map(|&x| T::c(x as f64)));
    }
    Tensor::new([volumes.len(), first[0], first[1], first[2]], data)
}

fn rotation_matrix(angles: [f64; 3]) -> [[f64; 3]; 3] {
    let r = AffineParams3::<f64>::rotation_z(angles[0])
        .compose(&AffineParams3::rotation_y(angles[1]))
        .compose(&AffineParams3::rotation_x(angles[2]));
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = r.linear(i, j);
        }
    }
    m
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

/// Rotation drawn uniformly from SO(3) via a normalized Gaussian quaternion.
pub fn uniform_rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let mut q = [0.0f64; 4];
    loop {
        for v in q.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-9 {
            q.iter_mut().for_each(|v| *v /= n);
            break;
        }
    }
    let [w, a, b, c] = q;
    [
        [
            1.0 - 2.0 * (b * b + c * c),
            2.0 * (a * b - w * c),
            2.0 * (a * c + w * b),
        ],
        [
            2.0 * (a * b + w * c),
            1.0 - 2.0 * (a * a + c * c),
            2.0 * (b * c - w * a),
        ],
        [
            2.0 * (a * c - w * b),
            2.0 * (b * c + w * a),
            1.0 - 2.0 * (a * a + b * b),
        ],
    ]
}

fn mark_line(v: &mut Volume, a: [f64; 3], b: [f64; 3]) {
    let delta = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let steps = delta
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()))
        .ceil()
        .max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let p = [0, 1, 2].map(|k| (a[k] + t * delta[k]).round());
        if p.iter()
            .zip(v.extents)
            .all(|(&c, n)| c >= 0.0 && c < n as f64)
        {
            v.set(p[0] as usize, p[1] as usize, p[2] as usize, 1.0);
        }
    }
}

/// Wire-frame cube with side [`NECKER_SIDE`] under `rotation`, centered in
/// a 40³ grid, its edges rasterized by line stepping.
pub fn necker_with_rotation(rotation: &[[f64; 3]; 3]) -> Volume {
    necker_cube(NECKER_EXTENT, NECKER_SIDE, rotation)
}

pub fn necker_cube(n: usize, side: f64, rotation: &[[f64; 3]; 3]) -> Volume {
    let center = (n / 2) as f64;
    let h = side / 2.0;
    let corner = |i: usize| {
        let local = [0, 1, 2].map(|k| if i >> k & 1 == 1 { h } else { -h });
        mat_vec(rotation, local).map(|c| c + center)
    };
    let mut v = Volume::zeros([n; 3]);
    for i in 0..8usize {
        for k in 0..3 {
            let j = i | 1 << k;
            if j != i {
                mark_line(&mut v, corner(i), corner(j));
            }
        }
    }
    v
}

pub fn gen_necker(seed: u64) -> Volume {
    necker_with_rotation(&uniform_rotation(&mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Necker cube scaled to an `extent³` grid.
pub fn gen_necker_at(extent: usize, seed: u64) -> Volume {
    let side = NECKER_SIDE * extent as f64 / NECKER_EXTENT as f64;
    necker_cube(
        extent,
        side,
        &uniform_rotation(&mut ChaCha8Rng::seed_from_u64(seed)),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    Cube,
    Sphere,
    Pyramid,
    Cylinder,
    Capsule,
    Ellipsoid,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 6] = [
        Self::Cube,
        Self::Sphere,
        Self::Pyramid,
        Self::Cylinder,
        Self::Capsule,
        Self::Ellipsoid,
    ];

    pub fn label(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).unwrap()
    }

    /// Inside test for a point relative to the grid center, at the
    /// canonical size of a 30³ grid.
    fn contains(self, [z, y, x]: [f64; 3]) -> bool {
        match self {
            Self::Cube => z.abs().max(y.abs()).max(x.abs()) <= 6.0,
            Self::Sphere => z * z + y * y + x * x <= 64.0,
            Self::Pyramid => {
                let half = 6.0 * (6.0 - z) / 12.0;
                z.abs() <= 6.0 && y.abs() <= half && x.abs() <= half
            }
            Self::Cylinder => z.abs() <= 6.0 && y * y + x * x <= 36.0,
            Self::Capsule => {
                let dz = (z.abs() - 4.0).max(0.0);
                dz * dz + y * y + x * x <= 25.0
            }
            Self::Ellipsoid => (z / 5.0).powi(2) + (y / 7.0).powi(2) + (x / 10.0).powi(2) <= 1.0,
        }
    }
}

/// Rigid augmentation ranges. Translations are drawn per axis uniformly in
/// `±translation/2` voxels and rotation angles about each axis uniformly in
/// `±rotation` radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub translation: [f64; 3],
    pub rotation: f64,
    pub binarize: bool,
    pub seed: u64,
}

impl AugmentSpec {
    pub fn none() -> Self {
        Self {
            translation: [0.0; 3],
            rotation: 0.0,
            binarize: true,
            seed: 0,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    /// Independent seed for the `index`-th item of a stream.
    pub fn for_item(self, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        self.with_seed(rng.gen())
    }

    pub fn sample(&self) -> RigidTransform {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let angles = [0; 3].map(|_| self.rotation * (2.0 * rng.gen::<f64>() - 1.0));
        let shift = self.translation.map(|r| r * (rng.gen::<f64>() - 0.5));
        RigidTransform { angles, shift }
    }
}

/// Rotation about the grid center by Euler angles (about z, y, x in
/// application order x, y, z) followed by a shift in voxels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub angles: [f64; 3],
    pub shift: [f64; 3],
}

impl RigidTransform {
    /// Sampler parameters mapping output coordinates to source coordinates.
    pub fn sampler_params(&self, extents: [usize; 3]) -> AffineParams3<f64> {
        let r = rotation_matrix(self.angles);
        let t = [0, 1, 2].map(|k| {
            if extents[k] > 1 {
                2.0 * self.shift[k] / (extents[k] - 1) as f64
            } else {
                0.0
            }
        });
        let mut p = [0.0; 12];
        for i in 0..3 {
            for j in 0..3 {
                p[i * 3 + j] = r[j][i];
            }
            p[9 + i] = -(0..3).map(|j| r[j][i] * t[j]).sum::<f64>();
        }
        AffineParams3(p)
    }
}

/// Applies `t` through the volumetric sampler, thresholding at one half when
/// `binarize` is set.
pub fn transform_volume(v: &Volume, t: &RigidTransform, binarize: bool) -> Volume {
    let e = v.extents;
    let x = Tensor::<f64>::new(
        [1, e[0], e[1], e[2]],
        v.data.iter().map(|&a| a as f64).collect(),
    )
    .unwrap();
    let out =
        resample_volume(&x, &t.sampler_params(e), e).expect("resample of a well-formed volume");
    let vol = Volume::new(e, out.data().iter().map(|&a| a as f32).collect()).unwrap();
    if binarize {
        vol.binarized()
    } else {
        vol
    }
}

pub fn augment(v: &Volume, aug: &AugmentSpec) -> Volume {
    transform_volume(v, &aug.sample(), aug.binarize)
}

/// Solid primitive voxelized at the canonical size scaled to `extent³`,
/// then augmented.
pub fn gen_primitive_at(kind: PrimitiveKind, extent: usize, aug: &AugmentSpec) -> Volume {
    let scale = PRIMITIVE_EXTENT as f64 / extent as f64;
    let c = (extent as f64 - 1.0) / 2.0;
    let v = Volume::from_fn([extent; 3], |z, y, x| {
        let p = [z, y, x].map(|i| (i as f64 - c) * scale);
        if kind.contains(p) {
            1.0
        } else {
            0.0
        }
    });
    if *aug == AugmentSpec::none().with_seed(aug.seed) {
        v
    } else {
        augment(&v, aug)
    }
}

pub fn gen_primitive(kind: PrimitiveKind, aug: &AugmentSpec) -> Volume {
    gen_primitive_at(kind, PRIMITIVE_EXTENT, aug)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    #[test]
    fn axis_aligned_necker_matches_brute_force() {
        let v = necker_with_rotation(&IDENTITY);
        let (lo, hi) = (15usize, 25usize);
        let mut expected = Volume::zeros([40; 3]);
        let mut count = 0;
        for z in 0..40 {
            for y in 0..40 {
                for x in 0..40 {
                    let inside = [z, y, x].iter().all(|&c| (lo..=hi).contains(&c));
                    let on_faces = [z, y, x].iter().filter(|&&c| c == lo || c == hi).count();
                    if inside && on_faces >= 2 {
                        expected.set(z, y, x, 1.0);
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(count, 12 * 9 + 8);
        assert_eq!(v, expected);
    }

    #[test]
    fn necker_stays_in_the_bounding_sphere() {
        for seed in 0..20 {
            let v = gen_necker(seed);
            assert!(v.occupied() >= 80);
            let limit = NECKER_SIDE * 3f64.sqrt() / 2.0 + 3f64.sqrt() / 2.0;
            for z in 0..40 {
                for y in 0..40 {
                    for x in 0..40 {
                        if v.get(z, y, x) > 0.0 {
                            let d = [z, y, x]
                                .iter()
                                .map(|&c| (c as f64 - 20.0).powi(2))
                                .sum::<f64>()
                                .sqrt();
                            assert!(d <= limit, "{d}");
                        }
                    }
                }
            }
            assert!(v.data().iter().all(|&a| a == 0.0 || a == 1.0));
        }
        assert_eq!(gen_necker(3), gen_necker(3));
        assert_ne!(gen_necker(3), gen_necker(4));
    }

    #[test]
    fn uniform_rotations_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let r = uniform_rotation(&mut rng);
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                    assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sphere_volume_matches_analytic() {
        let v = gen_primitive(PrimitiveKind::Sphere, &AugmentSpec::none());
        let exact = 4.0 / 3.0 * PI * 512.0;
        assert!(
            (v.occupied() as f64 - exact).abs() / exact < 0.02,
            "{}",
            v.occupied()
        );
    }

    #[test]
    fn cube_is_exact() {
        assert_eq!(
            gen_primitive(PrimitiveKind::Cube, &AugmentSpec::none()).occupied(),
            12 * 12 * 12
        );
    }

    #[test]
    fn ellipsoid_is_symmetric_under_half_turn() {
        let v = gen_primitive(PrimitiveKind::Ellipsoid, &AugmentSpec::none());
        let t = RigidTransform {
            angles: [PI, 0.0, 0.0],
            shift: [0.0; 3],
        };
        assert!(transform_volume(&v, &t, true).agreement(&v) >= 0.99);
    }

    #[test]
    fn every_primitive_fits_and_differs() {
        let vols: Vec<_> = PrimitiveKind::ALL
            .iter()
            .map(|&k| gen_primitive(k, &AugmentSpec::none()))
            .collect();
        for (i, a) in vols.iter().enumerate() {
            assert!(a.occupied() > 200);
            for b in &vols[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert_eq!(PrimitiveKind::Capsule.label(), 4);
    }

    #[test]
    fn zero_ranges_leave_volumes_unchanged() {
        let v = gen_primitive(PrimitiveKind::Pyramid, &AugmentSpec::none());
        assert_eq!(augment(&v, &AugmentSpec::none().with_seed(9)), v);
    }

    #[test]
    fn integer_translation_is_an_index_shift() {
        let v = gen_primitive(PrimitiveKind::Capsule, &AugmentSpec::none());
        let t = RigidTransform {
            angles: [0.0; 3],
            shift: [2.0, -3.0, 1.0],
        };
        let moved = transform_volume(&v, &t, true);
        let oracle = Volume::from_fn([30; 3], |z, y, x| {
            let src = [z as i64 - 2, y as i64 + 3, x as i64 - 1];
            if src.iter().all(|&c| (0..30).contains(&c)) {
                v.get(src[0] as usize, src[1] as usize, src[2] as usize)
            } else {
                0.0
            }
        });
        assert!(moved.agreement(&oracle) >= 0.99);
    }

    #[test]
    fn augmentation_roughly_conserves_mass() {
        let aug = AugmentSpec {
            translation: [6.0; 3],
            rotation: PI,
            binarize: true,
            seed: 0,
        };
        for kind in [PrimitiveKind::Cube, PrimitiveKind::Cylinder] {
            let base = gen_primitive(kind, &AugmentSpec::none()).occupied() as f64;
            for seed in 0..1000 {
                let m = augment(
                    &gen_primitive(kind, &AugmentSpec::none()),
                    &aug.with_seed(seed),
                )
                .occupied() as f64;
                assert!(
                    (m - base).abs() / base <= 0.2,
                    "{kind:?} seed {seed}: {m} vs {base}"
                );
            }
        }
    }

    #[test]
    fn soft_augmentation_keeps_interpolated_values() {
        let v = gen_primitive(PrimitiveKind::Sphere, &AugmentSpec::none());
        let t = RigidTransform {
            angles: [0.3, 0.0, 0.0],
            shift: [0.5, 0.0, 0.0],
        };
        let soft = transform_volume(&v, &t, false);
        assert!(soft.data().iter().any(|&a| a > 0.0 && a < 1.0));
        assert!(transform_volume(&v, &t, true)
            .data()
            .iter()
            .all(|&a| a == 0.0 || a == 1.0));
    }

    #[test]
    fn item_seeds_are_distinct_and_stable() {
        let a = AugmentSpec::none().with_seed(5);
        assert_eq!(a.for_item(3), a.for_item(3));
        assert_ne!(a.for_item(3).seed, a.for_item(4).seed);
    }

    #[test]
    fn batch_tensor_stacks() {
        let a = Volume::from_fn([2, 2, 2], |z, _, _| z as f32);
        let b = Volume::zeros([2, 2, 2]);
        let t = batch_tensor::<f64>(&[&a, &b]).unwrap();
        assert_eq!(t.shape(), &[2, 2, 2, 2]);
        assert_eq!(Volume::from_tensor(&t.row(0).unwrap()).unwrap(), a);
        assert!(batch_tensor::<f64>(&[&a, &Volume::zeros([3, 2, 2])]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn generators_are_pure_and_binary(seed in any::<u64>(), k in 0usize..6) {
            let aug = AugmentSpec { translation: [4.0; 3], rotation: 1.0, binarize: true, seed };
            let a = gen_primitive_at(PrimitiveKind::ALL[k], 12, &aug);
            prop_assert_eq!(&a, &gen_primitive_at(PrimitiveKind::ALL[k], 12, &aug));
            prop_assert!(a.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }
}
