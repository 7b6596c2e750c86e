//! Input variation along the channel axis: repeat, random augmentation sets,
//! modality grouping, input masking, and ordered compositions of these.
//!
//! Every operation takes `(batch, channels, width)` tensors and an explicit
//! rng, so a pipeline is a pure function of its seed.

use std::ops::Range;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{cat_channels, Element, Tensor};

/// One waveform transform of an augmentation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Transform {
    Identity,
    /// Additive Gaussian noise.
    Jitter { sigma: f64 },
    /// Per-channel gain drawn from `[1 - range, 1 + range]`.
    Scale { range: f64 },
    /// Per-channel offset drawn from `[-range, range]`.
    Shift { range: f64 },
}

impl Transform {
    pub fn apply<T: Element>(&self, x: &Tensor<T>, rng: &mut Rng) -> Result<Tensor<T>> {
        match *self {
            Transform::Identity => Ok(x.clone()),
            Transform::Jitter { sigma } => jitter(x, sigma, rng),
            Transform::Scale { range } => scale(x, range, rng),
            Transform::Shift { range } => shift(x, range, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSet {
    pub transforms: Vec<Transform>,
}

impl AugmentationSet {
    pub fn new(transforms: Vec<Transform>) -> Self {
        Self { transforms }
    }

    /// Weak jitter, strong jitter, amplitude scaling, amplitude shift.
    pub fn standard() -> Self {
        Self::new(vec![
            Transform::Jitter { sigma: 0.05 },
            Transform::Jitter { sigma: 0.2 },
            Transform::Scale { range: 0.2 },
            Transform::Shift { range: 0.2 },
        ])
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }
}

impl Default for AugmentationSet {
    fn default() -> Self {
        Self::standard()
    }
}

fn check_magnitude(op: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::invalid(format!("{op}: magnitude must be finite and non-negative, got {v}")));
    }
    Ok(())
}

pub fn jitter<T: Element>(x: &Tensor<T>, sigma: f64, rng: &mut Rng) -> Result<Tensor<T>> {
    check_magnitude("jitter", sigma)?;
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(format!("jitter: {e}")))?;
    let mut out = x.clone();
    for v in out.data_mut() {
        *v += T::from_f64(normal.sample(rng));
    }
    Ok(out)
}

fn per_channel<T: Element>(x: &Tensor<T>, mut f: impl FnMut(&mut [T])) -> Result<Tensor<T>> {
    let (_, _, w) = x.dims3("augmentation")?;
    let mut out = x.clone();
    if w > 0 {
        out.data_mut().chunks_exact_mut(w).for_each(&mut f);
    }
    Ok(out)
}

pub fn scale<T: Element>(x: &Tensor<T>, range: f64, rng: &mut Rng) -> Result<Tensor<T>> {
    check_magnitude("scale", range)?;
    if range >= 1.0 {
        return Err(Error::invalid(format!("scale: range must be below 1, got {range}")));
    }
    if range == 0.0 {
        return Ok(x.clone());
    }
    per_channel(x, |row| {
        let g = T::from_f64(rng.random_range(1.0 - range..=1.0 + range));
        row.iter_mut().for_each(|v| *v = *v * g);
    })
}

pub fn shift<T: Element>(x: &Tensor<T>, range: f64, rng: &mut Rng) -> Result<Tensor<T>> {
    check_magnitude("shift", range)?;
    if range == 0.0 {
        return Ok(x.clone());
    }
    per_channel(x, |row| {
        let s = T::from_f64(rng.random_range(-range..=range));
        row.iter_mut().for_each(|v| *v += s);
    })
}

/// `N` channel-wise copies of `x`.
pub fn repeat_rn<T: Element>(x: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
    if n < 1 {
        return Err(Error::invalid("repeat: N must be at least 1"));
    }
    x.dims3("repeat")?;
    if n == 1 {
        return Ok(x.clone());
    }
    cat_channels(&vec![x; n])
}

/// Indices of `n` distinct transforms in draw order.
pub fn draw_transforms(set_len: usize, n: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if n < 1 || set_len < n {
        return Err(Error::invalid(format!(
            "augment: cannot draw {n} distinct transforms from a set of {set_len}"
        )));
    }
    Ok(sample(rng, set_len, n).into_vec())
}

/// Concatenation of `n` distinct transforms of `x`, drawn without replacement.
pub fn augment_an<T: Element>(x: &Tensor<T>, set: &AugmentationSet, n: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    let picks = draw_transforms(set.len(), n, rng)?;
    let parts = picks
        .iter()
        .map(|&i| set.transforms[i].apply(x, rng))
        .collect::<Result<Vec<_>>>()?;
    cat_channels(&parts.iter().collect::<Vec<_>>())
}

/// Boolean `(batch, N)` matrix; `true` keeps a group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTensor {
    batch: usize,
    n: usize,
    bits: Vec<bool>,
}

impl MaskTensor {
    pub fn new(batch: usize, n: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != batch * n {
            return Err(Error::InvalidShape {
                op: "mask",
                detail: format!("{} bits for a {batch}x{n} mask", bits.len()),
            });
        }
        Ok(Self { batch, n, bits })
    }

    pub fn all_true(batch: usize, n: usize) -> Self {
        Self {
            batch,
            n,
            bits: vec![true; batch * n],
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, group: usize) -> bool {
        self.bits[row * self.n + group]
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.bits[row * self.n..(row + 1) * self.n]
    }

    pub fn row_sum(&self, row: usize) -> usize {
        self.row(row).iter().filter(|&&b| b).count()
    }

    /// Number of rows that keep each group.
    pub fn column_sums(&self) -> Vec<usize> {
        (0..self.n)
            .map(|g| (0..self.batch).filter(|&i| self.get(i, g)).count())
            .collect()
    }

    /// Mask over `n * repeats` groups after the masked tensor is repeated
    /// `repeats` more times: copy `r` of group `g` is group `r * n + g`.
    pub fn tile(&self, repeats: usize) -> Self {
        let n = self.n * repeats;
        let mut bits = Vec::with_capacity(self.batch * n);
        for i in 0..self.batch {
            for _ in 0..repeats {
                bits.extend_from_slice(self.row(i));
            }
        }
        Self { batch: self.batch, n, bits }
    }

    /// Mask over `n * inner` groups where each of this mask's groups spans
    /// `inner` consecutive groups.
    pub fn widen(&self, inner: usize) -> Self {
        let n = self.n * inner;
        let mut bits = Vec::with_capacity(self.batch * n);
        for &b in &self.bits {
            bits.extend(std::iter::repeat_n(b, inner));
        }
        Self { batch: self.batch, n, bits }
    }

    /// `(batch, N)` tensor of zeros and ones.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::new(
            vec![self.batch, self.n],
            self.bits.iter().map(|&b| if b { T::one() } else { T::zero() }).collect(),
        )
        .expect("mask shape")
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut bits = Vec::with_capacity(rows.len() * self.n);
        for &r in rows {
            bits.extend_from_slice(self.row(r));
        }
        Self {
            batch: rows.len(),
            n: self.n,
            bits,
        }
    }
}

/// Drops exactly one group per row. Dropped groups are dealt in shuffled
/// rounds of all `N` groups, so column counts differ by at most one.
pub fn generate_mask(batch: usize, n: usize, rng: &mut Rng) -> Result<MaskTensor> {
    if n < 2 {
        return Err(Error::invalid("mask: N must be at least 2"));
    }
    let mut drops = Vec::with_capacity(batch + n);
    while drops.len() < batch {
        let mut round: Vec<usize> = (0..n).collect();
        round.shuffle(rng);
        drops.extend(round);
    }
    drops.truncate(batch);
    drops.shuffle(rng);
    let mut bits = vec![true; batch * n];
    for (i, &d) in drops.iter().enumerate() {
        bits[i * n + d] = false;
    }
    MaskTensor::new(batch, n, bits)
}

/// Zeroes channel block `g` of instance `i` wherever `mask[i, g]` is false.
pub fn mask_mn<T: Element>(x: &Tensor<T>, mask: &MaskTensor) -> Result<Tensor<T>> {
    let (b, c, w) = x.dims3("mask")?;
    if b != mask.batch || mask.n == 0 || c % mask.n != 0 {
        return Err(Error::ShapeMismatch {
            op: "mask",
            left: x.shape().to_vec(),
            right: vec![mask.batch, mask.n],
        });
    }
    let block = c / mask.n * w;
    let mut out = x.clone();
    for (i, inst) in out.data_mut().chunks_exact_mut(c * w).enumerate() {
        for (g, chunk) in inst.chunks_exact_mut(block).enumerate() {
            if !mask.get(i, g) {
                chunk.iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modality {
    pub name: String,
    pub channels: Range<usize>,
}

/// Named channel ranges of a sensor input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityLayout {
    pub groups: Vec<Modality>,
    /// Channels per group after replication.
    pub uniform_width: usize,
}

impl ModalityLayout {
    /// Ranges must be disjoint, contiguous from channel 0, and each width
    /// must divide the widest one so narrow modalities can be replicated.
    pub fn new(groups: Vec<(String, Range<usize>)>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::invalid("modality layout has no groups"));
        }
        let mut sorted: Vec<&Range<usize>> = groups.iter().map(|(_, r)| r).collect();
        sorted.sort_by_key(|r| r.start);
        let mut next = 0;
        for r in &sorted {
            if r.start >= r.end {
                return Err(Error::invalid(format!("modality range {r:?} is empty")));
            }
            if r.start < next {
                return Err(Error::invalid(format!("modality range {r:?} overlaps another")));
            }
            if r.start > next {
                return Err(Error::invalid(format!("channels {next}..{} belong to no modality", r.start)));
            }
            next = r.end;
        }
        let uniform_width = groups.iter().map(|(_, r)| r.len()).max().unwrap_or(0);
        for (name, r) in &groups {
            if uniform_width % r.len() != 0 {
                return Err(Error::invalid(format!(
                    "modality {name} has {} channels, which cannot be replicated to {uniform_width}",
                    r.len()
                )));
            }
        }
        Ok(Self {
            groups: groups
                .into_iter()
                .map(|(name, channels)| Modality { name, channels })
                .collect(),
            uniform_width,
        })
    }

    /// One modality spanning all channels.
    pub fn single(channels: usize) -> Self {
        Self::new(vec![("all".into(), 0..channels)]).expect("single modality")
    }

    /// Consecutive triaxial sensors named `names`.
    pub fn triaxial(names: &[&str]) -> Self {
        Self::new(
            names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.to_string(), 3 * i..3 * i + 3))
                .collect(),
        )
        .expect("triaxial layout")
    }

    /// Total, body and gyroscope triaxial signals.
    pub fn uci_har() -> Self {
        Self::triaxial(&["total_acc", "body_acc", "gyro"])
    }

    /// PAMAP2 without orientation, arranged as heart rate (1), the three
    /// IMU temperatures (3), then accelerometer x2, gyroscope and
    /// magnetometer triplets of the hand, chest and ankle IMUs (40 channels).
    pub fn pamap2() -> Self {
        let mut groups = vec![("heart_rate".to_string(), 0..1), ("temperature".to_string(), 1..4)];
        let mut c = 4;
        for imu in ["hand", "chest", "ankle"] {
            for sensor in ["acc16", "acc6", "gyro", "mag"] {
                groups.push((format!("{imu}_{sensor}"), c..c + 3));
                c += 3;
            }
        }
        Self::new(groups).expect("pamap2 layout")
    }

    pub fn channels(&self) -> usize {
        self.groups.iter().map(|g| g.channels.len()).sum()
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Source channel of every output channel, in output order.
    pub fn channel_map(&self) -> Vec<usize> {
        let mut map = Vec::with_capacity(self.groups.len() * self.uniform_width);
        for g in &self.groups {
            let width = g.channels.len();
            for j in 0..self.uniform_width {
                map.push(g.channels.start + j % width);
            }
        }
        map
    }
}

/// Reorders and replicates channels so every modality is one equal-width
/// group; returns the tensor and the number of groups.
pub fn modality_group<T: Element>(x: &Tensor<T>, layout: &ModalityLayout) -> Result<(Tensor<T>, usize)> {
    let (b, c, w) = x.dims3("modality")?;
    if c != layout.channels() {
        return Err(Error::ShapeMismatch {
            op: "modality",
            left: x.shape().to_vec(),
            right: vec![b, layout.channels(), w],
        });
    }
    let map = layout.channel_map();
    let mut data = Vec::with_capacity(b * map.len() * w);
    for inst in x.data().chunks_exact(c * w) {
        for &src in &map {
            data.extend_from_slice(&inst[src * w..(src + 1) * w]);
        }
    }
    Ok((Tensor::new(vec![b, map.len(), w], data)?, layout.group_count()))
}

/// Axis permutation and sign flips applied to one triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rotation {
    pub perm: [usize; 3],
    pub flip: [bool; 3],
}

const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

impl Rotation {
    pub const COUNT: usize = 48;

    pub fn identity() -> Self {
        Self::from_index(0)
    }

    pub fn from_index(i: usize) -> Self {
        let i = i % Self::COUNT;
        let bits = i % 8;
        Self {
            perm: PERMS[i / 8],
            flip: [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0],
        }
    }

    pub fn index(&self) -> usize {
        let p = PERMS.iter().position(|p| *p == self.perm).expect("valid permutation");
        p * 8 + self.flip.iter().enumerate().map(|(j, &f)| (f as usize) << j).sum::<usize>()
    }
}

/// Applies `rotations[i * triplets + t]` to triplet `t` of instance `i`.
pub fn rotate_with<T: Element>(x: &Tensor<T>, rotations: &[Rotation]) -> Result<Tensor<T>> {
    let (b, c, w) = x.dims3("rotation")?;
    if c % 3 != 0 {
        return Err(Error::invalid(format!("rotation needs 3-axis triplets, got {c} channels")));
    }
    let triplets = c / 3;
    if rotations.len() != b * triplets {
        return Err(Error::invalid(format!(
            "rotation: {} rotations for {b} instances of {triplets} triplets",
            rotations.len()
        )));
    }
    let mut out = x.clone();
    let src = x.data();
    let dst = out.data_mut();
    for i in 0..b {
        for t in 0..triplets {
            let rot = rotations[i * triplets + t];
            for axis in 0..3 {
                let from = ((i * c) + 3 * t + rot.perm[axis]) * w;
                let to = ((i * c) + 3 * t + axis) * w;
                let sign = if rot.flip[axis] { -T::one() } else { T::one() };
                for k in 0..w {
                    dst[to + k] = src[from + k] * sign;
                }
            }
        }
    }
    Ok(out)
}

/// Random axis shuffle and sign inversion per triplet, per instance.
pub fn rotation_augment<T: Element>(x: &Tensor<T>, rng: &mut Rng) -> Result<Tensor<T>> {
    let (b, c, _) = x.dims3("rotation")?;
    if c % 3 != 0 {
        return Err(Error::invalid(format!("rotation needs 3-axis triplets, got {c} channels")));
    }
    let rotations: Vec<Rotation> = (0..b * c / 3)
        .map(|_| Rotation::from_index(rng.random_range(0..Rotation::COUNT)))
        .collect();
    rotate_with(x, &rotations)
}

/// One stage of a variation pipeline. In JSON: `"mod"`, `{"repeat": N}`,
/// `{"augment": N}`, `{"mask": N}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Mod,
    Repeat(usize),
    Augment(usize),
    /// Repeat `N` times, then drop one of the `N` copies per instance.
    Mask(usize),
}

impl Stage {
    fn factor(&self, modality_groups: usize) -> usize {
        match *self {
            Stage::Mod => modality_groups,
            Stage::Repeat(n) | Stage::Augment(n) | Stage::Mask(n) => n,
        }
    }
}

/// A composed pipeline of stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variationer {
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub augmentations: AugmentationSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<ModalityLayout>,
}

#[derive(Debug, Clone)]
pub struct Varied<T> {
    pub x: Tensor<T>,
    /// Group mask over all `N` output groups, present when a mask stage ran.
    pub mask: Option<MaskTensor>,
}

impl Variationer {
    /// Validates stage arithmetic.
    pub fn compose(stages: Vec<Stage>, augmentations: AugmentationSet, layout: Option<ModalityLayout>) -> Result<Self> {
        let v = Self {
            stages,
            augmentations,
            layout,
        };
        v.validate()?;
        Ok(v)
    }

    /// No stages: the input passes through.
    pub fn identity() -> Self {
        Self::repeat(1)
    }

    pub fn repeat(n: usize) -> Self {
        Self {
            stages: if n == 1 { vec![] } else { vec![Stage::Repeat(n)] },
            augmentations: AugmentationSet::standard(),
            layout: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut masks = 0;
        for (i, s) in self.stages.iter().enumerate() {
            match *s {
                Stage::Mod => {
                    if i != 0 {
                        return Err(Error::invalid("mod must be the first stage"));
                    }
                    if self.layout.is_none() {
                        return Err(Error::invalid("mod stage needs a modality layout"));
                    }
                }
                Stage::Repeat(n) if n < 1 => return Err(Error::invalid("repeat: N must be at least 1")),
                Stage::Augment(n) if n < 1 || n > self.augmentations.len() => {
                    return Err(Error::invalid(format!(
                        "augment: N={n} needs between 1 and {} transforms",
                        self.augmentations.len()
                    )))
                }
                Stage::Mask(n) => {
                    if n < 2 {
                        return Err(Error::invalid("mask: N must be at least 2"));
                    }
                    masks += 1;
                }
                _ => {}
            }
        }
        if masks > 1 {
            return Err(Error::invalid("at most one mask stage is supported"));
        }
        Ok(())
    }

    pub fn modality_groups(&self) -> usize {
        self.layout.as_ref().map_or(1, |l| l.group_count())
    }

    /// Total number of channel groups produced: the product of stage factors.
    pub fn total_n(&self) -> usize {
        let m = self.modality_groups();
        self.stages.iter().map(|s| s.factor(m)).product()
    }

    /// Output channels for an input with `channels` channels.
    pub fn output_channels(&self, channels: usize) -> usize {
        let per = match (&self.stages.first(), &self.layout) {
            (Some(Stage::Mod), Some(l)) => l.uniform_width * l.group_count(),
            _ => channels,
        };
        let m = self.modality_groups();
        per * self
            .stages
            .iter()
            .filter(|s| !matches!(s, Stage::Mod))
            .map(|s| s.factor(m))
            .product::<usize>()
    }

    pub fn has_mask(&self) -> bool {
        self.stages.iter().any(|s| matches!(s, Stage::Mask(_)))
    }

    /// Training-time merge weight: with a mask of `N_m` groups inside `N`
    /// total, every instance keeps `N (N_m - 1) / N_m` groups, so the weight
    /// is `N_m / (N (N_m - 1))`. `None` without a mask stage.
    pub fn training_lambda(&self) -> Option<f64> {
        let n_mask = self.stages.iter().find_map(|s| match *s {
            Stage::Mask(n) => Some(n),
            _ => None,
        })?;
        let n = self.total_n() as f64;
        Some(n_mask as f64 / (n * (n_mask as f64 - 1.0)))
    }

    /// Runs the pipeline. Outside training, augmentation stages become
    /// repeats and mask stages become unmasked repeats.
    pub fn apply<T: Element>(&self, x: &Tensor<T>, training: bool, rng: &mut Rng) -> Result<Varied<T>> {
        let mut cur = x.clone();
        let mut groups = 1;
        let mut mask: Option<MaskTensor> = None;
        for s in &self.stages {
            match *s {
                Stage::Mod => {
                    let layout = self.layout.as_ref().ok_or_else(|| Error::invalid("mod stage needs a layout"))?;
                    let (y, g) = modality_group(&cur, layout)?;
                    cur = y;
                    groups *= g;
                    mask = mask.map(|m| m.widen(g));
                }
                Stage::Repeat(n) => {
                    cur = repeat_rn(&cur, n)?;
                    groups *= n;
                    mask = mask.map(|m| m.tile(n));
                }
                Stage::Augment(n) => {
                    cur = if training {
                        augment_an(&cur, &self.augmentations, n, rng)?
                    } else {
                        repeat_rn(&cur, n)?
                    };
                    groups *= n;
                    mask = mask.map(|m| m.tile(n));
                }
                Stage::Mask(n) => {
                    cur = repeat_rn(&cur, n)?;
                    if training {
                        let b = cur.shape()[0];
                        let m = generate_mask(b, n, rng)?;
                        cur = mask_mn(&cur, &m)?;
                        mask = Some(m.widen(groups));
                    }
                    groups *= n;
                }
            }
        }
        Ok(Varied { x: cur, mask })
    }
}

impl Default for Variationer {
    fn default() -> Self {
        Self::identity()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn ramp(shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| i as f64 * 0.5 - 3.0)
    }

    #[test]
    fn repeat_slices_are_source() {
        let x = ramp(&[2, 3, 5]);
        let y = repeat_rn(&x, 4).unwrap();
        assert_eq!(y.shape(), &[2, 12, 5]);
        for g in 0..4 {
            assert_eq!(y.channel_slice(3 * g, 3 * g + 3).unwrap(), x);
        }
        assert_eq!(repeat_rn(&x, 1).unwrap(), x);
        assert!(repeat_rn(&x, 0).is_err());
    }

    #[test]
    fn identity_set_equals_repeat() {
        let x = ramp(&[2, 3, 5]);
        let set = AugmentationSet::new(vec![Transform::Identity; 4]);
        let mut rng = stream(1, &[0]);
        assert_eq!(augment_an(&x, &set, 4, &mut rng).unwrap(), repeat_rn(&x, 4).unwrap());
        assert!(augment_an(&x, &set, 5, &mut rng).is_err());
    }

    #[test]
    fn mask_row_zeroes_block() {
        let x = ramp(&[1, 8, 2]);
        let m = MaskTensor::new(1, 4, vec![true, true, true, false]).unwrap();
        let y = mask_mn(&x, &m).unwrap();
        assert!(y.channel_slice(6, 8).unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(y.channel_slice(0, 6).unwrap(), x.channel_slice(0, 6).unwrap());
        assert_eq!(mask_mn(&x, &MaskTensor::all_true(1, 4)).unwrap(), x);
    }

    #[test]
    fn balanced_mask_each_group_dropped_once() {
        let m = generate_mask(4, 4, &mut stream(3, &[1])).unwrap();
        assert_eq!(m.column_sums(), vec![3; 4]);
        assert!((0..4).all(|i| m.row_sum(i) == 3));
        assert!(generate_mask(4, 1, &mut stream(3, &[1])).is_err());
    }

    #[test]
    fn uci_and_pamap_layouts() {
        let uci = ModalityLayout::uci_har();
        assert_eq!((uci.channels(), uci.group_count()), (9, 3));
        let x = ramp(&[1, 9, 4]);
        let (y, n) = modality_group(&x, &uci).unwrap();
        assert_eq!((y, n), (x, 3));

        let p = ModalityLayout::pamap2();
        assert_eq!(p.channels(), 40);
        assert_eq!(p.group_count(), 14);
        let (y, n) = modality_group(&ramp(&[2, 40, 4]), &p).unwrap();
        assert_eq!(y.shape(), &[2, 42, 4]);
        assert_eq!(n, 14);
    }

    #[test]
    fn layout_rejects_bad_ranges() {
        assert!(ModalityLayout::new(vec![("a".into(), 0..3), ("b".into(), 2..5)]).is_err());
        assert!(ModalityLayout::new(vec![("a".into(), 0..3), ("b".into(), 3..5)]).is_err());
        assert!(ModalityLayout::new(vec![("a".into(), 1..3)]).is_err());
    }

    #[test]
    fn rotation_index_roundtrip() {
        for i in 0..Rotation::COUNT {
            assert_eq!(Rotation::from_index(i).index(), i);
        }
        let x = ramp(&[2, 6, 3]);
        assert_eq!(rotate_with(&x, &[Rotation::identity(); 4]).unwrap(), x);
    }

    #[test]
    fn stage_json() {
        let s: Vec<Stage> = serde_json::from_str(r#"["mod", {"repeat": 4}, {"mask": 4}]"#).unwrap();
        assert_eq!(s, vec![Stage::Mod, Stage::Repeat(4), Stage::Mask(4)]);
    }

    #[test]
    fn composed_n_is_product() {
        let v = Variationer::compose(vec![Stage::Mod, Stage::Repeat(4)], AugmentationSet::standard(), Some(ModalityLayout::uci_har())).unwrap();
        assert_eq!(v.total_n(), 12);
        assert_eq!(v.output_channels(9), 36);
        let v = Variationer::compose(vec![Stage::Augment(4), Stage::Mask(4)], AugmentationSet::standard(), None).unwrap();
        assert_eq!(v.total_n(), 16);
        assert!((v.training_lambda().unwrap() - 4.0 / (16.0 * 3.0)).abs() < 1e-15);
        assert!(Variationer::compose(vec![Stage::Repeat(2), Stage::Mod], AugmentationSet::standard(), Some(ModalityLayout::uci_har())).is_err());
    }

    #[test]
    fn masked_pipeline_mask_matches_zeroed_blocks() {
        let v = Variationer::compose(vec![Stage::Repeat(2), Stage::Mask(3)], AugmentationSet::standard(), None).unwrap();
        let x = Tensor::<f64>::from_fn(&[5, 3, 4], |i| 1.0 + i as f64);
        let out = v.apply(&x, true, &mut stream(9, &[2])).unwrap();
        let m = out.mask.unwrap();
        assert_eq!((m.batch(), m.n()), (5, 6));
        for i in 0..5 {
            assert_eq!(m.row_sum(i), 4);
            for g in 0..6 {
                let blk = out.x.select_rows(&[i]).channel_slice(3 * g, 3 * g + 3).unwrap();
                let zero = blk.data().iter().all(|&v| v == 0.0);
                assert_eq!(zero, !m.get(i, g));
            }
        }
        let eval = v.apply(&x, false, &mut stream(9, &[2])).unwrap();
        assert!(eval.mask.is_none());
        assert_eq!(eval.x, repeat_rn(&x, 6).unwrap());
    }
}
