//! 2.5D network inputs: 28-channel slabs (7 neighbouring slices from each of
//! the 4 sequences), per-slice histogram equalization, flip/rotation
//! augmentation, and the half-lesion batch sampler.
//!
//! Per-plane preprocessing order is mask → resize → equalize. Slice offsets
//! past the volume ends replicate the edge slice.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{resize_bilinear, MultiSequenceStudy, Plane, Sequence};

/// Slices taken on each side of the centre slice.
pub const HALF_DEPTH: usize = 3;
pub const SLAB_DEPTH: usize = 2 * HALF_DEPTH + 1;
pub const SLAB_CHANNELS: usize = 4 * SLAB_DEPTH;
pub const HISTOGRAM_BINS: usize = 256;
/// Working in-plane resolution of the network input.
pub const DEFAULT_SLAB_SIZE: usize = 256;

/// Channel of `(sequence, offset)`; sequence-major, offsets −3..=3 within.
pub fn channel_index(seq: Sequence, offset: isize) -> usize {
    debug_assert!(offset.unsigned_abs() <= HALF_DEPTH);
    seq.index() * SLAB_DEPTH + (offset + HALF_DEPTH as isize) as usize
}

pub fn channel_source(channel: usize) -> (Sequence, isize) {
    (
        Sequence::ALL[channel / SLAB_DEPTH],
        (channel % SLAB_DEPTH) as isize - HALF_DEPTH as isize,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameIndex {
    pub study_id: String,
    pub z: usize,
}

/// 28 square planes, each `size × size`, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Slab {
    pub size: usize,
    pub data: Vec<f32>,
    pub source: FrameIndex,
}

impl Slab {
    pub fn plane(&self, channel: usize) -> &[f32] {
        let n = self.size * self.size;
        &self.data[channel * n..(channel + 1) * n]
    }
}

/// Histogram equalization over all pixels.
pub fn equalize_slice(plane: &Plane) -> Plane {
    equalize_slice_masked(plane, None)
}

/// Maps each pixel through the empirical CDF of a 256-bin histogram
/// spanning the `[min, max]` of the valid pixels. Pixels outside `valid`
/// neither enter the histogram nor receive a value (they map to 0); a slice
/// with zero range maps to all zeros.
pub fn equalize_slice_masked(plane: &Plane, valid: Option<&[bool]>) -> Plane {
    let is_valid = |i: usize| valid.is_none_or(|v| v[i]);
    let (mut lo, mut hi, mut count) = (f32::INFINITY, f32::NEG_INFINITY, 0usize);
    for (i, &v) in plane.values.iter().enumerate() {
        if is_valid(i) {
            lo = lo.min(v);
            hi = hi.max(v);
            count += 1;
        }
    }
    let mut out = Plane::filled(plane.width, plane.height, 0.0);
    if count == 0 || hi <= lo {
        return out;
    }
    let range = f64::from(hi) - f64::from(lo);
    let bin = |v: f32| (((f64::from(v) - f64::from(lo)) / range * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
    let mut hist = [0usize; HISTOGRAM_BINS];
    for (i, &v) in plane.values.iter().enumerate() {
        if is_valid(i) {
            hist[bin(v)] += 1;
        }
    }
    let mut cdf = [0f32; HISTOGRAM_BINS];
    let mut acc = 0usize;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = (acc as f64 / count as f64) as f32;
    }
    for (i, (o, &v)) in out.values.iter_mut().zip(&plane.values).enumerate() {
        if is_valid(i) {
            *o = cdf[bin(v)];
        }
    }
    out
}

/// One preprocessed plane: masked, resized to `size`, equalized within the
/// (resized) brain.
fn prepare_plane(study: &MultiSequenceStudy, seq: Sequence, z: usize, size: usize) -> Result<Plane> {
    let raw = study.channel(seq).slice_z(z)?;
    let brain = study.brain_mask().slice_z(z)?;
    let masked: Vec<f32> = raw
        .values
        .iter()
        .zip(&brain)
        .map(|(&v, &m)| if m != 0 { v } else { 0.0 })
        .collect();
    let masked = Plane::new(raw.width, raw.height, masked)?;
    let resized = resize_bilinear(&masked, size, size)?;
    let brain_plane = Plane::new(raw.width, raw.height, brain.iter().map(|&m| f32::from(m)).collect())?;
    let valid: Vec<bool> = resize_bilinear(&brain_plane, size, size)?
        .values
        .iter()
        .map(|&m| m >= 0.5)
        .collect();
    Ok(equalize_slice_masked(&resized, Some(&valid)))
}

/// Ground-truth plane at the working size (bilinear then `>= 0.5`).
fn prepare_target(study: &MultiSequenceStudy, z: usize, size: usize) -> Result<Vec<u8>> {
    let dims = study.dims();
    let gt = study.gt_mask().slice_z(z)?;
    if dims.nx == size && dims.ny == size {
        return Ok(gt);
    }
    let p = Plane::new(dims.nx, dims.ny, gt.iter().map(|&m| f32::from(m)).collect())?;
    Ok(resize_bilinear(&p, size, size)?
        .values
        .iter()
        .map(|&v| u8::from(v >= 0.5))
        .collect())
}

fn clamped(z: usize, offset: isize, nz: usize) -> usize {
    (z as isize + offset).clamp(0, nz as isize - 1) as usize
}

pub fn extract_slab(study: &MultiSequenceStudy, z: usize, size: usize) -> Result<Slab> {
    let nz = study.dims().nz;
    if z >= nz {
        return Err(Error::OutOfRange { index: z, len: nz });
    }
    let n = size * size;
    let mut data = vec![0f32; SLAB_CHANNELS * n];
    for ch in 0..SLAB_CHANNELS {
        let (seq, off) = channel_source(ch);
        let plane = prepare_plane(study, seq, clamped(z, off, nz), size)?;
        data[ch * n..(ch + 1) * n].copy_from_slice(&plane.values);
    }
    Ok(Slab {
        size,
        data,
        source: FrameIndex {
            study_id: study.study_id().to_string(),
            z,
        },
    })
}

/// A study with every plane preprocessed once, so slabs become copies.
/// Produces exactly what [`extract_slab`] does.
#[derive(Debug, Clone)]
pub struct PreparedStudy {
    study_id: String,
    size: usize,
    nz: usize,
    /// `planes[seq][z]`, each `size * size`.
    planes: Vec<Vec<Vec<f32>>>,
    targets: Vec<Vec<u8>>,
}

impl PreparedStudy {
    pub fn new(study: &MultiSequenceStudy, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidArgument("slab size must be positive".into()));
        }
        let nz = study.dims().nz;
        let planes = Sequence::ALL
            .iter()
            .map(|&seq| {
                (0..nz)
                    .map(|z| prepare_plane(study, seq, z, size).map(|p| p.values))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let targets = (0..nz)
            .map(|z| prepare_target(study, z, size))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedStudy {
            study_id: study.study_id().to_string(),
            size,
            nz,
            planes,
            targets,
        })
    }

    pub fn study_id(&self) -> &str {
        &self.study_id
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    /// Copies slab `z` into `out` (length `28 * size * size`).
    pub fn write_slab(&self, z: usize, out: &mut [f32]) -> Result<()> {
        if z >= self.nz {
            return Err(Error::OutOfRange { index: z, len: self.nz });
        }
        let n = self.size * self.size;
        for ch in 0..SLAB_CHANNELS {
            let (seq, off) = channel_source(ch);
            out[ch * n..(ch + 1) * n].copy_from_slice(&self.planes[seq.index()][clamped(z, off, self.nz)]);
        }
        Ok(())
    }

    pub fn slab(&self, z: usize) -> Result<Slab> {
        let mut data = vec![0f32; SLAB_CHANNELS * self.size * self.size];
        self.write_slab(z, &mut data)?;
        Ok(Slab {
            size: self.size,
            data,
            source: FrameIndex {
                study_id: self.study_id.clone(),
                z,
            },
        })
    }

    /// Ground-truth plane for frame `z` at the working size.
    pub fn target(&self, z: usize) -> &[u8] {
        &self.targets[z]
    }

    pub fn has_lesion(&self, z: usize) -> bool {
        self.targets[z].iter().any(|&v| v != 0)
    }
}

/// Spatial transforms of a square plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    /// Mirror left-right.
    FlipH,
    /// Mirror top-bottom.
    FlipV,
    /// `k` quarter turns counter-clockwise.
    Rot90(u8),
}

impl Transform {
    /// Source pixel `(x, y)` that lands on destination `(x, y)`.
    #[inline]
    fn source(self, x: usize, y: usize, n: usize) -> (usize, usize) {
        match self {
            Transform::Identity => (x, y),
            Transform::FlipH => (n - 1 - x, y),
            Transform::FlipV => (x, n - 1 - y),
            Transform::Rot90(k) => match k % 4 {
                0 => (x, y),
                1 => (n - 1 - y, x),
                2 => (n - 1 - x, n - 1 - y),
                _ => (y, n - 1 - x),
            },
        }
    }

    pub fn apply<T: Copy>(self, plane: &[T], n: usize, out: &mut [T]) {
        for y in 0..n {
            for x in 0..n {
                let (sx, sy) = self.source(x, y, n);
                out[y * n + x] = plane[sy * n + sx];
            }
        }
    }

    pub fn apply_in_place<T: Copy>(self, plane: &mut [T], n: usize, scratch: &mut Vec<T>) {
        if self == Transform::Identity || self == Transform::Rot90(0) {
            return;
        }
        scratch.clear();
        scratch.extend_from_slice(plane);
        self.apply(scratch, n, plane);
    }

    /// Uniform draw from the 8 flip/rotation symmetries, as rotate-then-flip.
    pub fn random_pair(rng: &mut impl Rng) -> [Transform; 2] {
        let k = rng.random_range(0..4u8);
        let flip = rng.random_bool(0.5);
        [Transform::Rot90(k), if flip { Transform::FlipH } else { Transform::Identity }]
    }
}

/// Applies one transform to all 28 channels and to the ground-truth plane.
pub fn augment(slab: &Slab, gt: &[u8], transform: Transform) -> Result<(Slab, Vec<u8>)> {
    let n = slab.size;
    if gt.len() != n * n || slab.data.len() != SLAB_CHANNELS * n * n {
        return Err(Error::Shape(format!(
            "augment needs square {n}x{n} planes; got {} gt and {} slab values",
            gt.len(),
            slab.data.len()
        )));
    }
    let mut out = slab.clone();
    let mut scratch = Vec::new();
    for ch in out.data.chunks_mut(n * n) {
        transform.apply_in_place(ch, n, &mut scratch);
    }
    let mut gt_out = vec![0u8; n * n];
    transform.apply(gt, n, &mut gt_out);
    Ok((out, gt_out))
}

/// Batch where the first half is drawn uniformly (with replacement) from
/// `lesion_frames` and the second half uniformly from `all_frames`.
pub fn sample_batch_sized<T: Clone>(
    all_frames: &[T],
    lesion_frames: &[T],
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<T>> {
    if lesion_frames.is_empty() {
        return Err(Error::Empty("lesion frames"));
    }
    if all_frames.is_empty() {
        return Err(Error::Empty("frames"));
    }
    let lesion_half = batch_size / 2;
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..lesion_half {
        batch.push(lesion_frames.choose(rng).cloned().expect("nonempty"));
    }
    for _ in lesion_half..batch_size {
        batch.push(all_frames.choose(rng).cloned().expect("nonempty"));
    }
    Ok(batch)
}

pub const BATCH_SIZE: usize = 32;

pub fn sample_batch(all_frames: &[FrameIndex], lesion_frames: &[FrameIndex], rng: &mut impl Rng) -> Result<Vec<FrameIndex>> {
    sample_batch_sized(all_frames, lesion_frames, BATCH_SIZE, rng)
}
