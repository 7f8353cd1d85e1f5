//! Synthetic multi-sequence phantoms with known lesions, lesion-count
//! subgroups, and the stratified train/dev/test split.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::volume::{BinaryMask, Dims, MultiSequenceStudy, Sequence, Spacing, VoxelGrid};

/// Lesion-count subgroup: G1 = 1-3, G2 = 4-10, G3 = more than 10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subgroup {
    G1,
    G2,
    G3,
}

impl Subgroup {
    pub const ALL: [Subgroup; 3] = [Subgroup::G1, Subgroup::G2, Subgroup::G3];

    pub fn name(self) -> &'static str {
        match self {
            Subgroup::G1 => "G1",
            Subgroup::G2 => "G2",
            Subgroup::G3 => "G3",
        }
    }

    pub fn row_label(self) -> &'static str {
        match self {
            Subgroup::G1 => "1 to 3",
            Subgroup::G2 => "4 to 10",
            Subgroup::G3 => ">10",
        }
    }
}

pub fn assign_subgroup(n_lesions: usize) -> Result<Subgroup> {
    match n_lesions {
        0 => Err(Error::NoLesions(0)),
        1..=3 => Ok(Subgroup::G1),
        4..=10 => Ok(Subgroup::G2),
        _ => Ok(Subgroup::G3),
    }
}

/// Intensity model of one sequence inside the brain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub background_mean: f64,
    /// Amplitude of the smooth low-frequency tissue variation.
    pub background_sd: f64,
    /// Lesion intensity relative to `background_mean`.
    pub lesion_contrast: f64,
    pub noise_sd: f64,
}

/// Optional FLAIR hyperintense ring around each lesion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdemaHalo {
    pub width_mm: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LesionCountLaw {
    pub g1: (usize, usize),
    pub g2: (usize, usize),
    pub g3: (usize, usize),
}

impl LesionCountLaw {
    pub fn range(&self, g: Subgroup) -> (usize, usize) {
        match g {
            Subgroup::G1 => self.g1,
            Subgroup::G2 => self.g2,
            Subgroup::G3 => self.g3,
        }
    }
}

impl Default for LesionCountLaw {
    fn default() -> Self {
        LesionCountLaw {
            g1: (1, 3),
            g2: (4, 10),
            g3: (11, 14),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub seed: u64,
    pub dims: Dims,
    pub spacing: Spacing,
    pub lesion_counts: LesionCountLaw,
    pub lesion_radius_mm: (f64, f64),
    /// Channel models in [`Sequence::ALL`] order.
    pub channels: [ChannelModel; 4],
    /// Brain ellipsoid semi-axes as a fraction of the volume extent.
    pub brain_extent: f64,
    pub edema_halo: Option<EdemaHalo>,
    pub max_placement_attempts: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let ch = |mean, contrast| ChannelModel {
            background_mean: mean,
            background_sd: 0.05,
            lesion_contrast: contrast,
            noise_sd: 0.06,
        };
        PhantomConfig {
            seed: 0,
            dims: Dims::new(64, 64, 32),
            spacing: Spacing::isotropic(1.0),
            lesion_counts: LesionCountLaw::default(),
            lesion_radius_mm: (2.5, 5.0),
            channels: [ch(0.45, -0.05), ch(0.45, 0.30), ch(0.50, 0.35), ch(0.40, 0.05)],
            brain_extent: 0.45,
            edema_halo: None,
            max_placement_attempts: 1000,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let (rmin, rmax) = self.lesion_radius_mm;
        if !(rmin > 0.0 && rmax >= rmin && rmax.is_finite()) {
            return bad(format!("lesion radius range {:?} must be positive and ordered", self.lesion_radius_mm));
        }
        if self.dims.is_empty() {
            return bad(format!("dims {:?} must be positive", self.dims));
        }
        if !self.spacing.as_array().iter().all(|s| s.is_finite() && *s > 0.0) {
            return bad(format!("spacing {:?} must be positive", self.spacing));
        }
        if !(self.brain_extent > 0.0 && self.brain_extent <= 0.5) {
            return bad(format!("brain extent {} must lie in (0, 0.5]", self.brain_extent));
        }
        for c in &self.channels {
            let vals = [c.background_mean, c.background_sd, c.lesion_contrast, c.noise_sd];
            if vals.iter().any(|v| !v.is_finite()) || c.background_sd < 0.0 || c.noise_sd < 0.0 {
                return bad(format!("invalid channel model {c:?}"));
            }
        }
        for g in Subgroup::ALL {
            let (lo, hi) = self.lesion_counts.range(g);
            if lo > hi || assign_subgroup(lo).ok() != Some(g) || assign_subgroup(hi).ok() != Some(g) {
                return bad(format!("lesion count range {:?} inconsistent with {}", (lo, hi), g.name()));
            }
        }
        if let Some(h) = self.edema_halo {
            if !(h.width_mm > 0.0 && h.intensity.is_finite()) {
                return bad(format!("invalid edema halo {h:?}"));
            }
        }
        Ok(())
    }

    fn brain_center_mm(&self) -> [f64; 3] {
        let d = self.dims.as_array();
        let s = self.spacing.as_array();
        [0, 1, 2].map(|a| (d[a] as f64 - 1.0) / 2.0 * s[a])
    }

    fn brain_semi_axes_mm(&self) -> [f64; 3] {
        let d = self.dims.as_array();
        let s = self.spacing.as_array();
        [0, 1, 2].map(|a| self.brain_extent * d[a] as f64 * s[a])
    }

    fn voxel_mm(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            x as f64 * self.spacing.sx,
            y as f64 * self.spacing.sy,
            z as f64 * self.spacing.sz,
        ]
    }

    /// Axis-aligned ellipsoid brain.
    pub fn brain_mask(&self) -> Result<BinaryMask> {
        let c = self.brain_center_mm();
        let a = self.brain_semi_axes_mm();
        BinaryMask::from_fn(self.dims, self.spacing, |x, y, z| {
            let p = self.voxel_mm(x, y, z);
            (0..3).map(|i| ((p[i] - c[i]) / a[i]).powi(2)).sum::<f64>() <= 1.0
        })
    }

    fn ramp_width_mm(&self) -> f64 {
        self.spacing.as_array().into_iter().fold(f64::INFINITY, f64::min)
    }

    fn max_spacing_mm(&self) -> f64 {
        self.spacing.as_array().into_iter().fold(0.0, f64::max)
    }
}

/// A spherical lesion centred on a voxel centre (mm coordinates, origin at
/// voxel `(0, 0, 0)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub center_mm: [f64; 3],
    pub radius_mm: f64,
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Voxel index range along one axis covering `center ± reach`.
fn axis_span(center: f64, reach: f64, spacing: f64, n: usize) -> std::ops::RangeInclusive<usize> {
    let lo = ((center - reach) / spacing).floor().max(0.0) as usize;
    let hi = (((center + reach) / spacing).ceil().max(0.0) as usize).min(n - 1);
    lo..=hi
}

fn for_each_voxel_near(config: &PhantomConfig, center: [f64; 3], reach: f64, mut f: impl FnMut(usize, f64)) {
    let d = config.dims;
    let s = config.spacing;
    for z in axis_span(center[2], reach, s.sz, d.nz) {
        for y in axis_span(center[1], reach, s.sy, d.ny) {
            for x in axis_span(center[0], reach, s.sx, d.nx) {
                let r = dist(config.voxel_mm(x, y, z), center);
                if r <= reach {
                    f(d.index(x, y, z), r);
                }
            }
        }
    }
}

/// Random lesions inside `brain`: each sphere plus its ramp lies in the
/// brain, and spheres keep clear of each other so they stay separate
/// components.
pub fn place_lesions(
    config: &PhantomConfig,
    brain: &BinaryMask,
    n_lesions: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Lesion>> {
    if n_lesions < 1 {
        return Err(Error::NoLesions(n_lesions));
    }
    let ramp = config.ramp_width_mm();
    let gap = 2.0 * config.max_spacing_mm();
    let (rmin, rmax) = config.lesion_radius_mm;
    let d = config.dims;
    let mut lesions: Vec<Lesion> = Vec::with_capacity(n_lesions);
    for lesion in 0..n_lesions {
        let mut placed = false;
        for _ in 0..config.max_placement_attempts {
            let radius_mm = if rmax > rmin { rng.random_range(rmin..=rmax) } else { rmin };
            let center_mm = config.voxel_mm(
                rng.random_range(0..d.nx),
                rng.random_range(0..d.ny),
                rng.random_range(0..d.nz),
            );
            if lesions
                .iter()
                .any(|l| dist(l.center_mm, center_mm) <= l.radius_mm + radius_mm + gap)
            {
                continue;
            }
            let reach = radius_mm + ramp;
            // The sphere's ramp must not leave the volume either.
            let inside_volume = (0..3).all(|a| {
                let s = config.spacing.as_array()[a];
                let n = d.as_array()[a] as f64;
                center_mm[a] - reach >= 0.0 && center_mm[a] + reach <= (n - 1.0) * s
            });
            if !inside_volume {
                continue;
            }
            let mut inside = true;
            for_each_voxel_near(config, center_mm, reach, |i, _| inside &= brain.is_set(i));
            if inside {
                lesions.push(Lesion { center_mm, radius_mm });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::LesionPlacement {
                lesion,
                attempts: config.max_placement_attempts,
            });
        }
    }
    Ok(lesions)
}

/// Sum of random plane waves, roughly unit variance.
struct SmoothField {
    waves: Vec<([f64; 3], f64)>,
}

impl SmoothField {
    const WAVES: usize = 3;

    fn new(rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..Self::WAVES)
            .map(|_| {
                let wavelength: f64 = rng.random_range(20.0..60.0);
                let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
                let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / wavelength;
                let dir = [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (dir.map(|c| c * k), phase)
            })
            .collect();
        SmoothField { waves }
    }

    fn at(&self, p: [f64; 3]) -> f64 {
        let norm = (Self::WAVES as f64 / 2.0).sqrt();
        self.waves
            .iter()
            .map(|(k, ph)| (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + ph).cos())
            .sum::<f64>()
            / norm
    }
}

/// Renders the four sequences for a fixed lesion set.
///
/// Inside the brain each channel is `mean + background_sd * smooth field`;
/// lesion voxels (centres within the radius) take `mean + contrast`, with a
/// linear blend back to tissue over one voxel outside the radius. Gaussian
/// noise is added last; everything outside the brain is 0.
pub fn render_study(
    config: &PhantomConfig,
    study_id: &str,
    lesions: &[Lesion],
    rng: &mut ChaCha8Rng,
) -> Result<MultiSequenceStudy> {
    config.validate()?;
    let dims = config.dims;
    let brain = config.brain_mask()?;
    let ramp = config.ramp_width_mm();

    let mut gt = vec![0u8; dims.len()];
    // Lesion blend weight per voxel, and halo membership.
    let mut weight = vec![0f64; dims.len()];
    let mut halo = vec![false; dims.len()];
    for l in lesions {
        for_each_voxel_near(config, l.center_mm, l.radius_mm + ramp, |i, r| {
            let w = if r <= l.radius_mm { 1.0 } else { 1.0 - (r - l.radius_mm) / ramp };
            weight[i] = weight[i].max(w);
            if r <= l.radius_mm {
                gt[i] = 1;
            }
        });
        if let Some(h) = config.edema_halo {
            for_each_voxel_near(config, l.center_mm, l.radius_mm + h.width_mm, |i, r| {
                if r > l.radius_mm {
                    halo[i] = true;
                }
            });
        }
    }

    let channels = Sequence::ALL.map(|seq| -> Result<VoxelGrid> {
        let model = config.channels[seq.index()];
        let field = SmoothField::new(rng);
        let noise = Normal::new(0.0, model.noise_sd.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut values = vec![0f32; dims.len()];
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    let i = dims.index(x, y, z);
                    if !brain.is_set(i) {
                        continue;
                    }
                    let tissue = model.background_mean + model.background_sd * field.at(config.voxel_mm(x, y, z));
                    let lesion = model.background_mean + model.lesion_contrast;
                    let mut v = (1.0 - weight[i]) * tissue + weight[i] * lesion;
                    if seq == Sequence::Flair && halo[i] && gt[i] == 0 {
                        v += config.edema_halo.map_or(0.0, |h| h.intensity);
                    }
                    if model.noise_sd > 0.0 {
                        v += noise.sample(rng);
                    }
                    values[i] = v as f32;
                }
            }
        }
        VoxelGrid::new(dims, config.spacing, values)
    });
    let [a, b, c, d] = channels;
    let gt = BinaryMask::new(dims, config.spacing, gt)?;
    MultiSequenceStudy::new(study_id, [a?, b?, c?, d?], brain, gt)
}

/// Generated study together with the lesions it contains.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub study: MultiSequenceStudy,
    pub lesions: Vec<Lesion>,
}

/// Deterministic in `(config, study_id, n_lesions)`: the random stream is
/// derived from the config seed and the study id.
pub fn generate_phantom(config: &PhantomConfig, study_id: &str, n_lesions: usize) -> Result<Phantom> {
    if n_lesions < 1 {
        return Err(Error::NoLesions(n_lesions));
    }
    config.validate()?;
    let mut rng = seed::rng(config.seed, &format!("study/{study_id}"));
    let brain = config.brain_mask()?;
    let lesions = place_lesions(config, &brain, n_lesions, &mut rng)?;
    let study = render_study(config, study_id, &lesions, &mut rng)?;
    Ok(Phantom { study, lesions })
}

pub fn generate_study(config: &PhantomConfig, study_id: &str, n_lesions: usize) -> Result<MultiSequenceStudy> {
    generate_phantom(config, study_id, n_lesions).map(|p| p.study)
}

/// `n_per_group` (study id, lesion count) pairs per subgroup, counts drawn
/// uniformly from the configured ranges.
pub fn plan_cohort(config: &PhantomConfig, n_per_group: usize) -> Result<Vec<(String, usize, Subgroup)>> {
    config.validate()?;
    let mut rng = seed::rng(config.seed, "cohort");
    let mut plan = Vec::new();
    for g in Subgroup::ALL {
        let (lo, hi) = config.lesion_counts.range(g);
        for i in 0..n_per_group {
            let n = rng.random_range(lo..=hi);
            plan.push((format!("{}_{:03}", g.name().to_lowercase(), i), n, g));
        }
    }
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub study_id: String,
    /// Study directory, relative to the manifest.
    pub path: String,
    pub n_lesions: usize,
    pub subgroup: Subgroup,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CohortManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CohortManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.study_id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate study id {}", e.study_id)));
            }
            if assign_subgroup(e.n_lesions)? != e.subgroup {
                return Err(Error::InvalidArgument(format!(
                    "{} has {} lesions but is labelled {}",
                    e.study_id,
                    e.n_lesions,
                    e.subgroup.name()
                )));
            }
        }
        Ok(())
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == Some(split))
    }

    pub fn count(&self, split: Split) -> usize {
        self.in_split(split).count()
    }
}

pub const DEV_FRACTION: f64 = 1.0 / 21.0;

/// Picks `test_per_group` test cases from each subgroup, then splits the rest
/// train:dev with `dev = max(1, round(remaining * dev_fraction))`.
pub fn stratified_split(
    manifest: &CohortManifest,
    test_per_group: usize,
    dev_fraction: f64,
    seed: u64,
) -> Result<CohortManifest> {
    manifest.validate()?;
    if !(0.0..1.0).contains(&dev_fraction) {
        return Err(Error::InvalidArgument(format!("dev fraction {dev_fraction} outside [0, 1)")));
    }
    let mut rng = seed::rng(seed, "split");
    let mut out = manifest.clone();
    let mut is_test = vec![false; out.entries.len()];
    for g in Subgroup::ALL {
        let mut members: Vec<usize> = (0..out.entries.len())
            .filter(|&i| out.entries[i].subgroup == g)
            .collect();
        if members.len() < test_per_group {
            return Err(Error::SubgroupTooSmall {
                subgroup: g.name().to_string(),
                available: members.len(),
                requested: test_per_group,
            });
        }
        members.shuffle(&mut rng);
        for &i in &members[..test_per_group] {
            is_test[i] = true;
        }
    }
    let mut rest: Vec<usize> = (0..out.entries.len()).filter(|&i| !is_test[i]).collect();
    rest.shuffle(&mut rng);
    let n_dev = if rest.is_empty() {
        0
    } else {
        ((rest.len() as f64 * dev_fraction).round() as usize).max(1).min(rest.len())
    };
    for (i, e) in out.entries.iter_mut().enumerate() {
        if is_test[i] {
            e.split = Some(Split::Test);
        }
    }
    for (k, &i) in rest.iter().enumerate() {
        out.entries[i].split = Some(if k < n_dev { Split::Dev } else { Split::Train });
    }
    Ok(out)
}
