//! File formats: `MSVOL1` volumes, `MSCKPT` checkpoints, sorted-key JSON,
//! and P6 pixmap overlays. All binary data is little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArchConfig, Network};
use crate::train::{AdamState, EpochStats, Moments, RngState, TrainConfig, Trainer};
use crate::volume::{BinaryMask, Dims, MultiSequenceStudy, ProbabilityMap, Sequence, Spacing, VoxelGrid};

pub const VOLUME_MAGIC: &[u8; 6] = b"MSVOL1";
pub const VOLUME_HEADER_LEN: usize = 6 + 3 * 4 + 3 * 8 + 1;
/// Largest voxel count accepted on read.
pub const MAX_VOXELS: usize = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum VolumeDtype {
    F32 = 0,
    Mask = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Grid(VoxelGrid),
    Mask(BinaryMask),
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn volume_header(dims: Dims, spacing: Spacing, dtype: VolumeDtype) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(VOLUME_HEADER_LEN);
    out.extend_from_slice(VOLUME_MAGIC);
    for d in dims.as_array() {
        let d = u32::try_from(d).map_err(|_| Error::InvalidVolume(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for s in spacing.as_array() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.push(dtype as u8);
    Ok(out)
}

pub fn encode_grid(grid: &VoxelGrid) -> Result<Vec<u8>> {
    let mut out = volume_header(grid.dims(), grid.spacing(), VolumeDtype::F32)?;
    out.reserve(grid.values().len() * 4);
    for v in grid.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_mask(mask: &BinaryMask) -> Result<Vec<u8>> {
    let mut out = volume_header(mask.dims(), mask.spacing(), VolumeDtype::Mask)?;
    out.extend_from_slice(mask.values());
    Ok(out)
}

pub fn write_grid(path: impl AsRef<Path>, grid: &VoxelGrid) -> Result<()> {
    write_file(path.as_ref(), &encode_grid(grid)?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    write_file(path.as_ref(), &encode_mask(mask)?)
}

pub fn write_volume(path: impl AsRef<Path>, volume: &Volume) -> Result<()> {
    match volume {
        Volume::Grid(g) => write_grid(path, g),
        Volume::Mask(m) => write_mask(path, m),
    }
}

pub fn decode_volume(bytes: &[u8], path: &Path) -> Result<Volume> {
    let truncated = |detail: String| Error::Truncated {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < VOLUME_MAGIC.len() || &bytes[..6] != VOLUME_MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf() });
    }
    if bytes.len() < VOLUME_HEADER_LEN {
        return Err(truncated(format!("header needs {VOLUME_HEADER_LEN} bytes, file has {}", bytes.len())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let dims = Dims::new(u32_at(6), u32_at(10), u32_at(14));
    let spacing = Spacing::new(f64_at(18), f64_at(26), f64_at(34));
    let dtype = match bytes[42] {
        0 => VolumeDtype::F32,
        1 => VolumeDtype::Mask,
        t => return Err(Error::InvalidVolume(format!("{}: unknown dtype tag {t}", path.display()))),
    };
    let count = dims
        .nx
        .checked_mul(dims.ny)
        .and_then(|v| v.checked_mul(dims.nz))
        .filter(|&n| n <= MAX_VOXELS)
        .ok_or_else(|| Error::InvalidVolume(format!("{}: dims {:?} overflow", path.display(), dims.as_array())))?;
    let width = if dtype == VolumeDtype::F32 { 4 } else { 1 };
    let payload = &bytes[VOLUME_HEADER_LEN..];
    if payload.len() != count * width {
        return Err(truncated(format!("payload has {} bytes, expected {}", payload.len(), count * width)));
    }
    match dtype {
        VolumeDtype::F32 => {
            let values = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Ok(Volume::Grid(VoxelGrid::new(dims, spacing, values)?))
        }
        VolumeDtype::Mask => Ok(Volume::Mask(BinaryMask::new(dims, spacing, payload.to_vec())?)),
    }
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    decode_volume(&read_file(path)?, path)
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    match read_volume(path.as_ref())? {
        Volume::Grid(g) => Ok(g),
        Volume::Mask(_) => Err(Error::InvalidVolume(format!("{}: expected f32 volume, found mask", path.as_ref().display()))),
    }
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    match read_volume(path.as_ref())? {
        Volume::Mask(m) => Ok(m),
        Volume::Grid(_) => Err(Error::InvalidVolume(format!("{}: expected mask, found f32 volume", path.as_ref().display()))),
    }
}

pub fn write_probability_map(path: impl AsRef<Path>, probs: &ProbabilityMap) -> Result<()> {
    write_grid(path, &probs.as_grid())
}

pub fn read_probability_map(path: impl AsRef<Path>) -> Result<ProbabilityMap> {
    ProbabilityMap::from_grid(read_grid(path)?)
}

pub const BRAIN_MASK_FILE: &str = "brain_mask.msvol";
pub const GT_MASK_FILE: &str = "gt_mask.msvol";

pub fn sequence_file(seq: Sequence) -> String {
    format!("{}.msvol", seq.name())
}

/// Writes the four sequences and both masks into `dir`.
pub fn save_study(dir: impl AsRef<Path>, study: &MultiSequenceStudy) -> Result<()> {
    let dir = dir.as_ref();
    for seq in Sequence::ALL {
        write_grid(dir.join(sequence_file(seq)), study.channel(seq))?;
    }
    write_mask(dir.join(BRAIN_MASK_FILE), study.brain_mask())?;
    write_mask(dir.join(GT_MASK_FILE), study.gt_mask())
}

pub fn load_study(dir: impl AsRef<Path>, study_id: &str) -> Result<MultiSequenceStudy> {
    let dir = dir.as_ref();
    let [a, b, c, d] = Sequence::ALL.map(|s| dir.join(sequence_file(s)));
    let channels = [read_grid(a)?, read_grid(b)?, read_grid(c)?, read_grid(d)?];
    MultiSequenceStudy::new(
        study_id,
        channels,
        read_mask(dir.join(BRAIN_MASK_FILE))?,
        read_mask(dir.join(GT_MASK_FILE))?,
    )
}

/// Pretty JSON with object keys sorted, newline-terminated.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    // serde_json's Value map is ordered by key.
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write_file(path.as_ref(), to_json_string(value)?.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(Error::from)
}

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"MSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RngHeader {
    seed: [u8; 32],
    stream: u64,
    #[serde(with = "u128_string")]
    word_pos: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    arch: ArchConfig,
    train: TrainConfig,
    epoch: usize,
    history: Vec<EpochStats>,
    rng: RngHeader,
    adam_step: u64,
    /// Parameter tensors, then one `m` and one `v` block per moment entry.
    tensors: Vec<TensorEntry>,
    moments: Vec<TensorEntry>,
}

/// A training snapshot in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub history: Vec<EpochStats>,
    pub rng: RngState,
    pub adam: AdamState<f32>,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer) -> Self {
        let mut net = trainer.net.clone();
        Checkpoint {
            arch: net.config().clone(),
            train: trainer.config.clone(),
            epoch: trainer.epoch,
            history: trainer.history.clone(),
            rng: RngState::capture(&trainer.rng),
            adam: trainer.adam.clone(),
            tensors: net.export_params(),
        }
    }

    /// Network with these weights; `arch` overrides the stored architecture.
    pub fn network(&self, arch: Option<&ArchConfig>) -> Result<Network<f32>> {
        let mut net = Network::<f32>::uninitialized(arch.unwrap_or(&self.arch))?;
        net.import_params(&mut |name, shape| {
            let (_, s, v) = self
                .tensors
                .iter()
                .find(|t| t.0 == name)
                .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
            if s != shape {
                return Err(Error::Shape(format!("{name}: checkpoint shape {s:?}, model expects {shape:?}")));
            }
            Ok(v.clone())
        })?;
        Ok(net)
    }

    pub fn into_trainer(self) -> Result<Trainer> {
        let net = self.network(None)?;
        let mut trainer = Trainer::new(net, self.train)?;
        let expected = AdamState::for_module(&mut trainer.net);
        if expected.moments.len() != self.adam.moments.len()
            || expected
                .moments
                .iter()
                .zip(&self.adam.moments)
                .any(|(a, b)| a.name != b.name || a.m.len() != b.m.len() || b.v.len() != b.m.len())
        {
            return Err(Error::Shape("optimizer state does not match the network".into()));
        }
        trainer.adam = self.adam;
        trainer.rng = self.rng.restore();
        trainer.epoch = self.epoch;
        trainer.history = self.history;
        Ok(trainer)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let entry = |name: &str, shape: &[usize], len| TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            len,
        };
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            arch: self.arch.clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
            rng: RngHeader {
                seed: self.rng.seed,
                stream: self.rng.stream,
                word_pos: self.rng.word_pos,
            },
            adam_step: self.adam.step,
            tensors: self.tensors.iter().map(|(n, s, v)| entry(n, s, v.len())).collect(),
            moments: self.adam.moments.iter().map(|m| entry(&m.name, &[m.m.len()], m.m.len())).collect(),
        };
        let json = serde_json::to_vec(&serde_json::to_value(&header)?)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |vals: &[f32]| vals.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        for (_, _, v) in &self.tensors {
            put(v);
        }
        for m in &self.adam.moments {
            put(&m.m);
            put(&m.v);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let truncated = |detail: &str| Error::Truncated {
            path: path.to_path_buf(),
            detail: detail.to_string(),
        };
        if bytes.len() < 6 || &bytes[..6] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic { path: path.to_path_buf() });
        }
        if bytes.len() < 18 {
            return Err(truncated("header"));
        }
        let version = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let json_len = u64::from_le_bytes(bytes[10..18].try_into().expect("8 bytes")) as usize;
        let json_end = 18usize.checked_add(json_len).filter(|&e| e <= bytes.len()).ok_or_else(|| truncated("header json"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[18..json_end])?;
        let mut cursor = json_end;
        let mut take = |len: usize| -> Result<Vec<f32>> {
            let end = len
                .checked_mul(4)
                .and_then(|n| cursor.checked_add(n))
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| truncated("tensor payload"))?;
            let v = bytes[cursor..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            cursor = end;
            Ok(v)
        };
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for t in &header.tensors {
            if t.shape.iter().product::<usize>() != t.len {
                return Err(Error::Shape(format!("{}: shape {:?} vs length {}", t.name, t.shape, t.len)));
            }
            tensors.push((t.name.clone(), t.shape.clone(), take(t.len)?));
        }
        let mut moments = Vec::with_capacity(header.moments.len());
        for m in &header.moments {
            let mv = take(m.len)?;
            let vv = take(m.len)?;
            moments.push(Moments {
                name: m.name.clone(),
                m: mv,
                v: vv,
            });
        }
        if cursor != bytes.len() {
            return Err(Error::InvalidArgument(format!("{}: trailing bytes after payload", path.display())));
        }
        Ok(Checkpoint {
            arch: header.arch,
            train: header.train,
            epoch: header.epoch,
            history: header.history,
            rng: RngState {
                seed: header.rng.seed,
                stream: header.rng.stream,
                word_pos: header.rng.word_pos,
            },
            adam: AdamState {
                step: header.adam_step,
                moments,
            },
            tensors,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, trainer: &Trainer) -> Result<()> {
    write_file(path.as_ref(), &Checkpoint::from_trainer(trainer).encode()?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    Checkpoint::decode(&read_file(path)?, path)
}

pub const OVERLAY_THRESHOLD: f32 = 0.1;

/// Jet colormap: blue at 0 through green to red at 1.
pub fn jet(p: f32) -> [u8; 3] {
    let ch = |c: f32| ((1.5 - (4.0 * p - c).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// P6 pixmap of BRAVO slice `z` in gray (scaled to the slice's own range),
/// with voxels at probability ≥ `threshold` painted by [`jet`].
pub fn render_overlay(study: &MultiSequenceStudy, probs: &ProbabilityMap, z: usize, threshold: f32) -> Result<Vec<u8>> {
    probs.check_matches(study.dims(), study.spacing())?;
    let dims = study.dims();
    if z >= dims.nz {
        return Err(Error::OutOfRange { index: z, len: dims.nz });
    }
    let plane = study.channel(Sequence::T1PostBravo).slice_z(z)?;
    let (lo, hi) = plane
        .values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    let off = z * dims.plane_len();
    let mut out = format!("P6\n{} {}\n255\n", dims.nx, dims.ny).into_bytes();
    for (i, &v) in plane.values.iter().enumerate() {
        let p = probs.values()[off + i];
        if p >= threshold {
            out.extend_from_slice(&jet(p));
        } else {
            let g = if range > 0.0 { ((v - lo) / range * 255.0).round() as u8 } else { 0 };
            out.extend_from_slice(&[g, g, g]);
        }
    }
    Ok(out)
}

pub fn export_overlay(
    path: impl AsRef<Path>,
    study: &MultiSequenceStudy,
    probs: &ProbabilityMap,
    z: usize,
    threshold: f32,
) -> Result<PathBuf> {
    let path = path.as_ref();
    write_file(path, &render_overlay(study, probs, z, threshold)?)?;
    Ok(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_study, PhantomConfig};
    use crate::model::{build_modified_googlenet, PoolSite};
    use crate::pipeline::PreparedStudy;
    use crate::seed;
    use crate::train::FrameSet;
    use rand::Rng;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn grid_round_trip_is_bit_exact() {
        let mut rng = seed::rng(1, "io");
        let dims = Dims::new(16, 16, 16);
        let values: Vec<f32> = (0..dims.len()).map(|_| rng.random::<f32>() * 100.0 - 50.0).collect();
        let grid = VoxelGrid::new(dims, Spacing::new(0.9, 1.1, 2.5), values).unwrap();
        let dir = tmp();
        let p = dir.path().join("a.msvol");
        write_grid(&p, &grid).unwrap();
        let back = read_grid(&p).unwrap();
        assert_eq!(back.dims(), grid.dims());
        assert_eq!(back.spacing(), grid.spacing());
        assert!(back.values().iter().zip(grid.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(fs::metadata(&p).unwrap().len() as usize, VOLUME_HEADER_LEN + 4 * dims.len());
    }

    #[test]
    fn volume_errors() {
        let dir = tmp();
        let grid = VoxelGrid::filled(Dims::new(2, 2, 2), Spacing::isotropic(1.0), 1.0).unwrap();
        let bytes = encode_grid(&grid).unwrap();
        let p = dir.path().join("t.msvol");
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::Truncated { .. })));
        fs::write(&p, &bytes[..20]).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&p, &bad).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::BadMagic { .. })));
        let mask = BinaryMask::ones(Dims::new(2, 2, 2), Spacing::isotropic(1.0)).unwrap();
        let mut mb = encode_mask(&mask).unwrap();
        mb[VOLUME_HEADER_LEN + 3] = 2;
        fs::write(&p, &mb).unwrap();
        assert!(read_volume(&p).is_err());
        let mut huge = bytes.clone();
        huge[6..10].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[10..14].copy_from_slice(&u32::MAX.to_le_bytes());
        fs::write(&p, &huge).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::InvalidVolume(_))));
        assert!(matches!(read_volume(dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn study_round_trip() {
        let cfg = PhantomConfig {
            dims: Dims::new(16, 16, 8),
            lesion_radius_mm: (1.5, 2.0),
            brain_extent: 0.48,
            ..PhantomConfig::default()
        };
        let s = generate_study(&cfg, "x", 2).unwrap();
        let dir = tmp();
        save_study(dir.path(), &s).unwrap();
        assert_eq!(load_study(dir.path(), "x").unwrap(), s);
    }

    #[test]
    fn json_keys_sorted() {
        #[derive(Serialize)]
        struct S {
            zeta: u8,
            alpha: u8,
        }
        let s = to_json_string(&S { zeta: 1, alpha: 2 }).unwrap();
        assert!(s.find("alpha").unwrap() < s.find("zeta").unwrap());
    }

    fn tiny_trainer() -> (Trainer, FrameSet) {
        let mut arch = ArchConfig::desk();
        arch.width_multiplier = 0.0625;
        arch.inception.truncate(2);
        arch.pool_schedule = vec![PoolSite::AfterConv2, PoolSite::AfterInception(1)];
        let cfg = PhantomConfig {
            dims: Dims::new(16, 16, 8),
            lesion_radius_mm: (1.5, 2.5),
            brain_extent: 0.48,
            ..PhantomConfig::default()
        };
        let s = generate_study(&cfg, "t", 1).unwrap();
        let set = FrameSet::new(vec![PreparedStudy::new(&s, 16).unwrap()]).unwrap();
        let net = build_modified_googlenet(&arch, 3).unwrap();
        let tc = TrainConfig {
            batch_size: 4,
            epochs: 5,
            slab_size: 16,
            ..TrainConfig::default()
        };
        (Trainer::new(net, tc).unwrap(), set)
    }

    #[test]
    fn checkpoint_resume_reproduces_history() {
        let dir = tmp();
        let (mut full, set) = tiny_trainer();
        let ck = dir.path().join("e3.ckpt");
        full.fit(&set, None, &mut |_| {}, &mut |t, s| {
            if s.epoch == 3 {
                save_checkpoint(&ck, t)?;
            }
            Ok(())
        })
        .unwrap();
        let mut resumed = load_checkpoint(&ck).unwrap().into_trainer().unwrap();
        assert_eq!(resumed.epoch, 3);
        resumed.fit(&set, None, &mut |_| {}, &mut |_, _| Ok(())).unwrap();
        assert_eq!(resumed.loss_history(), full.loss_history());
        assert_eq!(resumed.net.export_params(), full.net.export_params());

        let again = dir.path().join("again.ckpt");
        save_checkpoint(&again, &load_checkpoint(&ck).unwrap().into_trainer().unwrap()).unwrap();
        assert_eq!(fs::read(&ck).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn checkpoint_errors() {
        let (t, _) = tiny_trainer();
        let ck = Checkpoint::from_trainer(&t);
        let bytes = ck.encode().unwrap();
        let p = Path::new("x");
        assert_eq!(Checkpoint::decode(&bytes, p).unwrap(), ck);
        let mut v = bytes.clone();
        v[6] = 9;
        assert!(matches!(Checkpoint::decode(&v, p), Err(Error::Version { found: 9, .. })));
        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 1], p), Err(Error::Truncated { .. })));
        assert!(matches!(Checkpoint::decode(b"NOTCKPT", p), Err(Error::BadMagic { .. })));
        let mut other = ck.arch.clone();
        other.width_multiplier = 0.125;
        assert!(matches!(ck.network(Some(&other)), Err(Error::Shape(_))));
        let mut missing = ck.clone();
        missing.tensors.remove(0);
        assert!(matches!(missing.network(None), Err(Error::MissingTensor(_))));
    }

    #[test]
    fn overlay_contracts() {
        let cfg = PhantomConfig {
            dims: Dims::new(16, 16, 8),
            lesion_radius_mm: (1.5, 2.0),
            brain_extent: 0.48,
            ..PhantomConfig::default()
        };
        let s = generate_study(&cfg, "x", 1).unwrap();
        let zero = ProbabilityMap::new(s.dims(), s.spacing(), vec![0.0; s.dims().len()]).unwrap();
        let img = render_overlay(&s, &zero, 4, OVERLAY_THRESHOLD).unwrap();
        let header = b"P6\n16 16\n255\n";
        assert_eq!(&img[..header.len()], header);
        assert!(img[header.len()..].chunks(3).all(|p| p[0] == p[1] && p[1] == p[2]));
        let one = ProbabilityMap::masked(vec![1.0; s.dims().len()], s.brain_mask()).unwrap();
        let img = render_overlay(&s, &one, 4, OVERLAY_THRESHOLD).unwrap();
        let brain = s.brain_mask().slice_z(4).unwrap();
        for (px, &m) in img[header.len()..].chunks(3).zip(&brain) {
            if m == 1 {
                assert_eq!(px, jet(1.0));
            }
        }
        assert_eq!(img, render_overlay(&s, &one, 4, OVERLAY_THRESHOLD).unwrap());
        assert!(render_overlay(&s, &one, 8, OVERLAY_THRESHOLD).is_err());
        assert_eq!(jet(1.0), [128, 0, 0]);
        assert_eq!(jet(0.0), [0, 0, 128]);
    }
}
