//! ADAM with coupled L2 decay, half-lesion batches, epoch accounting and
//! resumable training state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Network;
use crate::nn::{weighted_sigmoid_ce, Float, Mode, Module, Param, Tensor};
use crate::pipeline::{sample_batch_sized, PreparedStudy, Transform, DEFAULT_SLAB_SIZE, SLAB_CHANNELS};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub l2_decay: f64,
    pub pos_weight: f64,
    pub epochs: usize,
    pub seed: u64,
    /// In-plane side of the network input.
    pub slab_size: usize,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            l2_decay: 1e-5,
            pos_weight: 10.0,
            epochs: 10,
            seed: 0,
            slab_size: DEFAULT_SLAB_SIZE,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be finite and non-negative");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) || !(self.l2_decay >= 0.0) || !(self.pos_weight > 0.0) {
            return bad("adam_epsilon and pos_weight must be positive, l2_decay non-negative");
        }
        if self.slab_size == 0 || self.slab_size % 4 != 0 {
            return bad("slab_size must be a positive multiple of 4");
        }
        Ok(())
    }
}

pub fn steps_per_epoch(n_frames: usize, batch_size: usize) -> usize {
    n_frames.div_ceil(batch_size.max(1)).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments<T> {
    pub name: String,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub step: u64,
    /// One entry per trainable parameter, in visiting order.
    pub moments: Vec<Moments<T>>,
}

/// One ADAM update of a single tensor at step `t` (1-based).
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Float>(value: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], t: u64, decay: bool, cfg: &TrainConfig) -> Result<()> {
    if grad.len() != value.len() || m.len() != value.len() || v.len() != value.len() {
        return Err(Error::Shape(format!(
            "adam: value {}, grad {}, m {}, v {}",
            value.len(),
            grad.len(),
            m.len(),
            v.len()
        )));
    }
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    let lambda = if decay { cfg.l2_decay } else { 0.0 };
    for i in 0..value.len() {
        let theta = value[i].to_f64();
        let g = grad[i].to_f64() + lambda * theta;
        let mi = b1 * m[i].to_f64() + (1.0 - b1) * g;
        let vi = b2 * v[i].to_f64() + (1.0 - b2) * g * g;
        m[i] = T::from_f64(mi);
        v[i] = T::from_f64(vi);
        let step = cfg.lr * (mi / c1) / ((vi / c2).sqrt() + cfg.adam_epsilon);
        value[i] = T::from_f64(theta - step);
    }
    Ok(())
}

impl<T: Float> AdamState<T> {
    /// Zeroed moments for every trainable parameter of `module`.
    pub fn for_module(module: &mut impl Module<T>) -> Self {
        let mut moments = Vec::new();
        module.visit_params(&mut |p| {
            if p.kind.trainable() {
                moments.push(Moments {
                    name: p.name.clone(),
                    m: vec![T::zero(); p.len()],
                    v: vec![T::zero(); p.len()],
                });
            }
        });
        AdamState { step: 0, moments }
    }

    /// Applies one step to all trainable parameters using their gradients.
    pub fn step(&mut self, module: &mut impl Module<T>, cfg: &TrainConfig) -> Result<()> {
        self.step += 1;
        let t = self.step;
        let mut idx = 0;
        let mut result = Ok(());
        let moments = &mut self.moments;
        module.visit_params(&mut |p: &mut Param<T>| {
            if !p.kind.trainable() || result.is_err() {
                return;
            }
            result = match moments.get_mut(idx) {
                Some(mo) if mo.name == p.name => {
                    adam_update(&mut p.value, &p.grad, &mut mo.m, &mut mo.v, t, p.kind.decays(), cfg)
                }
                _ => Err(Error::MissingTensor(format!("optimizer state for {}", p.name))),
            };
            idx += 1;
        });
        if result.is_ok() && idx != moments.len() {
            result = Err(Error::Shape(format!("optimizer has {} tensors, model {idx}", moments.len())));
        }
        result
    }
}

/// Serializable position of the training RNG.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    pub dev_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

/// Frames available for training, addressed as `(study, z)`.
pub struct FrameSet {
    pub studies: Vec<PreparedStudy>,
    frames: Vec<(usize, usize)>,
    lesion_frames: Vec<(usize, usize)>,
}

impl FrameSet {
    pub fn new(studies: Vec<PreparedStudy>) -> Result<Self> {
        let size = studies.first().map(PreparedStudy::size);
        if studies.iter().any(|s| Some(s.size()) != size) {
            return Err(Error::InvalidArgument("all studies need the same slab size".into()));
        }
        let mut frames = Vec::new();
        let mut lesion_frames = Vec::new();
        for (i, s) in studies.iter().enumerate() {
            for z in 0..s.nz() {
                frames.push((i, z));
                if s.has_lesion(z) {
                    lesion_frames.push((i, z));
                }
            }
        }
        Ok(FrameSet {
            studies,
            frames,
            lesion_frames,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_lesion_frames(&self) -> usize {
        self.lesion_frames.len()
    }

    pub fn slab_size(&self) -> Option<usize> {
        self.studies.first().map(PreparedStudy::size)
    }

    /// Input tensor and targets for the given frames and transforms.
    fn batch(&self, frames: &[(usize, usize)], transforms: &[[Transform; 2]]) -> Result<(Tensor<f32>, Vec<u8>)> {
        let size = self.slab_size().ok_or(Error::Empty("training studies"))?;
        let n = size * size;
        let mut x = Tensor::zeros([frames.len(), SLAB_CHANNELS, size, size]);
        let mut targets = vec![0u8; frames.len() * n];
        let mut scratch_f = Vec::new();
        let mut scratch_u = Vec::new();
        for (i, &(s, z)) in frames.iter().enumerate() {
            let item = &mut x.data[i * SLAB_CHANNELS * n..(i + 1) * SLAB_CHANNELS * n];
            self.studies[s].write_slab(z, item)?;
            let tgt = &mut targets[i * n..(i + 1) * n];
            tgt.copy_from_slice(self.studies[s].target(z));
            for &t in &transforms[i] {
                for plane in item.chunks_mut(n) {
                    t.apply_in_place(plane, size, &mut scratch_f);
                }
                t.apply_in_place(tgt, size, &mut scratch_u);
            }
        }
        Ok((x, targets))
    }
}

/// Complete training state; everything needed to resume bit-exactly.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: Network<f32>,
    pub adam: AdamState<f32>,
    pub config: TrainConfig,
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochStats>,
}

impl Trainer {
    pub fn new(mut net: Network<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::for_module(&mut net);
        Ok(Trainer {
            net,
            adam,
            rng: seed::rng(config.seed, "train"),
            config,
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn loss_history(&self) -> Vec<f64> {
        self.history.iter().map(|e| e.mean_loss).collect()
    }

    /// One optimizer step on a freshly sampled batch; returns the loss.
    pub fn step(&mut self, train: &FrameSet, step: usize) -> Result<f64> {
        let frames = sample_batch_sized(&train.frames, &train.lesion_frames, self.config.batch_size, &mut self.rng)?;
        let transforms: Vec<[Transform; 2]> = frames
            .iter()
            .map(|_| {
                if self.config.augment {
                    Transform::random_pair(&mut self.rng)
                } else {
                    [Transform::Identity; 2]
                }
            })
            .collect();
        let (x, targets) = train.batch(&frames, &transforms)?;
        self.net.zero_grad();
        let logits = self.net.forward(&x, Mode::Train)?;
        let (loss, grad) = weighted_sigmoid_ce(&logits, &targets, self.config.pos_weight)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss,
                epoch: self.epoch + 1,
                step,
            });
        }
        self.net.backward(&grad)?;
        self.adam.step(&mut self.net, &self.config)?;
        Ok(loss)
    }

    /// Mean loss over every frame of `set`, unaugmented, in inference mode.
    pub fn evaluate_loss(&mut self, set: &FrameSet) -> Result<f64> {
        let mut total = 0.0;
        let chunk = self.config.batch_size.min(8).max(1);
        for frames in set.frames.chunks(chunk) {
            let (x, targets) = set.batch(frames, &vec![[Transform::Identity; 2]; frames.len()])?;
            let logits = self.net.forward(&x, Mode::Infer)?;
            total += weighted_sigmoid_ce(&logits, &targets, self.config.pos_weight)?.0 * frames.len() as f64;
        }
        Ok(total / set.n_frames().max(1) as f64)
    }

    pub fn run_epoch(&mut self, train: &FrameSet, dev: Option<&FrameSet>, log: &mut dyn FnMut(&StepLog)) -> Result<EpochStats> {
        if train.n_frames() == 0 {
            return Err(Error::Empty("training frames"));
        }
        if train.n_lesion_frames() == 0 {
            return Err(Error::Empty("training frames with lesions"));
        }
        if train.slab_size() != Some(self.config.slab_size) {
            return Err(Error::InvalidArgument(format!(
                "training frames prepared at {:?}, config expects {}",
                train.slab_size(),
                self.config.slab_size
            )));
        }
        let steps = steps_per_epoch(train.n_frames(), self.config.batch_size);
        let mut sum = 0.0;
        for step in 0..steps {
            let loss = self.step(train, step)?;
            sum += loss;
            log(&StepLog {
                epoch: self.epoch + 1,
                step,
                loss,
            });
        }
        let dev_loss = match dev {
            Some(d) if d.n_frames() > 0 => Some(self.evaluate_loss(d)?),
            _ => None,
        };
        self.epoch += 1;
        let stats = EpochStats {
            epoch: self.epoch,
            steps,
            mean_loss: sum / steps as f64,
            dev_loss,
        };
        self.history.push(stats.clone());
        Ok(stats)
    }

    /// Runs until `config.epochs` epochs are complete, calling `on_epoch`
    /// after each one (for checkpointing).
    pub fn fit(
        &mut self,
        train: &FrameSet,
        dev: Option<&FrameSet>,
        log: &mut dyn FnMut(&StepLog),
        on_epoch: &mut dyn FnMut(&Trainer, &EpochStats) -> Result<()>,
    ) -> Result<()> {
        while self.epoch < self.config.epochs {
            let stats = self.run_epoch(train, dev, log)?;
            on_epoch(self, &stats)?;
        }
        Ok(())
    }
}
