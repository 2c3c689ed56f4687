//! Bidirectional recurrent confidence and deletion estimator.
//!
//! A forward cell reads the hypothesis left to right and a backward cell right
//! to left; their hidden states are concatenated into one context vector per
//! word. Logistic heads on that context give the word confidence `c_t`, the
//! probability `d_t` that a reference word was deleted between word `t` and
//! the next one (or the utterance end), and, from the first context only, the
//! probability `s` of a deletion before the first word.
//!
//! All parameters live in one flat vector; `Layout` records where each block
//! starts. Gradients use the same layout, which keeps the optimiser, the L2
//! penalty and finite-difference checks trivial.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Predictions, Targets};
use crate::error::{Error, Result};
use crate::features::{FeatureScaler, FeatureVector};
use crate::metrics::LOG_EPS;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN_DIM: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    #[default]
    Lstm,
    /// `h_t = σ(W [x_t; h_{t-1}] + b)`.
    Vanilla,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Vanilla => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub predict_deletions: bool,
    #[serde(default)]
    pub cell: CellKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Direction {
    Forward,
    Backward,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    cell_w: usize,
    cell_b: usize,
    head_c: usize,
    head_d: Option<usize>,
    head_s: Option<usize>,
    total: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let z = cfg.input_dim + cfg.hidden_dim;
        let gh = cfg.cell.gates() * cfg.hidden_dim;
        let cell_w = gh * z;
        let cell_b = gh;
        let head = 2 * cfg.hidden_dim + 1;
        let head_c = 2 * (cell_w + cell_b);
        let (head_d, head_s, total) = if cfg.predict_deletions {
            (Some(head_c + head), Some(head_c + 2 * head), head_c + 3 * head)
        } else {
            (None, None, head_c + head)
        };
        Layout {
            cell_w,
            cell_b,
            head_c,
            head_d,
            head_s,
            total,
        }
    }

    fn cell_offset(&self, dir: Direction) -> usize {
        match dir {
            Direction::Forward => 0,
            Direction::Backward => self.cell_w + self.cell_b,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiRnnModel {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
    scaler: Option<FeatureScaler>,
}

/// Gradient of the training objective, laid out like the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    config: ModelConfig,
    layout: Layout,
    pub values: Vec<f64>,
}

impl Gradients {
    fn zeros(model: &BiRnnModel) -> Self {
        Gradients {
            config: model.config,
            layout: model.layout.clone(),
            values: vec![0.0; model.layout.total],
        }
    }

    fn head(&self, offset: Option<usize>) -> Option<&[f64]> {
        let len = 2 * self.config.hidden_dim + 1;
        offset.map(|o| &self.values[o..o + len])
    }

    /// `w^(c)` followed by `b^(c)`.
    pub fn head_c(&self) -> &[f64] {
        self.head(Some(self.layout.head_c)).expect("always present")
    }

    pub fn head_d(&self) -> Option<&[f64]> {
        self.head(self.layout.head_d)
    }

    pub fn head_s(&self) -> Option<&[f64]> {
        self.head(self.layout.head_s)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn bce(p: f64, target: f64) -> f64 {
    let p = p.clamp(LOG_EPS, 1.0 - LOG_EPS);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Activations of one direction at one time step.
#[derive(Clone, Debug)]
struct Step {
    /// `[x_t; h_prev]`
    z: Vec<f64>,
    /// Activated gates: LSTM `[i, f, o, g]`, vanilla `[h]`.
    act: Vec<f64>,
    cell: Vec<f64>,
    tanh_cell: Vec<f64>,
    h: Vec<f64>,
}

/// Cached activations of a full forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    forward: Vec<Step>,
    backward: Vec<Step>,
    pub predictions: Predictions,
}

impl ForwardCache {
    fn context(&self, t: usize) -> impl Iterator<Item = f64> + '_ {
        self.forward[t].h.iter().chain(&self.backward[t].h).copied()
    }
}

/// One training sequence: raw (unscaled) feature vectors and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Vec<FeatureVector>,
    pub targets: Targets,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub seed: u64,
    pub gradient_clip: f64,
    pub hidden_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.005,
            l2: 0.03,
            epochs: 10,
            seed: 0,
            gradient_clip: 5.0,
            hidden_dim: DEFAULT_HIDDEN_DIM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ctx = "train config";
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(ctx, "learning_rate must be finite and >= 0"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::invalid(ctx, "l2 must be finite and >= 0"));
        }
        if !(self.gradient_clip > 0.0) {
            return Err(Error::invalid(ctx, "gradient_clip must be > 0"));
        }
        if self.hidden_dim == 0 {
            return Err(Error::invalid(ctx, "hidden_dim must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Cross-entropy per word (confidence plus deletion terms), accumulated
    /// over the epoch before each update.
    pub mean_loss: f64,
    /// `l2 · ‖θ‖²` at the end of the epoch.
    pub l2_penalty: f64,
}

pub fn init_model(input_dim: usize, hidden_dim: usize, predict_deletions: bool, seed: u64) -> Result<BiRnnModel> {
    BiRnnModel::new(
        ModelConfig {
            input_dim,
            hidden_dim,
            predict_deletions,
            cell: CellKind::Lstm,
        },
        seed,
    )
}

impl BiRnnModel {
    /// Uniform(−r, r) weights with r = 1/sqrt(input_dim + hidden_dim), zero
    /// biases except the LSTM forget gate, which starts at 1.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.input_dim == 0 || config.hidden_dim == 0 {
            return Err(Error::invalid("model config", "dimensions must be positive"));
        }
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let r = 1.0 / ((config.input_dim + config.hidden_dim) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_dim;
        for dir in [Direction::Forward, Direction::Backward] {
            let off = layout.cell_offset(dir);
            for p in &mut params[off..off + layout.cell_w] {
                *p = rng.random_range(-r..r);
            }
            if config.cell == CellKind::Lstm {
                let b = off + layout.cell_w;
                params[b + h..b + 2 * h].fill(1.0);
            }
        }
        for head in [Some(layout.head_c), layout.head_d, layout.head_s].into_iter().flatten() {
            for p in &mut params[head..head + 2 * h] {
                *p = rng.random_range(-r..r);
            }
        }
        Ok(BiRnnModel {
            config,
            layout,
            params,
            scaler: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn scaler(&self) -> Option<&FeatureScaler> {
        self.scaler.as_ref()
    }

    pub fn set_scaler(&mut self, scaler: Option<FeatureScaler>) {
        self.scaler = scaler;
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.params.iter().map(|p| p * p).sum()
    }

    fn cell(&self, dir: Direction) -> (&[f64], &[f64]) {
        let off = self.layout.cell_offset(dir);
        let w = &self.params[off..off + self.layout.cell_w];
        let b = &self.params[off + self.layout.cell_w..off + self.layout.cell_w + self.layout.cell_b];
        (w, b)
    }

    fn head(&self, offset: usize) -> (&[f64], f64) {
        let n = 2 * self.config.hidden_dim;
        (&self.params[offset..offset + n], self.params[offset + n])
    }

    /// Copy with the forward and backward cells exchanged, and the two halves
    /// of every head swapped to match.
    pub fn with_directions_swapped(&self) -> Self {
        let mut out = self.clone();
        let len = self.layout.cell_w + self.layout.cell_b;
        let (fwd, bwd) = out.params[..2 * len].split_at_mut(len);
        fwd.swap_with_slice(bwd);
        let h = self.config.hidden_dim;
        for head in [Some(self.layout.head_c), self.layout.head_d, self.layout.head_s].into_iter().flatten() {
            let (a, b) = out.params[head..head + 2 * h].split_at_mut(h);
            a.swap_with_slice(b);
        }
        out
    }

    /// Zeroes every weight and bias of one direction.
    pub fn silence_direction(&mut self, backward: bool) {
        let dir = if backward { Direction::Backward } else { Direction::Forward };
        let off = self.layout.cell_offset(dir);
        self.params[off..off + self.layout.cell_w + self.layout.cell_b].fill(0.0);
    }

    fn prepare(&self, xs: &[FeatureVector]) -> Result<Vec<Vec<f64>>> {
        if xs.is_empty() {
            return Err(Error::invalid("birnn input", "empty sequence"));
        }
        xs.iter()
            .map(|x| {
                if x.len() != self.config.input_dim {
                    return Err(Error::Dimension {
                        context: "birnn input",
                        expected: self.config.input_dim,
                        found: x.len(),
                    });
                }
                Ok(match &self.scaler {
                    Some(s) => s.apply(x).0,
                    None => x.0.clone(),
                })
            })
            .collect()
    }

    fn run_direction(&self, dir: Direction, inputs: &[Vec<f64>]) -> Vec<Step> {
        let (w, b) = self.cell(dir);
        let h_dim = self.config.hidden_dim;
        let in_dim = self.config.input_dim;
        let z_dim = in_dim + h_dim;
        let rows = self.config.cell.gates() * h_dim;
        let t_len = inputs.len();
        let mut steps: Vec<Option<Step>> = vec![None; t_len];
        let mut h_prev = vec![0.0; h_dim];
        let mut c_prev = vec![0.0; h_dim];
        let order: Box<dyn Iterator<Item = usize>> = match dir {
            Direction::Forward => Box::new(0..t_len),
            Direction::Backward => Box::new((0..t_len).rev()),
        };
        for t in order {
            let mut z = Vec::with_capacity(z_dim);
            z.extend_from_slice(&inputs[t]);
            z.extend_from_slice(&h_prev);
            let mut act: Vec<f64> = (0..rows).map(|r| b[r] + dot(&w[r * z_dim..(r + 1) * z_dim], &z)).collect();
            let step = match self.config.cell {
                CellKind::Lstm => {
                    for a in &mut act[..3 * h_dim] {
                        *a = sigmoid(*a);
                    }
                    for a in &mut act[3 * h_dim..] {
                        *a = a.tanh();
                    }
                    let (i, f, o, g) = (
                        &act[..h_dim],
                        &act[h_dim..2 * h_dim],
                        &act[2 * h_dim..3 * h_dim],
                        &act[3 * h_dim..],
                    );
                    let cell: Vec<f64> = (0..h_dim).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
                    let tanh_cell: Vec<f64> = cell.iter().map(|c| c.tanh()).collect();
                    let h: Vec<f64> = (0..h_dim).map(|k| o[k] * tanh_cell[k]).collect();
                    Step {
                        z,
                        act,
                        cell,
                        tanh_cell,
                        h,
                    }
                }
                CellKind::Vanilla => {
                    for a in &mut act {
                        *a = sigmoid(*a);
                    }
                    let h = act.clone();
                    Step {
                        z,
                        act,
                        cell: Vec::new(),
                        tanh_cell: Vec::new(),
                        h,
                    }
                }
            };
            h_prev.clone_from(&step.h);
            if !step.cell.is_empty() {
                c_prev.clone_from(&step.cell);
            }
            steps[t] = Some(step);
        }
        steps.into_iter().map(|s| s.expect("every step visited")).collect()
    }

    fn forward_prepared(&self, inputs: &[Vec<f64>]) -> ForwardCache {
        let forward = self.run_direction(Direction::Forward, inputs);
        let backward = self.run_direction(Direction::Backward, inputs);
        let t_len = inputs.len();
        let logit = |offset: usize, t: usize| {
            let (w, b) = self.head(offset);
            let h_f = &forward[t].h;
            let h_b = &backward[t].h;
            let n = self.config.hidden_dim;
            b + dot(&w[..n], h_f) + dot(&w[n..], h_b)
        };
        let c: Vec<f64> = (0..t_len).map(|t| sigmoid(logit(self.layout.head_c, t))).collect();
        let predictions = match (self.layout.head_d, self.layout.head_s) {
            (Some(hd), Some(hs)) => {
                let d = (0..t_len).map(|t| sigmoid(logit(hd, t))).collect();
                Predictions::with_deletions(c, d, sigmoid(logit(hs, 0)))
            }
            _ => Predictions::confidence_only(c),
        };
        ForwardCache {
            forward,
            backward,
            predictions,
        }
    }

    /// Forward pass keeping the activations needed for training.
    pub fn forward(&self, xs: &[FeatureVector]) -> Result<ForwardCache> {
        Ok(self.forward_prepared(&self.prepare(xs)?))
    }

    pub fn predict(&self, xs: &[FeatureVector]) -> Result<Predictions> {
        Ok(self.forward(xs)?.predictions)
    }

    /// Backpropagates soft targets through the heads and both directions,
    /// accumulating into `grads`. Returns the summed cross-entropy.
    fn backward(
        &self,
        cache: &ForwardCache,
        c_target: &[f64],
        del_target: Option<(&[f64], f64)>,
        grads: &mut Gradients,
    ) -> f64 {
        let h_dim = self.config.hidden_dim;
        let t_len = c_target.len();
        let pred = &cache.predictions;
        let mut ce = 0.0;
        let mut dh: Vec<Vec<f64>> = vec![vec![0.0; 2 * h_dim]; t_len];

        let head_grad = |offset: usize, t: usize, g: f64, dh_t: &mut Vec<f64>, grads: &mut Gradients| {
            let (w, _) = self.head(offset);
            for (k, hk) in cache.context(t).enumerate() {
                grads.values[offset + k] += g * hk;
                dh_t[k] += g * w[k];
            }
            grads.values[offset + 2 * h_dim] += g;
        };

        for t in 0..t_len {
            ce += bce(pred.c[t], c_target[t]);
            head_grad(self.layout.head_c, t, pred.c[t] - c_target[t], &mut dh[t], grads);
        }
        if let (Some((d_target, s_target)), Some(hd), Some(hs), Some(d), Some(s)) =
            (del_target, self.layout.head_d, self.layout.head_s, &pred.d, pred.s)
        {
            for t in 0..t_len {
                ce += bce(d[t], d_target[t]);
                head_grad(hd, t, d[t] - d_target[t], &mut dh[t], grads);
            }
            ce += bce(s, s_target);
            head_grad(hs, 0, s - s_target, &mut dh[0], grads);
        }

        let dh_f: Vec<&[f64]> = dh.iter().map(|v| &v[..h_dim]).collect();
        let dh_b: Vec<&[f64]> = dh.iter().map(|v| &v[h_dim..]).collect();
        self.backprop_direction(Direction::Forward, &cache.forward, &dh_f, grads);
        self.backprop_direction(Direction::Backward, &cache.backward, &dh_b, grads);
        ce
    }

    fn backprop_direction(&self, dir: Direction, steps: &[Step], dh_ext: &[&[f64]], grads: &mut Gradients) {
        let (w, _) = self.cell(dir);
        let h_dim = self.config.hidden_dim;
        let in_dim = self.config.input_dim;
        let z_dim = in_dim + h_dim;
        let rows = self.config.cell.gates() * h_dim;
        let off = self.layout.cell_offset(dir);
        let (gw, gb) = grads.values[off..off + self.layout.cell_w + self.layout.cell_b].split_at_mut(self.layout.cell_w);
        let t_len = steps.len();
        // reverse of the processing order
        let order: Box<dyn Iterator<Item = usize>> = match dir {
            Direction::Forward => Box::new((0..t_len).rev()),
            Direction::Backward => Box::new(0..t_len),
        };
        let prev_of = |t: usize| -> Option<usize> {
            match dir {
                Direction::Forward => t.checked_sub(1),
                Direction::Backward => (t + 1 < t_len).then_some(t + 1),
            }
        };
        let mut dh_rec = vec![0.0; h_dim];
        let mut dc_rec = vec![0.0; h_dim];
        let mut da = vec![0.0; rows];
        let mut dz = vec![0.0; z_dim];
        for t in order {
            let s = &steps[t];
            let dh: Vec<f64> = (0..h_dim).map(|k| dh_ext[t][k] + dh_rec[k]).collect();
            match self.config.cell {
                CellKind::Lstm => {
                    let (i, f, o, g) = (
                        &s.act[..h_dim],
                        &s.act[h_dim..2 * h_dim],
                        &s.act[2 * h_dim..3 * h_dim],
                        &s.act[3 * h_dim..],
                    );
                    let prev = prev_of(t);
                    for k in 0..h_dim {
                        let tc = s.tanh_cell[k];
                        let dc = dc_rec[k] + dh[k] * o[k] * (1.0 - tc * tc);
                        let c_prev = prev.map_or(0.0, |p| steps[p].cell[k]);
                        da[k] = dc * g[k] * i[k] * (1.0 - i[k]);
                        da[h_dim + k] = dc * c_prev * f[k] * (1.0 - f[k]);
                        da[2 * h_dim + k] = dh[k] * tc * o[k] * (1.0 - o[k]);
                        da[3 * h_dim + k] = dc * i[k] * (1.0 - g[k] * g[k]);
                        dc_rec[k] = dc * f[k];
                    }
                }
                CellKind::Vanilla => {
                    for k in 0..h_dim {
                        let h = s.act[k];
                        da[k] = dh[k] * h * (1.0 - h);
                    }
                }
            }
            dz.fill(0.0);
            for r in 0..rows {
                let g = da[r];
                gb[r] += g;
                if g == 0.0 {
                    continue;
                }
                let row = &w[r * z_dim..(r + 1) * z_dim];
                let grow = &mut gw[r * z_dim..(r + 1) * z_dim];
                for k in 0..z_dim {
                    grow[k] += g * s.z[k];
                    dz[k] += g * row[k];
                }
            }
            dh_rec.copy_from_slice(&dz[in_dim..]);
        }
    }

    fn targets_as_f64(&self, targets: &Targets, len: usize) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        if targets.c.len() != len || targets.d.len() != len {
            return Err(Error::Dimension {
                context: "targets",
                expected: len,
                found: targets.c.len(),
            });
        }
        let f = |b: &bool| if *b { 1.0 } else { 0.0 };
        Ok((targets.c.iter().map(f).collect(), targets.d.iter().map(f).collect(), f(&targets.s)))
    }

    fn example_gradient(&self, inputs: &[Vec<f64>], targets: &Targets, grads: &mut Gradients) -> Result<f64> {
        let cache = self.forward_prepared(inputs);
        let (c, d, s) = self.targets_as_f64(targets, inputs.len())?;
        Ok(self.backward(&cache, &c, Some((&d, s)), grads))
    }

    fn add_l2(&self, l2: f64, grads: &mut Gradients) {
        if l2 > 0.0 {
            for (g, p) in grads.values.iter_mut().zip(&self.params) {
                *g += 2.0 * l2 * p;
            }
        }
    }

    /// Loss and exact gradient over a batch of sequences:
    /// Σ cross-entropies + l2 · ‖θ‖².
    pub fn gradients(&self, batch: &[Example], l2: f64) -> Result<(f64, Gradients)> {
        let mut grads = Gradients::zeros(self);
        let mut total = 0.0;
        for ex in batch {
            let inputs = self.prepare(&ex.features)?;
            total += self.example_gradient(&inputs, &ex.targets, &mut grads)?;
        }
        self.add_l2(l2, &mut grads);
        Ok((total + l2 * self.l2_norm_sq(), grads))
    }

    /// Batch loss without gradients.
    pub fn batch_loss(&self, batch: &[Example], l2: f64) -> Result<f64> {
        let mut total = 0.0;
        for ex in batch {
            let pred = self.predict(&ex.features)?;
            total += loss(&pred, &ex.targets, self, 0.0)?;
        }
        Ok(total + l2 * self.l2_norm_sq())
    }
}

/// Cross-entropy of the predictions against the targets plus `l2 · ‖θ‖²`.
/// Deletion terms are included when the predictions carry them.
pub fn loss(pred: &Predictions, targets: &Targets, model: &BiRnnModel, l2: f64) -> Result<f64> {
    let n = pred.c.len();
    if targets.c.len() != n || targets.d.len() != n {
        return Err(Error::Dimension {
            context: "loss",
            expected: n,
            found: targets.c.len(),
        });
    }
    let t = |b: bool| if b { 1.0 } else { 0.0 };
    let mut total: f64 = pred.c.iter().zip(&targets.c).map(|(&p, &y)| bce(p, t(y))).sum();
    if let (Some(d), Some(s)) = (&pred.d, pred.s) {
        if d.len() != n {
            return Err(Error::Dimension {
                context: "loss",
                expected: n,
                found: d.len(),
            });
        }
        total += d.iter().zip(&targets.d).map(|(&p, &y)| bce(p, t(y))).sum::<f64>();
        total += bce(s, t(targets.s));
    }
    Ok(total + l2 * model.l2_norm_sq())
}

/// Per-sequence gradient descent with global-norm clipping. The visiting
/// order is reshuffled every epoch from a stream seeded by `cfg.seed`.
pub fn train(mut model: BiRnnModel, corpus: &[Example], cfg: &TrainConfig) -> Result<(BiRnnModel, Vec<EpochStats>)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("training", "empty corpus"));
    }
    let prepared: Vec<Vec<Vec<f64>>> = corpus.iter().map(|ex| model.prepare(&ex.features)).collect::<Result<_>>()?;
    let words: usize = prepared.iter().map(Vec::len).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut grads = Gradients::zeros(&model);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut ce = 0.0;
        for &i in &order {
            grads.values.fill(0.0);
            ce += model.example_gradient(&prepared[i], &corpus[i].targets, &mut grads)?;
            model.add_l2(cfg.l2, &mut grads);
            let norm = grads.norm();
            let scale = if norm > cfg.gradient_clip {
                cfg.gradient_clip / norm
            } else {
                1.0
            };
            let step = cfg.learning_rate * scale;
            for (p, g) in model.params.iter_mut().zip(&grads.values) {
                *p -= step * g;
            }
        }
        history.push(EpochStats {
            epoch: epoch + 1,
            mean_loss: ce / words as f64,
            l2_penalty: cfg.l2 * model.l2_norm_sq(),
        });
    }
    Ok((model, history))
}

/// Largest relative difference between the analytic gradient and central
/// finite differences of the batch loss, over every parameter:
/// `|g_a − g_n| / max(1e−8, |g_a| + |g_n|)`.
pub fn gradient_check(model: &BiRnnModel, batch: &[Example], l2: f64, step: f64) -> Result<f64> {
    let (_, grads) = model.gradients(batch, l2)?;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for i in 0..model.num_params() {
        let orig = probe.params[i];
        probe.params[i] = orig + step;
        let plus = probe.batch_loss(batch, l2)?;
        probe.params[i] = orig - step;
        let minus = probe.batch_loss(batch, l2)?;
        probe.params[i] = orig;
        let num = (plus - minus) / (2.0 * step);
        let g = grads.values[i];
        worst = worst.max((g - num).abs() / (g.abs() + num.abs()).max(1e-8));
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CellRecord {
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct HeadRecord {
    w: Vec<f64>,
    b: f64,
}

/// Checkpoint file layout. Matrices are row-major; LSTM gate rows are ordered
/// input, forget, output, candidate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    version: u32,
    config: ModelConfig,
    scaler: Option<FeatureScaler>,
    forward: CellRecord,
    backward: CellRecord,
    head_c: HeadRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    head_d: Option<HeadRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    head_s: Option<HeadRecord>,
}

impl BiRnnModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let cell = |dir| {
            let (w, b) = self.cell(dir);
            CellRecord {
                w: w.to_vec(),
                b: b.to_vec(),
            }
        };
        let head = |offset: usize| {
            let (w, b) = self.head(offset);
            HeadRecord { w: w.to_vec(), b }
        };
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config,
            scaler: self.scaler.clone(),
            forward: cell(Direction::Forward),
            backward: cell(Direction::Backward),
            head_c: head(self.layout.head_c),
            head_d: self.layout.head_d.map(head),
            head_s: self.layout.head_s.map(head),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::invalid("checkpoint", format!("unsupported version {}", ck.version)));
        }
        let mut model = BiRnnModel::new(ck.config, 0)?;
        let layout = model.layout.clone();
        let check = |name: &'static str, expected: usize, found: usize| {
            if expected == found {
                Ok(())
            } else {
                Err(Error::Dimension {
                    context: name,
                    expected,
                    found,
                })
            }
        };
        for (dir, rec, name) in [
            (Direction::Forward, &ck.forward, "checkpoint forward cell"),
            (Direction::Backward, &ck.backward, "checkpoint backward cell"),
        ] {
            check(name, layout.cell_w, rec.w.len())?;
            check(name, layout.cell_b, rec.b.len())?;
            let off = layout.cell_offset(dir);
            model.params[off..off + layout.cell_w].copy_from_slice(&rec.w);
            model.params[off + layout.cell_w..off + layout.cell_w + layout.cell_b].copy_from_slice(&rec.b);
        }
        let n = 2 * ck.config.hidden_dim;
        let heads = [
            (Some(layout.head_c), Some(&ck.head_c)),
            (layout.head_d, ck.head_d.as_ref()),
            (layout.head_s, ck.head_s.as_ref()),
        ];
        for (offset, rec) in heads {
            match (offset, rec) {
                (Some(o), Some(r)) => {
                    check("checkpoint head", n, r.w.len())?;
                    model.params[o..o + n].copy_from_slice(&r.w);
                    model.params[o + n] = r.b;
                }
                (None, None) => {}
                _ => return Err(Error::invalid("checkpoint", "deletion heads inconsistent with config")),
            }
        }
        if let Some(s) = &ck.scaler {
            if s.indices.len() != s.mean.len() || s.mean.len() != s.std.len() {
                return Err(Error::invalid("checkpoint", "malformed scaler"));
            }
            if s.indices.iter().any(|&i| i >= ck.config.input_dim) {
                return Err(Error::invalid("checkpoint", "scaler index beyond input_dim"));
            }
        }
        model.scaler = ck.scaler;
        Ok(model)
    }
}
