//! The learned log barrier.
//!
//! A discriminator `g(x)` in `(0, 1)` scores how much a grid looks like a
//! member of the unlabeled shape pool. The barrier `-(1/t) log g(x)` is near
//! zero for realistic shapes and grows without bound as `g -> 0`. The
//! discriminator is trained adversarially against recent reconstructions,
//! with instance noise on both sides and an error gate that skips updates
//! while the discriminator is already accurate.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::solver::AdamState;
use crate::voxel::{logistic, GridGeometry, LogitGrid, VoxelGrid};

/// Output clamp: scores live in `[SCORE_EPS, 1 - SCORE_EPS]`.
pub const SCORE_EPS: f64 = 1e-7;

/// Hyperparameters of the barrier and of discriminator training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierConfig {
    /// Barrier sharpness; the penalty is scaled by `1 / t`.
    pub t: f64,
    /// Initial instance-noise standard deviation.
    pub sigma_noise: f64,
    /// Updates are skipped while classification error is at or below this.
    pub gate_threshold: f64,
    pub gate_enabled: bool,
    pub lr_g: f64,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        BarrierConfig {
            t: 100.0,
            sigma_noise: 0.1,
            gate_threshold: 0.2,
            gate_enabled: true,
            lr_g: 1e-4,
        }
    }
}

impl BarrierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0) {
            return Err(Error::precondition(format!("barrier t must be positive, got {}", self.t)));
        }
        if !(0.0..0.5).contains(&self.gate_threshold) {
            return Err(Error::precondition(format!(
                "gate threshold {} outside [0, 0.5)",
                self.gate_threshold
            )));
        }
        if !(self.sigma_noise >= 0.0) || !(self.lr_g >= 0.0) {
            return Err(Error::precondition("noise and learning rate must be nonnegative"));
        }
        Ok(())
    }

    /// Noise level at `iteration` of `total`, annealed linearly to zero.
    pub fn noise_at(&self, iteration: usize, total: usize) -> f64 {
        if total == 0 {
            return self.sigma_noise;
        }
        self.sigma_noise * (1.0 - iteration as f64 / total as f64).max(0.0)
    }
}

/// Anything that can score grids and be trained with the adversarial
/// objective `mean log g(real) + mean log(1 - g(fake))`.
pub trait Critic {
    fn score(&self, grid: &VoxelGrid) -> Result<f64>;

    /// One ascent step of size `lr` on the adversarial objective.
    fn ascent_step(&mut self, real: &[VoxelGrid], fake: &[VoxelGrid], lr: f64) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let s: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum();
            out.push(s + self.biases[r]);
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// Fully connected scorer over a 2x max-pooled grid: rectifier hidden
/// layers, logistic output.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    grid_n: usize,
    layers: Vec<Dense>,
    seed: u64,
    optimizer: AdamState,
}

/// Cached activations of one forward pass.
struct Trace {
    argmax: Vec<usize>,
    /// Pre-activations of every layer.
    pre: Vec<Vec<f64>>,
    /// Inputs to every layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    raw_score: f64,
}

/// 2x max pooling; also returns the winning fine voxel for each coarse cell
/// (first in storage order on ties).
fn downsample(grid: &VoxelGrid) -> (Vec<f64>, Vec<usize>) {
    let n = grid.n();
    let h = n / 2;
    let geo = grid.geometry();
    let vals = grid.values();
    let mut pooled = Vec::with_capacity(h * h * h);
    let mut argmax = Vec::with_capacity(h * h * h);
    for x in 0..h {
        for y in 0..h {
            for z in 0..h {
                let mut best = (usize::MAX, f64::NEG_INFINITY);
                for dx in 0..2 {
                    for dy in 0..2 {
                        for dz in 0..2 {
                            let i = geo.index(2 * x + dx, 2 * y + dy, 2 * z + dz);
                            if vals[i] > best.1 {
                                best = (i, vals[i]);
                            }
                        }
                    }
                }
                pooled.push(best.1);
                argmax.push(best.0);
            }
        }
    }
    (pooled, argmax)
}

impl Discriminator {
    /// Default architecture for grids of resolution `grid_n`:
    /// `(n/2)^3 -> 128 -> 64 -> 1`.
    pub fn new(grid_n: usize, seed: u64) -> Result<Self> {
        Self::with_hidden(grid_n, &[128, 64], seed)
    }

    pub fn with_hidden(grid_n: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if grid_n < 2 || !grid_n.is_multiple_of(2) {
            return Err(Error::precondition(format!(
                "discriminator needs an even grid resolution, got {grid_n}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = (grid_n / 2).pow(3);
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers: Vec<Dense> = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (cols, rows) = (w[0], w[1]);
                let is_output = k + 2 == widths.len();
                // He initialization for rectifier layers; the output layer
                // starts small so scores begin near 1/2.
                let std = if is_output {
                    0.1 / (cols as f64).sqrt()
                } else {
                    (2.0 / cols as f64).sqrt()
                };
                let normal = Normal::new(0.0, std).expect("positive std");
                Dense {
                    rows,
                    cols,
                    weights: (0..rows * cols).map(|_| normal.sample(&mut rng)).collect(),
                    biases: vec![0.0; rows],
                }
            })
            .collect();
        Self::from_layers(grid_n, layers, seed)
    }

    /// Wraps explicit layers, checking that their shapes chain.
    pub fn from_layers(grid_n: usize, layers: Vec<Dense>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::precondition("discriminator needs at least one layer"));
        }
        if grid_n < 2 || !grid_n.is_multiple_of(2) {
            return Err(Error::precondition("discriminator grid resolution must be even"));
        }
        let mut expect = (grid_n / 2).pow(3);
        for (k, l) in layers.iter().enumerate() {
            if l.cols != expect || l.weights.len() != l.rows * l.cols || l.biases.len() != l.rows {
                return Err(Error::mismatch(format!("layer {k} has inconsistent shape")));
            }
            expect = l.rows;
        }
        if expect != 1 {
            return Err(Error::mismatch("output layer must have one unit"));
        }
        let count = layers.iter().map(Dense::param_count).sum();
        Ok(Discriminator {
            grid_n,
            layers,
            seed,
            optimizer: AdamState::new(count),
        })
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Sets every output-layer weight and bias to zero.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("nonempty");
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        last.biases.iter_mut().for_each(|b| *b = 0.0);
    }

    fn check(&self, grid: &VoxelGrid) -> Result<()> {
        if grid.n() != self.grid_n {
            return Err(Error::mismatch(format!(
                "discriminator expects n={}, grid has n={}",
                self.grid_n,
                grid.n()
            )));
        }
        Ok(())
    }

    fn trace(&self, grid: &VoxelGrid) -> Trace {
        let (pooled, argmax) = downsample(grid);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = pooled.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.rows);
            layer.apply(&current, &mut z);
            inputs.push(current);
            current = if k + 1 < self.layers.len() {
                z.iter().map(|&v| v.max(0.0)).collect()
            } else {
                Vec::new()
            };
            pre.push(z);
        }
        let raw_score = logistic(pre.last().unwrap()[0]);
        Trace {
            argmax,
            pre,
            inputs,
            raw_score,
        }
    }

    /// Backpropagates `dL/ds` (s = output pre-activation). Accumulates
    /// parameter gradients into `param_grad` when given, and returns the
    /// gradient with respect to the fine grid when `want_input` is set.
    fn backprop(
        &self,
        trace: &Trace,
        d_out: f64,
        mut param_grad: Option<&mut [f64]>,
        want_input: bool,
        grid_len: usize,
    ) -> Option<Vec<f64>> {
        let mut delta = vec![d_out];
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.param_count();
        }
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &trace.inputs[k];
            if let Some(pg) = param_grad.as_deref_mut() {
                let base = offsets[k];
                for r in 0..layer.rows {
                    if delta[r] == 0.0 {
                        continue;
                    }
                    let row = &mut pg[base + r * layer.cols..base + (r + 1) * layer.cols];
                    for (g, x) in row.iter_mut().zip(input) {
                        *g += delta[r] * x;
                    }
                    pg[base + layer.weights.len() + r] += delta[r];
                }
            }
            if k == 0 && !want_input {
                break;
            }
            let mut prev = vec![0.0; layer.cols];
            for r in 0..layer.rows {
                if delta[r] == 0.0 {
                    continue;
                }
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += delta[r] * w;
                }
            }
            if k > 0 {
                // rectifier derivative of the previous layer
                for (p, z) in prev.iter_mut().zip(&trace.pre[k - 1]) {
                    if *z <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        want_input.then(|| {
            let mut g = vec![0.0; grid_len];
            for (c, &fine) in trace.argmax.iter().enumerate() {
                g[fine] += delta[c];
            }
            g
        })
    }

    /// Score in `[SCORE_EPS, 1 - SCORE_EPS]`.
    pub fn eval(&self, grid: &VoxelGrid) -> Result<f64> {
        self.check(grid)?;
        Ok(self.trace(grid).raw_score.clamp(SCORE_EPS, 1.0 - SCORE_EPS))
    }

    /// Gradient of `log g` with respect to occupancy; zero where the output
    /// clamp is active.
    pub fn log_score_grad(&self, grid: &VoxelGrid) -> Result<(f64, Vec<f64>)> {
        self.check(grid)?;
        let trace = self.trace(grid);
        let g = trace.raw_score;
        let clamped = g.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
        if clamped != g {
            return Ok((clamped, vec![0.0; grid.values().len()]));
        }
        // d log(logistic(s)) / ds = 1 - g
        let grad = self
            .backprop(&trace, 1.0 - g, None, true, grid.values().len())
            .expect("input gradient requested");
        Ok((g, grad))
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.biases);
        }
        v
    }

    fn set_flat_params(&mut self, v: &[f64]) {
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&v[off..off + nw]);
            off += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&v[off..off + nb]);
            off += nb;
        }
    }

    /// Gradient of the adversarial objective with respect to all parameters.
    pub fn objective_grad(&self, real: &[VoxelGrid], fake: &[VoxelGrid]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.param_count()];
        let mut objective = 0.0;
        for (batch, is_real) in [(real, true), (fake, false)] {
            let w = 1.0 / batch.len() as f64;
            for grid in batch {
                self.check(grid)?;
                let trace = self.trace(grid);
                let g = trace.raw_score;
                let gc = g.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
                let (term, slope) = if is_real {
                    (gc.ln(), 1.0 - g)
                } else {
                    ((1.0 - gc).ln(), -g)
                };
                objective += w * term;
                if gc == g {
                    self.backprop(&trace, w * slope, Some(&mut grad), false, 0);
                }
            }
        }
        Ok((objective, grad))
    }
}

impl Critic for Discriminator {
    fn score(&self, grid: &VoxelGrid) -> Result<f64> {
        self.eval(grid)
    }

    fn ascent_step(&mut self, real: &[VoxelGrid], fake: &[VoxelGrid], lr: f64) -> Result<()> {
        let (_, grad) = self.objective_grad(real, fake)?;
        let ascent: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut params = self.flat_params();
        self.optimizer.step(&mut params, &ascent, lr, crate::solver::AdamHyper::default())?;
        self.set_flat_params(&params);
        Ok(())
    }
}

/// `g_eval`: discriminator score of a grid.
pub fn g_eval(d: &Discriminator, grid: &VoxelGrid) -> Result<f64> {
    d.eval(grid)
}

/// `-(1/t) log g(grid)`.
pub fn penalty(d: &Discriminator, grid: &VoxelGrid, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::precondition(format!("barrier t must be positive, got {t}")));
    }
    Ok(-d.eval(grid)?.ln() / t)
}

/// Gradient of the barrier with respect to occupancy logits. The
/// discriminator is not modified.
pub fn penalty_grad(d: &Discriminator, logits: &LogitGrid, t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::precondition(format!("barrier t must be positive, got {t}")));
    }
    let grid = logits.occupancy();
    let (_, dlog) = d.log_score_grad(&grid)?;
    let scaled: Vec<f64> = dlog.iter().map(|g| -g / t).collect();
    Ok(logits.pullback(&scaled))
}

/// What happened during one discriminator update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateDiagnostics {
    /// Mean of the real and fake misclassification rates.
    pub error: f64,
    /// Adversarial objective on the noisy batches before the step.
    pub objective: f64,
    pub gated: bool,
}

fn add_noise(grids: &[VoxelGrid], sigma: f64, rng: &mut impl Rng) -> Result<Vec<VoxelGrid>> {
    if sigma == 0.0 {
        return Ok(grids.to_vec());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::precondition(e.to_string()))?;
    grids
        .iter()
        .map(|g| {
            let geo: GridGeometry = *g.geometry();
            VoxelGrid::from_clamped(geo, g.values().iter().map(|v| v + normal.sample(rng)))
        })
        .collect()
}

/// One discriminator update against a batch of reconstructions and a batch
/// of pool samples. Noise of std `cfg.sigma_noise` is added to both batches;
/// the step is skipped when the gate is on and the error is at most
/// `cfg.gate_threshold`.
pub fn update_penalty<C: Critic>(
    critic: &mut C,
    recon_batch: &[VoxelGrid],
    real_batch: &[VoxelGrid],
    cfg: &BarrierConfig,
    rng: &mut impl Rng,
) -> Result<UpdateDiagnostics> {
    if recon_batch.is_empty() {
        return Err(Error::Empty("reconstruction batch"));
    }
    if real_batch.is_empty() {
        return Err(Error::Empty("real batch"));
    }
    let n = real_batch[0].n();
    if recon_batch.iter().chain(real_batch).any(|g| g.n() != n) {
        return Err(Error::mismatch("batches mix grid resolutions"));
    }
    let real = add_noise(real_batch, cfg.sigma_noise, rng)?;
    let fake = add_noise(recon_batch, cfg.sigma_noise, rng)?;

    let real_scores: Vec<f64> = real.iter().map(|g| critic.score(g)).collect::<Result<_>>()?;
    let fake_scores: Vec<f64> = fake.iter().map(|g| critic.score(g)).collect::<Result<_>>()?;
    let real_err = real_scores.iter().filter(|&&s| s < 0.5).count() as f64 / real.len() as f64;
    let fake_err = fake_scores.iter().filter(|&&s| s >= 0.5).count() as f64 / fake.len() as f64;
    let error = 0.5 * (real_err + fake_err);
    let objective = real_scores.iter().map(|s| s.ln()).sum::<f64>() / real.len() as f64
        + fake_scores.iter().map(|s| (1.0 - s).ln()).sum::<f64>() / fake.len() as f64;

    let gated = cfg.gate_enabled && error <= cfg.gate_threshold;
    if !gated {
        critic.ascent_step(&real, &fake, cfg.lr_g)?;
    }
    Ok(UpdateDiagnostics {
        error,
        objective,
        gated,
    })
}

/// Lookup-table critic over a finite set of grids, one logit per grid.
/// Trained by plain gradient ascent; useful for checking the optimum of the
/// adversarial objective exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularCritic {
    keys: Vec<VoxelGrid>,
    logits: Vec<f64>,
}

impl TabularCritic {
    pub fn new(keys: Vec<VoxelGrid>) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::Empty("tabular critic outcomes"));
        }
        let logits = vec![0.0; keys.len()];
        Ok(TabularCritic { keys, logits })
    }

    fn lookup(&self, grid: &VoxelGrid) -> Result<usize> {
        self.keys
            .iter()
            .position(|k| k == grid)
            .ok_or_else(|| Error::precondition("grid is not an outcome of the tabular critic"))
    }

    /// Current score of outcome `k`.
    pub fn value(&self, k: usize) -> f64 {
        logistic(self.logits[k])
    }
}

impl Critic for TabularCritic {
    fn score(&self, grid: &VoxelGrid) -> Result<f64> {
        Ok(self.value(self.lookup(grid)?).clamp(SCORE_EPS, 1.0 - SCORE_EPS))
    }

    fn ascent_step(&mut self, real: &[VoxelGrid], fake: &[VoxelGrid], lr: f64) -> Result<()> {
        let mut grad = vec![0.0; self.logits.len()];
        for g in real {
            let k = self.lookup(g)?;
            grad[k] += (1.0 - self.value(k)) / real.len() as f64;
        }
        for g in fake {
            let k = self.lookup(g)?;
            grad[k] -= self.value(k) / fake.len() as f64;
        }
        for (l, g) in self.logits.iter_mut().zip(grad) {
            *l += lr * g;
        }
        Ok(())
    }
}
