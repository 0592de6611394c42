//! Exact finite-distribution checks of the optimal discriminator and of the
//! global minimum of the adversarial criterion when the category marginals
//! of real and generated data differ.
//!
//! All logarithms are natural. Cells where both joints vanish are excluded
//! from every expectation.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// Probability vector over a finite outcome set.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist(Vec<f64>);

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("distribution"));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
            return Err(Error::precondition(format!("negative or non-finite probability {p}")));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::precondition(format!("probabilities sum to {s}, not 1")));
        }
        Ok(DiscreteDist(probs))
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) {
            return Err(Error::precondition("weights must have positive mass"));
        }
        let mut probs: Vec<f64> = weights.iter().map(|w| w / s).collect();
        // push the rounding residue onto the largest entry
        let resid = 1.0 - probs.iter().sum::<f64>();
        let k = (0..probs.len()).max_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap();
        probs[k] += resid;
        DiscreteDist::new(probs)
    }

    /// Uniform draw from the probability simplex.
    pub fn random(len: usize, rng: &mut impl Rng) -> Self {
        let w: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(Exp1) + 1e-300).collect();
        DiscreteDist::from_weights(&w).expect("positive weights")
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Category marginal together with per-category outcome conditionals.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDist {
    marginal: DiscreteDist,
    conditionals: Vec<DiscreteDist>,
}

impl JointDist {
    pub fn new(marginal: DiscreteDist, conditionals: Vec<DiscreteDist>) -> Result<Self> {
        if conditionals.len() != marginal.len() {
            return Err(Error::mismatch(format!(
                "{} categories but {} conditionals",
                marginal.len(),
                conditionals.len()
            )));
        }
        let outcomes = conditionals[0].len();
        if conditionals.iter().any(|c| c.len() != outcomes) {
            return Err(Error::mismatch("conditionals have different outcome counts"));
        }
        Ok(JointDist {
            marginal,
            conditionals,
        })
    }

    pub fn random(categories: usize, outcomes: usize, rng: &mut impl Rng) -> Self {
        let marginal = DiscreteDist::random(categories, rng);
        let conditionals = (0..categories).map(|_| DiscreteDist::random(outcomes, rng)).collect();
        JointDist {
            marginal,
            conditionals,
        }
    }

    /// Same conditionals, different category marginal.
    pub fn with_marginal(&self, marginal: DiscreteDist) -> Result<Self> {
        JointDist::new(marginal, self.conditionals.clone())
    }

    pub fn marginal(&self) -> &DiscreteDist {
        &self.marginal
    }

    pub fn conditionals(&self) -> &[DiscreteDist] {
        &self.conditionals
    }

    pub fn categories(&self) -> usize {
        self.marginal.len()
    }

    pub fn outcomes(&self) -> usize {
        self.conditionals[0].len()
    }

    pub fn joint(&self, c: usize, x: usize) -> f64 {
        self.conditionals[c].probs()[x] * self.marginal.probs()[c]
    }

    fn compatible(&self, other: &JointDist) -> Result<()> {
        if self.categories() != other.categories() || self.outcomes() != other.outcomes() {
            return Err(Error::mismatch(format!(
                "joint tables are {}x{} and {}x{}",
                self.categories(),
                self.outcomes(),
                other.categories(),
                other.outcomes()
            )));
        }
        Ok(())
    }
}

/// Kullback-Leibler divergence; `+inf` when `p` puts mass where `q` has none.
pub fn kl(p: &DiscreteDist, q: &DiscreteDist) -> f64 {
    kl_slices(p.probs(), q.probs())
}

fn kl_slices(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return f64::INFINITY;
        }
        s += pi * (pi / qi).ln();
    }
    s
}

/// Jensen-Shannon divergence, in `[0, ln 2]`.
pub fn js(p: &DiscreteDist, q: &DiscreteDist) -> f64 {
    let m: Vec<f64> = p.probs().iter().zip(q.probs()).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * kl_slices(p.probs(), &m) + 0.5 * kl_slices(q.probs(), &m)
}

/// Optimal discriminator `p(c,x) / (p(c,x) + q(c,x))` per cell; `None` where
/// both joints vanish.
pub fn optimal_disc(p: &JointDist, q: &JointDist) -> Result<Vec<Vec<Option<f64>>>> {
    p.compatible(q)?;
    Ok((0..p.categories())
        .map(|c| {
            (0..p.outcomes())
                .map(|x| {
                    let (a, b) = (p.joint(c, x), q.joint(c, x));
                    (a + b > 0.0).then(|| a / (a + b))
                })
                .collect()
        })
        .collect())
}

#[inline]
fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// `E_p log D* + E_q log(1 - D*)`, summed exactly over the table.
pub fn criterion(p: &JointDist, q: &JointDist) -> Result<f64> {
    let d = optimal_disc(p, q)?;
    let mut total = 0.0;
    for (c, row) in d.iter().enumerate() {
        for (x, cell) in row.iter().enumerate() {
            let Some(dstar) = *cell else { continue };
            total += xlogy(p.joint(c, x), dstar) + xlogy(q.joint(c, x), 1.0 - dstar);
        }
    }
    Ok(total)
}

/// Lower bound `-ln 4 + 2 JS(p_c, q_c)` on the criterion.
pub fn global_min_value(p_c: &DiscreteDist, q_c: &DiscreteDist) -> f64 {
    -(4f64.ln()) + 2.0 * js(p_c, q_c)
}

/// Outcome of checking one candidate generator distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    /// `criterion - bound`.
    pub gap: f64,
    /// Largest L1 distance between matching conditionals.
    pub max_l1: f64,
    pub equality_expected: bool,
    pub ok: bool,
}

/// Checks the bound and its equality condition for one `q`.
pub fn check_candidate(p: &JointDist, q: &JointDist) -> Result<TrialOutcome> {
    let value = criterion(p, q)?;
    let gap = value - global_min_value(p.marginal(), q.marginal());
    let max_l1 = p
        .conditionals()
        .iter()
        .zip(q.conditionals())
        .map(|(a, b)| a.probs().iter().zip(b.probs()).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let equality_expected = max_l1 < 1e-6;
    let ok = if equality_expected {
        gap.abs() <= 1e-9
    } else {
        gap >= -1e-10
    };
    Ok(TrialOutcome {
        gap,
        max_l1,
        equality_expected,
        ok,
    })
}

#[derive(Debug, Clone)]
pub struct GlobalMinReport {
    pub trials: Vec<TrialOutcome>,
}

impl GlobalMinReport {
    pub fn violations(&self) -> usize {
        self.trials.iter().filter(|t| !t.ok).count()
    }

    pub fn min_gap(&self) -> f64 {
        self.trials.iter().map(|t| t.gap).fold(f64::INFINITY, f64::min)
    }

    pub fn passed(&self) -> bool {
        self.violations() == 0
    }

    /// Plain-text report: one line per trial, then summary lines.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, t) in self.trials.iter().enumerate() {
            let _ = writeln!(
                out,
                "trial={k} gap={:.6e} max_l1={:.6e} equality={} ok={}",
                t.gap, t.max_l1, t.equality_expected as u8, t.ok as u8
            );
        }
        let _ = writeln!(out, "trials={}", self.trials.len());
        let _ = writeln!(out, "min_gap={:.6e}", self.min_gap());
        let _ = writeln!(out, "violations={}", self.violations());
        let _ = writeln!(out, "result={}", if self.passed() { "pass" } else { "fail" });
        out
    }
}

/// Draws `trials` random generator conditionals with category marginal
/// `q_c` and checks the bound for each against the fixed `p`.
pub fn verify_global_min(
    p: &JointDist,
    q_c: &DiscreteDist,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<GlobalMinReport> {
    if trials == 0 {
        return Err(Error::precondition("need at least one trial"));
    }
    if q_c.len() != p.categories() {
        return Err(Error::mismatch("generator marginal has the wrong category count"));
    }
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let conds = (0..p.categories())
            .map(|_| DiscreteDist::random(p.outcomes(), rng))
            .collect();
        let q = JointDist::new(q_c.clone(), conds)?;
        out.push(check_candidate(p, &q)?);
    }
    Ok(GlobalMinReport { trials: out })
}
