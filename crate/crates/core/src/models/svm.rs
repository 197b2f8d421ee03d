//! RBF-kernel support vector classifier trained with SMO, one-vs-one for
//! more than two classes.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::scalar::{derive_seed, Scalar};

pub type Label = i32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SvmConfig<T: Scalar> {
    /// RBF bandwidth; `None` means `1 / dimension`.
    pub gamma: Option<T>,
    pub c: T,
    pub tolerance: T,
    /// Consecutive sweeps without progress before stopping.
    pub max_passes: usize,
    /// Hard cap on optimisation sweeps per class pair.
    pub max_sweeps: usize,
    pub seed: u64,
}

impl<T: Scalar> Default for SvmConfig<T> {
    fn default() -> Self {
        Self {
            gamma: None,
            c: T::one(),
            tolerance: T::lit(1e-3),
            max_passes: 5,
            max_sweeps: 10_000,
            seed: 0,
        }
    }
}

impl<T: Scalar> SvmConfig<T> {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(g) = self.gamma {
            if !(g > T::zero() && g.is_finite()) {
                return Err(ModelError::InvalidConfig(format!("gamma {g} must be positive")));
            }
        }
        if !(self.c > T::zero() && self.c.is_finite()) {
            return Err(ModelError::InvalidConfig(format!("C {} must be positive", self.c)));
        }
        if !(self.tolerance > T::zero()) {
            return Err(ModelError::InvalidConfig("tolerance must be positive".into()));
        }
        if self.max_passes == 0 || self.max_sweeps == 0 {
            return Err(ModelError::InvalidConfig("max_passes and max_sweeps must be >= 1".into()));
        }
        Ok(())
    }
}

/// `exp(-gamma * |a - b|^2)`
pub fn rbf_kernel<T: Scalar>(a: &[T], b: &[T], gamma: T) -> T {
    let d2: T = a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum();
    (-gamma * d2).exp()
}

/// One binary machine; `positive` gets +1, `negative` gets -1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BinaryMachine<T: Scalar> {
    pub positive: Label,
    pub negative: Label,
    pub support_vectors: Vec<Vec<T>>,
    /// Signed coefficients `alpha_i * y_i`.
    pub dual_coefficients: Vec<T>,
    pub bias: T,
}

impl<T: Scalar> BinaryMachine<T> {
    pub fn decision(&self, x: &[T], gamma: T) -> T {
        self.support_vectors
            .iter()
            .zip(&self.dual_coefficients)
            .map(|(sv, c)| *c * rbf_kernel(sv, x, gamma))
            .sum::<T>()
            + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SvmModel<T: Scalar> {
    classes: Vec<Label>,
    machines: Vec<BinaryMachine<T>>,
    gamma: T,
    dimension: usize,
    config: SvmConfig<T>,
}

impl<T: Scalar> SvmModel<T> {
    pub fn classes(&self) -> &[Label] {
        &self.classes
    }

    pub fn machines(&self) -> &[BinaryMachine<T>] {
        &self.machines
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn config(&self) -> &SvmConfig<T> {
        &self.config
    }

    pub fn predict(&self, x: &[T]) -> Result<Label> {
        predict_svm(self, x)
    }
}

/// Full solution of one binary dual problem, kept for inspection.
#[derive(Debug, Clone)]
pub struct DualSolution<T> {
    /// `alpha_i` for every training row, in input order.
    pub alphas: Vec<T>,
    /// `+1` / `-1` targets in input order.
    pub targets: Vec<T>,
    pub bias: T,
    pub sweeps: usize,
}

struct Smo<'a, T: Scalar> {
    kernel: &'a [Vec<T>],
    y: Vec<T>,
    alpha: Vec<T>,
    errors: Vec<T>,
    bias: T,
    c: T,
    tol: T,
    eps: T,
}

impl<T: Scalar> Smo<'_, T> {
    fn violates_kkt(&self, i: usize) -> bool {
        let r = self.errors[i] * self.y[i];
        (r < -self.tol && self.alpha[i] < self.c) || (r > self.tol && self.alpha[i] > T::zero())
    }

    fn take_step(&mut self, i: usize, j: usize) -> bool {
        if i == j {
            return false;
        }
        let (ai, aj) = (self.alpha[i], self.alpha[j]);
        let (yi, yj) = (self.y[i], self.y[j]);
        let (ei, ej) = (self.errors[i], self.errors[j]);
        let (lo, hi) = if yi != yj {
            ((aj - ai).max(T::zero()), (self.c + aj - ai).min(self.c))
        } else {
            ((ai + aj - self.c).max(T::zero()), (ai + aj).min(self.c))
        };
        if hi - lo <= self.eps {
            return false;
        }
        let (kii, kjj, kij) = (self.kernel[i][i], self.kernel[j][j], self.kernel[i][j]);
        let eta = kii + kjj - T::lit(2.0) * kij;
        let aj_new = if eta > self.eps {
            (aj + yj * (ei - ej) / eta).max(lo).min(hi)
        } else {
            // degenerate curvature: move to the better end of the segment
            let s = yi * yj;
            // change of the dual objective when alpha_j moves to `a`
            let objective_at = |a: T| {
                let dj = a - aj;
                let di = -s * dj;
                -yi * ei * di - yj * ej * dj
                    - T::lit(0.5) * (di * di * kii + dj * dj * kjj + T::lit(2.0) * s * di * dj * kij)
            };
            let (f_lo, f_hi) = (objective_at(lo), objective_at(hi));
            if f_lo > f_hi + self.eps {
                lo
            } else if f_hi > f_lo + self.eps {
                hi
            } else {
                return false;
            }
        };
        if (aj_new - aj).abs() < self.eps * (aj_new + aj + self.eps) {
            return false;
        }
        let mut ai_new = ai + yi * yj * (aj - aj_new);
        // keep the box exact despite rounding
        ai_new = ai_new.max(T::zero()).min(self.c);

        let di = yi * (ai_new - ai);
        let dj = yj * (aj_new - aj);
        let b1 = self.bias - ei - di * kii - dj * kij;
        let b2 = self.bias - ej - di * kij - dj * kjj;
        let free = |a: T| a > T::zero() && a < self.c;
        let new_bias = if free(ai_new) {
            b1
        } else if free(aj_new) {
            b2
        } else {
            (b1 + b2) / T::lit(2.0)
        };
        let db = new_bias - self.bias;
        for k in 0..self.errors.len() {
            self.errors[k] = self.errors[k] + di * self.kernel[i][k] + dj * self.kernel[j][k] + db;
        }
        self.alpha[i] = ai_new;
        self.alpha[j] = aj_new;
        self.bias = new_bias;
        true
    }

    /// Second-choice heuristic first, then the remaining rows in `order`.
    fn examine(&mut self, i: usize, order: &[usize]) -> bool {
        if !self.violates_kkt(i) {
            return false;
        }
        let ei = self.errors[i];
        let mut best: Option<(usize, T)> = None;
        for &j in order {
            if j == i || !(self.alpha[j] > T::zero() && self.alpha[j] < self.c) {
                continue;
            }
            let gap = (ei - self.errors[j]).abs();
            if best.is_none_or(|(_, g)| gap > g) {
                best = Some((j, gap));
            }
        }
        if let Some((j, _)) = best {
            if self.take_step(i, j) {
                return true;
            }
        }
        order.iter().any(|&j| self.take_step(i, j))
    }

    /// Recomputes the bias from free support vectors, or the midpoint of the
    /// feasible interval when there are none.
    fn settle_bias(&mut self) {
        let n = self.y.len();
        let f_wo_bias = |k: usize| self.errors[k] + self.y[k] - self.bias;
        let mut sum = T::zero();
        let mut count = 0usize;
        let mut lower = T::neg_infinity();
        let mut upper = T::infinity();
        for k in 0..n {
            let b_k = self.y[k] - f_wo_bias(k);
            let a = self.alpha[k];
            if a > T::zero() && a < self.c {
                sum = sum + b_k;
                count += 1;
            } else {
                // at alpha = 0 need y f >= 1, at alpha = C need y f <= 1
                let at_zero = !(a > T::zero());
                let raises = (self.y[k] > T::zero()) == at_zero;
                if raises {
                    lower = lower.max(b_k);
                } else {
                    upper = upper.min(b_k);
                }
            }
        }
        let b = if count > 0 {
            sum / T::from_usize_lossy(count)
        } else if lower.is_finite() && upper.is_finite() {
            (lower + upper) / T::lit(2.0)
        } else if lower.is_finite() {
            lower
        } else if upper.is_finite() {
            upper
        } else {
            self.bias
        };
        let db = b - self.bias;
        self.errors.iter_mut().for_each(|e| *e = *e + db);
        self.bias = b;
    }
}

/// Solves the binary soft-margin dual for `targets` in {-1, +1}.
pub fn solve_binary_dual<T: Scalar>(
    x: &[Vec<T>],
    targets: &[T],
    gamma: T,
    config: &SvmConfig<T>,
    seed: u64,
) -> DualSolution<T> {
    let n = x.len();
    let kernel: Vec<Vec<T>> = x
        .iter()
        .map(|a| x.iter().map(|b| rbf_kernel(a, b, gamma)).collect())
        .collect();
    let mut smo = Smo {
        kernel: &kernel,
        y: targets.to_vec(),
        alpha: vec![T::zero(); n],
        errors: targets.iter().map(|y| -*y).collect(),
        bias: T::zero(),
        c: config.c,
        tol: config.tolerance,
        eps: T::lit(1e-12).max(T::epsilon()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut quiet = 0;
    let mut sweeps = 0;
    while quiet < config.max_passes && sweeps < config.max_sweeps {
        sweeps += 1;
        order.shuffle(&mut rng);
        let mut changed = 0;
        for idx in 0..n {
            let i = order[idx];
            if smo.examine(i, &order) {
                changed += 1;
            }
        }
        if changed == 0 {
            quiet += 1;
        } else {
            quiet = 0;
        }
    }
    smo.settle_bias();
    DualSolution {
        alphas: smo.alpha,
        targets: smo.y,
        bias: smo.bias,
        sweeps,
    }
}

fn check_inputs<T: Scalar>(x: &[Vec<T>], n_labels: usize) -> Result<usize> {
    if x.is_empty() {
        return Err(ModelError::EmptyData);
    }
    if x.len() != n_labels {
        return Err(ModelError::LengthMismatch {
            inputs: x.len(),
            targets: n_labels,
        });
    }
    let dim = x[0].len();
    if let Some((row, v)) = x.iter().enumerate().find(|(_, v)| v.len() != dim) {
        return Err(ModelError::RaggedInput {
            row,
            expected: dim,
            found: v.len(),
        });
    }
    if let Some(row) = x.iter().position(|v| v.iter().any(|f| !f.is_finite())) {
        return Err(ModelError::NonFiniteInput { row });
    }
    Ok(dim)
}

pub fn train_svm<T: Scalar>(x: &[Vec<T>], labels: &[Label], config: &SvmConfig<T>) -> Result<SvmModel<T>> {
    config.validate()?;
    let dim = check_inputs(x, labels.len())?;
    let classes: Vec<Label> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(ModelError::SingleClass(classes[0]));
    }
    let gamma = config
        .gamma
        .unwrap_or_else(|| T::one() / T::from_usize_lossy(dim.max(1)));
    let mut machines = Vec::new();
    for (a, &pos) in classes.iter().enumerate() {
        for &neg in &classes[a + 1..] {
            let rows: Vec<usize> = (0..x.len())
                .filter(|&i| labels[i] == pos || labels[i] == neg)
                .collect();
            let px: Vec<Vec<T>> = rows.iter().map(|&i| x[i].clone()).collect();
            let py: Vec<T> = rows
                .iter()
                .map(|&i| if labels[i] == pos { T::one() } else { -T::one() })
                .collect();
            let seed = derive_seed(config.seed, &["svm", &pos.to_string(), &neg.to_string()]);
            let sol = solve_binary_dual(&px, &py, gamma, config, seed);
            let (support_vectors, dual_coefficients) = sol
                .alphas
                .iter()
                .zip(&sol.targets)
                .zip(px)
                .filter(|((a, _), _)| **a > T::zero())
                .map(|((a, y), v)| (v, *a * *y))
                .unzip();
            machines.push(BinaryMachine {
                positive: pos,
                negative: neg,
                support_vectors,
                dual_coefficients,
                bias: sol.bias,
            });
        }
    }
    Ok(SvmModel {
        classes,
        machines,
        gamma,
        dimension: dim,
        config: config.clone(),
    })
}

/// One-vs-one majority vote. A zero decision value votes for the smaller
/// label, and vote ties go to the smallest label.
pub fn predict_svm<T: Scalar>(model: &SvmModel<T>, x: &[T]) -> Result<Label> {
    if x.len() != model.dimension {
        return Err(ModelError::DimensionMismatch {
            expected: model.dimension,
            found: x.len(),
        });
    }
    let mut votes = vec![0usize; model.classes.len()];
    let slot = |l: Label| model.classes.binary_search(&l).expect("machine label is a class");
    for m in &model.machines {
        let winner = if m.decision(x, model.gamma) >= T::zero() {
            m.positive
        } else {
            m.negative
        };
        votes[slot(winner)] += 1;
    }
    let best = votes.iter().copied().max().unwrap_or(0);
    let idx = votes.iter().position(|v| *v == best).unwrap_or(0);
    Ok(model.classes[idx])
}
