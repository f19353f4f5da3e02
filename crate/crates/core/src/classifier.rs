//! Glaucoma probability from the cup-to-disk ratio via a fitted logistic
//! curve `sigmoid(a * (gamma - b))`.
//!
//! Fitting is a coarse grid search over slope and inflection followed by
//! gradient-descent refinement. Both objectives are written in terms of the
//! signed margin `s = z` (label 0) or `s = -z` (label 1), which makes the fit
//! exactly mirror-symmetric under label flips.

use crate::error::{Error, Result};

/// Logistic function without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)`.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    /// Mean squared error between curve and labels.
    #[default]
    SquaredError,
    /// Mean negative log-likelihood.
    LogLikelihood,
}

impl Objective {
    /// Per-sample loss and its derivative in the signed margin.
    fn eval(self, s: f64) -> (f64, f64) {
        let p = sigmoid(s);
        match self {
            Objective::SquaredError => (p * p, 2.0 * p * p * (1.0 - p)),
            Objective::LogLikelihood => (softplus(s), p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmoidClassifier {
    pub a: f64,
    pub b: f64,
}

impl SigmoidClassifier {
    pub fn predict(&self, gamma: f64) -> f64 {
        sigmoid(self.a * (gamma - self.b))
    }

    pub fn predict_all(&self, gammas: &[f64]) -> Vec<f64> {
        gammas.iter().map(|&g| self.predict(g)).collect()
    }

    /// Fraction of positives whose probability reaches `threshold`.
    pub fn sensitivity(&self, gammas: &[f64], labels: &[u8], threshold: f64) -> Option<f64> {
        let pos: Vec<f64> = gammas.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(&g, _)| g).collect();
        if pos.is_empty() {
            return None;
        }
        Some(pos.iter().filter(|&&g| self.predict(g) >= threshold).count() as f64 / pos.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub classifier: SigmoidClassifier,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub objective: Objective,
    pub slope_range: (f64, f64),
    pub slope_steps: usize,
    pub offset_steps: usize,
    pub refine_steps: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            objective: Objective::SquaredError,
            slope_range: (0.1, 200.0),
            slope_steps: 64,
            offset_steps: 256,
            refine_steps: 200,
        }
    }
}

struct Problem<'a> {
    gammas: &'a [f64],
    labels: &'a [u8],
    objective: Objective,
}

impl Problem<'_> {
    fn margin(&self, i: usize, a: f64, b: f64) -> f64 {
        let z = a * (self.gammas[i] - b);
        if self.labels[i] == 1 {
            -z
        } else {
            z
        }
    }

    fn loss(&self, a: f64, b: f64) -> f64 {
        let n = self.gammas.len() as f64;
        (0..self.gammas.len()).map(|i| self.objective.eval(self.margin(i, a, b)).0).sum::<f64>() / n
    }

    fn grad(&self, a: f64, b: f64) -> (f64, f64) {
        let n = self.gammas.len() as f64;
        let (mut ga, mut gb) = (0.0, 0.0);
        for i in 0..self.gammas.len() {
            let d = self.objective.eval(self.margin(i, a, b)).1;
            let sign = if self.labels[i] == 1 { -1.0 } else { 1.0 };
            ga += d * sign * (self.gammas[i] - b);
            gb -= d * sign * a;
        }
        (ga / n, gb / n)
    }
}

/// Log-spaced magnitudes, each used with both signs so flipped labels can be
/// fitted by a negative slope.
pub fn slope_grid(range: (f64, f64), steps: usize) -> Vec<f64> {
    let (lo, hi) = (range.0.ln(), range.1.ln());
    let mut out = Vec::with_capacity(2 * steps);
    for k in 0..steps {
        let t = if steps == 1 { 0.0 } else { k as f64 / (steps - 1) as f64 };
        let m = (lo + t * (hi - lo)).exp();
        out.push(m);
        out.push(-m);
    }
    out
}

pub fn offset_grid(gammas: &[f64], steps: usize) -> Vec<f64> {
    let lo = gammas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = gammas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if steps <= 1 || lo == hi {
        return vec![lo];
    }
    (0..steps).map(|k| lo + (hi - lo) * k as f64 / (steps - 1) as f64).collect()
}

pub fn fit_sigmoid(gammas: &[f64], labels: &[u8]) -> Result<FitResult> {
    fit_sigmoid_with(gammas, labels, &FitOptions::default())
}

pub fn fit_sigmoid_with(gammas: &[f64], labels: &[u8], opts: &FitOptions) -> Result<FitResult> {
    if gammas.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} ratios but {} labels",
            gammas.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Contract(format!("label {l} is not 0 or 1")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos < 2 || labels.len() - pos < 2 {
        return Err(Error::Contract(format!(
            "need at least two samples per class, got {pos} positive and {} negative",
            labels.len() - pos
        )));
    }
    if gammas.iter().any(|g| !g.is_finite()) {
        return Err(Error::Contract("ratios must be finite".into()));
    }
    if !(opts.slope_range.0 > 0.0 && opts.slope_range.0 <= opts.slope_range.1) || opts.slope_steps == 0 {
        return Err(Error::Config("slope grid must be positive and non-empty".into()));
    }
    let prob = Problem { gammas, labels, objective: opts.objective };

    let mut best = (f64::INFINITY, 0.0, 0.0);
    for &b in &offset_grid(gammas, opts.offset_steps) {
        for &a in &slope_grid(opts.slope_range, opts.slope_steps) {
            let l = prob.loss(a, b);
            if l < best.0 {
                best = (l, a, b);
            }
        }
    }

    // Backtracking gradient descent; the step grows after every success.
    let (mut loss, mut a, mut b) = best;
    let mut eta = 1.0;
    for _ in 0..opts.refine_steps {
        let (ga, gb) = prob.grad(a, b);
        if ga == 0.0 && gb == 0.0 {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let (na, nb) = (a - eta * ga, b - eta * gb);
            let nl = prob.loss(na, nb);
            if nl < loss && na.is_finite() && nb.is_finite() {
                (loss, a, b) = (nl, na, nb);
                eta *= 2.0;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(FitResult {
        classifier: SigmoidClassifier { a, b },
        loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert!((softplus(-800.0)).abs() < 1e-300 || softplus(-800.0) == 0.0);
        assert_eq!(softplus(800.0), 800.0);
    }

    #[test]
    fn separable_fit_puts_offset_in_gap() {
        let g = [0.1, 0.15, 0.2, 0.25, 0.5, 0.55, 0.6];
        let y = [0, 0, 0, 0, 1, 1, 1];
        let fit = fit_sigmoid(&g, &y).unwrap();
        let b = fit.classifier.b;
        assert!(b > 0.25 && b < 0.5, "b = {b}");
        for (&gi, &yi) in g.iter().zip(&y) {
            assert_eq!(fit.classifier.predict(gi) >= 0.5, yi == 1);
        }
    }

    #[test]
    fn flipped_labels_mirror_the_fit() {
        let g = [0.1, 0.3, 0.35, 0.4, 0.45, 0.7, 0.2, 0.6];
        let y = [0, 0, 1, 0, 1, 1, 0, 1];
        let flipped: Vec<u8> = y.iter().map(|l| 1 - l).collect();
        let f = fit_sigmoid(&g, &y).unwrap().classifier;
        let r = fit_sigmoid(&g, &flipped).unwrap().classifier;
        assert!(f.a > 0.0 && r.a < 0.0);
        for &gi in &g {
            assert!((f.predict(gi) + r.predict(gi) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(matches!(fit_sigmoid(&[0.1, 0.2, 0.3], &[1, 1, 1]), Err(Error::Contract(_))));
        assert!(matches!(fit_sigmoid(&[0.1, 0.2, 0.3], &[1, 0, 0]), Err(Error::Contract(_))));
    }

    #[test]
    fn fit_beats_every_grid_point() {
        let g = [0.05, 0.2, 0.3, 0.33, 0.41, 0.5, 0.52, 0.8];
        let y = [0, 0, 1, 0, 0, 1, 1, 1];
        for objective in [Objective::SquaredError, Objective::LogLikelihood] {
            let opts = FitOptions { objective, ..Default::default() };
            let fit = fit_sigmoid_with(&g, &y, &opts).unwrap();
            let prob = Problem { gammas: &g, labels: &y, objective };
            for &b in &offset_grid(&g, 256) {
                for &a in &slope_grid((0.1, 200.0), 64) {
                    assert!(fit.loss <= prob.loss(a, b));
                }
            }
        }
    }

    #[test]
    fn inflection_and_sensitivity() {
        let c = SigmoidClassifier { a: 12.0, b: 0.4 };
        assert_eq!(c.predict(0.4), 0.5);
        assert_eq!(c.sensitivity(&[0.3, 0.5, 0.6], &[1, 1, 0], 0.5), Some(0.5));
        assert_eq!(c.sensitivity(&[0.3], &[0], 0.5), None);
    }
}
