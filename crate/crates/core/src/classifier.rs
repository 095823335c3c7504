//! Linear max-margin classifier used as the baseline back end.
//!
//! L2-regularized hinge-loss SVM trained by dual coordinate descent, with
//! the bias folded in as a constant feature. Features are standardized with
//! training-set statistics unless disabled.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::AdLabel;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSpec {
    /// Regularization strength (box constraint on the dual variables).
    pub c: f64,
    pub max_passes: usize,
    pub tol: f64,
    pub standardize: bool,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec {
            c: 1.0,
            max_passes: 1000,
            tol: 1e-6,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    weights: Vec<f64>,
    bias: f64,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

fn sign(label: AdLabel) -> f64 {
    match label {
        AdLabel::Ad => 1.0,
        AdLabel::NonAd => -1.0,
    }
}

impl LinearSvm {
    pub fn fit(spec: &ClassifierSpec, xs: &[Vec<f64>], ys: &[AdLabel], seed: u64) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::invalid("classifier needs one label per feature vector"));
        }
        if !ys.contains(&AdLabel::Ad) || !ys.contains(&AdLabel::NonAd) {
            return Err(Error::invalid("classifier training labels contain a single class"));
        }
        let dim = xs[0].len();
        if xs.iter().any(|x| x.len() != dim) {
            return Err(Error::invalid("feature vectors differ in dimension"));
        }

        let n = xs.len() as f64;
        let (mean, scale) = if spec.standardize {
            let mean: Vec<f64> = (0..dim).map(|k| xs.iter().map(|x| x[k]).sum::<f64>() / n).collect();
            let scale = (0..dim)
                .map(|k| {
                    let var = xs.iter().map(|x| (x[k] - mean[k]).powi(2)).sum::<f64>() / n;
                    if var > 1e-24 {
                        1.0 / var.sqrt()
                    } else {
                        1.0
                    }
                })
                .collect();
            (mean, scale)
        } else {
            (vec![0.0; dim], vec![1.0; dim])
        };

        // augmented, standardized rows: [x..., 1]
        let rows: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| {
                let mut r: Vec<f64> = x
                    .iter()
                    .zip(mean.iter().zip(&scale))
                    .map(|(v, (m, s))| (v - m) * s)
                    .collect();
                r.push(1.0);
                r
            })
            .collect();
        let y: Vec<f64> = ys.iter().map(|&l| sign(l)).collect();
        let qii: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum()).collect();

        let mut alpha = vec![0.0; rows.len()];
        let mut w = vec![0.0; dim + 1];
        let mut order: Vec<usize> = (0..rows.len()).collect();
        for pass in 0..spec.max_passes {
            order.shuffle(&mut rng::stream(seed, "svm", pass as u64));
            let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
            for &i in &order {
                let g = y[i] * dot(&w, &rows[i]) - 1.0;
                let pg = if alpha[i] == 0.0 {
                    g.min(0.0)
                } else if alpha[i] == spec.c {
                    g.max(0.0)
                } else {
                    g
                };
                pg_max = pg_max.max(pg);
                pg_min = pg_min.min(pg);
                if pg.abs() > 1e-12 && qii[i] > 0.0 {
                    let old = alpha[i];
                    alpha[i] = (old - g / qii[i]).clamp(0.0, spec.c);
                    let delta = (alpha[i] - old) * y[i];
                    for (wk, xk) in w.iter_mut().zip(&rows[i]) {
                        *wk += delta * xk;
                    }
                }
            }
            if pg_max - pg_min < spec.tol {
                break;
            }
        }

        let bias = w.pop().expect("bias term");
        Ok(LinearSvm {
            weights: w,
            bias,
            mean,
            scale,
        })
    }

    pub fn decision_value(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .zip(&self.weights)
            .map(|((v, (m, s)), w)| (v - m) * s * w)
            .sum::<f64>()
            + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> AdLabel {
        if self.decision_value(x) >= 0.0 {
            AdLabel::Ad
        } else {
            AdLabel::NonAd
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_points_fit_perfectly() {
        let xs: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let side = if i % 2 == 0 { 1.0 } else { -1.0 };
                vec![side * (1.0 + i as f64 * 0.1), (i as f64 * 0.37).sin()]
            })
            .collect();
        let ys: Vec<AdLabel> = (0..20)
            .map(|i| if i % 2 == 0 { AdLabel::Ad } else { AdLabel::NonAd })
            .collect();
        let svm = LinearSvm::fit(&ClassifierSpec::default(), &xs, &ys, 0).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(svm.predict(x), *y);
        }
    }

    #[test]
    fn identical_inputs_give_constant_prediction() {
        let xs = vec![vec![0.3, -0.2]; 6];
        let ys = [AdLabel::Ad, AdLabel::NonAd, AdLabel::Ad, AdLabel::NonAd, AdLabel::NonAd, AdLabel::Ad];
        let svm = LinearSvm::fit(&ClassifierSpec::default(), &xs, &ys, 0).unwrap();
        let first = svm.predict(&xs[0]);
        assert!(xs.iter().all(|x| svm.predict(x) == first));
    }

    #[test]
    fn single_class_rejected() {
        let xs = vec![vec![1.0], vec![2.0]];
        assert!(LinearSvm::fit(&ClassifierSpec::default(), &xs, &[AdLabel::Ad; 2], 0).is_err());
    }
}
