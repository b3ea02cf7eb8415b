//! Gaussian-process regression with an RBF kernel (posterior mean only).

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpParams {
    /// Fixed length-scale; median pairwise distance when absent.
    pub length_scale: Option<f64>,
    /// Fixed signal variance; target variance when absent.
    pub signal_variance: Option<f64>,
    /// Noise variance as a share of the signal variance.
    pub noise_ratio: f64,
    /// Absolute noise variance, overriding `noise_ratio`.
    pub noise_variance: Option<f64>,
    pub jitter: f64,
    pub max_jitter: f64,
    /// Refine length-scale and noise by log marginal likelihood.
    pub optimize: bool,
}

impl Default for GpParams {
    fn default() -> Self {
        GpParams {
            length_scale: None,
            signal_variance: None,
            noise_ratio: 0.1,
            noise_variance: None,
            jitter: 1e-8,
            max_jitter: 1e-2,
            optimize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianProcess {
    x: Vec<f64>,
    dim: usize,
    alpha: DVector<f64>,
    mean: f64,
    length_scale: f64,
    signal_variance: f64,
    noise_variance: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of pairwise Euclidean distances between rows; 1 when all rows
/// coincide or there are fewer than two.
pub fn median_distance(x: &[f64], dim: usize) -> f64 {
    let n = if dim == 0 { 0 } else { x.len() / dim };
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(libm::sqrt(sq_dist(
                &x[i * dim..(i + 1) * dim],
                &x[j * dim..(j + 1) * dim],
            )));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(|a, b| a.total_cmp(b));
    let m = if d.len() % 2 == 1 {
        d[d.len() / 2]
    } else {
        0.5 * (d[d.len() / 2 - 1] + d[d.len() / 2])
    };
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

struct Fit {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

fn factor(
    x: &[f64],
    dim: usize,
    y: &DVector<f64>,
    length_scale: f64,
    signal: f64,
    noise: f64,
    params: &GpParams,
) -> Result<Fit> {
    let n = y.len();
    let gamma = 0.5 / (length_scale * length_scale);
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = signal
                * libm::exp(-gamma * sq_dist(&x[i * dim..(i + 1) * dim], &x[j * dim..(j + 1) * dim]));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += noise;
    }
    let mut jitter = params.jitter;
    loop {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(kj) {
            let alpha = chol.solve(y);
            return Ok(Fit { chol, alpha });
        }
        if jitter >= params.max_jitter {
            return Err(Error::NotPositiveDefinite(jitter));
        }
        jitter = (jitter * 10.0).min(params.max_jitter);
    }
}

fn log_marginal_likelihood(fit: &Fit, y: &DVector<f64>) -> f64 {
    let log_det: f64 = fit.chol.l_dirty().diagonal().iter().map(|d| libm::log(*d)).sum();
    -0.5 * y.dot(&fit.alpha) - log_det - 0.5 * y.len() as f64 * libm::log(2.0 * core::f64::consts::PI)
}

impl GaussianProcess {
    pub fn fit(x: &[f64], dim: usize, y: &[f64], params: &GpParams) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::TooFewValues { needed: 1, found: 0 });
        }
        if x.len() != n * dim {
            return Err(Error::DimensionMismatch {
                expected: n * dim,
                found: x.len(),
            });
        }
        let mean = y.iter().sum::<f64>() / n as f64;
        let centered = DVector::from_iterator(n, y.iter().map(|v| v - mean));
        let var = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let signal = params.signal_variance.unwrap_or(var).max(1e-8);
        let mut length_scale = params.length_scale.unwrap_or_else(|| median_distance(x, dim));
        let mut noise = params.noise_variance.unwrap_or(params.noise_ratio * signal);
        let mut fit = factor(x, dim, &centered, length_scale, signal, noise, params)?;

        if params.optimize {
            // Coordinate ascent over log length-scale and log noise with a
            // shrinking multiplicative step.
            let mut best = log_marginal_likelihood(&fit, &centered);
            let mut step = 2.0_f64;
            while step > 1.05 {
                let mut improved = false;
                for (dl, dn) in [(step, 1.0), (1.0 / step, 1.0), (1.0, step), (1.0, 1.0 / step)] {
                    let (l, nz) = (length_scale * dl, (noise * dn).max(1e-10));
                    if let Ok(f) = factor(x, dim, &centered, l, signal, nz, params) {
                        let ll = log_marginal_likelihood(&f, &centered);
                        if ll > best + 1e-9 {
                            best = ll;
                            length_scale = l;
                            noise = nz;
                            fit = f;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    step = libm::sqrt(step);
                }
            }
        }

        Ok(GaussianProcess {
            x: x.to_vec(),
            dim,
            alpha: fit.alpha,
            mean,
            length_scale,
            signal_variance: signal,
            noise_variance: noise,
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let gamma = 0.5 / (self.length_scale * self.length_scale);
        let mut acc = 0.0;
        for (i, a) in self.alpha.iter().enumerate() {
            let xi = &self.x[i * self.dim..(i + 1) * self.dim];
            acc += a * self.signal_variance * libm::exp(-gamma * sq_dist(xi, x));
        }
        self.mean + acc
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_distance_of_three_points() {
        // distances 1, 2, 3
        assert_eq!(median_distance(&[0.0, 1.0, 3.0], 1), 2.0);
        assert_eq!(median_distance(&[4.0, 4.0], 1), 1.0);
    }

    #[test]
    fn interpolates_without_noise() {
        let x: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = x.iter().map(|v| libm::cos(*v)).collect();
        let params = GpParams {
            noise_variance: Some(0.0),
            length_scale: Some(1.0),
            ..Default::default()
        };
        let gp = GaussianProcess::fit(&x, 1, &y, &params).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert!((gp.predict(&[*xi]) - yi).abs() < 1e-6);
        }
    }

    #[test]
    fn duplicate_inputs_need_jitter_or_fail() {
        let x = [1.0, 1.0];
        let y = [0.0, 1.0];
        let ok = GpParams {
            noise_variance: Some(0.0),
            ..Default::default()
        };
        assert!(GaussianProcess::fit(&x, 1, &y, &ok).is_ok());
        let strict = GpParams {
            noise_variance: Some(0.0),
            jitter: 0.0,
            max_jitter: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            GaussianProcess::fit(&x, 1, &y, &strict),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn optimization_does_not_lower_likelihood() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
        let y: Vec<f64> = x.iter().map(|v| libm::sin(*v)).collect();
        let base = GaussianProcess::fit(&x, 1, &y, &GpParams::default()).unwrap();
        let opt = GaussianProcess::fit(
            &x,
            1,
            &y,
            &GpParams {
                optimize: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(opt.noise_variance() <= base.noise_variance());
    }
}
