//! Biased (V-statistic) maximum mean discrepancy under an RBF kernel, with
//! cached kernel sums for the treated-vs-control comparison.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::gp::median_distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    MedianHeuristic,
}

/// A fixed bandwidth or `"median_heuristic"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    Fixed(f64),
    Rule(BandwidthRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    pub bandwidth: Bandwidth,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            bandwidth: Bandwidth::Rule(BandwidthRule::MedianHeuristic),
        }
    }
}

impl KernelSpec {
    pub fn fixed(bandwidth: f64) -> Self {
        KernelSpec {
            bandwidth: Bandwidth::Fixed(bandwidth),
        }
    }

    /// Resolves the bandwidth against `points` (used only by the heuristic).
    pub fn resolve(&self, points: &[&[f64]]) -> Result<Rbf> {
        match self.bandwidth {
            Bandwidth::Fixed(b) => Rbf::new(b),
            Bandwidth::Rule(BandwidthRule::MedianHeuristic) => {
                let dim = points.first().map_or(0, |p| p.len());
                let flat: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
                Rbf::new(median_distance(&flat, dim))
            }
        }
    }
}

/// `k(a, b) = exp(-|a - b|² / (2 σ²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rbf {
    bandwidth: f64,
    gamma: f64,
}

impl Rbf {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(invalid("kernel bandwidth must be positive"));
        }
        Ok(Rbf {
            bandwidth,
            gamma: 0.5 / (bandwidth * bandwidth),
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        libm::exp(-self.gamma * d2)
    }
}

fn finish(s_uu: f64, s_vv: f64, s_uv: f64, w_u: f64, w_v: f64) -> f64 {
    // Paired differences cancel exactly when the two sets are identical.
    let cross = s_uv / (w_u * w_v);
    let m2 = (s_uu / (w_u * w_u) - cross) + (s_vv / (w_v * w_v) - cross);
    libm::sqrt(m2.max(0.0))
}

/// `sqrt(mean k(u, u') + mean k(v, v') − 2 mean k(u, v))`, floored at zero
/// before the root.
pub fn mmd(u: &[&[f64]], v: &[&[f64]], kernel: &Rbf) -> Result<f64> {
    let wu: Vec<(&[f64], f64)> = u.iter().map(|p| (*p, 1.0)).collect();
    let wv: Vec<(&[f64], f64)> = v.iter().map(|p| (*p, 1.0)).collect();
    weighted_mmd(&wu, &wv, kernel)
}

/// MMD between weighted point sets (weights act as multiplicities).
pub fn weighted_mmd(u: &[(&[f64], f64)], v: &[(&[f64], f64)], kernel: &Rbf) -> Result<f64> {
    if u.is_empty() || v.is_empty() {
        return Err(Error::EmptySet("mmd"));
    }
    let sum = |a: &[(&[f64], f64)], b: &[(&[f64], f64)]| -> f64 {
        let mut s = 0.0;
        for (p, wp) in a {
            for (q, wq) in b {
                s += wp * wq * kernel.eval(p, q);
            }
        }
        s
    };
    let w_u: f64 = u.iter().map(|p| p.1).sum();
    let w_v: f64 = v.iter().map(|p| p.1).sum();
    Ok(finish(sum(u, u), sum(v, v), sum(u, v), w_u, w_v))
}

/// Treated and control point sets with cached kernel sums, updated in
/// `O(n)` per added point.
#[derive(Debug, Clone)]
pub struct KernelSums {
    kernel: Rbf,
    treated: Vec<(Vec<f64>, f64)>,
    control: Vec<(Vec<f64>, f64)>,
    s_tt: f64,
    s_cc: f64,
    s_tc: f64,
    w_t: f64,
    w_c: f64,
}

impl KernelSums {
    pub fn new(kernel: Rbf) -> Self {
        KernelSums {
            kernel,
            treated: Vec::new(),
            control: Vec::new(),
            s_tt: 0.0,
            s_cc: 0.0,
            s_tc: 0.0,
            w_t: 0.0,
            w_c: 0.0,
        }
    }

    pub fn kernel(&self) -> &Rbf {
        &self.kernel
    }

    pub fn n_treated(&self) -> usize {
        self.treated.len()
    }

    pub fn n_control(&self) -> usize {
        self.control.len()
    }

    fn cross(&self, point: &[f64], set: &[(Vec<f64>, f64)]) -> f64 {
        set.iter().map(|(q, w)| w * self.kernel.eval(point, q)).sum()
    }

    /// Adds `point` with multiplicity `weight` to the treated (`t`) or
    /// control set.
    pub fn add(&mut self, t: bool, point: Vec<f64>, weight: f64) {
        let to_t = self.cross(&point, &self.treated);
        let to_c = self.cross(&point, &self.control);
        let self_k = weight * weight;
        if t {
            self.s_tt += 2.0 * weight * to_t + self_k;
            self.s_tc += weight * to_c;
            self.w_t += weight;
            self.treated.push((point, weight));
        } else {
            self.s_cc += 2.0 * weight * to_c + self_k;
            self.s_tc += weight * to_t;
            self.w_c += weight;
            self.control.push((point, weight));
        }
    }

    fn check(&self) -> Result<()> {
        if self.treated.is_empty() {
            return Err(Error::EmptySet("treated set"));
        }
        if self.control.is_empty() {
            return Err(Error::EmptySet("control set"));
        }
        Ok(())
    }

    pub fn mmd(&self) -> Result<f64> {
        self.check()?;
        Ok(finish(self.s_tt, self.s_cc, self.s_tc, self.w_t, self.w_c))
    }

    /// MMD after tentatively adding `point` (weight 1) to arm `t`.
    pub fn mmd_if_added(&self, t: bool, point: &[f64]) -> Result<f64> {
        self.check()?;
        let to_t = self.cross(point, &self.treated);
        let to_c = self.cross(point, &self.control);
        Ok(if t {
            finish(self.s_tt + 2.0 * to_t + 1.0, self.s_cc, self.s_tc + to_c, self.w_t + 1.0, self.w_c)
        } else {
            finish(self.s_tt, self.s_cc + 2.0 * to_c + 1.0, self.s_tc + to_t, self.w_t, self.w_c + 1.0)
        })
    }

    /// Same quantity as [`KernelSums::mmd`], recomputed without the cache.
    pub fn mmd_from_scratch(&self) -> Result<f64> {
        let t: Vec<(&[f64], f64)> = self.treated.iter().map(|(p, w)| (p.as_slice(), *w)).collect();
        let c: Vec<(&[f64], f64)> = self.control.iter().map(|(p, w)| (p.as_slice(), *w)).collect();
        weighted_mmd(&t, &c, &self.kernel)
    }
}

/// Expected treated-vs-control MMD after adding a candidate whose confounder
/// is unknown: exact two-branch enumeration over `A ∈ {0, 1}` weighted by
/// `p_a1 = p(A = 1 | x, t)`.
pub fn expected_mmd_after_add(x: &[f64], t: bool, p_a1: f64, sums: &KernelSums) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_a1) {
        return Err(invalid("p_a1 must lie in [0, 1]"));
    }
    let mut f = Vec::with_capacity(x.len() + 1);
    f.extend_from_slice(x);
    f.push(1.0);
    let m1 = sums.mmd_if_added(t, &f)?;
    *f.last_mut().unwrap() = 0.0;
    let m0 = sums.mmd_if_added(t, &f)?;
    Ok(p_a1 * m1 + (1.0 - p_a1) * m0)
}
