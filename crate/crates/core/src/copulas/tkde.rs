//! Probit-transformation kernel density copula.
//!
//! Pseudo-observations are mapped to normal scores, a product Gaussian kernel
//! density `f̂` is fitted there, and the copula is the copula of `f̂`: points
//! are mapped back through the kernel-smoothed marginal CDFs `G₁`, `G₂`, so the
//! margins are exactly uniform.

use serde::{Deserialize, Serialize};

use crate::copulas::family::clamp01;
use crate::stats::{norm_cdf, norm_pdf, norm_quantile, std_dev};

const TABLE_NODES: usize = 2048;
const TABLE_PAD: f64 = 8.0;
/// Kernels further than this many bandwidths away carry negligible weight.
const PRUNE_Z: f64 = 9.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "TkdeData", into = "TkdeData")]
pub struct TkdeCopula {
    x: Vec<f64>,
    y: Vec<f64>,
    h: [f64; 2],
    gx: MarginTable,
    gy: MarginTable,
}

#[derive(Serialize, Deserialize)]
struct TkdeData {
    bandwidths: [f64; 2],
    x: Vec<f64>,
    y: Vec<f64>,
}

impl From<TkdeData> for TkdeCopula {
    fn from(d: TkdeData) -> Self {
        TkdeCopula::from_normal_scores(d.x, d.y, d.bandwidths)
    }
}

impl From<TkdeCopula> for TkdeData {
    fn from(c: TkdeCopula) -> Self {
        TkdeData {
            bandwidths: c.h,
            x: c.x,
            y: c.y,
        }
    }
}

/// Kernel-smoothed marginal CDF on a regular grid, cubic Hermite
/// interpolated from exact values and densities at the nodes.
#[derive(Debug, Clone)]
struct MarginTable {
    lo: f64,
    step: f64,
    g: Vec<f64>,
    dg: Vec<f64>,
}

impl MarginTable {
    fn new(points: &[f64], h: f64) -> Self {
        let min = points.iter().copied().fold(f64::INFINITY, f64::min);
        let max = points.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = min - TABLE_PAD * h;
        let hi = max + TABLE_PAD * h;
        let step = (hi - lo) / (TABLE_NODES - 1) as f64;
        let n = points.len() as f64;
        let mut g = Vec::with_capacity(TABLE_NODES);
        let mut dg = Vec::with_capacity(TABLE_NODES);
        for k in 0..TABLE_NODES {
            let t = lo + k as f64 * step;
            let (mut c, mut d) = (0.0, 0.0);
            for &p in points {
                let z = (t - p) / h;
                c += norm_cdf(z);
                d += norm_pdf(z);
            }
            g.push(c / n);
            dg.push(d / (n * h));
        }
        g[0] = 0.0;
        g[TABLE_NODES - 1] = 1.0;
        for k in 1..TABLE_NODES {
            if g[k] < g[k - 1] {
                g[k] = g[k - 1];
            }
        }
        Self { lo, step, g, dg }
    }

    /// Hermite interpolant on cell `k` at fraction `s ∈ [0, 1]`, with its
    /// derivative in `s`.
    fn hermite(&self, k: usize, s: f64) -> (f64, f64) {
        let (y0, y1) = (self.g[k], self.g[k + 1]);
        let (m0, m1) = (self.dg[k] * self.step, self.dg[k + 1] * self.step);
        let s2 = s * s;
        let s3 = s2 * s;
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * m1;
        let dv = (6.0 * s2 - 6.0 * s) * y0
            + (3.0 * s2 - 4.0 * s + 1.0) * m0
            + (-6.0 * s2 + 6.0 * s) * y1
            + (3.0 * s2 - 2.0 * s) * m1;
        (v, dv)
    }

    fn cdf(&self, t: f64) -> f64 {
        let pos = (t - self.lo) / self.step;
        if pos <= 0.0 {
            return 0.0;
        }
        let k = pos.floor() as usize;
        if k >= TABLE_NODES - 1 {
            return 1.0;
        }
        let (y0, y1) = (self.g[k], self.g[k + 1]);
        self.hermite(k, pos - k as f64).0.clamp(y0, y1)
    }

    fn quantile(&self, u: f64) -> f64 {
        let k = self.g.partition_point(|&g| g < u).clamp(1, TABLE_NODES - 1) - 1;
        let (y0, y1) = (self.g[k], self.g[k + 1]);
        if y1 <= y0 {
            return self.lo + (k as f64 + 0.5) * self.step;
        }
        let (mut a, mut b) = (0.0, 1.0);
        let mut s = ((u - y0) / (y1 - y0)).clamp(0.0, 1.0);
        for _ in 0..50 {
            let (v, dv) = self.hermite(k, s);
            let r = v - u;
            if r.abs() < 1e-15 {
                break;
            }
            if r > 0.0 {
                b = s;
            } else {
                a = s;
            }
            let mut next = s - r / dv;
            if !(next.is_finite() && next > a && next < b) {
                next = 0.5 * (a + b);
            }
            if (next - s).abs() < 1e-14 {
                s = next;
                break;
            }
            s = next;
        }
        self.lo + (k as f64 + s) * self.step
    }
}

impl TkdeCopula {
    /// Fits to paired pseudo-observations. Callers guarantee equal lengths
    /// and `n ≥ 2`.
    pub fn fit(u: &[f64], v: &[f64]) -> Self {
        let n = u.len();
        let lo = 1.0 / (2.0 * (n as f64 + 1.0));
        let probit = |p: &f64| norm_quantile(p.clamp(lo, 1.0 - lo));
        let x: Vec<f64> = u.iter().map(probit).collect();
        let y: Vec<f64> = v.iter().map(probit).collect();
        let scale = (n as f64).powf(-1.0 / 6.0);
        let bw = |s: &[f64]| {
            let sd = std_dev(s);
            if sd.is_finite() && sd > 0.0 {
                sd * scale
            } else {
                scale
            }
        };
        let h = [bw(&x), bw(&y)];
        Self::from_normal_scores(x, y, h)
    }

    fn from_normal_scores(x: Vec<f64>, y: Vec<f64>, h: [f64; 2]) -> Self {
        let gx = MarginTable::new(&x, h[0]);
        let gy = MarginTable::new(&y, h[1]);
        Self { x, y, h, gx, gy }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn bandwidths(&self) -> [f64; 2] {
        self.h
    }

    fn kde(&self, a: f64, b: f64) -> f64 {
        let [h1, h2] = self.h;
        let s: f64 = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(&xi, &yi)| norm_pdf((a - xi) / h1) * norm_pdf((b - yi) / h2))
            .sum();
        s / (self.n() as f64 * h1 * h2)
    }

    fn marginal_density(points: &[f64], h: f64, t: f64) -> f64 {
        points.iter().map(|&p| norm_pdf((t - p) / h)).sum::<f64>() / (points.len() as f64 * h)
    }

    fn to_scores(&self, u: f64, v: f64) -> (f64, f64) {
        (self.gx.quantile(clamp01(u)), self.gy.quantile(clamp01(v)))
    }

    pub fn pdf(&self, u: f64, v: f64) -> f64 {
        let (a, b) = self.to_scores(u, v);
        let g1 = Self::marginal_density(&self.x, self.h[0], a);
        let g2 = Self::marginal_density(&self.y, self.h[1], b);
        let denom = g1 * g2;
        if denom > 0.0 {
            self.kde(a, b) / denom
        } else {
            1.0
        }
    }

    pub fn cdf(&self, u: f64, v: f64) -> f64 {
        if u <= 0.0 || v <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return v.min(1.0);
        }
        if v >= 1.0 {
            return u;
        }
        let (a, b) = self.to_scores(u, v);
        let [h1, h2] = self.h;
        let s: f64 = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(&xi, &yi)| norm_cdf((a - xi) / h1) * norm_cdf((b - yi) / h2))
            .sum();
        (s / self.n() as f64).clamp(0.0, u.min(v))
    }

    /// Mixture weights of the kernels given a value on one axis, pruned to
    /// the components that matter.
    fn weights(conditioning: &[f64], h: f64, t: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let mut total = 0.0;
        for (i, &c) in conditioning.iter().enumerate() {
            let z = (t - c) / h;
            if z.abs() < PRUNE_Z {
                let w = (-0.5 * z * z).exp();
                total += w;
                out.push((i, w));
            }
        }
        if total <= 0.0 {
            // Far outside the data: fall back to the nearest kernel.
            let nearest = conditioning
                .iter()
                .enumerate()
                .min_by(|a, b| (t - a.1).abs().total_cmp(&(t - b.1).abs()))
                .map(|(i, _)| i)
                .unwrap_or(0);
            return vec![(nearest, 1.0)];
        }
        for w in &mut out {
            w.1 /= total;
        }
        out
    }

    fn mixture_cdf(points: &[f64], h: f64, weights: &[(usize, f64)], t: f64) -> (f64, f64) {
        let mut cdf = 0.0;
        let mut pdf = 0.0;
        for &(i, w) in weights {
            let z = (t - points[i]) / h;
            cdf += w * norm_cdf(z);
            pdf += w * norm_pdf(z);
        }
        (cdf, pdf / h)
    }

    fn mixture_quantile(points: &[f64], h: f64, weights: &[(usize, f64)], target: f64) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut t = 0.0;
        for &(i, w) in weights {
            lo = lo.min(points[i]);
            hi = hi.max(points[i]);
            t += w * points[i];
        }
        lo -= 12.0 * h;
        hi += 12.0 * h;
        for _ in 0..100 {
            let (c, d) = Self::mixture_cdf(points, h, weights, t);
            let r = c - target;
            if r.abs() < 1e-12 {
                break;
            }
            if r > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let mut next = t - r / d;
            if !(next.is_finite() && next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - t).abs() < 1e-12 * (1.0 + t.abs()) {
                t = next;
                break;
            }
            t = next;
        }
        t
    }

    /// `P(U ≤ u | V = v)`.
    pub fn cond_second(&self, u: f64, v: f64) -> f64 {
        let (a, b) = self.to_scores(u, v);
        let w = Self::weights(&self.y, self.h[1], b);
        Self::mixture_cdf(&self.x, self.h[0], &w, a).0.clamp(0.0, 1.0)
    }

    /// `P(V ≤ v | U = u)`.
    pub fn cond_first(&self, u: f64, v: f64) -> f64 {
        let (a, b) = self.to_scores(u, v);
        let w = Self::weights(&self.x, self.h[0], a);
        Self::mixture_cdf(&self.y, self.h[1], &w, b).0.clamp(0.0, 1.0)
    }

    pub fn inv_cond_second(&self, w: f64, v: f64) -> f64 {
        let b = self.gy.quantile(clamp01(v));
        let weights = Self::weights(&self.y, self.h[1], b);
        let a = Self::mixture_quantile(&self.x, self.h[0], &weights, clamp01(w));
        self.gx.cdf(a)
    }

    pub fn inv_cond_first(&self, w: f64, u: f64) -> f64 {
        let a = self.gx.quantile(clamp01(u));
        let weights = Self::weights(&self.x, self.h[0], a);
        let b = Self::mixture_quantile(&self.y, self.h[1], &weights, clamp01(w));
        self.gy.cdf(b)
    }

    /// Trace of the kernel smoother, `Σ K_H(0) / (n f̂(x_i, y_i))`, capped at
    /// `n / 2`.
    pub fn effective_params(&self) -> f64 {
        let n = self.n() as f64;
        let k0 = 1.0 / (2.0 * std::f64::consts::PI * self.h[0] * self.h[1]);
        let trace: f64 = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(&xi, &yi)| k0 / (n * self.kde(xi, yi)))
            .sum();
        trace.min(n / 2.0)
    }

    /// Draws a point from the fitted copula using two uniforms.
    pub fn sample_with(&self, pick: f64, z1: f64, z2: f64) -> (f64, f64) {
        let i = ((pick * self.n() as f64) as usize).min(self.n() - 1);
        let a = self.x[i] + self.h[0] * z1;
        let b = self.y[i] + self.h[1] * z2;
        (self.gx.cdf(a), self.gy.cdf(b))
    }

    /// Kendall's tau of the fitted density, evaluated by a fixed-seed sample
    /// in normal-score space (tau is invariant to the marginal maps).
    pub fn kendall_tau(&self) -> f64 {
        use rand::{Rng, SeedableRng};
        use rand_distr::StandardNormal;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x7a0);
        let m = 4000;
        let mut a = Vec::with_capacity(m);
        let mut b = Vec::with_capacity(m);
        for _ in 0..m {
            let i = rng.random_range(0..self.n());
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            a.push(self.x[i] + self.h[0] * z1);
            b.push(self.y[i] + self.h[1] * z2);
        }
        crate::stats::kendall_tau(&a, &b)
    }
}
