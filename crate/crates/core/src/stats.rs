//! Small numerical building blocks: standard normal functions, the bivariate
//! normal CDF, Kendall's tau, and order-statistic ranks.
#![allow(clippy::excessive_precision)]

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use statrs::function::erf::{erfc, erfc_inv};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal quantile. Returns ±∞ at the endpoints.
#[inline]
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        let x = -SQRT_2 * erfc_inv(2.0 * p);
        // One Halley step; erfc_inv alone is only good to ~1e-10.
        let e = norm_cdf(x) - p;
        let d = norm_pdf(x);
        if d > 0.0 && e.is_finite() {
            let t = e / d;
            x - t / (1.0 + 0.5 * x * t)
        } else {
            x
        }
    }
}

// Gauss-Legendre half-rules (weight, abscissa) used by `bvn_upper`.
const GL6: [(f64, f64); 3] = [
    (0.1713244923791705, -0.9324695142031522),
    (0.3607615730481384, -0.6612093864662647),
    (0.4679139345726904, -0.2386191860831970),
];
const GL12: [(f64, f64); 6] = [
    (0.4717533638651177e-01, -0.9815606342467191),
    (0.1069393259953183, -0.9041172563704750),
    (0.1600783285433464, -0.7699026741943050),
    (0.2031674267230659, -0.5873179542866171),
    (0.2334925365383547, -0.3678314989981802),
    (0.2491470458134029, -0.1252334085114692),
];
const GL20: [(f64, f64); 10] = [
    (0.1761400713915212e-01, -0.9931285991850949),
    (0.4060142980038694e-01, -0.9639719272779138),
    (0.6267204833410906e-01, -0.9122344282513259),
    (0.8327674157670475e-01, -0.8391169718222188),
    (0.1019301198172404, -0.7463319064601508),
    (0.1181945319615184, -0.6360536807265150),
    (0.1316886384491766, -0.5108670019508271),
    (0.1420961093183821, -0.3737060887154196),
    (0.1491729864726037, -0.2277858511416451),
    (0.1527533871307259, -0.7652652113349733e-01),
];

/// P(X > h, Y > k) for a standard bivariate normal with correlation `r`
/// (Drezner–Wesolowsky with Genz's refinements for |r| near 1).
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let quad: &[(f64, f64)] = if r.abs() < 0.3 {
        &GL6
    } else if r.abs() < 0.75 {
        &GL12
    } else {
        &GL20
    };
    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        for &(w, x) in quad {
            for sgn in [-1.0, 1.0] {
                let sn = (asr * (sgn * x + 1.0) / 2.0).sin();
                bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        bvn * asr / (2.0 * two_pi) + norm_cdf(-h) * norm_cdf(-k)
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = (1.0 - r) * (1.0 + r);
            let mut a = as_.sqrt();
            let bs = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 16.0;
            bvn = a
                * (-(bs / as_ + hk) / 2.0).exp()
                * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
            if hk > -160.0 {
                let b = bs.sqrt();
                bvn -= (-hk / 2.0).exp()
                    * two_pi.sqrt()
                    * norm_cdf(-b / a)
                    * b
                    * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
            }
            a /= 2.0;
            for &(w, x) in quad {
                for sgn in [-1.0, 1.0] {
                    let xs = (a * (sgn * x + 1.0)).powi(2);
                    let rs = (1.0 - xs).sqrt();
                    let asr = -(bs / xs + hk) / 2.0;
                    if asr > -100.0 {
                        bvn += a
                            * w
                            * asr.exp()
                            * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                                - (1.0 + c * xs * (1.0 + d * xs)));
                    }
                }
            }
            bvn = -bvn / two_pi;
        }
        if r > 0.0 {
            bvn + norm_cdf(-h.max(k))
        } else {
            -bvn + (norm_cdf(-h) - norm_cdf(-k)).max(0.0)
        }
    }
}

/// P(X ≤ x, Y ≤ y) for a standard bivariate normal with correlation `r`.
pub fn bvn_cdf(x: f64, y: f64, r: f64) -> f64 {
    if x == f64::NEG_INFINITY || y == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return norm_cdf(y);
    }
    if y == f64::INFINITY {
        return norm_cdf(x);
    }
    bvn_upper(-x, -y, r).clamp(0.0, 1.0)
}

/// Kendall's tau-b in O(n log n) (Knight's merge-sort algorithm).
///
/// Returns 0 when either variable is constant.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "kendall_tau: length mismatch");
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let tied_pairs = |run: u64| run * (run.saturating_sub(1)) / 2;

    // ties in x, and joint ties
    let mut n1 = 0u64;
    let mut n3 = 0u64;
    let mut run_x = 1u64;
    let mut run_xy = 1u64;
    for i in 1..n {
        if pairs[i].0 == pairs[i - 1].0 {
            run_x += 1;
            if pairs[i].1 == pairs[i - 1].1 {
                run_xy += 1;
            } else {
                n3 += tied_pairs(run_xy);
                run_xy = 1;
            }
        } else {
            n1 += tied_pairs(run_x);
            n3 += tied_pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    n1 += tied_pairs(run_x);
    n3 += tied_pairs(run_xy);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);

    let mut n2 = 0u64;
    let mut run_y = 1u64;
    for i in 1..n {
        if ys[i] == ys[i - 1] {
            run_y += 1;
        } else {
            n2 += tied_pairs(run_y);
            run_y = 1;
        }
    }
    n2 += tied_pairs(run_y);

    let denom = (((n0 - n1) as f64) * ((n0 - n2) as f64)).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    let numer = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    (numer / denom).clamp(-1.0, 1.0)
}

// Bottom-up merge sort counting strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    let mut swaps = 0u64;
    let mut width = 1;
    while width < n {
        let mut lo = 0;
        while lo < n {
            let mid = (lo + width).min(n);
            let hi = (lo + 2 * width).min(n);
            let (mut i, mut j, mut k) = (lo, mid, lo);
            while i < mid && j < hi {
                if v[j] < v[i] {
                    swaps += (mid - i) as u64;
                    buf[k] = v[j];
                    j += 1;
                } else {
                    buf[k] = v[i];
                    i += 1;
                }
                k += 1;
            }
            buf[k..k + (mid - i)].copy_from_slice(&v[i..mid]);
            k += mid - i;
            buf[k..k + (hi - j)].copy_from_slice(&v[j..hi]);
            lo = hi;
        }
        v.copy_from_slice(buf);
        width *= 2;
    }
    swaps
}

/// Smallest rank `k ≥ 1` with `k / (n + 1) ≥ level`; values above `n` mean the
/// level is only reached by the point at infinity.
///
/// A relative slack of 1e-9 absorbs rounding in products such as `0.9 * 10`.
pub fn conformal_rank(level: f64, n: usize) -> usize {
    let x = level * (n as f64 + 1.0);
    let k = (x - 1e-9 * x.abs().max(1.0)).ceil();
    if k < 1.0 {
        1
    } else {
        k as usize
    }
}

/// Debye function D1(x) = (1/x) ∫₀ˣ t/(eᵗ−1) dt for x > 0, by composite
/// Simpson integration.
pub fn debye1(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        return 1.0 - x / 4.0;
    }
    if x < 0.0 {
        return debye1(-x) - x / 2.0;
    }
    let m = 400;
    let step = x / m as f64;
    let f = |t: f64| if t == 0.0 { 1.0 } else { t / t.exp_m1() };
    let mut acc = f(0.0) + f(x);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * step);
    }
    acc * step / 3.0 / x
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}
