//! Standard normal distribution functions and truncated sampling over
//! interval unions.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;

use super::interval::IntervalUnion;
use crate::error::{invalid, Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF, accurate to a few ulp over the whole real line.
pub fn std_normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation.
pub fn std_normal_sf(x: f64) -> f64 {
    std_normal_cdf(-x)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// `ln(1 - Φ(x))`, finite for every finite `x`.
pub fn log_std_normal_sf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if x < 0.0 {
        return (-std_normal_cdf(x)).ln_1p();
    }
    if x < 30.0 {
        return std_normal_sf(x).ln();
    }
    // Asymptotic Mills-ratio expansion; the series terms are < 1e-10 here.
    let r = 1.0 / (x * x);
    let series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)));
    -0.5 * x * x - x.ln() - LN_SQRT_2PI + series.ln()
}

/// Inverse of the standard normal CDF.
///
/// Acklam's rational approximation followed by one Halley step against
/// `erfc`, which brings the relative error down to machine precision.
pub fn std_normal_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let tail = |q: f64| {
        let t = (-2.0 * q.ln()).sqrt();
        (((((C[0] * t + C[1]) * t + C[2]) * t + C[3]) * t + C[4]) * t + C[5])
            / ((((D[0] * t + D[1]) * t + D[2]) * t + D[3]) * t + 1.0)
    };
    let mut x = if p < P_LOW {
        tail(p)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail(1.0 - p)
    };

    // Halley refinement. Work on the smaller tail for accuracy.
    let e = if x < 0.0 {
        std_normal_cdf(x) - p
    } else {
        (1.0 - p) - std_normal_sf(x)
    };
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    if u.is_finite() {
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

/// `ln P(a <= Z <= b)` for a standard normal `Z`.
pub(crate) fn log_std_interval_mass(a: f64, b: f64) -> f64 {
    if b <= a || a.is_nan() || b.is_nan() {
        return f64::NEG_INFINITY;
    }
    if a >= 0.0 {
        let la = log_std_normal_sf(a);
        let lb = log_std_normal_sf(b);
        la + (-(lb - la).exp()).ln_1p()
    } else if b <= 0.0 {
        log_std_interval_mass(-b, -a)
    } else {
        (-(std_normal_sf(b) + std_normal_cdf(a))).ln_1p()
    }
}

/// Draw a standard normal restricted to `[a, b]`, `a < b`.
fn sample_std_interval<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a >= 0.0 {
        sample_upper(a, b, rng)
    } else if b <= 0.0 {
        -sample_upper(-b, -a, rng)
    } else {
        let lo = std_normal_cdf(a);
        let hi = std_normal_cdf(b);
        let u = lo + (hi - lo) * rng.random::<f64>();
        std_normal_quantile(u).clamp(a, b)
    }
}

fn sample_upper<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a < 30.0 {
        let qa = std_normal_sf(a);
        let qb = std_normal_sf(b);
        let u = qb + (qa - qb) * rng.random::<f64>();
        return (-std_normal_quantile(u)).clamp(a, b);
    }
    // Far tail: rejection from a uniform or a translated exponential.
    if a * (b - a) < 1.0 {
        loop {
            let x = a + (b - a) * rng.random::<f64>();
            let log_accept = -0.5 * (x - a) * (x + a);
            if rng.random::<f64>().ln() <= log_accept {
                return x;
            }
        }
    }
    loop {
        let e: f64 = -(1.0 - rng.random::<f64>()).ln();
        let x = a + e / a;
        if x > b {
            continue;
        }
        if rng.random::<f64>().ln() <= -0.5 * (x - a) * (x - a) {
            return x;
        }
    }
}

/// Sample from `N(mean, sd^2)` restricted to `domain`.
///
/// An interval is chosen with probability proportional to its Gaussian mass
/// (computed in log space) and the draw is made by inverse CDF inside it.
/// Only an empty domain, or one made of zero-width pieces, is rejected.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    domain: &IntervalUnion,
    rng: &mut R,
) -> Result<f64> {
    if !(sd > 0.0) || !sd.is_finite() || !mean.is_finite() {
        return Err(invalid(format!("truncated normal with mean {mean}, sd {sd}")));
    }
    let pieces = domain.intervals();
    if pieces.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let std: Vec<(f64, f64)> = pieces
        .iter()
        .map(|iv| ((iv.lo - mean) / sd, (iv.hi - mean) / sd))
        .collect();
    let log_mass: Vec<f64> = std.iter().map(|&(a, b)| log_std_interval_mass(a, b)).collect();
    let top = log_mass.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(Error::EmptyDomain);
    }
    let weights: Vec<f64> = log_mass.iter().map(|&l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut pick = rng.random::<f64>() * total;
    let mut chosen = weights.len() - 1;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 && pick < *w {
            chosen = i;
            break;
        }
        pick -= w;
    }
    // Guard against landing on a zero-weight tail piece through rounding.
    if weights[chosen] == 0.0 {
        chosen = weights.iter().rposition(|w| *w > 0.0).unwrap_or(chosen);
    }
    let (a, b) = std[chosen];
    let z = sample_std_interval(a, b, rng);
    let iv = pieces[chosen];
    Ok((mean + sd * z).clamp(iv.lo, iv.hi))
}
