//! Special functions used by the models and the statistics.
//!
//! Everything is computed from `libm` primitives so the crate stays `no_std`.

use libm::{exp, fabs, log, sqrt};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 100_000;

/// Entire exponential integral `Ein(x) = ∫₀ˣ (1 − e^{−s})/s ds`.
///
/// Power series; use only for moderate `|x|` (it is exact to rounding for
/// `|x| ≤ 2`).
pub fn ein(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut term = 1.0; // x^k / k!
    for k in 1..200 {
        term *= x / k as f64;
        let contrib = term / k as f64;
        if k % 2 == 1 {
            sum += contrib;
        } else {
            sum -= contrib;
        }
        if fabs(contrib) <= EPS * fabs(sum) {
            break;
        }
    }
    sum
}

/// Exponential integral `E1(x) = ∫ₓ^∞ e^{−s}/s ds` for `x > 0`.
///
/// Series below 1, Lentz continued fraction above. Returns `+∞` at 0 and
/// `0` at `+∞`.
pub fn e1(x: f64) -> f64 {
    if x.is_nan() || x < 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return f64::INFINITY;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    if x <= 1.0 {
        return -EULER_GAMMA - log(x) + ein(x);
    }
    let mut b = x + 1.0;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        let del = c * d;
        h *= del;
        if fabs(del - 1.0) < EPS {
            break;
        }
    }
    h * exp(-x)
}

/// `E1(a·t) − E1(b·t)` for `0 < a ≤ b`, `t ≥ 0`, without cancellation near
/// `t = 0` (where the difference tends to `ln(b/a)`).
pub fn e1_pair_difference(a: f64, b: f64, t: f64) -> f64 {
    if t == f64::INFINITY {
        return 0.0;
    }
    if b * t <= 1.0 {
        log(b / a) + ein(a * t) - ein(b * t)
    } else {
        e1(a * t) - e1(b * t)
    }
}

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = core::f64::consts::PI;
        return log(pi / libm::sin(pi * x)) - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + G + 0.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * log(2.0 * core::f64::consts::PI) + (x + 0.5) * log(t) - t + log(acc)
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_cf(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 − P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_cf(a, x)
    }
}

fn gamma_prefactor(a: f64, x: f64) -> f64 {
    exp(-x + a * log(x) - ln_gamma(a))
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if fabs(del) < fabs(sum) * EPS {
            break;
        }
    }
    sum * gamma_prefactor(a, x)
}

fn gamma_cf(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if fabs(d) < TINY {
            d = TINY;
        }
        c = b + an / c;
        if fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if fabs(del - 1.0) < EPS {
            break;
        }
    }
    gamma_prefactor(a, x) * h
}

/// CDF of the chi-square distribution.
pub fn chi2_cdf(x: f64, dof: f64) -> f64 {
    gamma_p(0.5 * dof, 0.5 * x)
}

/// Density of the chi-square distribution.
pub fn chi2_pdf(x: f64, dof: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = 0.5 * dof;
    exp((k - 1.0) * log(x) - 0.5 * x - k * core::f64::consts::LN_2 - ln_gamma(k))
}

/// Quantile of the standard normal distribution.
///
/// Acklam's rational approximation followed by one Halley step against
/// `erfc`, which brings it to full double precision.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
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
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = sqrt(-2.0 * log(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = sqrt(-2.0 * log(1.0 - p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = 0.5 * libm::erfc(-x / core::f64::consts::SQRT_2) - p;
    let u = e * sqrt(2.0 * core::f64::consts::PI) * exp(0.5 * x * x);
    x - u / (1.0 + 0.5 * x * u)
}

/// Quantile of the chi-square distribution with `dof` degrees of freedom.
///
/// Wilson–Hilferty starting point, then Newton iterations on the
/// incomplete-gamma CDF.
pub fn chi2_quantile(p: f64, dof: f64) -> f64 {
    let z = normal_quantile(p);
    let h = 2.0 / (9.0 * dof);
    let cube = 1.0 - h + z * sqrt(h);
    let mut x = if cube > 0.0 {
        dof * cube * cube * cube
    } else {
        0.5 * dof
    };
    for _ in 0..100 {
        let f = if p > 0.5 {
            (1.0 - p) - gamma_q(0.5 * dof, 0.5 * x)
        } else {
            gamma_p(0.5 * dof, 0.5 * x) - p
        };
        let pdf = chi2_pdf(x, dof);
        if pdf <= 0.0 || !pdf.is_finite() {
            break;
        }
        let mut next = x - f / pdf;
        if next <= 0.0 {
            next = 0.5 * x;
        }
        let step = fabs(next - x);
        x = next;
        if step <= 1e-14 * x {
            break;
        }
    }
    x
}
