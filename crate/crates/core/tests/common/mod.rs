//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        kron += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod (7/15) quadrature on `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel: f64, abs: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel: f64, abs: f64, depth: u32) -> f64 {
        let (val, err) = gk15(f, a, b);
        if depth == 0 || err <= abs.max(rel * val.abs()) {
            return val;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, rel, abs / 2.0, depth - 1) + rec(f, m, b, rel, abs / 2.0, depth - 1)
    }
    rec(f, a, b, rel, abs, 40)
}

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Ei through quadrature: `gamma + ln x + int_0^x (e^t - 1)/t dt` for x > 0,
/// and `-int_0^1 exp(x/u)/u du` for x < 0.
pub fn ei_oracle(x: f64) -> f64 {
    if x > 0.0 {
        let f = |t: f64| if t == 0.0 { 1.0 } else { t.exp_m1() / t };
        EULER_GAMMA + x.ln() + integrate(&f, 0.0, x, 1e-14, 0.0)
    } else {
        let z = -x;
        let f = move |u: f64| if u == 0.0 { 0.0 } else { (-z / u).exp() / u };
        -integrate(&f, 0.0, 1.0, 1e-14, 1e-300)
    }
}

/// `int_0^{1/2} t^(a-1) (1-t)^(b-1) dt` with `t = s^(1/a)` to remove the
/// endpoint singularity.
fn half_beta(a: f64, b: f64) -> f64 {
    let f = move |s: f64| (1.0 - s.powf(1.0 / a)).powf(b - 1.0) / a;
    integrate(&f, 0.0, 0.5f64.powf(a), 1e-15, 1e-300)
}

/// `I_{1/2}(a, b)` from two quadratures.
pub fn inc_beta_half_oracle(a: f64, b: f64) -> f64 {
    let lo = half_beta(a, b);
    let hi = half_beta(b, a);
    lo / (lo + hi)
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (l, h) = (lo.ln(), hi.ln());
    (0..n).map(|i| (l + (h - l) * i as f64 / (n - 1) as f64).exp()).collect()
}
