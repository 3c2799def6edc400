//! Closed-form detection probabilities, the special functions behind them,
//! and the two-colour urn that models adversarial reports inside a subtree.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("Ei is singular at 0")]
    Singular,
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("{0} did not converge")]
    NoConvergence(&'static str),
    #[error("unknown formula {0:?}")]
    UnknownFormula(String),
    #[error("urn invariant violated: {0}")]
    Urn(String),
}

fn bad(msg: impl Into<String>) -> TheoryError {
    TheoryError::BadParameter(msg.into())
}

/// Exponential integral `Ei(x)` in the principal-value sense.
///
/// Positive arguments use the power series up to 40 and the asymptotic
/// expansion beyond. Negative arguments go through `E1(-x)`: its series for
/// `|x| <= 1`, a continued fraction otherwise.
pub fn exponential_integral(x: f64) -> Result<f64, TheoryError> {
    if x == 0.0 {
        return Err(TheoryError::Singular);
    }
    if x.is_nan() {
        return Err(bad("Ei(NaN)"));
    }
    if x < 0.0 {
        return Ok(-e1(-x)?);
    }
    if x <= 40.0 {
        let mut term = 1.0; // x^k / k!
        let mut sum = 0.0;
        for k in 1..1000 {
            term *= x / k as f64;
            let add = term / k as f64;
            sum += add;
            if add < EPS * sum && k as f64 > x {
                return Ok(EULER_GAMMA + x.ln() + sum);
            }
        }
        Err(TheoryError::NoConvergence("Ei series"))
    } else {
        // divergent series; stop at the smallest term
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..200 {
            let next = term * k as f64 / x;
            if next > term || next < EPS * sum {
                break;
            }
            term = next;
            sum += term;
        }
        Ok(x.exp() / x * sum)
    }
}

fn e1(z: f64) -> Result<f64, TheoryError> {
    if z <= 1.0 {
        let mut term = 1.0; // (-z)^k / k!
        let mut sum = 0.0;
        for k in 1..200 {
            term *= -z / k as f64;
            let add = term / k as f64;
            sum += add;
            if add.abs() < EPS * sum.abs().max(TINY) {
                break;
            }
        }
        return Ok(-EULER_GAMMA - z.ln() - sum);
    }
    // modified Lentz on the even form of the continued fraction
    let mut b = z + 1.0;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return Ok(h * (-z).exp());
        }
    }
    Err(TheoryError::NoConvergence("E1 continued fraction"))
}

/// Returns `(I_x(a, b), 1 - I_x(a, b))`, each computed without cancellation.
fn inc_beta_pair(x: f64, a: f64, b: f64) -> Result<(f64, f64), TheoryError> {
    if !(a > 0.0 && b > 0.0) {
        return Err(bad(format!("incomplete beta needs a, b > 0, got ({a}, {b})")));
    }
    if x <= 0.0 {
        return Ok((0.0, 1.0));
    }
    if x >= 1.0 {
        return Ok((1.0, 0.0));
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b)
        + a * x.ln()
        + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        let lo = front * beta_cf(x, a, b)? / a;
        Ok((lo, 1.0 - lo))
    } else {
        let hi = front * beta_cf(1.0 - x, b, a)? / b;
        Ok((1.0 - hi, hi))
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> Result<f64, TheoryError> {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(TheoryError::NoConvergence("incomplete beta continued fraction"))
}

/// `P(Beta(a, b) < 1/2)`.
pub fn reg_inc_beta_half(a: f64, b: f64) -> Result<f64, TheoryError> {
    inc_beta_pair(0.5, a, b).map(|(lo, _)| lo)
}

/// Closed-form quantities that can be evaluated on demand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulaId {
    TrickleFtLb,
    TrickleFtAsym,
    TrickleMlUb,
    TrickleMlLb,
    DiffusionFt,
    RcConstant,
    SpyFtLb,
}

impl FormulaId {
    pub const ALL: [FormulaId; 7] = [
        FormulaId::TrickleFtLb,
        FormulaId::TrickleFtAsym,
        FormulaId::TrickleMlUb,
        FormulaId::TrickleMlLb,
        FormulaId::DiffusionFt,
        FormulaId::RcConstant,
        FormulaId::SpyFtLb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FormulaId::TrickleFtLb => "trickle_ft_lb",
            FormulaId::TrickleFtAsym => "trickle_ft_asym",
            FormulaId::TrickleMlUb => "trickle_ml_ub",
            FormulaId::TrickleMlLb => "trickle_ml_lb",
            FormulaId::DiffusionFt => "diffusion_ft",
            FormulaId::RcConstant => "rc_constant",
            FormulaId::SpyFtLb => "spy_ft_lb",
        }
    }
}

impl fmt::Display for FormulaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FormulaId {
    type Err = TheoryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FormulaId::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| TheoryError::UnknownFormula(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryValue {
    pub formula: FormulaId,
    pub d: Option<usize>,
    pub theta: Option<f64>,
    pub t: Option<usize>,
    pub p: Option<f64>,
    pub value: f64,
}

impl TheoryValue {
    fn new(formula: FormulaId, value: f64) -> Self {
        TheoryValue { formula, d: None, theta: None, t: None, p: None, value }
    }
    fn d(mut self, d: usize) -> Self {
        self.d = Some(d);
        self
    }
    fn theta(mut self, theta: f64) -> Self {
        self.theta = Some(theta);
        self
    }
}

/// Lower bound on trickle first-timestamp detection on a d-regular tree
/// with `theta` taps per server. The `Ei(2^d ln rho)` term is dropped once
/// its argument is below -700, where it is far below double precision.
pub fn trickle_ft_lower_bound(d: usize, theta: usize) -> Result<TheoryValue, TheoryError> {
    if d < 2 || theta < 1 {
        return Err(bad(format!("need d >= 2 and theta >= 1, got d={d} theta={theta}")));
    }
    let (df, th) = (d as f64, theta as f64);
    let ln_rho = ((df - 1.0) / (df - 1.0 + th)).ln();
    let far = 2f64.powi(d.min(1100) as i32) * ln_rho;
    let ei_far = if far < -700.0 { 0.0 } else { exponential_integral(far)? };
    let value = th / (df * LN_2) * (ei_far - exponential_integral(ln_rho)?);
    Ok(TheoryValue::new(FormulaId::TrickleFtLb, value).d(d).theta(th))
}

/// `ln d / (d ln 2)`, the large-degree behaviour of the trickle bound.
pub fn trickle_ft_asymptotic(d: usize) -> Result<TheoryValue, TheoryError> {
    if d < 2 {
        return Err(bad(format!("need d >= 2, got {d}")));
    }
    let df = d as f64;
    Ok(TheoryValue::new(FormulaId::TrickleFtAsym, df.ln() / (df * LN_2)).d(d))
}

fn check_ml(d: usize, theta: usize) -> Result<(), TheoryError> {
    if d < 2 || theta < 1 {
        return Err(bad(format!("need d >= 2 and theta >= 1, got d={d} theta={theta}")));
    }
    Ok(())
}

pub fn trickle_ml_upper(d: usize, theta: usize) -> Result<TheoryValue, TheoryError> {
    check_ml(d, theta)?;
    let (df, th) = (d as f64, theta as f64);
    Ok(TheoryValue::new(FormulaId::TrickleMlUb, 1.0 - df / (2.0 * (th + df))).d(d).theta(th))
}

pub fn trickle_ml_lower(d: usize, theta: usize, t: usize) -> Result<TheoryValue, TheoryError> {
    check_ml(d, theta)?;
    if t < 1 {
        return Err(bad("need t >= 1"));
    }
    let (df, th) = (d as f64, theta as f64);
    let up = 1.0 - df / (2.0 * (th + df));
    let value = (up - (df / (th + df)).powi(t.min(i32::MAX as usize) as i32)).max(0.0);
    let mut v = TheoryValue::new(FormulaId::TrickleMlLb, value).d(d).theta(th);
    v.t = Some(t);
    Ok(v)
}

/// Diffusion first-timestamp detection, `theta/(d-2) ln((d+theta-2)/theta)`.
///
/// The expression is exact for a source with `d - 2` neighbors inside an
/// otherwise d-regular tree. On a fully d-regular tree the probability is
/// lower; [`diffusion_ft_with_root_degree`] handles any source degree.
pub fn diffusion_ft(d: usize, theta: f64) -> Result<TheoryValue, TheoryError> {
    if d <= 2 {
        return Err(bad(format!("need d > 2, got {d}")));
    }
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(bad(format!("need theta > 0, got {theta}")));
    }
    let c = d as f64 - 2.0;
    Ok(TheoryValue::new(FormulaId::DiffusionFt, theta / c * ((c + theta) / theta).ln())
        .d(d)
        .theta(theta))
}

/// Probability that the source reports first under diffusion when the
/// source has `root_degree` neighbors and every other server has degree `d`.
/// Equals [`diffusion_ft`] when `root_degree = d - 2`.
pub fn diffusion_ft_with_root_degree(
    d: usize,
    root_degree: usize,
    theta: f64,
) -> Result<f64, TheoryError> {
    if d <= 2 || root_degree < 1 {
        return Err(bad(format!("need d > 2 and root degree >= 1, got d={d} root={root_degree}")));
    }
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(bad(format!("need theta > 0, got {theta}")));
    }
    let g = d as f64 - 2.0;
    let d0 = root_degree as f64;
    let c = theta + g;
    let alpha = (theta + d0) / c;
    // u = s^(1/alpha) removes the u^(alpha-1) factor
    let f = |s: f64| {
        let u = s.powf(1.0 / alpha);
        (c / (g * u + theta)).powf(d0 / g)
    };
    Ok(theta / (theta + d0) * simpson(&f, 0.0, 1.0, 1e-13))
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Limiting detection probability of reporting centrality on d-regular
/// trees; independent of the tap count.
pub fn reporting_centrality_constant(d: usize) -> Result<TheoryValue, TheoryError> {
    if d <= 2 {
        return Err(bad(format!("need d > 2, got {d}")));
    }
    let a = 1.0 / (d as f64 - 2.0);
    let (_, upper) = inc_beta_pair(0.5, a, 1.0 + a)?;
    Ok(TheoryValue::new(FormulaId::RcConstant, 1.0 - d as f64 * upper).d(d))
}

/// Spy-based first-timestamp detection is at least the corruption rate.
pub fn spy_ft_bound(p: f64) -> Result<TheoryValue, TheoryError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(bad(format!("p must lie in [0, 1], got {p}")));
    }
    let mut v = TheoryValue::new(FormulaId::SpyFtLb, p);
    v.p = Some(p);
    Ok(v)
}

/// Evaluates a formula from loosely typed parameters, as the CLI needs.
pub fn evaluate(
    formula: FormulaId,
    d: Option<usize>,
    theta: Option<f64>,
    t: Option<usize>,
    p: Option<f64>,
) -> Result<TheoryValue, TheoryError> {
    let need_d = || d.ok_or_else(|| bad(format!("{formula} needs d")));
    let need_theta = || theta.ok_or_else(|| bad(format!("{formula} needs theta")));
    let int_theta = || {
        let th = need_theta()?;
        if th >= 1.0 && th.fract() == 0.0 {
            Ok(th as usize)
        } else {
            Err(bad(format!("{formula} needs an integer theta >= 1, got {th}")))
        }
    };
    match formula {
        FormulaId::TrickleFtLb => trickle_ft_lower_bound(need_d()?, int_theta()?),
        FormulaId::TrickleFtAsym => trickle_ft_asymptotic(need_d()?),
        FormulaId::TrickleMlUb => trickle_ml_upper(need_d()?, int_theta()?),
        FormulaId::TrickleMlLb => {
            trickle_ml_lower(need_d()?, int_theta()?, t.ok_or_else(|| bad("trickle_ml_lb needs t"))?)
        }
        FormulaId::DiffusionFt => diffusion_ft(need_d()?, need_theta()?),
        FormulaId::RcConstant => reporting_centrality_constant(need_d()?),
        FormulaId::SpyFtLb => spy_ft_bound(p.ok_or_else(|| bad("spy_ft_lb needs p"))?),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UrnState {
    pub solid: u64,
    pub striped: u64,
    pub draws: u64,
}

impl UrnState {
    pub fn ratio(&self) -> f64 {
        self.striped as f64 / self.solid as f64
    }
}

/// Runs the urn from one solid ball for `steps` draws and returns every
/// state, the initial one included. A solid draw adds `d - 2` solid and
/// `theta` striped balls; a striped draw removes `theta` striped balls.
pub fn urn_simulate(
    d: usize,
    theta: usize,
    steps: usize,
    rng: &mut impl Rng,
) -> Result<Vec<UrnState>, TheoryError> {
    if d <= 2 || theta < 1 {
        return Err(bad(format!("need d > 2 and theta >= 1, got d={d} theta={theta}")));
    }
    let (grow, taps) = ((d - 2) as u64, theta as u64);
    let mut state = UrnState { solid: 1, striped: 0, draws: 0 };
    let mut out = Vec::with_capacity(steps + 1);
    out.push(state);
    for _ in 0..steps {
        let pick = rng.random_range(0..state.solid + state.striped);
        if pick < state.solid {
            state.solid += grow;
            state.striped += taps;
        } else {
            state.striped = state.striped.checked_sub(taps).ok_or_else(|| {
                TheoryError::Urn(format!("{} striped balls, cannot remove {taps}", state.striped))
            })?;
        }
        state.draws += 1;
        out.push(state);
    }
    Ok(out)
}
