//! Digamma and the stick-breaking expectations needed by the variational updates.

use crate::error::{Error, Result};

/// Asymptotic-series coefficients `B_2n / (2n)` for n = 1..=8.
const SERIES: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
    -3617.0 / 8160.0,
];

/// Digamma without domain checks. Callers guarantee `x > 0`.
#[inline]
pub(crate) fn psi(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 6.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    let mut poly = 0.0;
    for c in SERIES.iter().rev() {
        poly = poly * inv2 + c;
    }
    shift + x.ln() - 0.5 / x - poly * inv2
}

/// The digamma function `d/dx ln Gamma(x)` for `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::Domain(format!("digamma requires finite x > 0, got {x}")));
    }
    Ok(psi(x))
}

fn check_beta(tau1: f64, tau2: f64) -> Result<()> {
    if !(tau1.is_finite() && tau1 > 0.0 && tau2.is_finite() && tau2 > 0.0) {
        return Err(Error::Domain(format!(
            "Beta parameters must be finite and positive, got ({tau1}, {tau2})"
        )));
    }
    Ok(())
}

/// `E[log v]` for `v ~ Beta(tau1, tau2)`.
pub fn expected_log_v(tau1: f64, tau2: f64) -> Result<f64> {
    check_beta(tau1, tau2)?;
    Ok(psi(tau1) - psi(tau1 + tau2))
}

/// `E[log(1 - v)]` for `v ~ Beta(tau1, tau2)`.
pub fn expected_log_1mv(tau1: f64, tau2: f64) -> Result<f64> {
    check_beta(tau1, tau2)?;
    Ok(psi(tau2) - psi(tau1 + tau2))
}

fn check_sticks(tau: &[(f64, f64)], k: usize) -> Result<()> {
    if k == 0 || k > tau.len() {
        return Err(Error::Index(format!(
            "stick level {k} outside 1..={}",
            tau.len()
        )));
    }
    tau[..k].iter().try_for_each(|&(a, b)| check_beta(a, b))
}

/// `E[log prod_{t<=k} v_t]`, the active-factor term of the assignment update.
/// `k` counts sticks (1-based level).
pub fn stick_log_active(tau: &[(f64, f64)], k: usize) -> Result<f64> {
    check_sticks(tau, k)?;
    Ok(tau[..k].iter().map(|&(a, b)| psi(a) - psi(a + b)).sum())
}

/// Multinomial lower bound on `E[log(1 - prod_{t<=m} v_t)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StickBound {
    /// Optimal auxiliary distribution over `s = 1..=m` (stored zero-based).
    pub q: Vec<f64>,
    pub value: f64,
}

/// Computes the optimal `q_m` and the resulting bound at truncation level `m` (1-based).
///
/// Raw scores are `psi(tau_s2) + sum_{t<s} psi(tau_t1) - sum_{t<=s} psi(tau_t1 + tau_t2)`;
/// `q` is their softmax, evaluated after subtracting the maximum.
pub fn stick_bound(tau: &[(f64, f64)], m: usize) -> Result<StickBound> {
    check_sticks(tau, m)?;
    let tau = &tau[..m];
    let d1: Vec<f64> = tau.iter().map(|&(a, _)| psi(a)).collect();
    let d2: Vec<f64> = tau.iter().map(|&(_, b)| psi(b)).collect();
    let d12: Vec<f64> = tau.iter().map(|&(a, b)| psi(a + b)).collect();

    let mut raw = Vec::with_capacity(m);
    let (mut sum1, mut sum12) = (0.0, 0.0);
    for s in 0..m {
        sum12 += d12[s];
        raw.push(d2[s] + sum1 - sum12);
        sum1 += d1[s];
    }
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut q: Vec<f64> = raw.iter().map(|r| (r - max).exp()).collect();
    let z: f64 = q.iter().sum();
    q.iter_mut().for_each(|x| *x /= z);

    // Tail sums: tail[t] = sum_{s>=t} q_s.
    let mut tail = vec![0.0; m + 1];
    for s in (0..m).rev() {
        tail[s] = tail[s + 1] + q[s];
    }
    let mut value = 0.0;
    for t in 0..m {
        value += q[t] * d2[t];
        value += tail[t + 1] * d1[t];
        value -= tail[t] * d12[t];
    }
    let entropy: f64 = q.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    Ok(StickBound {
        q,
        value: value + entropy,
    })
}

/// Per-image stick expectations for every truncation level at once.
///
/// The raw multinomial scores do not depend on the level, so the optimal
/// bound at level `m` equals the log-sum-exp of the first `m` scores. All
/// levels therefore cost `O(K)` together.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct StickTable {
    /// The sticks the table was built from.
    pub tau: Vec<(f64, f64)>,
    /// `E[log pi_k] = sum_{t<=k} (psi(tau_t1) - psi(tau_t1 + tau_t2))`.
    pub elog_pi: Vec<f64>,
    /// `sum_{t<=k} (psi(tau_t1) - psi(tau_t2))`, the alternative form.
    pub elog_pi_literal: Vec<f64>,
    /// `E[log v_k]` and `E[log(1 - v_k)]`.
    pub elog_v: Vec<f64>,
    pub elog_1mv: Vec<f64>,
    /// Raw multinomial scores.
    pub raw: Vec<f64>,
    /// `lse[m] = log sum_{s<=m} exp(raw_s)`: the bound on `E[log(1 - pi_m)]`.
    pub lse: Vec<f64>,
    /// Entropy of each `Beta(tau_k1, tau_k2)`.
    pub entropy: Vec<f64>,
}

impl StickTable {
    pub fn new(tau: &[(f64, f64)]) -> Self {
        let k = tau.len();
        let mut t = Self {
            tau: tau.to_vec(),
            elog_pi: Vec::with_capacity(k),
            elog_pi_literal: Vec::with_capacity(k),
            elog_v: Vec::with_capacity(k),
            elog_1mv: Vec::with_capacity(k),
            raw: Vec::with_capacity(k),
            lse: Vec::with_capacity(k),
            entropy: Vec::with_capacity(k),
        };
        let (mut acc, mut acc_lit, mut lse) = (0.0, 0.0, f64::NEG_INFINITY);
        for &(a, b) in tau {
            let (pa, pb, pab) = (psi(a), psi(b), psi(a + b));
            let ev = pa - pab;
            let e1mv = pb - pab;
            let raw = acc + e1mv;
            acc += ev;
            acc_lit += pa - pb;
            lse = log_add_exp(lse, raw);
            t.elog_pi.push(acc);
            t.elog_pi_literal.push(acc_lit);
            t.elog_v.push(ev);
            t.elog_1mv.push(e1mv);
            t.raw.push(raw);
            t.lse.push(lse);
            t.entropy
                .push(ln_beta(a, b) - (a - 1.0) * pa - (b - 1.0) * pb + (a + b - 2.0) * pab);
        }
        t
    }

    /// `q_ms` for zero-based `m` and `s <= m`.
    #[cfg(test)]
    pub fn q(&self, m: usize, s: usize) -> f64 {
        (self.raw[s] - self.lse[m]).exp()
    }
}

#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln Gamma(x)` for `x > 0` (Lanczos, g = 7, n = 9).
pub(crate) fn ln_gamma(x: f64) -> f64 {
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
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// `ln B(a, b)`.
pub(crate) fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}
