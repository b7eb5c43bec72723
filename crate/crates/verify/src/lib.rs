//! Acceptance thresholds and the judgement functions behind each
//! pass/fail line of the acceptance suite.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pinned tolerances.
pub mod tol {
    pub const CHI_SQUARE_P: f64 = 0.01;
    pub const SAMPLING_DRAWS: usize = 100_000;
    pub const SAMPLING_SECS: f64 = 10.0;
    pub const GRAD_REL_ERR: f64 = 1e-4;
    pub const GRAD_COORDS: usize = 200;
    pub const GRAD_STEP: f64 = 1e-5;
    pub const GRAD_SECS: f64 = 30.0;
    pub const SOFTMAX_SUM: f64 = 1e-12;
    pub const DECOMPOSITION: f64 = 1e-9;
    pub const LCL_MIN_ACC: f64 = 0.85;
    pub const LCL_ORACLE_GAP: f64 = 0.05;
    pub const CHANCE: f64 = 0.5;
    pub const CHANCE_BAND: f64 = 0.03;
    pub const CHANCE_EPISODES: usize = 2000;
    pub const STAGE_SECS: f64 = 15.0 * 60.0;
    pub const FALSE_RATE_SLACK: f64 = 0.03;
    pub const FALSE_RATE_FLOOR: f64 = 0.10;
    pub const FALSE_RATE_DROP: f64 = 0.70;
    pub const RANDOM_2SHOT_GAIN: f64 = 0.10;
    pub const PLATEAU_GAP: f64 = 0.05;
    pub const RISE_SLACK: f64 = 0.02;
    pub const RETENTION_GAP: f64 = 0.05;
    pub const FORGETTING_DROP: f64 = 0.20;
    pub const POSITION_SIGMAS: f64 = 3.0;
    pub const POSITIONS: usize = 32;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(id: u8, name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Verdict { id, name, passed, detail: detail.into() }
    }

    pub fn line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        format!("[{status}] {:>2} {:<24} {}", self.id, self.name, self.detail)
    }
}

/// Upper-tail p-value of Pearson's statistic against `probs`.
pub fn chi_square_p(counts: &[usize], probs: &[f64]) -> f64 {
    assert_eq!(counts.len(), probs.len());
    let n: usize = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    ChiSquared::new((counts.len() - 1) as f64).expect("at least two cells").sf(stat)
}

/// Merges leading cells until every expected count reaches `min_expected`
/// (cells are assumed ordered from rarest to most frequent at the start).
pub fn pool_leading(counts: &[usize], probs: &[f64], n: usize, min_expected: f64) -> (Vec<usize>, Vec<f64>) {
    let mut c = Vec::new();
    let mut p = Vec::new();
    let (mut acc_c, mut acc_p) = (0usize, 0.0f64);
    for (&ci, &pi) in counts.iter().zip(probs) {
        acc_c += ci;
        acc_p += pi;
        if acc_p * n as f64 >= min_expected {
            c.push(acc_c);
            p.push(acc_p);
            acc_c = 0;
            acc_p = 0.0;
        }
    }
    if acc_p > 0.0 {
        match (c.last_mut(), p.last_mut()) {
            (Some(lc), Some(lp)) => {
                *lc += acc_c;
                *lp += acc_p;
            }
            _ => {
                c.push(acc_c);
                p.push(acc_p);
            }
        }
    }
    (c, p)
}

/// `points` are `(rate, accuracy)` in increasing rate order.
pub fn false_rate_verdict(points: &[(f64, f64)]) -> (bool, String) {
    let Some((&(r0, first), &(r1, last))) = points.first().zip(points.last()) else {
        return (false, "empty false-rate curve".into());
    };
    let worst_rise =
        points.windows(2).map(|w| w[1].1 - w[0].1).fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let monotone = worst_rise <= tol::FALSE_RATE_SLACK;
    let floor = last <= tol::FALSE_RATE_FLOOR;
    let drop = first - last;
    let ok = monotone && floor && drop >= tol::FALSE_RATE_DROP && r0 == 0.0 && r1 == 1.0;
    let curve: Vec<String> = points.iter().map(|(r, a)| format!("{r}:{a:.3}")).collect();
    (
        ok,
        format!(
            "curve [{}]; max rise {worst_rise:.3} (<= {}), acc@1.0 {last:.3} (<= {}), drop {drop:.3} (>= {})",
            curve.join(" "),
            tol::FALSE_RATE_SLACK,
            tol::FALSE_RATE_FLOOR,
            tol::FALSE_RATE_DROP
        ),
    )
}

pub fn random_gain_verdict(random_2shot: f64, fixed_2shot: f64) -> (bool, String) {
    let gain = random_2shot - fixed_2shot;
    (
        gain >= tol::RANDOM_2SHOT_GAIN,
        format!(
            "2-shot: 2way-random {random_2shot:.3} vs 2way {fixed_2shot:.3}, gain {gain:.3} (>= {})",
            tol::RANDOM_2SHOT_GAIN
        ),
    )
}

pub fn plateau_verdict(acc2: f64, acc8: f64, acc16: f64) -> (bool, String) {
    let gap = (acc16 - acc8).abs();
    let rise = acc8 - acc2;
    (
        gap <= tol::PLATEAU_GAP && rise >= -tol::RISE_SLACK,
        format!(
            "acc 2/8/16 = {acc2:.3}/{acc8:.3}/{acc16:.3}; |16-8| {gap:.3} (<= {}), 8-2 {rise:.3} (>= -{})",
            tol::PLATEAU_GAP,
            tol::RISE_SLACK
        ),
    )
}

pub fn retention_verdict(base: f64, mix: f64, two_way: f64) -> (bool, String) {
    let gap = (mix - base).abs();
    let drop = base - two_way;
    (
        gap <= tol::RETENTION_GAP && drop >= tol::FORGETTING_DROP,
        format!(
            "zero-shot base {base:.3}, mix {mix:.3} (|gap| {gap:.3} <= {}), 2way {two_way:.3} (drop {drop:.3} >= {})",
            tol::RETENTION_GAP,
            tol::FORGETTING_DROP
        ),
    )
}

/// `positions` are `(accuracy, stderr)` per flipped position.
pub fn position_verdict(baseline: f64, positions: &[(f64, f64)]) -> (bool, String) {
    let excess: Vec<f64> = positions.iter().map(|&(a, se)| a - baseline - tol::POSITION_SIGMAS * se).collect();
    let worst = excess.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let complete = positions.len() == tol::POSITIONS;
    let (lo, hi) = positions
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(a, _)| (lo.min(a), hi.max(a)));
    (
        complete && worst <= 0.0,
        format!(
            "{} positions + baseline {baseline:.3}; position acc range [{lo:.3}, {hi:.3}]; max excess over baseline+3se {worst:.4} (<= 0)",
            positions.len()
        ),
    )
}
