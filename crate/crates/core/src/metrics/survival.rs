use alloc::vec::Vec;

use super::special::chi2_sf;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurvivalSample {
    pub risk: f64,
    /// months
    pub time: f64,
    /// `true` when the death was observed
    pub event: bool,
}

impl SurvivalSample {
    pub fn new(risk: f64, time: f64, event: bool) -> Self {
        SurvivalSample { risk, time, event }
    }
}

fn check_samples(samples: &[SurvivalSample]) -> Result<()> {
    for s in samples {
        if !s.risk.is_finite() {
            return Err(Error::NonFinite("survival risk"));
        }
        if !(s.time > 0.0) || !s.time.is_finite() {
            return Err(Error::arg("survival times must be positive and finite"));
        }
    }
    Ok(())
}

/// Harrell's C over pairs with `event_i` and `time_i < time_j`; risk ties
/// count one half.
pub fn concordance_index(samples: &[SurvivalSample]) -> Result<f64> {
    check_samples(samples)?;
    let mut comparable = 0u64;
    let mut score = 0.0;
    for a in samples.iter().filter(|s| s.event) {
        for b in samples {
            if a.time < b.time {
                comparable += 1;
                if a.risk > b.risk {
                    score += 1.0;
                } else if a.risk == b.risk {
                    score += 0.5;
                }
            }
        }
    }
    if comparable == 0 {
        return Err(Error::Undefined("no comparable pairs".into()));
    }
    Ok(score / comparable as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeAuc {
    pub mean: f64,
    /// `(t, AUC(t))` for each time where both groups were non-empty.
    pub per_time: Vec<(f64, f64)>,
    /// Times dropped because no positive or no negative case existed.
    pub skipped: Vec<f64>,
}

/// Cumulative/dynamic AUC: positives have an event by `t`, negatives are
/// still under observation after `t`; cases censored by `t` are ignored.
pub fn time_dependent_auc(samples: &[SurvivalSample], eval_times: &[f64]) -> Result<TimeAuc> {
    check_samples(samples)?;
    let mut per_time = Vec::new();
    let mut skipped = Vec::new();
    for &t in eval_times {
        let pos: Vec<f64> = samples.iter().filter(|s| s.event && s.time <= t).map(|s| s.risk).collect();
        let neg: Vec<f64> = samples.iter().filter(|s| s.time > t).map(|s| s.risk).collect();
        if pos.is_empty() || neg.is_empty() {
            skipped.push(t);
            continue;
        }
        let mut hits = 0.0;
        for p in &pos {
            for n in &neg {
                if p > n {
                    hits += 1.0;
                } else if p == n {
                    hits += 0.5;
                }
            }
        }
        per_time.push((t, hits / (pos.len() * neg.len()) as f64));
    }
    if per_time.is_empty() {
        return Err(Error::Undefined("time-dependent AUC defined at no evaluation time".into()));
    }
    let mean = per_time.iter().map(|p| p.1).sum::<f64>() / per_time.len() as f64;
    Ok(TimeAuc {
        mean,
        per_time,
        skipped,
    })
}

/// The 10th..90th percentiles of observed event times (linear
/// interpolation), deduplicated.
pub fn decile_event_times(samples: &[SurvivalSample]) -> Vec<f64> {
    let mut ev: Vec<f64> = samples.iter().filter(|s| s.event).map(|s| s.time).collect();
    if ev.is_empty() {
        return Vec::new();
    }
    ev.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = (1..10)
        .map(|k| {
            let pos = (ev.len() - 1) as f64 * k as f64 / 10.0;
            let lo = libm::floor(pos) as usize;
            let hi = (lo + 1).min(ev.len() - 1);
            ev[lo] + (pos - lo as f64) * (ev[hi] - ev[lo])
        })
        .collect();
    out.dedup();
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct KmCurve {
    /// Distinct event times, ascending.
    pub times: Vec<f64>,
    /// Survival just after each event time.
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub deaths: Vec<usize>,
}

impl KmCurve {
    /// Right-continuous step value at `t`.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }
}

struct LifeRow {
    time: f64,
    at_risk: usize,
    deaths: usize,
}

fn life_table(samples: &[SurvivalSample]) -> Vec<LifeRow> {
    let mut sorted: Vec<&SurvivalSample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut rows = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].time;
        let mut j = i;
        let mut deaths = 0;
        while j < sorted.len() && sorted[j].time == t {
            deaths += usize::from(sorted[j].event);
            j += 1;
        }
        if deaths > 0 {
            rows.push(LifeRow {
                time: t,
                at_risk: sorted.len() - i,
                deaths,
            });
        }
        i = j;
    }
    rows
}

pub fn kaplan_meier(samples: &[SurvivalSample]) -> Result<KmCurve> {
    check_samples(samples)?;
    if samples.is_empty() {
        return Err(Error::arg("kaplan_meier needs at least one sample"));
    }
    let mut curve = KmCurve {
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        deaths: Vec::new(),
    };
    let mut s = 1.0;
    for row in life_table(samples) {
        s *= 1.0 - row.deaths as f64 / row.at_risk as f64;
        curve.times.push(row.time);
        curve.survival.push(s);
        curve.at_risk.push(row.at_risk);
        curve.deaths.push(row.deaths);
    }
    Ok(curve)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogrankResult {
    pub chi2: f64,
    pub p_value: f64,
    pub observed_a: f64,
    pub expected_a: f64,
}

/// Two-group logrank test with hypergeometric variance; `p = 1` when the
/// variance vanishes.
pub fn logrank(a: &[SurvivalSample], b: &[SurvivalSample]) -> Result<LogrankResult> {
    check_samples(a)?;
    check_samples(b)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::arg("logrank needs two non-empty groups"));
    }
    let mut times: Vec<f64> = a.iter().chain(b).filter(|s| s.event).map(|s| s.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let (mut observed, mut expected, mut variance) = (0.0, 0.0, 0.0);
    for t in times {
        let at_risk = |g: &[SurvivalSample]| g.iter().filter(|s| s.time >= t).count() as f64;
        let died = |g: &[SurvivalSample]| g.iter().filter(|s| s.event && s.time == t).count() as f64;
        let (na, nb) = (at_risk(a), at_risk(b));
        let (da, db) = (died(a), died(b));
        let n = na + nb;
        let d = da + db;
        observed += da;
        expected += d * na / n;
        if n > 1.0 {
            variance += d * (na / n) * (nb / n) * (n - d) / (n - 1.0);
        }
    }
    if variance <= 0.0 {
        return Ok(LogrankResult {
            chi2: 0.0,
            p_value: 1.0,
            observed_a: observed,
            expected_a: expected,
        });
    }
    let chi2 = (observed - expected) * (observed - expected) / variance;
    Ok(LogrankResult {
        chi2,
        p_value: chi2_sf(chi2, 1.0)?,
        observed_a: observed,
        expected_a: expected,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RiskGroup {
    Low,
    High,
}

/// Splits at the median risk; values equal to the median go low.
pub fn stratify_by_median(risks: &[f64]) -> Result<Vec<RiskGroup>> {
    if risks.len() < 2 {
        return Err(Error::arg("median split needs at least two risks"));
    }
    if risks.iter().any(|r| r.is_nan()) {
        return Err(Error::NonFinite("risk"));
    }
    let mut sorted = risks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    Ok(risks
        .iter()
        .map(|&r| if r <= median { RiskGroup::Low } else { RiskGroup::High })
        .collect())
}
