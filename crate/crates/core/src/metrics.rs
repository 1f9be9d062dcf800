//! Reduction of run traces into registration-time, attempts, energy and
//! expired-timer metrics, plus their CSV and summary exports.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nas_sim::{Outcome, RunTrace, TimerName, TimerTransition};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("traces disagree on {field}: {first} vs {other}")]
    MismatchedConfig {
        field: &'static str,
        first: String,
        other: String,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One step of an empirical CDF: `fraction` of the samples are `<= value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub value: f64,
    pub fraction: f64,
}

/// Empirical CDF evaluated at each distinct sample value.
pub fn empirical_cdf(values: &[f64]) -> Vec<CdfPoint> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<CdfPoint> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let fraction = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.value == *v => last.fraction = fraction,
            _ => out.push(CdfPoint {
                value: *v,
                fraction,
            }),
        }
    }
    out
}

/// Evaluates a step CDF at `x`.
pub fn cdf_at(cdf: &[CdfPoint], x: f64) -> f64 {
    match cdf.partition_point(|p| p.value <= x) {
        0 => 0.0,
        i => cdf[i - 1].fraction,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimerCounts {
    pub started: u64,
    pub stopped: u64,
    pub expired: u64,
}

impl TimerCounts {
    pub fn expired_ratio(&self) -> f64 {
        if self.started == 0 {
            0.0
        } else {
            self.expired as f64 / self.started as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    /// Over UEs that registered.
    pub registration_time_cdf: Vec<CdfPoint>,
    /// Over UEs that powered on.
    pub attempts_cdf: Vec<CdfPoint>,
    pub energy_cdf_all: Vec<CdfPoint>,
    pub energy_cdf_registered: Vec<CdfPoint>,
    pub timer_counts: BTreeMap<TimerName, TimerCounts>,
    pub expired_ratio: BTreeMap<TimerName, f64>,
    /// Expired over started, all four timers together.
    pub overall_expired_ratio: f64,
    pub powered_on: usize,
    pub registered: usize,
    pub failed: usize,
    pub censored: usize,
    pub success_fraction: f64,
    pub mean_attempts: f64,
    pub mean_energy: f64,
    pub mean_registration_time: Option<f64>,
}

fn check_same<T: PartialEq + ToString>(
    field: &'static str,
    first: T,
    other: T,
) -> Result<(), MetricsError> {
    if first == other {
        Ok(())
    } else {
        Err(MetricsError::MismatchedConfig {
            field,
            first: first.to_string(),
            other: other.to_string(),
        })
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Pools the per-UE records of every trace (one grid cell, many seeds).
pub fn reduce(traces: &[RunTrace]) -> Result<MetricsBundle, MetricsError> {
    if let Some(first) = traces.first() {
        for t in &traces[1..] {
            check_same("num_ues", first.num_ues, t.num_ues)?;
            check_same(
                "loss_probability",
                first.loss_probability,
                t.loss_probability,
            )?;
        }
    }

    let mut reg_times = Vec::new();
    let mut attempts = Vec::new();
    let mut energy_all = Vec::new();
    let mut energy_reg = Vec::new();
    let (mut registered, mut failed, mut censored) = (0, 0, 0);
    let mut timer_counts: BTreeMap<TimerName, TimerCounts> = TimerName::ALL
        .iter()
        .map(|t| (*t, TimerCounts::default()))
        .collect();

    for trace in traces {
        for ue in trace.ues.iter().filter(|u| u.attempts > 0) {
            attempts.push(ue.attempts as f64);
            energy_all.push(ue.energy);
            match ue.outcome {
                Outcome::Registered => {
                    registered += 1;
                    reg_times.push(ue.registration_time.expect("registered UE has a time"));
                    energy_reg.push(ue.energy);
                }
                Outcome::Failed => failed += 1,
                Outcome::Censored => censored += 1,
            }
        }
        for e in &trace.timer_events {
            let c = timer_counts.entry(e.timer).or_default();
            match e.transition {
                TimerTransition::Started => c.started += 1,
                TimerTransition::Stopped => c.stopped += 1,
                TimerTransition::Expired => c.expired += 1,
            }
        }
    }

    let powered_on = attempts.len();
    let (started, expired) = timer_counts
        .values()
        .fold((0, 0), |(s, x), c| (s + c.started, x + c.expired));
    Ok(MetricsBundle {
        registration_time_cdf: empirical_cdf(&reg_times),
        attempts_cdf: empirical_cdf(&attempts),
        energy_cdf_all: empirical_cdf(&energy_all),
        energy_cdf_registered: empirical_cdf(&energy_reg),
        expired_ratio: timer_counts
            .iter()
            .map(|(t, c)| (*t, c.expired_ratio()))
            .collect(),
        timer_counts,
        overall_expired_ratio: if started == 0 {
            0.0
        } else {
            expired as f64 / started as f64
        },
        powered_on,
        registered,
        failed,
        censored,
        success_fraction: if powered_on == 0 {
            0.0
        } else {
            registered as f64 / powered_on as f64
        },
        mean_attempts: mean(&attempts),
        mean_energy: mean(&energy_all),
        mean_registration_time: (!reg_times.is_empty()).then(|| mean(&reg_times)),
    })
}

#[derive(Debug, Serialize)]
struct UeRow {
    ue_id: u32,
    seed: u64,
    outcome: &'static str,
    attempts: u32,
    registration_time_s: Option<f64>,
    energy_j: f64,
}

/// Per-UE CSV: `ue_id,seed,outcome,attempts,registration_time_s,energy_j`.
///
/// `registration_time_s` is empty for UEs that did not register.
pub fn write_ue_csv<W: Write>(traces: &[RunTrace], out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    for trace in traces {
        for ue in &trace.ues {
            w.serialize(UeRow {
                ue_id: ue.ue,
                seed: trace.seed,
                outcome: ue.outcome.as_str(),
                attempts: ue.attempts,
                registration_time_s: ue.registration_time,
                energy_j: ue.energy,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct TimerRow {
    timer: &'static str,
    started: u64,
    expired: u64,
    stopped: u64,
}

/// Timer CSV: `timer,started,expired,stopped`, one row per timer.
pub fn write_timer_csv<W: Write>(bundle: &MetricsBundle, out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    for (timer, c) in &bundle.timer_counts {
        w.serialize(TimerRow {
            timer: timer.as_str(),
            started: c.started,
            expired: c.expired,
            stopped: c.stopped,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Summary document for one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary<P> {
    pub parameters: P,
    pub seeds: Vec<u64>,
    pub powered_on: usize,
    pub registered: usize,
    pub failed: usize,
    pub censored: usize,
    pub success_fraction: f64,
    pub mean_attempts: f64,
    pub mean_energy_j: f64,
    pub mean_registration_time_s: Option<f64>,
    pub overall_expired_ratio: f64,
    pub expired_ratio: BTreeMap<String, f64>,
}

impl<P> CellSummary<P> {
    pub fn new(parameters: P, seeds: Vec<u64>, b: &MetricsBundle) -> Self {
        CellSummary {
            parameters,
            seeds,
            powered_on: b.powered_on,
            registered: b.registered,
            failed: b.failed,
            censored: b.censored,
            success_fraction: b.success_fraction,
            mean_attempts: b.mean_attempts,
            mean_energy_j: b.mean_energy,
            mean_registration_time_s: b.mean_registration_time,
            overall_expired_ratio: b.overall_expired_ratio,
            expired_ratio: b
                .expired_ratio
                .iter()
                .map(|(t, r)| (t.as_str().to_string(), *r))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nas_sim::{AmfStats, LinkStats, TimerEvent, UeRecord};

    #[test]
    fn cdf_examples() {
        let cdf = empirical_cdf(&[1.0, 2.0, 2.0, 4.0]);
        let pts: Vec<(f64, f64)> = cdf.iter().map(|p| (p.value, p.fraction)).collect();
        assert_eq!(pts, vec![(1.0, 0.25), (2.0, 0.75), (4.0, 1.0)]);
        assert_eq!(
            empirical_cdf(&[3.5]),
            vec![CdfPoint {
                value: 3.5,
                fraction: 1.0
            }]
        );
        assert!(empirical_cdf(&[]).is_empty());
        assert_eq!(cdf_at(&cdf, 0.5), 0.0);
        assert_eq!(cdf_at(&cdf, 2.0), 0.75);
        assert_eq!(cdf_at(&cdf, 3.0), 0.75);
        assert_eq!(cdf_at(&cdf, 9.0), 1.0);
    }

    fn ue(id: u32, outcome: Outcome, attempts: u32, t: Option<f64>, energy: f64) -> UeRecord {
        UeRecord {
            ue: id,
            outcome,
            attempts,
            power_on_time: 0.0,
            registration_time: t,
            active_time: energy,
            idle_time: 0.0,
            energy,
        }
    }

    fn trace(seed: u64, loss: f64) -> RunTrace {
        let ev = |timer, transition| TimerEvent {
            time: 0.0,
            ue: 0,
            timer,
            transition,
        };
        RunTrace {
            seed,
            num_ues: 3,
            loss_probability: loss,
            ues: vec![
                ue(0, Outcome::Registered, 1, Some(2.0), 2.0),
                ue(1, Outcome::Registered, 2, Some(5.0), 4.0),
                ue(2, Outcome::Failed, 5, None, 9.0),
            ],
            timer_events: vec![
                ev(TimerName::T3510, TimerTransition::Started),
                ev(TimerName::T3510, TimerTransition::Expired),
                ev(TimerName::T3510, TimerTransition::Started),
                ev(TimerName::T3510, TimerTransition::Stopped),
            ],
            queue_samples: vec![],
            amf: AmfStats::default(),
            link: LinkStats::default(),
            horizon_exceeded: false,
            end_time: 10.0,
        }
    }

    #[test]
    fn reduce_conditions_on_success() {
        let b = reduce(&[trace(1, 0.1)]).unwrap();
        assert_eq!(b.powered_on, 3);
        assert_eq!(b.registered, 2);
        assert_eq!(b.registration_time_cdf.len(), 2);
        assert!((b.success_fraction - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(b.expired_ratio[&TimerName::T3510], 0.5);
        assert_eq!(b.expired_ratio[&TimerName::T3560], 0.0);
        assert_eq!(b.energy_cdf_all.last().unwrap().fraction, 1.0);
    }

    #[test]
    fn pooling_copies_is_identity() {
        let one = reduce(&[trace(1, 0.1)]).unwrap();
        let many = reduce(&vec![trace(1, 0.1); 10]).unwrap();
        assert_eq!(one.registration_time_cdf, many.registration_time_cdf);
        assert_eq!(one.attempts_cdf, many.attempts_cdf);
        assert_eq!(one.energy_cdf_all, many.energy_cdf_all);
        assert_eq!(one.expired_ratio, many.expired_ratio);
        assert_eq!(one.success_fraction, many.success_fraction);
    }

    #[test]
    fn all_registered_energy_cdfs_match() {
        let mut t = trace(1, 0.0);
        t.ues.truncate(2);
        let b = reduce(&[t]).unwrap();
        assert_eq!(b.success_fraction, 1.0);
        assert_eq!(b.energy_cdf_all, b.energy_cdf_registered);
    }

    #[test]
    fn mismatched_cells_rejected() {
        let err = reduce(&[trace(1, 0.1), trace(2, 0.2)]).unwrap_err();
        assert!(matches!(
            err,
            MetricsError::MismatchedConfig {
                field: "loss_probability",
                ..
            }
        ));
        let mut other = trace(2, 0.1);
        other.num_ues = 4;
        assert!(reduce(&[trace(1, 0.1), other]).is_err());
    }

    #[test]
    fn csv_columns() {
        let t = trace(7, 0.0);
        let mut buf = Vec::new();
        write_ue_csv(std::slice::from_ref(&t), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "ue_id,seed,outcome,attempts,registration_time_s,energy_j"
        );
        assert_eq!(lines.next().unwrap(), "0,7,registered,1,2.0,2.0");
        assert_eq!(lines.nth(1).unwrap(), "2,7,failed,5,,9.0");

        let mut buf = Vec::new();
        write_timer_csv(&reduce(&[t]).unwrap(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("timer,started,expired,stopped\nT3510,2,1,1\n"));
    }
}
