//! Synchronization-accuracy machinery.
//!
//! Three pieces live here: the empirical table relating synchronization
//! interval to achievable accuracy, a parametric linear-clock model with
//! microsecond tick quantization, and the head-side skew estimation used to
//! translate node-clock timestamps onto the head's clock.

use std::fmt;
use std::path::Path;

use num_rational::Ratio;
use thiserror::Error;

use crate::time::{Micros, SimTime, MICROS_PER_SEC};

#[derive(Debug, Error, PartialEq)]
pub enum SyncError {
    #[error("required accuracy {requested:e}s is below the table's best {best:e}s")]
    UnsatisfiableAccuracy { requested: f64, best: f64 },
    #[error("consecutive samples share the same head timestamp")]
    DegenerateInterval,
    #[error("accuracy table is empty")]
    EmptyTable,
    #[error("accuracy table rows must have strictly increasing intervals")]
    UnsortedTable,
    #[error("accuracy table row {row}: {reason}")]
    TableFormat { row: usize, reason: String },
    #[error("accuracy table mae values must be non-decreasing")]
    NonMonotoneTable,
}

/// One empirical data point: running at synchronization interval `si`
/// yields mean absolute translation error `mae`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccuracyRow {
    pub si_secs: f64,
    pub mae_secs: f64,
}

/// Empirical relation between synchronization interval and accuracy.
///
/// Accuracies are kept as float seconds: tabulated values span from
/// microseconds down to orders of magnitude below the simulation's
/// microsecond grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyTable {
    rows: Vec<AccuracyRow>,
}

impl AccuracyTable {
    /// Build a table enforcing all invariants: non-empty, strictly
    /// increasing intervals, non-decreasing error.
    pub fn new(rows: Vec<AccuracyRow>) -> Result<Self, SyncError> {
        let table = Self::from_observations(rows)?;
        for pair in table.rows.windows(2) {
            if pair[1].mae_secs < pair[0].mae_secs {
                return Err(SyncError::NonMonotoneTable);
            }
        }
        Ok(table)
    }

    /// Build a table from published observations without requiring the
    /// error column to be monotone. Some reported result sets fluctuate
    /// within measurement noise; lookups stay conservative either way
    /// because they scan every row.
    pub fn from_observations(rows: Vec<AccuracyRow>) -> Result<Self, SyncError> {
        if rows.is_empty() {
            return Err(SyncError::EmptyTable);
        }
        for pair in rows.windows(2) {
            if pair[1].si_secs <= pair[0].si_secs {
                return Err(SyncError::UnsortedTable);
            }
        }
        for (i, row) in rows.iter().enumerate() {
            if !(row.si_secs > 0.0) || !(row.mae_secs > 0.0) {
                return Err(SyncError::TableFormat {
                    row: i + 1,
                    reason: "interval and error must be positive".into(),
                });
            }
        }
        Ok(AccuracyTable { rows })
    }

    /// Practical evaluation results for the multi-hop scheme; the default
    /// table.
    pub fn ahts() -> Self {
        AccuracyTable::new(vec![
            AccuracyRow {
                si_secs: 1.0,
                mae_secs: 1.8166e-6,
            },
            AccuracyRow {
                si_secs: 10.0,
                mae_secs: 2.3385e-6,
            },
            AccuracyRow {
                si_secs: 100.0,
                mae_secs: 8.4225e-6,
            },
        ])
        .expect("built-in table is valid")
    }

    /// Simulation results for the single-hop scheme, shipped as an
    /// alternative. The published error column is not monotone in the
    /// interval, so this goes through the observation constructor.
    pub fn ee_ascfr() -> Self {
        AccuracyTable::from_observations(vec![
            AccuracyRow {
                si_secs: 0.01,
                mae_secs: 1.0887e-24,
            },
            AccuracyRow {
                si_secs: 1.0,
                mae_secs: 9.1748e-25,
            },
            AccuracyRow {
                si_secs: 100.0,
                mae_secs: 8.8811e-25,
            },
        ])
        .expect("built-in table is valid")
    }

    /// Parse a two-column CSV with header `si_seconds,mae_seconds`.
    pub fn from_csv_str(text: &str) -> Result<Self, SyncError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "si_seconds,mae_seconds" => {}
            _ => {
                return Err(SyncError::TableFormat {
                    row: 1,
                    reason: "expected header `si_seconds,mae_seconds`".into(),
                })
            }
        }
        let mut rows = Vec::new();
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let si = fields.next().unwrap_or("").trim();
            let mae = fields.next().unwrap_or("").trim();
            if fields.next().is_some() {
                return Err(SyncError::TableFormat {
                    row: idx + 1,
                    reason: "expected exactly two columns".into(),
                });
            }
            let parse = |s: &str| -> Result<f64, SyncError> {
                s.parse().map_err(|_| SyncError::TableFormat {
                    row: idx + 1,
                    reason: format!("not a number: `{s}`"),
                })
            };
            rows.push(AccuracyRow {
                si_secs: parse(si)?,
                mae_secs: parse(mae)?,
            });
        }
        AccuracyTable::from_observations(rows)
    }

    pub fn from_csv_file(path: &Path) -> Result<Self, SyncError> {
        let text = std::fs::read_to_string(path).map_err(|e| SyncError::TableFormat {
            row: 0,
            reason: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_csv_str(&text)
    }

    pub fn rows(&self) -> &[AccuracyRow] {
        &self.rows
    }

    pub fn best_mae_secs(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.mae_secs)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Longest synchronization interval whose tabulated error still meets the
/// required accuracy.
///
/// A conservative step rule: no interpolation, never promises better
/// accuracy than a tabulated observation. Scans every row so non-monotone
/// observation tables behave sensibly.
pub fn accuracy_to_si(max_error_secs: f64, table: &AccuracyTable) -> Result<Micros, SyncError> {
    let mut best: Option<f64> = None;
    for row in table.rows() {
        if row.mae_secs <= max_error_secs {
            best = Some(best.map_or(row.si_secs, |b: f64| b.max(row.si_secs)));
        }
    }
    match best {
        Some(si) => Ok(Micros::from_secs_f64(si)),
        None => Err(SyncError::UnsatisfiableAccuracy {
            requested: max_error_secs,
            best: table.best_mae_secs(),
        }),
    }
}

/// Linear clock: constant frequency error plus an initial offset.
///
/// Drift is held in thousandths of a ppm so clock arithmetic stays exact
/// rational. Readings are quantized to 1 us ticks (floor).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClockState {
    /// Frequency error in milli-ppm (1000 = +1 ppm).
    pub drift_milli_ppm: i64,
    /// Local reading at `epoch`, microseconds.
    pub offset: i64,
    /// Reference-time instant the offset anchors to.
    pub epoch: SimTime,
}

/// Sanity bound for crystal oscillators, in ppm.
pub const MAX_DRIFT_PPM: i64 = 200;

const MILLI_PPM_SCALE: i128 = 1_000_000_000;

impl ClockState {
    pub fn new(drift_milli_ppm: i64, offset: i64, epoch: SimTime) -> Self {
        assert!(
            drift_milli_ppm.abs() <= MAX_DRIFT_PPM * 1000,
            "drift outside oscillator sanity bound"
        );
        ClockState {
            drift_milli_ppm,
            offset,
            epoch,
        }
    }

    pub fn from_ppm(drift_ppm: f64, offset: i64, epoch: SimTime) -> Self {
        Self::new((drift_ppm * 1000.0).round() as i64, offset, epoch)
    }

    /// Local ticks per reference tick, exact.
    pub fn rate(&self) -> Ratio<i128> {
        Ratio::new(MILLI_PPM_SCALE + self.drift_milli_ppm as i128, MILLI_PPM_SCALE)
    }

    /// Local clock reading at reference time `true_time`, floor-quantized
    /// to the tick grid.
    pub fn local_time(&self, true_time: SimTime) -> SimTime {
        assert!(true_time >= self.epoch, "reading before clock epoch");
        let elapsed = true_time.delta(self.epoch) as i128;
        let local = Ratio::new(self.offset as i128, 1) + self.rate() * elapsed;
        SimTime(local.floor().to_integer() as u64)
    }

    /// Reference time at which the local clock reads `local`, rounded to
    /// the microsecond grid. Inverse of [`Self::local_time`] up to
    /// quantization.
    pub fn true_from_local(&self, local: SimTime) -> SimTime {
        let delta = local.as_micros() as i128 - self.offset as i128;
        let elapsed = Ratio::new(delta, 1) / self.rate();
        let micros = (elapsed + Ratio::new(self.epoch.as_micros() as i128, 1)).round();
        SimTime(micros.to_integer() as u64)
    }
}

/// Timestamp triple carried by each bundled message: when the head sent the
/// last beacon (head clock), when the node received it, and when the node
/// transmitted this message (both node clock).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct SyncSample {
    pub head_sent: SimTime,
    pub node_received: SimTime,
    pub node_sent: SimTime,
}

/// Head-side estimate of one node's clock relative to the head's.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SkewEstimate {
    /// Node-clock ticks per head-clock tick.
    pub ratio: Ratio<i128>,
    /// Node-clock anchor instant.
    pub anchor_node: SimTime,
    /// Head-clock instant corresponding to `anchor_node`.
    pub anchor_head: SimTime,
}

impl SkewEstimate {
    pub fn valid_from(&self) -> SimTime {
        self.anchor_head
    }

    /// Signed anchor offset (head minus node), microseconds.
    pub fn offset(&self) -> i64 {
        self.anchor_head.delta(self.anchor_node)
    }
}

/// Fold a new sync sample into a node's skew estimate.
///
/// The frequency ratio comes from the two-point quotient between `sample`
/// and `reference`; the offset re-anchors at `sample`. Callers keep the
/// earliest sample as the reference so the estimation baseline widens over
/// the run, which is what makes short synchronization intervals pay off.
/// Without a reference the prior ratio (or unity) is kept and only the
/// anchor moves.
pub fn update_skew(
    prev: Option<&SkewEstimate>,
    sample: &SyncSample,
    reference: Option<&SyncSample>,
) -> Result<SkewEstimate, SyncError> {
    let ratio = match reference {
        Some(r) => {
            let dh = sample.head_sent.delta(r.head_sent) as i128;
            if dh == 0 {
                return Err(SyncError::DegenerateInterval);
            }
            let dn = sample.node_sent.delta(r.node_sent) as i128;
            Ratio::new(dn, dh)
        }
        None => prev.map(|p| p.ratio).unwrap_or_else(|| Ratio::new(1, 1)),
    };
    Ok(SkewEstimate {
        ratio,
        anchor_node: sample.node_received,
        anchor_head: sample.head_sent,
    })
}

/// Head-clock equivalent of a node-clock timestamp.
pub fn translate_timestamp(est: &SkewEstimate, node_ts: SimTime) -> SimTime {
    let delta = node_ts.delta(est.anchor_node) as i128;
    let head_delta = Ratio::new(delta, 1) / est.ratio;
    let head = Ratio::new(est.anchor_head.as_micros() as i128, 1) + head_delta;
    SimTime(head.round().to_integer() as u64)
}

/// Absolute translation error of `est` for a node running `clock`, with
/// the head clock as the reference timeline.
pub fn sync_error(est: &SkewEstimate, clock: &ClockState, true_time: SimTime) -> Micros {
    let node_ts = clock.local_time(true_time);
    let translated = translate_timestamp(est, node_ts);
    Micros(translated.delta(true_time).unsigned_abs())
}

impl fmt::Display for SkewEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ratio={}/{} anchor={}@{}",
            self.ratio.numer(),
            self.ratio.denom(),
            self.anchor_node,
            self.anchor_head
        )
    }
}

/// Standalone drift-and-quantization experiment used by the interval sweep:
/// a single drifting node delivers sync samples every `si`, and the head's
/// translation error is probed on a fixed cadence in between.
pub mod trend {
    use super::*;

    pub struct TrialConfig {
        /// Interval between sync-sample deliveries.
        pub si: Micros,
        /// Node clock frequency error, milli-ppm.
        pub drift_milli_ppm: i64,
        /// Seeds the node clock's initial offset.
        pub seed: u64,
        /// Total reference time simulated.
        pub duration: Micros,
        /// Error-probe cadence.
        pub eval_interval: Micros,
    }

    /// Run one trial; returns `(probe time, translation error)` pairs.
    /// Probes before the first sample arrives are skipped — the head has
    /// nothing to translate with yet.
    pub fn run_trial(cfg: &TrialConfig) -> Vec<(SimTime, Micros)> {
        let offset = (crate::rng::mix(cfg.seed, 0x5157_0FF5) % MICROS_PER_SEC) as i64;
        let clock = ClockState::new(cfg.drift_milli_ppm, offset, SimTime::ZERO);

        let mut est: Option<SkewEstimate> = None;
        let mut reference: Option<SyncSample> = None;
        let mut errors = Vec::new();

        let mut next_sample = SimTime::ZERO + cfg.si;
        let mut next_eval = SimTime::ZERO + cfg.eval_interval;
        let end = SimTime::ZERO + cfg.duration;

        loop {
            let at_sample = next_sample <= next_eval;
            let now = if at_sample { next_sample } else { next_eval };
            if now > end {
                break;
            }
            if at_sample {
                let local = clock.local_time(now);
                let sample = SyncSample {
                    head_sent: now,
                    node_received: local,
                    node_sent: local,
                };
                est = Some(
                    update_skew(est.as_ref(), &sample, reference.as_ref())
                        .expect("sample intervals are positive"),
                );
                if reference.is_none() {
                    reference = Some(sample);
                }
                next_sample = next_sample + cfg.si;
            } else {
                if let Some(est) = &est {
                    errors.push((now, sync_error(est, &clock, now)));
                }
                next_eval = next_eval + cfg.eval_interval;
            }
        }
        errors
    }

    /// Median over a set of error magnitudes; `None` when empty.
    pub fn median_micros(values: &mut [Micros]) -> Option<Micros> {
        if values.is_empty() {
            return None;
        }
        values.sort();
        Some(values[values.len() / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ahts_lookup_matches_table() {
        let table = AccuracyTable::ahts();
        assert_eq!(
            accuracy_to_si(5e-6, &table).unwrap(),
            Micros::from_secs(10)
        );
        assert_eq!(
            accuracy_to_si(8.4225e-6, &table).unwrap(),
            Micros::from_secs(100)
        );
        assert!(matches!(
            accuracy_to_si(1e-6, &table),
            Err(SyncError::UnsatisfiableAccuracy { .. })
        ));
    }

    #[test]
    fn lookup_is_monotone_in_bound() {
        let table = AccuracyTable::ahts();
        let mut prev = Micros::ZERO;
        for bound in [1.8166e-6, 2.0e-6, 2.3385e-6, 5e-6, 8.4225e-6, 1e-3] {
            let si = accuracy_to_si(bound, &table).unwrap();
            assert!(si >= prev, "lookup must not shrink as the bound relaxes");
            prev = si;
        }
    }

    #[test]
    fn lookup_round_trips_table_rows() {
        for table in [AccuracyTable::ahts(), AccuracyTable::ee_ascfr()] {
            for row in table.rows() {
                let si = accuracy_to_si(row.mae_secs, &table).unwrap();
                assert!(si >= Micros::from_secs_f64(row.si_secs));
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let text = "si_seconds,mae_seconds\n1,1.8166e-6\n10,2.3385e-6\n100,8.4225e-6\n";
        let table = AccuracyTable::from_csv_str(text).unwrap();
        assert_eq!(table.rows().len(), 3);
        assert_eq!(
            accuracy_to_si(5e-6, &table).unwrap(),
            Micros::from_secs(10)
        );
        assert!(AccuracyTable::from_csv_str("bogus\n1,2\n").is_err());
        assert!(AccuracyTable::from_csv_str("si_seconds,mae_seconds\n").is_err());
        assert!(AccuracyTable::from_csv_str("si_seconds,mae_seconds\n10,1e-6\n1,2e-6\n").is_err());
    }

    #[test]
    fn clock_identity_and_drift() {
        let ident = ClockState::new(0, 0, SimTime::ZERO);
        assert_eq!(ident.local_time(SimTime(123_456)), SimTime(123_456));

        // +40 ppm over 10 s gains 400 us
        let fast = ClockState::new(40_000, 0, SimTime::ZERO);
        assert_eq!(
            fast.local_time(SimTime(10_000_000)),
            SimTime(10_000_400)
        );

        // at the epoch only the offset shows
        let offset = ClockState::new(-40_000, 1_000_000, SimTime::ZERO);
        assert_eq!(offset.local_time(SimTime::ZERO), SimTime(1_000_000));
    }

    #[test]
    fn clock_inverse() {
        let clock = ClockState::new(37_000, 123_456, SimTime(1_000));
        for t in [1_000u64, 5_000_000, 3_600_000_000] {
            let local = clock.local_time(SimTime(t));
            let back = clock.true_from_local(local);
            assert!(back.delta(SimTime(t)).abs() <= 1, "inverse within one tick");
        }
    }

    #[test]
    fn skew_recovery_perfect_clock() {
        let s0 = SyncSample {
            head_sent: SimTime(1_000_000),
            node_received: SimTime(1_000_000),
            node_sent: SimTime(1_000_000),
        };
        let s1 = SyncSample {
            head_sent: SimTime(11_000_000),
            node_received: SimTime(11_000_000),
            node_sent: SimTime(11_000_000),
        };
        let est = update_skew(None, &s1, Some(&s0)).unwrap();
        assert_eq!(est.ratio, Ratio::new(1, 1));
        assert_eq!(translate_timestamp(&est, SimTime(42)), SimTime(42));
    }

    #[test]
    fn skew_recovery_40ppm_noiseless() {
        // Construct noiseless samples from an exact clock; the recovered
        // ratio must match the clock's rate to within 1e-9 relative error.
        let clock = ClockState::new(40_000, 0, SimTime::ZERO);
        let make = |t: u64| {
            let local = clock.local_time(SimTime(t));
            SyncSample {
                head_sent: SimTime(t),
                node_received: local,
                node_sent: local,
            }
        };
        let s0 = make(10_000_000);
        let s1 = make(20_000_000);
        let est = update_skew(None, &s1, Some(&s0)).unwrap();
        let recovered = *est.ratio.numer() as f64 / *est.ratio.denom() as f64;
        assert!((recovered - 1.00004).abs() < 1e-9);
    }

    #[test]
    fn degenerate_interval_rejected() {
        let s = SyncSample {
            head_sent: SimTime(5),
            node_received: SimTime(5),
            node_sent: SimTime(5),
        };
        assert_eq!(
            update_skew(None, &s, Some(&s)).unwrap_err(),
            SyncError::DegenerateInterval
        );
    }

    #[test]
    fn translation_anchors_exactly() {
        let est = SkewEstimate {
            ratio: Ratio::new(100_004, 100_000),
            anchor_node: SimTime(7_777),
            anchor_head: SimTime(9_999),
        };
        assert_eq!(translate_timestamp(&est, SimTime(7_777)), SimTime(9_999));
    }

    #[test]
    fn translation_corrects_drift() {
        // 10 s of node time at +40 ppm maps back to slightly less head time.
        let clock = ClockState::new(40_000, 0, SimTime::ZERO);
        let make = |t: u64| {
            let local = clock.local_time(SimTime(t));
            SyncSample {
                head_sent: SimTime(t),
                node_received: local,
                node_sent: local,
            }
        };
        let s0 = make(10_000_000);
        let s1 = make(20_000_000);
        let est = update_skew(None, &s1, Some(&s0)).unwrap();
        for t in [25_000_000u64, 30_000_000, 100_000_000] {
            assert!(sync_error(&est, &clock, SimTime(t)).as_micros() <= 2);
        }
    }

    #[test]
    fn stale_ratio_error_grows_linearly() {
        // A 1 ppm ratio error, 10 s past the anchor, is about 10 us.
        let clock = ClockState::new(40_000, 0, SimTime::ZERO);
        let anchor_true = SimTime(10_000_000);
        let est = SkewEstimate {
            // estimate is off by 1 ppm: 1.000041 vs true 1.00004
            ratio: Ratio::new(1_000_041, 1_000_000),
            anchor_node: clock.local_time(anchor_true),
            anchor_head: anchor_true,
        };
        let err = sync_error(&est, &clock, SimTime(20_000_000));
        assert!(
            (err.as_micros() as i64 - 10).abs() <= 1,
            "expected ~10 us, got {err}"
        );
    }

    #[test]
    fn trend_trial_converges() {
        let cfg = trend::TrialConfig {
            si: Micros::from_secs(10),
            drift_milli_ppm: 40_000,
            seed: 7,
            duration: Micros::from_secs(120),
            eval_interval: Micros::from_secs(1),
        };
        let errors = trend::run_trial(&cfg);
        assert!(!errors.is_empty());
        // after the second sample (t >= 20 s) errors are within 5 us
        for (t, err) in &errors {
            if t.as_micros() >= 21_000_000 {
                assert!(err.as_micros() <= 5, "late error {err} at {t}");
            }
        }
    }

    #[test]
    fn trend_medians_non_increasing_in_shorter_si() {
        let duration = Micros::from_secs(250);
        let mut medians = Vec::new();
        for si_secs in [100u64, 10, 1] {
            let mut pool = Vec::new();
            for seed in 0..20u64 {
                let drift = if seed % 2 == 0 { 40_000 } else { -40_000 };
                let cfg = trend::TrialConfig {
                    si: Micros::from_secs(si_secs),
                    drift_milli_ppm: drift,
                    seed,
                    duration,
                    eval_interval: Micros::from_secs(1),
                };
                pool.extend(trend::run_trial(&cfg).into_iter().map(|(_, e)| e));
            }
            medians.push(trend::median_micros(&mut pool).unwrap());
        }
        assert!(
            medians[0] >= medians[1] && medians[1] >= medians[2],
            "medians {medians:?} must be non-increasing as SI shrinks"
        );
    }
}
