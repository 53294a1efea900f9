//! Credit assignment over trial records.
//!
//! Information gain (IG) compares the mean self-score of trials from which an
//! abstraction was extracted with the mean over all trials of the task. Future
//! IG compares trials that had the abstraction in context against the trials
//! that did not (the exclusion baseline). Both are log-ratios with a small floor
//! inside the logarithm.
//!
//! Two estimation routes exist: [`RecordScan`] re-scans a slice of records on
//! every query, [`TaskStats`] keeps running sums as records stream in. The
//! engine uses the streaming route; log replay uses the scan.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cost::Usage;
use crate::error::{CreditError, LibraryError};
use crate::ids::{AbstractionId, TaskId};
use crate::library::{Kind, Library};

/// One sampled-solve attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub task_id: TaskId,
    pub iteration: u64,
    /// 1-based trial number within the iteration.
    pub trial_index: u32,
    pub sampled_ids: BTreeSet<AbstractionId>,
    pub solution: String,
    pub self_score: f64,
    /// Post-consolidation ids of the abstractions extracted from this trial.
    pub extracted_ids: BTreeSet<AbstractionId>,
    pub token_cost: Usage,
    #[serde(default)]
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightingConfig {
    pub tau_skill: f64,
    pub tau_insight: f64,
    /// Floor applied to means before taking logarithms.
    pub score_floor: f64,
    pub min_conditional_samples: usize,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        WeightingConfig {
            tau_skill: 1.0,
            tau_insight: 0.0,
            score_floor: 1e-6,
            min_conditional_samples: 1,
        }
    }
}

impl WeightingConfig {
    pub fn tau(&self, kind: Kind) -> f64 {
        match kind {
            Kind::Skill => self.tau_skill,
            Kind::Insight => self.tau_insight,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.score_floor > 0.0 && self.score_floor.is_finite()) {
            return Err(format!("score_floor must be positive, got {}", self.score_floor));
        }
        if !self.tau_skill.is_finite() || !self.tau_insight.is_finite() {
            return Err("tau values must be finite".into());
        }
        if self.min_conditional_samples == 0 {
            return Err("min_conditional_samples must be at least 1".into());
        }
        Ok(())
    }

    /// `ln(max(numerator, floor)) - ln(max(denominator, floor))`.
    pub fn log_ratio(&self, numerator: f64, denominator: f64) -> f64 {
        numerator.max(self.score_floor).ln() - denominator.max(self.score_floor).ln()
    }
}

/// Mean self-score over all records of a task.
pub fn mu_base<R: Borrow<TrialRecord>>(records: &[R]) -> Result<f64, CreditError> {
    if records.is_empty() {
        return Err(CreditError::EmptyRecords);
    }
    let sum: f64 = records.iter().map(|r| r.borrow().self_score).sum();
    Ok(sum / records.len() as f64)
}

pub fn information_gain<R: Borrow<TrialRecord>>(
    records: &[R],
    id: AbstractionId,
    config: &WeightingConfig,
) -> Result<f64, CreditError> {
    RecordScan::new(records).information_gain(id, config)
}

pub fn future_information_gain<R: Borrow<TrialRecord>>(
    records: &[R],
    id: AbstractionId,
    config: &WeightingConfig,
) -> Result<f64, CreditError> {
    RecordScan::new(records).future_information_gain(id, config)
}

/// Source of per-task IG and future-IG estimates.
pub trait CreditEstimator {
    fn information_gain(&self, id: AbstractionId, config: &WeightingConfig) -> Result<f64, CreditError>;
    fn future_information_gain(&self, id: AbstractionId, config: &WeightingConfig) -> Result<f64, CreditError>;
}

/// Estimates by re-scanning a slice of one task's records.
pub struct RecordScan<'a, R> {
    records: &'a [R],
}

impl<'a, R: Borrow<TrialRecord>> RecordScan<'a, R> {
    pub fn new(records: &'a [R]) -> Self {
        RecordScan { records }
    }

    fn mean_where(&self, pred: impl Fn(&TrialRecord) -> bool) -> (usize, f64) {
        let mut n = 0;
        let mut sum = 0.0;
        for r in self.records.iter().map(Borrow::borrow).filter(|r| pred(r)) {
            n += 1;
            sum += r.self_score;
        }
        (n, if n == 0 { 0.0 } else { sum / n as f64 })
    }
}

impl<R: Borrow<TrialRecord>> CreditEstimator for RecordScan<'_, R> {
    fn information_gain(&self, id: AbstractionId, config: &WeightingConfig) -> Result<f64, CreditError> {
        let base = mu_base(self.records)?;
        let (n, cond) = self.mean_where(|r| r.extracted_ids.contains(&id));
        if n < config.min_conditional_samples {
            return Err(CreditError::UndefinedIg {
                id,
                present: n,
                required: config.min_conditional_samples,
            });
        }
        Ok(config.log_ratio(cond, base))
    }

    fn future_information_gain(&self, id: AbstractionId, config: &WeightingConfig) -> Result<f64, CreditError> {
        if self.records.is_empty() {
            return Err(CreditError::EmptyRecords);
        }
        let (present, cond) = self.mean_where(|r| r.sampled_ids.contains(&id));
        let (absent, excl) = self.mean_where(|r| !r.sampled_ids.contains(&id));
        if present < config.min_conditional_samples || absent == 0 {
            return Err(CreditError::UndefinedFutureIg { id, present, absent });
        }
        Ok(config.log_ratio(cond, excl))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Pool {
    n: usize,
    sum: f64,
}

impl Pool {
    fn add(&mut self, score: f64) {
        self.n += 1;
        self.sum += score;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }
}

/// Running sums for one task, updated as trials and extractions arrive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskStats {
    all: Pool,
    extracted: BTreeMap<AbstractionId, Pool>,
    /// Per sampled id: trials with it in context, trials without it.
    sampled: BTreeMap<AbstractionId, (Pool, Pool)>,
}

impl TaskStats {
    pub fn new() -> Self {
        Self::default()
    }

    /// Counts a trial's score toward the baseline and its sampled pools.
    /// Extraction membership is reported separately via [`Self::observe_extraction`].
    pub fn observe_trial(&mut self, record: &TrialRecord) {
        for id in &record.sampled_ids {
            // every earlier trial lacked this id
            let all = self.all;
            self.sampled.entry(*id).or_insert((Pool::default(), all));
        }
        for (id, (present, absent)) in self.sampled.iter_mut() {
            if record.sampled_ids.contains(id) {
                present.add(record.self_score);
            } else {
                absent.add(record.self_score);
            }
        }
        self.all.add(record.self_score);
    }

    pub fn observe_extraction(&mut self, id: AbstractionId, score: f64) {
        self.extracted.entry(id).or_default().add(score);
    }

    /// Feeds a complete record (trial plus its extractions).
    pub fn observe(&mut self, record: &TrialRecord) {
        self.observe_trial(record);
        for id in &record.extracted_ids {
            self.observe_extraction(*id, record.self_score);
        }
    }

    pub fn trials(&self) -> usize {
        self.all.n
    }

    pub fn mu_base(&self) -> Result<f64, CreditError> {
        if self.all.n == 0 {
            return Err(CreditError::EmptyRecords);
        }
        Ok(self.all.mean())
    }
}

impl CreditEstimator for TaskStats {
    fn information_gain(&self, id: AbstractionId, config: &WeightingConfig) -> Result<f64, CreditError> {
        let base = self.mu_base()?;
        let pool = self.extracted.get(&id).copied().unwrap_or_default();
        if pool.n < config.min_conditional_samples {
            return Err(CreditError::UndefinedIg {
                id,
                present: pool.n,
                required: config.min_conditional_samples,
            });
        }
        Ok(config.log_ratio(pool.mean(), base))
    }

    fn future_information_gain(&self, id: AbstractionId, config: &WeightingConfig) -> Result<f64, CreditError> {
        if self.all.n == 0 {
            return Err(CreditError::EmptyRecords);
        }
        let (present, absent) = self.sampled.get(&id).copied().unwrap_or((Pool::default(), self.all));
        if present.n < config.min_conditional_samples || absent.n == 0 {
            return Err(CreditError::UndefinedFutureIg {
                id,
                present: present.n,
                absent: absent.n,
            });
        }
        Ok(config.log_ratio(present.mean(), absent.mean()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgUpdate {
    pub id: AbstractionId,
    pub kind: Kind,
    /// The estimate itself, also computed for insights.
    pub raw: f64,
    /// What was credited: `raw` for skills, 0 for insights.
    pub contribution: f64,
    /// Stored `ig_score` after the update.
    pub stored: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FutureIgUpdate {
    pub id: AbstractionId,
    pub value: f64,
    pub history_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditSkip {
    pub id: AbstractionId,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CreditReport {
    pub ig: Vec<IgUpdate>,
    pub future_ig: Vec<FutureIgUpdate>,
    pub skipped: Vec<CreditSkip>,
}

/// Propagates credit two steps back: IG to this iteration's extractions and
/// future IG to every abstraction sampled this iteration. Nothing else in the
/// library is touched. Undefined estimates are skipped and reported.
pub fn update_credit(
    library: &mut Library,
    estimator: &dyn CreditEstimator,
    extracted: &[AbstractionId],
    sampled: &BTreeSet<AbstractionId>,
) -> Result<CreditReport, LibraryError> {
    let config = library.config().clone();
    let mut report = CreditReport::default();
    let mut seen = BTreeSet::new();

    for &id in extracted.iter().filter(|id| seen.insert(**id)) {
        let kind = library.get(id).ok_or(LibraryError::UnknownId(id))?.kind;
        match estimator.information_gain(id, &config) {
            Ok(raw) => {
                let contribution = if kind == Kind::Skill { raw } else { 0.0 };
                let stored = if kind == Kind::Skill {
                    library.raise_ig(id, raw)?
                } else {
                    library.get(id).map(|a| a.ig_score).unwrap_or_default()
                };
                report.ig.push(IgUpdate {
                    id,
                    kind,
                    raw,
                    contribution,
                    stored,
                });
            }
            Err(e) => report.skipped.push(CreditSkip {
                id,
                reason: e.to_string(),
            }),
        }
    }

    for &id in sampled {
        if !library.contains(id) {
            report.skipped.push(CreditSkip {
                id,
                reason: "no longer live".into(),
            });
            continue;
        }
        match estimator.future_information_gain(id, &config) {
            Ok(value) => {
                let history_len = library.push_future_ig(id, value)?;
                report.future_ig.push(FutureIgUpdate { id, value, history_len });
            }
            Err(e) => report.skipped.push(CreditSkip {
                id,
                reason: e.to_string(),
            }),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::test_support::{draft, unit};

    const Z: AbstractionId = AbstractionId(1);

    fn rec(score: f64, sampled: &[u64], extracted: &[u64]) -> TrialRecord {
        TrialRecord {
            task_id: TaskId::new("t"),
            iteration: 1,
            trial_index: 1,
            sampled_ids: sampled.iter().map(|&i| AbstractionId(i)).collect(),
            solution: String::new(),
            self_score: score,
            extracted_ids: extracted.iter().map(|&i| AbstractionId(i)).collect(),
            token_cost: Usage::default(),
            failed: false,
        }
    }

    fn both<T: PartialEq + std::fmt::Debug>(
        records: &[TrialRecord],
        f: impl Fn(&dyn CreditEstimator) -> T,
    ) -> T {
        let mut stats = TaskStats::new();
        records.iter().for_each(|r| stats.observe(r));
        let a = f(&RecordScan::new(records));
        let b = f(&stats);
        assert_eq!(a, b);
        a
    }

    #[test]
    fn mu_base_examples() {
        assert_eq!(mu_base(&[rec(0.5, &[], &[]), rec(1.0, &[], &[]), rec(0.75, &[], &[])]), Ok(0.75));
        assert_eq!(mu_base(&[rec(0.8, &[], &[])]), Ok(0.8));
        assert_eq!(mu_base(&[rec(0.0, &[], &[]), rec(0.0, &[], &[])]), Ok(0.0));
        assert_eq!(mu_base::<TrialRecord>(&[]), Err(CreditError::EmptyRecords));
    }

    #[test]
    fn ig_hand_checks() {
        let cfg = WeightingConfig::default();
        let rs = [rec(0.5, &[], &[]), rec(1.0, &[], &[1]), rec(0.75, &[], &[])];
        let ig = both(&rs, |e| e.information_gain(Z, &cfg)).unwrap();
        assert!((ig - 0.287682).abs() < 1e-6);
        assert!((ig - (4.0f64 / 3.0).ln()).abs() < 1e-12);

        let all = [rec(0.5, &[], &[1]), rec(1.0, &[], &[1]), rec(0.75, &[], &[1])];
        assert_eq!(both(&all, |e| e.information_gain(Z, &cfg)), Ok(0.0));

        let neg = [rec(0.5, &[], &[1]), rec(1.0, &[], &[])];
        let ig = both(&neg, |e| e.information_gain(Z, &cfg)).unwrap();
        assert!((ig - (-0.405465)).abs() < 1e-6);
    }

    #[test]
    fn ig_undefined_when_never_extracted() {
        let cfg = WeightingConfig::default();
        let rs = [rec(0.5, &[], &[]), rec(0.7, &[], &[2])];
        assert!(matches!(
            both(&rs, |e| e.information_gain(Z, &cfg)),
            Err(CreditError::UndefinedIg { present: 0, .. })
        ));
    }

    #[test]
    fn future_ig_hand_checks() {
        let cfg = WeightingConfig::default();
        let rs = [rec(0.2, &[], &[]), rec(0.8, &[1], &[])];
        let fig = both(&rs, |e| e.future_information_gain(Z, &cfg)).unwrap();
        assert!((fig - 4.0f64.ln()).abs() < 1e-12);

        let everywhere = [rec(0.2, &[1], &[]), rec(0.8, &[1], &[])];
        assert!(matches!(
            both(&everywhere, |e| e.future_information_gain(Z, &cfg)),
            Err(CreditError::UndefinedFutureIg { absent: 0, .. })
        ));

        let equal = [rec(0.6, &[1], &[]), rec(0.6, &[], &[])];
        assert_eq!(both(&equal, |e| e.future_information_gain(Z, &cfg)), Ok(0.0));
    }

    #[test]
    fn floor_keeps_zero_scores_finite() {
        let cfg = WeightingConfig::default();
        let rs = [rec(0.0, &[], &[]), rec(0.5, &[1], &[])];
        let fig = both(&rs, |e| e.future_information_gain(Z, &cfg)).unwrap();
        assert!((fig - (0.5f64.ln() - 1e-6f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn min_conditional_samples_is_enforced() {
        let cfg = WeightingConfig {
            min_conditional_samples: 2,
            ..Default::default()
        };
        let rs = [rec(0.2, &[], &[]), rec(0.8, &[1], &[1])];
        assert!(both(&rs, |e| e.information_gain(Z, &cfg)).is_err());
        assert!(both(&rs, |e| e.future_information_gain(Z, &cfg)).is_err());
    }

    fn library_with(n: usize) -> (Library, Vec<AbstractionId>) {
        let mut lib = Library::new(4, WeightingConfig::default());
        let ids = (0..n)
            .map(|i| lib.add(draft(Kind::Skill, &format!("s{i}"), unit(4, 0))).unwrap())
            .collect();
        (lib, ids)
    }

    #[test]
    fn update_keeps_peak_ig() {
        let (mut lib, ids) = library_with(1);
        let z = ids[0];
        lib.raise_ig(z, 0.5).unwrap();
        // base mean e^-0.3 with the extracted trial at 1.0 gives IG 0.3
        let other = 2.0 * (-0.3f64).exp() - 1.0;
        let rs = [rec(other, &[], &[]), rec(1.0, &[], &[z.0])];
        let ig = information_gain(&rs, z, lib.config()).unwrap();
        assert!((ig - 0.3).abs() < 1e-12);
        let report = update_credit(&mut lib, &RecordScan::new(&rs), &[z], &BTreeSet::new()).unwrap();
        assert_eq!(report.ig[0].stored, 0.5);
        assert_eq!(lib.get(z).unwrap().ig_score, 0.5);
    }

    #[test]
    fn insights_contribute_zero_ig() {
        let mut lib = Library::new(4, WeightingConfig::default());
        let i = lib.add(draft(Kind::Insight, "i", unit(4, 0))).unwrap();
        let rs = [rec(0.2, &[], &[]), rec(0.8, &[], &[i.0])];
        let report = update_credit(&mut lib, &RecordScan::new(&rs), &[i], &BTreeSet::new()).unwrap();
        assert_eq!(report.ig[0].contribution, 0.0);
        assert!(report.ig[0].raw > 0.0);
        assert_eq!(lib.get(i).unwrap().ig_score, 0.0);
    }

    #[test]
    fn future_ig_appends_exactly_once() {
        let (mut lib, ids) = library_with(3);
        let z = ids[0];
        let rs = [rec(0.2, &[], &[]), rec(0.8, &[z.0], &[])];
        let sampled: BTreeSet<_> = [z].into();
        let before = lib.get(z).unwrap().future_ig_history.len();
        let report = update_credit(&mut lib, &RecordScan::new(&rs), &[], &sampled).unwrap();
        assert_eq!(lib.get(z).unwrap().future_ig_history.len(), before + 1);
        assert!((report.future_ig[0].value - 1.386294).abs() < 1e-6);
        // untouched entries stay untouched
        assert!(lib.get(ids[1]).unwrap().future_ig_history.is_empty());
    }

    #[test]
    fn undefined_cases_are_skipped() {
        let (mut lib, ids) = library_with(2);
        let rs = [rec(0.4, &[ids[0].0], &[]), rec(0.6, &[ids[0].0], &[])];
        let sampled: BTreeSet<_> = [ids[0]].into();
        let report = update_credit(&mut lib, &RecordScan::new(&rs), &[ids[1]], &sampled).unwrap();
        assert_eq!(report.skipped.len(), 2);
        assert!(report.ig.is_empty() && report.future_ig.is_empty());
        assert!(lib.get(ids[0]).unwrap().future_ig_history.is_empty());
    }
}
