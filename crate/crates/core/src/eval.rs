//! Same-site k-fold cross-validation, cross-site transfer, and the
//! backbone-depth ablation, with confusion-matrix metrics.
//!
//! The positive class is the abnormal outcome (label 1). Rates whose
//! denominator is zero are reported as absent. Standard deviations are
//! population standard deviations (divide by the number of values).

use std::collections::HashSet;
use std::fmt::{self, Write as _};

use indexmap::IndexMap;
use rand::seq::SliceRandom;

use crate::data::{Dataset, Site, Task};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use crate::optim::StageSchedule;
use crate::pipeline::{finetune, predict, refine, train_scratch, Checkpoint, CheckpointStage, Prediction};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub k: usize,
    pub seed: u64,
    /// Sample id → fold index, in input order.
    pub assignments: IndexMap<String, usize>,
}

impl FoldSplit {
    pub fn fold(&self, fold: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Seeded shuffle, then round-robin assignment to `k` folds.
pub fn kfold_split<S: AsRef<str>>(ids: &[S], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::Eval(format!("k must be >= 2, got {k}")));
    }
    if ids.len() < k {
        return Err(Error::Eval(format!("cannot split {} ids into {k} folds", ids.len())));
    }
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_ref()) {
            return Err(Error::Eval(format!("duplicate id {:?}", id.as_ref())));
        }
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut seeded(derive_seed(seed, "kfold", k as u64)));
    let mut fold_of = vec![0; ids.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    Ok(FoldSplit {
        k,
        seed,
        assignments: ids
            .iter()
            .zip(fold_of)
            .map(|(id, f)| (id.as_ref().to_string(), f))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    fn rate(num: usize, den: usize) -> Option<f64> {
        (den > 0).then(|| 100.0 * num as f64 / den as f64)
    }

    pub fn accuracy(&self) -> Option<f64> {
        Self::rate(self.tp + self.tn, self.total())
    }

    pub fn sensitivity(&self) -> Option<f64> {
        Self::rate(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> Option<f64> {
        Self::rate(self.tn, self.tn + self.fp)
    }

    fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// One fold (or seed) of a report. Rates are percentages.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub label: String,
    pub counts: Confusion,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

impl MetricsRow {
    pub fn from_counts(label: impl Into<String>, counts: Confusion) -> Self {
        Self {
            label: label.into(),
            accuracy: counts.accuracy(),
            sensitivity: counts.sensitivity(),
            specificity: counts.specificity(),
            counts,
        }
    }
}

pub fn confusion_metrics(preds: &[u8], labels: &[u8]) -> Result<MetricsRow> {
    if preds.len() != labels.len() {
        return Err(Error::Eval(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if preds.is_empty() {
        return Err(Error::Eval("no predictions".into()));
    }
    let mut c = Confusion::default();
    for (&p, &l) in preds.iter().zip(labels) {
        if p > 1 || l > 1 {
            return Err(Error::Eval(format!("binary values expected, got prediction {p} label {l}")));
        }
        match (p, l) {
            (1, 1) => c.tp += 1,
            (0, 0) => c.tn += 1,
            (1, 0) => c.fp += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(MetricsRow::from_counts("all", c))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    /// Number of rows where the rate was defined.
    pub n: usize,
}

/// Mean and population standard deviation of the defined values.
pub fn summarize(values: impl IntoIterator<Item = Option<f64>>) -> Option<Stat> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some(Stat {
        mean,
        std: var.sqrt(),
        n: v.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    SameSite,
    CrossSite { train: Site, test: Site },
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::SameSite => f.write_str("same-site"),
            Protocol::CrossSite { train, test } => write!(f, "cross-site {train}->{test}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub arm: String,
    pub protocol: Protocol,
    pub sites: Vec<Site>,
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn accuracy(&self) -> Option<Stat> {
        summarize(self.rows.iter().map(|r| r.accuracy))
    }

    pub fn sensitivity(&self) -> Option<Stat> {
        summarize(self.rows.iter().map(|r| r.sensitivity))
    }

    pub fn specificity(&self) -> Option<Stat> {
        summarize(self.rows.iter().map(|r| r.specificity))
    }

    pub fn totals(&self) -> Confusion {
        let mut c = Confusion::default();
        for r in &self.rows {
            c.add(&r.counts);
        }
        c
    }

    fn sites_label(&self) -> String {
        self.sites.iter().map(Site::to_string).collect::<Vec<_>>().join("+")
    }

    /// Machine-readable key=value table: one line per row, then an
    /// aggregate line with `mean±std`.
    pub fn render_table(&self) -> String {
        let rate = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
        let stat = |s: Option<Stat>| s.map_or_else(|| "NA".to_string(), |s| format!("{:.4}±{:.4}", s.mean, s.std));
        let mut out = String::new();
        writeln!(out, "# arm={} protocol={} sites={}", self.arm, self.protocol, self.sites_label()).unwrap();
        for r in &self.rows {
            let c = r.counts;
            writeln!(
                out,
                "fold={} acc={} sens={} spec={} TP={} TN={} FP={} FN={}",
                r.label,
                rate(r.accuracy),
                rate(r.sensitivity),
                rate(r.specificity),
                c.tp,
                c.tn,
                c.fp,
                c.fn_
            )
            .unwrap();
        }
        let t = self.totals();
        writeln!(
            out,
            "fold=aggregate acc={} sens={} spec={} TP={} TN={} FP={} FN={}",
            stat(self.accuracy()),
            stat(self.sensitivity()),
            stat(self.specificity()),
            t.tp,
            t.tn,
            t.fp,
            t.fn_
        )
        .unwrap();
        out
    }

    /// Human-readable summary in the shape of a results table.
    pub fn render_text(&self) -> String {
        let stat = |s: Option<Stat>| s.map_or_else(|| "n/a".to_string(), |s| format!("{:6.2}% ± {:5.2}%", s.mean, s.std));
        let mut out = String::new();
        writeln!(out, "{} / {} / {}", self.arm, self.protocol, self.sites_label()).unwrap();
        writeln!(out, "  Accuracy     {}", stat(self.accuracy())).unwrap();
        writeln!(out, "  Sensitivity  {}", stat(self.sensitivity())).unwrap();
        writeln!(out, "  Specificity  {}", stat(self.specificity())).unwrap();
        out
    }
}

/// A training recipe evaluated by the harness.
pub trait Arm: Sync {
    fn name(&self) -> &str;

    fn fit_predict(&self, train: &Dataset, test: &Dataset, seed: u64) -> Result<Vec<Prediction>>;
}

/// Refine then finetune from a pretrained checkpoint.
pub struct TransferArm<'a> {
    pub pretrained: &'a Checkpoint,
    pub refine: StageSchedule,
    pub finetune: StageSchedule,
}

impl Arm for TransferArm<'_> {
    fn name(&self) -> &str {
        "transfer"
    }

    fn fit_predict(&self, train: &Dataset, test: &Dataset, seed: u64) -> Result<Vec<Prediction>> {
        self.pretrained.require_stage(CheckpointStage::Pretrained)?;
        let refined = refine(self.pretrained, train, &self.refine, seed)?;
        let tuned = finetune(&refined, train, &self.finetune, seed)?;
        predict(&tuned, test)
    }
}

/// Random initialization, all layers trained.
pub struct ScratchArm {
    pub config: ModelConfig,
    pub schedule: StageSchedule,
}

impl Arm for ScratchArm {
    fn name(&self) -> &str {
        "scratch"
    }

    fn fit_predict(&self, train: &Dataset, test: &Dataset, seed: u64) -> Result<Vec<Prediction>> {
        let ck = train_scratch(train, self.config, &self.schedule, seed)?;
        predict(&ck, test)
    }
}

fn score(row_label: String, preds: &[Prediction], test: &Dataset) -> Result<MetricsRow> {
    if preds.len() != test.len() || preds.iter().zip(test.samples()).any(|(p, s)| p.id != s.id) {
        return Err(Error::Eval("predictions do not line up with the evaluation samples".into()));
    }
    let labels: Vec<u8> = test
        .samples()
        .iter()
        .map(|s| s.label.as_outcome().expect("outcome task"))
        .collect();
    let classes: Vec<u8> = preds.iter().map(|p| p.class).collect();
    let mut row = confusion_metrics(&classes, &labels)?;
    row.label = row_label;
    Ok(row)
}

fn check_disjoint(train: &Dataset, test: &Dataset) -> Result<()> {
    let train_ids: HashSet<&str> = train.ids().into_iter().collect();
    if let Some(id) = test.ids().into_iter().find(|id| train_ids.contains(id)) {
        return Err(Error::Eval(format!("sample {id:?} appears in both training and evaluation sets")));
    }
    Ok(())
}

/// Run independent jobs on up to `jobs` threads; results keep job order.
fn run_jobs<R: Send>(count: usize, jobs: usize, f: impl Fn(usize) -> Result<R> + Sync) -> Result<Vec<R>> {
    if jobs <= 1 || count <= 1 {
        return (0..count).map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<R>>> = (0..count).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(count) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= count {
                    break;
                }
                let r = f(i);
                results.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every job ran")).collect()
}

fn sites_of(data: &Dataset) -> Vec<Site> {
    let mut s: Vec<Site> = data.samples().iter().map(|s| s.site).collect();
    s.sort();
    s.dedup();
    s
}

/// k-fold cross-validation: train on k−1 folds, evaluate the held-out fold.
pub fn cross_validate(data: &Dataset, arm: &dyn Arm, k: usize, seed: u64, jobs: usize) -> Result<MetricsReport> {
    data.require_task(Task::Outcome)?;
    let data = data.materialize()?;
    let split = kfold_split(&data.ids(), k, seed)?;
    let rows = run_jobs(k, jobs, |fold| {
        let train = data.filter(|s| split.assignments[&s.id] != fold);
        let test = data.filter(|s| split.assignments[&s.id] == fold);
        check_disjoint(&train, &test)?;
        let preds = arm.fit_predict(&train, &test, derive_seed(seed, "fold", fold as u64))?;
        score(fold.to_string(), &preds, &test)
    })?;
    Ok(MetricsReport {
        arm: arm.name().to_string(),
        protocol: Protocol::SameSite,
        sites: sites_of(&data),
        rows,
    })
}

/// Train on every `train_site` sample, evaluate on every `test_site`
/// sample, once per seed.
pub fn cross_site(
    data: &Dataset,
    train_site: Site,
    test_site: Site,
    arm: &dyn Arm,
    seeds: &[u64],
    jobs: usize,
) -> Result<MetricsReport> {
    data.require_task(Task::Outcome)?;
    if train_site == test_site {
        return Err(Error::Eval(format!("train and test site are both {train_site}")));
    }
    if seeds.is_empty() {
        return Err(Error::Eval("at least one seed is required".into()));
    }
    let data = data.materialize()?;
    let (train, test) = (data.by_site(train_site), data.by_site(test_site));
    for (site, part) in [(train_site, &train), (test_site, &test)] {
        if part.is_empty() {
            return Err(Error::Eval(format!("dataset has no {site} samples")));
        }
    }
    check_disjoint(&train, &test)?;
    let rows = run_jobs(seeds.len(), jobs, |i| {
        let preds = arm.fit_predict(&train, &test, derive_seed(seeds[i], "cross-site", 0))?;
        score(format!("seed{}", seeds[i]), &preds, &test)
    })?;
    Ok(MetricsReport {
        arm: arm.name().to_string(),
        protocol: Protocol::CrossSite {
            train: train_site,
            test: test_site,
        },
        sites: vec![train_site, test_site],
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<(Variant, MetricsReport)>,
}

impl AblationTable {
    pub fn render(&self) -> String {
        let stat = |s: Option<Stat>| s.map_or_else(|| "NA".to_string(), |s| format!("{:.4}±{:.4}", s.mean, s.std));
        let mut out = String::new();
        for (variant, r) in &self.rows {
            writeln!(
                out,
                "variant={variant} acc={} sens={} spec={}",
                stat(r.accuracy()),
                stat(r.sensitivity()),
                stat(r.specificity())
            )
            .unwrap();
        }
        out
    }
}

/// Scratch cross-validation for each backbone depth.
pub fn ablation(
    data: &Dataset,
    variants: &[Variant],
    base: ModelConfig,
    schedule: &StageSchedule,
    k: usize,
    seed: u64,
    jobs: usize,
) -> Result<AblationTable> {
    let rows = variants
        .iter()
        .map(|&variant| {
            let arm = ScratchArm {
                config: ModelConfig { variant, out_dim: 2, ..base },
                schedule: *schedule,
            };
            Ok((variant, cross_validate(data, &arm, k, seed, jobs)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_cohort_fold_sizes() {
        let ids: Vec<String> = (0..156).map(|i| format!("s{i}")).collect();
        let split = kfold_split(&ids, 5, 0).unwrap();
        assert_eq!(split.sizes(), vec![32, 31, 31, 31, 31]);
    }

    #[test]
    fn ten_ids_five_folds() {
        let ids: Vec<String> = (0..10).map(|i| i.to_string()).collect();
        assert_eq!(kfold_split(&ids, 5, 9).unwrap().sizes(), vec![2; 5]);
    }

    #[test]
    fn split_errors() {
        let ids = ["a", "b"];
        assert!(kfold_split(&ids, 3, 0).is_err());
        assert!(kfold_split(&ids, 1, 0).is_err());
        assert!(kfold_split(&["a", "a", "b"], 2, 0).is_err());
    }

    #[test]
    fn seeds_change_assignments() {
        let ids: Vec<String> = (0..40).map(|i| i.to_string()).collect();
        let differing = (0..20u64)
            .filter(|&s| kfold_split(&ids, 5, s).unwrap() != kfold_split(&ids, 5, s + 100).unwrap())
            .count();
        assert_eq!(differing, 20);
        assert_eq!(kfold_split(&ids, 5, 3).unwrap(), kfold_split(&ids, 5, 3).unwrap());
    }

    #[test]
    fn balanced_confusion() {
        let r = confusion_metrics(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap();
        assert_eq!(r.counts, Confusion { tp: 1, tn: 1, fp: 1, fn_: 1 });
        assert_eq!((r.accuracy, r.sensitivity, r.specificity), (Some(50.0), Some(50.0), Some(50.0)));
    }

    #[test]
    fn perfect_predictions() {
        let r = confusion_metrics(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((r.accuracy, r.sensitivity, r.specificity), (Some(100.0), Some(100.0), Some(100.0)));
    }

    #[test]
    fn no_positives_leaves_sensitivity_absent() {
        let r = confusion_metrics(&[0, 1, 0], &[0, 0, 0]).unwrap();
        assert_eq!(r.sensitivity, None);
        assert!(r.specificity.is_some());
        assert!(r.render_safe());
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(confusion_metrics(&[1, 0], &[1]).is_err());
        assert!(confusion_metrics(&[], &[]).is_err());
    }

    #[test]
    fn population_std() {
        let s = summarize([Some(60.0), Some(80.0), None]).unwrap();
        assert_eq!((s.mean, s.std, s.n), (70.0, 10.0, 2));
        assert!(summarize([None, None]).is_none());
    }

    #[test]
    fn table_rendering_marks_absent_rates() {
        let report = MetricsReport {
            arm: "scratch".into(),
            protocol: Protocol::SameSite,
            sites: vec![Site::A, Site::B],
            rows: vec![
                MetricsRow::from_counts("0", Confusion { tp: 0, tn: 2, fp: 0, fn_: 0 }),
                MetricsRow::from_counts("1", Confusion { tp: 1, tn: 1, fp: 1, fn_: 1 }),
            ],
        };
        let table = report.render_table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[1], "fold=0 acc=100.0000 sens=NA spec=100.0000 TP=0 TN=2 FP=0 FN=0");
        assert_eq!(lines[3], "fold=aggregate acc=75.0000±25.0000 sens=50.0000±0.0000 spec=75.0000±25.0000 TP=1 TN=3 FP=1 FN=1");
    }

    impl MetricsRow {
        fn render_safe(&self) -> bool {
            [self.accuracy, self.sensitivity, self.specificity]
                .iter()
                .all(|v| v.map_or(true, |x| x.is_finite()))
        }
    }
}
