use std::collections::HashSet;
use std::sync::Mutex;

use age2hie::data::synth::{Dims, SiteShift};
use age2hie::data::{synth_hie_dataset, Dataset, Site};
use age2hie::eval::{cross_site, cross_validate, kfold_split, Arm, Protocol};
use age2hie::{Prediction, Result};
use proptest::prelude::*;

fn cohort(n: usize, mix: f64) -> Dataset {
    synth_hie_dataset(n, Dims::cube(8), 1, mix, SiteShift::IDENTITY).unwrap()
}

/// Predicts from a hash of (id, seed); records every split it sees.
struct Coin {
    seen: Mutex<Vec<(Vec<String>, Vec<String>, u64)>>,
}

impl Coin {
    fn new() -> Self {
        Self { seen: Mutex::new(Vec::new()) }
    }
}

impl Arm for Coin {
    fn name(&self) -> &str {
        "coin"
    }

    fn fit_predict(&self, train: &Dataset, test: &Dataset, seed: u64) -> Result<Vec<Prediction>> {
        let ids = |d: &Dataset| d.ids().into_iter().map(String::from).collect::<Vec<_>>();
        self.seen.lock().unwrap().push((ids(train), ids(test), seed));
        Ok(test
            .samples()
            .iter()
            .map(|s| {
                let h = s.id.bytes().fold(seed, |h, b| h.rotate_left(7) ^ b as u64);
                Prediction { id: s.id.clone(), class: (h % 2) as u8, probability: (h % 2) as f64 }
            })
            .collect())
    }
}

/// Always answers "abnormal".
struct AllPositive;

impl Arm for AllPositive {
    fn name(&self) -> &str {
        "all-positive"
    }

    fn fit_predict(&self, _: &Dataset, test: &Dataset, _: u64) -> Result<Vec<Prediction>> {
        Ok(test.samples().iter().map(|s| Prediction { id: s.id.clone(), class: 1, probability: 1.0 }).collect())
    }
}

/// Drops the last prediction.
struct Short;

impl Arm for Short {
    fn name(&self) -> &str {
        "short"
    }

    fn fit_predict(&self, train: &Dataset, test: &Dataset, seed: u64) -> Result<Vec<Prediction>> {
        let mut p = AllPositive.fit_predict(train, test, seed)?;
        p.pop();
        Ok(p)
    }
}

#[test]
fn every_sample_is_tested_exactly_once_and_never_trained_on() {
    let data = cohort(30, 0.5);
    let arm = Coin::new();
    let report = cross_validate(&data, &arm, 5, 11, 1).unwrap();
    assert_eq!(report.rows.len(), 5);
    assert_eq!(report.protocol, Protocol::SameSite);
    assert_eq!(report.totals().total(), 30);

    let seen = arm.seen.into_inner().unwrap();
    let mut tested = HashSet::new();
    let mut seeds = HashSet::new();
    for (train, test, seed) in &seen {
        assert_eq!(train.len() + test.len(), 30);
        let train: HashSet<_> = train.iter().collect();
        for id in test {
            assert!(!train.contains(id), "{id} leaked into training");
            assert!(tested.insert(id.clone()), "{id} tested twice");
        }
        seeds.insert(*seed);
    }
    assert_eq!(tested.len(), 30);
    assert_eq!(seeds.len(), 5, "each fold trains under its own seed");
}

#[test]
fn parallel_jobs_reproduce_the_serial_report() {
    let data = cohort(40, 0.5);
    let serial = cross_validate(&data, &Coin::new(), 5, 3, 1).unwrap();
    for jobs in [2, 3, 8] {
        assert_eq!(cross_validate(&data, &Coin::new(), 5, 3, jobs).unwrap(), serial);
    }
    assert_ne!(cross_validate(&data, &Coin::new(), 5, 4, 1).unwrap(), serial);
}

#[test]
fn constant_classifier_has_no_specificity() {
    let data = cohort(20, 0.5);
    let report = cross_validate(&data, &AllPositive, 4, 0, 1).unwrap();
    let t = report.totals();
    assert_eq!((t.tp, t.tn, t.fp, t.fn_), (10, 0, 10, 0));
    assert!(report.rows.iter().all(|r| r.sensitivity.is_none_or(|s| s == 100.0)));
    assert!(report.rows.iter().all(|r| r.specificity.is_none_or(|s| s == 0.0)));
    let table = report.render_table();
    assert_eq!(table.lines().count(), 1 + 4 + 1);
    assert!(table.lines().last().unwrap().starts_with("fold=aggregate "));
}

#[test]
fn misaligned_predictions_are_rejected() {
    assert!(cross_validate(&cohort(10, 0.5), &Short, 2, 0, 1).is_err());
}

#[test]
fn cross_site_runs_once_per_seed() {
    let data = cohort(20, 0.5);
    let arm = Coin::new();
    let report = cross_site(&data, Site::A, Site::B, &arm, &[1, 2, 3], 1).unwrap();
    let labels: Vec<&str> = report.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["seed1", "seed2", "seed3"]);
    assert_eq!(report.protocol, Protocol::CrossSite { train: Site::A, test: Site::B });
    for (train, test, _) in arm.seen.into_inner().unwrap() {
        assert!(train.iter().all(|id| data.get(id).unwrap().site == Site::A));
        assert!(test.iter().all(|id| data.get(id).unwrap().site == Site::B));
    }
}

#[test]
fn cross_site_argument_errors() {
    let data = cohort(20, 0.5);
    assert!(cross_site(&data, Site::A, Site::A, &AllPositive, &[0], 1).is_err());
    assert!(cross_site(&data, Site::A, Site::B, &AllPositive, &[], 1).is_err());
    let one_site = cohort(20, 1.0);
    assert!(cross_site(&one_site, Site::A, Site::B, &AllPositive, &[0], 1).is_err());
}

proptest! {
    #[test]
    fn folds_partition_any_cohort(n in 2usize..200, k in 2usize..=10, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let ids: Vec<String> = (0..n).map(|i| format!("id{i}")).collect();
        let split = kfold_split(&ids, k, seed).unwrap();
        let sizes = split.sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<&str> = (0..k).flat_map(|f| split.fold(f)).collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), n);
    }
}
