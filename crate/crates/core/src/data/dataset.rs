use std::borrow::Cow;
use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use super::volume::load_volume;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_AGE: f64 = 97.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Age,
    Outcome,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Age => "age",
            Task::Outcome => "outcome",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "age" => Ok(Task::Age),
            "outcome" => Ok(Task::Outcome),
            other => Err(Error::Dataset(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    /// Age in years, within `[0, 97]`.
    Age(f64),
    /// 0 = normal, 1 = abnormal.
    Outcome(u8),
}

impl Label {
    pub fn task(&self) -> Task {
        match self {
            Label::Age(_) => Task::Age,
            Label::Outcome(_) => Task::Outcome,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Label::Age(a) if !(a.is_finite() && (0.0..=MAX_AGE).contains(&a)) => {
                Err(Error::Dataset(format!("age {a} outside [0, {MAX_AGE}]")))
            }
            Label::Outcome(o) if o > 1 => Err(Error::Dataset(format!("outcome {o} not in {{0,1}}"))),
            _ => Ok(()),
        }
    }

    pub fn as_age(&self) -> Option<f64> {
        match self {
            Label::Age(a) => Some(*a),
            Label::Outcome(_) => None,
        }
    }

    pub fn as_outcome(&self) -> Option<u8> {
        match self {
            Label::Outcome(o) => Some(*o),
            Label::Age(_) => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Age(a) => write!(f, "{a}"),
            Label::Outcome(o) => write!(f, "{o}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Site {
    A,
    B,
    None,
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Site::A => "SITE_A",
            Site::B => "SITE_B",
            Site::None => "NONE",
        })
    }
}

impl FromStr for Site {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SITE_A" => Ok(Site::A),
            "SITE_B" => Ok(Site::B),
            "NONE" => Ok(Site::None),
            other => Err(Error::Dataset(format!("unknown site {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VolumeSource {
    Memory(Tensor<f32>),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub volume: VolumeSource,
    pub label: Label,
    pub site: Site,
}

impl Sample {
    pub fn in_memory(id: impl Into<String>, volume: Tensor<f32>, label: Label, site: Site) -> Self {
        Self {
            id: id.into(),
            volume: VolumeSource::Memory(volume),
            label,
            site,
        }
    }

    /// The `[C,D,H,W]` volume, read from disk when file-backed.
    pub fn load(&self) -> Result<Cow<'_, Tensor<f32>>> {
        match &self.volume {
            VolumeSource::Memory(t) => Ok(Cow::Borrowed(t)),
            VolumeSource::File(p) => load_volume(p).map(Cow::Owned),
        }
    }
}

/// An immutable, task-homogeneous collection of samples with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    task: Task,
    samples: Vec<Sample>,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(task: Task, samples: Vec<Sample>, provenance: Provenance) -> Result<Self> {
        let mut ids = HashSet::with_capacity(samples.len());
        let mut shape: Option<&[usize]> = None;
        for s in &samples {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Dataset(format!("duplicate id {:?}", s.id)));
            }
            if s.label.task() != task {
                return Err(Error::Dataset(format!("sample {:?} is not a {task} sample", s.id)));
            }
            s.label.validate()?;
            if let VolumeSource::Memory(t) = &s.volume {
                if t.rank() != 4 {
                    return Err(Error::Dataset(format!("sample {:?} volume must be [C,D,H,W]", s.id)));
                }
                match shape {
                    Some(sh) if sh != t.shape() => {
                        return Err(Error::Dataset(format!(
                            "sample {:?} has shape {:?}, expected {:?}",
                            s.id,
                            t.shape(),
                            sh
                        )))
                    }
                    _ => shape = Some(t.shape()),
                }
            }
        }
        Ok(Self {
            task,
            samples,
            provenance,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Samples whose id passes `keep`, in dataset order.
    pub fn filter(&self, keep: impl Fn(&Sample) -> bool) -> Dataset {
        Dataset {
            task: self.task,
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            provenance: self.provenance,
        }
    }

    pub fn by_site(&self, site: Site) -> Dataset {
        self.filter(|s| s.site == site)
    }

    /// Load every file-backed volume into memory, checking shape homogeneity.
    pub fn materialize(&self) -> Result<Dataset> {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                Ok(Sample {
                    volume: VolumeSource::Memory(s.load()?.into_owned()),
                    ..s.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.task, samples, self.provenance)
    }

    pub fn require_task(&self, task: Task) -> Result<()> {
        if self.task != task {
            return Err(Error::Dataset(format!("expected a {task} dataset, got {}", self.task)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol() -> Tensor<f32> {
        Tensor::zeros(&[2, 2, 2, 2])
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let s = Sample::in_memory("x", vol(), Label::Outcome(1), Site::A);
        assert!(Dataset::new(Task::Outcome, vec![s.clone(), s], Provenance::Real).is_err());
    }

    #[test]
    fn mixed_tasks_are_rejected() {
        let a = Sample::in_memory("a", vol(), Label::Outcome(1), Site::A);
        let b = Sample::in_memory("b", vol(), Label::Age(3.0), Site::A);
        assert!(Dataset::new(Task::Outcome, vec![a, b], Provenance::Real).is_err());
    }

    #[test]
    fn label_ranges() {
        assert!(Label::Age(97.0).validate().is_ok());
        assert!(Label::Age(97.5).validate().is_err());
        assert!(Label::Age(f64::NAN).validate().is_err());
        assert!(Label::Outcome(2).validate().is_err());
    }

    #[test]
    fn heterogeneous_shapes_are_rejected() {
        let a = Sample::in_memory("a", vol(), Label::Age(1.0), Site::None);
        let b = Sample::in_memory("b", Tensor::zeros(&[2, 3, 2, 2]), Label::Age(1.0), Site::None);
        assert!(Dataset::new(Task::Age, vec![a, b], Provenance::Real).is_err());
    }

    #[test]
    fn site_names() {
        for s in [Site::A, Site::B, Site::None] {
            assert_eq!(s.to_string().parse::<Site>().unwrap(), s);
        }
        assert!("MGH".parse::<Site>().is_err());
    }
}
