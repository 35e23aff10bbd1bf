//! Seeded synthetic cohorts at desk scale.
//!
//! Both generators share one phantom family: a smooth random background
//! field built from Gaussian blobs, a centered sphere ("brain") whose radius
//! and intensity track a latent age, and additive Gaussian noise.
//!
//! * Age cohort: channel 1 is the local 3³ variance of channel 0.
//! * Outcome cohort: the same phantom, with the latent age drawn over the
//!   full age range, plus a hypointense lesion inside the sphere that grows
//!   with a latent severity; channel 1 is channel 0 standardized against the
//!   lesion-free expectation under the generator's variability model.
//!
//! Each sample draws from its own stream derived from `(seed, index)`, so a
//! sample's voxels do not depend on the other samples or on site tagging.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::dataset::{Dataset, Label, Provenance, Sample, Site, Task, MAX_AGE};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, Rng};
use crate::tensor::Tensor;

pub const NOISE_STD: f64 = 0.05;
pub const MIN_SYNTH_EXTENT: usize = 8;

const FIELD_BLOBS: usize = 4;
const FIELD_AMPLITUDE: f64 = 0.15;
const LESION_MIN_FRACTION: f64 = 0.02;
const LESION_MAX_FRACTION: f64 = 0.30;
const LESION_CONTRAST: f64 = 0.35;

/// Standard deviation assumed when standardizing channel 0 into the
/// deviation channel: background field spread plus voxel noise.
pub fn normative_std() -> f64 {
    // Each blob amplitude is uniform on ±A, so std A/√3; blobs overlap
    // sparsely, so the per-voxel spread is bounded by that of one blob.
    ((FIELD_AMPLITUDE * FIELD_AMPLITUDE) / 3.0 + NOISE_STD * NOISE_STD).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn cube(n: usize) -> Self {
        Self { d: n, h: n, w: n }
    }

    fn validate(&self) -> Result<()> {
        if [self.d, self.h, self.w].iter().any(|&e| e < MIN_SYNTH_EXTENT) {
            return Err(Error::Dataset(format!(
                "synthetic dims must each be >= {MIN_SYNTH_EXTENT}, got {}x{}x{}",
                self.d, self.h, self.w
            )));
        }
        Ok(())
    }

    fn numel(&self) -> usize {
        self.d * self.h * self.w
    }

    /// Voxel centers in normalized coordinates on `[-0.5, 0.5]`.
    fn coords(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        let c = |i: usize, n: usize| (i as f64 + 0.5) / n as f64 - 0.5;
        (0..self.d).flat_map(move |z| {
            (0..self.h).flat_map(move |y| (0..self.w).map(move |x| [c(z, self.d), c(y, self.h), c(x, self.w)]))
        })
    }
}

/// Sphere radius (fraction of extent) and intensity for a latent age.
pub fn sphere_for_age(age: f64) -> (f64, f64) {
    let t = age / MAX_AGE;
    (0.15 + 0.25 * t, 1.0 - 0.5 * t)
}

struct Blob {
    center: [f64; 3],
    sigma: f64,
    amplitude: f64,
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn background_field(rng: &mut Rng) -> Vec<Blob> {
    (0..FIELD_BLOBS)
        .map(|_| Blob {
            center: [
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
            ],
            sigma: rng.random_range(0.1..0.25),
            amplitude: rng.random_range(-FIELD_AMPLITUDE..FIELD_AMPLITUDE),
        })
        .collect()
}

fn field_at(blobs: &[Blob], p: [f64; 3]) -> f64 {
    blobs
        .iter()
        .map(|b| b.amplitude * (-dist(p, b.center).powi(2) / (2.0 * b.sigma * b.sigma)).exp())
        .sum()
}

/// Variance of each voxel's in-bounds 3³ neighborhood.
fn local_variance(values: &[f32], dims: Dims) -> Vec<f32> {
    let Dims { d, h, w } = dims;
    let mut out = vec![0.0f32; values.len()];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let (mut sum, mut sq, mut n) = (0.0f64, 0.0f64, 0.0f64);
                for zz in z.saturating_sub(1)..(z + 2).min(d) {
                    for yy in y.saturating_sub(1)..(y + 2).min(h) {
                        for xx in x.saturating_sub(1)..(x + 2).min(w) {
                            let v = values[(zz * h + yy) * w + xx] as f64;
                            sum += v;
                            sq += v * v;
                            n += 1.0;
                        }
                    }
                }
                let mean = sum / n;
                out[(z * h + y) * w + x] = (sq / n - mean * mean).max(0.0) as f32;
            }
        }
    }
    out
}

/// Age-regression cohort. Labels are uniform on `[0, 97]`.
pub fn synth_age_dataset(n: usize, dims: Dims, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Dataset("n must be >= 1".into()));
    }
    dims.validate()?;
    let noise = Normal::new(0.0, NOISE_STD).expect("finite std");
    let samples = (0..n)
        .map(|i| {
            let mut rng = seeded(derive_seed(seed, "age-sample", i as u64));
            let age = rng.random_range(0.0..MAX_AGE);
            let (radius, intensity) = sphere_for_age(age);
            let blobs = background_field(&mut rng);
            let ch0: Vec<f32> = dims
                .coords()
                .map(|p| {
                    let inside = if dist(p, [0.0; 3]) < radius { intensity } else { 0.0 };
                    (inside + field_at(&blobs, p) + noise.sample(&mut rng)) as f32
                })
                .collect();
            let ch1 = local_variance(&ch0, dims);
            let mut data = ch0;
            data.extend(ch1);
            let volume = Tensor::from_vec(vec![2, dims.d, dims.h, dims.w], data)?;
            Ok(Sample::in_memory(format!("age-{i:05}"), volume, Label::Age(age), Site::None))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(Task::Age, samples, Provenance::Synthetic)
}

/// Scanner difference applied to second-site volumes: `x -> gain·x + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteShift {
    pub gain: f64,
    pub offset: f64,
}

impl SiteShift {
    pub const IDENTITY: SiteShift = SiteShift { gain: 1.0, offset: 0.0 };
}

/// Latent severities with exactly `n/2` above 0.5, in a seeded order.
fn stratified_severities(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded(derive_seed(seed, "hie-severity", 0));
    let mut severities: Vec<f64> = (0..n)
        .map(|i| {
            let u: f64 = rng.random_range(0.0..0.5);
            if i < n / 2 {
                0.5 + (0.5 - u)
            } else {
                u
            }
        })
        .collect();
    severities.shuffle(&mut rng);
    severities
}

/// Outcome cohort with two sites. `label = 1` iff severity > 0.5.
pub fn synth_hie_dataset(n: usize, dims: Dims, seed: u64, site_mix: f64, shift: SiteShift) -> Result<Dataset> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::Dataset(format!("n must be even and positive, got {n}")));
    }
    if !(0.0..=1.0).contains(&site_mix) {
        return Err(Error::Dataset(format!("site_mix must be in [0,1], got {site_mix}")));
    }
    if !(shift.gain.is_finite() && shift.offset.is_finite()) {
        return Err(Error::Dataset("site shift must be finite".into()));
    }
    dims.validate()?;
    let site_a = (site_mix * n as f64).ceil() as usize;
    let noise = Normal::new(0.0, NOISE_STD).expect("finite std");
    let z_scale = 1.0 / normative_std();

    let samples = stratified_severities(n, seed)
        .into_iter()
        .enumerate()
        .map(|(i, severity)| {
            let mut rng = seeded(derive_seed(seed, "hie-sample", i as u64));
            let age = rng.random_range(0.0..MAX_AGE);
            let (radius, intensity) = sphere_for_age(age);
            let blobs = background_field(&mut rng);
            let fraction = LESION_MIN_FRACTION + (LESION_MAX_FRACTION - LESION_MIN_FRACTION) * severity;
            let lesion_radius = radius * fraction.cbrt();
            // keep the lesion inside the sphere
            let reach = (radius - lesion_radius).max(0.0);
            let lesion_center = loop {
                let c = [
                    rng.random_range(-reach..=reach),
                    rng.random_range(-reach..=reach),
                    rng.random_range(-reach..=reach),
                ];
                if dist(c, [0.0; 3]) <= reach {
                    break c;
                }
            };

            let mut ch0 = Vec::with_capacity(dims.numel());
            let mut ch1 = Vec::with_capacity(dims.numel());
            for p in dims.coords() {
                let normal = if dist(p, [0.0; 3]) < radius { intensity } else { 0.0 };
                let lesion = if dist(p, lesion_center) < lesion_radius {
                    -LESION_CONTRAST * intensity
                } else {
                    0.0
                };
                let value = normal + lesion + field_at(&blobs, p) + noise.sample(&mut rng);
                ch0.push(value as f32);
                ch1.push(((value - normal) * z_scale) as f32);
            }
            let site = if i < site_a { Site::A } else { Site::B };
            let mut data = ch0;
            data.extend(ch1);
            if site == Site::B {
                for v in &mut data {
                    *v = (shift.gain * *v as f64 + shift.offset) as f32;
                }
            }
            let volume = Tensor::from_vec(vec![2, dims.d, dims.h, dims.w], data)?;
            let label = Label::Outcome(u8::from(severity > 0.5));
            Ok(Sample::in_memory(format!("hie-{i:05}"), volume, label, site))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(Task::Outcome, samples, Provenance::Synthetic)
}
