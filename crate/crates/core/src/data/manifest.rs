//! Manifest files: header `id,volume_path,label,site`, LF line endings, no
//! quoting. Relative volume paths resolve against the manifest's directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::dataset::{Dataset, Label, Provenance, Sample, Site, Task, VolumeSource};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "id,volume_path,label,site";

pub fn load_manifest(path: impl AsRef<Path>, task: Task) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path, task)
}

pub fn parse_manifest(text: &str, path: &Path, task: Task) -> Result<Dataset> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let row_err = |line: usize, detail: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut lines = text.split('\n').enumerate();
    match lines.next() {
        Some((_, header)) if header == MANIFEST_HEADER => {}
        Some((_, header)) => {
            return Err(row_err(1, format!("expected header {MANIFEST_HEADER:?}, found {header:?}")));
        }
        None => return Err(row_err(1, "missing header".into())),
    }

    let mut samples: Vec<Sample> = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [id, volume_path, label, site] = fields[..] else {
            return Err(row_err(lineno, format!("expected 4 fields, found {}", fields.len())));
        };
        if id.is_empty() {
            return Err(row_err(lineno, "empty id".into()));
        }
        if samples.iter().any(|s| s.id == id) {
            return Err(row_err(lineno, format!("duplicate id {id:?}")));
        }
        let label = match task {
            Task::Age => label
                .parse::<f64>()
                .map(Label::Age)
                .map_err(|_| row_err(lineno, format!("unparsable age label {label:?}")))?,
            Task::Outcome => match label {
                "0" => Label::Outcome(0),
                "1" => Label::Outcome(1),
                other => return Err(row_err(lineno, format!("outcome label must be 0 or 1, found {other:?}"))),
            },
        };
        label.validate().map_err(|e| row_err(lineno, e.to_string()))?;
        let site: Site = site.parse().map_err(|e: Error| row_err(lineno, e.to_string()))?;
        let resolved = {
            let p = PathBuf::from(volume_path);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        if !resolved.is_file() {
            return Err(row_err(lineno, format!("volume file {} not found", resolved.display())));
        }
        samples.push(Sample {
            id: id.to_string(),
            volume: VolumeSource::File(resolved),
            label,
            site,
        });
    }
    Dataset::new(task, samples, Provenance::Real)
}

/// Render a manifest. `volume_paths` gives each sample's path as written.
pub fn render_manifest(dataset: &Dataset, volume_paths: &[String]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for (s, p) in dataset.samples().iter().zip(volume_paths) {
        writeln!(out, "{},{},{},{}", s.id, p, s.label, s.site).expect("string write");
    }
    out
}

/// Write every volume to `dir/volumes/<id>.vol3` and the manifest to
/// `dir/manifest.csv` (relative paths). Returns the manifest path.
pub fn write_dataset(dir: impl AsRef<Path>, dataset: &Dataset) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let vol_dir = dir.join("volumes");
    fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;
    let mut paths = Vec::with_capacity(dataset.len());
    for s in dataset.samples() {
        let rel = format!("volumes/{}.vol3", s.id);
        super::volume::save_volume(dir.join(&rel), s.load()?.as_ref())?;
        paths.push(rel);
    }
    let manifest = dir.join("manifest.csv");
    fs::write(&manifest, render_manifest(dataset, &paths)).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}
