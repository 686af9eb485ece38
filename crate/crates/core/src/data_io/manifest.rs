//! Dataset manifests and on-disk datasets.
//!
//! ```text
//! ADAPTPOINT-DATA v1 seed=<u64> n=<points> classes=<name>,<name>,...
//! <relative-path> <class-id> <train|test>
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data_io::format::{read_cloud, write_cloud, CloudFormat};
use crate::data_io::synthetic::{generate_samples, Split, SyntheticConfig};
use crate::error::{Error, Result};
use crate::geom::PointCloud;

pub const DATA_HEADER: &str = "ADAPTPOINT-DATA v1";
pub const DATA_MANIFEST_FILE: &str = "dataset.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataRecord {
    pub path: String,
    pub class_id: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub n_points: usize,
    pub class_names: Vec<String>,
    pub records: Vec<DataRecord>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{DATA_HEADER} seed={} n={} classes={}\n",
            self.seed,
            self.n_points,
            self.class_names.join(",")
        );
        for r in &self.records {
            s.push_str(&format!("{} {} {}\n", r.path, r.class_id, r.split.as_str()));
        }
        s
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let perr = |offset: usize, reason: String| Error::Parse {
            path: origin.to_string(),
            offset: offset as u64,
            reason,
        };
        let mut lines = text.split_inclusive('\n');
        let header = lines.next().ok_or_else(|| perr(0, "empty manifest".into()))?;
        let rest = header
            .trim_end()
            .strip_prefix(DATA_HEADER)
            .ok_or_else(|| perr(0, format!("missing `{DATA_HEADER}` header")))?;
        let (mut seed, mut n, mut classes) = (None, None, None);
        for kv in rest.split_whitespace() {
            match kv.split_once('=') {
                Some(("seed", v)) => seed = v.parse::<u64>().ok(),
                Some(("n", v)) => n = v.parse::<usize>().ok(),
                Some(("classes", v)) => {
                    classes = Some(v.split(',').map(str::to_string).collect::<Vec<_>>())
                }
                _ => return Err(perr(0, format!("unexpected header field {kv}"))),
            }
        }
        let (Some(seed), Some(n_points), Some(class_names)) = (seed, n, classes) else {
            return Err(perr(0, "header needs seed=, n= and classes=".into()));
        };
        let mut records = Vec::new();
        let mut offset = header.len();
        for line in lines {
            let body = line.trim();
            if !body.is_empty() {
                let f: Vec<&str> = body.split_whitespace().collect();
                if f.len() != 3 {
                    return Err(perr(offset, format!("expected 3 fields, found {}", f.len())));
                }
                let class_id: usize = f[1]
                    .parse()
                    .map_err(|_| perr(offset, format!("bad class id {}", f[1])))?;
                if class_id >= class_names.len() {
                    return Err(perr(offset, format!("class id {class_id} out of range")));
                }
                let split = f[2].parse().map_err(|e: Error| perr(offset, e.to_string()))?;
                records.push(DataRecord {
                    path: f[0].to_string(),
                    class_id,
                    split,
                });
            }
            offset += line.len();
        }
        Ok(Self {
            seed,
            n_points,
            class_names,
            records,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Clouds of a dataset split by role; labels are set on every cloud.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Generates the synthetic dataset in memory (no files).
pub fn synthetic_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    let mut ds = Dataset {
        class_names: cfg.class_names(),
        ..Dataset::default()
    };
    for s in generate_samples(cfg)? {
        match s.split {
            Split::Train => ds.train.push(s.cloud),
            Split::Test => ds.test.push(s.cloud),
        }
    }
    Ok(ds)
}

/// Writes every synthetic sample as `<class>/<class>_<index>.pcb` plus the
/// manifest `dataset.txt` under `out_dir`.
pub fn generate_synthetic(cfg: &SyntheticConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let samples = generate_samples(cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let names = cfg.class_names();
    let records: Vec<DataRecord> = samples
        .par_iter()
        .map(|s| {
            let name = &names[s.class_id];
            let rel = format!("{name}/{name}_{:04}.pcb", s.index_in_class);
            write_cloud(&out_dir.join(&rel), &s.cloud, CloudFormat::PcbBinary)?;
            Ok(DataRecord {
                path: rel,
                class_id: s.class_id,
                split: s.split,
            })
        })
        .collect::<Result<_>>()?;
    let manifest = DatasetManifest {
        seed: cfg.seed,
        n_points: cfg.n_points,
        class_names: names,
        records,
    };
    manifest.write(&out_dir.join(DATA_MANIFEST_FILE))?;
    Ok(manifest)
}

/// Accepts a dataset directory or the manifest file itself.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(DATA_MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mpath = manifest_path(path);
    let manifest = DatasetManifest::read(&mpath)?;
    let root = mpath.parent().unwrap_or_else(|| Path::new("."));
    let mut ds = Dataset {
        class_names: manifest.class_names.clone(),
        ..Dataset::default()
    };
    for r in &manifest.records {
        let p = root.join(&r.path);
        let cloud = read_cloud(&p, CloudFormat::from_path(&p))?.with_label(r.class_id);
        match r.split {
            Split::Train => ds.train.push(cloud),
            Split::Test => ds.test.push(cloud),
        }
    }
    Ok(ds)
}
