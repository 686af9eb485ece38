//! Corruption suites on disk.
//!
//! ```text
//! ADAPTPOINT-SUITE v1 seed=<u64>
//! <relative-path> <family> <severity> <sample-index> <point-count>
//! ```

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::families::{apply_corruption, CorruptionSpec, Family, Severity, SeverityTable};
use crate::data_io::{write_cloud, CloudFormat};
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::rng::{stream_id, RngStream};

pub const SUITE_HEADER: &str = "ADAPTPOINT-SUITE v1";
pub const SUITE_MANIFEST_FILE: &str = "suite.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuiteRecord {
    pub path: String,
    pub spec: CorruptionSpec,
    pub sample_index: usize,
    pub point_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuiteManifest {
    pub seed: u64,
    pub records: Vec<SuiteRecord>,
}

/// Stream id of one corrupted file.
pub fn suite_stream(sample_index: usize, spec: CorruptionSpec) -> u64 {
    stream_id(&[
        sample_index as u64,
        spec.family.index() as u64,
        u64::from(spec.severity.level()),
    ])
}

impl SuiteManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("{SUITE_HEADER} seed={}\n", self.seed);
        for r in &self.records {
            s.push_str(&format!(
                "{} {} {} {} {}\n",
                r.path,
                r.spec.family.name(),
                r.spec.severity.level(),
                r.sample_index,
                r.point_count
            ));
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
        let header = lines.next().ok_or_else(|| perr(0, "empty suite manifest".into()))?;
        let seed = header
            .trim_end()
            .strip_prefix(SUITE_HEADER)
            .and_then(|r| r.trim().strip_prefix("seed="))
            .and_then(|v| v.parse::<u64>().ok())
            .ok_or_else(|| perr(0, format!("expected `{SUITE_HEADER} seed=<u64>`")))?;
        let mut records = Vec::new();
        let mut offset = header.len();
        for line in lines {
            let body = line.trim();
            if !body.is_empty() {
                let f: Vec<&str> = body.split_whitespace().collect();
                if f.len() != 5 {
                    return Err(perr(offset, format!("expected 5 fields, found {}", f.len())));
                }
                let family: Family = f[1].parse().map_err(|e: Error| perr(offset, e.to_string()))?;
                let level: u8 = f[2].parse().map_err(|_| perr(offset, format!("bad severity {}", f[2])))?;
                let spec = CorruptionSpec::new(family, level).map_err(|e| perr(offset, e.to_string()))?;
                let sample_index = f[3].parse().map_err(|_| perr(offset, format!("bad index {}", f[3])))?;
                let point_count = f[4].parse().map_err(|_| perr(offset, format!("bad count {}", f[4])))?;
                records.push(SuiteRecord {
                    path: f[0].to_string(),
                    spec,
                    sample_index,
                    point_count,
                });
            }
            offset += line.len();
        }
        Ok(Self { seed, records })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Which families/severities to generate and with what parameters.
#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub families: Vec<Family>,
    pub severities: Vec<Severity>,
    pub table: SeverityTable,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            severities: Severity::ALL.to_vec(),
            table: SeverityTable::default(),
        }
    }
}

/// Corrupted copy of one sample, exactly as `build_suite` would write it.
pub fn corrupt_sample(
    cloud: &PointCloud,
    sample_index: usize,
    spec: CorruptionSpec,
    seed: u64,
    table: &SeverityTable,
) -> Result<PointCloud> {
    let mut rng = RngStream::new(seed, suite_stream(sample_index, spec));
    apply_corruption(cloud, spec, table, &mut rng)
}

/// Writes `families × severities` corrupted copies of every sample under
/// `out_dir/<family>/<severity>/<index>.pcb` plus `suite.txt`.
pub fn build_suite(
    dataset: &[PointCloud],
    out_dir: &Path,
    seed: u64,
    opts: &SuiteOptions,
) -> Result<SuiteManifest> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot build a suite from an empty dataset"));
    }
    let mut jobs = Vec::new();
    for &family in &opts.families {
        for &severity in &opts.severities {
            for i in 0..dataset.len() {
                jobs.push((CorruptionSpec { family, severity }, i));
            }
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records = jobs
        .par_iter()
        .map(|&(spec, i)| {
            let out = corrupt_sample(&dataset[i], i, spec, seed, &opts.table)?;
            let rel = format!("{}/{}/{i:05}.pcb", spec.family.name(), spec.severity.level());
            write_cloud(&out_dir.join(&rel), &out, CloudFormat::PcbBinary)?;
            Ok(SuiteRecord {
                path: rel,
                spec,
                sample_index: i,
                point_count: out.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = SuiteManifest { seed, records };
    let mpath = out_dir.join(SUITE_MANIFEST_FILE);
    fs::write(&mpath, manifest.to_text()).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_roundtrip_and_errors() {
        let m = SuiteManifest {
            seed: 77,
            records: vec![SuiteRecord {
                path: "rotate/5/00003.pcb".into(),
                spec: CorruptionSpec::new(Family::Rotate, 5).unwrap(),
                sample_index: 3,
                point_count: 256,
            }],
        };
        let text = m.to_text();
        assert!(text.starts_with("ADAPTPOINT-SUITE v1 seed=77\n"));
        assert_eq!(SuiteManifest::parse(&text, "m").unwrap(), m);
        assert!(SuiteManifest::parse("ADAPTPOINT-SUITE v1 seed=1\nx jitter 9 0 1\n", "m").is_err());
        assert!(SuiteManifest::parse("ADAPTPOINT-SUITE v2 seed=1\n", "m").is_err());
    }

    #[test]
    fn empty_dataset_rejected() {
        let dir = std::env::temp_dir();
        assert!(build_suite(&[], &dir, 0, &SuiteOptions::default()).is_err());
    }
}
