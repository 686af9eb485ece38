//! Robustness metrics: clean accuracy, per-corruption error rates and
//! baseline-normalised corruption errors (CE, mCE).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::corruptions::{
    corrupt_sample, CorruptionSpec, Family, Severity, SuiteManifest, SuiteOptions, SuiteRecord, SUITE_MANIFEST_FILE,
};
use crate::data_io::{read_cloud, resample_to_n, CloudFormat};
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::models::Classifier;
use crate::rng::RngStream;

const FAMILIES: usize = 7;
const LEVELS: usize = 5;
const RESAMPLE_TAG: u64 = 0x72736d70;
const CLEAN_PREFIX: &str = "clean/";

/// Fraction of matching entries.
pub fn overall_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::invalid("accuracy of an empty prediction set"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Error rates of one model: rows are families in [`Family::ALL`] order,
/// columns severities 1..=5.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    pub errors: [[f64; LEVELS]; FAMILIES],
    pub clean_accuracy: f64,
}

impl Default for MetricsTable {
    fn default() -> Self {
        Self {
            errors: [[0.0; LEVELS]; FAMILIES],
            clean_accuracy: 0.0,
        }
    }
}

impl MetricsTable {
    pub fn error(&self, family: Family, severity: Severity) -> f64 {
        self.errors[family.index()][severity.index()]
    }

    pub fn family_sum(&self, family: Family) -> f64 {
        self.errors[family.index()].iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        if !ok(self.clean_accuracy) || !self.errors.iter().flatten().all(|&v| ok(v)) {
            return Err(Error::invalid("error rates must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Multiplies every error rate by `k` (accuracy untouched).
    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        for v in out.errors.iter_mut().flatten() {
            *v *= k;
        }
        out
    }

    /// Lossless text form: `clean_accuracy` line then one line per family.
    pub fn to_text(&self) -> String {
        let mut s = format!("clean_accuracy\t{}\n", self.clean_accuracy);
        for f in Family::ALL {
            let _ = write!(s, "{}", f.name());
            for v in &self.errors[f.index()] {
                let _ = write!(s, "\t{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let perr = |offset: usize, reason: String| Error::Parse {
            path: origin.to_string(),
            offset: offset as u64,
            reason,
        };
        let mut out = MetricsTable::default();
        let mut seen = [false; FAMILIES];
        let mut has_acc = false;
        let mut at = 0;
        for raw in text.split_inclusive('\n') {
            let ln = at;
            at += raw.len();
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let key = parts.next().unwrap_or_default();
            let nums = parts
                .map(|p| p.trim().parse::<f64>().map_err(|e| perr(ln, format!("{p:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if key == "clean_accuracy" {
                out.clean_accuracy = *nums.first().ok_or_else(|| perr(ln, "missing value".into()))?;
                has_acc = true;
                continue;
            }
            let f: Family = key.parse().map_err(|_| perr(ln, format!("unknown row {key:?}")))?;
            if nums.len() != LEVELS {
                return Err(perr(ln, format!("expected {LEVELS} severities, got {}", nums.len())));
            }
            out.errors[f.index()].copy_from_slice(&nums);
            seen[f.index()] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(perr(text.len(), format!("missing row {}", Family::ALL[i].name())));
        }
        if !has_acc {
            return Err(perr(text.len(), "missing clean_accuracy".into()));
        }
        out.validate()?;
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Per-family CE and their mean, in percent.
#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionErrors {
    pub ce: [f64; FAMILIES],
    pub mce: f64,
}

/// `CE_c = 100 · Σ_ℓ E_method / Σ_ℓ E_baseline`; `mCE` is their mean.
pub fn corruption_error(method: &MetricsTable, baseline: &MetricsTable) -> Result<CorruptionErrors> {
    let mut ce = [0.0; FAMILIES];
    for f in Family::ALL {
        let b = baseline.family_sum(f);
        if !(b > 0.0) {
            return Err(Error::UndefinedCe(f.name().to_string()));
        }
        ce[f.index()] = 100.0 * (method.family_sum(f) / b);
    }
    let mce = ce.iter().sum::<f64>() / FAMILIES as f64;
    Ok(CorruptionErrors { ce, mce })
}

/// A corruption suite held in memory.
#[derive(Clone, Debug)]
pub struct LoadedSuite {
    pub manifest: SuiteManifest,
    pub clouds: Vec<PointCloud>,
}

impl LoadedSuite {
    /// Reads every file of a suite directory and checks it against the
    /// manifest.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = SuiteManifest::read(&dir.join(SUITE_MANIFEST_FILE))?;
        let clouds = manifest
            .records
            .par_iter()
            .map(|r| {
                let c = read_cloud(&dir.join(&r.path), CloudFormat::PcbBinary)?;
                if c.len() != r.point_count {
                    return Err(Error::Integrity(format!(
                        "{} has {} points, manifest says {}",
                        r.path,
                        c.len(),
                        r.point_count
                    )));
                }
                Ok(c)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, clouds })
    }

    /// The clouds `build_suite` would write (at the file's `f32` precision),
    /// kept in memory.
    pub fn generate(clean: &[PointCloud], seed: u64, opts: &SuiteOptions) -> Result<Self> {
        let mut jobs = Vec::new();
        for &family in &opts.families {
            for &severity in &opts.severities {
                for i in 0..clean.len() {
                    jobs.push((CorruptionSpec { family, severity }, i));
                }
            }
        }
        let clouds = jobs
            .par_iter()
            .map(|&(spec, i)| {
                let c = corrupt_sample(&clean[i], i, spec, seed, &opts.table)?;
                PointCloud::new(c.points().iter().map(|p| p.map(|v| f64::from(v as f32))).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let records = jobs
            .iter()
            .zip(&clouds)
            .map(|(&(spec, i), c)| SuiteRecord {
                path: format!("{}/{}/{i:05}.pcb", spec.family.name(), spec.severity.level()),
                spec,
                sample_index: i,
                point_count: c.len(),
            })
            .collect();
        Ok(Self {
            manifest: SuiteManifest { seed, records },
            clouds,
        })
    }

    /// Every (family, severity) cell must be present for the same samples.
    fn check(&self, n_clean: usize) -> Result<()> {
        if self.clouds.len() != self.manifest.records.len() {
            return Err(Error::Integrity("cloud and record counts differ".into()));
        }
        let mut counts = [[0usize; LEVELS]; FAMILIES];
        for r in &self.manifest.records {
            if r.sample_index >= n_clean {
                return Err(Error::Integrity(format!(
                    "{} refers to sample {} but the clean set has {n_clean}",
                    r.path, r.sample_index
                )));
            }
            counts[r.spec.family.index()][r.spec.severity.index()] += 1;
        }
        for f in Family::ALL {
            for s in Severity::ALL {
                if counts[f.index()][s.index()] == 0 {
                    return Err(Error::Integrity(format!(
                        "suite has no files for {} severity {}",
                        f.name(),
                        s.level()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One line of the prediction dump.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub file: String,
    pub truth: usize,
    pub predicted: usize,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub table: MetricsTable,
    pub predictions: Vec<Prediction>,
}

/// `<file> <true> <pred>` lines; clean samples appear as `clean/<index>`.
pub fn dump_predictions(preds: &[Prediction]) -> String {
    let mut s = String::new();
    for p in preds {
        let _ = writeln!(s, "{} {} {}", p.file, p.truth, p.predicted);
    }
    s
}

pub fn parse_predictions(text: &str, origin: &str) -> Result<Vec<Prediction>> {
    let mut at = 0;
    text.split_inclusive('\n')
        .map(|l| {
            let start = at;
            at += l.len();
            (start, l)
        })
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(ln, l)| {
            let f: Vec<&str> = l.split_whitespace().collect();
            let num = |s: &str| {
                s.parse::<usize>().map_err(|e| Error::Parse {
                    path: origin.to_string(),
                    offset: ln as u64,
                    reason: format!("{s:?}: {e}"),
                })
            };
            if f.len() != 3 {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    offset: ln as u64,
                    reason: format!("expected 3 fields, got {}", f.len()),
                });
            }
            Ok(Prediction {
                file: f[0].to_string(),
                truth: num(f[1])?,
                predicted: num(f[2])?,
            })
        })
        .collect()
}

fn clean_name(i: usize) -> String {
    format!("{CLEAN_PREFIX}{i:05}")
}

/// Rebuilds the table from a prediction dump and the suite manifest.
pub fn rescore(manifest: &SuiteManifest, preds: &[Prediction]) -> Result<MetricsTable> {
    let by_path: std::collections::HashMap<&str, &SuiteRecord> =
        manifest.records.iter().map(|r| (r.path.as_str(), r)).collect();
    let mut wrong = [[0usize; LEVELS]; FAMILIES];
    let mut total = [[0usize; LEVELS]; FAMILIES];
    let (mut clean_hits, mut clean_total) = (0usize, 0usize);
    for p in preds {
        if p.file.starts_with(CLEAN_PREFIX) {
            clean_total += 1;
            clean_hits += usize::from(p.truth == p.predicted);
            continue;
        }
        let r = by_path
            .get(p.file.as_str())
            .ok_or_else(|| Error::Integrity(format!("{} is not in the suite manifest", p.file)))?;
        let (f, s) = (r.spec.family.index(), r.spec.severity.index());
        total[f][s] += 1;
        wrong[f][s] += usize::from(p.truth != p.predicted);
    }
    if clean_total == 0 {
        return Err(Error::Integrity("no clean predictions in the dump".into()));
    }
    let mut table = MetricsTable {
        clean_accuracy: clean_hits as f64 / clean_total as f64,
        ..MetricsTable::default()
    };
    for f in 0..FAMILIES {
        for s in 0..LEVELS {
            if total[f][s] == 0 {
                return Err(Error::Integrity(format!(
                    "no predictions for {} severity {}",
                    Family::ALL[f].name(),
                    s + 1
                )));
            }
            table.errors[f][s] = wrong[f][s] as f64 / total[f][s] as f64;
        }
    }
    Ok(table)
}

/// Evaluates any predictor over the clean set and a loaded suite. Clouds are
/// brought to `n_points` with a resampling stream derived from
/// `(seed, record index)`.
pub fn evaluate_with<F>(
    predict: F,
    n_points: usize,
    suite: &LoadedSuite,
    clean: &[PointCloud],
    seed: u64,
) -> Result<Evaluation>
where
    F: Fn(&PointCloud) -> Result<usize> + Sync,
{
    suite.check(clean.len())?;
    let truth = |i: usize| {
        clean[i]
            .label()
            .ok_or_else(|| Error::invalid(format!("clean sample {i} has no label")))
    };
    let mut predictions = clean
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let mut rng = RngStream::derive(seed, &[RESAMPLE_TAG, u64::MAX, i as u64]);
            let x = resample_to_n(c, n_points, &mut rng);
            Ok(Prediction {
                file: clean_name(i),
                truth: truth(i)?,
                predicted: predict(&x)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let corrupted = suite
        .manifest
        .records
        .par_iter()
        .zip(suite.clouds.par_iter())
        .enumerate()
        .map(|(k, (r, c))| {
            let mut rng = RngStream::derive(seed, &[RESAMPLE_TAG, k as u64]);
            let x = resample_to_n(c, n_points, &mut rng);
            Ok(Prediction {
                file: r.path.clone(),
                truth: truth(r.sample_index)?,
                predicted: predict(&x)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    predictions.extend(corrupted);
    let table = rescore(&suite.manifest, &predictions)?;
    Ok(Evaluation { table, predictions })
}

/// Classifier evaluation on a loaded suite.
pub fn evaluate_classifier(
    classifier: &Classifier,
    suite: &LoadedSuite,
    clean: &[PointCloud],
    seed: u64,
) -> Result<Evaluation> {
    let n = classifier.config().backbone.n_points;
    evaluate_with(|c| classifier.predict(c), n, suite, clean, seed)
}

/// Loads a suite directory and evaluates the classifier on it.
pub fn evaluate_suite(
    classifier: &Classifier,
    suite_dir: &Path,
    clean: &[PointCloud],
    seed: u64,
) -> Result<Evaluation> {
    let suite = LoadedSuite::load(suite_dir)?;
    evaluate_classifier(classifier, &suite, clean, seed)
}

/// Tab-separated report: header comments, one row per family with the five
/// error rates (and CE when a baseline is given), then the footer.
pub fn render_report(method: &MetricsTable, baseline: Option<(&MetricsTable, &str)>) -> Result<String> {
    let ce = baseline.map(|(b, _)| corruption_error(method, b)).transpose()?;
    let mut s = String::new();
    match baseline {
        Some((_, name)) => {
            let _ = writeln!(s, "# baseline: {name}");
        }
        None => s.push_str("# baseline: none (CE not computed)\n"),
    }
    s.push_str("family\ts1\ts2\ts3\ts4\ts5");
    if ce.is_some() {
        s.push_str("\tCE");
    }
    s.push('\n');
    for f in Family::ALL {
        let _ = write!(s, "{}", f.label());
        for v in &method.errors[f.index()] {
            let _ = write!(s, "\t{v:.4}");
        }
        if let Some(c) = &ce {
            let _ = write!(s, "\t{:.1}", c.ce[f.index()]);
        }
        s.push('\n');
    }
    let _ = writeln!(s, "OA\t{:.4}", method.clean_accuracy);
    if let Some(c) = &ce {
        let _ = writeln!(s, "mCE\t{:.1}", c.mce);
    }
    Ok(s)
}
