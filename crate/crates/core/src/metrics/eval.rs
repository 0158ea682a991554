use std::path::{Path, PathBuf};
use std::process::Command;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{loss_inactive, mean_std, sdr, LossConfig};
use crate::audio::{save_wav, WavEncoding, Waveform};
use crate::dataset::{sample_query, Example};
use crate::error::{Error, Result};
use crate::model::TseModel;
use crate::nn::Real;
use crate::seed;

/// Independent test passes per report.
pub const EVAL_REPETITIONS: usize = 5;

/// Anything that maps (mixture, query) to an estimate of the in-range speech.
pub trait Extractor: Sync {
    fn name(&self) -> String;
    fn extract(&self, example: &Example) -> Result<Waveform>;
}

pub struct ModelExtractor<T> {
    pub model: TseModel<T>,
}

impl<T: Real> Extractor for ModelExtractor<T> {
    fn name(&self) -> String {
        "model".into()
    }

    fn extract(&self, e: &Example) -> Result<Waveform> {
        self.model.forward(&e.mixture, e.d_q)
    }
}

/// Returns the reference itself.
pub struct OracleExtractor;

impl Extractor for OracleExtractor {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn extract(&self, e: &Example) -> Result<Waveform> {
        Ok(e.target.clone())
    }
}

/// Always silent.
pub struct NullExtractor;

impl Extractor for NullExtractor {
    fn name(&self) -> String {
        "null".into()
    }

    fn extract(&self, e: &Example) -> Result<Waveform> {
        Ok(Waveform::zeros(e.mixture.len(), e.mixture.sample_rate))
    }
}

/// Returns the mixture unchanged.
pub struct PassthroughExtractor;

impl Extractor for PassthroughExtractor {
    fn name(&self) -> String {
        "passthrough".into()
    }

    fn extract(&self, e: &Example) -> Result<Waveform> {
        Ok(e.mixture.clone())
    }
}

/// External PESQ scorer. The command is run as `<program> <args..> <reference.wav>
/// <degraded.wav> <sample_rate>`; exit status 0 with a number on the last line
/// of stdout is a score, anything else is an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PesqAdapter {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
}

impl PesqAdapter {
    pub fn score(&self, reference: &Waveform, degraded: &Waveform) -> Result<f64> {
        let dir = tempdir()?;
        let (r, d) = (dir.join("reference.wav"), dir.join("degraded.wav"));
        save_wav(&r, reference, WavEncoding::Pcm16)?;
        save_wav(&d, degraded, WavEncoding::Pcm16)?;
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(&r)
            .arg(&d)
            .arg(reference.sample_rate.to_string())
            .output();
        let _ = std::fs::remove_dir_all(&dir);
        let out = out.map_err(|e| Error::External(format!("{}: {e}", self.program.display())))?;
        if !out.status.success() {
            return Err(Error::External(format!(
                "{} exited with {}: {}",
                self.program.display(),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        stdout
            .lines()
            .rev()
            .find(|l| !l.trim().is_empty())
            .and_then(|l| l.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::External(format!("no score in PESQ output {stdout:?}")))
    }
}

fn tempdir() -> Result<PathBuf> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let dir = std::env::temp_dir().join(format!(
        "pesq-{}-{}",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Scores of one example in one repetition. Presence rows carry SDR/SDRi,
/// absence rows carry iSDR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub repetition: usize,
    pub id: String,
    pub presence: bool,
    pub d_q: f64,
    pub sdr: Option<f64>,
    pub sdri: Option<f64>,
    pub pesq: Option<f64>,
    pub isdr: Option<f64>,
}

/// Mean and sample std over per-repetition means; `n` is the repetition count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub extractor: String,
    pub repetitions: usize,
    pub aggregates: Vec<Aggregate>,
    pub rows: Vec<EvalRow>,
}

/// Column order of the CSV summary.
const CSV_METRICS: [&str; 4] = ["SDR", "SDRi", "PESQ", "iSDR"];

impl Report {
    pub fn aggregate(&self, metric: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.metric == metric)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `stat,SDR,SDRi,PESQ,iSDR` with mean, std and n rows; missing metrics are blank.
    pub fn to_csv(&self) -> String {
        let mut out = format!("stat,{}\n", CSV_METRICS.join(","));
        let cell = |m: &str, f: &dyn Fn(&Aggregate) -> String| self.aggregate(m).map(f).unwrap_or_default();
        let rows: [(&str, &dyn Fn(&Aggregate) -> String); 3] = [
            ("mean", &|a| format!("{:.4}", a.mean)),
            ("std", &|a| format!("{:.4}", a.std)),
            ("n", &|a| a.n.to_string()),
        ];
        for (stat, f) in rows {
            let cells: Vec<String> = CSV_METRICS.iter().map(|m| cell(m, f)).collect();
            out.push_str(&format!("{stat},{}\n", cells.join(",")));
        }
        out
    }

    /// Structural check of a serialized report.
    pub fn validate_json(value: &serde_json::Value) -> Result<()> {
        let report: Report = serde_json::from_value(value.clone()).map_err(|e| Error::Schema(e.to_string()))?;
        if report.repetitions == 0 {
            return Err(Error::Schema("report has no repetitions".into()));
        }
        for a in &report.aggregates {
            if a.n != report.repetitions {
                return Err(Error::Schema(format!("{}: n = {} over {} repetitions", a.metric, a.n, report.repetitions)));
            }
            if !a.mean.is_finite() || !(a.std >= 0.0) {
                return Err(Error::Schema(format!("{}: non-finite aggregate", a.metric)));
            }
        }
        for r in &report.rows {
            if r.repetition >= report.repetitions {
                return Err(Error::Schema(format!("row {} in repetition {}", r.id, r.repetition)));
            }
            if r.presence != r.sdr.is_some() || r.presence == r.isdr.is_some() {
                return Err(Error::Schema(format!("row {} mixes presence and absence scores", r.id)));
            }
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        std::fs::write(dir.join("report.csv"), self.to_csv())?;
        Ok(())
    }
}

fn score(
    extractor: &dyn Extractor,
    e: &Example,
    repetition: usize,
    cfg: &LossConfig,
    pesq: Option<&PesqAdapter>,
) -> Result<EvalRow> {
    let est = extractor.extract(e)?;
    if est.len() != e.mixture.len() {
        return Err(Error::shape(format!("{}: estimate has {} samples, mixture {}", e.id, est.len(), e.mixture.len())));
    }
    let mut row = EvalRow {
        repetition,
        id: e.id.clone(),
        presence: e.presence,
        d_q: e.d_q,
        sdr: None,
        sdri: None,
        pesq: None,
        isdr: None,
    };
    if e.presence {
        let s = sdr(&e.target.samples, &est.samples)?;
        row.sdr = Some(s);
        row.sdri = Some(s - sdr(&e.target.samples, &e.mixture.samples)?);
        if let Some(p) = pesq {
            row.pesq = Some(p.score(&e.target, &est)?);
        }
    } else {
        row.isdr = Some(loss_inactive(&e.mixture.samples, &est.samples, cfg)?);
    }
    Ok(row)
}

/// Score every repetition. Aggregates are mean and std of the per-repetition
/// means, so `std` measures run-to-run spread.
pub fn evaluate(
    extractor: &dyn Extractor,
    repetitions: &[Vec<Example>],
    cfg: &LossConfig,
    pesq: Option<&PesqAdapter>,
) -> Result<Report> {
    if repetitions.is_empty() || repetitions.iter().any(Vec::is_empty) {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let mut rows = Vec::new();
    for (rep, examples) in repetitions.iter().enumerate() {
        let job = |e: &Example| score(extractor, e, rep, cfg, pesq);
        #[cfg(feature = "parallel")]
        let scored: Result<Vec<EvalRow>> = {
            use rayon::prelude::*;
            examples.par_iter().map(job).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let scored: Result<Vec<EvalRow>> = examples.iter().map(job).collect();
        rows.extend(scored?);
    }
    let n_rep = repetitions.len();
    let metrics: [(&str, fn(&EvalRow) -> Option<f64>); 4] = [
        ("SDR", |r| r.sdr),
        ("SDRi", |r| r.sdri),
        ("PESQ", |r| r.pesq),
        ("iSDR", |r| r.isdr),
    ];
    let mut aggregates = Vec::new();
    for (name, get) in metrics {
        let per_rep: Vec<f64> = (0..n_rep)
            .filter_map(|rep| {
                let vals: Vec<f64> = rows.iter().filter(|r| r.repetition == rep).filter_map(get).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect();
        if per_rep.len() == n_rep {
            let (mean, std) = mean_std(&per_rep);
            aggregates.push(Aggregate {
                metric: name.into(),
                mean,
                std,
                n: n_rep,
            });
        }
    }
    Ok(Report {
        extractor: extractor.name(),
        repetitions: n_rep,
        aggregates,
        rows,
    })
}

/// Test passes for a fixed example set. Pass 0 is the set as given; later
/// passes keep each mixture and presence label but redraw the query distance.
pub fn repetitions(examples: &[Example], count: usize, seed: u64, d_max: f64) -> Result<Vec<Vec<Example>>> {
    let mut out = vec![examples.to_vec()];
    for rep in 1..count {
        let mut pass = Vec::with_capacity(examples.len());
        for e in examples {
            let mut rng = seed::rng(seed, &[seed::tag("eval-repetition"), rep as u64, seed::tag(&e.id)]);
            let d_q = sample_query(&e.distances, e.presence, e.r_spk, d_max, &mut rng)?;
            pass.push(e.requery(d_q)?);
        }
        pass.shuffle(&mut seed::rng(seed, &[seed::tag("eval-order"), rep as u64]));
        out.push(pass);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;

    fn example(presence: bool, seed_: u64) -> Example {
        use rand::Rng;
        let mut rng = seed::rng(seed_, &[]);
        let mut noise = |n| Waveform::new((0..n).map(|_| rng.gen_range(-0.1..0.1)).collect(), 16_000).unwrap();
        let sources = vec![noise(800), noise(800)];
        let mixture = crate::dataset::mix(&sources).unwrap();
        let target = if presence { sources[0].clone() } else { Waveform::zeros(800, 16_000) };
        Example {
            id: format!("e{seed_}"),
            scene_id: "s".into(),
            split: Split::Test,
            mixture,
            target,
            d_q: if presence { 1.0 } else { 4.0 },
            presence,
            distances: vec![1.0, 2.5],
            sources,
            r_spk: 0.5,
        }
    }

    fn set() -> Vec<Example> {
        (0..6).map(|i| example(i % 2 == 0, i)).collect()
    }

    #[test]
    fn reference_extractors_hit_their_bounds() {
        let cfg = LossConfig::default();
        let reps = repetitions(&set(), EVAL_REPETITIONS, 1, 5.0).unwrap();
        assert_eq!(reps.len(), 5);
        let oracle = evaluate(&OracleExtractor, &reps, &cfg, None).unwrap();
        for r in &oracle.rows {
            if r.presence {
                assert_eq!(r.sdr, Some(crate::metrics::SDR_CAP_DB));
            }
        }
        let pass = evaluate(&PassthroughExtractor, &reps, &cfg, None).unwrap();
        assert!(pass.rows.iter().filter_map(|r| r.sdri).all(|v| v == 0.0));
        let null = evaluate(&NullExtractor, &reps, &cfg, None).unwrap();
        for (r, o) in null.rows.iter().zip(&oracle.rows) {
            if !r.presence {
                assert_eq!(r.isdr, o.isdr);
            }
        }
        for rep in &reps {
            for e in rep.iter().filter(|e| !e.presence) {
                let floor = super::super::inactive_floor(&e.mixture.samples, &cfg);
                let row = null.rows.iter().find(|r| r.id == e.id && r.d_q == e.d_q).unwrap();
                assert!((row.isdr.unwrap() - floor).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn report_schema_round_trip() {
        let reps = repetitions(&set(), 3, 2, 5.0).unwrap();
        let report = evaluate(&PassthroughExtractor, &reps, &LossConfig::default(), None).unwrap();
        let value: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        Report::validate_json(&value).unwrap();
        assert_eq!(report.aggregate("SDRi").unwrap().n, 3);
        assert!(report.aggregate("PESQ").is_none());
        let csv = report.to_csv();
        assert!(csv.starts_with("stat,SDR,SDRi,PESQ,iSDR\n"));
        let mut broken = value.clone();
        broken["repetitions"] = serde_json::json!(0);
        assert!(Report::validate_json(&broken).is_err());
    }

    #[test]
    fn repetitions_keep_labels_and_mixtures() {
        let base = set();
        let reps = repetitions(&base, 4, 3, 5.0).unwrap();
        for pass in &reps[1..] {
            for e in pass {
                let orig = base.iter().find(|b| b.id == e.id).unwrap();
                assert_eq!(e.presence, orig.presence);
                assert_eq!(e.mixture, orig.mixture);
            }
        }
        assert!(evaluate(&NullExtractor, &[], &LossConfig::default(), None).is_err());
    }

    #[test]
    fn missing_pesq_tool_is_an_external_error() {
        let p = PesqAdapter {
            program: "/nonexistent/pesq".into(),
            args: vec![],
        };
        let w = Waveform::new(vec![0.1; 100], 16_000).unwrap();
        assert!(matches!(p.score(&w, &w), Err(Error::External(_))));
    }
}
