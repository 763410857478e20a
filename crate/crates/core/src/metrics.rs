//! ICBHI evaluation: specificity on the normal class, sensitivity over the
//! three abnormal classes, their average (the Score), and the collapsed
//! 2-class variant computed from the same 4-class predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_CLASSES: usize = 4;

/// 4x4 confusion counts, rows = true class, columns = predicted class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub matrix: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionCounts {
    pub fn record(&mut self, label: usize, pred: usize) -> Result<()> {
        if label >= N_CLASSES || pred >= N_CLASSES {
            return Err(Error::Data(format!(
                "class id out of range: label {label}, pred {pred}"
            )));
        }
        self.matrix[label][pred] += 1;
        Ok(())
    }

    /// Elementwise merge; confusion accumulation is an associative,
    /// commutative reduction, so parallel shards combine exactly.
    pub fn merge(&mut self, other: &ConfusionCounts) {
        for r in 0..N_CLASSES {
            for c in 0..N_CLASSES {
                self.matrix[r][c] += other.matrix[r][c];
            }
        }
    }

    pub fn row_sum(&self, r: usize) -> u64 {
        self.matrix[r].iter().sum()
    }

    pub fn total(&self) -> u64 {
        (0..N_CLASSES).map(|r| self.row_sum(r)).sum()
    }

    pub fn correct(&self) -> u64 {
        (0..N_CLASSES).map(|i| self.matrix[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total() as f64
    }
}

pub fn confusion(preds: &[usize], labels: &[usize]) -> Result<ConfusionCounts> {
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut conf = ConfusionCounts::default();
    for (p, l) in preds.iter().zip(labels) {
        conf.record(*l, *p)?;
    }
    Ok(conf)
}

/// All five reported ratios. `score == (sp + se) / 2` by construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sp: f64,
    pub se: f64,
    pub score: f64,
    pub sp_2class: f64,
    pub se_2class: f64,
}

/// 4-class specificity, sensitivity and Score.
pub fn score4(conf: &ConfusionCounts) -> Result<(f64, f64, f64)> {
    let n_normal = conf.row_sum(0);
    let n_abnormal: u64 = (1..N_CLASSES).map(|r| conf.row_sum(r)).sum();
    if n_normal == 0 {
        return Err(Error::Data("score undefined: no normal samples".into()));
    }
    if n_abnormal == 0 {
        return Err(Error::Data("score undefined: no abnormal samples".into()));
    }
    let sp = conf.matrix[0][0] as f64 / n_normal as f64;
    let correct_abnormal: u64 = (1..N_CLASSES).map(|i| conf.matrix[i][i]).sum();
    let se = correct_abnormal as f64 / n_abnormal as f64;
    Ok((sp, se, (sp + se) / 2.0))
}

/// Collapse crackle/wheeze/both into one abnormal class on both axes, then
/// score: any abnormal prediction of an abnormal sample counts as correct.
pub fn score2(conf: &ConfusionCounts) -> Result<(f64, f64)> {
    let n_normal = conf.row_sum(0);
    let n_abnormal: u64 = (1..N_CLASSES).map(|r| conf.row_sum(r)).sum();
    if n_normal == 0 || n_abnormal == 0 {
        return Err(Error::Data("2-class score undefined: empty class group".into()));
    }
    let sp = conf.matrix[0][0] as f64 / n_normal as f64;
    let mut correct_abnormal = 0u64;
    for r in 1..N_CLASSES {
        for c in 1..N_CLASSES {
            correct_abnormal += conf.matrix[r][c];
        }
    }
    Ok((sp, correct_abnormal as f64 / n_abnormal as f64))
}

pub fn metrics_report(conf: &ConfusionCounts) -> Result<MetricsReport> {
    let (sp, se, score) = score4(conf)?;
    let (sp2, se2) = score2(conf)?;
    Ok(MetricsReport { sp, se, score, sp_2class: sp2, se_2class: se2 })
}

/// Machine-readable per-run record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sp: f64,
    pub se: f64,
    pub score: f64,
    pub sp_2class: f64,
    pub se_2class: f64,
    pub n_samples: u64,
    pub seed: u64,
}

impl RunRecord {
    pub fn new(report: &MetricsReport, n_samples: u64, seed: u64) -> Self {
        RunRecord {
            sp: report.sp,
            se: report.se,
            score: report.score,
            sp_2class: report.sp_2class,
            se_2class: report.se_2class,
            n_samples,
            seed,
        }
    }

    /// Key-value text form; ratios printed as percent with 2 decimals.
    pub fn to_kv(&self) -> String {
        format!(
            "sp = {:.2}\nse = {:.2}\nscore = {:.2}\nsp_2class = {:.2}\nse_2class = {:.2}\nn_samples = {}\nseed = {}\n",
            self.sp * 100.0,
            self.se * 100.0,
            self.score * 100.0,
            self.sp_2class * 100.0,
            self.se_2class * 100.0,
            self.n_samples,
            self.seed
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub mean: f64,
    pub std: f64,
}

/// Mean and standard deviation per reported field across seeds (sample
/// standard deviation; 0 for a single run).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_runs: usize,
    pub sp: FieldStats,
    pub se: FieldStats,
    pub score: FieldStats,
    pub sp_2class: FieldStats,
    pub se_2class: FieldStats,
}

fn stats(values: &[f64]) -> FieldStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    FieldStats { mean, std }
}

pub fn aggregate(records: &[RunRecord]) -> Result<Aggregate> {
    if records.is_empty() {
        return Err(Error::Data("cannot aggregate zero runs".into()));
    }
    let field = |f: fn(&RunRecord) -> f64| stats(&records.iter().map(f).collect::<Vec<_>>());
    Ok(Aggregate {
        n_runs: records.len(),
        sp: field(|r| r.sp),
        se: field(|r| r.se),
        score: field(|r| r.score),
        sp_2class: field(|r| r.sp_2class),
        se_2class: field(|r| r.se_2class),
    })
}

impl Aggregate {
    pub fn to_kv(&self) -> String {
        let line = |name: &str, f: &FieldStats| {
            format!("{name} = {:.2} +- {:.2}\n", f.mean * 100.0, f.std * 100.0)
        };
        let mut out = format!("runs = {}\n", self.n_runs);
        out.push_str(&line("sp", &self.sp));
        out.push_str(&line("se", &self.se));
        out.push_str(&line("score", &self.score));
        out.push_str(&line("sp_2class", &self.sp_2class));
        out.push_str(&line("se_2class", &self.se_2class));
        out
    }
}
