//! Training objectives: weighted cross-entropy, the Patch-Mix contrastive
//! loss with its negative-set and stop-gradient variants, the
//! interpolated-label mixed CE baseline, and the combined objective.
//!
//! Every loss comes in a value-only form and a `_grad` form returning the
//! analytic gradients used by the trainer; the `_grad` forms are checked
//! against central finite differences in the test suites.

use crate::error::{Error, Result};
use crate::nn::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NegMode {
    /// Denominator over all batch indices (Eq. 2 as written).
    All,
    /// Denominator restricted to the two positive targets {i, m(i)}.
    Others,
}

impl NegMode {
    pub fn parse(s: &str) -> Result<NegMode> {
        match s {
            "all" => Ok(NegMode::All),
            "others" => Ok(NegMode::Others),
            other => Err(Error::Config(format!(
                "unknown neg_mode {other:?} (expected all|others)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NegMode::All => "all",
            NegMode::Others => "others",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LossKind {
    Ce,
    MixedCe,
    #[default]
    PatchmixCl,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<LossKind> {
        match s {
            "ce" => Ok(LossKind::Ce),
            "mixed_ce" => Ok(LossKind::MixedCe),
            "patchmix_cl" => Ok(LossKind::PatchmixCl),
            other => Err(Error::Config(format!(
                "unknown loss kind {other:?} (expected ce|mixed_ce|patchmix_cl)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::MixedCe => "mixed_ce",
            LossKind::PatchmixCl => "patchmix_cl",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub neg_mode: NegMode,
    pub stopgrad_targets: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { tau: 0.06, alpha: 1.0, beta: 1.0, neg_mode: NegMode::All, stopgrad_targets: true }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.beta.is_nan() || self.beta <= 0.0 {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Per-class CE weights, inversely proportional to train-set class counts
/// and normalized so they sum to 4.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassWeights {
    pub w: [f64; 4],
}

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights { w: [1.0; 4] }
    }
}

pub fn class_weights(counts: [u64; 4]) -> Result<ClassWeights> {
    if counts.contains(&0) {
        return Err(Error::Data(format!(
            "class weights undefined: zero-count class in {counts:?}"
        )));
    }
    let inv: Vec<f64> = counts.iter().map(|c| 1.0 / *c as f64).collect();
    let sum: f64 = inv.iter().sum();
    let mut w = [0.0; 4];
    for (wi, iv) in w.iter_mut().zip(&inv) {
        *wi = iv * 4.0 / sum;
    }
    Ok(ClassWeights { w })
}

fn check_logits(logits: &Mat, labels: &[usize]) -> Result<()> {
    if logits.rows != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows vs {} labels",
            logits.rows,
            labels.len()
        )));
    }
    if logits.cols != 4 {
        return Err(Error::Shape(format!("expected 4 logits per row, got {}", logits.cols)));
    }
    if !logits.is_finite() {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    if let Some(bad) = labels.iter().find(|l| **l >= 4) {
        return Err(Error::Data(format!("label {bad} out of range 0..=3")));
    }
    Ok(())
}

fn logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// mean_b w[y_b] * (logsumexp(logits_b) - logits_b[y_b])
pub fn weighted_ce(logits: &Mat, labels: &[usize], w: &ClassWeights) -> Result<f64> {
    Ok(weighted_ce_grad(logits, labels, w)?.0)
}

pub fn weighted_ce_grad(logits: &Mat, labels: &[usize], w: &ClassWeights) -> Result<(f64, Mat)> {
    check_logits(logits, labels)?;
    let b = logits.rows;
    let mut loss = 0.0;
    let mut grad = Mat::zeros(b, 4);
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let wy = w.w[y];
        let lse = logsumexp(row);
        loss += wy * (lse - row[y]);
        let g = grad.row_mut(r);
        for c in 0..4 {
            let p = (row[c] - lse).exp();
            g[c] = wy * (p - if c == y { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, grad))
}

/// lam * CE(logits, labels_i) + (1 - lam) * CE(logits, labels_m), unweighted.
pub fn mixed_ce_baseline(
    logits: &Mat,
    labels_own: &[usize],
    labels_partner: &[usize],
    lam: &[f64],
) -> Result<f64> {
    Ok(mixed_ce_baseline_grad(logits, labels_own, labels_partner, lam)?.0)
}

pub fn mixed_ce_baseline_grad(
    logits: &Mat,
    labels_own: &[usize],
    labels_partner: &[usize],
    lam: &[f64],
) -> Result<(f64, Mat)> {
    check_logits(logits, labels_own)?;
    check_logits(logits, labels_partner)?;
    if lam.len() != logits.rows {
        return Err(Error::Shape(format!(
            "{} lambdas vs {} rows",
            lam.len(),
            logits.rows
        )));
    }
    let b = logits.rows;
    let mut loss = 0.0;
    let mut grad = Mat::zeros(b, 4);
    for r in 0..b {
        let row = logits.row(r);
        let lse = logsumexp(row);
        let (yi, ym, l) = (labels_own[r], labels_partner[r], lam[r]);
        loss += l * (lse - row[yi]) + (1.0 - l) * (lse - row[ym]);
        let g = grad.row_mut(r);
        for c in 0..4 {
            let p = (row[c] - lse).exp();
            let mut target = 0.0;
            if c == yi {
                target += l;
            }
            if c == ym {
                target += 1.0 - l;
            }
            g[c] = (p - target) / b as f64;
        }
    }
    Ok((loss / b as f64, grad))
}

/// ce + alpha * cl
pub fn total_loss(ce: f64, cl: f64, alpha: f64) -> f64 {
    ce + alpha * cl
}

fn normalize_rows(m: &Mat, what: &str) -> Result<(Mat, Vec<f64>)> {
    if !m.is_finite() {
        return Err(Error::Numeric(format!("non-finite values in {what}")));
    }
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows);
    for r in 0..m.rows {
        let norm = m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Numeric(format!("zero-norm row {r} in {what}")));
        }
        norms.push(norm);
        for v in out.row_mut(r) {
            *v /= norm;
        }
    }
    Ok((out, norms))
}

/// Patch-Mix contrastive loss.
///
/// Rows of `p` (projected mixed representations) and `z` (targets) are
/// Euclidean-normalized internally. Per sample i with partner m(i) and
/// mixing ratio lam_i:
///
///   loss_i = log sum_{j in J_i} exp(p_i . z_j / tau)
///            - lam_i * (p_i . z_i / tau) - (1 - lam_i) * (p_i . z_m / tau)
///
/// J_i is the whole batch for `NegMode::All`, or {i, m(i)} for
/// `NegMode::Others`. The result is the mean over the batch.
pub fn patch_mix_contrastive(
    p: &Mat,
    z: &Mat,
    partners: &[usize],
    lam: &[f64],
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(patch_mix_contrastive_grad(p, z, partners, lam, cfg)?.0)
}

/// As [`patch_mix_contrastive`], also returning d/dp and d/dz. With
/// `stopgrad_targets` the z gradient is exactly zero (targets are treated
/// as constants).
#[allow(clippy::needless_range_loop)]
pub fn patch_mix_contrastive_grad(
    p: &Mat,
    z: &Mat,
    partners: &[usize],
    lam: &[f64],
    cfg: &LossConfig,
) -> Result<(f64, Mat, Mat)> {
    cfg.validate()?;
    let b = p.rows;
    let d = p.cols;
    if z.rows != b || z.cols != d {
        return Err(Error::Shape(format!(
            "p is {}x{} but z is {}x{}",
            p.rows, p.cols, z.rows, z.cols
        )));
    }
    if partners.len() != b || lam.len() != b {
        return Err(Error::Shape(format!(
            "batch {b} with {} partners and {} lambdas",
            partners.len(),
            lam.len()
        )));
    }
    if let Some(bad) = partners.iter().find(|m| **m >= b) {
        return Err(Error::Data(format!("partner index {bad} out of range")));
    }
    if b == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    if b == 1 && partners[0] != 0 {
        return Err(Error::Data("batch of one must partner with itself".into()));
    }
    if let Some(l) = lam.iter().find(|l| !l.is_finite()) {
        return Err(Error::Numeric(format!("non-finite lambda {l}")));
    }
    let (ph, p_norms) = normalize_rows(p, "projected representations")?;
    let (zh, z_norms) = normalize_rows(z, "target representations")?;

    let inv_tau = 1.0 / cfg.tau;
    let mut loss = 0.0;
    // gradient w.r.t. the normalized rows; mapped through the
    // normalization Jacobian at the end
    let mut dph = Mat::zeros(b, d);
    let mut dzh = Mat::zeros(b, d);
    let sims = ph.matmul_nt(&zh); // sims[i][j] = ph_i . zh_j
    for i in 0..b {
        let m = partners[i];
        let li = lam[i];
        let members: Vec<usize> = match cfg.neg_mode {
            NegMode::All => (0..b).collect(),
            NegMode::Others => {
                if m == i {
                    vec![i]
                } else {
                    vec![i, m]
                }
            }
        };
        let scaled: Vec<f64> = members.iter().map(|j| sims.at(i, *j) * inv_tau).collect();
        let lse = logsumexp(&scaled);
        let positive = li * sims.at(i, i) * inv_tau + (1.0 - li) * sims.at(i, m) * inv_tau;
        loss += lse - positive;

        // d loss_i / d sims[i][j], before the 1/B mean
        let mut coeff = vec![0.0; b];
        for (idx, j) in members.iter().enumerate() {
            coeff[*j] += (scaled[idx] - lse).exp() * inv_tau;
        }
        coeff[i] -= li * inv_tau;
        coeff[m] -= (1.0 - li) * inv_tau;

        for (j, cj) in coeff.iter().enumerate() {
            if *cj == 0.0 {
                continue;
            }
            let zr = zh.row(j);
            let dpr = dph.row_mut(i);
            for t in 0..d {
                dpr[t] += cj * zr[t];
            }
            if !cfg.stopgrad_targets {
                let pr = ph.row(i);
                let dzr = dzh.row_mut(j);
                for t in 0..d {
                    dzr[t] += cj * pr[t];
                }
            }
        }
    }
    let scale = 1.0 / b as f64;
    loss *= scale;

    // chain through row normalization: d/dx = (g - (g . xh) xh) / ||x||
    let mut dp = Mat::zeros(b, d);
    for i in 0..b {
        let g = dph.row(i);
        let xh = ph.row(i);
        let dot: f64 = g.iter().zip(xh).map(|(a, b)| a * b).sum();
        let out = dp.row_mut(i);
        for t in 0..d {
            out[t] = (g[t] - dot * xh[t]) * scale / p_norms[i];
        }
    }
    let mut dz = Mat::zeros(b, d);
    if !cfg.stopgrad_targets {
        for j in 0..b {
            let g = dzh.row(j);
            let xh = zh.row(j);
            let dot: f64 = g.iter().zip(xh).map(|(a, b)| a * b).sum();
            let out = dz.row_mut(j);
            for t in 0..d {
                out[t] = (g[t] - dot * xh[t]) * scale / z_norms[j];
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("contrastive loss is {loss}")));
    }
    Ok((loss, dp, dz))
}
