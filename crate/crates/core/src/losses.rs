//! Training objectives and their analytic gradients.
//!
//! The contrastive objective is the temperature-scaled InfoNCE loss over a
//! batch of `2N` projections made of `N` positive pairs. For an anchor row
//! `i` with partner `j`:
//!
//! ```text
//! l(i, j) = -log( exp(sim(z_i, z_j) / tau) / sum_{k != i} exp(sim(z_i, z_k) / tau) )
//! ```
//!
//! and the batch loss averages `l` over all `2N` ordered anchors, so both
//! directions of every pair contribute. The in-domain variant evaluates
//! this separately on a source-only and a target-only batch and adds the
//! two, which keeps cross-domain rows out of every denominator.
//!
//! Every log-sum-exp subtracts the row maximum first; at `tau = 0.05` a unit
//! change in cosine similarity moves the exponent by 20.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How positive pairs are arranged in the rows of a [`ProjectionBatch`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairLayout {
    /// Rows `2k` and `2k + 1` form pair `k`.
    Interleaved,
    /// Rows `k` and `k + N` form pair `k`.
    Blocked,
}

/// Projected representations arranged as `N` positive pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBatch {
    z: Array2<f64>,
    layout: PairLayout,
    domains: Vec<String>,
}

impl ProjectionBatch {
    /// `domains` holds one tag per pair. Rows must be nonzero.
    pub fn new(z: Array2<f64>, layout: PairLayout, domains: Vec<String>) -> Result<Self> {
        let rows = z.nrows();
        if rows == 0 || !rows.is_multiple_of(2) {
            return Err(Error::Layout(format!("row count {rows} is not a positive even number")));
        }
        if domains.len() != rows / 2 {
            return Err(Error::Layout(format!(
                "{} domain tags for {} pairs",
                domains.len(),
                rows / 2
            )));
        }
        for (i, row) in z.axis_iter(Axis(0)).enumerate() {
            let norm = row.dot(&row).sqrt();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::ZeroNorm(i));
            }
        }
        Ok(ProjectionBatch { z, layout, domains })
    }

    pub fn interleaved(z: Array2<f64>, domains: Vec<String>) -> Result<Self> {
        Self::new(z, PairLayout::Interleaved, domains)
    }

    /// Interleaved batch whose pairs all carry `domain`.
    pub fn single_domain(z: Array2<f64>, domain: &str) -> Result<Self> {
        let n = z.nrows() / 2;
        Self::new(z, PairLayout::Interleaved, vec![domain.to_string(); n])
    }

    pub fn z(&self) -> ArrayView2<'_, f64> {
        self.z.view()
    }

    pub fn layout(&self) -> PairLayout {
        self.layout
    }

    pub fn n_pairs(&self) -> usize {
        self.z.nrows() / 2
    }

    pub fn rows(&self) -> usize {
        self.z.nrows()
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn pair_of_row(&self, row: usize) -> usize {
        match self.layout {
            PairLayout::Interleaved => row / 2,
            PairLayout::Blocked => row % self.n_pairs(),
        }
    }

    pub fn partner(&self, row: usize) -> usize {
        let n = self.n_pairs();
        match self.layout {
            PairLayout::Interleaved => row ^ 1,
            PairLayout::Blocked if row < n => row + n,
            PairLayout::Blocked => row - n,
        }
    }

    pub fn domain_of_row(&self, row: usize) -> &str {
        &self.domains[self.pair_of_row(row)]
    }

    /// The shared domain tag, if every pair carries the same one.
    pub fn single_domain_tag(&self) -> Option<&str> {
        let first = self.domains.first()?;
        self.domains.iter().all(|d| d == first).then_some(first.as_str())
    }

    /// Rows of both batches in one interleaved batch, `self` first.
    pub fn concat(&self, other: &ProjectionBatch) -> Result<ProjectionBatch> {
        let a = self.to_interleaved();
        let b = other.to_interleaved();
        let z = ndarray::concatenate(Axis(0), &[a.z.view(), b.z.view()])
            .map_err(|e| Error::Layout(e.to_string()))?;
        let domains = a.domains.iter().chain(b.domains.iter()).cloned().collect();
        ProjectionBatch::new(z, PairLayout::Interleaved, domains)
    }

    /// Same pairs, reordered to the interleaved layout.
    pub fn to_interleaved(&self) -> ProjectionBatch {
        match self.layout {
            PairLayout::Interleaved => self.clone(),
            PairLayout::Blocked => {
                let n = self.n_pairs();
                let order: Vec<usize> = (0..n).flat_map(|k| [k, k + n]).collect();
                ProjectionBatch {
                    z: self.z.select(Axis(0), &order),
                    layout: PairLayout::Interleaved,
                    domains: self.domains.clone(),
                }
            }
        }
    }

    /// Maps a gradient laid out like `self.to_interleaved()` back onto
    /// `self`'s row order.
    fn from_interleaved_grad(&self, grad: Array2<f64>) -> Array2<f64> {
        match self.layout {
            PairLayout::Interleaved => grad,
            PairLayout::Blocked => {
                let n = self.n_pairs();
                let order: Vec<usize> = (0..2 * n).map(|r| if r < n { 2 * r } else { 2 * (r - n) + 1 }).collect();
                grad.select(Axis(0), &order)
            }
        }
    }
}

/// Softmax temperature, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Temperature(tau))
        } else {
            Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature(0.05)
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;

    fn try_from(tau: f64) -> Result<Self> {
        Temperature::new(tau)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub ce: f64,
    pub con: f64,
    pub ent: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            ce: 1.0,
            con: 1.0,
            ent: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(ce: f64, con: f64, ent: f64) -> Result<Self> {
        let w = LossWeights { ce, con, ent };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("ce", self.ce), ("con", self.con), ("ent", self.ent)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("loss weight {name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension {
            expected: u.len(),
            got: v.len(),
        });
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 {
        return Err(Error::ZeroNorm(0));
    }
    if nv == 0.0 {
        return Err(Error::ZeroNorm(1));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Rows scaled to unit length, plus the original norms.
fn normalize_rows(z: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = z.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let unit = &z / &norms.view().insert_axis(Axis(1));
    (unit, norms)
}

/// `log sum exp` over the entries of `values` except index `skip`, split as
/// `max + ln_1p(rest)` where `rest` sums the shifted non-max terms. Keeping
/// the two parts apart preserves precision when the result is close to the
/// maximum.
fn logsumexp_parts(values: ArrayView1<f64>, skip: Option<usize>) -> (f64, f64) {
    let mut arg = None;
    let mut max = f64::NEG_INFINITY;
    for (k, &v) in values.iter().enumerate() {
        if Some(k) != skip && (arg.is_none() || v > max) {
            arg = Some(k);
            max = v;
        }
    }
    let rest: Vec<f64> = values
        .iter()
        .enumerate()
        .filter(|&(k, _)| Some(k) != skip && Some(k) != arg)
        .map(|(_, &v)| (v - max).exp())
        .collect();
    (max, sorted_sum(rest).ln_1p())
}

/// Sum in ascending order, so the result does not depend on input order.
fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// Cosine similarities of unit rows, one explicit dot product per entry so
/// each entry depends only on its two rows.
fn unit_similarities(unit: &Array2<f64>) -> Array2<f64> {
    let m = unit.nrows();
    let mut sims = Array2::zeros((m, m));
    for i in 0..m {
        for k in i..m {
            let dot: f64 = unit.row(i).iter().zip(unit.row(k).iter()).map(|(a, b)| a * b).sum();
            sims[[i, k]] = dot;
            sims[[k, i]] = dot;
        }
    }
    sims
}

/// `lse - values[target]`, the negative log-softmax of one entry.
fn neg_log_softmax_at(values: ArrayView1<f64>, skip: Option<usize>, target: usize) -> f64 {
    let (max, log_rest) = logsumexp_parts(values, skip);
    (max - values[target]) + log_rest
}

/// Pairwise InfoNCE term for anchor row `i` and its positive `j`.
pub fn info_nce_pair(batch: &ProjectionBatch, i: usize, j: usize, tau: Temperature) -> Result<f64> {
    let rows = batch.rows();
    if i >= rows || j >= rows {
        return Err(Error::Layout(format!("row index out of range for {rows} rows")));
    }
    if i == j {
        return Err(Error::Layout(format!("anchor and positive are the same row {i}")));
    }
    if batch.partner(i) != j {
        return Err(Error::Layout(format!(
            "rows {i} and {j} are not a positive pair under {:?} layout",
            batch.layout()
        )));
    }
    let z = batch.z();
    let anchor = z.row(i);
    let anchor_unit = &anchor / anchor.dot(&anchor).sqrt();
    let sims: Array1<f64> = z
        .axis_iter(Axis(0))
        .map(|r| anchor_unit.dot(&r) / r.dot(&r).sqrt() / tau.value())
        .collect();
    Ok(neg_log_softmax_at(sims.view(), Some(i), j).max(0.0))
}

/// Loss and, if requested, its gradient with respect to the rows of `z`.
fn nt_xent(batch: &ProjectionBatch, tau: Temperature, want_grad: bool) -> (f64, Option<Array2<f64>>) {
    let z = batch.z();
    let m = z.nrows();
    let (unit, norms) = normalize_rows(z);
    let sims = unit_similarities(&unit) / tau.value();

    let mut losses = Vec::with_capacity(m);
    let mut coef = want_grad.then(|| Array2::<f64>::zeros((m, m)));
    for i in 0..m {
        let j = batch.partner(i);
        let row = sims.row(i);
        let (max, log_rest) = logsumexp_parts(row, Some(i));
        let lse = max + log_rest;
        losses.push((max - row[j]) + log_rest);
        if let Some(coef) = coef.as_mut() {
            for k in 0..m {
                if k != i {
                    coef[[i, k]] = (row[k] - lse).exp();
                }
            }
            coef[[i, j]] -= 1.0;
        }
    }
    let loss = sorted_sum(losses) / m as f64;

    let grad = coef.map(|coef| {
        // dL/dS = coef / m; S is symmetric in the unit rows.
        let sym = (&coef + &coef.t()) / (m as f64 * tau.value());
        let d_unit = sym.dot(&unit);
        let radial = (&d_unit * &unit).sum_axis(Axis(1));
        let tangential = d_unit - &unit * &radial.insert_axis(Axis(1));
        tangential / &norms.insert_axis(Axis(1))
    });
    (loss.max(0.0), grad)
}

/// Mean InfoNCE over all `2N` ordered anchors of the batch.
pub fn contrastive_loss(batch: &ProjectionBatch, tau: Temperature) -> Result<f64> {
    Ok(nt_xent(batch, tau, false).0)
}

pub fn contrastive_loss_with_grad(batch: &ProjectionBatch, tau: Temperature) -> Result<(f64, Array2<f64>)> {
    let interleaved = batch.to_interleaved();
    let (loss, grad) = nt_xent(&interleaved, tau, true);
    Ok((loss, batch.from_interleaved_grad(grad.expect("gradient requested"))))
}

fn require_single_domain<'a>(batch: &'a ProjectionBatch, role: &str) -> Result<&'a str> {
    batch.single_domain_tag().ok_or_else(|| {
        Error::Validation(format!(
            "{role} batch mixes domains {:?}; in-domain contrastive loss needs one domain per batch",
            batch.domains()
        ))
    })
}

/// Sum of the contrastive losses of a source-only and a target-only batch.
pub fn in_domain_contrastive_loss(
    source: &ProjectionBatch,
    target: &ProjectionBatch,
    tau: Temperature,
) -> Result<f64> {
    require_single_domain(source, "source")?;
    require_single_domain(target, "target")?;
    Ok(contrastive_loss(source, tau)? + contrastive_loss(target, tau)?)
}

pub fn in_domain_contrastive_loss_with_grad(
    source: &ProjectionBatch,
    target: &ProjectionBatch,
    tau: Temperature,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    require_single_domain(source, "source")?;
    require_single_domain(target, "target")?;
    let (ls, gs) = contrastive_loss_with_grad(source, tau)?;
    let (lt, gt) = contrastive_loss_with_grad(target, tau)?;
    Ok((ls + lt, gs, gt))
}

fn check_logits(logits: ArrayView2<f64>) -> Result<()> {
    if logits.nrows() == 0 {
        return Err(Error::EmptyInput("logits with zero rows"));
    }
    if logits.ncols() < 2 {
        return Err(Error::Dimension {
            expected: 2,
            got: logits.ncols(),
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite logit".into()));
    }
    Ok(())
}

/// Row-wise log-softmax.
pub fn log_softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let (max, log_rest) = logsumexp_parts(row.view(), None);
        row.mapv_inplace(|v| (v - max) - log_rest);
    }
    out
}

pub fn softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    log_softmax(logits).mapv(f64::exp)
}

/// Mean Shannon entropy (natural log) of the row-wise softmax.
pub fn prediction_entropy(logits: ArrayView2<f64>) -> Result<f64> {
    Ok(prediction_entropy_with_grad(logits)?.0)
}

pub fn prediction_entropy_with_grad(logits: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    check_logits(logits)?;
    let n = logits.nrows() as f64;
    let log_p = log_softmax(logits);
    let p = log_p.mapv(f64::exp);
    let row_entropy = (&p * &log_p).sum_axis(Axis(1)).mapv(|v| (-v).max(0.0));
    // dH/dx_c = -p_c (log p_c + H)
    let grad = -(&p * &(&log_p + &row_entropy.view().insert_axis(Axis(1)))) / n;
    Ok((row_entropy.sum() / n, grad))
}

/// Mean negative log-likelihood of `labels` (class indices).
pub fn cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    Ok(cross_entropy_with_grad(logits, labels)?.0)
}

pub fn cross_entropy_with_grad(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    check_logits(logits)?;
    if labels.len() != logits.nrows() {
        return Err(Error::Dimension {
            expected: logits.nrows(),
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.ncols()) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range")));
    }
    let n = logits.nrows() as f64;
    let log_p = log_softmax(logits);
    let mut grad = log_p.mapv(f64::exp);
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        loss -= log_p[[i, label]];
        grad[[i, label]] -= 1.0;
    }
    Ok(((loss / n).max(0.0), grad / n))
}

/// Weighted sum of the three objectives; the entropy term only counts when
/// `entropy_active`.
pub fn joint_loss(ce: f64, con: f64, ent: f64, weights: &LossWeights, entropy_active: bool) -> f64 {
    let ent_term = if entropy_active { weights.ent * ent } else { 0.0 };
    weights.ce * ce + weights.con * con + ent_term
}
