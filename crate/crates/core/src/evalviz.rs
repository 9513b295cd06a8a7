//! Target-domain accuracy and 2-D projections of hidden features.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{Document, Label, LabeledDocument};
use crate::error::{Error, Result};
use crate::model::{classify, Network, TextEncoder};

/// Documents encoded per forward pass during evaluation and export.
const CHUNK: usize = 256;

/// Argmax over two logits; exact ties go to the negative class.
pub fn predict(logits: ArrayView2<f64>) -> Vec<Label> {
    logits
        .axis_iter(Axis(0))
        .map(|row| if row[1] > row[0] { Label::Positive } else { Label::Negative })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: Label,
    pub support: usize,
    pub predicted: usize,
    /// `None` when the class was never predicted.
    pub precision: Option<f64>,
    /// `None` when the class is absent from the test set.
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub n_correct: usize,
    pub n_total: usize,
    pub per_class: Vec<ClassMetrics>,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn from_predictions(gold: &[Label], predicted: &[Label], config_hash: impl Into<String>) -> Result<Self> {
        if gold.is_empty() {
            return Err(Error::EmptyInput("evaluation needs at least one labeled document"));
        }
        if gold.len() != predicted.len() {
            return Err(Error::Dimension {
                expected: gold.len(),
                got: predicted.len(),
            });
        }
        let n_correct = gold.iter().zip(predicted).filter(|(g, p)| g == p).count();
        let per_class = Label::ALL
            .iter()
            .map(|&label| {
                let support = gold.iter().filter(|&&g| g == label).count();
                let predicted_n = predicted.iter().filter(|&&p| p == label).count();
                let hits = gold.iter().zip(predicted).filter(|(g, p)| **g == label && **p == label).count();
                ClassMetrics {
                    label,
                    support,
                    predicted: predicted_n,
                    precision: (predicted_n > 0).then(|| hits as f64 / predicted_n as f64),
                    recall: (support > 0).then(|| hits as f64 / support as f64),
                }
            })
            .collect();
        Ok(EvalReport {
            accuracy: n_correct as f64 / gold.len() as f64,
            n_correct,
            n_total: gold.len(),
            per_class,
            config_hash: config_hash.into(),
            warnings: Vec::new(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}

/// Hidden features for `docs`, encoded in fixed-size chunks.
pub fn hidden_features(network: &Network, docs: &[&Document]) -> Result<Array2<f64>> {
    if docs.is_empty() {
        return Ok(Array2::zeros((0, network.encoder.hidden_dim())));
    }
    let parts = docs
        .chunks(CHUNK)
        .map(|c| network.encoder.encode(c))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(ndarray::concatenate(Axis(0), &views).expect("equal widths"))
}

pub fn predict_documents(network: &Network, docs: &[&Document]) -> Result<Vec<Label>> {
    let hidden = hidden_features(network, docs)?;
    Ok(predict(classify(&network.classifier, hidden.view())?.view()))
}

/// Accuracy of `network` on a labeled test set. No augmentation, no
/// randomness.
pub fn evaluate_network(network: &Network, test_set: &[LabeledDocument], config_hash: &str) -> Result<EvalReport> {
    if test_set.is_empty() {
        return Err(Error::EmptyInput("evaluation needs at least one labeled document"));
    }
    let docs: Vec<&Document> = test_set.iter().map(|d| &d.base).collect();
    let predicted = predict_documents(network, &docs)?;
    let gold: Vec<Label> = test_set.iter().map(|d| d.label).collect();
    EvalReport::from_predictions(&gold, &predicted, config_hash)
}

/// [`evaluate_network`] on a loaded checkpoint. Test domains the checkpoint
/// never trained on are reported as warnings.
pub fn evaluate(checkpoint: &Checkpoint, test_set: &[LabeledDocument]) -> Result<EvalReport> {
    let mut report = evaluate_network(&checkpoint.network, test_set, &checkpoint.manifest.config_hash)?;
    let mut unseen: Vec<&str> = test_set
        .iter()
        .map(|d| d.base.domain.as_str())
        .filter(|d| !checkpoint.manifest.domains.iter().any(|m| m == d))
        .collect();
    unseen.sort_unstable();
    unseen.dedup();
    for d in unseen {
        let msg = format!("domain {d:?} is not among the checkpoint's training domains");
        log::warn!("{msg}");
        report.warnings.push(msg);
    }
    Ok(report)
}

/// Reduces an `n x d` matrix to `n x 2`.
pub trait Reducer {
    fn id(&self) -> &'static str;
    fn params(&self) -> BTreeMap<String, String>;
    fn reduce(&self, x: ArrayView2<f64>) -> std::result::Result<Array2<f64>, String>;
}

fn params_string(params: &BTreeMap<String, String>) -> String {
    params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(",")
}

/// Barnes-Hut t-SNE with a seeded Gaussian initial embedding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneReducer {
    pub perplexity: f64,
    pub epochs: usize,
    pub theta: f64,
    pub seed: u64,
}

impl Default for TsneReducer {
    fn default() -> Self {
        TsneReducer {
            perplexity: 30.0,
            epochs: 1000,
            theta: 0.5,
            seed: 0,
        }
    }
}

impl Reducer for TsneReducer {
    fn id(&self) -> &'static str {
        "tsne"
    }

    fn params(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("perplexity".to_string(), self.perplexity.to_string()),
            ("epochs".to_string(), self.epochs.to_string()),
            ("theta".to_string(), self.theta.to_string()),
            ("seed".to_string(), self.seed.to_string()),
        ])
    }

    fn reduce(&self, x: ArrayView2<f64>) -> std::result::Result<Array2<f64>, String> {
        let n = x.nrows();
        if !(self.perplexity > 0.0) {
            return Err("perplexity must be positive".into());
        }
        if !(self.theta > 0.0) {
            return Err("theta must be positive".into());
        }
        if n < 2 || ((n - 1) as f64) < 3.0 * self.perplexity {
            return Err(format!("{n} points are too few for perplexity {}", self.perplexity));
        }
        let data: Vec<f64> = x.iter().copied().collect();
        let samples: Vec<&[f64]> = data.chunks(x.ncols()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let init: Vec<f64> = (0..n * 2).map(|_| 1e-4 * standard_normal(&mut rng)).collect();
        let embedding = std::panic::catch_unwind(|| {
            let mut tsne: bhtsne::tSNE<f64, &[f64]> = bhtsne::tSNE::new(&samples);
            tsne.perplexity(self.perplexity)
                .epochs(self.epochs)
                .initial_embedding(init)
                .barnes_hut(self.theta, |a, b| euclidean(a, b));
            tsne.embedding()
        })
        .map_err(|_| "t-SNE panicked".to_string())?;
        if embedding.iter().any(|v| !v.is_finite()) {
            return Err("t-SNE produced non-finite coordinates".into());
        }
        Array2::from_shape_vec((n, 2), embedding).map_err(|e| e.to_string())
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Projection onto the top two principal components, computed by power
/// iteration with deflation. Signs are fixed so each component's largest
/// absolute loading is positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcaReducer {
    pub iterations: usize,
}

impl Default for PcaReducer {
    fn default() -> Self {
        PcaReducer { iterations: 200 }
    }
}

impl Reducer for PcaReducer {
    fn id(&self) -> &'static str {
        "pca"
    }

    fn params(&self) -> BTreeMap<String, String> {
        BTreeMap::from([("iterations".to_string(), self.iterations.to_string())])
    }

    fn reduce(&self, x: ArrayView2<f64>) -> std::result::Result<Array2<f64>, String> {
        let (n, d) = x.dim();
        if n == 0 || d == 0 {
            return Err("empty feature matrix".into());
        }
        let mean = x.mean_axis(Axis(0)).expect("nonempty");
        let centered = &x - &mean;
        let mut cov = centered.t().dot(&centered) / n as f64;
        let mut out = Array2::zeros((n, 2));
        for c in 0..2.min(d) {
            let mut v = ndarray::Array1::from_shape_fn(d, |i| 1.0 / (1.0 + i as f64));
            for _ in 0..self.iterations {
                let next = cov.dot(&v);
                let norm = next.dot(&next).sqrt();
                if norm < 1e-300 {
                    break;
                }
                v = next / norm;
            }
            let norm = v.dot(&v).sqrt();
            if norm > 0.0 {
                v /= norm;
            }
            let pivot = v.iter().copied().fold(0.0_f64, |acc, a| if a.abs() > acc.abs() { a } else { acc });
            if pivot < 0.0 {
                v.mapv_inplace(|a| -a);
            }
            let lambda = v.dot(&cov.dot(&v));
            let outer = v.view().insert_axis(Axis(1)).dot(&v.view().insert_axis(Axis(0)));
            cov.scaled_add(-lambda, &outer);
            out.column_mut(c).assign(&centered.dot(&v));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainRole {
    Source,
    Target,
}

impl DomainRole {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainRole::Source => "source",
            DomainRole::Target => "target",
        }
    }
}

impl fmt::Display for DomainRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub x: f64,
    pub y: f64,
    pub domain: DomainRole,
    pub label: Label,
}

impl ProjectionRow {
    /// Scatter color: red/yellow for source positive/negative, blue/green
    /// for target positive/negative.
    pub fn color(&self) -> &'static str {
        match (self.domain, self.label) {
            (DomainRole::Source, Label::Positive) => "red",
            (DomainRole::Source, Label::Negative) => "yellow",
            (DomainRole::Target, Label::Positive) => "blue",
            (DomainRole::Target, Label::Negative) => "green",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionExport {
    pub reducer: String,
    pub params: BTreeMap<String, String>,
    pub rows: Vec<ProjectionRow>,
}

impl ProjectionExport {
    pub fn groups(&self) -> std::collections::BTreeSet<(DomainRole, Label)> {
        self.rows.iter().map(|r| (r.domain, r.label)).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "x,y,domain,label")?;
            for r in &self.rows {
                writeln!(out, "{},{},{},{}", r.x, r.y, r.domain, r.label)?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    /// Reducer id and parameters, written next to the CSV.
    pub fn write_meta(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let meta = serde_json::json!({ "reducer": self.reducer, "params": self.params, "rows": self.rows.len() });
        std::fs::write(path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<ProjectionRow>> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = raw.lines().enumerate();
        match lines.next() {
            Some((_, "x,y,domain,label")) => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: "expected header x,y,domain,label".into(),
                })
            }
        }
        lines
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let bad = |m: &str| Error::Parse {
                    line: i + 1,
                    message: m.to_string(),
                };
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 4 {
                    return Err(bad("expected 4 fields"));
                }
                let domain = match f[2] {
                    "source" => DomainRole::Source,
                    "target" => DomainRole::Target,
                    _ => return Err(bad("domain must be source or target")),
                };
                Ok(ProjectionRow {
                    x: f[0].parse().map_err(|_| bad("bad x"))?,
                    y: f[1].parse().map_err(|_| bad("bad y"))?,
                    domain,
                    label: Label::parse(f[3]).ok_or_else(|| bad("bad label"))?,
                })
            })
            .collect()
    }

    /// Minimal SVG scatter plot using the four-group colors.
    pub fn render_svg(&self, size: u32) -> String {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for r in &self.rows {
            x0 = x0.min(r.x);
            x1 = x1.max(r.x);
            y0 = y0.min(r.y);
            y1 = y1.max(r.y);
        }
        let span = |a: f64, b: f64| if b - a > 0.0 { b - a } else { 1.0 };
        let (sx, sy) = (span(x0, x1), span(y0, y1));
        let margin = 10.0;
        let inner = size as f64 - 2.0 * margin;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        );
        for r in &self.rows {
            let cx = margin + (r.x - x0) / sx * inner;
            let cy = margin + (1.0 - (r.y - y0) / sy) * inner;
            svg.push_str(&format!(
                "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"2.5\" fill=\"{}\" fill-opacity=\"0.7\"/>\n",
                r.color()
            ));
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Reduces the hidden features of labeled source and target documents to
/// 2-D. Rows follow input order: all source documents, then all target
/// documents.
pub fn export_projection(
    network: &Network,
    source: &[LabeledDocument],
    target: &[LabeledDocument],
    reducer: &dyn Reducer,
) -> Result<ProjectionExport> {
    let docs: Vec<&Document> = source.iter().chain(target).map(|d| &d.base).collect();
    if docs.is_empty() {
        return Err(Error::EmptyInput("projection needs at least one document"));
    }
    let hidden = hidden_features(network, &docs)?;
    let params = reducer.params();
    let coords = reducer.reduce(hidden.view()).map_err(|message| Error::Reducer {
        reducer: reducer.id().to_string(),
        params: params_string(&params),
        message,
    })?;
    if coords.dim() != (docs.len(), 2) {
        return Err(Error::Reducer {
            reducer: reducer.id().to_string(),
            params: params_string(&params),
            message: format!("returned shape {:?}, expected ({}, 2)", coords.dim(), docs.len()),
        });
    }
    let roles = std::iter::repeat_n(DomainRole::Source, source.len())
        .chain(std::iter::repeat_n(DomainRole::Target, target.len()));
    let labels = source.iter().chain(target).map(|d| d.label);
    let rows = coords
        .axis_iter(Axis(0))
        .zip(roles)
        .zip(labels)
        .map(|((c, domain), label)| ProjectionRow {
            x: c[0],
            y: c[1],
            domain,
            label,
        })
        .collect();
    Ok(ProjectionExport {
        reducer: reducer.id().to_string(),
        params,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ties_go_to_negative() {
        let p = predict(array![[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]].view());
        assert_eq!(p, vec![Label::Negative, Label::Positive, Label::Negative]);
    }

    #[test]
    fn zero_logits_on_balanced_set_give_half() {
        let gold = [Label::Positive, Label::Negative, Label::Positive, Label::Negative];
        let pred = predict(Array2::<f64>::zeros((4, 2)).view());
        let r = EvalReport::from_predictions(&gold, &pred, "h").unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.per_class[1].precision, None);
        assert_eq!(r.per_class[0].recall, Some(1.0));
    }

    #[test]
    fn perfect_predictions() {
        let gold = [Label::Positive, Label::Negative];
        let r = EvalReport::from_predictions(&gold, &gold, "h").unwrap();
        assert_eq!((r.accuracy, r.n_correct, r.n_total), (1.0, 2, 2));
        assert!(EvalReport::from_predictions(&[], &[], "h").is_err());
    }

    #[test]
    fn pca_recovers_dominant_axis() {
        let x = array![[-2.0, 0.0, 0.1], [2.0, 0.0, -0.1], [-1.0, 0.5, 0.0], [1.0, -0.5, 0.0]];
        let y = PcaReducer::default().reduce(x.view()).unwrap();
        assert_eq!(y.dim(), (4, 2));
        assert!(y[[0, 0]] < -1.5 && y[[1, 0]] > 1.5);
    }

    #[test]
    fn tsne_rejects_small_inputs_with_params() {
        let x = Array2::<f64>::zeros((5, 3));
        let err = TsneReducer::default().reduce(x.view()).unwrap_err();
        assert!(err.contains("perplexity"));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let export = ProjectionExport {
            reducer: "pca".into(),
            params: BTreeMap::new(),
            rows: vec![
                ProjectionRow {
                    x: 0.5,
                    y: -1.25,
                    domain: DomainRole::Source,
                    label: Label::Positive,
                },
                ProjectionRow {
                    x: 3.0,
                    y: 2.0,
                    domain: DomainRole::Target,
                    label: Label::Negative,
                },
            ],
        };
        let path = dir.path().join("p.csv");
        export.write_csv(&path).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().starts_with("x,y,domain,label\n0.5,-1.25,source,positive"));
        assert_eq!(ProjectionExport::read_csv(&path).unwrap(), export.rows);
        let svg = export.render_svg(200);
        assert!(svg.contains("red") && svg.contains("green"));
    }
}
