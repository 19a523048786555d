//! Loading, scaling, client partitioning and synthetic data.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::svm::{DatasetView, Label, LabeledSample, SvmError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("CSV parse error: {0}")]
    Parse(String),
    #[error("label column {0:?} not found in the header")]
    MissingColumn(String),
    #[error("row {row}, column {column:?}: {value:?} is not a number")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("row {row}: label {value:?} is neither {positive:?} nor the other class {negative:?}")]
    UnknownLabel {
        row: usize,
        value: String,
        positive: String,
        negative: String,
    },
    #[error("table has no data rows")]
    Empty,
    #[error("infeasible partition: {0}")]
    Partition(String),
    #[error(transparent)]
    Data(#[from] SvmError),
}

/// Parsed CSV: feature columns and a binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
    pub label_column: String,
    /// Raw label values mapped to `+1` and `-1`.
    pub positive_label: String,
    pub negative_label: Option<String>,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_dataset(&self) -> Result<DatasetView, SvmError> {
        let samples = self
            .rows
            .iter()
            .zip(&self.labels)
            .map(|(x, y)| LabeledSample::new(x.clone(), *y))
            .collect();
        DatasetView::new(samples, self.feature_names.len())
    }
}

/// Reads a headed CSV. `positive_label` maps to `+1`; the single other value
/// seen in the label column maps to `-1`, and a third value is an error.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str, positive_label: &str) -> Result<RawTable, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(&text, label_column, positive_label)
}

pub fn parse_csv(text: &str, label_column: &str, positive_label: &str) -> Result<RawTable, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| DataError::Parse(e.to_string()))?.clone();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::MissingColumn(label_column.to_string()))?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut negative: Option<String> = None;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Parse(e.to_string()))?;
        let row = r + 1;
        let mut x = Vec::with_capacity(feature_names.len());
        for (i, field) in record.iter().enumerate() {
            if i == label_idx {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| DataError::NonNumeric {
                row,
                column: header[i].to_string(),
                value: field.to_string(),
            })?;
            x.push(v);
        }
        let raw = &record[label_idx];
        let y = if raw == positive_label {
            Label::Positive
        } else {
            match &negative {
                None => {
                    negative = Some(raw.to_string());
                    Label::Negative
                }
                Some(n) if n == raw => Label::Negative,
                Some(n) => {
                    return Err(DataError::UnknownLabel {
                        row,
                        value: raw.to_string(),
                        positive: positive_label.to_string(),
                        negative: n.clone(),
                    })
                }
            }
        };
        rows.push(x);
        labels.push(y);
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(RawTable {
        feature_names,
        rows,
        labels,
        label_column: label_column.to_string(),
        positive_label: positive_label.to_string(),
        negative_label: negative,
    })
}

/// Per-feature min-max scaling fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    pub fn fit(data: &DatasetView) -> Self {
        let mut min = vec![f64::INFINITY; data.dim()];
        let mut max = vec![f64::NEG_INFINITY; data.dim()];
        for s in data.samples() {
            for (p, &v) in s.x.iter().enumerate() {
                min[p] = min[p].min(v);
                max[p] = max[p].max(v);
            }
        }
        Self { min, max }
    }

    /// Scales into `[0, 1]`, clipping values outside the fitted range;
    /// constant features map to 0.
    pub fn apply(&self, data: &DatasetView) -> Result<DatasetView, SvmError> {
        if data.dim() != self.min.len() {
            return Err(SvmError::DimensionMismatch {
                expected: self.min.len(),
                got: data.dim(),
            });
        }
        let samples = data
            .samples()
            .iter()
            .map(|s| {
                let x = s
                    .x
                    .iter()
                    .enumerate()
                    .map(|(p, &v)| {
                        let range = self.max[p] - self.min[p];
                        if range > 0.0 {
                            ((v - self.min[p]) / range).clamp(0.0, 1.0)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                LabeledSample::new(x, s.y)
            })
            .collect();
        DatasetView::new(samples, data.dim())
    }
}

/// Appends a constant-1 feature so that a linear model through the origin
/// can represent an offset.
pub fn with_intercept(data: &DatasetView) -> Result<DatasetView, SvmError> {
    let samples = data
        .samples()
        .iter()
        .map(|s| {
            let mut x = s.x.clone();
            x.push(1.0);
            LabeledSample::new(x, s.y)
        })
        .collect();
    DatasetView::new(samples, data.dim() + 1)
}

/// Shuffles and splits off the first `train` samples.
pub fn train_test_split(data: &DatasetView, train: usize, seed: u64) -> (DatasetView, DatasetView) {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = train.min(data.len());
    (data.subset(&idx[..train]), data.subset(&idx[train..]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionScheme {
    /// Equal client sizes, stratified by class.
    Even,
    /// Client shares of the samples.
    ClientImbalance { fractions: Vec<f64> },
    /// Pooled class shares `[negative, positive]`, reached by subsampling.
    ClassImbalance { fractions: [f64; 2] },
    ClientPlusClass { client_fractions: Vec<f64>, class_fractions: [f64; 2] },
    /// Even split, then `round(rate * N)` labels flipped.
    LabelNoise { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub scheme: PartitionScheme,
    pub clients: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub clients: Vec<DatasetView>,
    /// Class counts `(negative, positive)` per client, as achieved.
    pub class_counts: Vec<(usize, usize)>,
    pub flipped: usize,
}

fn check_fractions(f: &[f64], what: &str) -> Result<(), DataError> {
    let sum: f64 = f.iter().sum();
    if f.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(DataError::Partition(format!("{what} fractions {f:?} must be nonnegative and sum to 1")));
    }
    Ok(())
}

/// Integer sizes summing to `n`, proportional to `fractions` (largest remainder).
pub fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let short = n.saturating_sub(sizes.iter().sum());
    for &i in order.iter().cycle().take(short) {
        sizes[i] += 1;
    }
    sizes
}

/// Splits `data` across clients according to `plan`; reproducible given the seed.
pub fn partition(data: &DatasetView, plan: &PartitionPlan) -> Result<Partition, DataError> {
    let g = plan.clients;
    if g == 0 {
        return Err(DataError::Partition("need at least one client".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut neg: Vec<usize> = (0..data.len()).filter(|&i| data.samples()[i].y == Label::Negative).collect();
    let mut pos: Vec<usize> = (0..data.len()).filter(|&i| data.samples()[i].y == Label::Positive).collect();
    neg.shuffle(&mut rng);
    pos.shuffle(&mut rng);

    let class_subsample = |neg: &mut Vec<usize>, pos: &mut Vec<usize>, f: &[f64; 2]| -> Result<(), DataError> {
        check_fractions(f, "class")?;
        let total = [neg.len() as f64 / f[0], pos.len() as f64 / f[1]]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let keep = apportion(total.floor() as usize, f);
        neg.truncate(keep[0].min(neg.len()));
        pos.truncate(keep[1].min(pos.len()));
        Ok(())
    };

    let (groups, flip_rate) = match &plan.scheme {
        PartitionScheme::Even => (deal_stratified(&neg, &pos, &vec![1.0 / g as f64; g]), 0.0),
        PartitionScheme::LabelNoise { rate } => {
            if !(0.0..=1.0).contains(rate) {
                return Err(DataError::Partition(format!("noise rate {rate} outside [0, 1]")));
            }
            (deal_stratified(&neg, &pos, &vec![1.0 / g as f64; g]), *rate)
        }
        PartitionScheme::ClientImbalance { fractions } => {
            check_client_fractions(fractions, g)?;
            (deal_stratified(&neg, &pos, fractions), 0.0)
        }
        PartitionScheme::ClassImbalance { fractions } => {
            class_subsample(&mut neg, &mut pos, fractions)?;
            (deal_stratified(&neg, &pos, &vec![1.0 / g as f64; g]), 0.0)
        }
        PartitionScheme::ClientPlusClass {
            client_fractions,
            class_fractions,
        } => {
            check_client_fractions(client_fractions, g)?;
            class_subsample(&mut neg, &mut pos, class_fractions)?;
            (deal_stratified(&neg, &pos, client_fractions), 0.0)
        }
    };
    if let Some(empty) = groups.iter().position(|c| c.is_empty()) {
        return Err(DataError::Partition(format!(
            "client {empty} receives no samples from {} available",
            neg.len() + pos.len()
        )));
    }

    let mut clients: Vec<Vec<LabeledSample>> = groups
        .iter()
        .map(|idx| idx.iter().map(|&i| data.samples()[i].clone()).collect())
        .collect();
    let total: usize = clients.iter().map(|c| c.len()).sum();
    let flipped = (flip_rate * total as f64).round() as usize;
    if flipped > 0 {
        let slots: Vec<(usize, usize)> = clients
            .iter()
            .enumerate()
            .flat_map(|(c, s)| (0..s.len()).map(move |i| (c, i)))
            .collect();
        for &(c, i) in slots.choose_multiple(&mut rng, flipped) {
            clients[c][i].y = clients[c][i].y.flipped();
        }
    }
    let clients: Vec<DatasetView> = clients
        .into_iter()
        .map(|s| DatasetView::new(s, data.dim()))
        .collect::<Result<_, _>>()?;
    let class_counts = clients
        .iter()
        .map(|c| (c.count_label(Label::Negative), c.count_label(Label::Positive)))
        .collect();
    Ok(Partition {
        clients,
        class_counts,
        flipped,
    })
}

fn check_client_fractions(f: &[f64], g: usize) -> Result<(), DataError> {
    if f.len() != g {
        return Err(DataError::Partition(format!("{} client fractions for {g} clients", f.len())));
    }
    check_fractions(f, "client")
}

/// Client sizes follow `fractions` of the total; within that, each client's
/// class mix follows the pool's as closely as rounding allows.
fn deal_stratified(neg: &[usize], pos: &[usize], fractions: &[f64]) -> Vec<Vec<usize>> {
    let sizes = apportion(neg.len() + pos.len(), fractions);
    let neg_sizes = apportion(neg.len(), fractions);
    let mut out = Vec::with_capacity(sizes.len());
    let (mut a, mut b) = (0, 0);
    for (c, &size) in sizes.iter().enumerate() {
        let k = neg_sizes[c].min(size);
        let mut idx: Vec<usize> = neg[a..a + k].to_vec();
        a += k;
        let rest = (size - k).min(pos.len() - b);
        idx.extend_from_slice(&pos[b..b + rest]);
        b += rest;
        out.push(idx);
    }
    // rounding can leave a few samples unassigned; hand them out in order
    let mut leftover: Vec<usize> = neg[a..].iter().chain(&pos[b..]).copied().collect();
    let (groups, mut c) = (out.len(), 0);
    while let Some(i) = leftover.pop() {
        out[c % groups].push(i);
        c += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub clients: usize,
    /// Side length of the hypercube whose opposite vertices are the class means.
    #[serde(default = "default_side")]
    pub side: f64,
    pub seed: u64,
    /// See [`apply_client_shift`].
    #[serde(default)]
    pub client_shift: f64,
}

fn default_side() -> f64 {
    2.4
}

impl SyntheticSpec {
    pub fn new(n: usize, p: usize, clients: usize, seed: u64) -> Self {
        Self {
            n,
            p,
            clients,
            side: default_side(),
            seed,
            client_shift: 0.0,
        }
    }
}

/// Two unit-variance Gaussian classes centered at `+-side/2 * (1, ..., 1)`,
/// alternating labels starting with `+1`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DatasetView, DataError> {
    if spec.clients == 0 || spec.n < 2 * spec.clients || spec.p == 0 {
        return Err(DataError::Partition(format!(
            "synthetic data needs p >= 1 and n >= 2G (n = {}, G = {})",
            spec.n, spec.clients
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let half = spec.side / 2.0;
    let samples = (0..spec.n)
        .map(|i| {
            let y = if i % 2 == 0 { Label::Positive } else { Label::Negative };
            let x = (0..spec.p)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    y.sign() * half + z
                })
                .collect();
            LabeledSample::new(x, y)
        })
        .collect();
    Ok(DatasetView::new(samples, spec.p)?)
}

/// Moves every feature of client `g` by `shift * (g - (G-1)/2)`, a crude
/// stand-in for per-client differences in the data-generating process.
pub fn apply_client_shift(clients: &[DatasetView], shift: f64) -> Result<Vec<DatasetView>, SvmError> {
    let center = (clients.len() as f64 - 1.0) / 2.0;
    clients
        .iter()
        .enumerate()
        .map(|(g, d)| {
            let delta = shift * (g as f64 - center);
            let samples = d
                .samples()
                .iter()
                .map(|s| LabeledSample::new(s.x.iter().map(|v| v + delta).collect(), s.y))
                .collect();
            DatasetView::new(samples, d.dim())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pooled(n: usize) -> DatasetView {
        generate_synthetic(&SyntheticSpec::new(n, 2, 4, 1)).unwrap()
    }

    #[test]
    fn csv_fixture_round_trips() {
        let text = "a,label,b\n1.5,yes,-2\n0,no,3e2\n7,yes,0.25\n";
        let t = parse_csv(text, "label", "yes").unwrap();
        assert_eq!(t.feature_names, ["a", "b"]);
        assert_eq!(t.rows, vec![vec![1.5, -2.0], vec![0.0, 300.0], vec![7.0, 0.25]]);
        assert_eq!(t.labels, [Label::Positive, Label::Negative, Label::Positive]);
        assert_eq!(t.negative_label.as_deref(), Some("no"));
    }

    #[test]
    fn csv_errors_are_distinct() {
        assert!(matches!(parse_csv("a,b\n1,2\n", "class", "1"), Err(DataError::MissingColumn(c)) if c == "class"));
        assert!(matches!(parse_csv("a,class\n", "class", "1"), Err(DataError::Empty)));
        assert!(matches!(
            parse_csv("a,class\nx,1\n", "class", "1"),
            Err(DataError::NonNumeric { row: 1, .. })
        ));
        assert!(matches!(
            parse_csv("a,class\n1,0\n2,1\n3,2\n", "class", "1"),
            Err(DataError::UnknownLabel { row: 3, .. })
        ));
        assert!(matches!(parse_csv("a,class\n1,0,9\n", "class", "1"), Err(DataError::Parse(_))));
    }

    #[test]
    fn minmax_conventions() {
        let train = DatasetView::from_samples(vec![
            LabeledSample::new(vec![2.0, 5.0], Label::Positive),
            LabeledSample::new(vec![4.0, 5.0], Label::Negative),
        ])
        .unwrap();
        let mm = MinMax::fit(&train);
        let t = mm.apply(&train).unwrap();
        assert_eq!(t.samples()[0].x, vec![0.0, 0.0]);
        assert_eq!(t.samples()[1].x, vec![1.0, 0.0]);
        let test = DatasetView::from_samples(vec![LabeledSample::new(vec![1.0, 9.0], Label::Positive)]).unwrap();
        assert_eq!(mm.apply(&test).unwrap().samples()[0].x, vec![0.0, 0.0]);
    }

    #[test]
    fn even_split_is_balanced() {
        let parts = partition(
            &pooled(400),
            &PartitionPlan {
                scheme: PartitionScheme::Even,
                clients: 4,
                seed: 9,
            },
        )
        .unwrap();
        assert_eq!(parts.class_counts, vec![(50, 50); 4]);
    }

    #[test]
    fn client_imbalance_sizes() {
        let parts = partition(
            &pooled(400),
            &PartitionPlan {
                scheme: PartitionScheme::ClientImbalance {
                    fractions: vec![0.7, 0.15, 0.1, 0.05],
                },
                clients: 4,
                seed: 9,
            },
        )
        .unwrap();
        let sizes: Vec<usize> = parts.clients.iter().map(|c| c.len()).collect();
        assert_eq!(sizes, [280, 60, 40, 20]);
    }

    #[test]
    fn label_noise_flips_exactly() {
        let data = pooled(400);
        let parts = partition(
            &data,
            &PartitionPlan {
                scheme: PartitionScheme::LabelNoise { rate: 0.15 },
                clients: 4,
                seed: 2,
            },
        )
        .unwrap();
        assert_eq!(parts.flipped, 60);
        // labels are tied to the features, so count flips by matching rows
        let truth: std::collections::HashMap<Vec<u64>, Label> = data
            .samples()
            .iter()
            .map(|s| (s.x.iter().map(|v| v.to_bits()).collect(), s.y))
            .collect();
        let flipped = parts
            .clients
            .iter()
            .flat_map(|c| c.samples())
            .filter(|s| truth[&s.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>()] != s.y)
            .count();
        assert_eq!(flipped, 60);
    }

    #[test]
    fn class_imbalance_subsamples() {
        let parts = partition(
            &pooled(400),
            &PartitionPlan {
                scheme: PartitionScheme::ClassImbalance { fractions: [0.9, 0.1] },
                clients: 4,
                seed: 5,
            },
        )
        .unwrap();
        let neg: usize = parts.class_counts.iter().map(|c| c.0).sum();
        let pos: usize = parts.class_counts.iter().map(|c| c.1).sum();
        assert_eq!((neg, pos), (200, 22));
    }

    #[test]
    fn infeasible_fractions() {
        let plan = PartitionPlan {
            scheme: PartitionScheme::ClientImbalance {
                fractions: vec![0.99, 0.01],
            },
            clients: 2,
            seed: 0,
        };
        assert!(matches!(partition(&pooled(40), &plan), Err(DataError::Partition(_))));
    }

    #[test]
    fn synthetic_means_and_determinism() {
        let spec = SyntheticSpec::new(4000, 3, 2, 11);
        let d = generate_synthetic(&spec).unwrap();
        assert_eq!(d, generate_synthetic(&spec).unwrap());
        assert_eq!(d.count_label(Label::Positive), 2000);
        let bound = 3.0 / (2000f64).sqrt();
        for (label, target) in [(Label::Positive, 1.2), (Label::Negative, -1.2)] {
            for p in 0..3 {
                let m = d.samples().iter().filter(|s| s.y == label).map(|s| s.x[p]).sum::<f64>() / 2000.0;
                assert!((m - target).abs() < bound, "{m}");
            }
        }
    }
}
