//! Domain types shared by every part of the crate: labeled samples, dataset
//! views, the linear model, and the loss / transport-cost primitives.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SvmError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label must be -1 or +1, got {0}")]
    InvalidLabel(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Negative => -1.0,
            Label::Positive => 1.0,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }

    pub fn from_sign(v: f64) -> Result<Label, SvmError> {
        if v == 1.0 {
            Ok(Label::Positive)
        } else if v == -1.0 {
            Ok(Label::Negative)
        } else {
            Err(SvmError::InvalidLabel(v))
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        match l {
            Label::Negative => -1,
            Label::Positive => 1,
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = SvmError;
    fn try_from(v: i8) -> Result<Self, Self::Error> {
        Label::from_sign(v as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: Label,
}

impl LabeledSample {
    pub fn new(x: Vec<f64>, y: Label) -> Self {
        Self { x, y }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// True when every feature lies in the unit box `[0, 1]`.
    pub fn in_unit_box(&self) -> bool {
        self.x.iter().all(|&v| (0.0..=1.0).contains(&v))
    }
}

/// An ordered collection of samples sharing one feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetView {
    samples: Vec<LabeledSample>,
    dim: usize,
}

impl DatasetView {
    pub fn new(samples: Vec<LabeledSample>, dim: usize) -> Result<Self, SvmError> {
        for s in &samples {
            if s.dim() != dim {
                return Err(SvmError::DimensionMismatch {
                    expected: dim,
                    got: s.dim(),
                });
            }
            if s.x.iter().any(|v| !v.is_finite()) {
                return Err(SvmError::NonFinite("features"));
            }
        }
        Ok(Self { samples, dim })
    }

    /// Builds a view from samples, taking the dimension from the first one.
    pub fn from_samples(samples: Vec<LabeledSample>) -> Result<Self, SvmError> {
        let dim = samples.first().ok_or(SvmError::EmptyDataset)?.dim();
        Self::new(samples, dim)
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<LabeledSample> {
        self.samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn in_unit_box(&self) -> bool {
        self.samples.iter().all(LabeledSample::in_unit_box)
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.y == label).count()
    }

    pub fn subset(&self, indices: &[usize]) -> DatasetView {
        DatasetView {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            dim: self.dim,
        }
    }

    /// Concatenates views of equal dimension.
    pub fn concat<'a>(views: impl IntoIterator<Item = &'a DatasetView>) -> Result<Self, SvmError> {
        let mut dim = None;
        let mut samples = Vec::new();
        for v in views {
            match dim {
                None => dim = Some(v.dim),
                Some(d) if d != v.dim => {
                    return Err(SvmError::DimensionMismatch {
                        expected: d,
                        got: v.dim,
                    })
                }
                _ => {}
            }
            samples.extend(v.samples.iter().cloned());
        }
        let dim = dim.ok_or(SvmError::EmptyDataset)?;
        Ok(DatasetView { samples, dim })
    }
}

/// Linear SVM weight vector `w` (no separate intercept).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    pub w: Vec<f64>,
}

impl GlobalModel {
    pub fn new(w: Vec<f64>) -> Self {
        Self { w }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { w: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|v| v.is_finite())
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.w, x)
    }

    /// Sign of the score; a zero score is classified as positive.
    pub fn predict(&self, x: &[f64]) -> Label {
        if self.score(x) >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

/// Feature-space norm used by the transport cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    LInf,
}

impl NormKind {
    pub fn dual(self) -> NormKind {
        match self {
            NormKind::L1 => NormKind::LInf,
            NormKind::LInf => NormKind::L1,
        }
    }

    pub fn eval(self, v: &[f64]) -> f64 {
        match self {
            NormKind::L1 => v.iter().map(|a| a.abs()).sum(),
            NormKind::LInf => v.iter().fold(0.0, |m, a| m.max(a.abs())),
        }
    }

    fn eval_diff(self, a: &[f64], b: &[f64]) -> f64 {
        let it = a.iter().zip(b).map(|(u, v)| (u - v).abs());
        match self {
            NormKind::L1 => it.sum(),
            NormKind::LInf => it.fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportCostSpec {
    pub norm: NormKind,
    /// Cost charged for flipping a label.
    pub kappa: f64,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

fn check_dim(expected: usize, got: usize) -> Result<(), SvmError> {
    if expected != got {
        return Err(SvmError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `max{0, 1 - y <w, x>}`.
pub fn hinge_loss(model: &GlobalModel, sample: &LabeledSample) -> Result<f64, SvmError> {
    check_dim(model.dim(), sample.dim())?;
    Ok(hinge_at(&model.w, &sample.x, sample.y.sign()))
}

/// Unchecked hinge loss for a raw label sign.
#[inline]
pub(crate) fn hinge_at(w: &[f64], x: &[f64], y: f64) -> f64 {
    (1.0 - y * dot(w, x)).max(0.0)
}

/// `||a.x - b.x|| + kappa * 1{a.y != b.y}`.
pub fn transport_cost(
    a: &LabeledSample,
    b: &LabeledSample,
    spec: &TransportCostSpec,
) -> Result<f64, SvmError> {
    check_dim(a.dim(), b.dim())?;
    let flip = if a.y != b.y { spec.kappa } else { 0.0 };
    Ok(spec.norm.eval_diff(&a.x, &b.x) + flip)
}

/// Norm dual to `norm`: `||v||_inf` for L1, `||v||_1` for LInf.
pub fn dual_norm(v: &[f64], norm: NormKind) -> f64 {
    norm.dual().eval(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(x: &[f64], y: Label) -> LabeledSample {
        LabeledSample::new(x.to_vec(), y)
    }

    #[test]
    fn hinge_examples() {
        let zero = GlobalModel::zeros(3);
        assert_eq!(hinge_loss(&zero, &s(&[0.2, 0.9, 0.1], Label::Negative)).unwrap(), 1.0);

        let w = GlobalModel::new(vec![3.0, 0.0]);
        assert_eq!(hinge_loss(&w, &s(&[1.0, 0.5], Label::Positive)).unwrap(), 0.0);

        let w = GlobalModel::new(vec![1.0, 1.0]);
        let v = hinge_loss(&w, &s(&[0.25, 0.25], Label::Positive)).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hinge_dimension_mismatch() {
        let w = GlobalModel::zeros(2);
        let err = hinge_loss(&w, &s(&[1.0], Label::Positive)).unwrap_err();
        assert_eq!(err, SvmError::DimensionMismatch { expected: 2, got: 1 });
    }

    #[test]
    fn transport_cost_examples() {
        let spec = TransportCostSpec { norm: NormKind::L1, kappa: 0.5 };
        let a = s(&[0.3, 0.1], Label::Positive);
        assert_eq!(transport_cost(&a, &a, &spec).unwrap(), 0.0);
        let b = s(&[0.3, 0.1], Label::Negative);
        assert_eq!(transport_cost(&a, &b, &spec).unwrap(), 0.5);
        let c = s(&[0.0, 0.0], Label::Positive);
        let d = s(&[0.3, 0.4], Label::Positive);
        assert!((transport_cost(&c, &d, &spec).unwrap() - 0.7).abs() < 1e-15);
        assert!(transport_cost(&c, &s(&[0.1], Label::Positive), &spec).is_err());
    }

    #[test]
    fn dual_norm_examples() {
        assert_eq!(dual_norm(&[0.0, 0.0], NormKind::L1), 0.0);
        assert_eq!(dual_norm(&[0.0, 0.0], NormKind::LInf), 0.0);
        assert_eq!(dual_norm(&[1.0, -2.0, 3.0], NormKind::L1), 3.0);
        assert_eq!(dual_norm(&[1.0, -2.0, 3.0], NormKind::LInf), 6.0);
        assert_eq!(NormKind::L1.dual().dual(), NormKind::L1);
    }

    #[test]
    fn zero_score_predicts_positive() {
        let w = GlobalModel::zeros(2);
        assert_eq!(w.predict(&[0.4, 0.4]), Label::Positive);
    }

    fn vec_strategy(p: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0f64..3.0, p)
    }

    fn label_strategy() -> impl Strategy<Value = Label> {
        prop_oneof![Just(Label::Negative), Just(Label::Positive)]
    }

    fn norm_strategy() -> impl Strategy<Value = NormKind> {
        prop_oneof![Just(NormKind::L1), Just(NormKind::LInf)]
    }

    proptest! {
        #[test]
        fn hinge_is_convex_in_w(w1 in vec_strategy(4), w2 in vec_strategy(4), x in vec_strategy(4),
                                y in label_strategy(), t in 0.0f64..=1.0) {
            let sample = s(&x, y);
            let mix: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| t * a + (1.0 - t) * b).collect();
            let lhs = hinge_loss(&GlobalModel::new(mix), &sample).unwrap();
            let rhs = t * hinge_loss(&GlobalModel::new(w1), &sample).unwrap()
                + (1.0 - t) * hinge_loss(&GlobalModel::new(w2), &sample).unwrap();
            prop_assert!(lhs <= rhs + 1e-12);
        }

        #[test]
        fn transport_cost_is_a_metric(xa in vec_strategy(3), xb in vec_strategy(3), xc in vec_strategy(3),
                                      ya in label_strategy(), yb in label_strategy(), yc in label_strategy(),
                                      norm in norm_strategy(), kappa in 0.0f64..2.0) {
            let spec = TransportCostSpec { norm, kappa };
            let (a, b, c) = (s(&xa, ya), s(&xb, yb), s(&xc, yc));
            let ab = transport_cost(&a, &b, &spec).unwrap();
            let ba = transport_cost(&b, &a, &spec).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert_eq!(transport_cost(&a, &a, &spec).unwrap(), 0.0);
            let ac = transport_cost(&a, &c, &spec).unwrap();
            let cb = transport_cost(&c, &b, &spec).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }

        #[test]
        fn dual_norm_bounds_pairing(v in vec_strategy(5), u in vec_strategy(5), norm in norm_strategy()) {
            let scale = norm.eval(&u);
            prop_assume!(scale > 1e-9);
            let unit: Vec<f64> = u.iter().map(|a| a / scale).collect();
            prop_assert!(dot(&unit, &v) <= dual_norm(&v, norm) + 1e-12);
        }
    }
}
