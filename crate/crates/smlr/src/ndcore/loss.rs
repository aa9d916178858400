//! Loss functions over predicted score vectors.

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Supported losses. `MarginRamp` is the ramp surrogate of the 0/1 loss:
/// with margin `m = max_{j != y} v_j - v_y` it pays `0` for `m <= -gamma`,
/// `1 + m/gamma` on the linear segment, and `1` for `m >= 0`. The `m = 0`
/// boundary pays full loss so the surrogate stays above the 0/1 loss under
/// every tie-break.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    CrossEntropy,
    Mse,
    MarginRamp { gamma: f64 },
}

/// Targets are class indices for classification losses and a tensor of the
/// same shape as the outputs for MSE.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    Values(Tensor),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Labels(l) => l.len(),
            Targets::Values(t) => t.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn labels<'a>(targets: &'a Targets, kind: &LossKind) -> Result<&'a [usize]> {
    match targets {
        Targets::Labels(l) => Ok(l),
        Targets::Values(_) => Err(Error::TargetMismatch(format!(
            "{:?} needs class labels, got value targets",
            kind
        ))),
    }
}

fn values<'a>(targets: &'a Targets) -> Result<&'a Tensor> {
    match targets {
        Targets::Values(t) => Ok(t),
        Targets::Labels(_) => Err(Error::TargetMismatch(
            "Mse needs value targets, got class labels".into(),
        )),
    }
}

fn check_labels(labels: &[usize], batch: usize, classes: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::Dimension(format!(
            "{} labels for batch of {}",
            labels.len(),
            batch
        )));
    }
    for &y in labels {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "margin gamma must be positive and finite, got {gamma}"
        )))
    }
}

/// Index of the largest score, ties broken toward the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Largest score over `j != y`, ties toward the lowest index.
fn rival_argmax(row: &[f64], y: usize) -> usize {
    let mut best = usize::MAX;
    for (j, &v) in row.iter().enumerate() {
        if j == y {
            continue;
        }
        if best == usize::MAX || v > row[best] {
            best = j;
        }
    }
    best
}

/// Row-stabilized log-sum-exp.
fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Mean loss over the batch (MSE: mean over all output elements).
pub fn loss(kind: &LossKind, outputs: &Tensor, targets: &Targets) -> Result<f64> {
    let value = match kind {
        LossKind::CrossEntropy => {
            let labels = labels(targets, kind)?;
            let (batch, classes) = (outputs.rows(), outputs.cols());
            check_labels(labels, batch, classes)?;
            let mut total = 0.0;
            for (s, &y) in labels.iter().enumerate() {
                let row = &outputs.data()[s * classes..(s + 1) * classes];
                total += log_sum_exp(row) - row[y];
            }
            total / batch as f64
        }
        LossKind::Mse => {
            let t = values(targets)?;
            if !outputs.same_logical_shape(t) {
                return Err(Error::Dimension(format!(
                    "mse outputs {:?} vs targets {:?}",
                    outputs.shape(),
                    t.shape()
                )));
            }
            let n = outputs.len() as f64;
            outputs
                .data()
                .iter()
                .zip(t.data())
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>()
                / n
        }
        LossKind::MarginRamp { gamma } => {
            check_gamma(*gamma)?;
            let labels = labels(targets, kind)?;
            let (batch, classes) = (outputs.rows(), outputs.cols());
            check_labels(labels, batch, classes)?;
            if classes < 2 {
                return Err(Error::Dimension(
                    "margin loss needs at least 2 classes".into(),
                ));
            }
            let mut total = 0.0;
            for (s, &y) in labels.iter().enumerate() {
                let row = &outputs.data()[s * classes..(s + 1) * classes];
                let m = row[rival_argmax(row, y)] - row[y];
                total += ramp(m, *gamma);
            }
            total / batch as f64
        }
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite("loss value".into()))
    }
}

fn ramp(m: f64, gamma: f64) -> f64 {
    if m <= -gamma {
        0.0
    } else if m < 0.0 {
        1.0 + m / gamma
    } else {
        1.0
    }
}

/// Gradient of [`loss`] with respect to the outputs. MarginRamp uses the
/// subgradient `1/gamma` on the open linear segment and `0` elsewhere.
pub fn loss_gradient(kind: &LossKind, outputs: &Tensor, targets: &Targets) -> Result<Tensor> {
    let grad = match kind {
        LossKind::CrossEntropy => {
            let labels = labels(targets, kind)?;
            let (batch, classes) = (outputs.rows(), outputs.cols());
            check_labels(labels, batch, classes)?;
            let mut g = vec![0.0; outputs.len()];
            for (s, &y) in labels.iter().enumerate() {
                let row = &outputs.data()[s * classes..(s + 1) * classes];
                let lse = log_sum_exp(row);
                let grow = &mut g[s * classes..(s + 1) * classes];
                for (j, gj) in grow.iter_mut().enumerate() {
                    *gj = (row[j] - lse).exp() / batch as f64;
                }
                grow[y] -= 1.0 / batch as f64;
            }
            Tensor::new(outputs.shape().to_vec(), g)?
        }
        LossKind::Mse => {
            let t = values(targets)?;
            if !outputs.same_logical_shape(t) {
                return Err(Error::Dimension(format!(
                    "mse outputs {:?} vs targets {:?}",
                    outputs.shape(),
                    t.shape()
                )));
            }
            let n = outputs.len() as f64;
            let g: Vec<f64> = outputs
                .data()
                .iter()
                .zip(t.data())
                .map(|(o, t)| 2.0 * (o - t) / n)
                .collect();
            Tensor::new(outputs.shape().to_vec(), g)?
        }
        LossKind::MarginRamp { gamma } => {
            check_gamma(*gamma)?;
            let labels = labels(targets, kind)?;
            let (batch, classes) = (outputs.rows(), outputs.cols());
            check_labels(labels, batch, classes)?;
            if classes < 2 {
                return Err(Error::Dimension(
                    "margin loss needs at least 2 classes".into(),
                ));
            }
            let mut g = vec![0.0; outputs.len()];
            for (s, &y) in labels.iter().enumerate() {
                let row = &outputs.data()[s * classes..(s + 1) * classes];
                let rival = rival_argmax(row, y);
                let m = row[rival] - row[y];
                if -gamma < m && m < 0.0 {
                    let slope = 1.0 / (gamma * batch as f64);
                    g[s * classes + rival] += slope;
                    g[s * classes + y] -= slope;
                }
            }
            Tensor::new(outputs.shape().to_vec(), g)?
        }
    };
    grad.check_finite("loss gradient")?;
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(data: Vec<f64>) -> Tensor {
        Tensor::from_vec(data).unwrap()
    }

    #[test]
    fn mse_of_identical_tensors_is_zero() {
        let out = t1(vec![1.0, 2.0]);
        let v = loss(&LossKind::Mse, &out, &Targets::Values(out.clone())).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn margin_confident_correct_pays_zero() {
        // rival margin -5 is past -gamma.
        let v = loss(
            &LossKind::MarginRamp { gamma: 1.0 },
            &t1(vec![5.0, 0.0, 0.0]),
            &Targets::Labels(vec![0]),
        )
        .unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn margin_boundary_at_minus_gamma_pays_zero() {
        // v = [1,3,2], y = 1: rival max is 2, margin -1 == -gamma.
        let v = loss(
            &LossKind::MarginRamp { gamma: 1.0 },
            &t1(vec![1.0, 3.0, 2.0]),
            &Targets::Labels(vec![1]),
        )
        .unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn margin_zero_margin_tie_pays_full_loss() {
        // Exact tie between the label and a rival: m = 0, closed on the right.
        let v = loss(
            &LossKind::MarginRamp { gamma: 1.0 },
            &t1(vec![3.0, 3.0, 1.0]),
            &Targets::Labels(vec![1]),
        )
        .unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn margin_linear_segment_value_and_gradient() {
        let out = t1(vec![2.5, 3.0, 1.0]);
        let y = Targets::Labels(vec![1]);
        let kind = LossKind::MarginRamp { gamma: 1.0 };
        let v = loss(&kind, &out, &y).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        let g = loss_gradient(&kind, &out, &y).unwrap();
        assert_eq!(g.data(), &[1.0, -1.0, 0.0]);
    }

    #[test]
    fn cross_entropy_of_uniform_predictor_is_ln_c() {
        for c in [2usize, 3, 7, 10] {
            let out = Tensor::matrix(1, c, vec![0.25; c]).unwrap();
            let v = loss(&LossKind::CrossEntropy, &out, &Targets::Labels(vec![0])).unwrap();
            assert!(
                (v - (c as f64).ln()).abs() < 1e-12,
                "c={c}: {v} vs {}",
                (c as f64).ln()
            );
        }
    }

    #[test]
    fn cross_entropy_is_stable_for_huge_logits() {
        let out = t1(vec![1e9, 0.0]);
        let v = loss(&LossKind::CrossEntropy, &out, &Targets::Labels(vec![0])).unwrap();
        assert!(v >= 0.0 && v < 1e-9);
    }

    #[test]
    fn label_out_of_range_is_reported() {
        let out = t1(vec![0.0, 1.0]);
        let e = loss(&LossKind::CrossEntropy, &out, &Targets::Labels(vec![2]));
        assert!(matches!(e, Err(Error::LabelOutOfRange { label: 2, classes: 2 })));
    }

    #[test]
    fn target_kind_mismatch_is_reported() {
        let out = t1(vec![0.0, 1.0]);
        assert!(matches!(
            loss(&LossKind::Mse, &out, &Targets::Labels(vec![0])),
            Err(Error::TargetMismatch(_))
        ));
        assert!(matches!(
            loss(&LossKind::CrossEntropy, &out, &Targets::Values(out.clone())),
            Err(Error::TargetMismatch(_))
        ));
    }

    #[test]
    fn losses_are_nonnegative_on_random_inputs() {
        let mut rng = crate::stream::derive(3, &[0x10]);
        use rand::Rng;
        for _ in 0..200 {
            let c = rng.random_range(2..6);
            let row: Vec<f64> = (0..c).map(|_| rng.random_range(-4.0..4.0)).collect();
            let y = rng.random_range(0..c);
            let out = Tensor::matrix(1, c, row.clone()).unwrap();
            let labels = Targets::Labels(vec![y]);
            assert!(loss(&LossKind::CrossEntropy, &out, &labels).unwrap() >= 0.0);
            assert!(loss(&LossKind::MarginRamp { gamma: 0.7 }, &out, &labels).unwrap() >= 0.0);
            let tgt = Tensor::matrix(1, c, vec![0.0; c]).unwrap();
            assert!(loss(&LossKind::Mse, &out, &Targets::Values(tgt)).unwrap() >= 0.0);
        }
    }

    #[test]
    fn margin_dominates_binary_loss() {
        let mut rng = crate::stream::derive(4, &[0x11]);
        use rand::Rng;
        for _ in 0..500 {
            let c = rng.random_range(2..6);
            let row: Vec<f64> = (0..c).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = rng.random_range(0..c);
            let out = Tensor::matrix(1, c, row.clone()).unwrap();
            let surrogate = loss(
                &LossKind::MarginRamp { gamma: 0.5 },
                &out,
                &Targets::Labels(vec![y]),
            )
            .unwrap();
            let binary = if argmax(&row) == y { 0.0 } else { 1.0 };
            assert!(surrogate >= binary, "row {row:?} y {y}");
        }
    }
}
