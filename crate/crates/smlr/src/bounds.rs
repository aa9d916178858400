//! Closed-form generalization-gap bounds for dense and sparse
//! meta-initializations, with explicit constants.
//!
//! Both gap bounds share one Hoeffding-plus-covering skeleton, evaluated at
//! discretization scale `eps = B / sqrt(M)`:
//!
//! `gap(C) = 2B/sqrt(M) + sqrt(2) B sqrt((ln(1/delta) + C) / M)`
//!
//! where `C` is the log capacity of the hypothesis class. The dense bound
//! uses `C = p * max(0, ln(sqrt(M) G R (1 + eta H) / B))`; the sparse bound
//! replaces `p` by the keep budget `k` and adds the log cardinality of the
//! k-of-p support family, `k ln(e p / k)`, from the union over supports.
//! Covering-number logarithms are clamped at zero since a covering number
//! is at least one. Natural logarithms throughout.

use crate::error::{Error, Result};

/// Inputs to the gap bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    /// Uniform loss bound B (> 0).
    pub loss_bound: f64,
    /// Lipschitz constant G of the loss in the parameters (> 0).
    pub lipschitz: f64,
    /// Smoothness constant H (>= 0).
    pub smoothness: f64,
    /// Radius R of the parameter domain (> 0).
    pub radius: f64,
    /// Inner-loop learning rate eta (>= 0).
    pub inner_lr: f64,
    /// Total parameter count p (>= 1).
    pub params: usize,
    /// Total keep budget k (1 <= k <= p).
    pub sparsity: usize,
    /// Number of training tasks M (>= 1).
    pub tasks: usize,
    /// Confidence parameter delta in (0, 1).
    pub delta: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        pos("loss_bound", self.loss_bound)?;
        pos("lipschitz", self.lipschitz)?;
        pos("radius", self.radius)?;
        if !(self.smoothness >= 0.0 && self.smoothness.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "smoothness must be nonnegative, got {}",
                self.smoothness
            )));
        }
        if !(self.inner_lr >= 0.0 && self.inner_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "inner_lr must be nonnegative, got {}",
                self.inner_lr
            )));
        }
        if self.params == 0 {
            return Err(Error::InvalidArgument("params must be >= 1".into()));
        }
        if self.sparsity == 0 || self.sparsity > self.params {
            return Err(Error::InvalidArgument(format!(
                "sparsity must be in 1..={}, got {}",
                self.params, self.sparsity
            )));
        }
        if self.tasks == 0 {
            return Err(Error::InvalidArgument("tasks must be >= 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "delta must be in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Lipschitz constant of the task-level loss after one inner gradient step:
/// `G (1 + eta H)`.
pub fn task_lipschitz(lipschitz: f64, inner_lr: f64, smoothness: f64) -> f64 {
    lipschitz * (1.0 + inner_lr * smoothness)
}

/// Log of the covering-number bound `(1 + R/eps)^p` for a radius-R ball in
/// `p` dimensions at scale `eps`.
pub fn covering_log_bound(params: usize, radius: f64, eps: f64) -> Result<f64> {
    if params == 0 {
        return Err(Error::InvalidArgument("params must be >= 1".into()));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "radius must be positive, got {radius}"
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )));
    }
    Ok(params as f64 * (1.0 + radius / eps).ln())
}

/// Log cardinality bound of the k-of-p support family:
/// `ln C(p, k) <= k ln(e p / k)`.
pub fn support_cardinality_log(params: usize, sparsity: usize) -> Result<f64> {
    if params == 0 || sparsity == 0 || sparsity > params {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k <= p, got k={sparsity}, p={params}"
        )));
    }
    let (p, k) = (params as f64, sparsity as f64);
    Ok(k * (std::f64::consts::E * p / k).ln())
}

/// Clamped per-dimension covering log at the bound's own scale
/// `eps = B / sqrt(M)`: `max(0, ln(sqrt(M) G R (1 + eta H) / B))`.
fn clamped_cover_log(inputs: &BoundInputs) -> f64 {
    let m = inputs.tasks as f64;
    let arg = m.sqrt() * task_lipschitz(inputs.lipschitz, inputs.inner_lr, inputs.smoothness)
        * inputs.radius
        / inputs.loss_bound;
    arg.ln().max(0.0)
}

/// The shared Hoeffding-plus-covering skeleton at log capacity `C`:
/// `2B/sqrt(M) + sqrt(2) B sqrt((ln(1/delta) + C) / M)`.
pub fn gap_from_log_capacity(inputs: &BoundInputs, log_capacity: f64) -> Result<f64> {
    inputs.validate()?;
    if !(log_capacity >= 0.0 && log_capacity.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "log capacity must be nonnegative, got {log_capacity}"
        )));
    }
    let b = inputs.loss_bound;
    let m = inputs.tasks as f64;
    let tail = ((1.0 / inputs.delta).ln() + log_capacity) / m;
    Ok(2.0 * b / m.sqrt() + std::f64::consts::SQRT_2 * b * tail.sqrt())
}

/// Gap bound for dense networks: log capacity `p * clamped_cover_log`.
pub fn dense_gap_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    gap_from_log_capacity(inputs, inputs.params as f64 * clamped_cover_log(inputs))
}

/// Gap bound for k-sparse networks: the dense capacity with `p` replaced by
/// `k`, plus the support-family union term `k ln(e p / k)`.
pub fn sparse_gap_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let capacity = inputs.sparsity as f64 * clamped_cover_log(inputs)
        + support_cardinality_log(inputs.params, inputs.sparsity)?;
    gap_from_log_capacity(inputs, capacity)
}

/// Sparse bound with the union-over-supports term removed; at `k == p` this
/// coincides with [`dense_gap_bound`], which pins the two formulas together.
pub fn sparse_gap_bound_without_union(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    gap_from_log_capacity(inputs, inputs.sparsity as f64 * clamped_cover_log(inputs))
}

/// Margin-risk bound: empirical margin risk plus the sparse gap.
pub fn margin_risk_bound(inputs: &BoundInputs, empirical_margin_risk: f64) -> Result<f64> {
    inputs.validate()?;
    if !(0.0..=inputs.loss_bound).contains(&empirical_margin_risk) {
        return Err(Error::InvalidArgument(format!(
            "empirical margin risk must be in [0, {}], got {}",
            inputs.loss_bound, empirical_margin_risk
        )));
    }
    Ok(empirical_margin_risk + sparse_gap_bound(inputs)?)
}

/// Exact `ln C(p, k)` for small `p`, used to verify the cardinality bound.
pub fn exact_binomial_log(params: usize, sparsity: usize) -> Result<f64> {
    if params == 0 || sparsity > params || params > 60 {
        return Err(Error::InvalidArgument(format!(
            "exact binomial supports 1 <= p <= 60 and k <= p, got p={params}, k={sparsity}"
        )));
    }
    let mut c: u128 = 1;
    for i in 0..sparsity {
        c = c * (params - i) as u128 / (i + 1) as u128;
    }
    Ok((c as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> BoundInputs {
        BoundInputs {
            loss_bound: 1.0,
            lipschitz: 1.0,
            smoothness: 1.0,
            radius: 1.0,
            inner_lr: 0.0,
            params: 1,
            sparsity: 1,
            tasks: 100,
            delta: (-1.0f64).exp(),
        }
    }

    #[test]
    fn task_lipschitz_values() {
        assert_eq!(task_lipschitz(1.0, 0.0, 5.0), 1.0);
        assert_eq!(task_lipschitz(2.0, 0.5, 2.0), 4.0);
        assert!((task_lipschitz(1.0, 0.001, 1.0) - 1.001).abs() < 1e-15);
    }

    #[test]
    fn covering_log_values() {
        assert!((covering_log_bound(2, 1.0, 1.0).unwrap() - 2.0 * 2.0f64.ln()).abs() < 1e-12);
        assert!(covering_log_bound(5, 1.0, 1e9).unwrap() < 1e-8);
        assert!((covering_log_bound(1, 9.0, 1.0).unwrap() - 10.0f64.ln()).abs() < 1e-12);
        assert!(covering_log_bound(1, 1.0, 0.0).is_err());
    }

    #[test]
    fn support_cardinality_values() {
        assert!((support_cardinality_log(4, 4).unwrap() - 4.0).abs() < 1e-12);
        let expected = 1.0 + 10.0f64.ln();
        assert!((support_cardinality_log(10, 1).unwrap() - expected).abs() < 1e-12);
        // Dominates the exact binomial.
        let loose = support_cardinality_log(10, 3).unwrap();
        let exact = exact_binomial_log(10, 3).unwrap();
        assert!((exact - 120.0f64.ln()).abs() < 1e-12);
        assert!(loose >= exact);
        assert!(support_cardinality_log(3, 4).is_err());
    }

    #[test]
    fn dense_bound_reference_value() {
        // 0.2 + sqrt(2) * sqrt((1 + ln 10) / 100), evaluated independently below.
        let v = dense_gap_bound(&inputs()).unwrap();
        let expected = 0.2 + std::f64::consts::SQRT_2 * ((1.0 + 10.0f64.ln()) / 100.0).sqrt();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.45701).abs() < 1e-4);
    }

    #[test]
    fn sparse_and_dense_reference_values_at_p_10() {
        let sparse_in = BoundInputs {
            params: 10,
            sparsity: 1,
            ..inputs()
        };
        let sparse = sparse_gap_bound(&sparse_in).unwrap();
        let expected =
            0.2 + std::f64::consts::SQRT_2
                * ((1.0 + (1.0 + 10.0f64.ln()) + 10.0f64.ln()) / 100.0).sqrt();
        assert!((sparse - expected).abs() < 1e-15);
        assert!((sparse - 0.56346).abs() < 1e-4);

        let dense_in = BoundInputs {
            params: 10,
            sparsity: 10,
            ..inputs()
        };
        let dense = dense_gap_bound(&dense_in).unwrap();
        assert!((dense - 0.89319).abs() < 1e-4);
        assert!(sparse < dense);
    }

    #[test]
    fn union_term_is_pure_overhead_at_k_equals_p() {
        let both = BoundInputs {
            params: 10,
            sparsity: 10,
            ..inputs()
        };
        assert!(sparse_gap_bound(&both).unwrap() >= dense_gap_bound(&both).unwrap());
    }

    #[test]
    fn clamp_keeps_the_log_term_at_zero() {
        let clamp_in = BoundInputs {
            loss_bound: 100.0,
            tasks: 1,
            ..inputs()
        };
        // ln(sqrt(1) * 1 * 1 * 1 / 100) < 0, so only the delta term remains.
        let v = dense_gap_bound(&clamp_in).unwrap();
        let expected = 200.0 + std::f64::consts::SQRT_2 * 100.0 * 1.0f64.sqrt();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn sparse_without_union_matches_dense_at_k_equals_p() {
        for p in [1usize, 3, 17, 240] {
            let both = BoundInputs {
                params: p,
                sparsity: p,
                tasks: 50,
                ..inputs()
            };
            let a = sparse_gap_bound_without_union(&both).unwrap();
            let b = dense_gap_bound(&both).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_in_sparsity_and_tasks() {
        let base = BoundInputs {
            params: 40,
            tasks: 200,
            ..inputs()
        };
        let mut prev = 0.0;
        for k in 1..=40 {
            let v = sparse_gap_bound(&BoundInputs { sparsity: k, ..base }).unwrap();
            assert!(v >= prev, "k={k}: {v} < {prev}");
            prev = v;
        }
        let small_m = dense_gap_bound(&BoundInputs { tasks: 100, ..base }).unwrap();
        let big_m = dense_gap_bound(&BoundInputs {
            tasks: 1_000_000,
            ..base
        })
        .unwrap();
        assert!(big_m < small_m);
    }

    #[test]
    fn cardinality_dominates_exact_binomial_up_to_30() {
        for p in 1..=30usize {
            for k in 1..=p {
                let loose = support_cardinality_log(p, k).unwrap();
                let exact = exact_binomial_log(p, k).unwrap();
                assert!(loose >= exact, "p={p} k={k}: {loose} < {exact}");
            }
        }
    }

    #[test]
    fn margin_bound_is_additive() {
        let sparse_in = BoundInputs {
            params: 10,
            sparsity: 1,
            ..inputs()
        };
        let gap = sparse_gap_bound(&sparse_in).unwrap();
        assert_eq!(margin_risk_bound(&sparse_in, 0.0).unwrap(), gap);
        let v = margin_risk_bound(&sparse_in, 0.3).unwrap();
        assert!((v - (0.3 + gap)).abs() < 1e-15);
        assert!((v - 0.86346).abs() < 1e-4);
        assert!(v >= 0.3);
        assert!(margin_risk_bound(&sparse_in, 1.5).is_err());
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(BoundInputs { delta: 0.0, ..inputs() }.validate().is_err());
        assert!(BoundInputs { delta: 1.0, ..inputs() }.validate().is_err());
        assert!(BoundInputs { loss_bound: 0.0, ..inputs() }.validate().is_err());
        assert!(BoundInputs {
            params: 3,
            sparsity: 4,
            ..inputs()
        }
        .validate()
        .is_err());
        assert!(BoundInputs { tasks: 0, ..inputs() }.validate().is_err());
    }
}
