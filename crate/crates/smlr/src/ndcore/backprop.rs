//! Exact reverse-mode gradients, the central-difference oracle, and SGD.

use crate::error::{Error, Result};

use super::loss::{loss, loss_gradient, LossKind, Targets};
use super::network::{GradientSet, LayerSpec, Network};
use super::tensor::Tensor;

/// Mean loss and its exact gradient w.r.t. every weight and bias.
pub fn backward(
    net: &Network,
    inputs: &Tensor,
    targets: &Targets,
    kind: &LossKind,
) -> Result<(f64, GradientSet)> {
    let (acts, _) = net.forward_cached(inputs)?;
    let outputs = acts.last().expect("activations include the output");
    let loss_value = loss(kind, outputs, targets)?;
    let mut grad = loss_gradient(kind, outputs, targets)?;

    let mut grads = net.zero_gradients();
    let mut linear_idx = net.layer_count();
    for (pos, spec) in net.specs().iter().enumerate().rev() {
        let x = &acts[pos];
        match spec {
            LayerSpec::Linear { in_dim, out_dim } => {
                linear_idx -= 1;
                let batch = x.rows();
                let w = net.weights()[linear_idx].data();
                let dw = grads.d_weights[linear_idx].data_mut();
                let gd = grad.data();
                let xd = x.data();
                for s in 0..batch {
                    let grow = &gd[s * out_dim..(s + 1) * out_dim];
                    let xrow = &xd[s * in_dim..(s + 1) * in_dim];
                    for (o, &g) in grow.iter().enumerate() {
                        let wrow = &mut dw[o * in_dim..(o + 1) * in_dim];
                        for i in 0..*in_dim {
                            wrow[i] = g.mul_add(xrow[i], wrow[i]);
                        }
                    }
                }
                let db = grads.d_biases[linear_idx].data_mut();
                for s in 0..batch {
                    let grow = &gd[s * out_dim..(s + 1) * out_dim];
                    for (o, &g) in grow.iter().enumerate() {
                        db[o] += g;
                    }
                }
                let mut dx = vec![0.0; batch * in_dim];
                for s in 0..batch {
                    let grow = &gd[s * out_dim..(s + 1) * out_dim];
                    let xrow = &mut dx[s * in_dim..(s + 1) * in_dim];
                    for (o, &g) in grow.iter().enumerate() {
                        let wrow = &w[o * in_dim..(o + 1) * in_dim];
                        for i in 0..*in_dim {
                            xrow[i] = g.mul_add(wrow[i], xrow[i]);
                        }
                    }
                }
                grad = Tensor::matrix(batch, *in_dim, dx)?;
            }
            LayerSpec::Relu => {
                let data: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
                    .collect();
                grad = Tensor::new(grad.shape().to_vec(), data)?;
            }
        }
    }
    for t in grads.d_weights.iter().chain(grads.d_biases.iter()) {
        t.check_finite("backward gradient")?;
    }
    Ok((loss_value, grads))
}

/// Central-difference gradient estimate, parameter by parameter:
/// `(loss(theta + step e_i) - loss(theta - step e_i)) / (2 step)`.
///
/// Independent of [`backward`]: it only composes the forward pass with the
/// loss, which is what makes it usable as a gradient oracle.
pub fn finite_diff_grad(
    net: &Network,
    inputs: &Tensor,
    targets: &Targets,
    kind: &LossKind,
    step: f64,
) -> Result<GradientSet> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "finite difference step must be positive, got {step}"
        )));
    }
    fn param_mut(n: &mut Network, weight: bool, li: usize, i: usize) -> &mut f64 {
        if weight {
            &mut n.weights_mut()[li].data_mut()[i]
        } else {
            &mut n.biases_mut()[li].data_mut()[i]
        }
    }

    let mut grads = net.zero_gradients();
    let mut probe = net.clone();
    let layer_count = net.layer_count();
    for li in 0..layer_count {
        for weight in [true, false] {
            let len = if weight {
                net.weights()[li].len()
            } else {
                net.biases()[li].len()
            };
            for i in 0..len {
                let orig = *param_mut(&mut probe, weight, li, i);
                *param_mut(&mut probe, weight, li, i) = orig + step;
                let plus = loss(kind, &probe.forward(inputs)?, targets)?;
                *param_mut(&mut probe, weight, li, i) = orig - step;
                let minus = loss(kind, &probe.forward(inputs)?, targets)?;
                *param_mut(&mut probe, weight, li, i) = orig;
                let g = (plus - minus) / (2.0 * step);
                if weight {
                    grads.d_weights[li].data_mut()[i] = g;
                } else {
                    grads.d_biases[li].data_mut()[i] = g;
                }
            }
        }
    }
    for t in grads.d_weights.iter().chain(grads.d_biases.iter()) {
        t.check_finite("finite difference gradient")?;
    }
    Ok(grads)
}

/// One SGD step: every parameter becomes `param - lr * grad`. Pure.
pub fn sgd_step(net: &Network, grads: &GradientSet, lr: f64) -> Result<Network> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    grads.check_congruent(net)?;
    let mut out = net.clone();
    for (w, g) in out.weights_mut().iter_mut().zip(&grads.d_weights) {
        for (p, &d) in w.data_mut().iter_mut().zip(g.data()) {
            *p -= lr * d;
        }
    }
    for (b, g) in out.biases_mut().iter_mut().zip(&grads.d_biases) {
        for (p, &d) in b.data_mut().iter_mut().zip(g.data()) {
            *p -= lr * d;
        }
    }
    for t in out.weights().iter().chain(out.biases().iter()) {
        t.check_finite("sgd_step output")?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream;
    use rand::Rng;

    /// f(x) = w*x + b with w=3, b=0.
    fn scalar_net(w: f64) -> Network {
        Network::from_parts(
            vec![LayerSpec::Linear { in_dim: 1, out_dim: 1 }],
            vec![Tensor::matrix(1, 1, vec![w]).unwrap()],
            vec![Tensor::from_vec(vec![0.0]).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn hand_chain_rule_on_scalar_net() {
        let net = scalar_net(3.0);
        let x = Tensor::from_vec(vec![1.0]).unwrap();
        let y = Targets::Values(Tensor::from_vec(vec![0.0]).unwrap());
        let (l, g) = backward(&net, &x, &y, &LossKind::Mse).unwrap();
        assert_eq!(l, 9.0);
        assert_eq!(g.d_weights[0].data(), &[6.0]);
        assert_eq!(g.d_biases[0].data(), &[6.0]);
    }

    #[test]
    fn zero_learning_signal_gives_zero_gradients() {
        let mut rng = stream::derive(5, &[stream::tag::INIT]);
        let net = Network::mlp(3, &[4], 2, &mut rng).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, -0.4, 0.7, 0.2, 0.0, -0.3]).unwrap();
        let outputs = net.forward(&x).unwrap();
        let (l, g) = backward(&net, &x, &Targets::Values(outputs), &LossKind::Mse).unwrap();
        assert_eq!(l, 0.0);
        for t in g.d_weights.iter().chain(g.d_biases.iter()) {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn finite_diff_matches_quadratic_exactly() {
        let net = scalar_net(3.0);
        let x = Tensor::from_vec(vec![1.0]).unwrap();
        let y = Targets::Values(Tensor::from_vec(vec![0.0]).unwrap());
        let g = finite_diff_grad(&net, &x, &y, &LossKind::Mse, 1e-6).unwrap();
        assert!((g.d_weights[0].data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_near_zero_gradient() {
        let mut rng = stream::derive(6, &[stream::tag::INIT]);
        let net = Network::mlp(2, &[3], 2, &mut rng).unwrap();
        let x = Tensor::matrix(1, 2, vec![0.3, -0.2]).unwrap();
        let outputs = net.forward(&x).unwrap();
        let g = finite_diff_grad(&net, &x, &Targets::Values(outputs), &LossKind::Mse, 1e-6).unwrap();
        for t in g.d_weights.iter().chain(g.d_biases.iter()) {
            for &v in t.data() {
                assert!(v.abs() < 1e-9, "residual {v}");
            }
        }
    }

    /// Relative-error agreement with an absolute guard near zero.
    fn grads_close(a: &GradientSet, b: &GradientSet, rel: f64, abs: f64) -> bool {
        let pairs = a
            .d_weights
            .iter()
            .zip(&b.d_weights)
            .chain(a.d_biases.iter().zip(&b.d_biases));
        for (ta, tb) in pairs {
            for (&x, &y) in ta.data().iter().zip(tb.data()) {
                let diff = (x - y).abs();
                if diff > abs && diff > rel * x.abs().max(y.abs()) {
                    return false;
                }
            }
        }
        true
    }

    /// Smallest distance of any ReLU pre-activation (or ramp margin) to its
    /// kink, so near-nondifferentiable cases can be skipped.
    fn kink_distance(net: &Network, x: &Tensor, targets: &Targets, kind: &LossKind) -> f64 {
        let (acts, _) = net.forward_cached(x).unwrap();
        let mut dist = f64::INFINITY;
        for (pos, spec) in net.specs().iter().enumerate() {
            if matches!(spec, LayerSpec::Relu) {
                for &z in acts[pos].data() {
                    dist = dist.min(z.abs());
                }
            }
        }
        if let (LossKind::MarginRamp { gamma }, Targets::Labels(ys)) = (kind, targets) {
            let out = acts.last().unwrap();
            let c = out.cols();
            for (s, &y) in ys.iter().enumerate() {
                let row = &out.data()[s * c..(s + 1) * c];
                let mut rival = f64::NEG_INFINITY;
                for (j, &v) in row.iter().enumerate() {
                    if j != y {
                        rival = rival.max(v);
                    }
                }
                let m: f64 = rival - row[y];
                dist = dist.min(m.abs()).min((m + gamma).abs());
                // A near-tie among rivals is a kink of max_{j != y}.
                let mut sorted: Vec<f64> = row
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != y)
                    .map(|(_, &v)| v)
                    .collect();
                sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if sorted.len() >= 2 {
                    dist = dist.min(sorted[0] - sorted[1]);
                }
            }
        }
        dist
    }

    #[test]
    fn backward_matches_finite_differences_on_random_nets() {
        let mut rng = stream::derive(7, &[0x20]);
        let kinds = [
            LossKind::CrossEntropy,
            LossKind::Mse,
            LossKind::MarginRamp { gamma: 1.0 },
        ];
        let mut checked = 0;
        let mut attempt = 0;
        while checked < 12 {
            attempt += 1;
            assert!(attempt < 200, "too many kink-adjacent draws");
            let hidden = rng.random_range(2..6);
            let classes = rng.random_range(2..5);
            let batch = rng.random_range(1..6);
            let net = Network::mlp(3, &[hidden], classes, &mut rng).unwrap();
            let x = Tensor::matrix(
                batch,
                3,
                (0..batch * 3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let kind = kinds[attempt % kinds.len()];
            let targets = match kind {
                LossKind::Mse => Targets::Values(
                    Tensor::matrix(
                        batch,
                        classes,
                        (0..batch * classes)
                            .map(|_| rng.random_range(-1.0..1.0))
                            .collect(),
                    )
                    .unwrap(),
                ),
                _ => Targets::Labels((0..batch).map(|_| rng.random_range(0..classes)).collect()),
            };
            if kink_distance(&net, &x, &targets, &kind) < 1e-4 {
                continue;
            }
            let (_, analytic) = backward(&net, &x, &targets, &kind).unwrap();
            let numeric = finite_diff_grad(&net, &x, &targets, &kind, 1e-6).unwrap();
            assert!(
                grads_close(&analytic, &numeric, 1e-6, 1e-9),
                "gradient mismatch for {kind:?}"
            );
            checked += 1;
        }
    }

    #[test]
    fn sgd_step_examples() {
        let net = scalar_net(2.0);
        let grads = GradientSet {
            d_weights: vec![Tensor::matrix(1, 1, vec![4.0]).unwrap()],
            d_biases: vec![Tensor::from_vec(vec![0.0]).unwrap()],
        };
        let stepped = sgd_step(&net, &grads, 0.5).unwrap();
        assert_eq!(stepped.weights()[0].data(), &[0.0]);

        let zero = net.zero_gradients();
        let same = sgd_step(&net, &zero, 0.5).unwrap();
        assert_eq!(same, net);

        let net2 = Network::from_parts(
            vec![LayerSpec::Linear { in_dim: 2, out_dim: 1 }],
            vec![Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap()],
            vec![Tensor::from_vec(vec![0.0]).unwrap()],
        )
        .unwrap();
        let grads2 = GradientSet {
            d_weights: vec![Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap()],
            d_biases: vec![Tensor::from_vec(vec![0.0]).unwrap()],
        };
        let stepped2 = sgd_step(&net2, &grads2, 0.001).unwrap();
        assert_eq!(stepped2.weights()[0].data(), &[0.999, 1.001]);
    }

    #[test]
    fn sgd_step_rejects_bad_lr_and_shapes() {
        let net = scalar_net(1.0);
        let zero = net.zero_gradients();
        assert!(matches!(
            sgd_step(&net, &zero, 0.0),
            Err(Error::InvalidArgument(_))
        ));
        let bad = GradientSet {
            d_weights: vec![Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap()],
            d_biases: vec![Tensor::from_vec(vec![0.0]).unwrap()],
        };
        assert!(matches!(sgd_step(&net, &bad, 0.1), Err(Error::Dimension(_))));
    }

    #[test]
    fn backward_is_bitwise_deterministic() {
        let mut rng = stream::derive(8, &[0x21]);
        let net = Network::mlp(4, &[6, 5], 3, &mut rng).unwrap();
        let x = Tensor::matrix(3, 4, (0..12).map(|i| (i as f64) * 0.17 - 1.0).collect()).unwrap();
        let y = Targets::Labels(vec![0, 2, 1]);
        let (l1, g1) = backward(&net, &x, &y, &LossKind::CrossEntropy).unwrap();
        let (l2, g2) = backward(&net, &x, &y, &LossKind::CrossEntropy).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
    }
}
