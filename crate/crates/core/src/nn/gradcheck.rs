//! Central-difference gradient checking.

use super::{Mlp, MlpGrads};

/// `|a - n| / max(|a|, |n|, 1e-12)`, maximized over coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x0` with step `h`.
pub fn numeric_gradient(x0: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    assert!(h > 0.0, "step must be positive");
    let mut x = x0.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let plus = f(&x);
            x[i] = orig - h;
            let minus = f(&x);
            x[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Compares the analytic gradient returned by `loss` against central
/// differences of its value, over every parameter of `params`.
pub fn gradient_check(params: &Mlp, loss: impl Fn(&Mlp) -> (f64, MlpGrads), h: f64) -> f64 {
    let (_, analytic) = loss(params);
    let numeric = numeric_gradient(&params.to_flat(), h, |flat| {
        loss(
            &params
                .with_flat(flat)
                .expect("flat layout from the same network"),
        )
        .0
    });
    max_relative_error(&analytic.to_flat(), &numeric)
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::nn::Activation;
    use crate::rng::SeededRng;

    /// Mean squared error of a batch against fixed targets.
    fn mse_loss<'a>(
        x: &'a DMatrix<f64>,
        y: &'a DMatrix<f64>,
    ) -> impl Fn(&Mlp) -> (f64, MlpGrads) + 'a {
        move |net: &Mlp| {
            let trace = net.forward_batch(x.clone()).unwrap();
            let diff = trace.output() - y;
            let n = x.ncols() as f64;
            let loss = diff.norm_squared() / n;
            let (grads, _) = net.backward_batch(&trace, &(diff * (2.0 / n))).unwrap();
            (loss, grads)
        }
    }

    fn random_batch(rng: &mut SeededRng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.normal())
    }

    #[test]
    fn quadratic_loss_on_linear_net() {
        let mut rng = SeededRng::new(21);
        let net = Mlp::init(&[3, 2], &[Activation::Linear], &mut rng).unwrap();
        let x = random_batch(&mut rng, 3, 5);
        let y = random_batch(&mut rng, 2, 5);
        assert!(gradient_check(&net, mse_loss(&x, &y), 1e-5) < 1e-6);
    }

    #[test]
    fn zero_network_zero_loss() {
        let mut net = Mlp::init(&[2, 2], &[Activation::Linear], &mut SeededRng::new(0)).unwrap();
        net.layers_mut()[0].weights.fill(0.0);
        let x = DMatrix::zeros(2, 1);
        let y = DMatrix::zeros(2, 1);
        assert_eq!(gradient_check(&net, mse_loss(&x, &y), 1e-5), 0.0);
    }

    #[test]
    fn two_layer_relu_and_softmax_nets() {
        let mut rng = SeededRng::new(5);
        for acts in [
            [Activation::Relu, Activation::Linear],
            [Activation::Relu, Activation::Softmax],
        ] {
            let net = Mlp::init(&[4, 6, 3], &acts, &mut rng).unwrap();
            let x = random_batch(&mut rng, 4, 7);
            let y = random_batch(&mut rng, 3, 7);
            let err = gradient_check(&net, mse_loss(&x, &y), 1e-5);
            assert!(err < 1e-4, "{acts:?}: {err}");
        }
    }

    #[test]
    fn corrupted_backward_is_detected() {
        let mut rng = SeededRng::new(9);
        let net = Mlp::init(
            &[3, 4, 2],
            &[Activation::Relu, Activation::Linear],
            &mut rng,
        )
        .unwrap();
        let x = random_batch(&mut rng, 3, 4);
        let y = random_batch(&mut rng, 2, 4);
        let honest = mse_loss(&x, &y);
        let corrupted = |net: &Mlp| {
            let (loss, mut grads) = honest(net);
            grads.layers[1].1[0] *= 1.5;
            (loss, grads)
        };
        assert!(gradient_check(&net, corrupted, 1e-5) > 1e-2);
    }

    #[test]
    fn relative_error_formula() {
        assert_eq!(max_relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((max_relative_error(&[2.0], &[1.0]) - 0.5).abs() < 1e-15);
        assert_eq!(max_relative_error(&[1e-13], &[0.0]), 0.1);
    }
}
