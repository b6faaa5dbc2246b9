use rand_chacha::ChaCha8Rng;

use super::{nt_xent_loss, nt_xent_loss_grad, Encoder, EncoderError};

/// Largest relative error between analytic and finite-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `(parameter name, max relative error)` in parameter order.
    pub per_param: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    /// Max error over parameters whose name starts with `prefix`.
    pub fn max_error_for(&self, prefix: &str) -> f64 {
        self.per_param
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, e)| *e)
            .fold(0.0, f64::max)
    }
}

const H: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
const ERR_FLOOR: f64 = 1e-6;

/// Compares NT-Xent parameter gradients of `model` on the stacked `2B`-row
/// input `x` against central differences. Dropout is disabled.
pub fn gradient_check(
    model: &mut Encoder<f64>,
    x: &[f64],
    rows: usize,
    temperature: f64,
) -> Result<GradCheckReport, EncoderError> {
    let dim = model.embedding_dim();
    let loss_at = |m: &mut Encoder<f64>| -> Result<f64, EncoderError> {
        let (z, _) = m.forward_train::<ChaCha8Rng>(x, rows, None);
        nt_xent_loss(&z, dim, temperature)
    };

    model.zero_grad();
    let (z, cache) = model.forward_train::<ChaCha8Rng>(x, rows, None);
    let (_, dz) = nt_xent_loss_grad(&z, dim, temperature)?;
    model.backward(cache, &dz);
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.clone()).collect();

    let mut per_param = Vec::new();
    for (pi, grads) in analytic.iter().enumerate() {
        let name = model.params()[pi].name.clone();
        let mut worst = 0.0f64;
        for (j, &a) in grads.iter().enumerate() {
            let orig = model.params()[pi].value[j];
            model.params_mut()[pi].value[j] = orig + H;
            let up = loss_at(model)?;
            model.params_mut()[pi].value[j] = orig - H;
            let down = loss_at(model)?;
            model.params_mut()[pi].value[j] = orig;
            let numeric = (up - down) / (2.0 * H);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(ERR_FLOOR);
            worst = worst.max(err);
        }
        per_param.push((name, worst));
    }
    Ok(GradCheckReport { per_param })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::model::tests::tiny_arch;
    use crate::signal::SensorSet;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn four_filter_model_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let arch = tiny_arch(3, 40);
        let acc: SensorSet = "acc".parse().unwrap();
        let mut model = Encoder::<f64>::new(&arch, &acc, &mut rng).unwrap();
        let rows = 6;
        let x: Vec<f64> = (0..rows * 3 * 40).map(|_| StandardNormal.sample(&mut rng)).collect();
        let report = gradient_check(&mut model, &x, rows, 0.5).unwrap();
        assert!(report.max_error_for("conv") < 1e-4, "{report:?}");
        assert!(report.max_error_for("bn") < 1e-4, "{report:?}");
        assert!(report.max_error_for("proj") < 1e-4, "{report:?}");
    }
}
