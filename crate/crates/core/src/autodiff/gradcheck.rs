use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Parameters with more coordinates than this are checked on a random
    /// sample of this size.
    pub max_coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            max_coords_per_param: 128,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter name, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU or L1 kink.
    pub skipped: usize,
}

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` records a scalar loss on the tape it is given. A coordinate is left
/// out when either perturbed evaluation changes the sign pattern of any
/// ReLU input or L1 residual, so the difference quotient would straddle a
/// kink.
pub fn grad_check<F>(f: F, point: &mut ParamStore<f64>, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var>,
{
    let (grads, base_pattern) = {
        let mut tape = Tape::new(point);
        let loss = f(&mut tape)?;
        (tape.backward(loss)?, tape.kink_pattern())
    };

    let eval = |store: &ParamStore<f64>| -> Result<(f64, Vec<i8>)> {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        Ok((tape.value(loss).data()[0], tape.kink_pattern()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let ids: Vec<_> = point.ids().collect();
    for id in ids {
        let len = point.value(id).len();
        let coords: Vec<usize> = if len <= opts.max_coords_per_param {
            (0..len).collect()
        } else {
            let mut v = sample(&mut rng, len, opts.max_coords_per_param).into_vec();
            v.sort_unstable();
            v
        };
        for i in coords {
            let orig = point.value(id).data()[i];
            point.value_mut(id).data_mut()[i] = orig + opts.eps;
            let (plus, p_pat) = eval(point)?;
            point.value_mut(id).data_mut()[i] = orig - opts.eps;
            let (minus, m_pat) = eval(point)?;
            point.value_mut(id).data_mut()[i] = orig;

            if p_pat != base_pattern || m_pat != base_pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                let name = point.param(id).name.clone();
                report.worst = Some((name, i, analytic, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use crate::tensor::Tensor4;
    use rand::Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn linear_function_is_exact() {
        let mut s = ParamStore::new();
        s.insert("x", &[6], vec![0.3, -1.0, 2.0, 0.0, 4.0, -0.5]).unwrap();
        let id = s.id("x").unwrap();
        let report = grad_check(
            |tape| {
                let x = tape.param(id);
                let y = tape.scale(&x, 3.0);
                Ok(tape.sum(y))
            },
            &mut s,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.checked, 6);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn relu_kink_coordinate_excluded() {
        let mut s = ParamStore::new();
        s.insert("x", &[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let id = s.id("x").unwrap();
        let report = grad_check(
            |tape| {
                let x = tape.param(id);
                let y = tape.relu(&x);
                Ok(tape.sum(y))
            },
            &mut s,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.skipped, 1);
        assert_eq!(report.checked, 2);
        assert!(report.max_rel_error < 1e-9);
    }

    #[test]
    fn two_layer_conv_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut s = ParamStore::new();
        let w1 = s.insert("c1.weight", &[4, 2, 3, 3], random(&mut rng, 72)).unwrap();
        let b1 = s.insert("c1.bias", &[4], random(&mut rng, 4)).unwrap();
        let w2 = s.insert("c2.weight", &[1, 4, 3, 3], random(&mut rng, 36)).unwrap();
        let b2 = s.insert("c2.bias", &[1], random(&mut rng, 1)).unwrap();
        let input = Tensor4::from_vec([2, 2, 6, 6], random(&mut rng, 144)).unwrap();
        let target = Tensor4::from_vec([2, 1, 6, 6], random(&mut rng, 72)).unwrap();
        let report = grad_check(
            |tape| {
                let x = tape.constant(input.clone());
                let h = tape.conv2d(&x, w1, b1)?;
                let h = tape.relu(&h);
                let y = tape.conv2d(&h, w2, b2)?;
                let t = tape.constant(target.clone());
                tape.l1_loss(y, t)
            },
            &mut s,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.checked > 100, "{report:?}");
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}
