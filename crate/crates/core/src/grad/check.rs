//! Central finite-difference gradient checks.

use super::{Element, Graph, Result, Tensor, Var};

/// Largest disagreement between analytic and numeric gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / scale` over every input element.
    pub max_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: (usize, usize),
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `h`.
///
/// `f` records the function on a fresh graph given one leaf per input. The
/// error for each input is normalised by the larger of its analytic
/// gradient's max-norm and `floor`, which keeps the comparison meaningful
/// where individual entries are near zero.
pub fn check_gradients<T, F>(inputs: &[Tensor<T>], h: f64, floor: f64, f: F) -> Result<GradCheck>
where
    T: Element,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone().with_requires_grad(true))).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let eval = |inputs: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).values()[0].as_f64())
    };

    let mut report = GradCheck { max_error: 0.0, worst: (0, 0) };
    let mut probe = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match grads.wrt(v) {
            Some(t) => t.values().iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; inputs[i].len()],
        };
        let scale = analytic.iter().fold(floor, |m, a| m.max(a.abs()));
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].values()[j];
            let (hi, lo) = (x0 + T::lit(h), x0 - T::lit(h));
            probe[i].values_mut()[j] = hi;
            let up = eval(&probe)?;
            probe[i].values_mut()[j] = lo;
            let down = eval(&probe)?;
            probe[i].values_mut()[j] = x0;
            // The step actually taken, after rounding to T.
            let numeric = (up - down) / (hi.as_f64() - lo.as_f64());
            let err = (analytic[j] - numeric).abs() / scale;
            if err > report.max_error {
                report = GradCheck { max_error: err, worst: (i, j) };
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_wrong_gradient_is_caught() {
        let x = Tensor::<f64>::new(&[1, 1, 1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let w = Tensor::new(&[1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let ok = check_gradients(std::slice::from_ref(&x), 1e-6, 1e-8, |g, v| g.weighted_sum(v[0], &w)).unwrap();
        assert!(ok.max_error < 1e-8);
        // Using a different weight in the forward pass than the one the
        // perturbed evaluations see is impossible here, so instead compare a
        // function whose numeric slope differs: sum(relu(x)) at a kink.
        let kink = Tensor::<f64>::new(&[1, 1, 1, 1], vec![0.0]).unwrap();
        let bad = check_gradients(&[kink], 1e-6, 1e-8, |g, v| {
            let r = g.relu(v[0])?;
            g.sum(r)
        })
        .unwrap();
        assert!(bad.max_error > 0.4);
    }
}
