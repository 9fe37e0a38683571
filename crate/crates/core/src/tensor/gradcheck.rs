use super::{Result, Tape, Tensor, Var};

/// Outcome of [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Per input: `|g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|, 1e-6)`
    /// with Euclidean norms over the whole input.
    pub relative_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Fixed, sign-mixed weights used to reduce a non-scalar output to a scalar.
fn probe_weight(i: usize) -> f32 {
    0.3 + (1.7 * i as f32 + 0.4).sin()
}

fn scalarise(tape: &mut Tape, y: Var) -> Result<Var> {
    if tape.value(y).len() == 1 {
        return tape.sum(y);
    }
    let shape = tape.shape(y).to_vec();
    let w = tape.constant(Tensor::from_fn(shape, probe_weight));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn evaluate<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::inference();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = f(&mut tape, &vars)?;
    let s = scalarise(&mut tape, y)?;
    Ok(tape.value(s).item() as f64)
}

/// Compares reverse-mode gradients of `f` against central differences with
/// step `eps` on every element of every input. Non-scalar outputs are reduced
/// with fixed probe weights first.
pub fn check_gradients<F>(inputs: &[Tensor], eps: f32, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = f(&mut tape, &vars)?;
    let s = scalarise(&mut tape, y)?;
    let grads = tape.backward(s)?;

    let mut relative_errors = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(vars[k]) {
            Some(g) => g.data().iter().map(|&v| v as f64).collect(),
            None => vec![0.0; input.len()],
        };
        let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
        for (e, &ga) in analytic.iter().enumerate() {
            let x = input.data()[e];
            probe[k].data_mut()[e] = x + eps;
            let hi = evaluate(&probe, &f)?;
            probe[k].data_mut()[e] = x - eps;
            let lo = evaluate(&probe, &f)?;
            probe[k].data_mut()[e] = x;
            // The step actually taken, after f32 rounding of x ± eps.
            let h = (x + eps) as f64 - (x - eps) as f64;
            let gn = (hi - lo) / h;
            diff += (ga - gn).powi(2);
            na += ga * ga;
            nn += gn * gn;
        }
        relative_errors.push(diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-6));
    }
    Ok(GradCheck { relative_errors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_correct_and_wrong_gradients() {
        let x = Tensor::new([3], vec![0.3, -0.7, 1.1]).unwrap();
        let ok = check_gradients(std::slice::from_ref(&x), 1e-2, |t, v| t.square(v[0])).unwrap();
        assert!(ok.max_relative_error() < 1e-3, "{ok:?}");
        // Detaching hides the dependency, so the analytic gradient is zero.
        let bad = check_gradients(&[x], 1e-2, |t, v| {
            let d = t.detach(v[0]);
            t.square(d)
        })
        .unwrap();
        assert!(bad.max_relative_error() > 0.5);
    }
}
