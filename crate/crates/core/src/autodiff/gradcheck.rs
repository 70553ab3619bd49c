use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::Result;

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` receives a fresh tape and the leaf handles of `params` (in order) and
/// returns the scalar loss. Returns the largest `|g_ad - g_fd| / max(1, |g_fd|)`
/// over every element of every parameter that requires a gradient.
pub fn grad_check<F>(f: F, params: &mut [Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |params: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
        let loss = f(&mut tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter()
            .zip(params.iter())
            .map(|(v, p)| grads.get(*v).map_or_else(|| vec![0.0; p.numel()], <[f64]>::to_vec))
            .collect()
    };

    let mut worst = 0.0f64;
    for pi in 0..params.len() {
        if !params[pi].requires_grad {
            continue;
        }
        for ei in 0..params[pi].numel() {
            let orig = params[pi].data()[ei];
            params[pi].data_mut()[ei] = orig + epsilon;
            let up = eval(params)?;
            params[pi].data_mut()[ei] = orig - epsilon;
            let down = eval(params)?;
            params[pi].data_mut()[ei] = orig;
            let fd = (up - down) / (2.0 * epsilon);
            let err = (analytic[pi][ei] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
