use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// One scalar entry of a parameter tensor.
pub type ParamCoord = (ParamId, usize);

fn relative_error(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / fd.abs().max(1.0)
}

/// Compares tape gradients of a scalar function of `x` against central
/// differences. Returns `max |g_ad − g_fd| / max(1, |g_fd|)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    assert!(h > 0.0, "step must be positive");
    let probe = x.clone().with_requires_grad(true);
    let mut tape = Tape::new();
    let xv = tape.leaf(&probe);
    let loss = f(&mut tape, xv)?;
    let grads = tape.backward(loss)?;
    let ad = grads.get(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(t);
        let out = f(&mut tape, v)?;
        Ok(tape.scalar(out))
    };
    let mut worst: f64 = 0.0;
    let mut shifted = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        shifted.data_mut()[i] = orig + h;
        let up = eval(&shifted)?;
        shifted.data_mut()[i] = orig - h;
        let down = eval(&shifted)?;
        shifted.data_mut()[i] = orig;
        worst = worst.max(relative_error(ad[i], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

/// Same check over parameters of a model. `coords` restricts the probed
/// entries; `None` probes every entry of every parameter.
pub fn finite_diff_check_params<F>(f: F, store: &ParamStore, h: f64, coords: Option<&[ParamCoord]>) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    assert!(h > 0.0, "step must be positive");
    let mut with_grads = store.clone();
    with_grads.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, &with_grads)?;
    tape.backward_into(loss, &mut with_grads)?;

    let all: Vec<ParamCoord>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = store
                .iter()
                .flat_map(|(id, _, t)| (0..t.len()).map(move |i| (id, i)))
                .collect();
            &all
        }
    };

    let mut shifted = store.clone();
    let mut worst: f64 = 0.0;
    for &(id, i) in coords {
        let ad = with_grads.get(id).grad().map_or(0.0, |g| g[i]);
        let orig = store.get(id).data()[i];
        let mut eval = |value: f64| -> Result<f64> {
            shifted.get_mut(id).data_mut()[i] = value;
            let mut tape = Tape::new();
            let out = f(&mut tape, &shifted)?;
            Ok(tape.scalar(out))
        };
        let up = eval(orig + h)?;
        let down = eval(orig - h)?;
        shifted.get_mut(id).data_mut()[i] = orig;
        worst = worst.max(relative_error(ad, (up - down) / (2.0 * h)));
    }
    Ok(worst)
}
