//! Central finite differences over [`ParamStore`] entries.
//!
//! This is the independent oracle for the tape gradients: it never touches the
//! backward pass, only repeated forward evaluations of a scalar function.

use crate::error::TensorError;
use crate::tape::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Central-difference gradient of `f` with respect to every coordinate of the
/// parameter `pid`: `(f(p + h) - f(p - h)) / (2h)` per coordinate.
///
/// `f` is evaluated with the store temporarily perturbed; the parameter is
/// restored before returning.
pub fn finite_diff_grad<F>(
    store: &mut ParamStore,
    pid: ParamId,
    step: f64,
    mut f: F,
) -> Result<Tensor, TensorError>
where
    F: FnMut(&ParamStore) -> Result<f64, TensorError>,
{
    if !(step > 0.0) {
        return Err(TensorError::InvalidArgument {
            op: "finite-diff",
            reason: format!("step must be positive, got {step}"),
        });
    }
    let n = store.get(pid).value.numel();
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let original = store.get(pid).value.data()[i];

        store.get_mut(pid).value.data_mut()[i] = original + step;
        let plus = f(store)?;
        store.get_mut(pid).value.data_mut()[i] = original - step;
        let minus = f(store)?;
        store.get_mut(pid).value.data_mut()[i] = original;

        if !plus.is_finite() || !minus.is_finite() {
            return Err(TensorError::NonFinite {
                context: format!("finite-diff probe at coordinate {i}"),
            });
        }
        grad[i] = (plus - minus) / (2.0 * step);
    }
    Tensor::new(store.get(pid).value.shape().to_vec(), grad)
}

/// Default probe step for [`finite_diff_grad`].
pub const DEFAULT_FD_STEP: f64 = 1e-5;
