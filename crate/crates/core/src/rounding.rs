//! Stochastic rounding onto a uniform grid.
//!
//! Emulates reduced-precision storage: a value is rounded down or up to the
//! nearest grid point with probabilities proportional to the opposite
//! distances, so the rounded value is unbiased in expectation.

use rand::Rng;

use crate::error::TensorError;

/// Round `x` onto the grid `{k * grid_step}`.
///
/// Returns the lower grid point with probability `(up - x) / grid_step`, the
/// upper one otherwise; exact grid points pass through unchanged, so
/// `E[result] = x`.
pub fn stochastic_round<R: Rng>(x: f64, grid_step: f64, rng: &mut R) -> Result<f64, TensorError> {
    if !x.is_finite() {
        return Err(TensorError::NonFinite {
            context: "stochastic_round input".into(),
        });
    }
    if !(grid_step > 0.0) {
        return Err(TensorError::InvalidArgument {
            op: "stochastic-round",
            reason: format!("grid step must be positive, got {grid_step}"),
        });
    }
    let down = (x / grid_step).floor() * grid_step;
    if down == x {
        return Ok(x);
    }
    let up = down + grid_step;
    let p_up = (x - down) / grid_step;
    Ok(if rng.gen::<f64>() < p_up { up } else { down })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_points_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(stochastic_round(1.0, 0.5, &mut rng).unwrap(), 1.0);
            assert_eq!(stochastic_round(-2.5, 0.5, &mut rng).unwrap(), -2.5);
            assert_eq!(stochastic_round(0.0, 0.5, &mut rng).unwrap(), 0.0);
        }
    }

    #[test]
    fn outputs_are_adjacent_grid_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let r = stochastic_round(0.3, 0.5, &mut rng).unwrap();
            assert!(r == 0.0 || r == 0.5, "unexpected output {r}");
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(stochastic_round(f64::NAN, 0.5, &mut rng).is_err());
        assert!(stochastic_round(f64::INFINITY, 0.5, &mut rng).is_err());
    }

    #[test]
    fn zero_grid_step_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(stochastic_round(0.3, 0.0, &mut rng).is_err());
        assert!(stochastic_round(0.3, -1.0, &mut rng).is_err());
    }
}
