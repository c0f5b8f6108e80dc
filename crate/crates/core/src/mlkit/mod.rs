//! Small classifiers with exact gradients, synthetic data and client
//! partitioning.

mod data;
mod model;

pub use data::{make_synthetic, partition_iid, partition_label_shard, Dataset, Partition};
pub use model::{ModelKind, ModelSpec, Objective};

/// Smallest denominator in [`finite_difference_errors`]. Rounding in a
/// loss of order 1 puts roughly `1e-11` of noise into a central difference
/// at step `1e-4`, so a relative error of `1e-4` can only be resolved for
/// components of about this size or larger.
pub const FD_SCALE_FLOOR: f64 = 1e-6;

/// Relative error of each component of `grad` against central differences
/// of `loss` with step `step`: `|g - fd| / max(|g|, |fd|, FD_SCALE_FLOOR)`.
pub fn finite_difference_errors<F>(params: &[f64], grad: &[f64], step: f64, mut loss: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = params.to_vec();
    (0..params.len())
        .map(|j| {
            probe[j] = params[j] + step;
            let up = loss(&probe);
            probe[j] = params[j] - step;
            let down = loss(&probe);
            probe[j] = params[j];
            let fd = (up - down) / (2.0 * step);
            let scale = grad[j].abs().max(fd.abs()).max(FD_SCALE_FLOOR);
            (grad[j] - fd).abs() / scale
        })
        .collect()
}

/// Largest of [`finite_difference_errors`].
pub fn finite_difference_error<F>(params: &[f64], grad: &[f64], step: f64, loss: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    finite_difference_errors(params, grad, step, loss).into_iter().fold(0.0, f64::max)
}
