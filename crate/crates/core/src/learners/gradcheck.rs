use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

use super::{objective, objective_grad, Differentiable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub max_rel_error: f64,
    pub blocks: Vec<BlockReport>,
}

/// Compares analytic gradients against central differences
/// `(L(θ+ε) − L(θ−ε)) / 2ε` for every parameter, without dropout.
///
/// Relative error is `|a − n| / max(|a|, |n|, 1e-12)`.
pub fn finite_diff_check<M>(model: &M, x: &M::Input, y: &Matrix, eps: f64) -> GradientReport
where
    M: Differentiable + Clone,
{
    finite_diff_check_penalized(model, x, y, eps, 0.0)
}

pub fn finite_diff_check_penalized<M>(model: &M, x: &M::Input, y: &Matrix, eps: f64, l2: f64) -> GradientReport
where
    M: Differentiable + Clone,
{
    let analytic = objective_grad(model, x, y, l2);
    let mut probe = model.clone();
    let mut blocks = Vec::new();
    for (b, name) in model.block_names().into_iter().enumerate() {
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for (i, &a) in analytic[b].iter().enumerate() {
            let original = probe.blocks()[b][i];
            probe.blocks_mut()[b][i] = original + eps;
            let plus = objective(&probe, x, y, l2);
            probe.blocks_mut()[b][i] = original - eps;
            let minus = objective(&probe, x, y, l2);
            probe.blocks_mut()[b][i] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            max_rel = max_rel.max(rel);
            max_abs = max_abs.max(a.abs());
        }
        blocks.push(BlockReport {
            name,
            max_rel_error: max_rel,
            max_abs_analytic: max_abs,
        });
    }
    GradientReport {
        max_rel_error: blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max),
        blocks,
    }
}
