use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

use super::SequenceFeature;

/// Reduction applied to frame sequences before they enter dense models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    #[default]
    Mean,
    Max,
}

/// Column-wise mean or maximum over the frames of one sample.
pub fn temporal_pool(seq: &SequenceFeature, mode: PoolMode) -> Result<Vec<f64>> {
    let frames = &seq.frames;
    ensure!(frames.rows() >= 1, Validation, "cannot pool an empty sequence");
    let mut out = frames.row(0).to_vec();
    for row in frames.iter_rows().skip(1) {
        for (acc, &v) in out.iter_mut().zip(row) {
            match mode {
                PoolMode::Mean => *acc += v,
                PoolMode::Max => *acc = acc.max(v),
            }
        }
    }
    if mode == PoolMode::Mean {
        let t = frames.rows() as f64;
        out.iter_mut().for_each(|v| *v /= t);
    }
    Ok(out)
}
