//! Model files: a `u32` little-endian header length, the JSON header, then
//! every parameter block as little-endian `f32` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

use super::{Activation, DenseLayer, LinearModel, LossKind, MlpModel, Model, Provenance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub kind: String,
    /// `[rows, cols]` of each parameter block in storage order.
    pub shapes: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub activations: Vec<Activation>,
    #[serde(default)]
    pub dropout: Vec<f64>,
    pub seed: u64,
    pub config_hash: String,
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let (header, blocks): (ModelHeader, Vec<&[f64]>) = match model {
        Model::Linear(m) => (
            ModelHeader {
                kind: "linear".into(),
                shapes: vec![[m.num_tags(), m.input_dim()], [m.num_tags(), 1]],
                loss: Some(m.loss),
                activations: vec![],
                dropout: vec![],
                seed: m.provenance.seed,
                config_hash: m.provenance.config_hash.clone(),
            },
            vec![&m.weights, &m.bias],
        ),
        Model::Mlp(m) => (
            ModelHeader {
                kind: "mlp".into(),
                shapes: m
                    .layers
                    .iter()
                    .flat_map(|l| [[l.out_dim, l.in_dim], [l.out_dim, 1]])
                    .collect(),
                loss: None,
                activations: m.layers.iter().map(|l| l.activation).collect(),
                dropout: m.dropout.clone(),
                seed: m.provenance.seed,
                config_hash: m.provenance.config_hash.clone(),
            },
            m.layers.iter().flat_map(|l| [&l.weights[..], &l.bias[..]]).collect(),
        ),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(4 + json.len() + 4 * blocks.iter().map(|b| b.len()).sum::<usize>());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for b in blocks {
        for &v in b {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    ensure!(bytes.len() >= 4, Corruption, "model file shorter than its length prefix");
    let header_len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    ensure!(bytes.len() >= 4 + header_len, Corruption, "model header truncated");
    let header: ModelHeader =
        serde_json::from_slice(&bytes[4..4 + header_len]).map_err(|e| Error::Format(format!("model header: {e}")))?;
    let expected: usize = header.shapes.iter().map(|[r, c]| r * c).sum();
    let payload = &bytes[4 + header_len..];
    ensure!(
        payload.len() == 4 * expected,
        Corruption,
        "model header declares {expected} parameters but {} bytes follow",
        payload.len()
    );
    let mut values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    let mut blocks: Vec<Vec<f64>> = header
        .shapes
        .iter()
        .map(|[r, c]| values.by_ref().take(r * c).collect())
        .collect();
    let provenance = Provenance {
        seed: header.seed,
        config_hash: header.config_hash.clone(),
    };
    match header.kind.as_str() {
        "linear" => {
            ensure!(blocks.len() == 2, Format, "linear model needs 2 blocks, header has {}", blocks.len());
            let loss = header.loss.ok_or_else(|| Error::Format("linear model header lacks loss".into()))?;
            let [t, d] = header.shapes[0];
            ensure!(header.shapes[1] == [t, 1], Format, "bias shape does not match weights");
            let bias = blocks.pop().unwrap();
            let weights = blocks.pop().unwrap();
            let mut m = LinearModel::from_parts(d, weights, bias, loss)?;
            m.provenance = provenance;
            Ok(Model::Linear(m))
        }
        "mlp" => {
            ensure!(
                !blocks.is_empty() && blocks.len().is_multiple_of(2) && blocks.len() / 2 == header.activations.len(),
                Format,
                "mlp header shapes and activations disagree"
            );
            let mut layers = Vec::with_capacity(blocks.len() / 2);
            let mut it = blocks.into_iter();
            for (i, &activation) in header.activations.iter().enumerate() {
                let [out_dim, in_dim] = header.shapes[2 * i];
                ensure!(header.shapes[2 * i + 1] == [out_dim, 1], Format, "layer {i} bias shape mismatch");
                layers.push(DenseLayer {
                    in_dim,
                    out_dim,
                    weights: it.next().unwrap(),
                    bias: it.next().unwrap(),
                    activation,
                });
            }
            let mut m = MlpModel::from_layers(layers, header.dropout)?;
            m.provenance = provenance;
            Ok(Model::Mlp(m))
        }
        other => Err(Error::Format(format!("unknown model kind {other:?}"))),
    }
}

pub fn write_model(path: &Path, model: &Model) -> Result<()> {
    crate::util::write_atomic(path, &encode_model(model))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_round_trip_is_byte_identical() {
        let mut m = MlpModel::new(5, &[4, 3], 2, &[0.3, 0.1], 8).unwrap();
        m.provenance = Provenance { seed: 8, config_hash: "abc".into() };
        let bytes = encode_model(&Model::Mlp(m));
        let decoded = decode_model(&bytes).unwrap();
        assert_eq!(encode_model(&decoded), bytes);
        let Model::Mlp(d) = decoded else { panic!() };
        assert_eq!(d.dropout, vec![0.3, 0.1]);
        assert_eq!(d.provenance.config_hash, "abc");
    }

    #[test]
    fn linear_round_trip_stores_single_precision() {
        let m = LinearModel::from_parts(2, vec![0.1, 0.2, 0.3, 0.4], vec![1.0 / 3.0, 0.0], LossKind::SquaredHinge).unwrap();
        let bytes = encode_model(&Model::Linear(m));
        let Model::Linear(d) = decode_model(&bytes).unwrap() else { panic!() };
        assert_eq!(d.loss, LossKind::SquaredHinge);
        assert_eq!(d.bias[0], (1.0f64 / 3.0) as f32 as f64);
        assert_eq!(encode_model(&Model::Linear(d)), bytes);
    }

    #[test]
    fn truncated_payload_is_corruption() {
        let m = LinearModel::zeros(2, 2, LossKind::Logistic);
        let mut bytes = encode_model(&Model::Linear(m));
        bytes.pop();
        assert!(matches!(decode_model(&bytes), Err(Error::Corruption(_))));
    }
}
