//! JSON model files.
//!
//! Floats are written in shortest round-trip form and parsed with exact
//! rounding, so save followed by load reproduces every `f64` bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SorError};
use crate::nn::layer::{Layer, LayerSpec};
use crate::nn::model::ModelGraph;
use crate::sor::SorMeta;
use crate::tensor::Tensor;

pub const MODEL_FORMAT: &str = "sor-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerRecord {
    spec: LayerSpec,
    frozen: bool,
    params: Vec<ParamRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    input_shape: Vec<usize>,
    layers: Vec<LayerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sor: Option<SorMeta>,
}

/// Serializes a model, plus optional regularization metadata, to JSON.
pub fn model_to_json(model: &ModelGraph, sor: Option<&SorMeta>) -> Result<String> {
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        input_shape: model.input_shape().to_vec(),
        layers: model
            .layers
            .iter()
            .map(|l| LayerRecord {
                spec: l.spec.clone(),
                frozen: l.frozen,
                params: l
                    .params
                    .iter()
                    .map(|p| ParamRecord {
                        name: p.name.clone(),
                        shape: p.value.shape().to_vec(),
                        data: p.value.data().to_vec(),
                    })
                    .collect(),
            })
            .collect(),
        sor: sor.cloned(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn model_from_json(text: &str) -> Result<(ModelGraph, Option<SorMeta>)> {
    let raw: serde_json::Value = serde_json::from_str(text)?;
    let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if raw.get("format").and_then(|v| v.as_str()) != Some(MODEL_FORMAT) {
        return Err(SorError::invalid(format!("not a {MODEL_FORMAT} document")));
    }
    if version != MODEL_VERSION {
        return Err(SorError::Version {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let file: ModelFile = serde_json::from_value(raw)?;
    let mut layers = Vec::with_capacity(file.layers.len());
    for rec in file.layers {
        let values = rec
            .params
            .into_iter()
            .map(|p| Tensor::new(p.shape, p.data))
            .collect::<Result<Vec<_>>>()?;
        let mut layer = Layer::with_params(rec.spec, values)?;
        layer.frozen = rec.frozen;
        layers.push(layer);
    }
    let model = ModelGraph::from_layers(file.input_shape, layers)?;
    Ok((model, file.sor))
}

pub fn save_model(path: impl AsRef<Path>, model: &ModelGraph, sor: Option<&SorMeta>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_json(model, sor)?).map_err(|e| SorError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelGraph, Option<SorMeta>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SorError::io(path, e))?;
    model_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = stream(17);
        let mut model = ModelGraph::toy_cnn([16, 16, 1], 4, &mut rng).unwrap();
        model.layers[0].frozen = true;
        // values that need all 17 significant digits
        model.layers[6].params[1].value.data_mut()[0] = 0.1 + 0.2;
        model.layers[6].params[0].value.data_mut()[0] = f64::MIN_POSITIVE;
        let text = model_to_json(&model, None).unwrap();
        let (back, meta) = model_from_json(&text).unwrap();
        assert!(meta.is_none());
        assert_eq!(back, model);
        for (a, b) in back.layers.iter().zip(&model.layers) {
            for (pa, pb) in a.params.iter().zip(&b.params) {
                let bits_a: Vec<u64> = pa.value.data().iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u64> = pb.value.data().iter().map(|v| v.to_bits()).collect();
                assert_eq!(bits_a, bits_b);
            }
        }
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut rng = stream(17);
        let model = ModelGraph::toy_cnn([8, 8, 1], 2, &mut rng).unwrap();
        let text = model_to_json(&model, None).unwrap().replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(
            model_from_json(&text),
            Err(SorError::Version { found: 9, expected: 1 })
        ));
    }

    #[test]
    fn wrong_param_shape_is_rejected() {
        let mut rng = stream(17);
        let model = ModelGraph::toy_cnn([8, 8, 1], 2, &mut rng).unwrap();
        let text = model_to_json(&model, None).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["layers"][0]["params"][1]["shape"] = serde_json::json!([3]);
        v["layers"][0]["params"][1]["data"] = serde_json::json!([0.0, 0.0, 0.0]);
        assert!(model_from_json(&v.to_string()).is_err());
    }
}
