//! Text checkpoints.
//!
//! ```text
//! loadcast-checkpoint 1
//! model=seq2seq
//! ...                          (model config, seed, scaler, autocorrelation)
//! end-header
//! param name=fc.weight shape=64x1 initializer=zero seed=3 averaged=true asgd_count=12
//! value 0.1,-0.2,...
//! avg 0.05,-0.1,...            (only when an average exists)
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces every bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::features::{annual_lag_steps, quarterly_lag_steps, AutocorrFeature};
use crate::models::{parse_key_values, Model, ModelConfig, ModelError, Standardizer};
use crate::nn::Tensor;

const MAGIC: &str = "loadcast-checkpoint 1";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckpointError {
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint does not match model schema: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Everything needed to forecast from a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub scaler: Standardizer,
    pub autocorr: (AutocorrFeature, AutocorrFeature),
}

fn join(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 20);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v}");
    }
    s
}

fn parse_floats(text: &str, what: &str) -> Result<Vec<f64>, CheckpointError> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| CheckpointError::Malformed(format!("{what}: bad float {f:?}")))
        })
        .collect()
}

pub fn save(ckpt: &Checkpoint) -> String {
    let m = &ckpt.model;
    let mut out = format!("{MAGIC}\n");
    out.push_str(&m.config.to_key_values());
    let _ = writeln!(out, "seed={}", m.seed);
    let _ = writeln!(out, "scaler_mean={}", ckpt.scaler.mean);
    let _ = writeln!(out, "scaler_std={}", ckpt.scaler.std);
    let _ = writeln!(out, "autocorr_year={}", ckpt.autocorr.0.value);
    let _ = writeln!(out, "autocorr_quarter={}", ckpt.autocorr.1.value);
    out.push_str("end-header\n");
    for p in m.params.iter() {
        let shape: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(
            out,
            "param name={} shape={} initializer={} seed={} averaged={} asgd_count={}",
            p.name,
            shape.join("x"),
            p.initializer,
            m.seed,
            p.averaged,
            p.asgd_count
        );
        let _ = writeln!(out, "value {}", join(p.value.data()));
        if let Some(avg) = &p.asgd_avg {
            let _ = writeln!(out, "avg {}", join(avg.data()));
        }
    }
    out
}

fn field<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str, CheckpointError> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| CheckpointError::Malformed(format!("missing {key}")))
}

fn float(map: &BTreeMap<String, String>, key: &str) -> Result<f64, CheckpointError> {
    field(map, key)?
        .parse()
        .map_err(|_| CheckpointError::Malformed(format!("{key} is not a number")))
}

/// Rebuilds the model from its config and seed, then overwrites every
/// parameter by name. Names and shapes must match exactly.
pub fn load(text: &str) -> Result<Checkpoint, CheckpointError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MAGIC) {
        return Err(CheckpointError::Malformed(
            "missing checkpoint magic line".into(),
        ));
    }
    let header: Vec<&str> = lines
        .by_ref()
        .take_while(|l| l.trim() != "end-header")
        .collect();
    let map = parse_key_values(&header.join("\n"));
    let config = ModelConfig::from_key_values(&map)?;
    let seed: u64 = field(&map, "seed")?
        .parse()
        .map_err(|_| CheckpointError::Malformed("seed is not an integer".into()))?;
    let scaler = Standardizer {
        mean: float(&map, "scaler_mean")?,
        std: float(&map, "scaler_std")?,
    };
    let autocorr = (
        AutocorrFeature {
            lag_steps: annual_lag_steps(),
            value: float(&map, "autocorr_year")?,
        },
        AutocorrFeature {
            lag_steps: quarterly_lag_steps(),
            value: float(&map, "autocorr_quarter")?,
        },
    );
    let mut model = Model::new(config, seed)?;
    let mut seen = vec![false; model.params.len()];
    let mut current: Option<usize> = None;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let (tag, rest) = line.split_once(' ').unwrap_or((line, ""));
        match tag {
            "param" => {
                let attrs = parse_attrs(rest);
                let name = field(&attrs, "name")?;
                let id = model.params.find(name).ok_or_else(|| {
                    CheckpointError::SchemaMismatch(format!("unknown parameter {name}"))
                })?;
                let shape: Vec<usize> = field(&attrs, "shape")?
                    .split('x')
                    .map(|d| {
                        d.parse()
                            .map_err(|_| CheckpointError::Malformed(format!("{name}: bad shape")))
                    })
                    .collect::<Result<_, _>>()?;
                let p = model.params.get_mut(id);
                if p.value.shape() != shape.as_slice() {
                    return Err(CheckpointError::SchemaMismatch(format!(
                        "{name} has shape {shape:?}, model expects {:?}",
                        p.value.shape()
                    )));
                }
                p.initializer = field(&attrs, "initializer")?.to_string();
                p.averaged = field(&attrs, "averaged")? == "true";
                p.asgd_count = field(&attrs, "asgd_count")?
                    .parse()
                    .map_err(|_| CheckpointError::Malformed(format!("{name}: bad asgd_count")))?;
                p.asgd_avg = None;
                seen[id.index()] = true;
                current = Some(id.index());
            }
            "value" | "avg" => {
                let idx = current
                    .ok_or_else(|| CheckpointError::Malformed(format!("{tag} before param")))?;
                let p = model.params.iter_mut().nth(idx).expect("index from find");
                let data = parse_floats(rest.trim(), &p.name)?;
                let t = Tensor::new(p.value.shape().to_vec(), data)
                    .map_err(|e| CheckpointError::SchemaMismatch(format!("{}: {e}", p.name)))?;
                if tag == "value" {
                    p.value = t;
                } else {
                    p.asgd_avg = Some(t);
                }
            }
            other => {
                return Err(CheckpointError::Malformed(format!(
                    "unexpected line tag {other:?}"
                )))
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let name = &model.params.iter().nth(i).expect("in range").name;
        return Err(CheckpointError::SchemaMismatch(format!(
            "missing parameter {name}"
        )));
    }
    Ok(Checkpoint {
        model,
        scaler,
        autocorr,
    })
}

fn parse_attrs(text: &str) -> BTreeMap<String, String> {
    text.split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;
    use crate::nn::{Activation, Initializer};

    fn sample(kind: ModelKind) -> Checkpoint {
        let cfg = ModelConfig {
            kind,
            input_dim: 9,
            hidden: 3,
            fc_activation: Activation::Identity,
            fc_initializer: Initializer::HeNormal,
            training_window: 5,
            predict_window: 4,
        };
        let mut model = Model::new(cfg, 11).unwrap();
        let w = model.output.weight;
        model.params.get_mut(w).value.data_mut()[0] = 0.1 + 0.2;
        model.params.get_mut(w).asgd_accumulate();
        Checkpoint {
            model,
            scaler: Standardizer {
                mean: 8.123456789,
                std: 0.3,
            },
            autocorr: (
                AutocorrFeature {
                    lag_steps: annual_lag_steps(),
                    value: 0.87,
                },
                AutocorrFeature {
                    lag_steps: quarterly_lag_steps(),
                    value: -1.0 / 3.0,
                },
            ),
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        for kind in [ModelKind::Model1, ModelKind::Seq2Seq] {
            let c = sample(kind);
            let back = load(&save(&c)).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn header_records_schema() {
        let text = save(&sample(ModelKind::Model1));
        assert!(text.contains("param name=fc.weight shape=3x4 initializer=he_normal seed=11"));
    }

    #[test]
    fn wrong_shape_is_schema_mismatch() {
        let text = save(&sample(ModelKind::Model1)).replace("shape=3x4", "shape=4x3");
        assert!(matches!(
            load(&text),
            Err(CheckpointError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn missing_param_is_schema_mismatch() {
        let text = save(&sample(ModelKind::Model1));
        let cut: String = text
            .lines()
            .take_while(|l| !l.starts_with("param name=fc.bias"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(matches!(
            load(&cut),
            Err(CheckpointError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn garbage_is_malformed() {
        assert!(matches!(load("hello"), Err(CheckpointError::Malformed(_))));
    }
}
