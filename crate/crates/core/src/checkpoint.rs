//! Versioned JSON checkpoints: model config, named parameter blocks, target
//! scaler, preprocessing options and seed. Floats are written in shortest
//! round-trip form, so loading restores every parameter bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cmdrnn::{Cmdrnn, CmdrnnConfig};
use crate::data::{PreprocessOptions, Scaler, Standardizer};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::vae::{Predictor, PredictorKind, Vae, VaeConfig};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    Cmdrnn,
    Vae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub family: ModelFamily,
    pub config: serde_json::Value,
    pub blocks: BTreeMap<String, ParamStore>,
    pub scaler: Option<Scaler>,
    /// Input standardization fitted on the training data, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardizer: Option<Standardizer>,
    pub preprocess: PreprocessOptions,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictor: Option<PredictorKind>,
    #[serde(default)]
    pub autoencoder_trained: bool,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        match value.get("format-version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_FORMAT_VERSION as u64 => {}
            Some(v) => return Err(Error::Schema(format!("checkpoint format-version {v} is not supported"))),
            None => return Err(Error::Schema("checkpoint lacks a format-version".into())),
        }
        Ok(serde_json::from_value(value)?)
    }

    fn block(&self, name: &str) -> Result<&ParamStore> {
        self.blocks
            .get(name)
            .ok_or_else(|| Error::Schema(format!("checkpoint lacks parameter block {name:?}")))
    }

    fn expect_family(&self, family: ModelFamily) -> Result<()> {
        if self.family != family {
            return Err(Error::Schema(format!(
                "checkpoint holds a {:?} model, expected {family:?}",
                self.family
            )));
        }
        Ok(())
    }
}

/// Overwrites `target` with `source`, requiring identical names and shapes.
fn restore(target: &mut ParamStore, source: &ParamStore, prefix: &str) -> Result<()> {
    let expected: Vec<&str> = target.names().filter(|n| n.starts_with(prefix)).collect();
    let given: Vec<&str> = source.names().collect();
    if expected != given {
        return Err(Error::Schema(format!(
            "parameter names differ from the architecture: expected {expected:?}, found {given:?}"
        )));
    }
    for (name, t) in source.iter() {
        if target.tensor(name).shape() != t.shape() {
            return Err(Error::Schema(format!(
                "{name}: shape {:?} in checkpoint, {:?} in model",
                t.shape(),
                target.tensor(name).shape()
            )));
        }
        if !t.is_finite() {
            return Err(Error::Schema(format!("{name}: non-finite values in checkpoint")));
        }
    }
    for (name, t) in source.iter() {
        target.insert(name, t.clone());
    }
    Ok(())
}

fn split_prefix(store: &ParamStore, prefix: &str) -> ParamStore {
    let mut out = ParamStore::new();
    for (n, t) in store.iter().filter(|(n, _)| n.starts_with(prefix)) {
        out.insert(n, t.clone());
    }
    out
}

impl Cmdrnn {
    pub fn to_checkpoint(&self, preprocess: PreprocessOptions) -> Result<Checkpoint> {
        Ok(Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            family: ModelFamily::Cmdrnn,
            config: serde_json::to_value(&self.config)?,
            blocks: BTreeMap::from([("model".to_string(), self.params.clone())]),
            scaler: self.scaler,
            standardizer: None,
            preprocess,
            seed: self.config.seed,
            predictor: None,
            autoencoder_trained: self.autoencoder_ready(),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_family(ModelFamily::Cmdrnn)?;
        let config: CmdrnnConfig = serde_json::from_value(ckpt.config.clone())?;
        let mut model = Cmdrnn::build(config)?;
        restore(&mut model.params, ckpt.block("model")?, "")?;
        model.scaler = ckpt.scaler;
        model.set_autoencoder_ready(ckpt.autoencoder_trained);
        Ok(model)
    }
}

/// A trained VAE with an optional position predictor.
#[derive(Debug, Clone)]
pub struct SemiSupervised {
    pub vae: Vae,
    pub predictor: Option<Predictor>,
    pub scaler: Option<Scaler>,
}

impl SemiSupervised {
    pub fn to_checkpoint(&self, preprocess: PreprocessOptions) -> Result<Checkpoint> {
        let mut blocks = BTreeMap::from([
            ("encoder".to_string(), split_prefix(&self.vae.params, "encoder.")),
            ("decoder".to_string(), split_prefix(&self.vae.params, "decoder.")),
        ]);
        if let Some(p) = &self.predictor {
            blocks.insert("predictor".to_string(), p.params.clone());
        }
        Ok(Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            family: ModelFamily::Vae,
            config: serde_json::to_value(&self.vae.config)?,
            blocks,
            scaler: self.scaler,
            standardizer: None,
            preprocess,
            seed: self.vae.config.seed,
            predictor: self.predictor.as_ref().map(|p| p.kind),
            autoencoder_trained: false,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_family(ModelFamily::Vae)?;
        let config: VaeConfig = serde_json::from_value(ckpt.config.clone())?;
        let mut vae = Vae::build(config)?;
        let mut merged = ckpt.block("encoder")?.clone();
        for (n, t) in ckpt.block("decoder")?.iter() {
            merged.insert(n, t.clone());
        }
        restore(&mut vae.params, &merged, "")?;
        let predictor = match ckpt.predictor {
            Some(kind) => {
                let mut p = Predictor::new(kind, &vae.config)?;
                restore(&mut p.params, ckpt.block("predictor")?, "")?;
                Some(p)
            }
            None => None,
        };
        Ok(Self {
            vae,
            predictor,
            scaler: ckpt.scaler,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdrnn::Variant;
    use crate::data::{make_windows, synth_corridor, SynthConfig};
    use crate::tensor::Tensor;

    fn bits(store: &ParamStore) -> Vec<(String, Vec<usize>, Vec<u64>)> {
        store
            .iter()
            .map(|(n, t)| {
                (
                    n.to_string(),
                    t.shape().to_vec(),
                    t.data().iter().map(|v| v.to_bits()).collect(),
                )
            })
            .collect()
    }

    fn tiny_cmdrnn(variant: Variant) -> Cmdrnn {
        let c = CmdrnnConfig {
            filters: 3,
            feature_width: 5,
            hidden: 6,
            memory: 2,
            mixtures: 3,
            mdn_hidden: 4,
            epochs: 2,
            batch_size: 8,
            seed: 11,
            ..CmdrnnConfig::new(variant, 20)
        };
        Cmdrnn::build(c).unwrap()
    }

    #[test]
    fn cmdrnn_round_trip_is_bit_exact() {
        let ds = synth_corridor(&SynthConfig {
            steps: 40,
            ..SynthConfig::default()
        })
        .unwrap()
        .preprocess(&PreprocessOptions {
            normalize_rssi: true,
            ..PreprocessOptions::default()
        });
        let windows = make_windows(&ds, 2).unwrap();
        for variant in [Variant::Cmdgru, Variant::AeRnnMdn] {
            let mut m = tiny_cmdrnn(variant);
            m.config.autoencoder.epochs = 1;
            m.fit(&windows).unwrap();
            m.scaler = ds.scaler;
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("c.json");
            m.to_checkpoint(PreprocessOptions::default())
                .unwrap()
                .save(&path)
                .unwrap();
            let ckpt = Checkpoint::load(&path).unwrap();
            let back = Cmdrnn::from_checkpoint(&ckpt).unwrap();
            assert_eq!(bits(&back.params), bits(&m.params));
            assert_eq!(back.config, m.config);
            assert_eq!(back.scaler, m.scaler);
            assert_eq!(back.autoencoder_ready(), m.autoencoder_ready());
            assert_eq!(
                back.predict_points(&windows[..3]).unwrap(),
                m.predict_points(&windows[..3]).unwrap()
            );
            let again = dir.path().join("d.json");
            back.to_checkpoint(PreprocessOptions::default())
                .unwrap()
                .save(&again)
                .unwrap();
            assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
        }
    }

    #[test]
    fn awkward_floats_survive() {
        let mut m = tiny_cmdrnn(Variant::Cmdrnn);
        let name = m.params.names().next().unwrap().to_string();
        let shape = m.params.tensor(&name).shape().to_vec();
        let mut t = Tensor::zeros(&shape);
        let specials = [f64::MIN_POSITIVE, 5e-324, 0.1 + 0.2, -1.0 / 3.0, 1e300, -0.0];
        for (v, s) in t.data_mut().iter_mut().zip(specials.iter().cycle()) {
            *v = *s;
        }
        m.params.insert(name.clone(), t);
        let text = serde_json::to_string(&m.to_checkpoint(PreprocessOptions::default()).unwrap()).unwrap();
        let back = Cmdrnn::from_checkpoint(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(bits(&back.params), bits(&m.params));
    }

    #[test]
    fn semi_supervised_round_trip() {
        let config = VaeConfig {
            encoder_hidden: vec![6],
            decoder_hidden: vec![6],
            predictor_hidden: vec![4],
            latent: 2,
            ..VaeConfig::new(5)
        };
        let vae = Vae::build(config).unwrap();
        let predictor = Predictor::new(PredictorKind::M2, &vae.config).unwrap();
        let model = SemiSupervised {
            vae,
            predictor: Some(predictor),
            scaler: Some(Scaler {
                min: [0.0, -1.0],
                max: [10.0, 3.0],
            }),
        };
        let ckpt = model.to_checkpoint(PreprocessOptions::default()).unwrap();
        assert_eq!(
            ckpt.blocks.keys().collect::<Vec<_>>(),
            ["decoder", "encoder", "predictor"]
        );
        let text = serde_json::to_string(&ckpt).unwrap();
        let back = SemiSupervised::from_checkpoint(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(bits(&back.vae.params), bits(&model.vae.params));
        let (a, b) = (back.predictor.unwrap(), model.predictor.unwrap());
        assert_eq!(a.kind, PredictorKind::M2);
        assert_eq!(bits(&a.params), bits(&b.params));
        assert_eq!(back.scaler, model.scaler);
    }

    #[test]
    fn mismatches_are_rejected() {
        let m = tiny_cmdrnn(Variant::Cmdrnn);
        let mut ckpt = m.to_checkpoint(PreprocessOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");

        let mut wrong_family = ckpt.clone();
        wrong_family.family = ModelFamily::Vae;
        assert!(SemiSupervised::from_checkpoint(&wrong_family).is_err());

        let mut version = serde_json::to_value(&ckpt).unwrap();
        version["format-version"] = serde_json::json!(99);
        std::fs::write(&path, version.to_string()).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Schema(_))));

        let store = ckpt.blocks.get_mut("model").unwrap();
        let name = store.names().next().unwrap().to_string();
        store.insert(name, Tensor::zeros(&[1]));
        assert!(matches!(Cmdrnn::from_checkpoint(&ckpt), Err(Error::Schema(_))));
    }
}
