use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{DiscriminatorParams, ExtractorParams};
use crate::data::FeatureSchema;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::optim::Adam;
use crate::scalar::Scalar;

use super::config::AdaptConfig;
use super::derive_seed;

/// Everything needed to resume: encoder with classifier head, subgraph
/// extractor, discriminator, optimizer moments and progress counters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T> {
    pub encoder: EncoderParams<T>,
    pub extractor: ExtractorParams<T>,
    pub discriminator: DiscriminatorParams<T>,
    /// Moments for the encoder and extractor.
    pub optimizer: Adam<T>,
    pub disc_optimizer: Adam<T>,
    pub schema: FeatureSchema,
    pub config: AdaptConfig,
    pub pretrained: bool,
    /// Completed adaptation epochs.
    pub epoch: usize,
}

const INIT_STREAM: u64 = 0x1A17;

impl<T: Scalar> ModelState<T> {
    /// Fresh parameters for the given schema, seeded from `config.seed`.
    pub fn new(schema: FeatureSchema, config: AdaptConfig) -> Result<Self> {
        config.validate()?;
        if schema.num_classes() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, schema has {}",
                schema.num_classes()
            )));
        }
        if schema.feature_dim() == 0 {
            return Err(Error::Config("schema has no node features".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[INIT_STREAM]));
        let h = config.hidden_dim;
        let encoder = EncoderParams::new(schema.feature_dim(), h, config.layers, schema.num_classes(), &mut rng);
        let extractor = ExtractorParams::new(h, h, &mut rng);
        let discriminator = DiscriminatorParams::new(h, h, &mut rng);
        Ok(Self {
            encoder,
            extractor,
            discriminator,
            optimizer: Adam::new(config.learning_rate, config.weight_decay),
            disc_optimizer: Adam::new(config.learning_rate, config.weight_decay),
            schema,
            config,
            pretrained: false,
            epoch: 0,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.encoder.num_classes()
    }

    /// Every parameter under its checkpoint name.
    pub fn named(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out = self.encoder.named();
        out.extend(self.extractor.0.named("extractor"));
        out.extend(self.discriminator.0.named("discriminator"));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Matrix<T>)> {
        let mut out = self.encoder.named_mut();
        out.extend(self.extractor.0.named_mut("extractor"));
        out.extend(self.discriminator.0.named_mut("discriminator"));
        out
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            format: CHECKPOINT_FORMAT,
            config: self.config.clone(),
            schema: self.schema.clone(),
            pretrained: self.pretrained,
            epoch: self.epoch,
            params: tensors(self.named().into_iter())?,
            optimizer: OptimizerState::capture(&self.optimizer)?,
            disc_optimizer: OptimizerState::capture(&self.disc_optimizer)?,
        })
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported checkpoint format {}", c.format)));
        }
        let mut model = Self::new(c.schema.clone(), c.config.clone())?;
        let expected = model.named().len();
        if c.params.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} parameters, found {}",
                c.params.len()
            )));
        }
        for (name, slot) in model.named_mut() {
            let t = c
                .params
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            *slot = t.to_matrix(&name, Some(slot.shape()))?;
        }
        model.optimizer = c.optimizer.restore()?;
        model.disc_optimizer = c.disc_optimizer.restore()?;
        model.pretrained = c.pretrained;
        model.epoch = c.epoch;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint()?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        let c: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint(&c)
    }
}

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Shaped array stored in double precision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl Tensor {
    fn capture<T: Scalar>(name: &str, m: &Matrix<T>) -> Result<Self> {
        if !m.all_finite() {
            return Err(Error::Checkpoint(format!("parameter `{name}` is not finite")));
        }
        Ok(Self {
            shape: [m.rows(), m.cols()],
            data: m.data().iter().map(|v| v.as_f64()).collect(),
        })
    }

    fn to_matrix<T: Scalar>(&self, name: &str, expect: Option<(usize, usize)>) -> Result<Matrix<T>> {
        let [r, c] = self.shape;
        if self.data.len() != r * c {
            return Err(Error::Checkpoint(format!("`{name}` has {} values for shape {r}x{c}", self.data.len())));
        }
        if let Some(e) = expect {
            if e != (r, c) {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {r}x{c}, expected {}x{}",
                    e.0, e.1
                )));
            }
        }
        Ok(Matrix::from_vec(r, c, self.data.iter().map(|&v| T::of(v)).collect()))
    }
}

fn tensors<'a, T: Scalar>(items: impl Iterator<Item = (String, &'a Matrix<T>)>) -> Result<BTreeMap<String, Tensor>> {
    items.map(|(n, m)| Ok((n.clone(), Tensor::capture(&n, m)?))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub first_moment: BTreeMap<String, Tensor>,
    pub second_moment: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    fn capture<T: Scalar>(opt: &Adam<T>) -> Result<Self> {
        Ok(Self {
            learning_rate: opt.learning_rate,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            weight_decay: opt.weight_decay,
            step: opt.step,
            first_moment: tensors(opt.first_moment.iter().map(|(k, v)| (k.clone(), v)))?,
            second_moment: tensors(opt.second_moment.iter().map(|(k, v)| (k.clone(), v)))?,
        })
    }

    fn restore<T: Scalar>(&self) -> Result<Adam<T>> {
        let load = |m: &BTreeMap<String, Tensor>| -> Result<BTreeMap<String, Matrix<T>>> {
            m.iter().map(|(k, t)| Ok((k.clone(), t.to_matrix(k, None)?))).collect()
        };
        Ok(Adam {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            step: self.step,
            first_moment: load(&self.first_moment)?,
            second_moment: load(&self.second_moment)?,
        })
    }
}

/// Serialized form of a [`ModelState`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub config: AdaptConfig,
    pub schema: FeatureSchema,
    pub pretrained: bool,
    pub epoch: usize,
    pub params: BTreeMap<String, Tensor>,
    pub optimizer: OptimizerState,
    pub disc_optimizer: OptimizerState,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> AdaptConfig {
        AdaptConfig {
            hidden_dim: 6,
            ..AdaptConfig::default()
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut m = ModelState::<f64>::new(FeatureSchema::plain(4, 3), small()).unwrap();
        m.encoder.convs[0].weight[(0, 0)] = 0.1 + 0.2;
        m.encoder.head.bias[(0, 1)] = -1.0 / 3.0;
        m.pretrained = true;
        m.epoch = 7;
        let g = Matrix::filled(1, 3, 0.123_456_789_012_345_68);
        m.optimizer.update(vec![("encoder.head.bias".into(), &mut m.encoder.head.bias)], &[g]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = ModelState::<f64>::load(&path).unwrap();
        assert_eq!(back, m);
        for ((na, a), (nb, b)) in m.named().into_iter().zip(back.named()) {
            assert_eq!(na, nb);
            let bits_a: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn single_precision_round_trip() {
        let m = ModelState::<f32>::new(FeatureSchema::plain(3, 2), small()).unwrap();
        let c = m.to_checkpoint().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        let back = ModelState::<f32>::from_checkpoint(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let m = ModelState::<f64>::new(FeatureSchema::plain(3, 2), small()).unwrap();
        let mut c = m.to_checkpoint().unwrap();
        c.params.get_mut("encoder.head.bias").unwrap().shape = [2, 1];
        assert!(matches!(ModelState::<f64>::from_checkpoint(&c), Err(Error::Checkpoint(_))));
        let mut c = m.to_checkpoint().unwrap();
        c.params.remove("extractor.output.bias");
        assert!(ModelState::<f64>::from_checkpoint(&c).is_err());
    }

    #[test]
    fn same_seed_same_init() {
        let a = ModelState::<f64>::new(FeatureSchema::plain(3, 2), small()).unwrap();
        let b = ModelState::<f64>::new(FeatureSchema::plain(3, 2), small()).unwrap();
        assert_eq!(a, b);
        let c = ModelState::<f64>::new(FeatureSchema::plain(3, 2), AdaptConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.encoder, c.encoder);
    }
}
