//! Per-class generative models over visual embeddings and the append-only
//! store of their decoders.

mod gaussian;
mod mog;
mod store;
mod vae;

pub use gaussian::{fit_gaussian, GaussianConfig, GaussianModel, COVARIANCE_RIDGE};
pub use mog::{fit_mog, MogConfig, MogFit, MogModel};
pub use store::{load_store, save_store, GeneratorEntry, GeneratorStore};
pub use vae::{elbo, train_vae, ElboTerms, VaeConfig, VaeDecoder, VaeModel, VaeTrainLog, LOGVAR_CLAMP};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::Features;
use crate::rng::{derive, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Gaussian,
    Mog,
    Vae,
}

impl std::fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GeneratorKind::Gaussian => "gaussian",
            GeneratorKind::Mog => "mog",
            GeneratorKind::Vae => "vae",
        })
    }
}

impl std::str::FromStr for GeneratorKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(GeneratorKind::Gaussian),
            "mog" => Ok(GeneratorKind::Mog),
            "vae" => Ok(GeneratorKind::Vae),
            other => Err(crate::Error::Spec(format!("unknown generator kind {other:?}"))),
        }
    }
}

/// Fitting hyperparameters for every generator kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    pub gaussian: GaussianConfig,
    pub mog: MogConfig,
    pub vae: VaeConfig,
}

impl GeneratorConfig {
    pub fn new(kind: GeneratorKind) -> Self {
        GeneratorConfig {
            kind,
            gaussian: GaussianConfig::default(),
            mog: MogConfig::default(),
            vae: VaeConfig::default(),
        }
    }

    pub fn desk_scale(kind: GeneratorKind) -> Self {
        GeneratorConfig {
            vae: VaeConfig::desk_scale(),
            ..GeneratorConfig::new(kind)
        }
    }
}

/// Fits the configured generator to one class's features. Only the
/// decoder side survives: a trained VAE's encoder is dropped here.
pub fn fit_generator(features: &Features, config: &GeneratorConfig, seed: u64, class_id: crate::ClassId) -> Result<GeneratorEntry> {
    let seed = derive(seed, stream::GENERATOR_FIT | u64::from(class_id));
    Ok(match config.kind {
        GeneratorKind::Gaussian => GeneratorEntry::Gaussian(fit_gaussian(features, &config.gaussian)?),
        GeneratorKind::Mog => GeneratorEntry::Mog(fit_mog(features, &config.mog, seed)?.model),
        GeneratorKind::Vae => GeneratorEntry::Vae(train_vae(features, &config.vae, seed)?.0.into_decoder()),
    })
}
