//! Network checkpoints: a single JSON document holding dims, activation,
//! row-major weights, biases, and optionally the extra biases and enforced
//! region. Floats round-trip bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::net::{Activation, Mlp};
use crate::police::{derive_police, AffineRegion, PoliceState};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra_biases: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Vec<Vec<f64>>>,
}

impl Checkpoint {
    pub fn from_net(net: &Mlp, police: Option<&PoliceState>) -> Self {
        Self {
            layer_dims: net.layer_dims.clone(),
            activation: net.activation,
            weights: net.weights.clone(),
            biases: net.biases.clone(),
            extra_biases: police.map(|p| p.extra_biases.clone()),
            region: police.map(|p| p.region.vertices().to_vec()),
        }
    }

    /// Rebuild the network and, when a region is stored, re-derive the
    /// police state (errors with a certificate error if the stored pattern
    /// no longer holds).
    pub fn to_net(&self) -> Result<(Mlp, Option<PoliceState>)> {
        let net = Mlp {
            layer_dims: self.layer_dims.clone(),
            weights: self.weights.clone(),
            biases: self.biases.clone(),
            activation: self.activation,
        };
        net.validate()?;
        let police = match &self.region {
            Some(vertices) => {
                let region = AffineRegion::new(vertices.clone())?;
                let extra = self
                    .extra_biases
                    .clone()
                    .unwrap_or_else(|| net.layer_dims[1..net.layer_dims.len() - 1]
                        .iter()
                        .map(|&d| vec![0.0; d])
                        .collect());
                Some(derive_police(&net, extra, region)?)
            }
            None => None,
        };
        Ok((net, police))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        crate::write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
