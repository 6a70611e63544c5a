use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::layers::TcnMode;

/// Panel side length expected by the encoder.
pub const IMAGE_SIZE: usize = 80;
/// Encoder content features per panel (32 channels × 5 × 5).
pub const CONTENT_DIM: usize = 800;
/// Learned position embedding length.
pub const POSITION_DIM: usize = 25;
/// Panel embedding length.
pub const EMBED_DIM: usize = CONTENT_DIM + POSITION_DIM;
/// Reasoner output length.
pub const REASONER_DIM: usize = 128;

/// Pathways or normalizations switched off for ablation studies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    pub p1p2: bool,
    pub p3p4: bool,
    pub tcn: bool,
}

impl Ablation {
    /// Parses a comma-separated list of `p1p2`, `p3p4`, `tcn`. Empty input
    /// disables nothing.
    pub fn parse(list: &str) -> Result<Self> {
        let mut a = Ablation::default();
        for token in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match token {
                "p1p2" => a.p1p2 = true,
                "p3p4" => a.p3p4 = true,
                "tcn" => a.tcn = true,
                other => return Err(Error::Config(format!("unknown ablation '{other}' (expected p1p2, p3p4 or tcn)"))),
            }
        }
        Ok(a)
    }

    pub fn tokens(&self) -> String {
        let mut out = Vec::new();
        if self.p1p2 {
            out.push("p1p2");
        }
        if self.p3p4 {
            out.push("p3p4");
        }
        if self.tcn {
            out.push("tcn");
        }
        out.join(",")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_context: usize,
    pub n_answers: usize,
    pub image_size: usize,
    pub rule_dim: usize,
    pub first_layer_groups: usize,
    /// Weight of the aggregate rule loss.
    pub beta: f64,
    /// Weight of the target-conditioned rule loss.
    pub gamma: f64,
    pub ablation: Ablation,
    pub tcn_mode: TcnMode,
}

impl ModelConfig {
    pub fn for_geometry(geometry: Geometry, rule_dim: usize) -> Self {
        ModelConfig {
            n_context: geometry.n_context(),
            n_answers: geometry.n_answers(),
            image_size: IMAGE_SIZE,
            rule_dim,
            first_layer_groups: geometry.first_layer_groups(),
            beta: 25.0,
            gamma: 5.0,
            ablation: Ablation::default(),
            tcn_mode: TcnMode::default(),
        }
    }

    /// The published configuration: 3×3 matrices and 40 rule bits.
    pub fn reference() -> Self {
        Self::for_geometry(Geometry::Rpm3x3, 40)
    }

    /// Channels seen by the reasoner: the context panels plus one candidate.
    pub fn reasoner_channels(&self) -> usize {
        self.n_context + 1
    }

    pub fn n_panels(&self) -> usize {
        self.n_context + self.n_answers
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.image_size != IMAGE_SIZE {
            return fail(format!("image size must be {IMAGE_SIZE}, got {}", self.image_size));
        }
        if self.n_context == 0 || self.n_answers < 2 {
            return fail(format!(
                "need at least one context panel and two answers, got {} and {}",
                self.n_context, self.n_answers
            ));
        }
        if self.rule_dim == 0 {
            return fail("rule dimension must be positive".into());
        }
        let ch = self.reasoner_channels();
        if self.first_layer_groups < 2 || ch % self.first_layer_groups != 0 {
            return fail(format!(
                "{ch} reasoner channels cannot be split into {} groups (need at least 2 equal groups)",
                self.first_layer_groups
            ));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0 && self.gamma.is_finite() && self.gamma >= 0.0) {
            return fail(format!("loss weights must be finite and non-negative, got beta={} gamma={}", self.beta, self.gamma));
        }
        if self.ablation.p1p2 && self.ablation.p3p4 {
            return fail("ablating both p1p2 and p3p4 leaves no pathway".into());
        }
        Ok(())
    }

    /// `key=value` pairs in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n-context", self.n_context.to_string()),
            ("n-answers", self.n_answers.to_string()),
            ("image-size", self.image_size.to_string()),
            ("d-r", self.rule_dim.to_string()),
            ("first-layer-groups", self.first_layer_groups.to_string()),
            ("beta", self.beta.to_string()),
            ("gamma", self.gamma.to_string()),
            ("ablate", self.ablation.tokens()),
            ("tcn-mode", self.tcn_mode.as_str().to_string()),
        ]
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| pairs.get(k).ok_or_else(|| Error::Config(format!("missing model key '{k}'")));
        fn num<V: std::str::FromStr>(k: &str, v: &str) -> Result<V> {
            v.parse().map_err(|_| Error::Config(format!("invalid value '{v}' for '{k}'")))
        }
        let cfg = ModelConfig {
            n_context: num("n-context", get("n-context")?)?,
            n_answers: num("n-answers", get("n-answers")?)?,
            image_size: num("image-size", get("image-size")?)?,
            rule_dim: num("d-r", get("d-r")?)?,
            first_layer_groups: num("first-layer-groups", get("first-layer-groups")?)?,
            beta: num("beta", get("beta")?)?,
            gamma: num("gamma", get("gamma")?)?,
            ablation: Ablation::parse(pairs.get("ablate").map_or("", String::as_str))?,
            tcn_mode: match pairs.get("tcn-mode") {
                None => TcnMode::default(),
                Some(v) => TcnMode::parse(v).ok_or_else(|| Error::Config(format!("invalid tcn-mode '{v}'")))?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
