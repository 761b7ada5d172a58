use super::{PipelineError, Result};
use crate::faceswap::{digest_bytes, TransformKind, TransformSpec};
use crate::gsplat::{GsTrainConfig, InitConfig};
use crate::imaging::{PerceptualProvider, WHITE};
use crate::nerf::{EncodingConfig, NerfTrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Renderer {
    Nerf,
    Gs,
}

impl Renderer {
    pub fn as_str(self) -> &'static str {
        match self {
            Renderer::Nerf => "nerf",
            Renderer::Gs => "gs",
        }
    }
}

impl std::str::FromStr for Renderer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "nerf" => Ok(Renderer::Nerf),
            "gs" | "gsplat" => Ok(Renderer::Gs),
            other => Err(format!("unknown renderer {other:?} (expected nerf or gs)")),
        }
    }
}

/// Which per-image transform the pipeline applies. `none` skips the stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformChoice {
    None,
    Identity,
    ColorMatch,
    External,
}

impl std::str::FromStr for TransformChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "identity" => Ok(Self::Identity),
            "color-match" | "color_match" => Ok(Self::ColorMatch),
            "external" => Ok(Self::External),
            other => Err(format!(
                "unknown transform {other:?} (expected none, identity, color-match or external)"
            )),
        }
    }
}

/// A: score against the transformed held-out views of the same dataset.
/// B: score against the raw test views of another subject's dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    A,
    B,
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "A" | "a" => Ok(Protocol::A),
            "B" | "b" => Ok(Protocol::B),
            other => Err(format!("unknown protocol {other:?} (expected A or B)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NerfModelConfig {
    pub encoding: EncodingConfig,
    pub widths: Vec<usize>,
}

impl Default for NerfModelConfig {
    fn default() -> Self {
        Self {
            encoding: EncodingConfig::default(),
            widths: vec![128; 4],
        }
    }
}

/// One pipeline run. Top-level keys are flat; renderer hyperparameters
/// sit in the `gs`, `gs_init`, `nerf` and `nerf_model` tables. `seed`
/// replaces the seed fields of those tables and `iterations`, when set,
/// replaces their iteration counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub dataset: PathBuf,
    pub renderer: Renderer,
    pub transform: TransformChoice,
    pub target: Option<PathBuf>,
    pub external_cmd: Option<String>,
    pub transform_timeout_secs: u64,
    pub workers: usize,
    pub protocol: Protocol,
    /// Second subject's dataset, required by protocol B.
    pub target_dataset: Option<PathBuf>,
    pub seed: u64,
    pub iterations: Option<usize>,
    pub out: PathBuf,
    pub overwrite: bool,
    pub background: [f64; 3],
    /// Command printing a perceptual distance for two PNG paths.
    pub perceptual_cmd: Option<String>,
    pub gs: GsTrainConfig,
    pub gs_init: InitConfig,
    pub nerf: NerfTrainConfig,
    pub nerf_model: NerfModelConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            renderer: Renderer::Gs,
            transform: TransformChoice::Identity,
            target: None,
            external_cmd: None,
            transform_timeout_secs: 300,
            workers: 1,
            protocol: Protocol::A,
            target_dataset: None,
            seed: 0,
            iterations: None,
            out: PathBuf::from("out"),
            overwrite: false,
            background: WHITE,
            perceptual_cmd: None,
            gs: GsTrainConfig::default(),
            gs_init: InitConfig::default(),
            nerf: NerfTrainConfig::default(),
            nerf_model: NerfModelConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a `.toml` or `.json` file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = |e: String| PipelineError::Config(format!("{}: {e}", path.display()));
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| bad(e.to_string())),
            Some("json") => serde_json::from_str(&text).map_err(|e| bad(e.to_string())),
            _ => Err(bad("expected a .toml or .json file".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PipelineError::Config(m.into()));
        if self.dataset.as_os_str().is_empty() {
            return bad("dataset root is required");
        }
        if self.out.as_os_str().is_empty() {
            return bad("output directory is required");
        }
        if self.protocol == Protocol::B && self.target_dataset.is_none() {
            return bad("protocol B needs target_dataset");
        }
        if self.workers == 0 {
            return bad("workers must be positive");
        }
        if self.transform == TransformChoice::External && self.external_cmd.is_none() {
            return bad("the external transform needs external_cmd");
        }
        if let Some(spec) = self.transform_spec() {
            spec.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        self.gs_train().validate()?;
        self.nerf.render.validate()?;
        Ok(())
    }

    pub fn transform_spec(&self) -> Option<TransformSpec> {
        let kind = match self.transform {
            TransformChoice::None => return None,
            TransformChoice::Identity => TransformKind::Identity,
            TransformChoice::ColorMatch => TransformKind::ColorMatch,
            TransformChoice::External => TransformKind::External {
                command_template: self.external_cmd.clone().unwrap_or_default(),
            },
        };
        Some(TransformSpec {
            kind,
            target: self.target.clone(),
            timeout_secs: self.transform_timeout_secs,
        })
    }

    pub fn gs_train(&self) -> GsTrainConfig {
        GsTrainConfig {
            seed: self.seed,
            iterations: self.iterations.unwrap_or(self.gs.iterations),
            background: self.background,
            ..self.gs.clone()
        }
    }

    pub fn gs_init(&self) -> InitConfig {
        InitConfig {
            seed: self.seed,
            ..self.gs_init.clone()
        }
    }

    pub fn nerf_train(&self) -> NerfTrainConfig {
        let mut cfg = NerfTrainConfig {
            seed: self.seed,
            iterations: self.iterations.unwrap_or(self.nerf.iterations),
            ..self.nerf.clone()
        };
        cfg.render.background = self.background;
        cfg.render.rng_seed = self.seed;
        cfg
    }

    pub fn perceptual(&self) -> PerceptualProvider {
        match &self.perceptual_cmd {
            Some(c) => PerceptualProvider::external(c.clone()),
            None => PerceptualProvider::None,
        }
    }

    /// Hex SHA-256 of the configuration without `out` and `overwrite`,
    /// so equal runs in different directories share a fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("out");
            m.remove("overwrite");
        }
        digest_bytes(v.to_string().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        std::fs::write(
            &t,
            "dataset = \"data\"\nrenderer = \"nerf\"\ntransform = \"color_match\"\ntarget = \"t.png\"\nseed = 4\n[nerf]\nbatch_rays = 64\n",
        )
        .unwrap();
        let a = PipelineConfig::load(&t).unwrap();
        assert_eq!(a.renderer, Renderer::Nerf);
        assert_eq!(a.nerf.batch_rays, 64);
        assert_eq!(a.nerf_train().seed, 4);
        a.validate().unwrap();
        let j = dir.path().join("c.json");
        std::fs::write(&j, serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(PipelineConfig::load(&j).unwrap(), a);

        std::fs::write(&t, "dataset = \"d\"\ncolour = 1\n").unwrap();
        assert!(matches!(PipelineConfig::load(&t), Err(PipelineError::Config(_))));
        std::fs::write(&t, "dataset = \"d\"\n[gs]\nlearning_rate = 1\n").unwrap();
        assert!(PipelineConfig::load(&t).is_err());
    }

    #[test]
    fn protocol_b_needs_a_second_dataset() {
        let mut c = PipelineConfig {
            dataset: "d".into(),
            protocol: Protocol::B,
            ..PipelineConfig::default()
        };
        assert!(c.validate().is_err());
        c.target_dataset = Some("other".into());
        c.validate().unwrap();
    }

    #[test]
    fn fingerprint_ignores_output_location() {
        let a = PipelineConfig {
            dataset: "d".into(),
            ..PipelineConfig::default()
        };
        let b = PipelineConfig {
            out: "elsewhere".into(),
            overwrite: true,
            ..a.clone()
        };
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = PipelineConfig { seed: 1, ..a.clone() };
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
