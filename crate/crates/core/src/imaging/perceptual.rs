use super::{save_image, ImageRGB, ImagingError, Result};
use crate::exec::{run_shell, shell_quote};
use serde::{Deserialize, Serialize};
use std::time::Duration;

/// Source of the optional learned perceptual distance column.
///
/// An external provider is invoked as `<command> <pathA> <pathB>` and must
/// print a single non-negative decimal number on stdout and exit with 0.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptualProvider {
    #[default]
    None,
    External {
        command: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
}

fn default_timeout_secs() -> u64 {
    300
}

impl PerceptualProvider {
    pub fn external(command: impl Into<String>) -> Self {
        Self::External {
            command: command.into(),
            timeout_secs: default_timeout_secs(),
        }
    }
}

pub fn perceptual_distance(
    a: &ImageRGB,
    b: &ImageRGB,
    provider: &PerceptualProvider,
) -> Result<Option<f64>> {
    a.check_same_dims(b)?;
    let (command, timeout_secs) = match provider {
        PerceptualProvider::None => return Ok(None),
        PerceptualProvider::External {
            command,
            timeout_secs,
        } => (command, *timeout_secs),
    };
    let dir = tempfile::tempdir()?;
    let path_a = dir.path().join("a.png");
    let path_b = dir.path().join("b.png");
    save_image(a, &path_a)?;
    save_image(b, &path_b)?;
    let full = format!(
        "{command} {} {}",
        shell_quote(&path_a.to_string_lossy()),
        shell_quote(&path_b.to_string_lossy())
    );
    let out = run_shell(&full, Duration::from_secs(timeout_secs))
        .map_err(|e| ImagingError::Provider(e.to_string()))?;
    let text = out.stdout.trim();
    let value: f64 = text
        .parse()
        .map_err(|_| ImagingError::Provider(format!("unparseable output {text:?}")))?;
    if !value.is_finite() || value < 0.0 {
        return Err(ImagingError::Provider(format!("distance {value} is not a finite value >= 0")));
    }
    Ok(Some(value))
}
