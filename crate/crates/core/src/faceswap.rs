//! Per-image transforms applied independently to every training view:
//! built-in deterministic operators or an external command.

use crate::camera::{file_stems, write_manifest_for, Split, View, ViewDataset};
use crate::exec::{run_shell, shell_quote, ExecError};
use crate::imaging::{load_image, png_bytes, save_image, ImageRGB, ImagingError, WHITE};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

pub const PLACEHOLDERS: [&str; 3] = ["{source}", "{target}", "{out}"];
pub const MANIFEST_FILE: &str = "transform_manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum FaceswapError {
    #[error("invalid transform: {0}")]
    Spec(String),
    #[error("view {view_id}: {source}")]
    View {
        view_id: String,
        source: Box<FaceswapError>,
    },
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("external command wrote no output at {0}")]
    MissingOutput(PathBuf),
    #[error("external output {path} is not a readable PNG: {source}")]
    CorruptOutput { path: PathBuf, source: ImagingError },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Camera(#[from] crate::camera::CameraError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T, E = FaceswapError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FaceswapError + '_ {
    move |source| FaceswapError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformKind {
    Identity,
    ColorMatch,
    /// Shell command with `{source}`, `{target}` and `{out}` placeholders.
    External { command_template: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSpec {
    #[serde(flatten)]
    pub kind: TransformKind,
    /// Target image; required by `color_match` and `external`.
    #[serde(default)]
    pub target: Option<PathBuf>,
    /// Per-image limit for external commands.
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    300
}

impl TransformSpec {
    pub fn identity() -> Self {
        Self {
            kind: TransformKind::Identity,
            target: None,
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn color_match(target: impl Into<PathBuf>) -> Self {
        Self {
            kind: TransformKind::ColorMatch,
            target: Some(target.into()),
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn external(command_template: impl Into<String>, target: impl Into<PathBuf>) -> Self {
        Self {
            kind: TransformKind::External {
                command_template: command_template.into(),
            },
            target: Some(target.into()),
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let TransformKind::External { command_template } = &self.kind {
            check_template(command_template)?;
        }
        if !matches!(self.kind, TransformKind::Identity) && self.target.is_none() {
            return Err(FaceswapError::Spec("this transform needs a target image".into()));
        }
        if self.timeout_secs == 0 {
            return Err(FaceswapError::Spec("timeout_secs must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 over the variant, the template and the target file's bytes.
    pub fn fingerprint(&self) -> Result<String> {
        let target_digest = match &self.target {
            Some(p) if !matches!(self.kind, TransformKind::Identity) => {
                Some(digest_bytes(&std::fs::read(p).map_err(io_err(p))?))
            }
            _ => None,
        };
        let doc = serde_json::json!({ "kind": self.kind, "target_sha256": target_digest });
        Ok(digest_bytes(doc.to_string().as_bytes()))
    }
}

fn check_template(template: &str) -> Result<()> {
    let missing: Vec<&str> = PLACEHOLDERS.iter().copied().filter(|p| !template.contains(p)).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(FaceswapError::Spec(format!(
            "command template lacks {}",
            missing.join(", ")
        )))
    }
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String> {
    Ok(digest_bytes(&std::fs::read(path).map_err(io_err(path))?))
}

pub fn apply_identity(img: &ImageRGB) -> ImageRGB {
    img.clone()
}

fn channel_stats(img: &ImageRGB) -> [(f64, f64); 3] {
    let n = img.pixel_count() as f64;
    let data = img.as_slice();
    std::array::from_fn(|c| {
        let mean = data.iter().skip(c).step_by(3).sum::<f64>() / n;
        let var = data.iter().skip(c).step_by(3).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    })
}

/// Per channel, maps the source mean and standard deviation onto the
/// target's and clamps to `[0, 1]`.
pub fn apply_color_match(img: &ImageRGB, target: &ImageRGB) -> ImageRGB {
    let src = channel_stats(img);
    let tgt = channel_stats(target);
    let gain: [f64; 3] = std::array::from_fn(|c| tgt[c].1 / src[c].1.max(1e-6));
    img.map(|i, v| {
        let c = i % 3;
        tgt[c].0 + (v - src[c].0) * gain[c]
    })
}

/// Runs the external transform once and checks that `out` is a readable PNG.
pub fn apply_external(source: &Path, target: &Path, out: &Path, template: &str, timeout: Duration) -> Result<()> {
    check_template(template)?;
    for p in [source, target] {
        if !p.is_file() {
            return Err(FaceswapError::Io {
                path: p.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "input image not found"),
            });
        }
    }
    let command = template
        .replace("{source}", &shell_quote(&source.to_string_lossy()))
        .replace("{target}", &shell_quote(&target.to_string_lossy()))
        .replace("{out}", &shell_quote(&out.to_string_lossy()));
    run_shell(&command, timeout)?;
    if !out.is_file() {
        return Err(FaceswapError::MissingOutput(out.to_path_buf()));
    }
    load_image(out, WHITE).map_err(|source| FaceswapError::CorruptOutput {
        path: out.to_path_buf(),
        source,
    })?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub view_id: String,
    pub source: PathBuf,
    pub output: PathBuf,
    pub source_sha256: String,
    pub output_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformManifest {
    pub spec_fingerprint: String,
    pub records: Vec<ManifestRecord>,
}

impl TransformManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| FaceswapError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })
    }

    /// Checks that every recorded output still has its recorded digest.
    pub fn verify(&self) -> Result<()> {
        for r in &self.records {
            if digest_file(&r.output)? != r.output_sha256 {
                return Err(FaceswapError::View {
                    view_id: r.view_id.clone(),
                    source: Box::new(FaceswapError::Spec(format!("{} changed since it was written", r.output.display()))),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformOptions {
    /// Split name used for the output image folder and manifest.
    pub split: Split,
    pub workers: usize,
    /// Background for compositing RGBA outputs when reloading them.
    pub background: [f64; 3],
}

impl Default for TransformOptions {
    fn default() -> Self {
        Self {
            split: Split::Train,
            workers: 1,
            background: WHITE,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TransformOutcome {
    pub dataset: ViewDataset,
    pub manifest: TransformManifest,
    /// Views actually transformed in this call; the rest were cache hits.
    pub executed: usize,
}

/// Transforms every view with the same target, writing
/// `<workdir>/<split>/<stem>.png`, `transforms_<split>.json` and a
/// digest manifest. Views whose source digest and spec fingerprint match
/// the previous manifest are not recomputed. Poses, intrinsics and view
/// order are carried over unchanged; images are reloaded from the written
/// files so cached and fresh runs agree.
pub fn transform_dataset(
    ds: &ViewDataset,
    spec: &TransformSpec,
    workdir: &Path,
    opts: &TransformOptions,
) -> Result<TransformOutcome> {
    spec.validate()?;
    if opts.workers == 0 {
        return Err(FaceswapError::Spec("workers must be positive".into()));
    }
    let fingerprint = spec.fingerprint()?;
    let out_dir = workdir.join(opts.split.as_str());
    let in_dir = workdir.join("inputs");
    std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let manifest_path = workdir.join(format!("{}_{MANIFEST_FILE}", opts.split.as_str()));
    let previous: HashMap<String, ManifestRecord> = match TransformManifest::load(&manifest_path) {
        Ok(m) if m.spec_fingerprint == fingerprint => m.records.into_iter().map(|r| (r.view_id.clone(), r)).collect(),
        _ => HashMap::new(),
    };
    let target = match (&spec.kind, &spec.target) {
        (TransformKind::ColorMatch, Some(p)) => Some(load_image(p, opts.background)?),
        _ => None,
    };

    let stems = file_stems(&ds.views);
    let jobs: Vec<(&View, &String)> = ds.views.iter().zip(&stems).collect();
    let run = |&(view, stem): &(&View, &String)| -> Result<(ManifestRecord, bool)> {
        let wrap = |e: FaceswapError| FaceswapError::View {
            view_id: view.id.clone(),
            source: Box::new(e),
        };
        let output = out_dir.join(format!("{stem}.png"));
        let (source, source_bytes) = source_file(view, stem, &in_dir).map_err(wrap)?;
        let source_sha256 = digest_bytes(&source_bytes);
        if let Some(r) = previous.get(&view.id) {
            if r.source_sha256 == source_sha256 && r.output == output && digest_file(&output).ok().as_ref() == Some(&r.output_sha256) {
                return Ok((r.clone(), false));
            }
        }
        transform_one(view, spec, &source, &source_bytes, target.as_ref(), &output).map_err(wrap)?;
        let output_sha256 = digest_file(&output).map_err(wrap)?;
        Ok((
            ManifestRecord {
                view_id: view.id.clone(),
                source,
                output,
                source_sha256,
                output_sha256,
            },
            true,
        ))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| FaceswapError::Spec(format!("cannot start workers: {e}")))?;
    let results: Vec<Result<(ManifestRecord, bool)>> = pool.install(|| jobs.par_iter().map(run).collect());

    let mut records = Vec::with_capacity(results.len());
    let mut executed = 0;
    for r in results {
        let (record, fresh) = r?;
        executed += usize::from(fresh);
        records.push(record);
    }
    let manifest = TransformManifest {
        spec_fingerprint: fingerprint,
        records,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    write_manifest_for(
        workdir,
        opts.split,
        &ds.intrinsics,
        stems.iter().zip(&ds.views).map(|(stem, v)| (format!("./{}/{stem}", opts.split.as_str()), v.pose)),
    )?;

    let views = ds
        .views
        .iter()
        .zip(&manifest.records)
        .map(|(v, r)| {
            Ok(View {
                id: v.id.clone(),
                image: load_image(&r.output, opts.background)?,
                pose: v.pose,
                source: Some(r.output.clone()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransformOutcome {
        dataset: ViewDataset::new(ds.intrinsics, views)?,
        manifest,
        executed,
    })
}

/// The view's image file, written under `in_dir` when it has none.
fn source_file(view: &View, stem: &str, in_dir: &Path) -> Result<(PathBuf, Vec<u8>)> {
    if let Some(p) = &view.source {
        return Ok((p.clone(), std::fs::read(p).map_err(io_err(p))?));
    }
    std::fs::create_dir_all(in_dir).map_err(io_err(in_dir))?;
    let path = in_dir.join(format!("{stem}.png"));
    let bytes = png_bytes(&view.image);
    std::fs::write(&path, &bytes).map_err(io_err(&path))?;
    Ok((path, bytes))
}

fn transform_one(
    view: &View,
    spec: &TransformSpec,
    source: &Path,
    source_bytes: &[u8],
    target: Option<&ImageRGB>,
    output: &Path,
) -> Result<()> {
    match &spec.kind {
        TransformKind::Identity => std::fs::write(output, source_bytes).map_err(io_err(output)),
        TransformKind::ColorMatch => {
            let target = target.expect("target loaded for color_match");
            Ok(save_image(&apply_color_match(&view.image, target), output)?)
        }
        TransformKind::External { command_template } => {
            let target = spec.target.as_deref().expect("validated");
            apply_external(source, target, output, command_template, Duration::from_secs(spec.timeout_secs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: usize, h: usize, k: f64) -> ImageRGB {
        ImageRGB::from_fn(w, h, |x, y| [k * x as f64 / w as f64, y as f64 / h as f64, 0.3 + 0.1 * k])
    }

    #[test]
    fn identity_is_exact_and_idempotent() {
        let img = gradient(5, 4, 0.7);
        assert_eq!(apply_identity(&img), img);
        assert_eq!(apply_identity(&apply_identity(&img)), apply_identity(&img));
        assert_eq!(digest_bytes(&png_bytes(&apply_identity(&img))), digest_bytes(&png_bytes(&img)));
    }

    #[test]
    fn color_match_onto_itself_is_identity() {
        let img = gradient(6, 5, 0.9);
        let out = apply_color_match(&img, &img);
        for (a, b) in out.as_slice().iter().zip(img.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_source_maps_to_target_mean() {
        let gray = ImageRGB::filled(4, 4, [0.5; 3]);
        let target = ImageRGB::from_fn(4, 4, |x, _| [if x < 2 { 0.0 } else { 0.5 }; 3]);
        let out = apply_color_match(&gray, &target);
        assert!(out.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn color_match_hits_target_statistics_when_unclamped() {
        let src = gradient(8, 8, 0.5);
        let target = ImageRGB::from_fn(8, 8, |x, y| [0.4 + 0.02 * x as f64, 0.5 + 0.01 * y as f64, 0.6]);
        let out = apply_color_match(&src, &target);
        let (o, t) = (channel_stats(&out), channel_stats(&target));
        for c in 0..2 {
            assert!((o[c].0 - t[c].0).abs() < 1e-12);
            assert!((o[c].1 - t[c].1).abs() < 1e-12);
        }
    }

    #[test]
    fn external_templates_need_every_placeholder() {
        assert!(check_template("cp {source} {out}").is_err());
        check_template("tool {source} {target} {out}").unwrap();
        let mut spec = TransformSpec::external("tool {source} {target} {out}", "t.png");
        spec.validate().unwrap();
        spec.target = None;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn external_copy_and_failures() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("s.png");
        let tgt = dir.path().join("t.png");
        save_image(&gradient(4, 4, 1.0), &src).unwrap();
        save_image(&gradient(4, 4, 0.2), &tgt).unwrap();
        let out = dir.path().join("o.png");
        let t = Duration::from_secs(30);
        apply_external(&src, &tgt, &out, "cp {source} {out} # {target}", t).unwrap();
        assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&src).unwrap());

        let err = apply_external(&src, &tgt, &out, "exit 1 # {source} {target} {out}", t).unwrap_err();
        assert!(matches!(err, FaceswapError::Exec(ExecError::Failed { code: Some(1), .. })), "{err}");

        let none = dir.path().join("none.png");
        let err = apply_external(&src, &tgt, &none, "true {source} {target} {out}", t).unwrap_err();
        assert!(matches!(err, FaceswapError::MissingOutput(_)));

        let junk = dir.path().join("junk.png");
        let err = apply_external(&src, &tgt, &junk, "echo x > {out} # {source} {target}", t).unwrap_err();
        assert!(matches!(err, FaceswapError::CorruptOutput { .. }));

        let err = apply_external(&src, &tgt, &out, "sleep 5 # {source} {target} {out}", Duration::from_millis(100)).unwrap_err();
        assert!(matches!(err, FaceswapError::Exec(ExecError::Timeout { .. })));
    }
}
