use super::config::{Protocol, Renderer};
use super::{PipelineError, Result};
use crate::imaging::MetricRow;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aggregates {
    /// Mean over rows with finite PSNR; `None` when every row is infinite.
    pub mean_psnr: Option<f64>,
    pub mean_ssim: f64,
    pub mean_perceptual: Option<f64>,
    pub finite_psnr_rows: usize,
    pub infinite_psnr_rows: usize,
}

impl Aggregates {
    pub fn from_rows(rows: &[MetricRow]) -> Self {
        let finite: Vec<f64> = rows.iter().filter_map(|r| r.psnr.finite()).collect();
        let perceptual: Vec<f64> = rows.iter().filter_map(|r| r.perceptual).collect();
        Self {
            mean_psnr: mean(&finite),
            mean_ssim: mean(&rows.iter().map(|r| r.ssim).collect::<Vec<_>>()).unwrap_or(f64::NAN),
            mean_perceptual: if perceptual.len() == rows.len() { mean(&perceptual) } else { None },
            finite_psnr_rows: finite.len(),
            infinite_psnr_rows: rows.len() - finite.len(),
        }
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMetadata {
    pub config_fingerprint: String,
    pub iterations: usize,
    pub train_views: usize,
    pub test_views: usize,
    /// Gaussians in the final cloud, or MLP parameters.
    pub model_size: usize,
    pub final_loss: Option<f64>,
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub renderer: Renderer,
    pub protocol: Protocol,
    pub transform: String,
    pub rows: Vec<MetricRow>,
    pub aggregates: Aggregates,
    pub metadata: RunMetadata,
}

pub const PROTOCOL_B_NOTE: &str = "Protocol B scores renders against real views of a different subject; \
low absolute PSNR is expected and does not indicate a failed run.";

impl EvalReport {
    /// The same report with wall time zeroed, for reproducibility checks.
    pub fn without_wall_time(&self) -> Self {
        let mut r = self.clone();
        r.metadata.wall_time_secs = 0.0;
        r
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("view_id,psnr,ssim,perceptual\n");
        for r in &self.rows {
            let perceptual = r.perceptual.map(|p| p.to_string()).unwrap_or_default();
            let psnr = if r.psnr.is_infinite() { "inf".to_string() } else { r.psnr.value().to_string() };
            let _ = writeln!(s, "{},{psnr},{},{perceptual}", csv_field(&r.view_id), r.ssim);
        }
        s
    }

    /// Metrics down the side, views across and an `Avg.` column.
    pub fn to_markdown(&self) -> String {
        let mut s = format!(
            "# {} / protocol {:?} / transform {}\n\n",
            label(self.renderer),
            self.protocol,
            self.transform
        );
        if self.protocol == Protocol::B {
            let _ = writeln!(s, "> {PROTOCOL_B_NOTE}\n");
        }
        s.push_str("| Metric |");
        for r in &self.rows {
            let _ = write!(s, " {} |", r.view_id);
        }
        s.push_str(" Avg. |\n|---|");
        s.push_str(&"---:|".repeat(self.rows.len() + 1));
        s.push('\n');
        let a = &self.aggregates;
        s.push_str("| PSNR ↑ |");
        for r in &self.rows {
            let _ = write!(s, " {} |", r.psnr);
        }
        let _ = writeln!(s, " {} |", fmt_opt(a.mean_psnr));
        s.push_str("| SSIM ↑ |");
        for r in &self.rows {
            let _ = write!(s, " {:.2} |", r.ssim);
        }
        let _ = writeln!(s, " {:.2} |", a.mean_ssim);
        if a.mean_perceptual.is_some() {
            s.push_str("| Perceptual ↓ |");
            for r in &self.rows {
                let _ = write!(s, " {} |", fmt_opt(r.perceptual));
            }
            let _ = writeln!(s, " {} |", fmt_opt(a.mean_perceptual));
        }
        if a.infinite_psnr_rows > 0 {
            let _ = writeln!(s, "\n{} view(s) matched exactly (PSNR = inf) and are left out of the PSNR average.", a.infinite_psnr_rows);
        }
        s
    }
}

fn label(r: Renderer) -> &'static str {
    match r {
        Renderer::Nerf => "NeRF",
        Renderer::Gs => "GS",
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.2}"))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes `report.json`, `report.csv` and `report.md` into `dir`.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<()> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PipelineError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    for (name, text) in [
        ("report.json", report.to_json()),
        ("report.csv", report.to_csv()),
        ("report.md", report.to_markdown()),
    ] {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(io(&p))?;
    }
    Ok(())
}

/// One table comparing runs: a row per renderer and protocol, a column per
/// averaged metric.
pub fn comparison_markdown(reports: &[EvalReport]) -> String {
    let mut s = String::from("| Renderer | Protocol | Transform | PSNR ↑ Avg. | SSIM ↑ Avg. | Perceptual ↓ Avg. |\n|---|---|---|---:|---:|---:|\n");
    for r in reports {
        let a = &r.aggregates;
        let _ = writeln!(
            s,
            "| {} | {:?} | {} | {} | {:.2} | {} |",
            label(r.renderer),
            r.protocol,
            r.transform,
            fmt_opt(a.mean_psnr),
            a.mean_ssim,
            fmt_opt(a.mean_perceptual)
        );
    }
    if reports.iter().any(|r| r.protocol == Protocol::B) {
        let _ = writeln!(s, "\n> {PROTOCOL_B_NOTE}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Psnr;

    fn row(id: &str, psnr: f64, ssim: f64) -> MetricRow {
        MetricRow {
            view_id: id.into(),
            psnr: Psnr(psnr),
            ssim,
            perceptual: None,
        }
    }

    fn sample_report() -> EvalReport {
        let rows = vec![row("a", 31.25, 0.95), row("b", f64::INFINITY, 1.0), row("c", 1.0 / 3.0, 0.5)];
        EvalReport {
            renderer: Renderer::Gs,
            protocol: Protocol::A,
            transform: "identity".into(),
            aggregates: Aggregates::from_rows(&rows),
            rows,
            metadata: RunMetadata {
                config_fingerprint: "ab".into(),
                iterations: 10,
                train_views: 8,
                test_views: 3,
                model_size: 50,
                final_loss: Some(0.1),
                wall_time_secs: 1.5,
            },
        }
    }

    #[test]
    fn infinite_rows_are_counted_not_averaged() {
        let a = sample_report().aggregates;
        assert_eq!((a.finite_psnr_rows, a.infinite_psnr_rows), (2, 1));
        assert!((a.mean_psnr.unwrap() - (31.25 + 1.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((a.mean_ssim - 2.45 / 3.0).abs() < 1e-12);
        assert_eq!(a.mean_perceptual, None);
    }

    #[test]
    fn files_round_trip_and_match() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample_report();
        emit_report(&r, dir.path()).unwrap();
        assert_eq!(EvalReport::load(&dir.path().join("report.json")).unwrap(), r);
        let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert_eq!(csv.lines().count(), r.rows.len() + 1);
        assert!(csv.contains("b,inf,1,"));
        let md = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
        assert!(md.contains("Avg."));
        assert!(md.contains(&format!("{:.2}", r.aggregates.mean_psnr.unwrap())));
    }

    #[test]
    fn protocol_b_is_annotated() {
        let mut r = sample_report();
        r.protocol = Protocol::B;
        assert!(r.to_markdown().contains(PROTOCOL_B_NOTE));
        assert!(comparison_markdown(&[sample_report(), r]).contains(PROTOCOL_B_NOTE));
    }
}
