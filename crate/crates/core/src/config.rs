//! The single JSON document that drives `run` and `continue`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diagnostics::{apriori_bounds, DiagnosticsConfig};
use crate::error::{Error, Result};
use crate::evolution::{check_deltas, EvolveParams};
use crate::grid::GridConfig;
use crate::kernels::Kernel;
use crate::sources::SourceSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionConfig {
    pub delta: Option<f64>,
    pub deltas: Option<Vec<f64>>,
    pub dt_init: f64,
    pub dt_max: f64,
    pub t_max: f64,
    pub steady_tol: f64,
    pub max_steps: usize,
    /// Stop a stage once `M_λ` exceeds this multiple of the reference scale.
    pub blowup_factor: Option<f64>,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        let p = EvolveParams::default();
        EvolutionConfig {
            delta: None,
            deltas: None,
            dt_init: p.dt_init,
            dt_max: p.dt_max,
            t_max: p.t_max,
            steady_tol: p.steady_tol,
            max_steps: p.max_steps,
            blowup_factor: None,
        }
    }
}

impl EvolutionConfig {
    /// The continuation ladder; a single `delta` is a ladder of one.
    pub fn deltas(&self) -> Result<Vec<f64>> {
        let deltas = match (&self.delta, &self.deltas) {
            (Some(d), None) => vec![*d],
            (None, Some(ds)) => ds.clone(),
            _ => return Err(Error::Config("evolution: give exactly one of \"delta\" and \"deltas\"".into())),
        };
        check_deltas(&deltas).map_err(|e| Error::Config(format!("evolution: {e}")))?;
        Ok(deltas)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kernel: Value,
    source: Value,
    grid: GridConfig,
    evolution: EvolutionConfig,
    #[serde(default)]
    diagnostics: DiagnosticsConfig,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub kernel: Kernel,
    pub source: SourceSpec,
    pub grid: GridConfig,
    pub evolution: EvolutionConfig,
    pub diagnostics: DiagnosticsConfig,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub deltas: Vec<f64>,
    pub params: EvolveParams,
    /// The `kernel` and `source` sections as written, echoed into reports.
    pub kernel_json: Value,
    pub source_json: Value,
}

/// 1-based line of the first `"key":` in the document.
fn key_line(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    let mut from = 0;
    while let Some(pos) = text[from..].find(&needle) {
        let at = from + pos;
        let rest = text[at + needle.len()..].trim_start();
        if rest.starts_with(':') {
            return Some(text[..at].matches('\n').count() + 1);
        }
        from = at + needle.len();
    }
    None
}

fn at_key(text: &str, key: &str, e: Error) -> Error {
    let msg = match e {
        Error::Config(m) => m,
        other => format!("{key}: {other}"),
    };
    match key_line(text, key) {
        Some(line) => Error::Config(format!("{msg} (section \"{key}\" at line {line})")),
        None => Error::Config(msg),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let kernel = Kernel::from_config(&raw.kernel).map_err(|e| at_key(text, "kernel", e))?;
        let source = SourceSpec::from_config(&raw.source).map_err(|e| at_key(text, "source", e))?;
        raw.grid
            .build()
            .map_err(|e| at_key(text, "grid", Error::Config(format!("grid: {e}"))))?;
        let deltas = raw.evolution.deltas().map_err(|e| at_key(text, "evolution", e))?;
        let ev = &raw.evolution;
        let mut params = EvolveParams {
            delta: deltas[0],
            dt_init: ev.dt_init,
            dt_max: ev.dt_max,
            t_max: ev.t_max,
            steady_tol: ev.steady_tol,
            max_steps: ev.max_steps,
            blowup_limit: None,
        };
        params
            .validate()
            .map_err(|e| at_key(text, "evolution", Error::Config(format!("evolution: {e}"))))?;
        if let Some(factor) = ev.blowup_factor {
            if !(factor > 0.0) {
                return Err(at_key(text, "evolution", Error::Config("evolution: blowup_factor must be positive".into())));
            }
            // kernels without a sum-power envelope have no reference scale
            if let Ok(c) = apriori_bounds(&kernel, &source) {
                params.blowup_limit = Some(factor * c.blowup_reference());
            }
        }
        let d = &raw.diagnostics;
        if !(d.sandwich_tol > 0.0 && d.residual_tol > 0.0) {
            return Err(at_key(text, "diagnostics", Error::Config("diagnostics: tolerances must be positive".into())));
        }
        if d.require_existence && !source.has_finite_low_moments() {
            return Err(at_key(
                text,
                "source",
                Error::Config("source: moments of order in [0, 1) diverge; existence checks cannot apply".into()),
            ));
        }
        Ok(RunConfig {
            kernel,
            source,
            grid: raw.grid,
            evolution: raw.evolution.clone(),
            diagnostics: raw.diagnostics,
            seed: raw.seed,
            output: raw.output,
            deltas,
            params,
            kernel_json: raw.kernel,
            source_json: raw.source,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }
}
