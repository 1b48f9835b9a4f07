//! Experiment harness: spec files in, result tables and a JSON summary out.

pub mod error;
pub mod experiments;
pub mod overrides;
pub mod spec;
pub mod table;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use error::CliError;
pub use overrides::Overrides;
pub use spec::{print_schema, ExperimentKind, ExperimentSpec};
pub use table::{Cell, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the spec's seed.
    pub seed: Option<u64>,
    /// Worker threads; `None` uses all cores. Results do not depend on it.
    pub workers: Option<usize>,
    /// Overrides the spec's output path.
    pub out: Option<PathBuf>,
    pub format: Format,
}

pub struct RunReport {
    pub pass: bool,
    pub table: Table,
    /// Summary document: spec, seed, results and run metadata.
    pub summary: serde_json::Value,
    /// The main output as written (CSV text or the JSON document).
    pub rendered: String,
}

/// Runs a validated spec. Tables are a pure function of the spec and seed.
pub fn run(spec: &ExperimentSpec, opts: &RunOptions) -> Result<RunReport, CliError> {
    spec.validate()?;
    let seed = opts.seed.unwrap_or(spec.seed);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = opts.workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build().map_err(|e| CliError::Pool(e.to_string()))?;
    let start = Instant::now();
    let out = pool.install(|| experiments::run_kind(spec, seed))?;
    let wall = start.elapsed().as_secs_f64();

    let summary = json!({
        "experiment": spec.experiment,
        "seed": seed,
        "pass": out.pass,
        "summary": out.summary,
        "rows": out.table.to_json_rows(),
        "meta": {
            "version": env!("CARGO_PKG_VERSION"),
            "wall_seconds": wall,
            "replicas": out.replicas,
            "workers": pool.current_num_threads(),
        },
        "spec": spec,
    });
    let rendered = match opts.format {
        Format::Csv => out.table.to_csv(),
        Format::Json => serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n",
    };
    if let Some(path) = opts.out.as_ref().or(spec.output.as_ref()) {
        write(path, &rendered)?;
        if opts.format == Format::Csv {
            write(&path.with_extension("summary.json"), &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"))?;
        }
    }
    Ok(RunReport {
        pass: out.pass,
        table: out.table,
        summary,
        rendered,
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
