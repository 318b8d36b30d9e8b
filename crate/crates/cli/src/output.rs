//! Artifact files. JSON carries the full configuration; CSV files start with
//! one `#` line naming the schema, command, seed and the JSON file they
//! belong to. Nothing time-dependent is written, so reruns are byte-identical.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const SCHEMA: &str = "funfx/1";

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema: &'static str,
    command: &'static str,
    seed: u64,
    config: &'a RunConfig,
    result: &'a T,
}

pub struct Writer<'a> {
    dir: PathBuf,
    config: &'a RunConfig,
    seed: u64,
    written: Vec<PathBuf>,
}

impl<'a> Writer<'a> {
    pub fn new(config: &'a RunConfig, seed: u64) -> Result<Self> {
        let dir = config.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Self {
            dir,
            config,
            seed,
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn put(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, result: &T) -> Result<()> {
        let env = Envelope {
            schema: SCHEMA,
            command: self.config.command.name(),
            seed: self.seed,
            config: self.config,
            result,
        };
        let mut text = serde_json::to_string_pretty(&env)
            .map_err(|e| CliError::Numerical(format!("cannot encode {name}: {e}")))?;
        text.push('\n');
        self.put(name, &text)
    }

    /// `rows` are written with the shortest round-tripping float format.
    pub fn csv(
        &mut self,
        name: &str,
        manifest: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<Cell>>,
    ) -> Result<()> {
        let mut text = format!(
            "# schema={SCHEMA} command={} seed={} config={manifest}\n",
            self.config.command.name(),
            self.seed
        );
        text.push_str(&header.join(","));
        text.push('\n');
        for row in rows {
            for (k, cell) in row.iter().enumerate() {
                if k > 0 {
                    text.push(',');
                }
                match cell {
                    Cell::F(v) => write!(text, "{v}").unwrap(),
                    Cell::U(v) => write!(text, "{v}").unwrap(),
                    Cell::S(v) => text.push_str(v),
                }
            }
            text.push('\n');
        }
        self.put(name, &text)
    }

    pub fn raw(&mut self, name: &str, body: &str) -> Result<()> {
        self.put(name, body)
    }
}

pub enum Cell {
    F(f64),
    U(u64),
    S(String),
}

/// Equal-width histogram of `values` on `[0, hi]` with `hi` covering `extra`.
pub fn histogram(values: &[f64], extra: f64, bins: usize) -> Vec<(f64, f64, usize)> {
    let hi = values.iter().copied().fold(extra.max(0.0), f64::max);
    if hi <= 0.0 || bins == 0 {
        return vec![(0.0, hi, values.len())];
    }
    let w = hi / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = ((v / w).floor().max(0.0) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (k as f64 * w, (k + 1) as f64 * w, c))
        .collect()
}

pub fn display(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join("\n")
}
