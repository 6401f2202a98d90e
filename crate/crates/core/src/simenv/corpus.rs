//! Annotated log fixtures for compression experiments: probe output
//! captured from bundled scenarios, with the planted critical markers as
//! ground truth.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::compressor::count_tokens;
use crate::error::{AoiError, Result};
use crate::safety::Command;

use super::env::{Environment, SimEnv};
use super::logs::planted_tags;
use super::scenario::{bundled_corpus, ScenarioSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub name: String,
    pub text: String,
    pub tags: BTreeSet<String>,
}

/// Captures diagnostic sweeps over every component of `spec` until the
/// stream holds at least `min_tokens` tokens.
pub fn capture(spec: &ScenarioSpec, run_seed: u64, min_tokens: usize) -> Result<Fixture> {
    let mut env = SimEnv::load(spec, run_seed)?;
    let last = spec.injected_faults.iter().map(|f| f.at).fold(0.0, f64::max);
    env.advance_clock(last);
    let commands: Vec<String> = spec
        .topology
        .components
        .iter()
        .flat_map(|c| env.catalog().diagnostics().iter().map(|d| d.render(c.as_str())).collect::<Vec<_>>())
        .collect();
    let mut chunks: Vec<String> = Vec::new();
    let mut tokens = 0;
    let mut i = 0;
    while tokens < min_tokens {
        let out = env.step(&Command::parse(&commands[i % commands.len()]))?;
        tokens += count_tokens(&out.text);
        chunks.push(out.text);
        i += 1;
    }
    let text = chunks.join("\n");
    let tags = planted_tags(&text).into_iter().collect();
    Ok(Fixture { name: format!("{}-s{run_seed}", spec.scenario_id), text, tags })
}

/// The bundled fixture set: one capture per scenario in every fourth
/// position of the corpus, sizes cycling from 2k to 16k tokens.
pub fn bundled_fixtures() -> Result<Vec<Fixture>> {
    let sizes = [2_000, 4_000, 8_000, 16_000];
    bundled_corpus()
        .iter()
        .step_by(4)
        .enumerate()
        .map(|(i, spec)| capture(spec, i as u64, sizes[i % sizes.len()]))
        .collect()
}

/// Writes `<name>.log` and `<name>.tags` (one tag per line) per fixture.
pub fn write_fixtures(dir: &Path, fixtures: &[Fixture]) -> Result<usize> {
    std::fs::create_dir_all(dir)?;
    for f in fixtures {
        std::fs::write(dir.join(format!("{}.log", f.name)), format!("{}\n", f.text))?;
        let tags: Vec<&str> = f.tags.iter().map(String::as_str).collect();
        std::fs::write(dir.join(format!("{}.tags", f.name)), tags.join("\n") + "\n")?;
    }
    Ok(fixtures.len())
}

/// Reads every `<name>.log` with its sibling `<name>.tags`, sorted by name.
pub fn load_fixtures(dir: &Path) -> Result<Vec<Fixture>> {
    let mut logs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| AoiError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "log"))
        .collect();
    logs.sort();
    logs.into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p)?;
            let tags_text = std::fs::read_to_string(p.with_extension("tags"))?;
            Ok(Fixture {
                name: p.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                text: text.trim_end().to_string(),
                tags: tags_text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect(),
            })
        })
        .collect()
}
