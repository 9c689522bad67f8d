//! Merges run summaries from completed run directories.

use std::path::{Path, PathBuf};

use fedpqos_core::harness::{read_summary, SUMMARY_FILE};
use fedpqos_core::{AgentFamily, CompressionTable, RunSummary};

use crate::sweep::Row;

/// Summaries found under the given paths and the problems met on the way.
#[derive(Debug, Default)]
pub struct Collected {
    pub summaries: Vec<(PathBuf, RunSummary)>,
    pub warnings: Vec<String>,
}

/// Every `summary.json` at or below each path, in sorted path order.
/// Unreadable or corrupt summaries are skipped with a warning.
pub fn collect_summaries(paths: &[PathBuf]) -> Collected {
    let mut out = Collected::default();
    for path in paths {
        let mut files = Vec::new();
        if let Err(e) = find_summaries(path, &mut files) {
            out.warnings.push(format!("{}: {e}", path.display()));
            continue;
        }
        if files.is_empty() {
            out.warnings.push(format!("{}: no {SUMMARY_FILE} found", path.display()));
        }
        files.sort();
        for f in files {
            match read_summary(&f) {
                Ok(s) => out.summaries.push((f, s)),
                Err(e) => out.warnings.push(format!("skipping {}: {e}", f.display())),
            }
        }
    }
    out
}

fn find_summaries(path: &Path, files: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if path.is_file() {
        files.push(path.to_path_buf());
        return Ok(());
    }
    let direct = path.join(SUMMARY_FILE);
    if direct.is_file() {
        files.push(direct);
        return Ok(());
    }
    for entry in std::fs::read_dir(path)? {
        let p = entry?.path();
        if p.is_dir() {
            find_summaries(&p, files)?;
        }
    }
    Ok(())
}

/// Learners first in their usual order, then constants in table order, then
/// anything else alphabetically.
fn order_key(agent: &str, table: &CompressionTable) -> (usize, String) {
    if let Some(i) = AgentFamily::ALL.iter().position(|f| f.key() == agent) {
        return (i, String::new());
    }
    if let Some(c) = table.by_label(agent) {
        return (AgentFamily::ALL.len() + c.id, String::new());
    }
    (usize::MAX, agent.to_string())
}

/// One row per agent or configuration with mean and spread over its runs.
pub fn report_rows(summaries: &[RunSummary]) -> Vec<Row> {
    let table = CompressionTable::default();
    let mut agents: Vec<&str> = summaries.iter().map(|s| s.agent.as_str()).collect();
    agents.sort_by_key(|a| order_key(a, &table));
    agents.dedup();
    agents
        .into_iter()
        .map(|agent| {
            let runs: Vec<&RunSummary> = summaries.iter().filter(|s| s.agent == agent).collect();
            match agent.parse::<AgentFamily>() {
                Ok(f) => Row::from_summaries(f.display_name(), "rl", &runs),
                Err(_) => Row::from_summaries(agent, "constant", &runs),
            }
        })
        .collect()
}
