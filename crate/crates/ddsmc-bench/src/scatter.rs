//! Two-column plot data.

use std::io::Write;
use std::path::Path;

use anyhow::{ensure, Context};

use crate::results::format_float;

/// Writes coordinates `dims.0` and `dims.1` of every sample, one sample per
/// line, separated by a space.
pub fn export_scatter(samples: &[Vec<f64>], dims: (usize, usize), path: &Path) -> anyhow::Result<()> {
    let width = samples.first().map_or(0, Vec::len);
    ensure!(
        dims.0 < width && dims.1 < width,
        "dims ({}, {}) out of range for samples of dimension {width}",
        dims.0,
        dims.1
    );
    ensure!(
        samples.iter().all(|s| s.len() == width),
        "samples have differing dimensions"
    );
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = std::io::BufWriter::new(file);
    for s in samples {
        writeln!(out, "{} {}", format_float(s[dims.0]), format_float(s[dims.1]))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    out.flush().with_context(|| format!("writing {}", path.display()))
}

/// Reads a file written by [`export_scatter`].
pub fn read_scatter(path: &Path) -> anyhow::Result<Vec<[f64; 2]>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let mut cols = line.split_whitespace().map(str::parse::<f64>);
            match (cols.next(), cols.next(), cols.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => Ok([a, b]),
                _ => anyhow::bail!("{}:{}: expected two numbers", path.display(), i + 1),
            }
        })
        .collect()
}
