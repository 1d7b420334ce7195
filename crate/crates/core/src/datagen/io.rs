use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::IrregularSequence;
use crate::error::{ensure, Error, Result};

/// Writes one JSON record per line. Timestamps use the shortest decimal that
/// round-trips exactly.
pub fn write_dataset(sequences: &[IrregularSequence], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in sequences {
        let line = serde_json::to_string(s).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a dataset written by [`write_dataset`]. Blank lines are skipped.
/// Malformed records and invalid sequences are reported with their 1-based
/// line number.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<IrregularSequence>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), line: i + 1, message };
        let seq: IrregularSequence = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        seq.validate(None).map_err(|e| parse_err(e.to_string()))?;
        out.push(seq);
    }
    Ok(out)
}

/// Patient-level split. Validation and test sizes are `floor(n·f)` and the
/// remainder goes to training. Each part keeps the cohort order.
pub fn split(
    cohort: &[IrregularSequence],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<IrregularSequence>, Vec<IrregularSequence>, Vec<IrregularSequence>)> {
    let (a, b, c) = fractions;
    ensure!(
        [a, b, c].iter().all(|f| f.is_finite() && (0.0..=1.0).contains(f)),
        "split fractions must lie in [0, 1], got {fractions:?}"
    );
    ensure!((a + b + c - 1.0).abs() <= 1e-9, "split fractions sum to {}, not 1", a + b + c);
    let n = cohort.len();
    let n_valid = (n as f64 * b + 1e-9).floor() as usize;
    let n_test = (n as f64 * c + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut part = vec![0u8; n];
    for &i in &order[..n_valid] {
        part[i] = 1;
    }
    for &i in &order[n_valid..n_valid + n_test] {
        part[i] = 2;
    }
    let pick = |p: u8| cohort.iter().zip(&part).filter(|(_, &q)| q == p).map(|(s, _)| s.clone()).collect();
    Ok((pick(0), pick(1), pick(2)))
}
