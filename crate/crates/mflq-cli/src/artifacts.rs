//! Output artifacts: atomic file writes, run manifests, and deterministic
//! table formatting.
//!
//! Every command records what it did in a small JSON manifest next to its
//! outputs, so a directory of artifacts is self-describing: which subcommand
//! produced it, with which configuration, and how long the run took.  The
//! manifest is the only artifact containing timing, so all other outputs are
//! byte-reproducible across runs with the same inputs.
//!
//! Files are written atomically: content goes to a temporary file in the
//! destination directory, which is then renamed over the target.  A crash or
//! error mid-write never leaves a truncated artifact behind.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mflq::{Error, RegimeFamily, Result};
use serde::Serialize;

/// Record of one CLI invocation, written alongside the command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    /// Subcommand name, e.g. `"solve"`.
    pub command: String,
    /// Crate version that produced the artifacts.
    pub version: String,
    /// Fully resolved configuration: every input path, flag, and default.
    pub configuration: serde_json::Value,
    /// Paths of the files this run wrote, as passed on the command line.
    pub outputs: Vec<String>,
    /// Wall-clock duration of the run.  Excluded from reproducibility
    /// comparisons; everything else in the output set is deterministic.
    pub duration_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, configuration: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            configuration,
            outputs: Vec::new(),
            duration_seconds: 0.0,
        }
    }

    /// Register an output file (records the path as given on the command line).
    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Where the manifest itself lives: `<file>.manifest.json` next to a
    /// single-file output, `<dir>/manifest.json` for a directory of outputs,
    /// and `mflq-<command>.manifest.json` in the working directory for
    /// commands with no file outputs.
    pub fn path_for(command: &str, primary_output: Option<&Path>) -> PathBuf {
        match primary_output {
            Some(path) if path.is_dir() => path.join("manifest.json"),
            Some(path) => {
                let mut name = path.as_os_str().to_os_string();
                name.push(".manifest.json");
                PathBuf::from(name)
            }
            None => PathBuf::from(format!("mflq-{command}.manifest.json")),
        }
    }

    /// Stamp the duration and write the manifest atomically.
    pub fn finish(mut self, started: Instant, path: &Path) -> Result<()> {
        self.duration_seconds = started.elapsed().as_secs_f64();
        let mut body = serde_json::to_string_pretty(&self)
            .map_err(|source| Error::Schema(format!("manifest serialization: {source}")))?;
        body.push('\n');
        write_atomic(path, body.as_bytes())
    }
}

/// Write `content` to `path` atomically (temp file + rename in the same
/// directory), creating parent directories as needed.
pub fn write_atomic(path: &Path, content: &[u8]) -> Result<()> {
    let io_err = |source: std::io::Error| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let parent = match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => dir.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent).map_err(io_err)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&parent).map_err(io_err)?;
    tmp.write_all(content).map_err(io_err)?;
    tmp.flush().map_err(io_err)?;
    tmp.persist(path).map_err(|err| io_err(err.error))?;
    Ok(())
}

/// Atomic write for content produced incrementally (e.g. large CSV files):
/// the callback streams into a buffered temp file in the destination
/// directory, which is then renamed over the target.
pub fn write_atomic_stream<F>(path: &Path, write_fn: F) -> Result<()>
where
    F: FnOnce(&mut dyn std::io::Write) -> std::io::Result<()>,
{
    let io_err = |source: std::io::Error| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let parent = match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => dir.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent).map_err(io_err)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&parent).map_err(io_err)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        write_fn(&mut buf).map_err(io_err)?;
        buf.flush().map_err(io_err)?;
    }
    tmp.persist(path).map_err(|err| io_err(err.error))?;
    Ok(())
}

/// Format one matrix for terminal tables: bare number for 1x1, bracketed
/// rows otherwise.  Fixed precision keeps the output byte-stable.
pub fn format_matrix(m: &nalgebra::DMatrix<f64>) -> String {
    if m.nrows() == 1 && m.ncols() == 1 {
        return format!("{:.9}", m[(0, 0)]);
    }
    let rows: Vec<String> = m
        .row_iter()
        .map(|row| {
            let entries: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
            entries.join(", ")
        })
        .collect();
    format!("[{}]", rows.join("; "))
}

/// Render a regime-indexed family as an indented table block (1-based
/// regime labels, matching the CLI convention).
pub fn family_table(label: &str, family: &RegimeFamily) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{label}");
    for (i, m) in family.iter().enumerate() {
        let _ = writeln!(out, "  regime {}: {}", i + 1, format_matrix(m));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn scalar_matrices_format_as_bare_numbers() {
        let m = dmatrix![0.360832729865_f64];
        assert_eq!(format_matrix(&m), "0.360832730");
        let block = dmatrix![1.0, 2.0; 3.0, 4.5];
        assert_eq!(
            format_matrix(&block),
            "[1.000000000, 2.000000000; 3.000000000, 4.500000000]"
        );
    }

    #[test]
    fn family_table_labels_regimes_from_one() {
        let fam = RegimeFamily::new(vec![dmatrix![1.0], dmatrix![2.0]]).unwrap();
        let text = family_table("P", &fam);
        assert!(text.contains("regime 1: 1.000000000"));
        assert!(text.contains("regime 2: 2.000000000"));
    }

    #[test]
    fn manifest_paths_follow_output_shape() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(
            RunManifest::path_for("solve", Some(Path::new("out/solution.json"))),
            PathBuf::from("out/solution.json.manifest.json")
        );
        assert_eq!(
            RunManifest::path_for("reproduce", Some(dir.path())),
            dir.path().join("manifest.json")
        );
        assert_eq!(
            RunManifest::path_for("validate", None),
            PathBuf::from("mflq-validate.manifest.json")
        );
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
    }

    #[test]
    fn manifest_serializes_with_duration() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut manifest = RunManifest::new("solve", serde_json::json!({"tol": 1e-10}));
        manifest.record_output(Path::new("solution.json"));
        manifest.finish(Instant::now(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["command"], "solve");
        assert_eq!(value["outputs"][0], "solution.json");
        assert!(value["duration_seconds"].as_f64().unwrap() >= 0.0);
    }
}
