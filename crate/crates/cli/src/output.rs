use std::fs;
use std::io::Write;
use std::path::Path;

use crate::CliError;

/// A named file to be published in the output directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

impl Artifact {
    pub fn json(name: &str, value: &serde_json::Value) -> Self {
        let mut contents = serde_json::to_string_pretty(value).expect("JSON values serialise");
        contents.push('\n');
        Self { name: name.into(), contents }
    }
}

/// 17 significant digits in scientific notation; round-trips every f64.
pub fn format_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn io(e: std::io::Error, what: &str) -> CliError {
    CliError::Io(format!("{what}: {e}"))
}

/// Writes every artifact into a scratch directory next to `dir`, then moves
/// them into `dir`. A failure before the move leaves `dir` untouched.
pub fn write_atomically(dir: &Path, artifacts: &[Artifact]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io(e, &format!("creating {}", dir.display())))?;
    let scratch = tempfile::Builder::new()
        .prefix(".mfc-lab-")
        .tempdir_in(dir)
        .map_err(|e| io(e, "creating scratch directory"))?;
    for a in artifacts {
        let path = scratch.path().join(&a.name);
        let mut f = fs::File::create(&path).map_err(|e| io(e, &a.name))?;
        f.write_all(a.contents.as_bytes()).map_err(|e| io(e, &a.name))?;
        f.sync_all().map_err(|e| io(e, &a.name))?;
    }
    for a in artifacts {
        fs::rename(scratch.path().join(&a.name), dir.join(&a.name)).map_err(|e| io(e, &a.name))?;
    }
    Ok(())
}
