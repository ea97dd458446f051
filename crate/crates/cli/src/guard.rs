use std::path::Path;

use crate::{CliError, CliResult};

/// Writes outputs but refuses to replace an existing file with different
/// contents unless forced. Identical rewrites are no-ops.
pub struct Writer {
    pub force: bool,
}

impl Writer {
    pub fn write(&self, path: &Path, bytes: &[u8]) -> CliResult {
        if let Ok(old) = std::fs::read(path) {
            if old == bytes {
                return Ok(());
            }
            if !self.force {
                return Err(CliError::Usage(format!(
                    "{} exists with different contents; pass --force to overwrite",
                    path.display()
                )));
            }
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| io_err(path, e))
    }
}

pub fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rewrite_passes_and_differing_needs_force() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        let w = Writer { force: false };
        w.write(&p, b"one").unwrap();
        w.write(&p, b"one").unwrap();
        let err = w.write(&p, b"two").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        Writer { force: true }.write(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
    }
}
