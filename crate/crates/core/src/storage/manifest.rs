//! Atomic manifest persistence: write to a sibling temp file, fsync, rename.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::dispatch::RunManifest;
use crate::error::{Error, Result};

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_else(|| "manifest".into());
    name.push(".tmp");
    path.with_file_name(name)
}

/// First half of an atomic write. The destination is untouched until
/// [`commit_temp`] renames the returned file over it.
pub(crate) fn write_temp(manifest: &RunManifest, path: &Path) -> Result<PathBuf> {
    let tmp = temp_path(path);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, manifest).map_err(|e| Error::Export(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
    let file = w.into_inner().map_err(|e| Error::io(&tmp, e.into_error()))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    Ok(tmp)
}

pub(crate) fn commit_temp(tmp: &Path, path: &Path) -> Result<()> {
    fs::rename(tmp, path).map_err(|e| Error::io(path, e))
}

pub fn persist_manifest(manifest: &RunManifest, path: &Path) -> Result<()> {
    let tmp = write_temp(manifest, path)?;
    commit_temp(&tmp, path)
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest: RunManifest = serde_json::from_slice(&raw)
        .map_err(|e| Error::Manifest(format!("{} is corrupt: {e}", path.display())))?;
    manifest.check()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::tests::{fixture_scale, mock_model, personas};
    use crate::dispatch::{plan_run, RunConfig};

    fn manifest() -> RunManifest {
        let cfg = RunConfig::new("m", &["s"], &["p0", "p1"], vec![mock_model("a")]);
        plan_run(&cfg, &[fixture_scale("s", 4)], &personas(2)).unwrap()
    }

    #[test]
    fn persist_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = manifest();
        persist_manifest(&m, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), m);
    }

    #[test]
    fn crash_before_rename_keeps_previous_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let before = manifest();
        persist_manifest(&before, &path).unwrap();
        let mut after = before.clone();
        after.accumulated_cost_usd = 99.0;
        let tmp = write_temp(&after, &path).unwrap();
        // simulated crash: the rename never happens
        assert!(tmp.exists());
        assert_eq!(load_manifest(&path).unwrap(), before);
        commit_temp(&tmp, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap().accumulated_cost_usd, 99.0);
    }

    #[test]
    fn tampered_job_count_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut m = manifest();
        m.jobs.pop();
        persist_manifest(&m, &path).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Manifest(msg)) if msg.contains("job count")));
    }

    #[test]
    fn corrupt_and_wrong_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        fs::write(&path, b"{ not json").unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Manifest(_))));
        let mut m = manifest();
        m.schema_version = 7;
        persist_manifest(&m, &path).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Manifest(msg)) if msg.contains("schema_version")));
    }
}
