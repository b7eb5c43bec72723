//! Run directory layout, the writer lock and the artifact manifest.
//!
//! ```text
//! config.toml                 snapshot written by `gen`
//! configs/<hash>.toml         any other effective config used later
//! universe.bin  neighbors.csv
//! artifacts.csv               path, sha256, config_hash, seed
//! checkpoints/<stage>/model.lclc
//! metrics/<stage>.csv  <stage>_snapshots.csv  <stage>_summary.csv  <stage>.wallclock.txt
//! reports/<name>.*.csv  reports/summary.csv
//! plots/*.svg
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const ENV_RUN_ROOT: &str = "LCL_RUN_ROOT";
pub const MANIFEST: &str = "artifacts.csv";
pub const CONFIG: &str = "config.toml";
pub const UNIVERSE: &str = "universe.bin";
pub const NEIGHBORS: &str = "neighbors.csv";
const LOCK: &str = ".lock";

/// Entries that `gen --force` may delete; anything else is left alone.
pub const MANAGED: [&str; 9] =
    [CONFIG, "configs", UNIVERSE, NEIGHBORS, MANIFEST, "checkpoints", "metrics", "reports", "plots"];

/// Provenance written into or alongside every artifact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Meta {
    pub config_hash: String,
    pub seed: u64,
}

impl Meta {
    pub fn header_line(&self) -> String {
        format!("# config_hash={} seed={}\n", self.config_hash, self.seed)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(64);
    for b in Sha256::digest(bytes) {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Chooses the run directory: explicit flag, then the config's
/// `output_dir`, then `$LCL_RUN_ROOT/default`, then `runs/default`.
pub fn resolve(flag: Option<&Path>, output_dir: &str) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if !output_dir.is_empty() {
        return PathBuf::from(output_dir);
    }
    match std::env::var_os(ENV_RUN_ROOT) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join("default"),
        _ => PathBuf::from("runs").join("default"),
    }
}

#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

/// Held while a command writes; the lock file is removed on drop.
#[derive(Debug)]
pub struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn checkpoint_rel(stage: &str) -> String {
        format!("checkpoints/{stage}/model.lclc")
    }

    pub fn holds_run(&self) -> bool {
        MANAGED.iter().any(|m| self.path(m).exists())
    }

    pub fn lock(&self) -> Result<LockGuard> {
        fs::create_dir_all(&self.root).with_context(|| format!("creating {}", self.root.display()))?;
        let path = self.path(LOCK);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(path).into()),
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }

    /// Removes the managed entries of a previous run.
    pub fn clear(&self) -> Result<()> {
        for m in MANAGED {
            let p = self.path(m);
            if p.is_dir() {
                fs::remove_dir_all(&p).with_context(|| format!("removing {}", p.display()))?;
            } else if p.exists() {
                fs::remove_file(&p).with_context(|| format!("removing {}", p.display()))?;
            }
        }
        Ok(())
    }

    pub fn require(&self, rel: &str, hint: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::MissingInput { path: p, hint: hint.to_string() }.into())
        }
    }

    pub fn read_text(&self, rel: &str, hint: &str) -> Result<String> {
        let p = self.require(rel, hint)?;
        fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))
    }

    fn write_atomic(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let tmp = p.with_extension("partial");
        fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, &p).with_context(|| format!("renaming {}", tmp.display()))?;
        Ok(())
    }

    /// Writes a text artifact behind a `# config_hash=… seed=…` line and
    /// records it in the manifest.
    pub fn write_csv(&self, rel: &str, body: &str, meta: &Meta) -> Result<()> {
        let text = format!("{}{body}", meta.header_line());
        self.write_recorded(rel, text.as_bytes(), meta)
    }

    /// Writes an artifact whose content already carries its provenance, or
    /// a binary whose provenance lives only in the manifest.
    pub fn write_recorded(&self, rel: &str, bytes: &[u8], meta: &Meta) -> Result<()> {
        self.write_atomic(rel, bytes)?;
        self.record(rel, bytes, meta)
    }

    /// Writes a file that stays out of the manifest (non-reproducible
    /// content such as wall-clock timings).
    pub fn write_unrecorded(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        self.write_atomic(rel, bytes)
    }

    fn record(&self, rel: &str, bytes: &[u8], meta: &Meta) -> Result<()> {
        let mut rows = self.manifest()?;
        rows.retain(|r| r.path != rel);
        rows.push(ManifestRow {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            config_hash: meta.config_hash.clone(),
            seed: meta.seed,
        });
        rows.sort_by(|a, b| a.path.cmp(&b.path));
        let mut out = String::from("path,sha256,config_hash,seed\n");
        for r in &rows {
            let _ = writeln!(out, "{},{},{},{}", r.path, r.sha256, r.config_hash, r.seed);
        }
        self.write_atomic(MANIFEST, out.as_bytes())
    }

    pub fn manifest(&self) -> Result<Vec<ManifestRow>> {
        let p = self.path(MANIFEST);
        if !p.exists() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        text.lines()
            .skip(1)
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                match f.as_slice() {
                    [path, sha, hash, seed] => Ok(ManifestRow {
                        path: path.to_string(),
                        sha256: sha.to_string(),
                        config_hash: hash.to_string(),
                        seed: seed.parse().with_context(|| format!("manifest seed in `{l}`"))?,
                    }),
                    _ => anyhow::bail!("malformed manifest row `{l}`"),
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub path: String,
    pub sha256: String,
    pub config_hash: String,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> Meta {
        Meta { config_hash: "00ff00ff00ff00ff".into(), seed: 9 }
    }

    #[test]
    fn sha_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn csv_gets_header_and_manifest_row() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path());
        run.write_csv("reports/x.csv", "a,b\n1,2\n", &meta()).unwrap();
        let text = fs::read_to_string(run.path("reports/x.csv")).unwrap();
        assert_eq!(text, "# config_hash=00ff00ff00ff00ff seed=9\na,b\n1,2\n");
        let rows = run.manifest().unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].sha256, sha256_hex(text.as_bytes()));
        run.write_csv("reports/x.csv", "a,b\n", &meta()).unwrap();
        run.write_recorded("a.bin", &[1, 2], &meta()).unwrap();
        let paths: Vec<String> = run.manifest().unwrap().into_iter().map(|r| r.path).collect();
        assert_eq!(paths, vec!["a.bin", "reports/x.csv"]);
        run.write_unrecorded("metrics/t.txt", b"1.0").unwrap();
        assert_eq!(run.manifest().unwrap().len(), 2);
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path().join("r"));
        let g = run.lock().unwrap();
        let err = run.lock().unwrap_err();
        assert!(matches!(err.downcast_ref::<CliError>(), Some(CliError::Locked(_))));
        drop(g);
        run.lock().unwrap();
    }

    #[test]
    fn clear_only_touches_managed_entries() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path());
        run.write_csv("reports/x.csv", "a\n", &meta()).unwrap();
        fs::write(run.path("notes.md"), "keep").unwrap();
        assert!(run.holds_run());
        run.clear().unwrap();
        assert!(!run.holds_run());
        assert!(run.path("notes.md").exists());
    }

    #[test]
    fn resolution_order() {
        assert_eq!(resolve(Some(Path::new("a")), "b"), PathBuf::from("a"));
        assert_eq!(resolve(None, "b"), PathBuf::from("b"));
    }
}
