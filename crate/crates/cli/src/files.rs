//! Manifest-relative paths and the on-disk dataset.

use std::path::{Component, Path, PathBuf};

use vipr::image::read_png;
use vipr::labels::{read_manifest, write_manifest};
use vipr::nn::Dataset;
use vipr::{GrayImage, Manifest};

use crate::config::Resolver;
use crate::error::{CliError, Context};

pub const MANIFEST: &str = "manifest.jsonl";
pub const RUN_CONFIG: &str = "run_config.txt";

/// A manifest together with the directory its paths are relative to.
pub struct Located {
    pub manifest: Manifest,
    pub dir: PathBuf,
}

impl Located {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }
}

/// Accepts either a manifest file or a directory holding `manifest.jsonl`.
pub fn load_manifest(stage: &str, path: &Path) -> Result<Located, CliError> {
    let file = if path.is_dir() { path.join(MANIFEST) } else { path.to_path_buf() };
    let bytes = std::fs::read(&file).at(stage, &file)?;
    let manifest = read_manifest(&bytes).at(stage, &file)?;
    if manifest.is_empty() {
        return Err(CliError::data(format!("{stage}: {}: manifest has no records", file.display())));
    }
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Located { manifest, dir })
}

pub fn save_manifest(stage: &str, dir: &Path, m: &Manifest) -> Result<(), CliError> {
    let file = dir.join(MANIFEST);
    let bytes = write_manifest(m).at(stage, &file)?;
    std::fs::write(&file, bytes).at(stage, &file)
}

pub fn create_dir(stage: &str, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).at(stage, dir)
}

/// Logs the resolved configuration and stores it at `file`.
pub fn record_config(stage: &str, file: &Path, r: &Resolver) -> Result<(), CliError> {
    r.log();
    std::fs::write(file, r.render()).at(stage, file)
}

/// `target` expressed relative to `base` (both made absolute first).
pub fn relative_path(base: &Path, target: &Path) -> PathBuf {
    let abs = |p: &Path| {
        let p = std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
        let mut out = PathBuf::new();
        for c in p.components() {
            match c {
                Component::CurDir => {}
                Component::ParentDir => {
                    out.pop();
                }
                c => out.push(c),
            }
        }
        out
    };
    let (b, t) = (abs(base), abs(target));
    let bc: Vec<_> = b.components().collect();
    let tc: Vec<_> = t.components().collect();
    let common = bc.iter().zip(&tc).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..bc.len() {
        out.push("..");
    }
    for c in &tc[common..] {
        out.push(c);
    }
    out
}

pub fn path_string(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

pub fn file_stem(p: &str) -> String {
    Path::new(p)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.to_string())
}

/// Labeled PNGs read on demand.
pub struct PngDataset {
    pub paths: Vec<PathBuf>,
    pub labels: Vec<u8>,
    pub size: usize,
}

impl Dataset for PngDataset {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn image(&self, i: usize) -> vipr::Result<GrayImage> {
        let img = read_png(&self.paths[i])?;
        if img.dims() != (self.size, self.size) {
            return Err(vipr::Error::Validation(format!(
                "{}: expected {}x{}, got {}x{} (run standardize first)",
                self.paths[i].display(),
                self.size,
                self.size,
                img.width(),
                img.height()
            )));
        }
        Ok(img)
    }

    fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths() {
        assert_eq!(relative_path(Path::new("/a/b"), Path::new("/a/b/c/d.png")), PathBuf::from("c/d.png"));
        assert_eq!(relative_path(Path::new("/a/b"), Path::new("/a/x/d.png")), PathBuf::from("../x/d.png"));
        assert_eq!(relative_path(Path::new("/a/./b"), Path::new("/a/b/../y")), PathBuf::from("../y"));
        assert_eq!(file_stem("frames/v_00020.png"), "v_00020");
    }
}
