//! Output staging: files go to a hidden sibling directory that is renamed
//! over the destination only when the whole command succeeds.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.toml";

pub struct Staging {
    tmp: PathBuf,
    dest: PathBuf,
    files: Vec<String>,
    committed: bool,
}

impl Staging {
    /// Refuses destinations that exist and are neither empty nor an earlier
    /// run's output.
    pub fn new(dest: &Path) -> Result<Self, CliError> {
        if dest.exists() {
            let earlier = dest.join(MANIFEST).is_file();
            let empty = dest.is_dir() && fs::read_dir(dest)?.next().is_none();
            if !earlier && !empty {
                return Err(CliError::Validation(format!(
                    "output {} exists and is not a budis output directory",
                    dest.display()
                )));
            }
        }
        let name = dest
            .file_name()
            .ok_or_else(|| CliError::Validation(format!("invalid output path {}", dest.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = dest
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(parent)?;
        let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir(&tmp)?;
        Ok(Self {
            tmp,
            dest: dest.to_path_buf(),
            files: Vec::new(),
            committed: false,
        })
    }

    /// Files written so far, in order.
    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn write<F>(&mut self, name: &str, body: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
    {
        let mut w = BufWriter::new(File::create(self.tmp.join(name))?);
        body(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn commit(mut self) -> Result<PathBuf, CliError> {
        if self.dest.exists() {
            fs::remove_dir_all(&self.dest)?;
        }
        fs::rename(&self.tmp, &self.dest)?;
        self.committed = true;
        Ok(self.dest.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}
