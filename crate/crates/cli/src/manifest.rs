//! Flat `key=value` run manifests.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    command: String,
    entries: BTreeMap<String, String>,
}

impl Manifest {
    /// `argv` is the full command line; it is recorded so the run can be
    /// repeated verbatim.
    pub fn new(command: &str, argv: &[String]) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert("command".to_string(), command.to_string());
        entries.insert("version".to_string(), env!("CARGO_PKG_VERSION").to_string());
        entries.insert("argv".to_string(), argv.join(" "));
        Self {
            command: command.to_string(),
            entries,
        }
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        // Values stay on one line so the file parses as key=value.
        let v = value.to_string().replace(['\n', '\r'], " ");
        self.entries.insert(key.into(), v);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn path_in(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}.manifest", self.command))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = self.path_in(dir);
        fs::write(&path, self.render())
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_sorted_single_line_pairs() {
        let mut m = Manifest::new("train", &["loadcast".into(), "train".into()]);
        m.set("zeta", 1);
        m.set("alpha", "two\nlines");
        let text = m.render();
        assert!(text.starts_with("alpha=two lines\nargv=loadcast train\ncommand=train\n"));
        assert!(text.ends_with("zeta=1\n"));
        assert_eq!(m.get("zeta"), Some("1"));
    }
}
