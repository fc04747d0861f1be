//! `key = value` config files for `train`.
//!
//! Keys are the long flag names without the leading dashes. `#` starts a
//! comment. Unknown keys and repeated keys are errors.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use chordmixer::Error;

/// Every key a train config file may set, one per `train` flag.
pub const TRAIN_KEYS: &[&str] = &[
    "seed",
    "out",
    "lambda",
    "count",
    "dataset",
    "track-size",
    "hidden",
    "lr",
    "batch-size",
    "epochs",
    "n-max",
    "head",
    "dropout",
    "eval-bins",
    "eval-every",
    "clip",
    "resume",
];

#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    path: String,
}

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self, Error> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if !TRAIN_KEYS.contains(&key) {
                return Err(err(format!("unknown key '{key}'")));
            }
            if value.is_empty() {
                return Err(err(format!("missing value for '{key}'")));
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(err(format!("duplicate key '{key}'")));
            }
        }
        Ok(Self {
            values,
            path: path.display().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text, path)
    }

    /// The flag value if given, else the file value, else `None`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, Error> {
        debug_assert!(TRAIN_KEYS.contains(&key), "{key}");
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                Error::Config(format!("{}: invalid value '{raw}' for '{key}'", self.path))
            }),
        }
    }
}
