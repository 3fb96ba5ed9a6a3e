//! Run settings: command-line flags layered over an optional flat
//! `key=value` file. Keys are the long flag names without dashes.

use std::collections::BTreeMap;
use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use mtens_core::{Error, Problem, Result, TrainConfig};

pub const DATA_ROOT_VAR: &str = "MTENS_DATA_ROOT";

/// Flags shared by every subcommand. Everything is optional here so a config
/// file can fill the gaps; flags win.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Flat `key=value` file; keys mirror the long flag names.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// coarse-emotion | fine-emotion | fine-sentiment
    #[arg(long, global = true)]
    pub problem: Option<String>,
    /// Dataset TSV. Relative paths are looked up under $MTENS_DATA_ROOT when set.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Whitespace-separated embedding file (token then values).
    #[arg(long, global = true)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    pub embedding_dim: Option<usize>,
    /// Lexicon manifest (`name<TAB>kind<TAB>path` per line).
    #[arg(long, global = true)]
    pub lexicons: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub patience: Option<usize>,
    /// Tokens kept per sentence (longer sentences keep their tail).
    #[arg(long, global = true)]
    pub max_len: Option<usize>,
    /// Train/validation/test percentages, e.g. `70,10,20`.
    #[arg(long, global = true)]
    pub split: Option<String>,
    /// Use k-fold cross-validation with this many folds instead of `--split`.
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    /// Zero-based fold used as the test set with `--folds`.
    #[arg(long, global = true)]
    pub fold: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

const KEYS: [&str; 15] = [
    "problem",
    "data",
    "embeddings",
    "embedding-dim",
    "lexicons",
    "seed",
    "epochs",
    "batch-size",
    "patience",
    "max-len",
    "split",
    "folds",
    "fold",
    "out",
    "config",
];

fn parse_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Usage(format!("{}:{}: expected key=value", path.display(), n + 1))
        })?;
        let key = key.trim().replace('_', "-");
        if !KEYS.contains(&key.as_str()) || key == "config" {
            return Err(Error::Usage(format!(
                "{}:{}: unknown key `{key}`",
                path.display(),
                n + 1
            )));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

fn fill<T: FromStr>(slot: &mut Option<T>, file: &BTreeMap<String, String>, key: &str) -> Result<()>
where
    T::Err: std::fmt::Display,
{
    if slot.is_none() {
        if let Some(raw) = file.get(key) {
            *slot = Some(
                raw.parse()
                    .map_err(|e| Error::Usage(format!("config key `{key}`: {e}")))?,
            );
        }
    }
    Ok(())
}

impl RunArgs {
    /// Fills unset flags from the config file, if one was given.
    pub fn merged(mut self) -> Result<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let f = parse_file(&path)?;
        fill(&mut self.problem, &f, "problem")?;
        fill(&mut self.data, &f, "data")?;
        fill(&mut self.embeddings, &f, "embeddings")?;
        fill(&mut self.embedding_dim, &f, "embedding-dim")?;
        fill(&mut self.lexicons, &f, "lexicons")?;
        fill(&mut self.seed, &f, "seed")?;
        fill(&mut self.epochs, &f, "epochs")?;
        fill(&mut self.batch_size, &f, "batch-size")?;
        fill(&mut self.patience, &f, "patience")?;
        fill(&mut self.max_len, &f, "max-len")?;
        fill(&mut self.split, &f, "split")?;
        fill(&mut self.folds, &f, "folds")?;
        fill(&mut self.fold, &f, "fold")?;
        fill(&mut self.out, &f, "out")?;
        Ok(self)
    }

    pub fn problem(&self) -> Result<Problem> {
        self.problem
            .as_deref()
            .unwrap_or("coarse-emotion")
            .parse()
            .map_err(|e: Error| Error::Usage(e.to_string()))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
            .unwrap_or(mtens_core::embedding::EMBEDDING_DIM)
    }

    pub fn max_len(&self) -> usize {
        self.max_len
            .unwrap_or(mtens_core::embedding::DEFAULT_MAX_LEN)
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&dir)
            .map_err(|e| Error::Usage(format!("cannot create {}: {e}", dir.display())))?;
        Ok(dir)
    }

    pub fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            patience: self.patience.unwrap_or(d.patience),
            task_weights: None,
            seed: self.seed(),
        }
    }

    pub fn split_ratios(&self) -> Result<[u32; 3]> {
        let Some(raw) = &self.split else {
            return Ok([70, 10, 20]);
        };
        let parts: Vec<u32> = raw
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Usage(format!("--split `{raw}`: {e}")))?;
        <[u32; 3]>::try_from(parts)
            .map_err(|_| Error::Usage(format!("--split `{raw}` needs three numbers")))
    }

    fn required(&self, value: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
        let path = value
            .as_ref()
            .ok_or_else(|| Error::Usage(format!("--{flag} is required")))?;
        Ok(resolve_input(path))
    }

    pub fn data_path(&self) -> Result<PathBuf> {
        self.required(&self.data, "data")
    }

    pub fn embeddings_path(&self) -> Result<PathBuf> {
        self.required(&self.embeddings, "embeddings")
    }

    pub fn lexicons_path(&self) -> Option<PathBuf> {
        self.lexicons.as_deref().map(resolve_input)
    }
}

/// Relative input paths that do not exist as given are looked up under the
/// data root.
pub fn resolve_input(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(root) = env::var_os(DATA_ROOT_VAR) {
            return PathBuf::from(root).join(path);
        }
    }
    path.to_path_buf()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(
            &path,
            "# comment\nepochs = 7\nbatch_size=4\nproblem=fine-emotion\n",
        )
        .unwrap();
        let args = RunArgs {
            config: Some(path),
            epochs: Some(2),
            ..RunArgs::default()
        }
        .merged()
        .unwrap();
        assert_eq!(args.epochs, Some(2));
        assert_eq!(args.batch_size, Some(4));
        assert_eq!(args.problem().unwrap(), Problem::FineEmotion);
    }

    #[test]
    fn unknown_key_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.conf");
        fs::write(&path, "learning-rate=0.1\n").unwrap();
        let args = RunArgs {
            config: Some(path),
            ..RunArgs::default()
        };
        assert!(matches!(args.merged(), Err(Error::Usage(_))));
    }

    #[test]
    fn split_parsing() {
        let mut args = RunArgs::default();
        assert_eq!(args.split_ratios().unwrap(), [70, 10, 20]);
        args.split = Some("80, 10, 10".into());
        assert_eq!(args.split_ratios().unwrap(), [80, 10, 10]);
        args.split = Some("80,20".into());
        assert!(args.split_ratios().is_err());
    }
}
