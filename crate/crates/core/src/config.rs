//! Experiment configuration files.
//!
//! A flat `key = value` format with `[section]` headers and `#` comments:
//!
//! ```text
//! [experiment]
//! seed = 1
//! rounds = 200
//! eval_every = 1
//! output = metrics.csv
//!
//! [federation]
//! n_clients = 100
//! clients_per_round = 10
//! local_steps = 5
//! batch_size = 50
//! learning_rate = 0.15
//!
//! [compressor]
//! kind = fedfq            # none | uniform | fedfq
//! bits = 2                # uniform only
//! bits_per_param = 1.0    # fedfq only
//!
//! [cgsa]
//! initial_temperature = 1000
//! cooling_rate = 0.995
//! min_temperature = 1e-6
//! max_iterations = 5000
//! reverse_probability = 0.3
//!
//! [data]
//! source = synthetic      # synthetic | file
//! classes = 10
//! dim = 20
//! per_class = 600
//! separation = 3.0
//! path = data.txt         # file only, relative to the config file
//! test_fraction = 0.1667
//! partition = label_shard # label_shard | iid
//! classes_per_client = 1
//!
//! [model]
//! kind = logistic         # logistic | mlp
//! hidden = 32             # mlp only
//! ```
//!
//! Every key is optional; omitted keys keep the defaults shown above (the
//! compressor defaults to `none`). Errors point at the offending line.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cgsa::CgsaParams;
use crate::error::{Error, Result};
use crate::flsim::{Compressor, FederatedData, FlConfig};
use crate::mlkit::{make_synthetic, partition_iid, partition_label_shard, Dataset, ModelKind, ModelSpec};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic { classes: usize, dim: usize, per_class: usize, separation: f64 },
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionKind {
    Iid,
    LabelShard { classes_per_client: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub source: DataSource,
    /// Share of the samples held out for evaluation.
    pub test_fraction: f64,
    pub partition: PartitionKind,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic { classes: 10, dim: 20, per_class: 600, separation: 3.0 },
            test_fraction: 1.0 / 6.0,
            partition: PartitionKind::LabelShard { classes_per_client: 1 },
        }
    }
}

impl DataSpec {
    /// Loads or generates the samples, holds out the test set and splits the
    /// rest across `n_clients`. Depends only on `seed`.
    pub fn build(&self, n_clients: usize, seed: u64) -> Result<FederatedData> {
        let all = match &self.source {
            DataSource::Synthetic { classes, dim, per_class, separation } => {
                make_synthetic(*classes, *dim, *per_class, *separation, &mut stream(seed, Purpose::Data, 0, 0))?
            }
            DataSource::File(path) => {
                let raw = Dataset::load(path)?;
                let mut order: Vec<usize> = (0..raw.len()).collect();
                rand::seq::SliceRandom::shuffle(&mut order[..], &mut stream(seed, Purpose::Data, 0, 0));
                raw.subset(&order)?
            }
        };
        let n_test = ((all.len() as f64) * self.test_fraction).round() as usize;
        let (test, train) = all.split(n_test)?;
        let mut rng = stream(seed, Purpose::Partition, 0, 0);
        let partition = match self.partition {
            PartitionKind::Iid => partition_iid(&train, n_clients, &mut rng)?,
            PartitionKind::LabelShard { classes_per_client } => {
                partition_label_shard(&train, n_clients, classes_per_client, &mut rng)?
            }
        };
        Ok(FederatedData { clients: partition.clients, test })
    }

    /// Feature dimension and class count without generating data.
    pub fn shape(&self) -> Result<(usize, usize)> {
        match &self.source {
            DataSource::Synthetic { classes, dim, .. } => Ok((*dim, *classes)),
            DataSource::File(path) => {
                let data = Dataset::load(path)?;
                Ok((data.dim(), data.classes()))
            }
        }
    }
}

/// Everything one run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub fl: FlConfig,
    pub data: DataSpec,
    pub model: ModelKind,
    /// Search settings, also applied to compressors given on the command line.
    pub cgsa: CgsaParams,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            fl: FlConfig::default(),
            data: DataSpec::default(),
            model: ModelKind::LogisticRegression,
            cgsa: CgsaParams::default(),
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path.parent())
    }

    /// The configured compressor replaced by `compressor`, keeping the
    /// configured search settings for `fedfq`.
    pub fn with_compressor(&self, compressor: Compressor) -> Self {
        let mut cfg = self.clone();
        cfg.fl.compressor = match compressor {
            Compressor::FedFq { bits_per_param, .. } => Compressor::FedFq { bits_per_param, cgsa: self.cgsa },
            other => other,
        };
        cfg
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let (dim, classes) = self.data.shape()?;
        ModelSpec::new(self.model, dim, classes)
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let entries = Entries::parse(text)?;
        let mut cfg = ExperimentConfig::default();
        let fl = &mut cfg.fl;

        fl.seed = entries.get("experiment", "seed")?.unwrap_or(fl.seed);
        fl.rounds = entries.get("experiment", "rounds")?.unwrap_or(fl.rounds);
        fl.eval_every = entries.get("experiment", "eval_every")?.unwrap_or(fl.eval_every);
        cfg.output = entries.raw("experiment", "output").map(|(_, v)| resolve(base, v));

        fl.n_clients = entries.get("federation", "n_clients")?.unwrap_or(fl.n_clients);
        fl.clients_per_round = entries.get("federation", "clients_per_round")?.unwrap_or(fl.clients_per_round);
        fl.local_steps = entries.get("federation", "local_steps")?.unwrap_or(fl.local_steps);
        fl.batch_size = entries.get("federation", "batch_size")?.unwrap_or(fl.batch_size);
        fl.learning_rate = entries.get("federation", "learning_rate")?.unwrap_or(fl.learning_rate);

        let d = CgsaParams::default();
        let cgsa = CgsaParams {
            initial_temperature: entries.get("cgsa", "initial_temperature")?.unwrap_or(d.initial_temperature),
            cooling_rate: entries.get("cgsa", "cooling_rate")?.unwrap_or(d.cooling_rate),
            min_temperature: entries.get("cgsa", "min_temperature")?.unwrap_or(d.min_temperature),
            max_iterations: entries.get("cgsa", "max_iterations")?.unwrap_or(d.max_iterations),
            reverse_probability: entries.get("cgsa", "reverse_probability")?.unwrap_or(d.reverse_probability),
        };
        if let Err(e) = cgsa.validate() {
            return Err(entries.anchor("cgsa", e));
        }
        cfg.cgsa = cgsa;

        let kind = entries.raw("compressor", "kind");
        fl.compressor = match kind.map(|(line, v)| (line, v.to_ascii_lowercase())) {
            None => Compressor::None,
            Some((_, k)) if k == "none" => Compressor::None,
            Some((_, k)) if k == "uniform" => Compressor::Uniform(entries.require("compressor", "bits")?),
            Some((_, k)) if k == "fedfq" => Compressor::FedFq {
                bits_per_param: entries.get("compressor", "bits_per_param")?.unwrap_or(1.0),
                cgsa,
            },
            Some((line, k)) => {
                return Err(Error::ConfigLine { line, message: format!("unknown compressor kind {k:?}") })
            }
        };
        if let Err(e) = fl.compressor.validate() {
            return Err(entries.anchor("compressor", e));
        }
        if let Err(e) = fl.validate() {
            return Err(entries.anchor("federation", e));
        }

        cfg.data = parse_data(&entries, base)?;
        cfg.model = match entries.raw("model", "kind").map(|(l, v)| (l, v.to_ascii_lowercase())) {
            None => ModelKind::LogisticRegression,
            Some((_, k)) if k == "logistic" => ModelKind::LogisticRegression,
            Some((_, k)) if k == "mlp" => ModelKind::Mlp { hidden: entries.get("model", "hidden")?.unwrap_or(32) },
            Some((line, k)) => return Err(Error::ConfigLine { line, message: format!("unknown model kind {k:?}") }),
        };
        if let ModelKind::Mlp { hidden: 0 } = cfg.model {
            return Err(entries.anchor("model", Error::Config("hidden must be positive".into())));
        }
        Ok(cfg)
    }
}

fn parse_data(entries: &Entries, base: Option<&Path>) -> Result<DataSpec> {
    let defaults = DataSpec::default();
    let DataSource::Synthetic { classes, dim, per_class, separation } = defaults.source else {
        unreachable!("default data is synthetic")
    };
    let source = match entries.raw("data", "source").map(|(l, v)| (l, v.to_ascii_lowercase())) {
        None => None,
        Some((_, s)) if s == "synthetic" => None,
        Some((_, s)) if s == "file" => {
            let (line, path) = entries
                .raw("data", "path")
                .ok_or_else(|| entries.anchor("data", Error::Config("file source needs `path`".into())))?;
            let path = resolve(base, path);
            if !path.is_file() {
                return Err(Error::ConfigLine { line, message: format!("no such file {}", path.display()) });
            }
            Some(DataSource::File(path))
        }
        Some((line, s)) => return Err(Error::ConfigLine { line, message: format!("unknown data source {s:?}") }),
    };
    let source = match source {
        Some(s) => s,
        None => {
            let s = DataSource::Synthetic {
                classes: entries.get("data", "classes")?.unwrap_or(classes),
                dim: entries.get("data", "dim")?.unwrap_or(dim),
                per_class: entries.get("data", "per_class")?.unwrap_or(per_class),
                separation: entries.get("data", "separation")?.unwrap_or(separation),
            };
            if let DataSource::Synthetic { classes, dim, per_class, separation } = s {
                if classes < 2 || dim == 0 || per_class == 0 || separation.is_nan() || separation < 0.0 {
                    return Err(entries.anchor(
                        "data",
                        Error::Config("need classes >= 2, dim >= 1, per_class >= 1, separation >= 0".into()),
                    ));
                }
            }
            s
        }
    };
    let test_fraction: f64 = entries.get("data", "test_fraction")?.unwrap_or(defaults.test_fraction);
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(entries.anchor("data", Error::Config("test_fraction must lie in (0, 1)".into())));
    }
    let partition = match entries.raw("data", "partition").map(|(l, v)| (l, v.to_ascii_lowercase())) {
        Some((_, p)) if p == "iid" => PartitionKind::Iid,
        None => PartitionKind::LabelShard { classes_per_client: entries.get("data", "classes_per_client")?.unwrap_or(1) },
        Some((_, p)) if p == "label_shard" => {
            PartitionKind::LabelShard { classes_per_client: entries.get("data", "classes_per_client")?.unwrap_or(1) }
        }
        Some((line, p)) => return Err(Error::ConfigLine { line, message: format!("unknown partition {p:?}") }),
    };
    Ok(DataSpec { source, test_fraction, partition })
}

fn resolve(base: Option<&Path>, value: &str) -> PathBuf {
    let path = PathBuf::from(value);
    match base {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path,
    }
}

const KNOWN: &[(&str, &[&str])] = &[
    ("experiment", &["seed", "rounds", "eval_every", "output"]),
    ("federation", &["n_clients", "clients_per_round", "local_steps", "batch_size", "learning_rate"]),
    ("compressor", &["kind", "bits", "bits_per_param"]),
    (
        "cgsa",
        &["initial_temperature", "cooling_rate", "min_temperature", "max_iterations", "reverse_probability"],
    ),
    (
        "data",
        &["source", "classes", "dim", "per_class", "separation", "path", "test_fraction", "partition", "classes_per_client"],
    ),
    ("model", &["kind", "hidden"]),
];

/// Parsed `(section, key) -> (line, value)` pairs.
struct Entries {
    values: HashMap<(String, String), (usize, String)>,
    sections: HashMap<String, usize>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut values = HashMap::new();
        let mut sections = HashMap::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| Error::ConfigLine { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("unterminated section header {content:?}")))?
                    .trim()
                    .to_ascii_lowercase();
                if !KNOWN.iter().any(|(s, _)| *s == name) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                if sections.insert(name.clone(), line).is_some() {
                    return Err(err(format!("section [{name}] appears twice")));
                }
                section = Some(name);
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found {content:?}")))?;
            let key = key.trim().to_ascii_lowercase();
            let value = value.trim().to_string();
            let sec = section.clone().ok_or_else(|| err("key outside of any section".into()))?;
            let keys = KNOWN.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
            if !keys.contains(&key.as_str()) {
                return Err(err(format!("unknown key `{key}` in [{sec}]")));
            }
            if value.is_empty() {
                return Err(err(format!("empty value for `{key}`")));
            }
            if values.insert((sec.clone(), key.clone()), (line, value)).is_some() {
                return Err(err(format!("duplicate key `{key}` in [{sec}]")));
            }
        }
        Ok(Self { values, sections })
    }

    fn raw(&self, section: &str, key: &str) -> Option<(usize, &str)> {
        self.values.get(&(section.to_string(), key.to_string())).map(|(l, v)| (*l, v.as_str()))
    }

    fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| Error::ConfigLine {
                line,
                message: format!("invalid value {v:?} for `{key}`"),
            }),
        }
    }

    fn require<T: FromStr>(&self, section: &str, key: &str) -> Result<T> {
        self.get(section, key)?
            .ok_or_else(|| self.anchor(section, Error::Config(format!("missing `{key}` in [{section}]"))))
    }

    /// Attach the section's header line to a semantic error.
    fn anchor(&self, section: &str, error: Error) -> Error {
        match self.sections.get(section) {
            Some(&line) => Error::ConfigLine { line, message: error.to_string() },
            None => error,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = ExperimentConfig::parse("", None).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.fl.n_clients, 100);
        assert_eq!(cfg.fl.clients_per_round, 10);
        assert_eq!(cfg.fl.local_steps, 5);
        assert_eq!(cfg.fl.batch_size, 50);
        assert_eq!(cfg.fl.learning_rate, 0.15);
    }

    #[test]
    fn full_config() {
        let text = "\
# comment
[experiment]
seed = 4
rounds = 3   # trailing comment
output = out.csv

[compressor]
kind = fedfq
bits_per_param = 0.5

[cgsa]
max_iterations = 200

[data]
partition = iid
dim = 5

[model]
kind = mlp
hidden = 8
";
        let cfg = ExperimentConfig::parse(text, Some(Path::new("/tmp/x"))).unwrap();
        assert_eq!(cfg.fl.seed, 4);
        assert_eq!(cfg.fl.rounds, 3);
        assert_eq!(cfg.output, Some(PathBuf::from("/tmp/x/out.csv")));
        match cfg.fl.compressor {
            Compressor::FedFq { bits_per_param, cgsa } => {
                assert_eq!(bits_per_param, 0.5);
                assert_eq!(cgsa.max_iterations, 200);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(cfg.data.partition, PartitionKind::Iid);
        assert_eq!(cfg.model, ModelKind::Mlp { hidden: 8 });
        assert_eq!(cfg.model_spec().unwrap().num_params(), 8 * 6 + 10 * 9);
    }

    fn line_of(text: &str) -> usize {
        match ExperimentConfig::parse(text, None).unwrap_err() {
            Error::ConfigLine { line, .. } => line,
            other => panic!("not line-anchored: {other}"),
        }
    }

    #[test]
    fn errors_are_line_anchored() {
        assert_eq!(line_of("[experiment]\nseed = x\n"), 2);
        assert_eq!(line_of("[experiment]\n\nbogus = 1\n"), 3);
        assert_eq!(line_of("[nowhere]\n"), 1);
        assert_eq!(line_of("seed = 1\n"), 1);
        assert_eq!(line_of("[experiment]\nseed\n"), 2);
        assert_eq!(line_of("[compressor]\nkind = zip\n"), 2);
        assert_eq!(line_of("[compressor]\nkind = uniform\nbits = 0\n"), 1);
        assert_eq!(line_of("[experiment]\n[federation]\nclients_per_round = 500\n"), 2);
        assert_eq!(line_of("[experiment]\nseed = 1\nseed = 2\n"), 3);
        assert_eq!(line_of("[cgsa]\ncooling_rate = 1.5\n"), 1);
        assert_eq!(line_of("[data]\nsource = file\npath = /nonexistent/data.txt\n"), 3);
    }
}
