//! Experiment configuration: a flat TOML file. Parsing collects every problem
//! before failing, so one run of `modfl run` reports all of them.

use std::path::{Path, PathBuf};

use serde::Serialize;
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::registry::NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    ModFl,
    FedPer,
    FedAvg,
}

impl Framework {
    pub fn name(self) -> &'static str {
        match self {
            Framework::ModFl => "modfl",
            Framework::FedPer => "fedper",
            Framework::FedAvg => "fedavg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "modfl" => Some(Framework::ModFl),
            "fedper" => Some(Framework::FedPer),
            "fedavg" => Some(Framework::FedAvg),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DatasetKind {
    #[serde(rename = "cifar_stl")]
    CifarStl,
    #[serde(rename = "synthetic")]
    Synthetic,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::CifarStl => "cifar_stl",
            DatasetKind::Synthetic => "synthetic",
        }
    }

    pub fn architectures(self) -> [&'static str; 2] {
        match self {
            DatasetKind::CifarStl => ["cifar_gen", "stl_gen"],
            DatasetKind::Synthetic => ["synth_lo", "synth_hi"],
        }
    }

    /// Samples per dataset after class evening. The synthetic default leaves
    /// 40 test samples per label, enough for 36 clients per dataset at P=9.
    pub fn default_samples(self) -> usize {
        match self {
            DatasetKind::CifarStl => 11_700,
            DatasetKind::Synthetic => 1_440,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct DataPaths {
    pub cifar10: Option<PathBuf>,
    pub stl10: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub framework: Framework,
    pub dataset: DatasetKind,
    /// Total number of clients `N`.
    pub clients: usize,
    /// Labels per operation group `P`.
    pub labels_per_group: usize,
    pub num_op_groups: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// One configuration group per architecture, in this order.
    pub architectures: Vec<String>,
    pub samples_per_dataset: usize,
    pub train_ratio: f64,
    /// Trailing layers forming the operation module.
    pub operation_layers: usize,
    pub data_paths: DataPaths,
    pub output_dir: PathBuf,
}

const KEYS: [&str; 16] = [
    "framework",
    "dataset",
    "clients",
    "labels_per_group",
    "num_op_groups",
    "rounds",
    "local_epochs",
    "batch_size",
    "lr",
    "seed",
    "architectures",
    "samples_per_dataset",
    "train_ratio",
    "operation_layers",
    "data_paths",
    "output_dir",
];

impl ExperimentConfig {
    /// Defaults for everything but the required keys.
    pub fn new(framework: Framework, dataset: DatasetKind, clients: usize, labels_per_group: usize, rounds: usize, seed: u64) -> Self {
        Self {
            framework,
            dataset,
            clients,
            labels_per_group,
            num_op_groups: if labels_per_group == NUM_CLASSES { 1 } else { NUM_CLASSES },
            rounds,
            local_epochs: 1,
            batch_size: 16,
            lr: 0.001,
            seed,
            architectures: dataset.architectures().iter().map(|s| s.to_string()).collect(),
            samples_per_dataset: dataset.default_samples(),
            train_ratio: 0.75,
            operation_layers: crate::registry::OPERATION_LAYERS,
            data_paths: DataPaths::default(),
            output_dir: PathBuf::from("runs"),
        }
    }

    pub fn config_groups(&self) -> usize {
        self.architectures.len()
    }

    /// Every invariant violation, empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.clients == 0 {
            errs.push("clients must be positive".into());
        }
        if self.rounds == 0 {
            errs.push("rounds must be positive".into());
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            errs.push(format!("lr must be a positive number, got {}", self.lr));
        }
        if ![3, 6, 9].contains(&self.labels_per_group) {
            errs.push(format!("labels_per_group must be 3, 6 or 9, got {}", self.labels_per_group));
        }
        if self.labels_per_group == NUM_CLASSES && self.num_op_groups != 1 {
            errs.push(format!(
                "labels_per_group = 9 puts every client in one operation group: num_op_groups must be 1, got {}",
                self.num_op_groups
            ));
        } else if self.labels_per_group < NUM_CLASSES && !(1..=NUM_CLASSES).contains(&self.num_op_groups) {
            errs.push(format!("num_op_groups must be in 1..=9, got {}", self.num_op_groups));
        }
        let allowed = self.dataset.architectures();
        if self.architectures.is_empty() {
            errs.push("architectures must not be empty".into());
        }
        for (i, a) in self.architectures.iter().enumerate() {
            if !allowed.contains(&a.as_str()) {
                errs.push(format!("architecture `{a}` is not available for dataset {}", self.dataset.name()));
            }
            if self.architectures[..i].contains(a) {
                errs.push(format!("architecture `{a}` listed twice"));
            }
        }
        let cells = self.config_groups() * self.num_op_groups;
        if cells > 0 && self.clients % cells != 0 {
            errs.push(format!(
                "clients = {} is not divisible by {} configuration groups x {} operation groups",
                self.clients,
                self.config_groups(),
                self.num_op_groups
            ));
        }
        if self.samples_per_dataset == 0 || self.samples_per_dataset % NUM_CLASSES != 0 {
            errs.push(format!("samples_per_dataset must be a positive multiple of 9, got {}", self.samples_per_dataset));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            errs.push(format!("train_ratio must lie in (0, 1), got {}", self.train_ratio));
        }
        if self.operation_layers == 0 {
            errs.push("operation_layers must be positive".into());
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.violations();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Normalised TOML with every key present.
    pub fn to_toml(&self) -> String {
        let mut t = Table::new();
        t.insert("framework".into(), Value::String(self.framework.name().into()));
        t.insert("dataset".into(), Value::String(self.dataset.name().into()));
        let int = |v: usize| Value::Integer(v as i64);
        t.insert("clients".into(), int(self.clients));
        t.insert("labels_per_group".into(), int(self.labels_per_group));
        t.insert("num_op_groups".into(), int(self.num_op_groups));
        t.insert("rounds".into(), int(self.rounds));
        t.insert("local_epochs".into(), int(self.local_epochs));
        t.insert("batch_size".into(), int(self.batch_size));
        t.insert("lr".into(), Value::Float(self.lr));
        // TOML integers are signed 64-bit; larger seeds travel as strings
        t.insert(
            "seed".into(),
            i64::try_from(self.seed).map_or_else(|_| Value::String(self.seed.to_string()), Value::Integer),
        );
        t.insert(
            "architectures".into(),
            Value::Array(self.architectures.iter().cloned().map(Value::String).collect()),
        );
        t.insert("samples_per_dataset".into(), int(self.samples_per_dataset));
        t.insert("train_ratio".into(), Value::Float(self.train_ratio));
        t.insert("operation_layers".into(), int(self.operation_layers));
        let mut paths = Table::new();
        if let Some(p) = &self.data_paths.cifar10 {
            paths.insert("cifar10".into(), Value::String(p.display().to_string()));
        }
        if let Some(p) = &self.data_paths.stl10 {
            paths.insert("stl10".into(), Value::String(p.display().to_string()));
        }
        t.insert("data_paths".into(), Value::Table(paths));
        t.insert("output_dir".into(), Value::String(self.output_dir.display().to_string()));
        toml::to_string(&t).expect("config table serialises")
    }
}

struct Reader<'a> {
    table: &'a Table,
    errs: Vec<String>,
}

impl Reader<'_> {
    fn get(&self, key: &str) -> Option<&Value> {
        self.table.get(key)
    }

    fn required(&mut self, key: &str) -> Option<&Value> {
        let v = self.table.get(key);
        if v.is_none() {
            self.errs.push(format!("missing required key `{key}`"));
        }
        v
    }

    fn uint(&mut self, key: &str, v: Option<&Value>) -> Option<usize> {
        match v? {
            Value::Integer(i) if *i >= 0 => Some(*i as usize),
            other => {
                self.errs.push(format!("`{key}` must be a non-negative integer, got {other}"));
                None
            }
        }
    }

    fn float(&mut self, key: &str, v: Option<&Value>) -> Option<f64> {
        match v? {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            other => {
                self.errs.push(format!("`{key}` must be a number, got {other}"));
                None
            }
        }
    }

    fn string(&mut self, key: &str, v: Option<&Value>) -> Option<String> {
        match v? {
            Value::String(s) => Some(s.clone()),
            other => {
                self.errs.push(format!("`{key}` must be a string, got {other}"));
                None
            }
        }
    }
}

/// Parses and validates a configuration text.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        Error::Config(vec![format!("line {line}: {}", e.message())])
    })?;
    let mut r = Reader {
        table: &table,
        errs: Vec::new(),
    };
    for key in table.keys() {
        if !KEYS.contains(&key.as_str()) {
            r.errs.push(format!("unknown key `{key}`"));
        }
    }

    let v = r.required("framework").cloned();
    let framework = r.string("framework", v.as_ref()).and_then(|s| {
        let f = Framework::parse(&s);
        if f.is_none() {
            r.errs.push(format!("framework must be modfl, fedper or fedavg, got `{s}`"));
        }
        f
    });
    let v = r.required("dataset").cloned();
    let dataset = r.string("dataset", v.as_ref()).and_then(|s| match s.as_str() {
        "cifar_stl" => Some(DatasetKind::CifarStl),
        "synthetic" => Some(DatasetKind::Synthetic),
        _ => {
            r.errs.push(format!("dataset must be cifar_stl or synthetic, got `{s}`"));
            None
        }
    });
    let v = r.required("clients").cloned();
    let clients = r.uint("clients", v.as_ref());
    let v = r.required("labels_per_group").cloned();
    let labels = r.uint("labels_per_group", v.as_ref());
    let v = r.required("rounds").cloned();
    let rounds = r.uint("rounds", v.as_ref());
    let seed = match r.required("seed").cloned() {
        None => None,
        Some(Value::Integer(i)) if i >= 0 => Some(i as u64),
        Some(Value::String(s)) => s.parse::<u64>().ok().or_else(|| {
            r.errs.push(format!("`seed` string `{s}` is not an unsigned 64-bit integer"));
            None
        }),
        Some(other) => {
            r.errs.push(format!("`seed` must be a non-negative integer, got {other}"));
            None
        }
    };

    let (Some(framework), Some(dataset), Some(clients), Some(labels), Some(rounds), Some(seed)) =
        (framework, dataset, clients, labels, rounds, seed)
    else {
        return Err(Error::Config(r.errs));
    };
    let mut cfg = ExperimentConfig::new(framework, dataset, clients, labels, rounds, seed);

    let v = r.get("num_op_groups").cloned();
    if let Some(x) = r.uint("num_op_groups", v.as_ref()) {
        cfg.num_op_groups = x;
    }
    let v = r.get("local_epochs").cloned();
    if let Some(x) = r.uint("local_epochs", v.as_ref()) {
        cfg.local_epochs = x;
    }
    let v = r.get("batch_size").cloned();
    if let Some(x) = r.uint("batch_size", v.as_ref()) {
        cfg.batch_size = x;
    }
    let v = r.get("lr").cloned();
    if let Some(x) = r.float("lr", v.as_ref()) {
        cfg.lr = x;
    }
    let v = r.get("samples_per_dataset").cloned();
    if let Some(x) = r.uint("samples_per_dataset", v.as_ref()) {
        cfg.samples_per_dataset = x;
    }
    let v = r.get("train_ratio").cloned();
    if let Some(x) = r.float("train_ratio", v.as_ref()) {
        cfg.train_ratio = x;
    }
    let v = r.get("operation_layers").cloned();
    if let Some(x) = r.uint("operation_layers", v.as_ref()) {
        cfg.operation_layers = x;
    }
    let v = r.get("output_dir").cloned();
    if let Some(x) = r.string("output_dir", v.as_ref()) {
        cfg.output_dir = PathBuf::from(x);
    }
    match r.get("architectures").cloned() {
        None => {}
        Some(Value::Array(items)) => {
            let mut archs = Vec::new();
            for item in &items {
                match item {
                    Value::String(s) => archs.push(s.clone()),
                    other => r.errs.push(format!("`architectures` entries must be strings, got {other}")),
                }
            }
            cfg.architectures = archs;
        }
        Some(other) => r.errs.push(format!("`architectures` must be a list of strings, got {other}")),
    }
    match r.get("data_paths").cloned() {
        None => {}
        Some(Value::Table(paths)) => {
            for (k, v) in &paths {
                let s = r.string(&format!("data_paths.{k}"), Some(v));
                match (k.as_str(), s) {
                    ("cifar10", Some(s)) => cfg.data_paths.cifar10 = Some(PathBuf::from(s)),
                    ("stl10", Some(s)) => cfg.data_paths.stl10 = Some(PathBuf::from(s)),
                    (_, None) => {}
                    (other, _) => r.errs.push(format!("unknown key `data_paths.{other}`")),
                }
            }
        }
        Some(other) => r.errs.push(format!("`data_paths` must be a table, got {other}")),
    }

    let mut errs = r.errs;
    errs.extend(cfg.violations());
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(errs))
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = r#"
framework = "modfl"
dataset = "synthetic"
clients = 18
labels_per_group = 3
rounds = 5
seed = 42
"#;

    #[test]
    fn minimal_file_gets_defaults() {
        let c = parse_config_str(VALID).unwrap();
        assert_eq!(c.num_op_groups, 9);
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.local_epochs, 1);
        assert_eq!(c.lr, 0.001);
        assert_eq!(c.architectures, vec!["synth_lo", "synth_hi"]);
    }

    #[test]
    fn iid_requires_one_operation_group() {
        let text = VALID.replace("labels_per_group = 3", "labels_per_group = 9\nnum_op_groups = 9");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("num_op_groups must be 1"), "{err}");
        let text = VALID.replace("labels_per_group = 3", "labels_per_group = 9");
        assert_eq!(parse_config_str(&text).unwrap().num_op_groups, 1);
    }

    #[test]
    fn missing_seed_is_an_error() {
        let text = VALID.replace("seed = 42", "");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("`seed`"), "{err}");
    }

    #[test]
    fn all_violations_are_reported_together() {
        let text = VALID.replace("clients = 18", "clients = 19\nbogus = 1").replace("rounds = 5", "rounds = 0");
        match parse_config_str(&text) {
            Err(Error::Config(errs)) => {
                assert_eq!(errs.len(), 3, "{errs:?}");
                assert!(errs.iter().any(|e| e.contains("unknown key `bogus`")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn serialize_parse_round_trip() {
        let mut c = parse_config_str(VALID).unwrap();
        c.data_paths.cifar10 = Some("/data/cifar".into());
        c.seed = u64::MAX;
        let text = c.to_toml();
        let back = parse_config_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn architectures_must_fit_the_dataset() {
        let text = format!("{VALID}architectures = [\"cifar_gen\"]\n");
        assert!(parse_config_str(&text).is_err());
    }
}
