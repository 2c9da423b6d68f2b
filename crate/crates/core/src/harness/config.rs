//! TOML experiment schema.
//!
//! Parsing walks the table by hand so that every problem (unknown keys,
//! wrong types, missing keys, cross-field rules) is reported in one pass.

use std::fmt;
use std::path::PathBuf;

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::federation::{BudgetPattern, DpBudget, FederationConfig, Method, RoundSchedule};
use crate::lora::{Architecture, LocalTrainConfig, DEFAULT_INIT_STD};

/// Bumped whenever the config or output column layout changes.
pub const SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_CLIP_GRID: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.6];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Methods for `compare`; empty means just `method`.
    pub methods: Vec<Method>,
    /// Round pattern for `deer`; `None` is the plain alternating schedule.
    pub pattern: Option<BudgetPattern>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub privacy: PrivacyConfig,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub hidden: usize,
    pub rank: usize,
    pub alpha: f64,
    pub init_std: f64,
    /// `None` adapts every layer.
    pub adapt_layers: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub clients: usize,
    pub beta: f64,
    /// `None` means twice the batch size.
    pub min_shard: Option<usize>,
    /// train / val / test.
    pub fractions: [f64; 3],
    /// Share of the train split held out to pretrain the frozen base.
    pub pretrain_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        classes: usize,
        dim: usize,
        samples: usize,
        class_sep: f64,
    },
    Csv {
        path: PathBuf,
        label_column: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub parallel: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clip {
    Fixed(f64),
    /// Pick from `clip_grid` by validation accuracy.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyConfig {
    pub enabled: bool,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub clip: Clip,
    pub clip_grid: Vec<f64>,
    pub regulate: bool,
    pub record_pre_noise: bool,
}

/// DP setting for one cell of a comparison or sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Off,
    Epsilon(f64),
}

impl Budget {
    pub fn label(&self) -> String {
        match self {
            Budget::Off => "off".into(),
            Budget::Epsilon(e) => format!("eps{e}"),
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match self {
            Budget::Off => None,
            Budget::Epsilon(e) => Some(*e),
        }
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Off => f.write_str("off"),
            Budget::Epsilon(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepConfig {
    /// Empty means the single `[privacy]` setting.
    pub budgets: Vec<Budget>,
    /// Empty means the single `data.beta`.
    pub betas: Vec<f64>,
}

impl ExperimentConfig {
    pub fn methods(&self) -> Vec<Method> {
        if self.methods.is_empty() {
            vec![self.method]
        } else {
            self.methods.clone()
        }
    }

    pub fn budget(&self) -> Budget {
        match (self.privacy.enabled, self.privacy.epsilon) {
            (true, Some(e)) => Budget::Epsilon(e),
            _ => Budget::Off,
        }
    }

    pub fn budgets(&self) -> Vec<Budget> {
        if self.sweep.budgets.is_empty() {
            vec![self.budget()]
        } else {
            self.sweep.budgets.clone()
        }
    }

    pub fn betas(&self) -> Vec<f64> {
        if self.sweep.betas.is_empty() {
            vec![self.data.beta]
        } else {
            self.sweep.betas.clone()
        }
    }

    /// Same experiment under another method, budget and beta.
    pub fn with_cell(&self, method: Method, budget: Budget, beta: f64) -> ExperimentConfig {
        let mut c = self.clone();
        c.method = method;
        c.methods.clear();
        if method != Method::Deer {
            c.pattern = None;
        }
        c.data.beta = beta;
        c.privacy.enabled = budget != Budget::Off;
        c.privacy.epsilon = budget.epsilon().or(c.privacy.epsilon);
        c.sweep = SweepConfig::default();
        c
    }

    pub fn schedule(&self) -> RoundSchedule {
        match self.method {
            Method::JointLora => RoundSchedule::Joint,
            Method::FfaLora => RoundSchedule::FreezeA,
            Method::Deer => match &self.pattern {
                None => RoundSchedule::Alternating,
                Some(p) => RoundSchedule::AlternatingBudget(p.clone()),
            },
        }
    }

    /// Federation settings for a fixed clip (ignored when DP is off).
    pub fn federation(&self, num_layers: usize, clip: f64) -> Result<FederationConfig> {
        let adapt_layers = match &self.model.adapt_layers {
            Some(l) => l.clone(),
            None => (0..num_layers).collect(),
        };
        if let Some(bad) = adapt_layers.iter().find(|&&l| l >= num_layers) {
            return Err(Error::Config(vec![format!(
                "model.adapt_layers: layer {bad} does not exist ({} has {num_layers} layers)",
                self.model.arch
            )]));
        }
        let privacy = if self.privacy.enabled {
            Some(DpBudget {
                epsilon: self.privacy.epsilon.expect("validated"),
                delta: self.privacy.delta,
                clip,
            })
        } else {
            None
        };
        Ok(FederationConfig {
            schedule: self.schedule(),
            rounds: self.train.rounds,
            local: LocalTrainConfig {
                epochs: self.train.local_epochs,
                batch_size: self.train.batch_size,
                lr: self.train.lr,
            },
            rank: self.model.rank,
            alpha: self.model.alpha,
            init_std: self.model.init_std,
            adapt_layers,
            privacy,
            regulate_noise: self.privacy.regulate,
            record_pre_noise: self.privacy.record_pre_noise,
            parallel: self.train.parallel,
        })
    }

    /// Serializes to the same schema `parse_config` reads.
    pub fn to_toml(&self) -> String {
        let mut root = Table::new();
        root.insert("method".into(), self.method.as_str().into());
        if !self.methods.is_empty() {
            root.insert("methods".into(), Value::Array(self.methods.iter().map(|m| m.as_str().into()).collect()));
        }
        if let Some(p) = &self.pattern {
            root.insert("pattern".into(), p.to_string().into());
        }
        root.insert("seeds".into(), Value::Array(self.seeds.iter().map(|&s| Value::Integer(s as i64)).collect()));
        root.insert("output_dir".into(), self.output_dir.display().to_string().into());

        let mut model = Table::new();
        model.insert("arch".into(), self.model.arch.to_string().into());
        model.insert("hidden".into(), int(self.model.hidden));
        model.insert("rank".into(), int(self.model.rank));
        model.insert("alpha".into(), self.model.alpha.into());
        model.insert("init_std".into(), self.model.init_std.into());
        if let Some(l) = &self.model.adapt_layers {
            model.insert("adapt_layers".into(), Value::Array(l.iter().map(|&v| int(v)).collect()));
        }
        root.insert("model".into(), Value::Table(model));

        let mut data = Table::new();
        data.insert("clients".into(), int(self.data.clients));
        data.insert("beta".into(), self.data.beta.into());
        if let Some(m) = self.data.min_shard {
            data.insert("min_shard".into(), int(m));
        }
        data.insert("fractions".into(), floats(&self.data.fractions));
        data.insert("pretrain_fraction".into(), self.data.pretrain_fraction.into());
        let mut src = Table::new();
        match &self.data.source {
            DataSource::Synthetic {
                classes,
                dim,
                samples,
                class_sep,
            } => {
                src.insert("classes".into(), int(*classes));
                src.insert("dim".into(), int(*dim));
                src.insert("samples".into(), int(*samples));
                src.insert("class_sep".into(), (*class_sep).into());
                data.insert("synthetic".into(), Value::Table(src));
            }
            DataSource::Csv { path, label_column } => {
                src.insert("path".into(), path.display().to_string().into());
                src.insert("label_column".into(), label_column.clone().into());
                data.insert("csv".into(), Value::Table(src));
            }
        }
        root.insert("data".into(), Value::Table(data));

        let mut train = Table::new();
        train.insert("rounds".into(), int(self.train.rounds));
        train.insert("local_epochs".into(), int(self.train.local_epochs));
        train.insert("batch_size".into(), int(self.train.batch_size));
        train.insert("lr".into(), self.train.lr.into());
        train.insert("pretrain_epochs".into(), int(self.train.pretrain_epochs));
        train.insert("pretrain_lr".into(), self.train.pretrain_lr.into());
        train.insert("parallel".into(), self.train.parallel.into());
        root.insert("train".into(), Value::Table(train));

        let mut privacy = Table::new();
        privacy.insert("enabled".into(), self.privacy.enabled.into());
        if let Some(e) = self.privacy.epsilon {
            privacy.insert("epsilon".into(), e.into());
        }
        if let Some(d) = self.privacy.delta {
            privacy.insert("delta".into(), d.into());
        }
        privacy.insert(
            "clip".into(),
            match self.privacy.clip {
                Clip::Fixed(c) => c.into(),
                Clip::Auto => "auto".into(),
            },
        );
        privacy.insert("clip_grid".into(), floats(&self.privacy.clip_grid));
        privacy.insert("regulate".into(), self.privacy.regulate.into());
        privacy.insert("record_pre_noise".into(), self.privacy.record_pre_noise.into());
        root.insert("privacy".into(), Value::Table(privacy));

        if self.sweep != SweepConfig::default() {
            let mut sweep = Table::new();
            if !self.sweep.budgets.is_empty() {
                let b = self
                    .sweep
                    .budgets
                    .iter()
                    .map(|b| match b {
                        Budget::Off => Value::from("off"),
                        Budget::Epsilon(e) => Value::from(*e),
                    })
                    .collect();
                sweep.insert("budgets".into(), Value::Array(b));
            }
            if !self.sweep.betas.is_empty() {
                sweep.insert("betas".into(), floats(&self.sweep.betas));
            }
            root.insert("sweep".into(), Value::Table(sweep));
        }
        toml::to_string(&root).expect("plain table serializes")
    }
}

pub(crate) fn layer_count(arch: Architecture) -> usize {
    match arch {
        Architecture::LinearSoftmax => 1,
        Architecture::TwoLayerMlp => 2,
    }
}

/// `(out, in)` per layer, when the data dimensions are known up front.
fn layer_shapes(model: &ModelConfig, source: Option<&DataSource>) -> Option<Vec<(usize, usize)>> {
    let Some(DataSource::Synthetic { classes, dim, .. }) = source else {
        return None;
    };
    Some(match model.arch {
        Architecture::LinearSoftmax => vec![(*classes, *dim)],
        Architecture::TwoLayerMlp => vec![(model.hidden, *dim), (*classes, model.hidden)],
    })
}

fn int(v: usize) -> Value {
    Value::Integer(v as i64)
}

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| Value::Float(x)).collect())
}

/// Parses and validates a config, reporting every problem found.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with_overrides(text, &[])
}

/// Like [`parse_config`], with `section.key = value` overrides applied on top
/// of the file. Override values are read as TOML literals, falling back to a
/// bare string.
pub fn parse_config_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut root: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
    for (key, value) in overrides {
        apply_override(&mut root, key, value)?;
    }
    let mut r = Reader { errs: Vec::new() };
    let cfg = r.root(&root);
    match cfg {
        Some(c) if r.errs.is_empty() => Ok(c),
        _ => Err(Error::Config(r.errs)),
    }
}

fn apply_override(root: &mut Table, key: &str, raw: &str) -> Result<()> {
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().filter(|s| !s.is_empty());
    let Some(leaf) = leaf else {
        return Err(Error::Config(vec![format!("empty override key `{key}`")]));
    };
    let mut table = root;
    for p in parts {
        let entry = table.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        table = match entry {
            Value::Table(t) => t,
            _ => return Err(Error::Config(vec![format!("override `{key}`: `{p}` is not a section")])),
        };
    }
    table.insert(leaf.to_string(), value);
    Ok(())
}

struct Reader {
    errs: Vec<String>,
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

impl Reader {
    fn err(&mut self, msg: String) {
        self.errs.push(msg);
    }

    fn allow(&mut self, t: &Table, path: &str, keys: &[&str]) {
        for k in t.keys() {
            if !keys.contains(&k.as_str()) {
                self.err(format!("unknown key `{}` (expected one of: {})", join(path, k), keys.join(", ")));
            }
        }
    }

    fn section<'a>(&mut self, t: &'a Table, path: &str, key: &str) -> Option<&'a Table> {
        match t.get(key) {
            None => None,
            Some(Value::Table(s)) => Some(s),
            Some(_) => {
                self.err(format!("`{}` must be a table", join(path, key)));
                None
            }
        }
    }

    fn float(&mut self, t: &Table, path: &str, key: &str) -> Option<f64> {
        match t.get(key)? {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.err(format!("`{}` must be a number", join(path, key)));
                None
            }
        }
    }

    fn uint(&mut self, t: &Table, path: &str, key: &str) -> Option<u64> {
        match t.get(key)? {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            _ => {
                self.err(format!("`{}` must be a non-negative integer", join(path, key)));
                None
            }
        }
    }

    fn boolean(&mut self, t: &Table, path: &str, key: &str) -> Option<bool> {
        match t.get(key)? {
            Value::Boolean(b) => Some(*b),
            _ => {
                self.err(format!("`{}` must be true or false", join(path, key)));
                None
            }
        }
    }

    fn string(&mut self, t: &Table, path: &str, key: &str) -> Option<String> {
        match t.get(key)? {
            Value::String(s) => Some(s.clone()),
            _ => {
                self.err(format!("`{}` must be a string", join(path, key)));
                None
            }
        }
    }

    fn array<'a>(&mut self, t: &'a Table, path: &str, key: &str) -> Option<&'a Vec<Value>> {
        match t.get(key)? {
            Value::Array(a) => Some(a),
            _ => {
                self.err(format!("`{}` must be an array", join(path, key)));
                None
            }
        }
    }

    fn floats(&mut self, t: &Table, path: &str, key: &str) -> Option<Vec<f64>> {
        let a = self.array(t, path, key)?;
        let v: Option<Vec<f64>> = a
            .iter()
            .map(|x| match x {
                Value::Float(f) => Some(*f),
                Value::Integer(i) => Some(*i as f64),
                _ => None,
            })
            .collect();
        if v.is_none() {
            self.err(format!("`{}` must be an array of numbers", join(path, key)));
        }
        v
    }

    fn uints(&mut self, t: &Table, path: &str, key: &str) -> Option<Vec<u64>> {
        let a = self.array(t, path, key)?;
        let v: Option<Vec<u64>> = a
            .iter()
            .map(|x| match x {
                Value::Integer(i) if *i >= 0 => Some(*i as u64),
                _ => None,
            })
            .collect();
        if v.is_none() {
            self.err(format!("`{}` must be an array of non-negative integers", join(path, key)));
        }
        v
    }

    fn parsed<T: std::str::FromStr<Err = String>>(&mut self, t: &Table, path: &str, key: &str) -> Option<T> {
        let s = self.string(t, path, key)?;
        match s.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.err(format!("`{}`: {e}", join(path, key)));
                None
            }
        }
    }

    fn positive(&mut self, name: &str, v: f64) {
        if !(v > 0.0) || !v.is_finite() {
            self.err(format!("`{name}` must be a finite number > 0, got {v}"));
        }
    }

    fn at_least_one(&mut self, name: &str, v: usize) {
        if v == 0 {
            self.err(format!("`{name}` must be >= 1"));
        }
    }

    fn root(&mut self, t: &Table) -> Option<ExperimentConfig> {
        self.allow(
            t,
            "",
            &["method", "methods", "pattern", "seeds", "output_dir", "model", "data", "train", "privacy", "sweep"],
        );
        let methods: Vec<Method> = match self.array(t, "", "methods") {
            None => Vec::new(),
            Some(a) => a
                .iter()
                .filter_map(|v| match v.as_str().map(str::parse::<Method>) {
                    Some(Ok(m)) => Some(m),
                    Some(Err(e)) => {
                        self.err(format!("`methods`: {e}"));
                        None
                    }
                    None => {
                        self.err("`methods` must be an array of strings".into());
                        None
                    }
                })
                .collect(),
        };
        let method = match (self.parsed::<Method>(t, "", "method"), methods.first()) {
            (Some(m), _) => Some(m),
            (None, Some(&m)) if !t.contains_key("method") => Some(m),
            (None, _) => {
                if !t.contains_key("method") {
                    self.err("missing required key `method` (joint-lora | ffa-lora | deer)".into());
                }
                None
            }
        };
        let pattern = self.parsed::<BudgetPattern>(t, "", "pattern");
        if t.contains_key("pattern") {
            let uses_deer = method == Some(Method::Deer) || methods.contains(&Method::Deer);
            if method.is_some() && !uses_deer {
                self.err("`pattern` is only valid with method = \"deer\"".into());
            }
        }
        let seeds = self.uints(t, "", "seeds").unwrap_or_else(|| vec![0]);
        if seeds.is_empty() {
            self.err("`seeds` must list at least one seed".into());
        }
        let output_dir = self.string(t, "", "output_dir").unwrap_or_else(|| "runs".into());

        let empty = Table::new();
        let model_t = self.section(t, "", "model").unwrap_or(&empty);
        let model = self.model(model_t);
        let train_t = self.section(t, "", "train").unwrap_or(&empty);
        let train = self.train(train_t);
        let data = match self.section(t, "", "data") {
            Some(d) => self.data(d),
            None => {
                self.err("missing required section `[data]` with `[data.synthetic]` or `[data.csv]`".into());
                None
            }
        };
        let privacy_t = self.section(t, "", "privacy").unwrap_or(&empty);
        let privacy = self.privacy(privacy_t);
        let sweep_t = self.section(t, "", "sweep").unwrap_or(&empty);
        let sweep = self.sweep(sweep_t);

        let shapes = layer_shapes(&model, data.as_ref().map(|d| &d.source));
        if let Some(l) = &model.adapt_layers {
            if let Some(bad) = l.iter().find(|&&x| x >= layer_count(model.arch)) {
                self.err(format!(
                    "`model.adapt_layers`: layer {bad} does not exist ({} has {})",
                    model.arch,
                    layer_count(model.arch)
                ));
            }
        }
        if let Some(shapes) = shapes {
            let adapted: Vec<usize> = match &model.adapt_layers {
                Some(l) => l.clone(),
                None => (0..shapes.len()).collect(),
            };
            for l in adapted.into_iter().filter(|&l| l < shapes.len()) {
                let (m, n) = shapes[l];
                if model.rank > m.min(n) {
                    self.err(format!("`model.rank` {} exceeds min({m}, {n}) of layer {l}", model.rank));
                }
            }
        }

        Some(ExperimentConfig {
            method: method?,
            methods,
            pattern,
            seeds,
            output_dir: PathBuf::from(output_dir),
            model,
            data: data?,
            train,
            privacy,
            sweep,
        })
    }

    fn model(&mut self, t: &Table) -> ModelConfig {
        const P: &str = "model";
        self.allow(t, P, &["arch", "hidden", "rank", "alpha", "init_std", "adapt_layers"]);
        let arch = self.parsed::<Architecture>(t, P, "arch").unwrap_or(Architecture::TwoLayerMlp);
        let hidden = self.uint(t, P, "hidden").unwrap_or(32) as usize;
        let rank = self.uint(t, P, "rank").unwrap_or(8) as usize;
        let alpha = self.float(t, P, "alpha").unwrap_or(8.0);
        let init_std = self.float(t, P, "init_std").unwrap_or(DEFAULT_INIT_STD);
        let adapt_layers = self
            .uints(t, P, "adapt_layers")
            .map(|v| v.into_iter().map(|x| x as usize).collect::<Vec<_>>());
        self.at_least_one("model.hidden", hidden);
        self.at_least_one("model.rank", rank);
        self.positive("model.alpha", alpha);
        self.positive("model.init_std", init_std);
        if let Some(l) = &adapt_layers {
            if l.is_empty() {
                self.err("`model.adapt_layers` must not be empty".into());
            }
            let mut s = l.clone();
            s.sort_unstable();
            s.dedup();
            if s.len() != l.len() {
                self.err("`model.adapt_layers` lists a layer twice".into());
            }
        }
        ModelConfig {
            arch,
            hidden,
            rank,
            alpha,
            init_std,
            adapt_layers,
        }
    }

    fn data(&mut self, t: &Table) -> Option<DataConfig> {
        const P: &str = "data";
        self.allow(t, P, &["clients", "beta", "min_shard", "fractions", "pretrain_fraction", "synthetic", "csv"]);
        let clients = self.uint(t, P, "clients").unwrap_or(12) as usize;
        let beta = self.float(t, P, "beta").unwrap_or(0.1);
        let min_shard = self.uint(t, P, "min_shard").map(|v| v as usize);
        let fractions = match self.floats(t, P, "fractions") {
            None => [0.7, 0.1, 0.2],
            Some(v) if v.len() == 3 => [v[0], v[1], v[2]],
            Some(v) => {
                self.err(format!("`data.fractions` needs 3 entries (train, val, test), got {}", v.len()));
                [0.7, 0.1, 0.2]
            }
        };
        let pretrain_fraction = self.float(t, P, "pretrain_fraction").unwrap_or(0.2);
        self.at_least_one("data.clients", clients);
        self.positive("data.beta", beta);
        if fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            self.err(format!("`data.fractions` must be positive and sum to 1, got {fractions:?}"));
        }
        if !(0.0..1.0).contains(&pretrain_fraction) {
            self.err(format!("`data.pretrain_fraction` must lie in [0, 1), got {pretrain_fraction}"));
        }

        let syn = self.section(t, P, "synthetic");
        let csv = self.section(t, P, "csv");
        let source = match (syn, csv) {
            (Some(_), Some(_)) => {
                self.err("exactly one data source allowed: found both `[data.synthetic]` and `[data.csv]`".into());
                None
            }
            (None, None) => {
                if !t.contains_key("synthetic") && !t.contains_key("csv") {
                    self.err("missing data source: add `[data.synthetic]` or `[data.csv]`".into());
                }
                None
            }
            (Some(s), None) => self.synthetic(s),
            (None, Some(c)) => self.csv(c),
        };
        Some(DataConfig {
            source: source?,
            clients,
            beta,
            min_shard,
            fractions,
            pretrain_fraction,
        })
    }

    fn synthetic(&mut self, t: &Table) -> Option<DataSource> {
        const P: &str = "data.synthetic";
        self.allow(t, P, &["classes", "dim", "samples", "class_sep"]);
        let classes = self.uint(t, P, "classes").unwrap_or(8) as usize;
        let dim = self.uint(t, P, "dim").unwrap_or(32) as usize;
        let samples = self.uint(t, P, "samples").unwrap_or(4000) as usize;
        let class_sep = self.float(t, P, "class_sep").unwrap_or(3.0);
        if classes < 2 {
            self.err("`data.synthetic.classes` must be >= 2".into());
        }
        if dim < classes {
            self.err(format!("`data.synthetic.dim` ({dim}) must be >= classes ({classes})"));
        }
        self.at_least_one("data.synthetic.samples", samples);
        if !(class_sep >= 0.0) || !class_sep.is_finite() {
            self.err(format!("`data.synthetic.class_sep` must be finite and >= 0, got {class_sep}"));
        }
        Some(DataSource::Synthetic {
            classes,
            dim,
            samples,
            class_sep,
        })
    }

    fn csv(&mut self, t: &Table) -> Option<DataSource> {
        const P: &str = "data.csv";
        self.allow(t, P, &["path", "label_column"]);
        let path = self.string(t, P, "path");
        let label_column = self.string(t, P, "label_column");
        if path.is_none() && !t.contains_key("path") {
            self.err("missing required key `data.csv.path`".into());
        }
        if label_column.is_none() && !t.contains_key("label_column") {
            self.err("missing required key `data.csv.label_column`".into());
        }
        Some(DataSource::Csv {
            path: PathBuf::from(path?),
            label_column: label_column?,
        })
    }

    fn train(&mut self, t: &Table) -> TrainConfig {
        const P: &str = "train";
        self.allow(
            t,
            P,
            &["rounds", "local_epochs", "batch_size", "lr", "pretrain_epochs", "pretrain_lr", "parallel"],
        );
        let c = TrainConfig {
            rounds: self.uint(t, P, "rounds").unwrap_or(50) as usize,
            local_epochs: self.uint(t, P, "local_epochs").unwrap_or(5) as usize,
            batch_size: self.uint(t, P, "batch_size").unwrap_or(16) as usize,
            lr: self.float(t, P, "lr").unwrap_or(0.05),
            pretrain_epochs: self.uint(t, P, "pretrain_epochs").unwrap_or(20) as usize,
            pretrain_lr: self.float(t, P, "pretrain_lr").unwrap_or(0.05),
            parallel: self.boolean(t, P, "parallel").unwrap_or(true),
        };
        self.at_least_one("train.local_epochs", c.local_epochs);
        self.at_least_one("train.batch_size", c.batch_size);
        self.positive("train.lr", c.lr);
        self.positive("train.pretrain_lr", c.pretrain_lr);
        c
    }

    fn privacy(&mut self, t: &Table) -> PrivacyConfig {
        const P: &str = "privacy";
        self.allow(
            t,
            P,
            &["enabled", "epsilon", "delta", "clip", "clip_grid", "regulate", "record_pre_noise"],
        );
        let epsilon = self.float(t, P, "epsilon");
        let enabled = self.boolean(t, P, "enabled").unwrap_or(epsilon.is_some());
        let delta = self.float(t, P, "delta");
        let clip = match t.get("clip") {
            None => Clip::Auto,
            Some(Value::String(s)) if s == "auto" => Clip::Auto,
            Some(Value::Float(_) | Value::Integer(_)) => {
                let c = self.float(t, P, "clip").unwrap_or(f64::NAN);
                self.positive("privacy.clip", c);
                Clip::Fixed(c)
            }
            Some(_) => {
                self.err("`privacy.clip` must be a number > 0 or \"auto\"".into());
                Clip::Auto
            }
        };
        let clip_grid = self.floats(t, P, "clip_grid").unwrap_or_else(|| DEFAULT_CLIP_GRID.to_vec());
        if clip_grid.is_empty() {
            self.err("`privacy.clip_grid` must not be empty".into());
        }
        for c in &clip_grid {
            self.positive("privacy.clip_grid entry", *c);
        }
        if enabled {
            match epsilon {
                Some(e) => self.positive("privacy.epsilon", e),
                None => self.err("`privacy.epsilon` is required when privacy is enabled".into()),
            }
        }
        if let Some(d) = delta {
            if !(d > 0.0 && d < 1.0) {
                self.err(format!("`privacy.delta` must lie in (0, 1), got {d}"));
            }
        }
        PrivacyConfig {
            enabled,
            epsilon,
            delta,
            clip,
            clip_grid,
            regulate: self.boolean(t, P, "regulate").unwrap_or(true),
            record_pre_noise: self.boolean(t, P, "record_pre_noise").unwrap_or(false),
        }
    }

    fn sweep(&mut self, t: &Table) -> SweepConfig {
        const P: &str = "sweep";
        self.allow(t, P, &["budgets", "betas"]);
        let budgets = match self.array(t, P, "budgets") {
            None => Vec::new(),
            Some(a) => {
                let mut out = Vec::new();
                for v in a {
                    match v {
                        Value::String(s) if s == "off" => out.push(Budget::Off),
                        Value::Float(_) | Value::Integer(_) => {
                            let e = v.as_float().or(v.as_integer().map(|i| i as f64)).unwrap_or(f64::NAN);
                            self.positive("sweep.budgets entry", e);
                            out.push(Budget::Epsilon(e));
                        }
                        other => self.err(format!("`sweep.budgets` entries must be epsilons or \"off\", got {other}")),
                    }
                }
                out
            }
        };
        let betas = self.floats(t, P, "betas").unwrap_or_default();
        for b in &betas {
            self.positive("sweep.betas entry", *b);
        }
        SweepConfig { budgets, betas }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
method = "deer"
[data.synthetic]
"#;

    #[test]
    fn minimal_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.model.rank, 8);
        assert_eq!(c.model.alpha, 8.0);
        assert_eq!(c.train.rounds, 50);
        assert_eq!(c.train.local_epochs, 5);
        assert_eq!(c.data.clients, 12);
        assert_eq!(c.data.beta, 0.1);
        assert!(!c.privacy.enabled);
        assert_eq!(c.privacy.clip, Clip::Auto);
        assert_eq!(c.schedule(), RoundSchedule::Alternating);
    }

    #[test]
    fn negative_clip_names_field() {
        let e = parse_config(&format!("{MINIMAL}\n[privacy]\nepsilon = 1.0\nclip = -1\n")).unwrap_err();
        assert!(e.to_string().contains("privacy.clip"), "{e}");
    }

    #[test]
    fn pattern_needs_deer() {
        let e = parse_config("method = \"joint-lora\"\npattern = \"50\"\n[data.synthetic]\n").unwrap_err();
        assert!(e.to_string().contains("pattern"), "{e}");
    }

    #[test]
    fn all_errors_reported() {
        let text = "metod = \"deer\"\n[model]\nrnak = 4\nalpha = -1\n[data.synthetic]\n[data.csv]\npath = \"x\"\n";
        let Error::Config(errs) = parse_config(text).unwrap_err() else {
            panic!("expected config error")
        };
        let all = errs.join("\n");
        for needle in ["metod", "model.rnak", "model.alpha", "exactly one data source", "missing required key `method`"] {
            assert!(all.contains(needle), "missing {needle:?} in:\n{all}");
        }
    }

    #[test]
    fn round_trip() {
        let text = r#"
method = "deer"
methods = ["joint-lora", "deer"]
pattern = "BA,B"
seeds = [1, 2, 3]
output_dir = "out/x"
[model]
arch = "linear-softmax"
rank = 4
adapt_layers = [0]
[data]
clients = 6
beta = 0.5
[data.synthetic]
classes = 4
dim = 8
[privacy]
epsilon = 1.0
clip = 0.3
[sweep]
budgets = ["off", 0.1, 1]
betas = [10, 0.1]
"#;
        let c = parse_config(text).unwrap();
        let again = parse_config(&c.to_toml()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn overrides_beat_file() {
        let o = vec![
            ("train.rounds".to_string(), "3".to_string()),
            ("method".to_string(), "ffa-lora".to_string()),
        ];
        let c = parse_config_with_overrides(MINIMAL, &o).unwrap();
        assert_eq!(c.train.rounds, 3);
        assert_eq!(c.method, Method::FfaLora);
    }

    #[test]
    fn csv_source_requires_keys() {
        let e = parse_config("method = \"deer\"\n[data.csv]\n").unwrap_err().to_string();
        assert!(e.contains("data.csv.path") && e.contains("data.csv.label_column"), "{e}");
    }
}
