//! Run configuration: `key = value` files with `[section]` headers, checked
//! against a fixed schema, plus `--set section.key=value` overrides.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use conetax::heads::{HeadConfig, HeadKind, HeadTrainConfig, ThresholdPolicy};
use conetax::hierarchy::WeightScheme;
use conetax::joint::{JointConfig, NegativeRule};
use conetax::{
    ConeFormulation, EnergyModel, Error, Hierarchy, ModelKind, OptimizerKind, ParamSpace, Result, TrainConfig,
};

pub struct KeySpec {
    pub key: &'static str,
    /// Default as written in a config file; `auto` picks a per-model value.
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(key: &'static str, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec { key, default, help }
}

pub const SCHEMA: &[KeySpec] = &[
    key("model.kind", "ec", "energy model: oe, ec or hc"),
    key("model.dim", "2", "embedding dimension"),
    key("model.k", "0.1", "cone aperture constant K"),
    key("model.ec_formulation", "cosine", "Euclidean cone angle form: angle or cosine"),
    key("model.eps_ball", "1e-5", "ball-boundary margin for hc"),
    key("train.seed", "auto", "RNG seed; falls back to CONETAX_SEED, then 0"),
    key("train.epochs", "100", "training epochs"),
    key("train.batch_size", "100", "positive edges per batch"),
    key("train.alpha", "auto", "max-margin loss margin"),
    key("train.n_left", "5", "parent-side negatives per positive"),
    key("train.n_right", "5", "child-side negatives per positive"),
    key("train.pick_per_level", "true", "cycle the corrupting node over levels"),
    key("train.optimizer", "auto", "sgd, adam or rsgd"),
    key("train.param_space", "auto", "flat, ball_direct or ball_tangent_at_zero"),
    key("train.lr", "auto", "label learning rate"),
    key("train.nonbasic_train_fraction", "auto", "share of train non-basic edges used"),
    key("train.track_reconstruction", "false", "score full reconstruction every epoch"),
    key("split.val", "0.1", "validation share of non-basic edges"),
    key("split.test", "0.2", "test share of non-basic edges"),
    key("joint.item_optimizer", "adam", "optimizer for the item map"),
    key("joint.item_lr", "1e-3", "item map learning rate"),
    key("joint.negative_rule", "no_item_item", "no_item_item or no_item_endpoint"),
    key("joint.freeze_map", "false", "keep the item map at its initial value"),
    key("joint.val", "0.1", "validation share of items per leaf"),
    key("joint.test", "0.1", "test share of items per leaf"),
    key("heads.head", "per_level", "ovr, per_level, marginalization, masked or hsoftmax"),
    key("heads.level_weights", "auto", "comma-separated per-level loss weights"),
    key("heads.loss_levels", "auto", "comma-separated 1-based levels in the loss"),
    key("heads.threshold_policy", "pcdb", "one-vs-rest thresholds: pcdb or ofadb"),
    key("heads.class_weights", "none", "none, inverse or inverse_sqrt"),
    key("heads.epochs", "100", "head training epochs"),
    key("heads.batch_size", "32", "items per batch"),
    key("heads.lr", "0.01", "Adam learning rate for the scorer"),
];

/// Help text listing every schema key.
pub fn schema_help() -> String {
    let mut out = String::from("Config keys (file `[section]` + `key = value`, or --set section.key=value):\n");
    for k in SCHEMA {
        out.push_str(&format!("  {:<32} {:<14} {}\n", k.key, format!("[{}]", k.default), k.help));
    }
    out
}

/// Validated key/value settings. Only keys that were set are stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn schema_key(k: &str) -> Result<&'static KeySpec> {
    SCHEMA.iter().find(|s| s.key == k).ok_or_else(|| Error::Config(format!("unknown config key {k:?}")))
}

impl RunConfig {
    pub fn parse(path: &Path, text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::Config(format!("{}:{}: {msg}", path.display(), i + 1));
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| at(format!("bad section header {line:?}")))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
            let k = k.trim();
            let full = if section.is_empty() || k.contains('.') { k.to_string() } else { format!("{section}.{k}") };
            cfg.set(&full, v.trim()).map_err(|e| at(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::parse(path, &conetax::io::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let spec = schema_key(key)?;
        if value == "auto" {
            if spec.default != "auto" {
                return Err(Error::Config(format!("{key} has no automatic value")));
            }
        } else {
            check_value(key, value)?;
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
        self.set(k.trim(), v.trim())
    }

    fn raw(&self, key: &str) -> &str {
        match self.values.get(key) {
            Some(v) => v,
            None => schema_key(key).map(|s| s.default).unwrap_or("auto"),
        }
    }

    fn explicit(&self, key: &str) -> Option<&str> {
        Some(self.raw(key)).filter(|v| *v != "auto")
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        parse_value(key, self.raw(key))
    }

    fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.explicit(key).map(|v| parse_value(key, v)).transpose()
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        self.get("model.kind")
    }

    pub fn seed(&self) -> Result<u64> {
        if let Some(s) = self.get_opt("train.seed")? {
            return Ok(s);
        }
        match std::env::var("CONETAX_SEED") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("CONETAX_SEED must be an unsigned integer (got {v:?})"))),
            Err(_) => Ok(0),
        }
    }

    pub fn energy_model(&self) -> Result<EnergyModel> {
        let kind = self.model_kind()?;
        let m = EnergyModel::new(kind, self.get("model.k")?)?
            .with_formulation(self.get::<ConeFormulation>("model.ec_formulation")?)
            .with_eps_ball(self.get("model.eps_ball")?)?;
        Ok(m)
    }

    fn apply_train(&self, cfg: &mut TrainConfig) -> Result<()> {
        cfg.model = self.energy_model()?;
        cfg.seed = self.seed()?;
        cfg.epochs = self.get("train.epochs")?;
        cfg.batch_size = self.get("train.batch_size")?;
        cfg.n_left = self.get("train.n_left")?;
        cfg.n_right = self.get("train.n_right")?;
        cfg.pick_per_level = self.get("train.pick_per_level")?;
        cfg.track_reconstruction = self.get("train.track_reconstruction")?;
        if let Some(a) = self.get_opt("train.alpha")? {
            cfg.alpha = a;
        }
        if let Some(o) = self.get_opt("train.optimizer")? {
            cfg.optimizer = o;
        }
        if let Some(p) = self.get_opt("train.param_space")? {
            cfg.param_space = p;
        }
        if let Some(lr) = self.get_opt("train.lr")? {
            cfg.lr = lr;
        }
        if let Some(f) = self.get_opt("train.nonbasic_train_fraction")? {
            cfg.nonbasic_train_fraction = f;
        }
        cfg.validate()
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::labels(self.model_kind()?, self.get("model.dim")?);
        self.apply_train(&mut cfg)?;
        Ok(cfg)
    }

    pub fn joint_config(&self) -> Result<JointConfig> {
        let mut cfg = JointConfig::new(self.model_kind()?, self.get("model.dim")?);
        self.apply_train(&mut cfg.base)?;
        cfg.item_optimizer = self.get("joint.item_optimizer")?;
        cfg.item_lr = self.get("joint.item_lr")?;
        cfg.negative_rule = self.get("joint.negative_rule")?;
        cfg.freeze_map = self.get("joint.freeze_map")?;
        Ok(cfg)
    }

    pub fn edge_split_fractions(&self) -> Result<(f64, f64)> {
        Ok((self.get("split.val")?, self.get("split.test")?))
    }

    pub fn item_split_fractions(&self) -> Result<(f64, f64)> {
        Ok((self.get("joint.val")?, self.get("joint.test")?))
    }

    /// Head settings for `h`; class weights need the training leaf counts.
    pub fn head_config(&self, h: &Hierarchy, counts: Option<&[u64]>) -> Result<HeadConfig> {
        let kind: HeadKind = self.get("heads.head")?;
        let mut cfg = HeadConfig::new(kind, h.n_levels());
        if let Some(w) = self.explicit("heads.level_weights") {
            cfg.level_weights = parse_list("heads.level_weights", w)?;
        }
        if let Some(l) = self.explicit("heads.loss_levels") {
            cfg.loss_levels = parse_list("heads.loss_levels", l)?;
        }
        cfg.threshold_policy = self.get::<ThresholdPolicy>("heads.threshold_policy")?;
        match self.raw("heads.class_weights") {
            "none" => {}
            s => {
                let scheme: WeightScheme = parse_value("heads.class_weights", s)?;
                let counts = counts.ok_or_else(|| Error::Config("class weights need training items".into()))?;
                cfg = cfg.with_class_weights(h, counts, scheme)?;
            }
        }
        Ok(cfg)
    }

    pub fn head_train_config(&self, head: HeadConfig) -> Result<HeadTrainConfig> {
        let mut cfg = HeadTrainConfig::new(head);
        cfg.epochs = self.get("heads.epochs")?;
        cfg.batch_size = self.get("heads.batch_size")?;
        cfg.lr = self.get("heads.lr")?;
        cfg.seed = self.seed()?;
        Ok(cfg)
    }

    /// Every schema key with its effective value, for reports.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        SCHEMA.iter().map(|s| (s.key.to_string(), self.raw(s.key).to_string())).collect()
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse_value(key, s.trim())).collect()
}

/// Type-checks `value` for `key` without building anything.
fn check_value(key: &str, value: &str) -> Result<()> {
    match key {
        "model.kind" => parse_value::<ModelKind>(key, value).map(drop),
        "model.ec_formulation" => parse_value::<ConeFormulation>(key, value).map(drop),
        "model.dim" | "train.epochs" | "train.batch_size" | "train.n_left" | "train.n_right" | "heads.epochs"
        | "heads.batch_size" => parse_value::<usize>(key, value).map(drop),
        "train.seed" => parse_value::<u64>(key, value).map(drop),
        "model.k"
        | "model.eps_ball"
        | "train.alpha"
        | "train.lr"
        | "train.nonbasic_train_fraction"
        | "split.val"
        | "split.test"
        | "joint.item_lr"
        | "joint.val"
        | "joint.test"
        | "heads.lr" => parse_value::<f64>(key, value).map(drop),
        "train.pick_per_level" | "train.track_reconstruction" | "joint.freeze_map" => {
            parse_value::<bool>(key, value).map(drop)
        }
        "train.optimizer" | "joint.item_optimizer" => parse_value::<OptimizerKind>(key, value).map(drop),
        "train.param_space" => parse_value::<ParamSpace>(key, value).map(drop),
        "joint.negative_rule" => parse_value::<NegativeRule>(key, value).map(drop),
        "heads.head" => parse_value::<HeadKind>(key, value).map(drop),
        "heads.threshold_policy" => parse_value::<ThresholdPolicy>(key, value).map(drop),
        "heads.level_weights" => parse_list::<f64>(key, value).map(drop),
        "heads.loss_levels" => parse_list::<usize>(key, value).map(drop),
        "heads.class_weights" if value == "none" => Ok(()),
        "heads.class_weights" => parse_value::<WeightScheme>(key, value).map(drop),
        other => Err(Error::Config(format!("unknown config key {other:?}"))),
    }
}
