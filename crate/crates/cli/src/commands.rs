//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use conetax::geometry::invert_radial;
use conetax::heads::{train_heads, HeadReport, LinearScorer, Thresholds};
use conetax::hierarchy::{fixture, gen_leveled_forest, gen_toy_tree, split_edges, Fixture};
use conetax::io::{self, PredictionRow};
use conetax::joint::{classify, gen_items, rank_labels, split_items, train_joint, ItemSplit};
use conetax::metrics::{hit_at_k, reconstruction_score};
use conetax::trainer::{train_labels, tune_threshold};
use conetax::{
    EmbeddingTable, EnergyModel, Error, Hierarchy, HierarchyMode, ItemMap, ItemSet, LabelLayout, MetricsReport,
    NodeIdx, Result, Space,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// Like `println!`, but a closed stdout (e.g. `| head`) is not an error.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

/// `say!` without the trailing newline.
macro_rules! say_raw {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout().lock(), $($t)*);
    }};
}

/// Settings shared by every command.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ctx {
    pub force: bool,
}

impl Ctx {
    pub fn write(&self, path: &Path, contents: &str) -> Result<()> {
        io::write_atomic(path, contents.as_bytes(), self.force)
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, v: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.write(path, &s)
    }

    /// Fails when any of `paths` exists and `--force` is off.
    fn check_fresh(&self, paths: &[PathBuf]) -> Result<()> {
        if self.force {
            return Ok(());
        }
        match paths.iter().find(|p| p.exists()) {
            Some(p) => Err(Error::State(format!("{} exists; pass --force to overwrite", p.display()))),
            None => Ok(()),
        }
    }
}

/// JSON sidecar written next to every label checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub command: String,
    pub model: EnergyModel,
    pub dim: usize,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    #[serde(with = "conetax::io::opt_f64")]
    pub threshold: Option<f64>,
    /// Item map file, relative to the checkpoint's directory.
    pub item_map: Option<String>,
    pub warm_start: Option<String>,
    pub config: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn load(checkpoint: &Path) -> Result<Option<Checkpoint>> {
        let side = io::sidecar_path(checkpoint);
        if !side.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&io::read_to_string(&side)?)?))
    }
}

pub fn load_hierarchy(nodes: &Path, edges: &Path, mode: HierarchyMode) -> Result<Hierarchy> {
    io::read_hierarchy(nodes, edges, mode)
}

fn write_hierarchy(ctx: &Ctx, h: &Hierarchy, out: &Path) -> Result<()> {
    let (n, e) = (out.join("nodes.tsv"), out.join("edges.tsv"));
    ctx.check_fresh(&[n.clone(), e.clone()])?;
    ctx.write(&n, &io::nodes_tsv(h))?;
    ctx.write(&e, &io::edges_tsv(h))?;
    say!("wrote {} nodes and {} edges to {}", h.len(), h.edges().len(), out.display());
    Ok(())
}

pub fn gen_toy(ctx: &Ctx, levels: usize, branching: usize, out: &Path) -> Result<()> {
    write_hierarchy(ctx, &gen_toy_tree(levels, branching)?, out)
}

pub fn gen_fixture(ctx: &Ctx, name: &str, out: &Path) -> Result<()> {
    let which: Fixture = name.parse()?;
    write_hierarchy(ctx, &fixture(which), out)
}

pub fn gen_forest(ctx: &Ctx, counts: &[usize], seed: u64, out: &Path) -> Result<()> {
    write_hierarchy(ctx, &gen_leveled_forest(counts, seed)?, out)
}

pub fn gen_item_file(
    ctx: &Ctx,
    h: &Hierarchy,
    per_leaf: usize,
    dim: usize,
    noise: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let items = gen_items(h, per_leaf, dim, noise, seed)?;
    ctx.write(out, &io::features_tsv(h, &items))?;
    say!("wrote {} items to {}", items.len(), out.display());
    Ok(())
}

pub fn split(ctx: &Ctx, h: &Hierarchy, val: f64, test: f64, seed: u64, out: &Path) -> Result<()> {
    let s = split_edges(h, val, test, seed)?;
    ctx.write(out, &io::split_tsv(h, &s))?;
    say!("basic {}\ttrain {}\tval {}\ttest {}", s.basic.len(), s.nonbasic_train.len(), s.val.len(), s.test.len());
    Ok(())
}

fn load_warm_start(spec: &str, h: &Hierarchy) -> Result<(EmbeddingTable, String)> {
    let path = spec.strip_prefix("from=").unwrap_or(spec);
    let ids: Vec<String> = h.nodes().iter().map(|n| n.id.clone()).collect();
    let t = io::read_embeddings(Path::new(path))?.reindexed(&ids)?;
    Ok((t, path.to_string()))
}

fn label_outputs(out: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let ckpt = out.join("labels.tsv");
    (ckpt.clone(), io::sidecar_path(&ckpt), out.join("report.json"))
}

pub fn train_labels_cmd(
    ctx: &Ctx,
    h: &Hierarchy,
    split_file: Option<&Path>,
    rc: &RunConfig,
    init: Option<&str>,
    out: &Path,
) -> Result<()> {
    let (ckpt, side, report_path) = label_outputs(out);
    ctx.check_fresh(&[ckpt.clone(), side.clone(), report_path.clone()])?;
    let mut cfg = rc.train_config()?;
    let split = match split_file {
        Some(p) => io::read_split(p, h)?,
        None => {
            let (v, t) = rc.edge_split_fractions()?;
            split_edges(h, v, t, cfg.seed)?
        }
    };
    if let Some(spec) = init {
        let (t, src) = load_warm_start(spec, h)?;
        cfg.init = Some(t);
        cfg.init_source = Some(src);
    }
    let (table, report) = train_labels(h, &split, &cfg)?;
    ctx.write(&ckpt, &io::embeddings_tsv(&table))?;
    ctx.write_json(
        &side,
        &Checkpoint {
            command: "train-labels".into(),
            model: cfg.model,
            dim: cfg.dim,
            seed: cfg.seed,
            best_epoch: report.best_epoch,
            threshold: report.threshold,
            item_map: None,
            warm_start: cfg.init_source.clone(),
            config: rc.resolved(),
        },
    )?;
    ctx.write_json(&report_path, &report)?;
    say!(
        "best epoch {}\tval {}\ttest {}",
        fmt_epoch(report.best_epoch),
        fmt_opt(report.best_val),
        fmt_opt(report.test)
    );
    Ok(())
}

fn fmt_epoch(e: Option<usize>) -> String {
    e.map_or_else(|| "-".to_string(), |e| e.to_string())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

pub fn split_tsv(items: &ItemSet, s: &ItemSplit) -> String {
    let mut tag = vec![""; items.len()];
    for (name, idx) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
        for &i in idx {
            tag[i] = name;
        }
    }
    items.items().iter().zip(tag).map(|(it, t)| format!("{}\t{t}\n", it.id)).collect()
}

pub fn read_item_split(path: &Path, items: &ItemSet) -> Result<ItemSplit> {
    let text = io::read_to_string(path)?;
    let index: BTreeMap<&str, usize> = items.items().iter().enumerate().map(|(i, it)| (it.id.as_str(), i)).collect();
    let mut s = ItemSplit { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |m: String| Error::Parse { path: path.to_path_buf(), line: n + 1, message: m };
        let (id, part) = line.split_once('\t').ok_or_else(|| bad("expected item_id and split".into()))?;
        let &i = index.get(id).ok_or_else(|| bad(format!("unknown item {id:?}")))?;
        match part.trim() {
            "train" => s.train.push(i),
            "val" => s.val.push(i),
            "test" => s.test.push(i),
            other => return Err(bad(format!("unknown split {other:?}"))),
        }
    }
    s.train.sort_unstable();
    s.val.sort_unstable();
    s.test.sort_unstable();
    Ok(s)
}

fn item_map_rows(map: &ItemMap) -> Vec<(String, Vec<f64>)> {
    map.weights().chunks(map.d_f()).enumerate().map(|(r, row)| (format!("r{r}"), row.to_vec())).collect()
}

fn load_item_map(path: &Path, model: &EnergyModel) -> Result<ItemMap> {
    let rows = io::read_matrix(path)?;
    let d_f = rows.first().map_or(0, |r| r.1.len());
    if d_f == 0 || rows.iter().any(|r| r.1.len() != d_f) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "item map rows must be non-empty and equally long".into(),
        });
    }
    let w: Vec<f64> = rows.iter().flat_map(|r| r.1.iter().copied()).collect();
    ItemMap::new(rows.len(), d_f, w, model)
}

pub fn train_joint_cmd(
    ctx: &Ctx,
    h: &Hierarchy,
    items: &ItemSet,
    rc: &RunConfig,
    init: Option<&str>,
    out: &Path,
) -> Result<()> {
    let (ckpt, side, report_path) = label_outputs(out);
    let (map_path, split_path) = (out.join("item_map.tsv"), out.join("items_split.tsv"));
    ctx.check_fresh(&[ckpt.clone(), side.clone(), report_path.clone(), map_path.clone(), split_path.clone()])?;
    let mut cfg = rc.joint_config()?;
    let (v, t) = rc.item_split_fractions()?;
    let split = split_items(items, v, t, cfg.base.seed)?;
    if let Some(spec) = init {
        let (t, src) = load_warm_start(spec, h)?;
        cfg.base.init = Some(t);
        cfg.base.init_source = Some(src);
    }
    let (labels, map, report) = train_joint(h, items, &split, &cfg)?;
    ctx.write(&split_path, &split_tsv(items, &split))?;
    ctx.write(&map_path, &io::matrix_tsv(&item_map_rows(&map)))?;
    ctx.write(&ckpt, &io::embeddings_tsv(&labels))?;
    ctx.write_json(
        &side,
        &Checkpoint {
            command: "train-joint".into(),
            model: cfg.base.model,
            dim: cfg.base.dim,
            seed: cfg.base.seed,
            best_epoch: report.best_epoch,
            threshold: None,
            item_map: Some("item_map.tsv".into()),
            warm_start: cfg.base.init_source.clone(),
            config: rc.resolved(),
        },
    )?;
    ctx.write_json(&report_path, &report)?;
    say!(
        "best epoch {}\tval micro-F1 {}\ttest micro-F1 {}",
        fmt_epoch(report.best_epoch),
        fmt_opt(report.best_val),
        fmt_opt(report.test)
    );
    Ok(())
}

/// Per-node counts of training items whose path passes through the node.
fn path_counts(h: &Hierarchy, items: &ItemSet, idx: &[usize]) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; h.len()];
    for &i in idx {
        for n in items.path(h, i)? {
            counts[n] += 1;
        }
    }
    Ok(counts)
}

fn scorer_rows(layout: &LabelLayout, h: &Hierarchy, s: &LinearScorer) -> Vec<(String, Vec<f64>)> {
    let leaf_only = s.n_out == layout.n_leaves() && s.n_out != layout.n_labels();
    (0..s.n_out)
        .map(|o| {
            let node = if leaf_only { layout.level(layout.n_levels() - 1)[o] } else { layout.flat_node(o) };
            let mut row = s.w[o * s.d_f..(o + 1) * s.d_f].to_vec();
            row.push(s.b[o]);
            (h.id(node).to_string(), row)
        })
        .collect()
}

pub fn train_heads_cmd(ctx: &Ctx, h: &Hierarchy, items: &ItemSet, rc: &RunConfig, out: &Path) -> Result<()> {
    let paths = ["scorer.tsv", "logits.tsv", "report.json", "items_split.tsv"].map(|f| out.join(f));
    ctx.check_fresh(&paths)?;
    let seed = rc.seed()?;
    let (v, t) = rc.item_split_fractions()?;
    let split = split_items(items, v, t, seed)?;
    let counts = path_counts(h, items, &split.train)?;
    let head = rc.head_config(h, Some(&counts))?;
    let cfg = rc.head_train_config(head)?;
    let (scorer, report) = train_heads(h, items, &split, &cfg)?;
    let layout = LabelLayout::new(h)?;
    let logits: Vec<(String, Vec<f64>)> =
        items.items().iter().map(|it| Ok((it.id.clone(), scorer.logits(&it.feature)?))).collect::<Result<_>>()?;
    ctx.write(&paths[0], &io::matrix_tsv(&scorer_rows(&layout, h, &scorer)))?;
    ctx.write(&paths[1], &io::matrix_tsv(&logits))?;
    ctx.write_json(&paths[2], &report)?;
    ctx.write(&paths[3], &split_tsv(items, &split))?;
    say!(
        "head {}\tbest epoch {}\tval micro-F1 {}\ttest micro-F1 {}",
        report.head.as_str(),
        report.best_epoch,
        fmt_opt(report.best_val),
        fmt_opt(report.test.as_ref().map(|r| r.micro.f1))
    );
    Ok(())
}

/// Model for evaluating `checkpoint`: the config when it names a model,
/// otherwise the sidecar, otherwise the defaults.
pub fn eval_model(checkpoint: &Path, rc: &RunConfig, from_config: bool) -> Result<(EnergyModel, Option<Checkpoint>)> {
    let side = Checkpoint::load(checkpoint)?;
    let model = match (&side, from_config) {
        (Some(c), false) => c.model,
        _ => rc.energy_model()?,
    };
    Ok((model, side))
}

fn check_space(model: &EnergyModel, t: &EmbeddingTable) -> Result<()> {
    let want = if model.is_ball() { Space::Ball } else { Space::Flat };
    if t.space() != want {
        return Err(Error::Config(format!(
            "checkpoint space is {} but model {} needs {}",
            t.space().as_str(),
            model.kind.short_name(),
            want.as_str()
        )));
    }
    Ok(())
}

fn load_labels(checkpoint: &Path, h: &Hierarchy, model: &EnergyModel) -> Result<EmbeddingTable> {
    let t = io::read_embeddings(checkpoint)?;
    check_space(model, &t)?;
    let ids: Vec<String> = h.nodes().iter().map(|n| n.id.clone()).collect();
    t.reindexed(&ids)
}

pub fn eval_reconstruction(
    ctx: &Ctx,
    h: &Hierarchy,
    checkpoint: &Path,
    rc: &RunConfig,
    from_config: bool,
    out: Option<&Path>,
) -> Result<()> {
    let (model, _) = eval_model(checkpoint, rc, from_config)?;
    let labels = load_labels(checkpoint, h, &model)?;
    let r = reconstruction_score(&model, &labels, h)?;
    emit_json(ctx, out, &r)
}

fn emit_json<T: Serialize>(ctx: &Ctx, out: Option<&Path>, v: &T) -> Result<()> {
    match out {
        Some(p) => ctx.write_json(p, v),
        None => {
            say!("{}", serde_json::to_string_pretty(v)?);
            Ok(())
        }
    }
}

/// Items of `part` (`all`, `train`, `val` or `test`).
pub fn select_items(items: &ItemSet, split: Option<&Path>, part: &str) -> Result<ItemSet> {
    if part == "all" {
        return Ok(items.clone());
    }
    let path = split.ok_or_else(|| Error::Config(format!("--part {part} needs --split-file")))?;
    let s = read_item_split(path, items)?;
    let idx = match part {
        "train" => s.train,
        "val" => s.val,
        "test" => s.test,
        other => return Err(Error::Config(format!("unknown part {other:?}; expected all, train, val or test"))),
    };
    Ok(items.subset(&idx))
}

#[allow(clippy::too_many_arguments)]
pub fn eval_classify(
    ctx: &Ctx,
    h: &Hierarchy,
    checkpoint: &Path,
    items: &ItemSet,
    ks: &[usize],
    rc: &RunConfig,
    from_config: bool,
    out: &Path,
) -> Result<()> {
    let paths = ["predictions.tsv", "metrics.json", "levels.tsv"].map(|f| out.join(f));
    ctx.check_fresh(&paths)?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("--k needs positive values".into()));
    }
    let (model, side) = eval_model(checkpoint, rc, from_config)?;
    let labels = load_labels(checkpoint, h, &model)?;
    let map_name = side
        .as_ref()
        .and_then(|c| c.item_map.clone())
        .ok_or_else(|| Error::Config(format!("{} has no item map in its sidecar", checkpoint.display())))?;
    let map_path = checkpoint.parent().unwrap_or(Path::new(".")).join(map_name);
    let map = load_item_map(&map_path, &model)?;

    let kmax = *ks.iter().max().expect("non-empty k list");
    let mut rows = Vec::new();
    let mut preds = Vec::with_capacity(items.len());
    let mut truth = Vec::with_capacity(items.len());
    let mut ranked: Vec<Vec<Vec<NodeIdx>>> = vec![Vec::new(); h.n_levels()];
    for (i, it) in items.items().iter().enumerate() {
        let e = map.embed(&it.feature)?;
        let p = classify(&model, &labels, &e, h)?;
        for (lvl, &node) in p.iter().enumerate() {
            rows.push(PredictionRow {
                item_id: it.id.clone(),
                level: lvl + 1,
                label_id: h.id(node).to_string(),
                energy: model.energy_projected(labels.row(node), &e)?,
            });
            ranked[lvl].push(rank_labels(&model, &labels, &e, h, lvl + 1, kmax)?.0);
        }
        preds.push(p);
        truth.push(items.path(h, i)?);
    }
    let mut report = MetricsReport::classification(h, &preds, &truth)?;
    for &k in ks {
        let per_level = (0..h.n_levels())
            .map(|lvl| {
                let t: Vec<NodeIdx> = truth.iter().map(|p| p[lvl]).collect();
                hit_at_k(&ranked[lvl], &t, k)
            })
            .collect::<Result<Vec<_>>>()?;
        report.hit_at_k.insert(k, per_level);
    }
    ctx.write(&paths[0], &io::predictions_tsv(&rows))?;
    ctx.write_json(&paths[1], &report)?;
    ctx.write(&paths[2], &report.level_table_tsv())?;
    say_raw!("{}", report.level_table_tsv());
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn eval_heads(
    ctx: &Ctx,
    h: &Hierarchy,
    logits_path: &Path,
    items: Option<&ItemSet>,
    thresholds_from: Option<&Path>,
    rc: &RunConfig,
    out: &Path,
) -> Result<()> {
    let paths = ["probabilities.tsv", "metrics.json", "levels.tsv"].map(|f| out.join(f));
    ctx.check_fresh(&paths)?;
    let layout = LabelLayout::new(h)?;
    let head = rc.head_config(h, None)?;
    head.validate(&layout)?;
    let logits = io::read_matrix(logits_path)?;
    let th = match thresholds_from {
        Some(p) => serde_json::from_str::<HeadReport>(&io::read_to_string(p)?)?.thresholds,
        None => Thresholds::Untuned,
    };

    let mut probs = String::new();
    for (id, x) in &logits {
        match head.level_probabilities(&layout, x)? {
            Some(levels) => {
                for (lvl, p) in levels.iter().enumerate() {
                    for (j, v) in p.iter().enumerate() {
                        probs.push_str(&format!("{id}\t{}\t{v}\n", h.id(layout.level(lvl)[j])));
                    }
                }
            }
            None => {
                if x.len() != layout.n_labels() {
                    return Err(Error::Argument(format!(
                        "row {id} has {} logits, expected {}",
                        x.len(),
                        layout.n_labels()
                    )));
                }
                for (j, v) in x.iter().enumerate() {
                    probs.push_str(&format!("{id}\t{}\t{}\n", h.id(layout.flat_node(j)), sigmoid(*v)));
                }
            }
        }
    }
    ctx.write(&paths[0], &probs)?;

    let Some(items) = items else {
        say!("wrote probabilities for {} rows", logits.len());
        return Ok(());
    };
    let index: BTreeMap<&str, usize> = items.items().iter().enumerate().map(|(i, it)| (it.id.as_str(), i)).collect();
    let mut preds = Vec::with_capacity(logits.len());
    let mut truth = Vec::with_capacity(logits.len());
    for (id, x) in &logits {
        let &i = index.get(id.as_str()).ok_or_else(|| Error::Argument(format!("logits row {id:?} has no item")))?;
        preds.push(head.predict(&layout, x, &th)?);
        truth.push(items.path(h, i)?);
    }
    let report = MetricsReport::classification(h, &preds, &truth)?;
    ctx.write_json(&paths[1], &report)?;
    ctx.write(&paths[2], &report.level_table_tsv())?;
    say_raw!("{}", report.level_table_tsv());
    Ok(())
}

fn read_values(path: &Path) -> Result<Vec<f64>> {
    let text = io::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("not a number: {l:?}"),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct ThresholdReport {
    #[serde(with = "conetax::io::f64_or_string")]
    threshold: f64,
    f1: f64,
    n_positive: usize,
    n_negative: usize,
}

pub fn tune_threshold_cmd(ctx: &Ctx, pos: &Path, neg: &Path, out: Option<&Path>) -> Result<()> {
    let (p, n) = (read_values(pos)?, read_values(neg)?);
    let (threshold, f1) = tune_threshold(&p, &n)?;
    emit_json(ctx, out, &ThresholdReport { threshold, f1, n_positive: p.len(), n_negative: n.len() })
}

pub fn export(
    ctx: &Ctx,
    checkpoint: &Path,
    h: Option<&Hierarchy>,
    svg: bool,
    invert: Option<f64>,
    out: &Path,
) -> Result<()> {
    let mut t = io::read_embeddings(checkpoint)?;
    if let Some(r) = invert {
        t = invert_radial(&t, r)?;
    }
    let text = if svg {
        let name = checkpoint.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        crate::svg::render(&t, h, &name)
    } else {
        io::embeddings_tsv(&t)
    };
    ctx.write(out, &text)
}
