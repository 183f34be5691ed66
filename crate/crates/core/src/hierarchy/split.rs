use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Edge, Hierarchy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitKind {
    Basic,
    Train,
    Val,
    Test,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Basic => "basic",
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(SplitKind::Basic),
            "train" => Ok(SplitKind::Train),
            "val" => Ok(SplitKind::Val),
            "test" => Ok(SplitKind::Test),
            other => Err(Error::arg(format!("unknown split kind {other:?}"))),
        }
    }
}

/// Partition of the transitive closure into training and held-out edges.
///
/// `basic` is the transitive reduction and is always trained on. The
/// non-basic remainder is shuffled once; `val` and `test` take the first
/// slices and `nonbasic_train` keeps the rest in shuffled order, so taking a
/// prefix of it selects a random subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSplit {
    pub basic: Vec<Edge>,
    pub nonbasic_train: Vec<Edge>,
    pub val: Vec<Edge>,
    pub test: Vec<Edge>,
    pub closure_size: usize,
}

impl EdgeSplit {
    /// Basic edges plus the first `fraction` of the non-basic train edges.
    pub fn training_edges(&self, fraction: f64) -> Vec<Edge> {
        let take = ((self.nonbasic_train.len() as f64) * fraction.clamp(0.0, 1.0)).floor() as usize;
        let mut out = self.basic.clone();
        out.extend_from_slice(&self.nonbasic_train[..take]);
        out
    }

    /// All edges tagged with their split, in file order.
    pub fn tagged(&self) -> impl Iterator<Item = (Edge, SplitKind)> + '_ {
        let tag = |v: &'_ [Edge], k: SplitKind| v.iter().map(move |&e| (e, k)).collect::<Vec<_>>();
        tag(&self.basic, SplitKind::Basic)
            .into_iter()
            .chain(tag(&self.nonbasic_train, SplitKind::Train))
            .chain(tag(&self.val, SplitKind::Val))
            .chain(tag(&self.test, SplitKind::Test))
    }

    /// Rebuilds a split from tagged edges and checks it against `h`.
    pub fn from_tagged(h: &Hierarchy, tagged: impl IntoIterator<Item = (Edge, SplitKind)>) -> Result<Self> {
        let mut split = EdgeSplit {
            basic: Vec::new(),
            nonbasic_train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            closure_size: 0,
        };
        for (e, k) in tagged {
            match k {
                SplitKind::Basic => split.basic.push(e),
                SplitKind::Train => split.nonbasic_train.push(e),
                SplitKind::Val => split.val.push(e),
                SplitKind::Test => split.test.push(e),
            }
        }
        split.closure_size = h.transitive_closure().len();
        split.validate(h)?;
        Ok(split)
    }

    /// Disjointness, coverage of the closure, and basic = reduction.
    pub fn validate(&self, h: &Hierarchy) -> Result<()> {
        let closure = h.transitive_closure();
        let mut seen = std::collections::BTreeSet::new();
        for (e, _) in self.tagged() {
            if !closure.contains(&e) {
                return Err(Error::Structural(format!(
                    "split edge ({}, {}) is not in the closure",
                    h.id(e.0),
                    h.id(e.1)
                )));
            }
            if !seen.insert(e) {
                return Err(Error::Structural(format!("split edge ({}, {}) appears twice", h.id(e.0), h.id(e.1))));
            }
        }
        if seen.len() != closure.len() {
            return Err(Error::Structural(format!("split covers {} of {} closure edges", seen.len(), closure.len())));
        }
        let reduction: std::collections::BTreeSet<Edge> = self.basic.iter().copied().collect();
        if reduction != h.transitive_reduction() {
            return Err(Error::Structural("basic edges differ from the transitive reduction".into()));
        }
        Ok(())
    }
}

/// Splits the closure into basic / train / val / test edges.
///
/// `val` and `test` each receive `floor(frac * |non-basic|)` edges, drawn
/// without replacement under `seed`.
pub fn split_edges(h: &Hierarchy, val_frac: f64, test_frac: f64, seed: u64) -> Result<EdgeSplit> {
    let ok = |f: f64| (0.0..=1.0).contains(&f);
    if !ok(val_frac) || !ok(test_frac) || val_frac + test_frac > 1.0 {
        return Err(Error::arg(format!(
            "split fractions must be in [0, 1] with val + test <= 1 (got {val_frac}, {test_frac})"
        )));
    }
    let closure = h.transitive_closure();
    let basic = h.transitive_reduction();
    let mut nonbasic: Vec<Edge> = closure.difference(&basic).copied().collect();
    let n = nonbasic.len();
    let n_val = (val_frac * n as f64).floor() as usize;
    let n_test = ((test_frac * n as f64).floor() as usize).min(n - n_val);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    nonbasic.shuffle(&mut rng);
    let val = nonbasic[..n_val].to_vec();
    let test = nonbasic[n_val..n_val + n_test].to_vec();
    let nonbasic_train = nonbasic[n_val + n_test..].to_vec();
    Ok(EdgeSplit { basic: basic.into_iter().collect(), nonbasic_train, val, test, closure_size: closure.len() })
}
