//! TSV and JSON file formats, and atomic writes.
//!
//! | file | columns |
//! |------|---------|
//! | nodes | `node_id  name  level` |
//! | edges | `parent_id  child_id` |
//! | split | `parent_id  child_id  basic\|train\|val\|test` |
//! | features | `item_id  leaf_label_id  c1,c2,...` |
//! | predictions | `item_id  level  predicted_label_id  energy` |
//! | embeddings | `node_id  space  c1 ... cd` |
//! | matrix (logits, item map) | `row_id  c1 ... cn` |
//!
//! All files are UTF-8, tab-separated, newline-terminated and headerless.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::hierarchy::{EdgeSplit, Hierarchy, HierarchyMode, Node, SplitKind};
use crate::joint::ItemSet;
use crate::trainer::{EmbeddingTable, Space};

/// Serde adapter writing non-finite floats as `"inf"`, `"-inf"` or `"nan"`.
pub mod f64_or_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad float {other:?}"))),
            },
        }
    }
}

/// [`f64_or_string`] for `Option<f64>`.
pub mod opt_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct W(#[serde(with = "super::f64_or_string")] f64);

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(W).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
    }
}

/// [`f64_or_string`] for `Vec<f64>`.
pub mod vec_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct W(#[serde(with = "super::f64_or_string")] f64);

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|&x| W(x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<W>::deserialize(d)?.into_iter().map(|w| w.0).collect())
    }
}

/// Writes `contents` through a temporary file in the target directory and
/// renames it into place. Refuses to replace an existing file unless `force`.
pub fn write_atomic(path: &Path, contents: &[u8], force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::State(format!("{} exists; pass --force to overwrite", path.display())));
    }
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty lines split on tabs, with 1-based line numbers.
fn records<'a>(text: &'a str) -> impl Iterator<Item = (usize, Vec<&'a str>)> + 'a {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').split('\t').collect()))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

fn expect_cols(path: &Path, line: usize, cols: &[&str], n: usize) -> Result<()> {
    if cols.len() != n {
        return Err(parse_err(path, line, format!("expected {n} columns, found {}", cols.len())));
    }
    Ok(())
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| parse_err(path, line, format!("not a number: {s:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value {s:?}")));
    }
    Ok(v)
}

pub fn nodes_tsv(h: &Hierarchy) -> String {
    h.nodes().iter().map(|n| format!("{}\t{}\t{}\n", n.id, n.name, n.level)).collect()
}

pub fn edges_tsv(h: &Hierarchy) -> String {
    h.edges().iter().map(|&(u, v)| format!("{}\t{}\n", h.id(u), h.id(v))).collect()
}

pub fn parse_nodes(path: &Path, text: &str) -> Result<Vec<Node>> {
    records(text)
        .map(|(line, c)| {
            expect_cols(path, line, &c, 3)?;
            let level = c[2].trim().parse().map_err(|_| parse_err(path, line, format!("bad level {:?}", c[2])))?;
            Ok(Node::new(c[0], c[1], level))
        })
        .collect()
}

pub fn parse_edges(path: &Path, text: &str) -> Result<Vec<(String, String)>> {
    records(text)
        .map(|(line, c)| {
            expect_cols(path, line, &c, 2)?;
            Ok((c[0].to_string(), c[1].to_string()))
        })
        .collect()
}

pub fn read_hierarchy(nodes: &Path, edges: &Path, mode: HierarchyMode) -> Result<Hierarchy> {
    let n = parse_nodes(nodes, &read_to_string(nodes)?)?;
    let e = parse_edges(edges, &read_to_string(edges)?)?;
    Hierarchy::from_named_edges(n, &e, mode)
}

pub fn split_tsv(h: &Hierarchy, s: &EdgeSplit) -> String {
    s.tagged().map(|((u, v), k)| format!("{}\t{}\t{}\n", h.id(u), h.id(v), k.as_str())).collect()
}

pub fn parse_split(path: &Path, text: &str, h: &Hierarchy) -> Result<EdgeSplit> {
    let mut tagged = Vec::new();
    for (line, c) in records(text) {
        expect_cols(path, line, &c, 3)?;
        let look = |id: &str| h.index_of(id).ok_or_else(|| parse_err(path, line, format!("unknown node {id:?}")));
        let kind: SplitKind = c[2].parse().map_err(|e: Error| parse_err(path, line, e.to_string()))?;
        tagged.push(((look(c[0])?, look(c[1])?), kind));
    }
    EdgeSplit::from_tagged(h, tagged)
}

pub fn read_split(path: &Path, h: &Hierarchy) -> Result<EdgeSplit> {
    parse_split(path, &read_to_string(path)?, h)
}

pub fn features_tsv(h: &Hierarchy, items: &ItemSet) -> String {
    items
        .items()
        .iter()
        .map(|it| {
            let f: Vec<String> = it.feature.iter().map(f64::to_string).collect();
            format!("{}\t{}\t{}\n", it.id, h.id(it.leaf), f.join(","))
        })
        .collect()
}

pub fn parse_features(path: &Path, text: &str, h: &Hierarchy) -> Result<ItemSet> {
    let mut recs = Vec::new();
    for (line, c) in records(text) {
        expect_cols(path, line, &c, 3)?;
        let f = c[2].split(',').map(|s| parse_f64(path, line, s)).collect::<Result<Vec<_>>>()?;
        recs.push((c[0].to_string(), c[1].to_string(), f));
    }
    ItemSet::from_records(h, recs)
}

pub fn read_features(path: &Path, h: &Hierarchy) -> Result<ItemSet> {
    parse_features(path, &read_to_string(path)?, h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub item_id: String,
    pub level: usize,
    pub label_id: String,
    pub energy: f64,
}

pub fn predictions_tsv(rows: &[PredictionRow]) -> String {
    rows.iter().map(|r| format!("{}\t{}\t{}\t{}\n", r.item_id, r.level, r.label_id, r.energy)).collect()
}

pub fn embeddings_tsv(t: &EmbeddingTable) -> String {
    let mut out = String::new();
    for (i, id) in t.ids().iter().enumerate() {
        out.push_str(id);
        out.push('\t');
        out.push_str(t.space().as_str());
        for v in t.row(i) {
            out.push('\t');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn parse_embeddings(path: &Path, text: &str) -> Result<EmbeddingTable> {
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    let mut space = None;
    for (line, c) in records(text) {
        if c.len() < 3 {
            return Err(parse_err(path, line, "expected id, space and at least one coordinate"));
        }
        let s: Space = c[1].parse().map_err(|e: Error| parse_err(path, line, e.to_string()))?;
        if *space.get_or_insert(s) != s {
            return Err(parse_err(path, line, "mixed space tags"));
        }
        let d = c.len() - 2;
        if *dim.get_or_insert(d) != d {
            return Err(parse_err(path, line, format!("row has {d} coordinates, expected {}", dim.unwrap_or(d))));
        }
        ids.push(c[0].to_string());
        for v in &c[2..] {
            data.push(parse_f64(path, line, v)?);
        }
    }
    let (Some(dim), Some(space)) = (dim, space) else {
        return Err(parse_err(path, 1, "empty embedding file"));
    };
    EmbeddingTable::new(ids, dim, space, data)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    parse_embeddings(path, &read_to_string(path)?)
}

/// Rows of `(id, values)`.
pub fn matrix_tsv(rows: &[(String, Vec<f64>)]) -> String {
    let mut out = String::new();
    for (id, vals) in rows {
        out.push_str(id);
        for v in vals {
            out.push('\t');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn parse_matrix(path: &Path, text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    records(text)
        .map(|(line, c)| {
            let vals = c[1..].iter().map(|v| parse_f64(path, line, v)).collect::<Result<Vec<_>>>()?;
            Ok((c[0].to_string(), vals))
        })
        .collect()
}

pub fn read_matrix(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    parse_matrix(path, &read_to_string(path)?)
}

/// JSON sidecar path for a checkpoint: same stem, `.json` extension.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{fixture, split_edges, Fixture};
    use crate::joint::gen_items;

    #[test]
    fn hierarchy_round_trip() {
        let h = fixture(Fixture::Cifar10);
        let p = Path::new("x");
        let nodes = parse_nodes(p, &nodes_tsv(&h)).unwrap();
        let edges = parse_edges(p, &edges_tsv(&h)).unwrap();
        let h2 = Hierarchy::from_named_edges(nodes, &edges, HierarchyMode::Tree).unwrap();
        assert_eq!(nodes_tsv(&h2), nodes_tsv(&h));
        assert_eq!(edges_tsv(&h2), edges_tsv(&h));
        let s = split_edges(&h, 0.2, 0.2, 3).unwrap();
        assert_eq!(parse_split(p, &split_tsv(&h, &s), &h).unwrap(), s);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let p = Path::new("nodes.tsv");
        let err = parse_nodes(p, "a\ta\t1\nb\tb\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(parse_nodes(p, "a\ta\tx\n").is_err());
    }

    #[test]
    fn embeddings_round_trip_bit_exact() {
        let vals = vec![0.1, -1.0 / 3.0, 1e-300, 123456.789, f64::MIN_POSITIVE, -0.0];
        let t = EmbeddingTable::new(vec!["a".into(), "b".into(), "c".into()], 2, Space::Flat, vals).unwrap();
        let back = parse_embeddings(Path::new("e"), &embeddings_tsv(&t)).unwrap();
        let bits = |t: &EmbeddingTable| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&t));
        assert_eq!(back.ids(), t.ids());
        let ball = parse_embeddings(Path::new("e"), "a\tball\t2.0\t0\n");
        assert!(ball.is_err());
    }

    #[test]
    fn features_round_trip() {
        let h = fixture(Fixture::Fmnist);
        let items = gen_items(&h, 3, 4, 0.25, 1).unwrap();
        let back = parse_features(Path::new("f"), &features_tsv(&h, &items), &h).unwrap();
        assert_eq!(back, items);
    }

    #[test]
    fn atomic_write_refuses_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one", false).unwrap();
        assert!(write_atomic(&p, b"two", false).is_err());
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "one");
        write_atomic(&p, b"two", true).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        let leftovers = std::fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(leftovers, 1);
    }

    #[test]
    fn non_finite_floats_serialize_as_strings() {
        #[derive(serde::Serialize, serde::Deserialize, PartialEq, Debug)]
        struct T {
            #[serde(with = "opt_f64")]
            a: Option<f64>,
            #[serde(with = "f64_or_string")]
            b: f64,
        }
        let t = T { a: Some(f64::NEG_INFINITY), b: f64::INFINITY };
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"a":"-inf","b":"inf"}"#);
        assert_eq!(serde_json::from_str::<T>(&s).unwrap(), t);
        let t = T { a: None, b: 0.5 };
        assert_eq!(serde_json::from_str::<T>(&serde_json::to_string(&t).unwrap()).unwrap(), t);
    }

    #[test]
    fn thresholds_with_infinities_round_trip() {
        use crate::heads::Thresholds;
        for th in [Thresholds::Pcdb(vec![0.25, f64::INFINITY, f64::NEG_INFINITY]), Thresholds::Ofadb(f64::INFINITY)] {
            let s = serde_json::to_string(&th).unwrap();
            assert_eq!(serde_json::from_str::<Thresholds>(&s).unwrap(), th);
        }
    }
}
