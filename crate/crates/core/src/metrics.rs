//! Wu-Palmer similarity over concept taxonomies and prediction scoring.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{normalize_concept_text, Activity, Concept};

/// Single-rooted concept tree. Depth of the root is 1.
#[derive(Clone, Debug)]
pub struct Taxonomy {
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
    root: usize,
}

impl Taxonomy {
    /// Builds a taxonomy from `(child, parent)` pairs; the root has no parent.
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Option<S>)>,
        S: AsRef<str>,
    {
        let mut nodes = Vec::new();
        let mut index = HashMap::new();
        let mut raw_parent = Vec::new();
        for (child, parent) in pairs {
            let child = normalize_concept_text(child.as_ref());
            if child.is_empty() {
                return Err(Error::InvalidTaxonomy("empty node name".into()));
            }
            if index.contains_key(&child) {
                return Err(Error::InvalidTaxonomy(format!("node {child:?} listed twice")));
            }
            index.insert(child.clone(), nodes.len());
            nodes.push(child);
            raw_parent.push(parent.map(|p| normalize_concept_text(p.as_ref())));
        }
        let mut parent = Vec::with_capacity(nodes.len());
        let mut roots = Vec::new();
        for (i, p) in raw_parent.iter().enumerate() {
            match p {
                None => {
                    roots.push(i);
                    parent.push(None);
                }
                Some(p) => {
                    let &pi = index.get(p).ok_or_else(|| {
                        Error::InvalidTaxonomy(format!("parent {p:?} of {:?} is not a node", nodes[i]))
                    })?;
                    parent.push(Some(pi));
                }
            }
        }
        let root = match roots.as_slice() {
            [r] => *r,
            [] => return Err(Error::InvalidTaxonomy("no root".into())),
            _ => return Err(Error::InvalidTaxonomy(format!("{} roots", roots.len()))),
        };
        let n = nodes.len();
        let mut depth = vec![0usize; n];
        depth[root] = 1;
        for (start, name) in nodes.iter().enumerate() {
            // Walk up until a node of known depth; a walk longer than n is a cycle.
            let mut chain = Vec::new();
            let mut cur = start;
            while depth[cur] == 0 {
                chain.push(cur);
                if chain.len() > n {
                    return Err(Error::InvalidTaxonomy(format!("cycle through {name:?}")));
                }
                cur = parent[cur].expect("only the root lacks a parent");
            }
            let mut d = depth[cur];
            for &c in chain.iter().rev() {
                d += 1;
                depth[c] = d;
            }
        }
        Ok(Taxonomy {
            nodes,
            index,
            parent,
            depth,
            root,
        })
    }

    /// Parses `child<TAB>parent` lines; the root's parent is `-`.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (child, parent) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, i + 1, "expected child<TAB>parent"))?;
            let parent = parent.trim();
            pairs.push((child.to_string(), (parent != "-").then(|| parent.to_string())));
        }
        Self::from_pairs(pairs)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let p = self.parent[i].map_or("-", |p| self.nodes[p].as_str());
            out.push_str(&format!("{n}\t{p}\n"));
        }
        out
    }

    /// Flat taxonomy with every name as a direct child of `root`.
    pub fn flat<S: AsRef<str>>(root: &str, names: impl IntoIterator<Item = S>) -> Result<Self> {
        let root_key = normalize_concept_text(root);
        let mut seen = std::collections::HashSet::new();
        let mut pairs = vec![(root_key.clone(), None)];
        for n in names {
            let k = normalize_concept_text(n.as_ref());
            if k != root_key && seen.insert(k.clone()) {
                pairs.push((k, Some(root_key.clone())));
            }
        }
        Self::from_pairs(pairs)
    }

    pub fn root(&self) -> &str {
        &self.nodes[self.root]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, node: &str) -> bool {
        self.index.contains_key(&normalize_concept_text(node))
    }

    fn id(&self, node: &str) -> Result<usize> {
        self.index
            .get(&normalize_concept_text(node))
            .copied()
            .ok_or_else(|| Error::UnknownNode(node.to_string()))
    }

    pub fn depth(&self, node: &str) -> Result<usize> {
        Ok(self.depth[self.id(node)?])
    }

    pub fn parent(&self, node: &str) -> Result<Option<&str>> {
        Ok(self.parent[self.id(node)?].map(|p| self.nodes[p].as_str()))
    }

    fn lca(&self, mut a: usize, mut b: usize) -> usize {
        while self.depth[a] > self.depth[b] {
            a = self.parent[a].unwrap();
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b].unwrap();
        }
        while a != b {
            a = self.parent[a].unwrap();
            b = self.parent[b].unwrap();
        }
        a
    }

    /// `2 * depth(lca) / (depth(a) + depth(b))`.
    pub fn wu_palmer(&self, a: &str, b: &str) -> Result<f64> {
        let (ia, ib) = (self.id(a)?, self.id(b)?);
        let l = self.lca(ia, ib);
        Ok(2.0 * self.depth[l] as f64 / (self.depth[ia] + self.depth[ib]) as f64)
    }

    /// Similarity with out-of-taxonomy concepts treated as distinct leaves
    /// directly under the root (depth 2).
    pub fn open_similarity(&self, predicted: &str, truth: &str) -> f64 {
        let (p, t) = (normalize_concept_text(predicted), normalize_concept_text(truth));
        if p == t {
            return 1.0;
        }
        let depth_of = |k: &str| self.index.get(k).map(|&i| self.depth[i]);
        match (depth_of(&p), depth_of(&t)) {
            (Some(_), Some(_)) => self.wu_palmer(&p, &t).expect("both nodes present"),
            (Some(d), None) | (None, Some(d)) => 2.0 / (2 + d) as f64,
            (None, None) => 0.5,
        }
    }
}

pub fn wu_palmer(tax: &Taxonomy, a: &str, b: &str) -> Result<f64> {
    tax.wu_palmer(a, b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub predicted: Activity,
    pub truth: Activity,
    pub distinct_calls: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_id: String,
    pub predicted: String,
    pub truth: String,
    pub wups_object: f64,
    pub wups_action: f64,
    pub wups_activity: f64,
    pub exact_match: f64,
    pub distinct_calls: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub wups_object: f64,
    pub wups_action: f64,
    pub wups_activity: f64,
    pub exact_match: f64,
    pub mean_distinct_calls: f64,
    pub per_video: Vec<VideoScore>,
}

pub const AGGREGATE_COLUMNS: [&str; 5] = [
    "wups_object",
    "wups_action",
    "wups_activity",
    "exact_match",
    "mean_distinct_calls",
];

impl EvalReport {
    pub fn aggregate_values(&self) -> [f64; 5] {
        [
            self.wups_object,
            self.wups_action,
            self.wups_activity,
            self.exact_match,
            self.mean_distinct_calls,
        ]
    }

    /// Header plus one row, columns in [`AGGREGATE_COLUMNS`] order.
    pub fn aggregate_csv(&self) -> String {
        let values: Vec<String> = self.aggregate_values().iter().map(|v| format!("{v:.6}")).collect();
        format!("{}\n{}\n", AGGREGATE_COLUMNS.join(","), values.join(","))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Order-independent mean: the sum runs over sorted values.
fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

fn concept_similarity(tax: &Taxonomy, predicted: &Concept, truth: &Concept) -> f64 {
    tax.open_similarity(predicted.text(), truth.text())
}

/// Scores each prediction; activity-level WUPS is the mean of the action and
/// object similarities.
pub fn evaluate(predictions: &[Prediction], action_tax: &Taxonomy, object_tax: &Taxonomy) -> Result<EvalReport> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("no predictions to evaluate"));
    }
    let per_video: Vec<VideoScore> = predictions
        .iter()
        .map(|p| {
            let wa = concept_similarity(action_tax, p.predicted.action(), p.truth.action());
            let wo = concept_similarity(object_tax, p.predicted.object(), p.truth.object());
            VideoScore {
                video_id: p.video_id.clone(),
                predicted: p.predicted.phrase().to_string(),
                truth: p.truth.phrase().to_string(),
                wups_object: wo,
                wups_action: wa,
                wups_activity: (wa + wo) / 2.0,
                exact_match: if p.predicted.phrase() == p.truth.phrase() { 1.0 } else { 0.0 },
                distinct_calls: p.distinct_calls,
            }
        })
        .collect();
    Ok(EvalReport {
        wups_object: mean(per_video.iter().map(|r| r.wups_object)),
        wups_action: mean(per_video.iter().map(|r| r.wups_action)),
        wups_activity: mean(per_video.iter().map(|r| r.wups_activity)),
        exact_match: mean(per_video.iter().map(|r| r.exact_match)),
        mean_distinct_calls: mean(per_video.iter().map(|r| r.distinct_calls as f64)),
        per_video,
    })
}
