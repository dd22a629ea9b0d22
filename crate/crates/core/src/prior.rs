//! Knowledge-graph affinity priors over the activity space.
//!
//! An activity's affinity is the mean decayed weight sum over all minimum-hop
//! paths between its action and object, multiplied by a relation adjustment
//! taken from the direct edges between the two. Floored affinities normalize
//! into [`PriorDistribution`].

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{normalize_concept_text, SearchSpace};

/// Lower and upper clamp for the relation adjustment product.
pub const ADJUSTMENT_BOUNDS: (f64, f64) = (0.01, 100.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub weight: f64,
}

/// Directed, typed, weighted concept graph. Path search ignores direction.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    nodes: Vec<String>,
    node_index: HashMap<String, usize>,
    edges: Vec<(usize, String, usize, f64)>,
    edge_index: HashMap<(usize, String, usize), usize>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<String>,
    edges: Vec<Edge>,
}

/// ConceptNet URIs (`/c/en/knife/n`) reduce to their term; relations drop `/r/`.
fn concept_key(raw: &str) -> String {
    let raw = raw.trim();
    let term = match raw.strip_prefix("/c/") {
        Some(rest) => rest.split('/').nth(1).unwrap_or(rest),
        None => raw,
    };
    normalize_concept_text(term)
}

fn relation_key(raw: &str) -> String {
    let raw = raw.trim();
    raw.strip_prefix("/r/").unwrap_or(raw).to_string()
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, name: &str) -> usize {
        let key = concept_key(name);
        if let Some(&i) = self.node_index.get(&key) {
            return i;
        }
        let i = self.nodes.len();
        self.nodes.push(key.clone());
        self.node_index.insert(key, i);
        self.adjacency.push(Vec::new());
        i
    }

    /// Adds an edge; an existing identical (head, relation, tail) keeps the max weight.
    pub fn add_edge(&mut self, head: &str, relation: &str, tail: &str, weight: f64) -> Result<()> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "edge {head} -{relation}-> {tail} has non-positive weight {weight}"
            )));
        }
        let h = self.add_node(head);
        let t = self.add_node(tail);
        let rel = relation_key(relation);
        let key = (h, rel.clone(), t);
        if let Some(&e) = self.edge_index.get(&key) {
            let w = &mut self.edges[e].3;
            *w = w.max(weight);
            return Ok(());
        }
        let e = self.edges.len();
        self.edges.push((h, rel, t, weight));
        self.edge_index.insert(key, e);
        self.adjacency[h].push((t, e));
        if h != t {
            self.adjacency[t].push((h, e));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_id(&self, concept: &str) -> Option<usize> {
        self.node_index.get(&concept_key(concept)).copied()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.edges.iter().map(|(h, r, t, w)| Edge {
            head: self.nodes[*h].clone(),
            relation: r.clone(),
            tail: self.nodes[*t].clone(),
            weight: *w,
        })
    }

    /// Undirected incidence: `(neighbor, edge weight, relation)` for each edge at `node`.
    pub fn incident(&self, node: usize) -> impl Iterator<Item = (usize, f64, &str)> + '_ {
        self.adjacency[node].iter().map(move |&(nbr, e)| {
            let (_, rel, _, w) = &self.edges[e];
            (nbr, *w, rel.as_str())
        })
    }

    /// Mean decayed path score from `source` to every node, over minimum-hop
    /// paths of at most `max_hops` edges. Unreachable nodes and the source score 0.
    pub fn affinities_from(&self, source: usize, decay: f64, max_hops: usize) -> Vec<f64> {
        let n = self.nodes.len();
        let mut dist = vec![usize::MAX; n];
        let mut count = vec![0.0f64; n];
        let mut sum = vec![0.0f64; n];
        dist[source] = 0;
        count[source] = 1.0;
        let mut frontier = vec![source];
        let mut step_decay = 1.0;
        for depth in 0..max_hops {
            let mut next = Vec::new();
            for &u in &frontier {
                for &(v, e) in &self.adjacency[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = depth + 1;
                        next.push(v);
                    }
                    if dist[v] == depth + 1 {
                        let w = self.edges[e].3;
                        count[v] += count[u];
                        sum[v] += sum[u] + count[u] * w * step_decay;
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
            step_decay *= decay;
        }
        (0..n)
            .map(|v| {
                if v == source || dist[v] == usize::MAX {
                    0.0
                } else {
                    sum[v] / count[v]
                }
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = GraphFile {
            nodes: self.nodes.clone(),
            edges: self.edges().collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        let mut g = KnowledgeGraph::new();
        for n in &file.nodes {
            g.add_node(n);
        }
        for e in &file.edges {
            g.add_edge(&e.head, &e.relation, &e.tail, e.weight)?;
        }
        Ok(g)
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for e in self.edges() {
            writeln!(w, "{}\t{}\t{}\t{}", e.head, e.relation, e.tail, e.weight)
                .map_err(|err| Error::io(path, err))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Loads a graph from JSON (`.json`) or a TSV edge dump (anything else).
    pub fn load(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "json") {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Self::from_json(&text)
        } else {
            import_edge_dump(path)
        }
    }
}

/// Parses a `head<TAB>relation<TAB>tail<TAB>weight` dump. Blank lines and
/// `#` comments are skipped.
pub fn import_edge_dump(path: &Path) -> Result<KnowledgeGraph> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut g = KnowledgeGraph::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::parse(path, line_no, format!("expected 4 columns, found {}", cols.len())));
        }
        let weight: f64 = cols[3]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("bad weight {:?}", cols[3])))?;
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::NonPositiveWeight(line_no));
        }
        if concept_key(cols[0]).is_empty() || concept_key(cols[2]).is_empty() {
            return Err(Error::parse(path, line_no, "empty concept"));
        }
        g.add_edge(cols[0], cols[1], cols[2], weight)?;
    }
    Ok(g)
}

/// Mean decayed weight sum over all minimum-hop paths from `source` to `target`.
///
/// The first edge of a path is weighted by `decay^0`. Returns 0 when either
/// concept is absent, when they coincide, or when no path fits in `max_hops`.
pub fn path_affinity(
    graph: &KnowledgeGraph,
    source: &str,
    target: &str,
    decay: f64,
    max_hops: usize,
) -> f64 {
    let (Some(s), Some(t)) = (graph.node_id(source), graph.node_id(target)) else {
        return 0.0;
    };
    if s == t {
        return 0.0;
    }
    graph.affinities_from(s, decay, max_hops)[t]
}

/// Multipliers for relation labels found on direct action-object edges.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationWeights {
    pub multipliers: HashMap<String, f64>,
    pub default_multiplier: f64,
}

impl Default for RelationWeights {
    fn default() -> Self {
        let multipliers = [
            ("UsedFor", 1.5),
            ("CapableOf", 1.5),
            ("AtLocation", 1.2),
            ("RelatedTo", 1.0),
            ("NotUsedFor", 0.3),
            ("NotCapableOf", 0.3),
            ("Antonym", 0.5),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        RelationWeights {
            multipliers,
            default_multiplier: 1.0,
        }
    }
}

impl RelationWeights {
    pub fn multiplier(&self, relation: &str) -> f64 {
        self.multipliers
            .get(relation)
            .copied()
            .unwrap_or(self.default_multiplier)
    }

    /// Parses `Relation=value` lines over the default table. `default=<v>`
    /// sets the fallback multiplier.
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = RelationWeights::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value", i + 1)))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("line {}: bad value {v:?}", i + 1)))?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("line {}: multiplier must be positive", i + 1)));
            }
            let k = relation_key(k);
            if k == "default" {
                out.default_multiplier = v;
            } else {
                out.multipliers.insert(k, v);
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Product of multipliers over every direct edge between the two concepts,
/// in either direction, clamped to [`ADJUSTMENT_BOUNDS`].
pub fn relation_adjustment(
    graph: &KnowledgeGraph,
    source: &str,
    target: &str,
    weights: &RelationWeights,
) -> f64 {
    let (Some(s), Some(t)) = (graph.node_id(source), graph.node_id(target)) else {
        return weights.default_multiplier;
    };
    adjustment_between(graph, s, t, weights)
}

fn adjustment_between(graph: &KnowledgeGraph, s: usize, t: usize, weights: &RelationWeights) -> f64 {
    let mut product = 1.0;
    let mut any = false;
    for &(nbr, e) in &graph.adjacency[s] {
        if nbr == t {
            product *= weights.multiplier(&graph.edges[e].1);
            any = true;
        }
    }
    if !any {
        product = weights.default_multiplier;
    }
    product.clamp(ADJUSTMENT_BOUNDS.0, ADJUSTMENT_BOUNDS.1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorParams {
    pub decay: f64,
    pub max_hops: usize,
    pub floor: f64,
}

impl Default for PriorParams {
    fn default() -> Self {
        PriorParams {
            decay: 0.8,
            max_hops: 3,
            floor: 1e-6,
        }
    }
}

/// Probability over a space's activities; strictly positive, sums to one.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorDistribution {
    probs: Vec<f64>,
}

impl PriorDistribution {
    pub fn uniform(n: usize) -> Self {
        PriorDistribution {
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Floors raw scores at `floor` and normalizes.
    pub fn from_scores(scores: &[f64], floor: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyInput("prior over empty space"));
        }
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(Error::InvalidConfig("prior floor must be positive".into()));
        }
        if scores.iter().all(|&s| s <= 0.0) {
            log::warn!("all prior scores are zero; prior is uniform");
        }
        let floored: Vec<f64> = scores.iter().map(|&s| s.max(floor)).collect();
        let total: f64 = floored.iter().sum();
        Ok(PriorDistribution {
            probs: floored.into_iter().map(|s| s / total).collect(),
        })
    }

    /// Wraps an explicit distribution, renormalizing it.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyInput("prior over empty space"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidConfig("prior entries must be finite and positive".into()));
        }
        let total: f64 = probs.iter().sum();
        Ok(PriorDistribution {
            probs: probs.into_iter().map(|p| p / total).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Raw (unfloored) affinity score for every activity in `space`.
pub fn affinity_scores(
    space: &SearchSpace,
    graph: &KnowledgeGraph,
    weights: &RelationWeights,
    params: &PriorParams,
) -> Vec<f64> {
    // One BFS per distinct action covers every object paired with it.
    let mut by_action: HashMap<usize, Vec<f64>> = HashMap::new();
    space
        .activities()
        .iter()
        .map(|a| {
            let (Some(s), Some(t)) = (graph.node_id(a.action().text()), graph.node_id(a.object().text()))
            else {
                return 0.0;
            };
            if s == t {
                return 0.0;
            }
            let aff = by_action
                .entry(s)
                .or_insert_with(|| graph.affinities_from(s, params.decay, params.max_hops))[t];
            aff * adjustment_between(graph, s, t, weights)
        })
        .collect()
}

pub fn build_prior(
    space: &SearchSpace,
    graph: &KnowledgeGraph,
    weights: &RelationWeights,
    params: &PriorParams,
) -> Result<PriorDistribution> {
    if !(params.decay > 0.0 && params.decay <= 1.0) {
        return Err(Error::InvalidConfig(format!("decay {} outside (0, 1]", params.decay)));
    }
    if params.max_hops == 0 {
        return Err(Error::InvalidConfig("max_hops must be at least 1".into()));
    }
    let scores = affinity_scores(space, graph, weights, params);
    PriorDistribution::from_scores(&scores, params.floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(edges: &[(&str, &str, &str, f64)]) -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        for &(h, r, t, w) in edges {
            g.add_edge(h, r, t, w).unwrap();
        }
        g
    }

    #[test]
    fn single_hop_affinity() {
        let g = graph(&[("wash", "UsedFor", "dish", 2.0)]);
        assert_eq!(path_affinity(&g, "wash", "dish", 0.5, 3), 2.0);
        // Direction is ignored for reachability.
        assert_eq!(path_affinity(&g, "dish", "wash", 0.5, 3), 2.0);
        assert_eq!(path_affinity(&g, "wash", "wash", 0.5, 3), 0.0);
        assert_eq!(path_affinity(&g, "wash", "cup", 0.5, 3), 0.0);
    }

    #[test]
    fn averages_over_shortest_paths() {
        // Two 2-hop paths a-b-d (1 + 0.5*3) and a-c-d (2 + 0.5*1); the 3-hop
        // detour a-e-f-d is ignored.
        let g = graph(&[
            ("a", "RelatedTo", "b", 1.0),
            ("b", "RelatedTo", "d", 3.0),
            ("a", "RelatedTo", "c", 2.0),
            ("c", "RelatedTo", "d", 1.0),
            ("a", "RelatedTo", "e", 9.0),
            ("e", "RelatedTo", "f", 9.0),
            ("f", "RelatedTo", "d", 9.0),
        ]);
        let expected = ((1.0 + 0.5 * 3.0) + (2.0 + 0.5 * 1.0)) / 2.0;
        assert!((path_affinity(&g, "a", "d", 0.5, 3) - expected).abs() < 1e-12);
        assert_eq!(path_affinity(&g, "a", "d", 0.5, 1), 0.0);
    }

    #[test]
    fn adjustment_products() {
        let w = RelationWeights {
            multipliers: [("UsedFor".to_string(), 1.5), ("NotCapableOf".to_string(), 0.5)].into(),
            default_multiplier: 1.0,
        };
        let g = graph(&[("wash", "UsedFor", "dish", 1.0)]);
        assert_eq!(relation_adjustment(&g, "wash", "dish", &w), 1.5);
        assert_eq!(relation_adjustment(&g, "wash", "cup", &w), 1.0);
        let g = graph(&[("wash", "UsedFor", "dish", 1.0), ("dish", "NotCapableOf", "wash", 1.0)]);
        assert_eq!(relation_adjustment(&g, "wash", "dish", &w), 0.75);
    }

    #[test]
    fn adjustment_is_clamped() {
        let mut g = KnowledgeGraph::new();
        for i in 0..10 {
            g.add_edge("a", &format!("Boost{i}"), "b", 1.0).unwrap();
        }
        let mut w = RelationWeights::default();
        for i in 0..10 {
            w.multipliers.insert(format!("Boost{i}"), 10.0);
        }
        assert_eq!(relation_adjustment(&g, "a", "b", &w), 100.0);
    }

    #[test]
    fn duplicate_edges_keep_max_weight() {
        let g = graph(&[("a", "UsedFor", "b", 1.0), ("a", "UsedFor", "b", 2.0), ("a", "CapableOf", "b", 0.5)]);
        assert_eq!(g.edge_count(), 2);
        let w: Vec<f64> = g.edges().map(|e| e.weight).collect();
        assert_eq!(w, [2.0, 0.5]);
    }

    #[test]
    fn prior_normalization_examples() {
        let p = PriorDistribution::from_scores(&[3.0, 1.0], 1e-6).unwrap();
        assert!((p.probs()[0] - 0.75).abs() < 1e-12 && (p.probs()[1] - 0.25).abs() < 1e-12);

        let p = PriorDistribution::from_scores(&[0.0, 5.0], 1e-6).unwrap();
        assert!((p.probs()[0] - 1e-6 / (5.0 + 1e-6)).abs() < 1e-15);
        assert!(p.probs()[0] > 0.0 && p.probs()[1] < 1.0);

        let p = PriorDistribution::from_scores(&[0.0; 4], 1e-6).unwrap();
        assert_eq!(p.probs(), &[0.25; 4]);
    }

    #[test]
    fn relation_table_parse() {
        let w = RelationWeights::parse("# table\nUsedFor = 2.0\n/r/Antonym=0.25 # inline\ndefault=1.1\n").unwrap();
        assert_eq!(w.multiplier("UsedFor"), 2.0);
        assert_eq!(w.multiplier("Antonym"), 0.25);
        assert_eq!(w.multiplier("CapableOf"), 1.5);
        assert_eq!(w.multiplier("Synonym"), 1.1);
        assert!(RelationWeights::parse("UsedFor=-1").is_err());
        assert!(RelationWeights::parse("UsedFor").is_err());
    }

    #[test]
    fn edge_dump_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("kg.tsv");
        std::fs::write(&p, "Wash\tUsedFor\tDish\t1.0\n/c/en/cut/v\t/r/UsedFor\t/c/en/bread/n\t2.0\nwash\tUsedFor\tdish\t2.0\n").unwrap();
        let g = import_edge_dump(&p).unwrap();
        assert_eq!(g.edge_count(), 2);
        assert!(g.node_id("bread").is_some());
        assert_eq!(path_affinity(&g, "wash", "dish", 0.8, 3), 2.0);

        std::fs::write(&p, "a\tUsedFor\tb\t-1.0\n").unwrap();
        assert!(matches!(import_edge_dump(&p), Err(Error::NonPositiveWeight(1))));
        std::fs::write(&p, "a\tUsedFor\tb\t1\na\tb\n").unwrap();
        assert!(matches!(import_edge_dump(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn json_round_trip() {
        let g = graph(&[("wash", "UsedFor", "dish", 2.0), ("dish", "AtLocation", "sink", 1.0)]);
        let back = KnowledgeGraph::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back.edges().collect::<Vec<_>>(), g.edges().collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn scaling_scores_leaves_prior_unchanged(
            scores in prop::collection::vec(0.01f64..100.0, 1..40),
            scale in 0.5f64..20.0,
        ) {
            let a = PriorDistribution::from_scores(&scores, 1e-6).unwrap();
            let scaled: Vec<f64> = scores.iter().map(|s| s * scale).collect();
            let b = PriorDistribution::from_scores(&scaled, 1e-6).unwrap();
            for (x, y) in a.probs().iter().zip(b.probs()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn prior_is_positive_and_normalized(scores in prop::collection::vec(0.0f64..10.0, 1..60)) {
            let p = PriorDistribution::from_scores(&scores, 1e-6).unwrap();
            prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.probs().iter().all(|&x| x > 0.0));
        }

        #[test]
        fn affinity_monotone_in_decay(
            edges in prop::collection::vec((0usize..6, 0usize..6, 0.1f64..5.0), 1..15),
            d1 in 0.05f64..1.0,
            d2 in 0.05f64..1.0,
        ) {
            let mut g = KnowledgeGraph::new();
            for (h, t, w) in &edges {
                g.add_edge(&format!("n{h}"), "RelatedTo", &format!("n{t}"), *w).unwrap();
            }
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            for s in 0..6 {
                for t in 0..6 {
                    let a = path_affinity(&g, &format!("n{s}"), &format!("n{t}"), lo, 4);
                    let b = path_affinity(&g, &format!("n{s}"), &format!("n{t}"), hi, 4);
                    prop_assert!(b >= a - 1e-12);
                }
            }
        }

        #[test]
        fn adjustment_order_independent(rels in prop::collection::vec(0usize..7, 1..6), seed in any::<u64>()) {
            let names = ["UsedFor", "CapableOf", "AtLocation", "RelatedTo", "NotUsedFor", "NotCapableOf", "Antonym"];
            let w = RelationWeights::default();
            let build = |rels: &[usize]| {
                let mut g = KnowledgeGraph::new();
                for (i, &r) in rels.iter().enumerate() {
                    // Alternate direction so both orientations contribute.
                    if i % 2 == 0 {
                        g.add_edge("a", names[r], "b", 1.0).unwrap();
                    } else {
                        g.add_edge("b", names[r], "a", 1.0).unwrap();
                    }
                }
                relation_adjustment(&g, "a", "b", &w)
            };
            let mut dedup = rels.clone();
            dedup.sort();
            dedup.dedup();
            let a = build(&dedup);
            let mut shuffled = dedup.clone();
            let k = (seed as usize) % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let b = build(&shuffled);
            prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }
}
