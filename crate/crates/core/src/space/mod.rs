//! Activity search space: concepts, phrase embeddings, and the anchor-distance
//! ordering used for local jumps.

mod io;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_space, load_space_with, read_concept_table, read_embeddings, read_labels,
    write_embeddings, write_labels, DuplicatePolicy, EMBEDDING_MAGIC,
};

/// Above this size the medoid anchor is approximated by the point nearest the centroid.
pub const EXACT_MEDOID_LIMIT: usize = 5_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConceptKind {
    Action,
    Object,
}

/// Canonical form of a concept token: lowercase, no surrounding whitespace,
/// internal whitespace and underscores folded to a single hyphen.
pub fn normalize_concept_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_sep = false;
    for ch in raw.trim().chars() {
        if ch.is_whitespace() || ch == '_' {
            pending_sep = !out.is_empty();
            continue;
        }
        if pending_sep {
            out.push('-');
            pending_sep = false;
        }
        out.extend(ch.to_lowercase());
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Concept {
    text: String,
    kind: ConceptKind,
}

impl Concept {
    pub fn new(raw: &str, kind: ConceptKind) -> Result<Self> {
        let text = normalize_concept_text(raw);
        if text.is_empty() {
            return Err(Error::InvalidConcept(raw.to_string()));
        }
        Ok(Concept { text, kind })
    }

    pub fn action(raw: &str) -> Result<Self> {
        Self::new(raw, ConceptKind::Action)
    }

    pub fn object(raw: &str) -> Result<Self> {
        Self::new(raw, ConceptKind::Object)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn kind(&self) -> ConceptKind {
        self.kind
    }
}

impl fmt::Display for Concept {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// An (action, object) pair; the atom of the search space.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Activity {
    action: Concept,
    object: Concept,
    phrase: String,
}

impl Activity {
    pub fn new(action: Concept, object: Concept) -> Result<Self> {
        if action.kind != ConceptKind::Action {
            return Err(Error::InvalidConcept(format!("{} is not an action", action.text)));
        }
        if object.kind != ConceptKind::Object {
            return Err(Error::InvalidConcept(format!("{} is not an object", object.text)));
        }
        let phrase = format!("{} {}", action.text, object.text);
        Ok(Activity {
            action,
            object,
            phrase,
        })
    }

    pub fn from_parts(action: &str, object: &str) -> Result<Self> {
        Self::new(Concept::action(action)?, Concept::object(object)?)
    }

    /// Parses a label line: first token is the action, the remainder the object.
    pub fn parse_label(line: &str) -> Result<Self> {
        let line = line.trim();
        let (action, object) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::InvalidConcept(line.to_string()))?;
        Self::from_parts(action, object)
    }

    pub fn action(&self) -> &Concept {
        &self.action
    }

    pub fn object(&self) -> &Concept {
        &self.object
    }

    pub fn phrase(&self) -> &str {
        &self.phrase
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.phrase)
    }
}

/// A finite, non-empty vector of 32-bit floats.
///
/// Everything ingested into a [`SearchSpace`] or used as a video feature goes
/// through [`Embedding::normalized`], so inner products are cosine similarities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidEmbedding("zero-dimensional".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidEmbedding(format!("non-finite entry at {pos}")));
        }
        Ok(Embedding { values })
    }

    /// Validates and rescales to unit L2 norm.
    pub fn normalized(values: Vec<f32>) -> Result<Self> {
        let mut emb = Self::new(values)?;
        let norm = emb.norm();
        if norm == 0.0 {
            return Err(Error::InvalidEmbedding("zero vector cannot be normalized".into()));
        }
        for v in &mut emb.values {
            *v = (f64::from(*v) / norm) as f32;
        }
        Ok(emb)
    }

    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::normalized(values.iter().map(|&v| v as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    /// Inner product accumulated in f64. Callers check dimensions.
    pub fn dot(&self, other: &Embedding) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum()
    }

    pub fn distance(&self, other: &Embedding) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| {
                let d = f64::from(a) - f64::from(b);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Turns activities into phrase embeddings.
pub trait Embedder {
    fn embed(&self, activity: &Activity) -> Result<Embedding>;
}

/// Looks phrase embeddings up in a precomputed table.
#[derive(Clone, Debug, Default)]
pub struct TableEmbedder {
    table: HashMap<String, Embedding>,
}

impl TableEmbedder {
    pub fn new(table: HashMap<String, Embedding>) -> Self {
        TableEmbedder { table }
    }

    pub fn insert(&mut self, phrase: impl Into<String>, embedding: Embedding) {
        self.table.insert(phrase.into(), embedding);
    }
}

impl Embedder for TableEmbedder {
    fn embed(&self, activity: &Activity) -> Result<Embedding> {
        self.table
            .get(activity.phrase())
            .cloned()
            .ok_or_else(|| Error::MissingEmbedding(activity.phrase().to_string()))
    }
}

/// Per-concept embeddings for actions and objects, used by decomposition
/// re-ranking and by [`CompositeEmbedder`].
#[derive(Clone, Debug, Default)]
pub struct ConceptEmbeddings {
    pub actions: HashMap<String, Embedding>,
    pub objects: HashMap<String, Embedding>,
}

impl ConceptEmbeddings {
    pub fn get(&self, concept: &Concept) -> Result<&Embedding> {
        let table = match concept.kind() {
            ConceptKind::Action => &self.actions,
            ConceptKind::Object => &self.objects,
        };
        table
            .get(concept.text())
            .ok_or_else(|| Error::MissingEmbedding(concept.text().to_string()))
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty() && self.objects.is_empty()
    }
}

/// Embeds a phrase as the normalized sum of its action and object embeddings.
#[derive(Clone, Debug)]
pub struct CompositeEmbedder<'a> {
    concepts: &'a ConceptEmbeddings,
}

impl<'a> CompositeEmbedder<'a> {
    pub fn new(concepts: &'a ConceptEmbeddings) -> Self {
        CompositeEmbedder { concepts }
    }
}

impl Embedder for CompositeEmbedder<'_> {
    fn embed(&self, activity: &Activity) -> Result<Embedding> {
        let a = self.concepts.get(activity.action())?;
        let o = self.concepts.get(activity.object())?;
        if a.dim() != o.dim() {
            return Err(Error::DimensionMismatch {
                expected: a.dim(),
                got: o.dim(),
            });
        }
        let sum: Vec<f32> = a.values().iter().zip(o.values()).map(|(x, y)| x + y).collect();
        Embedding::normalized(sum)
    }
}

/// Ordered collection of activities with their embeddings, structured by
/// distance to an anchor activity. Immutable once built.
#[derive(Clone, Debug)]
pub struct SearchSpace {
    activities: Vec<Activity>,
    embeddings: Vec<Embedding>,
    anchor_index: usize,
    order: Vec<usize>,
    position: Vec<usize>,
    phrase_index: HashMap<String, usize>,
}

impl SearchSpace {
    /// Builds a space from parallel activity/embedding lists and structures it
    /// around the default (medoid) anchor. Embeddings are normalized here.
    pub fn new(activities: Vec<Activity>, embeddings: Vec<Embedding>) -> Result<Self> {
        if activities.is_empty() {
            return Err(Error::EmptyInput("search space has no activities"));
        }
        if activities.len() != embeddings.len() {
            return Err(Error::InvalidEmbedding(format!(
                "{} activities but {} embeddings",
                activities.len(),
                embeddings.len()
            )));
        }
        let dim = embeddings[0].dim();
        let mut phrase_index = HashMap::with_capacity(activities.len());
        for (i, a) in activities.iter().enumerate() {
            if phrase_index.insert(a.phrase().to_string(), i).is_some() {
                return Err(Error::DuplicatePhrase(a.phrase().to_string()));
            }
        }
        let embeddings = embeddings
            .into_iter()
            .map(|e| {
                if e.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: e.dim(),
                    });
                }
                Embedding::normalized(e.values)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = activities.len();
        let space = SearchSpace {
            activities,
            embeddings,
            anchor_index: 0,
            order: (0..n).collect(),
            position: (0..n).collect(),
            phrase_index,
        };
        let anchor = space.default_anchor();
        space.structured(anchor)
    }

    /// Re-sorts the order by Euclidean distance to `anchor_index`, ties by index.
    pub fn structured(mut self, anchor_index: usize) -> Result<Self> {
        let n = self.len();
        if anchor_index >= n {
            return Err(Error::IndexOutOfRange {
                index: anchor_index,
                len: n,
            });
        }
        let anchor = &self.embeddings[anchor_index];
        let dist: Vec<f64> = self.embeddings.iter().map(|e| e.distance(anchor)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            // The anchor leads even if another point coincides with it.
            (i != anchor_index)
                .cmp(&(j != anchor_index))
                .then(dist[i].total_cmp(&dist[j]))
                .then(i.cmp(&j))
        });
        let mut position = vec![0; n];
        for (pos, &idx) in order.iter().enumerate() {
            position[idx] = pos;
        }
        self.anchor_index = anchor_index;
        self.order = order;
        self.position = position;
        Ok(self)
    }

    /// Medoid for small spaces, point nearest the centroid otherwise.
    pub fn default_anchor(&self) -> usize {
        if self.len() <= EXACT_MEDOID_LIMIT {
            exact_medoid(&self.embeddings)
        } else {
            nearest_to_centroid(&self.embeddings)
        }
    }

    pub fn len(&self) -> usize {
        self.activities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activities.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].dim()
    }

    pub fn activities(&self) -> &[Activity] {
        &self.activities
    }

    pub fn activity(&self, index: usize) -> &Activity {
        &self.activities[index]
    }

    pub fn embeddings(&self) -> &[Embedding] {
        &self.embeddings
    }

    pub fn embedding(&self, index: usize) -> &Embedding {
        &self.embeddings[index]
    }

    pub fn anchor_index(&self) -> usize {
        self.anchor_index
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Position of `index` within the structured order.
    pub fn position_of(&self, index: usize) -> usize {
        self.position[index]
    }

    pub fn index_of(&self, phrase: &str) -> Option<usize> {
        self.phrase_index.get(phrase).copied()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.embeddings[i].distance(&self.embeddings[j])
    }
}

fn exact_medoid(embeddings: &[Embedding]) -> usize {
    let n = embeddings.len();
    let mut sums = vec![0.0f64; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = embeddings[i].distance(&embeddings[j]);
            sums[i] += d;
            sums[j] += d;
        }
    }
    argmin(&sums)
}

fn nearest_to_centroid(embeddings: &[Embedding]) -> usize {
    let dim = embeddings[0].dim();
    let mut centroid = vec![0.0f64; dim];
    for e in embeddings {
        for (c, &v) in centroid.iter_mut().zip(e.values()) {
            *c += f64::from(v);
        }
    }
    let n = embeddings.len() as f64;
    centroid.iter_mut().for_each(|c| *c /= n);
    let dists: Vec<f64> = embeddings
        .iter()
        .map(|e| {
            e.values()
                .iter()
                .zip(&centroid)
                .map(|(&v, &c)| (f64::from(v) - c).powi(2))
                .sum::<f64>()
        })
        .collect();
    argmin(&dists)
}

fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Cartesian product of actions and objects, deduplicated by phrase (first
/// occurrence wins), embedded and structured around the default anchor.
pub fn build_cartesian_space(
    actions: &[Concept],
    objects: &[Concept],
    embedder: &dyn Embedder,
) -> Result<SearchSpace> {
    if actions.is_empty() {
        return Err(Error::EmptyInput("no actions"));
    }
    if objects.is_empty() {
        return Err(Error::EmptyInput("no objects"));
    }
    let mut seen = HashMap::new();
    let mut activities = Vec::with_capacity(actions.len() * objects.len());
    let mut embeddings = Vec::with_capacity(actions.len() * objects.len());
    let mut dim = None;
    for action in actions {
        for object in objects {
            let activity = Activity::new(action.clone(), object.clone())?;
            if seen.insert(activity.phrase().to_string(), ()).is_some() {
                log::warn!("dropping duplicate phrase {:?}", activity.phrase());
                continue;
            }
            let emb = embedder.embed(&activity)?;
            match dim {
                None => dim = Some(emb.dim()),
                Some(d) if d != emb.dim() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: emb.dim(),
                    })
                }
                _ => {}
            }
            activities.push(activity);
            embeddings.push(emb);
        }
    }
    SearchSpace::new(activities, embeddings)
}

/// Returns `space` structured around `anchor_index`.
pub fn structure_space(space: SearchSpace, anchor_index: usize) -> Result<SearchSpace> {
    space.structured(anchor_index)
}

/// Deterministic sort of indices by score descending, ties by index ascending.
pub(crate) fn rank_desc(scores: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn toy(n: usize) -> Vec<Activity> {
        (0..n)
            .map(|i| Activity::from_parts("take", &format!("thing{i}")).unwrap())
            .collect()
    }

    /// 1-D embeddings can't be normalized meaningfully; build the space
    /// without normalization to test ordering on raw coordinates.
    fn raw_space(points: &[&[f32]]) -> SearchSpace {
        let n = points.len();
        SearchSpace {
            activities: toy(n),
            embeddings: points.iter().map(|p| emb(p)).collect(),
            anchor_index: 0,
            order: (0..n).collect(),
            position: (0..n).collect(),
            phrase_index: HashMap::new(),
        }
    }

    #[test]
    fn concept_normalization() {
        assert_eq!(normalize_concept_text("  Cutting  Board "), "cutting-board");
        assert_eq!(normalize_concept_text("peanut_butter"), "peanut-butter");
        assert_eq!(normalize_concept_text("t-shirt"), "t-shirt");
        assert!(Concept::action("   ").is_err());
    }

    #[test]
    fn label_parsing_splits_on_first_token() {
        let a = Activity::parse_label("slice  green onion").unwrap();
        assert_eq!(a.action().text(), "slice");
        assert_eq!(a.object().text(), "green-onion");
        assert_eq!(a.phrase(), "slice green-onion");
        assert!(Activity::parse_label("stir").is_err());
    }

    #[test]
    fn activity_checks_slot_kinds() {
        let take = Concept::action("take").unwrap();
        let fork = Concept::object("fork").unwrap();
        assert!(Activity::new(fork.clone(), take.clone()).is_err());
        assert_eq!(Activity::new(take, fork).unwrap().phrase(), "take fork");
    }

    #[test]
    fn normalization_is_unit() {
        let e = Embedding::normalized(vec![3.0, 4.0, 12.0]).unwrap();
        assert!((e.norm() - 1.0).abs() < 1e-6);
        assert!(Embedding::normalized(vec![0.0, 0.0]).is_err());
        assert!(Embedding::new(vec![f32::NAN]).is_err());
        assert!(Embedding::new(vec![]).is_err());
    }

    #[test]
    fn one_dimensional_ordering() {
        let s = raw_space(&[&[0.0], &[2.0], &[1.0]]).structured(0).unwrap();
        assert_eq!(s.order(), &[0, 2, 1]);
        assert_eq!(s.position_of(1), 2);
    }

    #[test]
    fn identical_embeddings_keep_index_order() {
        let s = raw_space(&[&[1.0f32, 0.0][..]; 6]).structured(0).unwrap();
        assert_eq!(s.order(), &[0, 1, 2, 3, 4, 5]);
        let s = s.structured(3).unwrap();
        assert_eq!(s.order()[0], 3);
    }

    #[test]
    fn anchor_out_of_range() {
        let s = raw_space(&[&[0.0], &[1.0]]);
        assert!(matches!(
            s.structured(2),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn cartesian_product_and_dedup() {
        let mut table = TableEmbedder::default();
        for (i, p) in ["take fork", "take plate", "put fork", "put plate"].iter().enumerate() {
            let mut v = vec![0.1f32; 4];
            v[i] = 1.0;
            table.insert(*p, emb(&v));
        }
        let actions = [Concept::action("take").unwrap(), Concept::action("put").unwrap()];
        let objects = [Concept::object("fork").unwrap(), Concept::object("plate").unwrap()];
        let s = build_cartesian_space(&actions, &objects, &table).unwrap();
        let phrases: Vec<_> = s.activities().iter().map(|a| a.phrase()).collect();
        assert_eq!(phrases, ["take fork", "take plate", "put fork", "put plate"]);

        let dup = [Concept::object("fork").unwrap(), Concept::object("fork").unwrap()];
        let s = build_cartesian_space(&actions[..1], &dup, &table).unwrap();
        assert_eq!(s.len(), 1);

        assert!(matches!(
            build_cartesian_space(&[], &objects, &table),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn cartesian_rejects_mixed_dimensions() {
        let mut table = TableEmbedder::default();
        table.insert("take fork", emb(&[1.0, 0.0]));
        table.insert("take plate", emb(&[1.0, 0.0, 0.0]));
        let actions = [Concept::action("take").unwrap()];
        let objects = [Concept::object("fork").unwrap(), Concept::object("plate").unwrap()];
        assert!(matches!(
            build_cartesian_space(&actions, &objects, &table),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn composite_embedder_sums_concepts() {
        let mut c = ConceptEmbeddings::default();
        c.actions.insert("cut".into(), Embedding::normalized(vec![1.0, 0.0]).unwrap());
        c.objects.insert("bread".into(), Embedding::normalized(vec![0.0, 1.0]).unwrap());
        let a = Activity::from_parts("cut", "bread").unwrap();
        let e = CompositeEmbedder::new(&c).embed(&a).unwrap();
        let h = std::f32::consts::FRAC_1_SQRT_2;
        assert!((e.values()[0] - h).abs() < 1e-6 && (e.values()[1] - h).abs() < 1e-6);
        let missing = Activity::from_parts("cut", "cheese").unwrap();
        assert!(matches!(
            CompositeEmbedder::new(&c).embed(&missing),
            Err(Error::MissingEmbedding(m)) if m == "cheese"
        ));
    }

    #[test]
    fn medoid_of_a_line() {
        // Points on a great-circle arc; the middle one minimizes total distance.
        let pts: Vec<Embedding> = (0..5)
            .map(|i| {
                let t = i as f64 * 0.2;
                Embedding::from_f64(&[t.cos(), t.sin()]).unwrap()
            })
            .collect();
        assert_eq!(exact_medoid(&pts), 2);
        assert_eq!(nearest_to_centroid(&pts), 2);
    }
}
