//! Multi-relation graph over users and items built from training prefixes.
//!
//! Five relations: user-item interaction counts, directed item transitions
//! with distance-decayed weights, incompatible popular item pairs, user pairs
//! with overlapping histories, and user pairs linked only through shared
//! similar neighbours.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::UserSequence;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Interactional,
    Transitional,
    Incompatible,
    SimilarUser,
    DissimilarUser,
}

impl RelationKind {
    pub const ALL: [RelationKind; 5] = [
        RelationKind::Interactional,
        RelationKind::Transitional,
        RelationKind::Incompatible,
        RelationKind::SimilarUser,
        RelationKind::DissimilarUser,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::Interactional => "interactional",
            RelationKind::Transitional => "transitional",
            RelationKind::Incompatible => "incompatible",
            RelationKind::SimilarUser => "similar_user",
            RelationKind::DissimilarUser => "dissimilar_user",
        }
    }

    pub fn is_directed(self) -> bool {
        matches!(self, RelationKind::Interactional | RelationKind::Transitional)
    }

    /// Node sets of (src, dst): `true` for users.
    fn endpoints_are_users(self) -> (bool, bool) {
        match self {
            RelationKind::Interactional => (true, false),
            RelationKind::Transitional | RelationKind::Incompatible => (false, false),
            RelationKind::SimilarUser | RelationKind::DissimilarUser => (true, true),
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RelationKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::format("relation kind", s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

/// Edges of one relation, sorted by `(src, dst)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationEdgeList {
    pub kind: RelationKind,
    pub edges: Vec<Edge>,
}

impl RelationEdgeList {
    fn from_map(kind: RelationKind, map: HashMap<(usize, usize), f64>) -> Self {
        let mut edges: Vec<Edge> =
            map.into_iter().filter(|&(_, w)| w > 0.0).map(|((src, dst), weight)| Edge { src, dst, weight }).collect();
        edges.sort_by_key(|e| (e.src, e.dst));
        Self { kind, edges }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn weight_map(&self) -> HashMap<(usize, usize), f64> {
        self.edges.iter().map(|e| ((e.src, e.dst), e.weight)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopularityPartition {
    pub popular_items: BTreeSet<usize>,
    pub popular_users: BTreeSet<usize>,
    pub item_ratio: f64,
    pub user_ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Fraction of users treated as few-shot (the rest are popular).
    pub user_ratio: f64,
    /// Fraction of items treated as few-shot.
    pub item_ratio: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { user_ratio: 0.9, item_ratio: 0.8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiRelationGraph {
    pub num_users: usize,
    pub num_items: usize,
    pub interactional: RelationEdgeList,
    pub transitional: RelationEdgeList,
    pub incompatible: RelationEdgeList,
    pub similar_user: RelationEdgeList,
    pub dissimilar_user: RelationEdgeList,
    pub partition: PopularityPartition,
}

pub fn build_interaction_edges(sequences: &[UserSequence]) -> RelationEdgeList {
    let mut counts: HashMap<(usize, usize), f64> = HashMap::new();
    for s in sequences {
        for &v in &s.items {
            *counts.entry((s.user_index, v)).or_default() += 1.0;
        }
    }
    RelationEdgeList::from_map(RelationKind::Interactional, counts)
}

pub fn build_transitional_edges(sequences: &[UserSequence]) -> RelationEdgeList {
    let mut weights: HashMap<(usize, usize), f64> = HashMap::new();
    let mut min_dist: HashMap<(usize, usize), usize> = HashMap::new();
    for s in sequences {
        let n = s.items.len();
        min_dist.clear();
        for p in 0..n {
            for q in (p + 1)..n {
                let (a, b) = (s.items[p], s.items[q]);
                if a == b {
                    continue;
                }
                let d = min_dist.entry((a, b)).or_insert(usize::MAX);
                *d = (*d).min(q - p);
            }
        }
        let nf = n as f64;
        for (&pair, &d) in &min_dist {
            *weights.entry(pair).or_default() += (nf - d as f64) / nf;
        }
    }
    RelationEdgeList::from_map(RelationKind::Transitional, weights)
}

/// Undirected adjacency with symmetric weights `w(a,b) + w(b,a)`, self
/// loops removed.
fn undirected_adjacency(list: &RelationEdgeList) -> HashMap<usize, HashMap<usize, f64>> {
    let mut adj: HashMap<usize, HashMap<usize, f64>> = HashMap::new();
    for e in &list.edges {
        if e.src == e.dst {
            continue;
        }
        *adj.entry(e.src).or_default().entry(e.dst).or_default() += e.weight;
        *adj.entry(e.dst).or_default().entry(e.src).or_default() += e.weight;
    }
    adj
}

/// Sum of `adj[a][k] + adj[b][k]` over common neighbours `k ∉ {a, b}`, or
/// `None` when there is no common neighbour.
fn common_neighbour_weight(
    adj: &HashMap<usize, HashMap<usize, f64>>,
    a: usize,
    b: usize,
) -> Option<f64> {
    let (na, nb) = (adj.get(&a)?, adj.get(&b)?);
    let (small, large) = if na.len() <= nb.len() { (na, nb) } else { (nb, na) };
    let mut total = 0.0;
    let mut any = false;
    let mut keys: Vec<usize> = small.keys().copied().collect();
    // Fixed summation order keeps the weights bit-reproducible.
    keys.sort_unstable();
    for k in keys {
        if k == a || k == b {
            continue;
        }
        if let Some(wl) = large.get(&k) {
            total += small[&k] + wl;
            any = true;
        }
    }
    any.then_some(total)
}

pub fn build_incompatible_edges(
    transitional: &RelationEdgeList,
    partition: &PopularityPartition,
) -> RelationEdgeList {
    let adj = undirected_adjacency(transitional);
    let popular: Vec<usize> = partition.popular_items.iter().copied().collect();
    let mut out = HashMap::new();
    for (x, &i) in popular.iter().enumerate() {
        for &j in &popular[x + 1..] {
            let linked = adj.get(&i).is_some_and(|n| n.contains_key(&j));
            if linked {
                continue;
            }
            if let Some(w) = common_neighbour_weight(&adj, i, j) {
                out.insert((i, j), w);
            }
        }
    }
    RelationEdgeList::from_map(RelationKind::Incompatible, out)
}

pub fn build_similar_user_edges(interactional: &RelationEdgeList) -> RelationEdgeList {
    let mut totals: HashMap<usize, f64> = HashMap::new();
    let mut by_item: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
    for e in &interactional.edges {
        *totals.entry(e.src).or_default() += e.weight;
        by_item.entry(e.dst).or_default().push((e.src, e.weight));
    }
    let mut items: Vec<usize> = by_item.keys().copied().collect();
    items.sort_unstable();
    let mut common: HashMap<(usize, usize), f64> = HashMap::new();
    for v in items {
        let users = &by_item[&v];
        for (x, &(a, wa)) in users.iter().enumerate() {
            for &(b, wb) in &users[x + 1..] {
                let key = if a < b { (a, b) } else { (b, a) };
                *common.entry(key).or_default() += wa + wb;
            }
        }
    }
    let weights = common.into_iter().map(|((a, b), c)| ((a, b), c / (totals[&a] + totals[&b]))).collect();
    RelationEdgeList::from_map(RelationKind::SimilarUser, weights)
}

pub fn build_dissimilar_user_edges(similar: &RelationEdgeList) -> RelationEdgeList {
    let adj = undirected_adjacency(similar);
    let mut users: Vec<usize> = adj.keys().copied().collect();
    users.sort_unstable();
    let mut out = HashMap::new();
    for (x, &i) in users.iter().enumerate() {
        for &j in &users[x + 1..] {
            if adj[&i].contains_key(&j) {
                continue;
            }
            if let Some(w) = common_neighbour_weight(&adj, i, j) {
                out.insert((i, j), w);
            }
        }
    }
    RelationEdgeList::from_map(RelationKind::DissimilarUser, out)
}

/// Number of popular entries out of `n` when `few_shot_ratio` of them are
/// few-shot, clamped to `[1, n]`.
pub fn popular_count(n: usize, few_shot_ratio: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let k = ((1.0 - few_shot_ratio) * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

fn top_by_count(counts: &[usize], few_shot_ratio: f64) -> BTreeSet<usize> {
    // counts[0] is padding; indices start at 1.
    let mut order: Vec<usize> = (1..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order.truncate(popular_count(counts.len().saturating_sub(1), few_shot_ratio));
    order.into_iter().collect()
}

pub fn popularity_partition(
    sequences: &[UserSequence],
    num_users: usize,
    num_items: usize,
    cfg: &GraphConfig,
) -> Result<PopularityPartition> {
    for (name, r) in [("user_ratio", cfg.user_ratio), ("item_ratio", cfg.item_ratio)] {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::InvalidArgument(format!("{name} must lie in (0, 1), got {r}")));
        }
    }
    let mut item_counts = vec![0usize; num_items + 1];
    let mut user_counts = vec![0usize; num_users + 1];
    for s in sequences {
        check_index(s.user_index, num_users)?;
        user_counts[s.user_index] += s.items.len();
        for &v in &s.items {
            check_index(v, num_items)?;
            item_counts[v] += 1;
        }
    }
    Ok(PopularityPartition {
        popular_items: top_by_count(&item_counts, cfg.item_ratio),
        popular_users: top_by_count(&user_counts, cfg.user_ratio),
        item_ratio: cfg.item_ratio,
        user_ratio: cfg.user_ratio,
    })
}

fn check_index(i: usize, n: usize) -> Result<()> {
    if i == 0 || i > n {
        return Err(Error::IndexOutOfRange { index: i, rows: n + 1 });
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphManifest {
    pub num_users: usize,
    pub num_items: usize,
    pub edge_counts: BTreeMap<String, usize>,
    pub item_ratio: f64,
    pub user_ratio: f64,
    pub popular_items: Vec<usize>,
    pub popular_users: Vec<usize>,
}

impl MultiRelationGraph {
    /// Builds all five relations from training prefixes.
    pub fn build(
        train: &[UserSequence],
        num_users: usize,
        num_items: usize,
        cfg: &GraphConfig,
    ) -> Result<Self> {
        let partition = popularity_partition(train, num_users, num_items, cfg)?;
        let interactional = build_interaction_edges(train);
        let transitional = build_transitional_edges(train);
        let incompatible = build_incompatible_edges(&transitional, &partition);
        let similar_user = build_similar_user_edges(&interactional);
        let dissimilar_user = build_dissimilar_user_edges(&similar_user);
        let g = Self {
            num_users,
            num_items,
            interactional,
            transitional,
            incompatible,
            similar_user,
            dissimilar_user,
            partition,
        };
        log::info!(
            "graph: {} interactional, {} transitional, {} incompatible, {} similar, {} dissimilar edges",
            g.interactional.len(),
            g.transitional.len(),
            g.incompatible.len(),
            g.similar_user.len(),
            g.dissimilar_user.len()
        );
        Ok(g)
    }

    pub fn relation(&self, kind: RelationKind) -> &RelationEdgeList {
        match kind {
            RelationKind::Interactional => &self.interactional,
            RelationKind::Transitional => &self.transitional,
            RelationKind::Incompatible => &self.incompatible,
            RelationKind::SimilarUser => &self.similar_user,
            RelationKind::DissimilarUser => &self.dissimilar_user,
        }
    }

    pub fn manifest(&self) -> GraphManifest {
        GraphManifest {
            num_users: self.num_users,
            num_items: self.num_items,
            edge_counts: RelationKind::ALL
                .iter()
                .map(|&k| (k.as_str().to_string(), self.relation(k).len()))
                .collect(),
            item_ratio: self.partition.item_ratio,
            user_ratio: self.partition.user_ratio,
            popular_items: self.partition.popular_items.iter().copied().collect(),
            popular_users: self.partition.popular_users.iter().copied().collect(),
        }
    }

    /// Checks index ranges, weights, orientation, duplicates and the
    /// cross-relation constraints.
    pub fn validate(&self) -> Result<()> {
        for kind in RelationKind::ALL {
            let list = self.relation(kind);
            if list.kind != kind {
                return Err(Error::format("graph", format!("{} list labelled {}", kind, list.kind)));
            }
            validate_list(list, self.num_users, self.num_items)?;
        }
        let bad = |detail: String| Err(Error::format("graph", detail));
        for e in &self.incompatible.edges {
            if !self.partition.popular_items.contains(&e.src) || !self.partition.popular_items.contains(&e.dst) {
                return bad(format!("incompatible edge {}-{} touches an unpopular item", e.src, e.dst));
            }
        }
        let trans = self.transitional.weight_map();
        for e in &self.incompatible.edges {
            if trans.contains_key(&(e.src, e.dst)) || trans.contains_key(&(e.dst, e.src)) {
                return bad(format!("items {} and {} are both transitional and incompatible", e.src, e.dst));
            }
        }
        let sim = self.similar_user.weight_map();
        let has_similar: BTreeSet<usize> = sim.keys().flat_map(|&(a, b)| [a, b]).collect();
        for e in &self.dissimilar_user.edges {
            if sim.contains_key(&(e.src, e.dst)) {
                return bad(format!("users {} and {} are both similar and dissimilar", e.src, e.dst));
            }
            if !has_similar.contains(&e.src) || !has_similar.contains(&e.dst) {
                return bad(format!("dissimilar edge {}-{} has an endpoint without similar users", e.src, e.dst));
            }
        }
        Ok(())
    }

    /// Writes one edge file per relation plus `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for kind in RelationKind::ALL {
            let path = dir.join(format!("{kind}.tsv"));
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_edges(BufWriter::new(file), self.relation(kind), self.num_users, self.num_items)
                .map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest()).expect("manifest serialises");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: GraphManifest =
            serde_json::from_str(&text).map_err(|e| Error::format("graph manifest", e.to_string()))?;
        let mut lists = Vec::new();
        for kind in RelationKind::ALL {
            let path = dir.join(format!("{kind}.tsv"));
            let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            let (list, nu, ni) = read_edges(BufReader::new(file))?;
            if list.kind != kind || nu != m.num_users || ni != m.num_items {
                return Err(Error::format(
                    "edge file",
                    format!("{} header disagrees with the manifest", path.display()),
                ));
            }
            if m.edge_counts.get(kind.as_str()) != Some(&list.len()) {
                return Err(Error::format("edge file", format!("{} edge count mismatch", path.display())));
            }
            lists.push(list);
        }
        let mut it = lists.into_iter();
        let g = Self {
            num_users: m.num_users,
            num_items: m.num_items,
            interactional: it.next().unwrap(),
            transitional: it.next().unwrap(),
            incompatible: it.next().unwrap(),
            similar_user: it.next().unwrap(),
            dissimilar_user: it.next().unwrap(),
            partition: PopularityPartition {
                popular_items: m.popular_items.into_iter().collect(),
                popular_users: m.popular_users.into_iter().collect(),
                item_ratio: m.item_ratio,
                user_ratio: m.user_ratio,
            },
        };
        g.validate()?;
        Ok(g)
    }
}

fn validate_list(list: &RelationEdgeList, num_users: usize, num_items: usize) -> Result<()> {
    let (su, du) = list.kind.endpoints_are_users();
    let bound = |is_user: bool| if is_user { num_users } else { num_items };
    let bad = |detail: String| Err(Error::format(format!("{} edges", list.kind), detail));
    let mut prev: Option<(usize, usize)> = None;
    for e in &list.edges {
        if e.src == 0 || e.src > bound(su) || e.dst == 0 || e.dst > bound(du) {
            return bad(format!("edge {}-{} out of range", e.src, e.dst));
        }
        if !(e.weight > 0.0 && e.weight.is_finite()) {
            return bad(format!("edge {}-{} has weight {}", e.src, e.dst, e.weight));
        }
        if list.kind != RelationKind::Interactional && e.src == e.dst {
            return bad(format!("self loop on {}", e.src));
        }
        if !list.kind.is_directed() && e.src >= e.dst {
            return bad(format!("undirected edge {}-{} not stored with src < dst", e.src, e.dst));
        }
        if prev.is_some_and(|p| p >= (e.src, e.dst)) {
            return bad(format!("edge {}-{} duplicated or out of order", e.src, e.dst));
        }
        prev = Some((e.src, e.dst));
    }
    Ok(())
}

pub fn write_edges<W: Write>(
    mut out: W,
    list: &RelationEdgeList,
    num_users: usize,
    num_items: usize,
) -> std::io::Result<()> {
    writeln!(out, "#{} {} {}", list.kind, num_users, num_items)?;
    for e in &list.edges {
        writeln!(out, "{}\t{}\t{:.8e}", e.src, e.dst, e.weight)?;
    }
    out.flush()
}

/// Parses an edge file and validates the list on its own.
pub fn read_edges<In: BufRead>(input: In) -> Result<(RelationEdgeList, usize, usize)> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format("edge file", "missing header"))?
        .map_err(|e| Error::io("<edges>", e))?;
    let fields: Vec<&str> = header.strip_prefix('#').unwrap_or("").split_whitespace().collect();
    let [kind, nu, ni] = fields[..] else {
        return Err(Error::format("edge file header", header.clone()));
    };
    let kind: RelationKind = kind.parse()?;
    let parse_n = |s: &str| s.parse::<usize>().map_err(|_| Error::format("edge file header", header.clone()));
    let (nu, ni) = (parse_n(nu)?, parse_n(ni)?);
    let mut edges = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io("<edges>", e))?;
        if line.is_empty() {
            continue;
        }
        let bad = || Error::format("edge line", format!("line {}: {line:?}", n + 2));
        let mut cols = line.split('\t');
        let mut next = || cols.next().ok_or_else(bad);
        let src = next()?.parse().map_err(|_| bad())?;
        let dst = next()?.parse().map_err(|_| bad())?;
        let weight = next()?.parse().map_err(|_| bad())?;
        edges.push(Edge { src, dst, weight });
    }
    let list = RelationEdgeList { kind, edges };
    validate_list(&list, nu, ni)?;
    Ok((list, nu, ni))
}
