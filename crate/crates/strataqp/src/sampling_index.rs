//! Aggregate B-tree used as the sampling index.
//!
//! Every internal node annotates each child pointer with the aggregate weight
//! of that child's subtree, which enables drawing weight-proportional random
//! leaf records from any key range with a single random number per sample.
//! A range is preprocessed once into a canonical decomposition (boundary leaf
//! runs plus fully covered subtrees) so that each descent can start below the
//! root, at the subtree the sample falls into.

use rand::Rng;

use crate::error::{Error, Result};

/// One table row: an orderable range key, the aggregation expression value,
/// and the columns referenced by the extra filter predicate.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub key: i64,
    pub value: f64,
    pub attrs: Vec<f64>,
}

impl Record {
    pub fn new(key: i64, value: f64, attrs: Vec<f64>) -> Self {
        Record { key, value, attrs }
    }

    fn check_finite(&self) -> Result<()> {
        if !self.value.is_finite() {
            return Err(Error::InvalidValue(format!("value of key {}", self.key)));
        }
        if self.attrs.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidValue(format!("attr of key {}", self.key)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

impl CmpOp {
    fn eval(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Gt => lhs > rhs,
        }
    }
}

/// Conjunction of comparisons against attr columns (the filter on top of the
/// range predicate). An empty clause list accepts everything.
#[derive(Debug, Clone, Default)]
pub struct Predicate {
    pub clauses: Vec<(usize, CmpOp, f64)>,
}

impl Predicate {
    pub fn always() -> Self {
        Predicate { clauses: Vec::new() }
    }

    pub fn single(attr: usize, op: CmpOp, constant: f64) -> Self {
        Predicate { clauses: vec![(attr, op, constant)] }
    }

    pub fn pass(&self, record: &Record) -> bool {
        self.clauses
            .iter()
            .all(|&(attr, op, c)| record.attrs.get(attr).is_some_and(|&v| op.eval(v, c)))
    }
}

/// Node-visit accounting: one unit per tree node touched, split between range
/// preprocessing and the weight-guided sample descents.
#[derive(Debug, Clone, Copy, Default)]
pub struct VisitCounter {
    pub preprocess_visits: u64,
    pub sample_visits: u64,
}

impl VisitCounter {
    pub fn total(&self) -> u64 {
        self.preprocess_visits + self.sample_visits
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub struct LeafEntry {
    pub record: Record,
    pub weight: f64,
}

#[derive(Debug)]
struct Internal {
    children: Vec<NodeId>,
    /// Aggregate subtree weight per child pointer.
    weights: Vec<f64>,
    /// Min/max key of each child's subtree.
    lows: Vec<i64>,
    highs: Vec<i64>,
}

#[derive(Debug)]
enum Node {
    Internal(Internal),
    Leaf(Vec<LeafEntry>),
}

/// Weighted aggregate B-tree. Leaves sit at level 1, the root at level
/// `height`. A per-sample descent starting at level h visits h nodes.
#[derive(Debug)]
pub struct ABTree {
    fanout: usize,
    height: usize,
    root: NodeId,
    nodes: Vec<Node>,
    total_weight: f64,
    len: usize,
}

impl ABTree {
    /// Empty tree (a single empty leaf); rows arrive through `insert`.
    pub fn new(fanout: usize) -> Result<Self> {
        if fanout < 4 {
            return Err(Error::InvalidValue("fanout must be >= 4".into()));
        }
        Ok(ABTree {
            fanout,
            height: 1,
            root: 0,
            nodes: vec![Node::Leaf(Vec::new())],
            total_weight: 0.0,
            len: 0,
        })
    }

    /// Bulk-load from records sorted by key, all with uniform weight 1.
    /// Nodes are packed to the fanout, so inserting the same sorted records
    /// one by one produces an identical tree.
    pub fn build_bulk(records: Vec<Record>, fanout: usize) -> Result<Self> {
        if fanout < 4 {
            return Err(Error::InvalidValue("fanout must be >= 4".into()));
        }
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if records.windows(2).any(|w| w[0].key > w[1].key) {
            return Err(Error::InvalidValue("bulk input not sorted by key".into()));
        }
        for r in &records {
            r.check_finite()?;
        }
        let len = records.len();
        let mut nodes = Vec::new();
        let mut level: Vec<NodeId> = Vec::new();
        for chunk in records.chunks(fanout) {
            let entries: Vec<LeafEntry> = chunk
                .iter()
                .map(|r| LeafEntry { record: r.clone(), weight: 1.0 })
                .collect();
            nodes.push(Node::Leaf(entries));
            level.push(nodes.len() - 1);
        }
        let mut height = 1;
        while level.len() > 1 {
            let mut next = Vec::new();
            for chunk in level.chunks(fanout) {
                let mut internal = Internal {
                    children: Vec::new(),
                    weights: Vec::new(),
                    lows: Vec::new(),
                    highs: Vec::new(),
                };
                for &child in chunk {
                    internal.children.push(child);
                    internal.weights.push(node_weight(&nodes, child));
                    internal.lows.push(node_low(&nodes, child));
                    internal.highs.push(node_high(&nodes, child));
                }
                nodes.push(Node::Internal(internal));
                next.push(nodes.len() - 1);
            }
            level = next;
            height += 1;
        }
        Ok(ABTree {
            fanout,
            height,
            root: level[0],
            nodes,
            total_weight: len as f64,
            len,
        })
    }

    pub fn fanout(&self) -> usize {
        self.fanout
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Aggregate weights on the root's child pointers (empty for height 1).
    pub fn root_child_weights(&self) -> Vec<f64> {
        match &self.nodes[self.root] {
            Node::Internal(int) => int.weights.clone(),
            Node::Leaf(_) => Vec::new(),
        }
    }

    /// Insert a weighted record, keeping key order and all aggregate weights.
    pub fn insert(&mut self, record: Record, weight: f64) -> Result<()> {
        record.check_finite()?;
        if !weight.is_finite() || weight < 0.0 {
            return Err(Error::InvalidValue("weight must be finite and >= 0".into()));
        }
        self.total_weight += weight;
        self.len += 1;
        if let Some(new_right) = self.insert_rec(self.root, record, weight) {
            let old_root = self.root;
            let internal = Internal {
                children: vec![old_root, new_right],
                weights: vec![
                    node_weight(&self.nodes, old_root),
                    node_weight(&self.nodes, new_right),
                ],
                lows: vec![node_low(&self.nodes, old_root), node_low(&self.nodes, new_right)],
                highs: vec![node_high(&self.nodes, old_root), node_high(&self.nodes, new_right)],
            };
            self.nodes.push(Node::Internal(internal));
            self.root = self.nodes.len() - 1;
            self.height += 1;
        }
        Ok(())
    }

    fn insert_rec(&mut self, id: NodeId, record: Record, weight: f64) -> Option<NodeId> {
        let fanout = self.fanout;
        match &self.nodes[id] {
            Node::Leaf(_) => {
                let Node::Leaf(entries) = &mut self.nodes[id] else { unreachable!() };
                // Duplicates go after existing equal keys.
                let idx = entries.partition_point(|e| e.record.key <= record.key);
                entries.insert(idx, LeafEntry { record, weight });
                if entries.len() <= fanout {
                    return None;
                }
                let n = entries.len();
                // Appends split off only the new entry so sorted insertion
                // packs leaves exactly like bulk loading.
                let split_at = if idx == n - 1 { fanout } else { n / 2 };
                let right = entries.split_off(split_at);
                self.nodes.push(Node::Leaf(right));
                Some(self.nodes.len() - 1)
            }
            Node::Internal(int) => {
                let mut ci = int.children.len() - 1;
                while ci > 0 && int.lows[ci] > record.key {
                    ci -= 1;
                }
                let child = int.children[ci];
                let key = record.key;
                let split = self.insert_rec(child, record, weight);
                let (new_entry, inserted_at) = match split {
                    Some(new_child) => {
                        let w = node_weight(&self.nodes, new_child);
                        let lo = node_low(&self.nodes, new_child);
                        let hi = node_high(&self.nodes, new_child);
                        // Left sibling changed shape; refresh its aggregates.
                        let cw = node_weight(&self.nodes, child);
                        let clo = node_low(&self.nodes, child);
                        let chi = node_high(&self.nodes, child);
                        let Node::Internal(int) = &mut self.nodes[id] else { unreachable!() };
                        int.weights[ci] = cw;
                        int.lows[ci] = clo;
                        int.highs[ci] = chi;
                        int.children.insert(ci + 1, new_child);
                        int.weights.insert(ci + 1, w);
                        int.lows.insert(ci + 1, lo);
                        int.highs.insert(ci + 1, hi);
                        (true, ci + 1)
                    }
                    None => {
                        let Node::Internal(int) = &mut self.nodes[id] else { unreachable!() };
                        int.weights[ci] += weight;
                        int.lows[ci] = int.lows[ci].min(key);
                        int.highs[ci] = int.highs[ci].max(key);
                        (false, ci)
                    }
                };
                if !new_entry {
                    return None;
                }
                let Node::Internal(int) = &mut self.nodes[id] else { unreachable!() };
                if int.children.len() <= fanout {
                    return None;
                }
                let n = int.children.len();
                let split_at = if inserted_at == n - 1 { fanout } else { n / 2 };
                let right = Internal {
                    children: int.children.split_off(split_at),
                    weights: int.weights.split_off(split_at),
                    lows: int.lows.split_off(split_at),
                    highs: int.highs.split_off(split_at),
                };
                self.nodes.push(Node::Internal(right));
                Some(self.nodes.len() - 1)
            }
        }
    }

    /// Recomputed-subtree check of every aggregate annotation (test support).
    pub fn check_weights(&self, rel_tol: f64) -> bool {
        fn walk(nodes: &[Node], id: NodeId, rel_tol: f64) -> Option<f64> {
            match &nodes[id] {
                Node::Leaf(entries) => Some(entries.iter().map(|e| e.weight).sum()),
                Node::Internal(int) => {
                    let mut total = 0.0;
                    for (i, &c) in int.children.iter().enumerate() {
                        let w = walk(nodes, c, rel_tol)?;
                        let annotated = int.weights[i];
                        let scale = w.abs().max(annotated.abs()).max(1.0);
                        if (w - annotated).abs() > rel_tol * scale {
                            return None;
                        }
                        total += w;
                    }
                    Some(total)
                }
            }
        }
        match walk(&self.nodes, self.root, rel_tol) {
            Some(w) => {
                let scale = w.abs().max(self.total_weight.abs()).max(1.0);
                (w - self.total_weight).abs() <= rel_tol * scale
            }
            None => false,
        }
    }

    /// All leaf entries in key order (test support; linear scan).
    pub fn scan(&self) -> Vec<&LeafEntry> {
        let mut out = Vec::with_capacity(self.len);
        fn walk<'a>(nodes: &'a [Node], id: NodeId, out: &mut Vec<&'a LeafEntry>) {
            match &nodes[id] {
                Node::Leaf(entries) => out.extend(entries.iter()),
                Node::Internal(int) => {
                    for &c in &int.children {
                        walk(nodes, c, out);
                    }
                }
            }
        }
        walk(&self.nodes, self.root, &mut out);
        out
    }

    /// Descent path to the first leaf with an entry of key >= `l`.
    /// Returns internal path [(node, child idx)] plus (leaf id, entry idx).
    fn left_path(&self, l: i64) -> Option<(Vec<(NodeId, usize)>, NodeId, usize)> {
        let mut path = Vec::new();
        let mut id = self.root;
        loop {
            match &self.nodes[id] {
                Node::Internal(int) => {
                    let ci = (0..int.children.len()).find(|&i| int.highs[i] >= l)?;
                    path.push((id, ci));
                    id = int.children[ci];
                }
                Node::Leaf(entries) => {
                    let idx = entries.partition_point(|e| e.record.key < l);
                    if idx == entries.len() {
                        return None;
                    }
                    return Some((path, id, idx));
                }
            }
        }
    }

    /// Descent path to the last leaf with an entry of key < `u`.
    fn right_path(&self, u: i64) -> Option<(Vec<(NodeId, usize)>, NodeId, usize)> {
        let mut path = Vec::new();
        let mut id = self.root;
        loop {
            match &self.nodes[id] {
                Node::Internal(int) => {
                    let ci = (0..int.children.len()).rfind(|&i| int.lows[i] < u)?;
                    path.push((id, ci));
                    id = int.children[ci];
                }
                Node::Leaf(entries) => {
                    let end = entries.partition_point(|e| e.record.key < u);
                    if end == 0 {
                        return None;
                    }
                    return Some((path, id, end));
                }
            }
        }
    }

    fn leaf_entries(&self, id: NodeId) -> &[LeafEntry] {
        match &self.nodes[id] {
            Node::Leaf(entries) => entries,
            Node::Internal(_) => unreachable!("leaf id expected"),
        }
    }
}

fn node_weight(nodes: &[Node], id: NodeId) -> f64 {
    match &nodes[id] {
        Node::Leaf(entries) => entries.iter().map(|e| e.weight).sum(),
        Node::Internal(int) => int.weights.iter().sum(),
    }
}

fn node_low(nodes: &[Node], id: NodeId) -> i64 {
    match &nodes[id] {
        Node::Leaf(entries) => entries.first().map(|e| e.record.key).unwrap_or(i64::MAX),
        Node::Internal(int) => int.lows[0],
    }
}

fn node_high(nodes: &[Node], id: NodeId) -> i64 {
    match &nodes[id] {
        Node::Leaf(entries) => entries.last().map(|e| e.record.key).unwrap_or(i64::MIN),
        Node::Internal(int) => *int.highs.last().unwrap(),
    }
}

/// One piece of a range's canonical decomposition: either a subtree fully
/// covered by the range or a run of entries on a boundary leaf. `low`/`high`
/// are the half-open key range assigned to the unit; consecutive units tile
/// the query range.
#[derive(Debug, Clone)]
pub enum DecompUnit {
    Subtree {
        root: NodeId,
        height: usize,
        low: i64,
        high: i64,
        weight: f64,
    },
    LeafRun {
        leaf: NodeId,
        start: usize,
        end: usize,
        low: i64,
        high: i64,
        weight: f64,
    },
}

impl DecompUnit {
    pub fn weight(&self) -> f64 {
        match self {
            DecompUnit::Subtree { weight, .. } | DecompUnit::LeafRun { weight, .. } => *weight,
        }
    }

    /// Root level of the weight-guided descent; leaf runs count as height 1.
    pub fn height(&self) -> usize {
        match self {
            DecompUnit::Subtree { height, .. } => *height,
            DecompUnit::LeafRun { .. } => 1,
        }
    }

    pub fn key_range(&self) -> (i64, i64) {
        match self {
            DecompUnit::Subtree { low, high, .. } | DecompUnit::LeafRun { low, high, .. } => {
                (*low, *high)
            }
        }
    }

    fn set_key_range(&mut self, lo: i64, hi: i64) {
        match self {
            DecompUnit::Subtree { low, high, .. } | DecompUnit::LeafRun { low, high, .. } => {
                *low = lo;
                *high = hi;
            }
        }
    }

    /// Smallest key actually stored in the unit (before range stitching).
    fn subtree_min(&self, tree: &ABTree) -> i64 {
        match self {
            DecompUnit::Subtree { root, .. } => node_low(&tree.nodes, *root),
            DecompUnit::LeafRun { leaf, start, .. } => {
                tree.leaf_entries(*leaf)[*start].record.key
            }
        }
    }

    pub fn is_leaf_run(&self) -> bool {
        matches!(self, DecompUnit::LeafRun { .. })
    }
}

/// Preprocessed query range: boundary paths collapsed into the canonical
/// decomposition, the LCA height, and the exact in-range weight.
#[derive(Debug, Clone)]
pub struct RangeContext {
    pub low: i64,
    pub high: i64,
    pub lca_height: usize,
    pub w: f64,
    pub units: Vec<DecompUnit>,
}

/// One drawn record with its inclusion probability (relative to the sampled
/// weight pool) and the level the descent started at.
#[derive(Debug)]
pub struct Sample<'a> {
    pub record: &'a Record,
    pub p: f64,
    pub drawn_from_height: usize,
}

/// Find the boundary paths for `[l, u)`, the LCA, and the canonical
/// decomposition. Costs at most 2H preprocess visits.
pub fn range_preprocess(
    tree: &ABTree,
    l: i64,
    u: i64,
    counter: &mut VisitCounter,
) -> Result<RangeContext> {
    assert!(l < u, "range lower bound must be below upper bound");
    counter.preprocess_visits += tree.height as u64;
    let Some((lpath, lleaf, lstart)) = tree.left_path(l) else {
        return Err(Error::EmptyRange);
    };
    counter.preprocess_visits += tree.height as u64;
    let Some((rpath, rleaf, rend)) = tree.right_path(u) else {
        return Err(Error::EmptyRange);
    };
    if tree.leaf_entries(lleaf)[lstart].record.key >= u {
        return Err(Error::EmptyRange);
    }

    let h = tree.height;
    let mut units: Vec<DecompUnit> = Vec::new();
    let lca_height;
    if lleaf == rleaf {
        lca_height = 1;
        let weight: f64 = tree.leaf_entries(lleaf)[lstart..rend]
            .iter()
            .map(|e| e.weight)
            .sum();
        units.push(DecompUnit::LeafRun {
            leaf: lleaf,
            start: lstart,
            end: rend,
            low: l,
            high: u,
            weight,
        });
    } else {
        // Deepest shared node of the two internal paths.
        let mut lca_depth = 0;
        while lca_depth + 1 < lpath.len()
            && lca_depth + 1 < rpath.len()
            && lpath[lca_depth].1 == rpath[lca_depth].1
        {
            debug_assert_eq!(lpath[lca_depth].0, rpath[lca_depth].0);
            lca_depth += 1;
        }
        lca_height = h - lca_depth;

        let lentries = tree.leaf_entries(lleaf);
        units.push(DecompUnit::LeafRun {
            leaf: lleaf,
            start: lstart,
            end: lentries.len(),
            low: l,
            high: u,
            weight: lentries[lstart..].iter().map(|e| e.weight).sum(),
        });
        // Left path, bottom-up: siblings right of the path are fully covered.
        for depth in (lca_depth + 1..lpath.len()).rev() {
            let (nid, ci) = lpath[depth];
            push_covered_children(tree, nid, ci + 1, usize::MAX, h - depth - 1, &mut units);
        }
        // LCA level: subtrees strictly between the two boundary children.
        let (lca_id, lci) = lpath[lca_depth];
        let rci = rpath[lca_depth].1;
        push_covered_children(tree, lca_id, lci + 1, rci, lca_height - 1, &mut units);
        // Right path, top-down: siblings left of the path.
        for depth in lca_depth + 1..rpath.len() {
            let (nid, ci) = rpath[depth];
            push_covered_children(tree, nid, 0, ci, h - depth - 1, &mut units);
        }
        let rentries = tree.leaf_entries(rleaf);
        units.push(DecompUnit::LeafRun {
            leaf: rleaf,
            start: 0,
            end: rend,
            low: l,
            high: u,
            weight: rentries[..rend].iter().map(|e| e.weight).sum(),
        });
    }

    // Stitch half-open key ranges so consecutive units tile [l, u).
    let bounds: Vec<i64> = std::iter::once(l)
        .chain(units.iter().skip(1).map(|un| un.subtree_min(tree)))
        .collect();
    for (i, unit) in units.iter_mut().enumerate() {
        let hi = if i + 1 < bounds.len() { bounds[i + 1] } else { u };
        unit.set_key_range(bounds[i], hi);
    }

    let w: f64 = units.iter().map(|un| un.weight()).sum();
    Ok(RangeContext { low: l, high: u, lca_height, w, units })
}

fn push_covered_children(
    tree: &ABTree,
    nid: NodeId,
    from: usize,
    to: usize,
    child_height: usize,
    units: &mut Vec<DecompUnit>,
) {
    let Node::Internal(int) = &tree.nodes[nid] else { unreachable!() };
    let to = to.min(int.children.len());
    for i in from..to {
        units.push(DecompUnit::Subtree {
            root: int.children[i],
            height: child_height,
            low: int.lows[i],
            high: int.highs[i],
            weight: int.weights[i],
        });
    }
}

/// Draw one record from a weight pool made of `units` (total weight `w`),
/// using a single uniform random number and a weight-guided descent that
/// starts at the chosen unit's root.
pub fn sample_from_units<'a, R: Rng>(
    tree: &'a ABTree,
    units: &[DecompUnit],
    w: f64,
    rng: &mut R,
    counter: &mut VisitCounter,
) -> Sample<'a> {
    assert!(w > 0.0, "cannot sample from zero total weight");
    let d: f64 = rng.random();
    let mut residual = (d * w).floor();
    let mut chosen = units.len() - 1;
    let mut cum = 0.0;
    for (i, unit) in units.iter().enumerate() {
        cum += unit.weight();
        // A residual equal to the prefix sum falls into the next unit.
        if residual < cum {
            chosen = i;
            residual -= cum - unit.weight();
            break;
        }
    }
    let unit = &units[chosen];
    let start_height = unit.height();
    match unit {
        DecompUnit::LeafRun { leaf, start, end, .. } => {
            counter.sample_visits += 1;
            let entries = &tree.leaf_entries(*leaf)[*start..*end];
            let (entry, _) = pick_weighted(entries.iter().map(|e| e.weight), residual, entries);
            Sample {
                record: &entry.record,
                p: entry.weight / w,
                drawn_from_height: start_height,
            }
        }
        DecompUnit::Subtree { root, .. } => {
            let mut id = *root;
            loop {
                counter.sample_visits += 1;
                match &tree.nodes[id] {
                    Node::Internal(int) => {
                        let (child, rest) =
                            pick_weighted(int.weights.iter().copied(), residual, &int.children);
                        residual = rest;
                        id = *child;
                    }
                    Node::Leaf(entries) => {
                        let (entry, _) =
                            pick_weighted(entries.iter().map(|e| e.weight), residual, entries);
                        return Sample {
                            record: &entry.record,
                            p: entry.weight / w,
                            drawn_from_height: start_height,
                        };
                    }
                }
            }
        }
    }
}

/// First item whose weight prefix sum exceeds the residual; returns the item
/// and the residual with the preceding prefix subtracted.
fn pick_weighted<'a, T>(
    weights: impl Iterator<Item = f64>,
    residual: f64,
    items: &'a [T],
) -> (&'a T, f64) {
    let mut cum = 0.0;
    for (i, w) in weights.enumerate() {
        cum += w;
        if residual < cum {
            return (&items[i], residual - (cum - w));
        }
    }
    // Float rounding at the very top of the range: clamp to the last item.
    (items.last().unwrap(), 0.0)
}

/// Draw one record from a preprocessed range, i.i.d. with replacement.
pub fn sample_one<'a, R: Rng>(
    tree: &'a ABTree,
    ctx: &RangeContext,
    rng: &mut R,
    counter: &mut VisitCounter,
) -> Sample<'a> {
    sample_from_units(tree, &ctx.units, ctx.w, rng, counter)
}

/// Split a fully covered subtree unit into one unit per child of its root.
/// The children's key ranges tile the parent's.
pub fn child_subranges(tree: &ABTree, unit: &DecompUnit) -> Result<Vec<DecompUnit>> {
    let DecompUnit::Subtree { root, height, low, high, .. } = unit else {
        return Err(Error::LeafLevel);
    };
    if *height <= 1 {
        return Err(Error::LeafLevel);
    }
    let Node::Internal(int) = &tree.nodes[*root] else { unreachable!() };
    let mut out = Vec::with_capacity(int.children.len());
    for i in 0..int.children.len() {
        let lo = if i == 0 { *low } else { int.lows[i] };
        let hi = if i + 1 < int.children.len() { int.lows[i + 1] } else { *high };
        out.push(DecompUnit::Subtree {
            root: int.children[i],
            height: height - 1,
            low: lo,
            high: hi,
            weight: int.weights[i],
        });
    }
    Ok(out)
}

/// Exact aggregation of a boundary leaf run: (sum of e(t) over passing
/// entries, passing count).
pub fn exact_leaf_run_aggregate<F: Fn(&Record) -> f64>(
    tree: &ABTree,
    unit: &DecompUnit,
    expr: F,
    filter: &Predicate,
) -> (f64, u64) {
    let DecompUnit::LeafRun { leaf, start, end, .. } = unit else {
        panic!("exact aggregation applies to leaf runs only");
    };
    let mut sum = 0.0;
    let mut count = 0;
    for entry in &tree.leaf_entries(*leaf)[*start..*end] {
        if filter.pass(&entry.record) {
            sum += expr(&entry.record);
            count += 1;
        }
    }
    (sum, count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_records(n: usize) -> Vec<Record> {
        (0..n).map(|i| Record::new(i as i64 + 1, 1.0, vec![])).collect()
    }

    #[test]
    fn bulk_packs_to_fanout() {
        // 25 records at fanout 5 pack into 5 full leaves under one root.
        let t = ABTree::build_bulk(uniform_records(25), 5).unwrap();
        assert_eq!(t.height(), 2);
        assert_eq!(t.total_weight(), 25.0);
        assert_eq!(t.root_child_weights(), vec![5.0; 5]);
        assert!(t.check_weights(1e-9));
    }

    #[test]
    fn degenerate_single_record() {
        let t = ABTree::build_bulk(uniform_records(1), 64).unwrap();
        assert_eq!(t.height(), 1);
        assert_eq!(t.total_weight(), 1.0);
    }

    #[test]
    fn bulk_rejects_empty_and_nonfinite() {
        assert!(matches!(ABTree::build_bulk(vec![], 8), Err(Error::EmptyDataset)));
        let bad = vec![Record::new(1, f64::NAN, vec![])];
        assert!(matches!(ABTree::build_bulk(bad, 8), Err(Error::InvalidValue(_))));
    }

    #[test]
    fn insert_into_empty() {
        let mut t = ABTree::new(8).unwrap();
        t.insert(Record::new(7, 2.0, vec![]), 3.5).unwrap();
        assert_eq!(t.total_weight(), 3.5);
        assert!(matches!(
            t.insert(Record::new(8, 1.0, vec![]), f64::INFINITY),
            Err(Error::InvalidValue(_))
        ));
    }

    #[test]
    fn sequential_insert_matches_bulk() {
        // Structural oracle: same leaves and same child aggregates.
        for n in [1usize, 4, 5, 24, 25, 26, 100, 321] {
            let records = uniform_records(n);
            let bulk = ABTree::build_bulk(records.clone(), 5).unwrap();
            let mut inc = ABTree::new(5).unwrap();
            for r in records {
                inc.insert(r, 1.0).unwrap();
            }
            assert_eq!(bulk.height(), inc.height(), "n={n}");
            assert_eq!(bulk.root_child_weights(), inc.root_child_weights(), "n={n}");
            let a: Vec<i64> = bulk.scan().iter().map(|e| e.record.key).collect();
            let b: Vec<i64> = inc.scan().iter().map(|e| e.record.key).collect();
            assert_eq!(a, b, "n={n}");
            assert!(inc.check_weights(1e-9));
        }
    }

    #[test]
    fn root_split_grows_height_by_one() {
        let mut t = ABTree::new(4).unwrap();
        for i in 0..4 {
            t.insert(Record::new(i, 1.0, vec![]), 1.0).unwrap();
        }
        assert_eq!(t.height(), 1);
        t.insert(Record::new(4, 1.0, vec![]), 1.0).unwrap();
        assert_eq!(t.height(), 2);
    }

    /// Three-level tree like the paper's sampling-index figure: descent for
    /// [11, 19) may start at the height-2 LCA instead of the root.
    #[test]
    fn lca_skip_on_three_level_tree() {
        let t = ABTree::build_bulk(uniform_records(27), 4).unwrap();
        assert_eq!(t.height(), 3);
        let mut counter = VisitCounter::default();
        let ctx = range_preprocess(&t, 6, 14, &mut counter).unwrap();
        assert_eq!(ctx.lca_height, 2);
        assert_eq!(ctx.w, 8.0);
        assert!(counter.preprocess_visits <= 2 * t.height() as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let before = counter.sample_visits;
            let s = sample_one(&t, &ctx, &mut rng, &mut counter);
            assert!(counter.sample_visits - before <= 2);
            assert!(s.drawn_from_height <= ctx.lca_height);
            assert!((6..14).contains(&s.record.key));
        }
    }

    #[test]
    fn full_range_has_root_lca() {
        let t = ABTree::build_bulk(uniform_records(200), 8).unwrap();
        let mut c = VisitCounter::default();
        let ctx = range_preprocess(&t, i64::MIN, i64::MAX, &mut c).unwrap();
        assert_eq!(ctx.lca_height, t.height());
        assert_eq!(ctx.w, t.total_weight());
    }

    #[test]
    fn empty_range_is_an_error() {
        let t = ABTree::build_bulk(uniform_records(10), 4).unwrap();
        let mut c = VisitCounter::default();
        assert!(matches!(range_preprocess(&t, 100, 200, &mut c), Err(Error::EmptyRange)));
        assert!(matches!(range_preprocess(&t, -5, 1, &mut c), Err(Error::EmptyRange)));
    }

    #[test]
    fn preprocess_matches_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..60 {
            let n = 1 + (rng.random::<u64>() % 300) as usize;
            let mut keys: Vec<i64> = (0..n).map(|_| (rng.random::<u64>() % 80) as i64).collect();
            keys.sort_unstable();
            let records: Vec<Record> =
                keys.iter().map(|&k| Record::new(k, k as f64, vec![])).collect();
            let t = ABTree::build_bulk(records.clone(), 4 + (trial % 5)).unwrap();
            for _ in 0..20 {
                let a = (rng.random::<u64>() % 90) as i64 - 5;
                let b = a + 1 + (rng.random::<u64>() % 40) as i64;
                let expect = records.iter().filter(|r| r.key >= a && r.key < b).count() as f64;
                let mut c = VisitCounter::default();
                match range_preprocess(&t, a, b, &mut c) {
                    Ok(ctx) => {
                        assert_eq!(ctx.w, expect, "range [{a},{b})");
                        // Decomposition completeness.
                        let total: f64 = ctx.units.iter().map(|u| u.weight()).sum();
                        assert_eq!(total, ctx.w);
                        assert_eq!(ctx.units.first().unwrap().key_range().0, a);
                        assert_eq!(ctx.units.last().unwrap().key_range().1, b);
                        for win in ctx.units.windows(2) {
                            assert_eq!(win[0].key_range().1, win[1].key_range().0);
                        }
                    }
                    Err(Error::EmptyRange) => assert_eq!(expect, 0.0, "range [{a},{b})"),
                    Err(e) => panic!("unexpected: {e}"),
                }
            }
        }
    }

    #[test]
    fn single_entry_range_probability_one() {
        let t = ABTree::build_bulk(uniform_records(100), 8).unwrap();
        let mut c = VisitCounter::default();
        let ctx = range_preprocess(&t, 42, 43, &mut c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let before = c.sample_visits;
        let s = sample_one(&t, &ctx, &mut rng, &mut c);
        assert_eq!(s.record.key, 42);
        assert_eq!(s.p, 1.0);
        assert!(c.sample_visits - before <= 1);
    }

    #[test]
    fn sampling_frequencies_match_weights() {
        // 10^5 draws over 200 uniform records; 5-sigma binomial band.
        let t = ABTree::build_bulk(uniform_records(200), 8).unwrap();
        let mut c = VisitCounter::default();
        let ctx = range_preprocess(&t, 1, 201, &mut c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 100_000usize;
        let mut counts = vec![0u64; 200];
        for _ in 0..draws {
            let s = sample_one(&t, &ctx, &mut rng, &mut c);
            counts[(s.record.key - 1) as usize] += 1;
        }
        let p = 1.0 / 200.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (i, &cnt) in counts.iter().enumerate() {
            let diff = (cnt as f64 - draws as f64 * p).abs();
            assert!(diff <= 5.0 * sigma, "entry {i}: count {cnt}");
        }
    }

    #[test]
    fn weighted_sampling_follows_weights() {
        let mut t = ABTree::new(4).unwrap();
        for (k, w) in [(1i64, 1.0), (2, 3.0), (3, 6.0)] {
            t.insert(Record::new(k, 0.0, vec![]), w).unwrap();
        }
        let mut c = VisitCounter::default();
        let ctx = range_preprocess(&t, 1, 4, &mut c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut hits = [0u64; 3];
        let draws = 60_000;
        for _ in 0..draws {
            let s = sample_one(&t, &ctx, &mut rng, &mut c);
            hits[(s.record.key - 1) as usize] += 1;
            assert_eq!(s.p, [1.0, 3.0, 6.0][(s.record.key - 1) as usize] / 10.0);
        }
        for (i, &expect) in [0.1, 0.3, 0.6].iter().enumerate() {
            let freq = hits[i] as f64 / draws as f64;
            assert!((freq - expect).abs() < 0.01, "key {}: {freq}", i + 1);
        }
    }

    #[test]
    fn child_subranges_partition_parent() {
        let t = ABTree::build_bulk(uniform_records(64 * 3), 4).unwrap();
        let mut c = VisitCounter::default();
        let ctx = range_preprocess(&t, 1, 64 * 3 + 1, &mut c).unwrap();
        let parent = ctx
            .units
            .iter()
            .find(|u| matches!(u, DecompUnit::Subtree { height, .. } if *height > 1))
            .expect("subtree unit");
        let kids = child_subranges(&t, parent).unwrap();
        let total: f64 = kids.iter().map(|k| k.weight()).sum();
        assert_eq!(total, parent.weight());
        assert_eq!(kids.first().unwrap().key_range().0, parent.key_range().0);
        assert_eq!(kids.last().unwrap().key_range().1, parent.key_range().1);
        for win in kids.windows(2) {
            assert_eq!(win[0].key_range().1, win[1].key_range().0);
        }
        for k in &kids {
            assert_eq!(k.height(), parent.height() - 1);
            // Min key per child matches a scan of that child's subtree.
            let (lo, hi) = k.key_range();
            let in_scan: Vec<i64> = t
                .scan()
                .iter()
                .map(|e| e.record.key)
                .filter(|&x| x >= lo && x < hi)
                .collect();
            assert_eq!(in_scan.len() as f64, k.weight());
        }
        let leaf_unit = ctx.units.iter().find(|u| u.is_leaf_run()).unwrap();
        assert!(matches!(child_subranges(&t, leaf_unit), Err(Error::LeafLevel)));
    }

    #[test]
    fn exact_leaf_run_matches_scan() {
        let records: Vec<Record> =
            (0..40).map(|i| Record::new(i, i as f64, vec![(i % 2) as f64])).collect();
        let t = ABTree::build_bulk(records.clone(), 8).unwrap();
        let mut c = VisitCounter::default();
        let ctx = range_preprocess(&t, 3, 30, &mut c).unwrap();
        let filter = Predicate::single(0, CmpOp::Eq, 1.0);
        let run = ctx.units.iter().find(|u| u.is_leaf_run()).unwrap();
        let (lo, hi) = run.key_range();
        let (sum, count) = exact_leaf_run_aggregate(&t, run, |r| r.value, &filter);
        let oracle: Vec<&Record> = records
            .iter()
            .filter(|r| r.key >= lo && r.key < hi && filter.pass(r))
            .collect();
        assert_eq!(count as usize, oracle.len());
        assert_eq!(sum, oracle.iter().map(|r| r.value).sum::<f64>());
        // Filter that rejects everything.
        let none = Predicate::single(0, CmpOp::Gt, 10.0);
        assert_eq!(exact_leaf_run_aggregate(&t, run, |r| r.value, &none), (0.0, 0));
    }
}
