//! Forest of quadtrees: Morton-ordered leaves, 2:1 balance, adaptation and
//! per-rank views with a ghost layer.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::error::MeshError;
use crate::fabric::Rank;

/// Maximum refinement depth. Anchors are stored at this depth.
pub const MAX_LEVEL: u8 = 30;

/// Edge length of a tree in integer units.
pub const TREE_SIZE: i64 = 1 << MAX_LEVEL;

/// A quadrant of the forest, identified by its tree, level and lower-left
/// anchor at depth [`MAX_LEVEL`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CellKey {
    pub tree: u32,
    pub level: u8,
    pub x: u32,
    pub y: u32,
}

impl CellKey {
    pub fn root(tree: u32) -> Self {
        CellKey { tree, level: 0, x: 0, y: 0 }
    }

    pub fn new(tree: u32, level: u8, x: u32, y: u32) -> Result<Self, MeshError> {
        if level > MAX_LEVEL {
            return Err(MeshError::DepthExceeded { level });
        }
        let key = CellKey { tree, level, x, y };
        let size = key.size() as u64;
        if !(x as u64).is_multiple_of(size)
            || !(y as u64).is_multiple_of(size)
            || x as i64 >= TREE_SIZE
            || y as i64 >= TREE_SIZE
        {
            return Err(MeshError::MisalignedAnchor { key });
        }
        Ok(key)
    }

    /// Edge length in integer units.
    pub fn size(&self) -> u32 {
        1u32 << (MAX_LEVEL - self.level)
    }

    pub fn morton(&self) -> u64 {
        morton_encode(self.x, self.y)
    }

    /// Children in Morton order: lower-left, lower-right, upper-left, upper-right.
    pub fn children(&self) -> Result<[CellKey; 4], MeshError> {
        if self.level >= MAX_LEVEL {
            return Err(MeshError::DepthExceeded { level: self.level + 1 });
        }
        let h = self.size() / 2;
        let level = self.level + 1;
        let c = |dx, dy| CellKey { tree: self.tree, level, x: self.x + dx, y: self.y + dy };
        Ok([c(0, 0), c(h, 0), c(0, h), c(h, h)])
    }

    pub fn parent(&self) -> Option<CellKey> {
        (self.level > 0).then(|| self.ancestor(self.level - 1))
    }

    pub fn ancestor(&self, level: u8) -> CellKey {
        debug_assert!(level <= self.level);
        let mask = !((1u32 << (MAX_LEVEL - level)) - 1);
        CellKey { tree: self.tree, level, x: self.x & mask, y: self.y & mask }
    }

    /// Position among its siblings, 0..4 in Morton order.
    pub fn child_id(&self) -> usize {
        if self.level == 0 {
            return 0;
        }
        let h = self.size();
        (((self.x / h) & 1) | (((self.y / h) & 1) << 1)) as usize
    }

    pub fn contains_pixel(&self, x: u32, y: u32) -> bool {
        let s = self.size() as u64;
        (x as u64) >= self.x as u64
            && (x as u64) < self.x as u64 + s
            && (y as u64) >= self.y as u64
            && (y as u64) < self.y as u64 + s
    }
}

impl Ord for CellKey {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.tree, self.morton(), self.level).cmp(&(other.tree, other.morton(), other.level))
    }
}

impl PartialOrd for CellKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn spread_bits(v: u32) -> u64 {
    let mut x = v as u64;
    x = (x | (x << 16)) & 0x0000_FFFF_0000_FFFF;
    x = (x | (x << 8)) & 0x00FF_00FF_00FF_00FF;
    x = (x | (x << 4)) & 0x0F0F_0F0F_0F0F_0F0F;
    x = (x | (x << 2)) & 0x3333_3333_3333_3333;
    x = (x | (x << 1)) & 0x5555_5555_5555_5555;
    x
}

/// Interleaves `x` into the even bits and `y` into the odd bits.
pub fn morton_encode(x: u32, y: u32) -> u64 {
    spread_bits(x) | (spread_bits(y) << 1)
}

/// A point in global integer coordinates (tree origins are multiples of
/// [`TREE_SIZE`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub fn new(x: i64, y: i64) -> Self {
        Point { x, y }
    }

    /// Physical coordinates, one tree = unit square.
    pub fn to_f64(self) -> (f64, f64) {
        (self.x as f64 / TREE_SIZE as f64, self.y as f64 / TREE_SIZE as f64)
    }
}

/// Geometric entity of a cell that can carry degrees of freedom.
///
/// Edge endpoints are stored sorted, which fixes the canonical orientation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityKey {
    Vertex(Point),
    Edge(Point, Point),
    Interior(CellKey),
}

impl EntityKey {
    pub fn edge(a: Point, b: Point) -> Self {
        if a <= b {
            EntityKey::Edge(a, b)
        } else {
            EntityKey::Edge(b, a)
        }
    }
}

/// Local vertex numbering: 0 lower-left, 1 lower-right, 2 upper-left, 3 upper-right.
/// Local lines: 0 left (v0-v2), 1 right (v1-v3), 2 bottom (v0-v1), 3 top (v2-v3).
pub const LINE_VERTICES: [[usize; 2]; 4] = [[0, 2], [1, 3], [0, 1], [2, 3]];

/// The nine entities of a quadrilateral cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellEntities {
    pub vertices: [Point; 4],
    pub edges: [EntityKey; 4],
    /// Whether local line `i` runs against the canonical edge orientation.
    pub flipped: [bool; 4],
    pub interior: EntityKey,
}

/// Inter-tree geometry: every tree is a unit square placed at an integer
/// offset, all with the same orientation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Connectivity {
    origins: Vec<(i64, i64)>,
    lookup: HashMap<(i64, i64), u32>,
}

impl Connectivity {
    pub fn new(origins: Vec<(i64, i64)>) -> Result<Self, MeshError> {
        let mut lookup = HashMap::new();
        for (t, &o) in origins.iter().enumerate() {
            if lookup.insert(o, t as u32).is_some() {
                return Err(MeshError::OverlappingTrees { origin: o });
            }
        }
        Ok(Connectivity { origins, lookup })
    }

    pub fn unit_square() -> Self {
        Self::new(vec![(0, 0)]).unwrap()
    }

    /// `(-1,1)^2` minus the lower-right quadrant, with the reentrant corner at
    /// the origin. Trees: lower-left, upper-left, upper-right.
    pub fn l_shape() -> Self {
        Self::new(vec![(-1, -1), (-1, 0), (0, 0)]).unwrap()
    }

    /// `nx` by `ny` unit trees, numbered row by row.
    pub fn brick(nx: usize, ny: usize) -> Self {
        let mut origins = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                origins.push((i as i64, j as i64));
            }
        }
        Self::new(origins).unwrap()
    }

    pub fn tree_count(&self) -> usize {
        self.origins.len()
    }

    pub fn tree_origin(&self, tree: u32) -> Point {
        let (ox, oy) = self.origins[tree as usize];
        Point::new(ox * TREE_SIZE, oy * TREE_SIZE)
    }

    /// Area of the domain in units of the finest pixel.
    pub fn area_pixels(&self) -> u128 {
        self.origins.len() as u128 * (TREE_SIZE as u128) * (TREE_SIZE as u128)
    }

    /// Maps a global pixel to `(tree, local x, local y)`.
    pub fn locate(&self, gx: i64, gy: i64) -> Option<(u32, u32, u32)> {
        let tx = gx.div_euclid(TREE_SIZE);
        let ty = gy.div_euclid(TREE_SIZE);
        let tree = *self.lookup.get(&(tx, ty))?;
        Some((tree, gx.rem_euclid(TREE_SIZE) as u32, gy.rem_euclid(TREE_SIZE) as u32))
    }

    pub fn global_anchor(&self, key: &CellKey) -> Point {
        let o = self.tree_origin(key.tree);
        Point::new(o.x + key.x as i64, o.y + key.y as i64)
    }

    pub fn entities_of(&self, key: &CellKey) -> CellEntities {
        let a = self.global_anchor(key);
        let s = key.size() as i64;
        let vertices = [a, Point::new(a.x + s, a.y), Point::new(a.x, a.y + s), Point::new(a.x + s, a.y + s)];
        let mut edges = [EntityKey::Interior(*key); 4];
        let mut flipped = [false; 4];
        for (l, [va, vb]) in LINE_VERTICES.iter().enumerate() {
            let (pa, pb) = (vertices[*va], vertices[*vb]);
            edges[l] = EntityKey::edge(pa, pb);
            flipped[l] = pa > pb;
        }
        CellEntities { vertices, edges, flipped, interior: EntityKey::Interior(*key) }
    }
}

/// Adaptation request for one leaf.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AdaptFlag {
    #[default]
    Keep,
    Refine,
    Coarsen,
}

/// How a face neighbor relates to the cell it was seen from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceRelation {
    Same,
    /// Neighbor is one level coarser; the shared edge is hanging on this side.
    Coarser,
    /// Neighbor is one level finer; two such neighbors share the face.
    Finer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FaceNeighbor {
    /// Local line of the cell (0 left, 1 right, 2 bottom, 3 top).
    pub face: u8,
    pub cell: CellKey,
    pub relation: FaceRelation,
}

/// Leaves of a forest of quadtrees in Morton order.
#[derive(Clone, Debug)]
pub struct Forest {
    connectivity: Connectivity,
    leaves: Vec<CellKey>,
}

impl Forest {
    /// Every tree refined uniformly to `level`.
    pub fn uniform(connectivity: Connectivity, level: u8) -> Result<Self, MeshError> {
        if level > MAX_LEVEL {
            return Err(MeshError::DepthExceeded { level });
        }
        let mut leaves: Vec<CellKey> = (0..connectivity.tree_count() as u32).map(CellKey::root).collect();
        for _ in 0..level {
            let mut next = Vec::with_capacity(leaves.len() * 4);
            for leaf in &leaves {
                next.extend(leaf.children()?);
            }
            leaves = next;
        }
        leaves.sort();
        Ok(Forest { connectivity, leaves })
    }

    /// Builds a forest from an arbitrary leaf set, checking that the leaves
    /// tile every tree exactly once.
    pub fn from_leaves(connectivity: Connectivity, mut leaves: Vec<CellKey>) -> Result<Self, MeshError> {
        leaves.sort();
        let mut area = vec![0u128; connectivity.tree_count()];
        for w in leaves.windows(2) {
            if w[0].tree == w[1].tree {
                let end = w[0].morton() as u128 + (w[0].size() as u128).pow(2);
                if end > w[1].morton() as u128 {
                    return Err(MeshError::OverlappingLeaves { a: w[0], b: w[1] });
                }
            }
        }
        for leaf in &leaves {
            let t = leaf.tree as usize;
            if t >= area.len() {
                return Err(MeshError::UnknownTree { tree: leaf.tree });
            }
            CellKey::new(leaf.tree, leaf.level, leaf.x, leaf.y)?;
            area[t] += (leaf.size() as u128).pow(2);
        }
        let full = (TREE_SIZE as u128).pow(2);
        if let Some(t) = area.iter().position(|&a| a != full) {
            return Err(MeshError::IncompleteCover { tree: t as u32 });
        }
        Ok(Forest { connectivity, leaves })
    }

    pub fn connectivity(&self) -> &Connectivity {
        &self.connectivity
    }

    pub fn leaves(&self) -> &[CellKey] {
        &self.leaves
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn position(&self, key: &CellKey) -> Option<usize> {
        self.leaves.binary_search(key).ok()
    }

    pub fn max_level(&self) -> u8 {
        self.leaves.iter().map(|c| c.level).max().unwrap_or(0)
    }

    pub fn entities_of(&self, key: &CellKey) -> CellEntities {
        self.connectivity.entities_of(key)
    }

    /// The leaf covering the given global pixel, if inside the domain.
    pub fn leaf_at(&self, gx: i64, gy: i64) -> Option<CellKey> {
        let (tree, x, y) = self.connectivity.locate(gx, gy)?;
        leaf_containing(&self.leaves, tree, x, y)
    }

    /// Edge neighbors of a leaf. Assumes 2:1 balance across edges.
    pub fn face_neighbors(&self, key: &CellKey) -> Vec<FaceNeighbor> {
        let mut out = Vec::with_capacity(8);
        let a = self.connectivity.global_anchor(key);
        let s = key.size() as i64;
        for face in 0..4u8 {
            let probes = face_probes(a, s, face);
            let mut found: Vec<CellKey> = Vec::with_capacity(2);
            for (px, py) in probes {
                if let Some(n) = self.leaf_at(px, py) {
                    if !found.contains(&n) {
                        found.push(n);
                    }
                }
            }
            for n in found {
                let relation = match n.level.cmp(&key.level) {
                    Ordering::Equal => FaceRelation::Same,
                    Ordering::Less => FaceRelation::Coarser,
                    Ordering::Greater => FaceRelation::Finer,
                };
                out.push(FaceNeighbor { face, cell: n, relation });
            }
        }
        out
    }

    /// Leaves touching the cell only through one of its corners.
    pub fn corner_neighbors(&self, key: &CellKey) -> Vec<CellKey> {
        let a = self.connectivity.global_anchor(key);
        let s = key.size() as i64;
        let faces: Vec<CellKey> = self.face_neighbors(key).into_iter().map(|f| f.cell).collect();
        let mut out = Vec::with_capacity(4);
        for (px, py) in [(a.x - 1, a.y - 1), (a.x + s, a.y - 1), (a.x - 1, a.y + s), (a.x + s, a.y + s)] {
            if let Some(n) = self.leaf_at(px, py) {
                if !faces.contains(&n) && !out.contains(&n) {
                    out.push(n);
                }
            }
        }
        out
    }

    /// All leaves sharing at least a point with `key`, in Morton order.
    pub fn adjacent(&self, key: &CellKey) -> Vec<CellKey> {
        let mut all: Vec<CellKey> = self.face_neighbors(key).into_iter().map(|f| f.cell).collect();
        all.extend(self.corner_neighbors(key));
        all.sort();
        all.dedup();
        all
    }

    /// Pairs of edge-adjacent leaves whose levels differ by more than one.
    pub fn balance_violations(&self) -> Vec<(CellKey, CellKey)> {
        let mut out = Vec::new();
        for leaf in &self.leaves {
            let a = self.connectivity.global_anchor(leaf);
            let s = leaf.size() as i64;
            for face in 0..4u8 {
                // Any coarser neighbor covers the whole edge, so one probe finds it.
                let (px, py) = face_probes(a, s, face)[0];
                if let Some(n) = self.leaf_at(px, py) {
                    if n.level + 1 < leaf.level {
                        out.push((n, *leaf));
                    }
                }
            }
        }
        out
    }

    pub fn is_balanced(&self) -> bool {
        self.balance_violations().is_empty()
    }

    /// Refines and coarsens according to per-leaf flags, then restores 2:1
    /// balance. Balance forces refinement and suppresses coarsening, never the
    /// other way round.
    pub fn refine_and_coarsen(&self, flags: &[AdaptFlag]) -> Result<Forest, MeshError> {
        if flags.len() != self.leaves.len() {
            return Err(MeshError::FlagCount { expected: self.leaves.len(), got: flags.len() });
        }
        let mut coarsen_marked: BTreeSet<CellKey> = BTreeSet::new();
        let mut leaves = Vec::with_capacity(self.leaves.len());
        for (leaf, flag) in self.leaves.iter().zip(flags) {
            match flag {
                AdaptFlag::Refine => leaves.extend(leaf.children()?),
                AdaptFlag::Coarsen => {
                    coarsen_marked.insert(*leaf);
                    leaves.push(*leaf);
                }
                AdaptFlag::Keep => leaves.push(*leaf),
            }
        }
        leaves.sort();
        let mut forest = Forest { connectivity: self.connectivity.clone(), leaves };
        forest.balance()?;

        // Sibling groups whose four members are still leaves and all flagged.
        let mut groups: BTreeMap<CellKey, Vec<CellKey>> = BTreeMap::new();
        for leaf in &coarsen_marked {
            if let Some(parent) = leaf.parent() {
                groups.entry(parent).or_default().push(*leaf);
            }
        }
        let mut accepted = Vec::new();
        for (parent, kids) in &groups {
            if kids.len() != 4 || kids.iter().any(|k| forest.position(k).is_none()) {
                continue;
            }
            if forest.coarsening_keeps_balance(parent)? {
                accepted.push(*parent);
            }
        }
        if !accepted.is_empty() {
            let accepted_set: BTreeSet<CellKey> = accepted.iter().copied().collect();
            let mut leaves: Vec<CellKey> = forest
                .leaves
                .iter()
                .filter(|l| l.parent().is_none_or(|p| !accepted_set.contains(&p)))
                .copied()
                .collect();
            leaves.extend(accepted);
            leaves.sort();
            forest.leaves = leaves;
        }
        debug_assert!(forest.is_balanced());
        Ok(forest)
    }

    /// Refines coarse leaves until every edge neighbor pair differs by at most
    /// one level. Idempotent on a balanced forest.
    pub fn balance(&mut self) -> Result<(), MeshError> {
        loop {
            let to_refine: BTreeSet<CellKey> =
                self.balance_violations().into_iter().map(|(coarse, _)| coarse).collect();
            if to_refine.is_empty() {
                return Ok(());
            }
            let mut leaves = Vec::with_capacity(self.leaves.len() + 3 * to_refine.len());
            for leaf in &self.leaves {
                if to_refine.contains(leaf) {
                    leaves.extend(leaf.children()?);
                } else {
                    leaves.push(*leaf);
                }
            }
            leaves.sort();
            self.leaves = leaves;
        }
    }

    fn coarsening_keeps_balance(&self, parent: &CellKey) -> Result<bool, MeshError> {
        let child_level = parent.level + 1;
        for child in parent.children()? {
            let a = self.connectivity.global_anchor(&child);
            let s = child.size() as i64;
            let id = child.child_id();
            // Outer faces of child `id`: left/right by x bit, bottom/top by y bit.
            let outer = [if id & 1 == 0 { 0u8 } else { 1 }, if id & 2 == 0 { 2u8 } else { 3 }];
            for face in outer {
                for (px, py) in face_probes(a, s, face) {
                    if let Some(n) = self.leaf_at(px, py) {
                        if n.level > child_level {
                            return Ok(false);
                        }
                    }
                }
            }
        }
        Ok(true)
    }

    /// Partitions-aware local view for rank `p`. `owner_of` is aligned with
    /// [`Forest::leaves`].
    pub fn build_local_view(&self, owner_of: &[Rank], p: Rank) -> LocalView {
        assert_eq!(owner_of.len(), self.leaves.len(), "owner map must cover every leaf");
        let mut cells: BTreeMap<CellKey, Rank> = BTreeMap::new();
        let mut adjacency = Vec::new();
        for (i, leaf) in self.leaves.iter().enumerate() {
            if owner_of[i] != p {
                continue;
            }
            cells.insert(*leaf, p);
            let faces = self.face_neighbors(leaf);
            let corners = self.corner_neighbors(leaf);
            for n in faces.iter().map(|f| &f.cell).chain(corners.iter()) {
                let q = owner_of[self.position(n).expect("neighbor is a leaf")];
                cells.insert(*n, q);
            }
            adjacency.push((*leaf, faces, corners));
        }
        LocalView::assemble(p, self.connectivity.clone(), cells, adjacency)
    }

    /// One line per leaf: `tree level anchor_x anchor_y degree owner_rank`.
    pub fn dump(&self, degrees: &[u32], owners: &[Rank]) -> String {
        let mut s = String::new();
        for (i, leaf) in self.leaves.iter().enumerate() {
            let _ = writeln!(s, "{} {} {} {} {} {}", leaf.tree, leaf.level, leaf.x, leaf.y, degrees[i], owners[i]);
        }
        s
    }
}

/// Probe pixels just outside a face, at the quarter points of the edge so
/// that both halves of a finer neighbor pair are hit.
fn face_probes(a: Point, s: i64, face: u8) -> [(i64, i64); 2] {
    let (q1, q3) = (s / 4, (3 * s) / 4);
    match face {
        0 => [(a.x - 1, a.y + q1), (a.x - 1, a.y + q3)],
        1 => [(a.x + s, a.y + q1), (a.x + s, a.y + q3)],
        2 => [(a.x + q1, a.y - 1), (a.x + q3, a.y - 1)],
        _ => [(a.x + q1, a.y + s), (a.x + q3, a.y + s)],
    }
}

fn leaf_containing(leaves: &[CellKey], tree: u32, x: u32, y: u32) -> Option<CellKey> {
    let m = morton_encode(x, y);
    let idx = leaves.partition_point(|c| (c.tree, c.morton()) <= (tree, m));
    let cand = leaves.get(idx.checked_sub(1)?)?;
    (cand.tree == tree && cand.contains_pixel(x, y)).then_some(*cand)
}

/// Locally owned cells of one rank plus the ghost layer around them.
#[derive(Clone, Debug)]
pub struct LocalView {
    rank: Rank,
    connectivity: Connectivity,
    cells: Vec<CellKey>,
    owners: Vec<Rank>,
    lookup: HashMap<CellKey, usize>,
    owned: Vec<usize>,
    ghosts: Vec<usize>,
    faces: HashMap<usize, Vec<FaceNeighbor>>,
    corners: HashMap<usize, Vec<CellKey>>,
}

impl LocalView {
    fn assemble(
        rank: Rank,
        connectivity: Connectivity,
        cells: BTreeMap<CellKey, Rank>,
        adjacency: Vec<(CellKey, Vec<FaceNeighbor>, Vec<CellKey>)>,
    ) -> Self {
        let (cells, owners): (Vec<CellKey>, Vec<Rank>) = cells.into_iter().unzip();
        let lookup: HashMap<CellKey, usize> = cells.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let owned: Vec<usize> = (0..cells.len()).filter(|&i| owners[i] == rank).collect();
        let ghosts: Vec<usize> = (0..cells.len()).filter(|&i| owners[i] != rank).collect();
        let mut faces = HashMap::new();
        let mut corners = HashMap::new();
        for (key, f, c) in adjacency {
            let i = lookup[&key];
            faces.insert(i, f);
            corners.insert(i, c);
        }
        LocalView { rank, connectivity, cells, owners, lookup, owned, ghosts, faces, corners }
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn connectivity(&self) -> &Connectivity {
        &self.connectivity
    }

    /// Locally relevant cells (owned and ghost) in Morton order.
    pub fn cells(&self) -> &[CellKey] {
        &self.cells
    }

    pub fn cell(&self, i: usize) -> &CellKey {
        &self.cells[i]
    }

    pub fn owner(&self, i: usize) -> Rank {
        self.owners[i]
    }

    pub fn index_of(&self, key: &CellKey) -> Option<usize> {
        self.lookup.get(key).copied()
    }

    pub fn is_owned(&self, i: usize) -> bool {
        self.owners[i] == self.rank
    }

    /// Indices of owned cells, Morton order.
    pub fn owned(&self) -> &[usize] {
        &self.owned
    }

    /// Indices of ghost cells, Morton order.
    pub fn ghosts(&self) -> &[usize] {
        &self.ghosts
    }

    pub fn owned_keys(&self) -> impl Iterator<Item = &CellKey> + '_ {
        self.owned.iter().map(move |&i| &self.cells[i])
    }

    pub fn ghost_keys(&self) -> impl Iterator<Item = (&CellKey, Rank)> + '_ {
        self.ghosts.iter().map(move |&i| (&self.cells[i], self.owners[i]))
    }

    /// Edge neighbors of an owned cell.
    pub fn face_neighbors(&self, i: usize) -> &[FaceNeighbor] {
        self.faces.get(&i).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Corner-only neighbors of an owned cell.
    pub fn corner_neighbors(&self, i: usize) -> &[CellKey] {
        self.corners.get(&i).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Ranks other than this one that hold owned cell `i` as a ghost.
    pub fn ghost_on(&self, i: usize) -> BTreeSet<Rank> {
        self.face_neighbors(i)
            .iter()
            .map(|f| &f.cell)
            .chain(self.corner_neighbors(i))
            .map(|k| self.owners[self.lookup[k]])
            .filter(|&q| q != self.rank)
            .collect()
    }

    /// Ranks owning at least one ghost cell.
    pub fn neighbor_ranks(&self) -> BTreeSet<Rank> {
        self.ghosts.iter().map(|&i| self.owners[i]).collect()
    }

    pub fn entities_of(&self, i: usize) -> CellEntities {
        self.connectivity.entities_of(&self.cells[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_adjacent(forest: &Forest, a: &CellKey, b: &CellKey) -> bool {
        let c = forest.connectivity();
        let (pa, pb) = (c.global_anchor(a), c.global_anchor(b));
        let (sa, sb) = (a.size() as i64, b.size() as i64);
        a != b && pa.x <= pb.x + sb && pb.x <= pa.x + sa && pa.y <= pb.y + sb && pb.y <= pa.y + sa
    }

    #[test]
    fn morton_orders_children() {
        let kids = CellKey::root(0).children().unwrap();
        let mut sorted = kids;
        sorted.sort();
        assert_eq!(kids, sorted);
        assert_eq!(kids.iter().map(|k| k.child_id()).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(morton_encode(1, 0), 1);
        assert_eq!(morton_encode(0, 1), 2);
        assert_eq!(morton_encode(3, 3), 15);
    }

    #[test]
    fn misaligned_anchor_rejected() {
        assert!(CellKey::new(0, 1, 1, 0).is_err());
        assert!(CellKey::new(0, 31, 0, 0).is_err());
        assert!(CellKey::new(0, 1, 1 << 29, 0).is_ok());
    }

    #[test]
    fn refine_single_root() {
        let f = Forest::uniform(Connectivity::unit_square(), 0).unwrap();
        let g = f.refine_and_coarsen(&[AdaptFlag::Refine]).unwrap();
        assert_eq!(g.len(), 4);
        assert!(g.leaves().iter().all(|c| c.level == 1));
    }

    #[test]
    fn coarsen_full_sibling_group() {
        let f = Forest::uniform(Connectivity::unit_square(), 1).unwrap();
        let g = f.refine_and_coarsen(&[AdaptFlag::Coarsen; 4]).unwrap();
        assert_eq!(g.leaves(), &[CellKey::root(0)]);
        // Three of four is not enough.
        let mut flags = [AdaptFlag::Coarsen; 4];
        flags[2] = AdaptFlag::Keep;
        assert_eq!(f.refine_and_coarsen(&flags).unwrap().len(), 4);
    }

    #[test]
    fn depth_exceeded() {
        let f = Forest::from_leaves(
            Connectivity::unit_square(),
            (0..4u32).map(|i| CellKey { tree: 0, level: 1, x: (i & 1) << 29, y: (i >> 1) << 29 }).collect(),
        )
        .unwrap();
        assert!(f.refine_and_coarsen(&[AdaptFlag::Refine; 4]).is_ok());
        let deep = CellKey { tree: 0, level: MAX_LEVEL, x: 0, y: 0 };
        assert!(matches!(deep.children(), Err(MeshError::DepthExceeded { .. })));
    }

    #[test]
    fn double_refinement_forces_balance() {
        // Refine the lower-left child twice; the cells across its edges must follow.
        let f = Forest::uniform(Connectivity::unit_square(), 1).unwrap();
        let mut flags = vec![AdaptFlag::Keep; 4];
        flags[0] = AdaptFlag::Refine;
        let g = f.refine_and_coarsen(&flags).unwrap();
        let mut flags = vec![AdaptFlag::Keep; g.len()];
        let target = g.leaves().iter().position(|c| c.level == 2 && c.child_id() == 3).unwrap();
        flags[target] = AdaptFlag::Refine;
        let h = g.refine_and_coarsen(&flags).unwrap();
        assert!(h.leaves().iter().any(|c| c.level == 3));
        // Brute force: every pair of leaves sharing an edge segment differs by <= 1.
        let leaves = h.leaves();
        for a in leaves {
            for b in leaves {
                if shares_edge(&h, a, b) {
                    assert!((a.level as i32 - b.level as i32).abs() <= 1, "{a:?} vs {b:?}");
                }
            }
        }
        assert!(h.leaves().iter().all(|c| c.level >= 1));
        // Cover.
        let area: u128 = h.leaves().iter().map(|c| (c.size() as u128).pow(2)).sum();
        assert_eq!(area, h.connectivity().area_pixels());
    }

    fn shares_edge(forest: &Forest, a: &CellKey, b: &CellKey) -> bool {
        let c = forest.connectivity();
        let (pa, pb) = (c.global_anchor(a), c.global_anchor(b));
        let (sa, sb) = (a.size() as i64, b.size() as i64);
        let ox = (pa.x + sa).min(pb.x + sb) - pa.x.max(pb.x);
        let oy = (pa.y + sa).min(pb.y + sb) - pa.y.max(pb.y);
        a != b && ((ox == 0 && oy > 0) || (oy == 0 && ox > 0))
    }

    #[test]
    fn coarsening_suppressed_by_balance() {
        // Refine one grandchild, then try to coarsen the sibling group next to it.
        let f = Forest::uniform(Connectivity::unit_square(), 2).unwrap();
        let mut flags = vec![AdaptFlag::Keep; f.len()];
        // Upper-right cell of the lower-left quadrant.
        let hot = f.leaves().iter().position(|c| c.x == 1 << 28 && c.y == 1 << 28).unwrap();
        flags[hot] = AdaptFlag::Refine;
        let g = f.refine_and_coarsen(&flags).unwrap();
        // Lower-right quadrant (level 2 cells) flagged coarsen: its parent would be
        // level 1 next to level 3 cells, which balance forbids.
        let flags: Vec<AdaptFlag> = g
            .leaves()
            .iter()
            .map(|c| if c.level == 2 && c.x >= 1 << 29 && c.y < 1 << 29 { AdaptFlag::Coarsen } else { AdaptFlag::Keep })
            .collect();
        let h = g.refine_and_coarsen(&flags).unwrap();
        assert_eq!(h.len(), g.len());
        assert!(h.is_balanced());
    }

    #[test]
    fn balance_is_idempotent() {
        let mut f = Forest::uniform(Connectivity::l_shape(), 2).unwrap();
        let before = f.leaves().to_vec();
        f.balance().unwrap();
        assert_eq!(before, f.leaves());
    }

    #[test]
    fn entities_of_root() {
        let c = Connectivity::unit_square();
        let e = c.entities_of(&CellKey::root(0));
        let s = TREE_SIZE;
        assert_eq!(e.vertices, [Point::new(0, 0), Point::new(s, 0), Point::new(0, s), Point::new(s, s)]);
        assert_eq!(e.edges[0], EntityKey::Edge(Point::new(0, 0), Point::new(0, s)));
        assert_eq!(e.edges[3], EntityKey::Edge(Point::new(0, s), Point::new(s, s)));
        assert_eq!(e.flipped, [false; 4]);
    }

    #[test]
    fn shared_edge_keys_agree() {
        let f = Forest::uniform(Connectivity::unit_square(), 1).unwrap();
        let (a, b) = (f.leaves()[0], f.leaves()[1]);
        assert_eq!(f.entities_of(&a).edges[1], f.entities_of(&b).edges[0]);
        // Across trees as well.
        let brick = Connectivity::brick(2, 1);
        assert_eq!(brick.entities_of(&CellKey::root(0)).edges[1], brick.entities_of(&CellKey::root(1)).edges[0]);
    }

    #[test]
    fn hanging_entities() {
        // Coarse root of tree 0 next to the refined root of tree 1.
        let f = Forest::from_leaves(
            Connectivity::brick(2, 1),
            std::iter::once(CellKey::root(0)).chain(CellKey::root(1).children().unwrap()).collect(),
        )
        .unwrap();
        let coarse = f.entities_of(&CellKey::root(0));
        let fine: Vec<CellEntities> = f.leaves()[1..].iter().map(|c| f.entities_of(c)).collect();
        let coarse_edge = coarse.edges[1];
        let fine_edges = [fine[0].edges[0], fine[2].edges[0]];
        assert_ne!(fine_edges[0], fine_edges[1]);
        assert!(!fine_edges.contains(&coarse_edge));
        let mid = Point::new(TREE_SIZE, TREE_SIZE / 2);
        assert!(!coarse.vertices.contains(&mid));
        assert!(fine[0].vertices.contains(&mid) && fine[2].vertices.contains(&mid));
        let nbrs = f.face_neighbors(&CellKey::root(0));
        assert_eq!(nbrs.iter().filter(|n| n.relation == FaceRelation::Finer).count(), 2);
    }

    #[test]
    fn single_rank_view_has_no_ghosts() {
        let f = Forest::uniform(Connectivity::l_shape(), 2).unwrap();
        let v = f.build_local_view(&vec![0; f.len()], 0);
        assert!(v.ghosts().is_empty());
        assert_eq!(v.owned().len(), f.len());
    }

    #[test]
    fn four_cell_view_ghosts() {
        let f = Forest::uniform(Connectivity::unit_square(), 1).unwrap();
        let v = f.build_local_view(&[0, 0, 1, 1], 0);
        let ghosts: Vec<(CellKey, Rank)> = v.ghost_keys().map(|(k, q)| (*k, q)).collect();
        assert_eq!(ghosts, vec![(f.leaves()[2], 1), (f.leaves()[3], 1)]);
    }

    #[test]
    fn striped_grid_ghosts_match_brute_force() {
        let f = Forest::uniform(Connectivity::unit_square(), 2).unwrap();
        // Stripes of 4 cells by row.
        let owners: Vec<Rank> = f.leaves().iter().map(|c| (c.y >> 28) as Rank).collect();
        for p in 0..4 {
            let v = f.build_local_view(&owners, p);
            let expected: BTreeSet<CellKey> = f
                .leaves()
                .iter()
                .enumerate()
                .filter(|(j, b)| {
                    owners[*j] != p
                        && f.leaves().iter().enumerate().any(|(i, a)| owners[i] == p && brute_adjacent(&f, a, b))
                })
                .map(|(_, b)| *b)
                .collect();
            let got: BTreeSet<CellKey> = v.ghost_keys().map(|(k, _)| *k).collect();
            assert_eq!(got, expected, "rank {p}");
            if p == 1 || p == 2 {
                assert_eq!(got.len(), 8);
            }
        }
    }

    #[test]
    fn dump_format() {
        let f = Forest::uniform(Connectivity::unit_square(), 1).unwrap();
        let d = f.dump(&[2, 4, 4, 2], &[0, 0, 1, 1]);
        let lines: Vec<&str> = d.lines().collect();
        assert_eq!(lines[0], "0 1 0 0 2 0");
        assert_eq!(lines[3], format!("0 1 {h} {h} 2 1", h = 1u32 << 29));
    }
}
