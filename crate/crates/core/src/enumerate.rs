//! Parallel enumeration of degrees of freedom on hp meshes.
//!
//! All ranks are driven in lock step: each stage runs over every rank's
//! [`LocalView`] before the fabric delivers the messages of that stage.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use crate::element::{ElementCollection, EntityKind, FeIndex};
use crate::error::EnumerationError;
use crate::fabric::{Communicator, Rank};
use crate::forest::{CellKey, EntityKey, LocalView};
use crate::wire::{decode_cell_lists, encode_cell_lists, put_key, put_u32, Reader};

/// Placeholder for an index that is not (yet) known on this rank.
pub const INVALID: u64 = u64::MAX;

/// Active FE index per cell.
pub type ActiveFeMap = BTreeMap<CellKey, FeIndex>;

const STAGE_ACTIVE: &str = "active-fe-exchange";
const STAGE_GHOST_FIRST: &str = "ghost-exchange-1";
const STAGE_GHOST_SECOND: &str = "ghost-exchange-2";

#[derive(Clone, Debug)]
struct EntityRecord {
    key: EntityKey,
    kind: EntityKind,
    /// Local cells adjacent to the entity.
    cells: Vec<usize>,
    /// One index array per adjacent active FE index, sorted by FE index.
    slots: Vec<(FeIndex, Vec<u64>)>,
}

impl EntityRecord {
    fn slot(&self, fe: FeIndex) -> &[u64] {
        &self.slots.iter().find(|(f, _)| *f == fe).expect("slot allocated for adjacent FE").1
    }

    fn slot_mut(&mut self, fe: FeIndex) -> &mut Vec<u64> {
        &mut self.slots.iter_mut().find(|(f, _)| *f == fe).expect("slot allocated for adjacent FE").1
    }
}

/// Per-entity storage of DoF indices for the locally relevant cells of one
/// rank. Entities touched by cells of several FE indices keep one index
/// array per FE index.
#[derive(Clone, Debug)]
pub struct EntityDofStore {
    entities: Vec<EntityRecord>,
    lookup: HashMap<EntityKey, usize>,
    /// Per local cell: vertices 0..4, lines 0..4, interior.
    cell_entities: Vec<[usize; 9]>,
    flipped: Vec<[bool; 4]>,
    active: Vec<FeIndex>,
}

impl EntityDofStore {
    fn allocate(
        view: &LocalView,
        active: Vec<FeIndex>,
        collection: &ElementCollection,
    ) -> Result<Self, EnumerationError> {
        let mut store = EntityDofStore {
            entities: Vec::new(),
            lookup: HashMap::new(),
            cell_entities: Vec::with_capacity(view.cells().len()),
            flipped: Vec::with_capacity(view.cells().len()),
            active,
        };
        for i in 0..view.cells().len() {
            let fe = store.active[i];
            let element = collection.get(fe)?;
            let ent = view.entities_of(i);
            let mut ids = [0usize; 9];
            let keyed = ent
                .vertices
                .iter()
                .map(|v| (EntityKey::Vertex(*v), EntityKind::Vertex))
                .chain(ent.edges.iter().map(|e| (*e, EntityKind::Edge)))
                .chain(std::iter::once((ent.interior, EntityKind::Interior)));
            for (slot, (key, kind)) in keyed.enumerate() {
                let id = *store.lookup.entry(key).or_insert_with(|| {
                    store.entities.push(EntityRecord { key, kind, cells: Vec::new(), slots: Vec::new() });
                    store.entities.len() - 1
                });
                let rec = &mut store.entities[id];
                rec.cells.push(i);
                if let Err(pos) = rec.slots.binary_search_by_key(&fe, |(f, _)| *f) {
                    rec.slots.insert(pos, (fe, vec![INVALID; element.dofs_per_entity(kind)]));
                }
                ids[slot] = id;
            }
            store.cell_entities.push(ids);
            store.flipped.push(ent.flipped);
        }
        Ok(store)
    }

    /// Active FE index of local cell `i`.
    pub fn active_fe(&self, i: usize) -> FeIndex {
        self.active[i]
    }

    /// Index array of `fe` on `key`, if the entity is locally relevant and
    /// touched by a cell with that FE index.
    pub fn get(&self, key: &EntityKey, fe: FeIndex) -> Option<&[u64]> {
        let rec = &self.entities[*self.lookup.get(key)?];
        rec.slots.iter().find(|(f, _)| *f == fe).map(|(_, v)| v.as_slice())
    }

    /// FE indices stored on an entity.
    pub fn fe_indices(&self, key: &EntityKey) -> Vec<FeIndex> {
        self.lookup.get(key).map(|&id| self.entities[id].slots.iter().map(|(f, _)| *f).collect()).unwrap_or_default()
    }

    pub fn entity_keys(&self) -> impl Iterator<Item = &EntityKey> + '_ {
        self.entities.iter().map(|e| &e.key)
    }

    /// `(entity, position)` of every DoF of local cell `i` in cell-local order.
    fn positions(&self, i: usize) -> Vec<(usize, usize)> {
        let ids = &self.cell_entities[i];
        let fe = self.active[i];
        let mut out = Vec::new();
        for &v in &ids[0..4] {
            out.push((v, 0));
        }
        for l in 0..4 {
            let e = ids[4 + l];
            let n = self.entities[e].slot(fe).len();
            for j in 0..n {
                out.push((e, if self.flipped[i][l] { n - 1 - j } else { j }));
            }
        }
        let e = ids[8];
        for j in 0..self.entities[e].slot(fe).len() {
            out.push((e, j));
        }
        out
    }

    /// DoF indices of local cell `i` in cell-local order.
    pub fn cell_dofs(&self, i: usize) -> Vec<u64> {
        let fe = self.active[i];
        self.positions(i).into_iter().map(|(e, j)| self.entities[e].slot(fe)[j]).collect()
    }

    /// Writes received valid indices into the slots of local cell `i`.
    fn merge_cell(&mut self, i: usize, list: &[u64], rank: Rank) -> Result<(), EnumerationError> {
        let fe = self.active[i];
        let positions = self.positions(i);
        if positions.len() != list.len() {
            return Err(EnumerationError::Wire(format!(
                "cell carries {} indices, expected {}",
                list.len(),
                positions.len()
            )));
        }
        for ((e, j), &v) in positions.into_iter().zip(list) {
            if v == INVALID {
                continue;
            }
            let slot = &mut self.entities[e].slot_mut(fe)[j];
            if *slot == INVALID {
                *slot = v;
            } else if *slot != v {
                return Err(EnumerationError::ConflictingIndex { rank, a: *slot, b: v });
            }
        }
        Ok(())
    }

    fn has_invalid(&self, i: usize) -> bool {
        let fe = self.active[i];
        self.positions(i).into_iter().any(|(e, j)| self.entities[e].slot(fe)[j] == INVALID)
    }
}

/// Global and per-rank DoF counts as seen from one rank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NumberCache {
    pub rank: Rank,
    /// Number of DoFs owned by each rank.
    pub per_rank: Vec<u64>,
    /// Exclusive prefix sums of `per_rank`, plus the total at the end.
    offsets: Vec<u64>,
    /// Sorted indices on owned and ghost cells.
    relevant: Vec<u64>,
}

impl NumberCache {
    pub fn total(&self) -> u64 {
        *self.offsets.last().unwrap()
    }

    pub fn owned_count(&self) -> u64 {
        self.per_rank[self.rank]
    }

    pub fn owned_range_of(&self, q: Rank) -> Range<u64> {
        self.offsets[q]..self.offsets[q + 1]
    }

    pub fn owned_range(&self) -> Range<u64> {
        self.owned_range_of(self.rank)
    }

    pub fn relevant(&self) -> &[u64] {
        &self.relevant
    }

    /// Rank owning a global index.
    pub fn owner_of(&self, index: u64) -> Result<Rank, EnumerationError> {
        ownership_of(&self.offsets, index)
    }
}

/// Rank whose owned range, given by `offsets` (length P+1), contains `index`.
pub fn ownership_of(offsets: &[u64], index: u64) -> Result<Rank, EnumerationError> {
    if index == INVALID {
        return Err(EnumerationError::Sentinel);
    }
    if index >= *offsets.last().unwrap_or(&0) {
        return Err(EnumerationError::OutOfRange(index));
    }
    Ok(offsets.partition_point(|&o| o <= index) - 1)
}

/// Result of the enumeration on one rank.
#[derive(Clone, Debug)]
pub struct RankDofs {
    pub store: EntityDofStore,
    pub numbers: NumberCache,
}

impl RankDofs {
    /// DoF indices of every locally relevant cell, aligned with the view.
    pub fn all_cell_dofs(&self) -> Vec<Vec<u64>> {
        (0..self.store.active.len()).map(|i| self.store.cell_dofs(i)).collect()
    }
}

/// Communication volume of the two ghost exchanges.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EnumerationReport {
    pub first_exchange_bytes: u64,
    pub second_exchange_bytes: u64,
    /// Owned cells that still carried placeholders when first sent.
    pub cells_resent: usize,
}

#[derive(Clone, Debug)]
pub struct Distribution {
    pub ranks: Vec<RankDofs>,
    pub report: EnumerationReport,
}

impl Distribution {
    pub fn total(&self) -> u64 {
        self.ranks[0].numbers.total()
    }
}

fn check_rank_count<C: Communicator + ?Sized>(fabric: &C, got: usize) -> Result<(), EnumerationError> {
    if got != fabric.size() {
        return Err(EnumerationError::RankCount { expected: fabric.size(), got });
    }
    Ok(())
}

/// Sends the active FE index of every owned cell to the ranks that hold it
/// as a ghost. `owned[p]` must cover the owned cells of `views[p]`.
pub fn exchange_active_fe_indices<C: Communicator + ?Sized>(
    views: &[LocalView],
    owned: &[ActiveFeMap],
    fabric: &C,
) -> Result<Vec<ActiveFeMap>, EnumerationError> {
    check_rank_count(fabric, views.len())?;
    check_rank_count(fabric, owned.len())?;
    let mut result: Vec<ActiveFeMap> = Vec::with_capacity(views.len());
    let mut outboxes = Vec::with_capacity(views.len());
    for (view, map) in views.iter().zip(owned) {
        let mut out: BTreeMap<Rank, Vec<u8>> = view.neighbor_ranks().into_iter().map(|q| (q, Vec::new())).collect();
        let mut local = ActiveFeMap::new();
        for &i in view.owned() {
            let key = *view.cell(i);
            let fe = *map.get(&key).ok_or(EnumerationError::MissingActiveIndex { rank: view.rank(), cell: key })?;
            local.insert(key, fe);
            for q in view.ghost_on(i) {
                let buf = out.get_mut(&q).expect("ghost owner is a neighbor rank");
                put_key(buf, &key);
                put_u32(buf, fe as u32);
            }
        }
        result.push(local);
        outboxes.push(out);
    }
    let received = fabric.neighbor_exchange(STAGE_ACTIVE, outboxes)?;
    for (p, inbox) in received.into_iter().enumerate() {
        let view = &views[p];
        for (from, payload) in inbox {
            let mut r = Reader::new(&payload);
            while !r.is_empty() {
                let key = r.key().ok_or_else(|| EnumerationError::Wire("bad cell key".into()))?;
                let fe = r.u32().ok_or_else(|| EnumerationError::Wire("truncated FE index".into()))? as FeIndex;
                check_ghost(view, &key, from)?;
                result[p].insert(key, fe);
            }
        }
        for (key, _) in view.ghost_keys() {
            if !result[p].contains_key(key) {
                return Err(EnumerationError::MissingActiveIndex { rank: p, cell: *key });
            }
        }
    }
    Ok(result)
}

fn check_ghost(view: &LocalView, key: &CellKey, from: Rank) -> Result<usize, EnumerationError> {
    match view.index_of(key) {
        Some(i) if !view.is_owned(i) && view.owner(i) == from => Ok(i),
        _ => Err(EnumerationError::StrayGhostData { rank: view.rank(), from, cell: *key }),
    }
}

/// Assigns globally unique, rank-contiguous indices to all DoFs.
///
/// `active[p]` must hold the FE index of every locally relevant cell of
/// `views[p]` (see [`exchange_active_fe_indices`]).
pub fn distribute_dofs<C: Communicator + ?Sized>(
    views: &[LocalView],
    active: &[ActiveFeMap],
    collection: &ElementCollection,
    fabric: &C,
) -> Result<Distribution, EnumerationError> {
    check_rank_count(fabric, views.len())?;
    check_rank_count(fabric, active.len())?;
    let nranks = views.len();

    // Allocate index arrays for every (entity, adjacent FE index).
    let mut stores = Vec::with_capacity(nranks);
    for (view, map) in views.iter().zip(active) {
        let fes = view
            .cells()
            .iter()
            .map(|k| map.get(k).copied().ok_or(EnumerationError::MissingActiveIndex { rank: view.rank(), cell: *k }))
            .collect::<Result<Vec<_>, _>>()?;
        stores.push(EntityDofStore::allocate(view, fes, collection)?);
    }

    let mut local_counts = Vec::with_capacity(nranks);
    for (view, store) in views.iter().zip(stores.iter_mut()) {
        enumerate_owned(view, store);
        break_ties(view, store);
        unify(view, store, collection)?;
        local_counts.push(compact(view, store));
    }

    let shifts = fabric.exscan_sum(&local_counts)?;
    for (store, &shift) in stores.iter_mut().zip(&shifts) {
        for rec in &mut store.entities {
            for (_, arr) in &mut rec.slots {
                for v in arr.iter_mut().filter(|v| **v != INVALID) {
                    *v += shift;
                }
            }
        }
    }

    let mut report = EnumerationReport::default();
    let mut resend: Vec<Vec<usize>> = vec![Vec::new(); nranks];
    let mut outboxes = Vec::with_capacity(nranks);
    for (p, (view, store)) in views.iter().zip(&stores).enumerate() {
        let mut cells = Vec::new();
        for &i in view.owned() {
            if view.ghost_on(i).is_empty() {
                continue;
            }
            if store.has_invalid(i) {
                resend[p].push(i);
            }
            cells.push(i);
        }
        let out = ghost_payloads(view, store, &cells);
        report.first_exchange_bytes += out.values().map(|b| b.len() as u64).sum::<u64>();
        outboxes.push(out);
    }
    report.cells_resent = resend.iter().map(Vec::len).sum();
    receive_ghosts(views, &mut stores, fabric.neighbor_exchange(STAGE_GHOST_FIRST, outboxes)?)?;

    for (view, store) in views.iter().zip(stores.iter_mut()) {
        merge_interfaces(view, store, collection)?;
    }

    let mut outboxes = Vec::with_capacity(nranks);
    for (p, (view, store)) in views.iter().zip(&stores).enumerate() {
        let out = ghost_payloads(view, store, &resend[p]);
        report.second_exchange_bytes += out.values().map(|b| b.len() as u64).sum::<u64>();
        outboxes.push(out);
    }
    receive_ghosts(views, &mut stores, fabric.neighbor_exchange(STAGE_GHOST_SECOND, outboxes)?)?;

    let mut offsets = vec![0u64; nranks + 1];
    for p in 0..nranks {
        offsets[p + 1] = offsets[p] + local_counts[p];
    }
    let mut ranks = Vec::with_capacity(nranks);
    for (view, store) in views.iter().zip(stores) {
        let mut relevant = Vec::new();
        for i in 0..view.cells().len() {
            let dofs = store.cell_dofs(i);
            if dofs.contains(&INVALID) {
                return Err(EnumerationError::IncompleteGhostClosure { rank: view.rank(), cell: *view.cell(i) });
            }
            relevant.extend(dofs);
        }
        relevant.sort_unstable();
        relevant.dedup();
        let numbers =
            NumberCache { rank: view.rank(), per_rank: local_counts.clone(), offsets: offsets.clone(), relevant };
        ranks.push(RankDofs { store, numbers });
    }
    Ok(Distribution { ranks, report })
}

/// Fresh local indices for unset slots of owned cells, Morton order.
fn enumerate_owned(view: &LocalView, store: &mut EntityDofStore) {
    let mut next = 0u64;
    for &i in view.owned() {
        let fe = store.active[i];
        for (e, j) in store.positions(i) {
            let slot = &mut store.entities[e].slot_mut(fe)[j];
            if *slot == INVALID {
                *slot = next;
                next += 1;
            }
        }
    }
}

/// Equal FE on a lower-rank ghost takes the shared slot away.
fn break_ties(view: &LocalView, store: &mut EntityDofStore) {
    for &g in view.ghosts() {
        if view.owner(g) > view.rank() {
            continue;
        }
        let fe = store.active[g];
        for &e in &store.cell_entities[g] {
            store.entities[e].slot_mut(fe).fill(INVALID);
        }
    }
}

/// Every non-dominating FE slot on an entity adopts the dominating FE's index
/// at coincident support points, or gives it up if only ghosts carry the
/// dominating FE.
fn unify(view: &LocalView, store: &mut EntityDofStore, collection: &ElementCollection) -> Result<(), EnumerationError> {
    for rec in &mut store.entities {
        if rec.slots.len() < 2 || rec.kind == EntityKind::Interior {
            continue;
        }
        if !rec.cells.iter().any(|&c| view.is_owned(c)) {
            continue;
        }
        // FE indices are ordered by degree, so the first slot dominates.
        let dom = rec.slots[0].0;
        let owned_dom = rec.cells.iter().any(|&c| view.is_owned(c) && store.active[c] == dom);
        let dom_values = rec.slots[0].1.clone();
        for (fe, arr) in rec.slots.iter_mut().skip(1) {
            let pairs = match rec.kind {
                EntityKind::Vertex => vec![(0, 0)],
                _ => collection.unification_pairs(dom, *fe)?,
            };
            for (a, b) in pairs {
                arr[b] = if owned_dom { dom_values[a] } else { INVALID };
            }
        }
    }
    Ok(())
}

/// Renumbers the surviving indices on owned cells to `0..n_p`, preserving
/// their relative order. Returns `n_p`.
fn compact(view: &LocalView, store: &mut EntityDofStore) -> u64 {
    let mut valid: Vec<u64> = Vec::new();
    for &i in view.owned() {
        valid.extend(store.cell_dofs(i).into_iter().filter(|&v| v != INVALID));
    }
    valid.sort_unstable();
    valid.dedup();
    for rec in &mut store.entities {
        for (_, arr) in &mut rec.slots {
            for v in arr.iter_mut().filter(|v| **v != INVALID) {
                *v = valid.binary_search(v).map(|k| k as u64).unwrap_or(INVALID);
            }
        }
    }
    valid.len() as u64
}

fn ghost_payloads(view: &LocalView, store: &EntityDofStore, cells: &[usize]) -> BTreeMap<Rank, Vec<u8>> {
    let mut per_rank: BTreeMap<Rank, Vec<(CellKey, Vec<u64>)>> =
        view.neighbor_ranks().into_iter().map(|q| (q, Vec::new())).collect();
    for &i in cells {
        let list = store.cell_dofs(i);
        for q in view.ghost_on(i) {
            per_rank.get_mut(&q).expect("ghost owner is a neighbor rank").push((*view.cell(i), list.clone()));
        }
    }
    per_rank
        .into_iter()
        .map(|(q, cells)| (q, encode_cell_lists(cells.iter().map(|(k, l)| (k, l.as_slice())))))
        .collect()
}

fn receive_ghosts(
    views: &[LocalView],
    stores: &mut [EntityDofStore],
    received: Vec<BTreeMap<Rank, Vec<u8>>>,
) -> Result<(), EnumerationError> {
    for (p, inbox) in received.into_iter().enumerate() {
        for (from, payload) in inbox {
            for (key, list) in decode_cell_lists(&payload).map_err(EnumerationError::Wire)? {
                let i = check_ghost(&views[p], &key, from)?;
                stores[p].merge_cell(i, &list, p)?;
            }
        }
    }
    Ok(())
}

/// Fills remaining placeholders on shared entities from the valid index of
/// the same support point under another FE index.
fn merge_interfaces(
    view: &LocalView,
    store: &mut EntityDofStore,
    collection: &ElementCollection,
) -> Result<(), EnumerationError> {
    for rec in &mut store.entities {
        if rec.slots.len() < 2 || rec.kind == EntityKind::Interior {
            continue;
        }
        let mut links: Vec<((usize, usize), (usize, usize))> = Vec::new();
        for a in 0..rec.slots.len() {
            for b in a + 1..rec.slots.len() {
                let pairs = match rec.kind {
                    EntityKind::Vertex => vec![(0, 0)],
                    _ => collection.unification_pairs(rec.slots[a].0, rec.slots[b].0)?,
                };
                links.extend(pairs.into_iter().map(|(x, y)| ((a, x), (b, y))));
            }
        }
        loop {
            let mut changed = false;
            for &((a, x), (b, y)) in &links {
                let (u, v) = (rec.slots[a].1[x], rec.slots[b].1[y]);
                match (u == INVALID, v == INVALID) {
                    (true, false) => {
                        rec.slots[a].1[x] = v;
                        changed = true;
                    }
                    (false, true) => {
                        rec.slots[b].1[y] = u;
                        changed = true;
                    }
                    (false, false) if u != v => {
                        return Err(EnumerationError::ConflictingIndex { rank: view.rank(), a: u, b: v });
                    }
                    _ => {}
                }
            }
            if !changed {
                break;
            }
        }
    }
    Ok(())
}
