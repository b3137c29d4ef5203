//! Linear constraints between DoFs that are not unified: hp interfaces of
//! different degree, hanging edges of 2:1 interfaces, and the identities a
//! naive enumeration needs.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::rc::Rc;

use num_traits::{One, Zero};

use crate::element::{is_unit_row, lagrange_basis, ElementCollection, LagrangeElement, Rational};
use crate::enumerate::RankDofs;
use crate::error::ConstraintError;
use crate::forest::{CellKey, Connectivity, FaceNeighbor, FaceRelation, Forest, LocalView, Point, LINE_VERTICES};
use crate::oracle::{index_anchors, nodal_keys, CellDofs, NodalKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConstraintKind {
    /// Regular edge between cells of different degree.
    Hp,
    /// Fine side or excess coarse DoF of a 2:1 edge.
    Hanging,
    /// A single master with coefficient one.
    Identity,
}

/// `slave = sum(coefficient * master)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Constraint {
    pub slave: u64,
    /// Sorted by master index, no zero coefficients.
    pub masters: Vec<(u64, Rational)>,
    pub kind: ConstraintKind,
}

impl Constraint {
    fn new(slave: u64, masters: impl IntoIterator<Item = (u64, Rational)>, kind: ConstraintKind) -> Self {
        let mut merged: BTreeMap<u64, Rational> = BTreeMap::new();
        for (m, c) in masters {
            *merged.entry(m).or_insert_with(Rational::zero) += c;
        }
        let masters: Vec<(u64, Rational)> = merged.into_iter().filter(|(_, c)| !c.is_zero()).collect();
        let kind = if masters.len() == 1 && masters[0].1.is_one() { ConstraintKind::Identity } else { kind };
        Constraint { slave, masters, kind }
    }

    pub fn row_sum(&self) -> Rational {
        self.masters.iter().map(|(_, c)| *c).sum()
    }
}

/// DoFs of one cell edge in canonical orientation (from the smaller to the
/// larger endpoint).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeTrace {
    pub from: Point,
    pub to: Point,
    pub degree: u32,
    pub start: u64,
    pub end: u64,
    /// Interior edge DoFs at `j / degree`, `j = 1..degree`.
    pub inner: Vec<u64>,
}

impl EdgeTrace {
    /// Trace of local line `line` of a cell.
    pub fn of_cell(conn: &Connectivity, cell: &CellDofs, line: usize) -> Self {
        let ent = conn.entities_of(&cell.key);
        let k = cell.degree as usize;
        let [va, vb] = LINE_VERTICES[line];
        let base = 4 + line * (k - 1);
        let mut inner: Vec<u64> = cell.dofs[base..base + k - 1].to_vec();
        let (mut from, mut to) = (ent.vertices[va], ent.vertices[vb]);
        let (mut start, mut end) = (cell.dofs[va], cell.dofs[vb]);
        if ent.flipped[line] {
            inner.reverse();
            std::mem::swap(&mut from, &mut to);
            std::mem::swap(&mut start, &mut end);
        }
        EdgeTrace { from, to, degree: cell.degree, start, end, inner }
    }

    fn midpoint(&self) -> Point {
        Point::new((self.from.x + self.to.x) / 2, (self.from.y + self.to.y) / 2)
    }
}

type Row = Vec<Rational>;
type HpRows = Rc<Vec<(usize, Row)>>;

thread_local! {
    static HP_ROWS: RefCell<HashMap<(u32, u32), HpRows>> = RefCell::new(HashMap::new());
    static HANGING_ROWS: RefCell<HashMap<(u32, u32, u32), Rc<HangingPattern>>> = RefCell::new(HashMap::new());
}

/// Rows of `high.inner[b]` against the low-degree trace, for every inner
/// high node that does not coincide with a low node.
fn hp_rows(ka: u32, kb: u32) -> HpRows {
    HP_ROWS.with(|cache| {
        cache
            .borrow_mut()
            .entry((ka, kb))
            .or_insert_with(|| {
                let nodes = LagrangeElement::new(ka).expect("valid degree").nodes_1d();
                let (ka, kb) = (ka as i128, kb as i128);
                let rows = (1..kb)
                    .filter(|j| (j * ka) % kb != 0)
                    .map(|j| (j as usize - 1, lagrange_basis(&nodes, Rational::new(j, kb))))
                    .collect();
                Rc::new(rows)
            })
            .clone()
    })
}

/// Constraints of the higher-degree side of a regular edge against the trace
/// of the lower-degree side. Nodes that coincide with a low-side node are
/// left alone: they are either unified or covered by an identity.
pub fn hp_edge_constraints(low: &EdgeTrace, high: &EdgeTrace) -> Vec<Constraint> {
    if low.degree >= high.degree {
        return Vec::new();
    }
    // Basis order is 0, 1/k, ..., 1; masters in the same order.
    let mut masters = vec![low.start];
    masters.extend(&low.inner);
    masters.push(low.end);
    hp_rows(low.degree, high.degree)
        .iter()
        .map(|(b, row)| {
            Constraint::new(high.inner[*b], masters.iter().copied().zip(row.iter().copied()), ConstraintKind::Hp)
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
enum HangingSlave {
    CoarseInner(usize),
    FineVertex,
    FineInner(usize, usize),
}

/// Degree-only part of a hanging edge: which coarse inner nodes are masters
/// and the row of every slave position.
#[derive(Debug)]
struct HangingPattern {
    picked: Vec<usize>,
    rows: Vec<(HangingSlave, Row)>,
}

fn hanging_pattern(kc: u32, kf0: u32, kf1: u32) -> Rc<HangingPattern> {
    HANGING_ROWS.with(|cache| {
        cache
            .borrow_mut()
            .entry((kc, kf0, kf1))
            .or_insert_with(|| {
                let kstar = kc.min(kf0).min(kf1) as i128;
                let kc = kc as i128;
                // Coarse node numbers (1..kc) that carry masters.
                let picked: Vec<i128> = (1..kstar).map(|j| (2 * j * kc + kstar) / (2 * kstar)).collect();
                let mut nodes = vec![Rational::zero()];
                nodes.extend(picked.iter().map(|&m| Rational::new(m, kc)));
                nodes.push(Rational::one());

                let half = Rational::new(1, 2);
                let mut slaves = Vec::new();
                for i in 1..kc {
                    if !picked.contains(&i) {
                        slaves.push((HangingSlave::CoarseInner(i as usize - 1), Rational::new(i, kc)));
                    }
                }
                slaves.push((HangingSlave::FineVertex, half));
                for (f, kf, offset) in [(0, kf0, Rational::zero()), (1, kf1, half)] {
                    for j in 1..kf as i128 {
                        slaves.push((
                            HangingSlave::FineInner(f, j as usize - 1),
                            offset + Rational::new(j, kf as i128) * half,
                        ));
                    }
                }
                let rows = slaves.into_iter().map(|(s, x)| (s, lagrange_basis(&nodes, x))).collect();
                Rc::new(HangingPattern { picked: picked.iter().map(|&m| m as usize - 1).collect(), rows })
            })
            .clone()
    })
}

/// Constraints of a 2:1 edge. The master space has the smallest degree of
/// the three cells and is parameterized on the coarse edge by its endpoints
/// and the coarse edge nodes closest to the equispaced positions.
pub fn hanging_edge_constraints(coarse: &EdgeTrace, fine: [&EdgeTrace; 2]) -> Result<Vec<Constraint>, ConstraintError> {
    let mid = coarse.midpoint();
    if (fine[0].from, fine[0].to, fine[1].from, fine[1].to) != (coarse.from, mid, mid, coarse.to)
        || fine[0].end != fine[1].start
    {
        return Err(ConstraintError::NotHanging);
    }
    let pattern = hanging_pattern(coarse.degree, fine[0].degree, fine[1].degree);
    let mut masters = vec![coarse.start];
    masters.extend(pattern.picked.iter().map(|&m| coarse.inner[m]));
    masters.push(coarse.end);

    let mut out = Vec::new();
    for (position, row) in &pattern.rows {
        let slave = match *position {
            HangingSlave::CoarseInner(i) => coarse.inner[i],
            HangingSlave::FineVertex => fine[0].end,
            HangingSlave::FineInner(f, j) => fine[f].inner[j],
        };
        if masters.contains(&slave) {
            continue;
        }
        let kind = if is_unit_row(row) { ConstraintKind::Identity } else { ConstraintKind::Hanging };
        out.push(Constraint::new(slave, masters.iter().copied().zip(row.iter().copied()), kind));
    }
    Ok(out)
}

/// One identity per extra index in every class of coincident nodal
/// functionals, against the smallest index of the class.
pub fn identity_constraints(conn: &Connectivity, cells: &[CellDofs]) -> Vec<Constraint> {
    let mut classes: BTreeMap<NodalKey, BTreeSet<u64>> = BTreeMap::new();
    for cell in cells {
        for (k, &idx) in nodal_keys(conn, &cell.key, cell.degree).into_iter().zip(&cell.dofs) {
            classes.entry(k).or_default().insert(idx);
        }
    }
    let mut out: BTreeMap<u64, Constraint> = BTreeMap::new();
    for members in classes.values() {
        let mut it = members.iter();
        let master = *it.next().expect("class is non-empty");
        for &s in it {
            out.entry(s).or_insert_with(|| Constraint::new(s, [(master, Rational::one())], ConstraintKind::Identity));
        }
    }
    out.into_values().collect()
}

/// Substitutes constrained masters until no slave appears on a right-hand
/// side. Input slaves must be unique.
pub fn close(constraints: &[Constraint]) -> Result<Vec<Constraint>, ConstraintError> {
    let rows: HashMap<u64, &Constraint> = constraints.iter().map(|c| (c.slave, c)).collect();
    let mut done: HashMap<u64, Vec<(u64, Rational)>> = HashMap::new();
    let mut slaves: Vec<u64> = rows.keys().copied().collect();
    slaves.sort_unstable();
    let mut out = Vec::with_capacity(rows.len());
    for slave in slaves {
        let c = rows[&slave];
        if c.masters.iter().all(|(m, _)| !rows.contains_key(m)) {
            out.push(c.clone());
            continue;
        }
        let mut visiting = BTreeSet::new();
        let masters = resolve(slave, &rows, &mut done, &mut visiting)?;
        out.push(Constraint::new(slave, masters, c.kind));
    }
    Ok(out)
}

fn resolve(
    slave: u64,
    rows: &HashMap<u64, &Constraint>,
    done: &mut HashMap<u64, Vec<(u64, Rational)>>,
    visiting: &mut BTreeSet<u64>,
) -> Result<Vec<(u64, Rational)>, ConstraintError> {
    if let Some(r) = done.get(&slave) {
        return Ok(r.clone());
    }
    if !visiting.insert(slave) {
        return Err(ConstraintError::Circular(slave));
    }
    let mut acc: BTreeMap<u64, Rational> = BTreeMap::new();
    for &(m, c) in &rows[&slave].masters {
        if rows.contains_key(&m) {
            for (mm, cc) in resolve(m, rows, done, visiting)? {
                *acc.entry(mm).or_insert_with(Rational::zero) += c * cc;
            }
        } else {
            *acc.entry(m).or_insert_with(Rational::zero) += c;
        }
    }
    visiting.remove(&slave);
    let r: Vec<(u64, Rational)> = acc.into_iter().filter(|(_, c)| !c.is_zero()).collect();
    done.insert(slave, r.clone());
    Ok(r)
}

fn opposite(face: u8) -> usize {
    (face ^ 1) as usize
}

/// hp constraints from the high-degree side and hanging constraints from the
/// coarse side of every edge in `incidents`.
pub fn edge_constraints<'a>(
    conn: &Connectivity,
    cells: &HashMap<CellKey, &CellDofs>,
    incidents: impl IntoIterator<Item = (CellKey, &'a [FaceNeighbor])>,
) -> Result<Vec<Constraint>, ConstraintError> {
    let mut out = Vec::new();
    for (key, faces) in incidents {
        let cell = cells[&key];
        for face in 0..4u8 {
            let nbrs: Vec<&FaceNeighbor> = faces.iter().filter(|f| f.face == face).collect();
            match nbrs.as_slice() {
                [n] if n.relation == FaceRelation::Same => {
                    let other = cells[&n.cell];
                    if other.degree < cell.degree {
                        let low = EdgeTrace::of_cell(conn, other, opposite(face));
                        let high = EdgeTrace::of_cell(conn, cell, face as usize);
                        out.extend(hp_edge_constraints(&low, &high));
                    }
                }
                [a, b] if a.relation == FaceRelation::Finer && b.relation == FaceRelation::Finer => {
                    let coarse = EdgeTrace::of_cell(conn, cell, face as usize);
                    let mut fine = [
                        EdgeTrace::of_cell(conn, cells[&a.cell], opposite(face)),
                        EdgeTrace::of_cell(conn, cells[&b.cell], opposite(face)),
                    ];
                    if fine[0].from != coarse.from {
                        fine.swap(0, 1);
                    }
                    out.extend(hanging_edge_constraints(&coarse, [&fine[0], &fine[1]])?);
                }
                _ => {}
            }
        }
    }
    Ok(out)
}

/// Edge constraints of a whole single-rank mesh.
pub fn forest_constraints(forest: &Forest, cells: &[CellDofs]) -> Result<Vec<Constraint>, ConstraintError> {
    let table: HashMap<CellKey, &CellDofs> = cells.iter().map(|c| (c.key, c)).collect();
    let faces: Vec<(CellKey, Vec<FaceNeighbor>)> =
        forest.leaves().iter().map(|k| (*k, forest.face_neighbors(k))).collect();
    edge_constraints(forest.connectivity(), &table, faces.iter().map(|(k, f)| (*k, f.as_slice())))
}

/// Cell DoF table of all locally relevant cells of one rank.
pub fn rank_cell_dofs(view: &LocalView, dofs: &RankDofs, collection: &ElementCollection) -> Vec<CellDofs> {
    (0..view.cells().len())
        .map(|i| CellDofs {
            key: *view.cell(i),
            degree: collection.degree(dofs.store.active_fe(i)).expect("active FE index in collection"),
            dofs: dofs.store.cell_dofs(i),
        })
        .collect()
}

/// Constraints one rank is responsible for: edges where an owned cell is
/// the high-degree side or the coarse side.
pub fn rank_constraints(
    view: &LocalView,
    dofs: &RankDofs,
    collection: &ElementCollection,
) -> Result<Vec<Constraint>, ConstraintError> {
    let cells = rank_cell_dofs(view, dofs, collection);
    let table: HashMap<CellKey, &CellDofs> = cells.iter().map(|c| (c.key, c)).collect();
    edge_constraints(view.connectivity(), &table, view.owned().iter().map(|&i| (*view.cell(i), view.face_neighbors(i))))
}

/// Constraint expressed through nodal keys instead of indices.
pub type AnchoredConstraint = (NodalKey, Vec<(NodalKey, Rational)>);

/// Rewrites constraints in terms of nodal keys so that sets built from
/// different numberings can be compared.
pub fn anchored(conn: &Connectivity, cells: &[CellDofs], constraints: &[Constraint]) -> BTreeSet<AnchoredConstraint> {
    anchored_with(&index_anchors(conn, cells), constraints)
}

/// [`anchored`] with anchors computed by [`index_anchors`] beforehand.
pub fn anchored_with(anchors: &BTreeMap<u64, NodalKey>, constraints: &[Constraint]) -> BTreeSet<AnchoredConstraint> {
    constraints
        .iter()
        .map(|c| {
            let mut masters: Vec<(NodalKey, Rational)> =
                c.masters.iter().map(|(m, w)| (anchors[m].clone(), *w)).collect();
            masters.sort();
            (anchors[&c.slave].clone(), masters)
        })
        .collect()
}

/// Text form, one constraint per line sorted by slave:
/// `slave = c1*m1 + c2*m2` with coefficients written as `p/q`.
pub fn format_constraints(constraints: &[Constraint]) -> String {
    let mut sorted: Vec<&Constraint> = constraints.iter().collect();
    sorted.sort_by_key(|c| c.slave);
    let mut s = String::new();
    for c in sorted {
        let terms: Vec<String> = c.masters.iter().map(|(m, w)| format!("{}/{}*{}", w.numer(), w.denom(), m)).collect();
        let _ = writeln!(s, "{} = {}", c.slave, terms.join(" + "));
    }
    s
}

/// Number of constraints of each kind.
pub fn count_by_kind(constraints: &[Constraint]) -> BTreeMap<ConstraintKind, usize> {
    let mut out = BTreeMap::new();
    for c in constraints {
        *out.entry(c.kind).or_insert(0) += 1;
    }
    out
}
