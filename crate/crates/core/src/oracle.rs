//! Single-rank reference enumerations: the naive per-cell scheme and the
//! unified scheme in which coincident nodal functionals share one index.

use std::collections::BTreeMap;

use num_traits::One;

use crate::element::{LagrangeElement, Rational};
use crate::forest::{CellKey, Connectivity, Forest, Point};

/// Identity of a nodal functional: where it sits and which entity owns it.
/// Two functionals are unified exactly when their keys are equal; nodes on
/// a fine edge of a hanging interface never match the coarse edge.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodalKey {
    Vertex(Point),
    /// Edge endpoints (sorted) and the position along the sorted direction.
    Edge(Point, Point, Rational),
    Interior(CellKey, usize),
}

/// DoF indices of one cell in cell-local order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellDofs {
    pub key: CellKey,
    pub degree: u32,
    pub dofs: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleEnumeration {
    pub cells: Vec<CellDofs>,
    pub total: u64,
}

/// Nodal keys of a cell of the given degree in cell-local order.
pub fn nodal_keys(conn: &Connectivity, key: &CellKey, degree: u32) -> Vec<NodalKey> {
    let o = conn.tree_origin(key.tree);
    let (x0, y0, s) = (o.x + key.x as i64, o.y + key.y as i64, key.size() as i64);
    let corners = [Point::new(x0, y0), Point::new(x0 + s, y0), Point::new(x0, y0 + s), Point::new(x0 + s, y0 + s)];
    let mut keys: Vec<NodalKey> = corners.iter().map(|c| NodalKey::Vertex(*c)).collect();
    for (a, b) in [(0, 2), (1, 3), (0, 1), (2, 3)] {
        let (pa, pb) = (corners[a], corners[b]);
        for j in 1..degree {
            let t = Rational::new(j as i128, degree as i128);
            keys.push(if pa <= pb { NodalKey::Edge(pa, pb, t) } else { NodalKey::Edge(pb, pa, Rational::one() - t) });
        }
    }
    let inner = (degree as usize).saturating_sub(1).pow(2);
    keys.extend((0..inner).map(|j| NodalKey::Interior(*key, j)));
    keys
}

/// Consecutive indices per cell in curve order; nothing is shared.
pub fn naive_enumerate(forest: &Forest, degrees: &[u32]) -> OracleEnumeration {
    assert_eq!(degrees.len(), forest.len());
    let mut next = 0u64;
    let cells = forest
        .leaves()
        .iter()
        .zip(degrees)
        .map(|(key, &degree)| {
            let n = (degree as u64 + 1).pow(2);
            let dofs = (next..next + n).collect();
            next += n;
            CellDofs { key: *key, degree, dofs }
        })
        .collect();
    OracleEnumeration { cells, total: next }
}

/// Groups naive indices into coincidence classes. Each class is ranked by the
/// first naive index of its lowest-degree member, then numbered in that order.
pub fn unified_enumerate(forest: &Forest, degrees: &[u32]) -> OracleEnumeration {
    let naive = naive_enumerate(forest, degrees);
    let conn = forest.connectivity();
    // key -> (lowest degree, first naive index at that degree)
    let mut classes: BTreeMap<NodalKey, (u32, u64)> = BTreeMap::new();
    let mut keyed: Vec<Vec<NodalKey>> = Vec::with_capacity(naive.cells.len());
    for cell in &naive.cells {
        let keys = nodal_keys(conn, &cell.key, cell.degree);
        for (k, &idx) in keys.iter().zip(&cell.dofs) {
            let e = classes.entry(k.clone()).or_insert((cell.degree, idx));
            if (cell.degree, idx) < *e {
                *e = (cell.degree, idx);
            }
        }
        keyed.push(keys);
    }
    let mut reps: Vec<u64> = classes.values().map(|&(_, idx)| idx).collect();
    reps.sort_unstable();
    let cells = naive
        .cells
        .iter()
        .zip(keyed)
        .map(|(cell, keys)| CellDofs {
            key: cell.key,
            degree: cell.degree,
            dofs: keys.iter().map(|k| reps.binary_search(&classes[k].1).unwrap() as u64).collect(),
        })
        .collect();
    OracleEnumeration { cells, total: reps.len() as u64 }
}

/// Number of nodal functionals that were merged into an existing class.
pub fn unification_events(forest: &Forest, degrees: &[u32]) -> u64 {
    let conn = forest.connectivity();
    let mut counts: BTreeMap<NodalKey, u64> = BTreeMap::new();
    for (key, &d) in forest.leaves().iter().zip(degrees) {
        for k in nodal_keys(conn, key, d) {
            *counts.entry(k).or_default() += 1;
        }
    }
    counts.values().map(|c| c - 1).sum()
}

/// For every index in a table of cell DoFs, the smallest nodal key carrying
/// it. Makes index-based data comparable across different numberings.
pub fn index_anchors(conn: &Connectivity, cells: &[CellDofs]) -> BTreeMap<u64, NodalKey> {
    let mut out: BTreeMap<u64, NodalKey> = BTreeMap::new();
    for cell in cells {
        for (k, &idx) in nodal_keys(conn, &cell.key, cell.degree).into_iter().zip(&cell.dofs) {
            match out.get(&idx) {
                Some(existing) if *existing <= k => {}
                _ => {
                    out.insert(idx, k);
                }
            }
        }
    }
    out
}

/// Exact physical support point of a nodal key, in tree units.
pub fn nodal_point(key: &NodalKey, conn: &Connectivity, degree_of: impl Fn(&CellKey) -> u32) -> (Rational, Rational) {
    let scale = Rational::from_integer(crate::forest::TREE_SIZE as i128);
    let p = |pt: &Point| (Rational::from_integer(pt.x as i128) / scale, Rational::from_integer(pt.y as i128) / scale);
    match key {
        NodalKey::Vertex(v) => p(v),
        NodalKey::Edge(a, b, t) => {
            let (pa, pb) = (p(a), p(b));
            (pa.0 + (pb.0 - pa.0) * t, pa.1 + (pb.1 - pa.1) * t)
        }
        NodalKey::Interior(cell, j) => {
            let k = degree_of(cell);
            let (u, v) =
                LagrangeElement::new(k).expect("valid degree").cell_support_points()[4 + 4 * (k as usize - 1) + j];
            let a = conn.global_anchor(cell);
            let s = Rational::from_integer(cell.size() as i128) / scale;
            let (ax, ay) = p(&a);
            (ax + s * u, ay + s * v)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::AdaptFlag;
    use std::collections::BTreeSet;

    fn fig1() -> Forest {
        Forest::uniform(Connectivity::brick(2, 1), 0).unwrap()
    }

    fn fig2() -> Forest {
        Forest::uniform(Connectivity::unit_square(), 1).unwrap()
    }

    #[test]
    fn naive_counts() {
        assert_eq!(naive_enumerate(&fig1(), &[2, 4]).total, 34);
        assert_eq!(naive_enumerate(&fig2(), &[2, 4, 4, 2]).total, 68);
        let single = Forest::uniform(Connectivity::unit_square(), 0).unwrap();
        assert_eq!(naive_enumerate(&single, &[2]).total, 9);
    }

    #[test]
    fn unified_counts() {
        let f1 = unified_enumerate(&fig1(), &[2, 4]);
        assert_eq!(f1.total, 31);
        assert_eq!(f1.cells[0].dofs, (0..9).collect::<Vec<u64>>());
        assert_eq!(&f1.cells[1].dofs[..7], &[1, 9, 3, 10, 11, 5, 12]);
        assert_eq!(unified_enumerate(&fig2(), &[2, 4, 4, 2]).total, 57);
        let q1 = Forest::uniform(Connectivity::unit_square(), 1).unwrap();
        assert_eq!(unified_enumerate(&q1, &[1; 4]).total, 9);
        assert_eq!(naive_enumerate(&q1, &[1; 4]).total, 16);
    }

    #[test]
    fn hanging_interface_not_unified() {
        let base = Forest::uniform(Connectivity::brick(2, 1), 0).unwrap();
        let refined = base.refine_and_coarsen(&[AdaptFlag::Keep, AdaptFlag::Refine]).unwrap();
        let degrees = vec![2; refined.len()];
        let u = unified_enumerate(&refined, &degrees);
        // Left Q2 cell: 9; four Q2 children form a 5x5 grid of nodes: 25.
        // Shared: the two coarse corners only.
        assert_eq!(u.total, 9 + 25 - 2);
    }

    /// Independent count of coincident functionals from exact coordinates,
    /// excluding pairs that meet across a hanging interface.
    fn brute_force_events(forest: &Forest, degrees: &[u32]) -> u64 {
        let conn = forest.connectivity();
        let deg: BTreeMap<CellKey, u32> = forest.leaves().iter().copied().zip(degrees.iter().copied()).collect();
        let mut points: BTreeMap<(Rational, Rational), BTreeSet<(u8, CellKey)>> = BTreeMap::new();
        let mut total = 0u64;
        for (key, &d) in forest.leaves().iter().zip(degrees) {
            for k in nodal_keys(conn, key, d) {
                total += 1;
                let pt = nodal_point(&k, conn, |c| deg[c]);
                // Nodes on edges carry their edge size, which differs across a
                // hanging interface.
                let tag = match &k {
                    NodalKey::Vertex(_) => (0u8, CellKey::root(0)),
                    NodalKey::Edge(a, b, _) => (1u8, CellKey::root(((b.x - a.x) + (b.y - a.y)).trailing_zeros())),
                    NodalKey::Interior(c, _) => (2u8, *c),
                };
                points.entry(pt).or_default().insert(tag);
            }
        }
        total - points.values().map(|s| s.len() as u64).sum::<u64>()
    }

    #[test]
    fn events_match_brute_force() {
        let mut forest = Forest::uniform(Connectivity::l_shape(), 1).unwrap();
        let flags: Vec<AdaptFlag> =
            (0..forest.len()).map(|i| if i % 3 == 0 { AdaptFlag::Refine } else { AdaptFlag::Keep }).collect();
        forest = forest.refine_and_coarsen(&flags).unwrap();
        let degrees: Vec<u32> = (0..forest.len()).map(|i| 1 + (i * 7 % 5) as u32).collect();
        let events = unification_events(&forest, &degrees);
        assert_eq!(events, brute_force_events(&forest, &degrees));
        let n = unified_enumerate(&forest, &degrees).total;
        assert_eq!(naive_enumerate(&forest, &degrees).total - n, events);
    }

    #[test]
    fn anchors_cover_every_index() {
        let u = unified_enumerate(&fig2(), &[2, 4, 4, 2]);
        let anchors = index_anchors(fig2().connectivity(), &u.cells);
        assert_eq!(anchors.len(), 57);
    }
}
