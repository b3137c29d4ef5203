//! Analytic refinement indicator for the corner singularity and the
//! fixed-fraction hp marking rule.

use std::cmp::Ordering;
use std::f64::consts::PI;

use hpdof::forest::{CellKey, Connectivity, TREE_SIZE};

/// `u(r, theta) = r^alpha sin(alpha theta)` with theta in `[0, 2 pi)`, so the
/// function vanishes on both edges meeting at the reentrant corner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactSolution {
    pub alpha: f64,
}

impl Default for ExactSolution {
    fn default() -> Self {
        ExactSolution { alpha: 2.0 / 3.0 }
    }
}

impl ExactSolution {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        let r = x.hypot(y);
        if r == 0.0 {
            return 0.0;
        }
        let mut theta = y.atan2(x);
        if theta < 0.0 {
            theta += 2.0 * PI;
        }
        r.powf(self.alpha) * (self.alpha * theta).sin()
    }

    /// `|grad u| = alpha r^(alpha - 1)`.
    pub fn gradient_norm(&self, r: f64) -> f64 {
        if r == 0.0 {
            f64::INFINITY
        } else {
            self.alpha * r.powf(self.alpha - 1.0)
        }
    }
}

/// Edge length and distance of the nearest corner to the origin.
pub fn cell_geometry(conn: &Connectivity, key: &CellKey) -> (f64, f64) {
    let a = conn.global_anchor(key);
    let s = key.size() as i64;
    let h = s as f64 / TREE_SIZE as f64;
    // Nearest corner by exact integer arithmetic.
    let r2 = [(a.x, a.y), (a.x + s, a.y), (a.x, a.y + s), (a.x + s, a.y + s)]
        .iter()
        .map(|&(x, y)| (x as i128).pow(2) + (y as i128).pow(2))
        .min()
        .unwrap();
    (h, (r2 as f64).sqrt() / TREE_SIZE as f64)
}

/// `eta = h * alpha * r_min^(alpha - 1)`; infinite for cells touching the origin.
pub fn indicator(conn: &Connectivity, key: &CellKey, solution: &ExactSolution) -> f64 {
    let (h, r_min) = cell_geometry(conn, key);
    h * solution.gradient_norm(r_min)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Keep,
    RefineH,
    RefineP,
    CoarsenH,
    CoarsenP,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkInput {
    pub key: CellKey,
    pub eta: f64,
    pub r_min: f64,
    pub degree: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkingPolicy {
    pub refine_frac: f64,
    pub coarsen_frac: f64,
    /// Share of each marked set that is p-adapted.
    pub p_frac: f64,
    pub min_degree: u32,
    pub max_degree: u32,
}

impl Default for MarkingPolicy {
    fn default() -> Self {
        MarkingPolicy { refine_frac: 0.30, coarsen_frac: 0.03, p_frac: 0.90, min_degree: 2, max_degree: 7 }
    }
}

fn floor_frac(frac: f64, n: usize) -> usize {
    ((frac * n as f64) + 1e-9).floor() as usize
}

fn ceil_frac(frac: f64, n: usize) -> usize {
    ((frac * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Marks the top `refine_frac` of cells by indicator for refinement and the
/// bottom `coarsen_frac` for coarsening. In each marked set the cells closest
/// to the origin (a `1 - p_frac` share, rounded up) are h-adapted, the rest
/// p-adapted. Degree limits turn p-refinement into h-refinement and
/// p-coarsening into h-coarsening; root cells are never h-coarsened.
pub fn mark_and_decide(cells: &[MarkInput], policy: &MarkingPolicy) -> Vec<Decision> {
    let n = cells.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        cells[b].eta.partial_cmp(&cells[a].eta).unwrap_or(Ordering::Equal).then(cells[a].key.cmp(&cells[b].key))
    });
    let n_refine = floor_frac(policy.refine_frac, n).min(n);
    let n_coarsen = floor_frac(policy.coarsen_frac, n).min(n - n_refine);
    let mut out = vec![Decision::Keep; n];
    let h_share = 1.0 - policy.p_frac;
    let split = |set: &[usize]| -> Vec<usize> {
        let mut by_r = set.to_vec();
        by_r.sort_by(|&a, &b| {
            cells[a].r_min.partial_cmp(&cells[b].r_min).unwrap_or(Ordering::Equal).then(cells[a].key.cmp(&cells[b].key))
        });
        by_r.truncate(ceil_frac(h_share, set.len()));
        by_r
    };
    let refine = &order[..n_refine];
    let coarsen = &order[n - n_coarsen..];
    for &i in refine {
        out[i] = Decision::RefineP;
    }
    for i in split(refine) {
        out[i] = Decision::RefineH;
    }
    for &i in coarsen {
        out[i] = Decision::CoarsenP;
    }
    for i in split(coarsen) {
        out[i] = Decision::CoarsenH;
    }
    for (d, c) in out.iter_mut().zip(cells) {
        if *d == Decision::RefineP && c.degree >= policy.max_degree {
            *d = Decision::RefineH;
        }
        if *d == Decision::CoarsenP && c.degree <= policy.min_degree {
            *d = Decision::CoarsenH;
        }
        if *d == Decision::CoarsenH && c.key.level == 0 {
            *d = Decision::Keep;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use hpdof::forest::Forest;

    #[test]
    fn solution_vanishes_on_reentrant_edges() {
        let u = ExactSolution::default();
        assert!(u.value(0.5, 0.0).abs() < 1e-15);
        assert!(u.value(0.0, -0.5).abs() < 1e-12);
        assert!(u.value(-0.5, 0.5) > 0.0);
        // r^(2/3) sin(2/3 * pi/2) at r = 1.
        assert!((u.value(0.0, 1.0) - (PI / 3.0).sin()).abs() < 1e-12);
    }

    #[test]
    fn indicator_properties() {
        let forest = Forest::uniform(Connectivity::l_shape(), 2).unwrap();
        let conn = forest.connectivity();
        let u = ExactSolution::default();
        let etas: Vec<f64> = forest.leaves().iter().map(|k| indicator(conn, k, &u)).collect();
        // Cells with a corner at the origin are infinite.
        assert_eq!(etas.iter().filter(|e| e.is_infinite()).count(), 3);
        // Nearer cell of equal size has the larger indicator.
        let near = CellKey::new(2, 2, 1 << 28, 0).unwrap();
        let far = CellKey::new(2, 2, 3 << 28, 0).unwrap();
        assert!(indicator(conn, &near, &u) > indicator(conn, &far, &u));
        // Halving h at the same nearest corner halves the indicator.
        let big = CellKey::new(2, 1, 1 << 29, 1 << 29).unwrap();
        let small = CellKey::new(2, 2, 1 << 29, 1 << 29).unwrap();
        let ratio = indicator(conn, &small, &u) / indicator(conn, &big, &u);
        assert!((ratio - 0.5).abs() < 1e-12);
    }

    fn inputs(n: usize) -> Vec<MarkInput> {
        let forest = Forest::uniform(Connectivity::brick(n, 1), 1).unwrap();
        forest.leaves()[..n]
            .iter()
            .enumerate()
            .map(|(i, k)| MarkInput { key: *k, eta: (n - i) as f64, r_min: i as f64, degree: 3 })
            .collect()
    }

    #[test]
    fn ten_cells_three_refined_none_coarsened() {
        let d = mark_and_decide(&inputs(10), &MarkingPolicy::default());
        assert_eq!(d.iter().filter(|d| matches!(d, Decision::RefineH | Decision::RefineP)).count(), 3);
        assert_eq!(d.iter().filter(|d| matches!(d, Decision::CoarsenH | Decision::CoarsenP)).count(), 0);
        assert_eq!(d[0], Decision::RefineH);
        assert_eq!(&d[1..3], &[Decision::RefineP, Decision::RefineP]);
    }

    #[test]
    fn hundred_cells_split() {
        let d = mark_and_decide(&inputs(100), &MarkingPolicy::default());
        let count = |x: Decision| d.iter().filter(|&&y| y == x).count();
        assert_eq!(count(Decision::RefineH), 3);
        assert_eq!(count(Decision::RefineP), 27);
        assert_eq!(count(Decision::CoarsenH), 1);
        assert_eq!(count(Decision::CoarsenP), 2);
    }

    #[test]
    fn equal_indicators_break_ties_by_key() {
        let mut cells = inputs(10);
        for c in &mut cells {
            c.eta = 1.0;
            c.r_min = 1.0;
        }
        let d = mark_and_decide(&cells, &MarkingPolicy::default());
        let marked: Vec<usize> = (0..10).filter(|&i| d[i] != Decision::Keep).collect();
        assert_eq!(marked, vec![0, 1, 2]);
    }

    #[test]
    fn degree_clamps() {
        let mut cells = inputs(10);
        cells[1].degree = 7;
        let d = mark_and_decide(&cells, &MarkingPolicy::default());
        assert_eq!(d[1], Decision::RefineH);
        let mut cells = inputs(100);
        for c in &mut cells {
            c.degree = 2;
        }
        let d = mark_and_decide(&cells, &MarkingPolicy::default());
        assert!(d[97..].iter().all(|&x| x == Decision::CoarsenH));
        let roots: Vec<MarkInput> =
            (0..40u32).map(|t| MarkInput { key: CellKey::root(t), eta: t as f64, r_min: 1.0, degree: 2 }).collect();
        let d = mark_and_decide(&roots, &MarkingPolicy::default());
        assert_eq!(d[0], Decision::Keep);
    }
}
