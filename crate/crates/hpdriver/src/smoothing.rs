//! Raising polynomial degrees until edge neighbors differ by at most one.

use std::collections::BTreeMap;

use hpdof::enumerate::exchange_active_fe_indices;
use hpdof::fabric::Communicator;
use hpdof::forest::{CellKey, LocalView};
use hpdof::EnumerationError;

const STAGE_CONVERGED: &str = "smoothing-converged";

/// Degrees of owned cells per rank in, degrees of owned and ghost cells per
/// rank out. Each sweep sets `d(K) = max(d(K), max_N d(N) - 1)` over edge
/// neighbors using the degrees of the previous sweep, then refreshes ghosts.
/// Degrees only go up, and never above the largest input degree.
pub fn smooth_degrees<C: Communicator + ?Sized>(
    views: &[LocalView],
    owned: &[BTreeMap<CellKey, usize>],
    fabric: &C,
) -> Result<(Vec<BTreeMap<CellKey, usize>>, usize), EnumerationError> {
    let mut current = exchange_active_fe_indices(views, owned, fabric)?;
    let mut sweeps = 0;
    loop {
        let mut next_owned = Vec::with_capacity(views.len());
        let mut flags = Vec::with_capacity(views.len());
        for (view, degrees) in views.iter().zip(&current) {
            let mut changed = false;
            let mut out = BTreeMap::new();
            for &i in view.owned() {
                let key = view.cell(i);
                let d = degrees[key];
                let target =
                    view.face_neighbors(i).iter().map(|f| degrees[&f.cell].saturating_sub(1)).fold(d, usize::max);
                changed |= target != d;
                out.insert(*key, target);
            }
            next_owned.push(out);
            flags.push(vec![changed as u8]);
        }
        let any = fabric.all_gather(STAGE_CONVERGED, flags)?.iter().any(|f| f[0] != 0);
        current = exchange_active_fe_indices(views, &next_owned, fabric)?;
        if !any {
            return Ok((current, sweeps));
        }
        sweeps += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hpdof::fabric::{Rank, SimFabric};
    use hpdof::forest::{Connectivity, Forest};

    fn run(forest: &Forest, degrees: &[usize], owners: &[Rank], nranks: usize) -> BTreeMap<CellKey, usize> {
        let fabric = SimFabric::new(nranks);
        let views: Vec<LocalView> = (0..nranks).map(|p| forest.build_local_view(owners, p)).collect();
        let owned: Vec<BTreeMap<CellKey, usize>> = (0..nranks)
            .map(|p| {
                forest
                    .leaves()
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| owners[*i] == p)
                    .map(|(i, k)| (*k, degrees[i]))
                    .collect()
            })
            .collect();
        let (all, _) = smooth_degrees(&views, &owned, &fabric).unwrap();
        all.into_iter().flatten().collect()
    }

    #[test]
    fn two_neighbors() {
        let forest = Forest::uniform(Connectivity::brick(2, 1), 0).unwrap();
        let out = run(&forest, &[2, 7], &[0, 1], 2);
        assert_eq!(out.values().copied().collect::<Vec<_>>(), vec![6, 7]);
        let out = run(&forest, &[3, 4], &[0, 0], 1);
        assert_eq!(out.values().copied().collect::<Vec<_>>(), vec![3, 4]);
        let out = run(&forest, &[5, 5], &[0, 1], 2);
        assert_eq!(out.values().copied().collect::<Vec<_>>(), vec![5, 5]);
    }

    #[test]
    fn chain_result_is_rank_independent() {
        let forest = Forest::uniform(Connectivity::brick(8, 1), 0).unwrap();
        let degrees = [7, 2, 2, 2, 2, 2, 2, 2];
        let expected = vec![7, 6, 5, 4, 3, 2, 2, 2];
        for p in 1..=4 {
            let owners: Vec<Rank> = (0..8).map(|i| i * p / 8).collect();
            let out = run(&forest, &degrees, &owners, p);
            assert_eq!(out.values().copied().collect::<Vec<_>>(), expected);
        }
    }
}
