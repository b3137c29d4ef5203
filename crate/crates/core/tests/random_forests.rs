use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hpdof::constraints::{close, forest_constraints, rank_constraints};
use hpdof::enumerate::{distribute_dofs, exchange_active_fe_indices};
use hpdof::oracle::{naive_enumerate, unification_events, unified_enumerate};
use hpdof::transfer::{decode_checkpoint, encode_checkpoint, pack, repartition_transfer};
use hpdof::{
    ActiveFeMap, AdaptFlag, CellKey, Connectivity, Distribution, ElementCollection, Forest, LocalView, Rank, Rational,
    SimFabric, INVALID,
};

fn random_forest(rng: &mut ChaCha8Rng) -> Forest {
    let conn = match rng.gen_range(0..3) {
        0 => Connectivity::l_shape(),
        1 => Connectivity::brick(2, 1),
        _ => Connectivity::unit_square(),
    };
    let mut forest = Forest::uniform(conn, rng.gen_range(0..=2)).unwrap();
    for _ in 0..rng.gen_range(1..=4) {
        let flags: Vec<AdaptFlag> = forest
            .leaves()
            .iter()
            .map(|_| match rng.gen_range(0..10) {
                0..=2 => AdaptFlag::Refine,
                3 => AdaptFlag::Coarsen,
                _ => AdaptFlag::Keep,
            })
            .collect();
        forest = forest.refine_and_coarsen(&flags).unwrap();
    }
    forest
}

fn random_owners(rng: &mut ChaCha8Rng, n: usize, nranks: usize) -> Vec<Rank> {
    // Contiguous pieces in curve order, some possibly empty.
    let mut cuts: Vec<usize> = (1..nranks).map(|_| rng.gen_range(0..=n)).collect();
    cuts.sort();
    (0..n).map(|i| cuts.iter().filter(|&&c| c <= i).count()).collect()
}

fn distribute(
    forest: &Forest,
    degrees: &[u32],
    owners: &[Rank],
    nranks: usize,
    collection: &ElementCollection,
) -> (Vec<LocalView>, Distribution, SimFabric) {
    let fabric = SimFabric::new(nranks);
    let views: Vec<LocalView> = (0..nranks).map(|p| forest.build_local_view(owners, p)).collect();
    let mut owned = vec![ActiveFeMap::new(); nranks];
    for ((k, &d), &p) in forest.leaves().iter().zip(degrees).zip(owners) {
        owned[p].insert(*k, collection.index_of_degree(d).unwrap());
    }
    let active = exchange_active_fe_indices(&views, &owned, &fabric).unwrap();
    let dist = distribute_dofs(&views, &active, collection, &fabric).unwrap();
    (views, dist, fabric)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adapted_forests_stay_balanced_and_cover_the_domain(seed in any::<u64>()) {
        let forest = random_forest(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(forest.is_balanced());
        prop_assert!(forest.leaves().windows(2).all(|w| w[0] < w[1]));
        let area: u128 = forest.leaves().iter().map(|k| (k.size() as u128).pow(2)).sum();
        prop_assert_eq!(area, forest.connectivity().area_pixels());
    }

    #[test]
    fn ghost_layers_are_adjacent_and_symmetric(seed in any::<u64>(), nranks in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let forest = random_forest(&mut rng);
        let owners = random_owners(&mut rng, forest.len(), nranks);
        let views: Vec<LocalView> = (0..nranks).map(|p| forest.build_local_view(&owners, p)).collect();
        for view in &views {
            let owned: BTreeSet<CellKey> = view.owned_keys().copied().collect();
            for (ghost, q) in view.ghost_keys() {
                prop_assert_ne!(q, view.rank());
                prop_assert!(forest.adjacent(ghost).iter().any(|n| owned.contains(n)));
                prop_assert!(views[q].neighbor_ranks().contains(&view.rank()));
            }
            // Every owned neighbor of an owned cell on another rank is a ghost here.
            for key in &owned {
                for n in forest.adjacent(key) {
                    prop_assert!(view.index_of(&n).is_some());
                }
            }
        }
    }

    #[test]
    fn enumeration_matches_oracle_for_any_partition(seed in any::<u64>(), nranks in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let forest = random_forest(&mut rng);
        // Unsmoothed degrees, so neighbors may differ by more than one.
        let degrees: Vec<u32> = (0..forest.len()).map(|_| rng.gen_range(1..=6)).collect();
        let owners = random_owners(&mut rng, forest.len(), nranks);
        let collection = ElementCollection::range(1, 6).unwrap();
        let (views, dist, _) = distribute(&forest, &degrees, &owners, nranks, &collection);

        let oracle = unified_enumerate(&forest, &degrees);
        prop_assert_eq!(dist.total(), oracle.total);
        let naive = naive_enumerate(&forest, &degrees);
        prop_assert_eq!(naive.total - oracle.total, unification_events(&forest, &degrees));

        // Owned ranges tile 0..N and every relevant cell is fully numbered.
        let numbers = &dist.ranks[0].numbers;
        prop_assert_eq!(numbers.per_rank.iter().sum::<u64>(), dist.total());
        let mut next = 0;
        for r in &dist.ranks {
            prop_assert_eq!(r.numbers.owned_range().start, next);
            next = r.numbers.owned_range().end;
            prop_assert!(r.all_cell_dofs().iter().flatten().all(|&d| d != INVALID && d < dist.total()));
        }
        prop_assert_eq!(next, dist.total());

        // Copies of a cell on different ranks carry the same indices.
        let mut seen: BTreeMap<CellKey, Vec<u64>> = BTreeMap::new();
        for (view, r) in views.iter().zip(&dist.ranks) {
            for (i, dofs) in r.all_cell_dofs().into_iter().enumerate() {
                let key = *view.cell(i);
                if let Some(prev) = seen.insert(key, dofs.clone()) {
                    prop_assert_eq!(prev, dofs);
                }
            }
        }
    }

    #[test]
    fn constraints_are_exact_and_closable(seed in any::<u64>(), nranks in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let forest = random_forest(&mut rng);
        let degrees: Vec<u32> = (0..forest.len()).map(|_| rng.gen_range(1..=6)).collect();
        let owners = random_owners(&mut rng, forest.len(), nranks);
        let collection = ElementCollection::range(1, 6).unwrap();
        let (views, dist, _) = distribute(&forest, &degrees, &owners, nranks, &collection);
        let mut rows = BTreeMap::new();
        for (view, r) in views.iter().zip(&dist.ranks) {
            for c in rank_constraints(view, r, &collection).unwrap() {
                prop_assert_eq!(c.row_sum(), Rational::from_integer(1));
                if let Some(prev) = rows.insert(c.slave, c.clone()) {
                    prop_assert_eq!(prev, c);
                }
            }
        }
        let rows: Vec<_> = rows.into_values().collect();
        let closed = close(&rows).unwrap();
        let slaves: BTreeSet<u64> = closed.iter().map(|c| c.slave).collect();
        for c in &closed {
            prop_assert_eq!(c.row_sum(), Rational::from_integer(1));
            prop_assert!(c.masters.iter().all(|(m, _)| !slaves.contains(m)));
        }
        let oracle = unified_enumerate(&forest, &degrees);
        prop_assert_eq!(forest_constraints(&forest, &oracle.cells).unwrap().len(), rows.len());
    }

    #[test]
    fn repartition_and_checkpoint_round_trip(seed in any::<u64>(), from in 1usize..5, to in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let forest = random_forest(&mut rng);
        let size = from.max(to);
        let payloads: BTreeMap<CellKey, Vec<u8>> = forest
            .leaves()
            .iter()
            .map(|k| (*k, (0..rng.gen_range(0..24)).map(|_| rng.gen()).collect()))
            .collect();
        let source = random_owners(&mut rng, forest.len(), from);
        let shards: Vec<_> = (0..size)
            .map(|p| {
                let cells: Vec<CellKey> =
                    forest.leaves().iter().zip(&source).filter(|(_, &o)| o == p).map(|(k, _)| *k).collect();
                pack(&cells, |k| payloads[k].clone())
            })
            .collect();
        let dest: BTreeMap<CellKey, Rank> = forest.leaves().iter().map(|k| (*k, rng.gen_range(0..to))).collect();
        let (received, report) = repartition_transfer(&shards, &dest, &SimFabric::new(size)).unwrap();
        let mut merged = BTreeMap::new();
        for (p, shard) in received.iter().enumerate() {
            let bytes = encode_checkpoint(shard).unwrap();
            prop_assert_eq!(&decode_checkpoint(&bytes).unwrap(), shard);
            for (k, data) in shard.iter() {
                prop_assert_eq!(dest[k], p);
                merged.insert(*k, data.to_vec());
            }
        }
        prop_assert_eq!(merged, payloads);
        let moved = forest.leaves().iter().zip(&source).filter(|(k, &o)| dest[*k] != o).count();
        prop_assert_eq!(moved == 0, report.bytes == 0);
    }
}
