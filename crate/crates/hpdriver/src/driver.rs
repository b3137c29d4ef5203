//! The adaptation loop: indicators, marking, h/p adaptation, degree
//! smoothing, weighted repartitioning with data transfer, enumeration and
//! constraints, one metrics row per cycle.

use std::collections::{BTreeMap, HashMap};
use std::fs;

use hpdof::constraints::{
    close, count_by_kind, format_constraints, rank_cell_dofs, rank_constraints, Constraint, ConstraintKind,
};
use hpdof::element::{ElementCollection, LagrangeElement};
use hpdof::enumerate::{distribute_dofs, exchange_active_fe_indices, ActiveFeMap, Distribution};
use hpdof::fabric::{Communicator, Rank, SimFabric};
use hpdof::forest::{AdaptFlag, CellKey, Connectivity, Forest};
use hpdof::oracle::CellDofs;
use hpdof::partition::{cell_weight, imbalance, partition_by_weight, rank_loads, WeightPolicy};
use hpdof::transfer::{load_sharded, pack, repartition_transfer, save_sharded, PackedCellData};
use hpdof::wire::{put_key, Reader};
use hpdof::LocalView;

use crate::config::{Config, Fixture};
use crate::indicator::{cell_geometry, indicator, mark_and_decide, Decision, ExactSolution, MarkInput, MarkingPolicy};
use crate::metrics::{to_csv, CycleMetrics, Stopwatch};
use crate::smoothing::smooth_degrees;
use crate::DriverError;

const STAGE_INDICATORS: &str = "indicator-gather";

/// Leaves with their degree and current owner, all aligned with
/// `forest.leaves()`.
#[derive(Clone, Debug)]
pub struct MeshState {
    pub forest: Forest,
    pub degrees: Vec<u32>,
    pub owners: Vec<Rank>,
}

/// Enumeration and constraints of one partitioned mesh.
#[derive(Clone, Debug)]
pub struct Enumerated {
    pub views: Vec<LocalView>,
    pub distribution: Distribution,
    /// DoFs of every leaf, taken from its owner, in curve order.
    pub cells: Vec<CellDofs>,
    /// Union of the per-rank constraints, sorted by slave.
    pub constraints: Vec<Constraint>,
    pub closed: Vec<Constraint>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub rows: Vec<CycleMetrics>,
    pub state: MeshState,
}

pub fn connectivity_for(fixture: Option<Fixture>) -> Connectivity {
    match fixture {
        None => Connectivity::l_shape(),
        Some(Fixture::Fig1) => Connectivity::brick(2, 1),
        Some(Fixture::Fig2) => Connectivity::unit_square(),
    }
}

/// Initial forest and degrees for a configuration.
pub fn initial_mesh(config: &Config) -> Result<(Forest, Vec<u32>), DriverError> {
    let conn = connectivity_for(config.fixture);
    Ok(match config.fixture {
        None => {
            let forest = Forest::uniform(conn, config.initial_refines)?;
            let degrees = vec![config.min_degree; forest.len()];
            (forest, degrees)
        }
        Some(Fixture::Fig1) => (Forest::uniform(conn, 0)?, vec![2, 4]),
        Some(Fixture::Fig2) => (Forest::uniform(conn, 1)?, vec![2, 4, 4, 2]),
    })
}

pub fn collection_for(config: &Config) -> Result<ElementCollection, DriverError> {
    Ok(ElementCollection::range(config.min_degree, config.max_degree)?)
}

/// Curve-order partition by DoF-count weights.
pub fn partition(degrees: &[u32], nranks: usize, policy: WeightPolicy) -> (Vec<Rank>, Vec<u64>) {
    let weights: Vec<u64> = degrees.iter().map(|&d| cell_weight(((d + 1) * (d + 1)) as usize, policy)).collect();
    (partition_by_weight(&weights, nranks), weights)
}

/// Runs the parallel enumeration on a partitioned mesh and collects the
/// constraints of all ranks.
pub fn enumerate_mesh<C: Communicator + ?Sized>(
    forest: &Forest,
    degrees: &[u32],
    owners: &[Rank],
    collection: &ElementCollection,
    fabric: &C,
) -> Result<Enumerated, DriverError> {
    let nranks = fabric.size();
    let views: Vec<LocalView> = (0..nranks).map(|p| forest.build_local_view(owners, p)).collect();
    let mut owned = vec![ActiveFeMap::new(); nranks];
    for ((key, &d), &p) in forest.leaves().iter().zip(degrees).zip(owners) {
        let fe = collection
            .index_of_degree(d)
            .ok_or_else(|| DriverError::Config(format!("degree {d} is not in the element collection")))?;
        owned[p].insert(*key, fe);
    }
    let active = exchange_active_fe_indices(&views, &owned, fabric)?;
    let distribution = distribute_dofs(&views, &active, collection, fabric)?;

    let mut by_slave: BTreeMap<u64, Constraint> = BTreeMap::new();
    let mut cells = Vec::with_capacity(forest.len());
    for (view, dofs) in views.iter().zip(&distribution.ranks) {
        for c in rank_constraints(view, dofs, collection)? {
            by_slave.entry(c.slave).or_insert(c);
        }
        let table = rank_cell_dofs(view, dofs, collection);
        cells.extend(view.owned().iter().map(|&i| table[i].clone()));
    }
    cells.sort_by_key(|a| a.key);
    let constraints: Vec<Constraint> = by_slave.into_values().collect();
    let closed = close(&constraints)?;
    Ok(Enumerated { views, distribution, cells, constraints, closed })
}

/// Largest degree difference across any edge of the mesh.
pub fn max_degree_jump(forest: &Forest, degrees: &[u32]) -> u32 {
    let lookup: HashMap<CellKey, u32> = forest.leaves().iter().copied().zip(degrees.iter().copied()).collect();
    forest
        .leaves()
        .iter()
        .zip(degrees)
        .flat_map(|(k, &d)| forest.face_neighbors(k).into_iter().map(move |f| (d, f.cell)))
        .map(|(d, n)| d.abs_diff(lookup[&n]))
        .max()
        .unwrap_or(0)
}

/// Transfer payload of a cell: its degree, then the exact solution at its
/// support points as f64 in cell-local order.
pub fn cell_payload(conn: &Connectivity, key: &CellKey, degree: u32, solution: &ExactSolution) -> Vec<u8> {
    let a = conn.global_anchor(key);
    let size = key.size() as f64;
    let scale = hpdof::forest::TREE_SIZE as f64;
    let pts = LagrangeElement::new(degree).expect("valid degree").cell_support_points();
    let mut out = Vec::with_capacity(1 + 8 * pts.len());
    out.push(degree as u8);
    for (u, v) in pts {
        let x = (a.x as f64 + size * to_f64(u)) / scale;
        let y = (a.y as f64 + size * to_f64(v)) / scale;
        out.extend_from_slice(&solution.value(x, y).to_le_bytes());
    }
    out
}

fn to_f64(r: hpdof::Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn payload_degree(payload: &[u8]) -> Result<u32, DriverError> {
    let d = *payload.first().ok_or_else(|| DriverError::Restart("empty cell payload".into()))? as u32;
    if payload.len() != 1 + 8 * ((d + 1) * (d + 1)) as usize {
        return Err(DriverError::Restart(format!("payload of {} bytes does not fit degree {d}", payload.len())));
    }
    Ok(d)
}

fn pack_by_owner(state: &MeshState, nranks: usize, solution: &ExactSolution) -> Vec<PackedCellData> {
    let conn = state.forest.connectivity();
    let degree_of: HashMap<CellKey, u32> =
        state.forest.leaves().iter().copied().zip(state.degrees.iter().copied()).collect();
    (0..nranks)
        .map(|p| {
            let cells: Vec<CellKey> =
                state.forest.leaves().iter().zip(&state.owners).filter(|(_, &o)| o == p).map(|(k, _)| *k).collect();
            pack(&cells, |k| cell_payload(conn, k, degree_of[k], solution))
        })
        .collect()
}

/// Indicators of owned cells, gathered so every rank sees the global list.
fn gather_indicators<C: Communicator + ?Sized>(
    state: &MeshState,
    solution: &ExactSolution,
    fabric: &C,
) -> Result<Vec<MarkInput>, DriverError> {
    let conn = state.forest.connectivity();
    let mut contributions = vec![Vec::new(); fabric.size()];
    for ((key, &d), &p) in state.forest.leaves().iter().zip(&state.degrees).zip(&state.owners) {
        let buf = &mut contributions[p];
        put_key(buf, key);
        buf.extend_from_slice(&indicator(conn, key, solution).to_le_bytes());
        buf.extend_from_slice(&cell_geometry(conn, key).1.to_le_bytes());
        buf.push(d as u8);
    }
    let gathered = fabric.all_gather(STAGE_INDICATORS, contributions)?;
    let mut cells = Vec::with_capacity(state.forest.len());
    for buf in &gathered {
        let mut r = Reader::new(buf);
        while !r.is_empty() {
            let bad = || DriverError::Restart("malformed indicator message".into());
            let key = r.key().ok_or_else(bad)?;
            let eta = f64::from_le_bytes(r.bytes(8).ok_or_else(bad)?.try_into().unwrap());
            let r_min = f64::from_le_bytes(r.bytes(8).ok_or_else(bad)?.try_into().unwrap());
            let degree = r.u8().ok_or_else(bad)? as u32;
            cells.push(MarkInput { key, eta, r_min, degree });
        }
    }
    cells.sort_by_key(|a| a.key);
    Ok(cells)
}

/// Applies marking, h/p adaptation and degree smoothing. Children inherit
/// degree and owner from their parent; a coarsened parent takes the largest
/// child degree and the owner of its first child.
pub fn adapt<C: Communicator + ?Sized>(
    state: &MeshState,
    policy: &MarkingPolicy,
    solution: &ExactSolution,
    fabric: &C,
) -> Result<MeshState, DriverError> {
    let marks = gather_indicators(state, solution, fabric)?;
    let decisions = mark_and_decide(&marks, policy);
    let mut flags = vec![AdaptFlag::Keep; state.forest.len()];
    let mut degrees = state.degrees.clone();
    for (i, d) in decisions.iter().enumerate() {
        match d {
            Decision::Keep => {}
            Decision::RefineH => flags[i] = AdaptFlag::Refine,
            Decision::CoarsenH => flags[i] = AdaptFlag::Coarsen,
            Decision::RefineP => degrees[i] += 1,
            Decision::CoarsenP => degrees[i] -= 1,
        }
    }
    let forest = state.forest.refine_and_coarsen(&flags)?;

    let old: HashMap<CellKey, (u32, Rank)> =
        state.forest.leaves().iter().zip(degrees.iter().zip(&state.owners)).map(|(k, (&d, &o))| (*k, (d, o))).collect();
    let mut new_degrees = Vec::with_capacity(forest.len());
    let mut owners = Vec::with_capacity(forest.len());
    for leaf in forest.leaves() {
        let inherited =
            old.get(leaf).copied().or_else(|| (0..leaf.level).rev().find_map(|l| old.get(&leaf.ancestor(l)).copied()));
        let (d, o) = match inherited {
            Some(v) => v,
            None => {
                let kids = leaf.children()?;
                let d = kids.iter().map(|k| old[k].0).max().unwrap();
                (d, old[&kids[0]].1)
            }
        };
        new_degrees.push(d);
        owners.push(o);
    }

    let nranks = fabric.size();
    let views: Vec<LocalView> = (0..nranks).map(|p| forest.build_local_view(&owners, p)).collect();
    let mut owned = vec![BTreeMap::new(); nranks];
    for ((k, &d), &p) in forest.leaves().iter().zip(&new_degrees).zip(&owners) {
        owned[p].insert(*k, d as usize);
    }
    let (smoothed, _) = smooth_degrees(&views, &owned, fabric)?;
    let degrees = forest.leaves().iter().zip(&owners).map(|(k, &p)| smoothed[p][k] as u32).collect();
    Ok(MeshState { forest, degrees, owners })
}

/// Repartitions by weight and moves every cell's payload to its new owner.
/// Degrees on the new owners are read back from the received payloads.
fn rebalance<C: Communicator + ?Sized>(
    state: &MeshState,
    weight: WeightPolicy,
    solution: &ExactSolution,
    fabric: &C,
) -> Result<(MeshState, u64), DriverError> {
    let nranks = fabric.size();
    let (owners, _) = partition(&state.degrees, nranks, weight);
    let packed = pack_by_owner(state, nranks, solution);
    let destination: BTreeMap<CellKey, Rank> =
        state.forest.leaves().iter().copied().zip(owners.iter().copied()).collect();
    let (received, report) = repartition_transfer(&packed, &destination, fabric)?;
    let mut degree_of: HashMap<CellKey, u32> = HashMap::new();
    for shard in &received {
        for (k, payload) in shard.iter() {
            degree_of.insert(*k, payload_degree(payload)?);
        }
    }
    let degrees = state.forest.leaves().iter().map(|k| degree_of[k]).collect();
    Ok((MeshState { forest: state.forest.clone(), degrees, owners }, report.bytes))
}

fn metrics_row(
    cycle: u64,
    state: &MeshState,
    enumerated: &Enumerated,
    weight: WeightPolicy,
    repartition_bytes: u64,
    times: [f64; 3],
) -> CycleMetrics {
    let nranks = enumerated.views.len();
    let (_, weights) = partition(&state.degrees, nranks, weight);
    let loads = rank_loads(&weights, &state.owners, nranks);
    let counts = count_by_kind(&enumerated.constraints);
    let numbers = &enumerated.distribution.ranks[0].numbers;
    CycleMetrics {
        cycle,
        cells: state.forest.len(),
        dofs: numbers.total(),
        rank_dofs: numbers.per_rank.clone(),
        weight_imbalance: imbalance(&loads),
        rank_loads: loads,
        hp_constraints: counts.get(&ConstraintKind::Hp).copied().unwrap_or(0),
        hanging_constraints: counts.get(&ConstraintKind::Hanging).copied().unwrap_or(0),
        identity_constraints: counts.get(&ConstraintKind::Identity).copied().unwrap_or(0),
        repartition_bytes,
        t_enumerate_ms: times[0],
        t_adapt_ms: times[1],
        t_partition_ms: times[2],
        max_level: state.forest.max_level(),
        max_degree_jump: max_degree_jump(&state.forest, &state.degrees),
    }
}

fn load_restart(config: &Config, prefix: &std::path::Path) -> Result<(MeshState, u64), DriverError> {
    let (shards, cycle) = load_sharded(prefix)?;
    let mut cells: Vec<(CellKey, u32)> = Vec::new();
    for shard in &shards {
        for (k, payload) in shard.iter() {
            cells.push((*k, payload_degree(payload)?));
        }
    }
    cells.sort_by_key(|a| a.0);
    let forest = Forest::from_leaves(connectivity_for(config.fixture), cells.iter().map(|c| c.0).collect())?;
    let degrees: Vec<u32> = cells.iter().map(|c| c.1).collect();
    if degrees.iter().any(|d| !(config.min_degree..=config.max_degree).contains(d)) {
        return Err(DriverError::Restart("checkpoint degrees outside --degrees".into()));
    }
    // Shards of a run with more ranks than this one are folded onto the
    // available ranks; rebalancing happens before the first enumeration.
    let mut owners = Vec::with_capacity(cells.len());
    let by_shard: HashMap<CellKey, Rank> =
        shards.iter().enumerate().flat_map(|(p, s)| s.cells.iter().map(move |k| (*k, p % config.ranks))).collect();
    for (k, _) in &cells {
        owners.push(by_shard[k]);
    }
    Ok((MeshState { forest, degrees, owners }, cycle))
}

/// Runs the configured cycles. Row 0 of a fresh run is the initial mesh; a
/// restart continues with the cycle after the checkpointed one.
pub fn run(config: &Config) -> Result<RunOutput, DriverError> {
    config.validate()?;
    let collection = collection_for(config)?;
    let fabric = SimFabric::new(config.ranks);
    let weight = WeightPolicy::new(config.exponent);
    let solution = ExactSolution::default();
    let policy = MarkingPolicy {
        refine_frac: config.refine_frac,
        coarsen_frac: config.coarsen_frac,
        p_frac: config.p_frac,
        min_degree: config.min_degree,
        max_degree: config.max_degree,
    };
    let timed = |t: f64| if config.zero_timings { 0.0 } else { t };

    let (mut state, first_cycle) = match &config.restart {
        Some(prefix) => {
            let (state, cycle) = load_restart(config, prefix)?;
            (state, cycle + 1)
        }
        None => {
            let (forest, degrees) = initial_mesh(config)?;
            if let Some(d) = degrees.iter().find(|d| !(config.min_degree..=config.max_degree).contains(*d)) {
                return Err(DriverError::Config(format!("initial degree {d} outside --degrees")));
            }
            let owners = vec![0; forest.len()];
            (MeshState { forest, degrees, owners }, 0)
        }
    };

    if let Some(dir) = &config.output {
        fs::create_dir_all(dir)?;
    }
    let mut rows = Vec::new();
    for cycle in first_cycle..=config.cycles {
        let sw = Stopwatch::start();
        if cycle > 0 {
            state = adapt(&state, &policy, &solution, &fabric)?;
        }
        let t_adapt = sw.elapsed_ms();

        let sw = Stopwatch::start();
        let moved = if cycle == 0 {
            state.owners = partition(&state.degrees, config.ranks, weight).0;
            0
        } else {
            let (next, bytes) = rebalance(&state, weight, &solution, &fabric)?;
            state = next;
            bytes
        };
        let t_partition = sw.elapsed_ms();

        let sw = Stopwatch::start();
        let enumerated = enumerate_mesh(&state.forest, &state.degrees, &state.owners, &collection, &fabric)?;
        let t_enumerate = sw.elapsed_ms();

        rows.push(metrics_row(
            cycle,
            &state,
            &enumerated,
            weight,
            moved,
            [timed(t_enumerate), timed(t_adapt), timed(t_partition)],
        ));

        if config.dump_mesh {
            if let Some(dir) = &config.output {
                fs::write(
                    dir.join(format!("mesh_cycle{cycle}.txt")),
                    state.forest.dump(&state.degrees, &state.owners),
                )?;
                fs::write(
                    dir.join(format!("constraints_cycle{cycle}.txt")),
                    format_constraints(&enumerated.constraints),
                )?;
            }
        }
    }

    if let Some(dir) = &config.output {
        fs::write(dir.join("metrics.csv"), to_csv(&rows))?;
    }
    if let Some(prefix) = &config.checkpoint {
        let last = rows.last().map(|r| r.cycle).unwrap_or(first_cycle.saturating_sub(1));
        if let Some(parent) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        save_sharded(prefix, &pack_by_owner(&state, config.ranks, &solution), last)?;
    }
    Ok(RunOutput { rows, state })
}
