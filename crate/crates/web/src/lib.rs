//! Browser bindings: enumerate a fixed example mesh, run adaptive cycles on
//! the L-shape, and repartition the adapted mesh. Every export returns JSON.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use hpdof::constraints::format_constraints;
use hpdof::element::LagrangeElement;
use hpdof::forest::{CellKey, Connectivity, TREE_SIZE};
use hpdof::partition::{partition_by_weight, rank_loads, WeightPolicy};
use hpdof::{Rational, SimFabric};
use hpdriver::driver::{collection_for, enumerate_mesh, initial_mesh, partition, MeshState};
use hpdriver::{run, Config, CycleMetrics, DriverError, Fixture};

#[derive(Debug, Serialize)]
pub struct CellView {
    pub x: f64,
    pub y: f64,
    pub size: f64,
    pub level: u8,
    pub degree: u32,
    pub owner: usize,
}

#[derive(Debug, Serialize)]
pub struct DofView {
    pub x: f64,
    pub y: f64,
    pub index: u64,
    pub owner: usize,
}

#[derive(Debug, Serialize)]
pub struct FixtureView {
    pub cells: Vec<CellView>,
    pub dofs: Vec<DofView>,
    pub total: u64,
    pub per_rank: Vec<u64>,
    pub constraints: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct MetricsView {
    pub cycle: u64,
    pub cells: usize,
    pub dofs: u64,
    pub rank_dofs: Vec<u64>,
    pub weight_imbalance: f64,
    pub hp_constraints: usize,
    pub hanging_constraints: usize,
    pub identity_constraints: usize,
    pub repartition_bytes: u64,
}

impl From<&CycleMetrics> for MetricsView {
    fn from(m: &CycleMetrics) -> Self {
        MetricsView {
            cycle: m.cycle,
            cells: m.cells,
            dofs: m.dofs,
            rank_dofs: m.rank_dofs.clone(),
            weight_imbalance: m.weight_imbalance,
            hp_constraints: m.hp_constraints,
            hanging_constraints: m.hanging_constraints,
            identity_constraints: m.identity_constraints,
            repartition_bytes: m.repartition_bytes,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct AdaptiveView {
    pub cells: Vec<CellView>,
    pub rows: Vec<MetricsView>,
}

#[derive(Debug, Serialize)]
pub struct PartitionView {
    pub cells: Vec<CellView>,
    pub loads: Vec<u64>,
    pub imbalance: f64,
}

fn to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn cell_view(conn: &Connectivity, key: &CellKey, degree: u32, owner: usize) -> CellView {
    let a = conn.global_anchor(key);
    let scale = TREE_SIZE as f64;
    CellView {
        x: a.x as f64 / scale,
        y: a.y as f64 / scale,
        size: key.size() as f64 / scale,
        level: key.level,
        degree,
        owner,
    }
}

fn cell_views(state: &MeshState) -> Vec<CellView> {
    let conn = state.forest.connectivity();
    state
        .forest
        .leaves()
        .iter()
        .zip(&state.degrees)
        .zip(&state.owners)
        .map(|((k, &d), &o)| cell_view(conn, k, d, o))
        .collect()
}

/// DoF numbers of `fig1` or `fig2` on `ranks` ranks.
pub fn fixture_view(name: &str, ranks: usize) -> Result<FixtureView, DriverError> {
    let fixture: Fixture = name.parse()?;
    let config = Config { fixture: Some(fixture), ranks, cycles: 0, ..Default::default() };
    config.validate()?;
    let (forest, degrees) = initial_mesh(&config)?;
    let (owners, _) = partition(&degrees, ranks, WeightPolicy::default());
    let fabric = SimFabric::new(ranks);
    let e = enumerate_mesh(&forest, &degrees, &owners, &collection_for(&config)?, &fabric)?;
    let conn = forest.connectivity();
    let numbers = &e.distribution.ranks[0].numbers;
    let mut dofs = Vec::new();
    for cell in &e.cells {
        let view = cell_view(conn, &cell.key, cell.degree, 0);
        let points = LagrangeElement::new(cell.degree)?.cell_support_points();
        for ((u, v), &index) in points.into_iter().zip(&cell.dofs) {
            dofs.push(DofView {
                x: view.x + view.size * to_f64(u),
                y: view.y + view.size * to_f64(v),
                index,
                owner: numbers.owner_of(index)?,
            });
        }
    }
    dofs.sort_by(|a, b| a.index.cmp(&b.index).then(a.x.total_cmp(&b.x)).then(a.y.total_cmp(&b.y)));
    let state = MeshState { forest, degrees, owners };
    Ok(FixtureView {
        cells: cell_views(&state),
        dofs,
        total: numbers.total(),
        per_rank: numbers.per_rank.clone(),
        constraints: format_constraints(&e.constraints).lines().map(str::to_string).collect(),
    })
}

/// Adaptive cycles on the L-shape with the driver defaults otherwise.
pub fn adaptive_view(
    ranks: usize,
    cycles: u64,
    initial_refines: u8,
    exponent: f64,
) -> Result<AdaptiveView, DriverError> {
    let config = Config { ranks, cycles, initial_refines, exponent, zero_timings: true, ..Default::default() };
    let out = run(&config)?;
    Ok(AdaptiveView { cells: cell_views(&out.state), rows: out.rows.iter().map(MetricsView::from).collect() })
}

/// Adapts on one rank, then partitions the final mesh with `ranks` and `exponent`.
pub fn partition_view(
    cycles: u64,
    initial_refines: u8,
    ranks: usize,
    exponent: f64,
) -> Result<PartitionView, DriverError> {
    let config = Config { ranks: 1, cycles, initial_refines, zero_timings: true, ..Default::default() };
    if ranks == 0 || !(exponent.is_finite() && exponent > 0.0) {
        return Err(DriverError::Config("ranks must be positive and the exponent a positive number".into()));
    }
    let mut state = run(&config)?.state;
    let policy = WeightPolicy::new(exponent);
    let (_, weights) = partition(&state.degrees, ranks, policy);
    state.owners = partition_by_weight(&weights, ranks);
    let loads = rank_loads(&weights, &state.owners, ranks);
    Ok(PartitionView { cells: cell_views(&state), imbalance: hpdof::partition::imbalance(&loads), loads })
}

fn to_js<T: Serialize>(result: Result<T, DriverError>) -> Result<String, JsError> {
    let value = result.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = enumerateFixture)]
pub fn enumerate_fixture(name: &str, ranks: usize) -> Result<String, JsError> {
    to_js(fixture_view(name, ranks))
}

#[wasm_bindgen(js_name = runCycles)]
pub fn run_cycles(ranks: usize, cycles: u32, initial_refines: u8, exponent: f64) -> Result<String, JsError> {
    to_js(adaptive_view(ranks, cycles as u64, initial_refines, exponent))
}

#[wasm_bindgen(js_name = partitionMesh)]
pub fn partition_mesh(cycles: u32, initial_refines: u8, ranks: usize, exponent: f64) -> Result<String, JsError> {
    to_js(partition_view(cycles as u64, initial_refines, ranks, exponent))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig2_view() {
        let v = fixture_view("fig2", 2).unwrap();
        assert_eq!(v.total, 57);
        assert_eq!(v.per_rank, vec![29, 28]);
        assert_eq!(v.cells.len(), 4);
        let mut indices: Vec<u64> = v.dofs.iter().map(|d| d.index).collect();
        indices.dedup();
        assert_eq!(indices, (0..57).collect::<Vec<u64>>());
        // Shared indices sit at one point.
        for w in v.dofs.windows(2).filter(|w| w[0].index == w[1].index) {
            assert!((w[0].x - w[1].x).abs() < 1e-12 && (w[0].y - w[1].y).abs() < 1e-12);
        }
        assert!(fixture_view("fig7", 1).is_err());
    }

    #[test]
    fn adaptive_and_partition_views() {
        let a = adaptive_view(2, 2, 2, 1.9).unwrap();
        assert_eq!(a.rows.len(), 3);
        assert_eq!(a.cells.len(), a.rows[2].cells);
        let json = serde_json::to_string(&a).unwrap();
        assert!(json.contains("\"rows\""));
        let p = partition_view(2, 2, 4, 3.0).unwrap();
        assert_eq!(p.loads.len(), 4);
        assert!(p.imbalance >= 1.0);
        assert!(p.cells.iter().all(|c| c.owner < 4));
        assert!(partition_view(1, 1, 0, 1.0).is_err());
    }
}
