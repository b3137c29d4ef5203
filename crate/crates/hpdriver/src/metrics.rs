use std::fmt::Write as _;

pub const CSV_HEADER: &str = "cycle,cells,dofs,min_rank_dofs,max_rank_dofs,weight_imbalance,hp_constraints,hanging_constraints,identity_constraints,repartition_bytes,t_enumerate_ms,t_adapt_ms,t_partition_ms";

/// One row of the metrics file plus a few diagnostics kept out of it.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleMetrics {
    pub cycle: u64,
    pub cells: usize,
    pub dofs: u64,
    pub rank_dofs: Vec<u64>,
    pub rank_loads: Vec<u64>,
    pub weight_imbalance: f64,
    pub hp_constraints: usize,
    pub hanging_constraints: usize,
    pub identity_constraints: usize,
    pub repartition_bytes: u64,
    pub t_enumerate_ms: f64,
    pub t_adapt_ms: f64,
    pub t_partition_ms: f64,
    pub max_level: u8,
    pub max_degree_jump: u32,
}

impl CycleMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{},{},{},{},{:.3},{:.3},{:.3}",
            self.cycle,
            self.cells,
            self.dofs,
            self.rank_dofs.iter().min().unwrap_or(&0),
            self.rank_dofs.iter().max().unwrap_or(&0),
            self.weight_imbalance,
            self.hp_constraints,
            self.hanging_constraints,
            self.identity_constraints,
            self.repartition_bytes,
            self.t_enumerate_ms,
            self.t_adapt_ms,
            self.t_partition_ms,
        )
    }
}

pub fn to_csv(rows: &[CycleMetrics]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// Wall-clock stopwatch; reads zero where no clock is available.
#[derive(Clone, Copy, Debug)]
pub struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    pub fn start() -> Self {
        Stopwatch {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    pub fn elapsed_ms(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64() * 1e3
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_format() {
        let m = CycleMetrics {
            cycle: 0,
            cells: 4,
            dofs: 57,
            rank_dofs: vec![29, 28],
            rank_loads: vec![518, 518],
            weight_imbalance: 1.0,
            hp_constraints: 4,
            hanging_constraints: 0,
            identity_constraints: 0,
            repartition_bytes: 0,
            t_enumerate_ms: 0.0,
            t_adapt_ms: 0.0,
            t_partition_ms: 0.0,
            max_level: 1,
            max_degree_jump: 2,
        };
        assert_eq!(m.csv_row(), "0,4,57,28,29,1.000000,4,0,0,0,0.000,0.000,0.000");
        assert!(to_csv(&[m]).starts_with("cycle,cells,dofs,"));
    }
}
