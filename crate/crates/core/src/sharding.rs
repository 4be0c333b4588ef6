//! Embedding-table placement: equal-column slicing of oversized tables, a
//! compute + communication cost function, LPT placement, and an exhaustive
//! optimality oracle.

use serde::{Deserialize, Serialize};

use crate::error::PlanError;

/// Guard on `devices^shards` for the exhaustive search.
pub const BRUTE_FORCE_GUARD: u64 = 10_000_000;

/// One embedding table as the planner sees it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub rows: usize,
    /// Embedding dimension of this table.
    pub cols: usize,
    pub dtype_bytes: usize,
    /// Expected pooled lookups per sample.
    pub pooled_lookups: f64,
}

impl TableSpec {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.rows == 0 || self.cols == 0 || self.dtype_bytes == 0 {
            return Err(PlanError::BadInput(format!(
                "table '{}' has a zero extent",
                self.name
            )));
        }
        if !(self.pooled_lookups > 0.0) {
            return Err(PlanError::BadInput(format!(
                "table '{}' needs positive pooled_lookups",
                self.name
            )));
        }
        Ok(())
    }
}

/// Linear weights of the two cost terms. With `alpha = 1/device_flops` and
/// `beta = 1/scaleout_bandwidth` both terms are in seconds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CostWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl CostWeights {
    pub fn unit() -> Self {
        Self { alpha: 1.0, beta: 1.0 }
    }

    pub fn from_rates(device_flops: f64, scaleout_bandwidth: f64) -> Self {
        Self {
            alpha: 1.0 / device_flops,
            beta: 1.0 / scaleout_bandwidth,
        }
    }
}

/// A contiguous column range of one table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShardSpec {
    pub table: String,
    pub col_start: usize,
    pub col_end: usize,
    pub rows: usize,
    pub dtype_bytes: usize,
    pub pooled_lookups: f64,
}

impl ShardSpec {
    pub fn cols(&self) -> usize {
        self.col_end - self.col_start
    }

    /// Resident bytes of this shard's slice of the table.
    pub fn storage_bytes(&self) -> f64 {
        (self.rows * self.cols() * self.dtype_bytes) as f64
    }
}

/// A shard together with its placement cost.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShardCost {
    pub shard: ShardSpec,
    pub cost: f64,
}

/// `alpha * (batch * pooled * cols) + beta * (batch * cols * dtype_bytes)`:
/// the first term tracks lookup compute, the second the bytes the shard puts
/// on the scale-out wire.
pub fn shard_cost(
    cols: usize,
    pooled_lookups: f64,
    dtype_bytes: usize,
    batch: f64,
    weights: &CostWeights,
) -> f64 {
    let compute = batch * pooled_lookups * cols as f64;
    let comm = batch * (cols * dtype_bytes) as f64;
    weights.alpha * compute + weights.beta * comm
}

/// Slice each table whose cost exceeds the mean per-device load into equal
/// column shards (counts differing by at most one); cheaper tables stay whole.
pub fn slice_tables(
    tables: &[TableSpec],
    num_devices: usize,
    batch: f64,
    weights: &CostWeights,
) -> Result<Vec<ShardCost>, PlanError> {
    if num_devices == 0 {
        return Err(PlanError::BadInput("need at least one device".into()));
    }
    if !(batch > 0.0) {
        return Err(PlanError::BadInput(format!("batch must be positive, got {batch}")));
    }
    for t in tables {
        t.validate()?;
    }

    let table_cost =
        |t: &TableSpec| shard_cost(t.cols, t.pooled_lookups, t.dtype_bytes, batch, weights);
    let total: f64 = tables.iter().map(table_cost).sum();
    let cap = total / num_devices as f64;

    let mut out = Vec::new();
    for t in tables {
        let cost = table_cost(t);
        let shards = if cost > cap { (cost / cap).ceil() as usize } else { 1 };
        if t.cols < shards {
            return Err(PlanError::UnsplittableTable {
                table: t.name.clone(),
                cols: t.cols,
                shards,
            });
        }
        let base = t.cols / shards;
        let remainder = t.cols % shards;
        let mut col = 0;
        for s in 0..shards {
            let width = base + usize::from(s < remainder);
            let shard = ShardSpec {
                table: t.name.clone(),
                col_start: col,
                col_end: col + width,
                rows: t.rows,
                dtype_bytes: t.dtype_bytes,
                pooled_lookups: t.pooled_lookups,
            };
            col += width;
            let cost = shard_cost(width, t.pooled_lookups, t.dtype_bytes, batch, weights);
            out.push(ShardCost { shard, cost });
        }
        debug_assert_eq!(col, t.cols);
    }
    Ok(out)
}

/// Shard-to-device assignment with per-device load totals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Placement {
    /// `(shard, device)` in the original shard order.
    pub assignments: Vec<(ShardCost, usize)>,
    pub device_loads: Vec<f64>,
    pub makespan: f64,
}

impl Placement {
    pub fn num_devices(&self) -> usize {
        self.device_loads.len()
    }

    /// Largest per-device storage footprint across the placement.
    pub fn max_device_storage_bytes(&self) -> f64 {
        let mut per_device = vec![0.0; self.device_loads.len()];
        for (sc, dev) in &self.assignments {
            per_device[*dev] += sc.shard.storage_bytes();
        }
        per_device.iter().copied().fold(0.0, f64::max)
    }
}

/// Longest-processing-time placement: walk shards in descending cost order
/// (ties by original index) and give each to the least-loaded device (ties by
/// device index). An empty shard list yields an empty placement.
pub fn lpt_place(shards: &[ShardCost], num_devices: usize) -> Result<Placement, PlanError> {
    if num_devices == 0 {
        return Err(PlanError::BadInput("need at least one device".into()));
    }
    let mut order: Vec<usize> = (0..shards.len()).collect();
    order.sort_by(|&a, &b| {
        shards[b]
            .cost
            .total_cmp(&shards[a].cost)
            .then(a.cmp(&b))
    });

    let mut loads = vec![0.0f64; num_devices];
    let mut device_of = vec![0usize; shards.len()];
    for &i in &order {
        let dev = loads
            .iter()
            .enumerate()
            .min_by(|(ai, al), (bi, bl)| al.total_cmp(bl).then(ai.cmp(bi)))
            .map(|(d, _)| d)
            .expect("num_devices >= 1");
        device_of[i] = dev;
        loads[dev] += shards[i].cost;
    }

    let makespan = loads.iter().copied().fold(0.0, f64::max);
    Ok(Placement {
        assignments: shards.iter().cloned().zip(device_of).collect(),
        device_loads: loads,
        makespan,
    })
}

/// Exhaustive minimum makespan over all `devices^shards` assignments.
/// Refuses instances beyond [`BRUTE_FORCE_GUARD`].
pub fn brute_force_place(costs: &[f64], num_devices: usize) -> Result<f64, PlanError> {
    if num_devices == 0 {
        return Err(PlanError::BadInput("need at least one device".into()));
    }
    let states = (num_devices as u64).checked_pow(costs.len() as u32);
    match states {
        Some(s) if s <= BRUTE_FORCE_GUARD => {}
        _ => {
            return Err(PlanError::InstanceTooLarge {
                devices: num_devices,
                shards: costs.len(),
                guard: BRUTE_FORCE_GUARD,
            })
        }
    }
    if costs.is_empty() {
        return Ok(0.0);
    }

    // Descending order tightens the bound early; the search stays exhaustive.
    let mut sorted = costs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));

    fn descend(costs: &[f64], idx: usize, loads: &mut [f64], best: &mut f64) {
        if idx == costs.len() {
            let makespan = loads.iter().copied().fold(0.0, f64::max);
            if makespan < *best {
                *best = makespan;
            }
            return;
        }
        for d in 0..loads.len() {
            if loads[d] + costs[idx] >= *best {
                continue;
            }
            loads[d] += costs[idx];
            descend(costs, idx + 1, loads, best);
            loads[d] -= costs[idx];
            // Identical device loads are symmetric; trying one empty device
            // covers them all.
            if loads[d] == 0.0 {
                break;
            }
        }
    }

    let mut best = sorted.iter().sum::<f64>();
    let mut loads = vec![0.0; num_devices];
    descend(&sorted, 0, &mut loads, &mut best);
    Ok(best)
}

/// Upper bound on LPT's makespan relative to the optimum for `m` devices.
pub fn lpt_bound(num_devices: usize) -> f64 {
    4.0 / 3.0 - 1.0 / (3.0 * num_devices as f64)
}
