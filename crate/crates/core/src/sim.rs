//! Analytical per-iteration simulator for the three training paradigms.
//!
//! Nothing here executes on an accelerator: the simulator composes the ring
//! collective model with a flops-based compute model to produce phase
//! timelines, byte ledgers, peak-memory verdicts, and paradigm comparisons.
//!
//! Schedule modeled per iteration: embedding all-to-all (forward) -> dense
//! forward (sharded paradigms allgather each layer's weights on the critical
//! path) -> dense backward (allgather again plus reducescatter for sharded
//! paradigms) -> gradient sync (data-parallel allreduce, or the cross-host
//! allreduce of each intra-host shard; both may hide under backward compute)
//! -> embedding all-to-all (backward) with the sparse update -> optimizer.

use serde::{Deserialize, Serialize};

use crate::collective::{collective_bytes, collective_time, CollectiveKind};
use crate::ensemble::NetworkSpec;
use crate::error::{ModelError, SimError};
use crate::sharding::Placement;

/// Modeled optimizer cost per dense parameter, in flops.
const OPTIMIZER_FLOPS_PER_PARAM: f64 = 10.0;

/// Backward compute relative to forward.
const BACKWARD_FLOPS_FACTOR: f64 = 2.0;

/// Cluster topology and rates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub hosts: usize,
    pub gpus_per_host: usize,
    /// Per-GPU high-bandwidth memory, bytes.
    pub hbm_bytes: f64,
    /// Per-GPU peak flops.
    pub gpu_peak_flops: f64,
    /// Fraction of peak the compute model credits.
    pub efficiency: f64,
    /// Per-GPU intra-host link, bytes/s and seconds.
    pub intra_host_bandwidth: f64,
    pub intra_host_latency: f64,
    /// Per-GPU share of the cross-host link, bytes/s and seconds.
    pub cross_host_bandwidth: f64,
    pub cross_host_latency: f64,
}

impl Default for ClusterSpec {
    /// A 16-host pod of 8 GPUs each: 40 GB HBM per GPU, 600 GB/s intra-host
    /// links, 25 GB/s per-GPU cross-host share.
    fn default() -> Self {
        Self {
            hosts: 16,
            gpus_per_host: 8,
            hbm_bytes: 40e9,
            gpu_peak_flops: 312e12,
            efficiency: 0.4,
            intra_host_bandwidth: 600e9,
            intra_host_latency: 2e-6,
            cross_host_bandwidth: 25e9,
            cross_host_latency: 10e-6,
        }
    }
}

impl ClusterSpec {
    pub fn world(&self) -> usize {
        self.hosts * self.gpus_per_host
    }

    pub fn effective_flops(&self) -> f64 {
        self.gpu_peak_flops * self.efficiency
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.hosts == 0 || self.gpus_per_host == 0 {
            return Err(SimError::BadInput("hosts and gpus_per_host must be >= 1".into()));
        }
        if !(self.hbm_bytes > 0.0
            && self.gpu_peak_flops > 0.0
            && self.efficiency > 0.0
            && self.intra_host_bandwidth > 0.0
            && self.cross_host_bandwidth > 0.0)
        {
            return Err(SimError::BadInput("rates must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParadigmKind {
    Dp,
    Fsdp,
    Hsdp,
}

impl ParadigmKind {
    pub fn name(self) -> &'static str {
        match self {
            ParadigmKind::Dp => "dp",
            ParadigmKind::Fsdp => "fsdp",
            ParadigmKind::Hsdp => "hsdp",
        }
    }
}

fn default_width() -> f64 {
    4.0
}

/// Paradigm choice plus its knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParadigmSpec {
    pub kind: ParadigmKind,
    #[serde(default)]
    pub activation_checkpointing: bool,
    #[serde(default)]
    pub cpu_offload: bool,
    /// Bytes per element on every collective wire (embedding all-to-all
    /// included); 4 is unquantized, 2 models the half-width collectives.
    #[serde(default = "default_width")]
    pub collective_bytes: f64,
    /// Bytes per stored embedding-table element.
    #[serde(default = "default_width")]
    pub embedding_bytes: f64,
    /// Hide one layer's weight allgather behind compute at the price of one
    /// extra layer of resident parameters.
    #[serde(default)]
    pub prefetch: bool,
}

impl ParadigmSpec {
    pub fn new(kind: ParadigmKind) -> Self {
        Self {
            kind,
            activation_checkpointing: false,
            cpu_offload: false,
            collective_bytes: 4.0,
            embedding_bytes: 4.0,
            prefetch: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.collective_bytes > 0.0 && self.embedding_bytes > 0.0) {
            return Err(SimError::BadInput("byte widths must be positive".into()));
        }
        Ok(())
    }

    fn wire_scale(&self) -> f64 {
        self.collective_bytes / 4.0
    }
}

/// One dense sub-block the sharded paradigms gather as a unit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerBytes {
    pub param_bytes: f64,
    pub activation_bytes_per_sample: f64,
}

/// Byte-level view of the dense model (embedding tables live in the
/// sharding plan, not here). Parameter bytes are normalized to 4 bytes per
/// scalar; collective widths rescale them on the wire.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseModelProfile {
    /// Total dense parameter bytes `S`.
    pub dense_param_bytes: f64,
    /// Gatherable blocks: feature arch, each stacked layer, head.
    pub layers: Vec<LayerBytes>,
    pub activation_bytes_per_sample: f64,
    pub forward_flops_per_sample: f64,
    /// Optimizer state bytes per resident parameter byte (2.0 for Adam).
    pub optimizer_state_multiplier: f64,
}

impl DenseModelProfile {
    /// Derive the profile from a network description at 4 bytes/parameter.
    pub fn from_network(spec: &NetworkSpec) -> Result<Self, ModelError> {
        const BYTES: f64 = 4.0;
        let flops = spec.flops_breakdown()?;
        let (feat_act, layer_acts, head_act) = spec.activation_elements()?;

        let mut layers = vec![LayerBytes {
            param_bytes: spec.feature_param_count() as f64 * BYTES,
            activation_bytes_per_sample: feat_act as f64 * BYTES,
        }];
        for (&params, &acts) in spec.layer_param_counts()?.iter().zip(&layer_acts) {
            layers.push(LayerBytes {
                param_bytes: params as f64 * BYTES,
                activation_bytes_per_sample: acts as f64 * BYTES,
            });
        }
        layers.push(LayerBytes {
            param_bytes: spec.head_param_count() as f64 * BYTES,
            activation_bytes_per_sample: head_act as f64 * BYTES,
        });

        Ok(Self {
            dense_param_bytes: layers.iter().map(|l| l.param_bytes).sum(),
            activation_bytes_per_sample: layers
                .iter()
                .map(|l| l.activation_bytes_per_sample)
                .sum(),
            layers,
            forward_flops_per_sample: flops.total() as f64,
            optimizer_state_multiplier: 2.0,
        })
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let total: f64 = self.layers.iter().map(|l| l.param_bytes).sum();
        if (total - self.dense_param_bytes).abs() > 1e-6 * self.dense_param_bytes.max(1.0) {
            return Err(SimError::BadInput(format!(
                "layer bytes sum to {total}, profile claims {}",
                self.dense_param_bytes
            )));
        }
        Ok(())
    }

    pub fn largest_layer_param_bytes(&self) -> f64 {
        self.layers.iter().map(|l| l.param_bytes).fold(0.0, f64::max)
    }

    pub fn largest_layer_activation_bytes(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.activation_bytes_per_sample)
            .fold(0.0, f64::max)
    }
}

/// Per-GPU memory account.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryFootprint {
    pub param_bytes: f64,
    pub gradient_bytes: f64,
    pub optimizer_bytes: f64,
    pub activation_bytes: f64,
    pub embedding_bytes: f64,
    pub total_bytes: f64,
    pub feasible: bool,
}

/// Peak per-GPU bytes under the paradigm's residency rules and the verdict
/// against HBM. `embedding_shard_bytes` is the largest per-device table
/// footprint from the placement (at 4 bytes per element).
pub fn memory_footprint(
    paradigm: &ParadigmSpec,
    profile: &DenseModelProfile,
    cluster: &ClusterSpec,
    batch_per_gpu: f64,
    embedding_shard_bytes: f64,
) -> MemoryFootprint {
    let s = profile.dense_param_bytes;
    let world = cluster.world() as f64;
    let g = cluster.gpus_per_host as f64;
    let working_set = profile.largest_layer_param_bytes();

    // With one GPU per host the intra-host shard group is the whole model,
    // so the paradigm degenerates to plain sharding across hosts.
    let kind = effective_kind(paradigm.kind, cluster);

    let (shard, gathered) = match kind {
        ParadigmKind::Dp => (s, 0.0),
        ParadigmKind::Fsdp => (s / world, working_set),
        ParadigmKind::Hsdp => (s / g, working_set),
    };
    let prefetch_extra = if paradigm.prefetch && kind != ParadigmKind::Dp {
        working_set
    } else {
        0.0
    };

    let param_bytes = shard + gathered + prefetch_extra;
    let gradient_bytes = shard + gathered;
    let optimizer_bytes = if paradigm.cpu_offload {
        0.0
    } else {
        profile.optimizer_state_multiplier * shard
    };
    let activation_bytes = if paradigm.activation_checkpointing {
        batch_per_gpu * profile.largest_layer_activation_bytes()
    } else {
        batch_per_gpu * profile.activation_bytes_per_sample
    };
    let embedding = embedding_shard_bytes * (paradigm.embedding_bytes / 4.0);

    let total_bytes =
        param_bytes + gradient_bytes + optimizer_bytes + activation_bytes + embedding;
    MemoryFootprint {
        param_bytes,
        gradient_bytes,
        optimizer_bytes,
        activation_bytes,
        embedding_bytes: embedding,
        total_bytes,
        feasible: total_bytes <= cluster.hbm_bytes,
    }
}

fn effective_kind(kind: ParadigmKind, cluster: &ClusterSpec) -> ParadigmKind {
    if kind == ParadigmKind::Hsdp && cluster.gpus_per_host == 1 {
        ParadigmKind::Fsdp
    } else {
        kind
    }
}

/// Per-phase seconds of one iteration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub embedding_forward: f64,
    pub dense_forward: f64,
    pub dense_backward: f64,
    /// Gradient sync left exposed after hiding under backward compute.
    pub gradient_sync: f64,
    pub embedding_backward: f64,
    pub optimizer: f64,
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.embedding_forward
            + self.dense_forward
            + self.dense_backward
            + self.gradient_sync
            + self.embedding_backward
            + self.optimizer
    }
}

/// Wire bytes one GPU transmits per iteration, split by link class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WireBytes {
    pub intra_host: f64,
    pub cross_host: f64,
}

impl WireBytes {
    pub fn total(&self) -> f64 {
        self.intra_host + self.cross_host
    }
}

/// Everything one simulated iteration produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub paradigm: ParadigmKind,
    pub global_batch: f64,
    pub phases: PhaseTimes,
    /// Gradient sync before overlap, for reference.
    pub gradient_sync_full: f64,
    pub dense_bytes: WireBytes,
    pub embedding_bytes: WireBytes,
    pub memory: MemoryFootprint,
    pub feasible: bool,
    /// Seconds per iteration; infinite when infeasible.
    pub iteration_time: f64,
    /// Samples per second; zero when infeasible.
    pub throughput_qps: f64,
}

impl SimReport {
    pub fn total_bytes(&self) -> WireBytes {
        WireBytes {
            intra_host: self.dense_bytes.intra_host + self.embedding_bytes.intra_host,
            cross_host: self.dense_bytes.cross_host + self.embedding_bytes.cross_host,
        }
    }
}

/// Embedding context the simulator needs from the placement.
struct EmbeddingLoad {
    /// Output elements per sample across all tables.
    output_elements_per_sample: f64,
    /// Largest per-device lookup volume (elements) at batch 1.
    max_device_elements_per_sample: f64,
    /// Largest per-device stored bytes.
    max_storage_bytes: f64,
}

fn embedding_load(plan: &Placement) -> EmbeddingLoad {
    let mut seen = std::collections::BTreeMap::new();
    let devices = plan.num_devices().max(1);
    let mut per_device = vec![0.0f64; devices];
    for (sc, dev) in &plan.assignments {
        seen.insert(
            (sc.shard.table.clone(), sc.shard.col_start),
            sc.shard.cols(),
        );
        per_device[*dev] += sc.shard.pooled_lookups * sc.shard.cols() as f64;
    }
    EmbeddingLoad {
        output_elements_per_sample: seen.values().map(|&c| c as f64).sum(),
        max_device_elements_per_sample: per_device.iter().copied().fold(0.0, f64::max),
        max_storage_bytes: plan.max_device_storage_bytes(),
    }
}

/// Simulate one full training iteration.
pub fn simulate_iteration(
    paradigm: &ParadigmSpec,
    profile: &DenseModelProfile,
    cluster: &ClusterSpec,
    plan: &Placement,
    global_batch: f64,
) -> Result<SimReport, SimError> {
    cluster.validate()?;
    paradigm.validate()?;
    profile.validate()?;
    if !(global_batch > 0.0) {
        return Err(SimError::BadInput("global batch must be positive".into()));
    }

    let kind = effective_kind(paradigm.kind, cluster);
    let world = cluster.world();
    let g = cluster.gpus_per_host;
    let h = cluster.hosts;
    let batch_per_gpu = global_batch / world as f64;
    let flops = cluster.effective_flops();
    let scale = paradigm.wire_scale();
    let s = profile.dense_param_bytes;

    let emb = embedding_load(plan);
    let memory = memory_footprint(paradigm, profile, cluster, batch_per_gpu, emb.max_storage_bytes);

    let infeasible_report = |memory: MemoryFootprint| SimReport {
        paradigm: kind,
        global_batch,
        phases: PhaseTimes::default(),
        gradient_sync_full: 0.0,
        dense_bytes: WireBytes::default(),
        embedding_bytes: WireBytes::default(),
        memory,
        feasible: false,
        iteration_time: f64::INFINITY,
        throughput_qps: 0.0,
    };
    if !memory.feasible {
        return Ok(infeasible_report(memory));
    }

    // Embedding exchange: each GPU contributes its local batch's pooled
    // embedding rows; lookup compute follows the placement's busiest device.
    let a2a_payload = batch_per_gpu * emb.output_elements_per_sample * paradigm.collective_bytes;
    let a2a_time = collective_time(
        CollectiveKind::AllToAll,
        a2a_payload,
        world,
        cluster.cross_host_bandwidth,
        cluster.cross_host_latency,
    );
    let lookup_time = global_batch * emb.max_device_elements_per_sample / flops;
    let a2a_wire = collective_bytes(CollectiveKind::AllToAll, a2a_payload, world);

    // Dense compute. Discarding activations buys memory with one extra
    // forward of recompute during the backward pass.
    let forward_compute = batch_per_gpu * profile.forward_flops_per_sample / flops;
    let recompute = if paradigm.activation_checkpointing { 1.0 } else { 0.0 };
    let backward_compute = (BACKWARD_FLOPS_FACTOR + recompute) * forward_compute;

    // Per-layer weight gathers for the sharded paradigms.
    let (gather_group, gather_bw, gather_lat) = match kind {
        ParadigmKind::Dp => (1, cluster.cross_host_bandwidth, cluster.cross_host_latency),
        ParadigmKind::Fsdp => (world, cluster.cross_host_bandwidth, cluster.cross_host_latency),
        ParadigmKind::Hsdp => (g, cluster.intra_host_bandwidth, cluster.intra_host_latency),
    };
    let mut allgather_time = 0.0;
    let mut reducescatter_time = 0.0;
    let mut largest_layer_gather: f64 = 0.0;
    if kind != ParadigmKind::Dp {
        for layer in &profile.layers {
            let t = collective_time(
                CollectiveKind::AllGather,
                layer.param_bytes * scale,
                gather_group,
                gather_bw,
                gather_lat,
            );
            allgather_time += t;
            largest_layer_gather = largest_layer_gather.max(t);
            reducescatter_time += collective_time(
                CollectiveKind::ReduceScatter,
                layer.param_bytes * scale,
                gather_group,
                gather_bw,
                gather_lat,
            );
        }
    }
    let prefetch_hidden = if paradigm.prefetch { largest_layer_gather } else { 0.0 };

    let dense_forward = forward_compute + allgather_time - prefetch_hidden;
    let dense_backward = backward_compute + allgather_time + reducescatter_time;

    // Gradient sync: a full allreduce for DP, the cross-host allreduce of the
    // intra-host shard for the hybrid; either may hide under backward compute.
    let gradient_sync_full = match kind {
        ParadigmKind::Dp => collective_time(
            CollectiveKind::AllReduce,
            s * scale,
            world,
            cluster.cross_host_bandwidth,
            cluster.cross_host_latency,
        ),
        ParadigmKind::Fsdp => 0.0,
        ParadigmKind::Hsdp => collective_time(
            CollectiveKind::AllReduce,
            (s / g as f64) * scale,
            h,
            cluster.cross_host_bandwidth,
            cluster.cross_host_latency,
        ),
    };
    let gradient_sync = (gradient_sync_full - backward_compute).max(0.0);

    // Dense optimizer over the locally-updated parameters.
    let local_params = match kind {
        ParadigmKind::Dp => s / 4.0,
        ParadigmKind::Fsdp => s / 4.0 / world as f64,
        ParadigmKind::Hsdp => s / 4.0 / g as f64,
    };
    let mut optimizer = local_params * OPTIMIZER_FLOPS_PER_PARAM / flops;
    if paradigm.cpu_offload {
        // States round-trip over the host link each step.
        let shard_bytes = local_params * 4.0;
        optimizer += 2.0 * shard_bytes * (1.0 + profile.optimizer_state_multiplier)
            / cluster.intra_host_bandwidth;
    }

    let phases = PhaseTimes {
        embedding_forward: a2a_time + lookup_time,
        dense_forward,
        dense_backward,
        gradient_sync,
        embedding_backward: a2a_time + lookup_time,
        optimizer,
    };

    // Byte ledgers per GPU.
    let mut dense_bytes = WireBytes::default();
    match kind {
        ParadigmKind::Dp => {
            dense_bytes.cross_host =
                collective_bytes(CollectiveKind::AllReduce, s * scale, world);
        }
        ParadigmKind::Fsdp => {
            dense_bytes.cross_host = 2.0
                * collective_bytes(CollectiveKind::AllGather, s * scale, world)
                + collective_bytes(CollectiveKind::ReduceScatter, s * scale, world);
        }
        ParadigmKind::Hsdp => {
            dense_bytes.intra_host = 2.0
                * collective_bytes(CollectiveKind::AllGather, s * scale, g)
                + collective_bytes(CollectiveKind::ReduceScatter, s * scale, g);
            dense_bytes.cross_host =
                collective_bytes(CollectiveKind::AllReduce, (s / g as f64) * scale, h);
        }
    }
    let embedding_bytes = WireBytes {
        intra_host: 0.0,
        cross_host: 2.0 * a2a_wire,
    };

    let iteration_time = phases.total();
    Ok(SimReport {
        paradigm: kind,
        global_batch,
        phases,
        gradient_sync_full,
        dense_bytes,
        embedding_bytes,
        memory,
        feasible: true,
        iteration_time,
        throughput_qps: global_batch / iteration_time,
    })
}

/// One row of a paradigm sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub layers: usize,
    pub paradigm: ParadigmKind,
    pub feasible: bool,
    pub iteration_time: f64,
    pub throughput_qps: f64,
}

/// Simulate every (layer count, paradigm) cell of a sweep. Options other than
/// the paradigm kind are shared across cells.
pub fn compare_paradigms(
    profiles: &[(usize, DenseModelProfile)],
    options: &ParadigmSpec,
    cluster: &ClusterSpec,
    plan: &Placement,
    global_batch: f64,
) -> Result<Vec<ComparisonRow>, SimError> {
    if profiles.is_empty() {
        return Err(SimError::BadInput("empty sweep".into()));
    }
    let mut rows = Vec::with_capacity(profiles.len() * 3);
    for (layers, profile) in profiles {
        for kind in [ParadigmKind::Dp, ParadigmKind::Fsdp, ParadigmKind::Hsdp] {
            let paradigm = ParadigmSpec { kind, ..options.clone() };
            let report = simulate_iteration(&paradigm, profile, cluster, plan, global_batch)?;
            rows.push(ComparisonRow {
                layers: *layers,
                paradigm: kind,
                feasible: report.feasible,
                iteration_time: report.iteration_time,
                throughput_qps: report.throughput_qps,
            });
        }
    }
    Ok(rows)
}

/// Speedup of `optimized` over `base`; the two must come from the same
/// paradigm and both be feasible.
pub fn optimization_delta(base: &SimReport, optimized: &SimReport) -> Result<f64, SimError> {
    if base.paradigm != optimized.paradigm {
        return Err(SimError::ConfigMismatch(format!(
            "{} vs {}",
            base.paradigm.name(),
            optimized.paradigm.name()
        )));
    }
    if base.global_batch != optimized.global_batch {
        return Err(SimError::ConfigMismatch("global batch differs".into()));
    }
    if !base.feasible || !optimized.feasible {
        return Err(SimError::ConfigMismatch("both runs must be feasible".into()));
    }
    Ok(base.iteration_time / optimized.iteration_time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sharding::{lpt_place, ShardCost, ShardSpec};

    fn uniform_profile(layers: usize, layer_bytes: f64, act_bytes: f64, flops: f64) -> DenseModelProfile {
        DenseModelProfile {
            dense_param_bytes: layers as f64 * layer_bytes,
            layers: (0..layers)
                .map(|_| LayerBytes {
                    param_bytes: layer_bytes,
                    activation_bytes_per_sample: act_bytes / layers as f64,
                })
                .collect(),
            activation_bytes_per_sample: act_bytes,
            forward_flops_per_sample: flops,
            optimizer_state_multiplier: 2.0,
        }
    }

    fn empty_plan() -> Placement {
        lpt_place(&[], 1).unwrap()
    }

    fn tiny_plan() -> Placement {
        let shards = vec![ShardCost {
            shard: ShardSpec {
                table: "t".into(),
                col_start: 0,
                col_end: 16,
                rows: 1000,
                dtype_bytes: 4,
                pooled_lookups: 1.0,
            },
            cost: 1.0,
        }];
        lpt_place(&shards, 4).unwrap()
    }

    #[test]
    fn residency_shapes() {
        let cluster = ClusterSpec::default();
        let profile = uniform_profile(8, 20e9, 1e6, 1e9);
        // S = 160 GB: data parallel cannot fit, the hybrid holds a 20 GB shard.
        let dp = memory_footprint(&ParadigmSpec::new(ParadigmKind::Dp), &profile, &cluster, 8.0, 0.0);
        assert!(!dp.feasible);
        assert_eq!(dp.param_bytes, 160e9);
        let hsdp = memory_footprint(&ParadigmSpec::new(ParadigmKind::Hsdp), &profile, &cluster, 8.0, 0.0);
        assert_eq!(hsdp.param_bytes, 160e9 / 8.0 + 20e9);
        let fsdp = memory_footprint(&ParadigmSpec::new(ParadigmKind::Fsdp), &profile, &cluster, 8.0, 0.0);
        assert_eq!(fsdp.param_bytes, 160e9 / 128.0 + 20e9);
    }

    #[test]
    fn checkpointing_never_raises_activation_memory() {
        let cluster = ClusterSpec::default();
        let profile = uniform_profile(12, 1e9, 48e6, 1e9);
        let plain = memory_footprint(&ParadigmSpec::new(ParadigmKind::Fsdp), &profile, &cluster, 64.0, 0.0);
        let mut ckpt_spec = ParadigmSpec::new(ParadigmKind::Fsdp);
        ckpt_spec.activation_checkpointing = true;
        let ckpt = memory_footprint(&ckpt_spec, &profile, &cluster, 64.0, 0.0);
        assert!(ckpt.activation_bytes <= plain.activation_bytes);
    }

    #[test]
    fn feasibility_is_ordered_across_paradigms() {
        let cluster = ClusterSpec::default();
        for layers in [4usize, 8, 16, 32] {
            for layer_gb in [0.5, 1.0, 2.0, 4.0] {
                let profile = uniform_profile(layers, layer_gb * 1e9, 1e8, 1e9);
                let dp = memory_footprint(&ParadigmSpec::new(ParadigmKind::Dp), &profile, &cluster, 32.0, 0.0);
                let hsdp = memory_footprint(&ParadigmSpec::new(ParadigmKind::Hsdp), &profile, &cluster, 32.0, 0.0);
                let fsdp = memory_footprint(&ParadigmSpec::new(ParadigmKind::Fsdp), &profile, &cluster, 32.0, 0.0);
                assert!(fsdp.total_bytes <= hsdp.total_bytes);
                assert!(hsdp.total_bytes <= dp.total_bytes);
                if dp.feasible {
                    assert!(hsdp.feasible);
                }
                if hsdp.feasible {
                    assert!(fsdp.feasible);
                }
            }
        }
    }

    #[test]
    fn hsdp_cross_host_gradient_bytes_worked_example() {
        let mut cluster = ClusterSpec::default();
        cluster.hbm_bytes = 40e9;
        let mib = 1024.0 * 1024.0;
        let profile = uniform_profile(8, 8.0 * mib, 1e5, 1e9);
        // S = 64 MiB, g = 8, h = 16: allreduce of 8 MiB over 16 peers.
        let report = simulate_iteration(
            &ParadigmSpec::new(ParadigmKind::Hsdp),
            &profile,
            &cluster,
            &empty_plan(),
            1024.0,
        )
        .unwrap();
        assert_eq!(report.dense_bytes.cross_host, 15.0 * 1024.0 * 1024.0);
    }

    #[test]
    fn fsdp_dense_bytes_are_three_shares() {
        let cluster = ClusterSpec::default();
        let profile = uniform_profile(4, 1e8, 1e5, 1e9);
        let report = simulate_iteration(
            &ParadigmSpec::new(ParadigmKind::Fsdp),
            &profile,
            &cluster,
            &empty_plan(),
            1024.0,
        )
        .unwrap();
        let s = 4e8;
        let n = 128.0;
        let expect = 3.0 * s * (n - 1.0) / n;
        assert!((report.dense_bytes.cross_host - expect).abs() < 1e-6);
        assert_eq!(report.dense_bytes.intra_host, 0.0);
    }

    #[test]
    fn dp_with_free_network_is_pure_compute() {
        let mut cluster = ClusterSpec::default();
        cluster.intra_host_bandwidth = f64::INFINITY;
        cluster.cross_host_bandwidth = f64::INFINITY;
        cluster.intra_host_latency = 0.0;
        cluster.cross_host_latency = 0.0;
        let profile = uniform_profile(4, 1e8, 1e5, 2e9);
        let report = simulate_iteration(
            &ParadigmSpec::new(ParadigmKind::Dp),
            &profile,
            &cluster,
            &tiny_plan(),
            2048.0,
        )
        .unwrap();
        let flops = cluster.effective_flops();
        let batch_per_gpu = 2048.0 / 128.0;
        let fwd = batch_per_gpu * 2e9 / flops;
        let lookups = 2.0 * 2048.0 * 16.0 / flops;
        let opt = (4e8 / 4.0) * 10.0 / flops;
        let expect = fwd * 3.0 + lookups + opt;
        assert!((report.iteration_time - expect).abs() < 1e-12);
    }

    #[test]
    fn hsdp_with_one_gpu_per_host_matches_fsdp() {
        let mut cluster = ClusterSpec::default();
        cluster.gpus_per_host = 1;
        cluster.hosts = 16;
        let profile = uniform_profile(6, 1e8, 1e5, 1e9);
        let plan = tiny_plan();
        let fsdp = simulate_iteration(
            &ParadigmSpec::new(ParadigmKind::Fsdp),
            &profile,
            &cluster,
            &plan,
            512.0,
        )
        .unwrap();
        let hsdp = simulate_iteration(
            &ParadigmSpec::new(ParadigmKind::Hsdp),
            &profile,
            &cluster,
            &plan,
            512.0,
        )
        .unwrap();
        assert_eq!(fsdp.paradigm, hsdp.paradigm);
        assert_eq!(fsdp.dense_bytes, hsdp.dense_bytes);
        assert_eq!(fsdp.iteration_time, hsdp.iteration_time);
        assert_eq!(fsdp.memory.total_bytes, hsdp.memory.total_bytes);
    }

    #[test]
    fn single_host_hsdp_has_no_cross_host_gradient_bytes() {
        let mut cluster = ClusterSpec::default();
        cluster.hosts = 1;
        let profile = uniform_profile(6, 1e8, 1e5, 1e9);
        let report = simulate_iteration(
            &ParadigmSpec::new(ParadigmKind::Hsdp),
            &profile,
            &cluster,
            &empty_plan(),
            512.0,
        )
        .unwrap();
        assert_eq!(report.dense_bytes.cross_host, 0.0);
        assert_eq!(report.gradient_sync_full, 0.0);
    }

    #[test]
    fn halving_collective_width_halves_wire_bytes() {
        let cluster = ClusterSpec::default();
        let profile = uniform_profile(8, 5e8, 1e6, 5e9);
        let plan = tiny_plan();
        let base = simulate_iteration(
            &ParadigmSpec::new(ParadigmKind::Hsdp),
            &profile,
            &cluster,
            &plan,
            4096.0,
        )
        .unwrap();
        let mut quantized_spec = ParadigmSpec::new(ParadigmKind::Hsdp);
        quantized_spec.collective_bytes = 2.0;
        let quantized =
            simulate_iteration(&quantized_spec, &profile, &cluster, &plan, 4096.0).unwrap();
        assert!((quantized.total_bytes().total() - base.total_bytes().total() / 2.0).abs() < 1e-6);
        let speedup = optimization_delta(&base, &quantized).unwrap();
        assert!(speedup >= 1.0 && speedup <= 2.0, "speedup {speedup}");
    }

    #[test]
    fn quantization_speedup_limits() {
        // Comm-only: with free compute, bytes are the whole iteration.
        let mut cluster = ClusterSpec::default();
        cluster.cross_host_latency = 0.0;
        cluster.intra_host_latency = 0.0;
        cluster.gpu_peak_flops = f64::INFINITY;
        let comm_only = DenseModelProfile {
            dense_param_bytes: 4e8,
            layers: vec![LayerBytes { param_bytes: 4e8, activation_bytes_per_sample: 0.0 }],
            activation_bytes_per_sample: 0.0,
            forward_flops_per_sample: 0.0,
            optimizer_state_multiplier: 0.0,
        };
        let mut base_spec = ParadigmSpec::new(ParadigmKind::Fsdp);
        let base =
            simulate_iteration(&base_spec, &comm_only, &cluster, &empty_plan(), 128.0).unwrap();
        base_spec.collective_bytes = 2.0;
        let quant =
            simulate_iteration(&base_spec, &comm_only, &cluster, &empty_plan(), 128.0).unwrap();
        let speedup = optimization_delta(&base, &quant).unwrap();
        assert!((speedup - 2.0).abs() < 1e-9, "comm-only speedup {speedup}");

        // Compute-bound DP: the allreduce hides, nothing on the wire is exposed.
        let cluster = ClusterSpec::default();
        let compute_bound = uniform_profile(4, 1e6, 1e4, 1e12);
        let mut spec4 = ParadigmSpec::new(ParadigmKind::Dp);
        let b = simulate_iteration(&spec4, &compute_bound, &cluster, &empty_plan(), 16384.0).unwrap();
        assert_eq!(b.phases.gradient_sync, 0.0, "sync should hide fully");
        spec4.collective_bytes = 2.0;
        let q = simulate_iteration(&spec4, &compute_bound, &cluster, &empty_plan(), 16384.0).unwrap();
        let speedup = optimization_delta(&b, &q).unwrap();
        assert!((speedup - 1.0).abs() < 1e-12, "compute-bound speedup {speedup}");
    }

    #[test]
    fn infeasible_runs_report_without_erroring() {
        let cluster = ClusterSpec::default();
        let profile = uniform_profile(64, 20e9, 1e6, 1e9);
        let report = simulate_iteration(
            &ParadigmSpec::new(ParadigmKind::Dp),
            &profile,
            &cluster,
            &empty_plan(),
            128.0,
        )
        .unwrap();
        assert!(!report.feasible);
        assert_eq!(report.throughput_qps, 0.0);
        assert!(report.iteration_time.is_infinite());
    }

    #[test]
    fn comparison_covers_every_cell() {
        let cluster = ClusterSpec::default();
        let profiles: Vec<(usize, DenseModelProfile)> = [2usize, 4]
            .iter()
            .map(|&n| (n, uniform_profile(n, 1e8, 1e5, 1e9)))
            .collect();
        let rows = compare_paradigms(
            &profiles,
            &ParadigmSpec::new(ParadigmKind::Dp),
            &cluster,
            &empty_plan(),
            1024.0,
        )
        .unwrap();
        assert_eq!(rows.len(), 6);
    }

    #[test]
    fn mismatched_reports_refuse_comparison() {
        let cluster = ClusterSpec::default();
        let profile = uniform_profile(4, 1e8, 1e5, 1e9);
        let a = simulate_iteration(&ParadigmSpec::new(ParadigmKind::Dp), &profile, &cluster, &empty_plan(), 128.0).unwrap();
        let b = simulate_iteration(&ParadigmSpec::new(ParadigmKind::Fsdp), &profile, &cluster, &empty_plan(), 128.0).unwrap();
        assert!(optimization_delta(&a, &b).is_err());
    }

    #[test]
    fn determinism() {
        let cluster = ClusterSpec::default();
        let profile = uniform_profile(8, 5e8, 1e6, 5e9);
        let run = || {
            simulate_iteration(
                &ParadigmSpec::new(ParadigmKind::Hsdp),
                &profile,
                &cluster,
                &tiny_plan(),
                4096.0,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.iteration_time.to_bits(), b.iteration_time.to_bits());
        assert_eq!(a.dense_bytes, b.dense_bytes);
    }
}
