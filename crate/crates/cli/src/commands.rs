//! The four commands behind the binary, exposed as library functions so the
//! integration tests can drive them directly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use dhen_core::ensemble::{DhenModel, NetworkSpec};
use dhen_core::sharding::{
    brute_force_place, lpt_place, slice_tables, CostWeights, Placement, BRUTE_FORCE_GUARD,
};
use dhen_core::sim::{
    compare_paradigms, simulate_iteration, ComparisonRow, DenseModelProfile, ParadigmKind,
    ParadigmSpec, SimReport,
};
use dhen_core::training::{evaluate, generate_split, train, MetricLog};

use crate::config::ExperimentConfig;
use crate::CliError;

/// Offset mixed into the config seed for parameter initialization so the
/// model and the data generator consume distinct streams.
const MODEL_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

fn ensure_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ParamDump {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct TrainedModelDump<'a> {
    spec: &'a NetworkSpec,
    params: Vec<ParamDump>,
}

/// Outcome of `dhen train`.
#[derive(Debug)]
pub struct TrainOutcome {
    pub final_eval_ne: f64,
    pub baseline_eval_ne: Option<f64>,
    pub ne_diff_pct: Option<f64>,
    pub log: MetricLog,
}

fn baseline_final_ne(path: &Path) -> Result<f64, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read baseline {}: {e}", path.display())))?;
    let last = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .next_back()
        .ok_or_else(|| CliError::Config("baseline metrics file is empty".into()))?;
    let field = last.split(',').nth(2).ok_or_else(|| {
        CliError::Config(format!("baseline row '{last}' lacks an eval_ne column"))
    })?;
    field
        .parse()
        .map_err(|_| CliError::Config(format!("baseline eval_ne '{field}' is not a number")))
}

/// Train per the config; write `metrics.csv`, `summary.txt`, and the
/// serialized trained model under `out`.
pub fn cmd_train(
    config: &ExperimentConfig,
    out: &Path,
    baseline: Option<&Path>,
) -> Result<TrainOutcome, CliError> {
    ensure_dir(out)?;
    let net = config.network_spec()?;
    let synth = config.synthetic_spec()?;
    let train_cfg = config.train_config()?;
    let (n_train, n_eval) = config.synthetic_sizes()?;

    let (train_data, eval_data) = generate_split(&synth, n_train, n_eval)?;
    let mut model = DhenModel::init(&net, config.seed.wrapping_add(MODEL_SEED_OFFSET))?;
    let log = train(&mut model, &train_data, &eval_data, &train_cfg)?;
    let final_eval_ne = log
        .final_eval_ne()
        .unwrap_or_else(|| evaluate(&model, &eval_data, train_cfg.batch_size).unwrap_or(f64::NAN));

    let mut metrics = Vec::new();
    log.write_csv(&mut metrics)?;
    fs::write(out.join("metrics.csv"), metrics)?;

    let baseline_eval_ne = baseline.map(baseline_final_ne).transpose()?;
    let ne_diff_pct = baseline_eval_ne.map(|b| (final_eval_ne - b) / b * 100.0);

    let mut summary = String::new();
    writeln!(summary, "final_eval_ne: {final_eval_ne}").unwrap();
    writeln!(summary, "steps: {}", train_cfg.steps).unwrap();
    writeln!(summary, "train_samples: {n_train}").unwrap();
    writeln!(summary, "eval_samples: {n_eval}").unwrap();
    writeln!(summary, "dense_params: {}", net.dense_param_count().map_err(dhen_core::TrainError::from)?).unwrap();
    writeln!(summary, "embedding_params: {}", net.embedding_param_count()).unwrap();
    if let (Some(b), Some(d)) = (baseline_eval_ne, ne_diff_pct) {
        writeln!(summary, "baseline_eval_ne: {b}").unwrap();
        writeln!(summary, "ne_diff_pct: {d}").unwrap();
    }
    fs::write(out.join("summary.txt"), summary)?;

    let dump = TrainedModelDump {
        spec: &net,
        params: model
            .store
            .iter()
            .map(|(_, p)| ParamDump {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                values: p.value.data().to_vec(),
            })
            .collect(),
    };
    fs::write(out.join("trained_model.json"), serde_json::to_vec(&dump)?)?;

    Ok(TrainOutcome { final_eval_ne, baseline_eval_ne, ne_diff_pct, log })
}

/// Outcome of `dhen plan`.
#[derive(Debug)]
pub struct PlanOutcome {
    pub placement: Placement,
    pub optimal_makespan: Option<f64>,
}

fn plan_from_config(config: &ExperimentConfig) -> Result<(Placement, usize), CliError> {
    let tables = config.table_specs()?;
    let (devices, weights) = match &config.cluster {
        Some(_) => {
            let cluster = config.cluster_spec()?;
            (
                cluster.world(),
                CostWeights::from_rates(cluster.effective_flops(), cluster.cross_host_bandwidth),
            )
        }
        None => (1, CostWeights::unit()),
    };
    let batch = config.global_batch();
    let shards = if tables.is_empty() {
        Vec::new()
    } else {
        slice_tables(&tables, devices, batch, &weights)?
    };
    Ok((lpt_place(&shards, devices)?, devices))
}

/// Slice, place, and report balance; writes `plan.csv` and `plan_summary.txt`.
pub fn cmd_plan(config: &ExperimentConfig, out: &Path) -> Result<PlanOutcome, CliError> {
    ensure_dir(out)?;
    let (placement, devices) = plan_from_config(config)?;

    let mut csv = String::from("table,col_start,col_end,rows,cost,device\n");
    for (sc, dev) in &placement.assignments {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            sc.shard.table, sc.shard.col_start, sc.shard.col_end, sc.shard.rows, sc.cost, dev
        )
        .unwrap();
    }
    fs::write(out.join("plan.csv"), csv)?;

    let costs: Vec<f64> = placement.assignments.iter().map(|(sc, _)| sc.cost).collect();
    let within_guard = (devices as u64)
        .checked_pow(costs.len() as u32)
        .is_some_and(|s| s <= BRUTE_FORCE_GUARD);
    let optimal_makespan = if within_guard && !costs.is_empty() {
        Some(brute_force_place(&costs, devices)?)
    } else {
        None
    };

    let mut summary = String::new();
    writeln!(summary, "shards: {}", placement.assignments.len()).unwrap();
    writeln!(summary, "devices: {devices}").unwrap();
    writeln!(summary, "makespan: {}", placement.makespan).unwrap();
    for (d, load) in placement.device_loads.iter().enumerate() {
        writeln!(summary, "load[{d}]: {load}").unwrap();
    }
    match optimal_makespan {
        Some(opt) if opt > 0.0 => {
            writeln!(summary, "optimal_makespan: {opt}").unwrap();
            writeln!(summary, "lpt_ratio: {}", placement.makespan / opt).unwrap();
        }
        Some(opt) => {
            writeln!(summary, "optimal_makespan: {opt}").unwrap();
        }
        None => {
            writeln!(summary, "optimal_makespan: skipped (beyond exhaustive-search guard)")
                .unwrap();
        }
    }
    fs::write(out.join("plan_summary.txt"), summary)?;

    Ok(PlanOutcome { placement, optimal_makespan })
}

fn write_sim_files(
    out: &Path,
    report: &SimReport,
    byte_ratio_vs_fsdp: Option<f64>,
) -> Result<(), CliError> {
    let p = &report.phases;
    let mut phases = String::from("phase,seconds\n");
    for (name, v) in [
        ("embedding_forward", p.embedding_forward),
        ("dense_forward", p.dense_forward),
        ("dense_backward", p.dense_backward),
        ("gradient_sync_exposed", p.gradient_sync),
        ("embedding_backward", p.embedding_backward),
        ("optimizer", p.optimizer),
        ("total", report.iteration_time),
    ] {
        writeln!(phases, "{name},{v}").unwrap();
    }
    fs::write(out.join("sim_phases.csv"), phases)?;

    let mut bytes = String::from("link,dense_bytes,embedding_bytes,total_bytes\n");
    for (link, dense, emb) in [
        ("intra_host", report.dense_bytes.intra_host, report.embedding_bytes.intra_host),
        ("cross_host", report.dense_bytes.cross_host, report.embedding_bytes.cross_host),
    ] {
        writeln!(bytes, "{link},{dense},{emb},{}", dense + emb).unwrap();
    }
    fs::write(out.join("sim_bytes.csv"), bytes)?;

    let m = &report.memory;
    let mut summary = String::new();
    writeln!(summary, "paradigm: {}", report.paradigm.name()).unwrap();
    writeln!(summary, "feasible: {}", report.feasible).unwrap();
    writeln!(summary, "global_batch: {}", report.global_batch).unwrap();
    if report.feasible {
        writeln!(summary, "iteration_seconds: {}", report.iteration_time).unwrap();
        writeln!(summary, "throughput_qps: {}", report.throughput_qps).unwrap();
        writeln!(summary, "gradient_sync_full_seconds: {}", report.gradient_sync_full).unwrap();
    } else {
        writeln!(summary, "iteration_seconds: infeasible").unwrap();
        writeln!(summary, "throughput_qps: infeasible").unwrap();
    }
    writeln!(summary, "memory_param_bytes: {}", m.param_bytes).unwrap();
    writeln!(summary, "memory_gradient_bytes: {}", m.gradient_bytes).unwrap();
    writeln!(summary, "memory_optimizer_bytes: {}", m.optimizer_bytes).unwrap();
    writeln!(summary, "memory_activation_bytes: {}", m.activation_bytes).unwrap();
    writeln!(summary, "memory_embedding_bytes: {}", m.embedding_bytes).unwrap();
    writeln!(summary, "memory_total_bytes: {}", m.total_bytes).unwrap();
    writeln!(summary, "memory_verdict: {}", if m.feasible { "fits" } else { "infeasible" })
        .unwrap();
    if let Some(ratio) = byte_ratio_vs_fsdp {
        writeln!(summary, "wire_bytes_vs_fsdp: {ratio}").unwrap();
    }
    fs::write(out.join("sim_summary.txt"), summary)?;
    Ok(())
}

/// Simulate one iteration; writes `sim_phases.csv`, `sim_bytes.csv`, and
/// `sim_summary.txt`. A hybrid run also reports its wire bytes relative to
/// the fully sharded schedule on the same inputs.
pub fn cmd_simulate(
    config: &ExperimentConfig,
    out: &Path,
    paradigm_override: Option<ParadigmKind>,
) -> Result<SimReport, CliError> {
    ensure_dir(out)?;
    let cluster = config.cluster_spec()?;
    let paradigm = config.paradigm_spec(paradigm_override)?;
    let net = config.network_spec()?;
    let profile = DenseModelProfile::from_network(&net)?;
    let (plan, _) = plan_from_config(config)?;
    let report = simulate_iteration(&paradigm, &profile, &cluster, &plan, config.global_batch())?;

    let byte_ratio_vs_fsdp = (report.paradigm == ParadigmKind::Hsdp)
        .then(|| {
            let fsdp = ParadigmSpec { kind: ParadigmKind::Fsdp, ..paradigm.clone() };
            simulate_iteration(&fsdp, &profile, &cluster, &plan, config.global_batch())
        })
        .transpose()?
        .map(|fsdp| report.total_bytes().total() / fsdp.total_bytes().total());

    write_sim_files(out, &report, byte_ratio_vs_fsdp)?;
    Ok(report)
}

/// Default layer counts for `dhen compare`.
pub const DEFAULT_SWEEP: &[usize] = &[1, 2, 4, 8, 16, 24, 32, 48, 64];

/// Sweep layer counts by stacking the config's first layer; writes
/// `compare.csv`.
pub fn cmd_compare(
    config: &ExperimentConfig,
    out: &Path,
    layers: &[usize],
) -> Result<Vec<ComparisonRow>, CliError> {
    ensure_dir(out)?;
    if layers.is_empty() {
        return Err(CliError::Config("empty layer sweep".into()));
    }
    let cluster = config.cluster_spec()?;
    let options = config.paradigm_spec(Some(ParadigmKind::Dp))?;
    let net = config.network_spec()?;
    let base = net.layers[0].clone();
    {
        // Stacking requires the layer to reproduce its own token count.
        let m0 = net.features.token_count();
        let m1 = base.output_count().map_err(dhen_core::TrainError::from)?;
        if m0 != m1 {
            return Err(CliError::Config(format!(
                "compare stacks the first layer, which maps {m0} tokens to {m1}; \
                 make it self-chaining"
            )));
        }
    }

    let mut profiles = Vec::with_capacity(layers.len());
    for &n in layers {
        let spec = NetworkSpec {
            features: net.features.clone(),
            layers: vec![base.clone(); n],
            head: net.head.clone(),
        };
        profiles.push((n, DenseModelProfile::from_network(&spec)?));
    }

    let (plan, _) = plan_from_config(config)?;
    let rows = compare_paradigms(&profiles, &options, &cluster, &plan, config.global_batch())?;

    let mut csv = String::from("layers,paradigm,feasible,iteration_seconds,throughput_qps\n");
    for row in &rows {
        if row.feasible {
            writeln!(
                csv,
                "{},{},yes,{},{}",
                row.layers,
                row.paradigm.name(),
                row.iteration_time,
                row.throughput_qps
            )
            .unwrap();
        } else {
            writeln!(csv, "{},{},no,infeasible,infeasible", row.layers, row.paradigm.name())
                .unwrap();
        }
    }
    fs::write(out.join("compare.csv"), csv)?;
    Ok(rows)
}
