//! Finite-difference verification of every tape gradient path.
//!
//! The oracle is `finite_diff_grad`, which only ever calls the forward pass;
//! the analytic gradients come from `Tape::backward`. Agreement is required
//! within 1e-4 relative error over a 1e-6 absolute floor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dhen_core::ensemble::{DhenModel, EnsembleMethod, HeadSpec, LayerSpec, NetworkSpec};
use dhen_core::fdiff::finite_diff_grad;
use dhen_core::features::{FeatureBatch, FeatureConfig, SparseFieldSpec};
use dhen_core::interaction::{InteractionModule, ModuleSpec};
use dhen_core::tape::{NodeId, ParamId, ParamStore, Tape};
use dhen_core::tensor::Tensor;
use dhen_core::TensorError;

const REL_TOL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-6;

fn assert_close(analytic: f64, numeric: f64, what: &str) {
    let err = (analytic - numeric).abs();
    let scale = numeric.abs().max(analytic.abs()).max(ABS_FLOOR);
    assert!(
        err / scale < REL_TOL,
        "{what}: analytic {analytic} vs numeric {numeric} (rel {})",
        err / scale
    );
}

fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Check d(loss)/d(param) for every parameter in the store against central
/// differences at up to `coords` random coordinates per parameter.
fn check_store<F>(store: &mut ParamStore, coords: usize, seed: u64, forward: F)
where
    F: Fn(&ParamStore, &mut Tape) -> Result<NodeId, TensorError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pids: Vec<ParamId> = store.ids().collect();
    for pid in pids {
        let mut tape = Tape::new();
        let loss = forward(store, &mut tape).expect("forward");
        store.zero_grad();
        tape.backward(loss, store).expect("backward");
        let analytic = store.get(pid).grad.clone();

        let numeric = finite_diff_grad(store, pid, 1e-5, |s| {
            let mut t = Tape::new();
            let l = forward(s, &mut t)?;
            Ok(t.value(l).item())
        })
        .expect("finite differences");

        let n = analytic.numel();
        let picks: Vec<usize> = if n <= coords {
            (0..n).collect()
        } else {
            (0..coords).map(|_| rng.gen_range(0..n)).collect()
        };
        let name = store.get(pid).name.clone();
        for i in picks {
            assert_close(
                analytic.data()[i],
                numeric.data()[i],
                &format!("{name}[{i}]"),
            );
        }
    }
}

/// A scalar loss that mixes the output nonlinearly so no gradient path
/// cancels by symmetry.
fn spiky_loss(tape: &mut Tape, out: NodeId) -> Result<NodeId, TensorError> {
    let sig = tape.sigmoid(out);
    let prod = tape.mul(sig, out)?;
    Ok(tape.sum_all(prod))
}

#[test]
fn primitive_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);

    // matmul (2d x 2d) -> relu -> sum
    let mut store = ParamStore::new();
    let a = store.add("a", random_tensor(&mut rng, &[3, 4]));
    let b = store.add("b", random_tensor(&mut rng, &[4, 2]));
    check_store(&mut store, 50, 1, |s, t| {
        let an = t.param(s, a);
        let bn = t.param(s, b);
        let y = t.matmul(an, bn)?;
        spiky_loss(t, y)
    });

    // batched matmul with broadcast rhs, transpose, slice, concat
    let mut store = ParamStore::new();
    let x = store.add("x", random_tensor(&mut rng, &[2, 3, 4]));
    let w = store.add("w", random_tensor(&mut rng, &[4, 3]));
    check_store(&mut store, 50, 2, |s, t| {
        let xn = t.param(s, x);
        let wn = t.param(s, w);
        let y = t.matmul(xn, wn)?; // [2,3,3]
        let yt = t.transpose(y)?;
        let left = t.slice(yt, 2, 0, 2)?;
        let right = t.slice(yt, 2, 1, 2)?;
        let cat = t.concat(&[left, right], 2)?;
        spiky_loss(t, cat)
    });

    // add, add_bias, mul, mul_vec, scale_scalar
    let mut store = ParamStore::new();
    let p = store.add("p", random_tensor(&mut rng, &[2, 5]));
    let q = store.add("q", random_tensor(&mut rng, &[2, 5]));
    let bias = store.add("bias", random_tensor(&mut rng, &[5]));
    let gamma = store.add("gamma", random_tensor(&mut rng, &[5]));
    let s_param = store.add("s", random_tensor(&mut rng, &[1]));
    check_store(&mut store, 50, 3, |s, t| {
        let pn = t.param(s, p);
        let qn = t.param(s, q);
        let bn = t.param(s, bias);
        let gn = t.param(s, gamma);
        let sn = t.param(s, s_param);
        let sum = t.add(pn, qn)?;
        let biased = t.add_bias(sum, bn)?;
        let gated = t.mul_vec(biased, gn)?;
        let mixed = t.mul(gated, pn)?;
        let scaled = t.scale_scalar(mixed, sn)?;
        spiky_loss(t, scaled)
    });

    // softmax, layer_norm, mean_axis, reshape
    let mut store = ParamStore::new();
    let z = store.add("z", random_tensor(&mut rng, &[2, 3, 6]));
    check_store(&mut store, 60, 4, |s, t| {
        let zn = t.param(s, z);
        let soft = t.softmax(zn, 2)?;
        let normed = t.layer_norm(soft, 2, dhen_core::LAYER_NORM_EPSILON)?;
        let mean = t.mean_axis(normed, 1)?; // [2, 6]
        let flat = t.reshape(mean, &[12])?;
        spiky_loss(t, flat)
    });

    // conv2d + mean over channels
    let mut store = ParamStore::new();
    let img = store.add("img", random_tensor(&mut rng, &[2, 5, 4]));
    let filt = store.add("filt", random_tensor(&mut rng, &[3, 3, 3]));
    check_store(&mut store, 60, 5, |s, t| {
        let xn = t.param(s, img);
        let fnode = t.param(s, filt);
        let conv = t.conv2d_same(xn, fnode)?;
        let mixed = t.mean_axis(conv, 1)?;
        spiky_loss(t, mixed)
    });

    // triu_flatten
    let mut store = ParamStore::new();
    let g = store.add("g", random_tensor(&mut rng, &[2, 4, 3]));
    check_store(&mut store, 40, 6, |s, t| {
        let gn = t.param(s, g);
        let gt = t.transpose(gn)?;
        let gram = t.matmul(gn, gt)?;
        let triu = t.triu_flatten(gram)?;
        spiky_loss(t, triu)
    });

    // bce_mean through a sigmoid
    let mut store = ParamStore::new();
    let logits = store.add("logits", random_tensor(&mut rng, &[6]));
    let labels = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
    check_store(&mut store, 10, 7, |s, t| {
        let ln = t.param(s, logits);
        let probs = t.sigmoid(ln);
        t.bce_mean(probs, &labels)
    });

    // lookup with multi-hot pooling
    let mut store = ParamStore::new();
    let table = store.add("table", random_tensor(&mut rng, &[5, 3]));
    check_store(&mut store, 15, 8, |s, t| {
        let out = t.lookup(s, table, &[vec![0, 2], vec![4], vec![2, 2]])?;
        spiky_loss(t, out)
    });

    // relu on a shifted input so some units are active, some not
    let mut store = ParamStore::new();
    let r = store.add("r", random_tensor(&mut rng, &[4, 4]));
    check_store(&mut store, 16, 9, |s, t| {
        let rn = t.param(s, r);
        let act = t.relu(rn);
        spiky_loss(t, act)
    });
}

#[test]
fn three_layer_mlp_gradient_to_one_part_per_million() {
    let mut rng = ChaCha8Rng::seed_from_u64(321);
    let mut store = ParamStore::new();
    let arch = dhen_core::features::DenseArch::init(&mut store, &mut rng, "mlp", 4, &[6, 5], 3);
    let input = store.add("input", random_tensor(&mut rng, &[2, 4]));

    let forward = |s: &ParamStore, t: &mut Tape| -> Result<NodeId, TensorError> {
        let x = t.param(s, input);
        let y = arch.forward(t, s, x)?;
        spiky_loss(t, y)
    };
    let pids: Vec<ParamId> = store.ids().collect();
    for pid in pids {
        let mut tape = Tape::new();
        let loss = forward(&store, &mut tape).unwrap();
        store.zero_grad();
        tape.backward(loss, &mut store).unwrap();
        let analytic = store.get(pid).grad.clone();
        let numeric = finite_diff_grad(&mut store, pid, 1e-5, |s| {
            let mut t = Tape::new();
            let l = forward(s, &mut t)?;
            Ok(t.value(l).item())
        })
        .unwrap();
        let name = store.get(pid).name.clone();
        for i in 0..analytic.numel() {
            let err = (analytic.data()[i] - numeric.data()[i]).abs();
            let scale = analytic.data()[i].abs().max(numeric.data()[i].abs()).max(1e-4);
            assert!(err / scale < 1e-6, "{name}[{i}]: relative error {}", err / scale);
        }
    }
}

fn module_specs() -> Vec<ModuleSpec> {
    vec![
        ModuleSpec::DotInteraction { l: 3 },
        ModuleSpec::SelfAttention { l: 3, heads: 2, ffn_width: None },
        ModuleSpec::Convolution { l: 3, channels: 2, kernel: 3 },
        ModuleSpec::Linear { l: 3 },
        ModuleSpec::CrossNet { l: 3 },
    ]
}

#[test]
fn interaction_module_gradients_match_finite_differences() {
    for spec in module_specs() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let mut store = ParamStore::new();
        let (m, d) = (4, 4);
        let module = InteractionModule::init(&mut store, &mut rng, "m", &spec, m, d).unwrap();
        let input = store.add("input", random_tensor(&mut rng, &[2, m, d]));
        let seed = 100 + spec.output_count() as u64;
        check_store(&mut store, 25, seed, |s, t| {
            let x = t.param(s, input);
            let y = module.forward(t, s, x)?;
            spiky_loss(t, y)
        });
    }
}

fn full_network() -> (NetworkSpec, FeatureBatch) {
    let features = FeatureConfig {
        embedding_dim: 8,
        sparse: (0..5)
            .map(|i| SparseFieldSpec { name: format!("f{i}"), cardinality: 6 })
            .collect(),
        dense_width: 3,
        dense_hidden: vec![6],
    };
    let spec = NetworkSpec {
        features,
        layers: vec![
            LayerSpec {
                modules: vec![ModuleSpec::CrossNet { l: 4 }, ModuleSpec::Linear { l: 4 }],
                ensemble: EnsembleMethod::Concat,
                dense_token: false,
            },
            LayerSpec {
                modules: vec![ModuleSpec::CrossNet { l: 4 }, ModuleSpec::Linear { l: 4 }],
                ensemble: EnsembleMethod::WeightedSum,
                dense_token: false,
            },
        ],
        head: HeadSpec { hidden: vec![8], bias_only: false },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = FeatureBatch {
        sparse_ids: (0..5)
            .map(|_| (0..3).map(|_| vec![rng.gen_range(0..6)]).collect())
            .collect(),
        dense: random_tensor(&mut rng, &[3, 3]),
    };
    (spec, batch)
}

#[test]
fn full_network_gradient_matches_finite_differences() {
    let (spec, batch) = full_network();
    let model = DhenModel::init(&spec, 17).unwrap();
    let labels = [1.0, 0.0, 1.0];
    let mut store = model.store.clone();

    let net_loss = |model: &DhenModel, s: &ParamStore, t: &mut Tape| -> Result<NodeId, TensorError> {
        let p = model.forward_in(s, t, &batch).map_err(|e| match e {
            dhen_core::ModelError::Tensor(t) => t,
            other => TensorError::InvalidArgument {
                op: "network-forward",
                reason: other.to_string(),
            },
        })?;
        t.bce_mean(p, &labels)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let pids: Vec<ParamId> = store.ids().collect();
    let mut checked = 0;
    for pid in pids {
        // Sample a few parameters of each flavor to keep the suite quick.
        let name = store.get(pid).name.clone();
        let keep = name.contains("layer0.mod0")
            || name.contains("layer1.mod1")
            || name.contains("ensemble_w")
            || name.contains("norm.g")
            || name.starts_with("f0")
            || name.starts_with("head.out")
            || name.starts_with("dense_arch.out");
        if !keep {
            continue;
        }
        checked += 1;

        let mut tape = Tape::new();
        let loss = net_loss(&model, &store, &mut tape).unwrap();
        store.zero_grad();
        tape.backward(loss, &mut store).unwrap();
        let analytic = store.get(pid).grad.clone();

        let numeric = finite_diff_grad(&mut store, pid, 1e-5, |s| {
            let mut t = Tape::new();
            let l = net_loss(&model, s, &mut t)?;
            Ok(t.value(l).item())
        })
        .unwrap();

        let n = analytic.numel();
        let picks: Vec<usize> = if n <= 12 {
            (0..n).collect()
        } else {
            (0..12).map(|_| rng.gen_range(0..n)).collect()
        };
        for i in picks {
            assert_close(analytic.data()[i], numeric.data()[i], &format!("{name}[{i}]"));
        }
    }
    assert!(checked >= 6, "sampled too few parameters: {checked}");
}
