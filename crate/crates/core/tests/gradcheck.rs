//! Finite-difference gradient checks: every registered op, the
//! differentiable rollout, and the full desk-scale model.

mod common;

use common::grad_close;
use pathset::diff::{backward, ops, ParamStore, Tensor};
use pathset::model::{rollout_modes, Model, ModelConfig};
use pathset::scene::transform_to_sdv_frame;
use pathset::sim::{generate_scenarios, ScenarioKind};
use pathset::train::{total_loss, LossWeights};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-4;

type BuildFn = Box<dyn Fn(&[Tensor]) -> Tensor>;
type GenFn = Box<dyn Fn(&mut ChaCha8Rng, usize) -> f64>;

struct OpCase {
    name: &'static str,
    shapes: Vec<Vec<usize>>,
    gen: GenFn,
    build: BuildFn,
}

fn plain(lo: f64, hi: f64) -> GenFn {
    Box::new(move |rng, _| rng.gen_range(lo..hi))
}

/// Uniform away from the kinks of piecewise ops.
fn away_from(points: &'static [f64], lo: f64, hi: f64) -> GenFn {
    Box::new(move |rng, _| loop {
        let v = rng.gen_range(lo..hi);
        if points.iter().all(|p| (v - p).abs() > 0.05) {
            return v;
        }
    })
}

fn weighted_loss(out: &Tensor, weights: &[f64]) -> Tensor {
    let flat = ops::reshape(out, vec![out.numel()]).unwrap();
    let w = Tensor::constant(vec![weights.len()], weights.to_vec());
    ops::sum(&ops::mul(&flat, &w).unwrap())
}

fn run_case(case: &OpCase) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let mut store = ParamStore::new();
    let ids: Vec<_> = case
        .shapes
        .iter()
        .enumerate()
        .map(|(i, shape)| {
            let n: usize = shape.iter().product();
            let values: Vec<f64> = (0..n).map(|_| (case.gen)(&mut rng, i)).collect();
            store.register(&format!("in{i}"), shape.clone(), values)
        })
        .collect();

    let eval = |store: &ParamStore, weights: &[f64]| -> f64 {
        let leaves: Vec<Tensor> = ids.iter().map(|&id| store.leaf(id)).collect();
        let out = (case.build)(&leaves);
        weighted_loss(&out, weights).scalar_value()
    };

    // fixed random output weights so gradients are not uniform
    let leaves: Vec<Tensor> = ids.iter().map(|&id| store.leaf(id)).collect();
    let out = (case.build)(&leaves);
    let weights: Vec<f64> = (0..out.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = weighted_loss(&out, &weights);
    store.zero_grads();
    backward(&loss, &mut store).unwrap();

    for &id in &ids {
        let analytic = store.grad(id).unwrap().to_vec();
        for j in 0..analytic.len() {
            let original = store.value(id)[j];
            store.value_mut(id)[j] = original + EPS;
            let plus = eval(&store, &weights);
            store.value_mut(id)[j] = original - EPS;
            let minus = eval(&store, &weights);
            store.value_mut(id)[j] = original;
            let numeric = (plus - minus) / (2.0 * EPS);
            assert!(
                grad_close(analytic[j], numeric),
                "{}: param {} elem {j}: analytic {} vs numeric {}",
                case.name,
                store.name(id),
                analytic[j],
                numeric
            );
        }
    }
}

#[test]
fn every_op_matches_finite_differences() {
    let mask_ep = [false, true, false, true, true, false];
    let cases: Vec<OpCase> = vec![
        OpCase {
            name: "add",
            shapes: vec![vec![2, 3], vec![2, 3]],
            gen: plain(-2.0, 2.0),
            build: Box::new(|t| ops::add(&t[0], &t[1]).unwrap()),
        },
        OpCase {
            name: "add_broadcast_bias",
            shapes: vec![vec![4, 3], vec![3]],
            gen: plain(-2.0, 2.0),
            build: Box::new(|t| ops::add(&t[0], &t[1]).unwrap()),
        },
        OpCase {
            name: "sub",
            shapes: vec![vec![5], vec![5]],
            gen: plain(-2.0, 2.0),
            build: Box::new(|t| ops::sub(&t[0], &t[1]).unwrap()),
        },
        OpCase {
            name: "mul",
            shapes: vec![vec![2, 4], vec![4]],
            gen: plain(-2.0, 2.0),
            build: Box::new(|t| ops::mul(&t[0], &t[1]).unwrap()),
        },
        OpCase {
            name: "scale_add_scalar",
            shapes: vec![vec![6]],
            gen: plain(-2.0, 2.0),
            build: Box::new(|t| ops::add_scalar(&ops::scale(&t[0], -1.7), 0.3)),
        },
        OpCase {
            name: "relu",
            shapes: vec![vec![9]],
            gen: away_from(&[0.0], -2.0, 2.0),
            build: Box::new(|t| ops::relu(&t[0])),
        },
        OpCase {
            name: "clamp",
            shapes: vec![vec![12]],
            gen: away_from(&[-0.8, 0.8], -1.5, 1.5),
            build: Box::new(|t| ops::clamp(&t[0], -0.8, 0.8)),
        },
        OpCase {
            name: "sin_cos",
            shapes: vec![vec![7]],
            gen: plain(-2.0, 2.0),
            build: Box::new(|t| ops::add(&ops::sin(&t[0]), &ops::cos(&t[0])).unwrap()),
        },
        OpCase {
            name: "exp",
            shapes: vec![vec![5]],
            gen: plain(-1.0, 1.0),
            build: Box::new(|t| ops::exp(&t[0])),
        },
        OpCase {
            name: "log",
            shapes: vec![vec![5]],
            gen: plain(0.2, 3.0),
            build: Box::new(|t| ops::log(&t[0])),
        },
        OpCase {
            name: "abs",
            shapes: vec![vec![8]],
            gen: away_from(&[0.0], -2.0, 2.0),
            build: Box::new(|t| ops::abs(&t[0])),
        },
        OpCase {
            name: "angle_wrap",
            shapes: vec![vec![6]],
            gen: plain(-2.5, 2.5),
            build: Box::new(|t| ops::angle_wrap(&t[0])),
        },
        OpCase {
            name: "matmul_2d",
            shapes: vec![vec![3, 4], vec![4, 2]],
            gen: plain(-1.0, 1.0),
            build: Box::new(|t| ops::matmul(&t[0], &t[1]).unwrap()),
        },
        OpCase {
            name: "matmul_flatten_leading",
            shapes: vec![vec![2, 3, 4], vec![4, 2]],
            gen: plain(-1.0, 1.0),
            build: Box::new(|t| ops::matmul(&t[0], &t[1]).unwrap()),
        },
        OpCase {
            name: "matmul_batched",
            shapes: vec![vec![2, 3, 4], vec![2, 4, 3]],
            gen: plain(-1.0, 1.0),
            build: Box::new(|t| ops::matmul(&t[0], &t[1]).unwrap()),
        },
        OpCase {
            name: "reshape_permute",
            shapes: vec![vec![2, 3, 4]],
            gen: plain(-1.0, 1.0),
            build: Box::new(|t| {
                let p = ops::permute(&t[0], &[2, 0, 1]).unwrap();
                ops::reshape(&p, vec![4, 6]).unwrap()
            }),
        },
        OpCase {
            name: "concat",
            shapes: vec![vec![2, 3], vec![1, 3], vec![2, 3]],
            gen: plain(-1.0, 1.0),
            build: Box::new(|t| ops::concat(&[&t[0], &t[1], &t[2]], 0).unwrap()),
        },
        OpCase {
            name: "index_rows_repeated",
            shapes: vec![vec![4, 3]],
            gen: plain(-1.0, 1.0),
            build: Box::new(|t| ops::index_rows(&t[0], &[2, 0, 2, 3]).unwrap()),
        },
        OpCase {
            name: "embedding_lookup",
            shapes: vec![vec![5, 4]],
            gen: plain(-1.0, 1.0),
            build: Box::new(|t| ops::embedding_lookup(&t[0], &[4, 1, 1, 0]).unwrap()),
        },
        OpCase {
            name: "sum_mean",
            shapes: vec![vec![3, 3]],
            gen: plain(-1.0, 1.0),
            build: Box::new(|t| ops::add(&ops::sum(&t[0]), &ops::mean(&t[0])).unwrap()),
        },
        OpCase {
            name: "l1_distance",
            shapes: vec![vec![6], vec![6]],
            gen: Box::new(|rng, i| {
                // keep the two inputs well separated so no element sits on
                // the |x| kink
                if i == 0 {
                    rng.gen_range(-1.0..1.0)
                } else {
                    rng.gen_range(2.0..4.0)
                }
            }),
            build: Box::new(|t| ops::l1_distance(&t[0], &t[1]).unwrap()),
        },
        OpCase {
            name: "softmax",
            shapes: vec![vec![3, 5]],
            gen: plain(-2.0, 2.0),
            build: Box::new(|t| ops::softmax(&t[0])),
        },
        OpCase {
            name: "layer_norm",
            shapes: vec![vec![4, 6], vec![6], vec![6]],
            gen: Box::new(|rng, i| match i {
                0 => rng.gen_range(-2.0..2.0),
                1 => rng.gen_range(0.5..1.5),
                _ => rng.gen_range(-0.5..0.5),
            }),
            build: Box::new(|t| ops::layer_norm(&t[0], &t[1], &t[2]).unwrap()),
        },
        OpCase {
            name: "masked_fill",
            shapes: vec![vec![2, 3]],
            gen: plain(-2.0, 2.0),
            build: Box::new(|t| ops::masked_fill(&t[0], &[true, false, true], -1e9).unwrap()),
        },
        OpCase {
            name: "masked_max_pool",
            shapes: vec![vec![2, 3, 4]],
            gen: plain(-2.0, 2.0),
            build: Box::new(move |t| {
                ops::masked_max_pool(&t[0], &mask_ep, &[true, true]).unwrap()
            }),
        },
    ];
    for case in &cases {
        run_case(case);
    }
}

#[test]
fn rollout_gradients_match_finite_differences() {
    // Gradient of a final-position L1 error with respect to every control
    // entry, away from the v = 0 clamp.
    let horizon = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut store = ParamStore::new();
    let jerk_id = store.register(
        "jerk",
        vec![1, horizon],
        (0..horizon).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    );
    let curv_id = store.register(
        "curvature",
        vec![1, horizon],
        (0..horizon).map(|_| rng.gen_range(-0.2..0.2)).collect(),
    );

    let eval = |store: &ParamStore| -> (Tensor, f64) {
        let rollout = rollout_modes(
            &store.leaf(jerk_id),
            &store.leaf(curv_id),
            4.0,
            0.0,
            pathset::DT,
        )
        .unwrap();
        let target_x = Tensor::scalar(2.0);
        let target_y = Tensor::scalar(0.5);
        let lx = ops::l1_distance(rollout.xs.last().unwrap(), &target_x).unwrap();
        let ly = ops::l1_distance(rollout.ys.last().unwrap(), &target_y).unwrap();
        let loss = ops::add(&lx, &ly).unwrap();
        let v = loss.scalar_value();
        (loss, v)
    };

    let (loss, _) = eval(&store);
    store.zero_grads();
    backward(&loss, &mut store).unwrap();

    for id in [jerk_id, curv_id] {
        let analytic = store.grad(id).unwrap().to_vec();
        for j in 0..horizon {
            let original = store.value(id)[j];
            store.value_mut(id)[j] = original + EPS;
            let plus = eval(&store).1;
            store.value_mut(id)[j] = original - EPS;
            let minus = eval(&store).1;
            store.value_mut(id)[j] = original;
            let numeric = (plus - minus) / (2.0 * EPS);
            assert!(
                grad_close(analytic[j], numeric),
                "{} elem {j}: analytic {} vs numeric {}",
                store.name(id),
                analytic[j],
                numeric
            );
        }
    }
}

#[test]
fn full_model_gradients_match_finite_differences() {
    // Desk-scale model, 20 sampled parameters against central differences.
    let config = ModelConfig::default();
    let mut model = Model::new(config).unwrap();
    let episode = &generate_scenarios(ScenarioKind::LeadVehicle, 1, 123)[0];
    let scene = transform_to_sdv_frame(&episode.scenes[10]).unwrap();
    let weights = LossWeights::default();

    let eval = |model: &Model| -> f64 {
        let pass = model.forward(&scene).unwrap();
        total_loss(&pass, &scene, &weights)
            .unwrap()
            .loss
            .scalar_value()
    };

    let pass = model.forward(&scene).unwrap();
    let total = total_loss(&pass, &scene, &weights).unwrap();
    model.store_mut().zero_grads();
    backward(&total.loss, model.store_mut()).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ids: Vec<_> = model.store().ids().collect();
    let mut checked = 0;
    let mut attempts = 0;
    while checked < 20 && attempts < 40 {
        attempts += 1;
        let id = ids[rng.gen_range(0..ids.len())];
        let len = model.store().value(id).len();
        let j = rng.gen_range(0..len);
        let analytic = model.store().grad(id).unwrap()[j];

        let original = model.store().value(id)[j];
        model.store_mut().value_mut(id)[j] = original + EPS;
        let plus = eval(&model);
        model.store_mut().value_mut(id)[j] = original - EPS;
        let minus = eval(&model);
        model.store_mut().value_mut(id)[j] = original;
        let numeric = (plus - minus) / (2.0 * EPS);
        assert!(
            grad_close(analytic, numeric),
            "param {} elem {j}: analytic {analytic} vs numeric {numeric}",
            model.store().name(id)
        );
        checked += 1;
    }
    assert_eq!(checked, 20);
}
