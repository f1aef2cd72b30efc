//! Analytic gradients against central finite differences.

use gcgrnn::model::{ModelConfig, ModelDims, ModelKind, SeqModel};
use gcgrnn::tensor::{Tape, Var};
use gcgrnn::{Error, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Builds `loss = build(params)` twice per entry and compares with `backward`.
fn check(inputs: &[Matrix], build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |vals: &[Matrix]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|m| tape.param(m.clone())).collect();
        let loss = build(&mut tape, &vars);
        (tape.value(loss).get(0, 0), tape, vars, loss)
    };
    let (_, tape, vars, loss) = eval(inputs);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let g = grads.wrt(*v);
        assert_eq!(g.shape(), inputs[k].shape());
        for idx in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[idx] += EPS;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[idx] -= EPS;
            let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * EPS);
            worst = worst.max(rel_err(g.data()[idx], numeric));
        }
    }
    worst
}

/// `sum(out ⊙ W)` for a fixed random `W`, so every output entry has its own weight.
fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let (r, c) = tape.value(out).shape();
    let w = tape.constant(random(&mut ChaCha8Rng::seed_from_u64(seed), r, c));
    let p = tape.hadamard(out, w).unwrap();
    tape.sum(p)
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let a23 = random(&mut rng, 2, 3);
    let b34 = random(&mut rng, 3, 4);
    let c23 = random(&mut rng, 2, 3);
    let d23 = random(&mut rng, 2, 3);
    let a21 = random(&mut rng, 2, 1);
    let bias = random(&mut rng, 1, 3);
    let sq = random(&mut rng, 3, 3);

    let cases: Vec<(&str, Vec<Matrix>, Box<dyn Fn(&mut Tape, &[Var]) -> Var>)> = vec![
        ("matmul", vec![a23.clone(), b34.clone()], Box::new(|t, v| {
            let o = t.matmul(v[0], v[1]).unwrap();
            weighted_sum(t, o, 1)
        })),
        ("concat_cols", vec![a23.clone(), a21.clone()], Box::new(|t, v| {
            let o = t.concat_cols(v[0], v[1]).unwrap();
            weighted_sum(t, o, 2)
        })),
        ("hstack", vec![a21.clone(), a23.clone(), a21.clone()], Box::new(|t, v| {
            let o = t.hstack(v).unwrap();
            weighted_sum(t, o, 3)
        })),
        ("hadamard", vec![a23.clone(), c23.clone()], Box::new(|t, v| {
            let o = t.hadamard(v[0], v[1]).unwrap();
            weighted_sum(t, o, 4)
        })),
        ("add", vec![a23.clone(), c23.clone()], Box::new(|t, v| {
            let o = t.add(v[0], v[1]).unwrap();
            weighted_sum(t, o, 5)
        })),
        ("sigmoid", vec![a23.clone()], Box::new(|t, v| {
            let o = t.sigmoid(v[0]);
            weighted_sum(t, o, 6)
        })),
        ("tanh", vec![a23.clone()], Box::new(|t, v| {
            let o = t.tanh(v[0]);
            weighted_sum(t, o, 7)
        })),
        ("affine_combination", vec![a23.clone(), c23.clone(), d23.clone()], Box::new(|t, v| {
            let o = t.affine_combination(v[0], v[1], v[2]).unwrap();
            weighted_sum(t, o, 8)
        })),
        ("add_bias", vec![a23.clone(), bias.clone()], Box::new(|t, v| {
            let o = t.add_bias(v[0], v[1]).unwrap();
            weighted_sum(t, o, 9)
        })),
        ("symmetrize", vec![sq.clone()], Box::new(|t, v| {
            let o = t.symmetrize(v[0]).unwrap();
            weighted_sum(t, o, 10)
        })),
        ("scale_shift", vec![a23.clone()], Box::new(|t, v| {
            let o = t.scale_shift(v[0], -2.5, 7.0);
            weighted_sum(t, o, 11)
        })),
        ("mae_loss", vec![a23.clone()], Box::new(|t, v| {
            let target = Matrix::from_rows(&[[3.0, -3.0, 3.0], [-3.0, 3.0, 3.0]]).unwrap();
            let mask = Matrix::from_rows(&[[1.0, 0.0, 1.0], [1.0, 1.0, 1.0]]).unwrap();
            t.mae_loss(v[0], &target, &mask).unwrap()
        })),
    ];
    for (name, inputs, build) in cases {
        let worst = check(&inputs, build);
        assert!(worst <= TOL, "{name}: max relative error {worst:e}");
    }
}

#[test]
fn sum_of_product_gradient_by_hand() {
    let mut t = Tape::new();
    let a = t.param(Matrix::from_rows(&[[1.0, 1.0]]).unwrap());
    let b = t.constant(Matrix::column(&[2.0, 3.0]).unwrap());
    let p = t.matmul(a, b).unwrap();
    let loss = t.sum(p);
    let g = t.backward(loss).unwrap().wrt(a);
    assert_eq!(g, Matrix::from_rows(&[[2.0, 3.0]]).unwrap());
}

#[test]
fn bias_gradient_sums_rows() {
    let mut t = Tape::new();
    let a = t.constant(Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64));
    let b = t.param(Matrix::zeros(1, 2));
    let o = t.add_bias(a, b).unwrap();
    let loss = t.sum(o);
    assert_eq!(t.backward(loss).unwrap().wrt(b), Matrix::from_rows(&[[3.0, 3.0]]).unwrap());
}

#[test]
fn sigmoid_gradient_at_zero() {
    let mut t = Tape::new();
    let x = t.param(Matrix::scalar(0.0));
    let y = t.sigmoid(x);
    assert_eq!(t.value(y).get(0, 0), 0.5);
    let g = t.backward(y).unwrap().wrt(x).get(0, 0);
    let numeric = (1.0 / (1.0 + (-1e-6f64).exp()) - 1.0 / (1.0 + 1e-6f64.exp())) / 2e-6;
    assert_eq!(g, 0.25);
    assert!(rel_err(g, numeric) <= 1e-6);
}

#[test]
fn linear_and_unused_parameters() {
    let mut t = Tape::new();
    let w = t.param(Matrix::from_rows(&[[1.0, -2.0], [0.5, 4.0]]).unwrap());
    let unused = t.param(Matrix::ones(3, 1));
    let loss = t.sum(w);
    let grads = t.backward(loss).unwrap();
    assert_eq!(grads.wrt(w), Matrix::ones(2, 2));
    assert_eq!(grads.wrt(unused), Matrix::zeros(3, 1));
    assert_eq!(grads.into_param_grads(), vec![Matrix::ones(2, 2), Matrix::zeros(3, 1)]);
}

#[test]
fn non_scalar_loss_rejected() {
    let mut t = Tape::new();
    let w = t.param(Matrix::ones(2, 2));
    assert!(matches!(t.backward(w), Err(Error::Contract(_))));
}

#[test]
fn forward_values_by_hand() {
    let mut t = Tape::new();
    let a = t.constant(Matrix::from_rows(&[[2.0, 3.0]]).unwrap());
    let b = t.constant(Matrix::from_rows(&[[4.0, 5.0]]).unwrap());
    let h = t.hadamard(a, b).unwrap();
    assert_eq!(t.value(h), &Matrix::from_rows(&[[8.0, 15.0]]).unwrap());

    let z = t.constant(Matrix::scalar(0.5));
    let lo = t.constant(Matrix::scalar(2.0));
    let hi = t.constant(Matrix::scalar(4.0));
    let mix = t.affine_combination(z, lo, hi).unwrap();
    assert_eq!(t.value(mix).get(0, 0), 3.0);

    let zero = t.constant(Matrix::zeros(2, 2));
    let bias = t.constant(Matrix::from_rows(&[[1.0, 2.0]]).unwrap());
    let o = t.add_bias(zero, bias).unwrap();
    assert_eq!(t.value(o), &Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0]]).unwrap());
    let th = t.tanh(zero);
    assert_eq!(t.value(th), &Matrix::zeros(2, 2));
}

#[test]
fn mae_loss_examples() {
    let mut t = Tape::new();
    let p = t.constant(Matrix::scalar(3.0));
    let l = t.mae_loss(p, &Matrix::scalar(1.0), &Matrix::scalar(1.0)).unwrap();
    assert_eq!(t.value(l).get(0, 0), 2.0);

    let p2 = t.constant(Matrix::from_rows(&[[3.0, 10.0]]).unwrap());
    let target = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
    let l2 = t.mae_loss(p2, &target, &Matrix::from_rows(&[[1.0, 0.0]]).unwrap()).unwrap();
    assert_eq!(t.value(l2).get(0, 0), 2.0);

    let same = t.mae_loss(p2, &Matrix::from_rows(&[[3.0, 10.0]]).unwrap(), &Matrix::ones(1, 2)).unwrap();
    assert_eq!(t.value(same).get(0, 0), 0.0);

    assert!(matches!(t.mae_loss(p2, &target, &Matrix::zeros(1, 2)), Err(Error::DegenerateMask)));
}

#[test]
fn mae_subgradient_at_tie_is_zero() {
    let mut t = Tape::new();
    let p = t.param(Matrix::from_rows(&[[1.0, 5.0]]).unwrap());
    let l = t.mae_loss(p, &Matrix::from_rows(&[[1.0, 2.0]]).unwrap(), &Matrix::ones(1, 2)).unwrap();
    assert_eq!(t.backward(l).unwrap().wrt(p), Matrix::from_rows(&[[0.0, 0.5]]).unwrap());
}

/// Max relative error of the full model gradient over every parameter entry.
pub fn model_gradient_error(config: ModelConfig, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = SeqModel::init(config, &mut rng).unwrap();
    let d = config.dims;
    let x = random(&mut rng, d.nodes, d.input_steps);
    // |ŷ| < √H under the default init, so these targets keep the MAE away from its kinks
    // while the loss stays near 1 and differencing roundoff stays small.
    let bound = 1.0 + (d.hidden as f64).sqrt();
    let target = Matrix::from_fn(d.nodes, d.forecast_steps, |_, _| rng.random_range(bound..bound + 1.0));
    let mut mask = Matrix::ones(d.nodes, d.forecast_steps);
    mask.set(0, 0, 0.0);
    let (scale, shift) = (1.0, 0.0);

    let (_, grads) = model.loss_and_grads(&x, &target, &mask, scale, shift).unwrap();
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    assert_eq!(grads.len(), names.len());
    let mut worst: f64 = 0.0;
    for (k, name) in names.iter().enumerate() {
        let base = model.named_params()[k].1.clone();
        assert_eq!(grads[k].shape(), base.shape(), "{name}");
        for idx in 0..base.len() {
            let loss_at = |delta: f64| {
                let mut m = model.clone();
                let mut p = base.clone();
                p.data_mut()[idx] += delta;
                m.set_param(name, p).unwrap();
                m.loss_and_grads(&x, &target, &mask, scale, shift).unwrap().0
            };
            let numeric = (loss_at(EPS) - loss_at(-EPS)) / (2.0 * EPS);
            worst = worst.max(rel_err(grads[k].data()[idx], numeric));
        }
    }
    worst
}

fn dims(n: usize, h: usize, t: usize, f: usize) -> ModelDims {
    ModelDims {
        nodes: n,
        hidden: h,
        input_steps: t,
        forecast_steps: f,
    }
}

#[test]
fn gcgrnn_end_to_end_gradient() {
    let worst = model_gradient_error(ModelConfig::new(ModelKind::GraphConvGru, dims(3, 4, 2, 2)), 5);
    assert!(worst <= TOL, "max relative error {worst:e}");
}

#[test]
fn plain_gru_end_to_end_gradient() {
    let worst = model_gradient_error(ModelConfig::new(ModelKind::PlainGru, dims(3, 4, 2, 2)), 6);
    assert!(worst <= TOL, "max relative error {worst:e}");
}

#[test]
fn deep_and_shared_variants_gradient() {
    let mut deep = ModelConfig::new(ModelKind::GraphConvGru, dims(2, 3, 2, 3));
    deep.depth = 2;
    let worst = model_gradient_error(deep, 7);
    assert!(worst <= TOL, "depth 2: max relative error {worst:e}");

    let mut shared = ModelConfig::new(ModelKind::GraphConvGru, dims(3, 2, 3, 2));
    shared.share_encoder_decoder = true;
    let worst = model_gradient_error(shared, 8);
    assert!(worst <= TOL, "shared: max relative error {worst:e}");
}
