use std::collections::BTreeMap;

use chrono::NaiveDate;
use matnet::autodiff::Tape;
use matnet::data::{
    generate_synthetic, hour_day, prepare_dataset, write_samples, BranchInputs, SynthConfig,
    WindowConfig, NUMERIC_WIDTH,
};
use matnet::eval::{ablate_forward, diebold_mariano, mae, mase, rmse, wmape, AblationSpec, DmLoss};
use matnet::model::layers::attention;
use matnet::model::{EncoderKind, InterpolationMode, Mode};
use matnet::train::{adam_step, AdamState, Checkpoint, PlateauState};
use matnet::{Model, ModelConfig, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(kind: EncoderKind) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        heads: 2,
        layers: 1,
        ffn_dim: 16,
        step_in: 6,
        step_out: 5,
        interp_factor: 4,
        weather_width: 5,
        encoder: kind,
        ..ModelConfig::default()
    }
}

fn fill(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn inputs(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> BranchInputs {
    BranchInputs {
        pv: fill(&[cfg.step_in, 1], rng),
        hw: fill(&[cfg.step_in, cfg.weather_width], rng),
        fw: fill(&[cfg.step_out, cfg.weather_width], rng),
    }
}

fn kind() -> impl Strategy<Value = EncoderKind> {
    prop::sample::select(EncoderKind::ALL.to_vec())
}

fn series() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..48).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..1.0, n),
            prop::collection::vec(0.0f64..1.0, n),
        )
    })
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(
        rows in 1usize..6, cols in 1usize..8, seed: u64, shift in -50.0f64..50.0
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(&[rows, cols], |_| rng.gen_range(-20.0..20.0));
        let shifted = Tensor::from_fn(&[rows, cols], |i| x.data()[i] + shift);
        let mut tape = Tape::new();
        let a = tape.constant(x);
        let b = tape.constant(shifted);
        let sa = tape.softmax(a, 1).unwrap();
        let sb = tape.softmax(b, 1).unwrap();
        let (va, vb) = (tape.value(sa), tape.value(sb));
        for r in 0..rows {
            prop_assert!((va.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        for (p, q) in va.data().iter().zip(vb.data()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn matvec_backward_is_exact_transpose_product(
        m in 1usize..6, n in 1usize..6, seed: u64
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let int = |rng: &mut ChaCha8Rng| rng.gen_range(-8i32..8) as f64;
        let a = Tensor::from_fn(&[m, n], |_| int(&mut rng));
        let x = Tensor::from_fn(&[n, 1], |_| int(&mut rng));
        let dy = Tensor::from_fn(&[m, 1], |_| int(&mut rng));
        let mut tape = Tape::new();
        let av = tape.constant(a.clone());
        let xv = tape.param(x);
        let y = tape.matmul(av, xv).unwrap();
        let w = tape.constant(dy.clone());
        let prod = tape.mul(y, w).unwrap();
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap();
        let grad = tape.grad(xv).unwrap();
        for j in 0..n {
            let want: f64 = (0..m).map(|i| a.at2(i, j) * dy.data()[i]).sum();
            prop_assert_eq!(grad.data()[j], want);
        }
    }

    #[test]
    fn eval_dropout_is_identity(p in 0.0f64..=1.0, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = fill(&[4, 3], &mut rng);
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let y = tape.dropout(v, p, false, None).unwrap();
        prop_assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn attention_rows_sum_to_one(t in 1usize..7, d in 1usize..6, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let q = tape.constant(fill(&[t, d], &mut rng));
        let k = tape.constant(fill(&[t, d], &mut rng));
        let v = tape.constant(fill(&[t, d], &mut rng));
        let (_, weights) = attention(&mut tape, q, k, v, (d as f64).sqrt()).unwrap();
        let w = tape.value(weights);
        for r in 0..t {
            prop_assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn metrics_scale_as_documented((y, p) in series(), c in 0.01f64..100.0) {
        prop_assume!(wmape(&y, &p).is_ok() && mase(&y, &p).is_ok());
        let cy: Vec<f64> = y.iter().map(|v| v * c).collect();
        let cp: Vec<f64> = p.iter().map(|v| v * c).collect();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
        prop_assert!(close(rmse(&cy, &cp).unwrap(), c * rmse(&y, &p).unwrap()));
        prop_assert!(close(mae(&cy, &cp).unwrap(), c * mae(&y, &p).unwrap()));
        prop_assert!(close(wmape(&cy, &cp).unwrap(), wmape(&y, &p).unwrap()));
        prop_assert!(close(mase(&cy, &cp).unwrap(), mase(&y, &p).unwrap()));
        prop_assert!(rmse(&y, &p).unwrap() >= mae(&y, &p).unwrap() - 1e-15);
    }

    #[test]
    fn dm_is_antisymmetric((a, b) in (10usize..80).prop_flat_map(|n| (
        prop::collection::vec(-1.0f64..1.0, n),
        prop::collection::vec(-1.0f64..1.0, n),
    )), h in 1usize..5, absolute: bool) {
        let loss = if absolute { DmLoss::Absolute } else { DmLoss::Squared };
        let x = diebold_mariano(&a, &b, loss, h).unwrap();
        let y = diebold_mariano(&b, &a, loss, h).unwrap();
        prop_assert!((0.0..=1.0).contains(&x.p_value));
        prop_assert_eq!(x.p_value, y.p_value);
        prop_assert_eq!(x.statistic.map(|s| -s), y.statistic);
        let same = diebold_mariano(&a, &a, loss, h).unwrap();
        prop_assert!(same.statistic.is_none() && same.p_value == 1.0);
    }

    #[test]
    fn plateau_rate_is_a_power_of_the_factor(
        metrics in prop::collection::vec(0.0f64..1.0, 1..120)
    ) {
        let mut s = PlateauState::new(1e-3);
        let mut prev = s.lr();
        for m in metrics {
            let lr = s.step(m.round());
            prop_assert!(lr <= prev);
            prop_assert_eq!(lr, 1e-3 * 0.2f64.powi(s.reductions as i32));
            prev = lr;
        }
    }

    #[test]
    fn adam_descends_convex_quadratics(
        curv in prop::collection::vec(0.1f64..10.0, 1..8), seed: u64, lr in 1e-4f64..1e-2
    ) {
        // f(w) = ½ Σ c_i (w_i − 1)²
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = curv.len();
        let w0 = Tensor::from_fn(&[n], |_| rng.gen_range(-3.0..3.0));
        prop_assume!(w0.data().iter().all(|w| (w - 1.0).abs() > 1e-3));
        let f = |w: &Tensor| -> f64 {
            w.data().iter().zip(&curv).map(|(w, c)| 0.5 * c * (w - 1.0).powi(2)).sum()
        };
        let grad = Tensor::from_fn(&[n], |i| curv[i] * (w0.data()[i] - 1.0));
        let mut params = ParamStore::new();
        params.insert("w", w0.clone());
        let mut state = AdamState::new(lr);
        adam_step(&mut params, &BTreeMap::from([("w".to_string(), grad)]), &mut state).unwrap();
        prop_assert!(f(params.get("w").unwrap()) < f(&w0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outputs_have_horizon_shape_and_range(
        step_in in 1usize..8, step_out in 1usize..8, heads in 1usize..3,
        half in 1usize..5, layers in 1usize..3, k in kind(), seed: u64
    ) {
        let d_model = 2 * heads * half;
        let cfg = ModelConfig {
            d_model,
            heads,
            layers,
            ffn_dim: 2 * d_model,
            step_in,
            step_out,
            interp_factor: 1 + (seed % 5) as usize,
            ..small_config(k)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::new(cfg.clone(), &mut rng).unwrap();
        let y = model.predict(&inputs(&cfg, &mut rng)).unwrap();
        prop_assert_eq!(y.len(), step_out);
        prop_assert!(y.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn every_parameter_receives_gradient(k in kind(), seed: u64) {
        let cfg = small_config(k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::new(cfg.clone(), &mut rng).unwrap();
        let x = inputs(&cfg, &mut rng);
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape, true);
        let y = model.forward(&mut tape, &bound, &x, &mut Mode::Eval).unwrap();
        let target = tape.constant(fill(&[cfg.step_out], &mut rng));
        let loss = tape.mse_loss(y, target).unwrap();
        tape.backward(loss).unwrap();
        let grads = bound.gradients(&tape);
        prop_assert_eq!(grads.len(), model.params.len());
        for (name, g) in &grads {
            prop_assert!(g.data().iter().any(|v| *v != 0.0), "{} has no gradient", name);
        }
    }

    #[test]
    fn permuting_history_changes_attention_output(seed: u64) {
        let cfg = small_config(EncoderKind::Attention);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::new(cfg.clone(), &mut rng).unwrap();
        let x = inputs(&cfg, &mut rng);
        let mut reversed = x.clone();
        let rows: Vec<f64> = x.pv.data().iter().rev().cloned().collect();
        reversed.pv = Tensor::new(vec![cfg.step_in, 1], rows).unwrap();
        prop_assume!(reversed.pv != x.pv);
        prop_assert_ne!(model.predict(&x).unwrap(), model.predict(&reversed).unwrap());
    }

    #[test]
    fn learnable_interpolation_starts_at_fixed(k in kind(), seed: u64) {
        let learn = ModelConfig { interpolation: InterpolationMode::Learnable, ..small_config(k) };
        let fixed = ModelConfig { interpolation: InterpolationMode::Fixed, ..learn.clone() };
        let a = Model::new(learn.clone(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = Model::new(fixed, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let x = inputs(&learn, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        prop_assert_eq!(bits(&a.predict(&x).unwrap()), bits(&b.predict(&x).unwrap()));
    }

    #[test]
    fn disabled_branch_is_a_constant_input(
        k in kind(), mask in 0usize..6, seed: u64
    ) {
        let spec = AblationSpec::combinations()[mask];
        let cfg = small_config(k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::new(cfg.clone(), &mut rng).unwrap();
        let base = inputs(&cfg, &mut rng);
        let mut other = inputs(&cfg, &mut rng);
        if spec.enable_pv { other.pv = base.pv.clone(); }
        if spec.enable_hw { other.hw = base.hw.clone(); }
        if spec.enable_fw { other.fw = base.fw.clone(); }
        let a = ablate_forward(&model, &base, spec).unwrap();
        let b = ablate_forward(&model, &other, spec).unwrap();
        prop_assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(k in kind(), seed: u64) {
        let cfg = small_config(k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::new(cfg.clone(), &mut rng).unwrap();
        let bytes = Checkpoint::from_model(&model).to_bytes();
        let restored = Checkpoint::from_bytes(&bytes).unwrap().model().unwrap();
        prop_assert_eq!(&restored.params, &model.params);
        let x = inputs(&cfg, &mut rng);
        prop_assert_eq!(bits(&model.predict(&x).unwrap()), bits(&restored.predict(&x).unwrap()));
        let mut corrupt = bytes.clone();
        let at = (seed as usize) % corrupt.len();
        corrupt[at] ^= 1 << (seed % 8);
        prop_assert!(Checkpoint::from_bytes(&corrupt).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn synthetic_windows_are_clean_and_split_without_leaks(
        seed: u64, days in 8usize..20, stride in prop::sample::select(vec![1usize, 6, 24])
    ) {
        let data = generate_synthetic(&SynthConfig { days, seed, ..SynthConfig::default() }).unwrap();
        let start = NaiveDate::from_ymd_opt(2012, 5, 1).unwrap();
        let boundary = start + chrono::Duration::days((days / 2) as i64);
        let window = WindowConfig { stride, ..WindowConfig::default() };
        let prepared = prepare_dataset(&data.pv, &data.weather, &window, boundary, None).unwrap();
        let split = &prepared.split;
        let all: Vec<_> = split.train.iter().chain(&split.test).collect();
        for s in &all {
            prop_assert!(s.inputs.pv.data().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(s.target.iter().all(|v| (0.0..=1.0).contains(v)));
            for t in [&s.inputs.hw, &s.inputs.fw] {
                for r in 0..t.shape()[0] {
                    prop_assert_eq!(t.row(r)[NUMERIC_WIDTH..].iter().sum::<f64>(), 1.0);
                }
            }
        }
        let test_days: std::collections::HashSet<NaiveDate> = split
            .test
            .iter()
            .flat_map(|s| s.target_times.iter().map(|t| hour_day(*t)))
            .collect();
        for s in &split.train {
            prop_assert!(s.day < boundary);
            prop_assert!(s.target_times.iter().all(|t| !test_days.contains(&hour_day(*t))));
        }
        prop_assert!(split.test.iter().all(|s| s.day >= boundary));

        let again = prepare_dataset(&data.pv, &data.weather, &window, boundary, None).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_samples(&split.train, &mut a).unwrap();
        write_samples(&again.split.train, &mut b).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn training_dropout_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for p in [0.1, 0.2, 0.5, 0.8] {
        let n = 20_000;
        let x = Tensor::filled(&[n], 1.5);
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let y = tape.dropout(v, p, true, Some(&mut rng)).unwrap();
        let mean = tape.value(y).data().iter().sum::<f64>() / n as f64;
        // Each element is 1.5/(1−p) with probability 1−p, else 0.
        let sd = 1.5 * (p / (1.0 - p)).sqrt() / (n as f64).sqrt();
        assert!(
            (mean - 1.5).abs() <= 3.0 * sd,
            "p={p}: mean {mean}, 3σ {}",
            3.0 * sd
        );
    }
}
