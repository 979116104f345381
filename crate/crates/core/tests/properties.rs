use num_complex::Complex64;
use proptest::prelude::*;

use progtr::autodiff::{gradient_check, AdamConfig, AdamState, GradCheckConfig, ParameterSet, Tape, Tensor};
use progtr::baselines::{
    bits_to_label, label_to_bits, DecodeMetric, JointDecoder, MultiUseScheme, QamConstellation, SCHEME_NAMES,
};
use progtr::channels::{awgn_apply_with, draw_normals, ChannelSpec, TwtaParams};
use progtr::evaluation::{evaluate, mutual_information, EvalConfig, Metric, MiConfig, SchemeSystem};
use progtr::experiment::{parse_config, Scenario, SCENARIOS};
use progtr::objectives::{bce_step_loss, power_penalty, progtr_loss, LossWeights};
use progtr::rng::stream;
use progtr::training::{fairness_select_optimizer, SourceSpec};
use progtr::transceiver::{run_link, InputKind, Model, NoiseDraw, TransceiverConfig};

fn tensor(rows: usize, cols: usize, seed: u64, scale: f64) -> Tensor {
    let mut rng = stream(seed, "prop", rows as u64 * 131 + cols as u64);
    let n = draw_normals(&mut rng, rows * cols);
    Tensor::new(vec![rows, cols], n.data()[..rows * cols].iter().map(|v| v * scale).collect()).unwrap()
}

fn small_model(b: usize, t: usize, kind: InputKind, seed: u64) -> (Model, ParameterSet) {
    let cfg = TransceiverConfig { payload_len: b, channel_uses: t, input_kind: kind, layers: 2, state_size: 6 };
    let mut params = ParameterSet::new();
    let model = Model::build(cfg, 1, &mut params, &mut stream(seed, "init", 0)).unwrap();
    (model, params)
}

fn link_estimates(model: &Model, params: &ParameterSet, payload: &Tensor, snr: f64, noise: &NoiseDraw) -> Vec<Tensor> {
    let mut tape = Tape::new();
    let out =
        run_link(&mut tape, params, model, std::slice::from_ref(payload), snr, &ChannelSpec::awgn(), noise).unwrap();
    out.estimates[0].iter().map(|e| tape.value(e.estimate).clone()).collect()
}

fn noise(t: usize, rows: usize, seed: u64, noise_var: f64) -> NoiseDraw {
    let mut rng = stream(seed, "noise", 0);
    NoiseDraw { noise_var, normals: (0..t).map(|_| draw_normals(&mut rng, rows)).collect() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn composite_gradients_match_finite_differences(seed in 0u64..1000, rows in 1usize..5) {
        let mut params = ParameterSet::new();
        params.add("w1", tensor(3, 4, seed, 0.7)).unwrap();
        params.add("b1", tensor(1, 4, seed + 1, 0.3).slice_cols(0, 4)).unwrap();
        params.add("w2", tensor(4, 2, seed + 2, 0.7)).unwrap();
        let x = tensor(rows, 3, seed + 3, 1.0);
        let target = tensor(rows, 2, seed + 4, 1.0).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let f = |tape: &mut Tape, p: &ParameterSet| {
            let ids: Vec<_> = p.ids().collect();
            let xv = tape.constant(x.clone())?;
            let w1 = tape.param(p, ids[0])?;
            let h = tape.matmul(xv, w1)?;
            let b1 = tape.param(p, ids[1])?;
            let b1 = tape.sum_all(b1).and_then(|s| tape.scale(s, 0.25))?;
            let h = tape.tanh(h)?;
            let hb = tape.affine(h, 1.0, 0.0)?;
            let hb = tape.mul(hb, h)?;
            let w2 = tape.param(p, ids[2])?;
            let o = tape.matmul(hb, w2)?;
            let pr = tape.sigmoid(o)?;
            let tv = tape.constant(target.clone())?;
            let l = tape.bce(tv, pr)?;
            let pw = tape.mean_row_norm_sq(o)?;
            let s = tape.add(l, pw)?;
            tape.add(s, b1)
        };
        let report = gradient_check(&mut params, f, &GradCheckConfig::default()).unwrap();
        prop_assert!(report.passed(), "{report:?}");
        prop_assert!(report.max_rel_err < 1e-4);
    }

    #[test]
    fn forward_and_gradients_are_deterministic(seed in 0u64..1000) {
        let (model, mut params) = small_model(3, 2, InputKind::Bits, seed);
        let payload = SourceSpec::BernoulliBits.sample_batch(3, 8, &mut stream(seed, "payload", 0));
        let nd = noise(2, 8, seed, 0.3);
        let mut grads = Vec::new();
        for _ in 0..2 {
            let mut tape = Tape::new();
            let out = run_link(&mut tape, &params, &model, std::slice::from_ref(&payload), 7.0, &ChannelSpec::awgn(), &nd).unwrap();
            let target = tape.constant(payload.clone()).unwrap();
            let l = bce_step_loss(&mut tape, target, out.estimates[0][1].estimate).unwrap();
            tape.backward(l, &mut params).unwrap();
            grads.push((tape.value(l).item().to_bits(), params.grads()));
            params.zero_grads();
        }
        prop_assert_eq!(grads[0].0, grads[1].0);
        prop_assert!(grads[0].1 == grads[1].1);
    }

    #[test]
    fn adam_counts_steps_and_stays_finite(values in prop::collection::vec(-1e3f64..1e3, 1..6), steps in 1usize..20) {
        let mut params = ParameterSet::new();
        params.add("w", Tensor::vector(values.clone())).unwrap();
        let mut adam = AdamState::new(&params, AdamConfig::default());
        for k in 0..steps {
            let g: Vec<f64> = values.iter().map(|v| v * (k as f64 - 3.0)).collect();
            params.iter_mut().next().unwrap().grad = Tensor::vector(g);
            adam.step(&mut params, None).unwrap();
            prop_assert_eq!(adam.steps(), k as u64 + 1);
            prop_assert!(adam.moments_finite());
        }
    }

    #[test]
    fn bit_estimates_are_strict_probabilities(seed in 0u64..1000, snr in 0.0f64..30.0) {
        let (model, params) = small_model(4, 3, InputKind::Bits, seed);
        let payload = SourceSpec::BernoulliBits.sample_batch(4, 16, &mut stream(seed, "payload", 1));
        for est in link_estimates(&model, &params, &payload, snr, &noise(3, 16, seed, 0.5)) {
            prop_assert!(est.data().iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn estimates_are_causal(seed in 0u64..1000, shift in -3.0f64..3.0) {
        let (model, params) = small_model(2, 3, InputKind::Reals, seed);
        let payload = SourceSpec::Gaussian.sample_batch(2, 8, &mut stream(seed, "payload", 2));
        let base = noise(3, 8, seed, 0.2);
        let mut later = base.clone();
        later.normals[2] = later.normals[2].map(|v| v + shift);
        let a = link_estimates(&model, &params, &payload, 10.0, &base);
        let b = link_estimates(&model, &params, &payload, 10.0, &later);
        prop_assert_eq!(&a[0], &b[0]);
        prop_assert_eq!(&a[1], &b[1]);
    }

    #[test]
    fn estimate_is_activation_of_accumulator(seed in 0u64..1000) {
        let (model, params) = small_model(3, 2, InputKind::Bits, seed);
        let payload = SourceSpec::BernoulliBits.sample_batch(3, 4, &mut stream(seed, "payload", 3));
        let mut tape = Tape::new();
        let out = run_link(&mut tape, &params, &model, &[payload], 5.0, &ChannelSpec::awgn(), &noise(2, 4, seed, 0.1)).unwrap();
        for e in &out.estimates[0] {
            let acc = tape.value(e.accumulator);
            let est = tape.value(e.estimate);
            for (a, p) in acc.data().iter().zip(est.data()) {
                prop_assert_eq!(*p, 1.0 / (1.0 + (-a).exp()));
            }
        }
    }

    #[test]
    fn noiseless_awgn_is_linear(re in -2.0f64..2.0, im in -2.0f64..2.0, a in -3.0f64..3.0, seed in 0u64..100) {
        let h = Complex64::new(re, im);
        let x = tensor(5, 2, seed, 1.0);
        let z = Tensor::zeros(&[5, 2]);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone()).unwrap();
        let sx = tape.constant(x.map(|v| a * v)).unwrap();
        let y = awgn_apply_with(&mut tape, xv, h, 0.0, &z).unwrap();
        let ys = awgn_apply_with(&mut tape, sx, h, 0.0, &z).unwrap();
        for r in 0..5 {
            let want = h * Complex64::new(x.at(r, 0), x.at(r, 1));
            prop_assert!((tape.value(y).at(r, 0) - want.re).abs() < 1e-12);
            prop_assert!((tape.value(y).at(r, 1) - want.im).abs() < 1e-12);
            prop_assert!((tape.value(ys).at(r, 0) - a * want.re).abs() < 1e-12);
        }
    }

    #[test]
    fn twta_amplitude_and_phase_are_monotone(u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let p = TwtaParams::default();
        let sat = p.saturation_input();
        let (r1, r2) = (u.min(v) * sat, u.max(v) * sat);
        prop_assume!(r2 - r1 > 1e-9);
        prop_assert!(p.amplitude(r1) < p.amplitude(r2));
        let (q1, q2) = (r1 * 5.0, r2 * 5.0);
        prop_assert!(p.phase(q1) < p.phase(q2));
        prop_assert!(p.phase(q2) <= p.alpha_psi / p.beta_psi);
    }

    #[test]
    fn noise_depends_only_on_the_stream(seed in any::<u64>(), shard in 0u64..1000) {
        let a = draw_normals(&mut stream(seed, "noise", shard), 7);
        let b = draw_normals(&mut stream(seed, "noise", shard), 7);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn bce_is_non_negative(bits in prop::collection::vec(0u8..2, 1..12), logits in prop::collection::vec(-40.0f64..40.0, 12)) {
        let n = bits.len();
        let mut tape = Tape::new();
        let d = tape.constant(Tensor::new(vec![1, n], bits.iter().map(|&b| f64::from(b)).collect()).unwrap()).unwrap();
        let probs: Vec<f64> = logits[..n].iter().map(|l| 1.0 / (1.0 + (-l).exp())).collect();
        let p = tape.constant(Tensor::new(vec![1, n], probs).unwrap()).unwrap();
        let l = bce_step_loss(&mut tape, d, p).unwrap();
        prop_assert!(tape.value(l).item() >= 0.0);
        let exact = tape.constant(Tensor::new(vec![1, n], bits.iter().map(|&b| f64::from(b)).collect()).unwrap()).unwrap();
        let z = bce_step_loss(&mut tape, d, exact).unwrap();
        prop_assert!(tape.value(z).item() < 1e-5);
    }

    #[test]
    fn loss_is_monotone_in_steps_and_excess_power(
        steps in prop::collection::vec(0.0f64..5.0, 3),
        powers in prop::collection::vec(0.0f64..3.0, 3),
        k in 0usize..3,
        bump in 0.0f64..1.0,
    ) {
        let lw = LossWeights::new(vec![1.0, 2.0, 4.0], 100.0, 1.0).unwrap();
        let eval = |s: &[f64], p: &[f64]| {
            let mut tape = Tape::new();
            let sv: Vec<_> = s.iter().map(|&v| tape.constant(Tensor::scalar(v)).unwrap()).collect();
            let pv: Vec<_> = p.iter().map(|&v| tape.constant(Tensor::scalar(v)).unwrap()).collect();
            let l = progtr_loss(&mut tape, &sv, &pv, &lw).unwrap();
            tape.value(l).item()
        };
        let base = eval(&steps, &powers);
        let mut s2 = steps.clone();
        s2[k] += bump;
        prop_assert!(eval(&s2, &powers) >= base);
        let mut p2 = powers.clone();
        p2[k] += bump;
        let bumped = eval(&steps, &p2);
        if powers[k] > 1.0 {
            prop_assert!(bumped >= base);
        }
        prop_assert!(bumped >= base - 1e-12);
    }

    #[test]
    fn penalty_gradient_is_zero_or_lambda(power in 0.0f64..3.0, lambda in 0.1f64..1e4) {
        prop_assume!(power != 1.0);
        let lw = LossWeights::new(vec![1.0], lambda, 1.0).unwrap();
        let mut params = ParameterSet::new();
        let id = params.add("p", Tensor::scalar(power)).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&params, id).unwrap();
        let pen = power_penalty(&mut tape, &[p], &lw).unwrap();
        tape.backward(pen, &mut params).unwrap();
        let g = params.get(id).grad.item();
        prop_assert_eq!(g, if power > 1.0 { lambda } else { 0.0 });
    }

    #[test]
    fn at_most_one_user_dominates(losses in prop::collection::vec(0.01f64..10.0, 2..6), psi in 1.0001f64..3.0) {
        let k = fairness_select_optimizer(&losses, psi).unwrap();
        let dominating: Vec<usize> = (0..losses.len())
            .filter(|&i| (0..losses.len()).all(|j| j == i || losses[i] > psi * losses[j]))
            .collect();
        prop_assert!(dominating.len() <= 1);
        prop_assert_eq!(k, dominating.first().map_or(0, |i| i + 1));
    }

    #[test]
    fn encoders_invert_at_zero_noise(name_idx in 0usize..4, seed in any::<u64>()) {
        let scheme = MultiUseScheme::by_name(SCHEME_NAMES[name_idx]).unwrap();
        let b = scheme.payload_len();
        let dec = JointDecoder::new(scheme.clone()).unwrap();
        let bits = SourceSpec::BernoulliBits.sample_batch(b, 1, &mut stream(seed, "payload", 0));
        let bits: Vec<u8> = bits.data().iter().map(|&v| v as u8).collect();
        let xs = scheme.encode(&bits).unwrap();
        prop_assert_eq!(xs.clone(), scheme.encode(&bits).unwrap());
        let got = dec.decode(&xs, DecodeMetric::Joint);
        prop_assert_eq!(got, bits.iter().map(|&v| Some(v)).collect::<Vec<_>>());
    }

    #[test]
    fn gray_neighbours_differ_in_one_axis_bit(order_idx in 0usize..4, label in any::<u32>()) {
        let order = [4usize, 16, 64, 256][order_idx];
        let c = QamConstellation::new(order).unwrap();
        let k = c.bits();
        let label = (label as usize) % order;
        let bits = label_to_bits(label, k);
        prop_assert_eq!(bits_to_label(&bits), label);
        let p = c.point(label);
        let step = (0..order)
            .map(|o| (c.point(o).re - p.re).abs())
            .filter(|&d| d > 1e-9)
            .fold(f64::INFINITY, f64::min);
        for other in 0..order {
            let q = c.point(other);
            let ob = label_to_bits(other, k);
            let half = k / 2;
            if (q.im - p.im).abs() < 1e-9 && ((q.re - p.re).abs() - step).abs() < 1e-9 {
                let diff = (0..half).filter(|&i| bits[i] != ob[i]).count();
                prop_assert_eq!(diff, 1);
                prop_assert!((half..k).all(|i| bits[i] == ob[i]));
            }
            if (q.re - p.re).abs() < 1e-9 && ((q.im - p.im).abs() - step).abs() < 1e-9 {
                let diff = (half..k).filter(|&i| bits[i] != ob[i]).count();
                prop_assert_eq!(diff, 1);
                prop_assert!((0..half).all(|i| bits[i] == ob[i]));
            }
        }
    }

    #[test]
    fn presets_survive_config_round_trip(idx in 0usize..9, seed in any::<u64>(), iters in 0usize..1000) {
        let s = SCENARIOS[idx];
        let cfg = parse_config(&format!("scenario = {}\n[train]\nseed = {seed}\niterations = {iters}\n", s.as_str())).unwrap();
        prop_assert_eq!(cfg.scenario, s);
        prop_assert_eq!(&cfg.train.meta, &Scenario::parse(s.as_str()).unwrap().preset());
        prop_assert_eq!((cfg.train.seed, cfg.train.iterations), (seed, iters));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn joint_decoding_ber_does_not_grow_with_t(name_idx in 0usize..4, snr in 0.0f64..20.0, seed in 0u64..100) {
        let scheme = MultiUseScheme::by_name(SCHEME_NAMES[name_idx]).unwrap();
        let t_max = scheme.channel_uses();
        let sys = SchemeSystem::new(scheme, ChannelSpec::awgn(), DecodeMetric::Joint).unwrap();
        let ev = evaluate(&sys, &[Metric::Ber], &EvalConfig::new(vec![snr], 4000, seed)).unwrap();
        for t in 1..t_max {
            let (a, b) = (ev.get("ber", snr, t).unwrap(), ev.get("ber", snr, t + 1).unwrap());
            prop_assert!(b.value <= a.value + 3.0 * a.stderr.max(b.stderr), "{a:?} {b:?}");
        }
    }

    #[test]
    fn mi_is_bounded_by_marginal_entropy(p in 0.05f64..0.5, flip in 0.0f64..0.5, seed in 0u64..100) {
        use rand::Rng;
        let n = 100_000;
        let mut rng = stream(seed, "mi-prop", 0);
        let d: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 }).collect();
        let e: Vec<f64> = d.iter().map(|&v| if rng.random::<f64>() < flip { 1.0 - v } else { v } + 0.1 * rng.random::<f64>()).collect();
        let mi = mutual_information(&d, &e, &MiConfig::default());
        let h = -(p * p.log2() + (1.0 - p) * (1.0 - p).log2());
        prop_assert!(mi.bits >= 0.0);
        prop_assert!(mi.bits <= h + 0.03, "{} > {}", mi.bits, h);
    }
}
