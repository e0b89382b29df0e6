use doa_core::array::{
    analog_combine, steering_vector, synthesize_snapshots, AnalogWeights, ArrayConfig, EmitterScenario, Emitter,
    SignalModel,
};
use doa_core::crlb::{crlb_fd, crlb_had, crlb_parts, crlb_tlhad};
use doa_core::detect::{roc_from_scores, Detector, GlrtForm};
use doa_core::doa::{combine_estimates, had_root_music_classic};
use doa_core::linalg::{hermitian_eigen, poly_roots};
use doa_core::mlnn::{eig_features, Activation, MlnnModel};
use doa_core::quant::{performance_loss_db, Bits};
use doa_core::rng;
use doa_core::spectral::{root_music, sample_covariance};
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

fn noiseless(theta: f64, snapshots: usize) -> EmitterScenario {
    EmitterScenario {
        emitters: vec![Emitter { direction_deg: theta, power: 1.0 }],
        noise_power: 1e-30,
        n_snapshots: snapshots,
        signal_model: SignalModel::ConstantModulus,
    }
}

fn random_covariance(p: usize, seed: u64) -> DMatrix<Complex64> {
    let mut r = rng::stream(seed, 0);
    let x = DMatrix::from_fn(p, p + 2, |_, _| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)));
    &x * x.adjoint()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn steering_is_vandermonde(p in 2usize..40, d in 0.1f64..2.0, u in -1.0f64..=1.0) {
        let a = steering_vector(p, d, u).unwrap();
        let step = a[1] / a[0];
        for k in 1..p {
            prop_assert!((a[k] / a[k - 1] - step).norm() < 1e-9);
            prop_assert!((a[k].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matched_subarrays_form_a_ula_of_spacing_md(k in 2usize..10, m in 1usize..8, u in -0.95f64..0.95) {
        let cfg = ArrayConfig::hybrid(k, m);
        let theta = u.asin().to_degrees();
        let batch = synthesize_snapshots(&cfg, &noiseless(theta, 1), &mut rng::stream(3, 0)).unwrap();
        let w = vec![AnalogWeights::steered(m, cfg.spacing, u); k];
        let y = analog_combine(&batch, &cfg, &w).unwrap();
        let want = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * m as f64 * cfg.spacing * u);
        for c in 1..k {
            let ratio = y.samples()[(c, 0)] / y.samples()[(c - 1, 0)];
            prop_assert!((ratio - want).norm() < 1e-9);
        }
    }

    #[test]
    fn root_music_polynomial_roots_pair_up(p in 3usize..12, seed in any::<u64>()) {
        let cov = random_covariance(p, seed);
        let (_, vecs) = hermitian_eigen(&cov);
        let en = vecs.columns(1, p - 1).into_owned();
        let proj = &en * en.adjoint();
        let mut coeffs = vec![Complex64::new(0.0, 0.0); 2 * p - 1];
        for m in 0..p {
            for n in 0..p {
                coeffs[n + p - 1 - m] += proj[(m, n)];
            }
        }
        let roots = poly_roots(&coeffs).unwrap();
        for z in &roots {
            let partner = Complex64::new(1.0, 0.0) / z.conj();
            let nearest = roots.iter().map(|w| (w - partner).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(nearest < 1e-6 * partner.norm().max(1.0), "{z} has no partner");
        }
    }

    #[test]
    fn noiseless_root_music_is_exact(p in 3usize..24, u in -0.98f64..0.98, t in 1usize..5) {
        let cfg = ArrayConfig::fully_digital(p);
        let batch = synthesize_snapshots(&cfg, &noiseless(u.asin().to_degrees(), t), &mut rng::stream(9, 1)).unwrap();
        let got = root_music(&sample_covariance(&batch).unwrap(), 1, 0.5).unwrap()[0];
        prop_assert!((got - u).abs() < 1e-9, "{got} vs {u}");
    }

    #[test]
    fn noiseless_candidates_contain_the_truth(m in prop::sample::select(vec![2usize, 4, 8]), u in -0.97f64..0.97) {
        let cfg = ArrayConfig::hybrid(64 / m, m);
        let est = had_root_music_classic(&cfg, &noiseless(u.asin().to_degrees(), 1), &mut rng::stream(4, 2)).unwrap();
        let c = est.candidates.unwrap();
        prop_assert!(c.candidates.iter().any(|x| (x - u).abs() < 1e-9), "{u} not in {:?}", c.candidates);
    }

    #[test]
    fn detectors_and_mlnn_ignore_scaling(p in 3usize..16, seed in any::<u64>(), c in 1e-6f64..1e6) {
        let cfg = ArrayConfig::fully_digital(p);
        let scen = EmitterScenario::single(10.0, -3.0, 30);
        let cov = sample_covariance(&synthesize_snapshots(&cfg, &scen, &mut rng::stream(seed, 0)).unwrap()).unwrap();
        let scaled = cov.scaled(c);
        for d in [Detector::MaxMin, Detector::Glrt(GlrtForm::LargestToMean), Detector::Glrt(GlrtForm::Sphericity)] {
            let (a, b) = (d.statistic(&cov.eigenvalues).value, d.statistic(&scaled.eigenvalues).value);
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
        let model = MlnnModel::new(p, &[4], Activation::Tanh, seed).unwrap();
        let (a, b) = (model.forward(&eig_features(&cov).values).unwrap(), model.forward(&eig_features(&scaled).values).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn roc_is_a_monotone_staircase(h0 in prop::collection::vec(-5i32..5, 1..40), h1 in prop::collection::vec(-5i32..5, 1..40)) {
        let f = |v: &[i32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
        let pts = roc_from_scores(&f(&h0), &f(&h1));
        prop_assert_eq!((pts[0].fap, pts[0].pd), (0.0, 0.0));
        prop_assert_eq!((pts.last().unwrap().fap, pts.last().unwrap().pd), (1.0, 1.0));
        for w in pts.windows(2) {
            prop_assert!(w[1].fap >= w[0].fap && w[1].pd >= w[0].pd);
        }
    }

    #[test]
    fn bounds_scale_exactly_in_snr_and_t(theta in -70.0f64..70.0, snr in -20.0f64..20.0, t in 1usize..50, eta in prop::sample::select(vec![0.25, 0.5, 0.75])) {
        let (cfg, _) = ArrayConfig::two_layer(32, 4, eta).unwrap();
        let hyb = ArrayConfig::hybrid(8, 4);
        let fd = ArrayConfig::fully_digital(32);
        let bounds = |s: f64, t: usize| [
            crlb_fd(&fd, theta, s, t).unwrap(),
            crlb_had(&hyb, theta, s, t, None).unwrap(),
            crlb_tlhad(&cfg, theta, s, t, None).unwrap(),
        ];
        let base = bounds(snr, t);
        let more_snr = bounds(snr + 10.0, t);
        let more_t = bounds(snr, 3 * t);
        for i in 0..3 {
            prop_assert!((base[i] / more_snr[i] - 10.0).abs() < 1e-9);
            prop_assert!((base[i] / more_t[i] - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fisher_information_adds_over_parts(theta in -70.0f64..70.0, eta in prop::sample::select(vec![0.125, 0.25, 0.5, 0.75]), steer in prop::option::of(-0.5f64..0.5)) {
        let (cfg, _) = ArrayConfig::two_layer(64, 4, eta).unwrap();
        let whole = crlb_tlhad(&cfg, theta, 0.0, 1, steer).unwrap();
        let (had, fd) = crlb_parts(&cfg, theta, 0.0, 1, steer).unwrap();
        let sum = 1.0 / had + 1.0 / fd;
        prop_assert!((1.0 / whole - sum).abs() <= 1e-10 * sum);
    }

    #[test]
    fn fusion_never_loses_to_either_part(a in 1e-6f64..1e3, b in 1e-6f64..1e3, ua in -1.0f64..1.0, ub in -1.0f64..1.0) {
        let (u, v) = combine_estimates(ua, a, ub, b).unwrap();
        prop_assert!(v <= a.min(b));
        prop_assert!(u >= ua.min(ub) - 1e-12 && u <= ua.max(ub) + 1e-12);
    }

    #[test]
    fn quantization_always_costs_something(b in 1u32..=16, snr in -30.0f64..30.0) {
        prop_assert!(performance_loss_db(Bits::Finite(b), snr).unwrap() > 0.0);
        prop_assert_eq!(performance_loss_db(Bits::Infinite, snr).unwrap(), 0.0);
    }
}
