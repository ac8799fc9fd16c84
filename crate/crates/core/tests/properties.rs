use proptest::prelude::*;

use sgfm_core::diffusion::model::{AnalyticGaussianScore, LocalScoreArch, LocalScoreNet, ZeroScore};
use sgfm_core::diffusion::sampler::{
    dsm_loss, hybrid_sample, physics_correction_backtracking, DsmItem, ReverseMode, SamplerConfig, SamplingContext,
};
use sgfm_core::diffusion::schedule::NoiseSchedule;
use sgfm_core::flow::{simulate, SpdeParams};
use sgfm_core::io::{decode_field, encode_field};
use sgfm_core::spectral::SpectralWorkspace;
use sgfm_core::training::{
    composite_loss, manufactured_dataset, train_toy, DatasetSpec, LossSetup, LossWeights, TrainConfig,
    TrainingItem, MANUFACTURED_DT,
};
use sgfm_core::wavelet::{forward_dwt, inverse_dwt, split_scales, WaveletFamily};
use sgfm_core::{gaussian_field, make_grid};

fn family(db4: bool) -> WaveletFamily {
    if db4 {
        WaveletFamily::Daubechies4
    } else {
        WaveletFamily::Haar
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transform_is_an_isometry(seed in 0u64..100_000, db4: bool, three: bool, levels in 1usize..=3) {
        let g = if three { make_grid(3, 8) } else { make_grid(2, 16) }.unwrap();
        let f = gaussian_field(g, 2, seed);
        let c = forward_dwt(&f, family(db4), levels).unwrap();
        prop_assert!((c.norm() - f.grid_norm()).abs() < 1e-10 * f.grid_norm());
        let back = inverse_dwt(&c).unwrap();
        prop_assert!(back.sub(&f).grid_norm() < 1e-10 * f.grid_norm());
    }

    #[test]
    fn field_files_round_trip(seed in 0u64..100_000, channels in 1usize..4, three: bool) {
        let g = if three { make_grid(3, 4) } else { make_grid(2, 8) }.unwrap();
        let f = gaussian_field(g, channels, seed);
        let back = decode_field(&encode_field(&f)).unwrap();
        prop_assert!(back.data().iter().zip(f.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn backtracking_never_increases_energy(seed in 0u64..10_000, log_eta in -6.0f64..6.0, fine: bool) {
        let g = make_grid(2, 8).unwrap();
        let ws = SpectralWorkspace::new(g);
        let p = SpdeParams::new(0.1, 0.0, 0.01).unwrap();
        let u_prev = gaussian_field(g, 2, seed);
        let c = forward_dwt(&gaussian_field(g, 2, seed + 1), WaveletFamily::Haar, 2).unwrap();
        let out = physics_correction_backtracking(
            &ws, &c, &u_prev, p.dt, &p, 10f64.powf(log_eta), fine.then_some(1),
        ).unwrap();
        prop_assert!(out.energy_after <= out.energy_before);
    }

    #[test]
    fn semigroup_holds_for_any_split(k in 1usize..8, seed in 0u64..1000) {
        let g = make_grid(2, 16).unwrap();
        let ws = SpectralWorkspace::new(g);
        let u0 = ws.helmholtz_project(&gaussian_field(g, 2, seed)).unwrap();
        let p = SpdeParams::new(0.1, 0.0, 1e-3).unwrap();
        let whole = simulate(&u0, &p, 2 * k, 0).unwrap();
        let half = simulate(&u0, &p, k, 0).unwrap();
        let rest = simulate(half.last(), &p, k, 0).unwrap();
        prop_assert_eq!(whole.last().data(), rest.last().data());
    }

    #[test]
    fn loss_decomposes_and_is_nonnegative(seed in 0u64..1000, wr in 0.0f64..5.0, wb in 0.0f64..5.0) {
        let g = make_grid(2, 8).unwrap();
        let data = manufactured_dataset(2, g, 0.05, seed).unwrap();
        let items: Vec<TrainingItem> = data.iter().map(TrainingItem::from_manufactured).collect();
        let p = SpdeParams::new(0.05, 0.0, MANUFACTURED_DT).unwrap();
        let setup = LossSetup {
            schedule: NoiseSchedule::default(),
            family: WaveletFamily::Haar,
            levels: 2,
            j_split: 1,
            coarse_noise: 0.0,
        };
        let arch = LocalScoreArch { ndim: 2, hidden: 3, lambda_dim: 1 };
        let net = LocalScoreNet::new(arch, setup.schedule, seed).unwrap();
        let w = LossWeights::new(wr, wb).unwrap();
        let l = composite_loss(&net, &items, &w, &p, None, &setup, seed).unwrap();
        let parts = l.parts;
        prop_assert!(parts.diff >= 0.0 && parts.phys >= 0.0 && parts.bc >= 0.0);
        let sum = parts.diff + wr * parts.phys + wb * parts.bc;
        prop_assert!((l.total - sum).abs() <= 1e-12 * l.total.max(1.0));
    }

    #[test]
    fn dsm_loss_ignores_batch_order(seed in 0u64..1000, rotate in 0usize..4) {
        let g = make_grid(2, 8).unwrap();
        let items: Vec<DsmItem> = (0..4)
            .map(|i| DsmItem {
                c0: forward_dwt(&gaussian_field(g, 2, seed + i), WaveletFamily::Haar, 2).unwrap(),
                lambda: vec![],
            })
            .collect();
        let s = NoiseSchedule::default();
        let mut shuffled = items.clone();
        shuffled.rotate_left(rotate);
        let a = dsm_loss(&ZeroScore, &items, &s, 1, seed).unwrap();
        let b = dsm_loss(&ZeroScore, &shuffled, &s, 1, seed).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn sampler_output_is_divergence_free(seed in 0u64..10_000, sde: bool, corrections in 0usize..2) {
        let g = make_grid(2, 8).unwrap();
        let s = NoiseSchedule::default();
        let cfg = SamplerConfig {
            steps: 10,
            correction_strength: 1e-3,
            corrections_per_step: corrections,
            j_split: 1,
            seed,
            mode: if sde { ReverseMode::Sde } else { ReverseMode::Ode },
            family: WaveletFamily::Haar,
            levels: 2,
        };
        let u = gaussian_field(g, 2, seed);
        let ctx = SamplingContext {
            u_prev: Some(u.clone()),
            ..SamplingContext::from_field(&u, WaveletFamily::Haar, 2, 1).unwrap()
        };
        let fine = split_scales(&forward_dwt(&u, WaveletFamily::Haar, 2).unwrap(), 1).unwrap().fine_len();
        let model = AnalyticGaussianScore::origin(s, fine);
        let p = SpdeParams::new(0.1, 0.0, 0.05).unwrap();
        let out = hybrid_sample(&model, &cfg, &p, &s, g, 2, &ctx).unwrap();
        let ws = SpectralWorkspace::new(g);
        prop_assert!(ws.divergence(&out).unwrap().max_abs() < 1e-8);
    }
}

fn manufactured_config(residual_weight: f64) -> TrainConfig {
    TrainConfig {
        epochs: 40,
        batch_size: 4,
        learning_rate: 1e-3,
        seed: 1,
        dataset: DatasetSpec::Manufactured {
            count: 16,
            viscosity: 0.05,
            dt: MANUFACTURED_DT,
        },
        weights: LossWeights::new(residual_weight, 0.0).unwrap(),
        ndim: 2,
        n: 8,
        family: WaveletFamily::Haar,
        levels: 2,
        j_split: 1,
        hidden: 4,
        coarse_noise: 0.0,
        schedule: NoiseSchedule::default(),
        clip_norm: Some(10.0),
    }
}

/// The residual term is evaluated on the denoised estimate, so an imperfect
/// predictor pays a reweighted denoising penalty through it even on exact
/// data, and the denoising trajectories for the two weights separate.
#[test]
#[ignore = "residual weight changes the denoising trajectory on manufactured data; kept as a record"]
fn residual_weight_is_inert_on_manufactured_data() {
    let a = train_toy(&manufactured_config(0.0)).unwrap();
    let b = train_toy(&manufactured_config(10.0)).unwrap();
    let da = a.history.last().unwrap().diff;
    let db = b.history.last().unwrap().diff;
    assert!((da - db).abs() < 0.05 * da, "{da} vs {db}");
}
