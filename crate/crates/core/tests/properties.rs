use clutterk::grid::{RangeDopplerGrid, VelocityAxis};
use clutterk::io::{decode_signal, encode_signal, SignalHeader};
use clutterk::kernel::ClutterKernel;
use clutterk::metrics::{bfr, BfrMode};
use clutterk::operators::ClutterOperator;
use clutterk::scalar::{dot, from_c64, norm, to_c64};
use clutterk::solver::{filter_clutter, FilterConfig};
use clutterk::waveform::{assemble_train_samples, PulseTrain};
use clutterk::{C32, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

fn instance(seed: u64) -> (PulseTrain<f64>, RangeDopplerGrid) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=4);
    let n = rng.random_range(1..=12);
    let l = rng.random_range(n..=40);
    let pulses: Vec<Vec<C64>> = (0..m).map(|_| cvec(&mut rng, n)).collect();
    let mut starts = vec![0u64];
    for _ in 1..m {
        let gap = rng.random_range(l as u64..=2 * l as u64);
        starts.push(starts.last().unwrap() + gap);
    }
    let train = assemble_train_samples(pulses, &starts, 1e6, 1e10, Some(l)).unwrap();
    let k = rng.random_range(1..=5);
    let v: Vec<f64> = (0..k).map(|i| -20.0 + 9.5 * i as f64).collect();
    let grid = RangeDopplerGrid::for_train(&train, VelocityAxis::explicit(v).unwrap(), 0.0).unwrap();
    (train, grid)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adjoint_matches_forward(seed in any::<u64>()) {
        let (train, grid) = instance(seed);
        let op = ClutterOperator::new(&train, &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let g = cvec(&mut rng, op.n_coeffs());
        let y = cvec(&mut rng, op.n_samples());
        let ag = op.forward(&g).unwrap();
        let ahy = op.adjoint(&y).unwrap();
        let gap = (dot(&ag, &y) - dot(&g, &ahy)).norm();
        prop_assert!(gap <= 1e-12 * (norm(&ag) * norm(&y)).max(1.0));
    }

    #[test]
    fn bfr_is_bounded_and_phase_invariant(seed in any::<u64>(), phase in -3.0f64..3.0, gain in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cvec(&mut rng, 17);
        let e = cvec(&mut rng, 17);
        let rot = C64::from_polar(gain, phase);
        let c2: Vec<C64> = c.iter().map(|z| z * rot).collect();
        let e2: Vec<C64> = e.iter().map(|z| z * rot).collect();
        for mode in [BfrMode::PerSample, BfrMode::AggregateL2] {
            let a = bfr(&c, &e, mode).unwrap();
            let b = bfr(&c2, &e2, mode).unwrap();
            prop_assert!((0.0..=100.0).contains(&a));
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn signal_files_round_trip(samples in proptest::collection::vec((any::<f64>(), any::<f64>()), 1..20)) {
        let header = SignalHeader {
            n_pulses: 1,
            block_len: samples.len() as u64,
            pulse_len: 1,
            n_velocities: 1,
            n_delays: samples.len() as u64,
            sample_rate: 2.5e6,
            carrier_freq: 9.4e9,
        };
        let s: Vec<C64> = samples.iter().map(|&(a, b)| C64::new(a, b)).collect();
        let (h, back) = decode_signal(&encode_signal(&header, &s).unwrap()).unwrap();
        prop_assert_eq!(h, header);
        let bits = |v: &[C64]| v.iter().flat_map(|z| [z.re.to_bits(), z.im.to_bits()]).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&s));
    }
}

#[test]
fn single_tap_filter_shrinks_by_lambda() {
    // one unit-tap pulse and one velocity make A the identity,
    // so the filtered signal is y * lambda / (1 + lambda)
    let train = assemble_train_samples(vec![vec![C64::new(1.0, 0.0)]], &[0], 1e6, 1e10, Some(8)).unwrap();
    let grid = RangeDopplerGrid::for_train(&train, VelocityAxis::explicit(vec![0.0]).unwrap(), 0.0).unwrap();
    let op = ClutterOperator::new(&train, &grid).unwrap();
    let kernel = ClutterKernel::identity(&grid);
    let y: Vec<C64> = (0..8).map(|i| C64::new(i as f64 - 3.0, 0.5 * i as f64)).collect();
    for lambda in [0.25, 1.0, 4.0] {
        let out = filter_clutter(&y, &op, &kernel, &FilterConfig::with_lambda(lambda)).unwrap();
        let shrink = lambda / (1.0 + lambda);
        for (a, b) in out.y_filt.iter().zip(&y) {
            assert!((a - b * shrink).norm() < 1e-12);
        }
    }
}

#[test]
fn f32_filter_tracks_f64() {
    let (train, grid) = instance(42);
    let op = ClutterOperator::new(&train, &grid).unwrap();
    let kernel = ClutterKernel::identity(&grid);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let y = cvec(&mut rng, op.n_samples());
    let fc = FilterConfig::with_lambda(0.5);
    let wide = filter_clutter(&y, &op, &kernel, &fc).unwrap();

    let pulses32: Vec<Vec<C32>> = train.pulses().iter().map(|p| from_c64(&to_c64(&p.samples))).collect();
    let starts: Vec<u64> = train.pulses().iter().map(|p| p.start_sample).collect();
    let train32 = assemble_train_samples(pulses32, &starts, 1e6, 1e10, Some(train.block_len())).unwrap();
    let op32 = ClutterOperator::new(&train32, &grid).unwrap();
    let narrow = filter_clutter(&from_c64::<f32>(&y), &op32, &kernel, &fc).unwrap();

    let diff: Vec<C64> = to_c64(&narrow.y_filt).iter().zip(&wide.y_filt).map(|(a, b)| a - b).collect();
    assert!(norm(&diff) / norm(&y) < 1e-4, "relative gap {}", norm(&diff) / norm(&y));
}
