use proptest::prelude::*;
use pvad::memory::{address, boost, map_phase, memory_forward, normalize, PeriodicMemoryBank, SoftmaxAxis};
use pvad::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_vec(&[rows, cols], (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

#[test]
fn column_sums_are_one_over_random_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for draw in 0..1000 {
        let t = rng.random_range(1..12);
        let m = rng.random_range(1..40);
        let c = rng.random_range(1..16);
        let t_max = rng.random_range(2..30);
        let bank = PeriodicMemoryBank::new(m, c, t_max, SoftmaxAxis::Column, &mut rng).unwrap();
        let x = random(t, c, 4.0, &mut rng);
        let phase = rng.random_range(0..t_max);
        let scores: Vec<f64> = (0..t_max).map(|_| rng.random_range(0.0..1.0)).collect();
        let (_, trace) = memory_forward(&x, &bank, phase, &scores).unwrap();
        for j in 0..m {
            let s: f64 = (0..t).map(|i| trace.weights.at2(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-6, "draw {draw}: column {j} sums to {s}");
        }
    }
}

#[test]
fn row_mode_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let w = random(rng.random_range(1..9), rng.random_range(1..30), 10.0, &mut rng);
        let y = normalize(&w, SoftmaxAxis::Row);
        for i in 0..w.rows() {
            let s: f64 = y.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn normalize_survives_huge_logits() {
    let w = Tensor::<f64>::from_rows(&[&[1000.0, -1000.0], &[999.0, 5.0]]);
    for axis in [SoftmaxAxis::Column, SoftmaxAxis::Row] {
        assert!(normalize(&w, axis).all_finite());
    }
}

#[test]
fn slot_mapping_covers_the_bank_in_order() {
    for (t_max, m) in [(20, 200), (20, 7), (3, 100), (16, 16)] {
        let slots: Vec<usize> = (0..t_max).map(|p| map_phase(p, t_max, m).unwrap()).collect();
        assert_eq!(slots[0], 0);
        assert!(slots.windows(2).all(|w| w[0] <= w[1]));
        assert!(*slots.last().unwrap() < m);
    }
    assert!(map_phase(20, 20, 200).is_err());
}

proptest! {
    #[test]
    fn boost_touches_only_its_column(
        seed in any::<u64>(),
        t in 1usize..6,
        m in 1usize..12,
        factor in 1.0f64..3.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random(t, m, 2.0, &mut rng);
        let slot = rng.random_range(0..m);
        let b = boost(&w, slot, factor).unwrap();
        for i in 0..t {
            for j in 0..m {
                let want = if j == slot { w.at2(i, j) * factor } else { w.at2(i, j) };
                prop_assert_eq!(b.at2(i, j), want);
            }
        }
    }

    /// A boost factor above one sharpens the boosted column: its largest
    /// normalized weight never decreases, and other columns are unchanged.
    #[test]
    fn boost_sharpens_the_selected_column(
        seed in any::<u64>(),
        t in 2usize..8,
        m in 1usize..10,
        extra in 0.0f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = PeriodicMemoryBank::new(m, 4, 10, SoftmaxAxis::Column, &mut rng).unwrap();
        let x = random(t, 4, 2.0, &mut rng);
        let w = address(&x, &bank).unwrap();
        let slot = rng.random_range(0..m);
        let plain = normalize(&w, SoftmaxAxis::Column);
        let sharp = normalize(&boost(&w, slot, 1.0 + extra).unwrap(), SoftmaxAxis::Column);
        let peak = |y: &Tensor<f64>| (0..t).map(|i| y.at2(i, slot)).fold(f64::MIN, f64::max);
        prop_assert!(peak(&sharp) >= peak(&plain) - 1e-12);
        for j in (0..m).filter(|&j| j != slot) {
            for i in 0..t {
                prop_assert!((sharp.at2(i, j) - plain.at2(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unit_boost_is_identity(seed in any::<u64>(), t in 1usize..5, m in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random(t, m, 1.0, &mut rng);
        prop_assert_eq!(boost(&w, m - 1, 1.0).unwrap(), w);
    }
}
