use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;
use smart::blockspace::{BlockLayout, BlockVector, Metric};
use smart::diagnostics::fit_rate;
use smart::schedule::{DelayMode, DelaySchedule, ReplayHeader, ReplayLog, ReplayRecord};

fn layout_and_vectors() -> impl Strategy<Value = (Vec<usize>, Vec<f64>, Vec<f64>)> {
    prop::collection::vec(1usize..4, 1..5).prop_flat_map(|dims| {
        let d: usize = dims.iter().sum();
        (Just(dims), prop::collection::vec(-10.0..10.0f64, d), prop::collection::vec(-10.0..10.0f64, d))
    })
}

fn gram(d: usize, entries: &[f64]) -> DMatrix<f64> {
    let b = DMatrix::from_column_slice(d, d, &entries[..d * d]);
    &b * b.transpose() + DMatrix::identity(d, d) * 0.5
}

fn sandwich(metric: &Metric, x: &BlockVector) -> (f64, f64, f64) {
    let c = metric.equivalence_constants(x.layout()).unwrap();
    let sq: Vec<f64> = x.blocks().map(|b| b.iter().map(|v| v * v).sum()).collect();
    let lo = c.lower.iter().zip(&sq).map(|(a, b)| a * b).sum();
    let hi = c.upper.iter().zip(&sq).map(|(a, b)| a * b).sum();
    (lo, metric.norm_sq(x).unwrap(), hi)
}

proptest! {
    #[test]
    fn block_ranges_partition_the_space(dims in prop::collection::vec(1usize..6, 1..8)) {
        let l = BlockLayout::new(dims.clone()).unwrap();
        let mut next = 0;
        for j in 0..l.m() {
            let r = l.range(j);
            prop_assert_eq!(r.start, next);
            prop_assert_eq!(r.len(), dims[j]);
            next = r.end;
        }
        prop_assert_eq!(next, l.total());
    }

    #[test]
    fn inner_products_are_symmetric_and_sandwiched(
        (dims, x, y) in layout_and_vectors(),
        w in prop::collection::vec(0.1..5.0f64, 5),
        p in prop::collection::vec(-1.0..1.0f64, 144),
    ) {
        let layout = Arc::new(BlockLayout::new(dims.clone()).unwrap());
        let xv = BlockVector::new(layout.clone(), x).unwrap();
        let yv = BlockVector::new(layout.clone(), y).unwrap();
        let metrics = [
            Metric::Product,
            Metric::block_weighted(w[..dims.len()].to_vec()).unwrap(),
            Metric::gram(gram(layout.total(), &p)).unwrap(),
        ];
        for metric in &metrics {
            let a = metric.inner(&xv, &yv).unwrap();
            let b = metric.inner(&yv, &xv).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            let (lo, mid, hi) = sandwich(metric, &xv);
            prop_assert!(lo <= mid * (1.0 + 1e-9) + 1e-12);
            prop_assert!(mid <= hi * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn axpy_and_sub_agree((dims, x, y) in layout_and_vectors(), a in -3.0..3.0f64) {
        let layout = Arc::new(BlockLayout::new(dims).unwrap());
        let xv = BlockVector::new(layout.clone(), x.clone()).unwrap();
        let yv = BlockVector::new(layout, y.clone()).unwrap();
        let z = xv.axpy(a, &yv).unwrap();
        for ((zi, xi), yi) in z.as_slice().iter().zip(&x).zip(&y) {
            prop_assert!((zi - (xi + a * yi)).abs() <= 1e-12);
        }
        prop_assert_eq!(xv.sub(&xv).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn scheduled_delays_stay_within_bounds(
        tau_p in 0usize..10,
        tau_d in 0usize..10,
        mode in prop::sample::select(vec![DelayMode::Zero, DelayMode::ConstantMax, DelayMode::Cyclic, DelayMode::UniformRandom]),
        seed in any::<u64>(),
        k in 0u64..10_000,
    ) {
        let s = DelaySchedule::uniform_mode(tau_p, tau_d, mode, seed).unwrap();
        let mut d = Vec::new();
        s.primal_delays(k, 4, &mut d).unwrap();
        prop_assert_eq!(d.len(), 4);
        prop_assert!(d.iter().all(|&v| v <= tau_p));
        for j in 0..4 {
            prop_assert!(s.dual_delay(k, 1, j).unwrap() <= tau_d);
        }
        let mut again = Vec::new();
        s.primal_delays(k, 4, &mut again).unwrap();
        prop_assert_eq!(d, again);
    }

    #[test]
    fn replay_logs_round_trip(
        recs in prop::collection::vec((0u32..5, any::<bool>(), prop::collection::vec(0u8..9, 3), prop::collection::vec(0u8..9, 3)), 0..40),
    ) {
        let mut log = ReplayLog::new(ReplayHeader { tau_p: 8, tau_d: 8, mode: "cyclic".into(), m: 3 });
        for (k, (i, eps, d, e)) in recs.into_iter().enumerate() {
            log.records.push(ReplayRecord { k: k as u64, i, eps, blocks: vec![k as u32 % 3], d, e });
        }
        let mut buf = Vec::new();
        log.write_to(&mut buf).unwrap();
        prop_assert_eq!(ReplayLog::read_from(buf.as_slice()).unwrap(), log);
    }

    #[test]
    fn geometric_fit_recovers_the_factor(r in 0.5..0.999f64, a in 0.1..10.0f64) {
        let iters: Vec<u64> = (0..60).map(|t| t * 10).collect();
        let v: Vec<f64> = iters.iter().map(|&k| a * r.powf(k as f64)).collect();
        let f = fit_rate(&iters, &v).unwrap();
        prop_assert!((f.factor - r).abs() <= 1e-9);
        prop_assert!(f.r_squared > 1.0 - 1e-9);
    }
}
