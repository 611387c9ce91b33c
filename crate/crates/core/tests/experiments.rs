use relaylab::experiments::{
    figure_config, reproduce_esnr_averages, reproduce_figures, reproduce_table2, timing_table, FigureNoise, SweepAxis,
    SweepSpec,
};
use relaylab::mimo::{esnr_s2_analytic, simulate_mimo};
use relaylab::single::esnr_grid_average;
use relaylab::{Error, McPlan, ProtocolKind, SchemeKind};

#[test]
fn averages_are_deterministic_and_ordered() {
    assert_eq!(reproduce_esnr_averages(7).unwrap(), reproduce_esnr_averages(7).unwrap());
    let (p3, p2, p1) = reproduce_esnr_averages(2).unwrap();
    assert!(p1 > 0.0 && p3 > p2 && p2 > p1);
    // Independent oracle: the compound-estimation closed form averaged by hand
    // over estimate variances 0.1, 0.2, ..., 0.9 on both hops.
    let mut sum = 0.0;
    for i in 1..=9 {
        for j in 1..=9 {
            let (h, g) = (i as f64 / 10.0, j as f64 / 10.0);
            sum += 8.0 * h * g / (h * (1.0 - g) + (1.0 - h));
        }
    }
    assert!((esnr_grid_average(ProtocolKind::P2, 7).unwrap() - sum / 81.0).abs() < 1e-12);
    assert!(matches!(reproduce_esnr_averages(1), Err(Error::InvalidArgument(_))));
}

#[test]
fn timing_matches_symbol_counts() {
    let t = timing_table(7).unwrap();
    assert_eq!(
        t,
        vec![(ProtocolKind::P1, 15), (ProtocolKind::P2, 8), (ProtocolKind::P3, 3)]
    );
}

#[test]
fn table2_layout_and_trial_floor() {
    let plan = McPlan::new(100_000, 42).unwrap();
    let t = reproduce_table2(1.0, &plan).unwrap();
    assert_eq!(t.cells.len(), 30);
    // Rows run forward estimate descending, columns backward ascending.
    let p1: Vec<(f64, f64)> = t
        .cells
        .iter()
        .filter(|c| c.protocol == ProtocolKind::P1)
        .map(|c| (c.g_est, c.h_est))
        .collect();
    assert_eq!(p1[0], (0.9, 0.1));
    assert_eq!(p1[2], (0.9, 0.9));
    assert_eq!(p1[8], (0.1, 0.9));
    assert_eq!(p1[9], (1.0, 1.0));
    assert_eq!(t.cell(ProtocolKind::P3, 0.9, 0.9).unwrap().target, 1.26);
    assert_eq!(t.cell(ProtocolKind::P2, 0.1, 0.1).unwrap().target, 0.03);
    // Common random numbers: one seed per cell, shared by the protocols.
    for c in &t.cells {
        assert_eq!(c.seed, t.cell(ProtocolKind::P1, c.h_est, c.g_est).unwrap().seed);
    }
    let few = McPlan::new(99_999, 42).unwrap();
    assert!(matches!(reproduce_table2(1.0, &few), Err(Error::InvalidArgument(_))));
}

#[test]
fn more_relays_raise_every_curve() {
    let plan = McPlan::new(20_000, 42).unwrap();
    let noise = FigureNoise::default();
    let sweep = SweepSpec::new(SweepAxis::Backward, vec![0.5, 0.9], 0.9, plan).unwrap();
    let k7 = reproduce_figures(7, 2, &[1, 3], &sweep, &noise).unwrap();
    let k20 = reproduce_figures(20, 2, &[1, 3], &sweep, &noise).unwrap();
    for (a, b) in k7.iter().zip(&k20) {
        assert_eq!((a.scheme, a.n, a.axis_value), (b.scheme, b.n, b.axis_value));
        assert!(b.esnr.separated_above(&a.esnr), "{a:?} vs {b:?}");
    }
    for n in [1, 3] {
        let lo = esnr_s2_analytic(&figure_config(2, n, 7, 0.9, 0.9, &noise).unwrap()).unwrap();
        let hi = esnr_s2_analytic(&figure_config(2, n, 20, 0.9, 0.9, &noise).unwrap()).unwrap();
        assert!(hi.value > lo.value);
    }
}

#[test]
fn sweep_rejects_bad_values() {
    let plan = McPlan::new(10, 1).unwrap();
    assert!(SweepSpec::new(SweepAxis::Forward, vec![], 0.9, plan).is_err());
    assert!(SweepSpec::new(SweepAxis::Forward, vec![0.5, 0.1], 0.9, plan).is_err());
    assert!(SweepSpec::new(SweepAxis::Forward, vec![0.5], 1.5, plan).is_err());
}

#[test]
fn mimo_results_ignore_worker_count() {
    let cfg = figure_config(2, 2, 7, 0.5, 0.9, &FigureNoise::default()).unwrap();
    let plan = McPlan::new(9_000, 5).unwrap().with_chunk_size(700).unwrap();
    let one = simulate_mimo(SchemeKind::S2, &cfg, &plan.with_workers(1)).unwrap();
    let many = simulate_mimo(SchemeKind::S2, &cfg, &plan.with_workers(3)).unwrap();
    assert_eq!(one.value.to_bits(), many.value.to_bits());
    assert_eq!(one.ci95_half_width.to_bits(), many.ci95_half_width.to_bits());
}
