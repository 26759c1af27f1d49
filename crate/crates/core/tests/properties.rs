use hexcool::analysis::{
    compare_layouts, find_plateau, knee, mass_fractions, min_flow_by, pareto_mass_vs_peak, Design, MassLedger,
    SweepResult,
};
use hexcool::geometry::{hex_metrics, rod_network, HexLattice, LatticeVariant};
use hexcool::loads::PowerProfile;
use hexcool::materials::{builtin_materials, EnthalpyCurve, MaterialProps, ALUMINUM_6101, CPCM, CURVE_T_MAX, CURVE_T_MIN};
use hexcool::solver::{lumped_at, run, BoundaryCondition, FlowSchedule, LumpedCellParams, RunSpec, SolverSettings};
use hexcool::validation::pareto_oracle;
use proptest::prelude::*;

fn pcm(cp: f64, latent: f64, ts: f64, width: f64) -> MaterialProps {
    let base = builtin_materials().get(CPCM).unwrap().clone();
    MaterialProps {
        name: "test-pcm".into(),
        cp,
        latent,
        t_solidus: ts,
        t_liquidus: ts + width,
        ..base
    }
}

proptest! {
    #[test]
    fn enthalpy_roundtrip_and_monotone(
        cp in 500.0..5000.0f64,
        latent in 0.0..400_000.0f64,
        ts in 0.0..200.0f64,
        width in 0.0..10.0f64,
        s in 0.0..1.0f64,
        ds in 1e-6..1.0f64,
    ) {
        let m = pcm(cp, latent, ts, if latent == 0.0 { 0.0 } else { width });
        prop_assume!(m.validate().is_ok());
        let c = EnthalpyCurve::for_material(&m);
        let t = CURVE_T_MIN + s * (CURVE_T_MAX - CURVE_T_MIN);
        let h = c.enthalpy(t).unwrap();
        let back = c.temperature(h).unwrap();
        prop_assert!((back - t).abs() <= 1e-9 * t.abs().max(1.0));
        let t2 = (t + ds).min(CURVE_T_MAX);
        if t2 > t {
            prop_assert!(c.enthalpy(t2).unwrap() > h);
        }
    }

    #[test]
    fn profile_energy_is_additive(
        p0 in 0.0..50.0f64, p1 in 0.0..50.0f64, t1 in 1.0..5000.0f64,
        a in 0.0..6000.0f64, b in 0.0..6000.0f64, c in 0.0..6000.0f64,
    ) {
        let prof = PowerProfile::new(vec![(0.0, p0), (t1, p1)]).unwrap();
        let mut x = [a, b, c];
        x.sort_by(f64::total_cmp);
        let whole = prof.energy(x[0], x[2]);
        let parts = prof.energy(x[0], x[1]) + prof.energy(x[1], x[2]);
        prop_assert!((whole - parts).abs() <= 1e-9 * whole.abs().max(1.0));
    }

    #[test]
    fn hex_metrics_scale_with_root_n(n in 1usize..40, volume in 1e-6..1e-4f64, depth in 0.005..0.02f64) {
        let fill = builtin_materials().get(CPCM).unwrap().clone();
        let l = HexLattice {
            variant: LatticeVariant::Regular,
            n_cells: n,
            depth,
            wall_thickness: 0.002,
            cpcm_volume: volume,
            fill: CPCM.into(),
        };
        let q = HexLattice { n_cells: 4 * n, variant: LatticeVariant::Intensive, ..l.clone() };
        let (a, b) = (hex_metrics(&l, &fill), hex_metrics(&q, &fill));
        prop_assert!((b.interface_area / a.interface_area - 2.0).abs() < 1e-12);
        prop_assert!((b.mean_path / a.mean_path - 0.5).abs() < 1e-12);
    }

    #[test]
    fn plateau_ignores_time_shift(level in 30.0..80.0f64, rise in 0.0..0.05f64, shift in -1e4..1e4f64) {
        let t: Vec<f64> = (0..400).map(|i| i as f64 * 5.0).collect();
        let y: Vec<f64> = t.iter().map(|x| level - 30.0 * (-x / (300.0 + 1e4 * rise)).exp()).collect();
        let ts: Vec<f64> = t.iter().map(|x| x + shift).collect();
        let a = find_plateau(&t, &y, 600.0, 0.002);
        let b = find_plateau(&ts, &y, 600.0, 0.002);
        match (a, b) {
            (Some(a), Some(b)) => {
                prop_assert!((a.level - b.level).abs() < 1e-6);
                prop_assert!((a.start + shift - b.start).abs() < 1e-6);
            }
            (None, None) => {}
            _ => prop_assert!(false, "shift changed plateau detection"),
        }
    }

    #[test]
    fn knee_and_layouts_ignore_offsets(
        drops in prop::collection::vec(0.0..5.0f64, 5),
        offset in -20.0..20.0f64,
        other in prop::collection::vec(-2.0..2.0f64, 6),
    ) {
        let grid = [0.0, 2.0, 8.0, 12.0, 16.0, 24.0];
        let mut peaks = vec![70.0];
        for d in &drops {
            peaks.push(peaks.last().unwrap() - d);
        }
        prop_assume!(drops[0] > 0.0);
        let a = SweepResult::from_peaks("flow_rate", &grid, &peaks).unwrap();
        let shifted: Vec<f64> = peaks.iter().map(|p| p + offset).collect();
        let b = SweepResult::from_peaks("flow_rate", &grid, &shifted).unwrap();
        let (ka, kb) = (knee(&a).unwrap(), knee(&b).unwrap());
        prop_assert!(grid.contains(&ka));
        // offsets move drops by rounding only
        if drops.iter().all(|d| *d > 1e-6) {
            prop_assert_eq!(ka, kb);
        }
        let int: Vec<f64> = peaks.iter().zip(&other).map(|(p, o)| p + o).collect();
        let int_s: Vec<f64> = int.iter().map(|p| p + offset).collect();
        let r1 = compare_layouts(&a, &SweepResult::from_peaks("f", &grid, &int).unwrap()).unwrap();
        let r2 = compare_layouts(&b, &SweepResult::from_peaks("f", &grid, &int_s).unwrap()).unwrap();
        prop_assert!((r1.low_flow_gap - r2.low_flow_gap).abs() < 1e-9);
        prop_assert_eq!(r1.crossover.is_some(), r2.crossover.is_some());
    }

    #[test]
    fn mass_fractions_are_homogeneous(
        m in prop::collection::vec(0.0..20.0f64, 4),
        cell in 10.0..200.0f64,
        scale in 0.01..100.0f64,
    ) {
        let l = MassLedger { structure: m[0], cpcm_and_caps: m[1], top_cover: m[2], coolant: m[3], cell };
        let s = MassLedger {
            structure: m[0] * scale,
            cpcm_and_caps: m[1] * scale,
            top_cover: m[2] * scale,
            coolant: m[3] * scale,
            cell: cell * scale,
        };
        let (a, b) = (mass_fractions(&l), mass_fractions(&s));
        for i in 0..4 {
            prop_assert!((a[i] - b[i]).abs() <= 1e-12 * a[i].max(1.0));
        }
        prop_assert!(a.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn pareto_matches_pairwise_oracle(pts in prop::collection::vec((0u8..20, 0u8..20), 1..40)) {
        let d: Vec<Design> = pts
            .iter()
            .enumerate()
            .map(|(i, (m, p))| Design { label: i.to_string(), mass: *m as f64, peak: 50.0 + *p as f64 })
            .collect();
        prop_assert_eq!(pareto_mass_vs_peak(&d).unwrap(), pareto_oracle(&d));
    }

    #[test]
    fn bisection_output_is_feasible(t0 in 60.0..90.0f64, depth in 1.0..30.0f64, scale in 0.5..10.0f64, frac in 0.05..0.95f64) {
        let f = |q: f64| Ok(t0 - depth * (1.0 - (-q / scale).exp()));
        let cap = t0 - frac * depth * (1.0 - (-24.0 / scale).exp());
        let r = min_flow_by(f, cap, 0.0, 24.0, 0.1).unwrap();
        prop_assert!(r.peak <= cap);
        prop_assert!(f(r.flow).unwrap() <= cap);
        if r.flow > 0.0 {
            prop_assert!(f((r.flow - 0.1).max(0.0)).unwrap() > cap);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn lumped_node_tracks_closed_form(mass in 0.05..0.5f64, ha in 0.2..2.0f64, power in 1.0..40.0f64) {
        let reg = builtin_materials();
        let al = reg.get(ALUMINUM_6101).unwrap().clone();
        let h = 10.0;
        let volume = mass / al.rho_solid;
        let net = rod_network(&reg, ALUMINUM_6101, 1, 0.01, volume / 0.01, ha / h).unwrap();
        let profile = PowerProfile::new(vec![(0.0, power), (1800.0, 0.0)]).unwrap();
        let spec = RunSpec {
            boundary: BoundaryCondition { h_conv: h, t_amb: 20.0, h_rad: 0.0 },
            power: profile.clone(),
            flow: FlowSchedule::default(),
            inlet_t: 20.0,
            fluid: None,
            initial_t: 20.0,
            duration: 3600.0,
            heat_end: 1800.0,
            settings: SolverSettings { output_interval: 10.0, ..SolverSettings::default() },
        };
        let r = run(&net, &spec).unwrap();
        let p = LumpedCellParams { m: mass, cp: al.cp, ha, t_amb: 20.0 };
        for (t, v) in r.time.iter().zip(r.series("cell").unwrap()) {
            prop_assert!((v - lumped_at(&p, &profile, *t)).abs() <= 0.1);
        }
        prop_assert!(r.ledger.residual() <= 1e-9 * r.ledger.e_in);
    }

    #[test]
    fn melting_rod_conserves_energy(cells in 2usize..30, power in 0.5..20.0f64, h in 0.0..50.0f64, t0 in 20.0..60.0f64) {
        let reg = builtin_materials();
        let net = rod_network(&reg, CPCM, cells, 0.05, 1e-3, 1e-3).unwrap();
        let spec = RunSpec {
            boundary: BoundaryCondition { h_conv: h, t_amb: 20.0, h_rad: 0.0 },
            power: PowerProfile::new(vec![(0.0, power), (900.0, 0.0)]).unwrap(),
            flow: FlowSchedule::default(),
            inlet_t: 20.0,
            fluid: None,
            initial_t: t0,
            duration: 1800.0,
            heat_end: 900.0,
            settings: SolverSettings::default(),
        };
        let r = run(&net, &spec).unwrap();
        prop_assert!((r.ledger.e_in - power * 900.0).abs() <= 1e-9 * power * 900.0);
        prop_assert!(r.ledger.residual() <= 1e-6 * r.ledger.e_in);
    }
}
