use hexcool::analysis::{peak_temperature, summarize};
use hexcool::loads::PowerProfile;
use hexcool::materials::builtin_materials;
use hexcool::scenarios::{get, Scenario};
use hexcool::solver::{
    energy_balance, run, BoundaryCondition, State, StepInputs, Stepper, SegmentCoupling, SolverSettings,
};
use hexcool::validation::{stefan_front, STEFAN_GRIDS};

fn zero_power(s: &Scenario) -> Scenario {
    s.with_param("power", 0.0).unwrap()
}

#[test]
fn ambient_state_is_a_fixed_point() {
    let s = get("S4").unwrap().with_flow(8.0);
    let (net, spec) = s.build().unwrap();
    let mut st = State::uniform(&net, 20.0);
    let before = st.clone();
    let fluid = spec.fluid.clone().unwrap();
    let coupling: Vec<SegmentCoupling> = net
        .segments
        .iter()
        .map(|g| SegmentCoupling {
            g: g.g_wall,
            c: fluid.rho_solid * fluid.cp * g.volume,
        })
        .collect();
    let inp = StepInputs {
        boundary: spec.boundary,
        source_power: vec![0.0; net.sources.len()],
        coupling,
        mdot_cp: 0.558,
        inlet_t: 20.0,
    };
    let mut stepper = Stepper::new(&net, SolverSettings::default());
    for _ in 0..10 {
        let rep = stepper.step(&mut st, &inp, 1.0).unwrap();
        assert_eq!(rep.e_in, 0.0);
    }
    for (a, b) in st.temperature.iter().zip(&before.temperature) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(st.fluid.iter().all(|t| (t - 20.0).abs() < 1e-12));
}

#[test]
fn ledger_closes_every_step() {
    let s = get("S4").unwrap().with_flow(8.0);
    let (net, spec) = s.build().unwrap();
    let fluid = spec.fluid.clone().unwrap();
    let h = 3.66 * fluid.k_solid / net.channel.as_ref().unwrap().hydraulic_diameter();
    let coupling: Vec<SegmentCoupling> = net
        .segments
        .iter()
        .map(|g| SegmentCoupling {
            g: 1.0 / (1.0 / g.g_wall + 1.0 / (h * g.wetted_area)),
            c: fluid.rho_solid * fluid.cp * g.volume,
        })
        .collect();
    let inp = StepInputs {
        boundary: spec.boundary,
        source_power: vec![21.0; net.sources.len()],
        coupling,
        mdot_cp: 0.558,
        inlet_t: 20.0,
    };
    let mut st = State::uniform(&net, 20.0);
    let caps: Vec<f64> = inp.coupling.iter().map(|c| c.c).collect();
    let mut stepper = Stepper::new(&net, SolverSettings::default());
    for _ in 0..600 {
        let h0: f64 = st.enthalpy.iter().sum();
        let f0: f64 = st.fluid.iter().zip(&caps).map(|(t, c)| t * c).sum();
        let rep = stepper.step(&mut st, &inp, 2.0).unwrap();
        let h1: f64 = st.enthalpy.iter().sum();
        let f1: f64 = st.fluid.iter().zip(&caps).map(|(t, c)| t * c).sum();
        let stored = (h1 - h0) + (f1 - f0);
        let resid = rep.e_in - stored - rep.e_ambient - rep.e_coolant;
        assert!(resid.abs() <= 1e-6 * rep.e_in, "{resid}");
    }
}

#[test]
fn zero_power_from_ambient_stays_flat() {
    for id in ["S1", "S4", "S7"] {
        let r = zero_power(&get(id).unwrap()).simulate().unwrap();
        for v in r.probes.values() {
            assert!(v.iter().all(|t| (t - 20.0).abs() < 1e-9));
        }
        assert_eq!(r.ledger.e_in, 0.0);
    }
}

#[test]
fn adiabatic_source_free_run_has_empty_ledger() {
    let mut s = zero_power(&get("S3").unwrap());
    s.boundary = BoundaryCondition {
        h_conv: 0.0,
        t_amb: 20.0,
        h_rad: 0.0,
    };
    let r = s.simulate().unwrap();
    let l = r.ledger;
    assert_eq!((l.e_in, l.e_ambient, l.e_coolant), (0.0, 0.0, 0.0));
    // stored-energy sums over ~1e5 J node enthalpies: round-off only
    assert!(l.e_stored.abs() < 1e-9 && l.residual() < 1e-9, "{l:?}");
}

#[test]
fn steady_state_bookkeeping() {
    let s1 = get("S1").unwrap();
    let (net, mut spec) = s1.build().unwrap();
    spec.power = PowerProfile::constant(21.0);
    spec.duration = 20_000.0;
    spec.heat_end = spec.duration;
    let a = run(&net, &spec).unwrap();
    spec.duration = 40_000.0;
    spec.heat_end = spec.duration;
    let b = run(&net, &spec).unwrap();
    let d_in = b.ledger.e_in - a.ledger.e_in;
    let d_amb = b.ledger.e_ambient - a.ledger.e_ambient;
    assert!((d_in - d_amb).abs() <= 1e-4 * d_in, "{d_in} vs {d_amb}");
    // calibrated plate settles at the reference temperature
    let last = *b.series("TC-4").unwrap().last().unwrap();
    assert!((last - 89.0).abs() < 0.05, "{last}");
}

#[test]
fn stefan_front_converges_with_refinement() {
    let errs: Vec<f64> = STEFAN_GRIDS[..3]
        .iter()
        .map(|&n| stefan_front(n, 76.0, 1800.0).unwrap().rel_error)
        .collect();
    assert!(errs.iter().all(|e| *e < 0.02), "{errs:?}");
    assert!(errs[2] <= errs[0]);
    let hot = stefan_front(120, 96.0, 1800.0).unwrap();
    assert!(hot.rel_error < 0.02, "{hot:?}");
}

#[test]
fn refinement_keeps_peaks_and_cpcm_mass() {
    let base = get("S4").unwrap().with_flow(8.0);
    let mut fine = base.clone();
    fine.geometry.resolution = 2;
    let (n1, _) = base.build().unwrap();
    let (n2, _) = fine.build().unwrap();
    let cpcm = "CPCM";
    assert!((n1.material_mass(cpcm) - n2.material_mass(cpcm)).abs() <= 1e-3 * n1.material_mass(cpcm));
    let p1 = summarize(&base.simulate().unwrap(), "cell").unwrap().peak;
    let p2 = summarize(&fine.simulate().unwrap(), "cell").unwrap().peak;
    assert!((p1 - p2).abs() < 0.5, "{p1} vs {p2}");
}

#[test]
fn every_scenario_conserves_energy() {
    for id in ["S1", "S2", "S3", "S4", "S5", "S6", "S7"] {
        let r = get(id).unwrap().simulate().unwrap();
        assert!(energy_balance(&r) <= 1e-3, "{id}");
        assert!(r.diagnostics.max_iterations <= SolverSettings::default().max_iterations);
    }
}

#[test]
fn faster_flow_never_heats_the_cell() {
    let s = get("S6").unwrap();
    let peaks: Vec<f64> = [0.0, 4.0, 16.0]
        .iter()
        .map(|q| {
            let r = s.with_flow(*q).heating_only().simulate().unwrap();
            peak_temperature(r.series("cell").unwrap()).unwrap()
        })
        .collect();
    assert!(peaks.windows(2).all(|w| w[1] <= w[0]), "{peaks:?}");
}

#[test]
fn turbulent_flow_is_rejected() {
    let s = get("S6").unwrap().with_flow(2.0e5);
    assert!(matches!(s.simulate(), Err(hexcool::Error::UnsupportedRegime { .. })));
    let water = builtin_materials().get("water").unwrap().clone();
    assert!(water.viscosity.is_some());
}
