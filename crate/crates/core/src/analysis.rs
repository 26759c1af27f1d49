//! Post-processing of runs and sweeps, plus design search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenarios::Scenario;
use crate::solver::SimResult;

/// Trailing window for steady-state detection, s.
pub const STEADY_WINDOW: f64 = 600.0;
/// Slope below which a trailing window counts as steady, °C/s.
pub const STEADY_SLOPE: f64 = 0.002;
/// Knee threshold as a share of the first marginal drop.
pub const KNEE_FRACTION: f64 = 0.25;
/// Probe every summary is read from.
pub const SUMMARY_PROBE: &str = "cell";

pub fn peak_temperature(series: &[f64]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::Invalid("empty series".into()));
    }
    Ok(series.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    /// Mean over the window, °C.
    pub level: f64,
    /// Window start, s.
    pub start: f64,
}

/// Longest trailing window spanning at least `window` seconds whose
/// least-squares slope is within `slope_tol`.
pub fn find_plateau(time: &[f64], temp: &[f64], window: f64, slope_tol: f64) -> Option<Plateau> {
    let n = time.len().min(temp.len());
    if n < 2 {
        return None;
    }
    let t_end = time[n - 1];
    if t_end - time[0] < window {
        return None;
    }
    // Suffix sums with time measured from the end, so a uniform shift of
    // the series changes nothing.
    let (mut s1, mut st, mut stt, mut sy, mut sty) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut best = None;
    for i in (0..n).rev() {
        let t = time[i] - t_end;
        let y = temp[i];
        s1 += 1.0;
        st += t;
        stt += t * t;
        sy += y;
        sty += t * y;
        if t_end - time[i] < window {
            continue;
        }
        let den = s1 * stt - st * st;
        if den <= 0.0 {
            continue;
        }
        let slope = (s1 * sty - st * sy) / den;
        if slope.abs() <= slope_tol {
            best = Some(Plateau {
                level: sy / s1,
                start: time[i],
            });
        }
    }
    best
}

pub fn plateau(time: &[f64], temp: &[f64], window: f64, slope_tol: f64) -> Option<f64> {
    find_plateau(time, temp, window, slope_tol).map(|p| p.level)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    /// Maximum during heating, °C.
    pub peak: f64,
    /// Temperature at the end of heating, °C.
    pub steady: f64,
    pub plateau: Option<f64>,
    /// Start of the heating-phase plateau, s.
    pub time_to_steady: Option<f64>,
    /// Mean CPCM liquid fraction at the end of heating.
    pub liquid_fraction: f64,
    pub energy_residual: f64,
}

pub fn summarize(r: &SimResult, probe: &str) -> Result<PointSummary> {
    let series = r.series(probe)?;
    let n = r.heating_len().max(1);
    let heat = &series[..n];
    let p = find_plateau(&r.time[..n], heat, STEADY_WINDOW, STEADY_SLOPE);
    Ok(PointSummary {
        peak: peak_temperature(heat)?,
        steady: heat[n - 1],
        plateau: p.map(|p| p.level),
        time_to_steady: p.map(|p| p.start),
        liquid_fraction: r.liquid_fraction.get(n - 1).copied().unwrap_or(0.0),
        energy_residual: crate::solver::energy_balance(r),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub parameter: String,
    pub grid: Vec<f64>,
    pub points: Vec<PointSummary>,
}

impl SweepResult {
    pub fn new(parameter: &str, grid: Vec<f64>, points: Vec<PointSummary>) -> Result<Self> {
        if grid.len() != points.len() {
            return Err(Error::Invalid("one summary per grid point required".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("sweep grid must be strictly increasing".into()));
        }
        Ok(Self {
            parameter: parameter.to_string(),
            grid,
            points,
        })
    }

    /// Build from (value, peak) pairs; other summary fields mirror the peak.
    pub fn from_peaks(parameter: &str, grid: &[f64], peaks: &[f64]) -> Result<Self> {
        let points = peaks
            .iter()
            .map(|&p| PointSummary {
                peak: p,
                steady: p,
                plateau: None,
                time_to_steady: None,
                liquid_fraction: 0.0,
                energy_residual: 0.0,
            })
            .collect();
        Self::new(parameter, grid.to_vec(), points)
    }

    pub fn peaks(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.peak).collect()
    }
}

/// Flow beyond which extra flow buys little: the right end of the first
/// interval whose drop per unit flow is below `KNEE_FRACTION` of the first
/// interval's. Returns the last grid point when no interval qualifies.
pub fn knee(sweep: &SweepResult) -> Result<f64> {
    let (q, t) = (&sweep.grid, sweep.peaks());
    if q.len() < 4 {
        return Err(Error::Invalid("knee needs at least four grid points".into()));
    }
    if t.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Invalid("sweep response is not non-increasing".into()));
    }
    let drop = |i: usize| (t[i - 1] - t[i]) / (q[i] - q[i - 1]);
    let first = drop(1);
    for i in 2..q.len() {
        if drop(i) < KNEE_FRACTION * first {
            return Ok(q[i]);
        }
    }
    Ok(q[q.len() - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutReport {
    /// intensive − regular at the lowest flow, °C
    pub low_flow_gap: f64,
    /// intensive − regular at the highest flow, °C
    pub high_flow_gap: f64,
    /// Where the gap first changes sign, by linear interpolation.
    pub crossover: Option<f64>,
}

pub fn compare_layouts(regular: &SweepResult, intensive: &SweepResult) -> Result<LayoutReport> {
    if regular.grid != intensive.grid || regular.grid.is_empty() {
        return Err(Error::Invalid("layout sweeps must share a non-empty grid".into()));
    }
    let q = &regular.grid;
    let gap: Vec<f64> = intensive.peaks().iter().zip(regular.peaks()).map(|(a, b)| a - b).collect();
    let mut crossover = None;
    for i in 1..q.len() {
        let (a, b) = (gap[i - 1], gap[i]);
        if a != 0.0 && b != 0.0 && a.signum() != b.signum() {
            crossover = Some(q[i - 1] + (q[i] - q[i - 1]) * a / (a - b));
            break;
        }
        if a != 0.0 && b == 0.0 {
            crossover = Some(q[i]);
            break;
        }
    }
    Ok(LayoutReport {
        low_flow_gap: gap[0],
        high_flow_gap: gap[gap.len() - 1],
        crossover,
    })
}

/// Added masses, g.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassLedger {
    pub structure: f64,
    pub cpcm_and_caps: f64,
    pub top_cover: f64,
    pub coolant: f64,
    pub cell: f64,
}

/// The fabricated module against a 91.67 g pouch cell.
pub const BENCH_MASSES: MassLedger = MassLedger {
    structure: 10.43,
    cpcm_and_caps: 7.19,
    top_cover: 5.75,
    coolant: 4.11,
    cell: 91.67,
};

impl MassLedger {
    pub fn total(&self) -> f64 {
        self.structure + self.cpcm_and_caps + self.top_cover + self.coolant
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.structure, self.cpcm_and_caps, self.top_cover, self.coolant];
        if !(self.cell > 0.0) || parts.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::Invalid("masses must be non-negative and the cell mass positive".into()));
        }
        Ok(())
    }
}

/// Cumulative added mass over cell mass after each build step.
pub fn mass_fractions(m: &MassLedger) -> [f64; 4] {
    let a = m.structure;
    let b = a + m.cpcm_and_caps;
    let c = b + m.top_cover;
    let d = c + m.coolant;
    [a / m.cell, b / m.cell, c / m.cell, d / m.cell]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub label: String,
    pub mass: f64,
    pub peak: f64,
}

pub fn dominates(a: &Design, b: &Design) -> bool {
    a.mass <= b.mass && a.peak <= b.peak && (a.mass < b.mass || a.peak < b.peak)
}

/// Non-dominated designs ordered by mass (input order among equal masses).
pub fn pareto_mass_vs_peak(designs: &[Design]) -> Result<Vec<Design>> {
    if designs.is_empty() {
        return Err(Error::Invalid("no designs".into()));
    }
    let mut order: Vec<usize> = (0..designs.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&designs[i], &designs[j]);
        a.mass.total_cmp(&b.mass).then(a.peak.total_cmp(&b.peak)).then(i.cmp(&j))
    });
    let mut keep: Vec<usize> = Vec::new();
    let mut best = f64::INFINITY;
    for i in order {
        let d = &designs[i];
        let duplicate = keep.last().is_some_and(|&k| designs[k].mass == d.mass && designs[k].peak == d.peak);
        if d.peak < best || duplicate {
            best = best.min(d.peak);
            keep.push(i);
        }
    }
    keep.sort_by(|&i, &j| designs[i].mass.total_cmp(&designs[j].mass).then(i.cmp(&j)));
    Ok(keep.into_iter().map(|i| designs[i].clone()).collect())
}

/// Run `f` over `items` on up to `threads` workers; output order follows
/// the input.
pub fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut out: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let slots = std::sync::Mutex::new(&mut out);
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    out.into_iter().map(|r| r.expect("every item evaluated")).collect()
}

pub fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// One run per value of `param`; rows come back sorted by value.
pub fn sweep(template: &Scenario, param: &str, values: &[f64], threads: usize) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::Invalid("empty sweep".into()));
    }
    let mut grid = values.to_vec();
    grid.sort_by(f64::total_cmp);
    let scenarios = grid
        .iter()
        .map(|&v| template.with_param(param, v))
        .collect::<Result<Vec<_>>>()?;
    let points = par_map(&scenarios, threads, |s| s.simulate().and_then(|r| summarize(&r, SUMMARY_PROBE)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    SweepResult::new(param, grid, points)
}

/// Peak temperature during heating at a constant flow rate.
pub fn peak_at_flow(template: &Scenario, flow: f64) -> Result<f64> {
    let r = template.heating_only().with_flow(flow).simulate()?;
    peak_temperature(&r.series(SUMMARY_PROBE)?[..r.heating_len()])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinFlow {
    /// ml/min, feasible
    pub flow: f64,
    /// Peak at `flow`, °C.
    pub peak: f64,
    pub evaluations: usize,
}

/// Smallest flow in [lo, hi] whose heating peak stays at or below `cap`,
/// to within `tol`. The returned flow is always feasible.
pub fn min_flow_for_cap(template: &Scenario, cap: f64, lo: f64, hi: f64, tol: f64) -> Result<MinFlow> {
    min_flow_by(|q| peak_at_flow(template, q), cap, lo, hi, tol)
}

/// Bisection core for a monotone non-increasing response.
pub fn min_flow_by(mut peak: impl FnMut(f64) -> Result<f64>, cap: f64, lo: f64, hi: f64, tol: f64) -> Result<MinFlow> {
    if !(lo >= 0.0 && hi > lo && tol > 0.0) {
        return Err(Error::Invalid("need 0 ≤ lo < hi and tol > 0".into()));
    }
    let p_lo = peak(lo)?;
    if p_lo <= cap {
        return Ok(MinFlow {
            flow: lo,
            peak: p_lo,
            evaluations: 1,
        });
    }
    let p_hi = peak(hi)?;
    if p_hi > cap {
        return Err(Error::Infeasible(format!(
            "peak {p_hi:.2} °C at {hi} ml/min is above the cap {cap} °C"
        )));
    }
    let (mut a, mut b, mut pb) = (lo, hi, p_hi);
    let mut evaluations = 2;
    while b - a > tol {
        let m = 0.5 * (a + b);
        let pm = peak(m)?;
        evaluations += 1;
        if pm <= cap {
            b = m;
            pb = pm;
        } else {
            a = m;
        }
    }
    Ok(MinFlow {
        flow: b,
        peak: pb,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(n: usize, dt: f64) -> Vec<f64> {
        (0..n).map(|i| i as f64 * dt).collect()
    }

    #[test]
    fn peaks() {
        assert_eq!(peak_temperature(&[54.0; 5]).unwrap(), 54.0);
        assert_eq!(peak_temperature(&[20.0, 40.0, 61.0, 50.0, 30.0]).unwrap(), 61.0);
        assert!(peak_temperature(&[]).is_err());
    }

    #[test]
    fn plateau_cases() {
        let t = ts(721, 5.0);
        assert_eq!(plateau(&t, &vec![56.0; t.len()], 600.0, 0.002), Some(56.0));
        let ramp: Vec<f64> = t.iter().map(|x| 20.0 + 0.01 * x).collect();
        assert_eq!(plateau(&t, &ramp, 600.0, 0.002), None);
        assert_eq!(plateau(&t[..10], &ramp[..10], 600.0, 0.002), None);
    }

    #[test]
    fn knee_cases() {
        let grid = [0.0, 2.0, 8.0, 12.0, 16.0, 24.0];
        let measured = SweepResult::from_peaks("flow_rate", &grid, &[65.0, 60.0, 57.0, 56.0, 55.5, 55.2]).unwrap();
        let k = knee(&measured).unwrap();
        assert!((8.0..=12.0).contains(&k), "{k}");
        let lin: Vec<f64> = grid.iter().map(|q| 70.0 - 0.5 * q).collect();
        assert_eq!(knee(&SweepResult::from_peaks("f", &grid, &lin).unwrap()).unwrap(), 24.0);
        let step = SweepResult::from_peaks("f", &[0.0, 2.0, 4.0, 6.0, 8.0], &[70.0, 66.0, 56.0, 56.0, 56.0]).unwrap();
        assert_eq!(knee(&step).unwrap(), 6.0);
        let bumpy = SweepResult::from_peaks("f", &grid, &[65.0, 60.0, 61.0, 56.0, 55.0, 54.0]).unwrap();
        assert!(knee(&bumpy).is_err());
        assert!(knee(&SweepResult::from_peaks("f", &[0.0, 1.0, 2.0], &[3.0, 2.0, 1.0]).unwrap()).is_err());
    }

    #[test]
    fn layout_comparison() {
        let grid = [2.0, 8.0, 12.0, 16.0];
        let reg = SweepResult::from_peaks("f", &grid, &[65.0, 57.0, 56.0, 56.0]).unwrap();
        let same = compare_layouts(&reg, &reg).unwrap();
        assert_eq!((same.low_flow_gap, same.high_flow_gap, same.crossover), (0.0, 0.0, None));
        let int = SweepResult::from_peaks("f", &grid, &[66.0, 56.5, 55.2, 55.0]).unwrap();
        let r = compare_layouts(&reg, &int).unwrap();
        assert!(r.low_flow_gap > 0.0 && r.high_flow_gap < 0.0);
        let c = r.crossover.unwrap();
        assert!((2.0..8.0).contains(&c));
        // gap = 1 − (q − 2)/3 crosses zero at 5
        let lin = SweepResult::from_peaks("f", &grid, &[66.0, 56.0, 53.0, 52.0]).unwrap();
        let r = compare_layouts(&reg, &lin).unwrap();
        assert!((r.crossover.unwrap() - 5.0).abs() < 1e-12);
        let other = SweepResult::from_peaks("f", &[2.0, 8.0, 12.0, 24.0], &[1.0; 4]).unwrap();
        assert!(compare_layouts(&reg, &other).is_err());
    }

    #[test]
    fn bench_mass_fractions() {
        let f = mass_fractions(&BENCH_MASSES);
        let pct: Vec<f64> = f.iter().map(|x| (x * 1000.0).round() / 10.0).collect();
        assert_eq!(pct, [11.4, 19.2, 25.5, 30.0]);
        let none = MassLedger {
            structure: 0.0,
            cpcm_and_caps: 0.0,
            top_cover: 0.0,
            coolant: 0.0,
            cell: 91.67,
        };
        assert_eq!(mass_fractions(&none), [0.0; 4]);
    }

    #[test]
    fn pareto_small() {
        let d = |m: f64, p: f64| Design {
            label: format!("{m}/{p}"),
            mass: m,
            peak: p,
        };
        assert_eq!(pareto_mass_vs_peak(&[d(1.0, 60.0)]).unwrap().len(), 1);
        let front = pareto_mass_vs_peak(&[d(2.0, 70.0), d(1.0, 60.0)]).unwrap();
        assert_eq!(front, vec![d(1.0, 60.0)]);
        // equal peak: lower mass wins
        let front = pareto_mass_vs_peak(&[d(3.0, 55.0), d(2.0, 55.0), d(1.0, 65.0)]).unwrap();
        assert_eq!(front, vec![d(1.0, 65.0), d(2.0, 55.0)]);
        assert!(pareto_mass_vs_peak(&[]).is_err());
    }

    #[test]
    fn bisection_on_synthetic_response() {
        let f = |q: f64| Ok(70.0 - 10.0 * (1.0 - (-q / 4.0).exp()));
        let r = min_flow_by(f, 64.0, 0.0, 24.0, 0.01).unwrap();
        let exact = -4.0 * (1.0 - 0.6f64).ln();
        assert!(r.flow >= exact && r.flow - exact <= 0.01);
        assert!(r.peak <= 64.0);
        assert_eq!(min_flow_by(f, 75.0, 0.0, 24.0, 0.01).unwrap().flow, 0.0);
        assert!(matches!(min_flow_by(f, 55.0, 0.0, 24.0, 0.01), Err(Error::Infeasible(_))));
    }

    #[test]
    fn par_map_keeps_order() {
        let xs: Vec<u64> = (0..50).collect();
        assert_eq!(par_map(&xs, 7, |x| x * x), xs.iter().map(|x| x * x).collect::<Vec<_>>());
    }
}
