//! Parameter sweeps, decay fits and bracketing of critical parameters.

use std::fmt;
use std::fmt::Write as _;

use crate::bp::{infection_time_curve, UpdateFamily};
use crate::correspondence::ca_to_bp;
use crate::error::{domain, Error, Result};
use crate::exact::to_f64;
use crate::field::replica_seed;
use crate::lattice::Window;
use crate::pca::{exhaustive_theta, theta_curve, theta_in_window, Boundary, Estimate};
use crate::rates::{LinearCurve, ParamCurve, RatesMeasure};
use crate::upset::UpFamily;

/// Header line of every CSV written by the tools.
pub const CSV_HEADER: &str = "# pcabp-csv v1";

pub const DEFAULT_THRESHOLD: f64 = 0.05;
pub const DEFAULT_HORIZON: i64 = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub param: f64,
    pub horizon: i64,
    pub estimate: f64,
    pub stderr: f64,
    /// Replicas with a positive outcome; equals the estimate times the replicas.
    pub hits: u64,
    /// Zero for exact rows.
    pub replicas: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    /// `p` for measures, `q` for bootstrap families.
    pub param_name: &'static str,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER} sweep\n{},n,estimate,stderr,hits,replicas,seed\n", self.param_name);
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{},{},{}", r.param, r.horizon, r.estimate, r.stderr, r.hits, r.replicas, r.seed).unwrap();
        }
        s
    }

    /// Rows at one parameter, as decay points.
    pub fn decay_points(&self, param: f64) -> Vec<DecayPoint> {
        self.rows
            .iter()
            .filter(|r| r.param == param)
            .map(|r| DecayPoint {
                t: r.horizon,
                estimate: r.estimate,
                positives: if r.replicas == 0 { u64::MAX } else { r.hits },
            })
            .collect()
    }
}

fn check_grid(grid: &[f64], horizons: &[i64], lo: f64, hi: f64) -> Result<()> {
    if grid.is_empty() || horizons.is_empty() {
        return domain("empty grid");
    }
    if let Some(p) = grid.iter().find(|p| !(lo..=hi).contains(*p)) {
        return domain(format!("grid point {p} outside [{lo}, {hi}]"));
    }
    if let Some(n) = horizons.iter().find(|n| **n < 0) {
        return domain(format!("negative horizon {n}"));
    }
    Ok(())
}

fn cell_seed(seed: u64, i: usize) -> u64 {
    replica_seed(seed ^ 0x5eed_9a1d, i as u64)
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// `theta_n(p)` on a grid, exactly or from `replicas` runs per grid point.
pub fn sweep_theta(curve: &LinearCurve, grid: &[f64], horizons: &[i64], replicas: Option<u64>, seed: u64) -> Result<SweepResult> {
    let (lo, hi) = curve.interval();
    check_grid(grid, horizons, lo, hi)?;
    let grid = sorted(grid.to_vec());
    let mut hs = horizons.to_vec();
    hs.sort();
    hs.dedup();
    let mut rows = Vec::new();
    for (i, &p) in grid.iter().enumerate() {
        let mu = curve.at(p)?;
        match replicas {
            None => {
                for &n in &hs {
                    let v = if n == 0 { 1.0 } else { to_f64(&exhaustive_theta(&mu, n)?) };
                    rows.push(SweepRow {
                        param: p,
                        horizon: n,
                        estimate: v,
                        stderr: 0.0,
                        hits: 0,
                        replicas: 0,
                        seed,
                    });
                }
            }
            Some(reps) => {
                let s = cell_seed(seed, i);
                let top = *hs.last().unwrap();
                let c = theta_curve(&mu, top.max(1), reps, s)?;
                for &n in &hs {
                    let e = c[n as usize];
                    rows.push(SweepRow {
                        param: p,
                        horizon: n,
                        estimate: e.mean,
                        stderr: e.stderr,
                        hits: e.hits,
                        replicas: reps,
                        seed: s,
                    });
                }
            }
        }
    }
    Ok(SweepResult { param_name: "p", rows })
}

/// `P(origin healthy at t)` for Bernoulli(`q`) initial infection.
pub fn sweep_infection(x: &UpdateFamily, grid: &[f64], horizons: &[i64], replicas: u64, seed: u64) -> Result<SweepResult> {
    check_grid(grid, horizons, 0.0, 1.0)?;
    let grid = sorted(grid.to_vec());
    let mut hs = horizons.to_vec();
    hs.sort();
    hs.dedup();
    let top = *hs.last().unwrap();
    let window = Window::centered(x.dim(), x.range() * top);
    let mut rows = Vec::new();
    for (i, &q) in grid.iter().enumerate() {
        let s = cell_seed(seed, i);
        let c = infection_time_curve(x, q, &window, top, replicas, s)?;
        for &n in &hs {
            let e = c[n as usize];
            rows.push(SweepRow {
                param: q,
                horizon: n,
                estimate: e.mean,
                stderr: e.stderr,
                hits: e.hits,
                replicas,
                seed: s,
            });
        }
    }
    Ok(SweepResult { param_name: "q", rows })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayPoint {
    pub t: i64,
    pub estimate: f64,
    pub positives: u64,
}

/// `estimate ~ C exp(-c t)` by least squares on the logarithm.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayFit {
    pub c: f64,
    pub big_c: f64,
    pub t_min: i64,
    pub t_max: i64,
    pub r2: f64,
    pub used: usize,
}

impl DecayFit {
    pub fn decaying(&self) -> bool {
        self.c > 1e-12
    }
}

pub const MIN_FIT_ROWS: usize = 5;
pub const MIN_POSITIVES: u64 = 10;

/// Rows at `t < 1` are ignored.
pub fn fit_decay(points: &[DecayPoint]) -> Result<DecayFit> {
    let pts: Vec<(f64, f64, i64)> = points
        .iter()
        .filter(|p| p.t >= 1 && p.estimate > 0.0 && p.positives >= MIN_POSITIVES)
        .map(|p| (p.t as f64, p.estimate.ln(), p.t))
        .collect();
    if pts.len() < MIN_FIT_ROWS {
        if points.iter().all(|p| p.estimate == 0.0 || p.positives < MIN_POSITIVES) && !points.is_empty() {
            return Err(Error::Undecided("decay faster than resolvable".into()));
        }
        return domain(format!("need {MIN_FIT_ROWS} usable rows, have {}", pts.len()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return domain("all rows at one time");
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(DecayFit {
        c: -slope,
        big_c: intercept.exp(),
        t_min: pts.iter().map(|p| p.2).min().unwrap(),
        t_max: pts.iter().map(|p| p.2).max().unwrap(),
        r2,
        used: pts.len(),
    })
}

/// Where a bracket ended up.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Edge {
    Interior,
    /// The proxy already sits on the upper side at the lower end.
    AtLower,
    /// The proxy never reaches the upper side; no transition in range.
    AtUpper,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticalEstimate {
    pub lower: f64,
    pub upper: f64,
    pub proxy_lower: Estimate,
    pub proxy_upper: Estimate,
    pub proxy: String,
    pub horizon: i64,
    pub width: Option<i64>,
    pub threshold: f64,
    pub replicas: u64,
    pub edge: Edge,
    /// Every proxy evaluation in order of parameter.
    pub evaluations: Vec<(f64, Estimate)>,
}

impl CriticalEstimate {
    pub fn no_transition(&self) -> bool {
        self.edge == Edge::AtUpper
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER} bracket\nparam,estimate,stderr,hits,replicas\n");
        for (p, e) in &self.evaluations {
            writeln!(s, "{},{},{},{},{}", p, e.mean, e.stderr, e.hits, e.replicas).unwrap();
        }
        s
    }
}

impl fmt::Display for CriticalEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "bracket [{}, {}]", self.lower, self.upper)?;
        writeln!(f, "proxy {} at horizon {}, threshold {}", self.proxy, self.horizon, self.threshold)?;
        if let Some(w) = self.width {
            writeln!(f, "window width {w}")?;
        }
        writeln!(f, "proxy at lower {} +- {}", self.proxy_lower.mean, self.proxy_lower.stderr)?;
        writeln!(f, "proxy at upper {} +- {}", self.proxy_upper.mean, self.proxy_upper.stderr)?;
        match self.edge {
            Edge::Interior => writeln!(f, "finite-size proxy, biased at finite horizon"),
            Edge::AtLower => writeln!(f, "transition at or below the lower end"),
            Edge::AtUpper => writeln!(f, "no transition in range"),
        }
    }
}

fn exact(v: bool) -> Estimate {
    Estimate {
        mean: v as u8 as f64,
        stderr: 0.0,
        hits: v as u64,
        replicas: 1,
    }
}

/// Bisection on a proxy that crosses `upper_side` once as the parameter grows.
fn bisect(lo: f64, hi: f64, tol: f64, mut eval: impl FnMut(f64) -> Result<Estimate>, upper_side: impl Fn(&Estimate) -> bool, increasing: bool) -> Result<(f64, f64, Estimate, Estimate, Edge, Vec<(f64, Estimate)>)> {
    if !(tol > 0.0) {
        return domain("tolerance must be positive");
    }
    let mut evals = Vec::new();
    let mut get = |p: f64, evals: &mut Vec<(f64, Estimate)>| -> Result<Estimate> {
        let e = eval(p)?;
        evals.push((p, e));
        Ok(e)
    };
    let e_hi = get(hi, &mut evals)?;
    if !upper_side(&e_hi) {
        return Ok((hi, hi, e_hi, e_hi, Edge::AtUpper, evals));
    }
    let e_lo = get(lo, &mut evals)?;
    if upper_side(&e_lo) {
        return Ok((lo, lo, e_lo, e_lo, Edge::AtLower, evals));
    }
    let (mut a, mut b, mut ea, mut eb) = (lo, hi, e_lo, e_hi);
    while b - a > tol {
        let m = 0.5 * (a + b);
        let e = get(m, &mut evals)?;
        if upper_side(&e) {
            b = m;
            eb = e;
        } else {
            a = m;
            ea = e;
        }
    }
    evals.sort_by(|x, y| x.0.total_cmp(&y.0));
    for w in evals.windows(2) {
        let (d, s) = (w[1].1.mean - w[0].1.mean, (w[0].1.stderr.powi(2) + w[1].1.stderr.powi(2)).sqrt());
        let drop = if increasing { -d } else { d };
        if drop > 4.0 * s + 1e-12 {
            return Err(Error::Domain(format!(
                "proxy not monotone: {} at {} then {} at {}",
                w[0].1.mean, w[0].0, w[1].1.mean, w[1].0
            )));
        }
    }
    Ok((a, b, ea, eb, Edge::Interior, evals))
}

fn is_dirac_of(m: &RatesMeasure, pred: impl Fn(&UpFamily) -> bool) -> bool {
    m.atoms().iter().all(|(f, _)| pred(f))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcSettings {
    pub horizon: i64,
    /// Periodic window width; the exact light cone when it is at least the cone width.
    pub width: i64,
    pub replicas: u64,
    pub tolerance: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for PcSettings {
    fn default() -> Self {
        PcSettings {
            horizon: DEFAULT_HORIZON,
            width: 2 * DEFAULT_HORIZON,
            replicas: 10_000,
            tolerance: 0.005,
            threshold: DEFAULT_THRESHOLD,
            seed: 1,
        }
    }
}

/// `theta_T(p)` from all ones, with shared randomness across `p`.
pub fn theta_proxy(mu: &RatesMeasure, s: &PcSettings) -> Result<Estimate> {
    if is_dirac_of(mu, |f| f.is_empty_family()) {
        return Ok(exact(s.horizon == 0));
    }
    if is_dirac_of(mu, |f| f.is_omega()) {
        return Ok(exact(true));
    }
    let nb = mu.neighborhood();
    let cone = 2 * nb.r * s.horizon + 1;
    if s.width >= cone {
        let w = Window::centered(nb.d, nb.r * s.horizon);
        theta_in_window(mu, s.horizon, &w, Boundary::AllZero, s.replicas, s.seed)
    } else {
        let lo = -(s.width / 2);
        let w = Window::new(vec![lo; nb.d], vec![lo + s.width - 1; nb.d])?;
        theta_in_window(mu, s.horizon, &w, Boundary::Periodic, s.replicas, s.seed)
    }
}

/// Bracket for `p_c` on a death curve from the proxy `theta_T(p) > threshold`.
pub fn estimate_pc(curve: &LinearCurve, s: &PcSettings) -> Result<CriticalEstimate> {
    if s.width < 1 || s.horizon < 1 || s.replicas == 0 {
        return domain("horizon, width and replicas must be positive");
    }
    let (lo, hi) = curve.interval();
    let thr = s.threshold;
    // Omega with deaths is i.i.d. noise: unique invariant measure below the top
    let (a, b, ea, eb, edge, evaluations) = if is_dirac_of(curve.base(), |f| f.is_omega() || f.is_empty_family()) {
        let e = theta_proxy(&curve.at(hi)?, s)?;
        (hi, hi, e, e, Edge::AtUpper, vec![(hi, e)])
    } else {
        bisect(lo, hi, s.tolerance, |p| theta_proxy(&curve.at(p)?, s), |e| e.mean > thr, true)?
    };
    let nb = curve.base().neighborhood();
    Ok(CriticalEstimate {
        lower: a,
        upper: b,
        proxy_lower: ea,
        proxy_upper: eb,
        proxy: "theta_T(p) > threshold".into(),
        horizon: s.horizon,
        width: (s.width < 2 * nb.r * s.horizon + 1).then_some(s.width),
        threshold: thr,
        replicas: s.replicas,
        edge,
        evaluations,
    })
}

/// Bracket for `q_c` from the proxy `P(origin healthy at T) > threshold`.
pub fn estimate_qc(x: &UpdateFamily, s: &PcSettings) -> Result<CriticalEstimate> {
    if s.horizon < 1 || s.replicas == 0 {
        return domain("horizon and replicas must be positive");
    }
    let thr = s.threshold;
    let window = Window::centered(x.dim(), x.range() * s.horizon);
    let eval = |q: f64| -> Result<Estimate> {
        if x.contains_empty_set() {
            return Ok(exact(false));
        }
        if x.is_empty() {
            // the origin stays healthy iff it starts healthy
            return Ok(exact(q < 1.0));
        }
        Ok(infection_time_curve(x, q, &window, s.horizon, s.replicas, s.seed)?[s.horizon as usize])
    };
    let (a, b, ea, eb, edge, evaluations) = if x.is_empty() {
        (1.0, 1.0, exact(false), exact(false), Edge::AtUpper, vec![(1.0, exact(false))])
    } else {
        bisect(0.0, 1.0, s.tolerance, eval, |e| e.mean <= thr, false)?
    };
    Ok(CriticalEstimate {
        lower: a,
        upper: b,
        proxy_lower: ea,
        proxy_upper: eb,
        proxy: "P(origin healthy at T) > threshold".into(),
        horizon: s.horizon,
        width: None,
        threshold: thr,
        replicas: s.replicas,
        edge,
        evaluations,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualityReport {
    pub pc: CriticalEstimate,
    pub qc: CriticalEstimate,
    /// `[1 - upper, 1 - lower]` of the p bracket.
    pub one_minus_pc: (f64, f64),
    pub widen: f64,
    pub overlap: bool,
}

impl fmt::Display for DualityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "p_c bracket [{}, {}]", self.pc.lower, self.pc.upper)?;
        writeln!(f, "1 - p_c bracket [{}, {}]", self.one_minus_pc.0, self.one_minus_pc.1)?;
        writeln!(f, "q_c bracket [{}, {}]", self.qc.lower, self.qc.upper)?;
        writeln!(f, "widened by {}: {}", self.widen, if self.overlap { "overlap" } else { "no overlap" })
    }
}

pub const DUALITY_WIDEN: f64 = 0.01;

/// Compares `1 - p_c` for the death curve of `u` with `q_c` of its bootstrap family.
pub fn duality_check(u: &UpFamily, s: &PcSettings) -> Result<DualityReport> {
    let pc = estimate_pc(&LinearCurve::full(RatesMeasure::dirac(u.clone())), s)?;
    let qc = estimate_qc(&ca_to_bp(u)?, s)?;
    let om = (1.0 - pc.upper, 1.0 - pc.lower);
    let w = DUALITY_WIDEN;
    let overlap = om.0 - w <= qc.upper + w && qc.lower - w <= om.1 + w;
    Ok(DualityReport {
        pc,
        qc,
        one_minus_pc: om,
        widen: w,
        overlap,
    })
}

/// Parses a comma list of parameters, each exact or decimal.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| crate::exact::parse_q(t).map(|q| to_f64(&q)))
        .collect()
}
