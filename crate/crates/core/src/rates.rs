//! Rate measures on up-families, death mixtures, parametrised curves and
//! stochastic domination.

use std::collections::VecDeque;

use num_traits::{One, Signed, Zero};

use crate::error::{domain, Error, Result};
use crate::exact::{from_f64, q, to_f64, Prob, Q};
use crate::upset::{make_upfamily, DownSystem, Neighborhood, SiteSet, UpFamily};

/// Tolerance on the total mass of a measure.
pub const MASS_TOL: f64 = 1e-12;
/// Step of the central difference used for generic curves.
pub const FD_STEP: f64 = 1e-4;

/// A finitely supported probability measure on up-families.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatesMeasure {
    nbhd: Neighborhood,
    atoms: Vec<(UpFamily, Q)>,
}

impl RatesMeasure {
    /// Builds a measure, merging repeated families and dropping null atoms.
    pub fn new(nbhd: Neighborhood, atoms: Vec<(UpFamily, Q)>) -> Result<Self> {
        let mut merged: Vec<(UpFamily, Q)> = Vec::new();
        let mut total = Q::zero();
        for (f, w) in atoms {
            if f.neighborhood() != nbhd {
                return domain("atom over a different neighborhood");
            }
            if w.is_negative() {
                return domain(format!("negative weight {w}"));
            }
            total += &w;
            match merged.iter_mut().find(|(g, _)| *g == f) {
                Some((_, acc)) => *acc += w,
                None => merged.push((f, w)),
            }
        }
        if (to_f64(&total) - 1.0).abs() > MASS_TOL {
            return domain(format!("weights sum to {}, not 1", to_f64(&total)));
        }
        merged.retain(|(_, w)| !w.is_zero());
        merged.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(RatesMeasure { nbhd, atoms: merged })
    }

    pub fn from_f64(nbhd: Neighborhood, atoms: Vec<(UpFamily, f64)>) -> Result<Self> {
        let atoms = atoms
            .into_iter()
            .map(|(f, w)| Ok((f, from_f64(w)?)))
            .collect::<Result<Vec<_>>>()?;
        RatesMeasure::new(nbhd, atoms)
    }

    pub fn dirac(f: UpFamily) -> Self {
        RatesMeasure {
            nbhd: f.neighborhood(),
            atoms: vec![(f, Q::one())],
        }
    }

    pub fn neighborhood(&self) -> Neighborhood {
        self.nbhd
    }

    pub fn atoms(&self) -> &[(UpFamily, Q)] {
        &self.atoms
    }

    pub fn weight_of(&self, f: &UpFamily) -> Q {
        self.atoms
            .iter()
            .find(|(g, _)| g == f)
            .map(|(_, w)| w.clone())
            .unwrap_or_else(Q::zero)
    }

    /// Weight of the empty family.
    pub fn death_weight(&self) -> Q {
        self.weight_of(&UpFamily::empty(self.nbhd))
    }

    /// No atom equals the family of all subsets.
    pub fn is_absorbing(&self) -> bool {
        !self.atoms.iter().any(|(f, _)| f.is_omega())
    }

    pub fn mass(&self, d: &DownSystem) -> Q {
        self.atoms
            .iter()
            .filter(|(f, _)| d.holds(f))
            .map(|(_, w)| w.clone())
            .sum()
    }
}

pub fn with_death(mu: &RatesMeasure, p: &Prob) -> RatesMeasure {
    let p = p.value();
    let mut atoms: Vec<(UpFamily, Q)> = mu.atoms.iter().map(|(f, w)| (f.clone(), w * p)).collect();
    atoms.push((UpFamily::empty(mu.nbhd), Q::one() - p));
    RatesMeasure::new(mu.nbhd, atoms).expect("mixture of probability measures")
}

/// The family of sets meeting `x`.
pub fn path_family(nbhd: Neighborhood, x: SiteSet) -> Result<UpFamily> {
    let singles: Vec<SiteSet> = x.iter().map(|i| SiteSet(1 << i)).collect();
    make_upfamily(nbhd, &singles)
}

pub fn gosp(nbhd: Neighborhood, x: SiteSet, p: &Prob) -> Result<RatesMeasure> {
    if x.is_empty() {
        return domain("GOSP needs a nonempty set");
    }
    let f = path_family(nbhd, x)?;
    Ok(with_death(&RatesMeasure::dirac(f), p))
}

/// Oriented site percolation in one dimension.
pub fn osp(p: &Prob) -> RatesMeasure {
    let n = Neighborhood::new(1, 1, true).unwrap();
    let x = n.set_of(&[vec![-1, -1], vec![1, -1]]).unwrap();
    gosp(n, x, p).unwrap()
}

/// The Toom majority family on `{(0,0,-1),(1,0,-1),(0,1,-1)}`.
pub fn toom_majority() -> UpFamily {
    let n = Neighborhood::new(2, 1, true).unwrap();
    let t = [vec![0, 0, -1], vec![1, 0, -1], vec![0, 1, -1]];
    let mut gens = Vec::new();
    for i in 0..3 {
        for j in i + 1..3 {
            gens.push(n.set_of(&[t[i].clone(), t[j].clone()]).unwrap());
        }
    }
    make_upfamily(n, &gens).unwrap()
}

pub fn toom_with_death(p: &Prob) -> RatesMeasure {
    with_death(&RatesMeasure::dirac(toom_majority()), p)
}

/// Dirac on the up-family generated by the update sets and `{(0,..,0,-1)}`.
pub fn bp_rates(nbhd: Neighborhood, sets: &[SiteSet]) -> Result<RatesMeasure> {
    let mut gens = sets.to_vec();
    gens.push(nbhd.self_site());
    Ok(RatesMeasure::dirac(make_upfamily(nbhd, &gens)?))
}

/// A one-parameter family of measures.
pub trait ParamCurve {
    fn interval(&self) -> (f64, f64);
    fn at(&self, p: f64) -> Result<RatesMeasure>;

    /// Derivative of `p -> mu_p(d)`.
    fn mass_derivative(&self, p: f64, d: &DownSystem) -> Result<f64> {
        let (lo, hi) = self.interval();
        let a = (p - FD_STEP).max(lo);
        let b = (p + FD_STEP).min(hi);
        if b <= a {
            return Ok(0.0);
        }
        let ma = to_f64(&self.at(a)?.mass(d));
        let mb = to_f64(&self.at(b)?.mass(d));
        Ok((mb - ma) / (b - a))
    }
}

/// `p mu + (1 - p) delta_empty`.
#[derive(Clone, Debug)]
pub struct LinearCurve {
    base: RatesMeasure,
    p_lo: f64,
    p_hi: f64,
}

impl LinearCurve {
    pub fn new(base: RatesMeasure, p_lo: f64, p_hi: f64) -> Result<Self> {
        let top = Self::max_parameter(&base);
        if !(0.0..=top).contains(&p_lo) || !(p_lo..=top).contains(&p_hi) {
            return domain(format!("interval [{p_lo}, {p_hi}] not inside [0, {top}]"));
        }
        Ok(LinearCurve { base, p_lo, p_hi })
    }

    /// Whole admissible interval.
    pub fn full(base: RatesMeasure) -> Self {
        let top = Self::max_parameter(&base);
        LinearCurve {
            base,
            p_lo: 0.0,
            p_hi: top,
        }
    }

    pub fn max_parameter(base: &RatesMeasure) -> f64 {
        let e = to_f64(&base.death_weight());
        if e >= 1.0 {
            1.0
        } else {
            1.0 / (1.0 - e)
        }
    }

    pub fn base(&self) -> &RatesMeasure {
        &self.base
    }
}

impl ParamCurve for LinearCurve {
    fn interval(&self) -> (f64, f64) {
        (self.p_lo, self.p_hi)
    }

    fn at(&self, p: f64) -> Result<RatesMeasure> {
        let pq = from_f64(p)?;
        let nb = self.base.nbhd;
        let mut atoms: Vec<(UpFamily, Q)> = self
            .base
            .atoms
            .iter()
            .filter(|(f, _)| !f.is_empty_family())
            .map(|(f, w)| (f.clone(), w * &pq))
            .collect();
        let death = self.base.death_weight() * &pq + Q::one() - &pq;
        if death.is_negative() {
            if to_f64(&death) < -MASS_TOL {
                return domain(format!("parameter {p} outside the curve"));
            }
            // round-off at the top of the interval
            let rest: Q = atoms.iter().map(|(_, w)| w.clone()).sum();
            for (_, w) in atoms.iter_mut() {
                *w = &*w / &rest;
            }
        } else {
            atoms.push((UpFamily::empty(nb), death));
        }
        RatesMeasure::new(nb, atoms)
    }

    fn mass_derivative(&self, _p: f64, d: &DownSystem) -> Result<f64> {
        let m = to_f64(&self.base.mass(d));
        let e = if d.holds(&UpFamily::empty(self.base.nbhd)) { 1.0 } else { 0.0 };
        Ok(m - e)
    }
}

/// A curve that does not move.
#[derive(Clone, Debug)]
pub struct ConstantCurve {
    pub measure: RatesMeasure,
    pub p_lo: f64,
    pub p_hi: f64,
}

impl ParamCurve for ConstantCurve {
    fn interval(&self) -> (f64, f64) {
        (self.p_lo, self.p_hi)
    }

    fn at(&self, _p: f64) -> Result<RatesMeasure> {
        Ok(self.measure.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveEntry {
    pub p: f64,
    pub system: usize,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct MonotoneReport {
    pub entries: Vec<CurveEntry>,
    /// Largest derivative seen; `-inf` if nothing was tested.
    pub max_derivative: f64,
    /// Indices of the trivial systems that were skipped.
    pub excluded: Vec<usize>,
    pub nondecreasing: bool,
}

#[derive(Clone, Debug)]
pub struct StrongReport {
    pub entries: Vec<CurveEntry>,
    pub max_value: f64,
    pub excluded: Vec<usize>,
    pub c: f64,
    pub passes: bool,
}

fn check_inputs<C: ParamCurve + ?Sized>(curve: &C, grid: &[f64], systems: &[DownSystem]) -> Result<(Neighborhood, Vec<usize>)> {
    let (lo, hi) = curve.interval();
    if let Some(p) = grid.iter().find(|&&p| p < lo - 1e-15 || p > hi + 1e-15) {
        return domain(format!("grid point {p} outside [{lo}, {hi}]"));
    }
    let nb = curve.at(lo)?.neighborhood();
    for s in systems {
        if s.neighborhood() != nb {
            return domain("down-system over a different neighborhood");
        }
    }
    let excluded = systems
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_trivial())
        .map(|(i, _)| i)
        .collect();
    Ok((nb, excluded))
}

pub fn check_monotone<C: ParamCurve + ?Sized>(curve: &C, grid: &[f64], systems: &[DownSystem]) -> Result<MonotoneReport> {
    let (_, excluded) = check_inputs(curve, grid, systems)?;
    let mut entries = Vec::new();
    for &p in grid {
        for (i, s) in systems.iter().enumerate() {
            if excluded.contains(&i) {
                continue;
            }
            entries.push(CurveEntry {
                p,
                system: i,
                value: curve.mass_derivative(p, s)?,
            });
        }
    }
    let max = entries.iter().map(|e| e.value).fold(f64::NEG_INFINITY, f64::max);
    Ok(MonotoneReport {
        nondecreasing: max <= 1e-9,
        entries,
        max_derivative: max,
        excluded,
    })
}

pub fn check_strongly_increasing<C: ParamCurve + ?Sized>(
    curve: &C,
    grid: &[f64],
    systems: &[DownSystem],
    c: f64,
) -> Result<StrongReport> {
    if c.is_nan() || c <= 0.0 {
        return domain(format!("constant must be positive, got {c}"));
    }
    let (_, excluded) = check_inputs(curve, grid, systems)?;
    let mut entries = Vec::new();
    for &p in grid {
        let m = curve.at(p)?;
        for (i, s) in systems.iter().enumerate() {
            if excluded.contains(&i) {
                continue;
            }
            let d = curve.mass_derivative(p, s)?;
            let value = d + c * (1.0 - to_f64(&m.mass(s)));
            entries.push(CurveEntry { p, system: i, value });
        }
    }
    let max = entries.iter().map(|e| e.value).fold(f64::NEG_INFINITY, f64::max);
    Ok(StrongReport {
        passes: max <= 1e-9,
        entries,
        max_value: max,
        excluded,
        c,
    })
}

/// Coupling of `nu` (first) over `mu` (second) on ordered pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct DominationCertificate {
    pub coupling: Vec<(UpFamily, UpFamily, Q)>,
}

impl DominationCertificate {
    /// Checks marginals and support of the coupling exactly.
    pub fn verify(&self, nu: &RatesMeasure, mu: &RatesMeasure) -> bool {
        let ordered = self
            .coupling
            .iter()
            .all(|(a, b, m)| !m.is_negative() && b.is_subfamily(a));
        let row = |f: &UpFamily| -> Q { self.coupling.iter().filter(|(a, _, _)| a == f).map(|(_, _, m)| m.clone()).sum() };
        let col = |f: &UpFamily| -> Q { self.coupling.iter().filter(|(_, b, _)| b == f).map(|(_, _, m)| m.clone()).sum() };
        ordered
            && nu.atoms.iter().all(|(f, w)| row(f) == *w)
            && mu.atoms.iter().all(|(f, w)| col(f) == *w)
            && self.coupling.iter().all(|(a, b, _)| !nu.weight_of(a).is_zero() && !mu.weight_of(b).is_zero())
    }
}

#[derive(Clone, Debug)]
pub enum Domination {
    Certificate(DominationCertificate),
    /// A down-system with `nu(system) > mu(system)`.
    Violation {
        system: DownSystem,
        nu_mass: Q,
        mu_mass: Q,
    },
}

impl Domination {
    pub fn certificate(&self) -> Option<&DominationCertificate> {
        match self {
            Domination::Certificate(c) => Some(c),
            Domination::Violation { .. } => None,
        }
    }
}

struct Flow {
    cap: Vec<Vec<Q>>,
    flow: Vec<Vec<Q>>,
}

impl Flow {
    fn new(n: usize) -> Self {
        Flow {
            cap: vec![vec![Q::zero(); n]; n],
            flow: vec![vec![Q::zero(); n]; n],
        }
    }

    fn residual(&self, u: usize, v: usize) -> Q {
        &self.cap[u][v] - &self.flow[u][v]
    }

    /// Nodes reachable from `s` in the residual graph, with BFS parents.
    fn bfs(&self, s: usize) -> Vec<Option<usize>> {
        let n = self.cap.len();
        let mut parent = vec![None; n];
        parent[s] = Some(s);
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if parent[v].is_none() && self.residual(u, v).is_positive() {
                    parent[v] = Some(u);
                    queue.push_back(v);
                }
            }
        }
        parent
    }

    fn max_flow(&mut self, s: usize, t: usize) -> Q {
        let mut total = Q::zero();
        loop {
            let parent = self.bfs(s);
            if parent[t].is_none() {
                return total;
            }
            let mut bottleneck: Option<Q> = None;
            let mut v = t;
            while v != s {
                let u = parent[v].unwrap();
                let r = self.residual(u, v);
                bottleneck = Some(match bottleneck {
                    Some(b) if b <= r => b,
                    _ => r,
                });
                v = u;
            }
            let b = bottleneck.unwrap();
            let mut v = t;
            while v != s {
                let u = parent[v].unwrap();
                self.flow[u][v] += &b;
                self.flow[v][u] -= &b;
                v = u;
            }
            total += b;
        }
    }
}

/// Decides whether `nu` stochastically dominates `mu`.
pub fn stochastically_dominates(nu: &RatesMeasure, mu: &RatesMeasure) -> Result<Domination> {
    if nu.nbhd != mu.nbhd {
        return Err(Error::Domain("measures over different neighborhoods".into()));
    }
    let a = nu.atoms.len();
    let b = mu.atoms.len();
    let s = 0;
    let t = a + b + 1;
    let mut g = Flow::new(a + b + 2);
    let big = q(2, 1);
    for (i, (fa, wa)) in nu.atoms.iter().enumerate() {
        g.cap[s][1 + i] = wa.clone();
        for (j, (fb, _)) in mu.atoms.iter().enumerate() {
            if fb.is_subfamily(fa) {
                g.cap[1 + i][1 + a + j] = big.clone();
            }
        }
    }
    for (j, (_, wb)) in mu.atoms.iter().enumerate() {
        g.cap[1 + a + j][t] = wb.clone();
    }
    let total = g.max_flow(s, t);
    let need: Q = nu.atoms.iter().map(|(_, w)| w.clone()).sum();
    if total == need {
        let mut coupling = Vec::new();
        for i in 0..a {
            for j in 0..b {
                let f = &g.flow[1 + i][1 + a + j];
                if f.is_positive() {
                    coupling.push((nu.atoms[i].0.clone(), mu.atoms[j].0.clone(), f.clone()));
                }
            }
        }
        return Ok(Domination::Certificate(DominationCertificate { coupling }));
    }
    let reach = g.bfs(s);
    let gens: Vec<UpFamily> = (0..a)
        .filter(|&i| reach[1 + i].is_some())
        .map(|i| nu.atoms[i].0.clone())
        .collect();
    let system = DownSystem::new(nu.nbhd, gens)?;
    Ok(Domination::Violation {
        nu_mass: nu.mass(&system),
        mu_mass: mu.mass(&system),
        system,
    })
}
