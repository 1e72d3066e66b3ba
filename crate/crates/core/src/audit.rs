//! Pivotal sites, the Russo identity, the forward exploration algorithm and
//! the OSSS variance bound, exactly on small cones and by Monte Carlo.
//!
//! The cone `S` holds the sites `(x, t)` with `1 <= t <= n` and
//! `|x| <= r (n - t)`; the initial all-ones slab sits at times `<= 0`.

use std::collections::HashMap;

use num_traits::{One, Zero};
use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::exact::{from_f64, qi, to_f64, Poly, Q};
use crate::field::{mix, replica_seed, to_unit, FieldSample};
use crate::lattice::Window;
use crate::pca::{exhaustive_theta, exhaustive_theta_poly, par_counts, theta_curve, Estimate};
use crate::rates::{LinearCurve, ParamCurve, RatesMeasure};
use crate::upset::{Neighborhood, SiteSet, UpFamily};

/// Limit on the number of field assignments on `S` enumerated exactly.
pub const AUDIT_CAP: u64 = 1 << 22;

/// Space-time site `(x, t)`.
pub type Site = (Vec<i64>, i64);

/// The dependency cone of the origin at time `n`, in lexicographic `(t, x)` order.
#[derive(Clone, Debug)]
pub struct ConeBox {
    nbhd: Neighborhood,
    n: i64,
    sites: Vec<Site>,
    /// Per site, per neighborhood bit: the cone index read, or `None` for the slab.
    links: Vec<Vec<(usize, Option<usize>)>>,
    top: usize,
}

impl ConeBox {
    pub fn new(nbhd: Neighborhood, n: i64) -> Result<Self> {
        if n < 1 {
            return domain("horizon must be at least 1");
        }
        let mut sites = Vec::new();
        for t in 1..=n {
            for x in Window::centered(nbhd.d, nbhd.r * (n - t)).points() {
                sites.push((x, t));
            }
        }
        if sites.len() > 64 {
            return Err(Error::Capacity {
                what: "cone sites".into(),
                needed: sites.len(),
                limit: 64,
            });
        }
        let index: HashMap<&Site, usize> = sites.iter().enumerate().map(|(i, s)| (s, i)).collect();
        let rs = nbhd.sites();
        let links = sites
            .iter()
            .map(|(x, t)| {
                rs.iter()
                    .enumerate()
                    .map(|(j, y)| {
                        let s = t + y[nbhd.d];
                        let z: Vec<i64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
                        (j, if s <= 0 { None } else { Some(index[&(z, s)]) })
                    })
                    .collect()
            })
            .collect();
        let top = sites.len() - 1;
        Ok(ConeBox {
            nbhd,
            n,
            sites,
            links,
            top,
        })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn horizon(&self) -> i64 {
        self.n
    }

    fn ones_around(&self, i: usize, state: &[bool]) -> SiteSet {
        let mut y = 0u64;
        for &(j, l) in &self.links[i] {
            if l.map_or(true, |l| state[l]) {
                y |= 1 << j;
            }
        }
        SiteSet(y)
    }

    /// States of the process restarted from all ones just before time `k`;
    /// sites before `k` read as ones.
    pub fn run_from<'a>(&self, k: i64, fam: impl Fn(usize) -> &'a UpFamily) -> Vec<bool> {
        let mut state = vec![true; self.len()];
        for i in 0..self.len() {
            if self.sites[i].1 >= k {
                state[i] = fam(i).holds(self.ones_around(i, &state));
            }
        }
        state
    }

    /// Whether the origin is 1 at time `n` from all ones.
    pub fn occurs<'a>(&self, fam: impl Fn(usize) -> &'a UpFamily) -> bool {
        self.run_from(1, fam)[self.top]
    }

    /// Cone indices that are pivotal: the event holds and fails once the
    /// family there is replaced by the empty family.
    pub fn pivotal<'a>(&self, fam: impl Fn(usize) -> &'a UpFamily + Copy) -> u64 {
        if !self.occurs(fam) {
            return 0;
        }
        let empty = UpFamily::empty(self.nbhd);
        let mut out = 0u64;
        for i in 0..self.len() {
            if fam(i).is_empty_family() {
                continue;
            }
            if !self.occurs(|j| if j == i { &empty } else { fam(j) }) {
                out |= 1 << i;
            }
        }
        out
    }

    /// Forward exploration from time `k`. A site is revealed unless the
    /// states already known rule out every family in `support`.
    pub fn explore<'a>(&self, k: i64, support: &[UpFamily], fam: impl Fn(usize) -> &'a UpFamily + Copy) -> (bool, Vec<usize>) {
        let mut state = vec![true; self.len()];
        let mut revealed = vec![false; self.len()];
        let mut order = Vec::new();
        for i in 0..self.len() {
            if self.sites[i].1 < k {
                continue;
            }
            let y = self.ones_around(i, &state);
            if support.iter().any(|f| f.holds(y)) {
                revealed[i] = true;
                order.push(i);
                state[i] = fam(i).holds(y);
            } else {
                state[i] = false;
            }
        }
        if !state[self.top] {
            return (false, order);
        }
        for i in 0..self.len() {
            if !revealed[i] {
                order.push(i);
            }
        }
        (self.occurs(fam), order)
    }
}

/// Pivotal sites of one field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PivotalReport {
    pub occurs: bool,
    pub pivotal: Vec<Site>,
}

pub fn pivotal_sites(measure: &RatesMeasure, field: &FieldSample, n: i64) -> Result<PivotalReport> {
    let cone = ConeBox::new(measure.neighborhood(), n)?;
    let fams: Vec<&UpFamily> = cone.sites().iter().map(|(x, t)| field.family_at(x, *t)).collect();
    let f = |i: usize| fams[i];
    let mask = cone.pivotal(f);
    Ok(PivotalReport {
        occurs: cone.occurs(f),
        pivotal: SiteSet(mask).iter().map(|i| cone.sites()[i].clone()).collect(),
    })
}

/// The exploration run on one field, with the revealed sites in order.
pub fn osss_explore(measure: &RatesMeasure, field: &FieldSample, n: i64, k: i64) -> Result<(bool, Vec<Site>)> {
    if !(1..=n).contains(&k) {
        return domain(format!("k = {k} outside 1..={n}"));
    }
    let cone = ConeBox::new(measure.neighborhood(), n)?;
    let fams: Vec<&UpFamily> = cone.sites().iter().map(|(x, t)| field.family_at(x, *t)).collect();
    let support: Vec<UpFamily> = measure.atoms().iter().map(|(f, _)| f.clone()).collect();
    let (d, order) = cone.explore(k, &support, |i| fams[i]);
    Ok((d, order.into_iter().map(|i| cone.sites()[i].clone()).collect()))
}

fn assignment_count(atoms: usize, sites: usize) -> Result<u64> {
    (atoms as u64)
        .checked_pow(sites as u32)
        .filter(|&m| m <= AUDIT_CAP)
        .ok_or_else(|| Error::Capacity {
            what: "field assignments on the cone".into(),
            needed: (atoms as u64).saturating_pow(sites as u32) as usize,
            limit: AUDIT_CAP as usize,
        })
}

fn decode(mut code: u64, atoms: usize, out: &mut [usize]) {
    for v in out.iter_mut() {
        *v = (code % atoms as u64) as usize;
        code /= atoms as u64;
    }
}

fn counts_key(assign: &[usize], atoms: usize) -> Vec<u32> {
    let mut c = vec![0u32; atoms];
    for &a in assign {
        c[a] += 1;
    }
    c
}

fn monomial<T: Clone>(key: &[u32], weights: &[T], one: T, mul: impl Fn(&T, &T) -> T) -> T {
    let mut acc = one;
    for (a, &k) in key.iter().enumerate() {
        for _ in 0..k {
            acc = mul(&acc, &weights[a]);
        }
    }
    acc
}

#[derive(Clone, Debug, PartialEq)]
pub struct RussoReport {
    pub p: f64,
    /// `theta_n'(p)`.
    pub lhs: f64,
    /// Sum of pivotal probabilities divided by `p`.
    pub rhs: f64,
    /// Sum of pivotal probabilities.
    pub pivotal_sum: f64,
    pub gap: f64,
    /// Standard errors in Monte Carlo mode.
    pub lhs_se: Option<f64>,
    pub rhs_se: Option<f64>,
    /// Exact mode: whether `sum P(pivotal) = p theta_n'(p)` holds as polynomials.
    pub identity: Option<bool>,
}

impl RussoReport {
    /// Gap within 1e-10 (exact) or 4 combined standard errors.
    pub fn passes(&self) -> bool {
        match (self.lhs_se, self.rhs_se) {
            (Some(a), Some(b)) => self.gap <= 4.0 * (a * a + b * b).sqrt(),
            _ => self.gap < 1e-10 && self.identity != Some(false),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    Exhaustive,
    MonteCarlo { replicas: u64, seed: u64, step: f64 },
}

pub fn russo_check(base: &RatesMeasure, n: i64, p: f64, mode: Mode) -> Result<RussoReport> {
    let curve = LinearCurve::full(base.clone());
    let (lo, hi) = curve.interval();
    if !(lo..=hi).contains(&p) {
        return domain(format!("p = {p} outside [{lo}, {hi}]"));
    }
    match mode {
        Mode::Exhaustive => russo_exhaustive(&curve, n, p),
        Mode::MonteCarlo { replicas, seed, step } => russo_mc(&curve, n, p, replicas, seed, step),
    }
}

fn russo_exhaustive(curve: &LinearCurve, n: i64, p: f64) -> Result<RussoReport> {
    let base = curve.base();
    let nbhd = base.neighborhood();
    let cone = ConeBox::new(nbhd, n)?;
    let empty = UpFamily::empty(nbhd);
    let mut families: Vec<UpFamily> = base.atoms().iter().map(|(f, _)| f.clone()).filter(|f| *f != empty).collect();
    families.push(empty.clone());
    let m = families.len();
    let total = assignment_count(m, cone.len())?;
    let stats: HashMap<Vec<u32>, (u64, u64)> = (0..total)
        .into_par_iter()
        .fold(
            || (HashMap::new(), vec![0usize; cone.len()]),
            |(mut acc, mut a): (HashMap<Vec<u32>, (u64, u64)>, Vec<usize>), code| {
                decode(code, m, &mut a);
                let f = |i: usize| &families[a[i]];
                let e = acc.entry(counts_key(&a, m)).or_insert((0, 0));
                if cone.occurs(f) {
                    e.0 += 1;
                    e.1 += cone.pivotal(f).count_ones() as u64;
                }
                (acc, a)
            },
        )
        .map(|(h, _)| h)
        .reduce(HashMap::new, merge_pairs);
    let weights: Vec<Poly> = families
        .iter()
        .map(|f| {
            let w = Poly::x().scale(&base.weight_of(f));
            if *f == empty {
                &(&w + &Poly::constant(Q::one())) - &Poly::x()
            } else {
                w
            }
        })
        .collect();
    let mut theta = Poly::default();
    let mut piv = Poly::default();
    for (key, (a, c)) in &stats {
        let mono = monomial(key, &weights, Poly::constant(Q::one()), |x, y| x * y);
        theta = &theta + &mono.scale(&qi(*a as i64));
        piv = &piv + &mono.scale(&qi(*c as i64));
    }
    // the derivative comes from the independent layered enumeration
    let theta_ref = exhaustive_theta_poly(curve, n)?;
    if theta_ref != theta {
        return Err(Error::Domain(format!("cone enumeration {theta} disagrees with {theta_ref}")));
    }
    let d = theta_ref.derivative();
    let identity = piv == &Poly::x() * &d;
    let pq = from_f64(p)?;
    let lhs = d.eval(&pq);
    let piv_p = piv.eval(&pq);
    // divide by p as a polynomial so p = 0 is covered
    let rhs = if piv.0.first().map_or(true, |c| c.is_zero()) {
        Poly(piv.0.iter().skip(1).cloned().collect()).eval(&pq)
    } else {
        return Err(Error::Domain("pivotal sum has a constant term".into()));
    };
    let gap = &lhs - &rhs;
    Ok(RussoReport {
        p,
        lhs: to_f64(&lhs),
        rhs: to_f64(&rhs),
        pivotal_sum: to_f64(&piv_p),
        gap: to_f64(&gap).abs(),
        lhs_se: None,
        rhs_se: None,
        identity: Some(identity),
    })
}

fn merge_pairs(mut a: HashMap<Vec<u32>, (u64, u64)>, b: HashMap<Vec<u32>, (u64, u64)>) -> HashMap<Vec<u32>, (u64, u64)> {
    for (k, v) in b {
        let e = a.entry(k).or_insert((0, 0));
        e.0 += v.0;
        e.1 += v.1;
    }
    a
}

fn russo_mc(curve: &LinearCurve, n: i64, p: f64, replicas: u64, seed: u64, step: f64) -> Result<RussoReport> {
    let (lo, hi) = curve.interval();
    if !(step > 0.0) || p - step < lo || p + step > hi {
        return domain(format!("finite difference at {p} with step {step} leaves [{lo}, {hi}]"));
    }
    if p <= 0.0 || replicas < 2 {
        return domain("Monte Carlo Russo check needs p > 0 and at least two replicas");
    }
    let cone = ConeBox::new(curve.base().neighborhood(), n)?;
    let mu = curve.at(p)?;
    let lo_m = curve.at(p - step)?;
    let hi_m = curve.at(p + step)?;
    let counts = par_counts(replicas, 5, seed, |s, acc| {
        let read = |m: &RatesMeasure| {
            let f = FieldSample::new(m, s);
            cone.sites().iter().map(|(x, t)| f.family_at(x, *t).clone()).collect::<Vec<_>>()
        };
        let (a, b, c) = (read(&mu), read(&lo_m), read(&hi_m));
        let piv = cone.pivotal(|i| &a[i]).count_ones() as u64;
        let ob = cone.occurs(|i| &b[i]);
        let oc = cone.occurs(|i| &c[i]);
        acc[0] += piv;
        acc[1] += piv * piv;
        acc[2] += oc as u64;
        acc[3] += ob as u64;
        acc[4] += (oc != ob) as u64;
    });
    let nf = replicas as f64;
    let mean_piv = counts[0] as f64 / nf;
    let var_piv = (counts[1] as f64 / nf - mean_piv * mean_piv).max(0.0) * nf / (nf - 1.0);
    let mean_d = (counts[2] as f64 - counts[3] as f64) / nf;
    let var_d = (counts[4] as f64 / nf - mean_d * mean_d).max(0.0) * nf / (nf - 1.0);
    let lhs = mean_d / (2.0 * step);
    let rhs = mean_piv / p;
    Ok(RussoReport {
        p,
        lhs,
        rhs,
        pivotal_sum: mean_piv,
        gap: (lhs - rhs).abs(),
        lhs_se: Some((var_d / nf).sqrt() / (2.0 * step)),
        rhs_se: Some((var_piv / nf).sqrt() / p),
        identity: None,
    })
}

/// Exact results of the exploration and variance bounds on a cone.
#[derive(Clone, Debug, PartialEq)]
pub struct OsssReport {
    pub n: i64,
    pub sites: Vec<Site>,
    pub theta_n: Q,
    pub variance: Q,
    /// `2 sum_i delta_i P(i pivotal)`.
    pub bound: Q,
    pub pass: bool,
    pub delta: Vec<Q>,
    pub pivotal: Vec<Q>,
    /// `theta_0, .., theta_{n-1}` with `theta_0 = 1`.
    pub theta: Vec<Q>,
    /// `(2/n) sum_{i<n} theta_i`.
    pub revealment_bound: Q,
    pub revealment_pass: bool,
    /// Fields on which the exploration decided wrongly (should be 0).
    pub decision_errors: u64,
}

#[derive(Clone, Debug, Default)]
struct Tally {
    occurs: u64,
    piv: Vec<u64>,
    revealed: Vec<u64>,
    errors: u64,
}

impl Tally {
    fn new(n: usize) -> Self {
        Tally {
            occurs: 0,
            piv: vec![0; n],
            revealed: vec![0; n],
            errors: 0,
        }
    }

    fn add(&mut self, o: &Tally) {
        self.occurs += o.occurs;
        self.errors += o.errors;
        for (a, b) in self.piv.iter_mut().zip(&o.piv) {
            *a += b;
        }
        for (a, b) in self.revealed.iter_mut().zip(&o.revealed) {
            *a += b;
        }
    }
}

/// Exact thetas `theta_0..theta_{n-1}`.
fn exact_thetas(measure: &RatesMeasure, n: i64) -> Result<Vec<Q>> {
    let mut th = vec![Q::one()];
    for i in 1..n {
        th.push(exhaustive_theta(measure, i)?);
    }
    Ok(th)
}

pub fn osss_inequality_check(measure: &RatesMeasure, n: i64) -> Result<OsssReport> {
    let nbhd = measure.neighborhood();
    let cone = ConeBox::new(nbhd, n)?;
    let families: Vec<UpFamily> = measure.atoms().iter().map(|(f, _)| f.clone()).collect();
    let weights: Vec<Q> = measure.atoms().iter().map(|(_, w)| w.clone()).collect();
    let m = families.len();
    let total = assignment_count(m, cone.len())?;
    let ns = cone.len();
    let stats: HashMap<Vec<u32>, Tally> = (0..total)
        .into_par_iter()
        .fold(
            || (HashMap::new(), vec![0usize; ns]),
            |(mut acc, mut a): (HashMap<Vec<u32>, Tally>, Vec<usize>), code| {
                decode(code, m, &mut a);
                let f = |i: usize| &families[a[i]];
                let e = acc.entry(counts_key(&a, m)).or_insert_with(|| Tally::new(ns));
                let occ = cone.occurs(f);
                e.occurs += occ as u64;
                let pv = cone.pivotal(f);
                for i in SiteSet(pv).iter() {
                    e.piv[i] += 1;
                }
                for k in 1..=n {
                    let (dec, rev) = cone.explore(k, &families, f);
                    if dec != occ {
                        e.errors += 1;
                    }
                    for i in rev {
                        e.revealed[i] += 1;
                    }
                }
                (acc, a)
            },
        )
        .map(|(h, _)| h)
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                a.entry(k).or_insert_with(|| Tally::new(ns)).add(&v);
            }
            a
        });
    let mut theta_n = Q::zero();
    let mut delta = vec![Q::zero(); ns];
    let mut pivotal = vec![Q::zero(); ns];
    let mut errors = 0;
    for (key, t) in &stats {
        let w = monomial(key, &weights, Q::one(), |x, y| x * y);
        theta_n += &w * qi(t.occurs as i64);
        for i in 0..ns {
            delta[i] += &w * qi(t.revealed[i] as i64);
            pivotal[i] += &w * qi(t.piv[i] as i64);
        }
        errors += t.errors;
    }
    let nq = qi(n);
    for d in delta.iter_mut() {
        *d /= &nq;
    }
    let variance = &theta_n * (Q::one() - &theta_n);
    let bound: Q = delta.iter().zip(&pivotal).map(|(d, p)| d * p).sum::<Q>() * qi(2);
    let theta = exact_thetas(measure, n)?;
    let revealment_bound = theta.iter().sum::<Q>() * qi(2) / &nq;
    Ok(OsssReport {
        n,
        sites: cone.sites().to_vec(),
        pass: variance <= bound,
        revealment_pass: delta.iter().all(|d| *d <= revealment_bound),
        theta_n,
        variance,
        bound,
        delta,
        pivotal,
        theta,
        revealment_bound,
        decision_errors: errors,
    })
}

/// Monte Carlo revealment frequencies with the bound `(2/n) sum theta_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct RevealmentProfile {
    pub n: i64,
    pub sites: Vec<Site>,
    pub delta: Vec<Estimate>,
    pub bound: f64,
    /// Zero when the thetas are exact.
    pub bound_se: f64,
    /// Per site: `delta - 4 se <= bound + 4 bound_se`.
    pub pass: Vec<bool>,
}

pub fn revealment_estimate(measure: &RatesMeasure, n: i64, replicas: u64, seed: u64) -> Result<RevealmentProfile> {
    if replicas == 0 {
        return domain("replicas must be positive");
    }
    let cone = ConeBox::new(measure.neighborhood(), n)?;
    let support: Vec<UpFamily> = measure.atoms().iter().map(|(f, _)| f.clone()).collect();
    let ns = cone.len();
    let counts = par_counts(replicas, ns, seed, |s, acc| {
        let f = FieldSample::new(measure, s);
        let fams: Vec<&UpFamily> = cone.sites().iter().map(|(x, t)| f.family_at(x, *t)).collect();
        let k = 1 + ((to_unit(mix(s ^ 0x6b5f_ca31)) * n as f64) as i64).min(n - 1);
        let (_, rev) = cone.explore(k, &support, |i| fams[i]);
        for i in rev {
            acc[i] += 1;
        }
    });
    let delta: Vec<Estimate> = counts.into_iter().map(|h| Estimate::from_counts(h, replicas)).collect();
    let (bound, bound_se) = match exact_thetas(measure, n) {
        Ok(th) => (2.0 * th.iter().map(to_f64).sum::<f64>() / n as f64, 0.0),
        Err(Error::Capacity { .. }) => {
            let c = theta_curve(measure, n - 1, replicas, replica_seed(seed, u64::MAX))?;
            let s: f64 = 1.0 + c[1..].iter().map(|e| e.mean).sum::<f64>();
            let v: f64 = c[1..].iter().map(|e| e.stderr * e.stderr).sum();
            (2.0 * s / n as f64, 2.0 * v.sqrt() / n as f64)
        }
        Err(e) => return Err(e),
    };
    let pass = delta.iter().map(|d| d.mean - 4.0 * d.stderr <= bound + 4.0 * bound_se).collect();
    Ok(RevealmentProfile {
        n,
        sites: cone.sites().to_vec(),
        delta,
        bound,
        bound_se,
        pass,
    })
}

/// Scan over all pairs of fields differing at one site.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PivotalDifferenceReport {
    pub pairs: u64,
    /// Pairs whose indicators differ.
    pub gap_pairs: u64,
    pub violations: u64,
    /// Pairs where a larger family at one site turned the event off.
    pub monotone_violations: u64,
    /// First pair with indicator gap 1: `(lower field, upper field, site)` as atom indices.
    pub example_gap: Option<(Vec<usize>, Vec<usize>, usize)>,
}

impl PivotalDifferenceReport {
    pub fn passes(&self) -> bool {
        self.violations == 0 && self.monotone_violations == 0
    }
}

pub fn pivotal_difference_check(measure: &RatesMeasure, n: i64) -> Result<PivotalDifferenceReport> {
    let cone = ConeBox::new(measure.neighborhood(), n)?;
    let families: Vec<UpFamily> = measure.atoms().iter().map(|(f, _)| f.clone()).collect();
    let m = families.len();
    let ns = cone.len();
    let total = assignment_count(m, ns)?;
    let table: Vec<(bool, u64)> = (0..total)
        .into_par_iter()
        .map_init(
            || vec![0usize; ns],
            |a, code| {
                decode(code, m, a);
                let f = |i: usize| &families[a[i]];
                (cone.occurs(f), cone.pivotal(f))
            },
        )
        .collect();
    let pow: Vec<u64> = (0..ns).map(|i| (m as u64).pow(i as u32)).collect();
    let subfamily: Vec<Vec<bool>> = families.iter().map(|f| families.iter().map(|g| f.is_subfamily(g)).collect()).collect();
    let out = (0..total)
        .into_par_iter()
        .map(|code| {
            let mut r = PivotalDifferenceReport {
                pairs: 0,
                gap_pairs: 0,
                violations: 0,
                monotone_violations: 0,
                example_gap: None,
            };
            let (oa, pa) = table[code as usize];
            for i in 0..ns {
                let ai = (code / pow[i] % m as u64) as usize;
                for b in ai + 1..m {
                    let other = code + (b - ai) as u64 * pow[i];
                    let (ob, pb) = table[other as usize];
                    r.pairs += 1;
                    let lhs = (oa != ob) as u64;
                    let rhs = (pa >> i & 1) + (pb >> i & 1);
                    if lhs > rhs {
                        r.violations += 1;
                    }
                    if (subfamily[ai][b] && oa && !ob) || (subfamily[b][ai] && ob && !oa) {
                        r.monotone_violations += 1;
                    }
                    if lhs == 1 {
                        r.gap_pairs += 1;
                        if r.example_gap.is_none() {
                            let mut x = vec![0; ns];
                            let mut y = vec![0; ns];
                            decode(code, m, &mut x);
                            decode(other, m, &mut y);
                            r.example_gap = Some(if oa { (y, x, i) } else { (x, y, i) });
                        }
                    }
                }
            }
            r
        })
        .reduce(
            || PivotalDifferenceReport {
                pairs: 0,
                gap_pairs: 0,
                violations: 0,
                monotone_violations: 0,
                example_gap: None,
            },
            |a, b| PivotalDifferenceReport {
                pairs: a.pairs + b.pairs,
                gap_pairs: a.gap_pairs + b.gap_pairs,
                violations: a.violations + b.violations,
                monotone_violations: a.monotone_violations + b.monotone_violations,
                example_gap: a.example_gap.or(b.example_gap),
            },
        );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{q, Prob};
    use crate::field::{ExplicitField, Field};
    use crate::rates::{osp, toom_with_death, with_death};
    use crate::upset::{make_upfamily, upfamily_from_sites};
    use proptest::prelude::*;

    fn osp_at(p: f64) -> RatesMeasure {
        osp(&Prob::from_f64(p).unwrap())
    }

    fn path(n: Neighborhood) -> UpFamily {
        upfamily_from_sites(n, &[vec![vec![-1, -1]], vec![vec![1, -1]]]).unwrap()
    }

    /// A field with the given family at the listed sites and deaths elsewhere.
    fn explicit(cone: &ConeBox, alive: &[Site], fam: &UpFamily) -> Vec<UpFamily> {
        let e = UpFamily::empty(fam.neighborhood());
        cone.sites().iter().map(|s| if alive.contains(s) { fam.clone() } else { e.clone() }).collect()
    }

    #[test]
    fn cone_shape() {
        let n = Neighborhood::new(1, 1, true).unwrap();
        let c = ConeBox::new(n, 2).unwrap();
        assert_eq!(c.sites(), &[(vec![-1], 1), (vec![0], 1), (vec![1], 1), (vec![0], 2)]);
        let c = ConeBox::new(Neighborhood::new(2, 1, true).unwrap(), 2).unwrap();
        assert_eq!(c.len(), 10);
    }

    #[test]
    fn pivotal_examples() {
        let nb = Neighborhood::new(1, 1, true).unwrap();
        let c = ConeBox::new(nb, 1).unwrap();
        let f = explicit(&c, &[(vec![0], 1)], &path(nb));
        assert_eq!(c.pivotal(|i| &f[i]), 1);
        let f = explicit(&c, &[], &path(nb));
        assert_eq!(c.pivotal(|i| &f[i]), 0);
        let c = ConeBox::new(nb, 3).unwrap();
        let om = UpFamily::omega(nb);
        let all: Vec<UpFamily> = vec![om; c.len()];
        let pv = c.pivotal(|i| &all[i]);
        assert!(SiteSet(pv).iter().any(|i| c.sites()[i] == (vec![0], 3)));
        // seeded field: pivotal sites are a subset of the cone and need occurrence
        let mu = osp_at(0.8);
        for s in 0..20 {
            let r = pivotal_sites(&mu, &FieldSample::new(&mu, s), 3).unwrap();
            assert!(r.occurs || r.pivotal.is_empty());
        }
    }

    #[test]
    fn russo_exhaustive_examples() {
        let base = osp_at(1.0);
        let r = russo_check(&base, 2, 0.5, Mode::Exhaustive).unwrap();
        assert!((r.lhs - 1.25).abs() < 1e-12 && (r.rhs - 1.25).abs() < 1e-12, "{r:?}");
        assert!((r.pivotal_sum - 0.625).abs() < 1e-12);
        assert_eq!(r.identity, Some(true));
        assert!(r.passes());
        for p in [0.0, 0.3, 0.7, 1.0] {
            let r = russo_check(&base, 2, p, Mode::Exhaustive).unwrap();
            assert!(r.gap < 1e-12 && r.identity == Some(true));
            let want = 4.0 * p - 3.0 * p * p;
            assert!((r.lhs - want).abs() < 1e-12);
        }
        let r = russo_check(&base, 1, 0.4, Mode::Exhaustive).unwrap();
        assert!((r.lhs - 1.0).abs() < 1e-12 && (r.rhs - 1.0).abs() < 1e-12);
        let dead = RatesMeasure::dirac(UpFamily::empty(Neighborhood::new(1, 1, true).unwrap()));
        let r = russo_check(&dead, 2, 0.5, Mode::Exhaustive).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        // a base with its own death weight and a memory neighborhood
        let n2 = Neighborhood::new(1, 2, false).unwrap();
        let u = upfamily_from_sites(n2, &[vec![vec![-1, -1]], vec![vec![0, -2], vec![1, -2]]]).unwrap();
        let b = with_death(&RatesMeasure::dirac(u), &Prob::new(q(3, 4)).unwrap());
        let r = russo_check(&b, 2, 1.1, Mode::Exhaustive).unwrap();
        assert!(r.passes(), "{r:?}");
    }

    #[test]
    fn russo_mc_agrees() {
        let r = russo_check(&osp_at(1.0), 4, 0.6, Mode::MonteCarlo { replicas: 200_000, seed: 11, step: 0.02 }).unwrap();
        assert!(r.passes(), "{r:?}");
        let ex = russo_check(&osp_at(1.0), 4, 0.6, Mode::Exhaustive).unwrap();
        assert!((r.rhs - ex.rhs).abs() < 4.0 * r.rhs_se.unwrap());
        assert!(russo_check(&osp_at(1.0), 2, 0.99, Mode::MonteCarlo { replicas: 10, seed: 1, step: 0.02 }).is_err());
    }

    #[test]
    fn explore_examples() {
        let mu = osp_at(0.5);
        let nb = mu.neighborhood();
        let support: Vec<UpFamily> = mu.atoms().iter().map(|(f, _)| f.clone()).collect();
        let c = ConeBox::new(nb, 4).unwrap();
        let dead = explicit(&c, &[], &path(nb));
        for k in 1..=4 {
            let (d, rev) = c.explore(k, &support, |i| &dead[i]);
            assert!(!d);
            assert!(rev.iter().all(|&i| c.sites()[i].1 == k), "k={k}");
            assert_eq!(rev.len(), c.sites().iter().filter(|s| s.1 == k).count());
        }
        let om = Neighborhood::new(1, 1, true).unwrap();
        let omega = RatesMeasure::dirac(UpFamily::omega(om));
        let f = FieldSample::new(&omega, 3);
        let (d, rev) = osss_explore(&omega, &f, 3, 2).unwrap();
        assert!(d);
        assert_eq!(rev.len(), ConeBox::new(om, 3).unwrap().len());
        assert!(osss_explore(&omega, &f, 3, 4).is_err());
    }

    #[test]
    fn explore_decides_exactly() {
        // every assignment on the cone, every k
        for mu in [osp_at(0.5), toom_with_death(&Prob::new(q(1, 2)).unwrap())] {
            let r = osss_inequality_check(&mu, 2).unwrap();
            assert_eq!(r.decision_errors, 0);
        }
        let mu = osp_at(0.5);
        let r = osss_inequality_check(&mu, 3).unwrap();
        assert_eq!(r.decision_errors, 0);
        assert!(r.pass && r.revealment_pass);
    }

    #[test]
    fn osss_exact_values() {
        let r = osss_inequality_check(&osp_at(0.5), 2).unwrap();
        assert_eq!(r.theta_n, q(3, 8));
        assert_eq!(r.variance, q(15, 64));
        assert!(r.pass);
        assert_eq!(r.theta, vec![q(1, 1), q(1, 2)]);
        assert_eq!(r.revealment_bound, q(3, 2));
        assert!(r.revealment_pass);
        let det = RatesMeasure::dirac(path(Neighborhood::new(1, 1, true).unwrap()));
        let r = osss_inequality_check(&det, 3).unwrap();
        assert!(r.variance.is_zero() && r.pass);
        let r = osss_inequality_check(&osp_at(1.0), 2).unwrap();
        assert!(r.variance.is_zero());
    }

    #[test]
    fn revealment_mc() {
        let dead = RatesMeasure::dirac(UpFamily::empty(Neighborhood::new(1, 1, true).unwrap()));
        let r = revealment_estimate(&dead, 5, 1000, 1).unwrap();
        assert!(r.delta.iter().all(|d| d.mean <= 2.0 / 5.0));
        assert!((r.bound - 0.4).abs() < 1e-12);
        let r = revealment_estimate(&osp_at(0.5), 1, 100, 1).unwrap();
        assert_eq!(r.bound, 2.0);
        let r = revealment_estimate(&osp_at(0.5), 2, 100_000, 5).unwrap();
        assert!(r.pass.iter().all(|v| *v));
        let ex = osss_inequality_check(&osp_at(0.5), 2).unwrap();
        for (e, d) in r.delta.iter().zip(&ex.delta) {
            assert!((e.mean - to_f64(d)).abs() <= 4.0 * e.stderr + 1e-9, "{e:?} vs {d}");
        }
    }

    #[test]
    fn pivotal_difference() {
        let r = pivotal_difference_check(&osp_at(0.5), 2).unwrap();
        assert!(r.passes());
        assert_eq!(r.pairs, 16 * 4 / 2);
        let (lo, hi, i) = r.example_gap.unwrap();
        let nb = Neighborhood::new(1, 1, true).unwrap();
        let c = ConeBox::new(nb, 2).unwrap();
        let fams: Vec<UpFamily> = osp_at(0.5).atoms().iter().map(|(f, _)| f.clone()).collect();
        assert!(!c.occurs(|j| &fams[lo[j]]) && c.occurs(|j| &fams[hi[j]]));
        assert!(c.pivotal(|j| &fams[hi[j]]) >> i & 1 == 1);
        let t = pivotal_difference_check(&toom_with_death(&Prob::new(q(1, 2)).unwrap()), 2).unwrap();
        assert!(t.passes());
    }

    fn measure_strategy() -> impl Strategy<Value = RatesMeasure> {
        let nb = Neighborhood::new(1, 1, true).unwrap();
        let gens = proptest::collection::vec(1u64..8, 0..3);
        (gens.clone(), gens, 1i64..4).prop_map(move |(a, b, k)| {
            let fa = make_upfamily(nb, &a.into_iter().map(SiteSet).collect::<Vec<_>>()).unwrap();
            let fb = make_upfamily(nb, &b.into_iter().map(SiteSet).collect::<Vec<_>>()).unwrap();
            RatesMeasure::new(nb, vec![(fa, q(k, 4)), (fb, q(3 - k, 8)), (UpFamily::empty(nb), q(5 - k, 8))]).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn audit_invariants(mu in measure_strategy(), n in 1i64..4) {
            let r = osss_inequality_check(&mu, n).unwrap();
            prop_assert_eq!(r.decision_errors, 0);
            prop_assert!(r.pass);
            prop_assert!(r.revealment_pass);
            prop_assert!(r.delta.iter().all(|d| *d >= Q::zero() && *d <= Q::one()));
            let d = pivotal_difference_check(&mu, n).unwrap();
            prop_assert!(d.passes());
        }

        #[test]
        fn russo_on_random_bases(mu in measure_strategy(), k in 1i64..10) {
            let top = LinearCurve::full(mu.clone()).interval().1;
            let r = russo_check(&mu, 2, top * k as f64 / 10.0, Mode::Exhaustive).unwrap();
            prop_assert!(r.passes());
        }
    }

    #[test]
    fn explicit_field_matches_cone() {
        // the cone evaluator agrees with the bit-packed engine
        let mu = osp_at(0.6);
        let cone = ConeBox::new(mu.neighborhood(), 3).unwrap();
        let fams: Vec<UpFamily> = mu.atoms().iter().map(|(f, _)| f.clone()).collect();
        for code in 0..(1u64 << cone.len()) {
            let mut a = vec![0; cone.len()];
            decode(code, 2, &mut a);
            let w = Window::centered(1, 3);
            let mut ef = ExplicitField::new(w.clone(), 1, 3, 2, 0);
            for (i, (x, t)) in cone.sites().iter().enumerate() {
                ef.set(x, *t, a[i]);
            }
            let init = crate::pca::Configuration::ones(&mu.neighborhood(), w, crate::pca::Boundary::AllOne).unwrap();
            let tr = crate::pca::simulate_with(&crate::pca::Rule::for_measure(&mu), &ef, &init, 3).unwrap();
            assert_eq!(tr.get(&[0], 3), cone.occurs(|i| &fams[a[i]]));
            assert_eq!(ef.atom_count(), 2);
        }
    }
}
