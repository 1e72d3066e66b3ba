//! The map between attractive CA on `Z^d` and bootstrap percolation on
//! `Z^(d+1)`, its random version, and trajectory-level checks.

use rayon::prelude::*;

use crate::bp::{closure_with, bp_step_with, BPState, BpBoundary, Face, FamilyMeasure, UpdateFamily};
use crate::error::{domain, Error, Result};
use crate::field::{ExplicitField, Field, FieldSample};
use crate::lattice::Window;
use crate::pca::{simulate_with, Boundary, Configuration, Rule, Trajectory};
use crate::rates::RatesMeasure;
use crate::upset::{complement_dual, make_upfamily, Neighborhood, UpFamily};

/// Limit on the number of explicit fields enumerated by the exhaustive check.
pub const EXHAUSTIVE_FIELDS_CAP: u64 = 1 << 22;

/// BP update family of an up-family: complements of its maximal non-members.
pub fn ca_to_bp(u: &UpFamily) -> Result<UpdateFamily> {
    let nbhd = u.neighborhood();
    let sets = complement_dual(u)?.into_iter().map(|s| nbhd.sites_of(s)).collect();
    UpdateFamily::new(nbhd.d + 1, sets)
}

fn half_space_sites(x: &UpdateFamily) -> Result<Vec<&Vec<i64>>> {
    if x.dim() == 0 {
        return domain("a BP family for a CA needs dimension at least 1");
    }
    let sites: Vec<&Vec<i64>> = x.sets().iter().flatten().collect();
    if let Some(v) = sites.iter().find(|v| *v.last().unwrap() >= 0) {
        return Err(Error::NotHalfSpace(format!("site {v:?} has time coordinate >= 0")));
    }
    Ok(sites)
}

/// Smallest neighborhood whose sites cover every set of `x`.
pub fn infer_neighborhood(x: &UpdateFamily) -> Result<Neighborhood> {
    let sites = half_space_sites(x)?;
    let d = x.dim() - 1;
    let mut r = 1;
    let mut memoryless = true;
    for v in &sites {
        let t = -v[d];
        if t > 1 {
            memoryless = false;
        }
        r = r.max(t);
        r = v[..d].iter().fold(r, |a, c| a.max(c.abs()));
    }
    Neighborhood::new(d, r, memoryless)
}

/// Inverse of [`ca_to_bp`] on a given neighborhood.
pub fn bp_to_ca_in(x: &UpdateFamily, nbhd: Neighborhood) -> Result<UpFamily> {
    half_space_sites(x)?;
    if x.dim() != nbhd.d + 1 {
        return domain("family dimension must be the neighborhood dimension plus one");
    }
    let mut sets = Vec::with_capacity(x.sets().len());
    for s in x.sets() {
        if let Some(v) = s.iter().find(|v| nbhd.index_of(v).is_none()) {
            return domain(format!("site {v:?} outside the neighborhood"));
        }
        sets.push(nbhd.set_of(s)?);
    }
    let up = make_upfamily(nbhd, &sets)?;
    make_upfamily(nbhd, &complement_dual(&up)?)
}

/// Inverse of [`ca_to_bp`] on the smallest neighborhood covering `x`.
pub fn bp_to_ca(x: &UpdateFamily) -> Result<(Neighborhood, UpFamily)> {
    let nbhd = infer_neighborhood(x)?;
    Ok((nbhd, bp_to_ca_in(x, nbhd)?))
}

/// The same rule read on a larger neighborhood.
pub fn lift(u: &UpFamily, nbhd: Neighborhood) -> Result<UpFamily> {
    let from = u.neighborhood();
    let mut gens = Vec::new();
    for m in u.minimal_sets() {
        gens.push(nbhd.set_of(&from.sites_of(*m))?);
    }
    if u.is_empty_family() {
        return Ok(UpFamily::empty(nbhd));
    }
    make_upfamily(nbhd, &gens)
}

/// A BP family read as a freezing CA: a site is 1 if it was 1 or some set was fully 1.
pub fn bp_as_ca(x: &UpdateFamily) -> Result<UpFamily> {
    let d = x.dim();
    let nbhd = Neighborhood::new(d, x.range().max(1), true)?;
    let mut gens = vec![nbhd.self_site()];
    for s in x.sets() {
        let sites: Vec<Vec<i64>> = s.iter().map(|v| v.iter().copied().chain([-1]).collect()).collect();
        gens.push(nbhd.set_of(&sites)?);
    }
    make_upfamily(nbhd, &gens)
}

/// Atomwise image of a rates measure.
pub fn pca_to_inhom_bp(mu: &RatesMeasure) -> Result<FamilyMeasure> {
    let atoms = mu
        .atoms()
        .iter()
        .map(|(u, w)| Ok((ca_to_bp(u)?, w.clone())))
        .collect::<Result<Vec<_>>>()?;
    FamilyMeasure::new(mu.neighborhood().d + 1, atoms)
}

fn det(m: &[Vec<i64>]) -> i128 {
    let n = m.len();
    match n {
        0 => 1,
        1 => m[0][0] as i128,
        _ => (0..n)
            .map(|j| {
                let minor: Vec<Vec<i64>> = m[1..]
                    .iter()
                    .map(|row| row.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, v)| *v).collect())
                    .collect();
                let s = if j % 2 == 0 { 1 } else { -1 };
                s * m[0][j] as i128 * det(&minor)
            })
            .sum(),
    }
}

/// An integer matrix with determinant ±1 acting on `Z^D`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Unimodular {
    pub rows: Vec<Vec<i64>>,
}

impl Unimodular {
    pub fn new(rows: Vec<Vec<i64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return domain("matrix must be square");
        }
        if det(&rows).abs() != 1 {
            return domain(format!("determinant {} is not +-1", det(&rows)));
        }
        Ok(Unimodular { rows })
    }

    pub fn identity(n: usize) -> Self {
        Unimodular {
            rows: (0..n).map(|i| (0..n).map(|j| (i == j) as i64).collect()).collect(),
        }
    }

    pub fn apply_vec(&self, v: &[i64]) -> Vec<i64> {
        self.rows.iter().map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn apply(&self, x: &UpdateFamily) -> Result<UpdateFamily> {
        if x.dim() != self.rows.len() {
            return domain("matrix size differs from the family dimension");
        }
        let sets = x.sets().iter().map(|s| s.iter().map(|v| self.apply_vec(v)).collect()).collect();
        UpdateFamily::new(x.dim(), sets)
    }
}

/// A matrix with entries in `[-bound, bound]` mapping `from` onto `to`, if any.
pub fn find_unimodular(from: &UpdateFamily, to: &UpdateFamily, bound: i64) -> Option<Unimodular> {
    let n = from.dim();
    if to.dim() != n || from.sets().len() != to.sets().len() {
        return None;
    }
    let mut src: Vec<&Vec<i64>> = from.sets().iter().flatten().collect();
    src.sort();
    src.dedup();
    let mut dst: Vec<&Vec<i64>> = to.sets().iter().flatten().collect();
    dst.sort();
    dst.dedup();
    if src.len() != dst.len() {
        return None;
    }
    if src.is_empty() {
        return (from == to).then(|| Unimodular::identity(n));
    }
    // every source site must land on a target site, so each row sends the
    // sources into the target's coordinate values
    let side = (2 * bound + 1) as usize;
    let all_rows: Vec<Vec<i64>> = (0..side.pow(n as u32))
        .map(|mut k| {
            (0..n)
                .map(|_| {
                    let c = (k % side) as i64 - bound;
                    k /= side;
                    c
                })
                .collect()
        })
        .collect();
    let cands: Vec<Vec<&Vec<i64>>> = (0..n)
        .map(|i| {
            all_rows
                .iter()
                .filter(|r| {
                    src.iter().all(|v| {
                        let val: i64 = r.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                        dst.iter().any(|w| w[i] == val)
                    })
                })
                .collect()
        })
        .collect();
    let mut pick = vec![0usize; n];
    if cands.iter().any(|c| c.is_empty()) {
        return None;
    }
    loop {
        let rows: Vec<Vec<i64>> = (0..n).map(|i| cands[i][pick[i]].clone()).collect();
        if let Ok(m) = Unimodular::new(rows) {
            if m.apply(from).ok().as_ref() == Some(to) {
                return Some(m);
            }
        }
        let mut i = 0;
        loop {
            if i == n {
                return None;
            }
            pick[i] += 1;
            if pick[i] < cands[i].len() {
                break;
            }
            pick[i] = 0;
            i += 1;
        }
    }
}

/// A rates measure together with the BP image of each atom, in atom order.
#[derive(Clone, Debug)]
pub struct CorrespondencePair {
    pub measure: RatesMeasure,
    pub families: Vec<UpdateFamily>,
    pub chi: FamilyMeasure,
}

impl CorrespondencePair {
    pub fn new(measure: RatesMeasure) -> Result<Self> {
        let families = measure.atoms().iter().map(|(u, _)| ca_to_bp(u)).collect::<Result<Vec<_>>>()?;
        let chi = pca_to_inhom_bp(&measure)?;
        Ok(CorrespondencePair { measure, families, chi })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MismatchKind {
    /// PCA state differs from the complement of the closure.
    Complement,
    /// A BP site infected after `steps` steps while the PCA site is 1.
    OneSided { steps: i64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mismatch {
    /// Seed, or assignment index in exhaustive mode.
    pub instance: u64,
    pub x: Vec<i64>,
    pub t: i64,
    pub kind: MismatchKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EquivalenceReport {
    pub instances: u64,
    /// Cells compared for the complement identity.
    pub cells: u64,
    /// Cells compared for the one-sided bound.
    pub bound_cells: u64,
    pub mismatch: Option<Mismatch>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.mismatch.is_none()
    }
}

impl std::fmt::Display for EquivalenceReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "instances: {}", self.instances)?;
        writeln!(f, "cells: {}", self.cells)?;
        writeln!(f, "bound_cells: {}", self.bound_cells)?;
        match &self.mismatch {
            None => write!(f, "result: pass"),
            Some(m) => write!(f, "result: fail\nfirst_mismatch: instance={} x={:?} t={} kind={:?}", m.instance, m.x, m.t, m.kind),
        }
    }
}

fn block(window: &Window, t_lo: i64, t_hi: i64) -> Window {
    let mut lo = window.lo.clone();
    let mut hi = window.hi.clone();
    lo.push(t_lo);
    hi.push(t_hi);
    Window { lo, hi }
}

fn with_time(x: &[i64], t: i64) -> Vec<i64> {
    x.iter().copied().chain([t]).collect()
}

/// Checks one field; returns the first failure and the cell counts.
fn check_field<F: Field>(pair: &CorrespondencePair, rule: &Rule, field: &F, window: &Window, t_max: i64) -> Result<(Option<(Vec<i64>, i64, MismatchKind)>, u64, u64)> {
    let nbhd = pair.measure.neighborhood();
    let d = nbhd.d;
    let depth = nbhd.depth();
    let init = Configuration::ones(&nbhd, window.clone(), Boundary::AllZero)?;
    let traj: Trajectory = simulate_with(rule, field, &init, t_max)?;

    let bw = block(window, 1 - depth, t_max);
    let mut faces = vec![(Face::Infected, Face::Infected); d];
    faces.push((Face::Healthy, Face::Healthy));
    let boundary = BpBoundary { faces };
    let k = pair.families.len();
    let dead: Vec<bool> = pair.measure.atoms().iter().map(|(u, _)| u.is_empty_family()).collect();
    let mut fams = pair.families.clone();
    fams.push(UpdateFamily::empty(d + 1));
    let split = |p: &[i64]| (p[..d].to_vec(), p[d]);

    // identity: the closure is the zero set of the PCA started from the slab
    let atom = |p: &[i64]| {
        let (x, t) = split(p);
        if t < 1 {
            k
        } else {
            field.atom_at(&x, t)
        }
    };
    let mut st = BPState::healthy(bw.clone(), boundary.clone());
    for (i, p) in bw.points().iter().enumerate() {
        let (x, t) = split(p);
        st.infected[i] = if t < 1 { !init.get(&x, t - 1) } else { dead[field.atom_at(&x, t)] };
    }
    let cl = closure_with(&st, &fams, &atom)?;
    let mut cells = 0;
    for t in 1..=t_max {
        for x in window.points() {
            cells += 1;
            if traj.get(&x, t) == cl.get(&with_time(&x, t)) {
                return Ok((Some((x, t, MismatchKind::Complement)), cells, 0));
            }
        }
    }

    // one-sided bound: every block site carries its own family
    let atom_all = |p: &[i64]| {
        let (x, t) = split(p);
        field.atom_at(&x, t)
    };
    let mut om = BPState::healthy(bw.clone(), boundary);
    for (i, p) in bw.points().iter().enumerate() {
        om.infected[i] = dead[atom_all(p)];
    }
    let mut bound_cells = 0;
    let mut steps = 0;
    while depth * steps < t_max {
        for s in depth * steps + 1..=t_max {
            for x in window.points() {
                bound_cells += 1;
                if om.get(&with_time(&x, s)) && traj.get(&x, s) {
                    return Ok((Some((x, s, MismatchKind::OneSided { steps })), cells, bound_cells));
                }
            }
        }
        om = bp_step_with(&om, &fams[..k], &atom_all)?;
        steps += 1;
    }
    Ok((None, cells, bound_cells))
}

fn merge(results: Vec<(u64, Option<(Vec<i64>, i64, MismatchKind)>, u64, u64)>) -> EquivalenceReport {
    let mut r = EquivalenceReport {
        instances: results.len() as u64,
        cells: 0,
        bound_cells: 0,
        mismatch: None,
    };
    for (inst, m, c, b) in results {
        r.cells += c;
        r.bound_cells += b;
        if r.mismatch.is_none() {
            if let Some((x, t, kind)) = m {
                r.mismatch = Some(Mismatch { instance: inst, x, t, kind });
            }
        }
    }
    r
}

fn check_window(pair: &CorrespondencePair, window: &Window, t_max: i64) -> Result<()> {
    if window.dim() != pair.measure.neighborhood().d {
        return domain("window dimension differs from the neighborhood");
    }
    if t_max < 1 {
        return domain("horizon must be at least 1");
    }
    Ok(())
}

/// Runs both engines on fields drawn from `seeds` and compares them cell by cell.
pub fn verify_equivalence(pair: &CorrespondencePair, window: &Window, t_max: i64, seeds: &[u64]) -> Result<EquivalenceReport> {
    check_window(pair, window, t_max)?;
    let rule = Rule::for_measure(&pair.measure);
    let results = seeds
        .par_iter()
        .map(|&s| {
            let field = FieldSample::new(&pair.measure, s);
            let (m, c, b) = check_field(pair, &rule, &field, window, t_max)?;
            Ok((s, m, c, b))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(merge(results))
}

/// Same comparison over every assignment of atoms to the block
/// `window x {1-depth..=t_max}`.
pub fn verify_equivalence_exhaustive(pair: &CorrespondencePair, window: &Window, t_max: i64) -> Result<EquivalenceReport> {
    check_window(pair, window, t_max)?;
    let depth = pair.measure.neighborhood().depth();
    let atoms = pair.measure.atoms().len() as u64;
    let cells = window.volume() as u32 * (t_max + depth) as u32;
    let total = atoms.checked_pow(cells).filter(|&n| n <= EXHAUSTIVE_FIELDS_CAP).ok_or_else(|| Error::Capacity {
        what: "field assignments".into(),
        needed: atoms.saturating_pow(cells) as usize,
        limit: EXHAUSTIVE_FIELDS_CAP as usize,
    })?;
    let rule = Rule::for_measure(&pair.measure);
    let points = window.points();
    let results = (0..total)
        .into_par_iter()
        .map(|code| {
            let mut field = ExplicitField::new(window.clone(), 1 - depth, t_max, atoms as usize, 0);
            let mut c = code;
            for t in 1 - depth..=t_max {
                for x in &points {
                    field.set(x, t, (c % atoms) as usize);
                    c /= atoms;
                }
            }
            let (m, cc, b) = check_field(pair, &rule, &field, window, t_max)?;
            Ok((code, m, cc, b))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(merge(results))
}
