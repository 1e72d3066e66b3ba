//! Stable and unstable directions, half-space certificates, BP
//! classification and eroder checks.

use std::cmp::Ordering;
use std::collections::HashMap;

use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;

use crate::bp::{bp_step, BPState, BpBoundary, UpdateFamily};
use crate::correspondence::ca_to_bp;
use crate::error::{domain, Error, Result};
use crate::exact::{qi, Q};
use crate::field::FieldSample;
use crate::lattice::Window;
use crate::pca::{simulate_with, Boundary, Configuration, Rule};
use crate::rates::RatesMeasure;
use crate::upset::{upfamily_from_sites, Neighborhood, UpFamily};

/// A direction in the plane, stored as a primitive integer vector.
pub type Dir = [i64; 2];

fn cross(a: Dir, b: Dir) -> i64 {
    a[0] * b[1] - a[1] * b[0]
}

fn dot(a: Dir, b: Dir) -> i64 {
    a[0] * b[0] + a[1] * b[1]
}

fn neg(a: Dir) -> Dir {
    [-a[0], -a[1]]
}

pub fn primitive(v: Dir) -> Dir {
    let g = v[0].gcd(&v[1]);
    if g == 0 {
        v
    } else {
        [v[0] / g, v[1] / g]
    }
}

fn half(a: Dir) -> u8 {
    if a[1] > 0 || (a[1] == 0 && a[0] > 0) {
        0
    } else {
        1
    }
}

/// Angular order starting from `(1,0)`, counterclockwise.
pub fn angle_cmp(a: Dir, b: Dir) -> Ordering {
    half(a).cmp(&half(b)).then_with(|| 0.cmp(&cross(a, b)))
}

/// Whether the open counterclockwise arc from `a` to `b` spans at least a half turn.
fn at_least_half_turn(a: Dir, b: Dir) -> bool {
    a == b || cross(a, b) < 0 || (cross(a, b) == 0 && dot(a, b) < 0)
}

/// A direction strictly inside the open counterclockwise arc from `a` to `b`.
fn inside(a: Dir, b: Dir) -> Dir {
    if a == b {
        return neg(a);
    }
    let c = cross(a, b);
    if c > 0 {
        primitive([a[0] + b[0], a[1] + b[1]])
    } else if c == 0 {
        [-a[1], a[0]]
    } else {
        primitive([-(a[0] + b[0]), -(a[1] + b[1])])
    }
}

/// An open counterclockwise arc of the unit circle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Arc {
    pub from: Dir,
    pub to: Dir,
}

/// A union of disjoint open arcs, or the full circle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArcSet {
    pub full: bool,
    pub arcs: Vec<Arc>,
}

impl ArcSet {
    pub fn empty() -> Self {
        ArcSet { full: false, arcs: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        !self.full && self.arcs.is_empty()
    }

    pub fn contains(&self, u: Dir) -> bool {
        let u = primitive(u);
        self.full || self.arcs.iter().any(|a| ccw_open_contains(a, u))
    }
}

fn ccw_open_contains(a: &Arc, u: Dir) -> bool {
    if u == a.from || u == a.to {
        return false;
    }
    if a.from == a.to {
        return true;
    }
    ccw_rank(a.from, u) < ccw_rank(a.from, a.to)
}

/// Exact comparison key for the counterclockwise angle from `base` to `v`.
fn ccw_rank(base: Dir, v: Dir) -> (u8, Frac) {
    let c = cross(base, v);
    let d = dot(base, v);
    if c > 0 || (c == 0 && d > 0) {
        (0, Frac(-d, c.max(0)))
    } else {
        (1, Frac(d, -c))
    }
}

/// `num / den` with `den >= 0`, where `den == 0` is the end of the half turn.
#[derive(Clone, Copy, Debug)]
struct Frac(i64, i64);

impl PartialEq for Frac {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Frac {}
impl PartialOrd for Frac {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Frac {
    fn cmp(&self, o: &Self) -> Ordering {
        // -cot grows with the angle on (0, pi); den 0 with num < 0 is angle 0
        match (self.1 == 0, o.1 == 0) {
            (true, true) => self.0.signum().cmp(&o.0.signum()),
            (true, false) => {
                if self.0 < 0 {
                    Ordering::Less
                } else {
                    Ordering::Greater
                }
            }
            (false, true) => o.cmp(self).reverse(),
            (false, false) => ((self.0 as i128) * (o.1 as i128)).cmp(&((o.0 as i128) * (self.1 as i128))),
        }
    }
}

/// Whether `u` is unstable: some set lies in the open half-plane `<u, x> < 0`.
pub fn is_unstable(x: &UpdateFamily, u: Dir) -> bool {
    x.sets().iter().any(|s| s.iter().all(|v| u[0] * v[0] + u[1] * v[1] < 0))
}

/// The circle cut at every direction where some site is orthogonal.
struct Partition {
    crit: Vec<Dir>,
    point: Vec<bool>,
    /// `seg[i]` is the open arc from `crit[i]` to `crit[i + 1]`.
    seg: Vec<bool>,
    /// Status when there are no critical directions.
    uniform: bool,
}

impl Partition {
    fn new(x: &UpdateFamily, extra: &[Dir]) -> Self {
        let mut crit: Vec<Dir> = Vec::new();
        for v in x.sets().iter().flatten() {
            let r = primitive([-v[1], v[0]]);
            crit.push(r);
            crit.push(neg(r));
        }
        crit.extend(extra.iter().map(|d| primitive(*d)));
        crit.sort_by(|a, b| angle_cmp(*a, *b));
        crit.dedup();
        let n = crit.len();
        let point = crit.iter().map(|&c| is_unstable(x, c)).collect();
        let seg = (0..n).map(|i| is_unstable(x, inside(crit[i], crit[(i + 1) % n]))).collect();
        Partition {
            uniform: is_unstable(x, [1, 0]) && n == 0,
            crit,
            point,
            seg,
        }
    }

    fn n(&self) -> usize {
        self.crit.len()
    }

    /// Maximal runs of elements satisfying `keep`, as open arcs. Elements go
    /// point 0, segment 0, point 1, ... A run must start and end on segments.
    fn runs(&self, keep_point: &[bool], keep_seg: &[bool]) -> (bool, Vec<Arc>) {
        let n = self.n();
        if keep_point.iter().all(|v| *v) && keep_seg.iter().all(|v| *v) {
            return (true, Vec::new());
        }
        let m = 2 * n;
        let keep = |e: usize| if e % 2 == 0 { keep_point[e / 2] } else { keep_seg[e / 2] };
        let start = (0..m).find(|&e| !keep(e)).unwrap();
        let mut arcs = Vec::new();
        let mut cur: Option<usize> = None;
        for k in 1..=m {
            let e = (start + k) % m;
            if keep(e) {
                if cur.is_none() {
                    cur = Some(e);
                }
            } else if let Some(s) = cur.take() {
                let last = (e + m - 1) % m;
                // runs of an open set begin and end on segments
                let from = self.crit[s / 2];
                let to = self.crit[(last / 2 + 1) % n];
                arcs.push(Arc { from, to });
            }
        }
        (false, arcs)
    }

    fn unstable(&self) -> ArcSet {
        if self.n() == 0 {
            return ArcSet {
                full: self.uniform,
                arcs: Vec::new(),
            };
        }
        let (full, arcs) = self.runs(&self.point, &self.seg);
        ArcSet { full, arcs }
    }

    fn interior_stable_flags(&self) -> (Vec<bool>, Vec<bool>) {
        let n = self.n();
        let seg: Vec<bool> = self.seg.iter().map(|u| !u).collect();
        let point = (0..n).map(|i| !self.point[i] && seg[i] && seg[(i + n - 1) % n]).collect();
        (point, seg)
    }

    /// Interior of the stable set.
    fn stable_interior(&self) -> ArcSet {
        if self.n() == 0 {
            return ArcSet {
                full: !self.uniform,
                arcs: Vec::new(),
            };
        }
        let (p, s) = self.interior_stable_flags();
        let (full, arcs) = self.runs(&p, &s);
        ArcSet { full, arcs }
    }

    fn is_interior_stable(&self, u: Dir) -> bool {
        let n = self.n();
        if n == 0 {
            return !self.uniform;
        }
        let (p, s) = self.interior_stable_flags();
        if let Some(i) = self.crit.iter().position(|c| *c == u) {
            return p[i];
        }
        let i = (0..n)
            .find(|&i| ccw_open_contains(&Arc { from: self.crit[i], to: self.crit[(i + 1) % n] }, u))
            .expect("direction lies in some segment");
        s[i]
    }
}

/// Union over the sets of the open arcs of directions strictly negative on every site.
pub fn unstable_set_2d(x: &UpdateFamily) -> Result<ArcSet> {
    if x.dim() != 2 {
        return domain("unstable arcs need a 2-dimensional family");
    }
    Ok(Partition::new(x, &[]).unstable())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Supercritical,
    Subcritical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Classification {
    Supercritical,
    Subcritical,
    /// A simulation-based verdict.
    Heuristic(Verdict),
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Classification::Supercritical => write!(f, "supercritical"),
            Classification::Subcritical => write!(f, "subcritical"),
            Classification::Heuristic(Verdict::Supercritical) => write!(f, "heuristic-supercritical"),
            Classification::Heuristic(Verdict::Subcritical) => write!(f, "heuristic-subcritical"),
        }
    }
}

fn some_semicircle_unstable(p: &Partition) -> bool {
    let u = p.unstable();
    u.full || u.arcs.iter().any(|a| at_least_half_turn(a.from, a.to))
}

fn every_semicircle_meets_stable_interior(p: &Partition) -> bool {
    let s = p.stable_interior();
    if s.full {
        return true;
    }
    if s.arcs.is_empty() {
        return false;
    }
    let k = s.arcs.len();
    (0..k).all(|i| {
        let gap_from = s.arcs[i].to;
        let gap_to = s.arcs[(i + 1) % k].from;
        // a gap that is a single point has zero length
        gap_from == gap_to || !at_least_half_turn(gap_from, gap_to)
    })
}

/// Exact classification of a 2-dimensional family.
pub fn classify_2d(x: &UpdateFamily) -> Result<Classification> {
    if x.dim() != 2 {
        return domain("classify_2d needs a 2-dimensional family");
    }
    let p = Partition::new(x, &[]);
    if some_semicircle_unstable(&p) {
        return Ok(Classification::Supercritical);
    }
    if every_semicircle_meets_stable_interior(&p) {
        return Ok(Classification::Subcritical);
    }
    Err(Error::Undecided(format!(
        "{x} is neither supercritical nor subcritical by the direction test; it is critical or outside the half-space class"
    )))
}

/// Classification in any dimension: exact in dimensions 1 and 2, from a
/// growth simulation otherwise.
pub fn classify(x: &UpdateFamily) -> Result<Classification> {
    match x.dim() {
        0 => domain("dimension 0 has no directions"),
        1 => {
            let up = x.sets().iter().any(|s| s.iter().all(|v| v[0] < 0));
            let down = x.sets().iter().any(|s| s.iter().all(|v| v[0] > 0));
            Ok(if up || down {
                Classification::Supercritical
            } else {
                Classification::Subcritical
            })
        }
        2 => classify_2d(x),
        _ if x.contains_empty_set() => Ok(Classification::Supercritical),
        _ if x.is_empty() => Ok(Classification::Subcritical),
        _ => Ok(Classification::Heuristic(if seed_keeps_growing(x, 20)? {
            Verdict::Supercritical
        } else {
            Verdict::Subcritical
        })),
    }
}

/// Whether the closure of a ball of radius `2 * range` grows at every one of `steps` steps.
pub fn seed_keeps_growing(x: &UpdateFamily, steps: i64) -> Result<bool> {
    let r = x.range().max(1);
    let rho = 2 * r;
    let w = Window::centered(x.dim(), rho + (steps + 1) * r);
    let ball = Window::centered(x.dim(), rho);
    let mut st = BPState::from_sites(w, BpBoundary::healthy(x.dim()), &ball.points())?;
    let mut count = st.count();
    for _ in 0..steps {
        st = bp_step(&st, x)?;
        let c = st.count();
        if c <= count {
            return Ok(false);
        }
        count = c;
    }
    Ok(true)
}

/// Proof that a family does or does not lie in an open half-space.
#[derive(Clone, Debug, PartialEq)]
pub enum HalfSpace {
    /// `<x, u> <= -1` for every site `x`.
    Normal(Vec<Q>),
    /// Convex weights on sites summing to the zero vector.
    Witness(Vec<(Vec<i64>, Q)>),
}

impl HalfSpace {
    pub fn is_normal(&self) -> bool {
        matches!(self, HalfSpace::Normal(_))
    }

    pub fn verify(&self, x: &UpdateFamily) -> bool {
        let dim = x.dim();
        match self {
            HalfSpace::Normal(u) => {
                u.len() == dim
                    && x.sets().iter().flatten().all(|v| {
                        let s: Q = v.iter().zip(u).map(|(a, b)| qi(*a) * b).sum();
                        s <= -Q::one()
                    })
            }
            HalfSpace::Witness(w) => {
                let total: Q = w.iter().map(|(_, l)| l.clone()).sum();
                let sites: Vec<&Vec<i64>> = x.sets().iter().flatten().collect();
                total.is_one()
                    && w.iter().all(|(v, l)| !l.is_negative() && sites.contains(&v))
                    && (0..dim).all(|k| w.iter().map(|(v, l)| qi(v[k]) * l).sum::<Q>().is_zero())
            }
        }
    }
}

/// Phase one of the simplex method on `A lambda = b`, `lambda >= 0`, with
/// Bland's rule. Returns the optimal infeasibility, the point and the duals.
fn phase_one(cols: &[Vec<Q>], b: &[Q]) -> (Q, Vec<Q>, Vec<Q>) {
    let m = b.len();
    let n = cols.len();
    let w = n + m;
    let mut t: Vec<Vec<Q>> = (0..m)
        .map(|i| {
            let mut row: Vec<Q> = cols.iter().map(|c| c[i].clone()).collect();
            row.extend((0..m).map(|k| if k == i { Q::one() } else { Q::zero() }));
            row
        })
        .collect();
    let mut rhs = b.to_vec();
    let mut basis: Vec<usize> = (n..w).collect();
    let cost = |j: usize| if j >= n { Q::one() } else { Q::zero() };
    let mut rc: Vec<Q> = (0..w).map(|j| cost(j) - (0..m).map(|i| t[i][j].clone()).sum::<Q>()).collect();
    loop {
        let Some(j) = (0..w).find(|&j| rc[j].is_negative()) else {
            break;
        };
        let mut best: Option<(usize, Q)> = None;
        for i in 0..m {
            if t[i][j].is_positive() {
                let ratio = &rhs[i] / &t[i][j];
                let better = match &best {
                    None => true,
                    Some((bi, br)) => ratio < *br || (ratio == *br && basis[i] < basis[*bi]),
                };
                if better {
                    best = Some((i, ratio));
                }
            }
        }
        let (r, _) = best.expect("phase one is bounded");
        let piv = t[r][j].clone();
        for v in t[r].iter_mut() {
            *v /= &piv;
        }
        rhs[r] /= &piv;
        for i in 0..m {
            if i != r && !t[i][j].is_zero() {
                let f = t[i][j].clone();
                for k in 0..w {
                    let d = &f * &t[r][k];
                    t[i][k] -= d;
                }
                let d = &f * &rhs[r];
                rhs[i] -= d;
            }
        }
        let f = rc[j].clone();
        for k in 0..w {
            let d = &f * &t[r][k];
            rc[k] -= d;
        }
        basis[r] = j;
    }
    let value: Q = (0..m).map(|i| cost(basis[i]) * &rhs[i]).sum();
    let mut x = vec![Q::zero(); n];
    for i in 0..m {
        if basis[i] < n {
            x[basis[i]] = rhs[i].clone();
        }
    }
    let y = (0..m).map(|i| Q::one() - &rc[n + i]).collect();
    (value, x, y)
}

/// Normal vector `u` with `<x, u> <= -1` on all sites, or a convex combination
/// of sites equal to zero.
pub fn half_space_normal(x: &UpdateFamily) -> HalfSpace {
    let dim = x.dim();
    let mut sites: Vec<Vec<i64>> = x.sets().iter().flatten().cloned().collect();
    sites.sort();
    sites.dedup();
    let cols: Vec<Vec<Q>> = sites.iter().map(|v| v.iter().map(|c| qi(*c)).chain([Q::one()]).collect()).collect();
    let mut b = vec![Q::zero(); dim];
    b.push(Q::one());
    let (value, lambda, y) = phase_one(&cols, &b);
    let cert = if value.is_zero() {
        HalfSpace::Witness(sites.into_iter().zip(lambda).filter(|(_, l)| !l.is_zero()).collect())
    } else {
        let yd = y[dim].clone();
        HalfSpace::Normal(y[..dim].iter().map(|v| v / &yd).collect())
    };
    debug_assert!(cert.verify(x));
    cert
}

/// Result of checking that the stable set is the closure of its interior.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StableInterior {
    pub unstable: ArcSet,
    /// Stable directions that are not limits of interior-stable ones.
    pub isolated: Vec<Dir>,
    pub closure_of_interior: bool,
    /// Two opposite directions in the interior of the stable set.
    pub opposite: Option<(Dir, Dir)>,
}

pub fn stable_interior_check(x: &UpdateFamily) -> Result<StableInterior> {
    if x.dim() != 2 {
        return domain("stable interior check needs a 2-dimensional family");
    }
    if !half_space_normal(x).is_normal() {
        return Err(Error::NotHalfSpace(format!("{x} is not contained in an open half-space")));
    }
    let p = Partition::new(x, &[]);
    let isolated: Vec<Dir> = (0..p.n()).filter(|&i| is_isolated(&p, i)).map(|i| p.crit[i]).collect();
    // refine by the negated cuts so every candidate pair is a cut or a segment midpoint
    let negs: Vec<Dir> = p.crit.iter().map(|c| neg(*c)).chain([[1, 0], [-1, 0]]).collect();
    let fine = Partition::new(x, &negs);
    let mut cands: Vec<Dir> = fine.crit.clone();
    let n = fine.n();
    cands.extend((0..n).map(|i| inside(fine.crit[i], fine.crit[(i + 1) % n])));
    cands.sort_by(|a, b| angle_cmp(*a, *b));
    cands.dedup();
    let opposite = cands
        .into_iter()
        .find(|&u| p.is_interior_stable(u) && p.is_interior_stable(neg(u)))
        .map(|u| (u, neg(u)));
    Ok(StableInterior {
        unstable: p.unstable(),
        closure_of_interior: isolated.is_empty(),
        isolated,
        opposite,
    })
}

/// A stable cut with unstable segments on both sides.
fn is_isolated(p: &Partition, i: usize) -> bool {
    let n = p.n();
    !p.point[i] && p.seg[i] && p.seg[(i + n - 1) % n]
}

/// Fate of one finite island of zeros under a deterministic rule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IslandVerdict {
    /// All ones from time `t` on.
    Erased { t: i64 },
    /// The state repeats with this period without reaching all ones.
    Persistent { from: i64, period: i64 },
    Undecided { horizon: i64 },
}

impl IslandVerdict {
    pub fn erased(&self) -> bool {
        matches!(self, IslandVerdict::Erased { .. })
    }
}

/// Runs the rule from all ones with zeros on `island` (in every slab row)
/// inside `window`, which must contain the island with margin `r * t_max`.
pub fn eroder_run(u: &UpFamily, window: &Window, island: &[Vec<i64>], t_max: i64) -> Result<IslandVerdict> {
    let nbhd = u.neighborhood();
    if island.is_empty() {
        return domain("island must be nonempty");
    }
    let mut lo = island[0].clone();
    let mut hi = island[0].clone();
    for x in island {
        for i in 0..nbhd.d {
            lo[i] = lo[i].min(x[i]);
            hi[i] = hi[i].max(x[i]);
        }
    }
    let need = nbhd.r * t_max;
    let have = (0..nbhd.d).map(|i| (lo[i] - window.lo[i]).min(window.hi[i] - hi[i])).min().unwrap_or(i64::MAX);
    if have < need {
        return Err(Error::Margin { needed: need, have });
    }
    let mut init = Configuration::ones(&nbhd, window.clone(), Boundary::AllOne)?;
    for x in island {
        for s in -nbhd.depth()..0 {
            init.set(x, s, false)?;
        }
    }
    let measure = RatesMeasure::dirac(u.clone());
    let rule = Rule::for_measure(&measure);
    let field = FieldSample::new(&measure, 0);
    let traj = simulate_with(&rule, &field, &init, t_max.max(1))?;
    let depth = nbhd.depth();
    let state = |t: i64| -> Vec<bool> { (t - depth + 1..=t).flat_map(|s| traj.row(s).to_vec()).collect() };
    let mut seen: HashMap<Vec<bool>, i64> = HashMap::new();
    for t in 0..=t_max {
        let s = state(t);
        if s.iter().all(|v| *v) {
            return Ok(IslandVerdict::Erased { t });
        }
        if let Some(&t0) = seen.get(&s) {
            return Ok(IslandVerdict::Persistent { from: t0, period: t - t0 });
        }
        seen.insert(s, t);
    }
    Ok(IslandVerdict::Undecided { horizon: t_max })
}

/// [`eroder_run`] for each island on a window sized by the margin rule.
pub fn is_eroder_simulation(u: &UpFamily, t_max: i64, islands: &[Vec<Vec<i64>>]) -> Result<Vec<IslandVerdict>> {
    let nbhd = u.neighborhood();
    islands
        .par_iter()
        .map(|island| {
            let mut lo = vec![i64::MAX; nbhd.d];
            let mut hi = vec![i64::MIN; nbhd.d];
            for x in island {
                for i in 0..nbhd.d {
                    lo[i] = lo[i].min(x[i]);
                    hi[i] = hi[i].max(x[i]);
                }
            }
            let m = nbhd.r * t_max;
            let w = Window::new(lo.iter().map(|v| v - m).collect(), hi.iter().map(|v| v + m).collect())?;
            eroder_run(u, &w, island, t_max)
        })
        .collect()
}

/// Eroder test for `d = 1` rules through the classification of the dual family.
pub fn is_eroder_geometric_1d(u: &UpFamily) -> Result<bool> {
    if u.neighborhood().d != 1 {
        return domain("the geometric eroder test needs d = 1");
    }
    match classify_2d(&ca_to_bp(u)?)? {
        Classification::Subcritical => Ok(true),
        _ => Ok(false),
    }
}

/// Intervals `[0, w-1]` for `w` in `1..=max_width`.
pub fn interval_islands(max_width: i64) -> Vec<Vec<Vec<i64>>> {
    (1..=max_width).map(|w| (0..w).map(|x| vec![x]).collect()).collect()
}

/// Hand-built deterministic `d = 1` rules.
pub fn eroder_zoo() -> Vec<(&'static str, UpFamily)> {
    let m1 = Neighborhood::new(1, 1, true).unwrap();
    let m2 = Neighborhood::new(1, 2, true).unwrap();
    let k2 = Neighborhood::new(1, 2, false).unwrap();
    let s = |n: Neighborhood, gens: &[&[i64]]| {
        let t = if n.memoryless { vec![-1; 8] } else { vec![] };
        let sets: Vec<Vec<Vec<i64>>> = gens
            .iter()
            .map(|g| {
                if n.memoryless {
                    g.iter().zip(&t).map(|(x, t)| vec![*x, *t]).collect()
                } else {
                    g.chunks(2).map(|c| c.to_vec()).collect()
                }
            })
            .collect();
        upfamily_from_sites(n, &sets).unwrap()
    };
    vec![
        ("identity", s(m1, &[&[0]])),
        ("two-neighbor-or", s(m1, &[&[-1], &[1]])),
        ("majority", s(m1, &[&[-1, 0], &[0, 1], &[-1, 1]])),
        ("and-of-three", s(m1, &[&[-1, 0, 1]])),
        ("self-or-left", s(m1, &[&[0], &[-1]])),
        ("self-or-right", s(m1, &[&[0], &[1]])),
        ("far-or", s(m2, &[&[-2], &[2]])),
        ("self-and-right", s(m1, &[&[0, 1]])),
        ("pair-or-right", s(m1, &[&[-1, 0], &[1]])),
        ("or-of-three", s(m1, &[&[-1], &[0], &[1]])),
        ("always-one", UpFamily::omega(m1)),
        ("memory-copy", s(k2, &[&[0, -2]])),
        ("memory-or", s(k2, &[&[-1, -1], &[1, -2]])),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::q;
    use proptest::prelude::*;

    fn fam(sets: &[&[[i64; 2]]]) -> UpdateFamily {
        UpdateFamily::new(2, sets.iter().map(|s| s.iter().map(|v| v.to_vec()).collect()).collect()).unwrap()
    }

    fn osp_x() -> UpdateFamily {
        fam(&[&[[-1, -1], [1, -1]]])
    }

    #[test]
    fn angular_order() {
        let dirs: Vec<Dir> = vec![[1, 0], [2, 1], [1, 1], [0, 1], [-1, 1], [-1, 0], [-1, -1], [0, -1], [1, -1]];
        for i in 0..dirs.len() {
            for j in 0..dirs.len() {
                assert_eq!(angle_cmp(dirs[i], dirs[j]), i.cmp(&j));
            }
        }
        let a = Arc { from: [1, 1], to: [-1, 1] };
        assert!(ccw_open_contains(&a, [0, 1]));
        assert!(!ccw_open_contains(&a, [1, 1]));
        assert!(!ccw_open_contains(&a, [1, 0]));
        let wrap = Arc { from: [0, -1], to: [0, 1] };
        assert!(ccw_open_contains(&wrap, [1, 0]));
        assert!(!ccw_open_contains(&wrap, [-1, 0]));
    }

    #[test]
    fn unstable_examples() {
        let u = unstable_set_2d(&osp_x()).unwrap();
        assert_eq!(u.arcs, vec![Arc { from: [1, 1], to: [-1, 1] }]);
        assert!(u.contains([0, 1]) && u.contains([1, 3]) && !u.contains([1, 1]) && !u.contains([1, 0]));
        assert!(unstable_set_2d(&UpdateFamily::empty(2)).unwrap().is_empty());
        let up = unstable_set_2d(&fam(&[&[[0, -1]]])).unwrap();
        assert_eq!(up.arcs, vec![Arc { from: [1, 0], to: [-1, 0] }]);
        assert!(unstable_set_2d(&UpdateFamily::with_empty_set(2)).unwrap().full);
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_2d(&osp_x()).unwrap(), Classification::Subcritical);
        assert_eq!(classify_2d(&fam(&[&[[0, -1]]])).unwrap(), Classification::Supercritical);
        assert_eq!(classify_2d(&UpdateFamily::with_empty_set(2)).unwrap(), Classification::Supercritical);
        assert_eq!(classify_2d(&UpdateFamily::empty(2)).unwrap(), Classification::Subcritical);
        // two-neighbour BP is critical and not half-space
        let two = fam(&[&[[1, 0], [-1, 0]], &[[1, 0], [0, 1]], &[[1, 0], [0, -1]], &[[-1, 0], [0, 1]], &[[-1, 0], [0, -1]], &[[0, 1], [0, -1]]]);
        assert!(matches!(classify_2d(&two), Err(Error::Undecided(_))));
        assert_eq!(classify(&UpdateFamily::new(1, vec![vec![vec![-1]]]).unwrap()).unwrap(), Classification::Supercritical);
        let x3 = UpdateFamily::new(3, vec![vec![vec![0, 0, -1]]]).unwrap();
        assert_eq!(classify(&x3).unwrap(), Classification::Heuristic(Verdict::Supercritical));
        let toom = ca_to_bp(&crate::rates::toom_majority()).unwrap();
        assert_eq!(classify(&toom).unwrap(), Classification::Heuristic(Verdict::Subcritical));
    }

    #[test]
    fn supercritical_seed_grows() {
        assert!(seed_keeps_growing(&fam(&[&[[0, -1]]]), 20).unwrap());
        assert!(!seed_keeps_growing(&osp_x(), 20).unwrap());
    }

    #[test]
    fn half_space_examples() {
        let lower = fam(&[&[[-1, -1], [1, -1]], &[[3, -2]]]);
        let c = half_space_normal(&lower);
        assert!(c.is_normal() && c.verify(&lower));
        let line = fam(&[&[[1, 0], [-1, 0]]]);
        let c = half_space_normal(&line);
        assert_eq!(c, HalfSpace::Witness(vec![(vec![-1, 0], q(1, 2)), (vec![1, 0], q(1, 2))]));
        assert!(c.verify(&line));
        let ne = fam(&[&[[0, 1], [1, 0]]]);
        let c = half_space_normal(&ne);
        assert!(c.is_normal() && c.verify(&ne));
        assert!(HalfSpace::Normal(vec![qi(-1), qi(-1)]).verify(&ne));
        let tri = fam(&[&[[1, 0]], &[[0, 1]], &[[-1, -1]]]);
        let c = half_space_normal(&tri);
        assert!(!c.is_normal() && c.verify(&tri));
        let x3 = UpdateFamily::new(3, vec![vec![vec![1, 2, -1], vec![-3, 0, -2]], vec![vec![0, 5, -1]]]).unwrap();
        assert!(half_space_normal(&x3).verify(&x3));
    }

    #[test]
    fn stable_interior_examples() {
        let r = stable_interior_check(&osp_x()).unwrap();
        assert_eq!(r.opposite, Some(([1, 0], [-1, 0])));
        assert!(r.closure_of_interior);
        let r = stable_interior_check(&UpdateFamily::empty(2)).unwrap();
        assert!(r.closure_of_interior && r.unstable.is_empty());
        let r = stable_interior_check(&fam(&[&[[0, -1]]])).unwrap();
        assert!(r.closure_of_interior);
        assert_eq!(r.unstable.arcs, vec![Arc { from: [1, 0], to: [-1, 0] }]);
        assert!(r.opposite.is_none());
        assert!(matches!(stable_interior_check(&fam(&[&[[1, 0], [-1, 0]]])), Err(Error::NotHalfSpace(_))));
    }

    #[test]
    fn eroder_examples() {
        let toom = crate::rates::toom_majority();
        let v = is_eroder_simulation(&toom, 5, &[vec![vec![0, 0]]]).unwrap();
        assert_eq!(v, vec![IslandVerdict::Erased { t: 1 }]);
        let zoo = eroder_zoo();
        let id = &zoo[0].1;
        let v = is_eroder_simulation(id, 50, &[vec![vec![0]]]).unwrap();
        assert_eq!(v, vec![IslandVerdict::Persistent { from: 0, period: 1 }]);
        let or2 = &zoo[1].1;
        let v = is_eroder_simulation(or2, 50, &[(3..=8).map(|x| vec![x]).collect()]).unwrap();
        assert_eq!(v, vec![IslandVerdict::Erased { t: 3 }]);
        for (a, b) in [(0, 0), (0, 1), (2, 6), (-3, 3)] {
            let isl: Vec<Vec<i64>> = (a..=b).map(|x| vec![x]).collect();
            let want = ((b - a + 1) + 1) / 2;
            assert_eq!(is_eroder_simulation(or2, 50, &[isl]).unwrap()[0], IslandVerdict::Erased { t: want });
        }
        let w = Window::centered(1, 3);
        assert!(matches!(eroder_run(or2, &w, &[vec![0]], 5), Err(Error::Margin { .. })));
    }

    #[test]
    fn eroder_zoo_agrees() {
        let islands = interval_islands(6);
        for (name, u) in eroder_zoo() {
            let geo = is_eroder_geometric_1d(&u).unwrap();
            let sim = is_eroder_simulation(&u, 50, &islands).unwrap();
            assert_eq!(geo, sim.iter().all(|v| v.erased()), "{name}: {sim:?}");
        }
        assert!(is_eroder_geometric_1d(&eroder_zoo()[1].1).unwrap());
        assert!(!is_eroder_geometric_1d(&eroder_zoo()[0].1).unwrap());
        assert!(is_eroder_geometric_1d(&UpFamily::omega(Neighborhood::new(1, 1, true).unwrap())).unwrap());
    }

    fn family_strategy() -> impl Strategy<Value = UpdateFamily> {
        let v = (-3i64..=3, -3i64..=3).prop_filter("nonzero", |p| *p != (0, 0));
        proptest::collection::vec(proptest::collection::vec(v, 1..4), 0..4)
            .prop_map(|sets| UpdateFamily::new(2, sets.into_iter().map(|s| s.into_iter().map(|(a, b)| vec![a, b]).collect()).collect()).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn arcs_match_pointwise_test(x in family_strategy(), a in -20i64..=20, b in -20i64..=20) {
            prop_assume!((a, b) != (0, 0));
            let u = unstable_set_2d(&x).unwrap();
            prop_assert_eq!(u.contains([a, b]), is_unstable(&x, primitive([a, b])));
        }

        #[test]
        fn certificates_verify(x in family_strategy()) {
            let c = half_space_normal(&x);
            prop_assert!(c.verify(&x));
        }

        #[test]
        fn half_space_families_are_classified(x in family_strategy()) {
            if half_space_normal(&x).is_normal() {
                let c = classify_2d(&x);
                prop_assert!(c.is_ok(), "{}", x);
                let s = stable_interior_check(&x).unwrap();
                prop_assert!(s.closure_of_interior, "{}", x);
                if c.unwrap() == Classification::Subcritical {
                    prop_assert!(s.opposite.is_some());
                }
            }
        }
    }
}
