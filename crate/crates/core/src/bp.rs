//! Bootstrap percolation: update families, synchronous steps, closures,
//! inhomogeneous runs and infection-time curves.

use num_traits::{One, Signed, Zero};

use crate::error::{domain, Error, Result};
use crate::exact::{from_f64, to_f64, Q};
use crate::field::{space_hash, threshold, STREAM_BERNOULLI, STREAM_FAMILY};
use crate::lattice::{read_shifted, Layout, Window};
use crate::pca::{par_counts, Estimate};
use crate::rates::MASS_TOL;

/// A finite family of finite subsets of `Z^D \ {0}`, kept as an antichain.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UpdateFamily {
    dim: usize,
    sets: Vec<Vec<Vec<i64>>>,
}

impl UpdateFamily {
    pub fn new(dim: usize, sets: Vec<Vec<Vec<i64>>>) -> Result<Self> {
        let mut canon: Vec<Vec<Vec<i64>>> = Vec::new();
        for mut s in sets {
            if let Some(v) = s.iter().find(|v| v.len() != dim) {
                return domain(format!("vector {v:?} is not {dim}-dimensional"));
            }
            if s.iter().any(|v| v.iter().all(|&c| c == 0)) {
                return domain("update sets may not contain the origin");
            }
            s.sort();
            s.dedup();
            canon.push(s);
        }
        canon.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        canon.dedup();
        let mut out: Vec<Vec<Vec<i64>>> = Vec::new();
        for s in canon {
            if !out.iter().any(|m| m.iter().all(|v| s.contains(v))) {
                out.push(s);
            }
        }
        Ok(UpdateFamily { dim, sets: out })
    }

    pub fn empty(dim: usize) -> Self {
        UpdateFamily { dim, sets: Vec::new() }
    }

    /// The family `{∅}`: every site is infected after one step.
    pub fn with_empty_set(dim: usize) -> Self {
        UpdateFamily {
            dim,
            sets: vec![Vec::new()],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sets(&self) -> &[Vec<Vec<i64>>] {
        &self.sets
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn contains_empty_set(&self) -> bool {
        self.sets.first().is_some_and(|s| s.is_empty())
    }

    /// Largest coordinate magnitude over all sets.
    pub fn range(&self) -> i64 {
        self.sets
            .iter()
            .flatten()
            .flat_map(|v| v.iter().map(|c| c.abs()))
            .max()
            .unwrap_or(0)
    }

    /// Per-axis minimum and maximum of the offsets, including 0.
    pub fn offset_hull(&self) -> (Vec<i64>, Vec<i64>) {
        let mut lo = vec![0; self.dim];
        let mut hi = vec![0; self.dim];
        for v in self.sets.iter().flatten() {
            for i in 0..self.dim {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        (lo, hi)
    }
}

impl std::fmt::Display for UpdateFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (k, s) in self.sets.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            let parts: Vec<String> = s
                .iter()
                .map(|v| format!("({})", v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")))
                .collect();
            write!(f, "{{{}}}", parts.join(","))?;
        }
        write!(f, "]")
    }
}

/// Finitely supported law of an update family.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyMeasure {
    dim: usize,
    atoms: Vec<(UpdateFamily, Q)>,
}

impl FamilyMeasure {
    pub fn new(dim: usize, atoms: Vec<(UpdateFamily, Q)>) -> Result<Self> {
        let mut merged: Vec<(UpdateFamily, Q)> = Vec::new();
        let mut total = Q::zero();
        for (f, w) in atoms {
            if f.dim != dim {
                return domain("family of a different dimension");
            }
            if w.is_negative() {
                return domain("negative weight");
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
        Ok(FamilyMeasure { dim, atoms: merged })
    }

    pub fn dirac(f: UpdateFamily) -> Self {
        FamilyMeasure {
            dim: f.dim,
            atoms: vec![(f, Q::one())],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[(UpdateFamily, Q)] {
        &self.atoms
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Face {
    Healthy,
    Infected,
}

/// Boundary state on each face, as `(low side, high side)` per axis.
///
/// A cell outside the window counts as infected if any face it lies beyond
/// is infected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpBoundary {
    pub faces: Vec<(Face, Face)>,
}

impl BpBoundary {
    pub fn uniform(dim: usize, f: Face) -> Self {
        BpBoundary { faces: vec![(f, f); dim] }
    }

    pub fn healthy(dim: usize) -> Self {
        Self::uniform(dim, Face::Healthy)
    }

    pub fn infected(dim: usize) -> Self {
        Self::uniform(dim, Face::Infected)
    }

    fn infected_at(&self, w: &Window, x: &[i64]) -> bool {
        (0..w.dim()).any(|i| {
            (x[i] < w.lo[i] && self.faces[i].0 == Face::Infected) || (x[i] > w.hi[i] && self.faces[i].1 == Face::Infected)
        })
    }
}

/// Infected set on a window.
#[derive(Clone, Debug, PartialEq)]
pub struct BPState {
    pub window: Window,
    pub boundary: BpBoundary,
    /// Row-major over the window points.
    pub infected: Vec<bool>,
}

impl BPState {
    pub fn healthy(window: Window, boundary: BpBoundary) -> Self {
        let n = window.volume();
        BPState {
            window,
            boundary,
            infected: vec![false; n],
        }
    }

    pub fn from_sites(window: Window, boundary: BpBoundary, sites: &[Vec<i64>]) -> Result<Self> {
        let mut s = Self::healthy(window, boundary);
        for x in sites {
            s.set(x, true)?;
        }
        Ok(s)
    }

    pub fn set(&mut self, x: &[i64], v: bool) -> Result<()> {
        match self.window.index(x) {
            Some(i) => {
                self.infected[i] = v;
                Ok(())
            }
            None => domain(format!("{x:?} outside the window")),
        }
    }

    /// State at `x`, reading the boundary rule outside the window.
    pub fn get(&self, x: &[i64]) -> bool {
        match self.window.index(x) {
            Some(i) => self.infected[i],
            None => self.boundary.infected_at(&self.window, x),
        }
    }

    pub fn count(&self) -> usize {
        self.infected.iter().filter(|v| **v).count()
    }

    pub fn is_subset(&self, o: &BPState) -> bool {
        self.infected.iter().zip(&o.infected).all(|(a, b)| !a || *b)
    }
}

/// Families compiled to shifted reads on a layout.
struct Kernel {
    layout: Layout,
    /// Per family type, per set: `(word delta, bit delta)` of each vector.
    types: Vec<Vec<Vec<(isize, i64)>>>,
    /// Per family type selection masks (absent with a single type).
    sel: Vec<Vec<u64>>,
    template: Vec<u64>,
}

impl Kernel {
    fn new(window: &Window, boundary: &BpBoundary, families: &[UpdateFamily], assign: Option<&dyn Fn(&[i64]) -> usize>) -> Result<Self> {
        let dim = window.dim();
        if boundary.faces.len() != dim {
            return domain("boundary dimension mismatch");
        }
        for f in families {
            if f.dim != dim {
                return domain("family dimension differs from the window");
            }
        }
        let range = families.iter().map(|f| f.range()).max().unwrap_or(0).max(1);
        let layout = Layout::new(window, &vec![range; dim])?;
        let types = families
            .iter()
            .map(|f| f.sets.iter().map(|s| s.iter().map(|v| layout.offset(v)).collect()).collect())
            .collect();
        let template = layout.template(|x| boundary.infected_at(window, x));
        let mut sel = Vec::new();
        if families.len() > 1 {
            let assign = assign.ok_or_else(|| Error::Domain("several families need an assignment".into()))?;
            sel = vec![layout.new_buffer(); families.len()];
            for p in window.points() {
                let k = assign(&p);
                if k >= families.len() {
                    return domain("family index out of range");
                }
                layout.set(&mut sel[k], &p, true);
            }
        }
        Ok(Kernel {
            layout,
            types,
            sel,
            template,
        })
    }

    fn load(&self, s: &BPState) -> Vec<u64> {
        let mut buf = self.template.clone();
        for (p, v) in s.window.points().iter().zip(&s.infected) {
            if *v {
                self.layout.set(&mut buf, p, true);
            }
        }
        buf
    }

    fn store(&self, buf: &[u64], s: &mut BPState) {
        for (i, p) in s.window.points().iter().enumerate() {
            s.infected[i] = self.layout.get(buf, p);
        }
    }

    /// New value of word `idx` (with in-row word `w`) read from `src`.
    #[inline]
    fn word(&self, src: &[u64], idx: usize, w: usize) -> u64 {
        let imask = self.layout.interior_mask(w);
        let mut add = 0u64;
        for (k, sets) in self.types.iter().enumerate() {
            let mut v = 0u64;
            for set in sets {
                let mut acc = !0u64;
                for &(wd, bd) in set {
                    acc &= read_shifted(src, idx, wd, bd);
                    if acc == 0 {
                        break;
                    }
                }
                v |= acc;
            }
            if self.sel.is_empty() {
                add |= v;
            } else {
                add |= v & self.sel[k][idx];
            }
        }
        src[idx] | (add & imask)
    }

    fn sync_step(&self, src: &[u64], dst: &mut [u64], rows: &[usize], span: (usize, usize)) -> bool {
        let mut changed = false;
        for &row in rows {
            let start = self.layout.row_start(row);
            for w in span.0..span.1 {
                let idx = start + w;
                let v = self.word(src, idx, w);
                changed |= v != src[idx];
                dst[idx] = v;
            }
        }
        changed
    }

    /// In-place sweeps until nothing changes.
    fn close(&self, buf: &mut [u64]) {
        let rows = self.layout.interior_rows();
        let words = self.layout.row_words;
        let mut forward = true;
        loop {
            let mut changed = false;
            let order: Box<dyn Iterator<Item = usize>> = if forward {
                Box::new(0..rows.len() * words)
            } else {
                Box::new((0..rows.len() * words).rev())
            };
            for k in order {
                let (r, w) = (rows[k / words], k % words);
                if self.layout.interior_mask(w) == 0 {
                    continue;
                }
                let idx = self.layout.row_start(r) + w;
                loop {
                    let v = self.word(buf, idx, w);
                    if v == buf[idx] {
                        break;
                    }
                    buf[idx] = v;
                    changed = true;
                }
            }
            if !changed {
                return;
            }
            forward = !forward;
        }
    }
}

/// One synchronous step with a per-site family index.
pub fn bp_step_with(state: &BPState, families: &[UpdateFamily], family_at: &dyn Fn(&[i64]) -> usize) -> Result<BPState> {
    let k = Kernel::new(&state.window, &state.boundary, families, Some(family_at))?;
    let src = k.load(state);
    let mut dst = src.clone();
    let rows = k.layout.interior_rows();
    k.sync_step(&src, &mut dst, &rows, (0, k.layout.row_words));
    let mut out = state.clone();
    k.store(&dst, &mut out);
    Ok(out)
}

pub fn bp_step(state: &BPState, family: &UpdateFamily) -> Result<BPState> {
    bp_step_with(state, std::slice::from_ref(family), &|_| 0)
}

pub fn closure_with(state: &BPState, families: &[UpdateFamily], family_at: &dyn Fn(&[i64]) -> usize) -> Result<BPState> {
    let k = Kernel::new(&state.window, &state.boundary, families, Some(family_at))?;
    let mut buf = k.load(state);
    k.close(&mut buf);
    let mut out = state.clone();
    k.store(&buf, &mut out);
    Ok(out)
}

pub fn closure(state: &BPState, family: &UpdateFamily) -> Result<BPState> {
    closure_with(state, std::slice::from_ref(family), &|_| 0)
}

/// Quantile of `u` among the atoms of a family measure.
fn pick_atom(chi: &FamilyMeasure, thresholds: &[u128], h: u64) -> usize {
    thresholds.iter().position(|&t| (h as u128) < t).unwrap_or(chi.atoms.len() - 1)
}

fn cumulative_thresholds(chi: &FamilyMeasure) -> Vec<u128> {
    let mut acc = Q::zero();
    let n = chi.atoms.len();
    chi.atoms
        .iter()
        .enumerate()
        .map(|(i, (_, w))| {
            acc += w;
            if i + 1 == n {
                1u128 << 64
            } else {
                threshold(&acc)
            }
        })
        .collect()
}

/// Result of a BP run with i.i.d. per-site families.
#[derive(Clone, Debug)]
pub struct InhomRun {
    pub seed: u64,
    /// Atom index of `chi` at each window point (row-major).
    pub families: Vec<usize>,
    pub state: BPState,
}

/// Family index at a site for a given seed.
pub fn sampled_family(chi: &FamilyMeasure, seed: u64, x: &[i64]) -> usize {
    pick_atom(chi, &cumulative_thresholds(chi), space_hash(seed, STREAM_FAMILY, x))
}

pub fn inhomogeneous_run(chi: &FamilyMeasure, initial: &BPState, seed: u64) -> Result<InhomRun> {
    if chi.dim != initial.window.dim() {
        return domain("family measure dimension differs from the window");
    }
    let thr = cumulative_thresholds(chi);
    let assign: Vec<usize> = initial
        .window
        .points()
        .iter()
        .map(|x| pick_atom(chi, &thr, space_hash(seed, STREAM_FAMILY, x)))
        .collect();
    let families: Vec<UpdateFamily> = chi.atoms.iter().map(|(f, _)| f.clone()).collect();
    let w = initial.window.clone();
    let lookup = |x: &[i64]| assign[w.index(x).unwrap()];
    let state = closure_with(initial, &families, &lookup)?;
    Ok(InhomRun {
        seed,
        families: assign,
        state,
    })
}

/// Whether `x` is initially infected under Bernoulli(`q`) with the given seed.
pub fn bernoulli_site(q_thr: u128, seed: u64, x: &[i64]) -> bool {
    (space_hash(seed, STREAM_BERNOULLI, x) as u128) < q_thr
}

pub fn bernoulli_threshold(q: f64) -> Result<u128> {
    if !(0.0..=1.0).contains(&q) {
        return domain(format!("probability {q} outside [0,1]"));
    }
    Ok(threshold(&from_f64(q)?))
}

pub fn bernoulli_initial(window: &Window, boundary: BpBoundary, q: f64, seed: u64) -> Result<BPState> {
    let thr = bernoulli_threshold(q)?;
    let infected = window.points().iter().map(|x| bernoulli_site(thr, seed, x)).collect();
    Ok(BPState {
        window: window.clone(),
        boundary,
        infected,
    })
}

/// Probability that the origin is still healthy at each `t` in `0..=t_max`,
/// from Bernoulli(`q`) initial infections.
pub fn infection_time_curve(x: &UpdateFamily, q: f64, window: &Window, t_max: i64, replicas: u64, seed: u64) -> Result<Vec<Estimate>> {
    if replicas == 0 {
        return domain("replicas must be positive");
    }
    let dim = x.dim;
    if window.dim() != dim {
        return domain("window dimension differs from the family");
    }
    let o = vec![0i64; dim];
    let need = x.range() * t_max;
    let have = window.margin_around(&o);
    if have < need {
        return Err(Error::Margin { needed: need, have });
    }
    let thr = bernoulli_threshold(q)?;
    // cells that can influence the origin within the remaining time
    let (mn, mx) = x.offset_hull();
    let dep = |k: i64| Window {
        lo: mn.iter().map(|v| v * (t_max - k)).collect(),
        hi: mx.iter().map(|v| v * (t_max - k)).collect(),
    };
    let region = dep(0);
    let boundary = BpBoundary::healthy(dim);
    let k = Kernel::new(&region, &boundary, std::slice::from_ref(x), None)?;
    let points = region.points();
    let width = t_max as usize + 1;
    let counts = par_counts(replicas, width, seed, |s, acc| {
        let mut src = k.template.clone();
        for p in &points {
            if bernoulli_site(thr, s, p) {
                k.layout.set(&mut src, p, true);
            }
        }
        let mut dst = src.clone();
        let mut rows = Vec::new();
        if k.layout.get(&src, &o) {
            return;
        }
        acc[0] += 1;
        for t in 1..=t_max {
            let b = dep(t);
            let span = k.layout.active_rows(Some(&b), &mut rows).unwrap();
            k.sync_step(&src, &mut dst, &rows, span);
            std::mem::swap(&mut src, &mut dst);
            if k.layout.get(&src, &o) {
                return;
            }
            acc[t as usize] += 1;
        }
    });
    Ok(counts.into_iter().map(|h| Estimate::from_counts(h, replicas)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::q;
    use proptest::prelude::*;

    fn east() -> UpdateFamily {
        UpdateFamily::new(1, vec![vec![vec![-1]]]).unwrap()
    }

    fn w1(a: i64, b: i64) -> Window {
        Window::new(vec![a], vec![b]).unwrap()
    }

    /// Site-by-site synchronous step.
    fn ref_step(s: &BPState, fams: &[UpdateFamily], at: &dyn Fn(&[i64]) -> usize) -> BPState {
        let mut out = s.clone();
        for (i, x) in s.window.points().iter().enumerate() {
            if s.infected[i] {
                continue;
            }
            let f = &fams[at(x)];
            out.infected[i] = f.sets().iter().any(|set| {
                set.iter().all(|v| {
                    let y: Vec<i64> = x.iter().zip(v).map(|(a, b)| a + b).collect();
                    s.get(&y)
                })
            });
        }
        out
    }

    fn ref_closure(s: &BPState, fams: &[UpdateFamily], at: &dyn Fn(&[i64]) -> usize) -> BPState {
        let mut cur = s.clone();
        loop {
            let next = ref_step(&cur, fams, at);
            if next == cur {
                return cur;
            }
            cur = next;
        }
    }

    #[test]
    fn canonical_families() {
        let f = UpdateFamily::new(1, vec![vec![vec![-1], vec![-2]], vec![vec![-1]], vec![vec![-1]]]).unwrap();
        assert_eq!(f.sets(), &[vec![vec![-1]]]);
        assert!(UpdateFamily::new(1, vec![vec![vec![0]]]).is_err());
        assert!(UpdateFamily::new(2, vec![vec![vec![1]]]).is_err());
        assert!(UpdateFamily::with_empty_set(2).contains_empty_set());
        assert_eq!(f.range(), 1);
    }

    #[test]
    fn step_examples() {
        let s = BPState::from_sites(w1(0, 5), BpBoundary::healthy(1), &[vec![0]]).unwrap();
        let mut cur = s.clone();
        for k in 1..=4 {
            cur = bp_step(&cur, &east()).unwrap();
            let want: Vec<bool> = (0..=5).map(|x| x <= k).collect();
            assert_eq!(cur.infected, want);
        }
        assert_eq!(bp_step(&s, &UpdateFamily::empty(1)).unwrap(), s);
        assert!(bp_step(&s, &UpdateFamily::with_empty_set(1)).unwrap().infected.iter().all(|v| *v));
    }

    #[test]
    fn closure_examples() {
        let ne = UpdateFamily::new(2, vec![vec![vec![-1, -1], vec![1, -1]]]).unwrap();
        let w = Window::centered(2, 4);
        let s = BPState::from_sites(w, BpBoundary::healthy(2), &[vec![0, 0]]).unwrap();
        assert_eq!(closure(&s, &ne).unwrap(), s);
        let s = BPState::from_sites(w1(0, 9), BpBoundary::healthy(1), &[vec![0]]).unwrap();
        assert!(closure(&s, &east()).unwrap().infected.iter().all(|v| *v));
        // an infected boundary feeds in from the left
        let s = BPState::healthy(w1(0, 9), BpBoundary::infected(1));
        assert!(closure(&s, &east()).unwrap().infected.iter().all(|v| *v));
    }

    #[test]
    fn closure_matches_reference_on_wide_windows() {
        let fam = UpdateFamily::new(2, vec![vec![vec![-1, 0], vec![0, -1]], vec![vec![1, 0], vec![0, 1], vec![2, 2]], vec![vec![0, 3]]]).unwrap();
        let w = Window::new(vec![-3, -2], vec![5, 140]).unwrap();
        for seed in 0..5 {
            let s = bernoulli_initial(&w, BpBoundary::healthy(2), 0.3, seed).unwrap();
            let c = closure(&s, &fam).unwrap();
            assert_eq!(c, ref_closure(&s, std::slice::from_ref(&fam), &|_| 0));
            let one = bp_step(&s, &fam).unwrap();
            assert_eq!(one, ref_step(&s, std::slice::from_ref(&fam), &|_| 0));
        }
    }

    #[test]
    fn mixed_faces() {
        let fam = UpdateFamily::new(2, vec![vec![vec![-1, 0]], vec![vec![0, 1]]]).unwrap();
        let w = Window::new(vec![0, 0], vec![3, 3]).unwrap();
        let b = BpBoundary {
            faces: vec![(Face::Healthy, Face::Healthy), (Face::Healthy, Face::Infected)],
        };
        let s = BPState::healthy(w, b);
        let c = closure(&s, &fam).unwrap();
        assert_eq!(c, ref_closure(&s, std::slice::from_ref(&fam), &|_| 0));
        assert!(c.infected.iter().all(|v| *v));
    }

    #[test]
    fn inhomogeneous_examples() {
        let w = w1(0, 20);
        let s = BPState::from_sites(w.clone(), BpBoundary::healthy(1), &[vec![0]]).unwrap();
        let run = inhomogeneous_run(&FamilyMeasure::dirac(east()), &s, 3).unwrap();
        assert_eq!(run.state, closure(&s, &east()).unwrap());
        let run = inhomogeneous_run(&FamilyMeasure::dirac(UpdateFamily::with_empty_set(1)), &s, 3).unwrap();
        assert!(run.state.infected.iter().all(|v| *v));
        let chi = FamilyMeasure::new(1, vec![(east(), q(1, 2)), (UpdateFamily::empty(1), q(1, 2))]).unwrap();
        let run = inhomogeneous_run(&chi, &s, 7).unwrap();
        let east_idx = chi.atoms().iter().position(|(f, _)| *f == east()).unwrap();
        // the interval grows until the first site with the empty family
        let stop = (1..=20).find(|&x| run.families[x as usize] != east_idx).unwrap_or(21);
        for x in 0..=20i64 {
            assert_eq!(run.state.infected[x as usize], x < stop, "x={x} stop={stop}");
        }
        assert_eq!(run.families[3], sampled_family(&chi, 7, &[3]));
    }

    #[test]
    fn bernoulli_examples() {
        let w = Window::new(vec![0, 0], vec![99, 99]).unwrap();
        let b = BpBoundary::healthy(2);
        assert_eq!(bernoulli_initial(&w, b.clone(), 0.0, 1).unwrap().count(), 0);
        assert_eq!(bernoulli_initial(&w, b.clone(), 1.0, 1).unwrap().count(), 10_000);
        let n = bernoulli_initial(&w, b.clone(), 0.3, 1).unwrap().count() as f64;
        assert!((n / 1e4 - 0.3).abs() < 4.0 * (0.21f64 / 1e4).sqrt());
        assert!(bernoulli_initial(&w, b, 1.2, 1).is_err());
        // window independent
        let small = bernoulli_initial(&Window::new(vec![5, 5], vec![9, 9]).unwrap(), BpBoundary::healthy(2), 0.5, 4).unwrap();
        let big = bernoulli_initial(&w, BpBoundary::healthy(2), 0.5, 4).unwrap();
        for p in small.window.points() {
            assert_eq!(small.get(&p), big.get(&p));
        }
    }

    #[test]
    fn infection_curve_examples() {
        let ne = UpdateFamily::new(2, vec![vec![vec![-1, -1], vec![1, -1]]]).unwrap();
        let w = Window::centered(2, 10);
        let c = infection_time_curve(&ne, 1.0, &w, 5, 100, 1).unwrap();
        assert!(c.iter().all(|e| e.mean == 0.0));
        let c = infection_time_curve(&UpdateFamily::with_empty_set(2), 0.2, &w, 5, 100, 1).unwrap();
        assert!(c[1..].iter().all(|e| e.mean == 0.0));
        let c = infection_time_curve(&ne, 0.5, &w, 1, 100_000, 3).unwrap();
        assert!((c[1].mean - 0.375).abs() < 4.0 * c[1].stderr, "{:?}", c[1]);
        assert!((c[0].mean - 0.5).abs() < 4.0 * c[0].stderr);
        assert!(matches!(infection_time_curve(&ne, 0.5, &w, 11, 10, 1), Err(Error::Margin { .. })));
    }

    #[test]
    fn infection_curve_matches_full_window_runs() {
        let ne = UpdateFamily::new(2, vec![vec![vec![-1, -1], vec![1, -1]], vec![vec![0, -2]]]).unwrap();
        let t_max = 6;
        let w = Window::centered(2, 2 * t_max);
        let reps = 300;
        let curve = infection_time_curve(&ne, 0.4, &w, t_max, reps, 9).unwrap();
        let mut healthy = vec![0u64; t_max as usize + 1];
        for i in 0..reps {
            let s = crate::field::replica_seed(9, i);
            let mut st = bernoulli_initial(&w, BpBoundary::healthy(2), 0.4, s).unwrap();
            for t in 0..=t_max {
                if t > 0 {
                    st = bp_step(&st, &ne).unwrap();
                }
                if !st.get(&[0, 0]) {
                    healthy[t as usize] += 1;
                }
            }
        }
        for t in 0..=t_max as usize {
            assert_eq!(curve[t].hits, healthy[t], "t={t}");
        }
    }

    fn family_strategy() -> impl Strategy<Value = UpdateFamily> {
        let vecs = proptest::collection::vec((-2i64..=2, -2i64..=2), 1..3);
        proptest::collection::vec(vecs, 0..4).prop_map(|sets| {
            let sets = sets
                .into_iter()
                .map(|s| s.into_iter().filter(|&(a, b)| (a, b) != (0, 0)).map(|(a, b)| vec![a, b]).collect::<Vec<_>>())
                .filter(|s: &Vec<Vec<i64>>| !s.is_empty())
                .collect();
            UpdateFamily::new(2, sets).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn closure_properties(f in family_strategy(), extra in proptest::collection::vec((-2i64..=2, -2i64..=2), 1..3), seed in any::<u64>()) {
            let w = Window::new(vec![-6, -6], vec![6, 70]).unwrap();
            let s = bernoulli_initial(&w, BpBoundary::healthy(2), 0.15, seed).unwrap();
            let c = closure(&s, &f).unwrap();
            prop_assert_eq!(&c, &ref_closure(&s, std::slice::from_ref(&f), &|_| 0));
            prop_assert_eq!(&closure(&c, &f).unwrap(), &c);
            let one = bp_step(&s, &f).unwrap();
            prop_assert!(s.is_subset(&one));
            // a larger initial set and a larger family both enlarge the closure
            let more = bernoulli_initial(&w, BpBoundary::healthy(2), 0.25, seed).unwrap();
            prop_assert!(s.is_subset(&more));
            prop_assert!(c.is_subset(&closure(&more, &f).unwrap()));
            let mut sets = f.sets().to_vec();
            let e: Vec<Vec<i64>> = extra.into_iter().filter(|&(a, b)| (a, b) != (0, 0)).map(|(a, b)| vec![a, b]).collect();
            prop_assume!(!e.is_empty());
            sets.push(e);
            let bigger = UpdateFamily::new(2, sets).unwrap();
            prop_assert!(c.is_subset(&closure(&s, &bigger).unwrap()));
        }

        #[test]
        fn inhomogeneous_matches_reference(seed in any::<u64>()) {
            let a = UpdateFamily::new(2, vec![vec![vec![-1, 0]], vec![vec![0, -1], vec![1, -1]]]).unwrap();
            let b = UpdateFamily::new(2, vec![vec![vec![1, 1], vec![-1, 1]]]).unwrap();
            let chi = FamilyMeasure::new(2, vec![(a, q(1, 3)), (b, q(1, 2)), (UpdateFamily::empty(2), q(1, 6))]).unwrap();
            let w = Window::new(vec![-5, -5], vec![5, 5]).unwrap();
            let s = bernoulli_initial(&w, BpBoundary::infected(2), 0.1, seed).unwrap();
            let run = inhomogeneous_run(&chi, &s, seed).unwrap();
            let fams: Vec<UpdateFamily> = chi.atoms().iter().map(|(f, _)| f.clone()).collect();
            let want = ref_closure(&s, &fams, &|x| run.families[w.index(x).unwrap()]);
            prop_assert_eq!(run.state, want);
        }

        #[test]
        fn curve_monotone_in_q(seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = (a.min(b), a.max(b));
            let ne = UpdateFamily::new(2, vec![vec![vec![-1, -1], vec![1, -1]]]).unwrap();
            let w = Window::centered(2, 8);
            let cl = infection_time_curve(&ne, lo, &w, 8, 50, seed).unwrap();
            let ch = infection_time_curve(&ne, hi, &w, 8, 50, seed).unwrap();
            for t in 0..=8 {
                prop_assert!(ch[t].hits <= cl[t].hits);
            }
        }
    }
}
