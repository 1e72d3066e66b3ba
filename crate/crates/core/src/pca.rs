//! The graphical construction of an attractive PCA.
//!
//! Time convention: the initial slab occupies times `1 - depth ..= 0` and
//! fields are read at times `t >= 1`. In site-set arguments a slab time is
//! written `s` in `-depth ..= -1`, with `s = -1` the most recent row (time 0).

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use num_traits::{One, Zero};
use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::exact::{qi, Poly, Q};
use crate::field::{mix, replica_seed, Field, FieldSample};
use crate::lattice::{read_shifted, Layout, Window};
use crate::rates::{LinearCurve, RatesMeasure};
use crate::upset::{Neighborhood, SiteSet, UpFamily};

/// Limit on the number of field assignments enumerated exactly.
pub const EXHAUSTIVE_CAP: f64 = (1u64 << 26) as f64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    AllZero,
    AllOne,
    Periodic,
}

/// States on `window x {1-depth..=0}` plus a boundary rule.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    pub window: Window,
    pub depth: usize,
    pub boundary: Boundary,
    /// `slab[k]` is the row at time `k + 1 - depth`.
    slab: Vec<Vec<bool>>,
}

impl Configuration {
    pub fn filled(nbhd: &Neighborhood, window: Window, boundary: Boundary, v: bool) -> Result<Self> {
        if window.dim() != nbhd.d {
            return domain("window dimension differs from the neighborhood");
        }
        let depth = nbhd.depth() as usize;
        let n = window.volume();
        Ok(Configuration {
            window,
            depth,
            boundary,
            slab: vec![vec![v; n]; depth],
        })
    }

    pub fn ones(nbhd: &Neighborhood, window: Window, boundary: Boundary) -> Result<Self> {
        Self::filled(nbhd, window, boundary, true)
    }

    pub fn zeros(nbhd: &Neighborhood, window: Window, boundary: Boundary) -> Result<Self> {
        Self::filled(nbhd, window, boundary, false)
    }

    /// Ones exactly on the given `(x, s)` sites, `s` in `-depth..=-1`.
    pub fn from_sites(nbhd: &Neighborhood, window: Window, boundary: Boundary, sites: &[(Vec<i64>, i64)]) -> Result<Self> {
        let mut c = Self::zeros(nbhd, window, boundary)?;
        for (x, s) in sites {
            c.set(x, *s, true)?;
        }
        Ok(c)
    }

    fn index(&self, x: &[i64]) -> Option<usize> {
        self.window.index(x)
    }

    fn slab_row(&self, s: i64) -> Option<usize> {
        let k = self.depth as i64 + s;
        (s < 0 && k >= 0).then_some(k as usize)
    }

    pub fn set(&mut self, x: &[i64], s: i64, v: bool) -> Result<()> {
        match (self.index(x), self.slab_row(s)) {
            (Some(i), Some(k)) => {
                self.slab[k][i] = v;
                Ok(())
            }
            _ => domain(format!("site {x:?} at slab time {s} outside the configuration")),
        }
    }

    /// State at `(x, s)` with the boundary rule applied outside the window.
    pub fn get(&self, x: &[i64], s: i64) -> bool {
        let k = self.slab_row(s).expect("slab time");
        match self.index(x) {
            Some(i) => self.slab[k][i],
            None => match self.boundary {
                Boundary::AllZero => false,
                Boundary::AllOne => true,
                Boundary::Periodic => {
                    let y: Vec<i64> = x
                        .iter()
                        .enumerate()
                        .map(|(i, v)| (v - self.window.lo[i]).rem_euclid(self.window.side(i)) + self.window.lo[i])
                        .collect();
                    self.slab[k][self.index(&y).unwrap()]
                }
            },
        }
    }

    /// Appends a new most recent row, dropping the oldest.
    pub fn push_row(&mut self, row: Vec<bool>) {
        self.slab.remove(0);
        self.slab.push(row);
    }

    pub fn row(&self, s: i64) -> &[bool] {
        &self.slab[self.slab_row(s).expect("slab time")]
    }

    pub fn is_zero(&self) -> bool {
        self.slab.iter().all(|r| r.iter().all(|v| !v))
    }
}

/// One synchronous update of every window site, evaluated site by site.
pub fn step(nbhd: &Neighborhood, prev: &Configuration, field_row: &dyn Fn(&[i64]) -> Option<UpFamily>) -> Result<Vec<bool>> {
    let sites = nbhd.sites();
    let mut out = Vec::with_capacity(prev.window.volume());
    for x in prev.window.points() {
        let f = field_row(&x).ok_or_else(|| Error::Domain(format!("no field entry at {x:?}")))?;
        let mut y = 0u64;
        for (i, s) in sites.iter().enumerate() {
            let z: Vec<i64> = x.iter().zip(s).map(|(a, b)| a + b).collect();
            if prev.get(&z, s[nbhd.d]) {
                y |= 1 << i;
            }
        }
        out.push(f.holds(SiteSet(y)));
    }
    Ok(out)
}

/// An up-family rule compiled to bit-plane operations.
#[derive(Clone, Debug)]
pub struct Rule {
    nbhd: Neighborhood,
    families: Vec<UpFamily>,
    /// `(time lag, spatial offset)` of every site used.
    planes: Vec<(usize, Vec<i64>)>,
    atoms: Vec<Vec<Vec<usize>>>,
}

impl Rule {
    pub fn new(nbhd: Neighborhood, families: Vec<UpFamily>) -> Result<Self> {
        let mut used = 0u64;
        for f in &families {
            if f.neighborhood() != nbhd {
                return domain("family over a different neighborhood");
            }
            for m in f.minimal_sets() {
                used |= m.0;
            }
        }
        let bits: Vec<usize> = SiteSet(used).iter().collect();
        let planes = bits
            .iter()
            .map(|&i| {
                let s = nbhd.site(i);
                ((-s[nbhd.d]) as usize, s[..nbhd.d].to_vec())
            })
            .collect();
        let atoms = families
            .iter()
            .map(|f| {
                f.minimal_sets()
                    .iter()
                    .map(|m| m.iter().map(|i| bits.iter().position(|&b| b == i).unwrap()).collect())
                    .collect()
            })
            .collect();
        Ok(Rule {
            nbhd,
            families,
            planes,
            atoms,
        })
    }

    pub fn for_measure(m: &RatesMeasure) -> Self {
        let families = m.atoms().iter().map(|(f, _)| f.clone()).collect();
        Rule::new(m.neighborhood(), families).expect("measure families share the neighborhood")
    }

    pub fn neighborhood(&self) -> Neighborhood {
        self.nbhd
    }

    pub fn families(&self) -> &[UpFamily] {
        &self.families
    }
}

/// Bit-packed stepping state for one run.
pub struct Engine<'a, F: Field> {
    rule: &'a Rule,
    field: &'a F,
    layout: Layout,
    boundary: Boundary,
    depth: usize,
    ring: Vec<Vec<u64>>,
    pairs: Vec<((usize, u32), (usize, u32))>,
    offsets: Vec<(isize, i64, usize)>,
    planes: Vec<u64>,
    vals: Vec<u64>,
    srcs: Vec<usize>,
    rows: Vec<usize>,
    prefix: Vec<i64>,
    last_t: i64,
}

impl<'a, F: Field> Engine<'a, F> {
    pub fn new(rule: &'a Rule, field: &'a F, init: &Configuration) -> Result<Self> {
        let nbhd = rule.nbhd;
        if init.window.dim() != nbhd.d || init.depth != nbhd.depth() as usize {
            return domain("configuration does not match the neighborhood");
        }
        if field.atom_count() != rule.families.len() {
            return domain("field and rule disagree on the number of atoms");
        }
        let pad = vec![nbhd.r; nbhd.d];
        let layout = Layout::new(&init.window, &pad)?;
        let fill = init.boundary == Boundary::AllOne;
        let template = layout.template(|_| fill);
        let pairs = if init.boundary == Boundary::Periodic {
            layout.periodic_pairs()
        } else {
            Vec::new()
        };
        let depth = init.depth;
        let mut ring = vec![template; depth + 1];
        let points = init.window.points();
        for k in 0..depth {
            let t = k as i64 + 1 - depth as i64;
            let slot = t.rem_euclid(depth as i64 + 1) as usize;
            let buf = &mut ring[slot];
            for (i, p) in points.iter().enumerate() {
                if init.slab[k][i] {
                    layout.set(buf, p, true);
                }
            }
            apply_pairs(buf, &pairs);
        }
        let offsets = rule
            .planes
            .iter()
            .map(|(dt, y)| {
                let (wd, bd) = layout.offset(y);
                (wd, bd, *dt)
            })
            .collect();
        Ok(Engine {
            rule,
            field,
            layout,
            boundary: init.boundary,
            depth,
            ring,
            pairs,
            offsets,
            planes: vec![0; rule.planes.len()],
            vals: vec![0; rule.families.len()],
            srcs: Vec::new(),
            rows: Vec::new(),
            prefix: Vec::new(),
            last_t: 0,
        })
    }

    fn slot(&self, t: i64) -> usize {
        t.rem_euclid(self.depth as i64 + 1) as usize
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Computes the row at time `t`, optionally only on cells of `active`.
    pub fn step(&mut self, t: i64, active: Option<&Window>) {
        debug_assert_eq!(t, self.last_t + 1);
        self.last_t = t;
        let dst_slot = self.slot(t);
        let mut dst = std::mem::take(&mut self.ring[dst_slot]);
        let mut rows = std::mem::take(&mut self.rows);
        let mut prefix = std::mem::take(&mut self.prefix);
        self.srcs.clear();
        for k in 0..self.offsets.len() {
            let s = self.slot(t - self.offsets[k].2 as i64);
            self.srcs.push(s);
        }
        if let Some(span) = self.layout.active_rows(active, &mut rows) {
            for &row in &rows {
                self.layout.row_prefix_into(row, &mut prefix);
                let frow = self.field.row(&prefix, t);
                self.step_row(&mut dst, row, span, frow);
            }
        }
        apply_pairs(&mut dst, &self.pairs);
        self.ring[dst_slot] = dst;
        self.rows = rows;
        self.prefix = prefix;
    }

    #[inline]
    fn step_row(&mut self, dst: &mut [u64], row: usize, span: (usize, usize), frow: F::Row) {
        let start = self.layout.row_start(row);
        let single = self.rule.families.len() == 1;
        for w in span.0..span.1 {
            let imask = self.layout.interior_mask(w);
            if imask == 0 {
                continue;
            }
            let idx = start + w;
            for (k, &(wd, bd, _)) in self.offsets.iter().enumerate() {
                self.planes[k] = read_shifted(&self.ring[self.srcs[k]], idx, wd, bd);
            }
            let mut cand = 0u64;
            let mut cert = !0u64;
            for (a, sets) in self.rule.atoms.iter().enumerate() {
                let mut v = 0u64;
                for m in sets {
                    let mut acc = !0u64;
                    for &k in m {
                        acc &= self.planes[k];
                    }
                    v |= acc;
                }
                self.vals[a] = v;
                cand |= v;
                cert &= v;
            }
            let res = if single {
                self.vals[0]
            } else {
                let mut res = cert;
                let mut todo = cand & !cert & imask;
                while todo != 0 {
                    let b = todo.trailing_zeros();
                    todo &= todo - 1;
                    let a = self.field.atom(frow, self.layout.last_coord(w, b));
                    res |= self.vals[a] & (1 << b);
                }
                res
            };
            dst[idx] = (dst[idx] & !imask) | (res & imask);
        }
    }

    /// State at `(x, t)` for one of the last `depth + 1` times.
    pub fn get(&self, x: &[i64], t: i64) -> bool {
        self.layout.get(&self.ring[self.slot(t)], x)
    }

    /// Whether the row at time `t` has no ones in the window (or in `within`).
    pub fn row_is_zero(&mut self, t: i64, within: Option<&Window>) -> bool {
        let buf = &self.ring[self.slot(t)];
        let mut rows = std::mem::take(&mut self.rows);
        let zero = match self.layout.active_rows(within, &mut rows) {
            None => true,
            Some((w0, w1)) => rows
                .iter()
                .all(|&row| (w0..w1).all(|w| buf[self.layout.row_start(row) + w] & self.layout.interior_mask(w) == 0)),
        };
        self.rows = rows;
        zero
    }

    pub fn row_bools(&self, t: i64) -> Vec<bool> {
        let buf = &self.ring[self.slot(t)];
        self.layout.window.points().iter().map(|p| self.layout.get(buf, lift0(p, self.layout.d))).collect()
    }
}

fn lift0(p: &[i64], d: usize) -> &[i64] {
    if d == 0 {
        &[]
    } else {
        p
    }
}

fn apply_pairs(buf: &mut [u64], pairs: &[((usize, u32), (usize, u32))]) {
    for &((dw, db), (sw, sb)) in pairs {
        let v = buf[sw] >> sb & 1;
        buf[dw] = (buf[dw] & !(1 << db)) | (v << db);
    }
}

/// A run of the PCA on a window.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub window: Window,
    /// Time of the first stored row (the oldest slab row).
    pub t0: i64,
    pub t_max: i64,
    rows: Vec<Vec<bool>>,
}

impl Trajectory {
    pub fn get(&self, x: &[i64], t: i64) -> bool {
        let i = self.window.index(x).expect("point in window");
        self.rows[(t - self.t0) as usize][i]
    }

    pub fn row(&self, t: i64) -> &[bool] {
        &self.rows[(t - self.t0) as usize]
    }

    /// Plain-text header followed by one run-length line per time.
    pub fn export_rle(&self, seed: u64, measure: &RatesMeasure) -> String {
        let mut s = String::new();
        writeln!(s, "# pcabp-trajectory v1").unwrap();
        writeln!(s, "window_lo {:?}", self.window.lo).unwrap();
        writeln!(s, "window_hi {:?}", self.window.hi).unwrap();
        writeln!(s, "times {} {}", self.t0, self.t_max).unwrap();
        writeln!(s, "seed {seed}").unwrap();
        writeln!(s, "measure {:016x}", measure_hash(measure)).unwrap();
        for row in &self.rows {
            let mut line = String::new();
            let mut i = 0;
            while i < row.len() {
                let v = row[i];
                let mut j = i;
                while j < row.len() && row[j] == v {
                    j += 1;
                }
                write!(line, "{}{}", j - i, if v { 'o' } else { 'b' }).unwrap();
                i = j;
            }
            writeln!(s, "{line}").unwrap();
        }
        s
    }

    pub fn parse_rle(text: &str) -> Result<Trajectory> {
        let bad = |m: &str| Error::Parse(format!("trajectory: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some("# pcabp-trajectory v1") {
            return Err(bad("missing header"));
        }
        let vec_field = |l: Option<&str>, key: &str| -> Result<Vec<i64>> {
            let l = l.ok_or_else(|| bad("truncated header"))?;
            let body = l.strip_prefix(key).ok_or_else(|| bad(key))?.trim();
            let body = body.trim_start_matches('[').trim_end_matches(']');
            body.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse().map_err(|_| bad(key)))
                .collect()
        };
        let lo = vec_field(lines.next(), "window_lo")?;
        let hi = vec_field(lines.next(), "window_hi")?;
        let times: Vec<i64> = lines
            .next()
            .and_then(|l| l.strip_prefix("times "))
            .ok_or_else(|| bad("times"))?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad("times")))
            .collect::<Result<_>>()?;
        lines.next();
        lines.next();
        let window = Window::new(lo, hi)?;
        let mut rows = Vec::new();
        for l in lines {
            let mut row = Vec::with_capacity(window.volume());
            let mut num = 0usize;
            for c in l.chars() {
                match c {
                    '0'..='9' => num = num * 10 + c.to_digit(10).unwrap() as usize,
                    'o' | 'b' => {
                        row.extend(std::iter::repeat_n(c == 'o', num));
                        num = 0;
                    }
                    _ => return Err(bad("row")),
                }
            }
            if row.len() != window.volume() {
                return Err(bad("row length"));
            }
            rows.push(row);
        }
        Ok(Trajectory {
            window,
            t0: times[0],
            t_max: times[1],
            rows,
        })
    }
}

/// Stable 64-bit fingerprint of a measure.
pub fn measure_hash(m: &RatesMeasure) -> u64 {
    let mut text = format!("{:?}", m.neighborhood());
    for (f, w) in m.atoms() {
        write!(text, "|{f}:{w}").unwrap();
    }
    text.bytes().fold(0x243F_6A88_85A3_08D3u64, |h, b| mix(h ^ b as u64))
}

/// Runs a rule against an arbitrary field and records every row.
pub fn simulate_with<F: Field>(rule: &Rule, field: &F, initial: &Configuration, t_max: i64) -> Result<Trajectory> {
    if t_max < 1 {
        return domain("horizon must be at least 1");
    }
    let mut e = Engine::new(rule, field, initial)?;
    let depth = initial.depth as i64;
    let mut rows: Vec<Vec<bool>> = initial.slab.clone();
    for t in 1..=t_max {
        e.step(t, None);
        rows.push(e.row_bools(t));
    }
    Ok(Trajectory {
        window: initial.window.clone(),
        t0: 1 - depth,
        t_max,
        rows,
    })
}

pub fn simulate(measure: &RatesMeasure, initial: &Configuration, t_max: i64, seed: u64) -> Result<Trajectory> {
    let rule = Rule::for_measure(measure);
    let field = FieldSample::new(measure, seed);
    simulate_with(&rule, &field, initial, t_max)
}

/// Monte Carlo mean of an indicator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub hits: u64,
    pub replicas: u64,
}

impl Estimate {
    pub fn from_counts(hits: u64, replicas: u64) -> Self {
        let n = replicas.max(1) as f64;
        let mean = hits as f64 / n;
        Estimate {
            mean,
            stderr: (mean * (1.0 - mean) / n).sqrt(),
            hits,
            replicas,
        }
    }
}

/// Sums per-replica count vectors; independent of the thread count.
pub(crate) fn par_counts<G>(replicas: u64, width: usize, seed: u64, g: G) -> Vec<u64>
where
    G: Fn(u64, &mut [u64]) + Sync,
{
    (0..replicas)
        .into_par_iter()
        .fold(
            || vec![0u64; width],
            |mut acc, i| {
                g(replica_seed(seed, i), &mut acc);
                acc
            },
        )
        .reduce(
            || vec![0u64; width],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        )
}

fn origin(d: usize) -> Vec<i64> {
    vec![0; d]
}

/// `P(eta^1_0(n) = 1)` from runs restricted to the light cone of the origin.
pub fn theta_estimate(measure: &RatesMeasure, n: i64, replicas: u64, seed: u64) -> Result<Estimate> {
    let nb = measure.neighborhood();
    theta_in_window(measure, n, &Window::centered(nb.d, nb.r * n), Boundary::AllZero, replicas, seed)
}

/// Same as [`theta_estimate`] on a given window and boundary.
///
/// When the window holds the light cone the run is exact for the infinite
/// lattice; otherwise the boundary rule decides what lies outside.
pub fn theta_in_window(measure: &RatesMeasure, n: i64, window: &Window, boundary: Boundary, replicas: u64, seed: u64) -> Result<Estimate> {
    if replicas == 0 {
        return domain("replicas must be positive");
    }
    if n < 1 {
        return domain("horizon must be at least 1");
    }
    let nb = measure.neighborhood();
    let rule = Rule::for_measure(measure);
    let init = Configuration::ones(&nb, window.clone(), boundary)?;
    let cone_fits = window.contains_window(&Window::centered(nb.d, nb.r * n));
    let o = origin(nb.d);
    let base = FieldSample::new(measure, 0);
    let absorbing = measure.is_absorbing();
    let depth = nb.depth();
    let hits = par_counts(replicas, 1, seed, |s, acc| {
        let mut field = base.clone();
        field.reseed(s);
        let mut e = Engine::new(&rule, &field, &init).expect("valid configuration");
        let mut zero_run = 0;
        for t in 1..=n {
            let cone = cone_fits.then(|| Window::centered(nb.d, nb.r * (n - t)));
            e.step(t, cone.as_ref());
            if absorbing {
                zero_run = if e.row_is_zero(t, cone.as_ref()) { zero_run + 1 } else { 0 };
                if zero_run >= depth {
                    return;
                }
            }
        }
        if e.get(&o, n) {
            acc[0] += 1;
        }
    });
    Ok(Estimate::from_counts(hits[0], replicas))
}

/// `theta_t` for every `t` in `0..=n_max` from shared runs.
pub fn theta_curve(measure: &RatesMeasure, n_max: i64, replicas: u64, seed: u64) -> Result<Vec<Estimate>> {
    if replicas == 0 {
        return domain("replicas must be positive");
    }
    if n_max < 1 {
        return domain("horizon must be at least 1");
    }
    let nb = measure.neighborhood();
    let rule = Rule::for_measure(measure);
    let init = Configuration::ones(&nb, Window::centered(nb.d, nb.r * n_max), Boundary::AllZero)?;
    let o = origin(nb.d);
    let base = FieldSample::new(measure, 0);
    let width = n_max as usize + 1;
    let counts = par_counts(replicas, width, seed, |s, acc| {
        let mut field = base.clone();
        field.reseed(s);
        let mut e = Engine::new(&rule, &field, &init).expect("valid configuration");
        acc[0] += 1;
        for t in 1..=n_max {
            // cells farther than r (n_max - t) never reach the origin later
            let cone = Window::centered(nb.d, nb.r * (n_max - t));
            e.step(t, Some(&cone));
            if e.get(&o, t) {
                acc[t as usize] += 1;
            }
        }
    });
    Ok(counts.into_iter().map(|h| Estimate::from_counts(h, replicas)).collect())
}

/// Exact `theta_n` for a fixed measure.
pub fn exhaustive_theta(measure: &RatesMeasure, n: i64) -> Result<Q> {
    let counts = exhaustive_counts(measure.neighborhood(), &Rule::for_measure(measure), n)?;
    let weights: Vec<Q> = measure.atoms().iter().map(|(_, w)| w.clone()).collect();
    let mut total = Q::zero();
    for (c, mult) in counts {
        let mut term = qi(mult as i64);
        for (a, &k) in c.iter().enumerate() {
            for _ in 0..k {
                term *= &weights[a];
            }
        }
        total += term;
    }
    Ok(total)
}

/// `theta_n(p)` along a linear death curve, as a polynomial in `p`.
pub fn exhaustive_theta_poly(curve: &LinearCurve, n: i64) -> Result<Poly> {
    let base = curve.base();
    let nb = base.neighborhood();
    // every family of the curve, with its weight as a polynomial in p
    let mut families: Vec<UpFamily> = base.atoms().iter().map(|(f, _)| f.clone()).collect();
    let empty = UpFamily::empty(nb);
    if !families.contains(&empty) {
        families.push(empty.clone());
    }
    let weights: Vec<Poly> = families
        .iter()
        .map(|f| {
            let w = base.weight_of(f);
            let lin = Poly::x().scale(&w);
            if *f == empty {
                &(&lin + &Poly::constant(Q::one())) - &Poly::x()
            } else {
                lin
            }
        })
        .collect();
    let rule = Rule::new(nb, families)?;
    let counts = exhaustive_counts(nb, &rule, n)?;
    let mut total = Poly::default();
    for (c, mult) in counts {
        let mut term = Poly::constant(qi(mult as i64));
        for (a, &k) in c.iter().enumerate() {
            term = &term * &weights[a].pow(k as usize);
        }
        total = &total + &term;
    }
    Ok(total)
}

/// Number of field assignments on the cone, grouped by atom counts, for which
/// the origin is one at time `n`.
fn exhaustive_counts(nb: Neighborhood, rule: &Rule, n: i64) -> Result<HashMap<Vec<u32>, u64>> {
    if n < 1 {
        return domain("horizon must be at least 1");
    }
    let k = rule.families.len();
    let layers: Vec<Vec<Vec<i64>>> = (1..=n).map(|t| Window::centered(nb.d, nb.r * (n - t)).points()).collect();
    let sites: usize = layers.iter().map(|l| l.len()).sum();
    let size = (k.max(1) as f64).powi(sites as i32);
    if size > EXHAUSTIVE_CAP {
        return Err(Error::Capacity {
            what: "exhaustive field assignments".into(),
            needed: size.min(usize::MAX as f64) as usize,
            limit: EXHAUSTIVE_CAP as usize,
        });
    }
    let mut out = HashMap::new();
    if k == 0 {
        return Ok(out);
    }
    let sites_r = nb.sites();
    let mut history: Vec<HashMap<Vec<i64>, bool>> = Vec::new();
    let mut counts = vec![0u32; k];
    exhaustive_rec(&nb, rule, &layers, &sites_r, 0, &mut history, &mut counts, &mut out);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn exhaustive_rec(
    nb: &Neighborhood,
    rule: &Rule,
    layers: &[Vec<Vec<i64>>],
    sites_r: &[Vec<i64>],
    level: usize,
    history: &mut Vec<HashMap<Vec<i64>, bool>>,
    counts: &mut [u32],
    out: &mut HashMap<Vec<u32>, u64>,
) {
    let k = rule.families.len();
    let layer = &layers[level];
    // neighborhood sets of the layer sites do not depend on this layer's field
    let ys: Vec<SiteSet> = layer
        .iter()
        .map(|x| {
            let mut y = 0u64;
            for (i, s) in sites_r.iter().enumerate() {
                let lag = (-s[nb.d]) as usize;
                let z: Vec<i64> = x.iter().zip(s).map(|(a, b)| a + b).collect();
                let v = if lag > history.len() {
                    true
                } else {
                    history[history.len() - lag][&z]
                };
                if v {
                    y |= 1 << i;
                }
            }
            SiteSet(y)
        })
        .collect();
    let table: Vec<Vec<bool>> = ys.iter().map(|&y| rule.families.iter().map(|f| f.holds(y)).collect()).collect();
    let m = layer.len();
    let mut assign = vec![0usize; m];
    loop {
        for &a in &assign {
            counts[a] += 1;
        }
        if level + 1 == layers.len() {
            if table[0][assign[0]] {
                *out.entry(counts.to_vec()).or_insert(0) += 1;
            }
        } else {
            let row: HashMap<Vec<i64>, bool> = layer
                .iter()
                .enumerate()
                .map(|(i, x)| (x.clone(), table[i][assign[i]]))
                .collect();
            history.push(row);
            exhaustive_rec(nb, rule, layers, sites_r, level + 1, history, counts, out);
            history.pop();
        }
        for &a in &assign {
            counts[a] -= 1;
        }
        let mut i = 0;
        loop {
            if i == m {
                return;
            }
            assign[i] += 1;
            if assign[i] < k {
                break;
            }
            assign[i] = 0;
            i += 1;
        }
    }
}

/// Survival curve of the process started from ones on `a`.
///
/// Entry `t` estimates the probability that the state at time `t` (its last
/// `depth` rows) is not identically zero.
pub fn survival_from(
    measure: &RatesMeasure,
    window: &Window,
    a: &[(Vec<i64>, i64)],
    t_max: i64,
    replicas: u64,
    seed: u64,
) -> Result<Vec<Estimate>> {
    if replicas == 0 {
        return domain("replicas must be positive");
    }
    let nb = measure.neighborhood();
    let init = Configuration::from_sites(&nb, window.clone(), Boundary::AllZero, a)?;
    if a.is_empty() {
        return Ok((0..=t_max).map(|_| Estimate::from_counts(0, replicas)).collect());
    }
    let d = nb.d;
    let lo: Vec<i64> = (0..d).map(|i| a.iter().map(|(x, _)| x[i]).min().unwrap()).collect();
    let hi: Vec<i64> = (0..d).map(|i| a.iter().map(|(x, _)| x[i]).max().unwrap()).collect();
    let need = nb.r * t_max;
    let have = (0..d)
        .map(|i| (lo[i] - window.lo[i]).min(window.hi[i] - hi[i]))
        .min()
        .unwrap_or(i64::MAX);
    if have < need {
        return Err(Error::Margin { needed: need, have });
    }
    let rule = Rule::for_measure(measure);
    let base = FieldSample::new(measure, 0);
    let absorbing = measure.is_absorbing();
    let depth = nb.depth();
    let width = t_max as usize + 1;
    let counts = par_counts(replicas, width, seed, |s, acc| {
        let mut field = base.clone();
        field.reseed(s);
        let mut e = Engine::new(&rule, &field, &init).expect("valid configuration");
        acc[0] += 1;
        let mut zero_run = 0i64;
        for t in 1..=t_max {
            let reach = Window::new(lo.iter().map(|v| v - nb.r * t).collect(), hi.iter().map(|v| v + nb.r * t).collect()).unwrap();
            e.step(t, Some(&reach));
            if e.row_is_zero(t, Some(&reach)) {
                zero_run += 1;
            } else {
                zero_run = 0;
            }
            if zero_run < depth {
                acc[t as usize] += 1;
            } else if absorbing {
                break;
            }
        }
    });
    Ok(counts.into_iter().map(|h| Estimate::from_counts(h, replicas)).collect())
}

/// Directed-path description of GOSP from a single occupied origin.
///
/// True iff `(x, t)` is reached from `(0, 0)` by steps in `-X` through sites
/// whose sampled family is not empty.
pub fn gosp_path_oracle(x_set: SiteSet, field: &FieldSample, target: (&[i64], i64)) -> Result<bool> {
    let fams = field.sampler().families();
    let nb = match fams.first() {
        Some(f) => f.neighborhood(),
        None => return domain("empty measure"),
    };
    let mut path = None;
    for f in fams {
        if f.is_empty_family() {
            continue;
        }
        if path.is_some() || !f.minimal_sets().iter().all(|m| m.len() == 1) {
            return domain("not a GOSP measure");
        }
        path = Some(f);
    }
    let path = path.ok_or_else(|| Error::Domain("GOSP measure needs an open atom".into()))?;
    let union = path.minimal_sets().iter().fold(0u64, |a, m| a | m.0);
    if union != x_set.0 {
        return domain("set does not match the path family of the field");
    }
    let steps: Vec<Vec<i64>> = nb.sites_of(x_set);
    let (tx, tt) = target;
    if tt < 0 {
        return Ok(false);
    }
    let mut reached: Vec<HashSet<Vec<i64>>> = vec![HashSet::from([origin(nb.d)])];
    for t in 1..=tt {
        let mut cur = HashSet::new();
        let box_t = Window::centered(nb.d, nb.r * t);
        for p in box_t.points() {
            if field.family_at(&p, t).is_empty_family() {
                continue;
            }
            let ok = steps.iter().any(|y| {
                let s = t + y[nb.d];
                if s < 0 {
                    return false;
                }
                let q: Vec<i64> = p.iter().zip(y).map(|(a, b)| a + b).collect();
                reached[s as usize].contains(&q)
            });
            if ok {
                cur.insert(p);
            }
        }
        reached.push(cur);
    }
    Ok(reached[tt as usize].contains(tx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{q, Prob};
    use crate::field::ExplicitField;
    use crate::rates::{gosp, osp, toom_majority, toom_with_death, with_death};
    use crate::upset::make_upfamily;
    use proptest::prelude::*;

    fn pr(x: f64) -> Prob {
        Prob::from_f64(x).unwrap()
    }

    /// Runs the site-by-site reference stepper.
    fn reference<F: Field>(rule: &Rule, field: &F, init: &Configuration, t_max: i64) -> Vec<Vec<bool>> {
        let mut c = init.clone();
        let mut out = Vec::new();
        for t in 1..=t_max {
            let row = step(&rule.nbhd, &c, &|x| Some(rule.families[field.atom_at(x, t)].clone())).unwrap();
            out.push(row.clone());
            c.push_row(row);
        }
        out
    }

    #[test]
    fn step_examples() {
        let nb = toom_majority().neighborhood();
        let w = Window::centered(2, 3);
        let ones = Configuration::ones(&nb, w.clone(), Boundary::AllZero).unwrap();
        let t = toom_majority();
        let row = step(&nb, &ones, &|_| Some(t.clone())).unwrap();
        // the top and right edges see zeros beyond the window
        let pts = w.points();
        for (p, v) in pts.iter().zip(&row) {
            let edge = p[0] == 3 && p[1] == 3;
            assert_eq!(*v, !edge, "{p:?}");
        }
        let ones_one = Configuration::ones(&nb, w.clone(), Boundary::AllOne).unwrap();
        assert!(step(&nb, &ones_one, &|_| Some(t.clone())).unwrap().iter().all(|v| *v));
        let dead = step(&nb, &ones_one, &|_| Some(UpFamily::empty(nb))).unwrap();
        assert!(dead.iter().all(|v| !v));
        let mut hole = ones_one.clone();
        hole.set(&[0, 0], -1, false).unwrap();
        assert!(step(&nb, &hole, &|_| Some(t.clone())).unwrap().iter().all(|v| *v));
        assert!(step(&nb, &hole, &|x| (x != [1, 1]).then(|| t.clone())).is_err());
    }

    #[test]
    fn simulate_examples() {
        let nb = Neighborhood::new(1, 1, true).unwrap();
        let w = Window::centered(1, 6);
        let ones = Configuration::ones(&nb, w.clone(), Boundary::AllZero).unwrap();
        let tr = simulate(&osp(&pr(0.0)), &ones, 3, 1).unwrap();
        for t in 1..=3 {
            assert!(tr.row(t).iter().all(|v| !v));
        }
        let ones1 = Configuration::ones(&nb, w, Boundary::AllOne).unwrap();
        let tr = simulate(&osp(&pr(1.0)), &ones1, 5, 1).unwrap();
        for t in 0..=5 {
            assert!(tr.row(t).iter().all(|v| *v));
        }
        assert!(simulate(&osp(&pr(1.0)), &ones1, 0, 1).is_err());
    }

    #[test]
    fn kernel_matches_reference() {
        let cases: Vec<(RatesMeasure, Window, Boundary)> = vec![
            (osp(&pr(0.6)), Window::new(vec![-40], vec![90]).unwrap(), Boundary::AllZero),
            (osp(&pr(0.6)), Window::new(vec![0], vec![70]).unwrap(), Boundary::Periodic),
            (toom_with_death(&pr(0.8)), Window::new(vec![-3, -5], vec![6, 70]).unwrap(), Boundary::AllOne),
            (toom_with_death(&pr(0.8)), Window::new(vec![-3, -5], vec![6, 66]).unwrap(), Boundary::Periodic),
        ];
        for (m, w, b) in cases {
            let nb = m.neighborhood();
            let rule = Rule::for_measure(&m);
            let field = FieldSample::new(&m, 17);
            let mut init = Configuration::zeros(&nb, w.clone(), b).unwrap();
            for (i, p) in w.points().iter().enumerate() {
                if mix(i as u64) % 3 != 0 {
                    init.set(p, -1, true).unwrap();
                }
            }
            let tr = simulate_with(&rule, &field, &init, 6).unwrap();
            let refr = reference(&rule, &field, &init, 6);
            for t in 1..=6 {
                assert_eq!(tr.row(t), &refr[t as usize - 1][..], "t={t}");
            }
        }
    }

    #[test]
    fn memory_kernel_matches_reference() {
        let nb = Neighborhood::new(1, 2, false).unwrap();
        let f1 = make_upfamily(nb, &[nb.set_of(&[vec![-2, -2], vec![1, -1]]).unwrap(), nb.set_of(&[vec![2, -1]]).unwrap()]).unwrap();
        let f2 = make_upfamily(nb, &[nb.set_of(&[vec![0, -2]]).unwrap()]).unwrap();
        let m = RatesMeasure::new(nb, vec![(f1, q(1, 2)), (f2, q(1, 3)), (UpFamily::empty(nb), q(1, 6))]).unwrap();
        let w = Window::new(vec![-10], vec![60]).unwrap();
        let rule = Rule::for_measure(&m);
        let field = FieldSample::new(&m, 3);
        let mut init = Configuration::zeros(&nb, w.clone(), Boundary::AllOne).unwrap();
        for (i, p) in w.points().iter().enumerate() {
            init.set(p, -1, i % 3 != 0).unwrap();
            init.set(p, -2, i % 5 != 0).unwrap();
        }
        let tr = simulate_with(&rule, &field, &init, 8).unwrap();
        let refr = reference(&rule, &field, &init, 8);
        for t in 1..=8 {
            assert_eq!(tr.row(t), &refr[t as usize - 1][..]);
        }
        assert_eq!(tr.t0, -1);
    }

    #[test]
    fn zero_dimensional_runs() {
        let nb = Neighborhood::new(0, 1, false).unwrap();
        let id = make_upfamily(nb, &[SiteSet(1)]).unwrap();
        let m = with_death(&RatesMeasure::dirac(id), &pr(0.5));
        let init = Configuration::ones(&nb, Window::centered(0, 0), Boundary::AllZero).unwrap();
        let rule = Rule::for_measure(&m);
        let field = FieldSample::new(&m, 9);
        let tr = simulate_with(&rule, &field, &init, 10).unwrap();
        let refr = reference(&rule, &field, &init, 10);
        for t in 1..=10 {
            assert_eq!(tr.row(t), &refr[t as usize - 1][..]);
        }
        assert_eq!(exhaustive_theta(&m, 3).unwrap(), q(1, 8));
    }

    #[test]
    fn exhaustive_oracles() {
        let half = osp(&pr(0.5));
        assert_eq!(exhaustive_theta(&half, 1).unwrap(), q(1, 2));
        assert_eq!(exhaustive_theta(&half, 2).unwrap(), q(3, 8));
        assert_eq!(exhaustive_theta(&osp(&pr(0.0)), 1).unwrap(), q(0, 1));
        let curve = LinearCurve::full(osp(&pr(1.0)));
        let p = Poly::x();
        assert_eq!(exhaustive_theta_poly(&curve, 1).unwrap(), p);
        // p * (2p - p^2)
        let want = &p * &(&p.scale(&qi(2)) - &p.pow(2));
        assert_eq!(exhaustive_theta_poly(&curve, 2).unwrap(), want);
        let big = osp(&pr(0.5));
        assert!(matches!(exhaustive_theta(&big, 8), Err(Error::Capacity { .. })));
    }

    #[test]
    fn theta_estimates() {
        let e = theta_estimate(&osp(&pr(0.5)), 2, 100_000, 11).unwrap();
        assert!((e.mean - 0.375).abs() <= 3.0 * e.stderr, "{e:?}");
        let e = theta_estimate(&osp(&pr(0.5)), 1, 100_000, 12).unwrap();
        assert!((e.mean - 0.5).abs() <= 4.0 * e.stderr);
        assert_eq!(theta_estimate(&osp(&pr(0.0)), 1, 100, 1).unwrap().mean, 0.0);
        assert!(theta_estimate(&osp(&pr(0.5)), 1, 0, 1).is_err());
        let toom = toom_with_death(&pr(0.9));
        let exact = crate::exact::to_f64(&exhaustive_theta(&toom, 2).unwrap());
        let e = theta_estimate(&toom, 2, 40_000, 5).unwrap();
        assert!((e.mean - exact).abs() <= 4.0 * e.stderr, "{e:?} vs {exact}");
    }

    #[test]
    fn theta_curve_matches_single_horizons() {
        let m = osp(&pr(0.6));
        let curve = theta_curve(&m, 3, 40_000, 2).unwrap();
        assert_eq!(curve[0].mean, 1.0);
        for n in 1..=3 {
            let exact = crate::exact::to_f64(&exhaustive_theta(&m, n).unwrap());
            let e = curve[n as usize];
            assert!((e.mean - exact).abs() <= 4.0 * e.stderr, "n={n}: {e:?} vs {exact}");
        }
    }

    #[test]
    fn theta_is_thread_count_independent() {
        let m = osp(&pr(0.7));
        let a = theta_estimate(&m, 20, 3000, 4).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| theta_estimate(&m, 20, 3000, 4).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn survival_examples() {
        let m = osp(&pr(0.5));
        let w = Window::centered(1, 40);
        let none = survival_from(&m, &w, &[], 10, 100, 1).unwrap();
        assert!(none.iter().all(|e| e.mean == 0.0));
        let nb = m.neighborhood();
        let full = gosp(nb, nb.set_of(&[vec![-1, -1], vec![1, -1]]).unwrap(), &pr(1.0)).unwrap();
        let s = survival_from(&full, &w, &[(vec![0], -1)], 30, 50, 1).unwrap();
        assert!(s.iter().all(|e| e.mean == 1.0));
        assert!(matches!(survival_from(&m, &w, &[(vec![0], -1)], 41, 10, 1), Err(Error::Margin { .. })));
        let s = survival_from(&m, &w, &[(vec![0], -1)], 30, 20_000, 8).unwrap();
        for t in 1..30 {
            assert!(s[t + 1].mean <= s[t].mean);
        }
        assert!(s[30].mean < s[5].mean);
        // at t = 1 the origin row is nonzero iff one of the two sites next to 0 opens
        let p1: f64 = 1.0 - 0.5f64.powi(2);
        assert!((s[1].mean - p1).abs() < 4.0 * s[1].stderr);
        // t = 2 from the explicit enumeration of the 3 + 5 relevant fields
        let mut hit = 0;
        for bits in 0u32..(1 << 8) {
            let open1 = |x: i64| bits >> (x + 1) & 1 == 1;
            let open2 = |x: i64| bits >> (3 + x + 2) & 1 == 1;
            let r1 = |x: i64| (-1..=1).contains(&x) && open1(x) && (x - 1 == 0 || x + 1 == 0);
            let any = (-2..=2).any(|x| open2(x) && (r1(x - 1) || r1(x + 1)));
            if any {
                hit += 1;
            }
        }
        let p2 = hit as f64 / 256.0;
        assert!((s[2].mean - p2).abs() < 4.0 * s[2].stderr, "{} vs {p2}", s[2].mean);
    }

    #[test]
    fn rle_roundtrip() {
        let m = toom_with_death(&pr(0.7));
        let nb = m.neighborhood();
        let init = Configuration::ones(&nb, Window::new(vec![-2, -3], vec![4, 2]).unwrap(), Boundary::AllZero).unwrap();
        let tr = simulate(&m, &init, 4, 21).unwrap();
        let text = tr.export_rle(21, &m);
        assert!(text.starts_with("# pcabp-trajectory v1"));
        assert_eq!(Trajectory::parse_rle(&text).unwrap(), tr);
    }

    #[test]
    fn path_oracle_examples() {
        let nb = Neighborhood::new(1, 1, true).unwrap();
        let x = nb.set_of(&[vec![-1, -1], vec![1, -1]]).unwrap();
        let open = FieldSample::new(&gosp(nb, x, &pr(1.0)).unwrap(), 1);
        assert!(gosp_path_oracle(x, &open, (&[0], 2)).unwrap());
        assert!(!gosp_path_oracle(x, &open, (&[1], 2)).unwrap());
        assert!(gosp_path_oracle(x, &FieldSample::new(&toom_with_death(&pr(0.5)), 1), (&[0], 1)).is_err());
        // both parents of (0, 2) closed at t = 1
        let m = gosp(nb, x, &pr(0.5)).unwrap();
        for seed in 0..200 {
            let f = FieldSample::new(&m, seed);
            if f.family_at(&[-1], 1).is_empty_family() && f.family_at(&[1], 1).is_empty_family() {
                assert!(!gosp_path_oracle(x, &f, (&[0], 2)).unwrap());
                return;
            }
        }
        panic!("no seed closed both parents");
    }

    #[test]
    fn path_oracle_matches_simulation() {
        let nb = Neighborhood::new(1, 1, true).unwrap();
        let x = nb.set_of(&[vec![-1, -1], vec![1, -1]]).unwrap();
        let m = gosp(nb, x, &pr(0.6)).unwrap();
        let w = Window::centered(1, 4);
        let init = Configuration::from_sites(&nb, w.clone(), Boundary::AllZero, &[(vec![0], -1)]).unwrap();
        for seed in 0..100 {
            let f = FieldSample::new(&m, seed);
            let tr = simulate_with(&Rule::for_measure(&m), &f, &init, 4).unwrap();
            for t in 0..=4 {
                for p in w.points() {
                    assert_eq!(tr.get(&p, t), gosp_path_oracle(x, &f, (&p, t)).unwrap(), "seed {seed} at {p:?},{t}");
                }
            }
        }
    }

    #[test]
    fn path_oracle_with_memory() {
        let nb = Neighborhood::new(1, 2, false).unwrap();
        let x = nb.set_of(&[vec![-1, -2], vec![1, -1]]).unwrap();
        let m = gosp(nb, x, &pr(0.7)).unwrap();
        let w = Window::centered(1, 12);
        let init = Configuration::from_sites(&nb, w.clone(), Boundary::AllZero, &[(vec![0], -1)]).unwrap();
        for seed in 0..30 {
            let f = FieldSample::new(&m, seed);
            let tr = simulate_with(&Rule::for_measure(&m), &f, &init, 5).unwrap();
            for t in 1..=5 {
                for p in Window::centered(1, 5).points() {
                    assert_eq!(tr.get(&p, t), gosp_path_oracle(x, &f, (&p, t)).unwrap());
                }
            }
        }
    }

    #[test]
    fn explicit_field_runs() {
        let nb = Neighborhood::new(1, 1, true).unwrap();
        let m = osp(&pr(0.5));
        let rule = Rule::for_measure(&m);
        let w = Window::centered(1, 3);
        let mut f = ExplicitField::new(w.clone(), 1, 2, 2, 1);
        let death = m.atoms().iter().position(|(g, _)| g.is_empty_family()).unwrap();
        f.set(&[0], 2, death);
        let init = Configuration::ones(&nb, w, Boundary::AllZero).unwrap();
        let tr = simulate_with(&rule, &f, &init, 2).unwrap();
        assert!(!tr.get(&[0], 2));
        assert!(tr.get(&[1], 2));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn attractive_in_p(seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = (a.min(b), a.max(b));
            let mu = RatesMeasure::dirac(toom_majority());
            let nb = mu.neighborhood();
            let init = Configuration::ones(&nb, Window::centered(2, 6), Boundary::AllZero).unwrap();
            let tl = simulate(&with_death(&mu, &pr(lo)), &init, 6, seed).unwrap();
            let th = simulate(&with_death(&mu, &pr(hi)), &init, 6, seed).unwrap();
            for t in 1..=6 {
                prop_assert!(tl.row(t).iter().zip(th.row(t)).all(|(x, y)| !x || *y));
            }
        }

        #[test]
        fn cone_exactness(seed in any::<u64>(), extra in 1i64..6) {
            let m = osp(&pr(0.65));
            let n = 12;
            let nb = m.neighborhood();
            let rule = Rule::for_measure(&m);
            let f = FieldSample::new(&m, seed);
            let small = Configuration::ones(&nb, Window::centered(1, n), Boundary::AllZero).unwrap();
            let big = Configuration::ones(&nb, Window::centered(1, n + extra), Boundary::AllOne).unwrap();
            let a = simulate_with(&rule, &f, &small, n).unwrap();
            let b = simulate_with(&rule, &f, &big, n).unwrap();
            prop_assert_eq!(a.get(&[0], n), b.get(&[0], n));
        }

        #[test]
        fn monotone_in_initial_state(seed in any::<u64>(), bits in any::<u64>(), more in any::<u64>()) {
            let m = toom_with_death(&pr(0.85));
            let nb = m.neighborhood();
            let w = Window::new(vec![0, 0], vec![7, 7]).unwrap();
            let mut lo = Configuration::zeros(&nb, w.clone(), Boundary::AllZero).unwrap();
            let mut hi = lo.clone();
            for (i, p) in w.points().iter().enumerate() {
                let a = bits >> i & 1 == 1;
                lo.set(p, -1, a).unwrap();
                hi.set(p, -1, a || more >> i & 1 == 1).unwrap();
            }
            let tl = simulate(&m, &lo, 5, seed).unwrap();
            let th = simulate(&m, &hi, 5, seed).unwrap();
            for t in 1..=5 {
                prop_assert!(tl.row(t).iter().zip(th.row(t)).all(|(x, y)| !x || *y));
            }
        }
    }
}
