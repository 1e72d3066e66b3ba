//! Counter-based random fields.
//!
//! Every random quantity attached to a lattice site is a pure function of
//! `(seed, stream, coordinates)`, so a field does not depend on the box it is
//! read through and runs are replayable.

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};

use crate::exact::Q;
use crate::lattice::Window;
use crate::rates::RatesMeasure;
use crate::upset::UpFamily;

pub const STREAM_ALIVE: u64 = 0;
pub const STREAM_CHOICE: u64 = 1;
pub const STREAM_BERNOULLI: u64 = 2;
pub const STREAM_FAMILY: u64 = 3;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline(always)]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline(always)]
pub fn absorb(h: u64, v: i64) -> u64 {
    mix(h ^ (v as u64).wrapping_mul(GOLDEN).wrapping_add(0x632B_E59B_D9B4_E019))
}

/// Seed of replica `i`.
pub fn replica_seed(seed: u64, i: u64) -> u64 {
    mix(seed ^ mix(i.wrapping_add(GOLDEN)))
}

pub fn stream_key(seed: u64, stream: u64) -> u64 {
    mix(seed ^ mix(stream.wrapping_mul(GOLDEN) ^ 0x5851_F42D_4C95_7F2D))
}

/// Hash of a space-time site `(x, t)`.
pub fn site_hash(seed: u64, stream: u64, x: &[i64], t: i64) -> u64 {
    let mut h = absorb(stream_key(seed, stream), t);
    for &v in x {
        h = absorb(h, v);
    }
    h
}

/// Hash of a spatial site (no time coordinate).
pub fn space_hash(seed: u64, stream: u64, x: &[i64]) -> u64 {
    let mut h = stream_key(seed, stream);
    for &v in x {
        h = absorb(h, v);
    }
    h
}

/// Uniform in `[0, 1)` from a hash.
pub fn to_unit(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `floor(w * 2^64)` as an integer threshold.
pub fn threshold(w: &Q) -> u128 {
    let scaled = w * Q::from_integer(BigInt::from(1u128 << 64));
    let f = scaled.floor().to_integer();
    if f <= BigInt::zero() {
        0
    } else {
        f.to_u128().unwrap_or(u128::MAX).min(1u128 << 64)
    }
}

/// Chooses an atom of a measure from two uniforms.
///
/// The first uniform decides between the empty family and the rest; the
/// second picks among the remaining atoms by quantile, in an order where a
/// family comes after every family it strictly contains.
#[derive(Clone, Debug)]
pub struct AtomSampler {
    families: Vec<UpFamily>,
    death: Option<usize>,
    death_thr: u128,
    alive: Vec<usize>,
    alive_thr: Vec<u128>,
}

impl AtomSampler {
    pub fn new(m: &RatesMeasure) -> Self {
        let families: Vec<UpFamily> = m.atoms().iter().map(|(f, _)| f.clone()).collect();
        let death = families.iter().position(|f| f.is_empty_family());
        let death_thr = death.map(|i| threshold(&m.atoms()[i].1)).unwrap_or(0);
        let mut rest: Vec<usize> = (0..families.len()).filter(|&i| Some(i) != death).collect();
        let mut alive = Vec::new();
        while !rest.is_empty() {
            let k = rest
                .iter()
                .position(|&i| {
                    !rest
                        .iter()
                        .any(|&j| j != i && families[j].is_subfamily(&families[i]) && families[j] != families[i])
                })
                .expect("strict inclusion is acyclic");
            alive.push(rest.remove(k));
        }
        let total: Q = alive.iter().map(|&i| m.atoms()[i].1.clone()).sum();
        let mut acc = Q::zero();
        let mut alive_thr = Vec::new();
        for (k, &i) in alive.iter().enumerate() {
            acc += &m.atoms()[i].1;
            alive_thr.push(if k + 1 == alive.len() {
                1u128 << 64
            } else {
                threshold(&(&acc / &total))
            });
        }
        AtomSampler {
            families,
            death,
            death_thr,
            alive,
            alive_thr,
        }
    }

    pub fn families(&self) -> &[UpFamily] {
        &self.families
    }

    /// Whether the second uniform is ever consulted.
    pub fn needs_choice(&self) -> bool {
        self.alive.len() > 1
    }

    #[inline]
    pub fn pick(&self, hu: u64, hv: impl FnOnce() -> u64) -> usize {
        if (hu as u128) < self.death_thr || self.alive.is_empty() {
            return self.death.expect("measure has an atom");
        }
        if self.alive.len() == 1 {
            return self.alive[0];
        }
        let v = hv() as u128;
        let k = self.alive_thr.iter().position(|&t| v < t).unwrap_or(self.alive.len() - 1);
        self.alive[k]
    }
}

/// Assignment of atom indices to space-time sites.
pub trait Field: Sync {
    type Row: Copy;
    fn atom_count(&self) -> usize;
    /// Spatial dimension of the sites.
    fn dim(&self) -> usize;
    /// Per-row state for sites `(prefix, x_last, t)`.
    fn row(&self, prefix: &[i64], t: i64) -> Self::Row;
    fn atom(&self, row: Self::Row, x_last: i64) -> usize;

    fn atom_at(&self, x: &[i64], t: i64) -> usize {
        if x.is_empty() {
            let r = self.row(&[], t);
            self.atom(r, 0)
        } else {
            let r = self.row(&x[..x.len() - 1], t);
            self.atom(r, x[x.len() - 1])
        }
    }
}

/// I.i.d. field of up-families with a given law, derived from a seed.
#[derive(Clone, Debug)]
pub struct FieldSample {
    pub seed: u64,
    d: usize,
    sampler: AtomSampler,
    key_u: u64,
    key_v: u64,
}

impl FieldSample {
    pub fn new(measure: &RatesMeasure, seed: u64) -> Self {
        FieldSample {
            seed,
            d: measure.neighborhood().d,
            sampler: AtomSampler::new(measure),
            key_u: stream_key(seed, STREAM_ALIVE),
            key_v: stream_key(seed, STREAM_CHOICE),
        }
    }

    /// Same law, new seed.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.key_u = stream_key(seed, STREAM_ALIVE);
        self.key_v = stream_key(seed, STREAM_CHOICE);
    }

    pub fn sampler(&self) -> &AtomSampler {
        &self.sampler
    }

    pub fn family_at(&self, x: &[i64], t: i64) -> &UpFamily {
        &self.sampler.families[self.atom_at(x, t)]
    }

    /// The uniform deciding life or death at `(x, t)`.
    pub fn uniform(&self, x: &[i64], t: i64) -> f64 {
        to_unit(site_hash(self.seed, STREAM_ALIVE, x, t))
    }
}

impl Field for FieldSample {
    type Row = (u64, u64);

    fn atom_count(&self) -> usize {
        self.sampler.families.len()
    }

    fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    fn row(&self, prefix: &[i64], t: i64) -> (u64, u64) {
        let mut hu = absorb(self.key_u, t);
        let mut hv = absorb(self.key_v, t);
        for &v in prefix {
            hu = absorb(hu, v);
            hv = absorb(hv, v);
        }
        (hu, hv)
    }

    #[inline]
    fn atom(&self, row: (u64, u64), x_last: i64) -> usize {
        if self.d == 0 {
            return self.sampler.pick(row.0, || row.1);
        }
        self.sampler.pick(absorb(row.0, x_last), || absorb(row.1, x_last))
    }
}

/// A field given cell by cell on a space-time box, with a default outside.
#[derive(Clone, Debug)]
pub struct ExplicitField {
    window: Window,
    t_lo: i64,
    t_hi: i64,
    atoms: usize,
    default: usize,
    data: Vec<u8>,
}

impl ExplicitField {
    pub fn new(window: Window, t_lo: i64, t_hi: i64, atoms: usize, default: usize) -> Self {
        let n = window.volume() * (t_hi - t_lo + 1).max(0) as usize;
        ExplicitField {
            window,
            t_lo,
            t_hi,
            atoms,
            default,
            data: vec![default as u8; n],
        }
    }

    fn index(&self, x: &[i64], t: i64) -> Option<usize> {
        if !self.window.contains(x) || t < self.t_lo || t > self.t_hi {
            return None;
        }
        let mut idx = (t - self.t_lo) as usize;
        for (i, v) in x.iter().enumerate() {
            idx = idx * self.window.side(i) as usize + (v - self.window.lo[i]) as usize;
        }
        Some(idx)
    }

    pub fn set(&mut self, x: &[i64], t: i64, atom: usize) {
        let i = self.index(x, t).expect("site inside the field box");
        self.data[i] = atom as u8;
    }
}

impl Field for ExplicitField {
    /// Index of the row start, or `None` outside the box.
    type Row = Option<usize>;

    fn atom_count(&self) -> usize {
        self.atoms
    }

    fn dim(&self) -> usize {
        self.window.dim()
    }

    fn row(&self, prefix: &[i64], t: i64) -> Option<usize> {
        let d = self.window.dim();
        if d == 0 {
            return self.index(&[], t);
        }
        let mut x = prefix.to_vec();
        x.push(self.window.lo[d - 1]);
        self.index(&x, t)
    }

    fn atom(&self, row: Option<usize>, x_last: i64) -> usize {
        let d = self.window.dim();
        match row {
            None => self.default,
            Some(base) if d == 0 => self.data[base] as usize,
            Some(base) => {
                let off = x_last - self.window.lo[d - 1];
                if off < 0 || off >= self.window.side(d - 1) {
                    self.default
                } else {
                    self.data[base + off as usize] as usize
                }
            }
        }
    }
}
