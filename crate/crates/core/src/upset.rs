//! Neighborhoods, site sets, up-families and their complement dual.
//!
//! A site of the neighborhood is written as an integer tuple `(x_1, .., x_d, t)`
//! with `t < 0`. Sites are numbered lexicographically on `(t, x_1, .., x_d)`,
//! which fixes the bit index used by [`SiteSet`].

use std::fmt;

use crate::error::{domain, Error, Result};

/// Default limit on `|R|` for [`complement_dual`].
pub const DUAL_CAP: usize = 25;

/// The space-time neighborhood `R`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Neighborhood {
    pub d: usize,
    pub r: i64,
    pub memoryless: bool,
}

impl Neighborhood {
    pub fn new(d: usize, r: i64, memoryless: bool) -> Result<Self> {
        if r < 1 {
            return domain(format!("range must be positive, got {r}"));
        }
        let n = Neighborhood { d, r, memoryless };
        let size = (2 * r + 1)
            .checked_pow(d as u32)
            .and_then(|s| s.checked_mul(n.depth()));
        match size {
            Some(s) if s <= 64 => Ok(n),
            _ => Err(Error::Capacity {
                what: "neighborhood sites".into(),
                needed: size.unwrap_or(i64::MAX) as usize,
                limit: 64,
            }),
        }
    }

    /// Number of time layers in `R`.
    pub fn depth(&self) -> i64 {
        if self.memoryless {
            1
        } else {
            self.r
        }
    }

    fn side(&self) -> i64 {
        2 * self.r + 1
    }

    fn layer(&self) -> usize {
        (self.side() as usize).pow(self.d as u32)
    }

    pub fn len(&self) -> usize {
        self.layer() * self.depth() as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Bit mask with every site of `R` set.
    pub fn full_mask(&self) -> u64 {
        let n = self.len();
        if n == 64 {
            u64::MAX
        } else {
            (1u64 << n) - 1
        }
    }

    /// Site with bit index `i`, as `(x_1, .., x_d, t)`.
    pub fn site(&self, i: usize) -> Vec<i64> {
        let layer = self.layer();
        let t = if self.memoryless {
            -1
        } else {
            -self.r + (i / layer) as i64
        };
        let mut rem = i % layer;
        let mut out = vec![0; self.d + 1];
        for k in (0..self.d).rev() {
            let side = self.side() as usize;
            out[k] = (rem % side) as i64 - self.r;
            rem /= side;
        }
        out[self.d] = t;
        out
    }

    pub fn sites(&self) -> Vec<Vec<i64>> {
        (0..self.len()).map(|i| self.site(i)).collect()
    }

    /// Bit index of a site, or `None` if it lies outside `R`.
    pub fn index_of(&self, site: &[i64]) -> Option<usize> {
        if site.len() != self.d + 1 {
            return None;
        }
        let t = site[self.d];
        let t_ok = if self.memoryless {
            t == -1
        } else {
            (-self.r..0).contains(&t)
        };
        if !t_ok {
            return None;
        }
        let mut idx = 0usize;
        for &x in &site[..self.d] {
            if x < -self.r || x > self.r {
                return None;
            }
            idx = idx * self.side() as usize + (x + self.r) as usize;
        }
        let layer_idx = if self.memoryless { 0 } else { (t + self.r) as usize };
        Some(layer_idx * self.layer() + idx)
    }

    pub fn set_of(&self, sites: &[Vec<i64>]) -> Result<SiteSet> {
        let mut m = 0u64;
        for s in sites {
            match self.index_of(s) {
                Some(i) => m |= 1 << i,
                None => return domain(format!("site {s:?} lies outside the neighborhood")),
            }
        }
        Ok(SiteSet(m))
    }

    pub fn sites_of(&self, s: SiteSet) -> Vec<Vec<i64>> {
        s.iter().map(|i| self.site(i)).collect()
    }

    /// The site `(0, .., 0, -1)`.
    pub fn self_site(&self) -> SiteSet {
        let mut s = vec![0; self.d + 1];
        s[self.d] = -1;
        SiteSet(1 << self.index_of(&s).expect("self site"))
    }

    fn check_same(&self, other: &Neighborhood) -> Result<()> {
        if self != other {
            return domain(format!("neighborhood mismatch: {self:?} vs {other:?}"));
        }
        Ok(())
    }
}

/// A subset of `R` as a bit mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SiteSet(pub u64);

impl SiteSet {
    pub const EMPTY: SiteSet = SiteSet(0);

    pub fn len(self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(self, other: SiteSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn intersects(self, other: SiteSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn contains_bit(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut m = self.0;
        std::iter::from_fn(move || {
            if m == 0 {
                None
            } else {
                let i = m.trailing_zeros() as usize;
                m &= m - 1;
                Some(i)
            }
        })
    }
}

fn canonical(mut sets: Vec<SiteSet>) -> Vec<SiteSet> {
    sets.sort_by_key(|s| (s.len(), s.0));
    sets.dedup();
    let mut out: Vec<SiteSet> = Vec::with_capacity(sets.len());
    for s in sets {
        if !out.iter().any(|m| m.is_subset(s)) {
            out.push(s);
        }
    }
    out
}

/// An up-closed family of subsets of `R`, kept as its antichain of minimal sets.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UpFamily {
    nbhd: Neighborhood,
    minimal: Vec<SiteSet>,
}

impl UpFamily {
    /// The family containing every subset of `R`.
    pub fn omega(nbhd: Neighborhood) -> Self {
        UpFamily {
            nbhd,
            minimal: vec![SiteSet::EMPTY],
        }
    }

    /// The empty family.
    pub fn empty(nbhd: Neighborhood) -> Self {
        UpFamily {
            nbhd,
            minimal: Vec::new(),
        }
    }

    pub fn neighborhood(&self) -> Neighborhood {
        self.nbhd
    }

    pub fn minimal_sets(&self) -> &[SiteSet] {
        &self.minimal
    }

    pub fn is_empty_family(&self) -> bool {
        self.minimal.is_empty()
    }

    pub fn is_omega(&self) -> bool {
        self.minimal.first() == Some(&SiteSet::EMPTY)
    }

    /// Membership test without a neighborhood check.
    #[inline]
    pub fn holds(&self, y: SiteSet) -> bool {
        self.minimal.iter().any(|m| m.is_subset(y))
    }

    /// Whether the up-closure of `self` is contained in that of `other`.
    pub fn is_subfamily(&self, other: &UpFamily) -> bool {
        self.minimal.iter().all(|&m| other.holds(m))
    }
}

impl fmt::Display for UpFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (k, m) in self.minimal.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{{")?;
            for (j, s) in self.nbhd.sites_of(*m).iter().enumerate() {
                if j > 0 {
                    write!(f, ",")?;
                }
                let parts: Vec<String> = s.iter().map(|v| v.to_string()).collect();
                write!(f, "({})", parts.join(","))?;
            }
            write!(f, "}}")?;
        }
        write!(f, "]")
    }
}

/// Canonical up-family generated by the given sets.
pub fn make_upfamily(nbhd: Neighborhood, generators: &[SiteSet]) -> Result<UpFamily> {
    let full = nbhd.full_mask();
    if let Some(g) = generators.iter().find(|g| g.0 & !full != 0) {
        return domain(format!("generator {:#x} has bits outside R", g.0));
    }
    Ok(UpFamily {
        nbhd,
        minimal: canonical(generators.to_vec()),
    })
}

/// Up-family generated by sets of site tuples.
pub fn upfamily_from_sites(nbhd: Neighborhood, generators: &[Vec<Vec<i64>>]) -> Result<UpFamily> {
    let sets = generators
        .iter()
        .map(|g| nbhd.set_of(g))
        .collect::<Result<Vec<_>>>()?;
    make_upfamily(nbhd, &sets)
}

pub fn contains(f: &UpFamily, nbhd: &Neighborhood, y: SiteSet) -> Result<bool> {
    f.nbhd.check_same(nbhd)?;
    if y.0 & !nbhd.full_mask() != 0 {
        return domain("set has bits outside R");
    }
    Ok(f.holds(y))
}

/// Packed bit table indexed by subsets of an `n`-element ground set.
struct SubsetBits {
    n: usize,
    words: Vec<u64>,
}

const LOW: [u64; 6] = [
    0x5555_5555_5555_5555,
    0x3333_3333_3333_3333,
    0x0F0F_0F0F_0F0F_0F0F,
    0x00FF_00FF_00FF_00FF,
    0x0000_FFFF_0000_FFFF,
    0x0000_0000_FFFF_FFFF,
];

impl SubsetBits {
    fn new(n: usize) -> Self {
        let words = if n >= 6 { 1usize << (n - 6) } else { 1 };
        SubsetBits {
            n,
            words: vec![0; words],
        }
    }

    fn valid_mask(&self) -> u64 {
        if self.n >= 6 {
            u64::MAX
        } else {
            (1u64 << (1u32 << self.n)) - 1
        }
    }

    fn set(&mut self, m: u64) {
        self.words[(m >> 6) as usize] |= 1 << (m & 63);
    }

    /// Closes the table upward (superset sum over OR).
    fn up_close(&mut self) {
        for i in 0..self.n.min(6) {
            let sh = 1u32 << i;
            for w in self.words.iter_mut() {
                *w |= (*w & LOW[i]) << sh;
            }
        }
        for i in 6..self.n {
            let s = 1usize << (i - 6);
            for w in 0..self.words.len() {
                if w & s != 0 {
                    self.words[w] |= self.words[w ^ s];
                }
            }
        }
        let v = self.valid_mask();
        self.words[0] &= v;
    }

    /// Non-members all of whose one-point extensions are members.
    fn maximal_non_members(&self) -> Vec<u64> {
        let valid = self.valid_mask();
        let mut out = Vec::new();
        for w in 0..self.words.len() {
            let mut acc = !self.words[w] & valid;
            for j in 0..self.n.min(6) {
                let sh = 1u32 << j;
                acc &= (self.words[w] >> sh) | !LOW[j];
            }
            for j in 6..self.n {
                let s = 1usize << (j - 6);
                if w & s == 0 {
                    acc &= self.words[w | s];
                }
            }
            while acc != 0 {
                let b = acc.trailing_zeros() as u64;
                out.push(((w as u64) << 6) | b);
                acc &= acc - 1;
            }
        }
        out
    }
}

/// Minimal elements of `{R \ D : D not in F}`, with the default size cap.
pub fn complement_dual(f: &UpFamily) -> Result<Vec<SiteSet>> {
    complement_dual_capped(f, DUAL_CAP)
}

pub fn complement_dual_capped(f: &UpFamily, cap: usize) -> Result<Vec<SiteSet>> {
    let n = f.nbhd.len();
    if n > cap {
        return Err(Error::Capacity {
            what: "complement dual enumeration bits".into(),
            needed: n,
            limit: cap,
        });
    }
    let mut table = SubsetBits::new(n);
    for m in &f.minimal {
        table.set(m.0);
    }
    table.up_close();
    let full = f.nbhd.full_mask();
    let sets = table
        .maximal_non_members()
        .into_iter()
        .map(|d| SiteSet(full ^ d))
        .collect();
    Ok(canonical(sets))
}

/// The up-family `{R \ D : D not in F}`.
pub fn dual_family(f: &UpFamily) -> Result<UpFamily> {
    let sets = complement_dual(f)?;
    make_upfamily(f.nbhd, &sets)
}

/// Down-closure of a list of up-families.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DownSystem {
    nbhd: Neighborhood,
    generators: Vec<UpFamily>,
}

impl DownSystem {
    pub fn new(nbhd: Neighborhood, generators: Vec<UpFamily>) -> Result<Self> {
        for g in &generators {
            g.nbhd.check_same(&nbhd)?;
        }
        Ok(DownSystem { nbhd, generators })
    }

    pub fn neighborhood(&self) -> Neighborhood {
        self.nbhd
    }

    pub fn generators(&self) -> &[UpFamily] {
        &self.generators
    }

    #[inline]
    pub fn holds(&self, f: &UpFamily) -> bool {
        self.generators.iter().any(|g| f.is_subfamily(g))
    }

    /// True for the trivial systems (empty, or everything).
    pub fn is_trivial(&self) -> bool {
        self.generators.is_empty() || self.generators.iter().any(|g| g.is_omega())
    }
}

pub fn downsystem_contains(d: &DownSystem, f: &UpFamily) -> Result<bool> {
    d.nbhd.check_same(&f.nbhd)?;
    Ok(d.holds(f))
}
