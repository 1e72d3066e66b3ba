//! Bit-packed boxes of `Z^D` with padding.
//!
//! Cells are stored row-major with the last axis fastest. Each line along
//! the last axis starts on a word boundary. Every axis is padded on both
//! sides so that neighbor reads never leave the buffer.

use crate::error::{domain, Result};

/// Closed box `lo..=hi` in `Z^D`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Window {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
}

impl Window {
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return domain("window corners of different dimension");
        }
        if lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return domain(format!("empty window {lo:?}..{hi:?}"));
        }
        Ok(Window { lo, hi })
    }

    /// `[-m, m]^d`.
    pub fn centered(d: usize, m: i64) -> Self {
        Window {
            lo: vec![-m; d],
            hi: vec![m; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn side(&self, i: usize) -> i64 {
        self.hi[i] - self.lo[i] + 1
    }

    pub fn volume(&self) -> usize {
        (0..self.dim()).map(|i| self.side(i) as usize).product()
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| a <= v && v <= b)
    }

    pub fn contains_window(&self, o: &Window) -> bool {
        self.contains(&o.lo) && self.contains(&o.hi)
    }

    /// Row-major position of a point.
    pub fn index(&self, x: &[i64]) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let mut idx = 0usize;
        for (i, v) in x.iter().enumerate() {
            idx = idx * self.side(i) as usize + (v - self.lo[i]) as usize;
        }
        Some(idx)
    }

    /// Distance from `x` to the outside, in the max-norm sense per axis.
    pub fn margin_around(&self, x: &[i64]) -> i64 {
        (0..self.dim())
            .map(|i| (x[i] - self.lo[i]).min(self.hi[i] - x[i]))
            .min()
            .unwrap_or(i64::MAX)
    }

    /// All points in row-major order.
    pub fn points(&self) -> Vec<Vec<i64>> {
        let mut out = Vec::with_capacity(self.volume());
        let mut cur = self.lo.clone();
        loop {
            out.push(cur.clone());
            let mut i = self.dim();
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if cur[i] < self.hi[i] {
                    cur[i] += 1;
                    break;
                }
                cur[i] = self.lo[i];
            }
        }
    }

    pub fn intersect(&self, o: &Window) -> Option<Window> {
        let lo: Vec<i64> = self.lo.iter().zip(&o.lo).map(|(a, b)| *a.max(b)).collect();
        let hi: Vec<i64> = self.hi.iter().zip(&o.hi).map(|(a, b)| *a.min(b)).collect();
        Window::new(lo, hi).ok()
    }
}

/// Guard words before and after the row data.
const GUARD: usize = 2;

/// Geometry of a padded bit box.
#[derive(Clone, Debug)]
pub struct Layout {
    /// Spatial dimension as given; 0 is stored as one axis of length 1.
    pub d: usize,
    pub window: Window,
    pub pad: Vec<i64>,
    dims: Vec<usize>,
    row_strides: Vec<usize>,
    pub row_words: usize,
    pub nrows: usize,
    interior_masks: Vec<u64>,
}

impl Layout {
    /// `pad` gives the padding on each spatial axis.
    pub fn new(window: &Window, pad: &[i64]) -> Result<Self> {
        let d = window.dim();
        if pad.len() != d {
            return domain("padding dimension mismatch");
        }
        let (window, pad) = if d == 0 {
            (Window::new(vec![0], vec![0])?, vec![0])
        } else {
            (window.clone(), pad.to_vec())
        };
        let e = window.dim();
        if pad.iter().any(|&p| p < 0) || pad[e - 1] > max_bit_shift() {
            return domain(format!("unsupported padding {pad:?}"));
        }
        let dims: Vec<usize> = (0..e).map(|i| (window.side(i) + 2 * pad[i]) as usize).collect();
        let row_words = dims[e - 1].div_ceil(64);
        let mut row_strides = vec![0; e];
        let mut acc = 1usize;
        for i in (0..e - 1).rev() {
            row_strides[i] = acc;
            acc *= dims[i];
        }
        let nrows = acc;
        let lo = pad[e - 1] as usize;
        let hi = lo + window.side(e - 1) as usize;
        let interior_masks = (0..row_words)
            .map(|w| {
                let mut m = 0u64;
                for b in 0..64 {
                    let p = w * 64 + b;
                    if p >= lo && p < hi {
                        m |= 1 << b;
                    }
                }
                m
            })
            .collect();
        Ok(Layout {
            d,
            window,
            pad,
            dims,
            row_strides,
            row_words,
            nrows,
            interior_masks,
        })
    }

    /// Number of stored axes (at least 1).
    pub fn axes(&self) -> usize {
        self.dims.len()
    }

    pub fn buffer_len(&self) -> usize {
        2 * GUARD + self.nrows * self.row_words
    }

    pub fn new_buffer(&self) -> Vec<u64> {
        vec![0; self.buffer_len()]
    }

    /// Converts a point (with `d` coordinates) to stored axes.
    fn lift(&self, x: &[i64]) -> Vec<i64> {
        if self.d == 0 {
            vec![0]
        } else {
            x.to_vec()
        }
    }

    /// Padded coordinates of a point, or `None` outside the padded box.
    fn padded(&self, x: &[i64]) -> Option<Vec<usize>> {
        let x = self.lift(x);
        let mut out = Vec::with_capacity(x.len());
        for (i, v) in x.iter().enumerate() {
            let c = v - self.window.lo[i] + self.pad[i];
            if c < 0 || c as usize >= self.dims[i] {
                return None;
            }
            out.push(c as usize);
        }
        Some(out)
    }

    fn row_of(&self, c: &[usize]) -> usize {
        let e = self.axes();
        (0..e - 1).map(|i| c[i] * self.row_strides[i]).sum()
    }

    /// Word index of the start of a row.
    #[inline]
    pub fn row_start(&self, row: usize) -> usize {
        GUARD + row * self.row_words
    }

    /// `(word index, bit)` of a point inside the padded box.
    pub fn locate(&self, x: &[i64]) -> Option<(usize, u32)> {
        let c = self.padded(x)?;
        let e = self.axes();
        let row = self.row_of(&c);
        let last = c[e - 1];
        Some((self.row_start(row) + last / 64, (last % 64) as u32))
    }

    pub fn get(&self, buf: &[u64], x: &[i64]) -> bool {
        match self.locate(x) {
            Some((w, b)) => buf[w] >> b & 1 == 1,
            None => false,
        }
    }

    pub fn set(&self, buf: &mut [u64], x: &[i64], v: bool) {
        let (w, b) = self.locate(x).expect("point inside padded box");
        if v {
            buf[w] |= 1 << b;
        } else {
            buf[w] &= !(1 << b);
        }
    }

    /// Shift data for reading the cell at `x + y` into the position of `x`.
    pub fn offset(&self, y: &[i64]) -> (isize, i64) {
        let y = self.lift(y);
        let e = self.axes();
        let rows: isize = (0..e - 1).map(|i| y[i] as isize * self.row_strides[i] as isize).sum();
        (rows * self.row_words as isize, y[e - 1])
    }

    #[inline]
    pub fn interior_mask(&self, word_in_row: usize) -> u64 {
        self.interior_masks[word_in_row]
    }

    /// Rows whose non-last coordinates fall inside `b` (window coordinates).
    pub fn rows_in(&self, b: &Window) -> Vec<usize> {
        let e = self.axes();
        let b = if self.d == 0 {
            Window::new(vec![0], vec![0]).unwrap()
        } else {
            b.clone()
        };
        if e == 1 {
            return vec![0];
        }
        let lo: Vec<i64> = b.lo[..e - 1].to_vec();
        let hi: Vec<i64> = b.hi[..e - 1].to_vec();
        let sub = Window { lo, hi };
        sub.points()
            .into_iter()
            .map(|p| {
                let c: Vec<usize> = (0..e - 1)
                    .map(|i| (p[i] - self.window.lo[i] + self.pad[i]) as usize)
                    .collect();
                (0..e - 1).map(|i| c[i] * self.row_strides[i]).sum()
            })
            .collect()
    }

    /// Rows and word span covering `b` clipped to the window (everything
    /// when `b` is `None`). Returns `None` if the clipped box is empty.
    pub fn active_rows(&self, b: Option<&Window>, rows: &mut Vec<usize>) -> Option<(usize, usize)> {
        rows.clear();
        let e = self.axes();
        if self.d == 0 {
            rows.push(0);
            return Some((0, self.row_words));
        }
        let mut lo = vec![0i64; e];
        let mut hi = vec![0i64; e];
        for i in 0..e {
            let (a, z) = match b {
                Some(b) => (b.lo[i].max(self.window.lo[i]), b.hi[i].min(self.window.hi[i])),
                None => (self.window.lo[i], self.window.hi[i]),
            };
            if a > z {
                return None;
            }
            lo[i] = a - self.window.lo[i] + self.pad[i];
            hi[i] = z - self.window.lo[i] + self.pad[i];
        }
        if e == 1 {
            rows.push(0);
        } else {
            let mut cur: Vec<i64> = lo[..e - 1].to_vec();
            'outer: loop {
                rows.push((0..e - 1).map(|i| cur[i] as usize * self.row_strides[i]).sum());
                let mut i = e - 1;
                loop {
                    if i == 0 {
                        break 'outer;
                    }
                    i -= 1;
                    if cur[i] < hi[i] {
                        cur[i] += 1;
                        break;
                    }
                    cur[i] = lo[i];
                }
            }
        }
        Some((lo[e - 1] as usize / 64, hi[e - 1] as usize / 64 + 1))
    }

    /// Writes the window coordinates of the non-last axes of a row into `out`.
    pub fn row_prefix_into(&self, row: usize, out: &mut Vec<i64>) {
        out.clear();
        let e = self.axes();
        if self.d == 0 || e == 1 {
            return;
        }
        let mut rem = row;
        for i in 0..e - 1 {
            let c = rem / self.row_strides[i];
            rem %= self.row_strides[i];
            out.push(c as i64 - self.pad[i] + self.window.lo[i]);
        }
    }

    /// Words of a row covering last-axis coordinates `lo..=hi`.
    pub fn word_span(&self, lo: i64, hi: i64) -> (usize, usize) {
        let e = self.axes();
        let a = (lo - self.window.lo[e - 1] + self.pad[e - 1]) as usize / 64;
        let b = (hi - self.window.lo[e - 1] + self.pad[e - 1]) as usize / 64;
        (a, b + 1)
    }

    /// Window coordinate along the last axis of bit `b` in word `w` of a row.
    #[inline]
    pub fn last_coord(&self, w: usize, b: u32) -> i64 {
        let e = self.axes();
        (w * 64 + b as usize) as i64 - self.pad[e - 1] + self.window.lo[e - 1]
    }

    /// Window coordinates of the non-last axes of a row.
    pub fn row_prefix(&self, row: usize) -> Vec<i64> {
        let e = self.axes();
        if self.d == 0 {
            return Vec::new();
        }
        let mut out = vec![0; e - 1];
        let mut rem = row;
        for i in 0..e - 1 {
            let c = rem / self.row_strides[i];
            rem %= self.row_strides[i];
            out[i] = c as i64 - self.pad[i] + self.window.lo[i];
        }
        out
    }

    /// All padded cells, as `(point, is_interior)`.
    pub fn padded_points(&self) -> Vec<(Vec<i64>, bool)> {
        let e = self.axes();
        let lo: Vec<i64> = (0..e).map(|i| self.window.lo[i] - self.pad[i]).collect();
        let hi: Vec<i64> = (0..e).map(|i| self.window.hi[i] + self.pad[i]).collect();
        Window { lo, hi }
            .points()
            .into_iter()
            .map(|p| {
                let inside = self.window.contains(&p);
                let p = if self.d == 0 { Vec::new() } else { p };
                (p, inside)
            })
            .collect()
    }

    /// Buffer with padding filled by `f(point)` and zero interior.
    pub fn template(&self, mut f: impl FnMut(&[i64]) -> bool) -> Vec<u64> {
        let mut buf = self.new_buffer();
        for (p, inside) in self.padded_points() {
            if !inside && f(&p) {
                self.set(&mut buf, &p, true);
            }
        }
        buf
    }

    /// Pairs `(padding cell, interior source)` for periodic wrapping.
    pub fn periodic_pairs(&self) -> Vec<((usize, u32), (usize, u32))> {
        let mut out = Vec::new();
        for (p, inside) in self.padded_points() {
            if inside {
                continue;
            }
            let src: Vec<i64> = p
                .iter()
                .enumerate()
                .map(|(i, v)| (v - self.window.lo[i]).rem_euclid(self.window.side(i)) + self.window.lo[i])
                .collect();
            out.push((self.locate(&p).unwrap(), self.locate(&src).unwrap()));
        }
        out
    }

    pub fn interior_rows(&self) -> Vec<usize> {
        let w = if self.d == 0 {
            Window::new(vec![0], vec![0]).unwrap()
        } else {
            self.window.clone()
        };
        self.rows_in(&w)
    }

    /// Number of interior bits set.
    pub fn count_interior(&self, buf: &[u64]) -> u64 {
        let mut n = 0u64;
        for row in self.interior_rows() {
            let s = self.row_start(row);
            for w in 0..self.row_words {
                n += (buf[s + w] & self.interior_masks[w]).count_ones() as u64;
            }
        }
        n
    }
}

/// Reads the 64 cells at `x + offset` for the destination word at `idx`.
#[inline(always)]
pub fn read_shifted(buf: &[u64], idx: usize, word_delta: isize, bit_delta: i64) -> u64 {
    let q = bit_delta.div_euclid(64);
    let s = bit_delta.rem_euclid(64) as u32;
    let base = (idx as isize + word_delta + q as isize) as usize;
    if s == 0 {
        buf[base]
    } else {
        (buf[base] >> s) | (buf[base + 1] << (64 - s))
    }
}

/// Largest shift magnitude (in words) that guard words can absorb.
pub fn max_bit_shift() -> i64 {
    64 * (GUARD as i64 - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_points_and_volume() {
        let w = Window::new(vec![-1, 0], vec![1, 2]).unwrap();
        assert_eq!(w.volume(), 9);
        let pts = w.points();
        assert_eq!(pts.len(), 9);
        assert_eq!(pts[0], vec![-1, 0]);
        assert_eq!(pts[1], vec![-1, 1]);
        assert!(Window::new(vec![1], vec![0]).is_err());
        assert_eq!(Window::centered(0, 3).points(), vec![Vec::<i64>::new()]);
    }

    #[test]
    fn set_get_roundtrip() {
        let w = Window::new(vec![-3, -70], vec![2, 70]).unwrap();
        let l = Layout::new(&w, &[1, 2]).unwrap();
        let mut buf = l.new_buffer();
        for p in w.points() {
            if (p[0] + p[1]).rem_euclid(3) == 0 {
                l.set(&mut buf, &p, true);
            }
        }
        for p in w.points() {
            assert_eq!(l.get(&buf, &p), (p[0] + p[1]).rem_euclid(3) == 0);
        }
        let n = w.points().iter().filter(|p| (p[0] + p[1]).rem_euclid(3) == 0).count();
        assert_eq!(l.count_interior(&buf), n as u64);
    }

    #[test]
    fn shifted_reads_match_pointwise() {
        let w = Window::new(vec![0, 0], vec![4, 130]).unwrap();
        let l = Layout::new(&w, &[2, 3]).unwrap();
        let mut buf = l.new_buffer();
        let mut state = 12345u64;
        for p in l.padded_points() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            if state >> 63 == 1 {
                l.set(&mut buf, &p.0, true);
            }
        }
        for y in [[0i64, 0], [1, -3], [-2, 3], [0, 2], [-1, -1]] {
            let (wd, bd) = l.offset(&y);
            for row in l.interior_rows() {
                let s = l.row_start(row);
                for wi in 0..l.row_words {
                    let v = read_shifted(&buf, s + wi, wd, bd) & l.interior_mask(wi);
                    for b in 0..64 {
                        if l.interior_mask(wi) >> b & 1 == 0 {
                            continue;
                        }
                        let mut x = l.row_prefix(row);
                        x.push(l.last_coord(wi, b));
                        let src = [x[0] + y[0], x[1] + y[1]];
                        assert_eq!(v >> b & 1 == 1, l.get(&buf, &src));
                    }
                }
            }
        }
    }

    #[test]
    fn zero_dimensional_layout() {
        let w = Window::centered(0, 0);
        let l = Layout::new(&w, &[]).unwrap();
        let mut buf = l.new_buffer();
        l.set(&mut buf, &[], true);
        assert!(l.get(&buf, &[]));
        assert_eq!(l.count_interior(&buf), 1);
        assert_eq!(l.offset(&[]), (0, 0));
    }

    #[test]
    fn periodic_pairs_wrap() {
        let w = Window::new(vec![0], vec![4]).unwrap();
        let l = Layout::new(&w, &[2]).unwrap();
        let pairs = l.periodic_pairs();
        assert_eq!(pairs.len(), 4);
        let (dst, src) = pairs[0];
        assert_eq!(dst, l.locate(&[-2]).unwrap());
        assert_eq!(src, l.locate(&[3]).unwrap());
    }
}
