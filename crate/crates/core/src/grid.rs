//! Rectangular grids, value fields and multilinear interpolation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Sentinel for nodes that no trajectory reaches inside the box.
pub const BIG: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n: Vec<usize>,
    pub spacing: Vec<f64>,
    strides: Vec<usize>,
}

pub fn build_grid(bounds: &[[f64; 2]], n: &[usize]) -> Result<Grid> {
    if bounds.len() != n.len() || n.is_empty() {
        return Err(Error::InvalidGrid(format!("{} axes in box but {} node counts", bounds.len(), n.len())));
    }
    if let Some(k) = n.iter().find(|&&k| k < 3) {
        return Err(Error::InvalidGrid(format!("need at least 3 nodes per axis, got {k}")));
    }
    if bounds.iter().any(|[lo, hi]| !(hi > lo) || !lo.is_finite() || !hi.is_finite()) {
        return Err(Error::InvalidGrid("degenerate box".into()));
    }
    let d = n.len();
    let mut strides = vec![1; d];
    for a in (0..d.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * n[a + 1];
    }
    Ok(Grid {
        lo: bounds.iter().map(|b| b[0]).collect(),
        hi: bounds.iter().map(|b| b[1]).collect(),
        spacing: bounds.iter().zip(n).map(|(b, &k)| (b[1] - b[0]) / (k - 1) as f64).collect(),
        n: n.to_vec(),
        strides,
    })
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Coordinate of node `i` on axis `a`; symmetric in the endpoints.
    pub fn coord(&self, a: usize, i: usize) -> f64 {
        let last = self.n[a] - 1;
        let w = self.hi[a] - self.lo[a];
        // Measured from the nearer end so mirrored boxes give mirrored nodes.
        if 2 * i <= last {
            self.lo[a] + w * i as f64 / last as f64
        } else {
            self.hi[a] - w * (last - i) as f64 / last as f64
        }
    }

    pub fn unravel(&self, idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        self.unravel_into(idx, &mut out);
        out
    }

    pub fn unravel_into(&self, idx: usize, out: &mut [usize]) {
        let mut rem = idx;
        for a in 0..self.dim() {
            out[a] = rem / self.strides[a];
            rem %= self.strides[a];
        }
    }

    pub fn ravel(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        let mut rem = idx;
        (0..self.dim())
            .map(|a| {
                let i = rem / self.strides[a];
                rem %= self.strides[a];
                self.coord(a, i)
            })
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(a, v)| {
            let tol = 1e-12 * (self.hi[a] - self.lo[a]);
            *v >= self.lo[a] - tol && *v <= self.hi[a] + tol
        })
    }

    /// Cell base multi-index and fractional offsets of `x`, or `None` outside the box.
    pub fn locate(&self, x: &[f64], base: &mut [usize], frac: &mut [f64]) -> bool {
        for a in 0..self.dim() {
            let t = (x[a] - self.lo[a]) / self.spacing[a];
            let last = (self.n[a] - 1) as f64;
            if !(t >= -1e-9 && t <= last + 1e-9) {
                return false;
            }
            let t = t.clamp(0.0, last);
            let i = (t.floor() as usize).min(self.n[a] - 2);
            base[a] = i;
            frac[a] = (t - i as f64).clamp(0.0, 1.0);
        }
        true
    }

    /// Nearest node index.
    pub fn nearest(&self, x: &[f64]) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let multi: Vec<usize> = (0..self.dim())
            .map(|a| (((x[a] - self.lo[a]) / self.spacing[a]).round().max(0.0) as usize).min(self.n[a] - 1))
            .collect();
        Some(self.ravel(&multi))
    }

    /// Indices of nodes within Euclidean distance `radius` of `x`.
    pub fn nodes_in_ball(&self, x: &[f64], radius: f64) -> Vec<usize> {
        let d = self.dim();
        let mut lo = vec![0usize; d];
        let mut hi = vec![0usize; d];
        for a in 0..d {
            let l = ((x[a] - radius - self.lo[a]) / self.spacing[a]).ceil().max(0.0);
            let h = ((x[a] + radius - self.lo[a]) / self.spacing[a]).floor();
            if h < 0.0 || l > (self.n[a] - 1) as f64 {
                return Vec::new();
            }
            lo[a] = l as usize;
            hi[a] = (h as usize).min(self.n[a] - 1);
            if lo[a] > hi[a] {
                return Vec::new();
            }
        }
        let mut out = Vec::new();
        let mut cur = lo.clone();
        loop {
            let idx = self.ravel(&cur);
            let p = self.node(idx);
            if crate::vecops::dist(&p, x) <= radius * (1.0 + 1e-12) {
                out.push(idx);
            }
            let mut a = d;
            loop {
                if a == 0 {
                    return out;
                }
                a -= 1;
                if cur[a] < hi[a] {
                    cur[a] += 1;
                    break;
                }
                cur[a] = lo[a];
            }
        }
    }

    /// Neighbour index along axis `a` in direction `dir` (+1 or -1).
    pub fn neighbor(&self, idx: usize, a: usize, dir: i32) -> Option<usize> {
        let i = (idx / self.strides[a]) % self.n[a];
        if dir > 0 && i + 1 < self.n[a] {
            Some(idx + self.strides[a])
        } else if dir < 0 && i > 0 {
            Some(idx - self.strides[a])
        } else {
            None
        }
    }

    /// Visits the `2^d` corners of the cell at `base` with their multilinear weights.
    pub fn for_each_corner(&self, base: &[usize], frac: &[f64], mut f: impl FnMut(usize, f64)) {
        let d = self.dim();
        let base_idx = self.ravel(base);
        for mask in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = base_idx;
            for a in 0..d {
                if mask >> a & 1 == 1 {
                    w *= frac[a];
                    idx += self.strides[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                f(idx, w);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeStatus {
    Target,
    Converged,
    Unreached,
}

impl NodeStatus {
    pub fn label(self) -> &'static str {
        match self {
            NodeStatus::Target => "TARGET",
            NodeStatus::Converged => "CONVERGED",
            NodeStatus::Unreached => "UNREACHED",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub sweeps: usize,
    pub converged: bool,
    pub last_change: f64,
    /// Largest node value after each sweep.
    pub max_value_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub status: Vec<NodeStatus>,
    pub stats: SolveStats,
}

/// Per-node boolean mask in row-major order.
pub type Mask = Vec<bool>;

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub central: Vec<f64>,
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
}

impl ValueField {
    /// A field given directly by node values, all nodes marked converged.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> ValueField {
        let values = (0..grid.len()).map(|k| f(&grid.node(k))).collect();
        let status = vec![NodeStatus::Converged; grid.len()];
        ValueField { grid, values, status, stats: SolveStats::default() }
    }

    pub fn interpolate(&self, x: &[f64]) -> Result<f64> {
        self.interpolate_checked(x, false)
    }

    /// Interpolation that errors when a contributing node is unreached.
    pub fn interpolate_checked(&self, x: &[f64], reject_unreached: bool) -> Result<f64> {
        let d = self.grid.dim();
        let mut base = vec![0; d];
        let mut frac = vec![0.0; d];
        if x.len() != d || !self.grid.locate(x, &mut base, &mut frac) {
            return Err(Error::OutOfBox(x.to_vec()));
        }
        let mut v = 0.0;
        let mut bad = false;
        self.grid.for_each_corner(&base, &frac, |idx, w| {
            if reject_unreached && self.status[idx] == NodeStatus::Unreached {
                bad = true;
            }
            v += w * self.values[idx];
        });
        if bad {
            return Err(Error::Unreached);
        }
        Ok(v)
    }

    /// One-sided and central difference quotients of the interpolated field.
    pub fn numeric_gradient(&self, x: &[f64]) -> Result<Gradients> {
        let d = self.grid.dim();
        let v0 = self.interpolate_checked(x, true)?;
        let mut g = Gradients { central: vec![0.0; d], forward: vec![0.0; d], backward: vec![0.0; d] };
        for a in 0..d {
            let h = self.grid.spacing[a];
            let mut xp = x.to_vec();
            xp[a] += h;
            let mut xm = x.to_vec();
            xm[a] -= h;
            let vp = self.interpolate_checked(&xp, true)?;
            let vm = self.interpolate_checked(&xm, true)?;
            g.forward[a] = (vp - v0) / h;
            g.backward[a] = (v0 - vm) / h;
            g.central[a] = (vp - vm) / (2.0 * h);
        }
        Ok(g)
    }

    pub fn sublevel_mask(&self, alpha: f64) -> Mask {
        self.values
            .iter()
            .zip(&self.status)
            .map(|(v, s)| *s != NodeStatus::Unreached && *v <= alpha)
            .collect()
    }

    pub fn count(&self, s: NodeStatus) -> usize {
        self.status.iter().filter(|&&t| t == s).count()
    }
}

/// Chebyshev dilation of a mask by `k` nodes in index space.
pub fn dilate(grid: &Grid, mask: &[bool], k: usize) -> Mask {
    let mut cur = mask.to_vec();
    for a in 0..grid.dim() {
        let mut next = cur.clone();
        let stride = grid.strides()[a];
        let n = grid.n[a];
        for idx in 0..grid.len() {
            if !cur[idx] {
                continue;
            }
            let i = (idx / stride) % n;
            let lo = i.saturating_sub(k);
            let hi = (i + k).min(n - 1);
            for j in lo..=hi {
                next[idx - i * stride + j * stride] = true;
            }
        }
        cur = next;
    }
    cur
}

/// Nodes on the faces of the box.
pub fn edge_mask(grid: &Grid) -> Mask {
    (0..grid.len())
        .map(|idx| {
            let m = grid.unravel(idx);
            m.iter().zip(&grid.n).any(|(&i, &n)| i == 0 || i + 1 == n)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_examples() {
        let g = build_grid(&[[-2.0, 2.0], [-2.0, 2.0]], &[5, 5]).unwrap();
        assert_eq!(g.spacing, vec![1.0, 1.0]);
        let g = build_grid(&[[-2.0, 2.0], [-0.5, 1.5]], &[201, 171]).unwrap();
        assert!((g.spacing[0] - 0.02).abs() < 1e-15);
        assert!((g.spacing[1] - 2.0 / 170.0).abs() < 1e-15);
        assert_eq!(g.len(), 34371);
        assert!(build_grid(&[[-2.0, 2.0], [-2.0, 2.0]], &[2, 5]).is_err());
        assert!(build_grid(&[[2.0, 2.0], [-2.0, 2.0]], &[5, 5]).is_err());
    }

    #[test]
    fn symmetric_coordinates() {
        let g = build_grid(&[[-2.0, 2.0], [-2.0, 2.0]], &[161, 161]).unwrap();
        for i in 0..161 {
            assert_eq!(g.coord(0, i), -g.coord(0, 160 - i));
        }
        assert_eq!(g.coord(0, 80), 0.0);
        assert_eq!(g.coord(0, 120), 1.0);
    }

    #[test]
    fn ravel_round_trip() {
        let g = build_grid(&[[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]], &[3, 4, 5]).unwrap();
        for k in 0..g.len() {
            assert_eq!(g.ravel(&g.unravel(k)), k);
        }
        assert_eq!(g.neighbor(0, 0, -1), None);
        assert_eq!(g.neighbor(0, 2, 1), Some(1));
        assert_eq!(g.neighbor(0, 0, 1), Some(20));
    }

    #[test]
    fn interpolation_examples() {
        let g = build_grid(&[[0.0, 1.0], [0.0, 1.0]], &[3, 3]).unwrap();
        let f = ValueField::from_fn(g, |x| if x[0] > 0.75 { 1.0 } else { 0.0 });
        assert_eq!(f.interpolate(&[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(f.interpolate(&[1.0, 0.5]).unwrap(), 1.0);
        assert_eq!(f.interpolate(&[0.75, 0.0]).unwrap(), 0.5);
        assert!(matches!(f.interpolate(&[1.5, 0.0]), Err(Error::OutOfBox(_))));
    }

    #[test]
    fn linear_field_gradients() {
        let g = build_grid(&[[-1.0, 1.0], [-1.0, 1.0]], &[21, 21]).unwrap();
        let f = ValueField::from_fn(g, |x| x[0]);
        let gr = f.numeric_gradient(&[0.13, -0.4]).unwrap();
        for v in [&gr.forward, &gr.backward, &gr.central] {
            assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn dilation() {
        let g = build_grid(&[[0.0, 1.0], [0.0, 1.0]], &[7, 7]).unwrap();
        let mut m = vec![false; g.len()];
        m[g.ravel(&[3, 3])] = true;
        let d = dilate(&g, &m, 1);
        assert_eq!(d.iter().filter(|&&b| b).count(), 9);
        assert!(d[g.ravel(&[2, 4])] && !d[g.ravel(&[1, 3])]);
        assert_eq!(edge_mask(&g).iter().filter(|&&b| b).count(), 24);
    }

    #[test]
    fn ball_query() {
        let g = build_grid(&[[-1.0, 1.0], [-1.0, 1.0]], &[21, 21]).unwrap();
        let ball = g.nodes_in_ball(&[0.0, 0.0], 0.1);
        assert_eq!(ball.len(), 5);
        assert!(g.nodes_in_ball(&[5.0, 5.0], 0.1).is_empty());
    }
}
