//! Composite Simpson grids in one and two dimensions.
//!
//! A grid is assembled from [`Envelope`]s: axis-aligned windows where an
//! integrand has mass, each with a length scale that sets the local node
//! spacing. Heavy-tailed envelopes add geometrically widening shells out to a
//! radius where the remaining mass is negligible. In one dimension, known jump
//! locations become segment boundaries so the rule never straddles a
//! discontinuity.

use crate::error::{Error, Result};

/// Where a density lives, for the purpose of placing quadrature nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Smallest length scale of the density inside the window.
    pub scale: f64,
    pub heavy_tail: Option<HeavyTail>,
}

/// Polynomial tails extending beyond the envelope window.
#[derive(Clone, Debug, PartialEq)]
pub struct HeavyTail {
    pub center: Vec<f64>,
    /// Distance from `center` beyond which the tail mass is below ~1e-9.
    pub radius: f64,
}

impl Envelope {
    /// `center ± radius_sd * sd` per axis.
    pub fn around(center: &[f64], sd: &[f64], radius_sd: f64, scale: f64) -> Self {
        Envelope {
            lo: center.iter().zip(sd).map(|(c, s)| c - radius_sd * s).collect(),
            hi: center.iter().zip(sd).map(|(c, s)| c + radius_sd * s).collect(),
            scale,
            heavy_tail: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }
}

/// Node density: number of nodes per envelope length scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Resolution {
    pub nodes_per_scale: f64,
    pub min_nodes: usize,
    pub max_nodes: usize,
}

impl Resolution {
    /// Fine 1-D rule for integrands with kinks such as `|p - q|`.
    pub const FINE_1D: Resolution = Resolution {
        nodes_per_scale: 1000.0,
        min_nodes: 1 << 14,
        max_nodes: 1 << 23,
    };
    /// Per-axis rule for 2-D integrands with kinks.
    pub const FINE_2D: Resolution = Resolution {
        nodes_per_scale: 24.0,
        min_nodes: 256,
        max_nodes: 4096,
    };
    /// Per-axis rule for smooth 2-D integrands.
    pub const SMOOTH_2D: Resolution = Resolution {
        nodes_per_scale: 10.0,
        min_nodes: 128,
        max_nodes: 2048,
    };
}

/// One-dimensional composite Simpson rule.
#[derive(Clone, Debug)]
pub struct Grid1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn axis_boundaries(envs: &[Envelope], axis: usize, jumps: &[f64]) -> Vec<f64> {
    let mut pts: Vec<f64> = Vec::new();
    for e in envs {
        pts.push(e.lo[axis]);
        pts.push(e.hi[axis]);
        if let Some(t) = &e.heavy_tail {
            let c = t.center[axis];
            let core = (c - e.lo[axis]).max(e.hi[axis] - c).max(f64::MIN_POSITIVE);
            let mut r = 2.0 * core;
            while r < t.radius {
                pts.push(c - r);
                pts.push(c + r);
                r *= 2.0;
            }
            pts.push(c - t.radius.max(core));
            pts.push(c + t.radius.max(core));
        }
    }
    pts.extend_from_slice(jumps);
    pts.retain(|v| v.is_finite());
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let span = pts.last().copied().unwrap_or(0.0) - pts.first().copied().unwrap_or(0.0);
    let tiny = 1e-12 * span.max(1.0);
    pts.dedup_by(|b, a| (*b - *a).abs() <= tiny);
    pts
}

impl Grid1D {
    pub fn build(envs: &[Envelope], axis: usize, jumps: &[f64], res: Resolution) -> Result<Self> {
        if envs.is_empty() {
            return Err(Error::input("quadrature needs at least one envelope"));
        }
        let pts = axis_boundaries(envs, axis, jumps);
        if pts.len() < 2 {
            return Err(Error::numerical("degenerate quadrature window"));
        }
        let mut counts: Vec<usize> = pts
            .windows(2)
            .map(|w| {
                let (u, v) = (w[0], w[1]);
                let local = envs
                    .iter()
                    .filter(|e| e.lo[axis] <= u && v <= e.hi[axis])
                    .map(|e| e.scale)
                    .fold(f64::INFINITY, f64::min);
                let n = if local.is_finite() {
                    ((v - u) / local * res.nodes_per_scale).ceil() as usize
                } else {
                    64
                };
                n.max(2)
            })
            .collect();
        let total: usize = counts.iter().sum();
        if total < res.min_nodes {
            let factor = res.min_nodes.div_ceil(total);
            counts.iter_mut().for_each(|c| *c *= factor);
        }
        let total: usize = counts.iter().sum();
        if total > res.max_nodes {
            let shrink = total as f64 / res.max_nodes as f64;
            counts
                .iter_mut()
                .for_each(|c| *c = ((*c as f64 / shrink).ceil() as usize).max(2));
        }
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for (w, &n) in pts.windows(2).zip(&counts) {
            let n = n + n % 2;
            let (u, v) = (w[0], w[1]);
            let h = (v - u) / n as f64;
            // Start just inside the segment so a jump at `u` is integrated
            // from the right; the end node takes the left limit.
            let nudge = 1e-10 * h.min(1.0);
            for k in 0..=n {
                let x = if k == 0 { u + nudge } else if k == n { v } else { u + k as f64 * h };
                let c = if k == 0 || k == n {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                nodes.push(x);
                weights.push(c * h / 3.0);
            }
        }
        Ok(Grid1D { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Tensor-product Simpson rule on a rectangle.
#[derive(Clone, Debug)]
pub struct Grid2D {
    pub x: Grid1D,
    pub y: Grid1D,
}

impl Grid2D {
    pub fn build(envs: &[Envelope], res: Resolution) -> Result<Self> {
        Ok(Grid2D {
            x: Grid1D::build(envs, 0, &[], res)?,
            y: Grid1D::build(envs, 1, &[], res)?,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len() * self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        let mut total = 0.0;
        let mut p = [0.0; 2];
        for (&xi, &wx) in self.x.nodes.iter().zip(&self.x.weights) {
            p[0] = xi;
            let mut row = 0.0;
            for (&yj, &wy) in self.y.nodes.iter().zip(&self.y.weights) {
                p[1] = yj;
                row += wy * f(&p);
            }
            total += wx * row;
        }
        total
    }
}
