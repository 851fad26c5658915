//! Finite-difference derivative stacks on the masked grid.
//!
//! Every partial derivative up to total order four is taken as a tensor
//! product of 1D stencils. Central second-order stencils are used where the
//! required nodes are available, otherwise shifted (one-sided) second-order
//! windows, and first-order windows as a last resort.

use crate::field::ScalarField;
use crate::grid::GridDomain;

/// Multi-indices of the stack, one storage slot per unordered partial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Partial {
    X,
    Y,
    XX,
    XY,
    YY,
    XXX,
    XXY,
    XYY,
    YYY,
    XXXX,
    XXYY,
    YYYY,
}

impl Partial {
    pub const ALL: [Partial; 12] = [
        Partial::X,
        Partial::Y,
        Partial::XX,
        Partial::XY,
        Partial::YY,
        Partial::XXX,
        Partial::XXY,
        Partial::XYY,
        Partial::YYY,
        Partial::XXXX,
        Partial::XXYY,
        Partial::YYYY,
    ];

    /// Derivative orders `(in x, in y)`.
    pub fn orders(self) -> (usize, usize) {
        match self {
            Partial::X => (1, 0),
            Partial::Y => (0, 1),
            Partial::XX => (2, 0),
            Partial::XY => (1, 1),
            Partial::YY => (0, 2),
            Partial::XXX => (3, 0),
            Partial::XXY => (2, 1),
            Partial::XYY => (1, 2),
            Partial::YYY => (0, 3),
            Partial::XXXX => (4, 0),
            Partial::XXYY => (2, 2),
            Partial::YYYY => (0, 4),
        }
    }

    /// The partial with the roles of x and y exchanged.
    pub fn swapped(self) -> Partial {
        let (a, b) = self.orders();
        Partial::from_orders(b, a)
    }

    pub fn from_orders(px: usize, py: usize) -> Partial {
        *Self::ALL
            .iter()
            .find(|p| p.orders() == (px, py))
            .expect("unsupported derivative multi-index")
    }

    fn slot(self) -> usize {
        Self::ALL.iter().position(|&p| p == self).unwrap()
    }
}

/// Per-node partial derivatives of a field, in physical units.
#[derive(Clone, Debug)]
pub struct DerivativeStack {
    data: [Vec<f64>; 12],
}

impl DerivativeStack {
    #[inline]
    pub fn get(&self, p: Partial, k: usize) -> f64 {
        self.data[p.slot()][k]
    }

    pub fn component(&self, p: Partial) -> &[f64] {
        &self.data[p.slot()]
    }

    /// `f_xx + f_yy` at node `k`.
    #[inline]
    pub fn laplacian(&self, k: usize) -> f64 {
        self.get(Partial::XX, k) + self.get(Partial::YY, k)
    }
}

/// 1D window: first offset and its weights for one derivative order.
#[derive(Clone, Debug)]
struct Window {
    start: isize,
    weights: Vec<f64>,
}

/// Candidate windows per derivative order, in order of preference.
struct StencilTable {
    by_order: Vec<Vec<Window>>,
}

impl StencilTable {
    fn new() -> Self {
        let by_order = (0..=4).map(candidate_windows).collect();
        Self { by_order }
    }
}

fn candidate_windows(p: usize) -> Vec<Window> {
    if p == 0 {
        return vec![Window {
            start: 0,
            weights: vec![1.0],
        }];
    }
    let mut out = Vec::new();
    let central = if p.is_multiple_of(2) { p + 1 } else { p + 2 };
    let half = (central / 2) as isize;
    out.push(window(-half, central, p));
    // second-order shifted windows, nearest to centred first
    let m = p + 2;
    let mut starts: Vec<isize> = (-(m as isize - 1)..=0).collect();
    starts.sort_by_key(|s| ((2 * s + m as isize - 1).abs(), *s));
    for s in starts {
        if !(m == central && s == -half) {
            out.push(window(s, m, p));
        }
    }
    // first-order fallback
    let m = p + 1;
    let mut starts: Vec<isize> = (-(m as isize - 1)..=0).collect();
    starts.sort_by_key(|s| ((2 * s + m as isize - 1).abs(), *s));
    for s in starts {
        out.push(window(s, m, p));
    }
    out
}

fn window(start: isize, len: usize, order: usize) -> Window {
    let nodes: Vec<f64> = (0..len).map(|k| (start + k as isize) as f64).collect();
    let weights = fornberg_weights(&nodes, order)
        .into_iter()
        .map(snap_dyadic)
        .collect();
    Window { start, weights }
}

/// Integer-offset stencil weights are dyadic rationals; snapping removes
/// the recursion's round-off so that polynomial fields are differentiated
/// exactly.
fn snap_dyadic(w: f64) -> f64 {
    let scaled = w * 4096.0;
    if (scaled - scaled.round()).abs() < 1e-6 {
        scaled.round() / 4096.0
    } else {
        w
    }
}

/// Finite-difference weights at 0 for derivative `order` on `nodes`.
pub fn fornberg_weights(nodes: &[f64], order: usize) -> Vec<f64> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0];
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i];
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

/// Derivatives of `values` at every node in `targets`, using only nodes
/// flagged in `available`.
pub(crate) fn derivatives_masked(
    grid: &GridDomain,
    values: &[f64],
    available: &[bool],
    targets: impl Iterator<Item = usize>,
) -> DerivativeStack {
    let table = StencilTable::new();
    let n = grid.len();
    let mut data: [Vec<f64>; 12] = std::array::from_fn(|_| vec![0.0; n]);
    let (nx, ny) = grid.dims();
    let h = grid.spacing();
    let avail = |i: isize, j: isize| {
        i >= 0 && j >= 0 && (i as usize) < nx && (j as usize) < ny && available[j as usize * nx + i as usize]
    };
    let targets: Vec<usize> = targets.collect();
    for p in Partial::ALL {
        let (px, py) = p.orders();
        let wx = &table.by_order[px];
        let wy = &table.by_order[py];
        let mut pairs: Vec<(usize, usize)> = (0..wx.len())
            .flat_map(|a| (0..wy.len()).map(move |b| (a, b)))
            .collect();
        pairs.sort_by_key(|&(a, b)| (a + b, a));
        let scale = h.powi((px + py) as i32);
        let out = &mut data[p.slot()];
        for &k in &targets {
            let (i, j) = grid.coords(k);
            let (i, j) = (i as isize, j as isize);
            for &(a, b) in &pairs {
                let (sx, sy) = (&wx[a], &wy[b]);
                let fits = (0..sy.weights.len()).all(|q| {
                    (0..sx.weights.len())
                        .all(|r| avail(i + sx.start + r as isize, j + sy.start + q as isize))
                });
                if !fits {
                    continue;
                }
                let mut acc = 0.0;
                for (q, wyq) in sy.weights.iter().enumerate() {
                    if *wyq == 0.0 {
                        continue;
                    }
                    let row = (j + sy.start + q as isize) as usize * nx;
                    let mut inner = 0.0;
                    for (r, wxr) in sx.weights.iter().enumerate() {
                        inner += wxr * values[row + (i + sx.start + r as isize) as usize];
                    }
                    acc += wyq * inner;
                }
                out[k] = acc / scale;
                break;
            }
        }
    }
    DerivativeStack { data }
}

/// Derivative stack of `f` on its active nodes, using active nodes only.
pub fn fd_derivatives(f: &ScalarField) -> DerivativeStack {
    let g = f.grid();
    let available: Vec<bool> = (0..g.len()).map(|k| g.is_active(k)).collect();
    derivatives_masked(g, f.values(), &available, g.active_nodes())
}
