use std::sync::Arc;

use nalgebra::Vector2;

use crate::grid::{GridDomain, NodeClass};

/// Grid-sampled scalar function. Values are meaningful on active nodes
/// (interior and boundary); exterior entries are kept at zero.
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Arc<GridDomain>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Arc<GridDomain>) -> Self {
        Self {
            grid: Arc::clone(grid),
            values: vec![0.0; grid.len()],
        }
    }

    /// Samples `f` at the positions of active nodes.
    pub fn from_fn(grid: &Arc<GridDomain>, f: impl Fn(Vector2<f64>) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for k in grid.active_nodes() {
            out.values[k] = f(grid.node_position(k));
        }
        out
    }

    /// Wraps raw node values; exterior entries are zeroed.
    pub fn from_values(grid: &Arc<GridDomain>, mut values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len(), "field size does not match grid");
        for (k, v) in values.iter_mut().enumerate() {
            if !grid.is_active(k) {
                *v = 0.0;
            }
        }
        Self {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<GridDomain> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, k: usize) -> f64 {
        self.values[k]
    }

    #[inline]
    pub fn set(&mut self, k: usize, v: f64) {
        self.values[k] = v;
    }

    fn fold_over(&self, class: Option<NodeClass>, f: impl Fn(f64) -> f64) -> f64 {
        (0..self.values.len())
            .filter(|&k| match class {
                Some(c) => self.grid.class(k) == c,
                None => self.grid.is_active(k),
            })
            .fold(0.0, |m, k| m.max(f(self.values[k])))
    }

    /// Max |value| over active nodes.
    pub fn max_abs(&self) -> f64 {
        self.fold_over(None, f64::abs)
    }

    pub fn max_abs_interior(&self) -> f64 {
        self.fold_over(Some(NodeClass::Interior), f64::abs)
    }

    /// Max |self − other| over active nodes.
    pub fn max_diff(&self, other: &ScalarField) -> f64 {
        self.grid
            .active_nodes()
            .fold(0.0, |m, k| m.max((self.values[k] - other.values[k]).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.grid.active_nodes().all(|k| self.values[k].is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| if self.grid.is_active(k) { f(v) } else { 0.0 })
            .collect();
        Self {
            grid: Arc::clone(&self.grid),
            values,
        }
    }

    /// Bilinear sample at an arbitrary point (extrapolating from the nearest
    /// fully active cell), `None` when no such cell is near.
    pub fn sample(&self, p: Vector2<f64>) -> Option<f64> {
        self.grid
            .cell_stencil(p)
            .map(|st| st.iter().map(|&(k, w)| w * self.values[k]).sum())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let (nx, ny) = self.grid.dims();
        let values: Vec<Option<f64>> = (0..self.values.len())
            .map(|k| self.grid.is_active(k).then_some(self.values[k]))
            .collect();
        serde_json::json!({ "dims": [nx, ny], "values": values })
    }
}
