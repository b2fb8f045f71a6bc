use serde::{Deserialize, Serialize};

use crate::csv::{join_row, parse_numeric};
use crate::error::{Error, Result};
use crate::lagrangian::Vector;

/// Uniform Cartesian grid; nodes are ordered row-major with the last axis
/// varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub points: Vec<usize>,
}

impl Grid {
    pub fn new(min: Vec<f64>, max: Vec<f64>, points: Vec<usize>) -> Result<Self> {
        let g = Self { min, max, points };
        g.validate()?;
        Ok(g)
    }

    /// A 1D grid with `points` nodes on `[lo, hi]`.
    pub fn line(lo: f64, hi: f64, points: usize) -> Result<Self> {
        Self::new(vec![lo], vec![hi], vec![points])
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.min.len();
        if d == 0 || self.max.len() != d || self.points.len() != d {
            return Err(Error::InvalidInput(format!(
                "grid has {} minima, {} maxima and {} point counts",
                self.min.len(),
                self.max.len(),
                self.points.len()
            )));
        }
        for k in 0..d {
            if !(self.min[k] < self.max[k]) || !self.min[k].is_finite() || !self.max[k].is_finite() {
                return Err(Error::InvalidInput(format!("grid axis {k} needs min < max")));
            }
            if self.points[k] < 2 {
                return Err(Error::InvalidInput(format!("grid axis {k} needs at least two points")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.max[axis] - self.min[axis]) / (self.points[axis] - 1) as f64
    }

    /// Per-axis indices of a node.
    pub fn multi_index(&self, mut node: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            idx[k] = node % self.points[k];
            node /= self.points[k];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.points).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.points[axis] {
            self.max[axis]
        } else {
            self.min[axis] + i as f64 * self.spacing(axis)
        }
    }

    pub fn node(&self, node: usize) -> Vector {
        let idx = self.multi_index(node);
        Vector::from_iterator(self.dim(), idx.iter().enumerate().map(|(k, &i)| self.coordinate(k, i)))
    }

    /// The box scaled by `factor` about its center.
    pub fn dilated_box(&self, factor: f64) -> (Vector, Vector) {
        let c: Vec<f64> = self.min.iter().zip(&self.max).map(|(a, b)| 0.5 * (a + b)).collect();
        let r: Vec<f64> = self.min.iter().zip(&self.max).map(|(a, b)| 0.5 * factor * (b - a)).collect();
        (
            Vector::from_iterator(self.dim(), c.iter().zip(&r).map(|(c, r)| c - r)),
            Vector::from_iterator(self.dim(), c.iter().zip(&r).map(|(c, r)| c + r)),
        )
    }
}

/// Diagnostics recorded while a field was computed.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FieldMetadata {
    /// Largest disagreement between the two formulations of the evolution on
    /// the cross-checked nodes.
    pub cross_check_defect: Option<f64>,
    pub cross_checked_nodes: usize,
    /// Nodes whose minimizer is not unique, as `(equation, node)`.
    pub multiple_minimizers: Vec<(usize, usize)>,
    pub notes: Vec<String>,
}

/// Grid samples of `u^i(t, ·)` for every equation.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub grid: Grid,
    pub time: f64,
    /// `values[i][node]`.
    pub values: Vec<Vec<f64>>,
    /// Minimizing endpoints `z*`, `endpoints[i][node]`.
    pub endpoints: Option<Vec<Vec<Vector>>>,
    pub metadata: FieldMetadata,
}

impl ValueField {
    pub fn new(grid: Grid, time: f64, values: Vec<Vec<f64>>) -> Result<Self> {
        let f = Self { grid, time, values, endpoints: None, metadata: FieldMetadata::default() };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let n = self.grid.len();
        if self.values.is_empty() || self.values.iter().any(|v| v.len() != n) {
            return Err(Error::InvalidInput(format!("every value array must have {n} entries")));
        }
        if self.values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("field values must be finite".into()));
        }
        if let Some(z) = &self.endpoints {
            if z.len() != self.values.len() || z.iter().any(|zi| zi.len() != n) {
                return Err(Error::InvalidInput("endpoint arrays do not match the value arrays".into()));
            }
        }
        Ok(())
    }

    /// Number of equations.
    pub fn components(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, i: usize, node: usize) -> f64 {
        self.values[i][node]
    }

    /// `-u`, keeping grid and endpoints.
    pub fn negated(&self) -> Self {
        let mut f = self.clone();
        f.values.iter_mut().flatten().for_each(|v| *v = -*v);
        f
    }

    /// CSV with header `t,x1..xd,u1..um` followed by `zi_k` columns when
    /// endpoints are present.
    pub fn to_csv(&self) -> String {
        let d = self.grid.dim();
        let m = self.components();
        let mut header: Vec<String> = vec!["t".into()];
        header.extend((1..=d).map(|k| format!("x{k}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        if self.endpoints.is_some() {
            for i in 1..=m {
                header.extend((1..=d).map(|k| format!("z{i}_{k}")));
            }
        }
        let mut out = header.join(",");
        out.push('\n');
        for node in 0..self.grid.len() {
            let x = self.grid.node(node);
            let mut row: Vec<f64> = vec![self.time];
            row.extend(x.iter());
            row.extend(self.values.iter().map(|v| v[node]));
            if let Some(z) = &self.endpoints {
                for zi in z {
                    row.extend(zi[node].iter());
                }
            }
            out.push_str(&join_row(row));
            out.push('\n');
        }
        out
    }

    /// Parses the output of [`ValueField::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let (header, rows) = parse_numeric(text)?;
        let cols = |prefix: char| header.iter().filter(|h| h.starts_with(prefix) && !h.contains('_')).count();
        let (d, m) = (cols('x'), cols('u'));
        let nz = header.iter().filter(|h| h.starts_with('z')).count();
        if header.first().map(String::as_str) != Some("t") || d == 0 || m == 0 || header.len() != 1 + d + m + nz {
            return Err(Error::InvalidInput(format!("unrecognized field header {header:?}")));
        }
        if nz != 0 && nz != d * m {
            return Err(Error::InvalidInput(format!("expected {} endpoint columns, found {nz}", d * m)));
        }
        if rows.is_empty() {
            return Err(Error::InvalidInput("field CSV has no rows".into()));
        }
        let time = rows[0][0];
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        let mut distinct: Vec<Vec<f64>> = vec![Vec::new(); d];
        for r in &rows {
            for k in 0..d {
                let x = r[1 + k];
                min[k] = min[k].min(x);
                max[k] = max[k].max(x);
                if !distinct[k].contains(&x) {
                    distinct[k].push(x);
                }
            }
        }
        let grid = Grid::new(min, max, distinct.iter().map(Vec::len).collect())?;
        if grid.len() != rows.len() {
            return Err(Error::InvalidInput("field rows do not form a full Cartesian grid".into()));
        }
        let mut values = vec![vec![0.0; rows.len()]; m];
        let mut endpoints = (nz > 0).then(|| vec![vec![Vector::zeros(d); rows.len()]; m]);
        for (node, r) in rows.iter().enumerate() {
            let x = grid.node(node);
            if x.iter().enumerate().any(|(k, &c)| (c - r[1 + k]).abs() > 1e-9 * (1.0 + c.abs())) {
                return Err(Error::InvalidInput(format!("row {} is out of grid order", node + 1)));
            }
            for i in 0..m {
                values[i][node] = r[1 + d + i];
            }
            if let Some(z) = endpoints.as_mut() {
                for (i, zi) in z.iter_mut().enumerate() {
                    zi[node] = Vector::from_iterator(d, (0..d).map(|k| r[1 + d + m + i * d + k]));
                }
            }
        }
        let field = Self { grid, time, values, endpoints, metadata: FieldMetadata::default() };
        field.validate()?;
        Ok(field)
    }
}
