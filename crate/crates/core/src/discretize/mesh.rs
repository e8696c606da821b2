use crate::error::{Error, Result};

/// Uniform grid of the unit interval or unit square with `M` cells per side.
///
/// Interior nodes are numbered lexicographically with `x` fastest. In 2D each
/// cell is split along its `(0,0)-(1,1)` diagonal into two right triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    subdivisions: usize,
}

impl Mesh {
    pub fn new(dim: usize, subdivisions: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::range("dim", dim as f64, "dimension must be 1 or 2"));
        }
        if subdivisions < 2 {
            return Err(Error::range(
                "M",
                subdivisions as f64,
                "at least 2 subdivisions are needed for an interior node",
            ));
        }
        Ok(Self { dim, subdivisions })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn subdivisions(&self) -> usize {
        self.subdivisions
    }

    pub fn h(&self) -> f64 {
        1.0 / self.subdivisions as f64
    }

    /// Interior nodes per coordinate direction.
    pub fn interior_per_side(&self) -> usize {
        self.subdivisions - 1
    }

    pub fn num_interior(&self) -> usize {
        self.interior_per_side().pow(self.dim as u32)
    }

    /// Row index of the grid vertex `(i, j)` (use `j = 0` in 1D), `None` on the boundary.
    pub fn node_index(&self, i: usize, j: usize) -> Option<usize> {
        let m = self.subdivisions;
        let inside = |c: usize| c >= 1 && c < m;
        match self.dim {
            1 => (inside(i) && j == 0).then(|| i - 1),
            _ => (inside(i) && inside(j)).then(|| (j - 1) * (m - 1) + (i - 1)),
        }
    }

    /// Coordinates of interior node `row`; the second entry is 0 in 1D.
    pub fn coords(&self, row: usize) -> [f64; 2] {
        let n = self.interior_per_side();
        let h = self.h();
        match self.dim {
            1 => [(row + 1) as f64 * h, 0.0],
            _ => [(row % n + 1) as f64 * h, (row / n + 1) as f64 * h],
        }
    }

    pub fn interior_nodes(&self) -> Vec<[f64; 2]> {
        (0..self.num_interior()).map(|r| self.coords(r)).collect()
    }

    /// All boundary vertices of the grid.
    pub fn boundary_nodes(&self) -> Vec<[f64; 2]> {
        let m = self.subdivisions;
        let h = self.h();
        match self.dim {
            1 => vec![[0.0, 0.0], [1.0, 0.0]],
            _ => (0..=m)
                .flat_map(|j| (0..=m).map(move |i| (i, j)))
                .filter(|&(i, j)| i == 0 || j == 0 || i == m || j == m)
                .map(|(i, j)| [i as f64 * h, j as f64 * h])
                .collect(),
        }
    }

    /// Nodal interpolant of `g` on the interior nodes.
    pub fn interpolate<F: Fn(&[f64]) -> f64>(&self, g: F) -> Vec<f64> {
        (0..self.num_interior())
            .map(|r| {
                let c = self.coords(r);
                g(&c[..self.dim])
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_nodes() {
        let mesh = Mesh::new(1, 4).unwrap();
        let xs: Vec<f64> = mesh.interior_nodes().iter().map(|c| c[0]).collect();
        assert_eq!(xs, vec![0.25, 0.5, 0.75]);
        assert_eq!(mesh.node_index(0, 0), None);
        assert_eq!(mesh.node_index(4, 0), None);
        assert_eq!(mesh.node_index(2, 0), Some(1));
    }

    #[test]
    fn two_dimensional_counts() {
        assert_eq!(Mesh::new(2, 3).unwrap().num_interior(), 4);
        let fine = Mesh::new(2, 100).unwrap();
        assert_eq!(fine.num_interior(), 9801);
        assert!((fine.h() - 0.01).abs() < 1e-16);
        assert_eq!(fine.boundary_nodes().len(), 400);
    }

    #[test]
    fn index_is_a_bijection_onto_rows() {
        let mesh = Mesh::new(2, 5).unwrap();
        let mut seen = vec![false; mesh.num_interior()];
        for j in 0..=5 {
            for i in 0..=5 {
                if let Some(r) = mesh.node_index(i, j) {
                    assert!(!seen[r]);
                    seen[r] = true;
                    let c = mesh.coords(r);
                    assert!((c[0] - i as f64 * 0.2).abs() < 1e-15);
                    assert!((c[1] - j as f64 * 0.2).abs() < 1e-15);
                }
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(Mesh::new(1, 1).is_err());
        assert!(Mesh::new(3, 4).is_err());
    }
}
