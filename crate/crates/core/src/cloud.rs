//! Point clouds in ℝᴰ and brute-force nearest-neighbour queries.

use nalgebra::DVector;

use crate::error::{HdmError, Result};
use crate::geometry::AmbientPoint;

/// `len` points of dimension `dim`, stored row after row.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(HdmError::DimensionMismatch {
                expected: dim,
                found: coords.len(),
            });
        }
        Ok(Self { dim, coords })
    }

    pub fn from_sphere(points: &[AmbientPoint]) -> Self {
        let coords = points.iter().flat_map(|p| p.coords().iter().copied()).collect();
        Self { dim: 3, coords }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.point(i))
    }

    pub fn squared_distance(&self, i: usize, j: usize) -> f64 {
        self.point(i)
            .iter()
            .zip(self.point(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// The `k` nearest other points of every point, ascending by distance with
/// ties broken by the smaller index. Each entry is `(index, squared distance)`.
pub fn k_nearest(cloud: &PointCloud, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = cloud.len();
    let k = k.min(n.saturating_sub(1));
    (0..n)
        .map(|i| {
            let mut cand: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, cloud.squared_distance(i, j)))
                .collect();
            let order = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
            if k < cand.len() {
                cand.select_nth_unstable_by(k, order);
                cand.truncate(k);
            }
            cand.sort_unstable_by(order);
            cand
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_coordinates() {
        assert!(PointCloud::new(3, vec![0.0; 7]).is_err());
    }

    #[test]
    fn knn_orders_by_distance_then_index() {
        let cloud = PointCloud::new(1, vec![0.0, 1.0, -1.0, 2.0]).unwrap();
        let nn = k_nearest(&cloud, 2);
        assert_eq!(nn[0].iter().map(|e| e.0).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(nn[3].iter().map(|e| e.0).collect::<Vec<_>>(), vec![1, 0]);
    }

    #[test]
    fn knn_caps_at_population() {
        let cloud = PointCloud::new(2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(k_nearest(&cloud, 10)[0].len(), 1);
    }
}
