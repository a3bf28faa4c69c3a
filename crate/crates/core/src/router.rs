//! Single-linkage clustering of a model population into trees, and
//! nearest-center routing.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pairwise_l2, Matrix};
use crate::wzt;

pub const ROUTER_FILE: &str = "router.json";

#[derive(Debug, Clone, PartialEq)]
pub struct RouterModel {
    pub k: usize,
    pub centers: Vec<Matrix>,
    pub layer_name: String,
    /// Single-linkage merge heights, ascending.
    pub merge_heights: Vec<f64>,
    /// Cluster of every fitted item, in input order.
    pub assignments: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RouterManifest {
    k: usize,
    layer_name: String,
    merge_heights: Vec<f64>,
    assignments: Vec<usize>,
    centers: Vec<String>,
}

/// Minimum-spanning-tree edges `(height, a, b)` sorted by height; these are
/// exactly the single-linkage merges.
fn mst_edges(dist: &Matrix) -> Vec<(f64, usize, usize)> {
    let n = dist.rows();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    in_tree[0] = true;
    for j in 1..n {
        best[j] = dist[(0, j)];
    }
    for _ in 1..n {
        let mut next = usize::MAX;
        for j in 0..n {
            if !in_tree[j] && (next == usize::MAX || best[j] < best[next]) {
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((best[next], parent[next], next));
        for j in 0..n {
            if !in_tree[j] && dist[(next, j)] < best[j] {
                best[j] = dist[(next, j)];
                parent[j] = next;
            }
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    edges
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Cluster count from the largest gap between consecutive merge heights;
/// ties go to the lower cut. Two items form two clusters unless identical.
pub fn largest_gap_k(heights: &[f64]) -> Result<usize> {
    let n = heights.len() + 1;
    if heights.iter().all(|&h| h == 0.0) {
        return Err(Error::Degenerate(
            "all models are identical on the routing layer".into(),
        ));
    }
    if heights.len() == 1 {
        return Ok(2);
    }
    let mut best_gap = f64::NEG_INFINITY;
    let mut best_i = 0;
    for i in 0..heights.len() - 1 {
        let gap = heights[i + 1] - heights[i];
        if gap > best_gap {
            best_gap = gap;
            best_i = i;
        }
    }
    if best_gap <= 0.0 {
        return Ok(1);
    }
    // Merges 0..=best_i happen below the cut.
    Ok(n - (best_i + 1))
}

/// Clusters `items` and returns per-cluster means as centers. `k` overrides
/// the largest-gap choice.
pub fn fit_router(items: &[Matrix], layer_name: &str, k: Option<usize>) -> Result<RouterModel> {
    let n = items.len();
    if n < 2 {
        return Err(Error::config(format!("routing needs at least 2 models, got {n}")));
    }
    let dist = pairwise_l2(items)?;
    let edges = mst_edges(&dist);
    let heights: Vec<f64> = edges.iter().map(|e| e.0).collect();
    let k = match k {
        Some(k) if k == 0 || k > n => {
            return Err(Error::config(format!("cluster count {k} outside 1..={n}")))
        }
        Some(k) => k,
        None => largest_gap_k(&heights)?,
    };

    let mut parent: Vec<usize> = (0..n).collect();
    for &(_, a, b) in &edges[..n - k] {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    // Clusters numbered by their first member.
    let mut label_of_root = vec![usize::MAX; n];
    let mut assignments = vec![0; n];
    let mut next = 0;
    for i in 0..n {
        let r = find(&mut parent, i);
        if label_of_root[r] == usize::MAX {
            label_of_root[r] = next;
            next += 1;
        }
        assignments[i] = label_of_root[r];
    }

    let (rows, cols) = items[0].shape();
    let mut centers = vec![Matrix::zeros(rows, cols); k];
    let mut counts = vec![0usize; k];
    for (item, &c) in items.iter().zip(&assignments) {
        counts[c] += 1;
        for (dst, v) in centers[c].as_mut_slice().iter_mut().zip(item.as_slice()) {
            *dst += v;
        }
    }
    for (center, &count) in centers.iter_mut().zip(&counts) {
        center.as_mut_slice().iter_mut().for_each(|v| *v /= count as f64);
    }
    for a in 0..k {
        for b in a + 1..k {
            if centers[a].distance(&centers[b])? == 0.0 {
                return Err(Error::Degenerate(format!("centers {a} and {b} coincide")));
            }
        }
    }
    Ok(RouterModel {
        k,
        centers,
        layer_name: layer_name.to_string(),
        merge_heights: heights,
        assignments,
    })
}

/// Index of the nearest center in Frobenius distance; ties go to the lower index.
pub fn route(router: &RouterModel, x: &Matrix) -> Result<usize> {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in router.centers.iter().enumerate() {
        if c.shape() != x.shape() {
            return Err(Error::dim(format!(
                "routing input {:?} vs center {:?}",
                x.shape(),
                c.shape()
            )));
        }
        let d = x.distance(c)?;
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    Ok(best)
}

impl RouterModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::with_capacity(self.k);
        for (i, c) in self.centers.iter().enumerate() {
            let file = format!("center_{i}.wzt");
            wzt::write_matrix(&dir.join(&file), c)?;
            files.push(file);
        }
        let manifest = RouterManifest {
            k: self.k,
            layer_name: self.layer_name.clone(),
            merge_heights: self.merge_heights.clone(),
            assignments: self.assignments.clone(),
            centers: files,
        };
        let path = dir.join(ROUTER_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(ROUTER_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: RouterManifest = serde_json::from_str(&text)?;
        if m.centers.len() != m.k {
            return Err(Error::format(&path, "center count differs from k"));
        }
        let centers = m
            .centers
            .iter()
            .map(|f| wzt::read_matrix(&dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            k: m.k,
            centers,
            layer_name: m.layer_name,
            merge_heights: m.merge_heights,
            assignments: m.assignments,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    fn blob(center: &Matrix, spread: f64, rng: &mut Rng) -> Matrix {
        let noise = Matrix::gaussian(center.rows(), center.cols(), spread, rng);
        center.add(&noise).unwrap()
    }

    #[test]
    fn recovers_two_separated_groups() {
        let mut rng = Rng::new(1);
        let a = Matrix::gaussian(4, 3, 10.0, &mut rng);
        let b = Matrix::gaussian(4, 3, 10.0, &mut rng);
        let mut items = Vec::new();
        let mut truth = Vec::new();
        for i in 0..20 {
            let (c, t) = if i % 2 == 0 { (&a, 0) } else { (&b, 1) };
            items.push(blob(c, 0.05, &mut rng));
            truth.push(t);
        }
        let r = fit_router(&items, "fc1", None).unwrap();
        assert_eq!(r.k, 2);
        assert_eq!(r.assignments, truth);
        for (item, &t) in items.iter().zip(&truth) {
            assert_eq!(route(&r, item).unwrap(), t);
        }
    }

    #[test]
    fn degenerate_and_override() {
        let x = Matrix::filled(2, 2, 1.0);
        assert!(matches!(
            fit_router(&[x.clone(), x.clone()], "fc1", None),
            Err(Error::Degenerate(_))
        ));
        assert!(fit_router(&[x.clone()], "fc1", None).is_err());
        let y = Matrix::filled(2, 2, 2.0);
        let z = Matrix::filled(2, 2, 2.1);
        let r = fit_router(&[x.clone(), y.clone(), z], "fc1", Some(1)).unwrap();
        assert_eq!(r.k, 1);
        assert_eq!(fit_router(&[x, y], "fc1", None).unwrap().k, 2);
    }

    #[test]
    fn gap_rule() {
        assert_eq!(largest_gap_k(&[0.1, 0.1, 0.2, 5.0, 5.1]).unwrap(), 3);
        assert_eq!(largest_gap_k(&[1.0, 1.0, 1.0]).unwrap(), 1);
        assert!(largest_gap_k(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn route_ties_and_centers() {
        let r = RouterModel {
            k: 3,
            centers: vec![
                Matrix::filled(1, 2, 0.0),
                Matrix::filled(1, 2, 2.0),
                Matrix::filled(1, 2, 5.0),
            ],
            layer_name: "fc1".into(),
            merge_heights: vec![],
            assignments: vec![],
        };
        for (k, c) in r.centers.iter().enumerate() {
            assert_eq!(route(&r, c).unwrap(), k);
        }
        assert_eq!(route(&r, &Matrix::filled(1, 2, 1.0)).unwrap(), 0);
        assert!(route(&r, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::new(3);
        let items: Vec<Matrix> = (0..6)
            .map(|i| Matrix::filled(2, 3, (i / 3) as f64 * 10.0).add(&Matrix::gaussian(2, 3, 0.1, &mut rng)).unwrap())
            .collect();
        let mut r = fit_router(&items, "fc1", None).unwrap();
        r.centers.iter_mut().for_each(Matrix::round_to_f32);
        r.save(dir.path()).unwrap();
        assert_eq!(RouterModel::load(dir.path()).unwrap(), r);
    }
}
