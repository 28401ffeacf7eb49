//! Nonparametric (optionally cluster) resampling shared by the bootstrap
//! standard errors and the moment-inequality critical values.

use rand::Rng;

#[derive(Debug, Clone)]
pub struct Resampler {
    n: usize,
    /// Member rows of each cluster; `None` for observation-level resampling.
    groups: Option<Vec<Vec<usize>>>,
}

impl Resampler {
    pub fn new(n: usize, cluster_id: Option<&[u32]>) -> Self {
        let groups = cluster_id.map(|ids| {
            let mut order: Vec<u32> = ids.to_vec();
            order.sort_unstable();
            order.dedup();
            let mut groups = vec![Vec::new(); order.len()];
            for (i, id) in ids.iter().enumerate() {
                let g = order.binary_search(id).unwrap();
                groups[g].push(i);
            }
            groups
        });
        Resampler { n, groups }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_units(&self) -> usize {
        self.groups.as_ref().map_or(self.n, Vec::len)
    }

    pub fn is_clustered(&self) -> bool {
        self.groups.is_some()
    }

    /// Multiplicity of each observation in one bootstrap draw.
    pub fn counts<R: Rng>(&self, rng: &mut R) -> Vec<u32> {
        let mut counts = vec![0u32; self.n];
        match &self.groups {
            None => {
                for _ in 0..self.n {
                    counts[rng.gen_range(0..self.n)] += 1;
                }
            }
            Some(groups) => {
                for _ in 0..groups.len() {
                    for &i in &groups[rng.gen_range(0..groups.len())] {
                        counts[i] += 1;
                    }
                }
            }
        }
        counts
    }

    /// Row indices of one bootstrap draw (with repetition).
    pub fn indices<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        match &self.groups {
            None => (0..self.n).map(|_| rng.gen_range(0..self.n)).collect(),
            Some(groups) => {
                let mut idx = Vec::with_capacity(self.n);
                for _ in 0..groups.len() {
                    idx.extend_from_slice(&groups[rng.gen_range(0..groups.len())]);
                }
                idx
            }
        }
    }
}

/// Type-1 (left-continuous inverse CDF) quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], tau: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let b = sorted.len();
    // Guard against tau * b landing a hair above an integer.
    let k = (tau * b as f64 - 1e-9).ceil().max(1.0) as usize;
    sorted[k.min(b) - 1]
}

pub fn sort_finite(mut v: Vec<f64>) -> Vec<f64> {
    v.retain(|x| !x.is_nan());
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn counts_sum_to_n() {
        let r = Resampler::new(50, None);
        let c = r.counts(&mut stream(1, &[0]));
        assert_eq!(c.iter().sum::<u32>(), 50);
    }

    #[test]
    fn clusters_move_together() {
        let ids = [3, 3, 9, 9, 9, 1];
        let r = Resampler::new(6, Some(&ids));
        assert_eq!(r.num_units(), 3);
        for s in 0..20 {
            let c = r.counts(&mut stream(s, &[]));
            assert_eq!(c[0], c[1]);
            assert_eq!(c[2], c[3]);
            assert_eq!(c[3], c[4]);
        }
    }

    #[test]
    fn type1_quantile() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.0);
        assert_eq!(quantile_sorted(&v, 0.51), 3.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&[7.0], 0.95), 7.0);
    }
}
