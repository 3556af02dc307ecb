//! Kernel functions and the kernel-row cache used by the solvers.
//!
//! Small problems (up to [`CacheConfig::full_threshold`] samples) keep the
//! whole Gram matrix in memory; larger ones cache individual rows with
//! least-recently-used eviction. Either way rows are handed out as shared
//! `Arc<[f64]>` slices, so readers never hold the cache lock while using them.

use std::fmt;
use std::num::NonZeroUsize;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use lru::LruCache;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Feature};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Gaussian,
}

/// Kernel choice. `kappa` is the Gaussian width in `exp(-kappa * |x - z|^2)`
/// and is ignored for the linear kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub kappa: f64,
}

impl KernelSpec {
    pub fn linear() -> Self {
        Self { kind: KernelKind::Linear, kappa: 0.0 }
    }

    pub fn gaussian(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gaussian kernel width must be positive and finite, got {kappa}"
            )));
        }
        Ok(Self { kind: KernelKind::Gaussian, kappa })
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            KernelKind::Linear => Ok(()),
            KernelKind::Gaussian => Self::gaussian(self.kappa).map(|_| ()),
        }
    }

    pub fn eval(&self, a: &[Feature], b: &[Feature]) -> f64 {
        match self.kind {
            KernelKind::Linear => dot(a, b),
            KernelKind::Gaussian => (-self.kappa * squared_distance(a, b)).exp(),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            KernelKind::Linear => write!(f, "linear"),
            KernelKind::Gaussian => write!(f, "gaussian {}", self.kappa),
        }
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "rbf" | "gaussian" => Ok(Self::Gaussian),
            other => Err(Error::InvalidArgument(format!("unknown kernel `{other}`"))),
        }
    }
}

pub fn dot(a: &[Feature], b: &[Feature]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut sum = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                sum += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    sum
}

/// `|a - b|^2` by merging the two index lists; exactly zero for equal rows.
pub fn squared_distance(a: &[Feature], b: &[Feature]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut sum = 0.0;
    while i < a.len() || j < b.len() {
        let d = match (a.get(i), b.get(j)) {
            (Some(&(ia, va)), Some(&(ib, vb))) => match ia.cmp(&ib) {
                std::cmp::Ordering::Less => {
                    i += 1;
                    va
                }
                std::cmp::Ordering::Greater => {
                    j += 1;
                    vb
                }
                std::cmp::Ordering::Equal => {
                    i += 1;
                    j += 1;
                    va - vb
                }
            },
            (Some(&(_, va)), None) => {
                i += 1;
                va
            }
            (None, Some(&(_, vb))) => {
                j += 1;
                vb
            }
            (None, None) => unreachable!(),
        };
        sum += d * d;
    }
    sum
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheConfig {
    /// Keep the full Gram matrix when `n` is at most this.
    pub full_threshold: usize,
    /// Rows kept in row-cache mode (at least 2).
    pub capacity_rows: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self { full_threshold: 4096, capacity_rows: 1024 }
    }
}

enum Storage {
    Full(Vec<Arc<[f64]>>),
    Rows(Mutex<LruCache<usize, Arc<[f64]>>>),
}

/// Row access to the Gram matrix `H_ij = K(x_i, x_j)` of one dataset.
pub struct KernelCache {
    spec: KernelSpec,
    data: Arc<Dataset>,
    storage: Storage,
    diag: Vec<f64>,
    row_norms: OnceLock<Vec<f64>>,
    evals: AtomicU64,
}

impl fmt::Debug for KernelCache {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelCache")
            .field("spec", &self.spec)
            .field("n", &self.data.len())
            .field("full", &self.is_full_matrix())
            .finish()
    }
}

impl KernelCache {
    pub fn new(spec: KernelSpec, data: Arc<Dataset>, config: CacheConfig) -> Result<Self> {
        spec.validate()?;
        let n = data.len();
        let diag: Vec<f64> = data.rows().iter().map(|r| spec.eval(r, r)).collect();
        let evals = AtomicU64::new(n as u64);
        let storage = if n <= config.full_threshold {
            let mut m = vec![0.0; n * n];
            for i in 0..n {
                m[i * n + i] = diag[i];
                for j in 0..i {
                    let v = spec.eval(data.row(i), data.row(j));
                    m[i * n + j] = v;
                    m[j * n + i] = v;
                }
            }
            evals.fetch_add((n * n.saturating_sub(1) / 2) as u64, Ordering::Relaxed);
            Storage::Full(m.chunks(n.max(1)).map(Arc::from).collect())
        } else {
            let cap = NonZeroUsize::new(config.capacity_rows.max(2)).unwrap();
            Storage::Rows(Mutex::new(LruCache::new(cap)))
        };
        Ok(Self { spec, data, storage, diag, row_norms: OnceLock::new(), evals })
    }

    pub fn spec(&self) -> KernelSpec {
        self.spec
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn dataset_arc(&self) -> Arc<Dataset> {
        Arc::clone(&self.data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_full_matrix(&self) -> bool {
        matches!(self.storage, Storage::Full(_))
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Number of kernel evaluations performed so far.
    pub fn evaluations(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    /// `[K(x_i, x_0), ..., K(x_i, x_{n-1})]`.
    pub fn row(&self, i: usize) -> Result<Arc<[f64]>> {
        let n = self.len();
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, len: n });
        }
        Ok(self.row_unchecked(i))
    }

    pub(crate) fn row_unchecked(&self, i: usize) -> Arc<[f64]> {
        match &self.storage {
            Storage::Full(rows) => Arc::clone(&rows[i]),
            Storage::Rows(cache) => {
                if let Some(r) = cache.lock().unwrap().get(&i) {
                    return Arc::clone(r);
                }
                // computed outside the lock; a concurrent miss may compute it twice
                let row = self.compute_row(i);
                cache.lock().unwrap().put(i, Arc::clone(&row));
                row
            }
        }
    }

    fn compute_row(&self, i: usize) -> Arc<[f64]> {
        let xi = self.data.row(i);
        let row: Vec<f64> = self.data.rows().iter().map(|xj| self.spec.eval(xi, xj)).collect();
        self.evals.fetch_add(row.len() as u64, Ordering::Relaxed);
        row.into()
    }

    /// Kernel value between a training sample and an arbitrary point.
    pub fn eval_against(&self, i: usize, x: &[Feature]) -> f64 {
        self.spec.eval(self.data.row(i), x)
    }

    /// Euclidean norms of the Gram rows, computed on first use.
    pub fn row_norms(&self) -> &[f64] {
        self.row_norms.get_or_init(|| {
            (0..self.len())
                .map(|i| {
                    let row = match &self.storage {
                        Storage::Full(rows) => Arc::clone(&rows[i]),
                        // one pass over H without disturbing the row cache
                        Storage::Rows(_) => self.compute_row(i),
                    };
                    row.iter().map(|v| v * v).sum::<f64>().sqrt()
                })
                .collect()
        })
    }

    /// Row norms if they have already been computed.
    pub fn cached_row_norms(&self) -> Option<&[f64]> {
        self.row_norms.get().map(Vec::as_slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::make_synthetic;
    use proptest::prelude::*;

    fn ds(rows: Vec<Vec<Feature>>) -> Arc<Dataset> {
        let n = rows.len();
        Arc::new(Dataset::new(rows, vec![1.0; n]).unwrap())
    }

    #[test]
    fn linear_is_dot_product() {
        assert_eq!(KernelSpec::linear().eval(&[(1, 2.0)], &[(1, 3.0)]), 6.0);
        assert_eq!(KernelSpec::linear().eval(&[(1, 2.0)], &[(2, 3.0)]), 0.0);
    }

    #[test]
    fn gaussian_values() {
        let k = KernelSpec::gaussian(0.5).unwrap();
        let x = [(1, 1.0), (4, -2.5)];
        assert_eq!(k.eval(&x, &x), 1.0);
        let v = k.eval(&[(1, 1.0)], &[(2, 1.0)]);
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_width() {
        assert!(KernelSpec::gaussian(0.0).is_err());
        assert!(KernelSpec::gaussian(f64::NAN).is_err());
        assert!(KernelSpec { kind: KernelKind::Gaussian, kappa: -1.0 }.validate().is_err());
    }

    fn caches(data: Arc<Dataset>, spec: KernelSpec) -> [KernelCache; 2] {
        let full = KernelCache::new(spec, Arc::clone(&data), CacheConfig::default()).unwrap();
        let rows = KernelCache::new(spec, data, CacheConfig { full_threshold: 0, capacity_rows: 3 }).unwrap();
        assert!(full.is_full_matrix() && !rows.is_full_matrix());
        [full, rows]
    }

    #[test]
    fn rows_match_direct_evaluation() {
        let data = Arc::new(make_synthetic(12, 0.0, 2.0, 4).unwrap());
        let spec = KernelSpec::gaussian(0.7).unwrap();
        for cache in caches(Arc::clone(&data), spec) {
            for i in 0..data.len() {
                let row = cache.row(i).unwrap();
                assert_eq!(row[i], cache.diag()[i]);
                assert_eq!(cache.diag()[i], 1.0);
                for j in 0..data.len() {
                    assert_eq!(row[j], spec.eval(data.row(i), data.row(j)));
                    assert_eq!(row[j], cache.row(j).unwrap()[i]);
                }
            }
            assert!(cache.row(data.len()).is_err());
        }
    }

    #[test]
    fn warm_row_is_not_recomputed() {
        let data = Arc::new(make_synthetic(10, 0.0, 2.0, 4).unwrap());
        let [_, cache] = caches(data, KernelSpec::linear());
        let first = cache.row(3).unwrap();
        let after_first = cache.evaluations();
        let second = cache.row(3).unwrap();
        assert_eq!(cache.evaluations(), after_first);
        assert_eq!(first, second);
    }

    #[test]
    fn lru_evicts_oldest_row() {
        let data = Arc::new(make_synthetic(10, 0.0, 2.0, 4).unwrap());
        let [_, cache] = caches(data, KernelSpec::linear());
        for i in 0..3 {
            cache.row(i).unwrap();
        }
        cache.row(0).unwrap(); // refresh 0, so 1 is oldest
        cache.row(5).unwrap(); // evicts 1
        let before = cache.evaluations();
        cache.row(0).unwrap();
        assert_eq!(cache.evaluations(), before);
        cache.row(1).unwrap();
        assert_eq!(cache.evaluations(), before + 10);
    }

    #[test]
    fn single_sample_linear_norm() {
        let cache = KernelCache::new(KernelSpec::linear(), ds(vec![vec![(1, 2.0)]]), CacheConfig::default()).unwrap();
        assert_eq!(cache.row_norms(), &[4.0]);
    }

    #[test]
    fn row_norms_match_direct_recomputation() {
        let rows = vec![
            vec![(1, 0.3), (2, -1.0)],
            vec![(2, 2.0)],
            vec![(1, -0.7), (3, 0.4)],
            vec![(1, 1.5), (2, 0.5), (3, -0.2)],
            vec![],
        ];
        let data = ds(rows.clone());
        for spec in [KernelSpec::linear(), KernelSpec::gaussian(0.5).unwrap()] {
            for cache in caches(Arc::clone(&data), spec) {
                assert!(cache.cached_row_norms().is_none());
                let norms = cache.row_norms().to_vec();
                for (i, xi) in rows.iter().enumerate() {
                    let direct: f64 = rows.iter().map(|xj| spec.eval(xi, xj).powi(2)).sum::<f64>().sqrt();
                    assert!((norms[i] - direct).abs() < 1e-12);
                }
                let evals = cache.evaluations();
                assert_eq!(cache.row_norms(), norms.as_slice());
                assert_eq!(cache.evaluations(), evals);
            }
        }
    }

    #[test]
    fn gaussian_row_norm_bounds() {
        let data = Arc::new(make_synthetic(30, 0.1, 3.0, 2).unwrap());
        let cache = KernelCache::new(KernelSpec::gaussian(0.5).unwrap(), data, CacheConfig::default()).unwrap();
        let bound = (30f64).sqrt();
        for &r in cache.row_norms() {
            assert!((1.0..=bound + 1e-12).contains(&r));
        }
    }

    fn arb_points() -> impl Strategy<Value = Vec<Vec<Feature>>> {
        let row = proptest::collection::btree_map(1u32..5, -3.0f64..3.0, 0..4)
            .prop_map(|m| m.into_iter().collect::<Vec<_>>());
        proptest::collection::vec(row, 1..=10)
    }

    proptest! {
        #[test]
        fn gram_is_symmetric_psd(points in arb_points(), kappa in 0.05f64..5.0, linear in proptest::bool::ANY) {
            let spec = if linear { KernelSpec::linear() } else { KernelSpec::gaussian(kappa).unwrap() };
            let n = points.len();
            let cache = KernelCache::new(spec, ds(points), CacheConfig::default()).unwrap();
            let m = nalgebra::DMatrix::from_fn(n, n, |i, j| cache.row(i).unwrap()[j]);
            prop_assert_eq!(&m, &m.transpose());
            let eig = m.symmetric_eigenvalues();
            prop_assert!(eig.iter().all(|&l| l >= -1e-8), "eigenvalues {:?}", eig);
        }
    }
}
