//! Karhunen–Loève expansion of log-normal random fields with the exponential
//! kernel `σ² exp(−‖x−y‖/ζ)`, collocated at mesh nodes with lumped weights.
//!
//! The weighted eigenproblem `W^{1/2} C W^{1/2} v = ψ v` is solved densely on
//! small meshes. Larger lattices use block Lanczos with full
//! reorthogonalization, applying `C` through a circulant embedding and FFTs.

use crate::mesh::{Lattice, Mesh2D};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::Arc;
use thiserror::Error;

/// Largest collocation set handed to the eigensolver.
pub const MAX_COLLOCATION: usize = 20_000;

/// Problems at or below this size are decomposed densely.
const DENSE_LIMIT: usize = 1_200;

const BLOCK: usize = 4;

#[derive(Debug, Error)]
pub enum RandomFieldError {
    #[error("random field: {0}")]
    Spec(String),
    #[error("eigensolver did not converge: {0}")]
    Eigen(String),
    #[error("KL cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomFieldSpec {
    /// Standard deviation of the underlying Gaussian field.
    pub sigma: f64,
    /// Correlation length (mm).
    pub zeta: f64,
    #[serde(default = "default_n_kl")]
    pub n_kl: usize,
}

fn default_n_kl() -> usize {
    100
}

impl RandomFieldSpec {
    pub fn validate(&self, num_points: usize) -> Result<(), RandomFieldError> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(RandomFieldError::Spec(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return Err(RandomFieldError::Spec(format!("zeta must be positive, got {}", self.zeta)));
        }
        if self.n_kl == 0 || self.n_kl > num_points {
            return Err(RandomFieldError::Spec(format!(
                "n_kl must lie in 1..={num_points}, got {}",
                self.n_kl
            )));
        }
        Ok(())
    }
}

pub fn covariance(x: [f64; 2], y: [f64; 2], spec: &RandomFieldSpec) -> f64 {
    let r = (x[0] - y[0]).hypot(x[1] - y[1]);
    spec.sigma * spec.sigma * (-r / spec.zeta).exp()
}

/// Truncated KL basis on the nodes of one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct KLBasis {
    pub sigma: f64,
    pub zeta: f64,
    pub mesh_hash: [u8; 32],
    /// Nonincreasing, non-negative.
    pub eigenvalues: Vec<f64>,
    /// One nodal field per eigenvalue, unit norm under `weights`.
    pub vectors: Vec<Vec<f64>>,
    /// Lumped nodal quadrature weights.
    pub weights: Vec<f64>,
    /// Trace of the discrete covariance operator, the sum of all its
    /// eigenvalues.
    pub total_variance: f64,
    pub collocation_points: usize,
}

impl KLBasis {
    pub fn n_kl(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.weights.len()
    }

    /// `Σ ψ_n k_n(x_i) k_n(x_j)`.
    pub fn reconstructed_covariance(&self, i: usize, j: usize) -> f64 {
        self.eigenvalues.iter().zip(&self.vectors).map(|(l, k)| l * k[i] * k[j]).sum()
    }

    /// `⟨k_a, k_b⟩_W`.
    pub fn inner(&self, a: usize, b: usize) -> f64 {
        self.weights.iter().zip(&self.vectors[a]).zip(&self.vectors[b]).map(|((w, x), y)| w * x * y).sum()
    }
}

/// Lumped (row-sum) nodal weights of the active elements.
pub fn lumped_weights(mesh: &Mesh2D) -> Vec<f64> {
    let mut w = vec![0.0; mesh.num_nodes()];
    for (e, conn) in mesh.elements.iter().enumerate() {
        if mesh.active[e] {
            let a = mesh.element_area(e) / 4.0;
            for &n in conn {
                w[n] += a;
            }
        }
    }
    w
}

/// Collocation lattice: every `stride`-th lattice line, with each mesh node
/// assigned to its nearest collocation point.
struct Collocation {
    lattice: Lattice,
    weights: Vec<f64>,
    /// Collocation index of every mesh node.
    owner: Vec<usize>,
}

fn collocation(mesh: &Mesh2D, weights: &[f64]) -> Collocation {
    let lat = &mesh.lattice;
    let mut stride = 1;
    while (lat.nx / stride + 1) * (lat.ny / stride + 1) > MAX_COLLOCATION {
        stride += 1;
    }
    let sub = Lattice {
        nx: lat.nx / stride,
        ny: lat.ny / stride,
        origin: lat.origin,
        hx: lat.hx * stride as f64,
        hy: lat.hy * stride as f64,
    };
    let mut sw = vec![0.0; (sub.nx + 1) * (sub.ny + 1)];
    let mut owner = vec![0; mesh.num_nodes()];
    for (n, o) in owner.iter_mut().enumerate() {
        let (i, j) = lat.node_ij(n);
        let si = ((i as f64 / stride as f64).round() as usize).min(sub.nx);
        let sj = ((j as f64 / stride as f64).round() as usize).min(sub.ny);
        *o = sub.node_index(si, sj);
        sw[*o] += weights[n];
    }
    Collocation { lattice: sub, weights: sw, owner }
}

/// `y = C x` for the unit-variance kernel on a lattice, through a circulant
/// embedding of size `2P × 2Q`.
struct LatticeKernel {
    p: usize,
    q: usize,
    spectrum: Vec<Complex<f64>>,
    fwd_rows: Arc<dyn Fft<f64>>,
    inv_rows: Arc<dyn Fft<f64>>,
    fwd_cols: Arc<dyn Fft<f64>>,
    inv_cols: Arc<dyn Fft<f64>>,
}

impl LatticeKernel {
    fn new(lat: &Lattice, zeta: f64) -> Self {
        let (p, q) = (lat.nx + 1, lat.ny + 1);
        let (mp, mq) = (2 * p, 2 * q);
        let mut planner = FftPlanner::new();
        let fwd_rows = planner.plan_fft_forward(mp);
        let inv_rows = planner.plan_fft_inverse(mp);
        let fwd_cols = planner.plan_fft_forward(mq);
        let inv_cols = planner.plan_fft_inverse(mq);
        let offset = |a: usize, m: usize| -> f64 {
            if a <= m / 2 {
                a as f64
            } else {
                a as f64 - m as f64
            }
        };
        // row-major over (j, i): index j * mp + i
        let mut c = vec![Complex::new(0.0, 0.0); mp * mq];
        for j in 0..mq {
            for i in 0..mp {
                let dx = offset(i, mp) * lat.hx;
                let dy = offset(j, mq) * lat.hy;
                c[j * mp + i] = Complex::new((-(dx.hypot(dy)) / zeta).exp(), 0.0);
            }
        }
        let mut k = Self { p, q, spectrum: Vec::new(), fwd_rows, inv_rows, fwd_cols, inv_cols };
        k.fft2(&mut c, false);
        k.spectrum = c;
        k
    }

    fn fft2(&self, data: &mut [Complex<f64>], inverse: bool) {
        let (mp, mq) = (2 * self.p, 2 * self.q);
        let (rows, cols) = if inverse { (&self.inv_rows, &self.inv_cols) } else { (&self.fwd_rows, &self.fwd_cols) };
        for row in data.chunks_exact_mut(mp) {
            rows.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); mq];
        for i in 0..mp {
            for j in 0..mq {
                col[j] = data[j * mp + i];
            }
            cols.process(&mut col);
            for j in 0..mq {
                data[j * mp + i] = col[j];
            }
        }
    }

    /// `x` is indexed like the lattice nodes: `j * P + i`.
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (mp, mq) = (2 * self.p, 2 * self.q);
        let mut buf = vec![Complex::new(0.0, 0.0); mp * mq];
        for j in 0..self.q {
            for i in 0..self.p {
                buf[j * mp + i] = Complex::new(x[j * self.p + i], 0.0);
            }
        }
        self.fft2(&mut buf, false);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.fft2(&mut buf, true);
        let scale = 1.0 / (mp * mq) as f64;
        let mut y = vec![0.0; self.p * self.q];
        for j in 0..self.q {
            for i in 0..self.p {
                y[j * self.p + i] = buf[j * mp + i].re * scale;
            }
        }
        y
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Eigenpairs `(values, vectors)` of the weighted operator, largest first.
type EigenPairs = (Vec<f64>, Vec<Vec<f64>>);

fn dense_eigen(points: &[[f64; 2]], sqrt_w: &[f64], zeta: f64, count: usize) -> Result<EigenPairs, RandomFieldError> {
    let n = points.len();
    let unit = RandomFieldSpec { sigma: 1.0, zeta, n_kl: 1 };
    let a = DMatrix::from_fn(n, n, |i, j| sqrt_w[i] * covariance(points[i], points[j], &unit) * sqrt_w[j]);
    let eig = SymmetricEigen::try_new(a, f64::EPSILON, 10_000)
        .ok_or_else(|| RandomFieldError::Eigen(format!("dense eigensolver failed on {n} points")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().take(count).map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order.iter().take(count).map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect();
    Ok((values, vectors))
}

/// Orthogonalize `w` against the columns of `basis` (twice), returning the
/// accumulated projection coefficients.
fn orthogonalize(basis: &[Vec<f64>], w: &mut [f64]) -> Vec<f64> {
    let mut coeff = vec![0.0; basis.len()];
    for _ in 0..2 {
        for (c, v) in coeff.iter_mut().zip(basis) {
            let h = dot(v, w);
            axpy(-h, v, w);
            *c += h;
        }
    }
    coeff
}

/// Block Lanczos (block Arnoldi with symmetric projection) for the top
/// `count` eigenpairs of `x ↦ √W C √W x`.
fn lanczos_eigen(
    kernel: &LatticeKernel,
    sqrt_w: &[f64],
    count: usize,
    seed: u64,
) -> Result<EigenPairs, RandomFieldError> {
    let n = sqrt_w.len();
    let op = |x: &[f64]| -> Vec<f64> {
        let sx: Vec<f64> = x.iter().zip(sqrt_w).map(|(a, b)| a * b).collect();
        kernel.apply(&sx).iter().zip(sqrt_w).map(|(a, b)| a * b).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random_unit = |basis: &[Vec<f64>]| -> Vec<f64> {
        loop {
            let mut v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            orthogonalize(basis, &mut v);
            let nv = dot(&v, &v).sqrt();
            if nv > 1e-8 {
                v.iter_mut().for_each(|x| *x /= nv);
                return v;
            }
        }
    };

    let max_dim = n;
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for _ in 0..BLOCK.min(n) {
        let v = random_unit(&basis);
        basis.push(v);
    }
    // projected matrix, grown column by column
    let mut h: Vec<Vec<f64>> = Vec::new();
    let mut next = 0;
    let mut check_at = (count + 2 * BLOCK + 40).min(max_dim);
    let lambda_floor = 1e-300;
    loop {
        // expand with A applied to the newest block
        let end = basis.len();
        let mut new_vectors = Vec::new();
        for col in next..end {
            let mut w = op(&basis[col]);
            let coeff = orthogonalize(&basis, &mut w);
            let coeff2 = orthogonalize(&new_vectors, &mut w);
            h.push(coeff.into_iter().chain(coeff2).collect());
            let nw = dot(&w, &w).sqrt();
            if basis.len() + new_vectors.len() >= max_dim {
                continue;
            }
            if nw > 1e-10 * h.last().map_or(1.0, |c| c.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-300)) {
                w.iter_mut().for_each(|x| *x /= nw);
                new_vectors.push(w);
                h.last_mut().expect("column pushed above").push(nw);
            } else {
                let mut all = basis.clone();
                all.extend(new_vectors.iter().cloned());
                new_vectors.push(random_unit(&all));
            }
        }
        next = end;
        basis.extend(new_vectors);

        let m = next;
        if m >= check_at || m >= max_dim {
            // symmetric projection T[i][j] = v_iᵀ A v_j from the stored
            // coefficients (column j holds v_iᵀ A v_j for i < basis size then)
            let t = DMatrix::from_fn(m, m, |i, j| {
                let (a, b) = if i >= j { (i, j) } else { (j, i) };
                // h[b][a] = v_aᵀ A v_b, available for a < len(h[b])
                h[b].get(a).copied().unwrap_or(0.0)
            });
            let eig = SymmetricEigen::try_new(t, f64::EPSILON, 10_000)
                .ok_or_else(|| RandomFieldError::Eigen("projected eigenproblem failed".into()))?;
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
            let top = eig.eigenvalues[order[0]].max(lambda_floor);
            let take = count.min(m);
            let mut values = Vec::with_capacity(take);
            let mut vectors = Vec::with_capacity(take);
            let mut worst: f64 = 0.0;
            for &k in order.iter().take(take) {
                let s = eig.eigenvectors.column(k);
                let mut y = vec![0.0; n];
                for (i, v) in basis.iter().take(m).enumerate() {
                    axpy(s[i], v, &mut y);
                }
                let theta = eig.eigenvalues[k];
                let ay = op(&y);
                let r: f64 = ay.iter().zip(&y).map(|(a, b)| (a - theta * b).powi(2)).sum::<f64>().sqrt();
                worst = worst.max(r / top);
                values.push(theta);
                vectors.push(y);
            }
            if worst <= 1e-8 || m >= max_dim {
                return Ok((values, vectors));
            }
            log::debug!("lanczos: dim {m}, worst relative residual {worst:.2e}");
            check_at = (m + m / 2).min(max_dim);
        }
    }
}

/// Decompose the covariance on the mesh nodes and keep the top `n_kl` pairs.
pub fn kl_decompose(mesh: &Mesh2D, spec: &RandomFieldSpec) -> Result<KLBasis, RandomFieldError> {
    let weights = lumped_weights(mesh);
    let col = collocation(mesh, &weights);
    let m = col.weights.len();
    spec.validate(m)?;
    let sqrt_w: Vec<f64> = col.weights.iter().map(|w| w.sqrt()).collect();
    let (values, vectors) = if m <= DENSE_LIMIT {
        let points: Vec<[f64; 2]> = (0..m)
            .map(|k| {
                let (i, j) = col.lattice.node_ij(k);
                [col.lattice.origin[0] + i as f64 * col.lattice.hx, col.lattice.origin[1] + j as f64 * col.lattice.hy]
            })
            .collect();
        dense_eigen(&points, &sqrt_w, spec.zeta, spec.n_kl)?
    } else {
        let kernel = LatticeKernel::new(&col.lattice, spec.zeta);
        lanczos_eigen(&kernel, &sqrt_w, spec.n_kl, 0x4b4c)?
    };

    let s2 = spec.sigma * spec.sigma;
    // k = W^{-1/2} v on collocation points with weight; zero elsewhere
    let sub_vectors: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&sqrt_w).map(|(x, s)| if *s > 0.0 { x / s } else { 0.0 }).collect())
        .collect();
    let nodal: Vec<Vec<f64>> =
        sub_vectors.iter().map(|k: &Vec<f64>| col.owner.iter().map(|&o| k[o]).collect()).collect();
    Ok(KLBasis {
        sigma: spec.sigma,
        zeta: spec.zeta,
        mesh_hash: mesh.content_hash(),
        eigenvalues: values.iter().map(|l| s2 * l.max(0.0)).collect(),
        vectors: nodal,
        total_variance: s2 * col.weights.iter().sum::<f64>(),
        weights,
        collocation_points: m,
    })
}

/// `mean_log + Σ √ψ_n k_n ξ_n` at every node.
pub fn log_field(basis: &KLBasis, mean_log: &[f64], xi: &[f64]) -> Result<Vec<f64>, RandomFieldError> {
    if xi.len() != basis.n_kl() {
        return Err(RandomFieldError::Spec(format!("xi has {} entries, n_kl is {}", xi.len(), basis.n_kl())));
    }
    if mean_log.len() != basis.num_nodes() {
        return Err(RandomFieldError::Spec(format!(
            "mean_log has {} entries for {} nodes",
            mean_log.len(),
            basis.num_nodes()
        )));
    }
    let mut f = mean_log.to_vec();
    for ((l, k), x) in basis.eigenvalues.iter().zip(&basis.vectors).zip(xi) {
        axpy(l.sqrt() * x, k, &mut f);
    }
    Ok(f)
}

pub fn realize_lognormal(basis: &KLBasis, mean_log: &[f64], xi: &[f64]) -> Result<Vec<f64>, RandomFieldError> {
    Ok(log_field(basis, mean_log, xi)?.into_iter().map(f64::exp).collect())
}

/// `n_kl` independent standard normals.
pub fn sample_xi<R: Rng + ?Sized>(n_kl: usize, rng: &mut R) -> Vec<f64> {
    (0..n_kl).map(|_| rng.sample(StandardNormal)).collect()
}

const CACHE_MAGIC: &[u8; 8] = b"PFKLBAS1";

/// Binary sidecar: magic, mesh hash, σ, ζ, counts, eigenvalues, weights,
/// vectors, trailing SHA-256 of everything before it. Little-endian.
pub fn encode_basis(basis: &KLBasis) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&basis.mesh_hash);
    for v in [basis.sigma, basis.zeta, basis.total_variance] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for c in [basis.n_kl(), basis.num_nodes(), basis.collocation_points] {
        out.extend_from_slice(&(c as u64).to_le_bytes());
    }
    for v in basis.eigenvalues.iter().chain(&basis.weights).chain(basis.vectors.iter().flatten()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], RandomFieldError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| RandomFieldError::Cache("truncated file".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64(&mut self) -> Result<f64, RandomFieldError> {
        let v = f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(RandomFieldError::Cache("non-finite value".into()));
        }
        Ok(v)
    }

    fn u64(&mut self) -> Result<usize, RandomFieldError> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| RandomFieldError::Cache("count overflows".into()))
    }
}

/// Parse and validate a sidecar written by [`encode_basis`].
pub fn decode_basis(data: &[u8]) -> Result<KLBasis, RandomFieldError> {
    if data.len() < CACHE_MAGIC.len() + 32 {
        return Err(RandomFieldError::Cache("truncated file".into()));
    }
    let (body, digest) = data.split_at(data.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(RandomFieldError::Cache("checksum mismatch".into()));
    }
    let mut r = Reader { data: body, pos: 0 };
    if r.take(8)? != CACHE_MAGIC {
        return Err(RandomFieldError::Cache("bad magic".into()));
    }
    let mesh_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let sigma = r.f64()?;
    let zeta = r.f64()?;
    let total_variance = r.f64()?;
    let n_kl = r.u64()?;
    let nodes = r.u64()?;
    let collocation_points = r.u64()?;
    let expected = n_kl
        .checked_add(1)
        .and_then(|k| k.checked_mul(nodes))
        .and_then(|x| x.checked_add(n_kl))
        .and_then(|x| x.checked_mul(8));
    if expected != Some(body.len() - r.pos) {
        return Err(RandomFieldError::Cache("payload size does not match header counts".into()));
    }
    let mut read = |n: usize| (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>();
    let eigenvalues = read(n_kl)?;
    let weights = read(nodes)?;
    let mut vectors = Vec::with_capacity(n_kl);
    for _ in 0..n_kl {
        vectors.push(read(nodes)?);
    }
    if sigma < 0.0 || zeta <= 0.0 {
        return Err(RandomFieldError::Cache("invalid sigma or zeta".into()));
    }
    if eigenvalues.iter().any(|l| *l < 0.0) || eigenvalues.windows(2).any(|w| w[1] > w[0]) {
        return Err(RandomFieldError::Cache("eigenvalues must be non-negative and nonincreasing".into()));
    }
    if weights.iter().any(|w| *w < 0.0) {
        return Err(RandomFieldError::Cache("negative quadrature weight".into()));
    }
    Ok(KLBasis { sigma, zeta, mesh_hash, eigenvalues, vectors, weights, total_variance, collocation_points })
}

/// Load a cached basis when its key matches, otherwise decompose and store.
pub fn load_or_decompose(
    mesh: &Mesh2D,
    spec: &RandomFieldSpec,
    path: &std::path::Path,
) -> Result<KLBasis, RandomFieldError> {
    if let Ok(bytes) = std::fs::read(path) {
        match decode_basis(&bytes) {
            Ok(b) if b.mesh_hash == mesh.content_hash() && b.sigma == spec.sigma && b.zeta == spec.zeta && b.n_kl() == spec.n_kl => {
                return Ok(b)
            }
            Ok(_) => log::info!("KL cache {} is for a different key; recomputing", path.display()),
            Err(e) => log::warn!("ignoring KL cache {}: {e}", path.display()),
        }
    }
    let basis = kl_decompose(mesh, spec)?;
    std::fs::write(path, encode_basis(&basis))
        .map_err(|e| RandomFieldError::Cache(format!("writing {}: {e}", path.display())))?;
    Ok(basis)
}

/// File name for a cache entry keyed by mesh hash, σ, ζ and n_kl.
pub fn cache_file_name(mesh: &Mesh2D, spec: &RandomFieldSpec) -> String {
    let mut hasher = Sha256::new();
    hasher.update(mesh.content_hash());
    hasher.update(spec.sigma.to_le_bytes());
    hasher.update(spec.zeta.to_le_bytes());
    hasher.update((spec.n_kl as u64).to_le_bytes());
    let key = hasher.finalize();
    let hex: String = key.iter().take(12).map(|b| format!("{b:02x}")).collect();
    format!("kl_{hex}.bin")
}
