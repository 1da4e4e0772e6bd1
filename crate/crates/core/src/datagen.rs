//! Training-corpus generation: Brunovsky-structured time-invariant systems
//! with controlled spectra, trigonometric time-varying systems, and the
//! stabilizability/detectability filter that gates admission.

use crate::linalg::{self, eigenvalues, rank, sym_eig, Mat};
use crate::opnet::{encode_input, EncodingDesc};
use crate::riccati::{self, solve_are, solve_dre, RiccatiTrajectory, SystemInstance};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Threshold for PBH rank tests, relative to the Frobenius norm of the
/// tested matrix.
pub const PBH_RANK_TOL: f64 = 1e-8;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent deterministic stream for worker `stream` under `seed`.
/// Workers may run in any order; output depends only on the pair.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = splitmix64(seed ^ 0xA076_1D64_78BD_642F).wrapping_add(splitmix64(stream));
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Open-loop spectral class of the sampled dynamics matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralClass {
    /// All eigenvalues in the open left half-plane.
    FullyStable,
    /// All eigenvalues in the open right half-plane.
    FullyUnstable,
    /// At least one eigenvalue on each side.
    Mixed,
}

impl SpectralClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            SpectralClass::FullyStable => "fully-stable",
            SpectralClass::FullyUnstable => "fully-unstable",
            SpectralClass::Mixed => "mixed",
        }
    }
}

/// Trigonometric-expansion coefficients of a time-varying system:
///
/// `A(t) = A0 + sum_i (C1_i cos(i pi t) + C2_i sin(i pi t))`, with the same
/// pattern for `B(t)` (via `D`) and the Gram root `M(t)` (via `E`);
/// `Q(t) = M(t)^T M(t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrigCoeffs {
    pub r_base: usize,
    pub a0: Mat,
    pub b0: Mat,
    pub m0: Mat,
    pub c1: Vec<Mat>,
    pub c2: Vec<Mat>,
    pub d1: Vec<Mat>,
    pub d2: Vec<Mat>,
    pub e1: Vec<Mat>,
    pub e2: Vec<Mat>,
}

impl TrigCoeffs {
    pub fn n(&self) -> usize {
        self.a0.rows()
    }

    pub fn m(&self) -> usize {
        self.b0.cols()
    }

    fn expand(&self, base: &Mat, cos_terms: &[Mat], sin_terms: &[Mat], t: f64) -> Mat {
        let mut out = base.clone();
        for i in 0..self.r_base {
            let w = (i + 1) as f64 * std::f64::consts::PI * t;
            out.axpy(w.cos(), &cos_terms[i]);
            out.axpy(w.sin(), &sin_terms[i]);
        }
        out
    }

    pub fn a_at(&self, t: f64) -> Mat {
        self.expand(&self.a0, &self.c1, &self.c2, t)
    }

    pub fn b_at(&self, t: f64) -> Mat {
        self.expand(&self.b0, &self.d1, &self.d2, t)
    }

    pub fn m_at(&self, t: f64) -> Mat {
        self.expand(&self.m0, &self.e1, &self.e2, t)
    }

    /// `Q(t) = M(t)^T M(t)`; PSD by construction.
    pub fn q_at(&self, t: f64) -> Mat {
        let m = self.m_at(t);
        let mut q = m.matmul_tn(&m);
        q.symmetrize();
        q
    }

    /// Concatenated entries in fixed field order: `A0, B0, M0`, then per
    /// harmonic `C1_i, C2_i, D1_i, D2_i, E1_i, E2_i`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.a0.data());
        out.extend_from_slice(self.b0.data());
        out.extend_from_slice(self.m0.data());
        for i in 0..self.r_base {
            out.extend_from_slice(self.c1[i].data());
            out.extend_from_slice(self.c2[i].data());
            out.extend_from_slice(self.d1[i].data());
            out.extend_from_slice(self.d2[i].data());
            out.extend_from_slice(self.e1[i].data());
            out.extend_from_slice(self.e2[i].data());
        }
        out
    }

    pub fn flat_len(n: usize, m: usize, r_base: usize) -> usize {
        (2 * n * n + n * m) + r_base * (4 * n * n + 2 * n * m)
    }
}

/// A sampled Brunovsky-structured system: block-companion dynamics plus
/// diagonal weights, one control channel per block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BrunovskySpec {
    pub partition: Vec<usize>,
    /// Per-block companion coefficients `a_{i,0} .. a_{i,n_i-1}`.
    pub coeffs: Vec<Vec<f64>>,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    pub class: SpectralClass,
}

impl BrunovskySpec {
    pub fn n(&self) -> usize {
        self.partition.iter().sum()
    }

    /// Assemble `(A, B, Q, R)`: block-diagonal companion blocks with
    /// superdiagonal ones and `-a_{i,.}` in the last row, last-unit input
    /// columns, and diagonal weights.
    pub fn assemble(&self) -> (Mat, Mat, Mat, Mat) {
        let n = self.n();
        let r = self.partition.len();
        let mut a = Mat::zeros(n, n);
        let mut b = Mat::zeros(n, r);
        let mut offset = 0;
        for (blk, &size) in self.partition.iter().enumerate() {
            for i in 0..size.saturating_sub(1) {
                a[(offset + i, offset + i + 1)] = 1.0;
            }
            for j in 0..size {
                a[(offset + size - 1, offset + j)] = -self.coeffs[blk][j];
            }
            b[(offset + size - 1, blk)] = 1.0;
            offset += size;
        }
        (a, b, Mat::diag(&self.q_diag), Mat::diag(&self.r_diag))
    }
}

/// Expand `prod_j (s - lambda_j)` into monic coefficients `(a_0 .. a_{k-1})`
/// with `p(s) = s^k + a_{k-1} s^{k-1} + ... + a_0`. Complex roots must be
/// supplied as conjugate pairs.
pub fn poly_from_roots(roots: &[(f64, f64)]) -> Result<Vec<f64>> {
    // poly[i] = coefficient of s^i; starts at the constant polynomial 1.
    let mut poly = vec![1.0];
    let mut pending: Vec<(f64, f64)> = Vec::new();

    let mul_linear = |poly: &mut Vec<f64>, lambda: f64| {
        let mut out = vec![0.0; poly.len() + 1];
        for (i, &c) in poly.iter().enumerate() {
            out[i + 1] += c;
            out[i] -= lambda * c;
        }
        *poly = out;
    };
    let mul_quadratic = |poly: &mut Vec<f64>, re: f64, im: f64| {
        // (s - (re + i im))(s - (re - i im)) = s^2 - 2 re s + (re^2 + im^2)
        let c1 = -2.0 * re;
        let c0 = re * re + im * im;
        let mut out = vec![0.0; poly.len() + 2];
        for (i, &c) in poly.iter().enumerate() {
            out[i + 2] += c;
            out[i + 1] += c1 * c;
            out[i] += c0 * c;
        }
        *poly = out;
    };

    for &(re, im) in roots {
        if im == 0.0 {
            mul_linear(&mut poly, re);
            continue;
        }
        let scale = re.abs().max(im.abs()).max(1.0);
        if let Some(pos) = pending.iter().position(|&(pr, pi)| {
            (pr - re).abs() <= 1e-9 * scale && (pi + im).abs() <= 1e-9 * scale
        }) {
            let (pr, pi) = pending.swap_remove(pos);
            mul_quadratic(&mut poly, 0.5 * (pr + re), 0.5 * (pi.abs() + im.abs()));
        } else {
            pending.push((re, im));
        }
    }
    if let Some(&orphan) = pending.first() {
        return Err(Error::UnpairedComplexRoot(orphan));
    }
    poly.pop(); // drop the leading 1
    Ok(poly)
}

/// Root-magnitude ranges for the class-controlled Brunovsky sampler.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerOptions {
    /// Range for the absolute real part of sampled eigenvalues.
    pub root_re: (f64, f64),
    /// Upper bound for the imaginary part of conjugate pairs.
    pub imag_max: f64,
    /// When set, per-block companion coefficients are rejection-sampled
    /// into `[-c, c]`.
    pub coeff_range: Option<f64>,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            root_re: (0.1, 2.0),
            imag_max: 2.0,
            coeff_range: Some(2.0),
        }
    }
}

/// Draw a Brunovsky instance for the given partition with eigenvalue signs
/// enforcing `class`. Eigenvalues are sampled directly (real parts
/// sign-constrained with magnitude in `opts.root_re`) and expanded through
/// [`poly_from_roots`]; blocks whose coefficients fall outside the allowed
/// range are redrawn. Weights follow `q_j, r_j ~ U(0.1, 1.1)`.
pub fn sample_brunovsky(
    n: usize,
    partition: &[usize],
    class: SpectralClass,
    rng: &mut ChaCha8Rng,
    opts: &SamplerOptions,
) -> Result<BrunovskySpec> {
    let total: usize = partition.iter().sum();
    if total != n || partition.iter().any(|&s| s == 0) {
        return Err(Error::InvalidInput(format!(
            "partition {partition:?} does not sum to {n}"
        )));
    }

    'outer: for _restart in 0..10_000 {
        // Group structure per block: a group is one real root or one
        // conjugate pair; pairs share the sign of their real part.
        let mut groups_per_block: Vec<Vec<bool>> = Vec::with_capacity(partition.len());
        for &size in partition {
            let max_pairs = size / 2;
            let pairs = rng.random_range(0..=max_pairs);
            let mut groups = vec![true; pairs]; // true = conjugate pair
            groups.extend(std::iter::repeat(false).take(size - 2 * pairs));
            groups_per_block.push(groups);
        }
        let group_count: usize = groups_per_block.iter().map(|g| g.len()).sum();

        let signs: Vec<f64> = match class {
            SpectralClass::FullyStable => vec![-1.0; group_count],
            SpectralClass::FullyUnstable => vec![1.0; group_count],
            SpectralClass::Mixed => {
                if group_count < 2 {
                    continue 'outer; // cannot mix signs; redraw structure
                }
                loop {
                    let signs: Vec<f64> = (0..group_count)
                        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                        .collect();
                    let pos = signs.iter().any(|&s| s > 0.0);
                    let neg = signs.iter().any(|&s| s < 0.0);
                    if pos && neg {
                        break signs;
                    }
                }
            }
        };

        let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(partition.len());
        let mut sign_iter = signs.iter();
        for groups in &groups_per_block {
            let block_signs: Vec<f64> =
                groups.iter().map(|_| *sign_iter.next().unwrap()).collect();
            let mut accepted = None;
            for _try in 0..20_000 {
                let mut roots: Vec<(f64, f64)> = Vec::new();
                for (is_pair, &sign) in groups.iter().zip(&block_signs) {
                    let re = sign * rng.random_range(opts.root_re.0..opts.root_re.1);
                    if *is_pair {
                        let im = rng.random_range(0.0..opts.imag_max);
                        roots.push((re, im));
                        roots.push((re, -im));
                    } else {
                        roots.push((re, 0.0));
                    }
                }
                let c = poly_from_roots(&roots)?;
                let in_range = match opts.coeff_range {
                    Some(limit) => c.iter().all(|v| v.abs() <= limit),
                    None => true,
                };
                if in_range {
                    accepted = Some(c);
                    break;
                }
            }
            match accepted {
                Some(c) => coeffs.push(c),
                None => continue 'outer,
            }
        }

        let q_diag: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.1)).collect();
        let r_diag: Vec<f64> = (0..partition.len())
            .map(|_| rng.random_range(0.1..1.1))
            .collect();
        return Ok(BrunovskySpec {
            partition: partition.to_vec(),
            coeffs,
            q_diag,
            r_diag,
            class,
        });
    }
    Err(Error::GenerationStall {
        accepted: 0,
        attempted: 10_000,
    })
}

/// Draw trigonometric coefficients with entries `~ N(0, sigma^2)` and wrap
/// them into a system instance with `P_T = I_n` and unit horizon.
pub fn sample_trig_system(
    n: usize,
    m: usize,
    r_base: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(TrigCoeffs, SystemInstance)> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut draw =
        |rows: usize, cols: usize, rng: &mut ChaCha8Rng| Mat::from_fn(rows, cols, |_, _| normal.sample(rng));
    let a0 = draw(n, n, rng);
    let b0 = draw(n, m, rng);
    let m0 = draw(n, n, rng);
    let mut c1 = Vec::new();
    let mut c2 = Vec::new();
    let mut d1 = Vec::new();
    let mut d2 = Vec::new();
    let mut e1 = Vec::new();
    let mut e2 = Vec::new();
    for _ in 0..r_base {
        c1.push(draw(n, n, rng));
        c2.push(draw(n, n, rng));
        d1.push(draw(n, m, rng));
        d2.push(draw(n, m, rng));
        e1.push(draw(n, n, rng));
        e2.push(draw(n, n, rng));
    }
    let coeffs = TrigCoeffs {
        r_base,
        a0,
        b0,
        m0,
        c1,
        c2,
        d1,
        d2,
        e1,
        e2,
    };
    let sys = SystemInstance::trig(coeffs.clone(), 1.0, Mat::identity(n))?;
    Ok((coeffs, sys))
}

/// Symmetric PSD square root via spectral decomposition with negative
/// eigenvalues clamped to zero.
pub fn sqrt_psd(q: &Mat) -> Mat {
    let (vals, v) = sym_eig(q);
    let roots: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let mut s = v.matmul(&Mat::diag(&roots)).matmul(&v.transpose());
    s.symmetrize();
    s
}

/// Full-rank check of a complex matrix `Re + i * (im on the leading n
/// columns)` through its real 2n-row embedding.
fn complex_full_rank(re: &Mat, im: f64) -> bool {
    let n = re.rows();
    if im == 0.0 {
        return rank(re, PBH_RANK_TOL) == n;
    }
    let k = re.cols();
    let emb = Mat::from_fn(2 * n, 2 * k, |i, j| {
        let (bi, bj) = (i / n, j / k);
        let (ii, jj) = (i % n, j % k);
        let re_part = re[(ii, jj)];
        let im_part = if ii == jj && jj < n { im } else { 0.0 };
        match (bi, bj) {
            (0, 0) | (1, 1) => re_part,
            (0, 1) => -im_part,
            (1, 0) => im_part,
            _ => unreachable!(),
        }
    });
    rank(&emb, PBH_RANK_TOL) == 2 * n
}

/// Outcome of the admissibility filter with the first failing time and
/// eigenvalue, when any.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    pub failure: Option<AdmissibilityFailure>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissibilityFailure {
    pub time: f64,
    pub eigenvalue: (f64, f64),
    pub test: String,
}

/// PBH stabilizability/detectability filter over the given time grid.
///
/// At each grid time, for every eigenvalue `lambda` of `A(t)` with
/// `Re lambda >= 0` the tests require
/// `rank[lambda I - A | B] = n` and `rank[lambda I - A^T | Q^{1/2}] = n`,
/// with rank decided by pivot count at relative threshold `1e-8`.
pub fn filter_admissible(sys: &SystemInstance, grid: &[f64]) -> AdmissibilityReport {
    for &t in grid {
        let a = sys.a_at(t);
        let spectrum = match eigenvalues(&a) {
            Ok(s) => s,
            Err(_) => {
                return AdmissibilityReport {
                    admissible: false,
                    failure: Some(AdmissibilityFailure {
                        time: t,
                        eigenvalue: (f64::NAN, f64::NAN),
                        test: "eigensolver".into(),
                    }),
                }
            }
        };
        let suspect: Vec<(f64, f64)> = spectrum
            .eigenvalues
            .iter()
            .copied()
            .filter(|&(re, _)| re >= 0.0)
            .collect();
        if suspect.is_empty() {
            continue;
        }
        let n = sys.n;
        let b = sys.b_at(t);
        let q_half = sqrt_psd(&sys.q_at(t));
        let at = a.transpose();
        for (re, im) in suspect {
            // [lambda I - A | B]
            let stab = Mat::from_fn(n, n + sys.m, |i, j| {
                if j < n {
                    (if i == j { re } else { 0.0 }) - a[(i, j)]
                } else {
                    b[(i, j - n)]
                }
            });
            if !complex_full_rank(&stab, im) {
                return AdmissibilityReport {
                    admissible: false,
                    failure: Some(AdmissibilityFailure {
                        time: t,
                        eigenvalue: (re, im),
                        test: "stabilizability".into(),
                    }),
                };
            }
            // [lambda I - A^T | Q^{1/2}]
            let det = Mat::from_fn(n, 2 * n, |i, j| {
                if j < n {
                    (if i == j { re } else { 0.0 }) - at[(i, j)]
                } else {
                    q_half[(i, j - n)]
                }
            });
            if !complex_full_rank(&det, im) {
                return AdmissibilityReport {
                    admissible: false,
                    failure: Some(AdmissibilityFailure {
                        time: t,
                        eigenvalue: (re, im),
                        test: "detectability".into(),
                    }),
                };
            }
        }
    }
    AdmissibilityReport {
        admissible: true,
        failure: None,
    }
}

/// Dataset target: one matrix for algebraic problems, a trajectory for
/// differential ones.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Target {
    Are(Mat),
    Dre(RiccatiTrajectory),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    Are,
    Dre,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Record {
    pub encoding: Vec<f64>,
    pub target: Target,
    pub system: SystemInstance,
    pub label: Option<SpectralClass>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kind: TargetKind,
    pub n: usize,
    pub m: usize,
    /// Grid steps for DRE targets; 0 for ARE datasets.
    pub n_t: usize,
    pub horizon: f64,
    pub encoding: EncodingDesc,
    pub config: GenConfig,
    /// Records `[0, train_count)` are the training split.
    pub train_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn train(&self) -> &[Record] {
        &self.records[..self.meta.train_count]
    }

    pub fn test(&self) -> &[Record] {
        &self.records[self.meta.train_count..]
    }
}

/// Generation settings; the produced dataset is a pure function of these.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub count: usize,
    /// Training fraction; the first `ceil(split * count)` records train.
    pub split: f64,
    pub source: SourceConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "kind")]
pub enum SourceConfig {
    #[serde(rename_all = "kebab-case")]
    BrunovskyAre {
        n: usize,
        partitions: Vec<Vec<usize>>,
        classes: Vec<SpectralClass>,
        #[serde(default)]
        sampler: Option<SamplerOptions>,
        #[serde(default)]
        single_chain_encoding: bool,
    },
    #[serde(rename_all = "kebab-case")]
    TrigDre {
        n: usize,
        m: usize,
        #[serde(default = "default_r_base")]
        r_base: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
        n_t: usize,
        #[serde(default = "default_horizon")]
        horizon: f64,
    },
}

fn default_r_base() -> usize {
    2
}

fn default_sigma() -> f64 {
    0.05
}

fn default_horizon() -> f64 {
    1.0
}

/// Generation diagnostics emitted next to every dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenReport {
    pub attempted: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    pub rejected_filter: usize,
    pub rejected_solver: usize,
    pub class_counts: Vec<(String, usize)>,
}

enum Attempt {
    Accepted(Box<Record>),
    RejectedFilter,
    RejectedSolver,
}

/// Generate, filter, and solve `count` instances, deterministically for a
/// fixed config. Attempts are processed in index order with one rng stream
/// per attempt, so the result does not depend on the number of worker
/// threads. Fails with `GenerationStall` if fewer than 1% of 10000+
/// attempts survive.
pub fn build_dataset(config: &GenConfig) -> Result<(Dataset, GenReport)> {
    if config.count == 0 {
        return Err(Error::InvalidInput("count must be positive".into()));
    }
    if !(0.0..=1.0).contains(&config.split) {
        return Err(Error::InvalidInput("split must lie in [0, 1]".into()));
    }

    let encoding = match &config.source {
        SourceConfig::BrunovskyAre {
            n,
            partitions,
            single_chain_encoding,
            ..
        } => {
            if partitions.is_empty() {
                return Err(Error::InvalidInput("no partitions given".into()));
            }
            if *single_chain_encoding {
                if partitions.iter().any(|p| p.len() != 1) {
                    return Err(Error::InvalidInput(
                        "single-chain encoding requires single-block partitions".into(),
                    ));
                }
                EncodingDesc::TiSingleChain { n: *n }
            } else {
                EncodingDesc::TiFull { n: *n }
            }
        }
        SourceConfig::TrigDre { n, m, r_base, .. } => EncodingDesc::Trig {
            n: *n,
            m: *m,
            r_base: *r_base,
        },
    };

    let try_attempt = |idx: usize| -> Result<Attempt> {
        let mut rng = stream_rng(config.seed, idx as u64);
        match &config.source {
            SourceConfig::BrunovskyAre {
                n,
                partitions,
                classes,
                sampler,
                ..
            } => {
                let combos = partitions.len() * classes.len();
                let pi = (idx % combos) / classes.len();
                let ci = idx % classes.len();
                let opts = sampler.clone().unwrap_or_default();
                let spec = sample_brunovsky(*n, &partitions[pi], classes[ci], &mut rng, &opts)?;
                let (a, b, q, r) = spec.assemble();
                let sys = SystemInstance::time_invariant_unit(a, b, q, r)?;
                if !filter_admissible(&sys, &[0.0]).admissible {
                    return Ok(Attempt::RejectedFilter);
                }
                let p = match solve_are(&sys) {
                    Ok(p) => p,
                    Err(_) => return Ok(Attempt::RejectedSolver),
                };
                let enc = encode_input(&sys, &encoding)?;
                Ok(Attempt::Accepted(Box::new(Record {
                    encoding: enc,
                    target: Target::Are(p),
                    system: sys,
                    label: Some(spec.class),
                })))
            }
            SourceConfig::TrigDre {
                n,
                m,
                r_base,
                sigma,
                n_t,
                horizon,
            } => {
                let (coeffs, _) = sample_trig_system(*n, *m, *r_base, *sigma, &mut rng)?;
                let sys = SystemInstance::trig(coeffs, *horizon, Mat::identity(*n))?;
                let grid = riccati::uniform_grid(*horizon, *n_t);
                if !filter_admissible(&sys, &grid).admissible {
                    return Ok(Attempt::RejectedFilter);
                }
                let traj = match solve_dre(&sys, *n_t) {
                    Ok(t) => t,
                    Err(_) => return Ok(Attempt::RejectedSolver),
                };
                // The exact flow keeps P(t) SPD for admissible inputs.
                for v in &traj.values {
                    if !linalg::is_spd(v)? {
                        return Ok(Attempt::RejectedSolver);
                    }
                }
                let enc = encode_input(&sys, &encoding)?;
                Ok(Attempt::Accepted(Box::new(Record {
                    encoding: enc,
                    target: Target::Dre(traj),
                    system: sys,
                    label: None,
                })))
            }
        }
    };

    let mut records: Vec<Record> = Vec::with_capacity(config.count);
    let mut attempted = 0usize;
    let mut rejected_filter = 0usize;
    let mut rejected_solver = 0usize;
    while records.len() < config.count {
        let missing = config.count - records.len();
        let block = (missing + missing / 4).max(32);
        let outcomes: Vec<Result<Attempt>> = (attempted..attempted + block)
            .into_par_iter()
            .map(try_attempt)
            .collect();
        attempted += block;
        for outcome in outcomes {
            match outcome? {
                Attempt::Accepted(rec) => {
                    if records.len() < config.count {
                        records.push(*rec);
                    }
                }
                Attempt::RejectedFilter => rejected_filter += 1,
                Attempt::RejectedSolver => rejected_solver += 1,
            }
        }
        if attempted >= 10_000 && (records.len() * 100) < attempted {
            return Err(Error::GenerationStall {
                accepted: records.len(),
                attempted,
            });
        }
    }

    let mut class_counts: Vec<(String, usize)> = Vec::new();
    for rec in &records {
        if let Some(class) = rec.label {
            match class_counts.iter_mut().find(|(k, _)| k == class.as_str()) {
                Some((_, c)) => *c += 1,
                None => class_counts.push((class.as_str().to_string(), 1)),
            }
        }
    }

    let (kind, n, m, n_t, horizon) = match &config.source {
        SourceConfig::BrunovskyAre { n, .. } => (TargetKind::Are, *n, records[0].system.m, 0, 1.0),
        SourceConfig::TrigDre {
            n, m, n_t, horizon, ..
        } => (TargetKind::Dre, *n, *m, *n_t, *horizon),
    };
    let train_count = ((config.split * config.count as f64).ceil() as usize).min(config.count);
    let report = GenReport {
        attempted,
        accepted: records.len(),
        acceptance_rate: records.len() as f64 / attempted as f64,
        rejected_filter,
        rejected_solver,
        class_counts,
    };
    Ok((
        Dataset {
            meta: DatasetMeta {
                kind,
                n,
                m,
                n_t,
                horizon,
                encoding,
                config: config.clone(),
                train_count,
            },
            records,
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_expansion_reference() {
        // (s+1)(s+2)(s+3) = s^3 + 6 s^2 + 11 s + 6
        let c = poly_from_roots(&[(-1.0, 0.0), (-2.0, 0.0), (-3.0, 0.0)]).unwrap();
        assert_eq!(c.len(), 3);
        assert!((c[0] - 6.0).abs() < 1e-12);
        assert!((c[1] - 11.0).abs() < 1e-12);
        assert!((c[2] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn poly_zero_root() {
        let c = poly_from_roots(&[(0.0, 0.0)]).unwrap();
        assert_eq!(c, vec![0.0]);
    }

    #[test]
    fn poly_rejects_unpaired_complex() {
        assert!(matches!(
            poly_from_roots(&[(1.0, 2.0)]),
            Err(Error::UnpairedComplexRoot(_))
        ));
    }

    #[test]
    fn poly_companion_round_trip() {
        let mut rng = stream_rng(42, 0);
        for _ in 0..50 {
            let mut roots = Vec::new();
            let pairs = rng.random_range(0..=2u32);
            for _ in 0..pairs {
                let re = rng.random_range(-2.0..2.0);
                let im = rng.random_range(0.1..2.0);
                roots.push((re, im));
                roots.push((re, -im));
            }
            while roots.len() < 6 {
                roots.push((rng.random_range(-2.0..2.0), 0.0));
            }
            let c = poly_from_roots(&roots).unwrap();
            let spec = BrunovskySpec {
                partition: vec![6],
                coeffs: vec![c],
                q_diag: vec![1.0; 6],
                r_diag: vec![1.0],
                class: SpectralClass::Mixed,
            };
            let (a, _, _, _) = spec.assemble();
            let got = eigenvalues(&a).unwrap();
            let mut used = vec![false; roots.len()];
            for &(re, im) in &got.eigenvalues {
                let mut best = usize::MAX;
                let mut best_d = f64::INFINITY;
                for (k, &(er, ei)) in roots.iter().enumerate() {
                    if !used[k] {
                        let d = ((re - er).powi(2) + (im - ei).powi(2)).sqrt();
                        if d < best_d {
                            best_d = d;
                            best = k;
                        }
                    }
                }
                assert!(best_d <= 1e-7, "root ({re},{im}) off by {best_d:.2e}");
                used[best] = true;
            }
        }
    }

    #[test]
    fn brunovsky_case1_template() {
        let spec = BrunovskySpec {
            partition: vec![3],
            coeffs: vec![vec![0.5, -0.25, 1.5]],
            q_diag: vec![0.3, 0.4, 0.5],
            r_diag: vec![0.7],
            class: SpectralClass::Mixed,
        };
        let (a, b, q, r) = spec.assemble();
        let a_expect = Mat::new(3, 3, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -0.5, 0.25, -1.5]);
        assert_eq!(a, a_expect);
        assert_eq!(b, Mat::new(3, 1, vec![0.0, 0.0, 1.0]));
        assert_eq!(q, Mat::diag(&[0.3, 0.4, 0.5]));
        assert_eq!(r, Mat::new(1, 1, vec![0.7]));
    }

    #[test]
    fn brunovsky_case3_is_diagonal() {
        let spec = BrunovskySpec {
            partition: vec![1, 1, 1],
            coeffs: vec![vec![0.2], vec![0.4], vec![0.6]],
            q_diag: vec![1.0; 3],
            r_diag: vec![1.0; 3],
            class: SpectralClass::FullyStable,
        };
        let (a, b, _, _) = spec.assemble();
        assert_eq!(a, Mat::diag(&[-0.2, -0.4, -0.6]));
        assert_eq!(b, Mat::identity(3));
    }

    #[test]
    fn sampled_classes_match_spectra() {
        let opts = SamplerOptions::default();
        for (ci, class) in [
            SpectralClass::FullyStable,
            SpectralClass::FullyUnstable,
            SpectralClass::Mixed,
        ]
        .iter()
        .enumerate()
        {
            for (pi, partition) in [vec![3], vec![2, 1], vec![1, 1, 1]].iter().enumerate() {
                let mut rng = stream_rng(7, (ci * 10 + pi) as u64);
                for _ in 0..20 {
                    let spec = sample_brunovsky(3, partition, *class, &mut rng, &opts).unwrap();
                    for block in &spec.coeffs {
                        assert!(block.iter().all(|v| v.abs() <= 2.0));
                    }
                    let (a, _, _, _) = spec.assemble();
                    let eigs = eigenvalues(&a).unwrap();
                    let pos = eigs.eigenvalues.iter().filter(|&&(re, _)| re > 0.0).count();
                    let neg = eigs.eigenvalues.iter().filter(|&&(re, _)| re < 0.0).count();
                    match class {
                        SpectralClass::FullyStable => assert_eq!(neg, 3),
                        SpectralClass::FullyUnstable => assert_eq!(pos, 3),
                        SpectralClass::Mixed => assert!(pos >= 1 && neg >= 1),
                    }
                }
            }
        }
    }

    #[test]
    fn trig_degenerate_expansion_is_constant() {
        let mut rng = stream_rng(3, 0);
        let (mut coeffs, _) = sample_trig_system(3, 3, 2, 0.05, &mut rng).unwrap();
        for i in 0..coeffs.r_base {
            coeffs.c1[i] = Mat::zeros(3, 3);
            coeffs.c2[i] = Mat::zeros(3, 3);
        }
        let a_start = coeffs.a_at(0.0);
        let a_mid = coeffs.a_at(0.37);
        assert!(linalg::frob_norm(&a_start.sub(&coeffs.a0)) < 1e-15);
        assert!(linalg::frob_norm(&a_mid.sub(&coeffs.a0)) < 1e-15);
    }

    #[test]
    fn trig_q_is_psd_everywhere() {
        let mut rng = stream_rng(11, 5);
        let (coeffs, _) = sample_trig_system(3, 2, 2, 0.05, &mut rng).unwrap();
        for k in 0..50 {
            let t = k as f64 / 49.0;
            let (vals, _) = sym_eig(&coeffs.q_at(t));
            assert!(vals.iter().all(|&l| l >= -1e-12));
        }
    }

    #[test]
    fn trig_endpoint_alternation() {
        // cos(i pi) alternates sign with i; sin(i pi) vanishes.
        let mut rng = stream_rng(13, 2);
        let (coeffs, _) = sample_trig_system(2, 2, 2, 0.05, &mut rng).unwrap();
        let mut expect0 = coeffs.a0.clone();
        expect0.axpy(1.0, &coeffs.c1[0]);
        expect0.axpy(1.0, &coeffs.c1[1]);
        let mut expect1 = coeffs.a0.clone();
        expect1.axpy(-1.0, &coeffs.c1[0]);
        expect1.axpy(1.0, &coeffs.c1[1]);
        assert!(linalg::frob_norm(&coeffs.a_at(0.0).sub(&expect0)) < 1e-12);
        assert!(linalg::frob_norm(&coeffs.a_at(1.0).sub(&expect1)) < 1e-12);
    }

    #[test]
    fn filter_accepts_stable_vacuously() {
        let sys = SystemInstance::time_invariant_unit(
            Mat::identity(3).scale(-1.0),
            Mat::from_fn(3, 1, |i, _| if i == 2 { 1.0 } else { 0.0 }),
            Mat::identity(3),
            Mat::identity(1),
        )
        .unwrap();
        assert!(filter_admissible(&sys, &[0.0]).admissible);
    }

    #[test]
    fn filter_rejects_uncontrollable_unstable() {
        let sys = SystemInstance::time_invariant_unit(
            Mat::diag(&[1.0, 1.0]),
            Mat::zeros(2, 1),
            Mat::identity(2),
            Mat::identity(1),
        )
        .unwrap();
        let report = filter_admissible(&sys, &[0.0]);
        assert!(!report.admissible);
        assert_eq!(report.failure.unwrap().test, "stabilizability");
    }

    #[test]
    fn filter_detects_undetectable_mode() {
        // Unstable mode weighted by zero cost: detectability fails.
        let sys = SystemInstance::time_invariant_unit(
            Mat::diag(&[1.0, -1.0]),
            Mat::identity(2),
            Mat::diag(&[0.0, 1.0]),
            Mat::identity(2),
        )
        .unwrap();
        let report = filter_admissible(&sys, &[0.0]);
        assert!(!report.admissible);
        assert_eq!(report.failure.unwrap().test, "detectability");
    }
}
