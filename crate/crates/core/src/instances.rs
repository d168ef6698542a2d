//! Problem instances: generators for the experiment families, file ingestion,
//! and the scaling / complementation transforms for MESP.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{self, sym_eigen, CholFactor, Mat, Vector};

/// Generator used for every random instance. ChaCha8 is a counter-based
/// stream cipher, so a `u64` seed pins the whole stream.
pub type InstanceRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> InstanceRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator family an instance came from; drives the default penalty lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceKind {
    RandomDopt,
    LinearResponse,
    QuadraticResponse,
    DoptFile,
    MespRank,
    MespFile,
}

/// Data of the 0/1 D-optimality problem: rows of `a` are the design points.
#[derive(Debug, Clone)]
pub struct DoptInstance {
    pub a: Mat,
    pub s: usize,
    pub kind: InstanceKind,
    pub seed: Option<u64>,
}

impl DoptInstance {
    pub fn new(a: Mat, s: usize) -> Result<Self> {
        let inst = DoptInstance {
            a,
            s,
            kind: InstanceKind::DoptFile,
            seed: None,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.a.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        matcore::check_finite(&self.a)?;
        let (n, m) = (self.n(), self.m());
        if self.s < m || self.s > n {
            return Err(Error::InvalidArgument(format!(
                "D-Opt needs m <= s <= n, got m = {m}, s = {}, n = {n}",
                self.s
            )));
        }
        let r = column_rank(&self.a)?;
        if r < m {
            return Err(Error::RankDeficient {
                requested: m,
                achieved: r,
            });
        }
        Ok(())
    }

    /// `AᵀDiag(x)A`.
    pub fn information(&self, x: &Vector) -> Mat {
        matcore::weighted_gram(&self.a, x)
    }
}

/// Data of the maximum-entropy sampling problem.
///
/// `offset` accumulates the constants introduced by scaling and
/// complementation so that `z(original) = z(this) + offset`.
#[derive(Debug, Clone)]
pub struct MespInstance {
    pub c: Mat,
    pub s: usize,
    pub offset: f64,
    pub gamma: f64,
    pub kind: InstanceKind,
    pub seed: Option<u64>,
}

impl MespInstance {
    pub fn new(c: Mat, s: usize) -> Result<Self> {
        let inst = MespInstance {
            c: matcore::symmetrize_lower(&c),
            s,
            offset: 0.0,
            gamma: 1.0,
            kind: InstanceKind::MespFile,
            seed: None,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        matcore::check_square(&self.c)?;
        let n = self.n();
        if self.s == 0 || self.s >= n {
            return Err(Error::InvalidArgument(format!(
                "MESP needs 0 < s < n, got s = {}, n = {n}",
                self.s
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidArgument("gamma must be positive".into()));
        }
        let eig = sym_eigen(&self.c)?;
        let top = eig.values[0].max(0.0);
        if eig.values[n - 1] < -1e-9 * top.max(1e-300) {
            return Err(Error::InvalidArgument(format!(
                "covariance is not PSD (min eigenvalue {:e})",
                eig.values[n - 1]
            )));
        }
        let r = numerical_rank(&eig.values);
        if r < self.s {
            return Err(Error::RankDeficient {
                requested: self.s,
                achieved: r,
            });
        }
        Ok(())
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }
}

/// Numerical rank: eigenvalues above `1e-10 · μ_max`.
pub fn numerical_rank(desc_values: &Vector) -> usize {
    if desc_values.is_empty() {
        return 0;
    }
    let top = desc_values[0];
    if !(top > 0.0) {
        return 0;
    }
    desc_values.iter().filter(|&&v| v > 1e-10 * top).count()
}

fn column_rank(a: &Mat) -> Result<usize> {
    let gram = a.transpose() * a;
    Ok(numerical_rank(&sym_eigen(&gram)?.values))
}

const RANK_RETRIES: usize = 5;

/// Gaussian design matrix, `n = round(1000·m·scale)`, `s = 2m`.
pub fn gen_random_dopt(m: usize, seed: u64, scale: f64) -> Result<DoptInstance> {
    if m < 2 {
        return Err(Error::InvalidArgument("m must be at least 2".into()));
    }
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument("scale must be positive".into()));
    }
    let n = (1000.0 * m as f64 * scale).round() as usize;
    let s = 2 * m;
    if n < s {
        return Err(Error::InvalidArgument(format!(
            "scale {scale} gives n = {n} < s = {s}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    for _ in 0..RANK_RETRIES {
        let a = Mat::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng));
        if column_rank(&a)? == m {
            return Ok(DoptInstance {
                a,
                s,
                kind: InstanceKind::RandomDopt,
                seed: Some(seed),
            });
        }
    }
    Err(Error::RankDeficient {
        requested: m,
        achieved: 0,
    })
}

fn sample_distinct(rng: &mut InstanceRng, universe: u128, n: usize) -> Result<Vec<usize>> {
    let universe = usize::try_from(universe)
        .map_err(|_| Error::InvalidArgument("design space too large to index".into()))?;
    if n > universe {
        return Err(Error::InvalidArgument(format!(
            "requested {n} rows from a design space of {universe}"
        )));
    }
    Ok(index::sample(rng, universe, n).into_vec())
}

/// Rows `(1, α)` with `α ∈ {0,1}^F`, `n` distinct rows drawn without replacement.
pub fn gen_linear_response(factors: usize, n: usize, seed: u64) -> Result<DoptInstance> {
    if factors == 0 || factors > 62 {
        return Err(Error::InvalidArgument("factor count must be in 1..=62".into()));
    }
    let m = 1 + factors;
    let s = 2 * m;
    let universe = 1u128 << factors;
    if (n as u128) > universe {
        return Err(Error::InvalidArgument(format!(
            "n = {n} exceeds the 2^{factors} = {universe} rows of the full design"
        )));
    }
    if n < s {
        return Err(Error::InvalidArgument(format!("n = {n} is below s = {s}")));
    }
    let mut rng = rng_from_seed(seed);
    for _ in 0..RANK_RETRIES {
        let rows = sample_distinct(&mut rng, universe, n)?;
        let a = Mat::from_fn(n, m, |i, j| {
            if j == 0 {
                1.0
            } else {
                ((rows[i] >> (j - 1)) & 1) as f64
            }
        });
        if column_rank(&a)? == m {
            return Ok(DoptInstance {
                a,
                s,
                kind: InstanceKind::LinearResponse,
                seed: Some(seed),
            });
        }
    }
    Err(Error::RankDeficient {
        requested: m,
        achieved: 0,
    })
}

/// Factor pairs carried by the quadratic model: all pairs among the first
/// `⌊(F+1)/4⌋` factors.
pub fn quadratic_pairs(factors: usize) -> Vec<(usize, usize)> {
    let p = (factors + 1) / 4;
    let mut pairs = Vec::new();
    for i in 0..p {
        for j in (i + 1)..p {
            pairs.push((i, j));
        }
    }
    pairs
}

pub fn quadratic_columns(factors: usize) -> usize {
    1 + factors + quadratic_pairs(factors).len()
}

/// Rows `(1; α; α_iα_j over selected pairs)` with levels `α ∈ {0,1,2}^F`.
pub fn gen_quadratic_response(factors: usize, n: usize, seed: u64) -> Result<DoptInstance> {
    if factors == 0 || factors > 39 {
        return Err(Error::InvalidArgument("factor count must be in 1..=39".into()));
    }
    let pairs = quadratic_pairs(factors);
    let m = 1 + factors + pairs.len();
    let s = 2 * m;
    let universe = 3u128.pow(factors as u32);
    if (n as u128) > universe {
        return Err(Error::InvalidArgument(format!(
            "n = {n} exceeds the 3^{factors} = {universe} rows of the full design"
        )));
    }
    if n < s {
        return Err(Error::InvalidArgument(format!("n = {n} is below s = {s}")));
    }
    let mut rng = rng_from_seed(seed);
    for _ in 0..RANK_RETRIES {
        let rows = sample_distinct(&mut rng, universe, n)?;
        let mut a = Mat::zeros(n, m);
        let mut levels = vec![0usize; factors];
        for (i, &code) in rows.iter().enumerate() {
            let mut c = code;
            for l in levels.iter_mut() {
                *l = c % 3;
                c /= 3;
            }
            a[(i, 0)] = 1.0;
            for (f, &l) in levels.iter().enumerate() {
                a[(i, 1 + f)] = l as f64;
            }
            for (p, &(u, v)) in pairs.iter().enumerate() {
                a[(i, 1 + factors + p)] = (levels[u] * levels[v]) as f64;
            }
        }
        if column_rank(&a)? == m {
            return Ok(DoptInstance {
                a,
                s,
                kind: InstanceKind::QuadraticResponse,
                seed: Some(seed),
            });
        }
    }
    Err(Error::RankDeficient {
        requested: m,
        achieved: 0,
    })
}

/// Random covariance `C = BBᵀ/r` with `B` an `n×r` Gaussian matrix.
pub fn gen_covariance(n: usize, rank: usize, seed: u64) -> Result<Mat> {
    if rank == 0 || rank > n {
        return Err(Error::InvalidArgument(format!(
            "rank must be in 1..=n, got {rank} with n = {n}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let b = Mat::from_fn(n, rank, |_, _| StandardNormal.sample(&mut rng));
    Ok(matcore::sym_part(&(&b * b.transpose())) / rank as f64)
}

/// Full-rank covariance with a mild spread of eigenvalues, `C = BBᵀ/(2n) + I/2`.
pub fn gen_full_covariance(n: usize, seed: u64) -> Result<Mat> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let b = Mat::from_fn(n, 2 * n, |_, _| StandardNormal.sample(&mut rng));
    Ok(matcore::sym_part(&(&b * b.transpose())) / (2 * n) as f64 * 0.5
        + Mat::identity(n, n) * 0.5)
}

pub fn gen_mesp_rank(n: usize, rank: usize, s: usize, seed: u64) -> Result<MespInstance> {
    let c = gen_covariance(n, rank, seed)?;
    let mut inst = MespInstance::new(c, s)?;
    inst.kind = InstanceKind::MespRank;
    inst.seed = Some(seed);
    Ok(inst)
}

pub fn gen_mesp_full(n: usize, s: usize, seed: u64) -> Result<MespInstance> {
    let c = gen_full_covariance(n, seed)?;
    let mut inst = MespInstance::new(c, s)?;
    inst.kind = InstanceKind::MespRank;
    inst.seed = Some(seed);
    Ok(inst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    Whitespace,
    Csv,
}

/// Parse a rectangular numeric matrix.
pub fn parse_matrix(text: &str, format: MatrixFormat, skip_header: bool) -> Result<Mat> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    match format {
        MatrixFormat::Whitespace => {
            let mut header_pending = skip_header;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                if header_pending {
                    header_pending = false;
                    continue;
                }
                let row = line
                    .split_whitespace()
                    .map(|tok| parse_number(tok, lineno + 1))
                    .collect::<Result<Vec<f64>>>()?;
                push_row(&mut rows, row, lineno + 1)?;
            }
        }
        MatrixFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(skip_header)
                .flexible(true)
                .trim(csv::Trim::All)
                .from_reader(text.as_bytes());
            for record in reader.records() {
                let record = record.map_err(|e| Error::Parse {
                    line: e.position().map_or(0, |p| p.line() as usize),
                    msg: e.to_string(),
                })?;
                let lineno = record.position().map_or(0, |p| p.line() as usize);
                if record.iter().all(|f| f.is_empty()) {
                    continue;
                }
                let row = record
                    .iter()
                    .map(|tok| parse_number(tok, lineno))
                    .collect::<Result<Vec<f64>>>()?;
                push_row(&mut rows, row, lineno)?;
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "no numeric rows".into(),
        });
    }
    let ncols = rows[0].len();
    Ok(Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn parse_number(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| Error::Parse {
        line,
        msg: format!("non-numeric token {tok:?}"),
    })
}

fn push_row(rows: &mut Vec<Vec<f64>>, row: Vec<f64>, line: usize) -> Result<()> {
    if let Some(first) = rows.first() {
        if first.len() != row.len() {
            return Err(Error::Parse {
                line,
                msg: format!("ragged row: expected {} fields, found {}", first.len(), row.len()),
            });
        }
    }
    rows.push(row);
    Ok(())
}

pub fn load_matrix(path: &Path, format: MatrixFormat, skip_header: bool) -> Result<Mat> {
    let text = fs::read_to_string(path)?;
    parse_matrix(&text, format, skip_header)
}

/// Write a matrix with shortest round-trip float formatting.
pub fn save_matrix(path: &Path, m: &Mat, format: MatrixFormat) -> Result<()> {
    let sep = match format {
        MatrixFormat::Whitespace => " ",
        MatrixFormat::Csv => ",",
    };
    let mut out = String::with_capacity(m.nrows() * m.ncols() * 20);
    for i in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        out.push_str(&line.join(sep));
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// JSON sidecar describing a persisted instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceManifest {
    pub kind: InstanceKind,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    pub s: usize,
    pub seed: Option<u64>,
    pub gamma: f64,
    pub offset: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_path: Option<String>,
    #[serde(default = "default_format")]
    pub format: MatrixFormat,
}

fn default_format() -> MatrixFormat {
    MatrixFormat::Whitespace
}

impl InstanceManifest {
    pub fn for_dopt(inst: &DoptInstance) -> Self {
        InstanceManifest {
            kind: inst.kind,
            n: inst.n(),
            m: Some(inst.m()),
            rank: None,
            s: inst.s,
            seed: inst.seed,
            gamma: 1.0,
            offset: 0.0,
            source_path: None,
            format: MatrixFormat::Whitespace,
        }
    }

    pub fn for_mesp(inst: &MespInstance, rank: Option<usize>) -> Self {
        InstanceManifest {
            kind: inst.kind,
            n: inst.n(),
            m: None,
            rank,
            s: inst.s,
            seed: inst.seed,
            gamma: inst.gamma,
            offset: inst.offset,
            source_path: None,
            format: MatrixFormat::Whitespace,
        }
    }

    pub fn is_mesp(&self) -> bool {
        matches!(self.kind, InstanceKind::MespRank | InstanceKind::MespFile)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

/// Best rank-`r` PSD approximation from the top `r` eigenpairs.
pub fn truncate_rank(c: &Mat, r: usize) -> Result<Mat> {
    let n = c.nrows();
    if r == 0 || r > n {
        return Err(Error::InvalidArgument(format!("rank must be in 1..={n}, got {r}")));
    }
    let eig = sym_eigen(c)?;
    let d = Vector::from_fn(n, |i, _| if i < r { eig.values[i].max(0.0) } else { 0.0 });
    Ok(eig.compose(&d))
}

/// `(C, s) ↦ (C⁻¹, n − s)` with `ldet C` moved into the offset.
pub fn complement_instance(inst: &MespInstance) -> Result<MespInstance> {
    let eig = sym_eigen(&inst.c)?;
    let n = inst.n();
    let top = eig.values[0].abs();
    let bottom = eig.values[n - 1];
    if !(bottom > 1e-10 * top) {
        return Err(Error::ComplementRequiresFullRank { min_eig: bottom });
    }
    let factor = CholFactor::new(&inst.c)?;
    Ok(MespInstance {
        c: factor.inverse(),
        s: n - inst.s,
        offset: inst.offset + factor.logdet(),
        gamma: inst.gamma,
        kind: inst.kind,
        seed: inst.seed,
    })
}

/// `(C, s) ↦ (γC, s)` with `−s ln γ` moved into the offset.
pub fn scale_instance(inst: &MespInstance, gamma: f64) -> Result<MespInstance> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {gamma}")));
    }
    Ok(MespInstance {
        c: &inst.c * gamma,
        s: inst.s,
        offset: inst.offset - inst.s as f64 * gamma.ln(),
        gamma: inst.gamma,
        kind: inst.kind,
        seed: inst.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorMethod {
    /// Pivoted Cholesky, `k = rank`.
    Chol,
    /// `√μ_i v_i` columns from the spectral decomposition, `k = rank`.
    Spectral,
    /// Symmetric square root, `k = n`.
    Sqrt,
}

/// A factor `F` (n×k) with `C = FFᵀ`.
#[derive(Debug, Clone)]
pub struct FactorChoice {
    pub method: FactorMethod,
    pub f: Mat,
}

impl FactorChoice {
    pub fn k(&self) -> usize {
        self.f.ncols()
    }
}

pub fn factorize(c: &Mat, method: FactorMethod) -> Result<FactorChoice> {
    matcore::check_square(c)?;
    let n = c.nrows();
    let eig = sym_eigen(c)?;
    let r = numerical_rank(&eig.values);
    if r == 0 {
        return Err(Error::RankDeficient {
            requested: 1,
            achieved: 0,
        });
    }
    let f = match method {
        FactorMethod::Spectral => {
            let mut f = Mat::zeros(n, r);
            for j in 0..r {
                f.set_column(j, &(eig.basis.column(j) * eig.values[j].sqrt()));
            }
            f
        }
        FactorMethod::Sqrt => eig.map(|v| v.max(0.0).sqrt()),
        FactorMethod::Chol => pivoted_cholesky(c, r)?.0,
    };
    Ok(FactorChoice { method, f })
}

/// Greedy pivoted Cholesky truncated after `steps` pivots. Returns the factor
/// (rows in the original order) and the pivot sequence.
fn pivoted_cholesky(c: &Mat, steps: usize) -> Result<(Mat, Vec<usize>)> {
    let n = c.nrows();
    let mut f = Mat::zeros(n, steps);
    let mut diag: Vec<f64> = (0..n).map(|i| c[(i, i)]).collect();
    let mut used = vec![false; n];
    let mut pivots = Vec::with_capacity(steps);
    for k in 0..steps {
        let (p, &d) = diag
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .ok_or(Error::RankDeficient {
                requested: steps,
                achieved: k,
            })?;
        if !(d > 0.0) {
            return Err(Error::RankDeficient {
                requested: steps,
                achieved: k,
            });
        }
        used[p] = true;
        pivots.push(p);
        let root = d.sqrt();
        for i in 0..n {
            if used[i] && i != p {
                continue;
            }
            let mut v = c[(i, p)];
            for j in 0..k {
                v -= f[(i, j)] * f[(p, j)];
            }
            f[(i, k)] = if i == p { root } else { v / root };
        }
        for i in 0..n {
            if !used[i] {
                diag[i] -= f[(i, k)] * f[(i, k)];
            }
        }
    }
    Ok((f, pivots))
}

/// Indices (sorted) of a numerically nonsingular principal submatrix of order
/// `target`, chosen by greedy pivoted Cholesky.
pub fn select_independent_principal_submatrix(c: &Mat, target: usize) -> Result<Vec<usize>> {
    matcore::check_square(c)?;
    let n = c.nrows();
    if target == 0 || target > n {
        return Err(Error::InvalidArgument(format!(
            "target order must be in 1..={n}, got {target}"
        )));
    }
    let eig = sym_eigen(c)?;
    let norm2 = eig.values[0].abs().max(eig.values[n - 1].abs());
    let mut diag: Vec<f64> = (0..n).map(|i| c[(i, i)]).collect();
    let mut cols: Vec<Vector> = Vec::with_capacity(target);
    let mut chosen: Vec<usize> = Vec::with_capacity(target);
    while chosen.len() < target {
        let best = (0..n)
            .filter(|i| !chosen.contains(i))
            .max_by(|&a, &b| diag[a].total_cmp(&diag[b]).then(b.cmp(&a)));
        let Some(p) = best else { break };
        if !(diag[p] > 1e-8 * norm2) {
            break;
        }
        let root = diag[p].sqrt();
        let mut col = c.column(p).clone_owned();
        for prev in &cols {
            col.axpy(-prev[p], prev, 1.0);
        }
        col /= root;
        for i in 0..n {
            diag[i] -= col[i] * col[i];
        }
        cols.push(col);
        chosen.push(p);
    }
    if chosen.len() < target {
        return Err(Error::RankDeficient {
            requested: target,
            achieved: chosen.len(),
        });
    }
    chosen.sort_unstable();
    let sub = principal_submatrix(c, &chosen);
    let min_eig = sym_eigen(&sub)?.values.min();
    if !(min_eig > 1e-8 * norm2) {
        return Err(Error::RankDeficient {
            requested: target,
            achieved: target - 1,
        });
    }
    Ok(chosen)
}

pub fn principal_submatrix(c: &Mat, idx: &[usize]) -> Mat {
    Mat::from_fn(idx.len(), idx.len(), |i, j| c[(idx[i], idx[j])])
}
