use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use clap::{Args, ValueEnum};
use serde::Serialize;

use entropy_bounds::bqp::solve_bqp;
use entropy_bounds::certify::gamma_search;
use entropy_bounds::ddfact::solve_ddfact;
use entropy_bounds::dopt::solve_nat;
use entropy_bounds::error::Error as CoreError;
use entropy_bounds::instances::{complement_instance, factorize, scale_instance, FactorMethod, MespInstance};
use entropy_bounds::linx::solve_linx;
use entropy_bounds::report::{BoundReport, Relaxation, SolveOptions, Termination};

use crate::input::{load_manifest, load_raw, parse_format, Instance, Loaded};
use crate::run::{append_rows, code_version, unix_now, write_json, write_trace, ResultRow, RunManifest};
use crate::{print_stdout, usage, EXIT_LIMIT, EXIT_OK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Nat,
    Linx,
    Ddfact,
    Bqp,
}

impl Method {
    pub fn relaxation(self) -> Relaxation {
        match self {
            Method::Nat => Relaxation::Nat,
            Method::Linx => Relaxation::Linx,
            Method::Ddfact => Relaxation::Ddfact,
            Method::Bqp => Relaxation::Bqp,
        }
    }

    pub fn is_mesp(self) -> bool {
        self != Method::Nat
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Factorization {
    Chol,
    Spectral,
    Sqrt,
}

impl From<Factorization> for FactorMethod {
    fn from(f: Factorization) -> Self {
        match f {
            Factorization::Chol => FactorMethod::Chol,
            Factorization::Spectral => FactorMethod::Spectral,
            Factorization::Sqrt => FactorMethod::Sqrt,
        }
    }
}

/// Options shared by `solve` and `bench`.
#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    /// ADMM penalty; defaults to the family table.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub gap_tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub feas_tol: f64,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Seconds.
    #[arg(long, default_value_t = 3600.0)]
    pub time_limit: f64,
    /// Scaling parameter (linx, bqp) or covariance scale (ddfact).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Minimize the bound over log10(gamma) in [gamma-lo, gamma-hi].
    #[arg(long)]
    pub gamma_search: bool,
    #[arg(long, default_value_t = -4.0, allow_hyphen_values = true)]
    pub gamma_lo: f64,
    #[arg(long, default_value_t = 4.0, allow_hyphen_values = true)]
    pub gamma_hi: f64,
    /// Search tolerance on log10(gamma).
    #[arg(long, default_value_t = 0.1)]
    pub gamma_tol: f64,
    /// Solve the complementary instance (C⁻¹, n − s) instead.
    #[arg(long)]
    pub complement: bool,
    /// Solve the instance and its complement and keep the smaller bound.
    #[arg(long)]
    pub auto_complement: bool,
    #[arg(long, value_enum, default_value_t = Factorization::Spectral)]
    pub factorization: Factorization,
    #[arg(long)]
    pub cert_period: Option<usize>,
    #[arg(long)]
    pub cert_start: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace negative Γ-prox eigenvalues by the prox restricted to the PSD cone.
    #[arg(long)]
    pub project_lambda: bool,
    /// Solve every x-subproblem exactly (slow).
    #[arg(long)]
    pub exact_bvls: bool,
}

impl SolveArgs {
    pub fn options(&self, trace: bool) -> Result<SolveOptions> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(usage(format!("--{name} must be positive, got {v}")))
            }
        };
        positive("gap-tol", self.gap_tol)?;
        positive("feas-tol", self.feas_tol)?;
        positive("time-limit", self.time_limit)?;
        if let Some(r) = self.rho {
            positive("rho", r)?;
        }
        if let Some(g) = self.gamma {
            positive("gamma", g)?;
        }
        if self.gamma_search && !(self.gamma_lo < self.gamma_hi && self.gamma_tol > 0.0) {
            return Err(usage("gamma search needs gamma-lo < gamma-hi and a positive gamma-tol"));
        }
        if self.gamma_search && self.gamma.is_some() {
            return Err(usage("--gamma and --gamma-search are mutually exclusive"));
        }
        if self.complement && self.auto_complement {
            return Err(usage("--complement and --auto-complement are mutually exclusive"));
        }
        let mut opts = SolveOptions::default();
        opts.gap_tol = self.gap_tol;
        opts.feas_tol = self.feas_tol;
        opts.time_limit_s = self.time_limit;
        if let Some(it) = self.max_iter {
            opts.max_iter = it;
        }
        opts.rho = self.rho;
        opts.cert_period = self.cert_period;
        opts.cert_start = self.cert_start;
        opts.seed = self.seed;
        opts.project_lambda = self.project_lambda;
        opts.exact_bvls = self.exact_bvls;
        opts.record_trace = trace;
        Ok(opts)
    }

    fn check_method(&self, method: Method) -> Result<()> {
        if method == Method::Nat {
            let mesp_only = [
                (self.gamma.is_some(), "--gamma"),
                (self.gamma_search, "--gamma-search"),
                (self.complement, "--complement"),
                (self.auto_complement, "--auto-complement"),
            ];
            if let Some((_, flag)) = mesp_only.iter().find(|(set, _)| *set) {
                return Err(usage(format!("{flag} does not apply to nat")));
            }
        }
        if method != Method::Ddfact && self.factorization != Factorization::Spectral {
            return Err(usage("--factorization applies to ddfact only"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveOutput {
    #[serde(flatten)]
    pub report: BoundReport,
    pub complemented: bool,
    pub instance: Option<String>,
}

/// Run `method` on `loaded`, applying γ handling and complementation.
pub fn solve_loaded(method: Method, loaded: &Loaded, args: &SolveArgs, opts: &SolveOptions) -> Result<(BoundReport, bool)> {
    args.check_method(method)?;
    let start = Instant::now();
    let (mut report, complemented) = match (&loaded.instance, method.is_mesp()) {
        (Instance::Dopt(inst), false) => (solve_nat(inst, opts)?, false),
        (Instance::Mesp(inst), true) => {
            if args.complement {
                (solve_mesp(method, &complement_instance(inst)?, args, opts)?, true)
            } else if args.auto_complement {
                let original = solve_mesp(method, inst, args, opts)?;
                match complement_instance(inst) {
                    Ok(comp) => {
                        let other = solve_mesp(method, &comp, args, opts)?;
                        if other.bound < original.bound {
                            (other, true)
                        } else {
                            (original, false)
                        }
                    }
                    Err(CoreError::ComplementRequiresFullRank { .. }) => (original, false),
                    Err(e) => return Err(e.into()),
                }
            } else {
                (solve_mesp(method, inst, args, opts)?, false)
            }
        }
        (Instance::Dopt(_), true) => {
            return Err(usage(format!("{} needs a covariance instance", method.relaxation().name())))
        }
        (Instance::Mesp(_), false) => return Err(usage("nat needs a design-matrix instance")),
    };
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((report, complemented))
}

fn solve_mesp(method: Method, inst: &MespInstance, args: &SolveArgs, opts: &SolveOptions) -> Result<BoundReport> {
    if !args.gamma_search {
        return Ok(solve_mesp_at(method, inst, args, opts, args.gamma)?);
    }
    let mut best: Option<BoundReport> = None;
    let mut evaluations = 0u64;
    gamma_search(
        |g| {
            evaluations += 1;
            let r = solve_mesp_at(method, inst, args, opts, Some(g))?;
            let v = r.bound;
            if best.as_ref().map_or(true, |b| v < b.bound) {
                best = Some(r);
            }
            Ok(v)
        },
        args.gamma_lo,
        args.gamma_hi,
        args.gamma_tol,
    );
    let mut report = best.ok_or_else(|| anyhow::anyhow!("gamma search produced no bound"))?;
    report.event_counters.insert("gamma_evaluations".into(), evaluations);
    Ok(report)
}

fn solve_mesp_at(
    method: Method,
    inst: &MespInstance,
    args: &SolveArgs,
    opts: &SolveOptions,
    gamma: Option<f64>,
) -> entropy_bounds::error::Result<BoundReport> {
    match method {
        Method::Linx | Method::Bqp => {
            let mut o = opts.clone();
            o.gamma = gamma;
            if method == Method::Linx {
                solve_linx(inst, &o)
            } else {
                solve_bqp(inst, &o)
            }
        }
        Method::Ddfact => {
            let scaled;
            let inst = match gamma {
                Some(g) => {
                    scaled = scale_instance(inst, g)?;
                    &scaled
                }
                None => inst,
            };
            let factor = factorize(&inst.c, args.factorization.into())?;
            let mut r = solve_ddfact(inst, &factor, opts)?;
            r.gamma = gamma.unwrap_or(1.0);
            Ok(r)
        }
        Method::Nat => unreachable!("nat is not a MESP relaxation"),
    }
}

#[derive(Args)]
pub struct SolveCommand {
    #[arg(value_enum)]
    pub method: Method,
    /// Instance manifest (JSON) written by `gen`.
    pub instance: Option<PathBuf>,
    /// Raw matrix file instead of a manifest: design rows for nat, a covariance otherwise.
    #[arg(long, conflicts_with = "instance")]
    pub matrix: Option<PathBuf>,
    /// Subset size for --matrix input.
    #[arg(long, requires = "matrix")]
    pub s: Option<usize>,
    #[arg(long, default_value = "whitespace")]
    pub format: String,
    #[arg(long)]
    pub skip_header: bool,
    #[command(flatten)]
    pub args: SolveArgs,
    /// Write the per-certification trace as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Append a result row to this CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write the run manifest as JSON.
    #[arg(long)]
    pub run_manifest: Option<PathBuf>,
}

pub fn exit_code(report: &BoundReport) -> u8 {
    match report.termination {
        Termination::GapTol => EXIT_OK,
        Termination::IterLimit | Termination::TimeLimit => EXIT_LIMIT,
    }
}

pub fn run(cmd: SolveCommand) -> Result<u8> {
    let started = unix_now();
    let loaded = match (&cmd.instance, &cmd.matrix) {
        (Some(p), None) => load_manifest(p)?,
        (None, Some(p)) => {
            let s = cmd.s.ok_or_else(|| usage("--matrix needs --s"))?;
            load_raw(p, s, parse_format(&cmd.format)?, cmd.skip_header, cmd.method.is_mesp())?
        }
        _ => return Err(usage("give an instance manifest or --matrix")),
    };
    let opts = cmd.args.options(cmd.trace.is_some())?;
    let (report, complemented) = solve_loaded(cmd.method, &loaded, &cmd.args, &opts)?;
    let instance_name = loaded
        .manifest_path
        .as_ref()
        .or(cmd.matrix.as_ref())
        .map(|p| p.display().to_string());

    let mut outputs = Vec::new();
    if let Some(path) = &cmd.trace {
        write_trace(path, &report.trace)?;
        outputs.push(path.display().to_string());
    }
    let run_id = format!("solve-{}-{}", cmd.method.relaxation().name(), started as u64);
    if let Some(path) = &cmd.csv {
        let row = ResultRow::from_report(
            &run_id,
            instance_name.as_deref().unwrap_or(""),
            loaded.instance.n(),
            loaded.instance.s(),
            &report,
            complemented,
        );
        append_rows(path, &[row])?;
        outputs.push(path.display().to_string());
    }
    if let Some(path) = &cmd.run_manifest {
        let manifest = RunManifest {
            run_id,
            command: std::env::args().collect(),
            relaxation: cmd.method.relaxation().name().into(),
            instance_path: instance_name.clone(),
            instance: loaded.manifest.clone(),
            options: opts.clone(),
            outputs,
            started_unix_s: started,
            finished_unix_s: unix_now(),
            code_version: code_version(),
        };
        write_json(path, &manifest)?;
    }

    let code = exit_code(&report);
    let out = SolveOutput {
        report,
        complemented,
        instance: instance_name,
    };
    print_stdout(&serde_json::to_string_pretty(&out)?)?;
    Ok(code)
}
