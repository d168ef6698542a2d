use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use rayon::prelude::*;

use entropy_bounds::instances::{
    gen_linear_response, gen_mesp_rank, gen_quadratic_response, gen_random_dopt, InstanceManifest,
};

use crate::gen::default_mesp_s;
use crate::input::{load_manifest, write_instance};
use crate::run::{append_rows, code_version, unix_now, write_json, write_trace, ResultRow, RunManifest};
use crate::solve::{solve_loaded, Method, SolveArgs};
use crate::{thread_cap, usage};

#[derive(Subcommand)]
pub enum BenchCommand {
    /// Solve every listed instance manifest with every listed method.
    Run {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        #[command(flatten)]
        common: BenchArgs,
    },
    /// Generate a family sweep into --work-dir, then solve it.
    Sweep {
        #[command(flatten)]
        sweep: SweepArgs,
        #[command(flatten)]
        common: BenchArgs,
    },
}

#[derive(Args)]
pub struct BenchArgs {
    /// Methods to run (comma-separated).
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    pub method: Vec<Method>,
    /// Results CSV; rows are appended.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for per-run trace CSVs.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    /// Parallel instances; capped by ENTROPY_BOUNDS_THREADS.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub solve: SolveArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    RandomDopt,
    Linear,
    Quadratic,
    MespRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Param {
    M,
    N,
    Rank,
    S,
    Factors,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub family: Family,
    #[arg(long, value_enum)]
    pub vary: Param,
    /// Values of the varied parameter: `a,b,c` or `lo..hi` or `lo..hi:step` (inclusive).
    #[arg(long)]
    pub values: String,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub s: Option<usize>,
    #[arg(long)]
    pub factors: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 0)]
    pub instance_seed: u64,
    #[arg(long)]
    pub work_dir: PathBuf,
}

pub fn parse_values(spec: &str) -> Result<Vec<usize>> {
    let bad = || usage(format!("cannot parse sweep values {spec:?}"));
    if let Some((lo, rest)) = spec.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (hi, step.trim().parse::<usize>().map_err(|_| bad())?),
            None => (rest, 1),
        };
        let lo = lo.trim().parse::<usize>().map_err(|_| bad())?;
        let hi = hi.trim().parse::<usize>().map_err(|_| bad())?;
        if step == 0 || lo > hi {
            return Err(bad());
        }
        Ok((lo..=hi).step_by(step).collect())
    } else {
        spec.split(',').map(|v| v.trim().parse::<usize>().map_err(|_| bad())).collect()
    }
}

fn need(v: Option<usize>, name: &str) -> Result<usize> {
    v.ok_or_else(|| usage(format!("sweep needs --{name}")))
}

fn generate_sweep(sw: &SweepArgs) -> Result<Vec<PathBuf>> {
    let values = parse_values(&sw.values)?;
    let allowed: &[Param] = match sw.family {
        Family::RandomDopt => &[Param::M],
        Family::Linear | Family::Quadratic => &[Param::N, Param::Factors],
        Family::MespRank => &[Param::N, Param::Rank, Param::S],
    };
    if !allowed.contains(&sw.vary) {
        return Err(usage(format!("{:?} cannot be varied for {:?}", sw.vary, sw.family)));
    }
    let pick = |p: Param, fixed: Option<usize>, name: &str, v: usize| {
        if sw.vary == p {
            Ok(v)
        } else {
            need(fixed, name)
        }
    };
    let seed = sw.instance_seed;
    let mut paths = Vec::with_capacity(values.len());
    for v in values {
        let (stem, matrix, manifest) = match sw.family {
            Family::RandomDopt => {
                let m = pick(Param::M, sw.m, "m", v)?;
                let inst = gen_random_dopt(m, seed, sw.scale)?;
                (format!("random-dopt-m{m}-n{}-seed{seed}", inst.n()), inst.a.clone(), InstanceManifest::for_dopt(&inst))
            }
            Family::Linear | Family::Quadratic => {
                let n = pick(Param::N, sw.n, "n", v)?;
                let f = pick(Param::Factors, sw.factors, "factors", v)?;
                let (name, inst) = if sw.family == Family::Linear {
                    ("linear", gen_linear_response(f, n, seed)?)
                } else {
                    ("quadratic", gen_quadratic_response(f, n, seed)?)
                };
                (format!("{name}-f{f}-n{n}-seed{seed}"), inst.a.clone(), InstanceManifest::for_dopt(&inst))
            }
            Family::MespRank => {
                let n = pick(Param::N, sw.n, "n", v)?;
                let r = pick(Param::Rank, sw.rank, "rank", v)?;
                let s = if sw.vary == Param::S { v } else { sw.s.unwrap_or_else(|| default_mesp_s(r)) };
                let inst = gen_mesp_rank(n, r, s, seed)?;
                (format!("mesp-n{n}-r{r}-s{s}-seed{seed}"), inst.c.clone(), InstanceManifest::for_mesp(&inst, Some(r)))
            }
        };
        paths.push(write_instance(&sw.work_dir.join(stem), &matrix, manifest)?);
    }
    Ok(paths)
}

struct Job {
    index: usize,
    manifest: PathBuf,
    method: Method,
}

fn stem_of(path: &Path) -> String {
    path.file_stem().map_or_else(|| "instance".into(), |s| s.to_string_lossy().into_owned())
}

fn run_job(job: &Job, common: &BenchArgs) -> (ResultRow, RunManifest) {
    let name = job.method.relaxation().name();
    let run_id = format!("{:04}-{}-{}", job.index, stem_of(&job.manifest), name);
    let instance = job.manifest.display().to_string();
    let started = unix_now();
    let clock = Instant::now();
    let mut outputs = Vec::new();
    let mut instance_manifest = None;
    let outcome = (|| -> Result<ResultRow> {
        let loaded = load_manifest(&job.manifest)?;
        instance_manifest = Some(loaded.manifest.clone());
        let opts = common.solve.options(common.trace_dir.is_some())?;
        let (report, complemented) = solve_loaded(job.method, &loaded, &common.solve, &opts)?;
        if let Some(dir) = &common.trace_dir {
            let path = dir.join(format!("{run_id}.csv"));
            write_trace(&path, &report.trace)?;
            outputs.push(path.display().to_string());
        }
        Ok(ResultRow::from_report(
            &run_id,
            &instance,
            loaded.instance.n(),
            loaded.instance.s(),
            &report,
            complemented,
        ))
    })();
    let row = outcome.unwrap_or_else(|e| {
        let (n, s, seed) = instance_manifest.as_ref().map_or((0, 0, None), |m| (m.n, m.s, m.seed));
        ResultRow::failed(&run_id, &instance, name, n, s, seed, clock.elapsed().as_secs_f64(), &e)
    });
    outputs.push(common.out.display().to_string());
    let manifest = RunManifest {
        run_id,
        command: std::env::args().collect(),
        relaxation: name.into(),
        instance_path: Some(instance),
        instance: instance_manifest.unwrap_or_else(|| placeholder_manifest()),
        options: common.solve.options(false).unwrap_or_default(),
        outputs,
        started_unix_s: started,
        finished_unix_s: unix_now(),
        code_version: code_version(),
    };
    (row, manifest)
}

fn placeholder_manifest() -> InstanceManifest {
    InstanceManifest {
        kind: entropy_bounds::instances::InstanceKind::MespFile,
        n: 0,
        m: None,
        rank: None,
        s: 0,
        seed: None,
        gamma: 1.0,
        offset: 0.0,
        source_path: None,
        format: entropy_bounds::instances::MatrixFormat::Whitespace,
    }
}

/// Run manifests for a results CSV live next to it.
pub fn runs_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map_or_else(Default::default, |f| f.to_os_string());
    name.push(".runs.json");
    out.with_file_name(name)
}

fn execute(manifests: Vec<PathBuf>, common: &BenchArgs) -> Result<()> {
    if common.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    common.solve.options(false)?;
    if let Some(dir) = &common.trace_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let jobs: Vec<Job> = manifests
        .iter()
        .flat_map(|m| common.method.iter().map(move |&method| (m.clone(), method)))
        .enumerate()
        .map(|(index, (manifest, method))| Job { index, manifest, method })
        .collect();
    let workers = thread_cap().map_or(common.jobs, |cap| common.jobs.min(cap));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;

    // rows go through one writer in job order
    let writer = Mutex::new(());
    let results: Vec<(ResultRow, RunManifest)> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let r = run_job(job, common);
                let _guard = writer.lock().unwrap_or_else(|e| e.into_inner());
                eprintln!("{} {} bound={:?} gap={:?}", r.0.run_id, r.0.termination, r.0.bound, r.0.gap);
                r
            })
            .collect()
    });
    let (rows, runs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    append_rows(&common.out, &rows)?;

    let runs_file = runs_path(&common.out);
    let mut all: Vec<RunManifest> = match std::fs::read_to_string(&runs_file) {
        Ok(text) => serde_json::from_str(&text).with_context(|| format!("reading {}", runs_file.display()))?,
        Err(_) => Vec::new(),
    };
    all.extend(runs);
    write_json(&runs_file, &all)?;
    Ok(())
}

pub fn run(cmd: BenchCommand) -> Result<()> {
    match cmd {
        BenchCommand::Run { manifests, common } => execute(manifests, &common),
        BenchCommand::Sweep { sweep, common } => {
            let manifests = generate_sweep(&sweep)?;
            execute(manifests, &common)
        }
    }
}
