use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Subcommand};

use entropy_bounds::instances::{
    gen_linear_response, gen_mesp_rank, gen_quadratic_response, gen_random_dopt, InstanceManifest, MatrixFormat,
};

use crate::input::{parse_format, write_instance};
use crate::print_stdout;

#[derive(Subcommand)]
pub enum GenCommand {
    /// Gaussian design, n = 1000·m·scale points, s = 2m.
    RandomDopt {
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[command(flatten)]
        out: GenOutput,
    },
    /// First-order response model over F binary factors.
    Linear {
        #[arg(long)]
        factors: usize,
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        out: GenOutput,
    },
    /// Response model with selected two-factor interactions over ternary factors.
    Quadratic {
        #[arg(long)]
        factors: usize,
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        out: GenOutput,
    },
    /// Random covariance of a given rank.
    MespRank {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        rank: usize,
        /// Defaults to half the rank.
        #[arg(long)]
        s: Option<usize>,
        #[command(flatten)]
        out: GenOutput,
    },
}

#[derive(Args)]
pub struct GenOutput {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output stem; `<stem>.json` and `<stem>.txt` (or `.csv`) are written.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "whitespace")]
    pub format: String,
}

pub fn default_mesp_s(rank: usize) -> usize {
    (rank / 2).max(1)
}

fn emit(stem: PathBuf, matrix: &entropy_bounds::matcore::Mat, mut manifest: InstanceManifest, format: MatrixFormat) -> Result<()> {
    manifest.format = format;
    let path = write_instance(&stem, matrix, manifest)?;
    print_stdout(&path.display().to_string())
}

pub fn run(cmd: GenCommand) -> Result<()> {
    match cmd {
        GenCommand::RandomDopt { m, scale, out } => {
            let inst = gen_random_dopt(m, out.seed, scale)?;
            let stem = out
                .out
                .unwrap_or_else(|| PathBuf::from(format!("random-dopt-m{m}-n{}-seed{}", inst.n(), out.seed)));
            emit(stem, &inst.a, InstanceManifest::for_dopt(&inst), parse_format(&out.format)?)
        }
        GenCommand::Linear { factors, n, out } => {
            let inst = gen_linear_response(factors, n, out.seed)?;
            let stem = out
                .out
                .unwrap_or_else(|| PathBuf::from(format!("linear-f{factors}-n{n}-seed{}", out.seed)));
            emit(stem, &inst.a, InstanceManifest::for_dopt(&inst), parse_format(&out.format)?)
        }
        GenCommand::Quadratic { factors, n, out } => {
            let inst = gen_quadratic_response(factors, n, out.seed)?;
            let stem = out
                .out
                .unwrap_or_else(|| PathBuf::from(format!("quadratic-f{factors}-n{n}-seed{}", out.seed)));
            emit(stem, &inst.a, InstanceManifest::for_dopt(&inst), parse_format(&out.format)?)
        }
        GenCommand::MespRank { n, rank, s, out } => {
            let s = s.unwrap_or_else(|| default_mesp_s(rank));
            let inst = gen_mesp_rank(n, rank, s, out.seed)?;
            let stem = out
                .out
                .unwrap_or_else(|| PathBuf::from(format!("mesp-n{n}-r{rank}-s{s}-seed{}", out.seed)));
            emit(stem, &inst.c, InstanceManifest::for_mesp(&inst, Some(rank)), parse_format(&out.format)?)
        }
    }
}
