//! `isospec` command-line front end.
//!
//! Exit codes: 0 success, 1 failed verification, 2 usage or unreadable
//! input, 3 domain error, 4 dimension cap exceeded.

mod commands;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use table::Format;

#[derive(Parser, Debug)]
#[command(name = "isospec", version, about = "Angular polyspectra of isotropic spherical random fields")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "ISOSPEC_THREADS")]
    threads: Option<usize>,

    /// Largest dense dimension prod(2 l_j + 1) allowed.
    #[arg(long, global = true)]
    cap: Option<usize>,

    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,

    /// Output file (default: stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CoeffKind {
    #[value(name = "3j")]
    ThreeJ,
    #[value(name = "6j")]
    SixJ,
    #[value(name = "cg")]
    Cg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Orthogonality,
    Clebun,
    Projector,
    Sht,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate a 3j symbol (l1 l2 l3 m1 m2 m3), a 6j symbol (j1 .. j6) or a
    /// Clebsch-Gordan coefficient (l1 m1 l2 m2 l m).
    Coeff {
        kind: CoeffKind,
        #[arg(allow_negative_numbers = true, required = true)]
        indices: Vec<i32>,
    },
    /// Simulate a field model and write its harmonic coefficients.
    Simulate {
        /// gaussian | sw:F | chi2:NU | hermite:F1,F2,...
        #[arg(long, default_value = "gaussian")]
        model: String,
        #[arg(long)]
        lmax: usize,
        #[arg(long, default_value_t = 1)]
        replicates: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV file of `l,C_l` rows, or `A,alpha` for C_l = A (l+1)^-alpha.
        #[arg(long, default_value = "1,2")]
        spectrum: String,
        /// Band of the quadrature grid (default: L, or 2L for nonlinear models).
        #[arg(long)]
        grid_band: Option<usize>,
        /// Also write the sampled field values here.
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Monte Carlo and analytic polyspectra for one multipole tuple.
    Spectrum {
        /// Multipoles, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        ls: Vec<i32>,
        #[arg(long, default_value = "gaussian")]
        model: String,
        /// Band limit of the underlying Gaussian field.
        #[arg(long)]
        lmax: usize,
        #[arg(long, default_value_t = 10_000)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "1,2")]
        spectrum: String,
    },
    /// Monte Carlo Clebsch-Gordan estimates from squared Gaussian fields.
    McCg {
        /// CSV of `l1,m1,l2,m2,l3,m3` targets (default: three probes).
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long)]
        lmax: usize,
        #[arg(long, default_value_t = 100_000)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "1,0")]
        spectrum: String,
        /// Read the h table from this binary file instead of computing it.
        #[arg(long)]
        h_table: Option<PathBuf>,
        /// Read replicates from this binary file instead of simulating.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        write_h: Option<PathBuf>,
        #[arg(long)]
        write_store: Option<PathBuf>,
    },
    /// Run an identity suite and report the largest residual.
    Verify {
        suite: Suite,
        #[arg(long, default_value_t = 4)]
        lmax: i32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Test hook: add this amount to one computed entry before checking.
        #[arg(long, default_value_t = 0.0)]
        perturb: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    if let Some(cap) = cli.cap {
        isospec::coupling::set_dimension_cap(cap);
    }
    let result = match cli.command {
        Command::Coeff { kind, indices } => commands::coeff(kind, &indices),
        Command::Simulate {
            model,
            lmax,
            replicates,
            seed,
            spectrum,
            grid_band,
            field,
        } => commands::simulate(&model, lmax, replicates, seed, &spectrum, grid_band, field.as_deref(), cli.format),
        Command::Spectrum {
            ls,
            model,
            lmax,
            replicates,
            seed,
            spectrum,
        } => commands::spectrum(&ls, &model, lmax, replicates, seed, &spectrum),
        Command::McCg {
            targets,
            lmax,
            replicates,
            seed,
            spectrum,
            h_table,
            store,
            write_h,
            write_store,
        } => commands::mc_cg(commands::McCgArgs {
            targets,
            lmax,
            replicates,
            seed,
            spectrum,
            h_table,
            store,
            write_h,
            write_store,
        }),
        Command::Verify {
            suite,
            lmax,
            seed,
            perturb,
        } => commands::verify(suite, lmax, seed, perturb),
    };
    match result {
        Ok((table, ok)) => {
            let text = table.render(cli.format);
            let written = match &cli.out {
                Some(path) => std::fs::write(path, text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            };
            if let Err(e) = written {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
