use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ctc_lab::cli::{self, exit_code};
use ctc_lab::{Error, Result};

#[derive(Parser)]
#[command(name = "ctc", version, about = "Driven-dissipative collective spin toolkit")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Also write SVG figures.
    #[arg(long, global = true)]
    plot: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Accepted for scripting; every run is deterministic anyway since no
    /// code path draws random numbers.
    #[arg(long, global = true, default_value_t = true)]
    seedless_deterministic: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Time evolution of one initial state under several generators.
    Evolve,
    /// Liouvillian spectra over an N grid, tracking and 1/N scaling.
    Spectrum,
    /// Long-time order parameter against Ω/κ.
    Sweep,
    /// Trajectories and their normalised Fourier spectra.
    Fourier,
    /// Flow spectra overlaid with Liouvillian eigenfrequencies.
    Compare,
    /// Brute-force full-space checks of the Dicke-sector results.
    Verify,
}

/// OpenBLAS picks its kernels when the library loads, so a bad pick can
/// only be fixed by restarting with the core type pinned.
#[cfg(unix)]
fn ensure_blas() {
    use std::os::unix::process::CommandExt;
    if std::env::var_os("OPENBLAS_CORETYPE").is_some() || ctc_lab::linalg::blas_self_check().is_ok() {
        return;
    }
    log::warn!("BLAS self-check failed, restarting with OPENBLAS_CORETYPE=Haswell");
    let mut argv = std::env::args_os();
    let exe = std::env::current_exe().ok().or_else(|| argv.next().map(PathBuf::from));
    if let Some(exe) = exe {
        let err = std::process::Command::new(exe)
            .args(std::env::args_os().skip(1))
            .env("OPENBLAS_CORETYPE", "Haswell")
            .exec();
        log::error!("re-exec failed: {err}");
    }
}

#[cfg(not(unix))]
fn ensure_blas() {}

fn config_or_default<T: serde::de::DeserializeOwned>(path: Option<&Path>, default: Option<&str>) -> Result<T> {
    match (path, default) {
        (Some(p), _) => cli::load_config(p),
        (None, Some(d)) => Ok(serde_json::from_str(d)?),
        (None, None) => Err(Error::Config("--config is required".into())),
    }
}

fn run(args: &Args) -> Result<Vec<PathBuf>> {
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let cfg = args.config.as_deref();
    let base = cfg.and_then(Path::parent).unwrap_or(Path::new("."));
    let (out, plot) = (args.out.as_path(), args.plot);
    match args.cmd {
        Cmd::Evolve => cli::cmd_evolve(&config_or_default(cfg, None)?, out, plot),
        Cmd::Spectrum => cli::cmd_spectrum(&config_or_default(cfg, None)?, out, plot),
        Cmd::Sweep => cli::cmd_sweep(&config_or_default(cfg, None)?, out, plot),
        Cmd::Fourier => cli::cmd_fourier(&config_or_default(cfg, None)?, out, plot),
        Cmd::Compare => cli::cmd_compare(&config_or_default(cfg, None)?, base, out, plot),
        Cmd::Verify => cli::cmd_verify(&config_or_default(cfg, Some("{}"))?, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    ensure_blas();
    match run(&args) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
