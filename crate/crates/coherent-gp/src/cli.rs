//! Command implementations behind the `coherent-gp` binary.
//!
//! Every subcommand resolves its options from (highest precedence first) the
//! command line, an optional `key=value` config file, and built-in defaults;
//! writes its outputs plus the exact resolved configuration into the output
//! directory; and is deterministic for a fixed configuration.
//!
//! Exit codes: 0 success, 2 usage error, 3 numeric/optimization failure,
//! 4 I/O failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::gp::GpError;
use crate::kernels::{
    emulate_hardware_gram, load_gram, save_gram, Hyperparams, Kernel, KernelError, KernelFamily,
    KernelSpec, DEFAULT_HW_FLOOR_RATE,
};
use crate::pauli::{pauli_decompose, PauliError};
use crate::tasks::{
    run_dynamics_sweep, run_regress1d, run_regress1d_hw, run_rl, HillConfig, TargetFunction,
    TaskError,
};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "COHERENT_GP_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<TaskError> for CliError {
    fn from(e: TaskError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<GpError> for CliError {
    fn from(e: GpError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<PauliError> for CliError {
    fn from(e: PauliError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn kernel_io(e: KernelError) -> CliError {
    match e {
        KernelError::Io(io) => CliError::Io(io.to_string()),
        KernelError::RaggedRows { .. }
        | KernelError::NotSquare { .. }
        | KernelError::BadCell { .. }
        | KernelError::EmptyFile => CliError::Io(e.to_string()),
        other => CliError::Numeric(other.to_string()),
    }
}

/// The kernel named on the command line: either a simulated family or the
/// hardware-emulated two-qubit pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelChoice {
    Family(KernelFamily),
    HardwareCq4t3,
}

/// Parse the C-N / CQ-N-tm naming scheme (case-insensitive).
pub fn parse_kernel(label: &str) -> Result<KernelChoice, CliError> {
    let norm = label.trim().to_ascii_uppercase();
    if norm == "COHERENT" {
        return Ok(KernelChoice::Family(KernelFamily::AnalyticCoherent));
    }
    if norm == "SQUEEZED" {
        return Ok(KernelChoice::Family(KernelFamily::squeezed()));
    }
    if norm == "CQ-4-T3-HW" {
        return Ok(KernelChoice::HardwareCq4t3);
    }
    if let Some(rest) = norm.strip_prefix("CQ-") {
        let mut parts = rest.split("-T");
        let levels = parts
            .next()
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| CliError::Usage(format!("cannot parse kernel label {label:?}")))?;
        let steps = parts
            .next()
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| {
                CliError::Usage(format!("qubit kernels need a -tM suffix, got {label:?}"))
            })?;
        if !levels.is_power_of_two() || levels < 2 {
            return Err(CliError::Usage(format!(
                "qubit kernels need a power-of-two level count, got {levels}"
            )));
        }
        if steps < 1 {
            return Err(CliError::Usage("Trotter steps must be at least 1".into()));
        }
        return Ok(KernelChoice::Family(KernelFamily::QubitTrotter {
            levels,
            steps,
        }));
    }
    if let Some(rest) = norm.strip_prefix("C-") {
        let levels = rest
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("cannot parse kernel label {label:?}")))?;
        if levels < 2 {
            return Err(CliError::Usage(
                "finite-coherent kernels need at least 2 levels".into(),
            ));
        }
        return Ok(KernelChoice::Family(KernelFamily::FiniteCoherent {
            levels,
        }));
    }
    Err(CliError::Usage(format!(
        "unknown kernel {label:?} (expected coherent, C-N, CQ-N-tm, squeezed, or CQ-4-t3-HW)"
    )))
}

/// A flat `key=value` configuration, merged from a file and command-line
/// overrides. Lines starting with `#` are comments.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "config line {} is not key=value: {line:?}",
                    lineno + 1
                ))
            })?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    /// Resolve: explicit command-line value, else config-file value, else
    /// default. The resolved value is recorded so the written config is
    /// complete.
    pub fn resolve<T: std::str::FromStr + ToString>(
        &mut self,
        key: &str,
        cli: Option<T>,
        default: T,
    ) -> Result<T, CliError> {
        let value = match cli {
            Some(v) => v,
            None => match self.values.get(key) {
                Some(raw) => raw
                    .parse::<T>()
                    .map_err(|_| CliError::Usage(format!("config key {key}={raw:?} unparsable")))?,
                None => default,
            },
        };
        self.set(key, value.to_string());
        Ok(value)
    }

    /// Serialize as sorted `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::write(dir.join("run_config.txt"), self.to_text())?;
        Ok(())
    }
}

/// Resolve the output directory: flag, else config, else $COHERENT_GP_OUT,
/// else the current directory. The directory is created.
pub fn resolve_out_dir(cfg: &mut RunConfig, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = flag
        .or_else(|| cfg.get("out_dir").map(PathBuf::from))
        .or_else(|| std::env::var(OUT_DIR_ENV).ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    cfg.set("out_dir", dir.display().to_string());
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)?;
    Ok(())
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// `decompose`: emit the Pauli decomposition of the N-level displacement
/// generator as JSON ({qubits, terms: [{coeff, string}]}), printing the term
/// count and the dense reconstruction residual.
pub fn cmd_decompose(levels: usize, out_dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let sum = pauli_decompose(levels)?;
    let residual = sum.reconstruction_residual()?;
    let json = serde_json::json!({
        "qubits": sum.qubits,
        "terms": sum.terms.iter().map(|t| serde_json::json!({
            "coeff": t.coefficient,
            "string": t.string(),
        })).collect::<Vec<_>>(),
    });
    let path = out_dir.join(format!("pauli_{levels}.json"));
    write_text(
        &path,
        &serde_json::to_string_pretty(&json).expect("serializable"),
    )?;
    cfg.write(out_dir)?;
    println!(
        "decomposed {} levels into {} Pauli terms on {} qubits; reconstruction residual {:.3e}",
        levels,
        sum.terms.len(),
        sum.qubits,
        residual
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn write_predictions(
    path: &Path,
    xs: &[f64],
    mean: &[f64],
    lo: &[f64],
    hi: &[f64],
) -> Result<(), CliError> {
    let mut text = String::from("x,mean,lo95,hi95\n");
    for k in 0..xs.len() {
        let _ = writeln!(
            text,
            "{},{},{},{}",
            fmt_float(xs[k]),
            fmt_float(mean[k]),
            fmt_float(lo[k]),
            fmt_float(hi[k])
        );
    }
    write_text(path, &text)
}

/// `regress1d`: the one-dimensional regression pipeline for any named kernel,
/// writing results JSON and a plot-ready prediction CSV.
#[allow(clippy::too_many_arguments)]
pub fn cmd_regress1d(
    func: TargetFunction,
    kernel: KernelChoice,
    n_train: usize,
    seed: u64,
    restarts: usize,
    shots: u64,
    floor_rate: f64,
    out_dir: &Path,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    match kernel {
        KernelChoice::Family(family) => {
            let report = run_regress1d(func, family, n_train, seed, restarts)?;
            write_text(
                &out_dir.join("results.json"),
                &serde_json::to_string_pretty(&report).expect("serializable"),
            )?;
            write_predictions(
                &out_dir.join("predictions.csv"),
                &report.test_x,
                &report.mean,
                &report.lo95,
                &report.hi95,
            )?;
            cfg.write(out_dir)?;
            println!(
                "{} on {}: r2 = {:.4}, lml = {:.3} (s = {:.4e}, c = {:.4e})",
                report.kernel,
                func.label(),
                report.r2,
                report.lml,
                report.hyperparams.s,
                report.hyperparams.c[0],
            );
        }
        KernelChoice::HardwareCq4t3 => {
            let report = run_regress1d_hw(func, seed, shots, floor_rate, restarts)?;
            write_text(
                &out_dir.join("results.json"),
                &serde_json::to_string_pretty(&report).expect("serializable"),
            )?;
            write_predictions(
                &out_dir.join("predictions.csv"),
                &report.test_x,
                &report.mean,
                &report.lo95,
                &report.hi95,
            )?;
            cfg.write(out_dir)?;
            println!(
                "CQ-4-t3-HW on {}: r2 = {:.4}, band coverage = {:.3}, s = {:.4}, sigma_d = {:.4}",
                func.label(),
                report.r2,
                report.coverage95,
                report.s,
                report.sigma_d,
            );
        }
    }
    Ok(())
}

/// `dynamics`: the multi-set dynamics-regression sweep with a per-set R2
/// table and aggregate statistics.
pub fn cmd_dynamics(
    kernel: KernelChoice,
    sets: usize,
    seed: u64,
    out_dir: &Path,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    let family = match kernel {
        KernelChoice::Family(f) => f,
        KernelChoice::HardwareCq4t3 => {
            return Err(CliError::Usage(
                "the hardware pipeline applies to regress1d only".into(),
            ))
        }
    };
    let cfg_hill = HillConfig::default();
    let sweep = run_dynamics_sweep(&cfg_hill, &family, sets, seed)?;
    let mut table = String::from("set,r2_x,r2_v,lml_x,lml_v\n");
    for s in &sweep.sets {
        let _ = writeln!(
            table,
            "{},{},{},{},{}",
            s.set,
            fmt_float(s.r2_x),
            fmt_float(s.r2_v),
            fmt_float(s.lml_x),
            fmt_float(s.lml_v)
        );
    }
    write_text(&out_dir.join("r2_table.csv"), &table)?;
    write_text(
        &out_dir.join("results.json"),
        &serde_json::to_string_pretty(&sweep).expect("serializable"),
    )?;
    cfg.write(out_dir)?;
    println!(
        "{} dynamics over {} sets: mean r2_x = {:.4} (std {:.1e}), mean r2_v = {:.4} (std {:.1e})",
        sweep.kernel, sets, sweep.mean_r2_x, sweep.std_r2_x, sweep.mean_r2_v, sweep.std_r2_v,
    );
    Ok(())
}

/// `rl`: train the GP controller and roll it out, writing the episode as JSON
/// lines plus a summary.
pub fn cmd_rl(
    kernel: KernelChoice,
    iters: usize,
    steps: usize,
    seed: u64,
    out_dir: &Path,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    let family = match kernel {
        KernelChoice::Family(f) => f,
        KernelChoice::HardwareCq4t3 => {
            return Err(CliError::Usage(
                "the hardware pipeline applies to regress1d only".into(),
            ))
        }
    };
    let cfg_hill = HillConfig::default();
    let (report, episode, _policy) = run_rl(&cfg_hill, &family, iters, steps, seed)?;
    let mut lines = String::new();
    for step in &episode.steps {
        let _ = writeln!(
            lines,
            "{}",
            serde_json::to_string(step).expect("serializable")
        );
    }
    write_text(&out_dir.join("episode.jsonl"), &lines)?;
    write_text(
        &out_dir.join("results.json"),
        &serde_json::to_string_pretty(&report).expect("serializable"),
    )?;
    cfg.write(out_dir)?;
    match report.steps_to_goal {
        Some(n) => println!(
            "{}: reached the goal after {} steps; held it for {} of {} steps",
            report.kernel, n, report.hold_steps, report.rollout_steps
        ),
        None => println!(
            "{}: did not reach the goal in {} steps",
            report.kernel, report.rollout_steps
        ),
    }
    Ok(())
}

/// Read a dataset CSV with header x1,...,xD,y,sigma2.
pub fn read_dataset_csv(path: &Path) -> Result<crate::gp::Dataset, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Io(format!("{} is empty", path.display())))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.len() < 3
        || columns[columns.len() - 2] != "y"
        || *columns.last().unwrap() != "sigma2"
    {
        return Err(CliError::Io(format!(
            "{}: expected header x1,...,xD,y,sigma2",
            path.display()
        )));
    }
    let dims = columns.len() - 2;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut sigma2 = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != columns.len() {
            return Err(CliError::Io(format!(
                "{} line {}: {} cells, expected {}",
                path.display(),
                lineno + 2,
                cells.len(),
                columns.len()
            )));
        }
        let parse = |cell: &str| -> Result<f64, CliError> {
            cell.parse::<f64>()
                .map_err(|_| CliError::Io(format!("{}: bad number {cell:?}", path.display())))
        };
        let mut point = Vec::with_capacity(dims);
        for cell in &cells[..dims] {
            point.push(parse(cell)?);
        }
        xs.push(point);
        ys.push(parse(cells[dims])?);
        sigma2.push(parse(cells[dims + 1])?);
    }
    crate::gp::Dataset::new(xs, ys, sigma2).map_err(|e| CliError::Numeric(e.to_string()))
}

/// Write a dataset CSV with header x1,...,xD,y,sigma2.
pub fn write_dataset_csv(path: &Path, data: &crate::gp::Dataset) -> Result<(), CliError> {
    let dims = data.dims();
    let mut text = String::new();
    for d in 0..dims {
        let _ = write!(text, "x{},", d + 1);
    }
    text.push_str("y,sigma2\n");
    for i in 0..data.len() {
        for d in 0..dims {
            let _ = write!(text, "{},", fmt_float(data.x[i][d]));
        }
        let _ = writeln!(
            text,
            "{},{}",
            fmt_float(data.y[i]),
            fmt_float(data.sigma2[i])
        );
    }
    write_text(path, &text)
}

/// Options for `gram`.
#[derive(Debug, Clone)]
pub struct GramArgs {
    pub kernel: KernelChoice,
    pub dataset: PathBuf,
    pub s: f64,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub emulate_hw: bool,
    pub shots: u64,
    pub floor_rate: f64,
    pub hw_seed: u64,
}

/// `gram`: evaluate the kernel Gram over a dataset's inputs; optionally also
/// write a shot-noise-emulated copy and the elementwise relative error.
pub fn cmd_gram(args: GramArgs, out_dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let family = match args.kernel {
        KernelChoice::Family(f) => f,
        KernelChoice::HardwareCq4t3 => KernelFamily::QubitTrotter {
            levels: 4,
            steps: 3,
        },
    };
    let data = read_dataset_csv(&args.dataset)?;
    let dims = data.dims();
    let mut c = args.c.clone();
    if c.is_empty() {
        c = vec![1.0; dims];
    }
    if c.len() == 1 && dims > 1 {
        c = vec![c[0]; dims];
    }
    let mut hp = Hyperparams::new(args.s, c);
    if matches!(family, KernelFamily::Squeezed { .. }) {
        let pairs = dims * (dims - 1) / 2;
        hp = hp.with_couplings(if args.d.is_empty() {
            vec![0.0; pairs]
        } else {
            args.d.clone()
        });
    }
    let kernel = Kernel::new(KernelSpec::new(family, dims), hp).map_err(kernel_io)?;
    let gram = kernel.gram(&data.x).map_err(kernel_io)?;
    let gram_path = out_dir.join("gram.csv");
    save_gram(&gram, &gram_path).map_err(kernel_io)?;
    println!(
        "wrote {} ({}x{} gram, diagonal = {:.4e})",
        gram_path.display(),
        gram.n,
        gram.n,
        gram.get(0, 0)
    );
    if args.emulate_hw {
        let emulated = emulate_hardware_gram(&gram, args.shots, args.floor_rate, args.hw_seed)
            .map_err(kernel_io)?;
        let emu_path = out_dir.join("gram_emulated.csv");
        save_gram(&emulated, &emu_path).map_err(kernel_io)?;
        let mut rel = String::new();
        for r in 0..gram.n {
            for ccol in 0..gram.n {
                if ccol > 0 {
                    rel.push(',');
                }
                let denom = gram.get(r, ccol).abs().max(f64::MIN_POSITIVE);
                rel.push_str(&fmt_float(
                    (emulated.get(r, ccol) - gram.get(r, ccol)).abs() / denom,
                ));
            }
            rel.push('\n');
        }
        write_text(&out_dir.join("relative_error.csv"), &rel)?;
        println!("wrote {} and relative_error.csv", emu_path.display());
    }
    cfg.write(out_dir)?;
    Ok(())
}

/// `load-gram` check helper used by tests and examples: round-trip a gram.
pub fn roundtrip_gram(path: &Path) -> Result<crate::kernels::GramMatrix, CliError> {
    load_gram(path).map_err(kernel_io)
}

/// Default shot count for hardware emulation (the hardware run's budget).
pub const DEFAULT_SHOTS: u64 = 8192;
/// Default floor rate, re-exported for the binary.
pub const DEFAULT_FLOOR: f64 = DEFAULT_HW_FLOOR_RATE;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_labels_parse() {
        assert_eq!(
            parse_kernel("coherent").unwrap(),
            KernelChoice::Family(KernelFamily::AnalyticCoherent)
        );
        assert_eq!(
            parse_kernel("C-16").unwrap(),
            KernelChoice::Family(KernelFamily::FiniteCoherent { levels: 16 })
        );
        assert_eq!(
            parse_kernel("cq-4-t3").unwrap(),
            KernelChoice::Family(KernelFamily::QubitTrotter {
                levels: 4,
                steps: 3
            })
        );
        assert_eq!(
            parse_kernel("CQ-4-t3-HW").unwrap(),
            KernelChoice::HardwareCq4t3
        );
        assert!(matches!(
            parse_kernel("squeezed").unwrap(),
            KernelChoice::Family(KernelFamily::Squeezed { .. })
        ));
        assert!(parse_kernel("C-1").is_err());
        assert!(parse_kernel("CQ-3-t2").is_err());
        assert!(parse_kernel("mystery").is_err());
    }

    #[test]
    fn config_resolution_order() {
        let dir = std::env::temp_dir().join("coherent-gp-cli-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, "# comment\nseed=42\nkernel=C-8\n").unwrap();
        let mut cfg = RunConfig::from_file(&path).unwrap();
        // CLI wins over the file; the file wins over the default
        assert_eq!(cfg.resolve("seed", Some(7u64), 0).unwrap(), 7);
        assert_eq!(cfg.resolve("sets", None::<usize>, 10).unwrap(), 10);
        let mut cfg2 = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg2.resolve("seed", None::<u64>, 0).unwrap(), 42);
        // resolved values are recorded
        assert_eq!(cfg.get("seed"), Some("7"));
        assert_eq!(cfg.get("sets"), Some("10"));
        assert!(RunConfig::from_file(&dir.join("missing.cfg")).is_err());
        std::fs::write(&path, "notakeyvalue\n").unwrap();
        assert!(RunConfig::from_file(&path).is_err());
    }

    #[test]
    fn dataset_csv_roundtrip() {
        let dir = std::env::temp_dir().join("coherent-gp-cli-data");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("data.csv");
        let data = crate::gp::Dataset::new(
            vec![vec![0.1, -0.2], vec![1.5, 0.4]],
            vec![3.0, -1.0],
            vec![0.5, 0.0],
        )
        .unwrap();
        write_dataset_csv(&path, &data).unwrap();
        let back = read_dataset_csv(&path).unwrap();
        assert_eq!(back, data);
        std::fs::write(&path, "x1,wrong,header\n1,2,3\n").unwrap();
        assert!(read_dataset_csv(&path).is_err());
    }
}
