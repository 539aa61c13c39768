use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use fedlab_core::sim::{to_csv, Family, Rng, Simulation};
use fedlab_core::FedError;

use crate::config::{ExperimentConfig, Prepared};
use crate::report::{render_comparison, CompareRow, RunReport};
use crate::CliError;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "FEDLAB_SEED";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Highest-precedence seed, above [`SEED_ENV`] and the config.
    pub seed: Option<u64>,
    /// Ledger path; defaults to `run.out`, then to the config path with a `.csv` extension.
    pub out: Option<PathBuf>,
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    let mut cfg = ExperimentConfig::parse_unchecked(&text)
        .map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
    if let Some(s) = resolve_seed(seed, std::env::var(SEED_ENV).ok())? {
        cfg.run.seed = s;
    }
    Ok(cfg)
}

/// Applies the precedence flag > environment > config.
fn resolve_seed(flag: Option<u64>, env: Option<String>) -> Result<Option<u64>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match env {
        None => Ok(None),
        Some(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
    }
}

fn digest(cfg: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_toml().as_bytes()))
}

fn algorithm_label(family: &Family) -> String {
    match family {
        Family::FirstOrder(f) => format!("first-order/{}", f.accel.name()),
        Family::Admm(a) => format!("admm/{}", a.variant.name()),
    }
}

/// Writes `contents` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let ctx = || format!("writing {}", path.display());
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(ctx(), e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| CliError::io(ctx(), e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(ctx(), e))?;
    tmp.persist(path).map_err(|e| CliError::io(ctx(), e.error))?;
    Ok(())
}

/// Executes every round of a prepared experiment. On divergence the rows recorded so far
/// are returned along with the error.
fn execute<'a>(cfg: &ExperimentConfig, prep: &'a Prepared) -> (Simulation<'a>, Option<FedError>) {
    let rng = Rng::new(cfg.run.seed);
    let mut sim = Simulation::new(&prep.instance, &prep.spec, &prep.topology, &rng)
        .expect("compatibility was checked when preparing");
    for _ in 0..cfg.run.rounds {
        match sim.step() {
            Ok(row) => {
                if row.round % 50 == 0 {
                    log::info!("round {} objective {:e}", row.round, row.objective);
                }
            }
            Err(e) => return (sim, Some(e)),
        }
    }
    (sim, None)
}

/// `fedlab run`: writes the CSV ledger and returns the report and the ledger path.
pub fn run(config: &Path, opts: &RunOptions) -> Result<(RunReport, PathBuf), CliError> {
    let cfg = load(config, opts.seed)?;
    let prep = cfg.prepare()?;
    let out = opts
        .out
        .clone()
        .or_else(|| cfg.run.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| config.with_extension("csv"));
    log::info!("running {} for {} rounds (seed {})", config.display(), cfg.run.rounds, cfg.run.seed);
    let (sim, failure) = execute(&cfg, &prep);
    write_atomic(&out, &to_csv(sim.metrics()))?;
    if let Some(e) = failure {
        log::warn!("partial ledger with {} rows written to {}", sim.metrics().len(), out.display());
        return Err(e.into());
    }
    let oracle = prep.instance.oracle.as_ref().map(|o| o.objective);
    let ledger = sim.metrics();
    let reached = oracle.and_then(|o| ledger.iter().position(|m| m.objective - o <= cfg.run.tol));
    let report = RunReport {
        config_digest: digest(&cfg),
        problem: prep.instance.kind.name().to_string(),
        algorithm: algorithm_label(&prep.spec.family),
        topology: prep.topology.name().to_string(),
        seed: cfg.run.seed,
        rounds: ledger.len(),
        final_objective: ledger.last().map(|m| m.objective),
        oracle_objective: oracle,
        tol: cfg.run.tol,
        rounds_to_tol: reached.map(|k| k + 1),
        bytes_up: ledger.iter().map(|m| m.bytes_up).sum(),
        bytes_down: ledger.iter().map(|m| m.bytes_down).sum(),
        dp_epsilon: sim.dp_epsilon(),
    };
    Ok((report, out))
}

/// `fedlab compare`: runs each config in order and tabulates progress to `tol`.
pub fn compare(configs: &[PathBuf], tol: f64, seed: Option<u64>) -> Result<(Vec<CompareRow>, String), CliError> {
    if configs.len() < 2 {
        return Err(CliError::Config("compare needs at least two --config files".into()));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(CliError::Config(format!("--tol must be positive, got {tol}")));
    }
    let loaded: Vec<ExperimentConfig> = configs.iter().map(|p| load(p, seed)).collect::<Result<_, _>>()?;
    let first = loaded[0].run.seed;
    if let Some((p, c)) = configs.iter().zip(&loaded).find(|(_, c)| c.run.seed != first) {
        return Err(CliError::Config(format!(
            "problem seeds differ: {} uses {} but {} uses {first}",
            p.display(),
            c.run.seed,
            configs[0].display()
        )));
    }
    let mut rows = Vec::with_capacity(loaded.len());
    for (path, cfg) in configs.iter().zip(&loaded) {
        let prep = cfg.prepare()?;
        log::info!("comparing {}", path.display());
        let (sim, failure) = execute(cfg, &prep);
        if let Some(e) = failure {
            return Err(e.into());
        }
        let label = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        let oracle = prep.instance.oracle.as_ref().map(|o| o.objective);
        rows.push(CompareRow::from_ledger(label, sim.metrics(), oracle, tol));
    }
    let table = render_comparison(&rows, tol);
    Ok((rows, table))
}

/// `fedlab oracle`: the centralized objective and the method that produced it.
pub fn oracle(config: &Path, seed: Option<u64>) -> Result<String, CliError> {
    let cfg = load(config, seed)?;
    let inst = cfg.build_instance()?;
    let o = inst
        .oracle
        .as_ref()
        .ok_or_else(|| CliError::Core(FedError::State("problem has no centralized oracle".into())))?;
    Ok(format!("{} ({})\n", fedlab_core::sim::format_real(o.objective), o.method))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(3), Some("7".into())).unwrap(), Some(3));
        assert_eq!(resolve_seed(None, Some(" 7 ".into())).unwrap(), Some(7));
        assert_eq!(resolve_seed(None, None).unwrap(), None);
        assert_eq!(resolve_seed(None, Some("x".into())).unwrap_err().exit_code(), 2);
    }
}
