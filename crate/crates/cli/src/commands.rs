use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use proptail_core::config::format_point;
use proptail_core::coupling::{
    calibrate_bound_constant, coupling_construction, thinning_equivalence_test,
    verify_coupling_report, write_draws_csv,
};
use proptail_core::estimators::{estimate as run_estimate, EstimateRequest, ThresholdSpec};
use proptail_core::montecarlo::{default_schedule, run_experiment, ExperimentKind, McConfig};
use proptail_core::{Error, KeyValues, SampleSet, TailModel};

use crate::exit::CliError;
use crate::CommonArgs;

/// Smallest replication count accepted by `validate`.
pub const MIN_REPLICATIONS: usize = 100;

type CliResult<T = ()> = Result<T, CliError>;

fn load_config(args: &CommonArgs) -> CliResult<KeyValues> {
    let text = fs::read_to_string(&args.config).map_err(|e| CliError::io(&args.config, e))?;
    let mut kv = KeyValues::parse(&text)?;
    if let Some(seed) = args.seed {
        kv.set("seed", seed);
    }
    Ok(kv)
}

fn config_dir(args: &CommonArgs) -> PathBuf {
    args.config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

fn create(out: &Path, name: &str) -> CliResult<BufWriter<File>> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let path = out.join(name);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(BufWriter::new(file))
}

fn finish(mut w: BufWriter<File>, out: &Path, name: &str) -> CliResult {
    w.flush().map_err(|e| CliError::io(out.join(name), e))?;
    log::info!("wrote {}", out.join(name).display());
    Ok(())
}

fn seed(kv: &KeyValues) -> CliResult<u64> {
    Ok(kv.parsed_or("seed", 0)?)
}

pub fn generate(args: &CommonArgs) -> CliResult {
    let kv = load_config(args)?;
    let model = TailModel::from_key_values(&kv)?;
    let n: usize = kv.require_parsed("n")?;
    if n == 0 {
        return Err(Error::InvalidParameter {
            field: "n".into(),
            reason: "must be positive".into(),
        }
        .into());
    }
    let seed = seed(&kv)?;
    let sample = model.sample_dataset(n, seed)?;

    let mut w = create(&args.out, "sample.csv")?;
    sample.write_csv(&mut w)?;
    finish(w, &args.out, "sample.csv")?;

    let mut meta = model.to_key_values();
    meta.set("n", n);
    meta.set("seed", seed);
    meta.set("model_id", model.model_id());
    let mut w = create(&args.out, "sample.meta")?;
    write!(w, "{meta}").map_err(|e| CliError::io(args.out.join("sample.meta"), e))?;
    finish(w, &args.out, "sample.meta")?;
    println!("generated {n} rows (model {}, seed {seed})", model.model_id());
    Ok(())
}

pub fn estimate(args: &CommonArgs) -> CliResult {
    let kv = load_config(args)?;
    let input = config_dir(args).join(kv.require("input")?);
    let file = File::open(&input).map_err(|e| CliError::io(&input, e))?;
    let sample = SampleSet::read_csv(BufReader::new(file))?;
    if sample.is_empty() {
        return Err(Error::EmptySample.into());
    }
    let model = if kv.contains("gamma") {
        Some(TailModel::from_key_values(&kv)?)
    } else {
        None
    };
    let n = sample.len();
    let schedule = default_schedule(n, sample.dim());
    let threshold = match ThresholdSpec::from_key_values(&kv, model.as_ref())? {
        Some(t) => t,
        None => {
            let k = ((n as f64 * schedule.p_n).round() as usize).clamp(1, n.saturating_sub(1).max(1));
            ThresholdSpec::TopK(k)
        }
    };
    let request = EstimateRequest {
        threshold,
        bandwidth: kv.parsed_or("bandwidth", schedule.bandwidth)?,
        points: kv.points("estimate.x")?.unwrap_or_default(),
        alphas: kv
            .list_f64("estimate.alpha")?
            .unwrap_or_else(|| vec![schedule.alpha_n]),
    };
    let report = run_estimate(&sample, &request)?;
    let mut w = create(&args.out, "estimate.csv")?;
    report.write_csv(&mut w)?;
    finish(w, &args.out, "estimate.csv")?;
    print!("{}", report.summary());
    Ok(())
}

/// Runs the coupling check described by `coupling.*` / `thinning.*` keys and
/// writes `coupling.csv` (plus `draws.csv` when `coupling.dump = true`).
fn coupling_check(kv: &KeyValues, out: &Path) -> CliResult<bool> {
    let model = TailModel::from_key_values(kv)?;
    let seed = seed(kv)?;
    let n: usize = kv.parsed_or("coupling.n", 10_000)?;
    let y_n = match kv.parsed::<f64>("coupling.y_n")? {
        Some(y) => y,
        None => model.tail_level(kv.parsed_or("coupling.p", 0.05)?)?,
    };
    let m = match kv.parsed::<f64>("coupling.m")? {
        Some(m) => m,
        // Calibrated on an independent reference run.
        None => calibrate_bound_constant(&model, n, y_n, seed.wrapping_add(1))?,
    };
    let draws = coupling_construction(&model, n, y_n, seed)?;
    let mut report = verify_coupling_report(&draws, &model, y_n, m)?;
    let mut passed = !report.violated;
    if kv.contains("thinning.n") {
        let t = thinning_equivalence_test(
            kv.require_parsed("thinning.n")?,
            kv.require_parsed("thinning.p")?,
            kv.parsed_or("thinning.reps", 2000)?,
            seed,
        )?;
        passed &= t.exact_match.unwrap_or(t.p_value > 0.01);
        report = report.with_thinning(t);
    }

    let mut w = create(out, "coupling.csv")?;
    report.write_csv(&mut w)?;
    finish(w, out, "coupling.csv")?;
    if kv.parsed_or("coupling.dump", false)? {
        let mut w = create(out, "draws.csv")?;
        write_draws_csv(&draws, &mut w)?;
        finish(w, out, "draws.csv")?;
    }
    println!(
        "[{}] coupling: exceedances={} mismatch_rate={} max_ratio_deviation={:e} A_n={:e} M={}",
        if passed { "PASS" } else { "FAIL" },
        report.exceedances,
        report.mismatch_rate,
        report.max_ratio_deviation,
        report.a_n,
        report.bound_constant
    );
    if let Some(t) = &report.thinning {
        println!("  thinning: ks_statistic={} ks_p={}", t.statistic, t.p_value);
    }
    Ok(passed)
}

pub fn coupling(args: &CommonArgs) -> CliResult {
    let kv = load_config(args)?;
    if coupling_check(&kv, &args.out)? {
        Ok(())
    } else {
        Err(CliError::ValidationFailed("coupling bound violated".into()))
    }
}

enum Task {
    Experiment(ExperimentKind),
    Coupling,
}

pub fn validate(args: &CommonArgs) -> CliResult {
    let kv = load_config(args)?;
    let tasks = kv
        .get("validate.kinds")
        .unwrap_or("gamma")
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| match s {
            "coupling" => Ok(Task::Coupling),
            other => other.parse().map(Task::Experiment),
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let experiments: Vec<ExperimentKind> = tasks
        .iter()
        .filter_map(|t| match t {
            Task::Experiment(k) => Some(*k),
            Task::Coupling => None,
        })
        .collect();
    let cfg = if experiments.is_empty() {
        None
    } else {
        let cfg = McConfig::from_key_values(&kv)?;
        if cfg.replications < MIN_REPLICATIONS {
            return Err(Error::Precondition {
                name: "mc.replications".into(),
                value: cfg.replications as f64,
                minimum: MIN_REPLICATIONS as f64,
            }
            .into());
        }
        for kind in &experiments {
            cfg.check_rates(*kind)?;
        }
        Some(cfg)
    };

    let mut failed = Vec::new();
    for task in tasks {
        match task {
            Task::Coupling => {
                if !coupling_check(&kv, &args.out)? {
                    failed.push("coupling".to_string());
                }
            }
            Task::Experiment(kind) => {
                let cfg = cfg.as_ref().expect("config built for experiments");
                let reports = run_experiment(cfg, kind)?;
                let indexed = reports.len() > 1;
                for (i, r) in reports.iter().enumerate() {
                    let stem = if indexed {
                        format!("mc_{kind}_{i}")
                    } else {
                        format!("mc_{kind}")
                    };
                    let name = format!("{stem}.csv");
                    let mut w = create(&args.out, &name)?;
                    r.write_summary_csv(&mut w)?;
                    finish(w, &args.out, &name)?;
                    let raw = format!("{stem}_raw.csv");
                    let mut w = create(&args.out, &raw)?;
                    r.write_raw_csv(&mut w)?;
                    finish(w, &args.out, &raw)?;

                    let mut line = format!("[{}] {}", if r.passed() { "PASS" } else { "FAIL" }, r.label());
                    if let Some(d) = &r.diagnostics {
                        line.push_str(&format!(
                            ": mean={:.4} variance={:.4} ks_p={:.4}",
                            d.mean, d.variance, d.ks_p
                        ));
                    }
                    line.push_str(&format!(" failures={}/{}", r.failures, r.replications));
                    println!("{line}");
                    if !r.passed() {
                        failed.push(match &r.point {
                            Some(x) => format!("{kind} at [{}]", format_point(x)),
                            None => kind.to_string(),
                        });
                    }
                }
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::ValidationFailed(failed.join(", ")))
    }
}
