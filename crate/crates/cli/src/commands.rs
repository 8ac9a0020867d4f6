use std::fs::File;
use std::io::{BufReader, Write};

use whittaker_ldp::mc::{
    equivalence_experiment, interlace_event_frequency, ldp_slope, least_squares,
};
use whittaker_ldp::model::{
    read_bundle_csv, read_configuration_csv, write_bundle_csv, CsvComments, ModelConfig,
    PathBundle, SamplePath, TimeGrid, TriangularConfiguration,
};
use whittaker_ldp::noise::{sample_noise, Seed};
use whittaker_ldp::rate::{default_coincidence_eps, total_rate, Convention, RateOptions};
use whittaker_ldp::sde::{simulate, IntegratorSpec, Scheme};
use whittaker_ldp::skorokhod::{reflect_above, reflect_below};
use whittaker_ldp::varopt::{minimize_rate, VariationalProblem};

use crate::config::{pick, pick_or, ExperimentConfig};
use crate::{
    CliError, Command, EquivalenceArgs, GridArgs, InterlaceArgs, OptimizeArgs, RateArgs,
    ReflectArgs, SimulateArgs, SlopeArgs,
};

type Result<T> = std::result::Result<T, CliError>;

const DEFAULT_GAMMA: f64 = 16.0;
const DEFAULT_DT: f64 = 1e-4;
const DEFAULT_SAMPLES: u64 = 10_000;

pub fn dispatch(command: Command, cfg: &mut ExperimentConfig) -> Result<()> {
    match command {
        Command::Simulate(a) => run_simulate(a, cfg),
        Command::Rate(a) => run_rate(a, cfg),
        Command::Reflect(a) => run_reflect(a, cfg),
        Command::Slope(a) => run_slope(a, cfg),
        Command::Interlace(a) => run_interlace(a, cfg),
        Command::Equivalence(a) => run_equivalence(a, cfg),
        Command::Optimize(a) => run_optimize(a, cfg),
    }
}

fn grid(a: GridArgs, cfg: &mut ExperimentConfig) -> Result<TimeGrid> {
    let dt = pick_or(a.dt, &mut cfg.dt, DEFAULT_DT);
    let t0 = pick_or(a.t0, &mut cfg.t0, 0.0);
    let t1 = pick_or(a.t1, &mut cfg.t1, 1.0);
    Ok(TimeGrid::with_spacing(t0, t1, dt)?)
}

fn required(value: Option<String>, flag: &str) -> Result<String> {
    value.ok_or_else(|| CliError::Usage(format!("--{flag} is required (flag or config key)")))
}

fn open(path: &str) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Usage(format!("cannot open {path}: {e}")))
}

fn output(path: Option<&str>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn read_configuration(path: &str) -> Result<TriangularConfiguration> {
    Ok(read_configuration_csv(open(path)?)?)
}

fn read_bundle(path: &str) -> Result<(PathBundle, CsvComments)> {
    Ok(read_bundle_csv(open(path)?)?)
}

fn parse<T: std::str::FromStr<Err = whittaker_ldp::Error>>(s: &str) -> Result<T> {
    Ok(s.parse::<T>()?)
}

/// Writes comment lines, a CSV table and footer comment lines.
fn write_table(
    out: &mut dyn Write,
    header: &[String],
    columns: &[&str],
    rows: &[Vec<String>],
    footer: &[String],
) -> Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut *out);
        w.write_record(columns)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
    }
    for line in footer {
        writeln!(out, "# {line}")?;
    }
    out.flush()?;
    Ok(())
}

fn mc_header(cfg: &ExperimentConfig, seed: u64, n_samples: u64) -> Vec<String> {
    vec![
        cfg.to_header(),
        Seed::new(seed, 0).header(),
        format!("replicates=0..{n_samples}"),
    ]
}

/// Least-squares slope of `-log y` over the gammas where `y > 0`.
fn log_slope(gammas: &[f64], y: &[f64]) -> f64 {
    let (xs, ys): (Vec<f64>, Vec<f64>) = gammas
        .iter()
        .zip(y)
        .filter(|(_, v)| **v > 0.0)
        .map(|(g, v)| (*g, -v.ln()))
        .unzip();
    if xs.len() < 2 {
        return f64::NAN;
    }
    least_squares(&xs, &ys).0
}

fn run_simulate(a: SimulateArgs, cfg: &mut ExperimentConfig) -> Result<()> {
    let init = match pick(a.init, &mut cfg.init) {
        Some(path) => {
            let init = read_configuration(&path)?;
            if let Some(n) = pick(a.n, &mut cfg.n) {
                if n != init.n() {
                    return Err(CliError::Usage(format!(
                        "--n {n} disagrees with the {}-level --init file",
                        init.n()
                    )));
                }
            }
            cfg.n = Some(init.n());
            init
        }
        None => TriangularConfiguration::zeros(pick_or(a.n, &mut cfg.n, 2))?,
    };
    let n = init.n();
    let gamma = pick_or(a.gamma, &mut cfg.gamma, DEFAULT_GAMMA);
    let mut model = ModelConfig::new(init, gamma)?;
    if let Some(drifts) = cfg.drifts.clone() {
        model = model.with_drifts(drifts)?;
    }
    let cap = pick_or(a.drift_cap, &mut cfg.drift_cap, model.drift_cap);
    model = model.with_drift_cap(cap)?;
    let grid = grid(a.grid, cfg)?;
    let seed = Seed::new(
        pick_or(a.seed, &mut cfg.seed, 0),
        pick_or(a.replicate, &mut cfg.replicate, 0),
    );
    let scheme: Scheme = parse(&pick_or(
        a.scheme,
        &mut cfg.scheme,
        Scheme::TamedEuler.to_string(),
    ))?;
    let out_path = pick(a.out, &mut cfg.out);

    let noise = sample_noise(seed, grid, n)?;
    let sim = simulate(&model, grid, &noise, &IntegratorSpec::new(scheme, cap)?)?;
    let comments = CsvComments {
        header: vec![cfg.to_header(), seed.header()],
        footer: vec![format!("clamps={}", sim.clamps)],
    };
    write_bundle_csv(output(out_path.as_deref())?, &sim.bundle, &comments)?;
    Ok(())
}

fn run_rate(a: RateArgs, cfg: &mut ExperimentConfig) -> Result<()> {
    let bundle_path = required(pick(a.bundle, &mut cfg.bundle), "bundle")?;
    let (bundle, source) = read_bundle(&bundle_path)?;
    let init = match pick(a.init, &mut cfg.init) {
        Some(path) => read_configuration(&path)?,
        None => bundle.slice(0),
    };
    let eps = match pick(a.eps, &mut cfg.eps) {
        Some(eps) => eps,
        None => {
            // A simulated bundle carries its own gamma in the echoed config.
            let recorded = source
                .lookup("config")
                .and_then(|json| ExperimentConfig::parse(json).ok())
                .and_then(|c| c.gamma);
            let gamma = pick_or(a.gamma, &mut cfg.gamma, recorded.unwrap_or(DEFAULT_GAMMA));
            let eps = default_coincidence_eps(bundle.grid().dt(), gamma);
            cfg.eps = Some(eps);
            eps
        }
    };
    let convention: Convention = parse(&pick_or(
        a.convention,
        &mut cfg.convention,
        Convention::Lemma.to_string(),
    ))?;
    let out_path = pick(a.out, &mut cfg.out);
    let breakdown = total_rate(
        &bundle,
        &init,
        &RateOptions::new(eps)?.with_convention(convention),
    )?;

    let rows: Vec<Vec<String>> = whittaker_ldp::model::indices(bundle.n())
        .zip(&breakdown.particles)
        .map(|(idx, p)| {
            vec![
                idx.column_name(),
                p.interior.to_string(),
                p.upper_coincident.to_string(),
                p.lower_coincident.to_string(),
                p.interior_measure.to_string(),
                p.upper_measure.to_string(),
                p.lower_measure.to_string(),
                p.both_measure.to_string(),
                p.crossing_measure.to_string(),
                p.total.to_string(),
                p.infinity.map(|r| r.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    let total = match breakdown.infinity {
        Some(reason) => format!("total={} reason={reason}", breakdown.total),
        None => format!("total={}", breakdown.total),
    };
    // Keep the bundle's seed line so the rate stays traceable to its simulation.
    let mut header = vec![cfg.to_header()];
    header.extend(
        source
            .header
            .iter()
            .filter(|l| l.starts_with("seed="))
            .cloned(),
    );
    write_table(
        &mut *output(out_path.as_deref())?,
        &header,
        &[
            "particle",
            "interior",
            "upper_coincident",
            "lower_coincident",
            "interior_measure",
            "upper_measure",
            "lower_measure",
            "both_measure",
            "crossing_measure",
            "total",
            "infinity",
        ],
        &rows,
        std::slice::from_ref(&total),
    )?;
    if out_path.is_some() {
        println!("{total}");
    }
    Ok(())
}

fn run_reflect(a: ReflectArgs, cfg: &mut ExperimentConfig) -> Result<()> {
    let input = required(pick(a.input, &mut cfg.input), "input")?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(open(&input)?);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers != ["t", "driver", "barrier"] {
        return Err(CliError::Usage(format!(
            "{input}: expected columns t,driver,barrier, found {}",
            headers.join(",")
        )));
    }
    let (mut t, mut driver, mut barrier) = (Vec::new(), Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record?;
        let value = |i: usize| {
            record[i]
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("{input}: {:?} is not a number", &record[i])))
        };
        t.push(value(0)?);
        driver.push(value(1)?);
        barrier.push(value(2)?);
    }
    if t.len() < 2 {
        return Err(CliError::Usage(format!("{input}: need at least two rows")));
    }
    let grid = TimeGrid::new(t[0], t[t.len() - 1], t.len() - 1)?;
    if t.iter()
        .enumerate()
        .any(|(i, v)| (v - grid.time(i)).abs() > 1e-9 * (1.0 + v.abs()))
    {
        return Err(CliError::Usage(format!(
            "{input}: time column is not uniform"
        )));
    }
    let start = pick_or(a.start, &mut cfg.start, driver[0]);
    let direction = pick_or(a.direction, &mut cfg.direction, "above".to_string());
    let out_path = pick(a.out, &mut cfg.out);
    let driver = SamplePath::new(grid, driver)?;
    let barrier = SamplePath::new(grid, barrier)?;
    let r = match direction.as_str() {
        "above" => reflect_above(&driver, &barrier, start)?,
        "below" => reflect_below(&driver, &barrier, start)?,
        other => {
            return Err(CliError::Usage(format!(
                "--direction must be above or below, got {other:?}"
            )))
        }
    };
    let rows: Vec<Vec<String>> = (0..grid.len())
        .map(|i| {
            vec![
                grid.time(i).to_string(),
                r.path.values()[i].to_string(),
                r.push.values()[i].to_string(),
                u8::from(r.active[i]).to_string(),
            ]
        })
        .collect();
    write_table(
        &mut *output(out_path.as_deref())?,
        &[cfg.to_header()],
        &["t", "path", "push", "active"],
        &rows,
        &[format!("active_fraction={}", r.active_fraction())],
    )
}

fn run_slope(a: SlopeArgs, cfg: &mut ExperimentConfig) -> Result<()> {
    let target = match pick(a.target, &mut cfg.target) {
        Some(path) => {
            if a.velocity.is_some() {
                return Err(CliError::Usage(
                    "--velocity and --target are mutually exclusive".into(),
                ));
            }
            read_bundle(&path)?.0
        }
        None => {
            let grid = grid(a.grid, cfg)?;
            let c = pick_or(a.velocity, &mut cfg.velocity, 0.5);
            PathBundle::new(
                1,
                vec![SamplePath::from_fn(grid, |t| c * (t - grid.start()))?],
            )?
        }
    };
    let init = target.slice(0);
    let delta = pick_or(a.delta, &mut cfg.delta, 0.25);
    let gammas = pick_or(a.gammas, &mut cfg.gammas, vec![8.0, 16.0, 32.0, 64.0]);
    let n_samples = pick_or(a.n_samples, &mut cfg.n_samples, DEFAULT_SAMPLES);
    let seed = pick_or(a.seed, &mut cfg.seed, 0);
    let out_path = pick(a.out, &mut cfg.out);
    let first = *gammas
        .first()
        .ok_or_else(|| CliError::Usage("--gammas must not be empty".into()))?;
    let mut template = ModelConfig::new(init, first)?;
    if let Some(drifts) = cfg.drifts.clone() {
        template = template.with_drifts(drifts)?;
    }
    let fit = ldp_slope(&template, &target, delta, &gammas, n_samples, seed)?;

    let rows: Vec<Vec<String>> = fit
        .estimates
        .iter()
        .zip(fit.per_gamma_slopes())
        .map(|(e, s)| {
            vec![
                e.gamma.to_string(),
                e.p_hat.to_string(),
                e.wilson_ci.0.to_string(),
                e.wilson_ci.1.to_string(),
                e.hits.to_string(),
                e.n_samples.to_string(),
                (-e.p_hat.ln()).to_string(),
                s.to_string(),
                e.clamp_contamination.to_string(),
                e.trusted().to_string(),
            ]
        })
        .collect();
    write_table(
        &mut *output(out_path.as_deref())?,
        &mc_header(cfg, seed, n_samples),
        &[
            "gamma",
            "p_hat",
            "ci_low",
            "ci_high",
            "hits",
            "n_samples",
            "minus_log_p",
            "slope_at_gamma",
            "clamp_contamination",
            "trusted",
        ],
        &rows,
        &[format!(
            "slope={} predicted={}",
            fit.slope, fit.predicted.total
        )],
    )
}

fn run_interlace(a: InterlaceArgs, cfg: &mut ExperimentConfig) -> Result<()> {
    let n = pick_or(a.n, &mut cfg.n, 3);
    let gammas = pick_or(a.gammas, &mut cfg.gammas, vec![16.0, 32.0, 64.0]);
    let n_samples = pick_or(a.n_samples, &mut cfg.n_samples, DEFAULT_SAMPLES);
    let seed = pick_or(a.seed, &mut cfg.seed, 0);
    let scale = pick_or(a.margin_scale, &mut cfg.margin_scale, 1.0);
    let grid = grid(a.grid, cfg)?;
    let out_path = pick(a.out, &mut cfg.out);
    let first = *gammas
        .first()
        .ok_or_else(|| CliError::Usage("--gammas must not be empty".into()))?;
    let template = ModelConfig::new(TriangularConfiguration::zeros(n)?, first)?;
    let freqs = interlace_event_frequency(&template, grid, &gammas, n_samples, seed, scale)?;

    let rows: Vec<Vec<String>> = freqs
        .iter()
        .map(|f| {
            let (lo, hi) = f.a_interval();
            vec![
                f.gamma.to_string(),
                f.bounds.f().to_string(),
                f.bounds.g().to_string(),
                f.a_violations.to_string(),
                f.a_frequency().to_string(),
                lo.to_string(),
                hi.to_string(),
                f.b_violations.to_string(),
                f.b_frequency().to_string(),
                f.c_violations.to_string(),
                f.c_frequency().to_string(),
                f.c_without_b.to_string(),
                f.n_samples.to_string(),
                f.clamp_contamination.to_string(),
            ]
        })
        .collect();
    let a_freq: Vec<f64> = freqs.iter().map(|f| f.a_frequency()).collect();
    // The events fail with superexponentially small probability.
    let summary = format!("slope={} predicted=inf", log_slope(&gammas, &a_freq));
    write_table(
        &mut *output(out_path.as_deref())?,
        &mc_header(cfg, seed, n_samples),
        &[
            "gamma",
            "f",
            "g",
            "a_violations",
            "a_frequency",
            "a_ci_low",
            "a_ci_high",
            "b_violations",
            "b_frequency",
            "c_violations",
            "c_frequency",
            "c_without_b",
            "n_samples",
            "clamp_contamination",
        ],
        &rows,
        &[summary],
    )
}

fn run_equivalence(a: EquivalenceArgs, cfg: &mut ExperimentConfig) -> Result<()> {
    let gammas = pick_or(a.gammas, &mut cfg.gammas, vec![8.0, 16.0, 32.0]);
    let eta = pick_or(a.eta, &mut cfg.eta, 0.5);
    let n_samples = pick_or(a.n_samples, &mut cfg.n_samples, 1000);
    let seed = pick_or(a.seed, &mut cfg.seed, 0);
    let grid = grid(a.grid, cfg)?;
    let out_path = pick(a.out, &mut cfg.out);
    let reports = gammas
        .iter()
        .map(|&g| equivalence_experiment(g, eta, grid, n_samples, seed))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.gamma.to_string(),
                r.eta.to_string(),
                r.n_samples.to_string(),
                r.in_tube.to_string(),
                r.violations.to_string(),
                r.order_violations.to_string(),
                r.max_gap.to_string(),
                r.budget.to_string(),
                r.clamp_contamination.to_string(),
            ]
        })
        .collect();
    let gaps: Vec<f64> = reports.iter().map(|r| r.max_gap).collect();
    // The budget e^{-gamma eta / 2} decays at rate eta / 2 per unit gamma.
    let summary = format!(
        "slope={} predicted={}",
        log_slope(&gammas, &gaps),
        eta / 2.0
    );
    write_table(
        &mut *output(out_path.as_deref())?,
        &mc_header(cfg, seed, n_samples),
        &[
            "gamma",
            "eta",
            "n_samples",
            "in_tube",
            "violations",
            "order_violations",
            "max_gap",
            "budget",
            "clamp_contamination",
        ],
        &rows,
        &[summary],
    )
}

fn run_optimize(a: OptimizeArgs, cfg: &mut ExperimentConfig) -> Result<()> {
    let init = read_configuration(&required(pick(a.init, &mut cfg.init), "init")?)?;
    let terminal = read_configuration(&required(pick(a.terminal, &mut cfg.terminal), "terminal")?)?;
    let m = pick_or(a.m, &mut cfg.m, 64);
    let iters = pick_or(a.iters, &mut cfg.iters, 5000);
    let convention: Convention = parse(&pick_or(
        a.convention,
        &mut cfg.convention,
        Convention::Lemma.to_string(),
    ))?;
    let out_path = pick(a.out, &mut cfg.out);
    let mut problem = VariationalProblem::new(TimeGrid::unit(m)?, init, terminal)?;
    problem.max_iters = iters;
    problem.convention = convention;
    let r = minimize_rate(&problem)?;
    let comments = CsvComments {
        header: vec![cfg.to_header()],
        footer: vec![format!(
            "rate={} baseline={} iterations={} status={:?}",
            r.rate, r.baseline_rate, r.iterations, r.status
        )],
    };
    write_bundle_csv(output(out_path.as_deref())?, &r.bundle, &comments)?;
    Ok(())
}
