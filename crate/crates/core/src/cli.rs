//! Command-line front end: reads an experiment config, runs one command and
//! writes CSV tables into the output directory.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::audit::{audit, HypothesisReport, Verdict};
use crate::config::ExperimentConfig;
use crate::cover::{check_local_injectivity, PartitionOfUnity};
use crate::deriv::{PhaseModel, SymbolModel};
use crate::error::{Error, Result};
use crate::families;
use crate::ibp::verify_coefficient_bounds;
use crate::lab::{
    bound_ratio_report, calibrate, decay_sweep, dispersive_experiment, rescaling_check, BoundFormula, BoundVariant,
    DispersiveSetup, SweepMethod,
};
use crate::quadrature::{decomposition_integral, oracle_integral, Method, OscillatoryIntegralResult};
use crate::table::{fmt_f64, write_table_file};

/// Exit status when the audit finds a degenerate phase.
pub const EXIT_HYPOTHESIS: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "statphase", version, about = "Oscillatory integral experiments and stationary phase bound checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for quadrature.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run even when the audit fails.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Measure M_k, N_l, a0 and the hypothesis checks.
    Audit,
    /// Evaluate I(λ) at one λ with every configured method.
    Evaluate {
        /// Defaults to the start of the λ grid.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Decay sweep over the λ grid with fits and bound ratios.
    Sweep,
    /// |I| against t for the dispersive family.
    Dispersive,
    /// Compare (λ, Φ) with (tλ, Φ/t).
    RescaleCheck,
    /// Structural ratios of the integration-by-parts lemmas and the local
    /// injectivity check on the partition.
    VerifyLemmas,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Audit => "audit",
            Command::Evaluate { .. } => "evaluate",
            Command::Sweep => "sweep",
            Command::Dispersive => "dispersive",
            Command::RescaleCheck => "rescale-check",
            Command::VerifyLemmas => "verify-lemmas",
        }
    }
}

struct Context {
    config: ExperimentConfig,
    out: PathBuf,
    provenance: Vec<(String, String)>,
    phase: PhaseModel,
    symbol: SymbolModel,
}

impl Context {
    fn write(&self, file: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        write_table_file(&self.out.join(file), &self.provenance, header, rows)
    }

    fn audit(&self) -> Result<HypothesisReport> {
        audit(&self.phase, &self.symbol, &self.config.audit_options())
    }
}

/// Runs one command and returns the process exit status.
pub fn run(cli: Cli) -> Result<i32> {
    if let Some(n) = cli.threads {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("statphase-out"));
    std::fs::create_dir_all(&out)?;
    let provenance = vec![
        ("tool".to_string(), format!("statphase {}", env!("CARGO_PKG_VERSION"))),
        ("command".to_string(), cli.command.name().to_string()),
        ("seed".to_string(), config.seed.to_string()),
        ("config".to_string(), config.echo()),
    ];
    let ctx = Context {
        phase: config.phase()?,
        symbol: config.symbol()?,
        config,
        out,
        provenance,
    };
    match &cli.command {
        Command::Audit => cmd_audit(&ctx),
        Command::Evaluate { lambda } => cmd_evaluate(&ctx, *lambda, cli.force),
        Command::Sweep => cmd_sweep(&ctx, cli.force),
        Command::Dispersive => cmd_dispersive(&ctx),
        Command::RescaleCheck => cmd_rescale(&ctx),
        Command::VerifyLemmas => cmd_lemmas(&ctx),
    }
}

fn cmd_audit(ctx: &Context) -> Result<i32> {
    let report = ctx.audit()?;
    let mut rows: Vec<Vec<String>> = report.rows().into_iter().map(|(k, v)| vec![k, fmt_f64(v)]).collect();
    rows.push(vec!["injective_verdict".into(), report.injective.as_str().into()]);
    ctx.write("audit.csv", &["quantity", "value"], &rows)?;
    print!("{}", report.to_key_value());
    if report.passed() {
        Ok(0)
    } else {
        eprintln!("audit failed: a0 = {} (degenerate Hessian determinant)", report.a0);
        Ok(EXIT_HYPOTHESIS)
    }
}

/// Audits, and refuses to continue on a failed audit unless forced.
fn gated_audit(ctx: &Context, force: bool) -> Result<Option<HypothesisReport>> {
    let report = ctx.audit()?;
    if !report.passed() && !force {
        eprintln!("audit failed (a0 = {}); rerun with --force to evaluate anyway", report.a0);
        return Ok(None);
    }
    Ok(Some(report))
}

fn partition_for(ctx: &Context, report: &HypothesisReport) -> Result<(PartitionOfUnity, String)> {
    ctx.config
        .partition(&ctx.symbol, report.a0, report.m_k(2), report.third_order_norm)
}

fn result_row(r: &OscillatoryIntegralResult, status: &str) -> Vec<String> {
    let mut row = r.csv_row();
    row.push(status.to_string());
    row.push(r.warnings.join("; "));
    row
}

fn failure_row(lambda: f64, method: Method, re: f64, im: f64, delta: f64, status: String) -> Vec<String> {
    vec![
        fmt_f64(lambda),
        method.as_str().into(),
        fmt_f64(re),
        fmt_f64(im),
        fmt_f64(re.hypot(im)),
        fmt_f64(delta),
        String::new(),
        String::new(),
        status,
        String::new(),
    ]
}

fn cmd_evaluate(ctx: &Context, lambda: Option<f64>, force: bool) -> Result<i32> {
    let lambda = lambda.unwrap_or(ctx.config.lambda.start);
    if !(lambda >= 1.0) {
        return Err(Error::Config(format!("λ = {lambda} is below 1")));
    }
    let Some(report) = gated_audit(ctx, force)? else {
        return Ok(EXIT_HYPOTHESIS);
    };
    let mut header: Vec<&str> = OscillatoryIntegralResult::csv_header().to_vec();
    header.extend(["status", "warnings"]);
    let mut rows = Vec::new();
    for &method in &ctx.config.methods {
        let outcome = match method {
            Method::Oracle => oracle_integral(&ctx.phase, &ctx.symbol, lambda, &ctx.config.quadrature),
            Method::Decomposition => partition_for(ctx, &report).and_then(|(pou, note)| {
                let mut r = decomposition_integral(
                    &ctx.phase,
                    &ctx.symbol,
                    lambda,
                    &pou,
                    report.a0,
                    &ctx.config.decomposition_options(),
                )?;
                r.warnings.push(format!("partition {note}"));
                Ok(r)
            }),
        };
        match outcome {
            Ok(r) => {
                println!("{} λ={} I={}{:+}i |I|={}", method.as_str(), lambda, r.value.re, r.value.im, r.abs());
                if method == Method::Decomposition {
                    let mut buf = Vec::new();
                    r.write_pieces_csv(&mut buf)?;
                    std::fs::write(ctx.out.join("pieces.csv"), buf)?;
                }
                rows.push(result_row(&r, "ok"));
            }
            Err(Error::Accuracy { best_re, best_im, delta }) => {
                rows.push(failure_row(lambda, method, best_re, best_im, delta, "accuracy_failure".into()));
            }
            Err(e) => rows.push(failure_row(lambda, method, f64::NAN, f64::NAN, f64::NAN, format!("error: {e}"))),
        }
    }
    ctx.write("evaluate.csv", &header, &rows)?;
    Ok(0)
}

/// Constant `C` making the formula exact for the identity quadratic on the
/// same domain and symbol at the calibration λ.
fn calibrated_c(ctx: &Context, variant: BoundVariant) -> Result<(f64, String)> {
    if let Some(c) = ctx.config.overrides.calibration_c {
        return Ok((c, "configured".into()));
    }
    let lambda = ctx.config.overrides.calibration_lambda.unwrap_or(1024.0);
    let d = ctx.phase.dim();
    let reference = families::quadratic(nalgebra::DMatrix::identity(d, d), ctx.phase.domain().clone())?;
    let report = audit(&reference, &ctx.symbol, &ctx.config.audit_options())?;
    let value = oracle_integral(&reference, &ctx.symbol, lambda, &ctx.config.quadrature)?;
    let formula = BoundFormula::from_report(&report, variant, 1.0);
    Ok((calibrate(&formula, value.abs(), lambda), format!("identity quadratic at lambda={lambda}")))
}

fn cmd_sweep(ctx: &Context, force: bool) -> Result<i32> {
    let Some(report) = gated_audit(ctx, force)? else {
        return Ok(EXIT_HYPOTHESIS);
    };
    let variant = ctx.config.overrides.variant.unwrap_or(if report.injective == Verdict::Verified {
        BoundVariant::Thm2
    } else {
        BoundVariant::Thm1
    });
    let (c, how) = calibrated_c(ctx, variant)?;
    let formula = BoundFormula::from_report(&report, variant, c);
    let lambdas = ctx.config.lambda.points();
    let partition = if ctx.config.methods.contains(&Method::Decomposition) {
        Some(partition_for(ctx, &report)?.0)
    } else {
        None
    };
    let mut sweep_rows = Vec::new();
    let mut fit_rows = Vec::new();
    let mut ratio_rows = Vec::new();
    for &method in &ctx.config.methods {
        let m = match method {
            Method::Oracle => SweepMethod::Oracle(ctx.config.quadrature.clone()),
            Method::Decomposition => SweepMethod::Decomposition {
                partition: partition.as_ref().expect("partition built for decomposition"),
                a0: report.a0,
                options: ctx.config.decomposition_options(),
            },
        };
        let s = decay_sweep(&ctx.phase, &ctx.symbol, &lambdas, &m, &ctx.config.sweep)?;
        for p in &s.points {
            let bound = formula.eval(p.lambda);
            sweep_rows.push(vec![
                fmt_f64(p.lambda),
                method.as_str().into(),
                fmt_f64(p.value.re),
                fmt_f64(p.value.im),
                fmt_f64(p.abs()),
                fmt_f64(bound),
                fmt_f64(p.abs() / bound),
                p.failed.to_string(),
            ]);
        }
        match &s.raw_fit {
            Some(f) => {
                println!("{} slope {} (residual {})", method.as_str(), f.slope, f.residual);
                fit_rows.push(vec![
                    method.as_str().into(),
                    fmt_f64(f.slope),
                    fmt_f64(f.intercept),
                    fmt_f64(f.residual),
                    f.points.to_string(),
                    s.fit.is_some().to_string(),
                ]);
            }
            None => fit_rows.push(vec![method.as_str().into(), String::new(), String::new(), String::new(), "0".into(), "false".into()]),
        }
        let r = bound_ratio_report(&s, &formula);
        ratio_rows.push(vec![
            method.as_str().into(),
            variant.as_str().into(),
            fmt_f64(c),
            how.clone(),
            fmt_f64(r.prefactor),
            fmt_f64(r.plateau),
            fmt_f64(r.ratio),
            r.exceeds.to_string(),
        ]);
    }
    ctx.write(
        "sweep.csv",
        &["lambda", "method", "re", "im", "abs", "bound", "ratio", "failed"],
        &sweep_rows,
    )?;
    ctx.write("fit.csv", &["method", "slope", "intercept", "residual", "points", "accepted"], &fit_rows)?;
    ctx.write(
        "bound_ratio.csv",
        &["method", "variant", "C", "calibration", "prefactor", "plateau", "ratio", "exceeds"],
        &ratio_rows,
    )?;
    Ok(0)
}

fn cmd_dispersive(ctx: &Context) -> Result<i32> {
    let spec = ctx
        .config
        .dispersive
        .as_ref()
        .ok_or_else(|| Error::Config("the dispersive command needs a `dispersive` section".into()))?;
    let setup = DispersiveSetup {
        theta: spec.theta,
        x: spec.x.clone(),
        y: spec.y.clone(),
        lambda: spec.lambda,
        t: spec.t.points(),
        fit_min_t: spec.fit_min_t,
    };
    let r = dispersive_experiment(&setup, ctx.phase.domain(), &ctx.symbol, &ctx.config.quadrature)?;
    let rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|row| {
            vec![
                fmt_f64(row.t),
                fmt_f64(row.lambda),
                fmt_f64(row.abs),
                fmt_f64(row.envelope),
                row.in_regime.to_string(),
            ]
        })
        .collect();
    ctx.write("dispersive.csv", &["t", "lambda", "abs", "envelope", "in_regime"], &rows)?;
    let fit = match &r.fit {
        Some(f) => {
            println!("slope {} (residual {})", f.slope, f.residual);
            vec![vec![fmt_f64(f.slope), fmt_f64(f.intercept), fmt_f64(f.residual), f.points.to_string()]]
        }
        None => Vec::new(),
    };
    ctx.write("dispersive_fit.csv", &["slope", "intercept", "residual", "points"], &fit)?;
    Ok(0)
}

fn cmd_rescale(ctx: &Context) -> Result<i32> {
    let spec = &ctx.config.rescale;
    let mut rows = Vec::new();
    for &t in &spec.t {
        let r = rescaling_check(
            &ctx.phase,
            &ctx.symbol,
            spec.lambda,
            t,
            &ctx.config.audit_options(),
            &ctx.config.quadrature,
        )?;
        println!("t={} discrepancy {}", t, r.discrepancy);
        rows.push(vec![
            fmt_f64(r.t),
            fmt_f64(r.lambda),
            fmt_f64(r.discrepancy),
            fmt_f64(r.m_error),
            fmt_f64(r.a0_error),
            fmt_f64(r.algebra_error),
        ]);
    }
    ctx.write(
        "rescale.csv",
        &["t", "lambda", "discrepancy", "m_error", "a0_error", "algebra_error"],
        &rows,
    )?;
    Ok(0)
}

fn cmd_lemmas(ctx: &Context) -> Result<i32> {
    let spec = &ctx.config.lemmas;
    let d = ctx.phase.dim();
    let region = match &spec.region {
        Some(r) => r.to_box()?,
        None => ctx.symbol.support().clone(),
    };
    let n = spec.order.unwrap_or(d + 1);
    let lemma = verify_coefficient_bounds(
        &ctx.phase,
        &region,
        n,
        spec.max_order,
        spec.beta_max,
        spec.samples,
        ctx.config.seed,
    )?;
    let mut rows = Vec::new();
    for (k, v) in &lemma.est_ai {
        rows.push(vec!["A_i".into(), String::new(), k.to_string(), String::new(), fmt_f64(*v)]);
    }
    for (k, v) in &lemma.est_nablaphi {
        rows.push(vec!["grad_norm".into(), String::new(), k.to_string(), String::new(), fmt_f64(*v)]);
    }
    for (nn, a, b, v) in &lemma.ltranspose {
        rows.push(vec![
            "transpose_coefficients".into(),
            nn.to_string(),
            a.to_string(),
            b.to_string(),
            fmt_f64(*v),
        ]);
    }
    ctx.write("lemmas.csv", &["lemma", "N", "alpha_order", "beta_order", "max_ratio"], &rows)?;
    println!(
        "max ratios: A_i {} grad_norm {} transpose {}",
        lemma.max_est_ai(),
        lemma.max_est_nablaphi(),
        lemma.max_ltranspose()
    );

    let report = ctx.audit()?;
    if !report.passed() {
        eprintln!("audit failed (a0 = {}); local injectivity not checked", report.a0);
        return Ok(EXIT_HYPOTHESIS);
    }
    let (pou, note) = partition_for(ctx, &report)?;
    if let PartitionOfUnity::Lattice(cover) = &pou {
        let mut buf = Vec::new();
        cover.write_csv(&mut buf)?;
        std::fs::write(ctx.out.join("cover.csv"), buf)?;
    }
    let inj = check_local_injectivity(
        &ctx.phase,
        &pou,
        report.a0,
        report.m_k(2),
        report.c_d,
        spec.injectivity_pairs,
        ctx.config.seed,
    );
    println!("local injectivity: {} violations in {} pairs ({note})", inj.violations, inj.pairs);
    ctx.write(
        "injectivity.csv",
        &["partition", "pieces", "constant", "pairs", "violations", "min_ratio"],
        &[vec![
            note,
            pou.len().to_string(),
            fmt_f64(inj.constant),
            inj.pairs.to_string(),
            inj.violations.to_string(),
            fmt_f64(inj.min_ratio),
        ]],
    )?;
    Ok(0)
}

/// Entry point shared by the binary: parses `args`, runs, and maps errors
/// to exit status 1.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
