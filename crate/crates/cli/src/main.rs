use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use chrono::{NaiveDate, NaiveTime};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use flexcast::bau_scheduler::{schedule_bau, schedule_cost, BauError, BauKind, BauStrategy, Schedule};
use flexcast::flex_products::{product_program, solve_product, Accounting, FlexError, FlexOptions, FlexRequest, Product};
use flexcast::grid_data::{self, ParseError};
use flexcast::metrics::{daily_peak_by_hour, hourly_avg_cost, write_peaks_csv};
use flexcast::signals::{self, Signal, SignalError, SignalKind, SignalSeries};
use flexcast::sweep_harness::{self, CategorySel, ResultTable, SweepConfig, SweepError, SweepInputs, TableError};
use flexcast::synth_fleet::{self, SignalSpec, SpecError};

#[derive(Parser)]
#[command(name = "flexcast", version, about = "EV fleet congestion flexibility under lead-time constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProductArg {
    Redispatch,
    Caplimit,
}

impl From<ProductArg> for Product {
    fn from(p: ProductArg) -> Self {
        match p {
            ProductArg::Redispatch => Product::Redispatch,
            ProductArg::Caplimit => Product::CapacityLimitation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BauArg {
    Cost,
    Mef,
    Unopt,
}

impl From<BauArg> for BauKind {
    fn from(b: BauArg) -> Self {
        match b {
            BauArg::Cost => BauKind::Cost,
            BauArg::Mef => BauKind::Mef,
            BauArg::Unopt => BauKind::Unopt,
        }
    }
}

/// Inputs describing one sample day.
#[derive(clap::Args)]
struct DayArgs {
    /// Transaction CSV.
    #[arg(long)]
    transactions: PathBuf,
    /// Sample date (YYYY-MM-DD).
    #[arg(long)]
    date: NaiveDate,
    /// Day-ahead price CSV (timestamp,value).
    #[arg(long)]
    prices: Option<PathBuf>,
    /// Marginal emission factor CSV (timestamp,value).
    #[arg(long)]
    mef: Option<PathBuf>,
    #[arg(long, value_enum)]
    bau: BauArg,
    /// Bidirectional charging bounds.
    #[arg(long)]
    v2g: bool,
    /// residential, commercial, shared or all.
    #[arg(long, default_value = "all")]
    category: CategorySel,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured sweep and write the result CSV plus metadata sidecar.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `parallelism` from the config.
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Compute the BAU schedule of one sample day.
    Bau {
        #[command(flatten)]
        day: DayArgs,
        /// Schedule CSV (transaction_id,step,power_kw); stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one flexibility product on top of the BAU schedule.
    Flex {
        #[command(flatten)]
        day: DayArgs,
        #[arg(long, value_enum)]
        product: ProductArg,
        #[arg(long)]
        lead_h: f64,
        /// Day-local HH:MM.
        #[arg(long)]
        window_start: String,
        #[arg(long)]
        window_len_h: f64,
        /// Adjusted schedule CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the product LP in CPLEX LP format.
        #[arg(long)]
        dump_lp: Option<PathBuf>,
    },
    /// Generate synthetic transactions from a fleet spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed of every fleet in the spec.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate synthetic hourly price and MEF series.
    SynthSignal {
        #[arg(long)]
        start: NaiveDate,
        #[arg(long)]
        end: NaiveDate,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        mef: PathBuf,
    },
    /// Summarize a sweep result CSV.
    Summarize {
        #[arg(long)]
        results: PathBuf,
        /// Comma-separated grouping columns.
        #[arg(long, value_delimiter = ',', default_value = "bau,product,lead_h")]
        group_by: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hourly average cost and daily peaks of BAU schedules over a date range.
    Report {
        #[arg(long)]
        transactions: PathBuf,
        #[arg(long)]
        prices: Option<PathBuf>,
        #[arg(long)]
        mef: Option<PathBuf>,
        #[arg(long)]
        start: NaiveDate,
        #[arg(long)]
        end: NaiveDate,
        #[arg(long, value_enum)]
        bau: BauArg,
        #[arg(long)]
        v2g: bool,
        #[arg(long, default_value = "all")]
        category: CategorySel,
        /// hour,value CSV of average price per kWh.
        #[arg(long)]
        hourly_out: PathBuf,
        /// date,peak_kw,hour CSV.
        #[arg(long)]
        peaks_out: PathBuf,
    },
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("cannot open {}", path.display()))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn read_series(path: &Option<PathBuf>, kind: SignalKind) -> Result<Option<SignalSeries>> {
    path.as_ref()
        .map(|p| signals::parse_signal_series(open(p)?, kind).with_context(|| format!("reading {}", p.display())))
        .transpose()
}

fn load_inputs(transactions: &Path, prices: &Option<PathBuf>, mef: &Option<PathBuf>) -> Result<SweepInputs> {
    let raws = grid_data::parse_transactions(open(transactions)?)
        .with_context(|| format!("reading {}", transactions.display()))?;
    Ok(SweepInputs::new(raws, read_series(prices, SignalKind::DayAheadPrice)?, read_series(mef, SignalKind::Mef)?))
}

struct Day {
    fleet: grid_data::SampledFleet,
    prices: Option<Signal>,
    mef: Option<Signal>,
    bau: Schedule,
}

fn bau_day(inputs: &SweepInputs, date: NaiveDate, kind: BauKind, v2g: bool, category: CategorySel) -> Result<Day> {
    let fleet = inputs.fleet(date, category, v2g);
    let (prices, mef) = inputs.signals(date)?;
    let strategy = BauStrategy::from_kind(kind, prices.as_ref(), mef.as_ref())?;
    let bau = schedule_bau(&fleet.transactions, &fleet.grid, &strategy)?;
    Ok(Day { fleet, prices, mef, bau })
}

fn cmd_sweep(config: &Path, out: Option<PathBuf>, parallelism: Option<usize>) -> Result<()> {
    let mut config = SweepConfig::load(config)?;
    if let Some(p) = parallelism {
        config.parallelism = p;
    }
    let out = out
        .or_else(|| config.output.as_ref().map(|p| config.resolve(p)))
        .ok_or_else(|| anyhow!("no output path: pass --out or set `output` in the config"))?;
    config.validate()?;
    let table = sweep_harness::run_sweep(&config)?;
    let meta = sweep_harness::write_outputs(&config, &table, &out)?;
    println!("{}", serde_json::to_string(&meta)?);
    Ok(())
}

fn cmd_bau(day: DayArgs, out: Option<PathBuf>) -> Result<()> {
    let inputs = load_inputs(&day.transactions, &day.prices, &day.mef)?;
    let d = bau_day(&inputs, day.date, day.bau.into(), day.v2g, day.category)?;
    match &out {
        Some(p) => d.bau.write_csv(create(p)?)?,
        None => d.bau.write_csv(io::stdout().lock())?,
    }
    let summary = json!({
        "date": day.date.to_string(),
        "bau": BauKind::from(day.bau).as_str(),
        "v2g": day.v2g,
        "transactions": d.fleet.transactions.len(),
        "excluded": d.fleet.excluded.len(),
        "cost_eur": d.prices.as_ref().map(|s| schedule_cost(&d.bau, s)),
        "emissions_kg": d.mef.as_ref().map(|s| schedule_cost(&d.bau, s)),
    });
    if out.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_flex(
    day: DayArgs,
    product: Product,
    lead_h: f64,
    window_start: &str,
    window_len_h: f64,
    out: Option<PathBuf>,
    dump_lp: Option<PathBuf>,
) -> Result<()> {
    let start = NaiveTime::parse_from_str(window_start, "%H:%M")
        .with_context(|| format!("window start `{window_start}` is not HH:MM"))?;
    let inputs = load_inputs(&day.transactions, &day.prices, &day.mef)?;
    let d = bau_day(&inputs, day.date, day.bau.into(), day.v2g, day.category)?;
    let request = FlexRequest::at_clock(product, start, window_len_h, lead_h, day.v2g, &d.fleet.grid)?;
    if let Some(p) = &dump_lp {
        let program = product_program(&d.bau, &d.fleet.transactions, &request, FlexOptions::default())?;
        let mut w = create(p)?;
        program.lp.write_lp(&mut w)?;
        w.flush()?;
    }
    let accounting = Accounting { prices: d.prices.as_ref(), mef: d.mef.as_ref() };
    let result = solve_product(&d.bau, &d.fleet.transactions, &request, accounting, FlexOptions::default())?;
    if let Some(p) = &out {
        result.adjusted_schedule.write_csv(create(p)?)?;
    }
    println!(
        "{}",
        json!({
            "date": day.date.to_string(),
            "product": product.as_str(),
            "bau": BauKind::from(day.bau).as_str(),
            "v2g": day.v2g,
            "window_start": window_start,
            "window_len": window_len_h,
            "lead_h": lead_h,
            "magnitude_kw": result.magnitude_kw,
            "cost_delta": result.cost_delta,
            "emission_delta": result.emission_delta,
            "status": result.status.as_str(),
            "freeze_step": result.freeze_step,
            "secondary_ratio": result.secondary_ratio,
            "transactions": d.fleet.transactions.len(),
        })
    );
    Ok(())
}

fn cmd_synth(spec: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut specs = synth_fleet::load_fleet_specs(spec)?;
    if let Some(seed) = seed {
        specs.iter_mut().for_each(|s| s.seed = seed);
    }
    let sessions = synth_fleet::generate_all(&specs);
    let mut w = create(out)?;
    grid_data::write_transactions(&mut w, &sessions)?;
    w.flush()?;
    println!("{}", json!({ "sessions": sessions.len(), "out": out.display().to_string() }));
    Ok(())
}

fn cmd_synth_signal(start: NaiveDate, end: NaiveDate, seed: u64, prices: &Path, mef: &Path) -> Result<()> {
    if end < start {
        bail!("end {end} precedes start {start}");
    }
    let (p, m) = synth_fleet::generate_signals(start, end, &SignalSpec { seed, ..SignalSpec::default() })?;
    signals::write_signal_series(create(prices)?, &p)?;
    signals::write_signal_series(create(mef)?, &m)?;
    println!("{}", json!({ "points": p.points().len() }));
    Ok(())
}

fn cmd_summarize(results: &Path, group_by: &[String], out: Option<PathBuf>) -> Result<()> {
    let table = ResultTable::read_csv(open(results)?).with_context(|| format!("reading {}", results.display()))?;
    let keys: Vec<&str> = group_by.iter().map(String::as_str).filter(|s| !s.is_empty()).collect();
    let rows = sweep_harness::summarize(&table, &keys)?;
    match out {
        Some(p) => sweep_harness::write_summary_csv(create(&p)?, &keys, &rows)?,
        None => sweep_harness::write_summary_csv(io::stdout().lock(), &keys, &rows)?,
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_report(
    transactions: &Path,
    prices: &Option<PathBuf>,
    mef: &Option<PathBuf>,
    start: NaiveDate,
    end: NaiveDate,
    kind: BauKind,
    v2g: bool,
    category: CategorySel,
    hourly_out: &Path,
    peaks_out: &Path,
) -> Result<()> {
    if end < start {
        bail!("end {end} precedes start {start}");
    }
    if prices.is_none() {
        bail!("report needs --prices for the hourly cost table");
    }
    let inputs = load_inputs(transactions, prices, mef)?;
    let days: Vec<Day> = start
        .iter_days()
        .take_while(|d| *d <= end)
        .map(|date| bau_day(&inputs, date, kind, v2g, category).with_context(|| format!("BAU for {date}")))
        .collect::<Result<_>>()?;
    let table = hourly_avg_cost(days.iter().map(|d| (&d.bau, d.prices.as_ref().expect("prices checked"))));
    table.write_csv(create(hourly_out)?)?;
    let schedules: Vec<&Schedule> = days.iter().map(|d| &d.bau).collect();
    write_peaks_csv(create(peaks_out)?, &daily_peak_by_hour(&schedules))?;
    println!("{}", json!({ "days": days.len(), "populated_hours": table.0.len() }));
    Ok(())
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<SweepError>() {
            return match e {
                SweepError::Config(_) | SweepError::Toml(_) => "config",
                SweepError::Output { .. } => "output",
                _ => "input",
            };
        }
        if cause.is::<FlexError>() {
            return "flex";
        }
        if cause.is::<BauError>() {
            return "bau";
        }
        if cause.is::<ParseError>() || cause.is::<SignalError>() || cause.is::<TableError>() || cause.is::<io::Error>() {
            return "input";
        }
        if cause.is::<SpecError>() {
            return "config";
        }
    }
    "error"
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sweep { config, out, parallelism } => cmd_sweep(&config, out, parallelism),
        Command::Bau { day, out } => cmd_bau(day, out),
        Command::Flex { day, product, lead_h, window_start, window_len_h, out, dump_lp } => {
            cmd_flex(day, product.into(), lead_h, &window_start, window_len_h, out, dump_lp)
        }
        Command::Synth { spec, out, seed } => cmd_synth(&spec, &out, seed),
        Command::SynthSignal { start, end, seed, prices, mef } => cmd_synth_signal(start, end, seed, &prices, &mef),
        Command::Summarize { results, group_by, out } => cmd_summarize(&results, &group_by, out),
        Command::Report { transactions, prices, mef, start, end, bau, v2g, category, hourly_out, peaks_out } => {
            cmd_report(&transactions, &prices, &mef, start, end, bau.into(), v2g, category, &hourly_out, &peaks_out)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("FLEXCAST_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(io::stderr)
        .init();

    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let body = json!({ "error": error_kind(&err), "message": format!("{err:#}") });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
