//! Command-line interface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::network::GtScan;
use crate::pipeline::{
    run_all, run_correlate, run_groups, run_netbuild, run_synth, run_track, ChainInput, GroupSelect, GtScanMode,
    PipelineConfig, Region,
};

#[derive(Debug, Parser)]
#[command(name = "stormnet", version, about = "Precipitation event tracking and event networks from radar stacks")]
pub struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Print the effective config as JSON and exit.
    #[arg(long, global = true)]
    pub config_dump: bool,

    #[command(flatten)]
    pub overrides: ConfigArgs,

    #[command(subcommand)]
    pub command: Option<Command>,
}

/// One flag per config field.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    #[arg(long, global = true)]
    pub dbz_min: Option<f64>,
    #[arg(long, global = true)]
    pub min_area_km2: Option<f64>,
    #[arg(long, global = true)]
    pub overlap_frac: Option<f64>,
    #[arg(long, global = true)]
    pub min_duration_min: Option<u64>,
    #[arg(long, global = true)]
    pub max_duration_min: Option<u64>,
    #[arg(long, global = true)]
    pub buffer_km: Option<f64>,
    #[arg(long, global = true)]
    pub max_lag_min: Option<u32>,
    #[arg(long, global = true)]
    pub min_overlap_points: Option<usize>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub r_cut: Option<f64>,
    #[arg(long, global = true)]
    pub d1_max_min: Option<f64>,
    #[arg(long, global = true)]
    pub d2_min_min: Option<f64>,
    /// Region of interest as `lat_min,lat_max,lon_min,lon_max`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub bbox: Option<Region>,
    /// `exact` or `quantile-<k>`.
    #[arg(long, global = true)]
    pub gt_scan: Option<GtScan>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

impl ConfigArgs {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        set!(
            dbz_min,
            min_area_km2,
            overlap_frac,
            min_duration_min,
            max_duration_min,
            buffer_km,
            max_lag_min,
            min_overlap_points,
            alpha,
            r_cut,
            d1_max_min,
            d2_min_min
        );
        if self.bbox.is_some() {
            cfg.bbox = self.bbox;
        }
        if let Some(scan) = self.gt_scan {
            cfg.gt_scan = GtScanMode(scan);
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic stack from a storm scenario.
    Synth {
        #[arg(long, value_name = "FILE")]
        spec: PathBuf,
        /// Output manifest; the data file goes next to it.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Segment, track and filter events.
    Track {
        #[arg(long, value_name = "FILE")]
        stack: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Build one network per event and write the metrics table.
    Netbuild {
        #[arg(long, value_name = "FILE")]
        stack: PathBuf,
        #[arg(long, value_name = "FILE")]
        events: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Correlate meteo and network metrics into a bipartite graph.
    Correlate {
        #[arg(long, value_name = "FILE")]
        metrics: PathBuf,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        /// all, d1 or d2
        #[arg(long, default_value = "all")]
        group: GroupSelect,
    },
    /// Compare short and long events with Mann-Whitney tests.
    Groups {
        #[arg(long, value_name = "FILE")]
        metrics: PathBuf,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Run every stage.
    All {
        #[arg(long, value_name = "FILE", conflicts_with = "stack", required_unless_present = "stack")]
        spec: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        stack: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
}

impl Cli {
    pub fn effective_config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        self.overrides.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs the parsed command, writing progress lines to stdout.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = cli.effective_config()?;
    if cli.config_dump {
        print!("{}", cfg.to_pretty_json());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::Invalid("no command given (see --help)".into()));
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    pool.install(|| match command {
        Command::Synth { spec, out } => {
            let stack = run_synth(&spec, &out)?;
            println!("frames: {}", stack.nt());
            Ok(())
        }
        Command::Track { stack, out } => {
            println!("events: {}", run_track(&stack, &cfg, &out)?);
            Ok(())
        }
        Command::Netbuild { stack, events, out } => {
            println!("rows: {}", run_netbuild(&stack, &events, &cfg, &out)?);
            Ok(())
        }
        Command::Correlate { metrics, out_dir, group } => {
            println!("edges: {}", run_correlate(&metrics, &cfg, group, &out_dir)?);
            Ok(())
        }
        Command::Groups { metrics, out_dir } => {
            let (d1, d2) = run_groups(&metrics, &cfg, &out_dir)?;
            println!("d1: {d1}\nd2: {d2}");
            Ok(())
        }
        Command::All { spec, stack, out_dir } => {
            let input = match (spec, stack) {
                (Some(spec), _) => ChainInput::Scenario(spec),
                (None, Some(stack)) => ChainInput::Stack(stack),
                (None, None) => unreachable!("clap requires one input"),
            };
            run_all(&input, &cfg, &out_dir)
        }
    })
}
