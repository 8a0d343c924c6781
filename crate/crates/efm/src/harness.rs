//! Experiment runner: executes repeated simulation runs over parameter
//! sweeps, aggregates per-mechanism loss estimates with 99% confidence
//! intervals, and writes CSV results plus a run manifest.

use std::fs;
use std::hash::{Hash, Hasher};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::netsim::{
    gilbert_params_for, run as run_sim, Groundtruth, Link, LossModel, SimConfig, SimError,
    Topology, TrafficKind, MS,
};
use crate::observer::{DirectionObserver, Mechanism};
use crate::trace::{Direction, TraceRecord, DEFAULT_PACKET_SIZE};
use crate::traffic::{CbrConfig, DownloadConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("could not read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("could not parse config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Trace(#[from] crate::trace::ParseError),
    #[error("all {0} runs of a parameter point failed")]
    AllRunsFailed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    RandomLoss,
    BurstLoss,
    FlowLength,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    /// One-way delay of each of the four links, in milliseconds.
    #[serde(default = "default_link_delay_ms")]
    pub link_delay_ms: f64,
}

fn default_link_delay_ms() -> f64 {
    10.0
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            link_delay_ms: default_link_delay_ms(),
        }
    }
}

impl TopologyConfig {
    fn build(&self) -> Topology {
        let d = (self.link_delay_ms * MS as f64) as u64;
        Topology {
            up1_ns: d,
            up2_ns: d,
            down1_ns: d,
            down2_ns: d,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    #[serde(default = "default_traffic_kind")]
    pub kind: String, // "cbr" or "download"
    #[serde(default = "default_rate_pps")]
    pub rate_pps: u64,
    #[serde(default = "default_total_packets")]
    pub total_packets: u64,
    #[serde(default = "default_packet_size")]
    pub packet_size: u32,
    #[serde(default = "default_ack_ratio")]
    pub ack_ratio: u32,
    /// Download volume in bytes; flow_length sweeps override this per point.
    #[serde(default = "default_volume_bytes")]
    pub volume_bytes: u64,
}

fn default_traffic_kind() -> String {
    "cbr".into()
}
fn default_rate_pps() -> u64 {
    10_000
}
fn default_total_packets() -> u64 {
    1_000_000
}
fn default_packet_size() -> u32 {
    DEFAULT_PACKET_SIZE
}
fn default_ack_ratio() -> u32 {
    2
}
fn default_volume_bytes() -> u64 {
    50_000
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            kind: default_traffic_kind(),
            rate_pps: default_rate_pps(),
            total_packets: default_total_packets(),
            packet_size: default_packet_size(),
            ack_ratio: default_ack_ratio(),
            volume_bytes: default_volume_bytes(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// random_loss: list of uniform loss rates to sweep.
    pub rates: Option<Vec<f64>>,
    /// burst_loss: fixed stationary loss rate for the Gilbert sweep.
    pub target_loss: Option<f64>,
    /// burst_loss: mean burst sizes to sweep.
    pub burst_sizes: Option<Vec<f64>>,
    /// flow_length: fixed loss rate applied to every volume.
    pub rate: Option<f64>,
    /// flow_length: optional mean burst; > 1 switches to the Gilbert model.
    pub mean_burst: Option<f64>,
    /// flow_length: download volumes in kB to sweep.
    pub volumes_kb: Option<Vec<u64>>,
}

/// Schema of the TOML experiment config; every field beyond `scenario` has a
/// default. See the README for the documented schema.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default = "default_base_seed")]
    pub base_seed: u64,
    #[serde(default)]
    pub topology: TopologyConfig,
    #[serde(default)]
    pub traffic: TrafficConfig,
    #[serde(default)]
    pub loss: LossConfig,
}

fn default_repetitions() -> u32 {
    30
}
fn default_base_seed() -> u64 {
    1
}

pub const DEFAULT_BURST_SIZES: [f64; 4] = [2.0, 4.0, 8.0, 16.0];
pub const DEFAULT_VOLUMES_KB: [u64; 4] = [50, 500, 5_000, 50_000];
pub const DEFAULT_RANDOM_RATES: [f64; 4] = [0.0001, 0.001, 0.01, 0.1];

/// One point of a sweep: a label plus the fully resolved simulation config
/// (modulo seed).
#[derive(Debug, Clone)]
pub struct ParamPoint {
    pub label: String,
    pub loss: LossModel,
    pub traffic: TrafficKind,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.repetitions < 1 {
            return Err(HarnessError::Config("repetitions must be >= 1".into()));
        }
        match self.traffic.kind.as_str() {
            "cbr" | "download" => {}
            other => {
                return Err(HarnessError::Config(format!(
                    "traffic.kind must be \"cbr\" or \"download\", got {other:?}"
                )))
            }
        }
        for rate in self.loss.rates.iter().flatten() {
            if !(0.0..1.0).contains(rate) {
                return Err(HarnessError::Config(format!(
                    "loss rate {rate} out of [0, 1)"
                )));
            }
        }
        self.points().map(|_| ())
    }

    fn base_traffic(&self) -> TrafficKind {
        match self.traffic.kind.as_str() {
            "download" => TrafficKind::Download(DownloadConfig {
                volume_bytes: self.traffic.volume_bytes,
                packet_size: self.traffic.packet_size,
                ack_ratio: self.traffic.ack_ratio,
                ack_size: 60,
            }),
            _ => TrafficKind::Cbr(CbrConfig {
                rate_pps: self.traffic.rate_pps,
                total_packets: self.traffic.total_packets,
                packet_size: self.traffic.packet_size,
            }),
        }
    }

    /// Expands the scenario into its parameter points.
    pub fn points(&self) -> Result<Vec<ParamPoint>, HarnessError> {
        let traffic = self.base_traffic();
        let points = match self.scenario {
            Scenario::RandomLoss => {
                let rates = self
                    .loss
                    .rates
                    .clone()
                    .unwrap_or_else(|| DEFAULT_RANDOM_RATES.to_vec());
                rates
                    .into_iter()
                    .map(|p| ParamPoint {
                        label: format!("rate-{p}"),
                        loss: if p > 0.0 {
                            LossModel::Random { p }
                        } else {
                            LossModel::None
                        },
                        traffic: traffic.clone(),
                    })
                    .collect()
            }
            Scenario::BurstLoss => {
                let target = self.loss.target_loss.unwrap_or(0.01);
                if !(0.0 < target && target < 1.0) {
                    return Err(HarnessError::Config(format!(
                        "target_loss {target} out of (0, 1)"
                    )));
                }
                let bursts = self
                    .loss
                    .burst_sizes
                    .clone()
                    .unwrap_or_else(|| DEFAULT_BURST_SIZES.to_vec());
                bursts
                    .into_iter()
                    .map(|b| {
                        let params = gilbert_params_for(target, b)
                            .map_err(|e| HarnessError::Config(e.to_string()))?;
                        Ok(ParamPoint {
                            label: format!("burst-{b}"),
                            loss: LossModel::Gilbert {
                                p: params.p,
                                r: params.r,
                            },
                            traffic: traffic.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>, HarnessError>>()?
            }
            Scenario::FlowLength => {
                let rate = self.loss.rate.unwrap_or(0.01);
                let loss = match self.loss.mean_burst {
                    Some(b) if b > 1.0 => {
                        let params = gilbert_params_for(rate, b)
                            .map_err(|e| HarnessError::Config(e.to_string()))?;
                        LossModel::Gilbert {
                            p: params.p,
                            r: params.r,
                        }
                    }
                    _ if rate > 0.0 => LossModel::Random { p: rate },
                    _ => LossModel::None,
                };
                let volumes = self
                    .loss
                    .volumes_kb
                    .clone()
                    .unwrap_or_else(|| DEFAULT_VOLUMES_KB.to_vec());
                volumes
                    .into_iter()
                    .map(|kb| {
                        let mut traffic = match &traffic {
                            TrafficKind::Download(d) => d.clone(),
                            TrafficKind::Cbr(c) => DownloadConfig {
                                volume_bytes: 0,
                                packet_size: c.packet_size,
                                ack_ratio: self.traffic.ack_ratio,
                                ack_size: 60,
                            },
                        };
                        traffic.volume_bytes = kb * 1000;
                        ParamPoint {
                            label: format!("volume-{kb}kB"),
                            loss,
                            traffic: TrafficKind::Download(traffic),
                        }
                    })
                    .collect()
            }
        };
        Ok(points)
    }

    pub fn sim_config(&self, point: &ParamPoint, seed: u64) -> SimConfig {
        SimConfig {
            topology: self.topology.build(),
            loss: point.loss,
            arbiter_link: Link::Down1,
            traffic: point.traffic.clone(),
            seed,
            ..SimConfig::default()
        }
    }
}

/// Both per-direction observers for one flow.
#[derive(Debug)]
pub struct FlowObservers {
    pub c2s: DirectionObserver,
    pub s2c: DirectionObserver,
}

impl FlowObservers {
    pub fn new() -> Self {
        FlowObservers {
            c2s: DirectionObserver::new(
                Direction::ClientToServer,
                crate::observer::DEFAULT_PHASE_THRESHOLD,
                None,
            ),
            s2c: DirectionObserver::new(
                Direction::ServerToClient,
                crate::observer::DEFAULT_PHASE_THRESHOLD,
                None,
            ),
        }
    }

    pub fn ingest(&mut self, rec: &TraceRecord) {
        match rec.direction {
            Direction::ClientToServer => self.c2s.ingest(rec),
            Direction::ServerToClient => self.s2c.ingest(rec),
        }
    }

    pub fn ingest_all(&mut self, records: &[TraceRecord]) {
        for rec in records {
            self.ingest(rec);
        }
    }
}

impl Default for FlowObservers {
    fn default() -> Self {
        FlowObservers::new()
    }
}

/// Canonical CSV rendering of every decoder's cumulative report plus RTT
/// statistics. Replay of a trace must reproduce this byte-for-byte.
pub fn render_reports(obs: &FlowObservers) -> String {
    let mut out = String::from("direction,mechanism,report_time_ns,observed,lost,rate\n");
    for dir_obs in [&obs.c2s, &obs.s2c] {
        let dir = dir_obs.direction.as_str();
        for mechanism in Mechanism::ALL {
            match dir_obs.report(mechanism) {
                Some(rep) => out.push_str(&format!(
                    "{dir},{},{},{},{},{:.9}\n",
                    mechanism.as_str(),
                    rep.report_time,
                    rep.packets_observed,
                    rep.packets_lost_estimate,
                    rep.loss_rate_estimate
                )),
                None => out.push_str(&format!(
                    "{dir},{},,,,no_measurement\n",
                    mechanism.as_str()
                )),
            }
        }
        let median = dir_obs
            .spin
            .median_rtt()
            .map_or(String::new(), |r| r.to_string());
        out.push_str(&format!(
            "{dir},spin_rtt_median_ns,,{},,{}\n",
            dir_obs.spin.samples().len(),
            median
        ));
    }
    out
}

/// Everything produced by one simulation run.
#[derive(Debug)]
pub struct RunOutcome {
    pub run_index: u32,
    pub seed: u64,
    pub groundtruth: Groundtruth,
    pub observers: FlowObservers,
    pub trace: Vec<TraceRecord>,
    pub end_ns: u64,
}

/// Executes one run of a parameter point and feeds the trace through the
/// observers.
pub fn execute_run(
    cfg: &ExperimentConfig,
    point: &ParamPoint,
    run_index: u32,
) -> Result<RunOutcome, SimError> {
    let seed = cfg.base_seed + u64::from(run_index);
    let sim_cfg = cfg.sim_config(point, seed);
    let out = run_sim(&sim_cfg)?;
    let mut observers = FlowObservers::new();
    observers.ingest_all(&out.trace);
    Ok(RunOutcome {
        run_index,
        seed,
        groundtruth: out.groundtruth,
        observers,
        trace: out.trace,
        end_ns: out.end_ns,
    })
}

/// Sample mean and Student-t 99% confidence half-width. A single sample has
/// zero half-width by convention.
pub fn mean_ci99(samples: &[f64]) -> Option<(f64, f64)> {
    if samples.is_empty() {
        return None;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("valid dof")
        .inverse_cdf(0.995);
    Some((mean, t * sd / n.sqrt()))
}

/// Aggregate statistics of one parameter point.
#[derive(Debug, Clone)]
pub struct RunStats {
    pub label: String,
    /// Per mechanism, in Mechanism::ALL order: (samples, mean, ci99 half).
    pub mechanisms: [(usize, Option<(f64, f64)>); 4],
    pub groundtruth: (usize, Option<(f64, f64)>),
}

/// Aggregates the downstream (server-to-client) estimates across runs; the
/// loss arbiter sits on that direction.
pub fn aggregate(label: &str, outcomes: &[RunOutcome]) -> RunStats {
    let mut mechanisms = [(0usize, None); 4];
    for (slot, mechanism) in mechanisms.iter_mut().zip(Mechanism::ALL) {
        let samples: Vec<f64> = outcomes
            .iter()
            .filter_map(|o| o.observers.s2c.report(mechanism))
            .map(|r| r.loss_rate_estimate)
            .collect();
        *slot = (samples.len(), mean_ci99(&samples));
    }
    let gt: Vec<f64> = outcomes.iter().map(|o| o.groundtruth.loss_rate()).collect();
    RunStats {
        label: label.to_string(),
        mechanisms,
        groundtruth: (gt.len(), mean_ci99(&gt)),
    }
}

#[derive(Debug, Clone)]
pub struct RunnerOptions {
    pub out_dir: PathBuf,
    pub keep_traces: bool,
    /// Worker threads for repetitions; 1 = sequential.
    pub parallel: usize,
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn config_hash(cfg: &ExperimentConfig) -> u64 {
    let text = toml::to_string(cfg).expect("config serializes");
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    text.hash(&mut hasher);
    hasher.finish()
}

fn timecourse_csv(outcome: &RunOutcome) -> String {
    let gt_rate = outcome.groundtruth.loss_rate();
    let mut out =
        String::from("mechanism,report_time_ns,observed,lost,rate,groundtruth_rate\n");
    for mechanism in Mechanism::ALL {
        for row in outcome.observers.s2c.rows(mechanism) {
            out.push_str(&format!(
                "{},{},{},{},{:.9},{:.9}\n",
                mechanism.as_str(),
                row.time,
                row.observed,
                row.lost,
                row.rate,
                gt_rate
            ));
        }
    }
    out
}

/// Executes every point of the experiment and writes all result files.
/// Returns the aggregate statistics per point.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    opts: &RunnerOptions,
) -> Result<Vec<RunStats>, HarnessError> {
    let points = cfg.points()?;
    fs::create_dir_all(&opts.out_dir).map_err(|source| HarnessError::Io {
        path: opts.out_dir.clone(),
        source,
    })?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallel.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;

    let mut all_stats = Vec::new();
    let mut groundtruth_csv =
        String::from("point,run,seed,arbiter_in,arbiter_dropped,loss_rate\n");
    let mut failures: Vec<String> = Vec::new();

    for point in &points {
        let indices: Vec<u32> = (0..cfg.repetitions).collect();
        let results: Vec<(u32, Result<RunOutcome, SimError>)> = pool.install(|| {
            indices
                .par_iter()
                .map(|&i| (i, execute_run(cfg, point, i)))
                .collect()
        });

        let mut outcomes = Vec::new();
        for (i, res) in results {
            match res {
                Ok(o) => outcomes.push(o),
                Err(e) => failures.push(format!("{} run {i}: {e}", point.label)),
            }
        }
        if outcomes.is_empty() {
            return Err(HarnessError::AllRunsFailed(cfg.repetitions as usize));
        }
        outcomes.sort_by_key(|o| o.run_index);

        let point_dir = if points.len() == 1 {
            opts.out_dir.clone()
        } else {
            let d = opts.out_dir.join(&point.label);
            fs::create_dir_all(&d).map_err(|source| HarnessError::Io {
                path: d.clone(),
                source,
            })?;
            d
        };

        for outcome in &outcomes {
            groundtruth_csv.push_str(&format!(
                "{},{},{},{},{},{:.9}\n",
                point.label,
                outcome.run_index,
                outcome.seed,
                outcome.groundtruth.arbiter_in,
                outcome.groundtruth.arbiter_dropped,
                outcome.groundtruth.loss_rate()
            ));
            write_file(
                &point_dir.join(format!("timecourse-{}.csv", outcome.run_index)),
                &timecourse_csv(outcome),
            )?;
            write_file(
                &point_dir.join(format!("reports-{}.csv", outcome.run_index)),
                &render_reports(&outcome.observers),
            )?;
            if opts.keep_traces {
                let path = point_dir.join(format!("trace-{}.csv", outcome.run_index));
                let write = |p: &Path| -> std::io::Result<()> {
                    let file = fs::File::create(p)?;
                    crate::trace::write_trace(std::io::BufWriter::new(file), &outcome.trace)
                };
                write(&path).map_err(|source| HarnessError::Io {
                    path: path.clone(),
                    source,
                })?;
            }
        }
        all_stats.push(aggregate(&point.label, &outcomes));
    }

    let mut results_csv = String::from(
        "point,mechanism,samples,mean_rate,ci99_half,groundtruth_mean,groundtruth_ci99\n",
    );
    for stats in &all_stats {
        let (gt_mean, gt_ci) = stats.groundtruth.1.unwrap_or((f64::NAN, f64::NAN));
        for ((samples, agg), mechanism) in stats.mechanisms.iter().zip(Mechanism::ALL) {
            match agg {
                Some((mean, ci)) => results_csv.push_str(&format!(
                    "{},{},{samples},{mean:.9},{ci:.9},{gt_mean:.9},{gt_ci:.9}\n",
                    stats.label,
                    mechanism.as_str()
                )),
                None => results_csv.push_str(&format!(
                    "{},{},0,no_measurement,,{gt_mean:.9},{gt_ci:.9}\n",
                    stats.label,
                    mechanism.as_str()
                )),
            }
        }
    }
    write_file(&opts.out_dir.join("results.csv"), &results_csv)?;
    write_file(&opts.out_dir.join("groundtruth.csv"), &groundtruth_csv)?;

    let mut manifest = String::new();
    let _ = writeln!(manifest, "version = \"{}\"", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "config_hash = \"{:016x}\"", config_hash(cfg));
    let _ = writeln!(manifest, "base_seed = {}", cfg.base_seed);
    let _ = writeln!(manifest, "repetitions = {}", cfg.repetitions);
    let _ = writeln!(
        manifest,
        "points = [{}]",
        points
            .iter()
            .map(|p| format!("\"{}\"", p.label))
            .collect::<Vec<_>>()
            .join(", ")
    );
    if !failures.is_empty() {
        let _ = writeln!(
            manifest,
            "failed_runs = [{}]",
            failures
                .iter()
                .map(|f| format!("\"{f}\""))
                .collect::<Vec<_>>()
                .join(", ")
        );
        for failure in &failures {
            eprintln!("warning: excluded failed run: {failure}");
        }
    }
    write_file(&opts.out_dir.join("manifest.toml"), &manifest)?;
    Ok(all_stats)
}

/// Replays a trace file through the observers and renders the canonical
/// report CSV.
pub fn replay_trace(path: &Path) -> Result<String, HarnessError> {
    let file = fs::File::open(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let records =
        crate::trace::read_trace(std::io::BufReader::new(file)).map_err(|e| match e {
            crate::trace::TraceReadError::Io(source) => HarnessError::Io {
                path: path.to_path_buf(),
                source,
            },
            crate::trace::TraceReadError::Parse(p) => HarnessError::Trace(p),
        })?;
    let mut observers = FlowObservers::new();
    observers.ingest_all(&records);
    Ok(render_reports(&observers))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_of_identical_values_is_zero_width() {
        let samples = vec![0.01; 30];
        let (mean, half) = mean_ci99(&samples).unwrap();
        assert!((mean - 0.01).abs() < 1e-12);
        assert!(half < 1e-12);
    }

    #[test]
    fn ci_three_samples_matches_t_table() {
        // mean 2, sd 1, t(0.995, 2) = 9.925 -> half-width 9.925/sqrt(3).
        let (mean, half) = mean_ci99(&[1.0, 2.0, 3.0]).unwrap();
        assert!((mean - 2.0).abs() < 1e-12);
        assert!((half - 9.924843 / 3f64.sqrt()).abs() < 1e-3, "half {half}");
    }

    #[test]
    fn ci_thirty_samples_uses_t29() {
        // 29 zeros and one 30 -> mean 1, sd sqrt(30), t(0.995,29)=2.756.
        let mut samples = vec![0.0; 29];
        samples.push(30.0);
        let (mean, half) = mean_ci99(&samples).unwrap();
        let sd = (samples.iter().map(|x| (x - 1.0).powi(2)).sum::<f64>() / 29.0).sqrt();
        assert!((mean - 1.0).abs() < 1e-12);
        assert!((half - 2.756 * sd / 30f64.sqrt()).abs() < 1e-2, "half {half}");
    }

    #[test]
    fn ci_single_sample() {
        assert_eq!(mean_ci99(&[0.5]), Some((0.5, 0.0)));
        assert_eq!(mean_ci99(&[]), None);
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            scenario = "random_loss"
            repetitions = 3
            base_seed = 7
            [traffic]
            total_packets = 2000
            [loss]
            rates = [0.05]
            "#,
        )
        .unwrap();
        let point = &cfg.points().unwrap()[0];
        let mut outcomes: Vec<RunOutcome> = (0..3)
            .map(|i| execute_run(&cfg, point, i).unwrap())
            .collect();
        let a = aggregate("x", &outcomes);
        outcomes.reverse();
        let b = aggregate("x", &outcomes);
        for (sa, sb) in a.mechanisms.iter().zip(b.mechanisms.iter()) {
            assert_eq!(sa.0, sb.0);
            match (sa.1, sb.1) {
                (Some((ma, ca)), Some((mb, cb))) => {
                    assert!((ma - mb).abs() < 1e-12);
                    assert!((ca - cb).abs() < 1e-12);
                }
                (None, None) => {}
                other => panic!("mismatch {other:?}"),
            }
        }
    }

    #[test]
    fn config_defaults_and_points() {
        let cfg = ExperimentConfig::from_toml("scenario = \"burst_loss\"").unwrap();
        assert_eq!(cfg.repetitions, 30);
        let points = cfg.points().unwrap();
        assert_eq!(points.len(), 4);
        assert_eq!(points[0].label, "burst-2");
        match points[3].loss {
            LossModel::Gilbert { p, r } => {
                assert!((r - 1.0 / 16.0).abs() < 1e-12);
                assert!((p / (p + r) - 0.01).abs() < 1e-12);
            }
            other => panic!("expected Gilbert, got {other:?}"),
        }
    }

    #[test]
    fn flow_length_points_set_volume() {
        let cfg = ExperimentConfig::from_toml(
            "scenario = \"flow_length\"\n[traffic]\nkind = \"download\"",
        )
        .unwrap();
        let points = cfg.points().unwrap();
        assert_eq!(points.len(), 4);
        match &points[0].traffic {
            TrafficKind::Download(d) => assert_eq!(d.volume_bytes, 50_000),
            other => panic!("expected download, got {other:?}"),
        }
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("scenario = \"random_loss\"\nrepetitions = 0").is_err());
        assert!(ExperimentConfig::from_toml(
            "scenario = \"random_loss\"\n[loss]\nrates = [1.5]"
        )
        .is_err());
        assert!(ExperimentConfig::from_toml(
            "scenario = \"random_loss\"\n[traffic]\nkind = \"warp\""
        )
        .is_err());
        assert!(ExperimentConfig::from_toml("scenario = \"teleport\"").is_err());
    }

    #[test]
    fn render_reports_stable_for_empty_observers() {
        let obs = FlowObservers::new();
        let text = render_reports(&obs);
        assert!(text.contains("C2S,L,,,,no_measurement"));
        assert!(text.contains("S2C,T,,,,no_measurement"));
    }
}
