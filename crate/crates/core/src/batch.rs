//! Single runs, multi-seed sweeps and seed averaging.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Deserialize;

use crate::config::{parse_parameters, Parameters, Profile, RateScope};
use crate::engine::{render_events, Counters, Simulation};
use crate::fleet::{DemandLevel, FleetMix};
use crate::metrics::MetricsReport;
use crate::network::{build_network, load_topology_dir, RoadNetwork, TopologyParts};
use crate::topologies;

/// A bundled topology name or a directory holding node/link/path files.
#[derive(Debug, Clone, PartialEq)]
pub enum TopologySource {
    Bundled(String),
    Dir(PathBuf),
}

impl TopologySource {
    /// Directories win over bundled names when both exist.
    pub fn resolve(s: &str, base: &Path) -> Self {
        let p = base.join(s);
        if p.is_dir() || topologies::try_bundled(s).is_none() {
            TopologySource::Dir(p)
        } else {
            TopologySource::Bundled(s.to_string())
        }
    }

    pub fn load(&self) -> Result<TopologyParts> {
        match self {
            TopologySource::Bundled(n) => topologies::bundled(n).with_context(|| format!("no bundled topology '{n}'")),
            TopologySource::Dir(d) => {
                load_topology_dir(d).with_context(|| format!("loading topology from {}", d.display()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub topology: TopologySource,
    pub params: Parameters,
    pub profile: Profile,
    pub rate_scope: RateScope,
    /// s
    pub duration: f64,
    pub seed: u64,
}

/// What one run leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub report: MetricsReport,
    pub counters: Counters,
    pub class_names: Vec<String>,
    pub events: String,
}

/// One run on a prepared network.
pub fn run_on(
    network: Arc<RoadNetwork>,
    params: &Parameters,
    mix: &FleetMix,
    profile: Profile,
    scope: RateScope,
    duration: f64,
    seed: u64,
) -> Result<RunOutput> {
    if !(duration > 0.0) {
        bail!("duration must be positive, got {duration}");
    }
    let demand = params.demand_profile(profile, scope, network.generating_nodes().len())?;
    let sim = Simulation::new(network, mix, &demand, params.engine_config(), duration, seed)?;
    let r = sim.run()?;
    Ok(RunOutput {
        seed,
        report: r.report,
        counters: r.counters,
        class_names: mix.classes().iter().map(|c| c.name.clone()).collect(),
        events: render_events(&r.events),
    })
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let net = build_network(cfg.topology.load()?, cfg.params.strip_width)?;
    let mix = cfg.params.mix()?;
    run_on(
        Arc::new(net),
        &cfg.params,
        &mix,
        cfg.profile,
        cfg.rate_scope,
        cfg.duration,
        cfg.seed,
    )
}

/// Summary figures that get seed-averaged, in output order.
pub const METRICS: [&str; 7] = [
    "avg_flow_vph",
    "avg_link_speed_kmh",
    "avg_link_wait_s",
    "avg_vehicle_speed_kmh",
    "collisions",
    "exited",
    "generated",
];

/// The value of each entry of [`METRICS`] for one run.
pub fn metric_values(out: &RunOutput) -> [Option<f64>; 7] {
    let s = &out.report.summary;
    let c = &out.counters;
    [
        Some(s.avg_flow_vph),
        s.avg_link_speed_kmh,
        s.avg_link_wait_s,
        s.avg_vehicle_speed_kmh,
        Some(c.collisions as f64),
        Some(c.exited as f64),
        Some(c.generated as f64),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Averaged {
    pub mean: Option<f64>,
    /// Standard error of the mean; needs two values.
    pub std_err: Option<f64>,
    /// Non-null values that went into the mean.
    pub n: usize,
}

pub fn average(values: impl IntoIterator<Item = Option<f64>>) -> Averaged {
    let xs: Vec<f64> = values.into_iter().flatten().collect();
    let n = xs.len();
    if n == 0 {
        return Averaged {
            mean: None,
            std_err: None,
            n,
        };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std_err = (n > 1).then(|| {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    });
    Averaged {
        mean: Some(mean),
        std_err,
        n,
    }
}

/// Seed averages of every metric.
pub fn seed_average(runs: &[RunOutput]) -> [Averaged; 7] {
    let vals: Vec<_> = runs.iter().map(metric_values).collect();
    std::array::from_fn(|i| average(vals.iter().map(|v| v[i])))
}

/// Fleet presets a sweep can name.
pub fn mix_preset(name: &str, params: &Parameters, profile: Profile) -> Result<FleetMix> {
    let shares = match name.to_ascii_lowercase().as_str() {
        "params" => params.shares,
        "dhaka" => [55.0, 40.0, 5.0],
        "miami" | "riyadh" => [9.0, 75.0, 16.0],
        "homogeneous" => [0.0, 100.0, 0.0],
        "heterogeneous" => profile.default_mix().category_shares(),
        _ => bail!("unknown mix preset '{name}' (params, dhaka, miami, riyadh, homogeneous, heterogeneous)"),
    };
    Ok(params.mix_with_shares(shares)?)
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default)]
    pub strip_width: Vec<f64>,
    #[serde(default)]
    pub demand: Vec<u8>,
    #[serde(default)]
    pub mix: Vec<String>,
    #[serde(default)]
    pub pedestrian_mode: Vec<OnOff>,
}

/// `true`/`false` or `"on"`/`"off"`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum OnOff {
    Bool(bool),
    Word(String),
}

impl OnOff {
    fn get(&self) -> Result<bool> {
        match self {
            OnOff::Bool(b) => Ok(*b),
            OnOff::Word(w) => match w.to_ascii_lowercase().as_str() {
                "on" => Ok(true),
                "off" => Ok(false),
                _ => bail!("pedestrian_mode: expected on or off, got '{w}'"),
            },
        }
    }
}

/// TOML batch description.
///
/// ```toml
/// topology = "dhaka"      # bundled name or directory
/// params = "params.txt"   # optional; relative to this file
/// profile = "dhaka"
/// rate_scope = "per-node"
/// duration = 1800
/// seeds = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
/// threads = 0             # 0 = all cores
///
/// [sweep]
/// strip_width = [0.5, 2.5]
/// demand = [0, 1, 2]
/// mix = ["params", "homogeneous"]
/// pedestrian_mode = ["on"]
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchFile {
    pub topology: String,
    pub params: Option<String>,
    pub profile: Option<String>,
    pub rate_scope: Option<String>,
    pub duration: f64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub sweep: Sweep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSpec {
    pub topology: TopologySource,
    pub params: Parameters,
    pub profile: Profile,
    pub rate_scope: RateScope,
    pub duration: f64,
    pub seeds: Vec<u64>,
    /// 0 = rayon default
    pub threads: usize,
    pub points: Vec<SweepKey>,
    pub warnings: Vec<String>,
}

/// Coordinates of one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepKey {
    pub strip_width: f64,
    pub demand: DemandLevel,
    pub mix: String,
    pub pedestrians: bool,
}

impl SweepKey {
    fn order(&self, other: &Self) -> std::cmp::Ordering {
        self.strip_width
            .total_cmp(&other.strip_width)
            .then(self.demand.cmp(&other.demand))
            .then_with(|| self.mix.cmp(&other.mix))
            .then(self.pedestrians.cmp(&other.pedestrians))
    }

    /// Directory name for this point's files.
    pub fn slug(&self) -> String {
        format!(
            "w{}_d{}_{}_ped{}",
            self.strip_width,
            self.demand.code(),
            self.mix.to_ascii_lowercase().replace(['/', ' '], "-"),
            if self.pedestrians { "on" } else { "off" }
        )
    }
}

impl BatchSpec {
    /// Parse a TOML spec; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let f: BatchFile = toml::from_str(text).context("parsing batch spec")?;
        if f.seeds.is_empty() {
            bail!("seeds: at least one seed is required");
        }
        let (params, warnings) = match &f.params {
            Some(p) => {
                let path = base.join(p);
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                let parsed = parse_parameters(&text).with_context(|| format!("in {}", path.display()))?;
                (parsed.params, parsed.warnings)
            }
            None => (Parameters::default(), Vec::new()),
        };
        let profile = f.profile.as_deref().map(str::parse).transpose()?.unwrap_or_default();
        let rate_scope = f.rate_scope.as_deref().map(str::parse).transpose()?.unwrap_or_default();
        let widths = or_default(f.sweep.strip_width, params.strip_width);
        let demands = match f.sweep.demand.as_slice() {
            [] => vec![params.demand],
            ds => ds
                .iter()
                .map(|d| DemandLevel::from_code(&d.to_string()))
                .collect::<Result<_, _>>()?,
        };
        let mixes = or_default(f.sweep.mix, "params".to_string());
        let peds = match f.sweep.pedestrian_mode.as_slice() {
            [] => vec![params.pedestrians],
            ps => ps.iter().map(OnOff::get).collect::<Result<_>>()?,
        };
        let mut points = Vec::new();
        for &w in &widths {
            if !(w > 0.0) {
                bail!("sweep.strip_width: {w} must be positive");
            }
            for &d in &demands {
                for m in &mixes {
                    mix_preset(m, &params, profile)?;
                    for &p in &peds {
                        points.push(SweepKey {
                            strip_width: w,
                            demand: d,
                            mix: m.clone(),
                            pedestrians: p,
                        });
                    }
                }
            }
        }
        points.sort_by(SweepKey::order);
        points.dedup();
        Ok(BatchSpec {
            topology: TopologySource::resolve(&f.topology, base),
            params,
            profile,
            rate_scope,
            duration: f.duration,
            seeds: f.seeds,
            threads: f.threads,
            points,
            warnings,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

fn or_default<T>(v: Vec<T>, d: T) -> Vec<T> {
    if v.is_empty() {
        vec![d]
    } else {
        v
    }
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub key: SweepKey,
    /// Ordered as the spec's seeds. Empty on error.
    pub runs: Vec<RunOutput>,
    pub average: Option<[Averaged; 7]>,
    pub error: Option<String>,
}

/// All runs of all points. A failing run fails its point only.
pub fn run_batch(spec: &BatchSpec) -> Result<Vec<PointResult>> {
    let parts = spec.topology.load()?;
    let mut networks: BTreeMap<u64, Result<Arc<RoadNetwork>, String>> = BTreeMap::new();
    for p in &spec.points {
        networks.entry(p.strip_width.to_bits()).or_insert_with(|| {
            build_network(parts.clone(), p.strip_width)
                .map(Arc::new)
                .map_err(|e| e.to_string())
        });
    }
    let jobs: Vec<(usize, u64)> = (0..spec.points.len())
        .flat_map(|i| spec.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let work = || -> Vec<Result<RunOutput, String>> {
        jobs.par_iter()
            .map(|&(i, seed)| {
                let key = &spec.points[i];
                let net = networks[&key.strip_width.to_bits()].clone()?;
                let params = Parameters {
                    strip_width: key.strip_width,
                    demand: key.demand,
                    pedestrians: key.pedestrians,
                    ..spec.params.clone()
                };
                let mix = mix_preset(&key.mix, &params, spec.profile).map_err(|e| e.to_string())?;
                run_on(net, &params, &mix, spec.profile, spec.rate_scope, spec.duration, seed)
                    .map_err(|e| format!("seed {seed}: {e:#}"))
            })
            .collect()
    };
    let outputs = if spec.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(spec.threads)
            .build()
            .context("building thread pool")?
            .install(work)
    } else {
        work()
    };
    let mut it = outputs.into_iter();
    let mut results = Vec::with_capacity(spec.points.len());
    for key in &spec.points {
        let batch: Vec<_> = it.by_ref().take(spec.seeds.len()).collect();
        let error = batch.iter().find_map(|r| r.as_ref().err().cloned());
        let runs: Vec<RunOutput> = if error.is_some() {
            Vec::new()
        } else {
            batch.into_iter().map(Result::unwrap).collect()
        };
        results.push(PointResult {
            key: key.clone(),
            average: error.is_none().then(|| seed_average(&runs)),
            runs,
            error,
        });
    }
    Ok(results)
}
