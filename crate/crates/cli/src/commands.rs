use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, Context};
use pointprobe::attack::{
    adversarial_train, attack_clouds, augmentation_comparison, random_transform_baseline, ComparisonConfig,
};
use pointprobe::attribution::GameContext;
use pointprobe::geometry::{build_neighbor_graph, NeighborGraph, PointCloud, RegionPartition};
use pointprobe::interaction::{order_profile, sensitive_region_profile, InteractionProfile};
use pointprobe::metrics::{
    attribute_clouds, attribution_sensitivity_correlation, bias_probe, heatmap_rows, most_sensitive_region,
    non_smoothness, partition_clouds, reward_for, sample_id, sensitivity, CloudAttributions, MetricKind,
    SensitivityResult,
};
use pointprobe::model::{
    train, BuiltinClassifier, ExternalOracle, ModelOracle, RewardKind, SyntheticDataset, TrainReport,
};
use pointprobe::seed::{derive, rng};
use serde::Serialize;

use crate::bundle::{sha256_file, sha256_hex, Bundle, Provenance};
use crate::config::{OracleKind, RunConfig, SENSITIVITY_METRICS};
use crate::data;
use crate::{ConfigError, PartialFailure};

pub const RESOLVED: &str = "resolved_config.toml";

// Seed substreams of the master seed.
const DATA: u64 = 1;
const INIT: u64 = 2;
const TRAIN: u64 = 3;
const ANALYSIS: u64 = 4;
const ATTACK: u64 = 5;
const INTERACTION: u64 = 6;
const COMPARE: u64 = 7;

fn start(cfg: &RunConfig) -> anyhow::Result<Bundle> {
    let mut b = Bundle::create(&cfg.out)?;
    b.text(RESOLVED, &cfg.resolved_toml())?;
    Ok(b)
}

fn provenance(cfg: &RunConfig, command: &str, oracle_hash: Option<String>) -> Provenance {
    Provenance {
        tool: "pointprobe",
        version: env!("CARGO_PKG_VERSION"),
        command: command.into(),
        seed: cfg.seed,
        oracle_hash,
    }
}

fn finish(b: Bundle, prov: &Provenance) -> anyhow::Result<()> {
    let root = b.root().to_path_buf();
    let hash = b.finish(prov)?;
    println!("bundle {} sha256 {hash}", root.display());
    Ok(())
}

fn dataset(cfg: &RunConfig) -> anyhow::Result<SyntheticDataset> {
    data::load(cfg, derive(cfg.seed, &[DATA]))
}

fn test_clouds(cfg: &RunConfig, data: &SyntheticDataset) -> anyhow::Result<Vec<PointCloud>> {
    let clouds: Vec<PointCloud> = data.balanced_test(cfg.data.clouds).into_iter().cloned().collect();
    if clouds.is_empty() {
        return Err(ConfigError("no test clouds to analyse".into()).into());
    }
    Ok(clouds)
}

pub struct Oracle {
    pub model: Box<dyn ModelOracle>,
    pub hash: String,
}

pub fn oracle(cfg: &RunConfig) -> anyhow::Result<Oracle> {
    match cfg.oracle.kind {
        OracleKind::Builtin => {
            let path = cfg
                .oracle
                .weights
                .as_deref()
                .ok_or_else(|| ConfigError("the builtin oracle needs oracle.weights".into()))?;
            let model = BuiltinClassifier::load(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
            Ok(Oracle {
                model: Box::new(model),
                hash: sha256_file(path)?,
            })
        }
        OracleKind::External => {
            let cmd = cfg.oracle.command.as_deref().expect("validated");
            let model = ExternalOracle::spawn(cmd, cfg.oracle.protocol)?;
            Ok(Oracle {
                model: Box::new(model),
                hash: sha256_hex(cmd.as_bytes()),
            })
        }
    }
}

pub fn gen_data(cfg: &RunConfig) -> anyhow::Result<()> {
    let mut b = start(cfg)?;
    let data = pointprobe::model::generate_dataset(&data::spec(cfg, derive(cfg.seed, &[DATA])))?;
    for f in data::write_dir(&data, cfg.data.points, &b.path("data"))? {
        b.track(format!("data/{}", f.display()));
    }
    println!("{} clouds ({} classes)", data.samples.len(), data.num_classes());
    finish(b, &provenance(cfg, "gen-data", None))
}

fn train_outputs(b: &mut Bundle, model: &BuiltinClassifier, log: &TrainReport) -> anyhow::Result<String> {
    model.save(&b.path("weights.json"))?;
    b.track("weights.json");
    b.csv("train_log.csv", &log.epochs)?;
    b.json("train_report.json", log)?;
    println!("test accuracy {:.4}", log.test_accuracy);
    sha256_file(&b.path("weights.json"))
}

fn fresh_model(cfg: &RunConfig, data: &SyntheticDataset) -> anyhow::Result<BuiltinClassifier> {
    if data.num_classes() == 0 {
        return Err(ConfigError("training needs a labelled dataset".into()).into());
    }
    Ok(BuiltinClassifier::new(
        &cfg.model.shape(data.num_classes()),
        &mut rng(derive(cfg.seed, &[INIT]), &[]),
    )?)
}

pub fn train_cmd(cfg: &RunConfig) -> anyhow::Result<()> {
    let mut b = start(cfg)?;
    let data = dataset(cfg)?;
    let mut model = fresh_model(cfg, &data)?;
    let log = train(&mut model, &data, &cfg.model.train, derive(cfg.seed, &[TRAIN]))?;
    let h = train_outputs(&mut b, &model, &log)?;
    finish(b, &provenance(cfg, "train", Some(h)))
}

pub fn adv_train_cmd(cfg: &RunConfig) -> anyhow::Result<()> {
    let mut b = start(cfg)?;
    let data = dataset(cfg)?;
    let mut model = fresh_model(cfg, &data)?;
    let log = adversarial_train(&mut model, &data, &cfg.model.train, &cfg.adversarial, derive(cfg.seed, &[TRAIN]))?;
    let h = train_outputs(&mut b, &model, &log)?;
    finish(b, &provenance(cfg, "adv-train", Some(h)))
}

#[derive(Serialize)]
struct AttackRow {
    sample_id: String,
    label: usize,
    clean_prediction: usize,
    prediction: usize,
    success: bool,
    plateau: bool,
    clean_loss: f64,
    best_loss: f64,
    theta_x: f64,
    theta_y: f64,
    theta_z: f64,
    delta_x: f64,
    delta_y: f64,
    delta_z: f64,
    random_best_loss: f64,
    random_flips: usize,
}

#[derive(Serialize)]
struct AttackSummary {
    clouds: usize,
    iterations: usize,
    clean_error: f64,
    flip_rate: f64,
    /// Fraction of random transforms that flip the prediction.
    random_flip_rate: f64,
    /// Fraction of clouds with at least one flipping random transform.
    random_any_flip_rate: f64,
    /// Fraction of clouds where the attack loss is at least the best random loss.
    loss_win_rate: f64,
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    sample_id: &'a str,
    restart: usize,
    trace: &'a [pointprobe::attack::TraceEntry],
}

pub fn attack_cmd(cfg: &RunConfig) -> anyhow::Result<()> {
    let mut b = start(cfg)?;
    let data = dataset(cfg)?;
    let clouds = test_clouds(cfg, &data)?;
    if clouds.iter().any(|c| c.label.is_none()) {
        return Err(ConfigError("attacks need labelled clouds".into()).into());
    }
    let o = oracle(cfg)?;
    let seed = derive(cfg.seed, &[ATTACK]);
    let results = attack_clouds(o.model.as_ref(), &clouds, &cfg.attack, derive(seed, &[0]))?;
    let baseline = pointprobe::par::try_map_indexed(clouds.len(), |k| {
        let c = &clouds[k];
        random_transform_baseline(o.model.as_ref(), c, c.label.unwrap(), &cfg.attack, cfg.baseline.samples, derive(seed, &[1, k as u64]))
    })?;
    let ids: Vec<String> = clouds.iter().enumerate().map(|(k, c)| sample_id(c, k)).collect();
    let rows: Vec<AttackRow> = results
        .iter()
        .zip(&baseline)
        .zip(&clouds)
        .enumerate()
        .map(|(k, ((r, rs), c))| AttackRow {
            sample_id: ids[k].clone(),
            label: c.label.unwrap(),
            clean_prediction: r.clean_prediction,
            prediction: r.prediction,
            success: r.success,
            plateau: r.plateau,
            clean_loss: r.clean_loss,
            best_loss: r.best_loss,
            theta_x: r.best.theta[0],
            theta_y: r.best.theta[1],
            theta_z: r.best.theta[2],
            delta_x: r.best.delta[0],
            delta_y: r.best.delta[1],
            delta_z: r.best.delta[2],
            random_best_loss: rs.best_loss,
            random_flips: rs.flips,
        })
        .collect();
    let n = clouds.len() as f64;
    let frac = |f: &dyn Fn(&AttackRow) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / n;
    let summary = AttackSummary {
        clouds: clouds.len(),
        iterations: cfg.attack.iterations,
        clean_error: frac(&|r| r.clean_prediction != r.label),
        flip_rate: frac(&|r| r.success),
        random_flip_rate: rows.iter().map(|r| r.random_flips as f64).sum::<f64>() / (n * cfg.baseline.samples as f64),
        random_any_flip_rate: frac(&|r| r.random_flips > 0),
        loss_win_rate: frac(&|r| r.best_loss >= r.random_best_loss),
    };
    let traces: Vec<TraceRecord> = results
        .iter()
        .zip(&ids)
        .map(|(r, id)| TraceRecord {
            sample_id: id,
            restart: r.restart,
            trace: &r.trace,
        })
        .collect();
    b.json("attack_traces.json", &traces)?;
    b.csv("attack_clouds.csv", &rows)?;
    b.csv("attack_summary.csv", [&summary])?;
    println!(
        "flip rate {:.3}  clean error {:.3}  random flip rate {:.3}",
        summary.flip_rate, summary.clean_error, summary.random_flip_rate
    );
    finish(b, &provenance(cfg, "attack", Some(o.hash)))
}

#[derive(Serialize)]
struct AttributionRow<'a> {
    sample_id: &'a str,
    transform_index: usize,
    transform: String,
    region: usize,
    phi: f64,
    se: f64,
    v_full: f64,
    v_empty: f64,
    #[serde(rename = "M")]
    permutations: usize,
    exact: bool,
}

fn attribution_rows(attribs: &[CloudAttributions]) -> Vec<AttributionRow<'_>> {
    let mut rows = vec![];
    for a in attribs {
        for (t, (tr, r)) in a.transforms.iter().zip(&a.results).enumerate() {
            for (i, (&phi, &se)) in r.phi.iter().zip(&r.se).enumerate() {
                rows.push(AttributionRow {
                    sample_id: &a.sample_id,
                    transform_index: t,
                    transform: tr.describe(),
                    region: i,
                    phi,
                    se,
                    v_full: r.v_full,
                    v_empty: r.v_empty,
                    permutations: r.permutations,
                    exact: r.exact,
                });
            }
        }
    }
    rows
}

#[derive(Serialize)]
struct ProfileRow {
    order: usize,
    normalized_order: f64,
    value: f64,
    contexts: usize,
    pairs: usize,
}

fn profile_rows(p: &InteractionProfile) -> Vec<ProfileRow> {
    (0..p.orders.len())
        .map(|k| ProfileRow {
            order: p.orders[k],
            normalized_order: p.normalized_orders[k],
            value: p.values[k],
            contexts: p.context_samples[k],
            pairs: p.pair_samples[k],
        })
        .collect()
}

#[derive(Serialize)]
struct Failure {
    metric: String,
    error: String,
    oracle: bool,
}

#[derive(Serialize, Default)]
struct Summary {
    clouds: usize,
    regions: usize,
    exact: bool,
    sensitivity: BTreeMap<String, [f64; 2]>,
    smoothness: BTreeMap<String, [f64; 2]>,
    correlation: BTreeMap<String, Option<f64>>,
    failures: Vec<Failure>,
}

struct Analysis<'a> {
    cfg: &'a RunConfig,
    oracle: &'a dyn ModelOracle,
    clouds: Vec<PointCloud>,
    parts: Vec<RegionPartition>,
    ids: Vec<String>,
    seed: u64,
    attribs: BTreeMap<&'static str, Vec<CloudAttributions>>,
    sens: BTreeMap<&'static str, SensitivityResult>,
    graphs: Option<Vec<NeighborGraph>>,
}

impl Analysis<'_> {
    fn attributions(&mut self, kind: MetricKind) -> anyhow::Result<&Vec<CloudAttributions>> {
        let name = kind.name();
        if !self.attribs.contains_key(name) {
            let k = MetricKind::ALL.iter().position(|&m| m == kind).unwrap() as u64;
            let a = attribute_clouds(
                self.oracle,
                &self.clouds,
                &self.parts,
                kind,
                self.cfg.analysis.reward,
                &self.cfg.analysis.family,
                &self.cfg.analysis.shapley,
                derive(self.seed, &[k]),
            )?;
            self.attribs.insert(name, a);
        }
        Ok(&self.attribs[name])
    }

    fn sensitivity(&mut self, kind: MetricKind) -> anyhow::Result<&SensitivityResult> {
        let name = kind.name();
        if !self.sens.contains_key(name) {
            let s = sensitivity(name, self.attributions(kind)?)?;
            self.sens.insert(name, s);
        }
        Ok(&self.sens[name])
    }

    fn graphs(&mut self) -> anyhow::Result<&Vec<NeighborGraph>> {
        if self.graphs.is_none() {
            let g = self
                .parts
                .iter()
                .zip(&self.clouds)
                .map(|(p, c)| build_neighbor_graph(p, c, self.cfg.analysis.radius))
                .collect::<pointprobe::Result<Vec<_>>>()?;
            self.graphs = Some(g);
        }
        Ok(self.graphs.as_ref().unwrap())
    }

    fn games(&self) -> anyhow::Result<Vec<GameContext<'_>>> {
        let n = self.cfg.analysis.interaction_clouds.min(self.clouds.len());
        (0..n)
            .map(|k| {
                let reward = reward_for(&self.clouds[k], self.cfg.analysis.reward)?;
                Ok(GameContext::new(self.oracle, reward, self.clouds[k].clone(), &self.parts[k])?)
            })
            .collect()
    }
}

fn run_metric(b: &mut Bundle, a: &mut Analysis, summary: &mut Summary, metric: &str) -> anyhow::Result<()> {
    let cfg = a.cfg;
    if let Ok(kind) = metric.parse::<MetricKind>() {
        let attribs = a.attributions(kind)?;
        b.csv(&format!("attributions_{metric}.csv"), attribution_rows(attribs))?;
        let sens = a.sensitivity(kind)?.clone();
        b.csv(&format!("sensitivity_{metric}.csv"), sens.rows())?;
        for (k, c) in sens.clouds.iter().enumerate() {
            let rows = heatmap_rows(&a.clouds[k], &a.parts[k], &c.a)?;
            b.csv(&format!("heatmaps/{metric}_{}.csv", a.ids[k]), rows)?;
        }
        summary.sensitivity.insert(metric.into(), [sens.mean, sens.std]);
        return Ok(());
    }
    match metric {
        "smoothness" => {
            let mut rows = vec![];
            let mut results = vec![];
            for fam in &cfg.analysis.smoothness_families {
                let kind: MetricKind = fam.parse()?;
                a.attributions(kind)?;
                a.graphs()?;
                let r = non_smoothness(fam, &a.attribs[kind.name()], a.graphs.as_ref().unwrap())?;
                for c in &r.clouds {
                    rows.push(vec![fam.clone(), c.sample_id.clone(), c.value.to_string(), c.z_smooth.to_string()]);
                }
                summary.smoothness.insert(fam.clone(), [r.mean, r.std]);
                results.push(r);
            }
            b.table("smoothness.csv", &["family", "sample_id", "non_smoothness", "z_smooth"], rows)?;
            b.json("smoothness.json", &results)?;
        }
        "correlation" => {
            let fam = &cfg.analysis.correlation_family;
            let sens = a.sensitivity(fam.parse()?)?;
            let r = attribution_sensitivity_correlation(sens)?;
            let rows = sens
                .clouds
                .iter()
                .zip(&r.r)
                .map(|(c, v)| vec![fam.clone(), c.sample_id.clone(), v.map_or(String::new(), |x| x.to_string())]);
            b.table("correlation.csv", &["family", "sample_id", "r"], rows)?;
            b.json("correlation.json", &r)?;
            summary.correlation.insert(fam.clone(), r.mean);
        }
        "interaction" => {
            let games = a.games()?;
            let p = order_profile(&games, &cfg.analysis.interaction, derive(cfg.seed, &[INTERACTION, 0]))?;
            b.csv("interaction_profile.csv", profile_rows(&p))?;
            b.json("interaction_profile.json", &p)?;
            if !p.pairs.is_empty() {
                b.csv("interaction_pairs.csv", &p.pairs)?;
            }
        }
        "sensitive-region" => {
            let n = cfg.analysis.interaction_clouds.min(a.clouds.len());
            let sens = a.sensitivity(MetricKind::Rotation)?;
            let centers = (0..n)
                .map(|k| most_sensitive_region(sens, k).map(|r| r.0))
                .collect::<pointprobe::Result<Vec<_>>>()?;
            let graphs = a.graphs()?[..n].to_vec();
            let games = a.games()?;
            let p = sensitive_region_profile(&games, &centers, &graphs, &cfg.analysis.interaction, derive(cfg.seed, &[INTERACTION, 1]))?;
            b.csv("sensitive_region_profile.csv", profile_rows(&p))?;
            b.json("sensitive_region_profile.json", &p)?;
        }
        "bias" => {
            let probes = pointprobe::par::try_map_indexed(a.clouds.len(), |k| bias_probe(a.oracle, &a.clouds[k]))?;
            let rows = probes.iter().zip(&a.ids).map(|(p, id)| {
                vec![id.clone(), p.top_class.to_string(), p.top_prob.to_string(), p.biased.to_string()]
            });
            b.table("bias_probe.csv", &["sample_id", "top_class", "top_prob", "biased"], rows)?;
            let out: Vec<_> = a.ids.iter().zip(&probes).collect();
            b.json("bias_probe.json", &out)?;
        }
        other => return Err(anyhow!("unknown metric {other:?}")),
    }
    Ok(())
}

pub fn analyze_cmd(cfg: &RunConfig) -> anyhow::Result<()> {
    let mut b = start(cfg)?;
    let data = dataset(cfg)?;
    let clouds = test_clouds(cfg, &data)?;
    if cfg.analysis.reward == RewardKind::ClassificationLogit && clouds.iter().any(|c| c.label.is_none()) {
        return Err(ConfigError("the classification reward needs labelled clouds; use the embedding reward".into()).into());
    }
    let o = oracle(cfg)?;
    let parts = partition_clouds(&clouds, cfg.analysis.regions)?;
    let mut a = Analysis {
        cfg,
        oracle: o.model.as_ref(),
        ids: clouds.iter().enumerate().map(|(k, c)| sample_id(c, k)).collect(),
        clouds,
        parts,
        seed: derive(cfg.seed, &[ANALYSIS]),
        attribs: BTreeMap::new(),
        sens: BTreeMap::new(),
        graphs: None,
    };
    let mut summary = Summary {
        clouds: a.clouds.len(),
        regions: cfg.analysis.regions,
        exact: cfg.analysis.shapley.exact,
        ..Default::default()
    };
    // Canonical order, so a metric's numbers do not depend on the subset requested.
    let order = SENSITIVITY_METRICS.iter().chain(&crate::config::OTHER_METRICS);
    for m in order.filter(|m| cfg.metric_enabled(m)) {
        if let Err(e) = run_metric(&mut b, &mut a, &mut summary, m) {
            let oracle = is_oracle(&e);
            eprintln!("{m}: {e:#}");
            summary.failures.push(Failure {
                metric: m.to_string(),
                error: format!("{e:#}"),
                oracle,
            });
        }
    }
    for (name, s) in &summary.sensitivity {
        println!("{name:12} {:.4} ± {:.4}", s[0], s[1]);
    }
    b.json("summary.json", &summary)?;
    let failures = summary.failures.len();
    let all_oracle = failures > 0 && summary.failures.iter().all(|f| f.oracle);
    finish(b, &provenance(cfg, "analyze", Some(o.hash)))?;
    if failures > 0 {
        return Err(PartialFailure { failures, oracle: all_oracle }.into());
    }
    Ok(())
}

pub fn is_oracle(e: &anyhow::Error) -> bool {
    e.chain()
        .any(|c| c.downcast_ref::<pointprobe::Error>().is_some_and(|e| e.is_oracle()))
}

#[derive(Serialize)]
struct CompareRow<'a> {
    recipe: &'a str,
    test_accuracy: f64,
    metric: &'a str,
    mean: f64,
    std: f64,
}

pub fn compare_cmd(cfg: &RunConfig) -> anyhow::Result<()> {
    let mut b = start(cfg)?;
    let data = dataset(cfg)?;
    if data.num_classes() == 0 {
        return Err(ConfigError("comparisons need a labelled dataset".into()).into());
    }
    let ccfg = ComparisonConfig {
        train: cfg.model.train,
        shape: cfg.model.shape(data.num_classes()),
        regions: cfg.compare.regions,
        clouds: cfg.data.clouds,
        metrics: cfg.compare.metrics.iter().map(|m| m.parse()).collect::<pointprobe::Result<_>>()?,
        family: cfg.analysis.family.clone(),
        shapley: cfg.analysis.shapley,
    };
    let report = augmentation_comparison(&data, &cfg.compare.recipes, &ccfg, derive(cfg.seed, &[COMPARE]))?;
    let mut rows = vec![];
    for r in &report.rows {
        for s in &r.sensitivity {
            rows.push(CompareRow {
                recipe: &r.recipe,
                test_accuracy: r.test_accuracy,
                metric: &s.metric,
                mean: s.mean,
                std: s.std,
            });
            println!("{:20} acc {:.3}  {:12} {:.4} ± {:.4}", r.recipe, r.test_accuracy, s.metric, s.mean, s.std);
        }
    }
    b.csv("comparison.csv", &rows)?;
    b.json("comparison.json", &report)?;
    std::fs::create_dir_all(b.path("models"))?;
    for (r, (m, log)) in cfg.compare.recipes.iter().zip(report.models.iter().zip(&report.training)) {
        m.save(&b.path(&format!("models/{}.json", r.name)))?;
        b.track(format!("models/{}.json", r.name));
        b.csv(&format!("models/{}_log.csv", r.name), &log.epochs)?;
    }
    finish(b, &provenance(cfg, "compare", None))
}

/// Markdown digest of an analyze bundle, computed from its CSV tables.
pub fn report_cmd(dir: &Path) -> anyhow::Result<String> {
    let mut out = String::from("# pointprobe report\n\n");
    let mut found = false;
    let mut sens = vec![];
    for m in SENSITIVITY_METRICS {
        let p = dir.join(format!("sensitivity_{m}.csv"));
        if !p.exists() {
            continue;
        }
        let mut r = csv::Reader::from_path(&p)?;
        let h = r.headers()?.clone();
        let (ci, ai) = (col(&h, "sample_id")?, col(&h, "a_i")?);
        let mut all = vec![];
        let mut clouds = std::collections::BTreeSet::new();
        for rec in r.records() {
            let rec = rec?;
            clouds.insert(rec[ci].to_string());
            all.push(rec[ai].parse::<f64>()?);
        }
        let (mean, std) = pointprobe::metrics::mean_std(&all);
        sens.push(format!("| {m} | {mean:.4} | {std:.4} | {} |\n", clouds.len()));
    }
    if !sens.is_empty() {
        found = true;
        out += "## Regional sensitivity\n\n| metric | mean | std | clouds |\n|---|---|---|---|\n";
        sens.iter().for_each(|l| out += l);
        out += "\n";
    }
    let p = dir.join("smoothness.csv");
    if p.exists() {
        found = true;
        let mut fams: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut r = csv::Reader::from_path(&p)?;
        for rec in r.records() {
            let rec = rec?;
            fams.entry(rec[0].to_string()).or_default().push(rec[2].parse()?);
        }
        out += "## Non-smoothness\n\n| family | mean | std |\n|---|---|---|\n";
        for (f, v) in fams {
            let (m, s) = pointprobe::metrics::mean_std(&v);
            out += &format!("| {f} | {m:.4} | {s:.4} |\n");
        }
        out += "\n";
    }
    let p = dir.join("correlation.csv");
    if p.exists() {
        found = true;
        let mut r = csv::Reader::from_path(&p)?;
        let mut v: Vec<f64> = vec![];
        let mut fam = String::new();
        for rec in r.records() {
            let rec = rec?;
            fam = rec[0].to_string();
            if !rec[2].is_empty() {
                v.push(rec[2].parse()?);
            }
        }
        let (m, s) = pointprobe::metrics::mean_std(&v);
        out += &format!("## Attribution/sensitivity correlation\n\n{fam}: r = {m:.4} ± {s:.4} over {} clouds\n\n", v.len());
    }
    for (file, title) in [("interaction_profile.csv", "Interaction order profile"), ("sensitive_region_profile.csv", "Sensitive-region interaction profile")] {
        let p = dir.join(file);
        if !p.exists() {
            continue;
        }
        found = true;
        out += &format!("## {title}\n\n| m | m/(n-2) | I |\n|---|---|---|\n");
        let mut r = csv::Reader::from_path(&p)?;
        for rec in r.records() {
            let rec = rec?;
            out += &format!("| {} | {} | {} |\n", &rec[0], &rec[1], &rec[2]);
        }
        out += "\n";
    }
    let p = dir.join("bias_probe.csv");
    if p.exists() {
        found = true;
        let mut r = csv::Reader::from_path(&p)?;
        let (mut n, mut biased) = (0, 0);
        for rec in r.records() {
            n += 1;
            biased += (&rec?[3] == "true") as usize;
        }
        out += &format!("## Bias probe\n\n{biased} of {n} masked clouds classified with high confidence\n");
    }
    if !found {
        return Err(ConfigError(format!("{} holds no analysis tables", dir.display())).into());
    }
    std::fs::write(dir.join("report.md"), &out).context("writing report.md")?;
    Ok(out)
}

fn col(h: &csv::StringRecord, name: &str) -> anyhow::Result<usize> {
    h.iter().position(|c| c == name).ok_or_else(|| anyhow!("missing column {name}"))
}

pub fn serve_cmd(weights: &Path) -> anyhow::Result<()> {
    let model = BuiltinClassifier::load(weights).map_err(|e| ConfigError(format!("{}: {e}", weights.display())))?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    pointprobe::model::serve(&model, stdin.lock(), std::io::BufWriter::new(stdout.lock()))?;
    Ok(())
}
