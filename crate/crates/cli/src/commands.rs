//! Subcommand implementations.
//!
//! Every command reads the artifacts of earlier stages, writes its own slot
//! in the dataset, model or run directory, and records a provenance manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use phasesteer::datamodel::{read_tensor, write_tensor, MapKind, RepresentationTensor, VelocitySequence};
use phasesteer::dataset::Dataset;
use phasesteer::evaluation::{
    optimize_static, select_static_features, static_velocities, MetricsReport, StaticKind,
};
use phasesteer::objective::{optimize, LossBreakdown, LossWeights, OptimizeResult, SteeringProblem};
use phasesteer::oscillation::{filter_pairs, rank_pairs, select_disjoint, OscillatoryPair, PairFilterConfig};
use phasesteer::representation::{pca_fit, sae_train, samples_of, RepresentationMap};
use phasesteer::steering::{build_pair_modes, CosineDictionary, SteeringParams};
use phasesteer::synthgen::{generate as synth_generate, shifted_target};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::layout::{self, *};
use crate::manifest::{combined_digest, hash_tree, Recorder};

/// Shared state of one CLI invocation.
pub struct Context {
    pub cfg: RunConfig,
    pub quiet: bool,
}

impl Context {
    pub fn new(cfg: RunConfig, quiet: bool) -> Self {
        Self { cfg, quiet }
    }

    fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn run_dir(&self) -> &Path {
        &self.cfg.run_dir
    }

    fn model_path(&self, kind: MapKind) -> Option<PathBuf> {
        match kind {
            MapKind::Sae => Some(self.cfg.model_dir.join(SAE_DIR)),
            MapKind::Pca => Some(self.cfg.model_dir.join(PCA_DIR)),
            MapKind::Identity => None,
        }
    }
}

/// Pair manifest written by `identify-pairs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairManifest {
    pub representation: MapKind,
    pub width: usize,
    pub candidates: usize,
    pub top_p: usize,
    pub pairs: Vec<OscillatoryPair>,
}

/// Optimized steering written by `steer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteerRecord {
    pub representation: MapKind,
    pub pairs: Vec<(usize, usize)>,
    pub rank: usize,
    pub k_basis: usize,
    pub l_target: i64,
    pub weights: LossWeights,
    pub params: SteeringParams,
    pub initial_loss: LossBreakdown,
    pub loss: LossBreakdown,
    pub best_iter: usize,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: Option<String>,
}

/// Optimized static intervention written by `baseline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub kind: StaticKind,
    pub features: Vec<usize>,
    pub values: Vec<f64>,
    pub initial_loss: LossBreakdown,
    pub loss: LossBreakdown,
    pub best_iter: usize,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub frac_pct_vx: f64,
    pub roi_pct_vx: f64,
    pub nrmse_vx: f64,
    pub corr_vxvy: f64,
}

impl From<&MetricsReport> for MetricsSummary {
    fn from(m: &MetricsReport) -> Self {
        Self {
            frac_pct_vx: m.frac_pct_vx,
            roi_pct_vx: m.roi_pct_vx,
            nrmse_vx: m.nrmse_vx,
            corr_vxvy: m.corr_vxvy,
        }
    }
}

/// Metrics written by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub fingerprint: String,
    pub representation: MapKind,
    pub l_target: i64,
    pub pairs: usize,
    pub steering: MetricsSummary,
    pub baselines: BTreeMap<String, MetricsSummary>,
}

/// One configuration of the sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub name: String,
    pub p: usize,
    pub lambda_mag: f64,
    pub pairs: usize,
    pub loss: f64,
    pub metrics: MetricsSummary,
    pub pareto: bool,
}

/// Everything downstream stages need from the dataset and representation.
struct Inputs {
    ds: Dataset,
    map: RepresentationMap,
    x: RepresentationTensor,
    target: VelocitySequence,
    orig: VelocitySequence,
    l_target: i64,
    /// Content digest of the dataset and model, paths excluded.
    digest: String,
}

fn digest_tree(root: &Path) -> CliResult<String> {
    let tree = hash_tree(root)?;
    Ok(combined_digest(
        tree.iter()
            .filter(|(path, _)| !path.ends_with(PROVENANCE))
            .map(|(_, h)| h.as_str()),
    ))
}

fn load_dataset(ctx: &Context, rec: &mut Recorder) -> CliResult<Dataset> {
    let dir = &ctx.cfg.dataset_dir;
    layout::require(&dir.join(phasesteer::dataset::DATASET_MANIFEST), "generate")?;
    rec.input_tree(dir)?;
    Ok(Dataset::load(dir)?)
}

fn load_map(ctx: &Context, ds: &Dataset, rec: &mut Recorder) -> CliResult<RepresentationMap> {
    let Some(dir) = ctx.model_path(ctx.cfg.representation) else {
        return Ok(RepresentationMap::Identity {
            width: ds.embeddings.width(),
        });
    };
    let producer = if ctx.cfg.representation == MapKind::Sae {
        "train-sae"
    } else {
        "fit-pca"
    };
    layout::require(&dir.join(phasesteer::representation::MODEL_MANIFEST), producer)?;
    rec.input_tree(&dir)?;
    let map = RepresentationMap::load(&dir)?;
    if map.d_emb() != ds.embeddings.width() {
        return Err(CliError::config(format!(
            "model in {} expects width {}, dataset embeddings have {}",
            dir.display(),
            map.d_emb(),
            ds.embeddings.width()
        )));
    }
    Ok(map)
}

/// Target at the configured shift: the stored one, or regenerated from the
/// ground truth of a synthetic dataset.
fn target_for(ctx: &Context, ds: &Dataset) -> CliResult<(VelocitySequence, i64)> {
    let l = ctx.cfg.l_target.unwrap_or(ds.l_target);
    if l == ds.l_target {
        return Ok((ds.target.clone(), l));
    }
    let Some(gt) = &ds.ground_truth else {
        return Err(CliError::config(format!(
            "l_target = {l} differs from the dataset's shift {} and the dataset has no generator config to rebuild it",
            ds.l_target
        )));
    };
    let synth = synth_generate(&gt.config)?;
    Ok((shifted_target(&synth, l)?, l))
}

fn load_inputs(ctx: &Context, rec: &mut Recorder) -> CliResult<Inputs> {
    let ds = load_dataset(ctx, rec)?;
    let map = load_map(ctx, &ds, rec)?;
    let x = map.forward(&ds.embeddings)?;
    let (target, l_target) = target_for(ctx, &ds)?;
    let orig = ds.decoder.decode_values(&map.inverse_values(&x)?)?;
    let mut digest = digest_tree(&ctx.cfg.dataset_dir)?;
    if let Some(dir) = ctx.model_path(ctx.cfg.representation) {
        digest = combined_digest([digest.as_str(), digest_tree(&dir)?.as_str()]);
    }
    Ok(Inputs {
        ds,
        map,
        x,
        target,
        orig,
        l_target,
        digest,
    })
}

fn fingerprint(ctx: &Context, inputs: &Inputs) -> String {
    combined_digest([ctx.cfg.fingerprint().as_str(), inputs.digest.as_str()])
}

fn identify(inputs: &Inputs, filter: &PairFilterConfig) -> CliResult<PairManifest> {
    filter.validate()?;
    let candidates = filter_pairs(&inputs.x, filter)?;
    let ranked = rank_pairs(&candidates, &inputs.x, &inputs.map.decoder_strengths(), filter)?;
    Ok(PairManifest {
        representation: inputs.map.kind(),
        width: inputs.x.features(),
        candidates: candidates.len(),
        top_p: filter.top_p,
        pairs: select_disjoint(ranked, filter.top_p),
    })
}

fn steer_pairs(
    ctx: &Context,
    inputs: &Inputs,
    pairs: &PairManifest,
    weights: LossWeights,
) -> CliResult<(SteerRecord, OptimizeResult, VelocitySequence)> {
    if pairs.pairs.is_empty() {
        return Err(CliError::degenerate(
            "the pair manifest is empty; no oscillatory pairs passed the filters",
        ));
    }
    if pairs.representation != inputs.map.kind() || pairs.width != inputs.x.features() {
        return Err(CliError::config(format!(
            "pair manifest was built for {} (width {}), current representation is {} (width {})",
            pairs.representation,
            pairs.width,
            inputs.map.kind(),
            inputs.x.features()
        )));
    }
    let s = &ctx.cfg.steering;
    let idx: Vec<(usize, usize)> = pairs.pairs.iter().map(|p| (p.i, p.j)).collect();
    let modes = build_pair_modes(&inputs.x, &idx, s.r)?;
    let rank = modes.first().map_or(0, |m| m.rank());
    let dict = CosineDictionary::new(inputs.x.frames(), s.k_basis)?;
    let problem = SteeringProblem::new(
        &inputs.x,
        modes,
        dict,
        &inputs.map,
        &inputs.ds.decoder,
        &inputs.target,
        weights,
    )?;
    let (params, res) = optimize(&problem, &problem.zero_params(), &ctx.cfg.optimizer)?;
    let u = problem.steered_velocities(&params)?;
    let record = SteerRecord {
        representation: inputs.map.kind(),
        pairs: idx,
        rank,
        k_basis: s.k_basis,
        l_target: inputs.l_target,
        weights,
        params,
        initial_loss: *res.initial(),
        loss: res.best,
        best_iter: res.best_iter,
        iterations: res.history.len() - 1,
        converged: res.converged,
        diverged: res.diverged.clone(),
    };
    Ok((record, res, u))
}

fn history_csv(res: &OptimizeResult) -> String {
    let mut s = String::from("iter,total,vel,dv,curv,mag\n");
    for (k, l) in res.history.iter().enumerate() {
        let _ = writeln!(s, "{k},{:e},{:e},{:e},{:e},{:e}", l.total, l.vel, l.dv, l.curv, l.mag);
    }
    s
}

fn fmt_metrics(m: &MetricsSummary) -> String {
    format!(
        "frac%(vx) {:>9.3}  ROI%(vx) {:>9.3}  nRMSE(vx) {:.6}  Corr(vx,vy) {:.6}",
        m.frac_pct_vx, m.roi_pct_vx, m.nrmse_vx, m.corr_vxvy
    )
}

pub fn generate(ctx: &Context) -> CliResult<()> {
    let mut rec = Recorder::start("generate");
    let mut synth = ctx.cfg.synthgen.clone();
    if let Some(l) = ctx.cfg.l_target {
        synth.l_target = l;
    }
    let ds = synth_generate(&synth)?;
    let dir = &ctx.cfg.dataset_dir;
    Dataset::from_synth(&ds)?.save(dir)?;
    ctx.log(format!(
        "generated {} frames x {} nodes x {} features into {}",
        ds.embeddings.frames(),
        ds.embeddings.nodes(),
        ds.embeddings.width(),
        dir.display()
    ));
    rec.output(dir.join(phasesteer::dataset::DATASET_MANIFEST));
    rec.finish(&ctx.cfg, &dir.join(PROVENANCE))
}

pub fn train_sae(ctx: &Context) -> CliResult<()> {
    let mut rec = Recorder::start("train-sae");
    let ds = load_dataset(ctx, &mut rec)?;
    let samples = samples_of(&ds.train_embeddings)?;
    let (model, report) = sae_train(&samples, &ctx.cfg.sae)?;
    let dir = ctx.cfg.model_dir.join(SAE_DIR);
    RepresentationMap::Sae(model).save(&dir)?;
    layout::write_json(&dir.join(SAE_REPORT), &report)?;
    ctx.log(format!(
        "SAE trained for {} epochs (best {}): validation relative error {:.4}, zero fraction {:.4}",
        report.epochs_run, report.best_epoch, report.val_relative_error, report.val_zero_fraction
    ));
    rec.output(dir.join(phasesteer::representation::MODEL_MANIFEST));
    rec.output(dir.join(SAE_REPORT));
    rec.finish(&ctx.cfg, &dir.join(PROVENANCE))
}

pub fn fit_pca(ctx: &Context) -> CliResult<()> {
    let mut rec = Recorder::start("fit-pca");
    let ds = load_dataset(ctx, &mut rec)?;
    let samples = samples_of(&ds.train_embeddings)?;
    let k = ctx.cfg.pca.components.unwrap_or(ds.embeddings.width());
    let model = pca_fit(&samples, k)?;
    let dir = ctx.cfg.model_dir.join(PCA_DIR);
    RepresentationMap::Pca(model).save(&dir)?;
    ctx.log(format!("PCA with {k} components written to {}", dir.display()));
    rec.output(dir.join(phasesteer::representation::MODEL_MANIFEST));
    rec.finish(&ctx.cfg, &dir.join(PROVENANCE))
}

pub fn identify_pairs(ctx: &Context) -> CliResult<()> {
    let mut rec = Recorder::start("identify-pairs");
    let inputs = load_inputs(ctx, &mut rec)?;
    let manifest = identify(&inputs, &ctx.cfg.oscillation)?;
    let path = ctx.run_dir().join(PAIRS);
    layout::write_json(&path, &manifest)?;
    if manifest.pairs.is_empty() {
        ctx.log(format!("warning: no pairs among {} features passed the filters", manifest.width));
    }
    for p in &manifest.pairs {
        ctx.log(format!(
            "pair ({:>4}, {:>4})  omega {:.4}  coherence {:.3}  rank {:.3}",
            p.i, p.j, p.omega, p.coherence, p.rank_score
        ));
    }
    rec.output(&path);
    rec.finish(&ctx.cfg, &layout::manifest_path(ctx.run_dir(), "identify-pairs"))
}

pub fn steer(ctx: &Context) -> CliResult<()> {
    let mut rec = Recorder::start("steer");
    let pairs_path = ctx.run_dir().join(PAIRS);
    let pairs: PairManifest = layout::read_json(&pairs_path, "identify-pairs")?;
    rec.input(&pairs_path)?;
    let inputs = load_inputs(ctx, &mut rec)?;
    let (record, res, u) = steer_pairs(ctx, &inputs, &pairs, ctx.cfg.objective)?;
    let run = ctx.run_dir();
    layout::write_json(&run.join(PARAMS), &record)?;
    layout::write_text(&run.join(HISTORY), &history_csv(&res))?;
    write_tensor(run.join(STEERED), u.values())?;
    if let Some(msg) = &record.diverged {
        ctx.log(format!("warning: optimization stopped early ({msg}); best iterate kept"));
    }
    ctx.log(format!(
        "steered {} pairs: loss {:.6e} -> {:.6e} after {} iterations",
        record.pairs.len(),
        record.initial_loss.total,
        record.loss.total,
        record.iterations
    ));
    for name in [PARAMS, HISTORY, STEERED] {
        rec.output(run.join(name));
    }
    rec.finish(&ctx.cfg, &layout::manifest_path(run, "steer"))
}

pub fn baseline(ctx: &Context, kinds: &[StaticKind]) -> CliResult<()> {
    let mut rec = Recorder::start("baseline");
    let inputs = load_inputs(ctx, &mut rec)?;
    let features = select_static_features(&inputs.x, &inputs.map)?;
    let run = ctx.run_dir();
    for &kind in kinds {
        let (iv, res) = optimize_static(
            kind,
            &inputs.x,
            &features,
            &inputs.map,
            &inputs.ds.decoder,
            &inputs.target,
            ctx.cfg.objective,
            &ctx.cfg.optimizer,
        )?;
        let u = static_velocities(&inputs.x, &iv, &inputs.map, &inputs.ds.decoder)?;
        let record = BaselineRecord {
            kind,
            features: iv.features.clone(),
            values: iv.values.clone(),
            initial_loss: *res.initial(),
            loss: res.best,
            best_iter: res.best_iter,
            iterations: res.history.len() - 1,
            converged: res.converged,
            diverged: res.diverged.clone(),
        };
        let (json, vel) = (layout::baseline_json(run, kind.name()), layout::baseline_velocities(run, kind.name()));
        layout::write_json(&json, &record)?;
        write_tensor(&vel, u.values())?;
        ctx.log(format!(
            "{kind}: loss {:.6e} -> {:.6e} over {} features",
            record.initial_loss.total,
            record.loss.total,
            features.len()
        ));
        rec.output(json);
        rec.output(vel);
    }
    rec.finish(&ctx.cfg, &layout::manifest_path(run, "baseline"))
}

fn read_velocities(path: &Path, producer: &str) -> CliResult<VelocitySequence> {
    layout::require(path, producer)?;
    Ok(VelocitySequence::new(read_tensor(path)?)?)
}

fn metrics_text(m: &MetricsFile) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "fingerprint     {}", m.fingerprint);
    let _ = writeln!(s, "representation  {}", m.representation);
    let _ = writeln!(s, "l_target        {}", m.l_target);
    let _ = writeln!(s, "pairs           {}", m.pairs);
    let _ = writeln!(s, "rotation        {}", fmt_metrics(&m.steering));
    for (k, v) in &m.baselines {
        let _ = writeln!(s, "{k:<15} {}", fmt_metrics(v));
    }
    s
}

fn per_node_csv(report: &MetricsReport, inputs: &Inputs) -> String {
    let mut s = String::from("node,x,y,frac_pct_vx\n");
    for (n, f) in report.per_node_frac.iter().enumerate() {
        let (x, y) = inputs.ds.geometry.position(n);
        match f {
            Some(v) => {
                let _ = writeln!(s, "{n},{x:.6},{y:.6},{v:.6}");
            }
            None => {
                let _ = writeln!(s, "{n},{x:.6},{y:.6},");
            }
        }
    }
    s
}

pub fn evaluate(ctx: &Context) -> CliResult<()> {
    let mut rec = Recorder::start("evaluate");
    let run = ctx.run_dir().to_path_buf();
    let params: SteerRecord = layout::read_json(&run.join(PARAMS), "steer")?;
    let steered = read_velocities(&run.join(STEERED), "steer")?;
    rec.input(&run.join(STEERED))?;
    let inputs = load_inputs(ctx, &mut rec)?;
    let fp = fingerprint(ctx, &inputs);
    let report = MetricsReport::compute(&steered, &inputs.orig, &inputs.target, &inputs.ds.geometry, fp.clone())?;
    let mut baselines = BTreeMap::new();
    for kind in StaticKind::ALL {
        let path = layout::baseline_velocities(&run, kind.name());
        if !path.exists() {
            continue;
        }
        rec.input(&path)?;
        let u = read_velocities(&path, "baseline")?;
        let m = MetricsReport::compute(&u, &inputs.orig, &inputs.target, &inputs.ds.geometry, fp.clone())?;
        baselines.insert(kind.name().to_string(), MetricsSummary::from(&m));
    }
    let file = MetricsFile {
        fingerprint: fp,
        representation: inputs.map.kind(),
        l_target: inputs.l_target,
        pairs: params.pairs.len(),
        steering: MetricsSummary::from(&report),
        baselines,
    };
    layout::write_json(&run.join(METRICS_JSON), &file)?;
    let text = metrics_text(&file);
    layout::write_text(&run.join(METRICS_TXT), &text)?;
    layout::write_text(&run.join(PER_NODE_CSV), &per_node_csv(&report, &inputs))?;
    ctx.log(text.trim_end());
    for name in [METRICS_JSON, METRICS_TXT, PER_NODE_CSV] {
        rec.output(run.join(name));
    }
    rec.finish(&ctx.cfg, &layout::manifest_path(&run, "evaluate"))
}

fn lambda_tag(v: f64) -> String {
    format!("{v:e}")
}

/// Non-dominated rows when maximizing both frac% and correlation.
fn mark_pareto(rows: &mut [SweepRow]) {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.metrics.frac_pct_vx, r.metrics.corr_vxvy)).collect();
    for (k, row) in rows.iter_mut().enumerate() {
        let (f, c) = pts[k];
        row.pareto = !pts
            .iter()
            .any(|&(f2, c2)| f2 >= f && c2 >= c && (f2 > f || c2 > c));
    }
}

pub fn pareto_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("config,p,lambda_mag,pairs,loss,frac_pct_vx,roi_pct_vx,nrmse_vx,corr_vxvy,pareto\n");
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{},{:.9e},{:.6},{:.6},{:.6},{:.6},{}",
            r.name,
            r.p,
            lambda_tag(r.lambda_mag),
            r.pairs,
            r.loss,
            m.frac_pct_vx,
            m.roi_pct_vx,
            m.nrmse_vx,
            m.corr_vxvy,
            r.pareto
        );
    }
    s
}

fn sweep_one(ctx: &Context, inputs: &Inputs, p: usize, lambda_mag: f64, dir: &Path) -> CliResult<SweepRow> {
    let filter = PairFilterConfig {
        top_p: p,
        ..ctx.cfg.oscillation
    };
    let weights = LossWeights {
        lambda_mag,
        ..ctx.cfg.objective
    };
    let pairs = identify(inputs, &filter)?;
    layout::write_json(&dir.join(PAIRS), &pairs)?;
    let (record, _, u) = steer_pairs(ctx, inputs, &pairs, weights)?;
    layout::write_json(&dir.join(PARAMS), &record)?;
    let fp = combined_digest([fingerprint(ctx, inputs).as_str(), dir.file_name().unwrap().to_str().unwrap()]);
    let report = MetricsReport::compute(&u, &inputs.orig, &inputs.target, &inputs.ds.geometry, fp.clone())?;
    let metrics = MetricsFile {
        fingerprint: fp,
        representation: inputs.map.kind(),
        l_target: inputs.l_target,
        pairs: record.pairs.len(),
        steering: MetricsSummary::from(&report),
        baselines: BTreeMap::new(),
    };
    layout::write_json(&dir.join(METRICS_JSON), &metrics)?;
    layout::write_text(&dir.join(METRICS_TXT), &metrics_text(&metrics))?;
    Ok(SweepRow {
        name: dir.file_name().unwrap().to_string_lossy().into_owned(),
        p,
        lambda_mag,
        pairs: record.pairs.len(),
        loss: record.loss.total,
        metrics: metrics.steering,
        pareto: false,
    })
}

pub fn sweep(ctx: &Context) -> CliResult<()> {
    let mut rec = Recorder::start("sweep");
    let inputs = load_inputs(ctx, &mut rec)?;
    let root = ctx.run_dir().join(SWEEP_DIR);
    let grid: Vec<(usize, f64)> = ctx
        .cfg
        .sweep
        .p_values
        .iter()
        .flat_map(|&p| ctx.cfg.sweep.lambda_mag.iter().map(move |&l| (p, l)))
        .collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(grid.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<CliResult<SweepRow>>>> = Mutex::new((0..grid.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= grid.len() {
                    break;
                }
                let (p, l) = grid[k];
                let dir = root.join(format!("p{p}_lmag{}", lambda_tag(l)));
                let row = sweep_one(ctx, &inputs, p, l, &dir);
                if let Ok(r) = &row {
                    ctx.log(format!("{}: {}", r.name, fmt_metrics(&r.metrics)));
                }
                results.lock().expect("sweep worker panicked")[k] = Some(row);
            });
        }
    });
    let mut rows = Vec::with_capacity(grid.len());
    for r in results.into_inner().expect("sweep worker panicked") {
        rows.push(r.expect("every grid point ran")?);
    }
    mark_pareto(&mut rows);
    let csv = root.join(PARETO_CSV);
    layout::write_text(&csv, &pareto_csv(&rows))?;
    let best = rows
        .iter()
        .fold(None::<&SweepRow>, |b, r| match b {
            Some(b) if b.metrics.frac_pct_vx >= r.metrics.frac_pct_vx => Some(b),
            _ => Some(r),
        })
        .expect("grid is non-empty");
    layout::write_json(&root.join(SWEEP_BEST), best)?;
    ctx.log(format!("best configuration {} with frac%(vx) {:.3}", best.name, best.metrics.frac_pct_vx));
    rec.output(&root);
    rec.finish(&ctx.cfg, &layout::manifest_path(ctx.run_dir(), "sweep"))
}

/// Summary of a run directory, written by `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub metrics: MetricsFile,
    pub pairs: Vec<OscillatoryPair>,
    pub steering: SteerRecord,
    pub baselines: Vec<BaselineRecord>,
    pub sweep_best: Option<SweepRow>,
}

fn report_text(r: &RunReport) -> String {
    let mut s = String::from("phase steering report\n\n");
    s += &metrics_text(&r.metrics);
    let _ = writeln!(s, "\npairs (i, j, omega, coherence, mean phase diff, rank score)");
    for p in &r.pairs {
        let _ = writeln!(
            s,
            "  ({:>4}, {:>4})  {:.6}  {:.4}  {:.4}  {:.4}",
            p.i, p.j, p.omega, p.coherence, p.mean_phase_diff, p.rank_score
        );
    }
    let st = &r.steering;
    let _ = writeln!(
        s,
        "\nrotation: rank {} K {} loss {:.6e} -> {:.6e}, {} iterations, converged {}",
        st.rank, st.k_basis, st.initial_loss.total, st.loss.total, st.iterations, st.converged
    );
    for (k, p) in st.params.pairs.iter().enumerate() {
        let _ = writeln!(s, "  pair {k}: a {:+.6} b {:+.6}", p.a, p.b);
    }
    for b in &r.baselines {
        let _ = writeln!(
            s,
            "{}: loss {:.6e} -> {:.6e} on features {:?}",
            b.kind, b.initial_loss.total, b.loss.total, b.features
        );
    }
    if let Some(best) = &r.sweep_best {
        let _ = writeln!(s, "\nsweep best {} ({})", best.name, fmt_metrics(&best.metrics));
    }
    s
}

pub fn report(ctx: &Context) -> CliResult<()> {
    let mut rec = Recorder::start("report");
    let run = ctx.run_dir().to_path_buf();
    let metrics: MetricsFile = layout::read_json(&run.join(METRICS_JSON), "evaluate")?;
    let pairs: PairManifest = layout::read_json(&run.join(PAIRS), "identify-pairs")?;
    let steering: SteerRecord = layout::read_json(&run.join(PARAMS), "steer")?;
    for name in [METRICS_JSON, PAIRS, PARAMS] {
        rec.input(&run.join(name))?;
    }
    let mut baselines = Vec::new();
    for kind in StaticKind::ALL {
        let path = layout::baseline_json(&run, kind.name());
        if path.exists() {
            baselines.push(layout::read_json(&path, "baseline")?);
            rec.input(&path)?;
        }
    }
    let best_path = run.join(SWEEP_DIR).join(SWEEP_BEST);
    let sweep_best = if best_path.exists() {
        rec.input(&best_path)?;
        Some(layout::read_json(&best_path, "sweep")?)
    } else {
        None
    };
    let r = RunReport {
        metrics,
        pairs: pairs.pairs,
        steering,
        baselines,
        sweep_best,
    };
    let text = report_text(&r);
    layout::write_text(&run.join(REPORT_TXT), &text)?;
    layout::write_json(&run.join(REPORT_JSON), &r)?;
    if !ctx.quiet {
        print!("{text}");
    }
    rec.output(run.join(REPORT_TXT));
    rec.output(run.join(REPORT_JSON));
    rec.finish(&ctx.cfg, &layout::manifest_path(&run, "report"))
}
