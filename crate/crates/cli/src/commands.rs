use std::fs;
use std::path::{Path, PathBuf};

use afinet::codes::{loggabor_encode, ordinal_encode};
use afinet::digest::short_digest;
use afinet::eval::{
    make_pairs, saliency_map, score_pairs_codes, score_pairs_deep, EvalReport, PairCounts, Regime,
    ReportMeta,
};
use afinet::iris::dataset::{dataset_digest, labeled_split, load_split, write_synth};
use afinet::iris::intensity_stats;
use afinet::iris::io::{load_manifest, load_normalized, Split};
use afinet::model::{load_checkpoint, save_checkpoint, AfinetModel, Aggregation};
use afinet::train::{LabeledSet, Session};
use afinet::TOOL_VERSION;
use serde::{Deserialize, Serialize};

use crate::config::{Baseline, ExperimentConfig};
use crate::{Ablation, CliError};

const VALIDATION_EVERY: usize = 5;
const REPORT_SUFFIX: &str = ".report.json";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}

fn output_dir(
    cli: Option<PathBuf>,
    config: &ExperimentConfig,
    base: &Path,
) -> Result<PathBuf, CliError> {
    cli.or_else(|| config.output_dir.as_ref().map(|d| base.join(d)))
        .ok_or_else(|| CliError::usage("no output directory: pass --out or set output_dir"))
}

fn is_nonempty_dir(dir: &Path) -> bool {
    fs::read_dir(dir)
        .map(|mut d| d.next().is_some())
        .unwrap_or(false)
}

fn refuse_existing(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() && is_nonempty_dir(dir) && !force {
        return Err(CliError::usage(format!(
            "{} exists and is not empty; pass --force to replace it",
            dir.display()
        )));
    }
    Ok(())
}

/// Builds the directory under a staging name and renames it into place.
fn atomic_dir(
    dir: &Path,
    force: bool,
    build: impl FnOnce(&Path) -> Result<(), CliError>,
) -> Result<(), CliError> {
    refuse_existing(dir, force)?;
    let staging = PathBuf::from(format!("{}.partial", dir.display()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| io_err(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| io_err(&staging, e))?;
    build(&staging)?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::rename(&staging, dir).map_err(|e| io_err(dir, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

struct Data {
    train: LabeledSet,
    test: LabeledSet,
    mean: f64,
    std: f64,
}

fn load_data(config: &ExperimentConfig, base: &Path) -> Result<Data, CliError> {
    let (train, test, stats) = if let Some(spec) = &config.dataset.synthetic {
        let samples = spec.generate()?;
        let split = |s: Split| {
            labeled_split(
                samples
                    .iter()
                    .filter(|x| x.split == s)
                    .map(|x| (x.label, x.image.clone())),
            )
        };
        (split(Split::Train)?, split(Split::Test)?, None)
    } else {
        let path = base.join(config.dataset.manifest.as_ref().expect("validated source"));
        let manifest = load_manifest(&path)?;
        let stats = manifest.mean.zip(manifest.std);
        (
            load_split(&manifest, Split::Train)?,
            load_split(&manifest, Split::Test)?,
            stats,
        )
    };
    let (mean, std) = match stats {
        Some(s) => s,
        None => intensity_stats(&train.images)?,
    };
    Ok(Data {
        train,
        test,
        mean,
        std,
    })
}

pub fn synth(config_path: &Path, out: Option<PathBuf>, force: bool) -> Result<(), CliError> {
    let (config, base) = ExperimentConfig::load(config_path)?;
    let spec = config
        .dataset
        .synthetic
        .as_ref()
        .ok_or_else(|| CliError::usage("synth needs a [dataset.synthetic] section"))?;
    let out = output_dir(out, &config, &base)?;
    let samples = spec.generate()?;
    atomic_dir(&out, force, |dir| {
        write_synth(dir, &samples)?;
        let spec_toml = toml::to_string(spec).expect("serializable spec");
        let header = format!(
            "# config_digest {}\n# tool {TOOL_VERSION}\n",
            config.digest()
        );
        write(&dir.join("synth.toml"), header + &spec_toml)
    })?;
    eprintln!("wrote {} images to {}", samples.len(), out.display());
    Ok(())
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct RunMeta {
    config_digest: String,
    tool: String,
    ablation: Option<String>,
}

fn ablation_name(a: Option<Ablation>) -> Option<String> {
    a.map(|a| match a {
        Ablation::NoVlad => "no-vlad".to_string(),
    })
}

pub fn train(
    config_path: &Path,
    out: Option<PathBuf>,
    ablation: Option<Ablation>,
    resume: bool,
    force: bool,
    epoch_budget: Option<usize>,
) -> Result<(), CliError> {
    let (config, base) = ExperimentConfig::load(config_path)?;
    let out = output_dir(out, &config, &base)?;
    let meta = RunMeta {
        config_digest: config.digest(),
        tool: TOOL_VERSION.into(),
        ablation: ablation_name(ablation),
    };
    let data = load_data(&config, &base)?;
    let digest = dataset_digest(&data.train);
    let state = out.join("state");
    let mut session = if resume {
        let path = out.join("run.json");
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let saved: RunMeta = serde_json::from_str(&text)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        if saved.config_digest != meta.config_digest || saved.ablation != meta.ablation {
            return Err(CliError::usage(format!(
                "cannot resume: run was started with config {} ({:?}), this is {} ({:?})",
                saved.config_digest, saved.ablation, meta.config_digest, meta.ablation
            )));
        }
        let session = Session::load(&state)?;
        if session.model.meta.dataset_digest != digest {
            return Err(CliError::data("cannot resume: the training data changed"));
        }
        session
    } else {
        refuse_existing(&out, force)?;
        if out.exists() {
            fs::remove_dir_all(&out).map_err(|e| io_err(&out, e))?;
        }
        fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
        write(
            &out.join("run.json"),
            serde_json::to_string_pretty(&meta).expect("json"),
        )?;
        let config_toml = toml::to_string(&config).expect("serializable config");
        write(&out.join("config.toml"), config_toml)?;
        let aggregation = ablation.map(|_| Aggregation::MaxPool);
        let model_config = config.model_config(data.train.num_classes(), aggregation);
        let mut model = AfinetModel::new(model_config, config.seed)?;
        model.meta.dataset_digest = digest;
        model.meta.config_digest = meta.config_digest.clone();
        model.meta.input_mean = data.mean;
        model.meta.input_std = data.std;
        let session = Session::new(model, config.train.clone())?;
        session.save(&state)?;
        session
    };
    let (train, val) = data.train.holdout(VALIDATION_EVERY)?;
    let mut ran = 0;
    while !session.is_done() && epoch_budget.map_or(true, |n| ran < n) {
        let before = session.log.records.len();
        if let Err(e) = session.run_epoch(&train, &val) {
            if matches!(e, afinet::Error::NonFinite { .. }) {
                let dump = out.join("diverged");
                session.save(&dump)?;
                eprintln!("state at divergence saved to {}", dump.display());
            }
            return Err(e.into());
        }
        if let Some(r) = session.log.records.get(before) {
            eprintln!(
                "{} epoch {:>3}  loss {:.4}  train acc {:.3}  val err {:.3}  lr {:.1e}/{:.1e}  {:?}",
                r.stage.name(),
                r.epoch,
                r.train_loss,
                r.train_accuracy,
                r.val_error,
                r.lr_extractor,
                r.lr_head,
                r.event
            );
            ran += 1;
        }
        session.save(&state)?;
        write(&out.join("train_log.jsonl"), session.log.to_jsonl())?;
    }
    if session.is_done() {
        save_checkpoint(&session.model, &out.join("model.afn"))?;
        eprintln!(
            "training finished; checkpoint {}",
            out.join("model.afn").display()
        );
    } else {
        eprintln!("stopped after {ran} epochs; continue with --resume");
    }
    Ok(())
}

fn summary_header(far_levels: &[f64]) -> String {
    let mut h = String::from("method,regime,genuine_pairs,impostor_pairs,eer");
    for l in far_levels {
        h.push_str(&format!(",frr_at_far_{l:e}"));
    }
    h.push_str(",config_digest,tool\n");
    h
}

fn summary_row(r: &EvalReport) -> String {
    let mut row = format!(
        "{},{},{},{},{:.6}",
        r.meta.method,
        r.meta.regime.label(),
        r.genuine_pairs,
        r.impostor_pairs,
        r.eer()
    );
    for f in &r.roc.frr_at_far {
        match f.frr {
            Some(v) => row.push_str(&format!(",{v:.6}")),
            None => row.push(','),
        }
    }
    row.push_str(&format!(",{},{}\n", r.meta.config_digest, r.meta.tool));
    row
}

fn summary_csv(reports: &[EvalReport]) -> String {
    let levels = reports
        .first()
        .map(|r| r.far_levels.clone())
        .unwrap_or_default();
    let mut out = summary_header(&levels);
    reports.iter().for_each(|r| out.push_str(&summary_row(r)));
    out
}

fn write_report(dir: &Path, report: &EvalReport) -> Result<(), CliError> {
    let stem = format!("{}_{}", report.meta.method, report.meta.regime.label());
    write(
        &dir.join(format!("{stem}{REPORT_SUFFIX}")),
        report.to_json(),
    )?;
    write(&dir.join(format!("{stem}_roc.csv")), report.roc.to_csv())
}

pub fn eval(
    config_path: &Path,
    checkpoint: &Path,
    out: Option<PathBuf>,
    method: Option<String>,
    force: bool,
) -> Result<(), CliError> {
    let (config, base) = ExperimentConfig::load(config_path)?;
    let out = output_dir(out, &config, &base)?;
    let model = load_checkpoint(checkpoint)?;
    let method = method.unwrap_or_else(|| {
        match model.config.aggregation {
            Aggregation::Vlad => "afinet",
            Aggregation::MaxPool => "no-vlad",
        }
        .into()
    });
    let data = load_data(&config, &base)?;
    let test = &data.test;
    let digest = config.digest();
    let model_digest = short_digest(&model.to_bytes());
    let ev = &config.eval;
    let counts = PairCounts {
        genuine: ev.genuine_pairs,
        impostor: ev.impostor_pairs,
    };
    let mut reports = Vec::new();
    for &regime in &ev.regimes {
        let pairs = make_pairs(&test.labels, regime, counts, config.seed)?;
        let scores = score_pairs_deep(&model, &test.images, &pairs)?;
        let (g, i) = pairs.split_scores(&scores);
        let meta = ReportMeta::new(&method, regime, &model_digest, &digest);
        reports.push(EvalReport::from_scores(meta, g, i, &ev.far_levels)?);
        for baseline in &ev.baselines {
            let (name, params_digest, scores) = match baseline {
                Baseline::Loggabor => (
                    "loggabor",
                    ev.loggabor.digest(),
                    score_pairs_codes(&test.images, &pairs, ev.shift_range, |img| {
                        loggabor_encode(img, &ev.loggabor)
                    })?,
                ),
                Baseline::Ordinal => (
                    "ordinal",
                    ev.ordinal.digest(),
                    score_pairs_codes(&test.images, &pairs, ev.shift_range, |img| {
                        ordinal_encode(img, &ev.ordinal)
                    })?,
                ),
            };
            let (g, i) = pairs.split_scores(&scores);
            let meta = ReportMeta::new(name, regime, &params_digest, &digest);
            reports.push(EvalReport::from_scores(meta, g, i, &ev.far_levels)?);
        }
    }
    reports.sort_by(|a, b| (&a.meta.method, a.meta.regime).cmp(&(&b.meta.method, b.meta.regime)));
    atomic_dir(&out, force, |dir| {
        for r in &reports {
            write_report(dir, r)?;
        }
        write(&dir.join("summary.csv"), summary_csv(&reports))
    })?;
    eprint!("{}", summary_csv(&reports));
    Ok(())
}

/// PGM with a provenance comment.
fn pgm_with_comment(map: &[f32], width: usize, height: usize, comment: &str) -> Vec<u8> {
    let mut out = format!("P5\n# {comment}\n{width} {height}\n255\n").into_bytes();
    out.extend(
        map.iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

fn load_model(path: &Path) -> Result<AfinetModel, CliError> {
    Ok(load_checkpoint(path)?)
}

pub fn saliency(
    checkpoint: &Path,
    image: &Path,
    class: usize,
    out: &Path,
    angles: &[f64],
    force: bool,
) -> Result<(), CliError> {
    let model = load_model(checkpoint)?;
    let img = load_normalized(image)?;
    let comment = format!(
        "{TOOL_VERSION} config_digest {} class {class}",
        model.meta.config_digest
    );
    let maps = angles
        .iter()
        .map(|&a| saliency_map(&model, &img.rotate(a), class).map(|m| (a, m)))
        .collect::<Result<Vec<_>, _>>()?;
    atomic_dir(out, force, |dir| {
        for (angle, map) in &maps {
            let name = format!("saliency_{angle}deg.pgm");
            let bytes = pgm_with_comment(
                map,
                img.width,
                img.height,
                &format!("{comment} angle {angle}"),
            );
            write(&dir.join(name), bytes)?;
        }
        Ok(())
    })?;
    eprintln!("wrote {} maps to {}", maps.len(), out.display());
    Ok(())
}

pub fn report(dirs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let mut reports = Vec::new();
    for dir in dirs {
        let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| io_err(dir, e))?.path();
            if !path.to_string_lossy().ends_with(REPORT_SUFFIX) {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let report = EvalReport::from_json(&text)
                .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            reports.push(report);
        }
    }
    if reports.is_empty() {
        return Err(CliError::data("no evaluation reports found"));
    }
    let digest = &reports[0].meta.config_digest;
    if let Some(r) = reports.iter().find(|r| &r.meta.config_digest != digest) {
        return Err(CliError::usage(format!(
            "reports come from different configurations ({digest} and {})",
            r.meta.config_digest
        )));
    }
    let levels = &reports[0].far_levels;
    if reports.iter().any(|r| &r.far_levels != levels) {
        return Err(CliError::usage("reports use different FAR levels"));
    }
    let key = |r: &EvalReport| (r.meta.method.clone(), r.meta.regime);
    reports.sort_by_key(key);
    // Baseline reports recur in every evaluation of one configuration.
    reports.dedup_by(|a, b| a == b);
    if let Some(w) = reports.windows(2).find(|w| key(&w[0]) == key(&w[1])) {
        return Err(CliError::usage(format!(
            "conflicting reports for {} at regime {}",
            w[0].meta.method,
            w[0].meta.regime.label()
        )));
    }
    write(out, summary_csv(&reports))?;
    let rows: Vec<SummaryRow> = reports.iter().map(SummaryRow::from).collect();
    write(
        &out.with_extension("json"),
        serde_json::to_string_pretty(&rows).expect("json"),
    )?;
    eprintln!("merged {} reports into {}", reports.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct SummaryRow {
    method: String,
    regime: Regime,
    genuine_pairs: usize,
    impostor_pairs: usize,
    eer: f64,
    frr_at_far: Vec<(f64, Option<f64>)>,
    config_digest: String,
    tool: String,
}

impl From<&EvalReport> for SummaryRow {
    fn from(r: &EvalReport) -> Self {
        Self {
            method: r.meta.method.clone(),
            regime: r.meta.regime,
            genuine_pairs: r.genuine_pairs,
            impostor_pairs: r.impostor_pairs,
            eer: r.eer(),
            frr_at_far: r
                .roc
                .frr_at_far
                .iter()
                .map(|f| (f.far_level, f.frr))
                .collect(),
            config_digest: r.meta.config_digest.clone(),
            tool: r.meta.tool.clone(),
        }
    }
}
