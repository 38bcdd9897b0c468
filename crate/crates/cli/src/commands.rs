use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use eegrisk::classifier::{
    build_arch, load_model, load_model_for, save_model, train_with, Network, TrainConfig,
};
use eegrisk::evaluation::{
    classify_alarms, select_best, sweep, write_report, EvalResult, FprMode, NetworkStreams,
    SweepGrid,
};
use eegrisk::forecast::{
    run_forecaster, write_alarms_csv, write_timeline_csv, AlarmEvent, ForecastParams,
    LikelihoodPoint,
};
use eegrisk::imaging::{ImageType, NormScope};
use eegrisk::io_util::{create_dir_all, read_to_string, write_atomic};
use eegrisk::pipeline::{PipelineConfig, PreparedPatient};
use eegrisk::preprocess::{preprocess_recording, IcaHook, PreprocessConfig};
use eegrisk::recording::{load_recording, raw_path, save_recording, Recording};
use eegrisk::synth::{synth_generate, SynthConfig};
use eegrisk::Error;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::manifest::{manifest_path, sidecar, RunManifest};
use crate::{
    Cli, Command, PipelineArgs, PreprocessArgs, ReportArgs, RiskArgs, SweepArgs, SynthArgs,
    TrainArgs,
};

pub const STREAMS_FILE: &str = "streams.json";
pub const RESULTS_FILE: &str = "results.json";

/// `sweep` output consumed by `report`.
#[derive(Debug, Serialize, Deserialize)]
pub struct SweepFile {
    pub patient: String,
    pub fpr_mode: FprMode,
    pub results: Vec<EvalResult>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StreamsFile {
    pub patient: String,
    pub streams: Vec<NetworkStreams>,
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = cli.config.as_deref();
    match &cli.command {
        Command::Synth(a) => synth(a, cfg),
        Command::Preprocess(a) => preprocess(a, cfg),
        Command::Train(a) => train(a, cfg),
        Command::Risk(a) => risk(a, cfg),
        Command::Sweep(a) => sweep_cmd(a, cfg),
        Command::Report(a) => report(a, cfg),
    }
}

pub fn model_file(patient: &str, t: ImageType, x_min: u32) -> String {
    format!("{patient}_{t}_{x_min}.cnn")
}

fn parse_list<T: FromStr>(s: &str, flag: &str) -> CliResult<Vec<T>> {
    let items = s
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<T>()
                .map_err(|_| CliError::Usage(format!("--{flag}: cannot parse `{v}`")))
        })
        .collect::<CliResult<Vec<T>>>()?;
    if items.is_empty() {
        return Err(CliError::Usage(format!(
            "--{flag} needs at least one value"
        )));
    }
    Ok(items)
}

fn pipeline_config(a: &PipelineArgs, seed: u64, cap: Option<usize>) -> CliResult<PipelineConfig> {
    let norm_scope = match a.norm_scope.as_str() {
        "global" => NormScope::Global,
        "perchannel" | "per-channel" => NormScope::PerChannel,
        other => {
            return Err(CliError::Usage(format!(
                "--norm-scope: unknown scope `{other}`"
            )))
        }
    };
    let cfg = PipelineConfig {
        guard_minutes: a.guard_min,
        norm_scope,
        test_hours_per_seizure: a.test_hours,
        max_images_per_class: cap,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir_all(dir)?;
    }
    Ok(())
}

fn load_input_recording(man: &mut RunManifest, path: &Path) -> CliResult<Recording> {
    man.input(path)?;
    man.input(&raw_path(path))?;
    Ok(man.time("load", || load_recording(path))?)
}

fn synth(a: &SynthArgs, cfg: Option<&Path>) -> CliResult<()> {
    let mut man = RunManifest::new("synth", cfg);
    let duration_s = a.duration_h * 3600.0;
    let mut sc = match &a.onsets_h {
        Some(list) => {
            let onsets: Vec<f64> = parse_list(list, "onsets-h")?;
            if a.seizures.is_some_and(|n| n != onsets.len()) {
                return Err(CliError::Usage(format!(
                    "--seizures {} disagrees with {} onsets in --onsets-h",
                    a.seizures.unwrap_or_default(),
                    onsets.len()
                )));
            }
            SynthConfig {
                duration_s,
                seizure_onsets_s: onsets.iter().map(|h| h * 3600.0).collect(),
                seed: a.seed,
                ..SynthConfig::default()
            }
        }
        None => SynthConfig::evenly_spaced(duration_s, a.seizures.unwrap_or(3), a.seed),
    };
    sc.patient_id = a.patient_id.clone();
    sc.preictal_signature_minutes = a.signature_min;
    sc.seizure_duration_s = a.seizure_duration_s;
    sc.min_interictal_gap_minutes = a.min_gap_min;
    man.seeds.insert("seed".into(), a.seed);

    let rec = man.time("generate", || synth_generate(&sc))?;
    ensure_parent(&a.out)?;
    man.time("write", || save_recording(&rec, &a.out))?;
    man.output(&a.out)?;
    man.output(&raw_path(&a.out))?;
    man.write(&sidecar(&a.out))?;
    println!(
        "{}: {} h, {} seizures at {:?} s",
        a.out.display(),
        a.duration_h,
        rec.annotations.len(),
        rec.onsets()
    );
    Ok(())
}

fn preprocess(a: &PreprocessArgs, cfg: Option<&Path>) -> CliResult<()> {
    let pc = PreprocessConfig {
        bandpass: a.bandpass,
        band_low_hz: a.band_low_hz,
        band_high_hz: a.band_high_hz,
        band_order: a.band_order,
        notch: a.notch,
        notch_hz: a.notch_hz,
        notch_q: a.notch_q,
        average_reference: a.average_reference,
        ica_hook: match a.ica_hook.trim() {
            "" | "off" => IcaHook::Off,
            cmd => IcaHook::External(cmd.to_string()),
        },
    };
    let mut man = RunManifest::new("preprocess", cfg);
    let rec = load_input_recording(&mut man, &a.input)?;
    let out = man.time("preprocess", || preprocess_recording(rec, &pc))?;
    ensure_parent(&a.out)?;
    man.time("write", || save_recording(&out, &a.out))?;
    man.output(&a.out)?;
    man.output(&raw_path(&a.out))?;
    man.write(&sidecar(&a.out))?;
    println!("{}", a.out.display());
    Ok(())
}

fn train(a: &TrainArgs, cfg: Option<&Path>) -> CliResult<()> {
    let types: Vec<ImageType> = parse_list(&a.image_type, "image-type")?;
    let xs: Vec<u32> = parse_list(&a.preictal_min, "preictal-min")?;
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        momentum: a.momentum,
        seed: a.seed,
    };
    tc.validate()?;
    let pc = pipeline_config(&a.pipeline, a.seed, a.max_images_per_class)?;

    let mut base = RunManifest::new("train", cfg);
    base.seeds.insert("seed".into(), a.seed);
    let rec = load_input_recording(&mut base, &a.input)?;
    let patient = base.time("prepare", || PreparedPatient::new(rec, pc))?;
    create_dir_all(&a.models_dir)?;

    for &t in &types {
        for &x in &xs {
            let mut man = base.clone();
            let (ds, warnings) = man.time("dataset", || patient.training_set(t, x))?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            let images = patient.images(&ds.windows, t);
            let mut net = Network::<f32>::new(build_arch(t), a.seed)?;
            let tag = format!("{t}_{x}");
            let hist = man.time("train", || {
                train_with(&mut net, &images, &tc, |e| {
                    eprintln!(
                        "{tag} epoch {} loss {:.4} acc {:.3}",
                        e.epoch, e.loss, e.accuracy
                    )
                })
            })?;
            let last = hist.epochs.last();
            let meta: BTreeMap<String, String> = [
                ("patient", patient.patient_id.clone()),
                ("image_type", t.to_string()),
                ("x_min", x.to_string()),
                ("images", ds.len().to_string()),
                ("epochs", tc.epochs.to_string()),
                ("batch_size", tc.batch_size.to_string()),
                ("learning_rate", tc.learning_rate.to_string()),
                ("momentum", tc.momentum.to_string()),
                ("guard_min", a.pipeline.guard_min.to_string()),
                ("norm_scope", a.pipeline.norm_scope.clone()),
                (
                    "final_loss",
                    last.map(|e| e.loss.to_string()).unwrap_or_default(),
                ),
                (
                    "final_accuracy",
                    last.map(|e| e.accuracy.to_string()).unwrap_or_default(),
                ),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
            let path = a.models_dir.join(model_file(&patient.patient_id, t, x));
            man.time("write", || save_model(&net, &path, &meta))?;
            man.output(&path)?;
            man.write(&sidecar(&path))?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn model_x_min(meta: &BTreeMap<String, String>, path: &Path) -> CliResult<u32> {
    meta.get("x_min")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| {
            Error::ModelFormat(format!(
                "{} carries no pre-ictal length (`x_min`)",
                path.display()
            ))
            .into()
        })
}

/// Runs the forecaster over every trace and labels alarms against its onset.
fn forecast_traces(
    s: &NetworkStreams,
    params: &ForecastParams,
) -> CliResult<Vec<(usize, Vec<LikelihoodPoint>, Vec<AlarmEvent>)>> {
    s.traces
        .iter()
        .map(|tr| {
            let mut f = run_forecaster(&tr.t_s, &tr.raw_p, params)?;
            classify_alarms(&mut f.alarms, &[tr.onset_s]);
            Ok((tr.seizure, f.timeline, f.alarms))
        })
        .collect()
}

fn risk(a: &RiskArgs, cfg: Option<&Path>) -> CliResult<()> {
    let mut man = RunManifest::new("risk", cfg);
    let rec = load_input_recording(&mut man, &a.input)?;
    man.input(&a.model)?;
    let (net, header) = man.time("load", || load_model(&a.model))?;
    let t = net.spec.image_type.ok_or_else(|| {
        Error::ModelFormat(format!(
            "{} does not name its image type",
            a.model.display()
        ))
    })?;
    let x = model_x_min(&header.meta, &a.model)?;
    let params = ForecastParams::new(a.z, a.y, x);
    params.validate()?;
    let pc = pipeline_config(&a.pipeline, 0, None)?;
    let patient = man.time("prepare", || PreparedPatient::new(rec, pc))?;
    let streams = man.time("score", || patient.streams(&net, t, x))?;

    create_dir_all(&a.out_dir)?;
    let name = streams.name();
    for (k, timeline, alarms) in forecast_traces(&streams, &params)? {
        let tp = a.out_dir.join(format!("timeline_{name}_sz{k}.csv"));
        let ap = a.out_dir.join(format!("alarms_{name}_sz{k}.csv"));
        write_timeline_csv(&tp, &timeline)?;
        write_alarms_csv(&ap, &alarms)?;
        man.output(&tp)?;
        man.output(&ap)?;
        println!("seizure {k}: {} alarms -> {}", alarms.len(), ap.display());
    }
    man.write(&manifest_path(&a.out_dir, &format!("risk_{name}")))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> CliResult<()> {
    let bytes = if pretty {
        serde_json::to_vec_pretty(value)
    } else {
        serde_json::to_vec(value)
    }
    .map_err(Error::from)?;
    write_atomic(path, |w| w.write_all(&bytes))?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    Ok(serde_json::from_str(&read_to_string(path)?).map_err(Error::from)?)
}

fn sweep_cmd(a: &SweepArgs, cfg: Option<&Path>) -> CliResult<()> {
    let grid = SweepGrid {
        image_types: parse_list(&a.image_type, "image-type")?,
        x_values: parse_list(&a.preictal_min, "preictal-min")?,
        ..SweepGrid::default()
    };
    let mode: FprMode = a.fpr_mode.parse()?;
    let pc = pipeline_config(&a.pipeline, 0, None)?;

    let mut man = RunManifest::new("sweep", cfg);
    let rec = load_input_recording(&mut man, &a.input)?;
    let patient_name = a.patient.clone().unwrap_or_else(|| rec.patient_id.clone());
    let models: Vec<(ImageType, u32, PathBuf)> = grid
        .networks()
        .into_iter()
        .map(|(t, x)| (t, x, a.models_dir.join(model_file(&patient_name, t, x))))
        .collect();
    let missing: Vec<String> = models
        .iter()
        .filter(|(_, _, p)| !p.is_file())
        .map(|(t, x, p)| format!("{t} network with X = {x} min ({})", p.display()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingNetwork(format!(
            "{} of {} models missing: {}",
            missing.len(),
            models.len(),
            missing.join(", ")
        ))
        .into());
    }

    let patient = man.time("prepare", || PreparedPatient::new(rec, pc))?;
    let mut streams = Vec::with_capacity(models.len());
    for (t, x, path) in &models {
        man.input(path)?;
        let (net, _) = man.time("load", || load_model_for(path, *t))?;
        let s = man.time("score", || patient.streams(&net, *t, *x))?;
        eprintln!("scored {}", s.name());
        streams.push(s);
    }
    let results = man.time("sweep", || sweep(&streams, &grid, mode))?;
    for r in &results {
        r.validate()?;
    }

    create_dir_all(&a.out_dir)?;
    let sp = a.out_dir.join(STREAMS_FILE);
    let rp = a.out_dir.join(RESULTS_FILE);
    let cp = a.out_dir.join("results.csv");
    let csv = eegrisk::evaluation::results_csv(&results)?;
    write_json(
        &sp,
        &StreamsFile {
            patient: patient_name.clone(),
            streams,
        },
        false,
    )?;
    write_json(
        &rp,
        &SweepFile {
            patient: patient_name,
            fpr_mode: mode,
            results,
        },
        true,
    )?;
    write_atomic(&cp, |w| w.write_all(&csv))?;
    for p in [&sp, &rp, &cp] {
        man.output(p)?;
    }
    man.write(&manifest_path(&a.out_dir, "sweep"))?;
    println!("{} cells -> {}", grid.len(), rp.display());
    Ok(())
}

fn report(a: &ReportArgs, cfg: Option<&Path>) -> CliResult<()> {
    let mut man = RunManifest::new("report", cfg);
    let rp = a.sweep_dir.join(RESULTS_FILE);
    let sp = a.sweep_dir.join(STREAMS_FILE);
    man.input(&rp)?;
    man.input(&sp)?;
    let sweep_file: SweepFile = man.time("load", || read_json(&rp))?;
    let streams: StreamsFile = man.time("load", || read_json(&sp))?;
    let patient = a.patient.clone().unwrap_or(sweep_file.patient);
    let out_dir = a.out_dir.clone().unwrap_or_else(|| a.sweep_dir.clone());

    let written = write_report(&out_dir, &patient, &sweep_file.results)?;
    let best = select_best(&sweep_file.results)?;
    let s = streams
        .streams
        .iter()
        .find(|s| s.image_type == best.params.image_type && s.x_min == best.params.x_min)
        .ok_or_else(|| Error::MissingNetwork(format!("{STREAMS_FILE} lacks the best network")))?;
    let mut timeline = Vec::new();
    let mut alarms = Vec::new();
    for (_, tl, al) in forecast_traces(s, &best.params.forecast())? {
        timeline.extend(tl);
        alarms.extend(al);
    }
    let tp = out_dir.join(format!("timeline_{}.csv", s.name()));
    let ap = out_dir.join(format!("alarms_{}.csv", s.name()));
    write_timeline_csv(&tp, &timeline)?;
    write_alarms_csv(&ap, &alarms)?;
    for p in written.iter().chain([&tp, &ap]) {
        man.output(p)?;
    }
    man.write(&manifest_path(&out_dir, "report"))?;
    println!(
        "best: {} network, X = {} min, Z = {}, Y = {}; sensitivity {}, FPR/h {}",
        best.params.image_type,
        best.params.x_min,
        best.params.z,
        best.params.y,
        best.sensitivity,
        best.fpr_h
    );
    Ok(())
}
