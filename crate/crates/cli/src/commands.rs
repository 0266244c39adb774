use std::path::Path;

use evodiff::denoisers::mlp::{mlp_train, TrainHyper};
use evodiff::harness::config::DenoiserSpec;
use evodiff::harness::emit::{emit_svg_arms, ResultsWriter};
use evodiff::harness::experiment::{population_seed, run_paired_experiment_with, run_seed};
use evodiff::harness::summary::summarize_experiment;
use evodiff::harness::synth::{synth_topology_dataset_with, TopologyGenerator};
use evodiff::harness::task::centred_ports;
use evodiff::harness::{emit_json, emit_svg_histogram, load_designs, load_json, Design, ExperimentConfig, TaskSpec};
use evodiff::hash::{bytes_hash, config_hash};
use evodiff::{
    run_denoising, Error, FitnessError, Guidance, GuidanceConfig, Result, RngStream, ScheduleParams, StreamLabel,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::Manifest;
use crate::{EvalArgs, ExperimentArgs, PlotArgs, SampleArgs, TrainArgs};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// `default`, a JSON file, or inline JSON.
fn parse_schedule(arg: &str) -> Result<ScheduleParams> {
    if arg == "default" {
        return Ok(ScheduleParams::default());
    }
    let path = Path::new(arg);
    if path.is_file() {
        return load_json(path);
    }
    serde_json::from_str(arg).map_err(|e| Error::Config(format!("--schedule is neither a file nor schedule JSON: {e}")))
}

/// A registered fitness name, or a task JSON file.
fn parse_task(arg: &str) -> Result<TaskSpec> {
    let path = Path::new(arg);
    if arg.ends_with(".json") && path.is_file() {
        return load_json(path);
    }
    TaskSpec::by_name(arg)
}

fn denoiser_spec(path: &Path) -> Result<DenoiserSpec> {
    let value: serde_json::Value = load_json(path)?;
    let path = path.to_path_buf();
    Ok(if value.get("layer_sizes").is_some() { DenoiserSpec::MlpFile { path } } else { DenoiserSpec::GmmFile { path } })
}

fn parse_synth(arg: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<usize> = arg
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| Error::Config(format!("--synth expects W,H,n, got '{arg}'"))))
        .collect::<Result<_>>()?;
    match parts[..] {
        [w, h, n] => Ok((w, h, n)),
        _ => Err(Error::Config(format!("--synth expects W,H,n, got '{arg}'"))),
    }
}

#[derive(Serialize)]
struct TrainOutput {
    final_loss: f64,
    epoch_losses: Vec<f64>,
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let schedule_params = parse_schedule(&a.schedule)?;
    let schedule = schedule_params.build()?;
    let (data, data_hash) = match (&a.data, &a.synth) {
        (Some(path), _) => {
            let data: Vec<Vec<f64>> = load_json(path)?;
            (data, bytes_hash(&read_bytes(path)?))
        }
        (None, Some(spec)) => {
            let (w, h, n) = parse_synth(spec)?;
            let ports = Some(centred_ports(h));
            let gen = TopologyGenerator { inlet_rows: ports, outlet_rows: ports, ..Default::default() };
            let data = synth_topology_dataset_with(n, w, h, &gen, &RngStream::new(a.seed, StreamLabel::Dataset))?;
            (data, config_hash(&(w, h, n, &gen, a.seed)))
        }
        (None, None) => return Err(Error::Config("train needs --data or --synth".into())),
    };
    let defaults = TrainHyper::default();
    let hyper = TrainHyper {
        epochs: a.epochs.unwrap_or(defaults.epochs),
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        learning_rate: a.lr.unwrap_or(defaults.learning_rate),
        seed: a.seed,
        hidden: a.hidden.clone().unwrap_or(defaults.hidden),
        time_embedding: defaults.time_embedding,
    };
    eprintln!("training on {} designs of dim {} for {} epochs", data.len(), data.first().map_or(0, Vec::len), hyper.epochs);
    let (model, report) = mlp_train(&data, &schedule, &hyper)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    model.save(&a.out)?;

    let mut manifest: Manifest = Manifest::new("train", config_hash(&(&data_hash, &schedule_params, &hyper)), a.seed);
    manifest.outputs.push(file_name(&a.out));
    manifest_beside(&manifest, &a.out)?;
    println!(
        "{}",
        serde_json::to_string(&TrainOutput { final_loss: report.final_loss, epoch_losses: report.epoch_losses }).unwrap()
    );
    Ok(())
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// `model.json` gets `model.manifest.json` next to it.
fn manifest_beside<E: Serialize>(manifest: &Manifest<E>, out: &Path) -> Result<()> {
    let path = out.with_extension("manifest.json");
    emit_json(manifest, &path)
}

#[derive(Serialize)]
struct SampleRecord {
    file: String,
    objective: f64,
    fitness_evals: usize,
}

#[derive(Serialize)]
struct SampleExtra {
    objective_name: &'static str,
    samples: Vec<SampleRecord>,
}

pub fn sample(a: &SampleArgs) -> Result<()> {
    let task_spec = parse_task(&a.fitness)?;
    let schedule_params = parse_schedule(&a.schedule)?;
    let schedule = schedule_params.build()?;
    let guidance: Option<GuidanceConfig> = match a.guidance.as_str() {
        "none" => None,
        path => Some(load_json(Path::new(path))?),
    };
    if let Some(g) = &guidance {
        g.validate(schedule.steps())?;
    }
    let denoiser = denoiser_spec(&a.denoiser)?.build(&schedule, Some(&task_spec))?;
    let task = task_spec.build()?;
    if denoiser.dim() != task.dim() {
        return Err(Error::Config(format!(
            "denoiser produces dimension {} but fitness '{}' expects {}",
            denoiser.dim(),
            task_spec.name(),
            task.dim()
        )));
    }
    create_dir(&a.out)?;

    let draws: Vec<Result<(Vec<f64>, f64, usize)>> = (0..a.n)
        .into_par_iter()
        .map(|i| {
            let seed = run_seed(a.seed, i);
            let g = guidance.as_ref().map(|config| Guidance {
                config,
                fitness: task.fitness(),
                population_rng: RngStream::new(population_seed(seed, 1), StreamLabel::Population),
            });
            let traj = run_denoising(denoiser.as_ref(), &schedule, g.as_ref(), &RngStream::new(seed, StreamLabel::Trajectory), false)?;
            let objective = task.objective(&traj.x0).map_err(|source| Error::Fitness { step: Some(0), sample: None, source })?;
            if !objective.is_finite() {
                return Err(Error::Fitness { step: Some(0), sample: None, source: FitnessError::NonFinite(objective) });
            }
            Ok((traj.x0, objective, traj.fitness_evals))
        })
        .collect();

    let hash = config_hash(&(bytes_hash(&read_bytes(&a.denoiser)?), a.n, &guidance, &task_spec, &schedule_params, a.seed));
    let mut manifest = Manifest::new("sample", hash, a.seed);
    let mut samples = Vec::with_capacity(a.n);
    for (i, draw) in draws.into_iter().enumerate() {
        let (x0, objective, fitness_evals) = draw.inspect_err(|e| eprintln!("design {i} failed: {e}"))?;
        let file = format!("design_{i:04}.json");
        Design::for_task(&task_spec, x0).save(&a.out.join(&file))?;
        manifest.outputs.push(file.clone());
        samples.push(SampleRecord { file, objective, fitness_evals });
    }
    manifest.outputs.push("manifest.json".into());
    manifest.extra = Some(SampleExtra { objective_name: task.objective_name(), samples });
    manifest.write(&a.out)?;
    println!("{}", serde_json::to_string_pretty(&manifest).unwrap());
    Ok(())
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn experiment(a: &ExperimentArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(n) = a.n_runs {
        cfg.n_runs = n;
    }
    if let Some(s) = a.seed {
        cfg.base_seed = s;
    }
    cfg.validate()?;
    create_dir(&a.out)?;
    let results_path = a.out.join("results.csv");
    let mut writer = ResultsWriter::create(&results_path)?;
    let results = run_paired_experiment_with(&cfg, Some(&mut writer), |done, total| eprintln!("runs {done}/{total}"))?;
    drop(writer);

    let mut manifest: Manifest = Manifest::new("experiment", cfg.hash(), cfg.base_seed);
    manifest.outputs.push("results.csv".into());
    let task = cfg.task.build()?;
    let arms: Vec<String> = cfg.arms.iter().map(|arm| arm.name.clone()).collect();
    let summary = summarize_experiment(&results, &arms, &cfg.comparisons(), cfg.bins, task.objective_name())?;
    emit_json(&summary, &a.out.join("summary.json"))?;
    manifest.outputs.push("summary.json".into());
    emit_svg_arms(&summary, &a.out.join("arms.svg"), 640, 400)?;
    manifest.outputs.push("arms.svg".into());
    for h in &summary.comparisons {
        let name = format!("diff_{}_vs_{}.svg", slug(&h.arm_a), slug(&h.arm_b));
        emit_svg_histogram(h, &a.out.join(&name), 640, 400)?;
        manifest.outputs.push(name);
    }
    if cfg.record_curves {
        let curves: Vec<_> = results
            .iter()
            .map(|r| {
                let per_arm: std::collections::BTreeMap<&str, _> =
                    r.arms.iter().map(|x| (x.arm.as_str(), x.curve.as_ref())).collect();
                (r.run_seed, per_arm)
            })
            .collect();
        emit_json(&curves, &a.out.join("curves.json"))?;
        manifest.outputs.push("curves.json".into());
    }
    manifest.outputs.push("manifest.json".into());
    manifest.write(&a.out)?;

    for r in results.iter().filter(|r| r.failed()) {
        for arm in r.arms.iter().filter(|x| x.error.is_some()) {
            eprintln!("run {} arm {} failed: {}", r.run_index, arm.arm, arm.error.as_deref().unwrap_or(""));
        }
    }
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    if summary.n_runs > 0 && summary.failures == summary.n_runs {
        let first = results.iter().flat_map(|r| &r.arms).find_map(|x| x.error.clone()).unwrap_or_default();
        return Err(Error::Fitness {
            step: None,
            sample: None,
            source: FitnessError::Solver(format!("all {} runs failed; first failure: {first}", summary.n_runs)),
        });
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let spec = parse_task(&a.fitness)?;
    let task = spec.build()?;
    let designs = load_designs(&a.designs)?;
    let mut out = String::from("source,index,objective,fitness\n");
    for (i, (path, d)) in designs.iter().enumerate() {
        if !d.matches(&spec) {
            return Err(Error::Config(format!(
                "{}: {:?} design of shape {:?} does not fit fitness '{}'",
                path.display(),
                d.kind,
                d.shape,
                spec.name()
            )));
        }
        let wrap = |source| Error::Fitness { step: None, sample: Some(i), source };
        let objective = task.objective(&d.values).map_err(wrap)?;
        let fitness = task.fitness().evaluate(&d.values).map_err(wrap)?;
        out.push_str(&format!("{},{i},{objective},{fitness}\n", path.display()));
    }
    print!("{out}");
    Ok(())
}

pub fn plot(a: &PlotArgs) -> Result<()> {
    let value: serde_json::Value = load_json(&a.summary)?;
    let bad = |e: serde_json::Error| Error::json(&a.summary, e);
    if value.get("comparisons").is_some() {
        let summary = serde_json::from_value(value).map_err(bad)?;
        emit_svg_arms(&summary, &a.out, a.width, a.height)
    } else {
        let summary = serde_json::from_value(value).map_err(bad)?;
        emit_svg_histogram(&summary, &a.out, a.width, a.height)
    }
}
