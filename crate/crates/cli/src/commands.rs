use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rampsvm::{
    make_synthetic, read_libsvm, subsample, train_with_kernel, Dataset, KernelCache, KernelKind, KernelSpec, Mode,
    Model,
};
use serde::Serialize;

use crate::args::{BenchArgs, PredictArgs, Synthetic, TrainArgs};
use crate::error::CliError;
use crate::output::{
    trajectory_csv, write_atomic, BenchRow, DataSummary, Metrics, PredictionRow, BENCH_SCHEMA, TRAJECTORY_SCHEMA,
};

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn load_file(path: &Path) -> Result<Dataset, CliError> {
    if !path.is_file() {
        return Err(CliError::Io {
            path: path.to_owned(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        });
    }
    read_libsvm(path).map_err(|source| CliError::Data { path: path.to_owned(), source })
}

fn generate(s: &Synthetic, seed: u64) -> Result<Dataset, CliError> {
    make_synthetic(s.n, s.flip, s.separation, seed).map_err(|e| CliError::Usage(e.to_string()))
}

fn maybe_subsample(ds: Dataset, m: Option<usize>, seed: u64) -> Result<Dataset, CliError> {
    match m {
        Some(m) => subsample(&ds, m, seed).map_err(|e| CliError::Usage(e.to_string())),
        None => Ok(ds),
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let spec = args.solver.kernel.spec(args.gamma)?;
    let cfg = args.solver.config(spec, args.c, args.mode)?;
    let (ds, source) = match (&args.data, &args.synthetic) {
        (Some(path), _) => (load_file(path)?, path.display().to_string()),
        (None, Some(s)) => (generate(s, args.seed)?, s.name()),
        (None, None) => return Err(CliError::Usage("one of --data or --synthetic is required".into())),
    };
    let ds = maybe_subsample(ds, args.subsample, args.seed)?;
    create_dir(&args.out_dir)?;

    let kernel = Arc::new(KernelCache::new(cfg.kernel, Arc::new(ds.clone()), cfg.cache)?);
    let (model, trace) = train_with_kernel(kernel, &cfg, &mut ())?;
    let accuracy = model.accuracy(&ds);

    write_atomic(&args.out_dir.join("model.txt"), model.to_text().as_bytes())?;
    write_atomic(&args.out_dir.join("trajectory.csv"), &trajectory_csv(&trace)?)?;
    let metrics = Metrics::new(DataSummary::new(source, &ds), args.seed, &cfg, &model, &trace, accuracy);
    write_atomic(&args.out_dir.join("metrics.json"), &to_json(&metrics)?)?;

    println!(
        "mode {}: {} outer iterations, {} SVs, training accuracy {:.4}, {:.3}s",
        cfg.mode,
        trace.outer.len(),
        model.n_sv(),
        accuracy,
        trace.wall_time_s
    );
    Ok(())
}

fn same_kernel(a: KernelSpec, b: KernelSpec) -> bool {
    a.kind == b.kind && (a.kind == KernelKind::Linear || a.kappa == b.kappa)
}

pub fn predict(args: &PredictArgs) -> Result<(), CliError> {
    if !args.model.is_file() {
        return Err(CliError::Io {
            path: args.model.clone(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        });
    }
    let model = Model::load(&args.model).map_err(|source| CliError::Data { path: args.model.clone(), source })?;
    if let Some(kind) = args.kernel {
        let expected = kind.spec(args.gamma.unwrap_or(model.kernel.kappa))?;
        if !same_kernel(expected, model.kernel) {
            return Err(CliError::Usage(format!(
                "kernel mismatch: model was trained with `{}`, flags ask for `{}`",
                model.kernel, expected
            )));
        }
    } else if let Some(gamma) = args.gamma {
        if model.kernel.kind == KernelKind::Gaussian && gamma != model.kernel.kappa {
            return Err(CliError::Usage(format!(
                "kernel mismatch: model was trained with `{}`, --gamma is {gamma}",
                model.kernel
            )));
        }
    }
    let ds = load_file(&args.data)?;
    create_dir(&args.out_dir)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut hits = 0;
    for (i, (score, label)) in model.predict_dataset(&ds).into_iter().enumerate() {
        hits += (label == ds.label(i)) as usize;
        w.serialize(PredictionRow { index: i, score, label: label as i8, true_label: ds.label(i) as i8 })?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io { path: "predictions.csv".into(), source: e.into_error() })?;
    write_atomic(&args.out_dir.join("predictions.csv"), &bytes)?;
    println!("accuracy {:.4} ({hits}/{})", hits as f64 / ds.len() as f64, ds.len());
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    bench_schema: u32,
    trajectory_schema: u32,
    seed: u64,
    reps: usize,
    datasets: Vec<DataSummary>,
    kernel: &'static str,
    c: &'a [f64],
    kappa: Vec<f64>,
    modes: Vec<String>,
    eps: f64,
    s: f64,
    screen_warmup: usize,
    screen_every: usize,
    handoff_gap: f64,
    max_outer: usize,
}

fn kernel_name(spec: KernelSpec) -> &'static str {
    match spec.kind {
        KernelKind::Linear => "linear",
        KernelKind::Gaussian => "rbf",
    }
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

pub fn bench(args: &BenchArgs) -> Result<(), CliError> {
    if args.data.is_empty() && args.synthetic.is_empty() {
        return Err(CliError::Usage("bench needs at least one --data or --synthetic dataset".into()));
    }
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let mut specs = Vec::new();
    for &gamma in &args.gamma {
        let spec = args.solver.kernel.spec(gamma)?;
        if !specs.contains(&spec) {
            specs.push(spec);
        }
    }
    // validate every grid value before any work starts
    for &c in &args.c {
        for &mode in &args.mode {
            args.solver.config(specs[0], c, mode)?;
        }
    }

    let mut datasets = Vec::new();
    for path in &args.data {
        let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        datasets.push((name, maybe_subsample(load_file(path)?, args.subsample, args.seed)?));
    }
    for s in &args.synthetic {
        datasets.push((s.name(), maybe_subsample(generate(s, args.seed)?, args.subsample, args.seed)?));
    }

    let traj_dir = args.out_dir.join("trajectories");
    create_dir(&traj_dir)?;
    let manifest = Manifest {
        bench_schema: BENCH_SCHEMA,
        trajectory_schema: TRAJECTORY_SCHEMA,
        seed: args.seed,
        reps: args.reps,
        datasets: datasets.iter().map(|(name, ds)| DataSummary::new(name.clone(), ds)).collect(),
        kernel: kernel_name(specs[0]),
        c: &args.c,
        kappa: specs.iter().filter(|s| s.kind == KernelKind::Gaussian).map(|s| s.kappa).collect(),
        modes: args.mode.iter().map(Mode::to_string).collect(),
        eps: args.solver.eps,
        s: args.solver.s,
        screen_warmup: args.solver.screen_warmup,
        screen_every: args.solver.screen_every,
        handoff_gap: args.solver.handoff_gap,
        max_outer: args.solver.max_outer,
    };
    write_atomic(&args.out_dir.join("manifest.json"), &to_json(&manifest)?)?;

    let csv_path = args.out_dir.join("bench.csv");
    let file = std::fs::File::create(&csv_path).map_err(CliError::io(&csv_path))?;
    let mut out = csv::Writer::from_writer(file);
    let (mut ok, mut failed) = (0, 0);
    for (name, ds) in &datasets {
        let data = Arc::new(ds.clone());
        for &spec in &specs {
            // one kernel per dataset and width, shared by every cell; built outside the timed region
            let cache = args.solver.config(spec, args.c[0], args.mode[0])?.cache;
            let kernel = Arc::new(KernelCache::new(spec, Arc::clone(&data), cache)?);
            for &c in &args.c {
                for &mode in &args.mode {
                    for rep in 0..args.reps {
                        let cfg = args.solver.config(spec, c, mode)?;
                        let traj_name = format!(
                            "{}__C{}__k{}__{}__rep{rep}.csv",
                            file_safe(name),
                            c,
                            if spec.kind == KernelKind::Gaussian { spec.kappa.to_string() } else { "lin".into() },
                            file_safe(&mode.to_string())
                        );
                        let mut row = BenchRow {
                            dataset: name.clone(),
                            n: ds.len(),
                            c,
                            kernel: kernel_name(spec),
                            kappa: spec.kappa,
                            mode: mode.to_string(),
                            rep,
                            status: "ok",
                            wall_time_s: 0.0,
                            screened_fraction_final: 0.0,
                            sv_count: 0,
                            outer_iters: 0,
                            inner_iters: 0,
                            final_gap: 0.0,
                            converged: false,
                            trajectory: String::new(),
                            error: String::new(),
                        };
                        let started = Instant::now();
                        let result =
                            catch_unwind(AssertUnwindSafe(|| train_with_kernel(Arc::clone(&kernel), &cfg, &mut ())));
                        row.wall_time_s = started.elapsed().as_secs_f64();
                        match result {
                            Ok(Ok((model, trace))) => {
                                row.wall_time_s = trace.wall_time_s;
                                row.screened_fraction_final = trace.final_screened_fraction();
                                row.sv_count = model.n_sv();
                                row.outer_iters = trace.outer.len();
                                row.inner_iters = trace.inner_iterations();
                                row.final_gap = model.final_gap;
                                row.converged = trace.converged;
                                let path = traj_dir.join(&traj_name);
                                match trajectory_csv(&trace).and_then(|b| write_atomic(&path, &b)) {
                                    Ok(()) => row.trajectory = format!("trajectories/{traj_name}"),
                                    Err(e) => {
                                        row.status = "error";
                                        row.error = e.to_string();
                                    }
                                }
                            }
                            Ok(Err(e)) => {
                                row.status = "error";
                                row.error = e.to_string();
                            }
                            Err(_) => {
                                row.status = "error";
                                row.error = "panicked".into();
                            }
                        }
                        if row.status == "ok" {
                            ok += 1;
                        } else {
                            failed += 1;
                        }
                        eprintln!(
                            "{name} C={c} {} mode={mode} rep={rep}: {} {:.3}s",
                            spec, row.status, row.wall_time_s
                        );
                        out.serialize(&row)?;
                        out.flush().map_err(CliError::io(&csv_path))?;
                    }
                }
            }
        }
    }
    out.into_inner()
        .map_err(|e| CliError::Io { path: csv_path.clone(), source: e.into_error() })?
        .flush()
        .map_err(CliError::io(&csv_path))?;
    println!("{ok} cells ok, {failed} failed; results in {}", csv_path.display());
    Ok(())
}
