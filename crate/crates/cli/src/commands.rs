use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use stepcast::dataset::{compute_norm_stats, read_series, synth_atmosphere, write_series, Series, STEP_HOURS};
use stepcast::evaluation::{
    compare_ema, dump_fields, evaluate, intensity_error_hpa, track_error_km, track_fields, Climatology,
    CycloneTrack, ForecastTrajectory, Forecaster,
};
use stepcast::stepsnet::{mac_count, monolithic_mac_count, param_count, ModelConfig};
use stepcast::training::{train, TrainedModel, CHECKPOINT_FILE, METRICS_FILE};

use crate::config::RunConfig;
use crate::{CliError, Command, GlobalArgs, ModelArgs};

/// Reference size of the small published configuration.
const REFERENCE_PARAMS_M: f64 = 20.50;
const REFERENCE_MACS_G: f64 = 96.81;

fn resolve(global: &GlobalArgs, extra: Vec<(String, String)>) -> Result<RunConfig, CliError> {
    let mut overrides = global.overrides.clone();
    if let Some(p) = &global.preset {
        overrides.insert(0, ("preset".into(), p.clone()));
    }
    let flags = [
        ("out_dir", global.out.as_ref().map(|p| p.display().to_string())),
        ("seed", global.seed.map(|s| s.to_string())),
        ("data.dir", global.data.as_ref().map(|p| p.display().to_string())),
    ];
    overrides.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    overrides.extend(extra);
    RunConfig::resolve(global.config.as_deref(), &overrides)
}

fn flag<T: ToString>(key: &str, v: Option<T>) -> Vec<(String, String)> {
    v.map(|v| vec![(key.to_string(), v.to_string())]).unwrap_or_default()
}

pub fn run(global: GlobalArgs, command: Command) -> Result<(), CliError> {
    match command {
        Command::SynthData { steps } => synth_data(&resolve(&global, flag("data.steps", steps))?),
        Command::Stats => stats(&resolve(&global, vec![])?),
        Command::Train {
            steps,
            overfit_one_batch,
        } => train_cmd(&resolve(&global, flag("train.steps", steps))?, overfit_one_batch),
        Command::Rollout { model, init } => rollout_cmd(&resolve(&global, vec![])?, &model, init),
        Command::Evaluate { model, jobs } => evaluate_cmd(&resolve(&global, flag("eval.jobs", jobs))?, &model),
        Command::Track {
            model,
            init,
            lat,
            lon,
        } => track_cmd(&resolve(&global, vec![])?, &model, init, (lat, lon)),
        Command::CompareEma { checkpoint } => compare_ema_cmd(&resolve(&global, vec![])?, checkpoint),
        Command::ReportCompute => report_compute(&resolve(&global, vec![])?),
        Command::DumpFields { model, init, leads } => dump_cmd(&resolve(&global, vec![])?, &model, init, &leads),
    }
}

fn synth_data(cfg: &RunConfig) -> Result<(), CliError> {
    let series = synth_atmosphere(&cfg.synth()?)?;
    let dir = cfg.data_dir();
    write_series(&dir, &series)?;
    cfg.persist("synth-data")?;
    println!(
        "wrote {} snapshots of {:?} to {}",
        series.len(),
        series.shape(),
        dir.display()
    );
    Ok(())
}

fn load_data(cfg: &RunConfig) -> Result<Series, CliError> {
    let dir = cfg.data_dir();
    read_series(&dir).map_err(|e| CliError::Data(format!("cannot read dataset {}: {e}", dir.display())))
}

fn split(series: &Series, range: &std::ops::Range<usize>, what: &str) -> Result<Series, CliError> {
    if range.end > series.len() {
        return Err(CliError::Usage(format!(
            "{what} split {}..{} exceeds the {} snapshots in the dataset",
            range.start,
            range.end,
            series.len()
        )));
    }
    Ok(series.slice(range.clone()))
}

fn stats(cfg: &RunConfig) -> Result<(), CliError> {
    let series = load_data(cfg)?;
    let train_s = split(&series, &cfg.data_train, "training")?;
    let norm = compute_norm_stats(&train_s.states)?;
    let mut csv = String::from("channel,label,mean,std,min,max\n");
    println!(
        "{} snapshots, {} channels on {}x{}; training split {}..{}",
        series.len(),
        series.catalog.n_channels(),
        series.grid.n_lat(),
        series.grid.n_lon(),
        cfg.data_train.start,
        cfg.data_train.end
    );
    for (c, label) in series.catalog.labels().iter().enumerate() {
        let (lo, hi) = train_s
            .states
            .iter()
            .flat_map(|s| s.channel(c).iter())
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let _ = writeln!(csv, "{c},{label},{},{},{lo},{hi}", norm.mean[c], norm.std[c]);
        println!("{label:>8}  mean {:>12.4}  std {:>10.4}  range [{lo}, {hi}]", norm.mean[c], norm.std[c]);
    }
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("stats.csv"), csv)?;
    cfg.persist("stats")?;
    Ok(())
}

fn train_cmd(cfg: &RunConfig, overfit_one_batch: bool) -> Result<(), CliError> {
    let series = load_data(cfg)?;
    let train_s = split(&series, &cfg.data_train, "training")?;
    let norm = compute_norm_stats(&train_s.states)?;
    let normalized = norm.normalize_series(&train_s)?;
    let model = cfg.model(series.catalog.clone(), series.grid.clone())?;
    let mut tc = cfg.train();
    tc.overfit_one_batch = overfit_one_batch;
    cfg.persist("train")?;
    let report = train(&normalized, &norm, &model, &tc, &cfg.out_dir)?;
    let first = report.losses.first().copied().unwrap_or(f64::NAN);
    let last = report.losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "{} steps: loss {first:.6} -> {last:.6} ({:.2}% of initial); {} skipped",
        report.losses.len(),
        100.0 * last / first,
        report.skipped
    );
    println!("metrics: {}", cfg.out_dir.join(METRICS_FILE).display());
    println!("checkpoint: {}", report.checkpoint.display());
    Ok(())
}

fn checkpoint_path(cfg: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join(CHECKPOINT_FILE))
}

fn load_model(cfg: &RunConfig, path: Option<&Path>) -> Result<TrainedModel, CliError> {
    let path = checkpoint_path(cfg, path);
    TrainedModel::load(&path).map_err(|e| match CliError::from(e) {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn test_split(cfg: &RunConfig, tm: &TrainedModel) -> Result<Series, CliError> {
    let series = load_data(cfg)?;
    if series.catalog != tm.net.config().catalog || series.grid != tm.net.config().grid {
        return Err(CliError::Data("dataset catalog or grid differs from the checkpoint".into()));
    }
    split(&series, &cfg.data_test, "test")
}

fn forecast(
    cfg: &RunConfig,
    tm: &TrainedModel,
    args: &ModelArgs,
    truth: &Series,
    init: usize,
) -> Result<ForecastTrajectory, CliError> {
    let x0 = truth
        .states
        .get(init)
        .ok_or_else(|| CliError::Usage(format!("init {init} is outside the {}-snapshot test split", truth.len())))?;
    let f = Forecaster::Model {
        net: &tm.net,
        params: tm.weights(!args.raw && cfg.eval_use_ema),
        norm: &tm.norm,
    };
    Ok(f.forecast(x0, cfg.eval_n_steps, cfg.eval_step_hours)?)
}

fn rollout_cmd(cfg: &RunConfig, args: &ModelArgs, init: usize) -> Result<(), CliError> {
    let tm = load_model(cfg, args.checkpoint.as_deref())?;
    let truth = test_split(cfg, &tm)?;
    let traj = forecast(cfg, &tm, args, &truth, init)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut bin = Vec::new();
    for s in &traj.states {
        for v in s.values() {
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(cfg.out_dir.join("rollout.f32"), bin)?;
    let meta = serde_json::json!({
        "init_time": traj.init_time,
        "lead_hours": traj.lead_hours,
        "shape": truth.shape(),
        "channels": truth.catalog.labels(),
        "truncated": traj.truncated,
        "layout": "lead, channel, lat, lon; little-endian f32",
    });
    fs::write(
        cfg.out_dir.join("rollout.json"),
        serde_json::to_string_pretty(&meta).map_err(|e| CliError::Data(e.to_string()))?,
    )?;
    let mut csv = String::from("lead_hours,variable,mean,min,max\n");
    for (s, h) in traj.states.iter().zip(&traj.lead_hours) {
        for (c, label) in truth.catalog.labels().iter().enumerate() {
            let ch = s.channel(c);
            let mean = ch.iter().map(|&v| v as f64).sum::<f64>() / ch.len() as f64;
            let (lo, hi) = ch.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let _ = writeln!(csv, "{h},{label},{mean},{lo},{hi}");
        }
    }
    fs::write(cfg.out_dir.join("rollout_summary.csv"), csv)?;
    cfg.persist("rollout")?;
    println!("{} states to lead {}h", traj.len(), traj.lead_hours.last().copied().unwrap_or(0));
    if let Some(why) = &traj.truncated {
        println!("rollout stopped early: {why}");
    }
    Ok(())
}

fn evaluate_cmd(cfg: &RunConfig, args: &ModelArgs) -> Result<(), CliError> {
    let tm = load_model(cfg, args.checkpoint.as_deref())?;
    let truth = test_split(cfg, &tm)?;
    let series = load_data(cfg)?;
    let clim = Climatology::from_series(&split(&series, &cfg.data_train, "training")?, "training split")?;
    let ec = cfg.eval(&truth.catalog, truth.len());
    let model = Forecaster::Model {
        net: &tm.net,
        params: tm.weights(!args.raw && cfg.eval_use_ema),
        norm: &tm.norm,
    };
    let scores = evaluate(&model, &truth, &clim, &ec)?;
    let pers = evaluate(&Forecaster::Persistence, &truth, &clim, &ec)?;
    fs::create_dir_all(&cfg.out_dir)?;
    scores.write_csv(&cfg.out_dir.join("scores.csv"))?;
    pers.write_csv(&cfg.out_dir.join("persistence_scores.csv"))?;
    cfg.persist("evaluate")?;

    let (mut wins, mut cells) = (0, 0);
    for v in &ec.variables {
        for lead in ec.lead_hours().into_iter().filter(|&h| h > 0) {
            if let (Some(a), Some(b)) = (scores.get(v, "global", lead, "rmse"), pers.get(v, "global", lead, "rmse")) {
                cells += 1;
                if a < b {
                    wins += 1;
                }
            }
        }
    }
    println!(
        "{} initial conditions; global RMSE beats persistence on {wins}/{cells} (variable, lead) cells",
        ec.init_indices.len()
    );
    Ok(())
}

fn track_csv(fc: &CycloneTrack, rf: &CycloneTrack, dist: &[f64], dp: &[f64]) -> String {
    let mut s = String::from("lead_hours,fc_lat,fc_lon,fc_hpa,ref_lat,ref_lon,ref_hpa,track_error_km,intensity_error_hpa\n");
    for (k, (a, b)) in fc.points.iter().zip(&rf.points).enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            a.lead_hours, a.lat, a.lon, a.pressure_hpa, b.lat, b.lon, b.pressure_hpa, dist[k], dp[k]
        );
    }
    s
}

fn track_cmd(cfg: &RunConfig, args: &ModelArgs, init: usize, guess: (f64, f64)) -> Result<(), CliError> {
    let tm = load_model(cfg, args.checkpoint.as_deref())?;
    let truth = test_split(cfg, &tm)?;
    let traj = forecast(cfg, &tm, args, &truth, init)?;
    let c = truth
        .catalog
        .channel_by_label("MSLP")
        .ok_or_else(|| CliError::Data("the dataset has no MSLP channel".into()))?;
    let stride = cfg.eval_step_hours as usize / STEP_HOURS as usize;
    let n = traj.len().min((truth.len() - 1 - init) / stride + 1);
    let leads = &traj.lead_hours[..n];
    let fc_fields: Vec<&[f32]> = traj.states[..n].iter().map(|s| s.channel(c)).collect();
    let rf_fields: Vec<&[f32]> = (0..n).map(|k| truth.states[init + k * stride].channel(c)).collect();
    let fc = track_fields(&truth.grid, leads, &fc_fields, guess, cfg.track_radius_deg)?;
    let rf = track_fields(&truth.grid, leads, &rf_fields, guess, cfg.track_radius_deg)?;
    let common = fc.points.len().min(rf.points.len());
    let cut = |t: &CycloneTrack| CycloneTrack {
        points: t.points[..common].to_vec(),
        terminated_at: t.terminated_at,
    };
    let (fc_c, rf_c) = (cut(&fc), cut(&rf));
    let dist = track_error_km(&fc_c, &rf_c)?;
    let dp = intensity_error_hpa(&fc_c, &rf_c)?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("track.csv"), track_csv(&fc_c, &rf_c, &dist, &dp))?;
    cfg.persist("track")?;
    println!("tracked {common} leads (forecast {}, reference {})", fc.points.len(), rf.points.len());
    for (k, p) in fc_c.points.iter().enumerate() {
        println!(
            "{:>4}h  {:>7.2} {:>7.2}  {:>7.1} hPa   error {:>8.1} km {:>+6.1} hPa",
            p.lead_hours, p.lat, p.lon, p.pressure_hpa, dist[k], dp[k]
        );
    }
    Ok(())
}

fn compare_ema_cmd(cfg: &RunConfig, checkpoint: Option<PathBuf>) -> Result<(), CliError> {
    let tm = load_model(cfg, checkpoint.as_deref())?;
    let truth = test_split(cfg, &tm)?;
    let series = load_data(cfg)?;
    let clim = Climatology::from_series(&split(&series, &cfg.data_train, "training")?, "training split")?;
    let ec = cfg.eval(&truth.catalog, truth.len());
    let cmp = compare_ema(&tm.net, &tm.raw, &tm.ema, &tm.norm, &truth, &clim, &ec)?;
    cmp.write(&cfg.out_dir, "ema_comparison")?;
    cfg.persist("compare-ema")?;
    println!(
        "mean RMSE reduction of EMA over raw weights: {:.3}% (reference {:.2}%)",
        cmp.mean_pct_reduction, cmp.reference.mean_reduction_pct
    );
    Ok(())
}

fn report_compute(cfg: &RunConfig) -> Result<(), CliError> {
    let base = ModelConfig::preset(&cfg.preset).ok_or_else(|| CliError::Usage(format!("unknown preset '{}'", cfg.preset)))?;
    let model = cfg.model(base.catalog, base.grid)?;
    let params = param_count(&model);
    let macs = mac_count(&model);
    let mono = monolithic_mac_count(&model);
    let text = format!(
        "preset {}: {} channels on {}x{}, patch {}, d1 {} d2 {}, blocks {}+{}\n\
         {:<18}{:>12}{:>12}\n\
         {:<18}{:>11.2}M{:>11.2}M\n\
         {:<18}{:>11.2}G{:>11.2}G\n\
         {:<18}{:>11.2}G\n",
        cfg.preset,
        model.n_channels(),
        model.grid.n_lat(),
        model.grid.n_lon(),
        model.patch_size,
        model.d1,
        model.d2,
        model.n1,
        model.n2,
        "",
        "computed",
        "reference",
        "params",
        params as f64 / 1e6,
        REFERENCE_PARAMS_M,
        "MACs",
        macs as f64 / 1e9,
        REFERENCE_MACS_G,
        "MACs (monolithic)",
        mono as f64 / 1e9,
    );
    print!("{text}");
    fs::create_dir_all(&cfg.out_dir)?;
    let json = serde_json::json!({
        "preset": cfg.preset,
        "params": params,
        "macs": macs,
        "monolithic_macs": mono,
        "reference_params_m": REFERENCE_PARAMS_M,
        "reference_macs_g": REFERENCE_MACS_G,
    });
    let mut f = fs::File::create(cfg.out_dir.join("compute.json"))?;
    writeln!(f, "{}", serde_json::to_string_pretty(&json).map_err(|e| CliError::Data(e.to_string()))?)?;
    cfg.persist("report-compute")?;
    Ok(())
}

fn dump_cmd(cfg: &RunConfig, args: &ModelArgs, init: usize, leads: &[u32]) -> Result<(), CliError> {
    let tm = load_model(cfg, args.checkpoint.as_deref())?;
    let truth = test_split(cfg, &tm)?;
    let traj = forecast(cfg, &tm, args, &truth, init)?;
    let stride = cfg.eval_step_hours as usize / STEP_HOURS as usize;
    let refs: Vec<_> = (0..traj.len())
        .map_while(|k| truth.states.get(init + k * stride).cloned())
        .collect();
    let variables = if cfg.eval_variables.is_empty() {
        truth.catalog.labels()
    } else {
        cfg.eval_variables.clone()
    };
    let dir = cfg.out_dir.join("fields");
    let written = dump_fields(&traj, &refs, &truth.catalog, &variables, leads, &dir)?;
    cfg.persist("dump-fields")?;
    println!("wrote {} files to {}", written.len(), dir.display());
    Ok(())
}
