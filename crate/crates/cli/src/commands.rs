use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use cycflow::coupling::build_coupled_pair;
use cycflow::decode::solve_with;
use cycflow::flow::{integrate_trajectory, train, train_direct, EpochStats, TrainConfig};
use cycflow::instances::{gen_uniform, read_dataset, write_dataset, Dataset, Record};
use cycflow::model::{load_checkpoint, save_checkpoint, Checkpoint, TrainingMeta};
use cycflow::oracle::{auto_label, brute_force_opt, heuristic_label, held_karp, BRUTE_FORCE_MAX_N, HELD_KARP_MAX_N};
use cycflow::CycflowError;
use rayon::prelude::*;
use serde_json::json;

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::eval::{ablate, evaluate, median_duration, summarize, DecodeOptions, EvalRow};
use crate::report::{gap_names, hardware, header, millis, secs, table};

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    require_file(path, "dataset")?;
    read_dataset(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path, what: &str) -> CliResult<Checkpoint> {
    require_file(path, what)?;
    load_checkpoint(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn gen(a: &GenArgs) -> CliResult<()> {
    let limit = match a.solver {
        Solver::Heldkarp => Some(("held-karp", HELD_KARP_MAX_N)),
        Solver::Bruteforce => Some(("brute-force", BRUTE_FORCE_MAX_N)),
        _ => None,
    };
    if let Some((name, max)) = limit {
        if a.n > max {
            return Err(CliError::Usage(format!(
                "{name} supports at most {max} nodes, got --n {}; use --solver heuristic",
                a.n
            )));
        }
    }
    let mut ds = gen_uniform(a.n, a.count, a.seed)?;
    let seed = a.seed;
    let solver = a.solver;
    ds.records.par_iter_mut().try_for_each(|r: &mut Record| {
        let inst = &r.instance;
        let label_seed = seed.wrapping_add(inst.id);
        r.tour = match solver {
            Solver::Heldkarp => Some(held_karp(inst)?),
            Solver::Bruteforce => Some(brute_force_opt(inst)?),
            Solver::Heuristic => Some(heuristic_label(inst, label_seed)?),
            Solver::Auto => Some(auto_label(inst, label_seed)?),
            Solver::None => None,
        };
        Ok::<_, CycflowError>(())
    })?;
    write_dataset(&ds, &a.out)?;
    let c = ds.label_counts();
    println!(
        "wrote {} instances (n = {}) to {}",
        ds.len(),
        a.n,
        a.out.display()
    );
    println!(
        "labels: {} (exact {}, heuristic {}, unlabeled {})",
        c.summary(),
        c.exact,
        c.heuristic,
        c.unlabeled
    );
    println!("fingerprint: {}", ds.fingerprint());
    Ok(())
}

/// Defaults, then the config file, then flags.
pub fn effective_train_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            require_file(p, "config file")?;
            let text = std::fs::read_to_string(p)?;
            toml::from_str::<TrainConfig>(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = a.$flag { cfg.$($field).+ = v; })*
        };
    }
    set!(
        epochs => epochs,
        batch_size => batch_size,
        lr => lr,
        lr_floor => lr_floor,
        warmup_steps => warmup_steps,
        grad_clip => grad_clip,
        seed => seed,
        dim => model.dim,
        layers => model.layers,
        heads => model.heads,
        ff_mult => model.ff_mult,
        t_dim => model.t_dim,
    );
    if let Some(seed) = a.seed {
        cfg.model.seed = seed;
    }
    if a.x0_channels {
        cfg.model.x0_channels = true;
    }
    if a.target_loss_ratio.is_some() {
        cfg.target_loss_ratio = a.target_loss_ratio;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn train_cmd(a: &TrainArgs, deterministic: bool) -> CliResult<()> {
    let ds = load_dataset(&a.data)?;
    let cfg = effective_train_config(a)?;
    let telemetry = a
        .telemetry
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.telemetry.csv", a.out.display())));
    let mut tw = create(&telemetry)?;
    writeln!(tw, "epoch,loss,lr,wallclock_s")?;
    let mut io_err: Option<std::io::Error> = None;
    let quiet = a.quiet;
    let every = (cfg.epochs / 20).max(1);
    let on_epoch = |s: &EpochStats| {
        let wall = secs(Duration::from_secs_f64(s.wallclock_s), deterministic);
        if let Err(e) = writeln!(tw, "{},{:e},{:e},{wall}", s.epoch, s.loss, s.lr).and_then(|_| tw.flush()) {
            io_err.get_or_insert(e);
        }
        if !quiet && s.epoch % every == 0 {
            eprintln!("epoch {:>5}  loss {:.6e}  lr {:.2e}", s.epoch, s.loss, s.lr);
        }
    };
    let outcome = match a.kind {
        ModelKind::Flow => train(&cfg, &ds, on_epoch),
        ModelKind::Direct => train_direct(&cfg, &ds, on_epoch),
    }
    .map_err(|e| match e {
        CycflowError::MissingLabels { .. } => CliError::Data(format!(
            "{}: {e}; label it with `cycflow gen --solver ...`",
            a.data.display()
        )),
        other => other.into(),
    })?;
    if let Some(e) = io_err {
        return Err(CliError::Data(format!("writing {}: {e}", telemetry.display())));
    }
    let ckpt = Checkpoint {
        params: outcome.params,
        meta: TrainingMeta {
            kind: a.kind.as_str().to_string(),
            epochs: outcome.epochs_run,
            steps: outcome.steps,
            final_loss: outcome.final_loss,
            initial_loss: outcome.initial_loss,
            dataset_fingerprint: ds.fingerprint(),
        },
    };
    save_checkpoint(&ckpt, &a.out)?;
    let config = json!({ "kind": a.kind.as_str(), "train": cfg });
    print!("{}", header("train", &a.data, &ds, &config));
    println!("parameters:  {}", ckpt.params.num_params());
    println!("epochs run:  {} ({} steps)", outcome.epochs_run, outcome.steps);
    println!("zero-init loss: {:.6e}", outcome.initial_loss);
    println!(
        "final loss:     {:.6e} ({:.3}% of zero-init)",
        outcome.final_loss,
        100.0 * outcome.final_loss / outcome.initial_loss
    );
    println!("checkpoint:  {}", a.out.display());
    println!("telemetry:   {}", telemetry.display());
    Ok(())
}

fn model_config_json(c: &Checkpoint) -> serde_json::Value {
    json!({ "model": c.params.config, "meta": c.meta })
}

pub fn solve_cmd(a: &SolveArgs, deterministic: bool) -> CliResult<()> {
    let ckpt = load_model(&a.checkpoint, "checkpoint")?;
    let mut ds = load_dataset(&a.data)?;
    let opts = DecodeOptions::from(&a.decode);
    let refine = !a.no_refine;
    let solutions = ds
        .records
        .par_iter()
        .map(|r| solve_with(&ckpt.params, &r.instance, opts.steps, refine, opts.max_passes, opts.strategy))
        .collect::<cycflow::Result<Vec<_>>>()?;
    let rows: Vec<Vec<String>> = ds
        .records
        .iter()
        .zip(&solutions)
        .map(|(r, s)| {
            vec![
                r.instance.id.to_string(),
                r.instance.n().to_string(),
                format!("{:.6}", s.decoded.length),
                format!("{:.6}", s.tour.length),
                secs(s.timing.total(), deterministic),
            ]
        })
        .collect();
    let config = json!({ "steps": opts.steps, "refine": refine, "max_passes": opts.max_passes,
        "two_opt": format!("{:?}", opts.strategy).to_lowercase(), "checkpoint": model_config_json(&ckpt) });
    print!("{}", header("solve", &a.data, &ds, &config));
    print!("{}", table(&["instance", "n", "decoded", "length", "time_s"], &rows));
    if let Some(path) = &a.trajectory {
        let rec = ds.records.get(a.trajectory_index).ok_or_else(|| {
            CliError::Usage(format!(
                "--trajectory-index {} out of range ({} records)",
                a.trajectory_index,
                ds.len()
            ))
        })?;
        let states = integrate_trajectory(&ckpt.params, &rec.instance, opts.steps)?;
        let mut w = create(path)?;
        writeln!(w, "step,t,node,x,y")?;
        for (k, st) in states.iter().enumerate() {
            let t = k as f64 / opts.steps as f64;
            for (i, p) in st.iter().enumerate() {
                writeln!(w, "{k},{t},{i},{},{}", p[0], p[1])?;
            }
        }
        w.flush()?;
    }
    if let Some(out) = &a.out {
        for (r, s) in ds.records.iter_mut().zip(solutions) {
            r.tour = Some(s.tour);
        }
        write_dataset(&ds, out)?;
    }
    Ok(())
}

pub fn eval_rows_csv(rows: &[EvalRow], provenance: &str, deterministic: bool) -> String {
    let (gap, _) = gap_names(provenance);
    let mut s = format!(
        "instance,n,reference,decoded_length,decoded_{gap},length,{gap},integrate_s,decode_s,refine_s\n"
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.id,
            r.n,
            r.reference,
            r.decoded,
            r.decoded_gap(),
            r.refined,
            r.refined_gap(),
            secs(r.timing.integrate, deterministic),
            secs(r.timing.decode, deterministic),
            secs(r.timing.refine, deterministic),
        ));
    }
    s
}

pub fn eval_cmd(a: &EvalArgs, deterministic: bool) -> CliResult<()> {
    let ckpt = load_model(&a.checkpoint, "checkpoint")?;
    let ds = load_dataset(&a.data)?;
    let opts = DecodeOptions::from(&a.decode);
    let rows = evaluate(&ckpt.params, &ds, opts)?;
    let prov = ds.label_counts().summary();
    let (_, gap) = gap_names(prov);
    let sum = summarize(&rows);
    let config = json!({ "steps": opts.steps, "max_passes": opts.max_passes,
        "two_opt": format!("{:?}", opts.strategy).to_lowercase(), "checkpoint": model_config_json(&ckpt) });
    let mut report = header("eval", &a.data, &ds, &config);
    let t = |d| secs(d, deterministic);
    report.push_str(&table(
        &["stage", gap, "median time_s"],
        &[
            vec!["integrate".into(), String::new(), t(sum.median_integrate)],
            vec!["decode".into(), format!("{:.4}", sum.mean_decoded_gap), t(sum.median_decode)],
            vec!["2-opt".into(), String::new(), t(sum.median_refine)],
            vec!["total without 2-opt".into(), format!("{:.4}", sum.mean_decoded_gap), t(sum.median_total_no_refine)],
            vec!["total with 2-opt".into(), format!("{:.4}", sum.mean_refined_gap), t(sum.median_total)],
        ],
    ));
    report.push_str(&format!("Euler steps K: {}\n", opts.steps));
    print!("{report}");
    if let Some(p) = &a.report {
        write_text(p, &report)?;
    }
    if let Some(p) = &a.csv {
        write_text(p, &eval_rows_csv(&rows, prov, deterministic))?;
    }
    Ok(())
}

pub fn ablate_cmd(a: &AblateArgs) -> CliResult<()> {
    let ds = load_dataset(&a.data)?;
    let flow = load_model(&a.checkpoint, "flow checkpoint")?;
    let direct_path = a.direct_checkpoint.as_ref().ok_or_else(|| {
        CliError::Data(
            "missing Direct Angular Reg. checkpoint: pass --direct-checkpoint (train one with `cycflow train --kind direct`)"
                .into(),
        )
    })?;
    if !direct_path.is_file() {
        return Err(CliError::Data(format!(
            "missing Direct Angular Reg. checkpoint: {} not found",
            direct_path.display()
        )));
    }
    let direct = load_model(direct_path, "direct checkpoint")?;
    for (c, want, path) in [(&flow, "flow", &a.checkpoint), (&direct, "direct", direct_path)] {
        if !c.meta.kind.is_empty() && c.meta.kind != want {
            return Err(CliError::Data(format!(
                "{} holds a {:?} model, expected {want:?}",
                path.display(),
                c.meta.kind
            )));
        }
    }
    let opts = DecodeOptions::from(&a.decode);
    let ab = ablate(&flow.params, &direct.params, &ds, opts)?;
    let (_, gap) = gap_names(ab.provenance);
    let config = json!({ "steps": opts.steps, "max_passes": opts.max_passes,
        "two_opt": format!("{:?}", opts.strategy).to_lowercase(),
        "flow": model_config_json(&flow), "direct": model_config_json(&direct) });
    let mut report = header("ablate", &a.data, &ds, &config);
    let rows: Vec<Vec<String>> = ab
        .rows
        .iter()
        .map(|r| vec![r.method.to_string(), format!("{:.2}", r.decoded_gap), format!("{:.2}", r.refined_gap)])
        .collect();
    let c1 = format!("{gap} (decode)");
    let c2 = format!("{gap} (+2-opt)");
    report.push_str(&table(&["method", &c1, &c2], &rows));
    report.push_str(&format!("all rows on dataset {} ({} instances)\n", ab.fingerprint, ab.instances));
    print!("{report}");
    if let Some(p) = &a.report {
        write_text(p, &report)?;
    }
    Ok(())
}

pub fn bench_cmd(a: &BenchArgs) -> CliResult<()> {
    let ckpt = load_model(&a.checkpoint, "checkpoint")?;
    if a.count == 0 || a.sizes.is_empty() || a.steps.contains(&0) {
        return Err(CliError::Usage("bench needs --count ≥ 1, sizes and positive --steps".into()));
    }
    let mut rows = Vec::new();
    let mut csv = String::from("n,steps,count,integrate_s,decode_s,refine_s,total_s\n");
    for &n in &a.sizes {
        let ds = gen_uniform(n, a.count, a.seed)?;
        for &k in &a.steps {
            let mut timings = Vec::with_capacity(ds.len());
            for inst in ds.instances() {
                let s = solve_with(&ckpt.params, inst, k, true, a.max_passes, Default::default())?;
                timings.push(s.timing);
            }
            let med = |f: &dyn Fn(&cycflow::decode::SolveTiming) -> Duration| {
                median_duration(timings.iter().map(f).collect())
            };
            let (i, d, r, t) = (
                med(&|x| x.integrate),
                med(&|x| x.decode),
                med(&|x| x.refine),
                med(&|x| x.total()),
            );
            rows.push(vec![n.to_string(), k.to_string(), millis(i), millis(d), millis(r), millis(t)]);
            csv.push_str(&format!(
                "{n},{k},{},{},{},{},{}\n",
                a.count,
                i.as_secs_f64(),
                d.as_secs_f64(),
                r.as_secs_f64(),
                t.as_secs_f64()
            ));
        }
    }
    println!("cycflow {} bench", crate::report::VERSION);
    println!("hardware:    {}", hardware());
    println!("checkpoint:  {} ({})", a.checkpoint.display(), model_config_json(&ckpt));
    println!("instances:   {} per size, seed {}, sequential", a.count, a.seed);
    print!(
        "{}",
        table(&["n", "K", "integrate ms", "decode ms", "2-opt ms", "total ms"], &rows)
    );
    println!("(medians per instance; total is the median of per-instance sums)");
    if let Some(p) = &a.csv {
        write_text(p, &csv)?;
    }
    Ok(())
}

pub fn couple_cmd(a: &CoupleArgs) -> CliResult<()> {
    let ds = load_dataset(&a.data)?;
    let rec = ds.records.get(a.index).ok_or_else(|| {
        CliError::Usage(format!("--index {} out of range ({} records)", a.index, ds.len()))
    })?;
    let tour = rec.tour.as_ref().ok_or_else(|| {
        CliError::Data(format!("record {} has no tour label", a.index))
    })?;
    let pair = build_coupled_pair(&rec.instance, tour)?;
    let mut csv = String::from("node,x0,y0,x1,y1\n");
    for (i, (p, q)) in pair.x0.iter().zip(&pair.x1).enumerate() {
        csv.push_str(&format!("{i},{},{},{},{}\n", p[0], p[1], q[0], q[1]));
    }
    match &a.out {
        Some(p) => {
            write_text(p, &csv)?;
            println!(
                "instance {}: radius {:.6}, rotation {:.6} rad, direction {:?}, residual {:.6e}",
                rec.instance.id, pair.radius, pair.rotation_applied, pair.direction, pair.residual
            );
        }
        None => print!("{csv}"),
    }
    Ok(())
}
